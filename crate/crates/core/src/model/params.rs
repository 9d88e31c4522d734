//! Parameter storage.
//!
//! Every learnable operator lives in one flat `f64` buffer. A dense
//! operator occupies `out·inp` row-major weights followed by `out` biases; a
//! conv operator occupies `kernel` taps followed by one scalar bias. The
//! same layout is used for gradients and optimizer moments.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, OpChoice, Variant};
use crate::error::{Error, Result};
use crate::init::InitSpec;
use crate::linalg::{ConvShape, Matrix, Vector};

/// Index of an operator inside [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// What an operator does in the network. Levels are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Embed,
    System {
        level: usize,
    },
    Solver {
        level: usize,
        iter: usize,
    },
    RestrictFeature {
        level: usize,
    },
    RestrictData {
        level: usize,
    },
    Prolong {
        level: usize,
    },
    PostSystem {
        level: usize,
    },
    PostSolver {
        level: usize,
        iter: usize,
    },
    HeadHidden,
    HeadOut,
    /// Operators built by hand outside a model layout.
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    Dense { out: usize, inp: usize },
    Conv(ConvShape),
}

impl OpKind {
    pub fn param_len(&self) -> usize {
        match *self {
            OpKind::Dense { out, inp } => out * inp + out,
            OpKind::Conv(shape) => shape.kernel + 1,
        }
    }

    pub fn in_len(&self) -> usize {
        match *self {
            OpKind::Dense { inp, .. } => inp,
            OpKind::Conv(shape) => shape.in_len,
        }
    }

    pub fn out_len(&self) -> usize {
        match *self {
            OpKind::Dense { out, .. } => out,
            OpKind::Conv(shape) => shape.out_len().unwrap_or(0),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            OpKind::Dense { inp, .. } => inp,
            OpKind::Conv(shape) => shape.kernel,
        }
    }

    fn weight_len(&self) -> usize {
        match *self {
            OpKind::Dense { out, inp } => out * inp,
            OpKind::Conv(shape) => shape.kernel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub role: Role,
    pub kind: OpKind,
    pub offset: usize,
}

impl OperatorSpec {
    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.kind.param_len()
    }
}

/// A hand-specified operator, used to build small parameter sets directly.
#[derive(Debug, Clone)]
pub enum Operator {
    Dense {
        weight: Matrix,
        bias: Vector,
    },
    Conv {
        kernel: Vector,
        bias: f64,
        in_len: usize,
        stride: usize,
        padding: usize,
    },
}

/// Parameter ids of one grid level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelIds {
    pub system: ParamId,
    pub solvers: Vec<ParamId>,
    /// `Π_ℓ^{ℓ+1}` and `R_ℓ^{ℓ+1}`; absent on the coarsest level.
    pub restrict: Option<(ParamId, ParamId)>,
    /// `Π_{ℓ+1}^ℓ`, `Ā^ℓ` and `B̄^{ℓ,i}`; only for V-cycle levels below the coarsest.
    pub post: Option<PostIds>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostIds {
    pub prolong: ParamId,
    pub system: ParamId,
    pub solvers: Vec<ParamId>,
}

/// Where each operator of a configured model lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub embed: ParamId,
    pub levels: Vec<LevelIds>,
    pub head_hidden: ParamId,
    pub head_out: ParamId,
    specs: Vec<OperatorSpec>,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let sizes = cfg.level_sizes();
        let mut specs: Vec<OperatorSpec> = Vec::new();
        let mut offset = 0;
        let mut push = |role: Role, kind: OpKind| {
            let id = ParamId(specs.len());
            specs.push(OperatorSpec { role, kind, offset });
            offset += kind.param_len();
            id
        };
        let dense = |out: usize, inp: usize| OpKind::Dense { out, inp };
        let smoother = |choice: OpChoice, n: usize| match choice {
            OpChoice::Fc => OpKind::Dense { out: n, inp: n },
            OpChoice::Conv => OpKind::Conv(ConvShape {
                in_len: n,
                kernel: cfg.conv_kernel,
                stride: 1,
                padding: cfg.conv_kernel / 2,
            }),
        };

        let i = cfg.input_len;
        let embed = push(Role::Embed, dense(i, i));

        let mut systems = Vec::with_capacity(cfg.grids);
        let mut solvers = Vec::with_capacity(cfg.grids);
        for (l, (&n, &nu)) in sizes.iter().zip(&cfg.smoothing_iters).enumerate() {
            let level = l + 1;
            systems.push(push(Role::System { level }, smoother(cfg.op_a, n)));
            solvers.push(
                (1..=nu)
                    .map(|iter| push(Role::Solver { level, iter }, smoother(cfg.op_b, n)))
                    .collect::<Vec<_>>(),
            );
        }

        let mut restricts = Vec::with_capacity(cfg.grids);
        for l in 0..cfg.grids - 1 {
            let level = l + 1;
            let (fine, coarse) = (sizes[l], sizes[l + 1]);
            let pi = push(Role::RestrictFeature { level }, dense(coarse, fine));
            let r = push(Role::RestrictData { level }, dense(coarse, fine));
            restricts.push((pi, r));
        }

        let mut posts: Vec<Option<PostIds>> = vec![None; cfg.grids];
        if cfg.has_up_phase() {
            for l in (0..cfg.grids - 1).rev() {
                let level = l + 1;
                let (fine, coarse) = (sizes[l], sizes[l + 1]);
                let prolong = push(Role::Prolong { level }, dense(fine, coarse));
                let system = push(Role::PostSystem { level }, smoother(cfg.op_a, fine));
                let post_solvers = (1..=cfg.smoothing_iters[l])
                    .map(|iter| push(Role::PostSolver { level, iter }, smoother(cfg.op_b, fine)))
                    .collect();
                posts[l] = Some(PostIds {
                    prolong,
                    system,
                    solvers: post_solvers,
                });
            }
        }

        let o = cfg.output_len;
        let head_hidden = push(Role::HeadHidden, dense(o, cfg.feature_len()));
        let head_out = push(Role::HeadOut, dense(o, o));

        let levels = systems
            .into_iter()
            .zip(solvers)
            .zip(posts)
            .enumerate()
            .map(|(l, ((system, solvers), post))| LevelIds {
                system,
                solvers,
                restrict: restricts.get(l).copied(),
                post,
            })
            .collect();

        Ok(Layout {
            embed,
            levels,
            head_hidden,
            head_out,
            specs,
        })
    }

    pub fn specs(&self) -> &[OperatorSpec] {
        &self.specs
    }

    pub fn total_len(&self) -> usize {
        self.specs
            .last()
            .map_or(0, |s| s.offset + s.kind.param_len())
    }
}

/// The learnable parameter set of one model, with shape metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    specs: Vec<OperatorSpec>,
    values: Vec<f64>,
}

impl ModelParams {
    /// Freshly initialized parameters for `cfg`; weights drawn in layout order.
    pub fn init(cfg: &ModelConfig, init: InitSpec) -> Result<Self> {
        let layout = Layout::new(cfg)?;
        let mut values = vec![0.0; layout.total_len()];
        let mut gen = init.initializer();
        for spec in layout.specs() {
            let w = spec.kind.weight_len();
            gen.fill_weights(
                &mut values[spec.offset..spec.offset + w],
                spec.kind.fan_in(),
            );
        }
        Ok(ModelParams {
            specs: layout.specs,
            values,
        })
    }

    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let layout = Layout::new(cfg)?;
        let values = vec![0.0; layout.total_len()];
        Ok(ModelParams {
            specs: layout.specs,
            values,
        })
    }

    /// Parameters made of explicitly given operators, in order.
    pub fn from_operators(ops: Vec<Operator>) -> Result<Self> {
        let mut specs = Vec::with_capacity(ops.len());
        let mut values = Vec::new();
        for op in ops {
            let offset = values.len();
            let kind = match op {
                Operator::Dense { weight, bias } => {
                    if weight.rows() != bias.len() {
                        return Err(Error::Dimension {
                            op: "Operator::Dense",
                            left: weight.shape(),
                            right: (bias.len(), 1),
                        });
                    }
                    let kind = OpKind::Dense {
                        out: weight.rows(),
                        inp: weight.cols(),
                    };
                    values.extend_from_slice(weight.as_slice());
                    values.extend_from_slice(bias.as_slice());
                    kind
                }
                Operator::Conv {
                    kernel,
                    bias,
                    in_len,
                    stride,
                    padding,
                } => {
                    let shape = ConvShape {
                        in_len,
                        kernel: kernel.len(),
                        stride,
                        padding,
                    };
                    shape.out_len()?;
                    values.extend_from_slice(kernel.as_slice());
                    values.push(bias);
                    OpKind::Conv(shape)
                }
            };
            specs.push(OperatorSpec {
                role: Role::Free,
                kind,
                offset,
            });
        }
        Ok(ModelParams { specs, values })
    }

    /// Rebuilds parameters from a stored layout and value buffer.
    pub fn from_parts(specs: Vec<OperatorSpec>, values: Vec<f64>) -> Result<Self> {
        let mut expected = 0;
        for s in &specs {
            if s.offset != expected {
                return Err(Error::Tape(format!(
                    "operator offset {} does not follow previous end {expected}",
                    s.offset
                )));
            }
            expected += s.kind.param_len();
        }
        if expected != values.len() {
            return Err(Error::Dimension {
                op: "ModelParams::from_parts",
                left: (expected, 1),
                right: (values.len(), 1),
            });
        }
        Ok(ModelParams { specs, values })
    }

    pub fn specs(&self) -> &[OperatorSpec] {
        &self.specs
    }

    pub fn spec(&self, id: ParamId) -> &OperatorSpec {
        &self.specs[id.0]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Total number of learnable scalars.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn operator(&self, id: ParamId) -> &[f64] {
        &self.values[self.specs[id.0].range()]
    }

    pub fn operator_mut(&mut self, id: ParamId) -> &mut [f64] {
        let r = self.specs[id.0].range();
        &mut self.values[r]
    }

    /// Checks that these parameters were laid out for `cfg`.
    pub fn check_layout(&self, layout: &Layout) -> Result<()> {
        if self.specs.len() != layout.specs.len()
            || self
                .specs
                .iter()
                .zip(&layout.specs)
                .any(|(a, b)| a.kind != b.kind || a.offset != b.offset)
        {
            return Err(Error::Config(format!(
                "parameter set with {} operators does not match the configured layout ({} operators)",
                self.specs.len(),
                layout.specs.len()
            )));
        }
        Ok(())
    }
}

/// Gradient buffer laid out like [`ModelParams::values`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients(vec![0.0; params.len()])
    }

    pub fn operator(&self, params: &ModelParams, id: ParamId) -> &[f64] {
        &self.0[params.spec(id).range()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.0 {
            *g *= s;
        }
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|g| g * g).sum())
    }
}

/// Closed-form count of learnable scalars for `cfg`.
pub fn param_count(cfg: &ModelConfig) -> Result<usize> {
    cfg.validate()?;
    let dense = |out: usize, inp: usize| out * inp + out;
    let smoother = |choice: OpChoice, n: usize| match choice {
        OpChoice::Fc => dense(n, n),
        OpChoice::Conv => cfg.conv_kernel + 1,
    };
    let sizes = cfg.level_sizes();
    let i = cfg.input_len;
    let o = cfg.output_len;

    let mut total = dense(i, i);
    for (l, &nu) in cfg.smoothing_iters.iter().enumerate() {
        let per_level = smoother(cfg.op_a, sizes[l]) + nu * smoother(cfg.op_b, sizes[l]);
        total += per_level;
        if l + 1 < cfg.grids {
            total += 2 * dense(sizes[l + 1], sizes[l]);
            if cfg.variant == Variant::FvMgnet {
                total += dense(sizes[l], sizes[l + 1]) + per_level;
            }
        }
    }
    total += dense(o, cfg.feature_len()) + dense(o, o);
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn residual_hand_count() {
        let cfg = ModelConfig::residual(8, 4, 1);
        assert_eq!(param_count(&cfg).unwrap(), 272);
        assert_eq!(ModelParams::zeros(&cfg).unwrap().len(), 272);
    }

    #[test]
    fn shared_system_and_distinct_post_operators() {
        let cfg = ModelConfig::fv_mgnet(32, 8, vec![2, 3, 1]);
        let layout = Layout::new(&cfg).unwrap();
        let mut seen = alloc::collections::BTreeSet::new();
        let mut all = vec![layout.embed, layout.head_hidden, layout.head_out];
        for (l, level) in layout.levels.iter().enumerate() {
            assert_eq!(level.solvers.len(), cfg.smoothing_iters[l]);
            all.push(level.system);
            all.extend(&level.solvers);
            if let Some((p, r)) = level.restrict {
                all.extend([p, r]);
            }
            match &level.post {
                Some(post) => {
                    assert!(l + 1 < cfg.grids);
                    assert_ne!(post.system, level.system);
                    assert_eq!(post.solvers.len(), cfg.smoothing_iters[l]);
                    all.push(post.prolong);
                    all.push(post.system);
                    all.extend(&post.solvers);
                }
                None => assert_eq!(l + 1, cfg.grids),
            }
        }
        for id in &all {
            assert!(seen.insert(*id), "operator {id:?} referenced twice");
        }
        assert_eq!(seen.len(), layout.specs().len());
    }

    #[test]
    fn fv_at_one_grid_has_no_post_operators() {
        let cfg = ModelConfig::fv_mgnet(16, 8, vec![2]);
        let layout = Layout::new(&cfg).unwrap();
        assert!(layout.levels[0].post.is_none());
        assert!(layout.levels[0].restrict.is_none());
        assert_eq!(
            param_count(&cfg).unwrap(),
            param_count(&ModelConfig::residual(16, 8, 2)).unwrap()
        );
    }

    #[test]
    fn from_parts_rejects_bad_offsets() {
        let cfg = ModelConfig::residual(4, 2, 1);
        let p = ModelParams::zeros(&cfg).unwrap();
        let mut specs = p.specs().to_vec();
        specs[1].offset += 1;
        assert!(ModelParams::from_parts(specs, p.values().to_vec()).is_err());
        assert!(ModelParams::from_parts(p.specs().to_vec(), vec![0.0; 3]).is_err());
    }

    fn arb_config() -> impl Strategy<Value = ModelConfig> {
        (
            0usize..3,
            1usize..4,
            1usize..5,
            1usize..20,
            prop::bool::ANY,
            prop::bool::ANY,
        )
            .prop_flat_map(|(variant, grids, base, out, conv_a, conv_b)| {
                let grids = if variant == 2 { 1 } else { grids };
                let input = base << (grids - 1);
                proptest::collection::vec(1usize..4, grids).prop_map(move |iters| {
                    let mut cfg = match variant {
                        0 => ModelConfig::fv_mgnet(input, out, iters),
                        1 => ModelConfig::backslash_mgnet(input, out, iters),
                        _ => ModelConfig::residual(input, out, iters[0]),
                    };
                    let pick = |c: bool| if c { OpChoice::Conv } else { OpChoice::Fc };
                    cfg = cfg.with_ops(pick(conv_a), pick(conv_b));
                    cfg
                })
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn closed_form_count_matches_enumeration(cfg in arb_config()) {
            let params = ModelParams::zeros(&cfg).unwrap();
            prop_assert_eq!(param_count(&cfg).unwrap(), params.len());
            let walked: usize = params.specs().iter().map(|s| s.kind.param_len()).sum();
            prop_assert_eq!(walked, params.len());
        }
    }
}
