//! The three forecasting architectures, written once against [`Exec`].

use alloc::vec::Vec;

use super::config::ModelConfig;
use super::params::{Layout, ModelParams, ParamId};
use crate::error::{Error, Result};
use crate::exec::{Eval, Exec};
use crate::linalg::{Matrix, Vector};
use crate::tape::Tape;

/// One residual-correction update `u + σ(B(f − A u))`, or
/// `u + σ(B σ(f − A u))` when `double_activation` is set.
pub fn smooth_step<E: Exec>(
    ex: &mut E,
    u: &E::Value,
    f: &E::Value,
    system: ParamId,
    solver: ParamId,
    double_activation: bool,
) -> Result<E::Value> {
    let au = ex.apply(system, u)?;
    let mut r = ex.sub(f, &au)?;
    if double_activation {
        r = ex.relu(&r);
    }
    let br = ex.apply(solver, &r)?;
    let correction = ex.relu(&br);
    ex.add(u, &correction)
}

/// Operators used to move from level ℓ to level ℓ+1.
#[derive(Debug, Clone, Copy)]
pub struct RestrictOps {
    /// `A^ℓ`
    pub fine_system: ParamId,
    /// `Π_ℓ^{ℓ+1}`
    pub feature: ParamId,
    /// `R_ℓ^{ℓ+1}`
    pub data: ParamId,
    /// `A^{ℓ+1}`, the same operator later used to smooth on level ℓ+1.
    pub coarse_system: ParamId,
}

/// Returns `(u^{ℓ+1,0}, f^{ℓ+1})` with `u^{ℓ+1,0} = Π u` and
/// `f^{ℓ+1} = R (f − A^ℓ u) + A^{ℓ+1} u^{ℓ+1,0}`.
pub fn restrict<E: Exec>(
    ex: &mut E,
    u: &E::Value,
    f: &E::Value,
    ops: RestrictOps,
) -> Result<(E::Value, E::Value)> {
    let u0 = ex.apply(ops.feature, u)?;
    let au = ex.apply(ops.fine_system, u)?;
    let residual = ex.sub(f, &au)?;
    let restricted = ex.apply(ops.data, &residual)?;
    let au0 = ex.apply(ops.coarse_system, &u0)?;
    let f_next = ex.add(&restricted, &au0)?;
    Ok((u0, f_next))
}

/// Coarse-grid correction `u^ℓ + Π(u^{ℓ+1} − u^{ℓ+1,0})`.
pub fn prolongate<E: Exec>(
    ex: &mut E,
    fine_saved: &E::Value,
    coarse_final: &E::Value,
    coarse_initial: &E::Value,
    prolong: ParamId,
) -> Result<E::Value> {
    let delta = ex.sub(coarse_final, coarse_initial)?;
    let lifted = ex.apply(prolong, &delta)?;
    ex.add(fine_saved, &lifted)
}

/// Values saved by the down phase, indexed by level (0-based).
pub struct DownState<V> {
    /// `f^ℓ`
    pub data: Vec<V>,
    /// `u^ℓ = u^{ℓ,ν_ℓ}`
    pub features: Vec<V>,
    /// `u^{ℓ,0}` produced by restriction; `None` for the finest level.
    pub initial: Vec<Option<V>>,
}

/// Embedding plus smoothing/restriction down to the coarsest grid.
pub fn down_phase<E: Exec>(
    ex: &mut E,
    cfg: &ModelConfig,
    layout: &Layout,
    f: &E::Value,
) -> Result<DownState<E::Value>> {
    let sizes = cfg.level_sizes();
    let mut data_l = ex.apply(layout.embed, f)?;
    let mut u = ex.zeros(&data_l, sizes[0]);
    let mut state = DownState {
        data: Vec::with_capacity(cfg.grids),
        features: Vec::with_capacity(cfg.grids),
        initial: Vec::with_capacity(cfg.grids),
    };
    state.initial.push(None);
    for (l, level) in layout.levels.iter().enumerate() {
        for &solver in &level.solvers {
            u = smooth_step(ex, &u, &data_l, level.system, solver, cfg.double_activation)?;
        }
        if let Some((feature, data)) = level.restrict {
            let ops = RestrictOps {
                fine_system: level.system,
                feature,
                data,
                coarse_system: layout.levels[l + 1].system,
            };
            let (u0, f_next) = restrict(ex, &u, &data_l, ops)?;
            state.data.push(core::mem::replace(&mut data_l, f_next));
            state.features.push(core::mem::replace(&mut u, u0));
            state.initial.push(Some(u.clone()));
        } else {
            state.data.push(data_l);
            state.features.push(u);
            break;
        }
    }
    Ok(state)
}

/// Prolongation and post-smoothing back to the finest grid.
pub fn up_phase<E: Exec>(
    ex: &mut E,
    cfg: &ModelConfig,
    layout: &Layout,
    down: &DownState<E::Value>,
) -> Result<Option<E::Value>> {
    let mut current: Option<E::Value> = None;
    for l in (0..cfg.grids.saturating_sub(1)).rev() {
        let Some(post) = &layout.levels[l].post else {
            return Ok(None);
        };
        let coarse_final = current.as_ref().unwrap_or(&down.features[l + 1]);
        let coarse_initial = down.initial[l + 1]
            .as_ref()
            .ok_or_else(|| Error::Tape(alloc::format!("missing saved u^{{{},0}}", l + 2)))?;
        let mut u = prolongate(
            ex,
            &down.features[l],
            coarse_final,
            coarse_initial,
            post.prolong,
        )?;
        for &solver in &post.solvers {
            u = smooth_step(
                ex,
                &u,
                &down.data[l],
                post.system,
                solver,
                cfg.double_activation,
            )?;
        }
        current = Some(u);
    }
    Ok(current)
}

/// Feature interpolation `W² σ(W¹ u)`.
pub fn head<E: Exec>(ex: &mut E, layout: &Layout, feature: &E::Value) -> Result<E::Value> {
    let h = ex.apply(layout.head_hidden, feature)?;
    let h = ex.relu(&h);
    ex.apply(layout.head_out, &h)
}

/// Full forward pass of the configured variant.
pub fn run<E: Exec>(
    ex: &mut E,
    cfg: &ModelConfig,
    layout: &Layout,
    f: &E::Value,
) -> Result<E::Value> {
    let down = down_phase(ex, cfg, layout, f)?;
    let feature = if cfg.has_up_phase() {
        up_phase(ex, cfg, layout, &down)?
    } else {
        None
    };
    let feature = match (&feature, cfg.variant) {
        (Some(u), _) => u,
        (None, super::Variant::BackslashMgnet) => down.features.last().expect("at least one level"),
        (None, _) => &down.features[0],
    };
    head(ex, layout, feature)
}

fn prepare(params: &ModelParams, cfg: &ModelConfig, input_cols: usize) -> Result<Layout> {
    let layout = Layout::new(cfg)?;
    params.check_layout(&layout)?;
    if input_cols != cfg.input_len {
        return Err(Error::Dimension {
            op: "forward",
            left: (cfg.input_len, 1),
            right: (input_cols, 1),
        });
    }
    Ok(layout)
}

/// Forecast for a batch of inputs `[batch × I]`, returning `[batch × O]`.
pub fn forward_batch(params: &ModelParams, cfg: &ModelConfig, x: &Matrix) -> Result<Matrix> {
    let layout = prepare(params, cfg, x.cols())?;
    run(&mut Eval::new(params), cfg, &layout, x)
}

pub fn forward(params: &ModelParams, cfg: &ModelConfig, f: &Vector) -> Result<Vector> {
    let y = forward_batch(params, cfg, &f.to_row())?;
    Ok(y.into_vec().into())
}

/// Forward pass over a batch, recorded for differentiation.
pub fn record_forward_batch<'p>(
    params: &'p ModelParams,
    cfg: &ModelConfig,
    x: &Matrix,
) -> Result<(Matrix, Tape<'p>)> {
    let layout = prepare(params, cfg, x.cols())?;
    let mut tape = Tape::new(params);
    let input = tape.leaf(x.clone());
    let y = run(&mut tape, cfg, &layout, &input)?;
    tape.set_output(y);
    Ok((tape.value(y).clone(), tape))
}

pub fn record_forward<'p>(
    params: &'p ModelParams,
    cfg: &ModelConfig,
    f: &Vector,
) -> Result<(Vector, Tape<'p>)> {
    let (y, tape) = record_forward_batch(params, cfg, &f.to_row())?;
    Ok((y.into_vec().into(), tape))
}
