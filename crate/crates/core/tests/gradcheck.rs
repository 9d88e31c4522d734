//! Reverse-mode gradients against central finite differences.

use mgcast_core::{
    forward_batch, record_forward_batch, InitSpec, Matrix, ModelConfig, ModelParams, OpChoice,
};

const H: f64 = 1e-5;
const KINK_MARGIN: f64 = 1e-3;

fn lcg(seed: u64) -> impl FnMut() -> f64 {
    let mut s = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    move || {
        s = s
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }
}

fn weighted_sum(y: &Matrix, c: &[f64]) -> f64 {
    y.as_slice().iter().zip(c).map(|(a, b)| a * b).sum()
}

/// Largest relative error between tape gradients and central differences
/// of `L = Σ c ⊙ y`, with relative error `|a − n| / max(|a|, |n|, 1e-6)`.
fn max_relative_error(cfg: &ModelConfig) -> f64 {
    for seed in 0..200u64 {
        let params = ModelParams::init(cfg, InitSpec::new(seed)).unwrap();
        let mut rnd = lcg(seed + 1000);
        let batch = 2;
        let x = Matrix::from_vec(
            batch,
            cfg.input_len,
            (0..batch * cfg.input_len).map(|_| rnd()).collect(),
        )
        .unwrap();
        let (y, tape) = record_forward_batch(&params, cfg, &x).unwrap();
        let margin = tape.min_abs_relu_input().unwrap();
        if margin <= KINK_MARGIN {
            continue;
        }
        let c: Vec<f64> = (0..y.as_slice().len()).map(|_| rnd()).collect();
        let seed_grad = Matrix::from_vec(y.rows(), y.cols(), c.clone()).unwrap();
        let grads = tape.backward(&seed_grad).unwrap();

        let mut worst: f64 = 0.0;
        let mut probe = params.clone();
        for k in 0..params.len() {
            let orig = probe.values()[k];
            probe.values_mut()[k] = orig + H;
            let up = weighted_sum(&forward_batch(&probe, cfg, &x).unwrap(), &c);
            probe.values_mut()[k] = orig - H;
            let down = weighted_sum(&forward_batch(&probe, cfg, &x).unwrap(), &c);
            probe.values_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * H);
            let analytic = grads.as_slice()[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        let nonzero = grads.as_slice().iter().filter(|g| g.abs() > 1e-9).count();
        assert!(
            nonzero * 2 > params.len(),
            "gradient mostly zero for {cfg:?}"
        );
        eprintln!(
            "{:?} {:?}/{:?}: seed {seed}, margin {margin:.2e}, max rel err {worst:.2e}",
            cfg.variant, cfg.op_a, cfg.op_b
        );
        return worst;
    }
    panic!("no seed found with ReLU inputs away from the kink for {cfg:?}");
}

fn configs(ops: (OpChoice, OpChoice)) -> Vec<ModelConfig> {
    vec![
        ModelConfig::fv_mgnet(16, 8, vec![1, 1, 1]).with_ops(ops.0, ops.1),
        ModelConfig::backslash_mgnet(16, 8, vec![1, 1, 1]).with_ops(ops.0, ops.1),
        ModelConfig::residual(16, 8, 1).with_ops(ops.0, ops.1),
    ]
}

#[test]
fn fully_connected_variants_match_finite_differences() {
    for cfg in configs((OpChoice::Fc, OpChoice::Fc)) {
        let err = max_relative_error(&cfg);
        assert!(err < 1e-4, "{:?}: max relative error {err:e}", cfg.variant);
    }
}

#[test]
fn conv_variants_match_finite_differences() {
    for cfg in configs((OpChoice::Conv, OpChoice::Conv)) {
        let err = max_relative_error(&cfg);
        assert!(err < 1e-4, "{:?}: max relative error {err:e}", cfg.variant);
    }
}

#[test]
fn mixed_operators_and_double_activation() {
    let mut cfg = ModelConfig::fv_mgnet(16, 4, vec![2, 1]).with_ops(OpChoice::Conv, OpChoice::Fc);
    cfg.double_activation = true;
    let err = max_relative_error(&cfg);
    assert!(err < 1e-4, "max relative error {err:e}");
    let cfg = ModelConfig::fv_mgnet(16, 4, vec![1, 2]).with_ops(OpChoice::Fc, OpChoice::Conv);
    let err = max_relative_error(&cfg);
    assert!(err < 1e-4, "max relative error {err:e}");
}
