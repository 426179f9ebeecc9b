//! Central finite-difference check of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GradRequest, Mode, Network, NnError, Tensor};

const PROBE_OUTPUTS: usize = 4;

/// Worst disagreement found by [`check_gradients`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

/// Relative error with an absolute floor, so coordinates whose true
/// gradient is (near) zero are judged on absolute error instead.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn probe_loss(net: &Network, input: &Tensor, mode: Mode, weights: &[f64]) -> Result<f64, NnError> {
    let y = net.forward(input, mode)?;
    Ok(y.data().iter().zip(weights).map(|(&v, &w)| v as f64 * w).sum())
}

/// Compares backward-pass gradients of the probe loss `Σ wᵢ·yᵢ` (random
/// fixed weights on a few outputs) against central differences with step `h`, for up to
/// `per_tensor` coordinates of every trainable tensor and of the input.
pub fn check_gradients(
    net: &Network,
    input: &Tensor,
    mode: Mode,
    h: f32,
    per_tensor: usize,
    floor: f64,
    seed: u64,
) -> Result<GradCheckReport, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y, tape) = net.forward_tape(input, mode)?;
    // Sparse probe: few active outputs keep f32 rounding noise in the
    // differenced loss small relative to the gradients being checked.
    let mut weights = vec![0.0f64; y.len()];
    for _ in 0..PROBE_OUTPUTS.min(y.len()) {
        let i = rng.gen_range(0..y.len());
        weights[i] = rng.gen_range(0.5..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    }
    let grad_out = Tensor::new(y.shape().to_vec(), weights.iter().map(|&w| w as f32).collect())?;
    let analytic = net.backward(&tape, &grad_out, GradRequest::BOTH)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |label: String, a: f64, n: f64| {
        let e = relative_error(a, n, floor);
        report.checked += 1;
        if e > report.max_rel_error {
            report.max_rel_error = e;
            report.worst = format!("{label}: analytic {a:.6e} numeric {n:.6e}");
        }
    };

    let mut probe = net.clone();
    let names: Vec<String> = net.params().iter().filter(|(_, p)| p.trainable).map(|(n, _)| n.to_string()).collect();
    for name in names {
        let g = analytic.grads.get(&name).cloned().unwrap_or_else(|| Tensor::zeros(net.params().tensor(&name).unwrap().shape()));
        let len = g.len();
        let picks: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            (0..per_tensor).map(|_| rng.gen_range(0..len)).collect()
        };
        for i in picks {
            let orig = probe.params().tensor(&name)?.data()[i];
            probe.params_mut().tensor_mut(&name)?.data_mut()[i] = orig + h;
            let lp = probe_loss(&probe, input, mode, &weights)?;
            probe.params_mut().tensor_mut(&name)?.data_mut()[i] = orig - h;
            let lm = probe_loss(&probe, input, mode, &weights)?;
            probe.params_mut().tensor_mut(&name)?.data_mut()[i] = orig;
            record(format!("{name}[{i}]"), g.data()[i] as f64, (lp - lm) / (2.0 * h as f64));
        }
    }

    let gin = analytic.input_grad.expect("input gradient requested");
    let len = input.len();
    let picks: Vec<usize> = if len <= per_tensor {
        (0..len).collect()
    } else {
        (0..per_tensor).map(|_| rng.gen_range(0..len)).collect()
    };
    let mut x = input.clone();
    for i in picks {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let lp = probe_loss(net, &x, mode, &weights)?;
        x.data_mut()[i] = orig - h;
        let lm = probe_loss(net, &x, mode, &weights)?;
        x.data_mut()[i] = orig;
        record(format!("input[{i}]"), gin.data()[i] as f64, (lp - lm) / (2.0 * h as f64));
    }
    Ok(report)
}
