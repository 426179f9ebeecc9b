use rand::Rng;

use super::{check_labels, clip01, finish, project_l1_ball, AttackError, AttackKind, AttackResult, AttackSpec, Norm};
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::{GradRequest, Mode, Network, Tensor};

fn ensure(spec: &AttackSpec, kinds: &[AttackKind], op: &'static str) -> Result<(), AttackError> {
    if kinds.contains(&spec.kind) {
        Ok(())
    } else {
        Err(AttackError::WrongKind { kind: spec.kind, op })
    }
}

/// Gradient of the batch cross-entropy with respect to the input.
fn loss_gradient(c: &Network, x: &Tensor, y: &[u8], kind: AttackKind) -> Result<Tensor, AttackError> {
    let (logits, tape) = c.forward_tape(x, Mode::Eval)?;
    let (_, g) = softmax_cross_entropy(&logits, y)?;
    let grad = c
        .backward(&tape, &g, GradRequest::INPUT)?
        .input_grad
        .expect("input gradient requested");
    if grad.has_nan() {
        return Err(AttackError::NonFiniteGradient(kind));
    }
    Ok(grad)
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Signed step then projection onto the L∞ ball around `x` and [0, 1].
fn linf_step(x: &Tensor, adv: &mut Tensor, grad: &Tensor, step: f32, eps: f32) {
    for ((a, &g), &x0) in adv.data_mut().iter_mut().zip(grad.data()).zip(x.data()) {
        let moved = *a + step * sign(g);
        *a = clip01(x0 + (moved - x0).clamp(-eps, eps));
    }
}

/// One signed-gradient step of size ε: `clip01(x + ε·sign(∇ₓ CE))`.
pub fn attack_fgsm(c: &Network, x: &Tensor, y: &[u8], spec: &AttackSpec) -> Result<AttackResult, AttackError> {
    ensure(spec, &[AttackKind::Fgsm], "attack_fgsm")?;
    check_labels(x, y)?;
    let grad = loss_gradient(c, x, y, spec.kind)?;
    let mut adv = x.clone();
    linf_step(x, &mut adv, &grad, spec.epsilon, spec.epsilon);
    finish(c, x, adv, y, Norm::Linf)
}

/// Iterated signed-gradient ascent inside the L∞ ball (PGD, BIM); PGD
/// starts from a uniform point in the ball when `random_start` is set.
pub fn attack_iterative_linf<R: Rng + ?Sized>(
    c: &Network,
    x: &Tensor,
    y: &[u8],
    spec: &AttackSpec,
    rng: &mut R,
) -> Result<AttackResult, AttackError> {
    ensure(spec, &[AttackKind::Pgd, AttackKind::Bim, AttackKind::Fgsm], "attack_iterative_linf")?;
    check_labels(x, y)?;
    let eps = spec.epsilon;
    let mut adv = x.clone();
    if spec.random_start && eps > 0.0 {
        for (a, &x0) in adv.data_mut().iter_mut().zip(x.data()) {
            *a = clip01(x0 + rng.gen_range(-eps..=eps));
        }
    }
    for _ in 0..spec.steps {
        let grad = loss_gradient(c, &adv, y, spec.kind)?;
        linf_step(x, &mut adv, &grad, spec.step_size, eps);
    }
    finish(c, x, adv, y, Norm::Linf)
}

/// Per-class input gradients of the logits: `out[k]` holds ∂f_k/∂x for
/// every image.
fn logit_gradients(c: &Network, x: &Tensor) -> Result<(Tensor, Vec<Tensor>), AttackError> {
    let (logits, tape) = c.forward_tape(x, Mode::Eval)?;
    let k = logits.row_len();
    let mut grads = Vec::with_capacity(k);
    for class in 0..k {
        let mut seed = Tensor::zeros(logits.shape());
        for i in 0..logits.batch() {
            seed.row_mut(i)[class] = 1.0;
        }
        let g = c
            .backward(&tape, &seed, GradRequest::INPUT)?
            .input_grad
            .expect("input gradient requested");
        if g.has_nan() {
            return Err(AttackError::NonFiniteGradient(AttackKind::Df));
        }
        grads.push(g);
    }
    Ok((logits, grads))
}

/// The minimal L2 step toward the closest linearized boundary between the
/// label class and any other class, for image `i`, moving only coordinates
/// that are free in the step's direction (`can_up`, `can_down`).
fn deepfool_step(logits: &Tensor, grads: &[Tensor], i: usize, label: usize, can_up: &[bool], can_down: &[bool]) -> Vec<f64> {
    let row = logits.row(i);
    let g0 = grads[label].row(i);
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for (k, gk) in grads.iter().enumerate() {
        if k == label {
            continue;
        }
        let w: Vec<f64> = gk
            .row(i)
            .iter()
            .zip(g0)
            .enumerate()
            .map(|(p, (&a, &b))| {
                let v = a as f64 - b as f64;
                if (v > 0.0 && !can_up[p]) || (v < 0.0 && !can_down[p]) {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        let f = row[k] as f64 - row[label] as f64;
        let wn2: f64 = w.iter().map(|v| v * v).sum();
        if wn2 == 0.0 {
            continue;
        }
        let dist = f.abs() / wn2.sqrt();
        if best.as_ref().map_or(true, |(d, _, _)| dist < *d) {
            best = Some((dist, f.abs() / wn2, w));
        }
    }
    match best {
        Some((_, scale, w)) => w.into_iter().map(|v| v * scale).collect(),
        None => vec![0.0; g0.len()],
    }
}

/// L2 DeepFool: repeatedly steps to the nearest linearized decision
/// boundary, moving only coordinates not pinned at a pixel or budget
/// bound. Each iterate is the total perturbation scaled by `1 + overshoot`
/// and projected onto the L∞ ball of radius ε and [0, 1]; iteration stops
/// once the projected image is misclassified or after `steps` rounds.
pub fn attack_deepfool(c: &Network, x: &Tensor, y: &[u8], spec: &AttackSpec) -> Result<AttackResult, AttackError> {
    ensure(spec, &[AttackKind::Df], "attack_deepfool")?;
    check_labels(x, y)?;
    let n = x.row_len();
    let mut total = vec![vec![0.0f64; n]; x.batch()];
    let mut active: Vec<usize> = (0..x.batch()).collect();
    let mut cur = x.clone();
    let eps = spec.epsilon as f64;
    for _ in 0..spec.steps {
        let sub = cur.select_rows(&active);
        let (logits, grads) = logit_gradients(c, &sub)?;
        let mut still = Vec::new();
        for (j, &i) in active.iter().enumerate() {
            let label = y[i] as usize;
            if crate::nn::argmax(logits.row(j)) != label {
                continue;
            }
            let x0 = x.row(i);
            let (can_up, can_down): (Vec<bool>, Vec<bool>) = cur
                .row(i)
                .iter()
                .zip(x0)
                .map(|(&v, &o)| (v < 1.0 && ((v - o) as f64) < eps, v > 0.0 && ((v - o) as f64) > -eps))
                .unzip();
            let r = deepfool_step(&logits, &grads, j, label, &can_up, &can_down);
            let row = cur.row_mut(i);
            for (p, ((t, rv), &x0v)) in total[i].iter_mut().zip(&r).zip(x0).enumerate() {
                *t += rv;
                let scaled = (1.0 + spec.overshoot as f64) * *t;
                let v = clip01((x0v as f64 + scaled.clamp(-eps, eps)) as f32);
                row[p] = v;
                // Keep only the part of the step that survived projection.
                *t = (v as f64 - x0v as f64) / (1.0 + spec.overshoot as f64);
            }
            still.push(i);
        }
        active = still;
        if active.is_empty() {
            break;
        }
    }
    // Re-projecting in f32 keeps the bound exact after rounding.
    let eps = spec.epsilon;
    let mut adv = cur;
    for i in 0..x.batch() {
        let x0 = x.row(i).to_vec();
        for (a, &x0v) in adv.row_mut(i).iter_mut().zip(&x0) {
            *a = clip01(x0v + (*a - x0v).clamp(-eps, eps));
        }
    }
    finish(c, x, adv, y, Norm::Linf)
}

/// Sparse L1 descent: each step spreads `step_size` evenly over the
/// coordinates whose gradient magnitude reaches the `quantile` level
/// (ignoring coordinates pinned at a bound and pushed outward), then
/// projects the total perturbation onto the L1 ball of radius ε and
/// clips to [0, 1].
pub fn attack_slide(c: &Network, x: &Tensor, y: &[u8], spec: &AttackSpec) -> Result<AttackResult, AttackError> {
    ensure(spec, &[AttackKind::Slide], "attack_slide")?;
    check_labels(x, y)?;
    let n = x.row_len();
    let mut adv = x.clone();
    for _ in 0..spec.steps {
        let grad = loss_gradient(c, &adv, y, spec.kind)?;
        for i in 0..x.batch() {
            let a = adv.row(i).to_vec();
            let g: Vec<f32> = grad
                .row(i)
                .iter()
                .zip(&a)
                .map(|(&g, &v)| if (v <= 0.0 && g < 0.0) || (v >= 1.0 && g > 0.0) { 0.0 } else { g })
                .collect();
            let mut mags: Vec<f32> = g.iter().map(|v| v.abs()).collect();
            mags.sort_by(f32::total_cmp);
            let q_idx = ((spec.quantile as f64 * (n - 1) as f64).round() as usize).min(n - 1);
            let threshold = mags[q_idx];
            if threshold == 0.0 {
                continue;
            }
            let chosen: Vec<usize> = (0..n).filter(|&p| g[p].abs() >= threshold).collect();
            let share = spec.step_size / chosen.len() as f32;
            let x0 = x.row(i);
            let mut delta: Vec<f32> = a.iter().zip(x0).map(|(&v, &o)| v - o).collect();
            for &p in &chosen {
                delta[p] += share * sign(g[p]);
            }
            let delta = project_l1_ball(&delta, spec.epsilon);
            for ((o, &d), &x0v) in adv.row_mut(i).iter_mut().zip(&delta).zip(x0) {
                *o = clip01(x0v + d);
            }
        }
    }
    finish(c, x, adv, y, Norm::L1)
}
