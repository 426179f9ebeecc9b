use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_labels, clip01, finish, perturbation_norm, predict, AttackError, AttackKind, AttackResult, AttackSpec, Norm};
use crate::nn::{Network, Tensor};

/// Largest share of pixels salt-and-pepper noise may touch.
pub const SAPN_MAX_FRACTION: f64 = 0.1;

/// Draws one unclipped perturbation row per image: uniform noise in
/// [-ε, ε] for AUN, Gaussian noise rescaled to L2 norm ε for AGN/RAGN.
pub fn sample_noise<R: Rng + ?Sized>(kind: AttackKind, epsilon: f32, rows: usize, row_len: usize, rng: &mut R) -> Result<Vec<Vec<f32>>, AttackError> {
    match kind {
        AttackKind::Aun => Ok((0..rows)
            .map(|_| (0..row_len).map(|_| rng.gen_range(-1.0f32..=1.0) * epsilon).collect())
            .collect()),
        AttackKind::Agn | AttackKind::Ragn => Ok((0..rows)
            .map(|_| {
                let g: Vec<f64> = (0..row_len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                let scale = if norm > 0.0 { epsilon as f64 / norm } else { 0.0 };
                g.into_iter().map(|v| (v * scale) as f32).collect()
            })
            .collect()),
        kind => Err(AttackError::WrongKind { kind, op: "sample_noise" }),
    }
}

/// Additive noise, clipped to [0, 1]. Each image gets up to `max_repeats`
/// independent draws; the first misclassified draw is kept, else the last.
pub fn attack_noise<R: Rng + ?Sized>(
    c: &Network,
    x: &Tensor,
    y: &[u8],
    spec: &AttackSpec,
    rng: &mut R,
) -> Result<AttackResult, AttackError> {
    check_labels(x, y)?;
    let mut adv = x.clone();
    let mut pending: Vec<usize> = (0..x.batch()).collect();
    for _ in 0..spec.max_repeats {
        let noise = sample_noise(spec.kind, spec.epsilon, pending.len(), x.row_len(), rng)?;
        for (&i, n) in pending.iter().zip(&noise) {
            let x0 = x.row(i).to_vec();
            for ((a, &x0v), &nv) in adv.row_mut(i).iter_mut().zip(&x0).zip(n) {
                *a = clip01(x0v + nv);
            }
        }
        let pred = predict(c, &adv.select_rows(&pending))?;
        pending = pending
            .iter()
            .zip(pred)
            .filter(|&(&i, p)| p == y[i] as usize)
            .map(|(&i, _)| i)
            .collect();
        if pending.is_empty() {
            break;
        }
    }
    finish(c, x, adv, y, spec.kind.norm())
}

/// Pixel counts tried by salt-and-pepper noise: a geometric ladder of
/// `steps` sizes from one pixel up to the cap.
pub(crate) fn sapn_schedule(row_len: usize, steps: usize) -> Vec<usize> {
    let cap = ((row_len as f64 * SAPN_MAX_FRACTION).floor() as usize).max(1);
    let mut out: Vec<usize> = (1..=steps)
        .map(|s| ((cap as f64).powf(s as f64 / steps as f64).round() as usize).clamp(1, cap))
        .collect();
    out.dedup();
    out
}

/// Salt-and-pepper noise: sets a growing random set of pixels to 0 or 1
/// and keeps the first misclassified image whose L2 perturbation is at
/// most ε. Without success, the largest candidate inside the L2 gate is
/// returned (or the clean image if none fits).
pub fn attack_salt_pepper<R: Rng + ?Sized>(
    c: &Network,
    x: &Tensor,
    y: &[u8],
    spec: &AttackSpec,
    rng: &mut R,
) -> Result<AttackResult, AttackError> {
    if spec.kind != AttackKind::Sapn {
        return Err(AttackError::WrongKind {
            kind: spec.kind,
            op: "attack_salt_pepper",
        });
    }
    check_labels(x, y)?;
    let n = x.row_len();
    let draws: Vec<(Vec<usize>, Vec<f32>)> = (0..x.batch())
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            let values = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
            (order, values)
        })
        .collect();
    let mut adv = x.clone();
    let mut pending: Vec<usize> = (0..x.batch()).collect();
    for k in sapn_schedule(n, spec.steps) {
        let mut cand = Vec::with_capacity(pending.len());
        let mut rows = Vec::with_capacity(pending.len());
        for &i in &pending {
            let mut row = x.row(i).to_vec();
            let (order, values) = &draws[i];
            for &p in &order[..k] {
                row[p] = values[p];
            }
            if perturbation_norm(x.row(i), &row, Norm::L2) <= spec.epsilon {
                cand.push(i);
                rows.extend(row);
            }
        }
        if cand.is_empty() {
            break;
        }
        let batch = Tensor::new(vec![cand.len(), n], rows)?;
        let pred = predict_flat(c, x, &batch)?;
        for (j, &i) in cand.iter().enumerate() {
            adv.row_mut(i).copy_from_slice(batch.row(j));
            if pred[j] != y[i] as usize {
                pending.retain(|&p| p != i);
            }
        }
        if pending.is_empty() {
            break;
        }
    }
    finish(c, x, adv, y, Norm::L2)
}

fn predict_flat(c: &Network, like: &Tensor, rows: &Tensor) -> Result<Vec<usize>, AttackError> {
    let mut shape = like.shape().to_vec();
    shape[0] = rows.batch();
    predict(c, &rows.clone().reshape(&shape)?)
}
