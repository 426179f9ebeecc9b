use rand::seq::index::sample;
use rand::Rng;

use super::train::AttackSource;
use super::DefenseError;
use crate::data::{batch_iter, Dataset, RngStreams};
use crate::models::NetworkModel;
use crate::nn::loss::mse;
use crate::nn::{AdamState, GradRequest, NnError};

/// Trains every generator towards the identity on attacked images:
/// minimizes the per-pixel MSE between G(x') and x'. Each batch of the
/// transformed half is attacked once (attack drawn from the roster) and
/// shared by all generators.
pub fn identity_init(
    gens: &mut [NetworkModel],
    opts: &mut [AdamState],
    transformed: &Dataset,
    source: &AttackSource<'_>,
    epochs: usize,
    batch_size: usize,
    streams: &RngStreams,
) -> Result<(), DefenseError> {
    let mut step = 0usize;
    for epoch in 0..epochs {
        let mut rng = streams.derive("shuffle/identity", epoch as u64);
        for batch in batch_iter(transformed, batch_size, &mut rng)? {
            let (_, x_adv) = source.draw("identity", step as u64, &batch.images, &batch.indices)?;
            for (j, (g, opt)) in gens.iter_mut().zip(opts.iter_mut()).enumerate() {
                let (y, tape) = g.forward_train(&x_adv)?;
                let (loss, grad) = mse(&y, &x_adv)?;
                if !loss.is_finite() {
                    return Err(DefenseError::Divergence {
                        stage: "identity initialization",
                        epoch,
                        step,
                        detail: format!("generator {j} loss {loss}"),
                    });
                }
                let grads = g.backward(&tape, &grad, GradRequest::PARAMS)?.grads;
                opt.step(g.params_mut(), &grads).map_err(|e| match e {
                    NnError::NonFiniteGradient(p) => DefenseError::Divergence {
                        stage: "identity initialization",
                        epoch,
                        step,
                        detail: format!("generator {j}: non-finite gradient for {p}"),
                    },
                    e => e.into(),
                })?;
            }
            step += 1;
        }
    }
    Ok(())
}

/// Sets `⌊fraction · trainable_count⌋` distinct trainable weights to zero,
/// chosen uniformly without replacement. Returns how many were chosen.
pub fn zero_random_weights<R: Rng + ?Sized>(model: &mut NetworkModel, fraction: f64, rng: &mut R) -> usize {
    let total = model.params().param_count(true);
    let k = (fraction * total as f64).floor() as usize;
    let mut picks = sample(rng, total, k).into_vec();
    picks.sort_unstable();
    let mut offset = 0;
    let mut it = picks.into_iter().peekable();
    for (_, p) in model.params_mut().iter_mut().filter(|(_, p)| p.trainable) {
        let len = p.value.len();
        let data = p.value.data_mut();
        while let Some(&i) = it.peek() {
            if i >= offset + len {
                break;
            }
            data[i - offset] = 0.0;
            it.next();
        }
        offset += len;
    }
    k
}

/// Clones one identity-initialized generator `n` times, zeroing an
/// independent random `perturb_fraction` of each clone's trainable weights
/// (substream `perturb`, index j). Running statistics are copied as is.
pub fn faster_init(
    seed_generator: &NetworkModel,
    seed_opt: &AdamState,
    n: usize,
    perturb_fraction: f64,
    streams: &RngStreams,
) -> Result<Vec<(NetworkModel, AdamState)>, DefenseError> {
    if !(0.0..1.0).contains(&perturb_fraction) {
        return Err(DefenseError::Config(format!("perturb fraction {perturb_fraction} outside [0, 1)")));
    }
    Ok((0..n)
        .map(|j| {
            let mut g = seed_generator.clone();
            zero_random_weights(&mut g, perturb_fraction, &mut streams.indexed(crate::data::Stream::Perturb, j as u64));
            (g, seed_opt.clone())
        })
        .collect())
}
