use super::{DefenseError, EnsembleState, WinnerMode};
use crate::attacks::AttackKind;
use crate::nn::loss::{binary_cross_entropy, mean_log, mean_log_complement};
use crate::nn::{GradRequest, Mode, Tape, Tensor};

/// What one competitive step did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub attack: AttackKind,
    /// Generator with the highest mean discriminator score.
    pub winner: usize,
    /// Mean discriminator score of each generator's output.
    pub scores: Vec<f64>,
    /// Per-example winners (only in per-example mode).
    pub example_winners: Option<Vec<usize>>,
    /// Non-saturating generator loss −mean log D(G(x')) of the update(s).
    pub loss_g: f64,
    /// Negated discriminator objective.
    pub loss_d: f64,
}

/// Index of the largest score; the lowest index wins ties.
pub fn select_winner(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// `mean log D(x) + (1/N') Σⱼ mean log(1 − D(Gⱼ(x')))` from discriminator
/// outputs on canonical images and on each generator's outputs.
pub fn discriminator_objective(real: &Tensor, fakes: &[Tensor]) -> f64 {
    let fake: f64 = fakes.iter().map(mean_log_complement).sum::<f64>() / fakes.len() as f64;
    mean_log(real) + fake
}

fn diverged(detail: String) -> DefenseError {
    DefenseError::Divergence {
        stage: "competitive step",
        epoch: 0,
        step: 0,
        detail,
    }
}

/// One round of winner-take-all training on attacked images `x_adv`
/// (produced by `attack`) and canonical images `canon`:
///
/// 1. every generator transforms `x_adv` (train-mode batch statistics) and
///    the discriminator scores the results;
/// 2. the winner (per batch, or per example) descends −log D(G(x')) through
///    the frozen discriminator and commits its batch-norm statistics;
/// 3. the discriminator ascends its objective on `canon` versus all
///    generator outputs, which are treated as constants.
///
/// Generators that win nothing are left bit-for-bit unchanged.
pub fn competitive_step(
    ens: &mut EnsembleState,
    canon: &Tensor,
    x_adv: &Tensor,
    attack: AttackKind,
    mode: WinnerMode,
) -> Result<StepReport, DefenseError> {
    let n_gen = ens.generators.len();
    let b = x_adv.batch();
    let mut outputs: Vec<Tensor> = Vec::with_capacity(n_gen);
    let mut tapes: Vec<Tape> = Vec::with_capacity(n_gen);
    let mut example_scores: Vec<Vec<f32>> = Vec::with_capacity(n_gen);
    for g in &ens.generators {
        let (y, tape) = g.forward_tape(x_adv, Mode::Train)?;
        let s = ens.discriminator.forward(&y, Mode::Eval)?;
        example_scores.push(s.data().to_vec());
        outputs.push(y);
        tapes.push(tape);
    }
    let scores: Vec<f64> = example_scores
        .iter()
        .map(|s| s.iter().map(|&v| v as f64).sum::<f64>() / b as f64)
        .collect();
    let winner = select_winner(&scores);

    // Rows of the batch each generator is updated on.
    let (assignment, example_winners) = match mode {
        WinnerMode::Batch => (vec![(winner, None)], None),
        WinnerMode::Example => {
            let winners: Vec<usize> = (0..b)
                .map(|i| select_winner(&example_scores.iter().map(|s| s[i] as f64).collect::<Vec<_>>()))
                .collect();
            let groups = (0..n_gen)
                .filter_map(|j| {
                    let mask: Vec<bool> = winners.iter().map(|&w| w == j).collect();
                    mask.iter().any(|&m| m).then_some((j, Some(mask)))
                })
                .collect();
            (groups, Some(winners))
        }
    };

    let mut loss_g = 0.0;
    for (j, mask) in assignment {
        let (d_out, d_tape) = ens.discriminator.forward_tape(&outputs[j], Mode::Eval)?;
        let (_, mut seed) = binary_cross_entropy(&d_out, true);
        let mut loss = 0.0;
        for i in 0..b {
            let keep = mask.as_ref().map_or(true, |m| m[i]);
            if keep {
                loss -= (d_out.data()[i] as f64).max(1e-45).ln().max(-100.0) / b as f64;
            } else {
                seed.data_mut()[i] = 0.0;
            }
        }
        if !loss.is_finite() {
            return Err(diverged(format!("generator {j} loss {loss}")));
        }
        loss_g += loss;
        let grad_img = ens
            .discriminator
            .backward(&d_tape, &seed, GradRequest::INPUT)?
            .input_grad
            .expect("input gradient requested");
        let g = &mut ens.generators[j];
        let grads = g.backward(&tapes[j], &grad_img, GradRequest::PARAMS)?.grads;
        ens.generator_opts[j].step(g.params_mut(), &grads)?;
        g.commit_batch_stats(&tapes[j])?;
    }

    let nb = canon.batch();
    let mut parts: Vec<&Tensor> = vec![canon];
    parts.extend(outputs.iter());
    let all = Tensor::concat_rows(&parts)?;
    let (d_all, d_tape) = ens.discriminator.forward_tape(&all, Mode::Eval)?;
    let real = d_all.select_rows(&(0..nb).collect::<Vec<_>>());
    let fakes: Vec<Tensor> = (0..n_gen)
        .map(|j| d_all.select_rows(&(nb + j * b..nb + (j + 1) * b).collect::<Vec<_>>()))
        .collect();
    let loss_d = -discriminator_objective(&real, &fakes);
    if !loss_d.is_finite() {
        return Err(diverged(format!("discriminator loss {loss_d}")));
    }
    let mut seed = Tensor::zeros(d_all.shape());
    for (i, (s, &p)) in seed.data_mut().iter_mut().zip(d_all.data()).enumerate() {
        let p = p as f64;
        *s = if i < nb {
            -1.0 / (nb as f64 * p.max(1e-12))
        } else {
            1.0 / (n_gen as f64 * b as f64 * (1.0 - p).max(1e-12))
        } as f32;
    }
    let grads = ens.discriminator.backward(&d_tape, &seed, GradRequest::PARAMS)?.grads;
    ens.discriminator_opt.step(ens.discriminator.params_mut(), &grads)?;

    Ok(StepReport {
        attack,
        winner,
        scores,
        example_winners,
        loss_g,
        loss_d,
    })
}
