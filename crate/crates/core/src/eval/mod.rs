//! Test-time defense and the reported metrics: post-defense accuracy per
//! attack and class, win counts, generator specialization, CSV reports and
//! PGM sample grids.

mod grid;
mod report;
mod specialization;

use thiserror::Error;

use crate::attacks::{apply_attack, AttackSpec};
use crate::data::{Dataset, RngStreams};
use crate::defense::{select_winner, EnsembleState};
use crate::nn::{argmax_rows, Mode, Network, NnError, Tensor};

pub use grid::{emit_sample_grid, encode_pgm, generator_heatmaps, quantize, write_heatmaps, HEATMAP_CELL};
pub use report::{AttackAccuracy, EvaluationReport, CLASSES};
pub use specialization::{specialization_labels, Specialization, SpecializationLabel, Thresholds};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Attack(#[from] crate::attacks::AttackError),
    #[error("evaluation needs a labelled test set")]
    MissingLabels,
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Runs every generator on `x_adv`, scores the outputs with the
/// discriminator and keeps, per image, the highest-scoring output (lowest
/// generator index on ties). Returns the defended images and winners.
pub fn defend_image_batch(ens: &EnsembleState, x_adv: &Tensor) -> Result<(Tensor, Vec<usize>), EvalError> {
    let outputs = ens
        .generators
        .iter()
        .map(|g| g.forward(x_adv, Mode::Eval))
        .collect::<Result<Vec<_>, _>>()?;
    let scores = outputs
        .iter()
        .map(|y| ens.discriminator.forward(y, Mode::Eval))
        .collect::<Result<Vec<_>, _>>()?;
    let winners: Vec<usize> = (0..x_adv.batch())
        .map(|i| select_winner(&scores.iter().map(|s| s.data()[i] as f64).collect::<Vec<_>>()))
        .collect();
    let mut defended = x_adv.clone();
    for (i, &w) in winners.iter().enumerate() {
        defended.row_mut(i).copy_from_slice(outputs[w].row(i));
    }
    Ok((defended, winners))
}

/// Evaluation settings.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub batch_size: usize,
    pub seed: u64,
    /// Attacks evaluated concurrently (at least 1).
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            batch_size: 500,
            seed: 0,
            threads: 1,
        }
    }
}

fn evaluate_attack(
    ens: &EnsembleState,
    classifier: &Network,
    test: &Dataset,
    labels: &[u8],
    r: usize,
    spec: &AttackSpec,
    opts: &EvalOptions,
) -> Result<AttackAccuracy, EvalError> {
    let streams = RngStreams::new(opts.seed);
    let mut acc = AttackAccuracy::new(spec.kind, ens.generators.len());
    for (b, start) in (0..test.len()).step_by(opts.batch_size.max(1)).enumerate() {
        let idx: Vec<usize> = (start..(start + opts.batch_size).min(test.len())).collect();
        let x = test.images().select_rows(&idx);
        let y: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        let mut rng = streams.derive(&format!("noise/eval/{r}"), b as u64);
        let attacked = apply_attack(spec, classifier, &x, &y, &mut rng)?;
        let base_pred = argmax_rows(&classifier.forward(&attacked.adversarial, Mode::Eval)?);
        let (defended, winners) = defend_image_batch(ens, &attacked.adversarial)?;
        let pred = argmax_rows(&classifier.forward(&defended, Mode::Eval)?);
        for (k, &label) in y.iter().enumerate() {
            acc.record(label as usize, pred[k] == label as usize, base_pred[k] == label as usize, winners[k]);
        }
    }
    Ok(acc)
}

/// Attacks the whole test set with each roster entry (true labels, fresh
/// noise substream per attack and batch), defends, classifies, and tallies
/// accuracy, undefended accuracy and wins per attack and class.
pub fn post_defense_accuracy(
    ens: &EnsembleState,
    classifier: &Network,
    test: &Dataset,
    roster: &[AttackSpec],
    opts: &EvalOptions,
) -> Result<EvaluationReport, EvalError> {
    let labels = test.labels().ok_or(EvalError::MissingLabels)?;
    let threads = opts.threads.max(1);
    let mut per_attack: Vec<Option<Result<AttackAccuracy, EvalError>>> = (0..roster.len()).map(|_| None).collect();
    for chunk in (0..roster.len()).collect::<Vec<_>>().chunks(threads) {
        let results: Vec<(usize, Result<AttackAccuracy, EvalError>)> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&r| s.spawn(move || (r, evaluate_attack(ens, classifier, test, labels, r, &roster[r], opts))))
                .collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
        });
        for (r, res) in results {
            per_attack[r] = Some(res);
        }
    }
    let attacks = per_attack
        .into_iter()
        .map(|r| r.expect("every attack evaluated"))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvaluationReport::new(attacks, ens.generators.len()))
}
