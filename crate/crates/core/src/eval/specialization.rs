use std::fmt;

use super::EvaluationReport;

/// Role of a generator judged from where it wins and how well the
/// classifier does on those samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Specialization {
    Generalist,
    Specialist,
    Marginalist,
    Unlabeled,
}

impl fmt::Display for Specialization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Specialization::Generalist => "generalist",
            Specialization::Specialist => "specialist",
            Specialization::Marginalist => "marginalist",
            Specialization::Unlabeled => "unlabeled",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Minimum share of all samples won by a generalist.
    pub generalist_share: f64,
    /// A generalist wins on more than this fraction of the attacks.
    pub generalist_span: f64,
    /// Share of a specialist's wins falling on its top attacks.
    pub specialist_concentration: f64,
    pub specialist_max_attacks: usize,
    pub specialist_accuracy: f64,
    /// Below this win share a generator is a marginalist.
    pub marginalist_share: f64,
    /// Concentrated generators below this accuracy are marginalists.
    pub marginalist_accuracy: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            generalist_share: 0.20,
            generalist_span: 0.5,
            specialist_concentration: 0.80,
            specialist_max_attacks: 2,
            specialist_accuracy: 0.70,
            marginalist_share: 0.05,
            marginalist_accuracy: 0.40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecializationLabel {
    pub label: Specialization,
    /// Fraction of all evaluated samples this generator won.
    pub win_share: f64,
    /// Number of attacks on which it won at least once.
    pub attacks_won: usize,
    /// Fraction of its wins on its top `specialist_max_attacks` attacks.
    pub concentration: f64,
    /// Post-defense accuracy on the samples it won on those top attacks.
    pub top_accuracy: f64,
}

/// Labels every generator: marginalist (tiny share, or concentrated with
/// poor accuracy), specialist (concentrated with good accuracy),
/// generalist (large share spread over most attacks), else unlabeled.
/// Concentration is only meaningful when the roster has more attacks than
/// a specialist may cover.
pub fn specialization_labels(report: &EvaluationReport, t: &Thresholds) -> Vec<SpecializationLabel> {
    let total = report.evaluated().max(1) as f64;
    let n_attacks = report.attacks.len();
    (0..report.generators)
        .map(|j| {
            let per_attack: Vec<usize> = report.attacks.iter().map(|a| a.wins[j].iter().sum()).collect();
            let wins: usize = per_attack.iter().sum();
            let win_share = wins as f64 / total;
            let attacks_won = per_attack.iter().filter(|&&w| w > 0).count();
            let mut order: Vec<usize> = (0..n_attacks).collect();
            order.sort_by(|&a, &b| per_attack[b].cmp(&per_attack[a]).then(a.cmp(&b)));
            let top: Vec<usize> = order.into_iter().take(t.specialist_max_attacks).collect();
            let top_wins: usize = top.iter().map(|&a| per_attack[a]).sum();
            let concentration = if wins > 0 { top_wins as f64 / wins as f64 } else { 0.0 };
            let correct: usize = top.iter().map(|&a| report.attacks[a].won_correct[j].iter().sum::<usize>()).sum();
            let top_accuracy = if top_wins > 0 { correct as f64 / top_wins as f64 } else { 0.0 };
            let concentrated = n_attacks > t.specialist_max_attacks && wins > 0 && concentration >= t.specialist_concentration;
            let label = if win_share < t.marginalist_share || (concentrated && top_accuracy < t.marginalist_accuracy) {
                Specialization::Marginalist
            } else if concentrated && top_accuracy >= t.specialist_accuracy {
                Specialization::Specialist
            } else if win_share >= t.generalist_share && attacks_won as f64 > t.generalist_span * n_attacks as f64 {
                Specialization::Generalist
            } else {
                Specialization::Unlabeled
            };
            SpecializationLabel {
                label,
                win_share,
                attacks_won,
                concentration,
                top_accuracy,
            }
        })
        .collect()
}
