use std::fmt::Write as _;
use std::path::Path;

use super::EvalError;
use crate::attacks::AttackKind;

pub const CLASSES: usize = 10;

/// Tallies for one attack: per class counts, correct predictions after
/// defense, correct predictions without defense, and wins per generator.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackAccuracy {
    pub attack: AttackKind,
    pub n: [usize; CLASSES],
    pub correct: [usize; CLASSES],
    pub baseline_correct: [usize; CLASSES],
    /// `wins[generator][class]`.
    pub wins: Vec<[usize; CLASSES]>,
    /// Correct predictions on the samples each generator won.
    pub won_correct: Vec<[usize; CLASSES]>,
}

impl AttackAccuracy {
    pub fn new(attack: AttackKind, generators: usize) -> Self {
        Self {
            attack,
            n: [0; CLASSES],
            correct: [0; CLASSES],
            baseline_correct: [0; CLASSES],
            wins: vec![[0; CLASSES]; generators],
            won_correct: vec![[0; CLASSES]; generators],
        }
    }

    pub fn record(&mut self, class: usize, correct: bool, baseline_correct: bool, winner: usize) {
        self.n[class] += 1;
        self.correct[class] += correct as usize;
        self.baseline_correct[class] += baseline_correct as usize;
        self.wins[winner][class] += 1;
        self.won_correct[winner][class] += correct as usize;
    }

    pub fn total(&self) -> usize {
        self.n.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.correct.iter().sum(), self.total())
    }

    pub fn baseline_accuracy(&self) -> f64 {
        ratio(self.baseline_correct.iter().sum(), self.total())
    }

    pub fn class_accuracy(&self, class: usize) -> f64 {
        ratio(self.correct[class], self.n[class])
    }

    /// Accuracy on the samples of `class` won by generator `j`.
    pub fn generator_accuracy(&self, j: usize, class: usize) -> f64 {
        ratio(self.won_correct[j][class], self.wins[j][class])
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Results of evaluating an ensemble against a roster.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub attacks: Vec<AttackAccuracy>,
    pub generators: usize,
    pub overall_accuracy: f64,
    pub baseline_accuracy: f64,
}

impl EvaluationReport {
    pub fn new(attacks: Vec<AttackAccuracy>, generators: usize) -> Self {
        let n: usize = attacks.iter().map(AttackAccuracy::total).sum();
        let correct: usize = attacks.iter().map(|a| a.correct.iter().sum::<usize>()).sum();
        let base: usize = attacks.iter().map(|a| a.baseline_correct.iter().sum::<usize>()).sum();
        Self {
            overall_accuracy: ratio(correct, n),
            baseline_accuracy: ratio(base, n),
            attacks,
            generators,
        }
    }

    /// Total wins of generator `j` over all attacks and classes.
    pub fn generator_wins(&self, j: usize) -> usize {
        self.attacks.iter().map(|a| a.wins[j].iter().sum::<usize>()).sum()
    }

    pub fn evaluated(&self) -> usize {
        self.attacks.iter().map(AttackAccuracy::total).sum()
    }

    pub fn accuracy_csv(&self) -> String {
        let mut s = String::from("attack,class,n,correct,accuracy\n");
        for a in &self.attacks {
            for c in 0..CLASSES {
                let _ = writeln!(s, "{},{},{},{},{}", a.attack, c, a.n[c], a.correct[c], a.class_accuracy(c));
            }
        }
        s
    }

    pub fn wins_csv(&self) -> String {
        let mut s = String::from("generator,attack,class,wins,correct\n");
        for j in 0..self.generators {
            for a in &self.attacks {
                for c in 0..CLASSES {
                    let _ = writeln!(s, "{},{},{},{},{}", j, a.attack, c, a.wins[j][c], a.won_correct[j][c]);
                }
            }
        }
        s
    }

    /// One summary row for this setting.
    pub fn summary_csv(&self, setting: &str) -> String {
        format!(
            "setting,overall_accuracy,baseline_attacked_accuracy\n{},{},{}\n",
            setting, self.overall_accuracy, self.baseline_accuracy
        )
    }

    /// Writes `accuracy.csv`, `wins.csv` and `summary.csv` into `dir`.
    pub fn write_csvs(&self, dir: impl AsRef<Path>, setting: &str) -> Result<Vec<std::path::PathBuf>, EvalError> {
        let dir = dir.as_ref();
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| EvalError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let mut out = Vec::new();
        for (name, body) in [
            ("accuracy.csv", self.accuracy_csv()),
            ("wins.csv", self.wins_csv()),
            ("summary.csv", self.summary_csv(setting)),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(io(&path))?;
            out.push(path);
        }
        Ok(out)
    }
}
