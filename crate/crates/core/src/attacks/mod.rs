//! The nine attacks used to build transformed images: gradient attacks
//! against a classifier (FGSM, PGD, BIM, DeepFool, SLIDE) and noise
//! attacks (AUN, AGN, RAGN, salt and pepper).
//!
//! Attacks work on any network whose output is a row of class logits; the
//! input rows are treated as flat pixel vectors.

mod cache;
mod gradient;
mod noise;
mod project;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{argmax_rows, Mode, Network, NnError, Tensor};

pub use cache::{load_attack_cache, save_attack_cache, AttackCache};
pub use gradient::{attack_deepfool, attack_fgsm, attack_iterative_linf, attack_slide};
pub use noise::{attack_noise, attack_salt_pepper, sample_noise, SAPN_MAX_FRACTION};
pub use project::project_l1_ball;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("non-finite input gradient in {0} attack")]
    NonFiniteGradient(AttackKind),
    #[error("unknown attack kind '{0}'")]
    UnknownKind(String),
    #[error("invalid attack spec '{spec}': {reason}")]
    InvalidSpec { spec: String, reason: String },
    #[error("{images} images but {labels} labels")]
    LabelCount { images: usize, labels: usize },
    #[error("{kind} is not handled by {op}")]
    WrongKind { kind: AttackKind, op: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackKind {
    Fgsm,
    Pgd,
    Df,
    Aun,
    Bim,
    Agn,
    Ragn,
    Sapn,
    Slide,
}

/// Norm in which an attack's budget is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
    Linf,
}

impl AttackKind {
    /// All kinds in table order.
    pub const ALL: [AttackKind; 9] = [
        AttackKind::Fgsm,
        AttackKind::Pgd,
        AttackKind::Df,
        AttackKind::Aun,
        AttackKind::Bim,
        AttackKind::Agn,
        AttackKind::Ragn,
        AttackKind::Sapn,
        AttackKind::Slide,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "FGSM",
            AttackKind::Pgd => "PGD",
            AttackKind::Df => "DF",
            AttackKind::Aun => "AUN",
            AttackKind::Bim => "BIM",
            AttackKind::Agn => "AGN",
            AttackKind::Ragn => "RAGN",
            AttackKind::Sapn => "SAPN",
            AttackKind::Slide => "SLIDE",
        }
    }

    /// Strength used for each attack unless overridden.
    pub fn default_epsilon(self) -> f32 {
        match self {
            AttackKind::Fgsm | AttackKind::Pgd | AttackKind::Df => 0.5,
            AttackKind::Aun => 3.5,
            AttackKind::Bim => 0.2,
            AttackKind::Agn => 100.0,
            AttackKind::Ragn => 15.0,
            AttackKind::Sapn => 10.0,
            AttackKind::Slide => 25.0,
        }
    }

    /// The norm the budget `epsilon` bounds.
    pub fn norm(self) -> Norm {
        match self {
            AttackKind::Fgsm | AttackKind::Pgd | AttackKind::Df | AttackKind::Bim | AttackKind::Aun => Norm::Linf,
            AttackKind::Agn | AttackKind::Ragn | AttackKind::Sapn => Norm::L2,
            AttackKind::Slide => Norm::L1,
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, AttackError> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| AttackError::UnknownKind(s.to_string()))
    }
}

/// An attack together with its strength and solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub epsilon: f32,
    /// Iterations (PGD, BIM, SLIDE), DeepFool iteration cap, or the number
    /// of salt-and-pepper fractions tried.
    pub steps: usize,
    pub step_size: f32,
    pub random_start: bool,
    /// Independent draws for repeated noise.
    pub max_repeats: usize,
    pub overshoot: f32,
    /// Gradient magnitude quantile kept by sparse L1 descent.
    pub quantile: f32,
}

impl AttackSpec {
    /// Default solver settings for `kind` at strength `epsilon`.
    pub fn new(kind: AttackKind, epsilon: f32) -> Self {
        let base = AttackSpec {
            kind,
            epsilon,
            steps: 1,
            step_size: epsilon,
            random_start: false,
            max_repeats: 1,
            overshoot: 0.0,
            quantile: 0.99,
        };
        match kind {
            AttackKind::Pgd => AttackSpec {
                steps: 40,
                step_size: epsilon / 10.0,
                random_start: true,
                ..base
            },
            AttackKind::Bim => AttackSpec {
                steps: 10,
                step_size: epsilon / 5.0,
                ..base
            },
            AttackKind::Df => AttackSpec {
                steps: 50,
                overshoot: 0.02,
                ..base
            },
            AttackKind::Ragn => AttackSpec { max_repeats: 100, ..base },
            AttackKind::Sapn => AttackSpec { steps: 20, ..base },
            AttackKind::Slide => AttackSpec {
                steps: 20,
                step_size: epsilon / 10.0,
                ..base
            },
            _ => base,
        }
    }

    pub fn default_for(kind: AttackKind) -> Self {
        Self::new(kind, kind.default_epsilon())
    }

    /// The nine default attacks in table order.
    pub fn roster() -> Vec<AttackSpec> {
        AttackKind::ALL.into_iter().map(Self::default_for).collect()
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |reason: &str| {
            Err(AttackError::InvalidSpec {
                spec: self.to_string(),
                reason: reason.into(),
            })
        };
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be finite and non-negative");
        }
        if self.steps == 0 || self.max_repeats == 0 {
            return bad("steps and repeats must be at least 1");
        }
        if !(self.step_size >= 0.0) || !(0.0..=1.0).contains(&self.quantile) || !(self.overshoot >= 0.0) {
            return bad("step size, quantile or overshoot out of range");
        }
        Ok(())
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str().to_ascii_lowercase(), self.epsilon)?;
        let d = AttackSpec::new(self.kind, self.epsilon);
        let mut extra = Vec::new();
        if self.steps != d.steps {
            extra.push(format!("steps={}", self.steps));
        }
        if self.step_size != d.step_size {
            extra.push(format!("step_size={}", self.step_size));
        }
        if self.random_start != d.random_start {
            extra.push(format!("random_start={}", self.random_start));
        }
        if self.max_repeats != d.max_repeats {
            extra.push(format!("max_repeats={}", self.max_repeats));
        }
        if self.overshoot != d.overshoot {
            extra.push(format!("overshoot={}", self.overshoot));
        }
        if self.quantile != d.quantile {
            extra.push(format!("quantile={}", self.quantile));
        }
        if !extra.is_empty() {
            write!(f, ":{}", extra.join(","))?;
        }
        Ok(())
    }
}

/// Parses `KIND[:EPS[:key=val,...]]`; a missing epsilon takes the default.
impl FromStr for AttackSpec {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, AttackError> {
        let invalid = |reason: String| AttackError::InvalidSpec {
            spec: s.to_string(),
            reason,
        };
        let mut parts = s.splitn(3, ':');
        let kind: AttackKind = parts.next().unwrap_or_default().trim().parse()?;
        let epsilon = match parts.next() {
            Some(e) => e.trim().parse::<f32>().map_err(|e| invalid(format!("epsilon: {e}")))?,
            None => kind.default_epsilon(),
        };
        let mut spec = AttackSpec::new(kind, epsilon);
        if let Some(opts) = parts.next() {
            for kv in opts.split(',').filter(|p| !p.trim().is_empty()) {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| invalid(format!("expected key=value, got '{kv}'")))?;
                let (k, v) = (k.trim(), v.trim());
                let num = |v: &str| v.parse::<f32>().map_err(|e| invalid(format!("{k}: {e}")));
                let int = |v: &str| v.parse::<usize>().map_err(|e| invalid(format!("{k}: {e}")));
                match k {
                    "steps" => spec.steps = int(v)?,
                    "step_size" => spec.step_size = num(v)?,
                    "random_start" => spec.random_start = v.parse().map_err(|e| invalid(format!("{k}: {e}")))?,
                    "max_repeats" => spec.max_repeats = int(v)?,
                    "overshoot" => spec.overshoot = num(v)?,
                    "quantile" => spec.quantile = num(v)?,
                    _ => return Err(invalid(format!("unknown option '{k}'"))),
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Adversarial images with per-image outcome and perturbation size.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub adversarial: Tensor,
    /// Classifier prediction on the adversarial image differs from the label.
    pub success: Vec<bool>,
    /// Perturbation size in the attack's norm.
    pub norms: Vec<f32>,
}

impl AttackResult {
    pub fn success_rate(&self) -> f64 {
        if self.success.is_empty() {
            return 0.0;
        }
        self.success.iter().filter(|&&s| s).count() as f64 / self.success.len() as f64
    }
}

pub fn perturbation_norm(x: &[f32], adv: &[f32], norm: Norm) -> f32 {
    let d = x.iter().zip(adv).map(|(&a, &b)| (b - a) as f64);
    (match norm {
        Norm::L1 => d.map(f64::abs).sum(),
        Norm::L2 => d.map(|v| v * v).sum::<f64>().sqrt(),
        Norm::Linf => d.map(f64::abs).fold(0.0, f64::max),
    }) as f32
}

pub(crate) fn check_labels(x: &Tensor, y: &[u8]) -> Result<(), AttackError> {
    if x.batch() != y.len() {
        return Err(AttackError::LabelCount {
            images: x.batch(),
            labels: y.len(),
        });
    }
    Ok(())
}

pub(crate) fn predict(c: &Network, x: &Tensor) -> Result<Vec<usize>, AttackError> {
    Ok(argmax_rows(&c.forward(x, Mode::Eval)?))
}

/// Evaluates the classifier on `adv` and assembles the result.
pub(crate) fn finish(c: &Network, x: &Tensor, adv: Tensor, y: &[u8], norm: Norm) -> Result<AttackResult, AttackError> {
    let pred = predict(c, &adv)?;
    let success = pred.iter().zip(y).map(|(&p, &l)| p != l as usize).collect();
    let norms = (0..x.batch()).map(|i| perturbation_norm(x.row(i), adv.row(i), norm)).collect();
    Ok(AttackResult {
        adversarial: adv,
        success,
        norms,
    })
}

pub(crate) fn clip01(v: f32) -> f32 {
    v.clamp(0.0, 1.0)
}

/// Runs `spec` against classifier `c` on images `x` with true (or
/// reference) labels `y`, drawing randomness from `rng`.
pub fn apply_attack<R: Rng + ?Sized>(
    spec: &AttackSpec,
    c: &Network,
    x: &Tensor,
    y: &[u8],
    rng: &mut R,
) -> Result<AttackResult, AttackError> {
    spec.validate()?;
    match spec.kind {
        AttackKind::Fgsm => attack_fgsm(c, x, y, spec),
        AttackKind::Pgd | AttackKind::Bim => attack_iterative_linf(c, x, y, spec, rng),
        AttackKind::Df => attack_deepfool(c, x, y, spec),
        AttackKind::Aun | AttackKind::Agn | AttackKind::Ragn => attack_noise(c, x, y, spec, rng),
        AttackKind::Sapn => attack_salt_pepper(c, x, y, spec, rng),
        AttackKind::Slide => attack_slide(c, x, y, spec),
    }
}
