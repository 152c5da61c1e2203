//! White-box L∞ attacks: FGSM, multi-step PGD with configurable inner
//! objective, and minimum-perturbation estimation by bisection.
//!
//! Attacks obtain input gradients through [`grad_wrt`], which writes into no
//! tensor, so model parameters and their gradient slots are left exactly as
//! found. The iterate is projected onto the ε-ball every step; the final
//! point is clamped to the feature range.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Classifier;
use crate::objectives::{cross_entropy, kl_div};
use crate::seeding::stream_rng;
use crate::tensor::{grad_wrt, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Ce,
    Kl,
    CePlusAlphaKl,
}

impl Objective {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(Objective::Ce),
            "kl" => Ok(Objective::Kl),
            "ce_plus_alpha_kl" => Ok(Objective::CePlusAlphaKl),
            other => Err(Error::invalid(
                "attack.objective",
                format!("unknown objective `{other}` (ce|kl|ce_plus_alpha_kl)"),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Objective::Ce => "ce",
            Objective::Kl => "kl",
            Objective::CePlusAlphaKl => "ce_plus_alpha_kl",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttackConfig {
    /// L∞ radius in feature units.
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub random_init: bool,
    pub objective: Objective,
    /// Mixing weight of the KL term, used only by `ce_plus_alpha_kl`.
    pub objective_alpha: f64,
    pub clamp: (f64, f64),
}

impl Default for AttackConfig {
    /// PGD-10 at ε = 8/255 with step ε/4 on unit-range features.
    fn default() -> Self {
        let epsilon = 8.0 / 255.0;
        AttackConfig {
            epsilon,
            steps: 10,
            step_size: epsilon / 4.0,
            random_init: true,
            objective: Objective::Ce,
            objective_alpha: 1.0,
            clamp: (0.0, 1.0),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 || !self.epsilon.is_finite() {
            return Err(Error::invalid("attack.epsilon", "must be a non-negative finite number"));
        }
        if self.steps < 1 {
            return Err(Error::invalid("attack.steps", "must be at least 1"));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::invalid("attack.step_size", "must be positive"));
        }
        if self.epsilon > 0.0 && self.step_size > 2.0 * self.epsilon {
            return Err(Error::invalid(
                "attack.step_size",
                "larger than 2·epsilon: every step would overshoot the ball",
            ));
        }
        if !self.objective_alpha.is_finite() || self.objective_alpha < 0.0 {
            return Err(Error::invalid("attack.objective_alpha", "must be non-negative"));
        }
        let (lo, hi) = self.clamp;
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::invalid("attack.clamp", format!("invalid bounds ({lo}, {hi})")));
        }
        Ok(())
    }

    /// Same attack rescaled to a different radius, keeping the step ratio.
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        let ratio = if self.epsilon > 0.0 { self.step_size / self.epsilon } else { 0.25 };
        AttackConfig {
            epsilon,
            step_size: if epsilon > 0.0 { epsilon * ratio } else { self.step_size },
            ..*self
        }
    }
}

/// sign with sign(0) = 0, so flat coordinates are never perturbed.
fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_labels(y: &[usize], x: &Tensor) -> Result<usize> {
    let (rows, cols) = match *x.shape() {
        [r, c] => (r, c),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "attack".into(),
                lhs: x.shape().to_vec(),
                rhs: vec![],
            })
        }
    };
    if y.len() != rows {
        return Err(Error::ShapeMismatch {
            op: "attack".into(),
            lhs: vec![rows, cols],
            rhs: vec![y.len()],
        });
    }
    Ok(rows)
}

/// Single-step signed-gradient attack on the cross-entropy:
/// `x_adv = clamp(x + ε·sign(∇ₓ CE), lo, hi)`.
pub fn fgsm(m: &dyn Classifier, x: &Tensor, y: &[usize], cfg: &AttackConfig) -> Result<Tensor> {
    cfg.validate()?;
    if cfg.steps != 1 {
        return Err(Error::invalid("attack.steps", "fgsm is single-step; set steps = 1"));
    }
    check_labels(y, x)?;
    let loss = cross_entropy(&m.logits(x)?, y)?;
    let grad = grad_wrt(&loss, x)?;
    let (lo, hi) = cfg.clamp;
    let data: Vec<f64> = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&xi, &gi)| (xi + cfg.epsilon * sign0(gi)).min(hi).max(lo))
        .collect();
    Tensor::new(x.shape().to_vec(), data, false)
}

/// Detached copy of the model's clean-input logits, used as the fixed
/// reference distribution by the KL objectives.
fn reference_logits(m: &dyn Classifier, x: &Tensor) -> Result<Tensor> {
    let logits = m.logits(x)?;
    Tensor::new(logits.shape().to_vec(), logits.data().to_vec(), false)
}

/// Projected gradient descent in the L∞ ball. The perturbation is projected
/// onto the ball after every step; the returned point additionally satisfies
/// the clamp bounds.
pub fn pgd(m: &dyn Classifier, x: &Tensor, y: &[usize], cfg: &AttackConfig, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    cfg.validate()?;
    check_labels(y, x)?;
    if cfg.epsilon == 0.0 {
        return Ok(x.clone());
    }
    let eps = cfg.epsilon;
    let reference = match cfg.objective {
        Objective::Ce => None,
        Objective::Kl | Objective::CePlusAlphaKl => Some(reference_logits(m, x)?),
    };

    let n = x.numel();
    let mut delta = vec![0.0; n];
    if cfg.random_init {
        for d in delta.iter_mut() {
            *d = eps * rng.gen_range(-1.0..1.0);
        }
    }

    for _ in 0..cfg.steps {
        let point_data: Vec<f64> = x.data().iter().zip(&delta).map(|(&xi, &di)| xi + di).collect();
        let point = Tensor::new(x.shape().to_vec(), point_data, false)?;
        let logits = m.logits(&point)?;
        let loss = match (cfg.objective, &reference) {
            (Objective::Ce, _) => cross_entropy(&logits, y)?,
            (Objective::Kl, Some(reference)) => kl_div(reference, &logits)?,
            (Objective::CePlusAlphaKl, Some(reference)) => {
                let ce = cross_entropy(&logits, y)?;
                let kl = kl_div(reference, &logits)?;
                ce.add(&kl.scale(cfg.objective_alpha)?)?
            }
            _ => unreachable!("reference exists for KL objectives"),
        };
        let grad = grad_wrt(&loss, &point)?;
        for (d, &g) in delta.iter_mut().zip(grad.data()) {
            *d = (*d + cfg.step_size * sign0(g)).min(eps).max(-eps);
        }
    }

    let (lo, hi) = cfg.clamp;
    let data: Vec<f64> = x
        .data()
        .iter()
        .zip(&delta)
        .map(|(&xi, &di)| (xi + di).min(hi).max(lo))
        .collect();
    Tensor::new(x.shape().to_vec(), data, false)
}

/// Smallest ε (within `tol`) at which evaluation PGD flips the prediction of
/// a single sample `x[1×d]`, found by bisection over `[0, eps_hi]`.
///
/// Returns 0 when the clean sample is already misclassified and `None` when
/// even `eps_hi` fails. The attack-success predicate is assumed monotone in
/// ε; the result is the bisection-consistent estimate, not a proof. The step
/// size is pinned to ε/4 at every probe.
pub fn min_epsilon(
    m: &dyn Classifier,
    x: &Tensor,
    y: usize,
    cfg_template: &AttackConfig,
    eps_hi: f64,
    tol: f64,
    seed: u64,
) -> Result<Option<f64>> {
    if !(eps_hi > 0.0) || !eps_hi.is_finite() {
        return Err(Error::invalid("mineps.eps_hi", "must be positive"));
    }
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::invalid("mineps.tol", "must be positive"));
    }
    if x.shape().first() != Some(&1) {
        return Err(Error::ShapeMismatch {
            op: "min_epsilon".into(),
            lhs: x.shape().to_vec(),
            rhs: vec![1, 0],
        });
    }

    let clean_pred = m.logits(x)?.argmax_rows()[0];
    if clean_pred != y {
        return Ok(Some(0.0));
    }

    let mut succeeds = |eps: f64| -> Result<bool> {
        let cfg = AttackConfig {
            epsilon: eps,
            step_size: eps / 4.0,
            ..*cfg_template
        };
        // one fixed stream per probe keeps the predicate a pure function of ε
        let mut rng = stream_rng(seed, "min-eps");
        let x_adv = pgd(m, x, &[y], &cfg, &mut rng)?;
        Ok(m.logits(&x_adv)?.argmax_rows()[0] != y)
    };

    if !succeeds(eps_hi)? {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0f64, eps_hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if succeeds(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}
