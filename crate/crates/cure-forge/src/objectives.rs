//! Loss functions: cross-entropy, KL divergence between predictive
//! distributions, the adversarial loss (natural CE plus natural→adversarial
//! KL), the consistency-regularization term against the revision model, and
//! their weighted total.
//!
//! KL is evaluated in log space from log-softmax outputs; both kinds of
//! reductions are batch means so the regularization weight is independent of
//! batch size.

use crate::error::{Error, Result};
use crate::nn::BlockModel;
use crate::tensor::Tensor;

/// One-hot constant `[b × C]` for the given labels.
fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * num_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::invalid(
                "labels",
                format!("label {y} out of range for {num_classes} classes"),
            ));
        }
        data[i * num_classes + y] = 1.0;
    }
    Tensor::matrix(labels.len(), num_classes, data)
}

/// Mean cross-entropy of `logits[b×C]` against integer labels.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (rows, cols) = match *logits.shape() {
        [r, c] => (r, c),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy".into(),
                lhs: logits.shape().to_vec(),
                rhs: vec![labels.len(), 0],
            })
        }
    };
    if rows != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy".into(),
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let targets = one_hot(labels, cols)?;
    let lsm = logits.log_softmax()?;
    lsm.mul(&targets)?.sum()?.scale(-1.0 / rows as f64)
}

/// Mean KL(softmax(p_logits) ‖ softmax(q_logits)) over the batch.
/// Differentiable through both arguments; pass a detached tensor (or a
/// stop-gradient model's output) to cut either side.
pub fn kl_div(p_logits: &Tensor, q_logits: &Tensor) -> Result<Tensor> {
    if p_logits.shape() != q_logits.shape() {
        return Err(Error::ShapeMismatch {
            op: "kl_div".into(),
            lhs: p_logits.shape().to_vec(),
            rhs: q_logits.shape().to_vec(),
        });
    }
    let rows = match *p_logits.shape() {
        [r, _] => r,
        [_] => 1,
        _ => {
            return Err(Error::ShapeMismatch {
                op: "kl_div".into(),
                lhs: p_logits.shape().to_vec(),
                rhs: vec![],
            })
        }
    };
    let lp = p_logits.log_softmax()?;
    let lq = q_logits.log_softmax()?;
    lp.exp()?.mul(&lp.sub(&lq)?)?.sum()?.scale(1.0 / rows as f64)
}

/// The adversarial loss and its recorded components, still on the tape.
pub struct AdvLossParts {
    pub ce_nat: Tensor,
    pub kl_nat_adv: Tensor,
    pub l_adv: Tensor,
}

/// L_adv = CE(f(x_nat), y) + KL(p(x_nat) ‖ p(x_adv)), both terms through θ.
pub fn adv_loss(m: &BlockModel, x_nat: &Tensor, labels: &[usize], x_adv: &Tensor) -> Result<AdvLossParts> {
    let logits_nat = m.forward(x_nat)?;
    let logits_adv = m.forward(x_adv)?;
    let ce_nat = cross_entropy(&logits_nat, labels)?;
    let kl_nat_adv = kl_div(&logits_nat, &logits_adv)?;
    let l_adv = ce_nat.add(&kl_nat_adv)?;
    Ok(AdvLossParts {
        ce_nat,
        kl_nat_adv,
        l_adv,
    })
}

/// L_CR = KL(p(x_nat; θ_rev) ‖ p(x_nat; θ)) + KL(p(x_adv; θ_rev) ‖ p(x_adv; θ)).
/// The revision model's outputs are stop-gradient targets: its parameters are
/// outside the tape, so no gradient can flow into them.
pub fn consistency_loss(m: &BlockModel, m_rev: &BlockModel, x_nat: &Tensor, x_adv: &Tensor) -> Result<Tensor> {
    if m.arch() != m_rev.arch() {
        return Err(Error::invalid("revision", "revision model architecture differs from the training model"));
    }
    let kl_nat = kl_div(&m_rev.forward(x_nat)?, &m.forward(x_nat)?)?;
    let kl_adv = kl_div(&m_rev.forward(x_adv)?, &m.forward(x_adv)?)?;
    kl_nat.add(&kl_adv)
}

/// total = L_adv + γ·L_CR. With γ = 0 (or no CR term) the total IS l_adv.
pub fn total_loss(l_adv: &Tensor, l_cr: Option<&Tensor>, gamma: f64) -> Result<Tensor> {
    match l_cr {
        Some(cr) if gamma != 0.0 => l_adv.add(&cr.scale(gamma)?),
        _ => Ok(l_adv.clone()),
    }
}

/// Scalar snapshot of a training step's loss components.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossBundle {
    pub ce_nat: f64,
    pub kl_nat_adv: f64,
    pub l_adv: f64,
    pub l_cr: f64,
    pub total: f64,
    pub gamma: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_model, ArchSpec};
    use crate::tensor::backward;

    #[test]
    fn ce_uniform_logits_is_ln_c() {
        for c in [2usize, 3, 7] {
            let logits = Tensor::matrix(4, c, vec![0.0; 4 * c]).unwrap();
            let labels = vec![0usize; 4];
            let ce = cross_entropy(&logits, &labels).unwrap().value().unwrap();
            assert!((ce - (c as f64).ln()).abs() < 1e-12, "C={c}: {ce}");
        }
    }

    #[test]
    fn ce_confident_correct_is_tiny() {
        let logits = Tensor::matrix(1, 2, vec![10.0, -10.0]).unwrap();
        let ce = cross_entropy(&logits, &[0]).unwrap().value().unwrap();
        // softmax ≈ [1, 2.06e-9]; −ln p₀ ≈ 2.06e-9
        let expected = (1.0f64 + (-20.0f64).exp()).ln();
        assert!((ce - expected).abs() < 1e-15);
        assert!((ce - 2.06e-9).abs() < 0.01e-9);
    }

    #[test]
    fn ce_nonnegative_on_random_logits() {
        use rand::Rng;
        let mut rng = crate::seeding::stream_rng(5, "ce-prop");
        for _ in 0..200 {
            let data: Vec<f64> = (0..6).map(|_| rng.gen_range(-8.0..8.0)).collect();
            let logits = Tensor::matrix(2, 3, data).unwrap();
            let labels = vec![rng.gen_range(0..3), rng.gen_range(0..3)];
            let ce = cross_entropy(&logits, &labels).unwrap().value().unwrap();
            assert!(ce >= 0.0);
        }
    }

    #[test]
    fn ce_label_out_of_range() {
        let logits = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(cross_entropy(&logits, &[2]).is_err());
    }

    #[test]
    fn kl_identical_logits_is_zero() {
        let p = Tensor::matrix(3, 4, (0..12).map(|i| i as f64 / 3.0).collect()).unwrap();
        let kl = kl_div(&p, &p).unwrap().value().unwrap();
        assert!(kl.abs() < 1e-15);
    }

    #[test]
    fn kl_hand_summed_pair_and_asymmetry() {
        // p = [.5,.5], q = [.25,.75] via logits ln(p), ln(q)
        let p = Tensor::matrix(1, 2, vec![0.5f64.ln(), 0.5f64.ln()]).unwrap();
        let q = Tensor::matrix(1, 2, vec![0.25f64.ln(), 0.75f64.ln()]).unwrap();
        let fwd = kl_div(&p, &q).unwrap().value().unwrap();
        let expected = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!((fwd - expected).abs() < 1e-12);
        assert!((fwd - 0.14384).abs() < 1e-5);
        let rev = kl_div(&q, &p).unwrap().value().unwrap();
        let expected_rev = 0.25 * (0.25f64 / 0.5).ln() + 0.75 * (0.75f64 / 0.5).ln();
        assert!((rev - expected_rev).abs() < 1e-12);
        assert!((rev - 0.13081).abs() < 1e-5);
        assert!((fwd - rev).abs() > 1e-3);
    }

    #[test]
    fn kl_nonnegative_zero_iff_equal() {
        use rand::Rng;
        let mut rng = crate::seeding::stream_rng(6, "kl-prop");
        for _ in 0..300 {
            let a: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let p = Tensor::matrix(2, 4, a.clone()).unwrap();
            let q = Tensor::matrix(2, 4, b.clone()).unwrap();
            let kl = kl_div(&p, &q).unwrap().value().unwrap();
            assert!(kl >= -1e-12, "kl = {kl}");
            // zero (to 1e-10) only when the distributions coincide
            if kl < 1e-10 {
                let ps = p.log_softmax().unwrap();
                let qs = q.log_softmax().unwrap();
                for (x, y) in ps.data().iter().zip(qs.data()) {
                    assert!((x - y).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn kl_shape_mismatch() {
        let p = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let q = Tensor::matrix(1, 3, vec![0.0, 0.0, 0.0]).unwrap();
        assert!(kl_div(&p, &q).is_err());
    }

    #[test]
    fn losses_shift_invariant_per_row() {
        let logits = Tensor::matrix(2, 3, vec![1.0, -0.5, 2.0, 0.3, 0.4, -1.0]).unwrap();
        let shifted = logits.add(&Tensor::matrix(2, 3, vec![7.0; 6]).unwrap()).unwrap();
        let labels = vec![2, 0];
        let a = cross_entropy(&logits, &labels).unwrap().value().unwrap();
        let b = cross_entropy(&shifted, &labels).unwrap().value().unwrap();
        assert!((a - b).abs() < 1e-10);
        let other = Tensor::matrix(2, 3, vec![0.1, 0.9, -0.2, 1.1, 0.0, 0.4]).unwrap();
        let k1 = kl_div(&logits, &other).unwrap().value().unwrap();
        let k2 = kl_div(&shifted, &other).unwrap().value().unwrap();
        assert!((k1 - k2).abs() < 1e-10);
    }

    fn toy_model(seed: u64) -> BlockModel {
        init_model(&ArchSpec::uniform(2, 2, 1, 6, 3), seed).unwrap()
    }

    #[test]
    fn adv_loss_equals_ce_when_adv_is_nat() {
        let m = toy_model(4);
        let x = Tensor::matrix(3, 2, vec![0.2, 0.8, 0.5, 0.5, 0.9, 0.1]).unwrap();
        let parts = adv_loss(&m, &x, &[0, 1, 2], &x).unwrap();
        assert!(parts.kl_nat_adv.value().unwrap().abs() < 1e-15);
        assert_eq!(parts.l_adv.value().unwrap(), parts.ce_nat.value().unwrap());
    }

    #[test]
    fn adv_loss_zero_weight_model_is_ln_c() {
        let mut m = toy_model(4);
        let zeros: Vec<Vec<f64>> = m.param_data().into_iter().map(|v| vec![0.0; v.len()]).collect();
        m.set_all_params(zeros, true).unwrap();
        let x = Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let x_adv = Tensor::matrix(2, 2, vec![0.15, 0.25, 0.35, 0.45]).unwrap();
        let parts = adv_loss(&m, &x, &[0, 1], &x_adv).unwrap();
        assert!((parts.l_adv.value().unwrap() - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn adv_loss_components_sum_exactly() {
        let m = toy_model(9);
        let x = Tensor::matrix(2, 2, vec![0.2, 0.6, 0.8, 0.3]).unwrap();
        let x_adv = Tensor::matrix(2, 2, vec![0.25, 0.55, 0.75, 0.35]).unwrap();
        let parts = adv_loss(&m, &x, &[1, 0], &x_adv).unwrap();
        let sum = parts.ce_nat.value().unwrap() + parts.kl_nat_adv.value().unwrap();
        assert!((parts.l_adv.value().unwrap() - sum).abs() < 1e-12);
    }

    #[test]
    fn consistency_zero_when_rev_equals_theta() {
        let m = toy_model(12);
        let rev = m.detached_clone();
        let x = Tensor::matrix(2, 2, vec![0.3, 0.1, 0.6, 0.9]).unwrap();
        let x_adv = Tensor::matrix(2, 2, vec![0.32, 0.12, 0.58, 0.88]).unwrap();
        let cr = consistency_loss(&m, &rev, &x, &x_adv).unwrap();
        assert!(cr.value().unwrap().abs() < 1e-15);
    }

    #[test]
    fn consistency_never_grads_revision_params() {
        let m = toy_model(12);
        let other = toy_model(13);
        let rev = other.detached_clone();
        let x = Tensor::matrix(2, 2, vec![0.3, 0.1, 0.6, 0.9]).unwrap();
        let x_adv = Tensor::matrix(2, 2, vec![0.32, 0.12, 0.58, 0.88]).unwrap();
        let cr = consistency_loss(&m, &rev, &x, &x_adv).unwrap();
        backward(&cr).unwrap();
        for p in rev.parameters() {
            assert!(p.tensor.grad().is_none(), "revision param {} got a gradient", p.name);
        }
        // the training model does receive gradients
        assert!(m.parameters().iter().any(|p| p.tensor.grad().is_some()));
    }

    #[test]
    fn consistency_two_term_hand_sum() {
        let m = toy_model(21);
        let rev = toy_model(22).detached_clone();
        let x = Tensor::matrix(2, 2, vec![0.3, 0.1, 0.6, 0.9]).unwrap();
        let x_adv = Tensor::matrix(2, 2, vec![0.28, 0.13, 0.61, 0.87]).unwrap();
        let cr = consistency_loss(&m, &rev, &x, &x_adv).unwrap().value().unwrap();
        let t1 = kl_div(&rev.forward(&x).unwrap(), &m.forward(&x).unwrap()).unwrap().value().unwrap();
        let t2 = kl_div(&rev.forward(&x_adv).unwrap(), &m.forward(&x_adv).unwrap())
            .unwrap()
            .value()
            .unwrap();
        assert!((cr - (t1 + t2)).abs() < 1e-12);
    }

    #[test]
    fn consistency_arch_mismatch() {
        let m = toy_model(1);
        let rev = init_model(&ArchSpec::uniform(2, 3, 1, 6, 3), 1).unwrap();
        let x = Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap();
        assert!(consistency_loss(&m, &rev, &x, &x).is_err());
    }

    #[test]
    fn total_loss_arithmetic() {
        let l_adv = Tensor::scalar(1.0).unwrap();
        let l_cr = Tensor::scalar(0.25).unwrap();
        let total = total_loss(&l_adv, Some(&l_cr), 2.0).unwrap().value().unwrap();
        assert_eq!(total, 1.5);
        // γ = 0 → total is exactly l_adv
        let same = total_loss(&l_adv, Some(&l_cr), 0.0).unwrap();
        assert_eq!(same.value().unwrap().to_bits(), 1.0f64.to_bits());
    }
}
