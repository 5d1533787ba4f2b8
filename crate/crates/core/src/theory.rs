//! Empirical checks of the naive-classifier error identity and the
//! transferability bound.
//!
//! Under the 0/1 loss and an exact oracle, replacing predictions on the
//! annotated set `A` by oracle labels removes exactly the mistakes made on `A`:
//!
//! ```text
//! ε_T(h_A) = ε_T(h) − b·π,   b = |A| / n,   π = #{x ∈ A : h(x) ≠ y} / |A|
//! ```
//!
//! [`check_naive_identity`] verifies this in exact rational arithmetic. The bound
//! `ε_T(h_A) ≤ (1/(bπ) − 1)(ε_S(h) + 8τ + η)` involves a supremum (`τ`) and an
//! infimum (`η`) over function classes; both are approximated by training small
//! networks, so the bound is reported with its slack rather than asserted.

use num_rational::Ratio;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::active::ActiveSet;
use crate::error::{Error, Result};
use crate::nn::{sgd_step, Activation, DenseNet, GradientTape};
use crate::scalar::{argmax, one_hot, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskLoss {
    /// `‖h(x) − y‖²` with one-hot `y`.
    L2,
    /// `1[argmax h(x) ≠ y]`.
    ZeroOne,
}

/// Mean loss of `predictions` against class labels.
pub fn risk<T: Scalar>(predictions: &[Vec<T>], labels: &[usize], loss: RiskLoss) -> Result<T> {
    if predictions.is_empty() {
        return Err(Error::contract("risk over an empty dataset"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::contract("predictions and labels differ in length"));
    }
    let total = predictions
        .iter()
        .zip(labels)
        .map(|(p, &y)| match loss {
            RiskLoss::L2 => p
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let t = if i == y { T::one() } else { T::zero() };
                    (v - t) * (v - t)
                })
                .sum(),
            RiskLoss::ZeroOne => {
                if argmax(p) == y {
                    T::zero()
                } else {
                    T::one()
                }
            }
        })
        .fold(T::zero(), |a, b| a + b);
    Ok(total / T::lit(predictions.len() as f64))
}

/// Outcome of the exact 0/1 identity check plus the L2 sides of the inequality.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveIdentityReport {
    pub budget: Ratio<i64>,
    /// `None` for an empty active set.
    pub purity: Option<Ratio<i64>>,
    pub error_h: Ratio<i64>,
    pub error_naive: Ratio<i64>,
    /// `ε_T(h_A) = ε_T(h) − b·π` held exactly.
    pub holds: bool,
    pub l2_error_h: f64,
    pub l2_error_naive: f64,
}

/// Compares `h` with its naive active classifier on the target-train pool.
///
/// `predictions[i]` is `h` on pool sample `i`; `labels` are the oracle labels.
/// Purity is measured against `h` itself.
pub fn check_naive_identity<T: Scalar>(predictions: &[Vec<T>], set: &ActiveSet, labels: &[usize]) -> Result<NaiveIdentityReport> {
    let n = labels.len();
    if n == 0 || predictions.len() != n || set.pool_size() != n {
        return Err(Error::contract("predictions, labels and active set must cover the same pool"));
    }
    let classes = set.classes();
    let mut wrong_h = 0i64;
    let mut wrong_naive = 0i64;
    let mut wrong_in_set = 0i64;
    let mut naive_preds = Vec::with_capacity(n);
    for (i, (p, &y)) in predictions.iter().zip(labels).enumerate() {
        let miss = argmax(p) != y;
        wrong_h += i64::from(miss);
        match set.label_of(i) {
            Some(label) => {
                if label != y {
                    return Err(Error::contract("active set label disagrees with the oracle"));
                }
                wrong_in_set += i64::from(miss);
                naive_preds.push(one_hot::<T>(label, classes));
            }
            None => {
                wrong_naive += i64::from(miss);
                naive_preds.push(p.clone());
            }
        }
    }
    let n = n as i64;
    let budget = Ratio::new(set.len() as i64, n);
    let purity = (!set.is_empty()).then(|| Ratio::new(wrong_in_set, set.len() as i64));
    let error_h = Ratio::new(wrong_h, n);
    let error_naive = Ratio::new(wrong_naive, n);
    let reduction = purity.map_or(Ratio::from_integer(0), |p| budget * p);
    Ok(NaiveIdentityReport {
        budget,
        purity,
        error_h,
        error_naive,
        holds: error_naive == error_h - reduction,
        l2_error_h: risk(predictions, labels, RiskLoss::L2)?.as_f64(),
        l2_error_naive: risk(&naive_preds, labels, RiskLoss::L2)?.as_f64(),
    })
}

/// Training settings for the `τ` critic and the `η` head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSettings {
    pub critic_hidden: usize,
    pub critic_steps: usize,
    pub critic_lr: f64,
    pub eta_steps: usize,
    pub eta_lr: f64,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        EstimatorSettings {
            critic_hidden: 64,
            critic_steps: 500,
            critic_lr: 0.01,
            eta_steps: 500,
            eta_lr: 0.5,
        }
    }
}

fn critic_objective<T: Scalar>(
    critic: &DenseNet<T>,
    target_z: &[Vec<T>],
    target_labels: &[Vec<T>],
    source_z: &[Vec<T>],
    source_labels: &[Vec<T>],
    tape: Option<&mut GradientTape<T>>,
) -> Result<T> {
    let mut tape = tape;
    let mut value = T::zero();
    for (zs, ys, sign) in [(target_z, target_labels, T::one()), (source_z, source_labels, -T::one())] {
        let w = sign / T::lit(zs.len() as f64);
        for (z, y) in zs.iter().zip(ys) {
            let trace = critic.forward_traced(z)?;
            value += w * crate::scalar::dot(trace.output(), y);
            if let Some(t) = tape.as_deref_mut() {
                // descent on −objective
                let up: Vec<T> = y.iter().map(|&v| -w * v).collect();
                critic.backward(&trace, &up, t)?;
            }
        }
    }
    Ok(value)
}

/// Lower estimate of `τ = sup_f { E_T[h_A·f(z)] − E_S[y·f(z)] }` over critics
/// `Z → [−1, 1]^c`, by full-batch gradient ascent on a one-hidden-layer tanh
/// network. Returns the best objective seen, so a larger budget never lowers it.
pub fn estimate_tau<T: Scalar, R: Rng + ?Sized>(
    target_z: &[Vec<T>],
    target_labels: &[Vec<T>],
    source_z: &[Vec<T>],
    source_labels: &[Vec<T>],
    settings: &EstimatorSettings,
    rng: &mut R,
) -> Result<T> {
    if target_z.is_empty() || source_z.is_empty() {
        return Err(Error::contract("tau estimate needs source and target samples"));
    }
    if target_z.len() != target_labels.len() || source_z.len() != source_labels.len() {
        return Err(Error::contract("representations and labels differ in length"));
    }
    let d = target_z[0].len();
    let c = target_labels[0].len();
    let mut critic = DenseNet::mlp(&[d, settings.critic_hidden, c], Activation::Relu, Activation::Tanh, rng)?;
    let mut tape = GradientTape::for_net(&critic);
    let lr = T::lit(settings.critic_lr);
    let mut best = T::neg_infinity();
    for step in 0..=settings.critic_steps {
        let train = step < settings.critic_steps;
        let v = critic_objective(&critic, target_z, target_labels, source_z, source_labels, train.then_some(&mut tape))?;
        if !v.is_finite() {
            return Err(Error::numeric("tau critic objective", None));
        }
        best = best.max(v);
        if train {
            sgd_step(&mut critic, &mut tape, lr)?;
        }
    }
    Ok(best)
}

/// Upper estimate of `η = inf_f ε_T(f∘φ)`: L2 risk of a linear softmax head
/// trained by cross-entropy on frozen target representations (best iterate).
pub fn estimate_eta<T: Scalar, R: Rng + ?Sized>(
    target_z: &[Vec<T>],
    labels: &[usize],
    classes: usize,
    settings: &EstimatorSettings,
    rng: &mut R,
) -> Result<T> {
    if target_z.is_empty() || target_z.len() != labels.len() {
        return Err(Error::contract("eta estimate needs labeled target representations"));
    }
    let d = target_z[0].len();
    let mut head = DenseNet::mlp(&[d, classes], Activation::Identity, Activation::Softmax, rng)?;
    let mut tape = GradientTape::for_net(&head);
    let lr = T::lit(settings.eta_lr);
    let ys: Vec<Vec<T>> = labels.iter().map(|&l| one_hot(l, classes)).collect();
    let w = T::one() / T::lit(target_z.len() as f64);
    let mut best = T::infinity();
    for step in 0..=settings.eta_steps {
        let preds = target_z.iter().map(|z| head.forward(z)).collect::<Result<Vec<_>>>()?;
        best = best.min(risk(&preds, labels, RiskLoss::L2)?);
        if step == settings.eta_steps {
            break;
        }
        for (z, y) in target_z.iter().zip(&ys) {
            crate::losses::ce_head(&head, z, y, Some(&mut tape), w)?;
        }
        sgd_step(&mut head, &mut tape, lr)?;
    }
    Ok(best)
}

/// Everything needed to evaluate the bound at one point of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub budget: f64,
    pub purity: f64,
    /// L2 risks.
    pub source_error: f64,
    pub target_error: f64,
    pub naive_target_error: f64,
    /// 0/1 risks.
    pub target_error_01: f64,
    pub naive_target_error_01: f64,
    pub tau_hat: f64,
    pub eta_hat: f64,
    pub identity_holds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    #[serde(flatten)]
    pub inputs: BoundInputs,
    /// `(1/(bπ) − 1)(ε_S + 8τ̂ + η̂)`; infinite when `bπ = 0`.
    pub bound_rhs: f64,
    /// `bound_rhs − ε_T(h_A)` under L2.
    pub bound_slack: f64,
    /// `β = 1 − bπ/ε_T(h)` (L2) falls outside `[0, 1]`.
    pub beta_out_of_range: bool,
}

pub fn evaluate_bound(inputs: BoundInputs) -> BoundReport {
    let bp = inputs.budget * inputs.purity;
    let rhs = if bp > 0.0 {
        (1.0 / bp - 1.0) * (inputs.source_error + 8.0 * inputs.tau_hat + inputs.eta_hat)
    } else {
        f64::INFINITY
    };
    let beta = 1.0 - bp / inputs.target_error;
    BoundReport {
        inputs,
        bound_rhs: rhs,
        bound_slack: rhs - inputs.naive_target_error,
        beta_out_of_range: !(0.0..=1.0).contains(&beta),
    }
}
