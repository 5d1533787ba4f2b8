//! Source cross-entropy, the binary domain-adversarial loss, the class-level
//! transferability loss and prediction entropy.
//!
//! Every loss is a batch mean. Probabilities are clamped to `[1e-12, 1 − 1e-12]`
//! inside logarithms; a clamped entry contributes no gradient.
//!
//! The batch-level functions below compose per-sample "heads" that start from a
//! representation `z`. Training code uses the heads directly so that a single
//! feature-extractor pass serves several losses.

use crate::error::{Error, Result};
use crate::nn::{DenseNet, GradientTape};
use crate::scalar::Scalar;

pub const PROB_CLAMP: f64 = 1e-12;
const LABEL_SUM_TOL: f64 = 1e-8;

#[inline]
fn clamp_prob<T: Scalar>(p: T) -> (T, bool) {
    let lo = T::lit(PROB_CLAMP);
    let hi = T::one() - lo;
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

/// Checks that a row is a probability vector (nonnegative, sums to 1 ± 1e-8).
pub fn check_soft_label<T: Scalar>(row: &[T], classes: usize) -> Result<()> {
    if row.len() != classes {
        return Err(Error::contract(format!("label has {} entries, expected {classes}", row.len())));
    }
    let sum: T = row.iter().copied().sum();
    if row.iter().any(|&v| !(v >= T::zero())) || (sum - T::one()).abs() > T::lit(LABEL_SUM_TOL) {
        return Err(Error::contract(format!("label row does not sum to one (sum = {sum})")));
    }
    Ok(())
}

pub fn check_one_hot<T: Scalar>(row: &[T], classes: usize) -> Result<()> {
    let ones = row.iter().filter(|&&v| v == T::one()).count();
    let zeros = row.iter().filter(|&&v| v == T::zero()).count();
    if row.len() != classes || ones != 1 || zeros != classes - 1 {
        return Err(Error::contract("label is not one-hot"));
    }
    Ok(())
}

/// Borrowed view of one training batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchView<'a, T> {
    pub source_x: &'a [Vec<T>],
    /// One-hot source labels.
    pub source_y: &'a [Vec<T>],
    pub target_x: &'a [Vec<T>],
    /// Soft (or oracle one-hot) labels conditioning the target term.
    pub target_y: &'a [Vec<T>],
}

impl<'a, T: Scalar> BatchView<'a, T> {
    pub fn new(
        source_x: &'a [Vec<T>],
        source_y: &'a [Vec<T>],
        target_x: &'a [Vec<T>],
        target_y: &'a [Vec<T>],
        classes: usize,
    ) -> Result<Self> {
        if source_x.is_empty() || target_x.is_empty() {
            return Err(Error::contract("source and target batches must be nonempty"));
        }
        if source_x.len() != source_y.len() || target_x.len() != target_y.len() {
            return Err(Error::contract("batch inputs and labels differ in length"));
        }
        for y in source_y {
            check_one_hot(y, classes)?;
        }
        for y in target_y {
            check_soft_label(y, classes)?;
        }
        Ok(BatchView {
            source_x,
            source_y,
            target_x,
            target_y,
        })
    }
}

/// `−y·log f(z)` for one sample.
///
/// Accumulates `weight · ∂loss/∂θ_f` into `tape` (when given) and returns the
/// loss together with `weight · ∂loss/∂z`.
pub fn ce_head<T: Scalar>(
    classifier: &DenseNet<T>,
    z: &[T],
    y: &[T],
    tape: Option<&mut GradientTape<T>>,
    weight: T,
) -> Result<(T, Vec<T>)> {
    let trace = classifier.forward_traced(z)?;
    let p = trace.output();
    let mut loss = T::zero();
    let mut upstream = vec![T::zero(); p.len()];
    for ((&pi, &yi), u) in p.iter().zip(y).zip(upstream.iter_mut()) {
        if yi == T::zero() {
            continue;
        }
        let (c, clamped) = clamp_prob(pi);
        loss -= yi * c.ln();
        if !clamped {
            *u = -weight * yi / c;
        }
    }
    let dz = match tape {
        Some(t) => classifier.backward(&trace, &upstream, t)?,
        None => classifier.input_gradient(&trace, &upstream)?,
    };
    Ok((loss, dz))
}

/// Which side of a discriminator log-likelihood a sample contributes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscSide {
    /// `Σ_i c_i·log(1 − d(z)_i)`: source samples.
    Source,
    /// `Σ_i c_i·log d(z)_i`: target samples.
    Target,
}

/// Weighted discriminator log-likelihood for one sample. Same gradient
/// convention as [`ce_head`]: value is returned unweighted, gradients carry `weight`.
pub fn disc_head<T: Scalar>(
    disc: &DenseNet<T>,
    z: &[T],
    coeffs: &[T],
    side: DiscSide,
    tape: Option<&mut GradientTape<T>>,
    weight: T,
) -> Result<(T, Vec<T>)> {
    let trace = disc.forward_traced(z)?;
    let d = trace.output();
    if coeffs.len() != d.len() {
        return Err(Error::contract(format!(
            "label has {} entries, discriminator outputs {}",
            coeffs.len(),
            d.len()
        )));
    }
    let mut value = T::zero();
    let mut upstream = vec![T::zero(); d.len()];
    for ((&di, &ci), u) in d.iter().zip(coeffs).zip(upstream.iter_mut()) {
        if ci == T::zero() {
            continue;
        }
        match side {
            DiscSide::Target => {
                let (c, clamped) = clamp_prob(di);
                value += ci * c.ln();
                if !clamped {
                    *u = weight * ci / c;
                }
            }
            DiscSide::Source => {
                let (c, clamped) = clamp_prob(T::one() - di);
                value += ci * c.ln();
                if !clamped {
                    *u = -weight * ci / c;
                }
            }
        }
    }
    let dz = match tape {
        Some(t) => disc.backward(&trace, &upstream, t)?,
        None => disc.input_gradient(&trace, &upstream)?,
    };
    Ok((value, dz))
}

/// Tapes receiving the gradients of an adversarial loss.
///
/// The discriminator tape receives `∇(−L)` so that a descent step is an ascent
/// on `L`; the feature tape receives the gradient-reversed signal `λ·∇_φ L`.
pub struct AdversarialTapes<'a, T> {
    pub features: &'a mut GradientTape<T>,
    pub disc: &'a mut GradientTape<T>,
    pub lambda: T,
}

/// Source cross-entropy `E_S[−y·log f(φ(x))]`. Tapes receive the plain gradient.
pub fn cross_entropy<T: Scalar>(
    features: &DenseNet<T>,
    classifier: &DenseNet<T>,
    xs: &[Vec<T>],
    ys: &[Vec<T>],
    tapes: Option<(&mut GradientTape<T>, &mut GradientTape<T>)>,
) -> Result<T> {
    if xs.is_empty() {
        return Err(Error::contract("cross-entropy over an empty batch"));
    }
    if xs.len() != ys.len() {
        return Err(Error::contract("batch inputs and labels differ in length"));
    }
    let classes = classifier.output_dim();
    let weight = T::one() / T::lit(xs.len() as f64);
    let mut total = T::zero();
    match tapes {
        None => {
            for (x, y) in xs.iter().zip(ys) {
                check_one_hot(y, classes)?;
                let z = features.forward(x)?;
                total += ce_head(classifier, &z, y, None, weight)?.0;
            }
        }
        Some((tf, tc)) => {
            for (x, y) in xs.iter().zip(ys) {
                check_one_hot(y, classes)?;
                let trace = features.forward_traced(x)?;
                let (l, dz) = ce_head(classifier, trace.output(), y, Some(tc), weight)?;
                features.backward(&trace, &dz, tf)?;
                total += l;
            }
        }
    }
    Ok(total * weight)
}

fn adversarial<T: Scalar>(
    features: &DenseNet<T>,
    disc: &DenseNet<T>,
    source: (&[Vec<T>], &dyn Fn(usize) -> Vec<T>),
    target: (&[Vec<T>], &dyn Fn(usize) -> Vec<T>),
    mut tapes: Option<AdversarialTapes<'_, T>>,
) -> Result<T> {
    let mut total = T::zero();
    for (side, (xs, coeffs)) in [(DiscSide::Source, source), (DiscSide::Target, target)] {
        let n = T::lit(xs.len() as f64);
        let mut part = T::zero();
        for (i, x) in xs.iter().enumerate() {
            let c = coeffs(i);
            match tapes.as_mut() {
                None => {
                    let z = features.forward(x)?;
                    part += disc_head(disc, &z, &c, side, None, T::one())?.0;
                }
                Some(t) => {
                    let trace = features.forward_traced(x)?;
                    // discriminator descends −L
                    let (v, mut dz) = disc_head(disc, trace.output(), &c, side, Some(t.disc), -T::one() / n)?;
                    // dz currently holds ∇_z(−L)/n; the reversal layer multiplies by −λ
                    crate::nn::reverse_gradient(&mut dz, t.lambda);
                    features.backward(&trace, &dz, t.features)?;
                    part += v;
                }
            }
        }
        total += part / n;
    }
    Ok(total)
}

/// `L_inv = E_S[log(1 − d(φ(x)))] + E_T[log d(φ(x))]` for the binary domain discriminator.
pub fn domain_adversarial_loss<T: Scalar>(
    features: &DenseNet<T>,
    domain_disc: &DenseNet<T>,
    source_x: &[Vec<T>],
    target_x: &[Vec<T>],
    tapes: Option<AdversarialTapes<'_, T>>,
) -> Result<T> {
    if source_x.is_empty() || target_x.is_empty() {
        return Err(Error::contract("domain-adversarial loss needs nonempty source and target batches"));
    }
    if domain_disc.output_dim() != 1 {
        return Err(Error::contract("domain discriminator must have a single output"));
    }
    let one = |_: usize| vec![T::one()];
    adversarial(features, domain_disc, (source_x, &one), (target_x, &one), tapes)
}

/// `L_tsf = E_S[y·log(1 − 𝖽(φ(x)))] + E_T[ŷ·log 𝖽(φ(x))]`.
///
/// The target labels are constants: soft predictions, active-classifier outputs
/// or oracle one-hots. No gradient flows through them.
pub fn transferability_loss<T: Scalar>(
    features: &DenseNet<T>,
    class_disc: &DenseNet<T>,
    batch: &BatchView<'_, T>,
    tapes: Option<AdversarialTapes<'_, T>>,
) -> Result<T> {
    let classes = class_disc.output_dim();
    for y in batch.target_y {
        check_soft_label(y, classes)?;
    }
    let src = |i: usize| batch.source_y[i].clone();
    let tgt = |i: usize| batch.target_y[i].clone();
    adversarial(features, class_disc, (batch.source_x, &src), (batch.target_x, &tgt), tapes)
}

/// Shannon entropy `−Σ p_i log p_i` with `0·log 0 = 0`.
pub fn prediction_entropy<T: Scalar>(p: &[T]) -> T {
    p.iter()
        .filter(|&&v| v > T::zero())
        .fold(T::zero(), |acc, &v| acc - v * v.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};

    fn constant_disc(classes: usize, value: f64) -> DenseNet<f64> {
        // sigmoid(logit) = value with zero weights
        let logit = (value / (1.0 - value)).ln();
        DenseNet::new(vec![Layer::from_parts(3, classes, vec![0.0; 3 * classes], vec![logit; classes], Activation::Sigmoid).unwrap()]).unwrap()
    }

    fn identity_features() -> DenseNet<f64> {
        DenseNet::new(vec![Layer::from_parts(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![0.0; 3], Activation::Identity).unwrap()]).unwrap()
    }

    #[test]
    fn entropy_cases() {
        assert_eq!(prediction_entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!((prediction_entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
        assert!((prediction_entropy(&[0.7f64, 0.2, 0.1]) - 0.801_818_552_543_337_2).abs() < 1e-12);
    }

    #[test]
    fn uniform_prediction_cross_entropy_is_log_c() {
        let features = DenseNet::new(vec![Layer::from_parts(2, 3, vec![0.0; 6], vec![0.0; 3], Activation::Identity).unwrap()]).unwrap();
        let classifier = DenseNet::new(vec![Layer::zeros(3, 4, Activation::Softmax)]).unwrap();
        let xs = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
        let ys = vec![vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]];
        let l = cross_entropy(&features, &classifier, &xs, &ys, None).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let features = identity_features();
        // huge logit on class 1
        let classifier = DenseNet::new(vec![Layer::from_parts(3, 2, vec![0.0; 6], vec![-50.0, 50.0], Activation::Softmax).unwrap()]).unwrap();
        let l = cross_entropy(&features, &classifier, &[vec![0.1, 0.2, 0.3]], &[vec![0.0, 1.0]], None).unwrap();
        assert!(l < 1e-11);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let features = identity_features();
        let classifier = DenseNet::new(vec![Layer::zeros(3, 2, Activation::Softmax)]).unwrap();
        assert!(matches!(cross_entropy(&features, &classifier, &[], &[], None), Err(Error::Contract(_))));
        let disc = constant_disc(1, 0.5);
        assert!(domain_adversarial_loss(&features, &disc, &[], &[vec![0.0; 3]], None).is_err());
    }

    #[test]
    fn uninformative_discriminators() {
        let features = identity_features();
        let d = constant_disc(1, 0.5);
        let xs = vec![vec![0.3, 0.1, 0.0]];
        let l = domain_adversarial_loss(&features, &d, &xs, &xs, None).unwrap();
        assert!((l + 2.0 * 2f64.ln()).abs() < 1e-14);

        let disc = constant_disc(3, 0.5);
        let sy = vec![vec![0.0, 0.0, 1.0]];
        let ty = vec![vec![0.2, 0.5, 0.3]];
        let batch = BatchView::new(&xs, &sy, &xs, &ty, 3).unwrap();
        let l = transferability_loss(&features, &disc, &batch, None).unwrap();
        assert!((l + 2.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn perfect_domain_discrimination_is_near_zero() {
        let features = identity_features();
        // d(z) = σ(60·z_0): source has z_0 = −1, target z_0 = +1
        let d = DenseNet::new(vec![Layer::from_parts(3, 1, vec![60.0, 0.0, 0.0], vec![0.0], Activation::Sigmoid).unwrap()]).unwrap();
        let l = domain_adversarial_loss(&features, &d, &[vec![-1.0, 0.0, 0.0]], &[vec![1.0, 0.0, 0.0]], None).unwrap();
        assert!(l.abs() < 1e-11 && l <= 0.0);
    }

    #[test]
    fn one_hot_source_selects_single_class() {
        let features = identity_features();
        let disc = DenseNet::new(vec![Layer::from_parts(3, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.0, 0.7, 0.1, -0.2], vec![0.1, 0.0, -0.3], Activation::Sigmoid).unwrap()]).unwrap();
        let x: Vec<f64> = vec![0.5, -1.0, 2.0];
        let d = disc.forward(&x).unwrap();
        let (v, _) = disc_head(&disc, &x, &[0.0, 1.0, 0.0], DiscSide::Source, None, 1.0).unwrap();
        assert!((v - (1.0 - d[1]).ln()).abs() < 1e-15);
        let _ = features;
    }

    #[test]
    fn unnormalized_target_labels_are_rejected() {
        let features = identity_features();
        let disc = constant_disc(2, 0.3);
        let xs = vec![vec![0.0; 3]];
        let sy = vec![vec![1.0, 0.0]];
        let bad = vec![vec![0.6, 0.6]];
        let batch = BatchView { source_x: &xs, source_y: &sy, target_x: &xs, target_y: &bad };
        assert!(matches!(transferability_loss(&features, &disc, &batch, None), Err(Error::Contract(_))));
        assert!(BatchView::new(&xs, &sy, &xs, &bad, 2).is_err());
    }
}
