//! Stochastic adversarial gradient embeddings.
//!
//! For a target sample with representation `z`, the class-level discriminator
//! gives one gradient per class, `g^i = −∂ log 𝖽(z)_i / ∂z`. Weighted by the
//! classifier's prediction `h(x)`, these rows form a discrete random vector whose
//! mean `E_h[g]` is the update the sample contributes before annotation. Each row
//! is then corrected by a *positive* orthogonal projection against that mean:
//!
//! ```text
//! g̃^i = g^i − (|g^i · E| / ‖E‖²) · E
//! ```
//!
//! so a row aligned with `E` vanishes and a row opposed to it doubles. The
//! embedding stacks `√h_i · g̃^i`; its norm is `(E_h‖g̃‖²)^{1/2}` and Euclidean
//! distance between embeddings is a proper metric, which the greedy selection
//! in [`diverse_sage_select`] uses to pick high-norm, mutually distant samples.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::PROB_CLAMP;
use crate::nn::DenseNet;
use crate::scalar::{dot, norm_sq, Scalar};

/// Below this norm the mean gradient has no usable direction and rows are left unprojected.
pub const DEGENERATE_MEAN_NORM: f64 = 1e-12;

/// Per-sample class-conditional adversarial gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticAdvGradient<T> {
    /// `rows[i] = −∂ log 𝖽(z)_i / ∂z`, `c` rows of length `d`.
    pub rows: Vec<Vec<T>>,
    /// Classifier prediction `h(x)` used as the probability of each row.
    pub probs: Vec<T>,
    /// Number of discriminator outputs that hit the probability clamp.
    pub clamped: usize,
}

impl<T: Scalar> StochasticAdvGradient<T> {
    pub fn new(rows: Vec<Vec<T>>, probs: Vec<T>) -> Result<Self> {
        check_rows(&rows, &probs)?;
        Ok(StochasticAdvGradient { rows, probs, clamped: 0 })
    }

    /// `E_h[g] = Σ_i h_i · g^i`.
    pub fn expected(&self) -> Vec<T> {
        expected_row(&self.rows, &self.probs)
    }

    pub fn project(&self) -> Vec<Vec<T>> {
        positive_projection(&self.rows, &self.probs).expect("rows validated at construction")
    }

    /// Projection followed by the embedding.
    pub fn embed(&self) -> SageVector<T> {
        sage_embed(&self.project(), &self.probs).expect("rows validated at construction")
    }
}

fn check_rows<T: Scalar>(rows: &[Vec<T>], probs: &[T]) -> Result<()> {
    if rows.is_empty() || rows.len() != probs.len() {
        return Err(Error::contract(format!(
            "{} gradient rows for {} class probabilities",
            rows.len(),
            probs.len()
        )));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::contract("gradient rows differ in length"));
    }
    if probs.iter().any(|&p| !(p >= T::zero())) {
        return Err(Error::contract("class probabilities must be nonnegative"));
    }
    Ok(())
}

fn expected_row<T: Scalar>(rows: &[Vec<T>], probs: &[T]) -> Vec<T> {
    let mut e = vec![T::zero(); rows[0].len()];
    for (row, &p) in rows.iter().zip(probs) {
        e.iter_mut().zip(row).for_each(|(a, &g)| *a += p * g);
    }
    e
}

/// Computes `g^i = −∂ log 𝖽(z)_i / ∂z` at `z = φ(x)` with one input-gradient pass
/// per class, together with `h(x) = f(z)`. Network parameters and tapes are untouched.
pub fn adversarial_gradient<T: Scalar>(
    features: &DenseNet<T>,
    classifier: &DenseNet<T>,
    class_disc: &DenseNet<T>,
    x: &[T],
) -> Result<StochasticAdvGradient<T>> {
    let z = features.forward(x)?;
    let probs = classifier.forward(&z)?;
    if class_disc.output_dim() != probs.len() {
        return Err(Error::contract("discriminator and classifier disagree on the class count"));
    }
    let trace = class_disc.forward_traced(&z)?;
    let mut clamped = 0;
    let mut rows = Vec::with_capacity(probs.len());
    let mut upstream = vec![T::zero(); probs.len()];
    for i in 0..probs.len() {
        let d = trace.output()[i];
        let lo = T::lit(PROB_CLAMP);
        let denom = if d < lo {
            clamped += 1;
            lo
        } else {
            d
        };
        upstream.fill(T::zero());
        upstream[i] = -T::one() / denom;
        rows.push(class_disc.input_gradient(&trace, &upstream)?);
    }
    Ok(StochasticAdvGradient { rows, probs, clamped })
}

/// Row-wise positive orthogonal projection against `E = Σ_i probs_i · rows_i`.
///
/// Each row gets its own coefficient `λ_i = |rows_i · E| / ‖E‖²`. When
/// `‖E‖ < 1e-12` the rows are returned unchanged.
pub fn positive_projection<T: Scalar>(rows: &[Vec<T>], probs: &[T]) -> Result<Vec<Vec<T>>> {
    check_rows(rows, probs)?;
    let e = expected_row(rows, probs);
    let e_sq = norm_sq(&e);
    if e_sq.sqrt() < T::lit(DEGENERATE_MEAN_NORM) {
        return Ok(rows.to_vec());
    }
    Ok(rows
        .iter()
        .map(|row| {
            let lambda = dot(row, &e).abs() / e_sq;
            row.iter().zip(&e).map(|(&g, &m)| g - lambda * m).collect()
        })
        .collect())
}

/// Flattened embedding with blocks `√h_i · g̃^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SageVector<T>(Vec<T>);

impl<T: Scalar> SageVector<T> {
    pub fn from_vec(v: Vec<T>) -> Self {
        SageVector(v)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> T {
        norm_sq(&self.0).sqrt()
    }
}

pub fn sage_embed<T: Scalar>(projected: &[Vec<T>], probs: &[T]) -> Result<SageVector<T>> {
    check_rows(projected, probs)?;
    let mut out = Vec::with_capacity(projected.len() * projected[0].len());
    for (row, &p) in projected.iter().zip(probs) {
        let s = p.sqrt();
        out.extend(row.iter().map(|&g| s * g));
    }
    Ok(SageVector(out))
}

/// `Δ_h(a, b) = ‖a − b‖`.
pub fn sage_distance<T: Scalar>(a: &SageVector<T>, b: &SageVector<T>) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "embedding dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.0
        .iter()
        .zip(&b.0)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt())
}

/// Greedy farthest-first selection over embeddings.
///
/// The first pick maximizes the embedding norm; every further pick maximizes
/// the minimum distance to everything picked so far. Ties go to the lowest
/// index. Returns positions into `pool`, in pick order.
pub fn diverse_sage_select<T: Scalar>(pool: &[SageVector<T>], budget: usize) -> Result<Vec<usize>> {
    if budget > pool.len() {
        return Err(Error::contract(format!(
            "budget {budget} exceeds pool size {}",
            pool.len()
        )));
    }
    if budget == 0 {
        return Ok(Vec::new());
    }
    let mut first = 0;
    let mut best = pool[0].norm();
    for (i, v) in pool.iter().enumerate().skip(1) {
        let n = v.norm();
        if n > best {
            best = n;
            first = i;
        }
    }
    let mut chosen = vec![false; pool.len()];
    let mut picks = Vec::with_capacity(budget);
    let mut min_dist = vec![T::infinity(); pool.len()];
    let mut last = first;
    chosen[first] = true;
    picks.push(first);
    while picks.len() < budget {
        let mut next: Option<(usize, T)> = None;
        for i in 0..pool.len() {
            if chosen[i] {
                continue;
            }
            let d = sage_distance(&pool[i], &pool[last])?;
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if next.map_or(true, |(_, b)| min_dist[i] > b) {
                next = Some((i, min_dist[i]));
            }
        }
        let (i, _) = next.expect("budget not larger than pool");
        chosen[i] = true;
        picks.push(i);
        last = i;
    }
    Ok(picks)
}

/// Indices of the `budget` largest embedding norms (ties to the lowest index),
/// without the diversity loop.
pub fn norm_only_select<T: Scalar>(pool: &[SageVector<T>], budget: usize) -> Result<Vec<usize>> {
    let norms: Vec<T> = pool.iter().map(SageVector::norm).collect();
    crate::baselines::top_k(&norms, budget)
}

/// Embeddings for every sample in `xs`, plus the total clamp count.
pub fn embed_pool<T: Scalar>(
    features: &DenseNet<T>,
    classifier: &DenseNet<T>,
    class_disc: &DenseNet<T>,
    xs: &[&[T]],
) -> Result<(Vec<SageVector<T>>, usize)> {
    let mut clamped = 0;
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let g = adversarial_gradient(features, classifier, class_disc, x)?;
        clamped += g.clamped;
        out.push(g.embed());
    }
    Ok((out, clamped))
}

/// Writes `pool_index,norm,selected_flag` rows for offline inspection.
pub fn write_embedding_dump<T: Scalar>(
    path: &Path,
    pool_indices: &[usize],
    embeddings: &[SageVector<T>],
    selected: &[usize],
) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "pool_index,norm,selected_flag").unwrap();
    for (&idx, e) in pool_indices.iter().zip(embeddings) {
        let flag = u8::from(selected.contains(&idx));
        writeln!(buf, "{idx},{:?},{flag}", e.norm().as_f64()).unwrap();
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
