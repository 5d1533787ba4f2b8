//! Oracle annotation, active classifiers and the training steps that consume them.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{ce_head, disc_head, DiscSide};
use crate::model::{BundleTapes, ModelBundle};
use crate::nn::{reverse_gradient, sgd_step, DenseNet, GradientTape};
use crate::scalar::{all_finite, argmax, one_hot, Scalar};

/// Simulated annotator backed by held-out target-train labels.
#[derive(Debug, Clone)]
pub struct Oracle {
    labels: Vec<usize>,
    classes: usize,
}

impl Oracle {
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.iter().any(|&l| l >= classes) {
            return Err(Error::contract("oracle label out of range"));
        }
        Ok(Oracle { labels, classes })
    }

    pub fn pool_size(&self) -> usize {
        self.labels.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn label(&self, pool_index: usize) -> Result<usize> {
        self.labels.get(pool_index).copied().ok_or_else(|| {
            Error::contract(format!(
                "pool index {pool_index} outside target-train pool of {}",
                self.labels.len()
            ))
        })
    }

    /// One-hot ground truth for a target-train sample.
    pub fn annotate<T: Scalar>(&self, pool_index: usize) -> Result<Vec<T>> {
        Ok(one_hot(self.label(pool_index)?, self.classes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveEntry {
    pub pool_index: usize,
    /// Oracle class.
    pub label: usize,
    pub round: usize,
    /// Argmax of the model's prediction when the sample was selected.
    pub pre_prediction: usize,
}

/// Annotated target-train samples in annotation order.
#[derive(Debug, Clone, Default)]
pub struct ActiveSet {
    entries: Vec<ActiveEntry>,
    position: HashMap<usize, usize>,
    pool_size: usize,
    classes: usize,
}

impl ActiveSet {
    pub fn new(pool_size: usize, classes: usize) -> Self {
        ActiveSet {
            entries: Vec::new(),
            position: HashMap::new(),
            pool_size,
            classes,
        }
    }

    pub fn push(&mut self, entry: ActiveEntry) -> Result<()> {
        if entry.pool_index >= self.pool_size {
            return Err(Error::contract(format!("pool index {} out of range", entry.pool_index)));
        }
        if entry.label >= self.classes || entry.pre_prediction >= self.classes {
            return Err(Error::contract("class index out of range"));
        }
        if self.position.contains_key(&entry.pool_index) {
            return Err(Error::contract(format!("sample {} is already annotated", entry.pool_index)));
        }
        if self.entries.last().is_some_and(|e| e.round > entry.round) {
            return Err(Error::contract("annotation rounds must be nondecreasing"));
        }
        self.position.insert(entry.pool_index, self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    /// Queries the oracle for `pool_index` and records the answer.
    pub fn annotate(&mut self, oracle: &Oracle, pool_index: usize, round: usize, pre_prediction: usize) -> Result<usize> {
        let label = oracle.label(pool_index)?;
        self.push(ActiveEntry {
            pool_index,
            label,
            round,
            pre_prediction,
        })?;
        Ok(label)
    }

    pub fn entries(&self) -> &[ActiveEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn contains(&self, pool_index: usize) -> bool {
        self.position.contains_key(&pool_index)
    }

    pub fn label_of(&self, pool_index: usize) -> Option<usize> {
        self.position.get(&pool_index).map(|&p| self.entries[p].label)
    }

    /// Pool indices not yet annotated, ascending.
    pub fn unannotated(&self) -> Vec<usize> {
        (0..self.pool_size).filter(|i| !self.contains(*i)).collect()
    }
}

/// Fraction of annotations whose pre-annotation prediction was wrong.
pub fn purity(set: &ActiveSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::contract("purity of an empty active set"));
    }
    let wrong = set.entries().iter().filter(|e| e.pre_prediction != e.label).count();
    Ok(wrong as f64 / set.len() as f64)
}

/// `h_A(x)`: the oracle label if annotated, otherwise `f(φ(x))`.
pub fn naive_predict<T: Scalar>(model: &ModelBundle<T>, set: &ActiveSet, x: &[T], pool_index: usize) -> Result<Vec<T>> {
    match set.label_of(pool_index) {
        Some(label) => Ok(one_hot(label, set.classes())),
        None => model.predict(x),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Naive,
    Balance,
    Inductive,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Naive, Variant::Balance, Variant::Inductive];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Naive => "naive",
            Variant::Balance => "balance",
            Variant::Inductive => "inductive",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::parse("variant", format!("unknown variant `{s}`")))
    }
}

/// The classifier `h_a` whose outputs condition the target term of the
/// transferability loss.
#[derive(Debug, Clone)]
pub struct ActiveClassifier<T> {
    variant: Variant,
    /// Own classifier head for balance and inductive; `None` for naive.
    head: Option<DenseNet<T>>,
}

impl<T: Scalar> ActiveClassifier<T> {
    pub fn naive() -> Self {
        ActiveClassifier {
            variant: Variant::Naive,
            head: None,
        }
    }

    /// Inductive classifier starting from a copy of `classifier`.
    pub fn inductive_from(classifier: &DenseNet<T>) -> Self {
        ActiveClassifier {
            variant: Variant::Inductive,
            head: Some(classifier.clone()),
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn head(&self) -> Option<&DenseNet<T>> {
        self.head.as_ref()
    }

    /// Prediction from representation `z` for a sample that is not annotated.
    pub fn predict_repr(&self, base: &DenseNet<T>, z: &[T]) -> Result<Vec<T>> {
        self.head.as_ref().unwrap_or(base).forward(z)
    }

    /// Conditioning label for pool sample `pool_index`: the oracle one-hot if
    /// annotated, the classifier's soft prediction otherwise.
    pub fn soft_label(&self, base: &DenseNet<T>, set: &ActiveSet, pool_index: usize, z: &[T]) -> Result<Vec<T>> {
        match set.label_of(pool_index) {
            Some(label) => Ok(one_hot(label, set.classes())),
            None => self.predict_repr(base, z),
        }
    }
}

/// Annotated samples as `(representation, one-hot label)` pairs under the current features.
fn annotated_reprs<T: Scalar>(features: &DenseNet<T>, set: &ActiveSet, pool_x: &[Vec<T>]) -> Result<Vec<(Vec<T>, Vec<T>)>> {
    set.entries()
        .iter()
        .map(|e| {
            let x = pool_x
                .get(e.pool_index)
                .ok_or_else(|| Error::contract("annotated index outside pool"))?;
            Ok((features.forward(x)?, one_hot(e.label, set.classes())))
        })
        .collect()
}

/// Settings for [`balance_train`].
#[derive(Debug, Clone, Copy)]
pub struct BalanceSettings<T> {
    pub gamma: T,
    pub steps: usize,
    pub lr: T,
    pub source_batch: usize,
}

/// Trains a fresh copy of `classifier` on `γ·L_c + (1 − γ)·L_A` with the
/// representation frozen. Source terms use minibatches, `L_A` the whole set.
pub fn balance_train<T: Scalar, R: Rng + ?Sized>(
    classifier: &DenseNet<T>,
    features: &DenseNet<T>,
    source_x: &[Vec<T>],
    source_y: &[usize],
    set: &ActiveSet,
    pool_x: &[Vec<T>],
    settings: BalanceSettings<T>,
    rng: &mut R,
) -> Result<ActiveClassifier<T>> {
    if set.is_empty() {
        return Err(Error::contract("balance classifier needs at least one annotation"));
    }
    let gamma = settings.gamma;
    if !(gamma > T::zero() && gamma < T::one()) {
        return Err(Error::contract(format!("balance trade-off must lie in (0, 1), got {gamma}")));
    }
    if source_x.is_empty() || source_x.len() != source_y.len() {
        return Err(Error::contract("balance training needs labeled source data"));
    }
    let source_z = source_x.iter().map(|x| features.forward(x)).collect::<Result<Vec<_>>>()?;
    let annotated = annotated_reprs(features, set, pool_x)?;
    let mut head = classifier.clone();
    let mut tape = GradientTape::for_net(&head);
    let sb = settings.source_batch.clamp(1, source_x.len());
    for _ in 0..settings.steps {
        let batch: Vec<(&[T], usize)> = rand::seq::index::sample(rng, source_z.len(), sb)
            .iter()
            .map(|i| (source_z[i].as_slice(), source_y[i]))
            .collect();
        mixed_step(&mut head, &mut tape, &batch, &annotated, gamma, settings.lr)?;
    }
    Ok(ActiveClassifier {
        variant: Variant::Balance,
        head: Some(head),
    })
}

fn mixed_step<T: Scalar>(
    head: &mut DenseNet<T>,
    tape: &mut GradientTape<T>,
    source: &[(&[T], usize)],
    annotated: &[(Vec<T>, Vec<T>)],
    gamma: T,
    lr: T,
) -> Result<()> {
    let classes = head.output_dim();
    let w_src = gamma / T::lit(source.len() as f64);
    let w_act = (T::one() - gamma) / T::lit(annotated.len() as f64);
    for (z, y) in source {
        ce_head(head, z, &one_hot(*y, classes), Some(tape), w_src)?;
    }
    for (z, y) in annotated {
        ce_head(head, z, y, Some(tape), w_act)?;
    }
    sgd_step(head, tape, lr)
}

/// One step of the balance objective on the classifier's own head, on the
/// current representation, so the head follows `φ` between retrainings.
/// `source` holds raw source inputs with their labels.
pub fn balance_step<T: Scalar>(
    active: &mut ActiveClassifier<T>,
    features: &DenseNet<T>,
    source: &[(&[T], usize)],
    set: &ActiveSet,
    pool_x: &[Vec<T>],
    gamma: T,
    lr: T,
) -> Result<()> {
    if set.is_empty() || source.is_empty() {
        return Err(Error::contract("balance step needs annotations and a source batch"));
    }
    if active.variant != Variant::Balance {
        return Err(Error::contract("balance step on a non-balance classifier"));
    }
    let head = active.head.as_mut().ok_or_else(|| Error::contract("balance classifier without a head"))?;
    let source_z = source
        .iter()
        .map(|(x, y)| Ok((features.forward(x)?, *y)))
        .collect::<Result<Vec<_>>>()?;
    let batch: Vec<(&[T], usize)> = source_z.iter().map(|(z, y)| (z.as_slice(), *y)).collect();
    let annotated = annotated_reprs(features, set, pool_x)?;
    let mut tape = GradientTape::for_net(head);
    mixed_step(head, &mut tape, &batch, &annotated, gamma, lr)
}

/// `L_A(h) = E_{x∈A}[−Oracle(x)·log h(x)]` for a classifier head on frozen features.
pub fn annotated_loss<T: Scalar>(head: &DenseNet<T>, features: &DenseNet<T>, set: &ActiveSet, pool_x: &[Vec<T>]) -> Result<T> {
    if set.is_empty() {
        return Err(Error::contract("annotated loss of an empty active set"));
    }
    let annotated = annotated_reprs(features, set, pool_x)?;
    let n = T::lit(annotated.len() as f64);
    let mut total = T::zero();
    for (z, y) in &annotated {
        total += ce_head(head, z, y, None, T::one())?.0;
    }
    Ok(total / n)
}

/// One gradient step `h ← h − lr·∇_h L_A(h)` on the active classifier's own
/// head; the representation is frozen.
pub fn inductive_step<T: Scalar>(
    active: &mut ActiveClassifier<T>,
    features: &DenseNet<T>,
    set: &ActiveSet,
    pool_x: &[Vec<T>],
    lr: T,
) -> Result<()> {
    if set.is_empty() {
        return Err(Error::contract("inductive step needs at least one annotation"));
    }
    let head = active
        .head
        .as_mut()
        .ok_or_else(|| Error::contract("inductive step on a classifier without its own head"))?;
    let annotated = annotated_reprs(features, set, pool_x)?;
    let w = T::one() / T::lit(annotated.len() as f64);
    let mut tape = GradientTape::for_net(head);
    for (z, y) in &annotated {
        ce_head(head, z, y, Some(&mut tape), w)?;
    }
    sgd_step(head, &mut tape, lr)
}

/// Losses observed during one transfer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses<T> {
    pub classification: T,
    pub adversarial: T,
}

fn tapes_finite<T: Scalar>(tapes: &[&GradientTape<T>]) -> bool {
    tapes.iter().all(|t| all_finite(&t.flatten()))
}

/// One joint update of `(φ, f, 𝖽)`.
///
/// `f` and `φ` descend the source cross-entropy; `𝖽` ascends the
/// transferability loss and `φ` receives its gradient through a reversal layer
/// with weight `lambda`. `target_y` holds the active labels `h_a(x)`.
///
/// If any gradient is non-finite no network is updated and a numeric error is returned.
#[allow(clippy::too_many_arguments)]
pub fn transfer_step<T: Scalar>(
    model: &mut ModelBundle<T>,
    tapes: &mut BundleTapes<T>,
    source_x: &[&[T]],
    source_y: &[Vec<T>],
    target_x: &[&[T]],
    target_y: &[Vec<T>],
    lambda: T,
    lr: T,
) -> Result<StepLosses<T>> {
    if source_x.is_empty() || target_x.is_empty() {
        return Err(Error::contract("transfer step needs nonempty source and target batches"));
    }
    if source_x.len() != source_y.len() || target_x.len() != target_y.len() {
        return Err(Error::contract("batch inputs and labels differ in length"));
    }
    tapes.clear();
    let ns = T::lit(source_x.len() as f64);
    let nt = T::lit(target_x.len() as f64);
    let mut ce = T::zero();
    let mut adv = T::zero();
    let mut adv_t = T::zero();
    for (x, y) in source_x.iter().zip(source_y) {
        let trace = model.features.forward_traced(x)?;
        let z = trace.output();
        let (l, mut dz) = ce_head(&model.classifier, z, y, Some(&mut tapes.classifier), T::one() / ns)?;
        let (v, mut dd) = disc_head(&model.class_disc, z, y, DiscSide::Source, Some(&mut tapes.class_disc), -T::one() / ns)?;
        reverse_gradient(&mut dd, lambda);
        dz.iter_mut().zip(&dd).for_each(|(a, &b)| *a += b);
        model.features.backward(&trace, &dz, &mut tapes.features)?;
        ce += l;
        adv += v;
    }
    for (x, y) in target_x.iter().zip(target_y) {
        let trace = model.features.forward_traced(x)?;
        let (v, mut dd) = disc_head(&model.class_disc, trace.output(), y, DiscSide::Target, Some(&mut tapes.class_disc), -T::one() / nt)?;
        reverse_gradient(&mut dd, lambda);
        model.features.backward(&trace, &dd, &mut tapes.features)?;
        adv_t += v;
    }
    if !tapes_finite(&[&tapes.features, &tapes.classifier, &tapes.class_disc]) {
        tapes.clear();
        return Err(Error::numeric("transfer step refused: non-finite gradient", None));
    }
    sgd_step(&mut model.features, &mut tapes.features, lr)?;
    sgd_step(&mut model.classifier, &mut tapes.classifier, lr)?;
    sgd_step(&mut model.class_disc, &mut tapes.class_disc, lr)?;
    Ok(StepLosses {
        classification: ce / ns,
        adversarial: adv / ns + adv_t / nt,
    })
}

/// Domain-adversarial (DANN) step used by the AADA baseline: cross-entropy on
/// every labeled sample (source plus annotated target) and the binary
/// `L_inv` game through a reversal layer.
#[allow(clippy::too_many_arguments)]
pub fn domain_adversarial_step<T: Scalar>(
    model: &mut ModelBundle<T>,
    tapes: &mut BundleTapes<T>,
    labeled_x: &[&[T]],
    labeled_y: &[Vec<T>],
    source_x: &[&[T]],
    target_x: &[&[T]],
    lambda: T,
    lr: T,
) -> Result<StepLosses<T>> {
    if labeled_x.is_empty() || source_x.is_empty() || target_x.is_empty() {
        return Err(Error::contract("domain-adversarial step needs nonempty batches"));
    }
    tapes.clear();
    let nl = T::lit(labeled_x.len() as f64);
    let mut ce = T::zero();
    for (x, y) in labeled_x.iter().zip(labeled_y) {
        let trace = model.features.forward_traced(x)?;
        let (l, dz) = ce_head(&model.classifier, trace.output(), y, Some(&mut tapes.classifier), T::one() / nl)?;
        model.features.backward(&trace, &dz, &mut tapes.features)?;
        ce += l;
    }
    let mut adv = T::zero();
    let one = [T::one()];
    for (xs, side) in [(source_x, DiscSide::Source), (target_x, DiscSide::Target)] {
        let n = T::lit(xs.len() as f64);
        let mut part = T::zero();
        for x in xs {
            let trace = model.features.forward_traced(x)?;
            let (v, mut dd) = disc_head(&model.domain_disc, trace.output(), &one, side, Some(&mut tapes.domain_disc), -T::one() / n)?;
            reverse_gradient(&mut dd, lambda);
            model.features.backward(&trace, &dd, &mut tapes.features)?;
            part += v;
        }
        adv += part / n;
    }
    if !tapes_finite(&[&tapes.features, &tapes.classifier, &tapes.domain_disc]) {
        tapes.clear();
        return Err(Error::numeric("domain-adversarial step refused: non-finite gradient", None));
    }
    sgd_step(&mut model.features, &mut tapes.features, lr)?;
    sgd_step(&mut model.classifier, &mut tapes.classifier, lr)?;
    sgd_step(&mut model.domain_disc, &mut tapes.domain_disc, lr)?;
    Ok(StepLosses {
        classification: ce / nl,
        adversarial: adv,
    })
}

/// Target sub-batch indices: while fewer annotations than `batch` exist, all of
/// them plus uniformly drawn unannotated samples; afterwards a uniform draw over
/// the whole pool.
pub fn compose_target_batch<R: Rng + ?Sized>(set: &ActiveSet, batch: usize, rng: &mut R) -> Vec<usize> {
    let pool = set.pool_size();
    let batch = batch.min(pool);
    if set.len() >= batch {
        return rand::seq::index::sample(rng, pool, batch).into_vec();
    }
    let mut out: Vec<usize> = set.entries().iter().map(|e| e.pool_index).collect();
    let rest = set.unannotated();
    let need = batch - out.len();
    out.extend(rand::seq::index::sample(rng, rest.len(), need).into_iter().map(|i| rest[i]));
    out
}

/// 0/1 accuracy of `f(φ(x))`.
pub fn accuracy<T: Scalar>(model: &ModelBundle<T>, xs: &[Vec<T>], ys: &[usize]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::contract("accuracy over an empty set"));
    }
    let mut hits = 0usize;
    for (x, &y) in xs.iter().zip(ys) {
        if argmax(&model.predict(x)?) == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / xs.len() as f64)
}
