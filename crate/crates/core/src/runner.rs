//! Training runs and experiment orchestration.
//!
//! One run owns its model, active set and RNG and executes sequentially;
//! an experiment fans runs out over threads and merges their rows afterwards.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::active::{
    accuracy, balance_step, balance_train, compose_target_batch, domain_adversarial_step, inductive_step, purity, transfer_step,
    ActiveClassifier, ActiveSet, BalanceSettings, Oracle, Variant,
};
use crate::baselines::{aada_select, entropy_select, random_select, StrategyKind};
use crate::config::ExperimentConfig;
use crate::data::{generate_dataset, read_dataset_dir, Splits};
use crate::error::{Error, Result};
use crate::model::{Architecture, BundleTapes};
use crate::nn::grl_lambda;
use crate::report::{summarize, write_atomic, write_csv_file, MetricsRow, SummaryRow};
use crate::sage::{diverse_sage_select, embed_pool, norm_only_select, write_embedding_dump, SageVector};
use crate::scalar::{argmax, one_hot};
use crate::theory::{check_naive_identity, estimate_eta, estimate_tau, evaluate_bound, risk, BoundInputs, BoundReport, RiskLoss};
use crate::{Model, Real};

/// Per-round diagnostics that are not part of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRow {
    pub run_id: String,
    pub config_hash: String,
    pub round: usize,
    /// Discriminator outputs hit the probability clamp during selection.
    pub clamped_probs: usize,
    /// Training steps refused because of non-finite gradients (cumulative).
    pub refused_steps: usize,
    /// Fraction of annotated samples on which the active classifier predicts
    /// the oracle label; NaN before the first annotation.
    pub active_fit: f64,
    pub budget: Option<f64>,
    pub purity: Option<f64>,
    pub source_error: Option<f64>,
    pub target_error: Option<f64>,
    pub naive_target_error: Option<f64>,
    pub target_error_01: Option<f64>,
    pub naive_target_error_01: Option<f64>,
    pub tau_hat: Option<f64>,
    pub eta_hat: Option<f64>,
    pub identity_holds: Option<bool>,
    pub bound_rhs: Option<f64>,
    pub bound_slack: Option<f64>,
    pub beta_out_of_range: Option<bool>,
}

impl DiagnosticsRow {
    fn with_bound(mut self, b: Option<&BoundReport>) -> Self {
        if let Some(b) = b {
            let i = &b.inputs;
            self.budget = Some(i.budget);
            self.purity = Some(i.purity);
            self.source_error = Some(i.source_error);
            self.target_error = Some(i.target_error);
            self.naive_target_error = Some(i.naive_target_error);
            self.target_error_01 = Some(i.target_error_01);
            self.naive_target_error_01 = Some(i.naive_target_error_01);
            self.tau_hat = Some(i.tau_hat);
            self.eta_hat = Some(i.eta_hat);
            self.identity_holds = Some(i.identity_holds);
            self.bound_rhs = Some(b.bound_rhs);
            self.bound_slack = Some(b.bound_slack);
            self.beta_out_of_range = Some(b.beta_out_of_range);
        }
        self
    }
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rows: Vec<MetricsRow>,
    pub diagnostics: Vec<DiagnosticsRow>,
    /// Bound report after the last round, if bounds were requested.
    pub bound: Option<BoundReport>,
    pub model: Model,
    pub active: ActiveSet,
    /// Per-round SAGE norms of the candidate pool: `(round, pool indices, embeddings, selected)`.
    pub embeddings: Vec<(usize, Vec<usize>, Vec<SageVector<Real>>, Vec<usize>)>,
}

pub fn run_id(cfg: &ExperimentConfig, seed: u64) -> String {
    format!("{}-{}-{}-s{seed}", cfg.cell_hash(), cfg.strategy.name(), cfg.variant.name())
}

/// Loads `data_dir` if configured, otherwise generates the synthetic dataset.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let ds = match &cfg.data_dir {
        Some(dir) => read_dataset_dir(dir, Some(cfg.dataset.classes))?,
        None => generate_dataset(&cfg.dataset)?,
    };
    ds.splits()
}

struct RunState<'a> {
    cfg: &'a ExperimentConfig,
    splits: &'a Splits,
    source_onehot: Vec<Vec<Real>>,
    model: Model,
    tapes: BundleTapes<Real>,
    set: ActiveSet,
    rng: ChaCha8Rng,
    step: usize,
    total_steps: usize,
    refused: usize,
}

impl RunState<'_> {
    fn lambda(&self) -> Result<Real> {
        let p = if self.total_steps == 0 {
            0.0
        } else {
            self.step as Real / self.total_steps as Real
        };
        grl_lambda(p, self.cfg.grl_steepness)
    }

    /// One training iteration; the conditioning labels come from `active`
    /// (ignored by AADA, which trains with the domain discriminator).
    fn train_step(&mut self, active: &ActiveClassifier<Real>) -> Result<()> {
        let lambda = self.lambda()?;
        self.step += 1;
        let s = self.splits;
        let src = rand::seq::index::sample(&mut self.rng, s.source_x.len(), self.cfg.source_batch.min(s.source_x.len()));
        let tgt = compose_target_batch(&self.set, self.cfg.target_batch, &mut self.rng);
        let source_x: Vec<&[Real]> = src.iter().map(|i| s.source_x[i].as_slice()).collect();
        let source_y: Vec<Vec<Real>> = src.iter().map(|i| self.source_onehot[i].clone()).collect();
        let target_x: Vec<&[Real]> = tgt.iter().map(|&i| s.target_train_x[i].as_slice()).collect();
        let lr = self.cfg.lr;
        let outcome = if self.cfg.strategy == StrategyKind::Aada {
            let mut labeled_x = source_x.clone();
            let mut labeled_y = source_y;
            for &i in &tgt {
                if let Some(label) = self.set.label_of(i) {
                    labeled_x.push(&s.target_train_x[i]);
                    labeled_y.push(one_hot(label, s.classes));
                }
            }
            domain_adversarial_step(&mut self.model, &mut self.tapes, &labeled_x, &labeled_y, &source_x, &target_x, lambda, lr)
        } else {
            let target_y = tgt
                .iter()
                .zip(&target_x)
                .map(|(&i, x)| {
                    let z = self.model.features.forward(x)?;
                    active.soft_label(&self.model.classifier, &self.set, i, &z)
                })
                .collect::<Result<Vec<_>>>()?;
            transfer_step(&mut self.model, &mut self.tapes, &source_x, &source_y, &target_x, &target_y, lambda, lr)
        };
        match outcome {
            Ok(_) => Ok(()),
            Err(Error::Numeric { .. }) => {
                self.refused += 1;
                self.tapes.clear();
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    fn select(&mut self, candidates: &[usize], budget: usize) -> Result<(Vec<usize>, f64, usize, Vec<SageVector<Real>>)> {
        let pool: Vec<&[Real]> = candidates.iter().map(|&i| self.splits.target_train_x[i].as_slice()).collect();
        let m = &self.model;
        let (embeddings, clamped) = if self.cfg.strategy == StrategyKind::Aada {
            (Vec::new(), 0)
        } else {
            embed_pool(&m.features, &m.classifier, &m.class_disc, &pool)?
        };
        let mean_norm = mean_norm(&embeddings);
        let picks = match self.cfg.strategy {
            StrategyKind::Sage => diverse_sage_select(&embeddings, budget)?,
            StrategyKind::SageNormOnly => norm_only_select(&embeddings, budget)?,
            StrategyKind::Entropy => entropy_select(&m.features, &m.classifier, &pool, budget)?,
            StrategyKind::Random => random_select(pool.len(), budget, &mut self.rng)?,
            StrategyKind::Aada => aada_select(&m.features, &m.classifier, &m.domain_disc, &pool, budget)?,
        };
        Ok((picks.iter().map(|&p| candidates[p]).collect(), mean_norm, clamped, embeddings))
    }

    fn active_fit(&self, active: &ActiveClassifier<Real>) -> Result<f64> {
        if self.set.is_empty() {
            return Ok(f64::NAN);
        }
        let mut hits = 0usize;
        for e in self.set.entries() {
            let z = self.model.features.forward(&self.splits.target_train_x[e.pool_index])?;
            hits += usize::from(argmax(&active.predict_repr(&self.model.classifier, &z)?) == e.label);
        }
        Ok(hits as f64 / self.set.len() as f64)
    }
}

/// Bound report for `model` and its active set on the target-train pool.
///
/// Uses oracle labels of the whole pool, so it is a diagnostic only; its
/// estimators draw from their own RNG stream.
pub fn bound_report(
    cfg: &ExperimentConfig,
    splits: &Splits,
    model: &Model,
    set: &ActiveSet,
    seed: u64,
    round: usize,
) -> Result<BoundReport> {
    let s = splits;
    let m = model;
    let source_onehot: Vec<Vec<Real>> = s.source_y.iter().map(|&y| one_hot(y, s.classes)).collect();
    // estimator randomness is kept off the training stream
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b0d5 ^ round as u64);
    let pool_z = s.target_train_x.iter().map(|x| m.features.forward(x)).collect::<Result<Vec<_>>>()?;
    let preds = pool_z.iter().map(|z| m.classifier.forward(z)).collect::<Result<Vec<_>>>()?;
    let naive_id = check_naive_identity(&preds, set, &s.target_train_y)?;
    let naive: Vec<Vec<Real>> = preds
        .iter()
        .enumerate()
        .map(|(i, p)| set.label_of(i).map_or_else(|| p.clone(), |l| one_hot(l, s.classes)))
        .collect();
    let source_z = s.source_x.iter().map(|x| m.features.forward(x)).collect::<Result<Vec<_>>>()?;
    let source_preds = source_z.iter().map(|z| m.classifier.forward(z)).collect::<Result<Vec<_>>>()?;
    let est = &cfg.estimators;
    let tau = estimate_tau(&pool_z, &naive, &source_z, &source_onehot, est, &mut rng)?;
    let eta = estimate_eta(&pool_z, &s.target_train_y, s.classes, est, &mut rng)?;
    let ratio = |r: num_rational::Ratio<i64>| *r.numer() as f64 / *r.denom() as f64;
    Ok(evaluate_bound(BoundInputs {
        budget: ratio(naive_id.budget),
        purity: naive_id.purity.map_or(0.0, ratio),
        source_error: risk(&source_preds, &s.source_y, RiskLoss::L2)?,
        target_error: naive_id.l2_error_h,
        naive_target_error: naive_id.l2_error_naive,
        target_error_01: ratio(naive_id.error_h),
        naive_target_error_01: ratio(naive_id.error_naive),
        tau_hat: tau,
        eta_hat: eta,
        identity_holds: naive_id.holds,
    }))
}

fn mean_norm(e: &[SageVector<Real>]) -> f64 {
    if e.is_empty() {
        return f64::NAN;
    }
    e.iter().map(SageVector::norm).sum::<Real>() / e.len() as Real
}

/// Architecture with input and output sizes taken from the data.
fn fitted_architecture(cfg: &ExperimentConfig, splits: &Splits) -> Result<Architecture> {
    let input_dim = splits
        .source_x
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::contract("empty source domain"))?;
    let arch = Architecture {
        input_dim,
        classes: splits.classes,
        ..cfg.architecture.clone()
    };
    arch.validate()?;
    Ok(arch)
}

/// Pretraining followed by `rounds` rounds of selection, annotation and
/// adaptation. Row `k` is measured on target-test after round `k`; row 0
/// after pretraining.
pub fn run_training(cfg: &ExperimentConfig, splits: &Splits, seed: u64) -> Result<RunOutcome> {
    cfg.validate()?;
    let pool = splits.target_train_x.len();
    let budget = cfg.budget_for_pool(pool)?;
    let arch = fitted_architecture(cfg, splits)?;
    let oracle = Oracle::new(splits.target_train_y.clone(), splits.classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::init(&arch, &mut rng)?;
    let hash = cfg.cell_hash();
    let id = run_id(cfg, seed);
    let mut st = RunState {
        cfg,
        splits,
        source_onehot: splits.source_y.iter().map(|&y| one_hot(y, splits.classes)).collect(),
        tapes: BundleTapes::for_bundle(&model),
        model,
        set: ActiveSet::new(pool, splits.classes),
        rng,
        step: 0,
        total_steps: cfg.pretrain_iters + cfg.rounds * cfg.round_iters,
        refused: 0,
    };

    let naive = ActiveClassifier::naive();
    for _ in 0..cfg.pretrain_iters {
        st.train_step(&naive)?;
    }

    let mut rows = Vec::with_capacity(cfg.rounds + 1);
    let mut diagnostics = Vec::with_capacity(cfg.rounds + 1);
    let mut embeddings = Vec::new();
    let mut bound = None;
    let mut active = naive;
    for round in 0..=cfg.rounds {
        let mut selected = Vec::new();
        let mut sage_norm = f64::NAN;
        let mut clamped = 0;
        if round > 0 {
            let candidates = st.set.unannotated();
            let (picks, norm, c, emb) = st.select(&candidates, budget)?;
            sage_norm = norm;
            clamped = c;
            for &idx in &picks {
                let pre = argmax(&st.model.predict(&splits.target_train_x[idx])?);
                st.set.annotate(&oracle, idx, round, pre)?;
            }
            if cfg.dump_embeddings && !emb.is_empty() {
                embeddings.push((round, candidates, emb, picks.clone()));
            }
            selected = picks;
            active = match cfg.variant {
                Variant::Naive => ActiveClassifier::naive(),
                Variant::Inductive => ActiveClassifier::inductive_from(&st.model.classifier),
                Variant::Balance => {
                    let settings = BalanceSettings {
                        gamma: cfg.gamma,
                        steps: cfg.balance_steps,
                        lr: cfg.lr,
                        source_batch: cfg.source_batch,
                    };
                    let m = &st.model;
                    balance_train(
                        &m.classifier,
                        &m.features,
                        &splits.source_x,
                        &splits.source_y,
                        &st.set,
                        &splits.target_train_x,
                        settings,
                        &mut st.rng,
                    )?
                }
            };
            for _ in 0..cfg.round_iters {
                if cfg.strategy != StrategyKind::Aada {
                    match cfg.variant {
                        Variant::Inductive => {
                            inductive_step(&mut active, &st.model.features, &st.set, &splits.target_train_x, cfg.inductive_lr())?
                        }
                        Variant::Balance => {
                            let n = splits.source_x.len();
                            let idx = rand::seq::index::sample(&mut st.rng, n, cfg.source_batch.min(n));
                            let batch: Vec<(&[Real], usize)> =
                                idx.iter().map(|i| (splits.source_x[i].as_slice(), splits.source_y[i])).collect();
                            balance_step(&mut active, &st.model.features, &batch, &st.set, &splits.target_train_x, cfg.gamma, cfg.lr)?
                        }
                        Variant::Naive => {}
                    }
                }
                st.train_step(&active)?;
            }
        } else if cfg.strategy != StrategyKind::Aada {
            let all: Vec<&[Real]> = splits.target_train_x.iter().map(Vec::as_slice).collect();
            let m = &st.model;
            let (emb, c) = embed_pool(&m.features, &m.classifier, &m.class_disc, &all)?;
            sage_norm = mean_norm(&emb);
            clamped = c;
        }

        rows.push(MetricsRow {
            run_id: id.clone(),
            strategy: cfg.strategy.name().to_string(),
            variant: cfg.variant.name().to_string(),
            seed,
            round,
            annotated_count: st.set.len(),
            purity_cum: if st.set.is_empty() { f64::NAN } else { purity(&st.set)? },
            acc_target_test: accuracy(&st.model, &splits.target_test_x, &splits.target_test_y)?,
            acc_source: accuracy(&st.model, &splits.source_x, &splits.source_y)?,
            sage_mean_norm: sage_norm,
            config_hash: hash.clone(),
            selected: selected.iter().map(usize::to_string).collect::<Vec<_>>().join(";"),
        });
        let report = if cfg.bounds { Some(bound_report(cfg, splits, &st.model, &st.set, seed, round)?) } else { None };
        diagnostics.push(
            DiagnosticsRow {
                run_id: id.clone(),
                config_hash: hash.clone(),
                round,
                clamped_probs: clamped,
                refused_steps: st.refused,
                active_fit: st.active_fit(&active)?,
                budget: None,
                purity: None,
                source_error: None,
                target_error: None,
                naive_target_error: None,
                target_error_01: None,
                naive_target_error_01: None,
                tau_hat: None,
                eta_hat: None,
                identity_holds: None,
                bound_rhs: None,
                bound_slack: None,
                beta_out_of_range: None,
            }
            .with_bound(report.as_ref()),
        );
        bound = report;
    }

    Ok(RunOutcome {
        rows,
        diagnostics,
        bound,
        model: st.model,
        active: st.set,
        embeddings,
    })
}

/// A run that ended in an error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureRow {
    pub run_id: String,
    pub kind: String,
    pub message: String,
}

/// Merged results of all cells of an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub metrics: Vec<MetricsRow>,
    pub diagnostics: Vec<DiagnosticsRow>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<FailureRow>,
    pub bounds: Vec<(String, BoundReport)>,
    /// Final model of every successful run, keyed by run id.
    pub models: Vec<(String, Model)>,
}

/// Runs every `(cell, seed)` pair in parallel. Failed runs are recorded and
/// do not stop the others; rows are merged in cell-then-seed order.
pub fn run_cells(cells: &[ExperimentConfig], splits: &Splits) -> ExperimentOutput {
    let jobs: Vec<(&ExperimentConfig, u64)> = cells.iter().flat_map(|c| c.seeds.iter().map(move |&s| (c, s))).collect();
    let results: Vec<(String, Result<RunOutcome>)> = jobs
        .par_iter()
        .map(|&(cfg, seed)| (run_id(cfg, seed), run_training(cfg, splits, seed)))
        .collect();
    let mut out = ExperimentOutput {
        metrics: Vec::new(),
        diagnostics: Vec::new(),
        summary: Vec::new(),
        failures: Vec::new(),
        bounds: Vec::new(),
        models: Vec::new(),
    };
    for (id, res) in results {
        match res {
            Ok(r) => {
                out.metrics.extend(r.rows);
                out.diagnostics.extend(r.diagnostics);
                if let Some(b) = r.bound {
                    out.bounds.push((id.clone(), b));
                }
                out.models.push((id, r.model));
            }
            Err(e) => out.failures.push(FailureRow {
                run_id: id,
                kind: e.kind().to_string(),
                message: e.to_string(),
            }),
        }
    }
    out.summary = summarize(&out.metrics).unwrap_or_default();
    out
}

/// Runs `cells` on the dataset of the first cell and writes `metrics.csv`,
/// `summary.csv`, `diagnostics.csv`, `failures.csv` and `metadata.toml` into `dir`.
pub fn run_experiment(cells: &[ExperimentConfig], dir: &Path) -> Result<ExperimentOutput> {
    let first = cells.first().ok_or_else(|| Error::contract("experiment without cells"))?;
    for c in cells {
        c.validate()?;
    }
    let splits = load_splits(first)?;
    let out = run_cells(cells, &splits);
    write_outputs(cells, &out, dir)?;
    Ok(out)
}

pub fn write_outputs(cells: &[ExperimentConfig], out: &ExperimentOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv_file(&dir.join("metrics.csv"), &out.metrics)?;
    write_csv_file(&dir.join("summary.csv"), &out.summary)?;
    write_csv_file(&dir.join("diagnostics.csv"), &out.diagnostics)?;
    write_csv_file(&dir.join("failures.csv"), &out.failures)?;
    let mut meta = String::from("# evaluation after each round's adaptation; round 0 after pretraining\nevaluation = \"after_round\"\n");
    for c in cells {
        meta.push_str(&format!("\n[cells.{}]\n", c.cell_hash()));
        meta.push_str(&format!("strategy = \"{}\"\nvariant = \"{}\"\n", c.strategy.name(), c.variant.name()));
    }
    meta.push_str("\n[config]\n");
    meta.push_str(&toml_table(&cells[0].to_toml(), "config"));
    write_atomic(&dir.join("metadata.toml"), meta.as_bytes())
}

/// Re-roots the tables of a serialized config under `prefix`.
fn toml_table(text: &str, prefix: &str) -> String {
    text.lines()
        .map(|l| match l.strip_prefix('[') {
            Some(rest) => format!("[{prefix}.{rest}"),
            None => l.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

/// Writes the per-round embedding dumps of a run into `dir`.
pub fn write_embedding_dumps(outcome: &RunOutcome, run_id: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for (round, pool, emb, selected) in &outcome.embeddings {
        let p = dir.join(format!("{run_id}-round{round}.csv"));
        write_embedding_dump(&p, pool, emb, selected)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Draws a fresh seed list, used by presets that ask for `n` seeds.
pub fn seed_range(n: usize) -> Vec<u64> {
    (0..n as u64).collect()
}
