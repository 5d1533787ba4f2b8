use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use sagelab::active::Variant;
use sagelab::baselines::StrategyKind;
use sagelab::config::{Budget, ExperimentConfig, OUTPUT_DIR_ENV};
use sagelab::data::{generate_dataset, write_dataset_dir, Family, SyntheticSpec};
use sagelab::runner::{load_splits, run_cells, write_embedding_dumps, write_outputs, ExperimentOutput};
use sagelab::{checkpoint, report, runner, Error};

#[derive(Parser)]
#[command(name = "sagelab", version, about = "Active domain adaptation experiments on synthetic shifts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a source / target-train / target-test dataset as CSV files.
    GenData(GenData),
    /// Run one (strategy, variant) cell over the configured seeds.
    Run(RunArgs),
    /// Run a preset grid of cells on the same dataset.
    Compare(CompareArgs),
    /// Run one cell with bound diagnostics and print the end-of-run reports.
    Bounds(RunArgs),
    /// Aggregate a metrics CSV into long-format plot data.
    EmitPlotdata(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetPreset {
    TwoMoons,
    Blobs,
    Spiral,
}

impl DatasetPreset {
    fn spec(self) -> SyntheticSpec {
        match self {
            DatasetPreset::TwoMoons => SyntheticSpec::two_moons(),
            DatasetPreset::Blobs => SyntheticSpec::blobs(),
            DatasetPreset::Spiral => SyntheticSpec {
                family: Family::SpiralShift,
                noise: 0.1,
                classes: 3,
                ..SyntheticSpec::two_moons()
            },
        }
    }
}

#[derive(Args)]
struct GenData {
    #[arg(long, value_enum, default_value = "two-moons")]
    preset: DatasetPreset,
    #[arg(long)]
    n_source: Option<usize>,
    #[arg(long)]
    n_target: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    rotation: Option<f64>,
    /// Comma-separated translation vector.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    translation: Option<Vec<f64>>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = OUTPUT_DIR_ENV)]
    out: PathBuf,
}

/// Command-line overrides of [`ExperimentConfig`] fields.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// TOML config; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    dataset: Option<DatasetPreset>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    dataset_seed: Option<u64>,
    #[arg(long)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Per-round budget: a count (`10`) or a fraction of the pool (`2%`, `0.02`).
    #[arg(long)]
    budget: Option<Budget>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    pretrain_iters: Option<usize>,
    #[arg(long)]
    round_iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    inductive_lr: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    balance_steps: Option<usize>,
    #[arg(long)]
    grl_steepness: Option<f64>,
    #[arg(long)]
    source_batch: Option<usize>,
    #[arg(long)]
    target_batch: Option<usize>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Use seeds 0..n.
    #[arg(long, conflicts_with = "seeds")]
    num_seeds: Option<usize>,
    #[arg(long)]
    dump_embeddings: bool,
    /// Output directory; also read from the environment.
    #[arg(long, env = OUTPUT_DIR_ENV)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self) -> anyhow::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$f = v; } )* };
        }
        set!(strategy, variant, budget, rounds, pretrain_iters, round_iters, lr, gamma, balance_steps, grl_steepness, source_batch, target_batch, seeds);
        if let Some(p) = self.dataset {
            c.dataset = p.spec();
        }
        if let Some(s) = self.dataset_seed {
            c.dataset.seed = s;
        }
        if let Some(n) = self.num_seeds {
            c.seeds = runner::seed_range(n);
        }
        if self.inductive_lr.is_some() {
            c.inductive_lr = self.inductive_lr;
        }
        if self.data_dir.is_some() {
            c.data_dir = self.data_dir.clone();
        }
        c.dump_embeddings |= self.dump_embeddings;
        if let Some(o) = &self.out {
            c.output_dir = o.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Write the final networks of every run under `<out>/checkpoints`.
    #[arg(long)]
    checkpoints: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// SAGE, entropy and random with the inductive step.
    Strategies,
    /// SAGE against AADA; plot data adds the shifted AADA++ curve.
    Aada,
    /// SAGE with the naive, balance and inductive active classifiers.
    Ablation,
    /// Diverse SAGE against norm-only SAGE.
    Diversity,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, value_enum)]
    preset: Preset,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn preset_cells(base: &ExperimentConfig, preset: Preset) -> Vec<ExperimentConfig> {
    match preset {
        Preset::Strategies => [StrategyKind::Sage, StrategyKind::Entropy, StrategyKind::Random]
            .into_iter()
            .map(|s| base.cell(s, Variant::Inductive))
            .collect(),
        Preset::Aada => [StrategyKind::Sage, StrategyKind::Aada]
            .into_iter()
            .map(|s| base.cell(s, Variant::Inductive))
            .collect(),
        Preset::Ablation => Variant::ALL.into_iter().map(|v| base.cell(StrategyKind::Sage, v)).collect(),
        Preset::Diversity => [StrategyKind::Sage, StrategyKind::SageNormOnly]
            .into_iter()
            .map(|s| base.cell(s, base.variant))
            .collect(),
    }
}

/// Failed runs, reported with the kind of the first failure.
#[derive(Debug)]
struct RunsFailed {
    kind: String,
    failed: usize,
    total: usize,
    first: String,
}

impl std::fmt::Display for RunsFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} of {} runs failed; first: {}", self.failed, self.total, self.first)
    }
}

impl std::error::Error for RunsFailed {}

fn check_failures(out: &ExperimentOutput, total: usize) -> anyhow::Result<()> {
    match out.failures.first() {
        None => Ok(()),
        Some(f) => Err(RunsFailed {
            kind: f.kind.clone(),
            failed: out.failures.len(),
            total,
            first: f.message.clone(),
        }
        .into()),
    }
}

fn execute(cells: &[ExperimentConfig], dir: &Path) -> anyhow::Result<ExperimentOutput> {
    let splits = load_splits(&cells[0])?;
    let out = run_cells(cells, &splits);
    write_outputs(cells, &out, dir)?;
    for f in &out.failures {
        eprintln!("run {} failed: {}", f.run_id, f.message);
    }
    Ok(out)
}

fn print_summary(out: &ExperimentOutput) {
    for r in out.summary.iter().filter(|r| {
        out.summary
            .iter()
            .filter(|o| o.config_hash == r.config_hash)
            .map(|o| o.round)
            .max()
            == Some(r.round)
    }) {
        println!(
            "{:<15} {:<9} round {:>2}  acc {:.4} ± {:.4}  (n={})",
            r.strategy, r.variant, r.round, r.mean_acc, r.std_acc, r.n
        );
    }
}

fn run(args: RunArgs, bounds: bool) -> anyhow::Result<()> {
    let mut cfg = args.overrides.apply()?;
    cfg.bounds |= bounds;
    let dir = cfg.output_dir.clone();
    let out = execute(std::slice::from_ref(&cfg), &dir)?;
    if args.checkpoints {
        let ck = dir.join("checkpoints");
        std::fs::create_dir_all(&ck).with_context(|| format!("creating {}", ck.display()))?;
        for (id, model) in &out.models {
            checkpoint::save(&ck.join(format!("{id}.ckpt")), &model.named_nets())?;
        }
    }
    if cfg.dump_embeddings {
        // selection dumps need the run outcomes, so those runs are repeated per seed
        let splits = load_splits(&cfg)?;
        for &seed in &cfg.seeds {
            let outcome = runner::run_training(&cfg, &splits, seed)?;
            write_embedding_dumps(&outcome, &runner::run_id(&cfg, seed), &dir.join("embeddings"))?;
        }
    }
    print_summary(&out);
    if bounds {
        println!("run_id,budget,purity,tau_hat,eta_hat,bound_rhs,naive_target_error,bound_slack,identity_holds");
        for (id, b) in &out.bounds {
            let i = &b.inputs;
            println!(
                "{id},{},{},{},{},{},{},{},{}",
                i.budget, i.purity, i.tau_hat, i.eta_hat, b.bound_rhs, i.naive_target_error, b.bound_slack, i.identity_holds
            );
        }
    }
    check_failures(&out, cfg.seeds.len())
}

fn main_inner() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::GenData(g) => {
            let mut spec = g.preset.spec();
            macro_rules! set {
                ($($f:ident),*) => { $( if let Some(v) = g.$f.clone() { spec.$f = v; } )* };
            }
            set!(n_source, n_target, rotation, translation, noise, classes);
            spec.seed = g.seed;
            spec.validate()?;
            let ds = generate_dataset(&spec)?;
            write_dataset_dir(&g.out, &ds)?;
            println!("wrote {} samples to {}", ds.samples.len(), g.out.display());
        }
        Command::Run(a) => run(a, false)?,
        Command::Bounds(a) => run(a, true)?,
        Command::Compare(a) => {
            let base = a.overrides.apply()?;
            let cells = preset_cells(&base, a.preset);
            let out = execute(&cells, &base.output_dir)?;
            print_summary(&out);
            check_failures(&out, cells.len() * base.seeds.len())?;
        }
        Command::EmitPlotdata(p) => {
            let rows = report::emit_plotdata(&p.metrics, &p.out)?;
            println!("wrote {} rows to {}", rows.len(), p.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match (e.downcast_ref::<Error>(), e.downcast_ref::<RunsFailed>()) {
                (Some(err), _) => err.kind(),
                (None, Some(f)) => f.kind.as_str(),
                _ => "runtime",
            };
            eprintln!("error kind={kind} message={:?}", format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}
