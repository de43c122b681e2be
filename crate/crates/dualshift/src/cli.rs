use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use dualshift::config::{load_config, resolve_seed, save_config, LoadedConfig};
use dualshift::core::dataset::generate_synthetic;
use dualshift::core::trainer::{
    run_ablation_with, run_alpha_sweep_with, run_ratio_sweep_with, DatasetSource, FoldOutcome, Row,
    DEFAULT_ALPHAS, DEFAULT_RATIOS, TABLE2_GRID,
};
use dualshift::core::{Domain, ExperimentConfig, PerDomain, RunResult, SyntheticConfig};
use dualshift::manifest::{load_manifest, manifest_path, write_dataset};
use dualshift::results::{load_any, save_result, save_table, TableDoc};
use dualshift::{checkpoint, report, run};

#[derive(Parser)]
#[command(
    name = "dualshift",
    version,
    about = "Dual-domain malignancy classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-domain dataset (images + manifest).
    Synth(SynthArgs),
    /// Train and evaluate one configuration over all folds.
    Train(TrainArgs),
    /// Baselines plus the module ablation grid.
    Ablate(TableArgs),
    /// The full framework at several mixing alphas.
    SweepAlpha(SweepAlphaArgs),
    /// Naive mixed training vs the full framework at several non-mass ratios.
    SweepRatio(SweepRatioArgs),
    /// Merge result files into one comparison table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_mass: Option<usize>,
    #[arg(long)]
    n_nonmass: Option<usize>,
    #[arg(long)]
    mal_rate_mass: Option<f64>,
    #[arg(long)]
    mal_rate_nonmass: Option<f64>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    background_mass: Option<f64>,
    #[arg(long)]
    background_nonmass: Option<f64>,
    #[arg(long)]
    contrast_mass: Option<f64>,
    #[arg(long)]
    contrast_nonmass: Option<f64>,
    #[arg(long)]
    blur_mass: Option<f64>,
    #[arg(long)]
    blur_nonmass: Option<f64>,
    #[arg(long)]
    irregularity: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (holding manifest.csv) or manifest file.
    #[arg(long)]
    data: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Folds trained concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Result JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Write one checkpoint per fold into this directory.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Table JSON path; the aligned text table is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepAlphaArgs {
    #[command(flatten)]
    table: TableArgs,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ALPHAS)]
    values: Vec<f64>,
}

#[derive(Args)]
struct SweepRatioArgs {
    #[command(flatten)]
    table: TableArgs,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RATIOS)]
    values: Vec<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Result or table JSON files.
    #[arg(long = "in", num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "md")]
    format: report::Format,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Ablate(a) => ablate(a),
        Command::SweepAlpha(a) => sweep_alpha(a),
        Command::SweepRatio(a) => sweep_ratio(a),
        Command::Report(a) => report_cmd(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn env_seed() -> Option<String> {
    std::env::var("DUALSHIFT_SEED").ok()
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let mut c = SyntheticConfig::default();
    let set_pair = |pair: &mut PerDomain<f64>, mass: Option<f64>, nonmass: Option<f64>| {
        if let Some(v) = mass {
            pair.mass = v;
        }
        if let Some(v) = nonmass {
            pair.nonmass = v;
        }
    };
    c.seed = match (a.seed, env_seed()) {
        (Some(s), _) => s,
        (None, Some(v)) => v
            .trim()
            .parse()
            .map_err(|_| anyhow!("DUALSHIFT_SEED `{v}` is not an unsigned integer"))?,
        (None, None) => c.seed,
    };
    c.n_mass = a.n_mass.unwrap_or(c.n_mass);
    c.n_nonmass = a.n_nonmass.unwrap_or(c.n_nonmass);
    c.mal_rate_mass = a.mal_rate_mass.unwrap_or(c.mal_rate_mass);
    c.mal_rate_nonmass = a.mal_rate_nonmass.unwrap_or(c.mal_rate_nonmass);
    c.image_size = a.image_size.unwrap_or(c.image_size);
    set_pair(&mut c.background_mean, a.background_mass, a.background_nonmass);
    set_pair(&mut c.contrast, a.contrast_mass, a.contrast_nonmass);
    set_pair(&mut c.blur_sigma, a.blur_mass, a.blur_nonmass);
    c.boundary_irregularity_malignant = a.irregularity.unwrap_or(c.boundary_irregularity_malignant);
    c.noise_std = a.noise_std.unwrap_or(c.noise_std);

    let dataset = generate_synthetic(&c)?;
    let manifest = write_dataset(&dataset, &a.out)?;
    let echo = a.out.join("synthetic_config.json");
    std::fs::write(&echo, serde_json::to_string_pretty(&c)?).with_context(|| echo.display().to_string())?;
    println!(
        "wrote {} samples ({} mass, {} non-mass) to {}",
        dataset.len(),
        dataset.count(Domain::Mass, 0) + dataset.count(Domain::Mass, 1),
        dataset.count(Domain::Nonmass, 0) + dataset.count(Domain::Nonmass, 1),
        manifest.display()
    );
    Ok(())
}

/// Config file (or defaults) with the seed resolved and the dataset
/// pointed at `--data`.
fn resolve(run: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    let loaded = match &run.config {
        Some(path) => load_config(path)?,
        None => LoadedConfig {
            config: ExperimentConfig::default(),
            has_seed: false,
        },
    };
    let seed = resolve_seed(run.seed, &loaded, env_seed().as_deref()).map_err(|e| anyhow!(e))?;
    let mut config = loaded.config;
    config.seed = seed;
    let manifest = manifest_path(&run.data);
    let manifest = std::fs::canonicalize(&manifest).with_context(|| manifest.display().to_string())?;
    config.dataset = DatasetSource::Manifest {
        path: manifest.display().to_string(),
    };
    config.model = config.model_config();
    config.validate()?;
    Ok(config)
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

fn fold_logger(quiet: bool, label: String) -> impl Fn(&FoldOutcome) + Sync {
    move |o: &FoldOutcome| {
        if !quiet {
            eprintln!(
                "{label}fold {}: AUC {:.4}, final loss {:.4}",
                o.fold_index,
                o.auc,
                o.loss_trace.last().copied().unwrap_or(f64::NAN)
            );
        }
    }
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let config = resolve(&a.run)?;
    let dataset = load_manifest(&a.run.data)?;
    save_config(&sibling(&a.out, ".resolved.toml"), &config)?;
    let ckpt_dir = a.checkpoint_dir.clone();
    let log = fold_logger(a.run.quiet, String::new());
    let on_fold = |o: &FoldOutcome| {
        log(o);
        if let Some(dir) = &ckpt_dir {
            let path = dir.join(format!("fold_{}.json", o.fold_index));
            if let Err(e) = checkpoint::save_checkpoint(&path, &checkpoint::Checkpoint::from_fold(o, &config))
            {
                eprintln!("warning: {e}");
            }
        }
    };
    let result = run::run_experiment(&dataset, &config, a.run.jobs, &on_fold)?;
    save_result(&a.out, &result)?;
    println!("{}", report::percent(result.mean_auc, result.std_auc));
    Ok(())
}

fn table_runner<'a>(
    dataset: &'a dualshift::core::Dataset,
    run: &'a RunArgs,
) -> impl FnMut(&ExperimentConfig) -> dualshift::core::Result<RunResult> + 'a {
    move |config: &ExperimentConfig| {
        let label = format!(
            "[cbn={} da={} mix={} mass={} ratio={} alpha={}] ",
            config.cbn_enabled,
            config.da_enabled,
            config.crossmix_enabled,
            config.use_mass,
            config.nonmass_train_ratio,
            config.mix.alpha
        );
        let log = fold_logger(run.quiet, label);
        run::run_experiment(dataset, config, run.jobs, &log).map_err(|e| match e {
            dualshift::Error::Core(c) => c,
            other => dualshift::core::Error::InvalidArgument(other.to_string()),
        })
    }
}

fn write_table(
    a: &TableArgs,
    kind: &str,
    base: &ExperimentConfig,
    rows: Vec<Row>,
    text: String,
) -> anyhow::Result<()> {
    save_config(&sibling(&a.out, ".resolved.toml"), base)?;
    save_table(&a.out, &TableDoc::new(kind, rows))?;
    let text_path = sibling(&a.out, ".txt");
    std::fs::write(&text_path, &text).with_context(|| text_path.display().to_string())?;
    print!("{text}");
    Ok(())
}

fn table_rows(rows: &[Row]) -> Vec<dualshift::results::TableRow> {
    TableDoc::new("", rows.to_vec()).rows
}

fn ablate(a: TableArgs) -> anyhow::Result<()> {
    let base = resolve(&a.run)?;
    let dataset = load_manifest(&a.run.data)?;
    let rows = run_ablation_with(&base, &TABLE2_GRID, table_runner(&dataset, &a.run))?;
    let text = report::ablation_text(&table_rows(&rows));
    write_table(&a, "ablation", &base, rows, text)
}

fn sweep_alpha(a: SweepAlphaArgs) -> anyhow::Result<()> {
    if a.values.is_empty() {
        bail!("--values needs at least one alpha");
    }
    let base = resolve(&a.table.run)?;
    let dataset = load_manifest(&a.table.run.data)?;
    let rows = run_alpha_sweep_with(&base, &a.values, table_runner(&dataset, &a.table.run))?;
    let text = report::alpha_text(&table_rows(&rows));
    write_table(&a.table, "alpha_sweep", &base, rows, text)
}

fn sweep_ratio(a: SweepRatioArgs) -> anyhow::Result<()> {
    if a.values.is_empty() {
        bail!("--values needs at least one ratio");
    }
    let base = resolve(&a.table.run)?;
    let dataset = load_manifest(&a.table.run.data)?;
    let rows = run_ratio_sweep_with(&base, &a.values, table_runner(&dataset, &a.table.run))?;
    let text = report::ratio_text(&table_rows(&rows));
    write_table(&a.table, "ratio_sweep", &base, rows, text)
}

fn report_cmd(a: ReportArgs) -> anyhow::Result<()> {
    let mut rows = Vec::new();
    for path in &a.inputs {
        rows.extend(load_any(path)?);
    }
    let text = report::render(&report::merge(&rows), a.format);
    match &a.out {
        Some(path) => std::fs::write(path, &text).with_context(|| path.display().to_string())?,
        None => print!("{text}"),
    }
    Ok(())
}
