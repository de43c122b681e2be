use alloc::string::String;
use alloc::vec::Vec;

use super::{train_fold, ExperimentConfig, FoldOutcome, RunResult};
use crate::dataset::{make_folds, Dataset};
use crate::error::Result;

/// `(cbn, da, crossmix)` toggles of one ablation row.
pub type Flags = (bool, bool, bool);

/// The module ablation rows: CBN, CBN+DA, CBN+DA+CrossMix.
pub const TABLE2_GRID: [Flags; 3] = [(true, false, false), (true, true, false), (true, true, true)];

pub const DEFAULT_ALPHAS: [f64; 6] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];

pub const DEFAULT_RATIOS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// One labelled line of a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub label: String,
    pub result: RunResult,
}

pub fn with_flags(base: &ExperimentConfig, (cbn, da, mix): Flags) -> ExperimentConfig {
    ExperimentConfig {
        cbn_enabled: cbn,
        da_enabled: da,
        crossmix_enabled: mix,
        use_mass: true,
        ..base.clone()
    }
}

/// Plain-BN model trained on non-mass samples only.
pub fn baseline_nonmass(base: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        use_mass: false,
        ..with_flags(base, (false, false, false))
    }
}

/// Plain-BN model trained on both domains with no adaptation.
pub fn baseline_mixed(base: &ExperimentConfig) -> ExperimentConfig {
    with_flags(base, (false, false, false))
}

/// `"CBN+DA+CrossMix"`-style name of a flag triple.
pub fn ablation_label(flags: Flags) -> String {
    let names: Vec<&str> = [(flags.0, "CBN"), (flags.1, "DA"), (flags.2, "CrossMix")]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
    if names.is_empty() {
        "Mixed".into()
    } else {
        names.join("+")
    }
}

/// Trains every fold in order and aggregates the non-mass test AUC.
pub fn run_experiment(dataset: &Dataset, config: &ExperimentConfig) -> Result<RunResult> {
    run_experiment_with(dataset, config, |_| {})
}

/// [`run_experiment`] with a callback after each fold.
pub fn run_experiment_with(
    dataset: &Dataset,
    config: &ExperimentConfig,
    mut on_fold: impl FnMut(&FoldOutcome),
) -> Result<RunResult> {
    config.validate()?;
    let folds = make_folds(dataset, config.folds, config.seed)?;
    let mut outcomes = Vec::with_capacity(folds.len());
    for fold in &folds {
        let outcome = train_fold(dataset, fold, config)?;
        on_fold(&outcome);
        outcomes.push(outcome);
    }
    RunResult::from_folds(config, &outcomes)
}

/// Baselines ("Non-mass", "Mixed") followed by one row per flag triple.
pub fn run_ablation(dataset: &Dataset, base: &ExperimentConfig, grid: &[Flags]) -> Result<Vec<Row>> {
    run_ablation_with(base, grid, |c| run_experiment(dataset, c))
}

/// [`run_ablation`] with a caller-supplied experiment runner.
pub fn run_ablation_with(
    base: &ExperimentConfig,
    grid: &[Flags],
    mut run: impl FnMut(&ExperimentConfig) -> Result<RunResult>,
) -> Result<Vec<Row>> {
    let mut plan = alloc::vec![
        (String::from("Non-mass"), baseline_nonmass(base)),
        (String::from("Mixed"), baseline_mixed(base)),
    ];
    plan.extend(grid.iter().map(|&f| (ablation_label(f), with_flags(base, f))));
    plan.into_iter()
        .map(|(label, config)| {
            Ok(Row {
                label,
                result: run(&config)?,
            })
        })
        .collect()
}

/// The full framework at each mixing `alpha`.
pub fn run_alpha_sweep(dataset: &Dataset, base: &ExperimentConfig, alphas: &[f64]) -> Result<Vec<Row>> {
    run_alpha_sweep_with(base, alphas, |c| run_experiment(dataset, c))
}

pub fn run_alpha_sweep_with(
    base: &ExperimentConfig,
    alphas: &[f64],
    mut run: impl FnMut(&ExperimentConfig) -> Result<RunResult>,
) -> Result<Vec<Row>> {
    alphas
        .iter()
        .map(|&alpha| {
            let mut config = with_flags(base, (true, true, true));
            config.mix.alpha = alpha;
            Ok(Row {
                label: alloc::format!("alpha={alpha}"),
                result: run(&config)?,
            })
        })
        .collect()
}

/// Naive mixed training and the full framework at each non-mass training
/// ratio; two rows per ratio.
pub fn run_ratio_sweep(dataset: &Dataset, base: &ExperimentConfig, ratios: &[f64]) -> Result<Vec<Row>> {
    run_ratio_sweep_with(base, ratios, |c| run_experiment(dataset, c))
}

pub fn run_ratio_sweep_with(
    base: &ExperimentConfig,
    ratios: &[f64],
    mut run: impl FnMut(&ExperimentConfig) -> Result<RunResult>,
) -> Result<Vec<Row>> {
    let mut rows = Vec::with_capacity(2 * ratios.len());
    for &ratio in ratios {
        let percent = libm::round(ratio * 100.0);
        for (name, mut config) in [
            ("Mixed", baseline_mixed(base)),
            ("Ours", with_flags(base, (true, true, true))),
        ] {
            config.nonmass_train_ratio = ratio;
            rows.push(Row {
                label: alloc::format!("{name} {percent}%"),
                result: run(&config)?,
            });
        }
    }
    Ok(rows)
}
