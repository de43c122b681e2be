//! Experiment execution with wall-clock timing and optional fold-level
//! parallelism.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use dualshift_core::dataset::{generate_synthetic, make_folds};
use dualshift_core::trainer::{train_fold, DatasetSource, FoldOutcome};
use dualshift_core::{Dataset, ExperimentConfig, RunResult};

use crate::manifest::load_manifest;
use crate::Result;

/// Materializes a config's dataset. Relative manifest paths resolve
/// against `base`.
pub fn load_dataset(source: &DatasetSource, base: &Path) -> Result<Dataset> {
    match source {
        DatasetSource::Synthetic(config) => Ok(generate_synthetic(config)?),
        DatasetSource::Manifest { path } => load_manifest(&base.join(path)),
    }
}

/// Trains all folds on up to `jobs` threads. Fold results do not depend
/// on `jobs`; `on_fold` may be called from worker threads in any order.
pub fn run_experiment(
    dataset: &Dataset,
    config: &ExperimentConfig,
    jobs: usize,
    on_fold: &(dyn Fn(&FoldOutcome) + Sync),
) -> Result<RunResult> {
    let started = Instant::now();
    config.validate()?;
    let folds = make_folds(dataset, config.folds, config.seed)?;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<dualshift_core::Result<FoldOutcome>>>> =
        Mutex::new((0..folds.len()).map(|_| None).collect());
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(fold) = folds.get(i) else { break };
        let outcome = train_fold(dataset, fold, config);
        if let Ok(o) = &outcome {
            on_fold(o);
        }
        slots.lock().expect("no worker panicked")[i] = Some(outcome);
    };
    let threads = jobs.clamp(1, folds.len());
    if threads == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(worker);
            }
        });
    }
    let outcomes = slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|slot| slot.expect("every fold ran"))
        .collect::<dualshift_core::Result<Vec<_>>>()?;
    let mut result = RunResult::from_folds(config, &outcomes)?;
    result.wall_clock_s = started.elapsed().as_secs_f64();
    Ok(result)
}
