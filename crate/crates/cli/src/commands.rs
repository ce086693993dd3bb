use std::fs;
use std::path::{Path, PathBuf};

use osal_core::config::{DataPaths, ExperimentConfig};
use osal_core::embed::PoolSpec;
use osal_core::purity::{assess_purity, class_prototypes, tune_temperature};
use osal_core::report::{
    aggregate, read_csv, round_rows, score_rows, write_csv, write_json, write_run_outputs, RoundRow,
};
use osal_core::sim::{initial_pool, run_seeds, run_with_data, ExperimentData, RunSettings};
use osal_core::strategy::StrategyKind;
use osal_core::synth::{write_synthetic, SynthSpec};
use osal_core::{Error, Result};
use serde::Serialize;

use crate::{ExperimentArgs, ReportArgs, SweepArgs, SynthArgs};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_config(path: &Path, seed: Option<u64>, strategy: Option<StrategyKind>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(strategy) = strategy {
        config.strategy = strategy;
    }
    Ok(config)
}

/// Relative path from the config's directory to a data file, when there is one.
fn relative_to(base: &Path, path: &Path) -> PathBuf {
    path.strip_prefix(base)
        .map(Path::to_path_buf)
        .unwrap_or_else(|_| path.to_path_buf())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        k_id: a.k_id,
        k_ood: a.k_ood,
        dim: a.dim,
        per_class: a.per_class,
        separation: a.separation,
        noise_sigma: a.noise_sigma,
        seed: a.seed,
    };
    spec.validate()?;
    let paths = write_synthetic(&spec, a.test_per_class, &a.out)?;
    let r = |p: &PathBuf| relative_to(&a.out, p);
    let config = ExperimentConfig {
        data: DataPaths {
            embeddings: r(&paths.embeddings),
            manifest: r(&paths.manifest),
            prompts: r(&paths.prompts),
            test_embeddings: r(&paths.test_embeddings),
            test_manifest: r(&paths.test_manifest),
        },
        pool: PoolSpec {
            mismatch_ratio: a.k_id as f64 / spec.total_classes() as f64,
            ood_ratio: 0.4,
            seed: a.seed,
        },
        budget: 20,
        rounds: 5,
        strategy: StrategyKind::Clipnal,
        probe: Default::default(),
        tau_grid: Default::default(),
        seed: a.seed,
    };
    let config_path = a.out.join("experiment.json");
    fs::write(&config_path, config.to_json() + "\n").map_err(|e| Error::io(&config_path, e))?;
    log::info!(
        "wrote {} classes x {} samples to {}",
        spec.total_classes(),
        spec.per_class,
        a.out.display()
    );
    Ok(())
}

struct Prepared {
    config: ExperimentConfig,
    data: ExperimentData,
    settings: RunSettings,
}

fn prepare(a: &ExperimentArgs) -> Result<Prepared> {
    let config = load_config(&a.config, a.seed, a.strategy)?;
    let data = ExperimentData::load(&config.data)?;
    let settings = RunSettings::from(&config);
    create_dir(&a.out)?;
    Ok(Prepared { config, data, settings })
}

pub fn pool(a: &ExperimentArgs) -> Result<()> {
    let p = prepare(a)?;
    let pool = initial_pool(&p.data, &p.settings)?;
    log::info!(
        "{} ID classes {:?}; {} unlabeled, {} labeled ID, {} labeled OOD",
        pool.k(),
        pool.id_classes,
        pool.unlabeled.len(),
        pool.labeled_id.len(),
        pool.labeled_ood.len()
    );
    write_json(a.out.join("pool.json"), &pool)
}

#[derive(Debug, Serialize)]
struct TauReport {
    tau: f64,
    /// `null` when the fallback temperature was used.
    tuning_accuracy: Option<f64>,
    weighted: bool,
    labeled_id: usize,
    labeled_ood: usize,
}

pub fn tune_temp(a: &ExperimentArgs) -> Result<()> {
    let p = prepare(a)?;
    let pool = initial_pool(&p.data, &p.settings)?;
    let prompts = p.data.prompts_for(&pool)?;
    let protos = class_prototypes(&p.data.embeddings, &pool.labeled_id, pool.k())?;
    let protos = protos.all_present().then_some(&protos);
    let fit = tune_temperature(&p.data.embeddings, &prompts, protos, &pool, &p.config.tau_grid)?;
    log::info!("tau {} (labeled accuracy {:?})", fit.tau.value(), fit.accuracy);
    let report = TauReport {
        tau: fit.tau.value(),
        tuning_accuracy: fit.accuracy,
        weighted: fit.weighted,
        labeled_id: pool.labeled_id.len(),
        labeled_ood: pool.labeled_ood.len(),
    };
    write_json(a.out.join("tau.json"), &report)
}

pub fn score(a: &ExperimentArgs) -> Result<()> {
    let p = prepare(a)?;
    let pool = initial_pool(&p.data, &p.settings)?;
    let prompts = p.data.prompts_for(&pool)?;
    let assessed = assess_purity(&p.data.embeddings, &prompts, &pool, &p.config.tau_grid)?;
    let rows = score_rows(&assessed);
    let flagged = rows.iter().filter(|r| r.indicator == 1).count();
    log::info!(
        "tau {}: {flagged} of {} unlabeled samples predicted OOD",
        assessed.tau.value(),
        rows.len()
    );
    write_csv(a.out.join("scores.csv"), &rows)?;
    write_json(
        a.out.join("tau.json"),
        &TauReport {
            tau: assessed.tau.value(),
            tuning_accuracy: assessed.tuning_accuracy,
            weighted: assessed.scores.weighted,
            labeled_id: pool.labeled_id.len(),
            labeled_ood: pool.labeled_ood.len(),
        },
    )
}

pub fn run(a: &ExperimentArgs) -> Result<()> {
    let p = prepare(a)?;
    let result = run_with_data(&p.data, &p.settings)?;
    write_run_outputs(&a.out, &result, &p.config)?;
    log::info!(
        "{}: final accuracy {:.4}, AUBC {:.4}{}",
        p.config.strategy,
        result.final_accuracy,
        result.aubc,
        if result.early_exhaustion {
            " (pool exhausted early)"
        } else {
            ""
        }
    );
    Ok(())
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let config = load_config(&a.config, None, a.strategy)?;
    let data = ExperimentData::load(&config.data)?;
    create_dir(&a.out)?;
    let results = run_seeds(&data, &RunSettings::from(&config), &a.seeds);

    // Keep whatever finished before reporting the first failure.
    let mut first_error = None;
    let mut runs = Vec::with_capacity(a.seeds.len());
    for (&seed, result) in a.seeds.iter().zip(results) {
        match result {
            Ok(result) => {
                let cfg = ExperimentConfig { seed, ..config.clone() };
                write_run_outputs(seed_dir(&a.out, seed), &result, &cfg)?;
                runs.push(round_rows(&result));
            }
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    write_csv(a.out.join("aggregate.csv"), &aggregate(&runs))?;
    log::info!("{} seeds written to {}", runs.len(), a.out.display());
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let entries = fs::read_dir(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut seeds: Vec<(u64, PathBuf)> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let seed = name.strip_prefix("seed_")?.parse().ok()?;
            Some((seed, e.path().join("rounds.csv")))
        })
        .filter(|(_, p)| p.is_file())
        .collect();
    seeds.sort();
    if seeds.is_empty() {
        return Err(Error::InsufficientData {
            what: format!("seed_<n>/rounds.csv files under {}", a.out.display()),
            required: 1,
            available: 0,
        });
    }
    let runs = seeds
        .iter()
        .map(|(_, p)| read_csv::<RoundRow>(p))
        .collect::<Result<Vec<_>>>()?;
    let rows = aggregate(&runs);
    println!("round  seeds  precision        test_accuracy");
    for r in &rows {
        println!(
            "{:>5}  {:>5}  {:>6.2} ± {:<6.2}  {:.4} ± {:.4}",
            r.round, r.n_seeds, r.precision_mean, r.precision_std, r.test_accuracy_mean, r.test_accuracy_std
        );
    }
    write_csv(a.out.join("aggregate.csv"), &rows)
}
