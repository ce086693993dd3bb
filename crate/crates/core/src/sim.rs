//! The simulated annotation loop and its metrics.
//!
//! Round 0 spends one budget on a random draw; rounds 1..=R query with the
//! configured strategy. After every round the probe is reinitialized and
//! retrained on all labeled ID data and scored on the ID-only test split.

use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::config::{DataPaths, ExperimentConfig};
use crate::embed::{build_open_set_pool, read_embeddings, DatasetManifest, EmbeddingMatrix, OpenSetPool, PoolSpec};
use crate::error::{Error, Result};
use crate::math::mix_seed;
use crate::par;
use crate::probe::{evaluate_accuracy, train_probe, ProbeConfig, ProbeModel};
use crate::purity::{PromptEmbeddings, TemperatureGrid};
use crate::strategy::{
    clipnal_select, conf_scores, coreset_select, random_select, top_by_score, QueryResult, StrategyKind,
};

const QUERY_SALT: u64 = 0x5345_4c45;
const PROBE_SALT: u64 = 0x5052_4f42;

/// Everything a run needs besides its settings, loaded once and shareable
/// across seeds.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub embeddings: EmbeddingMatrix,
    pub manifest: DatasetManifest,
    pub prompts: PromptEmbeddings,
    /// Class index of each prompt row.
    pub prompt_classes: Vec<usize>,
    pub test_embeddings: EmbeddingMatrix,
    pub test_manifest: DatasetManifest,
}

impl ExperimentData {
    pub fn new(
        embeddings: EmbeddingMatrix,
        manifest: DatasetManifest,
        prompts: PromptEmbeddings,
        prompt_classes: Vec<usize>,
        test_embeddings: EmbeddingMatrix,
        test_manifest: DatasetManifest,
    ) -> Result<Self> {
        manifest.validate_against(&embeddings)?;
        test_manifest.validate_against(&test_embeddings)?;
        if test_manifest.num_classes() != manifest.num_classes() {
            return Err(Error::Manifest(format!(
                "test manifest has {} classes, training manifest {}",
                test_manifest.num_classes(),
                manifest.num_classes()
            )));
        }
        for m in [&prompts.dim(), &test_embeddings.dim()] {
            if *m != embeddings.dim() {
                return Err(Error::DimensionMismatch {
                    expected: embeddings.dim(),
                    found: *m,
                });
            }
        }
        if prompt_classes.len() != prompts.k() {
            return Err(Error::Prompt(format!(
                "{} prompt rows per block but {} classes listed",
                prompts.k(),
                prompt_classes.len()
            )));
        }
        Ok(Self {
            embeddings,
            manifest,
            prompts,
            prompt_classes,
            test_embeddings,
            test_manifest,
        })
    }

    pub fn load(paths: &DataPaths) -> Result<Self> {
        let embeddings = read_embeddings(&paths.embeddings)?;
        let manifest = DatasetManifest::read(&paths.manifest)?;
        let prompt_matrix = read_embeddings(&paths.prompts)?;
        let k_rows = prompt_matrix.rows() / 2;
        let (prompt_classes, templates) = match &manifest.prompts {
            Some(meta) => (meta.classes.clone(), meta.templates_used),
            None if k_rows == manifest.num_classes() => ((0..k_rows).collect(), 1),
            None => match &manifest.id_class_indices {
                Some(ids) if ids.len() == k_rows => (ids.clone(), 1),
                _ => {
                    return Err(Error::Prompt(format!(
                    "cannot tell which classes the {} prompt rows describe; add a \"prompts\" entry to the manifest",
                    prompt_matrix.rows()
                )))
                }
            },
        };
        let prompts = PromptEmbeddings::from_matrix(&prompt_matrix, templates)?;
        let test_embeddings = read_embeddings(&paths.test_embeddings)?;
        let test_manifest = DatasetManifest::read(&paths.test_manifest)?;
        Self::new(
            embeddings,
            manifest,
            prompts,
            prompt_classes,
            test_embeddings,
            test_manifest,
        )
    }

    /// Prompt rows for the pool's ID classes, in pool order.
    pub fn prompts_for(&self, pool: &OpenSetPool) -> Result<PromptEmbeddings> {
        let rows = pool
            .id_classes
            .iter()
            .map(|c| {
                self.prompt_classes
                    .iter()
                    .position(|p| p == c)
                    .ok_or_else(|| Error::Prompt(format!("no prompt embeddings for ID class {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.prompts.select_classes(&rows)
    }

    /// ID-only test rows with labels remapped to `[0, K)`.
    pub fn test_split(&self, pool: &OpenSetPool) -> Result<(EmbeddingMatrix, Vec<usize>)> {
        let (rows, labels): (Vec<usize>, Vec<usize>) = self
            .test_manifest
            .labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| pool.id_index_of(l).map(|c| (i, c)))
            .unzip();
        if rows.is_empty() {
            return Err(Error::InsufficientData {
                what: "ID-class test split".into(),
                required: 1,
                available: 0,
            });
        }
        Ok((self.test_embeddings.select_rows(&rows), labels))
    }
}

/// Run parameters that do not involve files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub pool: PoolSpec,
    pub budget: usize,
    pub rounds: usize,
    pub strategy: StrategyKind,
    pub probe: ProbeConfig,
    pub tau_grid: TemperatureGrid,
    pub seed: u64,
}

impl From<&ExperimentConfig> for RunSettings {
    fn from(c: &ExperimentConfig) -> Self {
        Self {
            pool: c.pool,
            budget: c.budget,
            rounds: c.rounds,
            strategy: c.strategy,
            probe: c.probe,
            tau_grid: c.tau_grid,
            seed: c.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub selected: Vec<usize>,
    pub id_selected: usize,
    /// Percent of this round's selection that is ID.
    pub precision: f64,
    pub test_accuracy: f64,
    pub tau: Option<f64>,
    pub fallback_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub logs: Vec<RoundLog>,
    pub aubc: f64,
    pub final_accuracy: f64,
    pub early_exhaustion: bool,
    pub initial_pool_size: usize,
    pub final_pool: OpenSetPool,
}

/// `100 · (#ID among selected) / |selected|`.
pub fn precision_metric(selected: &[usize], manifest: &DatasetManifest, id_classes: &[usize]) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::Precondition("precision of an empty selection".into()));
    }
    let id = count_id(selected, manifest, id_classes);
    Ok(100.0 * id as f64 / selected.len() as f64)
}

fn count_id(selected: &[usize], manifest: &DatasetManifest, id_classes: &[usize]) -> usize {
    selected
        .iter()
        .filter(|&&i| id_classes.binary_search(&manifest.labels[i]).is_ok())
        .count()
}

/// Area under the accuracy-vs-round curve by the trapezoid rule, divided by
/// the number of intervals. Summed in exact rational arithmetic so that a
/// constant curve returns its value unchanged.
pub fn aubc_metric(accuracies: &[f64]) -> Result<f64> {
    if accuracies.len() < 2 {
        return Err(Error::Precondition(format!(
            "AUBC needs at least 2 points, got {}",
            accuracies.len()
        )));
    }
    let exact = |v: f64| BigRational::from_float(v).ok_or_else(|| Error::NonFinite("accuracy curve".into()));
    let mut twice_area = BigRational::zero();
    for w in accuracies.windows(2) {
        twice_area += exact(w[0])? + exact(w[1])?;
    }
    let intervals = BigRational::from_integer(((accuracies.len() - 1) * 2).into());
    Ok((twice_area / intervals).to_f64().expect("bounded ratio converts"))
}

fn train_or_uniform(
    data_images: &EmbeddingMatrix,
    pool: &OpenSetPool,
    probe: &ProbeConfig,
    seed: u64,
) -> Result<ProbeModel> {
    if pool.labeled_id.is_empty() {
        log::warn!("no labeled ID data yet; using an untrained probe");
        return Ok(ProbeModel::zeros(pool.k(), data_images.dim()));
    }
    let cfg = ProbeConfig { seed, ..*probe };
    train_probe(data_images, &pool.labeled_id, pool.k(), &cfg)
}

fn select(
    strategy: StrategyKind,
    data: &ExperimentData,
    prompts: &PromptEmbeddings,
    pool: &OpenSetPool,
    model: &ProbeModel,
    settings: &RunSettings,
    seed: u64,
) -> Result<(QueryResult, Option<f64>)> {
    let budget = settings.budget;
    Ok(match strategy {
        StrategyKind::Random => (random_select(pool, budget, seed), None),
        StrategyKind::Conf => {
            let scores = conf_scores(model, &data.embeddings, &pool.unlabeled)?;
            (top_by_score(&pool.unlabeled, &scores, budget), None)
        }
        StrategyKind::Coreset => (
            coreset_select(&data.embeddings, &pool.labeled_indices(), &pool.unlabeled, budget)?,
            None,
        ),
        StrategyKind::Clipnal => {
            let sel = clipnal_select(pool, &data.embeddings, prompts, model, budget, &settings.tau_grid)?;
            (sel.query, Some(sel.tau.value()))
        }
    })
}

fn query_seed(seed: u64, round: usize) -> u64 {
    mix_seed(seed, QUERY_SALT ^ round as u64)
}

/// The pool as it stands after round 0 of [`run_with_data`]: built from
/// `settings.pool` with one random budget annotated.
pub fn initial_pool(data: &ExperimentData, settings: &RunSettings) -> Result<OpenSetPool> {
    let mut pool = build_open_set_pool(&data.manifest, &settings.pool)?;
    let first = random_select(&pool, settings.budget, query_seed(settings.seed, 0));
    pool.annotate(&data.manifest, &first.selected)?;
    Ok(pool)
}

/// Run one experiment on preloaded data.
pub fn run_with_data(data: &ExperimentData, settings: &RunSettings) -> Result<ExperimentResult> {
    if settings.budget == 0 || settings.rounds == 0 {
        return Err(Error::Config("budget and rounds must be at least 1".into()));
    }
    settings.probe.validate()?;
    settings.tau_grid.validate()?;
    let mut pool = build_open_set_pool(&data.manifest, &settings.pool)?;
    if pool.k() < 2 {
        return Err(Error::Config(format!(
            "the classifier needs at least 2 ID classes, pool has {}",
            pool.k()
        )));
    }
    let prompts = data.prompts_for(&pool)?;
    let (test_images, test_labels) = data.test_split(&pool)?;
    let initial_pool_size = pool.unlabeled.len();

    let mut logs = Vec::with_capacity(settings.rounds + 1);
    let mut model = ProbeModel::zeros(pool.k(), data.embeddings.dim());
    let mut early_exhaustion = false;
    for round in 0..=settings.rounds {
        if pool.unlabeled.is_empty() {
            log::info!("unlabeled pool exhausted before round {round}");
            early_exhaustion = true;
            break;
        }
        let query_seed = mix_seed(settings.seed, QUERY_SALT ^ round as u64);
        let strategy = if round == 0 {
            StrategyKind::Random
        } else {
            settings.strategy
        };
        let (query, tau) = select(strategy, data, &prompts, &pool, &model, settings, query_seed)?;
        if query.selected.len() < settings.budget {
            early_exhaustion = true;
        }

        let id_selected = count_id(&query.selected, &data.manifest, &pool.id_classes);
        let precision = precision_metric(&query.selected, &data.manifest, &pool.id_classes)?;
        pool.annotate(&data.manifest, &query.selected)?;

        let probe_seed = mix_seed(settings.seed ^ settings.probe.seed, PROBE_SALT ^ round as u64);
        model = train_or_uniform(&data.embeddings, &pool, &settings.probe, probe_seed)?;
        let test_accuracy = evaluate_accuracy(&model, &test_images, &test_labels)?;
        log::debug!(
            "round {round}: {} selected, precision {precision:.1}%, accuracy {test_accuracy:.4}",
            query.selected.len()
        );
        logs.push(RoundLog {
            round,
            selected: query.selected,
            id_selected,
            precision,
            test_accuracy,
            tau,
            fallback_used: query.fallback_used,
        });
    }

    let accs: Vec<f64> = logs.iter().map(|l| l.test_accuracy).collect();
    let final_accuracy = *accs.last().expect("round 0 always runs");
    let aubc = if accs.len() >= 2 {
        aubc_metric(&accs)?
    } else {
        final_accuracy
    };
    Ok(ExperimentResult {
        logs,
        aubc,
        final_accuracy,
        early_exhaustion,
        initial_pool_size,
        final_pool: pool,
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let data = ExperimentData::load(&config.data)?;
    run_with_data(&data, &RunSettings::from(config))
}

/// Independent runs that differ only in `seed`, executed in parallel when
/// the `parallel` feature is on. Results are in `seeds` order.
pub fn run_seeds(data: &ExperimentData, settings: &RunSettings, seeds: &[u64]) -> Vec<Result<ExperimentResult>> {
    par::map_slice(seeds, |&seed| run_with_data(data, &RunSettings { seed, ..*settings }))
}
