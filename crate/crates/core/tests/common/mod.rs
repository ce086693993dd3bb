#![allow(dead_code)]

use astro_float::{BigFloat, Consts, RoundingMode};
use osal_core::embed::{build_open_set_pool, DatasetManifest, EmbeddingMatrix, OpenSetPool, PoolSpec};
use osal_core::probe::ProbeConfig;
use osal_core::purity::{
    class_prototypes, clipn_scores, weighted_scores, PromptEmbeddings, Temperature, TemperatureGrid,
};
use osal_core::sim::{ExperimentData, RunSettings};
use osal_core::strategy::{random_select, StrategyKind};
use osal_core::synth::{generate_synthetic, generate_test_split, SynthSpec};

/// Separable synthetic benchmark: 4 ID + 4 OOD classes, 250 samples each.
pub fn benchmark_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        k_id: 4,
        k_ood: 4,
        dim: 256,
        per_class: 250,
        separation: 6.0,
        noise_sigma: 0.05,
        seed,
    }
}

pub fn benchmark_data(spec: &SynthSpec) -> ExperimentData {
    let (emb, manifest, prompts) = generate_synthetic(spec).unwrap();
    let (test, test_manifest) = generate_test_split(spec, 50).unwrap();
    let classes = manifest.prompts.as_ref().unwrap().classes.clone();
    ExperimentData::new(emb, manifest, prompts, classes, test, test_manifest).unwrap()
}

pub fn benchmark_settings(strategy: StrategyKind, seed: u64) -> RunSettings {
    RunSettings {
        pool: PoolSpec {
            mismatch_ratio: 0.5,
            ood_ratio: 0.4,
            seed,
        },
        budget: 20,
        rounds: 5,
        strategy,
        probe: ProbeConfig {
            steps: 300,
            ..ProbeConfig::default()
        },
        tau_grid: TemperatureGrid::default(),
        seed,
    }
}

/// Whole-dataset pool (ood_ratio 0.5 keeps all 2000 samples) with `n_labeled`
/// random annotations.
pub fn labeled_pool(manifest: &DatasetManifest, n_labeled: usize, seed: u64) -> OpenSetPool {
    let spec = PoolSpec {
        mismatch_ratio: 0.5,
        ood_ratio: 0.5,
        seed,
    };
    let mut pool = build_open_set_pool(manifest, &spec).unwrap();
    let q = random_select(&pool, n_labeled, seed).selected;
    pool.annotate(manifest, &q).unwrap();
    pool
}

pub fn is_ood_truth(manifest: &DatasetManifest, pool: &OpenSetPool, i: usize) -> bool {
    pool.id_index_of(manifest.labels[i]).is_none()
}

/// Straight-from-the-formulas ATD scores in 256-bit floating point.
pub struct OracleRow {
    pub p_yes: Vec<f64>,
    pub p_no: Vec<f64>,
    pub p_id: Vec<f64>,
    pub p_ood: f64,
    pub is_ood: bool,
}

const PREC: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

fn big(v: f64) -> BigFloat {
    BigFloat::from_f64(v, PREC)
}

fn to_f64(v: &BigFloat) -> f64 {
    v.to_string().parse().expect("decimal rendering of a finite value")
}

fn sum(values: &[BigFloat]) -> BigFloat {
    values.iter().fold(big(0.0), |acc, v| acc.add(v, PREC, RM))
}

fn unit_big(v: &[f64]) -> Vec<BigFloat> {
    let squares: Vec<BigFloat> = v.iter().map(|&x| big(x).mul(&big(x), PREC, RM)).collect();
    let n = sum(&squares).sqrt(PREC, RM);
    v.iter().map(|&x| big(x).div(&n, PREC, RM)).collect()
}

fn dot_big(a: &[BigFloat], b: &[BigFloat]) -> BigFloat {
    sum(&a.iter().zip(b).map(|(x, y)| x.mul(y, PREC, RM)).collect::<Vec<_>>())
}

pub fn oracle_row(image: &[f32], yes: &[Vec<f64>], no: &[Vec<f64>], tau: f64) -> OracleRow {
    let mut cc = Consts::new().expect("constants cache");
    let z = unit_big(&image.iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
    let t = big(tau);
    let mut exp_sim = |prompt: &Vec<f64>| dot_big(&z, &unit_big(prompt)).div(&t, PREC, RM).exp(PREC, RM, &mut cc);
    let e_yes: Vec<BigFloat> = yes.iter().map(&mut exp_sim).collect();
    let e_no: Vec<BigFloat> = no.iter().map(&mut exp_sim).collect();
    let denom = sum(&e_yes);
    let one = big(1.0);
    let p_yes: Vec<BigFloat> = e_yes.iter().map(|e| e.div(&denom, PREC, RM)).collect();
    let p_no: Vec<BigFloat> = e_yes
        .iter()
        .zip(&e_no)
        .map(|(y, n)| n.div(&y.add(n, PREC, RM), PREC, RM))
        .collect();
    let p_id: Vec<BigFloat> = p_yes
        .iter()
        .zip(&p_no)
        .map(|(py, pn)| py.mul(&one.sub(pn, PREC, RM), PREC, RM))
        .collect();
    let p_ood = one.sub(&sum(&p_id), PREC, RM);
    let is_ood = p_id.iter().all(|p| p_ood.cmp(p).is_some_and(|c| c > 0));
    OracleRow {
        p_yes: p_yes.iter().map(to_f64).collect(),
        p_no: p_no.iter().map(to_f64).collect(),
        p_id: p_id.iter().map(to_f64).collect(),
        p_ood: to_f64(&p_ood),
        is_ood,
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn random_matrix(rng: &mut impl rand::Rng, rows: usize, dim: usize) -> EmbeddingMatrix {
    use rand_distr::StandardNormal;
    let data = (0..rows * dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
        .collect();
    EmbeddingMatrix::new(rows, dim, data).unwrap()
}

pub fn random_prompts(
    rng: &mut impl rand::Rng,
    k: usize,
    dim: usize,
) -> (PromptEmbeddings, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    use osal_core::math::RowMatrix;
    use rand_distr::StandardNormal;
    let mut draw = || -> Vec<Vec<f64>> {
        (0..k)
            .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    };
    let yes = draw();
    let no = draw();
    let p = PromptEmbeddings::new(RowMatrix::from_rows(&yes), RowMatrix::from_rows(&no), 1).unwrap();
    (p, yes, no)
}

/// Exhaustive oracle: score the full labeled set at every grid point through
/// the public scoring functions and take the first best.
pub fn exhaustive_argmax(
    images: &EmbeddingMatrix,
    prompts: &PromptEmbeddings,
    pool: &OpenSetPool,
    grid: &TemperatureGrid,
) -> (f64, f64) {
    let rows = pool.labeled_indices();
    let sub = images.select_rows(&rows);
    let protos = class_prototypes(images, &pool.labeled_id, pool.k()).unwrap();
    let mut best = (f64::NAN, -1.0);
    for i in 0..grid.steps {
        let tau = grid.min + (grid.max - grid.min) * i as f64 / (grid.steps - 1) as f64;
        let t = Temperature::new(tau).unwrap();
        let mut s = clipn_scores(&sub, prompts, t).unwrap();
        if protos.all_present() {
            s = weighted_scores(&s, &protos, &sub, t).unwrap();
        }
        let correct = (0..rows.len())
            .filter(|&r| s.indicator[r] == (r >= pool.labeled_id.len()))
            .count();
        let acc = correct as f64 / rows.len() as f64;
        if acc > best.1 {
            best = (tau, acc);
        }
    }
    best
}
