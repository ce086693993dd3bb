use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::DatasetManifest;
use crate::error::{Error, Result};
use crate::math::mix_seed;

const CLASS_PERMUTATION_SALT: u64 = 1;
const OOD_SAMPLING_SALT: u64 = 2;

/// How an open-set pool is carved out of a labeled dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    /// Fraction of the dataset's classes that are ID, in (0, 1].
    pub mismatch_ratio: f64,
    /// Fraction of the unlabeled pool that is OOD, in [0, 1).
    pub ood_ratio: f64,
    #[serde(default)]
    pub seed: u64,
}

impl PoolSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.mismatch_ratio > 0.0 && self.mismatch_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "pool.mismatch_ratio must be in (0, 1], got {}",
                self.mismatch_ratio
            )));
        }
        if !(self.ood_ratio >= 0.0 && self.ood_ratio < 1.0) {
            return Err(Error::Config(format!(
                "pool.ood_ratio must be in [0, 1), got {}",
                self.ood_ratio
            )));
        }
        Ok(())
    }

    pub fn id_class_count(&self, total_classes: usize) -> usize {
        (self.mismatch_ratio * total_classes as f64).round() as usize
    }

    /// Number of OOD samples that gives the requested pool fraction while
    /// keeping every ID sample.
    pub fn ood_count(&self, id_samples: usize) -> usize {
        (self.ood_ratio / (1.0 - self.ood_ratio) * id_samples as f64).round() as usize
    }
}

/// Unlabeled pool plus the labeled ID and OOD sets collected so far.
///
/// `labeled_id` stores the remapped class in `[0, K)`, i.e. the position of
/// the sample's class inside `id_classes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenSetPool {
    pub unlabeled: Vec<usize>,
    pub labeled_id: Vec<(usize, usize)>,
    pub labeled_ood: Vec<usize>,
    pub id_classes: Vec<usize>,
}

impl OpenSetPool {
    /// Number of ID classes, K.
    pub fn k(&self) -> usize {
        self.id_classes.len()
    }

    /// Position of `class` among the ID classes, if it is one.
    pub fn id_index_of(&self, class: usize) -> Option<usize> {
        self.id_classes.binary_search(&class).ok()
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled_id.len() + self.labeled_ood.len()
    }

    /// All annotated sample indices, ID first.
    pub fn labeled_indices(&self) -> Vec<usize> {
        self.labeled_id
            .iter()
            .map(|&(i, _)| i)
            .chain(self.labeled_ood.iter().copied())
            .collect()
    }

    /// Move `queries` out of the unlabeled pool into the labeled set matching
    /// their ground truth. On error the pool is left unchanged.
    pub fn annotate(&mut self, manifest: &DatasetManifest, queries: &[usize]) -> Result<()> {
        let unlabeled: HashSet<usize> = self.unlabeled.iter().copied().collect();
        let mut seen = HashSet::with_capacity(queries.len());
        let mut missing = Vec::new();
        let mut duplicated = Vec::new();
        for &q in queries {
            if !seen.insert(q) {
                duplicated.push(q);
            } else if !unlabeled.contains(&q) {
                missing.push(q);
            }
        }
        if !missing.is_empty() || !duplicated.is_empty() {
            return Err(Error::Precondition(format!(
                "annotation queries not in the unlabeled pool: {missing:?}; duplicated: {duplicated:?}"
            )));
        }
        if let Some(&q) = queries.iter().find(|&&q| q >= manifest.labels.len()) {
            return Err(Error::Precondition(format!("query {q} has no manifest label")));
        }

        for &q in queries {
            match self.id_index_of(manifest.labels[q]) {
                Some(class) => self.labeled_id.push((q, class)),
                None => self.labeled_ood.push(q),
            }
        }
        self.unlabeled.retain(|i| !seen.contains(i));
        Ok(())
    }
}

/// Resolve the ID classes: the manifest's list when present, otherwise the
/// first `round(mismatch_ratio · K_total)` classes of a seeded permutation.
fn resolve_id_classes(manifest: &DatasetManifest, spec: &PoolSpec) -> Result<Vec<usize>> {
    let total = manifest.num_classes();
    let k = spec.id_class_count(total);
    if k == 0 {
        return Err(Error::Config(format!(
            "mismatch ratio {} selects no ID class out of {total}",
            spec.mismatch_ratio
        )));
    }
    if let Some(ids) = &manifest.id_class_indices {
        if ids.len() != k {
            return Err(Error::Config(format!(
                "manifest designates {} ID classes but mismatch ratio {} implies {k}",
                ids.len(),
                spec.mismatch_ratio
            )));
        }
        return Ok(ids.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, CLASS_PERMUTATION_SALT));
    let mut perm: Vec<usize> = (0..total).collect();
    perm.shuffle(&mut rng);
    let mut ids = perm[..k].to_vec();
    ids.sort_unstable();
    Ok(ids)
}

pub fn build_open_set_pool(manifest: &DatasetManifest, spec: &PoolSpec) -> Result<OpenSetPool> {
    spec.validate()?;
    manifest.validate()?;
    let id_classes = resolve_id_classes(manifest, spec)?;
    let is_id = |label: usize| id_classes.binary_search(&label).is_ok();

    let (id_samples, ood_samples): (Vec<usize>, Vec<usize>) =
        (0..manifest.labels.len()).partition(|&i| is_id(manifest.labels[i]));

    let n_ood = spec.ood_count(id_samples.len());
    if n_ood > ood_samples.len() {
        return Err(Error::InsufficientData {
            what: format!("OOD ratio {} with {} ID samples", spec.ood_ratio, id_samples.len()),
            required: n_ood,
            available: ood_samples.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, OOD_SAMPLING_SALT));
    let mut unlabeled = id_samples;
    unlabeled.extend(
        index::sample(&mut rng, ood_samples.len(), n_ood)
            .into_iter()
            .map(|k| ood_samples[k]),
    );
    unlabeled.sort_unstable();

    Ok(OpenSetPool {
        unlabeled,
        labeled_id: Vec::new(),
        labeled_ood: Vec::new(),
        id_classes,
    })
}

/// Functional form of [`OpenSetPool::annotate`].
pub fn oracle_annotate(pool: &OpenSetPool, manifest: &DatasetManifest, queries: &[usize]) -> Result<OpenSetPool> {
    let mut next = pool.clone();
    next.annotate(manifest, queries)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ten_class_manifest(per_class: usize) -> DatasetManifest {
        DatasetManifest {
            dataset_name: "synthetic-10".into(),
            class_names: (0..10).map(|c| format!("class{c}")).collect(),
            labels: (0..10 * per_class).map(|i| i % 10).collect(),
            id_class_indices: None,
            prompts: None,
        }
    }

    fn spec(m: f64, o: f64, seed: u64) -> PoolSpec {
        PoolSpec {
            mismatch_ratio: m,
            ood_ratio: o,
            seed,
        }
    }

    #[test]
    fn mismatch_02_gives_two_id_classes() {
        let m = ten_class_manifest(20);
        let pool = build_open_set_pool(&m, &spec(0.2, 0.3, 5)).unwrap();
        assert_eq!(pool.k(), 2);
        assert_eq!((0..10).filter(|c| pool.id_index_of(*c).is_none()).count(), 8);
        assert!(pool.labeled_id.is_empty() && pool.labeled_ood.is_empty());
    }

    #[test]
    fn ood_count_formula() {
        assert_eq!(spec(0.5, 0.4, 0).ood_count(9000), 6000);
        assert_eq!(spec(0.5, 0.0, 0).ood_count(9000), 0);
    }

    #[test]
    fn zero_ood_ratio_keeps_only_id_samples() {
        let m = ten_class_manifest(10);
        let pool = build_open_set_pool(&m, &spec(0.3, 0.0, 1)).unwrap();
        let expected: Vec<usize> = (0..m.labels.len())
            .filter(|&i| pool.id_index_of(m.labels[i]).is_some())
            .collect();
        assert_eq!(pool.unlabeled, expected);
    }

    #[test]
    fn insufficient_ood_reports_counts() {
        let m = ten_class_manifest(10);
        match build_open_set_pool(&m, &spec(0.8, 0.5, 1)) {
            Err(Error::InsufficientData {
                required, available, ..
            }) => {
                assert_eq!(required, 80);
                assert_eq!(available, 20);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn manifest_id_classes_take_precedence() {
        let mut m = ten_class_manifest(5);
        m.id_class_indices = Some(vec![3, 7]);
        let pool = build_open_set_pool(&m, &spec(0.2, 0.0, 9)).unwrap();
        assert_eq!(pool.id_classes, vec![3, 7]);
        assert!(build_open_set_pool(&m, &spec(0.3, 0.0, 9)).is_err());
    }

    #[test]
    fn annotate_moves_by_ground_truth() {
        let m = ten_class_manifest(10);
        let pool = build_open_set_pool(&m, &spec(0.2, 0.5, 3)).unwrap();
        let id_q: Vec<usize> = pool
            .unlabeled
            .iter()
            .copied()
            .filter(|&i| pool.id_index_of(m.labels[i]).is_some())
            .take(3)
            .collect();
        let ood_q: Vec<usize> = pool
            .unlabeled
            .iter()
            .copied()
            .filter(|&i| pool.id_index_of(m.labels[i]).is_none())
            .take(2)
            .collect();
        let queries = [id_q[0], ood_q[0], id_q[1], ood_q[1], id_q[2]];

        // Independent recount straight from manifest labels.
        let ids = &pool.id_classes;
        let expect_id = queries.iter().filter(|&&q| ids.contains(&m.labels[q])).count();
        let expect_ood = queries.len() - expect_id;

        let next = oracle_annotate(&pool, &m, &queries).unwrap();
        assert_eq!((next.labeled_id.len(), next.labeled_ood.len()), (expect_id, expect_ood));
        assert_eq!((expect_id, expect_ood), (3, 2));
        assert_eq!(next.unlabeled.len(), pool.unlabeled.len() - 5);
        assert_eq!(next.labeled_id.iter().map(|p| p.0).collect::<Vec<_>>(), id_q);
        for &(i, c) in &next.labeled_id {
            assert_eq!(next.id_classes[c], m.labels[i]);
        }
    }

    #[test]
    fn annotate_rejects_bad_queries_and_keeps_pool() {
        let m = ten_class_manifest(4);
        let mut pool = build_open_set_pool(&m, &spec(0.5, 0.0, 3)).unwrap();
        let q = pool.unlabeled[0];
        let before = pool.clone();
        let err = pool.annotate(&m, &[q, q]).unwrap_err().to_string();
        assert!(err.contains(&q.to_string()));
        pool.annotate(&m, &[q]).unwrap();
        assert!(pool.annotate(&m, &[q]).is_err());
        assert_ne!(pool, before);
    }

    proptest! {
        #[test]
        fn pool_composition_matches_ratio(
            m_idx in 0usize..3, o_idx in 0usize..4, seed in any::<u64>()
        ) {
            let m = ten_class_manifest(60);
            let mismatch = [0.2, 0.3, 0.4][m_idx];
            let ood = [0.0, 0.2, 0.4, 0.6][o_idx];
            let pool = build_open_set_pool(&m, &spec(mismatch, ood, seed)).unwrap();
            let n = pool.unlabeled.len();
            let n_ood = pool.unlabeled.iter().filter(|&&i| pool.id_index_of(m.labels[i]).is_none()).count();
            prop_assert!((n_ood as f64 / n as f64 - ood).abs() <= 1.0 / n as f64);
            prop_assert_eq!(build_open_set_pool(&m, &spec(mismatch, ood, seed)).unwrap(), pool);
        }

        #[test]
        fn annotation_preserves_partition(seed in any::<u64>(), picks in proptest::collection::vec(any::<proptest::sample::Index>(), 1..40)) {
            let m = ten_class_manifest(10);
            let mut pool = build_open_set_pool(&m, &spec(0.4, 0.3, seed)).unwrap();
            let original: HashSet<usize> = pool.unlabeled.iter().copied().collect();
            for chunk in picks.chunks(7) {
                if pool.unlabeled.is_empty() { break; }
                let mut q: Vec<usize> = chunk.iter().map(|ix| pool.unlabeled[ix.index(pool.unlabeled.len())]).collect();
                q.sort_unstable();
                q.dedup();
                pool.annotate(&m, &q).unwrap();
            }
            let mut all: Vec<usize> = pool.labeled_indices();
            all.extend(&pool.unlabeled);
            let as_set: HashSet<usize> = all.iter().copied().collect();
            prop_assert_eq!(as_set.len(), all.len());
            prop_assert_eq!(as_set, original);
        }
    }
}
