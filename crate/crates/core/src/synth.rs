//! Seeded synthetic corpora with known tag structure.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{normalize_features, FeatureTable, TagState, TagTriple, ThreeStateTagMatrix};
use crate::error::{Error, Result};
use crate::rbm::sigm;

/// Features with fully observed labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    pub x: Array2<f64>,
    pub labels: ThreeStateTagMatrix,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len();
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

fn labeled(x: Array2<f64>, truth: Array2<bool>) -> Result<LabeledCorpus> {
    let (n, c) = truth.dim();
    let table = FeatureTable {
        items: names("item", n),
        values: x,
        normalized: false,
    };
    let x = normalize_features(&table)?.values;
    Ok(LabeledCorpus {
        x,
        labels: ThreeStateTagMatrix {
            items: table.items,
            vocab: names("tag", c),
            cells: truth.mapv(|b| if b { TagState::Positive } else { TagState::Negative }),
        },
    })
}

const TEACHER_BIAS: f64 = -0.8;

/// Per-tag logistic teacher: tag `j` is on with probability
/// `σ(sharpness · g_jᵀ x / ‖g_j‖ + bias)` for random directions `g_j`.
/// With `tied_pairs`, tags `2k` and `2k + 1` share one draw.
fn teacher(
    rng: &mut ChaCha8Rng,
    items: usize,
    tags: usize,
    features: usize,
    bias: f64,
    tied_pairs: bool,
) -> (Array2<f64>, Array2<bool>) {
    const SHARPNESS: f64 = 3.0;
    let x = gaussian_matrix(rng, items, features);
    let mut g = gaussian_matrix(rng, tags, features);
    for mut row in g.rows_mut() {
        let norm = row.dot(&row).sqrt().max(f64::MIN_POSITIVE);
        row /= norm;
    }
    let mut truth = Array2::from_elem((items, tags), false);
    for i in 0..items {
        for j in 0..tags {
            truth[[i, j]] = if tied_pairs && j % 2 == 1 {
                truth[[i, j - 1]]
            } else {
                let z = SHARPNESS * g.row(j).dot(&x.row(i)) + bias;
                rng.random::<f64>() < sigm(z)
            };
        }
    }
    (x, truth)
}

/// Fully labeled corpus from the logistic teacher; features are normalized.
pub fn teacher_corpus(items: usize, tags: usize, features: usize, seed: u64) -> Result<LabeledCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, truth) = teacher(&mut rng, items, tags, features, TEACHER_BIAS, false);
    labeled(x, truth)
}

/// Two tags: tag 0 is on when `|x₀ + x₁| / √2 > 0.8`, a band no single
/// hyperplane separates; tag 1 copies tag 0 with probability `1 - flip`.
/// Only tag 0 depends on `x`.
pub fn dependency_corpus(items: usize, features: usize, flip: f64, seed: u64) -> Result<LabeledCorpus> {
    if features < 2 {
        return Err(Error::InvalidConfig("dependency corpus needs at least 2 features".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian_matrix(&mut rng, items, features);
    let mut truth = Array2::from_elem((items, 2), false);
    for i in 0..items {
        let t = (x[[i, 0]] + x[[i, 1]]).abs() / 2f64.sqrt() > 0.8;
        truth[[i, 0]] = t;
        truth[[i, 1]] = if rng.random::<f64>() < flip { !t } else { t };
    }
    labeled(x, truth)
}

/// A user-level tagging simulation on top of the logistic teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleSpec {
    pub items: usize,
    pub tags: usize,
    pub features: usize,
    /// Size of the user pool.
    pub users: usize,
    /// Distinct users who tag each item.
    pub users_per_item: usize,
    /// Probability that a user applies a true tag.
    pub recall: f64,
    /// Probability that a user applies a false tag.
    pub false_tag_rate: f64,
    /// Consecutive items sharing one track. Clips of a track share its true
    /// tags and its feature vector up to `clip_jitter`.
    pub clips_per_track: usize,
    /// Standard deviation of the per-clip feature noise.
    pub clip_jitter: f64,
    /// Teacher logit offset; more negative makes tags rarer.
    pub tag_bias: f64,
    pub tied_pairs: bool,
    pub seed: u64,
}

impl Default for TripleSpec {
    fn default() -> Self {
        TripleSpec {
            items: 200,
            tags: 6,
            features: 8,
            users: 20,
            users_per_item: 3,
            recall: 0.8,
            false_tag_rate: 0.02,
            clips_per_track: 2,
            clip_jitter: 0.3,
            tag_bias: TEACHER_BIAS,
            tied_pairs: false,
            seed: 0,
        }
    }
}

/// Raw inputs as they would arrive from a tagging service: triples,
/// unnormalized features and an item → track map. The true tag matrix is
/// returned alongside for reference.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleCorpus {
    pub triples: Vec<TagTriple>,
    pub features: FeatureTable,
    pub tracks: BTreeMap<String, String>,
    pub truth: Array2<bool>,
}

pub fn triple_corpus(spec: &TripleSpec) -> Result<TripleCorpus> {
    if spec.users_per_item == 0 || spec.users_per_item > spec.users {
        return Err(Error::InvalidConfig(format!(
            "users per item {} must be between 1 and the pool size {}",
            spec.users_per_item, spec.users
        )));
    }
    if spec.clips_per_track == 0 {
        return Err(Error::InvalidConfig("clips per track must be at least 1".into()));
    }
    if !(spec.clip_jitter >= 0.0 && spec.clip_jitter.is_finite()) {
        return Err(Error::InvalidConfig(format!("clip jitter {} must be finite and non-negative", spec.clip_jitter)));
    }
    for (name, p) in [("recall", spec.recall), ("false tag rate", spec.false_tag_rate)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("{name} {p} is outside [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_tracks = spec.items.div_ceil(spec.clips_per_track);
    let (track_x, track_truth) = teacher(&mut rng, n_tracks, spec.tags, spec.features, spec.tag_bias, spec.tied_pairs);
    let track_of = |i: usize| i / spec.clips_per_track;
    let x = Array2::from_shape_fn((spec.items, spec.features), |(i, k)| {
        track_x[[track_of(i), k]] + spec.clip_jitter * rng.sample::<f64, _>(StandardNormal)
    });
    let truth = Array2::from_shape_fn((spec.items, spec.tags), |(i, j)| track_truth[[track_of(i), j]]);
    let items = names("clip", spec.items);
    let users = names("user", spec.users);
    let tag_names = names("tag", spec.tags);
    let mut pool: Vec<usize> = (0..spec.users).collect();
    let mut triples = Vec::new();
    for (i, item) in items.iter().enumerate() {
        pool.shuffle(&mut rng);
        for &u in &pool[..spec.users_per_item] {
            for (j, tag) in tag_names.iter().enumerate() {
                let p = if truth[[i, j]] { spec.recall } else { spec.false_tag_rate };
                if rng.random::<f64>() < p {
                    triples.push(TagTriple::new(users[u].clone(), item.clone(), tag.clone())?);
                }
            }
        }
    }
    let tracks = items
        .iter()
        .enumerate()
        .map(|(i, item)| (item.clone(), format!("track{:04}", track_of(i))))
        .collect();
    Ok(TripleCorpus {
        triples,
        features: FeatureTable {
            items,
            values: x,
            normalized: false,
        },
        tracks,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(teacher_corpus(50, 4, 5, 3).unwrap(), teacher_corpus(50, 4, 5, 3).unwrap());
        assert_ne!(teacher_corpus(50, 4, 5, 3).unwrap(), teacher_corpus(50, 4, 5, 4).unwrap());
        let spec = TripleSpec::default();
        assert_eq!(triple_corpus(&spec).unwrap(), triple_corpus(&spec).unwrap());
    }

    #[test]
    fn dependency_flip_rate() {
        let c = dependency_corpus(4000, 4, 0.1, 1).unwrap();
        let disagree = c
            .labels
            .cells
            .rows()
            .into_iter()
            .filter(|r| r[0] != r[1])
            .count() as f64
            / 4000.0;
        assert!((disagree - 0.1).abs() < 0.02, "{disagree}");
        let pos = c.labels.column(0).iter().filter(|s| **s == TagState::Positive).count() as f64 / 4000.0;
        assert!(pos > 0.3 && pos < 0.55, "{pos}");
    }

    #[test]
    fn tied_pairs_share_truth() {
        let spec = TripleSpec {
            tied_pairs: true,
            ..TripleSpec::default()
        };
        let c = triple_corpus(&spec).unwrap();
        for row in c.truth.rows() {
            assert_eq!(row[0], row[1]);
            assert_eq!(row[2], row[3]);
        }
        assert_eq!(c.tracks["clip000"], c.tracks["clip001"]);
        assert_ne!(c.tracks["clip001"], c.tracks["clip002"]);
        assert_eq!(c.truth.row(0), c.truth.row(1));
    }

    #[test]
    fn bad_specs_are_rejected() {
        let spec = TripleSpec {
            users_per_item: 50,
            ..TripleSpec::default()
        };
        assert!(triple_corpus(&spec).is_err());
        assert!(dependency_corpus(10, 1, 0.1, 0).is_err());
    }
}
