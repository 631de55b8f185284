//! Glue between ingested corpora and the model families: cross-validation
//! learners and the smoother's event view of a corpus.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{logreg_predict, logreg_train, mlp_predict, mlp_train, BaselineConfig, LogRegParams, MlpParams};
use crate::data::{Ingested, TargetMatrix};
use crate::error::{Error, Result};
use crate::estimators::{sgd_train, train_generative, GaussianRbmParams, TrainConfig};
use crate::eval::{derive_seed, Learner};
use crate::inference::{predict_scores, InferenceMethod};
use crate::rbm::{DrbmParams, LabeledExample};
use crate::smoother::{smooth_tags, AuxSizes, SmootherParams, TagEvent};

/// Binary examples for the RBM family: a cell is 1 when it is known and its
/// target is at least 0.5, otherwise 0.
pub fn binary_examples(x: ArrayView2<f64>, targets: &TargetMatrix) -> Result<Vec<LabeledExample>> {
    x.rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let y = Array1::from_iter(
                targets
                    .values
                    .row(i)
                    .iter()
                    .zip(targets.mask.row(i))
                    .map(|(&v, &m)| f64::from(u8::from(m && v >= 0.5))),
            );
            LabeledExample::new(row.to_owned(), y)
        })
        .collect()
}

fn score_rows(x: ArrayView2<f64>, labels: usize, f: impl Fn(ndarray::ArrayView1<f64>) -> Result<Array1<f64>>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((x.nrows(), labels));
    for (i, row) in x.rows().into_iter().enumerate() {
        out.row_mut(i).assign(&f(row)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrbmSpec {
    pub hidden: usize,
    pub train: TrainConfig,
    pub inference: InferenceMethod,
}

/// Discriminative RBM trained with `spec.train.estimator`.
pub struct DrbmLearner;

impl Learner for DrbmLearner {
    type Hyper = DrbmSpec;
    type Model = (DrbmParams, InferenceMethod);

    fn fit(&self, spec: &DrbmSpec, x: ArrayView2<f64>, targets: &TargetMatrix, seed: u64) -> Result<Self::Model> {
        let examples = binary_examples(x, targets)?;
        let init = DrbmParams::init(spec.hidden, targets.values.ncols(), x.ncols(), &mut ChaCha8Rng::seed_from_u64(seed));
        let cfg = TrainConfig {
            seed: derive_seed(seed, &[1]),
            ..spec.train.clone()
        };
        Ok((sgd_train(&examples, &init, &cfg)?.params, spec.inference))
    }

    fn score(&self, (p, method): &Self::Model, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        score_rows(x, p.n_labels(), |row| predict_scores(row, p, *method))
    }
}

/// Generative Gaussian-input RBM trained with joint CD; scored through its
/// conditional `p(y | x)`.
pub struct GaussianRbmLearner;

impl Learner for GaussianRbmLearner {
    type Hyper = DrbmSpec;
    type Model = (GaussianRbmParams, InferenceMethod);

    fn fit(&self, spec: &DrbmSpec, x: ArrayView2<f64>, targets: &TargetMatrix, seed: u64) -> Result<Self::Model> {
        let examples = binary_examples(x, targets)?;
        let init =
            GaussianRbmParams::init(spec.hidden, targets.values.ncols(), x.ncols(), &mut ChaCha8Rng::seed_from_u64(seed));
        let cfg = TrainConfig {
            seed: derive_seed(seed, &[1]),
            ..spec.train.clone()
        };
        Ok((train_generative(&examples, &init, &cfg)?.params, spec.inference))
    }

    fn score(&self, (p, method): &Self::Model, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        score_rows(x, p.base.n_labels(), |row| predict_scores(row, &p.base, *method))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub hidden: usize,
    pub train: BaselineConfig,
}

pub struct MlpLearner;

impl Learner for MlpLearner {
    type Hyper = MlpSpec;
    type Model = MlpParams;

    fn fit(&self, spec: &MlpSpec, x: ArrayView2<f64>, targets: &TargetMatrix, seed: u64) -> Result<MlpParams> {
        let init = MlpParams::init(x.ncols(), spec.hidden, targets.values.ncols(), &mut ChaCha8Rng::seed_from_u64(seed));
        let cfg = BaselineConfig {
            seed: derive_seed(seed, &[1]),
            ..spec.train.clone()
        };
        Ok(mlp_train(x, targets, &init, &cfg)?.params)
    }

    fn score(&self, p: &MlpParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        score_rows(x, p.n_labels(), |row| mlp_predict(row, p))
    }
}

pub struct LogRegLearner;

impl Learner for LogRegLearner {
    type Hyper = BaselineConfig;
    type Model = LogRegParams;

    fn fit(&self, cfg: &BaselineConfig, x: ArrayView2<f64>, targets: &TargetMatrix, seed: u64) -> Result<LogRegParams> {
        let cfg = BaselineConfig {
            seed: derive_seed(seed, &[1]),
            ..cfg.clone()
        };
        Ok(logreg_train(x, targets, &cfg)?.params)
    }

    fn score(&self, p: &LogRegParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        score_rows(x, p.n_labels(), |row| logreg_predict(row, p))
    }
}

/// Uniform random scores; the chance-level reference.
pub struct RandomLearner;

impl Learner for RandomLearner {
    type Hyper = ();
    type Model = (u64, usize);

    fn fit(&self, _: &(), _: ArrayView2<f64>, targets: &TargetMatrix, seed: u64) -> Result<Self::Model> {
        Ok((seed, targets.values.ncols()))
    }

    fn score(&self, &(seed, labels): &Self::Model, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[x.nrows() as u64]));
        Ok(Array2::from_shape_fn((x.nrows(), labels), |_| rng.random::<f64>()))
    }
}

/// A corpus seen as smoother events: clips are the corpus items in order,
/// users and tracks are sorted id vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherCorpus {
    pub events: Vec<TagEvent>,
    pub sizes: AuxSizes,
    pub users: Vec<String>,
    pub tracks: Vec<String>,
    pub clips: Vec<String>,
    /// Track index of every clip.
    pub clip_tracks: Vec<usize>,
}

fn index_of(vocab: &[String]) -> BTreeMap<&str, usize> {
    vocab.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
}

pub fn smoother_corpus(data: &Ingested) -> Result<SmootherCorpus> {
    let mut users: Vec<String> = data.events.iter().map(|e| e.user.clone()).collect();
    users.sort();
    users.dedup();
    let mut tracks = data.tracks.clone();
    tracks.sort();
    tracks.dedup();
    let clips = data.items.clone();
    let (user_ix, track_ix, clip_ix) = (index_of(&users), index_of(&tracks), index_of(&clips));
    let clip_tracks: Vec<usize> = data.tracks.iter().map(|t| track_ix[t.as_str()]).collect();
    let events = data
        .events
        .iter()
        .map(|e| {
            let clip = *clip_ix.get(e.item.as_str()).ok_or_else(|| Error::UnknownId {
                kind: "clip",
                id: e.item.clone(),
            })?;
            Ok(TagEvent {
                user: user_ix[e.user.as_str()],
                track: clip_tracks[clip],
                clip,
                y: Array1::from_iter(e.tags.iter().map(|&b| f64::from(u8::from(b)))),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SmootherCorpus {
        sizes: AuxSizes {
            users: users.len(),
            tracks: tracks.len(),
            clips: clips.len(),
        },
        events,
        users,
        tracks,
        clips,
        clip_tracks,
    })
}

/// Smoothed tag probabilities for every clip, `clips × C`.
pub fn smooth_corpus(corpus: &SmootherCorpus, p: &SmootherParams) -> Result<Array2<f64>> {
    let mut by_clip: Vec<Vec<TagEvent>> = vec![Vec::new(); corpus.clips.len()];
    for e in &corpus.events {
        by_clip[e.clip].push(e.clone());
    }
    let mut out = Array2::zeros((corpus.clips.len(), p.n_labels()));
    for (clip, events) in by_clip.iter().enumerate() {
        out.row_mut(clip)
            .assign(&smooth_tags(clip, corpus.clip_tracks[clip], p, events)?);
    }
    Ok(out)
}
