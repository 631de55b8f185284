use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use multitag::baselines::{logreg_train, mlp_train, BaselineConfig, MlpParams, LOGREG_DEFAULT_LEARNING_RATE, MLP_DEFAULT_HIDDEN, MLP_DEFAULT_LEARNING_RATE};
use multitag::checks::{run_all, SuiteConfig};
use multitag::data::{
    ingest, make_folds, read_features, read_ingested, read_items, read_targets, read_triples, write_features,
    write_ingested, write_items, write_targets, write_triples, IngestOptions, Ingested, TargetMatrix,
};
use multitag::estimators::{sgd_train, train_generative, EpochRecord, EstimatorKind, GaussianRbmParams, TrainConfig};
use multitag::eval::{cv_run, derive_seed, significance_counts, summary_tsv, AucReport, CvData, CvOutcome, Learner};
use multitag::inference::{InferenceMethod, PairNormalizer};
use multitag::modelfile::{Model, ModelKind, ModelParams};
use multitag::oracle::ENUMERATION_LIMIT;
use multitag::pipeline::{
    binary_examples, smoother_corpus, DrbmLearner, DrbmSpec, GaussianRbmLearner, LogRegLearner, MlpLearner,
    MlpSpec, RandomLearner,
};
use multitag::rbm::DrbmParams;
use multitag::smoother::{smooth_tags, smoothed_dataset, train_smoother, SmootherParams, TagEvent};
use multitag::synth::{triple_corpus, TripleSpec};
use multitag::{Error, Result};

use crate::config::Layers;
use crate::{EvalArgs, IngestArgs, OracleArgs, PredictArgs, SmoothArgs, SynthArgs, TrainArgs};

pub const TRIPLES_FILE: &str = "triples.tsv";
pub const RAW_FEATURES_FILE: &str = "features.tsv";
pub const ITEMS_FILE: &str = "items.tsv";

pub const REPORT_FILE: &str = "report.tsv";
pub const SUMMARY_FILE: &str = "summary.tsv";
pub const SELECTION_FILE: &str = "selection.tsv";
pub const SIGNIFICANCE_FILE: &str = "significance.tsv";

const DRBM_DEFAULT_HIDDEN: usize = 32;
const SMOOTHER_DEFAULT_HIDDEN: usize = 16;
const RBM_DEFAULT_LEARNING_RATE: f64 = 0.01;
const SMOOTHER_DEFAULT_L1: f64 = 0.001;

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// ingest

pub fn ingest_cmd(args: IngestArgs, layers: &Layers) -> Result<()> {
    let triples_path: PathBuf = layers.required(args.triples, "triples")?;
    let features_path: PathBuf = layers.required(args.features, "features")?;
    let items_path = layers.path(args.items, "items")?;
    let out: PathBuf = layers.required(args.out, "out")?;
    let opts = IngestOptions {
        vocab_size: layers.or(args.vocab_size, "vocab-size", 50)?,
        min_positive: layers.or(args.min_positive, "min-positive", 2)?,
    };
    let header = layers.switch(args.features_header, "features-header")?;

    let triples = read_triples(&triples_path)?;
    let features = read_features(&features_path, header)?;
    let item_tracks = items_path.as_deref().map(read_items).transpose()?;
    let (data, warnings) = ingest(&triples, &features, item_tracks.as_ref(), opts)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    write_ingested(&out, &data)?;
    println!(
        "ingested {} triples into {} items × {} tags ({} user events) in {}",
        triples.len(),
        data.items.len(),
        data.vocab().len(),
        data.events.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// shared model settings

fn load_data(layers: &Layers, flag: Option<PathBuf>) -> Result<Ingested> {
    let dir: PathBuf = layers.required(flag, "data")?;
    read_ingested(&dir)
}

/// Training targets: the raw three-state labels, or a smoothed-targets file
/// whose rows and columns must match the corpus.
fn load_targets(data: &Ingested, path: Option<&Path>) -> Result<TargetMatrix> {
    let Some(path) = path else {
        return Ok(data.labels.to_targets());
    };
    let (items, vocab, values) = read_targets(path)?;
    if vocab != data.vocab() {
        return Err(Error::InvalidValue(format!("{} has a different tag vocabulary", path.display())));
    }
    if items != data.items {
        let missing: Vec<&String> = data.items.iter().filter(|i| !items.contains(i)).take(10).collect();
        return Err(Error::InvalidValue(format!(
            "{} lists different items than the corpus (missing e.g. {missing:?})",
            path.display()
        )));
    }
    smoothed_dataset(&data.labels, &values)
}

fn inference_method(name: &str, iterations: usize, damping: f64) -> Result<InferenceMethod> {
    match name {
        "lbp" => Ok(InferenceMethod::Lbp { iterations, damping }),
        "mf" => Ok(InferenceMethod::Mf { iterations }),
        other => Err(Error::InvalidConfig(format!("unknown inference method `{other}` (lbp or mf)"))),
    }
}

struct Hyper {
    estimator: EstimatorKind,
    k: usize,
    beta: f64,
    lr: f64,
    epochs: usize,
    hidden: usize,
    l1: f64,
    seed: u64,
    inference: String,
    inference_k: usize,
}

impl Hyper {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            estimator: self.estimator,
            iterations: self.k,
            learning_rate: self.lr,
            damping: self.beta,
            epochs: self.epochs,
            seed: derive_seed(self.seed, &[1]),
            l1: self.l1,
        }
    }

    fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            seed: derive_seed(self.seed, &[1]),
        }
    }

    fn inference(&self) -> Result<InferenceMethod> {
        inference_method(&self.inference, self.inference_k, self.beta)
    }

    fn settings(&self, kind: ModelKind) -> BTreeMap<String, String> {
        let mut s = BTreeMap::from([
            ("kind".to_owned(), kind.name().to_owned()),
            ("lr".to_owned(), format!("{:?}", self.lr)),
            ("epochs".to_owned(), self.epochs.to_string()),
            ("seed".to_owned(), self.seed.to_string()),
        ]);
        if kind != ModelKind::Logreg {
            s.insert("hidden".into(), self.hidden.to_string());
        }
        if matches!(kind, ModelKind::Drbm | ModelKind::GaussianRbm | ModelKind::Smoother) {
            s.insert("estimator".into(), self.estimator.name().into());
            s.insert("k".into(), self.k.to_string());
            s.insert("beta".into(), format!("{:?}", self.beta));
        }
        if matches!(kind, ModelKind::Drbm | ModelKind::GaussianRbm) {
            s.insert("inference".into(), self.inference.clone());
            s.insert("inference-k".into(), self.inference_k.to_string());
        }
        if kind == ModelKind::Smoother {
            s.insert("l1".into(), format!("{:?}", self.l1));
        }
        s
    }
}

fn default_lr(kind: ModelKind) -> f64 {
    match kind {
        ModelKind::Mlp => MLP_DEFAULT_LEARNING_RATE,
        ModelKind::Logreg => LOGREG_DEFAULT_LEARNING_RATE,
        _ => RBM_DEFAULT_LEARNING_RATE,
    }
}

/// One Gibbs step for CD-style estimators; LBP needs several sweeps to mix.
fn default_k(estimator: EstimatorKind) -> usize {
    match estimator {
        EstimatorKind::Lbp => 10,
        _ => 1,
    }
}

fn default_epochs(kind: ModelKind) -> usize {
    match kind {
        ModelKind::Mlp | ModelKind::Logreg => 50,
        _ => 20,
    }
}

fn default_hidden(kind: ModelKind) -> usize {
    match kind {
        ModelKind::Mlp => MLP_DEFAULT_HIDDEN,
        ModelKind::Smoother => SMOOTHER_DEFAULT_HIDDEN,
        _ => DRBM_DEFAULT_HIDDEN,
    }
}

// ---------------------------------------------------------------------------
// train

fn log_tsv(log: &[EpochRecord]) -> String {
    let mut out = String::from("epoch\tobjective\tseconds\n");
    for r in log {
        writeln!(out, "{}\t{:?}\t{:.6}", r.epoch, r.objective, r.seconds).unwrap();
    }
    out
}

pub fn train_cmd(args: TrainArgs, layers: &Layers) -> Result<()> {
    let data = load_data(layers, args.data)?;
    let model_path: PathBuf = layers.required(args.model, "model")?;
    let kind: ModelKind = layers.or(args.kind, "kind", ModelKind::Drbm)?;
    let seed = layers.seed(args.seed)?;
    let estimator = layers.or(args.estimator, "estimator", EstimatorKind::Cd)?;
    let hyper = Hyper {
        estimator,
        k: layers.or(args.k, "k", default_k(estimator))?,
        beta: layers.or(args.beta, "beta", 0.9)?,
        lr: layers.or(args.lr, "lr", default_lr(kind))?,
        epochs: layers.or(args.epochs, "epochs", default_epochs(kind))?,
        hidden: layers.or(args.hidden, "hidden", default_hidden(kind))?,
        l1: layers.or(args.l1, "l1", if kind == ModelKind::Smoother { SMOOTHER_DEFAULT_L1 } else { 0.0 })?,
        seed,
        inference: layers.or(args.inference, "inference", "lbp".to_owned())?,
        inference_k: layers.or(args.inference_k, "inference-k", 10)?,
    };
    let targets_path = layers.path(args.targets, "targets")?;
    if targets_path.is_some() && kind == ModelKind::Smoother {
        return Err(Error::InvalidConfig("the smoother trains on user events, not on --targets".into()));
    }
    if kind == ModelKind::GaussianRbm && hyper.estimator != EstimatorKind::Cd {
        return Err(Error::InvalidConfig("the Gaussian RBM trains with joint CD only (--estimator cd)".into()));
    }
    hyper.inference()?;
    let targets = load_targets(&data, targets_path.as_deref())?;
    let x = data.x().view();
    let labels = data.vocab().len();
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);

    let mut vocabularies = BTreeMap::new();
    let (params, log) = match kind {
        ModelKind::Drbm => {
            let init = DrbmParams::init(hyper.hidden, labels, x.ncols(), &mut init_rng);
            let trained = sgd_train(&binary_examples(x, &targets)?, &init, &hyper.train_config())?;
            (ModelParams::Drbm(trained.params), trained.log)
        }
        ModelKind::GaussianRbm => {
            let init = GaussianRbmParams::init(hyper.hidden, labels, x.ncols(), &mut init_rng);
            let trained = train_generative(&binary_examples(x, &targets)?, &init, &hyper.train_config())?;
            (ModelParams::GaussianRbm(trained.params), trained.log)
        }
        ModelKind::Mlp => {
            let init = MlpParams::init(x.ncols(), hyper.hidden, labels, &mut init_rng);
            let trained = mlp_train(x, &targets, &init, &hyper.baseline_config())?;
            (ModelParams::Mlp(trained.params), trained.log)
        }
        ModelKind::Logreg => {
            let trained = logreg_train(x, &targets, &hyper.baseline_config())?;
            (ModelParams::Logreg(trained.params), trained.log)
        }
        ModelKind::Smoother => {
            let corpus = smoother_corpus(&data)?;
            let init = SmootherParams::init(hyper.hidden, labels, corpus.sizes, &mut init_rng);
            let trained = train_smoother(&corpus.events, &init, &hyper.train_config())?;
            vocabularies.insert("users".to_owned(), corpus.users);
            vocabularies.insert("tracks".to_owned(), corpus.tracks);
            vocabularies.insert("clips".to_owned(), corpus.clips);
            (ModelParams::Smoother(trained.params), trained.log)
        }
    };
    let mut model = Model::new(params, data.vocab().to_vec());
    model.vocabularies = vocabularies;
    model.settings = hyper.settings(kind);
    if let Some(t) = &targets_path {
        model.settings.insert("targets".into(), t.display().to_string());
    }
    model.save(&model_path)?;
    let log_path = model_path.with_extension("log.tsv");
    write_file(&log_path, &log_tsv(&log))?;
    match log.last() {
        Some(last) => println!("trained {} for {} epochs: {last}", kind.name(), log.len()),
        None => println!("saved untrained {} (0 epochs)", kind.name()),
    }
    println!("model written to {}", model_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// smooth / predict

pub fn smooth_cmd(args: SmoothArgs, layers: &Layers) -> Result<()> {
    let data = load_data(layers, args.data)?;
    let model_path: PathBuf = layers.required(args.model, "model")?;
    let out: PathBuf = layers.required(args.out, "out")?;
    let model = Model::load(&model_path)?;
    let ModelParams::Smoother(p) = &model.params else {
        return Err(Error::InvalidConfig(format!(
            "{} holds a {} model, not a smoother",
            model_path.display(),
            model.kind().name()
        )));
    };
    let smoothed = smooth_known_clips(&data, &model, p)?;
    write_targets(&out, &data.items, data.vocab(), &smoothed)?;
    println!("smoothed {} clips into {}", data.items.len(), out.display());
    Ok(())
}

/// Model column of every corpus tag; the two vocabularies must hold the
/// same tags, possibly in a different popularity order.
fn tag_columns(model_tags: &[String], vocab: &[String]) -> Result<Vec<usize>> {
    let index: BTreeMap<&str, usize> = model_tags.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let columns: Option<Vec<usize>> = vocab.iter().map(|t| index.get(t.as_str()).copied()).collect();
    match columns {
        Some(c) if c.len() == model_tags.len() => Ok(c),
        _ => Err(Error::InvalidValue(format!(
            "model tags {model_tags:?} differ from corpus tags {vocab:?}"
        ))),
    }
}

/// Smooth every corpus clip with a smoother trained on possibly different
/// corpus; clips and tracks are matched by id and must all be known.
fn smooth_known_clips(data: &Ingested, model: &Model, p: &SmootherParams) -> Result<Array2<f64>> {
    let index = |name: &str| -> Result<BTreeMap<&str, usize>> {
        let vocab = model
            .vocabularies
            .get(name)
            .ok_or_else(|| Error::ModelFormat(format!("smoother model lacks the `{name}` vocabulary")))?;
        Ok(vocab.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect())
    };
    let columns = tag_columns(&model.tags, data.vocab())?;
    let (track_ix, clip_ix) = (index("tracks")?, index("clips")?);
    let unknown: Vec<&str> = data
        .items
        .iter()
        .map(String::as_str)
        .filter(|i| !clip_ix.contains_key(i))
        .collect();
    if !unknown.is_empty() {
        let shown: Vec<&str> = unknown.iter().take(20).copied().collect();
        return Err(Error::InvalidValue(format!(
            "{} clip ids are unknown to the smoother: {}",
            unknown.len(),
            shown.join(", ")
        )));
    }
    let row_of: BTreeMap<&str, usize> = data.items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut events: Vec<Vec<TagEvent>> = vec![Vec::new(); data.items.len()];
    let mut out = Array2::zeros((data.items.len(), p.n_labels()));
    let tracks = data
        .tracks
        .iter()
        .map(|t| {
            track_ix.get(t.as_str()).copied().ok_or_else(|| Error::UnknownId {
                kind: "track",
                id: t.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for e in &data.events {
        let row = row_of[e.item.as_str()];
        events[row].push(TagEvent {
            // smoothing ignores who tagged; only the tag average matters
            user: 0,
            track: tracks[row],
            clip: clip_ix[e.item.as_str()],
            y: {
                let mut y = Array1::zeros(columns.len());
                for (&col, &b) in columns.iter().zip(&e.tags) {
                    y[col] = f64::from(u8::from(b));
                }
                y
            },
        });
    }
    for (row, item) in data.items.iter().enumerate() {
        out.row_mut(row)
            .assign(&smooth_tags(clip_ix[item.as_str()], tracks[row], p, &events[row])?);
    }
    Ok(out.select(Axis(1), &columns))
}

pub fn predict_cmd(args: PredictArgs, layers: &Layers) -> Result<()> {
    let data = load_data(layers, args.data)?;
    let model_path: PathBuf = layers.required(args.model, "model")?;
    let out: PathBuf = layers.required(args.out, "out")?;
    let model = Model::load(&model_path)?;
    let layers = layers.clone().with_recorded(&model.settings);
    let columns = tag_columns(&model.tags, data.vocab())?;
    let method = inference_method(
        &layers.or(args.inference, "inference", "lbp".to_owned())?,
        layers.or(args.inference_k, "inference-k", 10)?,
        layers.or(args.beta, "beta", 0.9)?,
    )?;
    let scores = model.predict(data.x().view(), method)?.select(Axis(1), &columns);
    write_targets(&out, &data.items, data.vocab(), &scores)?;
    println!("scored {} items into {}", data.items.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

fn product<A: Clone, B: Clone>(a: &[A], b: &[B]) -> Vec<(A, B)> {
    a.iter().flat_map(|x| b.iter().map(move |y| (x.clone(), y.clone()))).collect()
}

struct EvalResult {
    name: String,
    test: AucReport,
    selection: String,
}

fn run<L: Learner>(name: &str, learner: &L, grid: Vec<L::Hyper>, describe: impl Fn(&L::Hyper) -> String, data: &CvData<'_>, folds: &multitag::data::FoldSplit, seed: u64) -> Result<EvalResult>
where
    L::Hyper: Clone + Send + Sync,
{
    let out: CvOutcome<L::Hyper> = cv_run(name, learner, data, &grid, folds, seed)?;
    let mut selection = String::from("grid_point\tsettings\tvalidation_grand_mean\tselected\n");
    for (i, (h, rep)) in grid.iter().zip(&out.validation).enumerate() {
        let gm = rep.grand_mean().map_or("NA".to_owned(), |v| format!("{v:.6}"));
        writeln!(selection, "{i}\t{}\t{gm}\t{}", describe(h), u8::from(i == out.selected)).unwrap();
    }
    Ok(EvalResult {
        name: name.to_owned(),
        test: out.test,
        selection,
    })
}

pub fn eval_cmd(args: EvalArgs, layers: &Layers) -> Result<()> {
    if let [a, b] = args.compare.as_slice() {
        return compare(a, b, args.alpha, args.out.as_deref(), layers);
    }
    if !args.compare.is_empty() {
        return Err(Error::InvalidConfig("--compare takes exactly two report files".into()));
    }
    let recorded = match layers.path(args.model.clone(), "model")? {
        Some(path) => Model::load(&path)?.settings,
        None => BTreeMap::new(),
    };
    let layers = &layers.clone().with_recorded(&recorded);
    let data_dir: PathBuf = layers.required(args.data, "data")?;
    let data = read_ingested(&data_dir)?;
    let out: PathBuf = layers.required(args.out, "out")?;
    let kind: String = layers.or(args.kind, "kind", "drbm".to_owned())?;
    let seed = layers.seed(args.seed)?;
    let fold_seed = layers.or(args.fold_seed, "fold-seed", seed)?;
    let targets_path = layers.path(args.targets, "targets")?;
    let targets = load_targets(&data, targets_path.as_deref())?;
    let groups = layers.switch(args.group_tracks, "group-tracks")?.then(|| data.track_groups());
    let folds = make_folds(data.items.len(), fold_seed, groups.as_deref())?;
    let x = data.x().view();
    let cv = CvData {
        x,
        train_targets: &targets,
        labels: &data.labels,
    };

    let model_kind = if kind == "random" { None } else { Some(kind.parse::<ModelKind>()?) };
    let lr_default = model_kind.map_or(0.0, default_lr);
    let epochs_default = model_kind.map_or(0, default_epochs);
    let hidden_default = model_kind.map_or(0, default_hidden);
    let lrs = layers.list(args.lr, "lr", lr_default)?;
    let epochs = layers.list(args.epochs, "epochs", epochs_default)?;
    let hidden = layers.list(args.hidden, "hidden", hidden_default)?;
    let estimators = layers.list(args.estimator, "estimator", EstimatorKind::Cd)?;
    let ks = layers.maybe_list(args.k, "k")?;
    let betas = layers.list(args.beta, "beta", 0.9)?;
    let inference = layers.or(args.inference, "inference", "lbp".to_owned())?;
    let inference_k = layers.or(args.inference_k, "inference-k", 10)?;

    let drbm_grid = || -> Result<Vec<DrbmSpec>> {
        let mut grid = Vec::new();
        let mut est_k = Vec::new();
        for &est in &estimators {
            match &ks {
                Some(ks) => est_k.extend(ks.iter().map(|&k| (est, k))),
                None => est_k.push((est, default_k(est))),
            }
        }
        for (((est, k), beta), ((lr, ep), h)) in product(&product(&est_k, &betas), &product(&product(&lrs, &epochs), &hidden)) {
            grid.push(DrbmSpec {
                hidden: h,
                train: TrainConfig {
                    estimator: est,
                    iterations: k,
                    learning_rate: lr,
                    damping: beta,
                    epochs: ep,
                    seed: 0,
                    l1: 0.0,
                },
                inference: inference_method(&inference, inference_k, beta)?,
            });
        }
        Ok(grid)
    };
    let describe_drbm = |s: &DrbmSpec| {
        format!(
            "estimator={} k={} beta={} lr={} epochs={} hidden={}",
            s.train.estimator, s.train.iterations, s.train.damping, s.train.learning_rate, s.train.epochs, s.hidden
        )
    };
    let baseline_grid = product(&lrs, &epochs)
        .into_iter()
        .map(|(lr, ep)| BaselineConfig {
            learning_rate: lr,
            epochs: ep,
            seed: 0,
        })
        .collect::<Vec<_>>();

    let default_name = match model_kind {
        Some(ModelKind::Drbm | ModelKind::GaussianRbm) if estimators.len() == 1 => format!("{kind}-{}", estimators[0]),
        _ => kind.clone(),
    };
    let name = layers.or(args.name, "name", default_name)?;
    let result = match model_kind {
        None => run(&name, &RandomLearner, vec![()], |_| String::from("-"), &cv, &folds, seed)?,
        Some(ModelKind::Drbm) => run(&name, &DrbmLearner, drbm_grid()?, describe_drbm, &cv, &folds, seed)?,
        Some(ModelKind::GaussianRbm) => {
            if estimators.iter().any(|e| *e != EstimatorKind::Cd) {
                return Err(Error::InvalidConfig("the Gaussian RBM trains with joint CD only (--estimator cd)".into()));
            }
            run(&name, &GaussianRbmLearner, drbm_grid()?, describe_drbm, &cv, &folds, seed)?
        }
        Some(ModelKind::Mlp) => {
            let grid = product(&baseline_grid, &hidden)
                .into_iter()
                .map(|(train, hidden)| MlpSpec { hidden, train })
                .collect();
            run(&name, &MlpLearner, grid, |s: &MlpSpec| format!("lr={} epochs={} hidden={}", s.train.learning_rate, s.train.epochs, s.hidden), &cv, &folds, seed)?
        }
        Some(ModelKind::Logreg) => run(&name, &LogRegLearner, baseline_grid, |c: &BaselineConfig| format!("lr={} epochs={}", c.learning_rate, c.epochs), &cv, &folds, seed)?,
        Some(ModelKind::Smoother) => {
            return Err(Error::InvalidConfig(
                "a smoother is not a classifier; smooth targets with `smooth` and pass them via --targets".into(),
            ))
        }
    };

    create_dir(&out)?;
    write_file(&out.join(REPORT_FILE), &result.test.to_tsv())?;
    write_file(&out.join(SELECTION_FILE), &result.selection)?;
    let dataset = data_dir.file_name().map_or_else(|| data_dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    let smoothed = if targets_path.is_some() { "yes" } else { "no" };
    write_file(&out.join(SUMMARY_FILE), &summary_tsv(&[(&result.test, &format!("{dataset}\t{smoothed}"))]))?;
    let gm = result.test.grand_mean().ok_or_else(|| Error::InvalidValue("no tag has a defined AUC on any fold".into()))?;
    let se = result.test.fold_standard_error().unwrap_or(f64::NAN);
    println!("{}\tgrand_mean_auc {gm:.4}\tfold_se {se:.4}\tvalid_cells {}", result.name, result.test.valid_cells());
    Ok(())
}

fn compare(a: &Path, b: &Path, alpha: Option<f64>, out: Option<&Path>, layers: &Layers) -> Result<()> {
    let alpha = layers.or(alpha, "alpha", 0.05)?;
    let (mut ra, mut rb) = (AucReport::read(a)?, AucReport::read(b)?);
    if ra.model == rb.model {
        ra.model = format!("{} (A)", ra.model);
        rb.model = format!("{} (B)", rb.model);
    }
    if ra.n_folds() != rb.n_folds() {
        return Err(Error::InvalidValue(format!(
            "fold mismatch: {} has {} folds, {} has {}",
            a.display(),
            ra.n_folds(),
            b.display(),
            rb.n_folds()
        )));
    }
    let sig = significance_counts(&ra, &rb, alpha)?;
    let text = sig.to_tsv(&ra.model, &rb.model);
    match out {
        Some(dir) => {
            create_dir(dir)?;
            write_file(&dir.join(SIGNIFICANCE_FILE), &text)?;
        }
        None => print!("{text}"),
    }
    println!("{} better on {} tags, {} better on {} tags (alpha {alpha})", ra.model, sig.a_better, rb.model, sig.b_better);
    Ok(())
}

// ---------------------------------------------------------------------------
// oracle-check / synth

pub fn oracle_check_cmd(args: OracleArgs, layers: &Layers) -> Result<bool> {
    let max_labels = layers.or(args.labels, "labels", 12)?;
    if max_labels > ENUMERATION_LIMIT {
        return Err(Error::Capacity {
            what: "label count C",
            size: max_labels,
            limit: ENUMERATION_LIMIT,
        });
    }
    let cfg = SuiteConfig {
        seed: layers.seed(args.seed)?,
        cd_runs: layers.or(args.cd_runs, "cd-runs", 100_000)?,
        max_labels,
        normalizer: if args.debug_printed_normalizer {
            PairNormalizer::OmitZeroState
        } else {
            PairNormalizer::Full
        },
        ..SuiteConfig::default()
    };
    if args.debug_printed_normalizer {
        eprintln!("debug: LBP pairwise beliefs use the normalizer without the (0,0) state");
    }
    let reports = run_all(&cfg)?;
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} of {} checks passed", reports.len() - failed, reports.len());
    Ok(failed == 0)
}

pub fn synth_cmd(args: SynthArgs, layers: &Layers) -> Result<()> {
    let out: PathBuf = layers.required(args.out, "out")?;
    let d = TripleSpec::default();
    let spec = TripleSpec {
        items: layers.or(args.items, "items", d.items)?,
        tags: layers.or(args.tags, "tags", d.tags)?,
        features: layers.or(args.dim, "dim", d.features)?,
        users: layers.or(args.users, "users", d.users)?,
        users_per_item: layers.or(args.users_per_item, "users-per-item", d.users_per_item)?,
        recall: layers.or(args.recall, "recall", d.recall)?,
        false_tag_rate: layers.or(args.false_tag_rate, "false-tag-rate", d.false_tag_rate)?,
        clips_per_track: layers.or(args.clips_per_track, "clips-per-track", d.clips_per_track)?,
        clip_jitter: layers.or(args.clip_jitter, "clip-jitter", d.clip_jitter)?,
        tag_bias: layers.or(args.tag_bias, "tag-bias", d.tag_bias)?,
        tied_pairs: layers.switch(args.tied_pairs, "tied-pairs")?,
        seed: layers.seed(args.seed)?,
    };
    let corpus = triple_corpus(&spec)?;
    create_dir(&out)?;
    write_triples(&out.join(TRIPLES_FILE), &corpus.triples)?;
    write_features(&out.join(RAW_FEATURES_FILE), &corpus.features)?;
    write_items(&out.join(ITEMS_FILE), &corpus.tracks)?;
    println!(
        "wrote {} triples over {} items and {} tags to {}",
        corpus.triples.len(),
        spec.items,
        spec.tags,
        out.display()
    );
    Ok(())
}
