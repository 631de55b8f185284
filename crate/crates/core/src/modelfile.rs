//! Self-describing JSON model files shared by every model family.
//!
//! Each file records a format version, a kind tag, named dimensions, every
//! parameter array as a flat row-major list, and the tag vocabulary. Floats
//! are written in shortest round-trip form, so save → load is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::baselines::{logreg_predict, mlp_predict, LogRegParams, MlpParams};
use crate::error::{Error, Result};
use crate::estimators::GaussianRbmParams;
use crate::inference::{predict_scores, InferenceMethod};
use crate::rbm::DrbmParams;
use crate::smoother::{AuxSizes, SmootherParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Drbm,
    GaussianRbm,
    Mlp,
    Logreg,
    Smoother,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Drbm => "drbm",
            ModelKind::GaussianRbm => "gaussian-rbm",
            ModelKind::Mlp => "mlp",
            ModelKind::Logreg => "logreg",
            ModelKind::Smoother => "smoother",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drbm" => Ok(ModelKind::Drbm),
            "gaussian-rbm" | "grbm" => Ok(ModelKind::GaussianRbm),
            "mlp" => Ok(ModelKind::Mlp),
            "logreg" | "log" => Ok(ModelKind::Logreg),
            "smoother" => Ok(ModelKind::Smoother),
            other => Err(Error::InvalidConfig(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Drbm(DrbmParams),
    GaussianRbm(GaussianRbmParams),
    Mlp(MlpParams),
    Logreg(LogRegParams),
    Smoother(SmootherParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Drbm(_) => ModelKind::Drbm,
            ModelParams::GaussianRbm(_) => ModelKind::GaussianRbm,
            ModelParams::Mlp(_) => ModelKind::Mlp,
            ModelParams::Logreg(_) => ModelKind::Logreg,
            ModelParams::Smoother(_) => ModelKind::Smoother,
        }
    }
}

/// Parameters plus the vocabularies and free-form settings saved with them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub tags: Vec<String>,
    /// Extra id vocabularies, e.g. users/tracks/clips for the smoother.
    pub vocabularies: BTreeMap<String, Vec<String>>,
    pub settings: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NamedArray {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    kind: ModelKind,
    dims: BTreeMap<String, usize>,
    arrays: Vec<NamedArray>,
    tags: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    vocabularies: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    settings: BTreeMap<String, String>,
}

fn matrix(name: &str, m: &Array2<f64>) -> NamedArray {
    NamedArray {
        name: name.into(),
        shape: vec![m.nrows(), m.ncols()],
        values: m.iter().copied().collect(),
    }
}

fn vector(name: &str, v: &Array1<f64>) -> NamedArray {
    NamedArray {
        name: name.into(),
        shape: vec![v.len()],
        values: v.to_vec(),
    }
}

struct Reader {
    arrays: BTreeMap<String, NamedArray>,
    dims: BTreeMap<String, usize>,
}

impl Reader {
    fn dim(&self, name: &str) -> Result<usize> {
        self.dims
            .get(name)
            .copied()
            .ok_or_else(|| Error::ModelFormat(format!("missing dimension `{name}`")))
    }

    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let a = self
            .arrays
            .remove(name)
            .ok_or_else(|| Error::ModelFormat(format!("missing array `{name}`")))?;
        if a.shape != shape || a.values.len() != shape.iter().product::<usize>() {
            return Err(Error::ModelFormat(format!(
                "array `{name}` has shape {:?} with {} values, expected {shape:?}",
                a.shape,
                a.values.len()
            )));
        }
        Ok(a.values)
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let v = self.take(name, &[rows, cols])?;
        Ok(Array2::from_shape_vec((rows, cols), v).expect("shape checked"))
    }

    fn vector(&mut self, name: &str, len: usize) -> Result<Array1<f64>> {
        Ok(Array1::from(self.take(name, &[len])?))
    }

    fn finish(self) -> Result<()> {
        match self.arrays.keys().next() {
            Some(extra) => Err(Error::ModelFormat(format!("unexpected array `{extra}`"))),
            None => Ok(()),
        }
    }
}

fn drbm_arrays(p: &DrbmParams) -> Vec<NamedArray> {
    vec![matrix("U", &p.u), matrix("W", &p.w), vector("c", &p.c), vector("d", &p.d)]
}

fn read_drbm(r: &mut Reader) -> Result<DrbmParams> {
    let (n, c, d) = (r.dim("n")?, r.dim("C")?, r.dim("D")?);
    DrbmParams::new(r.matrix("U", n, c)?, r.matrix("W", n, d)?, r.vector("c", n)?, r.vector("d", c)?)
}

impl Model {
    pub fn new(params: ModelParams, tags: Vec<String>) -> Self {
        Model {
            params,
            tags,
            vocabularies: BTreeMap::new(),
            settings: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.params.kind()
    }

    fn document(&self) -> ModelDocument {
        let mut dims = BTreeMap::new();
        let arrays = match &self.params {
            ModelParams::Drbm(p) => {
                dims.extend([("n".into(), p.n_hidden()), ("C".into(), p.n_labels()), ("D".into(), p.n_features())]);
                drbm_arrays(p)
            }
            ModelParams::GaussianRbm(p) => {
                let b = &p.base;
                dims.extend([("n".into(), b.n_hidden()), ("C".into(), b.n_labels()), ("D".into(), b.n_features())]);
                let mut a = drbm_arrays(b);
                a.push(vector("bx", &p.bx));
                a
            }
            ModelParams::Mlp(p) => {
                dims.extend([("D".into(), p.n_features()), ("H".into(), p.n_hidden()), ("C".into(), p.n_labels())]);
                vec![matrix("W1", &p.w1), vector("b1", &p.b1), matrix("W2", &p.w2), vector("b2", &p.b2)]
            }
            ModelParams::Logreg(p) => {
                dims.extend([("D".into(), p.n_features()), ("C".into(), p.n_labels())]);
                vec![matrix("W", &p.w), vector("b", &p.b)]
            }
            ModelParams::Smoother(p) => {
                dims.extend([
                    ("n".into(), p.n_hidden()),
                    ("C".into(), p.n_labels()),
                    ("A".into(), p.sizes.total()),
                    ("users".into(), p.sizes.users),
                    ("tracks".into(), p.sizes.tracks),
                    ("clips".into(), p.sizes.clips),
                ]);
                vec![
                    matrix("U", &p.u),
                    matrix("W", &p.w),
                    matrix("V", &p.v),
                    vector("c", &p.c),
                    vector("d", &p.d),
                ]
            }
        };
        ModelDocument {
            format_version: FORMAT_VERSION,
            kind: self.kind(),
            dims,
            arrays,
            tags: self.tags.clone(),
            vocabularies: self.vocabularies.clone(),
            settings: self.settings.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = self.document();
        if let Some(a) = doc.arrays.iter().find(|a| a.values.iter().any(|v| !v.is_finite())) {
            return Err(Error::ModelFormat(format!("array `{}` holds a non-finite value", a.name)));
        }
        let mut s = serde_json::to_string_pretty(&doc).map_err(|e| Error::ModelFormat(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                doc.format_version
            )));
        }
        let mut r = Reader {
            arrays: BTreeMap::new(),
            dims: doc.dims,
        };
        for a in doc.arrays {
            let name = a.name.clone();
            if r.arrays.insert(name.clone(), a).is_some() {
                return Err(Error::ModelFormat(format!("duplicate array `{name}`")));
            }
        }
        let params = match doc.kind {
            ModelKind::Drbm => ModelParams::Drbm(read_drbm(&mut r)?),
            ModelKind::GaussianRbm => {
                let base = read_drbm(&mut r)?;
                let bx = r.vector("bx", r.dim("D")?)?;
                ModelParams::GaussianRbm(GaussianRbmParams { base, bx })
            }
            ModelKind::Mlp => {
                let (d, h, c) = (r.dim("D")?, r.dim("H")?, r.dim("C")?);
                ModelParams::Mlp(MlpParams {
                    w1: r.matrix("W1", d, h)?,
                    b1: r.vector("b1", h)?,
                    w2: r.matrix("W2", h, c)?,
                    b2: r.vector("b2", c)?,
                })
            }
            ModelKind::Logreg => {
                let (d, c) = (r.dim("D")?, r.dim("C")?);
                ModelParams::Logreg(LogRegParams {
                    w: r.matrix("W", d, c)?,
                    b: r.vector("b", c)?,
                })
            }
            ModelKind::Smoother => {
                let sizes = AuxSizes {
                    users: r.dim("users")?,
                    tracks: r.dim("tracks")?,
                    clips: r.dim("clips")?,
                };
                if r.dim("A")? != sizes.total() {
                    return Err(Error::ModelFormat("A must equal users + tracks + clips".into()));
                }
                let (n, c) = (r.dim("n")?, r.dim("C")?);
                ModelParams::Smoother(SmootherParams::new(
                    r.matrix("U", n, c)?,
                    r.matrix("W", n, c)?,
                    r.matrix("V", c, sizes.total())?,
                    r.vector("c", n)?,
                    r.vector("d", c)?,
                    sizes,
                )?)
            }
        };
        r.finish()?;
        let model = Model {
            params,
            tags: doc.tags,
            vocabularies: doc.vocabularies,
            settings: doc.settings,
        };
        let labels = model.n_labels();
        if model.tags.len() != labels {
            return Err(Error::ModelFormat(format!(
                "{} tag names for {labels} labels",
                model.tags.len()
            )));
        }
        Ok(model)
    }

    pub fn n_labels(&self) -> usize {
        match &self.params {
            ModelParams::Drbm(p) => p.n_labels(),
            ModelParams::GaussianRbm(p) => p.base.n_labels(),
            ModelParams::Mlp(p) => p.n_labels(),
            ModelParams::Logreg(p) => p.n_labels(),
            ModelParams::Smoother(p) => p.n_labels(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// `rows × C` tag probabilities. RBM-family models use `method`; the
    /// Gaussian RBM's conditional `p(y | x)` is the discriminative one.
    pub fn predict(&self, x: ArrayView2<f64>, method: InferenceMethod) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((x.nrows(), self.n_labels()));
        for (i, row) in x.rows().into_iter().enumerate() {
            let scores = match &self.params {
                ModelParams::Drbm(p) => predict_scores(row, p, method)?,
                ModelParams::GaussianRbm(p) => predict_scores(row, &p.base, method)?,
                ModelParams::Mlp(p) => mlp_predict(row, p)?,
                ModelParams::Logreg(p) => logreg_predict(row, p)?,
                ModelParams::Smoother(_) => {
                    return Err(Error::InvalidConfig(
                        "a smoother model scores clips from tags, not features".into(),
                    ))
                }
            };
            out.row_mut(i).assign(&scores);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn awkward(rng: &mut ChaCha8Rng) -> f64 {
        // Values whose shortest decimal form is long, plus extremes.
        match rng.random_range(0..4) {
            0 => rng.random::<f64>() * 1e-300,
            1 => rng.random::<f64>() * 1e300,
            2 => -rng.random::<f64>() / 3.0,
            _ => f64::from_bits(rng.random::<u64>() & 0x3FEF_FFFF_FFFF_FFFF),
        }
    }

    fn models(rng: &mut ChaCha8Rng) -> Vec<Model> {
        let mut drbm = DrbmParams::zeros(3, 2, 4);
        drbm.iter_mut().for_each(|v| *v = awkward(rng));
        let mut grbm = GaussianRbmParams {
            base: drbm.clone(),
            bx: Array1::zeros(4),
        };
        grbm.bx.mapv_inplace(|_| awkward(rng));
        let mut mlp = MlpParams::init(4, 5, 2, rng);
        mlp.b2.mapv_inplace(|_| awkward(rng));
        let mut lr = LogRegParams::zeros(4, 2);
        lr.w.mapv_inplace(|_| awkward(rng));
        let sizes = AuxSizes {
            users: 2,
            tracks: 1,
            clips: 3,
        };
        let mut sm = SmootherParams::init(3, 2, sizes, rng);
        sm.v.mapv_inplace(|_| awkward(rng));
        let tags = vec!["rock".to_string(), "hip hop".to_string()];
        let mut smoother = Model::new(ModelParams::Smoother(sm), tags.clone());
        smoother.vocabularies.insert("users".into(), vec!["a".into(), "b".into()]);
        smoother.settings.insert("seed".into(), "7".into());
        vec![
            Model::new(ModelParams::Drbm(drbm), tags.clone()),
            Model::new(ModelParams::GaussianRbm(grbm), tags.clone()),
            Model::new(ModelParams::Mlp(mlp), tags.clone()),
            Model::new(ModelParams::Logreg(lr), tags),
            smoother,
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            for m in models(&mut rng) {
                let text = m.to_json().unwrap();
                let back = Model::from_json(&text).unwrap();
                assert_eq!(back, m);
                assert_eq!(back.to_json().unwrap(), text);
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = models(&mut ChaCha8Rng::seed_from_u64(2)).remove(0);
        m.save(&path).unwrap();
        assert_eq!(Model::load(&path).unwrap(), m);
        assert!(matches!(Model::load(&dir.path().join("missing.json")), Err(Error::Io { .. })));
    }

    #[test]
    fn malformed_documents_are_rejected() {
        let m = models(&mut ChaCha8Rng::seed_from_u64(3)).remove(0);
        let text = m.to_json().unwrap();
        assert!(Model::from_json(&text.replace("\"format_version\": 1", "\"format_version\": 9")).is_err());
        assert!(Model::from_json(&text.replace("\"name\": \"U\"", "\"name\": \"Q\"")).is_err());
        assert!(Model::from_json(&text.replace("\"hip hop\"", "\"hip hop\", \"extra\"")).is_err());
        assert!(Model::from_json("not json").is_err());
        let mut bad = m.clone();
        if let ModelParams::Drbm(p) = &mut bad.params {
            p.c[0] = f64::NAN;
        }
        assert!(bad.to_json().is_err());
    }

    #[test]
    fn kind_names_parse_back() {
        for k in [ModelKind::Drbm, ModelKind::GaussianRbm, ModelKind::Mlp, ModelKind::Logreg, ModelKind::Smoother] {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("svm".parse::<ModelKind>().is_err());
    }

    #[test]
    fn zero_drbm_predicts_bias_sigmoid() {
        let mut p = DrbmParams::zeros(2, 2, 3);
        p.d = ndarray::array![0.0, 1.0];
        let m = Model::new(ModelParams::Drbm(p), vec!["a".into(), "b".into()]);
        let x = Array2::zeros((2, 3));
        let s = m.predict(x.view(), InferenceMethod::default()).unwrap();
        assert_eq!(s[[1, 0]], 0.5);
        assert_eq!(s[[0, 1]], crate::rbm::sigm(1.0));
    }
}
