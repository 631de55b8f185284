//! Discriminative RBM parameters, energy, free energy and the exact
//! factorised conditionals `p(h | y, x)` and `p(y | h)`.
//!
//! The model is the bipartite energy
//!
//! ```text
//! E(y, h, x) = -hᵀ U y - hᵀ W x - dᵀ y - cᵀ h
//! ```
//!
//! with `U: n×C`, `W: n×D`, `c: n`, `d: C`. Hidden units are conditionally
//! independent given `(y, x)` and labels are conditionally independent
//! given `h`, so both conditionals are componentwise sigmoids.

use ndarray::{Array1, Array2, ArrayView1, Zip};
use rand::Rng;

use crate::error::{check_len, Error, Result};

/// Logistic sigmoid, stable on both tails.
#[inline]
pub fn sigm(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow for large `z`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `log(e^a + e^b)`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `log Σ e^{v}` over a slice; `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Weights and biases of a discriminative RBM.
#[derive(Debug, Clone, PartialEq)]
pub struct DrbmParams {
    /// Hidden↔label weights, `n × C`.
    pub u: Array2<f64>,
    /// Hidden↔feature weights, `n × D`.
    pub w: Array2<f64>,
    /// Hidden biases.
    pub c: Array1<f64>,
    /// Label biases.
    pub d: Array1<f64>,
}

impl DrbmParams {
    pub fn new(u: Array2<f64>, w: Array2<f64>, c: Array1<f64>, d: Array1<f64>) -> Result<Self> {
        let (n, labels) = u.dim();
        if n == 0 {
            return Err(Error::InvalidValue("at least one hidden unit is required".into()));
        }
        if labels == 0 {
            return Err(Error::InvalidValue("at least one label is required".into()));
        }
        check_len("W rows", n, w.nrows())?;
        check_len("hidden bias c", n, c.len())?;
        check_len("label bias d", labels, d.len())?;
        let params = DrbmParams { u, w, c, d };
        if !params.is_finite() {
            return Err(Error::InvalidValue("parameters must be finite".into()));
        }
        Ok(params)
    }

    pub fn zeros(hidden: usize, labels: usize, features: usize) -> Self {
        DrbmParams {
            u: Array2::zeros((hidden, labels)),
            w: Array2::zeros((hidden, features)),
            c: Array1::zeros(hidden),
            d: Array1::zeros(labels),
        }
    }

    /// Weights i.i.d. uniform in `[-0.01, 0.01]`, biases zero.
    pub fn init<R: Rng + ?Sized>(hidden: usize, labels: usize, features: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(hidden, labels, features);
        p.u.mapv_inplace(|_| rng.random_range(-0.01..=0.01));
        p.w.mapv_inplace(|_| rng.random_range(-0.01..=0.01));
        p
    }

    pub fn n_hidden(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_labels(&self) -> usize {
        self.u.ncols()
    }

    pub fn n_features(&self) -> usize {
        self.w.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// Largest parameter magnitude.
    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// All parameters in the fixed order `U, W, c, d`, row-major.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.u
            .iter()
            .chain(self.w.iter())
            .chain(self.c.iter())
            .chain(self.d.iter())
            .copied()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.u
            .iter_mut()
            .chain(self.w.iter_mut())
            .chain(self.c.iter_mut())
            .chain(self.d.iter_mut())
    }

    pub fn num_params(&self) -> usize {
        self.u.len() + self.w.len() + self.c.len() + self.d.len()
    }

    pub(crate) fn check_features(&self, x: &ArrayView1<f64>) -> Result<()> {
        check_len("feature vector x", self.n_features(), x.len())
    }

    pub(crate) fn check_labels(&self, y: &ArrayView1<f64>) -> Result<()> {
        check_len("label vector y", self.n_labels(), y.len())
    }

    pub(crate) fn check_hidden(&self, h: &ArrayView1<f64>) -> Result<()> {
        check_len("hidden vector h", self.n_hidden(), h.len())
    }

    /// `c + W x`, the hidden bias after conditioning on the features.
    pub fn feature_drive(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_features(&x)?;
        Ok(&self.c + &self.w.dot(&x))
    }

    /// `c + W x + U y`.
    pub fn hidden_input(&self, y: ArrayView1<f64>, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_labels(&y)?;
        Ok(self.feature_drive(x)? + self.u.dot(&y))
    }

    /// `d + Uᵀ h`.
    pub fn label_input(&self, h: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_hidden(&h)?;
        Ok(&self.d + &self.u.t().dot(&h))
    }

    /// `θ ← θ + step · g`.
    pub fn apply(&mut self, grad: &Gradient, step: f64) {
        self.u.scaled_add(step, &grad.du);
        self.w.scaled_add(step, &grad.dw);
        self.c.scaled_add(step, &grad.dc);
        self.d.scaled_add(step, &grad.dd);
    }
}

/// A feature vector with its binary tag indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub x: Array1<f64>,
    pub y: Array1<f64>,
}

impl LabeledExample {
    pub fn new(x: Array1<f64>, y: Array1<f64>) -> Result<Self> {
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("feature value {v} is not finite")));
        }
        if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidValue(format!("label value {v} is not binary")));
        }
        Ok(LabeledExample { x, y })
    }
}

/// Ascent direction on `log p(y | x)` for each parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub du: Array2<f64>,
    pub dw: Array2<f64>,
    pub dc: Array1<f64>,
    pub dd: Array1<f64>,
}

impl Gradient {
    pub fn zeros_like(p: &DrbmParams) -> Self {
        Gradient {
            du: Array2::zeros(p.u.raw_dim()),
            dw: Array2::zeros(p.w.raw_dim()),
            dc: Array1::zeros(p.c.raw_dim()),
            dd: Array1::zeros(p.d.raw_dim()),
        }
    }

    /// Difference of the sufficient statistics `(h yᵀ, h xᵀ, h, y)` between a
    /// positive phase and a negative phase. Both `y` and `h` may be
    /// continuous-valued (mean-field iterates).
    pub fn from_phases(
        x: ArrayView1<f64>,
        pos_y: ArrayView1<f64>,
        pos_h: ArrayView1<f64>,
        neg_y: ArrayView1<f64>,
        neg_h: ArrayView1<f64>,
    ) -> Self {
        let (n, labels, features) = (pos_h.len(), pos_y.len(), x.len());
        let mut du = Array2::zeros((n, labels));
        let mut dw = Array2::zeros((n, features));
        for k in 0..n {
            for j in 0..labels {
                du[[k, j]] = pos_h[k] * pos_y[j] - neg_h[k] * neg_y[j];
            }
            let dh = pos_h[k] - neg_h[k];
            for i in 0..features {
                dw[[k, i]] = dh * x[i];
            }
        }
        Gradient {
            du,
            dw,
            dc: &pos_h - &neg_h,
            dd: &pos_y - &neg_y,
        }
    }

    /// Exact positive phase `ĥ⁰ = p(h | y, x)` against model-side marginals.
    pub fn from_marginals(example: &LabeledExample, p: &DrbmParams, m: &Marginals) -> Result<Self> {
        let h0 = p_hidden_given(example.y.view(), example.x.view(), p)?;
        check_len("marginal labels", p.n_labels(), m.y.len())?;
        check_len("marginal hidden units", p.n_hidden(), m.h.len())?;
        let mut du = Array2::zeros(p.u.raw_dim());
        Zip::indexed(&mut du).for_each(|(k, j), v| *v = h0[k] * example.y[j] - m.pair[[k, j]]);
        let dh = &h0 - &m.h;
        let mut dw = Array2::zeros(p.w.raw_dim());
        Zip::indexed(&mut dw).for_each(|(k, i), v| *v = dh[k] * example.x[i]);
        Ok(Gradient {
            du,
            dw,
            dc: dh,
            dd: &example.y - &m.y,
        })
    }

    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        self.du.scaled_add(scale, &other.du);
        self.dw.scaled_add(scale, &other.dw);
        self.dc.scaled_add(scale, &other.dc);
        self.dd.scaled_add(scale, &other.dd);
    }

    /// Coefficients in the same order as [`DrbmParams::iter`].
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.du
            .iter()
            .chain(self.dw.iter())
            .chain(self.dc.iter())
            .chain(self.dd.iter())
            .copied()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.iter().collect()
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }
}

/// Singleton and pairwise marginals of `p(y, h | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    /// `p(y_j = 1 | x)`.
    pub y: Array1<f64>,
    /// `p(h_k = 1 | x)`.
    pub h: Array1<f64>,
    /// `p(y_j = 1, h_k = 1 | x)`, indexed `[k, j]`.
    pub pair: Array2<f64>,
}

impl Marginals {
    /// Largest violation of the Fréchet bounds
    /// `max(0, h + y - 1) ≤ pair ≤ min(h, y)` and of `[0, 1]` ranges.
    pub fn frechet_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for v in self.y.iter().chain(self.h.iter()).chain(self.pair.iter()) {
            worst = worst.max(-v).max(v - 1.0);
        }
        for ((k, j), &p) in self.pair.indexed_iter() {
            let (hk, yj) = (self.h[k], self.y[j]);
            worst = worst.max(p - hk.min(yj)).max(hk + yj - 1.0 - p);
        }
        worst
    }
}

pub fn energy(
    y: ArrayView1<f64>,
    h: ArrayView1<f64>,
    x: ArrayView1<f64>,
    p: &DrbmParams,
) -> Result<f64> {
    p.check_labels(&y)?;
    p.check_hidden(&h)?;
    p.check_features(&x)?;
    let coupling = h.dot(&p.u.dot(&y));
    let features = h.dot(&p.w.dot(&x));
    Ok(-coupling - features - p.d.dot(&y) - p.c.dot(&h))
}

/// `F(y | x) = -dᵀy - Σ_k log(1 + e^{c_k + (Wx)_k + (Uy)_k})`.
pub fn cond_free_energy(y: ArrayView1<f64>, x: ArrayView1<f64>, p: &DrbmParams) -> Result<f64> {
    let input = p.hidden_input(y, x)?;
    Ok(-p.d.dot(&y) - input.iter().map(|&a| softplus(a)).sum::<f64>())
}

pub fn p_hidden_given(y: ArrayView1<f64>, x: ArrayView1<f64>, p: &DrbmParams) -> Result<Array1<f64>> {
    Ok(p.hidden_input(y, x)?.mapv_into(sigm))
}

pub fn p_label_given(h: ArrayView1<f64>, p: &DrbmParams) -> Result<Array1<f64>> {
    Ok(p.label_input(h)?.mapv_into(sigm))
}

/// Independent Bernoulli draws, one per entry of `probs`.
pub fn sample_bernoulli<R: Rng + ?Sized>(probs: ArrayView1<f64>, rng: &mut R) -> Result<Array1<f64>> {
    if let Some((index, &value)) = probs
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::InvalidProbability { index, value });
    }
    Ok(probs.mapv(|q| if rng.random::<f64>() < q { 1.0 } else { 0.0 }))
}
