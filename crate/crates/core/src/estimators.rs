//! Gradient estimators for the discriminative RBM and the per-example SGD
//! driver.
//!
//! Every estimator returns the *ascent* direction of `log p(y | x)` (or of
//! the pseudo-likelihood). The pseudocode form `θ ← θ - λ(∂E(pos) - ∂E(neg))`
//! is the same update, since `∂E/∂θ` is minus the sufficient statistic:
//! callers always do `θ ← θ + λ · g`.

use std::fmt;
use std::time::Instant;

use ndarray::{Array1, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::inference::lbp_marginals;
use crate::oracle::{exact_grad, exact_log_cond_prob};
use crate::rbm::{
    energy, p_hidden_given, p_label_given, sample_bernoulli, sigm, softplus, DrbmParams, Gradient,
    LabeledExample, Marginals,
};

/// Parameter magnitude above which training is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    /// Contrastive divergence with a conditional Gibbs chain.
    Cd,
    /// Mean-field contrastive divergence.
    Mfcd,
    /// Model expectation from loopy-BP marginals.
    Lbp,
    /// Pseudo-likelihood.
    Pl,
    /// Exact gradient by enumeration (small label sets only).
    Exact,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Cd => "cd",
            EstimatorKind::Mfcd => "mfcd",
            EstimatorKind::Lbp => "lbp",
            EstimatorKind::Pl => "pl",
            EstimatorKind::Exact => "exact",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cd" => Ok(EstimatorKind::Cd),
            "mfcd" | "mf" => Ok(EstimatorKind::Mfcd),
            "lbp" => Ok(EstimatorKind::Lbp),
            "pl" => Ok(EstimatorKind::Pl),
            "exact" => Ok(EstimatorKind::Exact),
            other => Err(Error::InvalidConfig(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub estimator: EstimatorKind,
    /// Chain length for CD / MFCD, sweeps for LBP.
    pub iterations: usize,
    pub learning_rate: f64,
    /// LBP damping.
    pub damping: f64,
    pub epochs: usize,
    pub seed: u64,
    /// ℓ1 weight; only the tag smoother reads it.
    pub l1: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            estimator: EstimatorKind::Cd,
            iterations: 1,
            learning_rate: 0.01,
            damping: 0.9,
            epochs: 20,
            seed: 0,
            l1: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations K must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidConfig(format!("damping {} is outside [0, 1)", self.damping)));
        }
        if !(self.l1 >= 0.0 && self.l1.is_finite()) {
            return Err(Error::InvalidConfig(format!("l1 weight {} must be non-negative", self.l1)));
        }
        Ok(())
    }
}

fn check_example(ex: &LabeledExample, p: &DrbmParams) -> Result<()> {
    check_len("label vector y", p.n_labels(), ex.y.len())?;
    check_len("feature vector x", p.n_features(), ex.x.len())
}

struct Phases {
    pos_y: Array1<f64>,
    pos_h: Array1<f64>,
    neg_y: Array1<f64>,
    neg_h: Array1<f64>,
}

impl Phases {
    fn gradient(&self, x: ArrayView1<f64>) -> Gradient {
        Gradient::from_phases(
            x,
            self.pos_y.view(),
            self.pos_h.view(),
            self.neg_y.view(),
            self.neg_h.view(),
        )
    }

    /// `E(neg) - E(pos)`, evaluated at the (possibly mean-valued) phase states.
    fn energy_gap(&self, x: ArrayView1<f64>, p: &DrbmParams) -> Result<f64> {
        let pos = energy(self.pos_y.view(), self.pos_h.view(), x, p)?;
        let neg = energy(self.neg_y.view(), self.neg_h.view(), x, p)?;
        Ok(neg - pos)
    }
}

fn cd_phases<R: Rng + ?Sized>(ex: &LabeledExample, p: &DrbmParams, k: usize, rng: &mut R) -> Result<Phases> {
    check_example(ex, p)?;
    if k == 0 {
        return Err(Error::InvalidConfig("CD needs K ≥ 1".into()));
    }
    let x = ex.x.view();
    let pos_h = p_hidden_given(ex.y.view(), x, p)?;
    let mut y = ex.y.clone();
    let mut h_hat = pos_h.clone();
    for _ in 0..k {
        let h = sample_bernoulli(h_hat.view(), rng)?;
        y = sample_bernoulli(p_label_given(h.view(), p)?.view(), rng)?;
        h_hat = p_hidden_given(y.view(), x, p)?;
    }
    Ok(Phases {
        pos_y: ex.y.clone(),
        pos_h,
        neg_y: y,
        neg_h: h_hat,
    })
}

/// CD-K: the negative phase is the end of a K-step Gibbs chain over `(h, y)`
/// started at the training labels with `x` clamped. Hidden states inside the
/// chain are sampled; the statistics use `ĥ^K = σ(c + Wx + U y^K)`.
pub fn cd_gradient<R: Rng + ?Sized>(ex: &LabeledExample, p: &DrbmParams, k: usize, rng: &mut R) -> Result<Gradient> {
    Ok(cd_phases(ex, p, k, rng)?.gradient(ex.x.view()))
}

fn mfcd_phases(ex: &LabeledExample, p: &DrbmParams, k: usize) -> Result<Phases> {
    check_example(ex, p)?;
    if k == 0 {
        return Err(Error::InvalidConfig("mean-field CD needs K ≥ 1".into()));
    }
    let x = ex.x.view();
    let drive = p.feature_drive(x)?;
    let pos_h = (&drive + &p.u.dot(&ex.y)).mapv_into(sigm);
    let mut y = ex.y.clone();
    let mut h = pos_h.clone();
    for _ in 0..k {
        y = (&p.d + &p.u.t().dot(&h)).mapv_into(sigm);
        h = (&drive + &p.u.dot(&y)).mapv_into(sigm);
    }
    Ok(Phases {
        pos_y: ex.y.clone(),
        pos_h,
        neg_y: y,
        neg_h: h,
    })
}

/// Mean-field CD-K: the chain of [`cd_gradient`] with every sample replaced
/// by its conditional expectation, `ŷ ← σ(d + Uᵀĥ)`, `ĥ ← σ(c + Wx + Uŷ)`.
pub fn mfcd_gradient(ex: &LabeledExample, p: &DrbmParams, k: usize) -> Result<Gradient> {
    Ok(mfcd_phases(ex, p, k)?.gradient(ex.x.view()))
}

/// Exact positive phase against loopy-BP marginals for the negative phase.
pub fn lbp_gradient(ex: &LabeledExample, p: &DrbmParams, k: usize, damping: f64) -> Result<Gradient> {
    check_example(ex, p)?;
    let m = lbp_marginals(ex.x.view(), p, k, damping)?;
    Gradient::from_marginals(ex, p, &m)
}

fn expected_energy(x: ArrayView1<f64>, p: &DrbmParams, m: &Marginals) -> Result<f64> {
    let wx = p.w.dot(&x);
    let coupling: f64 = (&p.u * &m.pair).sum();
    Ok(-coupling - m.h.dot(&wx) - p.d.dot(&m.y) - p.c.dot(&m.h))
}

/// Pseudo-likelihood gradient and `log PL(y | x) = Σ_j log p(y_j | y_{\j}, x)`.
///
/// Flipping label `j` only moves the hidden input by `±U_{kj}`, so
/// `p(y_j = 1 | y_{\j}, x) = σ(d_j + Σ_k [softplus(a_k + U_{kj}) - softplus(a_k)])`
/// where `a = c + Wx + Uy - U_{·j} y_j` is the hidden input with `y_j = 0`.
pub fn pl_gradient(ex: &LabeledExample, p: &DrbmParams) -> Result<(Gradient, f64)> {
    check_example(ex, p)?;
    let (n, labels) = (p.n_hidden(), p.n_labels());
    let y = &ex.y;
    let data_input = p.hidden_input(y.view(), ex.x.view())?;

    // Accumulated as the gradient of -log PL, then negated.
    let mut g = Gradient::zeros_like(p);
    let mut log_pl = 0.0;
    let mut dhid = Array1::<f64>::zeros(n);
    for j in 0..labels {
        let mut z = p.d[j];
        let mut on = Array1::<f64>::zeros(n);
        let mut off = Array1::<f64>::zeros(n);
        for k in 0..n {
            let a0 = data_input[k] - p.u[[k, j]] * y[j];
            z += softplus(a0 + p.u[[k, j]]) - softplus(a0);
            on[k] = sigm(a0 + p.u[[k, j]]);
            off[k] = sigm(a0);
        }
        let prob = sigm(z);
        log_pl -= if y[j] == 1.0 { softplus(-z) } else { softplus(z) };

        let dout = prob - y[j];
        g.dd[j] = dout;
        for k in 0..n {
            g.du[[k, j]] += dout * ((1.0 - y[j]) * on[k] + y[j] * off[k]);
            dhid[k] = dout * (on[k] - off[k]);
        }
        for k in 0..n {
            for (jj, &yj) in y.iter().enumerate() {
                g.du[[k, jj]] += dhid[k] * yj;
            }
            for (i, &xi) in ex.x.iter().enumerate() {
                g.dw[[k, i]] += dhid[k] * xi;
            }
            g.dc[k] += dhid[k];
        }
    }
    g.du.mapv_inplace(|v| -v);
    g.dw.mapv_inplace(|v| -v);
    g.dc.mapv_inplace(|v| -v);
    g.dd.mapv_inplace(|v| -v);
    Ok((g, log_pl))
}

/// Gradient estimate together with a scalar progress proxy for the training
/// log: `log PL` for PL, `log p(y|x)` for the exact estimator, and otherwise
/// the energy gap `E(negative phase) - E(positive phase)`.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub grad: Gradient,
    pub objective: f64,
}

pub fn estimate<R: Rng + ?Sized>(
    ex: &LabeledExample,
    p: &DrbmParams,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Estimate> {
    let x = ex.x.view();
    match cfg.estimator {
        EstimatorKind::Cd => {
            let phases = cd_phases(ex, p, cfg.iterations, rng)?;
            Ok(Estimate {
                grad: phases.gradient(x),
                objective: phases.energy_gap(x, p)?,
            })
        }
        EstimatorKind::Mfcd => {
            let phases = mfcd_phases(ex, p, cfg.iterations)?;
            Ok(Estimate {
                grad: phases.gradient(x),
                objective: phases.energy_gap(x, p)?,
            })
        }
        EstimatorKind::Lbp => {
            check_example(ex, p)?;
            let m = lbp_marginals(x, p, cfg.iterations, cfg.damping)?;
            let pos_h = p_hidden_given(ex.y.view(), x, p)?;
            let gap = expected_energy(x, p, &m)? - energy(ex.y.view(), pos_h.view(), x, p)?;
            Ok(Estimate {
                grad: Gradient::from_marginals(ex, p, &m)?,
                objective: gap,
            })
        }
        EstimatorKind::Pl => {
            let (grad, objective) = pl_gradient(ex, p)?;
            Ok(Estimate { grad, objective })
        }
        EstimatorKind::Exact => Ok(Estimate {
            grad: exact_grad(ex, p)?,
            objective: exact_log_cond_prob(ex.y.view(), x, p)?,
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    pub seconds: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch {}\tobjective {:.6}\twall {:.3}s", self.epoch, self.objective, self.seconds)
    }
}

#[derive(Debug, Clone)]
pub struct Trained<P> {
    pub params: P,
    pub log: Vec<EpochRecord>,
}

pub(crate) fn divergence_check(values: impl Iterator<Item = f64>, epoch: usize) -> Result<()> {
    for v in values {
        if !v.is_finite() {
            return Err(Error::Divergence {
                epoch,
                reason: "non-finite parameter".into(),
            });
        }
        if v.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                epoch,
                reason: format!("parameter magnitude {v:e} exceeds {DIVERGENCE_LIMIT:e}"),
            });
        }
    }
    Ok(())
}

/// Per-example stochastic gradient ascent over seeded shuffles of `dataset`.
pub fn sgd_train(dataset: &[LabeledExample], initial: &DrbmParams, cfg: &TrainConfig) -> Result<Trained<DrbmParams>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for ex in dataset {
        check_example(ex, initial)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = initial.clone();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let est = estimate(&dataset[i], &params, cfg, &mut rng)?;
            total += est.objective;
            params.apply(&est.grad, cfg.learning_rate);
            divergence_check(params.iter(), epoch)?;
        }
        log.push(EpochRecord {
            epoch,
            objective: total / dataset.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(Trained { params, log })
}

/// Generative RBM over `(y, x, h)` with unit-variance Gaussian features:
/// the discriminative parameters plus a feature bias `bx`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianRbmParams {
    pub base: DrbmParams,
    pub bx: Array1<f64>,
}

impl GaussianRbmParams {
    pub fn init<R: Rng + ?Sized>(hidden: usize, labels: usize, features: usize, rng: &mut R) -> Self {
        GaussianRbmParams {
            base: DrbmParams::init(hidden, labels, features, rng),
            bx: Array1::zeros(features),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.base.iter().chain(self.bx.iter().copied())
    }

    pub fn apply(&mut self, grad: &GaussianGradient, step: f64) {
        self.base.apply(&grad.base, step);
        self.bx.scaled_add(step, &grad.dbx);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGradient {
    pub base: Gradient,
    pub dbx: Array1<f64>,
}

/// CD-K on the joint `(y, x)`: block Gibbs alternating `h ~ p(h | y, x)`,
/// `y ~ p(y | h)` and `x ← bx + Wᵀh` (the conditional Gaussian mean).
pub fn generative_cd_gradient<R: Rng + ?Sized>(
    ex: &LabeledExample,
    p: &GaussianRbmParams,
    k: usize,
    rng: &mut R,
) -> Result<GaussianGradient> {
    let base = &p.base;
    check_example(ex, base)?;
    check_len("feature bias bx", base.n_features(), p.bx.len())?;
    if k == 0 {
        return Err(Error::InvalidConfig("CD needs K ≥ 1".into()));
    }
    let pos_h = p_hidden_given(ex.y.view(), ex.x.view(), base)?;
    let mut y = ex.y.clone();
    let mut x = ex.x.clone();
    let mut h_hat = pos_h.clone();
    for _ in 0..k {
        let h = sample_bernoulli(h_hat.view(), rng)?;
        y = sample_bernoulli(p_label_given(h.view(), base)?.view(), rng)?;
        x = &p.bx + &base.w.t().dot(&h);
        h_hat = p_hidden_given(y.view(), x.view(), base)?;
    }
    let mut grad = Gradient::from_phases(ex.x.view(), ex.y.view(), pos_h.view(), y.view(), h_hat.view());
    // The feature statistic differs between phases because x is resampled.
    for kk in 0..base.n_hidden() {
        for i in 0..base.n_features() {
            grad.dw[[kk, i]] = pos_h[kk] * ex.x[i] - h_hat[kk] * x[i];
        }
    }
    Ok(GaussianGradient {
        base: grad,
        dbx: &ex.x - &x,
    })
}

pub fn train_generative(
    dataset: &[LabeledExample],
    initial: &GaussianRbmParams,
    cfg: &TrainConfig,
) -> Result<Trained<GaussianRbmParams>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = initial.clone();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let g = generative_cd_gradient(&dataset[i], &params, cfg.iterations, &mut rng)?;
            total += g.base.dd.iter().map(|v| v.abs()).sum::<f64>();
            params.apply(&g, cfg.learning_rate);
            divergence_check(params.iter(), epoch)?;
        }
        log.push(EpochRecord {
            epoch,
            objective: total / dataset.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(Trained { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::exact_marginals;
    use crate::rbm::cond_free_energy;
    use ndarray::array;

    fn random_params(rng: &mut ChaCha8Rng, n: usize, c: usize, d: usize, scale: f64) -> DrbmParams {
        let mut p = DrbmParams::zeros(n, c, d);
        for v in p.iter_mut() {
            *v = rng.random_range(-scale..scale);
        }
        p
    }

    fn random_example(rng: &mut ChaCha8Rng, c: usize, d: usize) -> LabeledExample {
        LabeledExample::new(
            Array1::from_iter((0..d).map(|_| rng.random_range(-1.0..1.0))),
            Array1::from_iter((0..c).map(|_| rng.random_range(0..2) as f64)),
        )
        .unwrap()
    }

    /// Parameters whose conditionals are exactly 0/1 and reproduce `y`.
    fn saturated(y: &Array1<f64>, n: usize, d: usize) -> DrbmParams {
        let mut p = DrbmParams::zeros(n, y.len(), d);
        p.u.fill(0.3);
        p.d = y.mapv(|v| if v == 1.0 { 800.0 } else { -800.0 });
        p.c.fill(900.0);
        p
    }

    /// log PL from free-energy differences only.
    fn log_pl_oracle(ex: &LabeledExample, p: &DrbmParams) -> f64 {
        let f = cond_free_energy(ex.y.view(), ex.x.view(), p).unwrap();
        (0..ex.y.len())
            .map(|j| {
                let mut flipped = ex.y.clone();
                flipped[j] = 1.0 - flipped[j];
                let ff = cond_free_energy(flipped.view(), ex.x.view(), p).unwrap();
                let m = (-f).max(-ff);
                -f - (m + ((-f - m).exp() + (-ff - m).exp()).ln())
            })
            .sum()
    }

    #[test]
    fn saturated_chain_gives_zero_gradient() {
        let y = array![1.0, 0.0, 1.0];
        let p = saturated(&y, 2, 2);
        let ex = LabeledExample::new(array![0.5, -0.5], y).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = cd_gradient(&ex, &p, 5, &mut rng).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        let g = mfcd_gradient(&ex, &p, 5).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn all_estimators_vanish_when_phases_coincide() {
        // With U = 0 and the label bias matching the data exactly, positive
        // and negative statistics agree for every estimator.
        let y = array![1.0, 0.0];
        let mut p = DrbmParams::zeros(2, 2, 1);
        p.d = array![800.0, -800.0];
        p.c = array![0.4, -0.2];
        let ex = LabeledExample::new(array![0.7], y).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(cd_gradient(&ex, &p, 3, &mut rng).unwrap().max_abs(), 0.0);
        assert_eq!(mfcd_gradient(&ex, &p, 3).unwrap().max_abs(), 0.0);
        assert!(lbp_gradient(&ex, &p, 5, 0.5).unwrap().max_abs() < 1e-12);
        assert!(pl_gradient(&ex, &p).unwrap().0.max_abs() < 1e-15);
    }

    #[test]
    fn cd1_label_bias_expectation_is_logistic() {
        let mut p = DrbmParams::zeros(2, 3, 1);
        p.d = array![-1.0, 0.5, 2.0];
        let ex = LabeledExample::new(array![0.3], array![1.0, 0.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let runs = 100_000;
        let mut sum = Array1::<f64>::zeros(3);
        let mut sq = Array1::<f64>::zeros(3);
        for _ in 0..runs {
            let g = cd_gradient(&ex, &p, 1, &mut rng).unwrap();
            sum += &g.dd;
            sq += &g.dd.mapv(|v| v * v);
        }
        for j in 0..3 {
            let mean = sum[j] / runs as f64;
            let se = ((sq[j] / runs as f64 - mean * mean) / runs as f64).sqrt();
            let expected = ex.y[j] - sigm(p.d[j]);
            assert!((mean - expected).abs() < 3.0 * se, "j={j}: {mean} vs {expected}");
        }
    }

    #[test]
    fn mfcd_decouples_without_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = random_params(&mut rng, 3, 4, 2, 1.0);
        p.u.fill(0.0);
        let ex = random_example(&mut rng, 4, 2);
        let h = p.feature_drive(ex.x.view()).unwrap().mapv(sigm);
        for k in [1, 7] {
            let g = mfcd_gradient(&ex, &p, k).unwrap();
            for j in 0..4 {
                assert!((g.dd[j] - (ex.y[j] - sigm(p.d[j]))).abs() < 1e-15);
            }
            assert!(g.dc.iter().all(|v| v.abs() < 1e-15));
            for kk in 0..3 {
                for j in 0..4 {
                    let expected = h[kk] * (ex.y[j] - sigm(p.d[j]));
                    assert!((g.du[[kk, j]] - expected).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn mfcd_bias_against_oracle_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_params(&mut rng, 3, 4, 2, 1.0);
        let ex = random_example(&mut rng, 4, 2);
        let mf = mfcd_gradient(&ex, &p, 50).unwrap();
        let exact = exact_grad(&ex, &p).unwrap();
        let gap = mf.iter().zip(exact.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        eprintln!("mean-field CD-50 max deviation from exact gradient: {gap:.3e}");
        assert!(gap.is_finite());
    }

    #[test]
    fn lbp_gradient_exact_without_coupling_and_on_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = random_params(&mut rng, 3, 4, 2, 1.0);
        p.u.fill(0.0);
        let ex = random_example(&mut rng, 4, 2);
        let a = lbp_gradient(&ex, &p, 3, 0.5).unwrap();
        let b = exact_grad(&ex, &p).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(u, v)| (u - v).abs() < 1e-14));

        for c in [1, 5, 12] {
            let p = random_params(&mut rng, 1, c, 3, 1.5);
            let ex = random_example(&mut rng, c, 3);
            let a = lbp_gradient(&ex, &p, 25, 0.0).unwrap();
            let b = exact_grad(&ex, &p).unwrap();
            assert!(a.iter().zip(b.iter()).all(|(u, v)| (u - v).abs() < 1e-6));
        }
    }

    #[test]
    fn lbp_gradient_is_bounded_on_loopy_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (n, c, d) = (4, 6, 3);
            let p = random_params(&mut rng, n, c, d, 1.0);
            let ex = random_example(&mut rng, c, d);
            let g = lbp_gradient(&ex, &p, 10, 0.9).unwrap();
            let bound = (ex.x.dot(&ex.x).sqrt() + 1.0) * (n + c + n * c) as f64;
            assert!(g.is_finite() && g.norm() <= bound);
        }
    }

    #[test]
    fn pl_without_coupling_is_logistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = random_params(&mut rng, 3, 4, 2, 1.0);
        p.u.fill(0.0);
        let ex = random_example(&mut rng, 4, 2);
        let (g, _) = pl_gradient(&ex, &p).unwrap();
        for j in 0..4 {
            assert!((g.dd[j] - (ex.y[j] - sigm(p.d[j]))).abs() < 1e-15);
        }
        assert!(g.dw.iter().chain(g.dc.iter()).all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn pl_with_one_label_is_the_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let p = random_params(&mut rng, 3, 1, 2, 1.5);
            let ex = random_example(&mut rng, 1, 2);
            let (g, log_pl) = pl_gradient(&ex, &p).unwrap();
            let ll = exact_log_cond_prob(ex.y.view(), ex.x.view(), &p).unwrap();
            assert!((log_pl - ll).abs() < 1e-12);
            let e = exact_grad(&ex, &p).unwrap();
            assert!(g.iter().zip(e.iter()).all(|(a, b)| (a - b).abs() < 1e-8));
        }
    }

    #[test]
    fn pl_value_matches_free_energy_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let p = random_params(&mut rng, 3, 5, 2, 1.5);
            let ex = random_example(&mut rng, 5, 2);
            let (_, log_pl) = pl_gradient(&ex, &p).unwrap();
            assert!((log_pl - log_pl_oracle(&ex, &p)).abs() < 1e-10);
        }
    }

    #[test]
    fn generative_reductions() {
        let ex = LabeledExample::new(array![0.0, 0.0], array![0.0, 0.0]).unwrap();
        let p = GaussianRbmParams {
            base: DrbmParams::zeros(2, 2, 2),
            bx: Array1::zeros(2),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = generative_cd_gradient(&ex, &p, 1, &mut rng).unwrap();
        // With zero weights the reconstructed x is 0 and ĥ = 1/2 on both
        // sides; only the freshly sampled labels can differ.
        assert!(g.base.dw.iter().chain(g.base.dc.iter()).chain(g.dbx.iter()).all(|v| *v == 0.0));

        let ex = LabeledExample::new(array![0.8, -0.4], array![1.0, 0.0]).unwrap();
        let mut p = p;
        p.bx = array![0.1, 0.3];
        let g = generative_cd_gradient(&ex, &p, 1, &mut rng).unwrap();
        assert_eq!(g.dbx, &ex.x - &p.bx);
    }

    #[test]
    fn generative_cd_matches_unconditional_rbm_when_features_decouple() {
        // W = 0 makes x independent of (y, h); the label/hidden statistics
        // then follow the plain RBM over y, whose exact marginals come from
        // the enumeration oracle with zero features.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut base = random_params(&mut rng, 2, 3, 2, 1.0);
        base.w.fill(0.0);
        let p = GaussianRbmParams { base, bx: array![0.2, -0.1] };
        let ex = LabeledExample::new(array![1.0, 0.0], array![1.0, 0.0, 1.0]).unwrap();
        let plain = DrbmParams::new(p.base.u.clone(), ndarray::Array2::zeros((2, 0)), p.base.c.clone(), p.base.d.clone()).unwrap();
        let plain_ex = LabeledExample::new(Array1::zeros(0), ex.y.clone()).unwrap();
        let m = exact_marginals(Array1::zeros(0).view(), &plain).unwrap();
        let expected = Gradient::from_marginals(&plain_ex, &plain, &m).unwrap();

        let runs = 40_000;
        let mut sum = Gradient::zeros_like(&plain);
        let mut sq = Gradient::zeros_like(&plain);
        for _ in 0..runs {
            let g = generative_cd_gradient(&ex, &p, 30, &mut rng).unwrap();
            let reduced = Gradient { du: g.base.du, dw: ndarray::Array2::zeros((2, 0)), dc: g.base.dc, dd: g.base.dd };
            sum.add_scaled(&reduced, 1.0);
            let squared = Gradient {
                du: reduced.du.mapv(|v| v * v),
                dw: reduced.dw.clone(),
                dc: reduced.dc.mapv(|v| v * v),
                dd: reduced.dd.mapv(|v| v * v),
            };
            sq.add_scaled(&squared, 1.0);
        }
        for ((s, q), e) in sum.iter().zip(sq.iter()).zip(expected.iter()) {
            let mean = s / runs as f64;
            let se = ((q / runs as f64 - mean * mean) / runs as f64).sqrt();
            assert!((mean - e).abs() < 4.0 * se + 1e-12, "{mean} vs {e} (se {se})");
        }
    }

    #[test]
    fn zero_learning_rate_returns_initial_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p0 = random_params(&mut rng, 3, 4, 2, 0.5);
        let data: Vec<_> = (0..5).map(|_| random_example(&mut rng, 4, 2)).collect();
        for estimator in [EstimatorKind::Cd, EstimatorKind::Mfcd, EstimatorKind::Lbp, EstimatorKind::Pl] {
            let cfg = TrainConfig {
                estimator,
                learning_rate: 0.0,
                epochs: 3,
                iterations: 2,
                ..TrainConfig::default()
            };
            let out = sgd_train(&data, &p0, &cfg).unwrap();
            assert_eq!(out.params, p0);
            assert_eq!(out.log.len(), 3);
        }
    }

    #[test]
    fn pl_training_fits_a_single_example() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let p0 = DrbmParams::init(3, 4, 2, &mut rng);
        let ex = LabeledExample::new(array![0.6, -0.8], array![1.0, 0.0, 1.0, 1.0]).unwrap();
        let cfg = TrainConfig {
            estimator: EstimatorKind::Pl,
            learning_rate: 0.5,
            epochs: 300,
            ..TrainConfig::default()
        };
        let out = sgd_train(std::slice::from_ref(&ex), &p0, &cfg).unwrap();
        let q = exact_log_cond_prob(ex.y.view(), ex.x.view(), &out.params).unwrap().exp();
        assert!(q > 0.99, "p(y|x) = {q}");
        assert!(out.log.last().unwrap().objective > out.log[0].objective);
    }

    #[test]
    fn exact_training_is_monotone_at_small_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let p0 = random_params(&mut rng, 3, 4, 2, 0.5);
        let ex = random_example(&mut rng, 4, 2);
        let cfg = TrainConfig {
            estimator: EstimatorKind::Exact,
            learning_rate: 1e-3,
            epochs: 1,
            ..TrainConfig::default()
        };
        let mut p = p0;
        let mut prev = exact_log_cond_prob(ex.y.view(), ex.x.view(), &p).unwrap();
        for _ in 0..200 {
            p = sgd_train(std::slice::from_ref(&ex), &p, &cfg).unwrap().params;
            let ll = exact_log_cond_prob(ex.y.view(), ex.x.view(), &p).unwrap();
            assert!(ll >= prev - 1e-9);
            prev = ll;
        }
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let p0 = DrbmParams::init(3, 4, 2, &mut rng);
        let data: Vec<_> = (0..8).map(|_| random_example(&mut rng, 4, 2)).collect();
        for estimator in [EstimatorKind::Cd, EstimatorKind::Pl] {
            let cfg = TrainConfig {
                estimator,
                epochs: 4,
                learning_rate: 0.1,
                seed: 99,
                ..TrainConfig::default()
            };
            let a = sgd_train(&data, &p0, &cfg).unwrap().params;
            let b = sgd_train(&data, &p0, &cfg).unwrap().params;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn divergence_and_empty_dataset_errors() {
        let p0 = DrbmParams::zeros(2, 2, 1);
        assert!(matches!(sgd_train(&[], &p0, &TrainConfig::default()), Err(Error::EmptyDataset)));
        let mut p0 = p0;
        p0.c[0] = 2e6;
        let ex = LabeledExample::new(array![1.0], array![1.0, 0.0]).unwrap();
        let cfg = TrainConfig {
            estimator: EstimatorKind::Pl,
            epochs: 2,
            ..TrainConfig::default()
        };
        let err = sgd_train(&[ex], &p0, &cfg);
        assert!(matches!(err, Err(Error::Divergence { epoch: 1, .. })), "{err:?}");
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig { iterations: 0, ..TrainConfig::default() },
            TrainConfig { damping: 1.0, ..TrainConfig::default() },
            TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
        assert_eq!("LBP".parse::<EstimatorKind>().unwrap(), EstimatorKind::Lbp);
        assert!("gibbs".parse::<EstimatorKind>().is_err());
    }
}
