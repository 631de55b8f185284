//! Comparison classifiers: a one-hidden-layer perceptron and per-tag
//! logistic regression, both with independent sigmoid outputs trained by
//! per-example SGD on masked cross-entropy.
//!
//! Unlike the RBM estimators these return gradients of the *loss*; training
//! steps are `θ ← θ - λ · g`.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::TargetMatrix;
use crate::error::{check_len, Error, Result};
use crate::estimators::{divergence_check, EpochRecord, Trained};
use crate::rbm::{sigm, softplus};

pub const MLP_DEFAULT_HIDDEN: usize = 250;
pub const MLP_DEFAULT_LEARNING_RATE: f64 = 0.001;
pub const LOGREG_DEFAULT_LEARNING_RATE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl BaselineConfig {
    pub fn mlp() -> Self {
        BaselineConfig {
            learning_rate: MLP_DEFAULT_LEARNING_RATE,
            epochs: 50,
            seed: 0,
        }
    }

    pub fn logreg() -> Self {
        BaselineConfig {
            learning_rate: LOGREG_DEFAULT_LEARNING_RATE,
            epochs: 50,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// `Σ_j mask_j · [softplus(z_j) - t_j z_j]`, the cross-entropy of sigmoid
/// outputs with logits `z` against soft targets `t`.
fn masked_cross_entropy(z: &Array1<f64>, t: ArrayView1<f64>, mask: ArrayView1<bool>) -> f64 {
    z.iter()
        .zip(t)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&z, &t), _)| softplus(z) - t * z)
        .sum()
}

fn output_delta(z: &Array1<f64>, t: ArrayView1<f64>, mask: ArrayView1<bool>) -> Array1<f64> {
    Array1::from_iter(
        z.iter()
            .zip(t)
            .zip(mask)
            .map(|((&z, &t), &m)| if m { sigm(z) - t } else { 0.0 }),
    )
}

fn check_targets(x: ArrayView2<f64>, targets: &TargetMatrix, labels: usize) -> Result<()> {
    check_len("target rows", x.nrows(), targets.values.nrows())?;
    check_len("target columns", labels, targets.values.ncols())?;
    if x.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

fn outer(a: ArrayView1<f64>, b: &Array1<f64>) -> Array2<f64> {
    a.insert_axis(Axis(1)).dot(&b.view().insert_axis(Axis(0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// Input-to-hidden weights, `D × H`.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// Hidden-to-output weights, `H × C`.
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl MlpParams {
    pub fn zeros(features: usize, hidden: usize, labels: usize) -> Self {
        MlpParams {
            w1: Array2::zeros((features, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, labels)),
            b2: Array1::zeros(labels),
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))` per layer, biases zero.
    pub fn init<R: Rng + ?Sized>(features: usize, hidden: usize, labels: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(features, hidden, labels);
        let r1 = (6.0 / (features + hidden).max(1) as f64).sqrt();
        let r2 = (6.0 / (hidden + labels).max(1) as f64).sqrt();
        p.w1.mapv_inplace(|_| rng.random_range(-r1..=r1));
        p.w2.mapv_inplace(|_| rng.random_range(-r2..=r2));
        p
    }

    pub fn n_hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn n_labels(&self) -> usize {
        self.b2.len()
    }

    pub fn n_features(&self) -> usize {
        self.w1.nrows()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
    }

    fn forward(&self, x: ArrayView1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        check_len("feature vector x", self.n_features(), x.len())?;
        let h = (self.w1.t().dot(&x) + &self.b1).mapv_into(sigm);
        let z = self.w2.t().dot(&h) + &self.b2;
        Ok((h, z))
    }

    fn step(&mut self, g: &MlpGradient, lr: f64) {
        self.w1.scaled_add(-lr, &g.w1);
        self.b1.scaled_add(-lr, &g.b1);
        self.w2.scaled_add(-lr, &g.w2);
        self.b2.scaled_add(-lr, &g.b2);
    }
}

pub fn mlp_predict(x: ArrayView1<f64>, p: &MlpParams) -> Result<Array1<f64>> {
    Ok(p.forward(x)?.1.mapv_into(sigm))
}

pub fn mlp_loss(x: ArrayView1<f64>, t: ArrayView1<f64>, mask: ArrayView1<bool>, p: &MlpParams) -> Result<f64> {
    check_len("target vector", p.n_labels(), t.len())?;
    let (_, z) = p.forward(x)?;
    Ok(masked_cross_entropy(&z, t, mask))
}

/// Gradient of [`mlp_loss`] by backpropagation.
pub fn mlp_loss_gradient(
    x: ArrayView1<f64>,
    t: ArrayView1<f64>,
    mask: ArrayView1<bool>,
    p: &MlpParams,
) -> Result<(MlpGradient, f64)> {
    check_len("target vector", p.n_labels(), t.len())?;
    let (h, z) = p.forward(x)?;
    let loss = masked_cross_entropy(&z, t, mask);
    let dz = output_delta(&z, t, mask);
    let dh = p.w2.dot(&dz) * h.mapv(|v| v * (1.0 - v));
    Ok((
        MlpGradient {
            w1: outer(x, &dh),
            b1: dh,
            w2: outer(h.view(), &dz),
            b2: dz,
        },
        loss,
    ))
}

fn sgd<P, G>(
    x: ArrayView2<f64>,
    targets: &TargetMatrix,
    initial: &P,
    cfg: &BaselineConfig,
    grad: impl Fn(ArrayView1<f64>, ArrayView1<f64>, ArrayView1<bool>, &P) -> Result<(G, f64)>,
    step: impl Fn(&mut P, &G, f64),
    values: impl Fn(&P) -> Vec<f64>,
) -> Result<Trained<P>>
where
    P: Clone,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = initial.clone();
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (g, loss) = grad(x.row(i), targets.values.row(i), targets.mask.row(i), &params)?;
            total += loss;
            step(&mut params, &g, cfg.learning_rate);
        }
        divergence_check(values(&params).into_iter(), epoch)?;
        log.push(EpochRecord {
            epoch,
            objective: total / x.nrows() as f64,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(Trained { params, log })
}

/// Seeded per-example SGD on masked cross-entropy; targets may be soft.
/// The epoch log records the mean loss seen during each pass.
pub fn mlp_train(
    x: ArrayView2<f64>,
    targets: &TargetMatrix,
    initial: &MlpParams,
    cfg: &BaselineConfig,
) -> Result<Trained<MlpParams>> {
    check_len("feature columns", initial.n_features(), x.ncols())?;
    check_targets(x, targets, initial.n_labels())?;
    sgd(
        x,
        targets,
        initial,
        cfg,
        mlp_loss_gradient,
        |p, g, lr| p.step(g, lr),
        |p| p.iter().collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegParams {
    /// `D × C`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegGradient {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl LogRegParams {
    pub fn zeros(features: usize, labels: usize) -> Self {
        LogRegParams {
            w: Array2::zeros((features, labels)),
            b: Array1::zeros(labels),
        }
    }

    pub fn n_labels(&self) -> usize {
        self.b.len()
    }

    pub fn n_features(&self) -> usize {
        self.w.nrows()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.w.iter().chain(self.b.iter()).copied()
    }

    fn logits(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_len("feature vector x", self.n_features(), x.len())?;
        Ok(self.w.t().dot(&x) + &self.b)
    }
}

pub fn logreg_predict(x: ArrayView1<f64>, p: &LogRegParams) -> Result<Array1<f64>> {
    Ok(p.logits(x)?.mapv_into(sigm))
}

pub fn logreg_loss(x: ArrayView1<f64>, t: ArrayView1<f64>, mask: ArrayView1<bool>, p: &LogRegParams) -> Result<f64> {
    check_len("target vector", p.n_labels(), t.len())?;
    Ok(masked_cross_entropy(&p.logits(x)?, t, mask))
}

pub fn logreg_loss_gradient(
    x: ArrayView1<f64>,
    t: ArrayView1<f64>,
    mask: ArrayView1<bool>,
    p: &LogRegParams,
) -> Result<(LogRegGradient, f64)> {
    check_len("target vector", p.n_labels(), t.len())?;
    let z = p.logits(x)?;
    let loss = masked_cross_entropy(&z, t, mask);
    let dz = output_delta(&z, t, mask);
    Ok((LogRegGradient { w: outer(x, &dz), b: dz }, loss))
}

/// Logistic regression starts from zero weights.
pub fn logreg_train(x: ArrayView2<f64>, targets: &TargetMatrix, cfg: &BaselineConfig) -> Result<Trained<LogRegParams>> {
    let initial = LogRegParams::zeros(x.ncols(), targets.values.ncols());
    check_targets(x, targets, initial.n_labels())?;
    sgd(
        x,
        targets,
        &initial,
        cfg,
        logreg_loss_gradient,
        |p, g, lr| {
            p.w.scaled_add(-lr, &g.w);
            p.b.scaled_add(-lr, &g.b);
        },
        |p| p.iter().collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_mlp(rng: &mut ChaCha8Rng, d: usize, h: usize, c: usize) -> MlpParams {
        let mut p = MlpParams::zeros(d, h, c);
        for m in [&mut p.w1, &mut p.w2] {
            m.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        }
        p.b1.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        p.b2.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        p
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
        Array1::from_iter((0..n).map(|_| rng.random_range(-1.0..1.0)))
    }

    fn all_known(values: Array2<f64>) -> TargetMatrix {
        let mask = values.mapv(|_| true);
        TargetMatrix { values, mask }
    }

    #[test]
    fn zero_models_predict_half() {
        let x = array![0.3, -2.0, 1.0];
        assert!(mlp_predict(x.view(), &MlpParams::zeros(3, 4, 2)).unwrap().iter().all(|&v| v == 0.5));
        assert!(logreg_predict(x.view(), &LogRegParams::zeros(3, 2)).unwrap().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn constant_hidden_layer_closed_form() {
        let mut p = MlpParams::zeros(2, 3, 2);
        p.w2 = array![[1.0, -1.0], [0.5, 2.0], [0.0, 1.0]];
        p.b2 = array![0.2, -0.4];
        let out = mlp_predict(array![5.0, -7.0].view(), &p).unwrap();
        assert!((out[0] - sigm(0.2 + 0.5 * 1.5)).abs() < 1e-15);
        assert!((out[1] - sigm(-0.4 + 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn forward_matches_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let (d, h, c) = (4, 5, 3);
            let p = random_mlp(&mut rng, d, h, c);
            let x = random_vec(&mut rng, d);
            let out = mlp_predict(x.view(), &p).unwrap();
            let mut hidden = vec![0.0; h];
            for k in 0..h {
                let mut a = p.b1[k];
                for i in 0..d {
                    a += p.w1[[i, k]] * x[i];
                }
                hidden[k] = 1.0 / (1.0 + (-a).exp());
            }
            for j in 0..c {
                let mut z = p.b2[j];
                for k in 0..h {
                    z += p.w2[[k, j]] * hidden[k];
                }
                assert!((out[j] - 1.0 / (1.0 + (-z).exp())).abs() < 1e-14);
            }
        }
    }

    fn check_fd(analytic: &[f64], numeric: &[f64]) {
        for (a, n) in analytic.iter().zip(numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
            assert!(rel < 1e-6, "analytic {a} numeric {n}");
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let p = random_mlp(&mut rng, 3, 4, 3);
            let x = random_vec(&mut rng, 3);
            let t = Array1::from_iter((0..3).map(|_| rng.random_range(0.0..1.0)));
            let mask = array![true, false, true];
            let (g, _) = mlp_loss_gradient(x.view(), t.view(), mask.view(), &p).unwrap();
            let analytic: Vec<f64> = g.w1.iter().chain(&g.b1).chain(&g.w2).chain(&g.b2).copied().collect();
            let mut numeric = Vec::new();
            let eps = 1e-5;
            let n_params = p.iter().count();
            for idx in 0..n_params {
                let mut vals = [0.0; 2];
                for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
                    let mut q = p.clone();
                    let entry = q
                        .w1
                        .iter_mut()
                        .chain(q.b1.iter_mut())
                        .chain(q.w2.iter_mut())
                        .chain(q.b2.iter_mut())
                        .nth(idx)
                        .unwrap();
                    *entry += sign * eps;
                    vals[s] = mlp_loss(x.view(), t.view(), mask.view(), &q).unwrap();
                }
                numeric.push((vals[0] - vals[1]) / (2.0 * eps));
            }
            check_fd(&analytic, &numeric);
        }
    }

    #[test]
    fn logreg_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let mut p = LogRegParams::zeros(3, 2);
            p.w.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            p.b.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            let x = random_vec(&mut rng, 3);
            let t = array![1.0, 0.3];
            let mask = array![true, true];
            let (g, _) = logreg_loss_gradient(x.view(), t.view(), mask.view(), &p).unwrap();
            let analytic: Vec<f64> = g.w.iter().chain(&g.b).copied().collect();
            let eps = 1e-5;
            let numeric: Vec<f64> = (0..8)
                .map(|idx| {
                    let eval = |sign: f64| {
                        let mut q = p.clone();
                        *q.w.iter_mut().chain(q.b.iter_mut()).nth(idx).unwrap() += sign * eps;
                        logreg_loss(x.view(), t.view(), mask.view(), &q).unwrap()
                    };
                    (eval(1.0) - eval(-1.0)) / (2.0 * eps)
                })
                .collect();
            check_fd(&analytic, &numeric);
        }
    }

    #[test]
    fn zero_rate_keeps_initialisation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let init = MlpParams::init(2, 3, 1, &mut rng);
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let t = all_known(array![[1.0], [0.0]]);
        let cfg = BaselineConfig {
            learning_rate: 0.0,
            epochs: 5,
            seed: 1,
        };
        assert_eq!(mlp_train(x.view(), &t, &init, &cfg).unwrap().params, init);
        assert_eq!(
            logreg_train(x.view(), &t, &cfg).unwrap().params,
            LogRegParams::zeros(2, 1)
        );
    }

    fn separable(rng: &mut ChaCha8Rng, n: usize) -> (Array2<f64>, TargetMatrix) {
        let mut x = Array2::zeros((n, 2));
        let mut t = Array2::zeros((n, 1));
        for i in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            let shift = if a + b > 0.0 { 0.2 } else { -0.2 };
            x[[i, 0]] = a + shift;
            x[[i, 1]] = b + shift;
            t[[i, 0]] = f64::from(u8::from(a + b > 0.0));
        }
        (x, all_known(t))
    }

    #[test]
    fn mlp_fits_separable_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (x, t) = separable(&mut rng, 40);
        let init = MlpParams::init(2, 8, 1, &mut rng);
        let cfg = BaselineConfig {
            learning_rate: 0.5,
            epochs: 500,
            seed: 2,
        };
        let p = mlp_train(x.view(), &t, &init, &cfg).unwrap().params;
        for (row, target) in x.rows().into_iter().zip(t.values.column(0)) {
            let pred = mlp_predict(row, &p).unwrap()[0];
            assert_eq!(pred > 0.5, *target == 1.0);
        }
    }

    #[test]
    fn logreg_learns_sign() {
        let x = array![[1.0], [-1.0], [0.5], [-0.3]];
        let t = all_known(array![[1.0], [0.0], [1.0], [0.0]]);
        let cfg = BaselineConfig {
            learning_rate: 0.5,
            epochs: 100,
            seed: 0,
        };
        let p = logreg_train(x.view(), &t, &cfg).unwrap().params;
        assert!(p.w[[0, 0]] > 0.0);
    }

    #[test]
    fn masked_cells_are_ignored() {
        let p = LogRegParams {
            w: array![[0.7]],
            b: array![-0.2],
        };
        let x = array![-1.0];
        let (g, loss) = logreg_loss_gradient(x.view(), array![1.0].view(), array![false].view(), &p).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.w.iter().chain(&g.b).all(|&v| v == 0.0));
    }

    #[test]
    fn logreg_beats_untrained_mlp_on_separable_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (x, t) = separable(&mut rng, 60);
        let lr = logreg_train(x.view(), &t, &BaselineConfig::logreg()).unwrap().params;
        let mlp = MlpParams::init(2, MLP_DEFAULT_HIDDEN, 1, &mut rng);
        let total = |f: &dyn Fn(usize) -> f64| (0..x.nrows()).map(f).sum::<f64>();
        let lr_loss = total(&|i| logreg_loss(x.row(i), t.values.row(i), t.mask.row(i), &lr).unwrap());
        let mlp_loss_sum = total(&|i| mlp_loss(x.row(i), t.values.row(i), t.mask.row(i), &mlp).unwrap());
        assert!(lr_loss < mlp_loss_sum);
    }

    #[test]
    fn predictions_do_not_depend_on_batch_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_mlp(&mut rng, 3, 4, 2);
        let rows: Vec<Array1<f64>> = (0..6).map(|_| random_vec(&mut rng, 3)).collect();
        let forward: Vec<_> = rows.iter().map(|r| mlp_predict(r.view(), &p).unwrap()).collect();
        let backward: Vec<_> = rows.iter().rev().map(|r| mlp_predict(r.view(), &p).unwrap()).collect();
        for (a, b) in forward.iter().zip(backward.iter().rev()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let x = array![[1e150], [-1e150]];
        let t = all_known(array![[1.0], [0.0]]);
        let cfg = BaselineConfig {
            learning_rate: 1.0,
            epochs: 1,
            seed: 0,
        };
        assert!(matches!(logreg_train(x.view(), &t, &cfg), Err(Error::Divergence { epoch: 1, .. })));
    }

    #[test]
    fn shape_errors() {
        let x = array![[1.0, 2.0]];
        let t = all_known(array![[1.0]]);
        let init = MlpParams::zeros(3, 2, 1);
        assert!(mlp_train(x.view(), &t, &init, &BaselineConfig::mlp()).is_err());
        assert!(mlp_predict(array![1.0].view(), &init).is_err());
    }
}
