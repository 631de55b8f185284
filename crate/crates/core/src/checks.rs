//! Oracle-versus-approximation checks on random small instances.
//!
//! Every check draws its instances from a seeded stream, compares an
//! estimator against enumeration and reports the worst deviation seen.

use std::time::Instant;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimators::{cd_gradient, pl_gradient};
use crate::inference::{run_lbp, LbpConfig, PairNormalizer};
use crate::oracle::{exact_grad, exact_log_cond_prob, exact_marginals, ENUMERATION_LIMIT};
use crate::rbm::{cond_free_energy, DrbmParams, Gradient, LabeledExample, Marginals};

/// Central-difference step used by the gradient checks.
pub const FD_STEP: f64 = 1e-5;
/// Relative errors are measured against `max(|a|, |b|, RELATIVE_FLOOR)` so
/// that coordinates whose true value is ~0 are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict}  {:<24} {} ({:.2}s)", self.name, self.detail, self.seconds)
    }
}

fn timed(name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> Result<CheckReport> {
    let start = Instant::now();
    let (passed, detail) = body()?;
    Ok(CheckReport {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

pub fn random_params<R: Rng + ?Sized>(rng: &mut R, hidden: usize, labels: usize, features: usize, scale: f64) -> DrbmParams {
    let mut p = DrbmParams::zeros(hidden, labels, features);
    for v in p.iter_mut() {
        *v = rng.random_range(-scale..scale);
    }
    p
}

pub fn random_example<R: Rng + ?Sized>(rng: &mut R, labels: usize, features: usize) -> Result<LabeledExample> {
    LabeledExample::new(
        Array1::from_iter((0..features).map(|_| rng.random_range(-1.0..1.0))),
        Array1::from_iter((0..labels).map(|_| f64::from(rng.random_range(0..2u8)))),
    )
}

/// Central differences of `f` with respect to every parameter, in the
/// iteration order of [`DrbmParams::iter`].
pub fn finite_difference(p: &DrbmParams, f: impl Fn(&DrbmParams) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = p.clone();
    let mut out = Vec::with_capacity(p.num_params());
    for i in 0..p.num_params() {
        let base = *probe.iter_mut().nth(i).expect("index within parameter count");
        *probe.iter_mut().nth(i).expect("index within parameter count") = base + FD_STEP;
        let up = f(&probe)?;
        *probe.iter_mut().nth(i).expect("index within parameter count") = base - FD_STEP;
        let down = f(&probe)?;
        *probe.iter_mut().nth(i).expect("index within parameter count") = base;
        out.push((up - down) / (2.0 * FD_STEP));
    }
    Ok(out)
}

/// `Σ_j log p(y_j | y_{\j}, x)` computed only from conditional free
/// energies of `y` and its single-label flips.
pub fn log_pl_from_free_energy(ex: &LabeledExample, p: &DrbmParams) -> Result<f64> {
    let f = cond_free_energy(ex.y.view(), ex.x.view(), p)?;
    let mut total = 0.0;
    for j in 0..ex.y.len() {
        let mut flipped = ex.y.clone();
        flipped[j] = 1.0 - flipped[j];
        let ff = cond_free_energy(flipped.view(), ex.x.view(), p)?;
        let m = (-f).max(-ff);
        total += -f - (m + ((-f - m).exp() + (-ff - m).exp()).ln());
    }
    Ok(total)
}

fn worst_relative(analytic: &Gradient, numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| relative_error(a, *b))
        .fold(0.0, f64::max)
}

/// Exact gradient against central differences of `log p(y | x)`.
pub fn exact_gradient_check(seed: u64, instances: usize, tolerance: f64) -> Result<CheckReport> {
    timed("exact-gradient", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let p = random_params(&mut rng, 3, 4, 5, 1.0);
            let ex = random_example(&mut rng, 4, 5)?;
            let g = exact_grad(&ex, &p)?;
            let fd = finite_difference(&p, |q| exact_log_cond_prob(ex.y.view(), ex.x.view(), q))?;
            worst = worst.max(worst_relative(&g, &fd));
        }
        Ok((worst < tolerance, format!("{instances} instances, max relative error {worst:.2e}")))
    })
}

/// PL gradient against central differences of the free-energy log PL.
pub fn pl_gradient_check(seed: u64, instances: usize, tolerance: f64) -> Result<CheckReport> {
    timed("pl-gradient", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let p = random_params(&mut rng, 3, 4, 5, 1.0);
            let ex = random_example(&mut rng, 4, 5)?;
            let (g, _) = pl_gradient(&ex, &p)?;
            let fd = finite_difference(&p, |q| log_pl_from_free_energy(&ex, q))?;
            worst = worst.max(worst_relative(&g, &fd));
        }
        Ok((worst < tolerance, format!("{instances} instances, max relative error {worst:.2e}")))
    })
}

/// Mean of `runs` CD-`k` gradients on one fixed instance, compared to the
/// exact gradient coordinate by coordinate in standard-error units.
pub fn cd_consistency_check(seed: u64, runs: usize, k: usize, max_se: f64) -> Result<CheckReport> {
    timed("cd-consistency", || {
        if runs < 2 {
            return Err(Error::InvalidConfig("CD consistency needs at least 2 runs".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&mut rng, 3, 4, 2, 1.0);
        let ex = random_example(&mut rng, 4, 2)?;
        let exact = exact_grad(&ex, &p)?.to_vec();
        let mut sum = vec![0.0; exact.len()];
        let mut sq = vec![0.0; exact.len()];
        for _ in 0..runs {
            for (i, v) in cd_gradient(&ex, &p, k, &mut rng)?.iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
        }
        let n = runs as f64;
        let mut worst: f64 = 0.0;
        let mut passed = true;
        for i in 0..exact.len() {
            let mean = sum[i] / n;
            let var = ((sq[i] / n - mean * mean) * n / (n - 1.0)).max(0.0);
            let se = (var / n).sqrt();
            let gap = (mean - exact[i]).abs();
            if se > 0.0 {
                worst = worst.max(gap / se);
            }
            passed &= gap <= max_se * se + 1e-12;
        }
        Ok((passed, format!("CD-{k}, {runs} runs, worst deviation {worst:.2} SE")))
    })
}

pub fn max_marginal_gap(a: &Marginals, b: &Marginals) -> f64 {
    a.y.iter()
        .chain(a.h.iter())
        .chain(a.pair.iter())
        .zip(b.y.iter().chain(b.h.iter()).chain(b.pair.iter()))
        .fold(0.0, |m, (u, v)| m.max((u - v).abs()))
}

/// Undamped LBP on single-hidden-unit models (trees) against enumeration.
pub fn lbp_tree_check(
    seed: u64,
    models: usize,
    max_labels: usize,
    normalizer: PairNormalizer,
    tolerance: f64,
) -> Result<CheckReport> {
    timed("lbp-tree-exactness", || {
        if max_labels == 0 || max_labels > ENUMERATION_LIMIT {
            return Err(Error::Capacity {
                what: "label count C",
                size: max_labels,
                limit: ENUMERATION_LIMIT,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = LbpConfig {
            normalizer,
            ..LbpConfig::new(25, 0.0)
        };
        let mut worst: f64 = 0.0;
        for _ in 0..models {
            let c = rng.random_range(1..=max_labels);
            let p = random_params(&mut rng, 1, c, 3, 2.0);
            let x = Array1::from_iter((0..3).map(|_| rng.random_range(-1.0..1.0)));
            let lbp = run_lbp(x.view(), &p, &cfg)?.marginals;
            worst = worst.max(max_marginal_gap(&lbp, &exact_marginals(x.view(), &p)?));
        }
        Ok((worst < tolerance, format!("{models} models with C ≤ {max_labels}, max gap {worst:.2e}")))
    })
}

/// With `U = 0`, LBP pairwise beliefs factorise into singleton beliefs.
pub fn independence_check(seed: u64, instances: usize, normalizer: PairNormalizer, tolerance: f64) -> Result<CheckReport> {
    timed("independence-identity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let (n, c) = (rng.random_range(1..6), rng.random_range(1..9));
            let mut p = random_params(&mut rng, n, c, 3, 2.0);
            p.u.fill(0.0);
            let x = Array1::from_iter((0..3).map(|_| rng.random_range(-1.0..1.0)));
            let beta = rng.random_range(0.0..0.95);
            let cfg = LbpConfig {
                normalizer,
                ..LbpConfig::new(10, beta)
            };
            let m = run_lbp(x.view(), &p, &cfg)?.marginals;
            for ((k, j), &pair) in m.pair.indexed_iter() {
                worst = worst.max((pair - m.h[k] * m.y[j]).abs());
            }
        }
        Ok((worst < tolerance, format!("{instances} uncoupled models, max gap {worst:.2e}")))
    })
}

/// Sizes and tolerances for [`run_all`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    pub gradient_instances: usize,
    pub cd_runs: usize,
    pub tree_models: usize,
    pub max_labels: usize,
    pub normalizer: PairNormalizer,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 0,
            gradient_instances: 20,
            cd_runs: 100_000,
            tree_models: 50,
            max_labels: 12,
            normalizer: PairNormalizer::Full,
        }
    }
}

pub fn run_all(cfg: &SuiteConfig) -> Result<Vec<CheckReport>> {
    if cfg.max_labels > ENUMERATION_LIMIT {
        return Err(Error::Capacity {
            what: "label count C",
            size: cfg.max_labels,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(vec![
        exact_gradient_check(cfg.seed, cfg.gradient_instances, 1e-6)?,
        pl_gradient_check(cfg.seed.wrapping_add(1), cfg.gradient_instances, 1e-6)?,
        cd_consistency_check(cfg.seed.wrapping_add(2), cfg.cd_runs, 50, 3.0)?,
        lbp_tree_check(cfg.seed.wrapping_add(3), cfg.tree_models, cfg.max_labels, cfg.normalizer, 1e-8)?,
        independence_check(cfg.seed.wrapping_add(4), cfg.tree_models, cfg.normalizer, 1e-10)?,
    ])
}
