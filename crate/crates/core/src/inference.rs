//! Test-time estimators of `p(y_j = 1 | x)`: damped loopy belief
//! propagation and zero-initialised mean field.
//!
//! Messages are kept in log space and normalised so that the message sent
//! by a variable in state 0 is zero; only the state-1 log-message is stored.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rbm::{log_add_exp, log_sum_exp, sigm, softplus, DrbmParams, Marginals};

/// Normaliser for the pairwise beliefs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairNormalizer {
    /// `1 + e^{01} + e^{10} + e^{11}`: includes the (0, 0) state.
    #[default]
    Full,
    /// `e^{01} + e^{10} + e^{11}`: drops the (0, 0) state. Only useful as a
    /// negative control; it is wrong even without coupling.
    OmitZeroState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbpConfig {
    pub iterations: usize,
    pub damping: f64,
    /// Stop early once the largest message change in a sweep drops below this.
    pub tolerance: Option<f64>,
    pub normalizer: PairNormalizer,
}

impl LbpConfig {
    pub fn new(iterations: usize, damping: f64) -> Self {
        LbpConfig {
            iterations,
            damping,
            tolerance: None,
            normalizer: PairNormalizer::Full,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = Some(tolerance);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("LBP needs at least one sweep".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidConfig(format!(
                "damping {} is outside [0, 1)",
                self.damping
            )));
        }
        Ok(())
    }
}

/// Log-messages between hidden unit `k` and label `j`, indexed `[k, j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Messages {
    /// Towards hidden units.
    pub up: Array2<f64>,
    /// Towards labels.
    pub down: Array2<f64>,
}

impl Messages {
    pub fn zeros(hidden: usize, labels: usize) -> Self {
        Messages {
            up: Array2::zeros((hidden, labels)),
            down: Array2::zeros((hidden, labels)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbpOutcome {
    pub marginals: Marginals,
    pub messages: Messages,
    pub sweeps: usize,
    /// Largest absolute message change in the last sweep.
    pub last_delta: f64,
}

/// `log(1 + (e^u - 1) σ(a))`, computed as `log((1 - σ(a)) + e^u σ(a))`.
#[inline]
fn coupled_message(u: f64, a: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    log_add_exp(-softplus(a), u - softplus(-a))
}

/// Run damped loopy BP on the bipartite label/hidden graph for fixed `x`.
pub fn run_lbp(x: ArrayView1<f64>, p: &DrbmParams, cfg: &LbpConfig) -> Result<LbpOutcome> {
    cfg.validate()?;
    let drive = p.feature_drive(x)?;
    let (n, labels) = (p.n_hidden(), p.n_labels());
    let mut msg = Messages::zeros(n, labels);
    let beta = cfg.damping;
    let mut sweeps = 0;
    let mut last_delta = 0.0;

    for sweep in 1..=cfg.iterations {
        let mut delta: f64 = 0.0;

        let up_totals: Array1<f64> = msg.up.sum_axis(ndarray::Axis(1));
        for k in 0..n {
            for j in 0..labels {
                let cavity = drive[k] + up_totals[k] - msg.up[[k, j]];
                let fresh = coupled_message(p.u[[k, j]], cavity);
                let old = msg.down[[k, j]];
                let new = beta * old + (1.0 - beta) * fresh;
                delta = delta.max((new - old).abs());
                msg.down[[k, j]] = new;
            }
        }

        let down_totals: Array1<f64> = msg.down.sum_axis(ndarray::Axis(0));
        for k in 0..n {
            for j in 0..labels {
                let cavity = p.d[j] + down_totals[j] - msg.down[[k, j]];
                let fresh = coupled_message(p.u[[k, j]], cavity);
                let old = msg.up[[k, j]];
                let new = beta * old + (1.0 - beta) * fresh;
                delta = delta.max((new - old).abs());
                msg.up[[k, j]] = new;
            }
        }

        if !delta.is_finite() || msg.up.iter().chain(msg.down.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow { sweep });
        }
        sweeps = sweep;
        last_delta = delta;
        if cfg.tolerance.is_some_and(|tol| delta < tol) {
            break;
        }
    }

    let marginals = beliefs(&drive, p, &msg, cfg.normalizer);
    Ok(LbpOutcome {
        marginals,
        messages: msg,
        sweeps,
        last_delta,
    })
}

fn beliefs(drive: &Array1<f64>, p: &DrbmParams, msg: &Messages, normalizer: PairNormalizer) -> Marginals {
    let (n, labels) = (p.n_hidden(), p.n_labels());
    let down_totals = msg.down.sum_axis(ndarray::Axis(0));
    let up_totals = msg.up.sum_axis(ndarray::Axis(1));
    let y = Array1::from_iter((0..labels).map(|j| sigm(p.d[j] + down_totals[j])));
    let h = Array1::from_iter((0..n).map(|k| sigm(drive[k] + up_totals[k])));
    let mut pair = Array2::zeros((n, labels));
    for k in 0..n {
        for j in 0..labels {
            let num01 = p.d[j] + down_totals[j] - msg.down[[k, j]];
            let num10 = drive[k] + up_totals[k] - msg.up[[k, j]];
            let num11 = p.u[[k, j]] + num01 + num10;
            let log_norm = match normalizer {
                PairNormalizer::Full => log_sum_exp(&[0.0, num01, num10, num11]),
                PairNormalizer::OmitZeroState => log_sum_exp(&[num01, num10, num11]),
            };
            pair[[k, j]] = (num11 - log_norm).exp();
        }
    }
    Marginals { y, h, pair }
}

pub fn lbp_marginals(x: ArrayView1<f64>, p: &DrbmParams, iterations: usize, damping: f64) -> Result<Marginals> {
    Ok(run_lbp(x, p, &LbpConfig::new(iterations, damping))?.marginals)
}

/// Mean field from `ŷ = 0`: alternate `ĥ = σ(c + Wx + Uŷ)` and
/// `ŷ = σ(d + Uᵀĥ)` for up to `iterations` rounds or until the largest
/// change in `ŷ` falls below `1e-8`.
pub fn mf_predict(x: ArrayView1<f64>, p: &DrbmParams, iterations: usize) -> Result<Array1<f64>> {
    if iterations == 0 {
        return Err(Error::InvalidConfig("mean field needs at least one iteration".into()));
    }
    let drive = p.feature_drive(x)?;
    let mut y = Array1::<f64>::zeros(p.n_labels());
    for _ in 0..iterations {
        let h = (&drive + &p.u.dot(&y)).mapv_into(sigm);
        let next = (&p.d + &p.u.t().dot(&h)).mapv_into(sigm);
        let change = next
            .iter()
            .zip(y.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        y = next;
        if change < 1e-8 {
            break;
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum InferenceMethod {
    Lbp { iterations: usize, damping: f64 },
    Mf { iterations: usize },
}

impl Default for InferenceMethod {
    fn default() -> Self {
        InferenceMethod::Lbp {
            iterations: 10,
            damping: 0.9,
        }
    }
}

/// Per-tag ranking scores `p(y_j = 1 | x)`.
pub fn predict_scores(x: ArrayView1<f64>, p: &DrbmParams, method: InferenceMethod) -> Result<Array1<f64>> {
    match method {
        InferenceMethod::Lbp { iterations, damping } => Ok(lbp_marginals(x, p, iterations, damping)?.y),
        InferenceMethod::Mf { iterations } => mf_predict(x, p, iterations),
    }
}
