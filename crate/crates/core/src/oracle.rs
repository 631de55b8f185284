//! Exact inference by enumeration, for small label sets.
//!
//! The primary path enumerates the `2^C` label vectors and marginalises the
//! hidden layer analytically through the conditional free energy. The joint
//! `2^{C+n}` enumeration in [`joint_log_partition`] / [`joint_marginals`] is
//! slower and exists to cross-check it.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::rbm::{energy, log_sum_exp, sigm, softplus, DrbmParams, Gradient, LabeledExample};

pub use crate::rbm::Marginals;

/// Enumeration bound in bits.
pub const ENUMERATION_LIMIT: usize = 20;

// The Gray-code walk updates the hidden input incrementally; recompute it
// from scratch this often to stop rounding drift.
const REFRESH_INTERVAL: u64 = 256;

fn check_capacity(what: &'static str, size: usize) -> Result<()> {
    if size > ENUMERATION_LIMIT {
        Err(Error::Capacity {
            what,
            size,
            limit: ENUMERATION_LIMIT,
        })
    } else {
        Ok(())
    }
}

/// Visit every label vector in Gray-code order, passing `y`, the hidden
/// input `c + Wx + Uy` and `-F(y | x)`.
fn for_each_labeling<F>(x: ArrayView1<f64>, p: &DrbmParams, mut visit: F) -> Result<()>
where
    F: FnMut(&Array1<f64>, &Array1<f64>, f64),
{
    let labels = p.n_labels();
    check_capacity("label count C", labels)?;
    let drive = p.feature_drive(x)?;
    let mut y = Array1::<f64>::zeros(labels);
    let mut input = drive.clone();
    let total: u64 = 1 << labels;
    for step in 0..total {
        if step > 0 {
            let j = step.trailing_zeros() as usize;
            let sign = if y[j] == 0.0 { 1.0 } else { -1.0 };
            y[j] += sign;
            if step % REFRESH_INTERVAL == 0 {
                input = &drive + &p.u.dot(&y);
            } else {
                input.scaled_add(sign, &p.u.column(j));
            }
        }
        let neg_free = p.d.dot(&y) + input.iter().map(|&a| softplus(a)).sum::<f64>();
        visit(&y, &input, neg_free);
    }
    Ok(())
}

/// `log Σ_y e^{-F(y | x)}`.
pub fn exact_log_partition(x: ArrayView1<f64>, p: &DrbmParams) -> Result<f64> {
    let mut terms = Vec::with_capacity(1 << p.n_labels().min(ENUMERATION_LIMIT));
    for_each_labeling(x, p, |_, _, neg_free| terms.push(neg_free))?;
    Ok(log_sum_exp(&terms))
}

/// `log p(y | x)`.
pub fn exact_log_cond_prob(y: ArrayView1<f64>, x: ArrayView1<f64>, p: &DrbmParams) -> Result<f64> {
    let log_z = exact_log_partition(x, p)?;
    Ok(-crate::rbm::cond_free_energy(y, x, p)? - log_z)
}

pub fn exact_cond_prob(y: ArrayView1<f64>, x: ArrayView1<f64>, p: &DrbmParams) -> Result<f64> {
    Ok(exact_log_cond_prob(y, x, p)?.exp())
}

pub fn exact_marginals(x: ArrayView1<f64>, p: &DrbmParams) -> Result<Marginals> {
    check_capacity("hidden count n", p.n_hidden())?;
    let log_z = exact_log_partition(x, p)?;
    let (n, labels) = (p.n_hidden(), p.n_labels());
    let mut y_marg = Array1::<f64>::zeros(labels);
    let mut h_marg = Array1::<f64>::zeros(n);
    let mut pair = Array2::<f64>::zeros((n, labels));
    for_each_labeling(x, p, |y, input, neg_free| {
        let weight = (neg_free - log_z).exp();
        let h_cond = input.mapv(sigm);
        h_marg.scaled_add(weight, &h_cond);
        for (j, _) in y.iter().enumerate().filter(|(_, v)| **v == 1.0) {
            y_marg[j] += weight;
            for k in 0..n {
                pair[[k, j]] += weight * h_cond[k];
            }
        }
    })?;
    Ok(Marginals {
        y: y_marg,
        h: h_marg,
        pair,
    })
}

/// Exact `∇ log p(y_t | x_t)`.
pub fn exact_grad(example: &LabeledExample, p: &DrbmParams) -> Result<Gradient> {
    let m = exact_marginals(example.x.view(), p)?;
    Gradient::from_marginals(example, p, &m)
}

fn bits(mask: u64, len: usize, offset: usize) -> Array1<f64> {
    Array1::from_iter((0..len).map(|i| ((mask >> (i + offset)) & 1) as f64))
}

/// `log Σ_{y,h} e^{-E(y, h, x)}` by direct joint enumeration.
pub fn joint_log_partition(x: ArrayView1<f64>, p: &DrbmParams) -> Result<f64> {
    let (n, labels) = (p.n_hidden(), p.n_labels());
    check_capacity("joint size C + n", labels + n)?;
    let mut terms = Vec::with_capacity(1 << (labels + n));
    for mask in 0u64..(1 << (labels + n)) {
        let y = bits(mask, labels, 0);
        let h = bits(mask, n, labels);
        terms.push(-energy(y.view(), h.view(), x, p)?);
    }
    Ok(log_sum_exp(&terms))
}

/// Marginals by direct joint enumeration over `(y, h)`.
pub fn joint_marginals(x: ArrayView1<f64>, p: &DrbmParams) -> Result<Marginals> {
    let (n, labels) = (p.n_hidden(), p.n_labels());
    let log_z = joint_log_partition(x, p)?;
    let mut m = Marginals {
        y: Array1::zeros(labels),
        h: Array1::zeros(n),
        pair: Array2::zeros((n, labels)),
    };
    for mask in 0u64..(1 << (labels + n)) {
        let y = bits(mask, labels, 0);
        let h = bits(mask, n, labels);
        let w = (-energy(y.view(), h.view(), x, p)? - log_z).exp();
        m.y.scaled_add(w, &y);
        m.h.scaled_add(w, &h);
        for k in 0..n {
            for j in 0..labels {
                m.pair[[k, j]] += w * h[k] * y[j];
            }
        }
    }
    Ok(m)
}
