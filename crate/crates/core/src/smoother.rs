//! Doubly conditional RBM for tag smoothing.
//!
//! Given the tags `y` one user applied to a clip, the model conditions the
//! hidden units on the average tag vector `u` of the other users of that
//! clip and the labels on a one-hot auxiliary vector `a` (user, track, clip):
//!
//! ```text
//! E(y, h | u, a) = -hᵀ U y - hᵀ W u - yᵀ V a - dᵀ y - cᵀ h
//! ```
//!
//! `Wu` and `Va` act as extra biases, so every conditional computation is a
//! plain RBM over `y` with biases `c + Wu` and `d + Va`.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{TargetMatrix, ThreeStateTagMatrix};
use crate::error::{check_len, Error, Result};
use crate::estimators::{cd_gradient, divergence_check, EpochRecord, TrainConfig, Trained};
use crate::rbm::{sigm, DrbmParams, LabeledExample};

/// Mean-field tolerance used by [`smooth_tags`].
pub const SMOOTHING_TOLERANCE: f64 = 1e-8;
const SMOOTHING_MAX_SWEEPS: usize = 10_000;

/// Sizes of the user, track and clip vocabularies that make up `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuxSizes {
    pub users: usize,
    pub tracks: usize,
    pub clips: usize,
}

impl AuxSizes {
    pub fn total(&self) -> usize {
        self.users + self.tracks + self.clips
    }
}

/// One-hot auxiliary vector. `user = None` zeroes the user block, which is
/// how a new, unknown user is represented at smoothing time.
pub fn build_aux(user: Option<usize>, track: usize, clip: usize, sizes: AuxSizes) -> Result<Array1<f64>> {
    let check = |kind: &'static str, id: usize, size: usize| {
        if id < size {
            Ok(())
        } else {
            Err(Error::UnknownId {
                kind,
                id: format!("{id} (vocabulary size {size})"),
            })
        }
    };
    if let Some(u) = user {
        check("user", u, sizes.users)?;
    }
    check("track", track, sizes.tracks)?;
    check("clip", clip, sizes.clips)?;
    let mut a = Array1::zeros(sizes.total());
    if let Some(u) = user {
        a[u] = 1.0;
    }
    a[sizes.users + track] = 1.0;
    a[sizes.users + sizes.tracks + clip] = 1.0;
    Ok(a)
}

/// The tags one user applied to one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct TagEvent {
    pub user: usize,
    pub track: usize,
    pub clip: usize,
    pub y: Array1<f64>,
}

/// Mean tag vector over `events` excluding `excluded` (all users when
/// `None`); the zero vector when nobody is left.
pub fn other_users_avg<'a>(
    events: impl IntoIterator<Item = &'a TagEvent>,
    excluded: Option<usize>,
    labels: usize,
) -> Result<Array1<f64>> {
    let mut sum = Array1::<f64>::zeros(labels);
    let mut count = 0usize;
    for e in events {
        if Some(e.user) == excluded {
            continue;
        }
        check_len("event tag vector", labels, e.y.len())?;
        sum += &e.y;
        count += 1;
    }
    if count > 0 {
        sum /= count as f64;
    }
    Ok(sum)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherParams {
    /// Hidden-to-tag weights, `n × C`.
    pub u: Array2<f64>,
    /// Hidden units conditioned on the other-users average, `n × C`.
    pub w: Array2<f64>,
    /// Tags conditioned on the auxiliary one-hot block, `C × A`.
    pub v: Array2<f64>,
    pub c: Array1<f64>,
    pub d: Array1<f64>,
    pub sizes: AuxSizes,
}

impl SmootherParams {
    pub fn zeros(hidden: usize, labels: usize, sizes: AuxSizes) -> Self {
        SmootherParams {
            u: Array2::zeros((hidden, labels)),
            w: Array2::zeros((hidden, labels)),
            v: Array2::zeros((labels, sizes.total())),
            c: Array1::zeros(hidden),
            d: Array1::zeros(labels),
            sizes,
        }
    }

    /// Weights uniform in `[-0.01, 0.01]`, biases zero.
    pub fn init<R: Rng + ?Sized>(hidden: usize, labels: usize, sizes: AuxSizes, rng: &mut R) -> Self {
        let mut p = Self::zeros(hidden, labels, sizes);
        for m in [&mut p.u, &mut p.w, &mut p.v] {
            m.mapv_inplace(|_| rng.random_range(-0.01..=0.01));
        }
        p
    }

    pub fn new(
        u: Array2<f64>,
        w: Array2<f64>,
        v: Array2<f64>,
        c: Array1<f64>,
        d: Array1<f64>,
        sizes: AuxSizes,
    ) -> Result<Self> {
        let (n, labels) = u.dim();
        check_len("smoother W rows", n, w.nrows())?;
        check_len("smoother W columns", labels, w.ncols())?;
        check_len("smoother V rows", labels, v.nrows())?;
        check_len("smoother V columns", sizes.total(), v.ncols())?;
        check_len("smoother c", n, c.len())?;
        check_len("smoother d", labels, d.len())?;
        let p = SmootherParams { u, w, v, c, d, sizes };
        if !p.iter().all(f64::is_finite) {
            return Err(Error::InvalidValue("smoother parameters must be finite".into()));
        }
        Ok(p)
    }

    pub fn n_hidden(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_labels(&self) -> usize {
        self.u.ncols()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.u
            .iter()
            .chain(self.w.iter())
            .chain(self.v.iter())
            .chain(self.c.iter())
            .chain(self.d.iter())
            .copied()
    }

    /// The plain RBM over `y` obtained by folding `Wu` and `Va` into the biases.
    pub fn conditioned(&self, u: ArrayView1<f64>, a: ArrayView1<f64>) -> Result<DrbmParams> {
        check_len("average tag vector u", self.n_labels(), u.len())?;
        check_len("auxiliary vector a", self.sizes.total(), a.len())?;
        DrbmParams::new(
            self.u.clone(),
            Array2::zeros((self.n_hidden(), 0)),
            &self.c + &self.w.dot(&u),
            &self.d + &self.v.dot(&a),
        )
    }

    /// `θ ← θ + step · g`. Entries of `V` and `W` that would cross zero are
    /// set to zero instead.
    pub fn apply(&mut self, g: &SmootherGradient, step: f64) {
        self.u.scaled_add(step, &g.du);
        self.c.scaled_add(step, &g.dc);
        self.d.scaled_add(step, &g.dd);
        for (m, dm) in [(&mut self.w, &g.dw), (&mut self.v, &g.dv)] {
            ndarray::Zip::from(m).and(dm).for_each(|p, &dp| {
                let next = *p + step * dp;
                *p = if *p != 0.0 && next.signum() != p.signum() { 0.0 } else { next };
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherGradient {
    pub du: Array2<f64>,
    pub dw: Array2<f64>,
    pub dv: Array2<f64>,
    pub dc: Array1<f64>,
    pub dd: Array1<f64>,
}

impl SmootherGradient {
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.du
            .iter()
            .chain(self.dw.iter())
            .chain(self.dv.iter())
            .chain(self.dc.iter())
            .chain(self.dd.iter())
            .copied()
    }
}

fn outer(a: &Array1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    a.view().insert_axis(Axis(1)).dot(&b.insert_axis(Axis(0)))
}

/// Conditional CD-K ascent direction, minus the ℓ1 subgradient
/// `l1 · sign(·)` on `V` and `W`.
pub fn smoother_cd_gradient<R: Rng + ?Sized>(
    event: &TagEvent,
    u: ArrayView1<f64>,
    a: ArrayView1<f64>,
    p: &SmootherParams,
    k: usize,
    rng: &mut R,
    l1: f64,
) -> Result<SmootherGradient> {
    let folded = p.conditioned(u, a)?;
    let ex = LabeledExample::new(Array1::zeros(0), event.y.clone())?;
    let g = cd_gradient(&ex, &folded, k, rng)?;
    let mut dw = outer(&g.dc, u);
    let mut dv = outer(&g.dd, a);
    if l1 != 0.0 {
        dw.zip_mut_with(&p.w, |d, &w| *d -= l1 * sign(w));
        dv.zip_mut_with(&p.v, |d, &v| *d -= l1 * sign(v));
    }
    Ok(SmootherGradient {
        du: g.du,
        dw,
        dv,
        dc: g.dc,
        dd: g.dd,
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-event conditioning `(u, a)` used during training: `u` averages the
/// other users of the same clip.
pub fn training_inputs(events: &[TagEvent], labels: usize, sizes: AuxSizes) -> Result<Vec<(Array1<f64>, Array1<f64>)>> {
    let mut by_clip: BTreeMap<usize, Vec<&TagEvent>> = BTreeMap::new();
    for e in events {
        by_clip.entry(e.clip).or_default().push(e);
    }
    events
        .iter()
        .map(|e| {
            let u = other_users_avg(by_clip[&e.clip].iter().copied(), Some(e.user), labels)?;
            let a = build_aux(Some(e.user), e.track, e.clip, sizes)?;
            Ok((u, a))
        })
        .collect()
}

/// Per-event SGD with conditional CD-K; `cfg.iterations` is K and `cfg.l1`
/// the shrinkage weight on `V` and `W`.
pub fn train_smoother(
    events: &[TagEvent],
    initial: &SmootherParams,
    cfg: &TrainConfig,
) -> Result<Trained<SmootherParams>> {
    cfg.validate()?;
    if events.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let inputs = training_inputs(events, initial.n_labels(), initial.sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = initial.clone();
    let mut order: Vec<usize> = (0..events.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (u, a) = &inputs[i];
            let g = smoother_cd_gradient(&events[i], u.view(), a.view(), &params, cfg.iterations, &mut rng, cfg.l1)?;
            total += g.dd.iter().map(|v| v.abs()).sum::<f64>();
            params.apply(&g, cfg.learning_rate);
            divergence_check(params.iter(), epoch)?;
        }
        log.push(EpochRecord {
            epoch,
            objective: total / events.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(Trained { params, log })
}

/// Tag probabilities a new user would apply to `clip`: `u` averages all of
/// the clip's events, the user block of `a` is zero, and the mean-field
/// iteration starts from `y = u`.
pub fn smooth_tags(clip: usize, track: usize, p: &SmootherParams, clip_events: &[TagEvent]) -> Result<Array1<f64>> {
    if let Some(e) = clip_events.iter().find(|e| e.clip != clip) {
        return Err(Error::InvalidValue(format!(
            "event for clip {} passed while smoothing clip {clip}",
            e.clip
        )));
    }
    let u = other_users_avg(clip_events, None, p.n_labels())?;
    let a = build_aux(None, track, clip, p.sizes)?;
    let hidden_bias = &p.c + &p.w.dot(&u);
    let label_bias = &p.d + &p.v.dot(&a);
    let mut y = u;
    for _ in 0..SMOOTHING_MAX_SWEEPS {
        let h = (&hidden_bias + &p.u.dot(&y)).mapv_into(sigm);
        let next = (&label_bias + &p.u.t().dot(&h)).mapv_into(sigm);
        let change = next.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        y = next;
        if change < SMOOTHING_TOLERANCE {
            break;
        }
    }
    Ok(y)
}

/// Training targets from smoother outputs: every cell takes the smoothed
/// probability, and cells UNKNOWN in the raw matrix stay masked out.
pub fn smoothed_dataset(raw: &ThreeStateTagMatrix, smoothed: &Array2<f64>) -> Result<TargetMatrix> {
    if raw.cells.dim() != smoothed.dim() {
        return Err(Error::Dimension {
            context: "smoothed targets",
            expected: raw.cells.len(),
            actual: smoothed.len(),
        });
    }
    TargetMatrix::new(smoothed.clone(), raw.to_targets().mask)
}
