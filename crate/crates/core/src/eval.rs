//! Per-tag AUC, paired t-tests across folds, significance counts and the
//! cross-validation driver.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::data::{FoldSplit, TagState, TargetMatrix, ThreeStateTagMatrix, N_FOLDS};
use crate::error::{Error, Result};

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ranked in
/// the right order, ties counting one half. UNKNOWN labels are skipped.
/// `None` when there are no positives or no negatives.
pub fn auc(scores: &[f64], labels: &[TagState]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels must align");
    let mut pairs: Vec<(f64, bool)> = scores
        .iter()
        .zip(labels)
        .filter_map(|(&s, &l)| match l {
            TagState::Positive => Some((s, true)),
            TagState::Negative => Some((s, false)),
            TagState::Unknown => None,
        })
        .collect();
    let n_pos = pairs.iter().filter(|p| p.1).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        let midrank = (i + j + 1) as f64 / 2.0;
        rank_sum += midrank * pairs[i..j].iter().filter(|p| p.1).count() as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7.
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut a = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail `P(|T| ≥ |t|)` of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Two-sided paired t-test p-value, `df = len - 1`. All differences zero
/// gives 1; identical nonzero differences give 0.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context: "paired t-test samples",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidValue("paired t-test needs at least 2 pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if diffs.iter().all(|&d| d == 0.0) {
        return Ok(1.0);
    }
    if var == 0.0 {
        return Ok(0.0);
    }
    let t = mean / (var / n).sqrt();
    Ok(student_t_two_sided(t, n - 1.0).clamp(0.0, 1.0))
}

/// Per-(tag, fold) AUCs for one model; `None` marks an undefined cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AucReport {
    pub model: String,
    pub tags: Vec<String>,
    /// `values[tag][fold]`.
    pub values: Vec<Vec<Option<f64>>>,
}

impl AucReport {
    pub fn n_folds(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn tag_mean(&self, tag: usize) -> Option<f64> {
        mean(self.values[tag].iter().flatten().copied())
    }

    pub fn tag_means(&self) -> Vec<Option<f64>> {
        (0..self.tags.len()).map(|t| self.tag_mean(t)).collect()
    }

    /// Mean over every valid (tag, fold) cell.
    pub fn grand_mean(&self) -> Option<f64> {
        mean(self.values.iter().flatten().flatten().copied())
    }

    pub fn valid_cells(&self) -> usize {
        self.values.iter().flatten().filter(|v| v.is_some()).count()
    }

    /// Mean over valid tags within each fold.
    pub fn fold_means(&self) -> Vec<Option<f64>> {
        (0..self.n_folds())
            .map(|f| mean(self.values.iter().filter_map(|row| row[f])))
            .collect()
    }

    /// Standard error of the grand mean, from the spread of the fold means.
    pub fn fold_standard_error(&self) -> Option<f64> {
        let folds: Vec<f64> = self.fold_means().into_iter().flatten().collect();
        if folds.len() < 2 {
            return None;
        }
        let n = folds.len() as f64;
        let m = folds.iter().sum::<f64>() / n;
        let var = folds.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        Some((var / n).sqrt())
    }

    /// One row per (model, tag, fold, AUC); undefined cells are written `NA`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("model\ttag\tfold\tauc\n");
        for (tag, row) in self.tags.iter().zip(&self.values) {
            for (fold, v) in row.iter().enumerate() {
                let v = v.map_or("NA".to_string(), |v| format!("{v:?}"));
                writeln!(out, "{}\t{tag}\t{fold}\t{v}", self.model).unwrap();
            }
        }
        out
    }

    pub fn parse_tsv(path: &Path, text: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line as u64,
            message,
        };
        let mut model = None;
        let mut tags: Vec<String> = Vec::new();
        let mut cells: Vec<(usize, usize, Option<f64>)> = Vec::new();
        for (idx, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(perr(idx + 1, "expected model, tag, fold, auc".into()));
            }
            match &model {
                None => model = Some(f[0].to_string()),
                Some(m) if m != f[0] => return Err(perr(idx + 1, format!("mixed models `{m}` and `{}`", f[0]))),
                Some(_) => {}
            }
            let tag = match tags.iter().position(|t| t == f[1]) {
                Some(t) => t,
                None => {
                    tags.push(f[1].to_string());
                    tags.len() - 1
                }
            };
            let fold: usize = f[2].parse().map_err(|_| perr(idx + 1, format!("bad fold `{}`", f[2])))?;
            let v = if f[3] == "NA" {
                None
            } else {
                let v: f64 = f[3].parse().map_err(|_| perr(idx + 1, format!("bad AUC `{}`", f[3])))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(perr(idx + 1, format!("AUC {v} outside [0, 1]")));
                }
                Some(v)
            };
            cells.push((tag, fold, v));
        }
        let n_folds = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
        let mut values = vec![vec![None; n_folds]; tags.len()];
        for (t, f, v) in cells {
            values[t][f] = v;
        }
        Ok(AucReport {
            model: model.ok_or_else(|| perr(1, "empty report".into()))?,
            tags,
            values,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(path, &text)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// AUC of every tag column of `scores` against `labels`.
pub fn per_tag_auc(scores: ArrayView2<f64>, labels: &ThreeStateTagMatrix) -> Vec<Option<f64>> {
    (0..labels.n_tags())
        .map(|j| {
            let s: Vec<f64> = scores.column(j).to_vec();
            let l: Vec<TagState> = labels.column(j).to_vec();
            auc(&s, &l)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Winner {
    A,
    B,
    Neither,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceReport {
    pub tags: Vec<String>,
    /// `None` when fewer than two folds are valid for both models.
    pub p_values: Vec<Option<f64>>,
    pub winners: Vec<Winner>,
    pub a_better: usize,
    pub b_better: usize,
}

impl SignificanceReport {
    pub fn to_tsv(&self, a: &str, b: &str) -> String {
        let mut out = String::from("tag\tp_value\twinner\n");
        for ((tag, p), w) in self.tags.iter().zip(&self.p_values).zip(&self.winners) {
            let p = p.map_or("NA".to_string(), |p| format!("{p:?}"));
            let w = match w {
                Winner::A => a,
                Winner::B => b,
                Winner::Neither => "-",
            };
            writeln!(out, "{tag}\t{p}\t{w}").unwrap();
        }
        writeln!(out, "# {a} significantly better on {} tags", self.a_better).unwrap();
        writeln!(out, "# {b} significantly better on {} tags", self.b_better).unwrap();
        out
    }
}

/// Per tag, a paired t-test over the folds valid in both reports; the
/// model with the higher mean wins when `p < alpha`.
pub fn significance_counts(a: &AucReport, b: &AucReport, alpha: f64) -> Result<SignificanceReport> {
    if a.tags != b.tags {
        return Err(Error::InvalidValue("reports cover different tag sets".into()));
    }
    if a.n_folds() != b.n_folds() {
        return Err(Error::InvalidValue(format!(
            "reports have {} and {} folds",
            a.n_folds(),
            b.n_folds()
        )));
    }
    let mut p_values = Vec::new();
    let mut winners = Vec::new();
    for (ra, rb) in a.values.iter().zip(&b.values) {
        let (xa, xb): (Vec<f64>, Vec<f64>) = ra
            .iter()
            .zip(rb)
            .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
            .unzip();
        if xa.len() < 2 {
            p_values.push(None);
            winners.push(Winner::Neither);
            continue;
        }
        let p = paired_ttest(&xa, &xb)?;
        let ma = xa.iter().sum::<f64>();
        let mb = xb.iter().sum::<f64>();
        winners.push(if p < alpha && ma > mb {
            Winner::A
        } else if p < alpha && mb > ma {
            Winner::B
        } else {
            Winner::Neither
        });
        p_values.push(Some(p));
    }
    Ok(SignificanceReport {
        tags: a.tags.clone(),
        a_better: winners.iter().filter(|w| **w == Winner::A).count(),
        b_better: winners.iter().filter(|w| **w == Winner::B).count(),
        p_values,
        winners,
    })
}

/// A trainable model family for [`cv_run`].
pub trait Learner: Sync {
    type Hyper: Clone + Send + Sync + std::fmt::Debug;
    type Model: Send;

    fn fit(&self, hyper: &Self::Hyper, x: ArrayView2<f64>, targets: &TargetMatrix, seed: u64) -> Result<Self::Model>;

    /// `rows × C` ranking scores.
    fn score(&self, model: &Self::Model, x: ArrayView2<f64>) -> Result<Array2<f64>>;
}

/// Inputs of a cross-validation run. `train_targets` may be smoothed; AUC
/// is always computed against `labels`.
pub struct CvData<'a> {
    pub x: ArrayView2<'a, f64>,
    pub train_targets: &'a TargetMatrix,
    pub labels: &'a ThreeStateTagMatrix,
}

#[derive(Debug, Clone)]
pub struct CvOutcome<H> {
    pub selected: usize,
    pub hyper: H,
    /// Validation report per grid point, each averaged over rotations.
    pub validation: Vec<AucReport>,
    pub test: AucReport,
}

/// Mixes a base seed with job coordinates (SplitMix64 finaliser).
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    let mut z = base;
    for &c in coords {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(c);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

struct JobResult {
    validation: Vec<Option<f64>>,
    test: Vec<Option<f64>>,
}

fn average_rotations(rotations: &[&JobResult], pick: fn(&JobResult) -> &Vec<Option<f64>>, tags: usize) -> Vec<Option<f64>> {
    (0..tags)
        .map(|t| mean(rotations.iter().filter_map(|r| pick(r)[t])))
        .collect()
}

/// Select the grid point by validation grand mean, then report test AUC
/// per (tag, fold) as the mean over the fold's 4 rotation models.
///
/// Selection only ever sees the validation reports; test AUCs are computed
/// for every grid point alongside but read only for the selected one.
pub fn cv_run<L: Learner>(
    name: &str,
    learner: &L,
    data: &CvData<'_>,
    grid: &[L::Hyper],
    folds: &FoldSplit,
    seed: u64,
) -> Result<CvOutcome<L::Hyper>> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty hyper-parameter grid".into()));
    }
    let n = data.x.nrows();
    if data.labels.n_items() != n || data.train_targets.values.nrows() != n {
        return Err(Error::Dimension {
            context: "cross-validation rows",
            expected: n,
            actual: data.labels.n_items(),
        });
    }
    if folds.folds.len() != N_FOLDS || folds.folds.iter().any(Vec::is_empty) {
        return Err(Error::InvalidValue("degenerate fold split".into()));
    }
    let tags = data.labels.n_tags();
    let jobs: Vec<(usize, usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..N_FOLDS).flat_map(move |f| (0..N_FOLDS - 1).map(move |r| (g, f, r))))
        .collect();
    let results: Vec<JobResult> = jobs
        .par_iter()
        .map(|&(g, f, r)| {
            let rotation = &folds.rotations(f)[r];
            let x_train = data.x.select(ndarray::Axis(0), &rotation.training);
            let t_train = data.train_targets.select_rows(&rotation.training);
            let job_seed = derive_seed(seed, &[f as u64, r as u64, g as u64]);
            let model = learner.fit(&grid[g], x_train.view(), &t_train, job_seed)?;
            let eval = |rows: &[usize]| -> Result<Vec<Option<f64>>> {
                let scores = learner.score(&model, data.x.select(ndarray::Axis(0), rows).view())?;
                Ok(per_tag_auc(scores.view(), &data.labels.select_rows(rows)))
            };
            Ok(JobResult {
                validation: eval(&rotation.validation)?,
                test: eval(folds.test(f))?,
            })
        })
        .collect::<Result<_>>()?;

    let per_point = |g: usize, pick: fn(&JobResult) -> &Vec<Option<f64>>| -> AucReport {
        let fold_cols: Vec<Vec<Option<f64>>> = (0..N_FOLDS)
            .map(|f| {
                let rots: Vec<&JobResult> = (0..N_FOLDS - 1)
                    .map(|r| &results[(g * N_FOLDS + f) * (N_FOLDS - 1) + r])
                    .collect();
                average_rotations(&rots, pick, tags)
            })
            .collect();
        AucReport {
            model: name.to_string(),
            tags: data.labels.vocab.clone(),
            values: (0..tags).map(|t| fold_cols.iter().map(|c| c[t]).collect()).collect(),
        }
    };
    let validation: Vec<AucReport> = (0..grid.len()).map(|g| per_point(g, |j| &j.validation)).collect();
    let selected = select_best(&validation);
    Ok(CvOutcome {
        selected,
        hyper: grid[selected].clone(),
        test: per_point(selected, |j| &j.test),
        validation,
    })
}

/// Index of the highest validation grand mean; earliest wins ties.
fn select_best(validation: &[AucReport]) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (g, rep) in validation.iter().enumerate() {
        let v = rep.grand_mean().unwrap_or(f64::NEG_INFINITY);
        if v > best_value {
            best = g;
            best_value = v;
        }
    }
    best
}

/// Summary line per report: model, grand mean, standard error, valid cells.
pub fn summary_tsv(reports: &[(&AucReport, &str)]) -> String {
    let mut out = String::from("model\tdataset\tsmoothed\tgrand_mean_auc\tstd_error\tvalid_cells\n");
    for (r, extra) in reports {
        let gm = r.grand_mean().map_or("NA".to_string(), |v| format!("{v:.6}"));
        let se = r.fold_standard_error().map_or("NA".to_string(), |v| format!("{v:.6}"));
        writeln!(out, "{}\t{extra}\t{gm}\t{se}\t{}", r.model, r.valid_cells()).unwrap();
    }
    out
}
