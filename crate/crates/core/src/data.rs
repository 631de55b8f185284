//! Tag-triple ingestion, count binarization, vocabulary selection, feature
//! normalization, cross-validation folds and the on-disk text formats.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Outer cross-validation folds; each leaves 4 folds for validation rotations.
pub const N_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TagTriple {
    pub user: String,
    pub item: String,
    pub tag: String,
}

impl TagTriple {
    pub fn new(user: impl Into<String>, item: impl Into<String>, tag: impl Into<String>) -> Result<Self> {
        let t = TagTriple {
            user: user.into(),
            item: item.into(),
            tag: tag.into(),
        };
        if t.user.is_empty() || t.item.is_empty() || t.tag.is_empty() {
            return Err(Error::InvalidValue(format!("empty field in triple {t:?}")));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CountRecord {
    pub item: String,
    pub tag: String,
    pub count: u32,
}

/// Number of distinct users per `(item, tag)`, sorted by item then tag.
/// Repeated `(user, item, tag)` lines count once.
pub fn condense(triples: &[TagTriple]) -> Vec<CountRecord> {
    let distinct: BTreeSet<&TagTriple> = triples.iter().collect();
    let mut counts: BTreeMap<(&str, &str), u32> = BTreeMap::new();
    for t in distinct {
        *counts.entry((&t.item, &t.tag)).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|((item, tag), count)| CountRecord {
            item: item.to_owned(),
            tag: tag.to_owned(),
            count,
        })
        .collect()
}

/// The `k` tags with the largest total count, ties broken lexicographically.
pub fn select_vocab(records: &[CountRecord], k: usize) -> Result<Vec<String>> {
    let mut totals: BTreeMap<&str, u64> = BTreeMap::new();
    for r in records {
        *totals.entry(&r.tag).or_default() += u64::from(r.count);
    }
    if totals.len() < k {
        return Err(Error::InvalidConfig(format!(
            "requested {k} tags but only {} distinct tags are present",
            totals.len()
        )));
    }
    let mut ranked: Vec<(&str, u64)> = totals.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Ok(ranked.into_iter().take(k).map(|(t, _)| t.to_owned()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagState {
    Positive,
    Negative,
    /// Applied too few times to be a positive, but not absent either.
    Unknown,
}

impl TagState {
    pub fn from_count(count: u32, min_positive: u32) -> Self {
        if count >= min_positive {
            TagState::Positive
        } else if count == 0 {
            TagState::Negative
        } else {
            TagState::Unknown
        }
    }

    pub fn symbol(self) -> char {
        match self {
            TagState::Positive => '1',
            TagState::Negative => '0',
            TagState::Unknown => '?',
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        match s {
            "1" => Some(TagState::Positive),
            "0" => Some(TagState::Negative),
            "?" => Some(TagState::Unknown),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThreeStateTagMatrix {
    pub items: Vec<String>,
    pub vocab: Vec<String>,
    /// `items × vocab`.
    pub cells: Array2<TagState>,
}

impl ThreeStateTagMatrix {
    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_tags(&self) -> usize {
        self.vocab.len()
    }

    pub fn column(&self, tag: usize) -> ArrayView1<'_, TagState> {
        self.cells.column(tag)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        ThreeStateTagMatrix {
            items: rows.iter().map(|&r| self.items[r].clone()).collect(),
            vocab: self.vocab.clone(),
            cells: self.cells.select(Axis(0), rows),
        }
    }

    /// POSITIVE → 1, NEGATIVE → 0, UNKNOWN masked out.
    pub fn to_targets(&self) -> TargetMatrix {
        TargetMatrix {
            values: self.cells.mapv(|s| if s == TagState::Positive { 1.0 } else { 0.0 }),
            mask: self.cells.mapv(|s| s != TagState::Unknown),
        }
    }
}

/// Count binarization over a fixed item list and vocabulary. Items without
/// records are all NEGATIVE; records outside either list are ignored.
pub fn binarize(
    records: &[CountRecord],
    items: &[String],
    vocab: &[String],
    min_positive: u32,
) -> Result<ThreeStateTagMatrix> {
    if min_positive == 0 {
        return Err(Error::InvalidConfig("min_positive must be at least 1".into()));
    }
    let item_index: BTreeMap<&str, usize> = items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let tag_index: BTreeMap<&str, usize> = vocab.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut counts = Array2::<u32>::zeros((items.len(), vocab.len()));
    for r in records {
        if let (Some(&i), Some(&j)) = (item_index.get(r.item.as_str()), tag_index.get(r.tag.as_str())) {
            counts[[i, j]] += r.count;
        }
    }
    Ok(ThreeStateTagMatrix {
        items: items.to_vec(),
        vocab: vocab.to_vec(),
        cells: counts.mapv(|c| TagState::from_count(c, min_positive)),
    })
}

/// Training targets in `[0, 1]`; cells with `mask == false` are left out of
/// the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrix {
    pub values: Array2<f64>,
    pub mask: Array2<bool>,
}

impl TargetMatrix {
    pub fn new(values: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        if values.dim() != mask.dim() {
            return Err(Error::Dimension {
                context: "target mask",
                expected: values.len(),
                actual: mask.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidValue(format!("target {v} is outside [0, 1]")));
        }
        Ok(TargetMatrix { values, mask })
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        TargetMatrix {
            values: self.values.select(Axis(0), rows),
            mask: self.mask.select(Axis(0), rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub items: Vec<String>,
    /// `items × D`.
    pub values: Array2<f64>,
    pub normalized: bool,
}

impl FeatureTable {
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// Population z-scores per column (constant columns become 0), then each
/// row scaled to unit Euclidean norm. All-zero rows stay zero.
pub fn normalize_features(table: &FeatureTable) -> Result<FeatureTable> {
    let n = table.values.nrows();
    if n < 2 {
        return Err(Error::InvalidValue(format!(
            "feature normalization needs at least 2 items, got {n}"
        )));
    }
    if let Some(v) = table.values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidValue(format!("feature value {v} is not finite")));
    }
    let mut values = table.values.clone();
    for mut col in values.columns_mut() {
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd > 0.0 {
            col.mapv_inplace(|v| (v - mean) / sd);
        } else {
            col.fill(0.0);
        }
    }
    normalize_rows(&mut values);
    Ok(FeatureTable {
        items: table.items.clone(),
        values,
        normalized: true,
    })
}

pub(crate) fn normalize_rows(values: &mut Array2<f64>) {
    for mut row in values.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rotation {
    pub validation: Vec<usize>,
    pub training: Vec<usize>,
}

/// Five outer folds of item indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    pub fn test(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    /// The 4 rotations of outer fold `fold`: each remaining fold serves once
    /// as validation with the other 3 as training.
    pub fn rotations(&self, fold: usize) -> Vec<Rotation> {
        let others: Vec<usize> = (0..self.folds.len()).filter(|&f| f != fold).collect();
        others
            .iter()
            .map(|&v| {
                let mut training: Vec<usize> = others
                    .iter()
                    .filter(|&&f| f != v)
                    .flat_map(|&f| self.folds[f].iter().copied())
                    .collect();
                training.sort_unstable();
                Rotation {
                    validation: self.folds[v].clone(),
                    training,
                }
            })
            .collect()
    }

    /// All items outside the test fold.
    pub fn outside(&self, fold: usize) -> Vec<usize> {
        let mut rows: Vec<usize> = (0..self.folds.len())
            .filter(|&f| f != fold)
            .flat_map(|f| self.folds[f].iter().copied())
            .collect();
        rows.sort_unstable();
        rows
    }
}

/// Seeded partition into [`N_FOLDS`] near-equal folds. With `groups`, items
/// sharing a group id (e.g. clips of one track) land in the same fold.
pub fn make_folds(n_items: usize, seed: u64, groups: Option<&[usize]>) -> Result<FoldSplit> {
    if n_items < N_FOLDS {
        return Err(Error::InvalidValue(format!(
            "{N_FOLDS}-fold split needs at least {N_FOLDS} items, got {n_items}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); N_FOLDS];
    match groups {
        None => {
            let mut order: Vec<usize> = (0..n_items).collect();
            order.shuffle(&mut rng);
            for (pos, item) in order.into_iter().enumerate() {
                folds[pos % N_FOLDS].push(item);
            }
        }
        Some(groups) => {
            if groups.len() != n_items {
                return Err(Error::Dimension {
                    context: "fold grouping",
                    expected: n_items,
                    actual: groups.len(),
                });
            }
            let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (item, &g) in groups.iter().enumerate() {
                members.entry(g).or_default().push(item);
            }
            if members.len() < N_FOLDS {
                return Err(Error::InvalidValue(format!(
                    "grouped {N_FOLDS}-fold split needs at least {N_FOLDS} groups, got {}",
                    members.len()
                )));
            }
            let mut order: Vec<Vec<usize>> = members.into_values().collect();
            order.shuffle(&mut rng);
            for group in order {
                let smallest = (0..N_FOLDS).min_by_key(|&f| folds[f].len()).unwrap_or(0);
                folds[smallest].extend(group);
            }
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldSplit { seed, folds })
}

// ---------------------------------------------------------------------------
// Text formats

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn detect_delimiter(text: &str) -> u8 {
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    if first.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

/// Delimiter-separated records with their 1-based line numbers. Tabs win
/// over commas when the first data line contains one; `#` starts a comment.
fn parse_records(path: &Path, text: &str) -> Result<Vec<(u64, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .delimiter(detect_delimiter(text))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(out)
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn parse_triples(path: &Path, text: &str) -> Result<Vec<TagTriple>> {
    parse_records(path, text)?
        .into_iter()
        .map(|(line, f)| {
            if f.len() != 3 {
                return Err(parse_error(path, line, format!("expected user,item,tag but found {} fields", f.len())));
            }
            let [user, item, tag] = <[String; 3]>::try_from(f).expect("length checked");
            TagTriple::new(user, item, tag).map_err(|e| parse_error(path, line, e.to_string()))
        })
        .collect()
}

pub fn read_triples(path: &Path) -> Result<Vec<TagTriple>> {
    parse_triples(path, &read_text(path)?)
}

pub fn parse_features(path: &Path, text: &str, header: bool) -> Result<FeatureTable> {
    let mut items = Vec::new();
    let mut seen = BTreeSet::new();
    let mut flat = Vec::new();
    let mut dim = None;
    for (line, f) in parse_records(path, text)?.into_iter().skip(usize::from(header)) {
        let (id, rest) = f.split_first().ok_or_else(|| parse_error(path, line, "empty record"))?;
        if id.is_empty() {
            return Err(parse_error(path, line, "empty item id"));
        }
        if !seen.insert(id.clone()) {
            return Err(parse_error(path, line, format!("duplicate item `{id}`")));
        }
        match dim {
            None => dim = Some(rest.len()),
            Some(d) if d != rest.len() => {
                return Err(parse_error(path, line, format!("expected {d} feature values, found {}", rest.len())));
            }
            Some(_) => {}
        }
        for v in rest {
            let x: f64 = v
                .parse()
                .map_err(|_| parse_error(path, line, format!("`{v}` is not a number")))?;
            if !x.is_finite() {
                return Err(parse_error(path, line, format!("`{v}` is not finite")));
            }
            flat.push(x);
        }
        items.push(id.clone());
    }
    let d = dim.unwrap_or(0);
    let values = Array2::from_shape_vec((items.len(), d), flat).expect("rows have equal length");
    Ok(FeatureTable {
        items,
        values,
        normalized: false,
    })
}

pub fn read_features(path: &Path, header: bool) -> Result<FeatureTable> {
    parse_features(path, &read_text(path)?, header)
}

/// Item → track map from `item,track` lines.
pub fn parse_items(path: &Path, text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (line, f) in parse_records(path, text)? {
        if f.len() != 2 || f[0].is_empty() || f[1].is_empty() {
            return Err(parse_error(path, line, "expected item,track"));
        }
        if map.insert(f[0].clone(), f[1].clone()).is_some() {
            return Err(parse_error(path, line, format!("duplicate item `{}`", f[0])));
        }
    }
    Ok(map)
}

pub fn read_items(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_items(path, &read_text(path)?)
}

/// Shortest decimal that parses back to the same `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_triples(path: &Path, triples: &[TagTriple]) -> Result<()> {
    let mut out = String::new();
    for t in triples {
        writeln!(out, "{}\t{}\t{}", t.user, t.item, t.tag).unwrap();
    }
    write_text(path, &out)
}

/// One headerless `item<TAB>values…` line per row.
pub fn write_features(path: &Path, table: &FeatureTable) -> Result<()> {
    let mut out = String::new();
    for (item, row) in table.items.iter().zip(table.values.rows()) {
        out.push_str(item);
        for &v in row {
            write!(out, "\t{}", fmt_f64(v)).unwrap();
        }
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn write_items(path: &Path, item_tracks: &BTreeMap<String, String>) -> Result<()> {
    let mut out = String::new();
    for (item, track) in item_tracks {
        writeln!(out, "{item}\t{track}").unwrap();
    }
    write_text(path, &out)
}

/// Item-by-tag probability matrix with a header of tag names.
pub fn write_targets(path: &Path, items: &[String], vocab: &[String], values: &Array2<f64>) -> Result<()> {
    let mut out = String::from("item");
    for t in vocab {
        write!(out, "\t{t}").unwrap();
    }
    out.push('\n');
    for (item, row) in items.iter().zip(values.rows()) {
        out.push_str(item);
        for &v in row {
            write!(out, "\t{}", fmt_f64(v)).unwrap();
        }
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_targets(path: &Path) -> Result<(Vec<String>, Vec<String>, Array2<f64>)> {
    let text = read_text(path)?;
    let mut records = parse_records(path, &text)?.into_iter();
    let (_, header) = records.next().ok_or_else(|| parse_error(path, 1, "missing header"))?;
    let vocab: Vec<String> = header.into_iter().skip(1).collect();
    let mut items = Vec::new();
    let mut flat = Vec::new();
    for (line, f) in records {
        if f.len() != vocab.len() + 1 {
            return Err(parse_error(path, line, format!("expected {} columns", vocab.len() + 1)));
        }
        for v in &f[1..] {
            let x: f64 = v.parse().map_err(|_| parse_error(path, line, format!("`{v}` is not a number")))?;
            if !(0.0..=1.0).contains(&x) {
                return Err(parse_error(path, line, format!("target {x} is outside [0, 1]")));
            }
            flat.push(x);
        }
        items.push(f[0].clone());
    }
    let values = Array2::from_shape_vec((items.len(), vocab.len()), flat).expect("rows have equal length");
    Ok((items, vocab, values))
}

// ---------------------------------------------------------------------------
// Ingestion

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    pub vocab_size: usize,
    pub min_positive: u32,
}

/// The tags one user applied to one item, over the selected vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserTags {
    pub user: String,
    pub item: String,
    pub tags: Vec<bool>,
}

/// Aligned, canonically ordered output of [`ingest`]: row `i` of every
/// matrix refers to `items[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub items: Vec<String>,
    pub tracks: Vec<String>,
    pub labels: ThreeStateTagMatrix,
    pub features: FeatureTable,
    /// Sorted by item, then user.
    pub events: Vec<UserTags>,
}

impl Ingested {
    pub fn vocab(&self) -> &[String] {
        &self.labels.vocab
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.features.values
    }

    /// Dense track index per item, in order of first appearance among sorted track ids.
    pub fn track_groups(&self) -> Vec<usize> {
        let ids: BTreeMap<&str, usize> = self
            .tracks
            .iter()
            .map(String::as_str)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t, i))
            .collect();
        self.tracks.iter().map(|t| ids[t.as_str()]).collect()
    }
}

/// Items with tags but no features are dropped and reported in the returned
/// warnings. Items with features but no tags are kept (all NEGATIVE).
pub fn ingest(
    triples: &[TagTriple],
    features: &FeatureTable,
    item_tracks: Option<&BTreeMap<String, String>>,
    opts: IngestOptions,
) -> Result<(Ingested, Vec<String>)> {
    let feature_row: BTreeMap<&str, usize> = features
        .items
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let missing: BTreeSet<&str> = triples
        .iter()
        .map(|t| t.item.as_str())
        .filter(|i| !feature_row.contains_key(i))
        .collect();
    let mut warnings: Vec<String> = missing
        .iter()
        .map(|i| format!("item `{i}` has tags but no features; excluded"))
        .collect();
    let kept: Vec<TagTriple> = triples
        .iter()
        .filter(|t| feature_row.contains_key(t.item.as_str()))
        .cloned()
        .collect();
    let records = condense(&kept);
    let vocab = select_vocab(&records, opts.vocab_size)?;
    let items: Vec<String> = features.items.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let labels = binarize(&records, &items, &vocab, opts.min_positive)?;

    let rows: Vec<usize> = items.iter().map(|i| feature_row[i.as_str()]).collect();
    let raw = FeatureTable {
        items: items.clone(),
        values: features.values.select(Axis(0), &rows),
        normalized: false,
    };
    let features = normalize_features(&raw)?;

    let tracks = items
        .iter()
        .map(|i| match item_tracks.and_then(|m| m.get(i)) {
            Some(t) => t.clone(),
            None => i.clone(),
        })
        .collect();
    if let Some(m) = item_tracks {
        for item in m.keys().filter(|k| !feature_row.contains_key(k.as_str())) {
            warnings.push(format!("items file lists `{item}` which has no features; ignored"));
        }
    }

    let tag_index: BTreeMap<&str, usize> = vocab.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut by_pair: BTreeMap<(&str, &str), Vec<bool>> = BTreeMap::new();
    for t in &kept {
        let tags = by_pair
            .entry((&t.item, &t.user))
            .or_insert_with(|| vec![false; vocab.len()]);
        if let Some(&j) = tag_index.get(t.tag.as_str()) {
            tags[j] = true;
        }
    }
    let events = by_pair
        .into_iter()
        .map(|((item, user), tags)| UserTags {
            user: user.to_owned(),
            item: item.to_owned(),
            tags,
        })
        .collect();

    Ok((
        Ingested {
            items,
            tracks,
            labels,
            features,
            events,
        },
        warnings,
    ))
}

pub const TAGS_FILE: &str = "tags.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const EVENTS_FILE: &str = "events.tsv";
pub const ITEMS_FILE: &str = "items.tsv";

pub fn write_ingested(dir: &Path, data: &Ingested) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let vocab = data.vocab();

    let mut tags = String::from("item");
    for t in vocab {
        write!(tags, "\t{t}").unwrap();
    }
    tags.push('\n');
    for (item, row) in data.items.iter().zip(data.labels.cells.rows()) {
        tags.push_str(item);
        for s in row {
            write!(tags, "\t{}", s.symbol()).unwrap();
        }
        tags.push('\n');
    }
    write_text(&dir.join(TAGS_FILE), &tags)?;

    write_features(&dir.join(FEATURES_FILE), &data.features)?;

    write_text(&dir.join(VOCAB_FILE), &vocab.iter().map(|t| format!("{t}\n")).collect::<String>())?;

    let mut items = String::new();
    for (item, track) in data.items.iter().zip(&data.tracks) {
        writeln!(items, "{item}\t{track}").unwrap();
    }
    write_text(&dir.join(ITEMS_FILE), &items)?;

    let mut events = String::from("user\titem");
    for t in vocab {
        write!(events, "\t{t}").unwrap();
    }
    events.push('\n');
    for e in &data.events {
        write!(events, "{}\t{}", e.user, e.item).unwrap();
        for &b in &e.tags {
            events.push_str(if b { "\t1" } else { "\t0" });
        }
        events.push('\n');
    }
    write_text(&dir.join(EVENTS_FILE), &events)
}

pub fn read_ingested(dir: &Path) -> Result<Ingested> {
    let path = |name: &str| -> PathBuf { dir.join(name) };

    let tags_path = path(TAGS_FILE);
    let mut records = parse_records(&tags_path, &read_text(&tags_path)?)?.into_iter();
    let (_, header) = records.next().ok_or_else(|| parse_error(&tags_path, 1, "missing header"))?;
    let vocab: Vec<String> = header.into_iter().skip(1).collect();
    let mut items = Vec::new();
    let mut cells = Vec::new();
    for (line, f) in records {
        if f.len() != vocab.len() + 1 {
            return Err(parse_error(&tags_path, line, format!("expected {} columns", vocab.len() + 1)));
        }
        for s in &f[1..] {
            cells.push(TagState::from_symbol(s).ok_or_else(|| parse_error(&tags_path, line, format!("bad cell `{s}`")))?);
        }
        items.push(f[0].clone());
    }
    let labels = ThreeStateTagMatrix {
        cells: Array2::from_shape_vec((items.len(), vocab.len()), cells).expect("rows have equal length"),
        items: items.clone(),
        vocab: vocab.clone(),
    };

    let mut features = read_features(&path(FEATURES_FILE), false)?;
    if features.items != items {
        return Err(Error::InvalidValue(format!(
            "{} and {} list different items",
            TAGS_FILE, FEATURES_FILE
        )));
    }
    features.normalized = true;

    let track_map = read_items(&path(ITEMS_FILE))?;
    let tracks = items
        .iter()
        .map(|i| {
            track_map.get(i).cloned().ok_or_else(|| Error::UnknownId {
                kind: "item",
                id: i.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let events_path = path(EVENTS_FILE);
    let mut records = parse_records(&events_path, &read_text(&events_path)?)?.into_iter();
    records.next();
    let mut events = Vec::new();
    for (line, f) in records {
        if f.len() != vocab.len() + 2 {
            return Err(parse_error(&events_path, line, format!("expected {} columns", vocab.len() + 2)));
        }
        let tags = f[2..]
            .iter()
            .map(|s| match s.as_str() {
                "1" => Ok(true),
                "0" => Ok(false),
                other => Err(parse_error(&events_path, line, format!("bad flag `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        events.push(UserTags {
            user: f[0].clone(),
            item: f[1].clone(),
            tags,
        });
    }

    Ok(Ingested {
        items,
        tracks,
        labels,
        features,
        events,
    })
}
