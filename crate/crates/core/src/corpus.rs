//! Labeled news ingestion, text cleaning and reproducible data partitioning.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bumped whenever [`clean_text`] changes output; part of embedding cache keys.
pub const CLEANING_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset is missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("row {row}: unrecognised label `{value}`")]
    BadLabel { row: usize, value: String },
    #[error("row {row}: duplicate article id `{id}`")]
    DuplicateId { row: usize, id: String },
    #[error("dataset contains no articles")]
    EmptyCorpus,
    #[error("split error: {0}")]
    Split(String),
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("invalid split file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Fake,
    Real,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Fake, Label::Real];

    /// Training target: FAKE is the positive class.
    pub fn target(self) -> u8 {
        match self {
            Label::Fake => 1,
            Label::Real => 0,
        }
    }

    pub fn from_target(target: u8) -> Self {
        if target == 1 {
            Label::Fake
        } else {
            Label::Real
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Fake => "FAKE",
            Label::Real => "REAL",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("fake") {
            Ok(Label::Fake)
        } else if t.eq_ignore_ascii_case("real") {
            Ok(Label::Real)
        } else {
            Err(t.to_string())
        }
    }
}

/// One news item as it appears in the source file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub title: String,
    pub body: String,
    pub label: Label,
}

/// Text holding only `[a-z0-9]` words separated by single spaces.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CleanText(String);

impl CleanText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.0.split(' ').filter(|w| !w.is_empty())
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for CleanText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for CleanText {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<(?:!--.*?--|/?[A-Za-z][^<>]*)>").expect("tag regex"));

/// Strips markup tags, lowercases, replaces every character outside
/// `[a-z0-9]` with a space and collapses whitespace. Entities are not
/// decoded, so `&amp;` survives as the word `amp`.
pub fn clean_text(raw: &str) -> CleanText {
    let stripped = TAG.replace_all(raw, " ");
    let lowered = stripped.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_space = false;
    for c in lowered.chars() {
        if c.is_ascii_lowercase() || c.is_ascii_digit() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        } else {
            pending_space = true;
        }
    }
    CleanText(out)
}

/// An article after cleaning, ready for featurization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedArticle {
    pub id: String,
    pub title: CleanText,
    pub body: CleanText,
    pub label: Label,
}

pub trait Labeled {
    fn id(&self) -> &str;
    fn label(&self) -> Label;
}

impl Labeled for Article {
    fn id(&self) -> &str {
        &self.id
    }
    fn label(&self) -> Label {
        self.label
    }
}

impl Labeled for PreparedArticle {
    fn id(&self) -> &str {
        &self.id
    }
    fn label(&self) -> Label {
        self.label
    }
}

/// Cleans every article, dropping those whose title or body cleans to nothing.
pub fn prepare(articles: &[Article]) -> Vec<PreparedArticle> {
    articles
        .iter()
        .filter_map(|a| {
            let title = clean_text(&a.title);
            let body = clean_text(&a.body);
            if title.is_empty() || body.is_empty() {
                log::warn!(
                    "dropping article {}: empty {} after cleaning",
                    a.id,
                    if title.is_empty() { "title" } else { "body" }
                );
                return None;
            }
            Some(PreparedArticle {
                id: a.id.clone(),
                title,
                body,
                label: a.label,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetFormat {
    Csv,
}

/// Reads a `title,text,label` file. A leading column that is not one of the
/// three (e.g. an unnamed pandas index) supplies article ids; otherwise the
/// zero-based data row number does.
pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Vec<Article>, CorpusError> {
    match format {
        DatasetFormat::Csv => {
            let file = std::fs::File::open(path.as_ref())?;
            read_csv(file)
        }
    }
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<Article>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => return Err(e.into()),
        Err(_) => return Err(CorpusError::EmptyCorpus),
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(CorpusError::EmptyCorpus);
    }
    let find = |name: &'static str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or(CorpusError::MissingColumn(name))
    };
    let title_col = find("title")?;
    let text_col = find("text")?;
    let label_col = find("label")?;
    let index_col = (![title_col, text_col, label_col].contains(&0)).then_some(0);

    let mut seen = HashSet::new();
    let mut articles = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let raw_label = record.get(label_col).unwrap_or_default();
        let label = raw_label
            .parse::<Label>()
            .map_err(|value| CorpusError::BadLabel { row, value })?;
        let id = match index_col {
            Some(c) => record.get(c).unwrap_or_default().trim().to_string(),
            None => i.to_string(),
        };
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId { row, id });
        }
        articles.push(Article {
            id,
            title: record.get(title_col).unwrap_or_default().to_string(),
            body: record.get(text_col).unwrap_or_default().to_string(),
            label,
        });
    }
    if articles.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(articles)
}

/// Writes articles back out in the accepted input layout.
pub fn write_csv<W: std::io::Write>(writer: W, articles: &[Article]) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["", "title", "text", "label"])?;
    for a in articles {
        w.write_record([a.id.as_str(), &a.title, &a.body, &a.label.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-label counts; both labels are always present.
pub fn class_balance<T: Labeled>(articles: &[T]) -> BTreeMap<Label, usize> {
    let mut counts: BTreeMap<Label, usize> = Label::ALL.iter().map(|&l| (l, 0)).collect();
    for a in articles {
        *counts.entry(a.label()).or_default() += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<(), CorpusError> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !r.is_finite() || *r < 0.0) || ((all.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(CorpusError::Split(format!(
                "ratios must be non-negative and sum to 1, got {all:?}"
            )));
        }
        Ok(())
    }
}

fn floor_share(ratio: f64, n: usize) -> usize {
    // guards against 0.15 * 20 = 3.0000000000000004 style products landing below an integer
    (ratio * n as f64 + 1e-9).floor() as usize
}

/// Largest-remainder apportionment of `total` across groups sized `sizes`.
fn apportion(total: usize, sizes: &[usize]) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut alloc: Vec<usize> = sizes.iter().map(|&s| total * s / n).collect();
    let mut rem: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(i, &s)| (total * s % n, i)).collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = total - alloc.iter().sum::<usize>();
    for &(_, i) in rem.iter().take(short) {
        alloc[i] += 1;
    }
    alloc
}

/// Corpus positions grouped by label in input order, each group shuffled by `rng`.
fn shuffled_by_class<T: Labeled>(articles: &[T], rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    Label::ALL
        .iter()
        .map(|&l| {
            let mut idx: Vec<usize> = (0..articles.len()).filter(|&i| articles[i].label() == l).collect();
            idx.shuffle(rng);
            idx
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

/// A train/validation/test partition of corpus ids. Each id list follows corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    seed: u64,
    ratios: [f64; 3],
    assignments: BTreeMap<String, Partition>,
}

impl SplitSpec {
    pub fn partition_of(&self, id: &str) -> Option<Partition> {
        if self.train_ids.iter().any(|x| x == id) {
            Some(Partition::Train)
        } else if self.val_ids.iter().any(|x| x == id) {
            Some(Partition::Val)
        } else if self.test_ids.iter().any(|x| x == id) {
            Some(Partition::Test)
        } else {
            None
        }
    }

    /// Resolves the id lists to positions in `articles`.
    pub fn indices<T: Labeled>(&self, articles: &[T]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let pos: BTreeMap<&str, usize> = articles.iter().enumerate().map(|(i, a)| (a.id(), i)).collect();
        let resolve = |ids: &[String]| {
            let mut v: Vec<usize> = ids.iter().filter_map(|id| pos.get(id.as_str()).copied()).collect();
            v.sort_unstable();
            v
        };
        (
            resolve(&self.train_ids),
            resolve(&self.val_ids),
            resolve(&self.test_ids),
        )
    }

    pub fn to_json(&self) -> Result<String, CorpusError> {
        let mut assignments = BTreeMap::new();
        for (ids, p) in [
            (&self.train_ids, Partition::Train),
            (&self.val_ids, Partition::Val),
            (&self.test_ids, Partition::Test),
        ] {
            for id in ids {
                assignments.insert(id.clone(), p);
            }
        }
        let file = SplitFile {
            seed: self.seed,
            ratios: [self.ratios.train, self.ratios.val, self.ratios.test],
            assignments,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Id lists come back in lexicographic order; use [`SplitSpec::indices`] for corpus order.
    pub fn from_json(s: &str) -> Result<Self, CorpusError> {
        let file: SplitFile = serde_json::from_str(s)?;
        let mut spec = SplitSpec {
            seed: file.seed,
            ratios: SplitRatios {
                train: file.ratios[0],
                val: file.ratios[1],
                test: file.ratios[2],
            },
            train_ids: vec![],
            val_ids: vec![],
            test_ids: vec![],
        };
        for (id, p) in file.assignments {
            match p {
                Partition::Train => spec.train_ids.push(id),
                Partition::Val => spec.val_ids.push(id),
                Partition::Test => spec.test_ids.push(id),
            }
        }
        Ok(spec)
    }
}

/// Stratified, seeded three-way split. Validation and test sizes are
/// `floor(ratio * N)`, training takes the remainder, and each class is
/// apportioned to every split by largest remainder.
pub fn split_dataset<T: Labeled>(articles: &[T], ratios: SplitRatios, seed: u64) -> Result<SplitSpec, CorpusError> {
    ratios.validate()?;
    let n = articles.len();
    if n < 10 {
        return Err(CorpusError::Split(format!("need at least 10 articles, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = shuffled_by_class(articles, &mut rng);
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let val_alloc = apportion(floor_share(ratios.val, n), &sizes);
    let test_alloc = apportion(floor_share(ratios.test, n), &sizes);

    let mut part = vec![Partition::Train; n];
    for (c, group) in groups.iter().enumerate() {
        let (v, t) = (val_alloc[c], test_alloc[c]);
        let train = group.len() - v - t;
        for (name, count) in [("train", train), ("validation", v), ("test", t)] {
            if count == 0 {
                return Err(CorpusError::Split(format!(
                    "{name} split would receive no {} articles",
                    Label::ALL[c]
                )));
            }
        }
        for &i in &group[..v] {
            part[i] = Partition::Val;
        }
        for &i in &group[v..v + t] {
            part[i] = Partition::Test;
        }
    }
    let collect = |p: Partition| -> Vec<String> {
        (0..n)
            .filter(|&i| part[i] == p)
            .map(|i| articles[i].id().to_string())
            .collect()
    };
    Ok(SplitSpec {
        seed,
        ratios,
        train_ids: collect(Partition::Train),
        val_ids: collect(Partition::Val),
        test_ids: collect(Partition::Test),
    })
}

/// Stratified hold-out of `floor(fraction * N)` positions out of `positions`.
/// Returns `(kept, held_out)`, both in the order of `positions`.
pub fn stratified_holdout<T: Labeled>(
    articles: &[T],
    positions: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<Vec<usize>> = Label::ALL
        .iter()
        .map(|&l| {
            positions
                .iter()
                .copied()
                .filter(|&i| articles[i].label() == l)
                .collect()
        })
        .collect();
    for g in &mut groups {
        g.shuffle(&mut rng);
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let alloc = apportion(floor_share(fraction, positions.len()), &sizes);
    let mut held = HashSet::new();
    for (c, g) in groups.iter().enumerate() {
        if alloc[c] == 0 || alloc[c] == g.len() {
            return Err(CorpusError::Split(format!(
                "hold-out of {fraction} leaves a split with no {} articles",
                Label::ALL[c]
            )));
        }
        held.extend(g[..alloc[c]].iter().copied());
    }
    let (out, keep): (Vec<usize>, Vec<usize>) = positions.iter().partition(|i| held.contains(i));
    Ok((keep, out))
}

/// Seeded stratified draw of `n` articles (labels apportioned by largest remainder), in corpus order.
pub fn stratified_subsample<T: Labeled + Clone>(articles: &[T], n: usize, seed: u64) -> Vec<T> {
    if n >= articles.len() {
        return articles.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = shuffled_by_class(articles, &mut rng);
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let alloc = apportion(n, &sizes);
    let mut keep: Vec<usize> = groups
        .iter()
        .zip(&alloc)
        .flat_map(|(g, &a)| g[..a].iter().copied())
        .collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| articles[i].clone()).collect()
}

/// Stratified k-fold assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    #[serde(rename = "assignments")]
    pub fold_of: BTreeMap<String, usize>,
}

impl FoldAssignment {
    /// Corpus positions belonging to `fold`, in corpus order.
    pub fn fold_indices<T: Labeled>(&self, articles: &[T], fold: usize) -> Vec<usize> {
        (0..articles.len())
            .filter(|&i| self.fold_of.get(articles[i].id()) == Some(&fold))
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.fold_of.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Deals each shuffled class round-robin over the folds, continuing the
/// fold cursor across classes so overall fold sizes stay within one.
pub fn make_folds<T: Labeled>(articles: &[T], k: usize, seed: u64) -> Result<FoldAssignment, CorpusError> {
    if k < 2 {
        return Err(CorpusError::Stratification(format!("k must be at least 2, got {k}")));
    }
    let balance = class_balance(articles);
    for (label, &count) in &balance {
        if count < k {
            return Err(CorpusError::Stratification(format!(
                "class {label} has {count} members, fewer than k={k}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = shuffled_by_class(articles, &mut rng);
    let mut fold_of = BTreeMap::new();
    let mut cursor = 0;
    for group in groups {
        for i in group {
            fold_of.insert(articles[i].id().to_string(), cursor % k);
            cursor += 1;
        }
    }
    Ok(FoldAssignment { k, seed, fold_of })
}
