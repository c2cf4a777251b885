//! Evaluation: hierarchical string matching, accuracy/coverage/precision,
//! per-country F1, precision-coverage curves, mention-count buckets and the
//! train/test split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::gazetteer::LocationTriple;
use crate::index::LocationIndex;
use crate::linker::Prediction;
use crate::mentions::LabeledMention;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Country,
    Admin,
    City,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Country, Level::Admin, Level::City];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Country => "country",
            Level::Admin => "admin",
            Level::City => "city",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MatchResult {
    pub country_correct: bool,
    pub admin_correct: bool,
    pub city_correct: bool,
}

impl MatchResult {
    pub fn at(&self, level: Level) -> bool {
        match level {
            Level::Country => self.country_correct,
            Level::Admin => self.admin_correct,
            Level::City => self.city_correct,
        }
    }
}

/// Cumulative string match: country; then admin1; then city. An empty
/// predicted component never matches a non-empty truth component.
pub fn match_level(pred: &LocationTriple, truth: &LocationTriple) -> Result<MatchResult> {
    if truth.is_null() {
        return Err(Error::NullTruth);
    }
    if pred.is_null() {
        return Ok(MatchResult {
            country_correct: false,
            admin_correct: false,
            city_correct: false,
        });
    }
    let country_correct = pred.country() == truth.country();
    let admin_correct = country_correct && pred.admin1() == truth.admin1();
    let city_correct = admin_correct && pred.city() == truth.city();
    Ok(MatchResult {
        country_correct,
        admin_correct,
        city_correct,
    })
}

/// `precision` is `None` when nothing was predicted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub coverage: f64,
    pub precision: Option<f64>,
    pub n: usize,
}

fn check_lengths(predictions: usize, truths: usize) -> Result<()> {
    if predictions != truths {
        return Err(Error::LengthMismatch {
            predictions,
            truths,
        });
    }
    if truths == 0 {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    Ok(())
}

fn metrics_from_counts(correct: usize, predicted: usize, n: usize) -> Metrics {
    Metrics {
        accuracy: correct as f64 / n as f64,
        coverage: predicted as f64 / n as f64,
        precision: (predicted > 0).then(|| correct as f64 / predicted as f64),
        n,
    }
}

pub fn compute_metrics(
    predictions: &[Prediction],
    truths: &[LocationTriple],
    level: Level,
) -> Result<Metrics> {
    check_lengths(predictions.len(), truths.len())?;
    let (mut correct, mut predicted) = (0, 0);
    for (p, t) in predictions.iter().zip(truths) {
        if !p.triple.is_null() {
            predicted += 1;
        }
        if match_level(&p.triple, t)?.at(level) {
            correct += 1;
        }
    }
    Ok(metrics_from_counts(correct, predicted, truths.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CountryF1 {
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub support: usize,
}

/// One-vs-rest country-level F1 for every country with at least
/// `min_examples` truth examples. A Null prediction counts as a miss.
pub fn per_country_f1(
    predictions: &[Prediction],
    truths: &[LocationTriple],
    min_examples: usize,
) -> Result<BTreeMap<String, CountryF1>> {
    check_lengths(predictions.len(), truths.len())?;
    let mut table: BTreeMap<&str, CountryF1> = BTreeMap::new();
    let blank = CountryF1 {
        f1: 0.0,
        tp: 0,
        fp: 0,
        fn_: 0,
        support: 0,
    };
    for (p, t) in predictions.iter().zip(truths) {
        if t.is_null() {
            return Err(Error::NullTruth);
        }
        let truth = t.country();
        let pred = (!p.triple.is_null()).then(|| p.triple.country());
        table.entry(truth).or_insert(blank).support += 1;
        if pred == Some(truth) {
            table.get_mut(truth).expect("inserted").tp += 1;
        } else {
            table.get_mut(truth).expect("inserted").fn_ += 1;
            if let Some(pc) = pred {
                table.entry(pc).or_insert(blank).fp += 1;
            }
        }
    }
    Ok(table
        .into_iter()
        .filter(|(_, c)| c.support >= min_examples.max(1))
        .map(|(k, mut c)| {
            c.f1 = 2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.fn_) as f64;
            (k.to_string(), c)
        })
        .collect())
}

pub const DEFAULT_THRESHOLDS: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub precision: Option<f64>,
    pub coverage: f64,
    pub accuracy: f64,
}

/// Re-threshold predictions made at threshold 0: a prediction with score below
/// `t` becomes Null. Thresholds are deduplicated and returned ascending.
pub fn precision_coverage_curve(
    predictions: &[Prediction],
    truths: &[LocationTriple],
    level: Level,
    thresholds: &[f64],
) -> Result<Vec<CurvePoint>> {
    check_lengths(predictions.len(), truths.len())?;
    let mut ts: Vec<f64> = thresholds.to_vec();
    if ts.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("non-finite threshold".into()));
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let matched: Vec<(bool, f64, bool)> = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| {
            Ok((
                !p.triple.is_null(),
                p.score,
                match_level(&p.triple, t)?.at(level),
            ))
        })
        .collect::<Result<_>>()?;
    Ok(ts
        .into_iter()
        .map(|t| {
            let (mut correct, mut predicted) = (0, 0);
            for &(has, score, ok) in &matched {
                if has && score >= t {
                    predicted += 1;
                    if ok {
                        correct += 1;
                    }
                }
            }
            let m = metrics_from_counts(correct, predicted, matched.len());
            CurvePoint {
                threshold: t,
                precision: m.precision,
                coverage: m.coverage,
                accuracy: m.accuracy,
            }
        })
        .collect())
}

/// `⌊log₂ mention_count⌋` bucket for a test example's truth location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Bucket {
    NoMentions,
    Log2(u32),
    Unknown,
}

impl Bucket {
    pub fn of(mention_count: usize) -> Self {
        match mention_count {
            0 => Bucket::NoMentions,
            n => Bucket::Log2(n.ilog2()),
        }
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bucket::NoMentions => f.write_str("none"),
            Bucket::Log2(b) => write!(f, "{b}"),
            Bucket::Unknown => f.write_str("unknown"),
        }
    }
}

impl Serialize for Bucket {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BucketStats {
    pub accuracy: f64,
    pub n: usize,
}

pub fn mention_bucket_accuracy(
    predictions: &[Prediction],
    truths: &[LocationTriple],
    index: &LocationIndex,
    level: Level,
) -> Result<BTreeMap<Bucket, BucketStats>> {
    check_lengths(predictions.len(), truths.len())?;
    let mut counts: BTreeMap<Bucket, (usize, usize)> = BTreeMap::new();
    for (p, t) in predictions.iter().zip(truths) {
        let bucket = index
            .get(t)
            .map(|e| Bucket::of(e.mention_count))
            .unwrap_or(Bucket::Unknown);
        let slot = counts.entry(bucket).or_default();
        slot.1 += 1;
        if match_level(&p.triple, t)?.at(level) {
            slot.0 += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(b, (correct, n))| {
            (
                b,
                BucketStats {
                    accuracy: correct as f64 / n as f64,
                    n,
                },
            )
        })
        .collect())
}

/// Seeded shuffle split; `round(test_fraction · n)` examples go to test. Both
/// parts keep the input's relative order.
pub fn split_train_test(
    mentions: &[LabeledMention],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledMention>, Vec<LabeledMention>)> {
    if mentions.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot split an empty mention set".into(),
        ));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let n = mentions.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_set: BTreeSet<usize> = order[..n_test].iter().copied().collect();
    let (mut train, mut test) = (Vec::with_capacity(n - n_test), Vec::with_capacity(n_test));
    for (i, m) in mentions.iter().enumerate() {
        if test_set.contains(&i) {
            test.push(m.clone());
        } else {
            train.push(m.clone());
        }
    }
    Ok((train, test))
}

/// Everything `evaluate` reports.
#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub n: usize,
    pub metrics: BTreeMap<Level, Metrics>,
    pub per_country_f1: BTreeMap<String, CountryF1>,
    pub curves: BTreeMap<Level, Vec<CurvePoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub buckets: Option<BTreeMap<Level, BTreeMap<Bucket, BucketStats>>>,
}

pub fn evaluate(
    predictions: &[Prediction],
    truths: &[LocationTriple],
    index: Option<&LocationIndex>,
    min_country_examples: usize,
    thresholds: &[f64],
) -> Result<EvaluationReport> {
    let mut metrics = BTreeMap::new();
    let mut curves = BTreeMap::new();
    for level in Level::ALL {
        metrics.insert(level, compute_metrics(predictions, truths, level)?);
        curves.insert(
            level,
            precision_coverage_curve(predictions, truths, level, thresholds)?,
        );
    }
    let buckets = match index {
        Some(idx) => Some(
            Level::ALL
                .iter()
                .map(|&l| Ok((l, mention_bucket_accuracy(predictions, truths, idx, l)?)))
                .collect::<Result<_>>()?,
        ),
        None => None,
    };
    Ok(EvaluationReport {
        n: truths.len(),
        metrics,
        per_country_f1: per_country_f1(predictions, truths, min_country_examples)?,
        curves,
        buckets,
    })
}

/// `threshold,precision,coverage,level`; undefined precision is written as
/// `NaN`.
pub fn write_curve_csv<W: Write>(
    mut out: W,
    curves: &BTreeMap<Level, Vec<CurvePoint>>,
) -> Result<()> {
    writeln!(out, "threshold,precision,coverage,level")?;
    for (level, points) in curves {
        for p in points {
            let precision = p
                .precision
                .map_or_else(|| "NaN".to_string(), |v| v.to_string());
            writeln!(
                out,
                "{},{},{},{}",
                p.threshold, precision, p.coverage, level
            )?;
        }
    }
    Ok(())
}
