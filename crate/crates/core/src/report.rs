//! Aggregated evaluation report: per-locale recall at target precision,
//! pooled bucket values, per-product-type analysis, and refrain statistics.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::{Catalog, Dataset, LocaleId, ProductTypeId};
use crate::error::MetricError;
use crate::metrics::{
    head_torso_tail, pearson, pr_sweep, recall_at_precision, FreqBucket, PtAccuracy, PtBuckets,
    Scorer,
};

/// How operating thresholds are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Thresholding {
    /// Each locale meets the precision bar independently.
    PerLocale,
    /// One threshold from the pooled worldwide sweep is used everywhere.
    Global,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocaleMetrics {
    pub recall: f64,
    pub threshold: f64,
    pub attainable: bool,
    pub refrain_rate: f64,
    pub n_examples: u64,
    pub n_gold_pairs: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BucketMetrics {
    pub recall: f64,
    pub threshold: f64,
    pub attainable: bool,
    pub refrain_rate: f64,
    pub n_examples: u64,
    pub n_gold_pairs: u64,
    /// Correlation of per-type training-sample counts with per-type
    /// accuracy; absent when undefined (fewer than 2 types or no variance).
    pub pearson_samples_accuracy: Option<f64>,
    pub head_accuracy: Option<f64>,
    pub torso_accuracy: Option<f64>,
    pub tail_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PtRow {
    pub pt: String,
    pub train_count: u64,
    pub occurrences: u64,
    pub correct: u64,
    pub accuracy: f64,
    pub bucket: FreqBucket,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub target_precision: f64,
    pub thresholding: Thresholding,
    pub locales: BTreeMap<String, LocaleMetrics>,
    pub lo_re: BucketMetrics,
    pub hi_re: BucketMetrics,
    pub worldwide: BucketMetrics,
    pub head_mass: f64,
    pub torso_mass: f64,
    pub tail_mass: f64,
    pub per_pt: Vec<PtRow>,
    /// Locales skipped with the reason (for example, no gold pairs).
    pub errors: BTreeMap<String, String>,
}

pub struct ReportInputs<'a> {
    pub scorer: &'a dyn Scorer,
    pub eval: &'a Dataset,
    pub catalog: &'a Catalog,
    pub hi: &'a [LocaleId],
    pub lo: &'a [LocaleId],
    /// Training-sample counts per (locale, product type).
    pub train_counts: &'a [Vec<u64>],
    /// Query mass per product type, used for the head/torso/tail split.
    pub pt_mass: &'a [f64],
    pub target_precision: f64,
    pub thresholding: Thresholding,
}

/// Per-(locale, product type) training-sample counts of a dataset.
pub fn pt_counts_by_locale(train: &Dataset, n_locales: usize, n_pts: usize) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; n_pts]; n_locales];
    for ex in train.examples() {
        for &pt in &ex.labels {
            counts[ex.locale.0 as usize][pt.0 as usize] += 1;
        }
    }
    counts
}

struct ScoredEval {
    /// Parallel to `eval.examples()`.
    scores: Vec<Vec<f64>>,
    argmax: Vec<ProductTypeId>,
    max_score: Vec<f64>,
}

fn score_all(scorer: &dyn Scorer, eval: &Dataset) -> Result<ScoredEval, MetricError> {
    let mut scores = Vec::with_capacity(eval.len());
    let mut argmax = Vec::with_capacity(eval.len());
    let mut max_score = Vec::with_capacity(eval.len());
    for ex in eval.examples() {
        let s = scorer
            .pt_scores(&ex.query, ex.locale)
            .map_err(MetricError::Scoring)?;
        let mut best = 0;
        for (i, &v) in s.iter().enumerate().skip(1) {
            if v > s[best] {
                best = i;
            }
        }
        argmax.push(ProductTypeId(best as u32));
        max_score.push(s.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)));
        scores.push(s);
    }
    Ok(ScoredEval {
        scores,
        argmax,
        max_score,
    })
}

fn pairs_for(
    eval: &Dataset,
    scored: &ScoredEval,
    member: impl Fn(LocaleId) -> bool,
) -> Vec<(f64, bool)> {
    let mut pairs = Vec::new();
    for (i, ex) in eval.examples().iter().enumerate() {
        if !member(ex.locale) {
            continue;
        }
        for (p, &score) in scored.scores[i].iter().enumerate() {
            pairs.push((score, ex.labels.contains(&ProductTypeId(p as u32))));
        }
    }
    pairs
}

fn refrain_rate(
    eval: &Dataset,
    scored: &ScoredEval,
    member: impl Fn(LocaleId) -> bool,
    threshold: f64,
) -> (f64, u64) {
    let mut n = 0u64;
    let mut refrained = 0u64;
    for (i, ex) in eval.examples().iter().enumerate() {
        if !member(ex.locale) {
            continue;
        }
        n += 1;
        if scored.max_score[i] < threshold {
            refrained += 1;
        }
    }
    let rate = if n == 0 { 0.0 } else { refrained as f64 / n as f64 };
    (rate, n)
}

struct AccuracyTables {
    per_pt: BTreeMap<ProductTypeId, PtAccuracy>,
}

fn accuracy_table(
    eval: &Dataset,
    scored: &ScoredEval,
    member: impl Fn(LocaleId) -> bool,
) -> AccuracyTables {
    let mut per_pt: BTreeMap<ProductTypeId, PtAccuracy> = BTreeMap::new();
    for (i, ex) in eval.examples().iter().enumerate() {
        if !member(ex.locale) {
            continue;
        }
        let correct = ex.labels.contains(&scored.argmax[i]);
        for &pt in &ex.labels {
            let cell = per_pt.entry(pt).or_default();
            cell.occurrences += 1;
            if correct {
                cell.correct += 1;
            }
        }
    }
    AccuracyTables { per_pt }
}

fn freq_bucket_accuracy(
    table: &AccuracyTables,
    buckets: &PtBuckets,
    bucket: FreqBucket,
) -> Option<f64> {
    let members: &[ProductTypeId] = match bucket {
        FreqBucket::Head => &buckets.head,
        FreqBucket::Torso => &buckets.torso,
        FreqBucket::Tail => &buckets.tail,
    };
    let mut occ = 0u64;
    let mut correct = 0u64;
    for pt in members {
        if let Some(cell) = table.per_pt.get(pt) {
            occ += cell.occurrences;
            correct += cell.correct;
        }
    }
    if occ == 0 {
        None
    } else {
        Some(correct as f64 / occ as f64)
    }
}

fn bucket_pearson(table: &AccuracyTables, train_counts: &[u64]) -> Option<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&pt, cell) in &table.per_pt {
        xs.push(train_counts[pt.0 as usize] as f64);
        ys.push(cell.accuracy());
    }
    pearson(&xs, &ys).ok()
}

fn sum_counts(train_counts: &[Vec<u64>], locales: &[LocaleId], n_pts: usize) -> Vec<u64> {
    let mut out = vec![0u64; n_pts];
    for &l in locales {
        if let Some(row) = train_counts.get(l.0 as usize) {
            for (p, &c) in row.iter().enumerate() {
                out[p] += c;
            }
        }
    }
    out
}

/// Builds the full evaluation report.
pub fn build_report(inputs: &ReportInputs<'_>) -> Result<EvalReport, MetricError> {
    let ReportInputs {
        scorer,
        eval,
        catalog,
        hi,
        lo,
        train_counts,
        pt_mass,
        target_precision,
        thresholding,
    } = *inputs;
    if eval.is_empty() {
        return Err(MetricError::EmptyEval);
    }
    let n_pts = scorer.n_pts();
    let scored = score_all(scorer, eval)?;
    let buckets = head_torso_tail(pt_mass);

    // Worldwide pooled sweep first: global mode anchors on its threshold.
    let ww_pairs = pairs_for(eval, &scored, |_| true);
    let ww_curve = pr_sweep(&ww_pairs)?;
    let ww_best = recall_at_precision(&ww_curve, target_precision);
    let global_threshold = ww_best.threshold;

    let mut errors = BTreeMap::new();
    let mut locales = BTreeMap::new();
    for locale in catalog.locales.ids() {
        let code = catalog.locales.code(locale).to_string();
        let pairs = pairs_for(eval, &scored, |l| l == locale);
        if pairs.is_empty() {
            errors.insert(code, "no gold pairs for locale".to_string());
            continue;
        }
        let curve = pr_sweep(&pairs).expect("locale pairs contain gold by construction");
        let best = recall_at_precision(&curve, target_precision);
        let (recall, threshold, attainable) = match thresholding {
            Thresholding::PerLocale => (best.recall, best.threshold, best.attainable),
            Thresholding::Global => {
                // Recall of this locale at the worldwide operating point.
                let tpc = pairs
                    .iter()
                    .filter(|&&(s, g)| g && s >= global_threshold)
                    .count() as u64;
                let gold = pairs.iter().filter(|&&(_, g)| g).count() as u64;
                (
                    tpc as f64 / gold as f64,
                    global_threshold,
                    ww_best.attainable,
                )
            }
        };
        let (refrain, n) = refrain_rate(eval, &scored, |l| l == locale, threshold);
        locales.insert(
            catalog.locales.code(locale).to_string(),
            LocaleMetrics {
                recall,
                threshold,
                attainable,
                refrain_rate: refrain,
                n_examples: n,
                n_gold_pairs: pairs.iter().filter(|&&(_, g)| g).count() as u64,
            },
        );
    }

    let bucket_metrics = |members: &[LocaleId]| -> Result<BucketMetrics, MetricError> {
        let member = |l: LocaleId| members.contains(&l);
        let pairs = pairs_for(eval, &scored, member);
        let gold = pairs.iter().filter(|&&(_, g)| g).count() as u64;
        if gold == 0 {
            return Err(MetricError::NoGoldPairs);
        }
        let curve = pr_sweep(&pairs)?;
        let best = recall_at_precision(&curve, target_precision);
        let (recall, threshold, attainable) = match thresholding {
            Thresholding::PerLocale => (best.recall, best.threshold, best.attainable),
            Thresholding::Global => {
                let tpc = pairs
                    .iter()
                    .filter(|&&(s, g)| g && s >= global_threshold)
                    .count() as u64;
                (
                    tpc as f64 / gold as f64,
                    global_threshold,
                    ww_best.attainable,
                )
            }
        };
        let (refrain, n) = refrain_rate(eval, &scored, member, threshold);
        let table = accuracy_table(eval, &scored, member);
        let counts = sum_counts(train_counts, members, n_pts);
        Ok(BucketMetrics {
            recall,
            threshold,
            attainable,
            refrain_rate: refrain,
            n_examples: n,
            n_gold_pairs: gold,
            pearson_samples_accuracy: bucket_pearson(&table, &counts),
            head_accuracy: freq_bucket_accuracy(&table, &buckets, FreqBucket::Head),
            torso_accuracy: freq_bucket_accuracy(&table, &buckets, FreqBucket::Torso),
            tail_accuracy: freq_bucket_accuracy(&table, &buckets, FreqBucket::Tail),
        })
    };

    let lo_re = bucket_metrics(lo)?;
    let hi_re = bucket_metrics(hi)?;
    let all: Vec<LocaleId> = catalog.locales.ids().collect();
    let worldwide = bucket_metrics(&all)?;

    let ww_table = accuracy_table(eval, &scored, |_| true);
    let ww_counts = sum_counts(train_counts, &all, n_pts);
    let per_pt = ww_table
        .per_pt
        .iter()
        .map(|(&pt, cell)| PtRow {
            pt: catalog.pts.name(pt).to_string(),
            train_count: ww_counts[pt.0 as usize],
            occurrences: cell.occurrences,
            correct: cell.correct,
            accuracy: cell.accuracy(),
            bucket: buckets.bucket_of(pt).unwrap_or(FreqBucket::Tail),
        })
        .collect();

    Ok(EvalReport {
        target_precision,
        thresholding,
        locales,
        lo_re,
        hi_re,
        worldwide,
        head_mass: buckets.head_mass,
        torso_mass: buckets.torso_mass,
        tail_mass: buckets.tail_mass,
        per_pt,
        errors,
    })
}
