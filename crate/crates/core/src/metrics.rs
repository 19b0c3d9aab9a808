//! Calibration and reporting: precision-recall sweeps, recall at a fixed
//! precision bar, per-product-type accuracy, frequency buckets, and the
//! aggregated evaluation report.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::{Dataset, LocaleId, ProductTypeId};
use crate::error::MetricError;
use crate::labels::ClickAggregate;

/// One operating point of a precision-recall sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tpc: u64,
    pub fpc: u64,
    pub fnc: u64,
}

/// Precision-recall curve with thresholds strictly decreasing.
#[derive(Debug, Clone, Serialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub total_gold: u64,
}

/// Micro-counting sweep over scored (example, product type) pairs.
///
/// Candidate thresholds are the distinct scores in descending order; at
/// threshold `t` every pair with score >= `t` counts as predicted.
pub fn pr_sweep(pairs: &[(f64, bool)]) -> Result<PrCurve, MetricError> {
    let total_gold = pairs.iter().filter(|&&(_, gold)| gold).count() as u64;
    if total_gold == 0 {
        return Err(MetricError::NoGoldPairs);
    }
    let mut sorted: Vec<(f64, bool)> = pairs.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = Vec::new();
    let mut tpc = 0u64;
    let mut fpc = 0u64;
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                tpc += 1;
            } else {
                fpc += 1;
            }
            i += 1;
        }
        let predicted = tpc + fpc;
        let precision = if predicted == 0 {
            1.0
        } else {
            tpc as f64 / predicted as f64
        };
        points.push(PrPoint {
            threshold,
            precision,
            recall: tpc as f64 / total_gold as f64,
            tpc,
            fpc,
            fnc: total_gold - tpc,
        });
    }
    Ok(PrCurve { points, total_gold })
}

/// Best recall among operating points whose precision meets the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecallAtPrecision {
    pub recall: f64,
    /// Operative threshold; `+inf` (predict nothing) when unattainable.
    pub threshold: f64,
    pub attainable: bool,
}

pub fn recall_at_precision(curve: &PrCurve, target: f64) -> RecallAtPrecision {
    let mut best = RecallAtPrecision {
        recall: 0.0,
        threshold: f64::INFINITY,
        attainable: false,
    };
    for point in &curve.points {
        if point.precision >= target && point.recall > best.recall {
            best = RecallAtPrecision {
                recall: point.recall,
                threshold: point.threshold,
                attainable: true,
            };
        }
    }
    best
}

/// Per-product-type occurrence and correctness counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PtAccuracy {
    pub occurrences: u64,
    pub correct: u64,
}

impl PtAccuracy {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.occurrences as f64
    }
}

/// Anything that can score every product type for a (query, locale) input.
///
/// Implemented by the model crate; the metric mechanics below only see
/// score vectors.
pub trait Scorer {
    fn n_pts(&self) -> usize;
    fn pt_scores(&self, query: &str, locale: LocaleId) -> Result<Vec<f64>, String>;
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Per-product-type accuracy under argmax prediction: correct occurrences
/// over all occurrences. Types with zero occurrences are omitted.
pub fn per_pt_accuracy(
    scorer: &dyn Scorer,
    eval: &Dataset,
) -> Result<BTreeMap<ProductTypeId, PtAccuracy>, MetricError> {
    if eval.is_empty() {
        return Err(MetricError::EmptyEval);
    }
    let mut table: BTreeMap<ProductTypeId, PtAccuracy> = BTreeMap::new();
    for ex in eval.examples() {
        let scores = scorer
            .pt_scores(&ex.query, ex.locale)
            .map_err(MetricError::Scoring)?;
        let predicted = ProductTypeId(argmax(&scores) as u32);
        let correct = ex.labels.contains(&predicted);
        for &pt in &ex.labels {
            let cell = table.entry(pt).or_default();
            cell.occurrences += 1;
            if correct {
                cell.correct += 1;
            }
        }
    }
    Ok(table)
}

/// Frequency bucket of a product type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FreqBucket {
    Head,
    Torso,
    Tail,
}

/// Head/torso/tail partition of the massed product types.
#[derive(Debug, Clone, Serialize)]
pub struct PtBuckets {
    pub head: Vec<ProductTypeId>,
    pub torso: Vec<ProductTypeId>,
    pub tail: Vec<ProductTypeId>,
    pub head_mass: f64,
    pub torso_mass: f64,
    pub tail_mass: f64,
}

impl PtBuckets {
    pub fn bucket_of(&self, pt: ProductTypeId) -> Option<FreqBucket> {
        if self.head.contains(&pt) {
            Some(FreqBucket::Head)
        } else if self.torso.contains(&pt) {
            Some(FreqBucket::Torso)
        } else if self.tail.contains(&pt) {
            Some(FreqBucket::Tail)
        } else {
            None
        }
    }
}

/// Splits product types into head/torso/tail so that each part holds about
/// one third of total query mass.
///
/// Types are sorted by mass descending (ties by index ascending); a type
/// belongs to head while the cumulative mass before it is < 1/3, to torso
/// while < 2/3, and to tail otherwise. Zero-mass types are omitted.
pub fn head_torso_tail(pt_mass: &[f64]) -> PtBuckets {
    let total: f64 = pt_mass.iter().sum();
    assert!(total > 0.0, "head_torso_tail requires positive total mass");
    let mut order: Vec<usize> = (0..pt_mass.len()).filter(|&p| pt_mass[p] > 0.0).collect();
    order.sort_by(|&a, &b| pt_mass[b].total_cmp(&pt_mass[a]).then(a.cmp(&b)));

    let mut buckets = PtBuckets {
        head: Vec::new(),
        torso: Vec::new(),
        tail: Vec::new(),
        head_mass: 0.0,
        torso_mass: 0.0,
        tail_mass: 0.0,
    };
    let mut before = 0.0;
    for &p in &order {
        let share = pt_mass[p] / total;
        let pt = ProductTypeId(p as u32);
        if before < 1.0 / 3.0 {
            buckets.head.push(pt);
            buckets.head_mass += share;
        } else if before < 2.0 / 3.0 {
            buckets.torso.push(pt);
            buckets.torso_mass += share;
        } else {
            buckets.tail.push(pt);
            buckets.tail_mass += share;
        }
        before += share;
    }
    buckets
}

/// Per-product-type query mass from click aggregates: each aggregate's
/// total clicks are attributed to its majority-click type.
pub fn pt_query_mass_from_aggregates(aggregates: &[ClickAggregate], n_pts: usize) -> Vec<f64> {
    let mut mass = vec![0.0; n_pts];
    for agg in aggregates {
        let (&pt, _) = agg
            .per_pt_clicks
            .iter()
            .max_by_key(|&(&pt, &clicks)| (clicks, std::cmp::Reverse(pt)))
            .expect("aggregate has positive clicks");
        mass[pt.0 as usize] += agg.total_clicks as f64;
    }
    mass
}

/// Product-moment correlation with single-pass co-moment accumulation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricError> {
    assert_eq!(xs.len(), ys.len(), "pearson inputs must be parallel");
    if xs.len() < 2 {
        return Err(MetricError::TooFewPoints(xs.len()));
    }
    let mut mean_x = 0.0;
    let mut mean_y = 0.0;
    let mut m2x = 0.0;
    let mut m2y = 0.0;
    let mut cxy = 0.0;
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let n = (i + 1) as f64;
        let dx = x - mean_x;
        let dy = y - mean_y;
        mean_x += dx / n;
        mean_y += dy / n;
        m2x += dx * (x - mean_x);
        m2y += dy * (y - mean_y);
        cxy += dx * (y - mean_y);
    }
    if m2x <= 0.0 {
        return Err(MetricError::ZeroVariance("xs"));
    }
    if m2y <= 0.0 {
        return Err(MetricError::ZeroVariance("ys"));
    }
    Ok(cxy / (m2x * m2y).sqrt())
}
