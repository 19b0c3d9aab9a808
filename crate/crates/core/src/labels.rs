//! Weak-label derivation from click logs: per-(locale, query) click
//! aggregation and majority selection at a strict probability threshold.

use std::collections::BTreeMap;

use crate::data::{ClickRecord, Dataset, LabeledExample, LocaleId, ProductTypeId, Provenance, Split};
use crate::error::LabelError;

/// Per-(locale, query) click counts by product type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClickAggregate {
    pub locale: LocaleId,
    pub query: String,
    pub per_pt_clicks: BTreeMap<ProductTypeId, u64>,
    pub total_clicks: u64,
}

/// A product type's share of a query's clicks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PtProbability {
    pub pt: ProductTypeId,
    pub p: f64,
}

/// Aggregates a click log into one entry per distinct (locale, query) with
/// positive clicks, sorted by (locale, query).
pub fn aggregate(clicklog: &[ClickRecord]) -> Vec<ClickAggregate> {
    let mut map: BTreeMap<(LocaleId, &str), BTreeMap<ProductTypeId, u64>> = BTreeMap::new();
    for rec in clicklog {
        if rec.clicks == 0 {
            continue;
        }
        *map.entry((rec.locale, rec.query.as_str()))
            .or_default()
            .entry(rec.item.pt)
            .or_default() += rec.clicks;
    }
    map.into_iter()
        .map(|((locale, query), per_pt_clicks)| {
            let total_clicks = per_pt_clicks.values().sum();
            ClickAggregate {
                locale,
                query: query.to_string(),
                per_pt_clicks,
                total_clicks,
            }
        })
        .collect()
}

/// Normalized click shares of an aggregate.
pub fn probabilities(agg: &ClickAggregate) -> Vec<PtProbability> {
    let total = agg.total_clicks as f64;
    agg.per_pt_clicks
        .iter()
        .map(|(&pt, &clicks)| PtProbability {
            pt,
            p: clicks as f64 / total,
        })
        .collect()
}

/// Exact comparison `clicks / total > threshold` for a threshold in
/// [0.5, 1). The threshold's f64 value is treated as the exact rational
/// mantissa / 2^53, so 5-of-10 at 0.5 can never pass through rounding.
fn share_exceeds(clicks: u64, total: u64, threshold: f64) -> bool {
    debug_assert!((0.5..1.0).contains(&threshold));
    let bits = threshold.to_bits();
    let exponent = ((bits >> 52) & 0x7ff) as i64 - 1075;
    let mantissa = (bits & ((1u64 << 52) - 1)) | (1u64 << 52);
    // threshold = mantissa * 2^exponent with exponent in [-53, -54] for
    // values in [0.25, 1); normalize both sides to integers.
    let shift = (-exponent) as u32;
    (clicks as u128) << shift > (mantissa as u128) * (total as u128)
}

/// Derives the unique product type whose click share strictly exceeds the
/// threshold, as a singleton-labeled example; `None` when no type clears it.
pub fn derive(
    agg: &ClickAggregate,
    threshold: f64,
) -> Result<Option<LabeledExample>, LabelError> {
    if !(0.5..1.0).contains(&threshold) {
        return Err(LabelError::BadThreshold(threshold));
    }
    debug_assert!(agg.total_clicks > 0);
    for (&pt, &clicks) in &agg.per_pt_clicks {
        if share_exceeds(clicks, agg.total_clicks, threshold) {
            let example = LabeledExample::new(
                agg.locale,
                agg.query.clone(),
                std::collections::BTreeSet::from([pt]),
            )
            .expect("singleton label set");
            return Ok(Some(example));
        }
    }
    Ok(None)
}

/// Options for [`derive_all`].
#[derive(Debug, Clone, Copy)]
pub struct DeriveOptions {
    pub threshold: f64,
    /// Aggregates with fewer total clicks are dropped before derivation.
    pub min_total_clicks: u64,
}

impl Default for DeriveOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            min_total_clicks: 1,
        }
    }
}

/// Aggregates a click log and derives a training dataset, sorted by
/// (locale, query). Errors when nothing clears the threshold.
pub fn derive_all(
    clicklog: &[ClickRecord],
    options: DeriveOptions,
    n_locales: usize,
) -> Result<Dataset, LabelError> {
    let mut examples = Vec::new();
    for agg in aggregate(clicklog) {
        if agg.total_clicks < options.min_total_clicks {
            continue;
        }
        if let Some(ex) = derive(&agg, options.threshold)? {
            examples.push(ex);
        }
    }
    if examples.is_empty() {
        return Err(LabelError::NoTrainableLabels);
    }
    Ok(Dataset::new(
        examples,
        Split::Train,
        Provenance::Derived,
        n_locales,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ItemId;
    use crate::rng;

    fn record(locale: u32, query: &str, item: u64, pt: u32, clicks: u64) -> ClickRecord {
        ClickRecord {
            locale: LocaleId(locale),
            query: query.to_string(),
            item: ItemId {
                index: item,
                pt: ProductTypeId(pt),
            },
            clicks,
            impressions: 0,
        }
    }

    fn agg_of(pairs: &[(u32, u64)]) -> ClickAggregate {
        let per_pt_clicks: BTreeMap<ProductTypeId, u64> = pairs
            .iter()
            .map(|&(pt, clicks)| (ProductTypeId(pt), clicks))
            .collect();
        let total_clicks = per_pt_clicks.values().sum();
        ClickAggregate {
            locale: LocaleId(0),
            query: "q".into(),
            per_pt_clicks,
            total_clicks,
        }
    }

    #[test]
    fn aggregate_sums_same_locale_query() {
        let log = vec![
            record(0, "mug", 1, 7, 8),
            record(0, "mug", 2, 9, 2),
            record(1, "mug", 1, 7, 5),
        ];
        let aggs = aggregate(&log);
        assert_eq!(aggs.len(), 2);
        assert_eq!(aggs[0].locale, LocaleId(0));
        assert_eq!(aggs[0].per_pt_clicks[&ProductTypeId(7)], 8);
        assert_eq!(aggs[0].per_pt_clicks[&ProductTypeId(9)], 2);
        assert_eq!(aggs[0].total_clicks, 10);
    }

    #[test]
    fn zero_click_records_contribute_nothing() {
        let log = vec![
            record(0, "mug", 1, 7, 0),
            record(0, "cup", 2, 9, 3),
            record(0, "cup", 3, 9, 0),
        ];
        let aggs = aggregate(&log);
        assert_eq!(aggs.len(), 1);
        assert_eq!(aggs[0].query, "cup");
        assert_eq!(aggs[0].total_clicks, 3);
    }

    #[test]
    fn aggregate_matches_brute_force_on_random_log() {
        use std::collections::HashMap;
        let mut r = rng::seeded(42);
        let mut log = Vec::new();
        for _ in 0..10_000 {
            let locale = rng::bounded(&mut r, 4) as u32;
            let query = format!("q{}", rng::bounded(&mut r, 50));
            let pt = rng::bounded(&mut r, 6) as u32;
            let item = pt as u64 * 10 + rng::bounded(&mut r, 10);
            let clicks = rng::bounded(&mut r, 5);
            log.push(record(locale, &query, item, pt, clicks));
        }
        // Independent re-aggregation with a plain hash-and-sum loop.
        let mut oracle: HashMap<(u32, String, u32), u64> = HashMap::new();
        for rec in &log {
            if rec.clicks > 0 {
                *oracle
                    .entry((rec.locale.0, rec.query.clone(), rec.item.pt.0))
                    .or_default() += rec.clicks;
            }
        }
        let aggs = aggregate(&log);
        let mut n_cells = 0;
        for agg in &aggs {
            assert!(agg.total_clicks > 0);
            for (&pt, &clicks) in &agg.per_pt_clicks {
                assert_eq!(
                    oracle[&(agg.locale.0, agg.query.clone(), pt.0)],
                    clicks
                );
                n_cells += 1;
            }
        }
        assert_eq!(n_cells, oracle.len());
    }

    #[test]
    fn derive_majority_cases() {
        // {a:8, b:2} -> label a at P = 0.8
        let ex = derive(&agg_of(&[(0, 8), (1, 2)]), 0.5).unwrap().unwrap();
        assert_eq!(ex.labels.len(), 1);
        assert!(ex.labels.contains(&ProductTypeId(0)));

        // {a:5, b:5} -> none, P = 0.5 is not strictly greater
        assert!(derive(&agg_of(&[(0, 5), (1, 5)]), 0.5).unwrap().is_none());

        // {a:1} -> label a at P = 1.0
        let ex = derive(&agg_of(&[(3, 1)]), 0.5).unwrap().unwrap();
        assert!(ex.labels.contains(&ProductTypeId(3)));
    }

    #[test]
    fn threshold_range_is_enforced() {
        assert!(matches!(
            derive(&agg_of(&[(0, 1)]), 0.49),
            Err(LabelError::BadThreshold(_))
        ));
        assert!(matches!(
            derive(&agg_of(&[(0, 1)]), 1.0),
            Err(LabelError::BadThreshold(_))
        ));
    }

    #[test]
    fn exact_boundary_comparisons() {
        // Exactly at threshold never passes, one click above always does.
        for total in [2u64, 10, 1000, 1_000_000] {
            assert!(!share_exceeds(total / 2, total, 0.5));
            assert!(share_exceeds(total / 2 + 1, total, 0.5));
        }
        // 3 of 4 at threshold 0.75: 0.75 is exact in binary, not strict.
        assert!(!share_exceeds(3, 4, 0.75));
        assert!(share_exceeds(4, 5, 0.75));
        // The f64 literal 0.6 sits just below the rational 3/5, so 3-of-5
        // strictly exceeds it while 2-of-5 does not.
        assert!(share_exceeds(3, 5, 0.6));
        assert!(!share_exceeds(2, 5, 0.6));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let agg = agg_of(&[(0, 3), (1, 7), (2, 11)]);
        let sum: f64 = probabilities(&agg).iter().map(|pp| pp.p).sum();
        assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn derive_all_sorts_and_errors_on_empty() {
        let log = vec![
            record(1, "zeta", 1, 0, 3),
            record(0, "alpha", 2, 1, 4),
        ];
        let ds = derive_all(&log, DeriveOptions::default(), 2).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.examples()[0].locale, LocaleId(0));
        assert_eq!(ds.provenance(), Provenance::Derived);

        // Every query split 50/50 derives nothing.
        let log = vec![record(0, "tie", 1, 0, 5), record(0, "tie", 2, 1, 5)];
        assert!(matches!(
            derive_all(&log, DeriveOptions::default(), 1),
            Err(LabelError::NoTrainableLabels)
        ));
    }

    #[test]
    fn raising_threshold_never_adds_examples() {
        let mut r = rng::seeded(17);
        for _ in 0..200 {
            let n_pts = rng::range_usize(&mut r, 1, 5);
            let pairs: Vec<(u32, u64)> = (0..n_pts)
                .map(|pt| (pt as u32, rng::bounded(&mut r, 20)))
                .filter(|&(_, c)| c > 0)
                .collect();
            if pairs.is_empty() {
                continue;
            }
            let agg = agg_of(&pairs);
            let mut prev_some = true;
            for threshold in [0.5, 0.6, 0.75, 0.9, 0.99] {
                let now = derive(&agg, threshold).unwrap().is_some();
                assert!(
                    prev_some || !now,
                    "example appeared when raising threshold to {threshold}"
                );
                prev_some = now;
            }
        }
    }
}
