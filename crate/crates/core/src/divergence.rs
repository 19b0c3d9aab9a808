//! Cross-locale divergence analysis: per-query product-type click
//! distributions, earth mover's distance between locale pairs, histogram
//! export, and the discrepancy categorization heuristics.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::data::{ClickRecord, LocaleId, ProductTypeId};
use crate::error::DivergenceError;

/// Normalized per-product-type click distribution for one (locale, query).
#[derive(Debug, Clone, PartialEq)]
pub struct PtDistribution {
    /// Probability per product type, indexed by type; sums to 1.
    pub probs: Vec<f64>,
    /// Number of types with positive probability.
    pub support: usize,
    /// Total clicks backing the distribution.
    pub total_clicks: u64,
}

/// Earth mover's distance between one query's distributions in two locales.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmdRecord {
    pub query: String,
    pub locale_a: LocaleId,
    pub locale_b: LocaleId,
    pub emd: f64,
    pub clicks_a: u64,
    pub clicks_b: u64,
}

/// Discrepancy category of a divergent query pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Similar,
    Noisy,
    DialectalOrSelection,
    Selection,
}

impl Category {
    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Similar => "similar",
            Category::Noisy => "noisy",
            Category::DialectalOrSelection => "dialectal-or-selection",
            Category::Selection => "selection",
        }
    }
}

/// One bar of a normalized density histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub density: f64,
}

/// Default number of equal-width histogram bins over [0, 1].
pub const DEFAULT_EMD_BINS: usize = 19;

/// Default per-side click floor for pair divergence.
pub const DEFAULT_MIN_CLICKS: u64 = 5;

/// Low-distance threshold below which a pair is considered similar.
pub const DEFAULT_SIMILAR_EMD: f64 = 0.1;

/// Default significance level of the noisy-difference test.
pub const DEFAULT_SIGNIFICANCE: f64 = 0.01;

/// Click-log index used by the divergence analyses: per-(locale, query)
/// type counts and per-locale type totals.
#[derive(Debug, Clone)]
pub struct ClickIndex {
    n_pts: usize,
    by_query: HashMap<(LocaleId, String), BTreeMap<ProductTypeId, u64>>,
    locale_pt_totals: Vec<Vec<u64>>,
}

impl ClickIndex {
    pub fn build(clicklog: &[ClickRecord], n_locales: usize, n_pts: usize) -> Self {
        let mut by_query: HashMap<(LocaleId, String), BTreeMap<ProductTypeId, u64>> =
            HashMap::new();
        let mut locale_pt_totals = vec![vec![0u64; n_pts]; n_locales];
        for rec in clicklog {
            if rec.clicks == 0 {
                continue;
            }
            *by_query
                .entry((rec.locale, rec.query.clone()))
                .or_default()
                .entry(rec.item.pt)
                .or_default() += rec.clicks;
            locale_pt_totals[rec.locale.0 as usize][rec.item.pt.0 as usize] += rec.clicks;
        }
        Self {
            n_pts,
            by_query,
            locale_pt_totals,
        }
    }

    pub fn n_pts(&self) -> usize {
        self.n_pts
    }

    fn counts(&self, locale: LocaleId, query: &str) -> Option<&BTreeMap<ProductTypeId, u64>> {
        self.by_query.get(&(locale, query.to_string()))
    }

    /// Total clicks a product type received in a locale across all queries.
    pub fn locale_pt_total(&self, locale: LocaleId, pt: ProductTypeId) -> u64 {
        self.locale_pt_totals[locale.0 as usize][pt.0 as usize]
    }

    /// Queries present in both locales, sorted.
    pub fn shared_queries(&self, a: LocaleId, b: LocaleId) -> Vec<String> {
        let mut shared: Vec<String> = self
            .by_query
            .keys()
            .filter(|(l, q)| *l == a && self.by_query.contains_key(&(b, q.clone())))
            .map(|(_, q)| q.clone())
            .collect();
        shared.sort();
        shared
    }
}

/// Normalized per-type click distribution of a query in a locale, `None`
/// when the query has no clicks there.
pub fn pt_distribution(index: &ClickIndex, locale: LocaleId, query: &str) -> Option<PtDistribution> {
    let counts = index.counts(locale, query)?;
    let total: u64 = counts.values().sum();
    if total == 0 {
        return None;
    }
    let mut probs = vec![0.0; index.n_pts];
    for (&pt, &clicks) in counts {
        probs[pt.0 as usize] = clicks as f64 / total as f64;
    }
    Some(PtDistribution {
        support: counts.len(),
        probs,
        total_clicks: total,
    })
}

/// Earth mover's distance with unit ground metric between distinct types:
/// the closed form is half the L1 distance, which equals the optimal
/// transport cost when moving mass between different types costs 1.
pub fn emd_unit(p: &PtDistribution, q: &PtDistribution) -> Result<f64, DivergenceError> {
    if p.probs.len() != q.probs.len() {
        return Err(DivergenceError::RegistryMismatch(
            p.probs.len(),
            q.probs.len(),
        ));
    }
    let l1: f64 = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(0.5 * l1)
}

/// Output of [`pair_divergence`].
#[derive(Debug, Clone, Serialize)]
pub struct PairDivergence {
    pub records: Vec<EmdRecord>,
    pub histogram: Vec<HistBin>,
}

/// Distances for every query shared by two locales whose clicks meet the
/// floor on both sides, plus a density histogram normalized to integrate
/// to 1 over [0, 1].
pub fn pair_divergence(
    index: &ClickIndex,
    locale_a: LocaleId,
    locale_b: LocaleId,
    min_clicks: u64,
    n_bins: usize,
) -> Result<PairDivergence, DivergenceError> {
    assert!(n_bins >= 1);
    let mut records = Vec::new();
    for query in index.shared_queries(locale_a, locale_b) {
        let da = pt_distribution(index, locale_a, &query).expect("query is shared");
        let db = pt_distribution(index, locale_b, &query).expect("query is shared");
        if da.total_clicks < min_clicks || db.total_clicks < min_clicks {
            continue;
        }
        let emd = emd_unit(&da, &db).expect("distributions share the registry");
        records.push(EmdRecord {
            query,
            locale_a,
            locale_b,
            emd,
            clicks_a: da.total_clicks,
            clicks_b: db.total_clicks,
        });
    }
    if records.is_empty() {
        return Err(DivergenceError::EmptyIntersection(min_clicks));
    }
    let histogram = density_histogram(records.iter().map(|r| r.emd), records.len(), n_bins);
    Ok(PairDivergence { records, histogram })
}

fn density_histogram(values: impl Iterator<Item = f64>, n: usize, n_bins: usize) -> Vec<HistBin> {
    let width = 1.0 / n_bins as f64;
    let mut counts = vec![0u64; n_bins];
    for v in values {
        let bin = ((v / width) as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| HistBin {
            lo: i as f64 * width,
            hi: (i + 1) as f64 * width,
            density: c as f64 / (n as f64 * width),
        })
        .collect()
}

/// Standard normal CDF via the Abramowitz-Stegun erf approximation
/// (absolute error < 1.5e-7, ample for significance testing).
fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Two-sided two-proportion z-test p-value for x1-of-n1 vs x2-of-n2.
fn two_proportion_p_value(x1: u64, n1: u64, x2: u64, n2: u64) -> f64 {
    let p1 = x1 as f64 / n1 as f64;
    let p2 = x2 as f64 / n2 as f64;
    let pooled = (x1 + x2) as f64 / (n1 + n2) as f64;
    let denom = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if denom == 0.0 {
        // Both shares are 0 or both are 1: no evidence of a difference.
        return 1.0;
    }
    let z = (p1 - p2) / denom;
    2.0 * (1.0 - normal_cdf(z.abs()))
}

/// Thresholds of [`categorize`].
#[derive(Debug, Clone, Copy)]
pub struct CategorizeOptions {
    pub similar_emd: f64,
    pub significance: f64,
}

impl Default for CategorizeOptions {
    fn default() -> Self {
        Self {
            similar_emd: DEFAULT_SIMILAR_EMD,
            significance: DEFAULT_SIGNIFICANCE,
        }
    }
}

fn dominant(counts: &BTreeMap<ProductTypeId, u64>) -> (ProductTypeId, u64) {
    let (&pt, &clicks) = counts
        .iter()
        .max_by_key(|&(&pt, &clicks)| (clicks, std::cmp::Reverse(pt)))
        .expect("counts non-empty");
    (pt, clicks)
}

/// Assigns a divergence category to one record.
///
/// Low distance means similar. Otherwise each side's dominant type is
/// tested for an equal click share on the other side; when neither test
/// rejects at the configured significance the difference is attributed to
/// count noise. A significant difference is dialectal-or-selection, refined
/// to selection when one side's dominant type has zero clicks overall in
/// the other locale.
pub fn categorize(record: &EmdRecord, index: &ClickIndex, options: CategorizeOptions) -> Category {
    if record.emd < options.similar_emd {
        return Category::Similar;
    }
    let counts_a = index
        .counts(record.locale_a, &record.query)
        .expect("record came from this index");
    let counts_b = index
        .counts(record.locale_b, &record.query)
        .expect("record came from this index");
    let total_a: u64 = counts_a.values().sum();
    let total_b: u64 = counts_b.values().sum();
    let (dom_a, dom_a_clicks) = dominant(counts_a);
    let (dom_b, dom_b_clicks) = dominant(counts_b);

    let p_a = two_proportion_p_value(
        dom_a_clicks,
        total_a,
        counts_b.get(&dom_a).copied().unwrap_or(0),
        total_b,
    );
    let p_b = two_proportion_p_value(
        counts_a.get(&dom_b).copied().unwrap_or(0),
        total_a,
        dom_b_clicks,
        total_b,
    );
    if p_a >= options.significance && p_b >= options.significance {
        return Category::Noisy;
    }
    let a_missing_in_b = index.locale_pt_total(record.locale_b, dom_a) == 0;
    let b_missing_in_a = index.locale_pt_total(record.locale_a, dom_b) == 0;
    if a_missing_in_b || b_missing_in_a {
        Category::Selection
    } else {
        Category::DialectalOrSelection
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ItemId;
    use crate::oracles::transport_emd_counts;
    use crate::rng;

    fn dist(probs: &[f64]) -> PtDistribution {
        PtDistribution {
            probs: probs.to_vec(),
            support: probs.iter().filter(|&&p| p > 0.0).count(),
            total_clicks: 100,
        }
    }

    #[test]
    fn worked_two_type_example() {
        // One side 0.8/0.2, the other 0.5/0.5: distance 0.3.
        let d = emd_unit(&dist(&[0.8, 0.2]), &dist(&[0.5, 0.5])).unwrap();
        assert!((d - 0.3).abs() < 1e-12, "{d}");
    }

    #[test]
    fn identical_distributions_have_zero_distance() {
        let d = emd_unit(&dist(&[0.25, 0.75]), &dist(&[0.25, 0.75])).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn registry_mismatch_is_an_error() {
        assert!(matches!(
            emd_unit(&dist(&[1.0]), &dist(&[0.5, 0.5])),
            Err(DivergenceError::RegistryMismatch(1, 2))
        ));
    }

    fn random_counts(r: &mut rng::Rng, n: usize) -> Vec<u64> {
        loop {
            let counts: Vec<u64> = (0..n).map(|_| rng::bounded(r, 50)).collect();
            if counts.iter().sum::<u64>() > 0 {
                return counts;
            }
        }
    }

    #[test]
    fn closed_form_matches_transport_solver() {
        let mut r = rng::seeded(2024);
        for _ in 0..500 {
            let n = rng::range_usize(&mut r, 1, 8);
            let ca = random_counts(&mut r, n);
            let cb = random_counts(&mut r, n);
            let ta: u64 = ca.iter().sum();
            let tb: u64 = cb.iter().sum();
            let pa: Vec<f64> = ca.iter().map(|&c| c as f64 / ta as f64).collect();
            let pb: Vec<f64> = cb.iter().map(|&c| c as f64 / tb as f64).collect();
            let closed = emd_unit(&dist(&pa), &dist(&pb)).unwrap();
            let lp = transport_emd_counts(&ca, &cb);
            assert!(
                (closed - lp).abs() < 1e-9,
                "closed {closed} vs transport {lp} for {ca:?} {cb:?}"
            );
        }
    }

    #[test]
    fn metric_properties_on_random_triples() {
        let mut r = rng::seeded(31);
        for _ in 0..200 {
            let n = rng::range_usize(&mut r, 2, 6);
            let mk = |r: &mut rng::Rng| {
                let c = random_counts(r, n);
                let t: u64 = c.iter().sum();
                dist(&c.iter().map(|&x| x as f64 / t as f64).collect::<Vec<_>>())
            };
            let (a, b, c) = (mk(&mut r), mk(&mut r), mk(&mut r));
            let dab = emd_unit(&a, &b).unwrap();
            let dba = emd_unit(&b, &a).unwrap();
            let dac = emd_unit(&a, &c).unwrap();
            let dcb = emd_unit(&c, &b).unwrap();
            assert_eq!(dab, dba);
            assert!((0.0..=1.0).contains(&dab));
            assert!(dab <= dac + dcb + 1e-12, "triangle violated");
            let daa = emd_unit(&a, &a).unwrap();
            assert!(daa.abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_invariance() {
        let mut r = rng::seeded(77);
        for _ in 0..100 {
            let n = 6;
            let mk = |r: &mut rng::Rng| {
                let c = random_counts(r, n);
                let t: u64 = c.iter().sum();
                c.iter().map(|&x| x as f64 / t as f64).collect::<Vec<_>>()
            };
            let pa = mk(&mut r);
            let pb = mk(&mut r);
            let mut perm: Vec<usize> = (0..n).collect();
            rng::shuffle(&mut r, &mut perm);
            let permute =
                |v: &[f64]| -> Vec<f64> { perm.iter().map(|&i| v[i]).collect() };
            let d1 = emd_unit(&dist(&pa), &dist(&pb)).unwrap();
            let d2 = emd_unit(&dist(&permute(&pa)), &dist(&permute(&pb))).unwrap();
            assert!((d1 - d2).abs() < 1e-15);
        }
    }

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

    #[test]
    fn pt_distribution_basic_cases() {
        let log = vec![
            record(0, "masque", 1, 0, 8),
            record(0, "masque", 2, 1, 2),
            record(0, "solo", 3, 1, 4),
        ];
        let index = ClickIndex::build(&log, 1, 2);
        let d = pt_distribution(&index, LocaleId(0), "masque").unwrap();
        assert_eq!(d.probs, vec![0.8, 0.2]);
        assert_eq!(d.total_clicks, 10);
        let solo = pt_distribution(&index, LocaleId(0), "solo").unwrap();
        assert_eq!(solo.probs, vec![0.0, 1.0]);
        assert_eq!(solo.support, 1);
        assert!(pt_distribution(&index, LocaleId(0), "absent").is_none());
    }

    #[test]
    fn pair_divergence_min_clicks_and_histogram() {
        let log = vec![
            record(0, "shared", 1, 0, 10),
            record(1, "shared", 1, 0, 10),
            record(0, "thin", 2, 1, 2),
            record(1, "thin", 2, 1, 2),
            record(0, "split", 3, 0, 6),
            record(0, "split", 4, 1, 6),
            record(1, "split", 3, 0, 12),
        ];
        let index = ClickIndex::build(&log, 2, 2);
        let out = pair_divergence(&index, LocaleId(0), LocaleId(1), 5, 19).unwrap();
        // "thin" is filtered by the click floor.
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[0].query, "shared");
        assert_eq!(out.records[0].emd, 0.0);
        assert!((out.records[1].emd - 0.5).abs() < 1e-12);
        let mass: f64 = out.histogram.iter().map(|b| b.density * (b.hi - b.lo)).sum();
        assert!((mass - 1.0).abs() < 1e-12);

        let err = pair_divergence(&index, LocaleId(0), LocaleId(1), 100, 19);
        assert!(matches!(err, Err(DivergenceError::EmptyIntersection(100))));
    }

    #[test]
    fn categorize_similar_noisy_and_selection() {
        // Locale 0 and 1 share "q1" with identical dominant shares backed by
        // very different counts (the noisy case), and "q2" where locale 1's
        // traffic goes to a type that locale 0 never clicks at all.
        let log = vec![
            // q1: 5-of-10 vs 10000-of-20000 on the same dominant type.
            record(0, "q1", 1, 0, 5),
            record(0, "q1", 2, 1, 5),
            record(1, "q1", 1, 0, 10_000),
            record(1, "q1", 2, 1, 10_000),
            // q2: locale 0 clicks type 2, locale 1 clicks type 3 only.
            record(0, "q2", 4, 2, 50),
            record(1, "q2", 5, 3, 60),
            // Background traffic so type 2 exists in locale 1 overall.
            record(1, "other", 4, 2, 7),
        ];
        let index = ClickIndex::build(&log, 2, 4);
        let records = pair_divergence(&index, LocaleId(0), LocaleId(1), 5, 19)
            .unwrap()
            .records;

        let q1 = records.iter().find(|r| r.query == "q1").unwrap();
        // Zero distance, classified similar before any test runs.
        assert_eq!(q1.emd, 0.0);
        assert_eq!(
            categorize(q1, &index, CategorizeOptions::default()),
            Category::Similar
        );

        // Force the noisy path with a tiny low-count imbalance: 5-of-10 in
        // one locale vs a 0.5 share at scale is not significant.
        let noisy_log = vec![
            record(0, "q", 1, 0, 5),
            record(0, "q", 2, 1, 5),
            record(1, "q", 1, 0, 10_000),
            record(1, "q", 2, 1, 6_000),
            record(1, "q", 3, 2, 4_000),
        ];
        let noisy_index = ClickIndex::build(&noisy_log, 2, 3);
        let recs = pair_divergence(&noisy_index, LocaleId(0), LocaleId(1), 5, 19)
            .unwrap()
            .records;
        assert!(recs[0].emd >= 0.1);
        assert_eq!(
            categorize(&recs[0], &noisy_index, CategorizeOptions::default()),
            Category::Noisy
        );

        let q2 = records.iter().find(|r| r.query == "q2").unwrap();
        assert_eq!(q2.emd, 1.0);
        // Type 3 has zero clicks anywhere in locale 0: a selection gap.
        assert_eq!(
            categorize(q2, &index, CategorizeOptions::default()),
            Category::Selection
        );
    }

    #[test]
    fn categorize_dialectal_when_both_types_exist() {
        let log = vec![
            record(0, "roma", 1, 0, 90),
            record(0, "roma", 2, 1, 10),
            record(1, "roma", 1, 0, 10),
            record(1, "roma", 2, 1, 90),
        ];
        let index = ClickIndex::build(&log, 2, 2);
        let recs = pair_divergence(&index, LocaleId(0), LocaleId(1), 5, 19)
            .unwrap()
            .records;
        assert_eq!(
            categorize(&recs[0], &index, CategorizeOptions::default()),
            Category::DialectalOrSelection
        );
    }
}
