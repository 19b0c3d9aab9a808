//! Plot-ready CSV artifacts behind the report figures and tables.

use std::fmt::Write as _;

use localeq_core::divergence::{Category, EmdRecord, HistBin};
use localeq_core::metrics::PrCurve;
use localeq_core::report::EvalReport;

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// report.csv: one row per locale plus the bucket aggregates.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from("row,recall_at_p,threshold,refrain_rate\n");
    for (code, m) in &report.locales {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            csv_field(code),
            m.recall,
            m.threshold,
            m.refrain_rate
        );
    }
    for (name, m) in [
        ("Lo-Re", &report.lo_re),
        ("Hi-Re", &report.hi_re),
        ("WW", &report.worldwide),
    ] {
        let _ = writeln!(out, "{},{},{},{}", name, m.recall, m.threshold, m.refrain_rate);
    }
    out
}

/// per_pt.csv: training count, accuracy and frequency bucket per type.
pub fn per_pt_csv(report: &EvalReport) -> String {
    let mut out = String::from("pt,count,accuracy,bucket\n");
    for row in &report.per_pt {
        let bucket = match row.bucket {
            localeq_core::metrics::FreqBucket::Head => "head",
            localeq_core::metrics::FreqBucket::Torso => "torso",
            localeq_core::metrics::FreqBucket::Tail => "tail",
        };
        let _ = writeln!(
            out,
            "{},{},{},{}",
            csv_field(&row.pt),
            row.train_count,
            row.accuracy,
            bucket
        );
    }
    out
}

/// pr_curve.csv of one sweep.
pub fn pr_curve_csv(curve: &PrCurve) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in &curve.points {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.precision, p.recall);
    }
    out
}

/// emd_records.csv with the per-record category column.
pub fn emd_records_csv(
    records: &[EmdRecord],
    categories: &[Category],
    locale_code: impl Fn(localeq_core::LocaleId) -> String,
) -> String {
    let mut out = String::from("query,locale_a,locale_b,emd,clicks_a,clicks_b,category\n");
    for (rec, cat) in records.iter().zip(categories) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            csv_field(&rec.query),
            locale_code(rec.locale_a),
            locale_code(rec.locale_b),
            rec.emd,
            rec.clicks_a,
            rec.clicks_b,
            cat.as_str()
        );
    }
    out
}

/// emd_hist.csv of the density histogram.
pub fn emd_hist_csv(bins: &[HistBin]) -> String {
    let mut out = String::from("bin_lo,bin_hi,density\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{}", b.lo, b.hi, b.density);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fields_with_commas_are_quoted() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }
}
