//! End-to-end pipeline: generate a world, derive weak labels, train the
//! architecture variants, evaluate, and assemble the comparison report.

use anyhow::{Context, Result};
use serde::Serialize;

use localeq_core::labels::{self, DeriveOptions};
use localeq_core::metrics::{self, Scorer};
use localeq_core::report::{build_report, pt_counts_by_locale, EvalReport, ReportInputs, Thresholding};
use localeq_core::synth::{self, World, WorldSplits};
use localeq_core::{bucket_locales, Dataset, LocaleId};
use localeq_model::train::EpochStats;
use localeq_model::{ModelBundle, VariantKind};

use crate::config::RunConfig;

/// The three benchmarked variants, in reporting order.
pub const BENCH_VARIANTS: [VariantKind; 3] = [
    VariantKind::NonUnified,
    VariantKind::UnifiedAgnostic,
    VariantKind::UnifiedAware,
];

pub struct VariantOutcome {
    pub variant: VariantKind,
    pub bundle: ModelBundle,
    pub history: Vec<EpochStats>,
    pub eval: EvalReport,
    pub flip_top1_accuracy: Option<f64>,
}

#[derive(Serialize)]
pub struct VariantSummary {
    pub variant: String,
    pub epochs_run: u32,
    pub final_val_loss: Option<f64>,
    pub flip_top1_accuracy: Option<f64>,
    pub eval: EvalReport,
    pub loss_history: Vec<EpochStats>,
}

#[derive(Serialize)]
pub struct BenchReport {
    pub config: RunConfig,
    pub hi_re: Vec<String>,
    pub lo_re: Vec<String>,
    pub n_templates: usize,
    pub n_train_examples: usize,
    pub n_val_examples: usize,
    pub n_test_examples: usize,
    pub n_flip_records: usize,
    pub variants: Vec<VariantSummary>,
}

pub struct BenchOutcome {
    pub world: World,
    pub splits: WorldSplits,
    pub derived_train: Dataset,
    pub hi: Vec<LocaleId>,
    pub lo: Vec<LocaleId>,
    pub pt_mass: Vec<f64>,
    pub variants: Vec<VariantOutcome>,
}

impl BenchOutcome {
    pub fn report(&self, config: &RunConfig) -> BenchReport {
        let codes = |ids: &[LocaleId]| {
            ids.iter()
                .map(|&l| self.world.catalog.locales.code(l).to_string())
                .collect()
        };
        BenchReport {
            config: config.clone(),
            hi_re: codes(&self.hi),
            lo_re: codes(&self.lo),
            n_templates: self.world.templates.len(),
            n_train_examples: self.derived_train.len(),
            n_val_examples: self.splits.validation.len(),
            n_test_examples: self.splits.test.len(),
            n_flip_records: self.world.flip_manifest.len(),
            variants: self
                .variants
                .iter()
                .map(|v| VariantSummary {
                    variant: v.variant.cli_name().to_string(),
                    epochs_run: v.bundle.meta.epochs_run,
                    final_val_loss: v.bundle.meta.final_val_loss,
                    flip_top1_accuracy: v.flip_top1_accuracy,
                    eval: v.eval.clone(),
                    loss_history: v.history.clone(),
                })
                .collect(),
        }
    }

    pub fn outcome_for(&self, variant: VariantKind) -> Option<&VariantOutcome> {
        self.variants.iter().find(|v| v.variant == variant)
    }
}

/// Top-1 accuracy on the flip-manifest subset: for every planted
/// (query, locale, type) record, does the model's argmax match the
/// flipped meaning in the flipped locale?
pub fn flip_top1_accuracy(bundle: &ModelBundle, world: &World) -> Option<f64> {
    if world.flip_manifest.is_empty() {
        return None;
    }
    let mut correct = 0u64;
    for rec in &world.flip_manifest {
        let scores = bundle
            .pt_scores(&rec.query, rec.locale)
            .expect("manifest locales are registry-known");
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = i;
            }
        }
        if best as u32 == rec.pt.0 {
            correct += 1;
        }
    }
    Some(correct as f64 / world.flip_manifest.len() as f64)
}

/// Generates the world and derives the shared training inputs.
pub fn prepare_world(config: &RunConfig) -> Result<(World, WorldSplits, Dataset)> {
    let world = synth::generate(&config.world).context("world generation")?;
    let splits = synth::split_world(
        &world,
        config.eval.split_fractions,
        config.eval.split_seed,
    )
    .context("splitting the world")?;
    let derived = labels::derive_all(
        &splits.train_clicklog,
        DeriveOptions {
            threshold: config.eval.derive_threshold,
            min_total_clicks: config.eval.min_total_clicks,
        },
        world.catalog.locales.len(),
    )
    .context("weak-label derivation")?;
    Ok((world, splits, derived))
}

/// Trains one variant on already-prepared data and evaluates it.
pub fn run_variant(
    config: &RunConfig,
    variant: VariantKind,
    world: &World,
    splits: &WorldSplits,
    derived_train: &Dataset,
    hi: &[LocaleId],
    lo: &[LocaleId],
    pt_mass: &[f64],
    progress: &mut dyn FnMut(&str),
) -> Result<VariantOutcome> {
    let n_locales = world.catalog.locales.len();
    let mut bundle = ModelBundle::init(
        variant,
        config.model.encoder_config(config.train.dropout),
        config.model.tokenizer_config(n_locales),
        world.catalog.locales.clone(),
        world.catalog.pts.clone(),
        config.model.init_seed,
    )
    .context("model initialization")?;
    progress(&format!(
        "training {} ({} parameters)",
        variant.cli_name(),
        bundle.n_parameters()
    ));
    let history = localeq_model::train(
        &mut bundle,
        derived_train,
        &splits.validation,
        &config.train,
    )
    .context("training")?;
    if let Some(last) = history.last() {
        progress(&format!(
            "{}: {} epochs, final train loss {:.6}, val loss {:.6}",
            variant.cli_name(),
            history.len(),
            last.train_loss,
            last.val_loss
        ));
    }

    let train_counts = pt_counts_by_locale(derived_train, n_locales, world.catalog.pts.len());
    let eval = build_report(&ReportInputs {
        scorer: &bundle,
        eval: &splits.test,
        catalog: &world.catalog,
        hi,
        lo,
        train_counts: &train_counts,
        pt_mass,
        target_precision: config.eval.target_precision,
        thresholding: if config.eval.global_threshold {
            Thresholding::Global
        } else {
            Thresholding::PerLocale
        },
    })
    .context("evaluation report")?;
    let flip = flip_top1_accuracy(&bundle, world);
    Ok(VariantOutcome {
        variant,
        bundle,
        history,
        eval,
        flip_top1_accuracy: flip,
    })
}

/// Runs the full comparison of the given variants on one generated world.
pub fn run_bench(
    config: &RunConfig,
    variants: &[VariantKind],
    progress: &mut dyn FnMut(&str),
) -> Result<BenchOutcome> {
    config.validate()?;
    progress("generating world");
    let (world, splits, derived_train) = prepare_world(config)?;
    progress(&format!(
        "world: {} click rows, {} templates, {} derived training examples",
        world.clicklog.len(),
        world.templates.len(),
        derived_train.len()
    ));
    let counts = derived_train.per_locale_counts();
    let (hi, lo) = bucket_locales(counts, config.eval.hi_re_count);
    let aggregates = labels::aggregate(&world.clicklog);
    let pt_mass =
        metrics::pt_query_mass_from_aggregates(&aggregates, world.catalog.pts.len());

    let mut outcomes = Vec::new();
    for &variant in variants {
        outcomes.push(run_variant(
            config,
            variant,
            &world,
            &splits,
            &derived_train,
            &hi,
            &lo,
            &pt_mass,
            progress,
        )?);
    }
    Ok(BenchOutcome {
        world,
        splits,
        derived_train,
        hi,
        lo,
        pt_mass,
        variants: outcomes,
    })
}

/// The Lo-Re / Hi-Re / WW recall grid as printable lines.
pub fn grid_lines(report: &BenchReport) -> Vec<String> {
    let mut lines = Vec::new();
    lines.push(format!(
        "{:<16}{:>8}{:>8}{:>8}{:>8}",
        "variant", "Lo-Re", "Hi-Re", "WW", "flip"
    ));
    for v in &report.variants {
        lines.push(format!(
            "{:<16}{:>8.3}{:>8.3}{:>8.3}{:>8}",
            v.variant,
            v.eval.lo_re.recall,
            v.eval.hi_re.recall,
            v.eval.worldwide.recall,
            v.flip_top1_accuracy
                .map(|a| format!("{a:.3}"))
                .unwrap_or_else(|| "-".to_string()),
        ));
    }
    lines
}
