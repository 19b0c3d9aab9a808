//! `localeq` — multi-locale query-to-product-type workbench.
//!
//! Subcommands cover the full pipeline (synthesize, derive, train,
//! evaluate, analyze, serve) plus the one-shot benchmark comparison of the
//! three architecture variants.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use localeq_core::divergence::{self, CategorizeOptions, ClickIndex};
use localeq_core::labels::{self, DeriveOptions};
use localeq_core::metrics::{self, pr_sweep};
use localeq_core::report::{
    build_report, pt_counts_by_locale, EvalReport, ReportInputs, Thresholding,
};
use localeq_core::synth::FlipRecord;
use localeq_core::{
    bucket_locales, data, Catalog, Dataset, Provenance, Split, FORMAT_HEADER,
};
use localeq_model::{checkpoint, ModelBundle, VariantKind};

use localeq_app::config::RunConfig;
use localeq_app::csvout;
use localeq_app::pipeline;
use localeq_app::server::{self, Calibration};

/// Version tag carried by standalone JSON artifacts (tabular formats carry
/// the `#localeq-format v1` comment line instead).
const JSON_FORMAT: &str = "localeq-format v1";

#[derive(Parser)]
#[command(
    name = "localeq",
    version,
    about = "Multi-locale query-to-product-type workbench"
)]
struct Cli {
    /// Worker cap for parallel stages (1 guarantees bit-reproducibility;
    /// current stages are single-threaded regardless).
    #[arg(long, global = true, env = "LOCALEQ_THREADS", default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and write its files.
    Synth {
        /// Pipeline config JSON; defaults to the shipped benchmark config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the world seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Derive weak labels from a click log.
    Derive {
        #[arg(long)]
        clicklog: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = 1)]
        min_clicks: u64,
    },
    /// Train one variant on labeled datasets.
    Train {
        /// noncons | cons-agnostic | cons-aware | disjoint
        #[arg(long)]
        variant: String,
        #[arg(long)]
        train_data: PathBuf,
        #[arg(long)]
        val_data: PathBuf,
        /// Click log (.tsv) or dataset (.jsonl) whose names seed the
        /// registries, so the model covers types absent from the labels.
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the training seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Evaluate a trained model and write the report artifacts.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        eval_data: PathBuf,
        /// Training dataset, for per-locale bucket sizes and per-type
        /// sample counts.
        #[arg(long)]
        train_data: PathBuf,
        /// Click log supplying per-type query mass for the head/torso/tail
        /// split.
        #[arg(long)]
        clicklog: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        target_precision: f64,
        #[arg(long, default_value_t = 9)]
        hi_re_count: usize,
        /// Calibrate one pooled threshold instead of per-locale ones.
        #[arg(long)]
        global_threshold: bool,
    },
    /// Write the precision-recall curve of one locale.
    PrCurve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        eval_data: PathBuf,
        #[arg(long)]
        locale: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-type analysis: head/torso/tail accuracies and the
    /// samples-accuracy correlation.
    AnalyzePt {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        eval_data: PathBuf,
        #[arg(long)]
        train_data: PathBuf,
        #[arg(long)]
        clicklog: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 9)]
        hi_re_count: usize,
    },
    /// Earth mover's distance analysis of one locale pair.
    AnalyzeEmd {
        #[arg(long)]
        clicklog: PathBuf,
        #[arg(long)]
        locale_a: String,
        #[arg(long)]
        locale_b: String,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 5)]
        min_clicks: u64,
        #[arg(long, default_value_t = 19)]
        bins: usize,
    },
    /// Score one query against a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long)]
        locale: String,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Serve a trained model over HTTP.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
    /// Full three-variant comparison on the benchmark world.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the world seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the world files next to the report.
        #[arg(long)]
        keep_world: bool,
        /// Benchmark the disjoint per-locale ablation as a fourth variant.
        #[arg(long)]
        include_disjoint: bool,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(2);
    }
}

#[derive(Serialize)]
struct Versioned<T: Serialize> {
    format: &'static str,
    #[serde(flatten)]
    payload: T,
}

fn write_json<T: Serialize>(path: &Path, payload: T) -> Result<()> {
    let body = serde_json::to_string_pretty(&Versioned {
        format: JSON_FORMAT,
        payload,
    })
    .expect("json serialization");
    fs::write(path, body + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_versioned_csv(path: &Path, body: &str) -> Result<()> {
    let content = format!("{FORMAT_HEADER}\n{body}");
    fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn progress(line: &str) {
    eprintln!("[localeq] {line}");
}

/// Writes a flip manifest as versioned JSONL.
fn save_flip_manifest(records: &[FlipRecord], catalog: &Catalog, path: &Path) -> Result<()> {
    let mut out = String::from(FORMAT_HEADER);
    out.push('\n');
    for rec in records {
        let line = serde_json::json!({
            "query": rec.query,
            "locale": catalog.locales.code(rec.locale),
            "pt": catalog.pts.name(rec.pt),
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn cmd_synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut config = load_config(config)?;
    if let Some(s) = seed {
        config.world.seed = s;
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    progress("generating world");
    let world = localeq_core::synth::generate(&config.world)?;
    let splits = localeq_core::synth::split_world(
        &world,
        config.eval.split_fractions,
        config.eval.split_seed,
    )?;
    write_json(&out.join("worldspec.json"), &config.world)?;
    data::save_clicklog(&world.clicklog, &world.catalog, &out.join("clicklog.tsv"))?;
    data::save_clicklog(
        &splits.train_clicklog,
        &world.catalog,
        &out.join("train_clicklog.tsv"),
    )?;
    data::save_dataset(&world.gold, &world.catalog, &out.join("gold.jsonl"))?;
    data::save_dataset(&splits.train, &world.catalog, &out.join("gold_train.jsonl"))?;
    data::save_dataset(
        &splits.validation,
        &world.catalog,
        &out.join("gold_val.jsonl"),
    )?;
    data::save_dataset(&splits.test, &world.catalog, &out.join("gold_test.jsonl"))?;
    save_flip_manifest(
        &world.flip_manifest,
        &world.catalog,
        &out.join("flip_manifest.jsonl"),
    )?;
    progress(&format!(
        "wrote world with {} click rows, {} gold examples, {} flip records to {}",
        world.clicklog.len(),
        world.gold.len(),
        world.flip_manifest.len(),
        out.display()
    ));
    Ok(())
}

fn cmd_derive(clicklog: &Path, out: &Path, threshold: f64, min_clicks: u64) -> Result<()> {
    let mut catalog = Catalog::new();
    let records = data::load_clicklog(clicklog, &mut catalog)?;
    let dataset = labels::derive_all(
        &records,
        DeriveOptions {
            threshold,
            min_total_clicks: min_clicks,
        },
        catalog.locales.len(),
    )?;
    data::save_dataset(&dataset, &catalog, out)?;
    progress(&format!(
        "derived {} training examples from {} click rows",
        dataset.len(),
        records.len()
    ));
    Ok(())
}

/// Builds registries from an optional registry file plus the datasets.
fn load_training_inputs(
    train_data: &Path,
    val_data: &Path,
    registry: Option<&Path>,
) -> Result<(Catalog, Dataset, Dataset)> {
    let mut catalog = Catalog::new();
    if let Some(reg) = registry {
        match reg.extension().and_then(|e| e.to_str()) {
            Some("tsv") => {
                data::load_clicklog(reg, &mut catalog)?;
            }
            _ => {
                data::load_dataset(reg, &mut catalog, Split::Train, Provenance::External)?;
            }
        }
    }
    let train = data::load_dataset(train_data, &mut catalog, Split::Train, Provenance::Derived)?;
    let val = data::load_dataset(
        val_data,
        &mut catalog,
        Split::Validation,
        Provenance::SyntheticGold,
    )?;
    catalog.freeze();
    // Rebuild so per-locale counts span the final registry size.
    let train = Dataset::new(
        train.examples().to_vec(),
        Split::Train,
        Provenance::Derived,
        catalog.locales.len(),
    );
    let val = Dataset::new(
        val.examples().to_vec(),
        Split::Validation,
        Provenance::SyntheticGold,
        catalog.locales.len(),
    );
    Ok((catalog, train, val))
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    variant: &str,
    train_data: &Path,
    val_data: &Path,
    registry: Option<&Path>,
    out: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    max_epochs: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
) -> Result<()> {
    let variant = VariantKind::from_cli_name(variant).ok_or_else(|| {
        anyhow!("unknown variant {variant:?} (expected noncons, cons-agnostic, cons-aware or disjoint)")
    })?;
    let mut config = load_config(config)?;
    if let Some(s) = seed {
        config.train.seed = s;
    }
    if let Some(e) = max_epochs {
        config.train.max_epochs = e;
    }
    if let Some(lr) = learning_rate {
        config.train.learning_rate = lr;
    }
    if let Some(b) = batch_size {
        config.train.batch_size = b;
    }
    let (catalog, train, val) = load_training_inputs(train_data, val_data, registry)?;
    let mut bundle = ModelBundle::init(
        variant,
        config.model.encoder_config(config.train.dropout),
        config.model.tokenizer_config(catalog.locales.len()),
        catalog.locales.clone(),
        catalog.pts.clone(),
        config.model.init_seed,
    )?;
    progress(&format!(
        "training {} on {} examples ({} parameters)",
        variant.cli_name(),
        train.len(),
        bundle.n_parameters()
    ));
    let history = localeq_model::train(&mut bundle, &train, &val, &config.train)?;
    checkpoint::save(&bundle, out)?;
    progress(&format!(
        "trained for {} epochs (best val loss {:.6}); checkpoint at {}",
        history.len(),
        bundle.meta.final_val_loss.unwrap_or(f64::NAN),
        out.display()
    ));
    Ok(())
}

/// Loads a dataset against a model's frozen registries.
fn load_eval_against(bundle: &ModelBundle, path: &Path, split: Split) -> Result<Dataset> {
    let mut catalog = Catalog::from_registries(bundle.locales.clone(), bundle.pts.clone());
    let ds = data::load_dataset(path, &mut catalog, split, Provenance::SyntheticGold)
        .with_context(|| format!("loading {} against the model registries", path.display()))?;
    Ok(Dataset::new(
        ds.examples().to_vec(),
        split,
        Provenance::SyntheticGold,
        bundle.locales.len(),
    ))
}

fn calibration_from_report(report: &EvalReport) -> Calibration {
    Calibration {
        target_precision: report.target_precision,
        thresholding: match report.thresholding {
            Thresholding::PerLocale => "per-locale".to_string(),
            Thresholding::Global => "global".to_string(),
        },
        per_locale: report
            .locales
            .iter()
            .map(|(code, m)| (code.clone(), m.threshold))
            .collect(),
        global: report.worldwide.threshold,
    }
}

fn eval_model(
    bundle: &ModelBundle,
    eval_data: &Path,
    train_data: &Path,
    clicklog: &Path,
    target_precision: f64,
    hi_re_count: usize,
    global_threshold: bool,
) -> Result<EvalReport> {
    let eval = load_eval_against(bundle, eval_data, Split::Test)?;
    let train = load_eval_against(bundle, train_data, Split::Train)?;
    let mut catalog = Catalog::from_registries(bundle.locales.clone(), bundle.pts.clone());
    let log = data::load_clicklog(clicklog, &mut catalog)?;
    let aggregates = labels::aggregate(&log);
    let pt_mass = metrics::pt_query_mass_from_aggregates(&aggregates, bundle.pts.len());
    if hi_re_count == 0 || hi_re_count >= bundle.locales.len() {
        bail!("--hi-re-count must be in [1, {})", bundle.locales.len());
    }
    let (hi, lo) = bucket_locales(train.per_locale_counts(), hi_re_count);
    let train_counts = pt_counts_by_locale(&train, bundle.locales.len(), bundle.pts.len());
    let report = build_report(&ReportInputs {
        scorer: bundle,
        eval: &eval,
        catalog: &catalog,
        hi: &hi,
        lo: &lo,
        train_counts: &train_counts,
        pt_mass: &pt_mass,
        target_precision,
        thresholding: if global_threshold {
            Thresholding::Global
        } else {
            Thresholding::PerLocale
        },
    })?;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    model: &Path,
    eval_data: &Path,
    train_data: &Path,
    clicklog: &Path,
    out_dir: &Path,
    target_precision: f64,
    hi_re_count: usize,
    global_threshold: bool,
) -> Result<()> {
    let bundle = checkpoint::load(model)?;
    let report = eval_model(
        &bundle,
        eval_data,
        train_data,
        clicklog,
        target_precision,
        hi_re_count,
        global_threshold,
    )?;
    fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("report.json"), &report)?;
    write_versioned_csv(&out_dir.join("report.csv"), &csvout::report_csv(&report))?;
    write_versioned_csv(&out_dir.join("per_pt.csv"), &csvout::per_pt_csv(&report))?;
    write_json(
        &out_dir.join("calibration.json"),
        calibration_from_report(&report),
    )?;
    progress(&format!(
        "recall@{}p  Lo-Re {:.3}  Hi-Re {:.3}  WW {:.3}",
        report.target_precision,
        report.lo_re.recall,
        report.hi_re.recall,
        report.worldwide.recall
    ));
    Ok(())
}

fn cmd_pr_curve(model: &Path, eval_data: &Path, locale: &str, out: &Path) -> Result<()> {
    let bundle = checkpoint::load(model)?;
    let locale_id = bundle
        .locales
        .lookup(locale)
        .ok_or_else(|| anyhow!("locale {locale:?} unknown to the model"))?;
    let eval = load_eval_against(&bundle, eval_data, Split::Test)?;
    let mut pairs = Vec::new();
    for ex in eval.examples().iter().filter(|e| e.locale == locale_id) {
        let scores = bundle
            .score_known(&ex.query, ex.locale)
            .map_err(|e| anyhow!("{e}"))?;
        for (p, &s) in scores.iter().enumerate() {
            pairs.push((
                s,
                ex.labels.contains(&localeq_core::ProductTypeId(p as u32)),
            ));
        }
    }
    let curve = pr_sweep(&pairs)?;
    write_versioned_csv(out, &csvout::pr_curve_csv(&curve))?;
    progress(&format!(
        "{} curve points over {} pairs written to {}",
        curve.points.len(),
        pairs.len(),
        out.display()
    ));
    Ok(())
}

fn cmd_analyze_pt(
    model: &Path,
    eval_data: &Path,
    train_data: &Path,
    clicklog: &Path,
    out_dir: &Path,
    hi_re_count: usize,
) -> Result<()> {
    let bundle = checkpoint::load(model)?;
    let report = eval_model(
        &bundle,
        eval_data,
        train_data,
        clicklog,
        0.8,
        hi_re_count,
        false,
    )?;
    fs::create_dir_all(out_dir)?;
    write_versioned_csv(&out_dir.join("per_pt.csv"), &csvout::per_pt_csv(&report))?;
    let bucket_summary = |m: &localeq_core::report::BucketMetrics| {
        serde_json::json!({
            "pearson_samples_accuracy": m.pearson_samples_accuracy,
            "head_accuracy": m.head_accuracy,
            "torso_accuracy": m.torso_accuracy,
            "tail_accuracy": m.tail_accuracy,
        })
    };
    let summary = serde_json::json!({
        "head_mass": report.head_mass,
        "torso_mass": report.torso_mass,
        "tail_mass": report.tail_mass,
        "head_count": report.per_pt.iter().filter(|r| matches!(r.bucket, metrics::FreqBucket::Head)).count(),
        "torso_count": report.per_pt.iter().filter(|r| matches!(r.bucket, metrics::FreqBucket::Torso)).count(),
        "tail_count": report.per_pt.iter().filter(|r| matches!(r.bucket, metrics::FreqBucket::Tail)).count(),
        "worldwide": bucket_summary(&report.worldwide),
        "lo_re": bucket_summary(&report.lo_re),
        "hi_re": bucket_summary(&report.hi_re),
    });
    write_json(&out_dir.join("pt_analysis.json"), summary)?;
    progress(&format!(
        "per-type analysis written to {}",
        out_dir.display()
    ));
    Ok(())
}

fn cmd_analyze_emd(
    clicklog: &Path,
    locale_a: &str,
    locale_b: &str,
    out_dir: &Path,
    min_clicks: u64,
    bins: usize,
) -> Result<()> {
    let mut catalog = Catalog::new();
    let records = data::load_clicklog(clicklog, &mut catalog)?;
    let a = catalog
        .locales
        .lookup(locale_a)
        .ok_or_else(|| anyhow!("locale {locale_a:?} not present in the click log"))?;
    let b = catalog
        .locales
        .lookup(locale_b)
        .ok_or_else(|| anyhow!("locale {locale_b:?} not present in the click log"))?;
    let index = ClickIndex::build(&records, catalog.locales.len(), catalog.pts.len());
    let divergence = divergence::pair_divergence(&index, a, b, min_clicks, bins)?;
    let categories: Vec<_> = divergence
        .records
        .iter()
        .map(|r| divergence::categorize(r, &index, CategorizeOptions::default()))
        .collect();
    fs::create_dir_all(out_dir)?;
    write_versioned_csv(
        &out_dir.join("emd_records.csv"),
        &csvout::emd_records_csv(&divergence.records, &categories, |l| {
            catalog.locales.code(l).to_string()
        }),
    )?;
    write_versioned_csv(
        &out_dir.join("emd_hist.csv"),
        &csvout::emd_hist_csv(&divergence.histogram),
    )?;
    progress(&format!(
        "{} shared queries analyzed for {locale_a} <-> {locale_b}",
        divergence.records.len()
    ));
    Ok(())
}

fn cmd_predict(
    model: &Path,
    query: &str,
    locale: &str,
    threshold: Option<f64>,
    calibration: Option<&Path>,
) -> Result<()> {
    let bundle = checkpoint::load(model)?;
    let calibration = match calibration {
        Some(p) => Calibration::load(p)?,
        None => Calibration::default(),
    };
    let state = server::ServerState {
        bundle,
        calibration,
    };
    match server::predict_body(&state, locale, query, threshold) {
        Ok(body) => {
            println!("{body}");
            Ok(())
        }
        Err((status, message)) => bail!("prediction failed ({status}): {message}"),
    }
}

fn write_bench_artifacts(
    outcome: &pipeline::BenchOutcome,
    report: &pipeline::BenchReport,
    out: &Path,
    keep_world: bool,
) -> Result<()> {
    fs::create_dir_all(out)?;
    write_json(&out.join("report.json"), report)?;
    for v in &outcome.variants {
        let name = v.variant.cli_name();
        checkpoint::save(&v.bundle, &out.join(format!("model-{name}.lqpt")))?;
        write_json(
            &out.join(format!("calibration-{name}.json")),
            calibration_from_report(&v.eval),
        )?;
        write_versioned_csv(
            &out.join(format!("report-{name}.csv")),
            &csvout::report_csv(&v.eval),
        )?;
        write_versioned_csv(
            &out.join(format!("per_pt-{name}.csv")),
            &csvout::per_pt_csv(&v.eval),
        )?;
    }
    if keep_world {
        let world_dir = out.join("world");
        fs::create_dir_all(&world_dir)?;
        let world = &outcome.world;
        data::save_clicklog(
            &world.clicklog,
            &world.catalog,
            &world_dir.join("clicklog.tsv"),
        )?;
        data::save_clicklog(
            &outcome.splits.train_clicklog,
            &world.catalog,
            &world_dir.join("train_clicklog.tsv"),
        )?;
        data::save_dataset(&world.gold, &world.catalog, &world_dir.join("gold.jsonl"))?;
        data::save_dataset(
            &outcome.splits.validation,
            &world.catalog,
            &world_dir.join("gold_val.jsonl"),
        )?;
        data::save_dataset(
            &outcome.splits.test,
            &world.catalog,
            &world_dir.join("gold_test.jsonl"),
        )?;
        data::save_dataset(
            &outcome.derived_train,
            &world.catalog,
            &world_dir.join("derived_train.jsonl"),
        )?;
        save_flip_manifest(
            &world.flip_manifest,
            &world.catalog,
            &world_dir.join("flip_manifest.jsonl"),
        )?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    keep_world: bool,
    include_disjoint: bool,
    max_epochs: Option<usize>,
    learning_rate: Option<f64>,
) -> Result<()> {
    let mut config = load_config(config)?;
    if let Some(s) = seed {
        config.world.seed = s;
    }
    if let Some(e) = max_epochs {
        config.train.max_epochs = e;
    }
    if let Some(lr) = learning_rate {
        config.train.learning_rate = lr;
    }
    let mut variants = pipeline::BENCH_VARIANTS.to_vec();
    if include_disjoint {
        variants.push(VariantKind::DisjointPerLocale);
    }
    let outcome = pipeline::run_bench(&config, &variants, &mut progress)?;
    let report = outcome.report(&config);
    write_bench_artifacts(&outcome, &report, out, keep_world)?;
    for line in pipeline::grid_lines(&report) {
        println!("{line}");
    }
    progress(&format!("bench artifacts written to {}", out.display()));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        bail!("--threads must be >= 1");
    }
    match cli.command {
        Command::Synth { config, out, seed } => cmd_synth(config.as_deref(), &out, seed),
        Command::Derive {
            clicklog,
            out,
            threshold,
            min_clicks,
        } => cmd_derive(&clicklog, &out, threshold, min_clicks),
        Command::Train {
            variant,
            train_data,
            val_data,
            registry,
            out,
            config,
            seed,
            max_epochs,
            learning_rate,
            batch_size,
        } => cmd_train(
            &variant,
            &train_data,
            &val_data,
            registry.as_deref(),
            &out,
            config.as_deref(),
            seed,
            max_epochs,
            learning_rate,
            batch_size,
        ),
        Command::Eval {
            model,
            eval_data,
            train_data,
            clicklog,
            out_dir,
            target_precision,
            hi_re_count,
            global_threshold,
        } => cmd_eval(
            &model,
            &eval_data,
            &train_data,
            &clicklog,
            &out_dir,
            target_precision,
            hi_re_count,
            global_threshold,
        ),
        Command::PrCurve {
            model,
            eval_data,
            locale,
            out,
        } => cmd_pr_curve(&model, &eval_data, &locale, &out),
        Command::AnalyzePt {
            model,
            eval_data,
            train_data,
            clicklog,
            out_dir,
            hi_re_count,
        } => cmd_analyze_pt(
            &model,
            &eval_data,
            &train_data,
            &clicklog,
            &out_dir,
            hi_re_count,
        ),
        Command::AnalyzeEmd {
            clicklog,
            locale_a,
            locale_b,
            out_dir,
            min_clicks,
            bins,
        } => cmd_analyze_emd(&clicklog, &locale_a, &locale_b, &out_dir, min_clicks, bins),
        Command::Predict {
            model,
            query,
            locale,
            threshold,
            calibration,
        } => cmd_predict(&model, &query, &locale, threshold, calibration.as_deref()),
        Command::Serve {
            model,
            calibration,
            bind,
        } => server::serve(&model, calibration.as_deref(), &bind),
        Command::Bench {
            config,
            out,
            seed,
            keep_world,
            include_disjoint,
            max_epochs,
            learning_rate,
        } => cmd_bench(
            config.as_deref(),
            &out,
            seed,
            keep_world,
            include_disjoint,
            max_epochs,
            learning_rate,
        ),
    }
}
