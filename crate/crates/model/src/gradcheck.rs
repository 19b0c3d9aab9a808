//! Gradient verification harness: analytic reverse-mode gradients of the
//! full encoder-plus-head loss against central finite differences.

use localeq_core::rng::{self, Rng};
use localeq_core::{Dataset, LabeledExample, LocaleId, LocaleRegistry, ProductTypeId, Provenance, PtRegistry, Split};

use crate::bundle::{ModelBundle, VariantKind};
use crate::encoder::EncoderConfig;
use crate::error::ModelError;
use crate::tokenizer::TokenizerConfig;
use crate::train;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Maximum relative error of one parameter group (tensor).
#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }
}

/// Relative error with a floor that keeps finite-difference noise on
/// near-zero gradients from dominating.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

fn random_word(rng: &mut Rng) -> String {
    let len = rng::range_usize(rng, 3, 6);
    (0..len)
        .map(|_| (b'a' + rng::bounded(rng, 26) as u8) as char)
        .collect()
}

/// Builds a random tiny locale-aware model and batch, runs one analytic
/// backward pass, and compares every parameter gradient against central
/// finite differences of the batch loss. Deterministic under `seed`.
pub fn grad_check(
    encoder_config: EncoderConfig,
    tokenizer: TokenizerConfig,
    n_pts: usize,
    seed: u64,
    step: f64,
) -> Result<GradCheckReport, ModelError> {
    let locales =
        LocaleRegistry::from_codes((0..tokenizer.n_locales).map(|i| format!("L{i:02}")))
            .map_err(|e| ModelError::BadConfig(e.to_string()))?;
    let pts = PtRegistry::from_names((0..n_pts).map(|i| format!("PT{i:02}")))
        .map_err(|e| ModelError::BadConfig(e.to_string()))?;
    let mut bundle = ModelBundle::init(
        VariantKind::UnifiedAware,
        encoder_config,
        tokenizer,
        locales,
        pts,
        seed,
    )?;

    // Random batch: varied lengths so PAD masking participates.
    let mut r = rng::seeded(seed ^ 0xA5A5_5A5A);
    let mut examples = Vec::new();
    for i in 0..4 {
        let n_words = rng::range_usize(&mut r, 1, 3);
        let query = (0..n_words)
            .map(|_| random_word(&mut r))
            .collect::<Vec<_>>()
            .join(" ");
        let locale = LocaleId((i % bundle.n_locales()) as u32);
        let mut labels = std::collections::BTreeSet::new();
        labels.insert(ProductTypeId(rng::bounded(&mut r, n_pts as u64) as u32));
        if rng::unit_f64(&mut r) < 0.5 {
            labels.insert(ProductTypeId(rng::bounded(&mut r, n_pts as u64) as u32));
        }
        examples.push(LabeledExample::new(locale, query, labels).expect("non-empty labels"));
    }
    let ds = Dataset::new(examples, Split::Train, Provenance::Derived, bundle.n_locales());
    let rows = train::prepare(&bundle, &ds)?;

    bundle.zero_grads();
    train::accumulate_mean_loss_grads(&mut bundle, &rows)?;
    let analytic: Vec<(String, Vec<f64>)> = bundle
        .tensors()
        .iter()
        .map(|t| (t.name.clone(), t.grad.clone()))
        .collect();

    let n_tensors = analytic.len();
    let mut groups = Vec::with_capacity(n_tensors);
    for ti in 0..n_tensors {
        let len = bundle.tensors()[ti].len();
        let mut worst: f64 = 0.0;
        for i in 0..len {
            let orig = bundle.tensors()[ti].values[i];
            bundle.tensors_mut()[ti].values[i] = orig + step;
            let above = train::mean_loss(&mut bundle, &rows)?;
            bundle.tensors_mut()[ti].values[i] = orig - step;
            let below = train::mean_loss(&mut bundle, &rows)?;
            bundle.tensors_mut()[ti].values[i] = orig;
            let fd = (above - below) / (2.0 * step);
            let err = rel_err(analytic[ti].1[i], fd);
            if !fd.is_finite() || !analytic[ti].1[i].is_finite() {
                worst = f64::INFINITY;
            } else {
                worst = worst.max(err);
            }
        }
        groups.push(GroupReport {
            name: analytic[ti].0.clone(),
            max_rel_err: worst,
        });
    }
    Ok(GradCheckReport { groups })
}

/// The tiny configuration used by the gradient-correctness gate:
/// d_model 8, one layer, vocabulary 50 (2 locales + 44 hash buckets),
/// 5 product types.
pub fn tiny_check(seed: u64) -> Result<GradCheckReport, ModelError> {
    let encoder_config = EncoderConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        max_len: 10,
        dropout_rate: 0.0,
    };
    let tokenizer = TokenizerConfig {
        n_buckets: 44,
        max_len: 10,
        n_locales: 2,
    };
    debug_assert_eq!(tokenizer.vocab_total(), 50);
    grad_check(encoder_config, tokenizer, 5, seed, DEFAULT_STEP)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_model_gradients_match_finite_differences() {
        let report = tiny_check(7).unwrap();
        assert!(
            report.max_rel_err() < 1e-4,
            "max relative error {} in {:?}",
            report.max_rel_err(),
            report
                .groups
                .iter()
                .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
                .map(|g| g.name.clone())
        );
    }

    #[test]
    fn report_lists_every_parameter_group_once() {
        let report = tiny_check(3).unwrap();
        let mut names: Vec<&str> = report.groups.iter().map(|g| g.name.as_str()).collect();
        let total = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), total, "duplicate parameter groups");
        // tok_emb, pos_emb, 16 layer tensors, 2 final-norm, weight, bias.
        assert_eq!(total, 2 + 16 + 2 + 2);
        assert!(names.contains(&"head.weight"));
        assert!(names.contains(&"encoder.tok_emb"));
    }

    #[test]
    fn all_zero_parameters_run_without_nan() {
        let encoder_config = EncoderConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            max_len: 10,
            dropout_rate: 0.0,
        };
        let tokenizer = TokenizerConfig {
            n_buckets: 44,
            max_len: 10,
            n_locales: 2,
        };
        let locales = LocaleRegistry::from_codes(["L00", "L01"]).unwrap();
        let pts = PtRegistry::from_names(["A", "B", "C"]).unwrap();
        let mut bundle = ModelBundle::init(
            VariantKind::UnifiedAware,
            encoder_config,
            tokenizer,
            locales,
            pts,
            1,
        )
        .unwrap();
        for t in bundle.tensors_mut() {
            t.values.fill(0.0);
        }
        let ds = Dataset::new(
            vec![LabeledExample::new(
                LocaleId(0),
                "abc def".into(),
                std::collections::BTreeSet::from([ProductTypeId(1)]),
            )
            .unwrap()],
            Split::Train,
            Provenance::Derived,
            2,
        );
        let rows = train::prepare(&bundle, &ds).unwrap();
        let loss = train::accumulate_mean_loss_grads(&mut bundle, &rows).unwrap();
        assert!(loss.is_finite());
        for t in bundle.tensors() {
            assert!(t.grad.iter().all(|g| g.is_finite()), "{} has NaN", t.name);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = tiny_check(11).unwrap();
        let b = tiny_check(11).unwrap();
        assert_eq!(a.groups.len(), b.groups.len());
        for (x, y) in a.groups.iter().zip(&b.groups) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.max_rel_err, y.max_rel_err);
        }
    }
}
