//! Training loop: multi-label binary cross-entropy with logits, Adam
//! updates, seeded shuffling, and early stopping on validation loss.

use localeq_core::rng::{self, Rng};
use localeq_core::Dataset;
use serde::{Deserialize, Serialize};

use crate::bundle::{HeadParams, ModelBundle, VariantKind};
use crate::encoder::{self, TokenBatch};
use crate::error::ModelError;
use crate::tensor::Adam;
use crate::tokenizer::TokenSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub max_epochs: usize,
    /// Early-stop epochs without validation-loss improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 8e-5,
            dropout: 0.001,
            batch_size: 256,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            max_epochs: 60,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
            ("adam_epsilon", self.adam_epsilon),
        ];
        for (name, v) in positive {
            if v <= 0.0 || !v.is_finite() {
                return Err(ModelError::BadConfig(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::BadConfig("dropout outside [0, 1)".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(ModelError::BadConfig(
                "batch_size, max_epochs and patience must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One epoch of the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// A tokenized training row.
pub(crate) struct Prepared {
    pub seq: TokenSequence,
    pub labels: Vec<u32>,
    pub head: usize,
    pub encoder: usize,
}

pub(crate) fn prepare(bundle: &ModelBundle, ds: &Dataset) -> Result<Vec<Prepared>, ModelError> {
    let n_pts = bundle.n_pts();
    let n_locales = bundle.n_locales();
    let mut rows = Vec::with_capacity(ds.len());
    for ex in ds.examples() {
        if (ex.locale.0 as usize) >= n_locales {
            return Err(ModelError::UnknownLocale(format!("index {}", ex.locale.0)));
        }
        let labels: Vec<u32> = ex.labels.iter().map(|pt| pt.0).collect();
        for &pt in &labels {
            if pt as usize >= n_pts {
                return Err(ModelError::LabelOutOfRange { pt, n_pts });
            }
        }
        let per_locale = matches!(
            bundle.variant,
            VariantKind::NonUnified | VariantKind::DisjointPerLocale
        );
        rows.push(Prepared {
            seq: bundle.tokenize_query(&ex.query, Some(ex.locale)),
            labels,
            head: if per_locale { ex.locale.0 as usize } else { 0 },
            encoder: if bundle.variant == VariantKind::DisjointPerLocale {
                ex.locale.0 as usize
            } else {
                0
            },
        });
    }
    Ok(rows)
}

fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Forward pass over one sub-batch sharing an encoder; returns the sum of
/// elementwise losses. When `grad_scale` is set, accumulates gradients of
/// `grad_scale * loss_sum` into the bundle (per-locale head routing:
/// a sample only touches its own head).
fn run_batch(
    bundle: &mut ModelBundle,
    rows: &[&Prepared],
    grad_scale: Option<f64>,
    mut rng: Option<&mut Rng>,
) -> Result<f64, ModelError> {
    debug_assert!(!rows.is_empty());
    let encoder_idx = rows[0].encoder;
    debug_assert!(rows.iter().all(|r| r.encoder == encoder_idx));
    let d = bundle.encoder_config.d_model;
    let p = bundle.n_pts();
    let seqs: Vec<TokenSequence> = rows.iter().map(|r| r.seq.clone()).collect();
    let batch = TokenBatch::from_sequences(&seqs);
    let (pooled, cache) = encoder::encode(
        &bundle.encoder_config,
        &bundle.encoders[encoder_idx],
        batch,
        rng.as_deref_mut(),
    )?;

    let mut loss_sum = 0.0;
    let mut d_pooled = vec![0.0; rows.len() * d];
    let mut y_row = vec![0.0; p];
    for (i, row) in rows.iter().enumerate() {
        let head = &mut bundle.heads[row.head];
        let pooled_row = &pooled[i * d..(i + 1) * d];
        let logits = encoder::linear_forward(
            pooled_row,
            &head.weight.values,
            &head.bias.values,
            d,
            p,
        );
        for &l in &row.labels {
            y_row[l as usize] = 1.0;
        }
        if let Some(scale) = grad_scale {
            let mut d_logits = vec![0.0; p];
            for (j, &z) in logits.iter().enumerate() {
                loss_sum += bce_with_logits(z, y_row[j]);
                d_logits[j] = (sigmoid(z) - y_row[j]) * scale;
            }
            let HeadParams { weight, bias } = head;
            encoder::linear_backward(
                pooled_row,
                &weight.values,
                &d_logits,
                d,
                p,
                &mut d_pooled[i * d..(i + 1) * d],
                &mut weight.grad,
                &mut bias.grad,
            );
        } else {
            for (j, &z) in logits.iter().enumerate() {
                loss_sum += bce_with_logits(z, y_row[j]);
            }
        }
        for &l in &row.labels {
            y_row[l as usize] = 0.0;
        }
    }
    if grad_scale.is_some() {
        encoder::encode_backward(
            &bundle.encoder_config,
            &mut bundle.encoders[encoder_idx],
            &cache,
            &d_pooled,
        );
    }
    Ok(loss_sum)
}

/// Sum of elementwise losses over a full dataset in eval mode.
pub(crate) fn loss_sum(
    bundle: &mut ModelBundle,
    rows: &[Prepared],
    batch_size: usize,
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for chunk in rows.chunks(batch_size) {
        for group in group_by_encoder(chunk.iter().collect()) {
            total += run_batch(bundle, &group, None, None)?;
        }
    }
    Ok(total)
}

/// Splits rows into per-encoder groups preserving row order; encoder order
/// itself is ascending so iteration is deterministic.
fn group_by_encoder(rows: Vec<&Prepared>) -> Vec<Vec<&Prepared>> {
    let mut by_encoder: std::collections::BTreeMap<usize, Vec<&Prepared>> =
        std::collections::BTreeMap::new();
    for row in rows {
        by_encoder.entry(row.encoder).or_default().push(row);
    }
    by_encoder.into_values().collect()
}

/// Trains the bundle, returning the per-epoch loss history and leaving the
/// parameters at the best validation loss seen.
pub fn train(
    bundle: &mut ModelBundle,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>, ModelError> {
    cfg.validate()?;
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    bundle.encoder_config.dropout_rate = cfg.dropout;
    let train_rows = prepare(bundle, train_ds)?;
    let val_rows = prepare(bundle, val_ds)?;
    let p = bundle.n_pts();

    let mut adam = Adam::new(
        cfg.learning_rate,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_epsilon,
    );
    let mut shuffle_rng = rng::seeded(cfg.seed);
    let mut dropout_rng = rng::seeded(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);

    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_snapshot: Vec<Vec<f64>> = Vec::new();
    let mut best_epoch = 0usize;
    let mut stale = 0usize;

    let mut order: Vec<usize> = (0..train_rows.len()).collect();
    for epoch in 0..cfg.max_epochs {
        rng::shuffle(&mut shuffle_rng, &mut order);
        let mut epoch_loss_sum = 0.0;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let rows: Vec<&Prepared> = chunk.iter().map(|&i| &train_rows[i]).collect();
            let batch_elems = (rows.len() * p) as f64;
            let mut batch_loss = 0.0;
            bundle.zero_grads();
            for group in group_by_encoder(rows) {
                batch_loss += run_batch(
                    bundle,
                    &group,
                    Some(1.0 / batch_elems),
                    Some(&mut dropout_rng),
                )?;
            }
            if !batch_loss.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                    lr: cfg.learning_rate,
                });
            }
            epoch_loss_sum += batch_loss;
            adam.step(&mut bundle.tensors_mut());
        }
        let train_loss = epoch_loss_sum / (train_rows.len() * p) as f64;
        let val_loss = loss_sum(bundle, &val_rows, cfg.batch_size)? / (val_rows.len() * p) as f64;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_snapshot = bundle
                .tensors()
                .iter()
                .map(|t| t.values.clone())
                .collect();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    // Return the best-validation parameters.
    if !best_snapshot.is_empty() {
        for (tensor, snap) in bundle.tensors_mut().into_iter().zip(&best_snapshot) {
            tensor.values.copy_from_slice(snap);
        }
    }
    bundle.zero_grads();
    bundle.meta.epochs_run = (best_epoch + 1) as u32;
    bundle.meta.final_val_loss = Some(best_val);
    bundle.meta.seed = cfg.seed;
    Ok(history)
}

/// Mean elementwise BCE of a dataset under the current parameters.
pub fn evaluate_loss(
    bundle: &mut ModelBundle,
    ds: &Dataset,
    batch_size: usize,
) -> Result<f64, ModelError> {
    if ds.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let rows = prepare(bundle, ds)?;
    let p = bundle.n_pts();
    Ok(loss_sum(bundle, &rows, batch_size)? / (rows.len() * p) as f64)
}

/// Gradient accumulation entry point shared with the gradient checker:
/// accumulates d(mean BCE)/d(params) for the given dataset in one batch,
/// returning the mean loss. Eval-mode (no dropout).
pub(crate) fn accumulate_mean_loss_grads(
    bundle: &mut ModelBundle,
    rows: &[Prepared],
) -> Result<f64, ModelError> {
    let p = bundle.n_pts();
    let elems = (rows.len() * p) as f64;
    let mut total = 0.0;
    for group in group_by_encoder(rows.iter().collect()) {
        total += run_batch(bundle, &group, Some(1.0 / elems), None)?;
    }
    Ok(total / elems)
}

/// Eval-mode mean loss without gradients, for finite differencing.
pub(crate) fn mean_loss(bundle: &mut ModelBundle, rows: &[Prepared]) -> Result<f64, ModelError> {
    let p = bundle.n_pts();
    let elems = (rows.len() * p) as f64;
    Ok(loss_sum(bundle, rows, rows.len().max(1))? / elems)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::VariantKind;
    use crate::encoder::EncoderConfig;
    use crate::tokenizer::TokenizerConfig;
    use localeq_core::{
        Dataset, LabeledExample, LocaleId, LocaleRegistry, ProductTypeId, Provenance, PtRegistry,
        Split,
    };
    use std::collections::BTreeSet;

    fn dataset(rows: &[(u32, &str, u32)], n_locales: usize, split: Split) -> Dataset {
        let examples = rows
            .iter()
            .map(|&(l, q, pt)| {
                LabeledExample::new(
                    LocaleId(l),
                    q.to_string(),
                    BTreeSet::from([ProductTypeId(pt)]),
                )
                .unwrap()
            })
            .collect();
        Dataset::new(examples, split, Provenance::Derived, n_locales)
    }

    fn bundle_with(variant: VariantKind, n_locales: usize, n_pts: usize, seed: u64) -> ModelBundle {
        let locales =
            LocaleRegistry::from_codes((0..n_locales).map(|i| format!("L{i:02}"))).unwrap();
        let pts = PtRegistry::from_names((0..n_pts).map(|i| format!("PT{i}"))).unwrap();
        let encoder_config = EncoderConfig {
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            d_ff: 32,
            max_len: 16,
            dropout_rate: 0.0,
        };
        let tokenizer = TokenizerConfig {
            n_buckets: 64,
            max_len: 16,
            n_locales,
        };
        ModelBundle::init(variant, encoder_config, tokenizer, locales, pts, seed).unwrap()
    }

    fn ten_example_rows() -> Vec<(u32, &'static str, u32)> {
        vec![
            (0, "alpha beta", 0),
            (0, "gamma", 1),
            (1, "delta epsilon", 2),
            (1, "zeta", 3),
            (0, "eta theta", 4),
            (1, "iota", 0),
            (0, "kappa lambda", 1),
            (1, "mu", 2),
            (0, "nu xi", 3),
            (1, "omicron pi", 4),
        ]
    }

    fn overfit_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.02,
            dropout: 0.0,
            batch_size: 10,
            max_epochs: 500,
            patience: 500,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn overfits_ten_examples_under_every_variant() {
        let rows = ten_example_rows();
        let ds = dataset(&rows, 2, Split::Train);
        for variant in [
            VariantKind::NonUnified,
            VariantKind::UnifiedAgnostic,
            VariantKind::UnifiedAware,
            VariantKind::DisjointPerLocale,
        ] {
            let mut bundle = bundle_with(variant, 2, 5, 1);
            let history = train(&mut bundle, &ds, &ds, &overfit_cfg()).unwrap();
            let min_train = history
                .iter()
                .map(|e| e.train_loss)
                .fold(f64::INFINITY, f64::min);
            assert!(
                min_train < 0.01,
                "{variant:?} train loss only reached {min_train}"
            );
        }
    }

    #[test]
    fn same_seed_gives_identical_history() {
        let rows = ten_example_rows();
        let ds = dataset(&rows, 2, Split::Train);
        let cfg = TrainConfig {
            max_epochs: 8,
            patience: 8,
            learning_rate: 0.01,
            dropout: 0.1,
            batch_size: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let mut a = bundle_with(VariantKind::UnifiedAware, 2, 5, 2);
        let mut b = bundle_with(VariantKind::UnifiedAware, 2, 5, 2);
        let ha = train(&mut a, &ds, &ds, &cfg).unwrap();
        let hb = train(&mut b, &ds, &ds, &cfg).unwrap();
        assert_eq!(ha, hb);
        for (ta, tb) in a.tensors().iter().zip(b.tensors().iter()) {
            assert_eq!(ta.values, tb.values, "{} diverged", ta.name);
        }
    }

    #[test]
    fn single_locale_noncons_equals_agnostic_exactly() {
        // With one locale, the non-unified model and the locale-agnostic
        // unified model are the same function; identical seed and data
        // order must produce identical parameters and loss history.
        let rows: Vec<(u32, &str, u32)> = ten_example_rows()
            .into_iter()
            .map(|(_, q, pt)| (0, q, pt))
            .collect();
        let ds = dataset(&rows, 1, Split::Train);
        let cfg = TrainConfig {
            max_epochs: 6,
            patience: 6,
            learning_rate: 0.01,
            batch_size: 4,
            dropout: 0.05,
            seed: 5,
            ..TrainConfig::default()
        };
        let mut noncons = bundle_with(VariantKind::NonUnified, 1, 5, 7);
        let mut agnostic = bundle_with(VariantKind::UnifiedAgnostic, 1, 5, 7);
        let h1 = train(&mut noncons, &ds, &ds, &cfg).unwrap();
        let h2 = train(&mut agnostic, &ds, &ds, &cfg).unwrap();
        assert_eq!(h1, h2);
        for (ta, tb) in noncons.tensors().iter().zip(agnostic.tensors().iter()) {
            assert_eq!(ta.values, tb.values);
        }
    }

    #[test]
    fn noncons_head_isolation() {
        // A batch with no samples from locale 1 leaves head 1 untouched.
        let rows = vec![(0u32, "alpha beta", 0u32), (0, "gamma", 1)];
        let ds = dataset(&rows, 2, Split::Train);
        let mut bundle = bundle_with(VariantKind::NonUnified, 2, 5, 4);
        let prepared = prepare(&bundle, &ds).unwrap();
        bundle.zero_grads();
        accumulate_mean_loss_grads(&mut bundle, &prepared).unwrap();
        assert!(bundle.heads[0].weight.grad.iter().any(|&g| g != 0.0));
        assert!(bundle.heads[1].weight.grad.iter().all(|&g| g == 0.0));
        assert!(bundle.heads[1].bias.grad.iter().all(|&g| g == 0.0));
        // The shared encoder still receives gradient from locale 0 samples.
        assert!(bundle.encoders[0]
            .tok_emb
            .grad
            .iter()
            .any(|&g| g != 0.0));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let ds = Dataset::new(Vec::new(), Split::Train, Provenance::Derived, 1);
        let full = dataset(&[(0, "a", 0)], 1, Split::Train);
        let mut bundle = bundle_with(VariantKind::UnifiedAgnostic, 1, 5, 1);
        assert!(matches!(
            train(&mut bundle, &ds, &full, &TrainConfig::default()),
            Err(ModelError::EmptyDataset)
        ));
    }

    #[test]
    fn label_outside_registry_is_an_error() {
        let ds = dataset(&[(0, "a", 9)], 1, Split::Train);
        let mut bundle = bundle_with(VariantKind::UnifiedAgnostic, 1, 5, 1);
        assert!(matches!(
            train(&mut bundle, &ds, &ds, &TrainConfig::default()),
            Err(ModelError::LabelOutOfRange { pt: 9, .. })
        ));
    }

    #[test]
    fn early_stopping_restores_best_parameters() {
        let rows = ten_example_rows();
        let train_ds = dataset(&rows, 2, Split::Train);
        // Validation on different queries so val loss eventually rises.
        let val_ds = dataset(
            &[(0, "rho sigma", 0), (1, "tau upsilon", 2)],
            2,
            Split::Validation,
        );
        let cfg = TrainConfig {
            learning_rate: 0.05,
            batch_size: 10,
            max_epochs: 200,
            patience: 3,
            dropout: 0.0,
            seed: 11,
            ..TrainConfig::default()
        };
        let mut bundle = bundle_with(VariantKind::UnifiedAgnostic, 2, 5, 6);
        let history = train(&mut bundle, &train_ds, &val_ds, &cfg).unwrap();
        let best = history
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert!(history.len() < 200, "early stop fired");
        assert!((bundle.meta.final_val_loss.unwrap() - best).abs() < 1e-15);
        // Restored parameters reproduce the recorded best validation loss.
        let val_now = evaluate_loss(&mut bundle, &val_ds, 10).unwrap();
        assert!((val_now - best).abs() < 1e-12);
    }
}
