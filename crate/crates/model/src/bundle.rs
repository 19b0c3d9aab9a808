//! The classifier variants and the trainable/persistable model bundle.

use localeq_core::metrics::Scorer;
use localeq_core::rng::{self, Gaussian, Rng};
use localeq_core::{LocaleId, LocaleRegistry, ProductTypeId, PtRegistry};
use serde::{Deserialize, Serialize};

use crate::encoder::{self, EncoderConfig, EncoderParams, TokenBatch, INIT_STD};
use crate::error::ModelError;
use crate::tensor::ParameterTensor;
use crate::tokenizer::{tokenize, LocalePrefix, TokenSequence, TokenizerConfig};

/// Architecture variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    /// Shared encoder, one classifier head per locale, each head trained
    /// only on its locale's samples.
    NonUnified,
    /// One encoder and one head over pooled data; locale ignored.
    UnifiedAgnostic,
    /// One encoder and one head; input prefixed with the locale token.
    UnifiedAware,
    /// Fully separate encoder and head per locale (ablation).
    DisjointPerLocale,
}

impl VariantKind {
    /// Name used by the CLI `--variant` flag.
    pub fn cli_name(&self) -> &'static str {
        match self {
            VariantKind::NonUnified => "noncons",
            VariantKind::UnifiedAgnostic => "cons-agnostic",
            VariantKind::UnifiedAware => "cons-aware",
            VariantKind::DisjointPerLocale => "disjoint",
        }
    }

    pub fn from_cli_name(name: &str) -> Option<Self> {
        match name {
            "noncons" => Some(VariantKind::NonUnified),
            "cons-agnostic" => Some(VariantKind::UnifiedAgnostic),
            "cons-aware" => Some(VariantKind::UnifiedAware),
            "disjoint" => Some(VariantKind::DisjointPerLocale),
            _ => None,
        }
    }

    pub fn uses_locale_prefix(&self) -> bool {
        matches!(self, VariantKind::UnifiedAware)
    }

    pub fn n_heads(&self, n_locales: usize) -> usize {
        match self {
            VariantKind::NonUnified | VariantKind::DisjointPerLocale => n_locales,
            _ => 1,
        }
    }

    pub fn n_encoders(&self, n_locales: usize) -> usize {
        match self {
            VariantKind::DisjointPerLocale => n_locales,
            _ => 1,
        }
    }
}

/// Fully-connected sigmoid head mapping pooled vectors to type scores.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub weight: ParameterTensor,
    pub bias: ParameterTensor,
}

impl HeadParams {
    pub fn init(d_model: usize, n_pts: usize, name: &str, rng: &mut Rng) -> Self {
        let mut gauss = Gaussian::new();
        Self {
            weight: ParameterTensor::normal(
                format!("{name}.weight"),
                &[d_model, n_pts],
                INIT_STD,
                rng,
                &mut gauss,
            ),
            bias: ParameterTensor::zeros(format!("{name}.bias"), &[n_pts]),
        }
    }

    pub fn tensors(&self) -> Vec<&ParameterTensor> {
        vec![&self.weight, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ParameterTensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Training provenance stored with the bundle.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs_run: u32,
    /// Best validation loss seen; absent before any training.
    pub final_val_loss: Option<f64>,
    pub seed: u64,
}

/// Encoder plus head(s) plus everything needed to reproduce predictions.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub variant: VariantKind,
    pub encoder_config: EncoderConfig,
    pub tokenizer: TokenizerConfig,
    pub locales: LocaleRegistry,
    pub pts: PtRegistry,
    pub encoders: Vec<EncoderParams>,
    pub heads: Vec<HeadParams>,
    pub meta: TrainMeta,
}

/// Outcome of a thresholded prediction; an empty list means the model
/// refrains.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// (type, score) sorted by score descending, all >= the threshold.
    pub items: Vec<(ProductTypeId, f64)>,
    pub locale_known: bool,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ModelBundle {
    /// Seeded initialization. The encoder tensors are drawn first and the
    /// heads afterwards, so variants sharing a configuration start from the
    /// same encoder weights under the same seed.
    pub fn init(
        variant: VariantKind,
        encoder_config: EncoderConfig,
        tokenizer: TokenizerConfig,
        locales: LocaleRegistry,
        pts: PtRegistry,
        seed: u64,
    ) -> Result<Self, ModelError> {
        encoder_config.validate()?;
        if tokenizer.n_locales != locales.len() {
            return Err(ModelError::BadConfig(format!(
                "tokenizer n_locales {} does not match registry size {}",
                tokenizer.n_locales,
                locales.len()
            )));
        }
        if tokenizer.max_len != encoder_config.max_len {
            return Err(ModelError::BadConfig(
                "tokenizer and encoder max_len differ".into(),
            ));
        }
        let n_locales = locales.len();
        let n_pts = pts.len();
        if n_pts == 0 || n_locales == 0 {
            return Err(ModelError::BadConfig(
                "registries must be non-empty".into(),
            ));
        }
        let mut r = rng::seeded(seed);
        let vocab_total = tokenizer.vocab_total();
        let n_enc = variant.n_encoders(n_locales);
        let encoders: Vec<EncoderParams> = (0..n_enc)
            .map(|e| {
                let prefix = if n_enc == 1 {
                    "encoder.".to_string()
                } else {
                    format!("encoder{e}.")
                };
                EncoderParams::init(&encoder_config, vocab_total, &prefix, &mut r)
            })
            .collect();
        let n_heads = variant.n_heads(n_locales);
        let heads: Vec<HeadParams> = (0..n_heads)
            .map(|h| {
                let name = if n_heads == 1 {
                    "head".to_string()
                } else {
                    format!("head{h}")
                };
                HeadParams::init(encoder_config.d_model, n_pts, &name, &mut r)
            })
            .collect();
        Ok(Self {
            variant,
            encoder_config,
            tokenizer,
            locales,
            pts,
            encoders,
            heads,
            meta: TrainMeta::default(),
        })
    }

    pub fn n_pts(&self) -> usize {
        self.pts.len()
    }

    pub fn n_locales(&self) -> usize {
        self.locales.len()
    }

    /// Total trainable parameter count.
    pub fn n_parameters(&self) -> usize {
        let enc: usize = self.encoders.iter().map(|e| e.n_parameters()).sum();
        let heads: usize = self
            .heads
            .iter()
            .map(|h| h.weight.len() + h.bias.len())
            .sum();
        enc + heads
    }

    /// All tensors in the fixed serialization and optimizer order.
    pub fn tensors(&self) -> Vec<&ParameterTensor> {
        let mut out = Vec::new();
        for e in &self.encoders {
            out.extend(e.tensors());
        }
        for h in &self.heads {
            out.extend(h.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ParameterTensor> {
        let mut out = Vec::new();
        for e in &mut self.encoders {
            out.extend(e.tensors_mut());
        }
        for h in &mut self.heads {
            out.extend(h.tensors_mut());
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }

    /// Deterministic version string: variant, size, training provenance.
    pub fn model_version(&self) -> String {
        format!(
            "lqpt-v1/{}/d{}x{}/seed{}/epochs{}",
            self.variant.cli_name(),
            self.encoder_config.d_model,
            self.encoder_config.n_layers,
            self.meta.seed,
            self.meta.epochs_run
        )
    }

    fn encoder_index(&self, locale: Option<LocaleId>) -> usize {
        match self.variant {
            VariantKind::DisjointPerLocale => {
                locale.expect("disjoint scoring requires a known locale").0 as usize
            }
            _ => 0,
        }
    }

    fn head_index(&self, locale: Option<LocaleId>) -> usize {
        match self.variant {
            VariantKind::NonUnified | VariantKind::DisjointPerLocale => {
                locale.expect("per-locale head requires a known locale").0 as usize
            }
            _ => 0,
        }
    }

    /// Tokenizes a query the way this variant consumes it.
    pub fn tokenize_query(&self, query: &str, locale: Option<LocaleId>) -> TokenSequence {
        let prefix = if self.variant.uses_locale_prefix() {
            match locale {
                Some(l) => LocalePrefix::Locale(l),
                None => LocalePrefix::Unknown,
            }
        } else {
            LocalePrefix::None
        };
        tokenize(query, prefix, &self.tokenizer)
    }

    /// Sigmoid scores over all product types for a registry-known locale.
    pub fn score_known(&self, query: &str, locale: LocaleId) -> Result<Vec<f64>, ModelError> {
        if (locale.0 as usize) >= self.n_locales() {
            return Err(ModelError::UnknownLocale(format!("index {}", locale.0)));
        }
        let seq = self.tokenize_query(query, Some(locale));
        self.score_sequence(&seq, Some(locale))
    }

    /// Sigmoid scores for a locale given by code, which may be unknown.
    ///
    /// Unknown locales are an error for per-locale-head variants; the
    /// locale-aware variant substitutes the reserved unknown token and the
    /// agnostic variant ignores the locale entirely. The flag reports
    /// whether the locale was known.
    pub fn score_by_code(&self, query: &str, code: &str) -> Result<(Vec<f64>, bool), ModelError> {
        let locale = self.locales.lookup(code);
        match self.variant {
            VariantKind::NonUnified | VariantKind::DisjointPerLocale => {
                let locale =
                    locale.ok_or_else(|| ModelError::NoHeadForLocale(code.to_string()))?;
                Ok((self.score_known(query, locale)?, true))
            }
            VariantKind::UnifiedAgnostic => {
                let seq = self.tokenize_query(query, None);
                Ok((self.score_sequence(&seq, None)?, locale.is_some()))
            }
            VariantKind::UnifiedAware => {
                let known = locale.is_some();
                let seq = self.tokenize_query(query, locale);
                Ok((self.score_sequence(&seq, locale)?, known))
            }
        }
    }

    fn score_sequence(
        &self,
        seq: &TokenSequence,
        locale: Option<LocaleId>,
    ) -> Result<Vec<f64>, ModelError> {
        let enc = &self.encoders[self.encoder_index(locale)];
        let head = &self.heads[self.head_index(locale)];
        let batch = TokenBatch::from_sequences(std::slice::from_ref(seq));
        let (pooled, _) = encoder::encode(&self.encoder_config, enc, batch, None)?;
        let logits = encoder::linear_forward(
            &pooled,
            &head.weight.values,
            &head.bias.values,
            self.encoder_config.d_model,
            self.n_pts(),
        );
        Ok(logits.into_iter().map(sigmoid).collect())
    }

    /// Thresholded prediction: every type scoring at least `threshold`,
    /// sorted by score descending. An empty list is a refrain.
    pub fn predict(
        &self,
        query: &str,
        locale_code: &str,
        threshold: f64,
    ) -> Result<Prediction, ModelError> {
        assert!((0.0..=1.0).contains(&threshold), "threshold outside [0,1]");
        let (scores, locale_known) = self.score_by_code(query, locale_code)?;
        let mut items: Vec<(ProductTypeId, f64)> = scores
            .into_iter()
            .enumerate()
            .filter(|&(_, s)| s >= threshold)
            .map(|(p, s)| (ProductTypeId(p as u32), s))
            .collect();
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(Prediction {
            items,
            locale_known,
        })
    }
}

impl Scorer for ModelBundle {
    fn n_pts(&self) -> usize {
        self.pts.len()
    }

    fn pt_scores(&self, query: &str, locale: LocaleId) -> Result<Vec<f64>, String> {
        self.score_known(query, locale).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_bundle(variant: VariantKind, seed: u64) -> ModelBundle {
        let locales = LocaleRegistry::from_codes(["US", "PL", "DE"]).unwrap();
        let pts = PtRegistry::from_names(["A", "B", "C", "D"]).unwrap();
        let encoder_config = EncoderConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            max_len: 12,
            dropout_rate: 0.0,
        };
        let tokenizer = TokenizerConfig {
            n_buckets: 32,
            max_len: 12,
            n_locales: 3,
        };
        ModelBundle::init(variant, encoder_config, tokenizer, locales, pts, seed).unwrap()
    }

    #[test]
    fn agnostic_scores_are_locale_invariant() {
        let bundle = tiny_bundle(VariantKind::UnifiedAgnostic, 3);
        let a = bundle.score_known("harry potter mug", LocaleId(0)).unwrap();
        let b = bundle.score_known("harry potter mug", LocaleId(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aware_inputs_differ_at_locale_token() {
        let bundle = tiny_bundle(VariantKind::UnifiedAware, 3);
        let s0 = bundle.tokenize_query("mug", Some(LocaleId(0)));
        let s1 = bundle.tokenize_query("mug", Some(LocaleId(1)));
        assert_ne!(s0.ids[1], s1.ids[1]);
        assert_eq!(&s0.ids[2..], &s1.ids[2..]);
    }

    #[test]
    fn zeroed_noncons_heads_score_half() {
        let mut bundle = tiny_bundle(VariantKind::NonUnified, 4);
        for head in &mut bundle.heads {
            head.weight.values.fill(0.0);
            head.bias.values.fill(0.0);
        }
        let scores = bundle.score_known("anything at all", LocaleId(1)).unwrap();
        assert!(scores.iter().all(|&s| s == 0.5), "{scores:?}");
    }

    #[test]
    fn scores_strictly_inside_unit_interval() {
        let bundle = tiny_bundle(VariantKind::UnifiedAware, 5);
        let scores = bundle.score_known("zzz yyy", LocaleId(0)).unwrap();
        assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn predict_thresholds_and_refrains() {
        let bundle = tiny_bundle(VariantKind::UnifiedAgnostic, 6);
        let all = bundle.predict("mug", "US", 0.0).unwrap();
        assert_eq!(all.items.len(), 4, "threshold 0 returns every type");
        for w in all.items.windows(2) {
            assert!(w[0].1 >= w[1].1, "sorted descending");
        }
        let none = bundle.predict("mug", "US", 1.0).unwrap();
        assert!(none.items.is_empty(), "finite logits refrain at 1.0");
    }

    #[test]
    fn refrain_monotone_in_threshold() {
        let bundle = tiny_bundle(VariantKind::UnifiedAware, 7);
        let mut prev = usize::MAX;
        for threshold in [0.0, 0.3, 0.5, 0.7, 1.0] {
            let n = bundle.predict("mug cup", "PL", threshold).unwrap().items.len();
            assert!(n <= prev, "raising threshold added predictions");
            prev = n;
        }
    }

    #[test]
    fn unknown_locale_behavior_per_variant() {
        let noncons = tiny_bundle(VariantKind::NonUnified, 8);
        assert!(matches!(
            noncons.score_by_code("mug", "XX"),
            Err(ModelError::NoHeadForLocale(_))
        ));

        let aware = tiny_bundle(VariantKind::UnifiedAware, 8);
        let (scores_known, known) = aware.score_by_code("mug", "US").unwrap();
        assert!(known);
        let (scores_unknown, known) = aware.score_by_code("mug", "XX").unwrap();
        assert!(!known);
        // The unknown token differs from every locale token.
        assert_ne!(scores_known, scores_unknown);

        let agnostic = tiny_bundle(VariantKind::UnifiedAgnostic, 8);
        let (a, known) = agnostic.score_by_code("mug", "XX").unwrap();
        assert!(!known);
        let (b, _) = agnostic.score_by_code("mug", "US").unwrap();
        assert_eq!(a, b, "agnostic scoring ignores the locale");
    }

    #[test]
    fn noncons_and_agnostic_share_encoder_init_at_same_seed() {
        let a = tiny_bundle(VariantKind::NonUnified, 11);
        let b = tiny_bundle(VariantKind::UnifiedAgnostic, 11);
        assert_eq!(a.encoders[0].tok_emb.values, b.encoders[0].tok_emb.values);
        assert_eq!(
            a.encoders[0].layers[0].wq.values,
            b.encoders[0].layers[0].wq.values
        );
        // First head drawn right after the encoder in both.
        assert_eq!(a.heads[0].weight.values, b.heads[0].weight.values);
    }

    #[test]
    fn parameter_count_difference_between_variants() {
        let noncons = tiny_bundle(VariantKind::NonUnified, 12);
        let aware = tiny_bundle(VariantKind::UnifiedAware, 12);
        let l = noncons.n_locales();
        let d = noncons.encoder_config.d_model;
        let p = noncons.n_pts();
        assert_eq!(
            noncons.n_parameters() - aware.n_parameters(),
            (l - 1) * (d + 1) * p
        );
    }
}
