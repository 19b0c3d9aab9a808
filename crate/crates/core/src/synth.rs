//! Seeded generator of a multi-locale world: catalog, click logs, and gold
//! evaluation labels.
//!
//! The generator plants three kinds of cross-locale divergence that can be
//! recovered by the analysis stages: dialectal flips (same query string,
//! different intended product type in a subset of locales), selection masks
//! (product types absent from some locale catalogs), and click noise.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::data::{
    Catalog, ClickRecord, Dataset, LabeledExample, LocaleId, ProductTypeId, Provenance, Split,
};
use crate::error::SynthError;
use crate::rng::{self, CategoricalSampler, Rng};

/// Minimum sampled query events per (dialectal template, locale), so every
/// planted flip is observable in the click log on both sides of a pair.
pub const FLIP_MIN_EVENTS: u64 = 3;

/// Probability that a given locale joins a dialectal template's flip set.
const FLIP_LOCALE_PROB: f64 = 0.25;

/// Probability that a template carries one shared stopword term.
const STOPWORD_PROB: f64 = 0.4;

/// Selection masks never remove the a priori most popular ranks, so masking
/// does not reshape the global frequency curve.
const MASK_SKIP_TOP_RANKS: usize = 3;

/// Full configuration of a synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub n_locales: usize,
    pub n_pts: usize,
    pub n_items_per_pt: usize,
    /// Exponent of the Zipf law over product-type popularity.
    pub zipf_exponent: f64,
    /// Fraction of locales treated as high-resource when deriving volumes.
    pub hi_re_fraction: f64,
    /// Ratio of high-resource to low-resource per-locale query volume.
    pub size_ratio: f64,
    pub vocab_size: usize,
    pub terms_per_pt: usize,
    /// Distinct query templates generated per product type.
    #[serde(default = "default_templates_per_pt")]
    pub templates_per_pt: usize,
    /// Fraction of query templates marked dialectal.
    pub flip_fraction: f64,
    /// Fraction of product types absent from a random subset of catalogs.
    pub selection_fraction: f64,
    /// Probability a click lands on a uniformly random catalog item.
    pub click_noise: f64,
    /// Total clicks emitted per sampled query event.
    #[serde(default = "default_clicks_per_query")]
    pub clicks_per_query: u64,
    /// Explicit per-locale query volumes; empty means derive from
    /// `hi_re_fraction`, `size_ratio` and `base_queries`.
    #[serde(default)]
    pub queries_per_locale: Vec<u64>,
    /// Low-resource per-locale query volume when volumes are derived.
    #[serde(default = "default_base_queries")]
    pub base_queries: u64,
    pub seed: u64,
}

fn default_templates_per_pt() -> usize {
    5
}

fn default_clicks_per_query() -> u64 {
    20
}

fn default_base_queries() -> u64 {
    20
}

impl WorldSpec {
    /// The benchmark world shipped with the repository.
    pub fn benchmark() -> Self {
        Self {
            n_locales: 20,
            n_pts: 200,
            n_items_per_pt: 4,
            zipf_exponent: 1.1,
            hi_re_fraction: 0.45,
            size_ratio: 100.0,
            vocab_size: 1500,
            terms_per_pt: 6,
            templates_per_pt: 5,
            flip_fraction: 0.02,
            selection_fraction: 0.05,
            click_noise: 0.1,
            clicks_per_query: 20,
            queries_per_locale: Vec::new(),
            base_queries: 20,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let frac = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(SynthError::InvalidSpec(format!("{name} {v} outside [0,1]")))
            }
        };
        frac("hi_re_fraction", self.hi_re_fraction)?;
        frac("flip_fraction", self.flip_fraction)?;
        frac("selection_fraction", self.selection_fraction)?;
        frac("click_noise", self.click_noise)?;
        if self.zipf_exponent <= 0.0 || !self.zipf_exponent.is_finite() {
            return Err(SynthError::InvalidSpec(format!(
                "zipf_exponent {} must be positive",
                self.zipf_exponent
            )));
        }
        if self.size_ratio <= 0.0 || !self.size_ratio.is_finite() {
            return Err(SynthError::InvalidSpec(format!(
                "size_ratio {} must be positive",
                self.size_ratio
            )));
        }
        for (name, v) in [
            ("n_locales", self.n_locales),
            ("n_pts", self.n_pts),
            ("n_items_per_pt", self.n_items_per_pt),
            ("vocab_size", self.vocab_size),
            ("terms_per_pt", self.terms_per_pt),
            ("templates_per_pt", self.templates_per_pt),
        ] {
            if v < 1 {
                return Err(SynthError::InvalidSpec(format!("{name} must be >= 1")));
            }
        }
        if self.clicks_per_query < 1 || self.base_queries < 1 {
            return Err(SynthError::InvalidSpec(
                "clicks_per_query and base_queries must be >= 1".into(),
            ));
        }
        let needed = self.n_pts * self.terms_per_pt;
        if needed > self.vocab_size {
            return Err(SynthError::VocabTooSmall {
                needed,
                vocab: self.vocab_size,
            });
        }
        if !self.queries_per_locale.is_empty() && self.queries_per_locale.len() != self.n_locales {
            return Err(SynthError::InvalidSpec(format!(
                "queries_per_locale has {} entries for {} locales",
                self.queries_per_locale.len(),
                self.n_locales
            )));
        }
        Ok(())
    }

    /// Number of high-resource locales implied by `hi_re_fraction`.
    pub fn n_hi_re(&self) -> usize {
        ((self.hi_re_fraction * self.n_locales as f64).round() as usize)
            .min(self.n_locales.saturating_sub(1))
            .max(usize::from(self.n_locales > 1))
    }

    /// Per-locale query volumes: explicit when configured, otherwise the
    /// first `n_hi_re()` locales get `base_queries * size_ratio` and the
    /// rest `base_queries`.
    pub fn volumes(&self) -> Vec<u64> {
        if !self.queries_per_locale.is_empty() {
            return self.queries_per_locale.clone();
        }
        let n_hi = self.n_hi_re();
        (0..self.n_locales)
            .map(|l| {
                if l < n_hi {
                    ((self.base_queries as f64) * self.size_ratio).round() as u64
                } else {
                    self.base_queries
                }
            })
            .collect()
    }
}

/// One planted dialectal record: in `locale`, `query` means `pt`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipRecord {
    pub query: String,
    pub locale: LocaleId,
    pub pt: ProductTypeId,
}

/// A query template and its base product type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub text: String,
    pub base_pt: ProductTypeId,
    /// Locales in which this template flips to `flip_pt`.
    pub flip_locales: BTreeSet<LocaleId>,
    pub flip_pt: Option<ProductTypeId>,
}

impl Template {
    pub fn is_dialectal(&self) -> bool {
        self.flip_pt.is_some()
    }
}

/// A generated world: catalog, click log, gold labels, and planting records.
#[derive(Debug, Clone)]
pub struct World {
    pub spec: WorldSpec,
    pub catalog: Catalog,
    pub clicklog: Vec<ClickRecord>,
    pub gold: Dataset,
    pub flip_manifest: Vec<FlipRecord>,
    pub templates: Vec<Template>,
    /// (locale index, pt index) pairs removed from that locale's catalog.
    pub masked: BTreeSet<(u32, u32)>,
    /// Realized query-event mass per product type (over effective intent).
    pub pt_query_mass: Vec<u64>,
}

impl World {
    /// Effective intended product type of a template in a locale: the base
    /// type, overridden by a dialectal flip, then redirected past any
    /// selection mask to the next-best catalog type in popularity order.
    pub fn effective_pt(&self, template: &Template, locale: LocaleId) -> ProductTypeId {
        let mut pt = match (&template.flip_pt, template.flip_locales.contains(&locale)) {
            (Some(flip), true) => *flip,
            _ => template.base_pt,
        };
        let n = self.catalog.pts.len() as u32;
        if self.masked.contains(&(locale.0, pt.0)) {
            for step in 1..n {
                let candidate = (pt.0 + step) % n;
                if !self.masked.contains(&(locale.0, candidate)) {
                    pt = ProductTypeId(candidate);
                    break;
                }
            }
        }
        pt
    }
}

fn pt_name(index: usize) -> String {
    format!("PT_{index:04}")
}

fn locale_code(index: usize) -> String {
    format!("L{index:02}")
}

fn gen_word(rng: &mut Rng) -> String {
    let len = rng::range_usize(rng, 4, 8);
    (0..len)
        .map(|_| (b'a' + rng::bounded(rng, 26) as u8) as char)
        .collect()
}

fn gen_vocab(rng: &mut Rng, size: usize) -> Vec<String> {
    let mut seen = HashSet::with_capacity(size);
    let mut words = Vec::with_capacity(size);
    while words.len() < size {
        let w = gen_word(rng);
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

struct Planter<'a> {
    spec: &'a WorldSpec,
    zipf_weights: Vec<f64>,
    masked: BTreeSet<(u32, u32)>,
}

impl Planter<'_> {
    fn plant_masks(&mut self, rng: &mut Rng) {
        let n_masked = (self.spec.selection_fraction * self.spec.n_pts as f64).round() as usize;
        if n_masked == 0 || self.spec.n_locales < 2 {
            return;
        }
        let eligible: Vec<usize> = (MASK_SKIP_TOP_RANKS.min(self.spec.n_pts)..self.spec.n_pts)
            .collect();
        if eligible.is_empty() {
            return;
        }
        // Traffic-weighted choice of masked types keeps the planted catalog
        // gaps observable in the click logs of busy locales.
        let weights: Vec<f64> = eligible.iter().map(|&p| self.zipf_weights[p]).collect();
        let sampler = CategoricalSampler::new(&weights);
        let mut chosen = BTreeSet::new();
        let mut guard = 0;
        while chosen.len() < n_masked.min(eligible.len()) {
            chosen.insert(eligible[sampler.sample(rng)]);
            guard += 1;
            if guard > 100_000 {
                break;
            }
        }
        let max_masked_locales = (self.spec.n_locales / 3).max(1);
        for &pt in &chosen {
            let subset_size = rng::range_usize(rng, 1, max_masked_locales)
                .min(self.spec.n_locales - 1);
            let mut locales: Vec<u32> = (0..self.spec.n_locales as u32).collect();
            rng::shuffle(rng, &mut locales);
            for &l in locales.iter().take(subset_size) {
                self.masked.insert((l, pt as u32));
            }
        }
    }

    fn plant_flips(
        &self,
        rng: &mut Rng,
        templates: &mut [Template],
    ) -> Result<(), SynthError> {
        let total = templates.len();
        let n_flips = (self.spec.flip_fraction * total as f64).round() as usize;
        if n_flips == 0 || self.spec.n_locales < 2 || self.spec.n_pts < 2 {
            return Ok(());
        }
        let mut indices: Vec<usize> = (0..total).collect();
        rng::shuffle(rng, &mut indices);
        let mut planted = 0;
        let mut cursor = 0;
        let mut guard = 0;
        while planted < n_flips {
            guard += 1;
            if guard > 1_000_000 {
                return Err(SynthError::InvalidSpec(
                    "could not place dialectal flips under the mask constraints".into(),
                ));
            }
            if cursor >= indices.len() {
                return Err(SynthError::InvalidSpec(
                    "not enough templates to plant dialectal flips".into(),
                ));
            }
            let t = indices[cursor];
            let base = templates[t].base_pt;
            let mut ok = false;
            for _attempt in 0..200 {
                let mut flip_set: BTreeSet<LocaleId> = (0..self.spec.n_locales as u32)
                    .filter(|_| rng::unit_f64(rng) < FLIP_LOCALE_PROB)
                    .map(LocaleId)
                    .collect();
                if flip_set.is_empty() {
                    flip_set.insert(LocaleId(
                        rng::bounded(rng, self.spec.n_locales as u64) as u32
                    ));
                }
                if flip_set.len() == self.spec.n_locales {
                    let drop = *flip_set.iter().next().unwrap();
                    flip_set.remove(&drop);
                }
                // The flipped meaning must exist in every flipped locale's
                // catalog, and at least one non-flipped locale must still
                // carry the base meaning.
                let flip_pt = ProductTypeId(rng::bounded(rng, self.spec.n_pts as u64) as u32);
                if flip_pt == base {
                    continue;
                }
                let flip_ok = flip_set
                    .iter()
                    .all(|l| !self.masked.contains(&(l.0, flip_pt.0)));
                let base_visible = (0..self.spec.n_locales as u32)
                    .map(LocaleId)
                    .any(|l| !flip_set.contains(&l) && !self.masked.contains(&(l.0, base.0)));
                if flip_ok && base_visible {
                    templates[t].flip_locales = flip_set;
                    templates[t].flip_pt = Some(flip_pt);
                    ok = true;
                    break;
                }
            }
            if ok {
                planted += 1;
            }
            cursor += 1;
        }
        Ok(())
    }
}

/// Generates a world deterministically from its spec.
pub fn generate(spec: &WorldSpec) -> Result<World, SynthError> {
    spec.validate()?;

    let mut catalog = Catalog::new();
    for l in 0..spec.n_locales {
        catalog
            .locales
            .intern(&locale_code(l))
            .expect("fresh registry");
    }
    for p in 0..spec.n_pts {
        catalog.pts.intern(&pt_name(p)).expect("fresh registry");
    }
    for p in 0..spec.n_pts {
        for j in 0..spec.n_items_per_pt {
            let index = (p * spec.n_items_per_pt + j) as u64;
            catalog
                .register_item(index, ProductTypeId(p as u32))
                .expect("fresh item");
        }
    }
    catalog.freeze();

    let mut structure_rng = rng::substream(spec.seed, 1);
    let vocab = gen_vocab(&mut structure_rng, spec.vocab_size);
    let pool_len = spec.n_pts * spec.terms_per_pt;
    let stopwords: &[String] = &vocab[pool_len..];

    let zipf_weights: Vec<f64> = (0..spec.n_pts)
        .map(|k| ((k + 1) as f64).powf(-spec.zipf_exponent))
        .collect();

    let mut planter = Planter {
        spec,
        zipf_weights: zipf_weights.clone(),
        masked: BTreeSet::new(),
    };
    planter.plant_masks(&mut structure_rng);

    // Query templates: 1-3 terms from the type's disjoint pool, optionally
    // one shared stopword, globally unique surface strings.
    let mut templates = Vec::with_capacity(spec.n_pts * spec.templates_per_pt);
    let mut seen = HashSet::new();
    for p in 0..spec.n_pts {
        let pool = &vocab[p * spec.terms_per_pt..(p + 1) * spec.terms_per_pt];
        for _ in 0..spec.templates_per_pt {
            let mut guard = 0;
            let text = loop {
                guard += 1;
                let n_terms = rng::range_usize(&mut structure_rng, 1, 3.min(pool.len()));
                let mut picks: Vec<usize> = Vec::with_capacity(n_terms);
                while picks.len() < n_terms {
                    let i = rng::range_usize(&mut structure_rng, 0, pool.len() - 1);
                    if !picks.contains(&i) {
                        picks.push(i);
                    }
                }
                let mut words: Vec<&str> = picks.iter().map(|&i| pool[i].as_str()).collect();
                if !stopwords.is_empty() && rng::unit_f64(&mut structure_rng) < STOPWORD_PROB {
                    let s = &stopwords
                        [rng::range_usize(&mut structure_rng, 0, stopwords.len() - 1)];
                    let at = rng::range_usize(&mut structure_rng, 0, words.len());
                    words.insert(at, s);
                }
                let text = words.join(" ");
                if seen.insert(text.clone()) {
                    break text;
                }
                if guard > 10_000 {
                    return Err(SynthError::InvalidSpec(format!(
                        "cannot build {} unique templates for pt {p}; raise terms_per_pt",
                        spec.templates_per_pt
                    )));
                }
            };
            templates.push(Template {
                text,
                base_pt: ProductTypeId(p as u32),
                flip_locales: BTreeSet::new(),
                flip_pt: None,
            });
        }
    }

    planter.plant_flips(&mut structure_rng, &mut templates)?;
    let masked = planter.masked;

    let mut world = World {
        spec: spec.clone(),
        catalog,
        clicklog: Vec::new(),
        gold: Dataset::new(Vec::new(), Split::Test, Provenance::SyntheticGold, 0),
        flip_manifest: Vec::new(),
        templates,
        masked,
        pt_query_mass: vec![0; spec.n_pts],
    };

    // Per-locale catalog views: all items except those of masked types.
    let locale_items: Vec<Vec<u64>> = (0..spec.n_locales as u32)
        .map(|l| {
            (0..spec.n_pts as u32)
                .filter(|&p| !world.masked.contains(&(l, p)))
                .flat_map(|p| {
                    let base = p as u64 * spec.n_items_per_pt as u64;
                    base..base + spec.n_items_per_pt as u64
                })
                .collect()
        })
        .collect();

    let template_weights: Vec<f64> = world
        .templates
        .iter()
        .map(|t| zipf_weights[t.base_pt.0 as usize] / spec.templates_per_pt as f64)
        .collect();
    let template_sampler = CategoricalSampler::new(&template_weights);

    let volumes = spec.volumes();
    let mut records = Vec::new();
    for l in 0..spec.n_locales {
        let locale = LocaleId(l as u32);
        let mut click_rng = rng::substream(spec.seed, 1000 + l as u64);
        let mut v = template_sampler.multinomial(&mut click_rng, volumes[l]);
        for (t, tpl) in world.templates.iter().enumerate() {
            if tpl.is_dialectal() {
                v[t] = v[t].max(FLIP_MIN_EVENTS);
            }
        }
        for (t, tpl) in world.templates.iter().enumerate() {
            if v[t] == 0 {
                continue;
            }
            let pt = world.effective_pt(tpl, locale);
            world.pt_query_mass[pt.0 as usize] += v[t];
            let total_clicks = v[t] * spec.clicks_per_query;
            let intended_base = pt.0 as u64 * spec.n_items_per_pt as u64;
            let items = &locale_items[l];
            let mut per_item: BTreeMap<u64, u64> = BTreeMap::new();
            for _ in 0..total_clicks {
                let item = if spec.click_noise > 0.0
                    && rng::unit_f64(&mut click_rng) < spec.click_noise
                {
                    items[rng::range_usize(&mut click_rng, 0, items.len() - 1)]
                } else {
                    intended_base + rng::bounded(&mut click_rng, spec.n_items_per_pt as u64)
                };
                *per_item.entry(item).or_default() += 1;
            }
            for (item_index, clicks) in per_item {
                let pt_of_item = world
                    .catalog
                    .item_pt(item_index)
                    .expect("generated item is registered");
                records.push(ClickRecord {
                    locale,
                    query: tpl.text.clone(),
                    item: crate::data::ItemId {
                        index: item_index,
                        pt: pt_of_item,
                    },
                    clicks,
                    impressions: 0,
                });
            }
        }
    }
    world.clicklog = records;

    // Gold labels cover every (template, locale) pair with the effective
    // intended type; the flip manifest is the dialectal subset.
    let mut gold = Vec::with_capacity(spec.n_locales * world.templates.len());
    for l in 0..spec.n_locales as u32 {
        let locale = LocaleId(l);
        for tpl in &world.templates {
            let pt = world.effective_pt(tpl, locale);
            gold.push(
                LabeledExample::new(locale, tpl.text.clone(), BTreeSet::from([pt]))
                    .expect("gold label set non-empty"),
            );
        }
    }
    world.gold = Dataset::new(gold, Split::Test, Provenance::SyntheticGold, spec.n_locales);

    let mut manifest = Vec::new();
    for tpl in &world.templates {
        if !tpl.is_dialectal() {
            continue;
        }
        for &locale in &tpl.flip_locales {
            manifest.push(FlipRecord {
                query: tpl.text.clone(),
                locale,
                pt: world.effective_pt(tpl, locale),
            });
        }
    }
    world.flip_manifest = manifest;

    Ok(world)
}

/// Datasets produced by [`split_world`].
#[derive(Debug, Clone)]
pub struct WorldSplits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub train_clicklog: Vec<ClickRecord>,
}

/// Splits a world by query template so no template crosses splits.
pub fn split_world(
    world: &World,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<WorldSplits, SynthError> {
    let fr = [fractions.0, fractions.1, fractions.2];
    let sum: f64 = fr.iter().sum();
    if fr.iter().any(|&f| f <= 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(SynthError::BadFractions(fr));
    }
    let n = world.templates.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::substream(seed, 42);
    rng::shuffle(&mut rng, &mut order);

    // Cumulative-floor partition: exact counts for exact fractions.
    let c1 = (fr[0] * n as f64).floor() as usize;
    let c2 = ((fr[0] + fr[1]) * n as f64).floor() as usize;
    let mut assignment = vec![Split::Test; n];
    for (rank, &t) in order.iter().enumerate() {
        assignment[t] = if rank < c1 {
            Split::Train
        } else if rank < c2 {
            Split::Validation
        } else {
            Split::Test
        };
    }

    let by_text: HashMap<&str, usize> = world
        .templates
        .iter()
        .enumerate()
        .map(|(i, t)| (t.text.as_str(), i))
        .collect();
    let split_of = |query: &str| assignment[by_text[query]];

    let n_locales = world.catalog.locales.len();
    let collect = |want: Split| -> Dataset {
        let examples: Vec<LabeledExample> = world
            .gold
            .examples()
            .iter()
            .filter(|ex| split_of(&ex.query) == want)
            .cloned()
            .collect();
        Dataset::new(examples, want, Provenance::SyntheticGold, n_locales)
    };
    let train = collect(Split::Train);
    let validation = collect(Split::Validation);
    let test = collect(Split::Test);
    for (ds, name) in [
        (&train, "train"),
        (&validation, "validation"),
        (&test, "test"),
    ] {
        if ds.is_empty() {
            return Err(SynthError::EmptySplit(name));
        }
    }

    let train_clicklog: Vec<ClickRecord> = world
        .clicklog
        .iter()
        .filter(|rec| split_of(&rec.query) == Split::Train)
        .cloned()
        .collect();

    Ok(WorldSplits {
        train,
        validation,
        test,
        train_clicklog,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> WorldSpec {
        WorldSpec {
            n_locales: 4,
            n_pts: 8,
            n_items_per_pt: 3,
            zipf_exponent: 1.1,
            hi_re_fraction: 0.5,
            size_ratio: 10.0,
            vocab_size: 80,
            terms_per_pt: 5,
            templates_per_pt: 4,
            flip_fraction: 0.1,
            selection_fraction: 0.2,
            click_noise: 0.1,
            clicks_per_query: 10,
            queries_per_locale: Vec::new(),
            base_queries: 30,
            seed: 99,
        }
    }

    #[test]
    fn single_locale_single_pt_no_noise() {
        let spec = WorldSpec {
            n_locales: 1,
            n_pts: 1,
            n_items_per_pt: 2,
            zipf_exponent: 1.0,
            hi_re_fraction: 0.0,
            size_ratio: 1.0,
            vocab_size: 10,
            terms_per_pt: 4,
            templates_per_pt: 3,
            flip_fraction: 0.0,
            selection_fraction: 0.0,
            click_noise: 0.0,
            clicks_per_query: 5,
            queries_per_locale: vec![50],
            base_queries: 1,
            seed: 1,
        };
        let world = generate(&spec).unwrap();
        assert!(!world.clicklog.is_empty());
        for rec in &world.clicklog {
            assert_eq!(rec.item.pt, ProductTypeId(0));
        }
    }

    #[test]
    fn vocab_too_small_is_an_error() {
        let mut spec = tiny_spec();
        spec.vocab_size = spec.n_pts * spec.terms_per_pt - 1;
        assert!(matches!(
            generate(&spec),
            Err(SynthError::VocabTooSmall { .. })
        ));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = tiny_spec();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.clicklog, b.clicklog);
        assert_eq!(a.gold.examples(), b.gold.examples());
        assert_eq!(a.flip_manifest, b.flip_manifest);
        assert_eq!(a.masked, b.masked);
        assert_eq!(a.pt_query_mass, b.pt_query_mass);
    }

    #[test]
    fn masked_pairs_have_zero_clicks() {
        let world = generate(&tiny_spec()).unwrap();
        assert!(!world.masked.is_empty(), "spec plants selection masks");
        for rec in &world.clicklog {
            assert!(
                !world.masked.contains(&(rec.locale.0, rec.item.pt.0)),
                "masked (locale {}, pt {}) received clicks",
                rec.locale.0,
                rec.item.pt.0
            );
        }
    }

    #[test]
    fn gold_labels_exist_in_locale_catalog() {
        let world = generate(&tiny_spec()).unwrap();
        for ex in world.gold.examples() {
            for &pt in &ex.labels {
                assert!(!world.masked.contains(&(ex.locale.0, pt.0)));
            }
        }
    }

    #[test]
    fn flip_manifest_is_subset_of_gold() {
        let world = generate(&tiny_spec()).unwrap();
        assert!(!world.flip_manifest.is_empty(), "spec plants flips");
        let gold: HashSet<(LocaleId, &str, ProductTypeId)> = world
            .gold
            .examples()
            .iter()
            .flat_map(|ex| {
                ex.labels
                    .iter()
                    .map(move |&pt| (ex.locale, ex.query.as_str(), pt))
            })
            .collect();
        for rec in &world.flip_manifest {
            assert!(gold.contains(&(rec.locale, rec.query.as_str(), rec.pt)));
        }
    }

    #[test]
    fn flip_queries_have_min_volume_everywhere() {
        let world = generate(&tiny_spec()).unwrap();
        let spec = &world.spec;
        for tpl in world.templates.iter().filter(|t| t.is_dialectal()) {
            for l in 0..spec.n_locales as u32 {
                let total: u64 = world
                    .clicklog
                    .iter()
                    .filter(|r| r.locale.0 == l && r.query == tpl.text)
                    .map(|r| r.clicks)
                    .sum();
                assert!(
                    total >= FLIP_MIN_EVENTS * spec.clicks_per_query,
                    "template {:?} locale {l} has only {total} clicks",
                    tpl.text
                );
            }
        }
    }

    #[test]
    fn no_planted_differences_means_identical_majorities() {
        let mut spec = tiny_spec();
        spec.flip_fraction = 0.0;
        spec.selection_fraction = 0.0;
        spec.click_noise = 0.0;
        spec.queries_per_locale = vec![200; spec.n_locales];
        let world = generate(&spec).unwrap();
        // With no flips, masks, or noise, every click of a template lands on
        // its base type in every locale.
        let by_text: HashMap<&str, &Template> = world
            .templates
            .iter()
            .map(|t| (t.text.as_str(), t))
            .collect();
        for rec in &world.clicklog {
            assert_eq!(rec.item.pt, by_text[rec.query.as_str()].base_pt);
        }
    }

    #[test]
    fn split_fractions_partition_templates() {
        let world = generate(&tiny_spec()).unwrap();
        let splits = split_world(&world, (0.5, 0.25, 0.25), 3).unwrap();
        let texts = |ds: &Dataset| -> HashSet<String> {
            ds.examples().iter().map(|e| e.query.clone()).collect()
        };
        let train = texts(&splits.train);
        let val = texts(&splits.validation);
        let test = texts(&splits.test);
        assert!(train.is_disjoint(&val));
        assert!(train.is_disjoint(&test));
        assert!(val.is_disjoint(&test));
        assert_eq!(
            train.len() + val.len() + test.len(),
            world.templates.len()
        );
        // 32 templates at (0.5, 0.25, 0.25).
        assert_eq!(train.len(), 16);
        assert_eq!(val.len(), 8);
        assert_eq!(test.len(), 8);
        for rec in &splits.train_clicklog {
            assert!(train.contains(&rec.query));
        }
    }

    #[test]
    fn split_is_deterministic_under_seed() {
        let world = generate(&tiny_spec()).unwrap();
        let a = split_world(&world, (0.8, 0.1, 0.1), 5).unwrap();
        let b = split_world(&world, (0.8, 0.1, 0.1), 5).unwrap();
        assert_eq!(a.train.examples(), b.train.examples());
        assert_eq!(a.test.examples(), b.test.examples());
    }

    #[test]
    fn bad_fractions_are_rejected() {
        let world = generate(&tiny_spec()).unwrap();
        assert!(matches!(
            split_world(&world, (0.8, 0.1, 0.2), 5),
            Err(SynthError::BadFractions(_))
        ));
        assert!(matches!(
            split_world(&world, (1.0, -0.5, 0.5), 5),
            Err(SynthError::BadFractions(_))
        ));
    }
}
