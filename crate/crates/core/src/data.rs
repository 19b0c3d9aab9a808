//! Identifier registries, catalogs, click-log and dataset containers, and
//! their on-disk formats. Every other module speaks these types.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// Leading comment line that versions every file format we read or write.
pub const FORMAT_HEADER: &str = "#localeq-format v1";

/// Column header of the click-log TSV format.
pub const CLICKLOG_COLUMNS: &str = "locale_code\tquery\titem_index\tpt_name\tclicks\timpressions";

/// Dense index of a locale within a frozen [`LocaleRegistry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LocaleId(pub u32);

/// Dense index of a product type within a frozen [`PtRegistry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProductTypeId(pub u32);

impl fmt::Display for LocaleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for ProductTypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An item together with the single product type it maps to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ItemId {
    pub index: u64,
    pub pt: ProductTypeId,
}

/// One aggregated (locale, query, item) click row.
///
/// `impressions == 0` means unknown; otherwise `impressions >= clicks`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClickRecord {
    pub locale: LocaleId,
    pub query: String,
    pub item: ItemId,
    pub clicks: u64,
    pub impressions: u64,
}

/// String-to-dense-index registry with freeze semantics.
///
/// Indices are assigned in insertion order, so two loads of the same file
/// produce identical registries. After `freeze`, lookups of unknown names
/// fail instead of extending the registry.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    names: Vec<String>,
    by_name: HashMap<String, u32>,
    frozen: bool,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut reg = Self::new();
        for name in names {
            reg.intern(name.as_ref())?;
        }
        Ok(reg)
    }

    /// Index of `name`, inserting it when the registry is not frozen.
    pub fn intern(&mut self, name: &str) -> Result<u32, DataError> {
        if let Some(&idx) = self.by_name.get(name) {
            return Ok(idx);
        }
        if self.frozen {
            return Err(DataError::UnknownName {
                name: name.to_string(),
            });
        }
        let idx = u32::try_from(self.names.len()).expect("registry exceeds u32 index space");
        self.names.push(name.to_string());
        self.by_name.insert(name.to_string(), idx);
        Ok(idx)
    }

    pub fn lookup(&self, name: &str) -> Option<u32> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, idx: u32) -> &str {
        &self.names[idx as usize]
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Locale-code registry (`"US"`, `"PL"`, ...).
#[derive(Debug, Clone, Default)]
pub struct LocaleRegistry(Registry);

impl LocaleRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_codes<I, S>(codes: I) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Ok(Self(Registry::from_names(codes)?))
    }

    pub fn intern(&mut self, code: &str) -> Result<LocaleId, DataError> {
        self.0.intern(code).map(LocaleId)
    }

    pub fn lookup(&self, code: &str) -> Option<LocaleId> {
        self.0.lookup(code).map(LocaleId)
    }

    pub fn code(&self, id: LocaleId) -> &str {
        self.0.name(id.0)
    }

    pub fn freeze(&mut self) {
        self.0.freeze()
    }

    pub fn is_frozen(&self) -> bool {
        self.0.is_frozen()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn codes(&self) -> &[String] {
        self.0.names()
    }

    pub fn ids(&self) -> impl Iterator<Item = LocaleId> {
        (0..self.len() as u32).map(LocaleId)
    }
}

/// Product-type name registry.
#[derive(Debug, Clone, Default)]
pub struct PtRegistry(Registry);

impl PtRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Ok(Self(Registry::from_names(names)?))
    }

    pub fn intern(&mut self, name: &str) -> Result<ProductTypeId, DataError> {
        self.0.intern(name).map(ProductTypeId)
    }

    pub fn lookup(&self, name: &str) -> Option<ProductTypeId> {
        self.0.lookup(name).map(ProductTypeId)
    }

    pub fn name(&self, id: ProductTypeId) -> &str {
        self.0.name(id.0)
    }

    pub fn freeze(&mut self) {
        self.0.freeze()
    }

    pub fn is_frozen(&self) -> bool {
        self.0.is_frozen()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> &[String] {
        self.0.names()
    }

    pub fn ids(&self) -> impl Iterator<Item = ProductTypeId> {
        (0..self.len() as u32).map(ProductTypeId)
    }
}

/// Locale and product-type registries plus the item-to-product-type map.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    pub locales: LocaleRegistry,
    pub pts: PtRegistry,
    item_pt: HashMap<u64, ProductTypeId>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// A catalog over existing registries with an empty item map.
    pub fn from_registries(locales: LocaleRegistry, pts: PtRegistry) -> Self {
        Self {
            locales,
            pts,
            item_pt: HashMap::new(),
        }
    }

    /// Registers an item, enforcing that every item maps to exactly one
    /// product type.
    pub fn register_item(&mut self, index: u64, pt: ProductTypeId) -> Result<ItemId, DataError> {
        match self.item_pt.get(&index) {
            Some(&existing) if existing != pt => Err(DataError::ItemPtConflict { item: index }),
            Some(_) => Ok(ItemId { index, pt }),
            None => {
                self.item_pt.insert(index, pt);
                Ok(ItemId { index, pt })
            }
        }
    }

    pub fn item_pt(&self, index: u64) -> Option<ProductTypeId> {
        self.item_pt.get(&index).copied()
    }

    pub fn n_items(&self) -> usize {
        self.item_pt.len()
    }

    pub fn freeze(&mut self) {
        self.locales.freeze();
        self.pts.freeze();
    }
}

/// Dataset split membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Where a dataset's labels came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Derived,
    SyntheticGold,
    External,
}

/// A query with its gold product-type set in one locale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub locale: LocaleId,
    pub query: String,
    pub labels: BTreeSet<ProductTypeId>,
}

impl LabeledExample {
    /// Label sets must be non-empty; the set type rules out duplicates.
    pub fn new(
        locale: LocaleId,
        query: String,
        labels: BTreeSet<ProductTypeId>,
    ) -> Result<Self, DataError> {
        if labels.is_empty() {
            return Err(DataError::EmptyLabelSet { query });
        }
        Ok(Self {
            locale,
            query,
            labels,
        })
    }
}

/// Immutable collection of labeled examples with split and provenance.
#[derive(Debug, Clone)]
pub struct Dataset {
    examples: Vec<LabeledExample>,
    split: Split,
    provenance: Provenance,
    per_locale: Vec<u64>,
}

impl Dataset {
    pub fn new(
        examples: Vec<LabeledExample>,
        split: Split,
        provenance: Provenance,
        n_locales: usize,
    ) -> Self {
        let mut per_locale = vec![0u64; n_locales];
        for ex in &examples {
            let slot = ex.locale.0 as usize;
            if slot >= per_locale.len() {
                per_locale.resize(slot + 1, 0);
            }
            per_locale[slot] += 1;
        }
        Self {
            examples,
            split,
            provenance,
            per_locale,
        }
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn count_for(&self, locale: LocaleId) -> u64 {
        self.per_locale
            .get(locale.0 as usize)
            .copied()
            .unwrap_or(0)
    }

    /// Per-locale example counts, indexed by locale index.
    pub fn per_locale_counts(&self) -> &[u64] {
        &self.per_locale
    }
}

/// Splits locales into (high-resource, low-resource) buckets: the `k`
/// locales with the most training samples are high-resource, ties broken
/// by locale index ascending. Both outputs are sorted by locale index.
pub fn bucket_locales(counts: &[u64], k: usize) -> (Vec<LocaleId>, Vec<LocaleId>) {
    assert!(k >= 1, "bucket_locales requires k >= 1");
    assert!(k < counts.len(), "bucket_locales requires k < number of locales");
    let mut order: Vec<u32> = (0..counts.len() as u32).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(counts[i as usize]), i));
    let mut hi: Vec<LocaleId> = order[..k].iter().map(|&i| LocaleId(i)).collect();
    let mut lo: Vec<LocaleId> = order[k..].iter().map(|&i| LocaleId(i)).collect();
    hi.sort();
    lo.sort();
    (hi, lo)
}

fn parse_count(field: &str, line: usize, what: &str) -> Result<u64, DataError> {
    field.parse::<u64>().map_err(|_| DataError::MalformedRow {
        line,
        msg: format!("{what} is not a non-negative integer: {field:?}"),
    })
}

/// Loads a click-log TSV, extending the catalog's registries in file order.
///
/// A zero-length file parses as an empty list. Any other file must start
/// with the [`FORMAT_HEADER`] line followed by the column header.
pub fn load_clicklog(path: &Path, catalog: &mut Catalog) -> Result<Vec<ClickRecord>, DataError> {
    let raw = fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_clicklog(&raw, catalog)
}

/// Parses click-log TSV content; see [`load_clicklog`].
pub fn parse_clicklog(raw: &str, catalog: &mut Catalog) -> Result<Vec<ClickRecord>, DataError> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    let mut lines = raw.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim_end() == FORMAT_HEADER => {}
        _ => return Err(DataError::BadFormatHeader),
    }
    match lines.next() {
        Some((_, cols)) if cols.trim_end() == CLICKLOG_COLUMNS => {}
        _ => return Err(DataError::MissingColumnHeader),
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(DataError::MalformedRow {
                line: line_no,
                msg: format!("expected 6 tab-separated fields, got {}", fields.len()),
            });
        }
        let locale = catalog
            .locales
            .intern(fields[0])
            .map_err(|e| e.at_line(line_no))?;
        let query = fields[1].to_string();
        let item_index = parse_count(fields[2], line_no, "item_index")?;
        let pt = catalog
            .pts
            .intern(fields[3])
            .map_err(|e| e.at_line(line_no))?;
        let clicks = parse_count(fields[4], line_no, "clicks")?;
        let impressions = parse_count(fields[5], line_no, "impressions")?;
        if impressions != 0 && impressions < clicks {
            return Err(DataError::MalformedRow {
                line: line_no,
                msg: format!("clicks {clicks} exceed impressions {impressions}"),
            });
        }
        let item = catalog
            .register_item(item_index, pt)
            .map_err(|e| e.at_line(line_no))?;
        records.push(ClickRecord {
            locale,
            query,
            item,
            clicks,
            impressions,
        });
    }
    Ok(records)
}

/// Serializes a click log in the canonical TSV form.
pub fn clicklog_to_string(records: &[ClickRecord], catalog: &Catalog) -> Result<String, DataError> {
    let mut out = String::new();
    out.push_str(FORMAT_HEADER);
    out.push('\n');
    out.push_str(CLICKLOG_COLUMNS);
    out.push('\n');
    for rec in records {
        if rec.query.contains('\t') || rec.query.contains('\n') {
            return Err(DataError::UnserializableQuery {
                query: rec.query.clone(),
            });
        }
        out.push_str(catalog.locales.code(rec.locale));
        out.push('\t');
        out.push_str(&rec.query);
        out.push('\t');
        out.push_str(&rec.item.index.to_string());
        out.push('\t');
        out.push_str(catalog.pts.name(rec.item.pt));
        out.push('\t');
        out.push_str(&rec.clicks.to_string());
        out.push('\t');
        out.push_str(&rec.impressions.to_string());
        out.push('\n');
    }
    Ok(out)
}

pub fn save_clicklog(
    records: &[ClickRecord],
    catalog: &Catalog,
    path: &Path,
) -> Result<(), DataError> {
    let body = clicklog_to_string(records, catalog)?;
    fs::write(path, body).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

#[derive(Serialize)]
struct ExampleLine<'a> {
    locale: &'a str,
    query: &'a str,
    labels: Vec<&'a str>,
}

#[derive(Deserialize)]
struct ExampleLineOwned {
    locale: String,
    query: String,
    labels: Vec<String>,
}

/// Loads a labeled dataset from JSONL, one object per line with keys
/// `locale`, `query`, `labels`.
pub fn load_dataset(
    path: &Path,
    catalog: &mut Catalog,
    split: Split,
    provenance: Provenance,
) -> Result<Dataset, DataError> {
    let raw = fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_dataset(&raw, catalog, split, provenance)
}

pub fn parse_dataset(
    raw: &str,
    catalog: &mut Catalog,
    split: Split,
    provenance: Provenance,
) -> Result<Dataset, DataError> {
    let mut examples = Vec::new();
    if !raw.is_empty() {
        let mut lines = raw.lines().enumerate();
        match lines.next() {
            Some((_, first)) if first.trim_end() == FORMAT_HEADER => {}
            _ => return Err(DataError::BadFormatHeader),
        }
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ExampleLineOwned =
                serde_json::from_str(line).map_err(|e| DataError::MalformedRow {
                    line: line_no,
                    msg: e.to_string(),
                })?;
            let locale = catalog
                .locales
                .intern(&parsed.locale)
                .map_err(|e| e.at_line(line_no))?;
            let mut labels = BTreeSet::new();
            for name in &parsed.labels {
                labels.insert(catalog.pts.intern(name).map_err(|e| e.at_line(line_no))?);
            }
            examples.push(
                LabeledExample::new(locale, parsed.query, labels)
                    .map_err(|e| e.at_line(line_no))?,
            );
        }
    }
    Ok(Dataset::new(
        examples,
        split,
        provenance,
        catalog.locales.len(),
    ))
}

pub fn save_dataset(dataset: &Dataset, catalog: &Catalog, path: &Path) -> Result<(), DataError> {
    let file = fs::File::create(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| DataError::Io {
        path: path.display().to_string(),
        source: e,
    };
    writeln!(w, "{FORMAT_HEADER}").map_err(io_err)?;
    for ex in dataset.examples() {
        let line = ExampleLine {
            locale: catalog.locales.code(ex.locale),
            query: &ex.query,
            labels: ex.labels.iter().map(|&pt| catalog.pts.name(pt)).collect(),
        };
        let json = serde_json::to_string(&line).expect("dataset line serialization");
        writeln!(w, "{json}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
