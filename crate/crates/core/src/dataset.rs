//! Tabular ingestion: schema, feature vocabulary, discretization and the
//! pool/train/test splits.
//!
//! A CSV header carries the schema inline as `name:kind[:bins]` per column,
//! with kinds `cat`, `mcat`, `num`, `label`, `ts` and `id`. Multi-valued cells
//! separate their values with `|`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RimError};

pub type FeatureId = u32;
pub type SampleId = u64;

/// Separator between values of a multi-categorical cell.
pub const MULTI_VALUE_SEPARATOR: char = '|';

/// Token standing for a missing value; every field owns its own id for it.
pub const MISSING_TOKEN: &str = "";

pub const DEFAULT_NUMERIC_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Categorical,
    MultiCategorical,
    Numeric { bins: usize },
    Label,
    Timestamp,
    SampleId,
}

impl FieldKind {
    pub fn is_feature(self) -> bool {
        matches!(
            self,
            FieldKind::Categorical | FieldKind::MultiCategorical | FieldKind::Numeric { .. }
        )
    }

    fn tag(self) -> &'static str {
        match self {
            FieldKind::Categorical => "cat",
            FieldKind::MultiCategorical => "mcat",
            FieldKind::Numeric { .. } => "num",
            FieldKind::Label => "label",
            FieldKind::Timestamp => "ts",
            FieldKind::SampleId => "id",
        }
    }

    fn parse(tag: &str, bins: Option<usize>) -> Result<Self> {
        let kind = match tag {
            "cat" => FieldKind::Categorical,
            "mcat" => FieldKind::MultiCategorical,
            "num" => FieldKind::Numeric {
                bins: bins.unwrap_or(DEFAULT_NUMERIC_BINS),
            },
            "label" => FieldKind::Label,
            "ts" => FieldKind::Timestamp,
            "id" => FieldKind::SampleId,
            other => return Err(RimError::Schema(format!("unknown field kind `{other}`"))),
        };
        if let FieldKind::Numeric { bins } = kind {
            if bins == 0 {
                return Err(RimError::Schema("numeric bin count must be positive".into()));
            }
        } else if bins.is_some() {
            return Err(RimError::Schema(format!(
                "bin count given for non-numeric kind `{tag}`"
            )));
        }
        Ok(kind)
    }
}

/// One column of the input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawField", into = "RawField")]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
}

#[derive(Serialize, Deserialize)]
struct RawField {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bins: Option<usize>,
}

impl TryFrom<RawField> for FieldSpec {
    type Error = RimError;

    fn try_from(raw: RawField) -> Result<Self> {
        Ok(FieldSpec {
            kind: FieldKind::parse(&raw.kind, raw.bins)?,
            name: raw.name,
        })
    }
}

impl From<FieldSpec> for RawField {
    fn from(f: FieldSpec) -> Self {
        let bins = match f.kind {
            FieldKind::Numeric { bins } => Some(bins),
            _ => None,
        };
        RawField {
            name: f.name,
            kind: f.kind.tag().to_string(),
            bins,
        }
    }
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, kind: FieldKind) -> Self {
        FieldSpec {
            name: name.into(),
            kind,
        }
    }

    /// Parses one header cell of the form `name:kind[:bins]`.
    pub fn parse_header_cell(cell: &str) -> Result<Self> {
        let mut parts = cell.trim().split(':');
        let name = parts.next().unwrap_or_default().to_string();
        let kind = parts
            .next()
            .ok_or_else(|| RimError::Schema(format!("header cell `{cell}` has no kind")))?;
        let bins = match parts.next() {
            Some(b) => Some(
                b.parse::<usize>()
                    .map_err(|_| RimError::Schema(format!("bad bin count in `{cell}`")))?,
            ),
            None => None,
        };
        if parts.next().is_some() || name.is_empty() {
            return Err(RimError::Schema(format!("malformed header cell `{cell}`")));
        }
        Ok(FieldSpec {
            name,
            kind: FieldKind::parse(kind, bins)?,
        })
    }

    pub fn header_cell(&self) -> String {
        match self.kind {
            FieldKind::Numeric { bins } => format!("{}:num:{bins}", self.name),
            k => format!("{}:{}", self.name, k.tag()),
        }
    }
}

/// Ordered column descriptors plus the positions of the special columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaDoc", into = "SchemaDoc")]
pub struct Schema {
    fields: Vec<FieldSpec>,
    feature_columns: Vec<usize>,
    label_column: usize,
    timestamp_column: Option<usize>,
    id_column: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct SchemaDoc {
    fields: Vec<FieldSpec>,
}

impl TryFrom<SchemaDoc> for Schema {
    type Error = RimError;
    fn try_from(doc: SchemaDoc) -> Result<Self> {
        Schema::new(doc.fields)
    }
}

impl From<Schema> for SchemaDoc {
    fn from(s: Schema) -> Self {
        SchemaDoc { fields: s.fields }
    }
}

impl Schema {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self> {
        let mut label = None;
        let mut ts = None;
        let mut id = None;
        let mut features = Vec::new();
        for (col, f) in fields.iter().enumerate() {
            let slot = match f.kind {
                FieldKind::Label => &mut label,
                FieldKind::Timestamp => &mut ts,
                FieldKind::SampleId => &mut id,
                _ => {
                    features.push(col);
                    continue;
                }
            };
            if slot.replace(col).is_some() {
                return Err(RimError::Schema(format!("more than one `{}` column", f.kind.tag())));
            }
        }
        let label_column = label.ok_or_else(|| RimError::Schema("no label column".into()))?;
        if features.is_empty() {
            return Err(RimError::Schema("at least one feature column is required".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &fields {
            if !seen.insert(f.name.as_str()) {
                return Err(RimError::Schema(format!("duplicate column name `{}`", f.name)));
            }
        }
        Ok(Schema {
            fields,
            feature_columns: features,
            label_column,
            timestamp_column: ts,
            id_column: id,
        })
    }

    pub fn from_header<S: AsRef<str>>(cells: &[S]) -> Result<Self> {
        let fields = cells
            .iter()
            .map(|c| FieldSpec::parse_header_cell(c.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Schema::new(fields)
    }

    /// Reads a JSON sidecar: `{"fields": [{"name": .., "kind": .., "bins": ..}, ..]}`.
    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| RimError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| RimError::Schema(format!("{}: {e}", path.display())))
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    /// Number of feature fields (F).
    pub fn num_features(&self) -> usize {
        self.feature_columns.len()
    }

    /// Spec of the `i`-th feature field.
    pub fn feature(&self, i: usize) -> &FieldSpec {
        &self.fields[self.feature_columns[i]]
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        (0..self.num_features()).find(|&i| self.feature(i).name == name)
    }

    pub fn has_timestamp(&self) -> bool {
        self.timestamp_column.is_some()
    }
}

/// Bijection between `(feature field, raw token)` and dense feature ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureVocab {
    tokens: Vec<(usize, String)>,
    ids: Vec<HashMap<String, FeatureId>>,
}

impl FeatureVocab {
    pub fn new(num_fields: usize) -> Self {
        FeatureVocab {
            tokens: Vec::new(),
            ids: vec![HashMap::new(); num_fields],
        }
    }

    /// Total number of registered features (V).
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, field: usize, token: &str) -> Option<FeatureId> {
        self.ids.get(field)?.get(token).copied()
    }

    pub fn token(&self, id: FeatureId) -> Option<(usize, &str)> {
        self.tokens.get(id as usize).map(|(f, t)| (*f, t.as_str()))
    }

    pub fn field_of(&self, id: FeatureId) -> Option<usize> {
        self.tokens.get(id as usize).map(|(f, _)| *f)
    }

    /// Returns the id for `(field, token)`, registering it if unseen.
    pub fn intern(&mut self, field: usize, token: &str) -> FeatureId {
        if let Some(id) = self.id(field, token) {
            return id;
        }
        let id = self.tokens.len() as FeatureId;
        self.tokens.push((field, token.to_string()));
        self.ids[field].insert(token.to_string(), id);
        id
    }

    /// All ids registered for one field, ascending.
    pub fn field_ids(&self, field: usize) -> Vec<FeatureId> {
        let mut ids: Vec<_> = self.ids[field].values().copied().collect();
        ids.sort_unstable();
        ids
    }
}

/// Content of one feature field in one row.
#[derive(Debug, Clone, PartialEq)]
pub enum Slot {
    /// Single-valued categorical feature.
    One(FeatureId),
    /// Multi-valued categorical feature: sorted, no duplicates.
    Many(Vec<FeatureId>),
    /// Numeric value not yet discretized (`None` when missing).
    Raw(Option<f64>),
}

impl Slot {
    /// Builds a multi-value slot with set semantics.
    pub fn many(mut ids: Vec<FeatureId>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        Slot::Many(ids)
    }

    /// Feature ids carried by the slot; empty for raw numerics.
    pub fn ids(&self) -> &[FeatureId] {
        match self {
            Slot::One(id) => std::slice::from_ref(id),
            Slot::Many(ids) => ids,
            Slot::Raw(_) => &[],
        }
    }

    pub fn is_raw(&self) -> bool {
        matches!(self, Slot::Raw(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: SampleId,
    pub slots: Vec<Slot>,
    /// Raw label as read from the file.
    pub label: f64,
    /// Discretized label, used for the label embedding lookup.
    pub class: Option<u32>,
    pub timestamp: Option<i64>,
}

/// Equal-frequency bin boundaries fitted on one numeric column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericBinning {
    /// Strictly increasing lower edges of bins 1..; bin 0 is everything below.
    pub boundaries: Vec<f64>,
}

impl NumericBinning {
    /// Fits up to `bins` equal-frequency bins.
    pub fn fit(values: &[f64], bins: usize) -> Self {
        let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let distinct = sorted.windows(2).filter(|w| w[0] != w[1]).count() + usize::from(n > 0);
        if distinct <= 1 {
            warn!("numeric column has {distinct} distinct value(s); using a single bin");
            return NumericBinning { boundaries: Vec::new() };
        }
        let b = if bins > distinct {
            warn!("bin count {bins} exceeds {distinct} distinct values; reducing");
            distinct
        } else {
            bins
        };
        let mut boundaries: Vec<f64> = Vec::with_capacity(b.saturating_sub(1));
        for j in 1..b {
            let edge = sorted[j * n / b];
            let last = boundaries.last().copied().unwrap_or(sorted[0]);
            if edge > last {
                boundaries.push(edge);
            }
        }
        NumericBinning { boundaries }
    }

    pub fn num_bins(&self) -> usize {
        self.boundaries.len() + 1
    }

    /// Bin of `value`; values outside the fitted range clamp to the edge bins.
    pub fn bin(&self, value: f64) -> usize {
        self.boundaries.partition_point(|&edge| edge <= value)
    }
}

/// Equal-width label classes over the observed label range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelBinning {
    pub min: f64,
    pub max: f64,
    pub classes: u32,
}

impl LabelBinning {
    pub fn fit(labels: impl IntoIterator<Item = f64>, classes: u32) -> Result<Self> {
        if classes < 2 {
            return Err(RimError::Config(format!(
                "label class count must be at least 2, got {classes}"
            )));
        }
        let (min, max) = labels
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
        if !min.is_finite() {
            return Err(RimError::Data("no labels to discretize".into()));
        }
        Ok(LabelBinning { min, max, classes })
    }

    pub fn class(&self, y: f64) -> u32 {
        if self.max <= self.min {
            return 0;
        }
        let pos = (y - self.min) / (self.max - self.min) * f64::from(self.classes);
        (pos.floor().max(0.0) as u32).min(self.classes - 1)
    }
}

/// An in-memory table. Schema and vocabulary are shared between the tables
/// produced by splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: Arc<Schema>,
    vocab: Arc<FeatureVocab>,
    samples: Vec<Sample>,
    numeric_bins: BTreeMap<usize, NumericBinning>,
    label_binning: Option<LabelBinning>,
}

impl Table {
    pub fn new(schema: Schema, vocab: FeatureVocab, samples: Vec<Sample>) -> Result<Self> {
        let table = Table {
            schema: Arc::new(schema),
            vocab: Arc::new(vocab),
            samples,
            numeric_bins: BTreeMap::new(),
            label_binning: None,
        };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        let f = self.schema.num_features();
        let v = self.vocab.len() as FeatureId;
        let mut ids = std::collections::HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if !ids.insert(s.id) {
                return Err(RimError::Data(format!("duplicate sample id {}", s.id)));
            }
            if s.slots.len() != f {
                return Err(RimError::Data(format!(
                    "sample {} has {} slots, schema has {f} feature fields",
                    s.id,
                    s.slots.len()
                )));
            }
            for slot in &s.slots {
                if let Some(bad) = slot.ids().iter().find(|&&id| id >= v) {
                    return Err(RimError::Data(format!(
                        "sample {} references unknown feature id {bad}",
                        s.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Returns a table with the same schema and vocabulary holding `samples`.
    pub fn with_samples(&self, samples: Vec<Sample>) -> Table {
        Table {
            schema: Arc::clone(&self.schema),
            vocab: Arc::clone(&self.vocab),
            samples,
            numeric_bins: self.numeric_bins.clone(),
            label_binning: self.label_binning,
        }
    }

    /// Sub-table of the given row positions, in the given order.
    pub fn select(&self, rows: &[usize]) -> Table {
        self.with_samples(rows.iter().map(|&r| self.samples[r].clone()).collect())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn vocab(&self) -> &FeatureVocab {
        &self.vocab
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.schema.num_features()
    }

    pub fn numeric_binning(&self, field: usize) -> Option<&NumericBinning> {
        self.numeric_bins.get(&field)
    }

    pub fn label_binning(&self) -> Option<&LabelBinning> {
        self.label_binning.as_ref()
    }

    /// True when no feature slot holds an un-discretized numeric value.
    pub fn is_discretized(&self) -> bool {
        self.samples.iter().all(|s| s.slots.iter().all(|slot| !slot.is_raw()))
    }

    /// Replaces the raw values of numeric feature field `field` by
    /// equal-frequency bin ids fitted on this table.
    pub fn discretize_numeric(&mut self, field: usize) -> Result<NumericBinning> {
        let bins = match self.schema.feature(field).kind {
            FieldKind::Numeric { bins } => bins,
            _ => {
                return Err(RimError::Config(format!(
                    "field `{}` is not numeric",
                    self.schema.feature(field).name
                )))
            }
        };
        if bins < 2 {
            return Err(RimError::Config("numeric bin count must be at least 2".into()));
        }
        let values: Vec<f64> = self
            .samples
            .iter()
            .filter_map(|s| match s.slots[field] {
                Slot::Raw(v) => v,
                _ => None,
            })
            .collect();
        if values.is_empty() {
            return Err(RimError::Data(format!(
                "numeric field `{}` has no values to fit bins on",
                self.schema.feature(field).name
            )));
        }
        let binning = NumericBinning::fit(&values, bins);
        self.apply_numeric_binning(field, &binning)?;
        Ok(binning)
    }

    /// Discretizes `field` with previously fitted boundaries (e.g. from the
    /// training data).
    pub fn apply_numeric_binning(&mut self, field: usize, binning: &NumericBinning) -> Result<()> {
        if !matches!(self.schema.feature(field).kind, FieldKind::Numeric { .. }) {
            return Err(RimError::Config(format!(
                "field `{}` is not numeric",
                self.schema.feature(field).name
            )));
        }
        let vocab = Arc::make_mut(&mut self.vocab);
        let bin_ids: Vec<FeatureId> = (0..binning.num_bins())
            .map(|j| vocab.intern(field, &format!("bin{j}")))
            .collect();
        let missing = vocab.intern(field, MISSING_TOKEN);
        for s in &mut self.samples {
            if let Slot::Raw(v) = s.slots[field] {
                s.slots[field] = Slot::One(match v {
                    Some(x) => bin_ids[binning.bin(x)],
                    None => missing,
                });
            }
        }
        self.numeric_bins.insert(field, binning.clone());
        Ok(())
    }

    /// Discretizes every numeric feature field.
    pub fn discretize_all_numeric(&mut self) -> Result<()> {
        for f in 0..self.num_features() {
            if matches!(self.schema.feature(f).kind, FieldKind::Numeric { .. })
                && self.samples.iter().any(|s| s.slots[f].is_raw())
            {
                self.discretize_numeric(f)?;
            }
        }
        Ok(())
    }

    /// Assigns label classes by equal-width binning into `classes` bins.
    pub fn discretize_labels(&mut self, classes: u32) -> Result<LabelBinning> {
        let binning = LabelBinning::fit(self.samples.iter().map(|s| s.label), classes)?;
        self.apply_label_binning(binning);
        Ok(binning)
    }

    pub fn apply_label_binning(&mut self, binning: LabelBinning) {
        for s in &mut self.samples {
            s.class = Some(binning.class(s.label));
        }
        self.label_binning = Some(binning);
    }

    /// Registers `token` for `field` in the shared vocabulary.
    pub fn intern(&mut self, field: usize, token: &str) -> FeatureId {
        Arc::make_mut(&mut self.vocab).intern(field, token)
    }

    /// Seeded uniform subsample without replacement; row order is preserved.
    pub fn subsample(&self, size: usize, seed: u64) -> Table {
        if size >= self.len() {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = rand::seq::index::sample(&mut rng, self.len(), size).into_vec();
        rows.sort_unstable();
        self.select(&rows)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let fields = self.schema.fields();
        let feature_of_column: HashMap<usize, usize> = self
            .schema
            .feature_columns
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i))
            .collect();
        let csv_err = |e: csv::Error| RimError::Format(e.to_string());
        w.write_record(fields.iter().map(FieldSpec::header_cell))
            .map_err(csv_err)?;
        for s in &self.samples {
            let mut record = Vec::with_capacity(fields.len());
            for (col, spec) in fields.iter().enumerate() {
                let cell = match spec.kind {
                    FieldKind::Label => format!("{}", s.label),
                    FieldKind::Timestamp => s.timestamp.map(|t| t.to_string()).unwrap_or_default(),
                    FieldKind::SampleId => s.id.to_string(),
                    _ => self.slot_text(&s.slots[feature_of_column[&col]]),
                };
                record.push(cell);
            }
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(|e| RimError::Format(e.to_string()))?;
        Ok(())
    }

    fn slot_text(&self, slot: &Slot) -> String {
        match slot {
            Slot::Raw(v) => v.map(|x| format!("{x}")).unwrap_or_default(),
            _ => slot
                .ids()
                .iter()
                .map(|&id| self.vocab.token(id).map(|(_, t)| t).unwrap_or_default())
                .collect::<Vec<_>>()
                .join(&MULTI_VALUE_SEPARATOR.to_string()),
        }
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| RimError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Reads a table whose header carries the schema inline.
pub fn load_table(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| RimError::io(path, e))?;
    read_table(file, None)
}

/// Reads a table against a known schema (e.g. from a JSON sidecar); header
/// cells must name the schema's columns in order, kind suffixes optional.
pub fn load_table_with_schema(path: impl AsRef<Path>, schema: &Schema) -> Result<Table> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| RimError::io(path, e))?;
    read_table(file, Some(schema))
}

pub fn read_table<R: Read>(reader: R, schema: Option<&Schema>) -> Result<Table> {
    let (schema, vocab, samples) = read_rows(reader, schema, None)?;
    Table::new(schema, vocab, samples)
}

/// Reads rows against `base`'s schema, extending a copy of its vocabulary
/// so known tokens keep their ids, then applies `base`'s numeric and label
/// binnings.
pub fn read_table_like<R: Read>(reader: R, base: &Table) -> Result<Table> {
    let (schema, vocab, samples) = read_rows(reader, Some(base.schema()), Some(base.vocab().clone()))?;
    let mut table = Table::new(schema, vocab, samples)?;
    for (&field, binning) in &base.numeric_bins {
        table.apply_numeric_binning(field, binning)?;
    }
    if let Some(b) = base.label_binning {
        table.apply_label_binning(b);
    }
    Ok(table)
}

/// Loads a CSV file with [`read_table_like`].
pub fn load_table_like(path: impl AsRef<Path>, base: &Table) -> Result<Table> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| RimError::io(path, e))?;
    read_table_like(file, base)
}

fn read_rows<R: Read>(
    reader: R,
    schema: Option<&Schema>,
    vocab: Option<FeatureVocab>,
) -> Result<(Schema, FeatureVocab, Vec<Sample>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| RimError::Parse {
            line: 1,
            msg: e.to_string(),
        })?,
        None => {
            return Err(RimError::Parse {
                line: 1,
                msg: "missing header row".into(),
            })
        }
    };
    let schema = match schema {
        Some(s) => {
            let names: Vec<&str> = header
                .iter()
                .map(|c| c.split(':').next().unwrap_or("").trim())
                .collect();
            let expected: Vec<&str> = s.fields().iter().map(|f| f.name.as_str()).collect();
            if names != expected {
                return Err(RimError::Schema(format!(
                    "header {names:?} does not match schema {expected:?}"
                )));
            }
            s.clone()
        }
        None => Schema::from_header(&header.iter().collect::<Vec<_>>())?,
    };

    let num_features = schema.num_features();
    let mut vocab = vocab.unwrap_or_else(|| FeatureVocab::new(num_features));
    let mut samples = Vec::new();
    let columns = schema.fields().len();
    let mut feature_of_column = vec![usize::MAX; columns];
    for (i, &c) in schema.feature_columns.iter().enumerate() {
        feature_of_column[c] = i;
    }

    for (row, record) in records.enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| RimError::Parse {
            line,
            msg: e.to_string(),
        })?;
        if record.len() != columns {
            return Err(RimError::Parse {
                line,
                msg: format!("expected {columns} columns, found {}", record.len()),
            });
        }
        let value_err = |col: usize, msg: String| RimError::Value {
            line,
            column: schema.fields()[col].name.clone(),
            msg,
        };
        let mut slots = vec![Slot::Raw(None); num_features];
        let mut label = None;
        let mut timestamp = None;
        let mut id = None;
        for (col, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            match schema.fields()[col].kind {
                FieldKind::Categorical => {
                    let f = feature_of_column[col];
                    slots[f] = Slot::One(vocab.intern(f, cell));
                }
                FieldKind::MultiCategorical => {
                    let f = feature_of_column[col];
                    let mut ids: Vec<FeatureId> = cell
                        .split(MULTI_VALUE_SEPARATOR)
                        .map(str::trim)
                        .filter(|t| !t.is_empty())
                        .map(|t| vocab.intern(f, t))
                        .collect();
                    if ids.is_empty() {
                        ids.push(vocab.intern(f, MISSING_TOKEN));
                    }
                    slots[f] = Slot::many(ids);
                }
                FieldKind::Numeric { .. } => {
                    let f = feature_of_column[col];
                    slots[f] = Slot::Raw(if cell.is_empty() {
                        None
                    } else {
                        Some(
                            cell.parse::<f64>()
                                .ok()
                                .filter(|v| v.is_finite())
                                .ok_or_else(|| value_err(col, format!("`{cell}` is not a finite number")))?,
                        )
                    });
                }
                FieldKind::Label => {
                    label = Some(
                        cell.parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| value_err(col, format!("label `{cell}` is not a finite number")))?,
                    );
                }
                FieldKind::Timestamp => {
                    if !cell.is_empty() {
                        timestamp = Some(
                            cell.parse::<i64>()
                                .map_err(|_| value_err(col, format!("timestamp `{cell}` is not an integer")))?,
                        );
                    }
                }
                FieldKind::SampleId => {
                    id = Some(
                        cell.parse::<u64>()
                            .map_err(|_| value_err(col, format!("sample id `{cell}` is not an unsigned integer")))?,
                    );
                }
            }
        }
        samples.push(Sample {
            id: id.unwrap_or(row as u64),
            slots,
            label: label.expect("schema guarantees a label column"),
            class: None,
            timestamp,
        });
    }
    Ok((schema, vocab, samples))
}

/// Global-time split into `(pool, train, test)` with half-open intervals:
/// pool `ts < t1`, train `t1 <= ts < t2`, test `ts >= t2`.
pub fn split_by_time(table: &Table, t1: i64, t2: i64) -> Result<(Table, Table, Table)> {
    if t1 >= t2 {
        return Err(RimError::Config(format!(
            "split times must satisfy t1 < t2 ({t1} >= {t2})"
        )));
    }
    if !table.schema.has_timestamp() {
        return Err(RimError::Config("time split requires a timestamp column".into()));
    }
    let (mut pool, mut train, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for s in &table.samples {
        let ts = s
            .timestamp
            .ok_or_else(|| RimError::Data(format!("sample {} has no timestamp", s.id)))?;
        let part = if ts < t1 {
            &mut pool
        } else if ts < t2 {
            &mut train
        } else {
            &mut test
        };
        part.push(s.clone());
    }
    for (name, part) in [("pool", &pool), ("train", &train), ("test", &test)] {
        if part.is_empty() {
            warn!("time split produced an empty {name} partition");
        }
    }
    Ok((
        table.with_samples(pool),
        table.with_samples(train),
        table.with_samples(test),
    ))
}

/// Seeded random holdout split into `(train, test)`; row order preserved.
pub fn split_random(table: &Table, test_fraction: f64, seed: u64) -> Result<(Table, Table)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(RimError::Config(format!("test fraction {test_fraction} not in [0, 1)")));
    }
    let n = table.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut is_test = vec![false; n];
    for &r in &order[..n_test] {
        is_test[r] = true;
    }
    let train: Vec<usize> = (0..n).filter(|&r| !is_test[r]).collect();
    let test: Vec<usize> = (0..n).filter(|&r| is_test[r]).collect();
    Ok((table.select(&train), table.select(&test)))
}

/// Fold membership of every row of a training table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    fold_of_row: Vec<usize>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, row: usize) -> usize {
        self.fold_of_row[row]
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of_row {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn rows_in(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of_row.len())
            .filter(|&r| self.fold_of_row[r] == fold)
            .collect()
    }

    /// Rows forming the retrieval pool of targets in `fold`: every other fold.
    pub fn pool_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of_row.len())
            .filter(|&r| self.fold_of_row[r] != fold)
            .collect()
    }
}

/// Deterministic partition of `train` into `k` near-equal folds.
pub fn split_kfold(train: &Table, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(RimError::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    let n = train.len();
    if k > n {
        return Err(RimError::Config(format!("k = {k} exceeds the {n} training samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut fold_of_row = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold_of_row[row] = pos % k;
    }
    Ok(FoldAssignment { k, fold_of_row })
}
