//! Kernel corpus data model and its on-disk formats.
//!
//! A corpus is an ordered collection of square depthwise kernels of a single
//! odd size, each tagged with the model, layer, stage and channel it came
//! from. Two serializations exist:
//!
//! * `KCP1` binary (little-endian, f32 weights), see [`write_corpus`].
//! * Flat CSV with one kernel per row, see [`import_csv`].

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::paired_sum;

pub const CORPUS_MAGIC: [u8; 4] = *b"KCP1";

/// One k×k depthwise kernel with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRecord {
    /// Row-major k×k weights.
    pub weights: Vec<f32>,
    pub model_id: String,
    /// Index among depthwise layers only, front to back.
    pub layer_index: u32,
    pub stage_index: u32,
    pub channel_index: u32,
    pub kernel_size: u32,
}

impl FilterRecord {
    pub fn validate(&self, record: usize) -> Result<()> {
        check_kernel_size(self.kernel_size)?;
        let n = (self.kernel_size * self.kernel_size) as usize;
        if self.weights.len() != n {
            return Err(Error::CorpusInvariant(format!(
                "record {record} has {} weights, expected {n}",
                self.weights.len()
            )));
        }
        if let Some(entry) = self.weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite { record, entry });
        }
        Ok(())
    }

    /// Weights widened to f64 for numerical work.
    pub fn weights_f64(&self) -> Vec<f64> {
        self.weights.iter().map(|&w| w as f64).collect()
    }

    /// Sum of the raw weights, see [`paired_sum`].
    pub fn total_activation(&self) -> f64 {
        paired_sum(&self.weights_f64())
    }
}

pub fn check_kernel_size(k: u32) -> Result<()> {
    if k < 3 || k.is_multiple_of(2) {
        Err(Error::InvalidKernelSize(k))
    } else {
        Ok(())
    }
}

/// model_id → layer_index → filter count.
pub type Manifest = BTreeMap<String, BTreeMap<u32, u64>>;

/// Immutable, validated collection of same-size kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    kernel_size: u32,
    records: Vec<FilterRecord>,
    manifest: Manifest,
}

impl Corpus {
    pub fn new(kernel_size: u32, records: Vec<FilterRecord>) -> Result<Self> {
        check_kernel_size(kernel_size)?;
        for (i, r) in records.iter().enumerate() {
            if r.kernel_size != kernel_size {
                return Err(Error::CorpusInvariant(format!(
                    "record {i} has kernel size {}, corpus has {kernel_size}",
                    r.kernel_size
                )));
            }
            r.validate(i)?;
        }
        let manifest = build_manifest(&records);
        Ok(Corpus {
            kernel_size,
            records,
            manifest,
        })
    }

    pub fn empty(kernel_size: u32) -> Result<Self> {
        Self::new(kernel_size, Vec::new())
    }

    pub fn kernel_size(&self) -> u32 {
        self.kernel_size
    }

    pub fn records(&self) -> &[FilterRecord] {
        &self.records
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct model ids in first-appearance order.
    pub fn model_ids(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for r in &self.records {
            if !seen.contains(&r.model_id.as_str()) {
                seen.push(r.model_id.as_str());
            }
        }
        seen
    }

    /// Distinct layer indices, ascending.
    pub fn layer_indices(&self) -> Vec<u32> {
        let mut layers: Vec<u32> = self.records.iter().map(|r| r.layer_index).collect();
        layers.sort_unstable();
        layers.dedup();
        layers
    }

    pub fn into_records(self) -> Vec<FilterRecord> {
        self.records
    }
}

fn build_manifest(records: &[FilterRecord]) -> Manifest {
    let mut manifest = Manifest::new();
    for r in records {
        *manifest
            .entry(r.model_id.clone())
            .or_default()
            .entry(r.layer_index)
            .or_default() += 1;
    }
    manifest
}

/// Subset of `corpus` matching the optional model and layer, order preserved.
pub fn filter_by(corpus: &Corpus, model_id: Option<&str>, layer_index: Option<u32>) -> Corpus {
    let records: Vec<FilterRecord> = corpus
        .records
        .iter()
        .filter(|r| model_id.is_none_or(|m| r.model_id == m))
        .filter(|r| layer_index.is_none_or(|l| r.layer_index == l))
        .cloned()
        .collect();
    let manifest = build_manifest(&records);
    Corpus {
        kernel_size: corpus.kernel_size,
        records,
        manifest,
    }
}

// --- binary -----------------------------------------------------------------

/// Writes `corpus` in the `KCP1` layout:
///
/// ```text
/// magic        4 bytes  "KCP1"
/// kernel_size  u32
/// n_records    u64
/// n_manifest   u32
/// manifest     n_manifest × { id_len u32, id bytes (UTF-8), layer u32, count u64 }
/// records      n_records  × { id_len u32, id bytes, layer u32, stage u32,
///                             channel u32, k² × f32 weights }
/// ```
///
/// All integers and floats are little-endian. Manifest entries are sorted by
/// (model_id, layer_index).
pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_corpus(corpus)?;
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn encode_corpus(corpus: &Corpus) -> Result<Vec<u8>> {
    // Corpus fields are private, so invariants hold unless built in-crate.
    check_kernel_size(corpus.kernel_size)?;
    let n = (corpus.kernel_size * corpus.kernel_size) as usize;
    let mut buf = Vec::with_capacity(16 + corpus.records.len() * (n * 4 + 24));
    buf.extend_from_slice(&CORPUS_MAGIC);
    buf.extend_from_slice(&corpus.kernel_size.to_le_bytes());
    buf.extend_from_slice(&(corpus.records.len() as u64).to_le_bytes());

    let entries: Vec<(&String, u32, u64)> = corpus
        .manifest
        .iter()
        .flat_map(|(m, layers)| layers.iter().map(move |(&l, &c)| (m, l, c)))
        .collect();
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (model, layer, count) in entries {
        put_str(&mut buf, model)?;
        buf.extend_from_slice(&layer.to_le_bytes());
        buf.extend_from_slice(&count.to_le_bytes());
    }

    for (i, r) in corpus.records.iter().enumerate() {
        r.validate(i)?;
        put_str(&mut buf, &r.model_id)?;
        buf.extend_from_slice(&r.layer_index.to_le_bytes());
        buf.extend_from_slice(&r.stage_index.to_le_bytes());
        buf.extend_from_slice(&r.channel_index.to_le_bytes());
        for w in &r.weights {
            buf.extend_from_slice(&w.to_le_bytes());
        }
    }
    Ok(buf)
}

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u32::try_from(s.len())
        .map_err(|_| Error::CorpusInvariant("model_id longer than u32::MAX bytes".into()))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let bytes = fs::read(path)?;
    decode_corpus(&bytes)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "needed {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::CorpusInvariant(format!("{what} is not valid UTF-8")))
    }
}

pub fn decode_corpus(bytes: &[u8]) -> Result<Corpus> {
    let mut rd = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = match rd.take(4, "magic") {
        Ok(m) => m.try_into().unwrap(),
        Err(_) => {
            let mut found = [0u8; 4];
            found[..bytes.len()].copy_from_slice(bytes);
            return Err(Error::BadMagic {
                expected: CORPUS_MAGIC,
                found,
            });
        }
    };
    if magic != CORPUS_MAGIC {
        return Err(Error::BadMagic {
            expected: CORPUS_MAGIC,
            found: magic,
        });
    }
    let kernel_size = rd.u32("kernel_size")?;
    check_kernel_size(kernel_size)?;
    let n_records = rd.u64("record count")?;
    let n = (kernel_size * kernel_size) as usize;

    let n_manifest = rd.u32("manifest length")?;
    let mut manifest = Manifest::new();
    for _ in 0..n_manifest {
        let model = rd.string("manifest model_id")?;
        let layer = rd.u32("manifest layer")?;
        let count = rd.u64("manifest count")?;
        manifest.entry(model).or_default().insert(layer, count);
    }

    // Guard the allocation against absurd counts in a corrupt header.
    let min_record = 16 + 4 * n;
    let remaining = bytes.len() - rd.pos;
    if n_records > (remaining / min_record) as u64 {
        return Err(Error::Truncated(format!(
            "header declares {n_records} records but only {remaining} bytes follow"
        )));
    }
    let mut records = Vec::with_capacity(n_records as usize);
    for i in 0..n_records as usize {
        let model_id = rd.string("record model_id")?;
        let layer_index = rd.u32("layer_index")?;
        let stage_index = rd.u32("stage_index")?;
        let channel_index = rd.u32("channel_index")?;
        let raw = rd.take(4 * n, "weights")?;
        let weights: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(entry) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite { record: i, entry });
        }
        records.push(FilterRecord {
            weights,
            model_id,
            layer_index,
            stage_index,
            channel_index,
            kernel_size,
        });
    }
    if rd.pos != bytes.len() {
        return Err(Error::CorpusInvariant(format!(
            "{} trailing bytes after last record",
            bytes.len() - rd.pos
        )));
    }

    let corpus = Corpus::new(kernel_size, records)?;
    if corpus.manifest != manifest {
        return Err(Error::CorpusInvariant(
            "manifest counts disagree with records".into(),
        ));
    }
    Ok(corpus)
}

// --- csv --------------------------------------------------------------------

const META_COLUMNS: [&str; 5] = [
    "model_id",
    "layer_index",
    "stage_index",
    "channel_index",
    "kernel_size",
];

/// Reads the flat CSV layout
/// `model_id,layer_index,stage_index,channel_index,kernel_size,w0..w(k²−1)`.
pub fn import_csv(path: impl AsRef<Path>) -> Result<Corpus> {
    let file = fs::File::open(path)?;
    import_csv_reader(file)
}

pub fn import_csv_reader<R: std::io::Read>(reader: R) -> Result<Corpus> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    for (i, name) in META_COLUMNS.iter().enumerate() {
        if header.get(i) != Some(*name) {
            return Err(Error::Csv(format!(
                "header column {i} should be {name:?}, found {:?}",
                header.get(i)
            )));
        }
    }

    let mut records = Vec::new();
    let mut kernel_size = None;
    for (row, result) in rdr.records().enumerate() {
        let rec = result?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let parse_u32 = |i: usize| -> Result<u32> {
            field(i).parse::<u32>().map_err(|e| {
                Error::Csv(format!("row {row}: column {}: {e}", META_COLUMNS[i]))
            })
        };
        if rec.len() < META_COLUMNS.len() {
            return Err(Error::Csv(format!("row {row}: too few columns")));
        }
        let k = parse_u32(4)?;
        check_kernel_size(k)?;
        let n = (k * k) as usize;
        let n_weights = rec.len() - META_COLUMNS.len();
        if n_weights != n {
            return Err(Error::Csv(format!(
                "row {row}: kernel_size {k} needs {n} weight columns, found {n_weights}"
            )));
        }
        match kernel_size {
            None => kernel_size = Some(k),
            Some(prev) if prev != k => {
                return Err(Error::CorpusInvariant(format!(
                    "row {row}: kernel_size {k} differs from {prev}; split mixed sizes into separate corpora"
                )))
            }
            _ => {}
        }
        let weights = (0..n)
            .map(|j| {
                let s = field(META_COLUMNS.len() + j);
                s.parse::<f32>()
                    .map_err(|e| Error::Csv(format!("row {row}: w{j} = {s:?}: {e}")))
            })
            .collect::<Result<Vec<f32>>>()?;
        let record = FilterRecord {
            weights,
            model_id: field(0).to_string(),
            layer_index: parse_u32(1)?,
            stage_index: parse_u32(2)?,
            channel_index: parse_u32(3)?,
            kernel_size: k,
        };
        record.validate(row)?;
        records.push(record);
    }
    let k = kernel_size.ok_or_else(|| Error::Empty("csv has no data rows".into()))?;
    Corpus::new(k, records)
}

/// Writes the same layout [`import_csv`] reads. Floats use the shortest
/// representation that parses back to the identical f32.
pub fn export_csv(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    export_csv_writer(corpus, file)
}

pub fn export_csv_writer<W: Write>(corpus: &Corpus, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let n = (corpus.kernel_size * corpus.kernel_size) as usize;
    let mut header: Vec<String> = META_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..n).map(|j| format!("w{j}")));
    wtr.write_record(&header)?;
    for r in &corpus.records {
        let mut row = vec![
            r.model_id.clone(),
            r.layer_index.to_string(),
            r.stage_index.to_string(),
            r.channel_index.to_string(),
            r.kernel_size.to_string(),
        ];
        row.extend(r.weights.iter().map(|w| w.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
