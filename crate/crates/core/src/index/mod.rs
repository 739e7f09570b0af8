//! Label retrieval over unit-norm embeddings.
//!
//! On the unit sphere cosine similarity and inner product coincide, so one
//! index serves both the training shortlist and top-m inference. Two
//! backends exist: an exact scan, and an HNSW graph whose recall is checked
//! against it.

mod exact;
mod hnsw;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{DocId, LabelId};
use crate::encoder::{encode, EncoderError, EncoderParams, Featurizer, Fnv1a};

pub use exact::exact_topk;
pub use hnsw::HnswParams;

use hnsw::HnswGraph;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("label row {row} is not unit norm (norm {norm})")]
    NonUnitRow { row: usize, norm: f64 },
    #[error("cannot build an index over zero labels")]
    Empty,
    #[error("index was built from params {index:#018x}, current params are {params:#018x}")]
    StaleIndex { index: u64, params: u64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("corrupt index file: {0}")]
    Corrupt(String),
    #[error("index file version {0:#x} is not readable")]
    VersionMismatch(u32),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Label embeddings, `L × D` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl LabelMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self, IndexError> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(IndexError::DimensionMismatch(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, IndexError> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.as_ref().len() != dim {
                return Err(IndexError::DimensionMismatch(format!("row {i} has a different width")));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::new(dim.max(1), data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// `(label id, score)` pairs by non-increasing score, ties by lower id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankedList(Vec<(LabelId, f64)>);

impl RankedList {
    /// Sorts into canonical rank order. Duplicate ids keep their first
    /// (best-ranked) occurrence.
    pub fn new(mut entries: Vec<(LabelId, f64)>) -> Self {
        entries.sort_by(exact::rank_order);
        let mut seen = std::collections::HashSet::new();
        entries.retain(|(id, _)| seen.insert(*id));
        Self(entries)
    }

    pub(crate) fn from_sorted(entries: Vec<(LabelId, f64)>) -> Self {
        Self(entries)
    }

    pub fn entries(&self) -> &[(LabelId, f64)] {
        &self.0
    }

    pub fn ids(&self) -> impl Iterator<Item = LabelId> + '_ {
        self.0.iter().map(|e| e.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn top(&self) -> Option<LabelId> {
        self.0.first().map(|e| e.0)
    }

    pub fn truncated(&self, k: usize) -> Self {
        Self(self.0.iter().take(k).copied().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexBackend {
    Exact,
    Hnsw,
}

impl std::str::FromStr for IndexBackend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Self::Exact),
            "hnsw" => Ok(Self::Hnsw),
            other => Err(format!("unknown index backend {other:?}")),
        }
    }
}

impl std::fmt::Display for IndexBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Hnsw => "hnsw",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexConfig {
    pub backend: IndexBackend,
    pub hnsw: HnswParams,
    /// Seeds HNSW level assignment.
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            backend: IndexBackend::Hnsw,
            hnsw: HnswParams::default(),
            seed: 0,
        }
    }
}

impl IndexConfig {
    pub fn exact() -> Self {
        Self {
            backend: IndexBackend::Exact,
            ..Self::default()
        }
    }
}

/// An immutable label index. Queries may run concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelIndex {
    config: IndexConfig,
    labels: LabelMatrix,
    fingerprint: u64,
    graph: Option<HnswGraph>,
}

const UNIT_TOLERANCE: f64 = 1e-4;

pub fn build_index(labels: LabelMatrix, config: IndexConfig, fingerprint: u64) -> Result<LabelIndex, IndexError> {
    if labels.is_empty() {
        return Err(IndexError::Empty);
    }
    for row in 0..labels.len() {
        let norm = labels.row(row).iter().map(|x| x * x).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= UNIT_TOLERANCE) {
            return Err(IndexError::NonUnitRow { row, norm });
        }
    }
    let graph = match config.backend {
        IndexBackend::Exact => None,
        IndexBackend::Hnsw => Some(HnswGraph::build(&labels, config.hnsw, config.seed)),
    };
    Ok(LabelIndex {
        config,
        labels,
        fingerprint,
        graph,
    })
}

impl LabelIndex {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.labels.dim()
    }

    pub fn backend(&self) -> IndexBackend {
        self.config.backend
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn labels(&self) -> &LabelMatrix {
        &self.labels
    }

    /// Top `k` labels by cosine score; `k` is clamped to `L`.
    pub fn query_topk(&self, query: &[f64], k: usize) -> RankedList {
        let k = k.min(self.len());
        if k == 0 {
            return RankedList::default();
        }
        let Some(graph) = &self.graph else {
            return exact_topk(&self.labels, query, k);
        };
        assert_eq!(query.len(), self.dim(), "query dimension does not match the index");
        let found = graph.search(&self.labels, query, self.config.hnsw.ef_search.max(k));
        if found.len() < k {
            // graph walk could not reach k nodes
            return exact_topk(&self.labels, query, k);
        }
        RankedList::from_sorted(found.into_iter().take(k).collect())
    }

    pub fn check_fresh(&self, params: &EncoderParams) -> Result<(), IndexError> {
        let current = params.fingerprint();
        if current != self.fingerprint {
            return Err(IndexError::StaleIndex {
                index: self.fingerprint,
                params: current,
            });
        }
        Ok(())
    }
}

/// Embeds every text; used for label matrices and document batches.
pub fn embed_all<'a, I>(
    featurizer: &dyn Featurizer,
    params: &EncoderParams,
    texts: I,
) -> Vec<Result<Vec<f64>, EncoderError>>
where
    I: IntoParallelIterator<Item = &'a str>,
    I::Iter: IndexedParallelIterator,
{
    texts
        .into_par_iter()
        .map(|t| Ok(encode(params, &featurizer.featurize(t)?)?.into_inner()))
        .collect()
}

/// Embeds label texts into a matrix. Any label that cannot be embedded is an
/// error: a silently missing label would never be predicted.
pub fn embed_labels(
    featurizer: &dyn Featurizer,
    params: &EncoderParams,
    texts: &[&str],
) -> Result<LabelMatrix, IndexError> {
    let rows = embed_all(featurizer, params, texts.par_iter().copied())
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    LabelMatrix::from_rows(&rows)
}

/// Per-document top-m lists plus the documents that could not be embedded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Predictions {
    pub ranked: Vec<(DocId, RankedList)>,
    pub skipped: Vec<DocId>,
}

/// Retrieves the top `m` labels for every document. Documents whose
/// embedding has zero norm are skipped and reported.
pub fn predict_topm(
    index: &LabelIndex,
    featurizer: &dyn Featurizer,
    params: &EncoderParams,
    docs: &[(DocId, &str)],
    m: usize,
) -> Result<Predictions, IndexError> {
    index.check_fresh(params)?;
    if params.embed_dim() != index.dim() {
        return Err(IndexError::DimensionMismatch(format!(
            "params embed into {} dimensions, index holds {}",
            params.embed_dim(),
            index.dim()
        )));
    }
    let results: Vec<(DocId, Result<RankedList, EncoderError>)> = docs
        .par_iter()
        .map(|&(id, text)| {
            let ranked = featurizer
                .featurize(text)
                .and_then(|f| encode(params, &f))
                .map(|e| index.query_topk(e.as_slice(), m));
            (id, ranked)
        })
        .collect();
    let mut out = Predictions::default();
    for (id, r) in results {
        match r {
            Ok(list) => out.ranked.push((id, list)),
            Err(EncoderError::ZeroNorm) => {
                log::warn!("document {id} has a zero-norm embedding; skipped");
                out.skipped.push(id);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

const INDEX_MAGIC: &[u8; 4] = b"LMIX";
const INDEX_VERSION: u32 = 1 << 16;

struct Hashing<T> {
    inner: T,
    hash: Fnv1a,
}

impl<W: Write> Write for Hashing<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hash.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

impl<R: Read> Read for Hashing<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hash.update(&buf[..n]);
        Ok(n)
    }
}

fn get_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

impl LabelIndex {
    /// Layout: `magic "LMIX" | version u32 | backend u32 | L u64 | D u64 |
    /// params fingerprint u64 | seed u64`, the `L × D` label matrix, the
    /// graph blob for HNSW, and a trailing FNV-1a checksum of all prior bytes.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut out = Hashing {
            inner: BufWriter::new(File::create(path)?),
            hash: Fnv1a::new(),
        };
        out.write_all(INDEX_MAGIC)?;
        out.write_all(&INDEX_VERSION.to_le_bytes())?;
        let backend: u32 = match self.config.backend {
            IndexBackend::Exact => 0,
            IndexBackend::Hnsw => 1,
        };
        out.write_all(&backend.to_le_bytes())?;
        for v in [self.len() as u64, self.dim() as u64, self.fingerprint, self.config.seed] {
            out.write_all(&v.to_le_bytes())?;
        }
        for x in &self.labels.data {
            out.write_all(&x.to_le_bytes())?;
        }
        let p = self.config.hnsw;
        for v in [p.m, p.ef_construction, p.ef_search] {
            out.write_all(&(v as u64).to_le_bytes())?;
        }
        if let Some(g) = &self.graph {
            out.write_all(&(g.entry as u64).to_le_bytes())?;
            out.write_all(&(g.max_level as u64).to_le_bytes())?;
            for layers in &g.links {
                out.write_all(&(layers.len() as u32).to_le_bytes())?;
                for list in layers {
                    out.write_all(&(list.len() as u32).to_le_bytes())?;
                    for id in list {
                        out.write_all(&id.to_le_bytes())?;
                    }
                }
            }
        }
        let checksum = out.hash.finish();
        out.inner.write_all(&checksum.to_le_bytes())?;
        out.inner.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let mut input = Hashing {
            inner: BufReader::new(File::open(path)?),
            hash: Fnv1a::new(),
        };
        let corrupt = |e: io::Error| match e.kind() {
            io::ErrorKind::UnexpectedEof => IndexError::Corrupt("truncated file".into()),
            _ => IndexError::Io(e),
        };
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(corrupt)?;
        if &magic != INDEX_MAGIC {
            return Err(IndexError::Corrupt("bad magic".into()));
        }
        let version = get_u32(&mut input).map_err(corrupt)?;
        if version >> 16 != INDEX_VERSION >> 16 {
            return Err(IndexError::VersionMismatch(version));
        }
        let backend = match get_u32(&mut input).map_err(corrupt)? {
            0 => IndexBackend::Exact,
            1 => IndexBackend::Hnsw,
            other => return Err(IndexError::Corrupt(format!("unknown backend tag {other}"))),
        };
        let n = get_u64(&mut input).map_err(corrupt)? as usize;
        let dim = get_u64(&mut input).map_err(corrupt)? as usize;
        let fingerprint = get_u64(&mut input).map_err(corrupt)?;
        let seed = get_u64(&mut input).map_err(corrupt)?;
        if n == 0 || dim == 0 || n.checked_mul(dim).is_none_or(|c| c > (1 << 36)) {
            return Err(IndexError::Corrupt(format!("implausible shape {n}x{dim}")));
        }
        let mut data = Vec::with_capacity(n * dim);
        for _ in 0..n * dim {
            data.push(f64::from_bits(get_u64(&mut input).map_err(corrupt)?));
        }
        let mut hp = [0usize; 3];
        for v in &mut hp {
            *v = get_u64(&mut input).map_err(corrupt)? as usize;
        }
        let hnsw = HnswParams {
            m: hp[0],
            ef_construction: hp[1],
            ef_search: hp[2],
        };
        let graph = if backend == IndexBackend::Hnsw {
            let entry = get_u64(&mut input).map_err(corrupt)? as u32;
            let max_level = get_u64(&mut input).map_err(corrupt)? as usize;
            let mut links = Vec::with_capacity(n);
            for _ in 0..n {
                let layers = get_u32(&mut input).map_err(corrupt)? as usize;
                if layers == 0 || layers > max_level + 1 {
                    return Err(IndexError::Corrupt("bad layer count".into()));
                }
                let mut node = Vec::with_capacity(layers);
                for _ in 0..layers {
                    let len = get_u32(&mut input).map_err(corrupt)? as usize;
                    let mut list = Vec::with_capacity(len.min(1024));
                    for _ in 0..len {
                        let id = get_u32(&mut input).map_err(corrupt)?;
                        if id as usize >= n {
                            return Err(IndexError::Corrupt("neighbor id out of range".into()));
                        }
                        list.push(id);
                    }
                    node.push(list);
                }
                links.push(node);
            }
            if entry as usize >= n {
                return Err(IndexError::Corrupt("entry point out of range".into()));
            }
            Some(HnswGraph {
                params: hnsw,
                entry,
                max_level,
                links,
            })
        } else {
            None
        };
        let computed = input.hash.finish();
        let stored = get_u64(&mut input.inner).map_err(corrupt)?;
        if stored != computed {
            return Err(IndexError::Corrupt("checksum mismatch".into()));
        }
        let labels = LabelMatrix { dim, data };
        Ok(Self {
            config: IndexConfig { backend, hnsw, seed },
            labels,
            fingerprint,
            graph,
        })
    }
}
