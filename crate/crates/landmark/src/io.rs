//! Versioned binary files for datasets, statistics and checkpoints.
//!
//! All three share one container: the magic `LMRK`, a format version, a
//! file kind and a block count, then blocks of a four-byte tag, a `u64`
//! payload length and the payload. Integers are little-endian and floats
//! are stored by bit pattern, so a round trip is bit-exact.
//!
//! Writes go to a temporary file in the target directory that is renamed
//! into place, so a crash never leaves a partial file under the final name.
//! Datasets and statistics also get a human-readable `<file>.summary.txt`.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::error::ModelError;
use crate::model::Model;
use crate::synth::{Dataset, GenerativeProcess, MarginalTables, SceneInstance, Split, SynthConfig, BACKGROUND};
use crate::synth::{BBox, Entity, Triplet, Vocabulary};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"LMRK";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileKind {
    Dataset = 1,
    Stats = 2,
    Checkpoint = 3,
}

impl FileKind {
    fn from_u32(v: u32) -> Option<Self> {
        match v {
            1 => Some(FileKind::Dataset),
            2 => Some(FileKind::Stats),
            3 => Some(FileKind::Checkpoint),
            _ => None,
        }
    }
}

/// What went wrong while decoding, and where.
#[derive(Debug, Error, PartialEq)]
pub enum LoadError {
    #[error("not a landmark file (bad magic at offset 0)")]
    Magic,
    #[error("format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("expected a {expected:?} file, found kind {found}")]
    Kind { expected: FileKind, found: u32 },
    #[error("file truncated at offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("malformed content at offset {offset}: {message}")]
    Malformed { offset: usize, message: String },
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}", path.display())]
    Load {
        path: PathBuf,
        #[source]
        source: LoadError,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl PersistError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        PersistError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Appends little-endian fields to a buffer.
#[derive(Default)]
struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.len(v.len());
        v.iter().for_each(|x| self.f64(*x));
    }
    fn tensor(&mut self, t: &Tensor) {
        self.len(t.rank());
        t.shape().iter().for_each(|d| self.len(*d));
        t.data().iter().for_each(|x| self.f64(*x));
    }
}

/// Reads fields back, tracking the absolute file offset for errors.
struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Decoder<'a> {
    fn new(bytes: &'a [u8], base: usize) -> Self {
        Decoder { bytes, pos: 0, base }
    }

    fn offset(&self) -> usize {
        self.base + self.pos
    }

    fn malformed(&self, message: impl Into<String>) -> LoadError {
        LoadError::Malformed {
            offset: self.offset(),
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], LoadError> {
        let left = self.bytes.len() - self.pos;
        if n > left {
            return Err(LoadError::Truncated {
                offset: self.offset(),
                needed: n - left,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, LoadError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, LoadError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, LoadError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, LoadError> {
        Ok(f64::from_bits(self.u64()?))
    }

    /// A length that must fit in the remaining bytes at `unit` bytes each.
    fn len(&mut self, unit: usize) -> Result<usize, LoadError> {
        let n = self.u64()?;
        let at = self.offset();
        let left = (self.bytes.len() - self.pos) as u64;
        if n.saturating_mul(unit.max(1) as u64) > left {
            return Err(LoadError::Truncated {
                offset: at,
                needed: (n.saturating_mul(unit.max(1) as u64) - left) as usize,
            });
        }
        Ok(n as usize)
    }

    fn str(&mut self) -> Result<String, LoadError> {
        let n = self.len(1)?;
        let at = self.offset();
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| LoadError::Malformed {
            offset: at,
            message: "string is not UTF-8".into(),
        })
    }

    fn f64s(&mut self) -> Result<Vec<f64>, LoadError> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn tensor(&mut self) -> Result<Tensor, LoadError> {
        let rank = self.len(8)?;
        let shape: Vec<usize> = (0..rank).map(|_| self.len(0)).collect::<Result<_, _>>()?;
        let count = shape.iter().try_fold(1usize, |a, d| a.checked_mul(*d));
        let Some(count) = count.filter(|c| c.saturating_mul(8) <= self.bytes.len() - self.pos) else {
            return Err(self.malformed(format!("tensor shape {shape:?} exceeds the block")));
        };
        let data = (0..count).map(|_| self.f64()).collect::<Result<Vec<_>, _>>()?;
        Tensor::new(shape, data).map_err(|e| self.malformed(e.to_string()))
    }

    fn finish(&self) -> Result<(), LoadError> {
        if self.pos != self.bytes.len() {
            return Err(self.malformed(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

/// One tagged block of a container.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub tag: [u8; 4],
    /// File offset of the payload's first byte.
    pub offset: usize,
    pub payload: Vec<u8>,
}

pub fn encode_container(kind: FileKind, blocks: &[([u8; 4], Vec<u8>)]) -> Vec<u8> {
    let mut e = Encoder::default();
    e.buf.extend_from_slice(&MAGIC);
    e.u32(VERSION);
    e.u32(kind as u32);
    e.u32(blocks.len() as u32);
    for (tag, payload) in blocks {
        e.buf.extend_from_slice(tag);
        e.len(payload.len());
        e.buf.extend_from_slice(payload);
    }
    e.buf
}

pub fn decode_container(bytes: &[u8], expected: FileKind) -> Result<Vec<Block>, LoadError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(LoadError::Magic);
    }
    let mut d = Decoder::new(bytes, 0);
    d.take(4)?;
    let version = d.u32()?;
    if version != VERSION {
        return Err(LoadError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let kind = d.u32()?;
    if FileKind::from_u32(kind) != Some(expected) {
        return Err(LoadError::Kind { expected, found: kind });
    }
    let count = d.u32()? as usize;
    debug_assert_eq!(d.offset(), HEADER_LEN);
    let mut blocks = Vec::new();
    for _ in 0..count {
        let tag: [u8; 4] = d.take(4)?.try_into().unwrap();
        let n = d.len(1)?;
        let offset = d.offset();
        blocks.push(Block {
            tag,
            offset,
            payload: d.take(n)?.to_vec(),
        });
    }
    d.finish()?;
    Ok(blocks)
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PersistError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(PersistError::io(path, e));
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>, PersistError> {
    std::fs::read(path).map_err(|e| PersistError::io(path, e))
}

/// Path of the human-readable summary written next to `path`.
pub fn summary_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".summary.txt");
    PathBuf::from(s)
}

fn find<'b>(blocks: &'b [Block], tag: &[u8; 4]) -> Result<&'b Block, LoadError> {
    blocks.iter().find(|b| &b.tag == tag).ok_or_else(|| LoadError::Malformed {
        offset: HEADER_LEN,
        message: format!("missing {} block", String::from_utf8_lossy(tag)),
    })
}

fn config_block(blocks: &[Block]) -> Result<RunConfig, LoadError> {
    let b = find(blocks, b"CONF")?;
    let mut d = Decoder::new(&b.payload, b.offset);
    let text = d.str()?;
    d.finish()?;
    RunConfig::parse(&text).map_err(|e| LoadError::Malformed {
        offset: b.offset,
        message: format!("embedded configuration: {e}"),
    })
}

fn config_payload(config: &RunConfig) -> Vec<u8> {
    let mut e = Encoder::default();
    e.str(&config.to_text());
    e.buf
}

fn encode_scene(e: &mut Encoder, s: &SceneInstance) {
    e.u64(s.id);
    e.u8(match s.split {
        Split::Train => 0,
        Split::Eval => 1,
    });
    e.len(s.entities.len());
    for ent in &s.entities {
        e.len(ent.class);
        ent.bbox.as_array().iter().for_each(|v| e.f64(*v));
    }
    e.len(s.gt_triplets.len());
    for t in &s.gt_triplets {
        e.len(t.subject);
        e.len(t.object);
        e.len(t.predicate);
    }
    e.tensor(&s.entity_features);
    e.u64(s.feature_seed);
}

fn decode_scene(d: &mut Decoder<'_>) -> Result<SceneInstance, LoadError> {
    let id = d.u64()?;
    let split = match d.u8()? {
        0 => Split::Train,
        1 => Split::Eval,
        other => return Err(d.malformed(format!("unknown split {other}"))),
    };
    let n = d.len(40)?;
    let mut entities = Vec::with_capacity(n);
    for _ in 0..n {
        let class = d.u64()? as usize;
        let bbox = BBox {
            cx: d.f64()?,
            cy: d.f64()?,
            w: d.f64()?,
            h: d.f64()?,
        };
        entities.push(Entity { class, bbox });
    }
    let m = d.len(24)?;
    let mut gt_triplets = Vec::with_capacity(m);
    for _ in 0..m {
        gt_triplets.push(Triplet {
            subject: d.u64()? as usize,
            object: d.u64()? as usize,
            predicate: d.u64()? as usize,
        });
    }
    let entity_features = d.tensor()?;
    let feature_seed = d.u64()?;
    Ok(SceneInstance {
        id,
        split,
        entities,
        gt_triplets,
        entity_features,
        feature_seed,
    })
}

/// Dataset bytes. The generative process is not stored: it is rebuilt
/// from the embedded generator settings on load.
pub fn encode_dataset(dataset: &Dataset) -> Vec<u8> {
    let config = RunConfig {
        synth: dataset.process.config.clone(),
        ..RunConfig::default()
    };
    let mut vocab = Encoder::default();
    for names in [&dataset.process.vocab.entity_classes, &dataset.process.vocab.predicate_classes] {
        vocab.len(names.len());
        names.iter().for_each(|n| vocab.str(n));
    }
    let mut blocks = vec![(*b"CONF", config_payload(&config)), (*b"VOCB", vocab.buf)];
    for scene in dataset.train.iter().chain(&dataset.eval) {
        let mut e = Encoder::default();
        encode_scene(&mut e, scene);
        blocks.push((*b"SCNE", e.buf));
    }
    encode_container(FileKind::Dataset, &blocks)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset, LoadError> {
    let blocks = decode_container(bytes, FileKind::Dataset)?;
    let synth: SynthConfig = config_block(&blocks)?.synth;
    let conf_offset = find(&blocks, b"CONF")?.offset;
    let process = GenerativeProcess::build(&synth).map_err(|e| LoadError::Malformed {
        offset: conf_offset,
        message: e.to_string(),
    })?;
    let vb = find(&blocks, b"VOCB")?;
    let mut d = Decoder::new(&vb.payload, vb.offset);
    let mut lists = Vec::new();
    for _ in 0..2 {
        let n = d.len(8)?;
        lists.push((0..n).map(|_| d.str()).collect::<Result<Vec<_>, _>>()?);
    }
    d.finish()?;
    let vocab = Vocabulary {
        predicate_classes: lists.pop().unwrap(),
        entity_classes: lists.pop().unwrap(),
    };
    if vocab != process.vocab {
        return Err(LoadError::Malformed {
            offset: vb.offset,
            message: "vocabulary does not match the embedded generator settings".into(),
        });
    }
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for b in blocks.iter().filter(|b| &b.tag == b"SCNE") {
        let mut d = Decoder::new(&b.payload, b.offset);
        let scene = decode_scene(&mut d)?;
        d.finish()?;
        scene.validate(&process.vocab).map_err(|e| LoadError::Malformed {
            offset: b.offset,
            message: e.to_string(),
        })?;
        match scene.split {
            Split::Train => train.push(scene),
            Split::Eval => eval.push(scene),
        }
    }
    Ok(Dataset { process, train, eval })
}

/// Scene, entity and per-predicate triplet counts of each split.
pub fn dataset_summary(dataset: &Dataset) -> String {
    let vocab = &dataset.process.vocab;
    let mut out = String::new();
    let _ = writeln!(out, "seed {}", dataset.process.config.seed);
    for (name, scenes) in [("train", &dataset.train), ("eval", &dataset.eval)] {
        let entities: usize = scenes.iter().map(|s| s.num_entities()).sum();
        let triplets: usize = scenes.iter().map(|s| s.gt_triplets.len()).sum();
        let _ = writeln!(out, "{name}: {} scenes, {entities} entities, {triplets} triplets", scenes.len());
        let mut counts = vec![0usize; vocab.num_predicates()];
        scenes.iter().flat_map(|s| &s.gt_triplets).for_each(|t| counts[t.predicate] += 1);
        for (k, c) in counts.iter().enumerate().filter(|(k, _)| *k != BACKGROUND) {
            let _ = writeln!(out, "  {:<16} {c:>8}", vocab.predicate_classes[k]);
        }
    }
    let _ = writeln!(out, "held-out class pairs: {}", dataset.process.zero_shot_pairs.len());
    out
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<(), PersistError> {
    write_atomic(path, &encode_dataset(dataset))?;
    write_atomic(&summary_path(path), dataset_summary(dataset).as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<Dataset, PersistError> {
    let bytes = read_file(path)?;
    decode_dataset(&bytes).map_err(|source| PersistError::Load {
        path: path.to_path_buf(),
        source,
    })
}

pub fn encode_stats(tables: &MarginalTables) -> Vec<u8> {
    let mut e = Encoder::default();
    e.len(tables.entity_classes);
    e.len(tables.predicates);
    e.f64(tables.smoothing);
    e.f64s(&tables.m_sub);
    e.f64s(&tables.m_obj);
    e.len(tables.freq_counts.len());
    tables.freq_counts.iter().for_each(|c| e.u64(*c));
    encode_container(FileKind::Stats, &[(*b"MARG", e.buf)])
}

pub fn decode_stats(bytes: &[u8]) -> Result<MarginalTables, LoadError> {
    let blocks = decode_container(bytes, FileKind::Stats)?;
    let b = find(&blocks, b"MARG")?;
    let mut d = Decoder::new(&b.payload, b.offset);
    let entity_classes = d.u64()? as usize;
    let predicates = d.u64()? as usize;
    let smoothing = d.f64()?;
    let m_sub = d.f64s()?;
    let m_obj = d.f64s()?;
    let n = d.len(8)?;
    let freq_counts = (0..n).map(|_| d.u64()).collect::<Result<Vec<_>, _>>()?;
    d.finish()?;
    let (e, k) = (entity_classes, predicates);
    if m_sub.len() != e * k || m_obj.len() != e * k || freq_counts.len() != e * e * k {
        return Err(LoadError::Malformed {
            offset: b.offset,
            message: format!("table sizes do not match {e} classes and {k} predicates"),
        });
    }
    Ok(MarginalTables {
        entity_classes,
        predicates,
        smoothing,
        m_sub,
        m_obj,
        freq_counts,
    })
}

/// Training-frequency profile: triplets per predicate, head first.
pub fn stats_summary(tables: &MarginalTables, vocab: &Vocabulary) -> String {
    let k = tables.predicates;
    let mut counts = vec![0u64; k];
    for (i, c) in tables.freq_counts.iter().enumerate() {
        counts[i % k] += c;
    }
    let total: u64 = counts.iter().skip(1).sum();
    let mut order: Vec<usize> = (1..k).collect();
    order.sort_by(|a, b| counts[*b].cmp(&counts[*a]).then(a.cmp(b)));
    let mut out = format!("smoothing {:?}\ntriplets {total}\n", tables.smoothing);
    for p in order {
        let share = if total == 0 { 0.0 } else { counts[p] as f64 / total as f64 };
        let _ = writeln!(out, "  {:<16} {:>8} {:>8.4}", vocab.predicate_classes[p], counts[p], share);
    }
    out
}

pub fn save_stats(path: &Path, tables: &MarginalTables, vocab: &Vocabulary) -> Result<(), PersistError> {
    write_atomic(path, &encode_stats(tables))?;
    write_atomic(&summary_path(path), stats_summary(tables, vocab).as_bytes())
}

pub fn load_stats(path: &Path) -> Result<MarginalTables, PersistError> {
    let bytes = read_file(path)?;
    decode_stats(&bytes).map_err(|source| PersistError::Load {
        path: path.to_path_buf(),
        source,
    })
}

/// A trained model with everything needed to resume or reproduce it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: Model,
    /// Optimizer steps taken.
    pub iteration: u64,
    /// Training randomness is a counter-based stream: its seed and the
    /// number of steps drawn from it are its whole state.
    pub rng_seed: u64,
    pub rng_step: u64,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut state = Encoder::default();
    state.u64(ckpt.iteration);
    state.u64(ckpt.rng_seed);
    state.u64(ckpt.rng_step);
    let mut blocks = vec![(*b"CONF", config_payload(&ckpt.config)), (*b"STAT", state.buf)];
    for (_, name, tensor) in ckpt.model.store.iter() {
        let mut e = Encoder::default();
        e.str(name);
        e.tensor(tensor);
        blocks.push((*b"PARM", e.buf));
    }
    encode_container(FileKind::Checkpoint, &blocks)
}

/// Rebuilds the model from the embedded configuration and overwrites
/// every parameter; names and shapes must match exactly.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, LoadError> {
    let blocks = decode_container(bytes, FileKind::Checkpoint)?;
    let config = config_block(&blocks)?;
    let conf_offset = find(&blocks, b"CONF")?.offset;
    let mut model = Model::new(config.model.clone()).map_err(|e| LoadError::Malformed {
        offset: conf_offset,
        message: e.to_string(),
    })?;
    let sb = find(&blocks, b"STAT")?;
    let mut d = Decoder::new(&sb.payload, sb.offset);
    let (iteration, rng_seed, rng_step) = (d.u64()?, d.u64()?, d.u64()?);
    d.finish()?;
    let params: Vec<&Block> = blocks.iter().filter(|b| &b.tag == b"PARM").collect();
    if params.len() != model.store.len() {
        return Err(LoadError::Malformed {
            offset: HEADER_LEN,
            message: format!("{} parameter blocks for a model with {}", params.len(), model.store.len()),
        });
    }
    for b in params {
        let mut d = Decoder::new(&b.payload, b.offset);
        let name = d.str()?;
        let tensor = d.tensor()?;
        d.finish()?;
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| d.malformed(format!("unknown parameter {name}")))?;
        model
            .store
            .set(id, tensor)
            .map_err(|e| d.malformed(format!("parameter {name}: {e}")))?;
    }
    Ok(Checkpoint {
        config,
        model,
        iteration,
        rng_seed,
        rng_step,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), PersistError> {
    write_atomic(path, &encode_checkpoint(ckpt))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, PersistError> {
    let bytes = read_file(path)?;
    decode_checkpoint(&bytes).map_err(|source| PersistError::Load {
        path: path.to_path_buf(),
        source,
    })
}
