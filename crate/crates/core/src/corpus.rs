//! Embedding corpora: the on-disk JSONL format, validation, pairing of
//! normal/non-neutral utterances, and leave-one-speaker-out splits.
//!
//! One record per line:
//!
//! ```text
//! {"speaker":"s01","utterance":"u07","mode":"shouted","vector":[0.12,-1.5,...]}
//! ```
//!
//! Unknown fields are rejected. Floats are written in shortest round-trip
//! form (at most 17 significant digits), so save/load is bit-exact.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vocal-effort mode label. The set is open; `normal` is the one label with
/// special meaning. Labels are lowercase ASCII identifiers
/// (`[a-z][a-z0-9_-]*`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Mode(String);

impl Mode {
    pub const NORMAL: &'static str = "normal";

    pub fn new(label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        let mut chars = label.chars();
        let ok = matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
            && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-');
        if ok {
            Ok(Mode(label))
        } else {
            Err(Error::UnknownMode(label))
        }
    }

    pub fn normal() -> Self {
        Mode(Self::NORMAL.to_owned())
    }

    pub fn is_normal(&self) -> bool {
        self.0 == Self::NORMAL
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Mode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Mode::new(s)
    }
}

impl From<Mode> for String {
    fn from(m: Mode) -> String {
        m.0
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::new(s)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Identity of a record within a corpus. Orders lexicographically by
/// speaker, then utterance, then mode.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordKey {
    pub speaker: String,
    pub utterance: String,
    pub mode: Mode,
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.speaker, self.utterance, self.mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    #[serde(rename = "speaker")]
    pub speaker_id: String,
    #[serde(rename = "utterance")]
    pub utterance_id: String,
    pub mode: Mode,
    pub vector: Vec<f64>,
}

impl EmbeddingRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            speaker: self.speaker_id.clone(),
            utterance: self.utterance_id.clone(),
            mode: self.mode.clone(),
        }
    }
}

/// A validated set of records sharing one embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    records: Vec<EmbeddingRecord>,
    dimension: usize,
}

impl Corpus {
    /// Validates `records`. With `dimension` absent it is taken from the first
    /// record, so an empty record list needs an explicit dimension.
    pub fn new(records: Vec<EmbeddingRecord>, dimension: Option<usize>) -> Result<Self> {
        let dimension = match (dimension, records.first()) {
            (Some(d), _) => d,
            (None, Some(r)) => r.vector.len(),
            (None, None) => return Err(Error::EmptyCorpus),
        };
        if dimension == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            check_record(r, dimension)?;
            let key = r.key();
            if !seen.insert(key.clone()) {
                return Err(Error::DuplicateKey(key.to_string()));
            }
        }
        Ok(Corpus { records, dimension })
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<EmbeddingRecord> {
        self.records
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorted, de-duplicated speaker ids.
    pub fn speakers(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.speaker_id.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(str::to_owned)
            .collect()
    }

    pub fn has_mode(&self, mode: &Mode) -> bool {
        self.records.iter().any(|r| &r.mode == mode)
    }

    /// Replaces the vector of every record; `f` sees the record index.
    pub fn map_vectors<F>(&self, mut f: F) -> Result<Corpus>
    where
        F: FnMut(usize, &EmbeddingRecord) -> Result<Vec<f64>>,
    {
        let mut records = Vec::with_capacity(self.records.len());
        for (i, r) in self.records.iter().enumerate() {
            let vector = f(i, r)?;
            records.push(EmbeddingRecord {
                vector,
                ..r.clone()
            });
        }
        for r in &records {
            check_record(r, self.dimension)?;
        }
        Ok(Corpus {
            records,
            dimension: self.dimension,
        })
    }
}

fn check_record(r: &EmbeddingRecord, dimension: usize) -> Result<()> {
    if r.vector.len() != dimension {
        return Err(Error::DimensionMismatch {
            expected: dimension,
            actual: r.vector.len(),
        });
    }
    if r.vector.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("vector of record {}", r.key()),
        });
    }
    Ok(())
}

/// Reads a JSONL corpus. Blank lines are ignored.
pub fn read_corpus<R: BufRead>(
    reader: R,
    path: &Path,
    expected_dim: Option<usize>,
) -> Result<Corpus> {
    let mut records = Vec::new();
    let mut keys = HashSet::new();
    let mut dim = expected_dim;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: lineno,
            message,
        };
        let rec: EmbeddingRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let d = *dim.get_or_insert(rec.vector.len());
        check_record(&rec, d).map_err(|e| parse_err(e.to_string()))?;
        if !keys.insert(rec.key()) {
            return Err(parse_err(format!("duplicate record key {}", rec.key())));
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Corpus::new(records, dim)
}

pub fn load_corpus(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), path, expected_dim)
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut writer: W) -> Result<()> {
    for r in corpus.records() {
        serde_json::to_writer(&mut writer, r)?;
        writer
            .write_all(b"\n")
            .map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

/// Writes `corpus` as JSONL. Refuses to write an empty corpus.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_corpus(corpus, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// A normal embedding and its non-neutral counterpart for the same
/// speaker and utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub speaker_id: String,
    pub utterance_id: String,
    pub normal: Vec<f64>,
    pub nonneutral: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSet {
    pub mode: Mode,
    pub pairs: Vec<Pair>,
    /// Normal or non-neutral records that had no counterpart.
    pub skipped: usize,
}

impl PairedSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.pairs.first().map_or(0, |p| p.normal.len())
    }
}

/// Joins normal and `nonneutral_mode` records on (speaker, utterance). Pairs
/// come out sorted by speaker then utterance.
pub fn pair_utterances(corpus: &Corpus, nonneutral_mode: &Mode) -> Result<PairedSet> {
    if nonneutral_mode.is_normal() {
        return Err(Error::invalid("the non-neutral mode cannot be \"normal\""));
    }
    let mut normal = BTreeMap::new();
    let mut other = BTreeMap::new();
    for r in corpus.records() {
        let key = (r.speaker_id.as_str(), r.utterance_id.as_str());
        if r.mode.is_normal() {
            normal.insert(key, &r.vector);
        } else if &r.mode == nonneutral_mode {
            other.insert(key, &r.vector);
        }
    }
    let mut pairs = Vec::new();
    for (&(spk, utt), x) in &normal {
        if let Some(y) = other.get(&(spk, utt)) {
            pairs.push(Pair {
                speaker_id: spk.to_owned(),
                utterance_id: utt.to_owned(),
                normal: (*x).clone(),
                nonneutral: (*y).clone(),
            });
        }
    }
    let skipped = normal.len() + other.len() - 2 * pairs.len();
    if pairs.is_empty() {
        return Err(Error::NoPairs {
            mode: nonneutral_mode.to_string(),
            skipped,
        });
    }
    Ok(PairedSet {
        mode: nonneutral_mode.clone(),
        pairs,
        skipped,
    })
}

/// Splits off one speaker: `(train, test)` where `test` holds exactly that
/// speaker's records. Record order is preserved on both sides.
pub fn split_loso(corpus: &Corpus, held_out_speaker: &str) -> Result<(Corpus, Corpus)> {
    let (test, train): (Vec<_>, Vec<_>) = corpus
        .records()
        .iter()
        .cloned()
        .partition(|r| r.speaker_id == held_out_speaker);
    if test.is_empty() {
        return Err(Error::UnknownSpeaker(held_out_speaker.to_owned()));
    }
    let d = Some(corpus.dimension());
    Ok((Corpus::new(train, d)?, Corpus::new(test, d)?))
}
