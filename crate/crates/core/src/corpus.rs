//! Patent records, JSON Lines ingestion, vocabulary and history lookup.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::taxonomy::Taxonomy;
use crate::{Error, Result};

pub const MASK: usize = 0;
pub const PAD: usize = 1;
pub const MASK_TOKEN: &str = "<mask>";
pub const PAD_TOKEN: &str = "<pad>";

/// One line of a corpus file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub assignee: String,
    pub time: i64,
    pub text: String,
    pub labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatentRecord {
    pub id: String,
    pub assignee: String,
    pub time: i64,
    /// Lowercased whitespace tokens.
    pub words: Vec<String>,
    /// Sorted code indices per level, closed under the taxonomy.
    pub labels: Vec<Vec<usize>>,
}

impl PatentRecord {
    pub fn labels_at(&self, level: usize) -> &[usize] {
        &self.labels[level - 1]
    }

    /// Serialises with deepest-level labels only.
    pub fn to_raw(&self, tax: &Taxonomy) -> RawRecord {
        let leaf = tax.depth();
        RawRecord {
            id: self.id.clone(),
            assignee: self.assignee.clone(),
            time: self.time,
            text: self.words.join(" "),
            labels: self.labels[leaf - 1]
                .iter()
                .map(|&i| tax.codes(leaf)[i].clone())
                .collect(),
        }
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Parses one JSON Lines corpus. `source` names the input in errors.
pub fn parse_corpus(text: &str, source: &str, tax: &Taxonomy) -> Result<Vec<PatentRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            file: source.to_string(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(record_from_raw(raw, tax)?);
    }
    Ok(out)
}

pub fn record_from_raw(raw: RawRecord, tax: &Taxonomy) -> Result<PatentRecord> {
    let mut codes = Vec::with_capacity(raw.labels.len());
    for code in &raw.labels {
        codes.push(tax.find(code).map_err(|_| Error::RecordCode {
            record: raw.id.clone(),
            code: code.clone(),
        })?);
    }
    Ok(PatentRecord {
        labels: tax.closure(&codes)?,
        words: tokenize(&raw.text),
        id: raw.id,
        assignee: raw.assignee,
        time: raw.time,
    })
}

pub fn load_corpus(path: impl AsRef<Path>, tax: &Taxonomy) -> Result<Vec<PatentRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_corpus(&text, &path.display().to_string(), tax)
}

pub fn write_corpus(path: impl AsRef<Path>, records: &[PatentRecord], tax: &Taxonomy) -> Result<()> {
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(&r.to_raw(tax))?);
        buf.push('\n');
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Dense word ids; `<mask>` is 0 and `<pad>` is 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < 2 || words[MASK] != MASK_TOKEN || words[PAD] != PAD_TOKEN {
            return Err(Error::Config(format!(
                "vocabulary must start with {MASK_TOKEN} and {PAD_TOKEN}"
            )));
        }
        let mut ids = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if ids.insert(w.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary word `{w}`")));
            }
        }
        Ok(Self { words, ids })
    }

    /// Keeps words seen at least `min_count` times, most frequent first,
    /// ties broken alphabetically.
    pub fn build<'a, I, S>(texts: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for text in texts {
            for w in text {
                *counts.entry(w.as_ref()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(w, c)| c >= min_count && w != MASK_TOKEN && w != PAD_TOKEN)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut words = vec![MASK_TOKEN.to_string(), PAD_TOKEN.to_string()];
        words.extend(kept.into_iter().map(|(w, _)| w.to_string()));
        Self::from_words(words).expect("built vocabulary is well formed")
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.ids.get(word).copied().unwrap_or(MASK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.ids.contains_key(word)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// First `n_max` words as ids, padded with `<pad>` to `n_max`.
    pub fn encode_text<S: AsRef<str>>(&self, words: &[S], n_max: usize) -> EncodedText {
        let mut ids: Vec<usize> = words.iter().take(n_max).map(|w| self.id(w.as_ref())).collect();
        let len = ids.len();
        ids.resize(n_max, PAD);
        EncodedText { ids, len }
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.word(i).unwrap_or(MASK_TOKEN).to_string())
            .collect()
    }
}

/// Padded token ids plus the number of real tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedText {
    pub ids: Vec<usize>,
    pub len: usize,
}

impl EncodedText {
    pub fn valid(&self) -> &[usize] {
        &self.ids[..self.len]
    }
}

/// Pretrained vectors: `(dim, [(word, vector)])`.
pub type WordVectors = (usize, Vec<(String, Vec<f32>)>);

/// Parses a `count dim` header followed by `word v1 .. vdim` lines.
pub fn parse_vectors(text: &str) -> Result<WordVectors> {
    let err = |line: usize, message: String| Error::Parse {
        file: "vectors".into(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let mut head = header.split_whitespace();
    let parse_usize = |s: Option<&str>, what: &str| -> Result<usize> {
        s.and_then(|v| v.parse().ok())
            .ok_or_else(|| err(1, format!("header needs `count dim`, bad {what}")))
    };
    let count = parse_usize(head.next(), "count")?;
    let dim = parse_usize(head.next(), "dim")?;
    if head.next().is_some() {
        return Err(err(1, "header has extra fields".into()));
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("non-empty line").to_string();
        let values: Vec<f32> = parts
            .map(|v| v.parse::<f32>().map_err(|e| err(n + 1, format!("`{v}`: {e}"))))
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(err(n + 1, format!("expected {dim} values, found {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err(n + 1, "non-finite value".into()));
        }
        out.push((word, values));
    }
    if out.len() != count {
        return Err(err(1, format!("header declares {count} vectors, found {}", out.len())));
    }
    Ok((dim, out))
}

/// Train/validation/test partition with a per-assignee time index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<PatentRecord>,
    pub valid: Vec<PatentRecord>,
    pub test: Vec<PatentRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Part {
    Train,
    Valid,
    Test,
}

impl Part {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Part::Train),
            "valid" | "validation" | "val" => Ok(Part::Valid),
            "test" => Ok(Part::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Part::Train => "train.jsonl",
            Part::Valid => "valid.jsonl",
            Part::Test => "test.jsonl",
        }
    }
}

/// Which records are visible as history.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HistoryScope {
    TrainOnly,
    All,
}

/// Reference to a record inside a [`CorpusSplit`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordRef {
    pub part: Part,
    pub index: usize,
}

impl CorpusSplit {
    pub fn part(&self, part: Part) -> &[PatentRecord] {
        match part {
            Part::Train => &self.train,
            Part::Valid => &self.valid,
            Part::Test => &self.test,
        }
    }

    pub fn get(&self, r: RecordRef) -> &PatentRecord {
        &self.part(r.part)[r.index]
    }

    pub fn load_dir(dir: impl AsRef<Path>, tax: &Taxonomy) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |p: Part| -> Result<Vec<PatentRecord>> {
            let path = dir.join(p.file_name());
            if path.exists() {
                load_corpus(path, tax)
            } else {
                Ok(Vec::new())
            }
        };
        Ok(Self {
            train: read(Part::Train)?,
            valid: read(Part::Valid)?,
            test: read(Part::Test)?,
        })
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>, tax: &Taxonomy) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for p in [Part::Train, Part::Valid, Part::Test] {
            write_corpus(dir.join(p.file_name()), self.part(p), tax)?;
        }
        std::fs::write(dir.join("taxonomy.json"), tax.to_json())?;
        Ok(())
    }

    pub fn history_index(&self, scope: HistoryScope) -> HistoryIndex {
        let parts: &[Part] = match scope {
            HistoryScope::TrainOnly => &[Part::Train],
            HistoryScope::All => &[Part::Train, Part::Valid, Part::Test],
        };
        let mut by_assignee: HashMap<String, Vec<(i64, RecordRef)>> = HashMap::new();
        for &part in parts {
            for (index, r) in self.part(part).iter().enumerate() {
                by_assignee
                    .entry(r.assignee.clone())
                    .or_default()
                    .push((r.time, RecordRef { part, index }));
            }
        }
        for v in by_assignee.values_mut() {
            // Stable: corpus order breaks timestamp ties.
            v.sort_by_key(|&(t, _)| t);
        }
        HistoryIndex { by_assignee }
    }

    /// Most recent `d_max` records of `assignee` strictly before `before`,
    /// oldest first.
    pub fn history_of(
        &self,
        assignee: &str,
        before: i64,
        d_max: usize,
        scope: HistoryScope,
    ) -> Vec<&PatentRecord> {
        self.history_index(scope)
            .lookup(assignee, before, d_max)
            .into_iter()
            .map(|r| self.get(r))
            .collect()
    }
}

/// Per-assignee time-ordered record list.
#[derive(Clone, Debug, Default)]
pub struct HistoryIndex {
    by_assignee: HashMap<String, Vec<(i64, RecordRef)>>,
}

impl HistoryIndex {
    pub fn lookup(&self, assignee: &str, before: i64, d_max: usize) -> Vec<RecordRef> {
        let Some(list) = self.by_assignee.get(assignee) else {
            return Vec::new();
        };
        let end = list.partition_point(|&(t, _)| t < before);
        let start = end.saturating_sub(d_max);
        list[start..end].iter().map(|&(_, r)| r).collect()
    }

    pub fn assignee(&self, assignee: &str) -> &[(i64, RecordRef)] {
        self.by_assignee.get(assignee).map_or(&[], Vec::as_slice)
    }
}
