//! Fact documents, the statute hierarchy, vocabulary and fixed-shape text grids.
//!
//! Facts are read from line-delimited JSON, one record per line:
//!
//! ```text
//! {"id": "f1", "court": "SC", "text": ["First sentence.", "Second."], "labels": ["302", "201"]}
//! ```
//!
//! `text` may also be a single string, in which case it is split on
//! sentence-final punctuation. The hierarchy is a single JSON document, either
//! nested (act → chapters → topics → sections) or a flat node list with
//! explicit parents; see [`StatuteHierarchy::from_json`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

pub type Sentence = Vec<String>;

fn token_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\[[A-Z][A-Z_]*(?:\s+\d+)?\]|[\p{L}\p{N}]+(?:'[\p{L}]+)?").unwrap()
    })
}

/// Lowercases and splits on whitespace and punctuation. Entity placeholders
/// such as `[PERSON 1]` survive as single, verbatim tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    token_regex()
        .find_iter(text)
        .map(|m| {
            let tok = m.as_str();
            if tok.starts_with('[') {
                tok.split_whitespace().collect::<Vec<_>>().join(" ")
            } else {
                tok.to_lowercase()
            }
        })
        .collect()
}

/// Splits raw text after `.`, `!` or `?` when followed by whitespace or the end.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let at_boundary = chars.peek().map_or(true, |(_, n)| n.is_whitespace());
            if at_boundary {
                let end = i + c.len_utf8();
                let piece = text[start..end].trim();
                if !piece.is_empty() {
                    out.push(piece);
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// Either a pre-split list of sentences or raw running text.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawText {
    Sentences(Vec<String>),
    Raw(String),
}

impl RawText {
    /// Tokenized sentences with empty ones removed.
    pub fn to_sentences(&self) -> Vec<Sentence> {
        let pieces: Vec<&str> = match self {
            RawText::Sentences(s) => s.iter().map(String::as_str).collect(),
            RawText::Raw(t) => split_sentences(t),
        };
        pieces
            .into_iter()
            .map(tokenize)
            .filter(|s| !s.is_empty())
            .collect()
    }
}

/// Anything with tokenized sentences: facts and statutes.
pub trait Text {
    fn sentences(&self) -> &[Sentence];

    fn num_tokens(&self) -> usize {
        self.sentences().iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactDocument {
    pub id: String,
    pub court: String,
    pub sentences: Vec<Sentence>,
    pub labels: BTreeSet<String>,
}

impl Text for FactDocument {
    fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statute {
    pub id: String,
    pub title: String,
    pub sentences: Vec<Sentence>,
    pub parent_topic: String,
}

impl Text for Statute {
    fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyNode {
    pub id: String,
    pub title: String,
    pub parent: String,
}

/// Act → Chapter → Topic → Section tree. Section order is the order of
/// appearance in the source file and defines the label order everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatuteHierarchy {
    pub act: String,
    pub chapters: Vec<HierarchyNode>,
    pub topics: Vec<HierarchyNode>,
    pub sections: Vec<Statute>,
    #[serde(skip)]
    section_index: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct NestedSection {
    id: String,
    #[serde(default)]
    title: String,
    text: RawText,
}

#[derive(Deserialize)]
struct NestedTopic {
    id: String,
    #[serde(default)]
    title: String,
    sections: Vec<NestedSection>,
}

#[derive(Deserialize)]
struct NestedChapter {
    id: String,
    #[serde(default)]
    title: String,
    topics: Vec<NestedTopic>,
}

#[derive(Deserialize)]
struct NestedAct {
    id: String,
    chapters: Vec<NestedChapter>,
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum FlatKind {
    Act,
    Chapter,
    Topic,
    Section,
}

#[derive(Deserialize)]
struct FlatNode {
    id: String,
    kind: FlatKind,
    #[serde(default)]
    parent: Option<String>,
    #[serde(default)]
    title: String,
    #[serde(default)]
    text: Option<RawText>,
}

#[derive(Deserialize)]
struct FlatDoc {
    nodes: Vec<FlatNode>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum HierarchyFile {
    Nested { act: NestedAct },
    Flat(FlatDoc),
}

impl StatuteHierarchy {
    /// Builds and validates a hierarchy from already-structured parts.
    pub fn new(
        act: String,
        chapters: Vec<HierarchyNode>,
        topics: Vec<HierarchyNode>,
        sections: Vec<Statute>,
    ) -> Result<Self> {
        let mut h = StatuteHierarchy {
            act,
            chapters,
            topics,
            sections,
            section_index: HashMap::new(),
        };
        h.validate()?;
        h.reindex();
        Ok(h)
    }

    fn reindex(&mut self) {
        self.section_index = self
            .sections
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), i))
            .collect();
    }

    fn validate(&self) -> Result<()> {
        fn dupes<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
            let mut seen = HashSet::new();
            let mut out = BTreeSet::new();
            for id in ids {
                if !seen.insert(id) {
                    out.insert(id.to_string());
                }
            }
            out.into_iter().collect()
        }
        let multi: Vec<String> = [
            dupes(self.chapters.iter().map(|c| c.id.as_str())),
            dupes(self.topics.iter().map(|t| t.id.as_str())),
            dupes(self.sections.iter().map(|s| s.id.as_str())),
        ]
        .concat();
        if !multi.is_empty() {
            return Err(Error::Hierarchy {
                message: "node listed under more than one parent".into(),
                ids: multi,
            });
        }
        let chapter_ids: HashSet<&str> = self.chapters.iter().map(|c| c.id.as_str()).collect();
        let topic_ids: HashSet<&str> = self.topics.iter().map(|t| t.id.as_str()).collect();
        let mut orphans: Vec<String> = self
            .chapters
            .iter()
            .filter(|c| c.parent != self.act)
            .map(|c| c.id.clone())
            .collect();
        orphans.extend(
            self.topics
                .iter()
                .filter(|t| !chapter_ids.contains(t.parent.as_str()))
                .map(|t| t.id.clone()),
        );
        orphans.extend(
            self.sections
                .iter()
                .filter(|s| !topic_ids.contains(s.parent_topic.as_str()))
                .map(|s| s.id.clone()),
        );
        if !orphans.is_empty() {
            return Err(Error::Hierarchy {
                message: "node without a valid parent".into(),
                ids: orphans,
            });
        }
        let empty: Vec<String> = self
            .sections
            .iter()
            .filter(|s| s.sentences.is_empty())
            .map(|s| s.id.clone())
            .collect();
        if !empty.is_empty() {
            return Err(Error::Hierarchy {
                message: "section without text".into(),
                ids: empty,
            });
        }
        if self.sections.is_empty() {
            return Err(Error::Hierarchy {
                message: "no sections".into(),
                ids: vec![self.act.clone()],
            });
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: HierarchyFile = serde_json::from_str(json)?;
        match file {
            HierarchyFile::Nested { act } => {
                let mut chapters = Vec::new();
                let mut topics = Vec::new();
                let mut sections = Vec::new();
                for c in act.chapters {
                    chapters.push(HierarchyNode {
                        id: c.id.clone(),
                        title: c.title,
                        parent: act.id.clone(),
                    });
                    for t in c.topics {
                        topics.push(HierarchyNode {
                            id: t.id.clone(),
                            title: t.title,
                            parent: c.id.clone(),
                        });
                        for s in t.sections {
                            sections.push(Statute {
                                id: s.id,
                                title: s.title,
                                sentences: s.text.to_sentences(),
                                parent_topic: t.id.clone(),
                            });
                        }
                    }
                }
                Self::new(act.id, chapters, topics, sections)
            }
            HierarchyFile::Flat(doc) => Self::from_flat(doc),
        }
    }

    fn from_flat(doc: FlatDoc) -> Result<Self> {
        let acts: Vec<&FlatNode> = doc
            .nodes
            .iter()
            .filter(|n| matches!(n.kind, FlatKind::Act))
            .collect();
        if acts.len() != 1 {
            return Err(Error::Hierarchy {
                message: format!("expected exactly one act, found {}", acts.len()),
                ids: acts.iter().map(|a| a.id.clone()).collect(),
            });
        }
        let act = acts[0].id.clone();
        let mut chapters = Vec::new();
        let mut topics = Vec::new();
        let mut sections = Vec::new();
        let mut orphans = Vec::new();
        for n in &doc.nodes {
            let parent = match (&n.kind, &n.parent) {
                (FlatKind::Act, _) => continue,
                (_, Some(p)) => p.clone(),
                (_, None) => {
                    orphans.push(n.id.clone());
                    continue;
                }
            };
            let node = HierarchyNode {
                id: n.id.clone(),
                title: n.title.clone(),
                parent,
            };
            match n.kind {
                FlatKind::Chapter => chapters.push(node),
                FlatKind::Topic => topics.push(node),
                FlatKind::Section => sections.push(Statute {
                    id: node.id,
                    title: node.title,
                    sentences: n.text.as_ref().map(RawText::to_sentences).unwrap_or_default(),
                    parent_topic: node.parent,
                }),
                FlatKind::Act => unreachable!(),
            }
        }
        if !orphans.is_empty() {
            return Err(Error::Hierarchy {
                message: "node without a parent".into(),
                ids: orphans,
            });
        }
        Self::new(act, chapters, topics, sections)
    }

    /// Flat-form JSON that `from_json` reads back unchanged.
    pub fn to_json(&self) -> Result<String> {
        let mut nodes = vec![serde_json::json!({"id": self.act, "kind": "act"})];
        for (kind, list) in [("chapter", &self.chapters), ("topic", &self.topics)] {
            for n in list {
                nodes.push(serde_json::json!({"id": n.id, "kind": kind, "parent": n.parent, "title": n.title}));
            }
        }
        for s in &self.sections {
            let text: Vec<String> = s.sentences.iter().map(|w| w.join(" ")).collect();
            nodes.push(serde_json::json!({
                "id": s.id, "kind": "section", "parent": s.parent_topic, "title": s.title, "text": text,
            }));
        }
        Ok(serde_json::to_string_pretty(&serde_json::json!({ "nodes": nodes }))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn num_sections(&self) -> usize {
        self.sections.len()
    }

    pub fn section_ids(&self) -> Vec<String> {
        self.sections.iter().map(|s| s.id.clone()).collect()
    }

    pub fn section_index(&self, id: &str) -> Option<usize> {
        if self.section_index.is_empty() && !self.sections.is_empty() {
            return self.sections.iter().position(|s| s.id == id);
        }
        self.section_index.get(id).copied()
    }

    pub fn contains_section(&self, id: &str) -> bool {
        self.section_index(id).is_some()
    }

    pub fn topic_of(&self, section: &str) -> Option<&str> {
        self.section_index(section)
            .map(|i| self.sections[i].parent_topic.as_str())
    }

    /// Restores derived indices after deserialization.
    pub fn rebuild_index(&mut self) {
        self.reindex();
    }

    /// Multi-hot label vector in section order.
    pub fn label_vector(&self, labels: &BTreeSet<String>) -> Vec<f64> {
        let mut y = vec![0.0; self.num_sections()];
        for l in labels {
            if let Some(i) = self.section_index(l) {
                y[i] = 1.0;
            }
        }
        y
    }
}

pub fn load_hierarchy(path: impl AsRef<Path>) -> Result<StatuteHierarchy> {
    let path = path.as_ref();
    let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    StatuteHierarchy::from_json(&json)
}

#[derive(Deserialize)]
struct FactRecord {
    id: String,
    #[serde(default = "default_court")]
    court: String,
    text: RawText,
    #[serde(default)]
    labels: Vec<String>,
}

fn default_court() -> String {
    "unknown".to_string()
}

/// Loaded facts plus the bookkeeping of what was filtered out.
#[derive(Debug, Clone, Default)]
pub struct FactCorpus {
    pub docs: Vec<FactDocument>,
    /// Label mentions dropped because the section is not in the hierarchy.
    pub dropped_labels: usize,
    /// Documents excluded because no known label remained.
    pub excluded_docs: usize,
}

impl FactCorpus {
    pub fn avg_labels_per_doc(&self) -> f64 {
        avg_labels_per_doc(&self.docs)
    }
}

pub fn avg_labels_per_doc(docs: &[FactDocument]) -> f64 {
    if docs.is_empty() {
        return 0.0;
    }
    docs.iter().map(|d| d.labels.len()).sum::<usize>() as f64 / docs.len() as f64
}

/// Parses facts from a JSONL reader; `origin` is used in error messages.
pub fn parse_facts(
    reader: impl BufRead,
    origin: &Path,
    hierarchy: &StatuteHierarchy,
) -> Result<FactCorpus> {
    parse_records(reader, origin, hierarchy, false)
}

fn parse_records(
    reader: impl BufRead,
    origin: &Path,
    hierarchy: &StatuteHierarchy,
    keep_unlabeled: bool,
) -> Result<FactCorpus> {
    let mut corpus = FactCorpus::default();
    let mut seen = HashSet::new();
    let mut records = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        records += 1;
        let malformed = |message: String| Error::MalformedRecord {
            path: origin.to_path_buf(),
            line: lineno,
            message,
        };
        let rec: FactRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if !seen.insert(rec.id.clone()) {
            return Err(malformed(format!("duplicate id `{}`", rec.id)));
        }
        let sentences = rec.text.to_sentences();
        if sentences.is_empty() {
            return Err(malformed(format!("record `{}` has no text", rec.id)));
        }
        let mut labels = BTreeSet::new();
        for l in rec.labels {
            if hierarchy.contains_section(&l) {
                labels.insert(l);
            } else {
                corpus.dropped_labels += 1;
            }
        }
        if labels.is_empty() && !keep_unlabeled {
            corpus.excluded_docs += 1;
            continue;
        }
        corpus.docs.push(FactDocument {
            id: rec.id,
            court: rec.court,
            sentences,
            labels,
        });
    }
    if records == 0 {
        return Err(Error::EmptyInput(origin.display().to_string()));
    }
    if corpus.dropped_labels > 0 || corpus.excluded_docs > 0 {
        log::warn!(
            "{}: dropped {} unknown label(s), excluded {} document(s) with no known label",
            origin.display(),
            corpus.dropped_labels,
            corpus.excluded_docs
        );
    }
    Ok(corpus)
}

pub fn load_facts(path: impl AsRef<Path>, hierarchy: &StatuteHierarchy) -> Result<FactCorpus> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_facts(BufReader::new(file), path, hierarchy)
}

/// Facts to predict for: labels are optional and documents without any are kept.
pub fn load_queries(path: impl AsRef<Path>, hierarchy: &StatuteHierarchy) -> Result<Vec<FactDocument>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_records(BufReader::new(file), path, hierarchy, true)?.docs)
}

/// Writes facts back out as JSONL with pre-split sentences.
pub fn write_facts(path: impl AsRef<Path>, docs: &[FactDocument]) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for d in docs {
        let rec = serde_json::json!({
            "id": d.id,
            "court": d.court,
            "text": d.sentences.iter().map(|s| s.join(" ")).collect::<Vec<_>>(),
            "labels": d.labels,
        });
        writeln!(out, "{rec}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Token → index map. Index 0 is padding, 1 is unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    /// Optional pretrained vectors, one slot per index.
    pub pretrained: Option<PretrainedVectors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainedVectors {
    pub dim: usize,
    pub vectors: Vec<Option<Vec<f64>>>,
}

impl Vocabulary {
    /// Counts tokens over all streams and keeps those seen at least `min_freq`
    /// times, ordered by descending frequency then lexicographically.
    pub fn build<I, S, T>(corpora: I, min_freq: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        if min_freq < 1 {
            return Err(Error::Config("min_freq must be >= 1".into()));
        }
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for stream in corpora {
            for tok in stream {
                *counts.entry(tok.as_ref().to_string()).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyInput("vocabulary corpus".into()));
        }
        let mut kept: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq && t != PAD_TOKEN && t != UNK_TOKEN)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_entries(kept))
    }

    fn from_entries(entries: Vec<(String, u64)>) -> Self {
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut freqs = vec![0, 0];
        for (t, c) in entries {
            tokens.push(t);
            freqs.push(c);
        }
        let mut v = Vocabulary {
            tokens,
            freqs,
            index: HashMap::new(),
            pretrained: None,
        };
        v.rebuild_index();
        v
    }

    /// Restores the lookup map after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn freq(&self, index: usize) -> u64 {
        self.freqs.get(index).copied().unwrap_or(0)
    }

    /// One `token<TAB>frequency` line per entry, skipping the reserved slots.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for (t, f) in self.tokens.iter().zip(&self.freqs).skip(2) {
            writeln!(out, "{t}\t{f}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, freq) = line.rsplit_once('\t').ok_or_else(|| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected `token<TAB>frequency`".into(),
            })?;
            let freq = freq.parse().map_err(|_| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("bad frequency `{freq}`"),
            })?;
            entries.push((tok.to_string(), freq));
        }
        if entries.is_empty() {
            return Err(Error::EmptyInput(path.display().to_string()));
        }
        Ok(Self::from_entries(entries))
    }

    /// Attaches vectors from a whitespace-separated text file
    /// (`token v1 v2 ... vd` per line; an optional `count dim` header is skipped).
    pub fn load_pretrained(&mut self, path: impl AsRef<Path>) -> Result<usize> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut dim = None;
        let mut vectors = vec![None; self.len()];
        let mut hits = 0;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse).collect();
            let values = values.map_err(|_| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: i + 1,
                message: "non-numeric vector component".into(),
            })?;
            if i == 0 && values.len() == 1 {
                continue;
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::MalformedRecord {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message: format!("expected {d} components, got {}", values.len()),
                    })
                }
                _ => {}
            }
            if let Some(&idx) = self.index.get(tok) {
                vectors[idx] = Some(values);
                hits += 1;
            }
        }
        let dim = dim.ok_or_else(|| Error::EmptyInput(path.display().to_string()))?;
        self.pretrained = Some(PretrainedVectors { dim, vectors });
        Ok(hits)
    }
}

/// A `(max_sents, max_words)` grid of token indices with a real-token mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextGrid {
    pub max_sents: usize,
    pub max_words: usize,
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
}

impl TextGrid {
    pub fn id(&self, sent: usize, word: usize) -> usize {
        self.ids[sent * self.max_words + word]
    }

    pub fn is_real(&self, sent: usize, word: usize) -> bool {
        self.mask[sent * self.max_words + word]
    }

    pub fn sentence_len(&self, sent: usize) -> usize {
        (0..self.max_words).filter(|&w| self.is_real(sent, w)).count()
    }

    pub fn num_real_sentences(&self) -> usize {
        (0..self.max_sents)
            .filter(|&s| self.sentence_len(s) > 0)
            .count()
    }

    pub fn mask_sum(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Real token indices per non-empty sentence.
    pub fn decode(&self) -> Vec<Vec<usize>> {
        (0..self.max_sents)
            .map(|s| {
                (0..self.max_words)
                    .filter(|&w| self.is_real(s, w))
                    .map(|w| self.id(s, w))
                    .collect::<Vec<_>>()
            })
            .filter(|s| !s.is_empty())
            .collect()
    }
}

/// Pads or truncates to exactly `(max_sents, max_words)`, keeping the first
/// sentences and the first words of each.
pub fn encode_text<T: Text + ?Sized>(
    doc: &T,
    vocab: &Vocabulary,
    max_sents: usize,
    max_words: usize,
) -> TextGrid {
    assert!(max_sents >= 1 && max_words >= 1, "grid dimensions must be positive");
    let mut ids = vec![PAD; max_sents * max_words];
    let mut mask = vec![false; max_sents * max_words];
    for (s, sent) in doc.sentences().iter().take(max_sents).enumerate() {
        for (w, tok) in sent.iter().take(max_words).enumerate() {
            ids[s * max_words + w] = vocab.index_of(tok);
            mask[s * max_words + w] = true;
        }
    }
    TextGrid {
        max_sents,
        max_words,
        ids,
        mask,
    }
}
