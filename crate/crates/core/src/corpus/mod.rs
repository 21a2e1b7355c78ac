//! Claims, evidence documents and relevance annotations.
//!
//! Everything is read from line-delimited JSON files. A document carries an
//! ordered list of sentences and an ordered list of images; either list may be
//! empty but not both. Documents may also arrive as `raw_text`, in which case
//! they are split into sentences by [`Segmenter`] and given generated ids of
//! the form `<doc_id>-s<k>`.

mod annotations;
mod labels;
mod segment;

pub use annotations::{load_annotations, parse_annotations, Modality, RelevanceAnnotation, RelevanceLevel};
pub use labels::{collapse_factify_labels, VerdictLabel};
pub use segment::{segment_document, Segmenter, DEFAULT_ABBREVIATIONS};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("unknown verdict label {0:?}")]
    UnknownLabel(String),
}

impl CorpusError {
    fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        CorpusError::Parse {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub sent_id: String,
    #[serde(skip)]
    pub doc_id: String,
    pub text: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub image_id: String,
    #[serde(skip)]
    pub doc_id: String,
    pub uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alt_text: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceDoc {
    pub doc_id: String,
    pub sentences: Vec<Sentence>,
    pub images: Vec<ImageRef>,
    pub extra: Map<String, Value>,
}

#[derive(Debug, Deserialize)]
struct DocumentRecord {
    doc_id: String,
    #[serde(default)]
    sentences: Option<Vec<Sentence>>,
    #[serde(default)]
    raw_text: Option<String>,
    #[serde(default)]
    images: Vec<ImageRef>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Serialize)]
struct DocumentOut<'a> {
    doc_id: &'a str,
    sentences: &'a [Sentence],
    images: &'a [ImageRef],
    #[serde(flatten)]
    extra: &'a Map<String, Value>,
}

/// Where an evidence item lives: document position and item position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    doc: usize,
    item: usize,
}

/// An immutable evidence collection with global id indexes.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<EvidenceDoc>,
    doc_index: HashMap<String, usize>,
    sentence_index: HashMap<String, Slot>,
    image_index: HashMap<String, Slot>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.docs == other.docs
    }
}

impl Corpus {
    pub fn from_docs(docs: Vec<EvidenceDoc>) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::default();
        for doc in docs {
            corpus.insert(doc)?;
        }
        Ok(corpus)
    }

    fn insert(&mut self, mut doc: EvidenceDoc) -> Result<(), CorpusError> {
        if doc.doc_id.is_empty() {
            return Err(CorpusError::Integrity("empty doc_id".into()));
        }
        if self.doc_index.contains_key(&doc.doc_id) {
            return Err(CorpusError::Integrity(format!("duplicate doc_id {:?}", doc.doc_id)));
        }
        if doc.sentences.is_empty() && doc.images.is_empty() {
            return Err(CorpusError::Integrity(format!(
                "document {:?} has neither sentences nor images",
                doc.doc_id
            )));
        }
        let pos = self.docs.len();
        for (k, s) in doc.sentences.iter_mut().enumerate() {
            s.doc_id = doc.doc_id.clone();
            if s.sent_id.is_empty() {
                return Err(CorpusError::Integrity(format!("empty sent_id in {:?}", doc.doc_id)));
            }
            if s.text.trim().is_empty() {
                return Err(CorpusError::Integrity(format!("sentence {:?} has empty text", s.sent_id)));
            }
            if self.is_known_id(&s.sent_id) {
                return Err(CorpusError::Integrity(format!("duplicate id {:?}", s.sent_id)));
            }
            self.sentence_index.insert(s.sent_id.clone(), Slot { doc: pos, item: k });
        }
        for (k, img) in doc.images.iter_mut().enumerate() {
            img.doc_id = doc.doc_id.clone();
            if img.image_id.is_empty() {
                return Err(CorpusError::Integrity(format!("empty image_id in {:?}", doc.doc_id)));
            }
            if img.uri.is_empty() {
                return Err(CorpusError::Integrity(format!("image {:?} has empty uri", img.image_id)));
            }
            if self.is_known_id(&img.image_id) {
                return Err(CorpusError::Integrity(format!("duplicate id {:?}", img.image_id)));
            }
            self.image_index.insert(img.image_id.clone(), Slot { doc: pos, item: k });
        }
        self.doc_index.insert(doc.doc_id.clone(), pos);
        self.docs.push(doc);
        Ok(())
    }

    fn is_known_id(&self, id: &str) -> bool {
        self.sentence_index.contains_key(id) || self.image_index.contains_key(id)
    }

    /// Number of documents (m).
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[EvidenceDoc] {
        &self.docs
    }

    pub fn doc(&self, doc_id: &str) -> Option<&EvidenceDoc> {
        self.doc_index.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn sentence(&self, sent_id: &str) -> Option<&Sentence> {
        self.sentence_index
            .get(sent_id)
            .map(|s| &self.docs[s.doc].sentences[s.item])
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageRef> {
        self.image_index
            .get(image_id)
            .map(|s| &self.docs[s.doc].images[s.item])
    }

    /// Document owning a sentence or image id.
    pub fn doc_of(&self, id: &str) -> Option<&EvidenceDoc> {
        self.sentence_index
            .get(id)
            .or_else(|| self.image_index.get(id))
            .map(|s| &self.docs[s.doc])
    }

    pub fn sentence_count(&self) -> usize {
        self.sentence_index.len()
    }

    pub fn image_count(&self) -> usize {
        self.image_index.len()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.docs.iter().flat_map(|d| d.sentences.iter())
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageRef> {
        self.docs.iter().flat_map(|d| d.images.iter())
    }

    /// Writes the corpus in pre-segmented form, one document per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for doc in &self.docs {
            let rec = DocumentOut {
                doc_id: &doc.doc_id,
                sentences: &doc.sentences,
                images: &doc.images,
                extra: &doc.extra,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Iterates the non-blank lines of a file with their 1-based line numbers.
pub(crate) fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    load_corpus_with(path, &Segmenter::default())
}

pub fn load_corpus_with(path: &Path, segmenter: &Segmenter) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    for (line_no, line) in read_lines(path)? {
        let rec: DocumentRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::parse(path, line_no, e.to_string()))?;
        let sentences = match (rec.sentences, rec.raw_text) {
            (Some(s), _) => s,
            (None, Some(raw)) => segmenter
                .segment(&raw)
                .into_iter()
                .enumerate()
                .map(|(k, text)| Sentence {
                    sent_id: format!("{}-s{}", rec.doc_id, k),
                    doc_id: rec.doc_id.clone(),
                    text,
                    extra: Map::new(),
                })
                .collect(),
            (None, None) => Vec::new(),
        };
        corpus
            .insert(EvidenceDoc {
                doc_id: rec.doc_id,
                sentences,
                images: rec.images,
                extra: rec.extra,
            })
            .map_err(|e| match e {
                CorpusError::Integrity(msg) => CorpusError::Integrity(format!("{}:{}: {}", path.display(), line_no, msg)),
                other => other,
            })?;
    }
    Ok(corpus)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub claim_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<VerdictLabel>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub gold_sentence_ids: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub gold_image_ids: BTreeSet<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Claim {
    pub fn new(claim_id: impl Into<String>, text: impl Into<String>) -> Self {
        Claim {
            claim_id: claim_id.into(),
            text: text.into(),
            gold_label: None,
            gold_sentence_ids: BTreeSet::new(),
            gold_image_ids: BTreeSet::new(),
            extra: Map::new(),
        }
    }

    pub fn gold_ids(&self, modality: Modality) -> &BTreeSet<String> {
        match modality {
            Modality::Text => &self.gold_sentence_ids,
            Modality::Image => &self.gold_image_ids,
        }
    }
}

pub fn load_claims(path: &Path) -> Result<Vec<Claim>, CorpusError> {
    let mut seen = HashSet::new();
    let mut claims = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let claim: Claim =
            serde_json::from_str(&line).map_err(|e| CorpusError::parse(path, line_no, e.to_string()))?;
        if claim.claim_id.is_empty() {
            return Err(CorpusError::parse(path, line_no, "empty claim_id"));
        }
        if claim.text.trim().is_empty() {
            return Err(CorpusError::parse(path, line_no, format!("claim {:?} has empty text", claim.claim_id)));
        }
        if !seen.insert(claim.claim_id.clone()) {
            return Err(CorpusError::Integrity(format!("duplicate claim_id {:?}", claim.claim_id)));
        }
        claims.push(claim);
    }
    Ok(claims)
}

pub fn write_claims<W: Write>(claims: &[Claim], mut out: W) -> std::io::Result<()> {
    for c in claims {
        serde_json::to_writer(&mut out, c)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    const TWO_DOCS: &str = r#"{"doc_id":"d1","sentences":[{"sent_id":"d1-s0","text":"First."},{"sent_id":"d1-s1","text":"Second."}],"images":[{"image_id":"d1-i0","uri":"img/a.jpg"}]}
{"doc_id":"d2","sentences":[{"sent_id":"d2-s0","text":"Only one."}],"images":[]}
"#;

    #[test]
    fn loads_two_documents() {
        let f = write_tmp(TWO_DOCS);
        let c = load_corpus(f.path()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.sentence_count(), 3);
        assert_eq!(c.image_count(), 1);
        assert_eq!(c.doc_of("d1-i0").unwrap().doc_id, "d1");
        assert_eq!(c.sentence("d2-s0").unwrap().doc_id, "d2");
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let f = write_tmp("");
        let c = load_corpus(f.path()).unwrap();
        assert_eq!(c.len(), 0);
        assert!(c.is_empty());
    }

    #[test]
    fn duplicate_sentence_id_names_the_id() {
        let f = write_tmp(
            r#"{"doc_id":"d1","sentences":[{"sent_id":"d1-s0","text":"A."},{"sent_id":"d1-s0","text":"B."}]}"#,
        );
        let err = load_corpus(f.path()).unwrap_err();
        assert!(matches!(err, CorpusError::Integrity(_)));
        assert!(err.to_string().contains("d1-s0"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_tmp("{\"doc_id\":\"d1\",\"sentences\":[{\"sent_id\":\"a\",\"text\":\"x\"}]}\n{oops\n");
        match load_corpus(f.path()).unwrap_err() {
            CorpusError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn raw_text_is_segmented_with_generated_ids() {
        let f = write_tmp(r#"{"doc_id":"d9","raw_text":"A. B? C!","images":[]}"#);
        let c = load_corpus(f.path()).unwrap();
        let ids: Vec<_> = c.sentences().map(|s| s.sent_id.as_str()).collect();
        assert_eq!(ids, ["d9-s0", "d9-s1", "d9-s2"]);
        assert_eq!(c.sentence("d9-s1").unwrap().text, "B?");
    }

    #[test]
    fn document_without_content_is_rejected() {
        let f = write_tmp(r#"{"doc_id":"d1","sentences":[],"images":[]}"#);
        assert!(matches!(load_corpus(f.path()), Err(CorpusError::Integrity(_))));
    }

    #[test]
    fn extra_fields_survive_a_round_trip() {
        let f = write_tmp(
            r#"{"doc_id":"d1","source":"web","sentences":[{"sent_id":"x","text":"T.","lang":"en"}],"images":[{"image_id":"y","uri":"u","alt_text":"alt","w":3}]}"#,
        );
        let c = load_corpus(f.path()).unwrap();
        let mut buf = Vec::new();
        c.write_jsonl(&mut buf).unwrap();
        let g = write_tmp(std::str::from_utf8(&buf).unwrap());
        let c2 = load_corpus(g.path()).unwrap();
        assert_eq!(c, c2);
        assert_eq!(c2.docs()[0].extra["source"], "web");
        assert_eq!(c2.sentence("x").unwrap().extra["lang"], "en");
    }

    #[test]
    fn claims_parse_gold_fields() {
        let f = write_tmp(
            r#"{"claim_id":"c1","text":"Sky is green.","gold_label":"refuted","gold_sentence_ids":["d1-s0"]}
{"claim_id":"c2","text":"Water is wet.","gold_label":"Support_Text"}
{"claim_id":"c3","text":"Unknown."}"#,
        );
        let claims = load_claims(f.path()).unwrap();
        assert_eq!(claims[0].gold_label, Some(VerdictLabel::Refuted));
        assert!(claims[0].gold_sentence_ids.contains("d1-s0"));
        assert_eq!(claims[1].gold_label, Some(VerdictLabel::Supported));
        assert_eq!(claims[2].gold_label, None);
    }

    #[test]
    fn duplicate_claim_ids_are_rejected() {
        let f = write_tmp("{\"claim_id\":\"c1\",\"text\":\"a\"}\n{\"claim_id\":\"c1\",\"text\":\"b\"}\n");
        assert!(matches!(load_claims(f.path()), Err(CorpusError::Integrity(_))));
    }
}
