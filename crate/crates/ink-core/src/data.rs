//! Stroke data model and the JSON corpus format.
//!
//! A "stroke" here is a single sampled trajectory point `(u, v, pen)`; a
//! pen-down run of points renders as one visible line. Every point carries
//! three labels: the character it belongs to (`y`), whether it is the last
//! point of that character (`eoc`), and whether it begins a new word (`bow`).

use serde_json::{json, Map, Value};
use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Symbols covered by the full model, in index order.
pub const FULL_ALPHABET: &str =
    "0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ'.,-()/";

/// One sampled pen position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrokePoint {
    pub u: f64,
    pub v: f64,
    /// 1 when the pen is lifted at this point, 0 otherwise.
    pub pen: u8,
}

/// One handwritten sequence with per-point labels.
#[derive(Debug, Clone, PartialEq)]
pub struct InkSample {
    pub points: Vec<StrokePoint>,
    /// Character index of each point.
    pub y: Vec<usize>,
    /// 1 on the last point of each character.
    pub eoc: Vec<u8>,
    /// 1 on the first point of each word.
    pub bow: Vec<u8>,
    pub author: String,
    pub text: String,
    /// Set when a hard split had to cut without an eoc boundary.
    pub hard_split: bool,
}

impl InkSample {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Check internal label consistency against an alphabet of size `k`.
    pub fn validate(&self, k: usize) -> Result<()> {
        let t = self.points.len();
        for (field, len) in [("y", self.y.len()), ("eoc", self.eoc.len()), ("bow", self.bow.len())] {
            if len != t {
                return Err(Error::data(format!(
                    "label length mismatch: {field} has {len} entries for {t} points"
                )));
            }
        }
        if let Some(i) = self.y.iter().position(|&y| y >= k) {
            return Err(Error::data(format!(
                "label y[{i}] = {} out of range for alphabet size {k}",
                self.y[i]
            )));
        }
        for (field, labels) in [("eoc", &self.eoc), ("bow", &self.bow)] {
            if let Some(i) = labels.iter().position(|&b| b > 1) {
                return Err(Error::data(format!("{field}[{i}] must be 0 or 1")));
            }
        }
        if let Some(i) = self.points.iter().position(|p| p.pen > 1) {
            return Err(Error::data(format!("points[{i}] pen must be 0 or 1")));
        }
        if let Some(i) = self
            .points
            .iter()
            .position(|p| !p.u.is_finite() || !p.v.is_finite())
        {
            return Err(Error::data(format!("points[{i}] has non-finite coordinates")));
        }
        Ok(())
    }
}

/// Ordered symbol set with a char-to-index map.
#[derive(Debug, Clone, PartialEq)]
pub struct Alphabet {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
}

impl Alphabet {
    pub fn new(symbols: &str) -> Result<Self> {
        let chars: Vec<char> = symbols.chars().collect();
        if chars.is_empty() {
            return Err(Error::data("alphabet must not be empty"));
        }
        let mut index = HashMap::new();
        for (i, &c) in chars.iter().enumerate() {
            if index.insert(c, i).is_some() {
                return Err(Error::data(format!("alphabet has duplicate symbol {c:?}")));
            }
        }
        Ok(Alphabet { symbols: chars, index })
    }

    pub fn full() -> Self {
        Alphabet::new(FULL_ALPHABET).expect("builtin alphabet is valid")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn symbol(&self, i: usize) -> Option<char> {
        self.symbols.get(i).copied()
    }

    pub fn as_string(&self) -> String {
        self.symbols.iter().collect()
    }
}

/// A labeled set of ink samples sharing one alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub alphabet: Alphabet,
    pub samples: Vec<InkSample>,
}

impl Corpus {
    pub fn new(alphabet: Alphabet, samples: Vec<InkSample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            s.validate(alphabet.len())
                .map_err(|e| Error::data(format!("sample {i}: {e}")))?;
        }
        Ok(Corpus { alphabet, samples })
    }
}

/// Aggregate counts over a corpus.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct CorpusReport {
    pub samples: usize,
    pub authors: usize,
    pub word_instances: usize,
    pub unique_words: usize,
    pub characters: usize,
}

/// Count samples, distinct authors, word instances, unique words, and
/// non-space characters.
pub fn corpus_report(corpus: &Corpus) -> CorpusReport {
    let mut authors = std::collections::BTreeSet::new();
    let mut words = std::collections::BTreeSet::new();
    let mut word_instances = 0;
    let mut characters = 0;
    for s in &corpus.samples {
        authors.insert(s.author.as_str());
        for w in s.text.split_whitespace() {
            word_instances += 1;
            words.insert(w);
            characters += w.chars().count();
        }
    }
    CorpusReport {
        samples: corpus.samples.len(),
        authors: authors.len(),
        word_instances,
        unique_words: words.len(),
        characters,
    }
}

// ── JSON serialization ──────────────────────────────────────────────────
//
// Canonical form: serde_json's default map (BTree-backed) sorts keys and
// its float formatting is the shortest round-trip decimal, so serializing
// the same corpus twice is byte-identical.

fn sample_to_value(s: &InkSample) -> Value {
    let points: Vec<Value> = s
        .points
        .iter()
        .map(|p| json!([p.u, p.v, p.pen]))
        .collect();
    let mut obj = Map::new();
    obj.insert("author".into(), json!(s.author));
    obj.insert("text".into(), json!(s.text));
    obj.insert("points".into(), Value::Array(points));
    obj.insert("y".into(), json!(s.y));
    obj.insert("eoc".into(), json!(s.eoc));
    obj.insert("bow".into(), json!(s.bow));
    Value::Object(obj)
}

pub fn corpus_to_json(corpus: &Corpus) -> Value {
    let samples: Vec<Value> = corpus.samples.iter().map(sample_to_value).collect();
    let mut obj = Map::new();
    obj.insert("version".into(), json!(1));
    obj.insert("alphabet".into(), json!(corpus.alphabet.as_string()));
    obj.insert("samples".into(), Value::Array(samples));
    Value::Object(obj)
}

fn field<'a>(obj: &'a Map<String, Value>, ctx: &str, name: &str) -> Result<&'a Value> {
    obj.get(name)
        .ok_or_else(|| Error::data(format!("{ctx}: missing field {name:?}")))
}

fn as_f64(v: &Value, ctx: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::data(format!("{ctx}: expected a number")))
}

fn as_bit(v: &Value, ctx: &str) -> Result<u8> {
    match v.as_u64() {
        Some(0) => Ok(0),
        Some(1) => Ok(1),
        _ => Err(Error::data(format!("{ctx}: expected 0 or 1"))),
    }
}

fn sample_from_value(v: &Value, idx: usize) -> Result<InkSample> {
    let ctx = format!("sample {idx}");
    let obj = v
        .as_object()
        .ok_or_else(|| Error::data(format!("{ctx}: expected an object")))?;
    let author = field(obj, &ctx, "author")?
        .as_str()
        .ok_or_else(|| Error::data(format!("{ctx}: field \"author\" must be a string")))?
        .to_string();
    let text = field(obj, &ctx, "text")?
        .as_str()
        .ok_or_else(|| Error::data(format!("{ctx}: field \"text\" must be a string")))?
        .to_string();

    let raw_points = field(obj, &ctx, "points")?
        .as_array()
        .ok_or_else(|| Error::data(format!("{ctx}: field \"points\" must be an array")))?;
    let mut points = Vec::with_capacity(raw_points.len());
    for (i, p) in raw_points.iter().enumerate() {
        let pctx = format!("{ctx}: points[{i}]");
        let triple = p
            .as_array()
            .filter(|a| a.len() == 3)
            .ok_or_else(|| Error::data(format!("{pctx}: expected [u, v, pen]")))?;
        points.push(StrokePoint {
            u: as_f64(&triple[0], &pctx)?,
            v: as_f64(&triple[1], &pctx)?,
            pen: as_bit(&triple[2], &format!("{pctx} pen"))?,
        });
    }

    let y_raw = field(obj, &ctx, "y")?
        .as_array()
        .ok_or_else(|| Error::data(format!("{ctx}: field \"y\" must be an array")))?;
    let mut y = Vec::with_capacity(y_raw.len());
    for (i, v) in y_raw.iter().enumerate() {
        y.push(
            v.as_u64()
                .ok_or_else(|| Error::data(format!("{ctx}: y[{i}] must be a non-negative integer")))?
                as usize,
        );
    }

    let bits = |name: &str| -> Result<Vec<u8>> {
        let raw = field(obj, &ctx, name)?
            .as_array()
            .ok_or_else(|| Error::data(format!("{ctx}: field {name:?} must be an array")))?;
        raw.iter()
            .enumerate()
            .map(|(i, v)| as_bit(v, &format!("{ctx}: {name}[{i}]")))
            .collect()
    };
    let eoc = bits("eoc")?;
    let bow = bits("bow")?;

    Ok(InkSample {
        points,
        y,
        eoc,
        bow,
        author,
        text,
        hard_split: false,
    })
}

pub fn corpus_from_json(v: &Value) -> Result<Corpus> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::data("corpus: expected a JSON object"))?;
    let version = field(obj, "corpus", "version")?
        .as_u64()
        .ok_or_else(|| Error::data("corpus: field \"version\" must be an integer"))?;
    if version != 1 {
        return Err(Error::data(format!("corpus: unsupported version {version}")));
    }
    let alphabet = Alphabet::new(
        field(obj, "corpus", "alphabet")?
            .as_str()
            .ok_or_else(|| Error::data("corpus: field \"alphabet\" must be a string"))?,
    )?;
    let raw_samples = field(obj, "corpus", "samples")?
        .as_array()
        .ok_or_else(|| Error::data("corpus: field \"samples\" must be an array"))?;
    let mut samples = Vec::with_capacity(raw_samples.len());
    for (i, s) in raw_samples.iter().enumerate() {
        let sample = sample_from_value(s, i)?;
        sample
            .validate(alphabet.len())
            .map_err(|e| Error::data(format!("sample {i}: {e}")))?;
        samples.push(sample);
    }
    Ok(Corpus { alphabet, samples })
}

/// Serialize a corpus to its canonical JSON text.
pub fn corpus_to_string(corpus: &Corpus) -> String {
    serde_json::to_string(&corpus_to_json(corpus)).expect("corpus serialization cannot fail")
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, corpus_to_string(corpus).as_bytes())
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::data(format!("{} is not valid JSON: {e}", path.display())))?;
    corpus_from_json(&value)
}
