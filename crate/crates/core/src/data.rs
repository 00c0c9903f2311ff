//! NLI datasets: JSONL loading, triplet construction and a synthetic corpus.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Entailment,
    Neutral,
    Contradiction,
}

impl Label {
    /// Two-way collapse: only entailment is positive.
    pub fn is_entailment(self) -> bool {
        self == Label::Entailment
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "entailment" => Ok(Label::Entailment),
            "neutral" => Ok(Label::Neutral),
            "contradiction" => Ok(Label::Contradiction),
            _ => Err(Error::UnknownLabel(s.to_string())),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Entailment => "entailment",
            Label::Neutral => "neutral",
            Label::Contradiction => "contradiction",
        })
    }
}

/// A labelled premise–hypothesis pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NliExample {
    pub premise: String,
    pub hypothesis: String,
    pub label: Label,
    /// Two-way entailment (SICK style); such pairs have no direction.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bilateral: Option<bool>,
}

impl NliExample {
    pub fn new(premise: impl Into<String>, hypothesis: impl Into<String>, label: Label) -> Self {
        Self { premise: premise.into(), hypothesis: hypothesis.into(), label, bilateral: None }
    }

    pub fn is_bilateral(&self) -> bool {
        self.bilateral.unwrap_or(false)
    }
}

#[derive(Deserialize)]
struct RawExample {
    premise: String,
    hypothesis: String,
    label: String,
    #[serde(default)]
    bilateral: Option<bool>,
}

/// Examples read from a file plus the number of unlabeled (`"-"`) lines skipped.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Loaded {
    pub examples: Vec<NliExample>,
    pub skipped: usize,
}

/// Parse JSONL from any reader; `path` is only used in error messages.
pub fn parse_jsonl<R: BufRead>(reader: R, path: &Path) -> Result<Loaded> {
    let mut out = Loaded::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { path: path.to_path_buf(), line: lineno, message };
        let raw: RawExample = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if raw.label.trim() == "-" {
            out.skipped += 1;
            continue;
        }
        let label: Label = raw.label.parse().map_err(|e: Error| err(e.to_string()))?;
        if raw.premise.is_empty() || raw.hypothesis.is_empty() {
            return Err(err("empty premise or hypothesis".into()));
        }
        out.examples.push(NliExample {
            premise: raw.premise,
            hypothesis: raw.hypothesis,
            label,
            bilateral: raw.bilateral,
        });
    }
    Ok(out)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Loaded> {
    let path = path.as_ref();
    parse_jsonl(BufReader::new(File::open(path)?), path)
}

pub fn write_jsonl<W: Write>(w: &mut W, examples: &[NliExample]) -> Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut *w, ex).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_jsonl(path: impl AsRef<Path>, examples: &[NliExample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_jsonl(&mut w, examples)?;
    w.flush()?;
    Ok(())
}

/// Premise with one entailed and one contradicted hypothesis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub premise: String,
    pub entailed: String,
    pub contradicted: String,
}

impl Triplet {
    pub fn new(
        premise: impl Into<String>,
        entailed: impl Into<String>,
        contradicted: impl Into<String>,
    ) -> Result<Self> {
        let t =
            Self { premise: premise.into(), entailed: entailed.into(), contradicted: contradicted.into() };
        if t.premise.is_empty() || t.entailed.is_empty() || t.contradicted.is_empty() {
            return Err(Error::EmptyInput("triplet sentence"));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
    /// Premises that had no entailment or no contradiction hypothesis.
    pub dropped_premises: usize,
}

/// Group by exact premise text, then pair the k-th entailment hypothesis
/// with the k-th contradiction hypothesis. Groups are emitted in order of
/// first appearance.
pub fn build_triplets(examples: &[NliExample]) -> TripletSet {
    let mut groups: IndexMap<&str, (Vec<&str>, Vec<&str>)> = IndexMap::new();
    for ex in examples {
        let entry = groups.entry(ex.premise.as_str()).or_default();
        match ex.label {
            Label::Entailment => entry.0.push(&ex.hypothesis),
            Label::Contradiction => entry.1.push(&ex.hypothesis),
            Label::Neutral => {}
        }
    }
    let mut out = TripletSet::default();
    for (premise, (ent, con)) in groups {
        if ent.is_empty() || con.is_empty() {
            out.dropped_premises += 1;
            continue;
        }
        out.triplets.extend(ent.iter().zip(&con).map(|(e, c)| Triplet {
            premise: premise.to_string(),
            entailed: e.to_string(),
            contradicted: c.to_string(),
        }));
    }
    out
}

/// Concatenate datasets in order, without deduplication.
pub fn combine(datasets: &[&[NliExample]]) -> Vec<NliExample> {
    datasets.iter().flat_map(|d| d.iter().cloned()).collect()
}

/// Settings for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub vocab: usize,
    /// Number of premises; each yields one entailment and one contradiction example.
    pub count: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { vocab: 200, count: 2000, min_len: 6, max_len: 14, seed: 0 }
    }
}

fn word(id: usize) -> String {
    format!("w{id}")
}

/// Desk-scale stand-in for an NLI training corpus.
///
/// The vocabulary is split in half. The first half feeds premises and
/// entailed hypotheses and is itself split into head words and modifier
/// words; the second half feeds contradicted hypotheses only. A premise
/// mixes at least one head word with at least one modifier. Its entailed
/// hypothesis keeps every head word and drops between one and all of the
/// modifiers, so it is a strictly shorter subsequence with the content words
/// intact. The contradicted hypothesis is a fresh sequence over the second
/// half, so it shares no token with the premise.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<NliExample>> {
    let SynthConfig { vocab, count, min_len, max_len, seed } = *config;
    if vocab < 20 {
        return Err(Error::Config(format!("vocab must be at least 20, got {vocab}")));
    }
    if min_len < 3 || max_len < min_len {
        return Err(Error::Config(format!(
            "length range must satisfy 3 ≤ min ≤ max, got {min_len}..={max_len}"
        )));
    }
    let half = vocab / 2;
    let heads = half / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count * 2);
    for _ in 0..count {
        let len = rng.random_range(min_len..=max_len);
        let n_mod = rng.random_range(1..len);
        let mut tokens: Vec<(usize, bool)> = (0..len)
            .map(|i| {
                if i < n_mod {
                    (rng.random_range(heads..half), true)
                } else {
                    (rng.random_range(0..heads), false)
                }
            })
            .collect();
        tokens.shuffle(&mut rng);

        let n_drop = rng.random_range(1..=n_mod);
        let mut modifier_slots: Vec<usize> = (0..len).filter(|&i| tokens[i].1).collect();
        modifier_slots.shuffle(&mut rng);
        let mut keep = vec![true; len];
        for &slot in &modifier_slots[..n_drop] {
            keep[slot] = false;
        }

        let premise: Vec<String> = tokens.iter().map(|&(t, _)| word(t)).collect();
        let entailed: Vec<String> =
            tokens.iter().zip(&keep).filter(|(_, &k)| k).map(|(&(t, _), _)| word(t)).collect();
        let con_len = rng.random_range(min_len..=max_len);
        let contradicted: Vec<String> = (0..con_len).map(|_| word(rng.random_range(half..vocab))).collect();

        let premise = premise.join(" ");
        out.push(NliExample::new(premise.clone(), entailed.join(" "), Label::Entailment));
        out.push(NliExample::new(premise, contradicted.join(" "), Label::Contradiction));
    }
    Ok(out)
}
