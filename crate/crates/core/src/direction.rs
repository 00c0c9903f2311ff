//! Entailment-direction prediction and the sentence-length baseline.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::data::{Label, NliExample};
use crate::encoder::{tokenize, Model};
use crate::error::{Error, Result};
use crate::gaussian::similarity;
use crate::par;

pub const DEFAULT_BIN_WIDTH: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AEntailsB,
    BEntailsA,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirectionPrediction {
    pub direction: Direction,
    /// The two similarities were exactly equal; `direction` is then
    /// `AEntailsB` by convention but carries no information.
    pub tie: bool,
}

/// `a` entails `b` iff `sim(b‖a) > sim(a‖b)`: the entailed sentence sits
/// inside the wider entailing one.
pub fn predict_direction(a: &str, b: &str, model: &Model) -> Result<DirectionPrediction> {
    let ea = model.encode(a)?;
    let eb = model.encode(b)?;
    let b_given_a = similarity(&eb, &ea)?;
    let a_given_b = similarity(&ea, &eb)?;
    Ok(DirectionPrediction {
        direction: if b_given_a >= a_given_b { Direction::AEntailsB } else { Direction::BEntailsA },
        tie: b_given_a == a_given_b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionReport {
    pub accuracy: f64,
    pub evaluated: usize,
    pub correct: usize,
    pub ties: usize,
    pub excluded_bilateral: usize,
}

/// Drop bilateral pairs; everything left must be labelled entailment.
fn directional_pairs(pairs: &[NliExample]) -> Result<(Vec<&NliExample>, usize)> {
    let mut kept = Vec::with_capacity(pairs.len());
    let mut excluded = 0;
    for (index, p) in pairs.iter().enumerate() {
        if p.label != Label::Entailment {
            return Err(Error::Example {
                index,
                source: Box::new(Error::Config(format!(
                    "direction evaluation needs entailment pairs, found {}",
                    p.label
                ))),
            });
        }
        if p.is_bilateral() {
            excluded += 1;
        } else {
            kept.push(p);
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyInput("entailment pairs after bilateral exclusion"));
    }
    Ok((kept, excluded))
}

fn report(outcomes: &[(bool, bool)], excluded_bilateral: usize) -> DirectionReport {
    let correct = outcomes.iter().filter(|(ok, _)| *ok).count();
    DirectionReport {
        accuracy: correct as f64 / outcomes.len() as f64,
        evaluated: outcomes.len(),
        correct,
        ties: outcomes.iter().filter(|(_, tie)| *tie).count(),
        excluded_bilateral,
    }
}

/// Fraction of pairs where the premise is predicted as the entailing side.
/// Ties count as wrong.
pub fn direction_accuracy(pairs: &[NliExample], model: &Model) -> Result<DirectionReport> {
    let (kept, excluded) = directional_pairs(pairs)?;
    let outcomes = par::try_map(&kept, |index, p| {
        predict_direction(&p.premise, &p.hypothesis, model)
            .map(|d| (!d.tie && d.direction == Direction::AEntailsB, d.tie))
            .map_err(|e| Error::Example { index, source: Box::new(e) })
    })?;
    Ok(report(&outcomes, excluded))
}

/// Predict the sentence with strictly more tokens as entailing. Equal
/// lengths count as wrong.
pub fn length_baseline(pairs: &[NliExample]) -> Result<DirectionReport> {
    let (kept, excluded) = directional_pairs(pairs)?;
    let outcomes: Vec<(bool, bool)> = kept
        .iter()
        .map(|p| {
            let (lp, lh) = (tokenize(&p.premise).len(), tokenize(&p.hypothesis).len());
            (lp > lh, lp == lh)
        })
        .collect();
    Ok(report(&outcomes, excluded))
}

/// Counts of `ln(|premise| / |hypothesis|)` in bins of `bin_width` centred on
/// multiples of the width (so one bin is centred at 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    /// `(bin index, count)`, contiguous from the lowest to the highest
    /// occupied bin. The centre of bin `i` is `i * bin_width`.
    pub bins: Vec<(i64, usize)>,
}

impl Histogram {
    pub fn center(&self, index: i64) -> f64 {
        index as f64 * self.bin_width
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|(_, c)| c).sum()
    }

    /// `bin_center count` rows, tab separated, with a header.
    pub fn write_tsv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "bin_center\tcount")?;
        for &(i, c) in &self.bins {
            writeln!(w, "{:.6}\t{c}", self.center(i))?;
        }
        Ok(())
    }
}

pub fn length_ratio_histogram(pairs: &[NliExample], bin_width: f64) -> Result<Histogram> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::Config(format!("bin width must be positive, got {bin_width}")));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput("sentence pairs"));
    }
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for (index, p) in pairs.iter().enumerate() {
        let (lp, lh) = (tokenize(&p.premise).len(), tokenize(&p.hypothesis).len());
        if lp == 0 || lh == 0 {
            let text = if lp == 0 { &p.premise } else { &p.hypothesis };
            return Err(Error::Example { index, source: Box::new(Error::EmptySentence(text.clone())) });
        }
        let ratio = (lp as f64 / lh as f64).ln();
        *counts.entry((ratio / bin_width).round() as i64).or_default() += 1;
    }
    let (lo, hi) = match (counts.keys().next(), counts.keys().next_back()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => unreachable!("pairs is non-empty"),
    };
    let bins = (lo..=hi).map(|i| (i, counts.get(&i).copied().unwrap_or(0))).collect();
    Ok(Histogram { bin_width, bins })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{BaseEncoder, PrecomputedVectors, ProjectionHeads};
    use std::sync::Arc;

    fn ent(p: &str, h: &str) -> NliExample {
        NliExample::new(p, h, Label::Entailment)
    }

    /// One-dimensional model whose variance is softplus(log-variance entry).
    fn variance_model(entries: &[(&str, f32)]) -> Model {
        let mut v = PrecomputedVectors::new(1);
        for (t, x) in entries {
            v.insert(*t, &[*x]).unwrap();
        }
        let heads = ProjectionHeads::from_parts(1, 1, vec![0.0], vec![0.0], vec![1.0], vec![0.0]).unwrap();
        Model::new(BaseEncoder::Precomputed(Arc::new(v)), heads).unwrap()
    }

    #[test]
    fn identical_sentences_tie() {
        let m = variance_model(&[("x", 0.3)]);
        let d = predict_direction("x", "x", &m).unwrap();
        assert!(d.tie);
        let r = direction_accuracy(&[ent("x", "x"), ent("x", "x")], &m).unwrap();
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.ties, 2);
    }

    #[test]
    fn wider_sentence_entails() {
        let m = variance_model(&[("wide", 3.0), ("narrow", -1.0)]);
        let d = predict_direction("wide", "narrow", &m).unwrap();
        assert_eq!(d.direction, Direction::AEntailsB);
        assert!(!d.tie);
        let d = predict_direction("narrow", "wide", &m).unwrap();
        assert_eq!(d.direction, Direction::BEntailsA);
        assert_eq!(direction_accuracy(&[ent("wide", "narrow")], &m).unwrap().accuracy, 1.0);
        assert_eq!(direction_accuracy(&[ent("narrow", "wide")], &m).unwrap().accuracy, 0.0);
    }

    #[test]
    fn bilateral_pairs_are_excluded() {
        let m = variance_model(&[("wide", 3.0), ("narrow", -1.0)]);
        let mut bi = ent("narrow", "wide");
        bi.bilateral = Some(true);
        let r = direction_accuracy(&[ent("wide", "narrow"), bi.clone()], &m).unwrap();
        assert_eq!((r.evaluated, r.excluded_bilateral, r.accuracy), (1, 1, 1.0));
        assert!(matches!(direction_accuracy(&[bi], &m), Err(Error::EmptyInput(_))));
        let neutral = NliExample::new("a", "b", Label::Neutral);
        assert!(direction_accuracy(std::slice::from_ref(&neutral), &m).is_err());
        assert!(length_baseline(&[neutral]).is_err());
    }

    #[test]
    fn length_baseline_rules() {
        let longer = [ent("a b c", "a b"), ent("x y z w", "x")];
        assert_eq!(length_baseline(&longer).unwrap().accuracy, 1.0);
        let equal = [ent("a b", "c d"), ent("x", "y")];
        let r = length_baseline(&equal).unwrap();
        assert_eq!((r.accuracy, r.ties), (0.0, 2));
        assert_eq!(length_baseline(&longer).unwrap(), length_baseline(&longer).unwrap());
        assert!(length_baseline(&[]).is_err());
    }

    #[test]
    fn histogram_shapes() {
        let h = length_ratio_histogram(&[ent("a b", "c d"), ent("x", "y")], 0.1).unwrap();
        assert_eq!(h.bins, vec![(0, 2)]);
        let h = length_ratio_histogram(&[ent("a b c d", "a b"), ent("x y", "x")], 0.1).unwrap();
        assert_eq!(h.bins, vec![(7, 2)]);
        assert!((h.center(7) - 0.7).abs() < 1e-12);
        let h = length_ratio_histogram(&[ent("a b c d", "a b"), ent("x", "y")], 0.1).unwrap();
        assert_eq!(h.bins.len(), 8);
        assert_eq!(h.total(), 2);
        let mut out = Vec::new();
        h.write_tsv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("bin_center\tcount\n0.000000\t1\n"));
        assert!(text.ends_with("0.700000\t1\n"));
        assert!(length_ratio_histogram(&[ent("...", "x")], 0.1).is_err());
        assert!(length_ratio_histogram(&[ent("a", "b")], 0.0).is_err());
        assert!(length_ratio_histogram(&[], 0.1).is_err());
    }
}
