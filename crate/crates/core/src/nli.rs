//! Two-way NLI evaluation.
//!
//! A pair is predicted as entailment when `sim(hyp‖pre)` is strictly greater
//! than a threshold. Thresholds come from the fixed grid `0, 0.001, …, 1`,
//! used both for the accuracy-maximising threshold and for the
//! precision–recall sweep behind AUPRC.

use std::io::Write;

use serde::Serialize;
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use crate::data::NliExample;
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::gaussian::similarity;
use crate::par;

/// Number of steps in the threshold grid.
pub const SWEEP_STEPS: usize = 1000;

/// Below this many discordant pairs McNemar uses the exact binomial test.
pub const MCNEMAR_EXACT_BELOW: usize = 25;

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// The `k`-th grid threshold, `k / 1000`.
pub fn sweep_threshold(k: usize) -> f64 {
    k as f64 / SWEEP_STEPS as f64
}

pub fn sweep() -> impl DoubleEndedIterator<Item = f64> + Clone {
    (0..=SWEEP_STEPS).map(sweep_threshold)
}

/// `sim(encode(hypothesis) ‖ encode(premise))` for every example.
pub fn score_examples(examples: &[NliExample], model: &Model) -> Result<Vec<f64>> {
    par::try_map(examples, |index, ex| {
        let score = || -> Result<f64> {
            let hyp = model.encode(&ex.hypothesis)?;
            let pre = model.encode(&ex.premise)?;
            similarity(&hyp, &pre)
        };
        score().map_err(|e| Error::Example { index, source: Box::new(e) })
    })
}

pub fn labels_of(examples: &[NliExample]) -> Vec<bool> {
    examples.iter().map(|e| e.label.is_entailment()).collect()
}

pub fn classify(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s > threshold).collect()
}

pub fn accuracy(predictions: &[bool], labels: &[bool]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / predictions.len() as f64
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(scores.len(), labels.len()));
    }
    Ok(())
}

/// Confusion counts at every grid threshold, in grid order.
///
/// Scores are sorted once and the grid is walked from the top, so the cost
/// is `O(n log n + grid)`.
fn sweep_counts(scores: &[f64], labels: &[bool]) -> Vec<(usize, usize)> {
    let mut order: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut counts = vec![(0, 0); SWEEP_STEPS + 1];
    let (mut tp, mut fp, mut next) = (0, 0, 0);
    for k in (0..=SWEEP_STEPS).rev() {
        let t = sweep_threshold(k);
        while next < order.len() && order[next].0 > t {
            if order[next].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            next += 1;
        }
        counts[k] = (tp, fp);
    }
    counts
}

/// Grid threshold with the highest accuracy; ties go to the smallest.
pub fn best_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::EmptyInput("development set"));
    }
    let negatives = labels.iter().filter(|&&l| !l).count();
    let mut best = (0usize, 0usize);
    for (k, (tp, fp)) in sweep_counts(scores, labels).into_iter().enumerate() {
        let correct = tp + (negatives - fp);
        if correct > best.1 {
            best = (k, correct);
        }
    }
    Ok(sweep_threshold(best.0))
}

/// One point of the precision–recall sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    /// 1 when nothing is predicted positive.
    pub precision: f64,
    pub predicted_positive: usize,
}

/// Precision and recall at every grid threshold, in grid order.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<PrPoint>> {
    check_lengths(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    Ok(sweep_counts(scores, labels)
        .into_iter()
        .enumerate()
        .map(|(k, (tp, fp))| PrPoint {
            threshold: sweep_threshold(k),
            recall: tp as f64 / positives as f64,
            precision: if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 },
            predicted_positive: tp + fp,
        })
        .collect())
}

/// Area under the precision–recall curve over the threshold grid.
///
/// Points are ordered by increasing recall (decreasing threshold) and joined
/// by trapezoids. Thresholds at which nothing is predicted positive only
/// carry the precision-1 convention and do not enter the integral; instead
/// the curve is held at its lowest-recall precision down to recall 0. With
/// this rule a perfect ranking scores 1 and a constant score scores the
/// positive rate.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let curve = pr_curve(scores, labels)?;
    let mut points =
        curve.iter().rev().filter(|p| p.predicted_positive > 0).map(|p| (p.recall, p.precision)).peekable();
    let Some(&(r0, p0)) = points.peek() else {
        return Ok(0.0);
    };
    let mut area = r0 * p0;
    let (mut r_prev, mut p_prev) = (r0, p0);
    for (r, p) in points {
        area += (r - r_prev) * (p + p_prev) * 0.5;
        r_prev = r;
        p_prev = p;
    }
    Ok(area.clamp(0.0, 1.0))
}

/// Outcome of McNemar's test on two paired prediction vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McNemar {
    /// A correct, B wrong.
    pub b: usize,
    /// A wrong, B correct.
    pub c: usize,
    /// Continuity-corrected chi-square statistic (0 when there are no
    /// discordant pairs).
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
    pub significant: bool,
}

pub fn mcnemar(predictions_a: &[bool], predictions_b: &[bool], labels: &[bool]) -> Result<McNemar> {
    if predictions_a.len() != predictions_b.len() {
        return Err(Error::DimensionMismatch(predictions_a.len(), predictions_b.len()));
    }
    if predictions_a.len() != labels.len() {
        return Err(Error::DimensionMismatch(predictions_a.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("prediction vectors"));
    }
    let (mut b, mut c) = (0usize, 0usize);
    for ((&pa, &pb), &l) in predictions_a.iter().zip(predictions_b).zip(labels) {
        match (pa == l, pb == l) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    let n = b + c;
    if n == 0 {
        return Ok(McNemar { b, c, statistic: 0.0, p_value: 1.0, exact: true, significant: false });
    }
    let diff = (b as f64 - c as f64).abs() - 1.0;
    let statistic = diff.max(0.0).powi(2) / n as f64;
    let exact = n < MCNEMAR_EXACT_BELOW;
    let p_value = if exact {
        let binom = Binomial::new(0.5, n as u64).map_err(|e| Error::Config(e.to_string()))?;
        (2.0 * binom.cdf(b.min(c) as u64)).min(1.0)
    } else {
        let chi = ChiSquared::new(1.0).map_err(|e| Error::Config(e.to_string()))?;
        chi.sf(statistic)
    };
    Ok(McNemar { b, c, statistic, p_value, exact, significant: p_value < SIGNIFICANCE_LEVEL })
}

/// Test-set metrics with the threshold picked on the development set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub auprc: f64,
    pub threshold: f64,
    pub predictions: Vec<bool>,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

/// Serialisable summary of an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub auprc: f64,
    pub threshold: f64,
    pub count: usize,
    pub positives: usize,
    pub predicted_positive: usize,
}

impl EvalReport {
    pub fn summary(&self) -> EvalSummary {
        EvalSummary {
            accuracy: self.accuracy,
            auprc: self.auprc,
            threshold: self.threshold,
            count: self.scores.len(),
            positives: self.labels.iter().filter(|&&l| l).count(),
            predicted_positive: self.predictions.iter().filter(|&&p| p).count(),
        }
    }

    /// `index score label prediction` rows, tab separated, with a header.
    pub fn write_predictions_tsv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "index\tscore\tlabel\tprediction")?;
        for (i, ((s, l), p)) in self.scores.iter().zip(&self.labels).zip(&self.predictions).enumerate() {
            writeln!(w, "{i}\t{s:.9}\t{}\t{}", u8::from(*l), u8::from(*p))?;
        }
        Ok(())
    }
}

/// Pick the threshold on `dev`, then report accuracy and AUPRC on `test`.
pub fn evaluate(model: &Model, dev: &[NliExample], test: &[NliExample]) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    let dev_scores = score_examples(dev, model)?;
    let threshold = best_threshold(&dev_scores, &labels_of(dev))?;
    let scores = score_examples(test, model)?;
    let labels = labels_of(test);
    let predictions = classify(&scores, threshold);
    Ok(EvalReport {
        accuracy: accuracy(&predictions, &labels),
        auprc: auprc(&scores, &labels)?,
        threshold,
        predictions,
        scores,
        labels,
    })
}

/// Dev-set AUPRC, the model-selection score used during training.
pub fn dev_auprc(model: &Model, dev: &[NliExample]) -> Result<f64> {
    let scores = score_examples(dev, model)?;
    auprc(&scores, &labels_of(dev))
}
