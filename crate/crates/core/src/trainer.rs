//! Contrastive training over (premise, entailed, contradicted) triplets.
//!
//! For anchor premise `s_i` with entailed hypothesis `s_i⁺` the loss is
//!
//! ```text
//! L_i = −log( exp(sim(s_i⁺‖s_i)/τ) / D_i )
//! D_i = Σ_j exp(sim(s_j⁺‖s_i)/τ)            entailment set, always
//!     + Σ_j exp(sim(s_j⁻‖s_i)/τ)            contradiction set, with `con`
//!     + Σ_j exp(sim(s_j‖s_i⁺)/τ)            reversed set, with `rev`
//! ```
//!
//! with `j` running over the whole batch (including `i`), and the batch loss
//! is the mean of `L_i`. Gradients are exact: the softmax, the similarity,
//! the closed-form KL, the heads and the bag table are differentiated by
//! hand in [`loss_gradients`].

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::data::{NliExample, Triplet};
use crate::encoder::{BaseEncoder, EncodeTrace, Model};
use crate::error::{Error, Result};
use crate::gaussian::{kl_divergence, kl_with_gradients, similarity_from_kl};
use crate::nli;
use crate::optim::{AdamW, AdamWConfig};
use crate::{par, seeded_rng, RngStream};

pub const DEFAULT_TEMPERATURE: f64 = 0.05;
pub const DEFAULT_EPOCHS: usize = 3;
pub const DEFAULT_EVAL_EVERY: usize = 100;
pub const DEFAULT_BATCH_SIZE: usize = 64;
/// Desk-scale default for a from-scratch bag encoder.
pub const DEFAULT_LEARNING_RATE: f64 = 1e-2;

pub const DEFAULT_GRID_BATCH_SIZES: [usize; 4] = [16, 32, 64, 128];
pub const DEFAULT_GRID_LEARNING_RATES: [f64; 3] = [1e-5, 3e-5, 5e-5];

/// Which negative sets enter the denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LossVariant {
    Ent,
    EntCon,
    EntRev,
    #[default]
    EntConRev,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] =
        [LossVariant::Ent, LossVariant::EntCon, LossVariant::EntRev, LossVariant::EntConRev];

    pub fn uses_contradiction(self) -> bool {
        matches!(self, LossVariant::EntCon | LossVariant::EntConRev)
    }

    pub fn uses_reversed(self) -> bool {
        matches!(self, LossVariant::EntRev | LossVariant::EntConRev)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::Ent => "ent",
            LossVariant::EntCon => "ent+con",
            LossVariant::EntRev => "ent+rev",
            LossVariant::EntConRev => "ent+con+rev",
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossVariant::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown loss variant {s:?} (expected ent, ent+con, ent+rev or ent+con+rev)"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub temperature: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub variant: LossVariant,
    pub seed: u64,
    pub eval_every: usize,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: DEFAULT_EPOCHS,
            variant: LossVariant::default(),
            seed: 0,
            eval_every: DEFAULT_EVAL_EVERY,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self, dataset_len: usize) -> usize {
        self.epochs * dataset_len.div_ceil(self.batch_size)
    }

    /// Linear warm-up: `learning_rate · step / total` for `step` in `1..=total`.
    pub fn learning_rate_at(&self, step: usize, total: usize) -> f64 {
        self.learning_rate * step as f64 / total as f64
    }
}

/// Batch loss and the mean denominator mass of each set.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    /// Mean over anchors of `Σ_j exp(sim(s_j⁺‖s_i)/τ)`.
    pub entailment: f64,
    /// As above for the contradiction set; 0 when the variant excludes it.
    pub contradiction: f64,
    /// As above for the reversed set; 0 when the variant excludes it.
    pub reversed: f64,
}

/// Gradient buffers, in the order of [`Model::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub buffers: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &Model) -> Self {
        Self { buffers: model.params().iter().map(|p| vec![0.0; p.len()]).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.buffers.iter().flatten().all(|&g| g == 0.0)
    }
}

/// Gradient of the batch loss with respect to one sentence's mean and variance.
#[derive(Clone)]
struct EmbeddingGrad {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

struct AnchorResult {
    loss: f64,
    masses: [f64; 3],
    /// `(sentence, grad)` pairs, only filled on the backward pass.
    grads: Vec<(usize, EmbeddingGrad)>,
}

#[derive(Clone, Copy)]
enum Set {
    Entailment,
    Contradiction,
    Reversed,
}

fn anchor_terms(i: usize, n: usize, variant: LossVariant) -> Vec<(Set, usize, usize)> {
    // sentence indices: premise j → j, entailed j → n + j, contradicted j → 2n + j
    let mut terms: Vec<(Set, usize, usize)> = (0..n).map(|j| (Set::Entailment, n + j, i)).collect();
    if variant.uses_contradiction() {
        terms.extend((0..n).map(|j| (Set::Contradiction, 2 * n + j, i)));
    }
    if variant.uses_reversed() {
        terms.extend((0..n).map(|j| (Set::Reversed, j, n + i)));
    }
    terms
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn anchor(
    i: usize,
    n: usize,
    traces: &[Option<EncodeTrace>],
    config: &TrainConfig,
    backward: bool,
) -> Result<AnchorResult> {
    let tau = config.temperature;
    let terms = anchor_terms(i, n, config.variant);
    let embedding =
        |s: usize| &traces[s].as_ref().expect("sentence needed by the loss was not encoded").embedding;
    let mut sims = Vec::with_capacity(terms.len());
    let mut kl_grads = Vec::with_capacity(if backward { terms.len() } else { 0 });
    for &(_, q, r) in &terms {
        let kl = if backward {
            let (kl, g) = kl_with_gradients(embedding(q), embedding(r))?;
            kl_grads.push(g);
            kl
        } else {
            kl_divergence(embedding(q), embedding(r))?
        };
        sims.push(similarity_from_kl(kl));
    }
    let logits: Vec<f64> = sims.iter().map(|s| s / tau).collect();
    // the positive is the j = i entry of the entailment block
    let pos = i;
    let lse = log_sum_exp(&logits);
    let loss = lse - logits[pos];

    let mut masses = [0.0; 3];
    for (&(set, _, _), l) in terms.iter().zip(&logits) {
        masses[set as usize] += l.exp();
    }

    let mut grads = Vec::new();
    if backward {
        let scale = 1.0 / n as f64;
        for (k, (&(_, q, r), g)) in terms.iter().zip(&kl_grads).enumerate() {
            let softmax = (logits[k] - lse).exp();
            let d_logit = softmax - if k == pos { 1.0 } else { 0.0 };
            // d sim / d KL = −sim²
            let d_kl = scale * d_logit / tau * -(sims[k] * sims[k]);
            if d_kl == 0.0 {
                continue;
            }
            grads.push((
                q,
                EmbeddingGrad {
                    mean: g.mean_a.iter().map(|x| x * d_kl).collect(),
                    variance: g.variance_a.iter().map(|x| x * d_kl).collect(),
                },
            ));
            grads.push((
                r,
                EmbeddingGrad {
                    mean: g.mean_b.iter().map(|x| x * d_kl).collect(),
                    variance: g.variance_b.iter().map(|x| x * d_kl).collect(),
                },
            ));
        }
    }
    Ok(AnchorResult { loss, masses, grads })
}

fn encode_batch(batch: &[Triplet], model: &Model, variant: LossVariant) -> Result<Vec<Option<EncodeTrace>>> {
    let n = batch.len();
    let with_con = variant.uses_contradiction();
    let traced = par::map_range(3 * n, |s| -> Result<Option<EncodeTrace>> {
        let (j, slot) = (s % n, s / n);
        let text = match slot {
            0 => &batch[j].premise,
            1 => &batch[j].entailed,
            _ if with_con => &batch[j].contradicted,
            _ => return Ok(None),
        };
        model.encode_traced(text).map(Some)
    });
    traced.into_iter().collect()
}

fn forward_backward(
    batch: &[Triplet],
    model: &Model,
    config: &TrainConfig,
    backward: bool,
) -> Result<(LossBreakdown, Option<Gradients>)> {
    config.validate()?;
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyInput("batch"));
    }
    let traces = encode_batch(batch, model, config.variant)?;
    let anchors: Vec<AnchorResult> =
        par::map_range(n, |i| anchor(i, n, &traces, config, backward)).into_iter().collect::<Result<_>>()?;

    let inv_n = 1.0 / n as f64;
    let mut breakdown = LossBreakdown::default();
    for a in &anchors {
        breakdown.total += a.loss;
        breakdown.entailment += a.masses[0];
        breakdown.contradiction += a.masses[1];
        breakdown.reversed += a.masses[2];
    }
    breakdown.total *= inv_n;
    breakdown.entailment *= inv_n;
    breakdown.contradiction *= inv_n;
    breakdown.reversed *= inv_n;
    if !breakdown.total.is_finite() {
        return Err(Error::NonFiniteLoss { step: None });
    }
    if !backward {
        return Ok((breakdown, None));
    }

    let d = model.dim();
    let mut per_sentence: Vec<Option<EmbeddingGrad>> = vec![None; 3 * n];
    for a in anchors {
        for (s, g) in a.grads {
            match &mut per_sentence[s] {
                Some(acc) => {
                    acc.mean.iter_mut().zip(&g.mean).for_each(|(x, y)| *x += y);
                    acc.variance.iter_mut().zip(&g.variance).for_each(|(x, y)| *x += y);
                }
                slot => *slot = Some(g),
            }
        }
    }

    let mut grads = Gradients::zeros_like(model);
    let has_table = matches!(model.base, BaseEncoder::Bag(_));
    let head_offset = usize::from(has_table);
    let base_dim = model.heads.base_dim();
    for (s, g) in per_sentence.iter().enumerate() {
        let (Some(g), Some(trace)) = (g, traces[s].as_ref()) else {
            continue;
        };
        let activation = model.heads.activation;
        let d_pre: Vec<f64> =
            g.variance.iter().zip(&trace.var_pre).map(|(dv, &z)| dv * activation.derivative(z)).collect();
        let mut d_base = vec![0.0; base_dim];
        {
            let [mean_w, mean_b, var_w, var_b] = &mut grads.buffers[head_offset..] else {
                unreachable!("heads always contribute four buffers");
            };
            mean_b.iter_mut().zip(&g.mean).for_each(|(b, dm)| *b += dm);
            var_b.iter_mut().zip(&d_pre).for_each(|(b, dz)| *b += dz);
            for (row, &x) in trace.base.iter().enumerate() {
                let range = row * d..(row + 1) * d;
                let (mw, vw) =
                    (&model.heads.mean_weight[range.clone()], &model.heads.var_weight[range.clone()]);
                let mut acc = 0.0;
                for k in 0..d {
                    mean_w[row * d + k] += x * g.mean[k];
                    var_w[row * d + k] += x * d_pre[k];
                    acc += mw[k] * g.mean[k] + vw[k] * d_pre[k];
                }
                d_base[row] = acc;
            }
        }
        if let (Some(buckets), true) = (&trace.buckets, has_table) {
            let table = &mut grads.buffers[0];
            let scale = 1.0 / buckets.len() as f64;
            for &b in buckets {
                let row = &mut table[b * base_dim..(b + 1) * base_dim];
                row.iter_mut().zip(&d_base).for_each(|(t, db)| *t += db * scale);
            }
        }
    }
    Ok((breakdown, Some(grads)))
}

/// Mean contrastive loss of a batch.
pub fn batch_loss(batch: &[Triplet], model: &Model, config: &TrainConfig) -> Result<LossBreakdown> {
    forward_backward(batch, model, config, false).map(|(l, _)| l)
}

/// Loss and its exact gradient with respect to every trainable parameter.
pub fn loss_gradients(
    batch: &[Triplet],
    model: &Model,
    config: &TrainConfig,
) -> Result<(LossBreakdown, Gradients)> {
    let (loss, grads) = forward_backward(batch, model, config, true)?;
    Ok((loss, grads.expect("backward pass requested")))
}

/// One optimisation step's record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub learning_rate: f64,
    pub loss: LossBreakdown,
    pub dev_auprc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    pub initial_dev_auprc: Option<f64>,
    pub best_step: Option<usize>,
    pub best_dev_auprc: Option<f64>,
    /// No development set was given; the final parameters were kept.
    pub dev_missing: bool,
}

impl TrainLog {
    /// Tab-separated log. Metadata lines start with `#`.
    pub fn write_tsv<W: Write>(&self, w: &mut W) -> Result<()> {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "# initial_dev_auprc\t{}", opt(self.initial_dev_auprc))?;
        if self.dev_missing {
            writeln!(w, "# dev_missing\ttrue")?;
        }
        writeln!(
            w,
            "# best_step\t{}\n# best_dev_auprc\t{}",
            self.best_step.map(|s| s.to_string()).unwrap_or_default(),
            opt(self.best_dev_auprc)
        )?;
        writeln!(w, "step\tlr\tloss\tv_e\tv_c\tv_r\tdev_auprc")?;
        for r in &self.records {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.step,
                r.learning_rate,
                r.loss.total,
                r.loss.entailment,
                r.loss.contradiction,
                r.loss.reversed,
                opt(r.dev_auprc)
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-scoring snapshot by dev AUPRC (final parameters without a dev set).
    pub model: Model,
    pub log: TrainLog,
}

/// Train `model` on `dataset`.
///
/// Batches are drawn from a seeded per-epoch shuffle; the last batch of an
/// epoch may be short. Dev AUPRC is computed before training, every
/// `eval_every` steps and after the final step, and the best snapshot is
/// returned (ties keep the earlier one). The step-0 score is logged but is
/// not a snapshot candidate.
pub fn train(
    dataset: &[Triplet],
    dev: &[NliExample],
    config: &TrainConfig,
    mut model: Model,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let total = config.total_steps(dataset.len());
    let mut rng = seeded_rng(config.seed, RngStream::Shuffle);
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut optimizer = AdamW::new(config.optimizer, &sizes);
    let mut log = TrainLog { dev_missing: dev.is_empty(), ..TrainLog::default() };
    if !dev.is_empty() {
        log.initial_dev_auprc = Some(nli::dev_auprc(&model, dev)?);
    }
    let mut best: Option<(f64, Model)> = None;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let batch: Vec<Triplet> = chunk.iter().map(|&k| dataset[k].clone()).collect();
            let (loss, grads) = loss_gradients(&batch, &model, config).map_err(|e| match e {
                Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { step: Some(step) },
                other => other,
            })?;
            let lr = config.learning_rate_at(step, total);
            optimizer.step(&mut model.params_mut(), &grads.buffers, lr);

            let dev_auprc = if !dev.is_empty() && (step % config.eval_every == 0 || step == total) {
                let score = nli::dev_auprc(&model, dev)?;
                if best.as_ref().is_none_or(|(b, _)| score > *b) {
                    best = Some((score, model.clone()));
                    log.best_step = Some(step);
                    log.best_dev_auprc = Some(score);
                }
                Some(score)
            } else {
                None
            };
            log.records.push(TrainRecord { step, learning_rate: lr, loss, dev_auprc });
        }
    }
    let model = best.map(|(_, m)| m).unwrap_or(model);
    Ok(TrainOutcome { model, log })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub cell: GridCell,
    /// Best dev AUPRC, or the error that stopped this cell.
    pub score: std::result::Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub best: Option<(GridCell, f64)>,
}

impl GridResult {
    pub fn write_tsv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "batch_size\tlr\tdev_auprc")?;
        for row in &self.rows {
            match &row.score {
                Ok(s) => writeln!(w, "{}\t{}\t{s}", row.cell.batch_size, row.cell.learning_rate)?,
                Err(e) => writeln!(w, "{}\t{}\tfailed: {e}", row.cell.batch_size, row.cell.learning_rate)?,
            }
        }
        match &self.best {
            Some((cell, s)) => writeln!(w, "best\t{}\t{}\t{s}", cell.batch_size, cell.learning_rate)?,
            None => writeln!(w, "best\tnone")?,
        }
        Ok(())
    }
}

/// Score every `(batch size, learning rate)` cell with `score` and pick the
/// best. Ties go to the smaller batch size, then the smaller learning rate.
/// Cells run in parallel; a failing cell is recorded and skipped.
pub fn grid_search_with<F>(batch_sizes: &[usize], learning_rates: &[f64], score: F) -> Result<GridResult>
where
    F: Fn(GridCell) -> Result<f64> + Sync + Send,
{
    let cells: Vec<GridCell> = batch_sizes
        .iter()
        .flat_map(|&batch_size| {
            learning_rates.iter().map(move |&learning_rate| GridCell { batch_size, learning_rate })
        })
        .collect();
    if cells.is_empty() {
        return Err(Error::EmptyInput("hyperparameter grid"));
    }
    let rows: Vec<GridRow> =
        par::map(&cells, |&cell| GridRow { cell, score: score(cell).map_err(|e| e.to_string()) });
    let mut best: Option<(GridCell, f64)> = None;
    for row in &rows {
        let Ok(s) = row.score else { continue };
        let better = match &best {
            None => true,
            Some((c, b)) => {
                s > *b
                    || (s == *b
                        && (row.cell.batch_size, row.cell.learning_rate) < (c.batch_size, c.learning_rate))
            }
        };
        if better {
            best = Some((row.cell, s));
        }
    }
    Ok(GridResult { rows, best })
}

/// Grid search over batch size and learning rate, each cell trained from a
/// clone of `init` and scored by its best dev AUPRC.
pub fn grid_search(
    dataset: &[Triplet],
    dev: &[NliExample],
    batch_sizes: &[usize],
    learning_rates: &[f64],
    template: &TrainConfig,
    init: &Model,
) -> Result<GridResult> {
    if dev.is_empty() {
        return Err(Error::EmptyInput("development set"));
    }
    grid_search_with(batch_sizes, learning_rates, |cell| {
        let config = TrainConfig {
            batch_size: cell.batch_size,
            learning_rate: cell.learning_rate,
            ..template.clone()
        };
        let outcome = train(dataset, dev, &config, init.clone())?;
        outcome.log.best_dev_auprc.ok_or(Error::EmptyInput("development set"))
    })
}
