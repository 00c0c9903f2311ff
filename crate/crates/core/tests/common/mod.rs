//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls the library's KL, loss or metric code; it only uses
//! the library to encode sentences and to hold parameters.
#![allow(dead_code)]

use gausscse::data::Triplet;
use gausscse::gaussian::GaussianEmbedding;
use gausscse::{batch_loss, LossVariant, Model, TrainConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Elementwise `|a − n| / max(|a|, |n|, 1e-6)`, maximised.
///
/// The floor keeps gradient components that are zero up to rounding from
/// turning finite-difference noise into a large relative error.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub fn random_embedding(rng: &mut ChaCha8Rng, d: usize) -> GaussianEmbedding {
    GaussianEmbedding::new(
        (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
        (0..d).map(|_| rng.random_range(-1.5f64..1.5).exp()).collect(),
    )
    .unwrap()
}

/// `d_base = 4`, `d = 3`, 8 hash buckets.
pub fn small_bag_model(rng: &mut ChaCha8Rng) -> Model {
    Model::random_bag(8, 4, 3, rng).unwrap()
}

fn random_sentence(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(1..=4);
    (0..len).map(|_| format!("t{}", rng.random_range(0..12))).collect::<Vec<_>>().join(" ")
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<Triplet> {
    (0..n)
        .map(|_| Triplet::new(random_sentence(rng), random_sentence(rng), random_sentence(rng)).unwrap())
        .collect()
}

/// Central differences of the batch loss over every parameter buffer.
pub fn loss_fd(batch: &[Triplet], model: &Model, config: &TrainConfig, step: f64) -> Vec<Vec<f64>> {
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut out = Vec::new();
    for (buffer, &size) in sizes.iter().enumerate() {
        let mut grads = Vec::with_capacity(size);
        for k in 0..size {
            let mut plus = model.clone();
            plus.params_mut()[buffer][k] += step;
            let mut minus = model.clone();
            minus.params_mut()[buffer][k] -= step;
            let fp = batch_loss(batch, &plus, config).unwrap().total;
            let fm = batch_loss(batch, &minus, config).unwrap().total;
            grads.push((fp - fm) / (2.0 * step));
        }
        out.push(grads);
    }
    out
}

/// KL between diagonal Gaussians from the matrix form: log-determinant
/// ratio, trace and Mahalanobis terms computed separately.
pub fn reference_kl(a: &GaussianEmbedding, b: &GaussianEmbedding) -> f64 {
    let d = a.dim() as f64;
    let log_det_a: f64 = a.variance().iter().map(|v| v.ln()).sum();
    let log_det_b: f64 = b.variance().iter().map(|v| v.ln()).sum();
    let trace: f64 = a.variance().iter().zip(b.variance()).map(|(va, vb)| va / vb).sum();
    let maha: f64 = a
        .mean()
        .iter()
        .zip(b.mean())
        .zip(b.variance())
        .map(|((ma, mb), vb)| (ma - mb) * (ma - mb) / vb)
        .sum();
    0.5 * (log_det_b - log_det_a + trace + maha - d)
}

pub fn reference_sim(query: &GaussianEmbedding, reference: &GaussianEmbedding) -> f64 {
    1.0 / (1.0 + reference_kl(query, reference))
}

/// The contrastive loss written out literally: explicit exponentials and
/// sums, one anchor at a time.
pub fn direct_loss(batch: &[Triplet], model: &Model, config: &TrainConfig) -> f64 {
    let enc = |t: &str| model.encode(t).unwrap();
    let pre: Vec<_> = batch.iter().map(|t| enc(&t.premise)).collect();
    let ent: Vec<_> = batch.iter().map(|t| enc(&t.entailed)).collect();
    let con: Vec<_> = batch.iter().map(|t| enc(&t.contradicted)).collect();
    let tau = config.temperature;
    let v = config.variant;
    let n = batch.len();
    let mut total = 0.0;
    for i in 0..n {
        let numerator = (reference_sim(&ent[i], &pre[i]) / tau).exp();
        let mut denominator = 0.0;
        for j in 0..n {
            denominator += (reference_sim(&ent[j], &pre[i]) / tau).exp();
            if matches!(v, LossVariant::EntCon | LossVariant::EntConRev) {
                denominator += (reference_sim(&con[j], &pre[i]) / tau).exp();
            }
            if matches!(v, LossVariant::EntRev | LossVariant::EntConRev) {
                denominator += (reference_sim(&pre[j], &ent[i]) / tau).exp();
            }
        }
        total += -(numerator / denominator).ln();
    }
    total / n as f64
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        left + right + (left + right - whole) / 15.0
    } else {
        adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(f, a, b, fa, fm, fb, whole, tol, 50)
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean) * (x - mean) / var)
}

/// `∫ p(x) log(p(x)/q(x)) dx` for one-dimensional Gaussians by quadrature
/// over ±16 standard deviations of `p`.
pub fn kl_quadrature_1d(a: &GaussianEmbedding, b: &GaussianEmbedding) -> f64 {
    let (ma, va, mb, vb) = (a.mean()[0], a.variance()[0], b.mean()[0], b.variance()[0]);
    let integrand = move |x: f64| {
        let lp = log_normal_pdf(x, ma, va);
        lp.exp() * (lp - log_normal_pdf(x, mb, vb))
    };
    let width = 16.0 * va.sqrt();
    // split at the mean so the peak is a node
    integrate(&integrand, ma - width, ma, 1e-12) + integrate(&integrand, ma, ma + width, 1e-12)
}

/// Monte Carlo estimate of `E_p[log p − log q]` and its standard error.
pub fn kl_monte_carlo(
    a: &GaussianEmbedding,
    b: &GaussianEmbedding,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let d = a.dim();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let mut x = vec![0.0; d];
    for _ in 0..samples {
        for (xk, (m, v)) in x.iter_mut().zip(a.mean().iter().zip(a.variance())) {
            let z: f64 = StandardNormal.sample(rng);
            *xk = m + v.sqrt() * z;
        }
        let log_ratio: f64 = (0..d)
            .map(|k| {
                log_normal_pdf(x[k], a.mean()[k], a.variance()[k])
                    - log_normal_pdf(x[k], b.mean()[k], b.variance()[k])
            })
            .sum();
        sum += log_ratio;
        sum_sq += log_ratio * log_ratio;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn grid(k: usize) -> f64 {
    k as f64 / 1000.0
}

fn confusion(scores: &[f64], labels: &[bool], t: f64) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut correct) = (0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        let p = s > t;
        if p && l {
            tp += 1;
        }
        if p && !l {
            fp += 1;
        }
        if p == l {
            correct += 1;
        }
    }
    (tp, fp, correct)
}

/// Accuracy-maximising grid threshold by exhaustive evaluation.
pub fn brute_best_threshold(scores: &[f64], labels: &[bool]) -> f64 {
    let mut best = (0, 0);
    for k in 0..=1000 {
        let (_, _, correct) = confusion(scores, labels, grid(k));
        if correct > best.1 {
            best = (k, correct);
        }
    }
    grid(best.0)
}

/// AUPRC by exhaustive evaluation at every grid threshold, with the same
/// curve conventions as the library documents.
pub fn brute_auprc(scores: &[f64], labels: &[bool]) -> f64 {
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut points = Vec::new();
    for k in (0..=1000).rev() {
        let (tp, fp, _) = confusion(scores, labels, grid(k));
        if tp + fp > 0 {
            points.push((tp as f64 / positives, tp as f64 / (tp + fp) as f64));
        }
    }
    if points.is_empty() {
        return 0.0;
    }
    let mut area = points[0].0 * points[0].1;
    for w in points.windows(2) {
        area += (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0;
    }
    area
}
