//! Temperature-scaled distributions, logit alignment and the pairwise
//! uncertainty metrics.
//!
//! Cosine similarity and MAE operate on raw logits. KL and JS operate on the
//! temperature-scaled distributions `softmax(z / T)`, with `T = 0` mapped to the
//! greedy one-hot limit. All logarithms are natural, so JS is bounded by `ln 2`.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// Probabilities are clamped at this value before taking KL log-ratios.
pub const KL_FLOOR: f64 = 1e-10;

/// The four pairwise metrics, in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricId {
    #[serde(rename = "CS")]
    Cs,
    #[serde(rename = "JS")]
    Js,
    #[serde(rename = "KL")]
    Kl,
    #[serde(rename = "MAE")]
    Mae,
}

impl MetricId {
    pub const ALL: [MetricId; 4] = [MetricId::Cs, MetricId::Js, MetricId::Kl, MetricId::Mae];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::Cs => "CS",
            MetricId::Js => "JS",
            MetricId::Kl => "KL",
            MetricId::Mae => "MAE",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// True for metrics where larger values mean more agreement.
    pub fn is_similarity(self) -> bool {
        matches!(self, MetricId::Cs)
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CS" | "COSINE" => Ok(MetricId::Cs),
            "JS" => Ok(MetricId::Js),
            "KL" => Ok(MetricId::Kl),
            "MAE" => Ok(MetricId::Mae),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

/// Per-step raw logits of one generation run together with the sampled tokens.
///
/// `values` is a row-major `steps x vocab_size` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTensor<S> {
    vocab_size: usize,
    values: Vec<S>,
    tokens: Vec<u32>,
}

impl<S: Scalar> LogitTensor<S> {
    pub fn new(vocab_size: usize, values: Vec<S>, tokens: Vec<u32>) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::invalid("vocab_size must be positive"));
        }
        let steps = tokens.len();
        if values.len() != steps * vocab_size {
            return Err(Error::invalid(format!(
                "expected {} logits for {steps} steps x {vocab_size} vocab, got {}",
                steps * vocab_size,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite logit at step {}, token {}",
                pos / vocab_size,
                pos % vocab_size
            )));
        }
        if let Some(&tok) = tokens.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::invalid(format!(
                "token {tok} outside vocabulary of size {vocab_size}"
            )));
        }
        Ok(Self {
            vocab_size,
            values,
            tokens,
        })
    }

    pub fn steps(&self) -> usize {
        self.tokens.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn row(&self, step: usize) -> &[S] {
        &self.values[step * self.vocab_size..(step + 1) * self.vocab_size]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[S]> {
        self.values.chunks_exact(self.vocab_size)
    }

    /// First `steps` rows (and tokens) of this tensor.
    pub fn truncated(&self, steps: usize) -> Self {
        let steps = steps.min(self.steps());
        Self {
            vocab_size: self.vocab_size,
            values: self.values[..steps * self.vocab_size].to_vec(),
            tokens: self.tokens[..steps].to_vec(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> LogitTensor<T> {
        LogitTensor {
            vocab_size: self.vocab_size,
            values: self
                .values
                .iter()
                .map(|v| T::from_f64(v.as_f64()).expect("finite logit"))
                .collect(),
            tokens: self.tokens.clone(),
        }
    }
}

/// A normalized probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector<S> {
    probs: Vec<S>,
}

impl<S: Scalar> ProbVector<S> {
    /// Validates non-negativity and unit mass.
    pub fn new(probs: Vec<S>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty probability vector"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < S::zero()) {
            return Err(Error::invalid("probabilities must be finite and non-negative"));
        }
        let total: S = probs.iter().copied().sum();
        if (total - S::one()).abs() > mass_tolerance::<S>(probs.len()) {
            return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn as_slice(&self) -> &[S] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<S> {
        self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> S {
        self.probs
            .iter()
            .filter(|p| **p > S::zero())
            .map(|&p| -p * p.ln())
            .sum()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

fn mass_tolerance<S: Scalar>(n: usize) -> S {
    S::lit(1e-9).max(S::epsilon() * S::from_count(4 * n))
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax<S: Scalar>(z: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}

fn check_finite<S: Scalar>(z: &[S]) -> Result<()> {
    if z.is_empty() {
        return Err(Error::invalid("empty logit vector"));
    }
    match z.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::invalid(format!("non-finite logit at index {i}"))),
        None => Ok(()),
    }
}

/// `softmax(z / T)`, stabilized by subtracting the maximum scaled logit.
///
/// `T` must be strictly positive; the `T = 0` limit is [`greedy_one_hot`].
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn softmax_with_temperature<S: Scalar>(z: &[S], temperature: S) -> Result<ProbVector<S>> {
    check_finite(z)?;
    if !(temperature > S::zero()) || !temperature.is_finite() {
        return Err(Error::Domain(format!(
            "softmax temperature must be positive and finite, got {temperature}; use the greedy limit for T = 0"
        )));
    }
    let mut out = Vec::with_capacity(z.len());
    softmax_into(z, temperature, &mut out);
    Ok(ProbVector { probs: out })
}

fn softmax_into<S: Scalar>(z: &[S], temperature: S, out: &mut Vec<S>) {
    let max = z
        .iter()
        .fold(S::neg_infinity(), |m, &v| m.max(v / temperature));
    let start = out.len();
    let mut total = S::zero();
    for &v in z {
        let e = (v / temperature - max).exp();
        total = total + e;
        out.push(e);
    }
    for p in &mut out[start..] {
        *p = *p / total;
    }
}

/// The `T -> 0` limit of the temperature softmax: all mass on the argmax,
/// lowest index winning ties.
pub fn greedy_one_hot<S: Scalar>(z: &[S]) -> Result<ProbVector<S>> {
    check_finite(z)?;
    let mut probs = vec![S::zero(); z.len()];
    probs[argmax(z)] = S::one();
    Ok(ProbVector { probs })
}

/// Row-wise temperature distribution of the first `steps` rows of a tensor.
/// `T = 0` yields greedy one-hot rows.
pub fn distribution_rows<S: Scalar>(
    tensor: &LogitTensor<S>,
    steps: usize,
    temperature: S,
) -> Result<Vec<S>> {
    if temperature < S::zero() || !temperature.is_finite() {
        return Err(Error::Domain(format!(
            "temperature must be finite and non-negative, got {temperature}"
        )));
    }
    let v = tensor.vocab_size();
    let mut out = Vec::with_capacity(steps * v);
    for row in tensor.rows().take(steps) {
        if temperature == S::zero() {
            let start = out.len();
            out.resize(start + v, S::zero());
            out[start + argmax(row)] = S::one();
        } else {
            softmax_into(row, temperature, &mut out);
        }
    }
    Ok(out)
}

/// Truncates every run to the shortest run's length.
pub fn align_min_length<S: Scalar>(
    runs: &[LogitTensor<S>],
) -> Result<(Vec<LogitTensor<S>>, usize)> {
    check_common_vocab(runs)?;
    let t_min = runs.iter().map(LogitTensor::steps).min().unwrap_or(0);
    Ok((runs.iter().map(|r| r.truncated(t_min)).collect(), t_min))
}

fn check_common_vocab<S: Scalar>(runs: &[LogitTensor<S>]) -> Result<usize> {
    let first = runs
        .first()
        .ok_or_else(|| Error::invalid("cannot align an empty list of runs"))?;
    let vocab = first.vocab_size();
    if let Some((i, r)) = runs
        .iter()
        .enumerate()
        .find(|(_, r)| r.vocab_size() != vocab)
    {
        return Err(Error::invalid(format!(
            "run {i} has vocab_size {} but run 0 has {vocab}",
            r.vocab_size()
        )));
    }
    Ok(vocab)
}

/// A run prepared for pairwise comparison over its first `steps` rows:
/// temperature distributions, their logarithms and raw row norms are computed
/// once and shared by every pair the run takes part in.
#[derive(Debug, Clone)]
pub struct PreparedRun<'a, S> {
    tensor: &'a LogitTensor<S>,
    steps: usize,
    probs: Vec<S>,
    log_probs: Vec<S>,
    norms: Vec<S>,
}

impl<'a, S: Scalar> PreparedRun<'a, S> {
    pub fn new(tensor: &'a LogitTensor<S>, steps: usize, temperature: S) -> Result<Self> {
        if steps > tensor.steps() {
            return Err(Error::invalid(format!(
                "cannot prepare {steps} steps from a run of {}",
                tensor.steps()
            )));
        }
        let probs = distribution_rows(tensor, steps, temperature)?;
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        let norms = tensor
            .rows()
            .take(steps)
            .map(|row| row.iter().map(|&x| x * x).sum::<S>().sqrt())
            .collect();
        Ok(Self {
            tensor,
            steps,
            probs,
            log_probs,
            norms,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn vocab(&self) -> usize {
        self.tensor.vocab_size()
    }

    fn prob_row(&self, t: usize) -> (&[S], &[S]) {
        let v = self.vocab();
        let range = t * v..(t + 1) * v;
        (&self.probs[range.clone()], &self.log_probs[range])
    }

    fn check_pair(&self, other: &Self) -> Result<()> {
        if self.steps != other.steps || self.vocab() != other.vocab() {
            return Err(Error::invalid(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.steps,
                self.vocab(),
                other.steps,
                other.vocab()
            )));
        }
        Ok(())
    }

    /// Mean per-step cosine of the raw logit rows.
    pub fn cosine(&self, other: &Self) -> Result<S> {
        self.check_pair(other)?;
        let mut total = S::zero();
        for t in 0..self.steps {
            let (na, nb) = (self.norms[t], other.norms[t]);
            if na == S::zero() || nb == S::zero() {
                return Err(Error::DegenerateRow { step: t });
            }
            let (a, b) = (self.tensor.row(t), other.tensor.row(t));
            let cos = if a == b {
                S::one()
            } else {
                let dot: S = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
                (dot / (na * nb)).max(-S::one()).min(S::one())
            };
            total = total + cos;
        }
        Ok(total / S::from_count(self.steps))
    }

    /// Mean per-step `KL(self || other)` with probabilities floored at
    /// [`KL_FLOOR`].
    pub fn kl(&self, other: &Self) -> Result<S> {
        self.check_pair(other)?;
        let log_floor = S::lit(KL_FLOOR).ln();
        let mut total = S::zero();
        for t in 0..self.steps {
            let (p, lp) = self.prob_row(t);
            let (_, lq) = other.prob_row(t);
            for v in 0..p.len() {
                if p[v] > S::zero() {
                    total = total + p[v] * (lp[v].max(log_floor) - lq[v].max(log_floor));
                }
            }
        }
        Ok(total / S::from_count(self.steps))
    }

    /// Mean per-step Jensen-Shannon divergence against the midpoint mixture.
    pub fn js(&self, other: &Self) -> Result<S> {
        self.check_pair(other)?;
        let half = S::lit(0.5);
        let ln2 = S::lit(std::f64::consts::LN_2);
        let mut total = S::zero();
        for t in 0..self.steps {
            let (p, lp) = self.prob_row(t);
            let (q, lq) = other.prob_row(t);
            for v in 0..p.len() {
                let (pv, qv) = (p[v], q[v]);
                if pv == qv {
                    continue;
                }
                // Halving first can underflow to zero for subnormal inputs.
                let lm = (pv + qv).ln() - ln2;
                if pv > S::zero() {
                    total = total + half * pv * (lp[v] - lm);
                }
                if qv > S::zero() {
                    total = total + half * qv * (lq[v] - lm);
                }
            }
        }
        Ok(total / S::from_count(self.steps))
    }

    /// Mean absolute difference of raw logits over all aligned entries.
    pub fn mae(&self, other: &Self) -> Result<S> {
        self.check_pair(other)?;
        let n = self.steps * self.vocab();
        let a = &self.tensor.values()[..n];
        let b = &other.tensor.values()[..n];
        let total: S = a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum();
        Ok(total / S::from_count(n))
    }

    pub fn metric(&self, other: &Self, metric: MetricId) -> Result<S> {
        match metric {
            MetricId::Cs => self.cosine(other),
            MetricId::Js => self.js(other),
            MetricId::Kl => self.kl(other),
            MetricId::Mae => self.mae(other),
        }
    }
}

fn check_aligned<S: Scalar>(a: &LogitTensor<S>, b: &LogitTensor<S>) -> Result<()> {
    if a.steps() != b.steps() || a.vocab_size() != b.vocab_size() {
        return Err(Error::invalid(format!(
            "tensors are not aligned: {}x{} vs {}x{}",
            a.steps(),
            a.vocab_size(),
            b.steps(),
            b.vocab_size()
        )));
    }
    Ok(())
}

fn pair_metric<S: Scalar>(
    a: &LogitTensor<S>,
    b: &LogitTensor<S>,
    temperature: S,
    metric: MetricId,
) -> Result<S> {
    check_aligned(a, b)?;
    let steps = a.steps();
    let pa = PreparedRun::new(a, steps, temperature)?;
    let pb = PreparedRun::new(b, steps, temperature)?;
    pa.metric(&pb, metric)
}

/// Mean per-step cosine similarity of two aligned logit tensors.
pub fn cosine_similarity_pair<S: Scalar>(a: &LogitTensor<S>, b: &LogitTensor<S>) -> Result<S> {
    pair_metric(a, b, S::zero(), MetricId::Cs)
}

/// Mean per-step `KL(P_a || P_b)` of the temperature distributions.
pub fn kl_divergence_pair<S: Scalar>(
    a: &LogitTensor<S>,
    b: &LogitTensor<S>,
    temperature: S,
) -> Result<S> {
    pair_metric(a, b, temperature, MetricId::Kl)
}

/// Mean per-step Jensen-Shannon divergence of the temperature distributions.
pub fn js_divergence_pair<S: Scalar>(
    a: &LogitTensor<S>,
    b: &LogitTensor<S>,
    temperature: S,
) -> Result<S> {
    pair_metric(a, b, temperature, MetricId::Js)
}

/// Mean absolute raw-logit difference of two aligned tensors.
pub fn mae_pair<S: Scalar>(a: &LogitTensor<S>, b: &LogitTensor<S>) -> Result<S> {
    pair_metric(a, b, S::zero(), MetricId::Mae)
}

/// The repeated runs of one (model, image, question, temperature) cell.
#[derive(Debug, Clone)]
pub struct RunGroup<S> {
    pub temperature: S,
    pub runs: Vec<LogitTensor<S>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseResult<S> {
    pub i: usize,
    pub j: usize,
    pub metric: MetricId,
    pub value: S,
}

#[derive(Debug, Clone)]
pub struct MetricSummary<S> {
    pub metric: MetricId,
    pub mean: S,
    /// Population standard deviation over pairs.
    pub std: S,
    pub pairs: Vec<PairwiseResult<S>>,
}

#[derive(Debug, Clone)]
pub struct GroupMetrics<S> {
    pub n_runs: usize,
    pub aligned_steps: usize,
    /// Indexed by [`MetricId::index`].
    pub metrics: [MetricSummary<S>; 4],
}

impl<S> GroupMetrics<S> {
    pub fn get(&self, metric: MetricId) -> &MetricSummary<S> {
        &self.metrics[metric.index()]
    }

    pub fn pair_count(&self) -> usize {
        self.metrics[0].pairs.len()
    }
}

/// All four metrics over every unordered pair `i < j` of an aligned group.
///
/// KL is evaluated in the `i -> j` direction only. Pairs may be evaluated in
/// parallel; means are reduced in lexicographic pair order, so results do not
/// depend on scheduling.
pub fn pairwise_metrics<S: Scalar>(group: &RunGroup<S>) -> Result<GroupMetrics<S>> {
    let n = group.runs.len();
    if n < 2 {
        return Err(Error::InsufficientRuns(n));
    }
    check_common_vocab(&group.runs)?;
    let t_min = group.runs.iter().map(LogitTensor::steps).min().unwrap_or(0);
    if t_min == 0 {
        return Err(Error::EmptyGeneration);
    }

    let prepared = group
        .runs
        .par_iter()
        .map(|r| PreparedRun::new(r, t_min, group.temperature))
        .collect::<Result<Vec<_>>>()?;

    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (&prepared[i], &prepared[j]);
            Ok([a.cosine(b)?, a.js(b)?, a.kl(b)?, a.mae(b)?])
        })
        .collect::<Result<Vec<[S; 4]>>>()?;

    let metrics = MetricId::ALL.map(|metric| {
        let k = metric.index();
        let pair_results: Vec<PairwiseResult<S>> = pairs
            .iter()
            .zip(&values)
            .map(|(&(i, j), vals)| PairwiseResult {
                i,
                j,
                metric,
                value: vals[k],
            })
            .collect();
        let (mean, std) = mean_and_population_std(pair_results.iter().map(|p| p.value));
        MetricSummary {
            metric,
            mean,
            std,
            pairs: pair_results,
        }
    });

    Ok(GroupMetrics {
        n_runs: n,
        aligned_steps: t_min,
        metrics,
    })
}

/// Sequential mean and population standard deviation.
pub fn mean_and_population_std<S: Scalar>(values: impl Iterator<Item = S> + Clone) -> (S, S) {
    let mut count = 0usize;
    let mut total = S::zero();
    for v in values.clone() {
        total = total + v;
        count += 1;
    }
    if count == 0 {
        return (S::nan(), S::nan());
    }
    let mean = total / S::from_count(count);
    let var: S = values.map(|v| (v - mean) * (v - mean)).sum::<S>() / S::from_count(count);
    (mean, var.sqrt())
}
