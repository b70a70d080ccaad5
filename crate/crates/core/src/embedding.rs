//! Embedding-space characterization: class-token/mean pooling and an exact
//! O(n²) t-SNE.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::{Error, Result, Scalar};

/// `n` labelled points of dimension `d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<S> {
    ids: Vec<String>,
    dim: usize,
    data: Vec<S>,
}

impl<S: Scalar> EmbeddingSet<S> {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<S>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::invalid(format!(
                "{} values for {} points of dimension {dim}",
                data.len(),
                ids.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite embedding value for point {}",
                ids[i / dim]
            )));
        }
        Ok(Self { ids, dim, data })
    }

    /// Points named `p0, p1, ...`.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("ragged embedding rows"));
        }
        let ids = (0..rows.len()).map(|i| format!("p{i}")).collect();
        Self::new(ids, dim, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// The subset at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut ids = Vec::with_capacity(indices.len());
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("index {i} out of range")));
            }
            ids.push(self.ids[i].clone());
            data.extend_from_slice(self.row(i));
        }
        Self::new(ids, self.dim, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D<S> {
    ids: Vec<String>,
    coords: Vec<[S; 2]>,
    /// Final `KL(P || Q)` with the un-exaggerated `P`.
    pub kl_final: S,
    pub iterations: usize,
    /// `(iteration, KL(P || Q))`, sampled every 50 iterations and at the end,
    /// always against the un-exaggerated `P`.
    pub kl_trace: Vec<(usize, S)>,
    /// Points whose bandwidth search did not reach the entropy tolerance.
    pub calibration_warnings: usize,
}

impl<S: Scalar> Projection2D<S> {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn coords(&self) -> &[[S; 2]] {
        &self.coords
    }

    /// KL at the first logged iteration after early exaggeration ends.
    pub fn kl_after_exaggeration(&self, exaggeration_iters: usize) -> Option<S> {
        self.kl_trace
            .iter()
            .find(|(it, _)| *it >= exaggeration_iters)
            .map(|t| t.1)
    }
}

/// `[cls ; mean of patch rows]`. `patch_tokens` is row-major with rows of
/// `cls.len()` entries.
pub fn prism_pool<S: Scalar>(cls: &[S], patch_tokens: &[S]) -> Result<Vec<S>> {
    let d = cls.len();
    if d == 0 {
        return Err(Error::invalid("class token is empty"));
    }
    if patch_tokens.is_empty() {
        return Err(Error::invalid("no patch tokens to pool"));
    }
    if !patch_tokens.len().is_multiple_of(d) {
        return Err(Error::invalid(format!(
            "patch matrix of {} values is not a multiple of dimension {d}",
            patch_tokens.len()
        )));
    }
    let m = patch_tokens.len() / d;
    let mut mean = vec![S::zero(); d];
    for row in patch_tokens.chunks_exact(d) {
        for (acc, &v) in mean.iter_mut().zip(row) {
            *acc = *acc + v;
        }
    }
    let m = S::from_count(m);
    let mut out = cls.to_vec();
    out.extend(mean.into_iter().map(|s| s / m));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// Gaussian bandwidth `sigma`, with `beta = 1 / (2 sigma^2)`.
    pub sigma: f64,
    pub beta: f64,
    /// Conditional probabilities over the neighbours, in input order.
    pub probs: Vec<f64>,
    /// Shannon entropy (nats) of `probs`.
    pub entropy: f64,
    /// False when the search stopped on the step limit.
    pub converged: bool,
}

pub const CALIBRATION_TOL: f64 = 1e-5;
pub const CALIBRATION_MAX_STEPS: usize = 64;

fn gaussian_row(shifted: &[f64], beta: f64) -> (Vec<f64>, f64) {
    let w: Vec<f64> = shifted.iter().map(|&d| (-beta * d).exp()).collect();
    let z: f64 = w.iter().sum();
    let probs: Vec<f64> = w.iter().map(|x| x / z).collect();
    let mean_d: f64 = probs.iter().zip(shifted).map(|(p, d)| p * d).sum();
    (probs, z.ln() + beta * mean_d)
}

/// Binary search for the bandwidth whose conditional distribution over
/// `sq_distances` (the point's squared distances to every *other* point) has
/// perplexity `target`.
pub fn perplexity_calibration(sq_distances: &[f64], target: f64) -> Result<Calibration> {
    let n = sq_distances.len() + 1;
    if !(target >= 1.0 && target < n as f64) {
        return Err(Error::invalid(format!(
            "perplexity {target} outside [1, {n}) for {n} points"
        )));
    }
    if sq_distances.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::invalid("squared distances must be finite and non-negative"));
    }
    let goal = target.ln();
    let d_min = sq_distances.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = sq_distances.iter().map(|d| d - d_min).collect();
    let mean_shift = shifted.iter().sum::<f64>() / shifted.len() as f64;

    let mut beta = if mean_shift > 0.0 { 1.0 / mean_shift } else { 1.0 };
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    let mut converged = false;
    for _ in 0..CALIBRATION_MAX_STEPS {
        let (probs, h) = gaussian_row(&shifted, beta);
        let err = h - goal;
        if best.as_ref().is_none_or(|b| err.abs() < (b.2 - goal).abs()) {
            best = Some((beta, probs, h));
        }
        if err.abs() < CALIBRATION_TOL {
            converged = true;
            break;
        }
        if err > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    let (beta, probs, entropy) = best.expect("at least one step");
    Ok(Calibration {
        sigma: (0.5 / beta).sqrt(),
        beta,
        probs,
        entropy,
        converged,
    })
}

fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Symmetrized joint affinities `(P_cond + P_condᵀ) / 2n` (row-major, zero
/// diagonal) and the number of rows whose calibration did not converge.
pub fn joint_probabilities<S: Scalar>(set: &EmbeddingSet<S>, perplexity: f64) -> Result<(Vec<f64>, usize)> {
    let x: Vec<Vec<f64>> = (0..set.len())
        .map(|i| set.row(i).iter().map(|v| v.as_f64()).collect())
        .collect();
    joint_from_points(&x, perplexity)
}

fn joint_from_points(x: &[Vec<f64>], perplexity: f64) -> Result<(Vec<f64>, usize)> {
    let n = x.len();
    let d = squared_distances(x);
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d[i * n + j]).collect();
            perplexity_calibration(&others, perplexity)
        })
        .collect::<Result<Vec<_>>>()?;
    let warnings = rows.iter().filter(|c| !c.converged).count();
    if warnings > 0 {
        log::warn!("perplexity calibration did not converge for {warnings} of {n} points");
    }
    let mut cond = vec![0.0; n * n];
    for (i, c) in rows.iter().enumerate() {
        for (k, j) in (0..n).filter(|&j| j != i).enumerate() {
            cond[i * n + j] = c.probs[k];
        }
    }
    let two_n = 2.0 * n as f64;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / two_n;
            }
        }
    }
    Ok((p, warnings))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    pub momentum_switch: usize,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            momentum_switch: 250,
            init_std: 1e-4,
            seed: 0,
        }
    }
}

const KL_LOG_EVERY: usize = 50;
const Q_FLOOR: f64 = 1e-12;
const MIN_GAIN: f64 = 0.01;

/// Seeded `N(0, init_std^2)` starting coordinates.
pub fn initial_coordinates(n: usize, params: &TsneParams) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, params.init_std).expect("finite init_std");
    (0..n)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect()
}

pub fn tsne_fit<S: Scalar>(set: &EmbeddingSet<S>, params: &TsneParams) -> Result<Projection2D<S>> {
    let init = initial_coordinates(set.len(), params);
    tsne_fit_with_init(set, params, &init)
}

/// Exact t-SNE from explicit starting coordinates.
///
/// Points are processed in a canonical order (sorted by coordinates, then by
/// starting position) and mapped back afterwards, so permuting the input and
/// `init` together permutes the output bit for bit.
pub fn tsne_fit_with_init<S: Scalar>(
    set: &EmbeddingSet<S>,
    params: &TsneParams,
    init: &[[f64; 2]],
) -> Result<Projection2D<S>> {
    let n = set.len();
    if n < 4 {
        return Err(Error::invalid(format!("t-SNE needs at least 4 points, got {n}")));
    }
    if init.len() != n {
        return Err(Error::invalid("initial coordinates do not match the point count"));
    }
    if !(params.perplexity >= 1.0 && params.perplexity * 3.0 < n as f64) {
        return Err(Error::invalid(format!(
            "perplexity {} must be in [1, n/3) for n = {n}",
            params.perplexity
        )));
    }
    if !(params.learning_rate > 0.0 && params.init_std > 0.0 && params.exaggeration >= 1.0) {
        return Err(Error::invalid("learning rate, init std and exaggeration must be positive"));
    }
    let x: Vec<Vec<f64>> = (0..n)
        .map(|i| set.row(i).iter().map(|v| v.as_f64()).collect())
        .collect();
    if x.iter().all(|r| r == &x[0]) {
        return Err(Error::DegenerateInput("all points are identical".into()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        x[a].iter()
            .zip(&x[b])
            .map(|(u, v)| u.total_cmp(v))
            .chain(init[a].iter().zip(&init[b]).map(|(u, v)| u.total_cmp(v)))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let xs: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
    let ys: Vec<[f64; 2]> = order.iter().map(|&i| init[i]).collect();

    let (p, calibration_warnings) = joint_from_points(&xs, params.perplexity)?;
    let (y, kl_trace) = optimize(&p, ys, params);

    let mut coords = vec![[S::zero(); 2]; n];
    for (k, &i) in order.iter().enumerate() {
        coords[i] = [S::lit(y[k][0]), S::lit(y[k][1])];
    }
    let kl_final = kl_trace.last().map_or(0.0, |t| t.1);
    Ok(Projection2D {
        ids: set.ids().to_vec(),
        coords,
        kl_final: S::lit(kl_final),
        iterations: params.iterations,
        kl_trace: kl_trace.into_iter().map(|(i, v)| (i, S::lit(v))).collect(),
        calibration_warnings,
    })
}

/// Student-t kernel `1 / (1 + |y_i - y_j|^2)` with zero diagonal, and its sum.
fn student_kernel(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let num: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..n).map(move |j| {
                if i == j {
                    0.0
                } else {
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    1.0 / (1.0 + dx * dx + dy * dy)
                }
            })
        })
        .collect();
    let z = num.chunks(n).map(|r| r.iter().sum::<f64>()).sum();
    (num, z)
}

fn kl_objective(p: &[f64], num: &[f64], z: f64) -> f64 {
    p.iter()
        .zip(num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &nij)| pij * (pij / (nij / z).max(Q_FLOOR)).ln())
        .sum()
}

fn optimize(p: &[f64], mut y: Vec<[f64; 2]>, params: &TsneParams) -> (Vec<[f64; 2]>, Vec<(usize, f64)>) {
    let n = y.len();
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut trace = Vec::new();

    for iter in 0..params.iterations {
        let (num, z) = student_kernel(&y);
        if iter % KL_LOG_EVERY == 0 {
            trace.push((iter, kl_objective(p, &num, z)));
        }
        let exag = if iter < params.exaggeration_iters {
            params.exaggeration
        } else {
            1.0
        };
        let momentum = if iter < params.momentum_switch {
            params.momentum_initial
        } else {
            params.momentum_final
        };
        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    let w = (exag * p[i * n + j] - num[i * n + j] / z) * num[i * n + j];
                    g[0] += w * (y[i][0] - y[j][0]);
                    g[1] += w * (y[i][1] - y[j][1]);
                }
                [4.0 * g[0], 4.0 * g[1]]
            })
            .collect();
        for i in 0..n {
            for k in 0..2 {
                gains[i][k] = if (grad[i][k] > 0.0) != (update[i][k] > 0.0) {
                    gains[i][k] + 0.2
                } else {
                    (gains[i][k] * 0.8).max(MIN_GAIN)
                };
                update[i][k] = momentum * update[i][k] - params.learning_rate * gains[i][k] * grad[i][k];
                y[i][k] += update[i][k];
            }
        }
        let cx = y.iter().map(|c| c[0]).sum::<f64>() / n as f64;
        let cy = y.iter().map(|c| c[1]).sum::<f64>() / n as f64;
        for c in &mut y {
            c[0] -= cx;
            c[1] -= cy;
        }
    }
    let (num, z) = student_kernel(&y);
    trace.push((params.iterations, kl_objective(p, &num, z)));
    (y, trace)
}

/// Greedy farthest-point subset of size `k`, starting from `start`. Ties go to
/// the lowest index.
pub fn farthest_point_subset<S: Scalar>(set: &EmbeddingSet<S>, k: usize, start: usize) -> Result<Vec<usize>> {
    let n = set.len();
    if k > n || start >= n {
        return Err(Error::invalid(format!(
            "cannot select {k} points starting at {start} from {n}"
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let dist = |a: usize, b: usize| -> f64 {
        set.row(a)
            .iter()
            .zip(set.row(b))
            .map(|(u, v)| (u.as_f64() - v.as_f64()).powi(2))
            .sum()
    };
    let mut chosen = vec![start];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist(i, start)).collect();
    while chosen.len() < k {
        let mut best = None;
        for i in 0..n {
            if chosen.contains(&i) {
                continue;
            }
            if best.is_none_or(|b: usize| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        let next = best.expect("k <= n");
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist(i, next));
        }
    }
    Ok(chosen)
}
