use rand::Rng;
use rand_distr::StandardNormal;

use crate::metrics::ProbVector;
use crate::{Error, Result, Scalar};

/// Tokens of the smallest probability-sorted prefix whose mass reaches `p`.
///
/// Sorted by descending probability, ties by ascending index. If rounding
/// keeps the cumulative mass below `p`, the whole vocabulary is returned.
pub fn nucleus<S: Scalar>(probs: &[S], p: S) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .expect("finite probabilities")
            .then(a.cmp(&b))
    });
    let mut mass = S::zero();
    let mut cut = order.len();
    for (k, &i) in order.iter().enumerate() {
        mass = mass + probs[i];
        if mass >= p {
            cut = k + 1;
            break;
        }
    }
    order.truncate(cut);
    order
}

/// Draws one token from the renormalized top-`p` nucleus.
pub fn nucleus_sample<S: Scalar, R: Rng + ?Sized>(
    probs: &ProbVector<S>,
    p: S,
    rng: &mut R,
) -> Result<usize> {
    if !(p > S::zero() && p <= S::one()) {
        return Err(Error::invalid(format!("nucleus mass must be in (0, 1], got {p}")));
    }
    let probs = probs.as_slice();
    let members = nucleus(probs, p);
    let mass: S = members.iter().map(|&i| probs[i]).sum();
    let target = S::lit(rng.random::<f64>()) * mass;
    let mut acc = S::zero();
    let mut last_positive = members[0];
    for &i in &members {
        if probs[i] > S::zero() {
            last_positive = i;
        }
        acc = acc + probs[i];
        if target < acc {
            return Ok(i);
        }
    }
    Ok(last_positive)
}

/// `z + eta` with `eta ~ N(0, (sigma0 * T)^2)` drawn independently per entry.
/// Returns `z` unchanged, without consuming randomness, when the scale is zero.
pub fn perturb_gaussian<S: Scalar, R: Rng + ?Sized>(
    z: &[S],
    sigma0: S,
    temperature: S,
    rng: &mut R,
) -> Vec<S> {
    let sigma = sigma0 * temperature;
    if sigma == S::zero() {
        return z.to_vec();
    }
    z.iter()
        .map(|&x| {
            let eta: f64 = rng.sample(StandardNormal);
            x + sigma * S::lit(eta)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn pv(p: &[f64]) -> ProbVector<f64> {
        ProbVector::new(p.to_vec()).unwrap()
    }

    #[test]
    fn singleton_nucleus_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let probs = pv(&[0.95, 0.03, 0.02]);
        for _ in 0..1000 {
            assert_eq!(nucleus_sample(&probs, 0.9, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn tail_outside_nucleus_never_drawn() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let probs = pv(&[0.5, 0.4, 0.1]);
        assert_eq!(nucleus(probs.as_slice(), 0.9), vec![0, 1]);
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            counts[nucleus_sample(&probs, 0.9, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[2], 0);
        assert!(counts[0] > 0 && counts[1] > 0);
    }

    #[test]
    fn full_nucleus_samples_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let probs = pv(&[0.1; 10]);
        let mut counts = [0usize; 10];
        let n = 100_000;
        for _ in 0..n {
            counts[nucleus_sample(&probs, 1.0, &mut rng).unwrap()] += 1;
        }
        let expected = n as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 9 degrees of freedom; 27.88 is the 0.999 quantile.
        assert!(chi2 < 27.88, "chi2 = {chi2}");
        for c in counts {
            assert!((c as f64 / n as f64 - 0.1).abs() < 0.01);
        }
    }

    #[test]
    fn ties_ordered_by_index() {
        assert_eq!(nucleus(&[0.25, 0.25, 0.25, 0.25], 0.5), vec![0, 1]);
        assert_eq!(nucleus(&[0.1, 0.45, 0.45], 0.5), vec![1, 2]);
    }

    #[test]
    fn invalid_nucleus_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let probs = pv(&[0.5, 0.5]);
        assert!(nucleus_sample(&probs, 0.0, &mut rng).is_err());
        assert!(nucleus_sample(&probs, 1.5, &mut rng).is_err());
    }

    #[test]
    fn gaussian_perturbation_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = vec![0.5f64; 100_000];
        assert_eq!(perturb_gaussian(&z, 1.0, 0.0, &mut rng), z);
        assert_eq!(perturb_gaussian(&z, 0.0, 0.8, &mut rng), z);
        let out = perturb_gaussian(&z, 1.0, 1.0, &mut rng);
        let diffs: Vec<f64> = out.iter().zip(&z).map(|(a, b)| a - b).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }
}
