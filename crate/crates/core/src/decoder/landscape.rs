//! The hash landscape behind [`Decoder`](super::Decoder).
//!
//! For a context `(image, question, prefix)` at position `t = prefix.len()` the
//! raw logits are `scale * shape`, where `scale = sharpness * question factor`
//! and `shape` combines:
//!
//! - a positional field in `[-1, 1]` per token, hashed from `(image, question, t)`,
//! - a preferred token lifted to `1 + 3c`, with a hashed confidence
//!   `c in [0.1, 2]` (shifted, truncated exponential),
//! - a drift vector: every earlier token that departed from its position's
//!   preferred token adds a uniform `[-1, 1]` vector hashed from the prefix up to
//!   and including that token, weighted by `0.5`,
//! - an EOS entry ramping quadratically with position so that greedy sequences
//!   end around half the token cap,
//! - a BOS entry pinned below every reachable logit.
//!
//! [`DecodeState`] carries the prefix hash and the accumulated drift forward
//! one token at a time, so a decoding step costs `O(|V|)` regardless of the
//! prefix length (the simulator's analogue of a KV cache).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{GenerationContext, ModelProfile, Question};

const CONFIDENCE_SCALE: f64 = 3.0;
const CONFIDENCE_FLOOR: f64 = 0.1;
const CONFIDENCE_CAP: f64 = 2.0;
const DRIFT_SCALE: f64 = 0.5;

type Hash = [u8; 32];

/// SHA-256 over length-prefixed parts.
fn digest(parts: &[&[u8]]) -> Hash {
    let mut h = Sha256::new();
    for part in parts {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    h.finalize().into()
}

/// Per-run sampling stream, independent across every context field.
pub(crate) fn run_rng(ctx: &GenerationContext) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(&[
        b"run",
        &ctx.master_seed.to_le_bytes(),
        ctx.model.as_bytes(),
        ctx.image.as_bytes(),
        ctx.question.as_str().as_bytes(),
        &ctx.temperature.to_bits().to_le_bytes(),
        &ctx.run_index.to_le_bytes(),
    ]))
}

fn uniform_field(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

/// Vocabulary layout shared by every context of one profile.
#[derive(Debug, Clone)]
pub struct Landscape {
    vocab: usize,
    eos: usize,
    bos: usize,
    half_length: f64,
}

#[derive(Debug, Clone)]
struct PositionField {
    field: Vec<f64>,
    preferred: usize,
    confidence: f64,
}

impl Landscape {
    pub fn new(profile: &ModelProfile) -> Self {
        Self {
            vocab: profile.vocab_size,
            eos: profile.eos_token as usize,
            bos: profile.bos_token() as usize,
            half_length: (profile.max_tokens as f64 / 2.0).max(1.0),
        }
    }

    fn position_field(&self, image: &str, question: Question, position: usize) -> PositionField {
        let mut rng = ChaCha8Rng::from_seed(digest(&[
            b"position",
            image.as_bytes(),
            question.as_str().as_bytes(),
            &(position as u64).to_le_bytes(),
        ]));
        let field = uniform_field(&mut rng, self.vocab);
        let preferred = loop {
            let cand = rng.random_range(0..self.vocab);
            if cand != self.eos && cand != self.bos {
                break cand;
            }
        };
        let u: f64 = rng.random();
        let confidence = (CONFIDENCE_FLOOR - (1.0 - u).ln()).min(CONFIDENCE_CAP);
        PositionField {
            field,
            preferred,
            confidence,
        }
    }

    fn drift_increment(&self, prefix_hash: &Hash) -> Vec<f64> {
        let mut rng = ChaCha8Rng::from_seed(digest(&[b"drift", prefix_hash]));
        uniform_field(&mut rng, self.vocab)
    }
}

/// Incremental decoding state for one `(image, question)` context.
#[derive(Debug, Clone)]
pub struct DecodeState {
    image: String,
    question: Question,
    scale: f64,
    position: usize,
    prefix_hash: Hash,
    drift: Vec<f64>,
    current: PositionField,
}

impl DecodeState {
    pub fn new(landscape: &Landscape, image: &str, question: Question, scale: f64) -> Self {
        Self {
            image: image.to_string(),
            question,
            scale,
            position: 0,
            prefix_hash: digest(&[
                b"bos",
                image.as_bytes(),
                question.as_str().as_bytes(),
                &(landscape.bos as u64).to_le_bytes(),
            ]),
            drift: vec![0.0; landscape.vocab],
            current: landscape.position_field(image, question, 0),
        }
    }

    /// Number of tokens generated so far.
    pub fn len(&self) -> usize {
        self.position
    }

    pub fn is_empty(&self) -> bool {
        self.position == 0
    }

    /// The token this position's landscape favours.
    pub fn preferred_token(&self) -> u32 {
        self.current.preferred as u32
    }

    pub fn logits(&self, landscape: &Landscape) -> Vec<f64> {
        let k = self.scale;
        let mut z: Vec<f64> = self
            .current
            .field
            .iter()
            .zip(&self.drift)
            .map(|(&s, &d)| k * (s + DRIFT_SCALE * d))
            .collect();
        let pref = self.current.preferred;
        z[pref] = k * (1.0 + CONFIDENCE_SCALE * self.current.confidence + DRIFT_SCALE * self.drift[pref]);
        let ramp = ((self.position as f64 + 1.0) / landscape.half_length).powi(2);
        z[landscape.eos] =
            k * ((1.0 + CONFIDENCE_SCALE) * ramp + DRIFT_SCALE * self.drift[landscape.eos]);
        z[landscape.bos] = -k * (2.0 + CONFIDENCE_SCALE * CONFIDENCE_CAP);
        z
    }

    /// Appends `token` to the prefix.
    pub fn advance(&mut self, landscape: &Landscape, token: u32) {
        self.prefix_hash = digest(&[b"prefix", &self.prefix_hash, &token.to_le_bytes()]);
        if token as usize != self.current.preferred {
            let inc = landscape.drift_increment(&self.prefix_hash);
            for (d, r) in self.drift.iter_mut().zip(inc) {
                *d += r;
            }
        }
        self.position += 1;
        self.current = landscape.position_field(&self.image, self.question, self.position);
    }
}
