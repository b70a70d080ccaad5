//! A seeded synthetic autoregressive decoder.
//!
//! Logits come from a deterministic hash landscape (see [`landscape`]) scaled by
//! a per-profile sharpness, so every property the pairwise metrics measure is
//! reproducible at desk scale: greedy decoding is exact and repeatable,
//! sampling entropy grows with temperature, and sharper profiles keep narrower
//! nuclei. Three archetype profiles stand in for a general-purpose, a
//! biomedical and a pathology-specific model.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::metrics::{argmax, softmax_with_temperature};
use crate::{Error, Result, StoredTensor};

pub mod landscape;
pub mod sampling;
pub mod sweep;

pub use landscape::{DecodeState, Landscape};
pub use sampling::{nucleus_sample, perturb_gaussian};
pub use sweep::{sweep, SweepReport};

/// Nucleus mass used for temperature sampling.
pub const NUCLEUS_P: f64 = 0.9;

/// The three diagnostic prompt complexity levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Question {
    Q1,
    Q2,
    Q3,
}

impl Question {
    pub const ALL: [Question; 3] = [Question::Q1, Question::Q2, Question::Q3];

    pub fn as_str(self) -> &'static str {
        match self {
            Question::Q1 => "Q1",
            Question::Q2 => "Q2",
            Question::Q3 => "Q3",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Question::Q1 => "Basic cellular morphology assessment",
            Question::Q2 => "Intermediate tissue diagnosis with grading",
            Question::Q3 => "Advanced systematic quantitative analysis",
        }
    }
}

impl fmt::Display for Question {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Question {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "Q1" => Ok(Question::Q1),
            "Q2" => Ok(Question::Q2),
            "Q3" => Ok(Question::Q3),
            other => Err(Error::invalid(format!("unknown question id {other:?}"))),
        }
    }
}

/// Source of run-to-run variation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StochasticMode {
    /// Nucleus sampling from `softmax(z / T)`; greedy at `T = 0`.
    TemperatureSampling,
    /// Additive `N(0, (sigma0 * T)^2)` noise on the logits, then argmax.
    GaussianPerturbation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProfile {
    pub id: String,
    pub vocab_size: usize,
    pub sharpness: f64,
    pub question_sharpness: BTreeMap<Question, f64>,
    pub stochastic_mode: StochasticMode,
    pub sigma0: f64,
    pub max_tokens: usize,
    pub eos_token: u32,
}

pub const DEFAULT_VOCAB: usize = 512;
pub const DEFAULT_MAX_TOKENS: usize = 32;

impl ModelProfile {
    fn archetype(
        id: &str,
        sharpness: f64,
        factors: [f64; 3],
        stochastic_mode: StochasticMode,
    ) -> Self {
        Self {
            id: id.to_string(),
            vocab_size: DEFAULT_VOCAB,
            sharpness,
            question_sharpness: Question::ALL.into_iter().zip(factors).collect(),
            stochastic_mode,
            sigma0: 1.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            eos_token: 0,
        }
    }

    /// Broad, soft distributions with mild prompt dependence.
    pub fn general() -> Self {
        Self::archetype(
            "general",
            1.5,
            [1.5, 1.0, 0.7],
            StochasticMode::TemperatureSampling,
        )
    }

    /// Very sharp on the basic prompt, soft on the complex ones.
    pub fn biomedical() -> Self {
        Self::archetype(
            "biomedical",
            2.0,
            [4.0, 0.8, 0.6],
            StochasticMode::TemperatureSampling,
        )
    }

    /// Uniformly sharp; variation comes from logit noise rather than sampling.
    pub fn pathology() -> Self {
        Self::archetype(
            "pathology",
            8.0,
            [1.0, 1.0, 1.0],
            StochasticMode::GaussianPerturbation,
        )
    }

    pub fn defaults() -> Vec<Self> {
        vec![Self::general(), Self::biomedical(), Self::pathology()]
    }

    /// Reserved start-of-sequence index.
    pub fn bos_token(&self) -> u32 {
        (self.vocab_size - 1) as u32
    }

    pub fn question_factor(&self, question: Question) -> Result<f64> {
        self.question_sharpness.get(&question).copied().ok_or_else(|| {
            Error::invalid(format!(
                "profile {} has no sharpness factor for {question}",
                self.id
            ))
        })
    }

    /// Effective logit scale for a question.
    pub fn scale(&self, question: Question) -> Result<f64> {
        Ok(self.sharpness * self.question_factor(question)?)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::invalid(format!("profile {}: {msg}", self.id)));
        if self.id.is_empty() {
            return Err(Error::invalid("profile id must not be empty"));
        }
        if self.vocab_size < 3 {
            // EOS, BOS and at least one content token.
            return fail(format!("vocab_size {} < 3", self.vocab_size));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return fail(format!("sharpness {} must be positive", self.sharpness));
        }
        for (q, f) in &self.question_sharpness {
            if !(*f > 0.0 && f.is_finite()) {
                return fail(format!("question factor for {q} is {f}"));
            }
        }
        if !(self.sigma0 >= 0.0 && self.sigma0.is_finite()) {
            return fail(format!("sigma0 {} must be non-negative", self.sigma0));
        }
        if self.max_tokens == 0 {
            return fail("max_tokens must be at least 1".into());
        }
        if self.eos_token as usize >= self.vocab_size {
            return fail(format!("eos_token {} outside vocabulary", self.eos_token));
        }
        if self.eos_token == self.bos_token() {
            return fail("eos_token collides with the reserved BOS index".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationContext {
    pub model: String,
    pub image: String,
    pub question: Question,
    pub temperature: f64,
    /// 1-based repeat index.
    pub run_index: u32,
    pub master_seed: u64,
}

impl GenerationContext {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(Error::invalid(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        if self.run_index == 0 {
            return Err(Error::invalid("run_index is 1-based"));
        }
        Ok(())
    }
}

/// One generation run: its context plus the per-step logits and tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitRecord {
    pub context: GenerationContext,
    pub tensor: StoredTensor,
}

/// A profile bound to its validated landscape.
#[derive(Debug, Clone)]
pub struct Decoder {
    profile: ModelProfile,
    landscape: Landscape,
}

impl Decoder {
    pub fn new(profile: ModelProfile) -> Result<Self> {
        profile.validate()?;
        let landscape = Landscape::new(&profile);
        Ok(Self { profile, landscape })
    }

    pub fn profile(&self) -> &ModelProfile {
        &self.profile
    }

    /// Raw logits for a context, recomputed from scratch over the prefix.
    ///
    /// `prefix` holds the tokens generated after the implicit BOS.
    pub fn context_logits(&self, image: &str, question: Question, prefix: &[u32]) -> Result<Vec<f64>> {
        if prefix.len() >= self.profile.max_tokens {
            return Err(Error::SequenceComplete {
                len: prefix.len(),
                cap: self.profile.max_tokens,
            });
        }
        let mut state = DecodeState::new(&self.landscape, image, question, self.profile.scale(question)?);
        for &tok in prefix {
            state.advance(&self.landscape, tok);
        }
        Ok(state.logits(&self.landscape))
    }

    /// Runs one generation from BOS until EOS or the token cap.
    pub fn generate(&self, ctx: &GenerationContext) -> Result<LogitRecord> {
        ctx.validate()?;
        if ctx.model != self.profile.id {
            return Err(Error::invalid(format!(
                "context model {} does not match profile {}",
                ctx.model, self.profile.id
            )));
        }
        let p = &self.profile;
        let mut rng = landscape::run_rng(ctx);
        let mut state = DecodeState::new(&self.landscape, &ctx.image, ctx.question, p.scale(ctx.question)?);
        let mut values: Vec<f32> = Vec::with_capacity(p.max_tokens * p.vocab_size);
        let mut tokens = Vec::with_capacity(p.max_tokens);

        while tokens.len() < p.max_tokens {
            let raw = state.logits(&self.landscape);
            // Decisions are taken on the f32-rounded logits so that stored
            // greedy tokens equal the argmax of the stored rows.
            let row: Vec<f32> = match p.stochastic_mode {
                StochasticMode::TemperatureSampling => raw.iter().map(|&x| x as f32).collect(),
                StochasticMode::GaussianPerturbation => {
                    perturb_gaussian(&raw, p.sigma0, ctx.temperature, &mut rng)
                        .into_iter()
                        .map(|x| x as f32)
                        .collect()
                }
            };
            let token = match p.stochastic_mode {
                StochasticMode::TemperatureSampling if ctx.temperature > 0.0 => {
                    let z: Vec<f64> = row.iter().map(|&x| x as f64).collect();
                    let probs = softmax_with_temperature(&z, ctx.temperature)?;
                    nucleus_sample(&probs, NUCLEUS_P, &mut rng)?
                }
                _ => argmax(&row),
            } as u32;
            values.extend_from_slice(&row);
            tokens.push(token);
            if token == p.eos_token {
                break;
            }
            state.advance(&self.landscape, token);
        }

        Ok(LogitRecord {
            context: ctx.clone(),
            tensor: StoredTensor::new(p.vocab_size, values, tokens)?,
        })
    }
}

/// Convenience wrapper over [`Decoder::generate`].
pub fn generate_run(ctx: &GenerationContext, profile: &ModelProfile) -> Result<LogitRecord> {
    Decoder::new(profile.clone())?.generate(ctx)
}
