use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::{GenerationContext, ModelProfile, Question};
use crate::store::{join_relative, read_record, write_atomic};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_DIR: &str = "records";

/// Master seed of the built-in desk configuration.
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionSpec {
    pub id: Question,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordEntry {
    /// `/`-separated, relative to the run directory.
    pub path: String,
    pub complete: bool,
}

/// Experiment grid plus the index of record files it produced.
///
/// The same shape doubles as the input config of a sweep, with `records`
/// omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    pub master_seed: u64,
    pub models: Vec<ModelProfile>,
    pub images: Vec<String>,
    pub questions: Vec<QuestionSpec>,
    pub temperatures: Vec<f64>,
    pub repeats: u32,
    #[serde(default)]
    pub records: Vec<RecordEntry>,
}

/// Ids become path components, so they are restricted to `[A-Za-z0-9._-]`.
pub fn check_id(kind: &str, id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'));
    if ok {
        Ok(())
    } else {
        Err(Error::Schema(format!("{kind} id {id:?} is not path-safe")))
    }
}

fn temperature_dir(t: f64) -> String {
    format!("T{t:.2}")
}

impl RunManifest {
    /// 3 archetypes, 4 images, 3 questions, 11 temperatures, 10 repeats.
    pub fn desk_default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            master_seed: DEFAULT_SEED,
            models: ModelProfile::defaults(),
            images: (0..4).map(|i| format!("img{i:03}")).collect(),
            questions: Question::ALL
                .into_iter()
                .map(|id| QuestionSpec {
                    id,
                    label: id.label().to_string(),
                })
                .collect(),
            temperatures: (0..=10).map(|i| i as f64 / 10.0).collect(),
            repeats: 10,
            records: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let schema = |msg: String| Err(Error::Schema(msg));
        if self.schema_version != SCHEMA_VERSION {
            return schema(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.models.is_empty() || self.images.is_empty() || self.questions.is_empty() {
            return schema("models, images and questions must be non-empty".into());
        }
        if self.temperatures.is_empty() || self.repeats == 0 {
            return schema("temperatures and repeats must be non-empty".into());
        }
        let mut seen = BTreeSet::new();
        for m in &self.models {
            check_id("model", &m.id)?;
            m.validate().map_err(|e| Error::Schema(e.to_string()))?;
            if !seen.insert(m.id.as_str()) {
                return schema(format!("duplicate model id {}", m.id));
            }
            for q in &self.questions {
                m.question_factor(q.id).map_err(|e| Error::Schema(e.to_string()))?;
            }
        }
        let mut seen = BTreeSet::new();
        for img in &self.images {
            check_id("image", img)?;
            if !seen.insert(img.as_str()) {
                return schema(format!("duplicate image id {img}"));
            }
        }
        let mut seen = BTreeSet::new();
        for q in &self.questions {
            if !seen.insert(q.id) {
                return schema(format!("duplicate question id {}", q.id));
            }
        }
        for w in self.temperatures.windows(2) {
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(w[0] < w[1]) {
                return schema(format!(
                    "temperature grid must be strictly increasing ({} then {})",
                    w[0], w[1]
                ));
            }
            if temperature_dir(w[0]) == temperature_dir(w[1]) {
                return schema(format!("temperatures {} and {} share a directory", w[0], w[1]));
            }
        }
        if let Some(t) = self.temperatures.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return schema(format!("temperature {t} outside [0, 1]"));
        }
        for r in &self.records {
            let parts: Vec<&str> = r.path.split('/').collect();
            if parts.iter().any(|p| check_id("path", p).is_err()) {
                return schema(format!("record path {:?} escapes the run directory", r.path));
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn total_records(&self) -> usize {
        self.models.len()
            * self.images.len()
            * self.questions.len()
            * self.temperatures.len()
            * self.repeats as usize
    }

    pub fn record_path(&self, ctx: &GenerationContext) -> String {
        format!(
            "{RECORDS_DIR}/{}/{}/{}/{}/run{:03}.luq",
            ctx.model,
            ctx.image,
            ctx.question,
            temperature_dir(ctx.temperature),
            ctx.run_index
        )
    }

    /// Every generation context of the grid, ordered by model, image,
    /// question, temperature and run index.
    pub fn contexts(&self) -> Vec<GenerationContext> {
        let mut out = Vec::with_capacity(self.total_records());
        for m in &self.models {
            for img in &self.images {
                for q in &self.questions {
                    for &t in &self.temperatures {
                        for run in 1..=self.repeats {
                            out.push(GenerationContext {
                                model: m.id.clone(),
                                image: img.clone(),
                                question: q.id,
                                temperature: t,
                                run_index: run,
                                master_seed: self.master_seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// True when every grid record is indexed and flagged complete.
    pub fn is_complete(&self) -> bool {
        self.records.len() == self.total_records() && self.records.iter().all(|r| r.complete)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Schema(e.to_string()))?;
        text.push('\n');
        write_atomic(path.as_ref(), text.as_bytes())
    }

    /// Parses every record flagged complete; returns how many were checked.
    pub fn verify_records(&self, run_dir: impl AsRef<Path>) -> Result<usize> {
        let mut n = 0;
        for r in self.records.iter().filter(|r| r.complete) {
            read_record(join_relative(run_dir.as_ref(), &r.path))?;
            n += 1;
        }
        Ok(n)
    }
}
