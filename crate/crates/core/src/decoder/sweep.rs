use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use super::{Decoder, GenerationContext};
use crate::store::{
    read_record, write_record, RecordEntry, RunManifest, MANIFEST_FILE,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepReport {
    pub total: usize,
    pub generated: usize,
    pub skipped: usize,
}

fn same_grid(a: &RunManifest, b: &RunManifest) -> bool {
    a.master_seed == b.master_seed
        && a.models == b.models
        && a.images == b.images
        && a.questions == b.questions
        && a.temperatures == b.temperatures
        && a.repeats == b.repeats
}

fn is_complete_record(path: &Path, ctx: &GenerationContext, vocab: usize) -> bool {
    match read_record(path) {
        Ok(r) => {
            r.header.run_index == ctx.run_index
                && r.header.temperature == ctx.temperature as f32
                && r.header.vocab_size as usize == vocab
        }
        Err(_) => false,
    }
}

/// Generates one record file per grid context under `run_dir` and writes the
/// manifest.
///
/// Existing records that parse and match their context are kept; anything
/// else at a record path (a partial or foreign file) is regenerated. Records
/// are produced in parallel on the current rayon pool; the output bytes do
/// not depend on scheduling.
pub fn sweep(config: &RunManifest, run_dir: impl AsRef<Path>) -> Result<SweepReport> {
    let run_dir = run_dir.as_ref();
    config.validate()?;
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;

    let manifest_path = run_dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let existing = RunManifest::load(&manifest_path)?;
        if !same_grid(&existing, config) {
            return Err(Error::Schema(format!(
                "{} was produced by a different grid or seed",
                manifest_path.display()
            )));
        }
    }

    let decoders: HashMap<&str, Decoder> = config
        .models
        .iter()
        .map(|m| Ok((m.id.as_str(), Decoder::new(m.clone())?)))
        .collect::<Result<_>>()?;
    let contexts = config.contexts();
    let mut manifest = config.clone();
    manifest.records = contexts
        .iter()
        .map(|c| RecordEntry {
            path: config.record_path(c),
            complete: false,
        })
        .collect();
    manifest.save(&manifest_path)?;

    let skipped = AtomicUsize::new(0);
    contexts
        .par_iter()
        .zip(&manifest.records)
        .try_for_each(|(ctx, entry)| -> Result<()> {
            let dec = &decoders[ctx.model.as_str()];
            let path = crate::store::join_relative(run_dir, &entry.path);
            if is_complete_record(&path, ctx, dec.profile().vocab_size) {
                skipped.fetch_add(1, Ordering::Relaxed);
                return Ok(());
            }
            write_record(&dec.generate(ctx)?, &path)
        })?;

    for r in &mut manifest.records {
        r.complete = true;
    }
    manifest.save(&manifest_path)?;

    let skipped = skipped.into_inner();
    let total = contexts.len();
    log::info!("sweep: {total} records, {} generated, {skipped} kept", total - skipped);
    Ok(SweepReport {
        total,
        generated: total - skipped,
        skipped,
    })
}
