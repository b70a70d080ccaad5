//! CSV artifacts.
//!
//! | file                  | columns |
//! |-----------------------|---------|
//! | `cells.csv`           | model, question, temperature, metric, raw_mean, raw_std, normalized_mean, pair_count |
//! | `summary.csv`         | model, question, metric, mu, delta_T |
//! | `correlations.csv`    | metric_a, metric_b, r, n_obs |
//! | `operating_points.csv`| model, question, max_safe_T, constraints |
//! | `figure_{metric}.csv` | model, question, temperature, normalized_mean |
//! | projection            | id, x, y, selected |
//! | `embeddings.csv` (in) | id, then one column per dimension |
//!
//! An unset `normalized_mean` is written as an empty field; an infeasible
//! `max_safe_T` as `none`.

use std::path::{Path, PathBuf};

use crate::analysis::{check_grid, CorrelationMatrix, MetricCell, OperatingPoint, SummaryRow};
use crate::embedding::{EmbeddingSet, Projection2D};
use crate::metrics::MetricId;
use crate::store::write_atomic;
use crate::{Error, Result};

pub const CELLS_HEADER: [&str; 8] = [
    "model",
    "question",
    "temperature",
    "metric",
    "raw_mean",
    "raw_std",
    "normalized_mean",
    "pair_count",
];
pub const SUMMARY_HEADER: [&str; 5] = ["model", "question", "metric", "mu", "delta_T"];
pub const CORRELATIONS_HEADER: [&str; 4] = ["metric_a", "metric_b", "r", "n_obs"];
pub const OPERATING_POINTS_HEADER: [&str; 4] = ["model", "question", "max_safe_T", "constraints"];
pub const FIGURE_HEADER: [&str; 4] = ["model", "question", "temperature", "normalized_mean"];
pub const PROJECTION_HEADER: [&str; 4] = ["id", "x", "y", "selected"];

/// Six significant digits, printed without trailing zeros.
pub fn format_sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("float formatting round-trips");
    // Avoid "-0".
    if rounded == 0.0 {
        "0".into()
    } else {
        rounded.to_string()
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_table<const N: usize>(
    path: &Path,
    header: [&str; N],
    rows: impl IntoIterator<Item = [String; N]>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).map_err(csv_err(path))?;
    let mut n = 0usize;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid(format!(
            "refusing to write {} without data rows",
            path.display()
        )));
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

fn read_table(path: &Path, expected: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if !expected.is_empty() && header.iter().ne(expected.iter().copied()) {
        return Err(Error::Schema(format!(
            "{}: header {:?}, expected {:?}",
            path.display(),
            header.iter().collect::<Vec<_>>(),
            expected
        )));
    }
    r.records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(csv_err(path))
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = rec.get(i).unwrap_or_default();
    raw.trim().parse().map_err(|_| {
        let line = rec.position().map_or(0, |p| p.line());
        Error::Schema(format!(
            "{}:{line}: cannot parse {name} from {raw:?}",
            path.display()
        ))
    })
}

pub fn export_cells(path: impl AsRef<Path>, cells: &[MetricCell]) -> Result<()> {
    let path = path.as_ref();
    if cells.is_empty() {
        return Err(Error::IncompleteGrid("no cells to export".into()));
    }
    write_table(
        path,
        CELLS_HEADER,
        cells.iter().map(|c| {
            [
                c.model.clone(),
                c.question.to_string(),
                format_sig6(c.temperature),
                c.metric.to_string(),
                format_sig6(c.raw_mean),
                format_sig6(c.raw_std),
                c.normalized_mean.map(format_sig6).unwrap_or_default(),
                c.pair_count.to_string(),
            ]
        }),
    )
}

pub fn import_cells(path: impl AsRef<Path>) -> Result<Vec<MetricCell>> {
    let path = path.as_ref();
    let rows = read_table(path, &CELLS_HEADER)?;
    if rows.is_empty() {
        return Err(Error::IncompleteGrid(format!("{} has no cells", path.display())));
    }
    rows.iter()
        .map(|r| {
            let norm = r.get(6).unwrap_or_default().trim();
            Ok(MetricCell {
                model: r.get(0).unwrap_or_default().to_string(),
                question: field(path, r, 1, "question")?,
                temperature: field(path, r, 2, "temperature")?,
                metric: field(path, r, 3, "metric")?,
                raw_mean: field(path, r, 4, "raw_mean")?,
                raw_std: field(path, r, 5, "raw_std")?,
                normalized_mean: if norm.is_empty() {
                    None
                } else {
                    Some(field(path, r, 6, "normalized_mean")?)
                },
                pair_count: field(path, r, 7, "pair_count")?,
            })
        })
        .collect()
}

pub fn export_summary(path: impl AsRef<Path>, rows: &[SummaryRow]) -> Result<()> {
    write_table(
        path.as_ref(),
        SUMMARY_HEADER,
        rows.iter().map(|s| {
            [
                s.model.clone(),
                s.question.to_string(),
                s.metric.to_string(),
                format_sig6(s.mu),
                format_sig6(s.delta_t),
            ]
        }),
    )
}

/// All 16 ordered metric pairs, including the unit diagonal.
pub fn export_correlations(path: impl AsRef<Path>, m: &CorrelationMatrix) -> Result<()> {
    let rows = MetricId::ALL.into_iter().flat_map(|a| {
        MetricId::ALL.into_iter().map(move |b| {
            [
                a.to_string(),
                b.to_string(),
                format_sig6(m.get(a, b)),
                m.n_obs.to_string(),
            ]
        })
    });
    write_table(path.as_ref(), CORRELATIONS_HEADER, rows)
}

pub fn export_operating_points(path: impl AsRef<Path>, points: &[OperatingPoint]) -> Result<()> {
    write_table(
        path.as_ref(),
        OPERATING_POINTS_HEADER,
        points.iter().map(|p| {
            [
                p.model.clone(),
                p.question.to_string(),
                p.max_safe_temperature
                    .map(format_sig6)
                    .unwrap_or_else(|| "none".into()),
                p.constraints_label(),
            ]
        }),
    )
}

pub fn figure_file_name(metric: MetricId) -> String {
    format!("figure_{}.csv", metric.as_str().to_ascii_lowercase())
}

/// One file per metric present in `cells`, in [`MetricId::ALL`] order; rows
/// keep the order of `cells`.
pub fn export_figure_data(dir: impl AsRef<Path>, cells: &[MetricCell]) -> Result<Vec<PathBuf>> {
    check_grid(cells)?;
    if let Some(c) = cells.iter().find(|c| c.normalized_mean.is_none()) {
        return Err(Error::invalid(format!(
            "cell {}/{}/T={}/{} has no normalized value",
            c.model, c.question, c.temperature, c.metric
        )));
    }
    let mut written = Vec::new();
    for metric in MetricId::ALL {
        if !cells.iter().any(|c| c.metric == metric) {
            continue;
        }
        let path = dir.as_ref().join(figure_file_name(metric));
        write_table(
            &path,
            FIGURE_HEADER,
            cells.iter().filter(|c| c.metric == metric).map(|c| {
                [
                    c.model.clone(),
                    c.question.to_string(),
                    format_sig6(c.temperature),
                    format_sig6(c.normalized_mean.unwrap()),
                ]
            }),
        )?;
        written.push(path);
    }
    Ok(written)
}

/// Reads `id, v1, ..., vd` rows. Column names after `id` are free-form.
pub fn import_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet<f64>> {
    let path = path.as_ref();
    let rows = read_table(path, &[])?;
    let mut ids = Vec::with_capacity(rows.len());
    let mut data = Vec::new();
    let dim = rows.first().map_or(0, |r| r.len().saturating_sub(1));
    for r in &rows {
        if r.len() != dim + 1 {
            return Err(Error::Schema(format!(
                "{}: row {:?} has {} columns, expected {}",
                path.display(),
                r.get(0),
                r.len(),
                dim + 1
            )));
        }
        ids.push(r.get(0).unwrap_or_default().to_string());
        for i in 1..=dim {
            data.push(field::<f64>(path, r, i, "embedding value")?);
        }
    }
    EmbeddingSet::new(ids, dim, data)
}

/// Writes `id, x, y, selected`, where `selected` marks the indices in
/// `selected` with 1.
pub fn export_projection(
    path: impl AsRef<Path>,
    projection: &Projection2D<f64>,
    selected: &[usize],
) -> Result<()> {
    let mut mask = vec![false; projection.len()];
    for &i in selected {
        *mask.get_mut(i).ok_or_else(|| {
            Error::invalid(format!("selected index {i} out of range"))
        })? = true;
    }
    write_table(
        path.as_ref(),
        PROJECTION_HEADER,
        projection
            .ids()
            .iter()
            .zip(projection.coords())
            .zip(mask)
            .map(|((id, xy), sel)| {
                [
                    id.clone(),
                    format_sig6(xy[0]),
                    format_sig6(xy[1]),
                    u8::from(sel).to_string(),
                ]
            }),
    )
}
