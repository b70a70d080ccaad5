//! Cell-level analysis: per-model normalization, temperature summaries,
//! cross-metric correlations and operating-point selection.
//!
//! A [`MetricCell`] aggregates the pairwise values of one
//! `(model, question, temperature, metric)` combination. Every operation here
//! preserves the first-appearance order of its input.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::decoder::Question;
use crate::metrics::MetricId;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricCell {
    pub model: String,
    pub question: Question,
    pub temperature: f64,
    pub metric: MetricId,
    pub raw_mean: f64,
    /// Population standard deviation over the pooled pairs.
    pub raw_std: f64,
    pub normalized_mean: Option<f64>,
    pub pair_count: usize,
}

impl MetricCell {
    fn normalized(&self) -> Result<f64> {
        self.normalized_mean.ok_or_else(|| {
            Error::invalid(format!(
                "cell {}/{}/T={}/{} has not been normalized",
                self.model, self.question, self.temperature, self.metric
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: String,
    pub question: Question,
    pub metric: MetricId,
    /// Mean normalized value over the temperature grid.
    pub mu: f64,
    /// `|M(T=1) - M(T=0)|` on normalized values.
    pub delta_t: f64,
}

/// Pearson correlations between the four metrics, in [`MetricId::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub r: [[f64; 4]; 4],
    pub n_obs: usize,
}

impl CorrelationMatrix {
    pub fn get(&self, a: MetricId, b: MetricId) -> f64 {
        self.r[a.index()][b.index()]
    }
}

impl fmt::Display for CorrelationMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>5}", "")?;
        for m in MetricId::ALL {
            write!(f, " {:>8}", m.as_str())?;
        }
        writeln!(f)?;
        for a in MetricId::ALL {
            write!(f, "{:>5}", a.as_str())?;
            for b in MetricId::ALL {
                write!(f, " {:>8.3}", self.get(a, b))?;
            }
            writeln!(f)?;
        }
        write!(f, "(n = {})", self.n_obs)
    }
}

#[derive(Debug, Clone)]
pub struct Normalization {
    pub cells: Vec<MetricCell>,
    /// One message per constant `(model, metric)` scope.
    pub warnings: Vec<String>,
}

/// Index groups by key, in order of first appearance.
fn group_by<K: Eq + std::hash::Hash + Clone>(keys: impl Iterator<Item = K>) -> Vec<(K, Vec<usize>)> {
    let mut index: HashMap<K, usize> = HashMap::new();
    let mut groups: Vec<(K, Vec<usize>)> = Vec::new();
    for (i, key) in keys.enumerate() {
        let slot = *index.entry(key.clone()).or_insert_with(|| {
            groups.push((key, Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(i);
    }
    groups
}

/// Min-max normalization of `raw_mean` within each `(model, metric)` scope,
/// jointly over all questions and temperatures.
///
/// A constant scope maps to all zeros and produces a warning.
pub fn normalize_per_model_metric(cells: &[MetricCell]) -> Result<Normalization> {
    if let Some(c) = cells.iter().find(|c| !c.raw_mean.is_finite()) {
        return Err(Error::invalid(format!(
            "non-finite raw mean in {}/{}/T={}/{}",
            c.model, c.question, c.temperature, c.metric
        )));
    }
    let mut out = cells.to_vec();
    let mut warnings = Vec::new();
    for ((model, metric), idx) in group_by(cells.iter().map(|c| (c.model.clone(), c.metric))) {
        let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            (lo.min(cells[i].raw_mean), hi.max(cells[i].raw_mean))
        });
        let range = hi - lo;
        if range == 0.0 {
            let msg = format!("degenerate scale for {model}/{metric}: all raw values equal {lo}");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        for i in idx {
            out[i].normalized_mean = Some(if range == 0.0 {
                0.0
            } else {
                (cells[i].raw_mean - lo) / range
            });
        }
    }
    Ok(Normalization { cells: out, warnings })
}

/// Temperatures present anywhere in the cell list, ascending.
fn temperature_grid(cells: &[MetricCell]) -> Vec<f64> {
    let mut temps: Vec<f64> = cells.iter().map(|c| c.temperature).collect();
    temps.sort_by(f64::total_cmp);
    temps.dedup();
    temps
}

/// Verifies that every model has a cell for every combination of the global
/// question set, temperature grid and metric set.
pub fn check_grid(cells: &[MetricCell]) -> Result<()> {
    if cells.is_empty() {
        return Err(Error::IncompleteGrid("no cells".into()));
    }
    let temps = temperature_grid(cells);
    let questions: BTreeSet<Question> = cells.iter().map(|c| c.question).collect();
    let metrics: BTreeSet<MetricId> = cells.iter().map(|c| c.metric).collect();
    let present: BTreeSet<(&str, Question, u64, MetricId)> = cells
        .iter()
        .map(|c| (c.model.as_str(), c.question, c.temperature.to_bits(), c.metric))
        .collect();
    if present.len() != cells.len() {
        return Err(Error::invalid("duplicate cells in grid"));
    }
    let mut missing = Vec::new();
    for (model, _) in group_by(cells.iter().map(|c| c.model.as_str())) {
        for &q in &questions {
            for &t in &temps {
                for &m in &metrics {
                    if !present.contains(&(model, q, t.to_bits(), m)) {
                        missing.push(format!("{model}/{q}/T={t}/{m}"));
                    }
                }
            }
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::IncompleteGrid(format!("missing cells: {}", missing.join(", "))))
    }
}

/// Mean over the temperature grid and endpoint effect `|M(1) - M(0)|` per
/// `(model, question, metric)`, on normalized values.
pub fn summary_stats(cells: &[MetricCell]) -> Result<Vec<SummaryRow>> {
    let grid = temperature_grid(cells);
    let mut rows = Vec::new();
    for ((model, question, metric), idx) in
        group_by(cells.iter().map(|c| (c.model.clone(), c.question, c.metric)))
    {
        let mut series: Vec<(f64, f64)> = idx
            .iter()
            .map(|&i| Ok((cells[i].temperature, cells[i].normalized()?)))
            .collect::<Result<_>>()?;
        series.sort_by(|a, b| a.0.total_cmp(&b.0));
        let at = |t: f64| series.iter().find(|(temp, _)| *temp == t).map(|s| s.1);
        let mut missing: Vec<String> = Vec::new();
        for &t in grid.iter().chain([0.0, 1.0].iter()) {
            if at(t).is_none() && !missing.contains(&format!("T={t}")) {
                missing.push(format!("T={t}"));
            }
        }
        if !missing.is_empty() {
            return Err(Error::IncompleteGrid(format!(
                "{model}/{question}/{metric} lacks {}",
                missing.join(", ")
            )));
        }
        let mu = series.iter().map(|s| s.1).sum::<f64>() / series.len() as f64;
        let delta_t = (at(1.0).unwrap() - at(0.0).unwrap()).abs();
        rows.push(SummaryRow {
            model,
            question,
            metric,
            mu,
            delta_t,
        });
    }
    Ok(rows)
}

/// Pearson correlation of two equally long samples; `None` if either has zero
/// variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson `r` between normalized metric vectors, with one observation per
/// `(model, question, temperature)` cell.
pub fn pearson_correlations(cells: &[MetricCell]) -> Result<CorrelationMatrix> {
    let groups = group_by(
        cells
            .iter()
            .map(|c| (c.model.clone(), c.question, c.temperature.to_bits())),
    );
    let mut columns: [Vec<f64>; 4] = Default::default();
    for ((model, question, t), idx) in &groups {
        let mut row = [None; 4];
        for &i in idx {
            row[cells[i].metric.index()] = Some(cells[i].normalized()?);
        }
        for m in MetricId::ALL {
            let v = row[m.index()].ok_or_else(|| {
                Error::IncompleteGrid(format!(
                    "{model}/{question}/T={}/{m} missing",
                    f64::from_bits(*t)
                ))
            })?;
            columns[m.index()].push(v);
        }
    }
    let n_obs = groups.len();
    if n_obs < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 observations for correlation, got {n_obs}"
        )));
    }
    let mut r = [[0.0; 4]; 4];
    for a in MetricId::ALL {
        let (i, xa) = (a.index(), &columns[a.index()]);
        if pearson(xa, xa).is_none() {
            return Err(Error::UndefinedCorrelation {
                a: a.to_string(),
                b: a.to_string(),
            });
        }
        r[i][i] = 1.0;
        for b in MetricId::ALL.into_iter().skip(i + 1) {
            let j = b.index();
            let v = pearson(xa, &columns[j]).ok_or_else(|| Error::UndefinedCorrelation {
                a: a.to_string(),
                b: b.to_string(),
            })?;
            r[i][j] = v;
            r[j][i] = v;
        }
    }
    Ok(CorrelationMatrix { r, n_obs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    Ge,
    Gt,
    Le,
    Lt,
}

impl Comparison {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparison::Ge => value >= threshold,
            Comparison::Gt => value > threshold,
            Comparison::Le => value <= threshold,
            Comparison::Lt => value < threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparison::Ge => ">=",
            Comparison::Gt => ">",
            Comparison::Le => "<=",
            Comparison::Lt => "<",
        }
    }
}

/// A threshold on one normalized metric, written `metric:op:value`
/// (e.g. `CS:>=:0.9` or `JS:le:0.05`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constraint {
    pub metric: MetricId,
    pub op: Comparison,
    pub threshold: f64,
}

impl Constraint {
    pub fn new(metric: MetricId, op: Comparison, threshold: f64) -> Self {
        Self {
            metric,
            op,
            threshold,
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.metric, self.op.symbol(), self.threshold)
    }
}

impl FromStr for Constraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let [metric, op, value] = parts.as_slice() else {
            return Err(Error::invalid(format!(
                "constraint {s:?} is not of the form metric:op:value"
            )));
        };
        let op = match op.trim().to_ascii_lowercase().as_str() {
            ">=" | "ge" => Comparison::Ge,
            ">" | "gt" => Comparison::Gt,
            "<=" | "le" => Comparison::Le,
            "<" | "lt" => Comparison::Lt,
            other => return Err(Error::invalid(format!("unknown comparison {other:?}"))),
        };
        let threshold: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad constraint threshold {value:?}")))?;
        if !threshold.is_finite() {
            return Err(Error::invalid("constraint threshold must be finite"));
        }
        Ok(Self {
            metric: metric.parse()?,
            op,
            threshold,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub model: String,
    pub question: Question,
    /// Largest grid temperature whose whole prefix satisfies every constraint;
    /// `None` when `T = 0` already violates one.
    pub max_safe_temperature: Option<f64>,
    pub constraints: Vec<Constraint>,
}

impl OperatingPoint {
    pub fn constraints_label(&self) -> String {
        self.constraints
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Safe operating ceiling per `(model, question)`: the largest temperature such
/// that every constraint holds at it and at every lower grid temperature.
pub fn operating_points(
    cells: &[MetricCell],
    constraints: &[Constraint],
) -> Result<Vec<OperatingPoint>> {
    if constraints.is_empty() {
        return Err(Error::invalid("at least one constraint is required"));
    }
    let metrics: BTreeSet<MetricId> = cells.iter().map(|c| c.metric).collect();
    if let Some(c) = constraints.iter().find(|c| !metrics.contains(&c.metric)) {
        return Err(Error::invalid(format!(
            "constraint on {} but no cells carry that metric",
            c.metric
        )));
    }
    let mut points = Vec::new();
    for ((model, question), idx) in group_by(cells.iter().map(|c| (c.model.clone(), c.question))) {
        let mut by_temp: Vec<(f64, [Option<f64>; 4])> = Vec::new();
        for &i in &idx {
            let c = &cells[i];
            let slot = match by_temp.iter().position(|(t, _)| *t == c.temperature) {
                Some(p) => p,
                None => {
                    by_temp.push((c.temperature, [None; 4]));
                    by_temp.len() - 1
                }
            };
            by_temp[slot].1[c.metric.index()] = Some(c.normalized()?);
        }
        by_temp.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut best = None;
        'temps: for (t, values) in &by_temp {
            for c in constraints {
                let v = values[c.metric.index()].ok_or_else(|| {
                    Error::IncompleteGrid(format!("{model}/{question}/T={t}/{} missing", c.metric))
                })?;
                if !c.op.holds(v, c.threshold) {
                    break 'temps;
                }
            }
            best = Some(*t);
        }
        points.push(OperatingPoint {
            model,
            question,
            max_safe_temperature: best,
            constraints: constraints.to_vec(),
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(model: &str, q: Question, t: f64, metric: MetricId, raw: f64) -> MetricCell {
        MetricCell {
            model: model.into(),
            question: q,
            temperature: t,
            metric,
            raw_mean: raw,
            raw_std: 0.0,
            normalized_mean: None,
            pair_count: 45,
        }
    }

    fn grid_temps() -> Vec<f64> {
        (0..=10).map(|i| i as f64 / 10.0).collect()
    }

    #[test]
    fn linear_ramp_normalizes_to_tenths() {
        let cells: Vec<MetricCell> = grid_temps()
            .into_iter()
            .enumerate()
            .map(|(i, t)| cell("m", Question::Q1, t, MetricId::Mae, 3.7 + 0.42 * i as f64))
            .collect();
        let norm = normalize_per_model_metric(&cells).unwrap();
        assert!(norm.warnings.is_empty());
        for (i, c) in norm.cells.iter().enumerate() {
            assert!((c.normalized_mean.unwrap() - i as f64 / 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_edge_cases() {
        let cells = vec![
            cell("m", Question::Q1, 0.0, MetricId::Cs, 5.0),
            cell("m", Question::Q2, 0.0, MetricId::Cs, 5.0),
            cell("m", Question::Q3, 0.0, MetricId::Cs, 5.0),
        ];
        let norm = normalize_per_model_metric(&cells).unwrap();
        assert_eq!(norm.warnings.len(), 1);
        assert!(norm.cells.iter().all(|c| c.normalized_mean == Some(0.0)));

        let cells = vec![
            cell("m", Question::Q1, 0.0, MetricId::Cs, 2.0),
            cell("m", Question::Q1, 1.0, MetricId::Cs, 4.0),
        ];
        let norm = normalize_per_model_metric(&cells).unwrap();
        let v: Vec<f64> = norm.cells.iter().map(|c| c.normalized_mean.unwrap()).collect();
        assert_eq!(v, vec![0.0, 1.0]);
    }

    #[test]
    fn normalization_scopes_are_per_model_and_metric() {
        let cells = vec![
            cell("a", Question::Q1, 0.0, MetricId::Js, 0.0),
            cell("a", Question::Q2, 1.0, MetricId::Js, 0.5),
            cell("b", Question::Q1, 0.0, MetricId::Js, 10.0),
            cell("b", Question::Q2, 1.0, MetricId::Js, 30.0),
            cell("a", Question::Q1, 0.0, MetricId::Kl, 1.0),
            cell("a", Question::Q2, 1.0, MetricId::Kl, 3.0),
        ];
        let n: Vec<f64> = normalize_per_model_metric(&cells)
            .unwrap()
            .cells
            .iter()
            .map(|c| c.normalized_mean.unwrap())
            .collect();
        assert_eq!(n, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    fn normalized_series(values: &[f64]) -> Vec<MetricCell> {
        grid_temps()
            .into_iter()
            .zip(values)
            .map(|(t, &v)| {
                let mut c = cell("m", Question::Q1, t, MetricId::Cs, v);
                c.normalized_mean = Some(v);
                c
            })
            .collect()
    }

    #[test]
    fn summary_of_ramp_and_constant() {
        let ramp: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let rows = summary_stats(&normalized_series(&ramp)).unwrap();
        assert!((rows[0].mu - 0.5).abs() < 1e-12);
        assert!((rows[0].delta_t - 1.0).abs() < 1e-12);

        let rows = summary_stats(&normalized_series(&[0.37; 11])).unwrap();
        assert!((rows[0].mu - 0.37).abs() < 1e-12);
        assert_eq!(rows[0].delta_t, 0.0);
    }

    #[test]
    fn summary_names_missing_endpoint() {
        let mut cells = normalized_series(&[0.5; 11]);
        cells.pop();
        match summary_stats(&cells) {
            Err(Error::IncompleteGrid(msg)) => assert!(msg.contains("T=1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn summary_requires_normalized_cells() {
        let cells = vec![cell("m", Question::Q1, 0.0, MetricId::Cs, 1.0)];
        assert!(matches!(summary_stats(&cells), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pearson_self_and_anti() {
        let x = [0.1, 0.5, 0.2, 0.9, 0.4];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&x, &[1.0; 5]), None);
    }

    fn four_metric_cells(values: &[[f64; 4]]) -> Vec<MetricCell> {
        let mut out = Vec::new();
        for (i, row) in values.iter().enumerate() {
            for m in MetricId::ALL {
                let mut c = cell("m", Question::Q1, i as f64 / 10.0, m, row[m.index()]);
                c.normalized_mean = Some(row[m.index()]);
                out.push(c);
            }
        }
        out
    }

    #[test]
    fn correlation_matrix_shape() {
        let cells = four_metric_cells(&[
            [1.0, 0.0, 0.0, 0.1],
            [0.8, 0.3, 0.2, 0.2],
            [0.5, 0.6, 0.7, 0.5],
            [0.1, 1.0, 0.9, 0.9],
        ]);
        let m = pearson_correlations(&cells).unwrap();
        assert_eq!(m.n_obs, 4);
        for a in 0..4 {
            assert_eq!(m.r[a][a], 1.0);
            for b in 0..4 {
                assert_eq!(m.r[a][b], m.r[b][a]);
                assert!((-1.0..=1.0).contains(&m.r[a][b]));
            }
        }
        assert!(m.get(MetricId::Cs, MetricId::Js) < -0.9);
    }

    #[test]
    fn correlation_errors() {
        let flat = four_metric_cells(&[[1.0, 0.0, 0.0, 0.1], [1.0, 0.3, 0.2, 0.2], [1.0, 0.6, 0.7, 0.5]]);
        assert!(matches!(
            pearson_correlations(&flat),
            Err(Error::UndefinedCorrelation { .. })
        ));
        let short = four_metric_cells(&[[1.0, 0.0, 0.0, 0.1], [0.5, 0.3, 0.2, 0.2]]);
        assert!(pearson_correlations(&short).is_err());
        let mut partial = four_metric_cells(&[[1.0, 0.0, 0.0, 0.1], [0.5, 0.3, 0.2, 0.2], [0.1, 0.4, 0.5, 0.6]]);
        partial.pop();
        assert!(matches!(pearson_correlations(&partial), Err(Error::IncompleteGrid(_))));
    }

    #[test]
    fn constraint_parsing() {
        let c: Constraint = "CS:>=:0.9".parse().unwrap();
        assert_eq!(c, Constraint::new(MetricId::Cs, Comparison::Ge, 0.9));
        let c: Constraint = "js:lt:0.05".parse().unwrap();
        assert_eq!(c, Constraint::new(MetricId::Js, Comparison::Lt, 0.05));
        assert_eq!(c.to_string(), "JS<0.05");
        assert!("XX:>=:1".parse::<Constraint>().is_err());
        assert!("CS:=>:1".parse::<Constraint>().is_err());
        assert!("CS:>=".parse::<Constraint>().is_err());
        assert!("CS:>=:abc".parse::<Constraint>().is_err());
    }

    #[test]
    fn operating_point_prefix_semantics() {
        // Dips below the threshold at 0.3 and recovers at 0.4.
        let values = [1.0, 0.98, 0.95, 0.85, 0.99, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0];
        let cells = normalized_series(&values);
        let at = |c: Constraint| {
            operating_points(&cells, &[c]).unwrap()[0].max_safe_temperature
        };
        assert_eq!(at(Constraint::new(MetricId::Cs, Comparison::Ge, 0.9)), Some(0.2));
        assert_eq!(at(Constraint::new(MetricId::Cs, Comparison::Ge, 0.0)), Some(1.0));
        assert_eq!(at(Constraint::new(MetricId::Cs, Comparison::Ge, 1.01)), None);
        assert!(operating_points(&cells, &[]).is_err());
        assert!(operating_points(&cells, &[Constraint::new(MetricId::Kl, Comparison::Le, 1.0)]).is_err());
    }

    #[test]
    fn grid_check_reports_missing() {
        let mut cells = four_metric_cells(&[[1.0, 0.0, 0.0, 0.1], [0.5, 0.3, 0.2, 0.2]]);
        check_grid(&cells).unwrap();
        cells.remove(5);
        match check_grid(&cells) {
            Err(Error::IncompleteGrid(msg)) => assert!(msg.contains("m/Q1/T=0.1/JS"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(check_grid(&[]).is_err());
    }
}
