//! Certification-driven metrics: certified accuracy at radius grids, the
//! average certified radius (ACR), radius-accuracy curves, and a
//! hard-vs-soft comparison harness. Everything here consumes per-example
//! [`EvalRow`]s, so the metrics are decoupled from how certificates were
//! produced; CSV import/export lives here too since the row format is the
//! tool's main interchange surface.

use crate::data::Dataset;
use crate::net::SmallNet;
use crate::smoothing::{certify, BoundKind, CertificationResult, CertifyConfig};
use crate::statmath::RngStream;
use crate::{Error, Result};

/// Stream tag for certification noise ("cert").
const CERTIFY_STREAM: u64 = 0x6365_7274;

/// One certified example. An abstention carries radius 0 and counts as
/// incorrect; a confident prediction of the wrong class keeps its radius
/// but `correct` stays false, so it still contributes nothing to ACR or
/// certified accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub index: usize,
    pub label: usize,
    /// `None` encodes abstention.
    pub prediction: Option<usize>,
    pub radius: f64,
    pub correct: bool,
}

impl EvalRow {
    /// Validates the abstain/radius tie and derives `correct`.
    pub fn new(index: usize, label: usize, prediction: Option<usize>, radius: f64) -> Result<Self> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(Error::invalid("radius", format!("{radius} not in [0, inf)")));
        }
        if prediction.is_none() && radius != 0.0 {
            return Err(Error::invalid(
                "radius",
                format!("abstention must carry radius 0, got {radius}"),
            ));
        }
        Ok(EvalRow {
            index,
            label,
            prediction,
            radius,
            correct: prediction == Some(label),
        })
    }

    pub fn from_certification(index: usize, label: usize, res: &CertificationResult) -> Self {
        let prediction = res.predicted_class();
        EvalRow {
            index,
            label,
            prediction,
            radius: if prediction.is_some() { res.radius } else { 0.0 },
            correct: prediction == Some(label),
        }
    }
}

/// Fraction of rows certified correct at radius at least `epsilon`.
pub fn certified_accuracy(rows: &[EvalRow], epsilon: f64) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::invalid("rows", "no evaluation rows"));
    }
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::invalid("epsilon", format!("{epsilon} not in [0, inf)")));
    }
    let hits = rows
        .iter()
        .filter(|r| r.correct && r.radius >= epsilon)
        .count();
    Ok(hits as f64 / rows.len() as f64)
}

/// Mean certified radius with incorrect/abstained examples contributing 0.
pub fn average_certified_radius(rows: &[EvalRow]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::invalid("rows", "no evaluation rows"));
    }
    let total: f64 = rows.iter().filter(|r| r.correct).map(|r| r.radius).sum();
    Ok(total / rows.len() as f64)
}

/// Certified accuracy at each grid point. The grid must be non-decreasing
/// and non-negative; the output accuracy column is then non-increasing.
pub fn radius_accuracy_curve(rows: &[EvalRow], grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    for (i, &g) in grid.iter().enumerate() {
        if !g.is_finite() || g < 0.0 {
            return Err(Error::invalid("grid", format!("point {i} is {g}, not in [0, inf)")));
        }
        if i > 0 && g < grid[i - 1] {
            return Err(Error::invalid(
                "grid",
                format!("not sorted: point {i} ({g}) below point {} ({})", i - 1, grid[i - 1]),
            ));
        }
    }
    grid.iter()
        .map(|&g| Ok((g, certified_accuracy(rows, g)?)))
        .collect()
}

/// The table grid used throughout: 0.00 to 2.25 in steps of 0.25.
pub fn default_grid() -> Vec<f64> {
    (0..10).map(|i| i as f64 * 0.25).collect()
}

/// Rows plus the derived curve and ACR, bundled for serialization.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub curve: Vec<(f64, f64)>,
    pub acr: f64,
}

pub fn build_report(rows: Vec<EvalRow>, grid: &[f64]) -> Result<EvalReport> {
    let curve = radius_accuracy_curve(&rows, grid)?;
    let acr = average_certified_radius(&rows)?;
    Ok(EvalReport { rows, curve, acr })
}

/// Certifies every example of `dataset` under `cfg`, one sub-stream per
/// example index so results do not depend on evaluation order (or on which
/// other examples were in the run).
pub fn certify_dataset(
    net: &SmallNet,
    dataset: &Dataset,
    cfg: &CertifyConfig,
    seed: u64,
) -> Result<Vec<EvalRow>> {
    let root = RngStream::new(seed, CERTIFY_STREAM);
    let mut rows = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let res = certify(net, dataset.feature_row(i), cfg, &root.substream(i as u64))?;
        rows.push(EvalRow::from_certification(i, dataset.label(i), &res));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Hard-vs-soft comparison
// ---------------------------------------------------------------------------

/// One certification method's rows and summary numbers.
#[derive(Debug, Clone)]
pub struct MethodResult {
    pub bound_kind: BoundKind,
    pub rows: Vec<EvalRow>,
    pub acr: f64,
    /// Median radius over the examples all three methods certified
    /// (correctly or not); `None` when that set is empty.
    pub median_mutually_certified: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub hard: MethodResult,
    pub hoeffding: MethodResult,
    pub bernstein: MethodResult,
    pub num_mutually_certified: usize,
}

impl ComparisonReport {
    pub fn methods(&self) -> [&MethodResult; 3] {
        [&self.hard, &self.hoeffding, &self.bernstein]
    }
}

/// Certifies the whole dataset under all three bounds with shared
/// `sigma`/`n0`/`n`/`alpha`/`beta` *and* shared noise: every method sees
/// the same per-example sub-stream, so radii differ only through the bound
/// itself and the vote-vs-likelihood aggregation.
pub fn compare_soft_hard(
    net: &SmallNet,
    dataset: &Dataset,
    cfg: &CertifyConfig,
    seed: u64,
) -> Result<ComparisonReport> {
    let kinds = [
        BoundKind::ClopperPearson,
        BoundKind::Hoeffding,
        BoundKind::Bernstein,
    ];
    let mut per_kind: Vec<Vec<EvalRow>> = Vec::with_capacity(3);
    for kind in kinds {
        let method_cfg = CertifyConfig::new(cfg.sigma, cfg.n0, cfg.n, cfg.alpha, kind, cfg.beta)?;
        per_kind.push(certify_dataset(net, dataset, &method_cfg, seed)?);
    }

    let mutual: Vec<usize> = (0..dataset.len())
        .filter(|&i| per_kind.iter().all(|rows| rows[i].prediction.is_some()))
        .collect();

    let mut results = Vec::with_capacity(3);
    for (kind, rows) in kinds.into_iter().zip(per_kind) {
        let acr = average_certified_radius(&rows)?;
        let radii: Vec<f64> = mutual.iter().map(|&i| rows[i].radius).collect();
        results.push(MethodResult {
            bound_kind: kind,
            rows,
            acr,
            median_mutually_certified: median(&radii),
        });
    }
    let mut it = results.into_iter();
    Ok(ComparisonReport {
        hard: it.next().unwrap(),
        hoeffding: it.next().unwrap(),
        bernstein: it.next().unwrap(),
        num_mutually_certified: mutual.len(),
    })
}

/// Midpoint-averaged median; `None` on an empty slice.
fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

pub const ROWS_CSV_HEADER: &str = "idx,label,prediction,radius,correct";
pub const CURVE_CSV_HEADER: &str = "radius,accuracy";
pub const COMPARISON_CSV_HEADER: &str = "idx,label,hard_radius,hoeffding_radius,bernstein_radius";

/// Serializes rows with `-1` for abstention and radii at 6 decimal places,
/// LF line endings throughout.
pub fn rows_to_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from(ROWS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let pred = r.prediction.map_or(-1i64, |p| p as i64);
        out.push_str(&format!(
            "{},{},{},{:.6},{}\n",
            r.index, r.label, pred, r.radius, r.correct
        ));
    }
    out
}

/// Parses the [`rows_to_csv`] format back, naming the offending line on any
/// failure (1-based, counting the header).
pub fn rows_from_csv(text: &str) -> Result<Vec<EvalRow>> {
    let err = |line: usize, what: String| Error::format("rows csv", format!("line {line}: {what}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == ROWS_CSV_HEADER => {}
        Some((_, h)) => return Err(err(1, format!("bad header '{h}'"))),
        None => return Err(err(1, "empty input".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(err(lineno, format!("expected 5 fields, got {}", fields.len())));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| err(lineno, format!("bad idx '{}'", fields[0])))?;
        let label: usize = fields[1]
            .parse()
            .map_err(|_| err(lineno, format!("bad label '{}'", fields[1])))?;
        let pred_raw: i64 = fields[2]
            .parse()
            .map_err(|_| err(lineno, format!("bad prediction '{}'", fields[2])))?;
        let prediction = match pred_raw {
            -1 => None,
            p if p >= 0 => Some(p as usize),
            p => return Err(err(lineno, format!("bad prediction '{p}'"))),
        };
        let radius: f64 = fields[3]
            .parse()
            .map_err(|_| err(lineno, format!("bad radius '{}'", fields[3])))?;
        let correct: bool = fields[4]
            .parse()
            .map_err(|_| err(lineno, format!("bad correct flag '{}'", fields[4])))?;
        let row = EvalRow::new(index, label, prediction, radius)
            .map_err(|e| err(lineno, e.to_string()))?;
        if row.correct != correct {
            return Err(err(
                lineno,
                format!("correct flag {correct} disagrees with prediction/label"),
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn curve_to_csv(curve: &[(f64, f64)]) -> String {
    let mut out = String::from(CURVE_CSV_HEADER);
    out.push('\n');
    for (radius, accuracy) in curve {
        out.push_str(&format!("{radius:.6},{accuracy:.6}\n"));
    }
    out
}

/// Side-by-side radii of the three methods, abstentions showing as 0.
pub fn comparison_to_csv(report: &ComparisonReport) -> String {
    let mut out = String::from(COMPARISON_CSV_HEADER);
    out.push('\n');
    for (i, hard) in report.hard.rows.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            hard.index,
            hard.label,
            hard.radius,
            report.hoeffding.rows[i].radius,
            report.bernstein.rows[i].radius
        ));
    }
    out
}
