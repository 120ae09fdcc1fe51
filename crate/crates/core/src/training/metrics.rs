use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::dataflow::Mode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sum over the three modes of each mode's mean squared error:
/// `Σ_j (1/B) Σ_i (p_ij - y_ij)²`.
pub fn multitask_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    let (sp, st) = (g.shape(pred).to_vec(), g.shape(target).to_vec());
    if sp != st || sp.len() != 2 || sp[1] != 3 {
        return Err(Error::dim("multitask_loss", format!("pred {sp:?}, target {st:?}")));
    }
    let diff = g.sub(pred, target)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum(sq);
    Ok(g.mul_scalar(total, T::one() / T::of(sp[0] as f64)))
}

/// Error metrics of one series, in the units of the inputs. WMAPE is a
/// fraction (0.0812 means 8.12 %).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub wmape: f64,
}

/// `y` is the ground truth, `p` the prediction. WMAPE is `Σ|y - p| / Σy`.
pub fn series_metrics(y: &[f64], p: &[f64]) -> Result<Metrics> {
    if y.len() != p.len() || y.is_empty() {
        return Err(Error::dim("metrics", format!("{} targets vs {} predictions", y.len(), p.len())));
    }
    let n = y.len() as f64;
    let (mut sq, mut abs, mut total) = (0.0, 0.0, 0.0);
    for (&a, &b) in y.iter().zip(p) {
        let e = a - b;
        sq += e * e;
        abs += e.abs();
        total += a;
    }
    if total == 0.0 {
        return Err(Error::Numeric("WMAPE undefined: targets sum to zero".into()));
    }
    Ok(Metrics {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        wmape: abs / total,
    })
}

/// WMAPE as a weighted sum of per-term percentage errors,
/// `Σ (y_i / Σy) · |y_i - p_i| / y_i`. Needs every `y_i > 0`.
pub fn wmape_termwise(y: &[f64], p: &[f64]) -> Result<f64> {
    if y.len() != p.len() || y.is_empty() {
        return Err(Error::dim("wmape", format!("{} targets vs {} predictions", y.len(), p.len())));
    }
    if y.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Numeric("term-wise WMAPE needs positive targets".into()));
    }
    let total: f64 = y.iter().sum();
    Ok(y.iter().zip(p).map(|(&a, &b)| (a / total) * ((a - b) / a).abs()).sum())
}

/// One row of a report: a mode or the pooled `ALL` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub mode: String,
    pub rmse: f64,
    pub mae: f64,
    pub wmape: f64,
}

/// Per-mode metrics plus the pooled row, ordered subway, taxi, bus, ALL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn mode(&self, mode: Mode) -> &MetricsRow {
        &self.rows[mode.index()]
    }

    pub fn all(&self) -> &MetricsRow {
        &self.rows[3]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Metrics per mode and pooled over all three, on counts (not normalized
/// values).
pub fn metrics(pred: &[[f64; 3]], actual: &[[f64; 3]]) -> Result<MetricsReport> {
    if pred.len() != actual.len() || pred.is_empty() {
        return Err(Error::dim(
            "metrics",
            format!("{} predictions vs {} targets", pred.len(), actual.len()),
        ));
    }
    let mut rows = Vec::with_capacity(4);
    for m in Mode::ALL {
        let y: Vec<f64> = actual.iter().map(|r| r[m.index()]).collect();
        let p: Vec<f64> = pred.iter().map(|r| r[m.index()]).collect();
        rows.push(row(m.label(), series_metrics(&y, &p)?));
    }
    let y: Vec<f64> = actual.iter().flatten().copied().collect();
    let p: Vec<f64> = pred.iter().flatten().copied().collect();
    rows.push(row("ALL", series_metrics(&y, &p)?));
    Ok(MetricsReport { rows })
}

fn row(mode: &str, m: Metrics) -> MetricsRow {
    MetricsRow {
        mode: mode.to_string(),
        rmse: m.rmse,
        mae: m.mae,
        wmape: m.wmape,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn hand_computed_case() {
        let m = series_metrics(&[10.0, 20.0, 30.0], &[12.0, 18.0, 33.0]).unwrap();
        assert!((m.mae - 7.0 / 3.0).abs() < 1e-12);
        assert!((m.wmape - 7.0 / 60.0).abs() < 1e-12);
        assert!((m.rmse - (17.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_targets_are_an_error() {
        assert!(matches!(series_metrics(&[0.0, 0.0], &[1.0, 1.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn loss_of_unit_errors() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::from_f64(&[1, 3], &[1.0, 2.0, 3.0]).unwrap());
        let t = g.constant(Tensor::zeros(&[1, 3]));
        let l = multitask_loss(&mut g, p, t).unwrap();
        assert_eq!(g.value(l)[0], 14.0);
        let bad = g.constant(Tensor::zeros(&[1, 2]));
        assert!(multitask_loss(&mut g, p, bad).is_err());
    }
}
