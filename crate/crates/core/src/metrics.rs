//! Error metrics over fields and frame sequences.

use serde::{Deserialize, Serialize};

use crate::error::{PimrlError, Result};
use crate::tensor::Field;

pub const PCC_THRESHOLD: f64 = 0.8;

fn check(op: &'static str, a: &Field, b: &Field) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(PimrlError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn rmse(pred: &Field, truth: &Field) -> Result<f64> {
    check("rmse", pred, truth)?;
    let s: f64 = pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((s / pred.len() as f64).sqrt())
}

pub fn mae(pred: &Field, truth: &Field) -> Result<f64> {
    check("mae", pred, truth)?;
    let s: f64 = pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / pred.len() as f64)
}

/// Pearson correlation over all fields flattened together; `None` when
/// either side has zero variance or a non-finite value.
pub fn pcc(a: &Field, b: &Field) -> Result<Option<f64>> {
    check("pcc", a, b)?;
    let n = a.len() as f64;
    let ma = a.data().iter().sum::<f64>() / n;
    let mb = b.data().iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.data().iter().zip(b.data()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 || !(sab / (saa.sqrt() * sbb.sqrt())).is_finite() {
        return Ok(None);
    }
    Ok(Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)))
}

fn check_frames(pred: &[Field], truth: &[Field]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(PimrlError::InvalidArgument(format!(
            "{} predicted frames vs {} reference frames",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

fn passes(p: Option<f64>, threshold: f64) -> bool {
    p.is_some_and(|v| v > threshold)
}

/// `dt_macro` times the number of frames whose correlation exceeds `threshold`.
pub fn hct(pred: &[Field], truth: &[Field], dt_macro: f64, threshold: f64) -> Result<f64> {
    check_frames(pred, truth)?;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if passes(pcc(p, t)?, threshold) {
            n += 1;
        }
    }
    Ok(n as f64 * dt_macro)
}

/// Time until the first frame at or below `threshold`.
pub fn hct_first_failure(pred: &[Field], truth: &[Field], dt_macro: f64, threshold: f64) -> Result<f64> {
    check_frames(pred, truth)?;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if !passes(pcc(p, t)?, threshold) {
            break;
        }
        n += 1;
    }
    Ok(n as f64 * dt_macro)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub times: Vec<f64>,
    pub rmse: Vec<f64>,
    pub mae: Vec<f64>,
    /// `None` where a frame has zero variance.
    pub pcc: Vec<Option<f64>>,
    pub mean_rmse: f64,
    pub mean_mae: f64,
    pub hct: f64,
    pub hct_first_failure: f64,
    pub pcc_threshold: f64,
    pub dt_macro: f64,
    pub horizon: f64,
}

impl MetricsReport {
    /// Per-frame metrics for aligned sequences sampled at `times`.
    pub fn compute(pred: &[Field], truth: &[Field], times: &[f64], dt_macro: f64) -> Result<Self> {
        check_frames(pred, truth)?;
        if times.len() != pred.len() || pred.is_empty() {
            return Err(PimrlError::InvalidArgument(format!(
                "{} times for {} frames",
                times.len(),
                pred.len()
            )));
        }
        let mut r = Vec::with_capacity(pred.len());
        let mut m = Vec::with_capacity(pred.len());
        let mut c = Vec::with_capacity(pred.len());
        for (p, t) in pred.iter().zip(truth) {
            r.push(rmse(p, t)?);
            m.push(mae(p, t)?);
            c.push(pcc(p, t)?);
        }
        let n = pred.len() as f64;
        let count = |first: bool| {
            let mut k = 0usize;
            for v in &c {
                if passes(*v, PCC_THRESHOLD) {
                    k += 1;
                } else if first {
                    break;
                }
            }
            k as f64 * dt_macro
        };
        Ok(Self {
            times: times.to_vec(),
            mean_rmse: r.iter().sum::<f64>() / n,
            mean_mae: m.iter().sum::<f64>() / n,
            rmse: r,
            mae: m,
            hct: count(false),
            hct_first_failure: count(true),
            pcc: c,
            pcc_threshold: PCC_THRESHOLD,
            dt_macro,
            horizon: n * dt_macro,
        })
    }

    /// Frame-weighted mean over several reports with equal frame counts.
    pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateMetrics> {
        if reports.is_empty() {
            return Err(PimrlError::InvalidArgument("no reports to aggregate".into()));
        }
        let n = reports.len() as f64;
        Ok(AggregateMetrics {
            mean_rmse: reports.iter().map(|r| r.mean_rmse).sum::<f64>() / n,
            mean_mae: reports.iter().map(|r| r.mean_mae).sum::<f64>() / n,
            mean_hct: reports.iter().map(|r| r.hct).sum::<f64>() / n,
            n_trajectories: reports.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub mean_rmse: f64,
    pub mean_mae: f64,
    pub mean_hct: f64,
    pub n_trajectories: usize,
}
