//! Which growth law fits measured runtimes better: `log t` linear in `n`
//! (exponential) or linear in `log(n·p(n))` (quasilinear).

use serde::Serialize;

use crate::combinatorics::partition_count;

use super::{BenchError, BenchRecord, CellStatus, Method};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingModel {
    Exponential,
    Quasilinear,
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl LinearFit {
    pub fn new(xs: &[f64], ys: &[f64]) -> Self {
        let len = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / len;
        let my = ys.iter().sum::<f64>() / len;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(ys) {
            sxx += (x - mx) * (x - mx);
            sxy += (x - mx) * (y - my);
            syy += (y - my) * (y - my);
        }
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        let intercept = my - slope * mx;
        let ss_res: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else if ss_res == 0.0 { 1.0 } else { 0.0 };
        Self {
            slope,
            intercept,
            r_squared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub points: usize,
    pub distinct_n: usize,
    pub exponential: LinearFit,
    pub quasilinear: LinearFit,
    pub classification: ScalingModel,
}

impl ScalingFit {
    /// The fit of the winning model.
    pub fn best(&self) -> &LinearFit {
        match self.classification {
            ScalingModel::Exponential => &self.exponential,
            ScalingModel::Quasilinear => &self.quasilinear,
        }
    }
}

/// Classifies the `ok` total times of `method`. Mixing network shapes in
/// `records` blurs the fit, so callers pass one shape at a time.
pub fn fit_scaling(records: &[BenchRecord], method: Method) -> Result<ScalingFit, BenchError> {
    let points: Vec<(usize, f64)> = records
        .iter()
        .filter(|r| r.method == method && r.status == CellStatus::Ok)
        .filter_map(|r| r.mean_total_s.map(|t| (r.n, t)))
        .collect();
    fit_points(&points)
}

/// [`fit_scaling`] over raw `(n, time)` pairs.
pub fn fit_points(points: &[(usize, f64)]) -> Result<ScalingFit, BenchError> {
    let mut ns: Vec<usize> = points.iter().map(|p| p.0).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 4 {
        return Err(BenchError::InvalidArgument(format!(
            "scaling fit needs at least 4 distinct derivative orders, got {}",
            ns.len()
        )));
    }
    if let Some(&(n, t)) = points.iter().find(|(n, t)| *n == 0 || !(*t > 0.0 && t.is_finite())) {
        return Err(BenchError::InvalidArgument(format!(
            "point (n = {n}, t = {t}) needs n ≥ 1 and a positive finite time"
        )));
    }
    let mut xe = Vec::with_capacity(points.len());
    let mut xq = Vec::with_capacity(points.len());
    let mut y = Vec::with_capacity(points.len());
    for &(n, t) in points {
        let p = partition_count(n).map_err(|e| BenchError::InvalidArgument(e.to_string()))?;
        xe.push(n as f64);
        xq.push((n as f64 * p as f64).ln());
        y.push(t.ln());
    }
    let exponential = LinearFit::new(&xe, &y);
    let quasilinear = LinearFit::new(&xq, &y);
    let classification = if quasilinear.r_squared >= exponential.r_squared {
        ScalingModel::Quasilinear
    } else {
        ScalingModel::Exponential
    };
    Ok(ScalingFit {
        points: points.len(),
        distinct_n: ns.len(),
        exponential,
        quasilinear,
        classification,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn powers_of_two_are_exponential() {
        let pts: Vec<_> = (1..=9).map(|n| (n, 2f64.powi(n as i32))).collect();
        let fit = fit_points(&pts).unwrap();
        assert_eq!(fit.classification, ScalingModel::Exponential);
        assert!(fit.exponential.r_squared >= 0.999);
        assert!((fit.exponential.slope - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn n_times_partitions_is_quasilinear() {
        let pts: Vec<_> = (1..=9)
            .map(|n| (n, 1e-3 * n as f64 * partition_count(n).unwrap() as f64))
            .collect();
        let fit = fit_points(&pts).unwrap();
        assert_eq!(fit.classification, ScalingModel::Quasilinear);
        assert!((fit.quasilinear.r_squared - 1.0).abs() < 1e-12);
        assert!((fit.quasilinear.slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_orders() {
        let pts = [(1, 1.0), (2, 2.0), (3, 3.0), (3, 3.1)];
        assert!(matches!(fit_points(&pts), Err(BenchError::InvalidArgument(_))));
        assert!(fit_points(&[(1, 1.0), (2, 0.0), (3, 1.0), (4, 1.0)]).is_err());
    }
}
