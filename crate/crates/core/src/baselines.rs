//! Reference estimators and the NMSE metric.
//!
//! The baselines treat the received samples as unquantized, whatever the ADC.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::MeasurementModel;

/// `‖ĥ − h‖² / ‖h‖²`.
pub fn nmse(h_hat: &[Complex64], h_true: &[Complex64]) -> Result<f64> {
    Error::check_len("estimate", h_true.len(), h_hat.len())?;
    let power: f64 = h_true.iter().map(|c| c.norm_sqr()).sum();
    if !(power > 0.0) {
        return Err(Error::input("NMSE of an all-zero channel is undefined"));
    }
    let err: f64 = h_hat.iter().zip(h_true).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(err / power)
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn split(y: &[Complex64]) -> (DVector<f64>, DVector<f64>) {
    (
        DVector::from_iterator(y.len(), y.iter().map(|c| c.re)),
        DVector::from_iterator(y.len(), y.iter().map(|c| c.im)),
    )
}

fn join<'a>(re: &'a DVector<f64>, im: &'a DVector<f64>) -> impl Iterator<Item = Complex64> + 'a {
    re.iter().zip(im.iter()).map(|(a, b)| Complex64::new(*a, *b))
}

/// Least squares per subcarrier: QR when `W̄` has full column rank, the
/// minimum-norm solution otherwise. The flag reports the fallback.
pub fn ls_estimate_flagged(y: &[Complex64], model: &MeasurementModel) -> Result<(Vec<Complex64>, bool)> {
    Error::check_len("received signal", model.measurement_len(), y.len())?;
    let w = model.selection.matrix();
    let (rows, n) = w.shape();
    let qr_solve = (rows >= n).then(|| w.clone().qr()).filter(|qr| {
        let r = qr.r();
        let scale = r.diagonal().abs().max();
        r.diagonal().iter().all(|d| d.abs() > 1e-12 * scale.max(1.0))
    });
    let svd = match qr_solve {
        Some(_) => None,
        None => Some(w.clone().svd(true, true)),
    };
    let mut h = Vec::with_capacity(model.channel_len());
    for m in 0..model.subcarriers {
        let (re, im) = split(&y[m * rows..(m + 1) * rows]);
        let (hr, hi) = match (&qr_solve, &svd) {
            (Some(qr), _) => {
                let qt = qr.q().transpose();
                let r = qr.r();
                let solve = |b: &DVector<f64>| r.solve_upper_triangular(&(&qt * b)).ok_or(Error::Factorization { subcarrier: m });
                (solve(&re)?, solve(&im)?)
            }
            (None, Some(svd)) => {
                let solve = |b: &DVector<f64>| svd.solve(b, 1e-10).map_err(|e| Error::input(e.to_string()));
                (solve(&re)?, solve(&im)?)
            }
            _ => unreachable!(),
        };
        h.extend(join(&hr, &hi));
    }
    Ok((h, svd.is_some()))
}

pub fn ls_estimate(y: &[Complex64], model: &MeasurementModel) -> Result<Vec<Complex64>> {
    Ok(ls_estimate_flagged(y, model)?.0)
}

/// Default OMP sparsity: four atoms per path.
pub fn default_sparsity(paths: usize, antennas: usize) -> usize {
    (4 * paths).clamp(1, antennas.max(1))
}

/// Greedy OMP on one subcarrier; returns the estimate and the residual
/// norms after each iteration (first entry is `‖y‖`).
pub fn omp_column(w: &DMatrix<f64>, y: &[Complex64], k: usize, tol: f64) -> (Vec<Complex64>, Vec<f64>) {
    let (rows, n) = w.shape();
    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let (yr, yi) = split(y);
    let mut residual = (yr.clone(), yi.clone());
    let res_norm = |r: &(DVector<f64>, DVector<f64>)| (r.0.norm_squared() + r.1.norm_squared()).sqrt();
    let mut history = vec![res_norm(&residual)];
    let mut support: Vec<usize> = Vec::new();
    let mut coef = (DVector::zeros(0), DVector::zeros(0));
    while support.len() < k.min(n).min(rows) && *history.last().unwrap() > tol {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for j in (0..n).filter(|j| !support.contains(j)) {
            if norms[j] == 0.0 {
                continue;
            }
            let c = w.column(j);
            let corr = (c.dot(&residual.0).powi(2) + c.dot(&residual.1).powi(2)).sqrt() / norms[j];
            if corr > best.0 {
                best = (corr, j);
            }
        }
        // an atom orthogonal to the residual lies in the current span
        if best.1 == usize::MAX || best.0 <= 1e-12 * history[0] {
            break;
        }
        support.push(best.1);
        let sub = DMatrix::from_fn(rows, support.len(), |i, s| w[(i, support[s])]);
        let svd = sub.clone().svd(true, true);
        let Ok(cr) = svd.solve(&yr, 1e-12) else { break };
        let Ok(ci) = svd.solve(&yi, 1e-12) else { break };
        residual = (&yr - &sub * &cr, &yi - &sub * &ci);
        coef = (cr, ci);
        history.push(res_norm(&residual));
    }
    let mut h = vec![Complex64::new(0.0, 0.0); n];
    for (s, &j) in support.iter().enumerate() {
        h[j] = Complex64::new(coef.0[s], coef.1[s]);
    }
    (h, history)
}

/// Per-subcarrier OMP with at most `k` atoms, stopping once the residual
/// norm reaches `√(σ²·Q·N_RF)`.
pub fn omp_estimate(y: &[Complex64], model: &MeasurementModel, k: usize) -> Result<Vec<Complex64>> {
    Error::check_len("received signal", model.measurement_len(), y.len())?;
    if k > model.antennas() {
        return Err(Error::input(format!("sparsity {k} exceeds the antenna count")));
    }
    let w = model.selection.matrix();
    let rows = model.rows_per_subcarrier();
    let tol = (model.noise_var * rows as f64).sqrt();
    let mut h = Vec::with_capacity(model.channel_len());
    for m in 0..model.subcarriers {
        h.extend(omp_column(w, &y[m * rows..(m + 1) * rows], k, tol).0);
    }
    Ok(h)
}

/// Closed-form LMMSE under an i.i.d. `CN(0, prior_var)` prior:
/// `(I/P + W̄ᵀW̄/σ²)⁻¹ W̄ᵀ y_m/σ²` per subcarrier.
pub fn lmmse_estimate(y: &[Complex64], model: &MeasurementModel, prior_var: f64) -> Result<Vec<Complex64>> {
    Error::check_len("received signal", model.measurement_len(), y.len())?;
    if !(model.noise_var > 0.0) || !(prior_var > 0.0) {
        return Err(Error::input("LMMSE needs positive noise and prior variances"));
    }
    let w = model.selection.matrix();
    let rows = model.rows_per_subcarrier();
    let mut k = w.tr_mul(w) / model.noise_var;
    for j in 0..k.nrows() {
        k[(j, j)] += 1.0 / prior_var;
    }
    let chol = nalgebra::Cholesky::new(k).ok_or(Error::Factorization { subcarrier: 0 })?;
    let mut h = Vec::with_capacity(model.channel_len());
    for m in 0..model.subcarriers {
        let (re, im) = split(&y[m * rows..(m + 1) * rows]);
        let hr = chol.solve(&(w.tr_mul(&re) / model.noise_var));
        let hi = chol.solve(&(w.tr_mul(&im) / model.noise_var));
        h.extend(join(&hr, &hi));
    }
    Ok(h)
}

/// Per-estimator summary across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub estimator: String,
    pub nmse: Vec<f64>,
    pub runtime_s: f64,
}

impl EstimatorReport {
    pub fn mean_nmse(&self) -> f64 {
        self.nmse.iter().sum::<f64>() / self.nmse.len().max(1) as f64
    }

    pub fn mean_nmse_db(&self) -> f64 {
        to_db(self.mean_nmse())
    }
}
