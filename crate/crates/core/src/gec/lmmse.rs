//! Block-diagonal LMMSE of Module C.
//!
//! With `A = I_M ⊗ W̄` and diagonal priors, the `MN × MN` inverse splits into
//! `M` independent `N × N` solves. `W̄` is real, so one real factorization
//! serves both the real and imaginary parts of each right-hand side.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::measurement::MeasurementModel;

/// Module C output. `q_h` and `q_z` are the averages of the diagonals of
/// `Q2h` and `A Q2h Aᴴ` over the whole vector.
#[derive(Debug, Clone)]
pub struct LmmseOutput {
    pub h_hat: Vec<Complex64>,
    pub q_h: f64,
    pub z_hat: Option<Vec<Complex64>>,
    pub q_z: Option<f64>,
}

struct Block {
    h: Vec<Complex64>,
    trace: f64,
    z: Option<(Vec<Complex64>, f64)>,
}

fn check(model: &MeasurementModel, r2h: &[Complex64], v2h: &[f64], r2z: &[Complex64], v2z: &[f64]) -> Result<()> {
    Error::check_len("r2h", model.channel_len(), r2h.len())?;
    Error::check_len("v2h", model.channel_len(), v2h.len())?;
    Error::check_len("r2z", model.measurement_len(), r2z.len())?;
    Error::check_len("v2z", model.measurement_len(), v2z.len())?;
    if v2h.iter().chain(v2z).any(|&v| !(v > 0.0)) {
        return Err(Error::input("LMMSE variances must be positive"));
    }
    Ok(())
}

fn solve_block(
    model: &MeasurementModel,
    m: usize,
    r2h: &[Complex64],
    v2h: &[f64],
    r2z: &[Complex64],
    v2z: &[f64],
    want_z: bool,
) -> Result<Block> {
    let w = model.selection.matrix();
    let (rows, n) = w.shape();
    let rh = &r2h[m * n..(m + 1) * n];
    let vh = &v2h[m * n..(m + 1) * n];
    let rz = &r2z[m * rows..(m + 1) * rows];
    let vz = &v2z[m * rows..(m + 1) * rows];

    let mut scaled = w.clone();
    for i in 0..rows {
        scaled.row_mut(i).scale_mut(1.0 / vz[i]);
    }
    let mut k = w.tr_mul(&scaled);
    for j in 0..n {
        k[(j, j)] += 1.0 / vh[j];
    }
    let q = Cholesky::new(k)
        .ok_or(Error::Factorization { subcarrier: m })?
        .inverse();

    let mut b_re = DVector::from_fn(n, |j, _| rh[j].re / vh[j]);
    let mut b_im = DVector::from_fn(n, |j, _| rh[j].im / vh[j]);
    let z_re = DVector::from_fn(rows, |i, _| rz[i].re / vz[i]);
    let z_im = DVector::from_fn(rows, |i, _| rz[i].im / vz[i]);
    b_re += w.tr_mul(&z_re);
    b_im += w.tr_mul(&z_im);
    let h_re = &q * b_re;
    let h_im = &q * b_im;
    let h: Vec<Complex64> = (0..n).map(|j| Complex64::new(h_re[j], h_im[j])).collect();
    let trace = q.trace();

    let z = want_z.then(|| {
        let zr = w * &h_re;
        let zi = w * &h_im;
        let wq: DMatrix<f64> = w * &q;
        let diag_sum: f64 = (0..rows).map(|i| wq.row(i).dot(&w.row(i))).sum();
        ((0..rows).map(|i| Complex64::new(zr[i], zi[i])).collect(), diag_sum)
    });
    Ok(Block { h, trace, z })
}

fn solve(
    model: &MeasurementModel,
    r2h: &[Complex64],
    v2h: &[f64],
    r2z: &[Complex64],
    v2z: &[f64],
    want_z: bool,
) -> Result<LmmseOutput> {
    check(model, r2h, v2h, r2z, v2z)?;
    let mut h_hat = Vec::with_capacity(model.channel_len());
    let mut z_hat = Vec::with_capacity(if want_z { model.measurement_len() } else { 0 });
    let (mut trace, mut z_trace) = (0.0, 0.0);
    for m in 0..model.subcarriers {
        let block = solve_block(model, m, r2h, v2h, r2z, v2z, want_z)?;
        h_hat.extend(block.h);
        trace += block.trace;
        if let Some((z, t)) = block.z {
            z_hat.extend(z);
            z_trace += t;
        }
    }
    let q_h = trace / model.channel_len() as f64;
    Ok(if want_z {
        LmmseOutput {
            h_hat,
            q_h,
            z_hat: Some(z_hat),
            q_z: Some(z_trace / model.measurement_len() as f64),
        }
    } else {
        LmmseOutput {
            h_hat,
            q_h,
            z_hat: None,
            q_z: None,
        }
    })
}

/// `ĥ2 = Q2h (r2h ⊘ v2h + Aᴴ r2z ⊘ v2z)` and `d(Q2h)`.
pub fn lmmse_h(model: &MeasurementModel, r2h: &[Complex64], v2h: &[f64], r2z: &[Complex64], v2z: &[f64]) -> Result<(Vec<Complex64>, f64)> {
    let out = solve(model, r2h, v2h, r2z, v2z, false)?;
    Ok((out.h_hat, out.q_h))
}

/// As [`lmmse_h`], plus `ẑ2 = A ĥ2` and `d(A Q2h Aᴴ)`.
pub fn lmmse_z(model: &MeasurementModel, r2h: &[Complex64], v2h: &[f64], r2z: &[Complex64], v2z: &[f64]) -> Result<LmmseOutput> {
    solve(model, r2h, v2h, r2z, v2z, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{QuantizerSpec, SelectionNetwork};
    use crate::rng::{substream, Stream};
    use crate::SystemConfig;
    use rand::Rng;

    fn identity_model(n: usize, m: usize) -> MeasurementModel {
        MeasurementModel {
            selection: SelectionNetwork::from_matrix(DMatrix::identity(n, n)),
            subcarriers: m,
            noise_var: 0.1,
            quantizer: QuantizerSpec::infinite(),
        }
    }

    fn cvec<R: Rng>(len: usize, rng: &mut R) -> Vec<Complex64> {
        (0..len)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn identity_selection_averages_messages() {
        let model = identity_model(4, 3);
        let mut rng = substream(1, Stream::Oracle, 0);
        let rh = cvec(12, &mut rng);
        let rz = cvec(12, &mut rng);
        let ones = vec![1.0; 12];
        let out = lmmse_z(&model, &rh, &ones, &rz, &ones).unwrap();
        assert!((out.q_h - 0.5).abs() < 1e-14);
        assert!((out.q_z.unwrap() - 0.5).abs() < 1e-14);
        for k in 0..12 {
            assert!((out.h_hat[k] - (rh[k] + rz[k]) / 2.0).norm() < 1e-14);
            assert!((out.z_hat.as_ref().unwrap()[k] - out.h_hat[k]).norm() < 1e-14);
        }
    }

    #[test]
    fn uninformative_z_returns_h_prior() {
        let cfg = SystemConfig {
            antennas: 4,
            rf_chains: 2,
            pilot_instants: 3,
            subcarriers: 3,
            ..SystemConfig::default()
        };
        let model = MeasurementModel::sample(&cfg, &mut substream(2, Stream::Selection, 0)).unwrap();
        let mut rng = substream(2, Stream::Oracle, 0);
        let rh = cvec(12, &mut rng);
        let rz = cvec(18, &mut rng);
        let vh: Vec<f64> = (0..12).map(|_| rng.random_range(0.5..2.0)).collect();
        let (h, q) = lmmse_h(&model, &rh, &vh, &rz, &[1e12; 18]).unwrap();
        let avg = vh.iter().sum::<f64>() / 12.0;
        assert!((q - avg).abs() < 1e-9);
        for k in 0..12 {
            assert!((h[k] - rh[k]).norm() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let model = identity_model(2, 2);
        let z = vec![Complex64::new(0.0, 0.0); 4];
        assert!(lmmse_h(&model, &z, &[1.0; 4], &z, &[1.0; 3]).is_err());
        assert!(lmmse_h(&model, &z, &[1.0, 0.0, 1.0, 1.0], &z, &[1.0; 4]).is_err());
    }
}
