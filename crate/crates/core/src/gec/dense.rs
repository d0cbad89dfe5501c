//! Literal dense implementation of one layer, for small reference checks.
//!
//! Builds `A = I_M ⊗ W̄` as a complex `MQN_RF × MN` matrix and inverts the
//! full `MN × MN` system. Only the message rules (cap, floor, damping) are
//! shared with the fast path.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::RngCore;

use super::{extrinsic_with, GecConfig, GecState};
use crate::denoiser::{module_b_step, Denoiser};
use crate::error::{Error, Result};
use crate::measurement::MeasurementModel;
use crate::posterior::posterior_z_quantized;

type CMat = DMatrix<Complex64>;
type CVec = DVector<Complex64>;

fn ext(post: &CVec, post_var: &[f64], prior: &[Complex64], prior_var: &[f64], cfg: &GecConfig) -> (Vec<Complex64>, Vec<f64>) {
    (0..post.len())
        .map(|k| {
            let e = extrinsic_with(post[k], post_var[k], prior[k], prior_var[k], cfg.extrinsic_cap, cfg.variance_floor);
            (e.mean, e.var)
        })
        .unzip()
}

fn diag_inv(v: &[f64]) -> CMat {
    CMat::from_diagonal(&CVec::from_iterator(v.len(), v.iter().map(|x| Complex64::new(1.0 / x, 0.0))))
}

fn avg_diag(q: &CMat) -> f64 {
    q.diagonal().iter().map(|c| c.re).sum::<f64>() / q.nrows() as f64
}

fn scaled(r: &[Complex64], v: &[f64]) -> CVec {
    CVec::from_iterator(r.len(), r.iter().zip(v).map(|(a, b)| a / b))
}

/// `(Q2h, ĥ2)` with a full inverse.
fn module_c(a: &CMat, r2h: &[Complex64], v2h: &[f64], r2z: &[Complex64], v2z: &[f64]) -> Result<(CMat, CVec)> {
    let ah = a.adjoint();
    let k = diag_inv(v2h) + &ah * diag_inv(v2z) * a;
    let q = k.try_inverse().ok_or(Error::Factorization { subcarrier: 0 })?;
    let h = &q * (scaled(r2h, v2h) + &ah * scaled(r2z, v2z));
    Ok((q, h))
}

/// Advances `state` by one layer; returns the new state and `ĥ2`.
pub fn dense_layer(
    y: &[Complex64],
    model: &MeasurementModel,
    cfg: &GecConfig,
    state: &GecState,
    denoiser: &dyn Denoiser,
    probe_rng: &mut dyn RngCore,
) -> Result<(GecState, Vec<Complex64>)> {
    let a = model.dense_operator();
    let mut st = state.clone();

    // Module A
    let (z1, vz1) = posterior_z_quantized(&st.r1z, &st.v1z, y, model.noise_var, &model.quantizer)?;
    (st.r2z, st.v2z) = ext(&CVec::from_vec(z1), &vz1, &st.r1z, &st.v1z, cfg);

    // Module C
    let (q, h2) = module_c(&a, &st.r2h, &st.v2h, &st.r2z, &st.v2z)?;
    let dq = vec![avg_diag(&q); h2.len()];
    (st.r1h, st.v1h) = ext(&h2, &dq, &st.r2h, &st.v2h, cfg);

    // Module B
    let b = module_b_step(denoiser, &st.r1h, &st.v1h, model.antennas(), probe_rng, cfg.divergence_norm)?;
    (st.r2h, st.v2h) = ext(&CVec::from_vec(b.h_hat), &b.v_post, &st.r1h, &st.v1h, cfg);

    // Module C, z side
    let (q, h2) = module_c(&a, &st.r2h, &st.v2h, &st.r2z, &st.v2z)?;
    let qz = &a * &q * a.adjoint();
    let z2 = &a * &h2;
    let dqz = avg_diag(&qz);

    let beta = cfg.damping.beta(st.layer);
    for k in 0..z2.len() {
        let precision = 1.0 / dqz - 1.0 / st.v2z[k];
        let (raw_var, ok) = if precision == f64::INFINITY {
            (0.0, false)
        } else if precision > 0.0 && 1.0 / precision <= cfg.extrinsic_cap {
            (1.0 / precision, true)
        } else {
            (cfg.extrinsic_cap, false)
        };
        let v = beta * raw_var + (1.0 - beta) * st.v1z[k];
        let mean_term = if ok { v * (z2[k] / dqz - st.r2z[k] / st.v2z[k]) } else { z2[k] };
        st.r1z[k] = beta * mean_term + (1.0 - beta) * st.r1z[k];
        st.v1z[k] = v.max(cfg.variance_floor);
    }
    st.layer += 1;
    Ok((st, h2.iter().copied().collect()))
}
