//! Independent reference checks, runnable as one suite.

use num_complex::Complex64;
use rand::Rng;

use crate::config::{Resolution, SystemConfig};
use crate::denoiser::{
    mc_divergence, ChannelImage, Denoiser, IdentityDenoiser, MatchedGaussianDenoiser, ScaleDenoiser, SoftThresholdDenoiser,
};
use crate::error::{Error, Result};
use crate::gec::dense::dense_layer;
use crate::gec::{GecConfig, Ldgec};
use crate::measurement::QuantizerSpec;
use crate::posterior::{
    oracle_posterior_numeric, posterior_z_quantized_scalar, posterior_z_unquantized_scalar, quantized_real_part,
};
use crate::rng::{std_normal, substream, SimRng, Stream};
use crate::training::{gradcheck_fixture, mse_loss, sure_loss, LossKind};

/// Outcome of one oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub name: &'static str,
    pub passed: bool,
    /// Worst error observed, in the units of `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl std::fmt::Display for OracleReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<12} worst {:.3e} (tolerance {:.1e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.detail
        )
    }
}

pub const ORACLE_NAMES: [&str; 6] = ["posterior", "unquantized", "dense", "divergence", "sure", "gradcheck"];

#[derive(Debug, Clone, Default)]
pub struct OracleOptions {
    /// Run only these oracles (all when empty).
    pub only: Vec<String>,
    /// Corrupts the sign convention of the quantized posterior, to show the
    /// posterior oracle catches it.
    pub flip_eta_sign: bool,
    pub seed: u64,
}

/// Runs the selected oracles at their standard sizes.
pub fn run_oracles(opts: &OracleOptions) -> Result<Vec<OracleReport>> {
    for name in &opts.only {
        if !ORACLE_NAMES.contains(&name.as_str()) {
            return Err(Error::input(format!("unknown oracle `{name}`; choose from {}", ORACLE_NAMES.join(", "))));
        }
    }
    let wanted = |n: &str| opts.only.is_empty() || opts.only.iter().any(|o| o == n);
    let mut out = Vec::new();
    if wanted("posterior") {
        out.push(posterior_oracle(1000, opts.seed, opts.flip_eta_sign)?);
    }
    if wanted("unquantized") {
        out.push(unquantized_oracle(1000, opts.seed)?);
    }
    if wanted("dense") {
        out.push(dense_oracle(100, opts.seed)?);
    }
    if wanted("divergence") {
        out.push(divergence_oracle(200, opts.seed)?);
    }
    if wanted("sure") {
        out.push(sure_oracle(10_000, opts.seed)?);
    }
    if wanted("gradcheck") {
        out.push(gradcheck_oracle(opts.seed)?);
    }
    Ok(out)
}

const SNRS: [f64; 5] = [-10.0, 0.0, 10.0, 20.0, 30.0];
/// Per-entry power of `z` on the desk system.
const P_Z: f64 = 0.5;

struct RealCase {
    r1z: f64,
    v1z: f64,
    noise_var: f64,
    y: f64,
    spec: QuantizerSpec,
}

/// A prior mean from `N(0, P_z/2)`, a prior variance log-uniform in
/// `[0.01, 1]·P_z`, the truth from the prior and a quantized noisy look.
fn draw_case(rng: &mut SimRng, bits: u32, snr: f64) -> Result<RealCase> {
    let noise_var = 10f64.powf(-snr / 10.0);
    let v1z = P_Z * 10f64.powf(rng.random_range(-2.0..0.0));
    let r1z = (P_Z / 2.0).sqrt() * std_normal(rng);
    let z = r1z + (v1z / 2.0).sqrt() * std_normal(rng);
    let spec = QuantizerSpec::three_sigma(bits, ((P_Z + noise_var) / 2.0).sqrt())?;
    let y = spec.quantize_real(z + (noise_var / 2.0).sqrt() * std_normal(rng));
    Ok(RealCase {
        r1z,
        v1z,
        noise_var,
        y,
        spec,
    })
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs()
    }
}

/// Closed-form quantized posterior against adaptive quadrature of the exact
/// integrals, over `cases` draws cycling through κ ∈ {1..4} and the SNR grid.
pub fn posterior_oracle(cases: usize, seed: u64, flip_eta_sign: bool) -> Result<OracleReport> {
    let mut rng = substream(seed, Stream::Oracle, 1);
    let (mut worst, mut at) = (0.0f64, String::new());
    for k in 0..cases {
        let bits = 1 + (k % 4) as u32;
        let snr = SNRS[(k / 4) % SNRS.len()];
        let c = draw_case(&mut rng, bits, snr)?;
        let bounds = c.spec.bounds(c.y)?;
        let fast = quantized_real_part(c.r1z, c.v1z, c.y, bounds, c.noise_var, flip_eta_sign);
        let exact = oracle_posterior_numeric(c.r1z, c.v1z, bounds.0, bounds.1, c.noise_var)?;
        let e = rel(fast.mean, exact.mean).max(rel(fast.var, exact.var));
        if !(e <= worst) {
            worst = if e.is_nan() { f64::INFINITY } else { e };
            at = format!("at κ={bits}, SNR={snr} dB, r1z={:.4}, v1z={:.4}, y={:.4}", c.r1z, c.v1z, c.y);
        }
    }
    let tol = 1e-6;
    Ok(OracleReport {
        name: "posterior",
        passed: worst < tol,
        worst,
        tolerance: tol,
        detail: format!("{cases} cases{}; worst {at}", if flip_eta_sign { ", η sign flipped" } else { "" }),
    })
}

/// 12-bit quantized posterior against the unquantized Gaussian update
/// evaluated at the codeword. Draws landing in an overload cell are redrawn:
/// those cells are half-lines, not fine quantization.
pub fn unquantized_oracle(cases: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = substream(seed, Stream::Oracle, 2);
    let (mut worst, mut at) = (0.0f64, String::new());
    let mut redrawn = 0usize;
    for k in 0..cases {
        let snr = SNRS[k % SNRS.len()];
        let (re, im) = loop {
            let re = draw_case(&mut rng, 12, snr)?;
            let im = draw_case(&mut rng, 12, snr)?;
            let inner = |c: &RealCase| c.spec.bounds(c.y).map(|(lo, up)| lo.is_finite() && up.is_finite());
            if inner(&re)? && inner(&im)? {
                break (re, im);
            }
            redrawn += 1;
        };
        // one complex entry: the imaginary part reuses the real prior variance
        let r = Complex64::new(re.r1z, im.r1z);
        let y = Complex64::new(re.y, im.y);
        let q = posterior_z_quantized_scalar(r, re.v1z, y, re.noise_var, &re.spec)?;
        let u = posterior_z_unquantized_scalar(r, re.v1z, y, re.noise_var)?;
        let e = ((q.mean - u.mean).norm() / u.mean.norm()).max(rel(q.var, u.var));
        if !(e <= worst) {
            worst = if e.is_nan() { f64::INFINITY } else { e };
            at = format!("at SNR={snr} dB, v1z={:.4}", re.v1z);
        }
    }
    let tol = 1e-3;
    Ok(OracleReport {
        name: "unquantized",
        passed: worst < tol,
        worst,
        tolerance: tol,
        detail: format!("{cases} cases, {redrawn} overload draws redrawn; worst {at}"),
    })
}

/// One block-diagonal layer against the literal dense implementation, on
/// N=4, M=3, Q·N_RF=6, alternating unquantized and 2-bit measurements and
/// starting from 0–2 warm-up layers.
pub fn dense_oracle(instances: usize, seed: u64) -> Result<OracleReport> {
    let mut worst = 0.0f64;
    for k in 0..instances {
        let cfg = SystemConfig {
            antennas: 4,
            rf_chains: 2,
            pilot_instants: 3,
            subcarriers: 3,
            paths: 2,
            snr_db: [0.0, 10.0, 20.0][k % 3],
            adc_bits: if k % 2 == 0 { Resolution::Infinite } else { Resolution::Bits(2) },
            ..SystemConfig::default()
        };
        let inst = super::sweep::instance(
            &super::config::SweepPoint {
                gec: GecConfig::for_system(&cfg),
                system: cfg.clone(),
            },
            seed ^ 0xD3,
            k,
        )?;
        let gec = GecConfig::for_system(&cfg);
        let den = SoftThresholdDenoiser { lambda: 0.7 };
        let runner = Ldgec::new(&inst.y, &inst.model, &gec)?;
        let mut st = runner.init_state();
        let mut probe = substream(seed, Stream::Probe, k as u64);
        for _ in 0..k % 3 {
            runner.layer(&mut st, &den, &mut probe)?;
        }
        let (dense_state, dense_h) = dense_layer(&inst.y, &inst.model, &gec, &st, &den, &mut probe.clone())?;
        let (fast_h, _) = runner.layer(&mut st, &den, &mut probe)?;
        let cdiff = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        let rdiff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let d = [
            cdiff(&fast_h, &dense_h),
            cdiff(&st.r1z, &dense_state.r1z),
            cdiff(&st.r2z, &dense_state.r2z),
            cdiff(&st.r1h, &dense_state.r1h),
            cdiff(&st.r2h, &dense_state.r2h),
            rdiff(&st.v1z, &dense_state.v1z),
            rdiff(&st.v2z, &dense_state.v2z),
            rdiff(&st.v1h, &dense_state.v1h),
            rdiff(&st.v2h, &dense_state.v2h),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        worst = worst.max(if d.is_nan() { f64::INFINITY } else { d });
    }
    let tol = 1e-8;
    Ok(OracleReport {
        name: "dense",
        passed: worst < tol,
        worst,
        tolerance: tol,
        detail: format!("{instances} instances, max abs difference over ĥ2 and all messages"),
    })
}

/// Image with i.i.d. `N(0, s²)` coordinates.
fn gaussian_image(beams: usize, subcarriers: usize, s: f64, rng: &mut SimRng) -> Result<ChannelImage> {
    let data = (0..2 * beams * subcarriers).map(|_| s * std_normal(rng)).collect();
    ChannelImage::from_data(beams, subcarriers, data)
}

/// Linear denoisers: the single-probe estimate equals the trace. Soft
/// threshold at P = 2048 on unit-variance input with τ = 0.3, where about
/// 76% of coordinates survive: within 5% of the exact count for at least 95%
/// of `seeds` single-probe estimates.
pub fn divergence_oracle(seeds: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = substream(seed, Stream::Oracle, 3);
    let r = gaussian_image(32, 32, 1.0, &mut rng)?;
    let p = r.len() as f64;
    let linear: [(&dyn Denoiser, f64); 3] = [
        (&IdentityDenoiser, p),
        (&ScaleDenoiser(0.37), 0.37 * p),
        (&MatchedGaussianDenoiser::default(), p / (1.0 + 0.6)),
    ];
    let mut linear_worst = 0.0f64;
    for k in 0..20u64 {
        for (d, trace) in &linear {
            let mc = mc_divergence(*d, &r, 0.6, &mut substream(seed, Stream::Probe, k), 1)?;
            linear_worst = linear_worst.max(rel(mc, *trace));
        }
    }
    // threshold λ·√(v/2) with v = 2 gives τ = λ
    let st = SoftThresholdDenoiser { lambda: 0.3 };
    let exact = st.analytic_divergence(&r, 2.0).expect("closed form");
    let mut within = 0usize;
    let mut worst_soft = 0.0f64;
    for k in 0..seeds as u64 {
        let mc = mc_divergence(&st, &r, 2.0, &mut substream(seed, Stream::Probe, 1000 + k), 1)?;
        let e = rel(mc, exact);
        worst_soft = worst_soft.max(e);
        if e <= 0.05 {
            within += 1;
        }
    }
    let frac = within as f64 / seeds as f64;
    let tol = 1e-9;
    Ok(OracleReport {
        name: "divergence",
        passed: linear_worst < tol && frac >= 0.95,
        worst: linear_worst,
        tolerance: tol,
        detail: format!(
            "linear exact to {linear_worst:.1e}; soft threshold ({:.0}% of P active) within 5% on {:.1}% of {seeds} probes (worst {:.1}%)",
            100.0 * exact / p,
            100.0 * frac,
            100.0 * worst_soft
        ),
    })
}

/// Mean SURE against mean empirical MSE of a soft threshold over `draws`
/// noise realizations, at three noise levels.
pub fn sure_oracle(draws: usize, seed: u64) -> Result<OracleReport> {
    let (beams, sub) = (8, 16);
    let mut rng = substream(seed, Stream::Oracle, 4);
    let truth: Vec<f64> = (0..2 * beams * sub)
        .map(|k| if k % 7 == 0 { 3.0 * std_normal(&mut rng) } else { 0.0 })
        .collect();
    let truth = ChannelImage::from_data(beams, sub, truth)?;
    let p = truth.len() as f64;
    let den = SoftThresholdDenoiser { lambda: 1.5 };
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for v in [0.1, 0.5, 2.0] {
        let sd = (v / 2.0f64).sqrt();
        let (mut sure, mut mse) = (0.0, 0.0);
        for _ in 0..draws {
            let mut r = truth.clone();
            r.data_mut().iter_mut().for_each(|x| *x += sd * std_normal(&mut rng));
            let out = den.denoise(&r, v)?;
            let div = den.analytic_divergence(&r, v).expect("closed form");
            sure += sure_loss(&r, &out, v / 2.0, div, p)?;
            mse += mse_loss(&out, &truth, p)?;
        }
        let e = rel(sure, mse);
        parts.push(format!("v={v}: {:.2}%", 100.0 * e));
        worst = worst.max(e);
    }
    let tol = 0.02;
    Ok(OracleReport {
        name: "sure",
        passed: worst < tol,
        worst,
        tolerance: tol,
        detail: format!("{draws} draws; {}", parts.join(", ")),
    })
}

/// Reverse-mode gradients of both losses against central differences.
pub fn gradcheck_oracle(seed: u64) -> Result<OracleReport> {
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for kind in [LossKind::Mse, LossKind::Sure] {
        let rep = gradcheck_fixture(kind, seed.wrapping_add(5))?;
        worst = worst.max(rep.max_rel_error);
        parts.push(format!("{kind}: {} checked, {} across a ReLU kink", rep.checked, rep.skipped_kinks));
    }
    let tol = 1e-5;
    Ok(OracleReport {
        name: "gradcheck",
        passed: worst < tol,
        worst,
        tolerance: tol,
        detail: parts.join("; "),
    })
}
