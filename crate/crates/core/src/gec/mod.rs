//! The unfolded estimator: Module A (observation posterior), Module C
//! (block LMMSE) and Module B (denoiser) exchanging extrinsic messages.
//!
//! Means are complex; since `W̄` is real, real and imaginary parts travel as
//! two parallel real message sets that share one variance per entry.

pub mod dense;
mod lmmse;

use num_complex::Complex64;
use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use lmmse::{lmmse_h, lmmse_z, LmmseOutput};

use crate::baselines::nmse;
use crate::config::SystemConfig;
use crate::denoiser::{module_b_step, Denoiser, DivergenceNorm, ModuleBOutput};
use crate::error::{Error, Result};
use crate::measurement::MeasurementModel;
use crate::posterior::posterior_z_quantized;

/// Minimum variance of any message.
pub const VARIANCE_FLOOR: f64 = 5e-7;
/// Prior power of a channel entry.
pub const P_H: f64 = 1.0;
/// Variance substituted for a non-positive extrinsic variance.
pub const EXTRINSIC_CAP: f64 = 1e3 * P_H;

/// Damping factor per layer, `t` counting from 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DampingSchedule {
    Constant { beta: f64 },
    /// `β_t = max(β_min, β₀·ratioᵗ)`.
    Geometric { beta0: f64, ratio: f64, beta_min: f64 },
}

impl Default for DampingSchedule {
    fn default() -> Self {
        Self::Constant { beta: 0.8 }
    }
}

impl DampingSchedule {
    pub fn quantized_default() -> Self {
        Self::Geometric {
            beta0: 1.0,
            ratio: 0.1,
            beta_min: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |b: f64| b > 0.0 && b <= 1.0;
        match *self {
            Self::Constant { beta } if ok(beta) => Ok(()),
            Self::Geometric { beta0, ratio, beta_min } if ok(beta0) && ok(beta_min) && ratio > 0.0 && ratio <= 1.0 => Ok(()),
            _ => Err(Error::input(format!("damping factors must lie in (0, 1]: {self:?}"))),
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        match *self {
            Self::Constant { beta } => beta,
            Self::Geometric { beta0, ratio, beta_min } => {
                let exp = i32::try_from(t).unwrap_or(i32::MAX);
                (beta0 * ratio.powi(exp)).max(beta_min).min(1.0)
            }
        }
    }
}

/// `β·new + (1−β)·old`.
pub fn damp(new: f64, old: f64, beta: f64) -> f64 {
    beta * new + (1.0 - beta) * old
}

/// One extrinsic update; `capped` reports that the precision difference was
/// not positive and finite, or left a variance above the cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsic {
    pub mean: Complex64,
    pub var: f64,
    pub capped: bool,
}

/// Extrinsic message with a custom cap and floor.
pub fn extrinsic_with(post_mean: Complex64, post_var: f64, prior_mean: Complex64, prior_var: f64, cap: f64, floor: f64) -> Extrinsic {
    let precision = 1.0 / post_var - 1.0 / prior_var;
    if precision == f64::INFINITY {
        // exact posterior: nothing left to subtract
        return Extrinsic {
            mean: post_mean,
            var: floor,
            capped: false,
        };
    }
    if !(precision > 0.0) || !precision.is_finite() {
        return Extrinsic {
            mean: post_mean,
            var: cap.max(floor),
            capped: true,
        };
    }
    let var = 1.0 / precision;
    let mean = var * (post_mean / post_var - prior_mean / prior_var);
    if !(var <= cap) || !mean.re.is_finite() || !mean.im.is_finite() {
        return Extrinsic {
            mean: post_mean,
            var: cap.max(floor),
            capped: true,
        };
    }
    Extrinsic {
        mean,
        var: var.max(floor),
        capped: false,
    }
}

/// Extrinsic `(mean, variance)` with the default cap and floor.
pub fn extrinsic(post_mean: Complex64, post_var: f64, prior_mean: Complex64, prior_var: f64) -> (Complex64, f64) {
    let e = extrinsic_with(post_mean, post_var, prior_mean, prior_var, EXTRINSIC_CAP, VARIANCE_FLOOR);
    (e.mean, e.var)
}

fn extrinsic_vec(
    post_mean: &[Complex64],
    post_var: impl Fn(usize) -> f64,
    prior_mean: &[Complex64],
    prior_var: &[f64],
    cfg: &GecConfig,
) -> (Vec<Complex64>, Vec<f64>) {
    (0..post_mean.len())
        .map(|k| {
            let e = extrinsic_with(post_mean[k], post_var(k), prior_mean[k], prior_var[k], cfg.extrinsic_cap, cfg.variance_floor);
            (e.mean, e.var)
        })
        .unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GecConfig {
    pub layers: usize,
    pub damping: DampingSchedule,
    pub divergence_norm: DivergenceNorm,
    pub extrinsic_cap: f64,
    pub variance_floor: f64,
}

impl Default for GecConfig {
    fn default() -> Self {
        Self {
            layers: 20,
            damping: DampingSchedule::default(),
            divergence_norm: DivergenceNorm::default(),
            extrinsic_cap: EXTRINSIC_CAP,
            variance_floor: VARIANCE_FLOOR,
        }
    }
}

impl GecConfig {
    /// Defaults for a system: 20 layers (40 above 10 dB), constant damping
    /// when unquantized and the geometric schedule otherwise.
    pub fn for_system(cfg: &SystemConfig) -> Self {
        Self {
            layers: if cfg.snr_db > 10.0 { 40 } else { 20 },
            damping: if cfg.adc_bits.is_infinite() {
                DampingSchedule::default()
            } else {
                DampingSchedule::quantized_default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::input("the layer count must be at least 1"));
        }
        if !(self.variance_floor > 0.0) || !(self.extrinsic_cap > self.variance_floor) {
            return Err(Error::input("need 0 < variance_floor < extrinsic_cap"));
        }
        self.damping.validate()
    }
}

/// All messages of the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct GecState {
    pub r1z: Vec<Complex64>,
    pub v1z: Vec<f64>,
    pub r2z: Vec<Complex64>,
    pub v2z: Vec<f64>,
    pub r1h: Vec<Complex64>,
    pub v1h: Vec<f64>,
    pub r2h: Vec<Complex64>,
    pub v2h: Vec<f64>,
    /// Completed layers.
    pub layer: usize,
}

/// Initial messages: `r1z = 0, v1z = P_z`, `r2h = 0, v2h = P_h`.
pub fn init_state(model: &MeasurementModel) -> GecState {
    let zero = Complex64::new(0.0, 0.0);
    let (nz, nh) = (model.measurement_len(), model.channel_len());
    GecState {
        r1z: vec![zero; nz],
        v1z: vec![model.p_z(); nz],
        r2z: vec![zero; nz],
        v2z: vec![model.p_z(); nz],
        r1h: vec![zero; nh],
        v1h: vec![P_H; nh],
        r2h: vec![zero; nh],
        v2h: vec![P_H; nh],
        layer: 0,
    }
}

impl GecState {
    fn check_finite(&self, layer: usize) -> Result<()> {
        let means = [&self.r1z, &self.r2z, &self.r1h, &self.r2h];
        if means.iter().any(|v| v.iter().any(|c| !c.re.is_finite() || !c.im.is_finite())) {
            return Err(Error::NonFinite {
                layer,
                message: "message mean",
            });
        }
        let vars = [&self.v1z, &self.v2z, &self.v1h, &self.v2h];
        if vars.iter().any(|v| v.iter().any(|x| !x.is_finite() || *x <= 0.0)) {
            return Err(Error::NonFinite {
                layer,
                message: "message variance",
            });
        }
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-layer summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    /// 1-based.
    pub layer: usize,
    pub beta: f64,
    pub avg_v1h: f64,
    pub avg_v1z: f64,
    pub divergence: f64,
    pub nmse: Option<f64>,
}

pub const DIAGNOSTICS_HEADER: &str = "layer,avg_v1h,avg_v1z,nmse";

/// CSV rows `layer,avg_v1h,avg_v1z,nmse` (empty NMSE when no truth).
pub fn diagnostics_csv(diags: &[LayerDiagnostics]) -> String {
    let mut s = String::from(DIAGNOSTICS_HEADER);
    s.push('\n');
    for d in diags {
        let nmse = d.nmse.map(|x| format!("{x:e}")).unwrap_or_default();
        s.push_str(&format!("{},{:e},{:e},{}\n", d.layer, d.avg_v1h, d.avg_v1z, nmse));
    }
    s
}

/// Chooses the denoiser used at each layer.
pub trait DenoiserBank: Send + Sync {
    /// `layer` counts from 0; `noise_var` is the layer's `avg(v1h)`.
    fn for_layer(&self, layer: usize, noise_var: f64) -> Result<&dyn Denoiser>;
}

/// The same denoiser at every layer.
pub struct Uniform<D>(pub D);

impl<D: Denoiser> DenoiserBank for Uniform<D> {
    fn for_layer(&self, _: usize, _: f64) -> Result<&dyn Denoiser> {
        Ok(&self.0)
    }
}

/// One denoiser per layer; layers past the end reuse the last one.
pub struct PerLayer(pub Vec<Box<dyn Denoiser>>);

impl DenoiserBank for PerLayer {
    fn for_layer(&self, layer: usize, _: f64) -> Result<&dyn Denoiser> {
        let d = self
            .0
            .get(layer.min(self.0.len().saturating_sub(1)))
            .ok_or_else(|| Error::input("empty per-layer denoiser list"))?;
        Ok(d.as_ref())
    }
}

/// Layer stepper bound to one observation.
pub struct Ldgec<'a> {
    y: &'a [Complex64],
    model: &'a MeasurementModel,
    cfg: &'a GecConfig,
}

impl<'a> Ldgec<'a> {
    pub fn new(y: &'a [Complex64], model: &'a MeasurementModel, cfg: &'a GecConfig) -> Result<Self> {
        Error::check_len("received signal", model.measurement_len(), y.len())?;
        cfg.validate()?;
        Ok(Self { y, model, cfg })
    }

    pub fn init_state(&self) -> GecState {
        init_state(self.model)
    }

    /// Modules A and C: leaves the denoiser input in `(r1h, v1h)`.
    pub fn front(&self, st: &mut GecState) -> Result<()> {
        let layer = st.layer + 1;
        let (z1, vz1) = posterior_z_quantized(&st.r1z, &st.v1z, self.y, self.model.noise_var, &self.model.quantizer)?;
        (st.r2z, st.v2z) = extrinsic_vec(&z1, |k| vz1[k], &st.r1z, &st.v1z, self.cfg);
        let (h2, q) = lmmse_h(self.model, &st.r2h, &st.v2h, &st.r2z, &st.v2z)?;
        (st.r1h, st.v1h) = extrinsic_vec(&h2, |_| q, &st.r2h, &st.v2h, self.cfg);
        st.check_finite(layer)
    }

    /// Module B output → Module C → damped `(r1z, v1z)`. Returns `ĥ2`.
    pub fn back(&self, st: &mut GecState, b: &ModuleBOutput) -> Result<Vec<Complex64>> {
        let layer = st.layer + 1;
        Error::check_len("denoiser output", st.r1h.len(), b.h_hat.len())?;
        (st.r2h, st.v2h) = extrinsic_vec(&b.h_hat, |k| b.v_post[k], &st.r1h, &st.v1h, self.cfg);
        let out = lmmse_z(self.model, &st.r2h, &st.v2h, &st.r2z, &st.v2z)?;
        let z2 = out.z_hat.expect("requested");
        let qz = out.q_z.expect("requested");
        let beta = self.cfg.damping.beta(st.layer);
        for k in 0..z2.len() {
            let e = extrinsic_with(z2[k], qz, st.r2z[k], st.v2z[k], self.cfg.extrinsic_cap, 0.0);
            let v_new = damp(e.var, st.v1z[k], beta);
            let mean_term = if e.capped || e.var == 0.0 {
                z2[k]
            } else {
                v_new * (z2[k] / qz - st.r2z[k] / st.v2z[k])
            };
            st.r1z[k] = beta * mean_term + (1.0 - beta) * st.r1z[k];
            st.v1z[k] = v_new.max(self.cfg.variance_floor);
        }
        st.layer = layer;
        st.check_finite(layer)?;
        Ok(out.h_hat)
    }

    /// One full layer with the given denoiser.
    pub fn layer(&self, st: &mut GecState, denoiser: &dyn Denoiser, probe_rng: &mut dyn RngCore) -> Result<(Vec<Complex64>, ModuleBOutput)> {
        self.front(st)?;
        let b = module_b_step(denoiser, &st.r1h, &st.v1h, self.model.antennas(), probe_rng, self.cfg.divergence_norm)?;
        let h = self.back(st, &b)?;
        Ok((h, b))
    }
}

#[derive(Debug, Clone)]
pub struct GecOutput {
    pub h_hat: Vec<Complex64>,
    pub diagnostics: Vec<LayerDiagnostics>,
    pub state: GecState,
}

/// Runs `cfg.layers` layers and returns the final `ĥ2`. With `truth`, each
/// layer's diagnostics carry the NMSE of its `ĥ2`.
pub fn run_ldgec(
    y: &[Complex64],
    model: &MeasurementModel,
    cfg: &GecConfig,
    bank: &dyn DenoiserBank,
    probe_rng: &mut dyn RngCore,
    truth: Option<&[Complex64]>,
) -> Result<GecOutput> {
    let runner = Ldgec::new(y, model, cfg)?;
    if let Some(h) = truth {
        Error::check_len("true channel", model.channel_len(), h.len())?;
    }
    let mut st = runner.init_state();
    let mut diagnostics = Vec::with_capacity(cfg.layers);
    let mut h_hat = Vec::new();
    for t in 0..cfg.layers {
        runner.front(&mut st)?;
        let avg_v1h = mean(&st.v1h);
        let denoiser = bank.for_layer(t, avg_v1h)?;
        let b = module_b_step(denoiser, &st.r1h, &st.v1h, model.antennas(), probe_rng, cfg.divergence_norm)?;
        h_hat = runner.back(&mut st, &b)?;
        diagnostics.push(LayerDiagnostics {
            layer: t + 1,
            beta: cfg.damping.beta(t),
            avg_v1h,
            avg_v1z: mean(&st.v1z),
            divergence: b.divergence,
            nmse: truth.map(|h| nmse(&h_hat, h)).transpose()?,
        });
    }
    Ok(GecOutput {
        h_hat,
        diagnostics,
        state: st,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::lmmse_estimate;
    use crate::channel::sample_channel;
    use crate::denoiser::{IdentityDenoiser, MatchedGaussianDenoiser};
    use crate::rng::{substream, Stream};

    const C0: Complex64 = Complex64::new(0.0, 0.0);

    #[test]
    fn extrinsic_examples() {
        let (m, v) = extrinsic(Complex64::new(1.0, 0.0), 1.0, C0, 2.0);
        assert!((v - 2.0).abs() < 1e-15 && (m.re - 2.0).abs() < 1e-15);
        let same = extrinsic_with(Complex64::new(0.3, 0.1), 0.7, Complex64::new(0.2, 0.0), 0.7, EXTRINSIC_CAP, VARIANCE_FLOOR);
        assert!(same.capped && same.var == EXTRINSIC_CAP && same.mean == Complex64::new(0.3, 0.1));
        let worse = extrinsic_with(C0, 3.0, C0, 2.0, EXTRINSIC_CAP, VARIANCE_FLOOR);
        assert!(worse.capped && worse.var == EXTRINSIC_CAP);
        let tiny = extrinsic(C0, 1e-9, C0, 1.0);
        assert_eq!(tiny.1, VARIANCE_FLOOR);
        let exact = extrinsic(Complex64::new(0.5, 0.0), 0.0, C0, 1.0);
        assert_eq!(exact, (Complex64::new(0.5, 0.0), VARIANCE_FLOOR));
    }

    #[test]
    fn damping_examples() {
        assert_eq!(damp(3.0, 7.0, 1.0), 3.0);
        assert_eq!(damp(3.0, 7.0, 0.0), 7.0);
        assert!((damp(1.0, 0.0, 0.8) - 0.8).abs() < 1e-15);
        let g = DampingSchedule::quantized_default();
        assert_eq!(g.beta(0), 1.0);
        assert!((g.beta(1) - 0.1).abs() < 1e-15);
        assert_eq!(g.beta(2), 0.05);
        assert_eq!(g.beta(1000), 0.05);
        assert!(DampingSchedule::Constant { beta: 0.0 }.validate().is_err());
        assert!(DampingSchedule::Constant { beta: 1.2 }.validate().is_err());
        assert!(g.validate().is_ok());
    }

    #[test]
    fn init_state_powers() {
        let cfg = SystemConfig::default();
        let model = MeasurementModel::sample(&cfg, &mut substream(0, Stream::Selection, 0)).unwrap();
        let st = init_state(&model);
        assert!(st.v1z.iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!(st.v2h.iter().all(|&v| v == 1.0));
        assert!(st.r1z.iter().chain(&st.r2h).all(|c| *c == C0));
    }

    fn small_cfg(snr: f64, q: usize) -> SystemConfig {
        SystemConfig {
            antennas: 8,
            rf_chains: 2,
            pilot_instants: q,
            subcarriers: 4,
            paths: 2,
            snr_db: snr,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn noiseless_identity_recovers_exactly() {
        // 16 rows over 8 antennas: W̄ has full column rank, so y pins h down
        let cfg = small_cfg(f64::INFINITY, 8);
        let model = MeasurementModel::sample(&cfg, &mut substream(3, Stream::Selection, 0)).unwrap();
        let h = sample_channel(&cfg, &mut substream(3, Stream::Channel, 0)).unwrap();
        let y = model.observe(h.stacked(), &mut substream(3, Stream::Noise, 0)).unwrap();
        let gcfg = GecConfig {
            layers: 10,
            ..GecConfig::default()
        };
        let out = run_ldgec(&y, &model, &gcfg, &Uniform(IdentityDenoiser), &mut substream(3, Stream::Probe, 0), Some(h.stacked())).unwrap();
        let e = nmse(&out.h_hat, h.stacked()).unwrap();
        assert!(e < 1e-8, "{e}");
        assert_eq!(out.diagnostics.len(), 10);
    }

    #[test]
    fn matched_gaussian_reaches_lmmse() {
        for (q, snr) in [(2, 0.0), (4, 10.0), (8, 10.0)] {
            let cfg = small_cfg(snr, q);
            let model = MeasurementModel::sample(&cfg, &mut substream(4, Stream::Selection, 0)).unwrap();
            let h = sample_channel(&cfg, &mut substream(4, Stream::Channel, 0)).unwrap();
            let y = model.observe(h.stacked(), &mut substream(4, Stream::Noise, 0)).unwrap();
            let oracle = lmmse_estimate(&y, &model, P_H).unwrap();
            let gcfg = GecConfig {
                layers: 30,
                ..GecConfig::default()
            };
            let out = run_ldgec(&y, &model, &gcfg, &Uniform(MatchedGaussianDenoiser::default()), &mut substream(4, Stream::Probe, 0), Some(&oracle)).unwrap();
            let e = out.diagnostics.last().unwrap().nmse.unwrap();
            assert!(e < 1e-5, "q={q} snr={snr}: {e}");
            assert!(out.state.v1z.iter().chain(&out.state.v1h).all(|&v| v >= VARIANCE_FLOOR));
        }
    }

    #[test]
    fn diagnostics_csv_shape() {
        let d = LayerDiagnostics {
            layer: 1,
            beta: 0.8,
            avg_v1h: 0.5,
            avg_v1z: 0.25,
            divergence: 3.0,
            nmse: None,
        };
        let csv = diagnostics_csv(&[d]);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn wrong_lengths_rejected() {
        let cfg = small_cfg(10.0, 2);
        let model = MeasurementModel::sample(&cfg, &mut substream(5, Stream::Selection, 0)).unwrap();
        let gcfg = GecConfig::default();
        assert!(Ldgec::new(&[C0; 3], &model, &gcfg).is_err());
        let bad = GecConfig {
            layers: 0,
            ..GecConfig::default()
        };
        assert!(Ldgec::new(&vec![C0; model.measurement_len()], &model, &bad).is_err());
    }
}
