//! Plane-wave phase-matching model of the signal-idler joint amplitude and
//! the correlation widths it predicts at the camera.
//!
//! Signal and idler are treated as plane waves with transverse wave vectors
//! `q_s`, `q_i` (rad/m, crystal frame, `x` radial). The joint amplitude is
//! the product of the pump's angular spectrum evaluated at `q_s + q_i` and
//! the longitudinal phase-matching factor `sinc(Δk_z L / 2)`.
//!
//! Predicted widths come from 1D cuts: the signal direction is held on the
//! degenerate cone and the idler direction is stepped radially or
//! azimuthally. At each step the squared amplitude is integrated over the
//! signal/idler frequency detuning passed by the interference filter. The
//! detuning lets the radial pump mismatch cancel, so radial widths follow
//! the longitudinal condition while azimuthal widths follow the pump
//! spectrum.

use rustfft::num_complex::Complex64;

use crate::config::{ExperimentConfig, FWHM_PER_SIGMA};
use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Transverse wave vector, rad/m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transverse {
    pub x: f64,
    pub y: f64,
}

impl Transverse {
    pub const ZERO: Transverse = Transverse { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm_sqr(self) -> f64 {
        self.x * self.x + self.y * self.y
    }
}

impl std::ops::Add for Transverse {
    type Output = Transverse;
    fn add(self, o: Transverse) -> Transverse {
        Transverse::new(self.x + o.x, self.y + o.y)
    }
}

/// Pump angular-spectrum amplitude, 1 at `q = 0`.
///
/// `widen_factor` stretches the spectrum; 2 gives a spectrum twice as wide
/// as the ideal Gaussian beam.
pub fn pump_spatial_spectrum(q: Transverse, waist_x: f64, waist_y: f64, widen_factor: f64) -> f64 {
    let f2 = widen_factor * widen_factor;
    (-(waist_x * waist_x * q.x * q.x + waist_y * waist_y * q.y * q.y) / (4.0 * f2)).exp()
}

/// `sin(x)/x` with the removable singularity handled by its series.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// How the pump angular spectrum enters the joint amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PumpSpectrum {
    Gaussian { widen_factor: f64 },
    /// Unit everywhere; isolates the longitudinal phase-matching factor.
    Flat,
}

/// Wave numbers and calibration offset for one crystal/pump/geometry.
#[derive(Debug, Clone)]
pub struct PhaseMatching {
    /// Pump wave number inside the crystal.
    pub k_pump: f64,
    /// Degenerate frequency, half the pump frequency (rad/s).
    pub omega_degenerate: f64,
    pub index_down: f64,
    pub length: f64,
    /// Transverse wave number of the degenerate cone.
    pub q_cone: f64,
    /// Constant added to Δk_z so the configured cone is exactly matched.
    pub shim: f64,
    waist_x: f64,
    waist_y: f64,
    filter_band: Option<(f64, f64)>,
}

impl PhaseMatching {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let c = &config.crystal;
        let p = &config.pump;
        let g = &config.geometry;
        let omega_pump = 2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / p.wavelength;
        let omega_d = omega_pump / 2.0;
        let k0 = omega_d / SPEED_OF_LIGHT;
        let q_cone = k0 * g.cone_half_angle_deg.to_radians().sin();

        // Detuning window over which both twins pass the filter.
        let filter_band = if g.filter_bandwidth > 0.0 {
            let w = |lambda: f64| 2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / lambda;
            let hi = w(g.center_wavelength_down - g.filter_bandwidth / 2.0);
            let lo = w(g.center_wavelength_down + g.filter_bandwidth / 2.0);
            let start = (lo - omega_d).max(omega_d - hi);
            let end = (hi - omega_d).min(omega_d - lo);
            if start > 0.0 || end < 0.0 {
                return Err(Error::Domain(
                    "filter does not pass the degenerate frequency pair".into(),
                ));
            }
            Some((start, end))
        } else {
            None
        };

        let mut pm = Self {
            k_pump: c.index_pump * omega_pump / SPEED_OF_LIGHT,
            omega_degenerate: omega_d,
            index_down: c.index_down,
            length: c.length,
            q_cone,
            shim: 0.0,
            waist_x: p.waist_horizontal,
            waist_y: p.waist_vertical,
            filter_band,
        };
        let raw = pm.delta_kz_detuned(Transverse::new(q_cone, 0.0), Transverse::new(-q_cone, 0.0), 0.0)?;
        pm.shim = -raw;
        Ok(pm)
    }

    /// Vacuum wave number of the degenerate pair.
    pub fn k0(&self) -> f64 {
        self.omega_degenerate / SPEED_OF_LIGHT
    }

    /// Degenerate signal/idler wave number inside the crystal.
    pub fn k_down(&self) -> f64 {
        self.index_down * self.k0()
    }

    /// Signal at the matched point on the radial axis; its idler twin is the negation.
    pub fn matched_signal(&self) -> Transverse {
        Transverse::new(self.q_cone, 0.0)
    }

    pub fn delta_kz(&self, q_s: Transverse, q_i: Transverse) -> Result<f64> {
        self.delta_kz_detuned(q_s, q_i, 0.0)
    }

    /// Δk_z for a signal at `ω_d + detuning` and idler at `ω_d − detuning`.
    pub fn delta_kz_detuned(&self, q_s: Transverse, q_i: Transverse, detuning: f64) -> Result<f64> {
        let k_s = self.index_down * (self.omega_degenerate + detuning) / SPEED_OF_LIGHT;
        let k_i = self.index_down * (self.omega_degenerate - detuning) / SPEED_OF_LIGHT;
        let kz = |k: f64, q: Transverse, beam: &str| {
            let q2 = q.norm_sqr();
            if q2 >= k * k {
                Err(Error::Domain(format!("{beam} wave is evanescent (|q| ≥ k)")))
            } else {
                Ok((k * k - q2).sqrt())
            }
        };
        let kp_z = kz(self.k_pump, q_s + q_i, "pump")?;
        let ks_z = kz(k_s, q_s, "signal")?;
        let ki_z = kz(k_i, q_i, "idler")?;
        Ok(kp_z - ks_z - ki_z + self.shim)
    }

    fn pump_factor(&self, q: Transverse, spectrum: PumpSpectrum) -> f64 {
        match spectrum {
            PumpSpectrum::Gaussian { widen_factor } => {
                pump_spatial_spectrum(q, self.waist_x, self.waist_y, widen_factor)
            }
            PumpSpectrum::Flat => 1.0,
        }
    }

    pub fn joint_amplitude_detuned(
        &self,
        q_s: Transverse,
        q_i: Transverse,
        detuning: f64,
        spectrum: PumpSpectrum,
    ) -> Result<Complex64> {
        let dk = self.delta_kz_detuned(q_s, q_i, detuning)?;
        let half = dk * self.length / 2.0;
        let modulus = self.pump_factor(q_s + q_i, spectrum) * sinc(half);
        Ok(Complex64::from_polar(modulus, half))
    }

    /// Cut profile value: `∫ |Φ|² dΩ` over the filter band for a signal
    /// travelling along direction sines `dir_s` and idler along `dir_i`.
    fn band_integrated(&self, dir_s: [f64; 2], dir_i: [f64; 2], spectrum: PumpSpectrum, nodes: usize) -> Result<f64> {
        let wd = self.omega_degenerate;
        let c = SPEED_OF_LIGHT;
        let eval = |omega: f64| -> Result<f64> {
            let ws = wd + omega;
            let wi = wd - omega;
            let q_s = Transverse::new(dir_s[0] * ws / c, dir_s[1] * ws / c);
            let q_i = Transverse::new(dir_i[0] * wi / c, dir_i[1] * wi / c);
            Ok(self.joint_amplitude_detuned(q_s, q_i, omega, spectrum)?.norm_sqr())
        };
        let Some((band_lo, band_hi)) = self.filter_band else {
            return eval(0.0);
        };
        // Pump x-mismatch vanishes at ω*; the Gaussian confines the
        // integrand to a few σ around it.
        let spread = dir_s[0] - dir_i[0];
        let (lo, hi) = match spectrum {
            PumpSpectrum::Gaussian { widen_factor } if spread.abs() > 0.0 => {
                let center = -wd * (dir_s[0] + dir_i[0]) / spread;
                let sigma = c * widen_factor / (self.waist_x * spread.abs());
                ((center - 8.0 * sigma).max(band_lo), (center + 8.0 * sigma).min(band_hi))
            }
            _ => (band_lo, band_hi),
        };
        if hi <= lo {
            return Ok(0.0);
        }
        simpson(lo, hi, nodes, eval)
    }
}

fn simpson(a: f64, b: f64, nodes: usize, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let n = (nodes.max(3) - 1) / 2 * 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a)? + f(b)?;
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h)?;
    }
    Ok(acc * h / 3.0)
}

/// Longitudinal mismatch at the degenerate frequency.
pub fn phase_mismatch_z(q_s: Transverse, q_i: Transverse, config: &ExperimentConfig) -> Result<f64> {
    PhaseMatching::new(config)?.delta_kz(q_s, q_i)
}

/// Degenerate-frequency joint amplitude with the configured pump spectrum.
pub fn joint_amplitude(q_s: Transverse, q_i: Transverse, config: &ExperimentConfig) -> Result<Complex64> {
    let pm = PhaseMatching::new(config)?;
    let spectrum = PumpSpectrum::Gaussian {
        widen_factor: config.pump.spectrum_widen_factor,
    };
    pm.joint_amplitude_detuned(q_s, q_i, 0.0, spectrum)
}

/// Joint amplitude sampled over idler wave vectors with the signal fixed on
/// the matched point, normalised to a unit maximum.
#[derive(Debug, Clone)]
pub struct JointAmplitudeGrid {
    pub q_signal: Transverse,
    pub q_idler: Vec<Transverse>,
    pub values: Vec<Complex64>,
}

impl JointAmplitudeGrid {
    /// `n × n` idler samples spanning `±half_range` rad/m around the matched idler.
    pub fn around_matched_idler(config: &ExperimentConfig, half_range: f64, n: usize) -> Result<Self> {
        let pm = PhaseMatching::new(config)?;
        let spectrum = PumpSpectrum::Gaussian {
            widen_factor: config.pump.spectrum_widen_factor,
        };
        let q_s = pm.matched_signal();
        let step = if n > 1 { 2.0 * half_range / (n - 1) as f64 } else { 0.0 };
        let mut q_idler = Vec::with_capacity(n * n);
        let mut values = Vec::with_capacity(n * n);
        for iy in 0..n {
            for ix in 0..n {
                let q_i = Transverse::new(-q_s.x - half_range + ix as f64 * step, -half_range + iy as f64 * step);
                values.push(pm.joint_amplitude_detuned(q_s, q_i, 0.0, spectrum)?);
                q_idler.push(q_i);
            }
        }
        let peak = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if peak > 0.0 {
            values.iter_mut().for_each(|v| *v /= peak);
        }
        Ok(Self {
            q_signal: q_s,
            q_idler,
            values,
        })
    }
}

/// Camera-plane FWHM of the cross-correlation predicted by the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedWidths {
    pub radial_fwhm: f64,
    pub azimuthal_fwhm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    /// Half-range of each cut as an external angle (rad). `None` picks three
    /// times an analytic estimate of the width.
    pub half_range: Option<f64>,
    /// Samples per cut.
    pub samples: usize,
    /// Simpson nodes of the detuning integral.
    pub detuning_nodes: usize,
    pub spectrum: Option<PumpSpectrum>,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            half_range: None,
            samples: 241,
            detuning_nodes: 257,
            spectrum: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cut {
    Radial,
    Azimuthal,
}

/// Profile of one cut: idler angle offsets (rad) and band-integrated `|Φ|²`.
pub fn cut_profile(
    config: &ExperimentConfig,
    cut: Cut,
    widen_factor: f64,
    options: &PredictOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let pm = PhaseMatching::new(config)?;
    let spectrum = options.spectrum.unwrap_or(PumpSpectrum::Gaussian { widen_factor });
    let half_range = options
        .half_range
        .unwrap_or_else(|| 3.0 * estimated_width(&pm, config, cut, widen_factor));
    let n = options.samples.max(5);
    let sin_cone = pm.q_cone / pm.k0();
    let mut offsets = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for k in 0..n {
        let eps = -half_range + 2.0 * half_range * k as f64 / (n - 1) as f64;
        let dir_i = match cut {
            Cut::Radial => [-sin_cone - eps, 0.0],
            Cut::Azimuthal => [-sin_cone, eps],
        };
        offsets.push(eps);
        values.push(pm.band_integrated([sin_cone, 0.0], dir_i, spectrum, options.detuning_nodes)?);
    }
    Ok((offsets, values))
}

/// Rough FWHM (rad) used to size the cut.
fn estimated_width(pm: &PhaseMatching, config: &ExperimentConfig, cut: Cut, widen_factor: f64) -> f64 {
    let k0 = pm.k0();
    let pump = FWHM_PER_SIGMA * widen_factor / (config.pump.waist_vertical.min(config.pump.waist_horizontal) * k0);
    match cut {
        Cut::Azimuthal => FWHM_PER_SIGMA * widen_factor / (config.pump.waist_vertical * k0),
        Cut::Radial => {
            // dΔk_z/dε = k0·sinθ·cosθ / √(n² − sin²θ)
            let s = pm.q_cone / k0;
            let slope = k0 * s * (1.0 - s * s).sqrt() / (pm.index_down * pm.index_down - s * s).sqrt();
            let sinc_width = 2.0 * 2.783_115_5 / (pm.length * slope.max(1e-300));
            sinc_width.min(50.0 * pump).max(pump * 0.05)
        }
    }
}

/// FWHM of a sampled peak by linear interpolation of the half-maximum
/// crossings on both sides of the maximum.
pub fn profile_fwhm(x: &[f64], y: &[f64]) -> Result<f64> {
    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::EmptyData("empty profile".into()))?;
    if ymax <= 0.0 {
        return Err(Error::EmptyData("profile has no positive peak".into()));
    }
    let half = ymax / 2.0;
    let mut left = None;
    for i in (0..imax).rev() {
        if y[i] < half {
            let t = (half - y[i]) / (y[i + 1] - y[i]);
            left = Some(x[i] + t * (x[i + 1] - x[i]));
            break;
        }
    }
    let mut right = None;
    for i in imax + 1..y.len() {
        if y[i] < half {
            let t = (y[i - 1] - half) / (y[i - 1] - y[i]);
            right = Some(x[i - 1] + t * (x[i] - x[i - 1]));
            break;
        }
    }
    match (left, right) {
        (Some(l), Some(r)) => Ok(r - l),
        _ => Err(Error::Range("half maximum not bracketed by the cut".into())),
    }
}

/// Predicted camera-plane XC widths for the configured pump.
pub fn predict_widths(config: &ExperimentConfig, widen_factor: f64) -> Result<PredictedWidths> {
    predict_widths_with(config, widen_factor, &PredictOptions::default())
}

pub fn predict_widths_with(
    config: &ExperimentConfig,
    widen_factor: f64,
    options: &PredictOptions,
) -> Result<PredictedWidths> {
    if widen_factor < 1.0 {
        return Err(Error::Parameter("widen_factor must be >= 1".into()));
    }
    let distance = config.geometry.camera_distance;
    let width = |cut| -> Result<f64> {
        let (x, y) = cut_profile(config, cut, widen_factor, options)?;
        Ok(distance * profile_fwhm(&x, &y)?)
    };
    Ok(PredictedWidths {
        radial_fwhm: width(Cut::Radial)?,
        azimuthal_fwhm: width(Cut::Azimuthal)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ExperimentConfig {
        ExperimentConfig::default()
    }

    fn with_waist(w: f64) -> ExperimentConfig {
        let mut c = cfg();
        c.pump.waist_horizontal = w;
        c.pump.waist_vertical = 0.7 * w;
        c
    }

    #[test]
    fn pump_spectrum_peak_and_e_fold() {
        assert_eq!(pump_spatial_spectrum(Transverse::ZERO, 1e-3, 7e-4, 1.0), 1.0);
        let w = 0.4e-3;
        let v = pump_spatial_spectrum(Transverse::new(2.0 / w, 0.0), w, w, 1.0);
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn widen_factor_halves_the_argument() {
        let q = Transverse::new(3100.0, -1700.0);
        let a = pump_spatial_spectrum(q, 0.5e-3, 0.35e-3, 2.0);
        let b = pump_spatial_spectrum(Transverse::new(q.x / 2.0, q.y / 2.0), 0.5e-3, 0.35e-3, 1.0);
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn sinc_series_branch_is_continuous() {
        assert_eq!(sinc(0.0), 1.0);
        let x = 1e-8;
        assert!((sinc(x) - sinc(1.0001e-8)).abs() < 1e-15);
        assert!(sinc(std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn degenerate_cone_is_matched() {
        let pm = PhaseMatching::new(&cfg()).unwrap();
        let qs = pm.matched_signal();
        let dk = pm.delta_kz(qs, Transverse::new(-qs.x, 0.0)).unwrap();
        assert!(dk.abs() < 1e-6 * pm.k_pump, "{dk}");
    }

    #[test]
    fn collinear_matched_indices_need_no_shim() {
        let mut c = cfg();
        c.geometry.cone_half_angle_deg = 0.0;
        c.crystal.index_pump = 1.66;
        c.crystal.index_down = 1.66;
        let pm = PhaseMatching::new(&c).unwrap();
        assert!(pm.shim.abs() < 1e-7, "{}", pm.shim);
        assert!(pm.delta_kz(Transverse::ZERO, Transverse::ZERO).unwrap().abs() < 1e-7);
    }

    #[test]
    fn evanescent_input_is_domain_error() {
        let pm = PhaseMatching::new(&cfg()).unwrap();
        let q = Transverse::new(2.0 * pm.k_down(), 0.0);
        assert!(matches!(pm.delta_kz(q, Transverse::ZERO), Err(Error::Domain(_))));
    }

    #[test]
    fn joint_amplitude_unity_at_match() {
        let c = cfg();
        let pm = PhaseMatching::new(&c).unwrap();
        let qs = pm.matched_signal();
        let phi = joint_amplitude(qs, Transverse::new(-qs.x, 0.0), &c).unwrap();
        assert!((phi.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn joint_amplitude_vanishes_at_first_sinc_zero() {
        // Flat pump in the azimuthal-free direction: move the idler radially
        // until Δk_z·L/2 = π, found by bisection on the mismatch itself.
        let c = cfg();
        let pm = PhaseMatching::new(&c).unwrap();
        let qs = pm.matched_signal();
        let target = 2.0 * std::f64::consts::PI / c.crystal.length;
        let g = |d: f64| pm.delta_kz(qs, Transverse::new(-qs.x + d, 0.0)).unwrap().abs() - target;
        let (mut lo, mut hi) = (0.0, 1e5);
        assert!(g(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let q_i = Transverse::new(-qs.x + 0.5 * (lo + hi), 0.0);
        let phi = pm
            .joint_amplitude_detuned(qs, q_i, 0.0, PumpSpectrum::Flat)
            .unwrap();
        assert!(phi.norm() < 1e-9, "{}", phi.norm());
    }

    #[test]
    fn joint_amplitude_grid_peaks_at_match() {
        let g = JointAmplitudeGrid::around_matched_idler(&cfg(), 2e4, 21).unwrap();
        let (imax, vmax) = g
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.norm()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!((vmax - 1.0).abs() < 1e-12);
        assert_eq!(imax, 10 * 21 + 10);
        assert!(g.values.iter().all(|v| v.norm() <= 1.0 + 1e-12));
    }

    #[test]
    fn radial_width_insensitive_to_waist() {
        let widths: Vec<f64> = [0.3e-3, 0.6e-3, 1.0e-3, 1.5e-3]
            .iter()
            .map(|&w| predict_widths(&with_waist(w), 1.0).unwrap().radial_fwhm)
            .collect();
        let max = widths.iter().cloned().fold(f64::MIN, f64::max);
        let min = widths.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - min) / min < 0.15, "{widths:?}");
    }

    #[test]
    fn azimuthal_width_roughly_hyperbolic() {
        let a = predict_widths(&with_waist(0.4e-3), 1.0).unwrap().azimuthal_fwhm;
        let b = predict_widths(&with_waist(0.8e-3), 1.0).unwrap().azimuthal_fwhm;
        let ratio = a / b;
        assert!((1.7..=2.3).contains(&ratio), "{ratio}");
    }

    #[test]
    fn wider_pump_spectrum_widens_azimuthal() {
        let c = cfg();
        let a = predict_widths(&c, 1.0).unwrap().azimuthal_fwhm;
        let b = predict_widths(&c, 2.0).unwrap().azimuthal_fwhm;
        assert!(b > a);
    }

    #[test]
    fn radial_width_is_set_by_longitudinal_matching() {
        let c = cfg();
        let gaussian = predict_widths(&c, 1.0).unwrap().radial_fwhm;
        let opts = PredictOptions {
            spectrum: Some(PumpSpectrum::Flat),
            detuning_nodes: 2049,
            ..PredictOptions::default()
        };
        // A flat spectrum leaves the azimuthal cut unbounded; only the radial
        // cut is defined.
        let (x, y) = cut_profile(&c, Cut::Radial, 1.0, &opts).unwrap();
        let flat = c.geometry.camera_distance * profile_fwhm(&x, &y).unwrap();
        assert!((flat - gaussian).abs() / gaussian < 0.05, "{gaussian} vs {flat}");
    }

    #[test]
    fn doubling_crystal_length() {
        let c = cfg();
        let mut long = c.clone();
        long.crystal.length *= 2.0;
        let a = predict_widths(&c, 1.0).unwrap();
        let b = predict_widths(&long, 1.0).unwrap();
        assert!((b.azimuthal_fwhm - a.azimuthal_fwhm).abs() / a.azimuthal_fwhm < 0.05);
        let r = b.radial_fwhm / a.radial_fwhm;
        assert!((0.4..=0.6).contains(&r), "{r}");
    }

    #[test]
    fn widths_are_grid_converged() {
        let c = cfg();
        let a = predict_widths(&c, 1.0).unwrap();
        let opts = PredictOptions {
            samples: 481,
            detuning_nodes: 513,
            ..PredictOptions::default()
        };
        let b = predict_widths_with(&c, 1.0, &opts).unwrap();
        assert!((a.radial_fwhm - b.radial_fwhm).abs() / b.radial_fwhm < 0.01);
        assert!((a.azimuthal_fwhm - b.azimuthal_fwhm).abs() / b.azimuthal_fwhm < 0.01);
    }

    #[test]
    fn narrow_cut_is_range_error() {
        let opts = PredictOptions {
            half_range: Some(1e-6),
            ..PredictOptions::default()
        };
        assert!(matches!(predict_widths_with(&cfg(), 1.0, &opts), Err(Error::Range(_))));
    }

    #[test]
    fn profile_fwhm_of_sampled_gaussian() {
        let sigma = 3.0;
        let x: Vec<f64> = (-400..=400).map(|i| i as f64 * 0.05).collect();
        let y: Vec<f64> = x.iter().map(|v| (-v * v / (2.0 * sigma * sigma)).exp()).collect();
        let w = profile_fwhm(&x, &y).unwrap();
        assert!((w - FWHM_PER_SIGMA * sigma).abs() < 1e-3);
    }
}
