//! Synthetic twin-beam data with known correlation structure.
//!
//! Photon-counting regime: pairs are emitted with a Poisson count per frame,
//! the signal photon uniformly over the illuminated arc, the idler at the
//! conjugate point plus Gaussian jitter.
//!
//! Intensity regime: Gaussian random fields. With white complex fields `W`,
//! `V`, the Gaussian kernel `K` and a unit-modulus quadratic-phase transfer
//! function `T` (a small defocus between the beams),
//!
//! ```text
//! E_s = K * W
//! E_i = K * (μ · T * W + sqrt(1 − μ²) · V),   T(f) = exp(i·2π²·c·f²),  c = 2σ_k σ_j
//! ```
//!
//! Both beams keep the intensity autocorrelation `exp(−r²/(2σ_k²))`, the
//! cross-correlation is `μ² · (σ_k/σ_XC) · exp(−r²/(2σ_XC²))` per axis, and
//! widths add in quadrature:
//!
//! ```text
//! σ_AC² = σ_k²
//! σ_XC² = σ_k² + σ_j²
//! ```
//!
//! Because `|T| = 1` the integrated XC equals the integrated AC for μ = 1:
//! every signal speckle has its full idler twin, only spread out.
//!
//! The idler field lives in signal-plane coordinates and is read through the
//! conjugation map, so mirror geometry never enters the random draw.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rustfft::num_complex::Complex64;

use crate::config::{ExperimentConfig, GainCurve, Layout, RadialAxis, Regime, FWHM_PER_SIGMA};
use crate::detector::Frame;
use crate::error::{Error, Result};
use crate::grid::{fft_frequency, Fft2, Grid, Point, Rect};
use crate::pm::PredictedWidths;
use crate::rng::{stream, Purpose};

/// One down-converted pair on the detector plane.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEvent {
    /// Meters from the sensor corner.
    pub signal_pos: Point,
    pub idler_pos: Point,
    pub frame_index: u64,
}

/// Per-axis values ordered (radial, azimuthal) mapped onto sensor (x, y).
pub fn to_sensor_axes(axis: RadialAxis, radial_azimuthal: [f64; 2]) -> [f64; 2] {
    match axis {
        RadialAxis::Horizontal => radial_azimuthal,
        RadialAxis::Vertical => [radial_azimuthal[1], radial_azimuthal[0]],
    }
}

/// Rectangular illumination window with raised-cosine edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    region: Rect,
    margin: f64,
    edge: f64,
}

impl Envelope {
    /// `margin` and `edge` are fractions of the region size per axis.
    pub fn new(region: Rect, margin: f64, edge: f64) -> Self {
        Self { region, margin, edge }
    }

    pub fn from_config(config: &ExperimentConfig) -> Self {
        let g = &config.geometry;
        Self::new(g.signal_region, g.illumination_margin, g.illumination_edge)
    }

    fn profile(&self, t: f64) -> f64 {
        let t = t.min(1.0 - t);
        if t < self.margin {
            0.0
        } else if t < self.margin + self.edge {
            0.5 * (1.0 - (std::f64::consts::PI * (t - self.margin) / self.edge).cos())
        } else {
            1.0
        }
    }

    /// Relative illumination at a continuous sensor-pixel position.
    pub fn value(&self, p: Point) -> f64 {
        if !self.region.contains_point(p) {
            return 0.0;
        }
        let tx = (p.x - self.region.x as f64) / self.region.width as f64;
        let ty = (p.y - self.region.y as f64) / self.region.height as f64;
        self.profile(tx) * self.profile(ty)
    }
}

/// Pair emitter for the photon-counting regime.
#[derive(Debug, Clone)]
pub struct PairSource {
    envelope: Envelope,
    to_idler_px: crate::grid::Affine2,
    pixel_pitch: f64,
    mean_pairs: f64,
    /// Jitter σ along sensor x and y, meters.
    jitter_sigma: [f64; 2],
}

impl PairSource {
    /// `jitter_sigma` is (radial, azimuthal) in meters.
    pub fn new(config: &ExperimentConfig, mean_pairs: f64, jitter_sigma: [f64; 2]) -> Result<Self> {
        if !(mean_pairs >= 0.0) || !mean_pairs.is_finite() {
            return Err(Error::Parameter(format!("mean pairs per frame must be >= 0, got {mean_pairs}")));
        }
        if jitter_sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Parameter("jitter sigma must be >= 0".into()));
        }
        let to_idler_px = config
            .geometry
            .conjugation
            .inverse()
            .ok_or_else(|| Error::Config("conjugation map is singular".into()))?;
        Ok(Self {
            envelope: Envelope::from_config(config),
            to_idler_px,
            pixel_pitch: config.detector.pixel_pitch,
            mean_pairs,
            jitter_sigma: to_sensor_axes(config.geometry.radial_axis, jitter_sigma),
        })
    }

    /// Source with the configured rate and jitter.
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        let s = &config.source;
        Self::new(
            config,
            s.mean_pairs_per_frame,
            [s.xc_jitter_fwhm_radial / FWHM_PER_SIGMA, s.xc_jitter_fwhm_azimuthal / FWHM_PER_SIGMA],
        )
    }

    pub fn sample<R: Rng>(&self, frame_index: u64, rng: &mut R) -> Vec<PairEvent> {
        if self.mean_pairs == 0.0 {
            return Vec::new();
        }
        let n = Poisson::new(self.mean_pairs).expect("positive mean").sample(rng) as usize;
        let r = self.envelope.region;
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let p = Point::new(
                r.x as f64 + rng.random::<f64>() * r.width as f64,
                r.y as f64 + rng.random::<f64>() * r.height as f64,
            );
            if rng.random::<f64>() >= self.envelope.value(p) {
                continue;
            }
            let q = self.to_idler_px.apply(p);
            let jx: f64 = StandardNormal.sample(rng);
            let jy: f64 = StandardNormal.sample(rng);
            out.push(PairEvent {
                signal_pos: Point::new(p.x * self.pixel_pitch, p.y * self.pixel_pitch),
                idler_pos: Point::new(
                    q.x * self.pixel_pitch + self.jitter_sigma[0] * jx,
                    q.y * self.pixel_pitch + self.jitter_sigma[1] * jy,
                ),
                frame_index,
            });
        }
        out
    }
}

/// Pairs for one frame; `xc_sigma` is the jitter σ (radial, azimuthal) in meters.
pub fn sample_pair_events<R: Rng>(
    config: &ExperimentConfig,
    mean_pairs_per_frame: f64,
    xc_sigma: [f64; 2],
    frame_index: u64,
    rng: &mut R,
) -> Result<Vec<PairEvent>> {
    Ok(PairSource::new(config, mean_pairs_per_frame, xc_sigma)?.sample(frame_index, rng))
}

/// Gaussian-field speckle generator parameters. Per-axis values are
/// (radial, azimuthal) in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeckleModel {
    pub ac_kernel_sigma: [f64; 2],
    pub xc_jitter_sigma: [f64; 2],
    pub cross_strength_mu: f64,
    /// Mean rendered intensity per superpixel inside the illuminated plateau.
    pub mean_intensity: f64,
}

impl SpeckleModel {
    pub fn validate(&self) -> Result<()> {
        let finite_pos = |v: &[f64; 2]| v.iter().all(|s| s.is_finite() && *s >= 0.0);
        if !finite_pos(&self.ac_kernel_sigma) || self.ac_kernel_sigma.iter().any(|s| *s == 0.0) {
            return Err(Error::Parameter("AC kernel sigma must be > 0".into()));
        }
        if !finite_pos(&self.xc_jitter_sigma) {
            return Err(Error::Parameter("XC jitter sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.cross_strength_mu) {
            return Err(Error::Parameter("cross strength must lie in [0, 1]".into()));
        }
        if !(self.mean_intensity > 0.0) || !self.mean_intensity.is_finite() {
            return Err(Error::Parameter("mean intensity must be > 0".into()));
        }
        Ok(())
    }

    /// Analytic intensity AC FWHM per axis.
    pub fn ac_fwhm(&self) -> [f64; 2] {
        self.ac_kernel_sigma.map(|s| s * FWHM_PER_SIGMA)
    }

    /// Analytic intensity XC FWHM per axis.
    pub fn xc_fwhm(&self) -> [f64; 2] {
        let k = self.ac_kernel_sigma;
        let j = self.xc_jitter_sigma;
        [0, 1].map(|a| k[a].hypot(j[a]) * FWHM_PER_SIGMA)
    }
}

/// Solves the width algebra for the kernel and jitter sigmas.
pub fn make_speckle_model(
    target_ac_fwhm: [f64; 2],
    target_xc_fwhm: [f64; 2],
    mu: f64,
    mean_intensity: f64,
) -> Result<SpeckleModel> {
    for a in 0..2 {
        if !(target_ac_fwhm[a] > 0.0) {
            return Err(Error::Parameter("target AC width must be > 0".into()));
        }
        if !(target_xc_fwhm[a] >= target_ac_fwhm[a]) {
            return Err(Error::Parameter(format!(
                "target XC width {} is below target AC width {}",
                target_xc_fwhm[a], target_ac_fwhm[a]
            )));
        }
    }
    let ac = target_ac_fwhm.map(|w| w / FWHM_PER_SIGMA);
    let xc = target_xc_fwhm.map(|w| w / FWHM_PER_SIGMA);
    let model = SpeckleModel {
        ac_kernel_sigma: ac,
        xc_jitter_sigma: [0, 1].map(|a| (xc[a] * xc[a] - ac[a] * ac[a]).max(0.0).sqrt()),
        cross_strength_mu: mu,
        mean_intensity,
    };
    model.validate()?;
    Ok(model)
}

/// Renders speckle frames for one model and layout. Plans, transfer
/// functions and the envelope are computed once.
pub struct SpeckleRenderer {
    layout: Layout,
    seed: u64,
    fft: Fft2,
    /// Oversampled canonical grid (the signal region at twice the superpixel
    /// resolution).
    nx: usize,
    ny: usize,
    kernel: Vec<f64>,
    cross: Vec<Complex64>,
    independent: f64,
    /// Envelope times intensity normalisation, per oversampled cell.
    weight: Vec<f64>,
}

const OVERSAMPLE: usize = 2;

impl SpeckleRenderer {
    pub fn new(model: &SpeckleModel, config: &ExperimentConfig) -> Result<Self> {
        model.validate()?;
        let layout = config.layout(Regime::Intensity)?;
        let (nx, ny) = (layout.signal.width * OVERSAMPLE, layout.signal.height * OVERSAMPLE);
        if nx == 0 || ny == 0 {
            return Err(Error::Config("signal region is empty".into()));
        }
        let cell = layout.pitch / OVERSAMPLE as f64;
        let axis = config.geometry.radial_axis;
        let k = to_sensor_axes(axis, model.ac_kernel_sigma).map(|s| s / cell);
        let j = to_sensor_axes(axis, model.xc_jitter_sigma).map(|s| s / cell);
        let two_pi2 = 2.0 * std::f64::consts::PI * std::f64::consts::PI;
        let c = [2.0 * k[0] * j[0], 2.0 * k[1] * j[1]];
        let mu = model.cross_strength_mu;
        let mut kernel = Vec::with_capacity(nx * ny);
        let mut cross = Vec::with_capacity(nx * ny);
        for ky in 0..ny {
            let fy = fft_frequency(ky, ny);
            for kx in 0..nx {
                let fx = fft_frequency(kx, nx);
                kernel.push((-two_pi2 * (k[0] * k[0] * fx * fx + k[1] * k[1] * fy * fy)).exp());
                let phase = two_pi2 * (c[0] * fx * fx + c[1] * fy * fy);
                cross.push(if phase == 0.0 {
                    Complex64::new(mu, 0.0)
                } else {
                    Complex64::from_polar(mu, phase)
                });
            }
        }
        // E|E|² = N · Σ|K̂|² for unit-variance white noise and unnormalised
        // transforms.
        let n = (nx * ny) as f64;
        let power: f64 = kernel.iter().map(|v| v * v).sum();
        let norm = model.mean_intensity / (n * power);
        let envelope = Envelope::from_config(config);
        let b = layout.binning as f64;
        let origin = Point::new(
            config.geometry.signal_region.x as f64,
            config.geometry.signal_region.y as f64,
        );
        let sub = b / OVERSAMPLE as f64;
        let mut weight = Vec::with_capacity(nx * ny);
        for v in 0..ny {
            for u in 0..nx {
                let p = Point::new(origin.x + (u as f64 + 0.5) * sub, origin.y + (v as f64 + 0.5) * sub);
                weight.push(norm * envelope.value(p));
            }
        }
        Ok(Self {
            seed: config.rng_seed,
            fft: Fft2::new(nx, ny),
            layout,
            nx,
            ny,
            kernel,
            cross,
            independent: (1.0 - mu * mu).max(0.0).sqrt(),
            weight,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn white<R: Rng>(&self, rng: &mut R) -> Vec<Complex64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        (0..self.nx * self.ny)
            .map(|_| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                Complex64::new(s * re, s * im)
            })
            .collect()
    }

    /// Box-averages an oversampled intensity map down to superpixels.
    fn bin(&self, field: &[Complex64]) -> Grid<f64> {
        let (w, h) = (self.layout.signal.width, self.layout.signal.height);
        let inv = 1.0 / (OVERSAMPLE * OVERSAMPLE) as f64;
        Grid::from_fn(w, h, |x, y| {
            let mut acc = 0.0;
            for dy in 0..OVERSAMPLE {
                for dx in 0..OVERSAMPLE {
                    let i = (y * OVERSAMPLE + dy) * self.nx + x * OVERSAMPLE + dx;
                    acc += field[i].norm_sqr() * self.weight[i];
                }
            }
            acc * inv
        })
    }

    /// Ideal (pre-detector) intensity frame, drawn from the frame's own
    /// speckle stream.
    pub fn render(&self, frame_index: u64) -> Frame {
        let mut rng = stream(self.seed, Purpose::Speckle, frame_index);
        let mut w = self.white(&mut rng);
        let mut v = self.white(&mut rng);
        self.fft.forward(&mut w);
        self.fft.forward(&mut v);
        let mut es = Vec::with_capacity(w.len());
        let mut ei = Vec::with_capacity(w.len());
        for i in 0..w.len() {
            es.push(w[i] * self.kernel[i]);
            ei.push((w[i] * self.cross[i] + v[i] * self.independent) * self.kernel[i]);
        }
        self.fft.inverse(&mut es);
        self.fft.inverse(&mut ei);
        let signal = self.bin(&es);
        let idler = self.bin(&ei);

        let l = &self.layout;
        let mut frame = Frame::blank(l, frame_index, self.seed);
        for (x, y) in l.signal.cells() {
            frame.grid.set(x, y, signal.at(x - l.signal.x, y - l.signal.y));
        }
        for (x, y) in l.idler.cells() {
            if let Some((cx, cy)) = l.conjugate_cell(x, y) {
                frame.grid.set(x, y, idler.at(cx - l.signal.x, cy - l.signal.y));
            }
        }
        frame
    }
}

/// One ideal intensity frame. Prefer [`SpeckleRenderer`] for stacks.
pub fn render_speckle_frame(model: &SpeckleModel, config: &ExperimentConfig, frame_index: u64) -> Result<Frame> {
    Ok(SpeckleRenderer::new(model, config)?.render(frame_index))
}

/// Speckle-model targets at one pump power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeckleTargets {
    pub ac_fwhm: [f64; 2],
    pub xc_fwhm: [f64; 2],
    pub mean_intensity: f64,
}

impl GainCurve {
    /// `1 − exp(−(P − P_th)/(P_sat − P_th))`, unclamped.
    pub fn saturating(&self, power: f64) -> f64 {
        1.0 - (-(power - self.p_threshold) / (self.p_sat - self.p_threshold)).exp()
    }
}

/// Maps pump power to speckle targets. `floor` is the smallest resolvable
/// AC width (one superpixel, meters).
pub fn gain_to_targets(
    power: f64,
    curve: &GainCurve,
    pm_widths: &PredictedWidths,
    floor: f64,
) -> Result<SpeckleTargets> {
    if !(power > 0.0) {
        return Err(Error::Parameter(format!("pump power must be > 0, got {power}")));
    }
    if !(curve.p_threshold < curve.p_sat) {
        return Err(Error::Parameter("gain curve needs p_threshold < p_sat".into()));
    }
    let s = curve.saturating(power);
    let sat = [curve.ac_width_sat_radial, curve.ac_width_sat_azimuthal];
    let ac = sat.map(|w| (w * s.min(1.0)).max(floor));
    let ratio = power / curve.reference_power;
    Ok(SpeckleTargets {
        ac_fwhm: ac,
        xc_fwhm: [pm_widths.radial_fwhm, pm_widths.azimuthal_fwhm],
        mean_intensity: curve.reference_mean_intensity * ratio * ratio,
    })
}
