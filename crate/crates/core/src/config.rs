//! Experiment definition: every physical and acquisition parameter, its
//! validation, the flat key/value file format and the superpixel layout
//! derived for each acquisition regime.
//!
//! Units are fixed: lengths in meters, powers in watts, angles in degrees,
//! detector values in ADC counts.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Affine2, Point, Rect};

/// Environment variable that replaces `rng_seed` when set.
pub const SEED_ENV: &str = "TWINBEAM_SEED";

/// Conversion factor between a Gaussian's standard deviation and its FWHM.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Eimerl et al. BBO Sellmeier coefficients, `n² = A + B/(λ² − C) − D·λ²`
/// with λ in micrometers.
pub const BBO_ORDINARY: [f64; 4] = [2.7359, 0.01878, 0.01822, 0.01354];
pub const BBO_EXTRAORDINARY: [f64; 4] = [2.3753, 0.01224, 0.01667, 0.01516];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Counting,
    Intensity,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Counting => "counting",
            Regime::Intensity => "intensity",
        })
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "counting" => Ok(Regime::Counting),
            "intensity" => Ok(Regime::Intensity),
            other => Err(Error::Parameter(format!("unknown regime `{other}`"))),
        }
    }
}

/// Which camera axis runs radially across the cone section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadialAxis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrystalParams {
    pub length: f64,
    pub cut_angle_deg: f64,
    /// Effective pump index (extraordinary wave at the cut angle).
    pub index_pump: f64,
    /// Effective signal/idler index (ordinary wave at the filter centre).
    pub index_down: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sellmeier_ordinary: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sellmeier_extraordinary: Option<Vec<f64>>,
}

impl Default for CrystalParams {
    fn default() -> Self {
        Self {
            length: 8e-3,
            cut_angle_deg: 37.0,
            // BBO_EXTRAORDINARY/BBO_ORDINARY mixed at 37° for 349 nm.
            index_pump: 1.656_971,
            // BBO_ORDINARY at 710 nm.
            index_down: 1.663_648,
            sellmeier_ordinary: Some(BBO_ORDINARY.to_vec()),
            sellmeier_extraordinary: Some(BBO_EXTRAORDINARY.to_vec()),
        }
    }
}

impl CrystalParams {
    /// Indices implied by the Sellmeier coefficients, when both sets are given:
    /// pump as an extraordinary wave at the cut angle, down-converted light
    /// as an ordinary wave.
    pub fn sellmeier_indices(&self, pump_wavelength: f64, down_wavelength: f64) -> Option<(f64, f64)> {
        let o = self.sellmeier_ordinary.as_deref()?;
        let e = self.sellmeier_extraordinary.as_deref()?;
        let no_p = sellmeier_index(o, pump_wavelength)?;
        let ne_p = sellmeier_index(e, pump_wavelength)?;
        let n_d = sellmeier_index(o, down_wavelength)?;
        Some((extraordinary_index(no_p, ne_p, self.cut_angle_deg.to_radians()), n_d))
    }
}

/// Four-term Sellmeier index; `None` for malformed coefficients or a
/// wavelength at a pole.
pub fn sellmeier_index(coeffs: &[f64], wavelength: f64) -> Option<f64> {
    let [a, b, c, d] = <[f64; 4]>::try_from(coeffs).ok()?;
    let l2 = (wavelength * 1e6).powi(2);
    let n2 = a + b / (l2 - c) - d * l2;
    (n2 > 0.0 && n2.is_finite()).then(|| n2.sqrt())
}

/// Index of an extraordinary wave travelling at `theta` from the optic axis.
pub fn extraordinary_index(n_o: f64, n_e: f64, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    1.0 / (c * c / (n_o * n_o) + s * s / (n_e * n_e)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpParams {
    pub wavelength: f64,
    pub power: f64,
    /// 1/e² intensity radius along the horizontal axis.
    pub waist_horizontal: f64,
    pub waist_vertical: f64,
    pub pulse_duration: f64,
    /// Multiplies the width of the pump's angular spectrum; 1 is an ideal
    /// Gaussian beam.
    pub spectrum_widen_factor: f64,
}

impl Default for PumpParams {
    fn default() -> Self {
        Self {
            wavelength: 349e-9,
            power: 20e-6,
            waist_horizontal: 0.3e-3,
            waist_vertical: 0.21e-3,
            pulse_duration: 10e-12,
            spectrum_widen_factor: 1.0,
        }
    }
}

impl PumpParams {
    pub fn ellipticity(&self) -> f64 {
        self.waist_vertical / self.waist_horizontal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryParams {
    pub cone_half_angle_deg: f64,
    pub camera_distance: f64,
    pub center_wavelength_down: f64,
    pub filter_bandwidth: f64,
    pub radial_axis: RadialAxis,
    /// Signal and idler areas of the photocathode, in unbinned sensor pixels.
    pub signal_region: Rect,
    pub idler_region: Rect,
    /// Idler → conjugate signal position, in continuous sensor-pixel
    /// coordinates (pixel `i` spans `[i, i+1)`).
    pub conjugation: Affine2,
    /// Unlit border of the signal arc, as a fraction of the region size.
    pub illumination_margin: f64,
    /// Raised-cosine ramp width of the arc envelope, as a fraction of the
    /// region size.
    pub illumination_edge: f64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        Self {
            cone_half_angle_deg: 11.9,
            camera_distance: 0.385,
            center_wavelength_down: 710e-9,
            filter_bandwidth: 40e-9,
            radial_axis: RadialAxis::Horizontal,
            signal_region: Rect::new(0, 0, 512, 1024),
            idler_region: Rect::new(512, 0, 512, 1024),
            conjugation: Affine2 {
                linear: [[-1.0, 0.0], [0.0, 1.0]],
                offset: [1024.0, 0.0],
            },
            illumination_margin: 0.1,
            illumination_edge: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorParams {
    pub pixel_pitch: f64,
    pub binning_counting: usize,
    pub binning_intensity: usize,
    pub sensor_width: usize,
    pub sensor_height: usize,
    pub quantum_efficiency_signal: f64,
    pub quantum_efficiency_idler: f64,
    pub readout_noise_sigma: f64,
    pub threshold: f64,
    pub gate_ns: f64,
    /// Dark events per superpixel per frame (counting regime).
    pub dark_event_rate: f64,
    pub saturation: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            pixel_pitch: 13e-6,
            binning_counting: 8,
            binning_intensity: 4,
            sensor_width: 1024,
            sensor_height: 1024,
            quantum_efficiency_signal: 0.085,
            quantum_efficiency_idler: 0.072,
            readout_noise_sigma: 10.0,
            threshold: 50.0,
            gate_ns: 5.0,
            dark_event_rate: 1e-5,
            saturation: 65535.0,
        }
    }
}

impl DetectorParams {
    pub fn binning(&self, regime: Regime) -> usize {
        match regime {
            Regime::Counting => self.binning_counting,
            Regime::Intensity => self.binning_intensity,
        }
    }

    pub fn superpixel_pitch(&self, regime: Regime) -> f64 {
        self.pixel_pitch * self.binning(regime) as f64
    }
}

/// Ground truth of the synthetic twin-beam source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceParams {
    /// Mean emitted pairs per frame in the counting regime.
    pub mean_pairs_per_frame: f64,
    /// FWHM of the idler position spread around the conjugate of its twin.
    pub xc_jitter_fwhm_radial: f64,
    pub xc_jitter_fwhm_azimuthal: f64,
    /// Signal-idler field coherence of the speckle model.
    pub cross_strength: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            // 10.5 detected signal photons at 8.5 % efficiency.
            mean_pairs_per_frame: 123.5,
            xc_jitter_fwhm_radial: 490e-6,
            xc_jitter_fwhm_azimuthal: 710e-6,
            cross_strength: 1.0,
        }
    }
}

/// Gain dependence of the speckle regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainCurve {
    pub p_threshold: f64,
    pub p_sat: f64,
    pub ac_width_sat_radial: f64,
    pub ac_width_sat_azimuthal: f64,
    /// Mean intensity per superpixel at `reference_power`; scales as P².
    pub reference_power: f64,
    pub reference_mean_intensity: f64,
}

impl Default for GainCurve {
    fn default() -> Self {
        Self {
            p_threshold: 20e-3,
            p_sat: 23e-3,
            ac_width_sat_radial: 170e-6,
            ac_width_sat_azimuthal: 340e-6,
            reference_power: 50e-3,
            reference_mean_intensity: 20000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub regime: Regime,
    pub n_frames: usize,
    pub n_reference_points: usize,
    /// Side of the correlation window, in superpixels (odd).
    pub window: usize,
    pub rng_seed: u64,
    pub crystal: CrystalParams,
    pub pump: PumpParams,
    pub geometry: GeometryParams,
    pub detector: DetectorParams,
    pub source: SourceParams,
    pub gain: GainCurve,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Counting,
            n_frames: 1000,
            n_reference_points: 100,
            window: 33,
            rng_seed: 20_140_501,
            crystal: CrystalParams::default(),
            pump: PumpParams::default(),
            geometry: GeometryParams::default(),
            detector: DetectorParams::default(),
            source: SourceParams::default(),
            gain: GainCurve::default(),
        }
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn check(&mut self, ok: bool, field: &str, message: impl Into<String>) {
        if !ok {
            self.violations.push(Violation {
                field: field.to_string(),
                message: message.into(),
            });
        }
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            let text: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
            Err(Error::Config(text.join("; ")))
        }
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

fn fraction(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

/// Lists every violated invariant; an empty report means the config is usable.
pub fn validate(config: &ExperimentConfig) -> ValidationReport {
    let mut r = ValidationReport::default();
    let c = &config.crystal;
    r.check(positive(c.length), "crystal.length", "must be > 0");
    r.check(
        c.cut_angle_deg > 0.0 && c.cut_angle_deg < 90.0,
        "crystal.cut_angle_deg",
        "must lie in (0, 90)",
    );
    r.check(c.index_pump > 1.0 && c.index_pump.is_finite(), "crystal.index_pump", "must be > 1");
    r.check(c.index_down > 1.0 && c.index_down.is_finite(), "crystal.index_down", "must be > 1");
    for (name, coeffs) in [
        ("crystal.sellmeier_ordinary", &c.sellmeier_ordinary),
        ("crystal.sellmeier_extraordinary", &c.sellmeier_extraordinary),
    ] {
        if let Some(k) = coeffs {
            r.check(k.len() == 4, name, "expects 4 coefficients A, B, C, D");
        }
    }

    let p = &config.pump;
    r.check(positive(p.wavelength), "pump.wavelength", "must be > 0");
    r.check(positive(p.power), "pump.power", "must be > 0");
    r.check(positive(p.waist_horizontal), "pump.waist_horizontal", "must be > 0");
    r.check(positive(p.waist_vertical), "pump.waist_vertical", "must be > 0");
    r.check(positive(p.pulse_duration), "pump.pulse_duration", "must be > 0");
    r.check(
        p.spectrum_widen_factor >= 1.0 && p.spectrum_widen_factor.is_finite(),
        "pump.spectrum_widen_factor",
        "must be >= 1",
    );
    if positive(p.waist_horizontal) && positive(p.waist_vertical) {
        let e = p.ellipticity();
        r.check(e > 0.0 && e <= 1.5, "pump.waist_vertical", format!("ellipticity {e:.3} outside (0, 1.5]"));
    }

    let g = &config.geometry;
    r.check(
        (0.0..90.0).contains(&g.cone_half_angle_deg),
        "geometry.cone_half_angle_deg",
        "must lie in [0, 90)",
    );
    r.check(positive(g.camera_distance), "geometry.camera_distance", "must be > 0");
    r.check(positive(g.center_wavelength_down), "geometry.center_wavelength_down", "must be > 0");
    r.check(
        g.filter_bandwidth >= 0.0 && g.filter_bandwidth < 2.0 * g.center_wavelength_down,
        "geometry.filter_bandwidth",
        "must be >= 0 and below twice the centre wavelength",
    );
    for (name, v) in [
        ("geometry.illumination_margin", g.illumination_margin),
        ("geometry.illumination_edge", g.illumination_edge),
    ] {
        r.check((0.0..0.5).contains(&v), name, "must lie in [0, 0.5)");
    }
    r.check(
        g.illumination_margin + g.illumination_edge < 0.5,
        "geometry.illumination_edge",
        "margin + edge must leave a lit plateau (< 0.5)",
    );
    let det = g.conjugation.determinant();
    r.check(
        g.conjugation.inverse().is_some(),
        "geometry.conjugation",
        "linear part must be invertible",
    );
    r.check(
        (det.abs() - 1.0).abs() <= 0.1,
        "geometry.conjugation",
        format!("|det| = {:.4} must lie within 10% of 1", det.abs()),
    );

    let d = &config.detector;
    r.check(positive(d.pixel_pitch), "detector.pixel_pitch", "must be > 0");
    r.check(
        fraction(d.quantum_efficiency_signal),
        "detector.quantum_efficiency_signal",
        "must lie in [0, 1]",
    );
    r.check(
        fraction(d.quantum_efficiency_idler),
        "detector.quantum_efficiency_idler",
        "must lie in [0, 1]",
    );
    r.check(positive(d.threshold), "detector.threshold", "must be > 0");
    r.check(
        d.readout_noise_sigma >= 0.0 && d.readout_noise_sigma.is_finite(),
        "detector.readout_noise_sigma",
        "must be >= 0",
    );
    r.check(
        d.dark_event_rate >= 0.0 && d.dark_event_rate < 1.0,
        "detector.dark_event_rate",
        "must lie in [0, 1)",
    );
    r.check(positive(d.saturation), "detector.saturation", "must be > 0");
    r.check(positive(d.gate_ns), "detector.gate_ns", "must be > 0");
    r.check(d.sensor_width > 0 && d.sensor_height > 0, "detector.sensor_width", "sensor must be non-empty");
    for (name, b) in [
        ("detector.binning_counting", d.binning_counting),
        ("detector.binning_intensity", d.binning_intensity),
    ] {
        r.check(
            b > 0 && d.sensor_width % b.max(1) == 0 && d.sensor_height % b.max(1) == 0,
            name,
            "must divide the sensor size",
        );
    }

    // Regions: inside the sensor, aligned to both binnings, disjoint, and
    // the conjugation map must carry the idler area onto the signal area.
    let sensor = Rect::new(0, 0, d.sensor_width, d.sensor_height);
    for (name, rect) in [("geometry.signal_region", g.signal_region), ("geometry.idler_region", g.idler_region)] {
        let inside = rect.width > 0
            && rect.height > 0
            && rect.x + rect.width <= sensor.width
            && rect.y + rect.height <= sensor.height;
        r.check(inside, name, "must be a non-empty rectangle inside the sensor");
        let aligned = [d.binning_counting, d.binning_intensity]
            .iter()
            .all(|&b| b > 0 && [rect.x, rect.y, rect.width, rect.height].iter().all(|v| v % b == 0));
        r.check(aligned, name, "edges must fall on superpixel boundaries for every binning");
    }
    r.check(
        !g.signal_region.overlaps(&g.idler_region),
        "geometry.idler_region",
        "signal and idler regions overlap",
    );
    if g.conjugation.inverse().is_some() {
        let ir = g.idler_region;
        let sr = g.signal_region;
        let tol = 1e-6;
        let corners = [
            Point::new(ir.x as f64, ir.y as f64),
            Point::new((ir.x + ir.width) as f64, ir.y as f64),
            Point::new(ir.x as f64, (ir.y + ir.height) as f64),
            Point::new((ir.x + ir.width) as f64, (ir.y + ir.height) as f64),
        ];
        let fits = corners.iter().all(|&c| {
            let q = g.conjugation.apply(c);
            q.x >= sr.x as f64 - tol
                && q.y >= sr.y as f64 - tol
                && q.x <= (sr.x + sr.width) as f64 + tol
                && q.y <= (sr.y + sr.height) as f64 + tol
        });
        r.check(fits, "geometry.conjugation", "must map the idler region inside the signal region");
    }

    let s = &config.source;
    r.check(
        s.mean_pairs_per_frame >= 0.0 && s.mean_pairs_per_frame.is_finite(),
        "source.mean_pairs_per_frame",
        "must be >= 0",
    );
    r.check(s.xc_jitter_fwhm_radial >= 0.0, "source.xc_jitter_fwhm_radial", "must be >= 0");
    r.check(s.xc_jitter_fwhm_azimuthal >= 0.0, "source.xc_jitter_fwhm_azimuthal", "must be >= 0");
    r.check(fraction(s.cross_strength), "source.cross_strength", "must lie in [0, 1]");

    let k = &config.gain;
    r.check(positive(k.p_threshold), "gain.p_threshold", "must be > 0");
    r.check(k.p_threshold < k.p_sat, "gain.p_sat", "must exceed gain.p_threshold");
    r.check(positive(k.ac_width_sat_radial), "gain.ac_width_sat_radial", "must be > 0");
    r.check(positive(k.ac_width_sat_azimuthal), "gain.ac_width_sat_azimuthal", "must be > 0");
    r.check(positive(k.reference_power), "gain.reference_power", "must be > 0");
    r.check(positive(k.reference_mean_intensity), "gain.reference_mean_intensity", "must be > 0");

    r.check(config.n_frames >= 2, "n_frames", "must be >= 2");
    r.check(config.n_reference_points >= 1, "n_reference_points", "must be >= 1");
    r.check(
        config.window >= 3 && config.window % 2 == 1,
        "window",
        "must be odd and >= 3",
    );
    r.check(config.rng_seed <= i64::MAX as u64, "rng_seed", "must be below 2^63");
    r
}

/// Superpixel-level view of the sensor for one regime.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub regime: Regime,
    pub binning: usize,
    pub width: usize,
    pub height: usize,
    /// Superpixel edge length in meters.
    pub pitch: f64,
    pub signal: Rect,
    pub idler: Rect,
    /// Idler → signal map in superpixel coordinates (cell centres at integers).
    pub to_signal: Affine2,
    pub to_idler: Affine2,
    /// Same maps in continuous sensor-pixel coordinates.
    pub to_signal_px: Affine2,
    pub to_idler_px: Affine2,
    pub pixel_pitch: f64,
}

impl Layout {
    pub fn new(config: &ExperimentConfig, regime: Regime) -> Result<Self> {
        let d = &config.detector;
        let g = &config.geometry;
        let b = d.binning(regime);
        if b == 0 || d.sensor_width % b != 0 || d.sensor_height % b != 0 {
            return Err(Error::Config("binning must divide the sensor size".into()));
        }
        let shrink = |r: Rect| Rect::new(r.x / b, r.y / b, r.width / b, r.height / b);
        // Sensor pixel coordinate x relates to superpixel coordinate s by
        // x = b·(s + ½), so p_s' = A·p_s + (A·½ + t/b − ½).
        let a = g.conjugation.linear;
        let t = g.conjugation.offset;
        let bf = b as f64;
        let half_a = Point::new(0.5 * (a[0][0] + a[0][1]), 0.5 * (a[1][0] + a[1][1]));
        let to_signal = Affine2 {
            linear: a,
            offset: [half_a.x + t[0] / bf - 0.5, half_a.y + t[1] / bf - 0.5],
        };
        let inverse = |m: &Affine2| {
            m.inverse()
                .ok_or_else(|| Error::Config("conjugation map is singular".into()))
        };
        Ok(Self {
            regime,
            binning: b,
            width: d.sensor_width / b,
            height: d.sensor_height / b,
            pitch: d.pixel_pitch * bf,
            signal: shrink(g.signal_region),
            idler: shrink(g.idler_region),
            to_idler: inverse(&to_signal)?,
            to_signal,
            to_signal_px: g.conjugation,
            to_idler_px: inverse(&g.conjugation)?,
            pixel_pitch: d.pixel_pitch,
        })
    }

    pub fn in_region(region: &Rect, p: Point) -> bool {
        p.x >= region.x as f64 - 0.5
            && p.y >= region.y as f64 - 0.5
            && p.x < (region.x + region.width) as f64 - 0.5
            && p.y < (region.y + region.height) as f64 - 0.5
    }

    /// Nearest superpixel conjugate to an idler superpixel, if it falls in
    /// the signal region.
    pub fn conjugate_cell(&self, x: usize, y: usize) -> Option<(usize, usize)> {
        let q = self.to_signal.apply(Point::new(x as f64, y as f64));
        let (qx, qy) = (q.x.round(), q.y.round());
        if qx < 0.0 || qy < 0.0 {
            return None;
        }
        let (qx, qy) = (qx as usize, qy as usize);
        self.signal.contains(qx, qy).then_some((qx, qy))
    }
}

/// Signal-region superpixel paired with an idler-region superpixel by
/// transverse-momentum anti-correlation folded through the mirror geometry.
pub fn conjugate_of(point: Point, layout: &Layout) -> Result<Point> {
    if !Layout::in_region(&layout.idler, point) {
        return Err(Error::Domain(format!(
            "point ({}, {}) lies outside the idler region",
            point.x, point.y
        )));
    }
    Ok(layout.to_signal.apply(point))
}

const FILE_HEADER: &str = "\
# twinbeam experiment definition
# Flat key = value file; every key is required unless noted, unknown keys are
# rejected. Units: meters, watts, seconds, degrees, ADC counts.
";

fn key_comment(key: &str) -> Option<&'static str> {
    Some(match key {
        "crystal.index_pump" => "effective index, BBO extraordinary wave at the cut angle, 349 nm (Eimerl Sellmeier)",
        "crystal.index_down" => "effective index, BBO ordinary wave at 710 nm (Eimerl Sellmeier)",
        "pump.power" => "not reported for the counting frames; single-photon level, below the gain threshold",
        "pump.pulse_duration" => "not measured; picosecond-class pulse",
        "pump.waist_vertical" => "vertical waist about 70% of the horizontal one",
        "geometry.conjugation.linear" => "horizontal mirror about the sensor midline; idler → signal",
        "detector.readout_noise_sigma" => "not measured; chosen for the simulation",
        "detector.threshold" => "5 × readout_noise_sigma",
        "detector.dark_event_rate" => "not measured; chosen for the simulation",
        "detector.saturation" => "16-bit ADC full scale",
        "source.mean_pairs_per_frame" => "10.5 detected signal photons / 8.5% efficiency",
        "gain.p_sat" => "saturation scale chosen so the AC width plateaus from 30 mW",
        "gain.ac_width_sat_radial" => "not measured; below the predicted XC width",
        "gain.reference_mean_intensity" => "not measured; keeps 50 mW frames below saturation",
        _ => return None,
    })
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<(String, toml::Value)>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        leaf => out.push((prefix.to_string(), leaf.clone())),
    }
}

impl ExperimentConfig {
    /// Flat `section.key = value` text; parsing it back yields an equal config.
    ///
    /// Panics if `rng_seed` is 2^63 or more, which TOML cannot represent;
    /// [`validate`] rejects such seeds.
    pub fn to_config_string(&self) -> String {
        let value = toml::Value::try_from(self).expect("config serialises to a table");
        let mut entries = Vec::new();
        flatten("", &value, &mut entries);
        let mut out = String::from(FILE_HEADER);
        let mut section = String::new();
        for (key, value) in entries {
            let head = key.split('.').next().unwrap_or_default();
            if head != section && key.contains('.') {
                out.push('\n');
                section = head.to_string();
            }
            if let Some(comment) = key_comment(&key) {
                let _ = writeln!(out, "# {comment}");
            }
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn from_config_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; `TWINBEAM_SEED` is not consulted.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_config_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_config_string())?;
        Ok(())
    }

    /// Applies `TWINBEAM_SEED`, if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.rng_seed = raw
                .trim()
                .parse::<u64>()
                .ok()
                .filter(|&s| s <= i64::MAX as u64)
                .ok_or_else(|| Error::Config(format!("{SEED_ENV}=`{raw}` is not an integer in [0, 2^63)")))?;
        }
        Ok(())
    }

    pub fn layout(&self, regime: Regime) -> Result<Layout> {
        Layout::new(self, regime)
    }

    /// Copy with the acquisition regime switched.
    pub fn with_regime(&self, regime: Regime) -> Self {
        Self {
            regime,
            ..self.clone()
        }
    }

    /// Copy with the sensor shrunk to `size × size` pixels and the default
    /// left/right region split and midline mirror rebuilt for it.
    pub fn with_sensor(&self, size: usize) -> Self {
        let mut c = self.clone();
        c.detector.sensor_width = size;
        c.detector.sensor_height = size;
        let half = size / 2;
        c.geometry.signal_region = Rect::new(0, 0, half, size);
        c.geometry.idler_region = Rect::new(half, 0, size - half, size);
        c.geometry.conjugation = Affine2 {
            linear: [[-1.0, 0.0], [0.0, 1.0]],
            offset: [size as f64, 0.0],
        };
        c
    }
}
