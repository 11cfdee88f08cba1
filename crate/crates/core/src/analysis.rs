//! Correlation estimators and width extraction.
//!
//! Photon counting: displacement histogram of signal × idler event pairs
//! with the accidental background taken from neighbouring frames, plus
//! Klyshko-style efficiencies from photocount moments.
//!
//! Intensity: `Γ_ab(r₁, r₂) = ⟨ΔI_a(r₁) ΔI_b(r₂)⟩` over frames, evaluated in
//! windows around reference points in the idler region (AC) and around their
//! conjugates in the signal region (XC), recentred and averaged.
//!
//! Every accumulation runs in a fixed order, so results are bitwise
//! reproducible regardless of thread count.

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::config::{ExperimentConfig, Layout, RadialAxis, Regime, FWHM_PER_SIGMA};
use crate::detector::{EventList, Frame};
use crate::error::{Error, Result};
use crate::grid::{Fft2, Grid, Point, Rect};
use crate::pipeline::{CountingSimulator, IntensitySimulator};
use crate::pm::{predict_widths, PredictedWidths};
use crate::rng::{stream, Purpose};
use crate::synth::{gain_to_targets, make_speckle_model, SpeckleTargets};

/// Correlation estimate on a window of superpixel displacements, centre cell
/// at zero displacement (counting) or at the recentred peak (intensity).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub grid: Grid<f64>,
    /// Frames that went into the estimate.
    pub n_samples: usize,
    pub peak_location: (usize, usize),
    pub peak_value: f64,
    /// Independent pieces whose sum is proportional to `grid`: frame blocks
    /// (counting) or reference points (intensity). Resampled for error bars.
    pub components: Vec<Grid<f64>>,
}

impl CorrelationMap {
    pub fn new(grid: Grid<f64>, n_samples: usize, components: Vec<Grid<f64>>) -> Self {
        let (x, y, v) = grid.argmax();
        Self {
            grid,
            n_samples,
            peak_location: (x, y),
            peak_value: v,
            components,
        }
    }

    pub fn center(&self) -> (usize, usize) {
        (self.grid.width() / 2, self.grid.height() / 2)
    }
}

fn sum_grids<'a>(w: usize, h: usize, grids: impl Iterator<Item = &'a Grid<f64>>) -> Grid<f64> {
    let mut acc = Grid::new(w, h);
    for g in grids {
        acc.add_assign(g);
    }
    acc
}

// ---------------------------------------------------------------------------
// Photon counting

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountingOptions {
    /// Histogram edge length in superpixels (odd).
    pub window: usize,
    /// Frame blocks used for bootstrap error bars.
    pub blocks: usize,
}

impl Default for CountingOptions {
    fn default() -> Self {
        Self { window: 33, blocks: 20 }
    }
}

fn check_window(window: usize) -> Result<()> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::Parameter(format!("window must be odd and >= 3, got {window}")));
    }
    Ok(())
}

fn accumulate_pairs(hist: &mut Grid<f64>, signal: &[(usize, usize)], idler_conj: &[Point], weight: f64) {
    let w = hist.width();
    let half = (w / 2) as f64;
    for c in idler_conj {
        for &(sx, sy) in signal {
            let dx = (sx as f64 - c.x).round() + half;
            let dy = (sy as f64 - c.y).round() + half;
            if dx >= 0.0 && dy >= 0.0 && dx < w as f64 && dy < w as f64 {
                *hist.get_mut(dx as usize, dy as usize) += weight;
            }
        }
    }
}

/// Coincidence histogram of `d = signal − conjugate(idler)` with the
/// accidental background (signal of frame f against idler of frame f+1,
/// cyclic) subtracted.
pub fn counting_xc_histogram(events: &[EventList], layout: &Layout, opts: &CountingOptions) -> Result<CorrelationMap> {
    check_window(opts.window)?;
    let n = events.len();
    if n < 100 {
        return Err(Error::Parameter(format!("need at least 100 frames, got {n}")));
    }
    let total_s: usize = events.iter().map(|e| e.signal.len()).sum();
    let total_i: usize = events.iter().map(|e| e.idler.len()).sum();
    if total_s == 0 || total_i == 0 {
        return Err(Error::EmptyData("no signal or idler events".into()));
    }
    let conj: Vec<Vec<Point>> = events
        .iter()
        .map(|e| {
            e.idler
                .iter()
                .map(|&(x, y)| layout.to_signal.apply(Point::new(x as f64, y as f64)))
                .collect()
        })
        .collect();
    let blocks = opts.blocks.clamp(1, n);
    let w = opts.window;
    let components: Vec<Grid<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut g = Grid::new(w, w);
            for f in (b * n / blocks)..((b + 1) * n / blocks) {
                accumulate_pairs(&mut g, &events[f].signal, &conj[f], 1.0);
                accumulate_pairs(&mut g, &events[f].signal, &conj[(f + 1) % n], -1.0);
            }
            g
        })
        .collect();
    let grid = sum_grids(w, w, components.iter());
    Ok(CorrelationMap::new(grid, n, components))
}

/// First and second moments of the per-frame photocounts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotocountMoments {
    pub n_frames: usize,
    pub mean_signal: f64,
    pub mean_idler: f64,
    pub var_signal: f64,
    pub var_idler: f64,
    pub cross_covariance: f64,
    pub estimated_efficiency_signal: f64,
    pub estimated_efficiency_idler: f64,
    /// Standard errors of the efficiency estimates.
    pub efficiency_sigma_signal: f64,
    pub efficiency_sigma_idler: f64,
}

/// `η_i = cov(n_s, n_i)/⟨n_s⟩`, `η_s = cov(n_s, n_i)/⟨n_i⟩`; exact for a
/// Poissonian pair number with independent thinning. Estimates are clamped
/// to `[0, 1]`.
pub fn estimate_efficiencies(events: &[EventList]) -> Result<PhotocountMoments> {
    let n = events.len();
    if n < 1000 {
        return Err(Error::Parameter(format!("need at least 1000 frames, got {n}")));
    }
    let nf = n as f64;
    let counts: Vec<(f64, f64)> = events.iter().map(|e| (e.signal.len() as f64, e.idler.len() as f64)).collect();
    let ms = counts.iter().map(|c| c.0).sum::<f64>() / nf;
    let mi = counts.iter().map(|c| c.1).sum::<f64>() / nf;
    if ms == 0.0 || mi == 0.0 {
        return Err(Error::EmptyData("mean photocount is zero".into()));
    }
    let (mut vs, mut vi, mut cov) = (0.0, 0.0, 0.0);
    for &(s, i) in &counts {
        vs += (s - ms) * (s - ms);
        vi += (i - mi) * (i - mi);
        cov += (s - ms) * (i - mi);
    }
    let (vs, vi, cov) = (vs / (nf - 1.0), vi / (nf - 1.0), cov / (nf - 1.0));
    let mut spread = 0.0;
    for &(s, i) in &counts {
        let z = (s - ms) * (i - mi) - cov;
        spread += z * z;
    }
    let cov_sigma = (spread / (nf - 1.0) / nf).sqrt();
    Ok(PhotocountMoments {
        n_frames: n,
        mean_signal: ms,
        mean_idler: mi,
        var_signal: vs,
        var_idler: vi,
        cross_covariance: cov,
        estimated_efficiency_signal: (cov / mi).clamp(0.0, 1.0),
        estimated_efficiency_idler: (cov / ms).clamp(0.0, 1.0),
        efficiency_sigma_signal: cov_sigma / mi,
        efficiency_sigma_idler: cov_sigma / ms,
    })
}

/// Efficiencies from the background-subtracted coincidence count: the
/// fraction of signal (idler) detections whose twin was also detected.
pub fn coincidence_efficiencies(map: &CorrelationMap, events: &[EventList]) -> Result<(f64, f64)> {
    let ns: usize = events.iter().map(|e| e.signal.len()).sum();
    let ni: usize = events.iter().map(|e| e.idler.len()).sum();
    if ns == 0 || ni == 0 {
        return Err(Error::EmptyData("no events".into()));
    }
    let pairs = map.grid.sum();
    Ok((pairs / ni as f64, pairs / ns as f64))
}

// ---------------------------------------------------------------------------
// Intensity

/// Per-superpixel mean over the stack, summed in frame order.
pub fn stack_mean(stack: &[Frame]) -> Result<Grid<f64>> {
    let first = stack.first().ok_or_else(|| Error::EmptyData("empty frame stack".into()))?;
    let (w, h) = (first.width(), first.height());
    let mut acc = Grid::new(w, h);
    for f in stack {
        if (f.width(), f.height()) != (w, h) {
            return Err(Error::Format("frames differ in size".into()));
        }
        acc.add_assign(&f.grid);
    }
    acc.scale(1.0 / stack.len() as f64);
    Ok(acc)
}

/// `Γ(r₁, r₂) = (1/N) Σ_f ΔI_f(r₁) ΔI_f(r₂)`, frames summed in order.
pub fn pair_covariance(stack: &[Frame], mean: &Grid<f64>, r1: (usize, usize), r2: (usize, usize)) -> f64 {
    let (m1, m2) = (mean.at(r1.0, r1.1), mean.at(r2.0, r2.1));
    let mut acc = 0.0;
    for f in stack {
        acc += (f.value(r1.0, r1.1) - m1) * (f.value(r2.0, r2.1) - m2);
    }
    acc / stack.len() as f64
}

/// `Γ(reference, r)` for every `r` in `window`. Each cell equals
/// [`pair_covariance`] bit for bit.
pub fn window_covariance(stack: &[Frame], mean: &Grid<f64>, reference: (usize, usize), window: Rect) -> Grid<f64> {
    let (ww, wh) = (window.width, window.height);
    let mut acc = vec![0.0; ww * wh];
    let stride = mean.width();
    let m = mean.data();
    let mref = mean.at(reference.0, reference.1);
    for f in stack {
        let d = f.grid.data();
        let dr = f.value(reference.0, reference.1) - mref;
        for y in 0..wh {
            let row = (window.y + y) * stride + window.x;
            let out = &mut acc[y * ww..(y + 1) * ww];
            for x in 0..ww {
                out[x] += dr * (d[row + x] - m[row + x]);
            }
        }
    }
    let inv = 1.0 / stack.len() as f64;
    Grid::from_vec(ww, wh, acc.into_iter().map(|v| v * inv).collect())
}

/// How reference-point maps are aligned before averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recenter {
    /// One integer shift for all maps, taken from the maximum of their
    /// average. Unbiased when single maps are noise-dominated.
    Common,
    /// Each map shifted onto its own maximum.
    PerMap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityOptions {
    /// Output map edge length in superpixels (odd).
    pub window: usize,
    /// Extra cells searched around the nominal centre when recentring.
    pub recenter_margin: usize,
    pub recenter: Recenter,
}

impl Default for IntensityOptions {
    fn default() -> Self {
        Self {
            window: 33,
            recenter_margin: 3,
            recenter: Recenter::Common,
        }
    }
}

impl IntensityOptions {
    pub fn span(&self) -> usize {
        self.window + 2 * self.recenter_margin
    }
}

/// Square window of edge `span` centred on `c`, if it lies inside `region`.
fn centered_window(c: (usize, usize), span: usize, region: &Rect) -> Option<Rect> {
    let half = span / 2;
    if c.0 < half || c.1 < half {
        return None;
    }
    let r = Rect::new(c.0 - half, c.1 - half, span, span);
    let inside = r.x >= region.x
        && r.y >= region.y
        && r.x + r.width <= region.x + region.width
        && r.y + r.height <= region.y + region.height;
    inside.then_some(r)
}

/// Conjugate superpixel of an idler reference point, rounded.
fn conjugate_center(layout: &Layout, r: (usize, usize)) -> Option<(usize, usize)> {
    layout.conjugate_cell(r.0, r.1)
}

/// Reference points drawn uniformly from idler superpixels brighter than the
/// region median whose AC and XC windows (edge `span`) fit their regions.
pub fn select_reference_points(
    mean: &Grid<f64>,
    layout: &Layout,
    n: usize,
    span: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let mut values: Vec<f64> = layout.idler.cells().map(|(x, y)| mean.at(x, y)).collect();
    if values.is_empty() {
        return Err(Error::EmptyData("idler region is empty".into()));
    }
    values.sort_by(f64::total_cmp);
    let floor = values[values.len() / 2];
    let candidates: Vec<(usize, usize)> = layout
        .idler
        .cells()
        .filter(|&(x, y)| mean.at(x, y) > floor)
        .filter(|&r| centered_window(r, span, &layout.idler).is_some())
        .filter(|&r| {
            conjugate_center(layout, r)
                .and_then(|c| centered_window(c, span, &layout.signal))
                .is_some()
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::EmptyData("no idler superpixel qualifies as a reference point".into()));
    }
    if candidates.len() <= n {
        if candidates.len() < n {
            warn!("only {} reference points qualify, {} requested", candidates.len(), n);
        }
        return Ok(candidates);
    }
    let mut rng = stream(seed, Purpose::ReferencePoints, 0);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, candidates.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| candidates[i]).collect())
}

/// Maximum of a square map within `margin` cells of its centre; ties keep
/// the centre.
fn peak_near_center(ext: &Grid<f64>, margin: usize) -> (usize, usize) {
    let c = ext.width() / 2;
    let (mut bx, mut by, mut best) = (c, c, ext.at(c, c));
    for y in c - margin..=c + margin {
        for x in c - margin..=c + margin {
            if ext.at(x, y) > best {
                (bx, by, best) = (x, y, ext.at(x, y));
            }
        }
    }
    (bx, by)
}

/// Crops a map of edge `window + 2·margin` to `window` around `at`.
fn crop(ext: &Grid<f64>, at: (usize, usize), window: usize) -> Option<Grid<f64>> {
    let span = ext.width();
    let half = window / 2;
    let (bx, by) = at;
    if bx < half || by < half || bx + half >= span || by + half >= span {
        return None;
    }
    Some(Grid::from_fn(window, window, |x, y| ext.at(bx - half + x, by - half + y)))
}

/// Aligns and crops extended maps. The peak search stays inside the margin,
/// so `None` only arises for malformed spans.
fn align(ext: &[Grid<f64>], window: usize, mode: Recenter) -> Vec<Option<Grid<f64>>> {
    let span = ext[0].width();
    let margin = (span - window) / 2;
    match mode {
        Recenter::PerMap => ext.iter().map(|m| crop(m, peak_near_center(m, margin), window)).collect(),
        Recenter::Common => {
            let at = peak_near_center(&sum_grids(span, span, ext.iter()), margin);
            ext.iter().map(|m| crop(m, at, window)).collect()
        }
    }
}

/// AC and XC maps averaged over reference points. Points whose windows do
/// not fit their regions are skipped with a warning.
pub fn intensity_correlation_maps(
    stack: &[Frame],
    layout: &Layout,
    reference_points: &[(usize, usize)],
    opts: &IntensityOptions,
) -> Result<(CorrelationMap, CorrelationMap)> {
    check_window(opts.window)?;
    if stack.len() < 100 {
        return Err(Error::Parameter(format!("need at least 100 frames, got {}", stack.len())));
    }
    let mean = stack_mean(stack)?;
    let span = opts.span();
    let ext: Vec<Option<(Grid<f64>, Grid<f64>)>> = reference_points
        .par_iter()
        .map(|&r| {
            let Some(ac_win) = centered_window(r, span, &layout.idler) else {
                warn!("reference point {r:?}: AC window leaves the idler region, skipped");
                return None;
            };
            let Some(xc_win) = conjugate_center(layout, r).and_then(|c| centered_window(c, span, &layout.signal)) else {
                warn!("reference point {r:?}: XC window leaves the signal region, skipped");
                return None;
            };
            Some((
                window_covariance(stack, &mean, r, ac_win),
                window_covariance(stack, &mean, r, xc_win),
            ))
        })
        .collect();
    let (ac_ext, xc_ext): (Vec<_>, Vec<_>) = ext.into_iter().flatten().unzip();
    if ac_ext.is_empty() {
        return Err(Error::EmptyData("every reference point was skipped".into()));
    }
    let w = opts.window;
    let mut ac_parts = Vec::with_capacity(ac_ext.len());
    let mut xc_parts = Vec::with_capacity(xc_ext.len());
    for (a, x) in align(&ac_ext, w, opts.recenter)
        .into_iter()
        .zip(align(&xc_ext, w, opts.recenter))
    {
        match (a, x) {
            (Some(a), Some(x)) => {
                ac_parts.push(a);
                xc_parts.push(x);
            }
            _ => warn!("reference map peak outside the recentring margin, skipped"),
        }
    }
    if ac_parts.is_empty() {
        return Err(Error::EmptyData("every reference point was skipped".into()));
    }
    let inv = 1.0 / ac_parts.len() as f64;
    let mut ac = sum_grids(w, w, ac_parts.iter());
    let mut xc = sum_grids(w, w, xc_parts.iter());
    ac.scale(inv);
    xc.scale(inv);
    Ok((
        CorrelationMap::new(ac, stack.len(), ac_parts),
        CorrelationMap::new(xc, stack.len(), xc_parts),
    ))
}

// ---------------------------------------------------------------------------
// Spatial correlation

/// `C(dx, dy) = Σ a(x, y)·b(x+dx, y+dy)` for `|dx| < w`, `|dy| < h`; the
/// zero lag sits at `(w−1, h−1)`.
pub fn cross_correlation_direct(a: &Grid<f64>, b: &Grid<f64>) -> Grid<f64> {
    let (w, h) = (a.width(), a.height());
    assert_eq!((w, h), (b.width(), b.height()));
    Grid::from_fn(2 * w - 1, 2 * h - 1, |ox, oy| {
        let dx = ox as isize - (w as isize - 1);
        let dy = oy as isize - (h as isize - 1);
        let mut acc = 0.0;
        for y in 0..h as isize {
            let yb = y + dy;
            if yb < 0 || yb >= h as isize {
                continue;
            }
            for x in 0..w as isize {
                let xb = x + dx;
                if xb < 0 || xb >= w as isize {
                    continue;
                }
                acc += a.at(x as usize, y as usize) * b.at(xb as usize, yb as usize);
            }
        }
        acc
    })
}

/// Same as [`cross_correlation_direct`] through zero-padded FFTs.
pub fn cross_correlation_fft(a: &Grid<f64>, b: &Grid<f64>) -> Grid<f64> {
    let (w, h) = (a.width(), a.height());
    assert_eq!((w, h), (b.width(), b.height()));
    let (nx, ny) = (2 * w, 2 * h);
    let fft = Fft2::new(nx, ny);
    let pad = |g: &Grid<f64>| {
        let mut buf = vec![Complex64::default(); nx * ny];
        for y in 0..h {
            for x in 0..w {
                buf[y * nx + x] = Complex64::new(g.at(x, y), 0.0);
            }
        }
        buf
    };
    let mut fa = pad(a);
    let mut fb = pad(b);
    fft.forward(&mut fa);
    fft.forward(&mut fb);
    for (p, q) in fa.iter_mut().zip(&fb) {
        *p = p.conj() * q;
    }
    fft.inverse(&mut fa);
    let norm = 1.0 / (nx * ny) as f64;
    Grid::from_fn(2 * w - 1, 2 * h - 1, |ox, oy| {
        let dx = ox as isize - (w as isize - 1);
        let dy = oy as isize - (h as isize - 1);
        let kx = dx.rem_euclid(nx as isize) as usize;
        let ky = dy.rem_euclid(ny as isize) as usize;
        fa[ky * nx + kx].re * norm
    })
}

/// Spatial autocovariance of one image over lags `|d| ≤ max_lag`, each lag
/// normalised by its number of overlapping pairs. Zero lag at the centre.
pub fn spatial_autocovariance(image: &Grid<f64>, max_lag: usize) -> Grid<f64> {
    let (w, h) = (image.width(), image.height());
    assert!(max_lag < w && max_lag < h);
    let m = image.sum() / (w * h) as f64;
    let centered = image.map(|v| v - m);
    let full = cross_correlation_fft(&centered, &centered);
    let span = 2 * max_lag + 1;
    Grid::from_fn(span, span, |x, y| {
        let dx = x as isize - max_lag as isize;
        let dy = y as isize - max_lag as isize;
        let pairs = (w - dx.unsigned_abs()) * (h - dy.unsigned_abs());
        full.at((w as isize - 1 + dx) as usize, (h as isize - 1 + dy) as usize) / pairs as f64
    })
}

// ---------------------------------------------------------------------------
// Widths

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WidthMethod {
    Interpolated,
    GaussianFit,
}

impl std::fmt::Display for WidthMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WidthMethod::Interpolated => "interpolated",
            WidthMethod::GaussianFit => "gaussian-fit",
        })
    }
}

/// FWHM along one axis, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisWidth {
    pub fwhm: f64,
    pub uncertainty: f64,
    /// Narrower than one superpixel; `fwhm` is the one-superpixel bound.
    pub at_floor: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthEstimate {
    pub radial: AxisWidth,
    pub azimuthal: AxisWidth,
    pub method: WidthMethod,
    /// Gaussian-fit widths (radial, azimuthal) when they differ from the
    /// interpolated ones by more than 10%.
    pub alternative: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FwhmOptions {
    pub method: WidthMethod,
    pub bootstrap_resamples: usize,
    pub seed: u64,
    /// Report widths below resolution as the one-superpixel floor instead
    /// of failing.
    pub allow_floor: bool,
}

impl Default for FwhmOptions {
    fn default() -> Self {
        Self {
            method: WidthMethod::Interpolated,
            bootstrap_resamples: 200,
            seed: 0,
            allow_floor: false,
        }
    }
}

/// Full width at half maximum of a sampled profile around its sample
/// `peak`, by linear interpolation of the crossings. In samples.
pub fn half_max_width(profile: &[f64], peak: usize) -> Result<f64> {
    let n = profile.len();
    if peak == 0 || peak + 1 >= n {
        return Err(Error::Range("peak at the end of the profile".into()));
    }
    let top = profile[peak];
    if !(top > 0.0) {
        return Err(Error::Range("peak is not positive".into()));
    }
    let half = 0.5 * top;
    if profile[peak - 1] < half && profile[peak + 1] < half {
        return Err(Error::BelowResolution);
    }
    let mut i = peak;
    while i > 0 && profile[i - 1] >= half {
        i -= 1;
    }
    if i == 0 {
        return Err(Error::Range("no half-maximum crossing before the peak".into()));
    }
    let left = (i - 1) as f64 + (half - profile[i - 1]) / (profile[i] - profile[i - 1]);
    let mut j = peak;
    while j + 1 < n && profile[j + 1] >= half {
        j += 1;
    }
    if j + 1 == n {
        return Err(Error::Range("no half-maximum crossing after the peak".into()));
    }
    let right = j as f64 + (profile[j] - half) / (profile[j] - profile[j + 1]);
    Ok(right - left)
}

/// FWHM of a Gaussian fitted to the log of the profile core (samples above
/// 10% of the peak, weighted by value squared). In samples.
pub fn gaussian_fit_width(profile: &[f64], peak: usize) -> Result<f64> {
    let top = profile[peak];
    if !(top > 0.0) {
        return Err(Error::Range("peak is not positive".into()));
    }
    let floor = 0.1 * top;
    let mut lo = peak;
    while lo > 0 && profile[lo - 1] > floor {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < profile.len() && profile[hi + 1] > floor {
        hi += 1;
    }
    if hi - lo < 2 {
        return Err(Error::BelowResolution);
    }
    // Weighted least squares for ln y = a + b t + c t², t = i − peak.
    let mut s = [[0.0; 3]; 3];
    let mut r = [0.0; 3];
    for i in lo..=hi {
        let t = i as f64 - peak as f64;
        let y = profile[i];
        let wgt = y * y;
        let basis = [1.0, t, t * t];
        for a in 0..3 {
            r[a] += wgt * basis[a] * y.ln();
            for b in 0..3 {
                s[a][b] += wgt * basis[a] * basis[b];
            }
        }
    }
    let c = solve3(s, r).ok_or_else(|| Error::Range("singular Gaussian fit".into()))?[2];
    if !(c < 0.0) {
        return Err(Error::Range("fitted profile is not peaked".into()));
    }
    Ok((-0.5 / c).sqrt() * FWHM_PER_SIGMA)
}

fn solve3(m: [[f64; 3]; 3], r: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut mk = m;
        for row in 0..3 {
            mk[row][k] = r[row];
        }
        *o = det(&mk) / d;
    }
    Some(out)
}

fn profile_width(profile: &[f64], peak: usize, method: WidthMethod) -> Result<f64> {
    match method {
        WidthMethod::Interpolated => half_max_width(profile, peak),
        WidthMethod::GaussianFit => gaussian_fit_width(profile, peak),
    }
}

/// Widths in cells along sensor x and y through the map maximum.
fn map_widths(grid: &Grid<f64>, method: WidthMethod) -> Result<[Result<f64>; 2]> {
    let (px, py, _) = grid.argmax();
    let (w, h) = (grid.width(), grid.height());
    if px == 0 || py == 0 || px + 1 == w || py + 1 == h {
        return Err(Error::Boundary { x: px, y: py });
    }
    let row: Vec<f64> = (0..w).map(|x| grid.at(x, py)).collect();
    let col: Vec<f64> = (0..h).map(|y| grid.at(px, y)).collect();
    Ok([profile_width(&row, px, method), profile_width(&col, py, method)])
}

fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Radial and azimuthal FWHM of a correlation peak. `pitch` converts cells
/// to meters. Error bars come from resampling the map's components.
pub fn extract_fwhm(map: &CorrelationMap, pitch: f64, radial_axis: RadialAxis, opts: &FwhmOptions) -> Result<WidthEstimate> {
    let widths = map_widths(&map.grid, opts.method)?;
    let mut axes = [AxisWidth {
        fwhm: 0.0,
        uncertainty: 0.0,
        at_floor: false,
    }; 2];
    for (a, w) in widths.into_iter().enumerate() {
        axes[a] = match w {
            Ok(v) => AxisWidth {
                fwhm: v * pitch,
                uncertainty: 0.0,
                at_floor: false,
            },
            Err(Error::BelowResolution) if opts.allow_floor => AxisWidth {
                fwhm: pitch,
                uncertainty: 0.0,
                at_floor: true,
            },
            Err(e) => return Err(e),
        };
    }

    let k = map.components.len();
    if k >= 2 && opts.bootstrap_resamples > 0 {
        let mut rng = stream(opts.seed, Purpose::Bootstrap, 0);
        let mut samples: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        let (w, h) = (map.grid.width(), map.grid.height());
        for _ in 0..opts.bootstrap_resamples {
            let mut acc = Grid::new(w, h);
            for _ in 0..k {
                acc.add_assign(&map.components[rng.random_range(0..k)]);
            }
            if let Ok(ws) = map_widths(&acc, opts.method) {
                for (a, v) in ws.into_iter().enumerate() {
                    if let Ok(v) = v {
                        samples[a].push(v * pitch);
                    }
                }
            }
        }
        for a in 0..2 {
            if !axes[a].at_floor {
                axes[a].uncertainty = sample_sd(&samples[a]);
            }
        }
    }

    let other = match opts.method {
        WidthMethod::Interpolated => WidthMethod::GaussianFit,
        WidthMethod::GaussianFit => WidthMethod::Interpolated,
    };
    let alternative = match map_widths(&map.grid, other)? {
        [Ok(x), Ok(y)] => {
            let alt = [x * pitch, y * pitch];
            let differs = (0..2).any(|a| !axes[a].at_floor && (alt[a] - axes[a].fwhm).abs() > 0.1 * axes[a].fwhm);
            differs.then_some(alt)
        }
        _ => None,
    };

    let ([xa, ya], alt) = (axes, alternative);
    let (radial, azimuthal, alternative) = match radial_axis {
        RadialAxis::Horizontal => (xa, ya, alt),
        RadialAxis::Vertical => (ya, xa, alt.map(|[x, y]| [y, x])),
    };
    Ok(WidthEstimate {
        radial,
        azimuthal,
        method: opts.method,
        alternative,
    })
}

// ---------------------------------------------------------------------------
// End-to-end measurements and sweeps

/// Counting pipeline on a simulated stack.
#[derive(Debug, Clone)]
pub struct CountingMeasurement {
    pub map: CorrelationMap,
    pub moments: PhotocountMoments,
    pub width: WidthEstimate,
    pub coincidence_efficiencies: (f64, f64),
}

pub fn measure_counting(events: &[EventList], layout: &Layout, config: &ExperimentConfig, opts: &CountingOptions) -> Result<CountingMeasurement> {
    let map = counting_xc_histogram(events, layout, opts)?;
    let moments = estimate_efficiencies(events)?;
    let fw = FwhmOptions {
        seed: config.rng_seed,
        ..FwhmOptions::default()
    };
    let width = extract_fwhm(&map, layout.pitch, config.geometry.radial_axis, &fw)?;
    let coincidence_efficiencies = coincidence_efficiencies(&map, events)?;
    Ok(CountingMeasurement {
        map,
        moments,
        width,
        coincidence_efficiencies,
    })
}

/// Simulates `n_frames` counting frames and runs the counting pipeline.
pub fn simulate_and_measure_counting(config: &ExperimentConfig, n_frames: usize, opts: &CountingOptions) -> Result<CountingMeasurement> {
    let sim = CountingSimulator::new(config)?;
    let events = sim.event_stack(n_frames);
    measure_counting(&events, sim.layout(), config, opts)
}

/// Intensity pipeline result.
#[derive(Debug, Clone)]
pub struct IntensityMeasurement {
    pub ac: WidthEstimate,
    pub xc: WidthEstimate,
    pub ac_map: CorrelationMap,
    pub xc_map: CorrelationMap,
    pub reference_points: Vec<(usize, usize)>,
}

pub fn measure_intensity(stack: &[Frame], layout: &Layout, config: &ExperimentConfig, opts: &IntensityOptions) -> Result<IntensityMeasurement> {
    let mean = stack_mean(stack)?;
    let refs = select_reference_points(&mean, layout, config.n_reference_points, opts.span(), config.rng_seed)?;
    let (ac_map, xc_map) = intensity_correlation_maps(stack, layout, &refs, opts)?;
    let fw = FwhmOptions {
        seed: config.rng_seed,
        allow_floor: true,
        ..FwhmOptions::default()
    };
    let axis = config.geometry.radial_axis;
    Ok(IntensityMeasurement {
        ac: extract_fwhm(&ac_map, layout.pitch, axis, &fw)?,
        xc: extract_fwhm(&xc_map, layout.pitch, axis, &fw)?,
        ac_map,
        xc_map,
        reference_points: refs,
    })
}

/// Settings shared by both sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub n_frames: usize,
    pub intensity: IntensityOptions,
    pub widen_factor: f64,
}

impl SweepOptions {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self {
            n_frames: config.n_frames,
            intensity: IntensityOptions {
                window: config.window,
                ..IntensityOptions::default()
            },
            widen_factor: config.pump.spectrum_widen_factor,
        }
    }
}

fn run_intensity_point(config: &ExperimentConfig, targets: &SpeckleTargets, opts: &SweepOptions) -> Result<IntensityMeasurement> {
    let config = config.with_regime(Regime::Intensity);
    let model = make_speckle_model(
        targets.ac_fwhm,
        targets.xc_fwhm,
        config.source.cross_strength,
        targets.mean_intensity,
    )?;
    let sim = IntensitySimulator::new(&config, &model)?;
    let stack = sim.stack(opts.n_frames);
    measure_intensity(&stack, sim.layout(), &config, &opts.intensity)
}

#[derive(Debug, Clone)]
pub struct PowerRow {
    pub power: f64,
    pub targets: SpeckleTargets,
    pub ac: WidthEstimate,
    pub xc: WidthEstimate,
}

/// AC and XC widths against pump power. The XC ground truth is the
/// phase-matching prediction; the AC width follows the gain curve.
pub fn width_vs_power_sweep(config: &ExperimentConfig, powers: &[f64], opts: &SweepOptions) -> Result<Vec<PowerRow>> {
    if powers.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::Parameter("powers must be positive".into()));
    }
    let pm = predict_widths(config, opts.widen_factor)?;
    let floor = config.detector.superpixel_pitch(Regime::Intensity);
    powers
        .iter()
        .map(|&p| {
            let targets = gain_to_targets(p, &config.gain, &pm, floor)?;
            let m = run_intensity_point(config, &targets, opts)?;
            Ok(PowerRow {
                power: p,
                targets,
                ac: m.ac,
                xc: m.xc,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct WaistRow {
    pub waist_horizontal: f64,
    pub waist_vertical: f64,
    pub predicted: PredictedWidths,
    pub ac: WidthEstimate,
    pub xc: WidthEstimate,
}

/// AC and XC widths against the horizontal pump waist at the gain curve's
/// reference power, vertical waist scaled by the configured ellipticity.
/// AC targets scale with the predicted widths relative to the configured
/// waist.
pub fn width_vs_waist_sweep(config: &ExperimentConfig, waists: &[f64], opts: &SweepOptions) -> Result<Vec<WaistRow>> {
    if waists.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::Parameter("waists must be positive".into()));
    }
    let reference = predict_widths(config, opts.widen_factor)?;
    let ellipticity = config.pump.ellipticity();
    let floor = config.detector.superpixel_pitch(Regime::Intensity);
    waists
        .iter()
        .map(|&w| {
            let mut c = config.clone();
            c.pump.waist_horizontal = w;
            c.pump.waist_vertical = w * ellipticity;
            let predicted = predict_widths(&c, opts.widen_factor)?;
            let mut targets = gain_to_targets(config.gain.reference_power, &config.gain, &predicted, floor)?;
            targets.ac_fwhm[0] = (targets.ac_fwhm[0] * predicted.radial_fwhm / reference.radial_fwhm).max(floor);
            targets.ac_fwhm[1] = (targets.ac_fwhm[1] * predicted.azimuthal_fwhm / reference.azimuthal_fwhm).max(floor);
            let m = run_intensity_point(&c, &targets, opts)?;
            Ok(WaistRow {
                waist_horizontal: w,
                waist_vertical: c.pump.waist_vertical,
                predicted,
                ac: m.ac,
                xc: m.xc,
            })
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn power_law_exponent(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Parameter("need at least two matching points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("power-law fit needs positive values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(sxy / sxx)
}
