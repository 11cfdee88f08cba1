//! iCCD camera model: hardware binning, quantum efficiency, readout noise,
//! thresholding, and the inverse step that turns a counting frame back into
//! photon events.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use crate::config::{ExperimentConfig, Layout, Regime};
use crate::error::{Error, Result};
use crate::grid::{Grid, Point, Rect};
use crate::synth::PairEvent;

/// One camera frame on the superpixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub grid: Grid<f64>,
    pub binning: usize,
    pub regime: Regime,
    pub frame_index: u64,
    pub seed: u64,
    pub signal: Rect,
    pub idler: Rect,
    /// Counting frames already reduced to fired/not-fired superpixels.
    pub thresholded: bool,
}

impl Frame {
    pub fn blank(layout: &Layout, frame_index: u64, seed: u64) -> Self {
        Self {
            grid: Grid::new(layout.width, layout.height),
            binning: layout.binning,
            regime: layout.regime,
            frame_index,
            seed,
            signal: layout.signal,
            idler: layout.idler,
            thresholded: false,
        }
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.grid.at(x, y)
    }
}

/// Superpixels that fired in one counting frame, split by region.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventList {
    pub frame_index: u64,
    pub signal: Vec<(usize, usize)>,
    pub idler: Vec<(usize, usize)>,
}

/// Superpixel hit by a photon at `pos` (meters), if on the sensor.
fn superpixel_of(pos: Point, layout: &Layout) -> Option<(usize, usize)> {
    let scale = 1.0 / (layout.pixel_pitch * layout.binning as f64);
    let (sx, sy) = ((pos.x * scale).floor(), (pos.y * scale).floor());
    if sx < 0.0 || sy < 0.0 || sx >= layout.width as f64 || sy >= layout.height as f64 {
        return None;
    }
    Some((sx as usize, sy as usize))
}

fn add_dark_events<R: Rng>(grid: &mut Grid<f64>, region: Rect, rate: f64, rng: &mut R) {
    let mean = rate * region.area() as f64;
    if mean <= 0.0 {
        return;
    }
    let n = Poisson::new(mean).expect("positive mean").sample(rng) as usize;
    for _ in 0..n {
        let x = region.x + rng.random_range(0..region.width);
        let y = region.y + rng.random_range(0..region.height);
        grid.set(x, y, 1.0);
    }
}

/// Photon-counting frame: each photon survives with its beam's efficiency,
/// lands on a superpixel of its own region, dark events are added, and the
/// result is the binary fired map left by thresholding above readout noise.
pub fn detect_counting<R: Rng>(
    pairs: &[PairEvent],
    config: &ExperimentConfig,
    layout: &Layout,
    frame_index: u64,
    rng: &mut R,
) -> Frame {
    let d = &config.detector;
    let mut frame = Frame::blank(layout, frame_index, config.rng_seed);
    frame.thresholded = true;
    for pair in pairs {
        let keep_s = rng.random::<f64>() < d.quantum_efficiency_signal;
        let keep_i = rng.random::<f64>() < d.quantum_efficiency_idler;
        if keep_s {
            if let Some((x, y)) = superpixel_of(pair.signal_pos, layout).filter(|&(x, y)| layout.signal.contains(x, y)) {
                frame.grid.set(x, y, 1.0);
            }
        }
        if keep_i {
            if let Some((x, y)) = superpixel_of(pair.idler_pos, layout).filter(|&(x, y)| layout.idler.contains(x, y)) {
                frame.grid.set(x, y, 1.0);
            }
        }
    }
    add_dark_events(&mut frame.grid, layout.signal, d.dark_event_rate, rng);
    add_dark_events(&mut frame.grid, layout.idler, d.dark_event_rate, rng);
    frame
}

/// Classical-intensity readout: efficiency-scaled intensity plus Gaussian
/// readout noise, clamped to `[0, saturation]`.
pub fn detect_intensity<R: Rng>(ideal: &Frame, config: &ExperimentConfig, rng: &mut R) -> Frame {
    let d = &config.detector;
    let mut out = ideal.clone();
    out.thresholded = false;
    let (w, h) = (ideal.width(), ideal.height());
    for y in 0..h {
        for x in 0..w {
            let eta = if ideal.signal.contains(x, y) {
                d.quantum_efficiency_signal
            } else if ideal.idler.contains(x, y) {
                d.quantum_efficiency_idler
            } else {
                0.0
            };
            let noise: f64 = StandardNormal.sample(rng);
            let v = eta * ideal.value(x, y) + d.readout_noise_sigma * noise;
            out.grid.set(x, y, v.clamp(0.0, d.saturation));
        }
    }
    out
}

/// Noise-only analog counting frame (no light), clamped at zero.
pub fn readout_noise_frame<R: Rng>(layout: &Layout, sigma: f64, frame_index: u64, seed: u64, rng: &mut R) -> Frame {
    let mut frame = Frame::blank(layout, frame_index, seed);
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        for v in frame.grid.data_mut() {
            *v = normal.sample(rng).max(0.0);
        }
    }
    frame
}

/// Superpixels above `threshold` in the signal and idler regions. Binary
/// (already thresholded) frames pass through unchanged.
pub fn extract_events(frame: &Frame, threshold: f64) -> Result<EventList> {
    if !(threshold > 0.0) {
        return Err(Error::Parameter(format!("threshold must be > 0, got {threshold}")));
    }
    let cut = if frame.thresholded { 0.5 } else { threshold };
    let collect = |region: Rect| {
        region
            .cells()
            .filter(|&(x, y)| frame.value(x, y) > cut)
            .collect::<Vec<_>>()
    };
    Ok(EventList {
        frame_index: frame.frame_index,
        signal: collect(frame.signal),
        idler: collect(frame.idler),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn setup() -> (ExperimentConfig, Layout) {
        let c = ExperimentConfig::default().with_sensor(256);
        let l = c.layout(Regime::Counting).unwrap();
        (c, l)
    }

    fn interior_pair(layout: &Layout) -> PairEvent {
        let sp = layout.pixel_pitch * layout.binning as f64;
        let s = layout.signal.center();
        let i = layout.idler.center();
        PairEvent {
            signal_pos: Point::new((s.x + 0.5) * sp, (s.y + 0.5) * sp),
            idler_pos: Point::new((i.x + 0.5) * sp, (i.y + 0.5) * sp),
            frame_index: 0,
        }
    }

    #[test]
    fn total_loss_gives_empty_frame() {
        let (mut c, l) = setup();
        c.detector.quantum_efficiency_signal = 0.0;
        c.detector.quantum_efficiency_idler = 0.0;
        c.detector.dark_event_rate = 0.0;
        let pairs = vec![interior_pair(&l); 50];
        let f = detect_counting(&pairs, &c, &l, 0, &mut stream(1, Purpose::Detector, 0));
        assert!(f.grid.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lossless_pair_gives_one_event_each() {
        let (mut c, l) = setup();
        c.detector.quantum_efficiency_signal = 1.0;
        c.detector.quantum_efficiency_idler = 1.0;
        c.detector.dark_event_rate = 0.0;
        let f = detect_counting(&[interior_pair(&l)], &c, &l, 0, &mut stream(1, Purpose::Detector, 0));
        let ev = extract_events(&f, c.detector.threshold).unwrap();
        assert_eq!(ev.signal.len(), 1);
        assert_eq!(ev.idler.len(), 1);
    }

    #[test]
    fn two_photons_on_one_superpixel_fire_once() {
        let (mut c, l) = setup();
        c.detector.quantum_efficiency_signal = 1.0;
        c.detector.quantum_efficiency_idler = 1.0;
        c.detector.dark_event_rate = 0.0;
        let p = interior_pair(&l);
        let f = detect_counting(&[p.clone(), p], &c, &l, 0, &mut stream(1, Purpose::Detector, 0));
        let ev = extract_events(&f, 1.0).unwrap();
        assert_eq!((ev.signal.len(), ev.idler.len()), (1, 1));
    }

    #[test]
    fn zero_input_zero_noise_is_zero() {
        let c0 = ExperimentConfig::default().with_sensor(64);
        let mut c = c0.with_regime(Regime::Intensity);
        c.detector.readout_noise_sigma = 0.0;
        let l = c.layout(Regime::Intensity).unwrap();
        let f = detect_intensity(&Frame::blank(&l, 0, 0), &c, &mut stream(2, Purpose::Detector, 0));
        assert!(f.grid.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturation_clamps_exactly() {
        let mut c = ExperimentConfig::default().with_sensor(64);
        c.detector.readout_noise_sigma = 3.0;
        c.detector.quantum_efficiency_signal = 1.0;
        let l = c.layout(Regime::Intensity).unwrap();
        let mut ideal = Frame::blank(&l, 0, 0);
        for (x, y) in l.signal.cells() {
            ideal.grid.set(x, y, 10.0 * c.detector.saturation);
        }
        let f = detect_intensity(&ideal, &c, &mut stream(2, Purpose::Detector, 0));
        for (x, y) in l.signal.cells() {
            assert_eq!(f.value(x, y), c.detector.saturation);
        }
    }

    #[test]
    fn intensity_readout_is_monotone_at_fixed_noise() {
        let c = ExperimentConfig::default().with_sensor(64);
        let l = c.layout(Regime::Intensity).unwrap();
        let mut lo = Frame::blank(&l, 0, 0);
        let mut hi = Frame::blank(&l, 0, 0);
        for (i, v) in lo.grid.data_mut().iter_mut().enumerate() {
            *v = (i % 17) as f64 * 40.0;
        }
        for (i, v) in hi.grid.data_mut().iter_mut().enumerate() {
            *v = (i % 17) as f64 * 40.0 + (i % 5) as f64;
        }
        let a = detect_intensity(&lo, &c, &mut stream(9, Purpose::Detector, 4));
        let b = detect_intensity(&hi, &c, &mut stream(9, Purpose::Detector, 4));
        assert!(a.grid.data().iter().zip(b.grid.data()).all(|(x, y)| x <= y));
    }

    #[test]
    fn nothing_above_threshold_gives_no_events() {
        let (_, l) = setup();
        let mut f = Frame::blank(&l, 3, 0);
        f.grid.data_mut().iter_mut().for_each(|v| *v = 10.0);
        let ev = extract_events(&f, 50.0).unwrap();
        assert!(ev.signal.is_empty() && ev.idler.is_empty());
        assert_eq!(ev.frame_index, 3);
    }

    #[test]
    fn single_hot_idler_superpixel() {
        let (_, l) = setup();
        let mut f = Frame::blank(&l, 0, 0);
        let (x, y) = (l.idler.x + 5, l.idler.y + 7);
        f.grid.set(x, y, 120.0);
        let ev = extract_events(&f, 50.0).unwrap();
        assert!(ev.signal.is_empty());
        assert_eq!(ev.idler, vec![(x, y)]);
    }

    #[test]
    fn events_stay_inside_regions() {
        let (_, l) = setup();
        let mut f = Frame::blank(&l, 0, 0);
        f.grid.data_mut().iter_mut().for_each(|v| *v = 100.0);
        let ev = extract_events(&f, 50.0).unwrap();
        assert!(ev.signal.iter().all(|&(x, y)| l.signal.contains(x, y)));
        assert!(ev.idler.iter().all(|&(x, y)| l.idler.contains(x, y)));
        assert_eq!(ev.signal.len() + ev.idler.len(), l.signal.area() + l.idler.area());
    }

    #[test]
    fn non_positive_threshold_is_rejected() {
        let (_, l) = setup();
        let f = Frame::blank(&l, 0, 0);
        assert!(matches!(extract_events(&f, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(extract_events(&f, -1.0), Err(Error::Parameter(_))));
    }
}
