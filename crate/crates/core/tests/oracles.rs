//! Independent reference values: high-precision arithmetic, closed forms and
//! Monte Carlo moments checked against analytic expectations.

use statrs::distribution::{ContinuousCDF, Normal};

use twinbeam_core::analysis::{
    extract_fwhm, pair_covariance, spatial_autocovariance, window_covariance, CorrelationMap, FwhmOptions,
};
use twinbeam_core::config::{ExperimentConfig, RadialAxis, Regime, FWHM_PER_SIGMA};
use twinbeam_core::detector::{detect_counting, detect_intensity, extract_events, readout_noise_frame, Frame};
use twinbeam_core::grid::{Grid, Point, Rect};
use twinbeam_core::pipeline::CountingSimulator;
use twinbeam_core::pm::{phase_mismatch_z, PhaseMatching, Transverse};
use twinbeam_core::rng::{stream, Purpose};
use twinbeam_core::synth::{make_speckle_model, PairSource, SpeckleRenderer};

/// 50-digit evaluation by `oracles/phase_mismatch_mpmath.py`.
const CONE_Q: f64 = 1_856_187.833_757_935_2;
const DELTA_KZ: f64 = 62.474_126_449_048_783;

#[test]
fn phase_mismatch_matches_high_precision_reference() {
    let c = ExperimentConfig::default();
    let pm = PhaseMatching::new(&c).unwrap();
    assert!((pm.q_cone - CONE_Q).abs() < 1e-6, "{}", pm.q_cone);
    let q0 = pm.q_cone;
    let dkz = phase_mismatch_z(Transverse::new(q0 + 2000.0, 500.0), Transverse::new(-q0 + 1500.0, -300.0), &c).unwrap();
    assert!((dkz - DELTA_KZ).abs() < 1e-6, "{dkz}");
}

#[test]
fn sampled_gaussian_fwhm_is_analytic() {
    let g = Grid::from_fn(41, 41, |x, y| {
        let (dx, dy) = (x as f64 - 20.0, y as f64 - 20.0);
        (-(dx * dx + dy * dy) / 18.0).exp()
    });
    let e = extract_fwhm(
        &CorrelationMap::new(g, 100, Vec::new()),
        1.0,
        RadialAxis::Horizontal,
        &FwhmOptions::default(),
    )
    .unwrap();
    assert!((e.radial.fwhm / 7.064 - 1.0).abs() < 0.01);
    assert!((e.azimuthal.fwhm / 7.064 - 1.0).abs() < 0.01);
}

#[test]
fn pair_jitter_reproduces_configured_widths() {
    let c = ExperimentConfig::default();
    let sigma = [490e-6 / FWHM_PER_SIGMA, 710e-6 / FWHM_PER_SIGMA];
    let source = PairSource::new(&c, 1000.0, sigma).unwrap();
    let conj = c.geometry.conjugation;
    let pp = c.detector.pixel_pitch;
    let (mut n, mut s1, mut s2) = (0usize, [0.0; 2], [0.0; 2]);
    let mut f = 0;
    while n < 1_000_000 {
        for p in source.sample(f, &mut stream(5, Purpose::PairSource, f)) {
            let back = conj.apply(Point::new(p.idler_pos.x / pp, p.idler_pos.y / pp));
            // Mirror flips the sign of the horizontal offset; widths are unaffected.
            let d = [back.x * pp - p.signal_pos.x, back.y * pp - p.signal_pos.y];
            for a in 0..2 {
                s1[a] += d[a];
                s2[a] += d[a] * d[a];
            }
            n += 1;
        }
        f += 1;
    }
    for a in 0..2 {
        let m = s1[a] / n as f64;
        let sd = (s2[a] / n as f64 - m * m).sqrt();
        let fwhm = sd * FWHM_PER_SIGMA;
        let target = [490e-6, 710e-6][a];
        assert!((fwhm / target - 1.0).abs() < 0.03, "axis {a}: {fwhm}");
    }
}

#[test]
fn readout_moments_match_constant_input() {
    let mut c = ExperimentConfig::default().with_regime(Regime::Intensity);
    c.detector.readout_noise_sigma = 12.0;
    let l = c.layout(Regime::Intensity).unwrap();
    let mut ideal = Frame::blank(&l, 0, 0);
    let level = 3000.0;
    ideal.grid.data_mut().iter_mut().for_each(|v| *v = level);
    let out = detect_intensity(&ideal, &c, &mut stream(8, Purpose::Detector, 0));
    let values: Vec<f64> = l.signal.cells().map(|(x, y)| out.value(x, y)).collect();
    assert!(values.len() >= 10_000);
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt();
    let expect = c.detector.quantum_efficiency_signal * level;
    assert!((m / expect - 1.0).abs() < 0.02, "{m}");
    assert!((sd / 12.0 - 1.0).abs() < 0.02, "{sd}");
}

fn false_event_rate(sigma: f64, threshold: f64, superpixels: usize, seed: u64) -> f64 {
    let c = ExperimentConfig::default();
    let l = c.layout(Regime::Counting).unwrap();
    let per_frame = l.width * l.height;
    let frames = superpixels.div_ceil(per_frame);
    let mut events = 0usize;
    for f in 0..frames as u64 {
        let frame = readout_noise_frame(&l, sigma, f, seed, &mut stream(seed, Purpose::Detector, f));
        let ev = extract_events(&frame, threshold).unwrap();
        events += ev.signal.len() + ev.idler.len();
    }
    events as f64 / (frames * per_frame) as f64
}

fn upper_tail(k: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().sf(k)
}

#[test]
fn false_events_follow_gaussian_tail_at_three_sigma() {
    let rate = false_event_rate(10.0, 30.0, 1_000_000, 21);
    let ratio = rate / upper_tail(3.0);
    assert!((1.0 / 1.5..1.5).contains(&ratio), "{ratio}");
}

/// At the default five-sigma threshold the tail probability is 2.9e-7, so
/// the rate needs about 1e8 superpixels to be measured.
#[test]
fn false_events_follow_gaussian_tail_at_five_sigma() {
    let rate = false_event_rate(10.0, 50.0, 100_000_000, 22);
    let ratio = rate / upper_tail(5.0);
    assert!((1.0 / 1.5..1.5).contains(&ratio), "{ratio}");
}

#[test]
fn efficiency_ratio_of_detected_events() {
    let c = ExperimentConfig::default();
    let sim = CountingSimulator::new(&c).unwrap();
    let ev = sim.event_stack(10_000);
    let ns: usize = ev.iter().map(|e| e.signal.len()).sum();
    let ni: usize = ev.iter().map(|e| e.idler.len()).sum();
    let ratio = ni as f64 / ns as f64;
    let expect = c.detector.quantum_efficiency_idler / c.detector.quantum_efficiency_signal;
    assert!((ratio / expect - 1.0).abs() < 0.02, "{ratio}");
    // Detected rates at the configured source strength.
    let (ms, mi) = (ns as f64 / 1e4, ni as f64 / 1e4);
    assert!((ms / 10.5 - 1.0).abs() < 0.05, "{ms}");
    assert!((mi / 8.9 - 1.0).abs() < 0.05, "{mi}");
}

#[test]
fn doubling_pair_rate_doubles_event_counts() {
    let mut c = ExperimentConfig::default();
    c.detector.dark_event_rate = 0.0;
    let l = c.layout(Regime::Counting).unwrap();
    let count = |mean: f64| {
        let src = PairSource::new(&c, mean, [2e-4, 3e-4]).unwrap();
        let mut total = 0usize;
        for f in 0..50_000u64 {
            let pairs = src.sample(f, &mut stream(31, Purpose::PairSource, f));
            let frame = detect_counting(&pairs, &c, &l, f, &mut stream(31, Purpose::Detector, f));
            let e = extract_events(&frame, 1.0).unwrap();
            total += e.signal.len() + e.idler.len();
        }
        total as f64
    };
    let (a, b) = (count(1.0), count(2.0));
    let sigma = (b + 4.0 * a).sqrt();
    assert!((b - 2.0 * a).abs() < 3.0 * sigma, "{a} {b}");
}

fn plateau(config: &ExperimentConfig) -> Rect {
    let l = config.layout(Regime::Intensity).unwrap();
    let s = l.signal;
    // Envelope margin plus edge is 20% per side.
    let (mx, my) = ((s.width as f64 * 0.22).ceil() as usize, (s.height as f64 * 0.22).ceil() as usize);
    Rect::new(s.x + mx, s.y + my, s.width - 2 * mx, s.height - 2 * my)
}

fn ks_exponential(samples: &mut [f64], mean: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let cdf = 1.0 - (-x / mean).exp();
        d = d.max((i as f64 + 1.0) / n - cdf).max(cdf - i as f64 / n);
    }
    d
}

#[test]
fn single_superpixel_intensity_is_thermal() {
    let c = ExperimentConfig::default().with_sensor(256).with_regime(Regime::Intensity);
    // Speckle much wider than a superpixel, so binning barely averages.
    let m = make_speckle_model([600e-6, 600e-6], [700e-6, 700e-6], 1.0, 500.0).unwrap();
    let r = SpeckleRenderer::new(&m, &c).unwrap();
    let p = plateau(&c).center();
    let (x, y) = (p.x as usize, p.y as usize);
    let mut samples: Vec<f64> = (0..5000).map(|f| r.render(f).value(x, y)).collect();
    let d = ks_exponential(&mut samples, 500.0);
    assert!(d < 0.02, "KS distance {d}");
}

/// Expected covariance between superpixels `lag` apart when the
/// oversampled intensity covariance is `exp(−d²/(2s²))` and each superpixel
/// averages a 2×2 block of oversampled cells.
fn binned_gaussian_covariance(lag: (i32, i32), s: [f64; 2]) -> f64 {
    let axis = |l: i32, s: f64| {
        let mut acc = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                let d = (2 * l + b - a) as f64;
                acc += (-d * d / (2.0 * s * s)).exp();
            }
        }
        acc / 4.0
    };
    axis(lag.0, s[0]) * axis(lag.1, s[1])
}

#[test]
fn frame_autocovariance_matches_kernel() {
    let c = ExperimentConfig::default().with_sensor(512).with_regime(Regime::Intensity);
    let fwhm = [150e-6, 220e-6];
    let mean = 500.0;
    let m = make_speckle_model(fwhm, fwhm, 1.0, mean).unwrap();
    let r = SpeckleRenderer::new(&m, &c).unwrap();
    let area = plateau(&c);
    let lags = [(0, 0), (1, 0), (2, 0), (0, 1), (0, 2), (1, 1)];
    let mut measured = [0.0; 6];
    let frames = 100;
    // Ensemble covariance about the known mean, averaged over the plateau.
    for f in 0..frames {
        let frame = r.render(f);
        for (k, &(dx, dy)) in lags.iter().enumerate() {
            let mut acc = 0.0;
            let mut n = 0usize;
            for y in area.y..area.y + area.height - 2 {
                for x in area.x..area.x + area.width - 2 {
                    acc += (frame.value(x, y) - mean) * (frame.value(x + dx as usize, y + dy as usize) - mean);
                    n += 1;
                }
            }
            measured[k] += acc / n as f64 / frames as f64;
        }
    }
    let cell = c.detector.superpixel_pitch(Regime::Intensity) / 2.0;
    let s = [fwhm[0] / FWHM_PER_SIGMA / cell, fwhm[1] / FWHM_PER_SIGMA / cell];
    for (k, &lag) in lags.iter().enumerate() {
        let expect = mean * mean * binned_gaussian_covariance(lag, s);
        assert!((measured[k] / expect - 1.0).abs() < 0.1, "lag {lag:?}: {} vs {}", measured[k], expect);
    }

    // The FFT route gives the same zero-lag value on one frame.
    let frame = r.render(0);
    let img = Grid::from_fn(area.width, area.height, |x, y| frame.value(area.x + x, area.y + y));
    let fft = spatial_autocovariance(&img, 2);
    let mu = img.sum() / (area.width * area.height) as f64;
    let direct = img.data().iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / img.data().len() as f64;
    assert!((fft.at(2, 2) / direct - 1.0).abs() < 1e-9);
}

#[test]
fn windowed_estimator_matches_brute_force() {
    let c = ExperimentConfig::default().with_sensor(128).with_regime(Regime::Intensity);
    let l = c.layout(Regime::Intensity).unwrap();
    let stack: Vec<Frame> = (0..50u64)
        .map(|f| {
            let mut rng = stream(77, Purpose::Auxiliary(3), f);
            let mut frame = Frame::blank(&l, f, 77);
            for v in frame.grid.data_mut() {
                *v = 100.0 * rand::Rng::random::<f64>(&mut rng);
            }
            frame
        })
        .collect();
    let (w, h) = (l.width, l.height);
    let mut mean: Grid<f64> = Grid::new(w, h);
    for f in &stack {
        for y in 0..h {
            for x in 0..w {
                *mean.get_mut(x, y) += f.value(x, y) / 50.0;
            }
        }
    }
    let reference = (20, 9);
    let window = Rect::new(3, 4, 8, 8);
    let fast = window_covariance(&stack, &twinbeam_core::analysis::stack_mean(&stack).unwrap(), reference, window);
    for y in 0..8 {
        for x in 0..8 {
            let (px, py) = (window.x + x, window.y + y);
            let mut acc = 0.0;
            for f in &stack {
                acc += (f.value(reference.0, reference.1) - mean.at(reference.0, reference.1))
                    * (f.value(px, py) - mean.at(px, py));
            }
            let brute = acc / 50.0;
            let v = fast.at(x, y);
            assert!((v - brute).abs() <= 1e-10 * brute.abs().max(1e-300) + 1e-12, "{v} vs {brute}");
        }
    }
    // Pair estimator agrees with the windowed one bit for bit.
    let m = twinbeam_core::analysis::stack_mean(&stack).unwrap();
    let pair = pair_covariance(&stack, &m, reference, (window.x + 2, window.y + 5));
    assert!((pair - fast.at(2, 5)).abs() <= 1e-12 * pair.abs());
}
