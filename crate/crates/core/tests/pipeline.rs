//! End-to-end properties of the simulators and estimators.

use proptest::prelude::*;
use rand::seq::SliceRandom;

use twinbeam_core::analysis::{
    counting_xc_histogram, estimate_efficiencies, extract_fwhm, intensity_correlation_maps, measure_intensity,
    pair_covariance, select_reference_points, stack_mean, CountingOptions, FwhmOptions, IntensityOptions,
};
use twinbeam_core::config::{ExperimentConfig, Regime};
use twinbeam_core::detector::{EventList, Frame};
use twinbeam_core::grid::{Grid, Point};
use twinbeam_core::pipeline::{CountingSimulator, IntensitySimulator};
use twinbeam_core::rng::{stream, Purpose};
use twinbeam_core::synth::{make_speckle_model, Envelope, SpeckleModel, SpeckleRenderer};

fn counting_config() -> ExperimentConfig {
    ExperimentConfig::default().with_sensor(512)
}

fn intensity_config() -> ExperimentConfig {
    ExperimentConfig::default().with_sensor(512).with_regime(Regime::Intensity)
}

#[test]
fn zero_jitter_puts_coincidences_at_zero_displacement() {
    let mut c = counting_config();
    c.source.xc_jitter_fwhm_radial = 0.0;
    c.source.xc_jitter_fwhm_azimuthal = 0.0;
    let sim = CountingSimulator::new(&c).unwrap();
    let ev = sim.event_stack(2000);
    let map = counting_xc_histogram(&ev, sim.layout(), &CountingOptions::default()).unwrap();
    let (cx, cy) = map.center();
    let total = map.grid.sum();
    assert!(total > 0.0);
    assert!(map.grid.at(cx, cy) >= 0.95 * total, "{} of {}", map.grid.at(cx, cy), total);
}

/// Per-bin z-scores with σ from the spread of block components.
fn z_scores(map: &twinbeam_core::analysis::CorrelationMap) -> Vec<f64> {
    let b = map.components.len() as f64;
    let n = map.grid.data().len();
    (0..n)
        .map(|i| {
            let vals: Vec<f64> = map.components.iter().map(|g| g.data()[i]).collect();
            let m = vals.iter().sum::<f64>() / b;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (b - 1.0);
            let sigma = (var * b).sqrt();
            if sigma > 0.0 {
                map.grid.data()[i] / sigma
            } else {
                0.0
            }
        })
        .collect()
}

#[test]
fn unpaired_streams_give_a_flat_histogram() {
    let c = counting_config();
    let sim = CountingSimulator::new(&c).unwrap();
    let mut ev = sim.event_stack(4000);
    // Break the pairing by giving every frame the idlers of a random other frame.
    let mut idlers: Vec<_> = ev.iter().map(|e| e.idler.clone()).collect();
    idlers.shuffle(&mut stream(3, Purpose::Auxiliary(1), 0));
    for (e, i) in ev.iter_mut().zip(idlers) {
        e.idler = i;
    }
    let map = counting_xc_histogram(&ev, sim.layout(), &CountingOptions::default()).unwrap();
    let z = z_scores(&map);
    let n = z.len() as f64;
    let over3 = z.iter().filter(|v| v.abs() > 3.0).count() as f64 / n;
    let max = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mean = z.iter().sum::<f64>() / n;
    assert!(over3 <= 0.01, "fraction beyond 3σ: {over3}");
    assert!(max < 5.0, "max |z| {max}");
    assert!(mean.abs() < 0.2, "mean z {mean}");
}

#[test]
fn lossless_detection_recovers_unit_efficiency() {
    let mut c = counting_config();
    c.detector.quantum_efficiency_signal = 1.0;
    c.detector.quantum_efficiency_idler = 1.0;
    c.detector.dark_event_rate = 0.0;
    c.source.mean_pairs_per_frame = 10.0;
    c.source.xc_jitter_fwhm_radial = 0.0;
    c.source.xc_jitter_fwhm_azimuthal = 0.0;
    let ev = CountingSimulator::new(&c).unwrap().event_stack(100_000);
    let m = estimate_efficiencies(&ev).unwrap();
    assert!((m.estimated_efficiency_signal - 1.0).abs() < 0.02, "{m:?}");
    assert!((m.estimated_efficiency_idler - 1.0).abs() < 0.02, "{m:?}");
}

#[test]
fn unequal_efficiencies_are_recovered_independently() {
    let mut c = counting_config();
    c.detector.quantum_efficiency_signal = 0.3;
    c.detector.quantum_efficiency_idler = 0.6;
    c.detector.dark_event_rate = 0.0;
    c.source.mean_pairs_per_frame = 10.0;
    let ev = CountingSimulator::new(&c).unwrap().event_stack(50_000);
    let m = estimate_efficiencies(&ev).unwrap();
    assert!((m.estimated_efficiency_signal - 0.3).abs() < 3.0 * m.efficiency_sigma_signal + 0.01, "{m:?}");
    assert!((m.estimated_efficiency_idler - 0.6).abs() < 3.0 * m.efficiency_sigma_idler + 0.01, "{m:?}");
}

fn small_model(mu: f64) -> SpeckleModel {
    make_speckle_model([150e-6, 200e-6], [250e-6, 300e-6], mu, 5000.0).unwrap()
}

#[test]
fn identical_frames_give_zero_maps() {
    let c = intensity_config();
    let sim = IntensitySimulator::new(&c, &small_model(1.0)).unwrap();
    let one = sim.frame(0);
    let stack: Vec<Frame> = (0..100).map(|_| one.clone()).collect();
    let opts = IntensityOptions::default();
    let refs = select_reference_points(&stack_mean(&stack).unwrap(), sim.layout(), 20, opts.span(), 1).unwrap();
    let (ac, xc) = intensity_correlation_maps(&stack, sim.layout(), &refs, &opts).unwrap();
    // Only the rounding of the stack mean remains.
    let scale = one.grid.data().iter().fold(0.0f64, |m, v| m.max(v * v));
    assert!(ac.grid.data().iter().all(|v| v.abs() <= 1e-12 * scale));
    assert!(xc.grid.data().iter().all(|v| v.abs() <= 1e-12 * scale));
}

fn maps_for(model: &SpeckleModel, frames: usize, opts: &IntensityOptions) -> (Grid<f64>, Grid<f64>, Vec<Grid<f64>>) {
    let c = intensity_config();
    let sim = IntensitySimulator::new(&c, model).unwrap();
    let stack = sim.stack(frames);
    let refs = select_reference_points(&stack_mean(&stack).unwrap(), sim.layout(), 100, opts.span(), 1).unwrap();
    let (ac, xc) = intensity_correlation_maps(&stack, sim.layout(), &refs, opts).unwrap();
    (ac.grid, xc.grid, xc.components)
}

#[test]
fn uncorrelated_beams_have_no_cross_peak() {
    let opts = IntensityOptions {
        recenter_margin: 0,
        ..IntensityOptions::default()
    };
    let (ac, xc, parts) = maps_for(&small_model(0.0), 300, &opts);
    let c = xc.width() / 2;
    let vals: Vec<f64> = parts.iter().map(|g| g.at(c, c)).collect();
    let j = vals.len() as f64;
    let m = vals.iter().sum::<f64>() / j;
    let sd = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (j - 1.0)).sqrt();
    assert!(xc.at(c, c).abs() < 3.0 * sd / j.sqrt(), "{} vs σ {}", xc.at(c, c), sd / j.sqrt());
    assert!(ac.at(c, c) > 10.0 * xc.at(c, c).abs());
}

#[test]
fn cross_peak_sits_at_the_conjugate_point() {
    let opts = IntensityOptions {
        recenter_margin: 0,
        ..IntensityOptions::default()
    };
    let (_, xc, _) = maps_for(&small_model(1.0), 300, &opts);
    let (x, y, _) = xc.argmax();
    assert_eq!((x, y), (xc.width() / 2, xc.height() / 2));
}

#[test]
fn covariance_is_symmetric_and_scales_quadratically() {
    let c = intensity_config();
    let sim = IntensitySimulator::new(&c, &small_model(0.8)).unwrap();
    let stack = sim.stack(100);
    let mean = stack_mean(&stack).unwrap();
    let (a, b) = ((40, 70), (200, 60));
    assert_eq!(pair_covariance(&stack, &mean, a, b), pair_covariance(&stack, &mean, b, a));

    let k = 3.5;
    let scaled: Vec<Frame> = stack
        .iter()
        .map(|f| {
            let mut g = f.clone();
            g.grid.scale(k);
            g
        })
        .collect();
    let opts = IntensityOptions::default();
    let refs = select_reference_points(&mean, sim.layout(), 20, opts.span(), 1).unwrap();
    let (ac1, xc1) = intensity_correlation_maps(&stack, sim.layout(), &refs, &opts).unwrap();
    let (ac2, xc2) = intensity_correlation_maps(&scaled, sim.layout(), &refs, &opts).unwrap();
    for (p, q) in [(&ac1, &ac2), (&xc1, &xc2)] {
        for (u, v) in p.grid.data().iter().zip(q.grid.data()) {
            assert!((v - k * k * u).abs() <= 1e-9 * (k * k * u).abs().max(1.0), "{u} {v}");
        }
    }
}

#[test]
fn ideal_frames_conserve_illumination_energy() {
    let c = intensity_config();
    let model = small_model(1.0);
    let r = SpeckleRenderer::new(&model, &c).unwrap();
    let l = r.layout().clone();
    let env = Envelope::from_config(&c);
    let sub = l.binning as f64 / 2.0;
    let (ox, oy) = (c.geometry.signal_region.x as f64, c.geometry.signal_region.y as f64);
    let mut expected = 0.0;
    for v in 0..l.signal.height * 2 {
        for u in 0..l.signal.width * 2 {
            expected += env.value(Point::new(ox + (u as f64 + 0.5) * sub, oy + (v as f64 + 0.5) * sub));
        }
    }
    expected *= model.mean_intensity / 4.0;
    let frames = 1000;
    let (mut s, mut i) = (0.0, 0.0);
    for f in 0..frames {
        let fr = r.render(f);
        s += l.signal.cells().map(|(x, y)| fr.value(x, y)).sum::<f64>();
        i += l.idler.cells().map(|(x, y)| fr.value(x, y)).sum::<f64>();
    }
    let (s, i) = (s / frames as f64, i / frames as f64);
    assert!((s / expected - 1.0).abs() < 0.01, "{s} vs {expected}");
    assert!((i / expected - 1.0).abs() < 0.01, "{i} vs {expected}");
}

#[test]
fn speckle_widths_match_model_targets() {
    let c = intensity_config();
    let model = make_speckle_model([300e-6, 300e-6], [500e-6, 500e-6], 1.0, 20_000.0).unwrap();
    let sim = IntensitySimulator::new(&c, &model).unwrap();
    let stack = sim.stack(2000);
    let mut cfg = c.clone();
    cfg.n_reference_points = 100;
    let m = measure_intensity(&stack, sim.layout(), &cfg, &IntensityOptions::default()).unwrap();
    for (est, target) in [(m.ac, 300e-6), (m.xc, 500e-6)] {
        for w in [est.radial.fwhm, est.azimuthal.fwhm] {
            assert!((w / target - 1.0).abs() < 0.05, "{w} vs {target}");
        }
    }
}

#[test]
fn bootstrap_error_shrinks_with_more_reference_points() {
    let c = intensity_config();
    let sim = IntensitySimulator::new(&c, &small_model(1.0)).unwrap();
    let stack = sim.stack(200);
    let opts = IntensityOptions::default();
    let mean = stack_mean(&stack).unwrap();
    let sigma = |n: usize| {
        let refs = select_reference_points(&mean, sim.layout(), n, opts.span(), 9).unwrap();
        assert_eq!(refs.len(), n);
        let (_, xc) = intensity_correlation_maps(&stack, sim.layout(), &refs, &opts).unwrap();
        let e = extract_fwhm(&xc, sim.layout().pitch, c.geometry.radial_axis, &FwhmOptions::default()).unwrap();
        e.radial.uncertainty
    };
    let ratio = sigma(25) / sigma(100);
    assert!((1.6..=2.4).contains(&ratio), "{ratio}");
}

#[test]
fn simulation_is_reproducible_and_independent_of_thread_count() {
    let c = counting_config();
    let run = |threads: usize| -> Vec<EventList> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| CountingSimulator::new(&c).unwrap().event_stack(300))
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(3));

    let ic = intensity_config();
    let sim = IntensitySimulator::new(&ic, &small_model(0.9)).unwrap();
    assert_eq!(sim.frame(7), sim.frame(7));
    let mut other = ic.clone();
    other.rng_seed += 1;
    assert_ne!(sim.frame(7), IntensitySimulator::new(&other, &small_model(0.9)).unwrap().frame(7));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn events_stay_inside_their_regions(seed in any::<u64>(), pairs in 0.0f64..200.0, dark in 0.0f64..0.01) {
        let mut c = ExperimentConfig::default().with_sensor(256);
        c.rng_seed = seed;
        c.source.mean_pairs_per_frame = pairs;
        c.detector.dark_event_rate = dark;
        let sim = CountingSimulator::new(&c).unwrap();
        let l = sim.layout().clone();
        for f in 0..5 {
            let e = sim.events(f);
            prop_assert!(e.signal.iter().all(|&(x, y)| l.signal.contains(x, y)));
            prop_assert!(e.idler.iter().all(|&(x, y)| l.idler.contains(x, y)));
        }
    }

    #[test]
    fn config_text_round_trips(power in 0.001f64..0.2, waist in 1e-5f64..1e-3, seed in 0..=i64::MAX as u64) {
        let mut c = ExperimentConfig::default();
        c.pump.power = power;
        c.pump.waist_horizontal = waist;
        c.rng_seed = seed;
        let back = ExperimentConfig::from_config_str(&c.to_config_string()).unwrap();
        prop_assert_eq!(back, c);
    }
}
