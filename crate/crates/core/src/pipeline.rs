//! Frame-stack generation in both regimes. Frames are produced in parallel
//! and collected in frame order; each frame draws only from its own streams.

use rayon::prelude::*;

use crate::config::{ExperimentConfig, Layout, Regime};
use crate::detector::{detect_counting, detect_intensity, extract_events, EventList, Frame};
use crate::error::Result;
use crate::rng::{stream, Purpose};
use crate::synth::{PairSource, SpeckleModel, SpeckleRenderer};

/// Counting-regime simulator: pair source plus camera.
pub struct CountingSimulator {
    config: ExperimentConfig,
    layout: Layout,
    source: PairSource,
}

impl CountingSimulator {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        Self::with_source(config, PairSource::from_config(config)?)
    }

    pub fn with_source(config: &ExperimentConfig, source: PairSource) -> Result<Self> {
        Ok(Self {
            layout: config.layout(Regime::Counting)?,
            config: config.clone(),
            source,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn frame(&self, frame_index: u64) -> Frame {
        let seed = self.config.rng_seed;
        let pairs = self
            .source
            .sample(frame_index, &mut stream(seed, Purpose::PairSource, frame_index));
        detect_counting(
            &pairs,
            &self.config,
            &self.layout,
            frame_index,
            &mut stream(seed, Purpose::Detector, frame_index),
        )
    }

    pub fn events(&self, frame_index: u64) -> EventList {
        // Counting frames are already binary, so any positive threshold passes them through.
        extract_events(&self.frame(frame_index), 0.5).expect("positive threshold")
    }

    /// Event lists for frames `0..n`, in order.
    pub fn event_stack(&self, n_frames: usize) -> Vec<EventList> {
        (0..n_frames as u64).into_par_iter().map(|f| self.events(f)).collect()
    }
}

/// Intensity-regime simulator: speckle renderer plus camera.
pub struct IntensitySimulator {
    config: ExperimentConfig,
    renderer: SpeckleRenderer,
}

impl IntensitySimulator {
    pub fn new(config: &ExperimentConfig, model: &SpeckleModel) -> Result<Self> {
        Ok(Self {
            renderer: SpeckleRenderer::new(model, config)?,
            config: config.clone(),
        })
    }

    pub fn layout(&self) -> &Layout {
        self.renderer.layout()
    }

    pub fn ideal_frame(&self, frame_index: u64) -> Frame {
        self.renderer.render(frame_index)
    }

    pub fn frame(&self, frame_index: u64) -> Frame {
        let ideal = self.renderer.render(frame_index);
        detect_intensity(
            &ideal,
            &self.config,
            &mut stream(self.config.rng_seed, Purpose::Detector, frame_index),
        )
    }

    /// Detected frames `0..n`, in order.
    pub fn stack(&self, n_frames: usize) -> Vec<Frame> {
        (0..n_frames as u64).into_par_iter().map(|f| self.frame(f)).collect()
    }
}
