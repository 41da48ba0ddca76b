//! The streaming engine: ghost filtering in front of per-frame matching,
//! with periodic gallery bound enforcement behind it.

use thiserror::Error;

use crate::config::EngineConfig;
use crate::gallery::{Gallery, GalleryError};
use crate::matcher::{assign_frame, Assignment, AssignmentOutcome, MatchConfig, MatchError, MatcherState};
use crate::track::TrackTable;
use crate::types::{BatchError, FrameBatch, Observation};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Gallery(#[from] GalleryError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Batch(#[from] BatchError),
}

pub struct Engine {
    config: EngineConfig,
    match_config: MatchConfig,
    gallery: Gallery,
    state: MatcherState,
    tracks: TrackTable,
    frames_processed: u64,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Engine, EngineError> {
        let gallery = Gallery::new(config.gallery_config())?;
        Engine::with_gallery(config, gallery)
    }

    /// Resumes with an existing gallery, e.g. one restored from a checkpoint.
    pub fn with_gallery(config: EngineConfig, gallery: Gallery) -> Result<Engine, EngineError> {
        let match_config = config.match_config();
        match_config.validate()?;
        Ok(Engine {
            config,
            match_config,
            gallery,
            state: MatcherState::new(),
            tracks: TrackTable::new(),
            frames_processed: 0,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn gallery(&self) -> &Gallery {
        &self.gallery
    }

    pub fn into_gallery(self) -> Gallery {
        self.gallery
    }

    /// Processes one frame and returns one assignment per observation, in
    /// ascending track order. Observations on tracks younger than
    /// `ghost_min_frames` are suppressed: they come back as `Unknown` with
    /// the suppression flag set and never touch the gallery.
    pub fn process_batch(&mut self, batch: &FrameBatch) -> Result<Vec<Assignment>, EngineError> {
        let frame = batch.frame_index();
        let mut admitted: Vec<Observation> = Vec::with_capacity(batch.len());
        let mut suppressed: Vec<Assignment> = Vec::new();
        for obs in batch.observations() {
            let state = self
                .tracks
                .observe(obs.track_id, frame, self.config.ghost_min_frames);
            if state.admitted {
                admitted.push(obs.clone());
            } else {
                suppressed.push(Assignment {
                    frame_index: frame,
                    track_id: obs.track_id,
                    outcome: AssignmentOutcome::Unknown,
                    neighbor_count: 0,
                    mean_distance: None,
                    ghost_suppressed: true,
                });
            }
        }

        let mut resolved = if admitted.is_empty() {
            Vec::new()
        } else {
            let sub_batch = FrameBatch::new(frame, admitted)?;
            assign_frame(
                &sub_batch,
                &mut self.gallery,
                &mut self.state,
                &self.match_config,
                self.config.matcher,
            )?
        };

        // Merge the two sorted-by-track runs back into frame order.
        resolved.extend(suppressed);
        resolved.sort_by_key(|a| a.track_id);

        self.frames_processed += 1;
        let period = self.config.enforce_every_n_frames;
        if period > 1 && self.frames_processed % period == 0 {
            self.gallery.enforce_limits();
        }
        Ok(resolved)
    }

    /// Runs a whole stream, enforcing gallery bounds once more at the end so
    /// deferred-mode runs finish within limits.
    pub fn run(&mut self, batches: &[FrameBatch]) -> Result<Vec<Assignment>, EngineError> {
        let mut out = Vec::new();
        for batch in batches {
            out.extend(self.process_batch(batch)?);
        }
        if self.config.enforce_every_n_frames > 1 {
            self.gallery.enforce_limits();
        }
        Ok(out)
    }
}
