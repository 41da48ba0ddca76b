//! Stream-facing domain types shared across the engine.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::Descriptor;

/// Truth label reserved for detector false positives injected by the
/// generator. Observations carrying it are never treated as persons by
/// evaluation.
pub const GHOST_LABEL: &str = "GHOST";

/// Run-scoped identity label issued by the gallery.
///
/// Ids are issued in strictly increasing order and never reused within a run,
/// even after the identity has been evicted.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct IdentityId(u64);

impl IdentityId {
    pub fn new(v: u64) -> Self {
        IdentityId(v)
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Display for IdentityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BatchError {
    #[error("observation at frame {found} does not belong to batch frame {expected}")]
    FrameMismatch { expected: u64, found: u64 },
    #[error("track {track} appears twice in one frame")]
    DuplicateTrack { track: u64 },
}

/// One detected face in one frame.
///
/// The truth label is carried for evaluation only; matching never reads it.
#[derive(Debug, Clone)]
pub struct Observation {
    pub frame_index: u64,
    pub track_id: u64,
    pub descriptor: Descriptor,
    pub truth_label: Option<String>,
}

/// All observations of a single frame. Tracks are distinct within the batch.
#[derive(Debug, Clone)]
pub struct FrameBatch {
    frame_index: u64,
    observations: Vec<Observation>,
}

impl FrameBatch {
    /// Builds a batch, sorting observations by ascending track id.
    pub fn new(frame_index: u64, mut observations: Vec<Observation>) -> Result<Self, BatchError> {
        for obs in &observations {
            if obs.frame_index != frame_index {
                return Err(BatchError::FrameMismatch {
                    expected: frame_index,
                    found: obs.frame_index,
                });
            }
        }
        observations.sort_by_key(|o| o.track_id);
        for pair in observations.windows(2) {
            if pair[0].track_id == pair[1].track_id {
                return Err(BatchError::DuplicateTrack {
                    track: pair[0].track_id,
                });
            }
        }
        Ok(FrameBatch {
            frame_index,
            observations,
        })
    }

    pub fn frame_index(&self) -> u64 {
        self.frame_index
    }

    /// Observations in ascending track order.
    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::l2_normalize;

    fn obs(frame: u64, track: u64) -> Observation {
        Observation {
            frame_index: frame,
            track_id: track,
            descriptor: l2_normalize(&[1.0, 0.0]).unwrap(),
            truth_label: None,
        }
    }

    #[test]
    fn batch_sorts_by_track() {
        let b = FrameBatch::new(3, vec![obs(3, 9), obs(3, 2), obs(3, 5)]).unwrap();
        let tracks: Vec<u64> = b.observations().iter().map(|o| o.track_id).collect();
        assert_eq!(tracks, vec![2, 5, 9]);
    }

    #[test]
    fn batch_rejects_duplicate_tracks() {
        assert_eq!(
            FrameBatch::new(0, vec![obs(0, 1), obs(0, 1)]).unwrap_err(),
            BatchError::DuplicateTrack { track: 1 }
        );
    }

    #[test]
    fn batch_rejects_foreign_frames() {
        assert_eq!(
            FrameBatch::new(0, vec![obs(1, 1)]).unwrap_err(),
            BatchError::FrameMismatch {
                expected: 0,
                found: 1
            }
        );
    }

    #[test]
    fn identity_ids_order_by_value() {
        assert!(IdentityId::new(2) < IdentityId::new(10));
        assert_eq!(IdentityId::new(7).to_string(), "7");
    }
}
