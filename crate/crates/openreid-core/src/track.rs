//! Track lifetimes and the ghost filter.
//!
//! Spurious detections rarely survive tracking for long, so a track must be
//! seen for a minimum number of frames before its observations may enter
//! matching.

use std::collections::BTreeMap;

/// Default admission threshold: one second of video at 32 frames per second.
pub const DEFAULT_GHOST_MIN_FRAMES: u64 = 32;

/// Lifetime bookkeeping for one track id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackState {
    pub track_id: u64,
    pub first_seen_frame: u64,
    /// Number of frames this track has appeared in so far.
    pub frames_tracked: u64,
    /// Latched on the first frame where frames_tracked reaches the minimum.
    pub admitted: bool,
}

/// True once the track has been seen for at least `min_frames` frames.
pub fn ghost_admit(state: &TrackState, min_frames: u64) -> bool {
    state.admitted || state.frames_tracked >= min_frames
}

/// All track states of one run, keyed by track id.
#[derive(Debug, Default)]
pub struct TrackTable {
    states: BTreeMap<u64, TrackState>,
}

impl TrackTable {
    pub fn new() -> Self {
        TrackTable::default()
    }

    /// Records one appearance of `track_id` and reports its state.
    ///
    /// `frames_tracked` grows by one per call; `admitted` only ever flips
    /// from false to true.
    pub fn observe(&mut self, track_id: u64, frame_index: u64, min_frames: u64) -> &TrackState {
        let state = self.states.entry(track_id).or_insert(TrackState {
            track_id,
            first_seen_frame: frame_index,
            frames_tracked: 0,
            admitted: false,
        });
        state.frames_tracked += 1;
        if state.frames_tracked >= min_frames {
            state.admitted = true;
        }
        state
    }

    pub fn get(&self, track_id: u64) -> Option<&TrackState> {
        self.states.get(&track_id)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}
