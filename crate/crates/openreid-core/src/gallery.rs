//! The run-time gallery: one bounded descriptor store per known identity.
//!
//! Two limits keep memory flat regardless of stream length: each identity
//! holds at most `max_descriptors_per_identity` descriptors (oldest dropped
//! first), and at most `max_identities` identities are kept (the least
//! recently matched one dropped first). Both limits can be lifted with the
//! unlimited sentinel.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::Descriptor;
use crate::types::IdentityId;

pub const DEFAULT_MAX_DESCRIPTORS_PER_IDENTITY: usize = 60;
pub const DEFAULT_MAX_IDENTITIES: usize = 20;

#[derive(Debug, Error)]
pub enum GalleryError {
    #[error("unknown identity {0}")]
    UnknownIdentity(IdentityId),
    #[error("invalid limit: {0}")]
    InvalidLimit(String),
    #[error("checkpoint line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Gallery limits. `None` means unlimited.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GalleryConfig {
    pub max_descriptors_per_identity: Option<usize>,
    pub max_identities: Option<usize>,
    /// 1 enforces limits after every mutation; n > 1 leaves enforcement to a
    /// periodic `enforce_limits` call every n frames.
    pub enforce_every_n_frames: u64,
}

impl Default for GalleryConfig {
    fn default() -> Self {
        GalleryConfig {
            max_descriptors_per_identity: Some(DEFAULT_MAX_DESCRIPTORS_PER_IDENTITY),
            max_identities: Some(DEFAULT_MAX_IDENTITIES),
            enforce_every_n_frames: 1,
        }
    }
}

impl GalleryConfig {
    pub fn validate(&self) -> Result<(), GalleryError> {
        if self.max_descriptors_per_identity == Some(0) {
            return Err(GalleryError::InvalidLimit(
                "per-identity capacity must be at least 1".into(),
            ));
        }
        if self.max_identities == Some(0) {
            return Err(GalleryError::InvalidLimit(
                "identity capacity must be at least 1".into(),
            ));
        }
        if self.enforce_every_n_frames == 0 {
            return Err(GalleryError::InvalidLimit(
                "enforcement period must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn eager(&self) -> bool {
        self.enforce_every_n_frames == 1
    }
}

/// A descriptor plus the frame it entered the gallery in.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredDescriptor {
    pub descriptor: Descriptor,
    pub inserted_frame: u64,
}

/// All stored descriptors of one identity, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStore {
    id: IdentityId,
    descriptors: VecDeque<StoredDescriptor>,
    last_matched_frame: u64,
}

impl ClusterStore {
    pub fn id(&self) -> IdentityId {
        self.id
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn last_matched_frame(&self) -> u64 {
        self.last_matched_frame
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &StoredDescriptor> {
        self.descriptors.iter()
    }
}

/// What an enforcement pass removed.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct EvictionReport {
    /// (identity, inserted_frame) of each dropped descriptor.
    pub evicted_descriptors: Vec<(IdentityId, u64)>,
    /// Identities dropped wholesale.
    pub evicted_identities: Vec<IdentityId>,
}

impl EvictionReport {
    pub fn is_empty(&self) -> bool {
        self.evicted_descriptors.is_empty() && self.evicted_identities.is_empty()
    }

}

/// Immutable snapshot of one cluster, cheap to take (descriptors share
/// storage with the live gallery).
#[derive(Debug, Clone)]
pub struct ClusterSnapshot {
    pub id: IdentityId,
    pub descriptors: Vec<Descriptor>,
}

/// Frozen picture of the whole gallery for one frame's matching pass.
#[derive(Debug, Clone, Default)]
pub struct GalleryView {
    clusters: Vec<ClusterSnapshot>,
}

impl GalleryView {
    pub fn clusters(&self) -> &[ClusterSnapshot] {
        &self.clusters
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn total_descriptors(&self) -> usize {
        self.clusters.iter().map(|c| c.descriptors.len()).sum()
    }

    pub fn dim(&self) -> Option<usize> {
        self.clusters
            .iter()
            .flat_map(|c| c.descriptors.first())
            .map(|d| d.dim())
            .next()
    }

    /// Builds a view directly from (id, descriptors) pairs; fixtures and
    /// benchmarks use this to match against synthetic galleries.
    pub fn from_clusters(clusters: impl IntoIterator<Item = (IdentityId, Vec<Descriptor>)>) -> Self {
        let mut clusters: Vec<ClusterSnapshot> = clusters
            .into_iter()
            .map(|(id, descriptors)| ClusterSnapshot { id, descriptors })
            .collect();
        clusters.sort_by_key(|c| c.id);
        GalleryView { clusters }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    dim: usize,
    next_id: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredRecord {
    frame: u64,
    values: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterRecord {
    id: u64,
    last_matched_frame: u64,
    descriptors: Vec<StoredRecord>,
}

/// The bounded identity store.
#[derive(Debug)]
pub struct Gallery {
    config: GalleryConfig,
    clusters: BTreeMap<IdentityId, ClusterStore>,
    next_id: u64,
}

impl Gallery {
    pub fn new(config: GalleryConfig) -> Result<Self, GalleryError> {
        config.validate()?;
        Ok(Gallery {
            config,
            clusters: BTreeMap::new(),
            next_id: 1,
        })
    }

    pub fn config(&self) -> &GalleryConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn total_descriptors(&self) -> usize {
        self.clusters.values().map(|c| c.len()).sum()
    }

    pub fn contains(&self, id: IdentityId) -> bool {
        self.clusters.contains_key(&id)
    }

    pub fn cluster(&self, id: IdentityId) -> Option<&ClusterStore> {
        self.clusters.get(&id)
    }

    /// Clusters in ascending id order.
    pub fn clusters(&self) -> impl Iterator<Item = &ClusterStore> {
        self.clusters.values()
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// Opens a fresh identity seeded with one descriptor.
    ///
    /// Ids are strictly increasing across the run. Under eager enforcement
    /// this may evict the least recently matched identity to stay within the
    /// identity limit.
    pub fn register_new_identity(&mut self, descriptor: Descriptor, frame: u64) -> IdentityId {
        self.register_identity_from([(descriptor, frame)], frame)
    }

    /// Opens a fresh identity from pre-collected descriptors, preserving
    /// their original insertion frames. Frames must be non-decreasing.
    pub fn register_identity_from(
        &mut self,
        descriptors: impl IntoIterator<Item = (Descriptor, u64)>,
        matched_frame: u64,
    ) -> IdentityId {
        let id = IdentityId::new(self.next_id);
        self.next_id += 1;
        let stored: VecDeque<StoredDescriptor> = descriptors
            .into_iter()
            .map(|(descriptor, inserted_frame)| StoredDescriptor {
                descriptor,
                inserted_frame,
            })
            .collect();
        debug_assert!(!stored.is_empty());
        debug_assert!(stored
            .iter()
            .zip(stored.iter().skip(1))
            .all(|(a, b)| a.inserted_frame <= b.inserted_frame));
        self.clusters.insert(
            id,
            ClusterStore {
                id,
                descriptors: stored,
                last_matched_frame: matched_frame,
            },
        );
        if self.config.eager() {
            self.enforce_limits();
        }
        id
    }

    /// Appends a descriptor to an existing identity and marks it matched at
    /// `frame`. Under eager enforcement the oldest descriptor is dropped once
    /// the identity exceeds its capacity.
    pub fn add_descriptor(
        &mut self,
        id: IdentityId,
        descriptor: Descriptor,
        frame: u64,
    ) -> Result<(), GalleryError> {
        let cluster = self
            .clusters
            .get_mut(&id)
            .ok_or(GalleryError::UnknownIdentity(id))?;
        cluster.descriptors.push_back(StoredDescriptor {
            descriptor,
            inserted_frame: frame,
        });
        cluster.last_matched_frame = frame;
        if self.config.eager() {
            self.enforce_limits();
        }
        Ok(())
    }

    /// Applies both limits and reports what was dropped.
    ///
    /// Descriptor overflow drops from the front (oldest insertion first);
    /// identity overflow drops the smallest (last_matched_frame, id) pair.
    pub fn enforce_limits(&mut self) -> EvictionReport {
        let mut report = EvictionReport::default();
        if let Some(cap) = self.config.max_descriptors_per_identity {
            for cluster in self.clusters.values_mut() {
                while cluster.descriptors.len() > cap {
                    let dropped = cluster
                        .descriptors
                        .pop_front()
                        .expect("len > cap implies non-empty");
                    report
                        .evicted_descriptors
                        .push((cluster.id, dropped.inserted_frame));
                }
            }
        }
        if let Some(cap) = self.config.max_identities {
            while self.clusters.len() > cap {
                let victim = self
                    .clusters
                    .values()
                    .map(|c| (c.last_matched_frame, c.id))
                    .min()
                    .expect("len > cap implies non-empty")
                    .1;
                self.clusters.remove(&victim);
                report.evicted_identities.push(victim);
            }
        }
        report
    }

    /// Snapshot for a frame's matching pass; later mutations of the live
    /// gallery do not reach it.
    pub fn frozen_view(&self) -> GalleryView {
        GalleryView {
            clusters: self
                .clusters
                .values()
                .map(|c| ClusterSnapshot {
                    id: c.id,
                    descriptors: c.descriptors.iter().map(|s| s.descriptor.clone()).collect(),
                })
                .collect(),
        }
    }

    /// Serializes the gallery as JSONL: a header line, then one cluster per
    /// line in ascending id order. An empty gallery writes nothing.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), GalleryError> {
        if self.clusters.is_empty() {
            return Ok(());
        }
        let dim = self
            .clusters
            .values()
            .flat_map(|c| c.descriptors.front())
            .map(|s| s.descriptor.dim())
            .next()
            .unwrap_or(0);
        let header = CheckpointHeader {
            dim,
            next_id: self.next_id,
        };
        serde_json::to_writer(&mut w, &header).map_err(io_from_json)?;
        w.write_all(b"\n")?;
        for cluster in self.clusters.values() {
            let record = ClusterRecord {
                id: cluster.id.value(),
                last_matched_frame: cluster.last_matched_frame,
                descriptors: cluster
                    .descriptors
                    .iter()
                    .map(|s| StoredRecord {
                        frame: s.inserted_frame,
                        values: s.descriptor.values().to_vec(),
                    })
                    .collect(),
            };
            serde_json::to_writer(&mut w, &record).map_err(io_from_json)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Restores a gallery written by `write_checkpoint`. An empty input
    /// yields an empty gallery under the given config.
    pub fn read_checkpoint<R: BufRead>(r: R, config: GalleryConfig) -> Result<Self, GalleryError> {
        config.validate()?;
        let mut lines = r.lines().enumerate();
        let header: CheckpointHeader = loop {
            match lines.next() {
                None => {
                    return Gallery::new(config);
                }
                Some((idx, line)) => {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line).map_err(|e| GalleryError::Checkpoint {
                        line: idx + 1,
                        msg: e.to_string(),
                    })?;
                }
            }
        };
        let mut clusters = BTreeMap::new();
        let mut max_id = 0u64;
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ClusterRecord =
                serde_json::from_str(&line).map_err(|e| GalleryError::Checkpoint {
                    line: idx + 1,
                    msg: e.to_string(),
                })?;
            let id = IdentityId::new(record.id);
            if record.descriptors.is_empty() {
                return Err(GalleryError::Checkpoint {
                    line: idx + 1,
                    msg: format!("identity {id} has no descriptors"),
                });
            }
            let mut stored = VecDeque::with_capacity(record.descriptors.len());
            for d in record.descriptors {
                if d.values.len() != header.dim {
                    return Err(GalleryError::Checkpoint {
                        line: idx + 1,
                        msg: format!(
                            "descriptor dimension {} does not match header {}",
                            d.values.len(),
                            header.dim
                        ),
                    });
                }
                let descriptor = Descriptor::from_unit_values(d.values).map_err(|e| {
                    GalleryError::Checkpoint {
                        line: idx + 1,
                        msg: e.to_string(),
                    }
                })?;
                stored.push_back(StoredDescriptor {
                    descriptor,
                    inserted_frame: d.frame,
                });
            }
            max_id = max_id.max(record.id);
            if clusters
                .insert(
                    id,
                    ClusterStore {
                        id,
                        descriptors: stored,
                        last_matched_frame: record.last_matched_frame,
                    },
                )
                .is_some()
            {
                return Err(GalleryError::Checkpoint {
                    line: idx + 1,
                    msg: format!("identity {id} appears twice"),
                });
            }
        }
        if header.next_id <= max_id {
            return Err(GalleryError::Checkpoint {
                line: 1,
                msg: format!(
                    "next_id {} is not above the largest stored id {max_id}",
                    header.next_id
                ),
            });
        }
        Ok(Gallery {
            config,
            clusters,
            next_id: header.next_id,
        })
    }
}

fn io_from_json(e: serde_json::Error) -> GalleryError {
    GalleryError::Io(std::io::Error::new(std::io::ErrorKind::Other, e))
}
