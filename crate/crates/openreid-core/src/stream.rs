//! Line-delimited wire formats: descriptor streams in, assignment records out.
//!
//! A stream file is a JSON header line `{"dim":D}` followed by one JSON
//! record per observation, ordered by frame and then by track within a
//! frame. Assignment files carry one JSON record per decision in the same
//! order. Serialization is byte-stable: writing the same records twice
//! produces identical files.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::l2_normalize;
use crate::matcher::{Assignment, AssignmentOutcome};
use crate::types::{FrameBatch, Observation};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: records out of order (frames ascending, tracks ascending within a frame)")]
    Order { line: usize },
    #[error("line {line}: descriptor has {actual} values, header says {expected}")]
    Dimension {
        line: usize,
        expected: usize,
        actual: usize,
    },
    #[error("line {line}: bad descriptor: {msg}")]
    BadDescriptor { line: usize, msg: String },
    #[error("missing header line")]
    MissingHeader,
    #[error("line {line}: id must be present exactly when status is not \"unknown\"")]
    IdStatusMismatch { line: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct StreamHeader {
    pub dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StreamRecord {
    pub frame: u64,
    pub track: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
    pub descriptor: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentStatus {
    Matched,
    New,
    Unknown,
}

/// One matching decision on the wire. `id` is null exactly when `status`
/// is `unknown`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AssignmentRecord {
    pub frame: u64,
    pub track: u64,
    pub status: AssignmentStatus,
    pub id: Option<u64>,
    pub neighbor_count: usize,
    pub mean_distance: Option<f64>,
    pub ghost_suppressed: bool,
}

impl From<&Assignment> for AssignmentRecord {
    fn from(a: &Assignment) -> Self {
        let (status, id) = match a.outcome {
            AssignmentOutcome::Matched(id) => (AssignmentStatus::Matched, Some(id.value())),
            AssignmentOutcome::New(id) => (AssignmentStatus::New, Some(id.value())),
            AssignmentOutcome::Unknown => (AssignmentStatus::Unknown, None),
        };
        AssignmentRecord {
            frame: a.frame_index,
            track: a.track_id,
            status,
            id,
            neighbor_count: a.neighbor_count,
            mean_distance: a.mean_distance,
            ghost_suppressed: a.ghost_suppressed,
        }
    }
}

pub fn write_stream<W: Write>(
    mut w: W,
    dim: usize,
    records: &[StreamRecord],
) -> Result<(), StreamError> {
    serde_json::to_writer(&mut w, &StreamHeader { dim })
        .map_err(|e| StreamError::Parse { line: 1, msg: e.to_string() })?;
    writeln!(w)?;
    for r in records {
        serde_json::to_writer(&mut w, r)
            .map_err(|e| StreamError::Parse { line: 0, msg: e.to_string() })?;
        writeln!(w)?;
    }
    Ok(())
}

/// Reads and validates a stream file without touching the descriptors.
pub fn read_stream<R: BufRead>(r: R) -> Result<(StreamHeader, Vec<StreamRecord>), StreamError> {
    let mut lines = r.lines();
    let header_line = match lines.next() {
        Some(l) => l?,
        None => return Err(StreamError::MissingHeader),
    };
    let header: StreamHeader = serde_json::from_str(&header_line)
        .map_err(|e| StreamError::Parse { line: 1, msg: e.to_string() })?;
    if header.dim == 0 {
        return Err(StreamError::Parse {
            line: 1,
            msg: "dim must be positive".into(),
        });
    }
    let mut records = Vec::new();
    let mut prev: Option<(u64, u64)> = None;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: StreamRecord = serde_json::from_str(&line)
            .map_err(|e| StreamError::Parse { line: line_no, msg: e.to_string() })?;
        if record.descriptor.len() != header.dim {
            return Err(StreamError::Dimension {
                line: line_no,
                expected: header.dim,
                actual: record.descriptor.len(),
            });
        }
        if let Some((pf, pt)) = prev {
            let ok = record.frame > pf || (record.frame == pf && record.track > pt);
            if !ok {
                return Err(StreamError::Order { line: line_no });
            }
        }
        prev = Some((record.frame, record.track));
        records.push(record);
    }
    Ok((header, records))
}

/// Groups validated records into per-frame batches, normalizing each
/// descriptor on the way in. Length errors are caught by `read_stream`;
/// zero or non-finite descriptors are rejected here.
pub fn batches_from_records(records: &[StreamRecord]) -> Result<Vec<FrameBatch>, StreamError> {
    let mut batches = Vec::new();
    let mut current: Vec<Observation> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let descriptor = l2_normalize(&r.descriptor).map_err(|e| StreamError::BadDescriptor {
            line: i + 2,
            msg: e.to_string(),
        })?;
        let obs = Observation {
            frame_index: r.frame,
            track_id: r.track,
            descriptor,
            truth_label: r.truth.clone(),
        };
        if let Some(last) = current.last() {
            if last.frame_index != r.frame {
                let frame = last.frame_index;
                batches.push(
                    FrameBatch::new(frame, std::mem::take(&mut current)).expect("ordered input"),
                );
            }
        }
        current.push(obs);
    }
    if let Some(last) = current.last() {
        let frame = last.frame_index;
        batches.push(FrameBatch::new(frame, current).expect("ordered input"));
    }
    Ok(batches)
}

pub fn read_stream_batches<R: BufRead>(
    r: R,
) -> Result<(StreamHeader, Vec<FrameBatch>), StreamError> {
    let (header, records) = read_stream(r)?;
    let batches = batches_from_records(&records)?;
    Ok((header, batches))
}

pub fn records_from_batches(batches: &[FrameBatch]) -> Vec<StreamRecord> {
    batches
        .iter()
        .flat_map(|b| b.observations())
        .map(|obs| StreamRecord {
            frame: obs.frame_index,
            track: obs.track_id,
            truth: obs.truth_label.clone(),
            descriptor: obs.descriptor.values().to_vec(),
        })
        .collect()
}

pub fn write_assignments<W: Write>(
    mut w: W,
    records: &[AssignmentRecord],
) -> Result<(), StreamError> {
    for r in records {
        debug_assert_eq!(r.id.is_none(), r.status == AssignmentStatus::Unknown);
        serde_json::to_writer(&mut w, r)
            .map_err(|e| StreamError::Parse { line: 0, msg: e.to_string() })?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_assignments<R: BufRead>(r: R) -> Result<Vec<AssignmentRecord>, StreamError> {
    let mut records = Vec::new();
    let mut prev: Option<(u64, u64)> = None;
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AssignmentRecord = serde_json::from_str(&line)
            .map_err(|e| StreamError::Parse { line: line_no, msg: e.to_string() })?;
        if record.id.is_none() != (record.status == AssignmentStatus::Unknown) {
            return Err(StreamError::IdStatusMismatch { line: line_no });
        }
        if let Some((pf, pt)) = prev {
            let ok = record.frame > pf || (record.frame == pf && record.track > pt);
            if !ok {
                return Err(StreamError::Order { line: line_no });
            }
        }
        prev = Some((record.frame, record.track));
        records.push(record);
    }
    Ok(records)
}
