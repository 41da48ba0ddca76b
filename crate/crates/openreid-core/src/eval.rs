//! Consistency-based evaluation of assignment runs.
//!
//! The engine invents its own identity numbers, so evaluation cannot compare
//! them to truth labels directly. Instead each actual face is paired with
//! the identity it received most often (its major id), and a confusion
//! matrix is built around those pairings: diagonal hits are correct,
//! assignments to another face's major id are false accepts, and everything
//! else (minor ids and unknowns) counts as a false reject.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::config::EngineConfig;
use crate::engine::{Engine, EngineError};
use crate::matcher::Assignment;
use crate::stream::AssignmentRecord;
use crate::types::{FrameBatch, IdentityId, GHOST_LABEL};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("observation at frame {frame}, track {track} has no truth label")]
    MissingTruth { frame: u64, track: u64 },
    #[error("assignment at frame {frame}, track {track} matches no stream observation")]
    UnknownObservation { frame: u64, track: u64 },
    #[error("no labeled observations to evaluate")]
    EmptyMatrix,
    #[error("sweep grid has no parameter values")]
    EmptyGrid,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct RowCounts {
    per_id: BTreeMap<IdentityId, u64>,
    unknown: u64,
}

/// Accumulates (truth label, assigned id) pairs; folds pool by merging.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CcmBuilder {
    rows: BTreeMap<String, RowCounts>,
    ghost_total: u64,
    ghost_leaks: u64,
}

impl CcmBuilder {
    pub fn new() -> Self {
        CcmBuilder::default()
    }

    pub fn accumulate(&mut self, truth: &str, assigned: Option<IdentityId>) {
        if truth == GHOST_LABEL {
            self.ghost_total += 1;
            if assigned.is_some() {
                self.ghost_leaks += 1;
            }
            return;
        }
        let row = self.rows.entry(truth.to_string()).or_default();
        match assigned {
            Some(id) => *row.per_id.entry(id).or_default() += 1,
            None => row.unknown += 1,
        }
    }

    /// Joins engine assignments back to the observations they were made
    /// for; both sides arrive in (frame, track) order.
    pub fn accumulate_run(
        &mut self,
        batches: &[FrameBatch],
        assignments: &[Assignment],
    ) -> Result<(), EvalError> {
        let mut iter = assignments.iter();
        for obs in batches.iter().flat_map(|b| b.observations()) {
            let a = iter.next().ok_or(EvalError::UnknownObservation {
                frame: obs.frame_index,
                track: obs.track_id,
            })?;
            debug_assert_eq!((a.frame_index, a.track_id), (obs.frame_index, obs.track_id));
            let truth = obs.truth_label.as_deref().ok_or(EvalError::MissingTruth {
                frame: obs.frame_index,
                track: obs.track_id,
            })?;
            self.accumulate(truth, a.identity());
        }
        Ok(())
    }

    /// Joins an assignment file to its stream file by (frame, track).
    pub fn accumulate_records(
        &mut self,
        batches: &[FrameBatch],
        records: &[AssignmentRecord],
    ) -> Result<(), EvalError> {
        let mut truth_by_key: BTreeMap<(u64, u64), Option<&str>> = BTreeMap::new();
        for obs in batches.iter().flat_map(|b| b.observations()) {
            truth_by_key.insert(
                (obs.frame_index, obs.track_id),
                obs.truth_label.as_deref(),
            );
        }
        for r in records {
            let truth = truth_by_key
                .get(&(r.frame, r.track))
                .ok_or(EvalError::UnknownObservation {
                    frame: r.frame,
                    track: r.track,
                })?
                .ok_or(EvalError::MissingTruth {
                    frame: r.frame,
                    track: r.track,
                })?;
            self.accumulate(truth, r.id.map(IdentityId::new));
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &CcmBuilder) {
        for (label, counts) in &other.rows {
            let row = self.rows.entry(label.clone()).or_default();
            for (id, n) in &counts.per_id {
                *row.per_id.entry(*id).or_default() += n;
            }
            row.unknown += counts.unknown;
        }
        self.ghost_total += other.ghost_total;
        self.ghost_leaks += other.ghost_leaks;
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Fixes the column layout: each row's major id first (in row order,
    /// conflicts resolved greedily by count), then ids no row owns, then
    /// the Unknown column.
    pub fn finalize(&self) -> ConsistencyConfusionMatrix {
        let row_labels: Vec<String> = self.rows.keys().cloned().collect();
        let rows: Vec<&RowCounts> = self.rows.values().collect();
        let n_rows = rows.len();

        // Claims ranked by count; earlier rows win exact ties.
        let mut claims: Vec<(u64, usize, IdentityId)> = Vec::new();
        for (r, counts) in rows.iter().enumerate() {
            for (id, n) in &counts.per_id {
                claims.push((*n, r, *id));
            }
        }
        claims.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut major: Vec<Option<IdentityId>> = vec![None; n_rows];
        let mut owned: BTreeSet<IdentityId> = BTreeSet::new();
        for (_, r, id) in &claims {
            if major[*r].is_none() && !owned.contains(id) {
                major[*r] = Some(*id);
                owned.insert(*id);
            }
        }

        let mut columns: Vec<CcmColumn> = major
            .iter()
            .map(|m| m.map_or(CcmColumn::Vacant, CcmColumn::Identity))
            .collect();
        let all_ids: BTreeSet<IdentityId> = rows
            .iter()
            .flat_map(|c| c.per_id.keys().copied())
            .collect();
        for id in all_ids.difference(&owned) {
            columns.push(CcmColumn::Identity(*id));
        }
        columns.push(CcmColumn::Unknown);

        let counts = rows
            .iter()
            .map(|row| {
                columns
                    .iter()
                    .map(|col| match col {
                        CcmColumn::Identity(id) => row.per_id.get(id).copied().unwrap_or(0),
                        CcmColumn::Vacant => 0,
                        CcmColumn::Unknown => row.unknown,
                    })
                    .collect()
            })
            .collect();

        ConsistencyConfusionMatrix {
            row_labels,
            columns,
            counts,
            ghost_total: self.ghost_total,
            ghost_leaks: self.ghost_leaks,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcmColumn {
    /// An issued identity; within the first `n_rows` columns the row with
    /// the same index owns it as its major id.
    Identity(IdentityId),
    /// Placeholder diagonal for a row whose every id was claimed by some
    /// other row; structurally all zero.
    Vacant,
    /// Observations that received no identity; always the last column.
    Unknown,
}

impl CcmColumn {
    pub fn label(&self) -> String {
        match self {
            CcmColumn::Identity(id) => format!("id{}", id.value()),
            CcmColumn::Vacant => "vacant".to_string(),
            CcmColumn::Unknown => "unknown".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyConfusionMatrix {
    row_labels: Vec<String>,
    columns: Vec<CcmColumn>,
    counts: Vec<Vec<u64>>,
    ghost_total: u64,
    ghost_leaks: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcmMetrics {
    pub true_positives: u64,
    pub false_accepts: u64,
    pub false_rejects: u64,
    pub total: u64,
    pub accuracy: f64,
    pub far: f64,
    pub frr: f64,
    pub uar: f64,
}

impl ConsistencyConfusionMatrix {
    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn columns(&self) -> &[CcmColumn] {
        &self.columns
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn ghost_total(&self) -> u64 {
        self.ghost_total
    }

    pub fn ghost_leaks(&self) -> u64 {
        self.ghost_leaks
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Correct = diagonal of the per-row major columns; false accept = an id
    /// owned by a different row; false reject = unowned ids and Unknown.
    pub fn metrics(&self) -> Result<CcmMetrics, EvalError> {
        let n_rows = self.row_labels.len();
        let total = self.total();
        if total == 0 {
            return Err(EvalError::EmptyMatrix);
        }
        let mut tp = 0u64;
        let mut fa = 0u64;
        let mut fr = 0u64;
        for (r, row) in self.counts.iter().enumerate() {
            for (c, &n) in row.iter().enumerate() {
                if c == r {
                    tp += n;
                } else if c < n_rows {
                    fa += n;
                } else {
                    fr += n;
                }
            }
        }
        debug_assert_eq!(tp + fa + fr, total);

        let mut recall_sum = 0.0;
        let mut recall_rows = 0u64;
        for (r, row) in self.counts.iter().enumerate() {
            let row_total: u64 = row.iter().sum();
            if row_total > 0 {
                recall_sum += row[r] as f64 / row_total as f64;
                recall_rows += 1;
            }
        }

        Ok(CcmMetrics {
            true_positives: tp,
            false_accepts: fa,
            false_rejects: fr,
            total,
            accuracy: tp as f64 / total as f64,
            far: fa as f64 / total as f64,
            frr: fr as f64 / total as f64,
            uar: recall_sum / recall_rows as f64,
        })
    }

    /// CSV layout: header of column labels, then one row per actual face.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), EvalError> {
        let mut header = vec!["actual".to_string()];
        header.extend(self.columns.iter().map(|c| c.label()));
        writeln!(w, "{}", header.join(","))?;
        for (label, row) in self.row_labels.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(|n| n.to_string()).collect();
            writeln!(w, "{},{}", label, cells.join(","))?;
        }
        Ok(())
    }
}

/// One evaluated run: the count table plus the raw assignments it came from.
#[derive(Debug)]
pub struct FoldResult {
    pub builder: CcmBuilder,
    pub assignments: Vec<Assignment>,
}

/// Runs a fresh engine over one fold and tabulates its assignments.
pub fn run_fold(batches: &[FrameBatch], config: &EngineConfig) -> Result<FoldResult, EvalError> {
    let mut engine = Engine::new(config.clone())?;
    let assignments = engine.run(batches)?;
    let mut builder = CcmBuilder::new();
    builder.accumulate_run(batches, &assignments)?;
    Ok(FoldResult {
        builder,
        assignments,
    })
}

/// Pools folds by summing their count tables.
pub fn pool<'a>(builders: impl IntoIterator<Item = &'a CcmBuilder>) -> CcmBuilder {
    let mut pooled = CcmBuilder::new();
    for b in builders {
        pooled.merge(b);
    }
    pooled
}

/// Parameter grid for a sweep; absent axes stay at the base config value.
#[derive(Debug, Clone, Default)]
pub struct SweepGrid {
    pub t_d: Option<Vec<f64>>,
    pub t_n: Option<Vec<usize>>,
    pub s1: Option<Vec<Option<usize>>>,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub t_d: f64,
    pub t_n: usize,
    pub s1: Option<usize>,
    pub metrics: CcmMetrics,
}

/// Evaluates every grid combination over the same stream, one fresh engine
/// each. Row order nests t_d over t_n over s1.
pub fn sweep(
    batches: &[FrameBatch],
    base: &EngineConfig,
    grid: &SweepGrid,
) -> Result<Vec<SweepRow>, EvalError> {
    if grid.t_d.is_none() && grid.t_n.is_none() && grid.s1.is_none() {
        return Err(EvalError::EmptyGrid);
    }
    let t_ds = grid.t_d.clone().unwrap_or_else(|| vec![base.t_d]);
    let t_ns = grid.t_n.clone().unwrap_or_else(|| vec![base.t_n]);
    let s1s = grid.s1.clone().unwrap_or_else(|| vec![base.s1]);
    if t_ds.is_empty() || t_ns.is_empty() || s1s.is_empty() {
        return Err(EvalError::EmptyGrid);
    }

    let mut combos = Vec::new();
    for &t_d in &t_ds {
        for &t_n in &t_ns {
            for &s1 in &s1s {
                combos.push((t_d, t_n, s1));
            }
        }
    }

    let run_one = |&(t_d, t_n, s1): &(f64, usize, Option<usize>)| -> Result<SweepRow, EvalError> {
        let config = EngineConfig {
            t_d,
            t_n,
            s1,
            ..base.clone()
        };
        let fold = run_fold(batches, &config)?;
        let metrics = fold.builder.finalize().metrics()?;
        Ok(SweepRow {
            t_d,
            t_n,
            s1,
            metrics,
        })
    };

    #[cfg(feature = "parallel")]
    let rows: Result<Vec<SweepRow>, EvalError> = combos.par_iter().map(run_one).collect();
    #[cfg(not(feature = "parallel"))]
    let rows: Result<Vec<SweepRow>, EvalError> = combos.iter().map(run_one).collect();
    rows
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<(), EvalError> {
    writeln!(w, "t_d,t_n,s1,tp,fa,fr,accuracy,far,frr,uar")?;
    for r in rows {
        let m = &r.metrics;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.t_d,
            r.t_n,
            r.s1.unwrap_or(0),
            m.true_positives,
            m.false_accepts,
            m.false_rejects,
            m.accuracy,
            m.far,
            m.frr,
            m.uar
        )?;
    }
    Ok(())
}

/// One metrics CSV row: a fold name ("pooled" for the merged table), its
/// metrics, and the fold's ghost leak count.
pub struct MetricsRow {
    pub fold: String,
    pub metrics: CcmMetrics,
    pub ghost_leaks: u64,
}

pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[MetricsRow]) -> Result<(), EvalError> {
    writeln!(w, "fold,tp,fa,fr,accuracy,far,frr,uar,ghost_leaks")?;
    for r in rows {
        let m = &r.metrics;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.fold,
            m.true_positives,
            m.false_accepts,
            m.false_rejects,
            m.accuracy,
            m.far,
            m.frr,
            m.uar,
            r.ghost_leaks
        )?;
    }
    Ok(())
}
