//! Flat key=value configuration files for the engine and the generator.
//!
//! The format is one `key = value` pair per line, `#` comments, blank lines
//! ignored. Unknown and duplicated keys are hard errors; a typo should never
//! silently fall back to a default.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::embed::ExtractMode;
use crate::gallery::{GalleryConfig, DEFAULT_MAX_DESCRIPTORS_PER_IDENTITY, DEFAULT_MAX_IDENTITIES};
use crate::matcher::{
    AdmissionPolicy, MatchConfig, MatcherKind, DEFAULT_DISTANCE_THRESHOLD,
    DEFAULT_NEIGHBOR_THRESHOLD,
};
use crate::simgen::{PresenceInterval, SimConfig};
use crate::track::DEFAULT_GHOST_MIN_FRAMES;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key \"{key}\"")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key \"{key}\"")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: bad value for \"{key}\": {msg}")]
    Value {
        line: usize,
        key: String,
        msg: String,
    },
}

/// A parsed key=value file: entries in file order, each with its line number.
struct KvFile {
    entries: Vec<(usize, String, String)>,
}

impl KvFile {
    fn parse(text: &str) -> Result<KvFile, ConfigError> {
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or(ConfigError::Syntax { line })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            if !seen.insert(key.clone()) {
                return Err(ConfigError::DuplicateKey { line, key });
            }
            entries.push((line, key, value));
        }
        Ok(KvFile { entries })
    }
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        line,
        key: key.to_string(),
        msg: e.to_string(),
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(ConfigError::Value {
            line,
            key: key.to_string(),
            msg: format!("expected true or false, got \"{other}\""),
        }),
    }
}

/// Caps written as 0 mean unlimited.
fn parse_cap(line: usize, key: &str, value: &str) -> Result<Option<usize>, ConfigError> {
    let n: usize = parse_value(line, key, value)?;
    Ok(if n == 0 { None } else { Some(n) })
}

/// Everything the identity-resolution engine needs for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub t_d: f64,
    pub t_n: usize,
    pub s1: Option<usize>,
    pub s2: Option<usize>,
    pub ghost_min_frames: u64,
    pub admission: AdmissionPolicy,
    pub matcher: MatcherKind,
    pub crop: ExtractMode,
    pub histogram_equalization: bool,
    pub enforce_every_n_frames: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            t_d: DEFAULT_DISTANCE_THRESHOLD,
            t_n: DEFAULT_NEIGHBOR_THRESHOLD,
            s1: Some(DEFAULT_MAX_DESCRIPTORS_PER_IDENTITY),
            s2: Some(DEFAULT_MAX_IDENTITIES),
            ghost_min_frames: DEFAULT_GHOST_MIN_FRAMES,
            admission: AdmissionPolicy::PendingCluster,
            matcher: MatcherKind::DbScan,
            crop: ExtractMode::Central,
            histogram_equalization: true,
            enforce_every_n_frames: 1,
        }
    }
}

impl EngineConfig {
    pub fn from_str(text: &str) -> Result<EngineConfig, ConfigError> {
        let kv = KvFile::parse(text)?;
        let mut cfg = EngineConfig::default();
        for (line, key, value) in &kv.entries {
            let (line, value) = (*line, value.as_str());
            match key.as_str() {
                "t_d" => cfg.t_d = parse_value(line, key, value)?,
                "t_n" => cfg.t_n = parse_value(line, key, value)?,
                "s1" => cfg.s1 = parse_cap(line, key, value)?,
                "s2" => cfg.s2 = parse_cap(line, key, value)?,
                "ghost_min_frames" => cfg.ghost_min_frames = parse_value(line, key, value)?,
                "admission" => {
                    cfg.admission = match value {
                        "pending" => AdmissionPolicy::PendingCluster,
                        "immediate" => AdmissionPolicy::Immediate,
                        "track" => AdmissionPolicy::TrackBound,
                        other => {
                            return Err(ConfigError::Value {
                                line,
                                key: key.clone(),
                                msg: format!(
                                    "expected pending, immediate, or track, got \"{other}\""
                                ),
                            })
                        }
                    }
                }
                "matcher" => {
                    cfg.matcher = match value {
                        "dbscan" => MatcherKind::DbScan,
                        "1nn" => MatcherKind::OneNn,
                        other => {
                            return Err(ConfigError::Value {
                                line,
                                key: key.clone(),
                                msg: format!("expected dbscan or 1nn, got \"{other}\""),
                            })
                        }
                    }
                }
                "crop" => {
                    cfg.crop = match value {
                        "central" => ExtractMode::Central,
                        "five" => ExtractMode::FivePatch,
                        other => {
                            return Err(ConfigError::Value {
                                line,
                                key: key.clone(),
                                msg: format!("expected central or five, got \"{other}\""),
                            })
                        }
                    }
                }
                "histogram_equalization" => {
                    cfg.histogram_equalization = parse_bool(line, key, value)?
                }
                "enforce_every_n_frames" => {
                    cfg.enforce_every_n_frames = parse_value(line, key, value)?
                }
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.clone(),
                    })
                }
            }
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), ConfigError> {
        let reject = |key: &str, msg: &str| {
            Err(ConfigError::Value {
                line: 0,
                key: key.to_string(),
                msg: msg.to_string(),
            })
        };
        if !(self.t_d.is_finite() && self.t_d > 0.0) {
            return reject("t_d", "must be positive and finite");
        }
        if self.t_n == 0 {
            return reject("t_n", "must be at least 1");
        }
        if self.enforce_every_n_frames == 0 {
            return reject("enforce_every_n_frames", "must be at least 1");
        }
        if self.ghost_min_frames == 0 {
            return reject("ghost_min_frames", "must be at least 1");
        }
        Ok(())
    }

    pub fn match_config(&self) -> MatchConfig {
        MatchConfig {
            distance_threshold: self.t_d,
            neighbor_threshold: self.t_n,
            admission: self.admission,
            ..MatchConfig::default()
        }
    }

    pub fn gallery_config(&self) -> GalleryConfig {
        GalleryConfig {
            max_descriptors_per_identity: self.s1,
            max_identities: self.s2,
            enforce_every_n_frames: self.enforce_every_n_frames,
        }
    }
}

/// Presence schedule syntax: semicolon-separated `identity:enter..exit:track`
/// segments, for example `0:0..99:10;1:20..99:11`.
fn parse_schedule(line: usize, key: &str, value: &str) -> Result<Vec<PresenceInterval>, ConfigError> {
    let bad = |msg: String| ConfigError::Value {
        line,
        key: key.to_string(),
        msg,
    };
    let mut intervals = Vec::new();
    for segment in value.split(';') {
        let segment = segment.trim();
        if segment.is_empty() {
            continue;
        }
        let parts: Vec<&str> = segment.split(':').collect();
        if parts.len() != 3 {
            return Err(bad(format!(
                "segment \"{segment}\" is not identity:enter..exit:track"
            )));
        }
        let identity: usize = parts[0]
            .trim()
            .parse()
            .map_err(|e| bad(format!("identity in \"{segment}\": {e}")))?;
        let (enter, exit) = parts[1]
            .split_once("..")
            .ok_or_else(|| bad(format!("frame range in \"{segment}\" needs `enter..exit`")))?;
        let enter_frame: u64 = enter
            .trim()
            .parse()
            .map_err(|e| bad(format!("enter frame in \"{segment}\": {e}")))?;
        let exit_frame: u64 = exit
            .trim()
            .parse()
            .map_err(|e| bad(format!("exit frame in \"{segment}\": {e}")))?;
        let track_id: u64 = parts[2]
            .trim()
            .parse()
            .map_err(|e| bad(format!("track in \"{segment}\": {e}")))?;
        intervals.push(PresenceInterval {
            identity,
            enter_frame,
            exit_frame,
            track_id,
        });
    }
    Ok(intervals)
}

impl SimConfig {
    pub fn from_str(text: &str) -> Result<SimConfig, ConfigError> {
        let kv = KvFile::parse(text)?;
        let mut cfg = SimConfig::default();
        for (line, key, value) in &kv.entries {
            let (line, value) = (*line, value.as_str());
            match key.as_str() {
                "seed" => cfg.seed = parse_value(line, key, value)?,
                "dim" => cfg.dim = parse_value(line, key, value)?,
                "n_identities" => cfg.n_identities = parse_value(line, key, value)?,
                "centroid_min_distance" => {
                    cfg.centroid_min_distance = parse_value(line, key, value)?
                }
                "intra_sigma" => cfg.intra_sigma = parse_value(line, key, value)?,
                "frames" => cfg.frames = parse_value(line, key, value)?,
                "schedule" => cfg.schedule = parse_schedule(line, key, value)?,
                "outlier_rate" => cfg.outlier_rate = parse_value(line, key, value)?,
                "outlier_sigma" => cfg.outlier_sigma = parse_value(line, key, value)?,
                "ghost_injection_rate" => {
                    cfg.ghost_injection_rate = parse_value(line, key, value)?
                }
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.clone(),
                    })
                }
            }
        }
        cfg.check().map_err(|msg| ConfigError::Value {
            line: 0,
            key: "sim".to_string(),
            msg,
        })?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_engine_config_gives_defaults() {
        let cfg = EngineConfig::from_str("").unwrap();
        assert_eq!(cfg, EngineConfig::default());
        assert_eq!(cfg.t_d, 1.215);
        assert_eq!(cfg.t_n, 3);
        assert_eq!(cfg.s1, Some(60));
        assert_eq!(cfg.s2, Some(20));
        assert_eq!(cfg.ghost_min_frames, 32);
        assert_eq!(cfg.enforce_every_n_frames, 1);
    }

    #[test]
    fn full_engine_config_parses() {
        let text = "\
            # matching\n\
            t_d = 0.9\n\
            t_n = 2\n\
            s1 = 10\n\
            s2 = 5\n\
            ghost_min_frames = 4\n\
            admission = immediate\n\
            matcher = 1nn\n\
            crop = five\n\
            histogram_equalization = false\n\
            enforce_every_n_frames = 3\n";
        let cfg = EngineConfig::from_str(text).unwrap();
        assert_eq!(cfg.t_d, 0.9);
        assert_eq!(cfg.t_n, 2);
        assert_eq!(cfg.s1, Some(10));
        assert_eq!(cfg.s2, Some(5));
        assert_eq!(cfg.ghost_min_frames, 4);
        assert_eq!(cfg.admission, AdmissionPolicy::Immediate);
        assert_eq!(cfg.matcher, MatcherKind::OneNn);
        assert_eq!(cfg.crop, ExtractMode::FivePatch);
        assert!(!cfg.histogram_equalization);
        assert_eq!(cfg.enforce_every_n_frames, 3);
    }

    #[test]
    fn zero_caps_mean_unlimited() {
        let cfg = EngineConfig::from_str("s1 = 0\ns2 = 0\n").unwrap();
        assert_eq!(cfg.s1, None);
        assert_eq!(cfg.s2, None);
    }

    #[test]
    fn unknown_key_is_rejected_with_its_line() {
        let err = EngineConfig::from_str("t_d = 1.0\nt_dd = 2.0\n").unwrap_err();
        match err {
            ConfigError::UnknownKey { line, key } => {
                assert_eq!(line, 2);
                assert_eq!(key, "t_dd");
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_is_rejected() {
        assert!(matches!(
            EngineConfig::from_str("t_d = 1.0\nt_d = 1.1\n"),
            Err(ConfigError::DuplicateKey { line: 2, .. })
        ));
    }

    #[test]
    fn malformed_line_is_rejected() {
        assert!(matches!(
            EngineConfig::from_str("just words\n"),
            Err(ConfigError::Syntax { line: 1 })
        ));
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(EngineConfig::from_str("t_d = fast\n").is_err());
        assert!(EngineConfig::from_str("t_d = -1.0\n").is_err());
        assert!(EngineConfig::from_str("t_n = 0\n").is_err());
        assert!(EngineConfig::from_str("histogram_equalization = yes\n").is_err());
        assert!(EngineConfig::from_str("admission = lazy\n").is_err());
        assert!(EngineConfig::from_str("enforce_every_n_frames = 0\n").is_err());
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = EngineConfig::from_str("\n# hi\nt_n = 5  # inline\n\n").unwrap();
        assert_eq!(cfg.t_n, 5);
    }

    #[test]
    fn sim_config_parses_with_schedule() {
        let text = "\
            seed = 7\n\
            dim = 16\n\
            n_identities = 2\n\
            centroid_min_distance = 1.2\n\
            intra_sigma = 0.05\n\
            frames = 50\n\
            schedule = 0:0..49:10; 1:5..30:11\n\
            outlier_rate = 0.1\n\
            outlier_sigma = 0.4\n\
            ghost_injection_rate = 0.02\n";
        let cfg = SimConfig::from_str(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.dim, 16);
        assert_eq!(cfg.n_identities, 2);
        assert_eq!(cfg.schedule.len(), 2);
        assert_eq!(cfg.schedule[1].identity, 1);
        assert_eq!(cfg.schedule[1].enter_frame, 5);
        assert_eq!(cfg.schedule[1].exit_frame, 30);
        assert_eq!(cfg.schedule[1].track_id, 11);
    }

    #[test]
    fn sim_config_rejects_bad_schedule() {
        assert!(SimConfig::from_str("schedule = 0:0..9\n").is_err());
        assert!(SimConfig::from_str("schedule = 0:9..0:1\nframes = 10\n").is_err());
        assert!(SimConfig::from_str("schedule = 5:0..9:1\nframes = 10\n").is_err());
    }

    #[test]
    fn sim_config_rejects_unknown_key() {
        assert!(matches!(
            SimConfig::from_str("sigma = 0.1\n"),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
    }
}
