//! Append-only long-term memory, persisted as JSON lines.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::design_space::{DesignPoint, Metrics};
use crate::trace_analysis::IssueType;
use crate::trajectory_analysis::{NavStatus, QualityFlag, TrajectoryVerdict};

/// Trajectory verdict without the narrative's formatting concerns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictSummary {
    pub status: NavStatus,
    pub deviation_score: Option<f64>,
    pub quality_flags: BTreeSet<QualityFlag>,
    pub narrative: String,
}

impl From<&TrajectoryVerdict> for VerdictSummary {
    fn from(v: &TrajectoryVerdict) -> Self {
        Self {
            status: v.status,
            deviation_score: v.deviation_score,
            quality_flags: v.quality_flags.clone(),
            narrative: v.narrative.clone(),
        }
    }
}

/// One evaluated (or cache-served) design point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    /// 1-based position in the run, counting cache hits.
    pub iteration: usize,
    pub point: DesignPoint,
    pub metrics: Metrics,
    pub feasible: bool,
    pub bottleneck_flags: BTreeSet<IssueType>,
    pub verdict: VerdictSummary,
    pub rationale: String,
    /// Served from an earlier evaluation without consuming budget.
    pub cached: bool,
}

impl MemoryRecord {
    pub fn has_flag(&self, f: IssueType) -> bool {
        self.bottleneck_flags.contains(&f)
    }
}

/// In-memory history mirrored to an optional JSON-lines file.
#[derive(Debug, Default)]
pub struct MemoryStore {
    path: Option<PathBuf>,
    records: Vec<MemoryRecord>,
}

impl MemoryStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Start a fresh store at `path`, truncating any previous file.
    pub fn create(path: &Path) -> io::Result<Self> {
        File::create(path)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            records: Vec::new(),
        })
    }

    /// Read every record of an existing memory file.
    pub fn load(path: &Path) -> io::Result<Vec<MemoryRecord>> {
        let f = BufReader::new(File::open(path)?);
        let mut out = Vec::new();
        for line in f.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(io::Error::other)?);
        }
        Ok(out)
    }

    pub fn append(&mut self, r: MemoryRecord) -> io::Result<()> {
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().append(true).open(path)?;
            let mut line = serde_json::to_string(&r).map_err(io::Error::other)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
        }
        self.records.push(r);
        Ok(())
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<MemoryRecord> {
        self.records
    }
}
