//! Persistent result store: one directory per run holding a structured
//! summary, an append-only newline-delimited node evidence log, and exported
//! point clouds. Files are deterministic byte streams for a given config and
//! code version; the evidence log is flushed per node so an interrupted run
//! can resume from the completed prefix.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::estimation::{NodeResult, OuterBox};
use crate::{Error, Result};

/// One line of the evidence log, self-describing with run id and stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRow {
    pub run: String,
    pub stage: usize,
    #[serde(flatten)]
    pub node: NodeResult,
}

/// Per-stage aggregates persisted in the summary file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub t_index: usize,
    pub t_final: f64,
    pub d_mult: f64,
    pub delta_dv: Option<f64>,
    pub delta_dn: Option<f64>,
    pub beta_xt: Option<f64>,
    pub beta_dv: Option<f64>,
    pub beta_dn: Option<f64>,
    pub outer: Option<OuterBox>,
    pub candidates: usize,
    pub members: usize,
    pub volume: f64,
    pub ball_fraction: f64,
    pub grid_fraction: f64,
    pub farthest: Option<f64>,
    pub node_evaluations: usize,
}

/// Content of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummaryFile {
    pub run_id: String,
    pub code_version: String,
    pub config: RunConfig,
    pub grid_total: usize,
    pub stages: Vec<StageSummary>,
}

pub fn run_dir(root: &Path, run_id: &str) -> PathBuf {
    root.join(run_id)
}

pub fn summary_path(root: &Path, run_id: &str) -> PathBuf {
    run_dir(root, run_id).join("summary.json")
}

pub fn evidence_path(root: &Path, run_id: &str) -> PathBuf {
    run_dir(root, run_id).join("evidence.log")
}

pub fn points_path(root: &Path, run_id: &str, stage: usize) -> PathBuf {
    run_dir(root, run_id).join(format!("points-{stage}.csv"))
}

/// Write the summary via a temporary file and rename, so a crash never leaves
/// a truncated summary.
pub fn write_summary_atomic(root: &Path, summary: &RunSummaryFile) -> Result<()> {
    let path = summary_path(root, &summary.run_id);
    let tmp = path.with_extension("json.tmp");
    let mut text = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::InvalidState(format!("summary serialization: {e}")))?;
    text.push('\n');
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, &path)?;
    Ok(())
}

pub fn load_summary(root: &Path, run_id: &str) -> Result<RunSummaryFile> {
    let path = summary_path(root, run_id);
    if !path.exists() {
        return Err(Error::UnknownRun(run_id.to_string()));
    }
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Load evidence rows for a run, keyed by stage then node index. Rows from
/// other runs are ignored; an unparsable trailing line (interrupted write) is
/// skipped.
pub fn load_evidence(
    root: &Path,
    run_id: &str,
) -> Result<HashMap<usize, HashMap<usize, NodeResult>>> {
    let path = evidence_path(root, run_id);
    let mut out: HashMap<usize, HashMap<usize, NodeResult>> = HashMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let reader = BufReader::new(File::open(&path)?);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<EvidenceRow>(&line) {
            Ok(row) if row.run == run_id => {
                out.entry(row.stage).or_default().insert(row.node.node, row.node);
            }
            Ok(_) => {}
            Err(_) => {
                // Partial line from an interrupted append.
                eprintln!("warning: skipping unparsable evidence line");
            }
        }
    }
    Ok(out)
}

/// Append-only evidence writer. Node results may complete out of order across
/// worker threads; rows are buffered and written in the canonical candidate
/// order of each stage, skipping rows already present from a previous
/// (interrupted) run, so the final file is byte-identical to an uninterrupted
/// one.
pub struct EvidenceWriter {
    file: BufWriter<File>,
    run_id: String,
    existing: HashSet<(usize, usize)>,
    stage: usize,
    order: Vec<usize>,
    next: usize,
    pending: HashMap<usize, NodeResult>,
}

impl EvidenceWriter {
    pub fn open(
        root: &Path,
        run_id: &str,
        existing: HashSet<(usize, usize)>,
    ) -> Result<Self> {
        let path = evidence_path(root, run_id);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: BufWriter::new(file),
            run_id: run_id.to_string(),
            existing,
            stage: 0,
            order: Vec::new(),
            next: 0,
            pending: HashMap::new(),
        })
    }

    pub fn begin_stage(&mut self, stage: usize, order: Vec<usize>) -> Result<()> {
        if self.next < self.order.len() || !self.pending.is_empty() {
            return Err(Error::InvalidState(format!(
                "stage {} opened while {} rows of stage {} are outstanding",
                stage,
                self.order.len() - self.next,
                self.stage
            )));
        }
        self.stage = stage;
        self.order = order;
        self.next = 0;
        Ok(())
    }

    pub fn push(&mut self, stage: usize, node: NodeResult) -> Result<()> {
        if stage != self.stage {
            return Err(Error::InvalidState(format!(
                "row for stage {stage} arrived during stage {}",
                self.stage
            )));
        }
        self.pending.insert(node.node, node);
        self.drain()
    }

    fn drain(&mut self) -> Result<()> {
        let mut wrote = false;
        while self.next < self.order.len() {
            let ni = self.order[self.next];
            let Some(node) = self.pending.remove(&ni) else {
                break;
            };
            if self.existing.insert((self.stage, ni)) {
                let row = EvidenceRow {
                    run: self.run_id.clone(),
                    stage: self.stage,
                    node,
                };
                let line = serde_json::to_string(&row)
                    .map_err(|e| Error::InvalidState(format!("evidence row: {e}")))?;
                self.file.write_all(line.as_bytes())?;
                self.file.write_all(b"\n")?;
                wrote = true;
            }
            self.next += 1;
        }
        if wrote {
            self.file.flush()?;
        }
        Ok(())
    }

    /// All stages complete; every buffered row must have been written.
    pub fn finish(mut self) -> Result<()> {
        if self.next < self.order.len() || !self.pending.is_empty() {
            return Err(Error::InvalidState(format!(
                "evidence writer finished with {} rows outstanding",
                self.order.len() - self.next
            )));
        }
        self.file.flush()?;
        Ok(())
    }
}

/// Export the member point cloud of one stage: `x1,x2,x3,best_value,is_anchor`
/// rows in evidence order, followed by the anchor row. Returns the file path.
pub fn export_points(root: &Path, run_id: &str, stage: usize) -> Result<PathBuf> {
    let summary = load_summary(root, run_id)?;
    if stage >= summary.stages.len() {
        return Err(Error::UnknownStage(stage));
    }
    let evidence = load_evidence(root, run_id)?;
    let empty = HashMap::new();
    let rows = evidence.get(&stage).unwrap_or(&empty);
    let mut ordered: Vec<&NodeResult> = rows.values().filter(|n| n.member).collect();
    ordered.sort_by_key(|n| n.node);

    let path = points_path(root, run_id, stage);
    let mut out = String::from("x1,x2,x3,best_value,is_anchor\n");
    for node in &ordered {
        out.push_str(&format!(
            "{},{},{},{},0\n",
            node.point[0], node.point[1], node.point[2], node.best_value
        ));
    }
    let anchor = summary.config.anchor;
    out.push_str(&format!("{},{},{},0,1\n", anchor[0], anchor[1], anchor[2]));
    std::fs::write(&path, out)?;
    Ok(path)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x}"))
}

fn fmt_opt_prec(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

/// Render the per-stage table as aligned text.
pub fn render_report_text(summary: &RunSummaryFile) -> String {
    let mut rows = vec![vec![
        "stage".to_string(),
        "T".into(),
        "d_mult".into(),
        "delta_dv".into(),
        "delta_dn".into(),
        "beta_xT".into(),
        "beta_dv".into(),
        "beta_dn".into(),
        "members".into(),
        "grid_pct".into(),
        "volume".into(),
        "ball_pct".into(),
        "farthest".into(),
    ]];
    for s in &summary.stages {
        rows.push(vec![
            s.stage.to_string(),
            format!("{}", s.t_final),
            format!("{}", s.d_mult),
            fmt_opt(s.delta_dv),
            fmt_opt(s.delta_dn),
            fmt_opt(s.beta_xt),
            fmt_opt(s.beta_dv),
            fmt_opt(s.beta_dn),
            s.members.to_string(),
            format!("{:.2}", 100.0 * s.grid_fraction),
            format!("{:.4}", s.volume),
            format!("{:.2}", 100.0 * s.ball_fraction),
            fmt_opt_prec(s.farthest, 4),
        ]);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = format!(
        "run {} (code {}) kind {:?} anchor {:?} grid {} nodes\n",
        summary.run_id,
        summary.code_version,
        summary.config.kind,
        summary.config.anchor,
        summary.grid_total
    );
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:>w$}"))
            .collect();
        out.push_str(&line.join("  "));
        out.push('\n');
    }
    out
}

/// Render the per-stage table as CSV.
pub fn render_report_csv(summary: &RunSummaryFile) -> String {
    let mut out = String::from(
        "stage,T,d_mult,delta_dv,delta_dn,beta_xT,beta_dv,beta_dn,members,candidates,\
         grid_pct,volume,ball_pct,farthest\n",
    );
    for s in &summary.stages {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            s.stage,
            s.t_final,
            s.d_mult,
            opt(s.delta_dv),
            opt(s.delta_dn),
            opt(s.beta_xt),
            opt(s.beta_dv),
            opt(s.beta_dn),
            s.members,
            s.candidates,
            100.0 * s.grid_fraction,
            s.volume,
            100.0 * s.ball_fraction,
            opt(s.farthest),
        ));
    }
    out
}
