//! JSON reports, subdomain cells and trajectory CSV.

use std::io::Write;
use std::path::Path;

use dtcbf_core::global_opt::{GlobalResult, GlobalStatus};
use dtcbf_core::problem::Trajectory;
use dtcbf_core::synthesis::{Certificate, SynthesisOutcome};
use dtcbf_core::verifier::{RecordStatus, SubdomainRecord, VerificationOutcome, VerifyStats};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Debug, Serialize)]
pub struct RunReport {
    /// The command line, enough to rerun in deterministic mode.
    pub command: Vec<String>,
    pub config: Value,
    pub outcome: Value,
    pub stats: Value,
    pub wall_seconds: f64,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Cell {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub status: String,
    pub input: Option<Vec<f64>>,
    pub relaxation_value: Option<f64>,
}

impl From<&SubdomainRecord> for Cell {
    fn from(r: &SubdomainRecord) -> Self {
        Cell {
            id: r.id,
            parent: r.parent,
            depth: r.depth,
            lo: r.bx.lo(),
            hi: r.bx.hi(),
            status: r.status.label().to_owned(),
            input: r.assigned_input.clone(),
            relaxation_value: r.relaxation_value.filter(|v| v.is_finite()),
        }
    }
}

pub fn cells(records: &[SubdomainRecord]) -> Vec<Cell> {
    records.iter().map(Cell::from).collect()
}

pub fn verify_stats(s: &VerifyStats) -> Value {
    json!({
        "iterations": s.iterations,
        "approved_valid": s.approved_valid,
        "approved_empty": s.approved_empty,
        "prefiltered": s.prefiltered,
        "splits": s.splits,
        "max_depth": s.max_depth,
    })
}

/// Boxes per final status.
pub fn status_counts(records: &[SubdomainRecord]) -> Value {
    let mut counts = serde_json::Map::new();
    for r in records {
        let key = match r.status {
            RecordStatus::Split { .. } => "split",
            _ => r.status.label(),
        };
        let slot = counts.entry(key.to_owned()).or_insert(json!(0));
        *slot = json!(slot.as_u64().unwrap_or(0) + 1);
    }
    Value::Object(counts)
}

pub fn verification(o: &VerificationOutcome) -> Value {
    json!({
        "verdict": o.verdict.label(),
        "point": o.verdict.point(),
        "friend_cells": o.friend.as_ref().map(|f| f.cells.len()),
    })
}

fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

pub fn global(r: &GlobalResult) -> Value {
    json!({
        "status": global_status(r.status),
        "minimizer": r.minimizer,
        "lower_bound": finite(r.lower_bound),
        "upper_bound": finite(r.upper_bound),
        "iterations": r.iterations,
    })
}

pub fn global_status(s: GlobalStatus) -> &'static str {
    match s {
        GlobalStatus::Converged => "converged",
        GlobalStatus::Infeasible => "infeasible",
        GlobalStatus::Budget => "budget",
        GlobalStatus::CutoffProved => "cutoff-proved",
        GlobalStatus::CutoffRefuted => "cutoff-refuted",
    }
}

fn certificate(c: &Certificate) -> Value {
    json!({ "kind": c.kind.to_string(), "passed": c.passed, "result": global(&c.result) })
}

pub fn synthesis(o: &SynthesisOutcome) -> Value {
    json!({
        "status": o.status.label(),
        "theta": o.theta,
        "mu": o.mu,
        "outer_value": finite(o.outer_value),
        "lower_bound": finite(o.lower_bound),
        "fathomed_bound": finite(o.fathomed_bound),
        "certificates": o.certificates.iter().map(certificate).collect::<Vec<_>>(),
        "verifier_crosscheck": o.verifier_crosscheck.as_ref().map(verification),
    })
}

pub fn synthesis_stats(o: &SynthesisOutcome) -> Value {
    let s = &o.stats;
    json!({
        "nodes": s.nodes,
        "candidates_screened": s.candidates_screened,
        "candidates_certified": s.candidates_certified,
        "certificate_failures": s.certificate_failures,
        "crosscheck_rejections": s.crosscheck_rejections,
        "incumbent_updates": s.incumbent_updates,
        "pruned_by_bound": s.pruned_by_bound,
        "pruned_by_constraint": s.pruned_by_constraint,
        "pruned_by_witness": s.pruned_by_witness,
        "floored": s.floored,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()
}

/// One row per step: `t, x1..xn, u1..um, h, margin`; the final state closes
/// the table with empty input and margin fields.
pub fn write_trajectory<W: Write>(out: W, traj: &Trajectory) -> csv::Result<()> {
    let n = traj.final_state.len();
    let m = traj.steps.first().map_or(0, |s| s.input.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_owned()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.extend(["h".to_owned(), "margin".to_owned()]);
    w.write_record(&header)?;
    // `{:?}` keeps the shortest round-trip representation
    let num = |v: f64| format!("{v:?}");
    for s in &traj.steps {
        let mut row = vec![s.t.to_string()];
        row.extend(s.state.iter().map(|&v| num(v)));
        row.extend(s.input.iter().map(|&v| num(v)));
        row.extend([num(s.h), num(s.margin)]);
        w.write_record(&row)?;
    }
    let mut row = vec![traj.steps.len().to_string()];
    row.extend(traj.final_state.iter().map(|&v| num(v)));
    row.extend(std::iter::repeat_n(String::new(), m));
    row.extend([num(traj.final_h), String::new()]);
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}
