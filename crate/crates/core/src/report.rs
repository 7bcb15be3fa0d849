//! CSV renderings of trial records and sweep summaries.
//!
//! Numbers use Rust's shortest round-trip formatting, which never depends on
//! the locale. Non-terminating summaries print `inf`.

use std::fmt::Write;

use crate::runner::{MonteCarloSummary, TrialRecord};

pub fn run_csv_header(k: usize, joint: bool) -> String {
    let mut header = String::from("rule,beta,trial,seed,stopped,T,theta_hat,cost_theta");
    if joint {
        for i in 1..=k {
            write!(header, ",alpha_hat_{i},cost_alpha_{i}").unwrap();
        }
    }
    for i in 1..=k {
        write!(header, ",p_{i}").unwrap();
    }
    header
}

/// One row per trial, header included. Failed trials show `error` in the
/// `stopped` column and leave the remaining columns empty.
pub fn run_csv(label: &str, beta: f64, records: &[TrialRecord], k: usize, joint: bool) -> String {
    let mut out = run_csv_header(k, joint);
    out.push('\n');
    append_run_rows(&mut out, label, beta, records, k, joint);
    out
}

pub fn append_run_rows(
    out: &mut String,
    label: &str,
    beta: f64,
    records: &[TrialRecord],
    k: usize,
    joint: bool,
) {
    let extra = if joint { 2 * k } else { 0 } + k;
    for (j, record) in records.iter().enumerate() {
        write!(out, "{label},{beta},{j},{}", record.seed).unwrap();
        match &record.outcome {
            Ok(r) => {
                let e = &r.estimates;
                write!(out, ",{},{},{},{}", r.stopped, r.t, e.theta_mmse, e.cost_shared).unwrap();
                if joint {
                    for (a, c) in e.alpha_mmse.iter().zip(&e.cost_private) {
                        write!(out, ",{a},{c}").unwrap();
                    }
                }
                for p in r.selection_freq() {
                    write!(out, ",{p}").unwrap();
                }
            }
            Err(_) => {
                out.push_str(",error,,,");
                for _ in 0..extra {
                    out.push(',');
                }
            }
        }
        out.push('\n');
    }
}

pub const SWEEP_HEADER: &str = "rule,beta,mean_T,std_T,stop_rate,n";

pub fn sweep_csv<'a>(summaries: impl IntoIterator<Item = &'a MonteCarloSummary>) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for s in summaries {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.label, s.beta, s.mean_t, s.std_t, s.stop_rate, s.n
        )
        .unwrap();
    }
    out
}

/// Per-step log of every trial that recorded one.
pub fn trajectory_csv(label: &str, beta: f64, records: &[TrialRecord], k: usize, joint: bool) -> String {
    let mut out = String::from("rule,beta,trial,seed,t,experiment,y,cost_theta");
    if joint {
        for i in 1..=k {
            write!(out, ",cost_alpha_{i}").unwrap();
        }
    }
    out.push('\n');
    for (j, record) in records.iter().enumerate() {
        let Ok(r) = &record.outcome else { continue };
        for step in r.trajectory.iter().flatten() {
            write!(
                out,
                "{label},{beta},{j},{},{},{},{},{}",
                record.seed,
                step.t,
                step.experiment + 1,
                step.y,
                step.cost_shared
            )
            .unwrap();
            for c in &step.cost_private {
                write!(out, ",{c}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}
