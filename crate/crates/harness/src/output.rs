//! Report files: results.csv, summary.json, audits.json. Every number is
//! serialized with 12 significant digits, and every byte is a pure function
//! of the validated config.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::experiment::{CellAudit, ExperimentReport, KERNEL_COLUMNS};

pub const RESULTS_CSV: &str = "results.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const AUDITS_JSON: &str = "audits.json";

/// Exact results.csv header, fixed by the reporting contract.
pub const CSV_HEADER: &str = "family,n,m,seed,w1,w1_se,kolmogorov,kernel_theorem8,\
kernel_corollary9,kernel_roellin7,kernel_lemma10_paper,kernel_lemma10_opt,kernel_hb1,\
kernel_bolt2,kernel_mourrat,kernel_fan5,kernel_vd6";

/// 12-significant-digit decimal form used in the CSV.
pub fn csv_num(x: f64) -> String {
    format!("{x:.11e}")
}

/// Rounds to the same 12 significant digits the CSV carries, so JSON and CSV
/// agree on every reported quantity.
pub fn sig12(x: f64) -> f64 {
    csv_num(x).parse().expect("formatted float always parses")
}

pub fn results_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in &report.rows {
        let mut fields: Vec<String> = vec![
            row.family.clone(),
            row.n.to_string(),
            row.m.to_string(),
            row.seed.to_string(),
            csv_num(row.w1),
            csv_num(row.w1_se),
            csv_num(row.kolmogorov),
        ];
        for &(id, _) in &KERNEL_COLUMNS {
            fields.push(match row.kernel(id) {
                Ok(value) => csv_num(*value),
                Err(_) => String::new(),
            });
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct CheckJson<'a> {
    name: &'a str,
    family: &'a str,
    n: usize,
    pass: bool,
    observed: f64,
    bound: f64,
    detail: &'a str,
}

#[derive(Serialize)]
struct FitJson<'a> {
    family: &'a str,
    kernel: &'a str,
    points: usize,
    slope: Option<f64>,
    intercept: Option<f64>,
    slope_se: Option<f64>,
    c_hat: Option<f64>,
}

#[derive(Serialize)]
struct InapplicableJson<'a> {
    family: &'a str,
    n: usize,
    kernel: &'a str,
    reason: &'a str,
}

#[derive(Serialize)]
struct SummaryJson<'a> {
    master_seed: u64,
    p: f64,
    epsilon: f64,
    a_grid: Vec<f64>,
    all_pass: bool,
    checks: Vec<CheckJson<'a>>,
    fitted: Vec<FitJson<'a>>,
    inapplicable: Vec<InapplicableJson<'a>>,
}

pub fn summary_json(report: &ExperimentReport) -> String {
    let summary = SummaryJson {
        master_seed: report.master_seed,
        p: sig12(report.p),
        epsilon: sig12(report.epsilon),
        a_grid: report.a_grid.iter().map(|&a| sig12(a)).collect(),
        all_pass: report.all_pass(),
        checks: report
            .checks
            .iter()
            .map(|c| CheckJson {
                name: c.name,
                family: &c.family,
                n: c.n,
                pass: c.pass,
                observed: sig12(c.observed),
                bound: sig12(c.bound),
                detail: &c.detail,
            })
            .collect(),
        fitted: report
            .fits
            .iter()
            .map(|f| FitJson {
                family: &f.family,
                kernel: f.kernel,
                points: f.points,
                slope: f.fit.map(|fit| sig12(fit.slope)),
                intercept: f.fit.map(|fit| sig12(fit.intercept)),
                slope_se: f.fit.map(|fit| sig12(fit.slope_se)),
                c_hat: f.c_hat.map(sig12),
            })
            .collect(),
        inapplicable: report
            .inapplicable
            .iter()
            .map(|i| InapplicableJson {
                family: &i.family,
                n: i.n,
                kernel: i.kernel,
                reason: &i.reason,
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&summary).expect("no maps or non-finite numbers");
    text.push('\n');
    text
}

#[derive(Serialize)]
struct AuditsJson {
    sub_batch_limit: u64,
    total_failures: u64,
    cells: Vec<CellAudit>,
}

pub fn audits_json(report: &ExperimentReport) -> String {
    let cells: Vec<CellAudit> = report
        .rows
        .iter()
        .map(|r| CellAudit {
            mean_tau: sig12(r.audit.mean_tau),
            ..r.audit.clone()
        })
        .collect();
    let audits = AuditsJson {
        sub_batch_limit: crate::experiment::AUDIT_SUB_BATCH,
        total_failures: cells.iter().map(|c| c.failures).sum(),
        cells,
    };
    let mut text = serde_json::to_string_pretty(&audits).expect("no maps or non-finite numbers");
    text.push('\n');
    text
}

pub fn write_outputs(report: &ExperimentReport, out_dir: &Path) -> io::Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(RESULTS_CSV), results_csv(report))?;
    fs::write(out_dir.join(SUMMARY_JSON), summary_json(report))?;
    fs::write(out_dir.join(AUDITS_JSON), audits_json(report))?;
    Ok(())
}
