//! Run reports: per-λ design rows, certificates, oracle rankings and provenance.
//!
//! Group numbers in reports are 1-based.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::certify::RecoveryCertificate;
use crate::config::{OutputFormat, RunConfig};
use crate::error::Result;
use crate::penalties::{AtomLabel, GroupStructure};
use crate::serde_ext::float;
use crate::solver::{OracleResult, SweepRow};

pub const CSV_HEADER: [&str; 10] = [
    "lambda",
    "support",
    "n_actuators",
    "n_sensors",
    "n_links",
    "closed_loop_h2",
    "relative_degradation_pct",
    "objective",
    "kkt_residual",
    "converged",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_space_count: Option<u64>,
    pub config: RunConfig,
}

impl Provenance {
    pub fn new(
        command: &str,
        config: &RunConfig,
        seed: Option<u64>,
        design_space_count: Option<u64>,
    ) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            design_space_count,
            config: config.clone(),
        }
    }
}

/// One design row; `support` holds 1-based group numbers and `labels` their architectural names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(with = "float")]
    pub lambda: f64,
    pub support: Vec<usize>,
    pub labels: Vec<String>,
    pub n_actuators: usize,
    pub n_sensors: usize,
    pub n_links: usize,
    #[serde(with = "float")]
    pub closed_loop_h2: f64,
    #[serde(with = "float")]
    pub relative_degradation_pct: f64,
    #[serde(with = "float")]
    pub objective: f64,
    #[serde(with = "float")]
    pub kkt_residual: f64,
    pub converged: bool,
}

impl ReportRow {
    pub fn from_sweep(row: &SweepRow, penalty: &GroupStructure) -> Self {
        Self {
            lambda: row.lambda,
            support: one_based(&row.support),
            labels: group_labels(penalty, &row.support),
            n_actuators: row.counts.actuators,
            n_sensors: row.counts.sensors,
            n_links: row.counts.links,
            closed_loop_h2: row.closed_loop_h2,
            relative_degradation_pct: row.relative_degradation_pct,
            objective: row.objective,
            kkt_residual: row.kkt_residual,
            converged: row.converged,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub rank: usize,
    pub support: Vec<usize>,
    pub labels: Vec<String>,
    #[serde(with = "float")]
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub s: usize,
    pub t: usize,
    pub v: usize,
    pub best: Vec<usize>,
    #[serde(with = "float")]
    pub best_cost: f64,
    pub ranking: Vec<OracleRow>,
}

impl OracleReport {
    pub fn new(res: &OracleResult, s: usize, t: usize, v: usize, penalty: &GroupStructure) -> Self {
        Self {
            s,
            t,
            v,
            best: one_based(&res.best),
            best_cost: res.best_cost,
            ranking: res
                .ranking
                .iter()
                .enumerate()
                .map(|(k, (sup, cost))| OracleRow {
                    rank: k + 1,
                    support: one_based(sup),
                    labels: group_labels(penalty, sup),
                    cost: *cost,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub provenance: Provenance,
    #[serde(default)]
    pub rows: Vec<ReportRow>,
    /// Certificates with 1-based `m_star`.
    #[serde(default)]
    pub certificates: Vec<RecoveryCertificate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub oracle: Vec<OracleReport>,
}

impl Report {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            provenance,
            rows: Vec::new(),
            certificates: Vec::new(),
            oracle: Vec::new(),
        }
    }

    /// Stores a certificate computed with 0-based groups.
    pub fn push_certificate(&mut self, mut c: RecoveryCertificate) {
        c.m_star = one_based(&c.m_star);
        self.certificates.push(c);
    }

    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn rows_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                fmt12(r.lambda),
                join(&r.support),
                r.n_actuators.to_string(),
                r.n_sensors.to_string(),
                r.n_links.to_string(),
                fmt12(r.closed_loop_h2),
                fmt12(r.relative_degradation_pct),
                fmt12(r.objective),
                fmt12(r.kkt_residual),
                r.converged.to_string(),
            ])?;
        }
        finish(w)
    }

    pub fn certificates_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "t",
            "v",
            "rho",
            "m_star",
            "tau",
            "alpha_exact",
            "gamma",
            "beta_upper",
            "nu",
            "nu_upper",
            "snr_threshold",
            "eta",
            "snr",
            "lambda_sufficient",
            "lambda_interval_lo",
            "lambda_interval_hi",
            "lambda_eval",
            "error_bound",
            "observed_error",
            "assumption1",
            "theorem2_support",
            "theorem2_per_group",
            "corollary1",
            "theorem3",
        ])?;
        for c in &self.certificates {
            let opt = |x: Option<f64>| x.map(fmt12).unwrap_or_default();
            w.write_record([
                c.t.to_string(),
                c.v.to_string(),
                fmt12(c.rho),
                join(&c.m_star),
                c.mixing_time.tau.to_string(),
                opt(c.alpha_exact),
                fmt12(c.gamma),
                fmt12(c.beta_upper),
                fmt12(c.nu),
                fmt12(c.nu_upper),
                fmt12(c.snr_threshold),
                fmt12(c.eta),
                c.snr
                    .iter()
                    .map(|&x| fmt12(x))
                    .collect::<Vec<_>>()
                    .join(";"),
                fmt12(c.lambda_sufficient),
                opt(c.lambda_interval.map(|i| i.0)),
                opt(c.lambda_interval.map(|i| i.1)),
                fmt12(c.lambda_eval),
                fmt12(c.error_bound),
                opt(c.observed_error),
                c.verdicts.assumption1.to_string(),
                c.verdicts.theorem2_support.to_string(),
                c.verdicts.theorem2_per_group.to_string(),
                c.verdicts.corollary1.to_string(),
                c.verdicts.theorem3.to_string(),
            ])?;
        }
        finish(w)
    }

    pub fn oracle_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["s", "rank", "support", "cost"])?;
        for o in &self.oracle {
            for r in &o.ranking {
                w.write_record([
                    o.s.to_string(),
                    r.rank.to_string(),
                    join(&r.support),
                    fmt12(r.cost),
                ])?;
            }
        }
        finish(w)
    }

    /// Writes `<stem>.json` and, for CSV, `<stem>.csv` plus certificate and oracle tables when present.
    pub fn write(&self, dir: &Path, stem: &str, format: OutputFormat) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        let mut put = |name: String, body: String| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, body)?;
            out.push(p);
            Ok(())
        };
        if matches!(format, OutputFormat::Json | OutputFormat::Both) {
            put(format!("{stem}.json"), self.to_json()?)?;
        }
        if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
            if !self.rows.is_empty() {
                put(format!("{stem}.csv"), self.rows_csv()?)?;
            }
            if !self.certificates.is_empty() {
                put(format!("{stem}_certificates.csv"), self.certificates_csv()?)?;
            }
            if !self.oracle.is_empty() {
                put(format!("{stem}_oracle.csv"), self.oracle_csv()?)?;
            }
        }
        Ok(out)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn one_based(groups: &[usize]) -> Vec<usize> {
    groups.iter().map(|g| g + 1).collect()
}

fn join(groups: &[usize]) -> String {
    groups
        .iter()
        .map(|g| g.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Shortest decimal form of `x` rounded to 12 significant digits.
pub fn fmt12(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    let a = rounded.abs();
    if a != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{rounded:e}")
    } else {
        format!("{rounded}")
    }
}

/// Architectural names: `a3` actuator, `s2` sensor, `a1,2s4` block, `l5` link.
pub fn group_labels(penalty: &GroupStructure, groups: &[usize]) -> Vec<String> {
    let flat = penalty.flat_groups();
    let list = |v: &[usize]| {
        v.iter()
            .map(|i| (i + 1).to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    groups
        .iter()
        .map(|&g| match &flat[g].label {
            AtomLabel::Row(i) => format!("a{}", i + 1),
            AtomLabel::Col(j) => format!("s{}", j + 1),
            AtomLabel::Block { rows, cols } => format!("a{}s{}", list(rows), list(cols)),
            AtomLabel::Link(k) => format!("l{}", k + 1),
        })
        .collect()
}
