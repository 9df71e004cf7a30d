//! Per-iteration convergence records shared by the distributed drivers.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use nalgebra::DVector;

use crate::error::Error;
use crate::topology::Norms;

pub const CSV_HEADER: &str = "iter,region,pf_inf,spec_inf,consensus_inf,step_inf,dual_inf,local_time_s";

/// Region index of the row summarizing all regions.
pub const GLOBAL_ROW: i64 = -1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    /// 1-based outer iteration.
    pub iter: usize,
    /// 1-based region, or [`GLOBAL_ROW`].
    pub region: i64,
    pub pf_inf: f64,
    pub spec_inf: f64,
    pub consensus_inf: f64,
    pub step_inf: f64,
    pub dual_inf: f64,
    /// Cumulative local-solve time (global row: summed over regions).
    pub local_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationTrace {
    /// Run parameters, written as `# key = value` lines.
    pub params: Vec<(String, String)>,
    pub rows: Vec<TraceRow>,
}

impl IterationTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn param(&mut self, key: &str, value: impl ToString) {
        self.params.push((key.to_string(), value.to_string()));
    }

    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn global_rows(&self) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(|r| r.region == GLOBAL_ROW)
    }

    pub fn region_rows(&self, region: usize) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(move |r| r.region == region as i64)
    }

    /// Number of completed outer iterations.
    pub fn iterations(&self) -> usize {
        self.global_rows().count()
    }

    pub fn last_global(&self) -> Option<&TraceRow> {
        self.global_rows().last()
    }

    /// Global norms per iteration.
    pub fn norm_history(&self) -> Vec<Norms> {
        self.global_rows()
            .map(|r| Norms {
                pf: r.pf_inf,
                spec: r.spec_inf,
                consensus: r.consensus_inf,
            })
            .collect()
    }

    /// First iteration whose global consensus violation is at most `level`.
    pub fn first_consensus_below(&self, level: f64) -> Option<usize> {
        self.global_rows().find(|r| r.consensus_inf <= level).map(|r| r.iter)
    }

    /// CSV text; with `timing == false` the time column is written as zero
    /// so that reruns are byte-identical.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::new();
        for (k, v) in &self.params {
            let _ = writeln!(out, "# {k} = {v}");
        }
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let t = if timing { r.local_time_s } else { 0.0 };
            let _ = writeln!(
                out,
                "{},{},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.iter, r.region, r.pf_inf, r.spec_inf, r.consensus_inf, r.step_inf, r.dual_inf, t
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path, timing: bool) -> io::Result<()> {
        std::fs::write(path, self.to_csv(timing))
    }

    /// Whitespace-separated global rows for gnuplot, e.g.
    /// `plot 'x.dat' using 1:2 with lines` on a log scale.
    pub fn to_plot_data(&self) -> String {
        let mut out = String::from("# iter pf_inf spec_inf consensus_inf\n");
        for r in self.global_rows() {
            let _ = writeln!(out, "{} {:e} {:e} {:e}", r.iter, r.pf_inf, r.spec_inf, r.consensus_inf);
        }
        out
    }

    /// Parse text produced by [`IterationTrace::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, Error> {
        let mut trace = IterationTrace::new();
        let mut seen_header = false;
        for (n, line) in text.lines().enumerate() {
            let bad = |message: String| Error::Syntax {
                line: n + 1,
                column: 1,
                message,
            };
            if let Some(param) = line.strip_prefix("# ") {
                let (k, v) = param
                    .split_once(" = ")
                    .ok_or_else(|| bad("malformed parameter line".into()))?;
                trace.param(k, v);
                continue;
            }
            if !seen_header {
                if line != CSV_HEADER {
                    return Err(bad(format!("expected header '{CSV_HEADER}'")));
                }
                seen_header = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad(format!("expected 8 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s}: {e}")));
            trace.push(TraceRow {
                iter: f[0].parse().map_err(|e| bad(format!("{}: {e}", f[0])))?,
                region: f[1].parse().map_err(|e| bad(format!("{}: {e}", f[1])))?,
                pf_inf: num(f[2])?,
                spec_inf: num(f[3])?,
                consensus_inf: num(f[4])?,
                step_inf: num(f[5])?,
                dual_inf: num(f[6])?,
                local_time_s: num(f[7])?,
            });
        }
        Ok(trace)
    }
}

/// How a distributed run ended.
#[derive(Debug)]
pub enum Termination {
    Converged,
    IterationLimit,
    /// The run stopped early; the trace up to the failure is kept.
    Failed(Error),
}

/// Final iterates and the trace of a distributed run.
#[derive(Debug)]
pub struct RunOutcome {
    /// Region states that the reported norms refer to.
    pub states: Vec<DVector<f64>>,
    pub trace: IterationTrace,
    pub termination: Termination,
}

impl RunOutcome {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Converged)
    }

    pub fn iterations(&self) -> usize {
        self.trace.iterations()
    }
}
