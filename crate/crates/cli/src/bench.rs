//! Benchmark metadata and the Table-1 shaped comparison rows.
//!
//! A benchmark file declares its defaults in header comments:
//!
//! ```text
//! # @name Turning vehicle
//! # @target x
//! # @n 20
//! # @degrees 3 5 9
//! # @mode stable
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;

use momentloop::prog::{classify, LoopClass};
use momentloop::sim::simulate;
use momentloop::transform::PceMode;
use momentloop::Program;

use crate::{parse_mode, run_approx, run_exact, Input};

#[derive(Clone, Debug)]
pub struct BenchMeta {
    pub name: String,
    pub path: PathBuf,
    pub program: Program,
    pub target: String,
    pub n: u64,
    pub degrees: Vec<u32>,
    pub mode: PceMode,
}

impl BenchMeta {
    pub fn read(path: &Path) -> anyhow::Result<BenchMeta> {
        let src = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let program = momentloop::parse_program(&src)?;
        let stem = path.file_stem().map_or(String::new(), |s| s.to_string_lossy().into_owned());
        let mut meta = BenchMeta {
            name: stem,
            path: path.to_path_buf(),
            program,
            target: String::new(),
            n: 0,
            degrees: Vec::new(),
            mode: PceMode::Stable,
        };
        for line in src.lines() {
            let Some(rest) = line.trim().strip_prefix('#') else { continue };
            let Some(rest) = rest.trim().strip_prefix('@') else { continue };
            let (key, value) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
            let value = value.trim();
            let bad = |what: &str| Input(format!("{}: bad @{key} `{value}`: {what}", path.display()));
            match key {
                "name" => meta.name = value.to_string(),
                "target" => meta.target = value.to_string(),
                "n" => meta.n = value.parse().map_err(|_| bad("expected an integer"))?,
                "degrees" => {
                    meta.degrees = value
                        .split_whitespace()
                        .map(|d| d.parse())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("expected integers"))?
                }
                "mode" => meta.mode = parse_mode(value).map_err(|e| bad(&e))?,
                _ => {}
            }
        }
        if meta.target.is_empty() {
            meta.target = meta.program.variables.first().cloned().unwrap_or_default();
        }
        Ok(meta)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SimCell {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    pub seed: u64,
    pub sim_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExactCell {
    pub value: f64,
    pub rewrite_ms: f64,
    pub engine_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PceCell {
    pub degree: u32,
    pub value: f64,
    /// Largest per-site approximation error.
    pub se: f64,
    pub bound: Option<f64>,
    pub pce_ms: f64,
    pub engine_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareRow {
    pub name: String,
    pub file: String,
    pub target: String,
    pub n: u64,
    pub class: LoopClass,
    pub mode: PceMode,
    pub sim: Option<SimCell>,
    pub exact: Option<ExactCell>,
    pub pce: Vec<PceCell>,
    pub errors: Vec<String>,
}

/// Runs simulation, the exact engine (when the program admits it) and the
/// PCE pipeline at every degree. Failures are collected, not propagated.
pub fn compare(meta: &BenchMeta, samples: usize, seed: u64) -> anyhow::Result<CompareRow> {
    let p = &meta.program;
    let class = classify(p).class;
    let targets = [meta.target.as_str()];
    let mut row = CompareRow {
        name: meta.name.clone(),
        file: meta.path.display().to_string(),
        target: meta.target.clone(),
        n: meta.n,
        class,
        mode: meta.mode,
        sim: None,
        exact: None,
        pce: Vec::new(),
        errors: Vec::new(),
    };
    if samples > 0 {
        let t = Instant::now();
        match simulate(p, meta.n, samples, seed, &targets) {
            Ok(tab) => {
                let sim_ms = t.elapsed().as_secs_f64() * 1e3;
                let r = &tab.rows[0];
                row.sim = Some(SimCell {
                    value: r.value,
                    std_error: r.std_error.unwrap_or(f64::NAN),
                    samples,
                    seed,
                    sim_ms,
                });
            }
            Err(e) => row.errors.push(format!("simulation: {e}")),
        }
    }
    if matches!(class, LoopClass::ProbSolvable | LoopClass::ProbSolvableAfterExactRewrite) {
        match run_exact(p, &targets, meta.n) {
            Ok((_, tab, rewrite_ms, engine_ms)) => {
                row.exact = Some(ExactCell { value: tab.rows[0].value, rewrite_ms, engine_ms })
            }
            Err(e) => row.errors.push(format!("exact: {e}")),
        }
    }
    for &d in &meta.degrees {
        match run_approx(p, &targets, meta.n, d, meta.mode) {
            Ok((_, tab, sites, pce_ms, engine_ms)) => row.pce.push(PceCell {
                degree: d,
                value: tab.rows[0].value,
                se: sites.iter().flat_map(|s| s.se.iter()).fold(0.0, |a, b| a.max(*b)),
                bound: sites.iter().map(|s| s.bound).try_fold(0.0f64, |a, b| b.map(|b| a.max(b))),
                pce_ms,
                engine_ms,
            }),
            Err(e) => row.errors.push(format!("pce degree {d}: {e}")),
        }
    }
    Ok(row)
}

fn cell(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |v| format!("{v:.5}"))
}

pub fn text_table(rows: &[CompareRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:<10} {:>14} {:>14} {:>4} {:>14} {:>12}",
        "benchmark", "target", "sim", "exact", "deg", "pce", "pce+eng ms"
    );
    for r in rows {
        let target = format!("E[{}]_{}", r.target, r.n);
        let sim = cell(r.sim.as_ref().map(|s| s.value));
        let exact = cell(r.exact.as_ref().map(|e| e.value));
        if r.pce.is_empty() {
            let _ = writeln!(out, "{:<28} {:<10} {:>14} {:>14} {:>4} {:>14} {:>12}", r.name, target, sim, exact, "-", "-", "-");
        }
        for (i, c) in r.pce.iter().enumerate() {
            let (name, target, sim, exact) = if i == 0 {
                (r.name.as_str(), target.as_str(), sim.as_str(), exact.as_str())
            } else {
                ("", "", "", "")
            };
            let _ = writeln!(
                out,
                "{:<28} {:<10} {:>14} {:>14} {:>4} {:>14} {:>12}",
                name,
                target,
                sim,
                exact,
                c.degree,
                cell(Some(c.value)),
                format!("{:.0}+{:.0}", c.pce_ms, c.engine_ms)
            );
        }
        for e in &r.errors {
            let _ = writeln!(out, "  ! {e}");
        }
    }
    out
}

pub fn csv_table(rows: &[CompareRow]) -> String {
    let mut out = String::from("benchmark,target,n,sim,sim_se,exact,degree,pce,pce_ms,engine_ms\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:e}"));
    for r in rows {
        let sim = opt(r.sim.as_ref().map(|s| s.value));
        let se = opt(r.sim.as_ref().map(|s| s.std_error));
        let exact = opt(r.exact.as_ref().map(|e| e.value));
        if r.pce.is_empty() {
            let _ = writeln!(out, "{},{},{},{},{},{},,,,", r.name, r.target, r.n, sim, se, exact);
        }
        for c in &r.pce {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{:e},{:.3},{:.3}",
                r.name, r.target, r.n, sim, se, exact, c.degree, c.value, c.pce_ms, c.engine_ms
            );
        }
    }
    out
}
