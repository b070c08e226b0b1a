//! `summarize`: cost-binned PHV and R2 statistics plus cost-reduction tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use imoca::engine::RunTrace;
use imoca::metrics::{binned_stats, cost_checkpoints, cost_reduction, BinnedStats, CostReduction};

use crate::CliError;

pub const CHECKPOINTS: usize = 50;
pub const SUMMARY_HEADER: &str = "# imoca-summary v1";

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub phv: BinnedStats,
    pub r2: BinnedStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReductionRow {
    pub method: String,
    pub baseline: String,
    /// Baseline mean PHV at the last checkpoint.
    pub target: f64,
    pub reduction: CostReduction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSummary {
    pub problem: String,
    pub num_objectives: usize,
    pub methods: Vec<MethodSummary>,
    pub reductions: Vec<CostReductionRow>,
}

fn mean_curve(s: &BinnedStats) -> Vec<(f64, f64)> {
    s.cost
        .iter()
        .zip(&s.mean)
        .filter(|(_, m)| m.is_finite())
        .map(|(&c, &m)| (c, m))
        .collect()
}

/// Groups traces by problem and method. Checkpoints span the largest budget
/// seen for each problem.
pub fn aggregate(traces: &[RunTrace]) -> Result<Vec<ProblemSummary>, CliError> {
    let mut by_problem: BTreeMap<&str, BTreeMap<String, Vec<&RunTrace>>> = BTreeMap::new();
    for t in traces {
        by_problem
            .entry(t.config.problem.as_str())
            .or_default()
            .entry(t.config.method.to_string())
            .or_default()
            .push(t);
    }
    let mut out = Vec::new();
    for (problem, methods) in by_problem {
        let all: Vec<&RunTrace> = methods.values().flatten().copied().collect();
        let k = all[0].num_objectives;
        if let Some(bad) = all.iter().find(|t| t.num_objectives != k) {
            return Err(CliError::Aggregation(format!(
                "problem {problem}: traces disagree on the number of objectives ({k} vs {}, seed {} of {})",
                bad.num_objectives, bad.config.seed, bad.config.method
            )));
        }
        let max_cost = all.iter().map(|t| t.config.budget).fold(0.0, f64::max);
        let checkpoints = cost_checkpoints(max_cost, CHECKPOINTS);
        let summaries: Vec<MethodSummary> = methods
            .iter()
            .map(|(m, ts)| MethodSummary {
                method: m.clone(),
                runs: ts.len(),
                phv: binned_stats(
                    &ts.iter().map(|t| t.phv_series()).collect::<Vec<_>>(),
                    &checkpoints,
                ),
                r2: binned_stats(
                    &ts.iter().map(|t| t.r2_series()).collect::<Vec<_>>(),
                    &checkpoints,
                ),
            })
            .collect();
        let mut reductions = Vec::new();
        for b in &summaries {
            let Some(&target) = b.phv.mean.iter().rev().find(|m| m.is_finite()) else {
                continue;
            };
            let base = mean_curve(&b.phv);
            for a in summaries.iter().filter(|a| a.method != b.method) {
                reductions.push(CostReductionRow {
                    method: a.method.clone(),
                    baseline: b.method.clone(),
                    target,
                    reduction: cost_reduction(&mean_curve(&a.phv), &base, target),
                });
            }
        }
        out.push(ProblemSummary {
            problem: problem.to_string(),
            num_objectives: k,
            methods: summaries,
            reductions,
        });
    }
    Ok(out)
}

pub fn method_table(m: &MethodSummary) -> String {
    let mut s = format!(
        "{SUMMARY_HEADER}\n# runs {}\ncost,phv_mean,phv_var,r2_mean,r2_var,count\n",
        m.runs
    );
    for i in 0..m.phv.cost.len() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            m.phv.cost[i],
            m.phv.mean[i],
            m.phv.variance[i],
            m.r2.mean[i],
            m.r2.variance[i],
            m.phv.count[i]
        );
    }
    s
}

pub fn reduction_table(p: &ProblemSummary) -> String {
    let mut s = format!("{SUMMARY_HEADER}\nmethod,baseline,target_phv,cost_reduction_percent\n");
    for r in &p.reductions {
        let pct = r
            .reduction
            .percent()
            .map_or("did-not-converge".to_string(), |v| v.to_string());
        let _ = writeln!(s, "{},{},{},{}", r.method, r.baseline, r.target, pct);
    }
    s
}

pub fn load_traces(dir: &Path) -> Result<Vec<RunTrace>, CliError> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "trace"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(format!(
            "no trace files in {}",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| {
            RunTrace::read(p).map_err(|e| CliError::Aggregation(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// Writes `summary/<problem>_<method>.csv` and
/// `summary/<problem>_cost_reduction.csv` under `dir`. Returns written paths.
pub fn summarize_dir(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let traces = load_traces(dir)?;
    let problems = aggregate(&traces)?;
    let out = dir.join("summary");
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(e.to_string()))?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<(), CliError> {
        let path = out.join(name);
        std::fs::write(&path, body)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        written.push(path);
        Ok(())
    };
    for p in &problems {
        for m in &p.methods {
            put(format!("{}_{}.csv", p.problem, m.method), method_table(m))?;
        }
        put(
            format!("{}_cost_reduction.csv", p.problem),
            reduction_table(p),
        )?;
    }
    Ok(written)
}
