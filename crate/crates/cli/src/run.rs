//! `run`: executes every (problem, method, seed) of a spec on a bounded pool.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use imoca::benchmarks::{self, Problem};
use imoca::engine::{self, ReferenceData, RunConfig, RunTrace};
use log::{error, info, warn};
use rayon::prelude::*;

use crate::spec::ExperimentSpec;
use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub executed: usize,
    pub skipped: usize,
    pub failed: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub force: bool,
    /// Worker count; `None` uses every logical core.
    pub jobs: Option<usize>,
}

fn reference_dir(out: &Path) -> PathBuf {
    out.join("references")
}

/// A trace on disk counts as complete when it parses and echoes `cfg`.
fn is_complete(path: &Path, cfg: &RunConfig) -> bool {
    match RunTrace::read(path) {
        Ok(t) if t.config == *cfg => true,
        Ok(_) => {
            warn!("{} has a different config; rerunning", path.display());
            false
        }
        Err(e) => {
            warn!("{} is unreadable ({e}); rerunning", path.display());
            false
        }
    }
}

fn write_atomic(trace: &RunTrace, path: &Path) -> Result<(), CliError> {
    let tmp = path.with_extension("trace.tmp");
    trace.write(&tmp).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::Io(e.to_string()))
}

pub fn run_spec(
    spec: &ExperimentSpec,
    out: &Path,
    opts: &RunOptions,
) -> Result<RunReport, CliError> {
    let configs = spec.configs()?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;

    let mut report = RunReport::default();
    let mut pending = Vec::new();
    for cfg in configs {
        let path = out.join(cfg.trace_file_name());
        if !opts.force && path.exists() && is_complete(&path, &cfg) {
            info!("skip {}: already complete", path.display());
            report.skipped += 1;
            continue;
        }
        pending.push((cfg, path));
    }

    let mut problems: BTreeMap<String, Arc<dyn Problem>> = BTreeMap::new();
    let mut references: BTreeMap<(String, usize), Arc<ReferenceData>> = BTreeMap::new();
    for (cfg, _) in &pending {
        let problem = problems
            .entry(cfg.problem.clone())
            .or_insert_with(|| {
                Arc::new(benchmarks::by_name(&cfg.problem).expect("validated at parse time"))
            })
            .clone();
        let key = (cfg.problem.clone(), cfg.reference_density);
        if !references.contains_key(&key) {
            let r =
                ReferenceData::cached(problem.as_ref(), cfg.reference_density, &reference_dir(out))
                    .map_err(|e| CliError::Io(e.to_string()))?;
            references.insert(key, Arc::new(r));
        }
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.jobs {
        pool = pool.num_threads(n.max(1));
    }
    let pool = pool.build().map_err(|e| CliError::Config(e.to_string()))?;
    let results: Vec<Result<(), String>> = pool.install(|| {
        pending
            .par_iter()
            .map(|(cfg, path)| {
                let problem = problems[&cfg.problem].clone();
                let reference = &references[&(cfg.problem.clone(), cfg.reference_density)];
                info!("start {}", path.display());
                match engine::run(cfg, problem, reference) {
                    Ok(trace) => {
                        write_atomic(&trace, path)
                            .map_err(|e| format!("{}: {e}", path.display()))?;
                        info!(
                            "done {}: {} iterations, cost {:.3}",
                            path.display(),
                            trace.iterations(),
                            trace.total_cost()
                        );
                        Ok(())
                    }
                    Err(f) => {
                        let partial = path.with_extension("failed");
                        if let Err(e) = f.trace.write(&partial) {
                            warn!("could not save partial trace {}: {e}", partial.display());
                        }
                        error!("{}: {f}", path.display());
                        Err(format!("{}: {}", path.display(), f))
                    }
                }
            })
            .collect()
    });
    for r in results {
        match r {
            Ok(()) => report.executed += 1,
            Err(e) => report.failed.push(e),
        }
    }
    Ok(report)
}
