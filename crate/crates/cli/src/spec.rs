//! Experiment spec files.
//!
//! ```text
//! # imoca-experiment v1
//! output,runs/bc
//! run,branin-currin,imoca-e,0-9,250
//! run,branin-currin,mesmo,0;1;2,250,samples=10,init=5
//! ```
//!
//! Seeds are a `;`-separated list of integers or inclusive `a-b` ranges.
//! Trailing `key=value` fields override run settings. `#` starts a comment.

use std::path::{Path, PathBuf};

use imoca::benchmarks::{self, PROBLEM_NAMES};
use imoca::engine::{Method, RunConfig};

use crate::CliError;

pub const SPEC_HEADER: &str = "# imoca-experiment v1";

/// Environment variable that overrides where relative output dirs resolve.
pub const OUTPUT_ROOT_VAR: &str = "IMOCA_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq)]
pub struct RunGroup {
    pub problem: String,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub budget: f64,
    pub overrides: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub groups: Vec<RunGroup>,
    pub output: PathBuf,
}

fn config_err(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("line {line}: {msg}"))
}

fn parse_seeds(field: &str, line: usize) -> Result<Vec<u64>, CliError> {
    let mut seeds = Vec::new();
    for part in field.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || config_err(line, format!("bad seed entry '{part}'"));
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| bad())?;
                let b: u64 = b.trim().parse().map_err(|_| bad())?;
                if b < a {
                    return Err(bad());
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().map_err(|_| bad())?),
        }
    }
    if seeds.is_empty() {
        return Err(config_err(line, "empty seed list"));
    }
    Ok(seeds)
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == SPEC_HEADER => {}
            _ => {
                return Err(CliError::Config(format!(
                    "spec must start with '{SPEC_HEADER}'"
                )))
            }
        }
        let mut output = None;
        let mut groups = Vec::new();
        for (i, raw) in lines {
            let n = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            match fields[0] {
                "output" if fields.len() == 2 && !fields[1].is_empty() => {
                    output = Some(PathBuf::from(fields[1]));
                }
                "run" if fields.len() >= 5 => {
                    let problem = fields[1].to_string();
                    if benchmarks::by_name(&problem).is_err() {
                        return Err(config_err(
                            n,
                            format!(
                                "unknown problem '{problem}'; registered: {}",
                                PROBLEM_NAMES.join(", ")
                            ),
                        ));
                    }
                    let method: Method = fields[2].parse().map_err(|e| config_err(n, e))?;
                    let seeds = parse_seeds(fields[3], n)?;
                    let budget: f64 = fields[4]
                        .parse()
                        .map_err(|_| config_err(n, format!("bad budget '{}'", fields[4])))?;
                    let mut overrides = Vec::new();
                    for f in &fields[5..] {
                        let (k, v) = f.split_once('=').ok_or_else(|| {
                            config_err(n, format!("expected key=value, got '{f}'"))
                        })?;
                        overrides.push((k.trim().to_string(), v.trim().to_string()));
                    }
                    let group = RunGroup {
                        problem,
                        method,
                        seeds,
                        budget,
                        overrides,
                    };
                    group.config(group.seeds[0]).map_err(|e| config_err(n, e))?;
                    groups.push(group);
                }
                other => {
                    return Err(config_err(
                        n,
                        format!("unrecognized line starting with '{other}'"),
                    ))
                }
            }
        }
        let output = output.ok_or_else(|| CliError::Config("missing 'output' line".into()))?;
        if groups.is_empty() {
            return Err(CliError::Config("no 'run' lines".into()));
        }
        Ok(Self { groups, output })
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Relative output dirs resolve against `root` when given, else against
    /// the spec file's directory.
    pub fn output_dir(&self, spec_path: &Path, root: Option<&Path>) -> PathBuf {
        if self.output.is_absolute() {
            return self.output.clone();
        }
        match root {
            Some(r) => r.join(&self.output),
            None => spec_path
                .parent()
                .unwrap_or(Path::new("."))
                .join(&self.output),
        }
    }

    /// Every run the spec asks for, in file order.
    pub fn configs(&self) -> Result<Vec<RunConfig>, CliError> {
        let mut out = Vec::new();
        for g in &self.groups {
            for &s in &g.seeds {
                out.push(g.config(s)?);
            }
        }
        Ok(out)
    }
}

impl RunGroup {
    pub fn config(&self, seed: u64) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::new(self.method, &self.problem, seed);
        cfg.budget = self.budget;
        for (k, v) in &self.overrides {
            cfg.set(k, v).map_err(|e| CliError::Config(e.to_string()))?;
        }
        cfg.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}
