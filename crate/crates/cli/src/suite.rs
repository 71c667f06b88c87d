//! Every reference scenario, one worker per scenario, with a shared index.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use neurofield::control::SignalSpec;
use neurofield::experiment::{run_scenario, write_artifacts, write_diagnostic_bundle, Mode, RunOutput, ScenarioConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::plots::emit_plots;

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// Certified run whose decrease check failed somewhere.
    Violations,
    Numerical,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Entry {
    pub name: String,
    pub mode: Mode,
    pub dir: PathBuf,
    pub status: Status,
    pub lyapunov_violations: usize,
    pub warnings: Vec<String>,
    pub error: Option<String>,
    pub seconds: f64,
}

/// Observer with and without excitation, exact stabilization, the
/// simultaneous loop at three excitation levels plus the certified setup,
/// the sweep, the drift study and the proportional baseline.
pub fn scenarios(smoke: bool) -> Vec<ScenarioConfig> {
    let base = |mode| {
        if smoke {
            ScenarioConfig::smoke(mode)
        } else {
            ScenarioConfig::preset(mode)
        }
    };
    let mut out = vec![base(Mode::OpenLoopObserver)];
    let mut unforced = base(Mode::OpenLoopObserver);
    unforced.name = format!("{}_unforced", unforced.name);
    unforced.model.mu = 0.0;
    out.push(unforced);
    out.push(base(Mode::ExactStabilization));
    for mu in [0.1, 10.0, 100.0] {
        let mut c = base(Mode::SimultaneousPe);
        c.name = format!("{}_mu_{mu}", c.name);
        c.excitation = SignalSpec::SpaceTimeSine { mu, lambda: 100.0 };
        out.push(c);
    }
    out.push(ScenarioConfig::certified());
    out.push(base(Mode::PerturbationSweep));
    out.push(base(Mode::DriftStudy));
    out.push(base(Mode::HighGainBaseline));
    out
}

/// Violations of certified decrease checks in a run and its members.
pub fn violations(out: &RunOutput) -> usize {
    let own = out
        .report
        .lyapunov
        .as_ref()
        .filter(|l| l.certified)
        .map_or(0, |l| l.violations);
    own + out.runs.iter().map(violations).sum::<usize>()
}

fn run_one(cfg: &ScenarioConfig, root: &Path, plots: bool) -> Entry {
    let start = Instant::now();
    let dir = root.join(&cfg.name);
    let mut entry = Entry {
        name: cfg.name.clone(),
        mode: cfg.mode,
        dir: dir.clone(),
        status: Status::Ok,
        lyapunov_violations: 0,
        warnings: Vec::new(),
        error: None,
        seconds: 0.0,
    };
    match run_scenario(cfg) {
        Ok(out) => {
            entry.lyapunov_violations = violations(&out);
            entry.warnings = out.report.warnings.clone();
            if entry.lyapunov_violations > 0 {
                entry.status = Status::Violations;
            }
            let written = write_artifacts(&dir, &out)
                .map_err(|e| e.to_string())
                .and_then(|_| if plots { emit_plots(&dir, &out).map(|_| ()) } else { Ok(()) });
            if let Err(e) = written {
                entry.status = Status::Failed;
                entry.error = Some(e);
            }
        }
        Err(e) => {
            entry.status = if e.is_numerical() { Status::Numerical } else { Status::Failed };
            let _ = write_diagnostic_bundle(&dir.join("diagnostic"), cfg, &e);
            entry.error = Some(e.to_string());
        }
    }
    entry.seconds = start.elapsed().as_secs_f64();
    entry
}

/// Runs the scenarios in parallel and writes `root/index.json` in scenario
/// order.
pub fn run_suite(configs: &[ScenarioConfig], root: &Path, plots: bool) -> std::io::Result<Vec<Entry>> {
    std::fs::create_dir_all(root)?;
    let registry = Mutex::new(Vec::with_capacity(configs.len()));
    configs.par_iter().enumerate().for_each(|(k, cfg)| {
        let e = run_one(cfg, root, plots);
        registry.lock().expect("suite registry poisoned").push((k, e));
    });
    let mut entries = registry.into_inner().expect("suite registry poisoned");
    entries.sort_by_key(|(k, _)| *k);
    let entries: Vec<Entry> = entries.into_iter().map(|(_, e)| e).collect();
    let index = serde_json::to_string_pretty(&entries).map_err(std::io::Error::other)?;
    std::fs::write(root.join("index.json"), index + "\n")?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_configs_valid() {
        for smoke in [false, true] {
            let cs = scenarios(smoke);
            let mut names: Vec<&str> = cs.iter().map(|c| c.name.as_str()).collect();
            names.sort();
            names.dedup();
            assert_eq!(names.len(), cs.len());
            for c in &cs {
                c.validate().unwrap();
            }
        }
    }
}
