mod plots;
mod suite;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use neurofield::control::audit_restrictions;
use neurofield::delay::write_trajectory_csv;
use neurofield::experiment::{
    observer_inputs, run_scenario, write_artifacts, write_diagnostic_bundle, write_mat, KernelDump, Mode, RunOutput,
    ScenarioConfig,
};
use neurofield::observer::{alpha_star, check_dissipativity, replay_observer, spawn_measurement_feed, MeasurementLog, NoiseHook};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

#[derive(Parser)]
#[command(name = "neurofield", version, about = "Delayed neural field experiments with adaptive observers and feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run {
        config: PathBuf,
        /// Parent of the run directory, which is named after the scenario.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        no_plots: bool,
    },
    /// Run the perturbation sweep of a scenario file, whatever its mode.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        no_plots: bool,
    },
    /// Run every reference scenario.
    Suite {
        #[arg(long, default_value = "runs/suite")]
        out: PathBuf,
        /// Reduced excitation, coarse grid and short horizons.
        #[arg(long)]
        smoke: bool,
        #[arg(long)]
        no_plots: bool,
    },
    /// Dissipativity, gain threshold and restriction audit, without integrating.
    Check { config: PathBuf },
    /// Feed a logged trajectory's z1 to the observer.
    Replay {
        /// `trajectory.csv` of an earlier run.
        log: PathBuf,
        /// Scenario whose model and inputs produced the log.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs/replay")]
        out: PathBuf,
        /// Standard deviation of Gaussian noise added to each measurement.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Print the preset scenario file of a mode.
    Preset {
        mode: PresetMode,
        #[arg(long)]
        smoke: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetMode {
    OpenLoopObserver,
    ExactStabilization,
    SimultaneousPe,
    /// Simultaneous loop meeting every restriction.
    Certified,
    PerturbationSweep,
    DriftStudy,
    HighGainBaseline,
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Threshold(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Numerical(_) => 2,
            Failure::Threshold(_) => 3,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn load(path: &Path) -> Result<ScenarioConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    ScenarioConfig::from_toml(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn print_summary(out: &RunOutput) {
    let r = &out.report;
    match r.times.last() {
        Some(t) => println!("{} ({}): {} records up to t = {t}", r.name, r.mode.name(), r.times.len()),
        None => println!("{} ({})", r.name, r.mode.name()),
    }
    for s in &r.summary {
        let steady = s.steady.map_or(String::new(), |st| format!("  steady max {:.4e} mean {:.4e}", st.max, st.avg));
        println!("  {:<12} {:.4e} -> {:.4e}{steady}", s.name, s.initial, s.last);
    }
    if let Some(h) = r.kernel_half_life.or(r.kernel_half_life_estimate) {
        let how = if r.kernel_half_life.is_some() { "" } else { " (extrapolated)" };
        println!("  kernel error half-life {h:.4e}{how}");
    }
    if let Some(l) = &r.lyapunov {
        let kind = if l.certified { "certified" } else { "not certified" };
        println!("  decrease check: {} violations over {} samples, {kind}", l.violations, l.samples);
    }
    if let Some(pe) = &r.pe {
        println!("  excitation level over windows of {}: min {:.4e}, last {:.4e}", pe.window, pe.min, pe.last);
    }
    if let Some(s) = &r.sweep {
        println!("  {:>10} {:>12} {:>12} oscillating", "amplitude", "steady max", "steady mean");
        for row in &s.rows {
            println!("  {:>10} {:>12.4e} {:>12.4e} {}", row.amplitude, row.steady_max, row.steady_avg, row.oscillating);
        }
    }
    if let Some(d) = &r.drift {
        println!(
            "  drift at amplitude {}: kernel error {:.6} -> {:.6} -> {:.6}, u1 max over the final third {:.4e}",
            d.amplitude, d.w_initial, d.w_mid, d.w_end, d.u1_max_final_third
        );
    }
    for w in &r.warnings {
        println!("  warning: {w}");
    }
}

fn execute(cfg: &ScenarioConfig, out: &Path, plots: bool) -> Result<(), Failure> {
    let dir = out.join(&cfg.name);
    let run = match run_scenario(cfg) {
        Ok(run) => run,
        Err(e) if e.is_numerical() => {
            let bundle = dir.join("diagnostic");
            return Err(match write_diagnostic_bundle(&bundle, cfg, &e) {
                Ok(_) => Failure::Numerical(format!("{e}; diagnostic bundle in {}", bundle.display())),
                Err(w) => Failure::Numerical(format!("{e}; writing the diagnostic bundle failed: {w}")),
            });
        }
        Err(e) => return Err(config_err(e)),
    };
    let mut files = write_artifacts(&dir, &run).map_err(config_err)?;
    if plots {
        files.extend(plots::emit_plots(&dir, &run).map_err(config_err)?);
    }
    print_summary(&run);
    println!("wrote {} files under {}", files.len(), dir.display());
    let v = suite::violations(&run);
    if v > 0 {
        return Err(Failure::Threshold(format!("{v} violations of the certified decrease check")));
    }
    Ok(())
}

fn check(cfg: &ScenarioConfig) -> Result<(), Failure> {
    let params = cfg.build_params().map_err(config_err)?;
    let mut failures = Vec::new();
    let d = check_dissipativity(&params);
    println!("{} ({})", cfg.name, cfg.mode.name());
    if params.dims[1] > 0 {
        println!("  dissipativity margin 1 - l22 |w22| = {:.6}", d.margin);
        if !d.holds {
            failures.push("unmeasured subsystem is not dissipative".to_string());
        }
    } else {
        println!("  no unmeasured population");
    }
    match alpha_star(&params) {
        Ok(a) => {
            println!("  gain threshold {a:.6}, gain {}", params.alpha);
            if params.alpha <= a && cfg.mode != Mode::HighGainBaseline {
                failures.push(format!("gain {} does not exceed the threshold {a}", params.alpha));
            }
        }
        Err(e) => println!("  gain threshold undefined: {e}"),
    }
    if params.dims[1] == 0 || cfg.mode == Mode::SimultaneousPe {
        let audit = audit_restrictions(&params);
        for item in &audit.items {
            println!("  restriction ({}): {:?}", item.item, item.status);
        }
        if cfg.mode == Mode::SimultaneousPe {
            if let Err(e) = audit.require() {
                failures.push(e.to_string());
            }
        }
    }
    if failures.is_empty() {
        println!("  ok");
        Ok(())
    } else {
        Err(Failure::Threshold(failures.join("; ")))
    }
}

fn replay(log: &Path, cfg: &ScenarioConfig, out: &Path, noise: f64, seed: u64, stride: usize) -> Result<(), Failure> {
    let params = cfg.build_params().map_err(config_err)?;
    let inputs = observer_inputs(&params).map_err(config_err)?;
    let file = fs::File::open(log).map_err(|e| Failure::Config(format!("{}: {e}", log.display())))?;
    let log = MeasurementLog::from_csv(file).map_err(config_err)?;
    let dt = match log.samples.as_slice() {
        [a, b, ..] => b.t - a.t,
        _ => return Err(Failure::Config("the log needs at least two samples".into())),
    };
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Failure::Config(format!("noise must be a nonnegative number, got {noise}")));
    }
    let hook: Option<NoiseHook> = (noise > 0.0).then(|| {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise).expect("finite deviation");
        Box::new(move |_t: f64, z: &mut [f64]| z.iter_mut().for_each(|v| *v += normal.sample(&mut rng))) as NoiseHook
    });
    let (feed, producer) = spawn_measurement_feed(log, hook);
    let result = replay_observer(params, inputs, feed, dt, stride.max(1));
    producer.join().map_err(|_| Failure::Config("measurement feed thread panicked".into()))?;
    let result = result.map_err(|e| if e.is_numerical() { Failure::Numerical(e.to_string()) } else { config_err(e) })?;
    fs::create_dir_all(out).map_err(config_err)?;
    let csv = fs::File::create(out.join("replay.csv")).map_err(config_err)?;
    write_trajectory_csv(&result.trajectory, std::io::BufWriter::new(csv)).map_err(config_err)?;
    for (name, k) in [("what11", &result.what11), ("what12", &result.what12)] {
        let d = KernelDump::of_kernel(name, k);
        let f = fs::File::create(out.join(format!("{name}.mat"))).map_err(config_err)?;
        write_mat(std::io::BufWriter::new(f), name, d.rows, d.cols, &d.data).map_err(config_err)?;
    }
    let traj = &result.trajectory;
    println!("replayed {} records with step {dt}", traj.times.len());
    if let Some(last) = traj.metrics.last() {
        for (n, v) in traj.metric_names.iter().zip(last) {
            println!("  {n:<12} {v:.4e}");
        }
    }
    println!("wrote replay.csv, what11.mat and what12.mat under {}", out.display());
    Ok(())
}

fn preset(mode: PresetMode, smoke: bool) -> Result<(), Failure> {
    let mode = match mode {
        PresetMode::Certified => {
            print!("{}", ScenarioConfig::certified().to_toml().map_err(config_err)?);
            return Ok(());
        }
        PresetMode::OpenLoopObserver => Mode::OpenLoopObserver,
        PresetMode::ExactStabilization => Mode::ExactStabilization,
        PresetMode::SimultaneousPe => Mode::SimultaneousPe,
        PresetMode::PerturbationSweep => Mode::PerturbationSweep,
        PresetMode::DriftStudy => Mode::DriftStudy,
        PresetMode::HighGainBaseline => Mode::HighGainBaseline,
    };
    let c = if smoke { ScenarioConfig::smoke(mode) } else { ScenarioConfig::preset(mode) };
    print!("{}", c.to_toml().map_err(config_err)?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, out, no_plots } => execute(&load(&config)?, &out, !no_plots),
        Command::Sweep { config, out, no_plots } => {
            let mut cfg = load(&config)?;
            cfg.mode = Mode::PerturbationSweep;
            cfg.validate().map_err(config_err)?;
            execute(&cfg, &out, !no_plots)
        }
        Command::Suite { out, smoke, no_plots } => {
            let entries = suite::run_suite(&suite::scenarios(smoke), &out, !no_plots).map_err(config_err)?;
            let mut worst: Option<Failure> = None;
            for e in &entries {
                println!("{:<40} {:?} ({:.1} s)", e.name, e.status, e.seconds);
                let f = match e.status {
                    suite::Status::Ok => continue,
                    suite::Status::Violations => Failure::Threshold(format!("{}: decrease check violated", e.name)),
                    suite::Status::Numerical => Failure::Numerical(format!("{}: {}", e.name, e.error.clone().unwrap_or_default())),
                    suite::Status::Failed => Failure::Config(format!("{}: {}", e.name, e.error.clone().unwrap_or_default())),
                };
                if worst.as_ref().is_none_or(|w| f.code() > w.code()) {
                    worst = Some(f);
                }
            }
            println!("index written to {}", out.join("index.json").display());
            worst.map_or(Ok(()), Err)
        }
        Command::Check { config } => check(&load(&config)?),
        Command::Replay { log, config, out, noise, seed, stride } => replay(&log, &load(&config)?, &out, noise, seed, stride),
        Command::Preset { mode, smoke } => preset(mode, smoke),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
