//! `afc`: run pit, comb, echo, sweep, theory and fit experiments from a TOML
//! config and write CSV artifacts plus a `manifest.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afc_core::experiment::{
    check_sweep, run_comb, run_echo, run_pit, run_sweep, run_theory, sweep_csv, sweep_summary, ExperimentConfig,
};
use afc_core::population::AbsorptionSpectrum;
use afc_core::probe::fit_comb;
use afc_core::propagation::oracle_csv;
use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Parser, Debug)]
#[command(name = "afc", version, about = "Atomic frequency comb memory simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Closed-form transmission and efficiency curves.
    Theory,
    /// Burn the spectral pit and check that it is empty.
    Pit,
    /// Burn a comb into the pit and fit the readout scan.
    Comb,
    /// Propagate the input pulse through the pit and the comb.
    Echo,
    /// Repeat the echo experiment over burn-back powers.
    Sweep,
    /// Fit a comb to a measured spectrum.
    Fit {
        /// Spectrum CSV with header `nu_MHz,d`.
        #[arg(long)]
        spectrum: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Theory => "theory",
            Command::Pit => "pit",
            Command::Comb => "comb",
            Command::Echo => "echo",
            Command::Sweep => "sweep",
            Command::Fit { .. } => "fit",
        }
    }
}

enum Failure {
    Usage(String),
    Simulation(String),
    Acceptance(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Simulation(_) => 2,
            Failure::Acceptance(_) => 3,
        }
    }
}

impl From<afc_core::Error> for Failure {
    fn from(e: afc_core::Error) -> Self {
        Failure::Simulation(e.to_string())
    }
}

#[derive(Serialize)]
struct OutputEntry {
    file: String,
    sha256: String,
    bytes: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: &'a ExperimentConfig,
    outputs: Vec<OutputEntry>,
    warnings: Vec<String>,
}

struct Outputs {
    dir: PathBuf,
    written: Vec<OutputEntry>,
    warnings: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            warnings: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), Failure> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| Failure::Simulation(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(OutputEntry {
            file: name.to_owned(),
            sha256: hex::encode(Sha256::digest(contents.as_bytes())),
            bytes: contents.len(),
        });
        Ok(())
    }

    fn warn(&mut self, warnings: &[String]) {
        for w in warnings {
            if !self.warnings.contains(w) {
                self.warnings.push(w.clone());
            }
        }
    }

    fn finish(mut self, command: &str, config: &ExperimentConfig) -> Result<(), Failure> {
        let entries = std::mem::take(&mut self.written);
        let manifest = Manifest {
            command,
            config,
            outputs: entries,
            warnings: self.warnings,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Simulation(e.to_string()))? + "\n";
        fs::write(self.dir.join("manifest.json"), json).map_err(|e| Failure::Simulation(e.to_string()))
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    if let Some(seq) = &cfg.sequence.path {
        if !seq.is_file() {
            return Err(Failure::Usage(format!("sequence file {} not found", seq.display())));
        }
    }
    Ok(cfg)
}

fn fit_csv_or_error(fit: &afc_core::Result<afc_core::probe::CombFit>) -> String {
    match fit {
        Ok(f) => f.to_csv(),
        Err(e) => format!("# fit failed: {e}\n"),
    }
}

fn execute(cli: &Cli) -> Result<String, Failure> {
    let cfg = load_config(cli.config.as_deref())?;
    let mut out = Outputs::new(&cli.out)?;
    let mut summary = String::new();
    match &cli.command {
        Command::Theory => {
            let t = run_theory(&cfg)?;
            out.write("theory_curves.csv", &t.curves)?;
            out.write("theory_optimum.csv", &t.optimum)?;
            if let Some(rows) = &t.oracle {
                out.write("oracle.csv", &oracle_csv(rows))?;
            }
            let (d, eta) = afc_core::analytic::optimal_depth(f64::INFINITY);
            let _ = writeln!(summary, "optimum: eta = {eta:.5} at d_eff = {d}");
        }
        Command::Pit => {
            let pit = run_pit(&cfg)?;
            out.warn(&pit.report.warnings);
            out.write("pit_before.csv", &pit.before.to_csv())?;
            out.write("pit_after.csv", &pit.after.to_csv())?;
            out.write("population.csv", &pit.field.to_csv())?;
            let [lo, hi] = cfg.acceptance.pit_range_mhz;
            let _ = writeln!(
                summary,
                "max depth on [{lo}, {hi}] MHz: {:.4} (limit {}); max pit width {} MHz",
                pit.max_depth_in_range, cfg.acceptance.pit_max_depth, pit.max_pit_width_mhz
            );
            if !pit.passed(&cfg.acceptance) {
                out.finish(cli.command.name(), &cfg)?;
                return Err(Failure::Acceptance(format!(
                    "pit not empty: depth {:.4} exceeds {} inside [{lo}, {hi}] MHz",
                    pit.max_depth_in_range, cfg.acceptance.pit_max_depth
                )));
            }
        }
        Command::Comb => {
            let pit = run_pit(&cfg)?;
            let comb = run_comb(&cfg, &pit.field)?;
            out.warn(&pit.report.warnings);
            out.warn(&comb.report.warnings);
            out.write("comb_storage.csv", &comb.strong.to_csv())?;
            out.write("comb_readout.csv", &comb.readout.to_csv())?;
            out.write("comb_inferred.csv", &comb.inferred.to_csv())?;
            out.write("fit.csv", &fit_csv_or_error(&comb.fit))?;
            out.write("population.csv", &comb.field.to_csv())?;
            if let Ok(f) = &comb.fit {
                let p = f.params;
                let _ = writeln!(
                    summary,
                    "d = {:.3}, gamma = {:.1} kHz, Delta = {:.4} MHz, F = {:.2}",
                    p.d,
                    p.gamma_khz,
                    p.delta_mhz,
                    p.finesse()
                );
            }
        }
        Command::Echo => {
            let pit = run_pit(&cfg)?;
            let echo = run_echo(&cfg, &pit.field)?;
            out.warn(&pit.report.warnings);
            out.warn(&echo.comb.report.warnings);
            out.warn(&echo.run.measurement.warnings);
            out.write("spectrum_empty.csv", &echo.empty.to_csv())?;
            out.write("spectrum_comb.csv", &echo.prepared.to_csv())?;
            out.write("fit.csv", &fit_csv_or_error(&echo.comb.fit))?;
            out.write("trace_reference.csv", &echo.run.reference.to_csv())?;
            out.write("trace_output.csv", &echo.run.output.to_csv())?;
            let m = &echo.run.measurement;
            let mut csv = String::from("T_meas,eta_meas,delay_us,d,gamma_kHz,delta_MHz,F,T_theory,eta_theory\n");
            let (p, th) = match (&echo.comb.fit, echo.theory()) {
                (Ok(f), Some(t)) => (Some(f.params), Some(t)),
                _ => (None, None),
            };
            let nan = f64::NAN;
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{}",
                m.transmission,
                m.eta,
                echo.delay_us(),
                p.map_or(nan, |p| p.d),
                p.map_or(nan, |p| p.gamma_khz),
                p.map_or(nan, |p| p.delta_mhz),
                p.map_or(nan, |p| p.finesse()),
                th.map_or(nan, |t| t.transmission),
                th.map_or(nan, |t| t.efficiency)
            );
            out.write("echo.csv", &csv)?;
            let _ = writeln!(
                summary,
                "T = {:.4}, eta = {:.4}, echo {:.1} ns after the transmitted pulse",
                m.transmission,
                m.eta,
                echo.delay_us() * 1e3
            );
        }
        Command::Sweep => {
            let pit = run_pit(&cfg)?;
            out.warn(&pit.report.warnings);
            let rows = run_sweep(&cfg, &pit.field, cli.workers)?;
            out.write("sweep.csv", &sweep_csv(&rows, &cfg.sweep.finesses))?;
            out.write("sweep_summary.csv", &sweep_summary(&rows))?;
            let failed = rows.iter().filter(|r| !r.ok()).count();
            let checks = check_sweep(&rows, &cfg.sweep.finesses);
            out.warn(&checks.notes);
            let _ = writeln!(summary, "{} points, {failed} failed", rows.len());
        }
        Command::Fit { spectrum } => {
            let text = fs::read_to_string(spectrum)
                .map_err(|e| Failure::Usage(format!("cannot read spectrum {}: {e}", spectrum.display())))?;
            let spec = AbsorptionSpectrum::from_csv(&text).map_err(|e| Failure::Usage(e.to_string()))?;
            let fit = fit_comb(&spec)?;
            out.write("fit.csv", &fit.to_csv())?;
            let p = fit.params;
            let _ = writeln!(
                summary,
                "{} peaks: d = {:.3}, gamma = {:.1} kHz, Delta = {:.4} MHz, F = {:.2}",
                p.n_peaks,
                p.d,
                p.gamma_khz,
                p.delta_mhz,
                p.finesse()
            );
        }
    }
    out.finish(cli.command.name(), &cfg)?;
    Ok(summary)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            let (kind, msg) = match &f {
                Failure::Usage(m) => ("usage error", m),
                Failure::Simulation(m) => ("simulation failed", m),
                Failure::Acceptance(m) => ("acceptance check failed", m),
            };
            eprintln!("afc: {kind}: {msg}");
            ExitCode::from(f.code())
        }
    }
}
