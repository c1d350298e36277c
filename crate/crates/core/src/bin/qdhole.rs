use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qdhole::config::RunConfig;
use qdhole::experiments::analysis::analyze;
use qdhole::experiments::{self, ExperimentKind, ScanDirection};
use qdhole::levels::ChargeSpecies;
use qdhole::output::{self, Provenance};
use qdhole::reproduce::{reproduce, Preset};
use qdhole::{Error, Result};

#[derive(Parser)]
#[command(name = "qdhole", version, about = "Quantum-dot spin qubit experiment simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write <kind>_<seed>.csv, .report.json and .svg.
    Run {
        /// rabi, ramsey, bloch-map, echo-fine, echo-decay, pump-scan, hysteresis-ramsey or t1
        kind: String,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run a baked-in preset: 2C, 2D, 2E, 3A-3D, 4A-4F.
    Reproduce {
        preset: String,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Check a configuration, run a one-point smoke test and print the resolved values.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunOpts {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Shots per point.
    #[arg(long)]
    shots: Option<u64>,
    /// Worker threads for sweeps without feedback.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, overrides_with = "no_plot")]
    plot: bool,
    #[arg(long = "no-plot")]
    no_plot: bool,
    #[arg(long)]
    species: Option<String>,
    #[arg(long)]
    direction: Option<String>,
    /// Exit with status 3 when a fit fails to converge.
    #[arg(long)]
    require_fit: bool,
}

fn load(path: Option<&PathBuf>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.validate_sweeps()?;
    Ok(cfg)
}

fn parse_species(s: &str) -> Result<ChargeSpecies> {
    match s.trim().to_ascii_lowercase().as_str() {
        "hole" => Ok(ChargeSpecies::Hole),
        "electron" => Ok(ChargeSpecies::Electron),
        _ => Err(Error::Config(format!("unknown species '{s}' (expected hole or electron)"))),
    }
}

impl RunOpts {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = load(self.config.as_ref())?;
        let e = &mut cfg.experiment;
        if let Some(s) = self.seed {
            e.seed = s;
        }
        if let Some(o) = &self.out {
            e.out_dir = o.clone();
        }
        if let Some(n) = self.shots {
            e.shots_per_point = n;
        }
        if self.threads.is_some() {
            e.threads = self.threads;
        }
        if self.plot {
            e.plot = true;
        }
        if self.no_plot {
            e.plot = false;
        }
        if let Some(s) = &self.species {
            e.species = parse_species(s)?;
        }
        if let Some(d) = &self.direction {
            e.direction = Some(d.parse::<ScanDirection>()?);
        }
        Ok(cfg)
    }
}

fn cmd_run(kind: &str, opts: &RunOpts) -> Result<()> {
    let kind: ExperimentKind = kind.parse()?;
    let cfg = opts.resolve()?;
    let setup = cfg.setup()?;
    let exp = cfg.experiment(kind, &setup)?;
    let result = experiments::run(&setup, &exp)?;
    let analysis = analyze(&result, &setup.for_species(exp.charge_species))?;
    let prov = Provenance::new(exp.seed, cfg.echo()?);
    let stem = format!("{}_{}", kind, exp.seed);
    let files = output::write_artifacts(&cfg.experiment.out_dir, &stem, &result, &analysis, &prov, cfg.experiment.plot, None)?;
    println!("{kind}: {} points, wrote {}", result.n_points(), files.csv.display());
    for (k, v) in &analysis.derived {
        println!("  {k} = {v:.6e}");
    }
    if let Some(h) = &analysis.hysteresis {
        println!("  hysteresis = {} (metric {:.4}, threshold {:.4})", h.detected, h.metric, h.threshold);
    }
    for f in &analysis.failures {
        eprintln!("warning: {f}");
    }
    if opts.require_fit {
        analysis.require_fits()?;
    }
    Ok(())
}

fn cmd_reproduce(preset: &str, opts: &RunOpts) -> Result<()> {
    let preset: Preset = preset.parse()?;
    let cfg = opts.resolve()?;
    let outcome = reproduce(preset, &cfg)?;
    let prov = Provenance::new(cfg.experiment.seed, cfg.echo()?);
    let dir = &cfg.experiment.out_dir;
    for r in &outcome.runs {
        let extra = serde_json::json!({ "preset": preset.id(), "summary": outcome.summary });
        let files = output::write_artifacts(dir, &r.stem, &r.result, &r.analysis, &prov, false, Some(extra))?;
        if cfg.experiment.plot {
            let svg = r.svg.clone().unwrap_or_else(|| output::svg_for(&r.result, &r.stem, &prov));
            std::fs::write(dir.join(format!("{}.svg", r.stem)), svg)?;
        }
        println!("{preset}: wrote {}", files.csv.display());
    }
    println!("{}", serde_json::to_string_pretty(&outcome.summary).unwrap_or_default());
    if opts.require_fit {
        outcome.require_fits()?;
    }
    Ok(())
}

fn cmd_validate(path: Option<&PathBuf>) -> Result<()> {
    let cfg = load(path)?;
    let setup = cfg.setup()?;
    for kind in ExperimentKind::ALL {
        let exp = cfg.experiment(kind, &setup)?;
        experiments::check_sequences(&setup, &exp)?;
    }
    let mut smoke = cfg.experiment(ExperimentKind::Rabi, &setup)?;
    smoke.axes[0].values = vec![setup.calibrated()?.pi_power];
    smoke.shots_per_point = 100;
    smoke.draws_per_point = 10;
    let r = experiments::run(&setup, &smoke)?;
    println!("ok: smoke π pulse gives {:.4} counts/shot", r.series[0].mean_counts[0]);
    print!("{}", cfg.echo()?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match &cli.command {
        Command::Run { kind, opts } => cmd_run(kind, opts),
        Command::Reproduce { preset, opts } => cmd_reproduce(preset, opts),
        Command::Validate { config } => cmd_validate(config.as_ref()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
