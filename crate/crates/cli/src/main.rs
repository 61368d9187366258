//! `eraser-sim`: compute the interferometer's detection statistics by
//! analytic densities, Monte Carlo coincidences, pilot-wave trajectory
//! ensembles or the two-qubit reduction, and cross-check them.

use clap::{Args, Parser, Subcommand};
use eraser_core::bell::{self, Basis};
use eraser_core::geometry::ExperimentGeometry;
use eraser_core::pilot::{self, EnsembleOptions, Timeline};
use eraser_core::stats::{
    coincidence_histogram, fringe_visibility, unconditioned_histogram, write_summaries_json,
    DetectorSummary, EventSampler,
};
use eraser_core::verify;
use eraser_core::wave::WaveModel;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Geometry shipped with the binary; used when `--config` is absent.
const DEFAULT_CONFIG: &str = include_str!("../default.json");

#[derive(Parser)]
#[command(
    name = "eraser-sim",
    version,
    about = "Delayed-choice eraser interferometer simulator",
    after_help = "Exit codes: 0 success, 1 computation failure or failed checks, 2 bad configuration."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Geometry JSON file; the built-in configuration when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Put the which-path mirrors in (overrides the config file).
    #[arg(long)]
    mirrors_in: bool,
    /// Seed for every stochastic stage.
    #[arg(long, default_value_t = verify::DEFAULT_SEED)]
    seed: u64,
    /// Histogram bins, and grid points for density profiles.
    #[arg(long, default_value_t = 64)]
    bins: usize,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write analytic density profiles (marginal and per detector) as CSV.
    Density {
        #[command(flatten)]
        common: Common,
    },
    /// Draw joint detection events and write coincidence histograms.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Number of joint detection events.
        #[arg(long, default_value_t = 100_000)]
        n: usize,
    },
    /// Integrate trajectory ensembles for the three eraser timings.
    Trajectories {
        #[command(flatten)]
        common: Common,
        /// Trajectories per timeline.
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Integration step; the convergence-tuned default when omitted.
        #[arg(long)]
        dt: Option<f64>,
        /// Replace the three standard timings by one custom switch time.
        #[arg(long)]
        t_eraser: Option<f64>,
    },
    /// Sample Bell-pair correlation tables for both idler bases.
    Bell {
        #[command(flatten)]
        common: Common,
        /// Shots per table.
        #[arg(long, default_value_t = 10_000)]
        n: u64,
    },
    /// Run every cross-model consistency check and report residuals.
    Check {
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Config(String),
    Compute(String),
}

impl From<eraser_core::Error> for Failure {
    fn from(e: eraser_core::Error) -> Self {
        match e {
            eraser_core::Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Compute(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Compute(format!("io: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load_geometry(common: &Common) -> Result<ExperimentGeometry, Failure> {
    let text = match &common.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?,
        None => DEFAULT_CONFIG.to_string(),
    };
    let mut g = ExperimentGeometry::from_json_str(&text)?;
    // Flags override file values.
    if common.mirrors_in {
        g.mirrors_in = true;
    }
    Ok(g)
}

fn validate_common(common: &Common) -> Result<(), Failure> {
    if common.bins < 2 {
        return Err(Failure::Config(format!(
            "need at least 2 bins, got {}",
            common.bins
        )));
    }
    Ok(())
}

fn create_out_dir(common: &Common) -> Result<(), Failure> {
    fs::create_dir_all(&common.out)
        .map_err(|e| Failure::Config(format!("cannot create {}: {e}", common.out.display())))
}

fn output_file(dir: &Path, name: &str) -> Result<BufWriter<fs::File>, Failure> {
    let path = dir.join(name);
    let file = fs::File::create(&path)
        .map_err(|e| Failure::Config(format!("cannot create {}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Density { common } => {
            validate_common(&common)?;
            let model = WaveModel::new(load_geometry(&common)?)?;
            create_out_dir(&common)?;
            let mut targets = vec![(None, "density_marginal.csv".to_string())];
            for det in model.geometry().reachable_detectors() {
                targets.push((
                    Some(det),
                    format!("density_{}.csv", det.label().to_lowercase()),
                ));
            }
            for (det, name) in targets {
                let mut out = output_file(&common.out, &name)?;
                model.write_density_csv(det, common.bins, &mut out)?;
                out.flush()?;
                println!("wrote {}", common.out.join(name).display());
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Sample { common, n } => {
            validate_common(&common)?;
            if n < 1 {
                return Err(Failure::Config("need at least one event".into()));
            }
            let model = WaveModel::new(load_geometry(&common)?)?;
            let extent = model.geometry().screen_extent;
            let detectors = model.geometry().reachable_detectors();
            let mut sampler = EventSampler::new(model, common.seed)?;
            let events = sampler.take_events(n);
            create_out_dir(&common)?;

            let mut summaries = Vec::new();
            for det in detectors {
                let h = coincidence_histogram(&events, det, common.bins, extent)?;
                let name = format!("coincidence_{}.csv", det.label().to_lowercase());
                let mut out = output_file(&common.out, &name)?;
                h.write_csv(&mut out)?;
                out.flush()?;
                println!("wrote {}", common.out.join(&name).display());
                summaries.push(DetectorSummary {
                    detector: det.label().to_string(),
                    total: h.total,
                    visibility: fringe_visibility(&h).unwrap_or(0.0),
                });
            }
            let all = unconditioned_histogram(&events, common.bins, extent)?;
            let mut out = output_file(&common.out, "unconditioned.csv")?;
            all.write_csv(&mut out)?;
            out.flush()?;
            println!("wrote {}", common.out.join("unconditioned.csv").display());
            summaries.push(DetectorSummary {
                detector: "D0".to_string(),
                total: all.total,
                visibility: fringe_visibility(&all).unwrap_or(0.0),
            });
            let mut out = output_file(&common.out, "summary.json")?;
            write_summaries_json(&summaries, &mut out)?;
            out.flush()?;
            println!("wrote {}", common.out.join("summary.json").display());
            Ok(ExitCode::SUCCESS)
        }

        Command::Trajectories {
            common,
            n,
            dt,
            t_eraser,
        } => {
            validate_common(&common)?;
            if n < 1 {
                return Err(Failure::Config("need at least one trajectory".into()));
            }
            if let Some(dt) = dt {
                if !(dt > 0.0 && dt.is_finite()) {
                    return Err(Failure::Config(format!("dt must be positive, got {dt}")));
                }
            }
            let g = load_geometry(&common)?;
            let timelines: Vec<(String, Timeline)> = match t_eraser {
                Some(t) => vec![("custom".to_string(), Timeline::new(t, &g))],
                None => vec![
                    ("eraser_first".to_string(), Timeline::eraser_first(&g)),
                    ("mid_flight".to_string(), Timeline::mid_flight(&g)),
                    (
                        "eraser_after_screen".to_string(),
                        Timeline::eraser_after_screen(&g),
                    ),
                ],
            };
            create_out_dir(&common)?;
            for (name, timeline) in timelines {
                let mut opts = EnsembleOptions::for_timeline(&g, timeline);
                // Full paths are the point of this mode; record densely.
                opts.record_stride = 5;
                if let Some(dt) = dt {
                    opts.dt = dt;
                    opts.post_switch_dt = dt;
                }
                let ensemble = pilot::sample_ensemble_with(n, &g, timeline, common.seed, &opts)?;
                let csv_name = format!("trajectories_{name}.csv");
                let mut out = output_file(&common.out, &csv_name)?;
                ensemble.write_trajectories_csv(&mut out)?;
                out.flush()?;
                println!("wrote {}", common.out.join(&csv_name).display());
                let json_name = format!("ensemble_{name}.json");
                let mut out = output_file(&common.out, &json_name)?;
                ensemble.write_summary_json(common.bins, &mut out)?;
                out.flush()?;
                println!("wrote {}", common.out.join(&json_name).display());
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Bell { common, n } => {
            validate_common(&common)?;
            if n < 1 {
                return Err(Failure::Config("need at least one shot".into()));
            }
            create_out_dir(&common)?;
            for (basis, name) in [
                (Basis::Diagonal, "bell_diagonal.json"),
                (Basis::Computational, "bell_computational.json"),
            ] {
                let table = bell::correlation_table(n, basis, common.seed);
                let mut out = output_file(&common.out, name)?;
                table.write_json(&mut out)?;
                out.flush()?;
                println!("wrote {}", common.out.join(name).display());
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Check { common } => {
            validate_common(&common)?;
            let g = load_geometry(&common)?;
            let reports = verify::run_all(&g, common.seed)?;
            let mut all_passed = true;
            for r in &reports {
                println!("{}", r.summary_line());
                all_passed &= r.passed;
            }
            if all_passed {
                println!("all {} checks passed", reports.len());
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("some checks failed");
                Ok(ExitCode::from(1))
            }
        }
    }
}
