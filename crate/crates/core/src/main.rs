use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use bubblestereo::geometry::CalibrationFile;
use bubblestereo::imaging::DirectorySource;
use bubblestereo::pipeline::{self, aggregate, exit_code, CountedDump, PipelineConfig};
use bubblestereo::simulator::{generate, SceneConfig};
use bubblestereo::{Error, Result};

/// Stereo reconstruction and counting of rising gas bubbles.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene to PGM sequences plus ground_truth.json.
    Simulate {
        /// Scene config (JSON); defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; must be empty or absent.
        #[arg(long)]
        out: PathBuf,
    },
    /// Process two sequences into a bubble-stream report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Refine the relative camera pose from bubble silhouettes and write a new calibration file.
    Recalibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a counted-bubble dump (counted.json) into a report.
    Report {
        #[arg(long)]
        counted: PathBuf,
        /// Pipeline config supplying histogram bin widths.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a config file with every default filled in.
    Defaults {
        #[arg(value_enum)]
        kind: ConfigKind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ConfigKind {
    Scene,
    Pipeline,
    Calibration,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate { config, out } => {
            let cfg = match config {
                Some(p) => SceneConfig::load(&p)?,
                None => SceneConfig::default(),
            };
            let truth = generate(&cfg, &out)?;
            let frames = truth.triggers.len();
            println!(
                "{} triggers, {} bubbles, {:.3} ml emitted -> {}",
                frames,
                truth.bubbles.len(),
                truth.emitted_volume_mm3() / 1000.0,
                out.display()
            );
        }
        Command::Run { config, out } => {
            let cfg = PipelineConfig::load(&config)?;
            let result = pipeline::run(&cfg)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            pipeline::write_run(&result, &dir)?;
            let r = &result.report;
            println!(
                "{} bubbles, {:.4} ml, {:.5} ml/s, d_eq {:.3} ± {:.3} mm, rise {:.2} cm/s -> {}",
                r.bubble_count,
                r.total_volume_ml,
                r.flow_rate_ml_s,
                r.equivalent_diameter_mm.mean,
                r.equivalent_diameter_mm.std,
                r.rise_velocity_cm_s.mean,
                dir.display()
            );
        }
        Command::Recalibrate { config, out } => {
            let mut cfg = PipelineConfig::load(&config)?;
            cfg.self_calibration.enabled = true;
            cfg.validate()?;
            cfg.validate_paths()?;
            let rig0 = CalibrationFile::load(&cfg.calibration)
                .and_then(|c| c.to_rig())
                .map_err(|e| Error::Config(format!("{}: {e}", cfg.calibration.display())))?;
            let source = DirectorySource::open(&cfg.cam1_dir, cfg.cam2_dir())?;
            let (rig, summary) = pipeline::recalibrate(&cfg, &source, &rig0)?;
            CalibrationFile::from_rig(&rig, true).save(&out)?;
            println!(
                "{} bubbles, epipolar error {:.3} -> {:.3} px -> {}",
                summary.observations,
                summary.epipolar_before_px,
                summary.epipolar_after_px,
                out.display()
            );
        }
        Command::Report { counted, config, out } => {
            let bins = match config {
                Some(p) => PipelineConfig::load(&p)?.histograms,
                None => Default::default(),
            };
            let text = std::fs::read_to_string(&counted).map_err(|e| Error::Config(format!("{}: {e}", counted.display())))?;
            let dump: CountedDump =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", counted.display())))?;
            let mut report = aggregate(&dump.bubbles, dump.duration_s, &bins)?;
            report.start_time_us = dump.start_time_us;
            report.write_all(&out)?;
            println!("{} bubbles, {:.4} ml -> {}", report.bubble_count, report.total_volume_ml, out.display());
        }
        Command::Defaults { kind } => {
            let text = match kind {
                ConfigKind::Scene => serde_json::to_string_pretty(&SceneConfig::default())?,
                ConfigKind::Pipeline => serde_json::to_string_pretty(&PipelineConfig::default())?,
                ConfigKind::Calibration => serde_json::to_string_pretty(&CalibrationFile::from_rig(
                    &bubblestereo::geometry::StereoRig::laboratory_reference(),
                    false,
                ))?,
            };
            println!("{text}");
        }
    }
    Ok(())
}
