use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use oaslam::beacons::{solve_track, BeaconSet, RangeObservation};
use oaslam::dataset::{read_dataset, read_ndjson, write_ndjson};
use oaslam::eval::{ape, default_ablation_suite, map_precision_recall, run_ablation, trajectory_csv, AblationRow, GroundTruth};
use oaslam::sim::simulate;
use oaslam::slam::run;
use oaslam::{Landmark, Record, RunConfig, TrajectoryPoint, TruthRecord};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "oaslam", version, about = "Object-landmark SLAM with camera and imaging sonar")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset and its ground-truth sidecar.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the SLAM pipeline over a dataset.
    Slam {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Score a trajectory and/or map against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Solve vehicle positions and headings from beacon ranges.
    Beacons {
        #[command(flatten)]
        common: Common,
        /// NDJSON with `beacon_ranges` records; other record types are skipped.
        #[arg(long)]
        ranges: PathBuf,
    },
    /// Run the standard ablation suite on one dataset.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already print their cause; skip repeats.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.ends_with(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            let solver = e
                .chain()
                .filter_map(|c| c.downcast_ref::<oaslam::Error>())
                .any(oaslam::Error::is_solver_failure);
            ExitCode::from(if solver { 2 } else { 1 })
        }
    }
}

/// Loads the configuration, applies the seed override and echoes the
/// effective result into the output directory.
fn setup(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    write_text(&common.out.join("config.toml"), &cfg.to_toml_string())?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json_line<T: Serialize>(path: &Path, item: &T) -> Result<()> {
    write_ndjson(path, std::slice::from_ref(item))?;
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate { common } => {
            let cfg = setup(&common)?;
            let out = simulate(&cfg)?;
            write_ndjson(&common.out.join("dataset.ndjson"), &out.records)?;
            write_ndjson(&common.out.join("truth.ndjson"), &out.truth)?;
            println!(
                "simulated {} records over {} poses into {}",
                out.records.len(),
                out.trajectory.len(),
                common.out.display()
            );
        }
        Command::Slam { common, dataset } => {
            let cfg = setup(&common)?;
            let records = read_dataset(&dataset)?;
            let out = run(&records, &cfg)?;
            write_ndjson(&common.out.join("map.ndjson"), &out.map.landmarks)?;
            write_ndjson(&common.out.join("trajectory.ndjson"), &out.map.trajectory)?;
            write_ndjson(&common.out.join("decisions.ndjson"), &out.decisions)?;
            write_json_line(&common.out.join("report.ndjson"), &out.report)?;
            write_text(&common.out.join("trajectory.csv"), &trajectory_csv(&out.map.trajectory))?;
            let r = &out.report;
            println!(
                "{} landmarks, {} poses, {} factors, final cost {:.6e}, {} iterations",
                r.landmarks, r.poses, r.factors, r.final_cost, r.iterations
            );
        }
        Command::Eval {
            common,
            truth,
            trajectory,
            map,
        } => {
            if trajectory.is_none() && map.is_none() {
                bail!("eval needs --trajectory, --map or both");
            }
            let cfg = setup(&common)?;
            let gt = GroundTruth::from_records(&read_ndjson::<TruthRecord>(&truth)?);
            let mut text = String::new();
            let mut lines: Vec<serde_json::Value> = Vec::new();
            if let Some(path) = trajectory {
                let est: Vec<TrajectoryPoint> = read_ndjson(&path)?;
                let a = ape(&est, &gt.poses, cfg.eval.max_skew, cfg.eval.align)?;
                writeln!(
                    text,
                    "APE {:.6} m over {} paired samples ({:?} frame)",
                    a.ape, a.pairs, a.alignment
                )?;
                lines.push(serde_json::json!({ "metric": "ape", "report": a }));
            }
            if let Some(path) = map {
                let landmarks: Vec<Landmark> = read_ndjson(&path)?;
                let m = map_precision_recall(&landmarks, &gt, cfg.eval.match_radius)?;
                writeln!(
                    text,
                    "precision {:.4} recall {:.4} ({} matched, {} false positives, {} missed, radius {} m){}",
                    m.precision,
                    m.recall,
                    m.matches.len(),
                    m.false_positives.len(),
                    m.false_negatives.len(),
                    m.radius,
                    if m.empty_map { ", map empty" } else { "" }
                )?;
                lines.push(serde_json::json!({ "metric": "map", "report": m }));
            }
            write_text(&common.out.join("eval.txt"), &text)?;
            write_ndjson(&common.out.join("eval.ndjson"), &lines)?;
            print!("{text}");
        }
        Command::Beacons { common, ranges } => {
            let cfg = setup(&common)?;
            let set = BeaconSet::new(cfg.beacons.positions.clone())?;
            let records: Vec<Record> = read_ndjson(&ranges)?;
            let obs: Vec<RangeObservation> = records.iter().filter_map(Record::range_observation).collect();
            let track = solve_track(&obs, &set, cfg.beacons.initial_guess)?;
            write_ndjson(&common.out.join("track.ndjson"), &track)?;
            let fixes = track.iter().filter(|p| matches!(p, oaslam::beacons::TrackPoint::Fix { .. })).count();
            println!("{fixes} fixes, {} gaps", track.len() - fixes);
        }
        Command::Ablate {
            common,
            dataset,
            truth,
        } => {
            let cfg = setup(&common)?;
            let records = read_dataset(&dataset)?;
            let gt = GroundTruth::from_records(&read_ndjson::<TruthRecord>(&truth)?);
            let rows = run_ablation(&records, &gt, &default_ablation_suite(&cfg))?;
            let table = ablation_table(&rows);
            write_text(&common.out.join("ablation.txt"), &table)?;
            write_ndjson(&common.out.join("ablation.ndjson"), &rows)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = format!("{:<24} {:>10} {:>10} {:>8} {:>10}\n", "config", "APE (m)", "precision", "recall", "landmarks");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<24} {:>10.4} {:>10.3} {:>8.3} {:>10}",
            r.name, r.ape, r.precision, r.recall, r.landmarks
        );
    }
    s
}
