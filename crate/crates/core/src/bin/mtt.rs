use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use mtt::io::{parse_detections, parse_embeddings, parse_mot_rows, write_detections, write_embeddings, write_tracks};
use mtt::metrics::clear_mot;
use mtt::pipeline::{clusters_csv, partition_csv, subsequences, RunCounts, StageTimings};
use mtt::partition::CountCurve;
use mtt::sim::{generate, write_gt, SceneSpec};
use mtt::{Config, MttError, PartitionMode, RunOptions};

#[derive(Parser)]
#[command(name = "mtt", version, about = "Multi-tracklet multi-object tracker")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Track detections and write MOT-format tracks.
    Track {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        emb: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// adaptive | fixed:L | sliding:L
        #[arg(long, default_value = "adaptive")]
        mode: String,
        /// Write a per-event log next to the output.
        #[arg(long)]
        log_events: bool,
        /// Directory for partition/cluster CSVs, graph dumps and round diagnostics.
        #[arg(long)]
        debug_dir: Option<PathBuf>,
    },
    /// Generate a synthetic scene from a JSON spec.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare tracks against ground truth.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long)]
        json: bool,
    },
    /// Print the per-frame partition table.
    PartitionDebug {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "adaptive")]
        mode: String,
    },
}

#[derive(Serialize)]
struct RunManifest {
    config: Config,
    mode: PartitionMode,
    dets: PathBuf,
    emb: Option<PathBuf>,
    config_path: Option<PathBuf>,
    output: PathBuf,
    counts: RunCounts,
    timings: StageTimings,
}

fn exit_code(e: &MttError) -> u8 {
    match e {
        MttError::Io { .. } | MttError::Config(_) | MttError::Scene(_) | MttError::Parse { .. } | MttError::DimensionMismatch { .. } => 2,
        MttError::Budget { .. } => 3,
        _ => 1,
    }
}

fn require(path: &Path, what: &str) -> Result<(), MttError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(MttError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} not found")),
        })
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, MttError> {
    let Some(p) = path else { return Ok(Config::default()) };
    require(p, "config")?;
    let (cfg, warnings) = Config::load(p)?;
    for w in warnings {
        log::warn!("{w}");
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, content: impl AsRef<[u8]>) -> Result<(), MttError> {
    std::fs::write(path, content).map_err(|e| MttError::io(path, e))
}

/// Writes to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[allow(clippy::too_many_arguments)]
fn cmd_track(
    dets: &Path,
    emb: Option<&Path>,
    out: &Path,
    config: Option<&Path>,
    mode: &str,
    log_events: bool,
    debug_dir: Option<&Path>,
) -> Result<(), MttError> {
    require(dets, "detection file")?;
    if let Some(e) = emb {
        require(e, "embedding file")?;
    }
    let cfg = load_config(config)?;
    let mode: PartitionMode = mode.parse()?;
    let fs = parse_detections(dets)?;
    let table = emb.map(|e| parse_embeddings(e, &fs)).transpose()?;

    let opts = RunOptions {
        log_events,
        debug: debug_dir.is_some(),
    };
    let result = mtt::run(&fs, table.as_ref(), &cfg, mode, &opts)?;
    write_tracks(&result.tracks, out)?;

    let manifest = RunManifest {
        config: cfg,
        mode,
        dets: dets.to_path_buf(),
        emb: emb.map(Path::to_path_buf),
        config_path: config.map(Path::to_path_buf),
        output: out.to_path_buf(),
        counts: result.counts.clone(),
        timings: result.timings.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| MttError::Numerical(e.to_string()))?;
    write_file(&with_suffix(out, ".manifest.json"), json + "\n")?;

    if log_events {
        let mut text = result.events.join("\n");
        text.push('\n');
        write_file(&with_suffix(out, ".events.log"), text)?;
    }
    if let Some(dir) = debug_dir {
        std::fs::create_dir_all(dir).map_err(|e| MttError::io(dir, e))?;
        write_file(&dir.join("partition.csv"), partition_csv(&result.curve, &result.subsequences))?;
        write_file(&dir.join("clusters.csv"), clusters_csv(&result.clusters))?;
        let inst = dir.join("instances");
        std::fs::create_dir_all(&inst).map_err(|e| MttError::io(&inst, e))?;
        for (id, dump) in &result.instances {
            write_file(&inst.join(format!("cluster_{id}.txt")), dump)?;
        }
        let rounds: Vec<String> = result
            .rounds
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain struct"))
            .collect();
        write_file(&dir.join("rounds.jsonl"), rounds.join("\n") + "\n")?;
    }
    log::info!(
        "{} tracks from {} tracklets in {} subsequences",
        result.counts.final_tracks,
        result.counts.tracklets,
        result.counts.subsequences
    );
    Ok(())
}

fn cmd_simulate(spec: &Path, out_dir: &Path) -> Result<(), MttError> {
    require(spec, "scene spec")?;
    let spec = SceneSpec::load(spec)?;
    let (truth, fs, emb) = generate(&spec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| MttError::io(out_dir, e))?;
    write_detections(&fs, &out_dir.join("dets.txt"))?;
    write_embeddings(&emb, &out_dir.join("emb.txt"))?;
    write_gt(&truth, &out_dir.join("gt.txt"))?;
    Ok(())
}

fn cmd_evaluate(gt: &Path, tracks: &Path, iou: f64, json: bool) -> Result<(), MttError> {
    require(gt, "ground-truth file")?;
    require(tracks, "track file")?;
    if !(0.0..=1.0).contains(&iou) {
        return Err(MttError::Config(format!("--iou must lie in [0, 1], got {iou}")));
    }
    let gt_rows = parse_mot_rows(gt)?;
    let pred = parse_mot_rows(tracks)?;
    let gt_last = gt_rows.iter().map(|r| r.frame).max().unwrap_or(0);
    let outside = pred.iter().filter(|r| r.frame > gt_last).count();
    if outside > 0 {
        log::warn!("{outside} track rows lie beyond the last ground-truth frame {gt_last}");
    }
    let report = clear_mot(&gt_rows, &pred, iou);
    if json {
        emit(&(serde_json::to_string_pretty(&report).expect("plain struct") + "\n"));
    } else {
        emit(&report.to_string());
    }
    Ok(())
}

fn cmd_partition_debug(dets: &Path, config: Option<&Path>, mode: &str) -> Result<(), MttError> {
    require(dets, "detection file")?;
    let cfg = load_config(config)?;
    let mode: PartitionMode = mode.parse()?;
    let fs = parse_detections(dets)?;
    let curve = CountCurve::new(fs.counts(), cfg.w_median)?;
    let subs = subsequences(&curve, &cfg, mode)?;
    emit(&partition_csv(&curve, &subs));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(n) = std::env::var("MTT_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n >= 1 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not size thread pool: {e}");
                }
            }
            _ => log::warn!("ignoring invalid MTT_THREADS={n}"),
        }
    }

    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Track {
            dets,
            emb,
            out,
            config,
            mode,
            log_events,
            debug_dir,
        } => cmd_track(dets, emb.as_deref(), out, config.as_deref(), mode, *log_events, debug_dir.as_deref()),
        Cmd::Simulate { spec, out_dir } => cmd_simulate(spec, out_dir),
        Cmd::Evaluate { gt, tracks, iou, json } => cmd_evaluate(gt, tracks, *iou, *json),
        Cmd::PartitionDebug { dets, config, mode } => cmd_partition_debug(dets, config.as_deref(), mode),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
