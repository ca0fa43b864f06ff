use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;

use clap::{Args, Parser, Subcommand};

use tracklink::config::RunConfig;
use tracklink::dataio::{
    embed_tracklets, generate, read_embeddings, read_ground_truth, read_sequence, read_tracks, write_sequence,
    write_tracks, EMBEDDINGS_FILE,
};
use tracklink::metrics::{evaluate, hpr, EvalReport};
use tracklink::pipeline::{associate, load_model, par_map, run_pipeline, save_model, track, train_model};
use tracklink::{Error, Result, SequenceBundle};

fn defaults_help() -> &'static str {
    static TEXT: OnceLock<String> = OnceLock::new();
    TEXT.get_or_init(|| format!("Configuration keys and defaults:\n{}", RunConfig::documented_defaults()))
}

/// Offline two-stage multi-object tracker.
#[derive(Parser, Debug)]
#[command(name = "tracklink", version, after_help = defaults_help())]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set stage1.th_c=0.3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Top-level seed; overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sequences processed concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic sequence directories.
    Synth {
        /// Output directory; with `--count` above 1, one subdirectory per sequence.
        #[arg(long)]
        out: PathBuf,
        /// Number of sequences, seeded `synth.seed`, `synth.seed + 1`, ...
        #[arg(long, default_value_t = 1)]
        count: u64,
    },
    /// First-stage tracklets of a sequence directory.
    Track {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the edge classifier on labeled sequence directories.
    Train {
        #[arg(long, required = true, num_args = 1..)]
        seq: Vec<PathBuf>,
        /// Checkpoint path; the manifest goes next to it with a `.json` suffix.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss log; defaults to the checkpoint path with `.loss.csv` appended.
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// Merge a tracklet file into trajectories.
    Associate {
        #[arg(long)]
        tracks: PathBuf,
        /// Sequence directory supplying the frame rate and embeddings.
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a result file against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        result: PathBuf,
    },
    /// Both stages on sequence directories, evaluated when ground truth exists.
    Pipeline {
        #[arg(long, required = true, num_args = 1..)]
        seq: Vec<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        /// Output file for one sequence, or directory of `<name>.txt` files for several.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default configuration as JSON.
    Defaults,
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &g.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(name: &str, r: &EvalReport) {
    println!("{}", serde_json::json!({ "sequence": name, "report": r }));
    eprintln!(
        "{name:<16} IDF1 {:>6.2}  IDs {:>5}  HPR {:>6.2}  tracks {:>5}  IDTP {} IDFP {} IDFN {}",
        100.0 * r.idf1,
        r.id_switches,
        100.0 * r.hpr,
        r.tracklet_count,
        r.idtp,
        r.idfp,
        r.idfn
    );
}

fn read_sequences(dirs: &[PathBuf], jobs: usize) -> Result<Vec<SequenceBundle>> {
    par_map(dirs, jobs, |d| read_sequence(d)).into_iter().collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let jobs = cli.global.jobs.max(1);
    match cli.command {
        Command::Defaults => println!("{}", cfg.to_json()),
        Command::Synth { out, count } => {
            let seeds: Vec<u64> = (0..count).map(|i| cfg.synth.seed + i).collect();
            let results = par_map(&seeds, jobs, |&seed| -> Result<()> {
                let sc = tracklink::dataio::SynthConfig { seed, ..cfg.synth.clone() };
                let bundle = generate(&sc)?;
                let dir = if count == 1 { out.clone() } else { out.join(&bundle.name) };
                write_sequence(&dir, &bundle, sc.width.round() as u32, sc.height.round() as u32)?;
                log::info!("wrote {} ({} detections)", dir.display(), bundle.detection_count());
                Ok(())
            });
            results.into_iter().collect::<Result<()>>()?;
        }
        Command::Track { seq, out } => {
            let bundle = read_sequence(&seq)?;
            let tracklets = track(&bundle, &cfg)?;
            write_tracks(&out, &tracklets)?;
            log::info!("{} tracklets", tracklets.len());
            if let Some(gt) = &bundle.ground_truth {
                let (rate, _) = hpr(&tracklets, gt, cfg.train.iou_gate)?;
                println!(
                    "{}",
                    serde_json::json!({ "sequence": bundle.name, "th_c": cfg.stage1.th_c, "tracklets": tracklets.len(), "hpr": rate })
                );
            }
        }
        Command::Train { seq, out, loss_log } => {
            let bundles = read_sequences(&seq, jobs)?;
            let (model, report) = train_model(&bundles, &cfg, jobs)?;
            save_model(&out, &model)?;
            let mut csv = String::from("epoch,loss\n");
            for (i, l) in report.loss_history.iter().enumerate() {
                csv.push_str(&format!("{},{l}\n", i + 1));
            }
            let log_path = loss_log.unwrap_or_else(|| PathBuf::from(format!("{}.loss.csv", out.display())));
            write_text(&log_path, &csv)?;
            log::info!(
                "{} steps over {} epochs{}",
                report.steps,
                report.loss_history.len(),
                if report.stopped_early { ", stopped early" } else { "" }
            );
        }
        Command::Associate { tracks, seq, model, out } => {
            let info = tracklink::dataio::read_seqinfo(&seq.join(tracklink::dataio::SEQINFO_FILE))?;
            let (_, table) = read_embeddings(&seq.join(EMBEDDINGS_FILE))?;
            let tracklets = embed_tracklets(read_tracks(&tracks)?, &table)?;
            let model = load_model(&model)?;
            let a = associate(&tracklets, &model, &cfg, info.fps)?;
            log::info!("tracklets per level: {:?}", a.level_counts);
            write_tracks(&out, &a.trajectories)?;
        }
        Command::Eval { gt, result } => {
            let gt_rows = read_ground_truth(&gt)?;
            let predicted = read_tracks(&result)?;
            let name = result.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            print_report(&name, &evaluate(&gt_rows, &predicted, cfg.train.iou_gate));
        }
        Command::Pipeline { seq, model, out } => {
            let model = load_model(&model)?;
            let bundles = read_sequences(&seq, jobs)?;
            let outputs = par_map(&bundles, jobs, |b| run_pipeline(b, &model, &cfg));
            for (bundle, o) in bundles.iter().zip(outputs) {
                let o = o?;
                let path = if bundles.len() == 1 { out.clone() } else { out.join(format!("{}.txt", bundle.name)) };
                write_tracks(&path, &o.association.trajectories)?;
                log::info!("{}: tracklets per level {:?}", bundle.name, o.association.level_counts);
                if let Some(r) = &o.report {
                    print_report(&bundle.name, r);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
