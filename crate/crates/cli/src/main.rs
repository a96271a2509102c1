use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{ArgAction, Parser, Subcommand};
use dcff_core::dataset::{self, frame_file_name, GROUNDTRUTH_FILE};
use dcff_core::{gradsuite, image, BBox, Tensor};
use dcff_track::overlay::draw_box;
use dcff_track::{ope_evaluate_with, OpeConfig, Tracker, TrackerConfig};
use dcff_train::synth::{write_sequence, SynthSpec};
use dcff_train::{Checkpoint, Dataset, Trainer};
use dcffnet::inspect::report;
use dcffnet::{exit_code, CliError, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "dcff",
    version,
    about = "Train, run and evaluate the DCFFNet siamese tracker"
)]
struct Cli {
    /// Log more (-v info, -vv debug). RUST_LOG also works.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run training stages and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Train until this stage (numbered from 1) is complete; all stages when omitted.
        #[arg(long)]
        stage: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint to resume from.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Sequence directory or dataset root. Defaults to the built-in synthetic sequence.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Track a sequence from its first ground-truth box.
    Track {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seq: PathBuf,
        /// Results file, one `x,y,w,h` line per frame.
        #[arg(long)]
        out: PathBuf,
        /// Run config whose [tracker] section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write every frame with the predicted box drawn in red to this directory.
        #[arg(long)]
        dump_overlays: Option<PathBuf>,
    },
    /// One-pass evaluation of a results file against a sequence's ground truth.
    Eval {
        #[arg(long)]
        results: PathBuf,
        /// Sequence directory or ground-truth file.
        #[arg(long)]
        seq: PathBuf,
        /// Write success and precision curves as CSV.
        #[arg(long)]
        plot: Option<PathBuf>,
        /// Run config whose [eval] section is used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// Only checks whose name contains this.
        #[arg(long)]
        op: Option<String>,
    },
    /// Write a synthetic sequence directory.
    Synth {
        /// Overrides such as `length=30,step_x=6,seed=3`.
        #[arg(long, default_value = "")]
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter table of checkpoints and the cross-ablation count check.
    Inspect {
        #[arg(long, required = true)]
        ckpt: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train {
            config,
            stage,
            out,
            init,
            data,
        } => train(&config, stage, &out, init.as_deref(), data.as_deref()),
        Command::Track {
            ckpt,
            seq,
            out,
            config,
            dump_overlays,
        } => track(&ckpt, &seq, &out, config.as_deref(), dump_overlays.as_deref()),
        Command::Eval {
            results,
            seq,
            plot,
            config,
        } => eval(&results, &seq, plot.as_deref(), config.as_deref()),
        Command::Gradcheck { op } => gradcheck(op.as_deref()),
        Command::Synth { spec, out } => synth(&spec, &out),
        Command::Inspect { ckpt } => inspect(&ckpt),
    }
}

fn train(config: &Path, stage: Option<usize>, out: &Path, init: Option<&Path>, data: Option<&Path>) -> Result<()> {
    let run = RunConfig::load(config)?;
    let stages = run.train.stages.len();
    let last = stage.unwrap_or(stages);
    if last == 0 || last > stages {
        return Err(CliError::Usage(format!("--stage {last} is outside 1..={stages}")).into());
    }
    let mut trainer = match init {
        Some(path) => {
            let ck = Checkpoint::load_for(path, &run.model).with_context(|| format!("loading {}", path.display()))?;
            Trainer::from_checkpoint(ck, run.train.clone())?
        }
        None => Trainer::new(run.model.clone(), run.train.clone())?,
    };
    if trainer.cursor.stage >= last {
        return Err(CliError::Usage(format!(
            "the checkpoint has already finished stage {last} ({} of {stages} done)",
            trainer.cursor.stage
        ))
        .into());
    }
    let data = match data {
        Some(dir) => Dataset::load(dir)?,
        None => {
            log::info!("no --data given; training on the default synthetic sequence");
            Dataset {
                sequences: vec![SynthSpec::default().generate()?],
            }
        }
    };
    while trainer.cursor.stage < last {
        let name = trainer.current_stage()?.name.clone();
        let before = trainer.history.len();
        trainer.run_stage(&data)?;
        let steps = &trainer.history[before..];
        println!(
            "stage {name}: {} steps, loss {:.6} -> {:.6}",
            steps.len(),
            steps.first().copied().unwrap_or(f64::NAN),
            steps.last().copied().unwrap_or(f64::NAN)
        );
    }
    trainer.checkpoint().save(out)?;
    println!(
        "wrote {} ({} of {stages} stages done)",
        out.display(),
        trainer.cursor.stage
    );
    Ok(())
}

fn track(ckpt: &Path, seq: &Path, out: &Path, config: Option<&Path>, overlays: Option<&Path>) -> Result<()> {
    let settings = match config {
        Some(path) => RunConfig::load(path)?.tracker,
        None => TrackerConfig::default(),
    };
    let ck = Checkpoint::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let sequence = dataset::load_sequence(seq)?;
    let tracker = Tracker::new(ck.model, ck.params, settings)?;
    if let Some(dir) = overlays {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }

    let first = sequence.frame(0)?;
    let mut state = tracker.init(&first, &sequence.groundtruth[0])?;
    let mut boxes = vec![state.bbox];
    let dump = |i: usize, frame: &Tensor, b: &BBox| -> Result<()> {
        if let Some(dir) = overlays {
            image::write_ppm(&dir.join(frame_file_name(i)), &draw_box(frame, b, &[1.0, 0.0, 0.0])?)?;
        }
        Ok(())
    };
    dump(0, &first, &state.bbox)?;
    for i in 1..sequence.len() {
        let frame = sequence.frame(i)?;
        let update = tracker.update(&mut state, &frame)?;
        log::debug!("frame {i}: score {:.4} at {:?}", update.score, update.peak);
        dump(i, &frame, &update.bbox)?;
        boxes.push(update.bbox);
    }
    dataset::write_boxes(out, &boxes)?;
    println!(
        "tracked {} frames of {}; wrote {}",
        boxes.len(),
        sequence.name,
        out.display()
    );
    Ok(())
}

fn eval(results: &Path, seq: &Path, plot: Option<&Path>, config: Option<&Path>) -> Result<()> {
    let settings = match config {
        Some(path) => RunConfig::load(path)?.eval,
        None => OpeConfig::default(),
    };
    let gt_path = if seq.is_dir() {
        seq.join(GROUNDTRUTH_FILE)
    } else {
        seq.to_path_buf()
    };
    let gt = dataset::read_boxes(&gt_path)?;
    let pred = dataset::read_boxes(results)?;
    let r = ope_evaluate_with(&settings, &pred, &gt)?;
    println!(
        "AUC={:.4} P@{}={:.4} meanIoU={:.4} frames={}",
        r.auc, settings.precision_at_px, r.precision_at, r.mean_iou, r.frames_scored
    );
    if let Some(path) = plot {
        fs::write(path, r.to_csv()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn gradcheck(filter: Option<&str>) -> Result<()> {
    let reports = gradsuite::run(filter)?;
    if reports.is_empty() {
        return Err(CliError::Usage(format!("no gradient check matches `{}`", filter.unwrap_or_default())).into());
    }
    let width = reports.iter().map(|r| r.op.len()).max().unwrap_or(2).max(2);
    println!("{:<width$}  {:>12}  result", "op", "max rel err");
    let mut failed = 0;
    for r in &reports {
        let ok = r.passed();
        failed += usize::from(!ok);
        println!(
            "{:<width$}  {:>12.3e}  {}",
            r.op,
            r.max_rel_err(),
            if ok { "ok" } else { "FAIL" }
        );
    }
    if failed > 0 {
        return Err(CliError::GradcheckFailed {
            failed,
            total: reports.len(),
        }
        .into());
    }
    Ok(())
}

fn synth(spec: &str, out: &Path) -> Result<()> {
    let spec = SynthSpec::default().with_overrides(spec)?;
    let seq = spec.generate()?;
    write_sequence(&seq, out)?;
    println!("wrote {} frames to {}", seq.frames.len(), out.display());
    Ok(())
}

fn inspect(paths: &[PathBuf]) -> Result<()> {
    print!("{}", report(paths)?);
    Ok(())
}
