//! Command-line driver behind the `steer` binary.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 numeric failure during
//! training, 4 checkpoint/config mismatch.

mod config;

pub use config::{RunConfig, KEYS};

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::dataset::{
    generate_synthetic, load_index_with, make_sequences, split, SequenceSample, TrackSpec,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, export_attention, write_plot_data};
use crate::imaging::{
    augment, compute_dense_flow, encode_flow_hsv, read_ppm, write_ppm, AugmentPolicy, FlowParams,
};
use crate::model::{checkpoint, Model};
use crate::rng::derive_rng;
use crate::training::{train, Control};

/// Overrides the configured output directory of `train` and `evaluate`.
pub const OUT_DIR_ENV: &str = "STEER_OUT_DIR";
pub const RESOLVED_CONFIG: &str = "config.resolved";

#[derive(Parser, Debug)]
#[command(name = "steer", version, about = "Steering-angle prediction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic drive (PPM frames + index.csv).
    Synth {
        /// Named track (straight, curve50, mixed, mixed_b, twisty, twisty_b) or `curvature:length,...`.
        #[arg(long)]
        track: String,
        #[arg(long)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
    },
    /// Train a model described by a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Replace the configured model kind, e.g. `simple_transformer`.
        #[arg(long)]
        model: Option<String>,
        /// Extra `key=value` overrides.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on the configured splits.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Smoothing factor in (0, 1]; weight of the newest prediction.
        #[arg(long)]
        smooth: Option<f64>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dense flow between two frames, written as an HSV-coded PPM.
    Flow {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = crate::dataset::DEFAULT_FLOW_MAG_CAP)]
        mag_cap: f64,
    },
    /// One random augmentation of a frame.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Steering label to carry through (printed after augmentation).
        #[arg(long, default_value_t = 0.0)]
        angle: f64,
    },
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric { .. } => 3,
        Error::CheckpointMismatch(_) => 4,
        _ => 2,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Reports go to `out`, errors to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Synth {
            track,
            frames,
            out: dir,
            seed,
            width,
            height,
        } => {
            let mut spec = TrackSpec::named(&track)?;
            spec.seed = seed;
            spec.width = width.unwrap_or(spec.width);
            spec.height = height.unwrap_or(spec.height);
            let index = generate_synthetic(&spec, frames, &dir)?;
            report(
                out,
                format_args!("wrote {} frames to {}", index.len(), dir.display()),
            )
        }
        Command::Train {
            config,
            model,
            set,
            out: out_dir,
        } => cmd_train(&load_config(&config, model, set, out_dir)?, out),
        Command::Evaluate {
            config,
            checkpoint,
            smooth,
            model,
            set,
            out: out_dir,
        } => {
            let mut cfg = load_config(&config, model, set, out_dir)?;
            if smooth.is_some() {
                cfg.smooth = smooth;
                cfg.validate()?;
            }
            cmd_evaluate(&cfg, &checkpoint, out)
        }
        Command::Flow {
            a,
            b,
            out: dst,
            mag_cap,
        } => {
            let fa = read_input(&a)?;
            let fb = read_input(&b)?;
            let flow = compute_dense_flow(&fa, &fb, &FlowParams::default())?;
            write_ppm(&encode_flow_hsv(&flow, mag_cap)?, &dst)?;
            report(
                out,
                format_args!("max |flow| {:.4} px -> {}", flow.max_abs(), dst.display()),
            )
        }
        Command::Augment {
            input,
            seed,
            out: dst,
            angle,
        } => {
            let frame = read_input(&input)?;
            let policy = AugmentPolicy {
                seed,
                ..AugmentPolicy::default()
            };
            let (img, new_angle) = augment(&frame, angle, &policy, &mut derive_rng(seed, &[]))?;
            write_ppm(&img, &dst)?;
            report(out, format_args!("angle {new_angle} -> {}", dst.display()))
        }
    }
}

fn report(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("writing report", e))
}

fn read_input(path: &Path) -> Result<crate::imaging::Frame> {
    read_ppm(path).map_err(|e| match e {
        Error::Io { context, source } => Error::Config(format!("{context}: {source}")),
        other => other,
    })
}

fn load_config(
    path: &Path,
    model: Option<String>,
    mut set: Vec<String>,
    out_dir: Option<PathBuf>,
) -> Result<RunConfig> {
    if let Some(m) = model {
        set.push(format!("model={m}"));
    }
    let mut cfg = RunConfig::load_with(path, &set)?;
    if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
        cfg.out_dir = PathBuf::from(dir);
    }
    if let Some(dir) = out_dir {
        cfg.out_dir = dir;
    }
    Ok(cfg)
}

fn write_resolved(cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let p = dir.join(RESOLVED_CONFIG);
    fs::write(&p, cfg.resolved()).map_err(|e| Error::io(format!("writing {}", p.display()), e))
}

fn sequences(cfg: &RunConfig, index_path: &Path) -> Result<crate::dataset::DriveIndex> {
    if !index_path.is_file() {
        return Err(Error::Config(format!(
            "dataset index {} does not exist",
            index_path.display()
        )));
    }
    load_index_with(index_path, &cfg.index_options()?)
}

/// Named splits: `train` and `val` from `data`, `test` from `test_data`.
fn load_splits(cfg: &RunConfig) -> Result<Vec<(&'static str, Vec<SequenceSample>)>> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("config sets no `data` index".into()))?;
    let opts = cfg.sequence_options();
    let (tr, va) = split(&sequences(cfg, data)?, cfg.train_frac)?;
    let mut out = vec![
        ("train", make_sequences(&tr, &opts)?),
        ("val", make_sequences(&va, &opts)?),
    ];
    if let Some(t) = &cfg.test_data {
        out.push(("test", make_sequences(&sequences(cfg, t)?, &opts)?));
    }
    if out[0].1.is_empty() {
        return Err(Error::Config(format!(
            "training split yields no sequences of length {}",
            cfg.model.seq_len
        )));
    }
    Ok(out)
}

fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let splits = load_splits(cfg)?;
    write_resolved(cfg)?;
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    log::info!(
        "{}: {} parameters, {} train / {} val sequences",
        cfg.model.kind,
        model.param_count(),
        splits[0].1.len(),
        splits[1].1.len()
    );
    let outcome = train(
        &mut model,
        &splits[0].1,
        &splits[1].1,
        &cfg.train,
        Some(&cfg.out_dir),
        |_, _| Control::Continue,
    )?;
    let last = outcome.history.last().expect("at least one epoch");
    report(
        out,
        format_args!(
            "trained {} epochs; train loss_angle {}; checkpoint {}",
            outcome.history.len(),
            last.train.angle,
            outcome
                .final_checkpoint
                .as_deref()
                .unwrap_or(Path::new("-"))
                .display()
        ),
    )
}

fn cmd_evaluate(cfg: &RunConfig, ckpt: &Path, out: &mut dyn Write) -> Result<()> {
    let model = checkpoint::load(&cfg.model, ckpt)?;
    let splits = load_splits(cfg)?;
    write_resolved(cfg)?;
    for (name, samples) in splits.iter().filter(|s| !s.1.is_empty()) {
        let ev = evaluate(&model, samples, cfg.train.batch_size)?;
        write_plot_data(
            &ev.series,
            cfg.out_dir.join(format!("predictions_{name}.csv")),
        )?;
        if cfg.model.kind.has_attention() {
            let input = crate::dataset::batch_input(&[&samples[0]], model.config())?;
            export_attention(
                &model.predict(&input)?,
                0,
                cfg.out_dir.join("attention").join(name),
            )?;
        }
        match cfg.smooth {
            Some(f) => report(
                out,
                format_args!("{name} {} {}", ev.rmse, ev.series.smoothed_rmse(f)?),
            )?,
            None => report(out, format_args!("{name} {}", ev.rmse))?,
        }
    }
    Ok(())
}
