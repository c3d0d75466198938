//! `sfunet`: train, evaluate, predict, gradient-check, synthesize data and
//! dump spectra.
//!
//! Exit codes: 0 ok, 1 internal error, 2 configuration, 3 data, 4 numeric.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sfunet_core::ablation::{ablation_table, run_ablation};
use sfunet_core::checkpoint::{load_model, load_model_for};
use sfunet_core::config::CliConfig;
use sfunet_core::data::{self, split, synth_generate, Dataset, DatasetManifest, SegmentationSample, Split, SynthSpec};
use sfunet_core::fourier::spectrum::{log_magnitude_u8, mask_u8, write_gray};
use sfunet_core::metrics::{argmax_labels, evaluate};
use sfunet_core::network::{Model, ModelConfig};
use sfunet_core::training::gradcheck::{gradcheck, BLOCKS, DEFAULT_TOLERANCE};
use sfunet_core::training::{train_loop, LOG_FILE};
use sfunet_core::{Error, Result};

#[derive(Parser)]
#[command(name = "sfunet", version, about = "Spatial-frequency attention U-Net for image segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a dataset directory; writes best_{1,2,3}.sfun and train.log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on one split of a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Require the checkpoint to match this config's architecture.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for `report.tsv` and `report.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment one image; writes class indices as a PGM.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks for one block or all of them.
    Gradcheck {
        #[arg(long, default_value = "all")]
        block: String,
        #[arg(long, default_value_t = 4)]
        size: usize,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic ellipse dataset.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
    },
    /// Write the frequency masks and learned filter of one FSA level as images.
    Spectrum {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        level: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the parameter counts of the model a config describes.
    Build {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train and score the four MPCA/FSA on-off variants.
    Ablation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::ConfigParse { .. } | Error::CheckpointConfigMismatch(_) | Error::InvalidArgument(_) => 2,
        Error::NotACheckpoint(_)
        | Error::CheckpointVersion(_)
        | Error::CheckpointTruncated(_)
        | Error::CheckpointTensorMismatch(_)
        | Error::UnknownImageFormat { .. }
        | Error::TruncatedImage { .. }
        | Error::ImageHeader { .. }
        | Error::LabelRange { .. }
        | Error::Data(_)
        | Error::Io { .. } => 3,
        Error::Numeric(_) => 4,
        Error::Shape(_) | Error::Tape(_) => 1,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Read the config and route `--seed` (default 0) into every seeded field.
fn read_config(path: &Path, seed: Option<u64>) -> Result<CliConfig> {
    let mut cfg = CliConfig::read(path)?;
    if let Some(s) = seed {
        cfg.model.seed = s;
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn load_dataset(dir: &Path, cfg: &CliConfig, seed: u64) -> Result<Dataset> {
    let mut manifest = DatasetManifest::read(&dir.join(data::manifest::MANIFEST_FILE))?;
    if let Some(fractions) = cfg.data.split {
        manifest = split(&manifest, fractions, seed)?;
    }
    let (h, w) = cfg.model.input_hw;
    Dataset::load(&manifest, dir, cfg.model.input_channels, cfg.model.n_classes, h, w)
}

fn nonempty(ds: &Dataset, which: Split) -> Result<Vec<&SegmentationSample>> {
    let s = ds.split(which);
    if s.is_empty() {
        return Err(Error::Data(format!("the {which} split is empty")));
    }
    Ok(s)
}

fn cmd_train(config: &Path, data_dir: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = read_config(config, seed)?;
    let ds = load_dataset(data_dir, &cfg, cfg.train.seed)?;
    let (train, val) = (nonempty(&ds, Split::Train)?, nonempty(&ds, Split::Val)?);
    create_dir(out)?;
    let mut model = Model::build(&cfg.model)?;
    println!("{}", model.parameter_counts());
    let result = train_loop(&mut model, &train, &val, &cfg.train, Some(out), |l| {
        println!("{}", l.line());
    });
    match result {
        Ok(outcome) => {
            for (rank, r) in outcome.best.iter().enumerate() {
                println!("best_{}\tepoch {}\tval_iou {:.6}", rank + 1, r.epoch, r.val_iou);
            }
            Ok(())
        }
        Err(e) => {
            if let Error::Numeric(msg) = &e {
                let path = out.join(LOG_FILE);
                let mut f = fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|err| Error::Io { path: path.clone(), source: err })?;
                writeln!(f, "# aborted: {msg}").map_err(|err| Error::Io { path, source: err })?;
            }
            Err(e)
        }
    }
}

fn cmd_eval(ckpt: &Path, data_dir: &Path, split_name: &str, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let which: Split = split_name
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("unknown split {split_name:?}")))?;
    let model = match config {
        Some(p) => load_model_for(ckpt, &CliConfig::read(p)?.model)?,
        None => load_model(ckpt)?,
    };
    let c = &model.config;
    let ds = Dataset::load_dir(data_dir, c.input_channels, c.n_classes, c.input_hw.0, c.input_hw.1)?;
    let samples = nonempty(&ds, which)?;
    let report = evaluate(&model, &samples)?;
    print!("{}", report.to_key_value());
    print!("{}", report.to_tsv());
    if let Some(dir) = out {
        create_dir(dir)?;
        report.write(dir, "report")?;
    }
    Ok(())
}

fn cmd_predict(ckpt: &Path, image: &Path, out: &Path) -> Result<()> {
    let model = load_model(ckpt)?;
    let c = &model.config;
    let x = data::load_image(image, c.input_channels, c.input_hw.0, c.input_hw.1)?;
    let labels = argmax_labels(&model.predict(&x)?)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    data::save_label(out, &labels)
}

fn cmd_gradcheck(block: &str, size: usize, tolerance: f64, seed: u64) -> Result<()> {
    let names: Vec<&str> = if block == "all" {
        BLOCKS.to_vec()
    } else if BLOCKS.contains(&block) {
        vec![block]
    } else {
        return Err(Error::InvalidArgument(format!(
            "unknown block {block:?}; expected one of {} or all",
            BLOCKS.join(", ")
        )));
    };
    let mut failed = Vec::new();
    for name in names {
        let report = gradcheck(name, (size, size), tolerance, seed)?;
        println!("{report}");
        if !report.passed() {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        println!("gradcheck: pass");
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradcheck failed for {}", failed.join(", "))))
    }
}

fn cmd_synth(spec: &SynthSpec, out: &Path) -> Result<()> {
    let summary = synth_generate(out, spec)?;
    println!(
        "wrote {} samples ({} classes, {}x{}) to {}",
        summary.manifest.entries.len(),
        spec.classes,
        spec.h,
        spec.w,
        out.display()
    );
    Ok(())
}

fn cmd_spectrum(ckpt: &Path, level: usize, out: &Path) -> Result<()> {
    let model = load_model(ckpt)?;
    if model.fsa.is_empty() {
        return Err(Error::Config("checkpoint was built without FSA blocks".into()));
    }
    let block = model.fsa.get(level.wrapping_sub(1)).ok_or_else(|| {
        Error::InvalidArgument(format!("unknown FSA level {level}; expected 1..={}", model.fsa.len()))
    })?;
    let (h, w) = (block.masks.h(), block.masks.w());
    create_dir(out)?;
    write_gray(&out.join("mask_low.pgm"), h, w, &mask_u8(block.masks.low()))?;
    write_gray(&out.join("mask_high.pgm"), h, w, &mask_u8(block.masks.high()))?;
    let filt = model.registry.get(block.filter.param()).value();
    let planes = filt.dims().c();
    for c in 0..planes {
        let name = if planes == 1 {
            "filter.pgm".to_string()
        } else {
            format!("filter_c{c:03}.pgm")
        };
        write_gray(&out.join(name), h, w, &log_magnitude_u8(filt.plane(0, c)))?;
    }
    println!("level {level}: {h}x{w}, low-band side {}, {planes} filter plane(s)", block.masks.side_n());
    Ok(())
}

fn cmd_build(config: Option<&Path>) -> Result<()> {
    let mc = match config {
        Some(p) => CliConfig::read(p)?.model,
        None => ModelConfig::default(),
    };
    let model = Model::build(&mc)?;
    print!("{}", mc.to_text());
    println!("{}", model.parameter_counts());
    Ok(())
}

fn cmd_ablation(config: &Path, data_dir: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = read_config(config, seed)?;
    let ds = load_dataset(data_dir, &cfg, cfg.train.seed)?;
    let train = nonempty(&ds, Split::Train)?;
    let val = nonempty(&ds, Split::Val)?;
    let test = nonempty(&ds, Split::Test)?;
    create_dir(out)?;
    let rows = run_ablation(&cfg.model, &cfg.train, &train, &val, &test, |line| eprintln!("{line}"))?;
    let table = ablation_table(&rows);
    print!("{table}");
    write_text(&out.join("ablation.tsv"), &table)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, data, out, seed } => cmd_train(&config, &data, &out, seed),
        Command::Eval {
            ckpt,
            data,
            split,
            config,
            out,
        } => cmd_eval(&ckpt, &data, &split, config.as_deref(), out.as_deref()),
        Command::Predict { ckpt, image, out } => cmd_predict(&ckpt, &image, &out),
        Command::Gradcheck {
            block,
            size,
            tolerance,
            seed,
        } => cmd_gradcheck(&block, size, tolerance, seed),
        Command::Synth {
            count,
            classes,
            out,
            seed,
            height,
            width,
        } => cmd_synth(
            &SynthSpec {
                count,
                classes,
                h: height,
                w: width,
                seed,
            },
            &out,
        ),
        Command::Spectrum { ckpt, level, out } => cmd_spectrum(&ckpt, level, &out),
        Command::Build { config } => cmd_build(config.as_deref()),
        Command::Ablation { config, data, out, seed } => cmd_ablation(&config, &data, &out, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_code_table() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::CheckpointConfigMismatch("x".into())), 2);
        assert_eq!(exit_code(&Error::Data("x".into())), 3);
        assert_eq!(exit_code(&Error::Numeric("x".into())), 4);
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
