use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use sttformer::data::ntu::{parse_ntu_name, parse_skeleton_file, to_skeleton_text};
use sttformer::data::sttd::{read_sttd, write_sttd, STTD_EXTENSION};
use sttformer::data::{make_synthetic_dataset, SkeletonSequence};

use crate::config::{create_dir, require_dir, Preset};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Capture text files (`*.skeleton`) to `.sttd`
    Sttd,
    /// `.sttd` files back to capture text
    Skeleton,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Directory of input files
    #[arg(long, value_name = "DIR")]
    pub input: PathBuf,
    /// Directory receiving converted files
    #[arg(long, value_name = "DIR")]
    pub output: PathBuf,
    /// Target format
    #[arg(long, value_enum, default_value = "sttd")]
    pub format: Format,
    /// Joints per body in capture files
    #[arg(long, default_value_t = 25)]
    pub joints: usize,
}

fn convert_one(path: &Path, args: &ConvertArgs) -> Result<PathBuf, String> {
    let stem = path.file_stem().and_then(|s| s.to_str()).ok_or("file name is not valid UTF-8")?;
    match args.format {
        Format::Sttd => {
            let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
            let (info, label) = parse_ntu_name(stem).ok_or("file name does not follow SsssCcccPpppRrrrAaaa")?;
            let mut seq = parse_skeleton_file(&bytes, args.joints).map_err(|e| e.to_string())?;
            seq.label = label;
            seq.info = info;
            let out = args.output.join(format!("{stem}.{STTD_EXTENSION}"));
            write_sttd(&out, &seq).map_err(|e| e.to_string())?;
            Ok(out)
        }
        Format::Skeleton => {
            let seq = read_sttd(path).map_err(|e| e.to_string())?;
            let out = args.output.join(format!("{stem}.skeleton"));
            std::fs::write(&out, to_skeleton_text(&seq)).map_err(|e| e.to_string())?;
            Ok(out)
        }
    }
}

/// Converts every matching file in the input directory. Individual failures
/// are reported as warnings; the command fails only when nothing converts.
pub fn run(args: &ConvertArgs) -> CliResult<usize> {
    require_dir(&args.input, "input")?;
    let ext = match args.format {
        Format::Sttd => "skeleton",
        Format::Skeleton => STTD_EXTENSION,
    };
    let mut inputs: Vec<PathBuf> = std::fs::read_dir(&args.input)
        .map_err(|e| CliError::Usage(format!("cannot list {}: {e}", args.input.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == ext))
        .collect();
    inputs.sort();
    if inputs.is_empty() {
        eprintln!("warning: no .{ext} files in {}", args.input.display());
        return Ok(0);
    }
    create_dir(&args.output)?;
    let mut failed = Vec::new();
    for path in &inputs {
        if let Err(msg) = convert_one(path, args) {
            eprintln!("warning: {}: {msg}", path.display());
            failed.push(path.display().to_string());
        }
    }
    let done = inputs.len() - failed.len();
    println!("converted {done} of {} files", inputs.len());
    if !failed.is_empty() {
        eprintln!("warning: failed to convert: {}", failed.join(", "));
    }
    if done == 0 {
        return Err(CliError::Failed(format!("none of the {} input files converted", inputs.len())));
    }
    Ok(done)
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; samples go to `train/` and `eval/` inside it
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Model shape whose classes, frames and joints are matched
    #[arg(long, value_enum, default_value = "small")]
    pub preset: Preset,
    /// Number of classes (default: from the preset)
    #[arg(long)]
    pub classes: Option<usize>,
    /// Frames per sequence (default: from the preset)
    #[arg(long)]
    pub frames: Option<usize>,
    /// Joints per body (default: from the preset)
    #[arg(long)]
    pub joints: Option<usize>,
    /// Training samples per class
    #[arg(long, default_value_t = 16)]
    pub per_class: usize,
    /// Evaluation samples per class
    #[arg(long, default_value_t = 64)]
    pub eval_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub struct SynthSets {
    pub train: Vec<SkeletonSequence>,
    pub eval: Vec<SkeletonSequence>,
}

/// Train and eval sets drawn from independent streams of `seed`.
pub fn synth_sets(classes: usize, per_class: usize, eval_per_class: usize, frames: usize, joints: usize, seed: u64) -> SynthSets {
    SynthSets {
        train: make_synthetic_dataset(classes, per_class, frames, joints, 2 * seed),
        eval: make_synthetic_dataset(classes, eval_per_class, frames, joints, 2 * seed + 1),
    }
}

pub fn run_synth(args: &SynthArgs) -> CliResult<()> {
    let m = args.preset.model();
    let (classes, frames, joints) = (
        args.classes.unwrap_or(m.num_classes),
        args.frames.unwrap_or(m.t0),
        args.joints.unwrap_or(m.v0),
    );
    if classes == 0 || frames == 0 || joints == 0 || args.per_class == 0 {
        return Err(CliError::Usage("classes, frames, joints and --per-class must be positive".into()));
    }
    let sets = synth_sets(classes, args.per_class, args.eval_per_class, frames, joints, args.seed);
    for (name, set) in [("train", &sets.train), ("eval", &sets.eval)] {
        let dir = args.out.join(name);
        create_dir(&dir)?;
        for (i, seq) in set.iter().enumerate() {
            write_sttd(&dir.join(format!("sample{i:05}.{STTD_EXTENSION}")), seq)?;
        }
    }
    println!(
        "wrote {} train and {} eval samples ({classes} classes, {frames} frames, {joints} joints) to {}",
        sets.train.len(),
        sets.eval.len(),
        args.out.display()
    );
    Ok(())
}
