use std::path::{Path, PathBuf};

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use sttformer::data::{load_dir, prepare, DataMode, SkeletonSequence, SkeletonTopology, Split};
use sttformer::model::ModelConfig;
use sttformer::train::TrainSchedule;

use crate::error::{usage, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Built-in model shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// NTU scale: 25 joints, 120 frames, 60 classes.
    Default,
    /// 8 joints, 24 frames, 4 classes, four narrow layers.
    Small,
    /// 5 joints, 12 frames, 3 classes, two layers.
    Tiny,
}

impl Preset {
    pub fn model(self) -> ModelConfig {
        match self {
            Preset::Default => ModelConfig::default(),
            Preset::Small => ModelConfig::small(),
            Preset::Tiny => ModelConfig::tiny(),
        }
    }
}

#[allow(clippy::enum_variant_names)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    XSub,
    XView,
    XSet,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::XSub => Split::XSub,
            SplitArg::XView => Split::XView,
            SplitArg::XSet => Split::XSet,
        }
    }
}

/// Everything a training run depends on. Written to `config.json` in the run
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub mode: DataMode,
    pub precision: Precision,
    /// Directory of `.sttd` training samples.
    pub train_data: Option<PathBuf>,
    /// Directory of `.sttd` evaluation samples.
    pub eval_data: Option<PathBuf>,
    /// Splits `train_data` into train and eval by capture metadata.
    pub split: Option<Split>,
    /// JSON parent array; a chain over the joints is used when absent.
    pub topology: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            schedule: TrainSchedule::default(),
            mode: DataMode::Joint,
            precision: Precision::F32,
            train_data: None,
            eval_data: None,
            split: None,
            topology: None,
        }
    }
}

fn mode_parser() -> impl TypedValueParser<Value = DataMode> {
    PossibleValuesParser::new(["joint", "bone", "motion"]).map(|s| s.parse::<DataMode>().expect("listed value"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Milestones(pub Vec<usize>);

fn parse_milestones(s: &str) -> Result<Milestones, String> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()
        .map(Milestones)
}

/// Run configuration flags shared by `train`, `ablate` and `gradcheck`.
/// Flags override values from `--config`.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run configuration (see `config.json` in any run directory)
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in model shape used when no --config is given
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Seed for initialisation and batch order
    #[arg(long)]
    pub seed: Option<u64>,
    /// Input representation
    #[arg(long, value_parser = mode_parser())]
    pub mode: Option<DataMode>,
    /// Consecutive frames per tuple; must divide the frame count
    #[arg(long)]
    pub n: Option<usize>,
    /// Disable the positional encoding
    #[arg(long)]
    pub no_pe: bool,
    /// Disable inter-frame feature aggregation
    #[arg(long)]
    pub no_iffa: bool,
    /// Attention output kernel width along tuple joints (odd)
    #[arg(long)]
    pub k1: Option<usize>,
    /// Inter-frame aggregation kernel length along tuples (odd)
    #[arg(long)]
    pub k2: Option<usize>,
    /// Floating-point precision of training and evaluation
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    /// Training epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Comma-separated epochs at which the learning rate decays ("" for none)
    #[arg(long, value_name = "LIST", value_parser = parse_milestones)]
    pub milestones: Option<Milestones>,
    /// Mini-batch size
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Directory of .sttd training samples
    #[arg(long, value_name = "DIR")]
    pub train_data: Option<PathBuf>,
    /// Directory of .sttd evaluation samples
    #[arg(long, value_name = "DIR", conflicts_with = "split")]
    pub eval_data: Option<PathBuf>,
    /// Split the training directory by capture metadata instead of --eval-data
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// JSON parent array describing the skeleton
    #[arg(long, value_name = "PATH")]
    pub topology: Option<PathBuf>,
}

impl RunArgs {
    /// Resolves file, preset and flags into a validated configuration.
    pub fn resolve(&self, default_preset: Preset) -> CliResult<RunConfig> {
        let mut rc = match &self.config {
            Some(path) => {
                let text = read_existing(path, "config file")?;
                serde_json::from_str::<RunConfig>(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            }
            None => RunConfig {
                model: self.preset.unwrap_or(default_preset).model(),
                ..RunConfig::default()
            },
        };
        let m = &mut rc.model;
        if let Some(n) = self.n {
            m.n = n;
        }
        if self.no_pe {
            m.pe_enabled = false;
        }
        if self.no_iffa {
            m.iffa_enabled = false;
        }
        if let Some(k) = self.k1 {
            m.k1 = k;
        }
        if let Some(k) = self.k2 {
            m.k2 = k;
        }
        let s = &mut rc.schedule;
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(e) = self.epochs {
            s.epochs = e;
        }
        if let Some(ms) = &self.milestones {
            s.milestones = ms.0.clone();
        }
        if let Some(b) = self.batch_size {
            s.batch_size = b;
        }
        if let Some(lr) = self.lr {
            s.lr = lr;
        }
        if let Some(mode) = self.mode {
            rc.mode = mode;
        }
        if let Some(p) = self.precision {
            rc.precision = p;
        }
        if let Some(d) = &self.train_data {
            rc.train_data = Some(d.clone());
        }
        if let Some(d) = &self.eval_data {
            rc.eval_data = Some(d.clone());
            rc.split = None;
        }
        if let Some(sp) = self.split {
            rc.split = Some(sp.into());
            rc.eval_data = None;
        }
        if let Some(t) = &self.topology {
            rc.topology = Some(t.clone());
        }
        rc.validate()?;
        Ok(rc)
    }
}

pub fn read_existing(path: &Path, what: &str) -> CliResult<String> {
    if !path.is_file() {
        return usage(format!("{what} {} does not exist", path.display()));
    }
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {what} {}: {e}", path.display())))
}

pub fn require_dir(path: &Path, what: &str) -> CliResult<()> {
    if !path.is_dir() {
        return usage(format!("{what} {} is not a directory", path.display()));
    }
    Ok(())
}

/// Prepared training and optional evaluation samples.
pub struct Datasets {
    pub train: Vec<SkeletonSequence>,
    pub eval: Option<Vec<SkeletonSequence>>,
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.schedule.validate().map_err(|e| match e {
            sttformer::Error::Config(m) => CliError::Usage(format!("{m} (see --epochs and --milestones)")),
            other => other.into(),
        })?;
        if self.split.is_some() && self.eval_data.is_some() {
            return usage("give either an eval directory or a split, not both");
        }
        if self.split.is_some() && self.train_data.is_none() {
            return usage("a split needs a training directory");
        }
        Ok(())
    }

    pub fn topology(&self) -> CliResult<SkeletonTopology> {
        let topo = match &self.topology {
            Some(p) => {
                read_existing(p, "topology file")?;
                SkeletonTopology::load(p)?
            }
            None => SkeletonTopology::default_for(self.model.v0),
        };
        if topo.joints() != self.model.v0 {
            return usage(format!(
                "topology has {} joints but the model expects v0={}",
                topo.joints(),
                self.model.v0
            ));
        }
        Ok(topo)
    }

    pub fn prepare_all(&self, seqs: &[SkeletonSequence]) -> CliResult<Vec<SkeletonSequence>> {
        let topo = self.topology()?;
        seqs.iter()
            .map(|s| {
                if s.joints() != self.model.v0 {
                    return usage(format!(
                        "sample with label {} has {} joints, the model expects v0={}",
                        s.label,
                        s.joints(),
                        self.model.v0
                    ));
                }
                Ok(prepare(s, self.model.t0, self.mode, &topo)?)
            })
            .collect()
    }

    /// Raw (unprepared) train and eval samples from the configured paths.
    pub fn load_raw(&self) -> CliResult<(Vec<SkeletonSequence>, Option<Vec<SkeletonSequence>>)> {
        let Some(train_dir) = &self.train_data else {
            return usage("no training data: pass --train-data DIR or set train_data in the config");
        };
        require_dir(train_dir, "training data")?;
        let all = load_dir(train_dir)?;
        if let Some(split) = self.split {
            let (train, eval) = split.partition(all);
            return Ok((train, Some(eval)));
        }
        let eval = match &self.eval_data {
            Some(d) => {
                require_dir(d, "eval data")?;
                Some(load_dir(d)?)
            }
            None => None,
        };
        Ok((all, eval))
    }

    pub fn load(&self) -> CliResult<Datasets> {
        let (train, eval) = self.load_raw()?;
        Ok(Datasets {
            train: self.prepare_all(&train)?,
            eval: eval.map(|e| self.prepare_all(&e)).transpose()?,
        })
    }

    /// Prepared evaluation samples; an error when the config names none.
    pub fn load_eval(&self) -> CliResult<Vec<SkeletonSequence>> {
        let raw = if let Some(d) = &self.eval_data {
            require_dir(d, "eval data")?;
            load_dir(d)?
        } else if self.split.is_some() {
            self.load_raw()?.1.unwrap_or_default()
        } else {
            return usage("no evaluation data: pass --eval-data DIR or configure a split");
        };
        if raw.is_empty() {
            return usage("the evaluation set is empty");
        }
        self.prepare_all(&raw)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(sttformer::Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Failed(format!("cannot write {}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", path.display())))
}
