//! Flag definitions and the optional TOML config file. Every flag can also
//! be given in the file, either at the top level (shared by all commands) or
//! in a table named after the command; flags win over the file.
//!
//! ```toml
//! seed = 7
//! [augment]
//! pilot = "run/pilot.tsv"
//! model = "cvae:1-10"
//! epochs = "early"
//! n = 452
//! ```

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use pilotgen::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "pilotgen", version, about = "Augment pilot count data with deep generative models and plan sample sizes")]
pub struct Cli {
    /// TOML file supplying defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Increase log detail on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize and filter a count table into a pilot dataset.
    Preprocess(PreprocessArgs),
    /// Train a generator on pilot data and write augmented replicates.
    Augment(AugmentArgs),
    /// Score generated data against reference data.
    Evaluate(EvaluateArgs),
    /// Fit a learning curve from classifier accuracy on generated data.
    Curve(CurveArgs),
    /// Smallest sample size reaching a target accuracy on a fitted curve.
    Project(ProjectArgs),
}

/// Fills every unset field of `$self` from `$other`.
macro_rules! overlay {
    ($self:ident, $other:ident; $($field:ident),+ $(,)?) => {
        $( if $self.$field.is_none() { $self.$field = $other.$field.clone(); } )+
    };
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PreprocessArgs {
    /// Count table: header of sample ids, one marker per row.
    #[arg(long)]
    pub counts: Option<PathBuf>,
    /// `sample_id<TAB>group` lines.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Depth normalization: none, tc, tmm or uq.
    #[arg(long)]
    pub normalize: Option<String>,
    /// Minimum mean of log2(count + 1) to keep a marker.
    #[arg(long)]
    pub filter_mean: Option<f64>,
    /// Minimum SD of log2(count + 1) to keep a marker.
    #[arg(long)]
    pub filter_sd: Option<f64>,
    /// Draw this many samples per group as the pilot.
    #[arg(long)]
    pub pilot_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    /// Pilot count table.
    #[arg(long)]
    pub pilot: Option<PathBuf>,
    /// Group labels of the pilot samples.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Generator, e.g. `vae:1-10`, `cvae:1-100`, `wgangp`, `maf`, `realnvp`.
    #[arg(long)]
    pub model: Option<String>,
    /// Offline expansion before training: `none`, `gaussian:R[:SD]`, `ae:T`.
    #[arg(long)]
    pub offline: Option<String>,
    /// `fixed:N` or `early[:PATIENCE[:MAX]]`.
    #[arg(long)]
    pub epochs: Option<String>,
    /// Mini-batch size as a fraction of the training set.
    #[arg(long)]
    pub batch_frac: Option<f64>,
    /// Larger related dataset to pre-train on before fine-tuning on the pilot.
    #[arg(long)]
    pub pretrain: Option<PathBuf>,
    /// Group labels of the pre-training samples.
    #[arg(long)]
    pub pretrain_groups: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct AugmentArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    /// Samples per generated replicate.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of generated replicates.
    #[arg(long)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub generated: Option<PathBuf>,
    #[arg(long)]
    pub generated_groups: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub reference_groups: Option<PathBuf>,
    /// `cluster_id<TAB>marker_id` lines for the partial-correlation metric.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Score clustering against groups and compare differential expression.
    #[arg(long)]
    #[serde(default)]
    pub two_group: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CurveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    /// Sizes per group: `START:STOP:STEP` or a comma list.
    #[arg(long)]
    pub sizes: Option<String>,
    /// `knn[:K]` or `external:PROGRAM[,ARG...]`.
    #[arg(long)]
    pub classifier: Option<String>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Also report the size needed for this accuracy.
    #[arg(long)]
    pub target_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ProjectArgs {
    /// `curve.json` written by the curve command.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long)]
    pub target_accuracy: Option<f64>,
}

impl PreprocessArgs {
    fn overlay(&mut self, o: &Self) {
        overlay!(self, o; counts, groups, normalize, filter_mean, filter_sd, pilot_size, seed, out);
    }
}

impl TrainArgs {
    fn overlay(&mut self, o: &Self) {
        overlay!(self, o; pilot, groups, model, offline, epochs, batch_frac, pretrain, pretrain_groups, seed, out);
    }
}

impl AugmentArgs {
    fn overlay(&mut self, o: &Self) {
        self.train.overlay(&o.train);
        overlay!(self, o; n, replicates);
    }
}

impl EvaluateArgs {
    fn overlay(&mut self, o: &Self) {
        overlay!(self, o; generated, generated_groups, reference, reference_groups, clusters, out);
        self.two_group |= o.two_group;
    }
}

impl CurveArgs {
    fn overlay(&mut self, o: &Self) {
        self.train.overlay(&o.train);
        overlay!(self, o; sizes, classifier, repeats, folds, target_accuracy);
    }
}

impl ProjectArgs {
    fn overlay(&mut self, o: &Self) {
        overlay!(self, o; curve, target_accuracy);
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    out: Option<PathBuf>,
    #[serde(default)]
    preprocess: PreprocessArgs,
    #[serde(default)]
    augment: AugmentArgs,
    #[serde(default)]
    evaluate: EvaluateArgs,
    #[serde(default)]
    curve: CurveArgs,
    #[serde(default)]
    project: ProjectArgs,
}

fn read_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))
}

/// Applies the config file (if any) underneath the flags.
pub(crate) fn resolve(mut command: Command, config: Option<&Path>) -> Result<Command> {
    let Some(path) = config else {
        return Ok(command);
    };
    let file = read_config(path)?;
    let shared_train = TrainArgs { seed: file.seed, out: file.out.clone(), ..Default::default() };
    match &mut command {
        Command::Preprocess(a) => {
            a.overlay(&file.preprocess);
            a.overlay(&PreprocessArgs { seed: file.seed, out: file.out.clone(), ..Default::default() });
        }
        Command::Augment(a) => {
            a.overlay(&file.augment);
            a.train.overlay(&shared_train);
        }
        Command::Evaluate(a) => {
            a.overlay(&file.evaluate);
            a.overlay(&EvaluateArgs { out: file.out.clone(), ..Default::default() });
        }
        Command::Curve(a) => {
            a.overlay(&file.curve);
            a.train.overlay(&shared_train);
        }
        Command::Project(a) => a.overlay(&file.project),
    }
    Ok(command)
}
