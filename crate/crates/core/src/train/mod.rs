//! Training policy, the trained-generator contract shared by every model
//! family, and model persistence.

mod persist;
mod policy;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{CountMatrix, Scale};
use crate::error::{validation, Error, Result};
use crate::flow::{self, FlowConfig, FlowVariant};
use crate::gan::{self, GanConfig, GanVariant};
use crate::nn::ParamStore;
use crate::vae::{self, VaeConfig};

pub use persist::{load_generator, save_generator, FORMAT_VERSION};
pub use policy::{batch_size, early_stop_epoch, make_batches, EpochStrategy, TrainingPolicy};

/// Generator family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Vae,
    Cvae,
    Gan,
    Wgan,
    Wgangp,
    Realnvp,
    Glow,
    Maf,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::Vae,
        Family::Cvae,
        Family::Gan,
        Family::Wgan,
        Family::Wgangp,
        Family::Realnvp,
        Family::Glow,
        Family::Maf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Vae => "vae",
            Family::Cvae => "cvae",
            Family::Gan => "gan",
            Family::Wgan => "wgan",
            Family::Wgangp => "wgangp",
            Family::Realnvp => "realnvp",
            Family::Glow => "glow",
            Family::Maf => "maf",
        }
    }

    pub fn is_flow(self) -> bool {
        matches!(self, Family::Realnvp | Family::Glow | Family::Maf)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| validation(format!("unknown model family {s:?}")))
    }
}

/// Architecture and loss settings for one generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Vae(VaeConfig),
    Gan(GanConfig),
    Flow(FlowConfig),
}

impl ModelSpec {
    pub fn family(&self) -> Family {
        match self {
            ModelSpec::Vae(c) if c.conditional => Family::Cvae,
            ModelSpec::Vae(_) => Family::Vae,
            ModelSpec::Gan(c) => match c.variant {
                GanVariant::Gan => Family::Gan,
                GanVariant::Wgan => Family::Wgan,
                GanVariant::Wgangp => Family::Wgangp,
            },
            ModelSpec::Flow(c) => match c.variant {
                FlowVariant::Realnvp => Family::Realnvp,
                FlowVariant::Glow => Family::Glow,
                FlowVariant::Maf => Family::Maf,
            },
        }
    }

    /// Default settings for a family.
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Vae => ModelSpec::Vae(VaeConfig::default()),
            Family::Cvae => ModelSpec::Vae(VaeConfig {
                conditional: true,
                ..VaeConfig::default()
            }),
            Family::Gan => ModelSpec::Gan(GanConfig::new(GanVariant::Gan)),
            Family::Wgan => ModelSpec::Gan(GanConfig::new(GanVariant::Wgan)),
            Family::Wgangp => ModelSpec::Gan(GanConfig::new(GanVariant::Wgangp)),
            Family::Realnvp => ModelSpec::Flow(FlowConfig::new(FlowVariant::Realnvp)),
            Family::Glow => ModelSpec::Flow(FlowConfig::new(FlowVariant::Glow)),
            Family::Maf => ModelSpec::Flow(FlowConfig::new(FlowVariant::Maf)),
        }
    }

    /// Fixed epoch count conventionally used for the family: 200 for flows,
    /// 1000 otherwise.
    pub fn default_epochs(&self) -> usize {
        match self {
            ModelSpec::Flow(_) => 200,
            _ => 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Vae(c) => c.validate(),
            ModelSpec::Gan(c) => c.validate(),
            ModelSpec::Flow(c) => c.validate(),
        }
    }
}

/// Parses `vae:1-10`, `cvae:1-100`, `gan`, `wgan`, `wgangp`, `realnvp`,
/// `glow` or `maf`. A bare `vae`/`cvae` uses a 1:1 loss ratio.
impl FromStr for ModelSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, ratio) = match s.split_once(':') {
            Some((n, r)) => (n, Some(r)),
            None => (s, None),
        };
        let family: Family = name.parse()?;
        let mut spec = ModelSpec::for_family(family);
        match (&mut spec, ratio) {
            (ModelSpec::Vae(c), Some(r)) => {
                let (a, b) = r
                    .split_once('-')
                    .ok_or_else(|| validation(format!("loss ratio {r:?} is not of the form a-b")))?;
                c.recon_weight = a
                    .parse()
                    .map_err(|_| validation(format!("bad reconstruction weight {a:?}")))?;
                c.kl_weight = b
                    .parse()
                    .map_err(|_| validation(format!("bad KL weight {b:?}")))?;
            }
            (_, Some(_)) => {
                return Err(validation(format!(
                    "model {name:?} does not take a loss ratio"
                )))
            }
            (_, None) => {}
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Vae(c) => write!(f, "{}:{}-{}", self.family(), c.recon_weight, c.kl_weight),
            _ => write!(f, "{}", self.family()),
        }
    }
}

/// Losses recorded for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    pub epoch: usize,
    /// Value watched by early stopping.
    pub monitored: f64,
    pub losses: BTreeMap<String, f64>,
}

/// Where a training phase ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: String,
    pub epochs_run: usize,
    /// Epoch whose weights were kept; equal to `epochs_run` for fixed schedules.
    pub kept_epoch: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub phases: Vec<PhaseSummary>,
}

impl TrainingLog {
    pub fn phase(&self, phase: &str) -> impl Iterator<Item = &EpochRecord> {
        let phase = phase.to_owned();
        self.epochs.iter().filter(move |r| r.phase == phase)
    }

    /// Tab-separated dump: phase, epoch, monitored and each named loss.
    pub fn to_tsv(&self) -> String {
        let keys: Vec<String> = self
            .epochs
            .iter()
            .flat_map(|r| r.losses.keys().cloned())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut out = String::from("phase\tepoch\tmonitored");
        for k in &keys {
            out.push('\t');
            out.push_str(k);
        }
        out.push('\n');
        for r in &self.epochs {
            out.push_str(&format!("{}\t{}\t{}", r.phase, r.epoch, r.monitored));
            for k in &keys {
                match r.losses.get(k) {
                    Some(v) => out.push_str(&format!("\t{v}")),
                    None => out.push_str("\tNA"),
                }
            }
            out.push('\n');
        }
        out
    }
}

pub(crate) struct EpochOutcome {
    pub monitored: f64,
    pub losses: BTreeMap<String, f64>,
}

/// Runs epochs under `policy`, logging each one. With early stopping the
/// weights from the best monitored epoch are restored at the end.
pub(crate) fn run_phase(
    policy: &TrainingPolicy,
    phase: &str,
    params: &mut ParamStore,
    log: &mut TrainingLog,
    mut epoch: impl FnMut(&mut ParamStore) -> Result<EpochOutcome>,
) -> Result<()> {
    let patience = match policy.epochs {
        EpochStrategy::Fixed { .. } => None,
        EpochStrategy::EarlyStop { patience, .. } => Some(patience),
    };
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params = None;
    let mut ran = 0;
    for e in 1..=policy.epochs.max_epochs() {
        let out = epoch(params)?;
        if !out.monitored.is_finite() {
            return Err(Error::Numeric(format!(
                "{phase}: loss became non-finite at epoch {e}"
            )));
        }
        ran = e;
        log.epochs.push(EpochRecord {
            phase: phase.to_owned(),
            epoch: e,
            monitored: out.monitored,
            losses: out.losses,
        });
        if let Some(p) = patience {
            if out.monitored < best {
                best = out.monitored;
                best_epoch = e;
                best_params = Some(params.clone());
            } else if e - best_epoch >= p {
                break;
            }
        }
    }
    if let Some(bp) = best_params {
        *params = bp;
    }
    log.phases.push(PhaseSummary {
        phase: phase.to_owned(),
        epochs_run: ran,
        kept_epoch: if patience.is_some() { best_epoch } else { ran },
    });
    Ok(())
}

/// Group indicator columns: one column per level after the first, so two
/// groups are encoded by a single 0/1 column.
pub fn encode_labels(labels: &[String], levels: &[String]) -> Result<Array2<f64>> {
    let width = levels.len().saturating_sub(1);
    let mut out = Array2::zeros((labels.len(), width));
    for (i, l) in labels.iter().enumerate() {
        let k = levels
            .iter()
            .position(|v| v == l)
            .ok_or_else(|| validation(format!("group {l:?} was not seen in training")))?;
        if k > 0 {
            out[[i, k - 1]] = 1.0;
        }
    }
    Ok(out)
}

/// A trained model together with everything needed to sample from it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedGenerator {
    pub spec: ModelSpec,
    pub policy: TrainingPolicy,
    pub marker_ids: Vec<String>,
    /// Training group levels; present exactly when the model is conditional.
    pub group_levels: Option<Vec<String>>,
    pub params: ParamStore,
    pub training_log: TrainingLog,
    /// Fingerprint of the data the model was (last) trained on.
    pub data_fingerprint: String,
}

impl TrainedGenerator {
    pub fn family(&self) -> Family {
        self.spec.family()
    }

    pub fn feature_count(&self) -> usize {
        self.marker_ids.len()
    }

    pub fn is_conditional(&self) -> bool {
        self.group_levels.is_some()
    }

    /// Draws `n` samples on the log2p1 scale. Conditional models need one
    /// label per sample; unconditional ones must get `None`.
    pub fn generate(&self, n: usize, labels: Option<&[String]>, seed: u64) -> Result<CountMatrix> {
        let cond = match (&self.group_levels, labels) {
            (Some(levels), Some(l)) => {
                if l.len() != n {
                    return Err(validation(format!("{} labels for {n} samples", l.len())));
                }
                Some(encode_labels(l, levels)?)
            }
            (Some(_), None) => return Err(validation("conditional model needs group labels")),
            (None, Some(_)) => return Err(validation("model is not conditional; labels not accepted")),
            (None, None) => None,
        };
        let samples = match &self.spec {
            ModelSpec::Vae(c) => vae::sample(c, self, n, cond.as_ref(), seed),
            ModelSpec::Gan(c) => gan::sample(c, self, n, seed),
            ModelSpec::Flow(c) => flow::sample(c, self, n, cond.as_ref(), seed)?,
        };
        let samples = samples.mapv(|v| if v.is_finite() { v.max(0.0) } else { f64::NAN });
        if samples.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("generator produced non-finite values".into()));
        }
        let ids = (1..=n).map(|i| format!("gen{i}")).collect();
        CountMatrix::from_samples(
            self.marker_ids.clone(),
            ids,
            &samples,
            Scale::Log2p1,
            labels.map(<[String]>::to_vec),
        )
    }

    /// Continues training the current weights on `data` (transfer learning).
    pub fn continue_training(
        &mut self,
        data: &CountMatrix,
        policy: &TrainingPolicy,
        phase: &str,
    ) -> Result<()> {
        check_training_data(data)?;
        policy.validate()?;
        if data.marker_ids() != self.marker_ids.as_slice() {
            return Err(validation(
                "training data markers differ from the model's markers (identity and order must match)",
            ));
        }
        let cond = match &self.group_levels {
            Some(levels) => {
                let groups = data
                    .groups()
                    .ok_or_else(|| validation("conditional model needs group labels"))?;
                if &data.group_levels() != levels {
                    return Err(validation(format!(
                        "group levels {:?} differ from the model's {:?}",
                        data.group_levels(),
                        levels
                    )));
                }
                Some(encode_labels(groups, levels)?)
            }
            None => None,
        };
        let x = data.samples_by_features();
        let spec = self.spec.clone();
        match &spec {
            ModelSpec::Vae(c) => vae::fit(c, self, &x, cond.as_ref(), policy, phase)?,
            ModelSpec::Gan(c) => gan::fit(c, self, &x, policy, phase)?,
            ModelSpec::Flow(c) => flow::fit(c, self, &x, cond.as_ref(), policy, phase)?,
        }
        self.policy = *policy;
        self.data_fingerprint = data.fingerprint();
        Ok(())
    }
}

fn check_training_data(data: &CountMatrix) -> Result<()> {
    if data.scale() != Scale::Log2p1 {
        return Err(Error::State(
            "generators are trained on log2(x+1) data; transform the counts first".into(),
        ));
    }
    if data.n_samples() < 2 {
        return Err(validation("training needs at least two samples"));
    }
    Ok(())
}

/// Trains a fresh generator on `data` (log2p1 scale).
pub fn train(data: &CountMatrix, spec: &ModelSpec, policy: &TrainingPolicy) -> Result<TrainedGenerator> {
    spec.validate()?;
    policy.validate()?;
    check_training_data(data)?;
    let conditional = match spec {
        ModelSpec::Vae(c) => c.conditional,
        ModelSpec::Gan(_) => false,
        ModelSpec::Flow(_) => data.groups().is_some(),
    };
    let group_levels = if conditional {
        if data.groups().is_none() {
            return Err(validation(format!("{} needs group labels", spec.family())));
        }
        Some(data.group_levels())
    } else {
        None
    };
    let n_cond = group_levels.as_ref().map_or(0, |l| l.len().saturating_sub(1));
    let d = data.n_markers();
    let feature_means: Vec<f64> = data.counts().rows().into_iter().map(|r| r.mean().unwrap_or(0.0)).collect();
    let mut rng = crate::rng::seeded(crate::rng::derive_seed(policy.seed, &[0]));
    let params = match spec {
        ModelSpec::Vae(c) => vae::init(c, &feature_means, n_cond, &mut rng),
        ModelSpec::Gan(c) => gan::init(c, &feature_means, &mut rng),
        ModelSpec::Flow(c) => flow::init(c, d, n_cond, &mut rng)?,
    };
    let mut g = TrainedGenerator {
        spec: spec.clone(),
        policy: *policy,
        marker_ids: data.marker_ids().to_vec(),
        group_levels,
        params,
        training_log: TrainingLog::default(),
        data_fingerprint: String::new(),
    };
    g.continue_training(data, policy, "train")?;
    Ok(g)
}

/// Trains on a large related dataset, then continues on the pilot with the
/// same weights. Both phases are kept in the training log.
pub fn pretrain_finetune(
    pretrain_data: &CountMatrix,
    pilot: &CountMatrix,
    spec: &ModelSpec,
    pretrain_policy: &TrainingPolicy,
    policy: &TrainingPolicy,
) -> Result<TrainedGenerator> {
    if pretrain_data.marker_ids() != pilot.marker_ids() {
        return Err(validation(
            "pre-training and pilot data must share the same markers in the same order",
        ));
    }
    let mut g = train(pretrain_data, spec, pretrain_policy)?;
    if let Some(first) = g.training_log.phases.last_mut() {
        first.phase = "pretrain".into();
    }
    for r in g.training_log.epochs.iter_mut() {
        r.phase = "pretrain".into();
    }
    g.continue_training(pilot, policy, "finetune")?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, standard_normal};

    fn data(seed: u64, n: usize, d: usize, shift: f64) -> CountMatrix {
        let x = standard_normal(&mut seeded(seed), n, d).mapv(|v| (4.0 + shift + v).max(0.0));
        CountMatrix::from_samples(
            (0..d).map(|j| format!("m{j}")).collect(),
            (0..n).map(|i| format!("s{i}")).collect(),
            &x,
            Scale::Log2p1,
            Some((0..n).map(|i| if i % 2 == 0 { "A" } else { "B" }.to_owned()).collect()),
        )
        .unwrap()
    }

    fn tiny(family: Family) -> ModelSpec {
        match ModelSpec::for_family(family) {
            ModelSpec::Vae(c) => ModelSpec::Vae(VaeConfig {
                encoder_widths: vec![8, 4],
                latent_dim: 2,
                ..c
            }),
            ModelSpec::Gan(c) => ModelSpec::Gan(GanConfig {
                generator_widths: vec![8],
                critic_widths: vec![8],
                noise_dim: 2,
                ..c
            }),
            ModelSpec::Flow(c) => ModelSpec::Flow(FlowConfig {
                n_blocks: 2,
                hidden_width: 8,
                ..c
            }),
        }
    }

    fn fixed(epochs: usize, seed: u64) -> TrainingPolicy {
        TrainingPolicy::default()
            .with_epochs(EpochStrategy::Fixed { epochs })
            .with_seed(seed)
    }

    #[test]
    fn spec_strings() {
        let s: ModelSpec = "cvae:1-100".parse().unwrap();
        assert_eq!(s.family(), Family::Cvae);
        assert_eq!(s.to_string(), "cvae:1-100");
        assert_eq!("maf".parse::<ModelSpec>().unwrap().family(), Family::Maf);
        assert!("gan:1-2".parse::<ModelSpec>().is_err());
        assert!("vae:0-1".parse::<ModelSpec>().is_err());
        assert!("diffusion".parse::<ModelSpec>().is_err());
    }

    #[test]
    fn save_load_round_trip_for_every_family() {
        let dir = tempfile::tempdir().unwrap();
        let d = data(1, 30, 3, 0.0);
        for family in Family::ALL {
            let g = train(&d, &tiny(family), &fixed(2, 3)).unwrap();
            let path = dir.path().join(format!("{family}.json"));
            save_generator(&g, &path).unwrap();
            let back = load_generator(&path).unwrap();
            assert_eq!(back, g, "{family}");
            let labels = g.is_conditional().then(|| vec!["B".to_owned(); 5]);
            assert_eq!(
                back.generate(5, labels.as_deref(), 1).unwrap(),
                g.generate(5, labels.as_deref(), 1).unwrap()
            );
        }
    }

    #[test]
    fn damaged_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let g = train(&data(1, 20, 2, 0.0), &tiny(Family::Vae), &fixed(1, 0)).unwrap();
        let path = dir.path().join("m.json");
        save_generator(&g, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_generator(&path), Err(Error::Corrupt(_))));
        std::fs::write(&path, text.replacen("\"family\": \"vae\"", "\"family\": \"diffusion\"", 1)).unwrap();
        assert!(matches!(load_generator(&path), Err(Error::Version(_))));
        std::fs::write(&path, text.replacen("\"version\": 1", "\"version\": 99", 1)).unwrap();
        assert!(matches!(load_generator(&path), Err(Error::Version(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let d = data(2, 24, 3, 0.0);
        for family in [Family::Cvae, Family::Wgangp, Family::Glow] {
            let a = train(&d, &tiny(family), &fixed(3, 5)).unwrap();
            let b = train(&d, &tiny(family), &fixed(3, 5)).unwrap();
            assert_eq!(a.training_log, b.training_log);
            assert_eq!(a.params, b.params);
        }
    }

    #[test]
    fn early_stopping_loop_matches_rule() {
        let d = data(3, 40, 2, 0.0);
        let policy = TrainingPolicy::default()
            .with_epochs(EpochStrategy::EarlyStop { patience: 3, max_epochs: 400 })
            .with_seed(1);
        let g = train(&d, &tiny(Family::Realnvp), &policy).unwrap();
        let monitored: Vec<f64> = g.training_log.epochs.iter().map(|r| r.monitored).collect();
        let phase = &g.training_log.phases[0];
        assert_eq!(phase.epochs_run, monitored.len());
        if monitored.len() < 400 {
            assert_eq!(early_stop_epoch(&monitored, 3).unwrap(), monitored.len());
            assert_eq!(phase.kept_epoch + 3, phase.epochs_run);
        }
    }

    #[test]
    fn finetuning_changes_weights_and_logs_both_phases() {
        let big = data(4, 60, 3, 0.0);
        let pilot = data(5, 20, 3, 0.0);
        let spec = tiny(Family::Maf);
        let pre = train(&big, &spec, &fixed(3, 1)).unwrap();
        let g = pretrain_finetune(&big, &pilot, &spec, &fixed(3, 1), &fixed(2, 2)).unwrap();
        assert_ne!(g.params, pre.params);
        assert_eq!(g.training_log.phase("pretrain").count(), 3);
        assert_eq!(g.training_log.phase("finetune").count(), 2);
        assert_eq!(g.training_log.phases.len(), 2);
    }

    #[test]
    fn finetuning_requires_matching_markers() {
        let big = data(4, 30, 3, 0.0);
        let pilot = data(5, 20, 3, 0.0);
        let renamed = CountMatrix::new(
            vec!["m0".into(), "m1".into(), "other".into()],
            pilot.sample_ids().to_vec(),
            pilot.counts().clone(),
            Scale::Log2p1,
            None,
        )
        .unwrap();
        assert!(pretrain_finetune(&big, &renamed, &tiny(Family::Vae), &fixed(1, 0), &fixed(1, 0)).is_err());
    }

    #[test]
    fn pretraining_helps_flows_on_average() {
        let mut gain = 0.0;
        for seed in 0..5 {
            let big = data(100 + seed, 200, 2, 0.0);
            let pilot = data(200 + seed, 20, 2, 0.0);
            let held_out = data(300 + seed, 200, 2, 0.0);
            let spec = tiny(Family::Realnvp);
            let scratch = train(&pilot, &spec, &fixed(20, seed)).unwrap();
            let tuned = pretrain_finetune(&big, &pilot, &spec, &fixed(20, seed), &fixed(20, seed)).unwrap();
            let ModelSpec::Flow(cfg) = &spec else { unreachable!() };
            let flow = crate::flow::Flow::new(cfg, 2, 1);
            let labels = encode_labels(held_out.groups().unwrap(), &["A".into(), "B".into()]).unwrap();
            let x = held_out.samples_by_features();
            let ll = |g: &TrainedGenerator| {
                crate::stats::mean(&flow.log_prob(&g.params, &x, Some(&labels)))
            };
            gain += ll(&tuned) - ll(&scratch);
        }
        assert!(gain / 5.0 >= 0.0, "mean log-likelihood gain {}", gain / 5.0);
    }

    #[test]
    fn generate_checks_labels() {
        let d = data(6, 20, 2, 0.0);
        let g = train(&d, &tiny(Family::Cvae), &fixed(1, 0)).unwrap();
        assert!(g.generate(2, None, 0).is_err());
        assert!(g.generate(2, Some(&["A".into()]), 0).is_err());
        assert!(g.generate(1, Some(&["C".into()]), 0).is_err());
        let out = g.generate(2, Some(&["A".into(), "B".into()]), 0).unwrap();
        assert_eq!(out.groups().unwrap(), ["A", "B"]);
    }

    #[test]
    fn label_encoding_drops_first_level() {
        let levels = vec!["A".to_owned(), "B".to_owned(), "C".to_owned()];
        let e = encode_labels(&["A".into(), "C".into(), "B".into()], &levels).unwrap();
        assert_eq!(e, ndarray::array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn raw_counts_are_rejected() {
        let d = data(6, 20, 2, 0.0);
        let raw = CountMatrix::new(
            d.marker_ids().to_vec(),
            d.sample_ids().to_vec(),
            d.counts().clone(),
            Scale::RawCounts,
            None,
        )
        .unwrap();
        assert!(matches!(train(&raw, &tiny(Family::Vae), &fixed(1, 0)), Err(Error::State(_))));
    }
}
