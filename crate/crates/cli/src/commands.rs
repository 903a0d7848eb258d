use std::path::{Path, PathBuf};

use log::{info, warn};
use ndarray::Array2;
use serde_json::json;

use pilotgen::curve::{
    accuracy_harness, fit_harness, plot_tsv, project_sample_size, CurveArtifact, HarnessConfig, IplfFit,
    SampleSource, DEFAULT_FOLDS, DEFAULT_REPEATS,
};
use pilotgen::data::{
    filter_markers, inverse_log2p1, load_counts, log2p1, normalize, subsample_pilot, write_counts, write_groups,
    Normalization, PreprocessConfig,
};
use pilotgen::eval::{embedding, evaluate as evaluate_report, parse_clusters, write_embedding, Setting};
use pilotgen::offline::{augment as offline_augment, OfflineConfig};
use pilotgen::rng::derive_seed;
use pilotgen::train::{pretrain_finetune, save_generator, train, EpochStrategy, ModelSpec, TrainedGenerator, TrainingPolicy};
use pilotgen::{CountMatrix, Error, Result, Scale};

use crate::config::{resolve, AugmentArgs, Cli, Command, CurveArgs, EvaluateArgs, PreprocessArgs, ProjectArgs, TrainArgs};
use crate::manifest::Manifest;
use crate::parse;

pub(crate) fn dispatch(cli: Cli) -> Result<()> {
    match resolve(cli.command, cli.config.as_deref())? {
        Command::Preprocess(a) => preprocess(&a),
        Command::Augment(a) => augment(&a),
        Command::Evaluate(a) => evaluate(&a).map(|_| ()),
        Command::Curve(a) => curve(&a).map(|_| ()),
        Command::Project(a) => {
            let p = project(&a)?;
            println!("{p}");
            Ok(())
        }
    }
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| Error::Validation(format!("--{flag} is required")))
}

fn existing(path: &Path) -> Result<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Validation(format!("input file {} does not exist", path.display())))
    }
}

fn output_dir(out: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = required(out, "out")?.clone();
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Validation(format!("cannot create output directory {}: {e}", dir.display())))?;
    Ok(dir)
}

fn load(counts: &Path, groups: Option<&Path>, manifest: &mut Manifest) -> Result<CountMatrix> {
    existing(counts)?;
    manifest.input(counts)?;
    if let Some(g) = groups {
        existing(g)?;
        manifest.input(g)?;
    }
    load_counts(counts, groups)
}

/// Normalizes, filters and optionally subsamples a count table.
pub fn preprocess(args: &PreprocessArgs) -> Result<()> {
    let mut manifest = Manifest::new("preprocess", args)?;
    let counts = required(&args.counts, "counts")?;
    let normalization: Normalization = args.normalize.as_deref().unwrap_or("none").parse()?;
    let cfg = PreprocessConfig {
        normalization,
        mean_threshold: args.filter_mean,
        sd_threshold: args.filter_sd,
        ..Default::default()
    };
    cfg.validate()?;
    let out = output_dir(&args.out)?;
    let input = load(counts, args.groups.as_deref(), &mut manifest)?;
    let (normalized, report) = normalize(&input, cfg.normalization)?;
    let filtered = filter_markers(&normalized, &cfg)?;
    let pilot = match args.pilot_size {
        Some(n) => subsample_pilot(&filtered, n, args.seed.unwrap_or(0))?,
        None => filtered,
    };
    write_counts(&out.join("pilot.tsv"), &pilot)?;
    manifest.output(&out, "pilot.tsv")?;
    if pilot.groups().is_some() {
        write_groups(&out.join("groups.tsv"), &pilot)?;
        manifest.output(&out, "groups.tsv")?;
    }
    manifest.details = json!({
        "normalization": report,
        "mean_threshold": cfg.mean_threshold,
        "sd_threshold": cfg.sd_threshold,
        "markers_before": input.n_markers(),
        "markers_after": pilot.n_markers(),
        "samples": pilot.n_samples(),
        "library_sizes": input.library_sizes(),
        "fingerprint": pilot.fingerprint(),
    });
    manifest.write(&out)?;
    info!("kept {} of {} markers", pilot.n_markers(), input.n_markers());
    Ok(())
}

fn on_log_scale(m: CountMatrix) -> Result<CountMatrix> {
    match m.scale() {
        Scale::RawCounts => log2p1(&m),
        Scale::Log2p1 => Ok(m),
    }
}

/// Trains the requested generator; shared by `augment` and `curve`.
fn train_generator(args: &TrainArgs, seed: u64, manifest: &mut Manifest) -> Result<(TrainedGenerator, CountMatrix)> {
    let pilot_path = required(&args.pilot, "pilot")?;
    let spec: ModelSpec = required(&args.model, "model")?.parse()?;
    let offline: OfflineConfig = args.offline.as_deref().unwrap_or("none").parse()?;
    offline.validate()?;
    let epochs = match &args.epochs {
        Some(e) => parse::epochs(e)?,
        None => EpochStrategy::Fixed { epochs: spec.default_epochs() },
    };
    let policy = TrainingPolicy::default()
        .with_epochs(epochs)
        .with_batch_fraction(args.batch_frac.unwrap_or(0.1))
        .with_seed(derive_seed(seed, &[2]));
    policy.validate()?;

    let pilot = load(pilot_path, args.groups.as_deref(), manifest)?;
    let logged = on_log_scale(pilot.clone())?;
    let expanded = offline_augment(&logged, &offline, &policy, derive_seed(seed, &[1]))?;
    info!("training {spec} on {} samples", expanded.n_samples());
    let generator = match &args.pretrain {
        Some(p) => {
            let big = on_log_scale(load(p, args.pretrain_groups.as_deref(), manifest)?)?;
            pretrain_finetune(&big, &expanded, &spec, &policy.with_seed(derive_seed(seed, &[4])), &policy)?
        }
        None => train(&expanded, &spec, &policy)?,
    };
    Ok((generator, pilot))
}

/// Splits `n` over the pilot's groups in proportion to their sizes
/// (largest remainder, earlier levels first on ties).
fn proportional_labels(pilot: &CountMatrix, n: usize) -> Vec<String> {
    let levels = pilot.group_levels();
    let total = pilot.n_samples() as f64;
    let shares: Vec<f64> = levels
        .iter()
        .map(|l| n as f64 * pilot.samples_in_group(l).len() as f64 / total)
        .collect();
    let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|&a, &b| (shares[b] - shares[b].floor()).total_cmp(&(shares[a] - shares[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().take(n - counts.iter().sum::<usize>()) {
        counts[i] += 1;
    }
    levels
        .iter()
        .zip(counts)
        .flat_map(|(l, c)| std::iter::repeat_n(l.clone(), c))
        .collect()
}

/// Back to integer counts for writing.
fn to_integer_counts(m: &CountMatrix) -> Result<CountMatrix> {
    let raw = inverse_log2p1(m)?;
    let rounded: Array2<f64> = raw.counts().mapv(f64::round);
    CountMatrix::new(
        raw.marker_ids().to_vec(),
        raw.sample_ids().to_vec(),
        rounded,
        Scale::RawCounts,
        raw.groups().map(<[String]>::to_vec),
    )
}

/// Trains a generator and writes `generated_{r}.tsv` for each replicate.
pub fn augment(args: &AugmentArgs) -> Result<()> {
    let mut manifest = Manifest::new("augment", args)?;
    let n = *required(&args.n, "n")?;
    if n == 0 {
        return Err(Error::Validation("--n must be at least 1".into()));
    }
    let replicates = args.replicates.unwrap_or(1);
    if replicates == 0 {
        return Err(Error::Validation("--replicates must be at least 1".into()));
    }
    let seed = args.train.seed.unwrap_or(0);
    let out = output_dir(&args.train.out)?;
    let (generator, pilot) = train_generator(&args.train, seed, &mut manifest)?;
    let labels = generator.is_conditional().then(|| proportional_labels(&pilot, n));
    for r in 1..=replicates {
        let m = generator.generate(n, labels.as_deref(), derive_seed(seed, &[3, r as u64]))?;
        let counts = to_integer_counts(&m)?;
        let name = format!("generated_{r}.tsv");
        write_counts(&out.join(&name), &counts)?;
        manifest.output(&out, &name)?;
        if counts.groups().is_some() {
            let name = format!("generated_{r}_groups.tsv");
            write_groups(&out.join(&name), &counts)?;
            manifest.output(&out, &name)?;
        }
    }
    save_generator(&generator, &out.join("model.json"))?;
    manifest.output(&out, "model.json")?;
    std::fs::write(out.join("training_log.tsv"), generator.training_log.to_tsv())?;
    manifest.output(&out, "training_log.tsv")?;
    manifest.details = json!({
        "model": generator.spec.to_string(),
        "policy": generator.policy,
        "phases": generator.training_log.phases,
        "pilot_fingerprint": pilot.fingerprint(),
        "samples_per_replicate": n,
        "replicates": replicates,
    });
    manifest.write(&out)?;
    Ok(())
}

/// Writes `report.json` and `embed.tsv`; the report also goes to stdout.
pub fn evaluate(args: &EvaluateArgs) -> Result<pilotgen::eval::EvalReport> {
    let mut manifest = Manifest::new("evaluate", args)?;
    let out = output_dir(&args.out)?;
    let generated = load(required(&args.generated, "generated")?, args.generated_groups.as_deref(), &mut manifest)?;
    let reference = load(required(&args.reference, "reference")?, args.reference_groups.as_deref(), &mut manifest)?;
    let clusters = match &args.clusters {
        Some(p) if p.is_file() => {
            manifest.input(p)?;
            Some(parse_clusters(&std::fs::read_to_string(p)?)?)
        }
        Some(p) => {
            warn!("clusters file {} not found; ccc_pcc omitted", p.display());
            None
        }
        None => None,
    };
    let setting = if args.two_group { Setting::TwoGroup } else { Setting::OneGroup };
    let report = evaluate_report(&generated, &reference, clusters.as_ref(), setting)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    std::fs::write(out.join("report.json"), &text)?;
    manifest.output(&out, "report.json")?;
    write_embedding(&out.join("embed.tsv"), &embedding(&generated, &reference)?)?;
    manifest.output(&out, "embed.tsv")?;
    manifest.write(&out)?;
    print!("{text}");
    Ok(report)
}

/// Trains a generator, measures accuracy over the size grid and fits the
/// learning curve. Writes `curve.json` and `curve_plot.tsv`.
pub fn curve(args: &CurveArgs) -> Result<CurveArtifact> {
    let mut manifest = Manifest::new("curve", args)?;
    let seed = args.train.seed.unwrap_or(0);
    let sizes = parse::sizes(required(&args.sizes, "sizes")?)?;
    let classifier = parse::classifier(args.classifier.as_deref().unwrap_or("knn"))?;
    let cfg = HarnessConfig {
        sizes,
        repeats: args.repeats.unwrap_or(DEFAULT_REPEATS),
        folds: args.folds.unwrap_or(DEFAULT_FOLDS),
        per_group: true,
    };
    cfg.validate()?;
    let out = output_dir(&args.train.out)?;
    let dataset_mode = args.train.model.as_deref() == Some("none");
    let (generator, pilot) = if dataset_mode {
        let pilot_path = required(&args.train.pilot, "pilot")?;
        (None, load(pilot_path, args.train.groups.as_deref(), &mut manifest)?)
    } else {
        let (g, p) = train_generator(&args.train, seed, &mut manifest)?;
        (Some(g), p)
    };
    let source = match &generator {
        Some(g) => SampleSource::Generator(g),
        None => SampleSource::Dataset(&pilot),
    };
    let harness = accuracy_harness(source, &cfg, classifier.as_ref(), derive_seed(seed, &[5]))?;
    let fit = fit_harness(&harness)?;
    if fit.degenerate {
        warn!("accuracy does not change with sample size; the fitted curve is flat");
    }
    let artifact = CurveArtifact::new(&harness, &fit, &classifier.name(), seed);
    std::fs::write(out.join("curve.json"), serde_json::to_string_pretty(&artifact)? + "\n")?;
    manifest.output(&out, "curve.json")?;
    std::fs::write(out.join("curve_plot.tsv"), plot_tsv(&fit)?)?;
    manifest.output(&out, "curve_plot.tsv")?;
    manifest.details = json!({ "degenerate": fit.degenerate, "objective": fit.objective });
    manifest.write(&out)?;
    let p = artifact.params;
    println!("a={} b={} c={}", p.a, p.b, p.c);
    if let Some(target) = args.target_accuracy {
        println!("{}", projection(&fit, target)?);
    }
    Ok(artifact)
}

/// Sample size for a target accuracy, with the sizes at which the upper
/// and lower 95% bounds reach the target (`NA` when they never do within
/// the search range).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Projection {
    pub n: u64,
    pub lo95_hint: Option<u64>,
    pub hi95_hint: Option<u64>,
}

impl std::fmt::Display for Projection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let show = |v: Option<u64>| v.map_or_else(|| "NA".to_owned(), |v| v.to_string());
        write!(f, "{} {} {}", self.n, show(self.lo95_hint), show(self.hi95_hint))
    }
}

const SEARCH_LIMIT: u64 = 1 << 40;

/// Smallest `n` with `reached(n)`, assuming it is monotone in `n`.
fn first_reaching(reached: impl Fn(u64) -> Result<bool>) -> Result<Option<u64>> {
    let mut hi = 1;
    while !reached(hi)? {
        if hi >= SEARCH_LIMIT {
            return Ok(None);
        }
        hi *= 2;
    }
    if hi == 1 {
        return Ok(Some(1));
    }
    // hi / 2 was checked by the doubling loop and fell short
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if reached(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

fn projection(fit: &IplfFit, target: f64) -> Result<Projection> {
    let n = project_sample_size(&fit.params, target)?;
    let bound = |upper: bool| {
        first_reaching(|k| {
            Ok(fit
                .predict(k as f64)?
                .interval
                .map(|(lo, hi)| if upper { hi } else { lo } >= target)
                .unwrap_or(false))
        })
    };
    let has_interval = fit.predict(1.0)?.interval.is_some();
    let (lo95_hint, hi95_hint) = if has_interval { (bound(true)?, bound(false)?) } else { (None, None) };
    Ok(Projection { n, lo95_hint, hi95_hint })
}

/// Projects a stored curve onto a target accuracy.
pub fn project(args: &ProjectArgs) -> Result<Projection> {
    let path = existing(required(&args.curve, "curve")?)?;
    let target = *required(&args.target_accuracy, "target-accuracy")?;
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Validation(format!("target accuracy must be in [0, 1], got {target}")));
    }
    let artifact: CurveArtifact = serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| Error::Validation(format!("cannot read curve {}: {e}", path.display())))?;
    projection(&artifact.fit(), target)
}
