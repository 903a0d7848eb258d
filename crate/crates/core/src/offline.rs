//! Expanding a pilot dataset before generator training, either with
//! Gaussian-noise copies or with repeated autoencoder reconstructions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Axis;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{CountMatrix, Scale};
use crate::error::{validation, Error, Result};
use crate::nn::{Adam, Mlp, ParamStore, Tape};
use crate::rng::{derive_seed, seeded};
use crate::train::{make_batches, run_phase, EpochOutcome, TrainingLog, TrainingPolicy};

pub const DEFAULT_NOISE_SD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum OfflineConfig {
    None,
    /// `replicates` noisy copies with standard deviation `noise_sd` (log2 scale).
    Gaussian { replicates: usize, noise_sd: f64 },
    /// `iterations` rounds of autoencoder reconstruction, doubling the pool each time.
    Ae { iterations: usize },
}

impl OfflineConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OfflineConfig::Gaussian {
                replicates,
                noise_sd,
            } if replicates == 0 || !(noise_sd > 0.0 && noise_sd.is_finite()) => Err(validation(
                "gaussian augmentation needs at least one replicate and a positive noise SD",
            )),
            _ => Ok(()),
        }
    }

    /// Sample count after augmenting `k` pilot samples.
    pub fn output_size(&self, k: usize) -> usize {
        match *self {
            OfflineConfig::None => k,
            OfflineConfig::Gaussian { replicates, .. } => k * (replicates + 1),
            OfflineConfig::Ae { iterations } => k << iterations,
        }
    }
}

/// `none`, `gaussian:R`, `gaussian:R:SD` or `ae:T`.
impl FromStr for OfflineConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| validation(format!("expected a non-negative integer, got {v:?}")))
        };
        let cfg = match parts.as_slice() {
            ["none"] => OfflineConfig::None,
            ["gaussian", r] => OfflineConfig::Gaussian {
                replicates: num(r)?,
                noise_sd: DEFAULT_NOISE_SD,
            },
            ["gaussian", r, sd] => OfflineConfig::Gaussian {
                replicates: num(r)?,
                noise_sd: sd
                    .parse()
                    .map_err(|_| validation(format!("bad noise SD {sd:?}")))?,
            },
            ["ae", t] => OfflineConfig::Ae {
                iterations: t.parse().map_err(|_| {
                    validation(format!("AE iterations must be a non-negative integer, got {t:?}"))
                })?,
            },
            _ => return Err(validation(format!("unknown offline augmentation {s:?}"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for OfflineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OfflineConfig::None => f.write_str("none"),
            OfflineConfig::Gaussian {
                replicates,
                noise_sd,
            } => write!(f, "gaussian:{replicates}:{noise_sd}"),
            OfflineConfig::Ae { iterations } => write!(f, "ae:{iterations}"),
        }
    }
}

fn require_log_scale(m: &CountMatrix) -> Result<()> {
    if m.scale() != Scale::Log2p1 {
        return Err(Error::State("offline augmentation expects log2(x+1) data".into()));
    }
    Ok(())
}

/// Applies `cfg` to `pilot`.
pub fn augment(pilot: &CountMatrix, cfg: &OfflineConfig, policy: &TrainingPolicy, seed: u64) -> Result<CountMatrix> {
    match *cfg {
        OfflineConfig::None => {
            require_log_scale(pilot)?;
            Ok(pilot.clone())
        }
        OfflineConfig::Gaussian {
            replicates,
            noise_sd,
        } => gaussian_head(pilot, replicates, noise_sd, seed),
        OfflineConfig::Ae { iterations } => ae_head(pilot, iterations, policy, seed),
    }
}

/// The pilot followed by `replicates` copies with i.i.d. `N(0, noise_sd²)`
/// noise added to every entry and clamped at zero. Copy `r` has sample IDs
/// suffixed with `_g{r}`.
pub fn gaussian_head(pilot: &CountMatrix, replicates: usize, noise_sd: f64, seed: u64) -> Result<CountMatrix> {
    require_log_scale(pilot)?;
    OfflineConfig::Gaussian {
        replicates,
        noise_sd,
    }
    .validate()?;
    let noise = Normal::new(0.0, noise_sd).map_err(|e| validation(e.to_string()))?;
    let mut rng = seeded(seed);
    let mut out = pilot.clone();
    for r in 1..=replicates {
        let values = pilot.counts().mapv(|v| (v + noise.sample(&mut rng)).max(0.0));
        let copy = pilot
            .with_values(values, Scale::Log2p1)?
            .rename_samples(|s| format!("{s}_g{r}"))?;
        out = out.concat_samples(&copy)?;
    }
    Ok(out)
}

/// Autoencoder layer widths: encoder hidden widths and code size.
const AE_WIDTHS: [usize; 3] = [256, 128, 64];

/// Repeatedly trains an autoencoder on the current pool and appends the
/// pool's reconstructions, so `iterations` rounds yield `k · 2^iterations`
/// samples with the originals first. Round `t` suffixes IDs with `_ae{t}`.
pub fn ae_head(pilot: &CountMatrix, iterations: usize, policy: &TrainingPolicy, seed: u64) -> Result<CountMatrix> {
    require_log_scale(pilot)?;
    if iterations == 0 {
        return Ok(pilot.clone());
    }
    if pilot.n_samples() < 2 {
        return Err(validation("autoencoder augmentation needs at least two samples"));
    }
    policy.validate()?;
    let d = pilot.n_markers();
    let mut enc_sizes = vec![d];
    enc_sizes.extend(AE_WIDTHS);
    let mut dec_sizes: Vec<usize> = AE_WIDTHS.iter().rev().copied().collect();
    dec_sizes.push(d);
    let encoder = Mlp::new("ae.encoder", &enc_sizes);
    let decoder = Mlp::new("ae.decoder", &dec_sizes);

    let mut pool = pilot.clone();
    for t in 1..=iterations {
        let round_seed = derive_seed(seed, &[t as u64]);
        let mut rng = seeded(round_seed);
        let mut store = ParamStore::new();
        encoder.init(&mut store, &mut rng, 1.0);
        decoder.init(&mut store, &mut rng, 1.0);
        let x = pool.samples_by_features();
        let means = x.mean_axis(Axis(0)).expect("pool is not empty");
        decoder.set_output_bias(&mut store, &means.to_vec());
        let n = x.nrows();
        let mut opt = Adam::new(policy.adam);
        let round_policy = policy.with_seed(round_seed);
        run_phase(&round_policy, "autoencoder", &mut store, &mut TrainingLog::default(), |store| {
            let mut sum = 0.0;
            for batch in make_batches(n, round_policy.batch_fraction, &mut rng) {
                let xb = x.select(Axis(0), &batch);
                let mut tape = Tape::new();
                let p = store.bind(&mut tape);
                let xv = tape.leaf(xb);
                let code = encoder.forward(&mut tape, &p, xv);
                let code = tape.relu(code);
                let recon = decoder.forward(&mut tape, &p, code);
                let diff = tape.sub(recon, xv);
                let sq = tape.square(diff);
                let mse = tape.mean(sq);
                let grads = tape.backward(mse);
                opt.step(store, &p, &grads, |_| true);
                sum += batch.len() as f64 * tape.scalar(mse);
            }
            let mse = sum / n as f64;
            Ok(EpochOutcome {
                monitored: mse,
                losses: BTreeMap::from([("mse".to_owned(), mse)]),
            })
        })?;
        let code = encoder.eval(&store, &x).mapv(|v| v.max(0.0));
        let recon = decoder.eval(&store, &code).mapv(|v| v.max(0.0));
        let copy = CountMatrix::from_samples(
            pool.marker_ids().to_vec(),
            pool.sample_ids().iter().map(|s| format!("{s}_ae{t}")).collect(),
            &recon,
            Scale::Log2p1,
            pool.groups().map(<[String]>::to_vec),
        )?;
        pool = pool.concat_samples(&copy)?;
    }
    Ok(pool)
}
