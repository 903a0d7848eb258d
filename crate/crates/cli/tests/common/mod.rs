#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Array2;
use pilotgen::data::{write_counts, write_groups};
use pilotgen::{CountMatrix, Scale};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Poisson};

/// Two-group negative-binomial counts: `shifted` markers (the first ones)
/// differ 4-fold between groups, half up and half down.
pub struct Simulation {
    pub markers: usize,
    pub per_group: usize,
    pub shifted: usize,
    pub dispersion: f64,
}

impl Default for Simulation {
    fn default() -> Self {
        Self { markers: 200, per_group: 60, shifted: 30, dispersion: 0.1 }
    }
}

impl Simulation {
    pub fn draw(&self, seed: u64) -> CountMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = LogNormal::new(100f64.ln(), 1.0).unwrap();
        let n = 2 * self.per_group;
        let mut counts = Array2::zeros((self.markers, n));
        for g in 0..self.markers {
            let mu0: f64 = base.sample(&mut rng);
            for j in 0..n {
                let mut mu = mu0;
                if g < self.shifted && j >= self.per_group {
                    mu *= if g % 2 == 0 { 4.0 } else { 0.25 };
                }
                let shape = 1.0 / self.dispersion;
                let lambda = Gamma::new(shape, mu / shape).unwrap().sample(&mut rng);
                counts[[g, j]] = if lambda > 0.0 { Poisson::new(lambda).unwrap().sample(&mut rng) } else { 0.0 };
            }
        }
        CountMatrix::new(
            (0..self.markers).map(|g| format!("miR-{g}")).collect(),
            (0..n).map(|j| format!("S{j}")).collect(),
            counts,
            Scale::RawCounts,
            Some((0..n).map(|j| if j < self.per_group { "tumor".into() } else { "normal".into() }).collect()),
        )
        .unwrap()
    }

    /// Writes `counts.tsv` and `groups.tsv` into `dir`.
    pub fn write(&self, seed: u64, dir: &Path) -> (PathBuf, PathBuf) {
        let m = self.draw(seed);
        let (c, g) = (dir.join("counts.tsv"), dir.join("groups.tsv"));
        write_counts(&c, &m).unwrap();
        write_groups(&g, &m).unwrap();
        (c, g)
    }
}

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pilotgen"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// SHA-256 of every file directly inside `dir`, keyed by file name.
pub fn hash_dir(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_file() {
            out.insert(
                p.file_name().unwrap().to_string_lossy().into_owned(),
                pilotgen_cli::sha256_file(&p).unwrap(),
            );
        }
    }
    out
}
