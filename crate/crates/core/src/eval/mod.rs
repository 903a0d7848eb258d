//! Fidelity metrics comparing generated samples with reference samples.

mod embed;
mod lowess;
mod metrics;
mod pcc;
mod voom;
mod ward;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use embed::embed_2d;
pub use lowess::{interpolate, lowess};
pub use metrics::{adjusted_rand_index, ccc, mad_paired, marker_summary, one_minus_pct_zero_markers, SummaryStats};
pub use pcc::{parse_clusters, partial_correlations, Clusters, PartialCorrelation};
pub use voom::{de_concordance, de_voom_lite, DeResult, TREND_SPAN};
pub use ward::ward_clusters;

use crate::data::inverse_log2p1;
use crate::data::{CountMatrix, Scale};
use crate::error::{validation, Result};
use metrics::log_values;

/// Number of clusters cut from the Ward tree.
pub const CLUSTER_COUNT: usize = 2;

/// Study design being evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// One sample type; clustering is scored against the data source.
    OneGroup,
    /// Two sample types; clustering is scored against the group labels and
    /// differential expression is compared.
    TwoGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratedVsReference {
    pub generated: f64,
    pub reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mad_mean: f64,
    pub mad_sd: f64,
    pub mad_sparsity: f64,
    pub one_minus_pct_zero_markers: GeneratedVsReference,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ccc_pcc: Option<f64>,
    pub ari: f64,
    pub cari: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ccc_neglog10_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ccc_log2fc: Option<f64>,
}

/// Reorders the markers of `generated` to match `reference`; the two must
/// hold the same marker set.
pub fn align_markers(generated: &CountMatrix, reference: &CountMatrix) -> Result<CountMatrix> {
    if generated.marker_ids() == reference.marker_ids() {
        return Ok(generated.clone());
    }
    let pos: std::collections::HashMap<&str, usize> = generated
        .marker_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    if pos.len() != reference.n_markers() {
        return Err(validation("generated and reference data have different markers"));
    }
    let idx = reference
        .marker_ids()
        .iter()
        .map(|id| {
            pos.get(id.as_str())
                .copied()
                .ok_or_else(|| validation(format!("marker {id:?} missing from generated data")))
        })
        .collect::<Result<Vec<_>>>()?;
    generated.select_markers(&idx)
}

fn raw(m: &CountMatrix) -> Result<CountMatrix> {
    match m.scale() {
        Scale::RawCounts => Ok(m.clone()),
        Scale::Log2p1 => inverse_log2p1(m),
    }
}

/// Partial correlations of `generated` and `reference` matched by
/// (cluster, marker pair); pairs missing from either side are dropped.
fn pcc_concordance(generated: &CountMatrix, reference: &CountMatrix, clusters: &Clusters) -> Result<Option<f64>> {
    let gen = partial_correlations(generated, clusters)?;
    let refr = partial_correlations(reference, clusters)?;
    let key = |p: &PartialCorrelation| (p.cluster.clone(), p.first.clone(), p.second.clone());
    let lookup: std::collections::HashMap<_, f64> = refr.iter().map(|p| (key(p), p.value)).collect();
    let (a, b): (Vec<f64>, Vec<f64>) = gen
        .iter()
        .filter_map(|p| lookup.get(&key(p)).map(|&r| (p.value, r)))
        .unzip();
    if a.len() < 2 {
        log::warn!("fewer than two partial correlations shared; ccc_pcc omitted");
        return Ok(None);
    }
    ccc(&a, &b).map(Some).or_else(|e| {
        log::warn!("ccc_pcc omitted: {e}");
        Ok(None)
    })
}

/// Clustering labels and truth for the combined reference-then-generated
/// sample set.
fn clustering_ari(generated: &CountMatrix, reference: &CountMatrix, setting: Setting) -> Result<f64> {
    let truth: Vec<String> = match setting {
        Setting::OneGroup => std::iter::repeat_n("reference".to_string(), reference.n_samples())
            .chain(std::iter::repeat_n("generated".to_string(), generated.n_samples()))
            .collect(),
        Setting::TwoGroup => {
            let (Some(r), Some(g)) = (reference.groups(), generated.groups()) else {
                return Err(validation("two-group evaluation needs group labels for both data sets"));
            };
            r.iter().chain(g).cloned().collect()
        }
    };
    let combined = ndarray::concatenate(
        ndarray::Axis(0),
        &[log_values(reference).t(), log_values(generated).t()],
    )
    .map_err(|e| validation(e.to_string()))?;
    let labels = ward_clusters(&combined, CLUSTER_COUNT)?;
    adjusted_rand_index(&labels, &truth)
}

/// Computes every metric for one generated data set against the reference.
pub fn evaluate(
    generated: &CountMatrix,
    reference: &CountMatrix,
    clusters: Option<&Clusters>,
    setting: Setting,
) -> Result<EvalReport> {
    let generated = align_markers(generated, reference)?;
    let gs = marker_summary(&generated)?;
    let rs = marker_summary(reference)?;
    let ccc_pcc = match clusters {
        Some(c) => pcc_concordance(&generated, reference, c)?,
        None => None,
    };
    let ari = clustering_ari(&generated, reference, setting)?;
    let (ccc_neglog10_p, ccc_log2fc) = match setting {
        Setting::OneGroup => (None, None),
        Setting::TwoGroup => {
            let gd = de_voom_lite(&raw(&generated)?)?;
            let rd = de_voom_lite(&raw(reference)?)?;
            let (p, fc) = de_concordance(&gd, &rd)?;
            (Some(p), Some(fc))
        }
    };
    Ok(EvalReport {
        mad_mean: mad_paired(&gs.mean, &rs.mean)?,
        mad_sd: mad_paired(&gs.sd, &rs.sd)?,
        mad_sparsity: mad_paired(&gs.sparsity, &rs.sparsity)?,
        one_minus_pct_zero_markers: GeneratedVsReference {
            generated: one_minus_pct_zero_markers(&generated),
            reference: one_minus_pct_zero_markers(reference),
        },
        ccc_pcc,
        ari,
        cari: 1.0 - ari,
        ccc_neglog10_p,
        ccc_log2fc,
    })
}

/// One plotted point of the joint embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub sample_id: String,
    pub x: f64,
    pub y: f64,
    pub source: String,
    pub group: String,
}

/// Joint 2-D embedding of reference and generated samples.
pub fn embedding(generated: &CountMatrix, reference: &CountMatrix) -> Result<Vec<EmbeddingRow>> {
    let generated = align_markers(generated, reference)?;
    let combined = ndarray::concatenate(
        ndarray::Axis(0),
        &[log_values(reference).t(), log_values(&generated).t()],
    )
    .map_err(|e| validation(e.to_string()))?;
    let coords = embed::pca_scores(&combined, 2)?;
    let mut rows = Vec::with_capacity(coords.nrows());
    for (source, m) in [("reference", reference), ("generated", &generated)] {
        for (j, id) in m.sample_ids().iter().enumerate() {
            let i = rows.len();
            rows.push(EmbeddingRow {
                sample_id: id.clone(),
                x: coords[[i, 0]],
                y: coords[[i, 1]],
                source: source.to_owned(),
                group: m.groups().map_or_else(String::new, |g| g[j].clone()),
            });
        }
    }
    Ok(rows)
}

pub fn write_embedding(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "sample_id\tx\ty\tsource\tgroup")?;
    for r in rows {
        writeln!(w, "{}\t{}\t{}\t{}\t{}", r.sample_id, r.x, r.y, r.source, r.group)?;
    }
    w.flush()?;
    Ok(())
}
