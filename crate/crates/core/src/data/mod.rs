//! Count matrices and the preprocessing steps applied to them.
//!
//! A [`CountMatrix`] stores markers as rows and samples as columns, which is
//! how expression tables are usually laid out on disk. Generators work on
//! the transposed view (samples × features), see
//! [`CountMatrix::samples_by_features`].

mod filter;
mod io;
mod normalize;
mod subsample;
mod transform;

use std::collections::{BTreeSet, HashSet};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{validation, Error, Result};

pub use filter::{filter_markers, PreprocessConfig, MIN_RECOMMENDED_MARKERS};
pub use io::{
    format_value, load_counts, load_groups, read_counts, write_counts, write_groups,
};
pub use normalize::{
    normalize, tmm_factors, upper_quartile, Normalization, NormalizationReport,
};
pub use subsample::subsample_pilot;
pub use transform::{inverse_log2p1, log2p1, log2p1_with};

/// Scale on which the entries of a [`CountMatrix`] are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    RawCounts,
    Log2p1,
}

/// Markers × samples matrix of non-negative values with identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    marker_ids: Vec<String>,
    sample_ids: Vec<String>,
    counts: Array2<f64>,
    scale: Scale,
    groups: Option<Vec<String>>,
}

impl CountMatrix {
    /// Builds a matrix, checking every structural invariant.
    ///
    /// `groups`, when given, holds one label per sample in `sample_ids` order.
    pub fn new(
        marker_ids: Vec<String>,
        sample_ids: Vec<String>,
        counts: Array2<f64>,
        scale: Scale,
        groups: Option<Vec<String>>,
    ) -> Result<Self> {
        let (g, n) = counts.dim();
        if g != marker_ids.len() || n != sample_ids.len() {
            return Err(validation(format!(
                "matrix is {g}x{n} but there are {} marker ids and {} sample ids",
                marker_ids.len(),
                sample_ids.len()
            )));
        }
        if g == 0 {
            return Err(validation("matrix has no markers"));
        }
        check_unique(&marker_ids, "marker")?;
        check_unique(&sample_ids, "sample")?;
        if let Some((idx, v)) = counts
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            let (r, c) = (idx / n.max(1), idx % n.max(1));
            return Err(validation(format!(
                "entry for marker {} sample {} is {v}; values must be finite and non-negative",
                marker_ids[r], sample_ids[c]
            )));
        }
        if let Some(groups) = &groups {
            if groups.len() != n {
                return Err(validation(format!(
                    "{} group labels for {n} samples",
                    groups.len()
                )));
            }
        }
        Ok(Self {
            marker_ids,
            sample_ids,
            counts,
            scale,
            groups,
        })
    }

    /// Builds a matrix from a samples × features array.
    pub fn from_samples(
        marker_ids: Vec<String>,
        sample_ids: Vec<String>,
        samples: &Array2<f64>,
        scale: Scale,
        groups: Option<Vec<String>>,
    ) -> Result<Self> {
        Self::new(
            marker_ids,
            sample_ids,
            samples.t().to_owned(),
            scale,
            groups,
        )
    }

    pub fn marker_ids(&self) -> &[String] {
        &self.marker_ids
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    /// The markers × samples values.
    pub fn counts(&self) -> &Array2<f64> {
        &self.counts
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn groups(&self) -> Option<&[String]> {
        self.groups.as_deref()
    }

    pub fn n_markers(&self) -> usize {
        self.counts.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.counts.ncols()
    }

    /// Sorted distinct group labels, empty when no groups are attached.
    pub fn group_levels(&self) -> Vec<String> {
        match &self.groups {
            Some(g) => g
                .iter()
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            None => Vec::new(),
        }
    }

    /// Sample indices belonging to `level`.
    pub fn samples_in_group(&self, level: &str) -> Vec<usize> {
        match &self.groups {
            Some(g) => g
                .iter()
                .enumerate()
                .filter(|(_, l)| l.as_str() == level)
                .map(|(i, _)| i)
                .collect(),
            None => Vec::new(),
        }
    }

    /// Returns a copy carrying the given group labels.
    pub fn with_groups(self, groups: Option<Vec<String>>) -> Result<Self> {
        Self::new(
            self.marker_ids,
            self.sample_ids,
            self.counts,
            self.scale,
            groups,
        )
    }

    pub(crate) fn with_values(&self, counts: Array2<f64>, scale: Scale) -> Result<Self> {
        Self::new(
            self.marker_ids.clone(),
            self.sample_ids.clone(),
            counts,
            scale,
            self.groups.clone(),
        )
    }

    /// Owned samples × features copy of the values.
    pub fn samples_by_features(&self) -> Array2<f64> {
        self.counts.t().to_owned()
    }

    /// Keeps the given samples, in the given order.
    pub fn select_samples(&self, idx: &[usize]) -> Result<Self> {
        let counts = self.counts.select(Axis(1), idx);
        let sample_ids = idx.iter().map(|&i| self.sample_ids[i].clone()).collect();
        let groups = self
            .groups
            .as_ref()
            .map(|g| idx.iter().map(|&i| g[i].clone()).collect());
        Self::new(
            self.marker_ids.clone(),
            sample_ids,
            counts,
            self.scale,
            groups,
        )
    }

    /// Keeps the given markers, in the given order.
    pub fn select_markers(&self, idx: &[usize]) -> Result<Self> {
        let counts = self.counts.select(Axis(0), idx);
        let marker_ids = idx.iter().map(|&i| self.marker_ids[i].clone()).collect();
        Self::new(
            marker_ids,
            self.sample_ids.clone(),
            counts,
            self.scale,
            self.groups.clone(),
        )
    }

    /// Appends the samples of `other`. Marker sets and order must match and
    /// both or neither matrix must carry groups.
    pub fn concat_samples(&self, other: &CountMatrix) -> Result<Self> {
        if self.marker_ids != other.marker_ids {
            return Err(validation("cannot concatenate matrices with different markers"));
        }
        if self.scale != other.scale {
            return Err(Error::State(
                "cannot concatenate matrices on different scales".into(),
            ));
        }
        let counts = ndarray::concatenate(Axis(1), &[self.counts.view(), other.counts.view()])
            .map_err(|e| validation(e.to_string()))?;
        let sample_ids = self
            .sample_ids
            .iter()
            .chain(other.sample_ids.iter())
            .cloned()
            .collect();
        let groups = match (&self.groups, &other.groups) {
            (Some(a), Some(b)) => Some(a.iter().chain(b.iter()).cloned().collect()),
            (None, None) => None,
            _ => return Err(validation("only one of the matrices carries group labels")),
        };
        Self::new(self.marker_ids.clone(), sample_ids, counts, self.scale, groups)
    }

    /// Returns a copy with sample ids renamed by `f`.
    pub fn rename_samples(&self, f: impl Fn(&str) -> String) -> Result<Self> {
        let ids = self.sample_ids.iter().map(|s| f(s)).collect();
        Self::new(
            self.marker_ids.clone(),
            ids,
            self.counts.clone(),
            self.scale,
            self.groups.clone(),
        )
    }

    /// Library size (column sum) per sample.
    pub fn library_sizes(&self) -> Vec<f64> {
        self.counts.sum_axis(Axis(0)).to_vec()
    }

    /// SHA-256 over ids, scale, groups and the bit patterns of the values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for id in &self.marker_ids {
            h.update(id.as_bytes());
            h.update([0u8]);
        }
        h.update([1u8]);
        for id in &self.sample_ids {
            h.update(id.as_bytes());
            h.update([0u8]);
        }
        h.update([match self.scale {
            Scale::RawCounts => 2u8,
            Scale::Log2p1 => 3u8,
        }]);
        if let Some(g) = &self.groups {
            for l in g {
                h.update(l.as_bytes());
                h.update([0u8]);
            }
        }
        for v in self.counts.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        hex(&h.finalize())
    }
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(validation(format!("duplicate {what} id {id:?}")));
        }
    }
    Ok(())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
