//! Queen-contiguity weights and global Moran's I.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod moran;
mod queen;

pub use moran::{moran_permutation, morans_i, MoranResult, MIN_PERMUTATIONS};
pub use queen::{queen_contiguity, unit_square_grid, Polygon, SNAP};

#[derive(Debug, Error)]
pub enum SpatialError {
    #[error("invalid geometry for unit {fips}: {reason}")]
    InvalidGeometry { fips: String, reason: String },
    #[error("duplicate polygon for unit {0}")]
    DuplicateUnit(String),
    #[error("unit {0} is not part of the weights")]
    UnknownUnit(String),
    #[error("weights are asymmetric between {0} and {1}")]
    Asymmetric(String, String),
    #[error("unit {0} lists itself as a neighbour")]
    SelfNeighbor(String),
    #[error("keep set is empty")]
    EmptyKeepSet,
    #[error("only {0} units with values and neighbours; Moran's I needs at least 3")]
    TooFewUnits(usize),
    #[error("values are constant across the units used")]
    ConstantValues,
    #[error("weights have no links among the units used")]
    NoLinks,
    #[error("{0} permutations requested; at least {MIN_PERMUTATIONS} are required")]
    TooFewPermutations(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightStyle {
    /// `w_ij = 1` for neighbours.
    #[default]
    Binary,
    /// Each row with neighbours sums to one.
    Row,
}

impl std::fmt::Display for WeightStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WeightStyle::Binary => "binary",
            WeightStyle::Row => "row",
        })
    }
}

impl std::str::FromStr for WeightStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "binary" | "b" => Ok(Self::Binary),
            "row" | "w" => Ok(Self::Row),
            other => Err(format!("unknown weight style `{other}` (binary or row)")),
        }
    }
}

/// Symmetric contiguity graph over units sorted by fips.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    unit_ids: Vec<String>,
    neighbors: Vec<Vec<usize>>,
    style: WeightStyle,
}

impl SpatialWeights {
    /// Validates symmetry and the absence of self-links.
    pub fn from_neighbors(
        neighbors: BTreeMap<String, BTreeSet<String>>,
        style: WeightStyle,
    ) -> Result<Self, SpatialError> {
        let unit_ids: Vec<String> = neighbors.keys().cloned().collect();
        let index: BTreeMap<&str, usize> =
            unit_ids.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
        let mut adj = Vec::with_capacity(unit_ids.len());
        for (unit, set) in &neighbors {
            let mut row = Vec::with_capacity(set.len());
            for n in set {
                if n == unit {
                    return Err(SpatialError::SelfNeighbor(unit.clone()));
                }
                let j = *index.get(n.as_str()).ok_or_else(|| SpatialError::UnknownUnit(n.clone()))?;
                if !neighbors[n].contains(unit) {
                    return Err(SpatialError::Asymmetric(unit.clone(), n.clone()));
                }
                row.push(j);
            }
            adj.push(row);
        }
        Ok(Self {
            unit_ids,
            neighbors: adj,
            style,
        })
    }

    pub(crate) fn from_parts(unit_ids: Vec<String>, neighbors: Vec<Vec<usize>>, style: WeightStyle) -> Self {
        debug_assert!(unit_ids.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(neighbors.iter().enumerate().all(|(i, row)| {
            row.windows(2).all(|w| w[0] < w[1])
                && row.iter().all(|&j| j != i && neighbors[j].binary_search(&i).is_ok())
        }));
        Self {
            unit_ids,
            neighbors,
            style,
        }
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn len(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit_ids.is_empty()
    }

    pub fn style(&self) -> WeightStyle {
        self.style
    }

    pub fn with_style(mut self, style: WeightStyle) -> Self {
        self.style = style;
        self
    }

    pub fn index_of(&self, unit: &str) -> Option<usize> {
        self.unit_ids.binary_search_by(|u| u.as_str().cmp(unit)).ok()
    }

    /// Neighbour indices of unit `i`, ascending.
    pub fn neighbor_indices(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn neighbors(&self, unit: &str) -> Option<Vec<&str>> {
        self.index_of(unit)
            .map(|i| self.neighbors[i].iter().map(|&j| self.unit_ids[j].as_str()).collect())
    }

    pub fn n_links(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// Sum of all weights.
    pub fn s0(&self) -> f64 {
        match self.style {
            WeightStyle::Binary => self.n_links() as f64,
            WeightStyle::Row => self.neighbors.iter().filter(|r| !r.is_empty()).count() as f64,
        }
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if self.neighbors[i].binary_search(&j).is_err() {
            return 0.0;
        }
        match self.style {
            WeightStyle::Binary => 1.0,
            WeightStyle::Row => 1.0 / self.neighbors[i].len() as f64,
        }
    }

    /// Units without neighbours.
    pub fn islands(&self) -> Vec<&str> {
        self.neighbors
            .iter()
            .zip(&self.unit_ids)
            .filter(|(r, _)| r.is_empty())
            .map(|(_, u)| u.as_str())
            .collect()
    }
}

/// Induced subgraph on `keep`; units left without neighbours stay in the
/// result and show up in [`SpatialWeights::islands`].
pub fn subset_weights(weights: &SpatialWeights, keep: &BTreeSet<String>) -> Result<SpatialWeights, SpatialError> {
    if keep.is_empty() {
        return Err(SpatialError::EmptyKeepSet);
    }
    let old: Vec<usize> = keep
        .iter()
        .map(|u| weights.index_of(u).ok_or_else(|| SpatialError::UnknownUnit(u.clone())))
        .collect::<Result<_, _>>()?;
    let mut new_index = vec![usize::MAX; weights.len()];
    for (new, &o) in old.iter().enumerate() {
        new_index[o] = new;
    }
    let neighbors = old
        .iter()
        .map(|&o| {
            weights.neighbors[o]
                .iter()
                .filter_map(|&j| (new_index[j] != usize::MAX).then_some(new_index[j]))
                .collect()
        })
        .collect();
    Ok(SpatialWeights::from_parts(keep.iter().cloned().collect(), neighbors, weights.style))
}
