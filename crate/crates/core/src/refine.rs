//! Self-supervised refinement of an aligned pair of spaces.
//!
//! Every dictionary pair `(w, w')` is moved to its midpoint
//! `μ = (v_w + v_w') / 2`, which is written into both spaces; each space is
//! then iteratively length-normalized and mean-centered on its own.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embed_io::BilingualDictionary;
use crate::error::{ensure_contract, Error, Result};
use crate::matrix::EmbeddingMatrix;
use crate::preprocess::{iterative_normalize, NormalizationReport, DEFAULT_NORM_ITERS, DEFAULT_NORM_TOL};
use crate::retrieval::{argmax, unit_rows, Scorer};

/// How to treat a word that occurs in more than one dictionary pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConflictPolicy {
    /// Average only the first pair (dictionary order) that mentions a word.
    #[default]
    FirstPair,
    /// Average only pairs that are mutual cosine nearest neighbours.
    MutualOnly,
}

impl FromStr for ConflictPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first-pair" => Ok(ConflictPolicy::FirstPair),
            "mutual-only" => Ok(ConflictPolicy::MutualOnly),
            other => Err(Error::Config(format!("unknown conflict policy {other:?}"))),
        }
    }
}

impl fmt::Display for ConflictPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConflictPolicy::FirstPair => "first-pair",
            ConflictPolicy::MutualOnly => "mutual-only",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementConfig {
    /// 0 disables the normalization phase.
    pub norm_iters: usize,
    pub norm_tol: f64,
    pub conflict_policy: ConflictPolicy,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            norm_iters: DEFAULT_NORM_ITERS,
            norm_tol: DEFAULT_NORM_TOL,
            conflict_policy: ConflictPolicy::FirstPair,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Averaged {
    pub x: EmbeddingMatrix,
    pub z: EmbeddingMatrix,
    /// Pairs whose rows were replaced by their midpoint, in dictionary order.
    pub retained: Vec<(usize, usize)>,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinedSpaces {
    pub x_refined: EmbeddingMatrix,
    pub z_refined: EmbeddingMatrix,
    pub pairs_averaged: usize,
    pub pairs_skipped: usize,
    /// `None` when the normalization phase is disabled.
    pub x_report: Option<NormalizationReport>,
    pub z_report: Option<NormalizationReport>,
}

fn mutual_nn_pairs(x: &EmbeddingMatrix, z: &EmbeddingMatrix, dict: &BilingualDictionary) -> HashSet<(usize, usize)> {
    let xn = unit_rows(x);
    let zn = unit_rows(z);
    let mut src: Vec<usize> = dict.sources();
    src.sort_unstable();
    src.dedup();
    let mut trg: Vec<usize> = dict.targets();
    trg.sort_unstable();
    trg.dedup();
    let fwd = Scorer::new(&xn, &zn).map_rows(Some(&src), |i, row| (i, argmax(row).0));
    let bwd: HashSet<(usize, usize)> = Scorer::new(&zn, &xn)
        .map_rows(Some(&trg), |j, row| (argmax(row).0, j))
        .into_iter()
        .collect();
    fwd.into_iter().filter(|p| bwd.contains(p)).collect()
}

pub fn average_vectors(
    x_aligned: &EmbeddingMatrix,
    z_aligned: &EmbeddingMatrix,
    dict: &BilingualDictionary,
    policy: ConflictPolicy,
) -> Result<Averaged> {
    ensure_contract!(
        x_aligned.dim() == z_aligned.dim(),
        "spaces differ in dimension: {} vs {}",
        x_aligned.dim(),
        z_aligned.dim()
    );
    dict.check_bounds(x_aligned.rows(), z_aligned.rows())?;

    let mutual = match policy {
        ConflictPolicy::MutualOnly => Some(mutual_nn_pairs(x_aligned, z_aligned, dict)),
        ConflictPolicy::FirstPair => None,
    };
    let mut used_src = HashSet::new();
    let mut used_trg = HashSet::new();
    let mut retained = Vec::new();
    for &(w, w2) in dict.pairs() {
        if let Some(m) = &mutual {
            if !m.contains(&(w, w2)) {
                continue;
            }
        }
        if used_src.contains(&w) || used_trg.contains(&w2) {
            continue;
        }
        used_src.insert(w);
        used_trg.insert(w2);
        retained.push((w, w2));
    }

    let mut x = x_aligned.clone();
    let mut z = z_aligned.clone();
    for &(w, w2) in &retained {
        let mid: Vec<f64> = x_aligned
            .row(w)
            .iter()
            .zip(z_aligned.row(w2))
            .map(|(a, b)| (a + b) / 2.0)
            .collect();
        x.row_mut(w).copy_from_slice(&mid);
        z.row_mut(w2).copy_from_slice(&mid);
    }
    let skipped = dict.len() - retained.len();
    Ok(Averaged { x, z, retained, skipped })
}

pub fn refine_pipeline(
    x_aligned: &EmbeddingMatrix,
    z_aligned: &EmbeddingMatrix,
    dict: &BilingualDictionary,
    cfg: &RefinementConfig,
) -> Result<RefinedSpaces> {
    let averaged = average_vectors(x_aligned, z_aligned, dict, cfg.conflict_policy)?;
    let pairs_averaged = averaged.retained.len();
    let pairs_skipped = averaged.skipped;
    if cfg.norm_iters == 0 {
        return Ok(RefinedSpaces {
            x_refined: averaged.x,
            z_refined: averaged.z,
            pairs_averaged,
            pairs_skipped,
            x_report: None,
            z_report: None,
        });
    }
    if let Some(&(w, w2)) = averaged
        .retained
        .iter()
        .find(|&&(w, _)| averaged.x.row(w).iter().all(|&v| v == 0.0))
    {
        return Err(Error::Degenerate(format!(
            "pair ({w}, {w2}) averages to the zero vector (antipodal translations)"
        )));
    }
    let (xr, zr) = rayon::join(
        || iterative_normalize(&averaged.x, cfg.norm_iters, cfg.norm_tol),
        || iterative_normalize(&averaged.z, cfg.norm_iters, cfg.norm_tol),
    );
    let (x_refined, x_report) = xr?;
    let (z_refined, z_report) = zr?;
    Ok(RefinedSpaces {
        x_refined,
        z_refined,
        pairs_averaged,
        pairs_skipped,
        x_report: Some(x_report),
        z_report: Some(z_report),
    })
}
