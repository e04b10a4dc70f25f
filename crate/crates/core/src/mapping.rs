//! Fully unsupervised orthogonal alignment of two embedding spaces.
//!
//! A seed dictionary is induced from the sorted intra-language similarity
//! distributions of the most frequent words, then improved by self-learning:
//! each iteration fits one orthogonal transform per language to the current
//! dictionary and re-induces the dictionary in the mapped space, with random
//! masking of similarity entries that is relaxed as the objective stalls.

use log::{debug, info};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::embed_io::BilingualDictionary;
use crate::error::{ensure_contract, Error, Result};
use crate::matrix::{dot, gemm_abt, EmbeddingMatrix};
use crate::preprocess::length_normalize_in_place;
use crate::retrieval::{induce_normalized, unit_rows, Direction, Dropout, RetrievalMethod, DEFAULT_CSLS_K};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    /// Most frequent words per language used while self-learning.
    pub vocab_cutoff: usize,
    /// Rows used for the seed dictionary; `None` uses `vocab_cutoff`.
    pub init_cutoff: Option<usize>,
    pub csls_k: usize,
    pub keep_prob_initial: f64,
    pub keep_prob_growth: f64,
    pub stall_patience: usize,
    pub convergence_tol: f64,
    pub max_iterations: usize,
    pub direction: Direction,
    pub induction: RetrievalMethod,
    /// Words per language for the final re-fit dictionary; `None` is the
    /// whole vocabulary.
    pub refit_cutoff: Option<usize>,
    /// Scale both mapped spaces by the square roots of the cross-correlation
    /// singular values after the final fit.
    pub reweight: bool,
    pub seed: u64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig {
            vocab_cutoff: 20_000,
            init_cutoff: None,
            csls_k: DEFAULT_CSLS_K,
            keep_prob_initial: 0.1,
            keep_prob_growth: 2.0,
            stall_patience: 50,
            convergence_tol: 1e-6,
            max_iterations: 10_000,
            direction: Direction::Union,
            induction: RetrievalMethod::Csls,
            refit_cutoff: None,
            reweight: false,
            seed: 0,
        }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_contract!(self.vocab_cutoff >= 2, "vocab_cutoff must be at least 2");
        ensure_contract!(self.csls_k >= 1, "csls_k must be at least 1");
        ensure_contract!(
            self.keep_prob_initial > 0.0 && self.keep_prob_initial <= 1.0,
            "keep_prob_initial must lie in (0, 1]"
        );
        ensure_contract!(self.keep_prob_growth > 1.0, "keep_prob_growth must exceed 1");
        ensure_contract!(self.stall_patience >= 1, "stall_patience must be at least 1");
        ensure_contract!(self.convergence_tol >= 0.0, "convergence_tol must be non-negative");
        ensure_contract!(self.max_iterations >= 1, "max_iterations must be at least 1");
        if let Some(c) = self.init_cutoff {
            ensure_contract!(c >= 1, "init_cutoff must be positive");
        }
        if let Some(c) = self.refit_cutoff {
            ensure_contract!(c >= 1, "refit_cutoff must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub keep_prob: f64,
    pub objective: f64,
    pub dictionary_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MappingResult {
    pub w_src: DMatrix<f64>,
    pub w_trg: DMatrix<f64>,
    pub dictionary: BilingualDictionary,
    /// Mean cosine of the dictionary pairs in the mapped space.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Per-dimension scale applied after the orthogonal maps, when enabled.
    pub reweighting: Option<Vec<f64>>,
    pub trace: Vec<IterationRecord>,
}

impl MappingResult {
    fn apply(&self, emb: &EmbeddingMatrix, w: &DMatrix<f64>) -> Result<EmbeddingMatrix> {
        let mut out = emb.transform(w)?;
        if let Some(scale) = &self.reweighting {
            let d = out.dim();
            for row in out.as_mut_slice().chunks_mut(d.max(1)) {
                row.iter_mut().zip(scale).for_each(|(v, s)| *v *= s);
            }
        }
        Ok(out)
    }

    pub fn map_source(&self, x: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        self.apply(x, &self.w_src)
    }

    pub fn map_target(&self, z: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        self.apply(z, &self.w_trg)
    }
}

struct SvdParts {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    singular_values: Vec<f64>,
}

fn svd_cross(x_pairs: &EmbeddingMatrix, z_pairs: &EmbeddingMatrix) -> Result<SvdParts> {
    let m = x_pairs.cross_covariance(z_pairs)?;
    let d = m.nrows();
    let svd = nalgebra::SVD::try_new(m, true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD of the cross-covariance did not converge".into()))?;
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD returned no U".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD returned no Vᵀ".into()))?;
    if u.ncols() != d || v_t.nrows() != d {
        return Err(Error::Numerical(format!("SVD returned a thin {}x{} factor", u.nrows(), u.ncols())));
    }
    Ok(SvdParts {
        u,
        v: v_t.transpose(),
        singular_values: svd.singular_values.iter().copied().collect(),
    })
}

/// Orthogonal `W` minimizing `‖XW − Z‖_F`, from the SVD `XᵀZ = UΣVᵀ` as
/// `W = UVᵀ`.
pub fn procrustes_solve(x_pairs: &EmbeddingMatrix, z_pairs: &EmbeddingMatrix) -> Result<DMatrix<f64>> {
    ensure_contract!(
        x_pairs.rows() == z_pairs.rows() && x_pairs.dim() == z_pairs.dim(),
        "shape mismatch: {}x{} vs {}x{}",
        x_pairs.rows(),
        x_pairs.dim(),
        z_pairs.rows(),
        z_pairs.dim()
    );
    ensure_contract!(x_pairs.rows() >= 1, "need at least one dictionary pair");
    let parts = svd_cross(x_pairs, z_pairs)?;
    Ok(&parts.u * parts.v.transpose())
}

/// Splits the Procrustes solution into one orthogonal map per language:
/// `X·U` and `Z·V` live in a shared space where `(XU)(ZV)ᵀ = X·UVᵀ·Zᵀ`.
fn fit_pair(
    x: &EmbeddingMatrix,
    z: &EmbeddingMatrix,
    dict: &BilingualDictionary,
) -> Result<SvdParts> {
    let xs = x.select_rows(&dict.sources());
    let zs = z.select_rows(&dict.targets());
    svd_cross(&xs, &zs)
}

/// Rows of `X_c X_cᵀ` sorted ascending and scaled to unit length.
fn sorted_similarity_profile(m: &EmbeddingMatrix) -> EmbeddingMatrix {
    let n = m.rows();
    let mut sims = gemm_abt(m.as_slice(), n, m.as_slice(), n, m.dim());
    for row in sims.chunks_mut(n.max(1)) {
        row.sort_unstable_by(f64::total_cmp);
    }
    let mut out = EmbeddingMatrix::from_raw(n, n, sims);
    length_normalize_in_place(&mut out);
    out
}

/// Seed dictionary from the similarity-distribution heuristic: words whose
/// sorted similarity rows look alike are paired by nearest-neighbour
/// retrieval in both directions (union).
pub fn unsupervised_init(x: &EmbeddingMatrix, z: &EmbeddingMatrix, cfg: &MappingConfig) -> Result<BilingualDictionary> {
    let cutoff = cfg.init_cutoff.unwrap_or(cfg.vocab_cutoff);
    ensure_contract!(cutoff >= 1, "cutoff must be positive");
    ensure_contract!(
        cutoff <= x.rows() && cutoff <= z.rows(),
        "cutoff {cutoff} exceeds vocabulary sizes {} / {}",
        x.rows(),
        z.rows()
    );
    let sx = sorted_similarity_profile(&x.head(cutoff));
    let sz = sorted_similarity_profile(&z.head(cutoff));
    let pairs = induce_normalized(&sx, &sz, RetrievalMethod::Nn, 1, Direction::Union, None);
    info!("seed dictionary: {} pairs over {cutoff} words", pairs.len());
    Ok(BilingualDictionary::new(pairs))
}

fn mixed_seed(seed: u64, iteration: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// CSLS needs `1 <= k <= n - 1` on both sides; smaller spaces fall back to NN.
fn effective_retrieval(cfg: &MappingConfig, n_x: usize, n_z: usize) -> (RetrievalMethod, usize) {
    match cfg.induction {
        RetrievalMethod::Csls => {
            let k = cfg.csls_k.min(n_x.saturating_sub(1)).min(n_z.saturating_sub(1));
            if k == 0 {
                (RetrievalMethod::Nn, 1)
            } else {
                (RetrievalMethod::Csls, k)
            }
        }
        RetrievalMethod::Nn => (RetrievalMethod::Nn, 1),
    }
}

fn mean_pair_cosine(xn: &EmbeddingMatrix, zn: &EmbeddingMatrix, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| dot(xn.row(i), zn.row(j))).sum::<f64>() / pairs.len() as f64
}

fn mapped_units(x: &EmbeddingMatrix, z: &EmbeddingMatrix, fit: &SvdParts) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    Ok((unit_rows(&x.transform(&fit.u)?), unit_rows(&z.transform(&fit.v)?)))
}

pub fn self_learning_align(
    x: &EmbeddingMatrix,
    z: &EmbeddingMatrix,
    init: &BilingualDictionary,
    cfg: &MappingConfig,
) -> Result<MappingResult> {
    cfg.validate()?;
    ensure_contract!(x.dim() == z.dim(), "dimension mismatch: {} vs {}", x.dim(), z.dim());
    ensure_contract!(!init.is_empty(), "initial dictionary is empty");
    init.check_bounds(x.rows(), z.rows())?;

    let cutoff = cfg.vocab_cutoff.min(x.rows()).min(z.rows());
    let xc = x.head(cutoff);
    let zc = z.head(cutoff);
    let (method, k) = effective_retrieval(cfg, cutoff, cutoff);

    let mut dict = init.clone();
    let mut keep_prob = cfg.keep_prob_initial;
    let mut best = f64::NEG_INFINITY;
    let mut last_improvement = 0usize;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0usize;

    for it in 1..=cfg.max_iterations {
        iterations = it;
        let fit = fit_pair(x, z, &dict)?;
        let (xn, zn) = mapped_units(&xc, &zc, &fit)?;
        let dropout = (keep_prob < 1.0).then(|| Dropout {
            keep_prob,
            seed: mixed_seed(cfg.seed, it),
        });
        let pairs = induce_normalized(&xn, &zn, method, k, cfg.direction, dropout);
        if pairs.is_empty() {
            return Err(Error::AlignmentCollapse { iteration: it });
        }
        let objective = mean_pair_cosine(&xn, &zn, &pairs);
        if !objective.is_finite() {
            return Err(Error::Numerical(format!("non-finite objective at iteration {it}")));
        }
        debug!(
            "iteration {it}: keep_prob {keep_prob:.4}, objective {objective:.6}, {} pairs",
            pairs.len()
        );
        trace.push(IterationRecord {
            iteration: it,
            keep_prob,
            objective,
            dictionary_size: pairs.len(),
        });
        dict = BilingualDictionary::new(pairs);

        if objective - best >= cfg.convergence_tol {
            best = objective;
            last_improvement = it;
        } else if keep_prob >= 1.0 {
            converged = true;
            break;
        } else if it - last_improvement >= cfg.stall_patience {
            keep_prob = (keep_prob * cfg.keep_prob_growth).min(1.0);
            last_improvement = it;
            debug!("objective stalled, keep_prob -> {keep_prob}");
        }
    }

    // Final fit: induce over the (possibly larger) refit vocabulary with the
    // last transforms, then solve once more on that dictionary.
    let fit = fit_pair(x, z, &dict)?;
    let refit_n = cfg.refit_cutoff.unwrap_or(usize::MAX);
    let (xr, zr) = (x.head(refit_n), z.head(refit_n));
    let (xn, zn) = mapped_units(&xr, &zr, &fit)?;
    let (method, k) = effective_retrieval(cfg, xr.rows(), zr.rows());
    let full = BilingualDictionary::new(induce_normalized(&xn, &zn, method, k, cfg.direction, None));
    if full.is_empty() {
        return Err(Error::AlignmentCollapse { iteration: iterations + 1 });
    }
    let fit = fit_pair(x, z, &full)?;
    let (xn, zn) = mapped_units(&xr, &zr, &fit)?;
    let objective = mean_pair_cosine(&xn, &zn, full.pairs());
    if !objective.is_finite() {
        return Err(Error::Numerical("non-finite objective after final fit".into()));
    }
    info!(
        "self-learning {} after {iterations} iterations; final dictionary {} pairs, objective {objective:.6}",
        if converged { "converged" } else { "stopped" },
        full.len()
    );
    let reweighting = cfg
        .reweight
        .then(|| fit.singular_values.iter().map(|s| s.max(0.0).sqrt()).collect());
    Ok(MappingResult {
        w_src: fit.u,
        w_trg: fit.v,
        dictionary: full,
        objective,
        iterations,
        converged,
        reweighting,
        trace,
    })
}

/// Seed induction followed by self-learning. The self-learning cutoff is
/// clamped to the smaller vocabulary.
pub fn align(x: &EmbeddingMatrix, z: &EmbeddingMatrix, cfg: &MappingConfig) -> Result<MappingResult> {
    cfg.validate()?;
    ensure_contract!(x.dim() == z.dim(), "dimension mismatch: {} vs {}", x.dim(), z.dim());
    let n = x.rows().min(z.rows());
    ensure_contract!(n >= 2, "need at least two words per language, got {} / {}", x.rows(), z.rows());
    let mut cfg = cfg.clone();
    if cfg.vocab_cutoff > n {
        info!("vocab_cutoff {} clamped to {n}", cfg.vocab_cutoff);
        cfg.vocab_cutoff = n;
    }
    cfg.init_cutoff = cfg.init_cutoff.map(|c| c.min(n));
    let init = unsupervised_init(x, z, &cfg)?;
    self_learning_align(x, z, &init, &cfg)
}
