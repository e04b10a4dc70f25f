//! Cosine, nearest-neighbour and CSLS retrieval between two embedding spaces.
//!
//! All retrieval runs over fixed-size query blocks so that the full
//! `n_x × n_z` similarity matrix is never materialized. Blocks are scored
//! independently, so neither the block size nor the worker count changes any
//! result. Every argmax breaks ties towards the lowest index.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed_io::BilingualDictionary;
use crate::error::{ensure_contract, Error, Result};
use crate::matrix::{gemm_abt, EmbeddingMatrix};
use crate::preprocess::length_normalize_in_place;

pub const DEFAULT_CSLS_K: usize = 10;
pub const DEFAULT_BLOCK_ROWS: usize = 1024;

/// Upper bound on similarity values held per block.
const BLOCK_ELEMENT_BUDGET: usize = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMethod {
    Nn,
    Csls,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
    Union,
}

macro_rules! str_enum {
    ($ty:ty, $($variant:path => $name:literal),+) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " {:?}"), other
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name,)+ })
            }
        }
    };
}

str_enum!(RetrievalMethod, RetrievalMethod::Nn => "nn", RetrievalMethod::Csls => "csls");
str_enum!(Direction, Direction::Forward => "forward", Direction::Backward => "backward", Direction::Union => "union");

/// Dense `m × p` block of similarity scores, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityBlock {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SimilarityBlock {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        ensure_contract!(values.len() == rows * cols, "{} values for a {rows}x{cols} block", values.len());
        Ok(SimilarityBlock { rows, cols, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            ensure_contract!(r.as_ref().len() == cols, "ragged similarity rows");
            values.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

/// Unit-length copy; zero rows stay zero so their cosines come out as 0.
pub(crate) fn unit_rows(m: &EmbeddingMatrix) -> EmbeddingMatrix {
    let mut out = m.clone();
    length_normalize_in_place(&mut out);
    out
}

/// Index and value of the first maximum.
pub(crate) fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, &v) in row.iter().enumerate() {
        if v > best.1 {
            best = (j, v);
        }
    }
    best
}

/// Mean of the `k` largest values, summed in descending order.
pub(crate) fn top_k_mean(row: &[f64], k: usize) -> f64 {
    let k = k.min(row.len());
    if k == 0 {
        return 0.0;
    }
    let mut buf = row.to_vec();
    let desc = |a: &f64, b: &f64| b.partial_cmp(a).unwrap_or(Ordering::Equal);
    if k < buf.len() {
        buf.select_nth_unstable_by(k - 1, desc);
    }
    let top = &mut buf[..k];
    top.sort_unstable_by(desc);
    top.iter().sum::<f64>() / k as f64
}

/// Indices of the `k` best scores, best first, ties to the lower index.
pub(crate) fn top_k_indices(row: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(row.len());
    let mut idx: Vec<usize> = (0..row.len()).collect();
    let order = |&a: &usize, &b: &usize| {
        row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    };
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_unstable_by(order);
    idx
}

/// Blocked scorer over unit-normalized query and candidate matrices.
pub(crate) struct Scorer<'a> {
    pub queries: &'a EmbeddingMatrix,
    pub candidates: &'a EmbeddingMatrix,
    pub block_rows: usize,
}

impl<'a> Scorer<'a> {
    pub fn new(queries: &'a EmbeddingMatrix, candidates: &'a EmbeddingMatrix) -> Self {
        Scorer {
            queries,
            candidates,
            block_rows: DEFAULT_BLOCK_ROWS,
        }
    }

    #[cfg(test)]
    pub fn with_block_rows(mut self, block_rows: usize) -> Self {
        self.block_rows = block_rows.max(1);
        self
    }

    fn effective_block(&self) -> usize {
        let by_memory = (BLOCK_ELEMENT_BUDGET / self.candidates.rows().max(1)).max(1);
        self.block_rows.min(by_memory)
    }

    /// Calls `f(query_index, cosine_row)` for every selected query row and
    /// collects the results in query order. `f` may overwrite the row.
    pub fn map_rows<T, F>(&self, selection: Option<&[usize]>, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, &mut [f64]) -> T + Sync,
    {
        let all: Vec<usize>;
        let selection = match selection {
            Some(s) => s,
            None => {
                all = (0..self.queries.rows()).collect();
                &all
            }
        };
        let d = self.queries.dim();
        let p = self.candidates.rows();
        selection
            .par_chunks(self.effective_block())
            .flat_map_iter(|chunk| {
                let mut block = Vec::with_capacity(chunk.len() * d);
                for &q in chunk {
                    block.extend_from_slice(self.queries.row(q));
                }
                let mut sims = gemm_abt(&block, chunk.len(), self.candidates.as_slice(), p, d);
                let out: Vec<T> = chunk
                    .iter()
                    .zip(sims.chunks_mut(p.max(1)))
                    .map(|(&q, row)| f(q, &mut row[..p]))
                    .collect();
                out
            })
            .collect()
    }

    /// Mean cosine of each query to its `k` nearest candidates.
    pub fn knn_mean(&self, k: usize) -> Vec<f64> {
        self.map_rows(None, |_, row| top_k_mean(row, k))
    }
}

pub fn cosine_block(queries: &EmbeddingMatrix, candidates: &EmbeddingMatrix) -> Result<SimilarityBlock> {
    ensure_contract!(
        queries.dim() == candidates.dim(),
        "dimension mismatch: {} vs {}",
        queries.dim(),
        candidates.dim()
    );
    let qn = unit_rows(queries);
    let cn = unit_rows(candidates);
    let rows: Vec<Vec<f64>> = Scorer::new(&qn, &cn).map_rows(None, |_, row| row.to_vec());
    let values = rows.into_iter().flatten().collect();
    SimilarityBlock::new(queries.rows(), candidates.rows(), values)
}

pub fn nn_retrieve(sim: &SimilarityBlock) -> Vec<usize> {
    (0..sim.rows()).map(|i| argmax(sim.row(i)).0).collect()
}

fn check_csls_k(k: usize, n_queries: usize, n_candidates: usize) -> Result<()> {
    ensure_contract!(
        k >= 1 && k < n_candidates && k <= n_queries,
        "csls k = {k} out of range for {n_queries} queries and {n_candidates} candidates (need 1 <= k <= min(n_candidates - 1, n_queries))"
    );
    Ok(())
}

/// CSLS hub penalties for both sides: `(r_x, r_z)` where `r_x[i]` is the mean
/// cosine of `x_i` to its `k` nearest `z` rows and vice versa.
pub(crate) fn csls_penalties(xn: &EmbeddingMatrix, zn: &EmbeddingMatrix, k: usize) -> (Vec<f64>, Vec<f64>) {
    let r_x = Scorer::new(xn, zn).knn_mean(k);
    let r_z = Scorer::new(zn, xn).knn_mean(k);
    (r_x, r_z)
}

/// `2·cos − r_query − r_candidate`, evaluated left to right.
#[inline]
pub(crate) fn csls_in_place(row: &mut [f64], r_query: f64, r_candidates: &[f64]) {
    for (v, rc) in row.iter_mut().zip(r_candidates) {
        *v = 2.0 * *v - r_query - rc;
    }
}

fn check_csls_inputs(x: &EmbeddingMatrix, z: &EmbeddingMatrix, k: usize) -> Result<()> {
    ensure_contract!(x.dim() == z.dim(), "dimension mismatch: {} vs {}", x.dim(), z.dim());
    check_csls_k(k, x.rows(), z.rows())
}

pub fn csls_retrieve(
    x_mapped: &EmbeddingMatrix,
    z_mapped: &EmbeddingMatrix,
    k: usize,
    query_indices: Option<&[usize]>,
) -> Result<Vec<usize>> {
    check_csls_inputs(x_mapped, z_mapped, k)?;
    if let Some(q) = query_indices {
        ensure_contract!(q.iter().all(|&i| i < x_mapped.rows()), "query index out of range");
    }
    let xn = unit_rows(x_mapped);
    let zn = unit_rows(z_mapped);
    let (r_x, r_z) = csls_penalties(&xn, &zn, k);
    Ok(Scorer::new(&xn, &zn).map_rows(query_indices, |q, row| {
        csls_in_place(row, r_x[q], &r_z);
        argmax(row).0
    }))
}

/// Full CSLS score matrix. Materializes `n_x × n_z` values; meant for
/// inspection of small spaces.
pub fn csls_block(x_mapped: &EmbeddingMatrix, z_mapped: &EmbeddingMatrix, k: usize) -> Result<SimilarityBlock> {
    check_csls_inputs(x_mapped, z_mapped, k)?;
    let xn = unit_rows(x_mapped);
    let zn = unit_rows(z_mapped);
    let (r_x, r_z) = csls_penalties(&xn, &zn, k);
    let values = Scorer::new(&xn, &zn)
        .map_rows(None, |q, row| {
            csls_in_place(row, r_x[q], &r_z);
            row.to_vec()
        })
        .into_iter()
        .flatten()
        .collect();
    SimilarityBlock::new(x_mapped.rows(), z_mapped.rows(), values)
}

/// Per-entry random masking of a score row, reproducible from a seed and the
/// query's identity regardless of block layout or scheduling.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Dropout {
    pub keep_prob: f64,
    pub seed: u64,
}

impl Dropout {
    fn apply(&self, stream: u64, row: &mut [f64]) {
        if self.keep_prob >= 1.0 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        for v in row.iter_mut() {
            if rng.random::<f64>() >= self.keep_prob {
                *v = f64::NEG_INFINITY;
            }
        }
    }
}

/// Dictionary induction over already unit-normalized spaces. Queries whose
/// whole score row was dropped contribute no pair.
pub(crate) fn induce_normalized(
    xn: &EmbeddingMatrix,
    zn: &EmbeddingMatrix,
    method: RetrievalMethod,
    k: usize,
    direction: Direction,
    dropout: Option<Dropout>,
) -> Vec<(usize, usize)> {
    let penalties = match method {
        RetrievalMethod::Csls => Some(csls_penalties(xn, zn, k)),
        RetrievalMethod::Nn => None,
    };
    let retrieve = |queries: &EmbeddingMatrix, cands: &EmbeddingMatrix, side: u64, r_q: Option<&[f64]>, r_c: Option<&[f64]>| {
        Scorer::new(queries, cands).map_rows(None, |q, row| {
            if let (Some(rq), Some(rc)) = (r_q, r_c) {
                csls_in_place(row, rq[q], rc);
            }
            if let Some(d) = dropout {
                d.apply((q as u64) << 1 | side, row);
            }
            let (j, v) = argmax(row);
            (v > f64::NEG_INFINITY).then_some(j)
        })
    };
    let (r_x, r_z) = match &penalties {
        Some((a, b)) => (Some(a.as_slice()), Some(b.as_slice())),
        None => (None, None),
    };
    let mut pairs = Vec::new();
    if matches!(direction, Direction::Forward | Direction::Union) {
        let fwd = retrieve(xn, zn, 0, r_x, r_z);
        pairs.extend(fwd.into_iter().enumerate().filter_map(|(i, j)| j.map(|j| (i, j))));
    }
    if matches!(direction, Direction::Backward | Direction::Union) {
        let bwd = retrieve(zn, xn, 1, r_z, r_x);
        pairs.extend(bwd.into_iter().enumerate().filter_map(|(j, i)| i.map(|i| (i, j))));
    }
    if direction == Direction::Union {
        pairs.sort_unstable();
        pairs.dedup();
    }
    pairs
}

pub fn induce_dictionary(
    x_mapped: &EmbeddingMatrix,
    z_mapped: &EmbeddingMatrix,
    method: RetrievalMethod,
    k: usize,
    direction: Direction,
) -> Result<BilingualDictionary> {
    ensure_contract!(
        x_mapped.dim() == z_mapped.dim(),
        "dimension mismatch: {} vs {}",
        x_mapped.dim(),
        z_mapped.dim()
    );
    ensure_contract!(
        !x_mapped.is_empty() && !z_mapped.is_empty(),
        "cannot induce a dictionary from an empty space"
    );
    if method == RetrievalMethod::Csls {
        if direction != Direction::Backward {
            check_csls_k(k, x_mapped.rows(), z_mapped.rows())?;
        }
        if direction != Direction::Forward {
            check_csls_k(k, z_mapped.rows(), x_mapped.rows())?;
        }
    }
    let xn = unit_rows(x_mapped);
    let zn = unit_rows(z_mapped);
    Ok(BilingualDictionary::new(induce_normalized(&xn, &zn, method, k, direction, None)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let c = cosine_block(&m(&[&[1.0, 0.0]]), &m(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(c.row(0), &[1.0, 0.0]);
        let c = cosine_block(&m(&[&[1.0, 1.0]]), &m(&[&[1.0, 0.0]])).unwrap();
        assert!((c.get(0, 0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        let c = cosine_block(&m(&[&[0.0, 0.0]]), &m(&[&[1.0, 0.0]])).unwrap();
        assert_eq!(c.get(0, 0), 0.0);
        assert!(cosine_block(&m(&[&[1.0]]), &m(&[&[1.0, 0.0]])).is_err());
    }

    #[test]
    fn nn_examples() {
        let s = |r: &[&[f64]]| SimilarityBlock::from_rows(r).unwrap();
        assert_eq!(nn_retrieve(&s(&[&[0.2, 0.9]])), vec![1]);
        assert_eq!(nn_retrieve(&s(&[&[0.5, 0.5]])), vec![0]);
        assert_eq!(
            nn_retrieve(&s(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]])),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn csls_identity_axes() {
        let x = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(csls_retrieve(&x, &x, 1, None).unwrap(), vec![0, 1]);
        assert_eq!(csls_retrieve(&x, &x, 1, Some(&[1])).unwrap(), vec![1]);
    }

    #[test]
    fn csls_k_range() {
        let x = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(csls_retrieve(&x, &x, 0, None), Err(Error::Contract(_))));
        assert!(matches!(csls_retrieve(&x, &x, 2, None), Err(Error::Contract(_))));
    }

    #[test]
    fn block_size_does_not_change_results() {
        let rows: Vec<Vec<f64>> = (0..37)
            .map(|i| (0..5).map(|j| ((i * 7 + j * 3) % 11) as f64 - 5.0 + 0.1 * j as f64).collect())
            .collect();
        let x = unit_rows(&EmbeddingMatrix::from_rows(&rows).unwrap());
        let z = unit_rows(&x.head(29));
        let reference: Vec<Vec<f64>> = Scorer::new(&x, &z).map_rows(None, |_, r| r.to_vec());
        for block in [1, 3, 8, 1024] {
            let got: Vec<Vec<f64>> = Scorer::new(&x, &z).with_block_rows(block).map_rows(None, |_, r| r.to_vec());
            assert_eq!(got, reference, "block {block}");
        }
        let sel = [5, 0, 36];
        let got = Scorer::new(&x, &z).with_block_rows(2).map_rows(Some(&sel), |q, r| (q, r.to_vec()));
        for (q, r) in got {
            assert_eq!(r, reference[q]);
        }
    }

    #[test]
    fn top_k_helpers() {
        assert_eq!(top_k_mean(&[0.1, 0.9, 0.5, 0.7], 2), 0.8);
        assert_eq!(top_k_indices(&[0.1, 0.9, 0.5, 0.9], 3), vec![1, 3, 2]);
        assert_eq!(top_k_indices(&[0.3, 0.3], 5), vec![0, 1]);
        assert_eq!(argmax(&[f64::NEG_INFINITY; 3]), (0, f64::NEG_INFINITY));
    }

    #[test]
    fn induce_examples() {
        let x = m(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let fwd = induce_dictionary(&x, &x, RetrievalMethod::Nn, 1, Direction::Forward).unwrap();
        assert_eq!(fwd.pairs(), &[(0, 0), (1, 1), (2, 2)]);
        let uni = induce_dictionary(&x, &x, RetrievalMethod::Nn, 1, Direction::Union).unwrap();
        assert_eq!(uni, fwd);
        let two = m(&[&[1.0, 0.1, 0.0], &[0.9, 0.0, 0.2]]);
        let d = induce_dictionary(&two, &x, RetrievalMethod::Csls, 1, Direction::Forward).unwrap();
        assert_eq!(d.len(), 2);
        let bwd = induce_dictionary(&two, &x, RetrievalMethod::Nn, 1, Direction::Backward).unwrap();
        assert_eq!(bwd.targets(), vec![0, 1, 2]);
    }

    #[test]
    fn dropout_is_reproducible_and_respects_keep_prob() {
        let d = Dropout { keep_prob: 0.3, seed: 7 };
        let mut a = vec![1.0; 2000];
        let mut b = vec![1.0; 2000];
        d.apply(5, &mut a);
        d.apply(5, &mut b);
        assert_eq!(a, b);
        let kept = a.iter().filter(|v| v.is_finite()).count();
        assert!((500..700).contains(&kept), "{kept}");
        let mut c = vec![1.0; 2000];
        d.apply(6, &mut c);
        assert_ne!(a, c);
    }

    #[test]
    fn method_and_direction_parse() {
        assert_eq!("csls".parse::<RetrievalMethod>().unwrap(), RetrievalMethod::Csls);
        assert_eq!("union".parse::<Direction>().unwrap(), Direction::Union);
        assert_eq!(Direction::Backward.to_string(), "backward");
        assert!("knn".parse::<RetrievalMethod>().is_err());
    }
}
