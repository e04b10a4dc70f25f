#![allow(dead_code)]

use std::fs;
use std::path::Path;

use clwe::embed_io::{save_embeddings, Vocabulary};
use clwe::matrix::EmbeddingMatrix;
use clwe::preprocess::Preprocessing;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, dim: usize) -> EmbeddingMatrix {
    let data = (0..rows * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    EmbeddingMatrix::new(rows, dim, data).unwrap()
}

/// Haar-ish random orthogonal matrix from the QR factorization of a Gaussian
/// matrix, with the sign of R's diagonal folded into Q.
pub fn random_orthogonal(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for c in 0..d {
        if r[(c, c)] < 0.0 {
            let mut col = q.column_mut(c);
            col.neg_mut();
        }
    }
    q
}

pub struct Synthetic {
    pub x: EmbeddingMatrix,
    pub z: EmbeddingMatrix,
    /// source row i translates to target row perm[i]
    pub perm: Vec<usize>,
    pub rotation: DMatrix<f64>,
}

/// Unit-normalized centered source; target is the source rotated by a random
/// orthogonal matrix, optionally perturbed by Gaussian noise of scale `sigma`
/// and re-normalized, with its rows shuffled.
pub fn synthetic_pair(seed: u64, n: usize, d: usize, sigma: f64) -> Synthetic {
    let mut rng = rng(seed);
    let x = Preprocessing::default().apply(&gaussian(&mut rng, n, d)).unwrap();
    let rotation = random_orthogonal(&mut rng, d);
    let mut rotated = x.transform(&rotation).unwrap().to_rows();
    if sigma > 0.0 {
        for row in &mut rotated {
            for v in row.iter_mut() {
                *v += sigma * rng.sample::<f64, _>(StandardNormal);
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut z_rows = vec![Vec::new(); n];
    for (i, &p) in perm.iter().enumerate() {
        z_rows[p] = rotated[i].clone();
    }
    Synthetic {
        x,
        z: EmbeddingMatrix::from_rows(&z_rows).unwrap(),
        perm,
        rotation,
    }
}

pub fn src_vocab(n: usize) -> Vocabulary {
    Vocabulary::from_words((0..n).map(|i| format!("s{i}"))).unwrap()
}

pub fn trg_vocab(n: usize) -> Vocabulary {
    Vocabulary::from_words((0..n).map(|i| format!("t{i}"))).unwrap()
}

/// Writes `src.vec`, `trg.vec` and `gold.txt` (the true permutation).
pub fn write_synthetic(dir: &Path, s: &Synthetic) {
    let n = s.x.rows();
    save_embeddings(&src_vocab(n), &s.x, dir.join("src.vec")).unwrap();
    save_embeddings(&trg_vocab(n), &s.z, dir.join("trg.vec")).unwrap();
    let gold: String = s.perm.iter().enumerate().map(|(i, p)| format!("s{i} t{p}\n")).collect();
    fs::write(dir.join("gold.txt"), gold).unwrap();
}

pub fn naive_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Full CSLS score matrix by direct evaluation of the formula.
pub fn csls_scores_oracle(x: &EmbeddingMatrix, z: &EmbeddingMatrix, k: usize) -> Vec<Vec<f64>> {
    let cos: Vec<Vec<f64>> = x
        .iter_rows()
        .map(|q| z.iter_rows().map(|c| naive_cos(q, c)).collect())
        .collect();
    let mean_top = |mut v: Vec<f64>| {
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v[..k].iter().sum::<f64>() / k as f64
    };
    let r_t: Vec<f64> = cos.iter().map(|row| mean_top(row.clone())).collect();
    let r_s: Vec<f64> = (0..z.rows())
        .map(|j| mean_top(cos.iter().map(|row| row[j]).collect()))
        .collect();
    cos.iter()
        .enumerate()
        .map(|(i, row)| row.iter().enumerate().map(|(j, c)| 2.0 * c - r_t[i] - r_s[j]).collect())
        .collect()
}

/// First index of the maximum, scanning left to right.
pub fn first_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

/// Fraction of source words whose induced translation is the true one.
pub fn dictionary_accuracy(pairs: &[(usize, usize)], perm: &[usize]) -> f64 {
    let mut best: Vec<Option<usize>> = vec![None; perm.len()];
    for &(s, t) in pairs {
        best[s].get_or_insert(t);
    }
    best.iter().enumerate().filter(|(i, t)| **t == Some(perm[*i])).count() as f64 / perm.len() as f64
}
