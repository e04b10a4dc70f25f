//! Length normalization, dimension-wise mean centering, and their iterated
//! combination.

use std::fmt;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_contract, Error, Result};
use crate::matrix::{norm, EmbeddingMatrix};

pub const DEFAULT_NORM_ITERS: usize = 5;
pub const DEFAULT_NORM_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationReport {
    pub iterations_run: usize,
    /// max over rows of `|‖x_i‖₂ − 1|`
    pub max_row_norm_deviation: f64,
    /// `‖column mean‖₂`
    pub max_center_magnitude: f64,
}

impl NormalizationReport {
    pub fn measure(emb: &EmbeddingMatrix, iterations_run: usize) -> Self {
        let max_row_norm_deviation = emb
            .iter_rows()
            .map(|r| (norm(r) - 1.0).abs())
            .fold(0.0, f64::max);
        let max_center_magnitude = norm(&emb.column_means());
        NormalizationReport {
            iterations_run,
            max_row_norm_deviation,
            max_center_magnitude,
        }
    }

    fn deviation(&self) -> f64 {
        self.max_row_norm_deviation.max(self.max_center_magnitude)
    }
}

/// Scales every non-zero row to unit length. Returns the number of zero rows,
/// which are left untouched.
pub fn length_normalize_in_place(emb: &mut EmbeddingMatrix) -> usize {
    let dim = emb.dim();
    if dim == 0 {
        return 0;
    }
    emb.as_mut_slice()
        .par_chunks_mut(dim)
        .map(|row| {
            let n = norm(row);
            if n == 0.0 {
                1
            } else {
                row.iter_mut().for_each(|v| *v /= n);
                0
            }
        })
        .sum()
}

pub fn length_normalize(emb: &EmbeddingMatrix) -> EmbeddingMatrix {
    let mut out = emb.clone();
    let zeros = length_normalize_in_place(&mut out);
    if zeros > 0 {
        warn!("length normalization left {zeros} zero row(s) unchanged");
    }
    out
}

pub fn mean_center_in_place(emb: &mut EmbeddingMatrix) -> Result<()> {
    ensure_contract!(!emb.is_empty(), "cannot mean-center an empty matrix");
    let dim = emb.dim();
    if dim == 0 {
        return Ok(());
    }
    let mean = emb.column_means();
    emb.as_mut_slice().par_chunks_mut(dim).for_each(|row| {
        row.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
    });
    Ok(())
}

pub fn mean_center(emb: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut out = emb.clone();
    mean_center_in_place(&mut out)?;
    Ok(out)
}

/// Alternates unit-length scaling and mean centering until both hold within
/// `tol` or `max_iters` alternations have run. The returned matrix is the
/// post-centering iterate, so unit length holds within `tol`, not exactly.
pub fn iterative_normalize(
    emb: &EmbeddingMatrix,
    max_iters: usize,
    tol: f64,
) -> Result<(EmbeddingMatrix, NormalizationReport)> {
    ensure_contract!(max_iters >= 1, "max_iters must be at least 1");
    ensure_contract!(tol > 0.0, "tol must be positive, got {tol}");
    ensure_contract!(!emb.is_empty(), "cannot normalize an empty matrix");
    let mut x = emb.clone();
    let mut report = NormalizationReport::measure(&x, 0);
    for k in 1..=max_iters {
        if let Some(row) = x.iter_rows().position(|r| r.iter().all(|&v| v == 0.0)) {
            return Err(Error::Degenerate(format!(
                "row {row} is zero at normalization iteration {k}"
            )));
        }
        length_normalize_in_place(&mut x);
        mean_center_in_place(&mut x)?;
        report = NormalizationReport::measure(&x, k);
        if report.deviation() < tol {
            break;
        }
    }
    Ok((x, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormStep {
    Unit,
    Center,
}

/// Ordered list of single-pass normalization steps applied before mapping.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Preprocessing(pub Vec<NormStep>);

impl Default for Preprocessing {
    fn default() -> Self {
        Preprocessing(vec![NormStep::Unit, NormStep::Center, NormStep::Unit])
    }
}

impl Preprocessing {
    pub fn apply(&self, emb: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        let mut out = emb.clone();
        for step in &self.0 {
            match step {
                NormStep::Unit => {
                    let zeros = length_normalize_in_place(&mut out);
                    if zeros > 0 {
                        warn!("length normalization left {zeros} zero row(s) unchanged");
                    }
                }
                NormStep::Center => mean_center_in_place(&mut out)?,
            }
        }
        Ok(out)
    }
}

impl FromStr for Preprocessing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(Preprocessing(Vec::new()));
        }
        s.split(',')
            .map(|t| match t.trim() {
                "unit" => Ok(NormStep::Unit),
                "center" => Ok(NormStep::Center),
                other => Err(Error::Config(format!("unknown normalization step {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Preprocessing)
    }
}

impl fmt::Display for Preprocessing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<&str> = self
            .0
            .iter()
            .map(|s| match s {
                NormStep::Unit => "unit",
                NormStep::Center => "center",
            })
            .collect();
        f.write_str(&names.join(","))
    }
}

impl TryFrom<String> for Preprocessing {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Preprocessing> for String {
    fn from(p: Preprocessing) -> String {
        p.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap()
    }

    fn assert_close(a: &EmbeddingMatrix, b: &[&[f64]], tol: f64) {
        assert_eq!(a.rows(), b.len());
        for (r, e) in a.iter_rows().zip(b) {
            for (x, y) in r.iter().zip(e.iter()) {
                assert!((x - y).abs() <= tol, "{:?} vs {:?}", a.to_rows(), b);
            }
        }
    }

    #[test]
    fn length_normalize_examples() {
        assert_close(&length_normalize(&m(&[&[3.0, 4.0]])), &[&[0.6, 0.8]], 1e-12);
        assert_close(&length_normalize(&m(&[&[1.0, 0.0], &[0.0, 2.0]])), &[&[1.0, 0.0], &[0.0, 1.0]], 0.0);
        let mut z = m(&[&[0.0, 0.0]]);
        assert_eq!(length_normalize_in_place(&mut z), 1);
        assert_eq!(z.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn mean_center_examples() {
        assert_close(&mean_center(&m(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap(), &[&[-1.0, -1.0], &[1.0, 1.0]], 0.0);
        assert_close(&mean_center(&m(&[&[5.0, 7.0]])).unwrap(), &[&[0.0, 0.0]], 0.0);
        assert_close(&mean_center(&m(&[&[-1.0, 0.0], &[1.0, 0.0]])).unwrap(), &[&[-1.0, 0.0], &[1.0, 0.0]], 0.0);
        assert!(matches!(mean_center(&EmbeddingMatrix::zeros(0, 2)), Err(Error::Contract(_))));
    }

    #[test]
    fn fixed_point_stops_after_one_iteration() {
        let x = m(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        let (y, rep) = iterative_normalize(&x, 50, 1e-6).unwrap();
        assert_eq!(y, x);
        assert_eq!(rep.iterations_run, 1);
    }

    #[test]
    fn single_iteration_collapse_is_reported_not_raised() {
        let (y, rep) = iterative_normalize(&m(&[&[3.0, 4.0], &[6.0, 8.0]]), 1, 1e-6).unwrap();
        assert_close(&y, &[&[0.0, 0.0], &[0.0, 0.0]], 1e-15);
        assert_eq!(rep.iterations_run, 1);
        assert!((rep.max_row_norm_deviation - 1.0).abs() < 1e-15);
        // one more iteration hits the zero rows
        let err = iterative_normalize(&m(&[&[3.0, 4.0], &[6.0, 8.0]]), 2, 1e-6).unwrap_err();
        assert!(matches!(err, Error::Degenerate(ref s) if s.contains("row 0")), "{err}");
    }

    #[test]
    fn zero_input_row_is_named() {
        let err = iterative_normalize(&m(&[&[1.0, 0.0], &[0.0, 0.0]]), 5, 1e-6).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn bad_arguments() {
        let x = m(&[&[1.0, 0.0]]);
        assert!(iterative_normalize(&x, 0, 1e-6).is_err());
        assert!(iterative_normalize(&x, 1, 0.0).is_err());
    }

    #[test]
    fn preprocessing_parse_and_apply() {
        let p: Preprocessing = "unit,center,unit".parse().unwrap();
        assert_eq!(p, Preprocessing::default());
        assert_eq!(p.to_string(), "unit,center,unit");
        assert_eq!("none".parse::<Preprocessing>().unwrap().0, vec![]);
        assert!("unit,whiten".parse::<Preprocessing>().is_err());
        let y = p.apply(&m(&[&[3.0, 4.0], &[1.0, 0.0], &[0.0, 2.0]])).unwrap();
        for n in y.row_norms() {
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
