//! Bilingual lexicon induction scoring.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::embed_io::GoldDictionary;
use crate::error::{ensure_contract, Error, Result};
use crate::matrix::EmbeddingMatrix;
use crate::retrieval::{csls_in_place, top_k_indices, top_k_mean, unit_rows, RetrievalMethod, Scorer};

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// k → fraction of evaluated sources with a gold translation in the top k.
    pub precision_at: BTreeMap<usize, f64>,
    pub evaluated_sources: usize,
    pub oov_sources: usize,
    pub unmapped_sources: usize,
    pub coverage: f64,
}

impl EvalReport {
    fn new(precision_at: BTreeMap<usize, f64>, evaluated: usize, oov: usize, unmapped: usize) -> Self {
        let total = evaluated + oov;
        EvalReport {
            precision_at,
            evaluated_sources: evaluated,
            oov_sources: oov,
            unmapped_sources: unmapped,
            coverage: if total == 0 { 0.0 } else { evaluated as f64 / total as f64 },
        }
    }

    pub fn ks(&self) -> Vec<usize> {
        self.precision_at.keys().copied().collect()
    }
}

/// Ranks every target for each gold source (forward direction) and counts a
/// source as correct at `k` when any gold target is among the first `k`.
pub fn precision_at_k(
    x_space: &EmbeddingMatrix,
    z_space: &EmbeddingMatrix,
    gold: &GoldDictionary,
    ks: &[usize],
    method: RetrievalMethod,
    csls_k: usize,
) -> Result<EvalReport> {
    ensure_contract!(!gold.is_empty(), "gold dictionary has no evaluable entries");
    ensure_contract!(!ks.is_empty(), "no k values requested");
    ensure_contract!(
        x_space.dim() == z_space.dim(),
        "dimension mismatch: {} vs {}",
        x_space.dim(),
        z_space.dim()
    );
    let max_k = *ks.iter().max().expect("non-empty");
    ensure_contract!(
        ks.iter().all(|&k| k >= 1) && max_k <= z_space.rows(),
        "k values {ks:?} must lie in 1..={}",
        z_space.rows()
    );
    for (&s, targets) in &gold.entries {
        ensure_contract!(s < x_space.rows(), "gold source index {s} out of range");
        ensure_contract!(
            targets.iter().all(|&t| t < z_space.rows()),
            "gold target index out of range for source {s}"
        );
    }

    let xn = unit_rows(x_space);
    let zn = unit_rows(z_space);
    let sources: Vec<usize> = gold.entries.keys().copied().collect();
    let penalties = match method {
        RetrievalMethod::Nn => None,
        RetrievalMethod::Csls => {
            ensure_contract!(
                csls_k >= 1 && csls_k < z_space.rows() && csls_k <= x_space.rows(),
                "csls k = {csls_k} out of range for {} sources and {} targets",
                x_space.rows(),
                z_space.rows()
            );
            let r_src = Scorer::new(&xn, &zn).map_rows(Some(&sources), |_, row| top_k_mean(row, csls_k));
            let r_trg = Scorer::new(&zn, &xn).knn_mean(csls_k);
            let r_src: BTreeMap<usize, f64> = sources.iter().copied().zip(r_src).collect();
            Some((r_src, r_trg))
        }
    };

    // rank (0-based) of the best-placed gold target within the top max_k
    let best_ranks: Vec<Option<usize>> = Scorer::new(&xn, &zn).map_rows(Some(&sources), |s, row| {
        if let Some((r_src, r_trg)) = &penalties {
            csls_in_place(row, r_src[&s], r_trg);
        }
        let targets = &gold.entries[&s];
        top_k_indices(row, max_k).iter().position(|j| targets.contains(j))
    });

    let evaluated = sources.len();
    let precision_at = ks
        .iter()
        .map(|&k| {
            let hits = best_ranks.iter().filter(|r| matches!(r, Some(r) if *r < k)).count();
            (k, hits as f64 / evaluated as f64)
        })
        .collect();
    Ok(EvalReport::new(precision_at, evaluated, gold.oov_sources, gold.unmapped_sources))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub system: String,
    /// P@k × 100 per k, in table column order.
    pub precision: Vec<f64>,
    /// Percentage-point difference to the baseline per k.
    pub delta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub baseline: String,
    pub ks: Vec<usize>,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_reports(reports: &[(String, EvalReport)], baseline: &str) -> Result<ComparisonTable> {
    let base = reports
        .iter()
        .find(|(name, _)| name == baseline)
        .map(|(_, r)| r)
        .ok_or_else(|| Error::Contract(format!("unknown baseline {baseline:?}")))?;
    let ks = base.ks();
    for (name, r) in reports {
        ensure_contract!(r.ks() == ks, "report {name:?} has k set {:?}, baseline has {ks:?}", r.ks());
    }
    let rows = reports
        .iter()
        .map(|(name, r)| {
            let precision: Vec<f64> = ks.iter().map(|k| r.precision_at[k] * 100.0).collect();
            let delta = ks
                .iter()
                .map(|k| (r.precision_at[k] - base.precision_at[k]) * 100.0)
                .collect();
            ComparisonRow {
                system: name.clone(),
                precision,
                delta,
            }
        })
        .collect();
    Ok(ComparisonTable {
        baseline: baseline.to_string(),
        ks,
        rows,
    })
}

/// Signed fixed-point rendering; anything that rounds to zero prints unsigned.
pub fn format_delta(delta: f64, decimals: usize) -> String {
    let s = format!("{:.*}", decimals, delta.abs());
    if s.chars().all(|c| c == '0' || c == '.') {
        s
    } else if delta > 0.0 {
        format!("+{s}")
    } else {
        format!("-{s}")
    }
}

impl ComparisonTable {
    /// Keeps only the listed k columns (e.g. `&[1]` for a P@1-only table).
    pub fn restrict(&self, ks: &[usize]) -> Result<ComparisonTable> {
        let cols: Vec<usize> = ks
            .iter()
            .map(|k| {
                self.ks
                    .iter()
                    .position(|x| x == k)
                    .ok_or_else(|| Error::Contract(format!("k = {k} not in table")))
            })
            .collect::<Result<_>>()?;
        Ok(ComparisonTable {
            baseline: self.baseline.clone(),
            ks: ks.to_vec(),
            rows: self
                .rows
                .iter()
                .map(|r| ComparisonRow {
                    system: r.system.clone(),
                    precision: cols.iter().map(|&c| r.precision[c]).collect(),
                    delta: cols.iter().map(|&c| r.delta[c]).collect(),
                })
                .collect(),
        })
    }

    pub fn render(&self, decimals: usize) -> String {
        let name_w = self.rows.iter().map(|r| r.system.len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = write!(out, "{:<name_w$}", "system");
        for k in &self.ks {
            let _ = write!(out, "  {:>8}  {:>8}", format!("P@{k}"), "Δ");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<name_w$}", r.system);
            for (p, d) in r.precision.iter().zip(&r.delta) {
                let delta = format_delta(*d, decimals);
                let _ = write!(out, "  {:>8}  {:>8}", format!("{p:.decimals$}"), delta);
            }
            out.push('\n');
        }
        out
    }
}

pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    for (k, p) in &report.precision_at {
        let _ = writeln!(out, "P@{k:<3} {:>7.2}%", p * 100.0);
    }
    let _ = writeln!(
        out,
        "evaluated {}  oov {}  excluded {}  coverage {:.2}%",
        report.evaluated_sources,
        report.oov_sources,
        report.unmapped_sources,
        report.coverage * 100.0
    );
    out
}

/// One `system.k=value` line per k, plus the source counts.
pub fn render_key_values(system: &str, report: &EvalReport) -> String {
    let mut out = String::new();
    for (k, p) in &report.precision_at {
        let _ = writeln!(out, "{system}.{k}={p}");
    }
    let _ = writeln!(out, "{system}.evaluated={}", report.evaluated_sources);
    let _ = writeln!(out, "{system}.oov={}", report.oov_sources);
    let _ = writeln!(out, "{system}.excluded={}", report.unmapped_sources);
    out
}

pub fn parse_key_values(text: &str) -> Result<Vec<(String, EvalReport)>> {
    let mut by_system: BTreeMap<String, (BTreeMap<usize, f64>, [usize; 3])> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Config(format!("metrics line {}: malformed {line:?}", n + 1));
        let (key, value) = line.split_once('=').ok_or_else(bad)?;
        let (system, field) = key.rsplit_once('.').ok_or_else(bad)?;
        if !by_system.contains_key(system) {
            order.push(system.to_string());
        }
        let entry = by_system.entry(system.to_string()).or_default();
        if let Ok(k) = field.parse::<usize>() {
            entry.0.insert(k, value.parse().map_err(|_| bad())?);
        } else {
            let slot = match field {
                "evaluated" => 0,
                "oov" => 1,
                "excluded" => 2,
                _ => return Err(bad()),
            };
            entry.1[slot] = value.parse().map_err(|_| bad())?;
        }
    }
    Ok(order
        .into_iter()
        .map(|name| {
            let (p, [e, o, u]) = by_system.remove(&name).expect("recorded");
            (name, EvalReport::new(p, e, o, u))
        })
        .collect())
}
