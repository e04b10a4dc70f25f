//! Command-line front end: `align`, `induce`, `refine`, `evaluate` and
//! `pipeline`, configured from a TOML file with per-key flag overrides.
//!
//! Exit codes: 0 success (alignment converged), 1 error, 2 the run completed
//! but self-learning stopped at `max_iterations`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::embed_io::{
    load_dictionary, load_embeddings, load_gold_dictionary, save_dictionary, save_embeddings,
};
use crate::error::{Error, Result};
use crate::eval::{compare_reports, parse_key_values, precision_at_k, render_key_values, render_report, EvalReport};
use crate::mapping::{align, MappingConfig};
use crate::preprocess::Preprocessing;
use crate::refine::{refine_pipeline, ConflictPolicy, RefinementConfig};
use crate::retrieval::{induce_dictionary, Direction, RetrievalMethod, DEFAULT_CSLS_K};

pub const SRC_MAPPED: &str = "src.mapped.vec";
pub const TRG_MAPPED: &str = "trg.mapped.vec";
pub const SRC_REFINED: &str = "src.refined.vec";
pub const TRG_REFINED: &str = "trg.refined.vec";
pub const DICTIONARY: &str = "dictionary.txt";
pub const METRICS: &str = "metrics.txt";
pub const MANIFEST: &str = "manifest.toml";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub src: Option<PathBuf>,
    pub trg: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    /// Dictionary for `refine`; defaults to the one written by `align`.
    pub dictionary: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub method: RetrievalMethod,
    pub csls_k: usize,
    /// Decimals in the ×100 comparison table.
    pub decimals: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: crate::eval::DEFAULT_KS.to_vec(),
            method: RetrievalMethod::Csls,
            csls_k: DEFAULT_CSLS_K,
            decimals: 2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Read at most this many words per embedding file.
    pub max_vocab: Option<usize>,
    pub preprocessing: Preprocessing,
    pub skip_refine: bool,
    /// Worker threads; `None` uses the available parallelism.
    pub threads: Option<usize>,
    pub paths: Paths,
    pub mapping: MappingConfig,
    pub refine: RefinementConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    /// Parses a config file. A run manifest is accepted too: its `[config]`
    /// table is the snapshot of the run that wrote it.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let table = match value.get("config") {
            Some(toml::Value::Table(t)) if value.contains_key("run") => t.clone(),
            _ => value,
        };
        table.try_into().map_err(|e| Error::Config(format!("{e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn require(&self, field: Option<&PathBuf>, flag: &str) -> Result<PathBuf> {
        field
            .cloned()
            .ok_or_else(|| Error::Config(format!("missing {flag} (flag or config file)")))
    }

    pub fn validate_inputs(paths: &[&Path]) -> Result<()> {
        for p in paths {
            if !p.exists() {
                return Err(Error::io(*p, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "clwe", version, about = "Unsupervised cross-lingual embedding alignment and refinement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Map both spaces into a shared space and write the self-learned dictionary.
    Align(Opts),
    /// Induce a dictionary from two already mapped spaces.
    Induce(Opts),
    /// Midpoint averaging over a dictionary, then iterative normalization.
    Refine(Opts),
    /// Score P@k against a gold dictionary.
    Evaluate(Opts),
    /// align → refine → evaluate, with a run manifest.
    Pipeline(Opts),
}

#[derive(Debug, Default, Args)]
pub struct Opts {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub src: Option<PathBuf>,
    #[arg(long)]
    pub trg: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub max_vocab: Option<usize>,
    #[arg(long)]
    pub normalize: Option<Preprocessing>,
    #[arg(long)]
    pub csls_k: Option<usize>,
    #[arg(long)]
    pub vocab_cutoff: Option<usize>,
    #[arg(long)]
    pub init_cutoff: Option<usize>,
    #[arg(long)]
    pub refit_cutoff: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub keep_prob: Option<f64>,
    #[arg(long)]
    pub keep_prob_growth: Option<f64>,
    #[arg(long)]
    pub stall_patience: Option<usize>,
    #[arg(long)]
    pub convergence_tol: Option<f64>,
    #[arg(long)]
    pub direction: Option<Direction>,
    #[arg(long)]
    pub induction: Option<RetrievalMethod>,
    #[arg(long)]
    pub reweight: bool,
    #[arg(long)]
    pub norm_iters: Option<usize>,
    #[arg(long)]
    pub norm_tol: Option<f64>,
    #[arg(long)]
    pub conflict_policy: Option<ConflictPolicy>,
    /// Retrieval used for evaluation (and for `induce`).
    #[arg(long)]
    pub retrieval: Option<RetrievalMethod>,
    /// Comma-separated k values, e.g. `1,5,10`.
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[arg(long)]
    pub decimals: Option<usize>,
    /// P@1 only, ×100, two decimals.
    #[arg(long)]
    pub p1_only: bool,
    #[arg(long)]
    pub skip_refine: bool,
    /// Run directory holding the baseline's metrics.
    #[arg(long, value_name = "NAME")]
    pub compare: Option<PathBuf>,
    /// System name used in metrics output.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

impl Opts {
    /// Config file (if any) with every given flag applied on top.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($flag:expr => $($field:tt)+) => {
                if let Some(v) = $flag.clone() {
                    cfg.$($field)+ = v;
                }
            };
        }
        set!(self.src.clone().map(Some) => paths.src);
        set!(self.trg.clone().map(Some) => paths.trg);
        set!(self.gold.clone().map(Some) => paths.gold);
        set!(self.dictionary.clone().map(Some) => paths.dictionary);
        set!(self.out.clone().map(Some) => paths.out);
        set!(self.seed => mapping.seed);
        set!(self.threads.map(Some) => threads);
        set!(self.max_vocab.map(Some) => max_vocab);
        set!(self.normalize => preprocessing);
        if let Some(k) = self.csls_k {
            cfg.mapping.csls_k = k;
            cfg.eval.csls_k = k;
        }
        set!(self.vocab_cutoff => mapping.vocab_cutoff);
        set!(self.init_cutoff.map(Some) => mapping.init_cutoff);
        set!(self.refit_cutoff.map(Some) => mapping.refit_cutoff);
        set!(self.max_iterations => mapping.max_iterations);
        set!(self.keep_prob => mapping.keep_prob_initial);
        set!(self.keep_prob_growth => mapping.keep_prob_growth);
        set!(self.stall_patience => mapping.stall_patience);
        set!(self.convergence_tol => mapping.convergence_tol);
        set!(self.direction => mapping.direction);
        set!(self.induction => mapping.induction);
        if self.reweight {
            cfg.mapping.reweight = true;
        }
        set!(self.norm_iters => refine.norm_iters);
        set!(self.norm_tol => refine.norm_tol);
        set!(self.conflict_policy => refine.conflict_policy);
        set!(self.retrieval => eval.method);
        set!(self.ks => eval.ks);
        set!(self.decimals => eval.decimals);
        if self.skip_refine {
            cfg.skip_refine = true;
        }
        cfg.mapping.validate()?;
        Ok(cfg)
    }
}

pub struct AlignSummary {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub dictionary_size: usize,
}

/// Loads, preprocesses and aligns both spaces; writes mapped embeddings and
/// the self-learned dictionary into `out`.
pub fn stage_align(cfg: &PipelineConfig, src: &Path, trg: &Path, out: &Path) -> Result<AlignSummary> {
    PipelineConfig::validate_inputs(&[src, trg])?;
    let (sv, se) = load_embeddings(src, cfg.max_vocab)?;
    let (tv, te) = load_embeddings(trg, cfg.max_vocab)?;
    info!("loaded {} x {} source, {} x {} target", se.rows(), se.dim(), te.rows(), te.dim());
    let x = cfg.preprocessing.apply(&se)?;
    let z = cfg.preprocessing.apply(&te)?;
    let result = align(&x, &z, &cfg.mapping)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    save_embeddings(&sv, &result.map_source(&x)?, out.join(SRC_MAPPED))?;
    save_embeddings(&tv, &result.map_target(&z)?, out.join(TRG_MAPPED))?;
    save_dictionary(&result.dictionary, &sv, &tv, out.join(DICTIONARY))?;
    Ok(AlignSummary {
        objective: result.objective,
        iterations: result.iterations,
        converged: result.converged,
        dictionary_size: result.dictionary.len(),
    })
}

pub fn stage_induce(cfg: &PipelineConfig, src: &Path, trg: &Path, out: &Path) -> Result<usize> {
    PipelineConfig::validate_inputs(&[src, trg])?;
    let (sv, se) = load_embeddings(src, cfg.max_vocab)?;
    let (tv, te) = load_embeddings(trg, cfg.max_vocab)?;
    let dict = induce_dictionary(&se, &te, cfg.eval.method, cfg.eval.csls_k, cfg.mapping.direction)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    save_dictionary(&dict, &sv, &tv, out.join(DICTIONARY))?;
    Ok(dict.len())
}

pub struct RefineSummary {
    pub pairs_averaged: usize,
    pub pairs_skipped: usize,
    pub text: String,
}

pub fn stage_refine(cfg: &PipelineConfig, src: &Path, trg: &Path, dictionary: &Path, out: &Path) -> Result<RefineSummary> {
    PipelineConfig::validate_inputs(&[src, trg, dictionary])?;
    let (sv, se) = load_embeddings(src, cfg.max_vocab)?;
    let (tv, te) = load_embeddings(trg, cfg.max_vocab)?;
    let dict = load_dictionary(dictionary, &sv, &tv)?;
    let refined = refine_pipeline(&se, &te, &dict, &cfg.refine)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    save_embeddings(&sv, &refined.x_refined, out.join(SRC_REFINED))?;
    save_embeddings(&tv, &refined.z_refined, out.join(TRG_REFINED))?;
    let mut text = format!(
        "pairs_averaged {}\npairs_skipped {}\n",
        refined.pairs_averaged, refined.pairs_skipped
    );
    for (side, rep) in [("src", refined.x_report), ("trg", refined.z_report)] {
        if let Some(r) = rep {
            text.push_str(&format!(
                "{side}: iterations {} max_row_norm_deviation {:.3e} max_center_magnitude {:.3e}\n",
                r.iterations_run, r.max_row_norm_deviation, r.max_center_magnitude
            ));
        }
    }
    Ok(RefineSummary {
        pairs_averaged: refined.pairs_averaged,
        pairs_skipped: refined.pairs_skipped,
        text,
    })
}

pub fn stage_evaluate(cfg: &PipelineConfig, src: &Path, trg: &Path, gold: &Path) -> Result<EvalReport> {
    PipelineConfig::validate_inputs(&[src, trg, gold])?;
    let (sv, se) = load_embeddings(src, cfg.max_vocab)?;
    let (tv, te) = load_embeddings(trg, cfg.max_vocab)?;
    let gold = load_gold_dictionary(gold, &sv, &tv)?;
    precision_at_k(&se, &te, &gold, &cfg.eval.ks, cfg.eval.method, cfg.eval.csls_k)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_baseline(dir: &Path) -> Result<Vec<(String, EvalReport)>> {
    let path = dir.join(METRICS);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let reports = parse_key_values(&text)?;
    if reports.is_empty() {
        return Err(Error::Config(format!("{}: no metrics", path.display())));
    }
    Ok(reports)
}

fn print_comparison(
    cfg: &PipelineConfig,
    p1_only: bool,
    reports: &[(String, EvalReport)],
    baseline: &str,
) -> Result<()> {
    let table = compare_reports(reports, baseline)?;
    if p1_only {
        print!("{}", table.restrict(&[1])?.render(2));
    } else {
        print!("{}", table.render(cfg.eval.decimals));
    }
    Ok(())
}

fn cmd_align(cfg: &PipelineConfig) -> Result<i32> {
    let src = cfg.require(cfg.paths.src.as_ref(), "--src")?;
    let trg = cfg.require(cfg.paths.trg.as_ref(), "--trg")?;
    let out = cfg.require(cfg.paths.out.as_ref(), "--out")?;
    let s = stage_align(cfg, &src, &trg, &out)?;
    println!("objective {:.6}", s.objective);
    println!("iterations {}", s.iterations);
    println!("converged {}", s.converged);
    println!("dictionary_pairs {}", s.dictionary_size);
    Ok(if s.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn cmd_induce(cfg: &PipelineConfig) -> Result<i32> {
    let src = cfg.require(cfg.paths.src.as_ref(), "--src")?;
    let trg = cfg.require(cfg.paths.trg.as_ref(), "--trg")?;
    let out = cfg.require(cfg.paths.out.as_ref(), "--out")?;
    let n = stage_induce(cfg, &src, &trg, &out)?;
    println!("dictionary_pairs {n}");
    Ok(EXIT_OK)
}

fn cmd_refine(cfg: &PipelineConfig) -> Result<i32> {
    let src = cfg.require(cfg.paths.src.as_ref(), "--src")?;
    let trg = cfg.require(cfg.paths.trg.as_ref(), "--trg")?;
    let out = cfg.require(cfg.paths.out.as_ref(), "--out")?;
    let dictionary = match &cfg.paths.dictionary {
        Some(d) => d.clone(),
        None => src.parent().unwrap_or(Path::new(".")).join(DICTIONARY),
    };
    let s = stage_refine(cfg, &src, &trg, &dictionary, &out)?;
    print!("{}", s.text);
    Ok(EXIT_OK)
}

fn cmd_evaluate(opts: &Opts, cfg: &PipelineConfig) -> Result<i32> {
    let src = cfg.require(cfg.paths.src.as_ref(), "--src")?;
    let trg = cfg.require(cfg.paths.trg.as_ref(), "--trg")?;
    let gold = cfg.require(cfg.paths.gold.as_ref(), "--gold")?;
    let name = opts.name.clone().unwrap_or_else(|| "system".to_string());
    let report = stage_evaluate(cfg, &src, &trg, &gold)?;
    print!("{}", render_report(&report));
    let kv = render_key_values(&name, &report);
    match &cfg.paths.out {
        Some(out) => {
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            write_file(&out.join(METRICS), &kv)?;
        }
        None => print!("{kv}"),
    }
    if let Some(dir) = &opts.compare {
        let mut reports = load_baseline(dir)?;
        let baseline = reports[0].0.clone();
        reports.retain(|(n, _)| *n != name);
        reports.push((name, report));
        print_comparison(cfg, opts.p1_only, &reports, &baseline)?;
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct Manifest<'a> {
    run: RunInfo,
    metrics: toml::Table,
    config: &'a PipelineConfig,
}

#[derive(Serialize)]
struct RunInfo {
    version: &'static str,
    seed: u64,
    threads: usize,
    exit_code: i32,
    converged: bool,
    iterations: usize,
    objective: f64,
    pairs_averaged: Option<usize>,
    timings_secs: toml::Table,
}

fn cmd_pipeline(opts: &Opts, cfg: &PipelineConfig) -> Result<i32> {
    let src = cfg.require(cfg.paths.src.as_ref(), "--src")?;
    let trg = cfg.require(cfg.paths.trg.as_ref(), "--trg")?;
    let gold = cfg.require(cfg.paths.gold.as_ref(), "--gold")?;
    let out = cfg.require(cfg.paths.out.as_ref(), "--out")?;
    PipelineConfig::validate_inputs(&[&src, &trg, &gold])?;
    let mut timings = toml::Table::new();

    let t = Instant::now();
    let aligned = stage_align(cfg, &src, &trg, &out)?;
    timings.insert("align".into(), t.elapsed().as_secs_f64().into());
    println!(
        "align: objective {:.6}, {} iterations, converged {}",
        aligned.objective, aligned.iterations, aligned.converged
    );

    let mut pairs_averaged = None;
    if !cfg.skip_refine {
        let t = Instant::now();
        let r = stage_refine(cfg, &out.join(SRC_MAPPED), &out.join(TRG_MAPPED), &out.join(DICTIONARY), &out)?;
        timings.insert("refine".into(), t.elapsed().as_secs_f64().into());
        print!("refine: {}", r.text.replace('\n', "\n        ").trim_end_matches(' '));
        pairs_averaged = Some(r.pairs_averaged);
    }

    let t = Instant::now();
    let mut reports = vec![(
        "aligned".to_string(),
        stage_evaluate(cfg, &out.join(SRC_MAPPED), &out.join(TRG_MAPPED), &gold)?,
    )];
    if !cfg.skip_refine {
        reports.push((
            "refined".to_string(),
            stage_evaluate(cfg, &out.join(SRC_REFINED), &out.join(TRG_REFINED), &gold)?,
        ));
    }
    timings.insert("evaluate".into(), t.elapsed().as_secs_f64().into());

    let kv: String = reports.iter().map(|(n, r)| render_key_values(n, r)).collect();
    write_file(&out.join(METRICS), &kv)?;
    let mut baseline = "aligned".to_string();
    if let Some(dir) = &opts.compare {
        let mut base = load_baseline(dir)?;
        baseline = base[0].0.clone();
        base.retain(|(n, _)| !reports.iter().any(|(m, _)| m == n));
        base.extend(reports.iter().cloned());
        reports = base;
    }
    print_comparison(cfg, opts.p1_only, &reports, &baseline)?;

    let exit_code = if aligned.converged { EXIT_OK } else { EXIT_NOT_CONVERGED };
    let mut metrics = toml::Table::new();
    for (name, r) in &reports {
        for (k, p) in &r.precision_at {
            metrics.insert(format!("{name}.{k}"), (*p).into());
        }
    }
    let manifest = Manifest {
        run: RunInfo {
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.mapping.seed,
            threads: rayon::current_num_threads(),
            exit_code,
            converged: aligned.converged,
            iterations: aligned.iterations,
            objective: aligned.objective,
            pairs_averaged,
            timings_secs: timings,
        },
        metrics,
        config: cfg,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&out.join(MANIFEST), &text)?;
    if !aligned.converged {
        warn!("self-learning stopped at max_iterations without converging");
    }
    Ok(exit_code)
}

fn dispatch(command: &Command) -> Result<i32> {
    let opts = match command {
        Command::Align(o) | Command::Induce(o) | Command::Refine(o) | Command::Evaluate(o) | Command::Pipeline(o) => o,
    };
    let cfg = opts.resolve()?;
    let run = || match command {
        Command::Align(_) => cmd_align(&cfg),
        Command::Induce(_) => cmd_induce(&cfg),
        Command::Refine(_) => cmd_refine(&cfg),
        Command::Evaluate(o) => cmd_evaluate(o, &cfg),
        Command::Pipeline(o) => cmd_pipeline(o, &cfg),
    };
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("RUST_LOG")
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let verbose = match &cli.command {
        Command::Align(o) | Command::Induce(o) | Command::Refine(o) | Command::Evaluate(o) | Command::Pipeline(o) => {
            o.verbose
        }
    };
    init_logging(verbose);
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
