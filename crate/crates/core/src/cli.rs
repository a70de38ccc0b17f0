//! Command-line front end: `simulate`, `analyze`, `verify` and `sweep`.
//!
//! A JSON config file supplies defaults and command-line flags override it.
//! Exit codes: 0 pass, 1 diagnostic failure, 2 configuration or I/O error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analytic::{order_stat_cdf, order_stat_moment, v_of_s};
use crate::counting::{build_chain_from_model, closed_form_pi, solve_stationary};
use crate::engine::{self, time_averaged_count, InitSpec, Landscape, Observable, ReplacementLaw, Schedule};
use crate::error::{Error, Result};
use crate::rng::{cell_seed, SimRng};
use crate::scenarios::{
    self, scenario_beauty_contest, scenario_by_name, scenario_warmup_kth, scenario_warmup_median,
    write_points_csv, write_values_csv, BeautyContest, Dynamics, PartialOrderSystem, PlanarSystem,
    RunParams, Scenario,
};
use crate::selection::{ModelDoc, SelectionModel, TableEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "rankdrift", version, about = "Rank-driven particle systems and their counting chains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write its trace.
    Simulate(Flags),
    /// Tabulate exact and limiting stationary laws over a grid.
    Analyze(Flags),
    /// Run a scenario's diagnostics and report pass/fail.
    Verify(Flags),
    /// Time-averaged counts over an (N, s) grid, in parallel.
    Sweep(Flags),
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct Flags {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<String>,
    /// Comma-separated list of N.
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long = "burnin")]
    pub burn_in: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma list `0.1,0.25` or range `start:stop:step`.
    #[arg(long = "s-grid")]
    pub s_grid: Option<String>,
    /// Comma-separated order-statistic ranks.
    #[arg(long = "order-stats", value_delimiter = ',')]
    pub order_stats: Vec<usize>,
    /// Record every this many steps after burn-in.
    #[arg(long)]
    pub every: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long, env = "RANKDRIFT_JOBS")]
    pub jobs: Option<usize>,
    /// Planar scenario: write the direct 2-D point cloud instead of a trace.
    #[arg(long)]
    pub cloud: bool,
}

/// Selection rule given inline instead of by scenario name; `N` comes from `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineModel {
    pub family: String,
    #[serde(rename = "K")]
    pub k_replace: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<TableEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Option<String>,
    pub model: Option<InlineModel>,
    pub law: Option<ReplacementLaw>,
    /// Replaced rank for `warmup_kth`.
    pub k: Option<usize>,
    /// Multiplier for `beauty_contest`.
    pub p: Option<f64>,
    pub n: Vec<usize>,
    pub steps: Option<u64>,
    pub burn_in: Option<u64>,
    pub seed: Option<u64>,
    pub every: Option<u64>,
    pub s_grid: Vec<f64>,
    pub order_stats: Vec<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub jobs: Option<usize>,
}

/// Parses `0.1,0.2` or `start:stop:step` (inclusive of `stop` up to rounding).
pub fn parse_s_grid(text: &str) -> Result<Vec<f64>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!("s-grid range `{text}` must be start:stop:step")));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number `{s}` in s-grid")))
        };
        let (a, b, h) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if h.is_nan() || h <= 0.0 || b < a {
            return Err(Error::Config(format!("s-grid range `{text}` is empty or has a bad step")));
        }
        let count = ((b - a) / h + 1e-9).floor() as usize;
        return Ok((0..=count).map(|i| a + h * i as f64).collect());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number `{s}` in s-grid")))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))
    }

    /// Config file (if any) overridden by flags.
    pub fn from_flags(flags: &Flags) -> Result<Self> {
        let mut cfg = match &flags.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = &flags.scenario {
            cfg.scenario = Some(s.clone());
        }
        if !flags.n.is_empty() {
            cfg.n = flags.n.clone();
        }
        if flags.steps.is_some() {
            cfg.steps = flags.steps;
        }
        if flags.burn_in.is_some() {
            cfg.burn_in = flags.burn_in;
        }
        if flags.seed.is_some() {
            cfg.seed = flags.seed;
        }
        if let Some(g) = &flags.s_grid {
            cfg.s_grid = parse_s_grid(g)?;
        }
        if !flags.order_stats.is_empty() {
            cfg.order_stats = flags.order_stats.clone();
        }
        if flags.every.is_some() {
            cfg.every = flags.every;
        }
        if flags.out.is_some() {
            cfg.out = flags.out.clone();
        }
        if flags.format.is_some() {
            cfg.format = flags.format;
        }
        if flags.jobs.is_some() {
            cfg.jobs = flags.jobs;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if let Some(bad) = self.s_grid.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
            return Err(Error::Config(format!("s-grid value {bad} must lie in (0, 1)")));
        }
        if self.n.contains(&0) {
            return Err(Error::Config("N must be positive".into()));
        }
        if let (Some(steps), Some(burn)) = (self.steps, self.burn_in) {
            if steps <= burn {
                return Err(Error::Config(format!(
                    "--steps ({steps}) must exceed --burnin ({burn})"
                )));
            }
        }
        if self.every == Some(0) {
            return Err(Error::Config("--every must be positive".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("--jobs must be positive".into()));
        }
        if self.scenario.is_some() && self.model.is_some() {
            return Err(Error::Config("give either a scenario or an inline model, not both".into()));
        }
        Ok(())
    }

    fn format(&self) -> Format {
        self.format.unwrap_or_default()
    }

    fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("an explicit --seed is required".into()))
    }

    /// Scenario for this config at `n_points`, or at the scenario default.
    fn scenario(&self, n_points: Option<usize>) -> Result<Scenario> {
        if let Some(m) = &self.model {
            let n = n_points.or(self.n.first().copied()).ok_or_else(|| {
                Error::Config("an inline model needs --n".into())
            })?;
            let doc = ModelDoc {
                family: m.family.clone(),
                n_points: n,
                k_replace: m.k_replace,
                k: m.k,
                table: m.table.clone(),
                s_star: m.s_star,
                alpha: m.alpha,
            };
            let model = SelectionModel::from_doc(&doc)?;
            return Ok(Scenario {
                name: "inline".into(),
                dynamics: Dynamics::Ranked {
                    family: model.family().clone(),
                    k_replace: model.k_replace(),
                    law: self.law.clone().unwrap_or_default(),
                },
                defaults: RunParams {
                    n_points: n,
                    steps: 100 * n as u64,
                    burn_in: Schedule::default_burn_in(n),
                    seed: 0,
                    every: 1,
                },
                diagnostics: Vec::new(),
            });
        }
        let name = self
            .scenario
            .as_deref()
            .ok_or_else(|| Error::Config("give --scenario or an inline model in --config".into()))?;
        let mut sc = match name {
            "warmup_kth" => {
                let n = n_points.unwrap_or(9);
                scenario_warmup_kth(n, self.k.unwrap_or(n.div_ceil(2)))?
            }
            "warmup_median" => scenario_warmup_median(n_points.unwrap_or(101))?,
            "beauty_contest" => scenario_beauty_contest(self.p.unwrap_or(0.5))?,
            other => scenario_by_name(other)?,
        };
        if let Some(n) = n_points {
            sc.defaults.n_points = n;
        }
        if let Some(law) = &self.law {
            if let Dynamics::Ranked { law: l, .. } = &mut sc.dynamics {
                *l = law.clone();
            }
        }
        Ok(sc)
    }

    fn single_n(&self) -> Result<Option<usize>> {
        match self.n.len() {
            0 => Ok(None),
            1 => Ok(Some(self.n[0])),
            _ => Err(Error::Config("this command takes a single --n".into())),
        }
    }

    fn run_params(&self, sc: &Scenario, seed: u64) -> Result<RunParams> {
        let d = sc.defaults;
        let steps = self.steps.unwrap_or(d.steps);
        // Shortened runs keep at least 90% of their steps after burn-in.
        let burn_in = match (self.burn_in, self.steps) {
            (Some(b), _) => b,
            (None, Some(_)) => d.burn_in.min(steps / 10),
            (None, None) => d.burn_in,
        };
        let p = RunParams {
            n_points: d.n_points,
            steps,
            burn_in,
            seed,
            every: self.every.unwrap_or(d.every),
        };
        if p.steps <= p.burn_in {
            return Err(Error::Config(format!(
                "steps ({}) must exceed burn-in ({})",
                p.steps, p.burn_in
            )));
        }
        Ok(p)
    }
}

/// Pass or diagnostic failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

/// Writes `{provenance, result}` as JSON, or CSV via `csv_body` with the
/// provenance in a `<out>.meta.json` sidecar when writing to a file.
fn emit(
    cfg: &ExperimentConfig,
    provenance: serde_json::Value,
    result: serde_json::Value,
    csv_body: impl FnOnce(&mut dyn Write) -> Result<()>,
) -> Result<()> {
    let header = json!({"requested": cfg, "effective": provenance});
    let mut w = open_out(cfg.out.as_deref())?;
    match cfg.format() {
        Format::Json => {
            let doc = json!({"provenance": header, "result": result});
            serde_json::to_writer_pretty(&mut w, &doc)?;
            w.write_all(b"\n")?;
        }
        Format::Csv => {
            csv_body(&mut w)?;
            if let Some(p) = &cfg.out {
                let mut meta = p.clone().into_os_string();
                meta.push(".meta.json");
                let mut f = BufWriter::new(File::create(PathBuf::from(meta))?);
                serde_json::to_writer_pretty(&mut f, &header)?;
                f.write_all(b"\n")?;
                f.flush()?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn initial_landscape(n: usize, law: &ReplacementLaw, rng: &mut SimRng) -> Result<Landscape> {
    let init = match law {
        ReplacementLaw::Uniform01 => InitSpec::IidUniform,
        l => InitSpec::IidFrom(l.clone()),
    };
    Landscape::init(n, &init, rng)
}

pub fn cmd_simulate(cfg: &ExperimentConfig, cloud: bool) -> Result<Outcome> {
    let seed = cfg.require_seed()?;
    let sc = cfg.scenario(cfg.single_n()?)?;
    let params = cfg.run_params(&sc, seed)?;
    let provenance = sc.describe(&params);
    let mut rng = SimRng::new(seed);
    match &sc.dynamics {
        Dynamics::Ranked { .. } if cloud && sc.name == "planar_norm" => {
            let mut sys = PlanarSystem::uniform(params.n_points, &mut rng)?;
            for _ in 0..params.steps {
                sys.step(&mut rng);
            }
            let pts = sys.points();
            let inside = pts.iter().filter(|p| p.norm() < 0.7).count();
            eprintln!("points with norm < 0.7: {inside} of {}", pts.len());
            emit(cfg, provenance, serde_json::to_value(&pts)?, |w| write_points_csv(&pts, w))?;
        }
        Dynamics::Ranked { .. } => {
            let (model, law) = sc.ranked_parts(params.n_points)?.expect("ranked dynamics");
            let mut observables = vec![Observable::TypicalPoint];
            observables.extend(cfg.s_grid.iter().map(|&s| Observable::CountAt(s)));
            observables.extend(cfg.order_stats.iter().map(|&n| Observable::OrderStat(n)));
            let schedule = Schedule::new(params.burn_in, params.every, observables);
            let mut landscape = initial_landscape(params.n_points, &law, &mut rng)?;
            let trace = engine::run(&mut landscape, &model, &law, params.steps, &schedule, &mut rng)?;
            for o in &schedule.observables {
                let v = trace.values(o);
                let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
                eprintln!("{o}: mean {mean:.6} over {} records", v.len());
            }
            let result = serde_json::from_str::<serde_json::Value>(&trace.to_json()?)?;
            emit(cfg, provenance, result, |w| trace.write_csv(w))?;
        }
        Dynamics::PartialOrder => {
            let mut sys = PartialOrderSystem::uniform(params.n_points, &mut rng)?;
            let mut degenerate = 0u64;
            for _ in 0..params.steps {
                if sys.step(&mut rng) == scenarios::StepOutcome::Degenerate {
                    degenerate += 1;
                }
            }
            eprintln!(
                "minimal points: {} of {}; degenerate steps: {degenerate}",
                sys.num_minimal(),
                sys.len()
            );
            let pts = sys.points();
            emit(cfg, provenance, serde_json::to_value(&pts)?, |w| write_points_csv(&pts, w))?;
        }
        Dynamics::BeautyContest { p } => {
            let mut sys = BeautyContest::uniform(params.n_points, *p, &mut rng)?;
            for _ in 0..params.steps {
                sys.step(&mut rng);
            }
            let v = sys.values();
            eprintln!("mean {:.6}", sys.mean());
            emit(cfg, provenance, serde_json::to_value(&v)?, |w| write_values_csv(&v, w))?;
        }
    }
    Ok(Outcome::Pass)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeRow {
    pub n_points: usize,
    pub s: f64,
    pub status: String,
    pub exact_mean: f64,
    pub exact_pi: [f64; 3],
    pub closed_mean: Option<f64>,
    pub closed_pi: Option<[f64; 3]>,
    pub v: Option<f64>,
    /// `(n, h_n(s), E[X^(n)])` for each requested rank.
    pub order_stats: Vec<(usize, f64, f64)>,
}

pub fn analyze_rows(cfg: &ExperimentConfig) -> Result<Vec<AnalyzeRow>> {
    let ns: Vec<usize> = if cfg.n.is_empty() {
        vec![cfg.scenario(None)?.defaults.n_points]
    } else {
        cfg.n.clone()
    };
    let grid: Vec<f64> = if cfg.s_grid.is_empty() {
        parse_s_grid("0.1:0.45:0.05")?
    } else {
        cfg.s_grid.clone()
    };
    let ranks: Vec<usize> = if cfg.order_stats.is_empty() {
        vec![1, 2, 3]
    } else {
        cfg.order_stats.clone()
    };
    let mut rows = Vec::new();
    for &n in &ns {
        let sc = cfg.scenario(Some(n))?;
        let (model, _) = sc
            .ranked_parts(n)?
            .ok_or_else(|| Error::Config(format!("scenario {} has no counting chain", sc.name)))?;
        let s_star = model.threshold_s_star().value();
        let limit_chain = model.alpha() == Some(0.0) && s_star == Some(0.5);
        for &s in &grid {
            let exact = solve_stationary(&build_chain_from_model(&model, s)?)?;
            let (status, closed) = if !limit_chain {
                ("exact_only", None)
            } else {
                match closed_form_pi(s) {
                    Ok(c) => ("ok", Some(c)),
                    Err(Error::Supercritical { .. }) => ("supercritical", None),
                    Err(e) => return Err(e),
                }
            };
            rows.push(AnalyzeRow {
                n_points: n,
                s,
                status: status.into(),
                exact_mean: exact.mean,
                exact_pi: [exact.prob(0), exact.prob(1), exact.prob(2)],
                closed_mean: closed.as_ref().map(|c| c.mean),
                closed_pi: closed.as_ref().map(|c| [c.prob(0), c.prob(1), c.prob(2)]),
                v: s_star.map(|t| v_of_s(s, t)),
                order_stats: if limit_chain {
                    ranks
                        .iter()
                        .map(|&r| (r, order_stat_cdf(r, s), order_stat_moment(r, 1)))
                        .collect()
                } else {
                    Vec::new()
                },
            });
        }
    }
    Ok(rows)
}

pub fn cmd_analyze(cfg: &ExperimentConfig) -> Result<Outcome> {
    let rows = analyze_rows(cfg)?;
    for r in rows.iter().filter(|r| r.status == "supercritical") {
        eprintln!(
            "N={} s={}: supercritical, V(s) = {}",
            r.n_points,
            r.s,
            r.v.map_or("unknown".into(), |v| format!("{v:.6}"))
        );
    }
    let ranks: Vec<usize> = rows
        .first()
        .map(|r| r.order_stats.iter().map(|o| o.0).collect())
        .unwrap_or_default();
    let csv_body = |w: &mut dyn Write| -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let mut header: Vec<String> = [
            "n_points", "s", "status", "exact_mean", "exact_pi0", "exact_pi1", "exact_pi2",
            "closed_mean", "closed_pi0", "closed_pi1", "closed_pi2", "v",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for r in &ranks {
            header.push(format!("h{r}"));
            header.push(format!("mean_x{r}"));
        }
        out.write_record(&header)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &rows {
            let mut rec = vec![
                r.n_points.to_string(),
                r.s.to_string(),
                r.status.clone(),
                r.exact_mean.to_string(),
                r.exact_pi[0].to_string(),
                r.exact_pi[1].to_string(),
                r.exact_pi[2].to_string(),
                opt(r.closed_mean),
                opt(r.closed_pi.map(|p| p[0])),
                opt(r.closed_pi.map(|p| p[1])),
                opt(r.closed_pi.map(|p| p[2])),
                opt(r.v),
            ];
            for i in 0..ranks.len() {
                match r.order_stats.get(i) {
                    Some(o) => {
                        rec.push(o.1.to_string());
                        rec.push(o.2.to_string());
                    }
                    None => rec.extend([String::new(), String::new()]),
                }
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    };
    emit(cfg, json!({"command": "analyze"}), serde_json::to_value(&rows)?, csv_body)?;
    Ok(Outcome::Pass)
}

pub fn cmd_verify(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sc = cfg.scenario(cfg.single_n()?)?;
    let seed = cfg.seed.unwrap_or(sc.defaults.seed);
    let params = cfg.run_params(&sc, seed)?;
    let reports = scenarios::verify(&sc, &params)?;
    let mut all_pass = true;
    for r in &reports {
        all_pass &= r.pass;
        eprintln!(
            "{} {}: observed {}",
            if r.pass { "PASS" } else { "FAIL" },
            r.diagnostic,
            r.observed
        );
        if let Some(note) = &r.note {
            eprintln!("warning: {note}");
        }
    }
    let header = json!({"requested": cfg, "effective": sc.describe(&params)});
    let mut w = open_out(cfg.out.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &json!({"provenance": header, "pass": all_pass, "reports": reports}))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(if all_pass { Outcome::Pass } else { Outcome::Fail })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n_points: usize,
    pub s: f64,
    pub cell: u64,
    pub seed: u64,
    pub steps: u64,
    pub burn_in: u64,
    pub mean_count: f64,
    pub fraction: f64,
    pub v: Option<f64>,
}

pub fn sweep_rows(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let seed = cfg.require_seed()?;
    let cells: Vec<(u64, usize, f64)> = cfg
        .n
        .iter()
        .flat_map(|&n| cfg.s_grid.iter().map(move |&s| (n, s)))
        .enumerate()
        .map(|(i, (n, s))| (i as u64, n, s))
        .collect();
    let mut jobs = Vec::with_capacity(cells.len());
    for &(cell, n, s) in &cells {
        let sc = cfg.scenario(Some(n))?;
        let (model, law) = sc
            .ranked_parts(n)?
            .ok_or_else(|| Error::Config(format!("scenario {} cannot be swept", sc.name)))?;
        let burn_in = cfg.burn_in.unwrap_or_else(|| Schedule::default_burn_in(n));
        let steps = cfg.steps.unwrap_or(100 * n as u64 + burn_in);
        if steps <= burn_in {
            return Err(Error::Config(format!(
                "steps ({steps}) must exceed burn-in ({burn_in}) for N = {n}"
            )));
        }
        jobs.push((cell, n, s, model, law, steps, burn_in));
    }
    let run = || -> Result<Vec<SweepRow>> {
        jobs.par_iter()
            .map(|(cell, n, s, model, law, steps, burn_in)| {
                let cs = cell_seed(seed, *cell);
                let mut rng = SimRng::new(cs);
                let mut landscape = initial_landscape(*n, law, &mut rng)?;
                let level = law.transform(*s);
                let mean = time_averaged_count(&mut landscape, model, law, level, *burn_in, *steps, &mut rng);
                Ok(SweepRow {
                    n_points: *n,
                    s: *s,
                    cell: *cell,
                    seed: cs,
                    steps: *steps,
                    burn_in: *burn_in,
                    mean_count: mean,
                    fraction: mean / *n as f64,
                    v: model.threshold_s_star().value().map(|t| v_of_s(*s, t)),
                })
            })
            .collect()
    };
    match cfg.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {j} workers: {e}")))?
            .install(run),
        None => run(),
    }
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Outcome> {
    let rows = sweep_rows(cfg)?;
    let csv_body = |w: &mut dyn Write| -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        out.write_record([
            "n_points", "s", "cell", "seed", "steps", "burn_in", "mean_count", "fraction", "v",
        ])?;
        for r in &rows {
            out.write_record([
                r.n_points.to_string(),
                r.s.to_string(),
                r.cell.to_string(),
                r.seed.to_string(),
                r.steps.to_string(),
                r.burn_in.to_string(),
                r.mean_count.to_string(),
                r.fraction.to_string(),
                r.v.map_or(String::new(), |v| v.to_string()),
            ])?;
        }
        out.flush()?;
        Ok(())
    };
    emit(cfg, json!({"command": "sweep"}), serde_json::to_value(&rows)?, csv_body)?;
    Ok(Outcome::Pass)
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let (flags, which) = match &cli.command {
        Command::Simulate(f) => (f, 0),
        Command::Analyze(f) => (f, 1),
        Command::Verify(f) => (f, 2),
        Command::Sweep(f) => (f, 3),
    };
    let cfg = ExperimentConfig::from_flags(flags)?;
    match which {
        0 => cmd_simulate(&cfg, flags.cloud),
        1 => cmd_analyze(&cfg),
        2 => cmd_verify(&cfg),
        _ => cmd_sweep(&cfg),
    }
}

/// Parses arguments, runs, and maps the result to the exit-code contract.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn s_grid_forms() {
        assert_eq!(parse_s_grid("0.1,0.25").unwrap(), vec![0.1, 0.25]);
        let g = parse_s_grid("0.1:0.45:0.05").unwrap();
        assert_eq!(g.len(), 8);
        assert!((g[7] - 0.45).abs() < 1e-12);
        assert!(parse_s_grid("").unwrap().is_empty());
        assert!(parse_s_grid("0.1:0.2").is_err());
        assert!(parse_s_grid("a,b").is_err());
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"scenario": "min_plus_uniform", "n": [50], "seed": 1, "steps": 100}"#).unwrap();
        let flags = Flags {
            config: Some(path),
            seed: Some(9),
            ..Default::default()
        };
        let cfg = ExperimentConfig::from_flags(&flags).unwrap();
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.n, vec![50]);
        assert_eq!(cfg.steps, Some(100));
    }

    #[test]
    fn validation_errors() {
        let bad = |f: Flags| matches!(ExperimentConfig::from_flags(&f), Err(Error::Config(_)));
        assert!(bad(Flags {
            steps: Some(10),
            burn_in: Some(20),
            ..Default::default()
        }));
        assert!(bad(Flags {
            s_grid: Some("0.5,1.0".into()),
            ..Default::default()
        }));
        let cfg = ExperimentConfig {
            scenario: Some("min_plus_uniform".into()),
            ..Default::default()
        };
        assert!(matches!(cmd_simulate(&cfg, false), Err(Error::Config(_))));
    }

    #[test]
    fn analyze_flags_supercritical() {
        let cfg = ExperimentConfig {
            scenario: Some("min_plus_uniform".into()),
            n: vec![200],
            s_grid: vec![0.25, 0.6],
            ..Default::default()
        };
        let rows = analyze_rows(&cfg).unwrap();
        assert_eq!(rows[0].status, "ok");
        assert!((rows[0].closed_mean.unwrap() - 0.625).abs() < 1e-12);
        assert!((rows[0].exact_mean - 0.625).abs() < 0.01);
        assert_eq!(rows[1].status, "supercritical");
        assert!((rows[1].v.unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn sweep_empty_grid_and_determinism() {
        let mut cfg = ExperimentConfig {
            scenario: Some("min_plus_uniform".into()),
            seed: Some(3),
            ..Default::default()
        };
        assert!(sweep_rows(&cfg).unwrap().is_empty());
        cfg.n = vec![20, 40];
        cfg.s_grid = vec![0.3, 0.7];
        cfg.steps = Some(3000);
        cfg.burn_in = Some(500);
        let a = sweep_rows(&cfg).unwrap();
        cfg.jobs = Some(1);
        let b = sweep_rows(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        let seeds: std::collections::HashSet<u64> = a.iter().map(|r| r.seed).collect();
        assert_eq!(seeds.len(), 4);
    }
}
