//! Executes configs, in parallel across runs, and writes the results.
//!
//! A sweep is the product `problem × method × eta`, where the problems are the
//! `kappa` list (decomp, cond-sweep, multiterm), the `widths` list (width-sweep,
//! toy) or `instances` (arrangements). Run `k` has
//! `run_id = (problem·methods + method)·etas + eta`. Problem data and
//! initialization are drawn from the stream of the problem index alone, so
//! every method starts from the same point.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, Kind, MethodConfig, ResolvedMethod, SCHEMA_VERSION};
use super::record::{to_csv, RunRecord, CSV_HEADER};
use super::rng::{derive_seed, stream};
use super::HarnessError;
use crate::analysis::{aligned_distance, assumption_report, gamma_slope, GammaFit};
use crate::error::Error;
use crate::linalg::Mat;
use crate::optimizers::{Mode, Optimizer};
use crate::problems::arrangements::{arrangements, sweep_patterns_2d};
use crate::problems::decomposition::DecompositionProblem;
use crate::problems::multiterm::spectral_init;
use crate::problems::toy::{toy_trajectory_with_eta, ToyModel};
use crate::problems::width::{width_forward_increment, WidthModel};

/// Offset separating auxiliary streams (RIP sampling) from problem streams.
const AUX_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Job {
    run_id: usize,
    problem: usize,
    method: usize,
    eta: usize,
}

fn jobs(cfg: &ExperimentConfig) -> Vec<Job> {
    let problems = match cfg.kind {
        Kind::Decomp | Kind::CondSweep | Kind::Multiterm => cfg.kappa.len(),
        Kind::WidthSweep | Kind::Toy => cfg.widths.len(),
        Kind::Arrangements => {
            return (0..cfg.instances)
                .map(|problem| Job {
                    run_id: problem,
                    problem,
                    method: 0,
                    eta: 0,
                })
                .collect()
        }
    };
    let (nm, ne) = (cfg.methods.len(), cfg.eta.len());
    let mut out = Vec::with_capacity(problems * nm * ne);
    for problem in 0..problems {
        for method in 0..nm {
            for eta in 0..ne {
                out.push(Job {
                    run_id: (problem * nm + method) * ne + eta,
                    problem,
                    method,
                    eta,
                });
            }
        }
    }
    out
}

/// Errors that mean "this run diverged" rather than "this config is wrong".
fn is_divergence(e: &Error) -> bool {
    matches!(
        e,
        Error::NumericalFailure(_) | Error::NotPositiveDefinite { .. } | Error::SingularGram { .. }
    )
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

struct RowBuilder<'a> {
    cfg: &'a ExperimentConfig,
    job: Job,
    method: String,
    n: usize,
    kappa: Option<f64>,
    eta: Option<f64>,
    start: Instant,
}

impl RowBuilder<'_> {
    fn row(&self, iter: usize) -> RunRecord {
        RunRecord {
            run_id: self.job.run_id,
            method: self.method.clone(),
            kind: self.cfg.kind.as_str().to_string(),
            n: self.n,
            kappa: self.kappa,
            eta: self.eta,
            iter,
            loss: None,
            max_dist: None,
            increment_norm: None,
            delta_hat: None,
            wall_ms: self
                .cfg
                .record_wall_time
                .then(|| self.start.elapsed().as_secs_f64() * 1e3),
            seed: self.cfg.seed,
        }
    }
}

fn run_job(cfg: &ExperimentConfig, job: Job) -> Result<Vec<RunRecord>, HarnessError> {
    let start = Instant::now();
    let method: &ResolvedMethod = &cfg.methods[job.method];
    let eta = cfg.eta.get(job.eta).copied();
    let b = |n: usize, kappa: Option<f64>, eta: Option<f64>, name: &str| RowBuilder {
        cfg,
        job,
        method: name.to_string(),
        n,
        kappa,
        eta,
        start,
    };
    match cfg.kind {
        Kind::Decomp | Kind::CondSweep => {
            let kappa = cfg.kappa[job.problem];
            run_decomp(cfg, method, &b(cfg.n, Some(kappa), eta, &method.name))
        }
        Kind::Multiterm => {
            let kappa = cfg.kappa[job.problem];
            run_multiterm(cfg, method, &b(cfg.n, Some(kappa), eta, &method.name))
        }
        Kind::WidthSweep => {
            let n = cfg.widths[job.problem];
            run_width(cfg, method, &b(n, None, eta, &method.name))
        }
        Kind::Toy => {
            let n = cfg.widths[job.problem];
            run_toy(cfg, method, &b(n, None, eta, &method.name))
        }
        Kind::Arrangements => run_arrangements(cfg, &b(cfg.n, None, None, "sampled")),
    }
}

fn run_decomp(cfg: &ExperimentConfig, method: &MethodConfig, rb: &RowBuilder) -> Result<Vec<RunRecord>, HarnessError> {
    let kappa = rb.kappa.expect("decomp rows carry kappa");
    let eta = rb.eta.expect("decomp rows carry eta");
    let mut rng = stream(cfg.seed, rb.job.problem as u64);
    let prob = DecompositionProblem::synthetic(cfg.m, cfg.n, cfg.r, kappa, &mut rng)?;
    let mut pair = if cfg.init_noise > 0.0 {
        prob.perturbed_spectral_init(cfg.init_noise, cfg.delta, &mut rng)?
    } else {
        prob.spectral_init(cfg.delta)?
    };
    let mut opt = Optimizer::new(method.step_config(eta, cfg.n)?, method.adam, &pair)?;
    let mut rows = Vec::new();
    for t in 0..=cfg.iters {
        let rel = finite_or_inf(prob.relative_error(&pair));
        let mut row = rb.row(t);
        row.loss = Some(rel);
        rows.push(row);
        if rel.is_infinite() || (cfg.tol > 0.0 && rel <= cfg.tol) || t == cfg.iters {
            break;
        }
        let (_, grad) = prob.loss_grad(&pair)?;
        match opt.step(&pair, &grad) {
            Ok(next) => pair = next,
            Err(e) if is_divergence(&e) => {
                let mut row = rb.row(t + 1);
                row.loss = Some(f64::INFINITY);
                rows.push(row);
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(rows)
}

fn run_multiterm(
    cfg: &ExperimentConfig,
    method: &MethodConfig,
    rb: &RowBuilder,
) -> Result<Vec<RunRecord>, HarnessError> {
    let kappa = rb.kappa.expect("multiterm rows carry kappa");
    let eta = rb.eta.expect("multiterm rows carry eta");
    let problem = rb.job.problem as u64;
    let p = cfg.multiterm_spec(kappa).build(derive_seed(cfg.seed, problem))?;
    let report = assumption_report(&p, cfg.rip_trials, derive_seed(cfg.seed, AUX_STREAM + problem))?;
    let op = p.operator();
    let stars = p.truth_pairs(0.0)?;
    let mut pairs = spectral_init(&p, cfg.delta)?;
    let step = method.step_config(eta, cfg.n)?;
    let mut opts = pairs
        .iter()
        .map(|q| Optimizer::new(step, method.adam, q))
        .collect::<crate::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for t in 0..=cfg.iters {
        let (loss, grads) = op.loss_grad(&pairs)?;
        let mut max_dist: f64 = 0.0;
        for (i, pair) in pairs.iter().enumerate() {
            let d = if pair.l().is_finite() && pair.r().is_finite() {
                aligned_distance(pair, &stars[i], &p.truth[i].sigma)?.dist
            } else {
                f64::INFINITY
            };
            max_dist = max_dist.max(finite_or_inf(d));
        }
        let mut row = rb.row(t);
        row.loss = Some(finite_or_inf(loss));
        row.max_dist = Some(max_dist);
        if t == 0 {
            row.delta_hat = Some(report.max_delta_hat);
        }
        rows.push(row);
        if max_dist.is_infinite() || (cfg.tol > 0.0 && max_dist < cfg.tol) || t == cfg.iters {
            break;
        }
        let mut next = Vec::with_capacity(pairs.len());
        for ((pair, g), opt) in pairs.iter().zip(&grads).zip(opts.iter_mut()) {
            match opt.step(pair, g) {
                Ok(q) => next.push(q),
                Err(e) if is_divergence(&e) => {
                    let mut row = rb.row(t + 1);
                    row.loss = Some(f64::INFINITY);
                    row.max_dist = Some(f64::INFINITY);
                    rows.push(row);
                    return Ok(rows);
                }
                Err(e) => return Err(e.into()),
            }
        }
        pairs = next;
    }
    Ok(rows)
}

fn run_width(cfg: &ExperimentConfig, method: &MethodConfig, rb: &RowBuilder) -> Result<Vec<RunRecord>, HarnessError> {
    let eta = rb.eta.expect("width rows carry eta");
    let model = WidthModel::new(rb.n, cfg.r, derive_seed(cfg.seed, rb.job.problem as u64))?;
    let trace = width_forward_increment(&model, cfg.iters, &method.step_config(eta, rb.n)?, method.adam)?;
    Ok(trace
        .increments
        .iter()
        .enumerate()
        .map(|(t, inc)| {
            let mut row = rb.row(t + 1);
            row.increment_norm = Some(*inc);
            row
        })
        .collect())
}

fn run_toy(cfg: &ExperimentConfig, method: &MethodConfig, rb: &RowBuilder) -> Result<Vec<RunRecord>, HarnessError> {
    let eta = rb.eta.expect("toy rows carry eta");
    // Same seed at every width: b is then width-independent.
    let model = ToyModel::new(rb.n, cfg.seed)?;
    let step = eta * (rb.n as f64).powf(cfg.exponent);
    let steps = toy_trajectory_with_eta(&model, cfg.iters, step, method.mode != Mode::Plain)?;
    let mut f_prev = model.output();
    Ok(steps
        .iter()
        .map(|s| {
            let mut row = rb.row(s.t);
            row.loss = Some(finite_or_inf(0.5 * (s.f - model.y).powi(2)));
            row.increment_norm = Some(finite_or_inf((s.f - f_prev).abs()));
            f_prev = s.f;
            row
        })
        .collect())
}

fn run_arrangements(cfg: &ExperimentConfig, rb: &RowBuilder) -> Result<Vec<RunRecord>, HarnessError> {
    let problem = rb.job.problem as u64;
    let x = Mat::gaussian(cfg.n, cfg.d, 1.0, &mut stream(cfg.seed, problem));
    let mut rows = Vec::with_capacity(2);
    if cfg.d == 2 {
        let mut row = rb.row(0);
        row.method = "sweep".into();
        row.loss = Some(sweep_patterns_2d(&x)?.len() as f64);
        rows.push(row);
    }
    let sampled = arrangements(&x, cfg.samples, derive_seed(cfg.seed, AUX_STREAM + problem))?;
    let mut row = rb.row(cfg.samples);
    row.loss = Some(sampled.len() as f64);
    rows.push(row);
    Ok(rows)
}

fn run_jobs(cfg: &ExperimentConfig) -> Result<Vec<(Job, Vec<RunRecord>)>, HarnessError> {
    cfg.validate()?;
    jobs(cfg)
        .into_par_iter()
        .map(|job| run_job(cfg, job).map(|rows| (job, rows)))
        .collect()
}

/// Runs every job of the config; records are ordered by `(run_id, iter)`.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, HarnessError> {
    Ok(run_jobs(cfg)?.into_iter().flat_map(|(_, rows)| rows).collect())
}

/// Runs `methods` on the config's problems and interleaves the records so
/// that every method's row for a given `(problem, eta, iter)` is adjacent.
pub fn compare(methods: &[MethodConfig], cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, HarnessError> {
    if methods.len() < 2 {
        return Err(HarnessError::Config {
            field: "methods".into(),
            message: format!("compare needs at least 2 methods, got {}", methods.len()),
        });
    }
    if cfg.kind == Kind::Arrangements {
        return Err(HarnessError::Config {
            field: "kind".into(),
            message: "arrangements has no optimizer to compare".into(),
        });
    }
    let mut cfg = cfg.clone();
    cfg.methods = methods.iter().cloned().map(|m| ResolvedMethod(m.resolved())).collect();
    let mut keyed: Vec<((usize, usize, usize, usize), RunRecord)> = run_jobs(&cfg)?
        .into_iter()
        .flat_map(|(job, rows)| {
            rows.into_iter()
                .map(move |r| ((job.problem, job.eta, r.iter, job.method), r))
        })
        .collect();
    keyed.sort_by_key(|(k, _)| *k);
    Ok(keyed.into_iter().map(|(_, r)| r).collect())
}

#[derive(Serialize)]
struct Meta<'a> {
    schema_version: u32,
    header: &'a str,
    config: &'a ExperimentConfig,
}

/// Path of the sidecar holding the resolved config: `<out>.meta.toml`.
pub fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.toml");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `contents` to a temporary file next to `path`, syncs it and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(contents).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

/// Writes the CSV and its `.meta.toml` sidecar.
pub fn write_outputs(cfg: &ExperimentConfig, records: &[RunRecord], out: &Path) -> Result<(), HarnessError> {
    let meta = Meta {
        schema_version: SCHEMA_VERSION,
        header: CSV_HEADER,
        config: cfg,
    };
    let meta = toml::to_string(&meta).expect("config is representable as TOML");
    write_atomic(&meta_path(out), meta.as_bytes())?;
    write_atomic(out, to_csv(records).as_bytes())
}

/// Per-run outcome of an optimization sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_id: usize,
    pub method: String,
    pub n: usize,
    pub kappa: Option<f64>,
    pub eta: Option<f64>,
    /// First iteration whose tracked error is at most the tolerance.
    pub iters_to_tol: Option<usize>,
    pub final_value: Option<f64>,
}

/// Groups records by run. The tracked error is `max_dist` when present, else `loss`.
pub fn summarize(records: &[RunRecord], tol: f64) -> Vec<RunSummary> {
    let mut out: Vec<RunSummary> = Vec::new();
    for r in records {
        let value = r.max_dist.or(r.loss);
        let idx = match out.iter().position(|s| s.run_id == r.run_id && s.method == r.method) {
            Some(i) => i,
            None => {
                out.push(RunSummary {
                    run_id: r.run_id,
                    method: r.method.clone(),
                    n: r.n,
                    kappa: r.kappa,
                    eta: r.eta,
                    iters_to_tol: None,
                    final_value: None,
                });
                out.len() - 1
            }
        };
        let s = &mut out[idx];
        if s.iters_to_tol.is_none() && value.is_some_and(|v| v <= tol) {
            s.iters_to_tol = Some(r.iter);
        }
        if value.is_some() {
            s.final_value = value;
        }
    }
    out.sort_by_key(|s| s.run_id);
    out
}

/// `(method, eta, fit)`.
pub type WidthFit = (String, f64, GammaFit);

/// Width exponent of `increment_norm` at iteration `iter`, one fit per
/// `(method, eta)` pair, in first-seen order.
pub fn width_gamma(records: &[RunRecord], iter: usize) -> Result<Vec<WidthFit>, HarnessError> {
    type Group = (String, f64, Vec<(usize, f64)>);
    let mut groups: Vec<Group> = Vec::new();
    for r in records.iter().filter(|r| r.iter == iter) {
        let (Some(eta), Some(inc)) = (r.eta, r.increment_norm) else {
            continue;
        };
        match groups.iter_mut().find(|g| g.0 == r.method && g.1 == eta) {
            Some(g) => g.2.push((r.n, inc)),
            None => groups.push((r.method.clone(), eta, vec![(r.n, inc)])),
        }
    }
    groups
        .into_iter()
        .map(|(method, eta, mut pts)| {
            pts.sort_by_key(|p| p.0);
            let widths: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
            let values: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.1]).collect();
            Ok((method, eta, gamma_slope(&widths, &values)?))
        })
        .collect()
}
