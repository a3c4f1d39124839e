//! Task orchestration. Every task fills `Ctx::artifacts` and returns a JSON
//! summary; numeric table cells are certificates, oracle lower bounds, or
//! direct outputs of the named operation.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pbdw::affine_map::{self, AffineRecoveryMap, HeldOutReport, WidthProxy};
use pbdw::greedy::{
    poor_mans_select, random_training_size, weak_greedy, GreedyConfig, GreedyMode, GreedyTrace, PoorMansSelection,
    TrainingSet,
};
use pbdw::inverse::{estimate_parameter, metric_project};
use pbdw::io;
use pbdw::linalg::singular_values_desc;
use pbdw::onespace::ReducedSpace;
use pbdw::oracle::{benchmark, wc_error_bruteforce, BenchmarkEntry, ManifoldNet};
use pbdw::piecewise::{build_partition, recover_pw, PartitionedModel, PiecewiseMap};
use pbdw::{MeasurementSystem, ModelConfig, Observation, ParametricModel, SensorSpec};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cache;
use crate::config::{ExperimentConfig, Task};
use crate::error::{CliError, Result};
use crate::output::{num, opt_num, sha256_hex, sub_seed, Artifacts};

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub competitor_poor_mans: bool,
    /// External observations (`sensor_id,value` CSV) for the estimation tasks.
    pub observations: Option<PathBuf>,
    /// Bound on the raw sensor noise of external observations.
    pub noise_level: f64,
    pub piecewise: bool,
}

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub model: ParametricModel,
    pub system: MeasurementSystem,
    pub sensors: Vec<SensorSpec>,
    pub artifacts: Artifacts,
    seeds: BTreeMap<String, u64>,
}

impl Ctx {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let model = ParametricModel::build(&cfg.model)?;
        let sensors = cfg.sensors.specs(cfg.model.dx);
        let system = MeasurementSystem::build(model.space(), &sensors)?;
        Ok(Self { cfg, model, system, sensors, artifacts: Artifacts::default(), seeds: BTreeMap::new() })
    }

    fn seed(&mut self, label: &str) -> u64 {
        let s = sub_seed(self.cfg.seed, label);
        self.seeds.insert(label.to_string(), s);
        s
    }

    pub fn config_hash(&self) -> Result<String> {
        Ok(sha256_hex(&serde_json::to_vec(&self.cfg)?))
    }

    pub fn manifest(&self, task: &str) -> Result<Value> {
        Ok(json!({
            "tool": "pbdw",
            "version": env!("CARGO_PKG_VERSION"),
            "task": task,
            "config_hash": self.config_hash()?,
            "seed": self.cfg.seed,
            "derived_seeds": self.seeds,
            "config": self.cfg,
        }))
    }
}

struct Hierarchy {
    rs: ReducedSpace,
    trace: GreedyTrace,
}

fn hierarchy(ctx: &mut Ctx, n_max: usize) -> Result<Hierarchy> {
    let g = ctx.cfg.greedy.clone();
    let training = TrainingSet::tensor_grid(ctx.model.d_y(), g.training_per_dim)?;
    let mode = match &g.randomized {
        None => GreedyMode::Fixed,
        Some(r) => GreedyMode::Randomized { n: random_training_size(r.eps, r.eta, r.c_n)?, seed: ctx.seed("greedy") },
    };
    let cfg = GreedyConfig { n_max, tol: g.tol, ..GreedyConfig::default() };
    let (rs, trace) = weak_greedy(&ctx.model, &training, &cfg, mode)?;
    Ok(Hierarchy { rs, trace })
}

fn poor_mans(ctx: &Ctx, h: &Hierarchy) -> Result<PoorMansSelection> {
    Ok(poor_mans_select(&ctx.system, &h.rs, &h.trace.eps_history)?)
}

fn matrix_csv(m: &DMatrix<f64>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    io::write_matrix(&mut buf, m)?;
    Ok(buf)
}

fn param_header(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|j| format!("{prefix}{j}")).collect()
}

fn greedy_decay(ctx: &mut Ctx) -> Result<Value> {
    let h = hierarchy(ctx, ctx.cfg.greedy.n_max)?;
    let pm = poor_mans(ctx, &h)?;
    let d = ctx.model.d_y();
    let mut header: Vec<String> =
        ["n", "surrogate_max", "eps_certified", "beta", "mu", "product"].map(String::from).to_vec();
    header.extend(param_header("selected_y", d));
    let rows: Vec<Vec<String>> = (0..h.trace.eps_history.len())
        .map(|n| {
            let sel = pm.table.iter().find(|r| r.n == n);
            let mut row = vec![
                n.to_string(),
                num(h.trace.surrogate_max_history[n]),
                num(h.trace.eps_history[n]),
                opt_num(sel.map(|r| r.beta)),
                opt_num(sel.map(|r| r.mu)),
                opt_num(sel.map(|r| r.product)),
            ];
            match h.trace.selected_params.get(n) {
                Some(y) => row.extend(y.iter().map(|v| num(*v))),
                None => row.extend(std::iter::repeat_n(String::new(), d)),
            }
            row
        })
        .collect();
    ctx.artifacts.add_csv("decay.csv", &header, &rows)?;
    ctx.artifacts.add_bytes("basis.csv", matrix_csv(&h.rs.basis_matrix())?);
    Ok(json!({
        "n": h.rs.n(),
        "eps_final": h.trace.eps_history.last(),
        "skipped": h.trace.skipped.len(),
        "poor_mans": {"n_star": pm.n_star, "mu": pm.map.mu(), "certificate": pm.map.certify()},
    }))
}

struct AffineFit {
    map: AffineRecoveryMap,
    certificate: f64,
    held_out: HeldOutReport,
    proxy: WidthProxy,
    hierarchy: Hierarchy,
    net: ManifoldNet,
}

fn fit_affine_map(ctx: &mut Ctx) -> Result<AffineFit> {
    let h = hierarchy(ctx, ctx.cfg.affine.n_l)?;
    let net = cache::tensor_net(&ctx.model, ctx.cfg.greedy.training_per_dim)?;
    let map = affine_map::fit(&ctx.model, &ctx.system, &net, &h.rs, &ctx.cfg.affine.minimax)?;
    let probes = TrainingSet::random(ctx.model.d_y(), ctx.cfg.affine.held_out, ctx.seed("held_out"));
    let held = probes.snapshots(&ctx.model)?;
    let report = affine_map::held_out(ctx.model.space(), &ctx.system, &map, &net.states, &held);
    let proxy = affine_map::width_lower_proxy(ctx.model.space(), &net.states, ctx.system.m());
    let certificate = map.certificate(report.delta);
    Ok(AffineFit { map, certificate, held_out: report, proxy, hierarchy: h, net })
}

/// A fitted affine map as persisted by `fit_affine`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FittedMap {
    pub model: ModelConfig,
    pub sensors: Vec<SensorSpec>,
    /// Training objective plus the fineness slack measured on held-out states.
    pub certificate: f64,
    pub map: AffineRecoveryMap,
}

fn fit_affine(ctx: &mut Ctx, opts: &Options) -> Result<Value> {
    let fit = fit_affine_map(ctx)?;
    let mut summary = json!({
        "l": fit.hierarchy.rs.n(),
        "p": fit.map.p(),
        "objective": fit.map.training_objective,
        "objective_lower_bound": fit.map.objective_lower_bound,
        "certified": fit.map.certified,
        "newton_steps": fit.map.newton_steps,
        "b_norm": fit.map.b_norm(),
        "certificate": fit.certificate,
        "held_out": fit.held_out,
        "width_proxy": {"sigma": fit.proxy.sigma, "tail": fit.proxy.tail},
    });
    let header = ["method", "certificate", "wc_lb"].map(String::from).to_vec();
    let mut rows = vec![vec!["optimal-affine".into(), num(fit.certificate), num(fit.map.training_objective)]];
    if opts.competitor_poor_mans {
        let pm = poor_mans(ctx, &fit.hierarchy)?;
        let pm_wc = wc_error_bruteforce(&ctx.model, &ctx.system, &fit.net, &pm.map)?.wc_lb;
        rows.push(vec!["one-space(poor-mans)".into(), num(pm.map.certify()), num(pm_wc)]);
        // both sides are net maxima; allow the solver's relative gap and roundoff
        let scale = fit.net.states.iter().map(|u| ctx.model.space().norm(u)).fold(0.0, f64::max);
        let slack = pm_wc * ctx.cfg.affine.minimax.tol_opt + 1e-12 * scale;
        let dominates = fit.map.training_objective <= pm_wc + slack;
        summary["competitor"] = json!({"name": "poor-mans", "n_star": pm.n_star, "wc_lb": pm_wc, "dominated": dominates});
        if !dominates {
            return Err(CliError(format!(
                "affine objective {:e} exceeds the poor man's net error {pm_wc:e}",
                fit.map.training_objective
            )));
        }
    }
    ctx.artifacts.add_csv("comparison.csv", &header, &rows)?;
    let history: Vec<Vec<String>> =
        fit.map.history.iter().enumerate().map(|(k, v)| vec![k.to_string(), num(*v)]).collect();
    ctx.artifacts.add_csv("affine_history.csv", &["centering".into(), "objective".into()], &history)?;
    let fitted = FittedMap {
        model: ctx.cfg.model.clone(),
        sensors: ctx.sensors.clone(),
        certificate: fit.certificate,
        map: fit.map,
    };
    ctx.artifacts.add_json("affine_map.json", &fitted)?;
    Ok(summary)
}

fn partition(ctx: &mut Ctx) -> Result<PartitionedModel> {
    let mut cfg = ctx.cfg.piecewise.clone();
    cfg.seed ^= ctx.seed("piecewise");
    Ok(build_partition(&ctx.model, &ctx.system, &cfg)?)
}

fn build_pw(ctx: &mut Ctx) -> Result<Value> {
    let pm = partition(ctx)?;
    let d = ctx.model.d_y();
    let mut header: Vec<String> = ["cell", "depth", "n_k", "eps_k", "mu", "certificate"].map(String::from).to_vec();
    header.extend(param_header("lo", d));
    header.extend(param_header("hi", d));
    let mut rows = Vec::new();
    for (k, cell) in pm.cells.iter().enumerate() {
        let mut row = vec![k.to_string(), cell.depth.to_string(), cell.n_k().to_string()];
        row.extend([cell.eps_k, cell.mu, cell.certificate].map(num));
        row.extend(cell.lo.iter().chain(&cell.hi).map(|v| num(*v)));
        rows.push(row);
        let reduced = cell.local_map.reduced();
        let mut m = DMatrix::zeros(ctx.model.dim(), reduced.n() + 1);
        m.set_column(0, reduced.anchor());
        if reduced.n() > 0 {
            m.columns_mut(1, reduced.n()).copy_from(&reduced.basis_matrix());
        }
        ctx.artifacts.add_bytes(format!("pw_bases/cell_{k:04}.csv"), matrix_csv(&m)?);
    }
    ctx.artifacts.add_csv("cells.csv", &header, &rows)?;
    ctx.artifacts.add_json("partition.json", &pm.summary())?;
    Ok(json!({
        "cells": pm.len(),
        "complete": pm.complete,
        "target_eps": pm.target_eps,
        "worst_certificate": pm.worst_certificate,
        "splits": pm.split_trace.len(),
    }))
}

enum Estimator {
    OneSpace(PoorMansSelection),
    Piecewise(PartitionedModel),
}

struct Estimate {
    state: DVector<f64>,
    certificate: f64,
    cell: Option<usize>,
}

impl Estimator {
    fn name(&self) -> &'static str {
        match self {
            Estimator::OneSpace(_) => "one-space(poor-mans)",
            Estimator::Piecewise(_) => "piecewise",
        }
    }

    fn estimate(&self, ctx: &Ctx, obs: &Observation, noise_w: f64) -> Result<Estimate> {
        Ok(match self {
            Estimator::OneSpace(pm) => Estimate {
                state: pm.map.recover(&ctx.system, obs)?,
                certificate: if noise_w > 0.0 { pm.map.certify_noisy(noise_w) } else { pm.map.certify() },
                cell: None,
            },
            Estimator::Piecewise(part) => {
                let rec = recover_pw(&ctx.model, &ctx.system, part, obs)?;
                let certificate = if noise_w > 0.0 {
                    part.cells.iter().map(|c| c.local_map.certify_noisy(noise_w)).fold(0.0, f64::max)
                } else {
                    part.worst_certificate
                };
                Estimate { state: rec.state, certificate, cell: Some(rec.k_star) }
            }
        })
    }
}

struct ObservationSet {
    observations: Vec<Observation>,
    /// Parameters of synthetic observations.
    truth: Option<Vec<Vec<f64>>>,
    /// Bound on the noise in W coordinates, per observation.
    noise_w: Vec<f64>,
}

fn observations(ctx: &mut Ctx, opts: &Options) -> Result<ObservationSet> {
    if let Some(path) = &opts.observations {
        let file = std::fs::File::open(path).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
        let observations = io::ingest_observations(file, &ctx.system, opts.noise_level)?;
        // raw noise e maps to R^{-T} e in W coordinates
        let sv = singular_values_desc(ctx.system.r_factor());
        let smallest = sv.last().copied().unwrap_or(0.0);
        let noise_w = if opts.noise_level == 0.0 { 0.0 } else { opts.noise_level / smallest };
        let n = observations.len();
        return Ok(ObservationSet { observations, truth: None, noise_w: vec![noise_w; n] });
    }
    let count = ctx.cfg.estimate.count;
    let params = TrainingSet::random(ctx.model.d_y(), count, ctx.seed("observations")).points().to_vec();
    let noise_seed = ctx.seed("noise");
    let noise = ctx.cfg.estimate.noise;
    let mut observations = Vec::with_capacity(count);
    let mut noise_w = Vec::with_capacity(count);
    for (k, y) in params.iter().enumerate() {
        let u = ctx.model.solve(y)?;
        let obs = ctx.system.observe(&u, &noise, noise_seed.wrapping_add(k as u64))?;
        noise_w.push((&obs.w_coords - ctx.system.w_coords(&u)).norm());
        observations.push(obs);
    }
    Ok(ObservationSet { observations, truth: Some(params), noise_w })
}

fn estimator(ctx: &mut Ctx, opts: &Options) -> Result<Estimator> {
    if opts.piecewise || ctx.cfg.estimate.piecewise {
        Ok(Estimator::Piecewise(partition(ctx)?))
    } else {
        let h = hierarchy(ctx, ctx.cfg.greedy.n_max)?;
        Ok(Estimator::OneSpace(poor_mans(ctx, &h)?))
    }
}

fn estimate(ctx: &mut Ctx, opts: &Options, with_params: bool) -> Result<Value> {
    let est = estimator(ctx, opts)?;
    let set = observations(ctx, opts)?;
    let d = ctx.model.d_y();
    let kappa = ctx.model.kappa();
    let mut states = DMatrix::zeros(ctx.model.dim(), set.observations.len());
    let mut rows = Vec::new();
    let mut param_rows = Vec::new();
    let (mut max_cert, mut max_err, mut violations) = (0.0f64, None::<f64>, 0usize);
    for (k, obs) in set.observations.iter().enumerate() {
        let e = est.estimate(ctx, obs, set.noise_w[k])?;
        states.set_column(k, &e.state);
        max_cert = max_cert.max(e.certificate);
        let truth = set.truth.as_ref().map(|t| ctx.model.solve(&t[k])).transpose()?;
        let err = truth.as_ref().map(|u| ctx.model.space().norm(&(u - &e.state)));
        if let Some(err) = err {
            max_err = Some(max_err.unwrap_or(0.0).max(err));
            violations += usize::from(err > e.certificate);
        }
        rows.push(vec![
            k.to_string(),
            est.name().to_string(),
            e.cell.map(|c| c.to_string()).unwrap_or_default(),
            num(set.noise_w[k]),
            num(e.certificate),
            opt_num(err),
        ]);
        if with_params {
            let p = estimate_parameter(&ctx.model, &e.state, e.certificate, &ctx.cfg.estimate.projection)?;
            let mut row = vec![k.to_string()];
            row.extend(p.y_bar.iter().map(|v| num(*v)));
            row.extend([p.projection.s_value, p.projection.residual_at_opt, p.projection.kkt_residual, p.chain_bound].map(num));
            let state_err = set.truth.as_ref().map(|t| pbdw::inverse::state_error(&ctx.model, &t[k], &p.y_bar)).transpose()?;
            row.push(opt_num(state_err));
            param_rows.push(row);
        }
    }
    let header = ["observation_id", "method", "cell", "noise_w", "certificate", "error"].map(String::from).to_vec();
    ctx.artifacts.add_csv("estimates.csv", &header, &rows)?;
    ctx.artifacts.add_bytes("states.csv", matrix_csv(&states)?);
    let mut summary = json!({
        "method": est.name(),
        "observations": set.observations.len(),
        "synthetic": set.truth.is_some(),
        "max_certificate": max_cert,
        "max_error": max_err,
        "certificate_violations": set.truth.as_ref().map(|_| violations),
    });
    if with_params {
        let mut header = vec!["observation_id".to_string()];
        header.extend(param_header("y_bar", d));
        header.extend(["s_value", "residual", "kkt_residual", "chain_bound", "state_error"].map(String::from));
        ctx.artifacts.add_csv("params.csv", &header, &param_rows)?;
        summary["kappa"] = json!(kappa);
    }
    Ok(summary)
}

fn bench_oracle(ctx: &mut Ctx) -> Result<Value> {
    let h = hierarchy(ctx, ctx.cfg.greedy.n_max)?;
    let pm = poor_mans(ctx, &h)?;
    let net = cache::tensor_net(&ctx.model, ctx.cfg.oracle.net_per_dim)?;
    let entries = [BenchmarkEntry { name: "one-space(poor-mans)".into(), map: &pm.map, certificate: Some(pm.map.certify()) }];
    let report = benchmark(&ctx.model, &ctx.system, &net, &ctx.cfg.oracle.eps, ctx.cfg.oracle.n_slices, &entries)?;
    let delta_rows: Vec<Vec<String>> = report
        .delta
        .iter()
        .map(|d| vec![num(d.eps), num(d.delta_lb), num(d.delta_relaxed), num(d.slice_tol), d.pairs_evaluated.to_string()])
        .collect();
    let header = ["eps", "delta_lb", "delta_relaxed", "slice_tol", "pairs"].map(String::from).to_vec();
    ctx.artifacts.add_csv("delta.csv", &header, &delta_rows)?;
    let wc_rows: Vec<Vec<String>> =
        report.wc_errors.iter().map(|w| vec![w.name.clone(), opt_num(w.certificate), num(w.wc_lb)]).collect();
    ctx.artifacts.add_csv("wc.csv", &["method".into(), "certificate".into(), "wc_lb".into()], &wc_rows)?;
    ctx.artifacts.add_json("bench_report.json", &report)?;
    Ok(json!({"net_size": report.net_size, "slice_tol": report.slice_tol, "wc_errors": report.wc_errors}))
}

fn compare_all(ctx: &mut Ctx) -> Result<Value> {
    let fit = fit_affine_map(ctx)?;
    let h = hierarchy(ctx, ctx.cfg.greedy.n_max)?;
    let pm = poor_mans(ctx, &h)?;
    let part = partition(ctx)?;
    let net = cache::tensor_net(&ctx.model, ctx.cfg.oracle.net_per_dim)?;
    let pw_map = PiecewiseMap { model: &ctx.model, partition: &part };
    let rows_in: [(String, &dyn pbdw::oracle::RecoveryMap, f64); 3] = [
        ("one-space(poor-mans)".into(), &pm.map, pm.map.certify()),
        ("optimal-affine".into(), &fit.map, fit.certificate),
        (format!("piecewise({})", num(part.target_eps)), &pw_map, part.worst_certificate),
    ];
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for (name, map, cert) in rows_in {
        let wc = wc_error_bruteforce(&ctx.model, &ctx.system, &net, map)?.wc_lb;
        rows.push(vec![name.clone(), num(cert), num(wc)]);
        table.push(json!({"method": name, "certificate": cert, "wc_lb": wc}));
    }
    ctx.artifacts.add_csv("compare.csv", &["method".into(), "certificate".into(), "wc_lb".into()], &rows)?;
    Ok(json!({
        "oracle_net_size": net.len(),
        "rows": table,
        "piecewise_cells": part.len(),
        "poor_mans_n_star": pm.n_star,
        "affine_certified": fit.map.certified,
    }))
}

pub fn run(ctx: &mut Ctx, task: Task, opts: &Options) -> Result<Value> {
    match task {
        Task::GreedyDecay => greedy_decay(ctx),
        Task::FitAffine => fit_affine(ctx, opts),
        Task::BuildPw => build_pw(ctx),
        Task::EstimateState => estimate(ctx, opts, false),
        Task::EstimateParam => estimate(ctx, opts, true),
        Task::BenchOracle => bench_oracle(ctx),
        Task::CompareAll => compare_all(ctx),
    }
}

#[derive(Debug, Serialize)]
pub struct InvertRecord {
    pub observation_id: Option<usize>,
    pub y_bar: Vec<f64>,
    pub s_value: f64,
    pub chain_bound: Option<f64>,
    pub kkt_residual: f64,
    pub converged: bool,
}

/// Metric projection of a stored state.
pub fn invert_state(ctx: &Ctx, path: &PathBuf) -> Result<Vec<InvertRecord>> {
    let file = std::fs::File::open(path).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
    let u = io::read_state(file, ctx.model.dim())?;
    let p = metric_project(&ctx.model, &u, &ctx.cfg.estimate.projection)?;
    Ok(vec![InvertRecord {
        observation_id: None,
        y_bar: p.y_bar,
        s_value: p.s_value,
        chain_bound: None,
        kkt_residual: p.kkt_residual,
        converged: p.converged,
    }])
}

/// Parameter estimates from observations through a persisted affine map.
pub fn invert_observations(ctx: &Ctx, obs_path: &PathBuf, map_path: &PathBuf) -> Result<Vec<InvertRecord>> {
    let bytes = std::fs::read(map_path).map_err(|e| CliError(format!("{}: {e}", map_path.display())))?;
    let fitted: FittedMap = serde_json::from_slice(&bytes)?;
    if fitted.model != ctx.cfg.model || fitted.sensors != ctx.sensors {
        return Err(CliError("the fitted map was built for a different model or sensor set".into()));
    }
    let file = std::fs::File::open(obs_path).map_err(|e| CliError(format!("{}: {e}", obs_path.display())))?;
    let observations = io::ingest_observations(file, &ctx.system, 0.0)?;
    observations
        .iter()
        .enumerate()
        .map(|(k, obs)| {
            let state = fitted.map.apply(&ctx.system, obs)?;
            let p = estimate_parameter(&ctx.model, &state, fitted.certificate, &ctx.cfg.estimate.projection)?;
            Ok(InvertRecord {
                observation_id: Some(k),
                y_bar: p.y_bar,
                s_value: p.projection.s_value,
                chain_bound: Some(p.chain_bound),
                kkt_residual: p.projection.kkt_residual,
                converged: p.projection.converged,
            })
        })
        .collect()
}
