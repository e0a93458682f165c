//! Experiment drivers behind the subcommands.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use nlmcmc::ips::{FromTarget, UniformBox};
use nlmcmc::metrics::{gaussian_mmd2_1d, mmd2_unbiased, KernelSpec, MmdReference};
use nlmcmc::oracle::*;
use nlmcmc::stats::{iqr, mean, median, quantile, variance};
use nlmcmc::targets::{make_auxiliary_gaussian, Gaussian, MixtureOfGaussians, TwoRings};
use nlmcmc::*;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::artifacts::{write_csv, write_json, write_manifest, write_samples, write_trace, TraceLine};
use crate::config::{InitSection, RunConfig, SamplerSection, TargetSection};

/// How an experiment ended, mapped to the process exit code by the caller.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    Diverged,
    CheckFailed,
}

pub fn run(cfg: &RunConfig, out: Option<&Path>) -> Result<Status> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let need = || out.context("no output directory: pass --out or set `out` in the config");
    match cfg.experiment.as_str() {
        "run2d" => run2d(cfg, need()?),
        "compare-dm" => compare_dm(cfg, need()?),
        "oracle-suite" => oracle_suite(cfg, need()?),
        "poc" => poc(cfg, need()?),
        "mmd-selftest" => mmd_selftest(cfg, out),
        other => anyhow::bail!("unknown experiment `{other}`"),
    }
}

pub fn build_target(t: &TargetSection) -> Result<Arc<dyn LogTarget>> {
    let target: Arc<dyn LogTarget> = match t.name.as_str() {
        "gaussian" => {
            let mean = t.mean.clone().unwrap_or_else(|| vec![0.0; t.dim()]);
            Arc::new(Gaussian::new(mean, t.sigma.unwrap_or(1.0))?.with_label("gaussian"))
        }
        "circ_mog" => Arc::new(
            MixtureOfGaussians::circular(t.n_components.unwrap_or(8), t.radius.unwrap_or(4.0), t.sigma.unwrap_or(0.2))?
                .with_label("circ_mog"),
        ),
        "grid_mog" => {
            let coords = t.coords.clone().unwrap_or_else(|| vec![-16.0, -8.0, 0.0, 8.0, 16.0]);
            Arc::new(MixtureOfGaussians::grid(&coords, t.sigma.unwrap_or(0.5))?.with_label("grid_mog"))
        }
        "two_rings" => Arc::new(TwoRings::new(
            t.radii.unwrap_or([2.0, 4.0]),
            t.width.unwrap_or(0.2),
            t.weights.unwrap_or([0.5, 0.5]),
        )?),
        other => anyhow::bail!("unknown target `{other}`"),
    };
    Ok(target)
}

fn build_sampler(target: Arc<dyn LogTarget>, s: &SamplerSection) -> Result<LangevinSampler> {
    let kind = s.kind().context("unknown sampler kind")?;
    let cfg = LangevinConfig::new(kind, s.step).with_tau(s.tau).with_rms(s.rms_beta, s.rms_eps);
    Ok(LangevinSampler::new(target, cfg)?)
}

/// Initial distribution chosen in the config.
#[derive(Clone)]
pub enum Init {
    Box(UniformBox),
    Target(FromTarget),
}

impl Initializer<State> for Init {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        match self {
            Init::Box(b) => b.draw(rng),
            Init::Target(t) => t.draw(rng),
        }
    }
}

fn build_init(s: &InitSection, dim: usize, eta_star: &Arc<dyn LogTarget>) -> Init {
    match s.kind.as_str() {
        "auxiliary_target" => Init::Target(FromTarget(eta_star.clone())),
        _ => Init::Box(UniformBox {
            low: s.low,
            high: s.high,
            dim,
        }),
    }
}

type Model = IpsModel<LangevinSampler, LangevinSampler, PotentialPair, Init, Init>;

struct Setup {
    model: Model,
    reference: Option<MmdReference>,
    dim: usize,
}

fn setup(cfg: &RunConfig) -> Result<Setup> {
    let dim = cfg.target.dim();
    let pi = build_target(&cfg.target)?;
    let es: Arc<dyn LogTarget> = Arc::new(make_auxiliary_gaussian(cfg.auxiliary_target.sigma, dim)?);
    let model = IpsModel {
        primary: build_sampler(pi.clone(), &cfg.primary_sampler)?,
        auxiliary: build_sampler(es.clone(), &cfg.auxiliary_sampler)?,
        potential: PotentialPair::new(pi.clone(), es.clone())?,
        init_primary: build_init(&cfg.init_primary, dim, &es),
        init_auxiliary: build_init(&cfg.init_auxiliary, dim, &es),
    };
    let m = &cfg.metrics;
    let reference = if m.reference_samples >= 2 {
        let truth = pi.exact_sample(m.reference_samples, &mut RngStream::new(m.reference_seed, 0))?;
        Some(MmdReference::new(&truth, KernelSpec::new(m.kernel_scales.clone())?)?)
    } else {
        None
    };
    Ok(Setup { model, reference, dim })
}

fn jump_of(cfg: &RunConfig) -> JumpConfig {
    match cfg.jump.kind() {
        Some(Interaction::None) | None => JumpConfig::none(),
        Some(k) => JumpConfig::new(k, cfg.jump.epsilon),
    }
}

fn ips_config(cfg: &RunConfig, seed: u64) -> IpsConfig {
    let policy = if cfg.divergence == "reinitialize" {
        DivergencePolicy::Reinitialize
    } else {
        DivergencePolicy::Abort
    };
    IpsConfig::new(cfg.n_particles, cfg.n_sim, jump_of(cfg), seed)
        .with_record_every(cfg.record_every)
        .with_divergence(policy)
}

/// Legend label: the interaction, or the linear sampler when there is none.
pub fn label(cfg: &RunConfig) -> String {
    match cfg.jump.kind() {
        Some(Interaction::None) => cfg.primary_sampler.kind.clone(),
        _ => cfg.jump.kind.clone(),
    }
}

#[derive(Serialize)]
struct SeedSummary {
    seed: u64,
    status: RunStatus,
    final_mmd2: Option<f64>,
    final_jump_rate: Option<f64>,
    diverged_count: usize,
}

#[derive(Serialize)]
struct StepSummary {
    step: usize,
    median: f64,
    q25: f64,
    q75: f64,
    mean: f64,
    std: f64,
}

fn summarize(runs: &[(u64, RunTrace<State>)]) -> serde_json::Value {
    let seeds: Vec<SeedSummary> = runs
        .iter()
        .map(|(seed, t)| {
            let last = t.rows.last();
            SeedSummary {
                seed: *seed,
                status: t.status.clone(),
                final_mmd2: last.and_then(|r| r.mmd2),
                final_jump_rate: last.map(|r| r.jump_rate),
                diverged_count: last.map_or(0, |r| r.diverged_count),
            }
        })
        .collect();
    let finals: Vec<f64> = seeds.iter().filter_map(|s| s.final_mmd2).collect();
    // per-step bands over seeds that reached the step
    let steps: Vec<usize> = runs
        .iter()
        .max_by_key(|(_, t)| t.rows.len())
        .map(|(_, t)| t.rows.iter().map(|r| r.step).collect())
        .unwrap_or_default();
    let per_step: Vec<StepSummary> = steps
        .iter()
        .filter_map(|&step| {
            let v: Vec<f64> = runs
                .iter()
                .filter_map(|(_, t)| t.rows.iter().find(|r| r.step == step).and_then(|r| r.mmd2))
                .collect();
            (!v.is_empty()).then(|| StepSummary {
                step,
                median: median(&v),
                q25: quantile(&v, 0.25),
                q75: quantile(&v, 0.75),
                mean: mean(&v),
                std: if v.len() > 1 { variance(&v).sqrt() } else { 0.0 },
            })
        })
        .collect();
    let aggregate = if finals.is_empty() {
        json!(null)
    } else {
        json!({
            "median_final_mmd2": median(&finals),
            "iqr_final_mmd2": iqr(&finals),
            "mean_final_mmd2": mean(&finals),
        })
    };
    json!({ "seeds": seeds, "aggregate": aggregate, "per_step": per_step })
}

fn write_run_dir(dir: &Path, dim: usize, runs: &[(u64, RunTrace<State>)], aux_name: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let lines: Vec<TraceLine> = runs
        .iter()
        .flat_map(|(seed, t)| t.rows.iter().map(move |r| TraceLine::from_row(*seed, r)))
        .collect();
    write_trace(&dir.join("trace.csv"), &lines)?;
    let mut sets: Vec<(u64, &str, &[State])> = Vec::new();
    for (seed, t) in runs {
        sets.push((*seed, "primary", &t.final_primary));
        sets.push((*seed, aux_name, &t.final_auxiliary));
    }
    write_samples(&dir.join("final_samples.csv"), dim, &sets)?;
    write_json(&dir.join("summary.json"), &summarize(runs))
}

fn status_of(runs: &[(u64, RunTrace<State>)]) -> Status {
    if runs.iter().any(|(_, t)| t.status != RunStatus::Completed) {
        Status::Diverged
    } else {
        Status::Ok
    }
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Ok => "completed",
        Status::Diverged => "diverged",
        Status::CheckFailed => "check_failed",
    }
}

fn over_seeds<T: Send>(cfg: &RunConfig, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<(u64, T)>> {
    let one = |&seed: &u64| f(seed).map(|t| (seed, t));
    if cfg.parallel_seeds {
        cfg.seeds.par_iter().map(one).collect()
    } else {
        cfg.seeds.iter().map(one).collect()
    }
}

fn mmd_hook(reference: &Option<MmdReference>) -> impl FnMut(&RecordContext<'_, State>) -> Metrics + '_ {
    move |c| Metrics {
        mmd2: reference.as_ref().and_then(|r| r.mmd2(c.primary).ok()),
        tv: None,
    }
}

fn run2d(cfg: &RunConfig, out: &Path) -> Result<Status> {
    let s = setup(cfg)?;
    let runs = over_seeds(cfg, |seed| Ok(simulate_ips(&ips_config(cfg, seed), &s.model, mmd_hook(&s.reference))?))?;
    write_run_dir(out, s.dim, &runs, "auxiliary")?;
    let status = status_of(&runs);
    write_manifest(out, cfg, &label(cfg), status_name(status), json!({}))?;
    Ok(status)
}

/// Fixed-N auxiliary ensemble against one growing auxiliary history, with
/// the same primary particles, steps and seeds.
fn compare_dm(cfg: &RunConfig, out: &Path) -> Result<Status> {
    let s = setup(cfg)?;
    let fixed = over_seeds(cfg, |seed| Ok(simulate_ips(&ips_config(cfg, seed), &s.model, mmd_hook(&s.reference))?))?;
    let growing = over_seeds(cfg, |seed| {
        Ok(simulate_growing_history(&ips_config(cfg, seed), &s.model, mmd_hook(&s.reference))?)
    })?;
    write_run_dir(&out.join("fixed_n"), s.dim, &fixed, "auxiliary")?;
    write_run_dir(&out.join("growing_history"), s.dim, &growing, "auxiliary_history")?;
    let finals = |runs: &[(u64, RunTrace<State>)]| -> Vec<Option<f64>> {
        runs.iter().map(|(_, t)| t.rows.last().and_then(|r| r.mmd2)).collect()
    };
    let paired: Vec<_> = cfg
        .seeds
        .iter()
        .zip(finals(&fixed).into_iter().zip(finals(&growing)))
        .map(|(seed, (a, b))| json!({ "seed": seed, "fixed_n": a, "growing_history": b }))
        .collect();
    let auxiliary_gradient_calls = json!({
        "fixed_n": cfg.n_particles * cfg.n_sim,
        "growing_history": cfg.n_sim,
    });
    write_json(
        &out.join("summary.json"),
        &json!({ "paired_final_mmd2": paired, "auxiliary_gradient_calls": auxiliary_gradient_calls }),
    )?;
    let status = if status_of(&fixed) == Status::Ok && status_of(&growing) == Status::Ok {
        Status::Ok
    } else {
        Status::Diverged
    };
    write_manifest(
        out,
        cfg,
        &label(cfg),
        status_name(status),
        json!({ "variants": ["fixed_n", "growing_history"] }),
    )?;
    Ok(status)
}

fn oracle_instance(cfg: &RunConfig) -> FiniteInstance {
    let o = &cfg.oracle;
    if o.instance == "random" {
        random_instance(o.size, &mut RngStream::new(o.instance_seed, 0))
    } else {
        bundled_four_state()
    }
}

#[derive(Serialize)]
struct OracleRun {
    kind: Interaction,
    start: &'static str,
    /// max_n ||mu_{n+1} - pi|| / ||mu_n - pi|| against (1 - eps) gamma, BG only.
    step_ratio_ok: Option<bool>,
    slope_bound: Option<f64>,
    slope_ok: Option<bool>,
    report: TheoryReport,
}

fn oracle_suite(cfg: &RunConfig, out: &Path) -> Result<Status> {
    let o = &cfg.oracle;
    let inst = oracle_instance(cfg);
    let s = inst.size();
    let v = o.v.clone().unwrap_or_else(|| (0..s).map(|i| i as f64).collect());
    let invariance = verify_invariance(&inst.k, &inst.q, o.epsilon)?;
    let log_g: Vec<f64> = inst.g.iter().map(|g| g.ln()).collect();
    let starts = [
        ("eta_star", FiniteMeasure::new(inst.eta_star.clone())?),
        ("dirac", FiniteMeasure::dirac(s, o.eta0)),
    ];
    let mut runs = Vec::new();
    let mut trace = Vec::new();
    let mut tv_rows = Vec::new();
    for kind in [Interaction::Bg, Interaction::Ar] {
        let jump = JumpConfig::new(kind, o.epsilon);
        for (start, eta0) in &starts {
            let mu0 = FiniteMeasure::dirac(s, o.mu0);
            let report = longtime_report(&inst.k, &inst.q, &inst.g, &jump, &mu0, eta0, o.n_max, &v, o.beta, o.c_multiplier)?;
            let bg = kind == Interaction::Bg;
            let step_ratio_ok = (bg && *start == "eta_star").then(|| {
                let rate = (1.0 - o.epsilon) * report.gamma_hat;
                report.tv.windows(2).all(|w| w[1] <= rate * w[0] + 1e-12)
            });
            let slope_bound = (*start == "dirac").then(|| report.rho_hat.max(report.delta_hat).ln() + 0.05);
            let slope_ok = match (bg, slope_bound, report.tail_slope) {
                (true, Some(b), Some(sl)) => Some(sl <= b),
                _ => None,
            };
            let flow = mean_field_flow(&inst.k, &inst.q, &inst.g, &jump, &mu0, eta0, o.n_max)?;
            for n in 0..=o.n_max {
                tv_rows.push(vec![
                    format!("{kind:?}").to_lowercase(),
                    start.to_string(),
                    n.to_string(),
                    report.tv[n].to_string(),
                    report.tv_beta[n].to_string(),
                    report.tv_eta[n].to_string(),
                ]);
                if bg && *start == "dirac" {
                    trace.push(TraceLine {
                        step: n,
                        seed: o.instance_seed,
                        tv_beta: Some(report.tv_beta[n]),
                        mean_log_g: Some(flow.eta[n].iter().zip(&log_g).map(|(p, l)| p * l).sum()),
                        ..TraceLine::default()
                    });
                }
            }
            runs.push(OracleRun {
                kind,
                start,
                step_ratio_ok,
                slope_bound,
                slope_ok,
                report,
            });
        }
    }
    let residual_ok = invariance.bg <= 1e-12 && invariance.ar <= 1e-12;
    let pass = residual_ok
        && runs.iter().all(|r| {
            r.step_ratio_ok != Some(false)
                && r.slope_ok != Some(false)
                && (r.kind != Interaction::Bg || r.report.envelope_violation.is_none())
        });
    write_json(
        &out.join("theory_report.json"),
        &json!({
            "instance": { "pi": inst.pi, "eta_star": inst.eta_star, "g": inst.g, "k": inst.k.rows(), "q": inst.q.rows() },
            "invariance_residuals": invariance,
            "runs": runs,
            "pass": pass,
        }),
    )?;
    write_csv(
        &out.join("tv_sequences.csv"),
        &["kind", "start", "n", "tv", "tv_beta", "tv_eta"],
        &tv_rows,
    )?;
    write_trace(&out.join("trace.csv"), &trace)?;
    let status = if pass { Status::Ok } else { Status::CheckFailed };
    write_manifest(out, cfg, "oracle", status_name(status), json!({}))?;
    println!(
        "invariance residuals bg {:.2e} ar {:.2e}; {}",
        invariance.bg,
        invariance.ar,
        if pass { "all checks pass" } else { "CHECK FAILED" }
    );
    Ok(status)
}

fn poc(cfg: &RunConfig, out: &Path) -> Result<Status> {
    let p = &cfg.poc;
    let inst = bundled_four_state();
    let kind = if p.kind == "ar" { Interaction::Ar } else { Interaction::Bg };
    let problem = FiniteProblem {
        k: inst.k,
        q: inst.q,
        g: inst.g,
        jump: JumpConfig::new(kind, p.epsilon),
        mu0: FiniteMeasure::dirac(4, 0),
        eta0: FiniteMeasure::dirac(4, 3),
    };
    let pc = PocConfig {
        min_reps: p.min_reps,
        max_reps: p.max_reps,
        batch: p.min_reps.clamp(1, 50_000),
        rel_se_target: p.rel_se_target,
        seed: cfg.seeds[0],
        time_budget: p.time_budget.map(Duration::from_secs_f64),
    };
    let rep = poc_experiment(&problem, &p.ns, p.n_step, &pc)?;
    let rows: Vec<Vec<String>> = rep
        .points
        .iter()
        .map(|pt| {
            vec![
                pt.n_particles.to_string(),
                pt.reps.to_string(),
                pt.bias.to_string(),
                pt.se.to_string(),
                pt.hist_bias.to_string(),
                pt.hist_se.to_string(),
                pt.partial.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("poc.csv"),
        &["n_particles", "reps", "bias", "se", "hist_bias", "hist_se", "partial"],
        &rows,
    )?;
    let slope_ok = rep.slope.is_some_and(|s| s >= p.slope_band[0] && s <= p.slope_band[1]);
    let se_ok = rep.points.iter().all(|pt| pt.se <= pt.bias * p.rel_se_target);
    let pass = slope_ok && se_ok;
    write_json(
        &out.join("summary.json"),
        &json!({ "report": rep, "slope_ok": slope_ok, "se_ok": se_ok, "pass": pass }),
    )?;
    for pt in &rep.points {
        println!("N={:<5} bias {:.4e} +- {:.1e} ({} reps)", pt.n_particles, pt.bias, pt.se, pt.reps);
    }
    println!("slope {:.3} in {:?}: {}", rep.slope.unwrap_or(f64::NAN), p.slope_band, if pass { "PASS" } else { "FAIL" });
    let status = if pass { Status::Ok } else { Status::CheckFailed };
    write_manifest(out, cfg, &p.kind, status_name(status), json!({}))?;
    Ok(status)
}

#[derive(Serialize)]
struct SelfCheck {
    name: &'static str,
    estimate: f64,
    se: f64,
    expected: f64,
    pass: bool,
}

fn mmd_selftest(cfg: &RunConfig, out: Option<&Path>) -> Result<Status> {
    let m = &cfg.mmd_selftest;
    let k = KernelSpec::new(cfg.metrics.kernel_scales.clone())?;
    let g0 = Gaussian::new(vec![0.0], 1.0)?;
    let g1 = Gaussian::new(vec![1.0], 1.0)?;
    let mut null = Vec::with_capacity(m.reps);
    let mut alt = Vec::with_capacity(m.reps);
    for r in 0..m.reps as u64 {
        let mut rng = RngStream::new(cfg.seeds[0], r);
        let a = g0.exact_sample(m.samples, &mut rng)?;
        let b = g0.exact_sample(m.samples, &mut rng)?;
        let c = g1.exact_sample(m.samples, &mut rng)?;
        null.push(mmd2_unbiased(&a, &b, &k)?);
        alt.push(mmd2_unbiased(&a, &c, &k)?);
    }
    let check = |name, v: &[f64], expected: f64| {
        let se = (variance(v) / v.len() as f64).sqrt();
        let estimate = mean(v);
        SelfCheck {
            name,
            estimate,
            se,
            expected,
            pass: (estimate - expected).abs() <= 3.0 * se,
        }
    };
    let checks = [
        check("unbiased, same law", &null, 0.0),
        check("closed form N(0,1) vs N(1,1)", &alt, gaussian_mmd2_1d(&k, 0.0, 1.0, 1.0, 1.0)),
    ];
    println!("{:<30} {:>12} {:>10} {:>12}  result", "check", "estimate", "se", "expected");
    for c in &checks {
        println!(
            "{:<30} {:>12.4e} {:>10.2e} {:>12.4e}  {}",
            c.name,
            c.estimate,
            c.se,
            c.expected,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    let pass = checks.iter().all(|c| c.pass);
    let status = if pass { Status::Ok } else { Status::CheckFailed };
    if let Some(dir) = out {
        write_json(&dir.join("summary.json"), &json!({ "checks": checks, "pass": pass }))?;
        write_manifest(dir, cfg, "mmd", status_name(status), json!({}))?;
    }
    Ok(status)
}
