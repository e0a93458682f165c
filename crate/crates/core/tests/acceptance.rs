//! Acceptance checks. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line each and exits nonzero if a hard criterion fails. The 2D
//! comparison is soft: it is reported but never fails the run.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nlmcmc::ips::UniformBox;
use nlmcmc::metrics::{mmd2_unbiased, KernelSpec, MmdReference};
use nlmcmc::oracle::*;
use nlmcmc::stats::{batch_means_se, mean, median, variance};
use nlmcmc::targets::{make_auxiliary_gaussian, Gaussian, MixtureOfGaussians};
use nlmcmc::*;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn invariance() -> Outcome {
    let t = Instant::now();
    let mut r = RngStream::new(101, 0);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for s in 3..=8 {
        for _ in 0..5 {
            let inst = random_instance(s, &mut r);
            let eps = r.random_range(0.05..0.95);
            let res = invariance_residuals(&inst.k, &inst.pi, &inst.eta_star, &inst.eta_star, eps).unwrap();
            // residuals are in the sum-of-absolute-differences norm
            worst = worst.max(res.bg).max(res.ar);
            count += 1;
        }
    }
    let el = t.elapsed();
    outcome(
        worst <= 1e-12 && el < Duration::from_secs(5),
        format!("{count} instances, worst L1 residual {worst:.2e}, {el:.2?}"),
    )
}

fn long_time() -> Outcome {
    let t = Instant::now();
    let inst = bundled_four_state();
    let eps = 0.5;
    let jump = JumpConfig::new(Interaction::Bg, eps);
    let at_star = longtime_report(
        &inst.k,
        &inst.q,
        &inst.g,
        &jump,
        &FiniteMeasure::dirac(4, 0),
        &FiniteMeasure::new(inst.eta_star.clone()).unwrap(),
        201,
        &[0.0; 4],
        0.0,
        10.0,
    )
    .unwrap();
    let rate = (1.0 - eps) * at_star.gamma_hat;
    let step_ok = (0..=200).all(|n| at_star.tv[n + 1] <= rate * at_star.tv[n] + 1e-12);

    let off = longtime_report(
        &inst.k,
        &inst.q,
        &inst.g,
        &jump,
        &FiniteMeasure::dirac(4, 0),
        &FiniteMeasure::dirac(4, 3),
        200,
        &[0.0; 4],
        0.0,
        10.0,
    )
    .unwrap();
    let bound = off.rho_hat.max(off.delta_hat).ln() + 0.05;
    let slope = off.tail_slope;
    let slope_ok = slope.is_some_and(|s| s <= bound);
    let el = t.elapsed();
    outcome(
        step_ok && slope_ok && el < Duration::from_secs(10),
        format!(
            "per-step contraction {} (rate {rate:.4}); tail slope {:.4} <= {bound:.4}; {el:.2?}",
            if step_ok { "holds" } else { "broken" },
            slope.unwrap_or(f64::NAN)
        ),
    )
}

fn propagation_of_chaos() -> Outcome {
    let t = Instant::now();
    let inst = bundled_four_state();
    let p = FiniteProblem {
        k: inst.k,
        q: inst.q,
        g: inst.g,
        jump: JumpConfig::new(Interaction::Bg, 0.5),
        mu0: FiniteMeasure::dirac(4, 0),
        eta0: FiniteMeasure::dirac(4, 3),
    };
    let cfg = PocConfig {
        min_reps: 100_000,
        max_reps: 2_000_000,
        batch: 50_000,
        rel_se_target: 0.2,
        seed: 2024,
        time_budget: None,
    };
    let rep = poc_experiment(&p, &[8, 16, 32, 64, 128], 10, &cfg).unwrap();
    let se_ok = rep.points.iter().all(|pt| pt.se <= pt.bias / 5.0 && pt.reps >= 100_000);
    let slope = rep.slope.unwrap_or(f64::NAN);
    let pts: Vec<String> = rep
        .points
        .iter()
        .map(|pt| format!("N={} {:.3e}+-{:.1e} ({} reps)", pt.n_particles, pt.bias, pt.se, pt.reps))
        .collect();
    outcome(
        se_ok && (-1.4..=-0.6).contains(&slope),
        format!("slope {slope:.3}; {}; {:.1?}", pts.join(", "), t.elapsed()),
    )
}

fn lemma_suite() -> Outcome {
    let t = Instant::now();
    let mut r = RngStream::new(303, 0);

    let mut psi_max: f64 = 0.0;
    for _ in 0..100 {
        let s = r.random_range(2..=8);
        let g: Vec<f64> = (0..s).map(|_| r.random_range(0.01..5.0)).collect();
        let v: Vec<f64> = (0..s).map(|_| r.random_range(0.0..10.0)).collect();
        let beta = r.random_range(0.0..2.0);
        let pairs: Vec<_> = (0..100)
            .map(|_| (random_measure(s, &mut r).into_inner(), random_measure(s, &mut r).into_inner()))
            .collect();
        psi_max = psi_max.max(verify_psi_reg(&g, &v, beta, &pairs).unwrap().max_ratio);
    }

    let mut lb_worst = f64::INFINITY;
    for i in 0..12 {
        let s = 3 + i % 6;
        let inst = random_instance(s, &mut r);
        let u: Vec<f64> = (0..s).map(|_| r.random_range(1.0..6.0)).collect();
        let xi = r.random_range(0.2..0.9);
        let b = check_drift(
            &inst.q,
            &DriftSpec {
                v: u.clone(),
                a: xi,
                b: f64::INFINITY,
            },
        )
        .b_min;
        let eta0 = random_measure(s, &mut r);
        let rep = verify_unif_lb(&inst.q, &inst.g, &u, xi, b.max(1e-9), &eta0, 500).unwrap();
        lb_worst = lb_worst.min(rep.worst_slack);
    }

    let mut wb_fail = 0;
    for _ in 0..10_000 {
        let s = r.random_range(2..=8);
        let p = random_kernel(s, &mut r);
        let q = random_kernel(s, &mut r);
        let v: Vec<f64> = (0..s).map(|_| r.random_range(1.0..20.0)).collect();
        let a = r.random_range(0.05..0.95);
        let mu = random_measure(s, &mut r);
        let nu = random_measure(s, &mut r);
        let c = weighted_bounds(&p, &q, &v, a, &mu, &nu);
        let ok = |(lhs, rhs): (f64, f64)| lhs <= rhs * (1.0 + 1e-12) + 1e-15;
        wb_fail += (!ok(c.contraction) || !ok(c.perturbation)) as usize;
    }
    let el = t.elapsed();
    outcome(
        psi_max <= 1.0 + 1e-12 && lb_worst >= -1e-12 && wb_fail == 0 && el < Duration::from_secs(60),
        format!(
            "psi_reg max ratio {psi_max:.6} over 1e4 pairs; unif_lb worst slack {lb_worst:.3e} on 12 instances; \
             weighted bounds failures {wb_fail}/10000; {el:.2?}"
        ),
    )
}

fn chain(kind: SamplerKind, step: f64, tau: f64, n: usize, seed: u64) -> Vec<f64> {
    let t: Arc<dyn LogTarget> = Arc::new(Gaussian::new(vec![0.0], 1.0).unwrap());
    let k = LangevinSampler::new(t, LangevinConfig::new(kind, step).with_tau(tau)).unwrap();
    let mut rng = RngStream::new(seed, 0);
    let mut x = State(vec![0.0]);
    let mut aux = k.init_aux(&x);
    (0..n)
        .map(|i| {
            x = k.step(i, &x, &mut aux, &mut rng).unwrap().state;
            x[0]
        })
        .collect()
}

/// Second moment with its batch-means standard error.
fn second_moment(xs: &[f64]) -> (f64, f64) {
    let sq: Vec<f64> = xs.iter().map(|v| v * v).collect();
    (mean(&sq), batch_means_se(&sq, 50).unwrap())
}

fn sampler_exactness() -> Outcome {
    let n = 500_000;
    let (mala, mala_se) = second_moment(&chain(SamplerKind::Mala, 0.5, 1.0, n, 1));
    let (rms, rms_se) = second_moment(&chain(SamplerKind::RmsMala, 0.5, 1.0, n, 2));
    let ula = variance(&chain(SamplerKind::Ula, 0.1, 1.0, n, 3));
    let ula_exact = 1.0 / (1.0 - 0.05);
    let ula_t = variance(&chain(SamplerKind::Ula, 0.1, 2.0, n, 4));
    let scale = ula_t / ula;
    let ok = (mala - 1.0).abs() <= 3.0 * mala_se
        && (rms - 1.0).abs() <= 3.0 * rms_se
        && (ula / ula_exact - 1.0).abs() <= 0.02
        && (scale / 2.0 - 1.0).abs() <= 0.05;
    outcome(
        ok,
        format!(
            "MALA var {mala:.4}+-{mala_se:.4}; RMS-MALA var {rms:.4}+-{rms_se:.4}; \
             ULA var {ula:.4} vs {ula_exact:.4}; tau=2 scale {scale:.4}"
        ),
    )
}

/// Population MMD^2 between N(0, 1) and N(1, 1) by Simpson quadrature over
/// the difference D = X - Y ~ N(m, 2).
fn mmd2_quadrature(k: &KernelSpec) -> f64 {
    let e = |m: f64| {
        let (lo, hi, n) = (m - 20.0, m + 20.0, 20_000);
        let h = (hi - lo) / n as f64;
        let f = |d: f64| k.eval(&[d], &[0.0]) * (-(d - m).powi(2) / 4.0).exp() / (4.0 * std::f64::consts::PI).sqrt();
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    2.0 * e(0.0) - 2.0 * e(1.0)
}

fn mmd_estimator() -> Outcome {
    let k = KernelSpec::default();
    let g0 = Gaussian::new(vec![0.0], 1.0).unwrap();
    let g1 = Gaussian::new(vec![1.0], 1.0).unwrap();
    let reps = 200;
    let mut null = Vec::with_capacity(reps);
    let mut alt = Vec::with_capacity(reps);
    for r in 0..reps as u64 {
        let mut rng = RngStream::new(505, r);
        let a = g0.exact_sample(300, &mut rng).unwrap();
        let b = g0.exact_sample(300, &mut rng).unwrap();
        let c = g1.exact_sample(300, &mut rng).unwrap();
        null.push(mmd2_unbiased(&a, &b, &k).unwrap());
        alt.push(mmd2_unbiased(&a, &c, &k).unwrap());
    }
    let se = |v: &[f64]| (variance(v) / v.len() as f64).sqrt();
    let exact = mmd2_quadrature(&k);
    let (m0, s0) = (mean(&null), se(&null));
    let (m1, s1) = (mean(&alt), se(&alt));
    outcome(
        m0.abs() <= 3.0 * s0 && (m1 - exact).abs() <= 3.0 * s1,
        format!("same law {m0:.2e}+-{s0:.1e}; shifted {m1:.5}+-{s1:.1e} vs quadrature {exact:.5}"),
    )
}

fn two_d_comparison() -> Outcome {
    let t = Instant::now();
    let pi: Arc<dyn LogTarget> = Arc::new(MixtureOfGaussians::grid(&[-16.0, -8.0, 0.0, 8.0, 16.0], 0.5).unwrap());
    let es: Arc<dyn LogTarget> = Arc::new(make_auxiliary_gaussian(20.0, 2).unwrap());
    let truth = pi.exact_sample(2000, &mut RngStream::new(99, 0)).unwrap();
    let reference = MmdReference::new(&truth, KernelSpec::default()).unwrap();
    let init = UniformBox {
        low: -7.5,
        high: 7.5,
        dim: 2,
    };
    let n_sim = 2000;
    let mut medians = Vec::new();
    for jump in [JumpConfig::new(Interaction::Bg, 0.1), JumpConfig::none()] {
        let finals: Vec<f64> = (0..5)
            .map(|seed| {
                let model = IpsModel {
                    primary: LangevinSampler::new(pi.clone(), LangevinConfig::new(SamplerKind::Mala, 0.001)).unwrap(),
                    auxiliary: LangevinSampler::new(es.clone(), LangevinConfig::new(SamplerKind::Mala, 0.001)).unwrap(),
                    potential: PotentialPair::new(pi.clone(), es.clone()).unwrap(),
                    init_primary: init.clone(),
                    init_auxiliary: init.clone(),
                };
                let cfg = IpsConfig::new(500, n_sim, jump, seed).with_record_every(n_sim);
                let trace = simulate_ips(&cfg, &model, |c| Metrics {
                    mmd2: Some(reference.mmd2(c.primary).unwrap()),
                    tv: None,
                })
                .unwrap();
                trace.rows.last().unwrap().mmd2.unwrap()
            })
            .collect();
        medians.push(median(&finals));
    }
    outcome(
        medians[0] <= medians[1],
        format!(
            "median final MMD^2 BG {:.4} vs MALA {:.4}; {:.1?}",
            medians[0],
            medians[1],
            t.elapsed()
        ),
    )
}

fn monte_carlo_corollary() -> Outcome {
    let inst = bundled_four_state();
    let p = FiniteProblem {
        k: inst.k,
        q: inst.q,
        g: inst.g,
        jump: JumpConfig::new(Interaction::Bg, 0.5),
        mu0: FiniteMeasure::dirac(4, 0),
        eta0: FiniteMeasure::dirac(4, 3),
    };
    let pts = mc_corollary_experiment(&p, &[0.0, 1.0, 2.0, 3.0], &[100, 1000, 10_000], 10, 30, 606).unwrap();
    let errs: Vec<f64> = pts.iter().map(|p| p.mean_abs_error).collect();
    outcome(
        errs.windows(2).all(|w| w[1] < w[0]),
        format!("mean |error| over 30 seeds at N=1e2,1e3,1e4: {}", errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(" ")),
    )
}

type Check = (&'static str, bool, fn() -> Outcome);

fn main() -> ExitCode {
    let checks: [Check; 8] = [
        ("invariance", false, invariance),
        ("long-time rate", false, long_time),
        ("propagation of chaos", false, propagation_of_chaos),
        ("lemma suite", false, lemma_suite),
        ("sampler exactness and bias", false, sampler_exactness),
        ("mmd estimator", false, mmd_estimator),
        ("2d qualitative (soft)", true, two_d_comparison),
        ("monte carlo corollary", false, monte_carlo_corollary),
    ];
    let mut hard_failures = 0;
    for (name, soft, run) in checks {
        let o = run();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass && !soft {
            hard_failures += 1;
        }
    }
    if hard_failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{hard_failures} hard criteria failed");
        ExitCode::FAILURE
    }
}
