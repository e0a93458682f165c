//! Exact checks of the inequalities used in the convergence analysis:
//! the a priori lower bound on eta_n(G), Lipschitz regularity of the
//! Boltzmann-Gibbs map, the weighted-TV bounds, uniform drift of K_eta and
//! the growth function R_G.

use serde::{Deserialize, Serialize};

use super::finite::{check_drift, kernel_norm, osc, weighted_tv, DriftSpec, FiniteKernel, FiniteMeasure};
use super::flow::{bg_transform, k_eta_kernel};
use crate::error::{Error, Result};
use crate::nonlinear::{Interaction, JumpConfig};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// theta(R) = min { G(x) : U(x) <= R }.
pub fn theta_lower_bound(g: &[f64], u: &[f64], r: f64) -> Result<f64> {
    g.iter()
        .zip(u)
        .filter(|(_, &uv)| uv <= r)
        .map(|(&gv, _)| gv)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
        .ok_or(Error::EmptyLevelSet { level: r })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnifLbReport {
    pub r_star: f64,
    pub theta_star: f64,
    /// min over n of eta_n(G) - bound(n); nonnegative when the bound holds.
    pub worst_slack: f64,
    pub worst_n: usize,
    /// The bound as n -> infinity.
    pub limit_bound: f64,
    /// eta_{n_max}(G), the exact value the limit bound is compared against.
    pub final_eta_g: f64,
}

/// Checks eta_n(G) >= theta(R*) (1 - (xi^n eta_0(U) + c / (1 - xi)) / R*) for
/// n = 0..=n_max along eta_n = eta_0 Q^n.
///
/// R* is fixed once, over the distinct values of U, to maximize the
/// n -> infinity form of the bound.
pub fn verify_unif_lb(
    q: &FiniteKernel,
    g: &[f64],
    u: &[f64],
    xi: f64,
    c: f64,
    eta0: &FiniteMeasure,
    n_max: usize,
) -> Result<UnifLbReport> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::InvalidParameter(format!("xi must lie in (0, 1), got {xi}")));
    }
    if u.iter().any(|v| *v < 1.0) {
        return Err(Error::InvalidParameter("U must be at least 1".into()));
    }
    let drift = check_drift(
        q,
        &DriftSpec {
            v: u.to_vec(),
            a: xi,
            b: c,
        },
    );
    if !drift.holds {
        return Err(Error::InvalidParameter(format!(
            "Q U <= xi U + c fails: need c >= {}",
            drift.b_min
        )));
    }
    let tail = c / (1.0 - xi);
    let mut levels: Vec<f64> = u.to_vec();
    levels.sort_by(|a, b| a.total_cmp(b));
    levels.dedup();
    let mut r_star = levels[0];
    let mut best = f64::NEG_INFINITY;
    for &r in &levels {
        let v = theta_lower_bound(g, u, r)? * (1.0 - tail / r);
        if v > best {
            best = v;
            r_star = r;
        }
    }
    let theta_star = theta_lower_bound(g, u, r_star)?;
    let eta0_u = dot(eta0, u);
    let mut eta = eta0.probs().to_vec();
    let mut worst_slack = f64::INFINITY;
    let mut worst_n = 0;
    let mut xi_n = 1.0;
    for n in 0..=n_max {
        if n > 0 {
            eta = q.left_mul(&eta);
            xi_n *= xi;
        }
        let bound = theta_star * (1.0 - (xi_n * eta0_u + tail) / r_star);
        let slack = dot(&eta, g) - bound;
        if slack < worst_slack {
            worst_slack = slack;
            worst_n = n;
        }
    }
    Ok(UnifLbReport {
        r_star,
        theta_star,
        worst_slack,
        worst_n,
        limit_bound: best,
        final_eta_g: dot(&eta, g),
    })
}

/// sup G / V_beta with V_beta = 1 + beta V.
pub fn g_norm_beta(g: &[f64], v: &[f64], beta: f64) -> f64 {
    g.iter()
        .zip(v)
        .map(|(gv, vv)| gv / (1.0 + beta * vv))
        .fold(0.0, f64::max)
}

/// The Lipschitz constant of Psi_G between eta and eta' in V_beta-weighted
/// total variation:
/// (|G|_beta + |G|_inf) / max(eta(G), eta'(G))
///   + min(eta(V), eta'(V)) beta |G|_beta |G|_inf / (eta(G) eta'(G)).
pub fn psi_reg_constant(g: &[f64], v: &[f64], beta: f64, eta: &[f64], eta2: &[f64]) -> f64 {
    let gb = g_norm_beta(g, v, beta);
    let gi = g.iter().cloned().fold(0.0, f64::max);
    let eg = dot(eta, g);
    let eg2 = dot(eta2, g);
    (gb + gi) / eg.max(eg2) + dot(eta, v).min(dot(eta2, v)) * beta * gb * gi / (eg * eg2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiRegReport {
    /// max over pairs of LHS / RHS; at most 1 when the Lipschitz bound holds.
    pub max_ratio: f64,
    pub worst_pair: usize,
}

pub fn verify_psi_reg(g: &[f64], v: &[f64], beta: f64, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<PsiRegReport> {
    let w: Vec<f64> = v.iter().map(|x| 1.0 + beta * x).collect();
    let mut max_ratio: f64 = 0.0;
    let mut worst_pair = 0;
    for (i, (a, b)) in pairs.iter().enumerate() {
        let lhs = weighted_tv(&bg_transform(g, a)?, &bg_transform(g, b)?, &w);
        let rhs = psi_reg_constant(g, v, beta, a, b) * weighted_tv(a, b, &w);
        let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
        if ratio > max_ratio {
            max_ratio = ratio;
            worst_pair = i;
        }
    }
    Ok(PsiRegReport {
        max_ratio,
        worst_pair,
    })
}

/// R_G(u) = 1 + (osc(G)^2 / m^2) (1 + (osc(G) / m) sqrt(u)) exp((osc(G)^2 / m^2) u)
/// where m is a lower bound on eta_n(G).
pub fn compute_r_g(g: &[f64], m: f64, u: f64) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::InvalidParameter(format!("m must be positive, got {m}")));
    }
    if !(u >= 0.0) {
        return Err(Error::InvalidParameter(format!("u must be nonnegative, got {u}")));
    }
    let o = osc(g) / m;
    Ok(1.0 + o * o * (1.0 + o * u.sqrt()) * (o * o * u).exp())
}

/// Both sides of the two weighted-TV bounds on one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedBoundsCheck {
    /// ||mu P - nu P||_V and (a + b) ||mu - nu||_V
    pub contraction: (f64, f64),
    /// ||mu P - mu Q||_V and mu(V) ||P - Q||_{ker,V}
    pub perturbation: (f64, f64),
}

/// Evaluates both weighted-TV bounds with b the smallest constant making
/// P V <= a V + b hold. V must be at least 1.
pub fn weighted_bounds(
    p: &FiniteKernel,
    q: &FiniteKernel,
    v: &[f64],
    a: f64,
    mu: &[f64],
    nu: &[f64],
) -> WeightedBoundsCheck {
    let b = check_drift(
        p,
        &DriftSpec {
            v: v.to_vec(),
            a,
            b: f64::INFINITY,
        },
    )
    .b_min;
    let mp = p.left_mul(mu);
    let np = p.left_mul(nu);
    let mq = q.left_mul(mu);
    WeightedBoundsCheck {
        contraction: (weighted_tv(&mp, &np, v), (a + b) * weighted_tv(mu, nu, v)),
        perturbation: (weighted_tv(&mp, &mq, v), dot(mu, v) * kernel_norm(p, q, v)),
    }
}

/// Drift constants of K_eta valid for every eta with eta(G) >= m and
/// eta(V) <= big_m, given K V <= a V + b:
/// BG: (1 - eps) a V + (1 - eps) b + eps |G|_inf big_m / m;
/// AR: ((1 - eps) a + eps) V + (1 - eps) b + eps big_m.
pub fn uniform_drift_constants(kind: Interaction, a: f64, b: f64, epsilon: f64, g_sup: f64, m: f64, big_m: f64) -> (f64, f64) {
    match kind {
        Interaction::Bg => ((1.0 - epsilon) * a, (1.0 - epsilon) * b + epsilon * g_sup * big_m / m),
        Interaction::Ar => ((1.0 - epsilon) * a + epsilon, (1.0 - epsilon) * b + epsilon * big_m),
        Interaction::None => (a, b),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformDriftReport {
    pub a_tilde: f64,
    pub b_tilde: f64,
    /// min over eta and x of a_tilde V(x) + b_tilde - K_eta V(x).
    pub worst_slack: f64,
    pub m: f64,
    pub big_m: f64,
}

/// Checks the uniform drift bound over a sample of measures; m and big_m are
/// taken as min eta(G) and max eta(V) over the sample.
pub fn check_uniform_drift(
    k: &FiniteKernel,
    g: &[f64],
    v: &[f64],
    a: f64,
    jump: &JumpConfig,
    etas: &[Vec<f64>],
) -> Result<UniformDriftReport> {
    let b = check_drift(
        k,
        &DriftSpec {
            v: v.to_vec(),
            a,
            b: f64::INFINITY,
        },
    )
    .b_min;
    let m = etas.iter().map(|e| dot(e, g)).fold(f64::INFINITY, f64::min);
    let big_m = etas.iter().map(|e| dot(e, v)).fold(0.0, f64::max);
    let g_sup = g.iter().cloned().fold(0.0, f64::max);
    let (a_tilde, b_tilde) = uniform_drift_constants(jump.kind, a, b, jump.epsilon, g_sup, m, big_m);
    let mut worst_slack = f64::INFINITY;
    for e in etas {
        let kv = k_eta_kernel(k, g, e, jump)?.apply_fn(v);
        for (x, kvx) in kv.iter().enumerate() {
            worst_slack = worst_slack.min(a_tilde * v[x] + b_tilde - kvx);
        }
    }
    Ok(UniformDriftReport {
        a_tilde,
        b_tilde,
        worst_slack,
        m,
        big_m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_examples() {
        assert_eq!(theta_lower_bound(&[2.0; 4], &[1.0, 2.0, 3.0, 4.0], 2.5).unwrap(), 2.0);
        assert_eq!(theta_lower_bound(&[3.0, 1.0, 2.0], &[1.0, 5.0, 2.0], 2.0).unwrap(), 2.0);
        assert_eq!(
            theta_lower_bound(&[1.0], &[3.0], 2.0),
            Err(Error::EmptyLevelSet { level: 2.0 })
        );
    }

    #[test]
    fn theta_on_gaussian_grid() {
        // G = exp(-x^2 / 2), U = 1 + x^2: {U <= R} = {|x| <= sqrt(R - 1)}
        let xs: Vec<f64> = (-4000..=4000).map(|i| i as f64 * 1e-3).collect();
        let g: Vec<f64> = xs.iter().map(|x| (-x * x / 2.0).exp()).collect();
        let u: Vec<f64> = xs.iter().map(|x| 1.0 + x * x).collect();
        for r in [1.5, 3.0, 7.0] {
            let t = theta_lower_bound(&g, &u, r).unwrap();
            assert!((t - (-(r - 1.0) / 2.0f64).exp()).abs() < 1e-2, "R={r} theta={t}");
        }
    }

    #[test]
    fn r_g_examples() {
        assert_eq!(compute_r_g(&[3.0, 3.0], 0.5, 10.0).unwrap(), 1.0);
        assert!((compute_r_g(&[0.0, 2.0], 1.0, 0.0).unwrap() - 5.0).abs() < 1e-15);
        let v = compute_r_g(&[0.0, 1.0], 1.0, 1.0).unwrap();
        assert!((v - (1.0 + 2.0 * std::f64::consts::E)).abs() < 1e-12);
        assert!((v - 6.436_563_656_918_09).abs() < 1e-12);
        assert!(compute_r_g(&[0.0, 1.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn psi_reg_trivial_cases() {
        let g = [1.0, 1.0, 1.0];
        let v = [0.0, 1.0, 4.0];
        let a = vec![0.2, 0.3, 0.5];
        let b = vec![0.5, 0.25, 0.25];
        let same = verify_psi_reg(&g, &v, 0.5, &[(a.clone(), a.clone())]).unwrap();
        assert_eq!(same.max_ratio, 0.0);
        // G = 1: Psi_G is the identity and the constant is 2 + beta min eta(V)
        let c = psi_reg_constant(&g, &v, 0.5, &a, &b);
        let min_v = dot(&a, &v).min(dot(&b, &v));
        assert!((c - (2.0 + 0.5 * min_v)).abs() < 1e-12);
        let r = verify_psi_reg(&g, &v, 0.5, &[(a, b)]).unwrap();
        assert!((r.max_ratio - 1.0 / c).abs() < 1e-12);
    }
}
