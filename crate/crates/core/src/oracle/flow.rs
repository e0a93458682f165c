use serde::{Deserialize, Serialize};

use super::finite::{stationary, tv, FiniteKernel, FiniteMeasure};
use crate::error::{Error, Result};
use crate::nonlinear::{Interaction, JumpConfig};

/// Psi_G(eta) = G eta / eta(G).
pub fn bg_transform(g: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
    let z: f64 = g.iter().zip(eta).map(|(a, b)| a * b).sum();
    if !(z > 0.0) {
        return Err(Error::EmptySupport);
    }
    Ok(g.iter().zip(eta).map(|(a, b)| a * b / z).collect())
}

/// Exact matrix of J_eta.
///
/// BG: every row is Psi_G(eta). AR: row x puts alpha(x, y) eta(y) on y != x
/// and eta(x) + 1 - A_eta(x) on x, with alpha(x, y) = min(1, G(y) / G(x)).
pub fn finite_jump_kernel(g: &[f64], eta: &[f64], kind: Interaction) -> Result<FiniteKernel> {
    let s = g.len();
    if eta.len() != s {
        return Err(Error::DimensionMismatch {
            expected: s,
            got: eta.len(),
        });
    }
    match kind {
        Interaction::Bg => Ok(FiniteKernel::constant(&bg_transform(g, eta)?)),
        Interaction::Ar => {
            if g.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::PotentialUndefined);
            }
            let mut data = vec![0.0; s * s];
            for x in 0..s {
                let row = &mut data[x * s..(x + 1) * s];
                let mut accept = 0.0;
                for y in 0..s {
                    if y != x {
                        let m = (g[y] / g[x]).min(1.0) * eta[y];
                        row[y] = m;
                        accept += m;
                    }
                }
                row[x] = 1.0 - accept;
            }
            Ok(FiniteKernel::from_data_unchecked(s, data))
        }
        Interaction::None => Err(Error::Unsupported(
            "no jump kernel without an interaction".into(),
        )),
    }
}

/// K_eta = (1 - eps) K + eps J_eta, or K itself without interaction.
pub fn k_eta_kernel(k: &FiniteKernel, g: &[f64], eta: &[f64], jump: &JumpConfig) -> Result<FiniteKernel> {
    if jump.kind == Interaction::None || jump.epsilon == 0.0 {
        return Ok(k.clone());
    }
    let j = finite_jump_kernel(g, eta, jump.kind)?;
    Ok(k.mix(1.0 - jump.epsilon, &j, jump.epsilon))
}

/// The exact flows eta_{n+1} = eta_n Q, mu_{n+1} = mu_n K_{eta_{n+1}}, n + 1
/// entries each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub mu: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
}

pub fn mean_field_flow(
    k: &FiniteKernel,
    q: &FiniteKernel,
    g: &[f64],
    jump: &JumpConfig,
    mu0: &FiniteMeasure,
    eta0: &FiniteMeasure,
    n: usize,
) -> Result<Flow> {
    let mut mu = Vec::with_capacity(n + 1);
    let mut eta = Vec::with_capacity(n + 1);
    mu.push(mu0.probs().to_vec());
    eta.push(eta0.probs().to_vec());
    for i in 0..n {
        let e = q.left_mul(&eta[i]);
        let kk = k_eta_kernel(k, g, &e, jump)?;
        mu.push(kk.left_mul(&mu[i]));
        eta.push(e);
    }
    Ok(Flow { mu, eta })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceResiduals {
    pub bg: f64,
    pub ar: f64,
}

/// ||pi K^BG_eta - pi||_1 and ||pi K^AR_eta - pi||_1 with G = pi / eta*.
/// Passing `eta = eta*` checks the invariance of pi; any other eta is a
/// negative control.
pub fn invariance_residuals(
    k: &FiniteKernel,
    pi: &[f64],
    eta_star: &[f64],
    eta: &[f64],
    epsilon: f64,
) -> Result<InvarianceResiduals> {
    let g: Vec<f64> = pi.iter().zip(eta_star).map(|(p, e)| p / e).collect();
    let res = |kind| -> Result<f64> {
        let kk = k_eta_kernel(k, &g, eta, &JumpConfig::new(kind, epsilon))?;
        Ok(tv(&kk.left_mul(pi), pi))
    };
    Ok(InvarianceResiduals {
        bg: res(Interaction::Bg)?,
        ar: res(Interaction::Ar)?,
    })
}

/// Invariance residuals with pi and eta* computed as the stationary laws of
/// K and Q.
pub fn verify_invariance(k: &FiniteKernel, q: &FiniteKernel, epsilon: f64) -> Result<InvarianceResiduals> {
    let pi = stationary(k)?;
    let eta_star = stationary(q)?;
    invariance_residuals(k, &pi, &eta_star, &eta_star, epsilon)
}
