use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::finite::{FiniteKernel, FiniteMeasure};

/// A finite test problem: K is pi-invariant, Q is eta*-invariant, G = pi / eta*.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteInstance {
    pub k: FiniteKernel,
    pub q: FiniteKernel,
    pub pi: Vec<f64>,
    pub eta_star: Vec<f64>,
    pub g: Vec<f64>,
}

impl FiniteInstance {
    pub fn size(&self) -> usize {
        self.pi.len()
    }

    pub fn from_targets(pi: Vec<f64>, eta_star: Vec<f64>, k_proposal: &[Vec<f64>], q_proposal: &[Vec<f64>]) -> Self {
        let k = metropolis_kernel(&pi, k_proposal);
        let q = metropolis_kernel(&eta_star, q_proposal);
        let g = pi.iter().zip(&eta_star).map(|(p, e)| p / e).collect();
        Self {
            k,
            q,
            pi,
            eta_star,
            g,
        }
    }
}

/// Metropolis kernel for `target` with a symmetric substochastic proposal
/// (off-diagonal entries); the leftover mass of each row stays put.
pub fn metropolis_kernel(target: &[f64], proposal: &[Vec<f64>]) -> FiniteKernel {
    let s = target.len();
    let mut data = vec![0.0; s * s];
    for x in 0..s {
        let mut moved = 0.0;
        for y in 0..s {
            if y != x {
                let m = proposal[x][y] * (target[y] / target[x]).min(1.0);
                data[x * s + y] = m;
                moved += m;
            }
        }
        data[x * s + x] = 1.0 - moved;
    }
    FiniteKernel::from_data_unchecked(s, data)
}

fn uniform_proposal(s: usize) -> Vec<Vec<f64>> {
    vec![vec![1.0 / s as f64; s]; s]
}

/// Four states with pi = (0.1, 0.2, 0.3, 0.4) and eta* its reversal; K and Q
/// are Metropolis chains with a uniform proposal.
pub fn bundled_four_state() -> FiniteInstance {
    let p = uniform_proposal(4);
    FiniteInstance::from_targets(vec![0.1, 0.2, 0.3, 0.4], vec![0.4, 0.3, 0.2, 0.1], &p, &p)
}

/// Uniform draw from the simplex.
pub fn random_measure<R: Rng + ?Sized>(s: usize, rng: &mut R) -> FiniteMeasure {
    let e: Vec<f64> = (0..s).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = e.iter().sum();
    FiniteMeasure::from_vec_unchecked(e.into_iter().map(|v| v / total).collect())
}

/// Probability vector with entries bounded away from zero.
pub fn random_positive_measure<R: Rng + ?Sized>(s: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..s).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Kernel with independent uniform-simplex rows.
pub fn random_kernel<R: Rng + ?Sized>(s: usize, rng: &mut R) -> FiniteKernel {
    let mut data = Vec::with_capacity(s * s);
    for _ in 0..s {
        data.extend(random_measure(s, rng).into_inner());
    }
    FiniteKernel::from_data_unchecked(s, data)
}

fn random_symmetric_proposal<R: Rng + ?Sized>(s: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut w = vec![vec![0.0; s]; s];
    for i in 0..s {
        for j in i + 1..s {
            let v = rng.random_range(0.05..1.0);
            w[i][j] = v;
            w[j][i] = v;
        }
    }
    // leave some holding mass so every chain is aperiodic
    let c = w.iter().map(|r| r.iter().sum::<f64>()).fold(0.0, f64::max) * 1.25;
    for row in w.iter_mut() {
        for v in row.iter_mut() {
            *v /= c;
        }
    }
    w
}

/// Random instance on `s` states: random positive pi and eta*, K and Q
/// Metropolis chains with random symmetric proposals.
pub fn random_instance<R: Rng + ?Sized>(s: usize, rng: &mut R) -> FiniteInstance {
    let pi = random_positive_measure(s, rng);
    let eta = random_positive_measure(s, rng);
    let pk = random_symmetric_proposal(s, rng);
    let pq = random_symmetric_proposal(s, rng);
    FiniteInstance::from_targets(pi, eta, &pk, &pq)
}
