//! Constrained ascent over candidate Gaussians inside a KL trust region.
//!
//! Candidates are expressed in coordinates whitened by the anchor
//! distribution `ν_k`: per dimension `u = (mean - mean_k) / std_k` and
//! `v = log_std - log_std_k`. In these coordinates
//! `KL(ν ‖ ν_k) = Σ (u² + e^{2v} - 1 - 2v) / 2`, which is convex and scale-free,
//! so the same step sizes work for a grid-size context with std 20 and an
//! agent-count context with std 0.06.
//!
//! The feasible set (trust region intersected with per-coordinate boxes from
//! the context bounds and the std clamp) is convex; iterates are kept feasible
//! by exact Euclidean projection, computed from the separable Lagrangian with
//! a bisection on the single multiplier.

use crate::context::{ContextSpec, GaussianContextDistribution};

/// Objective value with its gradient in `(mean, log_std)` space.
#[derive(Clone, Debug)]
pub(crate) struct Evaluation {
    pub value: f64,
    pub d_mean: Vec<f64>,
    pub d_log_std: Vec<f64>,
}

impl Evaluation {
    pub fn zeros(value: f64, dim: usize) -> Self {
        Self {
            value,
            d_mean: vec![0.0; dim],
            d_log_std: vec![0.0; dim],
        }
    }
}

pub(crate) struct TrustRegion<'a> {
    anchor: &'a GaussianContextDistribution,
    anchor_std: Vec<f64>,
    max_kl: f64,
    u_lo: Vec<f64>,
    u_hi: Vec<f64>,
    v_min: Vec<f64>,
    free: Vec<bool>,
}

impl<'a> TrustRegion<'a> {
    pub fn new(
        anchor: &'a GaussianContextDistribution,
        spec: &ContextSpec,
        std_lower_bound: Option<&[f64]>,
        frozen_dims: &[usize],
        max_kl: f64,
    ) -> Self {
        let d = anchor.dim();
        let anchor_std = anchor.std();
        let u_lo = (0..d)
            .map(|i| (spec.lower_bounds[i] - anchor.mean[i]) / anchor_std[i])
            .collect();
        let u_hi = (0..d)
            .map(|i| (spec.upper_bounds[i] - anchor.mean[i]) / anchor_std[i])
            .collect();
        let v_min = (0..d)
            .map(|i| match std_lower_bound {
                Some(lb) => lb[i].ln() - anchor.log_std[i],
                None => f64::NEG_INFINITY,
            })
            .collect();
        let free = (0..d).map(|i| !frozen_dims.contains(&i)).collect();
        Self {
            anchor,
            anchor_std,
            max_kl,
            u_lo,
            u_hi,
            v_min,
            free,
        }
    }

    pub fn dim(&self) -> usize {
        self.anchor.dim()
    }

    /// Number of optimization variables (two per dimension).
    fn n_vars(&self) -> usize {
        2 * self.dim()
    }

    pub fn to_dist(&self, z: &[f64]) -> GaussianContextDistribution {
        let d = self.dim();
        GaussianContextDistribution {
            mean: (0..d)
                .map(|i| self.anchor.mean[i] + self.anchor_std[i] * z[i])
                .collect(),
            log_std: (0..d).map(|i| self.anchor.log_std[i] + z[d + i]).collect(),
        }
    }

    /// `KL(candidate ‖ anchor)` in whitened coordinates.
    pub fn step_kl(&self, z: &[f64]) -> f64 {
        let d = self.dim();
        (0..d)
            .map(|i| {
                let (u, v) = (z[i], z[d + i]);
                0.5 * (u * u + (2.0 * v).exp() - 1.0 - 2.0 * v)
            })
            .sum()
    }

    /// Gradient with respect to `z`, frozen coordinates zeroed.
    pub fn chain(&self, e: &Evaluation) -> Vec<f64> {
        let d = self.dim();
        let mut g = vec![0.0; self.n_vars()];
        for i in 0..d {
            if self.free[i] {
                g[i] = e.d_mean[i] * self.anchor_std[i];
                g[d + i] = e.d_log_std[i];
            }
        }
        g
    }

    /// Minimizer of `½‖z - y‖² + η·KL(z)` over the boxes, coordinate-wise.
    fn box_prox(&self, y: &[f64], eta: f64) -> Vec<f64> {
        let d = self.dim();
        let mut z = vec![0.0; self.n_vars()];
        for i in 0..d {
            if !self.free[i] {
                continue;
            }
            z[i] = (y[i] / (1.0 + eta)).clamp(self.u_lo[i], self.u_hi[i]);
            z[d + i] = solve_v(y[d + i], eta).max(self.v_min[i]);
        }
        z
    }

    /// Euclidean projection onto the feasible set.
    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        let z0 = self.box_prox(y, 0.0);
        if self.step_kl(&z0) <= self.max_kl {
            return z0;
        }
        let mut hi = 1.0;
        let mut z_hi = self.box_prox(y, hi);
        while self.step_kl(&z_hi) > self.max_kl {
            hi *= 2.0;
            if hi > 1e12 {
                // The boxes exclude the whole trust region; the closest we can
                // get is the box-constrained anchor.
                return z_hi;
            }
            z_hi = self.box_prox(y, hi);
        }
        let mut lo = 0.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            let z_mid = self.box_prox(y, mid);
            if self.step_kl(&z_mid) > self.max_kl {
                lo = mid;
            } else {
                hi = mid;
                z_hi = z_mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        z_hi
    }

    /// The anchor itself, pushed into the boxes if it lies outside them.
    pub fn start(&self) -> Vec<f64> {
        self.project(&vec![0.0; self.n_vars()])
    }

    #[cfg(test)]
    pub fn is_feasible(&self, z: &[f64], tolerance: f64) -> bool {
        let d = self.dim();
        let slack = 1e-12;
        self.step_kl(z) <= self.max_kl * (1.0 + tolerance)
            && (0..d).filter(|&i| self.free[i]).all(|i| {
                z[i] >= self.u_lo[i] - slack
                    && z[i] <= self.u_hi[i] + slack
                    && z[d + i] >= self.v_min[i] - slack
            })
    }

    /// Projected normalized-gradient ascent with step doubling/halving.
    pub fn ascend<F>(&self, objective: &F, start: Vec<f64>, iters: usize) -> Vec<f64>
    where
        F: Fn(&GaussianContextDistribution) -> Evaluation,
    {
        let max_step = 2.0 * (2.0 * self.max_kl).sqrt() + 1.0;
        let mut step = (2.0 * self.max_kl).sqrt().min(max_step);
        let mut z = start;
        let mut current = objective(&self.to_dist(&z));
        if !current.value.is_finite() {
            return z;
        }
        for _ in 0..iters {
            let g = self.chain(&current);
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                break;
            }
            let mut moved = false;
            while step > 1e-12 {
                let y: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi + step * gi / norm).collect();
                let trial = self.project(&y);
                let eval = objective(&self.to_dist(&trial));
                if eval.value.is_finite() && eval.value > current.value {
                    z = trial;
                    current = eval;
                    step = (2.0 * step).min(max_step);
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        z
    }
}

/// Root of `v - y + η (e^{2v} - 1) = 0`, which is increasing in `v` and lies
/// between 0 and `y`.
fn solve_v(y: f64, eta: f64) -> f64 {
    if eta == 0.0 || y == 0.0 {
        return y;
    }
    let (mut lo, mut hi) = if y > 0.0 { (0.0, y) } else { (y, 0.0) };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = mid - y + eta * ((2.0 * mid).exp() - 1.0);
        if r > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-16 * (1.0 + y.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}
