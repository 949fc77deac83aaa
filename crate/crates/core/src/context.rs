//! Context spaces and the diagonal Gaussian distributions the curriculum moves
//! over them.
//!
//! A context selects one task out of a family (e.g. `[grid_size, n_agents]`).
//! Distributions are sampled without clamping; [`ContextSpec::realize`] maps a
//! raw sample onto a buildable task by clamping to the bounds and rounding the
//! integer-valued dimensions.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deterministic random source used throughout the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// A point in context space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContextVector(pub Vec<f64>);

impl ContextVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Value of dimension `i` as a count. Only meaningful after realization.
    pub fn as_count(&self, i: usize) -> usize {
        self.0[i].round().max(0.0) as usize
    }
}

impl From<Vec<f64>> for ContextVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Diagonal Gaussian over context space, parameterized by mean and log standard
/// deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRepr", into = "GaussianRepr")]
pub struct GaussianContextDistribution {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

/// On-disk form: standard deviations are friendlier to edit than log-stds.
#[derive(Serialize, Deserialize)]
struct GaussianRepr {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl TryFrom<GaussianRepr> for GaussianContextDistribution {
    type Error = Error;

    fn try_from(repr: GaussianRepr) -> Result<Self> {
        Self::from_std(repr.mean, repr.std)
    }
}

impl From<GaussianContextDistribution> for GaussianRepr {
    fn from(dist: GaussianContextDistribution) -> Self {
        let std = dist.std();
        Self {
            mean: dist.mean,
            std,
        }
    }
}

impl GaussianContextDistribution {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: log_std.len(),
            });
        }
        if mean.is_empty() {
            return Err(Error::InvalidConfig("context dimension must be positive".into()));
        }
        if !mean.iter().chain(&log_std).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("gaussian parameters"));
        }
        Ok(Self { mean, log_std })
    }

    pub fn from_std(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidConfig("standard deviations must be positive".into()));
        }
        Self::new(mean, std.into_iter().map(f64::ln).collect())
    }

    pub fn from_variance(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        Self::from_std(mean, variance.into_iter().map(f64::sqrt).collect())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    /// `mean + std ⊙ z` with `z` standard normal. Not clamped.
    pub fn sample(&self, rng: &mut SimRng) -> ContextVector {
        let values = self
            .mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, l)| {
                let z: f64 = rng.sample(StandardNormal);
                m + l.exp() * z
            })
            .collect();
        ContextVector(values)
    }

    pub fn log_pdf(&self, c: &ContextVector) -> Result<f64> {
        self.check_dim(c.dim())?;
        Ok(self.log_pdf_unchecked(c.values()))
    }

    pub(crate) fn log_pdf_unchecked(&self, c: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(c)
            .map(|((m, l), x)| {
                let z = (x - m) * (-l).exp();
                -0.5 * z * z - l - 0.5 * LN_2PI
            })
            .sum()
    }

    /// Closed-form `KL(self ‖ other)` in nats.
    pub fn kl_divergence(&self, other: &Self) -> Result<f64> {
        self.check_dim(other.dim())?;
        Ok((0..self.dim())
            .map(|i| {
                kl_1d(
                    self.mean[i],
                    self.log_std[i],
                    other.mean[i],
                    other.log_std[i],
                )
            })
            .sum())
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

/// `KL(N(m_p, s_p²) ‖ N(m_q, s_q²))` with log standard deviations.
pub(crate) fn kl_1d(m_p: f64, ls_p: f64, m_q: f64, ls_q: f64) -> f64 {
    let var_ratio = (2.0 * (ls_p - ls_q)).exp();
    let d = (m_p - m_q) * (-ls_q).exp();
    // ls_q - ls_p + (s_p² + (m_p - m_q)²) / (2 s_q²) - 1/2, arranged to avoid
    // overflow when s_q is tiny.
    (ls_q - ls_p) + 0.5 * (var_ratio + d * d) - 0.5
}

/// Density of a univariate Gaussian; used by tests and oracles.
pub fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * PI).sqrt())
}

/// Bounds, integrality and the initial/target distributions of a context space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextSpec {
    pub lower_bounds: Vec<f64>,
    pub upper_bounds: Vec<f64>,
    /// Dimensions rounded to integers at realization time.
    pub integer_dims: Vec<usize>,
    pub initial: GaussianContextDistribution,
    pub target: GaussianContextDistribution,
}

impl ContextSpec {
    pub fn dim(&self) -> usize {
        self.lower_bounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidConfig("context dimension must be positive".into()));
        }
        for (name, len) in [
            ("upper_bounds", self.upper_bounds.len()),
            ("initial", self.initial.dim()),
            ("target", self.target.dim()),
        ] {
            if len != d {
                return Err(Error::InvalidConfig(format!(
                    "{name} has dimension {len}, expected {d}"
                )));
            }
        }
        for i in 0..d {
            if !(self.lower_bounds[i] < self.upper_bounds[i]) {
                return Err(Error::InvalidConfig(format!(
                    "lower bound {} not below upper bound {} in dim {i}",
                    self.lower_bounds[i], self.upper_bounds[i]
                )));
            }
            let m = self.target.mean[i];
            if m < self.lower_bounds[i] || m > self.upper_bounds[i] {
                return Err(Error::InvalidConfig(format!(
                    "target mean {m} outside bounds in dim {i}"
                )));
            }
        }
        if let Some(&i) = self.integer_dims.iter().find(|&&i| i >= d) {
            return Err(Error::InvalidConfig(format!("integer dim {i} out of range")));
        }
        Ok(())
    }

    /// Clamp to bounds, then round integer dimensions to nearest (ties away
    /// from zero), staying inside the bounds.
    pub fn realize(&self, c: &ContextVector) -> ContextVector {
        let values = c
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (lo, hi) = (self.lower_bounds[i], self.upper_bounds[i]);
                let v = v.clamp(lo, hi);
                if !self.integer_dims.contains(&i) {
                    return v;
                }
                let r = v.round();
                if r > hi {
                    hi.floor()
                } else if r < lo {
                    lo.ceil()
                } else {
                    r
                }
            })
            .collect();
        ContextVector(values)
    }

    /// Maps a realized context to `[0, 1]^d` for use as network input.
    pub fn normalize(&self, c: &ContextVector) -> Vec<f64> {
        c.values()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.lower_bounds[i]) / (self.upper_bounds[i] - self.lower_bounds[i]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn pursuit_spec() -> ContextSpec {
        ContextSpec {
            lower_bounds: vec![20.0, 3.0],
            upper_bounds: vec![40.0, 20.0],
            integer_dims: vec![0, 1],
            initial: GaussianContextDistribution::from_variance(vec![20.0, 5.0], vec![400.0, 225.0])
                .unwrap(),
            target: GaussianContextDistribution::from_variance(vec![30.0, 10.0], vec![4e-3, 4e-3])
                .unwrap(),
        }
    }

    #[test]
    fn degenerate_width_sample_is_mean() {
        let d = GaussianContextDistribution::from_std(vec![0.0], vec![1e-12]).unwrap();
        let mut rng = SimRng::seed_from_u64(1);
        assert!(d.sample(&mut rng).0[0].abs() < 1e-9);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let d = GaussianContextDistribution::from_std(vec![20.0, 5.0], vec![20.0, 15.0]).unwrap();
        let a = d.sample(&mut SimRng::seed_from_u64(7));
        let b = d.sample(&mut SimRng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_mean_converges() {
        let d = GaussianContextDistribution::from_std(vec![3.0], vec![2.0]).unwrap();
        let mut rng = SimRng::seed_from_u64(11);
        let n = 100_000;
        let mean = (0..n).map(|_| d.sample(&mut rng).0[0]).sum::<f64>() / n as f64;
        assert!((mean - 3.0).abs() < 0.03, "{mean}");
    }

    #[test]
    fn realize_examples() {
        let spec = pursuit_spec();
        assert_eq!(spec.realize(&vec![19.2, 2.4].into()).0, vec![20.0, 3.0]);
        assert_eq!(spec.realize(&vec![31.6, 9.5].into()).0, vec![32.0, 10.0]);
        assert_eq!(spec.realize(&vec![30.0, 10.0].into()).0, vec![30.0, 10.0]);
        assert_eq!(spec.realize(&vec![55.0, 20.4].into()).0, vec![40.0, 20.0]);
    }

    #[test]
    fn realize_respects_fractional_bounds() {
        let mut spec = pursuit_spec();
        spec.upper_bounds[1] = 12.5;
        spec.lower_bounds[1] = 2.5;
        assert_eq!(spec.realize(&vec![30.0, 12.4].into()).0[1], 12.0);
        assert_eq!(spec.realize(&vec![30.0, 2.5].into()).0[1], 3.0);
    }

    #[test]
    fn log_pdf_values() {
        let std_normal = GaussianContextDistribution::from_std(vec![0.0], vec![1.0]).unwrap();
        let v = std_normal.log_pdf(&vec![0.0].into()).unwrap();
        assert!((v - (-0.5 * (2.0 * PI).ln())).abs() < 1e-12);
        assert!((v + 0.918_938_5).abs() < 1e-7);

        let shifted = GaussianContextDistribution::from_std(vec![1.0], vec![1.0]).unwrap();
        assert!((shifted.log_pdf(&vec![1.0].into()).unwrap() - v).abs() < 1e-15);

        let a = GaussianContextDistribution::from_std(vec![1.0], vec![2.0]).unwrap();
        let b = GaussianContextDistribution::from_std(vec![-3.0], vec![0.5]).unwrap();
        let ab = GaussianContextDistribution::from_std(vec![1.0, -3.0], vec![2.0, 0.5]).unwrap();
        let joint = ab.log_pdf(&vec![0.3, -2.0].into()).unwrap();
        let sum = a.log_pdf(&vec![0.3].into()).unwrap() + b.log_pdf(&vec![-2.0].into()).unwrap();
        assert_eq!(joint, sum);
    }

    #[test]
    fn dimension_mismatch_errors() {
        let d = GaussianContextDistribution::from_std(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            d.log_pdf(&vec![0.0].into()),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        let e = GaussianContextDistribution::from_std(vec![0.0], vec![1.0]).unwrap();
        assert!(d.kl_divergence(&e).is_err());
    }

    #[test]
    fn kl_examples() {
        let n01 = GaussianContextDistribution::from_std(vec![0.0], vec![1.0]).unwrap();
        let n11 = GaussianContextDistribution::from_std(vec![1.0], vec![1.0]).unwrap();
        assert_eq!(n01.kl_divergence(&n01).unwrap(), 0.0);
        assert!((n11.kl_divergence(&n01).unwrap() - 0.5).abs() < 1e-15);

        let p = GaussianContextDistribution::from_std(vec![20.0, 5.0], vec![20.0, 15.0]).unwrap();
        let q = pursuit_spec().target;
        let per_dim: f64 = (0..2)
            .map(|i| kl_1d(p.mean[i], p.log_std[i], q.mean[i], q.log_std[i]))
            .sum();
        assert_eq!(p.kl_divergence(&q).unwrap(), per_dim);
    }

    #[test]
    fn serde_uses_std() {
        let d = GaussianContextDistribution::from_std(vec![1.0], vec![2.0]).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(json, r#"{"mean":[1.0],"std":[2.0]}"#);
        let back: GaussianContextDistribution = serde_json::from_str(&json).unwrap();
        assert!((back.std()[0] - 2.0).abs() < 1e-15);
        assert!(serde_json::from_str::<GaussianContextDistribution>(r#"{"mean":[1.0],"std":[0.0]}"#).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(pursuit_spec().validate().is_ok());
        let mut bad = pursuit_spec();
        bad.target.mean[0] = 50.0;
        assert!(bad.validate().is_err());
        let mut bad = pursuit_spec();
        bad.lower_bounds[1] = 30.0;
        assert!(bad.validate().is_err());
    }
}
