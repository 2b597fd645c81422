//! Density models over recently visited states.
//!
//! [`GaussianModel`] fits a full-covariance multivariate normal and scores
//! candidate states by log-density. [`kernel_similarity`] is the distance
//! based alternative: the mean Gaussian-kernel affinity to a set of states.

use std::f64::consts::PI;

use crate::{Error, Result};

/// Relative size of the first jitter tried when the covariance is singular.
const INITIAL_JITTER: f64 = 1e-6;
const MAX_JITTER_ROUNDS: usize = 40;
const BANDWIDTH_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    dim: usize,
    mean: Vec<f64>,
    /// Row-major `dim × dim`.
    covariance: Vec<f64>,
    /// Lower-triangular factor of `covariance + jitter·I`, row-major.
    chol: Vec<f64>,
    jitter: f64,
}

impl GaussianModel {
    /// Fits mean and unbiased (`1/(n-1)`) covariance, then factors
    /// `Σ + λI` with `λ = 1e-6·max(tr Σ / d, 1e-12)`, growing λ tenfold until
    /// the factorization succeeds.
    pub fn fit(states: &[Vec<f64>]) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::Precondition(format!(
                "need at least 2 states to fit a Gaussian, got {}",
                states.len()
            )));
        }
        let d = states[0].len();
        if d == 0 {
            return Err(Error::Usage("states must have positive dimension".into()));
        }
        for s in states {
            if s.len() != d {
                return Err(Error::Usage("states have inconsistent dimensions".into()));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Usage("states must be finite".into()));
            }
        }
        let n = states.len() as f64;
        let mut mean = vec![0.0; d];
        for s in states {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);

        let mut covariance = vec![0.0; d * d];
        for s in states {
            for i in 0..d {
                let di = s[i] - mean[i];
                for j in 0..=i {
                    covariance[i * d + j] += di * (s[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..=i {
                let v = covariance[i * d + j] / (n - 1.0);
                covariance[i * d + j] = v;
                covariance[j * d + i] = v;
            }
        }

        let trace: f64 = (0..d).map(|i| covariance[i * d + i]).sum();
        let mut jitter = INITIAL_JITTER * (trace / d as f64).max(1e-12);
        for _ in 0..MAX_JITTER_ROUNDS {
            if let Some(chol) = cholesky(&covariance, d, jitter) {
                return Ok(Self {
                    dim: d,
                    mean,
                    covariance,
                    chol,
                    jitter,
                });
            }
            jitter *= 10.0;
        }
        Err(Error::Numerical(
            "covariance could not be regularized to positive definite".into(),
        ))
    }

    /// Builds a model from given moments with a fixed jitter (0 allowed).
    pub fn with_jitter(mean: Vec<f64>, covariance: Vec<f64>, jitter: f64) -> Result<Self> {
        let d = mean.len();
        if d == 0 || covariance.len() != d * d {
            return Err(Error::Usage("covariance must be d×d for a d-vector mean".into()));
        }
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(Error::Usage("jitter must be finite and nonnegative".into()));
        }
        let chol = cholesky(&covariance, d, jitter)
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        Ok(Self {
            dim: d,
            mean,
            covariance,
            chol,
            jitter,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major `d × d`, without jitter.
    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    /// Row-major lower-triangular Cholesky factor of `Σ + λI`.
    pub fn cholesky_factor(&self) -> &[f64] {
        &self.chol
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `ln N(x | μ, Σ + λI)`.
    ///
    /// The quadratic form comes from a Cholesky solve refined twice against
    /// residuals summed with error-free transformations, so it stays accurate
    /// when the jitter is many orders of magnitude below the largest variance.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let d = self.dim;
        if x.len() != d {
            return Err(Error::Usage(format!(
                "expected a {d}-vector, got length {}",
                x.len()
            )));
        }
        let diff: Vec<(f64, f64)> = x.iter().zip(&self.mean).map(|(a, m)| two_sum(*a, -m)).collect();
        let mut y = self.solve(&diff.iter().map(|(hi, _)| *hi).collect::<Vec<_>>());
        for _ in 0..2 {
            let residual: Vec<f64> = (0..d)
                .map(|i| {
                    let mut acc = CompensatedSum::default();
                    acc.add(diff[i].0);
                    acc.add(diff[i].1);
                    for (j, yj) in y.iter().enumerate() {
                        acc.add_product(-self.covariance[i * d + j], *yj);
                    }
                    acc.add_product(-self.jitter, y[i]);
                    acc.value()
                })
                .collect();
            let step = self.solve(&residual);
            y.iter_mut().zip(step).for_each(|(a, b)| *a += b);
        }
        let mut mahalanobis = CompensatedSum::default();
        for ((hi, lo), yi) in diff.iter().zip(&y) {
            mahalanobis.add_product(*hi, *yi);
            mahalanobis.add_product(*lo, *yi);
        }
        let log_det: f64 = 2.0 * (0..d).map(|i| self.chol[i * d + i].ln()).sum::<f64>();
        Ok(-0.5 * (d as f64 * (2.0 * PI).ln() + log_det + mahalanobis.value()))
    }

    /// `(L Lᵀ)⁻¹ b` by forward then backward substitution.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let l = &self.chol;
        let mut z = vec![0.0; d];
        for i in 0..d {
            let mut acc = b[i];
            for j in 0..i {
                acc -= l[i * d + j] * z[j];
            }
            z[i] = acc / l[i * d + i];
        }
        for i in (0..d).rev() {
            let mut acc = z[i];
            for j in i + 1..d {
                acc -= l[j * d + i] * z[j];
            }
            z[i] = acc / l[i * d + i];
        }
        z
    }
}

/// `a + b` as an unevaluated pair `(sum, rounding error)`.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let z = s - a;
    (s, (a - (s - z)) + (b - z))
}

/// Sum with a running compensation term (twice-working-precision accumulation).
#[derive(Debug, Default)]
struct CompensatedSum {
    sum: f64,
    err: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.sum, x);
        self.sum = s;
        self.err += e;
    }

    fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        self.add(p);
        self.err += a.mul_add(b, -p);
    }

    fn value(&self) -> f64 {
        self.sum + self.err
    }
}

/// Cholesky of `a + jitter·I`; `None` unless every pivot is finite and positive.
fn cholesky(a: &[f64], d: usize, jitter: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            if i == j {
                sum += jitter;
            }
            for k in 0..j {
                sum -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(sum > 0.0 && sum.is_finite()) {
                    return None;
                }
                l[i * d + i] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    Some(l)
}

pub fn fit_gaussian(states: &[Vec<f64>]) -> Result<GaussianModel> {
    GaussianModel::fit(states)
}

/// Mean of `exp(-Σᵢ (xᵢ - sᵢ)² / (2hᵢ²))` over `states`. Higher is more similar.
pub fn kernel_similarity(states: &[Vec<f64>], x: &[f64], bandwidths: &[f64]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::Precondition("kernel similarity needs at least one state".into()));
    }
    if bandwidths.len() != x.len() {
        return Err(Error::Usage("one bandwidth per state dimension is required".into()));
    }
    if bandwidths.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(Error::Config("kernel bandwidths must be strictly positive".into()));
    }
    let mut total = 0.0;
    for s in states {
        if s.len() != x.len() {
            return Err(Error::Usage("state dimension mismatch".into()));
        }
        let exponent: f64 = s
            .iter()
            .zip(x)
            .zip(bandwidths)
            .map(|((si, xi), h)| (xi - si).powi(2) / (2.0 * h * h))
            .sum();
        total += (-exponent).exp();
    }
    Ok(total / states.len() as f64)
}

/// Per-dimension sample standard deviation, floored at 1e-6.
pub fn default_bandwidths(states: &[Vec<f64>]) -> Result<Vec<f64>> {
    if states.is_empty() {
        return Err(Error::Precondition("no states to derive bandwidths from".into()));
    }
    let d = states[0].len();
    let n = states.len() as f64;
    let mut out = Vec::with_capacity(d);
    for i in 0..d {
        let mean = states.iter().map(|s| s[i]).sum::<f64>() / n;
        let var = if states.len() > 1 {
            states.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        out.push(var.sqrt().max(BANDWIDTH_FLOOR));
    }
    Ok(out)
}

/// The same bandwidth for every dimension: `sqrt(tr Σ / d)`, floored at 1e-6.
pub fn isotropic_bandwidths(states: &[Vec<f64>]) -> Result<Vec<f64>> {
    let per_dim = default_bandwidths(states)?;
    let d = per_dim.len() as f64;
    let h = (per_dim.iter().map(|s| s * s).sum::<f64>() / d).sqrt().max(BANDWIDTH_FLOOR);
    Ok(vec![h; per_dim.len()])
}
