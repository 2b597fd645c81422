//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use sparse_explorer::nn::{Activation, LayerSpec, Network, Targets};

/// Max relative error between backprop and central differences over every
/// parameter of `net` for one batch.
pub fn gradient_check(net: &Network, inputs: &[Vec<f64>], targets: Targets<'_>, h: f64) -> f64 {
    let (_, grad) = net.loss_and_gradient(inputs, targets).unwrap();
    let analytic = grad.flatten();
    let params = net.parameters_flat();
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] = params[i] + h;
        probe.set_parameters_flat(&p).unwrap();
        let up = probe.loss(inputs, targets).unwrap();
        p[i] = params[i] - h;
        probe.set_parameters_flat(&p).unwrap();
        let down = probe.loss(inputs, targets).unwrap();
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

/// A random deep network whose layers cycle through every activation.
pub fn random_network<R: Rng>(rng: &mut R, input: usize, output: usize) -> Network {
    let acts = [Activation::Relu, Activation::Tanh, Activation::Identity];
    let depth = rng.random_range(1..=3);
    let mut specs = Vec::new();
    let mut width = input;
    for i in 0..depth {
        let next = if i + 1 == depth { output } else { rng.random_range(2..=6) };
        let act = if i + 1 == depth {
            Activation::Identity
        } else {
            acts[rng.random_range(0..acts.len())]
        };
        specs.push(LayerSpec::new(width, next, act).with_bias(rng.random_range(-0.2..0.2)));
        width = next;
    }
    Network::init(&specs, rng).unwrap()
}

/// Sample mean and 1/(n−1) covariance by direct summation.
pub fn dense_moments(states: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let d = states[0].len();
    let n = states.len() as f64;
    let mut mean = vec![0.0; d];
    for s in states {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for s in states {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (s[i] - mean[i]) * (s[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    (mean, cov)
}

/// Log-density of `N(mean, cov + jitter·I)` through an explicit inverse and determinant.
pub fn dense_log_density(mean: &[f64], cov: &DMatrix<f64>, jitter: f64, x: &[f64]) -> f64 {
    let d = mean.len();
    let sigma = cov + DMatrix::identity(d, d) * jitter;
    let inv = sigma.clone().try_inverse().expect("oracle matrix is invertible");
    let diff = DMatrix::from_iterator(d, 1, x.iter().zip(mean).map(|(a, b)| a - b));
    let maha = (diff.transpose() * inv * diff)[(0, 0)];
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + sigma.determinant().ln() + maha)
}

/// Mountain Car difference equations, written out independently of the crate.
pub fn mountain_car_reference(position: f64, velocity: f64, action: usize) -> (f64, f64) {
    let mut v = velocity + (action as f64 - 1.0) * 0.001 + (3.0 * position).cos() * -0.0025;
    v = v.clamp(-0.07, 0.07);
    let mut p = position + v;
    p = p.clamp(-1.2, 0.6);
    if p == -1.2 && v < 0.0 {
        v = 0.0;
    }
    (p, v)
}

/// |a − b| relative to max(1, |b|).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// A random state set in `d` dimensions; every fourth set is rank-deficient.
pub fn random_state_set<R: Rng>(rng: &mut R, index: usize) -> Vec<Vec<f64>> {
    let d = rng.random_range(1..=5);
    let n = rng.random_range(2..=30);
    match index % 4 {
        // Fewer states than dimensions or all states on a lower-dimensional subspace.
        0 => {
            let rank = rng.random_range(0..d.max(1));
            let basis: Vec<Vec<f64>> = (0..rank)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let offset: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            (0..n)
                .map(|_| {
                    let mut s = offset.clone();
                    for b in &basis {
                        let c: f64 = rng.random_range(-1.0..1.0);
                        s.iter_mut().zip(b).for_each(|(x, bv)| *x += c * bv);
                    }
                    s
                })
                .collect()
        }
        _ => (0..n.max(d + 2))
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect(),
    }
}

/// Exact log-density of `N(mean, cov + jitter·I)` for the given f64 inputs:
/// Gaussian elimination over rationals, one rounding at the end.
pub fn exact_log_density(mean: &[f64], cov: &[f64], jitter: f64, x: &[f64]) -> f64 {
    let d = mean.len();
    let q = |v: f64| BigRational::from_float(v).expect("finite input");
    let lambda = q(jitter);
    // Augmented system [Σ + λI | x − μ].
    let mut m: Vec<Vec<BigRational>> = (0..d)
        .map(|i| {
            let mut row: Vec<BigRational> = (0..d)
                .map(|j| {
                    let v = q(cov[i * d + j]);
                    if i == j { v + &lambda } else { v }
                })
                .collect();
            row.push(q(x[i]) - q(mean[i]));
            row
        })
        .collect();
    let diff: Vec<BigRational> = m.iter().map(|r| r[d].clone()).collect();
    let mut det = BigRational::one();
    for c in 0..d {
        let pivot = (c..d)
            .find(|&r| !m[r][c].is_zero())
            .expect("matrix is nonsingular");
        if pivot != c {
            m.swap(pivot, c);
            det = -det;
        }
        det *= &m[c][c];
        for r in c + 1..d {
            let factor = &m[r][c] / &m[c][c];
            let (upper, lower) = m.split_at_mut(r);
            for (target, source) in lower[0][c..].iter_mut().zip(&upper[c][c..]) {
                *target -= &factor * source;
            }
        }
    }
    let mut y = vec![BigRational::zero(); d];
    for i in (0..d).rev() {
        let mut acc = m[i][d].clone();
        for k in i + 1..d {
            acc -= &m[i][k] * &y[k];
        }
        y[i] = acc / &m[i][i];
    }
    let maha: BigRational = diff.iter().zip(&y).map(|(a, b)| a * b).sum();
    assert!(det.is_positive(), "covariance is not positive definite");
    let log_det = rational_ln(&det);
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + maha.to_f64().unwrap())
}

/// ln of a positive rational, safe when the value over- or underflows f64.
fn rational_ln(r: &BigRational) -> f64 {
    let shift = r.numer().bits() as i64 - r.denom().bits() as i64;
    let scaled = if shift >= 0 {
        r / BigRational::from_integer(BigInt::one() << shift as usize)
    } else {
        r * BigRational::from_integer(BigInt::one() << (-shift) as usize)
    };
    scaled.to_f64().unwrap().ln() + shift as f64 * std::f64::consts::LN_2
}
