//! Test-only oracles and generators shared by the integration suites. None
//! of this goes through the penalized least-squares path.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use readpred::lmm::{DesignMatrices, Grouping};

/// Dense marginal-likelihood deviance at `theta`, with beta and sigma^2
/// profiled out by generalized least squares on the full n x n covariance.
pub fn dense_deviance(design: &DesignMatrices, theta: &[f64]) -> (f64, Vec<f64>, f64) {
    let n = design.n();
    let mut v = DMatrix::<f64>::identity(n, n);
    for (g, t) in design.groupings.iter().zip(theta) {
        for i in 0..n {
            for j in 0..n {
                if g.levels[i] == g.levels[j] {
                    v[(i, j)] += t * t;
                }
            }
        }
    }
    let chol = v.cholesky().expect("V is positive definite");
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let y = DVector::from_column_slice(&design.y);
    let vinv_x = chol.solve(&design.x);
    let vinv_y = chol.solve(&y);
    let xtvx = design.x.transpose() * &vinv_x;
    let xtvy = design.x.transpose() * &vinv_y;
    let beta = xtvx.lu().solve(&xtvy).expect("X'V^-1X invertible");
    let r = &y - &design.x * &beta;
    let sigma2 = r.dot(&chol.solve(&r)) / n as f64;
    let nf = n as f64;
    let dev = nf * (2.0 * std::f64::consts::PI * sigma2).ln() + logdet + nf;
    (dev, beta.iter().copied().collect(), sigma2)
}

fn golden(f: &mut impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Minimizes the dense deviance over theta in [0, 10]^k by cyclic
/// golden-section line searches after a coarse grid start.
pub fn dense_optimum(design: &DesignMatrices) -> (f64, Vec<f64>, Vec<f64>) {
    let k = design.groupings.len();
    let grid = [0.0, 0.1, 0.3, 0.6, 1.0, 2.0, 4.0];
    let mut theta = vec![1.0; k];
    let mut best = f64::INFINITY;
    // coarse grid over all factors (k <= 2 in the tests)
    let mut idx = vec![0usize; k];
    loop {
        let cand: Vec<f64> = idx.iter().map(|&i| grid[i]).collect();
        let d = dense_deviance(design, &cand).0;
        if d < best {
            best = d;
            theta = cand;
        }
        let mut pos = 0;
        while pos < k {
            idx[pos] += 1;
            if idx[pos] < grid.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
        if pos == k {
            break;
        }
    }
    for _ in 0..40 {
        let before = best;
        for f in 0..k {
            let lo = (theta[f] - 1.0).max(0.0);
            let hi = theta[f] + 1.0;
            let mut line = |t: f64| {
                let mut th = theta.clone();
                th[f] = t;
                dense_deviance(design, &th).0
            };
            let t = golden(&mut line, lo, hi, 1e-9);
            let at_zero = line(0.0);
            let at_t = line(t);
            theta[f] = if at_zero < at_t { 0.0 } else { t };
            best = at_zero.min(at_t);
        }
        if (before - best).abs() < 1e-12 {
            break;
        }
    }
    let (dev, beta, _) = dense_deviance(design, &theta);
    (dev, beta, theta)
}

/// Small crossed two-factor instance with an intercept and two covariates.
pub fn random_instance(seed: u64) -> DesignMatrices {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(40..=150);
    let q1 = rng.random_range(3..=8);
    let q2 = rng.random_range(4..=12);
    let z = Normal::new(0.0, 1.0).unwrap();
    let s1 = rng.random_range(0.0..1.0);
    let s2 = rng.random_range(0.0..1.0);
    let b1: Vec<f64> = (0..q1).map(|_| s1 * z.sample(&mut rng)).collect();
    let b2: Vec<f64> = (0..q2).map(|_| s2 * z.sample(&mut rng)).collect();
    let mut x = DMatrix::zeros(n, 3);
    let mut y = Vec::with_capacity(n);
    let mut l1 = Vec::with_capacity(n);
    let mut l2 = Vec::with_capacity(n);
    for i in 0..n {
        // every level appears at least once
        let a = if i < q1 { i } else { rng.random_range(0..q1) };
        let b = if i < q2 { i } else { rng.random_range(0..q2) };
        let x1: f64 = z.sample(&mut rng);
        let x2: f64 = rng.random_range(0.0..5.0);
        x[(i, 0)] = 1.0;
        x[(i, 1)] = x1;
        x[(i, 2)] = x2;
        y.push(2.0 + 0.5 * x1 - 0.3 * x2 + b1[a] + b2[b] + 0.8 * z.sample(&mut rng));
        l1.push(a as u32);
        l2.push(b as u32);
    }
    DesignMatrices::new(
        y,
        x,
        vec!["(Intercept)".into(), "x1".into(), "x2".into()],
        vec![
            Grouping::from_labels("g1", &l1),
            Grouping::from_labels("g2", &l2),
        ],
    )
    .unwrap()
}

/// Balanced one-way layout: 4 groups x 5 replicates.
pub fn one_way() -> (DesignMatrices, Vec<Vec<f64>>) {
    let groups = vec![
        vec![9.8, 11.2, 10.4, 10.9, 9.5],
        vec![12.6, 13.9, 12.1, 13.3, 14.0],
        vec![8.1, 7.4, 9.0, 8.8, 7.9],
        vec![11.0, 10.2, 12.3, 11.5, 10.8],
    ];
    let y: Vec<f64> = groups.iter().flatten().copied().collect();
    let labels: Vec<u32> = (0..4u32).flat_map(|g| std::iter::repeat_n(g, 5)).collect();
    let design = DesignMatrices::new(
        y.clone(),
        DMatrix::from_element(20, 1, 1.0),
        vec!["(Intercept)".into()],
        vec![Grouping::from_labels("group", &labels)],
    )
    .unwrap();
    (design, groups)
}

/// Closed-form ML estimates for a balanced one-way random-intercept model:
/// (grand mean, residual variance, group variance).
pub fn one_way_ml(groups: &[Vec<f64>]) -> (f64, f64, f64) {
    let g = groups.len() as f64;
    let m = groups[0].len() as f64;
    let means: Vec<f64> = groups.iter().map(|v| v.iter().sum::<f64>() / m).collect();
    let grand = means.iter().sum::<f64>() / g;
    let ssw: f64 = groups
        .iter()
        .zip(&means)
        .map(|(v, mu)| v.iter().map(|x| (x - mu).powi(2)).sum::<f64>())
        .sum();
    let ssb: f64 = m * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let msw = ssw / (g * (m - 1.0));
    let var_group = (ssb / g - msw) / m;
    (grand, msw, var_group)
}

/// Ordinary least squares through a QR factorization.
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> (Vec<f64>, f64) {
    let yv = DVector::from_column_slice(y);
    let qr = x.clone().qr();
    let qty = qr.q().transpose() * &yv;
    let beta = qr.r().solve_upper_triangular(&qty).unwrap();
    let rss = (&yv - x * &beta).norm_squared();
    (beta.iter().copied().collect(), rss)
}
