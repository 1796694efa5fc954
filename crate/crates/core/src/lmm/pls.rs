//! Penalized least squares for crossed random intercepts.
//!
//! For relative standard deviations `theta` the spherical random effects `u`
//! and the fixed effects `beta` minimize
//!
//! ```text
//! |y - X beta - Z Lambda(theta) u|^2 + |u|^2
//! ```
//!
//! The normal equations are ordered `[u_big, u_rest, beta]`, where `u_big`
//! belongs to the factor with the most levels. Its block of `Lambda Z'Z Lambda + I`
//! is diagonal, so it is eliminated level by level and only the Schur
//! complement over `[u_rest, beta]` is factored densely. With one factor per
//! thousands of words and a few dozen participants this keeps every
//! evaluation at O(levels x (q_rest + p)^2).

use nalgebra::{Cholesky, DMatrix, DVector};

use super::design::DesignMatrices;
use crate::error::{Error, Result};

/// Cross-products that do not depend on `theta`.
#[derive(Debug, Clone)]
pub struct PlsSystem<'a> {
    design: &'a DesignMatrices,
    big: Option<usize>,
    /// Offset of each factor's levels inside `u_rest` (unused for `big`).
    offsets: Vec<usize>,
    q_rest: usize,
    big_count: Vec<f64>,
    big_x: DMatrix<f64>,
    big_y: Vec<f64>,
    big_rest: Vec<Vec<(usize, f64)>>,
    rr: DMatrix<f64>,
    rx: DMatrix<f64>,
    ry: DVector<f64>,
    xx: DMatrix<f64>,
    xy: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct PlsSolution {
    pub deviance: f64,
    pub beta: Vec<f64>,
    /// Spherical random effects per factor.
    pub u: Vec<Vec<f64>>,
    /// Penalized residual sum of squares.
    pub prss: f64,
    /// ML residual variance, `prss / n`.
    pub sigma2: f64,
    /// `log det(Lambda Z'Z Lambda + I)`.
    pub logdet: f64,
    /// `(X' V0^-1 X)^-1` with `V0 = I + Z Lambda Lambda Z'`; multiply by
    /// `sigma2` for the covariance of `beta`.
    pub beta_cov_unscaled: DMatrix<f64>,
}

impl<'a> PlsSystem<'a> {
    pub fn new(design: &'a DesignMatrices) -> Self {
        let n = design.n();
        let p = design.p();
        let x = &design.x;
        let big = (0..design.groupings.len())
            .max_by_key(|&f| (design.groupings[f].n_levels(), usize::MAX - f));
        let mut offsets = vec![0; design.groupings.len()];
        let mut q_rest = 0;
        for (f, g) in design.groupings.iter().enumerate() {
            if Some(f) != big {
                offsets[f] = q_rest;
                q_rest += g.n_levels();
            }
        }
        let rest_index = |f: usize, i: usize| offsets[f] + design.groupings[f].levels[i];

        let q_big = big.map_or(0, |b| design.groupings[b].n_levels());
        let mut big_count = vec![0.0; q_big];
        let mut big_x = DMatrix::zeros(q_big, p);
        let mut big_y = vec![0.0; q_big];
        let mut big_rest_dense: Vec<std::collections::BTreeMap<usize, f64>> =
            vec![Default::default(); q_big];
        let mut rr = DMatrix::zeros(q_rest, q_rest);
        let mut rx = DMatrix::zeros(q_rest, p);
        let mut ry = DVector::zeros(q_rest);
        let rest: Vec<usize> = (0..design.groupings.len())
            .filter(|&f| Some(f) != big)
            .collect();

        for i in 0..n {
            let xi = x.row(i);
            let yi = design.y[i];
            if let Some(b) = big {
                let l = design.groupings[b].levels[i];
                big_count[l] += 1.0;
                for j in 0..p {
                    big_x[(l, j)] += xi[j];
                }
                big_y[l] += yi;
                for &f in &rest {
                    *big_rest_dense[l].entry(rest_index(f, i)).or_default() += 1.0;
                }
            }
            for &f in &rest {
                let r = rest_index(f, i);
                for &g in &rest {
                    rr[(r, rest_index(g, i))] += 1.0;
                }
                for j in 0..p {
                    rx[(r, j)] += xi[j];
                }
                ry[r] += yi;
            }
        }
        let xx = x.transpose() * x;
        let xy = x.transpose() * DVector::from_column_slice(&design.y);
        PlsSystem {
            design,
            big,
            offsets,
            q_rest,
            big_count,
            big_x,
            big_y,
            big_rest: big_rest_dense
                .into_iter()
                .map(|m| m.into_iter().collect())
                .collect(),
            rr,
            rx,
            ry,
            xx,
            xy,
        }
    }

    pub fn design(&self) -> &DesignMatrices {
        self.design
    }

    pub fn n_factors(&self) -> usize {
        self.design.groupings.len()
    }

    /// Solves the penalized problem at `theta` (one entry per factor, each >= 0).
    pub fn solve(&self, theta: &[f64]) -> Result<PlsSolution> {
        let design = self.design;
        if theta.len() != design.groupings.len() {
            return Err(Error::Invalid(format!(
                "theta has {} entries for {} grouping factors",
                theta.len(),
                design.groupings.len()
            )));
        }
        if theta.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Invalid(format!(
                "theta must be finite and >= 0, got {theta:?}"
            )));
        }
        let n = design.n();
        let p = design.p();
        let qr = self.q_rest;
        let m = qr + p;

        let mut tr = vec![0.0; qr];
        for (f, g) in design.groupings.iter().enumerate() {
            if Some(f) != self.big {
                tr[self.offsets[f]..self.offsets[f] + g.n_levels()].fill(theta[f]);
            }
        }

        let mut s = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        for i in 0..qr {
            for j in 0..qr {
                s[(i, j)] = tr[i] * tr[j] * self.rr[(i, j)];
            }
            s[(i, i)] += 1.0;
            for j in 0..p {
                let v = tr[i] * self.rx[(i, j)];
                s[(i, qr + j)] = v;
                s[(qr + j, i)] = v;
            }
            rhs[i] = tr[i] * self.ry[i];
        }
        s.view_mut((qr, qr), (p, p)).copy_from(&self.xx);
        rhs.rows_mut(qr, p).copy_from(&self.xy);

        let mut logdet = 0.0;
        let mut c = DVector::zeros(m);
        let tb = self.big.map_or(0.0, |b| theta[b]);
        let mut diag = vec![1.0; self.big_count.len()];
        if self.big.is_some() && tb > 0.0 {
            for (l, &cnt) in self.big_count.iter().enumerate() {
                let d = tb * tb * cnt + 1.0;
                diag[l] = d;
                logdet += d.ln();
                c.fill(0.0);
                for &(r, k) in &self.big_rest[l] {
                    c[r] = tb * tr[r] * k;
                }
                for j in 0..p {
                    c[qr + j] = tb * self.big_x[(l, j)];
                }
                s.ger(-1.0 / d, &c, &c, 1.0);
                rhs.axpy(-tb * self.big_y[l] / d, &c, 1.0);
            }
        }

        let chol = Cholesky::new(s).ok_or(Error::Singular)?;
        let l = chol.l();
        for i in 0..qr {
            logdet += 2.0 * l[(i, i)].ln();
        }
        let sol = chol.solve(&rhs);
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular);
        }
        let beta: Vec<f64> = sol.rows(qr, p).iter().copied().collect();

        let mut u: Vec<Vec<f64>> = design
            .groupings
            .iter()
            .map(|g| vec![0.0; g.n_levels()])
            .collect();
        for (f, g) in design.groupings.iter().enumerate() {
            if Some(f) != self.big {
                u[f].copy_from_slice(
                    &sol.as_slice()[self.offsets[f]..self.offsets[f] + g.n_levels()],
                );
            }
        }
        if let Some(b) = self.big {
            if tb > 0.0 {
                for l in 0..self.big_count.len() {
                    let mut dot = 0.0;
                    for &(r, k) in &self.big_rest[l] {
                        dot += tr[r] * k * sol[r];
                    }
                    for (j, b) in beta.iter().enumerate() {
                        dot += self.big_x[(l, j)] * b;
                    }
                    u[b][l] = tb * (self.big_y[l] - dot) / diag[l];
                }
            }
        }

        let x = &design.x;
        let mut prss: f64 = u.iter().flatten().map(|v| v * v).sum();
        for i in 0..n {
            let mut r = design.y[i];
            for j in 0..p {
                r -= x[(i, j)] * beta[j];
            }
            for (f, g) in design.groupings.iter().enumerate() {
                r -= theta[f] * u[f][g.levels[i]];
            }
            prss += r * r;
        }
        if prss.is_nan() || prss <= 0.0 {
            return Err(Error::Singular);
        }
        let nf = n as f64;
        let deviance = logdet + nf * (1.0 + (2.0 * std::f64::consts::PI * prss / nf).ln());

        let lxx = l.view((qr, qr), (p, p)).into_owned();
        let lxx_inv = lxx
            .solve_lower_triangular(&DMatrix::<f64>::identity(p, p))
            .ok_or(Error::Singular)?;
        let beta_cov_unscaled = lxx_inv.transpose() * &lxx_inv;

        Ok(PlsSolution {
            deviance,
            beta,
            u,
            prss,
            sigma2: prss / nf,
            logdet,
            beta_cov_unscaled,
        })
    }
}

/// ML profiled deviance at `theta`, together with the conditional estimates.
pub fn profiled_deviance(design: &DesignMatrices, theta: &[f64]) -> Result<PlsSolution> {
    PlsSystem::new(design).solve(theta)
}
