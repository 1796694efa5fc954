use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::DesignMatrices;
use super::nelder_mead::nelder_mead;
use super::pls::{PlsSolution, PlsSystem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Spread of simplex deviances at which a run stops.
    pub ftol: f64,
    /// Simplex diameter (in theta units) at which a run stops.
    pub xtol: f64,
    pub max_evals: usize,
    pub restarts: usize,
    pub initial_theta: f64,
    /// Finish with finite-difference Newton steps on theta.
    pub polish: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            ftol: 1e-8,
            xtol: 1e-4,
            max_evals: 500,
            restarts: 3,
            initial_theta: 1.0,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomFactor {
    pub name: String,
    pub levels: usize,
    /// Random-intercept SD relative to the residual SD.
    pub theta: f64,
    /// Random-intercept variance, `theta^2 * sigma2`.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficients: Vec<Coefficient>,
    pub random_effects: Vec<RandomFactor>,
    pub sigma2: f64,
    pub loglik: f64,
    pub deviance: f64,
    pub aic: f64,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub converged: bool,
    pub evaluations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_hash: Option<String>,
    /// `X beta`, one entry per row.
    #[serde(skip)]
    pub fitted_fixed: Vec<f64>,
}

impl FitResult {
    pub fn beta(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.estimate).collect()
    }

    pub fn se(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.std_error).collect()
    }

    pub fn t(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.t_value).collect()
    }

    pub fn theta(&self) -> Vec<f64> {
        self.random_effects.iter().map(|r| r.theta).collect()
    }

    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    /// Number of estimated parameters counted by the AIC.
    pub fn n_params(&self) -> usize {
        self.p + self.random_effects.len() + 1
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn deviance_at(system: &PlsSystem<'_>, theta: &[f64]) -> f64 {
    let abs: Vec<f64> = theta.iter().map(|t| t.abs()).collect();
    system.solve(&abs).map_or(f64::INFINITY, |s| s.deviance)
}

/// Newton steps with central-difference derivatives. The deviance depends on
/// theta only through theta^2, so it is smooth across the boundary at zero.
fn polish(system: &PlsSystem<'_>, theta: &mut [f64], fx: &mut f64, evals: &mut usize) {
    let k = theta.len();
    for _ in 0..8 {
        let h: Vec<f64> = theta.iter().map(|t| 1e-4 * t.abs().max(1.0)).collect();
        let mut f = |x: &[f64]| {
            *evals += 1;
            deviance_at(system, x)
        };
        let mut g = DVector::zeros(k);
        let mut hess = DMatrix::zeros(k, k);
        let shifted = |i: usize, di: f64, j: usize, dj: f64| {
            let mut x = theta.to_vec();
            x[i] += di;
            x[j] += dj;
            x
        };
        for i in 0..k {
            let fp = f(&shifted(i, h[i], i, 0.0));
            let fm = f(&shifted(i, -h[i], i, 0.0));
            g[i] = (fp - fm) / (2.0 * h[i]);
            hess[(i, i)] = (fp - 2.0 * *fx + fm) / (h[i] * h[i]);
            for j in 0..i {
                let v = (f(&shifted(i, h[i], j, h[j]))
                    - f(&shifted(i, h[i], j, -h[j]))
                    - f(&shifted(i, -h[i], j, h[j]))
                    + f(&shifted(i, -h[i], j, -h[j])))
                    / (4.0 * h[i] * h[j]);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        if !g.iter().chain(hess.iter()).all(|v| v.is_finite()) {
            return;
        }
        let Some(chol) = hess.clone().cholesky() else {
            return;
        };
        let step = chol.solve(&(-&g));
        let mut t = 1.0;
        let mut moved = false;
        while t >= 0.125 {
            let cand: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(x, d)| x + t * d)
                .collect();
            let fc = f(&cand);
            if fc < *fx {
                theta.copy_from_slice(&cand);
                *fx = fc;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved || step.norm() * t < 1e-10 {
            return;
        }
    }
}

/// Maximum-likelihood fit: minimizes the profiled deviance over theta.
pub fn fit_lmm(design: &DesignMatrices, config: &OptimizerConfig) -> Result<FitResult> {
    let system = PlsSystem::new(design);
    let k = system.n_factors();
    let mut evals = 0;
    let mut converged = true;
    let mut theta = vec![config.initial_theta; k];

    if k > 0 {
        let mut f = |x: &[f64]| deviance_at(&system, x);
        let mut run = nelder_mead(
            &mut f,
            &theta,
            0.5,
            config.ftol,
            config.xtol,
            config.max_evals,
        );
        evals += run.evaluations;
        for r in 0..config.restarts {
            let step = 0.25 / (r + 1) as f64;
            let again = nelder_mead(
                &mut f,
                &run.x,
                step,
                config.ftol,
                config.xtol,
                config.max_evals,
            );
            evals += again.evaluations;
            let improved = again.fx < run.fx - config.ftol;
            if again.fx <= run.fx {
                run = again;
            } else {
                run.converged = again.converged || run.converged;
            }
            if !improved && run.converged {
                break;
            }
        }
        converged = run.converged;
        theta = run.x;
        let mut fx = run.fx;
        if config.polish && fx.is_finite() {
            polish(&system, &mut theta, &mut fx, &mut evals);
        }
        for t in theta.iter_mut() {
            *t = t.abs();
        }
    }

    let sol = system.solve(&theta)?;
    evals += 1;
    Ok(assemble(design, &theta, &sol, converged, evals))
}

fn assemble(
    design: &DesignMatrices,
    theta: &[f64],
    sol: &PlsSolution,
    converged: bool,
    evaluations: usize,
) -> FitResult {
    let p = design.p();
    let coefficients = (0..p)
        .map(|j| {
            let se = (sol.sigma2 * sol.beta_cov_unscaled[(j, j)]).sqrt();
            Coefficient {
                name: design.column_names[j].clone(),
                estimate: sol.beta[j],
                std_error: se,
                t_value: sol.beta[j] / se,
            }
        })
        .collect();
    let random_effects = design
        .groupings
        .iter()
        .zip(theta)
        .map(|(g, &t)| RandomFactor {
            name: g.name.clone(),
            levels: g.n_levels(),
            theta: t,
            variance: t * t * sol.sigma2,
        })
        .collect::<Vec<_>>();
    let fitted_fixed = (&design.x * DVector::from_column_slice(&sol.beta))
        .as_slice()
        .to_vec();
    let n_params = p + random_effects.len() + 1;
    FitResult {
        coefficients,
        random_effects,
        sigma2: sol.sigma2,
        loglik: -0.5 * sol.deviance,
        deviance: sol.deviance,
        aic: sol.deviance + 2.0 * n_params as f64,
        n: design.n(),
        p,
        q: design.q(),
        converged,
        evaluations,
        dataset_hash: None,
        fitted_fixed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TValue {
    pub name: String,
    pub t: f64,
    /// `|t| > 2`, treating the degrees of freedom as infinite.
    pub significant: bool,
}

pub fn t_values(fit: &FitResult) -> Vec<TValue> {
    fit.coefficients
        .iter()
        .map(|c| TValue {
            name: c.name.clone(),
            t: c.t_value,
            significant: c.t_value.abs() > 2.0,
        })
        .collect()
}

/// `y - X beta`: the response with the estimated fixed effects removed. The
/// random-effect contributions stay in the residual.
pub fn remove_fixed_effects(fit: &FitResult, design: &DesignMatrices) -> Result<Vec<f64>> {
    let names: Vec<&str> = fit.coefficients.iter().map(|c| c.name.as_str()).collect();
    if names
        != design
            .column_names
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>()
        || fit.n != design.n()
    {
        return Err(Error::Invalid(
            "fit and design disagree on the fixed-effect columns or row count".into(),
        ));
    }
    let fixed = &design.x * DVector::from_vec(fit.beta());
    Ok(design
        .y
        .iter()
        .zip(fixed.iter())
        .map(|(y, f)| y - f)
        .collect())
}
