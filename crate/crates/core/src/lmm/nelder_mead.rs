/// Outcome of a Nelder-Mead run.
#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evaluations: usize,
    /// Stopped on the tolerances rather than on the evaluation budget.
    pub converged: bool,
}

/// Minimizes `f` with the standard reflect/expand/contract/shrink simplex.
///
/// Stops once the spread of function values over the simplex is below
/// `ftol` and every vertex lies within `xtol` of the best one.
pub fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    ftol: f64,
    xtol: f64,
    max_evals: usize,
) -> NelderMeadResult {
    let k = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k + 1);
    let fx0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), fx0));
    for i in 0..k {
        let mut x = x0.to_vec();
        x[i] += if x[i] != 0.0 {
            step * x[i].abs().max(0.1)
        } else {
            step
        };
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }
    if k == 0 {
        return NelderMeadResult {
            x: Vec::new(),
            fx: fx0,
            evaluations: evals,
            converged: true,
        };
    }

    let mut converged = false;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[k].1;
        let spread = simplex
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if (worst - best).abs() <= ftol && spread <= xtol {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; k];
        for (x, _) in &simplex[..k] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / k as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[k].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            simplex[k] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[k - 1].1 {
            simplex[k] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst {
            let xc = along(0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < fr.min(worst) {
            simplex[k] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = x_best
                .iter()
                .zip(&v.0)
                .map(|(b, xi)| b + 0.5 * (xi - b))
                .collect();
            let fx = eval(&x, &mut evals);
            *v = (x, fx);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        fx,
        evaluations: evals,
        converged,
    }
}
