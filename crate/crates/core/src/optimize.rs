//! Unconstrained BFGS minimization with finite-difference gradients.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeSettings {
    pub max_iterations: usize,
    /// Stop when the Euclidean gradient norm falls below this.
    pub gradient_tolerance: f64,
    /// Stop when an accepted step is shorter than `step_tolerance * (1 + |x|)`.
    pub step_tolerance: f64,
    /// Relative finite-difference step; component `i` uses `fd_step * (1 + |x_i|)`.
    pub fd_step: f64,
    /// Sufficient-decrease constant of the Armijo condition.
    pub armijo: f64,
    /// Backtracking contraction factor.
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for OptimizeSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            step_tolerance: 1e-12,
            fd_step: 1e-6,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
        }
    }
}

impl OptimizeSettings {
    fn validate(&self) -> Result<()> {
        let ok = self.max_iterations >= 1
            && self.gradient_tolerance > 0.0
            && self.step_tolerance > 0.0
            && self.fd_step > 0.0
            && self.armijo > 0.0
            && self.armijo < 1.0
            && self.backtrack > 0.0
            && self.backtrack < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

/// Why the minimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    Step,
    MaxIterations,
    LineSearch,
    /// The gradient could not be evaluated at the current iterate.
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    /// Best point found.
    pub x: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub termination: Termination,
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` with a fixed step.
pub fn numeric_gradient<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    central_differences(&f, x, |_| h)
}

fn central_differences<F, H>(f: &F, x: &[f64], step: H) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
    H: Fn(f64) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = step(x[i]);
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let g = (up - down) / (2.0 * h);
        if !g.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "non-finite objective while differentiating component {i}"
            )));
        }
        grad.push(g);
    }
    Ok(grad)
}

/// Minimizes `f` from `init` with BFGS, using central-difference gradients.
pub fn minimize<F>(f: F, init: &[f64], settings: &OptimizeSettings) -> Result<OptResult>
where
    F: Fn(&[f64]) -> f64,
{
    let h = settings.fd_step;
    let grad = |x: &[f64]| central_differences(&f, x, |xi| h * (1.0 + xi.abs()));
    minimize_with_gradient(&f, grad, init, settings)
}

/// BFGS with a user-supplied gradient.
///
/// Each iteration backtracks from the full quasi-Newton step until the Armijo
/// condition holds; the inverse-Hessian update is skipped when the curvature
/// condition fails. Non-finite trial values are treated as failed steps. If
/// the gradient cannot be evaluated the best point so far is returned with
/// [`Termination::NumericalFailure`].
pub fn minimize_with_gradient<F, G>(
    f: F,
    grad: G,
    init: &[f64],
    settings: &OptimizeSettings,
) -> Result<OptResult>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    settings.validate()?;
    let n = init.len();
    let mut x = DVector::from_column_slice(init);
    let mut fx = f(x.as_slice());
    let initial_value = fx;
    if !fx.is_finite() {
        return Err(Error::InvalidStart);
    }
    let mut evaluations = 1;
    let mut g = match grad(x.as_slice()) {
        Ok(g) => DVector::from_vec(g),
        Err(_) => return Err(Error::InvalidStart),
    };
    let identity = DMatrix::<f64>::identity(n, n);
    let mut hinv = identity.clone();
    let mut fresh = true;
    let mut iterations = 0;

    let termination = loop {
        if g.norm() <= settings.gradient_tolerance {
            break Termination::Gradient;
        }
        if iterations >= settings.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let mut direction = -(&hinv * &g);
        let mut slope = g.dot(&direction);
        if !(slope < 0.0) {
            hinv = identity.clone();
            fresh = true;
            direction = -g.clone();
            slope = -g.norm_squared();
        }

        let mut alpha = if fresh {
            (1.0 / g.norm()).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..settings.max_backtracks {
            let trial = &x + alpha * &direction;
            let ft = f(trial.as_slice());
            evaluations += 1;
            if ft.is_finite() && ft <= fx + settings.armijo * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= settings.backtrack;
        }
        let Some((x_new, f_new)) = accepted else {
            if fresh {
                break Termination::LineSearch;
            }
            hinv = identity.clone();
            fresh = true;
            continue;
        };

        let g_new = match grad(x_new.as_slice()) {
            Ok(v) => DVector::from_vec(v),
            Err(_) => {
                x = x_new;
                fx = f_new;
                break Termination::NumericalFailure;
            }
        };
        evaluations += 2 * n;

        let s = &x_new - &x;
        let y = &g_new - &g;
        let step_small = s.norm() <= settings.step_tolerance * (1.0 + x.norm());
        x = x_new;
        fx = f_new;
        g = g_new;

        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                hinv = &identity * (sy / y.norm_squared());
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (H y s' + s y' H) + (rho^2 y'Hy + rho) s s'
            hinv -= rho * (&hy * s.transpose() + &s * hy.transpose());
            hinv += (rho * rho * yhy + rho) * (&s * s.transpose());
            fresh = false;
        }
        if step_small {
            break Termination::Step;
        }
    };

    Ok(OptResult {
        x: x.as_slice().to_vec(),
        value: fx,
        initial_value,
        gradient_norm: g.norm(),
        iterations,
        evaluations,
        converged: matches!(termination, Termination::Gradient | Termination::Step),
        termination,
    })
}
