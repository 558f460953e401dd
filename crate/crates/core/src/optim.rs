//! BFGS with a backtracking (Armijo) line search, for minimization.
//!
//! Near the optimum the decrease Armijo asks for can fall below the
//! rounding of f. A trial point is then also accepted under the
//! approximate Wolfe conditions of Hager and Zhang: f may not rise by more
//! than `value_noise`·max(1, |f|), and the directional derivative must
//! have flattened into [0.9·f′(0), −0.8·f′(0)].
//!
//! The objective returns value and gradient together. Evaluation errors are
//! treated as an infinite value so the line search backs away from regions
//! where the model is not computable.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    /// Converged when max |∇f| ≤ this.
    pub gradient_tolerance: f64,
    /// Largest allowed |step| in any coordinate for the first trial point.
    pub max_step: f64,
    /// Armijo constant.
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
    /// Relative rounding level of f used by the approximate Wolfe test.
    pub value_noise: f64,
    /// Starting inverse Hessian. `None` means scaled identity.
    pub initial_inverse_hessian: Option<DMatrix<f64>>,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            max_step: 2.0,
            sufficient_decrease: 1e-4,
            max_backtracks: 60,
            value_noise: 1e-13,
            initial_inverse_hessian: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailed,
    InitialPointInvalid,
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Objective at the start and after every accepted step. Never rises
    /// by more than `value_noise`·max(1, |f|) from one entry to the next.
    pub value_history: Vec<f64>,
}

impl BfgsOutcome {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn gradient_norm(&self) -> f64 {
        self.gradient.amax()
    }
}

struct Evaluator<F> {
    f: F,
    count: usize,
}

impl<F, E> Evaluator<F>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>), E>,
{
    fn eval(&mut self, x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        self.count += 1;
        match (self.f)(x) {
            Ok((v, g)) if v.is_finite() && g.iter().all(|c| c.is_finite()) => Some((v, g)),
            _ => None,
        }
    }
}

/// Minimizes `f` from `x0`.
pub fn minimize<F, E>(f: F, x0: DVector<f64>, opts: &BfgsOptions) -> BfgsOutcome
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>), E>,
{
    let n = x0.len();
    let mut ev = Evaluator { f, count: 0 };
    let Some((mut fx, mut gx)) = ev.eval(&x0) else {
        return BfgsOutcome {
            value: f64::INFINITY,
            gradient: DVector::from_element(n, f64::NAN),
            x: x0,
            iterations: 0,
            evaluations: ev.count,
            termination: Termination::InitialPointInvalid,
            value_history: Vec::new(),
        };
    };
    let mut x = x0;
    let supplied = opts.initial_inverse_hessian.clone();
    let mut h_inv = supplied.clone().unwrap_or_else(|| DMatrix::identity(n, n));
    let mut scaled_identity = supplied.is_none();
    let mut just_reset = false;
    let mut iterations = 0;
    let mut value_history = vec![fx];

    let termination = loop {
        if gx.amax() <= opts.gradient_tolerance {
            break Termination::Converged;
        }
        if iterations >= opts.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let mut direction = -(&h_inv * &gx);
        let mut slope = gx.dot(&direction);
        if !(slope < 0.0) {
            // Lost positive definiteness: fall back to steepest descent.
            h_inv = DMatrix::identity(n, n);
            scaled_identity = true;
            direction = -gx.clone();
            slope = gx.dot(&direction);
        }
        let largest = direction.amax();
        let mut alpha = if largest > opts.max_step {
            opts.max_step / largest
        } else {
            1.0
        };

        // Best non-increasing fallback in case Armijo cannot be met because
        // the decrease is below rounding.
        let mut accepted: Option<(DVector<f64>, f64, DVector<f64>)> = None;
        let mut fallback: Option<(DVector<f64>, f64, DVector<f64>)> = None;
        for _ in 0..=opts.max_backtracks {
            let trial = &x + &direction * alpha;
            if let Some((ft, gt)) = ev.eval(&trial) {
                if ft <= fx + opts.sufficient_decrease * alpha * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                let dt = gt.dot(&direction);
                if ft <= fx + opts.value_noise * fx.abs().max(1.0)
                    && dt >= 0.9 * slope
                    && dt <= -0.8 * slope
                {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                if ft <= fx
                    && gt.amax() < gx.amax()
                    && fallback.as_ref().is_none_or(|(_, _, g)| gt.amax() < g.amax())
                {
                    fallback = Some((trial, ft, gt));
                }
            }
            alpha *= 0.5;
        }

        let Some((x_new, f_new, g_new)) = accepted.or(fallback) else {
            if just_reset {
                break Termination::LineSearchFailed;
            }
            // Retry once from a fresh curvature model.
            h_inv = DMatrix::identity(n, n) * (1.0 / gx.amax().max(1.0));
            scaled_identity = true;
            just_reset = true;
            continue;
        };
        just_reset = false;

        let s = &x_new - &x;
        let y = &g_new - &gx;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if scaled_identity {
                h_inv = DMatrix::identity(n, n) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H⁺ = H − ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            h_inv -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho);
            scaled_identity = false;
        }
        x = x_new;
        fx = f_new;
        gx = g_new;
        value_history.push(fx);
    };

    BfgsOutcome {
        x,
        value: fx,
        gradient: gx,
        iterations,
        evaluations: ev.count,
        termination,
        value_history,
    }
}
