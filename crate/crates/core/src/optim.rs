//! BFGS on an unconstrained parameterisation, stopping on the norm of the
//! estimating function rather than on objective decrease.

use crate::error::Result;

/// One evaluation of the objective.
#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub f: f64,
    pub grad: Vec<f64>,
    /// Quantity whose smallness defines convergence.
    pub root_norm: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Settings {
    pub tolerance: f64,
    /// Stop once a step moves no coordinate by more than this.
    pub step_tolerance: f64,
    pub max_iterations: usize,
    /// Largest ∞-norm of a single trial step.
    pub max_step: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub point: Point,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
}

const ARMIJO_C1: f64 = 1e-4;
// Approximate Wolfe constants (Hager and Zhang's δ, σ, ε).
const AW_DELTA: f64 = 0.1;
const AW_SIGMA: f64 = 0.9;
const AW_EPS: f64 = 1e-10;
const MAX_HALVINGS: usize = 60;
// Iterations without a new best root norm before stopping.
const STALL_ITERATIONS: usize = 25;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn is_usable(p: &Point) -> bool {
    p.f.is_finite() && p.grad.iter().all(|g| g.is_finite())
}

pub(crate) fn minimize<F>(x0: Vec<f64>, mut eval: F, settings: &Settings) -> Result<Outcome>
where
    F: FnMut(&[f64]) -> Result<Point>,
{
    let d = x0.len();
    let mut x = x0;
    let mut point = eval(&x)?;
    if !is_usable(&point) {
        return Err(crate::Error::Domain(
            "objective is not finite at the starting value".into(),
        ));
    }
    // Inverse Hessian approximation, row-major.
    let mut h = identity(d);
    let mut fresh = true;
    let mut iterations = 0;
    let mut best_root_norm = point.root_norm;
    let mut since_best = 0;
    let mut trace = vec![point.f];

    while iterations < settings.max_iterations {
        if point.root_norm <= settings.tolerance {
            return Ok(Outcome {
                x,
                point,
                iterations,
                converged: true,
                trace,
            });
        }
        iterations += 1;

        let mut dir = mat_vec(&h, &point.grad, -1.0);
        let mut slope = dot(&point.grad, &dir);
        if !(slope < 0.0) {
            h = identity(d);
            fresh = true;
            dir = point.grad.iter().map(|g| -g).collect();
            slope = dot(&point.grad, &dir);
        }
        let longest = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut t = if longest > settings.max_step {
            settings.max_step / longest
        } else {
            1.0
        };

        let mut accepted: Option<(Vec<f64>, Point)> = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            if trial == x {
                break;
            }
            if let Ok(p) = eval(&trial) {
                if is_usable(&p) {
                    let armijo = p.f < point.f && p.f <= point.f + ARMIJO_C1 * t * slope;
                    // Near the optimum f stops resolving the decrease; accept
                    // steps meeting the approximate Wolfe conditions instead.
                    let new_slope = dot(&p.grad, &dir);
                    let flat = p.f <= point.f + AW_EPS * point.f.abs();
                    let approx_wolfe =
                        flat && (2.0 * AW_DELTA - 1.0) * slope >= new_slope && new_slope >= AW_SIGMA * slope;
                    if armijo || approx_wolfe || (flat && p.root_norm < point.root_norm) {
                        accepted = Some((trial, p));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        let Some((x_new, p_new)) = accepted else {
            if !fresh {
                // Retry along steepest descent before giving up.
                h = identity(d);
                fresh = true;
                continue;
            }
            return Ok(Outcome {
                converged: point.root_norm <= 10.0 * settings.tolerance,
                x,
                point,
                iterations,
                trace,
            });
        };
        if p_new.root_norm < best_root_norm {
            best_root_norm = p_new.root_norm;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= STALL_ITERATIONS {
                return Ok(Outcome {
                    converged: point.root_norm <= 10.0 * settings.tolerance,
                    x,
                    point,
                    iterations,
                    trace,
                });
            }
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = p_new.grad.iter().zip(&point.grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                // Shanno scaling of the initial inverse Hessian.
                let scale = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= scale);
            }
            bfgs_update(&mut h, &s, &y, sy);
            fresh = false;
        }
        let step = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        x = x_new;
        point = p_new;
        trace.push(point.f);
        if step < settings.step_tolerance && point.root_norm > settings.tolerance {
            return Ok(Outcome {
                converged: point.root_norm <= 10.0 * settings.tolerance,
                x,
                point,
                iterations,
                trace,
            });
        }
    }
    let converged = point.root_norm <= settings.tolerance;
    Ok(Outcome {
        x,
        point,
        iterations,
        converged,
        trace,
    })
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

fn mat_vec(m: &[f64], v: &[f64], scale: f64) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|i| scale * dot(&m[i * d..(i + 1) * d], v)).collect()
}

// H ← (I − ρsyᵀ)H(I − ρysᵀ) + ρssᵀ
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let d = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y, 1.0);
    let yhy = dot(y, &hy);
    for i in 0..d {
        for j in 0..d {
            h[i * d + j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<Point> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let grad = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        let root_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        Ok(Point { f, grad, root_norm })
    }

    #[test]
    fn solves_rosenbrock() {
        let s = Settings {
            tolerance: 1e-9,
            step_tolerance: 1e-14,
            max_iterations: 500,
            max_step: 10.0,
        };
        let out = minimize(vec![-1.2, 1.0], rosenbrock, &s).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-7 && (out.x[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn quadratic_converges_to_tight_tolerance() {
        let f = |x: &[f64]| -> Result<Point> {
            let grad = vec![2.0 * (x[0] - 3.0), 20.0 * (x[1] + 1.0), 0.2 * x[2]];
            let f = (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2) + 0.1 * x[2] * x[2];
            let root_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            Ok(Point { f, grad, root_norm })
        };
        let s = Settings {
            tolerance: 1e-12,
            step_tolerance: 1e-14,
            max_iterations: 200,
            max_step: 10.0,
        };
        let out = minimize(vec![0.0, 0.0, 5.0], f, &s).unwrap();
        assert!(out.converged, "{:?}", out.point);
    }
}
