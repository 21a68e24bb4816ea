//! Sequential minimal optimization for the linear soft-margin SVM dual.
//!
//! Working-set selection follows the second-order rule of Fan, Chen & Lin
//! (2005): `i` maximizes the violation over the "up" set and `j` maximizes the
//! guaranteed objective decrease over the "low" set. The solver stops once the
//! maximal KKT violation `m(α) − M(α)` drops to `tol`.
//!
//! With a linear kernel the gradient update for a pair `(i, j)` only needs
//! `x_t · (x_i − x_j)`, so the weight vector is maintained explicitly and no
//! kernel cache is kept.

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub alphas: Vec<f64>,
    pub iterations: usize,
    /// `m(α) − M(α)` at termination.
    pub kkt_gap: f64,
    pub converged: bool,
}

impl BinarySolution {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trains a binary linear SVM. `y` holds `+1.0` / `-1.0`.
pub fn solve_linear(x: &[Vec<f64>], y: &[f64], c: f64, tol: f64, max_iter: usize) -> BinarySolution {
    let n = x.len();
    let dim = x.first().map_or(0, Vec::len);
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut w = vec![0.0; dim];
    let diag: Vec<f64> = x.iter().map(|xi| dot(xi, xi)).collect();

    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    let mut converged = false;
    let mut diff = vec![0.0; dim];

    while iterations < max_iter {
        // Select i.
        let mut g_max = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > g_max {
                    g_max = v;
                    i = t;
                }
            }
        }
        // Select j by second-order gain; track M(α) alongside.
        let mut g_min = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best_obj = f64::INFINITY;
        if i != usize::MAX {
            for t in 0..n {
                if !in_low(alpha[t], y[t]) {
                    continue;
                }
                let v = -y[t] * grad[t];
                g_min = g_min.min(v);
                let b = g_max - v;
                if b > 0.0 {
                    let a = diag[i] + diag[t] - 2.0 * dot(&x[i], &x[t]);
                    let obj = -(b * b) / if a > 0.0 { a } else { TAU };
                    if obj < best_obj {
                        best_obj = obj;
                        j = t;
                    }
                }
            }
        }
        gap = if i == usize::MAX || g_min == f64::INFINITY {
            0.0
        } else {
            g_max - g_min
        };
        if gap <= tol || j == usize::MAX {
            converged = true;
            break;
        }

        let a = {
            let a = diag[i] + diag[j] - 2.0 * dot(&x[i], &x[j]);
            if a > 0.0 {
                a
            } else {
                TAU
            }
        };
        let b = -y[i] * grad[i] + y[j] * grad[j];
        let mut step = b / a;
        step = step.min(if y[i] > 0.0 { c - alpha[i] } else { alpha[i] });
        step = step.min(if y[j] > 0.0 { alpha[j] } else { c - alpha[j] });

        alpha[i] = (alpha[i] + y[i] * step).clamp(0.0, c);
        alpha[j] = (alpha[j] - y[j] * step).clamp(0.0, c);

        for (d, (xi, xj)) in diff.iter_mut().zip(x[i].iter().zip(&x[j])) {
            *d = xi - xj;
        }
        for (wk, dk) in w.iter_mut().zip(&diff) {
            *wk += step * dk;
        }
        for t in 0..n {
            grad[t] += y[t] * step * dot(&x[t], &diff);
        }
        iterations += 1;
    }

    BinarySolution {
        bias: -rho(&alpha, &grad, y, c),
        weights: w,
        alphas: alpha,
        iterations,
        kkt_gap: gap,
        converged,
    }
}

/// Offset from the free support vectors, or the midpoint of the feasible
/// interval when every multiplier sits at a bound.
fn rho(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum) = (0usize, 0.0);
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    if free > 0 {
        sum / free as f64
    } else if ub.is_finite() && lb.is_finite() {
        (ub + lb) / 2.0
    } else if ub.is_finite() {
        ub
    } else if lb.is_finite() {
        lb
    } else {
        0.0
    }
}
