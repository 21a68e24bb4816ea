//! Platt sigmoid calibration, fitted with the regularized Newton method of
//! Lin, Lin & Weng (2007): `P(y = 1 | f) = 1 / (1 + exp(A·f + B))`.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlattParams {
    pub a: f64,
    pub b: f64,
}

impl PlattParams {
    pub fn probability(&self, decision: f64) -> f64 {
        sigmoid_neg(self.a * decision + self.b)
    }
}

/// `1 / (1 + exp(z))` without overflow.
fn sigmoid_neg(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

const MAX_ITER: usize = 100;
const MIN_STEP: f64 = 1e-10;
const SIGMA: f64 = 1e-12;
const EPS: f64 = 1e-5;

pub fn fit(decisions: &[f64], positive: &[bool]) -> PlattParams {
    let prior1 = positive.iter().filter(|&&p| p).count() as f64;
    let prior0 = positive.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();

    let objective = |a: f64, b: f64| -> f64 {
        decisions
            .iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = f * a + b;
                if z >= 0.0 {
                    ti * z + (1.0 + (-z).exp()).ln()
                } else {
                    (ti - 1.0) * z + (1.0 + z.exp()).ln()
                }
            })
            .sum()
    };

    let mut a = 0.0;
    let mut b = ((prior0 + 1.0) / (prior1 + 1.0)).ln();
    let mut fval = objective(a, b);

    for _ in 0..MAX_ITER {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
        for (&f, &ti) in decisions.iter().zip(&t) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < EPS && g2.abs() < EPS {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;

        let mut step = 1.0;
        let mut accepted = false;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                accepted = true;
                break;
            }
            step /= 2.0;
        }
        if !accepted {
            break;
        }
    }
    PlattParams { a, b }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_margins_get_increasing_sigmoid() {
        let f = [-3.0, -2.0, -1.5, -1.0, 1.0, 1.2, 2.0, 3.0];
        let y = [false, false, false, false, true, true, true, true];
        let p = fit(&f, &y);
        assert!(p.a < 0.0, "{p:?}");
        assert!(p.probability(2.0) > 0.8);
        assert!(p.probability(-2.0) < 0.2);
        assert!(p.probability(1.0) > p.probability(0.0));
    }

    #[test]
    fn symmetric_data_centres_at_zero() {
        let f = [-2.0, -1.0, 1.0, 2.0];
        let y = [false, false, true, true];
        let p = fit(&f, &y);
        assert!((p.probability(0.0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn extreme_inputs_stay_finite() {
        let p = PlattParams { a: -50.0, b: 0.0 };
        assert_eq!(p.probability(1e6), 1.0);
        assert_eq!(p.probability(-1e6), 0.0);
    }
}
