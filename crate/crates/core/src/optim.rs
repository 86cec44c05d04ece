//! Derivative-free simplex minimiser.

#[derive(Debug, Clone, Copy)]
pub struct NelderMead {
    pub max_iter: usize,
    /// Stop once the simplex's function-value spread is within
    /// `tol * (1 + |f_best|)`.
    pub tol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

impl NelderMead {
    /// Minimises `f` from `x0`, building the initial simplex by stepping each
    /// coordinate by `steps[i]`. Infeasible points should evaluate to
    /// `f64::INFINITY`; the simplex then contracts away from them.
    pub fn minimize<F>(&self, mut f: F, x0: &[f64], steps: &[f64]) -> Minimum
    where
        F: FnMut(&[f64]) -> f64,
    {
        let dim = x0.len();
        assert_eq!(dim, steps.len(), "one step per coordinate");
        let mut eval = |x: &[f64]| {
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };

        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
        simplex.push((x0.to_vec(), eval(x0)));
        for i in 0..dim {
            let mut x = x0.to_vec();
            x[i] += steps[i];
            let fx = eval(&x);
            simplex.push((x, fx));
        }

        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.max_iter {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let worst = simplex[dim].1;
            if best.is_finite() && (worst - best).abs() <= self.tol * (1.0 + best.abs()) {
                converged = true;
                break;
            }
            iterations += 1;

            let centroid: Vec<f64> = (0..dim)
                .map(|j| simplex[..dim].iter().map(|(x, _)| x[j]).sum::<f64>() / dim as f64)
                .collect();
            let toward = |coef: f64, from: &[f64]| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(from)
                    .map(|(c, w)| c + coef * (c - w))
                    .collect()
            };

            let worst_x = simplex[dim].0.clone();
            let reflected = toward(REFLECT, &worst_x);
            let f_reflected = eval(&reflected);

            if f_reflected < best {
                let expanded = toward(EXPAND, &worst_x);
                let f_expanded = eval(&expanded);
                simplex[dim] = if f_expanded < f_reflected {
                    (expanded, f_expanded)
                } else {
                    (reflected, f_reflected)
                };
                continue;
            }
            if f_reflected < simplex[dim - 1].1 {
                simplex[dim] = (reflected, f_reflected);
                continue;
            }

            let (contracted, f_contracted) = if f_reflected < worst {
                let x = toward(CONTRACT, &worst_x);
                let fx = eval(&x);
                (x, fx)
            } else {
                let x = toward(-CONTRACT, &worst_x);
                let fx = eval(&x);
                (x, fx)
            };
            if f_contracted < worst.min(f_reflected) {
                simplex[dim] = (contracted, f_contracted);
                continue;
            }

            let best_x = simplex[0].0.clone();
            for (x, fx) in simplex.iter_mut().skip(1) {
                for (xi, bi) in x.iter_mut().zip(&best_x) {
                    *xi = bi + SHRINK * (*xi - bi);
                }
                *fx = eval(x);
            }
        }

        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, fx) = simplex.swap_remove(0);
        Minimum {
            x,
            fx,
            iterations,
            converged,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let m = NelderMead::default().minimize(
            |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2),
            &[0.0, 0.0],
            &[0.5, 0.5],
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] + 2.0).abs() < 1e-3);
    }

    #[test]
    fn rosenbrock_with_enough_iterations() {
        let nm = NelderMead {
            max_iter: 5000,
            tol: 1e-14,
        };
        let m = nm.minimize(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.1, 0.1],
        );
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn respects_infeasible_region() {
        let m = NelderMead::default().minimize(
            |x| if x[0] < 0.5 { f64::INFINITY } else { x[0] * x[0] },
            &[2.0],
            &[0.3],
        );
        assert!(m.x[0] >= 0.5 && m.x[0] < 0.51, "{:?}", m.x);
    }
}
