//! Derivative-free local minimisation used by the likelihood fits, the
//! profile sweeps and the continuous design solver.

/// Adaptive Nelder-Mead simplex search (dimension-dependent coefficients).
#[derive(Debug, Clone)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Relative spread of objective values across the simplex.
    pub ftol: f64,
    /// Largest coordinate distance between any vertex and the best vertex.
    pub xtol: f64,
    pub initial_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            max_evals: 2000,
            ftol: 1e-10,
            xtol: 1e-8,
            initial_step: 0.25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

impl NelderMead {
    pub fn with_max_evals(mut self, max_evals: usize) -> Self {
        self.max_evals = max_evals;
        self
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.initial_step = step;
        self
    }

    pub fn minimize<F>(&self, mut f: F, x0: &[f64]) -> Minimum
    where
        F: FnMut(&[f64]) -> f64,
    {
        let n = x0.len();
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
            *evals += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };
        if n == 0 {
            let value = eval(x0, &mut evals);
            return Minimum {
                x: Vec::new(),
                value,
                evals,
                converged: true,
            };
        }

        let nf = n as f64;
        let (alpha, beta, gamma, delta) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);

        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        simplex.push(x0.to_vec());
        for i in 0..n {
            let mut v = x0.to_vec();
            v[i] += self.initial_step;
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();
        let mut order: Vec<usize> = (0..=n).collect();
        let mut centroid = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut trial2 = vec![0.0; n];
        let mut converged = false;

        loop {
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            let best = order[0];
            let worst = order[n];
            let second_worst = order[n - 1];

            let f_lo = values[best];
            let f_hi = values[worst];
            let spread_ok = (f_hi - f_lo).abs() <= self.ftol * (f_lo.abs() + self.ftol);
            let diameter = simplex
                .iter()
                .map(|v| {
                    v.iter()
                        .zip(&simplex[best])
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if f_lo.is_finite() && spread_ok && diameter <= self.xtol {
                converged = true;
                break;
            }
            if evals >= self.max_evals {
                break;
            }

            centroid.iter_mut().for_each(|c| *c = 0.0);
            for &idx in &order[..n] {
                for (c, x) in centroid.iter_mut().zip(&simplex[idx]) {
                    *c += x / nf;
                }
            }

            for j in 0..n {
                trial[j] = centroid[j] + alpha * (centroid[j] - simplex[worst][j]);
            }
            let f_r = eval(&trial, &mut evals);

            if f_r < f_lo {
                for j in 0..n {
                    trial2[j] = centroid[j] + beta * (trial[j] - centroid[j]);
                }
                let f_e = eval(&trial2, &mut evals);
                if f_e < f_r {
                    simplex[worst].copy_from_slice(&trial2);
                    values[worst] = f_e;
                } else {
                    simplex[worst].copy_from_slice(&trial);
                    values[worst] = f_r;
                }
                continue;
            }
            if f_r < values[second_worst] {
                simplex[worst].copy_from_slice(&trial);
                values[worst] = f_r;
                continue;
            }

            // contraction, outside or inside
            let outside = f_r < f_hi;
            for j in 0..n {
                trial2[j] = if outside {
                    centroid[j] + gamma * (trial[j] - centroid[j])
                } else {
                    centroid[j] - gamma * (centroid[j] - simplex[worst][j])
                };
            }
            let f_c = eval(&trial2, &mut evals);
            let accept = if outside { f_c <= f_r } else { f_c < f_hi };
            if accept {
                simplex[worst].copy_from_slice(&trial2);
                values[worst] = f_c;
                continue;
            }

            // shrink towards the best vertex
            let anchor = simplex[best].clone();
            for &idx in &order[1..] {
                for (x, a) in simplex[idx].iter_mut().zip(&anchor) {
                    *x = a + delta * (*x - a);
                }
                values[idx] = eval(&simplex[idx], &mut evals);
            }
        }

        let best = (0..=n)
            .min_by(|&a, &b| values[a].total_cmp(&values[b]))
            .unwrap_or(0);
        Minimum {
            x: simplex[best].clone(),
            value: values[best],
            evals,
            converged,
        }
    }

    /// Restart the simplex at the incumbent until a restart no longer improves
    /// the objective. Guards against premature simplex collapse.
    pub fn minimize_with_restarts<F>(&self, mut f: F, x0: &[f64], max_restarts: usize) -> Minimum
    where
        F: FnMut(&[f64]) -> f64,
    {
        let mut best = self.minimize(&mut f, x0);
        let mut total = best.evals;
        for _ in 0..max_restarts {
            let next = self.minimize(&mut f, &best.x);
            total += next.evals;
            let improved = next.value < best.value - self.ftol * (best.value.abs() + self.ftol);
            let converged = next.converged;
            if next.value <= best.value {
                best = next;
            }
            best.converged = converged;
            if !improved {
                break;
            }
        }
        best.evals = total;
        best
    }
}

/// Smooth bijection between the real line and `(lo, hi)` in log space.
#[derive(Debug, Clone, Copy)]
pub struct LogBox {
    log_lo: f64,
    log_hi: f64,
}

impl LogBox {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo > 0.0 && hi > lo);
        LogBox {
            log_lo: lo.ln(),
            log_hi: hi.ln(),
        }
    }

    pub fn lo(&self) -> f64 {
        self.log_lo.exp()
    }

    pub fn hi(&self) -> f64 {
        self.log_hi.exp()
    }

    pub fn to_value(&self, z: f64) -> f64 {
        let s = 1.0 / (1.0 + (-z).exp());
        (self.log_lo + (self.log_hi - self.log_lo) * s).exp()
    }

    /// Inverse map; values at or beyond the bounds are pulled just inside.
    pub fn to_free(&self, x: f64) -> f64 {
        let s = ((x.ln() - self.log_lo) / (self.log_hi - self.log_lo)).clamp(1e-9, 1.0 - 1e-9);
        (s / (1.0 - s)).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn finds_rosenbrock_minimum() {
        let nm = NelderMead::default().with_max_evals(5000).with_step(0.5);
        let m = nm.minimize(rosenbrock, &[-1.2, 1.0]);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn quadratic_in_ten_dimensions() {
        let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * (v - 0.3).powi(2)).sum::<f64>();
        let nm = NelderMead::default().with_max_evals(50_000);
        let m = nm.minimize_with_restarts(f, &[0.0; 10], 5);
        for v in &m.x {
            assert!((v - 0.3).abs() < 1e-5, "{:?}", m.x);
        }
    }

    #[test]
    fn eval_budget_reports_nonconvergence() {
        let nm = NelderMead::default().with_max_evals(20);
        let m = nm.minimize(rosenbrock, &[-1.2, 1.0]);
        assert!(!m.converged);
        assert!(m.evals <= 20 + 3);
    }

    #[test]
    fn nan_objective_is_treated_as_infinite() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 2.0).powi(2) };
        let m = NelderMead::default().minimize(f, &[1.0]);
        assert!((m.x[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn log_box_round_trips() {
        let b = LogBox::new(0.07, 0.52);
        for &x in &[0.08, 0.2, 0.5] {
            assert!((b.to_value(b.to_free(x)) - x).abs() < 1e-12);
        }
        assert!(b.to_value(-50.0) >= 0.07 * (1.0 - 1e-12) && b.to_value(50.0) <= 0.52 * (1.0 + 1e-12));
    }
}
