//! Nelder-Mead downhill simplex.

#[derive(Debug, Clone)]
pub struct SimplexOutcome {
    pub best: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimises `f` starting from `start` with an axis-aligned initial simplex
/// of edge `step[k]` along each coordinate.
///
/// Stops when `(f_worst - f_best) <= tol * (|f_best| + 1e-300)` or after
/// `max_iters` iterations. Non-finite objective values are treated as worse
/// than any finite value.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    start: &[f64],
    step: &[f64],
    max_iters: usize,
    tol: f64,
) -> SimplexOutcome {
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;

    let n = start.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(start.to_vec());
    for k in 0..n {
        let mut p = start.to_vec();
        p[k] += step[k];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let (best, worst) = (vals[0], vals[n]);
        if best.is_finite() && worst - best <= tol * (best.abs() + 1e-300) {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|k| pts[..n].iter().map(|p| p[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |coef: f64| -> Vec<f64> {
            (0..n)
                .map(|k| centroid[k] + coef * (pts[n][k] - centroid[k]))
                .collect()
        };

        let xr = along(-REFLECT);
        let fr = eval(&xr);
        if fr < vals[0] {
            let xe = along(-EXPAND);
            let fe = eval(&xe);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let xc = along(-CONTRACT);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(CONTRACT);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < vals[n].min(fr) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        for i in 1..=n {
            let p: Vec<f64> = (0..n)
                .map(|k| pts[0][k] + SHRINK * (pts[i][k] - pts[0][k]))
                .collect();
            vals[i] = eval(&p);
            pts[i] = p;
        }
    }

    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    SimplexOutcome {
        best: pts[best].clone(),
        value: vals[best],
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_minimum() {
        let out = nelder_mead(
            |x| (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2) + 1.0,
            &[0.0, 0.0],
            &[1.0, 1.0],
            500,
            1e-12,
        );
        assert!(out.converged);
        assert!((out.best[0] - 3.0).abs() < 1e-4);
        assert!((out.best[1] + 2.0).abs() < 1e-4);
    }

    #[test]
    fn rosenbrock() {
        let out = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.5, 0.5],
            5000,
            1e-14,
        );
        assert!((out.best[0] - 1.0).abs() < 1e-3, "{:?}", out);
    }

    #[test]
    fn infinite_region_is_avoided() {
        let out = nelder_mead(
            |x| if x[0] < 0.5 { f64::INFINITY } else { (x[0] - 1.0).powi(2) },
            &[2.0],
            &[1.0],
            200,
            1e-12,
        );
        assert!((out.best[0] - 1.0).abs() < 1e-4);
    }
}
