//! Derivative-free simplex minimizer (Nelder–Mead).
//!
//! Small and self-contained; the spectral fits use it with multiple
//! starts over log-spaced linewidth initializations, so robustness
//! against bad starts comes from the multi-start layer rather than the
//! local optimizer.

/// Options controlling one simplex descent.
#[derive(Debug, Clone, Copy)]
pub struct NmOptions {
    pub max_iter: usize,
    /// Converged when the simplex function-value spread drops below this.
    pub f_tol: f64,
    /// ... or when the simplex collapses below this relative size.
    pub x_tol: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        NmOptions { max_iter: 4000, f_tol: 1e-9, x_tol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub fval: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimize `f` starting from `x0`, with `scale` setting the initial
/// simplex edge along each coordinate.
pub fn minimize<F>(f: F, x0: &[f64], scale: &[f64], opts: NmOptions) -> NmResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    assert!(n > 0 && scale.len() == n);
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if scale[i] != 0.0 { scale[i] } else { 1e-3 };
        simplex.push(v);
    }
    let mut fvals: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        // Order best..worst.
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| fvals[a].partial_cmp(&fvals[b]).unwrap_or(std::cmp::Ordering::Equal));
        let best = idx[0];
        let worst = idx[n];
        let second_worst = idx[n - 1];

        let spread = (fvals[worst] - fvals[best]).abs();
        let size: f64 = (0..n)
            .map(|j| {
                simplex
                    .iter()
                    .map(|v| (v[j] - simplex[best][j]).abs())
                    .fold(0.0, f64::max)
                    / simplex[best][j].abs().max(1.0)
            })
            .fold(0.0, f64::max);
        if spread < opts.f_tol || size < opts.x_tol {
            converged = true;
            break;
        }

        // Centroid of all but the worst.
        let mut centroid = vec![0.0; n];
        for (k, v) in simplex.iter().enumerate() {
            if k == worst {
                continue;
            }
            for j in 0..n {
                centroid[j] += v[j];
            }
        }
        for c in centroid.iter_mut() {
            *c /= n as f64;
        }

        let blend = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
            (0..n).map(|j| a[j] + t * (b[j] - a[j])).collect()
        };

        // Reflection.
        let xr = blend(&centroid, &simplex[worst], -alpha);
        let fr = f(&xr);
        if fr < fvals[best] {
            // Expansion.
            let xe = blend(&centroid, &simplex[worst], -alpha * gamma);
            let fe = f(&xe);
            if fe < fr {
                simplex[worst] = xe;
                fvals[worst] = fe;
            } else {
                simplex[worst] = xr;
                fvals[worst] = fr;
            }
        } else if fr < fvals[second_worst] {
            simplex[worst] = xr;
            fvals[worst] = fr;
        } else {
            // Contraction (outside if the reflected point improved).
            let (xc, fc) = if fr < fvals[worst] {
                let xc = blend(&centroid, &xr, rho);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = blend(&centroid, &simplex[worst], rho);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < fvals[worst].min(fr) {
                simplex[worst] = xc;
                fvals[worst] = fc;
            } else {
                // Shrink toward the best vertex.
                let best_v = simplex[best].clone();
                for (k, v) in simplex.iter_mut().enumerate() {
                    if k == best {
                        continue;
                    }
                    *v = blend(&best_v, v, sigma);
                    fvals[k] = f(v);
                }
            }
        }
    }

    let (mut bi, mut bf) = (0, fvals[0]);
    for (k, &fv) in fvals.iter().enumerate() {
        if fv < bf {
            bi = k;
            bf = fv;
        }
    }
    NmResult { x: simplex.swap_remove(bi), fval: bf, iterations, converged }
}
