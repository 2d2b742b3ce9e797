//! Quasi-Newton minimization for the smooth, low-dimensional hyperparameter
//! objectives used by the GP fit.

pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
}

pub(crate) struct BfgsOptions {
    pub max_iter: usize,
    pub gtol: f64,
    pub ftol: f64,
    /// Largest step per coordinate along a search direction.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 200, gtol: 1e-6, ftol: 1e-10, max_step: 2.0 }
    }
}

/// BFGS with Armijo backtracking. `f` returns `None` where the objective is
/// undefined; the line search treats that as an increase.
pub(crate) fn bfgs(
    mut f: impl FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
    x0: &[f64],
    opts: &BfgsOptions,
) -> Option<Minimum> {
    let n = x0.len();
    let (mut fx, mut g) = f(x0)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut x = x0.to_vec();
    let mut h = identity(n);
    let mut scaled = false;

    for _ in 0..opts.max_iter {
        if g.iter().all(|v| v.abs() < opts.gtol) {
            break;
        }
        let mut d = mat_vec(&h, &g).into_iter().map(|v| -v).collect::<Vec<_>>();
        if dot(&d, &g) >= 0.0 {
            h = identity(n);
            d = g.iter().map(|v| -v).collect();
        }
        let longest = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut t = if longest > opts.max_step { opts.max_step / longest } else { 1.0 };
        let slope = dot(&d, &g);

        let mut accepted = None;
        for _ in 0..40 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            if let Some((fn_, gn)) = f(&xn) {
                if fn_.is_finite() && gn.iter().all(|v| v.is_finite()) && fn_ <= fx + 1e-4 * t * slope {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else { break };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let done = (fx - fn_).abs() <= opts.ftol * (1.0 + fx.abs());
        x = xn;
        fx = fn_;
        g = gn;
        if done {
            break;
        }
        if sy > 1e-12 {
            if !scaled {
                let gamma = sy / dot(&y, &y);
                h.iter_mut().flatten().for_each(|v| *v *= gamma);
                scaled = true;
            }
            update(&mut h, &s, &y, sy);
        }
    }
    Some(Minimum { x, f: fx })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// Inverse-Hessian update `H ← (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ`.
fn update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Some((v, g))
        };
        let opts = BfgsOptions { max_iter: 500, ftol: 0.0, gtol: 1e-9, ..Default::default() };
        let m = bfgs(f, &[-1.2, 1.0], &opts).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn undefined_region_is_avoided() {
        // log barrier: undefined for x ≤ 0
        let f = |x: &[f64]| (x[0] > 0.0).then(|| (x[0] - x[0].ln(), vec![1.0 - 1.0 / x[0]]));
        let m = bfgs(f, &[5.0], &BfgsOptions::default()).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-5);
    }
}
