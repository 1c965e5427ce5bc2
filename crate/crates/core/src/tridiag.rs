//! Tridiagonal and cyclic tridiagonal direct solvers.
//!
//! Row `i` reads `sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i]`. In the
//! cyclic variant `sub[0]` couples to `x[n-1]` and `sup[n-1]` to `x[0]`.

use crate::scalar::Real;

/// Thomas algorithm; `rhs` is overwritten with the solution. `scratch` needs `n` slots.
pub fn solve<S: Real>(sub: &[S], diag: &[S], sup: &[S], rhs: &mut [S], scratch: &mut [S]) {
    let n = rhs.len();
    debug_assert!(sub.len() >= n && diag.len() >= n && sup.len() >= n && scratch.len() >= n);
    if n == 0 {
        return;
    }
    let mut beta = diag[0];
    rhs[0] /= beta;
    for i in 1..n {
        scratch[i] = sup[i - 1] / beta;
        beta = diag[i] - sub[i] * scratch[i];
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        let next = rhs[i + 1];
        rhs[i] -= scratch[i + 1] * next;
    }
}

/// Periodic system via Sherman-Morrison on top of [`solve`].
pub fn solve_cyclic<S: Real>(sub: &[S], diag: &[S], sup: &[S], rhs: &mut [S]) {
    let n = rhs.len();
    match n {
        0 => {}
        1 => rhs[0] /= diag[0] + sub[0] + sup[0],
        2 => {
            // both neighbours of each node are the other node
            let a = diag[0];
            let b = sub[0] + sup[0];
            let c = sub[1] + sup[1];
            let d = diag[1];
            let det = a * d - b * c;
            let (r0, r1) = (rhs[0], rhs[1]);
            rhs[0] = (d * r0 - b * r1) / det;
            rhs[1] = (a * r1 - c * r0) / det;
        }
        _ => {
            let corner_top = sub[0];
            let corner_bottom = sup[n - 1];
            let gamma = -diag[0];
            let mut bb = diag[..n].to_vec();
            bb[0] = diag[0] - gamma;
            bb[n - 1] = diag[n - 1] - corner_bottom * corner_top / gamma;
            let mut scratch = vec![S::zero(); n];
            solve(sub, &bb, sup, rhs, &mut scratch);
            let mut z = vec![S::zero(); n];
            z[0] = gamma;
            z[n - 1] = corner_bottom;
            solve(sub, &bb, sup, &mut z, &mut scratch);
            let fact = (rhs[0] + corner_top * rhs[n - 1] / gamma)
                / (S::one() + z[0] + corner_top * z[n - 1] / gamma);
            for i in 0..n {
                rhs[i] -= fact * z[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_apply(sub: &[f64], diag: &[f64], sup: &[f64], x: &[f64], cyclic: bool) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let mut v = diag[i] * x[i];
                if i > 0 {
                    v += sub[i] * x[i - 1];
                } else if cyclic {
                    v += sub[0] * x[n - 1];
                }
                if i + 1 < n {
                    v += sup[i] * x[i + 1];
                } else if cyclic {
                    v += sup[n - 1] * x[0];
                }
                v
            })
            .collect()
    }

    proptest! {
        #[test]
        fn solves_diagonally_dominant_systems(
            n in 2usize..40,
            cyclic in any::<bool>(),
            seed in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, -5.0f64..5.0), 40),
        ) {
            let n = if cyclic { n.max(3) } else { n };
            let sub: Vec<f64> = seed.iter().take(n).map(|s| -s.0).collect();
            let sup: Vec<f64> = seed.iter().take(n).map(|s| -s.1).collect();
            let diag: Vec<f64> = (0..n).map(|i| 1.0 + seed[i].0 + seed[i].1).collect();
            let x: Vec<f64> = seed.iter().take(n).map(|s| s.2).collect();
            let mut rhs = dense_apply(&sub, &diag, &sup, &x, cyclic);
            if cyclic {
                solve_cyclic(&sub, &diag, &sup, &mut rhs);
            } else {
                let mut scratch = vec![0.0; n];
                solve(&sub, &diag, &sup, &mut rhs, &mut scratch);
            }
            for i in 0..n {
                prop_assert!((rhs[i] - x[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn two_node_cycle() {
        let sub = [-0.25, -0.5];
        let sup = [-0.25, -0.5];
        let diag = [2.0, 3.0];
        let x = [1.0f64, -2.0];
        // each node couples to the other through both neighbours
        let mut rhs: [f64; 2] = [2.0 * 1.0 - 0.5 * -2.0, 3.0 * -2.0 - 1.0 * 1.0];
        solve_cyclic(&sub, &diag, &sup, &mut rhs);
        assert!((rhs[0] - x[0]).abs() < 1e-14 && (rhs[1] - x[1]).abs() < 1e-14);
    }
}
