//! One-sided (Hestenes) Jacobi singular value decomposition in `f64`.

/// Thin SVD `A = U diag(s) Vt` of a `rows x cols` matrix, singular values
/// sorted in descending order. `u` is `rows x k`, `vt` is `k x cols`, with
/// `k = min(rows, cols)`, all row-major.
#[derive(Clone, Debug)]
pub struct Svd {
    pub rows: usize,
    pub cols: usize,
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    pub vt: Vec<f64>,
}

pub const JACOBI_TOLERANCE: f64 = 1e-10;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Returns `None` when the rotations have not settled after `max_sweeps`.
pub fn jacobi_svd(a: &[f64], rows: usize, cols: usize, tol: f64, max_sweeps: usize) -> Option<Svd> {
    assert_eq!(a.len(), rows * cols);
    if rows < cols {
        // decompose the transpose and swap the factors
        let mut at = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                at[j * rows + i] = a[i * cols + j];
            }
        }
        let t = jacobi_svd(&at, cols, rows, tol, max_sweeps)?;
        let k = t.s.len();
        // A = (Vt_t)^T diag(s) (U_t)^T
        let mut u = vec![0.0; rows * k];
        for i in 0..k {
            for r in 0..rows {
                u[r * k + i] = t.vt[i * rows + r];
            }
        }
        let mut vt = vec![0.0; k * cols];
        for c in 0..cols {
            for i in 0..k {
                vt[i * cols + c] = t.u[c * k + i];
            }
        }
        return Some(Svd {
            rows,
            cols,
            u,
            s: t.s,
            vt,
        });
    }

    // columns of `w` are rotated until mutually orthogonal; `v` accumulates the rotations
    let n = cols;
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| (0..rows).map(|i| a[i * cols + j]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut converged = n < 2;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = w[p].iter().map(|x| x * x).sum();
                let beta: f64 = w[q].iter().map(|x| x * x).sum();
                let gamma: f64 = w[p].iter().zip(&w[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return None;
    }

    let norms: Vec<f64> = w.iter().map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let k = n;
    let mut u = vec![0.0; rows * k];
    let mut s = vec![0.0; k];
    let mut vt = vec![0.0; k * n];
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        s[dst] = sigma;
        if sigma > 0.0 {
            for r in 0..rows {
                u[r * k + dst] = w[src][r] / sigma;
            }
        }
        for c in 0..n {
            vt[dst * n + c] = v[src][c];
        }
    }
    Some(Svd {
        rows,
        cols,
        u,
        s,
        vt,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}
