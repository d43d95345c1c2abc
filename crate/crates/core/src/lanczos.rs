//! Matrix-free Lanczos for the low end of a real symmetric spectrum.
//!
//! Eigenpairs are found one at a time and locked: each run works in the
//! orthogonal complement of the pairs already found, so degenerate
//! eigenvalues appear with their full multiplicity.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LanczosConfig {
    /// Largest Krylov dimension per run.
    pub max_krylov: usize,
    /// Convergence once ‖Ax − θx‖ < tol·max(1, |θ|).
    pub tol: f64,
    pub seed: u64,
}

impl Default for LanczosConfig {
    fn default() -> Self {
        Self { max_krylov: 600, tol: 1e-9, seed: 7 }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    // twice is enough for numerical orthogonality
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            axpy(v, -c, b);
        }
    }
}

/// The `count` algebraically smallest eigenpairs of the symmetric operator `op` on ℝ^dim,
/// ascending. Vectors are unit-normalized in the plain dot product.
pub fn lowest_eigenpairs(
    op: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    dim: usize,
    count: usize,
    cfg: &LanczosConfig,
) -> Result<Vec<(f64, Vec<f64>)>> {
    if count == 0 || count > dim {
        return Err(Error::InvalidParameter(format!("cannot take {count} eigenpairs of a {dim}-dimensional operator")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut locked: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let start: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (theta, x) = lowest_one(op, start, &locked, dim, cfg)?;
        out.push((theta, x.clone()));
        locked.push(x);
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

fn lowest_one(
    op: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    mut v: Vec<f64>,
    locked: &[Vec<f64>],
    dim: usize,
    cfg: &LanczosConfig,
) -> Result<(f64, Vec<f64>)> {
    let free = dim - locked.len();
    let max_m = cfg.max_krylov.min(free).max(1);
    project_out(&mut v, locked);
    let nv = dot(&v, &v).sqrt();
    if !(nv > 0.0) {
        return Err(Error::NoConvergence("Lanczos start vector vanished after deflation".into()));
    }
    v.iter_mut().for_each(|x| *x /= nv);
    let mut basis: Vec<Vec<f64>> = vec![v];
    let (mut alpha, mut beta): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
    let check_every = 10;
    loop {
        let m = basis.len();
        let mut w = op(&basis[m - 1]);
        project_out(&mut w, locked);
        let a = dot(&w, &basis[m - 1]);
        alpha.push(a);
        // full reorthogonalization against the Krylov basis
        project_out(&mut w, &basis);
        project_out(&mut w, locked);
        let b = dot(&w, &w).sqrt();
        let exhausted = b <= 1e-14 * a.abs().max(1.0) || m == max_m;
        if m % check_every == 0 || exhausted {
            let t = DMatrix::from_fn(m, m, |i, j| {
                if i == j {
                    alpha[i]
                } else if i + 1 == j {
                    beta[i]
                } else if j + 1 == i {
                    beta[j]
                } else {
                    0.0
                }
            });
            let eig = SymmetricEigen::new(t);
            let (k, &theta) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|x, y| x.1.total_cmp(y.1))
                .ok_or_else(|| Error::NoConvergence("empty Krylov space".into()))?;
            let y = eig.eigenvectors.column(k);
            let res = b * y[m - 1].abs();
            if res < cfg.tol * theta.abs().max(1.0) || b <= 1e-14 * a.abs().max(1.0) {
                let mut x = vec![0.0; dim];
                for (j, q) in basis.iter().enumerate() {
                    axpy(&mut x, y[j], q);
                }
                project_out(&mut x, locked);
                let nx = dot(&x, &x).sqrt();
                x.iter_mut().for_each(|c| *c /= nx);
                return Ok((theta, x));
            }
            if m == max_m {
                return Err(Error::NoConvergence(format!(
                    "Lanczos: residual {res:.3e} after {m} steps"
                )));
            }
        }
        beta.push(b);
        w.iter_mut().for_each(|x| *x /= b);
        basis.push(w);
    }
}
