use crate::error::{Error, Result};

use super::matrix::{dot, invalid_dim, norm2, Matrix, Vector};
use super::rng::Rng;

/// Uniformly distributed point on the unit sphere in `d` dimensions,
/// obtained by normalizing a standard Gaussian draw.
pub fn sample_unit_sphere(rng: &mut Rng, d: usize) -> Result<Vector> {
    if d == 0 {
        return Err(invalid_dim("unit sphere dimension must be at least 1"));
    }
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = norm2(&v);
        if norm > 1e-300 && norm.is_finite() {
            return Ok(v.into_iter().map(|x| x / norm).collect());
        }
    }
}

/// An `n x m` matrix with orthonormal columns: Gaussian draw followed by
/// modified Gram-Schmidt with one reorthogonalization pass.
pub fn orthonormal_columns(rng: &mut Rng, n: usize, m: usize) -> Result<Matrix> {
    if m == 0 || n < m {
        return Err(invalid_dim(format!(
            "orthonormal_columns needs n >= m >= 1, got n={n}, m={m}"
        )));
    }
    // Work column-major for contiguous column access.
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(m);
    while cols.len() < m {
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for _pass in 0..2 {
            for q in &cols {
                let proj = dot(q, &v);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= proj * qi;
                }
            }
        }
        let norm = norm2(&v);
        // Degenerate draw (numerically dependent); redraw.
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        cols.push(v);
    }
    let mut out = Matrix::zeros(n, m);
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            out.set(i, j, *v);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerIterOptions {
    pub iters: usize,
    /// Stop once the angle between successive iterates drops below this.
    pub tol: f64,
}

impl Default for PowerIterOptions {
    fn default() -> Self {
        PowerIterOptions {
            iters: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Eigenpair {
    /// Rayleigh quotient at the returned vector (signed).
    pub value: f64,
    pub vector: Vector,
    pub iterations: usize,
    pub converged: bool,
}

/// Dominant (largest magnitude) eigenpair of a symmetric linear operator,
/// started from a seeded random direction.
pub fn power_iteration<F>(
    apply: F,
    dim: usize,
    opts: PowerIterOptions,
    rng: &mut Rng,
) -> Result<Eigenpair>
where
    F: FnMut(&[f64]) -> Result<Vector>,
{
    let start = sample_unit_sphere(rng, dim)?;
    power_iteration_from(apply, &start, opts)
}

/// Power iteration from an explicit start vector.
pub fn power_iteration_from<F>(
    mut apply: F,
    start: &[f64],
    opts: PowerIterOptions,
) -> Result<Eigenpair>
where
    F: FnMut(&[f64]) -> Result<Vector>,
{
    let dim = start.len();
    if dim == 0 {
        return Err(invalid_dim("power iteration on an empty space"));
    }
    let start_norm = norm2(start);
    if !(start_norm > 0.0 && start_norm.is_finite()) {
        return Err(Error::NumericalFailure {
            iteration: 0,
            what: "start vector has zero or non-finite norm".into(),
        });
    }
    let mut v: Vec<f64> = start.iter().map(|x| x / start_norm).collect();
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.iters {
        iterations = it;
        let w = apply(&v)?;
        check_iterate(&w, dim, it)?;
        let norm = norm2(&w);
        if norm == 0.0 {
            // v lies in the null space; every direction is dominant.
            converged = true;
            break;
        }
        let next: Vec<f64> = w.iter().map(|x| x / norm).collect();
        let sign = if dot(&v, &next) < 0.0 { -1.0 } else { 1.0 };
        let chord = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - sign * b).powi(2))
            .sum::<f64>()
            .sqrt();
        let angle = 2.0 * (chord / 2.0).min(1.0).asin();
        v = next;
        if angle < opts.tol {
            converged = true;
            break;
        }
    }

    let av = apply(&v)?;
    check_iterate(&av, dim, iterations + 1)?;
    let value = dot(&v, &av);
    canonical_sign(&mut v);
    Ok(Eigenpair {
        value,
        vector: v.into(),
        iterations,
        converged,
    })
}

fn check_iterate(w: &[f64], dim: usize, iteration: usize) -> Result<()> {
    if w.len() != dim {
        return Err(Error::ShapeMismatch {
            op: "power_iteration",
            expected: format!("operator output of length {dim}"),
            found: format!("length {}", w.len()),
        });
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure {
            iteration,
            what: "non-finite operator output".into(),
        });
    }
    Ok(())
}

/// Flip `v` so that its first nonzero component is positive.
pub fn canonical_sign(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|x| **x != 0.0) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Unit eigenvectors as columns, matching `values`.
    pub vectors: Matrix,
}

pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    let n = a.rows();
    if n != a.cols() {
        return Err(invalid_dim(format!(
            "symmetric_eigen needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite {
            what: "symmetric_eigen input".into(),
        });
    }
    let mut m = a.clone();
    let mut vecs = Matrix::identity(n);
    let scale = a.max_abs().max(f64::MIN_POSITIVE);

    for sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        if sweep == 99 {
            return Err(Error::NumericalFailure {
                iteration: sweep,
                what: "Jacobi sweeps did not converge".into(),
            });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = vecs.get(k, p);
                    let vkq = vecs.get(k, q);
                    vecs.set(k, p, c * vkp - s * vkq);
                    vecs.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).total_cmp(&m.get(i, i)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = vecs.col(src);
        canonical_sign(&mut col);
        for k in 0..n {
            vectors.set(k, dst, col[k]);
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Solve `a x = b` for symmetric positive definite `a` by Cholesky factorization.
pub fn cholesky_solve(a: &Matrix, b: &[f64]) -> Result<Vector> {
    let n = a.rows();
    if n != a.cols() || b.len() != n {
        return Err(invalid_dim(format!(
            "cholesky_solve needs square a and matching b, got {}x{} and {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l.get(i, k) * l.get(j, k)).sum();
            if i == j {
                let d = a.get(i, i) - s;
                if d.is_nan() || d <= 0.0 || !d.is_finite() {
                    return Err(Error::Singular);
                }
                l.set(i, i, d.sqrt());
            } else {
                l.set(i, j, (a.get(i, j) - s) / l.get(j, j));
            }
        }
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l.get(i, k) * z[k]).sum();
        z[i] = (b[i] - s) / l.get(i, i);
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|k| l.get(k, i) * x[k]).sum();
        x[i] = (z[i] - s) / l.get(i, i);
    }
    Ok(x.into())
}
