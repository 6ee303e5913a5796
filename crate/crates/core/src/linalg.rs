//! Dense linear-algebra helpers shared by the solvers.
//!
//! Everything here works on `nalgebra` dynamic matrices. Symmetric
//! eigendecompositions are returned in ascending eigenvalue order, which is
//! the order every caller in this crate wants.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Rotation3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};

/// Relative singular-value threshold used for every rank decision.
pub const RANK_EPS: f64 = 1e-12;

/// Replace `a` by `(a + aᵀ) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn symmetrized(mut a: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut a);
    a
}

/// Thin SVD `a = u · diag(singular_values) · v_t`, singular values non-ascending.
struct Svd {
    u: DMatrix<f64>,
    singular_values: DVector<f64>,
    v_t: DMatrix<f64>,
}

fn svd_of(a: &DMatrix<f64>) -> Result<Svd> {
    // nalgebra's SVD returns inaccurate singular vectors when singular values
    // repeat (common here: orthonormal bases, symmetric grids), so use faer.
    let (r, c) = a.shape();
    let k = r.min(c);
    if k == 0 {
        return Ok(Svd {
            u: DMatrix::zeros(r, 0),
            singular_values: DVector::zeros(0),
            v_t: DMatrix::zeros(0, c),
        });
    }
    let svd = faer::Mat::from_fn(r, c, |i, j| a[(i, j)])
        .thin_svd()
        .map_err(|_| Error::Numerical("SVD did not converge".into()))?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    Ok(Svd {
        u: DMatrix::from_fn(r, k, |i, j| u[(i, j)]),
        singular_values: DVector::from_fn(k, |i, _| s[i]),
        v_t: DMatrix::from_fn(k, c, |i, j| v[(j, i)]),
    })
}

fn rank_threshold(a: &DMatrix<f64>, svals: &DVector<f64>) -> f64 {
    let smax = svals.iter().cloned().fold(0.0, f64::max);
    RANK_EPS * (a.nrows().max(a.ncols()) as f64) * smax
}

/// Moore–Penrose pseudo-inverse together with the numerical rank.
pub fn pinv(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    let svd = svd_of(a)?;
    let (u, vt) = (&svd.u, &svd.v_t);
    let tol = rank_threshold(a, &svd.singular_values);
    let mut out = DMatrix::zeros(a.ncols(), a.nrows());
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol && s > 0.0 {
            rank += 1;
            // out += v_i * u_iᵀ / s
            let v = vt.row(i).transpose();
            let ui = u.column(i);
            out += (v * ui.transpose()) / s;
        }
    }
    Ok((out, rank))
}

/// Orthogonal projector onto the row space of `a` (equivalently the range
/// of `aᵀ`), plus the numerical rank.
pub fn row_space_projector(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    let svd = svd_of(a)?;
    let vt = &svd.v_t;
    let tol = rank_threshold(a, &svd.singular_values);
    let n = a.ncols();
    let mut p = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol && s > 0.0 {
            rank += 1;
            let v = vt.row(i).transpose();
            p += &v * v.transpose();
        }
    }
    symmetrize(&mut p);
    Ok((p, rank))
}

/// Numerical rank with the crate-wide threshold.
pub fn rank(a: &DMatrix<f64>) -> Result<usize> {
    let svd = svd_of(a)?;
    let tol = rank_threshold(a, &svd.singular_values);
    Ok(svd
        .singular_values
        .iter()
        .filter(|&&s| s > tol && s > 0.0)
        .count())
}

/// Symmetric eigendecomposition sorted by ascending eigenvalue.
pub fn sym_eigen_ascending(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let eig = SymmetricEigen::try_new(symmetrized(a.clone()), f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    Ok((vals, vecs))
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> Result<f64> {
    Ok(sym_eigen_ascending(a)?.0.first().copied().unwrap_or(0.0))
}

pub fn cholesky(a: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrized(a.clone()))
}

/// Solve `a x = b` for symmetric positive definite `a`, falling back to LU
/// when the Cholesky factorization breaks down.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(ch) = cholesky(a) {
        return Some(ch.solve(b));
    }
    a.clone().lu().solve(b)
}

/// Best proper rotation `R` minimizing `‖R·source − target‖_F` for centered
/// `d × k` point sets (determinant-corrected SVD solution).
pub fn procrustes_so(source: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = source.nrows();
    let cross = target * source.transpose();
    let svd = svd_of(&cross)?;
    let (u, vt) = (&svd.u, &svd.v_t);
    let mut fix = DMatrix::identity(d, d);
    if (u * vt).determinant() < 0.0 {
        // flip the direction of the smallest singular value
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        fix[(imin, imin)] = -1.0;
    }
    Ok(u * fix * vt)
}

/// Rigid alignment with translation: returns `(R, t)` minimizing
/// `‖R·source + t·1ᵀ − target‖_F`.
pub fn rigid_align(
    source: &DMatrix<f64>,
    target: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let cs = row_mean(source);
    let ct = row_mean(target);
    let s = subtract_column(source, &cs);
    let t = subtract_column(target, &ct);
    let r = procrustes_so(&s, &t)?;
    let trans = ct - &r * cs;
    Ok((r, trans))
}

pub fn row_mean(a: &DMatrix<f64>) -> DVector<f64> {
    let k = a.ncols().max(1) as f64;
    a.column_sum() / k
}

pub fn subtract_column(a: &DMatrix<f64>, c: &DVector<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for mut col in out.column_iter_mut() {
        col -= c;
    }
    out
}

pub fn add_column(a: &DMatrix<f64>, c: &DVector<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for mut col in out.column_iter_mut() {
        col += c;
    }
    out
}

/// Number of rotational degrees of freedom in dimension `d`.
pub fn rotation_dof(d: usize) -> usize {
    d * (d - 1) / 2
}

/// Exponential map from the tangent space of SO(d), d ∈ {2, 3}.
pub fn so_exp(omega: &[f64], d: usize) -> DMatrix<f64> {
    match d {
        2 => {
            let (s, c) = omega[0].sin_cos();
            DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
        }
        3 => {
            let r = Rotation3::from_scaled_axis(Vector3::new(omega[0], omega[1], omega[2]));
            DMatrix::from_iterator(3, 3, r.matrix().iter().cloned())
        }
        _ => panic!("so_exp supports d = 2 or 3"),
    }
}

/// Re-orthonormalize a near-rotation by projecting onto SO(d).
pub fn project_to_so(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let id = DMatrix::identity(r.nrows(), r.nrows());
    procrustes_so(&id, r)
}

pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    a.norm()
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
