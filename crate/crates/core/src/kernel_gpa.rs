//! Kernel-based GPA.
//!
//! Each view gets a kernel-based transformation `y(p) = A p + a + Ωᵀ k(p)`
//! regularized by `μ tr(Ωᵀ K Ω)`. Eliminating the transformation parameters
//! leaves a quadratic form `tr(M 𝓠 Mᵀ)` in the map, minimized under
//! `M 1 = 0, M Mᵀ = Λ` by the bottom eigenvectors of `𝓠`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{Dataset, PointCloud, View};
use crate::kernels::{self, GramMatrix, KernelSpec};
use crate::linalg;
use crate::scale::{self, DegeneracyReport, MapEstimate, RigidPose, ScaleOptions};

/// Per-view operators of the eliminated problem.
#[derive(Debug, Clone)]
pub struct ViewOperators {
    /// Orthogonal projector onto the row space of `[P; 1ᵀ]`.
    pub projector: DMatrix<f64>,
    /// `K (I − 𝓟) K + μ K`.
    pub s: DMatrix<f64>,
    /// `(I − 𝓟) K S⁻¹`.
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Pseudo-inverse of `[P; 1ᵀ]` (`m_t × (d+1)`).
    pub pinv_ptilde: DMatrix<f64>,
    /// Numerical rank of `[P; 1ᵀ]`.
    pub rank: usize,
    pub mu: f64,
}

/// Projector onto the row space of the homogenized cloud, its
/// pseudo-inverse and its rank.
pub fn projector(cloud: &PointCloud) -> Result<(DMatrix<f64>, DMatrix<f64>, usize)> {
    let pt = cloud.homogeneous();
    let (proj, rank) = linalg::row_space_projector(&pt)?;
    let (pinv, _) = linalg::pinv(&pt)?;
    Ok((proj, pinv, rank))
}

pub fn view_operators(view: &View, gram: &GramMatrix, mu: f64) -> Result<ViewOperators> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Config(format!("mu must be positive and finite, got {mu}")));
    }
    let k = &gram.matrix;
    let mt = view.len();
    let (proj, pinv_ptilde, rank) = projector(&view.cloud)?;
    let comp = DMatrix::identity(mt, mt) - &proj;

    let ill = |reason: &str| Error::IllConditionedView {
        view: view.id,
        reason: reason.to_string(),
    };
    // K = L Lᵀ turns K S⁻¹ K into L T⁻¹ Lᵀ with T = Lᵀ (I − 𝓟) L + μ I, whose
    // eigenvalues are bounded below by μ.
    let l = linalg::cholesky(k).ok_or_else(|| ill("kernel matrix is not positive definite"))?.l();
    let mut t = l.transpose() * &comp * &l;
    for i in 0..mt {
        t[(i, i)] += mu;
    }
    let t_chol = linalg::cholesky(&t).ok_or_else(|| ill("reduced system is not positive definite"))?;
    let lt_comp = l.transpose() * &comp;
    let q = linalg::symmetrized(&comp - lt_comp.transpose() * t_chol.solve(&lt_comp));

    let s = linalg::symmetrized(k * &comp * k + k * mu);
    // S = L T Lᵀ, so H = (I − 𝓟) L T⁻¹ L⁻¹; this avoids factoring S, whose
    // condition number is roughly that of K squared.
    let l_inv = l
        .solve_lower_triangular(&DMatrix::identity(mt, mt))
        .ok_or_else(|| ill("kernel factor is singular"))?;
    let h = linalg::symmetrized(&comp * &l * t_chol.solve(&l_inv));
    if !q.iter().chain(h.iter()).all(|v| v.is_finite()) {
        return Err(ill("non-finite operator entries"));
    }
    Ok(ViewOperators {
        projector: proj,
        s,
        h,
        q,
        pinv_ptilde,
        rank,
        mu,
    })
}

/// `𝓠 = Σ_t Γ_t Q_t Γ_tᵀ`, accumulated in view order.
pub fn assemble_q(dataset: &Dataset, ops: &[DMatrix<f64>]) -> DMatrix<f64> {
    let m = dataset.m();
    let mut q = DMatrix::zeros(m, m);
    for (view, qt) in dataset.views().iter().zip(ops) {
        let ids = view.vis.ids();
        for (a, &ia) in ids.iter().enumerate() {
            for (b, &ib) in ids.iter().enumerate() {
                q[(ia, ib)] += qt[(a, b)];
            }
        }
    }
    linalg::symmetrized(q)
}

/// Bottom eigenvectors of the global matrix with the constant direction removed.
#[derive(Debug, Clone)]
pub struct ShapeSolution {
    /// `m × d`, orthonormal columns orthogonal to `1`.
    pub x: DMatrix<f64>,
    /// Eigenvalues of `𝓠` paired with the columns of `x`, ascending.
    pub eigvals: Vec<f64>,
    /// Gap between the `(d+1)`-th and `d`-th eigenvalue.
    pub gap: f64,
    /// Set when the gap or a spacing within the bottom `d` is below
    /// `1e-10 ‖𝓠‖`, i.e. the eigenvectors are not unique.
    pub degenerate: bool,
}

impl ShapeSolution {
    /// `tr(Xᵀ 𝓠 X Λ)`.
    pub fn cost(&self, q: &DMatrix<f64>, lambda: &[f64]) -> f64 {
        trace_cost(&self.x, q, lambda)
    }
}

pub fn trace_cost(x: &DMatrix<f64>, q: &DMatrix<f64>, lambda: &[f64]) -> f64 {
    let xqx = x.transpose() * q * x;
    lambda.iter().enumerate().map(|(k, l)| l * xqx[(k, k)]).sum()
}

pub fn solve_shape(q: &DMatrix<f64>, n: usize, d: usize) -> Result<ShapeSolution> {
    let m = q.nrows();
    if m <= d {
        return Err(Error::InvalidInput(format!(
            "need more than {d} correspondences to solve a {d}D shape, got {m}"
        )));
    }
    // Every other eigenvalue of 𝓠 is at most n, so shifting the constant
    // direction to n·m moves it out of the bottom of the spectrum.
    let shifted = q.add_scalar(n as f64);
    let (vals, vecs) = linalg::sym_eigen_ascending(&shifted)?;
    let mut x = vecs.columns(0, d).into_owned();
    for mut col in x.column_iter_mut() {
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
    let eigvals: Vec<f64> = vals[..d].to_vec();
    let tol = 1e-10 * q.norm();
    let gap = if m > d { vals[d] - vals[d - 1] } else { f64::INFINITY };
    let tie = vals[..d].windows(2).any(|w| w[1] - w[0] < tol);
    let degenerate = gap < tol || tie;
    if degenerate {
        log::warn!("shape: bottom spectrum is degenerate (gap {gap:e}); eigenvectors are not unique");
    }
    Ok(ShapeSolution {
        x,
        eigvals,
        gap,
        degenerate,
    })
}

/// Parameters of one kernel-based transformation.
#[derive(Debug, Clone, PartialEq)]
pub struct KbtParams {
    /// `A` (`d × d`).
    pub linear: DMatrix<f64>,
    /// `a`.
    pub offset: DVector<f64>,
    /// `Ω` (`m_t × d`).
    pub omega: DMatrix<f64>,
}

/// Optimal transformation for one view given the map.
pub fn recover_transform(map: &DMatrix<f64>, view: &View, ops: &ViewOperators, gram: &GramMatrix) -> KbtParams {
    let d = map.nrows();
    let mt = view.len();
    let mg = view.gather(map);
    let omega = (&mg * &ops.h).transpose();
    let affine = &mg * (DMatrix::identity(mt, mt) - &ops.h * &gram.matrix) * &ops.pinv_ptilde;
    KbtParams {
        linear: affine.columns(0, d).into_owned(),
        offset: affine.column(d).into_owned(),
        omega,
    }
}

/// A kernel-based transformation with the view's points as kernel centers.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWarp {
    pub params: KbtParams,
    /// `d × m_t` kernel centers.
    pub centers: DMatrix<f64>,
    pub sigma: f64,
}

impl KernelWarp {
    fn kernel_vector(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.centers.ncols(),
            self.centers
                .column_iter()
                .map(|c| kernels::gaussian(c.as_slice(), p, self.sigma)),
        )
    }

    /// `y(p) = A p + a + Ωᵀ k(p)`.
    pub fn apply(&self, p: &[f64]) -> DVector<f64> {
        let kp = self.kernel_vector(p);
        &self.params.linear * DVector::from_column_slice(p) + &self.params.offset + self.params.omega.tr_mul(&kp)
    }

    pub fn apply_cloud(&self, pts: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(pts.nrows(), pts.ncols());
        for (j, c) in pts.column_iter().enumerate() {
            out.set_column(j, &self.apply(c.as_slice()));
        }
        out
    }
}

/// The transformation evaluated directly from the map and the operators,
/// `MΓ ((I − H K) P̃† [p; 1] + H k(p))`, without forming `(A, a, Ω)`.
pub fn apply_warp_composed(
    map: &DMatrix<f64>,
    view: &View,
    ops: &ViewOperators,
    gram: &GramMatrix,
    p: &[f64],
) -> DVector<f64> {
    let mt = view.len();
    let mut ph = DVector::from_column_slice(p).push(1.0);
    ph = (DMatrix::identity(mt, mt) - &ops.h * &gram.matrix) * &ops.pinv_ptilde * ph;
    let kp = kernels::kernel_vector(&view.cloud, gram.sigma, p);
    view.gather(map) * (ph + &ops.h * kp)
}

/// Options shared by the GPA solvers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GpaOptions {
    /// Accept views with fewer than `d + 2` points or rank-deficient
    /// homogenized coordinates (flat views).
    pub allow_degenerate: bool,
    pub scale: ScaleOptions,
}

/// Check the size and rank preconditions of every view. Violations are
/// errors unless `allow_degenerate`, in which case they become warnings.
pub fn check_views(dataset: &Dataset, allow_degenerate: bool) -> Result<Vec<String>> {
    let d = dataset.dim();
    let mut warnings = Vec::new();
    for view in dataset.views() {
        let mut problems = Vec::new();
        if view.len() < d + 2 {
            problems.push(format!("{} points, fewer than d + 2 = {}", view.len(), d + 2));
        }
        let rank = linalg::rank(&view.cloud.homogeneous())?;
        if rank <= d {
            problems.push(format!(
                "flat view: homogenized points have rank {rank} < {}",
                d + 1
            ));
        }
        for p in problems {
            let msg = format!("view {}: {p}", view.id + 1);
            if !allow_degenerate {
                return Err(Error::InvalidInput(msg));
            }
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(warnings)
}

#[derive(Debug, Clone)]
pub struct KernelGpaSolution {
    pub map: DMatrix<f64>,
    pub x: DMatrix<f64>,
    /// Non-ascending.
    pub lambda: Vec<f64>,
    pub r_g: DMatrix<f64>,
    pub transforms: Vec<KernelWarp>,
    pub operators: Vec<ViewOperators>,
    pub grams: Vec<GramMatrix>,
    pub poses: Vec<RigidPose>,
    pub q: DMatrix<f64>,
    pub cost: f64,
    pub degeneracy: DegeneracyReport,
    pub estimate: MapEstimate,
    pub warnings: Vec<String>,
}

pub fn register_kernel_gpa(
    dataset: &Dataset,
    spec: &KernelSpec,
    mu: f64,
    opts: &GpaOptions,
) -> Result<KernelGpaSolution> {
    spec.validate()?;
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Config(format!("mu must be positive and finite, got {mu}")));
    }
    let warnings = check_views(dataset, opts.allow_degenerate)?;
    let per_view: Vec<(GramMatrix, ViewOperators)> = dataset
        .views()
        .par_iter()
        .map(|view| {
            let gram = kernels::gram(&view.cloud, spec)?;
            let ops = view_operators(view, &gram, mu)?;
            Ok((gram, ops))
        })
        .collect::<Result<_>>()?;
    let (grams, operators): (Vec<_>, Vec<_>) = per_view.into_iter().unzip();
    let qs: Vec<DMatrix<f64>> = operators.iter().map(|o| o.q.clone()).collect();
    let q = assemble_q(dataset, &qs);
    let estimate = scale::resolve_map(dataset, &q, &opts.scale)?;
    let map = estimate.map.clone();
    let transforms = dataset
        .views()
        .iter()
        .zip(&operators)
        .zip(&grams)
        .map(|((view, ops), gram)| KernelWarp {
            params: recover_transform(&map, view, ops, gram),
            centers: view.cloud.matrix().clone(),
            sigma: gram.sigma,
        })
        .collect();
    Ok(KernelGpaSolution {
        x: estimate.shape.x.clone(),
        lambda: estimate.scale.lambda.clone(),
        r_g: estimate.scale.r_g.clone(),
        poses: estimate.scale.poses.clone(),
        cost: estimate.cost,
        degeneracy: estimate.degeneracy.clone(),
        map,
        transforms,
        operators,
        grams,
        q,
        estimate,
        warnings,
    })
}
