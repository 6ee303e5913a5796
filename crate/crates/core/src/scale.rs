//! Scale and gauge resolution.
//!
//! Given the bottom eigenvectors `X` of the global matrix, the map is
//! `M = √Λ R_g Xᵀ`. The scales and gauge rotation are chosen to make every
//! view as rigid as possible: a closed-form affine relaxation gives the
//! initial `(Λ, R_g)`, per-view rotations follow from Procrustes, and a
//! damped Gauss-Newton refinement over `(R_t, η)` handles reflections by
//! letting `η` take either sign.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Dataset, View};
use crate::kernel_gpa::{self, ShapeSolution};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleOptions {
    pub refine: bool,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for ScaleOptions {
    fn default() -> Self {
        Self {
            refine: true,
            max_iters: 100,
            tol: 1e-10,
        }
    }
}

/// A rigid pose mapping a view's points into the map frame:
/// `p ↦ rotation · p + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidPose {
    pub rotation: DMatrix<f64>,
    pub translation: DVector<f64>,
}

impl RigidPose {
    pub fn identity(d: usize) -> Self {
        Self {
            rotation: DMatrix::identity(d, d),
            translation: DVector::zeros(d),
        }
    }

    pub fn apply(&self, p: &[f64]) -> DVector<f64> {
        &self.rotation * DVector::from_column_slice(p) + &self.translation
    }

    pub fn apply_cloud(&self, pts: &DMatrix<f64>) -> DMatrix<f64> {
        linalg::add_column(&(&self.rotation * pts), &self.translation)
    }
}

#[derive(Debug, Clone)]
pub struct ScaleEstimate {
    /// Non-ascending scales.
    pub lambda: Vec<f64>,
    pub r_g: DMatrix<f64>,
    pub poses: Vec<RigidPose>,
    /// Signed scales at the end of refinement, before the sign fix.
    pub eta: Vec<f64>,
    /// `sign(η)`, folded into the rows of `R_g`.
    pub flips: Vec<f64>,
    pub refine_iterations: usize,
    pub final_cost: f64,
    /// Cost after every accepted refinement step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    /// Views left out of the closed-form average because `Ḡ_t` is rank-deficient.
    pub skipped_views: Vec<usize>,
}

impl ScaleEstimate {
    pub fn sqrt_lambda(&self) -> DVector<f64> {
        DVector::from_iterator(self.lambda.len(), self.lambda.iter().map(|l| l.max(0.0).sqrt()))
    }

    /// `M = √Λ R_g Xᵀ`.
    pub fn map(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.sqrt_lambda()) * &self.r_g * x.transpose()
    }
}

/// Closed-form relaxation result.
#[derive(Debug, Clone)]
pub struct ClosedForm {
    pub lambda: Vec<f64>,
    pub r_g: DMatrix<f64>,
    /// The averaged matrix whose eigendecomposition gives `(Λ, R_g)`.
    pub gram: DMatrix<f64>,
    pub skipped_views: Vec<usize>,
}

fn centered(a: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::subtract_column(a, &linalg::row_mean(a))
}

/// `Ḡ_t`: the centered rows of `Xᵀ` visible in the view.
fn centered_basis(view: &View, xt: &DMatrix<f64>) -> DMatrix<f64> {
    centered(&view.gather(xt))
}

pub fn closed_form_scale(dataset: &Dataset, x: &DMatrix<f64>) -> Result<ClosedForm> {
    let d = dataset.dim();
    let xt = x.transpose();
    let mut acc = DMatrix::zeros(d, d);
    let mut used = 0usize;
    let mut skipped = Vec::new();
    for view in dataset.views() {
        let gbar = centered_basis(view, &xt);
        let (ginv, rank) = linalg::pinv(&gbar)?;
        if rank < d {
            log::warn!("scale: view {} skipped (centered basis has rank {rank} < {d})", view.id + 1);
            skipped.push(view.id);
            continue;
        }
        let pbar = centered(view.cloud.matrix());
        let b = pbar * ginv;
        acc += b.transpose() * b;
        used += 1;
    }
    if used == 0 {
        return Err(Error::ScaleUnresolvable);
    }
    let gram = linalg::symmetrized(acc / used as f64);
    let (vals, vecs) = linalg::sym_eigen_ascending(&gram)?;
    let mut lambda = Vec::with_capacity(d);
    let mut r_g = DMatrix::zeros(d, d);
    for k in 0..d {
        let src = d - 1 - k;
        // the matrix is PSD by construction, so negatives are round-off
        lambda.push(vals[src].max(0.0));
        r_g.set_row(k, &vecs.column(src).transpose());
    }
    if r_g.determinant() < 0.0 {
        r_g.row_mut(d - 1).neg_mut();
    }
    Ok(ClosedForm {
        lambda,
        r_g,
        gram,
        skipped_views: skipped,
    })
}

fn poses_from_rotations(
    dataset: &Dataset,
    rotations: Vec<DMatrix<f64>>,
    map: &DMatrix<f64>,
) -> Vec<RigidPose> {
    dataset
        .views()
        .iter()
        .zip(rotations)
        .map(|(view, rotation)| {
            let target = linalg::row_mean(&view.gather(map));
            let source = linalg::row_mean(view.cloud.matrix());
            let translation = target - &rotation * source;
            RigidPose {
                rotation,
                translation,
            }
        })
        .collect()
}

/// Proper-rotation Procrustes of each view onto `√Λ R_g G_t`.
pub fn init_poses(
    dataset: &Dataset,
    x: &DMatrix<f64>,
    lambda: &[f64],
    r_g: &DMatrix<f64>,
) -> Result<Vec<RigidPose>> {
    let sqrt_l = DVector::from_iterator(lambda.len(), lambda.iter().map(|l| l.max(0.0).sqrt()));
    let map = DMatrix::from_diagonal(&sqrt_l) * r_g * x.transpose();
    let mut rotations = Vec::with_capacity(dataset.n());
    for view in dataset.views() {
        let pbar = centered(view.cloud.matrix());
        let target = centered(&view.gather(&map));
        rotations.push(linalg::procrustes_so(&pbar, &target)?);
    }
    Ok(poses_from_rotations(dataset, rotations, &map))
}

/// Per-view data for the rigidity cost `Σ‖R_t P̄_t − diag(η) Ĝ_t‖²`.
struct RigidityProblem {
    d: usize,
    pbar: Vec<DMatrix<f64>>,
    ghat: Vec<DMatrix<f64>>,
}

impl RigidityProblem {
    fn new(dataset: &Dataset, x: &DMatrix<f64>, r_g: &DMatrix<f64>) -> Self {
        let xt = x.transpose();
        let pbar = dataset
            .views()
            .iter()
            .map(|v| centered(v.cloud.matrix()))
            .collect();
        let ghat = dataset
            .views()
            .iter()
            .map(|v| r_g * centered_basis(v, &xt))
            .collect();
        Self {
            d: dataset.dim(),
            pbar,
            ghat,
        }
    }

    fn cost(&self, rots: &[DMatrix<f64>], eta: &DVector<f64>) -> f64 {
        let scale = DMatrix::from_diagonal(eta);
        self.pbar
            .iter()
            .zip(&self.ghat)
            .zip(rots)
            .map(|((p, g), r)| (r * p - &scale * g).norm_squared())
            .sum()
    }

    fn best_rotations(&self, eta: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        let scale = DMatrix::from_diagonal(eta);
        self.pbar
            .iter()
            .zip(&self.ghat)
            .map(|(p, g)| linalg::procrustes_so(p, &(&scale * g)))
            .collect()
    }

    fn scale(&self) -> f64 {
        self.pbar.iter().map(|p| p.norm_squared()).sum::<f64>().max(f64::MIN_POSITIVE)
    }

    /// Gauss-Newton normal equations `(JᵀJ, Jᵀr)` with rotations perturbed on
    /// the left, `R ← Exp(ω) R`.
    fn normal_equations(
        &self,
        rots: &[DMatrix<f64>],
        eta: &DVector<f64>,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let d = self.d;
        let dof = linalg::rotation_dof(d);
        let n = rots.len();
        let size = n * dof + d;
        let eoff = n * dof;
        let mut a = DMatrix::zeros(size, size);
        let mut g = DVector::zeros(size);
        let mut jr = DMatrix::zeros(d, dof);
        for (t, ((p, gh), r)) in self.pbar.iter().zip(&self.ghat).zip(rots).enumerate() {
            let y = r * p;
            let off = t * dof;
            for j in 0..y.ncols() {
                let yj = y.column(j);
                if d == 3 {
                    jr.copy_from_slice(&[0.0, -yj[2], yj[1], yj[2], 0.0, -yj[0], -yj[1], yj[0], 0.0]);
                } else {
                    jr[(0, 0)] = -yj[1];
                    jr[(1, 0)] = yj[0];
                }
                let res: DVector<f64> =
                    DVector::from_iterator(d, (0..d).map(|k| yj[k] - eta[k] * gh[(k, j)]));
                // rotation block
                let jtj = jr.transpose() * &jr;
                let mut block = a.view_mut((off, off), (dof, dof));
                block += &jtj;
                let gr = jr.transpose() * &res;
                let mut gblock = g.rows_mut(off, dof);
                gblock += &gr;
                // η block: J_η = −diag(ĝ_j)
                for k in 0..d {
                    let gk = gh[(k, j)];
                    a[(eoff + k, eoff + k)] += gk * gk;
                    g[eoff + k] -= gk * res[k];
                    for q in 0..dof {
                        let v = -jr[(k, q)] * gk;
                        a[(off + q, eoff + k)] += v;
                        a[(eoff + k, off + q)] += v;
                    }
                }
            }
        }
        (a, g)
    }
}

struct RefineState {
    rots: Vec<DMatrix<f64>>,
    eta: DVector<f64>,
    cost: f64,
}

fn levenberg_marquardt(
    problem: &RigidityProblem,
    mut state: RefineState,
    opts: &ScaleOptions,
) -> Result<(RefineState, usize, Vec<f64>)> {
    let d = problem.d;
    let dof = linalg::rotation_dof(d);
    let n = state.rots.len();
    // residuals at round-off level: nothing left to refine
    let floor = 1e-24 * problem.scale();
    let mut history = vec![state.cost];
    let mut damping: Option<f64> = None;
    let mut iterations = 0;
    'outer: while iterations < opts.max_iters {
        if state.cost <= floor {
            break;
        }
        let (a, g) = problem.normal_equations(&state.rots, &state.eta);
        let diag_max = a.diagonal().iter().fold(0.0f64, |m, v| m.max(*v));
        let mut lam = damping.unwrap_or(1e-4 * diag_max.max(f64::MIN_POSITIVE));
        loop {
            let mut damped = a.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lam;
            }
            let step = linalg::solve_spd(&damped, &DMatrix::from_column_slice(g.len(), 1, (-&g).as_slice()))
                .ok_or_else(|| Error::Numerical("refinement normal equations are singular".into()))?;
            let rots: Vec<DMatrix<f64>> = state
                .rots
                .iter()
                .enumerate()
                .map(|(t, r)| {
                    let w: Vec<f64> = (0..dof).map(|q| step[(t * dof + q, 0)]).collect();
                    linalg::so_exp(&w, d) * r
                })
                .collect();
            let eta = DVector::from_iterator(d, (0..d).map(|k| state.eta[k] + step[(n * dof + k, 0)]));
            let cost = problem.cost(&rots, &eta);
            if cost.is_finite() && cost <= state.cost {
                damping = Some(lam * 0.1);
                let rel = (state.cost - cost) / state.cost;
                state = RefineState { rots, eta, cost };
                history.push(cost);
                iterations += 1;
                if rel < opts.tol {
                    break 'outer;
                }
                break;
            }
            lam *= 10.0;
            if lam > 1e30 * diag_max.max(1.0) {
                break 'outer;
            }
        }
    }
    if !state.cost.is_finite() {
        return Err(Error::Diverged(state.cost));
    }
    // Re-orthonormalize accumulated rotations
    for r in state.rots.iter_mut() {
        *r = linalg::project_to_so(r)?;
    }
    Ok((state, iterations, history))
}

/// Minimize the rigidity cost over `(R_t, η)` starting from `init`.
///
/// Both parities of `η` are tried at the start (the closed form only
/// determines scales up to sign) and the better one is refined. The result
/// has non-negative, non-ascending scales and proper rotations; the signs
/// and ordering are folded into `R_g`.
pub fn refine(
    dataset: &Dataset,
    x: &DMatrix<f64>,
    init: &ScaleEstimate,
    opts: &ScaleOptions,
) -> Result<ScaleEstimate> {
    let d = dataset.dim();
    let problem = RigidityProblem::new(dataset, x, &init.r_g);
    let sqrt_l = init.sqrt_lambda();
    let mut best: Option<RefineState> = None;
    for parity in [1.0, -1.0] {
        let mut eta = sqrt_l.clone();
        eta[d - 1] *= parity;
        let rots = problem.best_rotations(&eta)?;
        let cost = problem.cost(&rots, &eta);
        if !cost.is_finite() {
            return Err(Error::Diverged(cost));
        }
        if best.as_ref().is_none_or(|b| cost < b.cost) {
            best = Some(RefineState { rots, eta, cost });
        }
    }
    let start = best.expect("two candidates");
    let (state, iterations, history) = if opts.refine {
        levenberg_marquardt(&problem, start, opts)?
    } else {
        let c = start.cost;
        (start, 0, vec![c])
    };
    Ok(finalize(dataset, x, &init.r_g, state, iterations, history, init.skipped_views.clone()))
}

/// Fold `sign(η)` into `R_g`, sort scales non-ascending and fix the
/// remaining axis-sign gauge deterministically.
fn finalize(
    dataset: &Dataset,
    x: &DMatrix<f64>,
    r_g: &DMatrix<f64>,
    state: RefineState,
    iterations: usize,
    history: Vec<f64>,
    skipped_views: Vec<usize>,
) -> ScaleEstimate {
    let d = dataset.dim();
    let eta_signed: Vec<f64> = state.eta.iter().cloned().collect();
    let flips: Vec<f64> = eta_signed.iter().map(|&e| if e < 0.0 { -1.0 } else { 1.0 }).collect();
    let mut r_g = r_g.clone();
    for k in 0..d {
        if flips[k] < 0.0 {
            r_g.row_mut(k).neg_mut();
        }
    }
    let abs_eta: Vec<f64> = eta_signed.iter().map(|e| e.abs()).collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| abs_eta[j].total_cmp(&abs_eta[i]));
    let mut perm = DMatrix::zeros(d, d);
    for (k, &src) in order.iter().enumerate() {
        perm[(k, src)] = 1.0;
    }
    if perm.determinant() < 0.0 {
        perm.row_mut(d - 1).neg_mut();
    }
    let sqrt_l: Vec<f64> = order.iter().map(|&i| abs_eta[i]).collect();
    r_g = &perm * r_g;
    let mut rots: Vec<DMatrix<f64>> = state.rots.iter().map(|r| &perm * r).collect();

    // axis signs: first d-1 rows of M get a positive largest entry, the last
    // row takes whatever keeps the transform proper
    let map = DMatrix::from_diagonal(&DVector::from_column_slice(&sqrt_l)) * &r_g * x.transpose();
    let mut signs = vec![1.0; d];
    for k in 0..d - 1 {
        let row = map.row(k);
        let (imax, _) = row
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) });
        if row[imax] < 0.0 {
            signs[k] = -1.0;
        }
    }
    signs[d - 1] = signs[..d - 1].iter().product();
    let e = DMatrix::from_diagonal(&DVector::from_column_slice(&signs));
    r_g = &e * r_g;
    for r in rots.iter_mut() {
        *r = &e * &*r;
    }
    let lambda: Vec<f64> = sqrt_l.iter().map(|s| s * s).collect();
    let map = DMatrix::from_diagonal(&DVector::from_column_slice(&sqrt_l)) * &r_g * x.transpose();
    let poses = poses_from_rotations(dataset, rots, &map);
    ScaleEstimate {
        lambda,
        r_g,
        poses,
        eta: eta_signed,
        flips,
        refine_iterations: iterations,
        final_cost: state.cost,
        cost_history: history,
        skipped_views,
    }
}

/// Closed form, pose initialization and refinement in one call.
pub fn resolve_scale(dataset: &Dataset, x: &DMatrix<f64>, opts: &ScaleOptions) -> Result<ScaleEstimate> {
    let cf = closed_form_scale(dataset, x)?;
    let poses = init_poses(dataset, x, &cf.lambda, &cf.r_g)?;
    let init = ScaleEstimate {
        eta: cf.lambda.iter().map(|l| l.sqrt()).collect(),
        flips: vec![1.0; dataset.dim()],
        lambda: cf.lambda,
        r_g: cf.r_g,
        poses,
        refine_iterations: 0,
        final_cost: f64::NAN,
        cost_history: Vec::new(),
        skipped_views: cf.skipped_views,
    };
    refine(dataset, x, &init, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyReport {
    /// Eigenvalues of the global matrix below `threshold` (including the
    /// constant direction).
    pub near_zero_eigenvalues: usize,
    pub threshold: f64,
    /// At least `d + 1` near-zero eigenvalues: data fit exactly without deformation.
    pub zero_deformation: bool,
    /// Ids (0-based) of views whose homogenized points are rank-deficient.
    pub flat_views: Vec<usize>,
    /// The `d + 2` smallest eigenvalues of the global matrix.
    pub bottom_eigenvalues: Vec<f64>,
    /// Gap between the `(d+1)`-th and `d`-th bottom eigenvalue, constant direction excluded.
    pub spectral_gap: f64,
    /// The shape solve found a tie or a vanishing gap at the bottom of the spectrum.
    pub spectrum_degenerate: bool,
}

impl DegeneracyReport {
    pub fn any(&self) -> bool {
        self.zero_deformation || !self.flat_views.is_empty() || self.spectrum_degenerate
    }
}

pub fn flat_views(dataset: &Dataset) -> Result<Vec<usize>> {
    let d = dataset.dim();
    let mut out = Vec::new();
    for v in dataset.views() {
        if linalg::rank(&v.cloud.homogeneous())? <= d {
            out.push(v.id);
        }
    }
    Ok(out)
}

pub fn detect_degeneracy(q: &DMatrix<f64>, shape: &ShapeSolution, dataset: &Dataset) -> Result<DegeneracyReport> {
    let d = dataset.dim();
    let m = q.nrows();
    let (vals, _) = linalg::sym_eigen_ascending(q)?;
    let threshold = 1e-8 * q.trace().abs() / m as f64;
    let near = vals.iter().filter(|&&v| v < threshold).count();
    let flat = flat_views(dataset)?;
    Ok(DegeneracyReport {
        near_zero_eigenvalues: near,
        threshold,
        zero_deformation: near > d,
        flat_views: flat,
        bottom_eigenvalues: vals.iter().take(d + 2).cloned().collect(),
        spectral_gap: shape.gap,
        spectrum_degenerate: shape.degenerate,
    })
}

/// Everything the shape and scale stages produce from a global matrix.
#[derive(Debug, Clone)]
pub struct MapEstimate {
    pub map: DMatrix<f64>,
    pub shape: ShapeSolution,
    pub scale: ScaleEstimate,
    pub degeneracy: DegeneracyReport,
    /// `tr(M 𝓠 Mᵀ)`.
    pub cost: f64,
}

/// Shape eigen-solve followed by scale resolution.
pub fn resolve_map(dataset: &Dataset, q: &DMatrix<f64>, opts: &ScaleOptions) -> Result<MapEstimate> {
    let shape = kernel_gpa::solve_shape(q, dataset.n(), dataset.dim())?;
    let degeneracy = detect_degeneracy(q, &shape, dataset)?;
    if degeneracy.zero_deformation {
        log::info!(
            "{} near-zero eigenvalues: gauge fixed by the closed-form scale step",
            degeneracy.near_zero_eigenvalues
        );
    }
    let scale = resolve_scale(dataset, &shape.x, opts)?;
    let map = scale.map(&shape.x);
    let cost = (&map * q * map.transpose()).trace();
    Ok(MapEstimate {
        map,
        shape,
        scale,
        degeneracy,
        cost,
    })
}
