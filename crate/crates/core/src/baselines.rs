//! Reference GPA methods: linear-basis warps (affine, TPS) sharing the
//! kernel path's shape and scale solver, and iterative rigid GPA.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Dataset;
use crate::kernel_gpa::{self, GpaOptions};
use crate::linalg;
use crate::scale::{self, DegeneracyReport, MapEstimate, RigidPose};
use crate::warps::{self, LbwBasisEval, TpsBasis};

#[derive(Debug, Clone)]
pub struct LbwGpaSolution {
    pub map: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub lambda: Vec<f64>,
    pub r_g: DMatrix<f64>,
    /// Per-view warp weights `W_t` (`l × d`), so that `y(p) = W_tᵀ β(p)`.
    pub weights: Vec<DMatrix<f64>>,
    pub q: DMatrix<f64>,
    pub cost: f64,
    pub degeneracy: DegeneracyReport,
    pub estimate: MapEstimate,
    pub warnings: Vec<String>,
}

fn finish(
    dataset: &Dataset,
    q: DMatrix<f64>,
    opts: &GpaOptions,
    warnings: Vec<String>,
    weights_for: impl Fn(usize, &DMatrix<f64>) -> DMatrix<f64>,
) -> Result<LbwGpaSolution> {
    let estimate = scale::resolve_map(dataset, &q, &opts.scale)?;
    let map = estimate.map.clone();
    let weights = dataset
        .views()
        .iter()
        .enumerate()
        .map(|(t, v)| weights_for(t, &v.gather(&map)))
        .collect();
    Ok(LbwGpaSolution {
        x: estimate.shape.x.clone(),
        lambda: estimate.scale.lambda.clone(),
        r_g: estimate.scale.r_g.clone(),
        cost: estimate.cost,
        degeneracy: estimate.degeneracy.clone(),
        map,
        weights,
        q,
        estimate,
        warnings,
    })
}

/// GPA with per-view linear basis warps `y_t(p) = W_tᵀ β_t(p)` regularized
/// by `μ tr(W_tᵀ Ξ_t W_t)`.
pub fn lbw_gpa(
    dataset: &Dataset,
    bases: &[LbwBasisEval],
    regularizers: &[DMatrix<f64>],
    mu: f64,
    opts: &GpaOptions,
) -> Result<LbwGpaSolution> {
    if bases.len() != dataset.n() || regularizers.len() != dataset.n() {
        return Err(Error::InvalidInput("one basis and regularizer per view required".into()));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::Config(format!("mu must be non-negative and finite, got {mu}")));
    }
    let warnings = kernel_gpa::check_views(dataset, opts.allow_degenerate)?;
    // per view: Z_t = (𝓑𝓑ᵀ + μΞ)⁻¹ 𝓑, Q_t = I − 𝓑ᵀ Z_t
    let lifted: Vec<(DMatrix<f64>, DMatrix<f64>)> = dataset
        .views()
        .par_iter()
        .zip(bases.par_iter().zip(regularizers.par_iter()))
        .map(|(view, (basis, xi))| {
            let b = &basis.matrix;
            let normal = b * b.transpose() + xi * mu;
            let ill = || Error::IllConditionedView {
                view: view.id,
                reason: "basis normal matrix is singular".into(),
            };
            if linalg::rank(&normal)? < normal.nrows() {
                return Err(ill());
            }
            let z = linalg::solve_spd(&normal, b).ok_or_else(ill)?;
            let mt = b.ncols();
            let q = linalg::symmetrized(DMatrix::identity(mt, mt) - b.transpose() * &z);
            Ok((z, q))
        })
        .collect::<Result<_>>()?;
    let qs: Vec<DMatrix<f64>> = lifted.iter().map(|(_, q)| q.clone()).collect();
    let q = kernel_gpa::assemble_q(dataset, &qs);
    finish(dataset, q, opts, warnings, |t, mg| (mg * lifted[t].0.transpose()).transpose())
}

/// Affine GPA: `Q_t = I − 𝓟_t`, `[A_t, a_t] = M Γ_t P̃_t†`. The weights are
/// `[A_t, a_t]ᵀ` (`(d+1) × d`).
pub fn affine_gpa(dataset: &Dataset, opts: &GpaOptions) -> Result<LbwGpaSolution> {
    let warnings = kernel_gpa::check_views(dataset, opts.allow_degenerate)?;
    let per_view: Vec<(DMatrix<f64>, DMatrix<f64>)> = dataset
        .views()
        .par_iter()
        .map(|view| {
            let (proj, pinv, _) = kernel_gpa::projector(&view.cloud)?;
            let mt = view.len();
            Ok((pinv, linalg::symmetrized(DMatrix::identity(mt, mt) - proj)))
        })
        .collect::<Result<_>>()?;
    let qs: Vec<DMatrix<f64>> = per_view.iter().map(|(_, q)| q.clone()).collect();
    let q = kernel_gpa::assemble_q(dataset, &qs);
    finish(dataset, q, opts, warnings, |t, mg| (mg * &per_view[t].0).transpose())
}

/// TPS-warp GPA with a `per_axis^d` control grid around each view.
pub fn tps_gpa(
    dataset: &Dataset,
    per_axis: usize,
    mu: f64,
    opts: &GpaOptions,
) -> Result<(LbwGpaSolution, Vec<TpsBasis>)> {
    let tps: Vec<TpsBasis> = dataset
        .views()
        .par_iter()
        .map(|v| TpsBasis::new(warps::place_control_grid(&v.cloud, per_axis)?))
        .collect::<Result<_>>()?;
    let bases: Vec<LbwBasisEval> = dataset
        .views()
        .iter()
        .zip(&tps)
        .map(|(v, b)| b.eval(v.cloud.matrix()))
        .collect();
    let regs: Vec<DMatrix<f64>> = tps.iter().map(|b| b.bending_energy().clone()).collect();
    let sol = lbw_gpa(dataset, &bases, &regs, mu, opts)?;
    Ok((sol, tps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigidOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for RigidOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RigidGpaSolution {
    pub poses: Vec<RigidPose>,
    /// Visibility-weighted mean of the rigidly transformed views.
    pub map: DMatrix<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub cost_history: Vec<f64>,
}

fn mean_map(dataset: &Dataset, poses: &[RigidPose], included: &[bool]) -> (DMatrix<f64>, Vec<usize>) {
    let d = dataset.dim();
    let m = dataset.m();
    let mut sum = DMatrix::zeros(d, m);
    let mut count = vec![0usize; m];
    for ((view, pose), &inc) in dataset.views().iter().zip(poses).zip(included) {
        if !inc {
            continue;
        }
        let y = pose.apply_cloud(view.cloud.matrix());
        for (j, &id) in view.vis.ids().iter().enumerate() {
            let mut col = sum.column_mut(id);
            col += y.column(j);
            count[id] += 1;
        }
    }
    for (j, &c) in count.iter().enumerate() {
        if c > 0 {
            let mut col = sum.column_mut(j);
            col /= c as f64;
        }
    }
    (sum, count)
}

fn rigid_cost(dataset: &Dataset, poses: &[RigidPose], map: &DMatrix<f64>) -> f64 {
    dataset
        .views()
        .iter()
        .zip(poses)
        .map(|(v, p)| (p.apply_cloud(v.cloud.matrix()) - v.gather(map)).norm_squared())
        .sum()
}

/// Align `view` to the columns of `map` it shares with already-placed points.
fn align_to_partial(
    view: &crate::geom::View,
    map: &DMatrix<f64>,
    placed: &[usize],
) -> Result<RigidPose> {
    let cols: Vec<usize> = view
        .vis
        .ids()
        .iter()
        .enumerate()
        .filter(|(_, id)| placed[**id] > 0)
        .map(|(j, _)| j)
        .collect();
    let src = view.cloud.matrix().select_columns(&cols);
    let dst = DMatrix::from_fn(map.nrows(), cols.len(), |r, c| map[(r, view.vis.ids()[cols[c]])]);
    let (rotation, translation) = linalg::rigid_align(&src, &dst)?;
    Ok(RigidPose {
        rotation,
        translation,
    })
}

fn shared(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut c) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                c += 1;
                i += 1;
                j += 1;
            }
        }
    }
    c
}

/// Rigid GPA by alternating minimization: the map is the visibility-weighted
/// mean of the transformed views, and each pose is a proper Procrustes fit to
/// the map. Initialized by placing views one by one in breadth-first order
/// over the overlap graph.
pub fn rigid_gpa(dataset: &Dataset, opts: &RigidOptions) -> Result<RigidGpaSolution> {
    let d = dataset.dim();
    let n = dataset.n();
    let views = dataset.views();
    // overlap graph: two views are linked when they share at least d points
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(t) = queue.pop_front() {
        order.push(t);
        for s in 0..n {
            if !seen[s] && shared(views[t].vis.ids(), views[s].vis.ids()) >= d {
                seen[s] = true;
                queue.push_back(s);
            }
        }
    }
    if order.len() < n {
        let missing: Vec<String> = (0..n).filter(|&t| !seen[t]).map(|t| (views[t].id + 1).to_string()).collect();
        return Err(Error::Unregistrable(format!(
            "views {} do not overlap the rest by at least {d} correspondences",
            missing.join(", ")
        )));
    }

    let mut poses = vec![RigidPose::identity(d); n];
    let mut included = vec![false; n];
    included[order[0]] = true;
    for &t in &order[1..] {
        let (map, count) = mean_map(dataset, &poses, &included);
        poses[t] = align_to_partial(&views[t], &map, &count)?;
        included[t] = true;
    }

    let (mut map, _) = mean_map(dataset, &poses, &included);
    let mut cost = rigid_cost(dataset, &poses, &map);
    let mut history = vec![cost];
    let mut iterations = 0;
    let floor = 1e-30 * map.norm_squared().max(f64::MIN_POSITIVE);
    while iterations < opts.max_iters && cost > floor {
        let next: Vec<RigidPose> = views
            .par_iter()
            .map(|v| {
                let (rotation, translation) = linalg::rigid_align(v.cloud.matrix(), &v.gather(&map))?;
                Ok(RigidPose {
                    rotation,
                    translation,
                })
            })
            .collect::<Result<_>>()?;
        let (next_map, _) = mean_map(dataset, &next, &included);
        let next_cost = rigid_cost(dataset, &next, &next_map);
        iterations += 1;
        if !next_cost.is_finite() {
            return Err(Error::Diverged(next_cost));
        }
        let rel = (cost - next_cost) / cost;
        if next_cost <= cost {
            poses = next;
            map = next_map;
            cost = next_cost;
            history.push(cost);
        }
        if rel < opts.tol {
            break;
        }
    }

    // gauge: center the map
    let c = linalg::row_mean(&map);
    let map = linalg::subtract_column(&map, &c);
    for p in poses.iter_mut() {
        p.translation -= &c;
    }
    Ok(RigidGpaSolution {
        poses,
        map,
        cost,
        iterations,
        cost_history: history,
    })
}
