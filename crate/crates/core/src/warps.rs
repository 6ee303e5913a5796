//! Linear basis warps: the affine basis and the thin-plate spline basis.
//!
//! The TPS basis is parameterized by the warp's values at the control
//! points. With `L = [[K_c, C̃ᵀ], [C̃, 0]]` the usual TPS system over controls
//! `C` (`C̃ = [C; 1ᵀ]`), the lifting matrix is `ℰ = L⁻¹[:, ..l]` and a query
//! `p` maps to `β(p) = ℰᵀ [ρ(‖c_1 − p‖), …, ρ(‖c_l − p‖), pᵀ, 1]ᵀ`. The bending
//! energy matrix is the top-left `l × l` block of `L⁻¹`, sign-adjusted so it
//! is positive semidefinite for the chosen radial function. It annihilates
//! control values sampled from any affine map.
//!
//! The system is built in coordinates centered on the control centroid and
//! divided by the controls' RMS radius. The basis itself is unaffected, but
//! the bending energy is then independent of the data units, so one
//! regularization weight works for millimetres and metres alike.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, PointCloud};
use crate::linalg;

/// Default per-side padding of the control-grid bounding box, as a
/// fraction of the extent along each principal axis.
pub const DEFAULT_GRID_PADDING: f64 = 0.05;

/// Default TPS regularization strength for 3D data.
pub const DEFAULT_TPS_MU: f64 = 0.01;

/// Stacked basis vectors `𝓑(P) = [β(p_1) … β(p_k)]`, one column per point.
#[derive(Debug, Clone, PartialEq)]
pub struct LbwBasisEval {
    pub matrix: DMatrix<f64>,
}

/// Affine basis `[P; 1ᵀ]`.
pub fn affine_basis(cloud: &PointCloud) -> LbwBasisEval {
    LbwBasisEval {
        matrix: cloud.homogeneous(),
    }
}

/// Polyharmonic TPS radial function: `r` in 3D, `r² log r` in 2D.
pub fn tps_rho(d: usize, r: f64) -> f64 {
    if d == 3 {
        r
    } else if r <= 0.0 {
        0.0
    } else {
        r * r * r.ln()
    }
}

/// A TPS warp basis built from a fixed set of control points.
#[derive(Debug, Clone)]
pub struct TpsBasis {
    controls: DMatrix<f64>,
    center: DVector<f64>,
    radius: f64,
    lifting: DMatrix<f64>,
    bending: DMatrix<f64>,
}

impl TpsBasis {
    pub fn new(controls: DMatrix<f64>) -> Result<Self> {
        let (d, l) = controls.shape();
        if d != 2 && d != 3 {
            return Err(Error::InvalidInput(format!(
                "TPS controls must be 2D or 3D, got d = {d}"
            )));
        }
        if l < d + 1 {
            return Err(Error::TpsDegenerate(format!(
                "{l} control points, need at least {}",
                d + 1
            )));
        }
        let center = linalg::row_mean(&controls);
        let offsets = linalg::subtract_column(&controls, &center);
        let radius = (offsets.norm_squared() / l as f64).sqrt();
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::TpsDegenerate("control points coincide".into()));
        }
        let unit = offsets / radius;
        let size = l + d + 1;
        let mut sys = DMatrix::zeros(size, size);
        for i in 0..l {
            for j in 0..l {
                if i != j {
                    let r = (unit.column(i) - unit.column(j)).norm();
                    sys[(i, j)] = tps_rho(d, r);
                }
            }
            for k in 0..d {
                sys[(i, l + k)] = unit[(k, i)];
                sys[(l + k, i)] = unit[(k, i)];
            }
            sys[(i, l + d)] = 1.0;
            sys[(l + d, i)] = 1.0;
        }
        if linalg::rank(&sys)? < size {
            return Err(Error::TpsDegenerate(
                "control points are not in general position".into(),
            ));
        }
        let inv = sys
            .clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::TpsDegenerate("TPS system matrix is singular".into()))?;
        let lifting = inv.columns(0, l).into_owned();
        let sign = if d == 3 { -1.0 } else { 1.0 };
        let bending = linalg::symmetrized(inv.view((0, 0), (l, l)) * sign);
        Ok(Self {
            controls,
            center,
            radius,
            lifting,
            bending,
        })
    }

    pub fn controls(&self) -> &DMatrix<f64> {
        &self.controls
    }

    pub fn dim(&self) -> usize {
        self.controls.nrows()
    }

    /// Number of basis functions `l`.
    pub fn len(&self) -> usize {
        self.controls.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.ncols() == 0
    }

    /// RMS distance of the controls from their centroid, the length unit of
    /// the bending energy.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Bending energy matrix `Ξ` (`l × l`, symmetric PSD), in units of
    /// [`radius`](Self::radius).
    pub fn bending_energy(&self) -> &DMatrix<f64> {
        &self.bending
    }

    fn lifted(&self, p: &[f64]) -> DVector<f64> {
        let (d, l) = self.controls.shape();
        let mut phi = DVector::zeros(l + d + 1);
        let q: Vec<f64> = (0..d).map(|k| (p[k] - self.center[k]) / self.radius).collect();
        for i in 0..l {
            let r: f64 = (0..d)
                .map(|k| ((self.controls[(k, i)] - self.center[k]) / self.radius - q[k]).powi(2))
                .sum::<f64>()
                .sqrt();
            phi[i] = tps_rho(d, r);
        }
        for k in 0..d {
            phi[l + k] = q[k];
        }
        phi[l + d] = 1.0;
        phi
    }

    /// `β(p)`.
    pub fn eval_point(&self, p: &[f64]) -> DVector<f64> {
        self.lifting.tr_mul(&self.lifted(p))
    }

    /// `𝓑(P)`.
    pub fn eval(&self, cloud: &DMatrix<f64>) -> LbwBasisEval {
        let (d, l) = self.controls.shape();
        let mut phi = DMatrix::zeros(l + d + 1, cloud.ncols());
        for (j, col) in cloud.column_iter().enumerate() {
            phi.set_column(j, &self.lifted(col.as_slice()));
        }
        LbwBasisEval {
            matrix: self.lifting.tr_mul(&phi),
        }
    }
}

/// TPS basis and bending energy for a cloud.
pub fn tps_basis(cloud: &PointCloud, controls: &DMatrix<f64>) -> Result<(LbwBasisEval, DMatrix<f64>)> {
    let basis = TpsBasis::new(controls.clone())?;
    Ok((basis.eval(cloud.matrix()), basis.bending_energy().clone()))
}

/// Regular `per_axis^d` control grid spanning the cloud's bounding box in
/// its principal-axis frame, expanded by `padding · extent` on each side and
/// mapped back to the input frame.
pub fn place_control_grid_padded(
    cloud: &PointCloud,
    per_axis: usize,
    padding: f64,
) -> Result<DMatrix<f64>> {
    if per_axis < 2 {
        return Err(Error::Config(format!(
            "control grid needs at least 2 points per axis, got {per_axis}"
        )));
    }
    let d = cloud.dim();
    let (centered, centroid) = geom::center(cloud);
    let (_, vecs) = linalg::sym_eigen_ascending(&geom::covariance(cloud))?;
    // principal axes, largest variance first
    let mut axes = DMatrix::zeros(d, d);
    for k in 0..d {
        axes.set_column(k, &vecs.column(d - 1 - k));
    }
    let local = axes.tr_mul(centered.matrix());
    let mut lo = vec![0.0; d];
    let mut hi = vec![0.0; d];
    for k in 0..d {
        let row = local.row(k);
        lo[k] = row.min();
        hi[k] = row.max();
        let extent = hi[k] - lo[k];
        let scale = local.abs().max().max(1.0);
        if extent <= 1e-12 * scale {
            log::warn!("control grid: principal axis {k} has zero extent; grid collapses on it");
        }
        lo[k] -= padding * extent;
        hi[k] += padding * extent;
    }
    let total = per_axis.pow(d as u32);
    let mut grid = DMatrix::zeros(d, total);
    for idx in 0..total {
        let mut rem = idx;
        let mut q = DVector::zeros(d);
        for k in 0..d {
            let step = rem % per_axis;
            rem /= per_axis;
            let f = step as f64 / (per_axis - 1) as f64;
            q[k] = lo[k] + f * (hi[k] - lo[k]);
        }
        grid.set_column(idx, &(&axes * q + &centroid));
    }
    Ok(grid)
}

pub fn place_control_grid(cloud: &PointCloud, per_axis: usize) -> Result<DMatrix<f64>> {
    place_control_grid_padded(cloud, per_axis, DEFAULT_GRID_PADDING)
}

/// Warp configuration for the LBW baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LbwSpec {
    Affine,
    Tps {
        #[serde(default = "default_per_axis")]
        per_axis: usize,
        #[serde(default = "default_tps_mu")]
        mu: f64,
    },
}

fn default_per_axis() -> usize {
    5
}

fn default_tps_mu() -> f64 {
    DEFAULT_TPS_MU
}

impl Default for LbwSpec {
    fn default() -> Self {
        LbwSpec::Tps {
            per_axis: default_per_axis(),
            mu: DEFAULT_TPS_MU,
        }
    }
}
