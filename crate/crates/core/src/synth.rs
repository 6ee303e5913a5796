//! Synthetic benchmark data: a canonical shape, smooth per-view deformations,
//! rigid observation poses, random partial visibility and Gaussian noise.
//!
//! Each view observes `P_t = R_tᵀ (Φ_t(M* Γ_t) − t_t 1ᵀ) + noise`. Optional
//! test points (ids after the `m` training ids) are visible in every view
//! and are never dropped.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Dataset, PointCloud, View, Visibility};
use crate::linalg;
use crate::scale::RigidPose;
use crate::warps::{self, TpsBasis};

/// Largest `‖a‖ / w` accepted for a Gaussian bump.
pub const BUMP_RATIO_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeModel {
    /// Regular lattice points (a grid in the plane when `d = 2`), side `extent`.
    Grid3d,
    /// Uniform samples inside an axis-aligned ellipsoid with these semi-axes.
    SphereSamples { radii: Vec<f64> },
    /// Explicit points; the first `m` are training points, the rest test points.
    LoadedCloud { points: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Deformation {
    None,
    /// `count` fixed bump centers with a fresh random amplitude per view,
    /// of norm at most `amplitude`.
    GaussianBumps { count: usize, amplitude: f64, width: f64 },
    /// Random displacements with standard deviation `amplitude` at a
    /// `controls^d` grid, interpolated by a thin-plate spline.
    TpsRandom { controls: usize, amplitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseModel {
    CircleTrajectory,
    RandomRigid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub shape: ShapeModel,
    pub deform: Deformation,
    pub noise_sigma: f64,
    pub drop_fraction: f64,
    pub pose_model: PoseModel,
    pub seed: u64,
    #[serde(default)]
    pub test_points: usize,
    /// Characteristic object size, used by the grid shape and the poses.
    #[serde(default = "default_extent")]
    pub extent: f64,
}

fn default_extent() -> f64 {
    100.0
}

impl SynthConfig {
    /// A desk-scale stand-in for a liver phantom: 201 landmarks on a
    /// ~100 mm ellipsoid, 60 views on a circular trajectory, 1 mm noise and
    /// 30% of the landmarks dropped per view.
    pub fn liver_like(seed: u64) -> Self {
        Self {
            m: 201,
            n: 60,
            d: 3,
            shape: ShapeModel::SphereSamples {
                radii: vec![50.0, 35.0, 25.0],
            },
            deform: Deformation::GaussianBumps {
                count: 8,
                amplitude: 9.0,
                width: 20.0,
            },
            noise_sigma: 1.0,
            drop_fraction: 0.3,
            pose_model: PoseModel::CircleTrajectory,
            seed,
            test_points: 400,
            extent: 100.0,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "liver-like" | "liver_like" => Ok(Self::liver_like(seed)),
            _ => Err(Error::Config(format!("unknown preset '{name}' (expected liver-like)"))),
        }
    }

    /// Points per view after dropping.
    pub fn visible_per_view(&self) -> usize {
        self.m - (self.drop_fraction * self.m as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d;
        if d != 2 && d != 3 {
            return Err(Error::Config(format!("d must be 2 or 3, got {d}")));
        }
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config("m and n must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.drop_fraction) {
            return Err(Error::Config(format!("drop_fraction must lie in [0, 1), got {}", self.drop_fraction)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma must be non-negative, got {}", self.noise_sigma)));
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(Error::Config(format!("extent must be positive, got {}", self.extent)));
        }
        let mt = self.visible_per_view();
        if mt < d + 2 {
            return Err(Error::Config(format!(
                "drop_fraction {} leaves {mt} points per view, need at least {}",
                self.drop_fraction,
                d + 2
            )));
        }
        if mt * self.n < self.m {
            return Err(Error::Config(format!(
                "{} views of {mt} points cannot cover all {} correspondences",
                self.n, self.m
            )));
        }
        match &self.deform {
            Deformation::None => {}
            Deformation::GaussianBumps { count, amplitude, width } => {
                if *count == 0 || !(*width > 0.0) || !(*amplitude >= 0.0) {
                    return Err(Error::Config("gaussian bumps need count > 0, width > 0, amplitude >= 0".into()));
                }
                check_bump_ratio(*amplitude, *width)?;
            }
            Deformation::TpsRandom { controls, amplitude } => {
                if *controls < 2 || !(*amplitude >= 0.0) {
                    return Err(Error::Config("tps deformation needs controls >= 2 and amplitude >= 0".into()));
                }
            }
        }
        match &self.shape {
            ShapeModel::SphereSamples { radii } if radii.len() != d || radii.iter().any(|r| !(*r > 0.0)) => {
                Err(Error::Config(format!("sphere_samples needs {d} positive radii")))
            }
            ShapeModel::LoadedCloud { points } => {
                if points.len() < self.m + self.test_points {
                    return Err(Error::Config(format!(
                        "loaded cloud has {} points, need {}",
                        points.len(),
                        self.m + self.test_points
                    )));
                }
                if points.iter().any(|p| p.len() != d || p.iter().any(|v| !v.is_finite())) {
                    return Err(Error::Config(format!("loaded cloud points must be finite {d}-vectors")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

fn check_bump_ratio(amplitude: f64, width: f64) -> Result<()> {
    let ratio = amplitude / width;
    if ratio > BUMP_RATIO_LIMIT {
        return Err(Error::NonInvertibleWarp {
            ratio,
            limit: BUMP_RATIO_LIMIT,
        });
    }
    Ok(())
}

/// `x ↦ x + Σ_j a_j exp(−‖x − c_j‖² / (2 w_j²))` applied to every column.
pub fn gaussian_bump_warp(
    points: &DMatrix<f64>,
    centers: &DMatrix<f64>,
    amplitudes: &DMatrix<f64>,
    widths: &[f64],
) -> Result<DMatrix<f64>> {
    if centers.ncols() != amplitudes.ncols() || centers.ncols() != widths.len() {
        return Err(Error::InvalidInput("one amplitude and width per bump center required".into()));
    }
    for (j, &w) in widths.iter().enumerate() {
        if !(w > 0.0) {
            return Err(Error::InvalidInput(format!("bump width must be positive, got {w}")));
        }
        check_bump_ratio(amplitudes.column(j).norm(), w)?;
    }
    let mut out = points.clone();
    for (i, p) in points.column_iter().enumerate() {
        for j in 0..centers.ncols() {
            let r2 = (p - centers.column(j)).norm_squared();
            let g = (-r2 / (2.0 * widths[j] * widths[j])).exp();
            let mut col = out.column_mut(i);
            col += amplitudes.column(j) * g;
        }
    }
    Ok(out)
}

/// Up to `count` point indices spread over the cloud: a random first pick,
/// then repeatedly the point farthest from all picks so far. Spread-out bump
/// centers keep neighbouring bumps from stacking their gradients.
fn spread_indices(points: &DMatrix<f64>, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let m = points.ncols();
    let count = count.min(m);
    if count == 0 {
        return Vec::new();
    }
    let mut picks = vec![rng.random_range(0..m)];
    let mut nearest: Vec<f64> = (0..m)
        .map(|j| (points.column(j) - points.column(picks[0])).norm_squared())
        .collect();
    while picks.len() < count {
        let next = (0..m)
            .max_by(|&a, &b| nearest[a].total_cmp(&nearest[b]))
            .expect("nonempty cloud");
        picks.push(next);
        for (j, n) in nearest.iter_mut().enumerate() {
            *n = n.min((points.column(j) - points.column(next)).norm_squared());
        }
    }
    picks
}

/// One view's ground-truth deformation field.
#[derive(Debug, Clone)]
pub enum DeformationField {
    Identity,
    Bumps {
        centers: DMatrix<f64>,
        amplitudes: DMatrix<f64>,
        width: f64,
    },
    Tps {
        basis: TpsBasis,
        /// `l × d` displacements at the controls.
        displacements: DMatrix<f64>,
    },
}

impl DeformationField {
    pub fn apply(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            DeformationField::Identity => Ok(points.clone()),
            DeformationField::Bumps { centers, amplitudes, width } => {
                gaussian_bump_warp(points, centers, amplitudes, &vec![*width; centers.ncols()])
            }
            DeformationField::Tps { basis, displacements } => {
                Ok(points + displacements.transpose() * basis.eval(points).matrix)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Canonical shape, `d × (m + test_points)`.
    pub map: DMatrix<f64>,
    pub poses: Vec<RigidPose>,
    pub deformations: Vec<DeformationField>,
    /// Per view, the training ids that were dropped.
    pub dropped: Vec<Vec<usize>>,
    /// Per view, the noise-free observations (columns follow the view's ids).
    pub clean: Vec<DMatrix<f64>>,
    pub test_ids: Vec<usize>,
}

fn sample_shape(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let d = cfg.d;
    let total = cfg.m + cfg.test_points;
    match &cfg.shape {
        ShapeModel::Grid3d => {
            let per_axis = (cfg.m as f64).powf(1.0 / d as f64).ceil().max(2.0) as usize;
            let lattice = per_axis.pow(d as u32);
            let step = cfg.extent / (per_axis - 1) as f64;
            let mut pts = DMatrix::zeros(d, total);
            let picks = index::sample(rng, lattice, cfg.m).into_vec();
            for (j, idx) in picks.into_iter().enumerate() {
                let mut rem = idx;
                for k in 0..d {
                    pts[(k, j)] = (rem % per_axis) as f64 * step - cfg.extent / 2.0;
                    rem /= per_axis;
                }
            }
            for j in cfg.m..total {
                for k in 0..d {
                    pts[(k, j)] = rng.random_range(-0.5..0.5) * cfg.extent;
                }
            }
            pts
        }
        ShapeModel::SphereSamples { radii } => {
            let mut pts = DMatrix::zeros(d, total);
            let mut j = 0;
            while j < total {
                let u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                if u.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                    for k in 0..d {
                        pts[(k, j)] = u[k] * radii[k];
                    }
                    j += 1;
                }
            }
            pts
        }
        ShapeModel::LoadedCloud { points } => DMatrix::from_fn(d, total, |k, j| points[j][k]),
    }
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn sample_pose(cfg: &SynthConfig, t: usize, rng: &mut ChaCha8Rng) -> RigidPose {
    let d = cfg.d;
    match cfg.pose_model {
        PoseModel::CircleTrajectory => {
            let theta = 2.0 * std::f64::consts::PI * t as f64 / cfg.n as f64;
            let (s, c) = theta.sin_cos();
            if d == 3 {
                let rotation = linalg::so_exp(&[0.0, 0.0, theta], 3) * linalg::so_exp(&[0.5, 0.0, 0.0], 3);
                let translation = DVector::from_vec(vec![c * cfg.extent, s * cfg.extent, 0.2 * cfg.extent]);
                RigidPose { rotation, translation }
            } else {
                RigidPose {
                    rotation: linalg::so_exp(&[theta], 2),
                    translation: DVector::from_vec(vec![c * cfg.extent, s * cfg.extent]),
                }
            }
        }
        PoseModel::RandomRigid => {
            let w: Vec<f64> = (0..linalg::rotation_dof(d)).map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)).collect();
            RigidPose {
                rotation: linalg::so_exp(&w, d),
                translation: DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0) * cfg.extent),
            }
        }
    }
}

/// Per view, the sorted training ids kept visible. Every id ends up visible
/// in at least one view and every view keeps exactly `visible_per_view` ids.
fn sample_visibility(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<bool>> {
    let m = cfg.m;
    let drop = m - cfg.visible_per_view();
    let mut visible: Vec<Vec<bool>> = (0..cfg.n)
        .map(|_| {
            let mut v = vec![true; m];
            for i in index::sample(rng, m, drop).into_iter() {
                v[i] = false;
            }
            v
        })
        .collect();
    let mut count: Vec<usize> = (0..m).map(|j| visible.iter().filter(|v| v[j]).count()).collect();
    for j in 0..m {
        if count[j] > 0 {
            continue;
        }
        // swap id j into some view in place of an id that other views also see
        loop {
            let t = rng.random_range(0..cfg.n);
            let candidates: Vec<usize> = (0..m).filter(|&i| visible[t][i] && count[i] > 1).collect();
            if candidates.is_empty() {
                continue;
            }
            let out = candidates[rng.random_range(0..candidates.len())];
            visible[t][out] = false;
            count[out] -= 1;
            visible[t][j] = true;
            count[j] += 1;
            break;
        }
    }
    visible
}

pub fn generate(cfg: &SynthConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    let d = cfg.d;
    let m = cfg.m;
    let total = m + cfg.test_points;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut map = sample_shape(cfg, &mut rng);
    let centroid = linalg::row_mean(&map.columns(0, m).into_owned());
    map = linalg::subtract_column(&map, &centroid);

    let shared_centers = match &cfg.deform {
        Deformation::GaussianBumps { count, .. } => {
            let picks = spread_indices(&map.columns(0, m).into_owned(), *count, &mut rng);
            let mut c = DMatrix::zeros(d, *count);
            for (k, &p) in picks.iter().cycle().take(*count).enumerate() {
                c.set_column(k, &map.column(p));
            }
            Some(c)
        }
        _ => None,
    };
    let tps_basis = match &cfg.deform {
        Deformation::TpsRandom { controls, .. } => {
            let train = PointCloud::new(map.columns(0, m).into_owned())?;
            Some(TpsBasis::new(warps::place_control_grid(&train, *controls)?)?)
        }
        _ => None,
    };
    let noise = if cfg.noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };

    let mut deformations = Vec::with_capacity(cfg.n);
    let mut poses = Vec::with_capacity(cfg.n);
    for t in 0..cfg.n {
        let field = match &cfg.deform {
            Deformation::None => DeformationField::Identity,
            Deformation::GaussianBumps { count, amplitude, width } => {
                let mut amps = DMatrix::zeros(d, *count);
                for k in 0..*count {
                    let a = random_unit(&mut rng, d) * (amplitude * rng.random_range(0.0..=1.0));
                    amps.set_column(k, &a);
                }
                DeformationField::Bumps {
                    centers: shared_centers.clone().expect("bump centers"),
                    amplitudes: amps,
                    width: *width,
                }
            }
            Deformation::TpsRandom { amplitude, .. } => {
                let basis = tps_basis.clone().expect("tps basis");
                let disp = DMatrix::from_fn(basis.len(), d, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * amplitude
                });
                DeformationField::Tps {
                    basis,
                    displacements: disp,
                }
            }
        };
        deformations.push(field);
        poses.push(sample_pose(cfg, t, &mut rng));
    }
    let visible = sample_visibility(cfg, &mut rng);

    let mut views = Vec::with_capacity(cfg.n);
    let mut clean = Vec::with_capacity(cfg.n);
    let mut dropped = Vec::with_capacity(cfg.n);
    for t in 0..cfg.n {
        let ids: Vec<usize> = (0..m).filter(|&j| visible[t][j]).chain(m..total).collect();
        dropped.push((0..m).filter(|&j| !visible[t][j]).collect::<Vec<_>>());
        let canon = map.select_columns(&ids);
        let deformed = deformations[t].apply(&canon)?;
        let pose = &poses[t];
        let local = pose.rotation.transpose() * linalg::subtract_column(&deformed, &pose.translation);
        let mut observed = local.clone();
        if let Some(dist) = &noise {
            for v in observed.iter_mut() {
                *v += dist.sample(&mut rng);
            }
        }
        clean.push(local);
        views.push(View::new(t, PointCloud::new(observed)?, Visibility::new(total, ids)?)?);
    }
    let dataset = Dataset::new(d, total, views)?;
    Ok((
        dataset,
        GroundTruth {
            map,
            poses,
            deformations,
            dropped,
            clean,
            test_ids: (m..total).collect(),
        },
    ))
}
