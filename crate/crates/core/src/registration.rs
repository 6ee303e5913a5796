//! Method selection and a uniform view of every solver's output.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::{self, RigidOptions};
use crate::error::{Error, Result};
use crate::geom::Dataset;
use crate::kernel_gpa::{self, GpaOptions, KernelWarp};
use crate::kernels::KernelSpec;
use crate::scale::{DegeneracyReport, RigidPose, ScaleOptions};
use crate::warps::{LbwSpec, TpsBasis, DEFAULT_TPS_MU};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rigid,
    Affine,
    Tps,
    Kernel,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Rigid, Method::Affine, Method::Tps, Method::Kernel];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rigid => "rigid",
            Method::Affine => "affine",
            Method::Tps => "tps",
            Method::Kernel => "kernel",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}' (expected rigid, affine, tps or kernel)")))
    }
}

/// One view's estimated transformation into the map frame.
#[derive(Debug, Clone)]
pub enum ViewTransform {
    Rigid(RigidPose),
    Affine {
        linear: DMatrix<f64>,
        offset: DVector<f64>,
    },
    Tps {
        basis: TpsBasis,
        /// `l × d` values of the warp at the control points.
        weights: DMatrix<f64>,
    },
    Kernel(KernelWarp),
}

impl ViewTransform {
    pub fn apply(&self, p: &[f64]) -> DVector<f64> {
        match self {
            ViewTransform::Rigid(pose) => pose.apply(p),
            ViewTransform::Affine { linear, offset } => linear * DVector::from_column_slice(p) + offset,
            ViewTransform::Tps { basis, weights } => weights.tr_mul(&basis.eval_point(p)),
            ViewTransform::Kernel(w) => w.apply(p),
        }
    }

    pub fn apply_cloud(&self, pts: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(pts.nrows(), pts.ncols());
        for (j, c) in pts.column_iter().enumerate() {
            out.set_column(j, &self.apply(c.as_slice()));
        }
        out
    }
}

/// Run configuration shared by the library entry point and the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    /// Kernel for `method = kernel`; defaults to the Gaussian with bandwidth factor `p`.
    pub kernel: Option<KernelSpec>,
    /// Warp basis for `method = tps`.
    pub warp: Option<LbwSpec>,
    pub mu: f64,
    pub p: f64,
    pub scale: ScaleOptions,
    pub rigid: RigidOptions,
    pub seed: Option<u64>,
    /// Path of a `split.json` whose ids are held out of training.
    pub test_split: Option<String>,
    pub allow_degenerate: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Kernel,
            kernel: None,
            warp: None,
            mu: 0.1,
            p: 0.25,
            scale: ScaleOptions::default(),
            rigid: RigidOptions::default(),
            seed: None,
            test_split: None,
            allow_degenerate: false,
        }
    }
}

impl RunConfig {
    pub fn for_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        self.kernel.unwrap_or_else(|| KernelSpec::gaussian_rule(self.p))
    }

    /// TPS `(per_axis, mu)`.
    pub fn tps_params(&self) -> (usize, f64) {
        match self.warp {
            Some(LbwSpec::Tps { per_axis, mu }) => (per_axis, mu),
            _ => (5, DEFAULT_TPS_MU),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.method, &self.warp) {
            (Method::Tps, Some(LbwSpec::Affine)) => {
                return Err(Error::Config("method tps requires a tps warp spec, got affine".into()))
            }
            (Method::Affine, Some(LbwSpec::Tps { .. })) => {
                return Err(Error::Config("method affine does not take a tps warp spec".into()))
            }
            (Method::Rigid | Method::Kernel, Some(_)) => {
                return Err(Error::Config(format!("method {} does not take a warp spec", self.method)))
            }
            _ => {}
        }
        if self.kernel.is_some() && self.method != Method::Kernel {
            return Err(Error::Config(format!("method {} does not take a kernel spec", self.method)));
        }
        if self.method == Method::Kernel {
            self.kernel_spec().validate()?;
            if !(self.mu > 0.0 && self.mu.is_finite()) {
                return Err(Error::Config(format!("mu must be positive, got {}", self.mu)));
            }
        }
        if self.method == Method::Tps {
            let (per_axis, mu) = self.tps_params();
            if per_axis < 2 {
                return Err(Error::Config(format!("per_axis must be at least 2, got {per_axis}")));
            }
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(Error::Config(format!("tps mu must be non-negative, got {mu}")));
            }
        }
        Ok(())
    }

    /// The parameters relevant to the chosen method, for reports.
    pub fn params_json(&self) -> serde_json::Value {
        match self.method {
            Method::Rigid => serde_json::json!({
                "max_iters": self.rigid.max_iters,
                "tol": self.rigid.tol,
            }),
            Method::Affine => serde_json::json!({ "scale": self.scale }),
            Method::Tps => {
                let (per_axis, mu) = self.tps_params();
                serde_json::json!({ "per_axis": per_axis, "mu": mu, "scale": self.scale })
            }
            Method::Kernel => serde_json::json!({
                "kernel": self.kernel_spec(),
                "mu": self.mu,
                "scale": self.scale,
            }),
        }
    }
}

/// A solved registration in a method-independent form.
#[derive(Debug, Clone)]
pub struct Registration {
    pub method: Method,
    pub d: usize,
    /// `d × k` map; column `j` is correspondence `map_ids[j]`.
    pub map: DMatrix<f64>,
    /// Original (0-based) ids of the map columns.
    pub map_ids: Vec<usize>,
    /// Original (0-based) view ids, parallel to `transforms`.
    pub view_ids: Vec<usize>,
    pub transforms: Vec<ViewTransform>,
    pub lambda: Option<Vec<f64>>,
    pub r_g: Option<DMatrix<f64>>,
    pub degeneracy: Option<DegeneracyReport>,
    pub warnings: Vec<String>,
    pub cost: f64,
}

impl Registration {
    pub fn transform_for_view(&self, view_id: usize) -> Option<&ViewTransform> {
        self.view_ids.iter().position(|&v| v == view_id).map(|i| &self.transforms[i])
    }
}

/// Register `dataset` with the configured method. `map_ids` gives the
/// original id of each dataset correspondence (identity when `None`).
pub fn register(dataset: &Dataset, cfg: &RunConfig, map_ids: Option<Vec<usize>>) -> Result<Registration> {
    cfg.validate()?;
    let opts = GpaOptions {
        allow_degenerate: cfg.allow_degenerate,
        scale: cfg.scale,
    };
    let d = dataset.dim();
    let map_ids = map_ids.unwrap_or_else(|| (0..dataset.m()).collect());
    let view_ids: Vec<usize> = dataset.views().iter().map(|v| v.id).collect();
    let reg = match cfg.method {
        Method::Kernel => {
            let sol = kernel_gpa::register_kernel_gpa(dataset, &cfg.kernel_spec(), cfg.mu, &opts)?;
            Registration {
                method: cfg.method,
                d,
                map: sol.map,
                map_ids,
                view_ids,
                transforms: sol.transforms.into_iter().map(ViewTransform::Kernel).collect(),
                lambda: Some(sol.lambda),
                r_g: Some(sol.r_g),
                degeneracy: Some(sol.degeneracy),
                warnings: sol.warnings,
                cost: sol.cost,
            }
        }
        Method::Affine => {
            let sol = baselines::affine_gpa(dataset, &opts)?;
            let transforms = sol
                .weights
                .iter()
                .map(|w| {
                    let wt = w.transpose();
                    ViewTransform::Affine {
                        linear: wt.columns(0, d).into_owned(),
                        offset: wt.column(d).into_owned(),
                    }
                })
                .collect();
            Registration {
                method: cfg.method,
                d,
                map: sol.map,
                map_ids,
                view_ids,
                transforms,
                lambda: Some(sol.lambda),
                r_g: Some(sol.r_g),
                degeneracy: Some(sol.degeneracy),
                warnings: sol.warnings,
                cost: sol.cost,
            }
        }
        Method::Tps => {
            let (per_axis, mu) = cfg.tps_params();
            let (sol, bases) = baselines::tps_gpa(dataset, per_axis, mu, &opts)?;
            let transforms = bases
                .into_iter()
                .zip(sol.weights)
                .map(|(basis, weights)| ViewTransform::Tps { basis, weights })
                .collect();
            Registration {
                method: cfg.method,
                d,
                map: sol.map,
                map_ids,
                view_ids,
                transforms,
                lambda: Some(sol.lambda),
                r_g: Some(sol.r_g),
                degeneracy: Some(sol.degeneracy),
                warnings: sol.warnings,
                cost: sol.cost,
            }
        }
        Method::Rigid => {
            let sol = baselines::rigid_gpa(dataset, &cfg.rigid)?;
            Registration {
                method: cfg.method,
                d,
                map: sol.map,
                map_ids,
                view_ids,
                transforms: sol.poses.into_iter().map(ViewTransform::Rigid).collect(),
                lambda: None,
                r_g: None,
                degeneracy: None,
                warnings: Vec::new(),
                cost: sol.cost,
            }
        }
    };
    Ok(reg)
}
