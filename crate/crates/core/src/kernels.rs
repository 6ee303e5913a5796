//! Positive-definite kernels and Gram matrices for the kernel-based warp.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::linalg;

/// Jitter levels tried (relative to `trace / m_t`) when a Gram matrix is
/// numerically singular.
const JITTER_LEVELS: [f64; 3] = [1e-10, 1e-8, 1e-6];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Gaussian,
}

/// How the bandwidth is chosen for a view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    /// Explicit `σ` in scene length units.
    Fixed { sigma: f64 },
    /// `σ_t = p · mean pairwise distance` of the view's points.
    MeanPairwise { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(default)]
    pub kind: KernelKind,
    #[serde(flatten)]
    pub bandwidth: Bandwidth,
}

impl KernelSpec {
    pub fn gaussian_rule(p: f64) -> Self {
        Self {
            kind: KernelKind::Gaussian,
            bandwidth: Bandwidth::MeanPairwise { p },
        }
    }

    pub fn gaussian_fixed(sigma: f64) -> Self {
        Self {
            kind: KernelKind::Gaussian,
            bandwidth: Bandwidth::Fixed { sigma },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.bandwidth {
            Bandwidth::Fixed { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                Error::Config(format!("kernel sigma must be positive, got {sigma}")),
            ),
            Bandwidth::MeanPairwise { p } if !(p > 0.0 && p.is_finite()) => Err(Error::Config(
                format!("bandwidth factor p must be positive, got {p}"),
            )),
            _ => Ok(()),
        }
    }

    /// Resolve the bandwidth for a particular cloud.
    pub fn sigma_for(&self, cloud: &PointCloud) -> Result<f64> {
        self.validate()?;
        match self.bandwidth {
            Bandwidth::Fixed { sigma } => Ok(sigma),
            Bandwidth::MeanPairwise { p } => bandwidth(cloud, p),
        }
    }
}

/// `exp(−‖xi − xj‖² / (2σ²))`.
pub fn gaussian(xi: &[f64], xj: &[f64], sigma: f64) -> f64 {
    let d2: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Mean pairwise Euclidean distance over unordered pairs.
pub fn mean_pairwise_distance(cloud: &PointCloud) -> Result<f64> {
    let k = cloud.len();
    if k < 2 {
        return Err(Error::BandwidthUndefined(format!(
            "need at least 2 points, got {k}"
        )));
    }
    let p = cloud.matrix();
    let mut sum = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            sum += (p.column(i) - p.column(j)).norm();
        }
    }
    Ok(sum / ((k * (k - 1) / 2) as f64))
}

/// Bandwidth rule `σ_t = p · d̄_t`.
pub fn bandwidth(cloud: &PointCloud, p: f64) -> Result<f64> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::BandwidthUndefined(format!(
            "factor p must be positive, got {p}"
        )));
    }
    let sigma = p * mean_pairwise_distance(cloud)?;
    if sigma <= 0.0 {
        return Err(Error::BandwidthUndefined(
            "all points coincide (zero mean distance)".into(),
        ));
    }
    Ok(sigma)
}

/// A Gram matrix together with the jitter added to keep it positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub matrix: DMatrix<f64>,
    pub jitter: f64,
    pub sigma: f64,
}

fn raw_gram(cloud: &PointCloud, sigma: f64) -> DMatrix<f64> {
    let p = cloud.matrix();
    let k = cloud.len();
    let mut g = DMatrix::zeros(k, k);
    for i in 0..k {
        g[(i, i)] = 1.0;
        for j in (i + 1)..k {
            let v = gaussian(p.column(i).as_slice(), p.column(j).as_slice(), sigma);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Build `K_t`, adding the smallest tiered jitter that restores positive
/// definiteness when the smallest eigenvalue is at or below `1e-10 · m_t`.
pub fn gram(cloud: &PointCloud, spec: &KernelSpec) -> Result<GramMatrix> {
    let sigma = if cloud.len() == 1 {
        // a single point has no pairwise distance; its Gram matrix is [1] for any σ
        match spec.bandwidth {
            Bandwidth::Fixed { sigma } => sigma,
            Bandwidth::MeanPairwise { .. } => 1.0,
        }
    } else {
        spec.sigma_for(cloud)?
    };
    gram_with_sigma(cloud, sigma)
}

pub fn gram_with_sigma(cloud: &PointCloud, sigma: f64) -> Result<GramMatrix> {
    let k = cloud.len();
    let matrix = raw_gram(cloud, sigma);
    let eps_pd = 1e-10 * k as f64;
    let min_eig = linalg::min_eigenvalue(&matrix)?;
    if min_eig > eps_pd {
        return Ok(GramMatrix {
            matrix,
            jitter: 0.0,
            sigma,
        });
    }
    let scale = matrix.trace() / k as f64;
    let mut last = min_eig;
    for level in JITTER_LEVELS {
        let tau = level * scale;
        let mut jittered = matrix.clone();
        for i in 0..k {
            jittered[(i, i)] += tau;
        }
        last = linalg::min_eigenvalue(&jittered)?;
        if last > eps_pd {
            log::debug!("gram: applied jitter {tau:e} (min eigenvalue was {min_eig:e})");
            return Ok(GramMatrix {
                matrix: jittered,
                jitter: tau,
                sigma,
            });
        }
    }
    Err(Error::KernelDegenerate { min_eig: last })
}

/// `k_t(query)`: kernel evaluations between every cloud point and `query`.
pub fn kernel_vector(cloud: &PointCloud, sigma: f64, query: &[f64]) -> DVector<f64> {
    let p = cloud.matrix();
    DVector::from_iterator(
        cloud.len(),
        p.column_iter().map(|c| gaussian(c.as_slice(), query, sigma)),
    )
}

/// Like [`kernel_vector`] but resolving the bandwidth from `spec`.
pub fn kernel_vector_spec(
    cloud: &PointCloud,
    spec: &KernelSpec,
    query: &[f64],
) -> Result<DVector<f64>> {
    Ok(kernel_vector(cloud, spec.sigma_for(cloud)?, query))
}
