//! Point-clouds, visibility and datasets.
//!
//! Correspondence indices are 0-based in memory and 1-based in every file
//! format; the conversion happens in [`crate::io`]. A global index keeps its
//! meaning across views, so a visibility matrix is a pure column selection.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// A `d × k` matrix of point coordinates, one point per column.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    data: DMatrix<f64>,
}

impl PointCloud {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let d = data.nrows();
        if d != 2 && d != 3 {
            return Err(Error::InvalidInput(format!(
                "point dimension must be 2 or 3, got {d}"
            )));
        }
        if data.ncols() == 0 {
            return Err(Error::InvalidInput("point-cloud has no points".into()));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite coordinate {v}")));
        }
        Ok(Self { data })
    }

    pub fn from_columns(d: usize, points: &[Vec<f64>]) -> Result<Self> {
        let mut data = DMatrix::zeros(d, points.len());
        for (j, p) in points.iter().enumerate() {
            if p.len() != d {
                return Err(Error::InvalidInput(format!(
                    "point {j} has {} coordinates, expected {d}",
                    p.len()
                )));
            }
            for (i, &v) in p.iter().enumerate() {
                data[(i, j)] = v;
            }
        }
        Self::new(data)
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn point(&self, j: usize) -> DVector<f64> {
        self.data.column(j).into_owned()
    }

    /// Homogenized `(d+1) × k` matrix `[P; 1ᵀ]`.
    pub fn homogeneous(&self) -> DMatrix<f64> {
        let (d, k) = self.data.shape();
        let mut out = DMatrix::from_element(d + 1, k, 1.0);
        out.view_mut((0, 0), (d, k)).copy_from(&self.data);
        out
    }

    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        let d = self.dim();
        let mut data = DMatrix::zeros(d, cols.len());
        for (k, &j) in cols.iter().enumerate() {
            data.set_column(k, &self.data.column(j));
        }
        Self::new(data)
    }
}

/// Visible global correspondence indices of one view, sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visibility {
    m: usize,
    ids: Vec<usize>,
}

impl Visibility {
    pub fn new(m: usize, ids: Vec<usize>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidInput("visibility set is empty".into()));
        }
        if ids.len() > m {
            return Err(Error::InvalidInput(format!(
                "{} visible ids exceed m = {m}",
                ids.len()
            )));
        }
        for w in ids.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidInput(
                    "visible ids must be strictly increasing".into(),
                ));
            }
        }
        if let Some(&last) = ids.last() {
            if last >= m {
                return Err(Error::InvalidInput(format!(
                    "visible id {} out of range for m = {m}",
                    last + 1
                )));
            }
        }
        Ok(Self { m, ids })
    }

    pub fn full(m: usize) -> Self {
        Self {
            m,
            ids: (0..m).collect(),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    /// Position of global id `g` inside this view, if visible.
    pub fn local_index(&self, g: usize) -> Option<usize> {
        self.ids.binary_search(&g).ok()
    }
}

/// The dense `m × m_t` selection matrix Γ whose column j is `e_{ids[j]}`.
pub fn visibility_matrix(vis: &Visibility) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(vis.m(), vis.count());
    for (j, &id) in vis.ids().iter().enumerate() {
        g[(id, j)] = 1.0;
    }
    g
}

/// One observation `(P_t, Γ_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub id: usize,
    pub cloud: PointCloud,
    pub vis: Visibility,
}

impl View {
    pub fn new(id: usize, cloud: PointCloud, vis: Visibility) -> Result<Self> {
        if cloud.len() != vis.count() {
            return Err(Error::InvalidInput(format!(
                "view {id}: {} points but {} visible ids",
                cloud.len(),
                vis.count()
            )));
        }
        Ok(Self { id, cloud, vis })
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    /// Gather the columns of a `d × m` global matrix visible in this view (`M Γ_t`).
    pub fn gather(&self, global: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(global.nrows(), self.vis.count());
        for (j, &id) in self.vis.ids().iter().enumerate() {
            out.set_column(j, &global.column(id));
        }
        out
    }
}

/// The collection of views sharing `m` global correspondences in dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    m: usize,
    views: Vec<View>,
}

impl Dataset {
    pub fn new(d: usize, m: usize, views: Vec<View>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::InvalidInput("dataset has no views".into()));
        }
        let mut seen = vec![false; m];
        for v in &views {
            if v.cloud.dim() != d {
                return Err(Error::InvalidInput(format!(
                    "view {}: dimension {} differs from dataset dimension {d}",
                    v.id,
                    v.cloud.dim()
                )));
            }
            if v.vis.m() != m {
                return Err(Error::InvalidInput(format!(
                    "view {}: visibility built for m = {}, dataset has m = {m}",
                    v.id,
                    v.vis.m()
                )));
            }
            for &id in v.vis.ids() {
                seen[id] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidInput(format!(
                "correspondence {} is not visible in any view",
                missing + 1
            )));
        }
        Ok(Self { d, m, views })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.views.len()
    }

    pub fn views(&self) -> &[View] {
        &self.views
    }

    /// Number of views observing each global correspondence.
    pub fn visibility_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.m];
        for v in &self.views {
            for &id in v.vis.ids() {
                c[id] += 1;
            }
        }
        c
    }

    /// Restrict the dataset to the global ids in `keep` (renumbered
    /// compactly in increasing order). Returns the sub-dataset and the map
    /// from new ids to original ids. Views that keep no points are dropped.
    pub fn restrict(&self, keep: &[usize]) -> Result<(Dataset, Vec<usize>)> {
        let mut keep: Vec<usize> = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        let remap: BTreeMap<usize, usize> =
            keep.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let mut views = Vec::new();
        for v in &self.views {
            let mut cols = Vec::new();
            let mut ids = Vec::new();
            for (j, id) in v.vis.ids().iter().enumerate() {
                if let Some(&new) = remap.get(id) {
                    cols.push(j);
                    ids.push(new);
                }
            }
            if cols.is_empty() {
                continue;
            }
            let cloud = v.cloud.select_columns(&cols)?;
            views.push(View::new(v.id, cloud, Visibility::new(keep.len(), ids)?)?);
        }
        Ok((Dataset::new(self.d, keep.len(), views)?, keep))
    }
}

/// Subtract the centroid: returns the zero-centered cloud and the centroid.
pub fn center(cloud: &PointCloud) -> (PointCloud, DVector<f64>) {
    let c = linalg::row_mean(cloud.matrix());
    let centered = linalg::subtract_column(cloud.matrix(), &c);
    (PointCloud { data: centered }, c)
}

/// Point-cloud covariance `M̄ M̄ᵀ` (unnormalized scatter of the centered cloud).
pub fn covariance(cloud: &PointCloud) -> DMatrix<f64> {
    let (c, _) = center(cloud);
    linalg::symmetrized(c.matrix() * c.matrix().transpose())
}
