//! Evaluation on held-out test correspondences: the mean map of the warped
//! test points and each point's RMS spread around it.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Dataset;
use crate::registration::{self, Registration, RunConfig};

/// One view's warped test points: `ids[j]` is the test index of column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedView {
    pub ids: Vec<usize>,
    pub points: DMatrix<f64>,
}

/// Visibility-weighted mean of the warped test points, with per-point
/// visibility counts. Points seen in no view are left at zero.
pub fn mean_map(d: usize, count: usize, warped: &[WarpedView]) -> (DMatrix<f64>, Vec<usize>) {
    let mut sum = DMatrix::zeros(d, count);
    let mut vis = vec![0usize; count];
    for w in warped {
        for (j, &id) in w.ids.iter().enumerate() {
            let mut col = sum.column_mut(id);
            col += w.points.column(j);
            vis[id] += 1;
        }
    }
    for (j, &c) in vis.iter().enumerate() {
        if c > 0 {
            let mut col = sum.column_mut(j);
            col /= c as f64;
        }
    }
    (sum, vis)
}

/// Per-point RMS deviation from the mean map over the views observing the
/// point: `δ_j = sqrt(Σ_t ‖y_t(p_j) − m_j‖² / count_j)`. Unobserved points get 0.
pub fn consistency(warped: &[WarpedView], mean: &DMatrix<f64>, visibility: &[usize]) -> Vec<f64> {
    let mut acc = vec![0.0; mean.ncols()];
    for w in warped {
        for (j, &id) in w.ids.iter().enumerate() {
            acc[id] += (w.points.column(j) - mean.column(id)).norm_squared();
        }
    }
    acc.iter()
        .zip(visibility)
        .map(|(&s, &c)| if c > 0 { (s / c as f64).sqrt() } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

pub fn summarize(delta: &[f64]) -> Result<Stats> {
    if delta.is_empty() {
        return Err(Error::InvalidInput("no consistency values to summarize".into()));
    }
    let min = delta.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = delta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = delta.iter().sum::<f64>() / delta.len() as f64;
    Ok(Stats { min, max, mean })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Original (0-based) ids of the evaluated points.
    pub ids: Vec<usize>,
    pub mean_map: DMatrix<f64>,
    pub delta: Vec<f64>,
    pub visibility: Vec<usize>,
    pub stats: Stats,
    /// Requested test ids that no registered view observes.
    pub unobserved: Vec<usize>,
}

/// Warp the test points of every registered view and report their consistency.
pub fn evaluate(dataset: &Dataset, reg: &Registration, test_ids: &[usize]) -> Result<EvalReport> {
    let mut ids: Vec<usize> = test_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if let Some(&bad) = ids.iter().find(|&&id| id >= dataset.m()) {
        return Err(Error::InvalidInput(format!(
            "test id {} exceeds m = {}",
            bad + 1,
            dataset.m()
        )));
    }
    let slot: std::collections::HashMap<usize, usize> = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let mut warped = Vec::new();
    for view in dataset.views() {
        let cols: Vec<(usize, usize)> = view
            .vis
            .ids()
            .iter()
            .enumerate()
            .filter_map(|(j, id)| slot.get(id).map(|&k| (j, k)))
            .collect();
        if cols.is_empty() {
            continue;
        }
        let Some(tf) = reg.transform_for_view(view.id) else {
            log::warn!("eval: view {} has no registered transform; its test points are skipped", view.id + 1);
            continue;
        };
        let js: Vec<usize> = cols.iter().map(|c| c.0).collect();
        let pts = view.cloud.matrix().select_columns(&js);
        warped.push(WarpedView {
            ids: cols.iter().map(|c| c.1).collect(),
            points: tf.apply_cloud(&pts),
        });
    }
    let (mean, vis) = mean_map(dataset.dim(), ids.len(), &warped);
    let delta_all = consistency(&warped, &mean, &vis);
    let mut unobserved = Vec::new();
    let mut keep = Vec::new();
    for (k, &c) in vis.iter().enumerate() {
        if c == 0 {
            unobserved.push(ids[k]);
        } else {
            keep.push(k);
        }
    }
    if !unobserved.is_empty() {
        log::warn!("eval: {} test points are not observed by any registered view", unobserved.len());
    }
    let delta: Vec<f64> = keep.iter().map(|&k| delta_all[k]).collect();
    let stats = summarize(&delta)?;
    Ok(EvalReport {
        ids: keep.iter().map(|&k| ids[k]).collect(),
        mean_map: mean.select_columns(&keep),
        delta,
        visibility: keep.iter().map(|&k| vis[k]).collect(),
        stats,
        unobserved,
    })
}

/// Train on every id outside `region` and evaluate on the region.
pub fn leave_region_out(dataset: &Dataset, region: &[usize], cfg: &RunConfig) -> Result<(EvalReport, Registration)> {
    let held: std::collections::HashSet<usize> = region.iter().cloned().collect();
    let keep: Vec<usize> = (0..dataset.m()).filter(|id| !held.contains(id)).collect();
    if keep.is_empty() {
        return Err(Error::EmptyTraining);
    }
    let (train, ids) = dataset.restrict(&keep)?;
    let reg = registration::register(&train, cfg, Some(ids))?;
    let report = evaluate(dataset, &reg, region)?;
    Ok((report, reg))
}

/// The `⌈fraction · m⌉` ids whose points are nearest to point `seed` in
/// `map` (a `d × m` reference shape), a spatially contiguous region.
pub fn contiguous_region(map: &DMatrix<f64>, seed: usize, fraction: f64) -> Vec<usize> {
    let m = map.ncols();
    let k = ((fraction * m as f64).ceil() as usize).clamp(1, m);
    let c = map.column(seed);
    let mut order: Vec<(f64, usize)> = (0..m).map(|j| ((map.column(j) - c).norm_squared(), j)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut ids: Vec<usize> = order[..k].iter().map(|o| o.1).collect();
    ids.sort_unstable();
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wv(ids: Vec<usize>, pts: &[f64]) -> WarpedView {
        WarpedView {
            points: DMatrix::from_column_slice(2, ids.len(), pts),
            ids,
        }
    }

    #[test]
    fn two_views_one_point() {
        let w = vec![wv(vec![0], &[0.0, 0.0]), wv(vec![0], &[2.0, 0.0])];
        let (mean, vis) = mean_map(2, 1, &w);
        assert_eq!(mean.as_slice(), &[1.0, 0.0]);
        assert_eq!(vis, vec![2]);
        assert_eq!(consistency(&w, &mean, &vis), vec![1.0]);
    }

    #[test]
    fn identical_views_are_consistent() {
        let pts = [0.5, 1.0, -2.0, 3.0];
        let w = vec![wv(vec![0, 1], &pts), wv(vec![0, 1], &pts)];
        let (mean, vis) = mean_map(2, 2, &w);
        assert_eq!(mean.as_slice(), &pts);
        assert!(consistency(&w, &mean, &vis).iter().all(|&d| d == 0.0));
    }

    #[test]
    fn partial_visibility_means() {
        // point 0 in views 1,2,3; point 1 only in views 1 and 3
        let w = vec![
            wv(vec![0, 1], &[0.0, 0.0, 4.0, 4.0]),
            wv(vec![0], &[3.0, 0.0]),
            wv(vec![0, 1], &[0.0, 3.0, 6.0, 4.0]),
        ];
        let (mean, vis) = mean_map(2, 2, &w);
        assert_eq!(vis, vec![3, 2]);
        assert_eq!(mean.as_slice(), &[1.0, 1.0, 5.0, 4.0]);
        let delta = consistency(&w, &mean, &vis);
        let expect0 = ((2.0 + 5.0 + 5.0) / 3.0f64).sqrt();
        assert!((delta[0] - expect0).abs() < 1e-15);
        assert!((delta[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn summarize_examples() {
        assert_eq!(summarize(&[0.0]).unwrap(), Stats { min: 0.0, max: 0.0, mean: 0.0 });
        assert_eq!(summarize(&[1.0, 3.0]).unwrap(), Stats { min: 1.0, max: 3.0, mean: 2.0 });
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn contiguous_region_picks_neighbours() {
        let map = DMatrix::from_row_slice(2, 5, &[0.0, 1.0, 2.0, 3.0, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(contiguous_region(&map, 4, 0.4), vec![3, 4]);
    }

    proptest! {
        #[test]
        fn delta_scales_and_mean_is_minimizer(vals in prop::collection::vec(-10.0f64..10.0, 12), s in 0.1f64..5.0, step in -0.1f64..0.1) {
            let w: Vec<WarpedView> = vals.chunks(4).map(|c| wv(vec![0, 1], c)).collect();
            let (mean, vis) = mean_map(2, 2, &w);
            let delta = consistency(&w, &mean, &vis);
            let scaled: Vec<WarpedView> = w.iter().map(|v| WarpedView { ids: v.ids.clone(), points: &v.points * s }).collect();
            let (ms, vs) = mean_map(2, 2, &scaled);
            let ds = consistency(&scaled, &ms, &vs);
            for (a, b) in delta.iter().zip(&ds) {
                prop_assert!((a * s - b).abs() <= 1e-9 * (1.0 + b));
            }
            let cost = |m: &DMatrix<f64>| -> f64 {
                w.iter().map(|v| (0..2).map(|j| (v.points.column(j) - m.column(v.ids[j])).norm_squared()).sum::<f64>()).sum()
            };
            let st = summarize(&delta).unwrap();
            prop_assert!(st.min <= st.mean && st.mean <= st.max);
            let mut other = mean.clone();
            other[(0, 0)] += step;
            prop_assert!(cost(&other) >= cost(&mean) - 1e-12);
        }
    }
}
