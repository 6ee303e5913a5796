//! On-disk formats.
//!
//! A dataset directory holds `dataset.json` and one `view_<t>.csv` per view
//! (`corr_id,x,y[,z]`, ids 1-based). A results directory holds `map.csv` and
//! `transforms.json`. Evaluation writes `report.json`; held-out ids live in
//! `split.json`. Coordinates are written in shortest round-trip form, so a
//! save/load cycle reproduces every value bit for bit.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EvalReport, Stats};
use crate::geom::{Dataset, PointCloud, View, Visibility};
use crate::kernel_gpa::{KbtParams, KernelWarp};
use crate::registration::{Method, Registration, RunConfig, ViewTransform};
use crate::scale::{DegeneracyReport, RigidPose};
use crate::synth::{DeformationField, GroundTruth};
use crate::warps::TpsBasis;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "dataset.json";
pub const MAP_FILE: &str = "map.csv";
pub const TRANSFORMS_FILE: &str = "transforms.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

const AXES: [&str; 3] = ["x", "y", "z"];

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        msg: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().cloned().collect()).collect()
}

fn from_rows(path: &Path, what: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(format_err(path, format!("{what} must be {nrows} × {ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn from_columns(path: &Path, what: &str, cols: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    if cols.iter().any(|c| c.len() != d) {
        return Err(format_err(path, format!("every point of {what} must have {d} coordinates")));
    }
    Ok(DMatrix::from_fn(d, cols.len(), |i, j| cols[j][i]))
}

fn vector(path: &Path, what: &str, v: &[f64], d: usize) -> Result<DVector<f64>> {
    if v.len() != d {
        return Err(format_err(path, format!("{what} must have {d} entries")));
    }
    Ok(DVector::from_column_slice(v))
}

fn one_based(ids: &[usize]) -> Vec<usize> {
    ids.iter().map(|&i| i + 1).collect()
}

// ---------------------------------------------------------------- datasets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub d: usize,
    pub m: usize,
    pub n: usize,
    /// View file names relative to the manifest; view `t` is `views[t]`.
    pub views: Vec<String>,
    #[serde(default = "default_units")]
    pub units: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
}

fn default_units() -> String {
    "mm".into()
}

pub fn view_file_name(t: usize) -> String {
    format!("view_{}.csv", t + 1)
}

fn header(d: usize, id_column: &str) -> Vec<&str> {
    std::iter::once(id_column).chain(AXES[..d].iter().copied()).collect()
}

/// Write `corr_id,x,y[,z]` rows, ids 1-based.
fn write_points(path: &Path, ids: &[usize], points: &DMatrix<f64>) -> Result<()> {
    let d = points.nrows();
    if d > 3 {
        return Err(format_err(path, format!("cannot write {d}-dimensional points")));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header(d, "corr_id")).map_err(|e| csv_err(path, e))?;
    for (j, &id) in ids.iter().enumerate() {
        let mut rec = vec![(id + 1).to_string()];
        rec.extend(points.column(j).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

/// Read a `corr_id,x,y[,z]` file. Returns 0-based ids sorted ascending with
/// their points; rejects duplicates, ids outside `1..=m` and non-finite values.
fn read_points(path: &Path, d: usize, m: usize) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let expected = header(d, "corr_id");
    let got = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if got.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected header '{}', got '{}'", expected.join(","), got.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut seen = HashSet::new();
    let mut entries: Vec<(usize, Vec<f64>)> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if rec.len() != d + 1 {
            return Err(parse_err(format!("expected {} fields, got {}", d + 1, rec.len())));
        }
        let id: usize = rec[0]
            .parse()
            .map_err(|_| parse_err(format!("corr_id '{}' is not a positive integer", &rec[0])))?;
        if id == 0 || id > m {
            return Err(parse_err(format!("corr_id {id} outside 1..={m}")));
        }
        if !seen.insert(id) {
            return Err(parse_err(format!("duplicate corr_id {id}")));
        }
        let mut coords = Vec::with_capacity(d);
        for k in 0..d {
            let v: f64 = rec[k + 1]
                .parse()
                .map_err(|_| parse_err(format!("coordinate '{}' is not a number", &rec[k + 1])))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite coordinate {}", &rec[k + 1])));
            }
            coords.push(v);
        }
        entries.push((id - 1, coords));
    }
    entries.sort_by_key(|e| e.0);
    let ids: Vec<usize> = entries.iter().map(|e| e.0).collect();
    let points = DMatrix::from_fn(d, entries.len(), |i, j| entries[j].1[i]);
    Ok((ids, points))
}

/// Write a dataset directory. Views are renumbered by position.
pub fn save_dataset(dataset: &Dataset, dir: &Path, ground_truth: Option<&str>) -> Result<()> {
    ensure_dir(dir)?;
    let mut names = Vec::with_capacity(dataset.n());
    for (t, view) in dataset.views().iter().enumerate() {
        let name = view_file_name(t);
        write_points(&dir.join(&name), view.vis.ids(), view.cloud.matrix())?;
        names.push(name);
    }
    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        d: dataset.dim(),
        m: dataset.m(),
        n: dataset.n(),
        views: names,
        units: default_units(),
        ground_truth: ground_truth.map(str::to_string),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: DatasetManifest = read_json(&path)?;
    if manifest.version != FORMAT_VERSION {
        return Err(format_err(&path, format!("unsupported version {}", manifest.version)));
    }
    if manifest.d != 2 && manifest.d != 3 {
        return Err(format_err(&path, format!("d must be 2 or 3, got {}", manifest.d)));
    }
    if manifest.views.len() != manifest.n {
        return Err(format_err(
            &path,
            format!("n = {} but {} view files are listed", manifest.n, manifest.views.len()),
        ));
    }
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = load_manifest(dir)?;
    let mut views = Vec::with_capacity(manifest.n);
    for (t, name) in manifest.views.iter().enumerate() {
        let path = dir.join(name);
        let (ids, points) = read_points(&path, manifest.d, manifest.m)?;
        if ids.is_empty() {
            return Err(format_err(&path, "view has no points"));
        }
        let vis = Visibility::new(manifest.m, ids)?;
        views.push(View::new(t, PointCloud::new(points)?, vis)?);
    }
    Dataset::new(manifest.d, manifest.m, views).map_err(|e| format_err(&dir.join(MANIFEST_FILE), e.to_string()))
}

// ---------------------------------------------------------------- results

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TransformRecord {
    Rigid {
        rotation: Vec<Vec<f64>>,
        translation: Vec<f64>,
    },
    Affine {
        linear: Vec<Vec<f64>>,
        offset: Vec<f64>,
    },
    Tps {
        /// Control points, one per entry.
        controls: Vec<Vec<f64>>,
        /// Warp values at the controls, one `d`-vector per control.
        weights: Vec<Vec<f64>>,
    },
    Kernel {
        linear: Vec<Vec<f64>>,
        offset: Vec<f64>,
        /// `Ω`, one `d`-row per center.
        omega: Vec<Vec<f64>>,
        centers: Vec<Vec<f64>>,
        sigma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewTransformRecord {
    /// 1-based view number.
    pub view: usize,
    #[serde(flatten)]
    pub transform: TransformRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformsFile {
    pub version: u32,
    pub method: Method,
    pub d: usize,
    pub params: serde_json::Value,
    pub cost: f64,
    pub lambda: Option<Vec<f64>>,
    pub r_g: Option<Vec<Vec<f64>>>,
    pub degeneracy: Option<DegeneracyReport>,
    pub warnings: Vec<String>,
    /// Wall-clock time of the registration.
    #[serde(default)]
    pub runtime_ms: f64,
    pub views: Vec<ViewTransformRecord>,
}

fn transform_record(tf: &ViewTransform) -> TransformRecord {
    match tf {
        ViewTransform::Rigid(pose) => TransformRecord::Rigid {
            rotation: rows(&pose.rotation),
            translation: pose.translation.iter().cloned().collect(),
        },
        ViewTransform::Affine { linear, offset } => TransformRecord::Affine {
            linear: rows(linear),
            offset: offset.iter().cloned().collect(),
        },
        ViewTransform::Tps { basis, weights } => TransformRecord::Tps {
            controls: columns(basis.controls()),
            weights: rows(weights),
        },
        ViewTransform::Kernel(w) => TransformRecord::Kernel {
            linear: rows(&w.params.linear),
            offset: w.params.offset.iter().cloned().collect(),
            omega: rows(&w.params.omega),
            centers: columns(&w.centers),
            sigma: w.sigma,
        },
    }
}

fn view_transform(path: &Path, d: usize, rec: &TransformRecord) -> Result<ViewTransform> {
    Ok(match rec {
        TransformRecord::Rigid { rotation, translation } => ViewTransform::Rigid(RigidPose {
            rotation: from_rows(path, "rotation", rotation, d, d)?,
            translation: vector(path, "translation", translation, d)?,
        }),
        TransformRecord::Affine { linear, offset } => ViewTransform::Affine {
            linear: from_rows(path, "linear", linear, d, d)?,
            offset: vector(path, "offset", offset, d)?,
        },
        TransformRecord::Tps { controls, weights } => {
            let basis = TpsBasis::new(from_columns(path, "controls", controls, d)?)?;
            let weights = from_rows(path, "weights", weights, basis.len(), d)?;
            ViewTransform::Tps { basis, weights }
        }
        TransformRecord::Kernel {
            linear,
            offset,
            omega,
            centers,
            sigma,
        } => {
            if !(*sigma > 0.0 && sigma.is_finite()) {
                return Err(format_err(path, format!("kernel sigma must be positive, got {sigma}")));
            }
            let centers = from_columns(path, "centers", centers, d)?;
            ViewTransform::Kernel(KernelWarp {
                params: KbtParams {
                    linear: from_rows(path, "linear", linear, d, d)?,
                    offset: vector(path, "offset", offset, d)?,
                    omega: from_rows(path, "omega", omega, centers.ncols(), d)?,
                },
                centers,
                sigma: *sigma,
            })
        }
    })
}

/// Write `map.csv` and `transforms.json`. `params` records the run settings.
pub fn save_registration(reg: &Registration, params: &serde_json::Value, runtime_ms: f64, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    write_points(&dir.join(MAP_FILE), &reg.map_ids, &reg.map)?;
    let file = TransformsFile {
        version: FORMAT_VERSION,
        method: reg.method,
        d: reg.d,
        params: params.clone(),
        cost: reg.cost,
        lambda: reg.lambda.clone(),
        r_g: reg.r_g.as_ref().map(rows),
        degeneracy: reg.degeneracy.clone(),
        warnings: reg.warnings.clone(),
        runtime_ms,
        views: reg
            .view_ids
            .iter()
            .zip(&reg.transforms)
            .map(|(&v, tf)| ViewTransformRecord {
                view: v + 1,
                transform: transform_record(tf),
            })
            .collect(),
    };
    write_json(&dir.join(TRANSFORMS_FILE), &file)
}

/// Load a results directory with the raw `transforms.json` contents.
pub fn load_registration(dir: &Path) -> Result<(Registration, TransformsFile)> {
    let tpath = dir.join(TRANSFORMS_FILE);
    let file: TransformsFile = read_json(&tpath)?;
    if file.version != FORMAT_VERSION {
        return Err(format_err(&tpath, format!("unsupported version {}", file.version)));
    }
    let d = file.d;
    if d != 2 && d != 3 {
        return Err(format_err(&tpath, format!("d must be 2 or 3, got {d}")));
    }
    let mut view_ids = Vec::with_capacity(file.views.len());
    let mut transforms = Vec::with_capacity(file.views.len());
    for rec in &file.views {
        if rec.view == 0 {
            return Err(format_err(&tpath, "view numbers are 1-based"));
        }
        view_ids.push(rec.view - 1);
        transforms.push(view_transform(&tpath, d, &rec.transform)?);
    }
    let mpath = dir.join(MAP_FILE);
    let (map_ids, map) = read_points(&mpath, d, usize::MAX)?;
    let r_g = match &file.r_g {
        Some(r) => Some(from_rows(&tpath, "r_g", r, d, d)?),
        None => None,
    };
    let reg = Registration {
        method: file.method,
        d,
        map,
        map_ids,
        view_ids,
        transforms,
        lambda: file.lambda.clone(),
        r_g,
        degeneracy: file.degeneracy.clone(),
        warnings: file.warnings.clone(),
        cost: file.cost,
    };
    Ok((reg, file))
}

// ---------------------------------------------------------------- reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    /// 1-based correspondence id.
    pub id: usize,
    pub delta: f64,
    pub visibility: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub method: Method,
    pub params: serde_json::Value,
    pub stats: Stats,
    pub per_point: Vec<PointRecord>,
    /// 1-based ids of test points no registered view observes.
    #[serde(default)]
    pub unobserved: Vec<usize>,
    pub runtime_ms: f64,
}

impl ReportFile {
    pub fn new(method: Method, params: serde_json::Value, report: &EvalReport, runtime_ms: f64) -> Self {
        Self {
            method,
            params,
            stats: report.stats,
            per_point: report
                .ids
                .iter()
                .zip(&report.delta)
                .zip(&report.visibility)
                .map(|((&id, &delta), &visibility)| PointRecord {
                    id: id + 1,
                    delta,
                    visibility,
                })
                .collect(),
            unobserved: one_based(&report.unobserved),
            runtime_ms,
        }
    }

    /// Equality on everything except the wall-clock runtime.
    pub fn same_results(&self, other: &ReportFile) -> bool {
        self.method == other.method
            && self.params == other.params
            && self.stats == other.stats
            && self.per_point == other.per_point
            && self.unobserved == other.unobserved
    }
}

pub fn save_report(report: &ReportFile, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_json(path, report)
}

pub fn load_report(path: &Path) -> Result<ReportFile> {
    read_json(path)
}

// ---------------------------------------------------------------- splits and configs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitFile {
    test_ids: Vec<usize>,
}

/// Save 0-based test ids as a 1-based `split.json`.
pub fn save_split(test_ids: &[usize], path: &Path) -> Result<()> {
    write_json(path, &SplitFile {
        test_ids: one_based(test_ids),
    })
}

/// Load a `split.json` as sorted, deduplicated 0-based ids.
pub fn load_split(path: &Path) -> Result<Vec<usize>> {
    let file: SplitFile = read_json(path)?;
    if file.test_ids.contains(&0) {
        return Err(format_err(path, "test ids are 1-based"));
    }
    let mut ids: Vec<usize> = file.test_ids.iter().map(|&i| i - 1).collect();
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = read_text(path)?;
    let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_json_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- ground truth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeformationRecord {
    Identity,
    Bumps {
        centers: Vec<Vec<f64>>,
        amplitudes: Vec<Vec<f64>>,
        width: f64,
    },
    Tps {
        controls: Vec<Vec<f64>>,
        displacements: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub rotation: Vec<Vec<f64>>,
    pub translation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    /// Canonical shape, one point per correspondence id (id `j + 1` at index `j`).
    pub map: Vec<Vec<f64>>,
    pub poses: Vec<PoseRecord>,
    pub deformations: Vec<DeformationRecord>,
    /// Per view, 1-based training ids that were dropped.
    pub dropped: Vec<Vec<usize>>,
    /// 1-based ids of the test points (visible in every view, never trained on).
    pub test_ids: Vec<usize>,
}

impl GroundTruthFile {
    pub fn new(gt: &GroundTruth) -> Self {
        Self {
            map: columns(&gt.map),
            poses: gt
                .poses
                .iter()
                .map(|p| PoseRecord {
                    rotation: rows(&p.rotation),
                    translation: p.translation.iter().cloned().collect(),
                })
                .collect(),
            deformations: gt
                .deformations
                .iter()
                .map(|f| match f {
                    DeformationField::Identity => DeformationRecord::Identity,
                    DeformationField::Bumps {
                        centers,
                        amplitudes,
                        width,
                    } => DeformationRecord::Bumps {
                        centers: columns(centers),
                        amplitudes: columns(amplitudes),
                        width: *width,
                    },
                    DeformationField::Tps { basis, displacements } => DeformationRecord::Tps {
                        controls: columns(basis.controls()),
                        displacements: rows(displacements),
                    },
                })
                .collect(),
            dropped: gt.dropped.iter().map(|v| one_based(v)).collect(),
            test_ids: one_based(&gt.test_ids),
        }
    }

    /// The canonical shape as a `d × m` matrix.
    pub fn map_matrix(&self, path: &Path) -> Result<DMatrix<f64>> {
        let d = self.map.first().map_or(0, Vec::len);
        from_columns(path, "map", &self.map, d)
    }
}

pub fn save_ground_truth(gt: &GroundTruth, path: &Path) -> Result<()> {
    write_json(path, &GroundTruthFile::new(gt))
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruthFile> {
    read_json(path)
}
