//! Readers and writers for every file the tools consume or produce.
//!
//! JSON and CSV floats are written in shortest round-trip form, so
//! writing and reading back gives the same bits. All writes go through a
//! temporary file in the target directory followed by a rename.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crowdcal_core::assoc::{BBox, Tracklet};
use crowdcal_core::metrics::{AnnotatedPair, PoseError, RpeReport};
use crowdcal_core::optim::LmReport;
use crowdcal_core::pipeline::{CalibrationResult, SegmentPrior};
use crowdcal_core::study::StudyRow;
use crowdcal_core::track::{GroundPlane, Trajectory};
use crowdcal_core::{CameraId, CameraIntrinsics, Pose};
use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Writes `bytes` to `path` so that readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read(path)?).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::io::Cursor<Vec<u8>>>> {
    let bytes = read(path)?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(std::io::Cursor::new(bytes)))
}

/// Serializes rows into an in-memory CSV and writes it atomically.
fn write_csv<F>(path: &Path, header: &[&str], fill: F) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_error(path))?;
    fill(&mut w).map_err(csv_error(path))?;
    let bytes = w.into_inner().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })?;
    write_atomic(path, &bytes)
}

// ---------------------------------------------------------------- intrinsics

#[derive(Debug, Serialize, Deserialize)]
struct IntrinsicsRecord {
    id: CameraId,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    dist: [f64; 5],
    width: u32,
    height: u32,
}

/// JSON array with one object per camera.
pub fn read_intrinsics(path: &Path) -> Result<BTreeMap<CameraId, CameraIntrinsics>> {
    let records: Vec<IntrinsicsRecord> = read_json(path)?;
    let mut out = BTreeMap::new();
    for r in records {
        let k = CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.dist, r.width, r.height)
            .map_err(|e| Error::format(path, format!("camera {}: {e}", r.id)))?;
        if out.insert(r.id, k).is_some() {
            return Err(Error::format(path, format!("camera {} listed twice", r.id)));
        }
    }
    Ok(out)
}

pub fn write_intrinsics(path: &Path, intrinsics: &BTreeMap<CameraId, CameraIntrinsics>) -> Result<()> {
    let records: Vec<IntrinsicsRecord> = intrinsics
        .iter()
        .map(|(&id, k)| IntrinsicsRecord {
            id,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            dist: k.dist,
            width: k.width,
            height: k.height,
        })
        .collect();
    write_json(path, &records)
}

// -------------------------------------------------------------------- tracks

#[derive(Debug, Serialize, Deserialize)]
struct TrackRow {
    frame: u32,
    #[serde(rename = "personId")]
    person_id: u32,
    #[serde(rename = "uTl")]
    u_tl: f64,
    #[serde(rename = "vTl")]
    v_tl: f64,
    #[serde(rename = "uBr")]
    u_br: f64,
    #[serde(rename = "vBr")]
    v_br: f64,
}

const TRACK_HEADER: [&str; 6] = ["frame", "personId", "uTl", "vTl", "uBr", "vBr"];

/// MOT-style track file of one camera. Rows may come in any order; the
/// result holds one tracklet per person, ordered by id, boxes by frame.
pub fn read_tracks(path: &Path, camera: CameraId) -> Result<Vec<Tracklet>> {
    let mut by_person: BTreeMap<u32, Vec<BBox>> = BTreeMap::new();
    for row in csv_reader(path)?.deserialize() {
        let r: TrackRow = row.map_err(csv_error(path))?;
        let b = BBox::new([r.u_tl, r.v_tl, r.u_br, r.v_br], r.frame, r.person_id, camera)
            .map_err(|e| Error::format(path, format!("person {} frame {}: {e}", r.person_id, r.frame)))?;
        by_person.entry(r.person_id).or_default().push(b);
    }
    by_person
        .into_iter()
        .map(|(person, mut boxes)| {
            boxes.sort_by_key(|b| b.frame);
            Tracklet::new(camera, person, boxes).map_err(|e| Error::format(path, format!("person {person}: {e}")))
        })
        .collect()
}

pub fn write_tracks(path: &Path, tracks: &[Tracklet]) -> Result<()> {
    write_csv(path, &TRACK_HEADER, |w| {
        for t in tracks {
            for b in &t.boxes {
                w.write_record(&[
                    b.frame.to_string(),
                    t.person_id.to_string(),
                    b.u_tl.to_string(),
                    b.v_tl.to_string(),
                    b.u_br.to_string(),
                    b.v_br.to_string(),
                ])?;
            }
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- embeddings

/// Feature vectors keyed by `(camera, person, frame)`.
pub type Embeddings = BTreeMap<(CameraId, u32, u32), Vec<f64>>;

/// CSV with header `cameraId,personId,frame,f0,...,f{D-1}`; the number of
/// feature columns in the header fixes `D` for every row.
pub fn read_embeddings(path: &Path) -> Result<Embeddings> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(csv_error(path))?.clone();
    if header.len() < 4 || &header[0] != "cameraId" || &header[1] != "personId" || &header[2] != "frame" {
        return Err(Error::format(path, "header must start with cameraId,personId,frame followed by features"));
    }
    let dim = header.len() - 3;
    let mut out = Embeddings::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error(path))?;
        let bad = |what: &str| Error::format(path, format!("row {}: {what}", line + 2));
        if record.len() != dim + 3 {
            return Err(bad("wrong number of columns"));
        }
        let int = |i: usize| record[i].parse::<u32>().map_err(|_| bad("ids and frames must be integers"));
        let key = (int(0)?, int(1)?, int(2)?);
        let features = record
            .iter()
            .skip(3)
            .map(|v| v.parse::<f64>().map_err(|_| bad("features must be numbers")))
            .collect::<Result<Vec<f64>>>()?;
        if out.insert(key, features).is_some() {
            return Err(bad("duplicate key"));
        }
    }
    Ok(out)
}

/// Writes the features of every box that has one.
pub fn write_embeddings(path: &Path, tracks: &BTreeMap<CameraId, Vec<Tracklet>>) -> Result<()> {
    let dim = tracks
        .values()
        .flatten()
        .flat_map(|t| t.embeddings.iter().flatten())
        .map(Vec::len)
        .next()
        .unwrap_or(0);
    let mut header: Vec<String> = ["cameraId", "personId", "frame"].map(String::from).to_vec();
    header.extend((0..dim).map(|i| format!("f{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(path, &header, |w| {
        for (cam, ts) in tracks {
            for t in ts {
                for (b, e) in t.boxes.iter().zip(&t.embeddings) {
                    let Some(e) = e else { continue };
                    let mut row = vec![cam.to_string(), t.person_id.to_string(), b.frame.to_string()];
                    row.extend(e.iter().map(f64::to_string));
                    w.write_record(&row)?;
                }
            }
        }
        Ok(())
    })
}

/// Attaches features to the boxes they belong to; boxes without a row get
/// none.
pub fn attach_embeddings(tracks: &mut BTreeMap<CameraId, Vec<Tracklet>>, embeddings: &Embeddings) -> Result<()> {
    for (&cam, ts) in tracks.iter_mut() {
        for t in ts.iter_mut() {
            let features = t
                .boxes
                .iter()
                .map(|b| embeddings.get(&(cam, t.person_id, b.frame)).cloned())
                .collect();
            *t = t
                .clone()
                .with_embeddings(features)
                .map_err(|e| Error::Config(format!("camera {cam} person {}: {e}", t.person_id)))?;
        }
    }
    Ok(())
}

// -------------------------------------------------- priors and annotations

pub fn read_priors(path: &Path) -> Result<Vec<SegmentPrior>> {
    read_json(path)
}

pub fn write_priors(path: &Path, priors: &[SegmentPrior]) -> Result<()> {
    write_json(path, priors)
}

pub fn read_annotated(path: &Path) -> Result<Vec<AnnotatedPair>> {
    read_json(path)
}

pub fn write_annotated(path: &Path, pairs: &[AnnotatedPair]) -> Result<()> {
    write_json(path, pairs)
}

// --------------------------------------------------------------------- poses

#[derive(Debug, Serialize, Deserialize)]
struct PoseRecord {
    /// Row-major rotation.
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    metric: bool,
}

/// `{ "<camera id>": { "R": [9 floats, row-major], "t": [3], "metric": bool } }`
pub fn read_poses(path: &Path) -> Result<BTreeMap<CameraId, Pose>> {
    let records: BTreeMap<CameraId, PoseRecord> = read_json(path)?;
    records
        .into_iter()
        .map(|(id, r)| {
            Pose::new(Matrix3::from_row_slice(&r.r), Vector3::from(r.t), r.metric)
                .map(|p| (id, p))
                .map_err(|e| Error::format(path, format!("camera {id}: {e}")))
        })
        .collect()
}

pub fn write_poses(path: &Path, poses: &BTreeMap<CameraId, Pose>) -> Result<()> {
    let records: BTreeMap<CameraId, PoseRecord> = poses
        .iter()
        .map(|(&id, p)| {
            let m = p.rotation.matrix();
            let r = core::array::from_fn(|i| m[(i / 3, i % 3)]);
            (
                id,
                PoseRecord {
                    r,
                    t: [p.translation.x, p.translation.y, p.translation.z],
                    metric: p.metric,
                },
            )
        })
        .collect();
    write_json(path, &records)
}

/// Re-expresses poses given in any common frame against `reference`.
pub fn rebase(poses: &BTreeMap<CameraId, Pose>, reference: CameraId) -> Option<BTreeMap<CameraId, Pose>> {
    let r = *poses.get(&reference)?;
    Some(poses.iter().map(|(&id, p)| (id, p.relative_to(&r))).collect())
}

// ------------------------------------------------------------------- results

pub fn read_result(path: &Path) -> Result<CalibrationResult> {
    read_json(path)
}

pub fn write_result(path: &Path, result: &CalibrationResult) -> Result<()> {
    write_json(path, result)
}

/// `iteration,cost` of every accepted step, starting from the initial cost.
pub fn write_cost_trace(path: &Path, report: &LmReport) -> Result<()> {
    write_csv(path, &["iteration", "cost"], |w| {
        for (i, c) in report.cost_trace.iter().enumerate() {
            w.write_record(&[i.to_string(), c.to_string()])?;
        }
        Ok(())
    })
}

/// Evaluation summary, one `metric,camera,value` row per number. Camera
/// `mean` averages the non-reference cameras; `all` marks network-wide
/// figures.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub pose: Option<(BTreeMap<CameraId, PoseError>, PoseError)>,
    pub rpe: Option<(RpeReport, f64)>,
}

pub fn write_metrics(path: &Path, report: &MetricsReport) -> Result<()> {
    write_csv(path, &["metric", "camera", "value"], |w| {
        if let Some((per_camera, mean)) = &report.pose {
            for (cam, e) in per_camera {
                w.write_record(&["position_mm".into(), cam.to_string(), e.position_mm.to_string()])?;
                w.write_record(&["orientation_deg".into(), cam.to_string(), e.orientation_deg.to_string()])?;
            }
            w.write_record(["position_mm", "mean", &mean.position_mm.to_string()])?;
            w.write_record(["orientation_deg", "mean", &mean.orientation_deg.to_string()])?;
        }
        if let Some((rpe, err)) = &report.rpe {
            w.write_record(["rpe_px", "all", &rpe.rpe.to_string()])?;
            w.write_record(["err_percent", "all", &err.to_string()])?;
            w.write_record(["rpe_evaluated", "all", &rpe.evaluated.to_string()])?;
            w.write_record(["rpe_excluded", "all", &rpe.excluded.to_string()])?;
        }
        Ok(())
    })
}

/// `level,position_mm,orientation_deg,error`; the level column is empty
/// for "all correspondences" and failed rows carry their error instead of
/// numbers.
pub fn write_study(path: &Path, rows: &[StudyRow]) -> Result<()> {
    write_csv(path, &["level", "position_mm", "orientation_deg", "error"], |w| {
        for r in rows {
            let level = r.level.map(|l| l.to_string()).unwrap_or_default();
            match &r.outcome {
                Ok(o) => w.write_record(&[level, o.mean.position_mm.to_string(), o.mean.orientation_deg.to_string(), String::new()])?,
                Err(e) => w.write_record(&[level, String::new(), String::new(), e.clone()])?,
            }
        }
        Ok(())
    })
}

/// `frame,x,y,z` in the reference camera frame, meters.
pub fn write_trajectory(path: &Path, trajectory: &Trajectory) -> Result<()> {
    write_csv(path, &["frame", "x", "y", "z"], |w| {
        for p in &trajectory.points {
            let x = &p.position;
            w.write_record(&[p.frame.to_string(), x.x.to_string(), x.y.to_string(), x.z.to_string()])?;
        }
        Ok(())
    })
}

/// Reads a trajectory file back as `(frame, position)` rows.
pub fn read_trajectory(path: &Path) -> Result<Vec<(u32, Vector3<f64>)>> {
    csv_reader(path)?
        .deserialize()
        .map(|row| {
            let (f, x, y, z): (u32, f64, f64, f64) = row.map_err(csv_error(path))?;
            Ok((f, Vector3::new(x, y, z)))
        })
        .collect()
}

/// `frame,x,y`: the trajectory seen from above, in the coordinates of
/// `plane`.
pub fn write_birds_eye(path: &Path, trajectory: &Trajectory, plane: &GroundPlane) -> Result<()> {
    write_csv(path, &["frame", "x", "y"], |w| {
        for p in &trajectory.points {
            let q = plane.project(&p.position);
            w.write_record(&[p.frame.to_string(), q.x.to_string(), q.y.to_string()])?;
        }
        Ok(())
    })
}

/// Standard names of a dataset written by the `synth` command.
pub struct DatasetPaths {
    pub dir: PathBuf,
}

impl DatasetPaths {
    pub fn intrinsics(&self) -> PathBuf {
        self.dir.join("intrinsics.json")
    }
    pub fn tracks(&self, camera: CameraId) -> PathBuf {
        self.dir.join(format!("tracks_{camera}.csv"))
    }
    pub fn embeddings(&self) -> PathBuf {
        self.dir.join("embeddings.csv")
    }
    pub fn priors(&self) -> PathBuf {
        self.dir.join("priors.json")
    }
    pub fn annotated(&self) -> PathBuf {
        self.dir.join("annotated.json")
    }
    /// World-to-camera poses of the generated cameras.
    pub fn ground_truth(&self) -> PathBuf {
        self.dir.join("ground_truth_poses.json")
    }
    pub fn config(&self) -> PathBuf {
        self.dir.join("config.json")
    }
}
