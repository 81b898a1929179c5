//! Reconstruction output: `poses.txt` (one camera per line), `landmarks.bin`
//! (positions and observations) and `camera.json` (intrinsics and rig).
//! Floats are written with round-trip precision, so reading back gives the
//! identical scene.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::geom::{CameraIntrinsics, Pose, RigExtrinsics};
use crate::scene::{Scene, SceneLandmark};
use crate::tracks::TrackObservation;

pub const POSES_FILE: &str = "poses.txt";
pub const LANDMARKS_FILE: &str = "landmarks.bin";
pub const CAMERA_FILE: &str = "camera.json";

const LANDMARK_MAGIC: &[u8; 8] = b"NSFMLMKS";
const LANDMARK_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: CameraIntrinsics,
    pub rig: RigExtrinsics,
}

pub fn write_poses<W: Write>(mut out: W, poses: &BTreeMap<u32, Pose>) -> io::Result<()> {
    writeln!(out, "# image_id qx qy qz qw tx ty tz")?;
    for (id, p) in poses {
        let q = p.quaternion_xyzw();
        let t = p.translation();
        writeln!(out, "{id} {} {} {} {} {} {} {}", q[0], q[1], q[2], q[3], t.x, t.y, t.z)?;
    }
    out.flush()
}

pub fn read_poses<R: BufRead>(input: R) -> Result<BTreeMap<u32, Pose>, IoError> {
    let mut out = BTreeMap::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = k + 1;
        let s = line.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let err = |message: String| IoError::Parse { line: line_no, message };
        let f: Vec<&str> = s.split_whitespace().collect();
        if f.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", f.len())));
        }
        let id: u32 = f[0].parse().map_err(|e| err(format!("image id: {e}")))?;
        let mut v = [0.0f64; 7];
        for (slot, tok) in v.iter_mut().zip(&f[1..]) {
            *slot = tok.parse().map_err(|e| err(format!("{tok:?}: {e}")))?;
        }
        let qn = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3]).sqrt();
        if !((qn - 1.0).abs() < 1e-6) {
            return Err(err(format!("quaternion norm {qn} is not 1")));
        }
        if out.insert(id, Pose::from_unit_xyzw([v[0], v[1], v[2], v[3]], Vector3::new(v[4], v[5], v[6]))).is_some() {
            return Err(err(format!("duplicate image id {id}")));
        }
    }
    Ok(out)
}

pub fn write_landmarks<W: Write>(mut out: W, landmarks: &[SceneLandmark]) -> io::Result<()> {
    out.write_all(LANDMARK_MAGIC)?;
    out.write_all(&LANDMARK_VERSION.to_le_bytes())?;
    out.write_all(&(landmarks.len() as u32).to_le_bytes())?;
    for l in landmarks {
        out.write_all(&l.id.to_le_bytes())?;
        for v in l.position.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&(l.observations.len() as u32).to_le_bytes())?;
        for o in &l.observations {
            out.write_all(&o.image.to_le_bytes())?;
            out.write_all(&o.feature.to_le_bytes())?;
            out.write_all(&o.pixel.x.to_le_bytes())?;
            out.write_all(&o.pixel.y.to_le_bytes())?;
        }
    }
    out.flush()
}

struct Cursor<R> {
    input: R,
    landmark: usize,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], IoError> {
        let mut b = [0u8; N];
        self.input.read_exact(&mut b).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => IoError::Truncated(format!("landmark record {}", self.landmark)),
            _ => IoError::Io(e),
        })?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

pub fn read_landmarks<R: Read>(input: R) -> Result<Vec<SceneLandmark>, IoError> {
    let mut c = Cursor { input, landmark: 0 };
    let magic: [u8; 8] = c.bytes().map_err(|_| IoError::Truncated("landmark header".into()))?;
    if &magic != LANDMARK_MAGIC {
        return Err(IoError::Invalid("not a landmark file (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != LANDMARK_VERSION {
        return Err(IoError::Invalid(format!("unsupported landmark file version {version}")));
    }
    let n = c.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for k in 0..n {
        c.landmark = k;
        let id = c.u32()?;
        let position = Vector3::new(c.f64()?, c.f64()?, c.f64()?);
        let m = c.u32()? as usize;
        let mut observations = Vec::with_capacity(m.min(1 << 16));
        for _ in 0..m {
            observations.push(TrackObservation {
                image: c.u32()?,
                feature: c.u32()?,
                pixel: Vector2::new(c.f64()?, c.f64()?),
            });
        }
        out.push(SceneLandmark { id, position, observations });
    }
    let mut rest = [0u8; 1];
    if c.input.read(&mut rest)? != 0 {
        return Err(IoError::Invalid("trailing bytes after the last landmark".into()));
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path).map(BufWriter::new).map_err(|e| IoError::at(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path).map(BufReader::new).map_err(|e| IoError::at(path, e))
}

/// Writes the three reconstruction files into `dir` (created if needed).
pub fn write_scene(dir: &Path, scene: &Scene) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::at(dir, e))?;
    write_poses(create(&dir.join(POSES_FILE))?, &scene.poses)?;
    write_landmarks(create(&dir.join(LANDMARKS_FILE))?, &scene.landmarks)?;
    write_camera(&dir.join(CAMERA_FILE), &CameraModel {
        intrinsics: scene.intrinsics,
        rig: scene.rig,
    })
}

pub fn read_scene(dir: &Path) -> Result<Scene, IoError> {
    let cam = read_camera(&dir.join(CAMERA_FILE))?;
    let mut scene = Scene::new(cam.intrinsics, cam.rig);
    scene.poses = read_poses(open(&dir.join(POSES_FILE))?)?;
    scene.landmarks = read_landmarks(open(&dir.join(LANDMARKS_FILE))?)?;
    Ok(scene)
}

pub fn write_camera(path: &Path, cam: &CameraModel) -> Result<(), IoError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, cam).map_err(|e| IoError::Invalid(e.to_string()))?;
    w.flush()?;
    Ok(())
}

pub fn read_camera(path: &Path) -> Result<CameraModel, IoError> {
    let cam: CameraModel = serde_json::from_reader(open(path)?).map_err(|e| IoError::Parse {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })?;
    cam.intrinsics.validate().map_err(|e| IoError::Invalid(e.to_string()))?;
    Ok(cam)
}
