use std::collections::BTreeSet;
use std::io::{Read, Write};

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::geom::Pose;

/// Mean Earth radius of the spherical model (m).
pub const EARTH_RADIUS: f64 = 6_371_000.0;

/// One row of the navigation CSV. Angles in degrees, depth positive down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavRecord {
    pub image_id: u32,
    pub t: f64,
    pub lat: f64,
    pub lon: f64,
    pub depth: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

/// Geodetic anchor of the local north-east-down frame (deg).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoAnchor {
    pub lat: f64,
    pub lon: f64,
}

impl GeoAnchor {
    /// Horizontal centroid of the records.
    pub fn centroid(records: &[NavRecord]) -> Self {
        let n = records.len().max(1) as f64;
        GeoAnchor {
            lat: records.iter().map(|r| r.lat).sum::<f64>() / n,
            lon: records.iter().map(|r| r.lon).sum::<f64>() / n,
        }
    }

    /// Equirectangular projection to local (north, east).
    pub fn to_local(&self, lat: f64, lon: f64) -> (f64, f64) {
        let north = EARTH_RADIUS * (lat - self.lat).to_radians();
        let east = EARTH_RADIUS * self.lat.to_radians().cos() * (lon - self.lon).to_radians();
        (north, east)
    }

    pub fn to_geodetic(&self, north: f64, east: f64) -> (f64, f64) {
        let lat = self.lat + (north / EARTH_RADIUS).to_degrees();
        let lon = self.lon + (east / (EARTH_RADIUS * self.lat.to_radians().cos())).to_degrees();
        (lat, lon)
    }
}

/// Parsed navigation in the local frame, indexed by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct Navigation {
    pub anchor: GeoAnchor,
    pub records: Vec<NavRecord>,
    /// World→vehicle poses.
    pub poses: Vec<Pose>,
    pub timestamps: Vec<f64>,
}

impl NavRecord {
    /// World→vehicle pose; the body is rotated by yaw about down, then
    /// pitch, then roll.
    pub fn pose(&self, anchor: &GeoAnchor) -> Pose {
        let (north, east) = anchor.to_local(self.lat, self.lon);
        let r = UnitQuaternion::from_euler_angles(self.roll.to_radians(), self.pitch.to_radians(), self.yaw.to_radians());
        Pose::from_center(r, Vector3::new(north, east, self.depth))
    }

    pub fn from_pose(image_id: u32, t: f64, pose: &Pose, anchor: &GeoAnchor) -> Self {
        let c = pose.center();
        let (lat, lon) = anchor.to_geodetic(c.x, c.y);
        let (roll, pitch, yaw) = pose.rotation().inverse().euler_angles();
        NavRecord {
            image_id,
            t,
            lat,
            lon,
            depth: c.z,
            yaw: yaw.to_degrees(),
            pitch: pitch.to_degrees(),
            roll: roll.to_degrees(),
        }
    }

    fn check(&self) -> Result<(), String> {
        let fields = [self.t, self.lat, self.lon, self.depth, self.yaw, self.pitch, self.roll];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err("non-finite value".into());
        }
        if self.lat.abs() > 90.0 {
            return Err(format!("latitude {} outside [-90, 90]", self.lat));
        }
        if self.lon.abs() > 180.0 {
            return Err(format!("longitude {} outside [-180, 180]", self.lon));
        }
        if self.depth < 0.0 {
            return Err(format!("negative depth {}", self.depth));
        }
        Ok(())
    }
}

/// Reads the records without projecting them. Ids must be unique and, once
/// sorted, form `0..N`.
pub fn read_records<R: Read>(input: R) -> Result<Vec<NavRecord>, IoError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for row in reader.deserialize::<NavRecord>() {
        let r = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            IoError::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        // Header is line 1; the first record is line 2.
        let line = out.len() + 2;
        r.check().map_err(|message| IoError::Parse { line, message })?;
        if !seen.insert(r.image_id) {
            return Err(IoError::Parse {
                line,
                message: format!("duplicate image_id {}", r.image_id),
            });
        }
        out.push(r);
    }
    out.sort_by_key(|r| r.image_id);
    if let Some((k, r)) = out.iter().enumerate().find(|(k, r)| r.image_id as usize != *k) {
        return Err(IoError::Invalid(format!(
            "image ids must be contiguous from 0: id {} found where {} expected",
            r.image_id, k
        )));
    }
    Ok(out)
}

/// Parses navigation, anchoring the local frame at the record centroid.
pub fn read_navigation<R: Read>(input: R) -> Result<Navigation, IoError> {
    let records = read_records(input)?;
    let anchor = GeoAnchor::centroid(&records);
    Ok(project(records, anchor))
}

/// Parses navigation into the frame of an existing anchor.
pub fn read_navigation_with_anchor<R: Read>(input: R, anchor: GeoAnchor) -> Result<Navigation, IoError> {
    Ok(project(read_records(input)?, anchor))
}

fn project(records: Vec<NavRecord>, anchor: GeoAnchor) -> Navigation {
    Navigation {
        anchor,
        poses: records.iter().map(|r| r.pose(&anchor)).collect(),
        timestamps: records.iter().map(|r| r.t).collect(),
        records,
    }
}

pub fn write_records<W: Write>(out: W, records: &[NavRecord]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| IoError::Invalid(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    const HEADER: &str = "image_id,t,lat,lon,depth,yaw,pitch,roll\n";

    #[test]
    fn anchor_record_is_identity_at_origin() {
        let csv = format!("{HEADER}0,0.0,54.0,10.0,0.0,0,0,0\n");
        let nav = read_navigation(csv.as_bytes()).unwrap();
        let p = nav.poses[0];
        assert!(p.translation().norm() < 1e-12);
        assert!(p.rotation().angle() < 1e-12);
    }

    #[test]
    fn thousandth_degree_of_latitude() {
        let csv = format!("{HEADER}0,0,54.0,10.0,40,0,0,0\n1,1,54.001,10.0,40,0,0,0\n");
        let nav = read_navigation(csv.as_bytes()).unwrap();
        let d = nav.poses[1].center() - nav.poses[0].center();
        assert!((d.x - 111.19).abs() / 111.19 < 1e-3, "{}", d.x);
        assert!(d.y.abs() < 1e-9 && d.z.abs() < 1e-12);
    }

    #[test]
    fn yaw_rotates_about_down() {
        let csv = format!("{HEADER}0,0,54.0,10.0,0,90,0,0\n");
        let nav = read_navigation(csv.as_bytes()).unwrap();
        // Body x (forward) points east, body y points south, z stays down.
        let world_from_body = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let got = nav.poses[0].rotation_matrix().transpose();
        assert!((got - world_from_body).norm() < 1e-12, "{got}");
    }

    #[test]
    fn records_round_trip_through_poses() {
        let anchor = GeoAnchor { lat: 54.0, lon: 10.0 };
        let r = NavRecord {
            image_id: 0,
            t: 1.5,
            lat: 54.0003,
            lon: 10.0002,
            depth: 42.0,
            yaw: 30.0,
            pitch: -4.0,
            roll: 7.0,
        };
        let back = NavRecord::from_pose(0, 1.5, &r.pose(&anchor), &anchor);
        for (a, b) in [(r.lat, back.lat), (r.lon, back.lon), (r.depth, back.depth), (r.yaw, back.yaw), (r.pitch, back.pitch), (r.roll, back.roll)] {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        let mut buf = Vec::new();
        write_records(&mut buf, &[r]).unwrap();
        assert_eq!(read_records(&buf[..]).unwrap(), vec![r]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = format!("{HEADER}0,0,54,10,1,0,0,0\n1,0,54,ten,1,0,0,0\n");
        match read_navigation(bad.as_bytes()) {
            Err(IoError::Parse { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        let dup = format!("{HEADER}0,0,54,10,1,0,0,0\n0,1,54,10,1,0,0,0\n");
        match read_navigation(dup.as_bytes()) {
            Err(IoError::Parse { line: 3, message }) => assert!(message.contains("duplicate")),
            other => panic!("{other:?}"),
        }
        let lat = format!("{HEADER}0,0,95,10,1,0,0,0\n");
        let depth = format!("{HEADER}0,0,54,10,-1,0,0,0\n");
        assert!(matches!(read_navigation(depth.as_bytes()), Err(IoError::Parse { line: 2, .. })));
        assert!(matches!(read_navigation(lat.as_bytes()), Err(IoError::Parse { line: 2, .. })));
        let gap = format!("{HEADER}0,0,54,10,1,0,0,0\n2,1,54,10,1,0,0,0\n");
        assert!(matches!(read_navigation(gap.as_bytes()), Err(IoError::Invalid(_))));
    }
}
