//! Dataset container and plain-text file formats.
//!
//! A dataset directory holds:
//! `imu.csv` (t,ax,ay,az,gx,gy,gz), `wheel.csv` (t,vx,vy,wz),
//! `features.csv` (t,frame_id,feature_id,u,v,depth_or_-1, pixels),
//! `gnss.csv` (t,sat_id,sx,sy,sz,svx,svy,svz,pr,pr_sigma,dop,dop_sigma,elev,track_count),
//! `groundtruth.tum`, `anomalies.csv` (t_start,t_end,type) and `calib.cfg`.
//! All writes are atomic (write to a temp file, then rename), so re-running
//! a command with identical inputs produces byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

use crate::geom::{hemispherize, Calibration, ImuNoise, Intrinsics, Pose, WheelNoise};
use crate::guard::GnssObservation;
use crate::preint::{ImuSample, WheelSample};
use crate::sim::{AnomalyEvent, AnomalyType};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed {file} line {line}: {reason}")]
    Malformed {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("config error in {file}: {reason}")]
    Config { file: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write a file atomically: write into a sibling temp file, then rename.
pub fn atomic_write(path: &Path, contents: &str) -> Result<(), DatasetError> {
    let tmp = path.with_extension("tmp_write");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(contents.as_bytes()).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

fn fmt_f(x: f64) -> String {
    format!("{x:.9}")
}

/// One feature observation in a camera frame; `uv` is in normalized image
/// coordinates in memory (pixels on disk).
#[derive(Debug, Clone, Copy)]
pub struct FeatureObs {
    pub id: u64,
    pub uv: Vector2<f64>,
    pub depth: Option<f64>,
}

/// All feature observations of one camera frame.
#[derive(Debug, Clone)]
pub struct FrameFeatures {
    pub frame_id: u64,
    pub t: f64,
    pub observations: Vec<FeatureObs>,
}

/// All satellite observations of one GNSS epoch.
#[derive(Debug, Clone)]
pub struct GnssEpoch {
    pub t: f64,
    pub observations: Vec<GnssObservation>,
}

/// In-memory dataset: everything the estimator consumes plus ground truth
/// and anomaly labels for evaluation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub calib: Calibration,
    pub camera_rate: f64,
    pub duration: f64,
    pub imu: Vec<ImuSample>,
    pub wheel: Vec<WheelSample>,
    pub frames: Vec<FrameFeatures>,
    pub gnss: Vec<GnssEpoch>,
    pub groundtruth: Vec<(f64, Pose)>,
    pub anomalies: Vec<AnomalyEvent>,
    /// Landmark ids given motion by a DynamicFeatures anomaly (not written
    /// to disk; used for detector scoring in-process).
    pub dynamic_feature_ids: Vec<u64>,
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let mut imu = String::from("t,ax,ay,az,gx,gy,gz\n");
    for s in &ds.imu {
        imu.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_f(s.t),
            fmt_f(s.acc.x),
            fmt_f(s.acc.y),
            fmt_f(s.acc.z),
            fmt_f(s.gyro.x),
            fmt_f(s.gyro.y),
            fmt_f(s.gyro.z)
        ));
    }
    atomic_write(&dir.join("imu.csv"), &imu)?;

    let mut wheel = String::from("t,vx,vy,wz\n");
    for s in &ds.wheel {
        wheel.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f(s.t),
            fmt_f(s.velocity.x),
            fmt_f(s.velocity.y),
            fmt_f(s.yaw_rate)
        ));
    }
    atomic_write(&dir.join("wheel.csv"), &wheel)?;

    let mut feat = String::from("t,frame_id,feature_id,u,v,depth\n");
    for frame in &ds.frames {
        for o in &frame.observations {
            let px = ds.calib.intrinsics.to_pixels(&o.uv);
            feat.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_f(frame.t),
                frame.frame_id,
                o.id,
                fmt_f(px.x),
                fmt_f(px.y),
                fmt_f(o.depth.unwrap_or(-1.0))
            ));
        }
    }
    atomic_write(&dir.join("features.csv"), &feat)?;

    let mut gnss =
        String::from("t,sat_id,sx,sy,sz,svx,svy,svz,pr,pr_sigma,dop,dop_sigma,elev,track_count\n");
    for epoch in &ds.gnss {
        for o in &epoch.observations {
            gnss.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                fmt_f(epoch.t),
                o.sat_id,
                fmt_f(o.sat_pos.x),
                fmt_f(o.sat_pos.y),
                fmt_f(o.sat_pos.z),
                fmt_f(o.sat_vel.x),
                fmt_f(o.sat_vel.y),
                fmt_f(o.sat_vel.z),
                fmt_f(o.pseudorange),
                fmt_f(o.pseudorange_sigma),
                fmt_f(o.doppler_range_rate),
                fmt_f(o.doppler_sigma),
                fmt_f(o.elevation),
                o.track_count
            ));
        }
    }
    atomic_write(&dir.join("gnss.csv"), &gnss)?;

    write_tum(&dir.join("groundtruth.tum"), &ds.groundtruth)?;

    let mut anomalies = String::from("t_start,t_end,type\n");
    for a in &ds.anomalies {
        anomalies.push_str(&format!(
            "{},{},{}\n",
            fmt_f(a.t_start),
            fmt_f(a.t_end),
            a.kind.as_str()
        ));
    }
    atomic_write(&dir.join("anomalies.csv"), &anomalies)?;

    write_calib(
        &dir.join("calib.cfg"),
        &ds.calib,
        ds.camera_rate,
        ds.duration,
    )?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let (calib, camera_rate, duration) = read_calib(&dir.join("calib.cfg"))?;

    let imu_text = read_file(&dir.join("imu.csv"))?;
    let mut imu = Vec::new();
    for (i, cols) in csv_rows(&imu_text) {
        let v = parse_floats("imu.csv", i, &cols, 7)?;
        imu.push(ImuSample {
            t: v[0],
            acc: Vector3::new(v[1], v[2], v[3]),
            gyro: Vector3::new(v[4], v[5], v[6]),
        });
    }

    let wheel_text = read_file(&dir.join("wheel.csv"))?;
    let mut wheel = Vec::new();
    for (i, cols) in csv_rows(&wheel_text) {
        let v = parse_floats("wheel.csv", i, &cols, 4)?;
        wheel.push(WheelSample::new(v[0], v[1], v[2], v[3]));
    }

    let feat_text = read_file(&dir.join("features.csv"))?;
    let mut frames: BTreeMap<u64, FrameFeatures> = BTreeMap::new();
    for (i, cols) in csv_rows(&feat_text) {
        let v = parse_floats("features.csv", i, &cols, 6)?;
        let frame_id = v[1] as u64;
        let depth = if v[5] < 0.0 { None } else { Some(v[5]) };
        let uv = calib
            .intrinsics
            .to_normalized(&Vector2::new(v[3], v[4]));
        frames
            .entry(frame_id)
            .or_insert_with(|| FrameFeatures {
                frame_id,
                t: v[0],
                observations: Vec::new(),
            })
            .observations
            .push(FeatureObs {
                id: v[2] as u64,
                uv,
                depth,
            });
    }
    // Every camera tick is a frame, observed or not.
    let n_frames = (duration * camera_rate).round() as u64;
    let mut frame_list = Vec::new();
    for k in 0..=n_frames {
        let t = k as f64 / camera_rate;
        frame_list.push(frames.remove(&k).unwrap_or(FrameFeatures {
            frame_id: k,
            t,
            observations: Vec::new(),
        }));
    }

    let gnss_text = read_file(&dir.join("gnss.csv"))?;
    let mut gnss: Vec<GnssEpoch> = Vec::new();
    for (i, cols) in csv_rows(&gnss_text) {
        let v = parse_floats("gnss.csv", i, &cols, 14)?;
        let obs = GnssObservation {
            t: v[0],
            sat_id: v[1] as u32,
            sat_pos: Vector3::new(v[2], v[3], v[4]),
            sat_vel: Vector3::new(v[5], v[6], v[7]),
            pseudorange: v[8],
            pseudorange_sigma: v[9],
            doppler_range_rate: v[10],
            doppler_sigma: v[11],
            elevation: v[12],
            track_count: v[13] as u32,
        };
        match gnss.last_mut() {
            Some(ep) if (ep.t - obs.t).abs() < 1e-9 => ep.observations.push(obs),
            _ => gnss.push(GnssEpoch {
                t: obs.t,
                observations: vec![obs],
            }),
        }
    }

    let groundtruth = read_tum(&dir.join("groundtruth.tum"))?;

    let anomalies_text = read_file(&dir.join("anomalies.csv"))?;
    let mut anomalies = Vec::new();
    for (i, cols) in csv_rows(&anomalies_text) {
        if cols.len() != 3 {
            return Err(DatasetError::Malformed {
                file: "anomalies.csv".into(),
                line: i,
                reason: format!("expected 3 columns, got {}", cols.len()),
            });
        }
        let kind = AnomalyType::parse(cols[2].trim()).ok_or(DatasetError::Malformed {
            file: "anomalies.csv".into(),
            line: i,
            reason: format!("unknown anomaly type {}", cols[2]),
        })?;
        anomalies.push(AnomalyEvent {
            kind,
            t_start: parse_float("anomalies.csv", i, &cols[0])?,
            t_end: parse_float("anomalies.csv", i, &cols[1])?,
            magnitude: 0.0,
            fraction: 0.0,
        });
    }

    Ok(Dataset {
        calib,
        camera_rate,
        duration,
        imu,
        wheel,
        frames: frame_list,
        gnss,
        groundtruth,
        anomalies,
        dynamic_feature_ids: Vec::new(),
    })
}

fn read_file(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn csv_rows(text: &str) -> impl Iterator<Item = (usize, Vec<String>)> + '_ {
    text.lines().enumerate().skip(1).filter_map(|(i, line)| {
        let line = line.trim();
        if line.is_empty() {
            None
        } else {
            Some((i + 1, line.split(',').map(|s| s.to_string()).collect()))
        }
    })
}

fn parse_float(file: &str, line: usize, s: &str) -> Result<f64, DatasetError> {
    s.trim().parse::<f64>().map_err(|_| DatasetError::Malformed {
        file: file.into(),
        line,
        reason: format!("not a number: {s}"),
    })
}

fn parse_floats(
    file: &str,
    line: usize,
    cols: &[String],
    expect: usize,
) -> Result<Vec<f64>, DatasetError> {
    if cols.len() != expect {
        return Err(DatasetError::Malformed {
            file: file.into(),
            line,
            reason: format!("expected {expect} columns, got {}", cols.len()),
        });
    }
    cols.iter().map(|c| parse_float(file, line, c)).collect()
}

/// Write a trajectory in TUM format: `t tx ty tz qx qy qz qw`.
pub fn write_tum(path: &Path, traj: &[(f64, Pose)]) -> Result<(), DatasetError> {
    let mut out = String::new();
    for (t, pose) in traj {
        let q = hemispherize(&pose.rotation);
        let p = pose.translation;
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            fmt_f(*t),
            fmt_f(p.x),
            fmt_f(p.y),
            fmt_f(p.z),
            fmt_f(q.i),
            fmt_f(q.j),
            fmt_f(q.k),
            fmt_f(q.w)
        ));
    }
    atomic_write(path, &out)
}

pub fn read_tum(path: &Path) -> Result<Vec<(f64, Pose)>, DatasetError> {
    let text = read_file(path)?;
    let mut traj = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 8 {
            return Err(DatasetError::Malformed {
                file: path.display().to_string(),
                line: i + 1,
                reason: format!("expected 8 fields, got {}", cols.len()),
            });
        }
        let v: Result<Vec<f64>, _> = cols
            .iter()
            .map(|c| parse_float(&path.display().to_string(), i + 1, c))
            .collect();
        let v = v?;
        let q = UnitQuaternion::new_normalize(nalgebra::Quaternion::new(v[7], v[4], v[5], v[6]));
        traj.push((v[0], Pose::new(q, Vector3::new(v[1], v[2], v[3]))));
    }
    Ok(traj)
}

/// Parse `key=value` text with `[section]` headers. Returns sections in file
/// order with their key/value pairs; duplicate keys are errors.
pub fn parse_kv_sections(
    text: &str,
    file: &str,
) -> Result<BTreeMap<String, BTreeMap<String, String>>, DatasetError> {
    let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            current = line[1..line.len() - 1].trim().to_string();
            sections.entry(current.clone()).or_default();
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(DatasetError::Config {
                file: file.into(),
                reason: format!("line {}: expected key=value, got `{raw}`", i + 1),
            });
        };
        let prev = sections
            .entry(current.clone())
            .or_default()
            .insert(k.trim().to_string(), v.trim().to_string());
        if prev.is_some() {
            return Err(DatasetError::Config {
                file: file.into(),
                reason: format!("duplicate key {} in section [{current}]", k.trim()),
            });
        }
    }
    Ok(sections)
}

fn pose_kv(prefix: &str, pose: &Pose, out: &mut String) {
    let q = hemispherize(&pose.rotation);
    out.push_str(&format!(
        "{prefix}_qw={}\n{prefix}_qx={}\n{prefix}_qy={}\n{prefix}_qz={}\n{prefix}_tx={}\n{prefix}_ty={}\n{prefix}_tz={}\n",
        fmt_f(q.w), fmt_f(q.i), fmt_f(q.j), fmt_f(q.k),
        fmt_f(pose.translation.x), fmt_f(pose.translation.y), fmt_f(pose.translation.z),
    ));
}

pub fn write_calib(
    path: &Path,
    calib: &Calibration,
    camera_rate: f64,
    duration: f64,
) -> Result<(), DatasetError> {
    let mut out = String::new();
    out.push_str("[camera]\n");
    out.push_str(&format!("fx={}\n", fmt_f(calib.intrinsics.fx)));
    out.push_str(&format!("fy={}\n", fmt_f(calib.intrinsics.fy)));
    out.push_str(&format!("cx={}\n", fmt_f(calib.intrinsics.cx)));
    out.push_str(&format!("cy={}\n", fmt_f(calib.intrinsics.cy)));
    out.push_str("[extrinsics]\n");
    pose_kv("cam", &calib.cam_to_body, &mut out);
    pose_kv("wheel", &calib.wheel_to_body, &mut out);
    out.push_str("[imu]\n");
    out.push_str(&format!("sigma_acc={}\n", fmt_f(calib.imu_noise.sigma_acc)));
    out.push_str(&format!(
        "sigma_gyro={}\n",
        fmt_f(calib.imu_noise.sigma_gyro)
    ));
    out.push_str(&format!(
        "sigma_acc_bias_walk={}\n",
        fmt_f(calib.imu_noise.sigma_acc_bias_walk)
    ));
    out.push_str(&format!(
        "sigma_gyro_bias_walk={}\n",
        fmt_f(calib.imu_noise.sigma_gyro_bias_walk)
    ));
    out.push_str("[wheel]\n");
    out.push_str(&format!(
        "sigma_velocity={}\n",
        fmt_f(calib.wheel_noise.sigma_velocity)
    ));
    out.push_str(&format!(
        "sigma_yaw_rate={}\n",
        fmt_f(calib.wheel_noise.sigma_yaw_rate)
    ));
    out.push_str("[world]\n");
    out.push_str(&format!("gravity={}\n", fmt_f(calib.gravity_magnitude)));
    out.push_str(&format!("depth_min={}\n", fmt_f(calib.depth_range.0)));
    out.push_str(&format!("depth_max={}\n", fmt_f(calib.depth_range.1)));
    out.push_str("[dataset]\n");
    out.push_str(&format!("camera_rate={}\n", fmt_f(camera_rate)));
    out.push_str(&format!("duration={}\n", fmt_f(duration)));
    atomic_write(path, &out)
}

pub fn read_calib(path: &Path) -> Result<(Calibration, f64, f64), DatasetError> {
    let file = path.display().to_string();
    let text = read_file(path)?;
    let mut sections = parse_kv_sections(&text, &file)?;

    let mut take = |section: &str, key: &str| -> Result<f64, DatasetError> {
        sections
            .get_mut(section)
            .and_then(|s| s.remove(key))
            .ok_or(DatasetError::Config {
                file: file.clone(),
                reason: format!("missing key {key} in section [{section}]"),
            })?
            .parse::<f64>()
            .map_err(|_| DatasetError::Config {
                file: file.clone(),
                reason: format!("key {key} is not a number"),
            })
    };

    let intrinsics = Intrinsics {
        fx: take("camera", "fx")?,
        fy: take("camera", "fy")?,
        cx: take("camera", "cx")?,
        cy: take("camera", "cy")?,
    };
    let read_pose = |take: &mut dyn FnMut(&str, &str) -> Result<f64, DatasetError>,
                     prefix: &str|
     -> Result<Pose, DatasetError> {
        let q = UnitQuaternion::new_normalize(nalgebra::Quaternion::new(
            take("extrinsics", &format!("{prefix}_qw"))?,
            take("extrinsics", &format!("{prefix}_qx"))?,
            take("extrinsics", &format!("{prefix}_qy"))?,
            take("extrinsics", &format!("{prefix}_qz"))?,
        ));
        let t = Vector3::new(
            take("extrinsics", &format!("{prefix}_tx"))?,
            take("extrinsics", &format!("{prefix}_ty"))?,
            take("extrinsics", &format!("{prefix}_tz"))?,
        );
        Ok(Pose::new(q, t))
    };
    let cam_to_body = read_pose(&mut take, "cam")?;
    let wheel_to_body = read_pose(&mut take, "wheel")?;

    let calib = Calibration {
        cam_to_body,
        wheel_to_body,
        intrinsics,
        gravity_magnitude: take("world", "gravity")?,
        imu_noise: ImuNoise {
            sigma_acc: take("imu", "sigma_acc")?,
            sigma_gyro: take("imu", "sigma_gyro")?,
            sigma_acc_bias_walk: take("imu", "sigma_acc_bias_walk")?,
            sigma_gyro_bias_walk: take("imu", "sigma_gyro_bias_walk")?,
        },
        wheel_noise: WheelNoise {
            sigma_velocity: take("wheel", "sigma_velocity")?,
            sigma_yaw_rate: take("wheel", "sigma_yaw_rate")?,
        },
        depth_range: (take("world", "depth_min")?, take("world", "depth_max")?),
    };
    let camera_rate = take("dataset", "camera_rate")?;
    let duration = take("dataset", "duration")?;

    // Unknown keys are configuration errors.
    for (section, keys) in &sections {
        if let Some(key) = keys.keys().next() {
            return Err(DatasetError::Config {
                file,
                reason: format!("unknown key {key} in section [{section}]"),
            });
        }
    }

    calib.validate().map_err(|e| DatasetError::Config {
        file: path.display().to_string(),
        reason: e.to_string(),
    })?;
    Ok((calib, camera_rate, duration))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_calib() -> Calibration {
        Calibration {
            cam_to_body: Pose::identity(),
            wheel_to_body: Pose::identity(),
            intrinsics: Intrinsics {
                fx: 460.0,
                fy: 460.0,
                cx: 320.0,
                cy: 240.0,
            },
            gravity_magnitude: 9.81,
            imu_noise: ImuNoise {
                sigma_acc: 0.05,
                sigma_gyro: 0.005,
                sigma_acc_bias_walk: 1e-4,
                sigma_gyro_bias_walk: 1e-5,
            },
            wheel_noise: WheelNoise {
                sigma_velocity: 0.02,
                sigma_yaw_rate: 0.005,
            },
            depth_range: (0.3, 8.0),
        }
    }

    #[test]
    fn calib_round_trip() {
        let dir = std::env::temp_dir().join("wvio_test_calib");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("calib.cfg");
        write_calib(&path, &test_calib(), 10.0, 60.0).unwrap();
        let (calib, rate, dur) = read_calib(&path).unwrap();
        assert_eq!(calib.intrinsics.fx, 460.0);
        assert_eq!(rate, 10.0);
        assert_eq!(dur, 60.0);
        assert_eq!(calib.imu_noise.sigma_gyro, 0.005);
    }

    #[test]
    fn unknown_key_is_error() {
        let dir = std::env::temp_dir().join("wvio_test_calib_unknown");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("calib.cfg");
        write_calib(&path, &test_calib(), 10.0, 60.0).unwrap();
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("mystery=1.0\n");
        atomic_write(&path, &text).unwrap();
        assert!(matches!(
            read_calib(&path),
            Err(DatasetError::Config { .. })
        ));
    }

    #[test]
    fn tum_round_trip() {
        let dir = std::env::temp_dir().join("wvio_test_tum");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("traj.tum");
        let traj = vec![
            (0.0, Pose::identity()),
            (
                0.1,
                Pose::new(
                    crate::geom::so3_exp(Vector3::new(0.0, 0.0, 0.3)),
                    Vector3::new(1.0, 2.0, 3.0),
                ),
            ),
        ];
        write_tum(&path, &traj).unwrap();
        let back = read_tum(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back[1].1.translation - traj[1].1.translation).norm() < 1e-8);
        assert!(crate::geom::rotation_distance(&back[1].1.rotation, &traj[1].1.rotation) < 1e-8);
    }
}
