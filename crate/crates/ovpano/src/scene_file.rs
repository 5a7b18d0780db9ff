//! Binary scene files.
//!
//! Layout, little-endian: magic `OVPS`, `u32` version, then the sections
//! `HEAD`, `PNTS`, `GTLB`, `CAMS`, `MAPS` in that order. Each section is a
//! 4-byte tag, a `u64` payload length and the payload.
//!
//! * `HEAD`: scene id `u64`, point count `u64`, camera count `u64`, intensity flag `u8`
//! * `PNTS`: `n × 3` coordinates, then `n` intensities when flagged
//! * `GTLB`: `n` semantic ids `u32`, then `n` instance ids `u32`
//! * `CAMS`: per camera fx fy cx cy, a row-major rotation, a translation, width and height `u64`
//! * `MAPS`: per camera width, height, dim `u64`, then `h × w × dim` values

use std::path::{Path, PathBuf};

use ovpano_core::geometry::{CameraModel, EmbeddingMap, PointCloud};
use ovpano_core::scene::Scene;

use crate::binio::{Reader, Writer};
use crate::error::{io_err, Error, Result};

pub const SCENE_MAGIC: &[u8; 4] = b"OVPS";
pub const SCENE_VERSION: u32 = 1;
const WHAT: &str = "scene file";

pub fn scene_path(dir: &Path, id: u64) -> PathBuf {
    dir.join("scenes").join(format!("{id:016x}.ovs"))
}

pub fn encode_scene(scene: &Scene) -> Vec<u8> {
    let n = scene.cloud.len();
    let intensity = scene.cloud.intensity();
    let mut w = Writer::new(SCENE_MAGIC, SCENE_VERSION);
    w.section(b"HEAD", |s| {
        s.u64(scene.id);
        s.len(n);
        s.len(scene.rig.len());
        s.u8(u8::from(intensity.is_some()));
    });
    w.section(b"PNTS", |s| {
        for p in scene.cloud.points() {
            s.f64s(p);
        }
        if let Some(i) = intensity {
            s.f64s(i);
        }
    });
    w.section(b"GTLB", |s| {
        for &c in &scene.semantic {
            s.u32(c as u32);
        }
        for &i in &scene.instance {
            s.u32(i);
        }
    });
    w.section(b"CAMS", |s| {
        for cam in &scene.rig {
            s.f64s(&[cam.fx, cam.fy, cam.cx, cam.cy]);
            for row in &cam.rotation {
                s.f64s(row);
            }
            s.f64s(&cam.translation);
            s.len(cam.width);
            s.len(cam.height);
        }
    });
    w.section(b"MAPS", |s| {
        for m in &scene.maps {
            s.len(m.width());
            s.len(m.height());
            s.len(m.dim());
            s.f64s(m.data());
        }
    });
    w.finish()
}

fn vec3(r: &mut Reader) -> Result<[f64; 3]> {
    Ok([r.f64()?, r.f64()?, r.f64()?])
}

pub fn decode_scene(bytes: &[u8]) -> Result<Scene> {
    let mut r = Reader::open(bytes, WHAT, SCENE_MAGIC, SCENE_VERSION)?;

    let mut head = r.section(b"HEAD")?;
    let id = head.u64()?;
    let n = head.u64()? as usize;
    let ncams = head.u64()? as usize;
    let flag_at = head.offset();
    let has_intensity = match head.u8()? {
        0 => false,
        1 => true,
        f => {
            return Err(Error::Malformed {
                what: WHAT,
                offset: flag_at,
                msg: format!("intensity flag {f}"),
            })
        }
    };
    head.done()?;

    let mut pts = r.section(b"PNTS")?;
    let mut points = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        points.push(vec3(&mut pts)?);
    }
    let intensity = if has_intensity { Some(pts.f64s(n)?) } else { None };
    pts.done()?;
    let cloud = PointCloud::new(points, intensity).map_err(|e| pts.malformed(format!("points: {e}")))?;

    let mut gt = r.section(b"GTLB")?;
    let mut semantic = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        semantic.push(gt.u32()? as usize);
    }
    let mut instance = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        instance.push(gt.u32()?);
    }
    gt.done()?;

    let mut cams = r.section(b"CAMS")?;
    let mut rig = Vec::with_capacity(ncams.min(64));
    for _ in 0..ncams {
        let at = cams.offset();
        let [fx, fy, cx, cy] = [cams.f64()?, cams.f64()?, cams.f64()?, cams.f64()?];
        let rotation = [vec3(&mut cams)?, vec3(&mut cams)?, vec3(&mut cams)?];
        let translation = vec3(&mut cams)?;
        let width = cams.u64()? as usize;
        let height = cams.u64()? as usize;
        let cam = CameraModel {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate().map_err(|e| Error::Malformed {
            what: WHAT,
            offset: at,
            msg: format!("camera: {e}"),
        })?;
        rig.push(cam);
    }
    cams.done()?;

    let mut maps_r = r.section(b"MAPS")?;
    let mut maps = Vec::with_capacity(ncams.min(64));
    for _ in 0..ncams {
        let at = maps_r.offset();
        let (w, h, d) = (maps_r.u64()? as usize, maps_r.u64()? as usize, maps_r.u64()? as usize);
        let count = w
            .checked_mul(h)
            .and_then(|x| x.checked_mul(d))
            .ok_or_else(|| maps_r.malformed("map size overflows"))?;
        let data = maps_r.f64s(count)?;
        maps.push(EmbeddingMap::new(w, h, d, data).map_err(|e| Error::Malformed {
            what: WHAT,
            offset: at,
            msg: format!("embedding map: {e}"),
        })?);
    }
    maps_r.done()?;
    r.done()?;
    Ok(Scene {
        id,
        cloud,
        semantic,
        instance,
        rig,
        maps,
    })
}

pub fn write_scene(path: &Path, scene: &Scene) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, encode_scene(scene)).map_err(io_err(path))
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_scene(&bytes)
}
