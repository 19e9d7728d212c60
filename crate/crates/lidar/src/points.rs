use std::io::{BufRead, Write};

use crate::angles::AngleTable;
use crate::error::{LidarError, Result};
use crate::raster::RasterMap;

pub type Point3 = [f32; 3];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    /// Row-major source pixel of each point, when known.
    pub pixels: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3>) -> Self {
        Self { points, pixels: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn spherical_to_cartesian(range_m: f32, elevation: f32, azimuth: f32) -> Point3 {
    let (r, el, az) = (range_m as f64, elevation as f64, azimuth as f64);
    [
        (r * el.cos() * az.cos()) as f32,
        (r * el.cos() * az.sin()) as f32,
        (r * el.sin()) as f32,
    ]
}

/// `(range, elevation, azimuth)`.
pub fn cartesian_to_spherical(p: Point3) -> (f32, f32, f32) {
    let (x, y, z) = (p[0] as f64, p[1] as f64, p[2] as f64);
    let r = (x * x + y * y + z * z).sqrt();
    let el = if r > 0.0 { (z / r).asin() } else { 0.0 };
    (r as f32, el as f32, y.atan2(x) as f32)
}

/// Back-projects every measured pixel through the angle table.
pub fn raster_to_points(r: &RasterMap, a: &AngleTable) -> Result<PointCloud> {
    if (a.height, a.width) != r.shape() {
        return Err(LidarError::Shape(format!(
            "raster is {}x{}, angle table {}x{}",
            r.height(),
            r.width(),
            a.height,
            a.width
        )));
    }
    let mut points = Vec::with_capacity(r.measured_count());
    let mut pixels = Vec::with_capacity(r.measured_count());
    for (i, &v) in r.values().iter().enumerate() {
        if v == r.drop_value() {
            continue;
        }
        let d = r.norm().denormalize(v);
        points.push(spherical_to_cartesian(d, a.elevation[i], a.azimuth[i]));
        pixels.push(i as u32);
    }
    Ok(PointCloud {
        points,
        pixels: Some(pixels),
    })
}

/// ASCII PLY with float x/y/z vertex properties.
pub fn write_ply<W: Write>(cloud: &PointCloud, mut out: W) -> Result<()> {
    writeln!(out, "ply\nformat ascii 1.0\nelement vertex {}", cloud.len())?;
    writeln!(out, "property float x\nproperty float y\nproperty float z\nend_header")?;
    for p in &cloud.points {
        writeln!(out, "{} {} {}", p[0], p[1], p[2])?;
    }
    Ok(())
}

/// Reads an ASCII PLY written by [`write_ply`] (or any ASCII PLY whose first
/// three vertex properties are x, y, z).
pub fn read_ply<R: BufRead>(input: R) -> Result<PointCloud> {
    let mut lines = input.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| LidarError::Format("PLY ended early".into()))
    };
    if next()?.trim() != "ply" {
        return Err(LidarError::Format("missing PLY magic".into()));
    }
    let mut count = None;
    loop {
        let line = next()?;
        let line = line.trim();
        if line == "end_header" {
            break;
        }
        if let Some(fmt) = line.strip_prefix("format ") {
            if !fmt.starts_with("ascii") {
                return Err(LidarError::Format(format!("unsupported PLY format {fmt}")));
            }
        }
        if let Some(n) = line.strip_prefix("element vertex ") {
            count = Some(
                n.trim()
                    .parse::<usize>()
                    .map_err(|e| LidarError::Format(format!("vertex count: {e}")))?,
            );
        }
    }
    let count = count.ok_or_else(|| LidarError::Format("PLY has no vertex element".into()))?;
    let mut points = Vec::with_capacity(count);
    for k in 0..count {
        let line = next()?;
        let mut it = line.split_whitespace().map(str::parse::<f32>);
        let mut coord = || -> Result<f32> {
            it.next()
                .ok_or_else(|| LidarError::Format(format!("vertex {k} has fewer than 3 values")))?
                .map_err(|e| LidarError::Format(format!("vertex {k}: {e}")))
        };
        points.push([coord()?, coord()?, coord()?]);
    }
    Ok(PointCloud::from_points(points))
}
