//! Range-sensor point clouds and their CSV interchange format.
//!
//! Points are in the ego frame. `radial_velocity` is the line-of-sight
//! velocity of the hit relative to the sensor, negative when approaching;
//! it is always 0 for sensors that do not measure it.

use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangePoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub radial_velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<RangePoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + self.points.len() * 48);
        writeln!(buf, "x,y,z,radial_velocity").expect("vec write");
        for p in &self.points {
            writeln!(
                buf,
                "{:.6},{:.6},{:.6},{:.6}",
                p.x, p.y, p.z, p.radial_velocity
            )
            .expect("vec write");
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<PointCloud> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fail = |line: usize, detail: String| Error::Format {
            what: "point cloud CSV",
            path: path.to_path_buf(),
            detail: format!("line {}: {detail}", line + 1),
        };

        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "x,y,z,radial_velocity" => {}
            Some((i, header)) => {
                return Err(fail(i, format!("unexpected header `{}`", header.trim())))
            }
            None => return Err(fail(0, "empty file".into())),
        }

        let mut points = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut vals = [0f64; 4];
            let mut fields = line.split(',');
            for v in vals.iter_mut() {
                let field = fields
                    .next()
                    .ok_or_else(|| fail(i, "expected 4 fields".into()))?;
                *v = field
                    .trim()
                    .parse()
                    .map_err(|e| fail(i, format!("bad number `{field}`: {e}")))?;
            }
            if fields.next().is_some() {
                return Err(fail(i, "expected 4 fields".into()));
            }
            points.push(RangePoint {
                x: vals[0],
                y: vals[1],
                z: vals[2],
                radial_velocity: vals[3],
            });
        }
        Ok(PointCloud { points })
    }
}
