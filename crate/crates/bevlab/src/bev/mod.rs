//! Bird's-eye-view grids: occupancy masks, voxel grids, feature maps,
//! point-cloud voxelization, z-flattening, and channel-concat fusion.
//!
//! Grids live in the ego frame. Cell (ix, iy) covers
//! x in [-x_extent + ix*cell, -x_extent + (ix+1)*cell) and the matching
//! y interval; buffers are row-major over (iy, ix) with channels fastest.

pub mod io;
pub mod lift;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BevGridSpec {
    /// Half-width of the grid along ego x, meters.
    pub x_extent: f64,
    /// Half-width of the grid along ego y, meters.
    pub y_extent: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Default for BevGridSpec {
    /// 100 m x 100 m around the ego at 0.5 m cells, 8 z levels over
    /// z in [-1, 7] m.
    fn default() -> Self {
        BevGridSpec {
            x_extent: 50.0,
            y_extent: 50.0,
            z_min: -1.0,
            z_max: 7.0,
            nx: 200,
            ny: 200,
            nz: 8,
        }
    }
}

impl BevGridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::invalid("grid resolution must be positive"));
        }
        if !(self.x_extent > 0.0 && self.y_extent > 0.0) {
            return Err(Error::invalid("grid extents must be positive"));
        }
        if !(self.z_max > self.z_min) {
            return Err(Error::invalid("grid requires z_max > z_min"));
        }
        let csx = 2.0 * self.x_extent / self.nx as f64;
        let csy = 2.0 * self.y_extent / self.ny as f64;
        if (csx - csy).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "grid cells must be square, got {csx} x {csy} m"
            )));
        }
        Ok(())
    }

    pub fn cell_size(&self) -> f64 {
        2.0 * self.x_extent / self.nx as f64
    }

    pub fn z_cell_size(&self) -> f64 {
        (self.z_max - self.z_min) / self.nz as f64
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Ego-frame (x, y) of the cell center.
    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        let cs = self.cell_size();
        (
            -self.x_extent + (ix as f64 + 0.5) * cs,
            -self.y_extent + (iy as f64 + 0.5) * cs,
        )
    }

    pub fn voxel_center_z(&self, iz: usize) -> f64 {
        self.z_min + (iz as f64 + 0.5) * self.z_cell_size()
    }

    /// Cell containing the ego-frame point, if inside the grid. The upper
    /// boundary is exclusive.
    pub fn cell_index(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let cs = self.cell_size();
        let fx = (x + self.x_extent) / cs;
        let fy = (y + self.y_extent) / cs;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let ix = fx.floor() as usize;
        let iy = fy.floor() as usize;
        (ix < self.nx && iy < self.ny).then_some((ix, iy))
    }

    /// Z level containing the ego-frame height, upper boundary exclusive.
    pub fn z_level(&self, z: f64) -> Option<usize> {
        let f = (z - self.z_min) / self.z_cell_size();
        if f < 0.0 {
            return None;
        }
        let iz = f.floor() as usize;
        (iz < self.nz).then_some(iz)
    }
}

/// Binary per-cell grid (ground truth, predictions, BEV occlusion).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BevMask {
    pub nx: usize,
    pub ny: usize,
    data: Vec<u8>,
}

impl BevMask {
    pub fn new(nx: usize, ny: usize) -> Self {
        BevMask {
            nx,
            ny,
            data: vec![0; nx * ny],
        }
    }

    pub fn from_spec(spec: &BevGridSpec) -> Self {
        BevMask::new(spec.nx, spec.ny)
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> bool {
        self.data[iy * self.nx + ix] != 0
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, v: bool) {
        self.data[iy * self.nx + ix] = v as u8;
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Camera,
    Radar,
    Lidar,
}

impl Modality {
    /// Fixed fusion order: camera, then radar, then lidar.
    pub fn rank(self) -> u8 {
        match self {
            Modality::Camera => 0,
            Modality::Radar => 1,
            Modality::Lidar => 2,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Modality::Camera => "C",
            Modality::Radar => "R",
            Modality::Lidar => "L",
        }
    }
}

/// A set of modalities, displayed and parsed as "C", "C+R", "C+R+L", ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModalitySet(u8);

impl ModalitySet {
    pub const ALL: [Modality; 3] = [Modality::Camera, Modality::Radar, Modality::Lidar];

    pub fn empty() -> Self {
        ModalitySet(0)
    }

    pub fn single(m: Modality) -> Self {
        ModalitySet(1 << m.rank())
    }

    pub fn insert(&mut self, m: Modality) {
        self.0 |= 1 << m.rank();
    }

    pub fn contains(self, m: Modality) -> bool {
        self.0 & (1 << m.rank()) != 0
    }

    pub fn intersects(self, other: ModalitySet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn union(self, other: ModalitySet) -> ModalitySet {
        ModalitySet(self.0 | other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = Modality> {
        Self::ALL.into_iter().filter(move |m| self.contains(*m))
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Stable bitmask value, usable as a seed-derivation tag.
    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn label(self) -> String {
        let parts: Vec<&str> = self.iter().map(|m| m.short()).collect();
        parts.join("+")
    }

    pub fn parse(text: &str) -> Result<ModalitySet> {
        let mut set = ModalitySet::empty();
        for part in text.split('+') {
            let m = match part.trim().to_ascii_lowercase().as_str() {
                "c" | "camera" => Modality::Camera,
                "r" | "radar" => Modality::Radar,
                "l" | "lidar" => Modality::Lidar,
                other => {
                    return Err(Error::invalid(format!(
                        "unknown modality `{other}` (expected c, r, l or camera, radar, lidar)"
                    )))
                }
            };
            if set.contains(m) {
                return Err(Error::invalid(format!("modality `{}` repeated", m.short())));
            }
            set.insert(m);
        }
        if set.is_empty() {
            return Err(Error::invalid("modality set is empty"));
        }
        Ok(set)
    }
}

impl std::fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

impl TryFrom<String> for ModalitySet {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        ModalitySet::parse(&s)
    }
}

impl From<ModalitySet> for String {
    fn from(s: ModalitySet) -> String {
        s.label()
    }
}

/// Dense (iy, ix, iz, channel) feature volume over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub spec: BevGridSpec,
    pub channels: usize,
    data: Vec<f32>,
}

impl VoxelGrid {
    pub fn new(spec: BevGridSpec, channels: usize) -> Self {
        let len = spec.nx * spec.ny * spec.nz * channels;
        VoxelGrid {
            spec,
            channels,
            data: vec![0.0; len],
        }
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize, c: usize) -> usize {
        ((iy * self.spec.nx + ix) * self.spec.nz + iz) * self.channels + c
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize, c: usize) -> f32 {
        self.data[self.index(ix, iy, iz, c)]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, iz: usize, c: usize, v: f32) {
        let i = self.index(ix, iy, iz, c);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// Dense per-cell feature map; the BEV form the segmentation head consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct BevFeatureMap {
    pub spec: BevGridSpec,
    pub channels: usize,
    pub modalities: ModalitySet,
    data: Vec<f32>,
}

impl BevFeatureMap {
    pub fn new(spec: BevGridSpec, channels: usize, modalities: ModalitySet) -> Self {
        let len = spec.nx * spec.ny * channels;
        BevFeatureMap {
            spec,
            channels,
            modalities,
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(
        spec: BevGridSpec,
        channels: usize,
        modalities: ModalitySet,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != spec.nx * spec.ny * channels {
            return Err(Error::invalid(format!(
                "feature buffer has {} values, expected {}x{}x{}",
                data.len(),
                spec.ny,
                spec.nx,
                channels
            )));
        }
        Ok(BevFeatureMap {
            spec,
            channels,
            modalities,
            data,
        })
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, c: usize) -> usize {
        (iy * self.spec.nx + ix) * self.channels + c
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, c: usize) -> f32 {
        self.data[self.index(ix, iy, c)]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, c: usize, v: f32) {
        let i = self.index(ix, iy, c);
        self.data[i] = v;
    }

    #[inline]
    pub fn cell(&self, ix: usize, iy: usize) -> &[f32] {
        let i = (iy * self.spec.nx + ix) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// Collapses the z dimension into channels. Output channel `iz * C + c`
/// holds input (iz, c), i.e. z levels ascend in blocks of the grid's
/// original channel count.
pub fn flatten_z(grid: VoxelGrid, modality: Modality) -> BevFeatureMap {
    let channels = grid.spec.nz * grid.channels;
    // The voxel layout is (iy, ix, iz, c), so reinterpreting (iz, c) as the
    // channel axis is a no-op on the buffer.
    BevFeatureMap {
        spec: grid.spec,
        channels,
        modalities: ModalitySet::single(modality),
        data: grid.data,
    }
}

/// Bins points into a binary occupancy voxel grid: a voxel is 1 when at
/// least one point falls inside it. Points outside the grid are dropped.
pub fn voxelize_points(cloud: &PointCloud, spec: &BevGridSpec) -> Result<VoxelGrid> {
    spec.validate()?;
    let mut grid = VoxelGrid::new(*spec, 1);
    for p in &cloud.points {
        let Some((ix, iy)) = spec.cell_index(p.x, p.y) else {
            continue;
        };
        let Some(iz) = spec.z_level(p.z) else {
            continue;
        };
        grid.set(ix, iy, iz, 0, 1.0);
    }
    Ok(grid)
}

/// Radial speed that saturates the velocity channel, m/s. Keeps the
/// channel in [0, 1] like every other BEV feature.
pub const SPEED_SATURATION: f32 = 20.0;

/// Occupancy plus a per-cell speed channel: the last channel carries
/// max |radial_velocity| over the cell's in-grid points, normalized by
/// [`SPEED_SATURATION`] and clamped to 1.
pub fn voxelize_points_with_speed(
    cloud: &PointCloud,
    spec: &BevGridSpec,
    modality: Modality,
) -> Result<BevFeatureMap> {
    let occupancy = flatten_z(voxelize_points(cloud, spec)?, modality);
    let channels = spec.nz + 1;
    let mut map = BevFeatureMap::new(*spec, channels, ModalitySet::single(modality));
    for iy in 0..spec.ny {
        for ix in 0..spec.nx {
            for iz in 0..spec.nz {
                let v = occupancy.get(ix, iy, iz);
                map.set(ix, iy, iz, v);
            }
        }
    }
    for p in &cloud.points {
        let Some((ix, iy)) = spec.cell_index(p.x, p.y) else {
            continue;
        };
        if spec.z_level(p.z).is_none() {
            continue;
        }
        let i = map.index(ix, iy, spec.nz);
        let speed = (p.radial_velocity.abs() as f32 / SPEED_SATURATION).min(1.0);
        if speed > map.data[i] {
            map.data[i] = speed;
        }
    }
    Ok(map)
}

/// Concatenates per-modality feature maps along channels in fixed modality
/// order (camera, radar, lidar). Specs must match and each modality may
/// appear at most once.
pub fn fuse(maps: &[&BevFeatureMap]) -> Result<BevFeatureMap> {
    if maps.is_empty() {
        return Err(Error::invalid("fuse requires at least one feature map"));
    }
    let spec = maps[0].spec;
    let mut seen = ModalitySet::empty();
    for m in maps {
        if m.spec != spec {
            return Err(Error::invalid(
                "fuse requires all feature maps on the same grid",
            ));
        }
        if m.modalities.is_empty() {
            return Err(Error::invalid("fuse input has no modality tag"));
        }
        if seen.intersects(m.modalities) {
            return Err(Error::invalid(format!(
                "duplicate modality in fusion: {}",
                m.modalities
            )));
        }
        seen = seen.union(m.modalities);
    }

    let mut ordered: Vec<&BevFeatureMap> = maps.to_vec();
    ordered.sort_by_key(|m| m.modalities.iter().map(|x| x.rank()).min().unwrap());

    let channels: usize = ordered.iter().map(|m| m.channels).sum();
    let mut out = BevFeatureMap::new(spec, channels, seen);
    let n_cells = spec.n_cells();
    let mut offset = 0;
    for m in &ordered {
        for cell in 0..n_cells {
            let src = &m.data[cell * m.channels..(cell + 1) * m.channels];
            let dst_start = cell * channels + offset;
            out.data[dst_start..dst_start + m.channels].copy_from_slice(src);
        }
        offset += m.channels;
    }
    Ok(out)
}
