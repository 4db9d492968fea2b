//! Rigid transforms, pinhole back-projection and the map-grid ↔ world algebra.
//!
//! Axis convention: the map plane spans world X (grid column, `x`) and world Z
//! (grid row, `y`). World Y is height. A grid cell `(x, y)` therefore sits at
//! map-frame translation `[x·res, 0, y·res]`.
//!
//! The origin transform stored in [`GridSpec`] maps world coordinates into the
//! map frame; the pose of a cell in the world is `origin⁻¹ · cell_transform`.

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthonormality tolerance enforced on every [`RotoTranslation`].
pub const RIGID_TOLERANCE: f64 = 1e-9;

/// Distance (in cells) inside which a coordinate snaps onto a cell boundary
/// before flooring. Absorbs round-off from transform chains.
const BOUNDARY_SNAP: f64 = 1e-9;

/// A 4×4 rigid transform: orthonormal rotation block with det +1, metric
/// translation, bottom row `[0 0 0 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotoTranslation(Matrix4<f64>);

impl RotoTranslation {
    pub fn identity() -> Self {
        RotoTranslation(Matrix4::identity())
    }

    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self::from_matrix(m)
    }

    /// Validates the rigid-body invariants at [`RIGID_TOLERANCE`].
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self> {
        Self::check(&m, RIGID_TOLERANCE)?;
        Ok(RotoTranslation(m))
    }

    /// Accepts a slightly non-orthonormal rotation (within `tolerance`) and
    /// projects it onto the nearest rotation. Used for poses read from disk.
    pub fn from_matrix_lenient(m: Matrix4<f64>, tolerance: f64) -> Result<Self> {
        Self::check(&m, tolerance)?;
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let svd = r.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut fixed = m;
        fixed.fixed_view_mut::<3, 3>(0, 0).copy_from(&(u * v_t));
        fixed[(3, 0)] = 0.0;
        fixed[(3, 1)] = 0.0;
        fixed[(3, 2)] = 0.0;
        fixed[(3, 3)] = 1.0;
        Self::from_matrix(fixed)
    }

    /// Row-major 16-element form used by every file and wire format.
    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 16 {
            return Err(Error::input(format!(
                "pose needs 16 values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("pose contains non-finite values"));
        }
        Self::from_matrix(Matrix4::from_row_slice(values))
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.0[(r, c)];
            }
        }
        out
    }

    fn check(m: &Matrix4<f64>, tol: f64) -> Result<()> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("transform contains non-finite values"));
        }
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        let bottom_ok = if tol <= RIGID_TOLERANCE {
            bottom == [0.0, 0.0, 0.0, 1.0]
        } else {
            (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs()) <= tol
        };
        if !bottom_ok {
            return Err(Error::input("transform bottom row must be [0 0 0 1]"));
        }
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let gram = r * r.transpose();
        if (gram - Matrix3::identity()).iter().any(|e| e.abs() > tol) {
            return Err(Error::input("rotation block is not orthonormal"));
        }
        if (r.determinant() - 1.0).abs() > tol {
            return Err(Error::input("rotation block must have determinant +1"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Closed-form rigid inverse `[Rᵀ, −Rᵀt]`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation());
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        RotoTranslation(m)
    }

    /// `self · other`. The product of two rigid transforms is rigid; round-off
    /// is not re-checked.
    pub fn compose(&self, other: &RotoTranslation) -> Self {
        let mut m = self.0 * other.0;
        m[(3, 0)] = 0.0;
        m[(3, 1)] = 0.0;
        m[(3, 2)] = 0.0;
        m[(3, 3)] = 1.0;
        RotoTranslation(m)
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation() * p.coords + self.translation())
    }

    /// Heading about the map-normal (Y) axis, for rotations produced by
    /// [`compose_rotation_2d`].
    pub fn yaw(&self) -> f64 {
        self.0[(0, 2)].atan2(self.0[(0, 0)])
    }
}

impl Default for RotoTranslation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Serialize for RotoTranslation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RotoTranslation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        RotoTranslation::from_row_major(&values).map_err(serde::de::Error::custom)
    }
}

/// Grid cell index. `x` is the column (world X), `y` the row (world Z).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }

    /// Row-major key used for every tie-break: smaller `y`, then smaller `x`.
    pub fn order_key(&self) -> (usize, usize) {
        (self.y, self.x)
    }

    pub fn chebyshev(&self, other: &Cell) -> usize {
        self.x.abs_diff(other.x).max(self.y.abs_diff(other.y))
    }
}

impl From<(usize, usize)> for Cell {
    fn from((x, y): (usize, usize)) -> Self {
        Cell { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "w")]
    pub width: usize,
    #[serde(rename = "h")]
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::input("focal lengths must be positive and finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::input("image size must be non-zero"));
        }
        if !(0.0..self.width as f64).contains(&self.cx)
            || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::input("principal point outside image"));
        }
        Ok(())
    }

    /// Projects a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
            p.z,
        ))
    }
}

/// Square grid geometry and the origin transform recorded at map creation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub size: usize,
    pub resolution: f64,
    pub origin: RotoTranslation,
}

impl GridSpec {
    pub fn new(size: usize, resolution: f64, origin: RotoTranslation) -> Result<Self> {
        let spec = GridSpec {
            size,
            resolution,
            origin,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::input("grid size must be at least 1"));
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(Error::input("grid resolution must be positive"));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.size * self.size
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.x < self.size && cell.y < self.size
    }

    pub fn check_cell(&self, cell: Cell) -> Result<()> {
        if self.contains(cell) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                x: cell.x as i64,
                y: cell.y as i64,
                size: self.size,
            })
        }
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.y * self.size + cell.x
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index % self.size, index / self.size)
    }
}

/// Builds the map-frame transform of a cell: rotation by `alpha` about the
/// map normal, translation `[x·res, 0, y·res]`.
pub fn compose_rotation_2d(cell: Cell, alpha: f64, spec: &GridSpec) -> Result<RotoTranslation> {
    spec.check_cell(cell)?;
    if !alpha.is_finite() {
        return Err(Error::input("rotation angle must be finite"));
    }
    let (s, c) = alpha.sin_cos();
    #[rustfmt::skip]
    let m = Matrix4::new(
        c,   0.0, s,   cell.x as f64 * spec.resolution,
        0.0, 1.0, 0.0, 0.0,
        -s,  0.0, c,   cell.y as f64 * spec.resolution,
        0.0, 0.0, 0.0, 1.0,
    );
    Ok(RotoTranslation(m))
}

/// World pose of a cell: `origin⁻¹ · compose_rotation_2d(cell, alpha)`.
pub fn grid_to_world(cell: Cell, alpha: f64, spec: &GridSpec) -> Result<RotoTranslation> {
    let local = compose_rotation_2d(cell, alpha, spec)?;
    Ok(spec.origin.inverse().compose(&local))
}

fn snap_floor(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < BOUNDARY_SNAP {
        r
    } else {
        v.floor()
    }
}

/// Cell containing a world point, or `None` outside the grid. Cells are the
/// half-open intervals `[k·res, (k+1)·res)` along map X and Z.
pub fn world_to_grid(point: &Point3<f64>, spec: &GridSpec) -> Result<Option<Cell>> {
    if !(point.x.is_finite() && point.y.is_finite() && point.z.is_finite()) {
        return Err(Error::input("point has non-finite coordinates"));
    }
    Ok(map_point_to_cell(&spec.origin.transform_point(point), spec))
}

#[inline]
pub(crate) fn map_point_to_cell(map: &Point3<f64>, spec: &GridSpec) -> Option<Cell> {
    let gx = snap_floor(map.x / spec.resolution);
    let gy = snap_floor(map.z / spec.resolution);
    let n = spec.size as f64;
    if gx >= 0.0 && gy >= 0.0 && gx < n && gy < n {
        Some(Cell::new(gx as usize, gy as usize))
    } else {
        None
    }
}

/// Row-major depth raster in meters. Zero and non-finite values are invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::input(format!(
                "depth raster has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(DepthImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, depth: f32) -> Self {
        DepthImage {
            width,
            height,
            data: vec![depth; width * height],
        }
    }

    pub fn valid_pixels(&self) -> usize {
        self.data.iter().filter(|d| is_valid_depth(**d)).count()
    }
}

#[inline]
pub fn is_valid_depth(d: f32) -> bool {
    d.is_finite() && d > 0.0
}

/// One back-projected pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPoint {
    /// Row-major pixel index `v·width + u`.
    pub pixel: usize,
    pub position: Point3<f64>,
}

/// Lifts every valid depth pixel through the pinhole model into the world.
pub fn backproject_depth(
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    pose: &RotoTranslation,
) -> Result<Vec<WorldPoint>> {
    let mut out = Vec::with_capacity(depth.data.len());
    for_each_backprojected(depth, intr, pose, |pixel, position| {
        out.push(WorldPoint { pixel, position })
    })?;
    Ok(out)
}

/// Allocation-free form of [`backproject_depth`].
pub fn for_each_backprojected(
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    pose: &RotoTranslation,
    mut f: impl FnMut(usize, Point3<f64>),
) -> Result<()> {
    if depth.width != intr.width || depth.height != intr.height {
        return Err(Error::input(format!(
            "depth is {}x{} but intrinsics declare {}x{}",
            depth.width, depth.height, intr.width, intr.height
        )));
    }
    let r = pose.rotation();
    let t = pose.translation();
    let (inv_fx, inv_fy) = (1.0 / intr.fx, 1.0 / intr.fy);
    for v in 0..depth.height {
        let ry = (v as f64 - intr.cy) * inv_fy;
        let row = &depth.data[v * depth.width..(v + 1) * depth.width];
        for (u, &d) in row.iter().enumerate() {
            if !is_valid_depth(d) {
                continue;
            }
            let d = d as f64;
            let cam = Vector3::new((u as f64 - intr.cx) * inv_fx * d, ry * d, d);
            f(v * depth.width + u, Point3::from(r * cam + t));
        }
    }
    Ok(())
}
