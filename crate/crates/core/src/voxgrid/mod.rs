//! Voxel grids (density, RGB, palette logits), ray traversal and the
//! RGB-to-logit initialization used between the two training stages.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::geometry::{CameraError, CanonicalView, OrthoCamera};
use crate::math::{rgb_dist, sigmoid, softplus, Aabb, Real, Rgb, Vec3};

mod traverse;

pub use traverse::{traverse, traverse_into, Segment};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("image width {width} is not divisible by cell size {cell_size}")]
    Indivisible { width: usize, cell_size: usize },
    #[error("cell size and image width must be positive")]
    ZeroSize,
    #[error("bounding box has no extent")]
    EmptyBox,
    #[error("grid resolution mismatch: {expected:?} vs {got:?}")]
    ResolutionMismatch { expected: [usize; 3], got: [usize; 3] },
    #[error("channel count mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("grid buffer has {got} values, expected {expected}")]
    BufferSize { expected: usize, got: usize },
}

/// Resolution and placement of the voxel grid. Voxels are cubes of edge
/// `voxel_edge`; the grid box is centered on the object box and covers it.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSpec {
    pub dims: [usize; 3],
    /// Minimum corner of the grid box.
    pub origin: Vec3,
    pub voxel_edge: f64,
    /// Raster pixels per voxel edge in the canonical views.
    pub cell_size: usize,
    /// Canonical image width in pixels (spans the object's longest side).
    pub image_width: usize,
}

/// Builds the grid for an object box: voxel edge = longest side × cell_size /
/// image_width, per-axis counts rounded to cover the box.
pub fn make_grid_spec(bbox: &Aabb, image_width: usize, cell_size: usize) -> Result<GridSpec, GridError> {
    if image_width == 0 || cell_size == 0 {
        return Err(GridError::ZeroSize);
    }
    if image_width % cell_size != 0 {
        return Err(GridError::Indivisible { width: image_width, cell_size });
    }
    let longest = bbox.longest_side();
    if !(longest > 0.0) {
        return Err(GridError::EmptyBox);
    }
    let edge = longest * cell_size as f64 / image_width as f64;
    let size = bbox.size();
    let dims = [0, 1, 2].map(|a| ((size.axis(a) / edge - 1e-9).ceil() as usize).max(1));
    let extent = Vec3::new(dims[0] as f64, dims[1] as f64, dims[2] as f64) * edge;
    let origin = bbox.center() - extent * 0.5;
    Ok(GridSpec { dims, origin, voxel_edge: edge, cell_size, image_width })
}

impl GridSpec {
    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn bbox(&self) -> Aabb {
        let extent = Vec3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.voxel_edge;
        Aabb::new(self.origin, self.origin + extent)
    }

    /// Flat index, x fastest.
    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let y = (idx / self.dims[0]) % self.dims[1];
        let z = idx / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    /// Activated-density scale: raw parameters are optical depth per voxel
    /// edge, so world density = softplus(raw) / edge.
    pub fn density_scale(&self) -> f64 {
        1.0 / self.voxel_edge
    }

    /// Axis-aligned camera whose pixels tile each voxel face `cell_size` times
    /// per edge and whose image covers the grid box exactly.
    pub fn canonical_camera(&self, view: CanonicalView) -> Result<OrthoCamera, CameraError> {
        OrthoCamera::covering(view.view_dir(), view.up(), &self.bbox(), self.voxel_edge / self.cell_size as f64)
    }
}

/// Density parameters. Activated density is `softplus(raw) * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid<R> {
    pub dims: [usize; 3],
    pub raw: Vec<R>,
    pub scale: f64,
}

impl<R: Real> DensityGrid<R> {
    pub fn filled(spec: &GridSpec, raw: f64) -> Self {
        DensityGrid { dims: spec.dims, raw: vec![R::from_f64(raw); spec.voxel_count()], scale: spec.density_scale() }
    }

    pub fn from_raw(spec: &GridSpec, raw: Vec<R>) -> Result<Self, GridError> {
        if raw.len() != spec.voxel_count() {
            return Err(GridError::BufferSize { expected: spec.voxel_count(), got: raw.len() });
        }
        Ok(DensityGrid { dims: spec.dims, raw, scale: spec.density_scale() })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    #[inline]
    pub fn density(&self, i: usize) -> f64 {
        softplus(self.raw[i].to_f64()) * self.scale
    }

    /// d(density)/d(raw) at voxel `i`.
    #[inline]
    pub fn density_grad(&self, i: usize) -> f64 {
        sigmoid(self.raw[i].to_f64()) * self.scale
    }

    /// Activated densities of every voxel.
    pub fn densities(&self) -> Vec<f64> {
        (0..self.raw.len()).map(|i| self.density(i)).collect()
    }

    /// Optical depth per voxel edge, `softplus(raw)`.
    pub fn optical_depths(&self) -> Vec<f64> {
        self.raw.iter().map(|r| softplus(r.to_f64())).collect()
    }
}

/// Stage-1 RGB parameters, three raw values per voxel passed through a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorGrid<R> {
    pub dims: [usize; 3],
    pub raw: Vec<R>,
}

impl<R: Real> ColorGrid<R> {
    pub fn filled(spec: &GridSpec, raw: f64) -> Self {
        ColorGrid { dims: spec.dims, raw: vec![R::from_f64(raw); spec.voxel_count() * 3] }
    }

    pub fn from_raw(spec: &GridSpec, raw: Vec<R>) -> Result<Self, GridError> {
        if raw.len() != spec.voxel_count() * 3 {
            return Err(GridError::BufferSize { expected: spec.voxel_count() * 3, got: raw.len() });
        }
        Ok(ColorGrid { dims: spec.dims, raw })
    }

    pub fn voxel_count(&self) -> usize {
        self.raw.len() / 3
    }

    #[inline]
    pub fn color(&self, i: usize) -> Rgb {
        core::array::from_fn(|k| sigmoid(self.raw[3 * i + k].to_f64()))
    }

    pub fn colors(&self) -> Vec<Rgb> {
        (0..self.voxel_count()).map(|i| self.color(i)).collect()
    }
}

/// Stage-2 palette logits, `channels` values per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGrid<R> {
    pub dims: [usize; 3],
    pub channels: usize,
    pub values: Vec<R>,
}

impl<R: Real> LogitGrid<R> {
    pub fn from_values(spec: &GridSpec, channels: usize, values: Vec<R>) -> Result<Self, GridError> {
        if values.len() != spec.voxel_count() * channels {
            return Err(GridError::BufferSize { expected: spec.voxel_count() * channels, got: values.len() });
        }
        Ok(LogitGrid { dims: spec.dims, channels, values })
    }

    pub fn voxel_count(&self) -> usize {
        self.values.len() / self.channels
    }

    #[inline]
    pub fn logits(&self, i: usize) -> &[R] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }
}

pub const DEFAULT_LOGIT_SCALE: f64 = 5.0;

/// Logits from negative Euclidean distance between each voxel's RGB and the
/// palette entries: `λ_n = -scale · ‖rgb − c_n‖`.
pub fn init_logits<R: Real>(
    spec: &GridSpec,
    rgb: &ColorGrid<R>,
    palette: &[Rgb],
    scale: f64,
) -> Result<LogitGrid<R>, GridError> {
    if rgb.dims != spec.dims {
        return Err(GridError::ResolutionMismatch { expected: spec.dims, got: rgb.dims });
    }
    let c = palette.len();
    let mut values = Vec::with_capacity(rgb.voxel_count() * c);
    for i in 0..rgb.voxel_count() {
        let col = rgb.color(i);
        values.extend(palette.iter().map(|p| R::from_f64(-scale * rgb_dist(&col, p))));
    }
    Ok(LogitGrid { dims: spec.dims, channels: c, values })
}

/// Occupancy threshold (activated density) at which one voxel edge of material
/// reaches opacity 1/2.
pub fn half_opacity_density(spec: &GridSpec) -> f64 {
    core::f64::consts::LN_2 / spec.voxel_edge
}

/// Raw density value whose single-voxel opacity is `alpha`.
pub fn raw_for_voxel_alpha(alpha: f64) -> f64 {
    crate::math::softplus_inv(-(1.0 - alpha).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CanonicalView;

    fn unit_box() -> Aabb {
        Aabb::new(Vec3::splat(-0.5), Vec3::splat(0.5))
    }

    #[test]
    fn grid_resolution_examples() {
        assert_eq!(make_grid_spec(&unit_box(), 400, 8).unwrap().dims, [50, 50, 50]);
        assert_eq!(make_grid_spec(&unit_box(), 400, 20).unwrap().dims, [20, 20, 20]);
        let flat = Aabb::new(Vec3::new(-0.5, -0.25, -0.25), Vec3::new(0.5, 0.25, 0.25));
        assert_eq!(make_grid_spec(&flat, 100, 10).unwrap().dims, [10, 5, 5]);
        assert_eq!(
            make_grid_spec(&unit_box(), 100, 7),
            Err(GridError::Indivisible { width: 100, cell_size: 7 })
        );
    }

    #[test]
    fn grid_box_covers_object_box() {
        let b = Aabb::new(Vec3::new(-0.5, -0.13, -0.31), Vec3::new(0.5, 0.13, 0.31));
        let s = make_grid_spec(&b, 160, 10).unwrap();
        let g = s.bbox();
        assert!(g.min.x <= b.min.x + 1e-12 && g.min.y <= b.min.y && g.min.z <= b.min.z);
        assert!(g.max.x >= b.max.x - 1e-12 && g.max.y >= b.max.y && g.max.z >= b.max.z);
        assert_eq!(s.dims, [16, 5, 10]);
    }

    #[test]
    fn canonical_cameras_tile_voxels() {
        let s = make_grid_spec(&unit_box(), 160, 10).unwrap();
        for v in CanonicalView::ALL {
            let cam = s.canonical_camera(v).unwrap();
            assert_eq!((cam.width, cam.height), (160, 160));
            assert!((cam.pixel_size() * 10.0 - s.voxel_edge).abs() < 1e-12);
        }
    }

    #[test]
    fn index_round_trip() {
        let s = make_grid_spec(&Aabb::new(Vec3::ZERO, Vec3::new(1.0, 0.5, 0.75)), 8, 1).unwrap();
        for i in 0..s.voxel_count() {
            let [x, y, z] = s.coords(i);
            assert_eq!(s.index(x, y, z), i);
        }
    }

    #[test]
    fn logit_init_examples() {
        let s = make_grid_spec(&unit_box(), 1, 1).unwrap();
        let red = ColorGrid::<f64> { dims: s.dims, raw: vec![40.0, -40.0, -40.0] };
        let pal = [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let l = init_logits(&s, &red, &pal, 1.0).unwrap();
        assert!(l.values[0].abs() < 1e-12);
        assert!((l.values[1] + 2f64.sqrt()).abs() < 1e-12);

        // Equidistant color gives equal logits.
        let mid = ColorGrid::<f64> { dims: s.dims, raw: vec![0.0, 0.0, 0.0] };
        let l = init_logits(&s, &mid, &[[0.0; 3], [1.0; 3]], 5.0).unwrap();
        assert_eq!(l.values[0], l.values[1]);
    }

    #[test]
    fn logit_init_rejects_mismatch() {
        let s = make_grid_spec(&unit_box(), 2, 1).unwrap();
        let other = make_grid_spec(&unit_box(), 3, 1).unwrap();
        let rgb = ColorGrid::<f32>::filled(&other, 0.0);
        assert!(matches!(init_logits(&s, &rgb, &[[0.0; 3], [1.0; 3]], 5.0), Err(GridError::ResolutionMismatch { .. })));
    }

    #[test]
    fn voxel_alpha_helper() {
        let r = raw_for_voxel_alpha(0.5);
        assert!((softplus(r) - core::f64::consts::LN_2).abs() < 1e-12);
    }
}
