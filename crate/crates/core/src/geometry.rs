//! Triangle meshes, orthographic cameras and the flat-shaded z-buffer
//! rasterizer that produces every image-space target used in training.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::math::{Aabb, Rgb, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeshError {
    #[error("mesh has no triangles")]
    NoTriangles,
    #[error("triangle {triangle} references vertex {index} but only {count} vertices exist")]
    IndexOutOfRange { triangle: usize, index: u32, count: usize },
    #[error("{colors} vertex colors for {vertices} vertices")]
    ColorCountMismatch { vertices: usize, colors: usize },
    #[error("mesh is degenerate (zero extent)")]
    Degenerate,
}

/// Indexed triangle mesh with one RGB color per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    colors: Vec<Rgb>,
}

impl Mesh {
    /// Validates the mesh invariants; colors are clamped to `[0, 1]`.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>, mut colors: Vec<Rgb>) -> Result<Self, MeshError> {
        if triangles.is_empty() {
            return Err(MeshError::NoTriangles);
        }
        if colors.len() != vertices.len() {
            return Err(MeshError::ColorCountMismatch { vertices: vertices.len(), colors: colors.len() });
        }
        for (t, tri) in triangles.iter().enumerate() {
            for &i in tri {
                if i as usize >= vertices.len() {
                    return Err(MeshError::IndexOutOfRange { triangle: t, index: i, count: vertices.len() });
                }
            }
        }
        for c in &mut colors {
            for ch in c.iter_mut() {
                *ch = if ch.is_nan() { 0.0 } else { ch.clamp(0.0, 1.0) };
            }
        }
        Ok(Mesh { vertices, triangles, colors })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn colors(&self) -> &[Rgb] {
        &self.colors
    }

    pub fn bounding_box(&self) -> Aabb {
        // `new` guarantees at least one triangle, hence at least one vertex.
        Aabb::from_points(&self.vertices).expect("mesh has vertices")
    }

    /// Appends another mesh, re-indexing its triangles.
    pub fn merged(mut self, other: &Mesh) -> Mesh {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.colors.extend_from_slice(&other.colors);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        self
    }
}

/// Centers the mesh's tight bounding box at the origin and scales it so the
/// longest side is 1. Returns the transformed mesh and its new box.
pub fn normalize_mesh(mesh: Mesh) -> Result<(Mesh, Aabb), MeshError> {
    let bbox = mesh.bounding_box();
    let longest = bbox.longest_side();
    if !(longest > 0.0) || !longest.is_finite() {
        return Err(MeshError::Degenerate);
    }
    let center = bbox.center();
    let scale = 1.0 / longest;
    let Mesh { vertices, triangles, colors } = mesh;
    let vertices: Vec<Vec3> = vertices.into_iter().map(|v| (v - center) * scale).collect();
    let out = Mesh { vertices, triangles, colors };
    let nb = out.bounding_box();
    Ok((out, nb))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CameraError {
    #[error("view direction and up vector must be unit length and orthogonal")]
    BadBasis,
    #[error("image dimensions must be at least 1x1")]
    EmptyImage,
    #[error("image extent must be positive")]
    BadExtent,
}

/// Orthographic camera. All rays share `view_dir`; they originate on the
/// camera plane, which sits `near` units in front of `center` (against the
/// view direction). Depth is measured along `view_dir` from that plane.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OrthoCamera {
    pub view_dir: Vec3,
    pub up: Vec3,
    pub width: usize,
    pub height: usize,
    /// World units spanned by the image width. Pixels are square.
    pub extent: f64,
    pub center: Vec3,
    pub near: f64,
}

/// Origin and direction of a camera ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl OrthoCamera {
    pub fn new(
        view_dir: Vec3,
        up: Vec3,
        width: usize,
        height: usize,
        extent: f64,
        center: Vec3,
        near: f64,
    ) -> Result<Self, CameraError> {
        if (view_dir.length() - 1.0).abs() > 1e-9 || (up.length() - 1.0).abs() > 1e-9 || view_dir.dot(up).abs() > 1e-9
        {
            return Err(CameraError::BadBasis);
        }
        if width == 0 || height == 0 {
            return Err(CameraError::EmptyImage);
        }
        if !(extent > 0.0) {
            return Err(CameraError::BadExtent);
        }
        Ok(OrthoCamera { view_dir, up, width, height, extent, center, near })
    }

    /// Square image of `width` pixels framing `bbox` with a relative margin,
    /// the camera plane tangent to the box on the near side.
    pub fn framing(view_dir: Vec3, up: Vec3, bbox: &Aabb, margin: f64, width: usize) -> Result<Self, CameraError> {
        let right = view_dir.cross(up);
        let c = bbox.center();
        let (mut w, mut h, mut near) = (0.0f64, 0.0f64, 0.0f64);
        for p in bbox.corners() {
            let r = p - c;
            w = w.max(2.0 * r.dot(right).abs());
            h = h.max(2.0 * r.dot(up).abs());
            near = near.max(-r.dot(view_dir));
        }
        let extent = margin * w.max(h);
        Self::new(view_dir, up, width, width, extent, c, near)
    }

    /// Image whose pixels have world size `pixel_size` and which covers the
    /// box's projection exactly (for axis-aligned views of grid boxes).
    pub fn covering(view_dir: Vec3, up: Vec3, bbox: &Aabb, pixel_size: f64) -> Result<Self, CameraError> {
        let right = view_dir.cross(up);
        let c = bbox.center();
        let (mut w, mut h, mut near) = (0.0f64, 0.0f64, 0.0f64);
        for p in bbox.corners() {
            let r = p - c;
            w = w.max(2.0 * r.dot(right).abs());
            h = h.max(2.0 * r.dot(up).abs());
            near = near.max(-r.dot(view_dir));
        }
        let width = ((w / pixel_size).round() as usize).max(1);
        let height = ((h / pixel_size).round() as usize).max(1);
        Self::new(view_dir, up, width, height, width as f64 * pixel_size, c, near)
    }

    /// Image-right vector.
    pub fn right(&self) -> Vec3 {
        self.view_dir.cross(self.up)
    }

    pub fn pixel_size(&self) -> f64 {
        self.extent / self.width as f64
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    fn plane_center(&self) -> Vec3 {
        self.center - self.view_dir * self.near
    }

    /// Ray through continuous image coordinates (`col`, `row`), measured in
    /// pixels from the top-left image corner.
    pub fn ray_at(&self, col: f64, row: f64) -> Ray {
        let px = self.pixel_size();
        let u = col * px - 0.5 * self.extent;
        let v = 0.5 * px * self.height as f64 - row * px;
        Ray { origin: self.plane_center() + self.right() * u + self.up * v, dir: self.view_dir }
    }

    /// Ray through the center of pixel (`col`, `row`).
    pub fn pixel_ray(&self, col: usize, row: usize) -> Ray {
        self.ray_at(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Projects a world point to continuous pixel coordinates and depth.
    pub fn project(&self, p: Vec3) -> (f64, f64, f64) {
        let rel = p - self.plane_center();
        let px = self.pixel_size();
        let col = (rel.dot(self.right()) + 0.5 * self.extent) / px;
        let row = (0.5 * px * self.height as f64 - rel.dot(self.up)) / px;
        (col, row, rel.dot(self.view_dir))
    }
}

/// The six axis-aligned views. Front looks along +Y, left along +X and top
/// along -Z; up is +Z for side views and +Y for top/bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum CanonicalView {
    Front,
    Back,
    Left,
    Right,
    Top,
    Bottom,
}

impl CanonicalView {
    pub const ALL: [CanonicalView; 6] = [
        CanonicalView::Front,
        CanonicalView::Back,
        CanonicalView::Left,
        CanonicalView::Right,
        CanonicalView::Top,
        CanonicalView::Bottom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CanonicalView::Front => "front",
            CanonicalView::Back => "back",
            CanonicalView::Left => "left",
            CanonicalView::Right => "right",
            CanonicalView::Top => "top",
            CanonicalView::Bottom => "bottom",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn view_dir(self) -> Vec3 {
        match self {
            CanonicalView::Front => Vec3::Y,
            CanonicalView::Back => -Vec3::Y,
            CanonicalView::Left => Vec3::X,
            CanonicalView::Right => -Vec3::X,
            CanonicalView::Top => -Vec3::Z,
            CanonicalView::Bottom => Vec3::Z,
        }
    }

    pub fn up(self) -> Vec3 {
        match self {
            CanonicalView::Top | CanonicalView::Bottom => Vec3::Y,
            _ => Vec3::Z,
        }
    }
}

/// The eight corner-diagonal view directions, with up chosen as +Z projected
/// orthogonal to the view direction.
pub fn diagonal_views() -> [(Vec3, Vec3); 8] {
    let mut out = [(Vec3::ZERO, Vec3::ZERO); 8];
    let mut i = 0;
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                let d = Vec3::new(sx, sy, sz).normalized();
                let up = (Vec3::Z - d * d.dot(Vec3::Z)).normalized();
                out[i] = (d, up);
                i += 1;
            }
        }
    }
    out
}

/// Row-major image buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Image { width, height, data: vec![value; width * height] }
    }
}

impl<T> Image<T> {
    #[inline]
    pub fn at(&self, col: usize, row: usize) -> &T {
        &self.data[row * self.width + col]
    }

    #[inline]
    pub fn at_mut(&mut self, col: usize, row: usize) -> &mut T {
        &mut self.data[row * self.width + col]
    }
}

/// Color, depth and coverage maps of one rasterized view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRaster {
    pub width: usize,
    pub height: usize,
    pub color: Vec<Rgb>,
    /// Distance along the view direction from the camera plane; `+inf` where
    /// nothing was hit.
    pub depth: Vec<f64>,
    pub coverage: Vec<bool>,
}

impl ViewRaster {
    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn coverage_fraction(&self) -> f64 {
        self.coverage.iter().filter(|&&c| c).count() as f64 / self.coverage.len() as f64
    }

    /// Color with uncovered pixels replaced by `background`.
    pub fn composited(&self, background: Rgb) -> Vec<Rgb> {
        self.color
            .iter()
            .zip(&self.coverage)
            .map(|(c, &hit)| if hit { *c } else { background })
            .collect()
    }
}

/// Z-buffered orthographic rasterization sampled at pixel centers. Colors are
/// barycentric interpolations of vertex colors, unlit.
pub fn rasterize(mesh: &Mesh, cam: &OrthoCamera) -> ViewRaster {
    let (w, h) = (cam.width, cam.height);
    let mut color = vec![[0.0; 3]; w * h];
    let mut depth = vec![f64::INFINITY; w * h];
    let mut coverage = vec![false; w * h];

    let projected: Vec<(f64, f64, f64)> = mesh.vertices.iter().map(|&v| cam.project(v)).collect();

    for tri in &mesh.triangles {
        let [ia, ib, ic] = tri.map(|i| i as usize);
        let (a, b, c) = (projected[ia], projected[ib], projected[ic]);
        let area = edge(a.0, a.1, b.0, b.1, c.0, c.1);
        if area.abs() < 1e-12 {
            continue;
        }
        let min_col = a.0.min(b.0).min(c.0).floor().max(0.0) as usize;
        let min_row = a.1.min(b.1).min(c.1).floor().max(0.0) as usize;
        let max_col = (a.0.max(b.0).max(c.0).ceil().max(0.0) as usize).min(w);
        let max_row = (a.1.max(b.1).max(c.1).ceil().max(0.0) as usize).min(h);
        let inv_area = 1.0 / area;
        let (ca, cb, cc) = (mesh.colors[ia], mesh.colors[ib], mesh.colors[ic]);

        for row in min_row..max_row {
            let py = row as f64 + 0.5;
            for col in min_col..max_col {
                let px = col as f64 + 0.5;
                let wa = edge(b.0, b.1, c.0, c.1, px, py) * inv_area;
                let wb = edge(c.0, c.1, a.0, a.1, px, py) * inv_area;
                let wc = edge(a.0, a.1, b.0, b.1, px, py) * inv_area;
                if wa < 0.0 || wb < 0.0 || wc < 0.0 {
                    continue;
                }
                let z = wa * a.2 + wb * b.2 + wc * c.2;
                let idx = row * w + col;
                if z < depth[idx] {
                    depth[idx] = z;
                    coverage[idx] = true;
                    color[idx] = core::array::from_fn(|k| (wa * ca[k] + wb * cb[k] + wc * cc[k]).clamp(0.0, 1.0));
                }
            }
        }
    }

    ViewRaster { width: w, height: h, color, depth, coverage }
}

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

/// Axis-aligned box mesh with a uniform color.
pub fn box_mesh(min: Vec3, max: Vec3, color: Rgb) -> Mesh {
    let b = Aabb::new(min, max);
    let vertices = b.corners().to_vec();
    // Corner index bits: 1 = x, 2 = y, 4 = z.
    let quads: [[u32; 4]; 6] = [
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
    ];
    let triangles = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    Mesh::new(vertices, triangles, vec![color; 8]).expect("box mesh is valid")
}

/// UV sphere with a uniform color.
pub fn sphere_mesh(center: Vec3, radius: f64, rings: usize, segments: usize, color: Rgb) -> Mesh {
    let rings = rings.max(2);
    let segments = segments.max(3);
    let mut vertices = Vec::new();
    vertices.push(center + Vec3::Z * radius);
    for r in 1..rings {
        let theta = core::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = 2.0 * core::f64::consts::PI * s as f64 / segments as f64;
            let dir = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            vertices.push(center + dir * radius);
        }
    }
    vertices.push(center - Vec3::Z * radius);
    let south = (vertices.len() - 1) as u32;
    let ring = |r: usize, s: usize| (1 + (r - 1) * segments + s % segments) as u32;
    let mut triangles = Vec::new();
    for s in 0..segments {
        triangles.push([0, ring(1, s), ring(1, s + 1)]);
        triangles.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let (a, b, c, d) = (ring(r, s), ring(r, s + 1), ring(r + 1, s), ring(r + 1, s + 1));
            triangles.push([a, c, d]);
            triangles.push([a, d, b]);
        }
    }
    let n = vertices.len();
    Mesh::new(vertices, triangles, vec![color; n]).expect("sphere mesh is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(z_offset: f64, color: Rgb) -> Mesh {
        // Camera-facing square in the x/z plane at y = z_offset (front view looks along +Y).
        Mesh::new(
            vec![
                Vec3::new(-0.5, z_offset, -0.5),
                Vec3::new(0.5, z_offset, -0.5),
                Vec3::new(0.5, z_offset, 0.5),
                Vec3::new(-0.5, z_offset, 0.5),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![color; 4],
        )
        .unwrap()
    }

    fn front_cam(width: usize, extent: f64) -> OrthoCamera {
        let v = CanonicalView::Front;
        OrthoCamera::new(v.view_dir(), v.up(), width, width, extent, Vec3::ZERO, 1.0).unwrap()
    }

    #[test]
    fn mesh_validation() {
        let v = vec![Vec3::ZERO, Vec3::X, Vec3::Y];
        assert_eq!(Mesh::new(v.clone(), vec![], vec![[0.0; 3]; 3]), Err(MeshError::NoTriangles));
        assert!(matches!(
            Mesh::new(v.clone(), vec![[0, 1, 3]], vec![[0.0; 3]; 3]),
            Err(MeshError::IndexOutOfRange { .. })
        ));
        assert!(matches!(Mesh::new(v.clone(), vec![[0, 1, 2]], vec![]), Err(MeshError::ColorCountMismatch { .. })));
        let m = Mesh::new(v, vec![[0, 1, 2]], vec![[2.0, -1.0, 0.5]; 3]).unwrap();
        assert_eq!(m.colors()[0], [1.0, 0.0, 0.5]);
    }

    #[test]
    fn normalize_translates_cube() {
        let m = box_mesh(Vec3::splat(4.5), Vec3::splat(5.5), [1.0, 0.0, 0.0]);
        let (n, b) = normalize_mesh(m).unwrap();
        assert!(b.center().length() < 1e-12);
        assert!((b.size() - Vec3::splat(1.0)).length() < 1e-12);
        assert_eq!(n.vertices().len(), 8);
    }

    #[test]
    fn normalize_scales_by_longest_side() {
        let m = box_mesh(Vec3::ZERO, Vec3::new(2.0, 1.0, 1.0), [1.0; 3]);
        let (_, b) = normalize_mesh(m).unwrap();
        assert!((b.size() - Vec3::new(1.0, 0.5, 0.5)).length() < 1e-12);
    }

    #[test]
    fn normalize_rejects_point_mesh() {
        let m = Mesh::new(vec![Vec3::splat(1.0); 3], vec![[0, 1, 2]], vec![[0.0; 3]; 3]).unwrap();
        assert_eq!(normalize_mesh(m), Err(MeshError::Degenerate));
    }

    #[test]
    fn camera_rejects_bad_basis() {
        assert_eq!(
            OrthoCamera::new(Vec3::X, Vec3::X, 4, 4, 1.0, Vec3::ZERO, 1.0),
            Err(CameraError::BadBasis)
        );
        assert_eq!(OrthoCamera::new(Vec3::X, Vec3::Z, 0, 4, 1.0, Vec3::ZERO, 1.0), Err(CameraError::EmptyImage));
    }

    #[test]
    fn rays_are_parallel() {
        let cam = OrthoCamera::framing(
            Vec3::new(1.0, 1.0, 1.0).normalized(),
            diagonal_views()[7].1,
            &Aabb::new(Vec3::splat(-0.5), Vec3::splat(0.5)),
            1.1,
            32,
        )
        .unwrap();
        let d0 = cam.pixel_ray(0, 0).dir;
        for (c, r) in [(3, 7), (31, 31), (16, 0)] {
            assert_eq!(cam.pixel_ray(c, r).dir, d0);
        }
    }

    #[test]
    fn flat_square_is_uniform_with_constant_depth() {
        let green = [0.0, 1.0, 0.0];
        let r = rasterize(&square(0.0, green), &front_cam(32, 1.1));
        let covered: Vec<usize> = (0..r.coverage.len()).filter(|&i| r.coverage[i]).collect();
        assert!(!covered.is_empty());
        for &i in &covered {
            assert!(crate::math::rgb_dist(&r.color[i], &green) < 1e-12);
            assert!((r.depth[i] - 1.0).abs() < 1e-6);
        }
        for i in 0..r.coverage.len() {
            assert_eq!(r.coverage[i], r.depth[i].is_finite());
        }
    }

    #[test]
    fn z_buffer_keeps_front_square() {
        // Camera plane at y = -1; squares at y = -0.8 (depth 0.2) and y = -0.5 (depth 0.5).
        let near = square(-0.8, [1.0, 0.0, 0.0]);
        let far = square(-0.5, [0.0, 0.0, 1.0]);
        for mesh in [far.clone().merged(&near), near.merged(&far)] {
            let r = rasterize(&mesh, &front_cam(16, 1.1));
            for i in 0..r.coverage.len() {
                if r.coverage[i] {
                    assert!(crate::math::rgb_dist(&r.color[i], &[1.0, 0.0, 0.0]) < 1e-12);
                    assert!((r.depth[i] - 0.2).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn half_image_triangle_coverage() {
        // Triangle spanning the image corners (0,0), (W,0), (0,H) in image space.
        let w = 64;
        let cam = front_cam(w, 1.0);
        let tri = Mesh::new(
            vec![Vec3::new(-0.5, 0.0, 0.5), Vec3::new(0.5, 0.0, 0.5), Vec3::new(-0.5, 0.0, -0.5)],
            vec![[0, 1, 2]],
            vec![[1.0; 3]; 3],
        )
        .unwrap();
        let r = rasterize(&tri, &cam);
        assert!((r.coverage_fraction() - 0.5).abs() <= 2.0 / w as f64);
    }

    #[test]
    fn sphere_and_box_meshes_are_closed_enough_to_raster() {
        let s = sphere_mesh(Vec3::ZERO, 0.4, 8, 12, [0.2, 0.3, 0.4]);
        let r = rasterize(&s, &front_cam(32, 1.0));
        let f = r.coverage_fraction();
        let disk = core::f64::consts::PI * 0.16;
        assert!((f - disk).abs() < 0.06, "{f} vs {disk}");
    }
}
