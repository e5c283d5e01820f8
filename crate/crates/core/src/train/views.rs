use alloc::vec::Vec;

use crate::geometry::{diagonal_views, CameraError, CanonicalView, OrthoCamera, Ray, ViewRaster};
use crate::math::Rgb;
use crate::pixelart::PixelArtView;
use crate::voxgrid::GridSpec;

use super::TrainError;

/// Relative margin of the diagonal Stage-1 cameras.
pub const DIAGONAL_MARGIN: f64 = 1.1;

/// A supervised view: rays come from `camera` pixel centers.
pub trait PixelSource {
    fn camera(&self) -> &OrthoCamera;

    fn pixel_ray(&self, pixel: usize) -> Ray {
        let cam = self.camera();
        cam.pixel_ray(pixel % cam.width, pixel / cam.width)
    }
}

/// Stage-1 target: a mesh raster composited on the background color.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1View {
    pub camera: OrthoCamera,
    pub target: Vec<Rgb>,
}

impl Stage1View {
    pub fn from_raster(camera: OrthoCamera, raster: &ViewRaster, background: Rgb) -> Self {
        Stage1View { camera, target: raster.composited(background) }
    }
}

impl PixelSource for Stage1View {
    fn camera(&self) -> &OrthoCamera {
        &self.camera
    }
}

/// The six grid-aligned cameras followed by the eight corner diagonals.
pub fn stage1_cameras(spec: &GridSpec) -> Result<Vec<OrthoCamera>, CameraError> {
    let mut cams = Vec::with_capacity(14);
    for v in CanonicalView::ALL {
        cams.push(spec.canonical_camera(v)?);
    }
    for (dir, up) in diagonal_views() {
        cams.push(OrthoCamera::framing(dir, up, &spec.bbox(), DIAGONAL_MARGIN, spec.image_width)?);
    }
    Ok(cams)
}

/// Stage-2 supervision for one canonical view, expanded to raster pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2View {
    pub view: CanonicalView,
    pub camera: OrthoCamera,
    /// Pixel-art color, zero on background cells.
    pub target: Vec<Rgb>,
    /// Alpha mask: true on background cells.
    pub background: Vec<bool>,
    pub depth_gt: Vec<f64>,
    pub coverage: Vec<bool>,
    /// Mesh raster color, zero where uncovered.
    pub mesh_color: Vec<Rgb>,
}

impl Stage2View {
    pub fn new(view: CanonicalView, camera: OrthoCamera, raster: &ViewRaster, art: &PixelArtView) -> Result<Self, TrainError> {
        let (w, h) = (camera.width, camera.height);
        if raster.width != w || raster.height != h || art.pixel_width() != w || art.pixel_height() != h {
            return Err(TrainError::ViewSize {
                view: view.name(),
                camera: (w, h),
                raster: (raster.width, raster.height),
                art: (art.pixel_width(), art.pixel_height()),
            });
        }
        let mut target = Vec::with_capacity(w * h);
        let mut background = Vec::with_capacity(w * h);
        for row in 0..h {
            for col in 0..w {
                let cell = art.cell_of_pixel(col, row);
                let bg = art.background[cell];
                background.push(bg);
                target.push(if bg { [0.0; 3] } else { art.cells[cell] });
            }
        }
        Ok(Stage2View {
            view,
            camera,
            target,
            background,
            depth_gt: raster.depth.clone(),
            coverage: raster.coverage.clone(),
            mesh_color: raster.composited([0.0; 3]),
        })
    }
}

impl PixelSource for Stage2View {
    fn camera(&self) -> &OrthoCamera {
        &self.camera
    }
}
