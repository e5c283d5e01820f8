//! Final discrete voxel model: occupancy from density, colors from logits.

use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::OrthoCamera;
use crate::math::{Real, Rgb, Vec3};
use crate::palette::Palette;
use crate::quantizer::finalize;
use crate::voxgrid::{half_opacity_density, traverse_into, DensityGrid, GridSpec, LogitGrid};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExportError {
    #[error("logit grid has {got} channels, palette has {expected} colors")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("grid resolution does not match the grid spec")]
    ResolutionMismatch,
}

/// Occupied voxels with palette indices. `index` is 0 where unoccupied.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub dims: [usize; 3],
    pub occupancy: Vec<bool>,
    pub index: Vec<u8>,
    pub palette: Palette,
}

impl QuantizedModel {
    pub fn empty(dims: [usize; 3], palette: Palette) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        QuantizedModel { dims, occupancy: vec![false; n], index: vec![0; n], palette }
    }

    #[inline]
    pub fn linear(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    /// `(x, y, z, palette index)` of every occupied voxel, x fastest.
    pub fn voxels(&self) -> impl Iterator<Item = (usize, usize, usize, u8)> + '_ {
        let [nx, ny, _] = self.dims;
        self.occupancy
            .iter()
            .enumerate()
            .filter(|(_, &o)| o)
            .map(move |(i, _)| (i % nx, (i / nx) % ny, i / (nx * ny), self.index[i]))
    }

    pub fn color_of(&self, voxel: usize) -> Rgb {
        self.palette.colors[self.index[voxel] as usize]
    }
}

/// Default occupancy threshold: one voxel edge of material reaches α = 1/2.
pub fn default_threshold(spec: &GridSpec) -> f64 {
    half_opacity_density(spec)
}

/// Voxels with activated density above `threshold` keep their argmax color.
pub fn quantize_model<R: Real>(
    spec: &GridSpec,
    density: &DensityGrid<R>,
    logits: &LogitGrid<R>,
    palette: &Palette,
    threshold: f64,
) -> Result<QuantizedModel, ExportError> {
    if logits.channels != palette.len() {
        return Err(ExportError::ChannelMismatch { expected: palette.len(), got: logits.channels });
    }
    if density.dims != spec.dims || logits.dims != spec.dims {
        return Err(ExportError::ResolutionMismatch);
    }
    let idx = finalize(logits);
    let occupancy: Vec<bool> = (0..density.len()).map(|i| density.density(i) > threshold).collect();
    let index = idx.iter().zip(&occupancy).map(|(&k, &o)| if o { k as u8 } else { 0 }).collect();
    Ok(QuantizedModel { dims: spec.dims, occupancy, index, palette: palette.clone() })
}

/// First occupied voxel along a ray, treating occupied voxels as opaque.
pub fn first_hit(model: &QuantizedModel, spec: &GridSpec, origin: Vec3, dir: Vec3) -> Option<(usize, f64)> {
    let mut segs = Vec::new();
    traverse_into(spec, origin, dir, &mut segs);
    segs.iter().find(|s| model.occupancy[s.voxel]).map(|s| (s.voxel, s.t_in))
}

/// Opaque-voxel render: color and coverage per pixel, row-major.
pub fn render_model(model: &QuantizedModel, spec: &GridSpec, cam: &OrthoCamera) -> (Vec<Rgb>, Vec<bool>) {
    let n = cam.pixel_count();
    let mut color = vec![[0.0; 3]; n];
    let mut hit = vec![false; n];
    let mut segs = Vec::new();
    for row in 0..cam.height {
        for col in 0..cam.width {
            let ray = cam.pixel_ray(col, row);
            traverse_into(spec, ray.origin, ray.dir, &mut segs);
            if let Some(s) = segs.iter().find(|s| model.occupancy[s.voxel]) {
                color[row * cam.width + col] = model.color_of(s.voxel);
                hit[row * cam.width + col] = true;
            }
        }
    }
    (color, hit)
}
