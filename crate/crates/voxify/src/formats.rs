//! Binary and image formats: MagicaVoxel `.vox`, VXG1 grid checkpoints,
//! cube-mesh PLY and PNG.

use std::io::Write;
use std::path::Path;

use voxify_core::export::QuantizedModel;
use voxify_core::palette::{Palette, PaletteStrategy};
use voxify_core::pixelart::{to_u8, PixelArtView};
use voxify_core::voxgrid::{ColorGrid, DensityGrid, GridSpec, LogitGrid};
use voxify_core::{Real, Rgb};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("grid dimension {0} exceeds the .vox limit of 256")]
    TooLarge(usize),
    #[error("{0} palette colors exceed the 255 usable .vox color slots")]
    TooManyColors(usize),
    #[error("malformed {format} data: {msg}")]
    Malformed { format: &'static str, msg: String },
    #[error("PNG has no alpha channel")]
    MissingAlpha,
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    PixelArt(#[from] voxify_core::pixelart::PixelArtError),
}

fn malformed(format: &'static str, msg: impl Into<String>) -> FormatError {
    FormatError::Malformed { format, msg: msg.into() }
}

fn chunk(id: &[u8; 4], content: &[u8], children: &[u8], out: &mut Vec<u8>) {
    out.extend_from_slice(id);
    out.extend_from_slice(&(content.len() as u32).to_le_bytes());
    out.extend_from_slice(&(children.len() as u32).to_le_bytes());
    out.extend_from_slice(content);
    out.extend_from_slice(children);
}

/// Encodes a model. Grid z maps to `.vox` z (up). Color index `k + 1`
/// refers to palette entry `k`; RGBA slots past the palette are all zero.
pub fn encode_vox(model: &QuantizedModel) -> Result<Vec<u8>, FormatError> {
    if let Some(&d) = model.dims.iter().find(|&&d| d > 256) {
        return Err(FormatError::TooLarge(d));
    }
    if model.palette.len() > 255 {
        return Err(FormatError::TooManyColors(model.palette.len()));
    }
    let mut size = Vec::with_capacity(12);
    for d in model.dims {
        size.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let mut xyzi = (model.occupied_count() as u32).to_le_bytes().to_vec();
    for (x, y, z, k) in model.voxels() {
        xyzi.extend_from_slice(&[x as u8, y as u8, z as u8, k + 1]);
    }
    let mut rgba = vec![0u8; 1024];
    for (k, c) in model.palette.colors.iter().enumerate() {
        let c = c.map(to_u8);
        rgba[4 * k..4 * k + 4].copy_from_slice(&[c[0], c[1], c[2], 255]);
    }
    let mut children = Vec::new();
    chunk(b"SIZE", &size, &[], &mut children);
    chunk(b"XYZI", &xyzi, &[], &mut children);
    chunk(b"RGBA", &rgba, &[], &mut children);
    let mut out = b"VOX ".to_vec();
    out.extend_from_slice(&150u32.to_le_bytes());
    chunk(b"MAIN", &[], &children, &mut out);
    Ok(out)
}

pub fn write_vox(model: &QuantizedModel, path: &Path) -> Result<(), FormatError> {
    std::fs::write(path, encode_vox(model)?)?;
    Ok(())
}

/// Contents of a `.vox` file. The palette is the leading run of RGBA slots
/// with nonzero alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxData {
    pub dims: [usize; 3],
    pub voxels: Vec<[u8; 4]>,
    pub rgba: Vec<[u8; 4]>,
}

impl VoxData {
    pub fn palette_colors(&self) -> Vec<Rgb> {
        self.rgba
            .iter()
            .take_while(|c| c[3] != 0)
            .map(|c| [c[0], c[1], c[2]].map(|v| v as f64 / 255.0))
            .collect()
    }

    pub fn into_model(self, strategy: PaletteStrategy, seed: u64) -> Result<QuantizedModel, FormatError> {
        let colors = self.palette_colors();
        let palette = Palette::new(colors, strategy, seed).map_err(|e| malformed("vox", e.to_string()))?;
        let mut m = QuantizedModel::empty(self.dims, palette);
        for v in &self.voxels {
            let [x, y, z, c] = v.map(|b| b as usize);
            if x >= self.dims[0] || y >= self.dims[1] || z >= self.dims[2] || c == 0 || c > m.palette.len() {
                return Err(malformed("vox", format!("voxel {v:?} out of range")));
            }
            let i = m.linear(x, y, z);
            m.occupancy[i] = true;
            m.index[i] = (c - 1) as u8;
        }
        Ok(m)
    }
}

fn le_u32(b: &[u8], at: usize, format: &'static str) -> Result<u32, FormatError> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| malformed(format, "truncated"))
}

pub fn decode_vox(bytes: &[u8]) -> Result<VoxData, FormatError> {
    if bytes.get(..4) != Some(b"VOX ") {
        return Err(malformed("vox", "missing magic"));
    }
    let mut pos = 8;
    let mut dims = None;
    let mut voxels = Vec::new();
    let mut rgba = Vec::new();
    while pos + 12 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let content = le_u32(bytes, pos + 4, "vox")? as usize;
        let body = bytes.get(pos + 12..pos + 12 + content).ok_or_else(|| malformed("vox", "truncated chunk"))?;
        match id {
            b"MAIN" => {
                pos += 12;
                continue;
            }
            b"SIZE" => {
                let d = [le_u32(body, 0, "vox")?, le_u32(body, 4, "vox")?, le_u32(body, 8, "vox")?];
                dims = Some(d.map(|v| v as usize));
            }
            b"XYZI" => {
                let n = le_u32(body, 0, "vox")? as usize;
                let data = body.get(4..4 + 4 * n).ok_or_else(|| malformed("vox", "truncated XYZI"))?;
                voxels = data.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
            }
            b"RGBA" => rgba = body.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect(),
            _ => {}
        }
        let children = le_u32(bytes, pos + 8, "vox")? as usize;
        pos += 12 + content + children;
    }
    let dims = dims.ok_or_else(|| malformed("vox", "missing SIZE chunk"))?;
    Ok(VoxData { dims, voxels, rgba })
}

/// VXG1 checkpoint: header `"VXG1"`, u32 Nx, Ny, Nz, C, then the f32 density
/// array and the f32 second array, x fastest. `C = 0` marks an RGB color
/// grid (3 values per voxel); otherwise the second array holds C logits per
/// voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct Vxg1 {
    pub dims: [usize; 3],
    pub channels: u32,
    pub density: Vec<f32>,
    pub values: Vec<f32>,
}

impl Vxg1 {
    fn to_f32<R: Real>(v: &[R]) -> Vec<f32> {
        v.iter().map(|x| x.to_f64() as f32).collect()
    }

    pub fn from_color<R: Real>(density: &DensityGrid<R>, color: &ColorGrid<R>) -> Self {
        Vxg1 { dims: density.dims, channels: 0, density: Self::to_f32(&density.raw), values: Self::to_f32(&color.raw) }
    }

    pub fn from_logits<R: Real>(density: &DensityGrid<R>, logits: &LogitGrid<R>) -> Self {
        Vxg1 {
            dims: density.dims,
            channels: logits.channels as u32,
            density: Self::to_f32(&density.raw),
            values: Self::to_f32(&logits.values),
        }
    }

    fn per_voxel(&self) -> usize {
        if self.channels == 0 { 3 } else { self.channels as usize }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = b"VXG1".to_vec();
        for v in [self.dims[0] as u32, self.dims[1] as u32, self.dims[2] as u32, self.channels] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.density.iter().chain(&self.values) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.get(..4) != Some(b"VXG1") {
            return Err(malformed("VXG1", "missing magic"));
        }
        let h: Vec<u32> = (0..4).map(|i| le_u32(bytes, 4 + 4 * i, "VXG1")).collect::<Result<_, _>>()?;
        let dims = [h[0] as usize, h[1] as usize, h[2] as usize];
        let n = dims[0] * dims[1] * dims[2];
        let mut g = Vxg1 { dims, channels: h[3], density: Vec::new(), values: Vec::new() };
        let m = n * g.per_voxel();
        let body = &bytes[20..];
        if body.len() != 4 * (n + m) {
            return Err(malformed("VXG1", format!("expected {} payload bytes, found {}", 4 * (n + m), body.len())));
        }
        let floats: Vec<f32> = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        g.density = floats[..n].to_vec();
        g.values = floats[n..].to_vec();
        Ok(g)
    }

    pub fn density_grid<R: Real>(&self, spec: &GridSpec) -> Result<DensityGrid<R>, FormatError> {
        if self.dims != spec.dims {
            return Err(malformed("VXG1", "dimensions do not match the grid"));
        }
        DensityGrid::from_raw(spec, self.density.iter().map(|&v| R::from_f64(v as f64)).collect())
            .map_err(|e| malformed("VXG1", e.to_string()))
    }

    pub fn logit_grid<R: Real>(&self, spec: &GridSpec) -> Result<LogitGrid<R>, FormatError> {
        if self.channels == 0 {
            return Err(malformed("VXG1", "checkpoint holds colors, not logits"));
        }
        LogitGrid::from_values(spec, self.channels as usize, self.values.iter().map(|&v| R::from_f64(v as f64)).collect())
            .map_err(|e| malformed("VXG1", e.to_string()))
    }
}

/// ASCII PLY with one colored cube (8 vertices, 12 triangles) per occupied
/// voxel, in world coordinates.
pub fn write_ply_cubes(model: &QuantizedModel, spec: &GridSpec, out: &mut impl Write) -> std::io::Result<()> {
    let n = model.occupied_count();
    writeln!(out, "ply\nformat ascii 1.0")?;
    writeln!(out, "element vertex {}", 8 * n)?;
    writeln!(out, "property float x\nproperty float y\nproperty float z")?;
    writeln!(out, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    writeln!(out, "element face {}", 12 * n)?;
    writeln!(out, "property list uchar int vertex_indices\nend_header")?;
    let e = spec.voxel_edge;
    for (x, y, z, k) in model.voxels() {
        let c = model.palette.colors[k as usize].map(to_u8);
        for corner in 0..8 {
            let p = [
                spec.origin.x + (x + (corner & 1)) as f64 * e,
                spec.origin.y + (y + ((corner >> 1) & 1)) as f64 * e,
                spec.origin.z + (z + ((corner >> 2) & 1)) as f64 * e,
            ];
            writeln!(out, "{} {} {} {} {} {}", p[0], p[1], p[2], c[0], c[1], c[2])?;
        }
    }
    // Corner index bits: 1 = x, 2 = y, 4 = z.
    const QUADS: [[usize; 4]; 6] =
        [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    for v in 0..n {
        let b = 8 * v;
        for q in QUADS {
            writeln!(out, "3 {} {} {}", b + q[0], b + q[1], b + q[2])?;
            writeln!(out, "3 {} {} {}", b + q[0], b + q[2], b + q[3])?;
        }
    }
    Ok(())
}

/// 8-bit RGBA PNG from colors and a per-pixel opacity mask.
pub fn write_png(path: &Path, width: usize, height: usize, color: &[Rgb], opaque: &[bool]) -> Result<(), FormatError> {
    let mut buf = Vec::with_capacity(width * height * 4);
    for (c, &o) in color.iter().zip(opaque) {
        let c = c.map(to_u8);
        buf.extend_from_slice(&[c[0], c[1], c[2], if o { 255 } else { 0 }]);
    }
    write_rgba_png(path, width, height, buf)
}

pub fn write_rgba_png(path: &Path, width: usize, height: usize, rgba: Vec<u8>) -> Result<(), FormatError> {
    let img = image::RgbaImage::from_raw(width as u32, height as u32, rgba)
        .ok_or_else(|| malformed("png", "buffer size does not match dimensions"))?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn write_pixel_art(path: &Path, art: &PixelArtView) -> Result<(), FormatError> {
    write_rgba_png(path, art.pixel_width(), art.pixel_height(), art.to_rgba8())
}

/// Loads externally produced pixel art: one texel per cell (the cell's
/// top-left corner). Logs a warning when some cell is not uniform.
pub fn load_external(path: &Path, cell_size: usize) -> Result<PixelArtView, FormatError> {
    let img = image::ImageReader::open(path)?.with_guessed_format()?.decode()?;
    if !img.color().has_alpha() {
        return Err(FormatError::MissingAlpha);
    }
    let rgba = img.to_rgba8();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let (view, non_uniform) = PixelArtView::from_rgba8(w, h, rgba.as_raw(), cell_size)?;
    if non_uniform > 0 {
        log::warn!("{}: {non_uniform} cells are not uniform; using their corner texels", path.display());
    }
    Ok(view)
}
