//! End-to-end run: mesh in, voxel art and run records out.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use voxify_core::embed::{BuiltinEmbedder, CosineLoss, SemanticLoss};
use voxify_core::export::{quantize_model, render_model, QuantizedModel};
use voxify_core::geometry::{normalize_mesh, rasterize, CanonicalView, Mesh, ViewRaster};
use voxify_core::losses::LossParts;
use voxify_core::palette::{extract_palette, Palette, PaletteStrategy};
use voxify_core::pixelart::{generate_standin, PixelArtView};
use voxify_core::train::objective::SemanticStatus;
use voxify_core::train::{
    stage1_cameras, train_stage1, train_stage2, Checkpoint, RayExecutor, Stage1Record, Stage1View, Stage2Record,
    Stage2View, TrainObserver, WHITE,
};
use voxify_core::voxgrid::{init_logits, make_grid_spec, GridSpec};
use voxify_core::{Real, Rgb};

use crate::config::{EmbedderChoice, Precision, RunOptions};
use crate::embedder::ExternalEmbedder;
use crate::formats::{load_external, write_pixel_art, write_png, write_ply_cubes, write_vox, Vxg1};
use crate::meshio::load_mesh;

pub const OPTIMIZER: &str = "adam(beta1=0.9, beta2=0.99, eps=1e-8, bias-corrected)";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("mesh file {0} does not exist")]
    MissingMesh(PathBuf),
    #[error(transparent)]
    MeshIo(#[from] crate::meshio::MeshIoError),
    #[error(transparent)]
    Mesh(#[from] voxify_core::geometry::MeshError),
    #[error(transparent)]
    Grid(#[from] voxify_core::voxgrid::GridError),
    #[error(transparent)]
    Camera(#[from] voxify_core::geometry::CameraError),
    #[error(transparent)]
    PixelArt(#[from] voxify_core::pixelart::PixelArtError),
    #[error(transparent)]
    Palette(#[from] voxify_core::palette::PaletteError),
    #[error(transparent)]
    Train(#[from] voxify_core::train::TrainError),
    #[error(transparent)]
    Export(#[from] voxify_core::export::ExportError),
    #[error(transparent)]
    Format(#[from] crate::formats::FormatError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("pixel art for view {0} is missing")]
    MissingPixelArt(&'static str),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

/// Palette as dumped to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteJson {
    pub colors: Vec<Rgb>,
    pub method: PaletteStrategy,
    pub seed: u64,
}

impl From<&Palette> for PaletteJson {
    fn from(p: &Palette) -> Self {
        PaletteJson { colors: p.colors.clone(), method: p.strategy, seed: p.seed }
    }
}

impl PaletteJson {
    pub fn to_palette(&self) -> Result<Palette, voxify_core::palette::PaletteError> {
        Palette::new(self.colors.clone(), self.method, self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalLosses {
    pub iter: u64,
    pub total: f64,
    pub render: f64,
    pub tv: f64,
    pub bg_entropy: f64,
    pub pixel: f64,
    pub depth: f64,
    pub alpha: f64,
    pub semantic: f64,
}

impl FinalLosses {
    fn new(iter: u64, total: f64, p: &LossParts) -> Self {
        FinalLosses {
            iter,
            total,
            render: p.render,
            tv: p.tv,
            bg_entropy: p.bg_entropy,
            pixel: p.pixel,
            depth: p.depth,
            alpha: p.alpha,
            semantic: p.semantic,
        }
    }
}

/// Written once per run. Wall-clock time goes to `timing.json` so that
/// identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub software: String,
    pub options: RunOptions,
    pub optimizer: String,
    pub grid: GridSpec,
    pub palette: PaletteJson,
    pub stage1_final: Option<FinalLosses>,
    pub stage2_final: Option<FinalLosses>,
    pub semantic_skipped: u64,
    pub occupied_voxels: usize,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// In-memory results returned alongside the files.
pub struct RunOutput {
    pub manifest: RunManifest,
    pub spec: GridSpec,
    pub model: QuantizedModel,
    /// Final raw density, widened to f64.
    pub density_raw: Vec<f64>,
    /// Pixel-art supervision per canonical view, in `CanonicalView::ALL` order.
    pub pixel_art: Vec<PixelArtView>,
    pub rasters: Vec<ViewRaster>,
}

pub const STAGE1_CSV_HEADER: &str = "iter,loss_total,loss_render,loss_bg_entropy,loss_tv,lr_density";
pub const STAGE2_CSV_HEADER: &str =
    "iter,loss_total,loss_pixel,loss_depth,loss_alpha,loss_sem,tau,mode,lambda_depth,lambda_clip,active_views,semantic";

fn semantic_name(s: &SemanticStatus) -> &'static str {
    match s {
        SemanticStatus::Inactive => "inactive",
        SemanticStatus::Applied => "applied",
        SemanticStatus::Skipped(_) => "skipped",
    }
}

/// Streams loss CSVs and VXG1 checkpoints. The first IO error is kept and
/// reported after training.
struct Recorder {
    dir: PathBuf,
    stage1: BufWriter<File>,
    stage2: BufWriter<File>,
    error: Option<PipelineError>,
    skipped: u64,
}

impl Recorder {
    fn new(out: &Path) -> Result<Self, PipelineError> {
        let dir = out.join("checkpoints");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let open = |name: &str, header: &str| -> Result<BufWriter<File>, PipelineError> {
            let p = out.join(name);
            let mut w = BufWriter::new(File::create(&p).map_err(io_err(&p))?);
            writeln!(w, "{header}").map_err(io_err(&p))?;
            Ok(w)
        };
        Ok(Recorder {
            stage1: open("loss_stage1.csv", STAGE1_CSV_HEADER)?,
            stage2: open("loss.csv", STAGE2_CSV_HEADER)?,
            dir,
            error: None,
            skipped: 0,
        })
    }

    fn keep(&mut self, r: Result<(), PipelineError>) {
        if let (Err(e), None) = (r, &self.error) {
            self.error = Some(e);
        }
    }

    fn write_checkpoint(&mut self, name: String, g: &Vxg1) {
        let p = self.dir.join(name);
        let r = fs::write(&p, g.encode()).map_err(io_err(&p));
        self.keep(r);
    }

    fn finish(mut self) -> Result<u64, PipelineError> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.stage1.flush().map_err(io_err(&self.dir))?;
        self.stage2.flush().map_err(io_err(&self.dir))?;
        Ok(self.skipped)
    }
}

impl<R: Real> TrainObserver<R> for Recorder {
    fn stage1(&mut self, r: &Stage1Record) {
        let p = &r.parts;
        let res = writeln!(self.stage1, "{},{},{},{},{},{}", r.iter, r.total, p.render, p.bg_entropy, p.tv, r.lr_density);
        let dir = self.dir.clone();
        self.keep(res.map_err(io_err(&dir)));
    }

    fn stage2(&mut self, r: &Stage2Record) {
        if matches!(r.semantic, SemanticStatus::Skipped(_)) {
            self.skipped += 1;
        }
        let p = &r.parts;
        let res = writeln!(
            self.stage2,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.iter,
            r.total,
            p.pixel,
            p.depth,
            p.alpha,
            p.semantic,
            r.tau,
            r.mode.name(),
            r.lambda_depth,
            r.lambda_clip,
            r.active_views,
            semantic_name(&r.semantic)
        );
        let dir = self.dir.clone();
        self.keep(res.map_err(io_err(&dir)));
    }

    fn checkpoint(&mut self, cp: Checkpoint<'_, R>) {
        match cp {
            Checkpoint::Stage1 { iter, density, color } => {
                self.write_checkpoint(format!("stage1_{iter:05}.vxg"), &Vxg1::from_color(density, color))
            }
            Checkpoint::Stage2 { iter, density, logits } => {
                self.write_checkpoint(format!("stage2_{iter:05}.vxg"), &Vxg1::from_logits(density, logits))
            }
        }
    }
}

struct Trained {
    model: QuantizedModel,
    density_raw: Vec<f64>,
    stage1: Option<Stage1Record>,
    stage2: Option<Stage2Record>,
    stage1_secs: f64,
    stage2_secs: f64,
}

#[allow(clippy::too_many_arguments)]
fn train<R: Real, E: RayExecutor>(
    opts: &RunOptions,
    spec: &GridSpec,
    s1_views: &[Stage1View],
    s2_views: &[Stage2View],
    palette: &Palette,
    semantic: &mut dyn SemanticLoss,
    exec: &E,
    rec: &mut Recorder,
) -> Result<Trained, PipelineError> {
    let cfg = &opts.train;
    let t0 = Instant::now();
    let s1 = train_stage1::<R, E>(s1_views, spec, cfg, exec, rec)?;
    let stage1_secs = t0.elapsed().as_secs_f64();
    let logits = init_logits(spec, &s1.color, &palette.colors, cfg.logit_scale)?;
    let t1 = Instant::now();
    let s2 = train_stage2(s2_views, spec, &palette.colors, s1.density, logits, cfg, Some(semantic), exec, rec)?;
    let stage2_secs = t1.elapsed().as_secs_f64();
    let final_cp = Vxg1::from_logits(&s2.density, &s2.logits);
    rec.write_checkpoint("final.vxg".into(), &final_cp);
    let threshold = opts.occupancy_threshold.unwrap_or(std::f64::consts::LN_2) / spec.voxel_edge;
    let model = quantize_model(spec, &s2.density, &s2.logits, palette, threshold)?;
    Ok(Trained {
        model,
        density_raw: s2.density.raw.iter().map(|v| v.to_f64()).collect(),
        stage1: s1.last,
        stage2: s2.last,
        stage1_secs,
        stage2_secs,
    })
}

fn pixel_art_views(
    opts: &RunOptions,
    rasters: &[ViewRaster],
    hint: Option<&[Rgb]>,
) -> Result<Vec<PixelArtView>, PipelineError> {
    match &opts.pixel_art_dir {
        Some(dir) => CanonicalView::ALL
            .iter()
            .map(|v| {
                let p = dir.join(format!("{}.png", v.name()));
                if !p.exists() {
                    return Err(PipelineError::MissingPixelArt(v.name()));
                }
                Ok(load_external(&p, opts.cell_size)?)
            })
            .collect(),
        None => rasters.iter().map(|r| Ok(generate_standin(r, opts.cell_size, hint)?)).collect(),
    }
}

/// Runs the full pipeline and writes every output under `opts.out`.
pub fn run_pipeline<E: RayExecutor>(opts: &RunOptions, exec: &E) -> Result<RunOutput, PipelineError> {
    opts.validate()?;
    if !opts.mesh.is_file() {
        return Err(PipelineError::MissingMesh(opts.mesh.clone()));
    }
    let started = Instant::now();
    let mesh: Mesh = load_mesh(&opts.mesh)?;
    let (mesh, bbox) = normalize_mesh(mesh)?;
    let spec = make_grid_spec(&bbox, opts.image_width, opts.cell_size)?;
    let out = &opts.out;
    for d in [out.clone(), out.join("pixelart"), out.join("renders")] {
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }

    let cams = CanonicalView::ALL.map(|v| spec.canonical_camera(v));
    let cams: Vec<_> = cams.into_iter().collect::<Result<_, _>>()?;
    let rasters: Vec<ViewRaster> = cams.iter().map(|c| rasterize(&mesh, c)).collect();

    let first = pixel_art_views(opts, &rasters, None)?;
    let fg: Vec<Rgb> = first.iter().flat_map(|a| a.foreground_colors().copied()).collect();
    let palette = extract_palette(&fg, opts.colors, opts.palette_method, opts.seed, &opts.palette_options)?;
    let art = if opts.pixel_art_dir.is_some() { first } else { pixel_art_views(opts, &rasters, Some(&palette.colors))? };
    for (v, a) in CanonicalView::ALL.iter().zip(&art) {
        write_pixel_art(&out.join("pixelart").join(format!("{}.png", v.name())), a)?;
    }
    let palette_json = PaletteJson::from(&palette);
    let pp = out.join("palette.json");
    fs::write(&pp, serde_json::to_string_pretty(&palette_json).expect("palette serializes")).map_err(io_err(&pp))?;

    let s1_views: Vec<Stage1View> = stage1_cameras(&spec)?
        .into_iter()
        .map(|c| {
            let r = rasterize(&mesh, &c);
            Stage1View::from_raster(c, &r, WHITE)
        })
        .collect();
    let s2_views: Vec<Stage2View> = CanonicalView::ALL
        .iter()
        .zip(cams.iter().zip(rasters.iter().zip(&art)))
        .map(|(&v, (c, (r, a)))| Stage2View::new(v, c.clone(), r, a))
        .collect::<Result<_, _>>()?;

    let mut semantic: Box<dyn SemanticLoss> = match &opts.embedder {
        EmbedderChoice::Builtin => Box::new(CosineLoss(BuiltinEmbedder)),
        EmbedderChoice::External(cmd) => Box::new(ExternalEmbedder::new(cmd.clone())),
    };
    let mut rec = Recorder::new(out)?;
    let trained = match opts.precision {
        Precision::F32 => train::<f32, E>(opts, &spec, &s1_views, &s2_views, &palette, semantic.as_mut(), exec, &mut rec),
        Precision::F64 => train::<f64, E>(opts, &spec, &s1_views, &s2_views, &palette, semantic.as_mut(), exec, &mut rec),
    }?;
    drop(semantic);
    let semantic_skipped = rec.finish()?;
    if semantic_skipped > 0 {
        log::warn!("semantic term skipped in {semantic_skipped} iterations");
    }

    let model = trained.model;
    write_vox(&model, &out.join("model.vox"))?;
    let ply = out.join("model.ply");
    let mut w = BufWriter::new(File::create(&ply).map_err(io_err(&ply))?);
    write_ply_cubes(&model, &spec, &mut w).and_then(|_| w.flush()).map_err(io_err(&ply))?;
    for (v, c) in CanonicalView::ALL.iter().zip(&cams) {
        let (color, hit) = render_model(&model, &spec, c);
        write_png(&out.join("renders").join(format!("{}.png", v.name())), c.width, c.height, &color, &hit)?;
    }

    let mut files: Vec<String> = vec![
        "manifest.json".into(),
        "palette.json".into(),
        "loss_stage1.csv".into(),
        "loss.csv".into(),
        "model.vox".into(),
        "model.ply".into(),
        "timing.json".into(),
    ];
    for v in CanonicalView::ALL {
        files.push(format!("pixelart/{}.png", v.name()));
        files.push(format!("renders/{}.png", v.name()));
    }
    let manifest = RunManifest {
        software: format!("voxify {}", env!("CARGO_PKG_VERSION")),
        options: opts.clone(),
        optimizer: OPTIMIZER.into(),
        grid: spec,
        palette: palette_json,
        stage1_final: trained.stage1.map(|r| FinalLosses::new(r.iter, r.total, &r.parts)),
        stage2_final: trained.stage2.as_ref().map(|r| FinalLosses::new(r.iter, r.total, &r.parts)),
        semantic_skipped,
        occupied_voxels: model.occupied_count(),
        files,
    };
    let mp = out.join("manifest.json");
    fs::write(&mp, manifest.to_json()).map_err(io_err(&mp))?;
    let timing = serde_json::json!({
        "stage1_seconds": trained.stage1_secs,
        "stage2_seconds": trained.stage2_secs,
        "total_seconds": started.elapsed().as_secs_f64(),
    });
    let tp = out.join("timing.json");
    fs::write(&tp, serde_json::to_string_pretty(&timing).expect("json")).map_err(io_err(&tp))?;

    Ok(RunOutput { manifest, spec, model, density_raw: trained.density_raw, pixel_art: art, rasters })
}
