//! `voxify` command-line interface. Exit codes: 0 success, 1 runtime
//! failure, 2 usage error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use voxify_core::export::{quantize_model, render_model};
use voxify_core::geometry::CanonicalView;
use voxify_core::gradcheck::{check_all, GradCheckConfig, Term, TermReport};
use voxify_core::palette::{extract_palette, PaletteOptions, PaletteStrategy};
use voxify_core::voxgrid::GridSpec;
use voxify_core::{Rgb, Vec3};

use crate::config::{EmbedderChoice, Overrides, Precision, RunOptions};
use crate::formats::{decode_vox, load_external, write_png, write_ply_cubes, write_vox, Vxg1};
use crate::pipeline::{run_pipeline, PaletteJson, RunManifest};
use crate::pool::Threaded;

#[derive(Debug, Parser)]
#[command(name = "voxify", version, about = "Palette-constrained voxel art from colored meshes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full two-stage pipeline on a mesh.
    Run(RunArgs),
    /// Extract a palette from pixel-art PNGs and print it as JSON.
    Palette(PaletteArgs),
    /// Render the six canonical views of a .vox model to PNGs.
    Render(RenderArgs),
    /// Quantize a Stage-2 checkpoint and write .vox and .ply files.
    Export(ExportArgs),
    /// Run the finite-difference gradient suites.
    CheckGradients(GradArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Kmeans,
    KmeansRare,
    Mediancut,
    Maxmin,
    Anneal,
}

impl From<Method> for PaletteStrategy {
    fn from(m: Method) -> Self {
        match m {
            Method::Kmeans => PaletteStrategy::KMeans,
            Method::KmeansRare => PaletteStrategy::KMeansRareBoost,
            Method::Mediancut => PaletteStrategy::MedianCut,
            Method::Maxmin => PaletteStrategy::MaxMin,
            Method::Anneal => PaletteStrategy::SimAnneal,
        }
    }
}

fn colors_arg(s: &str) -> Result<usize, String> {
    let c: usize = s.parse().map_err(|e| format!("{e}"))?;
    if (2..=256).contains(&c) {
        Ok(c)
    } else {
        Err(format!("palette size must lie in 2..=256, got {c}"))
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Input mesh (.obj with vertex colors, or .ply).
    #[arg(long, required_unless_present = "config")]
    pub mesh: Option<PathBuf>,
    /// Output directory.
    #[arg(long, required_unless_present = "config")]
    pub out: Option<PathBuf>,
    /// Canonical view width in pixels.
    #[arg(long)]
    pub image_width: Option<usize>,
    /// Pixels per pixel-art cell (one cell per voxel face).
    #[arg(long)]
    pub cell_size: Option<usize>,
    /// Palette size, 2..=256.
    #[arg(long, value_parser = colors_arg)]
    pub colors: Option<usize>,
    #[arg(long, value_enum)]
    pub palette_method: Option<Method>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory with front.png, back.png, left.png, right.png, top.png, bottom.png.
    #[arg(long)]
    pub pixel_art_dir: Option<PathBuf>,
    /// `builtin` or `external:CMD`.
    #[arg(long)]
    pub embedder: Option<EmbedderChoice>,
    #[arg(long)]
    pub stage1_iters: Option<u64>,
    /// Stage-2 length; schedule breakpoints scale with it.
    #[arg(long)]
    pub stage2_iters: Option<u64>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    /// TOML file with run options; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            mesh: self.mesh.clone(),
            out: self.out.clone(),
            image_width: self.image_width,
            cell_size: self.cell_size,
            colors: self.colors,
            palette_method: self.palette_method.map(Into::into),
            seed: self.seed,
            pixel_art_dir: self.pixel_art_dir.clone(),
            embedder: self.embedder.clone(),
            precision: self.precision,
            stage1_iters: self.stage1_iters,
            stage2_iters: self.stage2_iters,
        }
    }
}

#[derive(Debug, Args)]
pub struct PaletteArgs {
    /// Pixel-art PNGs with alpha.
    #[arg(long, num_args = 1.., required = true)]
    pub images: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub cell_size: usize,
    #[arg(long, value_parser = colors_arg)]
    pub colors: usize,
    #[arg(long, value_enum, default_value = "kmeans")]
    pub palette_method: Method,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub vox: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Pixels per voxel face.
    #[arg(long, default_value_t = 10)]
    pub cell_size: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Stage-2 VXG1 checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run manifest supplying the grid and palette.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Occupancy threshold as density times voxel edge (default ln 2).
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GradArgs {
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: Precision,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Negates the analytic gradient of one term (negative control).
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

/// Parses and runs; returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn dispatch(cmd: Command) -> Result<i32, Failure> {
    match cmd {
        Command::Run(a) => cmd_run(&a),
        Command::Palette(a) => cmd_palette(&a),
        Command::Render(a) => cmd_render(&a),
        Command::Export(a) => cmd_export(&a),
        Command::CheckGradients(a) => cmd_check_gradients(&a),
    }
}

fn cmd_run(a: &RunArgs) -> Result<i32, Failure> {
    let base = match &a.config {
        Some(p) => RunOptions::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => RunOptions::default(),
    };
    let opts = base.merged(&a.overrides());
    opts.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let pool = Threaded::from_env();
    log::info!("running with {} worker threads", pool.threads());
    let out = run_pipeline(&opts, &pool)?;
    println!("{}", out.manifest.to_json());
    Ok(0)
}

fn cmd_palette(a: &PaletteArgs) -> Result<i32, Failure> {
    let mut pixels: Vec<Rgb> = Vec::new();
    for p in &a.images {
        let art = load_external(p, a.cell_size)?;
        pixels.extend(art.foreground_colors().copied());
    }
    let pal = extract_palette(&pixels, a.colors, a.palette_method.into(), a.seed, &PaletteOptions::default())?;
    println!("{}", serde_json::to_string(&PaletteJson::from(&pal))?);
    Ok(0)
}

fn unit_spec(dims: [usize; 3], cell_size: usize) -> GridSpec {
    GridSpec { dims, origin: Vec3::splat(0.0), voxel_edge: 1.0, cell_size, image_width: dims[0] * cell_size }
}

fn cmd_render(a: &RenderArgs) -> Result<i32, Failure> {
    if a.cell_size == 0 {
        return Err(Failure::Usage("cell size must be positive".into()));
    }
    let bytes = std::fs::read(&a.vox)?;
    let model = decode_vox(&bytes)?.into_model(PaletteStrategy::MedianCut, 0)?;
    let spec = unit_spec(model.dims, a.cell_size);
    std::fs::create_dir_all(&a.out)?;
    for v in CanonicalView::ALL {
        let cam = spec.canonical_camera(v)?;
        let (color, hit) = render_model(&model, &spec, &cam);
        write_png(&a.out.join(format!("{}.png", v.name())), cam.width, cam.height, &color, &hit)?;
    }
    Ok(0)
}

fn cmd_export(a: &ExportArgs) -> Result<i32, Failure> {
    let manifest: RunManifest = serde_json::from_slice(&std::fs::read(&a.manifest)?)?;
    let spec = manifest.grid;
    let palette = manifest.palette.to_palette()?;
    let cp = Vxg1::decode(&std::fs::read(&a.checkpoint)?)?;
    let density = cp.density_grid::<f64>(&spec)?;
    let logits = cp.logit_grid::<f64>(&spec)?;
    let t = a.threshold.unwrap_or(std::f64::consts::LN_2) / spec.voxel_edge;
    let model = quantize_model(&spec, &density, &logits, &palette, t)?;
    std::fs::create_dir_all(&a.out)?;
    write_vox(&model, &a.out.join("model.vox"))?;
    let mut w = BufWriter::new(File::create(a.out.join("model.ply"))?);
    write_ply_cubes(&model, &spec, &mut w)?;
    w.flush()?;
    println!("{} occupied voxels", model.occupied_count());
    Ok(0)
}

pub fn print_report(r: &TermReport) {
    println!(
        "{:<17} max rel error {:.3e}  tolerance {:.0e}  {}",
        r.term.name(),
        r.max_rel_error,
        r.tolerance,
        if r.passed { "ok" } else { "FAIL" }
    );
}

fn cmd_check_gradients(a: &GradArgs) -> Result<i32, Failure> {
    let fault = match &a.inject_fault {
        Some(n) => Some(Term::from_name(n).ok_or_else(|| Failure::Usage(format!("unknown term {n:?}")))?),
        None => None,
    };
    let cfg = GradCheckConfig { seed: a.seed, fault, ..Default::default() };
    let reports = match a.precision {
        Precision::F32 => check_all::<f32>(&cfg),
        Precision::F64 => check_all::<f64>(&cfg),
    };
    reports.iter().for_each(print_report);
    Ok(if reports.iter().all(|r| r.passed) { 0 } else { 1 })
}
