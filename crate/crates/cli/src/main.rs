use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use atlasforge::geometry::{canonical_viewpoints, load_mesh, CameraConfig};
use atlasforge::gridops::{assemble_grid, split_grid, GridLayout};
use atlasforge::image::{write_file, Image, Raster};
use atlasforge::masks::{binary_face_view_masks, new_region_mask};
use atlasforge::metatex::{learn_max_znormals, view_weights, MetaTexConfig, MetaTexture, DEFAULT_ALPHA};
use atlasforge::pipeline::{render_previews, run_pipeline, RunConfig, StageSelection, COVERAGE_PNG_MAX, INITIAL_GRAY};
use atlasforge::projectback::{project_back, ProjectBackConfig, ProjectBackProblem, ViewTarget};
use atlasforge::raster::{face_znormals, rasterize_buffers, RenderBuffers, TextureAtlas};

#[derive(Parser)]
#[command(name = "atlasforge", version, about = "Seven-view texture atlas reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline (or part of it) from a JSON config.
    Run(RunArgs),
    /// Learn the max-z-normal meta-texture of a mesh.
    Metatex(MetatexArgs),
    /// Write face/view masks, and new-region masks when a coverage plane is given.
    Masks(MasksArgs),
    /// Assemble six tiles into a 2x3 grid, or split a grid.
    Grids(GridsArgs),
    /// Project a front image and six view images back onto an atlas.
    Projectback(ProjectbackArgs),
    /// Render a textured mesh from several azimuths.
    Preview(PreviewArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run only this stage.
    #[arg(long, conflicts_with = "from_stage")]
    stage: Option<String>,
    /// Resume at this stage, reusing earlier outputs.
    #[arg(long)]
    from_stage: Option<String>,
    #[arg(long)]
    freeze_front: bool,
}

#[derive(Args)]
struct CameraArgs {
    /// Camera rig JSON; defaults apply when omitted.
    #[arg(long)]
    camera: Option<PathBuf>,
}

impl CameraArgs {
    fn load(&self) -> anyhow::Result<CameraConfig> {
        Ok(match &self.camera {
            Some(p) => CameraConfig::from_json(&std::fs::read(p).with_context(|| p.display().to_string())?)?,
            None => CameraConfig::default(),
        })
    }
}

#[derive(Args)]
struct MetatexArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1024)]
    resolution: usize,
    /// Sharpness of the view weights reported alongside the meta-texture.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[command(flatten)]
    camera: CameraArgs,
}

#[derive(Args)]
struct MasksArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// 16-bit coverage plane from a front-view project-back.
    #[arg(long)]
    coverage: Option<PathBuf>,
    #[command(flatten)]
    camera: CameraArgs,
}

#[derive(Args)]
struct GridsArgs {
    #[command(subcommand)]
    op: GridOp,
}

#[derive(Subcommand)]
enum GridOp {
    /// Six tiles (views 1..6 in order) into one grid.
    Assemble {
        #[arg(long, num_args = 6, required = true)]
        tiles: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// A grid into view_01.png..view_06.png.
    Split {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct ProjectbackArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// Meta-texture PNG from `metatex`.
    #[arg(long)]
    meta: PathBuf,
    /// Directory holding front.png and view_01.png..view_06.png.
    #[arg(long)]
    views_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 1024)]
    resolution: usize,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, default_value_t = 1e-4)]
    tv_weight: f64,
    #[command(flatten)]
    camera: CameraArgs,
}

#[derive(Args)]
struct PreviewArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    atlas: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [0.0, 120.0, -120.0])]
    angles: Vec<f64>,
    #[arg(long, default_value_t = 512)]
    size: usize,
    #[command(flatten)]
    camera: CameraArgs,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run(a) => cmd_run(a),
        Command::Metatex(a) => cmd_metatex(a),
        Command::Masks(a) => cmd_masks(a),
        Command::Grids(a) => cmd_grids(a),
        Command::Projectback(a) => cmd_projectback(a),
        Command::Preview(a) => cmd_preview(a),
    }
}

fn cmd_run(a: RunArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    cfg.apply_env();
    if a.freeze_front {
        cfg.freeze_front = true;
    }
    let sel = StageSelection {
        only: a.stage,
        from: a.from_stage,
    };
    let manifest = run_pipeline(&cfg, &sel)?;
    for s in &manifest.stages {
        println!("{:<9} {:>8.2}s", s.name, s.seconds);
    }
    println!("{} files in {}", manifest.files.len(), cfg.output_dir.display());
    Ok(())
}

fn all_buffers(mesh: &atlasforge::geometry::Mesh, cam: &CameraConfig) -> anyhow::Result<Vec<RenderBuffers>> {
    canonical_viewpoints(cam)?
        .iter()
        .map(|v| Ok(rasterize_buffers(mesh, v)?))
        .collect()
}

fn cmd_metatex(a: MetatexArgs) -> anyhow::Result<()> {
    let mesh = load_mesh(&a.mesh)?;
    let cam = a.camera.load()?;
    let views = canonical_viewpoints(&cam)?;
    let cfg = MetaTexConfig {
        resolution: a.resolution,
        ..Default::default()
    };
    let (meta, report) = learn_max_znormals(&mesh, &views, &cfg)?;
    write_file(&a.out, &meta.to_png16()?)?;
    let buffers = all_buffers(&mesh, &cam)?;
    let weights = view_weights(&meta, &buffers, a.alpha)?;
    let mean_weight: Vec<f64> = buffers
        .iter()
        .zip(&weights.weights)
        .map(|(b, w)| {
            let n = b.foreground_count().max(1) as f64;
            b.foreground().map(|i| w.data()[i]).sum::<f64>() / n
        })
        .collect();
    let out = serde_json::json!({ "report": report, "alpha": a.alpha, "mean_view_weight": mean_weight });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_masks(a: MasksArgs) -> anyhow::Result<()> {
    let mesh = load_mesh(&a.mesh)?;
    let cam = a.camera.load()?;
    let views = canonical_viewpoints(&cam)?;
    let buffers = all_buffers(&mesh, &cam)?;
    let zn = views
        .iter()
        .map(|v| face_znormals(&mesh, v))
        .collect::<Result<Vec<_>, _>>()?;
    let fi: Vec<Raster<i32>> = buffers.iter().map(|b| b.face_index.clone()).collect();
    let fv = binary_face_view_masks(&fi, &zn)?;
    for (i, m) in fv.masks.iter().enumerate() {
        write_file(&a.out_dir.join(format!("face_view_{i}.png")), &m.to_image().to_png8()?)?;
    }
    if let Some(cov) = &a.coverage {
        let img = Image::load_png(cov)?;
        let coverage = Raster::from_vec(
            img.width(),
            img.height(),
            img.data().iter().map(|v| v * COVERAGE_PNG_MAX).collect(),
        )?;
        for (i, b) in buffers.iter().enumerate().skip(1) {
            let m = new_region_mask(b, &coverage, 8)?;
            write_file(&a.out_dir.join(format!("new_region_{i}.png")), &m.image.mask.to_image().to_png8()?)?;
        }
    }
    Ok(())
}

fn cmd_grids(a: GridsArgs) -> anyhow::Result<()> {
    match a.op {
        GridOp::Assemble { tiles, out } => {
            let imgs = tiles.iter().map(|p| Image::load_png(p)).collect::<Result<Vec<_>, _>>()?;
            let layout = GridLayout::new(imgs[0].width());
            write_file(&out, &assemble_grid(&imgs, &layout)?.to_png8()?)?;
        }
        GridOp::Split { grid, out_dir } => {
            let g = Image::load_png(&grid)?;
            if g.width() % 3 != 0 {
                bail!("grid width {} is not a multiple of 3", g.width());
            }
            let layout = GridLayout::new(g.width() / 3);
            for (k, t) in split_grid(&g, &layout)?.iter().enumerate() {
                write_file(&out_dir.join(format!("view_{:02}.png", k + 1)), &t.to_png8()?)?;
            }
        }
    }
    Ok(())
}

fn rgb(path: &Path) -> anyhow::Result<Image> {
    let img = Image::load_png(path)?;
    Ok(if img.channels() == 3 { img } else { img.with_channels(3) })
}

fn cmd_projectback(a: ProjectbackArgs) -> anyhow::Result<()> {
    let mesh = load_mesh(&a.mesh)?;
    let cam = a.camera.load()?;
    let buffers = all_buffers(&mesh, &cam)?;
    let meta = MetaTexture::from_png(&std::fs::read(&a.meta).with_context(|| a.meta.display().to_string())?)?;
    let weights = view_weights(&meta, &buffers, a.alpha)?;
    let mut views = Vec::new();
    for (i, (b, w)) in buffers.into_iter().zip(weights.weights).enumerate() {
        let name = if i == 0 { "front.png".to_string() } else { format!("view_{i:02}.png") };
        views.push(ViewTarget {
            buffers: b,
            target: rgb(&a.views_dir.join(name))?,
            weights: w,
        });
    }
    let problem = ProjectBackProblem {
        views,
        initial: TextureAtlas::filled(a.resolution, &[INITIAL_GRAY; 3]),
        config: ProjectBackConfig {
            iterations: a.iterations,
            tv_weight: a.tv_weight,
            ..Default::default()
        },
        frozen: None,
    };
    let res = project_back(&problem)?;
    write_file(&a.out_dir.join("atlas.png"), &res.atlas.to_png8()?)?;
    write_file(
        &a.out_dir.join("coverage.png"),
        &res.coverage.to_image().to_png16(0.0, COVERAGE_PNG_MAX)?,
    )?;
    let report = serde_json::to_vec_pretty(&res.report)?;
    write_file(&a.out_dir.join("report.json"), &report)?;
    println!("{}", String::from_utf8_lossy(&report));
    Ok(())
}

fn cmd_preview(a: PreviewArgs) -> anyhow::Result<()> {
    let mesh = load_mesh(&a.mesh)?;
    let atlas = TextureAtlas::from_image(rgb(&a.atlas)?)?;
    let imgs = render_previews(&mesh, &atlas, &a.angles, &a.camera.load()?, a.size)?;
    for (k, img) in imgs.iter().enumerate() {
        write_file(&a.out_dir.join(format!("preview_{k:02}.png")), &img.to_png8()?)?;
    }
    Ok(())
}
