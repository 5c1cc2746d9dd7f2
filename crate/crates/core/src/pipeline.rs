//! End-to-end run: eight stages, each reading its inputs from and writing
//! its outputs to a run directory.
//!
//! | stage      | reads                                   | writes                                   |
//! |------------|-----------------------------------------|------------------------------------------|
//! | `metatex`  | mesh                                    | `N.png`                                  |
//! | `front`    | mesh                                    | `depth_0.png`, `front.png`               |
//! | `phase1`   | `front.png`                             | `atlas_phase1.png`, `coverage_phase1.png`|
//! | `views`    | phase-1 atlas and coverage              | `depth_i.png`, `mask_i.png`, `render_i.png` |
//! | `grids`    | per-view files                          | `*_grid.png`, `mask_grid_latent.png`     |
//! | `generate` | grids, `front.png`                      | `grid_generated.png`, `grid.png`         |
//! | `split`    | `grid.png`                              | `view_01.png`..`view_06.png`             |
//! | `phase2`   | `N.png`, front and view images          | `atlas.png`, `coverage.png`, previews    |
//!
//! Because every stage starts from files, resuming at stage k gives the
//! same bytes as a fresh run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::genclient::{FixtureBackend, GenRequest, Generator, HttpBackend, HttpStepDenoiser};
use crate::geometry::{canonical_viewpoints, load_mesh, CameraConfig, Mesh, Viewpoint};
use crate::gridops::{assemble_grid, assemble_mask_grid, blended_generation, split_grid, GridLayout, LatentCodec, NoiseSchedule};
use crate::image::{write_file, Image, Raster};
use crate::masks::{downsample_mask, keep_refine_generate, new_region_mask, RegionThresholds, ZNormalCache};
use crate::metatex::{learn_max_znormals, view_weights, MetaTexConfig, MetaTexture, DEFAULT_ALPHA};
use crate::projectback::{project_back, ProjectBackConfig, ProjectBackProblem, ViewTarget};
use crate::raster::{rasterize_buffers, render_from_buffers, render_textured, RenderBuffers, TextureAtlas, DEFAULT_BACKGROUND};

pub const STAGES: [&str; 8] = ["metatex", "front", "phase1", "views", "grids", "generate", "split", "phase2"];

pub const BACKEND_URL_ENV: &str = "ATLASFORGE_BACKEND_URL";

/// Upper end of the 16-bit coverage encoding; larger weights clamp.
pub const COVERAGE_PNG_MAX: f64 = 4.0;

pub const INITIAL_GRAY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Fixture {
        dir: PathBuf,
    },
    Http {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_s: f64,
        #[serde(default = "default_retries")]
        retries: u32,
        /// Send intermediate latents for in-loop blending instead of
        /// compositing the finished grid.
        #[serde(default)]
        stepwise: bool,
    },
}

fn default_timeout() -> f64 {
    120.0
}

fn default_retries() -> u32 {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendMask {
    /// Object mask minus the texels learned from the front view.
    NewRegion,
    /// Refine or generate regions against the z-normal cache.
    KeepRefineGenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: PathBuf,
    pub prompt: String,
    pub alpha: f64,
    pub atlas_resolution: usize,
    pub camera: CameraConfig,
    pub backend: BackendConfig,
    pub seed: u64,
    /// Denoising steps requested from the generator.
    pub steps: u32,
    /// Length of the forward schedule used for stepwise blending.
    pub schedule_steps: usize,
    pub output_dir: PathBuf,
    /// Stages to run; `None` runs all of them.
    pub stages: Option<Vec<String>>,
    pub blend_mask: BlendMask,
    pub thresholds: RegionThresholds,
    pub codec: LatentCodec,
    pub freeze_front: bool,
    pub metatex: MetaTexConfig,
    pub phase1: ProjectBackConfig,
    pub phase2: ProjectBackConfig,
    pub preview_angles: Vec<f64>,
    pub preview_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mesh: PathBuf::new(),
            prompt: String::new(),
            alpha: DEFAULT_ALPHA,
            atlas_resolution: 1024,
            camera: CameraConfig::default(),
            backend: BackendConfig::Fixture { dir: PathBuf::from("fixtures") },
            seed: 0,
            steps: 36,
            schedule_steps: 36,
            output_dir: PathBuf::from("run"),
            stages: None,
            blend_mask: BlendMask::NewRegion,
            thresholds: RegionThresholds::default(),
            codec: LatentCodec::default(),
            freeze_front: false,
            metatex: MetaTexConfig::default(),
            phase1: ProjectBackConfig::default(),
            phase2: ProjectBackConfig::default(),
            preview_angles: vec![0.0, 120.0, -120.0],
            preview_size: 512,
        }
    }
}

impl RunConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&bytes)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.mesh);
        fix(&mut cfg.output_dir);
        if let BackendConfig::Fixture { dir } = &mut cfg.backend {
            fix(dir);
        }
        Ok(cfg)
    }

    /// Point the backend at `$ATLASFORGE_BACKEND_URL` when it is set.
    pub fn apply_env(&mut self) {
        if let Ok(url) = std::env::var(BACKEND_URL_ENV) {
            if !url.is_empty() {
                let stepwise = matches!(self.backend, BackendConfig::Http { stepwise: true, .. });
                self.backend = BackendConfig::Http {
                    url,
                    timeout_s: default_timeout(),
                    retries: default_retries(),
                    stepwise,
                };
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.mesh.as_os_str().is_empty() {
            return bad("mesh path is required".into());
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.atlas_resolution == 0 {
            return bad("atlas_resolution must be positive".into());
        }
        self.camera.validate()?;
        let f = self.codec.factor;
        if f == 0 || self.camera.tile_size % f != 0 {
            return bad(format!(
                "tile_size {} not divisible by latent factor {f}",
                self.camera.tile_size
            ));
        }
        if self.schedule_steps == 0 {
            return bad("schedule_steps must be positive".into());
        }
        if self.preview_size == 0 {
            return bad("preview_size must be positive".into());
        }
        if let Some(st) = &self.stages {
            for s in st {
                stage_index(s)?;
            }
        }
        if let BackendConfig::Http { timeout_s, .. } = &self.backend {
            if !(*timeout_s > 0.0) {
                return bad("timeout_s must be positive".into());
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> GridLayout {
        GridLayout::new(self.camera.tile_size)
    }
}

pub fn stage_index(name: &str) -> Result<usize> {
    STAGES
        .iter()
        .position(|s| *s == name)
        .ok_or_else(|| Error::Config(format!("unknown stage {name:?}; expected one of {STAGES:?}")))
}

/// Which stages a particular invocation executes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageSelection {
    /// Run exactly this stage.
    pub only: Option<String>,
    /// Run this stage and every later one.
    pub from: Option<String>,
}

impl StageSelection {
    fn mask(&self, cfg: &RunConfig) -> Result<[bool; 8]> {
        let mut on = [true; 8];
        if let Some(list) = &cfg.stages {
            on = [false; 8];
            for s in list {
                on[stage_index(s)?] = true;
            }
        }
        if let Some(s) = &self.only {
            let k = stage_index(s)?;
            on = [false; 8];
            on[k] = true;
        }
        if let Some(s) = &self.from {
            let k = stage_index(s)?;
            on.iter_mut().take(k).for_each(|b| *b = false);
        }
        Ok(on)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub ok: bool,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null", default)]
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
    /// Relative path → sha256 of every file written into the run directory.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(dir: &Path) -> Result<Option<Manifest>> {
        let path = dir.join(Self::FILE);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(serde_json::from_slice(&bytes)?))
    }

    pub fn completed(&self) -> Vec<&str> {
        self.stages.iter().filter(|s| s.ok).map(|s| s.name.as_str()).collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

struct Run<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    manifest: Manifest,
    mesh: Option<Mesh>,
    views: Vec<Viewpoint>,
}

impl<'a> Run<'a> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_file(&self.dir.join(name), bytes)?;
        self.manifest.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn read(&self, name: &str) -> Result<Vec<u8>> {
        let path = self.dir.join(name);
        std::fs::read(&path).map_err(|e| Error::io(&path, e))
    }

    fn png(&self, name: &str) -> Result<Image> {
        Image::from_png(&self.read(name)?)
    }

    fn mask(&self, name: &str) -> Result<Raster<bool>> {
        let img = self.png(name)?;
        Raster::from_vec(
            img.width(),
            img.height(),
            (0..img.width() * img.height()).map(|i| img.at(i)[0] > 0.5).collect(),
        )
    }

    fn rgb(&self, name: &str) -> Result<Image> {
        let img = self.png(name)?;
        Ok(if img.channels() == 3 { img } else { img.with_channels(3) })
    }

    fn mesh(&mut self) -> Result<&Mesh> {
        if self.mesh.is_none() {
            self.mesh = Some(load_mesh(&self.cfg.mesh)?);
        }
        Ok(self.mesh.as_ref().unwrap())
    }

    fn buffers(&mut self, view: usize) -> Result<RenderBuffers> {
        let v = self.views[view];
        rasterize_buffers(self.mesh()?, &v)
    }

    fn coverage_phase1(&self) -> Result<Raster<f64>> {
        let img = self.png("coverage_phase1.png")?;
        Raster::from_vec(
            img.width(),
            img.height(),
            img.data().iter().map(|v| v * COVERAGE_PNG_MAX).collect(),
        )
    }

    fn save_manifest(&self) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(&self.manifest)?;
        write_file(&self.dir.join(Manifest::FILE), &bytes)
    }

    fn stage(&mut self, name: &str) -> Result<serde_json::Value> {
        match name {
            "metatex" => self.stage_metatex(),
            "front" => self.stage_front(),
            "phase1" => self.stage_phase1(),
            "views" => self.stage_views(),
            "grids" => self.stage_grids(),
            "generate" => self.stage_generate(),
            "split" => self.stage_split(),
            "phase2" => self.stage_phase2(),
            _ => unreachable!("validated stage name"),
        }
    }

    fn stage_metatex(&mut self) -> Result<serde_json::Value> {
        let cfg = MetaTexConfig {
            resolution: self.cfg.atlas_resolution,
            ..self.cfg.metatex
        };
        let views = self.views.clone();
        let (meta, report) = learn_max_znormals(self.mesh()?, &views, &cfg)?;
        self.write("N.png", &meta.to_png16()?)?;
        Ok(serde_json::to_value(report)?)
    }

    fn stage_front(&mut self) -> Result<serde_json::Value> {
        let b = self.buffers(0)?;
        let depth = b.depth.to_image().to_png16(0.0, 1.0)?;
        self.write("depth_0.png", &depth)?;
        let backend = make_backend(self.cfg)?;
        let req = GenRequest::front(&self.cfg.prompt, depth, self.cfg.seed, self.cfg.steps);
        let resp = backend.fetch_front(&req)?;
        self.write("front.png", &resp.image_png)?;
        Ok(serde_json::to_value(resp.metadata)?)
    }

    fn stage_phase1(&mut self) -> Result<serde_json::Value> {
        let b = self.buffers(0)?;
        let target = self.rgb("front.png")?;
        let weights = b.object_mask.map(|&m| if m { 1.0 } else { 0.0 });
        let problem = ProjectBackProblem {
            views: vec![ViewTarget {
                buffers: b,
                target,
                weights,
            }],
            initial: TextureAtlas::filled(self.cfg.atlas_resolution, &[INITIAL_GRAY; 3]),
            config: self.cfg.phase1,
            frozen: None,
        };
        let res = project_back(&problem)?;
        self.write("atlas_phase1.png", &res.atlas.to_png8()?)?;
        self.write("coverage_phase1.png", &res.coverage.to_image().to_png16(0.0, COVERAGE_PNG_MAX)?)?;
        Ok(serde_json::to_value(res.report)?)
    }

    fn stage_views(&mut self) -> Result<serde_json::Value> {
        let atlas = TextureAtlas::from_image(self.rgb("atlas_phase1.png")?)?;
        let coverage = self.coverage_phase1()?;
        let mut cache = ZNormalCache::new(self.cfg.atlas_resolution);
        if self.cfg.blend_mask == BlendMask::KeepRefineGenerate {
            let b0 = self.buffers(0)?;
            cache.update(&b0);
        }
        let mut fractions = Vec::new();
        for i in 1..=6 {
            let b = self.buffers(i)?;
            let mask = match self.cfg.blend_mask {
                BlendMask::NewRegion => new_region_mask(&b, &coverage, self.cfg.codec.factor)?.image.mask,
                BlendMask::KeepRefineGenerate => {
                    let cached = cache.project(&b);
                    let krg = keep_refine_generate(&b.object_mask, &b.znormal, &cached, &self.cfg.thresholds)?;
                    cache.update(&b);
                    let mut m = krg.generate.mask;
                    for (a, r) in m.data_mut().iter_mut().zip(krg.refine.mask.data()) {
                        *a |= *r;
                    }
                    m
                }
            };
            fractions.push(mask.count() as f64 / b.foreground_count().max(1) as f64);
            self.write(&format!("depth_{i}.png"), &b.depth.to_image().to_png16(0.0, 1.0)?)?;
            self.write(&format!("mask_{i}.png"), &mask.to_image().to_png8()?)?;
            let render = render_from_buffers(&b, &atlas, DEFAULT_BACKGROUND);
            self.write(&format!("render_{i}.png"), &render.to_png8()?)?;
        }
        Ok(serde_json::json!({ "generate_fraction": fractions }))
    }

    fn stage_grids(&mut self) -> Result<serde_json::Value> {
        let layout = self.cfg.layout();
        let mut depth = Vec::new();
        let mut masks = Vec::new();
        let mut renders = Vec::new();
        for i in 1..=6 {
            depth.push(self.png(&format!("depth_{i}.png"))?);
            masks.push(self.mask(&format!("mask_{i}.png"))?);
            renders.push(self.rgb(&format!("render_{i}.png"))?);
        }
        let depth_grid = assemble_grid(&depth, &layout)?;
        let mask_grid = assemble_mask_grid(&masks, &layout)?;
        let latent = downsample_mask(&mask_grid, self.cfg.codec.factor)?;
        self.write("depth_grid.png", &depth_grid.to_png16(0.0, 1.0)?)?;
        self.write("mask_grid.png", &mask_grid.to_image().to_png8()?)?;
        self.write("mask_grid_latent.png", &latent.to_image().to_png8()?)?;
        self.write("render_grid.png", &assemble_grid(&renders, &layout)?.to_png8()?)?;
        Ok(serde_json::json!({ "latent_mask_fraction": latent.count() as f64 / latent.len() as f64 }))
    }

    fn stage_generate(&mut self) -> Result<serde_json::Value> {
        let depth = self.read("depth_grid.png")?;
        let condition = self.read("front.png")?;
        let render = self.rgb("render_grid.png")?;
        let m_lat = self.mask("mask_grid_latent.png")?;
        let codec = self.cfg.codec;

        let grid = match &self.cfg.backend {
            BackendConfig::Http { stepwise: true, .. } => {
                let backend = http_backend(self.cfg)?;
                let mut denoiser = HttpStepDenoiser {
                    backend: &backend,
                    prompt: self.cfg.prompt.clone(),
                    seed: self.cfg.seed,
                    depth_png: depth,
                    condition_png: condition,
                };
                let z_gt = codec.encode(&render)?;
                let schedule = NoiseSchedule::cosine(self.cfg.schedule_steps);
                let z = blended_generation(&mut denoiser, &z_gt, &m_lat, &schedule, self.cfg.seed)?;
                codec.decode(&z, 3)
            }
            _ => {
                let backend = make_backend(self.cfg)?;
                let req = GenRequest::grid(&self.cfg.prompt, depth, condition, self.cfg.seed, self.cfg.steps);
                let resp = backend.fetch_grid(&req)?;
                self.write("grid_generated.png", &resp.image_png)?;
                let generated = Image::from_png(&resp.image_png)?;
                let generated = if generated.channels() == 3 { generated } else { generated.with_channels(3) };
                composite(&generated, &render, &m_lat, codec.factor)?
            }
        };
        self.write("grid.png", &grid.to_png8()?)?;
        Ok(serde_json::Value::Null)
    }

    fn stage_split(&mut self) -> Result<serde_json::Value> {
        let grid = self.rgb("grid.png")?;
        let tiles = split_grid(&grid, &self.cfg.layout())?;
        for (k, t) in tiles.iter().enumerate() {
            self.write(&format!("view_{:02}.png", k + 1), &t.to_png8()?)?;
        }
        Ok(serde_json::Value::Null)
    }

    fn stage_phase2(&mut self) -> Result<serde_json::Value> {
        let meta = MetaTexture::from_png(&self.read("N.png")?)?;
        let mut buffers = Vec::with_capacity(7);
        for i in 0..7 {
            buffers.push(self.buffers(i)?);
        }
        let weights = view_weights(&meta, &buffers, self.cfg.alpha)?;
        let mut views = Vec::with_capacity(7);
        for (i, (b, w)) in buffers.into_iter().zip(weights.weights).enumerate() {
            let target = if i == 0 {
                self.rgb("front.png")?
            } else {
                self.rgb(&format!("view_{i:02}.png"))?
            };
            views.push(ViewTarget {
                buffers: b,
                target,
                weights: w,
            });
        }
        let frozen = if self.cfg.freeze_front {
            Some(self.coverage_phase1()?.map(|&c| c > crate::masks::LEARNED_THRESHOLD))
        } else {
            None
        };
        let problem = ProjectBackProblem {
            views,
            initial: TextureAtlas::from_image(self.rgb("atlas_phase1.png")?)?,
            config: self.cfg.phase2,
            frozen,
        };
        let res = project_back(&problem)?;
        self.write("atlas.png", &res.atlas.to_png8()?)?;
        self.write("coverage.png", &res.coverage.to_image().to_png16(0.0, COVERAGE_PNG_MAX)?)?;
        let atlas = TextureAtlas::from_image(self.rgb("atlas.png")?)?;
        let cfg = self.cfg;
        let previews = render_previews(self.mesh()?, &atlas, &cfg.preview_angles, &cfg.camera, cfg.preview_size)?;
        for (k, p) in previews.iter().enumerate() {
            self.write(&format!("preview_{k:02}.png"), &p.to_png8()?)?;
        }
        Ok(serde_json::json!({ "report": res.report, "preview_angles": self.cfg.preview_angles }))
    }
}

/// Generated pixels where the (nearest-upsampled) latent mask is set, the
/// ground-truth render elsewhere.
pub fn composite(generated: &Image, render: &Image, mask_latent: &Raster<bool>, factor: usize) -> Result<Image> {
    if generated.dims() != render.dims() {
        return Err(Error::Shape(format!(
            "generated grid {:?} does not match render {:?}",
            generated.dims(),
            render.dims()
        )));
    }
    if mask_latent.width() * factor != render.width() || mask_latent.height() * factor != render.height() {
        return Err(Error::Shape("latent mask does not match grid".into()));
    }
    let mut out = render.clone();
    for y in 0..render.height() {
        for x in 0..render.width() {
            if *mask_latent.get(x / factor, y / factor) {
                out.pixel_mut(x, y).copy_from_slice(generated.pixel(x, y));
            }
        }
    }
    Ok(out)
}

fn http_backend(cfg: &RunConfig) -> Result<HttpBackend> {
    match &cfg.backend {
        BackendConfig::Http { url, timeout_s, retries, .. } => {
            HttpBackend::new(url, Duration::from_secs_f64(*timeout_s), *retries)
        }
        BackendConfig::Fixture { .. } => Err(Error::Config("stepwise blending needs an HTTP backend".into())),
    }
}

pub fn make_backend(cfg: &RunConfig) -> Result<Box<dyn Generator>> {
    Ok(match &cfg.backend {
        BackendConfig::Fixture { dir } => {
            if !dir.is_dir() {
                return Err(Error::Config(format!("fixture directory {} not found", dir.display())));
            }
            Box::new(FixtureBackend::new(dir.clone(), cfg.layout()))
        }
        BackendConfig::Http { .. } => Box::new(http_backend(cfg)?),
    })
}

/// One render per azimuth at elevation 0 on the configured camera rig.
pub fn render_previews(
    mesh: &Mesh,
    atlas: &TextureAtlas,
    angles: &[f64],
    camera: &CameraConfig,
    size: usize,
) -> Result<Vec<Image>> {
    angles
        .iter()
        .map(|&az| {
            let v = Viewpoint::new(0, az, 0.0, camera, size)?;
            render_textured(mesh, &v, atlas, DEFAULT_BACKGROUND)
        })
        .collect()
}

/// Execute the selected stages in order. On failure the manifest records
/// the failed stage before the error is returned.
pub fn run_pipeline(cfg: &RunConfig, selection: &StageSelection) -> Result<Manifest> {
    cfg.validate()?;
    let on = selection.mask(cfg)?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    // keep records and hashes of stages that are not re-run
    let mut manifest = Manifest {
        config: cfg.clone(),
        stages: Vec::new(),
        files: BTreeMap::new(),
    };
    if on.iter().any(|b| !b) {
        if let Some(prev) = Manifest::load(&dir)? {
            manifest.files = prev.files;
            manifest.stages = prev
                .stages
                .into_iter()
                .filter(|s| stage_index(&s.name).map(|k| !on[k]).unwrap_or(false))
                .collect();
        }
    }

    let mut run = Run {
        cfg,
        dir,
        manifest,
        mesh: None,
        views: canonical_viewpoints(&cfg.camera)?,
    };
    for (k, name) in STAGES.iter().enumerate() {
        if !on[k] {
            continue;
        }
        log::info!("stage {name}");
        let start = Instant::now();
        let out = run.stage(name);
        let seconds = start.elapsed().as_secs_f64();
        run.manifest.stages.retain(|s| s.name != *name);
        match out {
            Ok(details) => {
                run.manifest.stages.push(StageRecord {
                    name: name.to_string(),
                    ok: true,
                    seconds,
                    error: None,
                    details,
                });
                run.manifest.stages.sort_by_key(|s| stage_index(&s.name).unwrap_or(usize::MAX));
                run.save_manifest()?;
            }
            Err(e) => {
                run.manifest.stages.push(StageRecord {
                    name: name.to_string(),
                    ok: false,
                    seconds,
                    error: Some(e.to_string()),
                    details: serde_json::Value::Null,
                });
                run.save_manifest()?;
                return Err(e);
            }
        }
    }
    Ok(run.manifest)
}
