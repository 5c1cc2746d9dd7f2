//! 2×3 view grids, the forward noise process, a stand-in latent codec and
//! masked latent blending.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Raster};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
    pub tile_size: usize,
    /// View id (1..=6) placed in each cell, row-major.
    pub order: [usize; 6],
}

impl Default for GridLayout {
    fn default() -> Self {
        Self::new(320)
    }
}

impl GridLayout {
    pub fn new(tile_size: usize) -> Self {
        Self {
            rows: 2,
            cols: 3,
            tile_size,
            order: [1, 2, 3, 4, 5, 6],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows * self.cols != 6 {
            return Err(Error::Config(format!("{}x{} grid does not hold 6 tiles", self.rows, self.cols)));
        }
        let mut seen = [false; 6];
        for &v in &self.order {
            if !(1..=6).contains(&v) || seen[v - 1] {
                return Err(Error::Config(format!("grid order {:?} is not a permutation of 1..=6", self.order)));
            }
            seen[v - 1] = true;
        }
        Ok(())
    }

    /// (width, height) of the assembled grid in pixels.
    pub fn grid_size(&self) -> (usize, usize) {
        (self.cols * self.tile_size, self.rows * self.tile_size)
    }

    fn cell_origin(&self, cell: usize) -> (usize, usize) {
        ((cell % self.cols) * self.tile_size, (cell / self.cols) * self.tile_size)
    }
}

/// Place `tiles[k]` (view `k + 1`) into its cell. No resampling.
pub fn assemble_grid(tiles: &[Image], layout: &GridLayout) -> Result<Image> {
    layout.validate()?;
    if tiles.len() != 6 {
        return Err(Error::Shape(format!("expected 6 tiles, got {}", tiles.len())));
    }
    let (s, c) = (layout.tile_size, tiles[0].channels());
    for (k, t) in tiles.iter().enumerate() {
        if t.width() != s || t.height() != s || t.channels() != c {
            return Err(Error::Shape(format!(
                "tile {} (view {}) is {}x{}x{}, expected {s}x{s}x{c}",
                k,
                k + 1,
                t.width(),
                t.height(),
                t.channels()
            )));
        }
    }
    let (w, h) = layout.grid_size();
    let mut grid = Image::new(w, h, c);
    for (cell, &view) in layout.order.iter().enumerate() {
        let (x, y) = layout.cell_origin(cell);
        grid.paste(&tiles[view - 1], x, y);
    }
    Ok(grid)
}

/// Inverse of [`assemble_grid`]; tiles come back indexed by view (`[0]` is v1).
pub fn split_grid(grid: &Image, layout: &GridLayout) -> Result<Vec<Image>> {
    layout.validate()?;
    let s = check_grid_dims(grid.width(), grid.height(), layout)?;
    let mut tiles = vec![Image::new(0, 0, grid.channels()); 6];
    for (cell, &view) in layout.order.iter().enumerate() {
        let (x, y) = layout.cell_origin(cell);
        tiles[view - 1] = grid.crop(x, y, s, s);
    }
    Ok(tiles)
}

/// Mask counterpart of [`assemble_grid`].
pub fn assemble_mask_grid(tiles: &[Raster<bool>], layout: &GridLayout) -> Result<Raster<bool>> {
    layout.validate()?;
    if tiles.len() != 6 {
        return Err(Error::Shape(format!("expected 6 tiles, got {}", tiles.len())));
    }
    let s = tiles[0].width();
    for (k, t) in tiles.iter().enumerate() {
        if t.width() != s || t.height() != s {
            return Err(Error::Shape(format!("mask tile {k} is {}x{}", t.width(), t.height())));
        }
    }
    let mut grid = Raster::filled(layout.cols * s, layout.rows * s, false);
    for (cell, &view) in layout.order.iter().enumerate() {
        grid.paste(&tiles[view - 1], (cell % layout.cols) * s, (cell / layout.cols) * s);
    }
    Ok(grid)
}

fn check_grid_dims(width: usize, height: usize, layout: &GridLayout) -> Result<usize> {
    if width % layout.cols != 0 || height % layout.rows != 0 || width / layout.cols != height / layout.rows {
        return Err(Error::Shape(format!(
            "{width}x{height} grid does not divide into {}x{} square tiles",
            layout.rows, layout.cols
        )));
    }
    Ok(width / layout.cols)
}

/// Cumulative signal coefficients of the forward process, index 0..=steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine schedule with offset 0.008; per-step betas capped at 0.999.
    pub fn cosine(steps: usize) -> Self {
        assert!(steps > 0);
        let s = 0.008;
        let f = |t: usize| {
            let x = (t as f64 / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        for t in 1..=steps {
            let beta = (1.0 - f(t) / f(t - 1)).clamp(0.0, 0.999);
            let prev = alpha_bar[t - 1];
            alpha_bar.push(prev * (1.0 - beta));
        }
        Self { steps, alpha_bar }
    }

    pub fn signal(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::cosine(36)
    }
}

/// Latent raster at timestep `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    pub data: Image,
    pub t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentCodec {
    pub factor: usize,
    pub channels: usize,
}

impl Default for LatentCodec {
    fn default() -> Self {
        Self { factor: 8, channels: 4 }
    }
}

impl LatentCodec {
    /// Block-average each channel by `factor`, zero-pad to `channels`.
    pub fn encode(&self, image: &Image) -> Result<LatentGrid> {
        let f = self.factor;
        if f == 0 || image.width() % f != 0 || image.height() % f != 0 {
            return Err(Error::Shape(format!(
                "{}x{} image not divisible by latent factor {f}",
                image.width(),
                image.height()
            )));
        }
        if image.channels() > self.channels {
            return Err(Error::Shape(format!(
                "{} image channels exceed {} latent channels",
                image.channels(),
                self.channels
            )));
        }
        let (w, h, c) = (image.width() / f, image.height() / f, image.channels());
        let mut out = Image::new(w, h, self.channels);
        let n = (f * f) as f64;
        for y in 0..h {
            for x in 0..w {
                let first = image.pixel(x * f, y * f).to_vec();
                let mut acc = vec![0.0; c];
                for dy in 0..f {
                    for dx in 0..f {
                        let p = image.pixel(x * f + dx, y * f + dy);
                        for k in 0..c {
                            acc[k] += p[k] - first[k];
                        }
                    }
                }
                let dst = out.pixel_mut(x, y);
                for k in 0..c {
                    // shifted mean: exact for constant blocks
                    dst[k] = first[k] + acc[k] / n;
                }
            }
        }
        Ok(LatentGrid { data: out, t: 0 })
    }

    /// Bilinear upsample by `factor`, keeping the first `channels` channels.
    pub fn decode(&self, latent: &LatentGrid, channels: usize) -> Image {
        let z = &latent.data;
        let f = self.factor;
        let (w, h) = (z.width() * f, z.height() * f);
        let mut out = Image::new(w, h, channels);
        let keep = channels.min(z.channels());
        let mut buf = vec![0.0; z.channels()];
        for y in 0..h {
            for x in 0..w {
                // pixel center in latent texel space
                let u = (x as f64 + 0.5) / w as f64;
                let v = 1.0 - (y as f64 + 0.5) / h as f64;
                crate::raster::sample_bilinear(z, [u, v], &mut buf);
                out.pixel_mut(x, y)[..keep].copy_from_slice(&buf[..keep]);
            }
        }
        out
    }
}

/// Standard-normal field with the shape of `like`, from a fixed seed.
pub fn gaussian_noise(width: usize, height: usize, channels: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height * channels)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Image::from_vec(width, height, channels, data).expect("sized by construction")
}

/// `z_t = sqrt(alpha_bar[t]) z0 + sqrt(1 - alpha_bar[t]) noise`.
pub fn add_noise(z0: &LatentGrid, t: usize, noise: &Image, schedule: &NoiseSchedule) -> Result<LatentGrid> {
    if t > schedule.steps {
        return Err(Error::Shape(format!("timestep {t} beyond {} steps", schedule.steps)));
    }
    if noise.dims() != z0.data.dims() {
        return Err(Error::Shape(format!(
            "noise {:?} does not match latent {:?}",
            noise.dims(),
            z0.data.dims()
        )));
    }
    let a = schedule.alpha_bar[t];
    let (s, n) = (a.sqrt(), (1.0 - a).sqrt());
    let mut out = z0.data.clone();
    for (o, e) in out.data_mut().iter_mut().zip(noise.data()) {
        *o = s * *o + n * e;
    }
    Ok(LatentGrid { data: out, t })
}

/// `z * m + z_gt * (1 - m)` with a binary mask: true keeps the generated
/// latent, false pins the ground truth.
pub fn blend_latents(z: &LatentGrid, z_gt_noised: &LatentGrid, mask: &Raster<bool>) -> Result<LatentGrid> {
    if z.t != z_gt_noised.t {
        return Err(Error::TimestepMismatch {
            left: z.t,
            right: z_gt_noised.t,
        });
    }
    if z.data.dims() != z_gt_noised.data.dims() {
        return Err(Error::Shape("latent shapes differ".into()));
    }
    if mask.width() != z.data.width() || mask.height() != z.data.height() {
        return Err(Error::Shape(format!(
            "mask {}x{} does not match latent {}x{}",
            mask.width(),
            mask.height(),
            z.data.width(),
            z.data.height()
        )));
    }
    let mut out = z_gt_noised.data.clone();
    for (i, &m) in mask.data().iter().enumerate() {
        if m {
            out.at_mut(i).copy_from_slice(z.data.at(i));
        }
    }
    Ok(LatentGrid { data: out, t: z.t })
}

/// One reverse step of an external generator, as seen by the blending loop.
pub trait StepDenoiser {
    fn denoise(&mut self, z: &LatentGrid, t_next: usize) -> Result<LatentGrid>;
}

/// Run the masked generation loop from pure noise: at each step the
/// generator proposes `z_{t-1}`, and every latent pixel outside `mask` is
/// replaced by the ground truth noised to `t-1`.
pub fn blended_generation(
    denoiser: &mut dyn StepDenoiser,
    z_gt: &LatentGrid,
    mask: &Raster<bool>,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<LatentGrid> {
    let (w, h, c) = z_gt.data.dims();
    let mut z = LatentGrid {
        data: gaussian_noise(w, h, c, seed),
        t: schedule.steps,
    };
    for t in (1..=schedule.steps).rev() {
        let proposed = denoiser.denoise(&z, t - 1)?;
        if proposed.t != t - 1 || proposed.data.dims() != z_gt.data.dims() {
            return Err(Error::Protocol(format!(
                "denoiser returned step {} with shape {:?}",
                proposed.t,
                proposed.data.dims()
            )));
        }
        let noise = gaussian_noise(w, h, c, seed.wrapping_add(t as u64));
        let gt_t = add_noise(z_gt, t - 1, &noise, schedule)?;
        z = blend_latents(&proposed, &gt_t, mask)?;
    }
    Ok(z)
}
