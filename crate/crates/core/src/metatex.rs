//! Max-z-normals meta-texture and per-view weights.
//!
//! The meta-texture `N` is a single-channel atlas. Projected into view `i`
//! at pixel `p` (bilinear sample at the pixel's UV) it should never fall
//! below that pixel's z-normal `n[i,p]`. It is learned by descending
//! `sum_i sum_p relu(n[i,p] - N[i,p]) + l2 * sum_t N[t]^2` from zero, and
//! cross-checked against a direct UV-space construction
//! ([`oracle_max_znormals`]).
//!
//! View weights are `W[i,p] = exp(-alpha * |N[i,p] - n[i,p]|)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mesh, Viewpoint};
use crate::image::{Image, Raster};
use crate::optim::{Adam, AdamConfig};
use crate::raster::{bilinear_taps, face_znormals, rasterize_buffers, sample_scalar, RenderBuffers, TextureAtlas};

pub const DEFAULT_ALPHA: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MetaTexture {
    pub atlas: TextureAtlas,
}

impl MetaTexture {
    pub fn zeros(resolution: usize) -> Self {
        Self {
            atlas: TextureAtlas::filled(resolution, &[0.0]),
        }
    }

    pub fn resolution(&self) -> usize {
        self.atlas.resolution()
    }

    pub fn values(&self) -> &[f64] {
        self.atlas.texels.data()
    }

    #[inline]
    pub fn sample(&self, uv: [f64; 2]) -> f64 {
        sample_scalar(&self.atlas.texels, uv)
    }

    pub fn to_png16(&self) -> Result<Vec<u8>> {
        self.atlas.texels.to_png16(0.0, 1.0)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let img = Image::from_png(bytes)?;
        let img = if img.channels() == 1 { img } else { img.with_channels(1) };
        Ok(Self {
            atlas: TextureAtlas::from_image(img)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaTexConfig {
    pub resolution: usize,
    pub max_iters: usize,
    /// Stop once the mean hinge violation per foreground pixel drops below this.
    pub tol: f64,
    /// Weight of the pull-down term `sum N^2`.
    pub l2: f64,
    pub adam: AdamConfig,
    /// Step size reached at `max_iters`, as a fraction of the initial one
    /// (cosine decay).
    pub final_step_fraction: f64,
}

impl Default for MetaTexConfig {
    fn default() -> Self {
        Self {
            resolution: 1024,
            max_iters: 400,
            tol: 1e-3,
            l2: 1e-4,
            adam: AdamConfig {
                step: 1e-2,
                beta1: 0.0,
                beta2: 0.99,
                eps: 1e-12,
            },
            final_step_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaTexReport {
    /// Hinge loss summed over every view and foreground pixel.
    pub final_loss: f64,
    pub mean_violation: f64,
    pub foreground_pixels: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Foreground samples of one view, flattened for the optimization loops.
struct ViewSamples {
    znormal: Vec<f64>,
    uv: Vec<[f64; 2]>,
}

impl ViewSamples {
    fn new(b: &RenderBuffers) -> Self {
        let fg: Vec<usize> = b.foreground().collect();
        Self {
            znormal: fg.iter().map(|&i| b.znormal.data()[i]).collect(),
            uv: fg.iter().map(|&i| b.uv.data()[i]).collect(),
        }
    }
}

/// Hinge loss `sum relu(n - N)` of `meta` against the given views.
pub fn hinge_loss(meta: &MetaTexture, views: &[RenderBuffers]) -> f64 {
    views
        .iter()
        .map(|b| {
            b.foreground()
                .map(|i| (b.znormal.data()[i] - meta.sample(b.uv.data()[i])).max(0.0))
                .sum::<f64>()
        })
        .sum()
}

/// Rasterize every view, then learn the meta-texture.
pub fn learn_max_znormals(
    mesh: &Mesh,
    views: &[Viewpoint],
    cfg: &MetaTexConfig,
) -> Result<(MetaTexture, MetaTexReport)> {
    let buffers = views
        .par_iter()
        .map(|v| rasterize_buffers(mesh, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(learn_from_buffers(&buffers, cfg))
}

/// Learn the meta-texture from pre-rasterized views. Zero views leave the
/// atlas at its zero initialization.
pub fn learn_from_buffers(views: &[RenderBuffers], cfg: &MetaTexConfig) -> (MetaTexture, MetaTexReport) {
    let r = cfg.resolution;
    let samples: Vec<ViewSamples> = views.iter().map(ViewSamples::new).collect();
    let fg_total: usize = samples.iter().map(|s| s.znormal.len()).sum();
    let mut meta = MetaTexture::zeros(r);
    let mut opt = Adam::new(cfg.adam, r * r);
    let mut grad = vec![0.0; r * r];
    let mut per_view: Vec<Vec<f64>> = vec![vec![0.0; r * r]; samples.len()];
    let mut iterations = 0;
    let mut loss;
    let mut converged = false;

    loop {
        // per-view hinge gradients, merged in view order
        let texels = meta.atlas.texels.clone();
        let losses: Vec<f64> = samples
            .par_iter()
            .zip(per_view.par_iter_mut())
            .map(|(s, g)| {
                g.iter_mut().for_each(|x| *x = 0.0);
                let mut l = 0.0;
                for (k, &n) in s.znormal.iter().enumerate() {
                    let uv = s.uv[k];
                    let violation = n - sample_scalar(&texels, uv);
                    if violation > 0.0 {
                        l += violation;
                        for (t, b) in bilinear_taps(uv, r, r) {
                            g[t] -= b;
                        }
                    }
                }
                l
            })
            .collect();
        loss = losses.iter().sum::<f64>();
        let mean = if fg_total > 0 { loss / fg_total as f64 } else { 0.0 };
        if mean < cfg.tol {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iters {
            break;
        }
        for (t, gt) in grad.iter_mut().enumerate() {
            *gt = 2.0 * cfg.l2 * texels.data()[t];
        }
        for g in &per_view {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        let progress = iterations as f64 / cfg.max_iters.max(1) as f64;
        let scale = cfg.final_step_fraction
            + (1.0 - cfg.final_step_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        opt.step_scaled(meta.atlas.texels.data_mut(), &grad, None, scale);
        iterations += 1;
    }

    let mean_violation = if fg_total > 0 { loss / fg_total as f64 } else { 0.0 };
    if !converged {
        log::warn!(
            "meta-texture did not converge: mean violation {mean_violation:.3e} after {iterations} iterations"
        );
    }
    (
        meta,
        MetaTexReport {
            final_loss: loss,
            mean_violation,
            foreground_pixels: fg_total,
            iterations,
            converged,
        },
    )
}

/// Direct construction of the max-z-normals atlas.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMeta {
    pub meta: MetaTexture,
    /// Texels whose center lies inside a face visible from some view.
    pub covered: Raster<bool>,
    /// Per texel, the max z-normal over the faces whose UV triangle
    /// contains the texel center (0 if none is visible).
    pub center_value: Raster<f64>,
    /// Texels claimed by the interiors of two or more UV triangles.
    pub overlap_texels: usize,
}

/// Best z-normal of every face over the views in which it appears in the
/// face-index buffer. `None` if it is never visible.
pub fn face_best_znormals(mesh: &Mesh, views: &[Viewpoint], buffers: &[RenderBuffers]) -> Result<Vec<Option<f64>>> {
    let mut best: Vec<Option<f64>> = vec![None; mesh.face_count()];
    for (v, b) in views.iter().zip(buffers) {
        let zn = face_znormals(mesh, v)?;
        let mut seen = vec![false; mesh.face_count()];
        for &f in b.face_index.data() {
            if f >= 0 {
                seen[f as usize] = true;
            }
        }
        for f in 0..mesh.face_count() {
            if seen[f] && zn[f] > 0.0 {
                best[f] = Some(best[f].map_or(zn[f], |x: f64| x.max(zn[f])));
            }
        }
    }
    Ok(best)
}

/// Build the meta-texture without optimization.
///
/// Every face visible in some view gets its best z-normal over those views.
/// Each texel takes the maximum over the faces whose UV triangle meets the
/// texel's bilinear support (the open square of half-width one texel around
/// its center), so any bilinear sample inside a face's UV triangle is at
/// least that face's value and the hinge loss is exactly zero.
pub fn oracle_max_znormals(
    mesh: &Mesh,
    views: &[Viewpoint],
    buffers: &[RenderBuffers],
    resolution: usize,
) -> Result<OracleMeta> {
    if views.len() != buffers.len() {
        return Err(Error::Shape("one buffer set per view required".into()));
    }
    let best = face_best_znormals(mesh, views, buffers)?;
    let r = resolution;
    let rf = r as f64;
    let mut value = vec![0.0f64; r * r];
    let mut center_value = vec![0.0f64; r * r];
    let mut covered = vec![false; r * r];
    let mut interior_claims = vec![0u8; r * r];

    crate::raster::for_each_uv_texel(mesh, r, |f, t, bary| {
        if let Some(z) = best[f] {
            covered[t] = true;
            center_value[t] = center_value[t].max(z);
        }
        if bary.iter().all(|&b| b > 1e-9) {
            interior_claims[t] = interior_claims[t].saturating_add(1);
        }
    });

    for f in 0..mesh.face_count() {
        let Some(z) = best[f] else { continue };
        let uvs = mesh.face_uvs(f);
        let tri: [[f64; 2]; 3] =
            uvs.map(|t| [t[0].clamp(0.0, 1.0) * rf - 0.5, (1.0 - t[1].clamp(0.0, 1.0)) * rf - 0.5]);
        let lo_x = tri.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let hi_x = tri.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let lo_y = tri.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let hi_y = tri.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let i0 = (lo_x - 1.0).floor().max(0.0) as usize;
        let j0 = (lo_y - 1.0).floor().max(0.0) as usize;
        let i1 = ((hi_x + 1.0).ceil().max(0.0) as usize).min(r - 1);
        let j1 = ((hi_y + 1.0).ceil().max(0.0) as usize).min(r - 1);
        for j in j0..=j1 {
            for i in i0..=i1 {
                if triangle_meets_square(&tri, [i as f64, j as f64], 1.0) {
                    let t = j * r + i;
                    value[t] = value[t].max(z);
                }
            }
        }
    }

    let overlap_texels = interior_claims.iter().filter(|&&c| c > 1).count();
    if overlap_texels > 0 {
        log::warn!("{overlap_texels} texels claimed by overlapping UV charts; keeping the max");
    }
    Ok(OracleMeta {
        meta: MetaTexture {
            atlas: TextureAtlas::from_image(Image::from_vec(r, r, 1, value)?)?,
        },
        covered: Raster::from_vec(r, r, covered)?,
        center_value: Raster::from_vec(r, r, center_value)?,
        overlap_texels,
    })
}

/// Separating-axis test between a triangle and the closed square
/// `center ± half` (axis aligned).
fn triangle_meets_square(tri: &[[f64; 2]; 3], center: [f64; 2], half: f64) -> bool {
    let p: Vec<[f64; 2]> = tri.iter().map(|v| [v[0] - center[0], v[1] - center[1]]).collect();
    for axis in 0..2 {
        let lo = p.iter().map(|v| v[axis]).fold(f64::INFINITY, f64::min);
        let hi = p.iter().map(|v| v[axis]).fold(f64::NEG_INFINITY, f64::max);
        if lo > half || hi < -half {
            return false;
        }
    }
    for k in 0..3 {
        let a = p[k];
        let b = p[(k + 1) % 3];
        let n = [-(b[1] - a[1]), b[0] - a[0]];
        let proj: Vec<f64> = p.iter().map(|v| v[0] * n[0] + v[1] * n[1]).collect();
        let lo = proj.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = proj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let r = half * (n[0].abs() + n[1].abs());
        if lo > r || hi < -r {
            return false;
        }
    }
    true
}

/// Per-view weight rasters (background 0).
#[derive(Debug, Clone, PartialEq)]
pub struct ViewWeights {
    pub alpha: f64,
    pub weights: Vec<Raster<f64>>,
}

/// `exp(-alpha * |N - n|)` on foreground pixels of one view.
pub fn view_weight_raster(meta: &MetaTexture, b: &RenderBuffers, alpha: f64) -> Raster<f64> {
    let mut w = Raster::filled(b.width(), b.height(), 0.0);
    for i in b.foreground() {
        let d = (meta.sample(b.uv.data()[i]) - b.znormal.data()[i]).abs();
        w.data_mut()[i] = (-alpha * d).exp();
    }
    w
}

pub fn view_weights(meta: &MetaTexture, buffers: &[RenderBuffers], alpha: f64) -> Result<ViewWeights> {
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    Ok(ViewWeights {
        alpha,
        weights: buffers.par_iter().map(|b| view_weight_raster(meta, b, alpha)).collect(),
    })
}
