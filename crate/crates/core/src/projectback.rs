//! Inverse rendering of a texture atlas from weighted view images.
//!
//! Minimizes
//!
//! ```text
//! sum_i sum_p W[i,p] * |render_i(T)[p] - x[i,p]|^2 / sum W  +  tv * TV(T) / covered
//! ```
//!
//! over the texels of `T` that receive any supervision. `render_i` is the
//! bilinear lookup of [`crate::raster`], so the data gradient is the splat of
//! the weighted residual. TV is a Charbonnier penalty on differences between
//! 4-neighbour texels that are both supervised.
//!
//! Gradients are gathered per texel from a precomputed texel→pixel table, so
//! results do not depend on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Raster};
use crate::masks::{keep_refine_generate, RegionThresholds, ZNormalCache};
use crate::optim::{Adam, AdamConfig};
use crate::raster::{bilinear_taps, sample_bilinear, RenderBuffers, TextureAtlas};

const TV_EPS: f64 = 1e-3;

/// One supervising view: its buffers, target image and per-pixel weights.
#[derive(Debug, Clone)]
pub struct ViewTarget {
    pub buffers: RenderBuffers,
    pub target: Image,
    pub weights: Raster<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    /// Plain fixed-step gradient descent.
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectBackConfig {
    pub tv_weight: f64,
    pub iterations: usize,
    /// Stop once the total loss drops below this.
    pub tol: f64,
    pub optimizer: Optimizer,
    pub adam: AdamConfig,
    /// Abort after this many consecutive loss increases.
    pub divergence_window: usize,
    /// Final step size as a fraction of the initial one (cosine decay).
    pub final_step_fraction: f64,
}

impl Default for ProjectBackConfig {
    fn default() -> Self {
        Self {
            tv_weight: 1e-4,
            iterations: 200,
            tol: 0.0,
            optimizer: Optimizer::Adam,
            adam: AdamConfig::default(),
            divergence_window: 10,
            final_step_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProjectBackProblem {
    pub views: Vec<ViewTarget>,
    pub initial: TextureAtlas,
    pub config: ProjectBackConfig,
    /// Texels that must keep their initial value.
    pub frozen: Option<Raster<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectBackReport {
    pub final_loss: f64,
    pub per_view_rmse: Vec<f64>,
    pub covered_fraction: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct ProjectBackResult {
    pub atlas: TextureAtlas,
    /// Total splat weight per texel.
    pub coverage: Raster<f64>,
    pub report: ProjectBackReport,
}

/// Flattened supervision: every weighted foreground pixel of every view and
/// the transpose of its bilinear taps.
struct Supervision {
    channels: usize,
    view_of: Vec<u32>,
    uv: Vec<[f64; 2]>,
    weight: Vec<f64>,
    target: Vec<f64>,
    total_weight: f64,
    /// CSR rows per texel: (pixel, tap weight).
    row_start: Vec<usize>,
    entries: Vec<(u32, f64)>,
    coverage: Vec<f64>,
    view_count: usize,
}

impl Supervision {
    fn build(views: &[ViewTarget], resolution: usize, channels: usize) -> Result<Self> {
        let mut view_of = Vec::new();
        let mut uv = Vec::new();
        let mut weight = Vec::new();
        let mut target = Vec::new();
        for (k, v) in views.iter().enumerate() {
            let b = &v.buffers;
            if v.target.width() != b.width() || v.target.height() != b.height() {
                return Err(Error::Shape(format!(
                    "view {k}: target {}x{} vs buffers {}x{}",
                    v.target.width(),
                    v.target.height(),
                    b.width(),
                    b.height()
                )));
            }
            if v.target.channels() != channels {
                return Err(Error::Shape(format!(
                    "view {k}: target has {} channels, atlas {channels}",
                    v.target.channels()
                )));
            }
            if v.weights.width() != b.width() || v.weights.height() != b.height() {
                return Err(Error::Shape(format!("view {k}: weight raster size mismatch")));
            }
            for i in b.foreground() {
                let w = v.weights.data()[i];
                if !(w >= 0.0) || !w.is_finite() {
                    return Err(Error::Config(format!("view {k}: invalid weight {w}")));
                }
                if w == 0.0 {
                    continue;
                }
                view_of.push(k as u32);
                uv.push(b.uv.data()[i]);
                weight.push(w);
                target.extend_from_slice(v.target.at(i));
            }
        }
        let total_weight: f64 = weight.iter().sum();
        if !(total_weight > 0.0) {
            return Err(Error::NoSupervision);
        }

        let r = resolution;
        let mut counts = vec![0usize; r * r + 1];
        let taps: Vec<[(usize, f64); 4]> = uv.iter().map(|&t| bilinear_taps(t, r, r)).collect();
        for tp in &taps {
            for &(t, b) in tp {
                if b > 0.0 {
                    counts[t + 1] += 1;
                }
            }
        }
        for t in 0..r * r {
            counts[t + 1] += counts[t];
        }
        let row_start = counts.clone();
        let mut fill = counts;
        let mut entries = vec![(0u32, 0.0f64); row_start[r * r]];
        for (p, tp) in taps.iter().enumerate() {
            for &(t, b) in tp {
                if b > 0.0 {
                    entries[fill[t]] = (p as u32, b);
                    fill[t] += 1;
                }
            }
        }
        let coverage = (0..r * r)
            .map(|t| {
                entries[row_start[t]..row_start[t + 1]]
                    .iter()
                    .map(|&(p, b)| weight[p as usize] * b)
                    .sum()
            })
            .collect();
        Ok(Self {
            channels,
            view_of,
            uv,
            weight,
            target,
            total_weight,
            row_start,
            entries,
            coverage,
            view_count: views.len(),
        })
    }

    fn residuals(&self, atlas: &Image) -> Vec<f64> {
        let c = self.channels;
        let mut res = vec![0.0; self.weight.len() * c];
        res.par_chunks_mut(c).enumerate().for_each(|(p, r)| {
            sample_bilinear(atlas, self.uv[p], r);
            for k in 0..c {
                r[k] -= self.target[p * c + k];
            }
        });
        res
    }

    /// Weighted data loss from residuals; summed sequentially.
    fn data_loss(&self, res: &[f64]) -> f64 {
        let c = self.channels;
        let mut s = 0.0;
        for (p, w) in self.weight.iter().enumerate() {
            let r = &res[p * c..(p + 1) * c];
            s += w * r.iter().map(|x| x * x).sum::<f64>();
        }
        s / self.total_weight
    }

    fn data_grad(&self, res: &[f64], grad: &mut [f64]) {
        let c = self.channels;
        let scale = 2.0 / self.total_weight;
        grad.par_chunks_mut(c).enumerate().for_each(|(t, g)| {
            g.iter_mut().for_each(|x| *x = 0.0);
            for &(p, b) in &self.entries[self.row_start[t]..self.row_start[t + 1]] {
                let p = p as usize;
                let wb = self.weight[p] * b * scale;
                for k in 0..c {
                    g[k] += wb * res[p * c + k];
                }
            }
        });
    }

    fn per_view_rmse(&self, res: &[f64]) -> Vec<f64> {
        let c = self.channels;
        let mut num = vec![0.0; self.view_count];
        let mut den = vec![0.0; self.view_count];
        for (p, &w) in self.weight.iter().enumerate() {
            let v = self.view_of[p] as usize;
            num[v] += w * res[p * c..(p + 1) * c].iter().map(|x| x * x).sum::<f64>();
            den[v] += w * c as f64;
        }
        num.iter()
            .zip(&den)
            .map(|(n, d)| if *d > 0.0 { (n / d).sqrt() } else { 0.0 })
            .collect()
    }
}

/// Charbonnier TV over 4-neighbour pairs of supervised texels. Adds its
/// gradient into `grad` when given and returns the (normalized) penalty.
fn total_variation(atlas: &Image, active: &[bool], weight: f64, grad: Option<&mut [f64]>) -> f64 {
    if weight == 0.0 {
        return 0.0;
    }
    let (r, c) = (atlas.width(), atlas.channels());
    let n_active = active.iter().filter(|&&a| a).count().max(1) as f64;
    let scale = weight / n_active;
    let d = atlas.data();
    let mut tv = 0.0;
    let mut g = grad;
    for y in 0..r {
        for x in 0..r {
            let a = y * r + x;
            if !active[a] {
                continue;
            }
            for nb in [(x + 1 < r).then(|| a + 1), (y + 1 < r).then(|| a + r)].into_iter().flatten() {
                if !active[nb] {
                    continue;
                }
                for k in 0..c {
                    let diff = d[nb * c + k] - d[a * c + k];
                    let s = (diff * diff + TV_EPS * TV_EPS).sqrt();
                    tv += s - TV_EPS;
                    if let Some(g) = g.as_deref_mut() {
                        let dg = scale * diff / s;
                        g[nb * c + k] += dg;
                        g[a * c + k] -= dg;
                    }
                }
            }
        }
    }
    tv * scale
}

/// Loss and gradient at `atlas`, exposed for gradient checks.
pub fn loss_and_gradient(problem: &ProjectBackProblem, atlas: &TextureAtlas) -> Result<(f64, Vec<f64>)> {
    let sup = Supervision::build(&problem.views, atlas.resolution(), atlas.channels())?;
    let active: Vec<bool> = sup.coverage.iter().map(|&w| w > 0.0).collect();
    let res = sup.residuals(&atlas.texels);
    let mut grad = vec![0.0; atlas.texels.data().len()];
    sup.data_grad(&res, &mut grad);
    let tv = total_variation(&atlas.texels, &active, problem.config.tv_weight, Some(&mut grad));
    Ok((sup.data_loss(&res) + tv, grad))
}

pub fn loss(problem: &ProjectBackProblem, atlas: &TextureAtlas) -> Result<f64> {
    let sup = Supervision::build(&problem.views, atlas.resolution(), atlas.channels())?;
    let active: Vec<bool> = sup.coverage.iter().map(|&w| w > 0.0).collect();
    let res = sup.residuals(&atlas.texels);
    Ok(sup.data_loss(&res) + total_variation(&atlas.texels, &active, problem.config.tv_weight, None))
}

pub fn project_back(problem: &ProjectBackProblem) -> Result<ProjectBackResult> {
    let init = &problem.initial;
    let (r, c) = (init.resolution(), init.channels());
    let cfg = &problem.config;
    if problem.views.is_empty() {
        return Err(Error::NoSupervision);
    }
    if let Some(f) = &problem.frozen {
        if f.width() != r || f.height() != r {
            return Err(Error::Shape("frozen mask does not match atlas".into()));
        }
    }
    let sup = Supervision::build(&problem.views, r, c)?;
    let active: Vec<bool> = sup.coverage.iter().map(|&w| w > 0.0).collect();
    let frozen: Vec<bool> = (0..r * r * c)
        .map(|i| {
            let t = i / c;
            !active[t] || problem.frozen.as_ref().is_some_and(|f| f.data()[t])
        })
        .collect();

    let mut atlas = init.clone();
    let mut grad = vec![0.0; r * r * c];
    let mut adam = Adam::new(cfg.adam, r * r * c);
    let mut prev = f64::INFINITY;
    let mut increases = 0usize;
    let mut iterations = 0usize;

    let report = |atlas: &TextureAtlas, iterations: usize| {
        let res = sup.residuals(&atlas.texels);
        let loss = sup.data_loss(&res) + total_variation(&atlas.texels, &active, cfg.tv_weight, None);
        ProjectBackReport {
            final_loss: loss,
            per_view_rmse: sup.per_view_rmse(&res),
            covered_fraction: active.iter().filter(|&&a| a).count() as f64 / (r * r) as f64,
            iterations,
        }
    };

    while iterations < cfg.iterations {
        let res = sup.residuals(&atlas.texels);
        sup.data_grad(&res, &mut grad);
        let loss = sup.data_loss(&res) + total_variation(&atlas.texels, &active, cfg.tv_weight, Some(&mut grad));
        if !loss.is_finite() {
            return Err(Error::Diverged {
                report: report(&atlas, iterations),
            });
        }
        if loss < cfg.tol {
            break;
        }
        if loss > prev {
            increases += 1;
            if increases >= cfg.divergence_window {
                return Err(Error::Diverged {
                    report: report(&atlas, iterations),
                });
            }
        } else {
            increases = 0;
        }
        prev = loss;
        let progress = iterations as f64 / cfg.iterations.max(1) as f64;
        let scale = cfg.final_step_fraction
            + (1.0 - cfg.final_step_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        let params = atlas.texels.data_mut();
        match cfg.optimizer {
            Optimizer::Adam => adam.step_scaled(params, &grad, Some(&frozen), scale),
            Optimizer::GradientDescent => {
                let lr = cfg.adam.step * scale;
                for i in 0..params.len() {
                    if !frozen[i] {
                        params[i] -= lr * grad[i];
                    }
                }
            }
        }
        iterations += 1;
    }

    let report = report(&atlas, iterations);
    Ok(ProjectBackResult {
        atlas,
        coverage: Raster::from_vec(r, r, sup.coverage.clone())?,
        report,
    })
}

/// Per-iteration loss trace, for descent diagnostics.
pub fn loss_trace(problem: &ProjectBackProblem) -> Result<Vec<f64>> {
    let mut trace = Vec::new();
    let mut p = problem.clone();
    p.config.iterations = 0;
    trace.push(loss(&p, &p.initial)?);
    let mut atlas = p.initial.clone();
    for _ in 0..problem.config.iterations {
        p.initial = atlas;
        p.config.iterations = 1;
        // a single-step run restarts optimizer state, so only meaningful
        // for fixed-step gradient descent
        atlas = project_back(&p)?.atlas;
        trace.push(loss(&p, &atlas)?);
    }
    Ok(trace)
}

/// Per-view baseline: one view at a time, each starting from the previous
/// atlas, supervision restricted to pixels the keep/refine/generate policy
/// marks as refine or generate.
pub fn sequential_project_back(
    views: &[ViewTarget],
    initial: &TextureAtlas,
    config: &ProjectBackConfig,
    thresholds: &RegionThresholds,
) -> Result<ProjectBackResult> {
    if views.is_empty() {
        return Err(Error::NoSupervision);
    }
    let r = initial.resolution();
    let mut atlas = initial.clone();
    let mut cache = ZNormalCache::new(r);
    let mut coverage = Raster::filled(r, r, 0.0);
    let mut rmse = Vec::with_capacity(views.len());
    let mut iterations = 0;
    let mut last_loss = 0.0;
    let mut any = false;

    for view in views {
        let b = &view.buffers;
        let cached = cache.project(b);
        let parts = keep_refine_generate(&b.object_mask, &b.znormal, &cached, thresholds)?;
        let mut weights = view.weights.clone();
        for i in 0..weights.len() {
            if !(parts.refine.mask.data()[i] || parts.generate.mask.data()[i]) {
                weights.data_mut()[i] = 0.0;
            }
        }
        cache.update(b);
        let problem = ProjectBackProblem {
            views: vec![ViewTarget {
                buffers: b.clone(),
                target: view.target.clone(),
                weights,
            }],
            initial: atlas.clone(),
            config: *config,
            frozen: None,
        };
        match project_back(&problem) {
            Ok(res) => {
                atlas = res.atlas;
                for (a, w) in coverage.data_mut().iter_mut().zip(res.coverage.data()) {
                    *a += w;
                }
                rmse.push(res.report.per_view_rmse[0]);
                iterations += res.report.iterations;
                last_loss = res.report.final_loss;
                any = true;
            }
            Err(Error::NoSupervision) => rmse.push(0.0),
            Err(e) => return Err(e),
        }
    }
    if !any {
        return Err(Error::NoSupervision);
    }
    let covered = coverage.data().iter().filter(|&&w| w > 0.0).count();
    Ok(ProjectBackResult {
        atlas,
        report: ProjectBackReport {
            final_loss: last_loss,
            per_view_rmse: rmse,
            covered_fraction: covered as f64 / (r * r) as f64,
            iterations,
        },
        coverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{shapes, CameraConfig, Viewpoint};
    use crate::raster::{rasterize_buffers, render_from_buffers};

    fn front(size: usize) -> Viewpoint {
        Viewpoint::new(0, 0.0, 0.0, &CameraConfig::default(), size).unwrap()
    }

    fn uniform(b: &RenderBuffers, w: f64) -> Raster<f64> {
        b.object_mask.map(|&m| if m { w } else { 0.0 })
    }

    #[test]
    fn constant_target_on_quad() {
        let mesh = shapes::quad(1.0, 1.0);
        let b = rasterize_buffers(&mesh, &front(64)).unwrap();
        let blue = Image::filled(64, 64, &[0.0, 0.0, 1.0]);
        let init = TextureAtlas::filled(16, &[0.5, 0.5, 0.5]);
        let problem = ProjectBackProblem {
            views: vec![ViewTarget {
                weights: uniform(&b, 1.0),
                buffers: b,
                target: blue,
            }],
            initial: init.clone(),
            config: ProjectBackConfig::default(),
            frozen: None,
        };
        let res = project_back(&problem).unwrap();
        for t in 0..256 {
            if res.coverage.data()[t] > 0.0 {
                for (a, e) in res.atlas.texels.at(t).iter().zip([0.0, 0.0, 1.0]) {
                    assert!((a - e).abs() <= 1.0 / 255.0, "texel {t}: {a} vs {e}");
                }
            } else {
                assert_eq!(res.atlas.texels.at(t), init.texels.at(t));
            }
        }
    }

    #[test]
    fn zero_weights_is_no_supervision() {
        let mesh = shapes::quad(1.0, 1.0);
        let b = rasterize_buffers(&mesh, &front(16)).unwrap();
        let problem = ProjectBackProblem {
            views: vec![ViewTarget {
                weights: uniform(&b, 0.0),
                target: Image::new(16, 16, 3),
                buffers: b,
            }],
            initial: TextureAtlas::filled(8, &[0.5; 3]),
            config: ProjectBackConfig::default(),
            frozen: None,
        };
        let e = project_back(&problem).unwrap_err();
        assert!(matches!(e, Error::NoSupervision));
        assert!(e.to_string().contains("no supervision"));
    }

    #[test]
    fn huge_step_reports_divergence() {
        let mesh = shapes::quad(1.0, 1.0);
        let b = rasterize_buffers(&mesh, &front(32)).unwrap();
        let problem = ProjectBackProblem {
            views: vec![ViewTarget {
                weights: uniform(&b, 1.0),
                target: Image::filled(32, 32, &[0.2]),
                buffers: b,
            }],
            initial: TextureAtlas::filled(8, &[0.5]),
            config: ProjectBackConfig {
                optimizer: Optimizer::GradientDescent,
                adam: AdamConfig { step: 1e4, ..Default::default() },
                tv_weight: 0.0,
                ..Default::default()
            },
            frozen: None,
        };
        match project_back(&problem) {
            Err(Error::Diverged { report }) => assert!(report.iterations < 200),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn frozen_texels_keep_initial_value() {
        let mesh = shapes::quad(1.0, 1.0);
        let b = rasterize_buffers(&mesh, &front(32)).unwrap();
        let mut frozen = Raster::filled(8, 8, false);
        frozen.set(3, 3, true);
        let init = TextureAtlas::filled(8, &[0.5]);
        let problem = ProjectBackProblem {
            views: vec![ViewTarget {
                weights: uniform(&b, 1.0),
                target: Image::filled(32, 32, &[0.9]),
                buffers: b,
            }],
            initial: init,
            config: ProjectBackConfig::default(),
            frozen: Some(frozen),
        };
        let res = project_back(&problem).unwrap();
        assert_eq!(res.atlas.texels.pixel(3, 3), &[0.5]);
        assert!(res.atlas.texels.pixel(4, 4)[0] > 0.8);
    }

    #[test]
    fn render_of_solution_matches_target() {
        let mesh = shapes::uv_sphere(12, 8);
        let v = front(48);
        let b = rasterize_buffers(&mesh, &v).unwrap();
        let gt = TextureAtlas::from_image(Image::from_fn(16, 16, 1, |x, y| vec![0.2 + 0.6 * ((x + y) as f64 / 30.0)])).unwrap();
        let target = render_from_buffers(&b, &gt, 0.5);
        let problem = ProjectBackProblem {
            views: vec![ViewTarget {
                weights: uniform(&b, 1.0),
                buffers: b,
                target,
            }],
            initial: TextureAtlas::filled(16, &[0.5]),
            config: ProjectBackConfig {
                iterations: 400,
                ..Default::default()
            },
            frozen: None,
        };
        let res = project_back(&problem).unwrap();
        assert!(res.report.per_view_rmse[0] < 5e-3, "{:?}", res.report);
        assert!(res.report.covered_fraction > 0.0 && res.report.covered_fraction <= 1.0);
    }
}
