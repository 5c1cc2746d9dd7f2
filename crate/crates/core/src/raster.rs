//! Software rasterizer, bilinear texture sampling and its adjoint (splat).
//!
//! Screen convention: pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`,
//! row 0 at the top. Atlas convention: texel `(i, j)` (column, row) has its
//! center at `u = (i + 0.5) / W`, `v = 1 - (j + 0.5) / H`; UVs outside the
//! unit square clamp to the edge.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::geometry::{Mesh, Viewpoint};
use crate::image::{Image, Raster};

/// Normalized depth of the farthest foreground pixel. Keeps foreground
/// strictly above the background value 0.
pub const DEPTH_FLOOR: f64 = 0.1;

pub const DEFAULT_BACKGROUND: f64 = 0.5;

/// Per-view rasterization output.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderBuffers {
    /// 0 on background, 1 at the nearest foreground pixel, `DEPTH_FLOOR` at
    /// the farthest.
    pub depth: Raster<f64>,
    /// View-space distance along the optical axis, before normalization.
    pub linear_depth: Raster<f64>,
    pub znormal: Raster<f64>,
    pub face_index: Raster<i32>,
    pub uv: Raster<[f64; 2]>,
    pub object_mask: Raster<bool>,
}

impl RenderBuffers {
    pub fn empty(size: usize) -> Self {
        Self {
            depth: Raster::filled(size, size, 0.0),
            linear_depth: Raster::filled(size, size, 0.0),
            znormal: Raster::filled(size, size, 0.0),
            face_index: Raster::filled(size, size, -1),
            uv: Raster::filled(size, size, [0.0, 0.0]),
            object_mask: Raster::filled(size, size, false),
        }
    }

    pub fn width(&self) -> usize {
        self.face_index.width()
    }

    pub fn height(&self) -> usize {
        self.face_index.height()
    }

    /// Flat indices of foreground pixels in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = usize> + '_ {
        self.object_mask
            .data()
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }

    pub fn foreground_count(&self) -> usize {
        self.object_mask.count()
    }
}

/// Learnable texel grid with `C` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureAtlas {
    pub texels: Image,
}

impl TextureAtlas {
    pub fn filled(resolution: usize, value: &[f64]) -> Self {
        Self {
            texels: Image::filled(resolution, resolution, value),
        }
    }

    pub fn from_image(texels: Image) -> Result<Self> {
        if texels.width() != texels.height() || texels.width() == 0 {
            return Err(Error::Shape(format!(
                "atlas must be square and non-empty, got {}x{}",
                texels.width(),
                texels.height()
            )));
        }
        Ok(Self { texels })
    }

    pub fn resolution(&self) -> usize {
        self.texels.width()
    }

    pub fn channels(&self) -> usize {
        self.texels.channels()
    }

    pub fn sample(&self, uv: [f64; 2], out: &mut [f64]) {
        sample_bilinear(&self.texels, uv, out)
    }

    pub fn is_finite(&self) -> bool {
        self.texels.data().iter().all(|v| v.is_finite())
    }

    /// Export copy with color clamped to [0, 1].
    pub fn to_png8(&self) -> Result<Vec<u8>> {
        self.texels.clamped().to_png8()
    }
}

/// The four bilinear taps of `uv` on a `width`×`height` grid: flat texel
/// index and weight. Weights are non-negative and sum to 1.
#[inline]
pub fn bilinear_taps(uv: [f64; 2], width: usize, height: usize) -> [(usize, f64); 4] {
    let (i0, i1, fx, j0, j1, fy) = tap_coords(uv, width, height);
    [
        (j0 * width + i0, (1.0 - fx) * (1.0 - fy)),
        (j0 * width + i1, fx * (1.0 - fy)),
        (j1 * width + i0, (1.0 - fx) * fy),
        (j1 * width + i1, fx * fy),
    ]
}

#[inline]
fn tap_coords(uv: [f64; 2], width: usize, height: usize) -> (usize, usize, f64, usize, usize, f64) {
    let u = if uv[0].is_nan() { 0.0 } else { uv[0].clamp(0.0, 1.0) };
    let v = if uv[1].is_nan() { 0.0 } else { uv[1].clamp(0.0, 1.0) };
    let x = u * width as f64 - 0.5;
    let y = (1.0 - v) * height as f64 - 0.5;
    let xf = x.floor();
    let yf = y.floor();
    let (fx, fy) = (x - xf, y - yf);
    let clamp = |k: f64, n: usize| (k.max(0.0) as usize).min(n - 1);
    (
        clamp(xf, width),
        clamp(xf + 1.0, width),
        fx,
        clamp(yf, height),
        clamp(yf + 1.0, height),
        fy,
    )
}

/// Interpolate between `a` and `b`. The result never leaves `[min(a,b),
/// max(a,b)]`, even in floating point.
#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if a <= b {
        a + (b - a) * t
    } else {
        b + (a - b) * (1.0 - t)
    }
}

/// Bilinear sample of every channel of `img` at `uv`.
#[inline]
pub fn sample_bilinear(img: &Image, uv: [f64; 2], out: &mut [f64]) {
    let (w, h) = (img.width(), img.height());
    let (i0, i1, fx, j0, j1, fy) = tap_coords(uv, w, h);
    let (p00, p10) = (img.at(j0 * w + i0), img.at(j0 * w + i1));
    let (p01, p11) = (img.at(j1 * w + i0), img.at(j1 * w + i1));
    for c in 0..img.channels() {
        out[c] = lerp(lerp(p00[c], p10[c], fx), lerp(p01[c], p11[c], fx), fy);
    }
}

#[inline]
pub fn sample_scalar(img: &Image, uv: [f64; 2]) -> f64 {
    debug_assert_eq!(img.channels(), 1);
    let mut out = [0.0];
    sample_bilinear(img, uv, &mut out);
    out[0]
}

/// Camera-space z component of every face normal in view `v`.
pub fn face_znormals(mesh: &Mesh, v: &Viewpoint) -> Result<Vec<f64>> {
    let rot = rotation_part(&v.view_matrix()?);
    Ok(mesh.face_normals().iter().map(|n| (rot * n).z).collect())
}

fn rotation_part(m: &Matrix4<f64>) -> Matrix3<f64> {
    m.fixed_view::<3, 3>(0, 0).into_owned()
}

/// Z-buffered rasterization of `mesh` from `v`.
///
/// Faces with a non-positive camera-space z-normal are culled, as are faces
/// with any vertex closer than the near plane. UVs are interpolated
/// perspective-correctly. Depth ties keep the lower face index.
pub fn rasterize_buffers(mesh: &Mesh, v: &Viewpoint) -> Result<RenderBuffers> {
    v.validate()?;
    let size = v.image_size;
    let view = v.view_matrix()?;
    let mvp = v.projection_matrix() * view;
    let rot = rotation_part(&view);
    let mut out = RenderBuffers::empty(size);
    let sizef = size as f64;

    for f in 0..mesh.face_count() {
        let zn = (rot * mesh.face_normals()[f]).z;
        if zn <= 0.0 {
            continue;
        }
        let pos = mesh.face_positions(f);
        let uvs = mesh.face_uvs(f);
        let mut sx = [0.0; 3];
        let mut sy = [0.0; 3];
        let mut inv_w = [0.0; 3];
        let mut clipped = false;
        for k in 0..3 {
            let c = mvp * Vector4::new(pos[k].x, pos[k].y, pos[k].z, 1.0);
            if c.w < v.near {
                clipped = true;
                break;
            }
            sx[k] = (c.x / c.w + 1.0) * 0.5 * sizef;
            sy[k] = (1.0 - c.y / c.w) * 0.5 * sizef;
            inv_w[k] = 1.0 / c.w;
        }
        if clipped {
            continue;
        }
        let area = edge(sx[0], sy[0], sx[1], sy[1], sx[2], sy[2]);
        if area.abs() < 1e-14 {
            continue;
        }
        let xmin = sx.iter().cloned().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let ymin = sy.iter().cloned().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let xmax = sx.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil();
        let ymax = sy.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil();
        if xmax < 0.0 || ymax < 0.0 {
            continue;
        }
        let xmax = (xmax as usize).min(size);
        let ymax = (ymax as usize).min(size);
        for py in ymin..ymax {
            let cy = py as f64 + 0.5;
            for px in xmin..xmax {
                let cx = px as f64 + 0.5;
                let b0 = edge(sx[1], sy[1], sx[2], sy[2], cx, cy) / area;
                let b1 = edge(sx[2], sy[2], sx[0], sy[0], cx, cy) / area;
                let b2 = edge(sx[0], sy[0], sx[1], sy[1], cx, cy) / area;
                if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                    continue;
                }
                let q = [b0 * inv_w[0], b1 * inv_w[1], b2 * inv_w[2]];
                let qs = q[0] + q[1] + q[2];
                let d = 1.0 / qs;
                let idx = py * size + px;
                let current = out.linear_depth.data()[idx];
                if out.object_mask.data()[idx] && d >= current {
                    continue;
                }
                let u = (q[0] * uvs[0][0] + q[1] * uvs[1][0] + q[2] * uvs[2][0]) / qs;
                let t = (q[0] * uvs[0][1] + q[1] * uvs[1][1] + q[2] * uvs[2][1]) / qs;
                out.linear_depth.data_mut()[idx] = d;
                out.znormal.data_mut()[idx] = zn;
                out.face_index.data_mut()[idx] = f as i32;
                out.uv.data_mut()[idx] = [u, t];
                out.object_mask.data_mut()[idx] = true;
            }
        }
    }

    normalize_depth(&mut out);
    Ok(out)
}

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

fn normalize_depth(out: &mut RenderBuffers) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in out.foreground().collect::<Vec<_>>() {
        let d = out.linear_depth.data()[i];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    // spans at rounding level (flat, fronto-parallel surfaces) count as flat
    let span = if hi - lo > 1e-9 * hi.abs().max(1.0) { hi - lo } else { 0.0 };
    let mask = out.object_mask.data().to_vec();
    for (i, &m) in mask.iter().enumerate() {
        out.depth.data_mut()[i] = if !m {
            0.0
        } else if span > 0.0 {
            // clamped: 1 - 0.9 rounds below the floor at the far end
            (1.0 - (1.0 - DEPTH_FLOOR) * (out.linear_depth.data()[i] - lo) / span).clamp(DEPTH_FLOOR, 1.0)
        } else {
            1.0
        };
    }
}

/// Render `atlas` through precomputed buffers; background pixels get
/// `background` in every channel.
pub fn render_from_buffers(buffers: &RenderBuffers, atlas: &TextureAtlas, background: f64) -> Image {
    let c = atlas.channels();
    let mut img = Image::filled(buffers.width(), buffers.height(), &vec![background; c]);
    for i in buffers.foreground() {
        atlas.sample(buffers.uv.data()[i], img.at_mut(i));
    }
    img
}

pub fn render_textured(
    mesh: &Mesh,
    v: &Viewpoint,
    atlas: &TextureAtlas,
    background: f64,
) -> Result<Image> {
    Ok(render_from_buffers(&rasterize_buffers(mesh, v)?, atlas, background))
}

/// Atlas-shaped accumulator for splatting: a weighted color sum per texel
/// plus the total weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatAccumulator {
    pub value: Image,
    pub weight: Raster<f64>,
}

impl SplatAccumulator {
    pub fn new(resolution: usize, channels: usize) -> Self {
        Self {
            value: Image::new(resolution, resolution, channels),
            weight: Raster::filled(resolution, resolution, 0.0),
        }
    }

    pub fn resolution(&self) -> usize {
        self.weight.width()
    }

    /// Adjoint of [`render_from_buffers`]: every foreground pixel scatters
    /// `weight * color` onto its four bilinear taps and `weight` onto the
    /// weight plane.
    pub fn splat(&mut self, buffers: &RenderBuffers, image: &Image, weights: &Raster<f64>) -> Result<()> {
        if image.width() != buffers.width() || image.height() != buffers.height() {
            return Err(Error::Shape(format!(
                "image {}x{} does not match buffers {}x{}",
                image.width(),
                image.height(),
                buffers.width(),
                buffers.height()
            )));
        }
        if image.channels() != self.value.channels() {
            return Err(Error::Shape(format!(
                "image has {} channels, accumulator {}",
                image.channels(),
                self.value.channels()
            )));
        }
        if weights.width() != buffers.width() || weights.height() != buffers.height() {
            return Err(Error::Shape("weight raster does not match buffers".into()));
        }
        let r = self.resolution();
        let c = image.channels();
        for p in buffers.foreground() {
            let w = weights.data()[p];
            if w == 0.0 {
                continue;
            }
            let color = image.at(p);
            for (t, b) in bilinear_taps(buffers.uv.data()[p], r, r) {
                if b == 0.0 {
                    continue;
                }
                let wb = w * b;
                let dst = self.value.at_mut(t);
                for k in 0..c {
                    dst[k] += wb * color[k];
                }
                self.weight.data_mut()[t] += wb;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &SplatAccumulator) {
        for (a, b) in self.value.data_mut().iter_mut().zip(other.value.data()) {
            *a += b;
        }
        for (a, b) in self.weight.data_mut().iter_mut().zip(other.weight.data()) {
            *a += b;
        }
    }

    /// Weighted mean color per texel; texels with zero weight take `fill`.
    pub fn normalized(&self, fill: &[f64]) -> TextureAtlas {
        let mut out = self.value.clone();
        for i in 0..self.weight.len() {
            let w = self.weight.data()[i];
            let px = out.at_mut(i);
            if w > 0.0 {
                px.iter_mut().for_each(|v| *v /= w);
            } else {
                px.copy_from_slice(fill);
            }
        }
        TextureAtlas { texels: out }
    }
}

/// Visit every texel whose center lies inside some face's UV triangle, with
/// the face index and the texel's barycentric coordinates in that face.
/// A texel claimed by several faces is visited once per face.
pub fn for_each_uv_texel(mesh: &Mesh, resolution: usize, mut visit: impl FnMut(usize, usize, [f64; 3])) {
    let r = resolution as f64;
    for f in 0..mesh.face_count() {
        let uvs = mesh.face_uvs(f);
        // texel-space coordinates: column = u*R - 0.5, row = (1-v)*R - 0.5
        let tx: Vec<f64> = uvs.iter().map(|t| t[0] * r - 0.5).collect();
        let ty: Vec<f64> = uvs.iter().map(|t| (1.0 - t[1]) * r - 0.5).collect();
        let area = edge(tx[0], ty[0], tx[1], ty[1], tx[2], ty[2]);
        if area.abs() < 1e-14 {
            continue;
        }
        let lo = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min).ceil().max(0.0) as usize;
        let hi = |v: &[f64]| {
            let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max).floor();
            if m < 0.0 {
                None
            } else {
                Some((m as usize).min(resolution - 1))
            }
        };
        let (Some(x1), Some(y1)) = (hi(&tx), hi(&ty)) else {
            continue;
        };
        for j in lo(&ty)..=y1 {
            for i in lo(&tx)..=x1 {
                let (px, py) = (i as f64, j as f64);
                let b0 = edge(tx[1], ty[1], tx[2], ty[2], px, py) / area;
                let b1 = edge(tx[2], ty[2], tx[0], ty[0], px, py) / area;
                let b2 = edge(tx[0], ty[0], tx[1], ty[1], px, py) / area;
                if b0 >= 0.0 && b1 >= 0.0 && b2 >= 0.0 {
                    visit(f, j * resolution + i, [b0, b1, b2]);
                }
            }
        }
    }
}

/// Screen-space position of a world point in view `v`, as `(x, y, view depth)`.
pub fn project_point(v: &Viewpoint, p: &Vector3<f64>) -> Result<(f64, f64, f64)> {
    let c = v.view_projection()? * Vector4::new(p.x, p.y, p.z, 1.0);
    let s = v.image_size as f64;
    Ok(((c.x / c.w + 1.0) * 0.5 * s, (1.0 - c.y / c.w) * 0.5 * s, c.w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{shapes, CameraConfig};

    fn front(size: usize) -> Viewpoint {
        Viewpoint::new(0, 0.0, 0.0, &CameraConfig::default(), size).unwrap()
    }

    #[test]
    fn taps_sum_to_one_and_hit_center() {
        let t = bilinear_taps([0.3, 0.77], 16, 16);
        assert!((t.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
        // texel (2, 5) center
        let uv = [2.5 / 8.0, 1.0 - 5.5 / 8.0];
        let t = bilinear_taps(uv, 8, 8);
        assert_eq!(t[0], (5 * 8 + 2, 1.0));
        assert!(t[1..].iter().all(|x| x.1 == 0.0));
    }

    #[test]
    fn lerp_stays_within_endpoints() {
        for &(a, b) in &[(0.1, 0.9), (0.9, 0.1), (0.3, 0.3), (1e-9, 1.0)] {
            for k in 0..=100 {
                let t = k as f64 / 100.0;
                let v = lerp(a, b, t);
                assert!(v >= a.min(b) && v <= a.max(b));
            }
        }
    }

    #[test]
    fn fronto_parallel_quad() {
        let mesh = shapes::quad(1.0, 1.0);
        let b = rasterize_buffers(&mesh, &front(64)).unwrap();
        let (cx, cy) = (32, 32);
        assert!(*b.object_mask.get(cx, cy));
        assert!(!*b.object_mask.get(0, 0));
        for i in b.foreground() {
            assert!((b.znormal.data()[i] - 1.0).abs() < 1e-12);
            assert_eq!(b.depth.data()[i], 1.0);
        }
        // covered region is a centered square
        let xs: Vec<usize> = (0..64).filter(|&x| *b.object_mask.get(x, 32)).collect();
        let ys: Vec<usize> = (0..64).filter(|&y| *b.object_mask.get(32, y)).collect();
        assert_eq!(xs.first().unwrap() + xs.last().unwrap(), 63);
        assert_eq!(ys.first().unwrap() + ys.last().unwrap(), 63);
    }

    #[test]
    fn rotated_quad_znormal_is_cosine() {
        let mesh = shapes::quad(1.0, 1.0).rotated_y(60.0);
        let b = rasterize_buffers(&mesh, &front(64)).unwrap();
        assert!(b.foreground_count() > 0);
        for i in b.foreground() {
            assert!((b.znormal.data()[i] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn buffer_invariants() {
        let mesh = shapes::uv_sphere(16, 8);
        let b = rasterize_buffers(&mesh, &front(48)).unwrap();
        for i in 0..b.face_index.len() {
            let m = b.object_mask.data()[i];
            assert_eq!(m, b.face_index.data()[i] >= 0);
            assert_eq!(m, b.depth.data()[i] > 0.0);
            if m {
                assert!(b.znormal.data()[i] > 0.0);
                assert!(b.depth.data()[i] <= 1.0);
            }
        }
    }

    #[test]
    fn outside_frustum_is_background() {
        let mesh = shapes::quad(0.2, 0.2).translated(Vector3::new(50.0, 0.0, 0.0));
        let b = rasterize_buffers(&mesh, &front(32)).unwrap();
        assert_eq!(b.foreground_count(), 0);
        assert!(b.face_index.data().iter().all(|&f| f == -1));
    }

    #[test]
    fn constant_atlas_renders_constant() {
        let mesh = shapes::uv_sphere(12, 6);
        let red = TextureAtlas::filled(16, &[1.0, 0.0, 0.0]);
        let v = front(32);
        let img = render_textured(&mesh, &v, &red, DEFAULT_BACKGROUND).unwrap();
        let b = rasterize_buffers(&mesh, &v).unwrap();
        for i in 0..32 * 32 {
            let want: &[f64] = if b.object_mask.data()[i] { &[1.0, 0.0, 0.0] } else { &[0.5, 0.5, 0.5] };
            assert_eq!(img.at(i), want);
        }
    }

    #[test]
    fn empty_foreground_is_background() {
        let mesh = shapes::quad(1.0, 1.0).rotated_y(180.0);
        let img = render_textured(&mesh, &front(16), &TextureAtlas::filled(4, &[0.2]), 0.25).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn splat_single_texel_center() {
        let mut b = RenderBuffers::empty(1);
        b.object_mask.set(0, 0, true);
        b.face_index.set(0, 0, 0);
        b.uv.set(0, 0, [2.5 / 8.0, 1.0 - 5.5 / 8.0]);
        let img = Image::filled(1, 1, &[0.2, 0.4, 0.6]);
        let mut acc = SplatAccumulator::new(8, 3);
        acc.splat(&b, &img, &Raster::filled(1, 1, 1.0)).unwrap();
        let touched: Vec<usize> = (0..64).filter(|&t| acc.weight.data()[t] != 0.0).collect();
        assert_eq!(touched, vec![5 * 8 + 2]);
        assert_eq!(acc.value.at(5 * 8 + 2), &[0.2, 0.4, 0.6]);
    }

    #[test]
    fn splat_constant_view_normalizes_to_constant() {
        let mesh = shapes::uv_sphere(12, 6);
        let v = front(64);
        let b = rasterize_buffers(&mesh, &v).unwrap();
        let img = Image::filled(64, 64, &[0.3, 0.6, 0.9]);
        let mut acc = SplatAccumulator::new(32, 3);
        acc.splat(&b, &img, &Raster::filled(64, 64, 0.7)).unwrap();
        let atlas = acc.normalized(&[0.0, 0.0, 0.0]);
        for t in 0..32 * 32 {
            if acc.weight.data()[t] > 0.0 {
                for (a, e) in atlas.texels.at(t).iter().zip([0.3, 0.6, 0.9]) {
                    assert!((a - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn uv_texel_visit_covers_quad() {
        let mesh = shapes::quad(1.0, 1.0);
        let mut seen = vec![0u32; 64];
        for_each_uv_texel(&mesh, 8, |_, t, b| {
            assert!(b.iter().all(|&x| x >= 0.0));
            seen[t] += 1;
        });
        // every texel covered; diagonal texels claimed by both triangles
        assert!(seen.iter().all(|&c| c >= 1));
        assert_eq!(seen.iter().filter(|&&c| c == 2).count(), 8);
    }
}
