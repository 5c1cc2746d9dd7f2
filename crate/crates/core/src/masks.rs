//! Face-view masks, new-region masks and keep/refine/generate partitions.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Raster};
use crate::raster::{sample_scalar, RenderBuffers};

/// Coverage weight above which a texel counts as learned.
pub const LEARNED_THRESHOLD: f64 = 0.5;

/// Per view, which foreground pixels belong to a view that sees their face
/// at its maximum z-normal.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceViewMask {
    pub masks: Vec<Raster<bool>>,
    /// Lowest-numbered maximizing view per face, `None` if never visible.
    pub winner: Vec<Option<usize>>,
}

/// Binary face-view masks.
///
/// `face_znormals[v][f]` is the z-normal of face `f` in view `v`. A
/// foreground pixel of view `v` covering face `f` stays true unless `f`
/// appears in another view with a strictly larger z-normal. Ties keep every
/// maximizer.
pub fn binary_face_view_masks(face_index: &[Raster<i32>], face_znormals: &[Vec<f64>]) -> Result<FaceViewMask> {
    check_inputs(face_index, face_znormals)?;
    let faces = face_znormals.first().map_or(0, |z| z.len());

    let mut zmax = vec![f64::NEG_INFINITY; faces];
    let mut winner: Vec<Option<usize>> = vec![None; faces];
    let mut present = vec![false; faces];
    for (v, fi) in face_index.iter().enumerate() {
        present.iter_mut().for_each(|p| *p = false);
        for &f in fi.data() {
            if f >= 0 {
                present[f as usize] = true;
            }
        }
        for f in 0..faces {
            if present[f] {
                let z = face_znormals[v][f];
                if winner[f].is_none() || z > zmax[f] {
                    winner[f] = Some(v);
                }
                zmax[f] = zmax[f].max(z);
            }
        }
    }

    let masks = face_index
        .iter()
        .enumerate()
        .map(|(v, fi)| {
            fi.map(|&f| f >= 0 && !(face_znormals[v][f as usize] < zmax[f as usize]))
        })
        .collect();
    Ok(FaceViewMask { masks, winner })
}

/// Line-by-line transcription of the triple loop: gather pixel lists per
/// (face, view), then clear the pixels of every view that falls short of the
/// face's maximum. Kept as the reference for [`binary_face_view_masks`].
pub fn binary_face_view_masks_reference(
    face_index: &[Raster<i32>],
    face_znormals: &[Vec<f64>],
) -> Result<Vec<Raster<bool>>> {
    check_inputs(face_index, face_znormals)?;
    let mut groups: HashMap<i32, BTreeMap<usize, Vec<(usize, usize)>>> = HashMap::new();
    let mut mask: Vec<Raster<bool>> = face_index.iter().map(|fi| fi.map(|&f| f >= 0)).collect();
    for (v, fi) in face_index.iter().enumerate() {
        for i in 0..fi.height() {
            for j in 0..fi.width() {
                let f = *fi.get(j, i);
                if f >= 0 {
                    groups.entry(f).or_default().entry(v).or_default().push((i, j));
                }
            }
        }
    }
    for (f, per_view) in &groups {
        if per_view.is_empty() {
            continue;
        }
        let zs: Vec<f64> = per_view.keys().map(|&v| face_znormals[v][*f as usize]).collect();
        let zmax = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (&v, pixels) in per_view {
            if face_znormals[v][*f as usize] < zmax {
                for &(i, j) in pixels {
                    mask[v].set(j, i, false);
                }
            }
        }
    }
    Ok(mask)
}

fn check_inputs(face_index: &[Raster<i32>], face_znormals: &[Vec<f64>]) -> Result<()> {
    if face_index.len() != face_znormals.len() {
        return Err(Error::Shape(format!(
            "{} face-index buffers but {} z-normal tables",
            face_index.len(),
            face_znormals.len()
        )));
    }
    let faces = face_znormals.first().map_or(0, |z| z.len());
    if face_znormals.iter().any(|z| z.len() != faces) {
        return Err(Error::Shape("z-normal tables differ in length".into()));
    }
    for fi in face_index {
        if let Some(&f) = fi.data().iter().find(|&&f| f >= faces as i32 || f < -1) {
            return Err(Error::Shape(format!("face index {f} outside 0..{faces}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionKind {
    NewRegion,
    Keep,
    Refine,
    Generate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub kind: RegionKind,
    pub mask: Raster<bool>,
}

/// New-region mask at image and latent resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct NewRegionMask {
    pub image: RegionMask,
    pub latent: Raster<bool>,
}

/// Foreground pixels whose texels are not yet learned: `object_mask AND NOT
/// (sampled coverage > 0.5)`.
pub fn new_region_mask(buffers: &RenderBuffers, coverage: &Raster<f64>, latent_factor: usize) -> Result<NewRegionMask> {
    if coverage.width() != coverage.height() {
        return Err(Error::Shape("coverage plane must be square".into()));
    }
    let cov = coverage.to_image();
    let mut mask = buffers.object_mask.clone();
    for i in buffers.foreground() {
        if sample_scalar(&cov, buffers.uv.data()[i]) > LEARNED_THRESHOLD {
            mask.data_mut()[i] = false;
        }
    }
    let latent = downsample_mask(&mask, latent_factor)?;
    Ok(NewRegionMask {
        image: RegionMask {
            kind: RegionKind::NewRegion,
            mask,
        },
        latent,
    })
}

/// Area-average `factor`×`factor` blocks and keep those more than half set.
pub fn downsample_mask(mask: &Raster<bool>, factor: usize) -> Result<Raster<bool>> {
    if factor == 0 || mask.width() % factor != 0 || mask.height() % factor != 0 {
        return Err(Error::Shape(format!(
            "{}x{} mask not divisible by factor {factor}",
            mask.width(),
            mask.height()
        )));
    }
    let (w, h) = (mask.width() / factor, mask.height() / factor);
    let mut out = Raster::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let mut n = 0usize;
            for dy in 0..factor {
                for dx in 0..factor {
                    n += *mask.get(x * factor + dx, y * factor + dy) as usize;
                }
            }
            out.set(x, y, 2 * n > factor * factor);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionThresholds {
    pub seen: f64,
    pub refine: f64,
}

impl Default for RegionThresholds {
    fn default() -> Self {
        Self {
            seen: 1e-4,
            refine: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeepRefineGenerate {
    pub keep: RegionMask,
    pub refine: RegionMask,
    pub generate: RegionMask,
}

/// Partition the foreground by comparing current z-normals against the
/// cached per-pixel maximum of earlier views.
pub fn keep_refine_generate(
    object_mask: &Raster<bool>,
    current_znormal: &Raster<f64>,
    cached_max: &Raster<f64>,
    thresholds: &RegionThresholds,
) -> Result<KeepRefineGenerate> {
    let (w, h) = (object_mask.width(), object_mask.height());
    for (name, r) in [("current", current_znormal), ("cached", cached_max)] {
        if r.width() != w || r.height() != h {
            return Err(Error::Shape(format!("{name} z-normal raster size mismatch")));
        }
    }
    let mut keep = Raster::filled(w, h, false);
    let mut refine = Raster::filled(w, h, false);
    let mut generate = Raster::filled(w, h, false);
    for i in 0..w * h {
        if !object_mask.data()[i] {
            continue;
        }
        let (cur, cached) = (current_znormal.data()[i], cached_max.data()[i]);
        if !(cached >= thresholds.seen) {
            generate.data_mut()[i] = true;
        } else if cur > cached + thresholds.refine {
            refine.data_mut()[i] = true;
        } else {
            keep.data_mut()[i] = true;
        }
    }
    Ok(KeepRefineGenerate {
        keep: RegionMask { kind: RegionKind::Keep, mask: keep },
        refine: RegionMask { kind: RegionKind::Refine, mask: refine },
        generate: RegionMask { kind: RegionKind::Generate, mask: generate },
    })
}

/// Atlas-space cache of the best z-normal seen so far, used to derive
/// `cached_max` for the next view.
#[derive(Debug, Clone, PartialEq)]
pub struct ZNormalCache {
    pub texels: Image,
}

impl ZNormalCache {
    pub fn new(resolution: usize) -> Self {
        Self {
            texels: Image::new(resolution, resolution, 1),
        }
    }

    /// Per-pixel cached maximum for `buffers` (0 on background).
    pub fn project(&self, buffers: &RenderBuffers) -> Raster<f64> {
        let mut out = Raster::filled(buffers.width(), buffers.height(), 0.0);
        for i in buffers.foreground() {
            out.data_mut()[i] = sample_scalar(&self.texels, buffers.uv.data()[i]);
        }
        out
    }

    /// Raise every texel touched by a foreground pixel of `buffers` to at
    /// least that pixel's z-normal.
    pub fn update(&mut self, buffers: &RenderBuffers) {
        let r = self.texels.width();
        for i in buffers.foreground() {
            let zn = buffers.znormal.data()[i];
            for (t, b) in crate::raster::bilinear_taps(buffers.uv.data()[i], r, r) {
                if b > 0.0 {
                    let cur = &mut self.texels.data_mut()[t];
                    *cur = cur.max(zn);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fi(w: usize, h: usize, data: Vec<i32>) -> Raster<i32> {
        Raster::from_vec(w, h, data).unwrap()
    }

    #[test]
    fn single_view_face_is_true() {
        let f = vec![fi(2, 1, vec![0, -1])];
        let m = binary_face_view_masks(&f, &[vec![0.4]]).unwrap();
        assert_eq!(m.masks[0].data(), &[true, false]);
        assert_eq!(m.winner, vec![Some(0)]);
    }

    #[test]
    fn lower_znormal_view_cleared() {
        let f = vec![fi(2, 1, vec![0, 0]), fi(2, 1, vec![0, -1])];
        let z = vec![vec![0.9], vec![0.3]];
        let m = binary_face_view_masks(&f, &z).unwrap();
        assert_eq!(m.masks[0].data(), &[true, true]);
        assert_eq!(m.masks[1].data(), &[false, false]);
        assert_eq!(m.winner[0], Some(0));
        assert_eq!(binary_face_view_masks_reference(&f, &z).unwrap(), m.masks);
    }

    #[test]
    fn ties_keep_both() {
        let f = vec![fi(1, 1, vec![0]), fi(1, 1, vec![0])];
        let z = vec![vec![0.7], vec![0.7]];
        let m = binary_face_view_masks(&f, &z).unwrap();
        assert!(m.masks.iter().all(|r| r.data()[0]));
        assert_eq!(m.winner[0], Some(0));
    }

    #[test]
    fn invisible_face_absent() {
        // face 1's z-normal is larger in view 1, but it never appears there
        let f = vec![fi(2, 1, vec![1, 0]), fi(2, 1, vec![0, 0])];
        let z = vec![vec![0.2, 0.5], vec![0.6, 0.99]];
        let m = binary_face_view_masks(&f, &z).unwrap();
        assert_eq!(m.masks[0].data(), &[true, false]);
        assert_eq!(m.winner, vec![Some(1), Some(0)]);
    }

    #[test]
    fn rejects_bad_index() {
        let f = vec![fi(1, 1, vec![3])];
        assert!(binary_face_view_masks(&f, &[vec![0.1]]).is_err());
        assert!(binary_face_view_masks_reference(&f, &[vec![0.1]]).is_err());
    }

    #[test]
    fn partition_cases() {
        let w = 4;
        let obj = Raster::from_vec(w, 1, vec![true, true, true, false]).unwrap();
        let cur = Raster::from_vec(w, 1, vec![0.5, 0.5, 0.5, 0.9]).unwrap();
        let th = RegionThresholds::default();
        let k = keep_refine_generate(&obj, &cur, &Raster::filled(w, 1, 0.0), &th).unwrap();
        assert_eq!(k.generate.mask, obj);
        let k = keep_refine_generate(&obj, &cur, &cur, &th).unwrap();
        assert_eq!(k.keep.mask, obj);
        let cached = Raster::from_vec(w, 1, vec![0.3, 0.5, 0.0, 0.0]).unwrap();
        let k = keep_refine_generate(&obj, &cur, &cached, &th).unwrap();
        assert_eq!(k.refine.mask.data(), &[true, false, false, false]);
        assert_eq!(k.keep.mask.data(), &[false, true, false, false]);
        assert_eq!(k.generate.mask.data(), &[false, false, true, false]);
    }

    #[test]
    fn downsample_majority() {
        let m = Raster::from_vec(4, 2, vec![true, true, false, true, true, false, false, false]).unwrap();
        let d = downsample_mask(&m, 2).unwrap();
        assert_eq!(d.data(), &[true, false]);
        assert!(downsample_mask(&m, 3).is_err());
    }
}
