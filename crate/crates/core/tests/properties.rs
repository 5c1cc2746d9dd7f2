//! Invariants checked over generated inputs.

mod common;

use proptest::prelude::*;

use atlasforge::ctxb::{Ctxb, Payload};
use atlasforge::geometry::{parse_obj_bytes, shapes, CameraConfig, Viewpoint};
use atlasforge::gridops::{
    add_noise, assemble_grid, assemble_mask_grid, blend_latents, split_grid, GridLayout, LatentCodec, LatentGrid,
    NoiseSchedule,
};
use atlasforge::image::{Image, Raster};
use atlasforge::masks::{
    binary_face_view_masks, binary_face_view_masks_reference, downsample_mask, keep_refine_generate,
    RegionThresholds,
};
use atlasforge::metatex::{view_weight_raster, MetaTexture};
use atlasforge::projectback::{project_back, ProjectBackConfig, ProjectBackProblem, ViewTarget};
use atlasforge::raster::{bilinear_taps, rasterize_buffers, sample_bilinear, TextureAtlas, DEPTH_FLOOR};

use common::{ref_sample, ref_taps};

fn image(w: usize, h: usize, c: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(-2.0f64..2.0, w * h * c).prop_map(move |d| Image::from_vec(w, h, c, d).unwrap())
}

fn bool_raster(w: usize, h: usize) -> impl Strategy<Value = Raster<bool>> {
    prop::collection::vec(any::<bool>(), w * h).prop_map(move |d| Raster::from_vec(w, h, d).unwrap())
}

fn latent(w: usize, h: usize, t: usize) -> impl Strategy<Value = LatentGrid> {
    image(w, h, 4).prop_map(move |data| LatentGrid { data, t })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn taps_are_a_partition_of_unity(u in -0.5f64..1.5, v in -0.5f64..1.5, w in 1usize..40, h in 1usize..40) {
        let taps = bilinear_taps([u, v], w, h);
        let sum: f64 = taps.iter().map(|t| t.1).sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(taps.iter().all(|t| t.1 >= 0.0 && t.0 < w * h));
        // merged by texel, the library's taps agree with the reference ones
        let mut merged: Vec<(usize, f64)> = Vec::new();
        for (t, b) in taps {
            if b > 0.0 {
                match merged.iter_mut().find(|e| e.0 == t) {
                    Some(e) => e.1 += b,
                    None => merged.push((t, b)),
                }
            }
        }
        let mut reference = ref_taps([u, v], w, h);
        merged.sort_by_key(|e| e.0);
        reference.sort_by_key(|e| e.0);
        prop_assert_eq!(merged.len(), reference.len());
        for (a, b) in merged.iter().zip(&reference) {
            prop_assert_eq!(a.0, b.0);
            prop_assert!((a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_matches_reference(img in image(7, 5, 3), u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let mut out = [0.0; 3];
        sample_bilinear(&img, [u, v], &mut out);
        for (a, b) in out.iter().zip(ref_sample(&img, [u, v])) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_stays_within_tap_range(img in image(6, 6, 1), u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let mut out = [0.0];
        sample_bilinear(&img, [u, v], &mut out);
        let taps = bilinear_taps([u, v], 6, 6);
        let vals = taps.iter().filter(|t| t.1 > 0.0).map(|t| img.data()[t.0]);
        let lo = vals.clone().fold(f64::INFINITY, f64::min);
        let hi = vals.fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(out[0] >= lo && out[0] <= hi);
    }

    #[test]
    fn regions_partition_the_object(
        mask in bool_raster(9, 7),
        cur in prop::collection::vec(-1.0f64..1.0, 63),
        cached in prop::collection::vec(prop_oneof![Just(0.0), -1.0f64..1.0], 63),
        seen in 0.0f64..0.1,
        refine in 0.0f64..0.5,
    ) {
        let cur = Raster::from_vec(9, 7, cur).unwrap();
        let cached = Raster::from_vec(9, 7, cached).unwrap();
        let parts = keep_refine_generate(&mask, &cur, &cached, &RegionThresholds { seen, refine }).unwrap();
        for i in 0..63 {
            let n = [&parts.keep, &parts.refine, &parts.generate]
                .iter()
                .filter(|r| r.mask.data()[i])
                .count();
            prop_assert_eq!(n, mask.data()[i] as usize);
        }
    }

    #[test]
    fn blend_pins_and_keeps(z in latent(6, 4, 3), gt in latent(6, 4, 3), m in bool_raster(6, 4)) {
        let out = blend_latents(&z, &gt, &m).unwrap();
        for i in 0..24 {
            let want = if m.data()[i] { z.data.at(i) } else { gt.data.at(i) };
            prop_assert_eq!(out.data.at(i), want);
        }
        // blending again changes nothing
        prop_assert_eq!(&blend_latents(&out, &gt, &m).unwrap(), &out);
        prop_assert_eq!(&blend_latents(&z, &z, &m).unwrap(), &z);
    }

    #[test]
    fn add_noise_at_zero_is_identity(z in latent(5, 3, 0), noise in image(5, 3, 4)) {
        let s = NoiseSchedule::cosine(12);
        prop_assert_eq!(add_noise(&z, 0, &noise, &s).unwrap(), z);
    }

    #[test]
    fn grid_round_trip(tiles in prop::collection::vec(image(5, 5, 3), 6), order in Just([1usize, 2, 3, 4, 5, 6]).prop_shuffle()) {
        let layout = GridLayout { order, ..GridLayout::new(5) };
        let grid = assemble_grid(&tiles, &layout).unwrap();
        prop_assert_eq!((grid.width(), grid.height()), (15, 10));
        prop_assert_eq!(split_grid(&grid, &layout).unwrap(), tiles);
    }

    #[test]
    fn mask_grid_follows_image_grid(masks in prop::collection::vec(bool_raster(4, 4), 6)) {
        let layout = GridLayout::new(4);
        let mg = assemble_mask_grid(&masks, &layout).unwrap();
        let images: Vec<Image> = masks.iter().map(|m| m.to_image()).collect();
        prop_assert_eq!(mg.to_image(), assemble_grid(&images, &layout).unwrap());
    }

    #[test]
    fn codec_is_exact_on_block_constant_images(blocks in image(3, 2, 3)) {
        let codec = LatentCodec::default();
        let img = Image::from_fn(24, 16, 3, |x, y| blocks.pixel(x / 8, y / 8).to_vec());
        let z = codec.encode(&img).unwrap();
        prop_assert_eq!(&z.data.with_channels(3), &blocks);
        prop_assert!(z.data.data().chunks(4).all(|p| p[3] == 0.0));
    }

    #[test]
    fn downsampled_mask_is_majority(m in bool_raster(8, 8)) {
        let d = downsample_mask(&m, 2).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let n = (0..4).filter(|k| *m.get(2 * x + k % 2, 2 * y + k / 2)).count();
                prop_assert_eq!(*d.get(x, y), n > 2);
            }
        }
    }

    #[test]
    fn face_view_masks_match_reference(
        faces in prop::collection::vec(prop::collection::vec(-1i32..6, 30), 1..5),
        zn in prop::collection::vec(prop::collection::vec(prop_oneof![-1.0f64..1.0, Just(0.5)], 6), 4),
    ) {
        let fi: Vec<Raster<i32>> = faces.into_iter().map(|d| Raster::from_vec(6, 5, d).unwrap()).collect();
        let zn = zn[..fi.len()].to_vec();
        let fast = binary_face_view_masks(&fi, &zn).unwrap();
        prop_assert_eq!(fast.masks, binary_face_view_masks_reference(&fi, &zn).unwrap());
    }

    #[test]
    fn view_weights_are_bounded(alpha in 0.1f64..1e3, az in -180.0f64..180.0, el in -60.0f64..60.0) {
        let mesh = shapes::uv_sphere(8, 4);
        let v = Viewpoint::new(1, az, el, &CameraConfig::default(), 24).unwrap();
        let b = rasterize_buffers(&mesh, &v).unwrap();
        let meta = MetaTexture::zeros(16);
        let w = view_weight_raster(&meta, &b, alpha);
        for i in 0..w.len() {
            let x = w.data()[i];
            if b.object_mask.data()[i] {
                // large alpha may underflow to zero
                prop_assert!((0.0..=1.0).contains(&x));
                let want = (-alpha * b.znormal.data()[i].abs()).exp();
                prop_assert!((x - want).abs() <= 1e-12);
            } else {
                prop_assert_eq!(x, 0.0);
            }
        }
    }

    #[test]
    fn depth_lies_in_range(az in -180.0f64..180.0, el in -80.0f64..80.0) {
        let mesh = shapes::cube();
        let v = Viewpoint::new(2, az, el, &CameraConfig::default(), 32).unwrap();
        let b = rasterize_buffers(&mesh, &v).unwrap();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..b.depth.len() {
            let d = b.depth.data()[i];
            if b.object_mask.data()[i] {
                prop_assert!((DEPTH_FLOOR..=1.0).contains(&d));
                lo = lo.min(d);
                hi = hi.max(d);
                prop_assert!(b.face_index.data()[i] >= 0);
                prop_assert!(b.znormal.data()[i] >= -1e-12);
            } else {
                prop_assert_eq!(d, 0.0);
                prop_assert_eq!(b.face_index.data()[i], -1);
            }
        }
        if lo <= hi {
            prop_assert_eq!(hi, 1.0);
        }
    }

    #[test]
    fn ctxb_round_trip(w in 1u32..6, h in 1u32..6, c in 1u32..4, seed in any::<u64>(), kind in 0u8..4) {
        let n = (w * h * c) as usize;
        let payload = match kind {
            0 => Payload::I32((0..n).map(|i| (i as i64).wrapping_mul(seed as i64) as i32).collect()),
            1 => Payload::F32((0..n).map(|i| (i as f32) * 0.5 - seed as f32).collect()),
            2 => Payload::F64((0..n).map(|i| (i as f64).sin() * seed as f64).collect()),
            _ => Payload::U8((0..n).map(|i| (i as u64 ^ seed) as u8).collect()),
        };
        let blob = Ctxb { width: w, height: h, channels: c, payload };
        prop_assert_eq!(Ctxb::decode(&blob.encode()).unwrap(), blob);
    }

    #[test]
    fn ctxb_decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64), header in any::<bool>()) {
        let mut b = bytes;
        if header && b.len() >= 4 {
            b[..4].copy_from_slice(b"CTXB");
        }
        let _ = Ctxb::decode(&b);
    }

    #[test]
    fn obj_parse_never_panics(text in "(v|vt|vn|f|o|#| |[0-9]|-|\\.|/|\n){0,200}") {
        let _ = parse_obj_bytes(text.as_bytes());
    }
}

fn conflict_problem(scale: f64) -> ProjectBackProblem {
    let mesh = shapes::quad(1.2, 1.2);
    let v = Viewpoint::new(0, 0.0, 0.0, &CameraConfig::default(), 32).unwrap();
    let b = rasterize_buffers(&mesh, &v).unwrap();
    let view = |color: [f64; 3], w: f64| ViewTarget {
        buffers: b.clone(),
        target: Image::filled(32, 32, &color),
        weights: b.object_mask.map(|&m| if m { w * scale } else { 0.0 }),
    };
    ProjectBackProblem {
        views: vec![view([0.2, 0.4, 0.9], 0.7), view([0.8, 0.1, 0.3], 0.3)],
        initial: TextureAtlas::filled(16, &[0.5; 3]),
        config: ProjectBackConfig {
            iterations: 60,
            ..Default::default()
        },
        frozen: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn uniform_weight_scaling_changes_nothing(scale in 0.01f64..100.0) {
        let base = project_back(&conflict_problem(1.0)).unwrap();
        let scaled = project_back(&conflict_problem(scale)).unwrap();
        for (a, b) in base.atlas.texels.data().iter().zip(scaled.atlas.texels.data()) {
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        prop_assert!((base.report.final_loss - scaled.report.final_loss).abs() < 1e-9);
    }
}
