//! Shared helpers and independent reference computations for the
//! integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use atlasforge::geometry::{canonical_viewpoints, parse_obj_bytes, shapes, CameraConfig, Mesh};
use atlasforge::gridops::{assemble_grid, GridLayout};
use atlasforge::image::Image;
use atlasforge::pipeline::RunConfig;
use atlasforge::raster::{render_textured, TextureAtlas, DEFAULT_BACKGROUND};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/quadcard")
}

pub const QUADCARD_SIZE: usize = 128;

/// Ground-truth atlas of the card: a warm ramp on the front chart (left
/// half), a cool ramp with a stripe on the back chart (right half).
pub fn quadcard_atlas(r: usize) -> TextureAtlas {
    TextureAtlas::from_image(Image::from_fn(r, r, 3, |x, y| {
        let u = (x as f64 + 0.5) / r as f64;
        let v = (y as f64 + 0.5) / r as f64;
        if u < 0.5 {
            vec![0.85, 0.3 + 0.5 * v, 0.1 + 0.3 * (2.0 * u)]
        } else {
            let s = if ((u - 0.5) * 8.0) as usize % 2 == 0 { 0.1 } else { 0.0 };
            vec![0.1 + s, 0.3 + 0.4 * (2.0 * (u - 0.5)), 0.8 - 0.3 * v]
        }
    }))
    .unwrap()
}

pub fn quadcard_camera() -> CameraConfig {
    CameraConfig {
        image_size: QUADCARD_SIZE,
        tile_size: QUADCARD_SIZE,
        ..Default::default()
    }
}

/// The card exactly as the pipeline sees it after loading the OBJ.
pub fn quadcard_mesh() -> Mesh {
    parse_obj_bytes(shapes::to_obj(&shapes::card(1.6, 1.0)).as_bytes())
        .unwrap()
        .normalized()
}

pub fn quadcard_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&fixture_dir().join("run.json")).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

/// (file name, bytes) of every fixture file.
pub fn quadcard_files() -> Vec<(&'static str, Vec<u8>)> {
    let mesh = quadcard_mesh();
    let cam = quadcard_camera();
    let atlas = quadcard_atlas(256);
    let views = canonical_viewpoints(&cam).unwrap();
    let front = render_textured(&mesh, &views[0], &atlas, DEFAULT_BACKGROUND).unwrap();
    let tiles: Vec<Image> = views[1..]
        .iter()
        .map(|v| render_textured(&mesh, v, &atlas, DEFAULT_BACKGROUND).unwrap())
        .collect();
    let grid = assemble_grid(&tiles, &GridLayout::new(cam.tile_size)).unwrap();
    let run = serde_json::json!({
        "mesh": "card.obj",
        "prompt": "a playing card",
        "atlas_resolution": 128,
        "camera": { "image_size": QUADCARD_SIZE, "tile_size": QUADCARD_SIZE },
        "backend": { "kind": "fixture", "dir": "." },
        "seed": 7,
        "output_dir": "run",
        "preview_size": 128
    });
    vec![
        ("card.obj", shapes::to_obj(&shapes::card(1.6, 1.0)).into_bytes()),
        ("front.png", front.to_png8().unwrap()),
        ("grid.png", grid.to_png8().unwrap()),
        ("run.json", serde_json::to_vec_pretty(&run).unwrap()),
    ]
}

/// Bilinear lookup written out from the texel-center convention:
/// texel (i, j) sits at u = (i + 0.5) / w, v = 1 - (j + 0.5) / h.
pub fn ref_sample(img: &Image, uv: [f64; 2]) -> Vec<f64> {
    let (w, h, c) = img.dims();
    let x = (uv[0] * w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
    let y = ((1.0 - uv[1]) * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    (0..c)
        .map(|k| {
            let p = |i: usize, j: usize| img.pixel(i, j)[k];
            p(x0, y0) * (1.0 - fx) * (1.0 - fy)
                + p(x1, y0) * fx * (1.0 - fy)
                + p(x0, y1) * (1.0 - fx) * fy
                + p(x1, y1) * fx * fy
        })
        .collect()
}

/// Texels with a non-zero weight in the bilinear lookup of `uv`.
pub fn ref_taps(uv: [f64; 2], w: usize, h: usize) -> Vec<(usize, f64)> {
    let x = (uv[0] * w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
    let y = ((1.0 - uv[1]) * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let mut out: Vec<(usize, f64)> = Vec::new();
    for (i, j, b) in [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ] {
        if b > 0.0 {
            match out.iter_mut().find(|e| e.0 == j * w + i) {
                Some(e) => e.1 += b,
                None => out.push((j * w + i, b)),
            }
        }
    }
    out
}

/// PSNR (peak 1) over the pixels selected by `keep`, computed directly.
pub fn ref_psnr(a: &Image, b: &Image, keep: impl Fn(usize) -> bool) -> f64 {
    let c = a.channels();
    let mut se = 0.0;
    let mut n = 0usize;
    for i in 0..a.width() * a.height() {
        if keep(i) {
            for k in 0..c {
                let d = a.data()[i * c + k] - b.data()[i * c + k];
                se += d * d;
                n += 1;
            }
        }
    }
    10.0 * (1.0 / (se / n as f64)).log10()
}

/// Smooth three-channel test atlas.
pub fn smooth_atlas(r: usize) -> TextureAtlas {
    TextureAtlas::from_image(Image::from_fn(r, r, 3, |x, y| {
        let (u, v) = (x as f64 / r as f64, y as f64 / r as f64);
        vec![
            0.5 + 0.4 * (6.0 * u).sin(),
            0.5 + 0.4 * (4.0 * v).cos(),
            0.3 + 0.5 * u * v,
        ]
    }))
    .unwrap()
}
