//! Image sources for the front view and the six-view grid: a fixture
//! directory and an HTTP JSON service.

use std::path::PathBuf;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::ctxb::Ctxb;
use crate::error::{Error, Result};
use crate::gridops::{assemble_grid, GridLayout, LatentGrid, StepDenoiser};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenKind {
    Front,
    Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenRequest {
    pub kind: GenKind,
    pub prompt: String,
    /// Appended to the prompt on the wire, e.g. ", front view".
    pub view_suffix: String,
    pub depth_png: Vec<u8>,
    pub condition_png: Option<Vec<u8>>,
    pub seed: u64,
    pub steps: u32,
}

impl GenRequest {
    pub fn front(prompt: &str, depth_png: Vec<u8>, seed: u64, steps: u32) -> Self {
        Self {
            kind: GenKind::Front,
            prompt: prompt.to_string(),
            view_suffix: ", front view".to_string(),
            depth_png,
            condition_png: None,
            seed,
            steps,
        }
    }

    pub fn grid(prompt: &str, depth_png: Vec<u8>, condition_png: Vec<u8>, seed: u64, steps: u32) -> Self {
        Self {
            kind: GenKind::Grid,
            prompt: prompt.to_string(),
            view_suffix: String::new(),
            depth_png,
            condition_png: Some(condition_png),
            seed,
            steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, &self.condition_png) {
            (GenKind::Front, Some(_)) => Err(Error::Config("front request must not carry a condition image".into())),
            (GenKind::Grid, None) => Err(Error::Config("grid request needs a condition image".into())),
            _ => Ok(()),
        }
    }

    /// Output size the response must have: that of the depth payload.
    pub fn expected_dims(&self) -> Result<(usize, usize)> {
        let d = Image::from_png(&self.depth_png)?;
        Ok((d.width(), d.height()))
    }

    pub fn full_prompt(&self) -> String {
        format!("{}{}", self.prompt, self.view_suffix)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GenMetadata {
    #[serde(default)]
    pub backend: String,
    #[serde(default)]
    pub steps: u32,
    #[serde(default)]
    pub seed: u64,
    /// Anything else the backend reports (guidance scale and so on).
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenResponse {
    pub image_png: Vec<u8>,
    pub metadata: GenMetadata,
}

impl GenResponse {
    pub fn check_dims(&self, req: &GenRequest) -> Result<()> {
        let (w, h) = req.expected_dims()?;
        let img = Image::from_png(&self.image_png).map_err(|e| Error::Protocol(format!("response image: {e}")))?;
        if (img.width(), img.height()) != (w, h) {
            return Err(Error::Protocol(format!(
                "expected a {w}x{h} image, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        Ok(())
    }
}

pub trait Generator {
    fn id(&self) -> String;
    fn fetch_front(&self, req: &GenRequest) -> Result<GenResponse>;
    fn fetch_grid(&self, req: &GenRequest) -> Result<GenResponse>;
}

/// Serves pre-rendered images from a directory: `front.png`, and either
/// `grid.png` or `view_01.png`..`view_06.png`.
#[derive(Debug, Clone)]
pub struct FixtureBackend {
    pub dir: PathBuf,
    pub layout: GridLayout,
}

impl FixtureBackend {
    pub fn new(dir: impl Into<PathBuf>, layout: GridLayout) -> Self {
        Self { dir: dir.into(), layout }
    }

    fn read(&self, name: &str) -> Result<Vec<u8>> {
        let path = self.dir.join(name);
        std::fs::read(&path).map_err(|e| Error::Protocol(format!("fixture {}: {e}", path.display())))
    }

    fn metadata(&self, req: &GenRequest) -> GenMetadata {
        GenMetadata {
            backend: self.id(),
            steps: req.steps,
            seed: req.seed,
            extra: Default::default(),
        }
    }
}

impl Generator for FixtureBackend {
    fn id(&self) -> String {
        format!("fixture:{}", self.dir.display())
    }

    fn fetch_front(&self, req: &GenRequest) -> Result<GenResponse> {
        if req.kind != GenKind::Front {
            return Err(Error::Config("fetch_front called with a grid request".into()));
        }
        let resp = GenResponse {
            image_png: self.read("front.png")?,
            metadata: self.metadata(req),
        };
        resp.check_dims(req)?;
        Ok(resp)
    }

    fn fetch_grid(&self, req: &GenRequest) -> Result<GenResponse> {
        if req.kind != GenKind::Grid {
            return Err(Error::Config("fetch_grid called with a front request".into()));
        }
        req.validate()?;
        let image_png = if self.dir.join("grid.png").exists() {
            self.read("grid.png")?
        } else {
            let mut tiles = Vec::with_capacity(6);
            for k in 1..=6 {
                let bytes = self.read(&format!("view_{k:02}.png"))?;
                tiles.push(Image::from_png(&bytes)?);
            }
            // tiles are indexed by view id, the layout decides placement
            assemble_grid(&tiles, &self.layout)?.to_png8()?
        };
        let resp = GenResponse {
            image_png,
            metadata: self.metadata(req),
        };
        resp.check_dims(req)?;
        Ok(resp)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireRequest {
    pub prompt: String,
    pub seed: u64,
    pub steps: u32,
    pub depth_png_b64: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub condition_png_b64: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireResponse {
    pub image_png_b64: String,
    #[serde(default)]
    pub metadata: GenMetadata,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireStepRequest {
    pub prompt: String,
    pub seed: u64,
    pub t: usize,
    pub latent_ctxb_b64: String,
    pub depth_png_b64: String,
    pub condition_png_b64: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireStepResponse {
    pub latent_ctxb_b64: String,
}

/// Blocking JSON client for `POST /generate/front`, `/generate/grid` and,
/// in stepwise mode, `/generate/step`.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    pub base_url: String,
    pub timeout: Duration,
    pub retries: u32,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(base_url: &str, timeout: Duration, retries: u32) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            timeout,
            retries,
            client,
        })
    }

    /// POST `body` to `path`, retrying transport failures and 5xx replies.
    pub fn post_json<B: Serialize, R: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<R> {
        let url = format!("{}{}", self.base_url, path);
        let mut attempt = 0;
        loop {
            match self.post_once(&url, body) {
                Err(e) if e.is_retryable() && attempt < self.retries => {
                    attempt += 1;
                    log::warn!("{url}: {e}; retry {attempt}/{}", self.retries);
                    std::thread::sleep(Duration::from_millis(100 << attempt.min(5)));
                }
                other => return other,
            }
        }
    }

    fn post_once<B: Serialize, R: for<'de> Deserialize<'de>>(&self, url: &str, body: &B) -> Result<R> {
        let resp = self
            .client
            .post(url)
            .json(body)
            .send()
            .map_err(|e| Error::Transport(format!("{url}: {e}")))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Error::Transport(format!("{url}: {e}")))?;
        if status.is_server_error() {
            return Err(Error::Transport(format!("{url}: HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Error::Protocol(format!("{url}: HTTP {status}: {}", truncate(&text, 200))));
        }
        serde_json::from_str(&text).map_err(|e| Error::Protocol(format!("{url}: bad response body: {e}")))
    }

    fn generate(&self, path: &str, req: &GenRequest) -> Result<GenResponse> {
        req.validate()?;
        let wire = WireRequest {
            prompt: req.full_prompt(),
            seed: req.seed,
            steps: req.steps,
            depth_png_b64: B64.encode(&req.depth_png),
            condition_png_b64: req.condition_png.as_ref().map(|c| B64.encode(c)),
        };
        let out: WireResponse = self.post_json(path, &wire)?;
        let image_png = B64
            .decode(out.image_png_b64.as_bytes())
            .map_err(|e| Error::Protocol(format!("image_png_b64: {e}")))?;
        let mut metadata = out.metadata;
        if metadata.backend.is_empty() {
            metadata.backend = self.id();
        }
        let resp = GenResponse { image_png, metadata };
        resp.check_dims(req)?;
        Ok(resp)
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl Generator for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.base_url)
    }

    fn fetch_front(&self, req: &GenRequest) -> Result<GenResponse> {
        if req.kind != GenKind::Front {
            return Err(Error::Config("fetch_front called with a grid request".into()));
        }
        self.generate("/generate/front", req)
    }

    fn fetch_grid(&self, req: &GenRequest) -> Result<GenResponse> {
        if req.kind != GenKind::Grid {
            return Err(Error::Config("fetch_grid called with a front request".into()));
        }
        self.generate("/generate/grid", req)
    }
}

/// Per-step denoiser backed by `POST /generate/step`, for in-loop blending.
pub struct HttpStepDenoiser<'a> {
    pub backend: &'a HttpBackend,
    pub prompt: String,
    pub seed: u64,
    pub depth_png: Vec<u8>,
    pub condition_png: Vec<u8>,
}

impl StepDenoiser for HttpStepDenoiser<'_> {
    fn denoise(&mut self, z: &LatentGrid, t_next: usize) -> Result<LatentGrid> {
        let body = WireStepRequest {
            prompt: self.prompt.clone(),
            seed: self.seed,
            t: t_next,
            latent_ctxb_b64: B64.encode(Ctxb::from_image_f64(&z.data).encode()),
            depth_png_b64: B64.encode(&self.depth_png),
            condition_png_b64: B64.encode(&self.condition_png),
        };
        let out: WireStepResponse = self.backend.post_json("/generate/step", &body)?;
        let bytes = B64
            .decode(out.latent_ctxb_b64.as_bytes())
            .map_err(|e| Error::Protocol(format!("latent_ctxb_b64: {e}")))?;
        let data = Ctxb::decode(&bytes)?.to_image()?;
        Ok(LatentGrid { data, t: t_next })
    }
}

/// Parse a generator reply body, as received on the wire.
pub fn parse_wire_response(bytes: &[u8]) -> Result<GenResponse> {
    let out: WireResponse = serde_json::from_slice(bytes)?;
    let image_png = B64
        .decode(out.image_png_b64.as_bytes())
        .map_err(|e| Error::Protocol(format!("image_png_b64: {e}")))?;
    Ok(GenResponse {
        image_png,
        metadata: out.metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn depth(w: usize, h: usize) -> Vec<u8> {
        Image::filled(w, h, &[0.5]).to_png8().unwrap()
    }

    #[test]
    fn fixture_front_is_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let png = Image::from_fn(8, 8, 3, |x, y| vec![x as f64 / 7.0, y as f64 / 7.0, 0.25]).to_png8().unwrap();
        std::fs::write(dir.path().join("front.png"), &png).unwrap();
        let b = FixtureBackend::new(dir.path(), GridLayout::new(4));
        let r = b.fetch_front(&GenRequest::front("ignored", depth(8, 8), 1, 10)).unwrap();
        assert_eq!(r.image_png, png);
        assert_eq!(r.metadata.seed, 1);
    }

    #[test]
    fn fixture_missing_front_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let b = FixtureBackend::new(dir.path(), GridLayout::new(4));
        let e = b.fetch_front(&GenRequest::front("p", depth(8, 8), 0, 1)).unwrap_err();
        assert!(matches!(e, Error::Protocol(_)));
        assert!(e.to_string().contains("front.png"), "{e}");
    }

    #[test]
    fn fixture_grid_from_views() {
        let dir = tempfile::tempdir().unwrap();
        for k in 1..=6 {
            let png = Image::filled(8, 8, &[k as f64 / 6.0; 3]).to_png8().unwrap();
            std::fs::write(dir.path().join(format!("view_{k:02}.png")), png).unwrap();
        }
        let b = FixtureBackend::new(dir.path(), GridLayout::new(8));
        let req = GenRequest::grid("p", depth(24, 16), depth(8, 8), 0, 1);
        let r = b.fetch_grid(&req).unwrap();
        let g = Image::from_png(&r.image_png).unwrap();
        assert_eq!((g.width(), g.height()), (24, 16));
        assert!((g.pixel(20, 12)[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fixture_dimension_mismatch_is_protocol_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("front.png"), depth(8, 8)).unwrap();
        let b = FixtureBackend::new(dir.path(), GridLayout::new(4));
        let e = b.fetch_front(&GenRequest::front("p", depth(16, 16), 0, 1)).unwrap_err();
        assert!(matches!(e, Error::Protocol(_)), "{e}");
    }

    #[test]
    fn request_invariants() {
        let mut r = GenRequest::front("p", vec![], 0, 1);
        assert!(r.validate().is_ok());
        r.condition_png = Some(vec![]);
        assert!(r.validate().is_err());
        let mut g = GenRequest::grid("p", vec![], vec![], 0, 1);
        assert!(g.validate().is_ok());
        g.condition_png = None;
        assert!(g.validate().is_err());
    }

    #[test]
    fn wire_response_parses_metadata() {
        let body = serde_json::json!({
            "image_png_b64": B64.encode(b"abc"),
            "metadata": {"backend": "x", "steps": 3, "seed": 9, "guidance_scale": 10.0}
        });
        let r = parse_wire_response(body.to_string().as_bytes()).unwrap();
        assert_eq!(r.image_png, b"abc");
        assert_eq!(r.metadata.steps, 3);
        assert_eq!(r.metadata.extra["guidance_scale"], 10.0);
    }
}
