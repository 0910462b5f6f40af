//! Backend contract plus the deterministic offline mock.

use std::collections::HashMap;
use std::sync::Mutex;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::edges::EdgeMap;
use crate::error::{Error, Result};

use super::{GenerationParams, Method};

/// What a backend announces at handshake.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub name: String,
    pub version: String,
    pub methods: Vec<Method>,
}

/// One fully materialized generation call.
#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub method: Method,
    pub prompt: String,
    pub edge_map: Option<EdgeMap>,
    pub init_image: Option<RgbImage>,
    pub reference_image: Option<RgbImage>,
    pub subject_texts: Option<(String, String)>,
    pub seed: u64,
    pub params: GenerationParams,
}

impl GenerationRequest {
    /// Enforce the per-method field contract both ways: nothing missing,
    /// nothing extraneous.
    pub fn validate(&self) -> Result<()> {
        let contract = |message: String| Error::BackendContract {
            method: self.method,
            message,
        };
        self.params.validate()?;
        if self.prompt.is_empty() {
            return Err(contract("empty prompt".into()));
        }
        let m = self.method;
        let fields = [
            (m.needs_edges(), self.edge_map.is_some(), "edge_map"),
            (m.needs_init_image(), self.init_image.is_some(), "init_image"),
            (m.needs_reference(), self.reference_image.is_some(), "reference_image"),
            (m.needs_reference(), self.subject_texts.is_some(), "subject_texts"),
            (m.needs_strength(), self.params.strength.is_some(), "params.strength"),
        ];
        for (needed, present, name) in fields {
            if needed && !present {
                return Err(contract(format!("missing {name}")));
            }
            if !needed && present {
                return Err(contract(format!("unexpected {name}")));
            }
        }
        Ok(())
    }

    /// Output size: conditioning inputs pin the resolution exactly (they are
    /// already at generation resolution); otherwise the rule decides.
    pub fn output_dimensions(&self) -> (u32, u32) {
        if let Some(edge) = &self.edge_map {
            return (edge.width, edge.height);
        }
        if let Some(init) = &self.init_image {
            return (init.width(), init.height());
        }
        self.params.resolution_rule.resolve(512, 512)
    }

    /// Digest of every field, including raw image bytes.
    fn content_digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.method.name().as_bytes());
        hasher.update([0]);
        hasher.update(self.prompt.as_bytes());
        hasher.update([0]);
        hasher.update(self.seed.to_le_bytes());
        hasher.update(self.params.digest().as_bytes());
        if let Some((source, target)) = &self.subject_texts {
            hasher.update(source.as_bytes());
            hasher.update([0]);
            hasher.update(target.as_bytes());
        }
        for image in [&self.init_image, &self.reference_image] {
            if let Some(image) = image {
                hasher.update(image.as_raw());
            }
            hasher.update([0]);
        }
        if let Some(edge) = &self.edge_map {
            hasher.update(&edge.data);
        }
        hasher.finalize().into()
    }
}

/// A generation service. Implementations must be callable from multiple
/// worker threads at once.
pub trait GenerationBackend: Sync {
    fn handshake(&self) -> Result<BackendInfo>;

    /// Produce one image; deterministic given the full request.
    fn generate(&self, request: &GenerationRequest) -> Result<RgbImage>;
}

/// Offline stand-in for a diffusion service: hash-derived noise, a prompt
/// digest stamp in the top-left corner, and the edge map overlaid in white.
/// Byte-identical output for byte-identical requests.
#[derive(Debug, Default, Clone)]
pub struct MockBackend;

impl MockBackend {
    pub const NAME: &'static str = "mock";
}

impl GenerationBackend for MockBackend {
    fn handshake(&self) -> Result<BackendInfo> {
        Ok(BackendInfo {
            name: Self::NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            methods: Method::ALL.to_vec(),
        })
    }

    fn generate(&self, request: &GenerationRequest) -> Result<RgbImage> {
        use rand::{Rng, SeedableRng};

        request.validate()?;
        let digest = request.content_digest();
        let noise_seed = u64::from_le_bytes(digest[..8].try_into().unwrap());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(noise_seed);

        let (w, h) = request.output_dimensions();
        let mut img = RgbImage::new(w, h);
        for pixel in img.pixels_mut() {
            *pixel = Rgb([rng.random(), rng.random(), rng.random()]);
        }

        // 8x8 grid of 4px blocks encoding the prompt digest
        let prompt_digest: [u8; 32] = Sha256::digest(request.prompt.as_bytes()).into();
        for bit in 0..64usize {
            let on = prompt_digest[bit / 8] >> (bit % 8) & 1 == 1;
            let value = if on { 255 } else { 0 };
            let (bx, by) = ((bit % 8) as u32 * 4, (bit / 8) as u32 * 4);
            for y in by..(by + 4).min(h) {
                for x in bx..(bx + 4).min(w) {
                    img.put_pixel(x, y, Rgb([value, value, value]));
                }
            }
        }

        if let Some(edge) = &request.edge_map {
            for y in 0..h {
                for x in 0..w {
                    if edge.pixel(x, y) == 255 {
                        img.put_pixel(x, y, Rgb([255, 255, 255]));
                    }
                }
            }
        }
        Ok(img)
    }
}

/// Test double wrapping another backend: jobs whose seed appears in the
/// failure plan fail with a retryable error that many times, then pass
/// through. Attempt counting is thread-safe.
pub struct FlakyBackend<B> {
    inner: B,
    remaining: Mutex<HashMap<u64, u32>>,
}

impl<B> FlakyBackend<B> {
    pub fn new(inner: B, failures: impl IntoIterator<Item = (u64, u32)>) -> Self {
        Self {
            inner,
            remaining: Mutex::new(failures.into_iter().collect()),
        }
    }
}

impl<B: GenerationBackend> GenerationBackend for FlakyBackend<B> {
    fn handshake(&self) -> Result<BackendInfo> {
        self.inner.handshake()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<RgbImage> {
        {
            let mut remaining = self.remaining.lock().unwrap();
            if let Some(left) = remaining.get_mut(&request.seed) {
                if *left > 0 {
                    *left -= 1;
                    return Err(Error::Backend {
                        message: format!("scripted failure for seed {}", request.seed),
                        retryable: true,
                    });
                }
            }
        }
        self.inner.generate(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edges::{Detector, DetectorParams};

    fn edge_map(w: u32, h: u32, column: u32) -> EdgeMap {
        let mut data = vec![0u8; (w * h) as usize];
        for y in 0..h {
            data[(y * w + column) as usize] = 255;
        }
        EdgeMap {
            width: w,
            height: h,
            data,
            source_image_id: "src".into(),
            detector: Detector::Canny,
            params: DetectorParams { low: 10, high: 30, gaussian_sigma: 1.4 },
        }
    }

    fn saspa_request() -> GenerationRequest {
        GenerationRequest {
            method: Method::Saspa,
            prompt: "A jet airplane on a runway".into(),
            edge_map: Some(edge_map(64, 48, 20)),
            init_image: None,
            reference_image: Some(RgbImage::from_pixel(16, 16, Rgb([9, 120, 33]))),
            subject_texts: Some(("Airplane".into(), "Airplane".into())),
            seed: 77,
            params: GenerationParams::default(),
        }
    }

    #[test]
    fn mock_output_is_deterministic_per_request() {
        let backend = MockBackend;
        let request = saspa_request();
        let a = backend.generate(&request).unwrap();
        let b = backend.generate(&request).unwrap();
        assert_eq!(a.as_raw(), b.as_raw());

        let mut different_seed = saspa_request();
        different_seed.seed = 78;
        let c = backend.generate(&different_seed).unwrap();
        assert_ne!(a.as_raw(), c.as_raw());

        let mut different_prompt = saspa_request();
        different_prompt.prompt = "A jet airplane in a hangar".into();
        let d = backend.generate(&different_prompt).unwrap();
        assert_ne!(a.as_raw(), d.as_raw());
    }

    #[test]
    fn mock_output_matches_conditioning_resolution() {
        let backend = MockBackend;
        let request = saspa_request();
        let img = backend.generate(&request).unwrap();
        assert_eq!((img.width(), img.height()), (64, 48));

        let text2img = GenerationRequest {
            method: Method::Text2img,
            prompt: "An airplane".into(),
            edge_map: None,
            init_image: None,
            reference_image: None,
            subject_texts: None,
            seed: 1,
            params: GenerationParams::for_method(Method::Text2img),
        };
        let img = backend.generate(&text2img).unwrap();
        assert_eq!((img.width(), img.height()), (512, 512));
    }

    #[test]
    fn mock_preserves_edge_structure() {
        let backend = MockBackend;
        let request = saspa_request();
        let img = backend.generate(&request).unwrap();
        // edge column painted white end to end (below the 32px stamp area)
        for y in 33..48 {
            assert_eq!(img.get_pixel(20, y), &Rgb([255, 255, 255]));
        }
    }

    #[test]
    fn contract_violations_are_refused() {
        let backend = MockBackend;

        let mut missing_reference = saspa_request();
        missing_reference.reference_image = None;
        match backend.generate(&missing_reference) {
            Err(Error::BackendContract { message, .. }) => {
                assert!(message.contains("reference_image"))
            }
            other => panic!("expected contract error, got {other:?}"),
        }

        let mut stray_strength = saspa_request();
        stray_strength.params.strength = Some(0.5);
        assert!(matches!(
            backend.generate(&stray_strength),
            Err(Error::BackendContract { .. })
        ));

        let img2img_without_init = GenerationRequest {
            method: Method::Img2img,
            prompt: "A car".into(),
            edge_map: None,
            init_image: None,
            reference_image: None,
            subject_texts: None,
            seed: 3,
            params: GenerationParams {
                strength: Some(0.5),
                ..GenerationParams::default()
            },
        };
        assert!(matches!(
            img2img_without_init.validate(),
            Err(Error::BackendContract { .. })
        ));
    }

    #[test]
    fn flaky_backend_fails_then_recovers() {
        let backend = FlakyBackend::new(MockBackend, [(77, 2)]);
        let request = saspa_request();
        assert!(backend.generate(&request).is_err());
        assert!(backend.generate(&request).is_err());
        let img = backend.generate(&request).unwrap();
        assert_eq!(img.as_raw(), MockBackend.generate(&request).unwrap().as_raw());
    }
}
