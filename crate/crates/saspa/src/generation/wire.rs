//! JSON wire protocol for remote generation services.
//!
//! A service exposes `GET /handshake` returning backend info and
//! `POST /generate` taking one request per call. Images cross the wire as
//! base64-encoded PNG. The wire parameter set is deliberately narrow: the
//! sampler and resolution rule are service-side configuration, so a decoded
//! request carries the method defaults for both.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::edges::{Detector, DetectorParams, EdgeMap, GAUSSIAN_SIGMA};
use crate::error::{Error, Result};

use super::{BackendInfo, GenerationBackend, GenerationParams, GenerationRequest, Method};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireParams {
    pub steps: u32,
    pub guidance_scale: f64,
    pub conditioning_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strength: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub method: String,
    pub prompt: String,
    pub seed: u64,
    pub params: WireParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_map: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_texts: Option<[String; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireResponse {
    Ok {
        /// base64 PNG
        image: String,
        #[serde(default)]
        backend_info: serde_json::Value,
    },
    Err {
        error: String,
        retryable: bool,
    },
}

fn rgb_png_base64(image: &RgbImage) -> String {
    let mut bytes = Vec::new();
    image
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .expect("png encoding of an in-memory image cannot fail");
    BASE64.encode(bytes)
}

fn gray_png_base64(edge: &EdgeMap) -> String {
    let mut bytes = Vec::new();
    edge.to_gray_image()
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .expect("png encoding of an in-memory image cannot fail");
    BASE64.encode(bytes)
}

fn decode_rgb(field: &str, data: &str) -> Result<RgbImage> {
    let bytes = BASE64
        .decode(data)
        .map_err(|e| Error::Validation(format!("{field}: invalid base64: {e}")))?;
    let img = image::load_from_memory(&bytes)
        .map_err(|e| Error::Validation(format!("{field}: invalid png: {e}")))?;
    Ok(img.to_rgb8())
}

impl WireRequest {
    pub fn encode(request: &GenerationRequest) -> Self {
        Self {
            method: request.method.name().to_string(),
            prompt: request.prompt.clone(),
            seed: request.seed,
            params: WireParams {
                steps: request.params.inference_steps,
                guidance_scale: request.params.guidance_scale,
                conditioning_scale: request.params.conditioning_scale,
                strength: request.params.strength,
            },
            edge_map: request.edge_map.as_ref().map(gray_png_base64),
            init_image: request.init_image.as_ref().map(rgb_png_base64),
            reference_image: request.reference_image.as_ref().map(rgb_png_base64),
            subject_texts: request
                .subject_texts
                .as_ref()
                .map(|(source, target)| [source.clone(), target.clone()]),
        }
    }

    /// Rebuild a request on the serving side. Edge-map provenance does not
    /// cross the wire, so the decoded map carries placeholder provenance.
    pub fn decode(&self) -> Result<GenerationRequest> {
        let method: Method = self.method.parse()?;
        let mut params = GenerationParams::for_method(method);
        params.inference_steps = self.params.steps;
        params.guidance_scale = self.params.guidance_scale;
        params.conditioning_scale = self.params.conditioning_scale;
        params.strength = self.params.strength;

        let edge_map = match &self.edge_map {
            Some(data) => {
                let bytes = BASE64
                    .decode(data)
                    .map_err(|e| Error::Validation(format!("edge_map: invalid base64: {e}")))?;
                let gray = image::load_from_memory(&bytes)
                    .map_err(|e| Error::Validation(format!("edge_map: invalid png: {e}")))?
                    .to_luma8();
                if let Some(v) = gray.as_raw().iter().find(|v| **v != 0 && **v != 255) {
                    return Err(Error::Validation(format!(
                        "edge_map holds non-binary value {v}"
                    )));
                }
                Some(EdgeMap {
                    width: gray.width(),
                    height: gray.height(),
                    data: gray.into_raw(),
                    source_image_id: String::new(),
                    detector: Detector::Canny,
                    params: DetectorParams { low: 0, high: 0, gaussian_sigma: GAUSSIAN_SIGMA },
                })
            }
            None => None,
        };
        let init_image = match &self.init_image {
            Some(data) => Some(decode_rgb("init_image", data)?),
            None => None,
        };
        let reference_image = match &self.reference_image {
            Some(data) => Some(decode_rgb("reference_image", data)?),
            None => None,
        };
        let request = GenerationRequest {
            method,
            prompt: self.prompt.clone(),
            edge_map,
            init_image,
            reference_image,
            subject_texts: self
                .subject_texts
                .as_ref()
                .map(|[source, target]| (source.clone(), target.clone())),
            seed: self.seed,
            params,
        };
        request.validate()?;
        Ok(request)
    }
}

impl WireResponse {
    pub fn from_image(image: &RgbImage, backend_info: serde_json::Value) -> Self {
        WireResponse::Ok {
            image: rgb_png_base64(image),
            backend_info,
        }
    }

    pub fn from_error(message: impl Into<String>, retryable: bool) -> Self {
        WireResponse::Err {
            error: message.into(),
            retryable,
        }
    }
}

/// Raw string transport under the wire backend; lets tests run the full
/// encode/decode path without sockets.
pub trait WireTransport: Sync {
    fn handshake_raw(&self) -> Result<String>;
    fn generate_raw(&self, body: &str) -> Result<String>;
}

/// HTTP transport. Connection-level failures are retryable, 5xx responses
/// are retryable, 4xx responses are permanent.
pub struct HttpTransport {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>) -> Self {
        let endpoint = endpoint.into().trim_end_matches('/').to_string();
        Self {
            endpoint,
            client: reqwest::blocking::Client::new(),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn read(response: reqwest::blocking::Response) -> Result<String> {
        let status = response.status();
        let text = response.text().map_err(|e| Error::Backend {
            message: format!("failed to read response body: {e}"),
            retryable: true,
        })?;
        if status.is_success() {
            Ok(text)
        } else {
            Err(Error::Backend {
                message: format!("http {status}: {text}"),
                retryable: status.is_server_error(),
            })
        }
    }
}

impl WireTransport for HttpTransport {
    fn handshake_raw(&self) -> Result<String> {
        let response = self
            .client
            .get(format!("{}/handshake", self.endpoint))
            .send()
            .map_err(|e| Error::Backend { message: e.to_string(), retryable: true })?;
        Self::read(response)
    }

    fn generate_raw(&self, body: &str) -> Result<String> {
        let response = self
            .client
            .post(format!("{}/generate", self.endpoint))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string())
            .send()
            .map_err(|e| Error::Backend { message: e.to_string(), retryable: true })?;
        Self::read(response)
    }
}

/// Backend speaking the wire protocol over any transport.
pub struct WireBackend<T> {
    transport: T,
}

impl<T: WireTransport> WireBackend<T> {
    pub fn new(transport: T) -> Self {
        Self { transport }
    }
}

/// Backend for a service at an HTTP endpoint such as `http://host:port`.
pub fn http_backend(endpoint: impl Into<String>) -> WireBackend<HttpTransport> {
    WireBackend::new(HttpTransport::new(endpoint))
}

impl<T: WireTransport> GenerationBackend for WireBackend<T> {
    fn handshake(&self) -> Result<BackendInfo> {
        let raw = self.transport.handshake_raw()?;
        serde_json::from_str(&raw).map_err(|e| Error::Backend {
            message: format!("malformed handshake response: {e}"),
            retryable: false,
        })
    }

    fn generate(&self, request: &GenerationRequest) -> Result<RgbImage> {
        request.validate()?;
        let body =
            serde_json::to_string(&WireRequest::encode(request)).expect("wire request serializes");
        let raw = self.transport.generate_raw(&body)?;
        let response: WireResponse = serde_json::from_str(&raw).map_err(|e| Error::Backend {
            message: format!("malformed generate response: {e}"),
            retryable: false,
        })?;
        match response {
            WireResponse::Ok { image, .. } => decode_rgb("image", &image),
            WireResponse::Err { error, retryable } => Err(Error::Backend {
                message: error,
                retryable,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::MockBackend;
    use image::Rgb;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// Serves the protocol in process by decoding and delegating to the mock.
    struct Loopback;

    impl WireTransport for Loopback {
        fn handshake_raw(&self) -> Result<String> {
            Ok(serde_json::to_string(&MockBackend.handshake()?).unwrap())
        }

        fn generate_raw(&self, body: &str) -> Result<String> {
            let wire: WireRequest =
                serde_json::from_str(body).map_err(|e| Error::Validation(e.to_string()))?;
            let response = match wire.decode().and_then(|r| MockBackend.generate(&r)) {
                Ok(image) => WireResponse::from_image(&image, serde_json::json!({"name": "mock"})),
                Err(e) => WireResponse::from_error(e.to_string(), false),
            };
            Ok(serde_json::to_string(&response).unwrap())
        }
    }

    fn saspa_request() -> GenerationRequest {
        let mut data = vec![0u8; 40 * 30];
        for y in 0..30 {
            data[y * 40 + 13] = 255;
        }
        GenerationRequest {
            method: Method::Saspa,
            prompt: "An airplane over water".into(),
            edge_map: Some(EdgeMap {
                width: 40,
                height: 30,
                data,
                source_image_id: "src".into(),
                detector: Detector::Canny,
                params: DetectorParams { low: 20, high: 60, gaussian_sigma: GAUSSIAN_SIGMA },
            }),
            init_image: None,
            reference_image: Some(RgbImage::from_pixel(20, 20, Rgb([10, 200, 50]))),
            subject_texts: Some(("Airplane".into(), "Airplane".into())),
            seed: 99,
            params: GenerationParams::default(),
        }
    }

    #[test]
    fn wire_round_trip_matches_direct_mock_call() {
        let request = saspa_request();
        let direct = MockBackend.generate(&request).unwrap();
        let backend = WireBackend::new(Loopback);
        assert_eq!(backend.handshake().unwrap(), MockBackend.handshake().unwrap());
        let via_wire = backend.generate(&request).unwrap();
        assert_eq!(via_wire.as_raw(), direct.as_raw());
    }

    #[test]
    fn request_encoding_skips_absent_fields() {
        let request = GenerationRequest {
            method: Method::Text2img,
            prompt: "A car".into(),
            edge_map: None,
            init_image: None,
            reference_image: None,
            subject_texts: None,
            seed: 5,
            params: GenerationParams::for_method(Method::Text2img),
        };
        let json = serde_json::to_value(WireRequest::encode(&request)).unwrap();
        let object = json.as_object().unwrap();
        for absent in ["edge_map", "init_image", "reference_image", "subject_texts", "strength"] {
            assert!(!object.contains_key(absent), "unexpected key {absent}");
        }
        assert_eq!(object["params"]["steps"], 30);
        assert_eq!(object["params"]["guidance_scale"], 7.5);
        assert_eq!(object["params"]["conditioning_scale"], 0.75);
    }

    #[test]
    fn error_responses_become_backend_errors() {
        struct Failing;
        impl WireTransport for Failing {
            fn handshake_raw(&self) -> Result<String> {
                Ok(serde_json::to_string(&MockBackend.handshake().unwrap()).unwrap())
            }
            fn generate_raw(&self, _: &str) -> Result<String> {
                Ok(serde_json::to_string(&WireResponse::from_error("gpu oom", true)).unwrap())
            }
        }
        let backend = WireBackend::new(Failing);
        match backend.generate(&saspa_request()) {
            Err(Error::Backend { message, retryable }) => {
                assert_eq!(message, "gpu oom");
                assert!(retryable);
            }
            other => panic!("expected backend error, got {other:?}"),
        }
    }

    fn serve_canned(listener: TcpListener, responses: Vec<(u16, String)>) {
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buffer = Vec::new();
                let mut chunk = [0u8; 1024];
                // read until the end of headers, then any declared body
                let body_len = loop {
                    let n = stream.read(&mut chunk).unwrap();
                    buffer.extend_from_slice(&chunk[..n]);
                    if let Some(split) = buffer.windows(4).position(|w| w == b"\r\n\r\n") {
                        let headers = String::from_utf8_lossy(&buffer[..split]).to_lowercase();
                        let declared = headers
                            .lines()
                            .find_map(|l| l.strip_prefix("content-length:"))
                            .and_then(|v| v.trim().parse::<usize>().ok())
                            .unwrap_or(0);
                        break (split + 4 + declared).saturating_sub(buffer.len());
                    }
                };
                let mut remaining = body_len;
                while remaining > 0 {
                    let n = stream.read(&mut chunk).unwrap();
                    remaining = remaining.saturating_sub(n);
                }
                let reason = if status < 400 { "OK" } else { "ERR" };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(response.as_bytes()).unwrap();
            }
        });
    }

    #[test]
    fn http_transport_maps_status_codes() {
        let Ok(listener) = TcpListener::bind("127.0.0.1:0") else {
            eprintln!("skipping: cannot bind loopback in this environment");
            return;
        };
        let endpoint = format!("http://{}", listener.local_addr().unwrap());
        let info = serde_json::to_string(&MockBackend.handshake().unwrap()).unwrap();
        serve_canned(
            listener,
            vec![
                (200, info),
                (500, "overloaded".into()),
                (404, "no such model".into()),
            ],
        );

        let backend = http_backend(&endpoint);
        let handshake = backend.handshake().unwrap();
        assert_eq!(handshake.name, "mock");

        let request = saspa_request();
        match backend.generate(&request) {
            Err(Error::Backend { retryable, message }) => {
                assert!(retryable, "5xx must be retryable: {message}");
            }
            other => panic!("expected backend error, got {other:?}"),
        }
        match backend.generate(&request) {
            Err(Error::Backend { retryable, message }) => {
                assert!(!retryable, "4xx must be permanent: {message}");
            }
            other => panic!("expected backend error, got {other:?}"),
        }
    }
}
