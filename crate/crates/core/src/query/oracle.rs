//! Threshold judges: a constant-target oracle, a hidden-mask IoU oracle and an
//! HTTP client for an external multimodal model.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::splat_render::RenderOutput;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("no hidden mask for query '{query}' at viewpoint {viewpoint}")]
    NoMask { query: String, viewpoint: usize },
    #[error("mask is {got:?}, render is {expected:?}")]
    MaskSize { expected: (u32, u32), got: (u32, u32) },
    #[error("oracle transport: {0}")]
    Transport(String),
    #[error("oracle response: {0}")]
    BadResponse(String),
    #[error("oracle chose index {index} of {count} candidates")]
    OutOfRange { index: usize, count: usize },
    #[error("oracle config: {0}")]
    Config(String),
}

/// One viewpoint's candidates: a render per threshold, thresholds ascending.
#[derive(Debug, Clone, Copy)]
pub struct OracleRequest<'a> {
    pub query: &'a str,
    pub viewpoint_id: usize,
    pub thresholds: &'a [f64],
    pub renders: &'a [RenderOutput],
}

/// Picks the best candidate threshold for one viewpoint.
pub trait ThresholdOracle: Send + Sync {
    fn best_index(&self, request: &OracleRequest<'_>) -> Result<usize, OracleError>;
}

/// Always prefers the candidate closest to a fixed threshold (lower index on ties).
#[derive(Debug, Clone, Copy)]
pub struct ConstantOracle {
    pub target: f64,
}

impl ThresholdOracle for ConstantOracle {
    fn best_index(&self, request: &OracleRequest<'_>) -> Result<usize, OracleError> {
        let mut best = 0;
        for (i, t) in request.thresholds.iter().enumerate() {
            if (t - self.target).abs() < (request.thresholds[best] - self.target).abs() {
                best = i;
            }
        }
        Ok(best)
    }
}

/// Binary image mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn from_render(render: &RenderOutput, min_alpha: f32) -> Self {
        Self { width: render.width, height: render.height, bits: render.mask(min_alpha) }
    }

    /// Nonzero pixels of a grayscale image are foreground.
    pub fn from_png(path: &Path) -> Result<Self, OracleError> {
        let img = image::open(path).map_err(|e| OracleError::Config(format!("{}: {e}", path.display())))?.to_luma8();
        Ok(Self { width: img.width(), height: img.height(), bits: img.pixels().map(|p| p.0[0] > 0).collect() })
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Intersection over union of two masks; two empty masks score 1.
pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Scores each candidate render by IoU of its silhouette (alpha ≥
/// `min_alpha`) against a hidden mask for the viewpoint. When several
/// candidates tie for the best IoU the middle one is chosen (lower median).
#[derive(Debug, Clone, Default)]
pub struct MaskIouOracle {
    masks: HashMap<(String, usize), Mask>,
    pub min_alpha: f32,
}

impl MaskIouOracle {
    pub fn new(min_alpha: f32) -> Self {
        Self { masks: HashMap::new(), min_alpha }
    }

    pub fn insert(&mut self, query: &str, viewpoint: usize, mask: Mask) {
        self.masks.insert((query.to_string(), viewpoint), mask);
    }

    pub fn mask(&self, query: &str, viewpoint: usize) -> Option<&Mask> {
        self.masks.get(&(query.to_string(), viewpoint))
    }

    /// Loads `{"<query>": {"<viewpoint id>": "<mask.png>", ...}, ...}`. Paths
    /// are relative to the JSON file.
    pub fn from_json_file(path: &Path) -> Result<Self, OracleError> {
        let text = std::fs::read_to_string(path).map_err(|e| OracleError::Config(format!("{}: {e}", path.display())))?;
        let doc: HashMap<String, HashMap<String, String>> =
            serde_json::from_str(&text).map_err(|e| OracleError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut oracle = Self::new(0.5);
        for (query, views) in doc {
            for (vp, mask_path) in views {
                let vp: usize = vp.parse().map_err(|_| OracleError::Config(format!("bad viewpoint id '{vp}'")))?;
                oracle.insert(&query, vp, Mask::from_png(&base.join(mask_path))?);
            }
        }
        Ok(oracle)
    }

    pub fn scores(&self, request: &OracleRequest<'_>) -> Result<Vec<f64>, OracleError> {
        let mask = self
            .mask(request.query, request.viewpoint_id)
            .ok_or_else(|| OracleError::NoMask { query: request.query.into(), viewpoint: request.viewpoint_id })?;
        request
            .renders
            .iter()
            .map(|r| {
                if (r.width, r.height) != (mask.width, mask.height) {
                    return Err(OracleError::MaskSize { expected: (r.width, r.height), got: (mask.width, mask.height) });
                }
                Ok(mask_iou(&r.mask(self.min_alpha), &mask.bits))
            })
            .collect()
    }
}

impl ThresholdOracle for MaskIouOracle {
    fn best_index(&self, request: &OracleRequest<'_>) -> Result<usize, OracleError> {
        let scores = self.scores(request)?;
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] == best).collect();
        tied.get((tied.len().max(1) - 1) / 2).copied().ok_or(OracleError::BadResponse("no candidates".into()))
    }
}

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use base64::Engine;
    use serde::{Deserialize, Serialize};

    use super::{OracleError, OracleRequest, ThresholdOracle};

    #[derive(Serialize)]
    struct Candidate {
        threshold: f64,
        image_png_base64: String,
    }

    #[derive(Serialize)]
    struct Request<'a> {
        query: &'a str,
        viewpoint_id: usize,
        candidates: Vec<Candidate>,
    }

    #[derive(Deserialize)]
    struct Response {
        best_index: usize,
    }

    /// Posts the candidate renders as JSON and reads back `{"best_index": n}`.
    #[derive(Debug, Clone)]
    pub struct HttpOracle {
        pub url: String,
        pub timeout: Duration,
        pub retries: usize,
    }

    impl HttpOracle {
        pub fn new(url: impl Into<String>, timeout: Duration, retries: usize) -> Self {
            Self { url: url.into(), timeout, retries }
        }

        pub fn request_body(request: &OracleRequest<'_>) -> String {
            let candidates = request
                .thresholds
                .iter()
                .zip(request.renders)
                .map(|(&threshold, render)| Candidate {
                    threshold,
                    image_png_base64: base64::engine::general_purpose::STANDARD.encode(render.color_png_bytes()),
                })
                .collect();
            let body = Request { query: request.query, viewpoint_id: request.viewpoint_id, candidates };
            serde_json::to_string(&body).expect("request serializes")
        }

        fn attempt(&self, agent: &ureq::Agent, body: &str) -> Result<usize, OracleError> {
            let mut resp = agent
                .post(&self.url)
                .header("Content-Type", "application/json")
                .send(body)
                .map_err(|e| OracleError::Transport(e.to_string()))?;
            let text = resp.body_mut().read_to_string().map_err(|e| OracleError::Transport(e.to_string()))?;
            let parsed: Response = serde_json::from_str(&text).map_err(|e| OracleError::BadResponse(e.to_string()))?;
            Ok(parsed.best_index)
        }
    }

    impl ThresholdOracle for HttpOracle {
        fn best_index(&self, request: &OracleRequest<'_>) -> Result<usize, OracleError> {
            let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(self.timeout)).build().into();
            let body = Self::request_body(request);
            let mut last = OracleError::Transport("no attempt made".into());
            for attempt in 0..=self.retries {
                match self.attempt(&agent, &body) {
                    Ok(i) => return Ok(i),
                    Err(e @ OracleError::BadResponse(_)) => return Err(e),
                    Err(e) => {
                        log::warn!("oracle attempt {} failed: {e}", attempt + 1);
                        last = e;
                    }
                }
            }
            Err(last)
        }
    }
}

#[cfg(feature = "http")]
pub use http::HttpOracle;

#[cfg(test)]
mod tests {
    use super::*;

    fn render_with_mask(bits: &[bool], w: u32) -> RenderOutput {
        let n = bits.len();
        RenderOutput {
            width: w,
            height: (n as u32) / w,
            color: vec![[0.5; 3]; n],
            depth: vec![0.0; n],
            alpha: bits.iter().map(|&b| if b { 0.9 } else { 0.0 }).collect(),
        }
    }

    #[test]
    fn constant_oracle_picks_nearest() {
        let t = [0.5, 0.625, 0.75, 0.875, 1.0];
        let req = OracleRequest { query: "q", viewpoint_id: 0, thresholds: &t, renders: &[] };
        assert_eq!(ConstantOracle { target: 0.7 }.best_index(&req).unwrap(), 2);
        assert_eq!(ConstantOracle { target: 0.55 }.best_index(&req).unwrap(), 0);
        assert_eq!(ConstantOracle { target: 2.0 }.best_index(&req).unwrap(), 4);
    }

    #[test]
    fn iou_values() {
        assert_eq!(mask_iou(&[true, true, false], &[true, false, false]), 0.5);
        assert_eq!(mask_iou(&[false; 3], &[false; 3]), 1.0);
        assert_eq!(mask_iou(&[true, false], &[false, true]), 0.0);
    }

    #[test]
    fn mask_oracle_prefers_best_overlap_and_middle_of_ties() {
        let target = [true, true, true, false];
        let mut oracle = MaskIouOracle::new(0.5);
        oracle.insert("cup", 4, Mask { width: 4, height: 1, bits: target.to_vec() });
        let renders: Vec<RenderOutput> = [
            [true, true, true, true],
            [true, true, true, false],
            [true, true, true, false],
            [true, true, true, false],
            [true, false, false, false],
        ]
        .iter()
        .map(|b| render_with_mask(b, 4))
        .collect();
        let t = [0.5, 0.625, 0.75, 0.875, 1.0];
        let req = OracleRequest { query: "cup", viewpoint_id: 4, thresholds: &t, renders: &renders };
        assert_eq!(oracle.best_index(&req).unwrap(), 2);
        let other = OracleRequest { viewpoint_id: 5, ..req };
        assert!(matches!(oracle.best_index(&other), Err(OracleError::NoMask { .. })));
    }

    #[cfg(feature = "http")]
    #[test]
    fn http_request_schema() {
        let renders = vec![render_with_mask(&[true, false], 2)];
        let req = OracleRequest { query: "mug", viewpoint_id: 3, thresholds: &[0.75], renders: &renders };
        let v: serde_json::Value = serde_json::from_str(&HttpOracle::request_body(&req)).unwrap();
        assert_eq!(v["query"], "mug");
        assert_eq!(v["viewpoint_id"], 3);
        assert_eq!(v["candidates"][0]["threshold"], 0.75);
        assert!(v["candidates"][0]["image_png_base64"].as_str().unwrap().starts_with("iVBOR"));
    }

    #[cfg(feature = "http")]
    #[test]
    fn unreachable_http_oracle_fails_after_retries() {
        let oracle = HttpOracle::new("http://127.0.0.1:9/judge", std::time::Duration::from_millis(200), 1);
        let req = OracleRequest { query: "mug", viewpoint_id: 0, thresholds: &[], renders: &[] };
        assert!(matches!(oracle.best_index(&req), Err(OracleError::Transport(_))));
    }
}
