//! Deterministic in-process model servers.
//!
//! [`MockTransport`] answers the same JSON requests a remote server would,
//! driven by a [`Scenario`]. Identical scenarios and request sequences give
//! byte-identical responses.
//!
//! Scripted text:
//! - chat replies are looked up by [`chat_digest`] of the messages, then by
//!   the first `chat_rules` entry whose `contains` phrases all occur in the
//!   last user message;
//! - VQA answers likewise by [`vqa_digest`] of the question, `vqa_rules`,
//!   then `vqa_default`.
//!
//! Unscripted text requests get HTTP 404, which callers see as a
//! non-retryable backend failure.

pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use image::{GrayImage, Luma, Rgb};
use serde::{Deserialize, Serialize};

use super::wire::{
    ChatRequest, ErrorBody, GenerateRequest, ImageRequest, LabelMapResponse, RasterResponse,
    SegRequest, TextResponse, VqaRequest, WireImage,
};
use super::{BackendDescriptor, Capability, ChatMessage, Transport, TransportError};
use crate::imaging;
use crate::mask::{
    decode_label_map_png, decode_mask_png, encode_label_map_png, encode_mask_png, encode_matte_png,
    AlphaMatte, BinaryMask, LabelMap,
};
use crate::store::sha256_hex;
use crate::text;

/// A region on the canvas, absolute or as fractions of width/height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Region {
    Rect { x: u32, y: u32, width: u32, height: u32 },
    Relative { x0: f32, y0: f32, x1: f32, y1: f32 },
    Empty,
}

impl Region {
    pub fn contains(&self, x: u32, y: u32, w: u32, h: u32) -> bool {
        match *self {
            Region::Rect {
                x: rx,
                y: ry,
                width,
                height,
            } => x >= rx && y >= ry && x < rx.saturating_add(width) && y < ry.saturating_add(height),
            Region::Relative { x0, y0, x1, y1 } => synthetic::region_contains(x, y, w, h, (x0, y0, x1, y1)),
            Region::Empty => false,
        }
    }

    pub fn to_mask(&self, w: u32, h: u32) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| self.contains(x, y, w, h)).expect("caller passes a valid canvas")
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LabelSource {
    /// The synthetic person, drawn at the request's image size.
    #[default]
    Synthetic,
    /// A fixed label-map PNG (path relative to the scenario file).
    Png { path: PathBuf, vocabulary: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MatteSource {
    #[default]
    Silhouette,
    Ones,
    Zeros,
    Region { region: Region },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRule {
    pub contains: Vec<String>,
    pub reply: String,
}

/// When to answer with an error status instead of a result. Call numbers
/// are 1-based and counted per capability across attempts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailurePlan {
    #[serde(default)]
    pub first: u32,
    #[serde(default)]
    pub calls: Vec<u32>,
    #[serde(default)]
    pub always: bool,
    #[serde(default = "default_failure_status")]
    pub status: u16,
}

fn default_failure_status() -> u16 {
    500
}

impl FailurePlan {
    fn fails(&self, call: u32) -> bool {
        self.always || call <= self.first || self.calls.contains(&call)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub chat: BTreeMap<String, String>,
    pub chat_rules: Vec<TextRule>,
    pub vqa: BTreeMap<String, String>,
    pub vqa_rules: Vec<TextRule>,
    pub vqa_default: Option<String>,
    /// Open-vocabulary segmentation: cleaned phrase → region. Unknown
    /// phrases segment to an empty mask.
    pub segmentation: BTreeMap<String, Region>,
    pub human_parsing: LabelSource,
    pub pose_parts: LabelSource,
    pub matting: MatteSource,
    pub failures: BTreeMap<Capability, FailurePlan>,
    /// Responses from these capabilities carry a wrong `content_sha256`.
    pub corrupt_hash: BTreeSet<Capability>,
    /// Raster responses from these capabilities are one pixel too wide.
    pub wrong_dimensions: BTreeSet<Capability>,
}

impl Scenario {
    /// Synthetic person plus segmentation regions for common accessories.
    pub fn builtin() -> Self {
        let rel = |x0, y0, x1, y1| Region::Relative { x0, y0, x1, y1 };
        let segmentation = [
            ("necklace", rel(0.45, 0.19, 0.55, 0.22)),
            ("bracelet", rel(0.29, 0.43, 0.37, 0.46)),
            ("watch", rel(0.29, 0.43, 0.37, 0.46)),
            ("brooch", rel(0.40, 0.27, 0.45, 0.31)),
            ("earring", rel(0.43, 0.12, 0.57, 0.15)),
            ("ring", rel(0.29, 0.47, 0.33, 0.49)),
            ("logo", rel(0.45, 0.30, 0.55, 0.38)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            segmentation,
            ..Self::default()
        }
    }

    pub fn from_json(json: &str) -> Result<Self, String> {
        serde_json::from_str(json).map_err(|e| format!("mock scenario: {e}"))
    }
}

/// Digest keying scripted chat replies: SHA-256 over
/// `role\tcleaned content` lines joined by `\n`.
pub fn chat_digest(messages: &[ChatMessage]) -> String {
    let lines: Vec<String> = messages
        .iter()
        .map(|m| {
            let role = serde_json::to_value(m.role).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            format!("{role}\t{}", text::clean(&m.content))
        })
        .collect();
    sha256_hex(lines.join("\n").as_bytes())
}

/// Digest keying scripted VQA answers: SHA-256 of the cleaned question.
pub fn vqa_digest(question: &str) -> String {
    sha256_hex(text::clean(question).as_bytes())
}

fn rule_reply<'a>(rules: &'a [TextRule], haystack: &str) -> Option<&'a str> {
    let hay = text::clean(haystack);
    rules
        .iter()
        .find(|r| r.contains.iter().all(|c| hay.contains(&text::clean(c))))
        .map(|r| r.reply.as_str())
}

type Handled = Result<Vec<u8>, TransportError>;

fn reject(code: u16, message: impl Into<String>) -> TransportError {
    let body = serde_json::to_string(&ErrorBody { error: message.into() }).unwrap_or_default();
    TransportError::Status { code, body }
}

fn bad_request(e: impl std::fmt::Display) -> TransportError {
    reject(400, e.to_string())
}

pub struct MockTransport {
    scenario: Scenario,
    base_dir: PathBuf,
    calls: Mutex<BTreeMap<Capability, u32>>,
}

impl MockTransport {
    pub fn new(scenario: Scenario, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            scenario,
            base_dir: base_dir.into(),
            calls: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn builtin() -> Self {
        Self::new(Scenario::builtin(), ".")
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let json = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let scenario = Scenario::from_json(&json)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Ok(Self::new(scenario, base))
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Serves one request for `route`. Also used by the HTTP mock server.
    pub fn handle(&self, route: &str, json: &[u8], parts: &[(String, Vec<u8>)]) -> Handled {
        let capability = Capability::from_route(route).ok_or_else(|| reject(404, format!("unknown route {route}")))?;
        let call = {
            let mut calls = self.calls.lock().unwrap_or_else(|e| e.into_inner());
            let n = calls.entry(capability).or_insert(0);
            *n += 1;
            *n
        };
        if let Some(plan) = self.scenario.failures.get(&capability) {
            if plan.fails(call) {
                return Err(reject(plan.status, format!("injected failure on {capability} call {call}")));
            }
        }
        match capability {
            Capability::Chat => self.chat(json),
            Capability::Vqa => self.vqa(json),
            Capability::HumanParsing => self.label_map(capability, &self.scenario.human_parsing, json, parts),
            Capability::PoseParts => self.label_map(capability, &self.scenario.pose_parts, json, parts),
            Capability::OpenVocabSeg => self.segment(json, parts),
            Capability::Matting => self.matting(json, parts),
            Capability::Edge => self.edge(json, parts),
            Capability::GuidedGeneration => self.generate(json, parts),
        }
    }

    fn hash_for(&self, capability: Capability, payload: &[u8]) -> String {
        if self.scenario.corrupt_hash.contains(&capability) {
            sha256_hex(b"corrupted")
        } else {
            sha256_hex(payload)
        }
    }

    fn dims_for(&self, capability: Capability, w: u32, h: u32) -> (u32, u32) {
        if self.scenario.wrong_dimensions.contains(&capability) {
            (w + 1, h)
        } else {
            (w, h)
        }
    }

    fn text(&self, capability: Capability, text: &str) -> Handled {
        let body = TextResponse {
            text: text.to_string(),
            content_sha256: self.hash_for(capability, text.as_bytes()),
        };
        serde_json::to_vec(&body).map_err(bad_request)
    }

    fn raster(&self, capability: Capability, field: &str, png: Vec<u8>, (width, height): (u32, u32)) -> Handled {
        let wire = Some(WireImage::inline(&png));
        let mut body = RasterResponse {
            mask: None,
            matte: None,
            image: None,
            width,
            height,
            content_sha256: self.hash_for(capability, &png),
        };
        match field {
            "mask" => body.mask = wire,
            "matte" => body.matte = wire,
            _ => body.image = wire,
        }
        serde_json::to_vec(&body).map_err(bad_request)
    }

    fn chat(&self, json: &[u8]) -> Handled {
        let req: ChatRequest = serde_json::from_slice(json).map_err(bad_request)?;
        if let Some(reply) = self.scenario.chat.get(&chat_digest(&req.messages)) {
            return self.text(Capability::Chat, reply);
        }
        let last_user = req
            .messages
            .iter()
            .rev()
            .find(|m| m.role == super::Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        match rule_reply(&self.scenario.chat_rules, last_user) {
            Some(reply) => self.text(Capability::Chat, reply),
            None => Err(reject(404, "no scripted chat reply")),
        }
    }

    fn vqa(&self, json: &[u8]) -> Handled {
        let req: VqaRequest = serde_json::from_slice(json).map_err(bad_request)?;
        let answer = self
            .scenario
            .vqa
            .get(&vqa_digest(&req.question))
            .map(String::as_str)
            .or_else(|| rule_reply(&self.scenario.vqa_rules, &req.question))
            .or(self.scenario.vqa_default.as_deref());
        match answer {
            Some(a) => self.text(Capability::Vqa, a),
            None => Err(reject(404, "no scripted VQA answer")),
        }
    }

    fn image_dims(&self, image: &WireImage, parts: &[(String, Vec<u8>)]) -> Result<(u32, u32), TransportError> {
        let bytes = image.resolve(parts).map_err(bad_request)?;
        imaging::image_dims(&bytes).map_err(bad_request)
    }

    fn label_map(&self, capability: Capability, source: &LabelSource, json: &[u8], parts: &[(String, Vec<u8>)]) -> Handled {
        let req: ImageRequest = serde_json::from_slice(json).map_err(bad_request)?;
        let (w, h) = self.image_dims(&req.image, parts)?;
        let (w, h) = self.dims_for(capability, w, h);
        let lm: LabelMap = match source {
            LabelSource::Synthetic if capability == Capability::HumanParsing => synthetic::parsing_map(w, h),
            LabelSource::Synthetic => synthetic::pose_map(w, h),
            LabelSource::Png { path, vocabulary } => {
                let bytes = std::fs::read(self.base_dir.join(path)).map_err(|e| reject(500, e.to_string()))?;
                decode_label_map_png(&bytes, vocabulary.clone())
            }
        }
        .map_err(|e| reject(500, e.to_string()))?;
        let png = encode_label_map_png(&lm).map_err(|e| reject(500, e.to_string()))?;
        let body = LabelMapResponse {
            label_map: WireImage::inline(&png),
            vocabulary: lm.vocabulary().to_vec(),
            width: lm.width(),
            height: lm.height(),
            content_sha256: self.hash_for(capability, &png),
        };
        serde_json::to_vec(&body).map_err(bad_request)
    }

    fn segment(&self, json: &[u8], parts: &[(String, Vec<u8>)]) -> Handled {
        let req: SegRequest = serde_json::from_slice(json).map_err(bad_request)?;
        let (w, h) = self.image_dims(&req.image, parts)?;
        let (w, h) = self.dims_for(Capability::OpenVocabSeg, w, h);
        let phrase = text::strip_determiners(&text::clean(&req.phrase));
        let region = self
            .scenario
            .segmentation
            .get(&phrase)
            .or_else(|| self.scenario.segmentation.get(&text::singularize_phrase(&phrase)))
            .cloned()
            .unwrap_or(Region::Empty);
        let png = encode_mask_png(&region.to_mask(w, h)).map_err(|e| reject(500, e.to_string()))?;
        self.raster(Capability::OpenVocabSeg, "mask", png, (w, h))
    }

    fn matting(&self, json: &[u8], parts: &[(String, Vec<u8>)]) -> Handled {
        let req: ImageRequest = serde_json::from_slice(json).map_err(bad_request)?;
        let (w, h) = self.image_dims(&req.image, parts)?;
        let (w, h) = self.dims_for(Capability::Matting, w, h);
        let matte = match &self.scenario.matting {
            MatteSource::Silhouette => synthetic::silhouette(w, h),
            MatteSource::Ones => AlphaMatte::filled(w, h, 1.0),
            MatteSource::Zeros => AlphaMatte::filled(w, h, 0.0),
            MatteSource::Region { region } => {
                let m = region.to_mask(w, h);
                AlphaMatte::new(w, h, m.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
            }
        }
        .map_err(|e| reject(500, e.to_string()))?;
        let png = encode_matte_png(&matte).map_err(|e| reject(500, e.to_string()))?;
        self.raster(Capability::Matting, "matte", png, (w, h))
    }

    fn edge(&self, json: &[u8], parts: &[(String, Vec<u8>)]) -> Handled {
        let req: ImageRequest = serde_json::from_slice(json).map_err(bad_request)?;
        let bytes = req.image.resolve(parts).map_err(bad_request)?;
        let rgb = imaging::decode_rgb(&bytes).map_err(bad_request)?;
        let edges = sobel(&rgb);
        let (w, h) = self.dims_for(Capability::Edge, rgb.width(), rgb.height());
        let edges = if (w, h) == edges.dimensions() {
            edges
        } else {
            GrayImage::from_fn(w, h, |x, y| *edges.get_pixel(x.min(edges.width() - 1), y))
        };
        let mut png = Vec::new();
        edges
            .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
            .map_err(|e| reject(500, e.to_string()))?;
        self.raster(Capability::Edge, "image", png, (w, h))
    }

    fn generate(&self, json: &[u8], parts: &[(String, Vec<u8>)]) -> Handled {
        let req: GenerateRequest = serde_json::from_slice(json).map_err(bad_request)?;
        let mut rgb = imaging::decode_rgb(&req.image.resolve(parts).map_err(bad_request)?).map_err(bad_request)?;
        let mask = decode_mask_png(&req.mask.resolve(parts).map_err(bad_request)?).map_err(bad_request)?;
        if mask.dims() != rgb.dimensions() {
            return Err(bad_request(format!(
                "mask {:?} does not match image {:?}",
                mask.dims(),
                rgb.dimensions()
            )));
        }
        let fill = prompt_color(&req.prompt);
        for (x, y, px) in rgb.enumerate_pixels_mut() {
            if mask.get(x, y) {
                *px = Rgb(fill);
            }
        }
        let (w, h) = self.dims_for(Capability::GuidedGeneration, rgb.width(), rgb.height());
        if (w, h) != rgb.dimensions() {
            rgb = image::imageops::resize(&rgb, w, h, image::imageops::FilterType::Nearest);
        }
        let png = imaging::encode_rgb_png(&rgb).map_err(|e| reject(500, e.to_string()))?;
        self.raster(Capability::GuidedGeneration, "image", png, (w, h))
    }
}

/// Fill colour the mock generator paints into masked pixels.
pub fn prompt_color(prompt: &str) -> [u8; 3] {
    let digest = sha256_hex(prompt.as_bytes());
    let byte = |i: usize| u8::from_str_radix(&digest[2 * i..2 * i + 2], 16).unwrap_or(0);
    [byte(0), byte(1), byte(2)]
}

/// Sobel gradient magnitude of the luma channel, clamped to 0..=255,
/// borders replicated.
pub fn sobel(rgb: &image::RgbImage) -> GrayImage {
    let (w, h) = rgb.dimensions();
    let luma = |x: i64, y: i64| -> i32 {
        let x = x.clamp(0, w as i64 - 1) as u32;
        let y = y.clamp(0, h as i64 - 1) as u32;
        let [r, g, b] = rgb.get_pixel(x, y).0;
        (299 * r as i32 + 587 * g as i32 + 114 * b as i32) / 1000
    };
    GrayImage::from_fn(w, h, |x, y| {
        let (x, y) = (x as i64, y as i64);
        let gx = luma(x + 1, y - 1) + 2 * luma(x + 1, y) + luma(x + 1, y + 1)
            - luma(x - 1, y - 1)
            - 2 * luma(x - 1, y)
            - luma(x - 1, y + 1);
        let gy = luma(x - 1, y + 1) + 2 * luma(x, y + 1) + luma(x + 1, y + 1)
            - luma(x - 1, y - 1)
            - 2 * luma(x, y - 1)
            - luma(x + 1, y - 1);
        let mag = ((gx * gx + gy * gy) as f64).sqrt();
        Luma([mag.min(255.0) as u8])
    })
}

impl Transport for MockTransport {
    fn send(&self, _descriptor: &BackendDescriptor, request: &super::WireRequest) -> Result<Vec<u8>, TransportError> {
        self.handle(request.route, &request.json, &request.parts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ChatMessage, Role};

    fn image_request(w: u32, h: u32) -> Vec<u8> {
        let png = imaging::encode_rgb_png(&synthetic::photo(w, h).unwrap()).unwrap();
        serde_json::to_vec(&ImageRequest {
            image: WireImage::inline(&png),
        })
        .unwrap()
    }

    #[test]
    fn scripted_chat_by_digest_then_rule() {
        let msgs = vec![ChatMessage::system("sys"), ChatMessage::user("Hello  There")];
        let mut s = Scenario::default();
        s.chat.insert(chat_digest(&msgs), "by digest".into());
        s.chat_rules.push(TextRule {
            contains: vec!["vest".into()],
            reply: "by rule".into(),
        });
        let t = MockTransport::new(s, ".");
        let ask = |m: &[ChatMessage]| {
            let body = serde_json::to_vec(&ChatRequest { messages: m.to_vec() }).unwrap();
            t.handle("chat", &body, &[]).map(|b| serde_json::from_slice::<TextResponse>(&b).unwrap().text)
        };
        assert_eq!(ask(&msgs).unwrap(), "by digest");
        let noisy = vec![ChatMessage::system(" SYS "), ChatMessage::user("hello there")];
        assert_eq!(ask(&noisy).unwrap(), "by digest");
        assert_eq!(ask(&[ChatMessage::user("replace the VEST")]).unwrap(), "by rule");
        let err = ask(&[ChatMessage::user("nothing")]).unwrap_err();
        assert_eq!(err.status(), Some(404));
        assert!(!err.retryable());
        assert_eq!(msgs[0].role, Role::System);
    }

    #[test]
    fn responses_are_byte_identical_across_instances() {
        let req = image_request(40, 60);
        let a = MockTransport::builtin().handle("human-parsing", &req, &[]).unwrap();
        let b = MockTransport::builtin().handle("human-parsing", &req, &[]).unwrap();
        assert_eq!(a, b);
        let e1 = MockTransport::builtin().handle("edge", &req, &[]).unwrap();
        let e2 = MockTransport::builtin().handle("edge", &req, &[]).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn failure_plan_counts_per_capability() {
        let mut s = Scenario::default();
        s.failures.insert(
            Capability::Vqa,
            FailurePlan {
                first: 1,
                calls: vec![3],
                always: false,
                status: 503,
            },
        );
        s.vqa_default = Some("blue".into());
        let t = MockTransport::new(s, ".");
        let png = imaging::encode_rgb_png(&image::RgbImage::new(4, 4)).unwrap();
        let body = serde_json::to_vec(&VqaRequest {
            image: WireImage::inline(&png),
            question: "what?".into(),
        })
        .unwrap();
        let outcomes: Vec<bool> = (0..4).map(|_| t.handle("vqa", &body, &[]).is_ok()).collect();
        assert_eq!(outcomes, vec![false, true, false, true]);
    }

    #[test]
    fn generate_preserves_unmasked_pixels() {
        let img = synthetic::photo(32, 48).unwrap();
        let png = imaging::encode_rgb_png(&img).unwrap();
        let mask = BinaryMask::from_fn(32, 48, |x, y| x > 10 && y < 20).unwrap();
        let req = GenerateRequest {
            image: WireImage::inline(&png),
            mask: WireImage::Multipart { part: "mask".into() },
            prompt: "a red shirt".into(),
            negative_prompt: String::new(),
            condition: crate::backend::wire::WireCondition::Inpaint,
            seed: 1,
            strength: 1.0,
            guidance_scale: 7.5,
            steps: 30,
        };
        let parts = vec![("mask".to_string(), encode_mask_png(&mask).unwrap())];
        let out = MockTransport::builtin()
            .handle("generate", &serde_json::to_vec(&req).unwrap(), &parts)
            .unwrap();
        let resp: RasterResponse = serde_json::from_slice(&out).unwrap();
        let result = imaging::decode_rgb(&resp.image.unwrap().resolve(&[]).unwrap()).unwrap();
        let fill = prompt_color("a red shirt");
        for (x, y, px) in result.enumerate_pixels() {
            if mask.get(x, y) {
                assert_eq!(px.0, fill);
            } else {
                assert_eq!(px, img.get_pixel(x, y));
            }
        }
    }

    #[test]
    fn segmentation_regions() {
        let png = imaging::encode_rgb_png(&image::RgbImage::new(100, 100)).unwrap();
        let seg = |phrase: &str| {
            let body = serde_json::to_vec(&SegRequest {
                image: WireImage::inline(&png),
                phrase: phrase.into(),
            })
            .unwrap();
            let resp: RasterResponse =
                serde_json::from_slice(&MockTransport::builtin().handle("seg", &body, &[]).unwrap()).unwrap();
            decode_mask_png(&resp.mask.unwrap().resolve(&[]).unwrap()).unwrap()
        };
        assert_eq!(seg("the necklaces").area(), 10 * 3);
        assert!(seg("unicorn").is_empty());
    }

    #[test]
    fn sobel_finds_vertical_edge() {
        let img = image::RgbImage::from_fn(6, 3, |x, _| if x < 3 { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) });
        let e = sobel(&img);
        assert_eq!(e.get_pixel(0, 1).0[0], 0);
        assert_eq!(e.get_pixel(2, 1).0[0], 255);
        assert_eq!(e.get_pixel(5, 1).0[0], 0);
    }
}
