//! File helpers shared by the stage-specific formats.
//!
//! Every writer stamps a short provenance header (tool name, version, stage
//! and parameters) so that outputs can be traced back to the run that made
//! them. Headers never contain timestamps, so unchanged inputs rewrite
//! byte-identical files.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rectification::RasterImage;

pub const TOOL_NAME: &str = "photogram";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance block written at the top of output files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, serde::Deserialize)]
pub struct Header {
    pub stage: String,
    pub params: Vec<(String, String)>,
}

impl Header {
    pub fn new(stage: impl Into<String>) -> Self {
        Self {
            stage: stage.into(),
            params: Vec::new(),
        }
    }

    pub fn param(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.params.push((key.into(), value.to_string()));
        self
    }

    /// Header lines, each starting with `prefix` (e.g. `"# "` or `"comment "`).
    pub fn lines(&self, prefix: &str) -> Vec<String> {
        let mut out = vec![format!(
            "{prefix}{TOOL_NAME} {TOOL_VERSION} {}",
            self.stage
        )];
        out.extend(
            self.params
                .iter()
                .map(|(k, v)| format!("{prefix}{k}={}", v.replace(['\n', '\r'], " "))),
        );
        out
    }

    /// JSON object form, for JSON outputs.
    pub fn to_json(&self) -> serde_json::Value {
        let mut params = serde_json::Map::new();
        for (k, v) in &self.params {
            params.insert(k.clone(), serde_json::Value::String(v.clone()));
        }
        serde_json::json!({
            "tool": TOOL_NAME,
            "version": TOOL_VERSION,
            "stage": self.stage,
            "params": params,
        })
    }
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Writes `value` as a JSON object with an extra `meta` member holding `header`.
pub fn write_json_with_header<T: Serialize>(path: &Path, header: &Header, value: &T) -> Result<()> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::parse(path, e.to_string()))?;
    match v.as_object_mut() {
        Some(obj) => {
            let mut with_meta = serde_json::Map::new();
            with_meta.insert("meta".into(), header.to_json());
            with_meta.extend(std::mem::take(obj));
            write_json(path, &serde_json::Value::Object(with_meta))
        }
        None => write_json(
            path,
            &serde_json::json!({ "meta": header.to_json(), "data": v }),
        ),
    }
}

/// Reads JSON written by [`write_json_with_header`] (or plain JSON without `meta`).
pub fn read_json_skip_header<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let mut v: serde_json::Value = read_json(path)?;
    if let Some(obj) = v.as_object_mut() {
        obj.shift_remove("meta");
        if obj.len() == 1 {
            if let Some(data) = obj.get("data") {
                let data = data.clone();
                return serde_json::from_value(data).map_err(|e| Error::parse(path, e.to_string()));
            }
        }
    }
    serde_json::from_value(v).map_err(|e| Error::parse(path, e.to_string()))
}

/// 8-bit sample from a `[0, 1]` intensity.
pub fn quantize(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PGM (1 channel) or PPM (3 channels), 8 bits per sample.
pub fn encode_pnm(image: &RasterImage, header: Option<&Header>) -> Vec<u8> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n");
    if let Some(h) = header {
        for line in h.lines("# ") {
            out.push_str(&line);
            out.push('\n');
        }
    }
    out.push_str(&format!("{} {}\n255\n", image.width(), image.height()));
    let mut bytes = out.into_bytes();
    bytes.extend(image.samples().iter().map(|&s| quantize(s)));
    bytes
}

pub fn write_pnm(path: &Path, image: &RasterImage, header: Option<&Header>) -> Result<()> {
    write_bytes(path, &encode_pnm(image, header))
}

pub fn read_pnm(path: &Path) -> Result<RasterImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|m| Error::parse(path, m))
}

/// Parses binary P5/P6 with `maxval` up to 65535.
pub fn decode_pnm(bytes: &[u8]) -> std::result::Result<RasterImage, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(format!("unsupported format {other:?}, expected P5 or P6")),
    };
    let parse = |s: String, what: &str| -> std::result::Result<usize, String> {
        s.parse().map_err(|_| format!("bad {what} {s:?}"))
    };
    let width = parse(token()?, "width")?;
    let height = parse(token()?, "height")?;
    let maxval = parse(token()?, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("bad maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bytes_per_sample = if maxval < 256 { 1 } else { 2 };
    let count = width * height * channels;
    let data = bytes
        .get(pos..pos + count * bytes_per_sample)
        .ok_or_else(|| "truncated raster".to_string())?;
    let samples = if bytes_per_sample == 1 {
        data.iter().map(|&b| b as f64 / maxval as f64).collect()
    } else {
        data.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64)
            .collect()
    };
    RasterImage::new(width, height, channels, samples).map_err(|e| e.to_string())
}

/// Text with a `# `-prefixed header block.
pub fn with_comment_header(header: &Header, body: &str) -> String {
    let mut out = String::new();
    for line in header.lines("# ") {
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str(body);
    out
}

/// Strips leading `#` comment lines.
pub fn strip_comment_lines(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}
