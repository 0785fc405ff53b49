//! Template exchange files.
//!
//! Binary: magic `FTITMPL1`, `u32` dim, `u8` dtype tag (1 = f32, 2 = f64),
//! `u16` id length, UTF-8 source id, then `dim` little-endian values.
//! Text: one value per line; `#` lines are comments and
//! `# source_model_id: X` names the producing model.

use std::path::Path;

use crate::backends::FaceTemplate;
use crate::error::{Error, Result};

pub const TEMPLATE_MAGIC: &[u8; 8] = b"FTITMPL1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateDtype {
    F32,
    F64,
}

impl TemplateDtype {
    fn tag(self) -> u8 {
        match self {
            TemplateDtype::F32 => 1,
            TemplateDtype::F64 => 2,
        }
    }
}

pub fn encode_template_binary(t: &FaceTemplate, dtype: TemplateDtype) -> Result<Vec<u8>> {
    let id = t.source_model_id.as_bytes();
    let id_len = u16::try_from(id.len())
        .map_err(|_| Error::TemplateFormat("source id longer than 65535 bytes".into()))?;
    let dim = u32::try_from(t.dim()).map_err(|_| Error::TemplateFormat("dimension too large".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(TEMPLATE_MAGIC);
    out.extend_from_slice(&dim.to_le_bytes());
    out.push(dtype.tag());
    out.extend_from_slice(&id_len.to_le_bytes());
    out.extend_from_slice(id);
    for v in &t.values {
        match dtype {
            TemplateDtype::F32 => out.extend_from_slice(&(*v as f32).to_le_bytes()),
            TemplateDtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    Ok(out)
}

fn decode_binary(bytes: &[u8]) -> Result<FaceTemplate> {
    let short = || Error::TemplateFormat("truncated binary template".into());
    let rest = &bytes[8..];
    let dim = u32::from_le_bytes(rest.get(..4).ok_or_else(short)?.try_into().expect("4 bytes")) as usize;
    let tag = *rest.get(4).ok_or_else(short)?;
    let id_len =
        u16::from_le_bytes(rest.get(5..7).ok_or_else(short)?.try_into().expect("2 bytes")) as usize;
    let id = std::str::from_utf8(rest.get(7..7 + id_len).ok_or_else(short)?)
        .map_err(|_| Error::TemplateFormat("source id is not UTF-8".into()))?;
    let data = &rest[7 + id_len..];
    let width = match tag {
        1 => 4,
        2 => 8,
        t => return Err(Error::TemplateFormat(format!("unknown dtype tag {t}"))),
    };
    if data.len() != dim * width {
        return Err(Error::TemplateFormat(format!(
            "header declares {dim} values, file holds {} bytes of data",
            data.len()
        )));
    }
    let values = data
        .chunks_exact(width)
        .map(|c| match width {
            4 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
            _ => f64::from_le_bytes(c.try_into().expect("8 bytes")),
        })
        .collect();
    FaceTemplate::new(values, id)
}

pub fn encode_template_text(t: &FaceTemplate) -> String {
    let mut out = format!("# source_model_id: {}\n", t.source_model_id);
    for v in &t.values {
        out.push_str(&format!("{v}\n"));
    }
    out
}

fn decode_text(text: &str) -> Result<FaceTemplate> {
    let mut id = String::from("unknown");
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            if let Some(v) = c.trim().strip_prefix("source_model_id:") {
                id = v.trim().to_string();
            }
            continue;
        }
        values.push(line.parse::<f64>().map_err(|_| {
            Error::TemplateFormat(format!("line {}: not a number: '{line}'", i + 1))
        })?);
    }
    FaceTemplate::new(values, id)
}

/// Reads either format, detected by the magic bytes.
pub fn decode_template(bytes: &[u8]) -> Result<FaceTemplate> {
    if bytes.starts_with(TEMPLATE_MAGIC) {
        decode_binary(bytes)
    } else {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| Error::TemplateFormat("neither binary template nor UTF-8 text".into()))?;
        decode_text(text)
    }
}

pub fn load_template(path: &Path) -> Result<FaceTemplate> {
    decode_template(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_template(t: &FaceTemplate, path: &Path, binary: bool) -> Result<()> {
    let bytes = if binary {
        encode_template_binary(t, TemplateDtype::F64)?
    } else {
        encode_template_text(t).into_bytes()
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FaceTemplate {
        FaceTemplate::new(vec![0.25, -0.5, 0.125, 1.0 / 3.0], "fr-x").unwrap()
    }

    #[test]
    fn binary_f64_and_text_are_exact() {
        let t = sample();
        let b = encode_template_binary(&t, TemplateDtype::F64).unwrap();
        assert_eq!(decode_template(&b).unwrap(), t);
        assert_eq!(decode_template(encode_template_text(&t).as_bytes()).unwrap(), t);
    }

    #[test]
    fn binary_f32_is_close() {
        let t = sample();
        let b = encode_template_binary(&t, TemplateDtype::F32).unwrap();
        let back = decode_template(&b).unwrap();
        for (a, b) in t.values.iter().zip(&back.values) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn truncated_binary_rejected() {
        let b = encode_template_binary(&sample(), TemplateDtype::F64).unwrap();
        assert!(decode_template(&b[..b.len() - 3]).is_err());
    }
}
