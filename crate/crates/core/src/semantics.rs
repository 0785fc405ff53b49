//! Region-wise prompt banks and the aggregated semantic embedding.
//!
//! Each facial region owns a list of attribute prompts encoded once by the
//! text encoder. An image embedding is matched against every prompt of a
//! region by cosine similarity; the best prompt's text embedding represents
//! that region, and the per-region winners are concatenated in bank order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::{ImageTensor, Modality, VLEmbedding, VisionLanguageEncoder};
use crate::error::{Error, Result};
use crate::nn;

pub const DEFAULT_PROMPTS_TOML: &str = include_str!("../data/default_prompts.toml");

/// Ordered `(region, prompts)` pairs as read from a prompt file.
pub type RegionPrompts = Vec<(String, Vec<String>)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub text: String,
    pub embedding: VLEmbedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionBank {
    pub name: String,
    pub prompts: Vec<PromptEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBank {
    pub encoder_id: String,
    pub dim: usize,
    pub regions: Vec<RegionBank>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEmbedding {
    pub values: Vec<f64>,
    pub region_order: Vec<String>,
    /// Winning prompt index per region; empty for predicted embeddings.
    pub winner_indices: Vec<usize>,
}

impl SemanticEmbedding {
    pub fn region_count(&self) -> usize {
        self.region_order.len()
    }

    pub fn region_dim(&self) -> usize {
        if self.region_order.is_empty() {
            0
        } else {
            self.values.len() / self.region_order.len()
        }
    }

    pub fn segment(&self, r: usize) -> &[f64] {
        let d = self.region_dim();
        &self.values[r * d..(r + 1) * d]
    }
}

#[derive(Deserialize)]
struct PromptFile {
    region: Vec<PromptFileRegion>,
}

#[derive(Deserialize)]
struct PromptFileRegion {
    name: String,
    prompts: Vec<String>,
}

/// Parses a prompt file: a `[[region]]` array with `name` and `prompts`.
pub fn parse_prompt_file(text: &str) -> Result<RegionPrompts> {
    let file: PromptFile =
        toml::from_str(text).map_err(|e| Error::Config(format!("prompt file: {e}")))?;
    let out: RegionPrompts = file
        .region
        .into_iter()
        .map(|r| (r.name, r.prompts))
        .collect();
    validate_prompts(&out)?;
    Ok(out)
}

pub fn load_prompt_file(path: &Path) -> Result<RegionPrompts> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_prompt_file(&text)
}

pub fn default_prompts() -> RegionPrompts {
    parse_prompt_file(DEFAULT_PROMPTS_TOML).expect("bundled prompt file is valid")
}

fn validate_prompts(region_prompts: &[(String, Vec<String>)]) -> Result<()> {
    if region_prompts.is_empty() {
        return Err(Error::Empty("region list".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for (name, prompts) in region_prompts {
        if name.trim().is_empty() {
            return Err(Error::Empty("region name".into()));
        }
        if !seen.insert(name.as_str()) {
            return Err(Error::Config(format!("duplicate region '{name}'")));
        }
        if prompts.is_empty() {
            return Err(Error::Empty(format!("prompt list for region '{name}'")));
        }
        if prompts.iter().any(|p| p.trim().is_empty()) {
            return Err(Error::Empty(format!("prompt in region '{name}'")));
        }
    }
    Ok(())
}

/// Encodes every prompt once; region order follows the input order.
pub fn build_bank(
    region_prompts: &[(String, Vec<String>)],
    text_encoder: &dyn VisionLanguageEncoder,
) -> Result<PromptBank> {
    validate_prompts(region_prompts)?;
    let regions = region_prompts
        .iter()
        .map(|(name, prompts)| {
            let prompts = prompts
                .iter()
                .map(|text| {
                    Ok(PromptEntry {
                        text: text.clone(),
                        embedding: text_encoder.encode_text(text)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RegionBank {
                name: name.clone(),
                prompts,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PromptBank::from_regions(text_encoder.id().to_string(), regions)
}

impl PromptBank {
    pub fn from_regions(encoder_id: String, regions: Vec<RegionBank>) -> Result<Self> {
        let dim = regions
            .first()
            .and_then(|r| r.prompts.first())
            .map(|p| p.embedding.dim())
            .ok_or_else(|| Error::Empty("prompt bank".into()))?;
        let bank = Self {
            encoder_id,
            dim,
            regions,
        };
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::Empty("region list".into()));
        }
        for r in &self.regions {
            if r.prompts.is_empty() {
                return Err(Error::Empty(format!("prompt list for region '{}'", r.name)));
            }
            for p in &r.prompts {
                if p.embedding.modality != Modality::Text {
                    return Err(Error::Config(format!(
                        "prompt '{}' has a non-text embedding",
                        p.text
                    )));
                }
                if p.embedding.dim() != self.dim {
                    return Err(Error::DimensionMismatch {
                        context: "prompt embedding",
                        expected: self.dim,
                        got: p.embedding.dim(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn region_count(&self) -> usize {
        self.regions.len()
    }

    pub fn region_order(&self) -> Vec<String> {
        self.regions.iter().map(|r| r.name.clone()).collect()
    }

    pub fn region_index(&self, name: &str) -> Result<usize> {
        self.regions
            .iter()
            .position(|r| r.name == name)
            .ok_or_else(|| Error::UnknownRegion(name.to_string()))
    }

    /// Length of the concatenated semantic embedding, `R * d_c`.
    pub fn semantic_dim(&self) -> usize {
        self.regions.len() * self.dim
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bank: Self = serde_json::from_str(&text)?;
        bank.validate()?;
        Ok(bank)
    }
}

fn best_prompt(image_emb: &[f64], region: &RegionBank) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, p) in region.prompts.iter().enumerate() {
        let sim = nn::cosine(image_emb, &p.embedding.values).unwrap_or(0.0);
        // strict comparison keeps the lowest index on ties
        if sim > best.1 {
            best = (i, sim);
        }
    }
    best
}

/// Index and cosine similarity of the region's best-matching prompt.
pub fn match_region(
    image_emb: &VLEmbedding,
    bank: &PromptBank,
    region: &str,
) -> Result<(usize, f64)> {
    let r = bank.region_index(region)?;
    if image_emb.dim() != bank.dim {
        return Err(Error::DimensionMismatch {
            context: "image embedding vs prompt bank",
            expected: bank.dim,
            got: image_emb.dim(),
        });
    }
    Ok(best_prompt(&image_emb.values, &bank.regions[r]))
}

/// Concatenates each region's winning prompt embedding for an already
/// encoded image.
pub fn aggregate_from_embedding(
    image_emb: &VLEmbedding,
    bank: &PromptBank,
) -> Result<SemanticEmbedding> {
    if image_emb.dim() != bank.dim {
        return Err(Error::DimensionMismatch {
            context: "image embedding vs prompt bank",
            expected: bank.dim,
            got: image_emb.dim(),
        });
    }
    let mut values = Vec::with_capacity(bank.semantic_dim());
    let mut winner_indices = Vec::with_capacity(bank.region_count());
    for region in &bank.regions {
        let (k, _) = best_prompt(&image_emb.values, region);
        values.extend_from_slice(&region.prompts[k].embedding.values);
        winner_indices.push(k);
    }
    Ok(SemanticEmbedding {
        values,
        region_order: bank.region_order(),
        winner_indices,
    })
}

pub fn aggregate_semantics(
    image: &ImageTensor,
    bank: &PromptBank,
    vl_encoder: &dyn VisionLanguageEncoder,
) -> Result<SemanticEmbedding> {
    let emb = vl_encoder.encode_image(image)?;
    aggregate_from_embedding(&emb, bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::StubVlEncoder;

    fn prompts(spec: &[(&str, &[&str])]) -> RegionPrompts {
        spec.iter()
            .map(|(r, ps)| (r.to_string(), ps.iter().map(|p| p.to_string()).collect()))
            .collect()
    }

    #[test]
    fn minimal_bank() {
        let enc = StubVlEncoder::new("vl", 16, 1);
        let bank = build_bank(
            &prompts(&[("eyes", &["round eyes"]), ("nose", &["flat nose"])]),
            &enc,
        )
        .unwrap();
        assert_eq!(bank.region_count(), 2);
        assert_eq!(bank.regions[0].prompts.len(), 1);
        assert_eq!(bank.regions[1].prompts.len(), 1);
        assert_eq!(bank.semantic_dim(), 32);
    }

    #[test]
    fn default_bank_region_order() {
        let enc = StubVlEncoder::new("vl", 16, 1);
        let bank = build_bank(&default_prompts(), &enc).unwrap();
        assert_eq!(
            bank.region_order(),
            ["eyes", "nose", "mouth", "jaw", "eyebrow"]
        );
        assert!(bank.regions.iter().all(|r| r.prompts.len() == 8));
    }

    #[test]
    fn duplicate_prompts_get_identical_embeddings() {
        let enc = StubVlEncoder::new("vl", 16, 1);
        let bank = build_bank(&prompts(&[("eyes", &["round eyes", "round eyes"])]), &enc).unwrap();
        let p = &bank.regions[0].prompts;
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].embedding, p[1].embedding);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let enc = StubVlEncoder::new("vl", 16, 1);
        assert!(matches!(build_bank(&[], &enc), Err(Error::Empty(_))));
        assert!(matches!(
            build_bank(&prompts(&[("eyes", &[])]), &enc),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            build_bank(&prompts(&[("eyes", &["  "])]), &enc),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn self_match_and_unknown_region() {
        let enc = StubVlEncoder::new("vl", 16, 1);
        let bank = build_bank(&prompts(&[("eyes", &["a", "b", "c", "d"])]), &enc).unwrap();
        let target = bank.regions[0].prompts[2].embedding.clone();
        let (k, sim) = match_region(&target, &bank, "eyes").unwrap();
        assert_eq!(k, 2);
        assert!((sim - 1.0).abs() < 1e-12);
        assert!(matches!(
            match_region(&target, &bank, "ears"),
            Err(Error::UnknownRegion(_))
        ));
    }

    #[test]
    fn ties_pick_lowest_index() {
        let e = |v: Vec<f64>| VLEmbedding::new(v, Modality::Text).unwrap();
        let bank = PromptBank::from_regions(
            "manual".into(),
            vec![RegionBank {
                name: "eyes".into(),
                prompts: vec![
                    PromptEntry { text: "x".into(), embedding: e(vec![0.0, 1.0]) },
                    PromptEntry { text: "a".into(), embedding: e(vec![1.0, 0.0]) },
                    PromptEntry { text: "b".into(), embedding: e(vec![1.0, 0.0]) },
                ],
            }],
        )
        .unwrap();
        let img = VLEmbedding::new(vec![1.0, 0.0], Modality::Image).unwrap();
        assert_eq!(match_region(&img, &bank, "eyes").unwrap().0, 1);
        let s = aggregate_from_embedding(&img, &bank).unwrap();
        assert_eq!(s.winner_indices, vec![1]);
    }

    #[test]
    fn prompt_file_parse_errors() {
        assert!(parse_prompt_file("region = []").is_err());
        assert!(parse_prompt_file("[[region]]\nname='eyes'\nprompts=[]").is_err());
        let ok = parse_prompt_file("[[region]]\nname='eyes'\nprompts=['a']\n[[region]]\nname='nose'\nprompts=['b','c']").unwrap();
        assert_eq!(ok[1].0, "nose");
        assert_eq!(ok[1].1.len(), 2);
    }
}
