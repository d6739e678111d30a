//! Corpus generation and JSON Lines persistence. Each line is one
//! [`QAExample`] with the image stored as base64 of raw little-endian f64.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::qa::{make_qa, QAExample};
use super::relations::{label_relations, Relation};
use super::spec::{sample_scene, SceneConfig, SceneError, SceneSpec};

/// One persisted corpus entry: the example plus the scene it came from
/// (kept so teacher features and oracle checks can be recomputed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: u64,
    pub scene: SceneSpec,
    #[serde(flatten)]
    pub example: QAExample,
}

#[derive(Serialize, Deserialize)]
struct WireEntry {
    id: u64,
    scene: SceneSpec,
    image_b64: String,
    question: String,
    question_tokens: Vec<usize>,
    options: Vec<String>,
    answer_index: usize,
    relation: Relation,
}

/// Generate `count` examples from scene seeds `seed_start..`, skipping
/// seeds whose scene yields no usable QA. Deterministic in `seed_start`.
pub fn generate_corpus(
    seed_start: u64,
    count: usize,
    config: &SceneConfig,
) -> Result<Vec<CorpusEntry>, SceneError> {
    let mut out = Vec::with_capacity(count);
    let mut seed = seed_start;
    while out.len() < count {
        let scene = sample_scene(seed, config)?;
        let relations = label_relations(&scene)?;
        let qa_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
        if !relations.is_empty() {
            if let Ok(example) = make_qa(&scene, &relations, qa_seed) {
                out.push(CorpusEntry {
                    id: seed,
                    scene,
                    example,
                });
            }
        }
        seed = seed.wrapping_add(1);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, entries: &[CorpusEntry]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    for e in entries {
        let mut bytes = Vec::with_capacity(e.example.image.len() * 8);
        for v in &e.example.image {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let wire = WireEntry {
            id: e.id,
            scene: e.scene.clone(),
            image_b64: B64.encode(&bytes),
            question: e.example.question.clone(),
            question_tokens: e.example.question_tokens.clone(),
            options: e.example.options.clone(),
            answer_index: e.example.answer_index,
            relation: e.example.relation,
        };
        serde_json::to_writer(&mut w, &wire)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_jsonl(path: &Path) -> std::io::Result<Vec<CorpusEntry>> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireEntry = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let bytes = B64
            .decode(wire.image_b64.as_bytes())
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let image: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(CorpusEntry {
            id: wire.id,
            scene: wire.scene,
            example: QAExample {
                image,
                question: wire.question,
                question_tokens: wire.question_tokens,
                options: wire.options,
                answer_index: wire.answer_index,
                relation: wire.relation,
            },
        });
    }
    Ok(out)
}
