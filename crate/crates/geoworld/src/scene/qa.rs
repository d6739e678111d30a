use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::relations::{Relation, RelationTriple};
use super::render::render;
use super::spec::{SceneError, SceneSpec};
use super::vocab::tokenize;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QAExample {
    /// H*W intensity grid in [0,1], row-major.
    pub image: Vec<f64>,
    pub question: String,
    pub question_tokens: Vec<usize>,
    pub options: Vec<String>,
    pub answer_index: usize,
    pub relation: Relation,
}

fn question_text(relation: Relation, reference: Option<&str>) -> String {
    match relation {
        Relation::Left => format!("which object is to the left of the {}", reference.unwrap()),
        Relation::Right => format!("which object is to the right of the {}", reference.unwrap()),
        Relation::Above => format!("which object is above the {}", reference.unwrap()),
        Relation::Under => format!("which object is under the {}", reference.unwrap()),
        Relation::Behind => format!("which object is behind the {}", reference.unwrap()),
        Relation::Front => format!("which object is in front of the {}", reference.unwrap()),
        Relation::Close => "which object is the nearest to your current location".to_string(),
        Relation::Far => "which object is the farthest from your current location".to_string(),
    }
}

/// Emit one multiple-choice example for a scene. Picks a relation tag
/// uniformly among tags present, then a triple uniformly within the tag.
/// The option list is a deterministic function of the scene and the
/// chosen predicate: the answer plus every in-scene label that does not
/// satisfy the predicate (the reference object counts — it can never
/// satisfy a relation against itself), sorted in class-inventory order.
/// Content-derived ordering keeps the correct letter inferable from the
/// rendered image; an order decoupled from scene content would make the
/// letter unpredictable in principle, since the answer head fuses image
/// and text additively and only the vision side trains.
pub fn make_qa(
    scene: &SceneSpec,
    relations: &[RelationTriple],
    seed: u64,
) -> Result<QAExample, SceneError> {
    if relations.is_empty() {
        return Err(SceneError::Invalid("scene has no labeled relations".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut tags: Vec<Relation> = Vec::new();
    for r in Relation::ALL {
        if relations.iter().any(|t| t.relation == r) {
            tags.push(r);
        }
    }
    // seeded shuffle of tags, then of triples within a tag; first triple
    // with a valid distractor set wins
    for i in (1..tags.len()).rev() {
        let j = rng.gen_range(0..=i);
        tags.swap(i, j);
    }
    let mut picks: Vec<&RelationTriple> = Vec::new();
    for tag in &tags {
        let mut candidates: Vec<&RelationTriple> =
            relations.iter().filter(|t| t.relation == *tag).collect();
        for i in (1..candidates.len()).rev() {
            let j = rng.gen_range(0..=i);
            candidates.swap(i, j);
        }
        picks.extend(candidates);
    }
    for triple in picks {
        let tag = triple.relation;
        let answer_label = scene.objects[triple.subject].class_label.clone();
        let reference_label = triple
            .reference
            .map(|id| scene.objects[id].class_label.clone());

        // distractors: every in-scene label whose object does not satisfy
        // the predicate (the reference qualifies for directional
        // relations — nothing satisfies a relation against itself)
        let distractors: Vec<String> = scene
            .objects
            .iter()
            .filter(|o| {
                o.id != triple.subject
                    && !relations.iter().any(|t| {
                        t.relation == tag && t.subject == o.id && t.reference == triple.reference
                    })
            })
            .map(|o| o.class_label.clone())
            .collect();
        if distractors.is_empty() {
            continue;
        }
        let mut distractors = distractors;
        distractors.sort_by_key(|label| super::vocab::class_index(label));
        distractors.truncate(3); // option lists hold at most 4 entries
        let mut options = vec![answer_label.clone()];
        options.extend(distractors);
        options.sort_by_key(|label| super::vocab::class_index(label));
        let answer_index = options.iter().position(|o| *o == answer_label).unwrap();
        let question = question_text(tag, reference_label.as_deref());
        let image = render(scene, &scene.base_camera)?;
        return Ok(QAExample {
            image,
            question_tokens: tokenize(&question),
            question,
            options,
            answer_index,
            relation: tag,
        });
    }
    Err(SceneError::Invalid(
        "no relation with a valid distractor set".into(),
    ))
}
