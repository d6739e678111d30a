use serde::{Deserialize, Serialize};

use super::render::{project, Projection};
use super::spec::{SceneError, SceneSpec};
use super::{TAU_PX, TAU_Z};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Left,
    Right,
    Above,
    Under,
    Close,
    Far,
    Behind,
    Front,
}

impl Relation {
    pub const ALL: [Relation; 8] = [
        Relation::Left,
        Relation::Right,
        Relation::Above,
        Relation::Under,
        Relation::Close,
        Relation::Far,
        Relation::Behind,
        Relation::Front,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Relation::Left => "left",
            Relation::Right => "right",
            Relation::Above => "above",
            Relation::Under => "under",
            Relation::Close => "close",
            Relation::Far => "far",
            Relation::Behind => "behind",
            Relation::Front => "front",
        }
    }
}

/// (subject, relation, reference). `reference` is None for the egocentric
/// close/far relations (distance to the camera, not to another object).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationTriple {
    pub subject: usize,
    pub relation: Relation,
    pub reference: Option<usize>,
}

/// Derive all relation triples from the base camera's projections.
/// Left/right/above/under compare projected image coordinates with a 2 px
/// margin; behind/front compare depths with a 0.25 world-unit margin;
/// close/far pick the unique depth argmin/argmax when separated from the
/// runner-up by the same margin. Pairs inside a margin yield no triple.
pub fn label_relations(scene: &SceneSpec) -> Result<Vec<RelationTriple>, SceneError> {
    let projs = project(scene, &scene.base_camera)?;
    Ok(relations_from_projections(&projs))
}

pub fn relations_from_projections(projs: &[Projection]) -> Vec<RelationTriple> {
    let mut out = Vec::new();
    for a in projs {
        for b in projs {
            if a.object_id == b.object_id {
                continue;
            }
            if a.u < b.u - TAU_PX {
                out.push(RelationTriple {
                    subject: a.object_id,
                    relation: Relation::Left,
                    reference: Some(b.object_id),
                });
            }
            if a.u > b.u + TAU_PX {
                out.push(RelationTriple {
                    subject: a.object_id,
                    relation: Relation::Right,
                    reference: Some(b.object_id),
                });
            }
            // image v grows downward: smaller v is above
            if a.v < b.v - TAU_PX {
                out.push(RelationTriple {
                    subject: a.object_id,
                    relation: Relation::Above,
                    reference: Some(b.object_id),
                });
            }
            if a.v > b.v + TAU_PX {
                out.push(RelationTriple {
                    subject: a.object_id,
                    relation: Relation::Under,
                    reference: Some(b.object_id),
                });
            }
            if a.depth > b.depth + TAU_Z {
                out.push(RelationTriple {
                    subject: a.object_id,
                    relation: Relation::Behind,
                    reference: Some(b.object_id),
                });
            }
            if a.depth < b.depth - TAU_Z {
                out.push(RelationTriple {
                    subject: a.object_id,
                    relation: Relation::Front,
                    reference: Some(b.object_id),
                });
            }
        }
    }
    // egocentric close/far with unique-margin winners
    if projs.len() >= 2 {
        let mut by_depth: Vec<&Projection> = projs.iter().collect();
        by_depth.sort_by(|a, b| a.depth.total_cmp(&b.depth));
        if by_depth[1].depth - by_depth[0].depth > TAU_Z {
            out.push(RelationTriple {
                subject: by_depth[0].object_id,
                relation: Relation::Close,
                reference: None,
            });
        }
        let n = by_depth.len();
        if by_depth[n - 1].depth - by_depth[n - 2].depth > TAU_Z {
            out.push(RelationTriple {
                subject: by_depth[n - 1].object_id,
                relation: Relation::Far,
                reference: None,
            });
        }
    }
    out
}
