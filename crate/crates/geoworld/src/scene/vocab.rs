//! Fixed vocabularies: 12 object classes, 8 spatial relations, and the
//! 64-word question vocabulary with padding to length 16.

/// Object class inventory; distinct per scene so relations are unambiguous
/// by name.
pub const CLASS_LABELS: [&str; 12] = [
    "ball", "cube", "cone", "lamp", "vase", "book", "cup", "box", "star", "ring", "drum", "bell",
];

/// Position of a label in the class inventory; the canonical option
/// order.
pub fn class_index(label: &str) -> usize {
    CLASS_LABELS
        .iter()
        .position(|l| *l == label)
        .expect("known class label")
}

/// Per-class sprite intensity, evenly spaced in [0.2, 0.95].
pub fn class_intensity(label: &str) -> f64 {
    0.2 + class_index(label) as f64 * (0.95 - 0.2) / (CLASS_LABELS.len() - 1) as f64
}

pub const QUESTION_LEN: usize = 16;
pub const VOCAB_SIZE: usize = 64;
pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// 64-entry question vocabulary. Index 0 is padding, 1 unknown; the rest
/// cover the question templates, class labels, and relation phrases.
pub const VOCAB: [&str; VOCAB_SIZE] = [
    "<pad>", "<unk>", "which", "object", "is", "the", "to", "of", "what", "relation", "between",
    "and", "nearest", "farthest", "you", "left", "right", "above", "under", "behind", "front",
    "close", "far", "in", "side", "on", "ball", "cube", "cone", "lamp", "vase", "book", "cup",
    "box", "star", "ring", "drum", "bell", "viewer", "from", "your", "current", "location",
    "scene", "image", "picture", "where", "how", "many", "a", "an", "it", "this", "that", "near",
    "next", "top", "bottom", "closest", "away", "at", "with", "for", "by",
];

pub fn token_id(word: &str) -> usize {
    VOCAB.iter().position(|w| *w == word).unwrap_or(UNK)
}

/// Lower-case whitespace tokenization, padded/truncated to [`QUESTION_LEN`].
pub fn tokenize(question: &str) -> Vec<usize> {
    let mut ids: Vec<usize> = question
        .to_lowercase()
        .split_whitespace()
        .map(token_id)
        .take(QUESTION_LEN)
        .collect();
    ids.resize(QUESTION_LEN, PAD);
    ids
}
