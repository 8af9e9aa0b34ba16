//! Shipped rule fixtures: the published task listings with rule sources that
//! reproduce them, plus the known-invalid mappings used to exercise the gate.

use crate::task::{parse_task, Domain, RuleOrigin, RuleSpec, TaskInstance};
use crate::value::{Dimension, Value};

#[derive(Debug, Clone, Copy)]
pub struct GoldenRule {
    pub name: &'static str,
    pub domain: Domain,
    pub dimension: Dimension,
    pub rule_description: &'static str,
    pub inverse_rule_description: &'static str,
    pub source: &'static str,
    /// Published task document, when the rule comes with one.
    pub listing: Option<&'static str>,
}

macro_rules! rule_source {
    ($name:literal) => {
        include_str!(concat!("../assets/rules/", $name, ".py"))
    };
}

macro_rules! listing {
    ($name:literal) => {
        Some(include_str!(concat!("../assets/listings/", $name, ".json")))
    };
}

pub const INTERLEAVE_HALVES: GoldenRule = GoldenRule {
    name: "interleave_halves",
    domain: Domain::Symbolic,
    dimension: Dimension::D1,
    rule_description: "Split the sequence into a first half (the larger half when the length is odd) and a second half, then interleave them starting with the second half.",
    inverse_rule_description: "Read elements alternately into the second and first halves, then concatenate the first half followed by the second half.",
    source: rule_source!("interleave_halves"),
    listing: listing!("interleave_halves"),
};

pub const BLOCK_DIAGONAL_SWAP: GoldenRule = GoldenRule {
    name: "block_diagonal_swap",
    domain: Domain::Symbolic,
    dimension: Dimension::D2,
    rule_description: "Within every complete non-overlapping 2x2 block, exchange the top-right and bottom-left cells; incomplete rows and columns stay unchanged.",
    inverse_rule_description: "Apply the same block-wise exchange again; it is its own inverse.",
    source: rule_source!("block_diagonal_swap"),
    listing: listing!("block_diagonal_swap"),
};

pub const ATOMIC_NUMBER_LETTERS: GoldenRule = GoldenRule {
    name: "atomic_number_letters",
    domain: Domain::Semantic,
    dimension: Dimension::D1,
    rule_description: "Replace each letter by the chemical element whose atomic number equals the letter's position in the alphabet.",
    inverse_rule_description: "Split each string into element symbols and replace each symbol by the letter at its atomic number.",
    source: rule_source!("atomic_number_letters"),
    listing: listing!("atomic_number_letters"),
};

pub const MIRROR_CIPHER_ROTATION: GoldenRule = GoldenRule {
    name: "mirror_cipher_rotation",
    domain: Domain::Semantic,
    dimension: Dimension::D2,
    rule_description: "Rotate the grid by 180 degrees and mirror every letter, digit and paired bracket (A<->Z, 0<->9, ( <-> )).",
    inverse_rule_description: "Apply the same rotation and mirror substitution; the rule is an involution.",
    source: rule_source!("mirror_cipher_rotation"),
    listing: listing!("mirror_cipher_rotation"),
};

pub const VOXEL_ROTATION_ATBASH: GoldenRule = GoldenRule {
    name: "voxel_rotation_atbash",
    domain: Domain::Semantic,
    dimension: Dimension::D3,
    rule_description: "Rotate the cube 90 degrees clockwise about its vertical axis, then apply the Atbash cipher to every letter.",
    inverse_rule_description: "Apply the Atbash cipher and rotate the cube 90 degrees counter-clockwise about its vertical axis.",
    source: rule_source!("voxel_rotation_atbash"),
    listing: listing!("voxel_rotation_atbash"),
};

pub const ROW_COLUMN_SHIFT: GoldenRule = GoldenRule {
    name: "row_column_shift",
    domain: Domain::Symbolic,
    dimension: Dimension::D2,
    rule_description: "Rotate each row i right by i positions, then rotate each column j down by j positions (both modulo the size).",
    inverse_rule_description: "Rotate each column j up by j positions, then rotate each row i left by i positions.",
    source: rule_source!("row_column_shift"),
    listing: listing!("row_column_shift"),
};

pub const ATBASH_DIGIT_ROTATION: GoldenRule = GoldenRule {
    name: "atbash_digit_rotation",
    domain: Domain::Semantic,
    dimension: Dimension::D2,
    rule_description: "Apply Atbash to letters and the complement to nine to digits, then rotate the grid of strings by 180 degrees.",
    inverse_rule_description: "Apply the same substitution and rotation; the rule is an involution.",
    source: rule_source!("atbash_digit_rotation"),
    listing: listing!("atbash_digit_rotation"),
};

/// Index permutation by the smallest stride coprime to the length.
pub const COPRIME_STRIDE_PERMUTATION: GoldenRule = GoldenRule {
    name: "coprime_stride_permutation",
    domain: Domain::Symbolic,
    dimension: Dimension::D1,
    rule_description: "For length n, find the smallest k in [2, n-1] with gcd(k, n) = 1 and move the element at position i to position (i * k) mod n.",
    inverse_rule_description: "Read position (i * k) mod n back into position i.",
    source: rule_source!("coprime_stride_permutation"),
    listing: None,
};

/// Forward and inverse that disagree on payload rotation.
pub const FLAWED_BRACKET_ROTATION: GoldenRule = GoldenRule {
    name: "flawed_bracket_rotation",
    domain: Domain::Symbolic,
    dimension: Dimension::D1,
    rule_description: "Rotate the payload between angle brackets left by its length and prefix it with the length inside braces.",
    inverse_rule_description: "Read the length prefix and rotate the payload back.",
    source: rule_source!("flawed_bracket_rotation"),
    listing: None,
};

/// One-to-many: a random choice among three candidates.
pub const RANDOM_CHOICE: GoldenRule = GoldenRule {
    name: "random_choice",
    domain: Domain::Symbolic,
    dimension: Dimension::D1,
    rule_description: "Return x, x+1 or x+2 at random.",
    inverse_rule_description: "Return the value unchanged.",
    source: rule_source!("random_choice"),
    listing: None,
};

/// Many-to-one with no inverse entry point.
pub const LAST_DIGIT: GoldenRule = GoldenRule {
    name: "last_digit",
    domain: Domain::Symbolic,
    dimension: Dimension::D1,
    rule_description: "Keep only the last decimal digit.",
    inverse_rule_description: "",
    source: rule_source!("last_digit"),
    listing: None,
};

pub const IDENTITY: GoldenRule = GoldenRule {
    name: "identity",
    domain: Domain::Symbolic,
    dimension: Dimension::D1,
    rule_description: "Return the input unchanged.",
    inverse_rule_description: "Return the output unchanged.",
    source: rule_source!("identity"),
    listing: None,
};

pub const ERASE_ALL: GoldenRule = GoldenRule {
    name: "erase_all",
    domain: Domain::Symbolic,
    dimension: Dimension::D1,
    rule_description: "Replace every input by the empty sequence.",
    inverse_rule_description: "Return the value unchanged.",
    source: rule_source!("erase_all"),
    listing: None,
};

/// Every rule that ships with a published listing.
pub const LISTINGS: [GoldenRule; 7] = [
    INTERLEAVE_HALVES,
    BLOCK_DIAGONAL_SWAP,
    ATOMIC_NUMBER_LETTERS,
    MIRROR_CIPHER_ROTATION,
    VOXEL_ROTATION_ATBASH,
    ROW_COLUMN_SHIFT,
    ATBASH_DIGIT_ROTATION,
];

/// Every shipped rule, listings first, then the verification fixtures.
pub const ALL_RULES: [GoldenRule; 13] = [
    INTERLEAVE_HALVES,
    BLOCK_DIAGONAL_SWAP,
    ATOMIC_NUMBER_LETTERS,
    MIRROR_CIPHER_ROTATION,
    VOXEL_ROTATION_ATBASH,
    ROW_COLUMN_SHIFT,
    ATBASH_DIGIT_ROTATION,
    COPRIME_STRIDE_PERMUTATION,
    FLAWED_BRACKET_ROTATION,
    RANDOM_CHOICE,
    LAST_DIGIT,
    IDENTITY,
    ERASE_ALL,
];

/// Inspiration snippets offered to the rule author, one per line.
pub const INSPIRATION_RULES: &str = include_str!("../assets/inspiration_rules.txt");

/// Removes repeated values, keeping the last occurrence of each.
pub fn dedup_keep_last(values: Vec<Value>) -> Vec<Value> {
    let mut seen = std::collections::HashSet::new();
    let mut out: Vec<Value> = values
        .into_iter()
        .rev()
        .filter(|v| seen.insert(v.canonical()))
        .collect();
    out.reverse();
    out
}

pub fn inspiration_rules() -> Vec<String> {
    INSPIRATION_RULES
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

impl GoldenRule {
    pub fn rule_with_inputs(&self, input_set: Vec<Value>) -> RuleSpec {
        RuleSpec {
            rule_description: self.rule_description.to_string(),
            inverse_rule_description: self.inverse_rule_description.to_string(),
            source: self.source.to_string(),
            input_set,
            origin: RuleOrigin::Imported,
        }
    }

    /// The published task with this rule attached and metadata filled in.
    /// The rule's input set drops repeated inputs, keeping the query last.
    pub fn task(&self) -> Option<TaskInstance> {
        let doc = self.listing?;
        let mut task = parse_task(doc).expect("shipped listings parse");
        task.rule = Some(self.rule_with_inputs(dedup_keep_last(task.inputs())));
        task.domain = self.domain;
        task.dimension = self.dimension;
        task.author_model = "listing".into();
        Some(task.with_computed_id())
    }
}
