//! Text descriptions of grid cells used as language-model prompts.

use serde::{Deserialize, Serialize};

use super::vocab::POI_CATEGORIES;
use crate::geometry::{CellShape, GridCell};

pub const DEFAULT_MAX_TOKENS: usize = 256;

const INSTRUCTION: &str =
    "Summarize what kind of urban area the following grid cell is, based on its description.";
const INSTRUCTION_REPHRASED: &str =
    "Read the cell profile below and characterize the urban area it covers.";

/// Where, and in what wording, the task instruction appears.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstructionVariant {
    #[default]
    Standard,
    Removed,
    Rephrased,
    MovedToEnd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptionConfig {
    pub variant: InstructionVariant,
    pub max_tokens: usize,
}

impl Default for DescriptionConfig {
    fn default() -> Self {
        Self {
            variant: InstructionVariant::Standard,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

/// The description body without the instruction sentence.
pub fn describe_body(cell: &GridCell, poi_row: &[f64], address: &str) -> String {
    let shape = match cell.shape() {
        CellShape::Hex => "hexagon",
        CellShape::Square => "square",
    };
    let mut s = format!(
        "Shape: {shape}. Edge length: {:.0} meters. Area: {:.0} square meters. Address: {address}.",
        cell.edge_length,
        cell.area()
    );
    let pois: Vec<String> = poi_row
        .iter()
        .zip(POI_CATEGORIES)
        .filter(|(c, _)| **c > 0.0)
        .map(|(c, name)| format!("{} {name}", c.round() as u64))
        .collect();
    if pois.is_empty() {
        s.push_str(" The cell has no recorded POIs.");
    } else {
        s.push_str(" POIs: ");
        s.push_str(&pois.join(", "));
        s.push('.');
    }
    s
}

/// Fill the cell template and truncate to `cfg.max_tokens` whitespace tokens.
pub fn compose_cell_description(
    cell: &GridCell,
    poi_row: &[f64],
    address: &str,
    cfg: &DescriptionConfig,
) -> String {
    let body = describe_body(cell, poi_row, address);
    let text = match cfg.variant {
        InstructionVariant::Standard => format!("{INSTRUCTION} {body}"),
        InstructionVariant::Removed => body,
        InstructionVariant::Rephrased => format!("{INSTRUCTION_REPHRASED} {body}"),
        InstructionVariant::MovedToEnd => format!("{body} {INSTRUCTION}"),
    };
    truncate_tokens(&text, cfg.max_tokens)
}

pub fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() <= max_tokens {
        text.to_string()
    } else {
        tokens[..max_tokens].join(" ")
    }
}

/// Parse the `"<count> <category>"` items back out of a description.
pub fn parse_poi_counts(text: &str) -> Vec<(usize, f64)> {
    let Some(start) = text.find("POIs: ") else {
        return Vec::new();
    };
    let list = &text[start + 6..];
    let list = list.split('.').next().unwrap_or("");
    list.split(", ")
        .filter_map(|item| {
            let (n, name) = item.trim().split_once(' ')?;
            let count: f64 = n.parse().ok()?;
            let k = POI_CATEGORIES.iter().position(|c| *c == name)?;
            Some((k, count))
        })
        .collect()
}
