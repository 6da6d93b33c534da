//! Instruction templates for first-stage and zoomed-view grounding.

use serde::{Deserialize, Serialize};

use crate::geometry::PointCoord;

/// Placeholder substituted with the user instruction.
pub const INSTRUCTION_SLOT: &str = "[INSTRUCTION]";

/// Canonical zoomed-view template; index 0 of [`ZOOM_BOX_TEMPLATES`].
pub const ZOOM_BOX_TEMPLATE: &str =
    "Given the zoomed-in view centered on the initial prediction, predict a detailed bounding box for [INSTRUCTION]";

pub const ZOOM_BOX_TEMPLATES: [&str; 5] = [
    ZOOM_BOX_TEMPLATE,
    "This image is a magnified crop around an initial guess. Predict a precise bounding box for [INSTRUCTION]",
    "The view is zoomed in on the first prediction. Give the exact bounding box of [INSTRUCTION]",
    "Zoomed-in region around the initial estimate: locate [INSTRUCTION] and output a refined bounding box",
    "You are looking at an enlarged crop centered on the previous prediction. Output a tight bounding box for [INSTRUCTION]",
];

pub const ZOOM_POINT_TEMPLATE: &str =
    "Given the zoomed-in view centered on the initial prediction, predict a detailed point coordinate for [INSTRUCTION]";

pub const BASE_BOX_TEMPLATE: &str = "In this UI screenshot, what is the position of the element corresponding to the command \"[INSTRUCTION]\"? Answer with a bounding box (x1,y1),(x2,y2) in normalized coordinates.";

pub const BASE_POINT_TEMPLATE: &str = "In this UI screenshot, what is the position of the element corresponding to the command \"[INSTRUCTION]\"? Answer with a point (x,y) in normalized coordinates.";

pub fn render(template: &str, instruction: &str) -> String {
    template.replace(INSTRUCTION_SLOT, instruction)
}

pub fn zoom_box_template(template_id: usize) -> Option<&'static str> {
    ZOOM_BOX_TEMPLATES.get(template_id).copied()
}

/// A previous navigation step and where it clicked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryAction {
    pub action: String,
    pub point: PointCoord,
}

pub const HISTORY_HEADER: &str = "Previous actions:";

/// Append a history block; coordinates are written as given, so callers pass
/// them already expressed in the space of the image being shown.
pub fn with_history(prompt: &str, history: &[HistoryAction]) -> String {
    if history.is_empty() {
        return prompt.to_string();
    }
    let mut out = format!("{prompt}\n{HISTORY_HEADER}");
    for (i, h) in history.iter().enumerate() {
        out.push_str(&format!("\n{}. {} at ({:.2},{:.2})", i + 1, h.action, h.point.x, h.point.y));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Space;

    #[test]
    fn canonical_zoom_rendering() {
        assert_eq!(
            render(ZOOM_BOX_TEMPLATE, "click the send icon"),
            "Given the zoomed-in view centered on the initial prediction, predict a detailed bounding box for click the send icon"
        );
        assert!(ZOOM_BOX_TEMPLATES.iter().all(|t| t.contains(INSTRUCTION_SLOT)));
        assert!(zoom_box_template(5).is_none());
    }

    #[test]
    fn history_block() {
        let h = vec![HistoryAction {
            action: "click".into(),
            point: PointCoord::raw(0.123, 0.5, Space::Original),
        }];
        let p = with_history("find it", &h);
        assert_eq!(p, "find it\nPrevious actions:\n1. click at (0.12,0.50)");
        assert_eq!(with_history("x", &[]), "x");
    }
}
