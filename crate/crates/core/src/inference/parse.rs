//! Tolerant coordinate extraction from free-form model text.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, ImageDims, PointCoord, Space};

use super::{Mode, Prediction};

/// How to read numbers outside `[0, 1]`. Values inside `[0, 1]` are always
/// taken as normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoordConvention {
    /// Reject anything outside `[0, 1]`.
    Normalized,
    /// Pixels of the image the model was shown.
    #[default]
    Pixel,
    Percent,
    /// Thousandths, as emitted by several VLM families.
    Permille,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("no {mode:?} coordinates found in {text:?}")]
    NoMatch { mode: Mode, text: String },
    #[error("coordinate {value} cannot be read under the {convention:?} convention")]
    OutOfRange { value: f64, convention: CoordConvention },
}

const NUM: &str = r"(-?\d+(?:\.\d+)?)";

static BOX_PAIRS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"[\(\[]\s*{NUM}\s*,\s*{NUM}\s*[\)\]]\s*,?\s*[\(\[]\s*{NUM}\s*,\s*{NUM}\s*[\)\]]")).unwrap()
});
static BOX_FLAT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"[\(\[]\s*{NUM}\s*,\s*{NUM}\s*,\s*{NUM}\s*,\s*{NUM}\s*[\)\]]")).unwrap());
static POINT: LazyLock<Regex> = LazyLock::new(|| Regex::new(&format!(r"[\(\[]\s*{NUM}\s*,\s*{NUM}\s*[\)\]]")).unwrap());

fn first_match(re: &Regex, text: &str) -> Option<(usize, Vec<f64>)> {
    let caps = re.captures(text)?;
    let start = caps.get(0)?.start();
    let vals = caps.iter().skip(1).map(|m| m.and_then(|m| m.as_str().parse().ok())).collect::<Option<Vec<f64>>>()?;
    Some((start, vals))
}

fn earliest_box(text: &str) -> Option<[f64; 4]> {
    let pairs = first_match(&BOX_PAIRS, text);
    let flat = first_match(&BOX_FLAT, text);
    let (_, v) = match (pairs, flat) {
        (Some(a), Some(b)) => {
            if a.0 <= b.0 {
                a
            } else {
                b
            }
        }
        (a, b) => a.or(b)?,
    };
    Some([v[0], v[1], v[2], v[3]])
}

/// Bring raw numbers into `[0, 1]`. `axes` says which values are x (true)
/// and which are y (false), for the pixel convention.
fn normalize(raw: &mut [f64], axes: &[bool], convention: CoordConvention, view: ImageDims) -> Result<(), ParseError> {
    if raw.iter().all(|v| (0.0..=1.0).contains(v)) {
        return Ok(());
    }
    let out_of_range = |value| ParseError::OutOfRange { value, convention };
    if let Some(&bad) = raw.iter().find(|v| **v < 0.0) {
        return Err(out_of_range(bad));
    }
    for (v, &is_x) in raw.iter_mut().zip(axes) {
        let scale = match convention {
            CoordConvention::Normalized => return Err(out_of_range(*v)),
            CoordConvention::Pixel => f64::from(if is_x { view.width } else { view.height }),
            CoordConvention::Percent => 100.0,
            CoordConvention::Permille => 1000.0,
        };
        let scaled = *v / scale;
        if !(0.0..=1.0).contains(&scaled) {
            return Err(out_of_range(*v));
        }
        *v = scaled;
    }
    Ok(())
}

/// Extract the first coordinate group for `mode` from `text`.
///
/// Box mode accepts `(a,b),(c,d)` and `(a,b,c,d)` (brackets work too) and
/// orders min/max. Point mode takes the first `(a,b)`, falling back to the
/// center of a box. The result is tagged with `space`.
pub fn parse_coords(text: &str, mode: Mode, convention: CoordConvention, view: ImageDims, space: Space) -> Result<Prediction, ParseError> {
    let no_match = || ParseError::NoMatch {
        mode,
        text: text.to_string(),
    };
    match mode {
        Mode::Box => {
            let mut v = earliest_box(text).ok_or_else(no_match)?;
            normalize(&mut v, &[true, false, true, false], convention, view)?;
            let (x0, x1) = (v[0].min(v[2]), v[0].max(v[2]));
            let (y0, y1) = (v[1].min(v[3]), v[1].max(v[3]));
            Ok(Prediction::Box(BBox::raw(x0, y0, x1, y1, space)))
        }
        Mode::Point => {
            let box_hit = first_match(&BOX_PAIRS, text).or_else(|| first_match(&BOX_FLAT, text));
            let point_hit = first_match(&POINT, text);
            match (point_hit, box_hit) {
                (Some((ps, _)), Some((bs, b))) if bs <= ps => {
                    let mut v = [b[0], b[1], b[2], b[3]];
                    normalize(&mut v, &[true, false, true, false], convention, view)?;
                    Ok(Prediction::Point(PointCoord::raw((v[0] + v[2]) / 2.0, (v[1] + v[3]) / 2.0, space)))
                }
                (Some((_, p)), _) => {
                    let mut v = [p[0], p[1]];
                    normalize(&mut v, &[true, false], convention, view)?;
                    Ok(Prediction::Point(PointCoord::raw(v[0], v[1], space)))
                }
                (None, _) => Err(no_match()),
            }
        }
    }
}
