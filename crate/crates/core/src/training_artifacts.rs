//! Packing a grounding label and its pseudo boxes into one training example.
//!
//! The label sequence is `y_other` (the prefix) followed by the ground-truth
//! box span and then one span per pseudo box. Every box span:
//! - attends causally to the prefix and to itself, never to another span;
//! - reuses the ground-truth span's position ids, so a model trained on the
//!   packed sequence still decodes a single box;
//! - carries its pseudo label's weight in the token-level loss (1 for the
//!   prefix and the ground truth).

use std::fs;
use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, Space};
use crate::pseudo_label::PseudoLabelSet;

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("tokenizer {tokenizer} cannot encode {ch:?}")]
    Unencodable { tokenizer: String, ch: char },
    #[error("tokenizer {tokenizer} cannot decode id {id}")]
    Undecodable { tokenizer: String, id: u32 },
    #[error("cannot parse box from {0:?}")]
    Parse(String),
    #[error("box span lengths differ: {0:?}")]
    UnequalSpans(Vec<usize>),
    #[error("layout has {spans} box spans but the label set implies {expected}")]
    LengthMismatch { spans: usize, expected: usize },
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("artifact invariant violated: {0}")]
    Invariant(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, ArtifactError>;

/// Maps label text to integer ids.
pub trait Tokenizer {
    fn id(&self) -> &str;
    fn encode(&self, text: &str) -> Result<Vec<u32>>;
    fn decode(&self, ids: &[u32]) -> Result<String>;
}

/// One id per printable ASCII byte; anything else is rejected.
#[derive(Debug, Clone, Copy, Default)]
pub struct AsciiTokenizer;

impl Tokenizer for AsciiTokenizer {
    fn id(&self) -> &str {
        "ascii-byte-v1"
    }

    fn encode(&self, text: &str) -> Result<Vec<u32>> {
        text.chars()
            .map(|ch| {
                if ch.is_ascii_graphic() || ch == ' ' {
                    Ok(ch as u32)
                } else {
                    Err(ArtifactError::Unencodable {
                        tokenizer: self.id().to_string(),
                        ch,
                    })
                }
            })
            .collect()
    }

    fn decode(&self, ids: &[u32]) -> Result<String> {
        ids.iter()
            .map(|&id| match char::from_u32(id) {
                Some(ch) if ch.is_ascii_graphic() || ch == ' ' => Ok(ch),
                _ => Err(ArtifactError::Undecodable {
                    tokenizer: self.id().to_string(),
                    id,
                }),
            })
            .collect()
    }
}

/// Fixed-width box text, `(x1,y1),(x2,y2)` with two decimals per field.
pub fn format_box(b: &BBox) -> String {
    format!("({:.2},{:.2}),({:.2},{:.2})", b.xmin, b.ymin, b.xmax, b.ymax)
}

/// Inverse of [`format_box`]; strict about the layout.
pub fn parse_box(text: &str) -> Result<BBox> {
    let err = || ArtifactError::Parse(text.to_string());
    let inner = text
        .strip_prefix('(')
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(err)?;
    let (first, second) = inner.split_once("),(").ok_or_else(err)?;
    let mut vals = [0.0; 4];
    let fields = first.split(',').chain(second.split(','));
    let mut n = 0;
    for f in fields {
        if n == 4 {
            return Err(err());
        }
        vals[n] = f.parse().map_err(|_| err())?;
        n += 1;
    }
    if n != 4 {
        return Err(err());
    }
    Ok(BBox::raw(vals[0], vals[1], vals[2], vals[3], Space::Original))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentLayout {
    pub prefix_len: usize,
    /// Half-open `[start, end)` ranges; span 0 is the ground truth.
    pub box_spans: Vec<(usize, usize)>,
}

impl SegmentLayout {
    /// Layout for a prefix followed by `spans` equal-length box spans.
    pub fn uniform(prefix_len: usize, span_len: usize, spans: usize) -> Self {
        let box_spans = (0..spans)
            .map(|i| {
                let start = prefix_len + i * span_len;
                (start, start + span_len)
            })
            .collect();
        Self { prefix_len, box_spans }
    }

    pub fn total_len(&self) -> usize {
        self.box_spans.last().map_or(self.prefix_len, |&(_, end)| end)
    }

    pub fn span_len(&self) -> Option<usize> {
        self.box_spans.first().map(|&(s, e)| e - s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.box_spans.is_empty() {
            return Err(ArtifactError::InvalidLayout("no ground-truth span".into()));
        }
        let mut cursor = self.prefix_len;
        for &(start, end) in &self.box_spans {
            if start != cursor || end <= start {
                return Err(ArtifactError::InvalidLayout(format!(
                    "span ({start}, {end}) does not continue at {cursor}"
                )));
            }
            cursor = end;
        }
        Ok(())
    }

    /// Which span a token belongs to; `None` for prefix tokens.
    pub fn span_of(&self, token: usize) -> Option<usize> {
        if token < self.prefix_len {
            return None;
        }
        self.box_spans.iter().position(|&(s, e)| token >= s && token < e)
    }
}

/// Label tokens and their span layout: prefix, ground truth, then pseudo boxes.
pub fn serialize_label(prefix_text: &str, set: &PseudoLabelSet, tok: &dyn Tokenizer) -> Result<(Vec<u32>, SegmentLayout)> {
    let mut ids = tok.encode(prefix_text)?;
    let prefix_len = ids.len();
    let mut spans = Vec::with_capacity(set.len() + 1);
    for b in std::iter::once(&set.gt).chain(&set.boxes) {
        let start = ids.len();
        ids.extend(tok.encode(&format_box(b))?);
        spans.push((start, ids.len()));
    }
    let lens: Vec<usize> = spans.iter().map(|(s, e)| e - s).collect();
    if lens.windows(2).any(|w| w[0] != w[1]) {
        return Err(ArtifactError::UnequalSpans(lens));
    }
    Ok((ids, SegmentLayout { prefix_len, box_spans: spans }))
}

pub fn build_loss_weights(layout: &SegmentLayout, set: &PseudoLabelSet) -> Result<Vec<f64>> {
    layout.validate()?;
    if layout.box_spans.len() != set.len() + 1 || set.weights.len() != set.len() {
        return Err(ArtifactError::LengthMismatch {
            spans: layout.box_spans.len(),
            expected: set.len() + 1,
        });
    }
    let mut weights = vec![1.0; layout.total_len()];
    for (&(start, end), &w) in layout.box_spans.iter().skip(1).zip(&set.weights) {
        weights[start..end].fill(w);
    }
    Ok(weights)
}

/// Compact attention mask: prefix is causal, each box span sees the prefix
/// and its own earlier tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMask {
    pub layout: SegmentLayout,
}

impl SegmentMask {
    pub fn allows(&self, query: usize, key: usize) -> bool {
        if key > query {
            return false;
        }
        if key < self.layout.prefix_len {
            return true;
        }
        match (self.layout.span_of(query), self.layout.span_of(key)) {
            (Some(q), Some(k)) => q == k,
            _ => false,
        }
    }

    pub fn len(&self) -> usize {
        self.layout.total_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_dense(&self) -> DenseMask {
        let n = self.len();
        let mut dense = DenseMask::zeros(n);
        for q in 0..n {
            for k in 0..=q {
                if self.allows(q, k) {
                    dense.set(q, k, true);
                }
            }
        }
        dense
    }
}

/// Row-major square bit matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseMask {
    n: usize,
    bits: Vec<u8>,
}

impl DenseMask {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            bits: vec![0; (n * n).div_ceil(8)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, q: usize, k: usize) -> bool {
        let i = q * self.n + k;
        self.bits[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn set(&mut self, q: usize, k: usize, on: bool) {
        let i = q * self.n + k;
        if on {
            self.bits[i / 8] |= 0x80 >> (i % 8);
        } else {
            self.bits[i / 8] &= !(0x80 >> (i % 8));
        }
    }

    pub fn row_sum(&self, q: usize) -> usize {
        (0..self.n).filter(|&k| self.get(q, k)).count()
    }

    /// Packed bits, MSB first, base64-encoded.
    pub fn to_base64(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(&self.bits)
    }

    pub fn from_base64(n: usize, text: &str) -> Result<Self> {
        let bits = base64::engine::general_purpose::STANDARD
            .decode(text)
            .map_err(|e| ArtifactError::Invariant(format!("dense mask: {e}")))?;
        if bits.len() != (n * n).div_ceil(8) {
            return Err(ArtifactError::Invariant(format!(
                "dense mask has {} bytes, expected {} for {n} tokens",
                bits.len(),
                (n * n).div_ceil(8)
            )));
        }
        Ok(Self { n, bits })
    }
}

pub fn build_attention_mask(layout: &SegmentLayout) -> Result<SegmentMask> {
    layout.validate()?;
    Ok(SegmentMask { layout: layout.clone() })
}

pub fn build_position_ids(layout: &SegmentLayout) -> Result<Vec<usize>> {
    layout.validate()?;
    let lens: Vec<usize> = layout.box_spans.iter().map(|(s, e)| e - s).collect();
    if lens.windows(2).any(|w| w[0] != w[1]) {
        return Err(ArtifactError::UnequalSpans(lens));
    }
    let span_len = lens[0];
    let mut ids: Vec<usize> = (0..layout.prefix_len).collect();
    for _ in &layout.box_spans {
        ids.extend(layout.prefix_len..layout.prefix_len + span_len);
    }
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub gt: [f64; 4],
    pub pseudo_boxes: Vec<[f64; 4]>,
    pub seed: Option<u64>,
}

/// On-disk form of a packed training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingArtifact {
    pub version: u32,
    pub tokenizer_id: String,
    /// Where the label starts inside the consumer's full sequence (image and
    /// instruction tokens come first). Position ids here are label-relative.
    pub prefix_offset: usize,
    pub token_ids: Vec<u32>,
    pub loss_weights: Vec<f64>,
    /// Box spans in concatenation order; the prefix is `[0, segments[0].start)`.
    pub segments: Vec<Segment>,
    pub position_ids: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense_mask: Option<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ArtifactOptions {
    pub prefix_offset: usize,
    pub dense_mask: bool,
    pub seed: Option<u64>,
}

impl TrainingArtifact {
    pub fn build(prefix_text: &str, set: &PseudoLabelSet, tok: &dyn Tokenizer, opts: ArtifactOptions) -> Result<Self> {
        let (token_ids, layout) = serialize_label(prefix_text, set, tok)?;
        let loss_weights = build_loss_weights(&layout, set)?;
        let position_ids = build_position_ids(&layout)?;
        let mask = build_attention_mask(&layout)?;
        let segments = layout
            .box_spans
            .iter()
            .enumerate()
            .map(|(i, &(start, end))| Segment {
                start,
                end,
                weight: if i == 0 { 1.0 } else { set.weights[i - 1] },
            })
            .collect();
        Ok(Self {
            version: ARTIFACT_VERSION,
            tokenizer_id: tok.id().to_string(),
            prefix_offset: opts.prefix_offset,
            token_ids,
            loss_weights,
            segments,
            position_ids,
            dense_mask: opts.dense_mask.then(|| mask.to_dense().to_base64()),
            provenance: Provenance {
                gt: set.gt.as_array(),
                pseudo_boxes: set.boxes.iter().map(BBox::as_array).collect(),
                seed: opts.seed,
            },
        })
    }

    pub fn layout(&self) -> SegmentLayout {
        SegmentLayout {
            prefix_len: self.segments.first().map_or(self.token_ids.len(), |s| s.start),
            box_spans: self.segments.iter().map(|s| (s.start, s.end)).collect(),
        }
    }

    pub fn mask(&self) -> SegmentMask {
        SegmentMask { layout: self.layout() }
    }

    pub fn decoded_dense_mask(&self) -> Result<Option<DenseMask>> {
        self.dense_mask
            .as_deref()
            .map(|m| DenseMask::from_base64(self.token_ids.len(), m))
            .transpose()
    }

    /// Check every structural invariant of a packed example.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ArtifactError::Invariant(m));
        let layout = self.layout();
        layout.validate()?;
        let n = self.token_ids.len();
        if layout.total_len() != n || self.loss_weights.len() != n || self.position_ids.len() != n {
            return bad(format!(
                "lengths disagree: tokens {n}, weights {}, positions {}, layout {}",
                self.loss_weights.len(),
                self.position_ids.len(),
                layout.total_len()
            ));
        }
        for (j, &w) in self.loss_weights.iter().enumerate() {
            let want = match layout.span_of(j) {
                None | Some(0) => 1.0,
                Some(i) => self.segments[i].weight,
            };
            if w != want {
                return bad(format!("token {j} has weight {w}, expected {want}"));
            }
        }
        if self.segments[0].weight != 1.0 {
            return bad("ground-truth span must have weight 1".into());
        }
        let expected_positions = build_position_ids(&layout)?;
        if self.position_ids != expected_positions {
            return bad("position ids do not share the ground-truth span positions".into());
        }
        if let Some(dense) = self.decoded_dense_mask()? {
            let seg = self.mask();
            for q in 0..n {
                for k in 0..n {
                    if dense.get(q, k) != seg.allows(q, k) {
                        return bad(format!("dense mask disagrees with segments at ({q}, {k})"));
                    }
                }
            }
        }
        if self.provenance.pseudo_boxes.len() + 1 != self.segments.len() {
            return bad("provenance box count does not match segments".into());
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|source| ArtifactError::Json {
            path: path.display().to_string(),
            source,
        })?;
        fs::write(path, text).map_err(|source| ArtifactError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| ArtifactError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ArtifactError::Json {
            path: path.display().to_string(),
            source,
        })
    }
}

pub fn emit_artifact(a: &TrainingArtifact, path: &Path) -> Result<()> {
    a.write(path)
}

/// Tokens processed for `labels = m + 1` supervised boxes, packed versus
/// one example per label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenEconomy {
    pub pseudo_boxes: usize,
    pub packed_tokens: usize,
    pub independent_tokens: usize,
    pub ratio: f64,
    pub savings: f64,
}

pub fn token_economy(prefix_len: usize, span_len: usize, pseudo_boxes: usize) -> TokenEconomy {
    let labels = pseudo_boxes + 1;
    let packed = prefix_len + labels * span_len;
    let independent = labels * (prefix_len + span_len);
    let ratio = packed as f64 / independent as f64;
    TokenEconomy {
        pseudo_boxes,
        packed_tokens: packed,
        independent_tokens: independent,
        ratio,
        savings: 1.0 - ratio,
    }
}
