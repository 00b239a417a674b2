//! Shared domain types.
//!
//! Frame sequences and pixel grids are both stored as row-major matrices of
//! `f64`, one row per frame or cell. They carry either raw input features or
//! encoder outputs; the row width is whatever dimension the data has.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single real-valued embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Contract("embedding must have at least one entry".into()));
        }
        check_finite(&values, "embedding")?;
        Ok(Embedding(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Embedding(vec![0.0; dim.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Per-frame embeddings of an utterance or an isolated spoken word.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    data: Vec<f64>,
    dim: usize,
    frame_duration: f64,
    source_id: String,
}

impl FrameSequence {
    pub const DEFAULT_FRAME_DURATION: f64 = 0.01;

    /// Builds a sequence from row-major `data` with `dim` columns.
    pub fn new(data: Vec<f64>, dim: usize, source_id: impl Into<String>) -> Result<Self> {
        Self::with_duration(data, dim, Self::DEFAULT_FRAME_DURATION, source_id)
    }

    pub fn with_duration(
        data: Vec<f64>,
        dim: usize,
        frame_duration: f64,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let source_id = source_id.into();
        if dim == 0 || data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::Contract(format!(
                "frame sequence {source_id}: {} values do not form frames of dimension {dim}",
                data.len()
            )));
        }
        if !(frame_duration.is_finite() && frame_duration > 0.0) {
            return Err(Error::Contract(format!("frame sequence {source_id}: frame duration must be positive")));
        }
        check_finite(&data, &source_id)?;
        Ok(FrameSequence { data, dim, frame_duration, source_id })
    }

    pub fn from_frames(frames: &[Vec<f64>], source_id: impl Into<String>) -> Result<Self> {
        let dim = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != dim) {
            return Err(Error::Contract("frames have unequal dimensions".into()));
        }
        Self::new(frames.concat(), dim, source_id)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_duration(&self) -> f64 {
        self.frame_duration
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Frames `start..=end` as a new sequence.
    pub fn crop(&self, start: usize, end: usize, source_id: impl Into<String>) -> Result<Self> {
        if start > end || end >= self.len() {
            return Err(Error::Contract(format!("crop [{start}, {end}] outside sequence of {} frames", self.len())));
        }
        Self::with_duration(
            self.data[start * self.dim..(end + 1) * self.dim].to_vec(),
            self.dim,
            self.frame_duration,
            source_id,
        )
    }

    /// Same frames with every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        FrameSequence { data: self.data.iter().map(|v| v * factor).collect(), ..self.clone() }
    }
}

/// Per-region image embeddings on an `height × width` grid, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    data: Vec<f64>,
    dim: usize,
    height: usize,
    width: usize,
}

impl PixelGrid {
    pub fn new(data: Vec<f64>, dim: usize, height: usize, width: usize) -> Result<Self> {
        if dim == 0 || height == 0 || width == 0 || data.len() != dim * height * width {
            return Err(Error::Contract(format!(
                "pixel grid: {} values do not form a {height}x{width} grid of dimension {dim}",
                data.len()
            )));
        }
        check_finite(&data, "pixel grid")?;
        Ok(PixelGrid { data, dim, height, width })
    }

    /// A `1 × cells.len()` grid.
    pub fn from_cells(cells: &[Vec<f64>]) -> Result<Self> {
        let dim = cells.first().map_or(0, Vec::len);
        if cells.iter().any(|c| c.len() != dim) {
            return Err(Error::Contract("cells have unequal dimensions".into()));
        }
        Self::new(cells.concat(), dim, 1, cells.len())
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cell(&self, p: usize) -> &[f64] {
        &self.data[p * self.dim..(p + 1) * self.dim]
    }

    pub fn cells(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, factor: f64) -> Self {
        PixelGrid { data: self.data.iter().map(|v| v * factor).collect(), ..self.clone() }
    }

    /// Mean over cells; the default image-level embedding.
    pub fn mean_cell(&self) -> Embedding {
        let mut mean = vec![0.0; self.dim];
        for cell in self.cells() {
            for (m, v) in mean.iter_mut().zip(cell) {
                *m += v;
            }
        }
        let n = self.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Embedding(mean)
    }
}

/// `T × P` matrix of frame-to-cell dot products.
#[derive(Debug, Clone, PartialEq)]
pub struct Matchmap {
    scores: Vec<f64>,
    frames: usize,
    cells: usize,
}

impl Matchmap {
    pub fn from_scores(scores: Vec<f64>, frames: usize, cells: usize) -> Result<Self> {
        if scores.len() != frames * cells {
            return Err(Error::Contract(format!("matchmap of {} scores is not {frames}x{cells}", scores.len())));
        }
        Ok(Matchmap { scores, frames, cells })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, t: usize, p: usize) -> f64 {
        self.scores[t * self.cells + p]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.scores[t * self.cells..(t + 1) * self.cells]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }
}

/// Dataset class identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Spoken-language tag such as `english`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Language(pub String);

impl Language {
    pub fn new(name: impl Into<String>) -> Self {
        Language(name.into())
    }

    pub fn english() -> Self {
        Language::new("english")
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Familiarity {
    Familiar,
    Novel,
    Background,
}

/// What a dataset item holds.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Word(FrameSequence),
    Utterance(FrameSequence),
    Image(PixelGrid),
}

/// Ground-truth position of one spoken word inside an utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentSpan {
    pub class: ClassId,
    /// First frame of the word.
    pub start: usize,
    /// Last frame of the word (inclusive).
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_id: Option<String>,
}

impl AlignmentSpan {
    pub fn contains(&self, frame: usize) -> bool {
        self.start <= frame && frame <= self.end
    }

    pub fn overlap(&self, start: usize, end: usize) -> usize {
        let lo = self.start.max(start);
        let hi = self.end.min(end);
        if lo > hi {
            0
        } else {
            hi - lo + 1
        }
    }
}

/// A dataset item with its labels loaded into memory.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledItem {
    pub id: String,
    pub payload: Payload,
    /// `None` for utterances, whose classes live in `alignments`.
    pub class: Option<ClassId>,
    pub language: Option<Language>,
    pub split: Split,
    pub familiarity: Option<Familiarity>,
    pub alignments: Vec<AlignmentSpan>,
}

impl LabeledItem {
    pub fn frames(&self) -> Option<&FrameSequence> {
        match &self.payload {
            Payload::Word(f) | Payload::Utterance(f) => Some(f),
            Payload::Image(_) => None,
        }
    }

    pub fn grid(&self) -> Option<&PixelGrid> {
        match &self.payload {
            Payload::Image(g) => Some(g),
            _ => None,
        }
    }

    pub fn is_word(&self) -> bool {
        matches!(self.payload, Payload::Word(_))
    }

    pub fn is_utterance(&self) -> bool {
        matches!(self.payload, Payload::Utterance(_))
    }

    pub fn is_image(&self) -> bool {
        matches!(self.payload, Payload::Image(_))
    }
}

/// One ground-truth spoken word with an image of the same class.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportPair {
    pub word: FrameSequence,
    pub image: PixelGrid,
}

/// `K` ground-truth word-image pairs for every few-shot class.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    classes: BTreeMap<ClassId, Vec<SupportPair>>,
    k: usize,
}

impl SupportSet {
    pub fn new(classes: BTreeMap<ClassId, Vec<SupportPair>>) -> Result<Self> {
        let k = classes.values().next().map_or(0, Vec::len);
        if k == 0 {
            return Err(Error::Contract("support set needs at least one class with k >= 1".into()));
        }
        if let Some((class, pairs)) = classes.iter().find(|(_, p)| p.len() != k) {
            return Err(Error::Contract(format!("class {class} has {} support pairs, expected {k}", pairs.len())));
        }
        Ok(SupportSet { classes, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.classes.keys().copied()
    }

    pub fn pairs(&self, class: ClassId) -> &[SupportPair] {
        self.classes.get(&class).map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, &[SupportPair])> {
        self.classes.iter().map(|(c, p)| (*c, p.as_slice()))
    }
}

/// One candidate image per few-shot class.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingSet {
    images: Vec<(ClassId, PixelGrid)>,
}

impl MatchingSet {
    pub fn new(mut images: Vec<(ClassId, PixelGrid)>) -> Result<Self> {
        images.sort_by_key(|(c, _)| *c);
        if images.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Contract("matching set has two images of one class".into()));
        }
        Ok(MatchingSet { images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Images in ascending class order.
    pub fn iter(&self) -> impl Iterator<Item = (ClassId, &PixelGrid)> {
        self.images.iter().map(|(c, g)| (*c, g))
    }
}

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numeric(format!("{what}: entry {i} is not finite"))),
        None => Ok(()),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_sequence_rejects_ragged_data() {
        assert!(FrameSequence::new(vec![1.0, 2.0, 3.0], 2, "x").is_err());
        assert!(FrameSequence::new(vec![], 2, "x").is_err());
        assert!(FrameSequence::with_duration(vec![1.0], 1, 0.0, "x").is_err());
    }

    #[test]
    fn non_finite_entries_are_rejected() {
        assert!(matches!(FrameSequence::new(vec![1.0, f64::NAN], 1, "x"), Err(Error::Numeric(_))));
        assert!(Embedding::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn grid_shape_must_match() {
        assert!(PixelGrid::new(vec![0.0; 12], 2, 2, 3).is_ok());
        assert!(PixelGrid::new(vec![0.0; 12], 2, 2, 2).is_err());
    }

    #[test]
    fn crop_takes_inclusive_range() {
        let seq = FrameSequence::new((0..10).map(f64::from).collect(), 2, "u").unwrap();
        let c = seq.crop(1, 3, "c").unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.frame(0), &[2.0, 3.0]);
        assert!(seq.crop(3, 5, "c").is_err());
    }

    #[test]
    fn support_set_requires_equal_k() {
        let word = FrameSequence::new(vec![1.0], 1, "w").unwrap();
        let image = PixelGrid::new(vec![1.0], 1, 1, 1).unwrap();
        let pair = SupportPair { word, image };
        let mut classes = BTreeMap::new();
        classes.insert(ClassId(0), vec![pair.clone(), pair.clone()]);
        classes.insert(ClassId(1), vec![pair.clone()]);
        assert!(SupportSet::new(classes.clone()).is_err());
        classes.insert(ClassId(1), vec![pair.clone(), pair]);
        assert_eq!(SupportSet::new(classes).unwrap().k(), 2);
    }

    #[test]
    fn matching_set_classes_distinct() {
        let g = PixelGrid::new(vec![1.0], 1, 1, 1).unwrap();
        assert!(MatchingSet::new(vec![(ClassId(1), g.clone()), (ClassId(1), g.clone())]).is_err());
        let m = MatchingSet::new(vec![(ClassId(2), g.clone()), (ClassId(1), g)]).unwrap();
        assert_eq!(m.iter().map(|(c, _)| c.0).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn span_overlap() {
        let s = AlignmentSpan { class: ClassId(0), start: 3, end: 6, word_id: None };
        assert_eq!(s.overlap(0, 2), 0);
        assert_eq!(s.overlap(5, 9), 2);
        assert_eq!(s.overlap(0, 9), 4);
    }
}
