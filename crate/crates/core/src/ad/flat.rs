//! Flat parameter vectors with named segments.
//!
//! Both model weights and hyperparameters live in a single contiguous
//! `Vec<f64>`; a [`Layout`] names the contiguous pieces so that programs can
//! address them as matrices.

use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Ordered segments that tile `[0, len)` with no gaps or overlaps.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Layout {
    segments: Vec<Segment>,
    len: usize,
}

impl Layout {
    /// Builds a layout by laying the named lengths end to end.
    pub fn from_lengths<S: Into<String>>(parts: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let mut segments = Vec::new();
        let mut offset = 0;
        for (name, len) in parts {
            segments.push(Segment {
                name: name.into(),
                offset,
                len,
            });
            offset += len;
        }
        Self::new(segments)
    }

    /// Validates an explicit segment list.
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let mut cursor = 0;
        for (i, seg) in segments.iter().enumerate() {
            if seg.offset != cursor {
                return Err(Error::Validation(format!(
                    "segment `{}` starts at {} but previous segments end at {}",
                    seg.name, seg.offset, cursor
                )));
            }
            if segments[..i].iter().any(|s| s.name == seg.name) {
                return Err(Error::Validation(format!("duplicate segment name `{}`", seg.name)));
            }
            cursor += seg.len;
        }
        Ok(Layout {
            segments,
            len: cursor,
        })
    }

    /// A single unnamed-ish segment covering everything.
    pub fn single(name: &str, len: usize) -> Self {
        Layout {
            segments: vec![Segment {
                name: name.to_string(),
                offset: 0,
                len,
            }],
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatVector {
    data: Vec<f64>,
    layout: Arc<Layout>,
}

impl FlatVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        FlatVector {
            data: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn filled(layout: Arc<Layout>, value: f64) -> Self {
        FlatVector {
            data: vec![value; layout.len()],
            layout,
        }
    }

    pub fn from_vec(layout: Arc<Layout>, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.len() {
            return Err(Error::Dimension(format!(
                "vector has {} entries, layout expects {}",
                data.len(),
                layout.len()
            )));
        }
        Ok(FlatVector { data, layout })
    }

    /// A vector with one segment named `name`.
    pub fn from_slice(name: &str, data: &[f64]) -> Self {
        FlatVector {
            layout: Arc::new(Layout::single(name, data.len())),
            data: data.to_vec(),
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .segment(name)
            .map(|s| &self.data[s.offset..s.offset + s.len])
    }

    /// Same data, different (equal-length) layout.
    pub fn with_layout(self, layout: Arc<Layout>) -> Result<Self> {
        Self::from_vec(layout, self.data)
    }

    pub fn same_layout(&self, other: &FlatVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn check_layout(&self, other: &FlatVector, what: &str) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what}: layouts differ ({} vs {} entries)",
                self.len(),
                other.len()
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &FlatVector) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &FlatVector) {
        for (a, b) in self.data.iter_mut().zip(&x.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    pub fn scaled(&self, alpha: f64) -> FlatVector {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    pub fn add(&self, other: &FlatVector) -> FlatVector {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &FlatVector) -> FlatVector {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FlatVector {
        FlatVector {
            data: self.data.iter().map(|&x| f(x)).collect(),
            layout: self.layout.clone(),
        }
    }

    pub fn zip_map(&self, other: &FlatVector, f: impl Fn(f64, f64) -> f64) -> FlatVector {
        debug_assert_eq!(self.len(), other.len());
        FlatVector {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            layout: self.layout.clone(),
        }
    }

    /// Unit basis vector `e_index` in this vector's layout.
    pub fn basis(layout: Arc<Layout>, index: usize) -> FlatVector {
        let mut v = FlatVector::zeros(layout);
        v.data[index] = 1.0;
        v
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity, with the convention that two zero vectors are
/// identical (1) and a zero vector against a nonzero one is orthogonal (0).
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let aa = dot(a, a);
    let bb = dot(b, b);
    if aa == 0.0 && bb == 0.0 {
        return 1.0;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
