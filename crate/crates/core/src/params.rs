//! Flat, segment-annotated model weights.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named block of parameters with a tensor shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self { name: name.into(), shape }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Model weights exchanged between clients and the server.
///
/// `values` is laid out segment after segment, row-major within a segment.
/// Construction enforces that the value count matches the layout and that
/// every value is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct ParameterVector {
    segments: Vec<Segment>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawParams {
    segments: Vec<Segment>,
    values: Vec<f64>,
}

impl TryFrom<RawParams> for ParameterVector {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        Self::new(raw.segments, raw.values)
    }
}

impl ParameterVector {
    pub fn new(segments: Vec<Segment>, values: Vec<f64>) -> Result<Self> {
        if segments.iter().any(|s| s.shape.is_empty() || s.shape.contains(&0)) {
            return Err(Error::InvalidConfig("segment shapes must be nonempty and positive".into()));
        }
        let expected: usize = segments.iter().map(Segment::len).sum();
        if expected != values.len() {
            return Err(Error::DimensionMismatch { expected, found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { segments, values })
    }

    pub fn zeros(segments: Vec<Segment>) -> Self {
        let n = segments.iter().map(Segment::len).sum();
        Self { segments, values: alloc::vec![0.0; n] }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same segment list, so values can be combined coordinate-wise.
    pub fn is_compatible(&self, other: &Self) -> bool {
        self.segments == other.segments
    }

    pub fn ensure_compatible(&self, other: &Self) -> Result<()> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(Error::LayoutMismatch)
        }
    }

    /// Values of the named segment.
    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        let mut offset = 0;
        for s in &self.segments {
            let n = s.len();
            if s.name == name {
                return Some(&self.values[offset..offset + n]);
            }
            offset += n;
        }
        None
    }

    /// Replace the values while keeping the layout.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.segments.clone(), values)
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Euclidean distance; the layouts must match.
    pub fn l2_distance(&self, other: &Self) -> Result<f64> {
        self.ensure_compatible(other)?;
        let sq: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(libm::sqrt(sq))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn layout() -> Vec<Segment> {
        vec![Segment::new("w", vec![2, 3]), Segment::new("b", vec![2])]
    }

    #[test]
    fn length_must_match_layout() {
        assert!(ParameterVector::new(layout(), vec![0.0; 8]).is_ok());
        assert_eq!(
            ParameterVector::new(layout(), vec![0.0; 7]),
            Err(Error::DimensionMismatch { expected: 8, found: 7 })
        );
    }

    #[test]
    fn rejects_non_finite() {
        let mut v = vec![0.0; 8];
        v[3] = f64::NAN;
        assert_eq!(ParameterVector::new(layout(), v), Err(Error::NonFinite));
        let mut v = vec![0.0; 8];
        v[0] = f64::INFINITY;
        assert_eq!(ParameterVector::new(layout(), v), Err(Error::NonFinite));
    }

    #[test]
    fn segment_lookup() {
        let p = ParameterVector::new(layout(), (0..8).map(f64::from).collect()).unwrap();
        assert_eq!(p.segment("b"), Some(&[6.0, 7.0][..]));
        assert_eq!(p.segment("w").unwrap().len(), 6);
        assert!(p.segment("nope").is_none());
    }

    #[test]
    fn compatibility_is_segment_identity() {
        let a = ParameterVector::zeros(layout());
        let b = ParameterVector::zeros(vec![Segment::new("w", vec![3, 2]), Segment::new("b", vec![2])]);
        assert!(a.is_compatible(&a.clone()));
        assert!(!a.is_compatible(&b));
        assert_eq!(a.l2_distance(&b), Err(Error::LayoutMismatch));
    }
}
