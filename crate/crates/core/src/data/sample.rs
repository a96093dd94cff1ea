use crate::error::{HemlError, Result};
use crate::numerics::DenseMatrix;

/// One segment (or combined segment) of one input, rendered onto the full
/// canvas: `features` equal the background wherever `mask` is false.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSample {
    pub segment_id: String,
    pub features: Vec<f32>,
    pub mask: Vec<bool>,
    pub label: i32,
}

impl SegmentSample {
    pub fn validate(&self, background: f32) -> Result<()> {
        if self.features.len() != self.mask.len() {
            return Err(HemlError::Shape(format!(
                "segment {}: {} features but {} mask entries",
                self.segment_id,
                self.features.len(),
                self.mask.len()
            )));
        }
        for (i, (&f, &m)) in self.features.iter().zip(&self.mask).enumerate() {
            if !f.is_finite() {
                return Err(HemlError::NonFinite(format!("segment {} feature {i}", self.segment_id)));
            }
            if !m && f.to_bits() != background.to_bits() {
                return Err(HemlError::Data(format!(
                    "segment {}: feature {i} = {f} lies outside the mask but is not background {background}",
                    self.segment_id
                )));
            }
        }
        Ok(())
    }
}

/// Result of overlaying parts; `overlaps` counts positions covered by more
/// than one part (the earliest part wins).
#[derive(Debug, Clone, PartialEq)]
pub struct Composition<T> {
    pub value: T,
    pub overlaps: usize,
}

/// Name of a node that covers `parts`, in order.
pub fn composite_id<S: AsRef<str>>(parts: &[S]) -> String {
    parts.iter().map(|p| p.as_ref()).collect::<Vec<_>>().join("+")
}

fn overlay_row(
    feats: &[&[f32]],
    masks: &[&[bool]],
    background: f32,
    out_feat: &mut [f32],
    out_mask: &mut [bool],
) -> usize {
    let mut overlaps = 0;
    for pos in 0..out_feat.len() {
        let mut covered = false;
        out_feat[pos] = background;
        out_mask[pos] = false;
        for (f, m) in feats.iter().zip(masks) {
            if m[pos] {
                if covered {
                    overlaps += 1;
                } else {
                    covered = true;
                    out_feat[pos] = f[pos];
                    out_mask[pos] = true;
                }
            }
        }
    }
    overlaps
}

/// Overlays the parts of one input onto a shared canvas.
pub fn compose_segments(parts: &[SegmentSample], background: f32) -> Result<Composition<SegmentSample>> {
    let first = parts
        .first()
        .ok_or_else(|| HemlError::Usage("cannot compose an empty list of segments".into()))?;
    let dim = first.features.len();
    for p in parts {
        if p.label != first.label {
            return Err(HemlError::Data(format!(
                "label disagreement while composing: {} has {}, {} has {}",
                first.segment_id, first.label, p.segment_id, p.label
            )));
        }
        if p.features.len() != dim || p.mask.len() != dim {
            return Err(HemlError::Shape(format!(
                "segment {} has length {}, expected {dim}",
                p.segment_id,
                p.features.len()
            )));
        }
    }
    let feats: Vec<&[f32]> = parts.iter().map(|p| p.features.as_slice()).collect();
    let masks: Vec<&[bool]> = parts.iter().map(|p| p.mask.as_slice()).collect();
    let mut features = vec![background; dim];
    let mut mask = vec![false; dim];
    let overlaps = overlay_row(&feats, &masks, background, &mut features, &mut mask);
    if overlaps > 0 {
        log::warn!("{overlaps} overlapping mask positions while composing; earlier part kept");
    }
    let ids: Vec<&str> = parts.iter().map(|p| p.segment_id.as_str()).collect();
    Ok(Composition {
        value: SegmentSample {
            segment_id: composite_id(&ids),
            features,
            mask,
            label: first.label,
        },
        overlaps,
    })
}

/// All samples of one segment for one split, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub segment_id: String,
    pub features: DenseMatrix<f32>,
    /// `n x dim`, row-major.
    pub masks: Vec<bool>,
    pub labels: Vec<i32>,
}

impl Dataset {
    pub fn new(
        segment_id: impl Into<String>,
        features: DenseMatrix<f32>,
        masks: Vec<bool>,
        labels: Vec<i32>,
    ) -> Result<Self> {
        let (n, dim) = features.shape();
        if masks.len() != n * dim || labels.len() != n {
            return Err(HemlError::Shape(format!(
                "dataset with {n}x{dim} features needs {} mask entries and {n} labels, got {} and {}",
                n * dim,
                masks.len(),
                labels.len()
            )));
        }
        Ok(Self {
            segment_id: segment_id.into(),
            features,
            masks,
            labels,
        })
    }

    pub fn from_samples(samples: &[SegmentSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| HemlError::Data("dataset needs at least one sample".into()))?;
        let rows: Vec<&[f32]> = samples.iter().map(|s| s.features.as_slice()).collect();
        let mut masks = Vec::with_capacity(samples.len() * first.mask.len());
        for s in samples {
            if s.segment_id != first.segment_id {
                return Err(HemlError::Data(format!(
                    "mixed segments in one dataset: {} and {}",
                    first.segment_id, s.segment_id
                )));
            }
            if s.mask.len() != s.features.len() {
                return Err(HemlError::Shape(format!(
                    "sample of {} has mask/feature length mismatch",
                    s.segment_id
                )));
            }
            masks.extend_from_slice(&s.mask);
        }
        Self::new(
            first.segment_id.clone(),
            DenseMatrix::from_rows(&rows)?,
            masks,
            samples.iter().map(|s| s.label).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn mask_row(&self, i: usize) -> &[bool] {
        let d = self.dim();
        &self.masks[i * d..(i + 1) * d]
    }

    pub fn sample(&self, i: usize) -> SegmentSample {
        SegmentSample {
            segment_id: self.segment_id.clone(),
            features: self.features.row(i).to_vec(),
            mask: self.mask_row(i).to_vec(),
            label: self.labels[i],
        }
    }

    pub fn validate(&self, background: f32) -> Result<()> {
        for i in 0..self.len() {
            let row = self.features.row(i);
            for (j, (&f, &m)) in row.iter().zip(self.mask_row(i)).enumerate() {
                if !f.is_finite() {
                    return Err(HemlError::NonFinite(format!(
                        "{} sample {i} feature {j}",
                        self.segment_id
                    )));
                }
                if !m && f.to_bits() != background.to_bits() {
                    return Err(HemlError::Data(format!(
                        "{} sample {i}: feature {j} outside the mask is {f}, expected background {background}",
                        self.segment_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        let mut l = self.labels.clone();
        l.sort_unstable();
        l.dedup();
        l.len()
    }
}

/// Index-aligned composition of whole datasets.
pub fn compose_datasets(parts: &[&Dataset], background: f32) -> Result<Composition<Dataset>> {
    let first = parts
        .first()
        .ok_or_else(|| HemlError::Usage("cannot compose an empty list of datasets".into()))?;
    let (n, dim) = first.features.shape();
    for p in parts {
        if p.features.shape() != (n, dim) {
            return Err(HemlError::Shape(format!(
                "cannot compose {} ({:?}) with {} ({:?})",
                first.segment_id,
                first.features.shape(),
                p.segment_id,
                p.features.shape()
            )));
        }
        if let Some(i) = (0..n).find(|&i| p.labels[i] != first.labels[i]) {
            return Err(HemlError::Data(format!(
                "label disagreement at sample {i} between {} and {}",
                first.segment_id, p.segment_id
            )));
        }
    }
    let mut features = DenseMatrix::zeros(n, dim);
    let mut masks = vec![false; n * dim];
    let mut overlaps = 0;
    for i in 0..n {
        let feats: Vec<&[f32]> = parts.iter().map(|p| p.features.row(i)).collect();
        let ms: Vec<&[bool]> = parts.iter().map(|p| p.mask_row(i)).collect();
        overlaps += overlay_row(
            &feats,
            &ms,
            background,
            features.row_mut(i),
            &mut masks[i * dim..(i + 1) * dim],
        );
    }
    if overlaps > 0 {
        log::warn!("{overlaps} overlapping mask positions while composing datasets; earlier part kept");
    }
    let ids: Vec<&str> = parts.iter().map(|p| p.segment_id.as_str()).collect();
    Ok(Composition {
        value: Dataset {
            segment_id: composite_id(&ids),
            features,
            masks,
            labels: first.labels.clone(),
        },
        overlaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part(id: &str, features: &[f32], mask: &[bool], label: i32) -> SegmentSample {
        SegmentSample {
            segment_id: id.into(),
            features: features.to_vec(),
            mask: mask.to_vec(),
            label,
        }
    }

    #[test]
    fn disjoint_union() {
        let a = part("a", &[3.0, 0.0], &[true, false], 1);
        let b = part("b", &[0.0, 5.0], &[false, true], 1);
        let c = compose_segments(&[a, b], 0.0).unwrap();
        assert_eq!(c.value.features, vec![3.0, 5.0]);
        assert_eq!(c.value.mask, vec![true, true]);
        assert_eq!(c.value.segment_id, "a+b");
        assert_eq!(c.overlaps, 0);
    }

    #[test]
    fn single_part_is_unchanged() {
        let a = part("hair", &[0.0, 2.5, 0.0], &[false, true, false], 0);
        let c = compose_segments(std::slice::from_ref(&a), 0.0).unwrap();
        assert_eq!(c.value, a);
    }

    #[test]
    fn overlap_keeps_earlier_part() {
        let a = part("a", &[1.0, 2.0, 0.0], &[true, true, false], 0);
        let b = part("b", &[0.0, 9.0, 4.0], &[false, true, true], 0);
        let c = compose_segments(&[a, b], 0.0).unwrap();
        assert_eq!(c.value.features, vec![1.0, 2.0, 4.0]);
        assert_eq!(c.overlaps, 1);
    }

    #[test]
    fn composition_errors() {
        assert!(compose_segments(&[], 0.0).unwrap_err().is_usage());
        let a = part("a", &[1.0], &[true], 0);
        let b = part("b", &[0.0], &[false], 1);
        assert!(matches!(compose_segments(&[a, b], 0.0), Err(HemlError::Data(_))));
    }

    #[test]
    fn background_valued_pixels_inside_mask_survive() {
        let a = part("a", &[0.0, 0.0], &[true, false], 0);
        let b = part("b", &[0.0, 7.0], &[false, true], 0);
        let c = compose_segments(&[a, b], 0.0).unwrap();
        assert_eq!(c.value.mask, vec![true, true]);
        c.value.validate(0.0).unwrap();
    }

    #[test]
    fn validate_flags_stray_features() {
        let a = part("a", &[1.0, 3.0], &[true, false], 0);
        assert!(matches!(a.validate(0.0), Err(HemlError::Data(_))));
    }
}
