//! Agreement between the segmentation and classification branches, class
//! selection, and the final classified segmentation map.

use serde::Serialize;

use crate::bifurcated::BranchOutput;
use crate::error::{Error, Result};
use crate::imaging::{largest_connected_component, BinaryMap};

/// `(|S & C| / |S| + |S & C| / |C|) / 2`, where a ratio with an empty
/// denominator counts as 0.
pub fn similarity(s: &BinaryMap, c: &BinaryMap) -> Result<f64> {
    s.check_dims(c, "similarity")?;
    let (mut ns, mut nc, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in s.bits().iter().zip(c.bits()) {
        ns += a as usize;
        nc += b as usize;
        both += (a && b) as usize;
    }
    let ratio = |den: usize| if den == 0 { 0.0 } else { both as f64 / den as f64 };
    Ok((ratio(ns) + ratio(nc)) / 2.0)
}

/// Similarity of every `(S_i, C_i)` pair.
pub fn similarities(branch: &BranchOutput) -> Result<Vec<f64>> {
    if branch.seg.len() != branch.cls.len() {
        return Err(Error::dim("similarities", &[branch.seg.len()], &[branch.cls.len()]));
    }
    branch.seg.iter().zip(&branch.cls).map(|(s, c)| similarity(s, c)).collect()
}

/// Index of the largest similarity; ties go to the smallest index.
pub fn select(branch: &BranchOutput) -> Result<usize> {
    let sims = similarities(branch)?;
    if sims.is_empty() {
        return Err(Error::Config("cannot select from zero branch pairs".into()));
    }
    Ok(select_index(&sims))
}

pub(crate) fn select_index(sims: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in sims.iter().enumerate().skip(1) {
        if v > sims[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FusionResult {
    pub similarities: Vec<f64>,
    /// Selected class, or `None` when no pair overlaps at all.
    pub class: Option<usize>,
    /// Largest connected component of the selected segmentation map.
    #[serde(skip)]
    pub final_map: BinaryMap,
}

pub fn fuse(branch: &BranchOutput) -> Result<FusionResult> {
    let sims = similarities(branch)?;
    let (w, h) = branch.seg.first().map_or((0, 0), |s| (s.width(), s.height()));
    if sims.iter().all(|&s| s == 0.0) {
        return Ok(FusionResult {
            similarities: sims,
            class: None,
            final_map: BinaryMap::empty(w, h),
        });
    }
    let k = select_index(&sims);
    Ok(FusionResult {
        final_map: largest_connected_component(&branch.seg[k]),
        similarities: sims,
        class: Some(k),
    })
}
