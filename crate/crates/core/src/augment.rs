//! Ratio-based SpecAugment: time warping, then frequency and time masks
//! whose extents are proportions of the feature dimension and length.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("input of {frames}x{dim} is too small to augment")]
    TooSmall { frames: usize, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecAugPolicy {
    pub warp_ratio: f64,
    pub freq_ratio: f64,
    pub num_freq_masks: usize,
    pub time_mask_ratio: f64,
    pub num_time_masks: usize,
}

impl Default for SpecAugPolicy {
    fn default() -> Self {
        Self::NONE
    }
}

impl SpecAugPolicy {
    pub const NONE: Self = Self {
        warp_ratio: 0.0,
        freq_ratio: 0.0,
        num_freq_masks: 0,
        time_mask_ratio: 0.0,
        num_time_masks: 0,
    };

    /// W = 0.2, F = 0.15 with two masks, time ratio 0.05 with two masks.
    pub const STANDARD: Self = Self {
        warp_ratio: 0.2,
        freq_ratio: 0.15,
        num_freq_masks: 2,
        time_mask_ratio: 0.05,
        num_time_masks: 2,
    };

    pub fn validate(&self) -> Result<(), AugmentError> {
        for (name, r) in [
            ("warp_ratio", self.warp_ratio),
            ("freq_ratio", self.freq_ratio),
            ("time_mask_ratio", self.time_mask_ratio),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(AugmentError::Policy(format!("{name} = {r} outside [0, 1]")));
            }
        }
        if self.warp_ratio >= 0.5 {
            return Err(AugmentError::Policy(format!(
                "warp_ratio = {} leaves no room for the pivot",
                self.warp_ratio
            )));
        }
        if self.num_freq_masks as f64 * self.freq_ratio > 1.0 {
            return Err(AugmentError::Policy("num_freq_masks * freq_ratio exceeds 1".into()));
        }
        if self.num_time_masks as f64 * self.time_mask_ratio > 1.0 {
            return Err(AugmentError::Policy("num_time_masks * time_mask_ratio exceeds 1".into()));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.warp_ratio == 0.0
            && (self.num_freq_masks == 0 || self.freq_ratio == 0.0)
            && (self.num_time_masks == 0 || self.time_mask_ratio == 0.0)
    }
}

/// Pivot of a time warp: frame `from` of the input lands on frame `to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Warp {
    pub from: usize,
    pub to: usize,
}

impl Warp {
    /// Input position sampled by output frame `j` of a `frames`-long matrix.
    pub fn source_position(&self, j: usize, frames: usize) -> f64 {
        let last = (frames - 1) as f64;
        let (from, to, j) = (self.from as f64, self.to as f64, j as f64);
        if j <= to {
            j * from / to
        } else {
            from + (j - to) * (last - from) / (last - to)
        }
    }
}

/// What a single augmentation call did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AugmentTrace {
    pub warp: Option<Warp>,
    /// True when warping was requested but the input was too short.
    pub warp_skipped: bool,
    pub freq_masks: Vec<Range<usize>>,
    pub time_masks: Vec<Range<usize>>,
}

pub fn spec_augment(feat: &FeatureMatrix, policy: &SpecAugPolicy, seed: u64) -> Result<FeatureMatrix, AugmentError> {
    Ok(spec_augment_traced(feat, policy, seed)?.0)
}

pub fn spec_augment_traced(
    feat: &FeatureMatrix,
    policy: &SpecAugPolicy,
    seed: u64,
) -> Result<(FeatureMatrix, AugmentTrace), AugmentError> {
    policy.validate()?;
    let (frames, dim) = (feat.num_frames(), feat.dim());
    if frames < 2 || dim < 2 {
        return Err(AugmentError::TooSmall { frames, dim });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = AugmentTrace::default();
    let mut out = if policy.warp_ratio > 0.0 {
        let (warped, warp) = warp_with(feat, policy.warp_ratio, &mut rng);
        trace.warp = warp;
        trace.warp_skipped = warp.is_none();
        warped
    } else {
        feat.clone()
    };

    let data = out.data_mut();
    for _ in 0..policy.num_freq_masks {
        let m = draw_mask(&mut rng, dim, policy.freq_ratio);
        for row in data.chunks_mut(dim) {
            row[m.clone()].fill(0.0);
        }
        trace.freq_masks.push(m);
    }
    for _ in 0..policy.num_time_masks {
        let m = draw_mask(&mut rng, frames, policy.time_mask_ratio);
        data[m.start * dim..m.end * dim].fill(0.0);
        trace.time_masks.push(m);
    }
    Ok((out, trace))
}

/// Width uniform in `[0, ⌈ratio·len⌉]`, start uniform over valid positions.
fn draw_mask(rng: &mut ChaCha8Rng, len: usize, ratio: f64) -> Range<usize> {
    let max_width = ((ratio * len as f64).ceil() as usize).min(len);
    let width = rng.random_range(0..=max_width);
    let start = rng.random_range(0..=len - width);
    start..start + width
}

pub fn time_warp(feat: &FeatureMatrix, warp_ratio: f64, seed: u64) -> Result<(FeatureMatrix, Option<Warp>), AugmentError> {
    if !(0.0..0.5).contains(&warp_ratio) {
        return Err(AugmentError::Policy(format!("warp_ratio = {warp_ratio} outside [0, 0.5)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(warp_with(feat, warp_ratio, &mut rng))
}

/// Piecewise-linear resampling along time. The pivot is drawn from
/// `[⌈W·T⌉, T−1−⌈W·T⌉]` and shifted by up to `⌊W·T⌋` frames. Inputs with fewer
/// than 4 frames, or a ratio too small to move anything, are returned as is.
fn warp_with(feat: &FeatureMatrix, warp_ratio: f64, rng: &mut ChaCha8Rng) -> (FeatureMatrix, Option<Warp>) {
    let frames = feat.num_frames();
    let span = warp_ratio * frames as f64;
    let max_shift = span.floor() as usize;
    let lo = (span.ceil() as usize).max(1);
    if frames < 4 || max_shift == 0 || 2 * lo > frames - 1 {
        return (feat.clone(), None);
    }
    let from = rng.random_range(lo..=frames - 1 - lo);
    let shift = rng.random_range(-(max_shift as i64)..=max_shift as i64);
    let to = (from as i64 + shift).clamp(1, frames as i64 - 2) as usize;
    let warp = Warp { from, to };
    if to == from {
        return (feat.clone(), Some(warp));
    }
    let dim = feat.dim();
    let src = feat.data();
    let mut out = feat.clone();
    let data = out.data_mut();
    for j in 0..frames {
        let s = warp.source_position(j, frames);
        let i = (s.floor() as usize).min(frames - 1);
        let frac = s - i as f64;
        let next = (i + 1).min(frames - 1);
        for d in 0..dim {
            let a = src[i * dim + d];
            let b = src[next * dim + d];
            data[j * dim + d] = a + frac * (b - a);
        }
    }
    (out, Some(warp))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(frames: usize, dim: usize) -> FeatureMatrix {
        let data = (0..frames * dim).map(|i| (i / dim) as f64 + 0.01 * (i % dim) as f64).collect();
        FeatureMatrix::new(frames, dim, data).unwrap()
    }

    #[test]
    fn zero_policy_is_bitwise_identity() {
        let f = ramp(50, 8);
        let out = spec_augment(&f, &SpecAugPolicy::NONE, 3).unwrap();
        assert_eq!(out.data(), f.data());
    }

    #[test]
    fn ramp_warp_matches_closed_form() {
        let f = ramp(100, 3);
        let mut found = 0;
        for seed in 0..20 {
            let (out, warp) = time_warp(&f, 0.2, seed).unwrap();
            let w = warp.unwrap();
            assert!((20..=79).contains(&w.from));
            assert!(w.to.abs_diff(w.from) <= 20);
            for j in 0..100 {
                let want = if j <= w.to {
                    j as f64 * w.from as f64 / w.to as f64
                } else {
                    w.from as f64 + (j - w.to) as f64 * (99 - w.from) as f64 / (99 - w.to) as f64
                };
                assert!((out.get(j, 0) - want).abs() < 1e-9, "seed {seed} frame {j}");
                assert!((out.get(j, 2) - want - 0.02).abs() < 1e-9);
            }
            assert_eq!(out.get(0, 1), f.get(0, 1));
            assert_eq!(out.get(99, 1), f.get(99, 1));
            found += usize::from(w.from != w.to);
        }
        assert!(found > 0);
    }

    #[test]
    fn constant_input_survives_warp() {
        let f = FeatureMatrix::new(40, 4, vec![1.25; 160]).unwrap();
        for seed in 0..10 {
            let (out, _) = time_warp(&f, 0.2, seed).unwrap();
            assert_eq!(out.data(), f.data());
        }
    }

    #[test]
    fn short_input_skips_warp() {
        let f = ramp(3, 4);
        let (out, trace) = spec_augment_traced(
            &f,
            &SpecAugPolicy {
                warp_ratio: 0.4,
                ..SpecAugPolicy::NONE
            },
            1,
        )
        .unwrap();
        assert!(trace.warp_skipped);
        assert_eq!(out.data(), f.data());
    }

    #[test]
    fn policy_validation() {
        assert!(SpecAugPolicy::STANDARD.validate().is_ok());
        let bad = SpecAugPolicy {
            freq_ratio: 0.6,
            num_freq_masks: 2,
            ..SpecAugPolicy::NONE
        };
        assert!(matches!(bad.validate(), Err(AugmentError::Policy(_))));
        let bad = SpecAugPolicy {
            warp_ratio: -0.1,
            ..SpecAugPolicy::NONE
        };
        assert!(bad.validate().is_err());
        let tiny = FeatureMatrix::new(1, 4, vec![0.0; 4]).unwrap();
        assert_eq!(
            spec_augment(&tiny, &SpecAugPolicy::STANDARD, 0).unwrap_err(),
            AugmentError::TooSmall { frames: 1, dim: 4 }
        );
    }
}
