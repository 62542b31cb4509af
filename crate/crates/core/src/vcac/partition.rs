use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equal-length segments of the camera-ordered frame sequence. Frame
/// indices are zero-based; each context's keyframe is its first frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPartition {
    pub frames: usize,
    pub ctx_len: usize,
    pub contexts: Vec<Range<usize>>,
}

impl ContextPartition {
    pub fn keyframes(&self) -> Vec<usize> {
        self.contexts.iter().map(|r| r.start).collect()
    }

    pub fn context_of(&self, frame: usize) -> usize {
        frame / self.ctx_len
    }

    pub fn keyframe_of(&self, frame: usize) -> usize {
        self.context_of(frame) * self.ctx_len
    }
}

/// How keyframes of different contexts share keys and values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeyframeSharing {
    /// Each keyframe attends over all keyframes' concatenated K/V.
    Reference,
    /// Later keyframes attend to the first keyframe's K/V.
    Propagate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingPlan {
    /// Keyframe pairs whose viewing directions differ by more than the threshold.
    pub reference_pairs: Vec<(usize, usize)>,
    pub sharing: KeyframeSharing,
}

fn angle_deg(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    let d = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb);
    d.clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn partition_contexts(
    n: usize,
    ctx_len: usize,
    view_dirs: &[[f64; 3]],
    angle_threshold_deg: f64,
) -> Result<(ContextPartition, PairingPlan)> {
    if n == 0 || ctx_len == 0 || n % ctx_len != 0 {
        return Err(Error::InvalidArgument(format!(
            "context length {ctx_len} must divide the frame count {n}"
        )));
    }
    if view_dirs.len() != n {
        return Err(Error::shape(&[n], &[view_dirs.len()]));
    }
    let contexts: Vec<Range<usize>> = (0..n / ctx_len)
        .map(|i| i * ctx_len..(i + 1) * ctx_len)
        .collect();
    let part = ContextPartition {
        frames: n,
        ctx_len,
        contexts,
    };
    let keys = part.keyframes();
    let mut reference_pairs = Vec::new();
    for (i, &a) in keys.iter().enumerate() {
        for &b in &keys[i + 1..] {
            if angle_deg(&view_dirs[a], &view_dirs[b]) > angle_threshold_deg {
                reference_pairs.push((a, b));
            }
        }
    }
    let sharing = if reference_pairs.is_empty() {
        KeyframeSharing::Propagate
    } else {
        KeyframeSharing::Reference
    };
    Ok((
        part,
        PairingPlan {
            reference_pairs,
            sharing,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir(deg: f64) -> [f64; 3] {
        let r = deg.to_radians();
        [r.sin(), 0.0, r.cos()]
    }

    #[test]
    fn eight_frames_two_contexts() {
        let dirs = vec![dir(0.0); 8];
        let (p, plan) = partition_contexts(8, 4, &dirs, 25.0).unwrap();
        assert_eq!(p.contexts, vec![0..4, 4..8]);
        assert_eq!(p.keyframes(), vec![0, 4]);
        assert_eq!(p.keyframe_of(6), 4);
        assert!(plan.reference_pairs.is_empty());
        assert_eq!(plan.sharing, KeyframeSharing::Propagate);
    }

    #[test]
    fn wide_baseline_marked_reference() {
        let mut dirs = vec![dir(0.0); 8];
        for d in dirs.iter_mut().skip(4) {
            *d = dir(30.0);
        }
        let (_, plan) = partition_contexts(8, 4, &dirs, 25.0).unwrap();
        assert_eq!(plan.reference_pairs, vec![(0, 4)]);
        assert_eq!(plan.sharing, KeyframeSharing::Reference);
        let (_, plan) = partition_contexts(8, 4, &dirs, 35.0).unwrap();
        assert!(plan.reference_pairs.is_empty());
    }

    #[test]
    fn non_dividing_length_rejected() {
        assert!(partition_contexts(6, 4, &vec![dir(0.0); 6], 25.0).is_err());
        assert!(partition_contexts(4, 0, &vec![dir(0.0); 4], 25.0).is_err());
        assert!(partition_contexts(4, 2, &vec![dir(0.0); 3], 25.0).is_err());
    }
}
