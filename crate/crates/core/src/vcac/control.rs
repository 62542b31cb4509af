use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::Latent;

/// Target-prompt token position → source-prompt token position. Target
/// positions absent from the map are edited tokens.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossAttnAlignment {
    pub map: BTreeMap<usize, usize>,
}

impl CrossAttnAlignment {
    pub fn identity(n: usize) -> Self {
        CrossAttnAlignment {
            map: (0..n).map(|i| (i, i)).collect(),
        }
    }

    /// Align equal tokens position by position; differing tokens are edited.
    pub fn from_tokens(src: &[u32], tgt: &[u32]) -> Self {
        CrossAttnAlignment {
            map: tgt
                .iter()
                .enumerate()
                .filter(|(i, t)| src.get(*i) == Some(t))
                .map(|(i, _)| (i, i))
                .collect(),
        }
    }

    pub fn validate(&self, tgt_tokens: usize, src_tokens: usize) -> Result<()> {
        for (&t, &s) in &self.map {
            if t >= tgt_tokens || s >= src_tokens {
                return Err(Error::InvalidArgument(format!(
                    "alignment {t}->{s} out of range ({tgt_tokens} target, {src_tokens} source tokens)"
                )));
            }
        }
        Ok(())
    }
}

/// Cross-attention probabilities, `(spatial, prompt)` row-major: column `j`
/// is the spatial attention map of prompt token `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnMaps {
    pub spatial: usize,
    pub prompt: usize,
    pub data: Vec<f64>,
}

impl AttnMaps {
    pub fn new(spatial: usize, prompt: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != spatial * prompt {
            return Err(Error::shape(&[spatial, prompt], &[data.len()]));
        }
        Ok(AttnMaps {
            spatial,
            prompt,
            data,
        })
    }

    pub fn get(&self, s: usize, p: usize) -> f64 {
        self.data[s * self.prompt + p]
    }
}

pub fn cross_attn_control(
    maps_src: &AttnMaps,
    maps_tgt: &AttnMaps,
    align: &CrossAttnAlignment,
) -> Result<AttnMaps> {
    if maps_src.spatial != maps_tgt.spatial {
        return Err(Error::shape(&[maps_tgt.spatial], &[maps_src.spatial]));
    }
    align.validate(maps_tgt.prompt, maps_src.prompt)?;
    let mut out = maps_tgt.clone();
    for (&t, &s) in &align.map {
        for row in 0..out.spatial {
            out.data[row * out.prompt + t] = maps_src.get(row, s);
        }
    }
    Ok(out)
}

/// `M ⊙ z_tgt + (1 − M) ⊙ z_src`; a single-channel mask broadcasts over channels.
pub fn local_blend(z_tgt: &Latent, z_src: &Latent, mask: &Latent) -> Result<Latent> {
    z_tgt.ensure_same_shape(z_src)?;
    let [c, h, w] = z_tgt.shape();
    let [mc, mh, mw] = mask.shape();
    if mh != h || mw != w || (mc != 1 && mc != c) {
        return Err(Error::shape(&[1, h, w], &mask.shape()));
    }
    if mask.as_slice().iter().any(|m| !(0.0..=1.0).contains(m)) {
        return Err(Error::Domain("blend mask entries must lie in [0, 1]".into()));
    }
    let mut out = z_src.clone();
    for ch in 0..c {
        let mch = if mc == 1 { 0 } else { ch };
        for y in 0..h {
            for x in 0..w {
                let m = mask.get(mch, y, x);
                let v = if m == 1.0 {
                    z_tgt.get(ch, y, x)
                } else if m == 0.0 {
                    z_src.get(ch, y, x)
                } else {
                    m * z_tgt.get(ch, y, x) + (1.0 - m) * z_src.get(ch, y, x)
                };
                out.set(ch, y, x, v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn maps(prompt: usize, offset: f64) -> AttnMaps {
        let data = (0..4 * prompt).map(|i| i as f64 + offset).collect();
        AttnMaps::new(4, prompt, data).unwrap()
    }

    #[test]
    fn empty_alignment_keeps_target() {
        let (s, t) = (maps(3, 0.0), maps(3, 100.0));
        assert_eq!(cross_attn_control(&s, &t, &CrossAttnAlignment::default()).unwrap(), t);
    }

    #[test]
    fn identity_alignment_gives_source() {
        let (s, t) = (maps(3, 0.0), maps(3, 100.0));
        assert_eq!(cross_attn_control(&s, &t, &CrossAttnAlignment::identity(3)).unwrap(), s);
    }

    #[test]
    fn single_column_replacement() {
        let (s, t) = (maps(3, 0.0), maps(3, 100.0));
        let mut a = CrossAttnAlignment::default();
        a.map.insert(2, 0);
        let out = cross_attn_control(&s, &t, &a).unwrap();
        for row in 0..4 {
            assert_eq!(out.get(row, 0), t.get(row, 0));
            assert_eq!(out.get(row, 1), t.get(row, 1));
            assert_eq!(out.get(row, 2), s.get(row, 0));
        }
        a.map.insert(3, 0);
        assert!(cross_attn_control(&s, &t, &a).is_err());
    }

    #[test]
    fn token_alignment() {
        let a = CrossAttnAlignment::from_tokens(&[1, 2, 3], &[1, 9, 3, 4]);
        assert_eq!(a.map.into_iter().collect::<Vec<_>>(), vec![(0, 0), (2, 2)]);
    }

    #[test]
    fn blend_extremes_and_midpoint() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let t = Latent::randn([3, 2, 2], &mut rng);
        let s = Latent::randn([3, 2, 2], &mut rng);
        assert_eq!(local_blend(&t, &s, &Latent::filled(1, 2, 2, 1.0)).unwrap(), t);
        assert_eq!(local_blend(&t, &s, &Latent::filled(1, 2, 2, 0.0)).unwrap(), s);
        let mid = local_blend(&t, &s, &Latent::filled(1, 2, 2, 0.5)).unwrap();
        let want = t.lincomb(0.5, &s, 0.5).unwrap();
        assert!(mid.max_abs_diff(&want).unwrap() < 1e-15);
        assert!(local_blend(&t, &s, &Latent::filled(1, 2, 2, 1.5)).is_err());
        assert!(local_blend(&t, &s, &Latent::filled(1, 2, 3, 0.5)).is_err());
    }
}
