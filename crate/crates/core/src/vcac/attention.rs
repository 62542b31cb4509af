use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `(frames, tokens, dim)` tensor, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTensor {
    pub frames: usize,
    pub tokens: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl TokenTensor {
    pub fn zeros(frames: usize, tokens: usize, dim: usize) -> Self {
        TokenTensor {
            frames,
            tokens,
            dim,
            data: vec![0.0; frames * tokens * dim],
        }
    }

    pub fn from_vec(frames: usize, tokens: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("token dim must be at least 1".into()));
        }
        if data.len() != frames * tokens * dim {
            return Err(Error::shape(&[frames, tokens, dim], &[data.len()]));
        }
        Ok(TokenTensor {
            frames,
            tokens,
            dim,
            data,
        })
    }

    pub fn random<R: rand::Rng + ?Sized>(frames: usize, tokens: usize, dim: usize, rng: &mut R) -> Self {
        let data = (0..frames * tokens * dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        TokenTensor {
            frames,
            tokens,
            dim,
            data,
        }
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let n = self.tokens * self.dim;
        &self.data[f * n..(f + 1) * n]
    }

    pub fn frame_mut(&mut self, f: usize) -> &mut [f64] {
        let n = self.tokens * self.dim;
        &mut self.data[f * n..(f + 1) * n]
    }

    pub fn get(&self, f: usize, l: usize, d: usize) -> f64 {
        self.data[(f * self.tokens + l) * self.dim + d]
    }

    /// Single-frame tensor holding frame `f`.
    pub fn select(&self, f: usize) -> TokenTensor {
        TokenTensor {
            frames: 1,
            tokens: self.tokens,
            dim: self.dim,
            data: self.frame(f).to_vec(),
        }
    }

    /// Stack single- or multi-frame tensors along the frame axis.
    pub fn stack(parts: &[TokenTensor]) -> Result<TokenTensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to stack".into()))?;
        let mut out = TokenTensor::zeros(0, first.tokens, first.dim);
        for p in parts {
            if p.tokens != first.tokens || p.dim != first.dim {
                return Err(Error::shape(&[first.tokens, first.dim], &[p.tokens, p.dim]));
            }
            out.frames += p.frames;
            out.data.extend_from_slice(&p.data);
        }
        Ok(out)
    }

    /// Concatenate every frame along the token axis into one frame.
    pub fn concat_tokens(&self) -> TokenTensor {
        TokenTensor {
            frames: 1,
            tokens: self.frames * self.tokens,
            dim: self.dim,
            data: self.data.clone(),
        }
    }

    pub fn max_abs_diff(&self, other: &TokenTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Row-max–stabilized softmax in place.
pub fn softmax_row(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Attention probabilities `softmax(q kᵀ / √d)` for one frame, `(lq, lk)`.
pub fn attention_probs(q: &[f64], k: &[f64], dim: usize) -> Vec<f64> {
    let lq = q.len() / dim;
    let lk = k.len() / dim;
    let inv = 1.0 / (dim as f64).sqrt();
    let mut p = vec![0.0; lq * lk];
    for i in 0..lq {
        let qi = &q[i * dim..(i + 1) * dim];
        let row = &mut p[i * lk..(i + 1) * lk];
        for (j, r) in row.iter_mut().enumerate() {
            let kj = &k[j * dim..(j + 1) * dim];
            *r = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * inv;
        }
        softmax_row(row);
    }
    p
}

/// `probs (lq, lk) · v (lk, dv)`
pub fn apply_probs(p: &[f64], v: &[f64], lq: usize, lk: usize, dv: usize) -> Vec<f64> {
    let mut out = vec![0.0; lq * dv];
    for i in 0..lq {
        let o = &mut out[i * dv..(i + 1) * dv];
        for j in 0..lk {
            let w = p[i * lk + j];
            let vj = &v[j * dv..(j + 1) * dv];
            for (a, b) in o.iter_mut().zip(vj) {
                *a += w * b;
            }
        }
    }
    out
}

pub(crate) fn attend(q: &[f64], k: &[f64], v: &[f64], dim: usize, dv: usize) -> Vec<f64> {
    let p = attention_probs(q, k, dim);
    apply_probs(&p, v, q.len() / dim, k.len() / dim, dv)
}

fn check_kv(q: &TokenTensor, k: &TokenTensor, v: &TokenTensor) -> Result<()> {
    if q.dim != k.dim {
        return Err(Error::shape(&[q.dim], &[k.dim]));
    }
    if k.tokens != v.tokens || k.frames != v.frames {
        return Err(Error::shape(&[k.frames, k.tokens], &[v.frames, v.tokens]));
    }
    Ok(())
}

/// Per-frame `softmax(Q Kᵀ/√d) V`.
pub fn attention(q: &TokenTensor, k: &TokenTensor, v: &TokenTensor) -> Result<TokenTensor> {
    check_kv(q, k, v)?;
    if q.frames != k.frames {
        return Err(Error::shape(&[q.frames], &[k.frames]));
    }
    let mut out = TokenTensor::zeros(q.frames, q.tokens, v.dim);
    for f in 0..q.frames {
        let o = attend(q.frame(f), k.frame(f), v.frame(f), q.dim, v.dim);
        out.frame_mut(f).copy_from_slice(&o);
    }
    Ok(out)
}

/// Source queries are used while `t ≤ t_q`, target queries afterwards.
pub fn query_inject(
    q_src: &TokenTensor,
    q_tgt: &TokenTensor,
    k_tgt: &TokenTensor,
    v_tgt: &TokenTensor,
    t: usize,
    t_q: usize,
) -> Result<TokenTensor> {
    if q_src.frames != q_tgt.frames || q_src.tokens != q_tgt.tokens || q_src.dim != q_tgt.dim {
        return Err(Error::shape(
            &[q_tgt.frames, q_tgt.tokens, q_tgt.dim],
            &[q_src.frames, q_src.tokens, q_src.dim],
        ));
    }
    if injection_active(t, t_q) {
        attention(q_src, k_tgt, v_tgt)
    } else {
        attention(q_tgt, k_tgt, v_tgt)
    }
}

pub fn injection_active(t: usize, t_q: usize) -> bool {
    t <= t_q
}

/// Every frame attends to the single keyframe's keys and values.
pub fn kv_propagate(q: &TokenTensor, k_key: &TokenTensor, v_key: &TokenTensor) -> Result<TokenTensor> {
    check_kv(q, k_key, v_key)?;
    if k_key.frames != 1 {
        return Err(Error::shape(&[1], &[k_key.frames]));
    }
    let mut out = TokenTensor::zeros(q.frames, q.tokens, v_key.dim);
    for f in 0..q.frames {
        let o = attend(q.frame(f), &k_key.data, &v_key.data, q.dim, v_key.dim);
        out.frame_mut(f).copy_from_slice(&o);
    }
    Ok(out)
}

/// Each keyframe attends over the keys and values of all keyframes.
pub fn kv_reference(q: &TokenTensor, k: &TokenTensor, v: &TokenTensor) -> Result<TokenTensor> {
    check_kv(q, k, v)?;
    if k.frames == 0 {
        return Err(Error::InvalidArgument("kv_reference needs at least one keyframe".into()));
    }
    kv_propagate(q, &k.concat_tokens(), &v.concat_tokens())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn single_key_returns_value() {
        let mut r = rng();
        let q = TokenTensor::random(1, 3, 4, &mut r);
        let k = TokenTensor::random(1, 1, 4, &mut r);
        let v = TokenTensor::random(1, 1, 2, &mut r);
        let o = attention(&q, &k, &v).unwrap();
        for l in 0..3 {
            for d in 0..2 {
                assert!((o.get(0, l, d) - v.get(0, 0, d)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn equal_logits_average() {
        let q = TokenTensor::from_vec(1, 1, 2, vec![0.3, -0.1]).unwrap();
        let k = TokenTensor::from_vec(1, 2, 2, vec![1.0, 2.0, 1.0, 2.0]).unwrap();
        let v = TokenTensor::from_vec(1, 2, 1, vec![1.0, 3.0]).unwrap();
        let o = attention(&q, &k, &v).unwrap();
        assert!((o.data[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn matches_double_loop() {
        let mut r = rng();
        let q = TokenTensor::random(1, 3, 4, &mut r);
        let k = TokenTensor::random(1, 3, 4, &mut r);
        let v = TokenTensor::random(1, 3, 4, &mut r);
        let o = attention(&q, &k, &v).unwrap();
        for i in 0..3 {
            let logits: Vec<f64> = (0..3)
                .map(|j| (0..4).map(|d| q.get(0, i, d) * k.get(0, j, d)).sum::<f64>() / 2.0)
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for d in 0..4 {
                let want: f64 = (0..3).map(|j| logits[j].exp() / z * v.get(0, j, d)).sum();
                assert!((o.get(0, i, d) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dim_mismatch() {
        let q = TokenTensor::zeros(1, 2, 3);
        let k = TokenTensor::zeros(1, 2, 4);
        assert!(attention(&q, &k, &k).is_err());
        assert!(kv_propagate(&q, &k, &k).is_err());
        assert!(kv_reference(&q, &k, &k).is_err());
    }

    #[test]
    fn injection_boundary() {
        let mut r = rng();
        let qs = TokenTensor::random(1, 2, 3, &mut r);
        let qt = TokenTensor::random(1, 2, 3, &mut r);
        let k = TokenTensor::random(1, 2, 3, &mut r);
        let v = TokenTensor::random(1, 2, 3, &mut r);
        let src = attention(&qs, &k, &v).unwrap();
        let tgt = attention(&qt, &k, &v).unwrap();
        assert_eq!(query_inject(&qs, &qt, &k, &v, 5, 5).unwrap(), src);
        assert_eq!(query_inject(&qs, &qt, &k, &v, 6, 5).unwrap(), tgt);
        assert_eq!(query_inject(&qt, &qt, &k, &v, 0, 5).unwrap(), tgt);
    }

    #[test]
    fn propagation_per_frame() {
        let mut r = rng();
        let q = TokenTensor::random(3, 2, 4, &mut r);
        let k = TokenTensor::random(1, 5, 4, &mut r);
        let v = TokenTensor::random(1, 5, 3, &mut r);
        let o = kv_propagate(&q, &k, &v).unwrap();
        for f in 0..3 {
            let want = attention(&q.select(f), &k, &v).unwrap();
            assert_eq!(o.select(f).data, want.data);
        }
        // keyframe attending to itself
        let key_q = q.select(0);
        let own_k = TokenTensor::random(1, 2, 4, &mut r);
        let own_v = TokenTensor::random(1, 2, 3, &mut r);
        assert_eq!(
            kv_propagate(&key_q, &own_k, &own_v).unwrap(),
            attention(&key_q, &own_k, &own_v).unwrap()
        );
    }

    #[test]
    fn reference_concatenates() {
        let mut r = rng();
        let q = TokenTensor::random(2, 3, 4, &mut r);
        let k = TokenTensor::random(2, 3, 4, &mut r);
        let v = TokenTensor::random(2, 3, 4, &mut r);
        let o = kv_reference(&q, &k, &v).unwrap();
        let kc = TokenTensor::from_vec(1, 6, 4, k.data.clone()).unwrap();
        let vc = TokenTensor::from_vec(1, 6, 4, v.data.clone()).unwrap();
        for f in 0..2 {
            let want = attention(&q.select(f), &kc, &vc).unwrap();
            assert!(o.select(f).max_abs_diff(&want) < 1e-15);
        }
        let single = kv_reference(&q.select(0), &k.select(0), &v.select(0)).unwrap();
        assert_eq!(single, attention(&q.select(0), &k.select(0), &v.select(0)).unwrap());
    }
}
