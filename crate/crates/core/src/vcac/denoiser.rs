//! A fixed, seeded transformer-style ε-predictor: patch embedding, two
//! self-attention blocks, one cross-attention block over prompt tokens and
//! an output projection. Every attention-control mechanism hooks into it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{apply_probs, attend, attention_probs, injection_active, TokenTensor};
use super::control::{AttnMaps, CrossAttnAlignment};
use super::partition::{ContextPartition, KeyframeSharing, PairingPlan};
use crate::diffusion::{Condition, ScoreModel};
use crate::error::{Error, Result};
use crate::latent::Latent;

pub const SELF_BLOCKS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TinyDenoiserConfig {
    pub channels: usize,
    pub patch: usize,
    pub dim: usize,
    pub max_t: usize,
    pub seed: u64,
}

impl Default for TinyDenoiserConfig {
    fn default() -> Self {
        TinyDenoiserConfig {
            channels: 3,
            patch: 4,
            dim: 16,
            max_t: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Proj {
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    wo: Vec<f64>,
}

fn weights(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let s = 1.0 / (fan_in as f64).sqrt();
    (0..fan_in * fan_out).map(|_| rng.random_range(-s..s)).collect()
}

impl Proj {
    fn new(rng: &mut ChaCha8Rng, d: usize) -> Self {
        Proj {
            wq: weights(rng, d, d),
            wk: weights(rng, d, d),
            wv: weights(rng, d, d),
            wo: weights(rng, d, d),
        }
    }
}

/// `x (rows, inner) · w (inner, cols)`
fn matmul(x: &[f64], inner: usize, w: &[f64], cols: usize) -> Vec<f64> {
    let rows = x.len() / inner;
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let xr = &x[r * inner..(r + 1) * inner];
        let o = &mut out[r * cols..(r + 1) * cols];
        for (k, &xv) in xr.iter().enumerate() {
            let wr = &w[k * cols..(k + 1) * cols];
            for (a, b) in o.iter_mut().zip(wr) {
                *a += xv * b;
            }
        }
    }
    out
}

/// Context partition and keyframe pairing applied at every self-attention site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvPlan {
    pub partition: ContextPartition,
    pub pairing: PairingPlan,
}

/// Attention-control configuration for one denoiser call.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VcacHooks {
    pub query_injection: bool,
    /// Injection is active while `step ≤ t_q`.
    pub t_q: usize,
    /// Editing step index the call belongs to.
    pub step: usize,
    pub kv: Option<KvPlan>,
    pub cross_attn: Option<CrossAttnAlignment>,
}

impl VcacHooks {
    pub fn disabled() -> Self {
        VcacHooks::default()
    }

    /// Hooks the source branch runs with: only the shared K/V plan.
    pub fn source_branch(&self) -> Self {
        VcacHooks {
            kv: self.kv.clone(),
            ..VcacHooks::default()
        }
    }

    pub fn needs_source(&self) -> bool {
        self.query_injection || self.cross_attn.is_some()
    }
}

/// Activations recorded on the source branch.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceCache {
    pub frames: usize,
    pub tokens: usize,
    /// Self-attention queries per block.
    pub queries: Vec<TokenTensor>,
    /// Cross-attention maps per frame.
    pub cross_maps: Vec<AttnMaps>,
}

#[derive(Debug, Clone)]
pub struct DenoiserOutput {
    pub eps: Vec<Latent>,
    pub cache: SourceCache,
}

#[derive(Debug, Clone)]
pub struct TinyDenoiser {
    cfg: TinyDenoiserConfig,
    embed: Vec<f64>,
    blocks: Vec<Proj>,
    cross: Proj,
    out: Vec<f64>,
}

impl TinyDenoiser {
    pub fn new(cfg: TinyDenoiserConfig) -> Result<Self> {
        if cfg.channels == 0 || cfg.patch == 0 || cfg.dim == 0 {
            return Err(Error::InvalidArgument("denoiser sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let pd = cfg.channels * cfg.patch * cfg.patch;
        let embed = weights(&mut rng, pd, cfg.dim);
        let blocks = (0..SELF_BLOCKS).map(|_| Proj::new(&mut rng, cfg.dim)).collect();
        let cross = Proj::new(&mut rng, cfg.dim);
        let out = weights(&mut rng, cfg.dim, pd);
        Ok(TinyDenoiser {
            cfg,
            embed,
            blocks,
            cross,
            out,
        })
    }

    pub fn config(&self) -> &TinyDenoiserConfig {
        &self.cfg
    }

    fn token_embedding(&self, token: u32) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (u64::from(token) + 1),
        );
        (0..self.cfg.dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn prompt_embeddings(&self, y: &Condition) -> Vec<f64> {
        let tokens: &[u32] = if y.tokens.is_empty() { &[0] } else { &y.tokens };
        tokens.iter().flat_map(|&t| self.token_embedding(t)).collect()
    }

    fn patchify(&self, z: &Latent) -> Result<Vec<f64>> {
        let p = self.cfg.patch;
        let [c, h, w] = z.shape();
        if c != self.cfg.channels || h % p != 0 || w % p != 0 {
            return Err(Error::InvalidArgument(format!(
                "latent {:?} incompatible with {}-channel, {p}-pixel patches",
                z.shape(),
                self.cfg.channels
            )));
        }
        let (gh, gw) = (h / p, w / p);
        let mut out = Vec::with_capacity(c * h * w);
        for ty in 0..gh {
            for tx in 0..gw {
                for ch in 0..c {
                    for dy in 0..p {
                        for dx in 0..p {
                            out.push(z.get(ch, ty * p + dy, tx * p + dx));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn unpatchify(&self, v: &[f64], shape: [usize; 3]) -> Latent {
        let p = self.cfg.patch;
        let [c, h, w] = shape;
        let gw = w / p;
        let mut z = Latent::zeros(c, h, w);
        let mut i = 0;
        for ty in 0..h / p {
            for tx in 0..gw {
                for ch in 0..c {
                    for dy in 0..p {
                        for dx in 0..p {
                            z.set(ch, ty * p + dy, tx * p + dx, v[i]);
                            i += 1;
                        }
                    }
                }
            }
        }
        z
    }

    fn positional(&self, l: usize, t: usize) -> Vec<f64> {
        let d = self.cfg.dim;
        let tt = t as f64 / self.cfg.max_t.max(1) as f64;
        (0..d)
            .map(|k| {
                let f = 1.0 / (1.0 + k as f64);
                let pos = if k % 2 == 0 {
                    (l as f64 * f).sin()
                } else {
                    (l as f64 * f).cos()
                };
                0.5 * pos + 0.5 * (3.0 * tt * (k + 1) as f64).sin()
            })
            .collect()
    }

    /// Plain single-frame forward pass.
    pub fn forward_plain(&self, z: &Latent, t: usize, y: &Condition) -> Result<Latent> {
        let out = self.forward(std::slice::from_ref(z), t, y, &VcacHooks::disabled(), None)?;
        Ok(out.eps.into_iter().next().expect("one frame"))
    }

    /// Multi-frame forward pass with attention-control hooks. `source` must
    /// hold the source branch's activations when injection or cross-attention
    /// control is enabled.
    pub fn forward(
        &self,
        frames: &[Latent],
        t: usize,
        y: &Condition,
        hooks: &VcacHooks,
        source: Option<&SourceCache>,
    ) -> Result<DenoiserOutput> {
        let d = self.cfg.dim;
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("denoiser needs at least one frame".into()))?;
        let shape = first.shape();
        for f in frames {
            first.ensure_same_shape(f)?;
        }
        let nf = frames.len();
        let pd = self.cfg.channels * self.cfg.patch * self.cfg.patch;
        let patches: Vec<Vec<f64>> = frames.iter().map(|z| self.patchify(z)).collect::<Result<_>>()?;
        let ntok = patches[0].len() / pd;

        if let Some(plan) = &hooks.kv {
            if plan.partition.frames != nf {
                return Err(Error::shape(&[plan.partition.frames], &[nf]));
            }
        }
        let src = if hooks.needs_source() {
            let cache = source.ok_or_else(|| {
                Error::MissingSourceCache(
                    "query injection or cross-attention control enabled without source activations"
                        .into(),
                )
            })?;
            if cache.frames != nf || cache.tokens != ntok {
                return Err(Error::MissingSourceCache(format!(
                    "cached {} frames x {} tokens, need {nf} x {ntok}",
                    cache.frames, cache.tokens
                )));
            }
            Some(cache)
        } else {
            None
        };
        let inject = hooks.query_injection && injection_active(hooks.step, hooks.t_q);

        let pos: Vec<f64> = (0..ntok).flat_map(|l| self.positional(l, t)).collect();
        let mut h = TokenTensor::zeros(nf, ntok, d);
        for (f, p) in patches.iter().enumerate() {
            let e = matmul(p, pd, &self.embed, d);
            for (a, (b, c)) in h.frame_mut(f).iter_mut().zip(e.iter().zip(&pos)) {
                *a = b + c;
            }
        }

        let mut queries = Vec::with_capacity(SELF_BLOCKS);
        for (b, blk) in self.blocks.iter().enumerate() {
            let q = TokenTensor::from_vec(nf, ntok, d, matmul(&h.data, d, &blk.wq, d))?;
            let k = TokenTensor::from_vec(nf, ntok, d, matmul(&h.data, d, &blk.wk, d))?;
            let v = TokenTensor::from_vec(nf, ntok, d, matmul(&h.data, d, &blk.wv, d))?;
            let q_used = match src {
                Some(c) if inject => &c.queries[b],
                _ => &q,
            };
            let o = self_attention(q_used, &k, &v, hooks.kv.as_ref())?;
            let proj = matmul(&o.data, d, &blk.wo, d);
            for (a, p) in h.data.iter_mut().zip(&proj) {
                *a += p.tanh();
            }
            queries.push(q);
        }

        let emb = self.prompt_embeddings(y);
        let kc = matmul(&emb, d, &self.cross.wk, d);
        let vc = matmul(&emb, d, &self.cross.wv, d);
        let lp = emb.len() / d;
        let mut cross_maps = Vec::with_capacity(nf);
        for f in 0..nf {
            let qc = matmul(h.frame(f), d, &self.cross.wq, d);
            let own = AttnMaps::new(ntok, lp, attention_probs(&qc, &kc, d))?;
            let maps = match (src, &hooks.cross_attn) {
                (Some(c), Some(align)) => super::control::cross_attn_control(&c.cross_maps[f], &own, align)?,
                _ => own.clone(),
            };
            let o = apply_probs(&maps.data, &vc, ntok, lp, d);
            let proj = matmul(&o, d, &self.cross.wo, d);
            for (a, p) in h.frame_mut(f).iter_mut().zip(&proj) {
                *a += p.tanh();
            }
            cross_maps.push(own);
        }

        let eps = (0..nf)
            .map(|f| {
                let act: Vec<f64> = h.frame(f).iter().map(|v| v.tanh()).collect();
                self.unpatchify(&matmul(&act, d, &self.out, pd), shape)
            })
            .collect();
        Ok(DenoiserOutput {
            eps,
            cache: SourceCache {
                frames: nf,
                tokens: ntok,
                queries,
                cross_maps,
            },
        })
    }

    /// Source branch then target branch; the target consumes the source
    /// branch's activations. Returns `(ε_src, ε_tgt)` per frame.
    pub fn edit_pair(
        &self,
        src_frames: &[Latent],
        tgt_frames: &[Latent],
        t: usize,
        y_src: &Condition,
        y_tgt: &Condition,
        hooks: &VcacHooks,
    ) -> Result<(Vec<Latent>, Vec<Latent>)> {
        let src = self.forward(src_frames, t, y_src, &hooks.source_branch(), None)?;
        let tgt = self.forward(tgt_frames, t, y_tgt, hooks, Some(&src.cache))?;
        Ok((src.eps, tgt.eps))
    }
}

fn self_attention(
    q: &TokenTensor,
    k: &TokenTensor,
    v: &TokenTensor,
    plan: Option<&KvPlan>,
) -> Result<TokenTensor> {
    let Some(plan) = plan else {
        return super::attention::attention(q, k, v);
    };
    let d = q.dim;
    let keys = plan.partition.keyframes();
    let concat_k: Vec<f64> = keys.iter().flat_map(|&f| k.frame(f).to_vec()).collect();
    let concat_v: Vec<f64> = keys.iter().flat_map(|&f| v.frame(f).to_vec()).collect();
    let mut out = TokenTensor::zeros(q.frames, q.tokens, v.dim);
    for f in 0..q.frames {
        let key = plan.partition.keyframe_of(f);
        let o = if f != key {
            attend(q.frame(f), k.frame(key), v.frame(key), d, v.dim)
        } else {
            match plan.pairing.sharing {
                KeyframeSharing::Reference => attend(q.frame(f), &concat_k, &concat_v, d, v.dim),
                KeyframeSharing::Propagate => {
                    attend(q.frame(f), k.frame(keys[0]), v.frame(keys[0]), d, v.dim)
                }
            }
        };
        out.frame_mut(f).copy_from_slice(&o);
    }
    Ok(out)
}

impl ScoreModel for TinyDenoiser {
    fn eps(&self, z: &Latent, t: usize, y: &Condition) -> Result<Latent> {
        self.forward_plain(z, t, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vcac::partition_contexts;

    fn model() -> TinyDenoiser {
        TinyDenoiser::new(TinyDenoiserConfig {
            seed: 5,
            ..Default::default()
        })
        .unwrap()
    }

    fn frames(n: usize, seed: u64) -> Vec<Latent> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Latent::randn([3, 8, 8], &mut rng)).collect()
    }

    fn plan(n: usize, ctx: usize, spread: f64) -> KvPlan {
        let dirs: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                let a = (i as f64 * spread).to_radians();
                [a.sin(), 0.0, a.cos()]
            })
            .collect();
        let (partition, pairing) = partition_contexts(n, ctx, &dirs, 25.0).unwrap();
        KvPlan { partition, pairing }
    }

    fn all_hooks(n: usize) -> VcacHooks {
        VcacHooks {
            query_injection: true,
            t_q: 10,
            step: 3,
            kv: Some(plan(n, 2, 20.0)),
            cross_attn: Some(CrossAttnAlignment::identity(3)),
        }
    }

    #[test]
    fn deterministic_and_shape_preserving() {
        let m = model();
        let z = &frames(1, 1)[0];
        let y = Condition::with_tokens("p", vec![1, 2, 3]);
        let a = m.eps(z, 20, &y).unwrap();
        let b = model().eps(z, 20, &y).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), z.shape());
        assert!(a.is_finite());
        assert_ne!(a, m.eps(z, 20, &Condition::with_tokens("q", vec![4])).unwrap());
    }

    #[test]
    fn disabled_hooks_equal_plain() {
        let m = model();
        let fs = frames(3, 2);
        let y = Condition::with_tokens("p", vec![1, 2, 3]);
        let out = m.forward(&fs, 7, &y, &VcacHooks::disabled(), None).unwrap();
        for (f, e) in fs.iter().zip(&out.eps) {
            assert_eq!(&m.forward_plain(f, 7, &y).unwrap(), e);
        }
    }

    #[test]
    fn identical_branches_are_hook_identity() {
        let m = model();
        let fs = frames(4, 3);
        let y = Condition::with_tokens("p", vec![1, 2, 3]);
        let hooks = all_hooks(4);
        let (src, tgt) = m.edit_pair(&fs, &fs, 12, &y, &y, &hooks).unwrap();
        assert_eq!(src, tgt);
        // Without K/V sharing the source branch is the plain pass.
        let hooks = VcacHooks { kv: None, ..all_hooks(4) };
        let (_, tgt) = m.edit_pair(&fs, &fs, 12, &y, &y, &hooks).unwrap();
        for (f, e) in fs.iter().zip(&tgt) {
            assert!(m.forward_plain(f, 12, &y).unwrap().max_abs_diff(e).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn missing_cache_rejected() {
        let m = model();
        let fs = frames(4, 4);
        let y = Condition::new("p");
        let err = m.forward(&fs, 3, &y, &all_hooks(4), None).unwrap_err();
        assert!(matches!(err, Error::MissingSourceCache(_)));
    }

    #[test]
    fn propagation_equalizes_identical_frames() {
        let m = model();
        let mut fs = frames(4, 5);
        fs[1] = fs[0].clone();
        fs[1].as_mut_slice()[0] += 0.0;
        let other = frames(1, 9).remove(0);
        fs[2] = other.clone();
        fs[3] = other;
        let hooks = VcacHooks {
            kv: Some(plan(4, 4, 0.0)),
            ..Default::default()
        };
        let y = Condition::with_tokens("p", vec![7]);
        let out = m.forward(&fs, 9, &y, &hooks, None).unwrap();
        assert_eq!(out.eps[2], out.eps[3]);
    }
}
