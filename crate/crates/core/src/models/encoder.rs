//! Pre-norm transformer encoder shared by the ranking architectures.

use serde::{Deserialize, Serialize};

use crate::nnkit::{
    gelu_backward, gelu_forward, sinusoidal_positions, AttentionCache, AttentionMask, Embedding,
    GradStore, LayerNorm, LayerNormCache, Linear, NnError, ParamSet, ParamView, SeededRng,
    SelfAttention, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    /// Hidden width of the feed-forward sublayer.
    pub ffn_width: usize,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize, width: usize, depth: usize) -> Self {
        EncoderConfig {
            vocab_size,
            width,
            depth,
            heads: 1,
            ffn_width: 2 * width,
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    att: SelfAttention,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone)]
struct BlockCache {
    ln1: LayerNormCache,
    att: AttentionCache,
    ln2: LayerNormCache,
    normed2: Tensor,
    hidden: Tensor,
    activated: Tensor,
}

impl Block {
    fn forward(
        &self,
        p: ParamView<'_>,
        x: &Tensor,
        mask: &AttentionMask,
    ) -> Result<(Tensor, BlockCache), NnError> {
        let (n1, ln1) = self.ln1.forward(p, x)?;
        let (a, att) = self.att.forward(p, &n1, mask)?;
        let h = x.add(&a)?;
        let (normed2, ln2) = self.ln2.forward(p, &h)?;
        let hidden = self.ff1.forward(p, &normed2)?;
        let activated = gelu_forward(&hidden);
        let out = h.add(&self.ff2.forward(p, &activated)?)?;
        Ok((
            out,
            BlockCache {
                ln1,
                att,
                ln2,
                normed2,
                hidden,
                activated,
            },
        ))
    }

    fn backward(
        &self,
        p: ParamView<'_>,
        g: &mut GradStore,
        c: &BlockCache,
        dy: &Tensor,
    ) -> Result<Tensor, NnError> {
        let d_act = self.ff2.backward(p, g, &c.activated, dy)?;
        let d_hidden = gelu_backward(&c.hidden, &d_act);
        let d_normed2 = self.ff1.backward(p, g, &c.normed2, &d_hidden)?;
        let mut dh = dy.clone();
        dh.add_assign(&self.ln2.backward(p, g, &c.ln2, &d_normed2)?)?;
        let d_n1 = self.att.backward(p, g, &c.att, &dh)?;
        let mut dx = dh;
        dx.add_assign(&self.ln1.backward(p, g, &c.ln1, &d_n1)?)?;
        Ok(dx)
    }
}

/// Token embedding, optional sinusoidal positions, `depth` blocks of
/// `x + Attn(LN(x))` then `x + FFN(LN(x))`, and a closing layer norm.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    positional: bool,
    embedding: Embedding,
    blocks: Vec<Block>,
    final_ln: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    ids: Vec<usize>,
    blocks: Vec<BlockCache>,
    final_ln: LayerNormCache,
}

impl Encoder {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        config: EncoderConfig,
        positional: bool,
        rng: &mut SeededRng,
    ) -> Result<Self, NnError> {
        let w = config.width;
        let embedding = Embedding::new(ps, &format!("{name}.embedding"), config.vocab_size, w, rng);
        let mut blocks = Vec::with_capacity(config.depth);
        for layer in 0..config.depth {
            let prefix = format!("{name}.block{layer}");
            blocks.push(Block {
                ln1: LayerNorm::new(ps, &format!("{prefix}.ln1"), w),
                att: SelfAttention::new(ps, &format!("{prefix}.attention"), w, config.heads, rng)?,
                ln2: LayerNorm::new(ps, &format!("{prefix}.ln2"), w),
                ff1: Linear::new(ps, &format!("{prefix}.ff1"), w, config.ffn_width, true, rng),
                ff2: Linear::new(ps, &format!("{prefix}.ff2"), config.ffn_width, w, true, rng),
            });
        }
        let final_ln = LayerNorm::new(ps, &format!("{name}.final_ln"), w);
        Ok(Encoder {
            config,
            positional,
            embedding,
            blocks,
            final_ln,
        })
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn forward(
        &self,
        p: ParamView<'_>,
        ids: &[usize],
        mask: &AttentionMask,
    ) -> Result<(Tensor, EncoderCache), NnError> {
        let mut x = self.embedding.forward(p, ids)?;
        if self.positional {
            x.add_assign(&sinusoidal_positions(ids.len(), self.config.width))?;
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, c) = block.forward(p, &x, mask)?;
            caches.push(c);
            x = y;
        }
        let (out, final_ln) = self.final_ln.forward(p, &x)?;
        Ok((
            out,
            EncoderCache {
                ids: ids.to_vec(),
                blocks: caches,
                final_ln,
            },
        ))
    }

    pub fn backward(
        &self,
        p: ParamView<'_>,
        g: &mut GradStore,
        cache: &EncoderCache,
        d_out: &Tensor,
    ) -> Result<(), NnError> {
        let mut dx = self.final_ln.backward(p, g, &cache.final_ln, d_out)?;
        for (block, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            dx = block.backward(p, g, c, &dx)?;
        }
        self.embedding.backward(g, &cache.ids, &dx);
        Ok(())
    }
}

/// An `n × w` gradient that is zero except for the listed rows.
pub(crate) fn sparse_rows(n: usize, width: usize, rows: &[(usize, &[f64])]) -> Tensor {
    let mut t = Tensor::zeros(&[n, width]);
    for (i, r) in rows {
        for (a, b) in t.row_mut(*i).iter_mut().zip(*r) {
            *a += b;
        }
    }
    t
}
