use crate::error::{Error, Result};
use crate::numerics::{Bound, Linear, ParamSet, Rng, Var};

/// Single-head scaled dot-product attention over token batches.
///
/// `q: [B, tq, d]`, `k: [B, tk, d]`, `v: [B, tk, dv]`. Returns the attended
/// values `[B, tq, dv]` and the attention weights `[B, tq, tk]`.
pub fn scaled_dot_product<'t>(
    q: &Var<'t>,
    k: &Var<'t>,
    v: &Var<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let d = *q.shape().last().unwrap_or(&1) as f64;
    let weights = q.bmm(&k.transpose()?)?.scale(1.0 / d.sqrt())?.softmax()?;
    Ok((weights.bmm(v)?, weights))
}

/// Learned mixing of the token axis: `[B, n, d] -> [B, t, d]`.
#[derive(Debug, Clone)]
pub struct TokenMix {
    lin: Linear,
}

impl TokenMix {
    pub fn register(set: &mut ParamSet, rng: &mut Rng, name: &str, from: usize, to: usize) -> Result<Self> {
        Ok(Self {
            lin: Linear::register(set, rng, name, from, to)?,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        let n = x.shape()[1];
        if n != self.lin.inputs {
            return Err(Error::shape(
                "token_mix",
                format!("{} mixes {} tokens, got {n}", self.lin.name, self.lin.inputs),
            ));
        }
        self.lin.forward(p, &x.transpose()?)?.transpose()
    }
}

/// Self-attention branch producing one modality-specific vector per sample.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

impl SelfAttention {
    pub fn register(
        set: &mut ParamSet,
        rng: &mut Rng,
        name: &str,
        d_tok: usize,
        d_attn: usize,
        d_out: usize,
    ) -> Result<Self> {
        Ok(Self {
            q: Linear::register(set, rng, &format!("{name}.q"), d_tok, d_attn)?,
            k: Linear::register(set, rng, &format!("{name}.k"), d_tok, d_attn)?,
            v: Linear::register(set, rng, &format!("{name}.v"), d_tok, d_attn)?,
            out: Linear::register(set, rng, &format!("{name}.out"), d_attn, d_out)?,
        })
    }

    /// `[B, n, d_tok] -> ([B, d_out], weights [B, n, n])`: attention, mean
    /// pooling over tokens, then the output projection.
    pub fn forward<'t>(&self, p: &Bound<'t>, z: &Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let q = self.q.forward(p, z)?;
        let k = self.k.forward(p, z)?;
        let v = self.v.forward(p, z)?;
        let (att, w) = scaled_dot_product(&q, &k, &v)?;
        Ok((self.out.forward(p, &att.mean_axis(1)?)?, w))
    }
}

/// One key/value stream of the common branch.
#[derive(Debug, Clone)]
struct Stream {
    mix: Option<TokenMix>,
    k: Linear,
    v: Linear,
}

impl Stream {
    fn register(
        set: &mut ParamSet,
        rng: &mut Rng,
        name: &str,
        tokens: usize,
        width: usize,
        target_tokens: usize,
        d_attn: usize,
    ) -> Result<Self> {
        let mix = if tokens == target_tokens {
            None
        } else {
            Some(TokenMix::register(set, rng, &format!("{name}.mix"), tokens, target_tokens)?)
        };
        Ok(Self {
            mix,
            k: Linear::register(set, rng, &format!("{name}.k"), width, d_attn)?,
            v: Linear::register(set, rng, &format!("{name}.v"), width, d_attn)?,
        })
    }

    fn tokens<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        match &self.mix {
            Some(m) => m.forward(p, x),
            None => Ok(*x),
        }
    }
}

/// Cross-attention extracting the modality-common representation.
///
/// The query comes from the joint tokens; keys and values are the elementwise
/// sums of the joint, A and B projections after every stream has been brought
/// to the same token count.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    tokens: usize,
    joint_mix: TokenMix,
    q: Linear,
    joint: Stream,
    a: Stream,
    b: Stream,
    out: Linear,
}

/// Token layout of one cross-attention input stream.
#[derive(Debug, Clone, Copy)]
pub struct StreamShape {
    pub tokens: usize,
    pub width: usize,
}

impl CrossAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        set: &mut ParamSet,
        rng: &mut Rng,
        name: &str,
        joint: StreamShape,
        a: StreamShape,
        b: StreamShape,
        tokens: usize,
        d_attn: usize,
        d_out: usize,
    ) -> Result<Self> {
        Ok(Self {
            tokens,
            joint_mix: TokenMix::register(set, rng, &format!("{name}.mix_c"), joint.tokens, tokens)?,
            q: Linear::register(set, rng, &format!("{name}.q"), joint.width, d_attn)?,
            joint: Stream::register(set, rng, &format!("{name}.c"), tokens, joint.width, tokens, d_attn)?,
            a: Stream::register(set, rng, &format!("{name}.a"), a.tokens, a.width, tokens, d_attn)?,
            b: Stream::register(set, rng, &format!("{name}.b"), b.tokens, b.width, tokens, d_attn)?,
            out: Linear::register(set, rng, &format!("{name}.out"), d_attn, d_out)?,
        })
    }

    /// Returns `S_c` `[B, d_out]` and the attention weights.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        joint_tokens: &Var<'t>,
        a_tokens: &Var<'t>,
        b_tokens: &Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let c = self.joint_mix.forward(p, joint_tokens)?;
        let za = self.a.tokens(p, a_tokens)?;
        let zb = self.b.tokens(p, b_tokens)?;
        for (label, s) in [("joint", &c), ("a", &za), ("b", &zb)] {
            if s.shape()[1] != self.tokens {
                return Err(Error::shape(
                    "cross_attention",
                    format!("{label} stream has {} tokens, expected {}", s.shape()[1], self.tokens),
                ));
            }
        }
        let q = self.q.forward(p, &c)?;
        let k = self
            .joint
            .k
            .forward(p, &c)?
            .add(&self.a.k.forward(p, &za)?)?
            .add(&self.b.k.forward(p, &zb)?)?;
        let v = self
            .joint
            .v
            .forward(p, &c)?
            .add(&self.a.v.forward(p, &za)?)?
            .add(&self.b.v.forward(p, &zb)?)?;
        let (att, w) = scaled_dot_product(&q, &k, &v)?;
        Ok((self.out.forward(p, &att.mean_axis(1)?)?, w))
    }
}
