use crate::club::ClubEstimator;
use crate::error::{Error, Result};
use crate::fusion::attention::{CrossAttention, SelfAttention, StreamShape};
use crate::fusion::config::{Branches, CrossSource, FusionConfig, Task};
use crate::numerics::{Bound, Linear, ParamSet, Rng, Tape, Tensor, Var};
use crate::objectives::{focal_loss_from_logits, mse_loss, ClassWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    A,
    B,
}

/// Per-modality encoder: optional temporal blocks, then a dense layer whose
/// output is split into tokens.
#[derive(Debug, Clone)]
pub struct Encoder {
    temporal: Option<[Linear; 2]>,
    tokenize: Linear,
    d_in: usize,
    steps: usize,
    n_tokens: usize,
    d_tok: usize,
}

impl Encoder {
    fn register(set: &mut ParamSet, rng: &mut Rng, name: &str, d_in: usize, cfg: &FusionConfig) -> Result<Self> {
        let (temporal, flat) = if cfg.temporal {
            let first = Linear::register(set, rng, &format!("{name}.t0"), d_in, cfg.d_hidden)?;
            let second = Linear::register(set, rng, &format!("{name}.t1"), cfg.d_hidden, cfg.d_hidden)?;
            (Some([first, second]), cfg.window * cfg.d_hidden)
        } else {
            (None, d_in)
        };
        let tokenize = Linear::register(set, rng, &format!("{name}.tok"), flat, cfg.n_tokens * cfg.d_tok)?;
        Ok(Self {
            temporal,
            tokenize,
            d_in,
            steps: if cfg.temporal { cfg.window } else { 1 },
            n_tokens: cfg.n_tokens,
            d_tok: cfg.d_tok,
        })
    }

    /// `x: [B, steps·d_in]` (or `[B, steps, d_in]`) to tokens `[B, n_tokens, d_tok]`.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        let width: usize = shape.iter().skip(1).product();
        if shape.len() < 2 || width != self.steps * self.d_in {
            return Err(Error::shape(
                "encode_modality",
                format!("expected [batch, {}x{}], got {shape:?}", self.steps, self.d_in),
            ));
        }
        let batch = shape[0];
        let flat = match &self.temporal {
            Some([first, second]) => {
                let seq = x.reshape(&[batch, self.steps, self.d_in])?;
                let h = first.forward(p, &seq)?.relu()?;
                let h = second.forward(p, &h)?.relu()?;
                h.reshape(&[batch, self.steps * second.outputs])?
            }
            None => x.reshape(&[batch, self.d_in])?,
        };
        self.tokenize
            .forward(p, &flat)?
            .relu()?
            .reshape(&[batch, self.n_tokens, self.d_tok])
    }
}

/// Joint features from the outer product of the token-mean-pooled encodings:
/// `[B, n, p]`, `[B, n, q]` to `[B, p, q]`, one outer product per sample. Row
/// `i` of each sample's product is used as the `i`-th joint token.
pub fn joint_kronecker<'t>(z_a: &Var<'t>, z_b: &Var<'t>) -> Result<Var<'t>> {
    let (sa, sb) = (z_a.shape(), z_b.shape());
    if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
        return Err(Error::shape("joint_kronecker", format!("{sa:?} (x) {sb:?}")));
    }
    if sa[0] == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    z_a.mean_axis(1)?.outer(&z_b.mean_axis(1)?)
}

/// Outputs of one forward pass, with the branch representations exposed
/// for the mutual-information loss.
#[derive(Debug, Clone, Copy)]
pub struct FusionOutput<'t> {
    pub y: Var<'t>,
    pub s_a: Var<'t>,
    pub s_b: Var<'t>,
    pub s_c: Var<'t>,
    pub h_final: Var<'t>,
}

/// Disentangled dense fusion network.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub config: FusionConfig,
    pub params: ParamSet,
    encoder_a: Encoder,
    encoder_b: Encoder,
    self_a: Option<SelfAttention>,
    self_b: Option<SelfAttention>,
    cross: Option<CrossAttention>,
    f_a: Option<Linear>,
    f_b: Option<Linear>,
    g_hidden: Linear,
    g_out: Linear,
}

impl FusionModel {
    pub fn new(config: FusionConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut set = ParamSet::new();
        let encoder_a = Encoder::register(&mut set, rng, "enc_a", c.d_in_a, c)?;
        let encoder_b = Encoder::register(&mut set, rng, "enc_b", c.d_in_b, c)?;
        let (self_a, self_b, cross) = if c.branches == Branches::Disentangled {
            let sa = SelfAttention::register(&mut set, rng, "self_a", c.d_tok, c.d_attn, c.d_specific)?;
            let sb = SelfAttention::register(&mut set, rng, "self_b", c.d_tok, c.d_attn, c.d_specific)?;
            let stream = match c.cross_source {
                CrossSource::Tokens => StreamShape {
                    tokens: c.n_tokens,
                    width: c.d_tok,
                },
                CrossSource::Specific => StreamShape {
                    tokens: 1,
                    width: c.d_specific,
                },
            };
            let joint = StreamShape {
                tokens: c.d_tok,
                width: c.d_tok,
            };
            let cross = CrossAttention::register(
                &mut set, rng, "cross", joint, stream, stream, c.n_tokens, c.d_attn, c.d_common,
            )?;
            (Some(sa), Some(sb), Some(cross))
        } else {
            (None, None, None)
        };
        let (f_a, f_b) = if c.branches == Branches::EarlyFusion {
            (None, None)
        } else {
            let w = c.specific_width();
            (
                Some(Linear::register(&mut set, rng, "head.f_a", w, c.d_hidden)?),
                Some(Linear::register(&mut set, rng, "head.f_b", w, c.d_hidden)?),
            )
        };
        let g_hidden = Linear::register(&mut set, rng, "head.g0", c.fused_width(), c.d_hidden)?;
        let g_out = Linear::register(&mut set, rng, "head.g1", c.d_hidden, c.task.outputs())?;
        Ok(Self {
            config,
            params: set,
            encoder_a,
            encoder_b,
            self_a,
            self_b,
            cross,
            f_a,
            f_b,
            g_hidden,
            g_out,
        })
    }

    /// vCLUB estimator sized for this model's branch widths.
    pub fn new_estimator(&self, rng: &mut Rng) -> Result<ClubEstimator> {
        ClubEstimator::new(
            2 * self.config.specific_width(),
            self.config.common_width(),
            self.config.club_hidden,
            rng,
        )
    }

    pub fn encode_modality<'t>(&self, p: &Bound<'t>, x: &Var<'t>, which: Modality) -> Result<Var<'t>> {
        match which {
            Modality::A => self.encoder_a.forward(p, x),
            Modality::B => self.encoder_b.forward(p, x),
        }
    }

    /// Modality-specific representation; token mean pooling when the
    /// attention branches are disabled.
    pub fn self_attention<'t>(&self, p: &Bound<'t>, z: &Var<'t>, which: Modality) -> Result<Var<'t>> {
        let block = match which {
            Modality::A => &self.self_a,
            Modality::B => &self.self_b,
        };
        match block {
            Some(b) => Ok(b.forward(p, z)?.0),
            None => z.mean_axis(1),
        }
    }

    /// Attention weights of a modality's self-attention block.
    pub fn self_attention_weights<'t>(&self, p: &Bound<'t>, z: &Var<'t>, which: Modality) -> Result<Var<'t>> {
        let block = match which {
            Modality::A => &self.self_a,
            Modality::B => &self.self_b,
        };
        block
            .as_ref()
            .ok_or_else(|| Error::Config("attention branches are disabled".into()))?
            .forward(p, z)
            .map(|(_, w)| w)
    }

    /// Modality-common representation from the joint tokens and the
    /// modality streams.
    pub fn cross_attention_common<'t>(
        &self,
        p: &Bound<'t>,
        joint: &Var<'t>,
        stream_a: &Var<'t>,
        stream_b: &Var<'t>,
    ) -> Result<Var<'t>> {
        let batch = joint.shape()[0];
        match (&self.cross, self.config.branches) {
            (Some(cross), _) => Ok(cross.forward(p, joint, stream_a, stream_b)?.0),
            (None, Branches::Identity) => joint.reshape(&[batch, self.config.common_width()]),
            (None, _) => Var::concat(&[stream_a.mean_axis(1)?, stream_b.mean_axis(1)?]),
        }
    }

    /// `h_final = concat(f_a(S_a), S_c, f_b(S_b))`, `y = g(h_final)`.
    pub fn dense_fusion_head<'t>(
        &self,
        p: &Bound<'t>,
        s_a: &Var<'t>,
        s_b: &Var<'t>,
        s_c: &Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let h_final = match (&self.f_a, &self.f_b) {
            (Some(fa), Some(fb)) => {
                let h_a = fa.forward(p, s_a)?.relu()?;
                let h_b = fb.forward(p, s_b)?.relu()?;
                Var::concat(&[h_a, *s_c, h_b])?
            }
            _ => *s_c,
        };
        let y = self
            .g_out
            .forward(p, &self.g_hidden.forward(p, &h_final)?.relu()?)?;
        Ok((h_final, y))
    }

    /// Full forward pass on a batch of paired modality rows.
    pub fn forward<'t>(&self, p: &Bound<'t>, a: &Var<'t>, b: &Var<'t>) -> Result<FusionOutput<'t>> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.first() != sb.first() {
            return Err(Error::shape("fusion_forward", format!("{sa:?} vs {sb:?}")));
        }
        if sa.first() == Some(&0) || sa.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let z_a = self.encode_modality(p, a, Modality::A)?;
        let z_b = self.encode_modality(p, b, Modality::B)?;
        let joint = joint_kronecker(&z_a, &z_b)?;
        let s_a = self.self_attention(p, &z_a, Modality::A)?;
        let s_b = self.self_attention(p, &z_b, Modality::B)?;
        let (stream_a, stream_b) = match (self.config.branches, self.config.cross_source) {
            (Branches::Disentangled, CrossSource::Specific) => {
                let batch = sa[0];
                let w = self.config.d_specific;
                (s_a.reshape(&[batch, 1, w])?, s_b.reshape(&[batch, 1, w])?)
            }
            _ => (z_a, z_b),
        };
        let s_c = self.cross_attention_common(p, &joint, &stream_a, &stream_b)?;
        let (h_final, y) = self.dense_fusion_head(p, &s_a, &s_b, &s_c)?;
        Ok(FusionOutput {
            y,
            s_a,
            s_b,
            s_c,
            h_final,
        })
    }

    /// Raw head outputs (logits or regression values) for a batch.
    pub fn predict(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = tape.freeze(&self.params)?;
        let out = self.forward(&p, &tape.constant(a.clone())?, &tape.constant(b.clone())?)?;
        Ok(out.y.value())
    }
}

/// Prediction objective of the fusion loss.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    Focal {
        targets: &'a [usize],
        weights: &'a ClassWeights,
        gamma: f64,
    },
    Mse {
        targets: &'a [f64],
    },
}

impl Objective<'_> {
    /// Objective term on head outputs `y`.
    pub fn evaluate<'t>(&self, y: &Var<'t>) -> Result<Var<'t>> {
        match self {
            Objective::Focal {
                targets,
                weights,
                gamma,
            } => focal_loss_from_logits(y, targets, weights, *gamma),
            Objective::Mse { targets } => {
                let t = y.tape().constant(Tensor::vector(targets.to_vec()))?;
                mse_loss(y, &t)
            }
        }
    }

    pub fn matches(&self, task: Task) -> bool {
        matches!(
            (self, task),
            (Objective::Focal { .. }, Task::Classification { .. }) | (Objective::Mse { .. }, Task::Regression)
        )
    }
}

/// Objective plus `λ · vCLUB(concat(S_a, S_b), S_c)`.
///
/// At `λ = 0` the MI term is skipped and the result is the bare objective.
pub fn fusion_loss<'t>(
    out: &FusionOutput<'t>,
    objective: &Objective<'_>,
    estimator: &ClubEstimator,
    estimator_params: &Bound<'t>,
    lambda: f64,
) -> Result<Var<'t>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let task_loss = objective.evaluate(&out.y)?;
    if lambda == 0.0 {
        return Ok(task_loss);
    }
    let specific = Var::concat(&[out.s_a, out.s_b])?;
    let mi = estimator.vclub(estimator_params, &specific, &out.s_c)?;
    task_loss.add(&mi.scale(lambda)?)
}
