use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prediction target of the fusion head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Task {
    Classification { n_classes: usize },
    Regression,
}

impl Task {
    pub fn outputs(&self) -> usize {
        match self {
            Task::Classification { n_classes } => *n_classes,
            Task::Regression => 1,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, Task::Classification { .. })
    }
}

/// Which representation branches feed the dense-fusion head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branches {
    /// Self-attention specific branches and the cross-attention common branch.
    Disentangled,
    /// Attention replaced by token mean pooling and the flattened joint
    /// (Kronecker) features used as the common branch: plain dense fusion.
    Identity,
    /// Identity pooling with the per-modality layers `f_a`, `f_b` dropped:
    /// the head sees the concatenated pooled encodings only.
    EarlyFusion,
}

/// Source of the modality key/value streams of the common branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossSource {
    /// Encoder tokens `Z_a`, `Z_b`.
    Tokens,
    /// Self-attention outputs `S_a`, `S_b`, each used as a single token.
    Specific,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub d_in_a: usize,
    pub d_in_b: usize,
    pub n_tokens: usize,
    pub d_tok: usize,
    /// Query/key/value width of every attention block.
    pub d_attn: usize,
    pub d_common: usize,
    pub d_specific: usize,
    pub d_hidden: usize,
    /// Weight of the vCLUB term, in `[0, 1]`.
    pub lambda: f64,
    pub task: Task,
    pub temporal: bool,
    pub window: usize,
    pub club_hidden: usize,
    pub cross_source: CrossSource,
    pub branches: Branches,
}

impl FusionConfig {
    pub fn new(d_in_a: usize, d_in_b: usize, task: Task) -> Self {
        Self {
            d_in_a,
            d_in_b,
            n_tokens: 8,
            d_tok: 16,
            d_attn: 16,
            d_common: 64,
            d_specific: 64,
            d_hidden: 64,
            lambda: 0.1,
            task,
            temporal: false,
            window: 3,
            club_hidden: 64,
            cross_source: CrossSource::Tokens,
            branches: Branches::Disentangled,
        }
    }

    /// Temporal variant over windows of `window` timesteps.
    pub fn temporal(mut self, window: usize) -> Self {
        self.temporal = true;
        self.window = window;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_in_a", self.d_in_a),
            ("d_in_b", self.d_in_b),
            ("n_tokens", self.n_tokens),
            ("d_tok", self.d_tok),
            ("d_attn", self.d_attn),
            ("d_common", self.d_common),
            ("d_specific", self.d_specific),
            ("d_hidden", self.d_hidden),
            ("club_hidden", self.club_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if let Task::Classification { n_classes } = self.task {
            if n_classes < 2 {
                return Err(Error::Config("classification needs at least 2 classes".into()));
            }
        }
        Ok(())
    }

    /// Flat input width of modality A (window × features when temporal).
    pub fn input_width_a(&self) -> usize {
        self.d_in_a * self.steps()
    }

    pub fn input_width_b(&self) -> usize {
        self.d_in_b * self.steps()
    }

    fn steps(&self) -> usize {
        if self.temporal {
            self.window
        } else {
            1
        }
    }

    /// Width of each specific representation `S_a`, `S_b`.
    pub fn specific_width(&self) -> usize {
        match self.branches {
            Branches::Disentangled => self.d_specific,
            Branches::Identity | Branches::EarlyFusion => self.d_tok,
        }
    }

    /// Width of the common representation `S_c`.
    pub fn common_width(&self) -> usize {
        match self.branches {
            Branches::Disentangled => self.d_common,
            Branches::Identity => self.d_tok * self.d_tok,
            Branches::EarlyFusion => 2 * self.d_tok,
        }
    }

    /// Width of `h_final` entering the head `g`.
    pub fn fused_width(&self) -> usize {
        match self.branches {
            Branches::EarlyFusion => self.common_width(),
            _ => 2 * self.d_hidden + self.common_width(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_range_enforced() {
        let mut c = FusionConfig::new(4, 4, Task::Regression);
        c.validate().unwrap();
        c.lambda = 1.5;
        assert!(c.validate().is_err());
        c.lambda = -0.1;
        assert!(c.validate().is_err());
        c.lambda = 1.0;
        c.window = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn fused_width_is_concat_length() {
        let mut c = FusionConfig::new(4, 4, Task::Classification { n_classes: 3 });
        c.d_hidden = 4;
        c.d_common = 2;
        assert_eq!(c.fused_width(), 10);
    }
}
