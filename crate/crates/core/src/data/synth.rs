use serde::{Deserialize, Serialize};

use super::{MultimodalDataset, Record};
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SynthTask {
    Classification { n_classes: usize },
    Regression,
    /// `series` independent AR(1) latent paths of `steps` steps each.
    Temporal { series: usize, steps: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub d_shared: usize,
    pub d_spec_a: usize,
    pub d_spec_b: usize,
    /// Observed widths of the two modalities.
    pub d_a: usize,
    pub d_b: usize,
    pub noise_std: f64,
    /// Fraction of observed features of each modality that load on the shared
    /// latent; the rest load on the modality-specific latent.
    pub redundancy: f64,
    /// Weight of the cross-modal product term `u_a ⊙ u_b` in the label.
    pub interaction: f64,
    /// AR(1) coefficient of the temporal latent paths.
    pub ar_coef: f64,
    pub task: SynthTask,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(task: SynthTask, seed: u64) -> Self {
        Self {
            n: 2000,
            d_shared: 4,
            d_spec_a: 4,
            d_spec_b: 4,
            d_a: 16,
            d_b: 16,
            noise_std: 0.5,
            redundancy: 0.7,
            interaction: 0.0,
            ar_coef: 0.9,
            task,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.d_shared, self.d_spec_a, self.d_spec_b, self.d_a, self.d_b].contains(&0) {
            return Err(Error::Config("latent and feature dims must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.redundancy) {
            return Err(Error::Config(format!("redundancy must lie in [0, 1], got {}", self.redundancy)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("noise_std must be >= 0".into()));
        }
        if !(self.ar_coef.abs() < 1.0) {
            return Err(Error::Config("AR coefficient must lie in (-1, 1)".into()));
        }
        match self.task {
            SynthTask::Classification { n_classes } if n_classes < 2 => {
                Err(Error::Config("classification needs at least 2 classes".into()))
            }
            SynthTask::Temporal { series, steps } if series == 0 || steps < 2 => {
                Err(Error::Config("temporal data needs series >= 1 and steps >= 2".into()))
            }
            SynthTask::Classification { .. } | SynthTask::Regression if self.n == 0 => {
                Err(Error::Config("n must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Ground-truth latents of one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latents {
    pub id: String,
    pub s: Vec<f64>,
    pub u_a: Vec<f64>,
    pub u_b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: MultimodalDataset,
    pub latents: Vec<Latents>,
}

/// Mixing matrix whose first `round(redundancy · rows)` rows load on the
/// shared latent only and the remaining rows on the specific latent only.
fn mixing(rng: &mut Rng, rows: usize, d_shared: usize, d_spec: usize, redundancy: f64) -> Vec<Vec<f64>> {
    let shared_rows = (redundancy * rows as f64).round() as usize;
    (0..rows)
        .map(|r| {
            let mut row = vec![0.0; d_shared + d_spec];
            let (range, scale) = if r < shared_rows {
                (0..d_shared, (d_shared as f64).sqrt())
            } else {
                (d_shared..d_shared + d_spec, (d_spec as f64).sqrt())
            };
            for k in range {
                row[k] = rng.normal() / scale;
            }
            row
        })
        .collect()
}

fn apply(m: &[Vec<f64>], z: &[f64], noise: f64, rng: &mut Rng) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(z).map(|(w, v)| w * v).sum::<f64>() + noise * rng.normal())
        .collect()
}

struct LabelFn {
    linear: Vec<Vec<f64>>,
    product: Vec<Vec<f64>>,
    interaction: f64,
}

impl LabelFn {
    fn new(rng: &mut Rng, outputs: usize, cfg: &SynthConfig) -> Self {
        let dim = cfg.d_shared + cfg.d_spec_a + cfg.d_spec_b;
        let pairs = cfg.d_spec_a.min(cfg.d_spec_b);
        let mut draw = |d: usize| -> Vec<Vec<f64>> {
            (0..outputs)
                .map(|_| (0..d).map(|_| rng.normal() / (d as f64).sqrt()).collect())
                .collect()
        };
        let linear = draw(dim);
        let product = draw(pairs);
        Self {
            linear,
            product,
            interaction: cfg.interaction,
        }
    }

    fn scores(&self, l: &Latents) -> Vec<f64> {
        let z: Vec<f64> = l.s.iter().chain(&l.u_a).chain(&l.u_b).copied().collect();
        let prod: Vec<f64> = l.u_a.iter().zip(&l.u_b).map(|(x, y)| x * y).collect();
        self.linear
            .iter()
            .zip(&self.product)
            .map(|(w, v)| {
                let lin: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum();
                let inter: f64 = v.iter().zip(&prod).map(|(a, b)| a * b).sum();
                lin + self.interaction * inter
            })
            .collect()
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b })
        .0
}

/// Draws latents `s`, `u_a`, `u_b`, observes `a = M_a [s; u_a] + ε` and
/// `b = M_b [s; u_b] + ε`, and labels each record from its latents: argmax of
/// class scores, a real score, or (temporal) the real score along AR(1)
/// latent paths.
pub fn synth_multimodal(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let mut mix_rng = root.derive("synth-mixing");
    let m_a = mixing(&mut mix_rng, cfg.d_a, cfg.d_shared, cfg.d_spec_a, cfg.redundancy);
    let m_b = mixing(&mut mix_rng, cfg.d_b, cfg.d_shared, cfg.d_spec_b, cfg.redundancy);
    let outputs = match cfg.task {
        SynthTask::Classification { n_classes } => n_classes,
        _ => 1,
    };
    let label_fn = LabelFn::new(&mut root.derive("synth-label"), outputs, cfg);
    let mut latent_rng = root.derive("synth-latents");
    let mut noise_rng = root.derive("synth-noise");
    let dims = (cfg.d_shared, cfg.d_spec_a, cfg.d_spec_b);

    let mut latents = Vec::new();
    let mut meta: Vec<(Option<String>, Option<i64>)> = Vec::new();
    match cfg.task {
        SynthTask::Temporal { series, steps } => {
            let phi = cfg.ar_coef;
            let innov = (1.0 - phi * phi).sqrt();
            for g in 0..series {
                let mut state: Vec<f64> = latent_rng.normals(dims.0 + dims.1 + dims.2);
                for t in 0..steps {
                    if t > 0 {
                        for v in state.iter_mut() {
                            *v = phi * *v + innov * latent_rng.normal();
                        }
                    }
                    latents.push(split_latents(format!("s{g}t{t}"), &state, dims));
                    meta.push((Some(format!("s{g}")), Some(t as i64)));
                }
            }
        }
        _ => {
            for i in 0..cfg.n {
                let z = latent_rng.normals(dims.0 + dims.1 + dims.2);
                latents.push(split_latents(format!("n{i}"), &z, dims));
                meta.push((None, None));
            }
        }
    }

    let mut records = Vec::with_capacity(latents.len());
    for (l, (group, t)) in latents.iter().zip(meta) {
        let za: Vec<f64> = l.s.iter().chain(&l.u_a).copied().collect();
        let zb: Vec<f64> = l.s.iter().chain(&l.u_b).copied().collect();
        let a = apply(&m_a, &za, cfg.noise_std, &mut noise_rng);
        let b = apply(&m_b, &zb, cfg.noise_std, &mut noise_rng);
        let scores = label_fn.scores(l);
        let label = match cfg.task {
            SynthTask::Classification { .. } => argmax(&scores) as f64,
            _ => scores[0],
        };
        records.push(Record {
            id: l.id.clone(),
            a,
            b,
            label,
            group,
            t,
        });
    }
    Ok(SynthOutput {
        dataset: MultimodalDataset::new(records)?,
        latents,
    })
}

fn split_latents(id: String, z: &[f64], (ds, da, _): (usize, usize, usize)) -> Latents {
    Latents {
        id,
        s: z[..ds].to_vec(),
        u_a: z[ds..ds + da].to_vec(),
        u_b: z[ds + da..].to_vec(),
    }
}
