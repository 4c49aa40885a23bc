use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{Gradients, Rng, Tape, Tensor, Var};

/// Whether a parameter is subject to weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub kind: ParamKind,
}

/// Named learnable tensors. Iteration order is the lexical order of names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, mut value: Tensor, kind: ParamKind) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Config(format!("parameter {name} registered twice")));
        }
        value.set_requires_grad(true);
        self.entries.insert(name.to_string(), Param { value, kind });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|p| &mut p.value)
    }

    pub fn kind(&self, name: &str) -> Option<ParamKind> {
        self.entries.get(name).map(|p| p.kind)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    /// Union of two sets with disjoint names.
    pub fn union(&self, other: &ParamSet) -> Result<ParamSet> {
        let mut out = self.clone();
        for (name, p) in other.iter() {
            out.insert(name, p.value.clone(), p.kind)?;
        }
        Ok(out)
    }

    /// Copies values of every parameter of `src` whose name exists here.
    pub fn assign_from(&mut self, src: &ParamSet) -> Result<()> {
        for (name, p) in src.iter() {
            if let Some(dst) = self.entries.get_mut(name) {
                if dst.value.shape() != p.value.shape() {
                    return Err(Error::shape(
                        "assign",
                        format!("{name}: {:?} vs {:?}", dst.value.shape(), p.value.shape()),
                    ));
                }
                dst.value.data_mut().copy_from_slice(p.value.data());
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.value.zero_grad();
        }
    }

    /// Stable digest of all names, shapes and values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, p) in &self.entries {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        let d = h.finalize();
        d[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parameters of a [`ParamSet`] recorded as leaves of one tape.
#[derive(Debug)]
pub struct Bound<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Graph(format!("parameter {name} not bound")))
    }

    pub fn merge(mut self, other: Bound<'t>) -> Bound<'t> {
        self.vars.extend(other.vars);
        self
    }

    /// Adds the gradient of every bound parameter into the matching slot of `set`.
    pub fn accumulate(&self, grads: &Gradients, set: &mut ParamSet) {
        for (name, var) in &self.vars {
            if let (Some(g), Some(t)) = (grads.wrt(*var), set.get_mut(name)) {
                t.accumulate_grad(g);
            }
        }
    }
}

impl Tape {
    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, set: &ParamSet) -> Result<Bound<'_>> {
        self.bind_with(set, true)
    }

    /// Records every parameter as a constant.
    pub fn freeze(&self, set: &ParamSet) -> Result<Bound<'_>> {
        self.bind_with(set, false)
    }

    fn bind_with(&self, set: &ParamSet, grad: bool) -> Result<Bound<'_>> {
        let mut vars = BTreeMap::new();
        for (name, p) in set.iter() {
            let mut v = p.value.clone();
            v.set_requires_grad(false);
            vars.insert(name.to_string(), self.leaf(v, grad)?);
        }
        Ok(Bound { vars })
    }
}

/// Fully connected layer `y = x·W + b` with `W: [inputs, outputs]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linear {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// Registers `<name>.weight` (Glorot uniform) and `<name>.bias` (zeros).
    pub fn register(
        set: &mut ParamSet,
        rng: &mut Rng,
        name: &str,
        inputs: usize,
        outputs: usize,
    ) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::Config(format!("layer {name} has a zero dimension")));
        }
        set.insert(
            &format!("{name}.weight"),
            glorot_uniform(rng, inputs, outputs),
            ParamKind::Weight,
        )?;
        set.insert(&format!("{name}.bias"), Tensor::zeros(&[outputs]), ParamKind::Bias)?;
        Ok(Self {
            name: name.to_string(),
            inputs,
            outputs,
        })
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        let w = p.get(&self.weight_name())?;
        let b = p.get(&self.bias_name())?;
        x.matmul(&w)?.add_row(&b)
    }
}

/// Uniform Glorot initialization: `U(-l, l)` with `l = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.uniform(-limit, limit))
        .collect();
    Tensor::new(&[fan_in, fan_out], data).expect("fan sizes are positive")
}
