use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Position of a parameter in its [`ParamLayout`] / [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Uniform with variance `gain² · 2 / ((1 + slope²) · fan_in)`.
    KaimingUniform {
        gain: f64,
        slope: f64,
    },
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub init: InitScheme,
}

/// Names and shapes of every parameter, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    by_name: HashMap<String, usize>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: String, shape: Shape, init: InitScheme) -> ParamId {
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.by_name.insert(name.clone(), self.specs.len());
        self.specs.push(ParamSpec { name, shape, init });
        ParamId(self.specs.len() - 1)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn total(&self) -> usize {
        self.specs.iter().map(|s| s.shape.numel()).sum()
    }
}

/// A named parameter tensor with its initialization tag.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub init: InitScheme,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn zeros(layout: &ParamLayout) -> Self {
        let params = layout
            .specs()
            .iter()
            .map(|s| Param {
                name: s.name.clone(),
                tensor: Tensor::zeros(s.shape),
                init: s.init,
            })
            .collect();
        ParamStore { params }
    }

    /// Draws every tensor from its init scheme, in layout order.
    pub fn initialize<R: Rng + ?Sized>(layout: &ParamLayout, rng: &mut R) -> Self {
        let params = layout
            .specs()
            .iter()
            .map(|s| {
                let tensor = match s.init {
                    InitScheme::Zeros => Tensor::zeros(s.shape),
                    InitScheme::KaimingUniform { gain, slope } => {
                        let fan_in = (s.shape.c * s.shape.h * s.shape.w).max(1) as f64;
                        let std = gain * (2.0 / ((1.0 + slope * slope) * fan_in)).sqrt();
                        let bound = 3f64.sqrt() * std;
                        Tensor::uniform(s.shape, -bound, bound, rng)
                    }
                };
                Param {
                    name: s.name.clone(),
                    tensor,
                    init: s.init,
                }
            })
            .collect();
        ParamStore { params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].tensor
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                    init: p.init,
                })
                .collect(),
        }
    }

    /// Replaces every tensor with the same-named entry of `named`, which must
    /// match this store exactly in names and shapes. The error lists every
    /// discrepancy.
    pub fn load_named(&mut self, named: Vec<(String, Tensor<T>)>) -> Result<()> {
        let mut diffs = Vec::new();
        let mut incoming: HashMap<String, Tensor<T>> = HashMap::new();
        for (name, t) in named {
            incoming.insert(name, t);
        }
        for p in &self.params {
            match incoming.get(&p.name) {
                None => diffs.push(format!(
                    "  missing in checkpoint: {} {}",
                    p.name,
                    p.tensor.shape()
                )),
                Some(t) if t.shape() != p.tensor.shape() => diffs.push(format!(
                    "  shape differs: {} model {} checkpoint {}",
                    p.name,
                    p.tensor.shape(),
                    t.shape()
                )),
                Some(_) => {}
            }
        }
        let mut extra: Vec<_> = incoming
            .keys()
            .filter(|k| !self.params.iter().any(|p| &p.name == *k))
            .cloned()
            .collect();
        extra.sort();
        diffs.extend(
            extra
                .into_iter()
                .map(|k| format!("  unexpected in checkpoint: {k}")),
        );
        if !diffs.is_empty() {
            return Err(Error::ArchitectureMismatch(diffs.join("\n")));
        }
        for p in &mut self.params {
            p.tensor = incoming.remove(&p.name).expect("presence checked");
        }
        Ok(())
    }
}
