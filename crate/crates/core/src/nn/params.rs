use std::collections::HashMap;

use rand_distr::{Distribution, Normal};

use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

impl Param {
    /// Parameter group: the name up to the first `.` (`enc0.conv1.weight` → `enc0`).
    pub fn group(&self) -> &str {
        self.name.split('.').next().unwrap_or(&self.name)
    }
}

/// Named parameters in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> usize {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), value.len(), "param {name} shape");
        assert!(!self.index.contains_key(&name), "duplicate param {name}");
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param { name, shape, value });
        id
    }

    /// He-normal conv kernel `[out, in, k, k]` and zero bias under `prefix`.
    pub fn add_conv(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize, rng: &mut Rng) {
        let fan_in = (c_in * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
        let w = (0..c_out * c_in * k * k).map(|_| normal.sample(rng)).collect();
        self.insert(format!("{prefix}.weight"), vec![c_out, c_in, k, k], w);
        self.insert(format!("{prefix}.bias"), vec![c_out], vec![0.0; c_out]);
    }

    pub fn add_linear(&mut self, prefix: &str, inputs: usize, outputs: usize, rng: &mut Rng) {
        let normal = Normal::new(0.0, (1.0 / inputs as f64).sqrt()).expect("finite std");
        let w = (0..outputs * inputs).map(|_| normal.sample(rng)).collect();
        self.insert(format!("{prefix}.weight"), vec![outputs, inputs], w);
        self.insert(format!("{prefix}.bias"), vec![outputs], vec![0.0; outputs]);
    }

    pub fn id(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn by_id(&self, id: usize) -> &Param {
        &self.params[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Group names in first-appearance order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.params {
            if !out.iter().any(|g| g == p.group()) {
                out.push(p.group().to_string());
            }
        }
        out
    }

    pub fn zero_grads(&self) -> ParamGrads {
        ParamGrads {
            grads: self.params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub grads: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }

    pub fn clear(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            *g *= factor;
        }
    }
}
