//! Architectures implemented on top of [`crate::nn`].

use crate::error::{Error, Result};
use crate::nn::{Graph, ParamGrads, ParamStore, Var};
use crate::rng::Rng;

use super::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum NativeArch {
    /// Three conv stages, global pooling, dense head.
    TinyCnn,
    /// Encoder/decoder with skip connections; `depth` downsamplings.
    UNet { base: usize, depth: usize },
    /// Nested UNet with dense skip pathways.
    UNetPlusPlus { base: usize, depth: usize },
}

impl NativeArch {
    /// Input sides must be a multiple of this.
    pub(crate) fn size_factor(self) -> usize {
        match self {
            NativeArch::TinyCnn => 4,
            NativeArch::UNet { depth, .. } | NativeArch::UNetPlusPlus { depth, .. } => 1 << depth,
        }
    }
}

pub(crate) struct NativeNet {
    arch: NativeArch,
    store: ParamStore,
}

fn conv_block(store: &mut ParamStore, prefix: &str, c_in: usize, c_out: usize, rng: &mut Rng) {
    store.add_conv(&format!("{prefix}.conv1"), c_in, c_out, 3, rng);
    store.add_conv(&format!("{prefix}.conv2"), c_out, c_out, 3, rng);
}

fn apply_block(g: &mut Graph, x: Var, prefix: &str) -> Var {
    let a = g.conv(x, &format!("{prefix}.conv1"));
    let a = g.relu(a);
    let b = g.conv(a, &format!("{prefix}.conv2"));
    g.relu(b)
}

impl NativeNet {
    pub(crate) fn new(arch: NativeArch, in_channels: usize, outputs: usize, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        match arch {
            NativeArch::TinyCnn => {
                store.add_conv("conv1", in_channels, 8, 3, rng);
                store.add_conv("conv2", 8, 16, 3, rng);
                store.add_conv("conv3", 16, 16, 3, rng);
                store.add_linear("head", 16, outputs, rng);
            }
            NativeArch::UNet { base, depth } => {
                let width = |i: usize| base << i;
                conv_block(&mut store, "enc0", in_channels, width(0), rng);
                for i in 1..=depth {
                    conv_block(&mut store, &format!("enc{i}"), width(i - 1), width(i), rng);
                }
                for i in (0..depth).rev() {
                    conv_block(&mut store, &format!("dec{i}"), width(i) + width(i + 1), width(i), rng);
                }
                store.add_conv("head", width(0), outputs, 1, rng);
            }
            NativeArch::UNetPlusPlus { base, depth } => {
                let width = |i: usize| base << i;
                conv_block(&mut store, "x0_0", in_channels, width(0), rng);
                for i in 1..=depth {
                    conv_block(&mut store, &format!("x{i}_0"), width(i - 1), width(i), rng);
                }
                for j in 1..=depth {
                    for i in 0..=depth - j {
                        let c_in = j * width(i) + width(i + 1);
                        conv_block(&mut store, &format!("x{i}_{j}"), c_in, width(i), rng);
                    }
                }
                store.add_conv("head", width(0), outputs, 1, rng);
            }
        }
        Self { arch, store }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        match self.arch {
            NativeArch::TinyCnn => {
                let mut h = x;
                for (i, name) in ["conv1", "conv2", "conv3"].iter().enumerate() {
                    h = g.conv(h, name);
                    h = g.relu(h);
                    if i < 2 {
                        h = g.max_pool2(h);
                    }
                }
                let pooled = g.global_avg_pool(h);
                g.linear(pooled, "head")
            }
            NativeArch::UNet { depth, .. } => {
                let mut skips = Vec::with_capacity(depth + 1);
                let mut h = apply_block(g, x, "enc0");
                for i in 1..=depth {
                    skips.push(h);
                    let p = g.max_pool2(h);
                    h = apply_block(g, p, &format!("enc{i}"));
                }
                for i in (0..depth).rev() {
                    let up = g.upsample2(h);
                    let cat = g.concat(&[skips[i], up]);
                    h = apply_block(g, cat, &format!("dec{i}"));
                }
                g.conv(h, "head")
            }
            NativeArch::UNetPlusPlus { depth, .. } => {
                // nodes[i][j] is x{i}_{j}
                let mut nodes: Vec<Vec<Var>> = vec![Vec::new(); depth + 1];
                nodes[0].push(apply_block(g, x, "x0_0"));
                for i in 1..=depth {
                    let p = g.max_pool2(nodes[i - 1][0]);
                    nodes[i].push(apply_block(g, p, &format!("x{i}_0")));
                }
                for j in 1..=depth {
                    for i in 0..=depth - j {
                        let mut inputs: Vec<Var> = nodes[i][..j].to_vec();
                        inputs.push(g.upsample2(nodes[i + 1][j - 1]));
                        let cat = g.concat(&inputs);
                        let v = apply_block(g, cat, &format!("x{i}_{j}"));
                        nodes[i].push(v);
                    }
                }
                g.conv(nodes[0][depth], "head")
            }
        }
    }

    fn check_input(&self, shape: [usize; 3]) -> Result<()> {
        let f = self.arch.size_factor();
        if shape[1] == 0 || shape[2] == 0 || shape[1] % f != 0 || shape[2] % f != 0 {
            return Err(Error::ShapeMismatch(format!(
                "input {}x{} is not a positive multiple of {f}",
                shape[1], shape[2]
            )));
        }
        let expected = self.store.get(first_conv(self.arch)).expect("first conv").shape[1];
        if shape[0] != expected {
            return Err(Error::ShapeMismatch(format!(
                "input has {} channels, model expects {expected}",
                shape[0]
            )));
        }
        Ok(())
    }
}

fn first_conv(arch: NativeArch) -> &'static str {
    match arch {
        NativeArch::TinyCnn => "conv1.weight",
        NativeArch::UNet { .. } => "enc0.conv1.weight",
        NativeArch::UNetPlusPlus { .. } => "x0_0.conv1.weight",
    }
}

impl Network for NativeNet {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn head_groups(&self) -> Vec<String> {
        vec!["head".to_string()]
    }

    fn logits(&self, input: &[f64], shape: [usize; 3]) -> Result<Vec<f64>> {
        self.check_input(shape)?;
        let mut g = Graph::inference(&self.store);
        let x = g.input(input.to_vec(), shape.to_vec());
        let out = self.forward(&mut g, x);
        Ok(g.value(out).to_vec())
    }

    fn logits_with_grad(
        &self,
        input: &[f64],
        shape: [usize; 3],
        grad_of: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
        grads: &mut ParamGrads,
    ) -> Result<Vec<f64>> {
        self.check_input(shape)?;
        let mut g = Graph::new(&self.store);
        let x = g.input(input.to_vec(), shape.to_vec());
        let out = self.forward(&mut g, x);
        let logits = g.value(out).to_vec();
        let grad = grad_of(&logits)?;
        g.backward(out, &grad, grads);
        Ok(logits)
    }
}
