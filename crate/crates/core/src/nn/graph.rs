use super::params::{ParamGrads, ParamStore};

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(usize),
    Conv2d { x: Var, w: Var, b: Var, k: usize },
    Relu(Var),
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Upsample2(Var),
    Concat(Vec<Var>),
    GlobalPool { x: Var, divisor: f64 },
    Linear { x: Var, w: Var, b: Var },
}

struct Node {
    /// `None` for parameters, which are read from the store.
    value: Option<Vec<f64>>,
    shape: Vec<usize>,
    op: Op,
}

/// One recorded forward pass.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    record: bool,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            record: true,
        }
    }

    /// Forward-only graph: ReLU overwrites its input in place, so
    /// [`Graph::backward`] must not be called and pre-activations are gone.
    pub fn inference(params: &'p ParamStore) -> Self {
        Self {
            record: false,
            ..Self::new(params)
        }
    }

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            value: Some(value),
            shape,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].op {
            Op::Param(id) => &self.params.by_id(*id).value,
            _ => self.nodes[v.0].value.as_deref().expect("non-param node value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn input(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Var {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "input shape");
        self.push(data, shape, Op::Input)
    }

    pub fn param(&mut self, name: &str) -> Var {
        let id = self.params.id(name);
        let shape = self.params.by_id(id).shape.clone();
        self.nodes.push(Node {
            value: None,
            shape,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// Same-padded, stride-1 convolution with `{prefix}.weight` / `{prefix}.bias`.
    pub fn conv(&mut self, x: Var, prefix: &str) -> Var {
        let w = self.param(&format!("{prefix}.weight"));
        let b = self.param(&format!("{prefix}.bias"));
        self.conv2d(x, w, b)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (c_in, h, wd) = (xs[0], xs[1], xs[2]);
        let (c_out, k) = (ws[0], ws[2]);
        assert_eq!(ws[1], c_in, "conv input channels");
        assert_eq!(ws[2], ws[3], "square kernels only");
        let pad = k / 2;
        let plane = h * wd;
        let mut out = vec![0.0; c_out * plane];
        {
            let xv = self.value(x);
            let wv = self.value(w);
            let bv = self.value(b);
            for co in 0..c_out {
                let o = &mut out[co * plane..(co + 1) * plane];
                o.iter_mut().for_each(|v| *v = bv[co]);
                for ci in 0..c_in {
                    let inp = &xv[ci * plane..(ci + 1) * plane];
                    for ky in 0..k {
                        for kx in 0..k {
                            let wt = wv[((co * c_in + ci) * k + ky) * k + kx];
                            let (c_lo, c_hi) = col_range(kx, pad, wd);
                            for y in row_range(ky, pad, h) {
                                let iy = y + ky - pad;
                                let src = &inp[iy * wd + c_lo + kx - pad..iy * wd + c_hi + kx - pad];
                                let dst = &mut o[y * wd + c_lo..y * wd + c_hi];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += wt * s;
                                }
                            }
                        }
                    }
                }
            }
        }
        self.push(out, vec![c_out, h, wd], Op::Conv2d { x, w, b, k })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let reusable = !self.record && !matches!(self.nodes[x.0].op, Op::Param(_) | Op::Input);
        let out = if reusable {
            let mut v = self.nodes[x.0].value.take().expect("relu input consumed twice");
            v.iter_mut().for_each(|e| *e = e.max(0.0));
            v
        } else {
            self.value(x).iter().map(|&v| v.max(0.0)).collect()
        };
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Relu(x))
    }

    /// 2×2 max-pooling; odd trailing rows/cols are dropped.
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let (c, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (h / 2, w / 2);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for r in 0..oh {
                for col in 0..ow {
                    let mut best = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = ch * h * w + (2 * r + dy) * w + 2 * col + dx;
                        if xv[i] > best_v || best == usize::MAX {
                            best_v = xv[i];
                            best = i;
                        }
                    }
                    out.push(best_v);
                    argmax.push(best as u32);
                }
            }
        }
        self.push(out, vec![c, oh, ow], Op::MaxPool2 { x, argmax })
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let (c, h, w) = (s[0], s[1], s[2]);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(c * 4 * h * w);
        for ch in 0..c {
            for r in 0..2 * h {
                let row = &xv[ch * h * w + (r / 2) * w..ch * h * w + (r / 2) * w + w];
                for &v in row {
                    out.push(v);
                    out.push(v);
                }
            }
        }
        self.push(out, vec![c, 2 * h, 2 * w], Op::Upsample2(x))
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let first = self.shape(xs[0]).to_vec();
        let mut channels = 0;
        let mut out = Vec::new();
        for &x in xs {
            let s = self.shape(x);
            assert_eq!(&s[1..], &first[1..], "concat spatial dims");
            channels += s[0];
            out.extend_from_slice(self.value(x));
        }
        self.push(out, vec![channels, first[1], first[2]], Op::Concat(xs.to_vec()))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let plane = (s[1] * s[2]) as f64;
        self.global_pool(x, plane)
    }

    /// Per-channel spatial sum divided by `divisor`.
    pub fn global_pool(&mut self, x: Var, divisor: f64) -> Var {
        let s = self.shape(x).to_vec();
        let plane = s[1] * s[2];
        let out = self
            .value(x)
            .chunks_exact(plane)
            .map(|p| p.iter().sum::<f64>() / divisor)
            .collect();
        self.push(out, vec![s[0]], Op::GlobalPool { x, divisor })
    }

    /// Dense layer with `{prefix}.weight` (`[out, in]`) and `{prefix}.bias`.
    pub fn linear(&mut self, x: Var, prefix: &str) -> Var {
        let w = self.param(&format!("{prefix}.weight"));
        let b = self.param(&format!("{prefix}.bias"));
        let ws = self.shape(w).to_vec();
        let (n_out, n_in) = (ws[0], ws[1]);
        assert_eq!(self.shape(x).iter().product::<usize>(), n_in, "linear input size");
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let out = (0..n_out)
            .map(|o| {
                bv[o]
                    + wv[o * n_in..(o + 1) * n_in]
                        .iter()
                        .zip(xv)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        self.push(out, vec![n_out], Op::Linear { x, w, b })
    }

    /// Back-propagates `grad_out` (d loss / d `out`) and adds parameter
    /// gradients into `grads`.
    pub fn backward(&self, out: Var, grad_out: &[f64], grads: &mut ParamGrads) {
        assert!(self.record, "backward on an inference graph");
        assert_eq!(grad_out.len(), self.value(out).len(), "output gradient size");
        let mut node_grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        node_grads[out.0] = Some(grad_out.to_vec());

        for idx in (0..=out.0).rev() {
            let Some(g) = node_grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    for (acc, v) in grads.grads[*id].iter_mut().zip(&g) {
                        *acc += v;
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let gx = g
                        .iter()
                        .zip(xv)
                        .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                        .collect();
                    accumulate(&mut node_grads, *x, gx);
                }
                Op::MaxPool2 { x, argmax } => {
                    let mut gx = vec![0.0; self.value(*x).len()];
                    for (gi, &src) in g.iter().zip(argmax) {
                        gx[src as usize] += gi;
                    }
                    accumulate(&mut node_grads, *x, gx);
                }
                Op::Upsample2(x) => {
                    let s = self.shape(*x);
                    let (c, h, w) = (s[0], s[1], s[2]);
                    let mut gx = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for r in 0..2 * h {
                            for col in 0..2 * w {
                                gx[ch * h * w + (r / 2) * w + col / 2] +=
                                    g[ch * 4 * h * w + r * 2 * w + col];
                            }
                        }
                    }
                    accumulate(&mut node_grads, *x, gx);
                }
                Op::Concat(xs) => {
                    let mut offset = 0;
                    for &x in xs {
                        let len = self.value(x).len();
                        accumulate(&mut node_grads, x, g[offset..offset + len].to_vec());
                        offset += len;
                    }
                }
                Op::GlobalPool { x, divisor } => {
                    let s = self.shape(*x);
                    let plane = s[1] * s[2];
                    let mut gx = Vec::with_capacity(s[0] * plane);
                    for &gi in &g {
                        gx.extend(std::iter::repeat_n(gi / divisor, plane));
                    }
                    accumulate(&mut node_grads, *x, gx);
                }
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let n_in = xv.len();
                    let mut gx = vec![0.0; n_in];
                    let mut gw = vec![0.0; wv.len()];
                    for (o, &go) in g.iter().enumerate() {
                        for i in 0..n_in {
                            gx[i] += go * wv[o * n_in + i];
                            gw[o * n_in + i] = go * xv[i];
                        }
                    }
                    accumulate(&mut node_grads, *x, gx);
                    accumulate(&mut node_grads, *w, gw);
                    accumulate(&mut node_grads, *b, g.clone());
                }
                Op::Conv2d { x, w, b, k } => {
                    let (gx, gw, gb) = self.conv_backward(*x, *w, *k, &g);
                    if !matches!(self.nodes[x.0].op, Op::Input) {
                        accumulate(&mut node_grads, *x, gx);
                    }
                    accumulate(&mut node_grads, *w, gw);
                    accumulate(&mut node_grads, *b, gb);
                }
            }
        }
    }

    fn conv_backward(&self, x: Var, w: Var, k: usize, g: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let xs = self.shape(x);
        let (c_in, h, wd) = (xs[0], xs[1], xs[2]);
        let c_out = self.shape(w)[0];
        let pad = k / 2;
        let plane = h * wd;
        let xv = self.value(x);
        let wv = self.value(w);
        let skip_input = matches!(self.nodes[x.0].op, Op::Input);
        let mut gx = vec![0.0; if skip_input { 0 } else { c_in * plane }];
        let mut gw = vec![0.0; wv.len()];
        let mut gb = vec![0.0; c_out];
        for co in 0..c_out {
            let go = &g[co * plane..(co + 1) * plane];
            gb[co] = go.iter().sum();
            for ci in 0..c_in {
                let inp = &xv[ci * plane..(ci + 1) * plane];
                for ky in 0..k {
                    for kx in 0..k {
                        let wi = ((co * c_in + ci) * k + ky) * k + kx;
                        let wt = wv[wi];
                        let (c_lo, c_hi) = col_range(kx, pad, wd);
                        let mut acc = 0.0;
                        for y in row_range(ky, pad, h) {
                            let iy = y + ky - pad;
                            let src_lo = iy * wd + c_lo + kx - pad;
                            let src_hi = iy * wd + c_hi + kx - pad;
                            let gsl = &go[y * wd + c_lo..y * wd + c_hi];
                            acc += gsl
                                .iter()
                                .zip(&inp[src_lo..src_hi])
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                            if !skip_input {
                                let dst = &mut gx[ci * plane + src_lo..ci * plane + src_hi];
                                for (d, s) in dst.iter_mut().zip(gsl) {
                                    *d += wt * s;
                                }
                            }
                        }
                        gw[wi] += acc;
                    }
                }
            }
        }
        (gx, gw, gb)
    }
}

/// Output rows `y` for which input row `y + ky - pad` is inside `[0, h)`.
#[inline]
fn row_range(ky: usize, pad: usize, h: usize) -> std::ops::Range<usize> {
    let lo = pad.saturating_sub(ky);
    let hi = (h + pad).saturating_sub(ky).min(h);
    lo..hi.max(lo)
}

#[inline]
fn col_range(kx: usize, pad: usize, w: usize) -> (usize, usize) {
    let r = row_range(kx, pad, w);
    (r.start, r.end)
}

fn accumulate(node_grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut node_grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Tiny two-branch net touching every operator; returns a scalar loss
    /// `Σ out · probe` so finite differences are easy.
    fn build(store: &ParamStore, x: &[f64]) -> (f64, Vec<f64>, ParamGrads) {
        let mut g = Graph::new(store);
        let inp = g.input(x.to_vec(), vec![2, 4, 4]);
        let a = g.conv(inp, "c1");
        let a = g.relu(a);
        let p = g.max_pool2(a);
        let p = g.conv(p, "c2");
        let u = g.upsample2(p);
        let cat = g.concat(&[a, u]);
        let y = g.conv(cat, "c3");
        let gap = g.global_avg_pool(y);
        let out = g.linear(gap, "fc");
        let probe: Vec<f64> = (0..g.value(out).len()).map(|i| 0.3 + i as f64).collect();
        let loss: f64 = g.value(out).iter().zip(&probe).map(|(a, b)| a * b).sum();
        let mut grads = store.zero_grads();
        g.backward(out, &probe, &mut grads);
        (loss, g.value(out).to_vec(), grads)
    }

    fn store() -> ParamStore {
        let mut r = rng::from_seed(42);
        let mut s = ParamStore::new();
        s.add_conv("c1", 2, 3, 3, &mut r);
        s.add_conv("c2", 3, 2, 3, &mut r);
        s.add_conv("c3", 5, 3, 1, &mut r);
        s.add_linear("fc", 3, 2, &mut r);
        // nonzero biases so ReLU kinks are not all at the same place
        for p in s.iter_mut() {
            if p.name.ends_with("bias") {
                for (i, v) in p.value.iter_mut().enumerate() {
                    *v = 0.05 * (i as f64 + 1.0);
                }
            }
        }
        s
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let x: Vec<f64> = (0..32).map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.3).collect();
        let base = store();
        let (_, _, grads) = build(&base, &x);
        let h = 1e-5;
        for (pid, p) in base.iter().enumerate() {
            for i in 0..p.value.len() {
                let mut plus = base.clone();
                plus.get_mut(&p.name).unwrap().value[i] += h;
                let mut minus = base.clone();
                minus.get_mut(&p.name).unwrap().value[i] -= h;
                let fd = (build(&plus, &x).0 - build(&minus, &x).0) / (2.0 * h);
                let an = grads.grads[pid][i];
                let scale = fd.abs().max(an.abs()).max(1e-6);
                assert!((fd - an).abs() / scale < 1e-4, "{}[{i}]: fd {fd} vs analytic {an}", p.name);
            }
        }
    }

    #[test]
    fn inference_graph_matches_recording_graph() {
        let s = store();
        let x: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
        let run = |mut g: Graph| {
            let inp = g.input(x.clone(), vec![2, 4, 4]);
            let a = g.conv(inp, "c1");
            let a = g.relu(a);
            let y = g.conv(a, "c2");
            g.value(y).to_vec()
        };
        assert_eq!(run(Graph::new(&s)), run(Graph::inference(&s)));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut r = rng::from_seed(1);
        let mut s = ParamStore::new();
        s.add_conv("c", 2, 1, 3, &mut r);
        let x: Vec<f64> = (0..2 * 5 * 4).map(|i| i as f64 * 0.1).collect();
        let mut g = Graph::new(&s);
        let inp = g.input(x.clone(), vec![2, 5, 4]);
        let out = g.conv(inp, "c");
        let w = &s.get("c.weight").unwrap().value;
        for r in 0..5i64 {
            for c in 0..4i64 {
                let mut acc = 0.0;
                for ci in 0..2 {
                    for ky in 0..3i64 {
                        for kx in 0..3i64 {
                            let (iy, ix) = (r + ky - 1, c + kx - 1);
                            if (0..5).contains(&iy) && (0..4).contains(&ix) {
                                acc += w[(ci * 3 + ky as usize) * 3 + kx as usize]
                                    * x[ci * 20 + (iy * 4 + ix) as usize];
                            }
                        }
                    }
                }
                let got = g.value(out)[(r * 4 + c) as usize];
                assert!((got - acc).abs() < 1e-12);
            }
        }
    }
}
