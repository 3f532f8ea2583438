//! Define-by-run reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation as it executes (values are computed
//! eagerly) and [`Graph::backward`] walks the tape in reverse, producing
//! exact gradients for every leaf created with `requires_grad`. The op set
//! is exactly what the segmentation networks and their losses need:
//! padded convolution, ReLU, 2x2 max-pooling, nearest-neighbour upsampling,
//! channel concatenation and selection, channel softmax, weighted
//! cross-entropy sums, and a max-projection Dice reduction.
//!
//! Convolutions run through `matrixmultiply` GEMM kernels. In
//! [`Precision::F32`] mode the GEMM operands round through f32 (fast path
//! for training); [`Precision::F64`] keeps every operation in f64 and is
//! the mode gradient checking requires. Both paths are single-threaded and
//! bit-deterministic.

use crate::tensor::Tensor;

/// Probabilities are clamped to this range before any logarithm.
pub const PROB_CLAMP_LO: f64 = 1e-7;
pub const PROB_CLAMP_HI: f64 = 1.0 - 1e-7;

/// Smoothing constant added to Dice numerators and denominators.
pub const DICE_SMOOTH: f64 = 1e-6;

/// Floating-point width used by convolution GEMM kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    /// f32 GEMM operands; everything else stays f64.
    #[default]
    F32,
    /// Full f64 compute, required for finite-difference gradient checks.
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Axis a probability map is max-projected onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjAxis {
    /// Collapse rows; output has one entry per column (length W).
    Columns,
    /// Collapse columns; output has one entry per row (length H).
    Rows,
}

enum Op {
    Leaf,
    Conv {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        ksize: usize,
    },
    Relu {
        input: NodeId,
    },
    MaxPool2 {
        input: NodeId,
        argmax: Vec<u32>,
    },
    Upsample2 {
        input: NodeId,
    },
    ConcatCh {
        a: NodeId,
        b: NodeId,
    },
    SoftmaxCh {
        input: NodeId,
    },
    SelectCh {
        input: NodeId,
        channel: usize,
    },
    /// Scalar -sum(w * ln(clamp(p))); `weights` is a constant tensor.
    CeSum {
        input: NodeId,
        weights: Tensor,
    },
    /// Mean over batch items of the two-class soft Dice between the
    /// max-projection of a probability field and a constant binary target.
    ProjDice {
        input: NodeId,
        axis: ProjAxis,
        targets: Vec<Vec<f64>>,
        scale: f64,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph {
    precision: Precision,
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new(precision: Precision) -> Self {
        Self {
            precision,
            nodes: Vec::new(),
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    /// Stride-1 convolution with kernel `ksize` (odd) and same-padding,
    /// plus per-channel bias. Input [N,Cin,H,W], weight [Cout,Cin,k,k],
    /// bias [Cout] -> output [N,Cout,H,W].
    pub fn conv(&mut self, input: NodeId, weight: NodeId, bias: NodeId, ksize: usize) -> NodeId {
        let in_shape = self.value(input).shape().to_vec();
        let w_shape = self.value(weight).shape().to_vec();
        assert_eq!(in_shape.len(), 4, "conv input must be [N,C,H,W]");
        assert_eq!(
            w_shape,
            vec![w_shape[0], in_shape[1], ksize, ksize],
            "conv weight shape mismatch"
        );
        assert_eq!(self.value(bias).shape(), &[w_shape[0]]);
        let (n, cin, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
        let cout = w_shape[0];
        let mut out = Tensor::zeros(&[n, cout, h, w]);
        let kk = cin * ksize * ksize;
        let hw = h * w;
        match self.precision {
            Precision::F64 => {
                let mut col = vec![0.0f64; kk * hw];
                for item in 0..n {
                    im2col_f64(
                        &self.value(input).data()[item * cin * hw..(item + 1) * cin * hw],
                        cin,
                        h,
                        w,
                        ksize,
                        &mut col,
                    );
                    let c_out = &mut out.data_mut()[item * cout * hw..(item + 1) * cout * hw];
                    unsafe {
                        matrixmultiply::dgemm(
                            cout,
                            kk,
                            hw,
                            1.0,
                            self.nodes[weight.0].value.data().as_ptr(),
                            kk as isize,
                            1,
                            col.as_ptr(),
                            hw as isize,
                            1,
                            0.0,
                            c_out.as_mut_ptr(),
                            hw as isize,
                            1,
                        );
                    }
                }
            }
            Precision::F32 => {
                let w32: Vec<f32> = self.value(weight).data().iter().map(|&v| v as f32).collect();
                let mut col = vec![0.0f32; kk * hw];
                let mut out32 = vec![0.0f32; cout * hw];
                for item in 0..n {
                    im2col_f32(
                        &self.value(input).data()[item * cin * hw..(item + 1) * cin * hw],
                        cin,
                        h,
                        w,
                        ksize,
                        &mut col,
                    );
                    unsafe {
                        matrixmultiply::sgemm(
                            cout,
                            kk,
                            hw,
                            1.0,
                            w32.as_ptr(),
                            kk as isize,
                            1,
                            col.as_ptr(),
                            hw as isize,
                            1,
                            0.0,
                            out32.as_mut_ptr(),
                            hw as isize,
                            1,
                        );
                    }
                    let c_out = &mut out.data_mut()[item * cout * hw..(item + 1) * cout * hw];
                    for (o, &v) in c_out.iter_mut().zip(out32.iter()) {
                        *o = v as f64;
                    }
                }
            }
        }
        // Bias add in f64 on either path.
        {
            let bias_vals = self.value(bias).data().to_vec();
            let data = out.data_mut();
            for item in 0..n {
                for co in 0..cout {
                    let b = bias_vals[co];
                    let base = (item * cout + co) * hw;
                    for v in &mut data[base..base + hw] {
                        *v += b;
                    }
                }
            }
        }
        let rg = self.needs_grad(input) || self.needs_grad(weight) || self.needs_grad(bias);
        self.push(
            out,
            Op::Conv {
                input,
                weight,
                bias,
                ksize,
            },
            rg,
        )
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let mut out = self.value(input).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let rg = self.needs_grad(input);
        self.push(out, Op::Relu { input }, rg)
    }

    /// 2x2 max-pooling with stride 2. H and W must be even. Ties resolve
    /// to the first maximum in row-major window order.
    pub fn max_pool2(&mut self, input: NodeId) -> NodeId {
        let s = self.value(input).shape().to_vec();
        assert_eq!(s.len(), 4);
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even H, W");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = vec![0u32; n * c * oh * ow];
        let src = self.value(input).data();
        {
            let dst = out.data_mut();
            for nc in 0..n * c {
                let in_base = nc * h * w;
                let out_base = nc * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best_idx = in_base + (2 * oy) * w + 2 * ox;
                        let mut best = src[best_idx];
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let idx = in_base + (2 * oy + dy) * w + 2 * ox + dx;
                            if src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                        dst[out_base + oy * ow + ox] = best;
                        argmax[out_base + oy * ow + ox] = best_idx as u32;
                    }
                }
            }
        }
        let rg = self.needs_grad(input);
        self.push(out, Op::MaxPool2 { input, argmax }, rg)
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, input: NodeId) -> NodeId {
        let s = self.value(input).shape().to_vec();
        assert_eq!(s.len(), 4);
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let src = self.value(input).data();
        {
            let dst = out.data_mut();
            for nc in 0..n * c {
                for oy in 0..oh {
                    let src_row = nc * h * w + (oy / 2) * w;
                    let dst_row = nc * oh * ow + oy * ow;
                    for ox in 0..ow {
                        dst[dst_row + ox] = src[src_row + ox / 2];
                    }
                }
            }
        }
        let rg = self.needs_grad(input);
        self.push(out, Op::Upsample2 { input }, rg)
    }

    /// Concatenate along the channel axis.
    pub fn concat_ch(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        assert_eq!(sa.len(), 4);
        assert!(sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3]);
        let (n, ca, cb, h, w) = (sa[0], sa[1], sb[1], sa[2], sa[3]);
        let mut out = Tensor::zeros(&[n, ca + cb, h, w]);
        let hw = h * w;
        {
            let dst = out.data_mut();
            let da = self.nodes[a.0].value.data();
            let db = self.nodes[b.0].value.data();
            for item in 0..n {
                let dst_base = item * (ca + cb) * hw;
                dst[dst_base..dst_base + ca * hw]
                    .copy_from_slice(&da[item * ca * hw..(item + 1) * ca * hw]);
                dst[dst_base + ca * hw..dst_base + (ca + cb) * hw]
                    .copy_from_slice(&db[item * cb * hw..(item + 1) * cb * hw]);
            }
        }
        let rg = self.needs_grad(a) || self.needs_grad(b);
        self.push(out, Op::ConcatCh { a, b }, rg)
    }

    /// Per-pixel softmax over the channel axis.
    pub fn softmax_ch(&mut self, input: NodeId) -> NodeId {
        let s = self.value(input).shape().to_vec();
        assert_eq!(s.len(), 4);
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let hw = h * w;
        let mut out = Tensor::zeros(&s);
        let src = self.value(input).data();
        {
            let dst = out.data_mut();
            for item in 0..n {
                let base = item * c * hw;
                for px in 0..hw {
                    let mut m = f64::NEG_INFINITY;
                    for ch in 0..c {
                        m = m.max(src[base + ch * hw + px]);
                    }
                    let mut sum = 0.0;
                    for ch in 0..c {
                        let e = (src[base + ch * hw + px] - m).exp();
                        dst[base + ch * hw + px] = e;
                        sum += e;
                    }
                    for ch in 0..c {
                        dst[base + ch * hw + px] /= sum;
                    }
                }
            }
        }
        let rg = self.needs_grad(input);
        self.push(out, Op::SoftmaxCh { input }, rg)
    }

    /// Extract one channel: [N,C,H,W] -> [N,H,W].
    pub fn select_ch(&mut self, input: NodeId, channel: usize) -> NodeId {
        let s = self.value(input).shape().to_vec();
        assert_eq!(s.len(), 4);
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        assert!(channel < c);
        let hw = h * w;
        let mut out = Tensor::zeros(&[n, h, w]);
        let src = self.value(input).data();
        {
            let dst = out.data_mut();
            for item in 0..n {
                let src_base = (item * c + channel) * hw;
                dst[item * hw..(item + 1) * hw].copy_from_slice(&src[src_base..src_base + hw]);
            }
        }
        let rg = self.needs_grad(input);
        self.push(out, Op::SelectCh { input, channel }, rg)
    }

    /// Scalar loss -sum(weights * ln(clamp(p))). `weights` must match the
    /// input shape; zero entries skip their pixel entirely.
    pub fn ce_sum(&mut self, input: NodeId, weights: Tensor) -> NodeId {
        assert_eq!(self.value(input).shape(), weights.shape());
        let mut acc = 0.0;
        for (&p, &w) in self.value(input).data().iter().zip(weights.data()) {
            if w != 0.0 {
                acc -= w * p.clamp(PROB_CLAMP_LO, PROB_CLAMP_HI).ln();
            }
        }
        let rg = self.needs_grad(input);
        self.push(Tensor::scalar(acc), Op::CeSum { input, weights }, rg)
    }

    /// Mean over batch items of the two-class soft Dice loss between the
    /// max-projection of `input` ([N,H,W]) along `axis` and the per-item
    /// binary `targets`. `scale` multiplies the final mean.
    pub fn proj_dice(
        &mut self,
        input: NodeId,
        axis: ProjAxis,
        targets: Vec<Vec<f64>>,
        scale: f64,
    ) -> NodeId {
        let s = self.value(input).shape().to_vec();
        assert_eq!(s.len(), 3, "projection input must be [N,H,W]");
        let (n, h, w) = (s[0], s[1], s[2]);
        assert_eq!(targets.len(), n);
        let plen = match axis {
            ProjAxis::Columns => w,
            ProjAxis::Rows => h,
        };
        for t in &targets {
            assert_eq!(t.len(), plen);
        }
        let mut total = 0.0;
        for item in 0..n {
            let proj = project_max(self.value(input).data(), item, h, w, axis);
            total += dice_two_class(&proj, &targets[item]);
        }
        let value = scale * total / n as f64;
        let rg = self.needs_grad(input);
        self.push(
            Tensor::scalar(value),
            Op::ProjDice {
                input,
                axis,
                targets,
                scale,
            },
            rg,
        )
    }

    /// Elementwise sum of two same-shape nodes.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o += v;
        }
        let rg = self.needs_grad(a) || self.needs_grad(b);
        self.push(out, Op::Add { a, b }, rg)
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let mut out = self.value(input).clone();
        for v in out.data_mut() {
            *v *= factor;
        }
        let rg = self.needs_grad(input);
        self.push(out, Op::Scale { input, factor }, rg)
    }

    /// Hash of every data-dependent routing decision taken while this
    /// graph was built: ReLU activation signs, max-pool argmax choices,
    /// projection argmax choices and clamp saturation. Two evaluations
    /// with equal signatures lie in the same smooth region of the
    /// network, where finite differences are a valid derivative probe.
    pub fn routing_signature(&self) -> u64 {
        fn feed(h: &mut u64, byte: u8) {
            *h ^= byte as u64;
            *h = h.wrapping_mul(0x100000001b3);
        }
        fn feed_u64(h: &mut u64, v: u64) {
            for b in v.to_le_bytes() {
                feed(h, b);
            }
        }
        fn feed_bits(h: &mut u64, bits: impl Iterator<Item = bool>) {
            let mut acc = 0u8;
            let mut nbits = 0u8;
            for b in bits {
                acc = (acc << 1) | b as u8;
                nbits += 1;
                if nbits == 8 {
                    feed(h, acc);
                    acc = 0;
                    nbits = 0;
                }
            }
            feed(h, acc);
        }

        let mut h: u64 = 0xcbf29ce484222325;
        for node in &self.nodes {
            match &node.op {
                Op::Relu { .. } => {
                    feed_bits(&mut h, node.value.data().iter().map(|&v| v > 0.0));
                }
                Op::MaxPool2 { argmax, .. } => {
                    for &a in argmax {
                        feed_u64(&mut h, a as u64);
                    }
                }
                Op::ProjDice { input, axis, .. } => {
                    let s = self.nodes[input.0].value.shape();
                    let (n, hh, ww) = (s[0], s[1], s[2]);
                    let plen = match axis {
                        ProjAxis::Columns => ww,
                        ProjAxis::Rows => hh,
                    };
                    for item in 0..n {
                        for j in 0..plen {
                            let idx = argmax_index(
                                self.nodes[input.0].value.data(),
                                item,
                                hh,
                                ww,
                                *axis,
                                j,
                            );
                            feed_u64(&mut h, idx as u64);
                        }
                    }
                }
                Op::CeSum { input, weights } => {
                    feed_bits(
                        &mut h,
                        self.nodes[input.0]
                            .value
                            .data()
                            .iter()
                            .zip(weights.data())
                            .map(|(&p, &w)| {
                                w != 0.0 && !(p > PROB_CLAMP_LO && p < PROB_CLAMP_HI)
                            }),
                    );
                }
                _ => {}
            }
        }
        h
    }

    /// Reverse sweep from the scalar node `loss`. Returns one gradient slot
    /// per node; only nodes reachable from `loss` that require gradients
    /// are populated.
    pub fn backward(&mut self, loss: NodeId) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let gout = grads[i].take().expect("checked above");
            self.backward_node(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        Gradients { slots: grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, delta: &Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => {
                for (o, &v) in g.data_mut().iter_mut().zip(delta.data()) {
                    *o += v;
                }
            }
            slot @ None => *slot = Some(delta.clone()),
        }
    }

    fn backward_node(&self, i: usize, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv {
                input,
                weight,
                bias,
                ksize,
            } => self.backward_conv(*input, *weight, *bias, *ksize, gout, grads),
            Op::Relu { input } => {
                let mut g = gout.clone();
                for (gv, &ov) in g.data_mut().iter_mut().zip(self.nodes[i].value.data()) {
                    if ov <= 0.0 {
                        *gv = 0.0;
                    }
                }
                self.accumulate(grads, *input, &g);
            }
            Op::MaxPool2 { input, argmax } => {
                let mut g = Tensor::zeros(self.value(*input).shape());
                {
                    let gd = g.data_mut();
                    for (out_idx, &in_idx) in argmax.iter().enumerate() {
                        gd[in_idx as usize] += gout.data()[out_idx];
                    }
                }
                self.accumulate(grads, *input, &g);
            }
            Op::Upsample2 { input } => {
                let s = self.value(*input).shape();
                let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
                let (oh, ow) = (2 * h, 2 * w);
                let mut g = Tensor::zeros(s);
                {
                    let gd = g.data_mut();
                    for nc in 0..n * c {
                        for oy in 0..oh {
                            let dst_row = nc * h * w + (oy / 2) * w;
                            let src_row = nc * oh * ow + oy * ow;
                            for ox in 0..ow {
                                gd[dst_row + ox / 2] += gout.data()[src_row + ox];
                            }
                        }
                    }
                }
                self.accumulate(grads, *input, &g);
            }
            Op::ConcatCh { a, b } => {
                let sa = self.value(*a).shape();
                let sb = self.value(*b).shape();
                let (n, ca, cb, hw) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
                let mut ga = Tensor::zeros(sa);
                let mut gb = Tensor::zeros(sb);
                for item in 0..n {
                    let base = item * (ca + cb) * hw;
                    ga.data_mut()[item * ca * hw..(item + 1) * ca * hw]
                        .copy_from_slice(&gout.data()[base..base + ca * hw]);
                    gb.data_mut()[item * cb * hw..(item + 1) * cb * hw]
                        .copy_from_slice(&gout.data()[base + ca * hw..base + (ca + cb) * hw]);
                }
                self.accumulate(grads, *a, &ga);
                self.accumulate(grads, *b, &gb);
            }
            Op::SoftmaxCh { input } => {
                let s = self.value(*input).shape();
                let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                let p = self.nodes[i].value.data();
                let mut g = Tensor::zeros(s);
                {
                    let gd = g.data_mut();
                    for item in 0..n {
                        let base = item * c * hw;
                        for px in 0..hw {
                            let mut dot = 0.0;
                            for ch in 0..c {
                                let idx = base + ch * hw + px;
                                dot += p[idx] * gout.data()[idx];
                            }
                            for ch in 0..c {
                                let idx = base + ch * hw + px;
                                gd[idx] = p[idx] * (gout.data()[idx] - dot);
                            }
                        }
                    }
                }
                self.accumulate(grads, *input, &g);
            }
            Op::SelectCh { input, channel } => {
                let s = self.value(*input).shape();
                let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                let mut g = Tensor::zeros(s);
                for item in 0..n {
                    let dst = (item * c + channel) * hw;
                    g.data_mut()[dst..dst + hw]
                        .copy_from_slice(&gout.data()[item * hw..(item + 1) * hw]);
                }
                self.accumulate(grads, *input, &g);
            }
            Op::CeSum { input, weights } => {
                let gs = gout.item();
                let mut g = Tensor::zeros(self.value(*input).shape());
                {
                    let gd = g.data_mut();
                    for (idx, (&p, &w)) in self
                        .value(*input)
                        .data()
                        .iter()
                        .zip(weights.data())
                        .enumerate()
                    {
                        if w != 0.0 && p > PROB_CLAMP_LO && p < PROB_CLAMP_HI {
                            gd[idx] = -gs * w / p;
                        }
                    }
                }
                self.accumulate(grads, *input, &g);
            }
            Op::ProjDice {
                input,
                axis,
                targets,
                scale,
            } => {
                let s = self.value(*input).shape();
                let (n, h, w) = (s[0], s[1], s[2]);
                let gs = gout.item() * scale / n as f64;
                let src = self.value(*input).data();
                let mut g = Tensor::zeros(s);
                for item in 0..n {
                    let proj = project_max(src, item, h, w, *axis);
                    let dproj = dice_two_class_grad(&proj, &targets[item]);
                    let gd = g.data_mut();
                    // Route each projection gradient to the first argmax.
                    for (j, &dv) in dproj.iter().enumerate() {
                        let idx = argmax_index(src, item, h, w, *axis, j);
                        gd[idx] += gs * dv;
                    }
                }
                self.accumulate(grads, *input, &g);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, gout);
                self.accumulate(grads, *b, gout);
            }
            Op::Scale { input, factor } => {
                let mut g = gout.clone();
                for v in g.data_mut() {
                    *v *= factor;
                }
                self.accumulate(grads, *input, &g);
            }
        }
    }

    fn backward_conv(
        &self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        ksize: usize,
        gout: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let in_shape = self.value(input).shape().to_vec();
        let (n, cin, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
        let cout = self.value(weight).shape()[0];
        let kk = cin * ksize * ksize;
        let hw = h * w;

        if self.needs_grad(bias) {
            let mut gb = Tensor::zeros(&[cout]);
            {
                let gd = gb.data_mut();
                for item in 0..n {
                    for co in 0..cout {
                        let base = (item * cout + co) * hw;
                        let mut acc = 0.0;
                        for &v in &gout.data()[base..base + hw] {
                            acc += v;
                        }
                        gd[co] += acc;
                    }
                }
            }
            self.accumulate(grads, bias, &gb);
        }

        let want_weight = self.needs_grad(weight);
        let want_input = self.needs_grad(input);
        if !want_weight && !want_input {
            return;
        }

        match self.precision {
            Precision::F64 => {
                let mut col = vec![0.0f64; kk * hw];
                let mut gw = if want_weight {
                    Some(Tensor::zeros(self.value(weight).shape()))
                } else {
                    None
                };
                let mut gin = if want_input {
                    Some(Tensor::zeros(&in_shape))
                } else {
                    None
                };
                let mut gcol = vec![0.0f64; kk * hw];
                for item in 0..n {
                    let go = &gout.data()[item * cout * hw..(item + 1) * cout * hw];
                    if let Some(gw) = &mut gw {
                        im2col_f64(
                            &self.value(input).data()[item * cin * hw..(item + 1) * cin * hw],
                            cin,
                            h,
                            w,
                            ksize,
                            &mut col,
                        );
                        // gw += gout_n (Cout x HW) * col_n^T (HW x KK)
                        unsafe {
                            matrixmultiply::dgemm(
                                cout,
                                hw,
                                kk,
                                1.0,
                                go.as_ptr(),
                                hw as isize,
                                1,
                                col.as_ptr(),
                                1,
                                hw as isize,
                                1.0,
                                gw.data_mut().as_mut_ptr(),
                                kk as isize,
                                1,
                            );
                        }
                    }
                    if let Some(gin) = &mut gin {
                        // gcol = W^T (KK x Cout) * gout_n (Cout x HW)
                        unsafe {
                            matrixmultiply::dgemm(
                                kk,
                                cout,
                                hw,
                                1.0,
                                self.value(weight).data().as_ptr(),
                                1,
                                kk as isize,
                                go.as_ptr(),
                                hw as isize,
                                1,
                                0.0,
                                gcol.as_mut_ptr(),
                                hw as isize,
                                1,
                            );
                        }
                        col2im_f64(
                            &gcol,
                            cin,
                            h,
                            w,
                            ksize,
                            &mut gin.data_mut()[item * cin * hw..(item + 1) * cin * hw],
                        );
                    }
                }
                if let Some(gw) = gw {
                    self.accumulate(grads, weight, &gw);
                }
                if let Some(gin) = gin {
                    self.accumulate(grads, input, &gin);
                }
            }
            Precision::F32 => {
                let w32: Vec<f32> = self.value(weight).data().iter().map(|&v| v as f32).collect();
                let mut col = vec![0.0f32; kk * hw];
                let mut go32 = vec![0.0f32; cout * hw];
                let mut gw32 = if want_weight {
                    Some(vec![0.0f32; cout * kk])
                } else {
                    None
                };
                let mut gin = if want_input {
                    Some(Tensor::zeros(&in_shape))
                } else {
                    None
                };
                let mut gcol = vec![0.0f32; kk * hw];
                for item in 0..n {
                    let go = &gout.data()[item * cout * hw..(item + 1) * cout * hw];
                    for (d, &sv) in go32.iter_mut().zip(go.iter()) {
                        *d = sv as f32;
                    }
                    if let Some(gw32) = &mut gw32 {
                        im2col_f32(
                            &self.value(input).data()[item * cin * hw..(item + 1) * cin * hw],
                            cin,
                            h,
                            w,
                            ksize,
                            &mut col,
                        );
                        unsafe {
                            matrixmultiply::sgemm(
                                cout,
                                hw,
                                kk,
                                1.0,
                                go32.as_ptr(),
                                hw as isize,
                                1,
                                col.as_ptr(),
                                1,
                                hw as isize,
                                1.0,
                                gw32.as_mut_ptr(),
                                kk as isize,
                                1,
                            );
                        }
                    }
                    if let Some(gin) = &mut gin {
                        unsafe {
                            matrixmultiply::sgemm(
                                kk,
                                cout,
                                hw,
                                1.0,
                                w32.as_ptr(),
                                1,
                                kk as isize,
                                go32.as_ptr(),
                                hw as isize,
                                1,
                                0.0,
                                gcol.as_mut_ptr(),
                                hw as isize,
                                1,
                            );
                        }
                        col2im_f32(
                            &gcol,
                            cin,
                            h,
                            w,
                            ksize,
                            &mut gin.data_mut()[item * cin * hw..(item + 1) * cin * hw],
                        );
                    }
                }
                if let Some(gw32) = gw32 {
                    let mut gw = Tensor::zeros(self.value(weight).shape());
                    for (d, &sv) in gw.data_mut().iter_mut().zip(gw32.iter()) {
                        *d = sv as f64;
                    }
                    self.accumulate(grads, weight, &gw);
                }
                if let Some(gin) = gin {
                    self.accumulate(grads, input, &gin);
                }
            }
        }
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node id.
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.slots[id.0].as_ref()
    }

    /// Gradient for a leaf, or zeros when the loss does not touch it.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor {
        match self.slots[id.0].as_ref() {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

fn im2col_f64(input: &[f64], cin: usize, h: usize, w: usize, ksize: usize, col: &mut [f64]) {
    let pad = ksize / 2;
    let hw = h * w;
    let mut row = 0usize;
    for ci in 0..cin {
        for ky in 0..ksize {
            for kx in 0..ksize {
                let dst = &mut col[row * hw..(row + 1) * hw];
                row += 1;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    let dst_row = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst_row.fill(0.0);
                        continue;
                    }
                    let src_row = &input[ci * hw + sy as usize * w..ci * hw + sy as usize * w + w];
                    let shift = kx as isize - pad as isize;
                    for (x, d) in dst_row.iter_mut().enumerate() {
                        let sx = x as isize + shift;
                        *d = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            src_row[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn im2col_f32(input: &[f64], cin: usize, h: usize, w: usize, ksize: usize, col: &mut [f32]) {
    let pad = ksize / 2;
    let hw = h * w;
    let mut row = 0usize;
    for ci in 0..cin {
        for ky in 0..ksize {
            for kx in 0..ksize {
                let dst = &mut col[row * hw..(row + 1) * hw];
                row += 1;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    let dst_row = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst_row.fill(0.0);
                        continue;
                    }
                    let src_row = &input[ci * hw + sy as usize * w..ci * hw + sy as usize * w + w];
                    let shift = kx as isize - pad as isize;
                    for (x, d) in dst_row.iter_mut().enumerate() {
                        let sx = x as isize + shift;
                        *d = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            src_row[sx as usize] as f32
                        };
                    }
                }
            }
        }
    }
}

fn col2im_f64(col: &[f64], cin: usize, h: usize, w: usize, ksize: usize, out: &mut [f64]) {
    let pad = ksize / 2;
    let hw = h * w;
    let mut row = 0usize;
    for ci in 0..cin {
        for ky in 0..ksize {
            for kx in 0..ksize {
                let src = &col[row * hw..(row + 1) * hw];
                row += 1;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let out_row = &mut out[ci * hw + sy as usize * w..ci * hw + sy as usize * w + w];
                    let shift = kx as isize - pad as isize;
                    for (x, &v) in src[y * w..(y + 1) * w].iter().enumerate() {
                        let sx = x as isize + shift;
                        if sx >= 0 && sx < w as isize {
                            out_row[sx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn col2im_f32(col: &[f32], cin: usize, h: usize, w: usize, ksize: usize, out: &mut [f64]) {
    let pad = ksize / 2;
    let hw = h * w;
    let mut row = 0usize;
    for ci in 0..cin {
        for ky in 0..ksize {
            for kx in 0..ksize {
                let src = &col[row * hw..(row + 1) * hw];
                row += 1;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let out_row = &mut out[ci * hw + sy as usize * w..ci * hw + sy as usize * w + w];
                    let shift = kx as isize - pad as isize;
                    for (x, &v) in src[y * w..(y + 1) * w].iter().enumerate() {
                        let sx = x as isize + shift;
                        if sx >= 0 && sx < w as isize {
                            out_row[sx as usize] += v as f64;
                        }
                    }
                }
            }
        }
    }
}

fn project_max(data: &[f64], item: usize, h: usize, w: usize, axis: ProjAxis) -> Vec<f64> {
    let base = item * h * w;
    match axis {
        ProjAxis::Columns => {
            let mut proj = vec![f64::NEG_INFINITY; w];
            for y in 0..h {
                for (x, p) in proj.iter_mut().enumerate() {
                    *p = p.max(data[base + y * w + x]);
                }
            }
            proj
        }
        ProjAxis::Rows => {
            let mut proj = vec![f64::NEG_INFINITY; h];
            for (y, p) in proj.iter_mut().enumerate() {
                for x in 0..w {
                    *p = p.max(data[base + y * w + x]);
                }
            }
            proj
        }
    }
}

/// Flat index of the first position achieving the projection maximum for
/// entry `j` of the projection along `axis`.
fn argmax_index(data: &[f64], item: usize, h: usize, w: usize, axis: ProjAxis, j: usize) -> usize {
    let base = item * h * w;
    match axis {
        ProjAxis::Columns => {
            let mut best = base + j;
            for y in 1..h {
                let idx = base + y * w + j;
                if data[idx] > data[best] {
                    best = idx;
                }
            }
            best
        }
        ProjAxis::Rows => {
            let mut best = base + j * w;
            for x in 1..w {
                let idx = base + j * w + x;
                if data[idx] > data[best] {
                    best = idx;
                }
            }
            best
        }
    }
}

/// Two-class soft Dice loss between a projection vector and a binary
/// target: mean over foreground (values as-is) and background (one minus
/// values) of `1 - dice`.
pub fn dice_two_class(pred: &[f64], target: &[f64]) -> f64 {
    let mut inter_fg = 0.0;
    let mut sum_p = 0.0;
    let mut sum_t = 0.0;
    for (&p, &t) in pred.iter().zip(target) {
        inter_fg += p * t;
        sum_p += p;
        sum_t += t;
    }
    let n = pred.len() as f64;
    let dice_fg = (2.0 * inter_fg + DICE_SMOOTH) / (sum_p + sum_t + DICE_SMOOTH);
    let inter_bg = n - sum_p - sum_t + inter_fg;
    let dice_bg = (2.0 * inter_bg + DICE_SMOOTH) / ((n - sum_p) + (n - sum_t) + DICE_SMOOTH);
    0.5 * ((1.0 - dice_fg) + (1.0 - dice_bg))
}

/// Gradient of [`dice_two_class`] with respect to each prediction entry.
fn dice_two_class_grad(pred: &[f64], target: &[f64]) -> Vec<f64> {
    let mut inter_fg = 0.0;
    let mut sum_p = 0.0;
    let mut sum_t = 0.0;
    for (&p, &t) in pred.iter().zip(target) {
        inter_fg += p * t;
        sum_p += p;
        sum_t += t;
    }
    let n = pred.len() as f64;
    let num_fg = 2.0 * inter_fg + DICE_SMOOTH;
    let den_fg = sum_p + sum_t + DICE_SMOOTH;
    let inter_bg = n - sum_p - sum_t + inter_fg;
    let num_bg = 2.0 * inter_bg + DICE_SMOOTH;
    let den_bg = (n - sum_p) + (n - sum_t) + DICE_SMOOTH;
    pred.iter()
        .zip(target)
        .map(|(_, &t)| {
            // d dice_fg / dp = (2 t den - num) / den^2
            let dfg = (2.0 * t * den_fg - num_fg) / (den_fg * den_fg);
            // d inter_bg / dp = t - 1, d den_bg / dp = -1
            let dbg = (2.0 * (t - 1.0) * den_bg + num_bg) / (den_bg * den_bg);
            -0.5 * (dfg + dbg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite-difference gradient of `f` at `x` for one entry.
    fn fd_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, eps: f64) -> f64 {
        let mut xp = x.to_vec();
        xp[i] += eps;
        let fp = f(&xp);
        xp[i] = x[i] - eps;
        let fm = f(&xp);
        (fp - fm) / (2.0 * eps)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn conv_matches_direct_convolution() {
        // 1x1x3x3 input, 1 output channel, checked against a hand loop.
        let input = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(|v| v as f64).collect());
        let weight = Tensor::from_vec(&[1, 1, 3, 3], vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
        let bias = Tensor::from_vec(&[1], vec![0.5]);
        for precision in [Precision::F64, Precision::F32] {
            let mut g = Graph::new(precision);
            let i = g.constant(input.clone());
            let w = g.constant(weight.clone());
            let b = g.constant(bias.clone());
            let out = g.conv(i, w, b, 3);
            // out[y][x] = in[y][x] + 2*in[y+1][x+1] + 0.5 (zero padded)
            let expect = [
                1.0 + 2.0 * 5.0,
                2.0 + 2.0 * 6.0,
                3.0,
                4.0 + 2.0 * 8.0,
                5.0 + 2.0 * 9.0,
                6.0,
                7.0,
                8.0,
                9.0,
            ];
            for (got, want) in g.value(out).data().iter().zip(expect.iter()) {
                assert!((got - (want + 0.5)).abs() < 1e-6, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let shape_in = [2usize, 2, 4, 4];
        let shape_w = [3usize, 2, 3, 3];
        let n_in: usize = shape_in.iter().product();
        let n_w: usize = shape_w.iter().product();
        let xs: Vec<f64> = (0..n_in).map(|i| ((i * 37 % 17) as f64 - 8.0) / 9.0).collect();
        let ws: Vec<f64> = (0..n_w).map(|i| ((i * 23 % 13) as f64 - 6.0) / 7.0).collect();
        let bs = vec![0.1, -0.2, 0.3];

        // Scalar function: sum of ReLU(conv(x)) so the kernel and routing
        // both get exercised.
        let eval = |xs: &[f64], ws: &[f64], bs: &[f64]| -> f64 {
            let mut g = Graph::new(Precision::F64);
            let i = g.leaf(Tensor::from_vec(&shape_in, xs.to_vec()), false);
            let w = g.leaf(Tensor::from_vec(&shape_w, ws.to_vec()), false);
            let b = g.leaf(Tensor::from_vec(&[3], bs.to_vec()), false);
            let c = g.conv(i, w, b, 3);
            let r = g.relu(c);
            g.value(r).data().iter().sum()
        };

        let mut g = Graph::new(Precision::F64);
        let i = g.leaf(Tensor::from_vec(&shape_in, xs.clone()), true);
        let w = g.leaf(Tensor::from_vec(&shape_w, ws.clone()), true);
        let b = g.leaf(Tensor::from_vec(&[3], bs.clone()), true);
        let c = g.conv(i, w, b, 3);
        let r = g.relu(c);
        // Backward of sum(r): seed r's gradient slot with ones directly.
        let mut grads: Vec<Option<Tensor>> = (0..=r.0).map(|_| None).collect();
        grads[r.0] = Some(Tensor::from_vec(
            g.value(r).shape(),
            vec![1.0; g.value(r).len()],
        ));
        for idx in (0..=r.0).rev() {
            if grads[idx].is_none() || !g.nodes[idx].requires_grad {
                continue;
            }
            let gout = grads[idx].take().unwrap();
            g.backward_node(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }

        let eps = 1e-5;
        let gi = grads[i.0].as_ref().unwrap();
        for idx in (0..n_in).step_by(7) {
            let fd = fd_grad(|v| eval(v, &ws, &bs), &xs, idx, eps);
            assert!(rel_err(gi.data()[idx], fd) < 1e-6, "input {idx}");
        }
        let gw = grads[w.0].as_ref().unwrap();
        for idx in (0..n_w).step_by(5) {
            let fd = fd_grad(|v| eval(&xs, v, &bs), &ws, idx, eps);
            assert!(rel_err(gw.data()[idx], fd) < 1e-6, "weight {idx}");
        }
        let gb = grads[b.0].as_ref().unwrap();
        for idx in 0..3 {
            let fd = fd_grad(|v| eval(&xs, &ws, v), &bs, idx, eps);
            assert!(rel_err(gb.data()[idx], fd) < 1e-6, "bias {idx}");
        }
    }

    #[test]
    fn softmax_outputs_sum_to_one_and_grads_check() {
        let shape = [1usize, 2, 2, 2];
        let xs: Vec<f64> = vec![0.3, -0.7, 1.2, 0.05, -0.4, 0.9, -1.1, 0.6];
        let weights = Tensor::from_vec(&shape, vec![1.0, 0.0, 2.0, 0.0, 0.0, 3.0, 0.5, 0.0]);

        let eval = |xs: &[f64]| -> f64 {
            let mut g = Graph::new(Precision::F64);
            let x = g.leaf(Tensor::from_vec(&shape, xs.to_vec()), false);
            let p = g.softmax_ch(x);
            let l = g.ce_sum(p, weights.clone());
            g.value(l).item()
        };

        let mut g = Graph::new(Precision::F64);
        let x = g.leaf(Tensor::from_vec(&shape, xs.clone()), true);
        let p = g.softmax_ch(x);
        for px in 0..4 {
            let sum = g.value(p).data()[px] + g.value(p).data()[4 + px];
            assert!((sum - 1.0).abs() < 1e-12);
        }
        let l = g.ce_sum(p, weights.clone());
        let grads = g.backward(l);
        let gx = grads.get(x).unwrap();
        for i in 0..xs.len() {
            let fd = fd_grad(eval, &xs, i, 1e-6);
            assert!(rel_err(gx.data()[i], fd) < 1e-6, "logit {i}: {} vs {fd}", gx.data()[i]);
        }
    }

    #[test]
    fn pool_upsample_concat_select_grads_check() {
        // Distinct, well-separated inputs keep every max unique so the
        // pooling subgradient and central differences agree.
        let shape = [1usize, 2, 4, 4];
        let xs: Vec<f64> = (0..32).map(|i| ((i + 1) as f64 * 1.7).sin() * 1.3).collect();
        let cat_shape = [1usize, 4, 4, 4];
        let mut weights = vec![0.0; 64];
        for (j, w) in weights.iter_mut().enumerate() {
            *w = match j % 5 {
                0 => 1.0,
                2 => 0.5,
                _ => 0.0,
            };
        }
        let weights = Tensor::from_vec(&cat_shape, weights);

        let run = |xs: &[f64], with_grad: bool| -> (f64, Option<Vec<f64>>) {
            let mut g = Graph::new(Precision::F64);
            let x = g.leaf(Tensor::from_vec(&shape, xs.to_vec()), with_grad);
            let pooled = g.max_pool2(x);
            let up = g.upsample2(pooled);
            let cat = g.concat_ch(up, x); // 4 channels
            let sm = g.softmax_ch(cat);
            let l = g.ce_sum(sm, weights.clone());
            let v = g.value(l).item();
            if with_grad {
                let grads = g.backward(l);
                (v, Some(grads.get(x).unwrap().data().to_vec()))
            } else {
                (v, None)
            }
        };

        let (_, gx) = run(&xs, true);
        let gx = gx.unwrap();
        for i in 0..xs.len() {
            let fd = fd_grad(|v| run(v, false).0, &xs, i, 1e-6);
            assert!(
                rel_err(gx[i], fd) < 1e-6,
                "entry {i}: analytic {} vs fd {fd}",
                gx[i]
            );
        }
    }

    #[test]
    fn proj_dice_grads_check_on_tie_free_field() {
        // Two batch items, two channels; channel 1 feeds the projections.
        let shape = [2usize, 2, 3, 4];
        let xs: Vec<f64> = (0..48)
            .map(|i| 0.5 + 0.45 * ((i + 1) as f64 * 0.83).sin())
            .collect();
        let tx = vec![vec![1.0, 0.0, 1.0, 1.0], vec![0.0, 1.0, 0.0, 1.0]];
        let ty = vec![vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]];

        let run = |xs: &[f64], with_grad: bool| -> (f64, Option<Vec<f64>>) {
            let mut g = Graph::new(Precision::F64);
            let x = g.leaf(Tensor::from_vec(&shape, xs.to_vec()), with_grad);
            let fg = g.select_ch(x, 1);
            let dx = g.proj_dice(fg, ProjAxis::Columns, tx.clone(), 2.0);
            let dy = g.proj_dice(fg, ProjAxis::Rows, ty.clone(), 1.0);
            let tot = g.add(dx, dy);
            let tot = g.scale(tot, 1.5);
            let v = g.value(tot).item();
            if with_grad {
                let grads = g.backward(tot);
                (v, Some(grads.get(x).unwrap().data().to_vec()))
            } else {
                (v, None)
            }
        };

        let (_, gx) = run(&xs, true);
        let gx = gx.unwrap();
        for i in 0..xs.len() {
            let fd = fd_grad(|v| run(v, false).0, &xs, i, 1e-6);
            assert!(
                rel_err(gx[i], fd) < 1e-6,
                "entry {i}: analytic {} vs fd {fd}",
                gx[i]
            );
        }
    }

    #[test]
    fn dice_two_class_known_values() {
        // Perfect binary overlap -> 0.
        let t = vec![1.0, 0.0, 1.0, 0.0];
        assert!(dice_two_class(&t, &t) < 1e-6);
        // All-ones prediction vs all-zeros target -> both dices ~ 0 -> 1.
        let loss = dice_two_class(&[1.0; 4], &[0.0; 4]);
        assert!((loss - 1.0).abs() < 1e-5, "{loss}");
        // Constant 0.5 vs half-ones target (N=4) -> 0.5.
        let loss = dice_two_class(&[0.5; 4], &[1.0, 1.0, 0.0, 0.0]);
        assert!((loss - 0.5).abs() < 1e-6, "{loss}");
    }

    #[test]
    fn untouched_leaf_has_no_gradient() {
        let mut g = Graph::new(Precision::F64);
        let a = g.leaf(Tensor::scalar(2.0), true);
        let b = g.leaf(Tensor::scalar(3.0), true);
        let l = g.scale(a, 4.0);
        let grads = g.backward(l);
        assert!(grads.get(b).is_none());
        assert_eq!(grads.get_or_zeros(b, &[1]).data(), &[0.0]);
        assert_eq!(grads.get(a).unwrap().item(), 4.0);
    }

    #[test]
    fn loss_scaling_scales_gradients() {
        let shape = [1usize, 2, 2, 2];
        let xs: Vec<f64> = vec![0.1, 0.4, -0.3, 0.9, 0.2, -0.5, 0.7, 0.0];
        let w = Tensor::from_vec(&shape, vec![1.0; 8]);
        let grad_for = |factor: f64| -> Vec<f64> {
            let mut g = Graph::new(Precision::F64);
            let x = g.leaf(Tensor::from_vec(&shape, xs.clone()), true);
            let p = g.softmax_ch(x);
            let l = g.ce_sum(p, w.clone());
            let l = g.scale(l, factor);
            let grads = g.backward(l);
            grads.get(x).unwrap().data().to_vec()
        };
        let g1 = grad_for(1.0);
        let g2 = grad_for(2.0);
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }
}
