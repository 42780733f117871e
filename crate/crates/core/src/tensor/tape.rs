use super::kernels::{
    add_bias, bias_grad, conv_output_dim, conv_transpose_output_dim, correlate, correlate_adjoint_input,
    correlate_adjoint_weight,
};
use super::{numel, Shape, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
    Tanh,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    InstanceNorm {
        input: Var,
        inv_std: Vec<f32>,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Abs(Var),
    Square(Var),
    Mean(Var),
    ScalarMul(Var, f32),
    AddScalar(Var),
    /// Scalar node whose gradient with respect to `input` was computed
    /// alongside its value.
    External {
        input: Var,
        local_grad: Vec<f32>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input, weight, bias, ..
            }
            | Op::ConvTranspose2d {
                input, weight, bias, ..
            } => vec![*input, *weight, *bias],
            Op::InstanceNorm { input, .. } | Op::Activation { input, .. } | Op::External { input, .. } => vec![*input],
            Op::Add(a, b) | Op::Sub(a, b) => vec![*a, *b],
            Op::Abs(a) | Op::Square(a) | Op::Mean(a) | Op::ScalarMul(a, _) | Op::AddScalar(a) => {
                vec![*a]
            }
        }
    }
}

#[derive(Debug)]
struct Node {
    shape: Shape,
    value: Vec<f32>,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient; only kept for leaves.
    grad: Option<Vec<f32>>,
}

/// Define-by-run recording of tensor operations in creation order.
///
/// Nodes are only ever appended, so the node list is already a topological
/// order and backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    pending: Vec<(Var, Vec<f32>)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Shape, value: Vec<f32>, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a copy of `tensor` as a leaf. Gradients flow to it iff the
    /// tensor has `requires_grad` set.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        self.nodes.push(Node {
            shape: tensor.shape(),
            value: tensor.data().to_vec(),
            op: Op::Leaf,
            requires_grad: tensor.requires_grad(),
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, tensor: &Tensor) -> Var {
        self.nodes.push(Node {
            shape: tensor.shape(),
            value: tensor.data().to_vec(),
            op: Op::Leaf,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copies the value of `v` into a new gradient-free leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let node = &self.nodes[v.0];
        let (shape, value) = (node.shape, node.value.clone());
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f32 {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        Tensor::new(node.shape, node.value.clone()).expect("node value matches its shape")
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        let bs = self.shape(bias);
        let ys = conv_geometry("conv2d", xs, ws, bs, stride, padding)?;
        let mut y = correlate(self.value(input), xs, self.value(weight), ws, stride, padding, ys);
        add_bias(&mut y, ys, self.value(bias));
        Ok(self.push(
            ys,
            y,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
        ))
    }

    /// Transposed convolution. `weight` is laid out (in_ch, out_ch, k, k) so that
    /// the same tensor serves a conv2d mapping out_ch -> in_ch; this op is that
    /// conv's adjoint (plus bias). `output_padding` extends the bottom/right edge
    /// so stride-2 stages can exactly invert the spatial halving.
    pub fn conv2d_transpose(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var, TensorError> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        let bs = self.shape(bias);
        let [n, in_ch, h, w] = xs;
        let [w_in, w_out, k, k2] = ws;
        if k != k2 || w_in != in_ch {
            return Err(TensorError::Shape {
                op: "conv2d_transpose",
                detail: format!("input {xs:?} incompatible with weight {ws:?}"),
            });
        }
        if bs != [1, w_out, 1, 1] {
            return Err(TensorError::Shape {
                op: "conv2d_transpose",
                detail: format!("bias {bs:?} should be [1, {w_out}, 1, 1]"),
            });
        }
        if output_padding >= stride.max(1) {
            return Err(TensorError::Argument {
                op: "conv2d_transpose",
                detail: format!("output_padding {output_padding} must be smaller than stride {stride}"),
            });
        }
        let dims = (
            conv_transpose_output_dim(h, k, stride, padding, output_padding),
            conv_transpose_output_dim(w, k, stride, padding, output_padding),
        );
        let (Some(oh), Some(ow)) = dims else {
            return Err(TensorError::Shape {
                op: "conv2d_transpose",
                detail: format!("no valid output for input {xs:?}, kernel {k}, stride {stride}, padding {padding}"),
            });
        };
        if oh == 0 || ow == 0 {
            return Err(TensorError::Shape {
                op: "conv2d_transpose",
                detail: "empty output".into(),
            });
        }
        let ys = [n, w_out, oh, ow];
        // The forward conv this is the adjoint of: ys -> xs with weight ws.
        let mut y = correlate_adjoint_input(self.value(input), xs, self.value(weight), ws, stride, padding, ys);
        add_bias(&mut y, ys, self.value(bias));
        Ok(self.push(
            ys,
            y,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
        ))
    }

    /// Per (batch, channel) normalization to zero mean and unit (biased) variance.
    pub fn instance_norm(&mut self, input: Var, eps: f32) -> Result<Var, TensorError> {
        if !(eps > 0.0) {
            return Err(TensorError::Argument {
                op: "instance_norm",
                detail: format!("eps must be positive, got {eps}"),
            });
        }
        let xs = self.shape(input);
        let [n, c, h, w] = xs;
        let plane = h * w;
        if plane == 0 {
            return Err(TensorError::Shape {
                op: "instance_norm",
                detail: "empty spatial extent".into(),
            });
        }
        let x = self.value(input);
        let mut y = vec![0.0f32; x.len()];
        let mut inv_std = Vec::with_capacity(n * c);
        for s in 0..n * c {
            let slice = &x[s * plane..(s + 1) * plane];
            let mean = slice.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
            let var = slice.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / plane as f64;
            let istd = 1.0 / (var + eps as f64).sqrt();
            for (o, &v) in y[s * plane..(s + 1) * plane].iter_mut().zip(slice) {
                *o = ((v as f64 - mean) * istd) as f32;
            }
            inv_std.push(istd as f32);
        }
        Ok(self.push(xs, y, Op::InstanceNorm { input, inv_std }))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let x = self.value(input);
        let y: Vec<f32> = match kind {
            Activation::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            Activation::LeakyRelu(slope) => x.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect(),
            Activation::Tanh => x.iter().map(|&v| v.tanh()).collect(),
        };
        let shape = self.shape(input);
        self.push(shape, y, Op::Activation { input, kind })
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Relu)
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f32) -> Var {
        self.activation(input, Activation::LeakyRelu(slope))
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Tanh)
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var) -> Result<(Shape, &[f32], &[f32]), TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::Shape {
                op,
                detail: format!("{sa:?} vs {sb:?}"),
            });
        }
        Ok((sa, self.value(a), self.value(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (shape, x, y) = self.binary("add", a, b)?;
        let out = x.iter().zip(y).map(|(p, q)| p + q).collect();
        Ok(self.push(shape, out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (shape, x, y) = self.binary("sub", a, b)?;
        let out = x.iter().zip(y).map(|(p, q)| p - q).collect();
        Ok(self.push(shape, out, Op::Sub(a, b)))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|v| v.abs()).collect();
        let shape = self.shape(a);
        self.push(shape, out, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|v| v * v).collect();
        let shape = self.shape(a);
        self.push(shape, out, Op::Square(a))
    }

    /// Mean over every element, producing a 1x1x1x1 scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.iter().map(|&v| v as f64).sum::<f64>() / x.len().max(1) as f64;
        self.push([1, 1, 1, 1], vec![m as f32], Op::Mean(a))
    }

    pub fn scalar_mul(&mut self, a: Var, factor: f32) -> Var {
        let out = self.value(a).iter().map(|v| v * factor).collect();
        let shape = self.shape(a);
        self.push(shape, out, Op::ScalarMul(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, offset: f32) -> Var {
        let out = self.value(a).iter().map(|v| v + offset).collect();
        let shape = self.shape(a);
        self.push(shape, out, Op::AddScalar(a))
    }

    /// Records a scalar computed outside the tape from `input`, together with its
    /// gradient with respect to `input`. Backward scales `local_grad` by the
    /// upstream gradient.
    pub fn external_scalar(&mut self, input: Var, value: f32, local_grad: Vec<f32>) -> Result<Var, TensorError> {
        let expected = self.value(input).len();
        if local_grad.len() != expected {
            return Err(TensorError::GradientLength {
                expected,
                got: local_grad.len(),
            });
        }
        Ok(self.push([1, 1, 1, 1], vec![value], Op::External { input, local_grad }))
    }

    /// Queues `grad` as an extra upstream gradient at `output` for the next
    /// [`Tape::backward`] or [`Tape::propagate`] call.
    pub fn inject_gradient(&mut self, output: Var, grad: &[f32]) -> Result<(), TensorError> {
        let expected = self.value(output).len();
        if grad.len() != expected {
            return Err(TensorError::GradientLength {
                expected,
                got: grad.len(),
            });
        }
        self.pending.push((output, grad.to_vec()));
        Ok(())
    }

    /// Reverse sweep seeded with d(loss)/d(loss) = 1 plus any injected gradients.
    /// Leaf gradients accumulate across calls until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let shape = self.shape(loss);
        if shape != [1, 1, 1, 1] {
            return Err(TensorError::NonScalarLoss(shape));
        }
        self.pending.push((loss, vec![1.0]));
        self.propagate();
        Ok(())
    }

    /// Reverse sweep seeded only by injected gradients.
    pub fn propagate(&mut self) {
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in std::mem::take(&mut self.pending) {
            accumulate(&mut grads[v.0], &g);
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                accumulate(&mut self.nodes[i].grad, &g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
    }

    fn backprop_node(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let (xs, ws) = (self.shape(*input), self.shape(*weight));
                if wants(input) {
                    let gx = correlate_adjoint_input(g, node.shape, self.value(*weight), ws, *stride, *padding, xs);
                    accumulate(&mut grads[input.0], &gx);
                }
                if wants(weight) {
                    let gw = correlate_adjoint_weight(self.value(*input), xs, g, node.shape, *stride, *padding, ws);
                    accumulate(&mut grads[weight.0], &gw);
                }
                if wants(bias) {
                    accumulate(&mut grads[bias.0], &bias_grad(g, node.shape));
                }
            }
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let (xs, ws) = (self.shape(*input), self.shape(*weight));
                if wants(input) {
                    let gx = correlate(g, node.shape, self.value(*weight), ws, *stride, *padding, xs);
                    accumulate(&mut grads[input.0], &gx);
                }
                if wants(weight) {
                    let gw = correlate_adjoint_weight(g, node.shape, self.value(*input), xs, *stride, *padding, ws);
                    accumulate(&mut grads[weight.0], &gw);
                }
                if wants(bias) {
                    accumulate(&mut grads[bias.0], &bias_grad(g, node.shape));
                }
            }
            Op::InstanceNorm { input, inv_std } => {
                let [_, _, h, w] = node.shape;
                let plane = h * w;
                let y = &node.value;
                let mut gx = vec![0.0f32; y.len()];
                for (s, &istd) in inv_std.iter().enumerate() {
                    let range = s * plane..(s + 1) * plane;
                    let (gs, ys) = (&g[range.clone()], &y[range.clone()]);
                    let sum_g: f64 = gs.iter().map(|&v| v as f64).sum();
                    let sum_gy: f64 = gs.iter().zip(ys).map(|(&a, &b)| a as f64 * b as f64).sum();
                    let m = plane as f64;
                    for ((o, &gv), &yv) in gx[range].iter_mut().zip(gs).zip(ys) {
                        *o = (istd as f64 / m * (m * gv as f64 - sum_g - yv as f64 * sum_gy)) as f32;
                    }
                }
                accumulate(&mut grads[input.0], &gx);
            }
            Op::Activation { input, kind } => {
                let x = self.value(*input);
                let gx: Vec<f32> = match kind {
                    Activation::Relu => g
                        .iter()
                        .zip(x)
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect(),
                    Activation::LeakyRelu(slope) => g
                        .iter()
                        .zip(x)
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { slope * gv })
                        .collect(),
                    Activation::Tanh => g
                        .iter()
                        .zip(&node.value)
                        .map(|(&gv, &yv)| gv * (1.0 - yv * yv))
                        .collect(),
                };
                accumulate(&mut grads[input.0], &gx);
            }
            Op::Add(a, b) => {
                if wants(a) {
                    accumulate(&mut grads[a.0], g);
                }
                if wants(b) {
                    accumulate(&mut grads[b.0], g);
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    accumulate(&mut grads[a.0], g);
                }
                if wants(b) {
                    let neg: Vec<f32> = g.iter().map(|v| -v).collect();
                    accumulate(&mut grads[b.0], &neg);
                }
            }
            Op::Abs(a) => {
                // Subgradient 0 at the kink.
                let gx: Vec<f32> = g
                    .iter()
                    .zip(self.value(*a))
                    .map(|(&gv, &xv)| {
                        if xv > 0.0 {
                            gv
                        } else if xv < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })
                    .collect();
                accumulate(&mut grads[a.0], &gx);
            }
            Op::Square(a) => {
                let gx: Vec<f32> = g.iter().zip(self.value(*a)).map(|(&gv, &xv)| 2.0 * xv * gv).collect();
                accumulate(&mut grads[a.0], &gx);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                let gx = vec![g[0] / n as f32; n];
                accumulate(&mut grads[a.0], &gx);
            }
            Op::ScalarMul(a, factor) => {
                let gx: Vec<f32> = g.iter().map(|v| v * factor).collect();
                accumulate(&mut grads[a.0], &gx);
            }
            Op::AddScalar(a) => accumulate(&mut grads[a.0], g),
            Op::External { input, local_grad } => {
                let gx: Vec<f32> = local_grad.iter().map(|v| v * g[0]).collect();
                accumulate(&mut grads[input.0], &gx);
            }
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f32>>, g: &[f32]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

fn conv_geometry(
    op: &'static str,
    xs: Shape,
    ws: Shape,
    bs: Shape,
    stride: usize,
    padding: usize,
) -> Result<Shape, TensorError> {
    let [n, in_ch, h, w] = xs;
    let [out_ch, w_in, k, k2] = ws;
    if k != k2 || w_in != in_ch {
        return Err(TensorError::Shape {
            op,
            detail: format!("input {xs:?} incompatible with weight {ws:?} (expected (out, {in_ch}, k, k))"),
        });
    }
    if bs != [1, out_ch, 1, 1] {
        return Err(TensorError::Shape {
            op,
            detail: format!("bias {bs:?} should be [1, {out_ch}, 1, 1]"),
        });
    }
    match (
        conv_output_dim(h, k, stride, padding),
        conv_output_dim(w, k, stride, padding),
    ) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok([n, out_ch, oh, ow]),
        _ => Err(TensorError::Shape {
            op,
            detail: format!("kernel {k} with stride {stride}, padding {padding} does not fit input {h}x{w}"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, shape: Shape, data: Vec<f32>) -> Var {
        tape.leaf(&Tensor::new(shape, data).unwrap().with_requires_grad(true))
    }

    fn center_kernel() -> Tensor {
        let mut k = Tensor::zeros([1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        k
    }

    #[test]
    fn conv_identity_kernel() {
        let mut tape = Tape::new();
        let input: Vec<f32> = (1..=9).map(|v| v as f32).collect();
        let x = leaf(&mut tape, [1, 1, 3, 3], input.clone());
        let w = tape.constant(&center_kernel());
        let b = tape.constant(&Tensor::zeros([1, 1, 1, 1]));
        let y = tape.conv2d(x, w, b, 1, 1).unwrap();
        assert_eq!(tape.shape(y), [1, 1, 3, 3]);
        assert_eq!(tape.value(y), &input[..]);
    }

    #[test]
    fn conv_strided_window_sums() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::full([1, 1, 4, 4], 1.0));
        let w = tape.constant(&Tensor::full([1, 1, 3, 3], 1.0));
        let b = tape.constant(&Tensor::zeros([1, 1, 1, 1]));
        let y = tape.conv2d(x, w, b, 2, 1).unwrap();
        assert_eq!(tape.shape(y), [1, 1, 2, 2]);
        assert_eq!(tape.value(y), &[4.0, 6.0, 6.0, 9.0]);
    }

    #[test]
    fn conv_shape_mismatch_is_error() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::zeros([1, 2, 4, 4]));
        let w = tape.constant(&Tensor::zeros([1, 3, 3, 3]));
        let b = tape.constant(&Tensor::zeros([1, 1, 1, 1]));
        let err = tape.conv2d(x, w, b, 1, 1).unwrap_err();
        assert!(matches!(err, TensorError::Shape { op: "conv2d", .. }));
    }

    #[test]
    fn transpose_scatters_identity_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = tape.constant(&center_kernel());
        let b = tape.constant(&Tensor::zeros([1, 1, 1, 1]));
        let y = tape.conv2d_transpose(x, w, b, 2, 1, 0).unwrap();
        assert_eq!(tape.shape(y), [1, 1, 3, 3]);
        assert_eq!(tape.value(y), &[1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 4.0]);
    }

    #[test]
    fn instance_norm_constant_and_unit() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::full([1, 1, 2, 2], 5.0));
        let y = tape.instance_norm(x, 1e-5).unwrap();
        assert!(tape.value(y).iter().all(|&v| v == 0.0));

        let x = tape.constant(&Tensor::new([1, 1, 2, 2], vec![-1.0, 1.0, -1.0, 1.0]).unwrap());
        let y = tape.instance_norm(x, 1e-5).unwrap();
        for (o, e) in tape.value(y).iter().zip([-1.0, 1.0, -1.0, 1.0]) {
            assert!((o - e).abs() < 1e-5);
        }
    }

    #[test]
    fn activations() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, [1, 1, 1, 3], vec![-2.0, 0.0, 3.0]);
        let r = tape.relu(x);
        assert_eq!(tape.value(r), &[0.0, 0.0, 3.0]);
        let l = tape.leaky_relu(x, 0.2);
        assert_eq!(tape.value(l)[0], -0.4);
        let x1 = leaf(&mut tape, [1, 1, 1, 1], vec![-1.0]);
        let l1 = tape.leaky_relu(x1, 0.2);
        assert!((tape.value(l1)[0] + 0.2).abs() < 1e-7);

        let z = leaf(&mut tape, [1, 1, 1, 1], vec![0.0]);
        let t = tape.tanh(z);
        assert_eq!(tape.value(t), &[0.0]);
        tape.backward(t).unwrap();
        assert_eq!(tape.grad(z).unwrap(), &[1.0]);
    }

    #[test]
    fn mean_and_abs_subgradient() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, [1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let m = tape.mean(x);
        assert_eq!(tape.scalar_value(m), 2.5);
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.25; 4]);

        let z = leaf(&mut tape, [1, 1, 1, 1], vec![0.0]);
        let a = tape.abs(z);
        tape.backward(a).unwrap();
        assert_eq!(tape.grad(z).unwrap(), &[0.0]);
    }

    #[test]
    fn backward_accumulates() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, [1, 1, 1, 4], vec![1.0, -2.0, 3.0, 0.5]);
        let m = tape.mean(x);
        tape.backward(m).unwrap();
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.5; 4]);
        tape.zero_grads();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, [1, 1, 1, 2], vec![1.0, 2.0]);
        assert_eq!(tape.backward(x), Err(TensorError::NonScalarLoss([1, 1, 1, 2])));
    }

    #[test]
    fn injected_gradient_flows_through_chain_rule() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, [1, 1, 2, 2], vec![0.3, -1.0, 2.0, 4.0]);
        let y = tape.scalar_mul(x, 3.0);
        tape.inject_gradient(y, &[1.0; 4]).unwrap();
        tape.propagate();
        assert_eq!(tape.grad(x).unwrap(), &[3.0; 4]);

        let mut tape = Tape::new();
        let x = leaf(&mut tape, [1, 1, 2, 2], vec![0.3, -1.0, 2.0, 4.0]);
        let y = tape.scalar_mul(x, 3.0);
        tape.inject_gradient(y, &[0.0; 4]).unwrap();
        tape.propagate();
        assert_eq!(tape.grad(x).unwrap(), &[0.0; 4]);

        assert!(matches!(
            tape.inject_gradient(y, &[1.0; 3]),
            Err(TensorError::GradientLength { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn constants_receive_no_grad() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, [1, 1, 1, 2], vec![1.0, 2.0]);
        let c = tape.constant(&Tensor::new([1, 1, 1, 2], vec![5.0, 6.0]).unwrap());
        let s = tape.sub(x, c).unwrap();
        let sq = tape.square(s);
        let m = tape.mean(sq);
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[-4.0, -4.0]);
        assert!(tape.grad(c).is_none());
    }
}
