use super::kernels::{self, gemm, ConvAlgo, MatLayout};
use super::{Element, Tensor};
use crate::error::{Error, Result};
use crate::quant::{self, BitWidth};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu(Var),
    Reshape(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    LogSoftmax(Var),
    CrossEntropy {
        log_probs: Var,
        labels: Vec<usize>,
    },
    PickSum {
        log_probs: Var,
        targets: Vec<usize>,
    },
    KlDivergence {
        log_p: Var,
        log_q: Var,
    },
    /// Straight-through: gradient passes where `lower < input < upper`.
    FakeQuant {
        input: Var,
        lower: T,
        upper: T,
    },
    PactClip {
        input: Var,
        alpha: Var,
    },
    /// Straight-through inside the clip window.
    PactQuantize {
        input: Var,
        alpha: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations in execution order so gradients can be replayed in
/// reverse. Nodes only ever reference earlier nodes.
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    conv_algo: ConvAlgo,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients for every leaf registered with `requires_grad`.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            conv_algo: ConvAlgo::default(),
        }
    }

    pub fn with_conv_algo(conv_algo: ConvAlgo) -> Self {
        Self {
            nodes: Vec::new(),
            conv_algo,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        // Nothing upstream needs a gradient: keep the value, drop the rule.
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let out = kernels::conv2d_forward(
            self.value(input),
            self.value(weight),
            self.value(bias),
            stride,
            padding,
            self.conv_algo,
        )?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            &[input, weight, bias],
        ))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = kernels::linear_forward(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(out, Op::Linear { input, weight, bias }, &[input, weight, bias]))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|x| x.max(T::zero()));
        self.push(out, Op::Relu(input), &[input])
    }

    pub fn reshape(&mut self, input: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(input).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(input), &[input]))
    }

    /// Collapses every axis after the first.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.value(input).shape();
        let n = shape[0];
        let rest = shape[1..].iter().product::<usize>();
        self.reshape(input, [n, rest])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let out = self.value(input).map(|x| x * factor);
        self.push(out, Op::Scale(input, factor), &[input])
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(input), &[input])
    }

    /// Row-wise log-softmax of an `N x C` matrix, max-shifted for stability.
    pub fn log_softmax(&mut self, logits: Var) -> Result<Var> {
        let x = self.value(logits);
        let (n, c) = matrix_dims("log_softmax", x)?;
        if c < 2 {
            return Err(Error::dim("log_softmax", "classes (axis 1)", 2, c));
        }
        let mut out = Vec::with_capacity(n * c);
        for row in x.data().chunks_exact(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            out.extend(row.iter().map(|&v| v - max - lse));
        }
        let out = Tensor::new([n, c], out)?;
        Ok(self.push(out, Op::LogSoftmax(logits), &[logits]))
    }

    /// Mean over the batch of `-log_probs[i, labels[i]]`.
    pub fn cross_entropy(&mut self, log_probs: Var, labels: &[usize]) -> Result<Var> {
        let lp = self.value(log_probs);
        let (n, c) = matrix_dims("cross_entropy", lp)?;
        check_labels(labels, n, c)?;
        let total: T = labels.iter().enumerate().map(|(i, &y)| lp.data()[i * c + y]).sum();
        let value = -total / T::from_usize(n).unwrap();
        Ok(self.push(
            Tensor::scalar(value),
            Op::CrossEntropy {
                log_probs,
                labels: labels.to_vec(),
            },
            &[log_probs],
        ))
    }

    /// `sum_i log_probs[i, targets[i]]`.
    pub fn pick_sum(&mut self, log_probs: Var, targets: &[usize]) -> Result<Var> {
        let lp = self.value(log_probs);
        let (n, c) = matrix_dims("pick_sum", lp)?;
        check_labels(targets, n, c)?;
        let total: T = targets.iter().enumerate().map(|(i, &y)| lp.data()[i * c + y]).sum();
        Ok(self.push(
            Tensor::scalar(total),
            Op::PickSum {
                log_probs,
                targets: targets.to_vec(),
            },
            &[log_probs],
        ))
    }

    /// Batch mean of `sum_x P(x) (log P(x) - log Q(x))`, computed from
    /// log-probabilities.
    pub fn kl_divergence(&mut self, log_p: Var, log_q: Var) -> Result<Var> {
        let (lp, lq) = (self.value(log_p), self.value(log_q));
        same_shape("kl_divergence", lp, lq)?;
        let (n, _) = matrix_dims("kl_divergence", lp)?;
        let total: T = lp
            .data()
            .iter()
            .zip(lq.data())
            .map(|(&a, &b)| a.exp() * (a - b))
            .sum();
        let value = total / T::from_usize(n).unwrap();
        Ok(self.push(Tensor::scalar(value), Op::KlDivergence { log_p, log_q }, &[log_p, log_q]))
    }

    /// Symmetric weight fake-quantization with a straight-through gradient
    /// gated to the representable range.
    pub fn fake_quant(&mut self, input: Var, bits: BitWidth) -> Var {
        let w = self.value(input);
        let params = quant::weight_quant_params(w, bits);
        let out = quant::fake_quant_with(w, bits);
        let (lower, upper) = if params.step > 0.0 {
            quant::weight_ste_range(&params)
        } else {
            (T::neg_infinity(), T::infinity())
        };
        self.push(out, Op::FakeQuant { input, lower, upper }, &[input])
    }

    /// `clip(a, -alpha, alpha)` with `alpha` a learnable scalar.
    pub fn pact_clip(&mut self, input: Var, alpha: Var) -> Result<Var> {
        let a = self.alpha_value(alpha)?;
        let out = quant::pact_clip(self.value(input), a);
        Ok(self.push(out, Op::PactClip { input, alpha }, &[input, alpha]))
    }

    pub fn pact_quantize(&mut self, input: Var, alpha: Var, bits: BitWidth) -> Result<Var> {
        let a = self.alpha_value(alpha)?;
        let out = quant::pact_quantize_with(self.value(input), a, bits);
        // alpha only feeds the grid here; its gradient comes from the clip.
        Ok(self.push(out, Op::PactQuantize { input, alpha }, &[input]))
    }

    fn alpha_value(&self, alpha: Var) -> Result<T> {
        let t = self.value(alpha);
        if t.len() != 1 {
            return Err(Error::dim("pact", "alpha element count", 1, t.len()));
        }
        let a = t.item();
        if !(a > T::zero()) {
            return Err(Error::Input(format!("PACT alpha must be positive, got {a}")));
        }
        Ok(a)
    }

    /// Reverse pass from a scalar. Forward values are left untouched.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::ones(root.value.shape().to_vec()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            &Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let cg = kernels::conv2d_backward(
                    self.value(input),
                    self.value(weight),
                    self.value(bias),
                    g,
                    stride,
                    padding,
                    [self.needs(input), self.needs(weight), self.needs(bias)],
                )?;
                accumulate(grads, input, cg.input)?;
                accumulate(grads, weight, cg.weight)?;
                accumulate(grads, bias, cg.bias)?;
            }
            &Op::Linear { input, weight, bias } => {
                let (x, w) = (self.value(input), self.value(weight));
                let (n, f, gdim) = kernels::linear_dims(x, w, self.value(bias))?;
                if self.needs(input) {
                    let mut dx = vec![T::zero(); n * f];
                    gemm(
                        g.data(),
                        MatLayout::row_major(n, gdim),
                        w.data(),
                        MatLayout::row_major(gdim, f),
                        T::zero(),
                        &mut dx,
                        MatLayout::row_major(n, f),
                    );
                    accumulate(grads, input, Some(Tensor::new([n, f], dx)?))?;
                }
                if self.needs(weight) {
                    let mut dw = vec![T::zero(); gdim * f];
                    gemm(
                        g.data(),
                        MatLayout::transposed(gdim, n),
                        x.data(),
                        MatLayout::row_major(n, f),
                        T::zero(),
                        &mut dw,
                        MatLayout::row_major(gdim, f),
                    );
                    accumulate(grads, weight, Some(Tensor::new([gdim, f], dw)?))?;
                }
                if self.needs(bias) {
                    let mut db = vec![T::zero(); gdim];
                    for row in g.data().chunks_exact(gdim) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                    accumulate(grads, bias, Some(Tensor::new([gdim], db)?))?;
                }
            }
            &Op::Relu(input) => {
                let x = self.value(input);
                let d = zip_map(g, x, |gv, xv| if xv > T::zero() { gv } else { T::zero() });
                accumulate(grads, input, Some(d))?;
            }
            &Op::Reshape(input) => {
                let d = g.clone().reshape(self.value(input).shape().to_vec())?;
                accumulate(grads, input, Some(d))?;
            }
            &Op::Add(a, b) => {
                if self.needs(a) {
                    accumulate(grads, a, Some(g.clone()))?;
                }
                if self.needs(b) {
                    accumulate(grads, b, Some(g.clone()))?;
                }
            }
            &Op::Mul(a, b) => {
                if self.needs(a) {
                    accumulate(grads, a, Some(zip_map(g, self.value(b), |gv, y| gv * y)))?;
                }
                if self.needs(b) {
                    accumulate(grads, b, Some(zip_map(g, self.value(a), |gv, x| gv * x)))?;
                }
            }
            &Op::Scale(input, factor) => {
                accumulate(grads, input, Some(g.map(|v| v * factor)))?;
            }
            &Op::Sum(input) => {
                let gv = g.item();
                accumulate(grads, input, Some(Tensor::full(self.value(input).shape().to_vec(), gv)))?;
            }
            &Op::LogSoftmax(input) => {
                let y = &node.value;
                let c = y.shape()[1];
                let mut d = Vec::with_capacity(y.len());
                for (grow, yrow) in g.data().chunks_exact(c).zip(y.data().chunks_exact(c)) {
                    let gsum: T = grow.iter().copied().sum();
                    d.extend(grow.iter().zip(yrow).map(|(&gv, &yv)| gv - yv.exp() * gsum));
                }
                accumulate(grads, input, Some(Tensor::new(y.shape().to_vec(), d)?))?;
            }
            Op::CrossEntropy { log_probs, labels } => {
                let shape = self.value(*log_probs).shape().to_vec();
                let (n, c) = (shape[0], shape[1]);
                let coeff = -g.item() / T::from_usize(n).unwrap();
                let mut d = Tensor::zeros(shape);
                for (i, &y) in labels.iter().enumerate() {
                    d.data_mut()[i * c + y] = coeff;
                }
                accumulate(grads, *log_probs, Some(d))?;
            }
            Op::PickSum { log_probs, targets } => {
                let shape = self.value(*log_probs).shape().to_vec();
                let c = shape[1];
                let gv = g.item();
                let mut d = Tensor::zeros(shape);
                for (i, &y) in targets.iter().enumerate() {
                    d.data_mut()[i * c + y] = gv;
                }
                accumulate(grads, *log_probs, Some(d))?;
            }
            &Op::KlDivergence { log_p, log_q } => {
                let (lp, lq) = (self.value(log_p), self.value(log_q));
                let coeff = g.item() / T::from_usize(lp.shape()[0]).unwrap();
                if self.needs(log_p) {
                    let d = zip_map(lp, lq, |a, b| coeff * a.exp() * (a - b + T::one()));
                    accumulate(grads, log_p, Some(d))?;
                }
                if self.needs(log_q) {
                    accumulate(grads, log_q, Some(lp.map(|a| -coeff * a.exp())))?;
                }
            }
            &Op::FakeQuant { input, lower, upper } => {
                let d = quant::ste_backward(g, self.value(input), lower, upper)?;
                accumulate(grads, input, Some(d))?;
            }
            &Op::PactClip { input, alpha } => {
                let alpha_t = self.value(alpha);
                let (da, dalpha) = quant::pact_clip_backward(g, self.value(input), alpha_t.item());
                if self.needs(input) {
                    accumulate(grads, input, Some(da))?;
                }
                if self.needs(alpha) {
                    accumulate(grads, alpha, Some(Tensor::full(alpha_t.shape().to_vec(), dalpha)))?;
                }
            }
            &Op::PactQuantize { input, alpha } => {
                let a = self.value(alpha).item();
                let d = zip_map(g, self.value(input), |gv, x| if x.abs() <= a { gv } else { T::zero() });
                accumulate(grads, input, Some(d))?;
            }
        }
        Ok(())
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Tensor<T>>], var: Var, grad: Option<Tensor<T>>) -> Result<()> {
    let Some(grad) = grad else { return Ok(()) };
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&grad),
        slot @ None => {
            *slot = Some(grad);
            Ok(())
        }
    }
}

fn zip_map<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map operands share a shape")
}

fn same_shape<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Input(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn matrix_dims<T: Element>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::dim(op, "rank", 2, t.rank()));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn check_labels(labels: &[usize], n: usize, c: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Input(format!("expected {n} labels, got {}", labels.len())));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= c) {
        return Err(Error::Input(format!("label {y} at index {i} outside [0, {c})")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::new([3], vec![0.3, -2.0, 7.0]).unwrap(), true);
        let s = tape.sum(w);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::new([2], vec![1.0, 2.0]).unwrap(), true);
        let sq = tape.mul(w, w).unwrap();
        let s = tape.sum(sq);
        assert_eq!(tape.value(s).item(), 5.0);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_is_usage_error() {
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(Tensor::zeros([2]), true);
        let r = tape.relu(w);
        assert!(matches!(tape.backward(r), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_leaves_forward_values_intact() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new([1, 3], vec![1.0, -1.0, 0.5]).unwrap(), true);
        let lp = tape.log_softmax(x).unwrap();
        let before = tape.value(lp).clone();
        let ce = tape.cross_entropy(lp, &[2]).unwrap();
        tape.backward(ce).unwrap();
        tape.backward(ce).unwrap();
        assert_eq!(tape.value(lp), &before);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new([2], vec![1.0, 2.0]).unwrap(), false);
        let w = tape.leaf(Tensor::new([2], vec![3.0, 4.0]).unwrap(), true);
        let p = tape.mul(x, w).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn out_of_range_label_is_input_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros([2, 3]), false);
        let lp = tape.log_softmax(x).unwrap();
        assert!(matches!(tape.cross_entropy(lp, &[0, 3]), Err(Error::Input(_))));
        assert!(matches!(tape.cross_entropy(lp, &[0]), Err(Error::Input(_))));
    }
}
