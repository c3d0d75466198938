//! Reverse-mode differentiation over a linear tape.
//!
//! Values flow through [`Var`] (real) and [`CVar`] (complex) handles. A value
//! carries a node id only when it was produced on a recording tape from at
//! least one tracked input; everything else is a constant and costs nothing
//! at backward time. Each recorded node owns a [`Backward`] rule holding
//! whatever it saved during the forward pass.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ops;
use crate::param::{ParamId, ParameterRegistry};
use crate::tensor::{ComplexTensor4, Dims, RealTensor4};

pub type NodeId = usize;

/// Gradient flowing into a node. Complex gradients use the convention
/// `dL/dRe + j dL/dIm`.
#[derive(Clone, Debug)]
pub enum Grad {
    Real(RealTensor4),
    Complex(ComplexTensor4),
}

impl Grad {
    pub fn real(&self) -> Result<&RealTensor4> {
        match self {
            Grad::Real(t) => Ok(t),
            Grad::Complex(_) => Err(Error::Tape("expected a real gradient, found complex".into())),
        }
    }

    pub fn complex(&self) -> Result<&ComplexTensor4> {
        match self {
            Grad::Complex(t) => Ok(t),
            Grad::Real(_) => Err(Error::Tape("expected a complex gradient, found real".into())),
        }
    }

    fn accumulate(slot: &mut Option<Grad>, g: Grad) -> Result<()> {
        match (slot.as_mut(), g) {
            (None, g) => *slot = Some(g),
            (Some(Grad::Real(a)), Grad::Real(b)) => a.add_assign(&b),
            (Some(Grad::Complex(a)), Grad::Complex(b)) => a.add_assign(&b),
            _ => return Err(Error::Tape("mixed real/complex gradient for one node".into())),
        }
        Ok(())
    }
}

/// Backward rule of one recorded operation.
pub trait Backward {
    fn name(&self) -> &'static str;

    /// Gradients for each input, given the gradient of the output. Entries for
    /// inputs with `need[i] == false` may be `None`.
    fn backward(&self, grad_out: &Grad, need: &[bool]) -> Result<Vec<Option<Grad>>>;
}

enum NodeKind {
    Leaf,
    Param(ParamId),
    Op(Box<dyn Backward>),
}

struct Node {
    inputs: Vec<Option<NodeId>>,
    kind: NodeKind,
}

/// A real-valued tape handle.
#[derive(Clone, Debug)]
pub struct Var {
    value: Arc<RealTensor4>,
    node: Option<NodeId>,
}

impl Var {
    pub fn value(&self) -> &RealTensor4 {
        &self.value
    }
    pub fn arc(&self) -> Arc<RealTensor4> {
        Arc::clone(&self.value)
    }
    pub fn dims(&self) -> Dims {
        self.value.dims()
    }
    pub fn node(&self) -> Option<NodeId> {
        self.node
    }
    pub fn into_value(self) -> RealTensor4 {
        Arc::try_unwrap(self.value).unwrap_or_else(|a| (*a).clone())
    }
}

/// A complex-valued tape handle.
#[derive(Clone, Debug)]
pub struct CVar {
    value: Arc<ComplexTensor4>,
    node: Option<NodeId>,
}

impl CVar {
    pub fn value(&self) -> &ComplexTensor4 {
        &self.value
    }
    pub fn arc(&self) -> Arc<ComplexTensor4> {
        Arc::clone(&self.value)
    }
    pub fn dims(&self) -> Dims {
        self.value.dims()
    }
    pub fn node(&self) -> Option<NodeId> {
        self.node
    }
}

/// Gradients produced by one [`Tape::backward`] call.
pub struct Gradients {
    grads: Vec<Option<Grad>>,
    visited: Vec<NodeId>,
}

impl Gradients {
    pub fn get(&self, v: &Var) -> Option<&RealTensor4> {
        match self.grads.get(v.node?)?.as_ref()? {
            Grad::Real(t) => Some(t),
            Grad::Complex(_) => None,
        }
    }

    pub fn get_complex(&self, v: &CVar) -> Option<&ComplexTensor4> {
        match self.grads.get(v.node?)?.as_ref()? {
            Grad::Complex(t) => Some(t),
            Grad::Real(_) => None,
        }
    }

    /// Node ids in the order their backward rules ran.
    pub fn visit_order(&self) -> &[NodeId] {
        &self.visited
    }
}

/// Records differentiable operations. An inference tape records nothing.
pub struct Tape {
    recording: bool,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            recording: true,
            nodes: Vec::new(),
        }
    }

    pub fn inference() -> Self {
        Tape {
            recording: false,
            nodes: Vec::new(),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Untracked value.
    pub fn constant(&self, t: RealTensor4) -> Var {
        Var {
            value: Arc::new(t),
            node: None,
        }
    }

    pub fn constant_complex(&self, t: ComplexTensor4) -> CVar {
        CVar {
            value: Arc::new(t),
            node: None,
        }
    }

    /// Tracked input whose gradient can be read back from [`Gradients`].
    pub fn leaf(&mut self, t: RealTensor4) -> Var {
        let node = self.push(Vec::new(), NodeKind::Leaf);
        Var {
            value: Arc::new(t),
            node,
        }
    }

    pub fn leaf_complex(&mut self, t: ComplexTensor4) -> CVar {
        let node = self.push(Vec::new(), NodeKind::Leaf);
        CVar {
            value: Arc::new(t),
            node,
        }
    }

    /// Bring a registry parameter onto the tape. Frozen parameters enter as constants.
    pub fn param(&mut self, registry: &ParameterRegistry, id: ParamId) -> Var {
        let p = registry.get(id);
        let node = if p.trainable {
            self.push(Vec::new(), NodeKind::Param(id))
        } else {
            None
        };
        Var {
            value: p.value_arc(),
            node,
        }
    }

    fn push(&mut self, inputs: Vec<Option<NodeId>>, kind: NodeKind) -> Option<NodeId> {
        if !self.recording {
            return None;
        }
        self.nodes.push(Node { inputs, kind });
        Some(self.nodes.len() - 1)
    }

    /// Record an operation whose output depends on `inputs`. Returns `None`
    /// (a constant output) when not recording or when no input is tracked.
    pub fn record<B: Backward + 'static>(&mut self, inputs: &[Option<NodeId>], op: B) -> Option<NodeId> {
        if !self.recording || inputs.iter().all(Option::is_none) {
            return None;
        }
        self.push(inputs.to_vec(), NodeKind::Op(Box::new(op)))
    }

    pub fn wrap(&self, value: RealTensor4, node: Option<NodeId>) -> Var {
        Var {
            value: Arc::new(value),
            node,
        }
    }

    pub fn wrap_complex(&self, value: ComplexTensor4, node: Option<NodeId>) -> CVar {
        CVar {
            value: Arc::new(value),
            node,
        }
    }

    /// Backpropagate from a scalar `loss`, adding parameter gradients into
    /// `registry`. Calling it twice accumulates twice.
    pub fn backward(&self, loss: &Var, registry: &mut ParameterRegistry) -> Result<Gradients> {
        let root = loss
            .node
            .ok_or_else(|| Error::Tape("backward on a value with no recorded forward pass".into()))?;
        if root >= self.nodes.len() {
            return Err(Error::Tape("loss does not belong to this tape".into()));
        }
        if loss.value.len() != 1 {
            return Err(Error::Tape(format!("loss must be a scalar, got dims {}", loss.dims())));
        }
        let mut grads: Vec<Option<Grad>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Grad::Real(RealTensor4::full(loss.dims(), 1.0)));
        let mut visited = Vec::new();
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            visited.push(id);
            let node = &self.nodes[id];
            match &node.kind {
                NodeKind::Leaf => {}
                NodeKind::Param(pid) => {
                    let p = registry.get_mut(*pid);
                    let g = g.real()?;
                    if g.dims() != p.dims() {
                        return Err(Error::Tape(format!("gradient {} for parameter {}", g.dims(), p.name())));
                    }
                    p.grad_mut().add_assign(g);
                }
                NodeKind::Op(op) => {
                    let need: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
                    let ins = op.backward(&g, &need)?;
                    if ins.len() != node.inputs.len() {
                        return Err(Error::Tape(format!("{} returned {} gradients", op.name(), ins.len())));
                    }
                    for (input, gin) in node.inputs.iter().zip(ins) {
                        if let (Some(i), Some(gin)) = (input, gin) {
                            Grad::accumulate(&mut grads[*i], gin)?;
                        }
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }
}

fn real_out(g: &Grad) -> Result<&RealTensor4> {
    g.real()
}

// ---------------------------------------------------------------------------
// Recorded real-valued operations.

struct Conv2dOp {
    x: Arc<RealTensor4>,
    w: Arc<RealTensor4>,
    b: Arc<RealTensor4>,
    stride: usize,
    pad: usize,
}

impl Backward for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn backward(&self, g: &Grad, need: &[bool]) -> Result<Vec<Option<Grad>>> {
        let gs = ops::conv2d_backward(&self.x, &self.w, &self.b, self.stride, self.pad, real_out(g)?, [need[0], need[1], need[2]])?;
        Ok(gs.into_iter().map(|o| o.map(Grad::Real)).collect())
    }
}

struct ConvTransposeOp {
    x: Arc<RealTensor4>,
    w: Arc<RealTensor4>,
    b: Arc<RealTensor4>,
}

impl Backward for ConvTransposeOp {
    fn name(&self) -> &'static str {
        "conv_transpose2x2"
    }
    fn backward(&self, g: &Grad, need: &[bool]) -> Result<Vec<Option<Grad>>> {
        let gs = ops::conv_transpose2x2_backward(&self.x, &self.w, &self.b, real_out(g)?, [need[0], need[1], need[2]])?;
        Ok(gs.into_iter().map(|o| o.map(Grad::Real)).collect())
    }
}

/// Routes each output gradient to one flat input index.
struct GatherOp {
    name: &'static str,
    input_dims: Dims,
    index: Vec<usize>,
}

impl Backward for GatherOp {
    fn name(&self) -> &'static str {
        self.name
    }
    fn backward(&self, g: &Grad, _need: &[bool]) -> Result<Vec<Option<Grad>>> {
        let g = real_out(g)?;
        let mut gx = RealTensor4::zeros(self.input_dims);
        for (&i, &v) in self.index.iter().zip(g.data()) {
            gx.data_mut()[i] += v;
        }
        Ok(vec![Some(Grad::Real(gx))])
    }
}

struct GapOp {
    input_dims: Dims,
}

impl Backward for GapOp {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }
    fn backward(&self, g: &Grad, _need: &[bool]) -> Result<Vec<Option<Grad>>> {
        let g = real_out(g)?;
        let d = self.input_dims;
        let inv = 1.0 / d.plane() as f64;
        let gx = RealTensor4::from_fn(d, |[n, c, _, _]| g.at(n, c, 0, 0) * inv);
        Ok(vec![Some(Grad::Real(gx))])
    }
}

struct ChannelMeanOp {
    input_dims: Dims,
}

impl Backward for ChannelMeanOp {
    fn name(&self) -> &'static str {
        "channel_mean"
    }
    fn backward(&self, g: &Grad, _need: &[bool]) -> Result<Vec<Option<Grad>>> {
        let g = real_out(g)?;
        let d = self.input_dims;
        let inv = 1.0 / d.c() as f64;
        let gx = RealTensor4::from_fn(d, |[n, _, h, w]| g.at(n, 0, h, w) * inv);
        Ok(vec![Some(Grad::Real(gx))])
    }
}

/// Elementwise map whose derivative is a function of the saved output.
struct UnaryOp {
    name: &'static str,
    out: Arc<RealTensor4>,
    deriv: fn(f64) -> f64,
}

impl Backward for UnaryOp {
    fn name(&self) -> &'static str {
        self.name
    }
    fn backward(&self, g: &Grad, _need: &[bool]) -> Result<Vec<Option<Grad>>> {
        let g = real_out(g)?;
        let data = g.data().iter().zip(self.out.data()).map(|(gv, y)| gv * (self.deriv)(*y)).collect();
        Ok(vec![Some(Grad::Real(RealTensor4::from_vec(g.dims(), data)?))])
    }
}

struct ConcatOp {
    ca: usize,
    cb: usize,
}

impl Backward for ConcatOp {
    fn name(&self) -> &'static str {
        "concat_channels"
    }
    fn backward(&self, g: &Grad, need: &[bool]) -> Result<Vec<Option<Grad>>> {
        let g = real_out(g)?;
        let ga = if need[0] { Some(Grad::Real(ops::slice_channels(g, 0, self.ca)?)) } else { None };
        let gb = if need[1] { Some(Grad::Real(ops::slice_channels(g, self.ca, self.cb)?)) } else { None };
        Ok(vec![ga, gb])
    }
}

struct SliceOp {
    input_dims: Dims,
    start: usize,
}

impl Backward for SliceOp {
    fn name(&self) -> &'static str {
        "slice_channels"
    }
    fn backward(&self, g: &Grad, _need: &[bool]) -> Result<Vec<Option<Grad>>> {
        let g = real_out(g)?;
        let d = self.input_dims;
        let len = g.dims().c();
        let mut gx = RealTensor4::zeros(d);
        for n in 0..d.n() {
            for c in 0..len {
                gx.plane_mut(n, self.start + c).copy_from_slice(g.plane(n, c));
            }
        }
        Ok(vec![Some(Grad::Real(gx))])
    }
}

struct MulOp {
    x: Arc<RealTensor4>,
    b: Arc<RealTensor4>,
}

impl Backward for MulOp {
    fn name(&self) -> &'static str {
        "broadcast_mul"
    }
    fn backward(&self, g: &Grad, need: &[bool]) -> Result<Vec<Option<Grad>>> {
        let gs = ops::broadcast_mul_backward(&self.x, &self.b, real_out(g)?, [need[0], need[1]])?;
        Ok(gs.into_iter().map(|o| o.map(Grad::Real)).collect())
    }
}

struct AddOp;

impl Backward for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, g: &Grad, need: &[bool]) -> Result<Vec<Option<Grad>>> {
        Ok(need.iter().map(|&n| n.then(|| g.clone())).collect())
    }
}

struct ScaleOp(f64);

impl Backward for ScaleOp {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, g: &Grad, _need: &[bool]) -> Result<Vec<Option<Grad>>> {
        let k = self.0;
        Ok(vec![Some(Grad::Real(real_out(g)?.map(|v| v * k)))])
    }
}

struct SumOp {
    input_dims: Dims,
}

impl Backward for SumOp {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, g: &Grad, _need: &[bool]) -> Result<Vec<Option<Grad>>> {
        let v = real_out(g)?.item()?;
        Ok(vec![Some(Grad::Real(RealTensor4::full(self.input_dims, v)))])
    }
}

struct InterpOp;

impl Backward for InterpOp {
    fn name(&self) -> &'static str {
        "interpolate2x"
    }
    fn backward(&self, g: &Grad, _need: &[bool]) -> Result<Vec<Option<Grad>>> {
        Ok(vec![Some(Grad::Real(ops::interpolate2x_backward(real_out(g)?)))])
    }
}

impl Tape {
    pub fn conv2d(&mut self, x: &Var, w: &Var, b: &Var, stride: usize, pad: usize) -> Result<Var> {
        let out = ops::conv2d(x.value(), w.value(), b.value(), stride, pad)?;
        let node = self.record(
            &[x.node, w.node, b.node],
            Conv2dOp {
                x: x.arc(),
                w: w.arc(),
                b: b.arc(),
                stride,
                pad,
            },
        );
        Ok(self.wrap(out, node))
    }

    pub fn conv_transpose2x2(&mut self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        let out = ops::conv_transpose2x2(x.value(), w.value(), b.value())?;
        let node = self.record(
            &[x.node, w.node, b.node],
            ConvTransposeOp {
                x: x.arc(),
                w: w.arc(),
                b: b.arc(),
            },
        );
        Ok(self.wrap(out, node))
    }

    pub fn maxpool2(&mut self, x: &Var) -> Result<Var> {
        let (out, index) = ops::maxpool2(x.value())?;
        let node = self.record(
            &[x.node],
            GatherOp {
                name: "maxpool2",
                input_dims: x.dims(),
                index,
            },
        );
        Ok(self.wrap(out, node))
    }

    pub fn global_avg_pool(&mut self, x: &Var) -> Var {
        let out = ops::global_avg_pool(x.value());
        let node = self.record(&[x.node], GapOp { input_dims: x.dims() });
        self.wrap(out, node)
    }

    pub fn channel_max(&mut self, x: &Var) -> Var {
        let (out, arg) = ops::channel_max(x.value());
        let d = x.dims();
        let node = if self.recording && x.node.is_some() {
            let plane = d.plane();
            let index = arg
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let (n, p) = (i / plane, i % plane);
                    (n * d.c() + c) * plane + p
                })
                .collect();
            self.record(
                &[x.node],
                GatherOp {
                    name: "channel_max",
                    input_dims: d,
                    index,
                },
            )
        } else {
            None
        };
        self.wrap(out, node)
    }

    pub fn channel_mean(&mut self, x: &Var) -> Var {
        let out = ops::channel_mean(x.value());
        let node = self.record(&[x.node], ChannelMeanOp { input_dims: x.dims() });
        self.wrap(out, node)
    }

    pub fn relu(&mut self, x: &Var) -> Var {
        let out = Arc::new(x.value().map(|v| v.max(0.0)));
        let node = self.record(
            &[x.node],
            UnaryOp {
                name: "relu",
                out: Arc::clone(&out),
                deriv: |y| if y > 0.0 { 1.0 } else { 0.0 },
            },
        );
        Var { value: out, node }
    }

    pub fn sigmoid(&mut self, x: &Var) -> Var {
        let out = Arc::new(x.value().map(sigmoid));
        let node = self.record(
            &[x.node],
            UnaryOp {
                name: "sigmoid",
                out: Arc::clone(&out),
                deriv: |y| y * (1.0 - y),
            },
        );
        Var { value: out, node }
    }

    pub fn concat_channels(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = ops::concat_channels(a.value(), b.value())?;
        let node = self.record(
            &[a.node, b.node],
            ConcatOp {
                ca: a.dims().c(),
                cb: b.dims().c(),
            },
        );
        Ok(self.wrap(out, node))
    }

    pub fn slice_channels(&mut self, x: &Var, start: usize, len: usize) -> Result<Var> {
        let out = ops::slice_channels(x.value(), start, len)?;
        let node = self.record(&[x.node], SliceOp { input_dims: x.dims(), start });
        Ok(self.wrap(out, node))
    }

    /// Split into channels `[0, at)` and `[at, C)`.
    pub fn split_channels(&mut self, x: &Var, at: usize) -> Result<(Var, Var)> {
        let c = x.dims().c();
        if at == 0 || at >= c {
            return Err(Error::InvalidArgument(format!("split_channels: split point {at} must lie in (0, {c})")));
        }
        Ok((self.slice_channels(x, 0, at)?, self.slice_channels(x, at, c - at)?))
    }

    /// `x * b`, broadcasting `b` over its unit axes.
    pub fn mul(&mut self, x: &Var, b: &Var) -> Result<Var> {
        let out = ops::broadcast_mul(x.value(), b.value())?;
        let node = self.record(&[x.node, b.node], MulOp { x: x.arc(), b: b.arc() });
        Ok(self.wrap(out, node))
    }

    pub fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = ops::elementwise::add(a.value(), b.value())?;
        let node = self.record(&[a.node, b.node], AddOp);
        Ok(self.wrap(out, node))
    }

    pub fn scale(&mut self, x: &Var, k: f64) -> Var {
        let out = x.value().map(|v| v * k);
        let node = self.record(&[x.node], ScaleOp(k));
        self.wrap(out, node)
    }

    /// Sum of all elements as a `[1,1,1,1]` scalar.
    pub fn sum(&mut self, x: &Var) -> Var {
        let out = RealTensor4::scalar(x.value().sum());
        let node = self.record(&[x.node], SumOp { input_dims: x.dims() });
        self.wrap(out, node)
    }

    pub fn interpolate2x(&mut self, x: &Var) -> Var {
        let out = ops::interpolate2x(x.value());
        let node = self.record(&[x.node], InterpOp);
        self.wrap(out, node)
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg_with(value: RealTensor4) -> (ParameterRegistry, ParamId) {
        let mut reg = ParameterRegistry::new();
        let id = reg.register("w", value).unwrap();
        (reg, id)
    }

    #[test]
    fn linear_gradient_equals_input() {
        let x = RealTensor4::from_vec([1, 1, 2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap();
        let (mut reg, id) = reg_with(RealTensor4::full([1, 1, 2, 2], 0.3));
        let mut tape = Tape::new();
        let w = tape.param(&reg, id);
        let xv = tape.constant(x.clone());
        let prod = tape.mul(&w, &xv).unwrap();
        let loss = tape.sum(&prod);
        tape.backward(&loss, &mut reg).unwrap();
        assert_eq!(reg.get(id).grad(), &x);
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        let (mut reg, id) = reg_with(RealTensor4::zeros([1, 1, 1, 1]));
        let mut tape = Tape::new();
        let w = tape.param(&reg, id);
        let s = tape.sigmoid(&w);
        tape.backward(&s, &mut reg).unwrap();
        assert_eq!(reg.get(id).grad().data(), &[0.25]);
    }

    #[test]
    fn relu_values() {
        let tape = Tape::inference();
        let x = tape.constant(RealTensor4::from_vec([1, 1, 1, 2], vec![-1.5, 2.0]).unwrap());
        let mut tape = tape;
        assert_eq!(tape.relu(&x).value().data(), &[0.0, 2.0]);
    }

    #[test]
    fn repeated_backward_accumulates_until_zeroed() {
        let (mut reg, id) = reg_with(RealTensor4::full([1, 1, 1, 1], 2.0));
        let mut tape = Tape::new();
        let w = tape.param(&reg, id);
        let y = tape.scale(&w, 3.0);
        tape.backward(&y, &mut reg).unwrap();
        tape.backward(&y, &mut reg).unwrap();
        assert_eq!(reg.get(id).grad().data(), &[6.0]);
        reg.zero_grad();
        assert_eq!(reg.get(id).grad().data(), &[0.0]);
    }

    #[test]
    fn frozen_parameters_untouched() {
        let (mut reg, id) = reg_with(RealTensor4::full([1, 1, 1, 1], 2.0));
        let other = reg.register("v", RealTensor4::full([1, 1, 1, 1], 1.0)).unwrap();
        reg.get_mut(id).trainable = false;
        let mut tape = Tape::new();
        let w = tape.param(&reg, id);
        let v = tape.param(&reg, other);
        let p = tape.mul(&w, &v).unwrap();
        tape.backward(&p, &mut reg).unwrap();
        assert_eq!(reg.get(id).grad().data(), &[0.0]);
        assert_eq!(reg.get(other).grad().data(), &[2.0]);
    }

    #[test]
    fn backward_without_forward_is_error() {
        let mut reg = ParameterRegistry::new();
        let tape = Tape::new();
        let c = tape.constant(RealTensor4::scalar(1.0));
        assert!(matches!(tape.backward(&c, &mut reg), Err(Error::Tape(_))));
        let mut inf = Tape::inference();
        let x = inf.leaf(RealTensor4::scalar(1.0));
        assert!(tape.backward(&x, &mut reg).is_err());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut reg = ParameterRegistry::new();
        let mut tape = Tape::new();
        let x = tape.leaf(RealTensor4::zeros([1, 1, 2, 2]));
        let y = tape.relu(&x);
        assert!(tape.backward(&y, &mut reg).is_err());
    }

    #[test]
    fn visits_each_node_once_in_reverse() {
        let mut reg = ParameterRegistry::new();
        let mut tape = Tape::new();
        let x = tape.leaf(RealTensor4::full([1, 2, 2, 2], 0.5));
        let a = tape.relu(&x);
        let b = tape.sigmoid(&x);
        let c = tape.add(&a, &b).unwrap();
        let d = tape.mul(&c, &a).unwrap();
        let loss = tape.sum(&d);
        let g = tape.backward(&loss, &mut reg).unwrap();
        let order = g.visit_order();
        let mut sorted = order.to_vec();
        sorted.sort_unstable_by(|p, q| q.cmp(p));
        assert_eq!(order, sorted.as_slice());
        sorted.dedup();
        assert_eq!(sorted.len(), order.len());
        assert_eq!(order.len(), tape.len());
    }

    #[test]
    fn inference_tape_records_nothing() {
        let (reg, id) = reg_with(RealTensor4::full([1, 1, 1, 1], 2.0));
        let mut tape = Tape::inference();
        let w = tape.param(&reg, id);
        let y = tape.sigmoid(&w);
        assert!(y.node().is_none());
        assert!(tape.is_empty());
    }
}
