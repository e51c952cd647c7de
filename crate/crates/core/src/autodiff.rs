//! Scalar reverse-mode automatic differentiation on an append-only tape.
//!
//! Every operation appends a node holding its value, its parents and the
//! numeric local partials. Two reverse sweeps are available:
//!
//! * [`gradient`] accumulates plain `f64` adjoints and is what optimizers use.
//! * [`derivative_graph`] accumulates adjoints *as new tape nodes*, so the
//!   derivative it returns is itself differentiable. Calling it twice gives
//!   second derivatives, and a later [`gradient`] call flows through both
//!   levels (reverse-over-reverse).
//!
//! ```
//! use yo_pinn::autodiff::{derivative_graph, gradient, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.var(2.0);
//! let y = x.powi(3);
//! let dy = derivative_graph(y, x).unwrap();
//! let d2y = derivative_graph(dy, x).unwrap();
//! assert_eq!(dy.value(), 12.0);
//! assert_eq!(d2y.value(), 12.0);
//! assert_eq!(gradient(d2y, &[x]).unwrap(), vec![6.0]);
//! ```

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

/// Floor added to denominators of relative comparisons.
pub const REL_EPS: f64 = 1e-12;

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("value from tape generation {found} combined on tape generation {expected}")]
    GenerationMismatch { expected: u64, found: u64 },
    #[error("{kind:?} takes {expected} inputs, got {got}")]
    Arity {
        kind: OpKind,
        expected: usize,
        got: usize,
    },
    #[error("{inputs} inputs but {partials} partials")]
    PartialCount { inputs: usize, partials: usize },
    #[error("node {0} is not an input leaf")]
    NotALeaf(usize),
    #[error("non-finite value {value} in {context}")]
    NonFinite { context: String, value: f64 },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}

/// Kind of a recorded operation. The kind decides how the local partials are
/// rebuilt as tape nodes during [`derivative_graph`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    Shift(f64),
    Powi(i32),
    Tanh,
    Exp,
    Ln,
    Sin,
    Cos,
    Sqrt,
    /// User-supplied partials. Nested derivatives treat them as constants.
    Custom,
}

impl OpKind {
    fn arity(self) -> Option<usize> {
        match self {
            OpKind::Leaf | OpKind::Constant => Some(0),
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => Some(2),
            OpKind::Custom => None,
            _ => Some(1),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    kind: OpKind,
    value: f64,
    first_edge: usize,
    arity: usize,
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    parent: usize,
    partial: f64,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

/// Append-only computation tape. Parents always precede their children.
pub struct Tape {
    generation: u64,
    inner: RefCell<Inner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("generation", &self.generation)
            .field("len", &self.len())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            generation: NEXT_GENERATION.fetch_add(1, Ordering::Relaxed),
            inner: RefCell::new(Inner::default()),
        }
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every node and moves the tape to a fresh generation.
    pub fn reset(&mut self) {
        let inner = self.inner.get_mut();
        inner.nodes.clear();
        inner.edges.clear();
        self.generation = NEXT_GENERATION.fetch_add(1, Ordering::Relaxed);
    }

    /// New input leaf; derivatives may be taken with respect to it.
    pub fn var(&self, value: f64) -> DiffValue<'_> {
        self.push(OpKind::Leaf, &[], value)
    }

    pub fn constant(&self, value: f64) -> DiffValue<'_> {
        self.push(OpKind::Constant, &[], value)
    }

    /// Appends a node of the given kind with explicit numeric partials.
    pub fn record<'t>(
        &'t self,
        kind: OpKind,
        inputs: &[DiffValue<'t>],
        value: f64,
        partials: &[f64],
    ) -> Result<DiffValue<'t>, AdError> {
        if let Some(expected) = kind.arity() {
            if expected != inputs.len() {
                return Err(AdError::Arity {
                    kind,
                    expected,
                    got: inputs.len(),
                });
            }
        }
        if inputs.len() != partials.len() {
            return Err(AdError::PartialCount {
                inputs: inputs.len(),
                partials: partials.len(),
            });
        }
        let mut edges = Vec::with_capacity(inputs.len());
        for (input, &partial) in inputs.iter().zip(partials) {
            self.check(input)?;
            edges.push(Edge {
                parent: input.id,
                partial,
            });
        }
        Ok(self.push_edges(kind, &edges, value))
    }

    fn check(&self, value: &DiffValue<'_>) -> Result<(), AdError> {
        if value.generation != self.generation || !std::ptr::eq(value.tape, self) {
            return Err(AdError::GenerationMismatch {
                expected: self.generation,
                found: value.generation,
            });
        }
        Ok(())
    }

    fn push(&self, kind: OpKind, parents: &[(DiffValue<'_>, f64)], value: f64) -> DiffValue<'_> {
        let mut edges = [Edge {
            parent: 0,
            partial: 0.0,
        }; 2];
        for (slot, (p, partial)) in edges.iter_mut().zip(parents) {
            if let Err(e) = self.check(p) {
                panic!("{e}");
            }
            *slot = Edge {
                parent: p.id,
                partial: *partial,
            };
        }
        self.push_edges(kind, &edges[..parents.len()], value)
    }

    fn push_edges(&self, kind: OpKind, edges: &[Edge], value: f64) -> DiffValue<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        let first_edge = inner.edges.len();
        inner.edges.extend_from_slice(edges);
        inner.nodes.push(Node {
            kind,
            value,
            first_edge,
            arity: edges.len(),
        });
        DiffValue {
            tape: self,
            generation: self.generation,
            id,
            value,
        }
    }

    fn handle(&self, id: usize) -> DiffValue<'_> {
        let value = self.inner.borrow().nodes[id].value;
        DiffValue {
            tape: self,
            generation: self.generation,
            id,
            value,
        }
    }
}

/// A differentiable scalar living on a [`Tape`].
///
/// Arithmetic between values of different tapes panics; use
/// [`Tape::record`] for the fallible path.
#[derive(Clone, Copy)]
pub struct DiffValue<'t> {
    tape: &'t Tape,
    generation: u64,
    id: usize,
    value: f64,
}

impl fmt::Debug for DiffValue<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DiffValue({} @ {}:{})", self.value, self.generation, self.id)
    }
}

impl<'t> DiffValue<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn is_leaf(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].kind == OpKind::Leaf
    }

    fn unary(self, kind: OpKind, value: f64, partial: f64) -> Self {
        self.tape.push(kind, &[(self, partial)], value)
    }

    pub fn scale(self, c: f64) -> Self {
        self.unary(OpKind::Scale(c), self.value * c, c)
    }

    pub fn shift(self, c: f64) -> Self {
        self.unary(OpKind::Shift(c), self.value + c, 1.0)
    }

    pub fn powi(self, n: i32) -> Self {
        let partial = if n == 0 {
            0.0
        } else {
            n as f64 * self.value.powi(n - 1)
        };
        self.unary(OpKind::Powi(n), self.value.powi(n), partial)
    }

    pub fn square(self) -> Self {
        self.powi(2)
    }

    pub fn tanh(self) -> Self {
        let y = self.value.tanh();
        self.unary(OpKind::Tanh, y, 1.0 - y * y)
    }

    pub fn exp(self) -> Self {
        let y = self.value.exp();
        self.unary(OpKind::Exp, y, y)
    }

    pub fn ln(self) -> Self {
        self.unary(OpKind::Ln, self.value.ln(), 1.0 / self.value)
    }

    pub fn sin(self) -> Self {
        self.unary(OpKind::Sin, self.value.sin(), self.value.cos())
    }

    pub fn cos(self) -> Self {
        self.unary(OpKind::Cos, self.value.cos(), -self.value.sin())
    }

    pub fn sqrt(self) -> Self {
        let y = self.value.sqrt();
        self.unary(OpKind::Sqrt, y, 0.5 / y)
    }

    pub fn recip(self) -> Self {
        self.powi(-1)
    }
}

impl<'t> Add for DiffValue<'t> {
    type Output = DiffValue<'t>;
    fn add(self, rhs: Self) -> Self {
        self.tape
            .push(OpKind::Add, &[(self, 1.0), (rhs, 1.0)], self.value + rhs.value)
    }
}

impl<'t> Sub for DiffValue<'t> {
    type Output = DiffValue<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.tape
            .push(OpKind::Sub, &[(self, 1.0), (rhs, -1.0)], self.value - rhs.value)
    }
}

impl<'t> Mul for DiffValue<'t> {
    type Output = DiffValue<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.tape.push(
            OpKind::Mul,
            &[(self, rhs.value), (rhs, self.value)],
            self.value * rhs.value,
        )
    }
}

impl<'t> Div for DiffValue<'t> {
    type Output = DiffValue<'t>;
    fn div(self, rhs: Self) -> Self {
        let y = self.value / rhs.value;
        self.tape.push(
            OpKind::Div,
            &[(self, 1.0 / rhs.value), (rhs, -y / rhs.value)],
            y,
        )
    }
}

impl<'t> Neg for DiffValue<'t> {
    type Output = DiffValue<'t>;
    fn neg(self) -> Self {
        self.unary(OpKind::Neg, -self.value, -1.0)
    }
}

impl<'t> Add<f64> for DiffValue<'t> {
    type Output = DiffValue<'t>;
    fn add(self, rhs: f64) -> Self {
        self.shift(rhs)
    }
}

impl<'t> Add<DiffValue<'t>> for f64 {
    type Output = DiffValue<'t>;
    fn add(self, rhs: DiffValue<'t>) -> DiffValue<'t> {
        rhs.shift(self)
    }
}

impl<'t> Sub<f64> for DiffValue<'t> {
    type Output = DiffValue<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.shift(-rhs)
    }
}

impl<'t> Sub<DiffValue<'t>> for f64 {
    type Output = DiffValue<'t>;
    fn sub(self, rhs: DiffValue<'t>) -> DiffValue<'t> {
        (-rhs).shift(self)
    }
}

impl<'t> Mul<f64> for DiffValue<'t> {
    type Output = DiffValue<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.scale(rhs)
    }
}

impl<'t> Mul<DiffValue<'t>> for f64 {
    type Output = DiffValue<'t>;
    fn mul(self, rhs: DiffValue<'t>) -> DiffValue<'t> {
        rhs.scale(self)
    }
}

impl<'t> Div<f64> for DiffValue<'t> {
    type Output = DiffValue<'t>;
    fn div(self, rhs: f64) -> Self {
        self.scale(1.0 / rhs)
    }
}

impl<'t> Div<DiffValue<'t>> for f64 {
    type Output = DiffValue<'t>;
    fn div(self, rhs: DiffValue<'t>) -> DiffValue<'t> {
        rhs.recip().scale(self)
    }
}

/// Sum of a non-empty slice of values, or a constant zero.
pub fn sum<'t>(tape: &'t Tape, values: &[DiffValue<'t>]) -> DiffValue<'t> {
    match values.split_first() {
        None => tape.constant(0.0),
        Some((first, rest)) => rest.iter().fold(*first, |acc, &v| acc + v),
    }
}

/// Partial derivative of `output` with respect to each entry of `wrt`,
/// from one reverse sweep over the tape. Unreachable values get 0.
pub fn gradient(output: DiffValue<'_>, wrt: &[DiffValue<'_>]) -> Result<Vec<f64>, AdError> {
    let tape = output.tape;
    tape.check(&output)?;
    for w in wrt {
        tape.check(w)?;
    }
    let inner = tape.inner.borrow();
    let mut adjoint = vec![0.0; output.id + 1];
    adjoint[output.id] = 1.0;
    for id in (0..=output.id).rev() {
        let a = adjoint[id];
        if a == 0.0 {
            continue;
        }
        let node = inner.nodes[id];
        for edge in &inner.edges[node.first_edge..node.first_edge + node.arity] {
            adjoint[edge.parent] += edge.partial * a;
        }
    }
    wrt.iter()
        .map(|w| {
            let g = adjoint.get(w.id).copied().unwrap_or(0.0);
            if g.is_finite() {
                Ok(g)
            } else {
                Err(AdError::NonFinite {
                    context: format!("gradient entry for node {}", w.id),
                    value: g,
                })
            }
        })
        .collect()
}

enum Partial<'t> {
    Const(f64),
    Node(DiffValue<'t>),
}

fn graph_partial<'t>(
    tape: &'t Tape,
    kind: OpKind,
    node: usize,
    parents: &[usize],
    slot: usize,
    stored: f64,
) -> Partial<'t> {
    let parent = |k: usize| tape.handle(parents[k]);
    match kind {
        OpKind::Add | OpKind::Shift(_) => Partial::Const(1.0),
        OpKind::Sub => Partial::Const(if slot == 0 { 1.0 } else { -1.0 }),
        OpKind::Neg => Partial::Const(-1.0),
        OpKind::Scale(c) => Partial::Const(c),
        OpKind::Custom | OpKind::Leaf | OpKind::Constant => Partial::Const(stored),
        OpKind::Mul => Partial::Node(parent(1 - slot)),
        OpKind::Div => {
            let b = parent(1);
            if slot == 0 {
                Partial::Node(b.recip())
            } else {
                Partial::Node(-(tape.handle(node) / b))
            }
        }
        OpKind::Powi(n) => match n {
            0 => Partial::Const(0.0),
            1 => Partial::Const(1.0),
            _ => Partial::Node(parent(0).powi(n - 1).scale(n as f64)),
        },
        OpKind::Tanh => {
            let y = tape.handle(node);
            Partial::Node(1.0 - y * y)
        }
        OpKind::Exp => Partial::Node(tape.handle(node)),
        OpKind::Ln => Partial::Node(parent(0).recip()),
        OpKind::Sin => Partial::Node(parent(0).cos()),
        OpKind::Cos => Partial::Node(-parent(0).sin()),
        OpKind::Sqrt => Partial::Node(tape.handle(node).recip().scale(0.5)),
    }
}

/// Derivative of `output` with respect to the leaf `wrt`, built from tape
/// operations so it can be differentiated again.
pub fn derivative_graph<'t>(
    output: DiffValue<'t>,
    wrt: DiffValue<'t>,
) -> Result<DiffValue<'t>, AdError> {
    let tape = output.tape;
    tape.check(&output)?;
    tape.check(&wrt)?;
    if !wrt.is_leaf() {
        return Err(AdError::NotALeaf(wrt.id));
    }
    if wrt.id > output.id {
        return Ok(tape.constant(0.0));
    }

    // Snapshot of the sub-tape between wrt and output, restricted to nodes
    // that depend on wrt.
    let base = wrt.id;
    let span = output.id - base + 1;
    let mut depends = vec![false; span];
    depends[0] = true;
    let mut kinds = Vec::with_capacity(span);
    let mut parents: Vec<Vec<usize>> = Vec::with_capacity(span);
    let mut partials: Vec<Vec<f64>> = Vec::with_capacity(span);
    {
        let inner = tape.inner.borrow();
        for id in base..=output.id {
            let node = inner.nodes[id];
            let edges = &inner.edges[node.first_edge..node.first_edge + node.arity];
            if id > base {
                depends[id - base] = edges
                    .iter()
                    .any(|e| e.parent >= base && depends[e.parent - base]);
            }
            kinds.push(node.kind);
            parents.push(edges.iter().map(|e| e.parent).collect());
            partials.push(edges.iter().map(|e| e.partial).collect());
        }
    }
    if !depends[span - 1] {
        return Ok(tape.constant(0.0));
    }

    let mut adjoint: Vec<Option<DiffValue<'t>>> = vec![None; span];
    adjoint[span - 1] = Some(tape.constant(1.0));
    for local in (1..span).rev() {
        let Some(adj) = adjoint[local] else { continue };
        if !depends[local] {
            continue;
        }
        let id = base + local;
        for (slot, &parent) in parents[local].iter().enumerate() {
            if parent < base || !depends[parent - base] {
                continue;
            }
            let contribution = match graph_partial(
                tape,
                kinds[local],
                id,
                &parents[local],
                slot,
                partials[local][slot],
            ) {
                Partial::Const(c) if c == 1.0 => adj,
                Partial::Const(c) => adj.scale(c),
                Partial::Node(p) => p * adj,
            };
            let entry = &mut adjoint[parent - base];
            *entry = Some(match *entry {
                Some(prev) => prev + contribution,
                None => contribution,
            });
        }
    }
    Ok(adjoint[0].unwrap_or_else(|| tape.constant(0.0)))
}

/// Compares the reverse-mode gradient of `f` at `point` against central
/// finite differences and returns the largest relative deviation
/// `|analytic - fd| / (|analytic| + REL_EPS)`.
pub fn check_gradient_fd<F>(f: F, point: &[f64], step: f64) -> Result<f64, AdError>
where
    F: for<'t> Fn(&'t Tape, &[DiffValue<'t>]) -> DiffValue<'t>,
{
    if !(step > 0.0) {
        return Err(AdError::InvalidStep(step));
    }
    let eval = |p: &[f64]| -> Result<f64, AdError> {
        let tape = Tape::new();
        let vars: Vec<_> = p.iter().map(|&v| tape.var(v)).collect();
        let y = f(&tape, &vars).value();
        if y.is_finite() {
            Ok(y)
        } else {
            Err(AdError::NonFinite {
                context: "objective".into(),
                value: y,
            })
        }
    };
    let analytic = {
        let tape = Tape::new();
        let vars: Vec<_> = point.iter().map(|&v| tape.var(v)).collect();
        let y = f(&tape, &vars);
        if !y.value().is_finite() {
            return Err(AdError::NonFinite {
                context: "objective".into(),
                value: y.value(),
            });
        }
        gradient(y, &vars)?
    };
    let mut worst = 0.0f64;
    let mut probe = point.to_vec();
    for (i, &g) in analytic.iter().enumerate() {
        probe[i] = point[i] + step;
        let plus = eval(&probe)?;
        probe[i] = point[i] - step;
        let minus = eval(&probe)?;
        probe[i] = point[i];
        let fd = (plus - minus) / (2.0 * step);
        worst = worst.max((g - fd).abs() / (g.abs() + REL_EPS));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_mul_partials() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let y = tape.var(3.0);
        let z = tape.record(OpKind::Mul, &[x, y], 6.0, &[3.0, 2.0]).unwrap();
        assert_eq!(z.value(), 6.0);
        assert_eq!(gradient(z, &[x, y]).unwrap(), vec![3.0, 2.0]);
    }

    #[test]
    fn record_tanh_and_exp() {
        let tape = Tape::new();
        let x = tape.var(0.0);
        let t = tape.record(OpKind::Tanh, &[x], 0.0, &[1.0]).unwrap();
        assert_eq!(gradient(t, &[x]).unwrap(), vec![1.0]);

        let x = tape.var(0.1);
        let e = 0.1f64.exp();
        let y = tape.record(OpKind::Exp, &[x], e, &[e]).unwrap();
        assert_eq!(gradient(y, &[x]).unwrap()[0], y.value());
    }

    #[test]
    fn record_rejects_bad_shapes_and_foreign_values() {
        let tape = Tape::new();
        let other = Tape::new();
        let x = tape.var(1.0);
        let y = other.var(1.0);
        assert!(matches!(
            tape.record(OpKind::Mul, &[x, y], 1.0, &[1.0, 1.0]),
            Err(AdError::GenerationMismatch { .. })
        ));
        assert!(matches!(
            tape.record(OpKind::Custom, &[x], 1.0, &[]),
            Err(AdError::PartialCount { .. })
        ));
        assert!(matches!(
            tape.record(OpKind::Tanh, &[x, x], 1.0, &[1.0, 1.0]),
            Err(AdError::Arity { .. })
        ));
    }

    #[test]
    #[should_panic(expected = "tape generation")]
    fn operator_mixing_tapes_panics() {
        let a = Tape::new();
        let b = Tape::new();
        let _ = a.var(1.0) + b.var(2.0);
    }

    #[test]
    fn reset_moves_to_new_generation() {
        let mut tape = Tape::new();
        let g0 = tape.generation();
        let _ = tape.var(1.0);
        tape.reset();
        assert!(tape.is_empty());
        assert_ne!(tape.generation(), g0);
    }

    #[test]
    fn product_gradient() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let y = tape.var(3.0);
        assert_eq!(gradient(x * y, &[x, y]).unwrap(), vec![3.0, 2.0]);
    }

    #[test]
    fn half_square_norm_gradient_is_identity() {
        let tape = Tape::new();
        let w: Vec<_> = [0.3, -1.2, 4.0, 0.0].iter().map(|&v| tape.var(v)).collect();
        let squares: Vec<_> = w.iter().map(|v| v.square()).collect();
        let out = sum(&tape, &squares).scale(0.5);
        let g = gradient(out, &w).unwrap();
        for (gi, wi) in g.iter().zip(&w) {
            assert_eq!(*gi, wi.value());
        }
    }

    #[test]
    fn unreachable_leaf_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.var(1.5);
        let unused = tape.var(7.0);
        let y = x.sin() * x;
        assert_eq!(gradient(y, &[unused]).unwrap(), vec![0.0]);
        assert_eq!(derivative_graph(y, unused).unwrap().value(), 0.0);
    }

    #[test]
    fn cubic_second_derivative() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let d1 = derivative_graph(x.powi(3), x).unwrap();
        let d2 = derivative_graph(d1, x).unwrap();
        assert_eq!(d2.value(), 12.0);
    }

    #[test]
    fn sin_times_t_curvature_at_origin() {
        let tape = Tape::new();
        let x = tape.var(0.0);
        let t = tape.var(1.0);
        let f = x.sin() * t;
        let fx = derivative_graph(f, x).unwrap();
        let fxx = derivative_graph(fx, x).unwrap();
        assert_eq!(fxx.value(), 0.0);
        assert_eq!(fx.value(), 1.0);
    }

    #[test]
    fn derivative_wrt_non_leaf_is_an_error() {
        let tape = Tape::new();
        let x = tape.var(1.0);
        let y = x.exp();
        assert!(matches!(
            derivative_graph(y * y, y),
            Err(AdError::NotALeaf(_))
        ));
        let c = tape.constant(2.0);
        assert!(matches!(derivative_graph(c * x, c), Err(AdError::NotALeaf(_))));
    }

    #[test]
    fn nested_derivatives_of_every_builtin() {
        // f = tanh(x) + exp(x)/x + ln(x)*cos(x) + sqrt(x) - 3x^4
        let x0 = 0.7f64;
        let tape = Tape::new();
        let x = tape.var(x0);
        let f = x.tanh() + x.exp() / x + x.ln() * x.cos() + x.sqrt() - x.powi(4).scale(3.0);
        let d1 = derivative_graph(f, x).unwrap();
        let d2 = derivative_graph(d1, x).unwrap();

        let th = x0.tanh();
        let sech2 = 1.0 - th * th;
        let e = x0.exp();
        let f1 = sech2 + e / x0 - e / (x0 * x0) + x0.cos() / x0 - x0.ln() * x0.sin()
            + 0.5 / x0.sqrt()
            - 12.0 * x0.powi(3);
        let f2 = -2.0 * th * sech2 + e / x0 - 2.0 * e / (x0 * x0) + 2.0 * e / x0.powi(3)
            - x0.cos() / (x0 * x0)
            - 2.0 * x0.sin() / x0
            - x0.ln() * x0.cos()
            - 0.25 * x0.powf(-1.5)
            - 36.0 * x0 * x0;
        assert!((d1.value() - f1).abs() < 1e-12 * f1.abs().max(1.0));
        assert!((d2.value() - f2).abs() < 1e-12 * f2.abs().max(1.0));
    }

    #[test]
    fn gradient_flows_through_second_derivative() {
        // g(x, w) = w * x^3 ; d2g/dx2 = 6 w x ; d/dw of that = 6x
        let tape = Tape::new();
        let x = tape.var(1.5);
        let w = tape.var(-2.0);
        let g = w * x.powi(3);
        let gx = derivative_graph(g, x).unwrap();
        let gxx = derivative_graph(gx, x).unwrap();
        assert_eq!(gxx.value(), 6.0 * -2.0 * 1.5);
        let grad = gradient(gxx, &[w, x]).unwrap();
        assert_eq!(grad, vec![9.0, -12.0]);
    }

    #[test]
    fn custom_op_partials_are_constant_in_nested_sweeps() {
        let tape = Tape::new();
        let x = tape.var(3.0);
        let y = tape.record(OpKind::Custom, &[x], 9.0, &[6.0]).unwrap();
        let dy = derivative_graph(y, x).unwrap();
        assert_eq!(dy.value(), 6.0);
        assert_eq!(derivative_graph(dy, x).unwrap().value(), 0.0);
    }

    #[test]
    fn fd_check_on_quadratic_form() {
        let q = [[2.0, 0.5, 0.0], [0.5, 1.0, -0.3], [0.0, -0.3, 3.0]];
        let dev = check_gradient_fd(
            |tape, v| {
                let mut terms = Vec::new();
                for i in 0..3 {
                    for j in 0..3 {
                        terms.push((v[i] * v[j]).scale(q[i][j]));
                    }
                }
                sum(tape, &terms).scale(0.5)
            },
            &[0.4, -1.1, 2.3],
            1e-4,
        )
        .unwrap();
        assert!(dev < 1e-9, "deviation {dev}");
    }

    #[test]
    fn fd_check_rejects_bad_step_and_nan() {
        assert!(matches!(
            check_gradient_fd(|_, v| v[0], &[1.0], 0.0),
            Err(AdError::InvalidStep(_))
        ));
        assert!(matches!(
            check_gradient_fd(|_, v| v[0].ln(), &[-1.0], 1e-3),
            Err(AdError::NonFinite { .. })
        ));
    }
}
