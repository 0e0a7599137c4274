//! Computation skeletons and conjugate activations.
//!
//! A skeleton is a DAG whose nodes `1..=n` are input nodes carrying a
//! [`BaseSpace`] and whose nodes `n+1..=m` are internal nodes carrying a
//! [`ConjugateActivation`] and an in-edge list. The unique sink is the output.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::base_spaces::BaseSpace;
use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Mass below which an exponential series is cut.
const EXP_TAIL: f64 = 1e-18;

/// Tolerance on the coefficient sum of an explicit activation.
const EXPLICIT_SUM_TOL: f64 = 1e-9;

/// Declarative form of an activation, as it appears in skeleton configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationSpec {
    /// `exp(c (rho - 1))`.
    Exp {
        c: f64,
    },
    /// Dual of the ReLU, truncated at `max_degree`.
    Relu {
        max_degree: usize,
    },
    Explicit {
        coeffs: Vec<f64>,
    },
}

/// Which closed form, if any, an activation has.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    Explicit,
    ExpScaled(f64),
    ReluConjugate,
}

/// A PSD function `rho -> sum_i a_i rho^i` with `a_i >= 0`, `sum a_i = 1`,
/// represented by a finite coefficient table and an inverse-CDF sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateActivation {
    coeffs: Vec<f64>,
    cdf: Vec<f64>,
    tail_mass: f64,
    truncated_mass: f64,
    kind: ActivationKind,
    spec: ActivationSpec,
}

impl ConjugateActivation {
    pub fn from_spec(spec: &ActivationSpec) -> Result<Self> {
        match spec {
            ActivationSpec::Exp { c } => Self::exp_scaled(*c),
            ActivationSpec::Relu { max_degree } => Self::relu_conjugate(*max_degree),
            ActivationSpec::Explicit { coeffs } => Self::explicit(coeffs.clone()),
        }
    }

    /// Coefficients given directly. Their sum must be within 1e-9 of one;
    /// the remaining rounding is renormalized away.
    pub fn explicit(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() || coeffs.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::Parameter(
                "explicit coefficients must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = coeffs.iter().sum();
        if (sum - 1.0).abs() > EXPLICIT_SUM_TOL {
            return Err(Error::Parameter(format!(
                "explicit coefficients sum to {sum}, expected 1"
            )));
        }
        Ok(Self::normalized(
            coeffs.clone(),
            ActivationKind::Explicit,
            ActivationSpec::Explicit { coeffs },
        ))
    }

    /// `exp(c (rho - 1)) = e^{-c} sum c^i rho^i / i!`, expanded until the
    /// Poisson tail is below 1e-18.
    pub fn exp_scaled(c: f64) -> Result<Self> {
        if !c.is_finite() || c < 0.0 {
            return Err(Error::Parameter(format!("exp scale must be >= 0, got {c}")));
        }
        let mut coeffs = Vec::new();
        let mut log_fact = 0.0;
        let log_c = c.ln();
        for i in 0usize.. {
            if i > 0 {
                log_fact += (i as f64).ln();
            }
            let a = if c == 0.0 {
                if i == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                (-c + i as f64 * log_c - log_fact).exp()
            };
            coeffs.push(a);
            // tail after i is bounded by a_{i+1} / (1 - c/(i+2)) once i+2 > c
            let next = a * c / (i + 1) as f64;
            let ratio = c / (i + 2) as f64;
            if (i as f64) > c && ratio < 1.0 && next / (1.0 - ratio) < EXP_TAIL {
                break;
            }
        }
        Ok(Self::normalized(
            coeffs,
            ActivationKind::ExpScaled(c),
            ActivationSpec::Exp { c },
        ))
    }

    /// Series of `(sqrt(1 - rho^2) + (pi - arccos rho) rho) / pi` up to
    /// `max_degree`, renormalized to sum to one.
    ///
    /// `a_0 = 1/pi`, `a_1 = 1/2`, `a_{2k} = t_{k-1} / (2k (2k-1) pi)` with
    /// `t_k = C(2k, k) / 4^k`; odd coefficients above one vanish.
    pub fn relu_conjugate(max_degree: usize) -> Result<Self> {
        if max_degree < 2 {
            return Err(Error::Parameter(format!(
                "relu max_degree must be >= 2, got {max_degree}"
            )));
        }
        Ok(Self::normalized(
            relu_series(max_degree),
            ActivationKind::ReluConjugate,
            ActivationSpec::Relu { max_degree },
        ))
    }

    fn normalized(mut coeffs: Vec<f64>, kind: ActivationKind, spec: ActivationSpec) -> Self {
        while coeffs.len() > 1 && coeffs[coeffs.len() - 1] == 0.0 {
            coeffs.pop();
        }
        let raw: f64 = coeffs.iter().sum();
        for a in &mut coeffs {
            *a /= raw;
        }
        let mut acc = 0.0;
        let cdf: Vec<f64> = coeffs
            .iter()
            .map(|a| {
                acc += a;
                acc
            })
            .collect();
        let tail_mass = (1.0 - acc).max(0.0);
        Self {
            coeffs,
            cdf,
            tail_mass,
            truncated_mass: (1.0 - raw).max(0.0),
            kind,
            spec,
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Mass missing from the stored coefficients after renormalization.
    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// Mass that was cut off by truncation before renormalization.
    pub fn truncated_mass(&self) -> f64 {
        self.truncated_mass
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    pub fn spec(&self) -> &ActivationSpec {
        &self.spec
    }

    pub fn max_degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// `sigma'(1) = sum_i i a_i`: the expected degree.
    pub fn sigma_prime_at_one(&self) -> f64 {
        self.coeffs.iter().enumerate().map(|(i, a)| i as f64 * a).sum()
    }

    /// Evaluates the stored (truncated) series by Horner's rule.
    pub fn eval_series(&self, rho: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, a| acc * rho + a)
    }

    /// Evaluates the activation, preferring the closed form when there is one.
    pub fn eval(&self, rho: f64) -> f64 {
        match self.kind {
            ActivationKind::ExpScaled(c) => (c * (rho - 1.0)).exp(),
            ActivationKind::ReluConjugate => relu_closed_form(rho),
            ActivationKind::Explicit => self.eval_series(rho),
        }
    }

    /// Draws a degree `l` with probability `a_l`.
    pub fn sample_degree(&self, rng: &mut RandomStream) -> usize {
        let u = rng.uniform();
        let idx = self.cdf.partition_point(|&c| c <= u);
        if idx < self.cdf.len() {
            idx
        } else {
            // u landed in the rounding gap above the last cdf entry
            self.coeffs.iter().rposition(|&a| a > 0.0).unwrap_or(0)
        }
    }
}

/// `(sqrt(1 - rho^2) + (pi - arccos rho) rho) / pi`.
pub fn relu_closed_form(rho: f64) -> f64 {
    ((1.0 - rho * rho).max(0.0).sqrt() + (PI - rho.acos()) * rho) / PI
}

fn relu_series(max_degree: usize) -> Vec<f64> {
    let mut a = vec![0.0; max_degree + 1];
    a[0] = 1.0 / PI;
    a[1] = 0.5;
    let mut t = 1.0;
    let mut k = 1usize;
    while 2 * k <= max_degree {
        let n = (2 * k) as f64;
        a[2 * k] = t / (n * (n - 1.0) * PI);
        t *= (n - 1.0) / n;
        k += 1;
    }
    a
}

/// Dense 1-based node identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDecl {
    pub id: u32,
    pub space: BaseSpace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InternalDecl {
    pub id: u32,
    pub activation: ActivationSpec,
    #[serde(rename = "in")]
    pub inputs: Vec<u32>,
}

/// The on-disk skeleton description. May be structurally invalid;
/// [`validate`] lists every problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonConfig {
    pub inputs: Vec<InputDecl>,
    #[serde(default)]
    pub internal: Vec<InternalDecl>,
    pub output: u32,
}

impl SkeletonConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// One structural problem with a skeleton description.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateId(u32),
    /// Input ids must be `1..=n` and internal ids `n+1..=m`.
    NonDenseIds {
        found: Vec<u32>,
    },
    UnknownReference {
        node: u32,
        target: u32,
    },
    SelfLoop(u32),
    DuplicateEdge {
        node: u32,
        source: u32,
    },
    EmptyInputs(u32),
    Cycle(Vec<u32>),
    MultipleOutputs(Vec<u32>),
    NoOutput,
    OutputMismatch {
        declared: u32,
        sink: u32,
    },
    UnknownOutput(u32),
    /// No directed path from the node to the output.
    Orphan(u32),
    InvalidParameter {
        node: u32,
        message: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId(id) => write!(f, "duplicate node id {id}"),
            Violation::NonDenseIds { found } => write!(
                f,
                "node ids must be 1..n for inputs and n+1..m for internal nodes, found {found:?}"
            ),
            Violation::UnknownReference { node, target } => {
                write!(f, "node {node} references unknown node {target}")
            }
            Violation::SelfLoop(id) => write!(f, "node {id} lists itself as an input"),
            Violation::DuplicateEdge { node, source } => {
                write!(f, "node {node} lists input {source} more than once")
            }
            Violation::EmptyInputs(id) => write!(f, "internal node {id} has no inputs"),
            Violation::Cycle(c) => write!(
                f,
                "cycle: {}",
                c.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" -> ")
            ),
            Violation::MultipleOutputs(s) => write!(f, "multiple nodes with out-degree 0: {s:?}"),
            Violation::NoOutput => write!(f, "no node has out-degree 0"),
            Violation::OutputMismatch { declared, sink } => {
                write!(f, "declared output {declared} but the sink is {sink}")
            }
            Violation::UnknownOutput(id) => write!(f, "output {id} is not a node"),
            Violation::Orphan(id) => write!(f, "node {id} has no path to the output"),
            Violation::InvalidParameter { node, message } => {
                write!(f, "node {node}: {message}")
            }
        }
    }
}

/// Lists every invariant violation of a skeleton description. Empty iff valid.
pub fn validate(cfg: &SkeletonConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = cfg.inputs.len();
    let m = n + cfg.internal.len();

    let mut seen = BTreeSet::new();
    let all_ids = cfg.inputs.iter().map(|d| d.id).chain(cfg.internal.iter().map(|d| d.id));
    for id in all_ids {
        if !seen.insert(id) {
            out.push(Violation::DuplicateId(id));
        }
    }
    let inputs_dense = cfg.inputs.iter().all(|d| d.id >= 1 && (d.id as usize) <= n);
    let internal_dense = cfg.internal.iter().all(|d| (d.id as usize) > n && (d.id as usize) <= m);
    if !(inputs_dense && internal_dense) || seen.len() != m {
        out.push(Violation::NonDenseIds {
            found: seen.iter().copied().collect(),
        });
    }

    for d in &cfg.inputs {
        if let Err(e) = d.space.check() {
            out.push(Violation::InvalidParameter {
                node: d.id,
                message: e.to_string(),
            });
        }
    }
    for d in &cfg.internal {
        if let Err(e) = ConjugateActivation::from_spec(&d.activation) {
            out.push(Violation::InvalidParameter {
                node: d.id,
                message: e.to_string(),
            });
        }
        if d.inputs.is_empty() {
            out.push(Violation::EmptyInputs(d.id));
        }
        let mut local = BTreeSet::new();
        for &s in &d.inputs {
            if s == d.id {
                out.push(Violation::SelfLoop(d.id));
            } else if !seen.contains(&s) {
                out.push(Violation::UnknownReference { node: d.id, target: s });
            }
            if !local.insert(s) {
                out.push(Violation::DuplicateEdge { node: d.id, source: s });
            }
        }
    }
    if !seen.contains(&cfg.output) {
        out.push(Violation::UnknownOutput(cfg.output));
    }
    if !out.is_empty() {
        // graph checks below assume well-formed ids
        return out;
    }

    // edges u -> v for u in in(v), over 0-based indices
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); m];
    for d in &cfg.internal {
        let v = d.id as usize - 1;
        for &s in &d.inputs {
            children[s as usize - 1].push(v);
            parents[v].push(s as usize - 1);
        }
    }
    if let Some(cycle) = find_cycle(&children) {
        out.push(Violation::Cycle(cycle.iter().map(|&i| i as u32 + 1).collect()));
    }
    let sinks: Vec<u32> = (0..m)
        .filter(|&i| children[i].is_empty())
        .map(|i| i as u32 + 1)
        .collect();
    match sinks.len() {
        0 => out.push(Violation::NoOutput),
        1 if sinks[0] != cfg.output => out.push(Violation::OutputMismatch {
            declared: cfg.output,
            sink: sinks[0],
        }),
        1 => {}
        _ => out.push(Violation::MultipleOutputs(sinks)),
    }
    // reverse reachability from the declared output
    let mut reach = vec![false; m];
    let mut stack = vec![cfg.output as usize - 1];
    while let Some(v) = stack.pop() {
        if !std::mem::replace(&mut reach[v], true) {
            stack.extend(parents[v].iter().copied());
        }
    }
    for (i, r) in reach.iter().enumerate() {
        if !r {
            out.push(Violation::Orphan(i as u32 + 1));
        }
    }
    out
}

fn find_cycle(children: &[Vec<usize>]) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let m = children.len();
    let mut mark = vec![Mark::New; m];
    for root in 0..m {
        if mark[root] != Mark::New {
            continue;
        }
        // (node, next child position); path holds the open nodes in order
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Open;
        while let Some(&mut (v, ref mut pos)) = stack.last_mut() {
            if let Some(&w) = children[v].get(*pos) {
                *pos += 1;
                match mark[w] {
                    Mark::New => {
                        mark[w] = Mark::Open;
                        stack.push((w, 0));
                    }
                    Mark::Open => {
                        let start = stack.iter().position(|&(u, _)| u == w).unwrap();
                        let mut cycle: Vec<usize> = stack[start..].iter().map(|&(u, _)| u).collect();
                        cycle.push(w);
                        return Some(cycle);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[v] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct InternalNode {
    pub activation: ConjugateActivation,
    pub inputs: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Input(BaseSpace),
    Internal(InternalNode),
}

/// A validated computation skeleton. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    nodes: Vec<Node>,
    n_inputs: usize,
    output: NodeId,
    topo: Vec<NodeId>,
    config: SkeletonConfig,
}

impl Skeleton {
    pub fn from_config(config: SkeletonConfig) -> Result<Self> {
        let violations = validate(&config);
        if !violations.is_empty() {
            return Err(Error::Structure(violations));
        }
        let n = config.inputs.len();
        let m = n + config.internal.len();
        let mut nodes: Vec<Option<Node>> = vec![None; m];
        for d in &config.inputs {
            nodes[d.id as usize - 1] = Some(Node::Input(d.space.clone()));
        }
        for d in &config.internal {
            nodes[d.id as usize - 1] = Some(Node::Internal(InternalNode {
                activation: ConjugateActivation::from_spec(&d.activation)?,
                inputs: d.inputs.iter().map(|&i| NodeId(i)).collect(),
            }));
        }
        let nodes: Vec<Node> = nodes.into_iter().map(|n| n.expect("dense ids")).collect();
        let topo = topo_order(&nodes);
        Ok(Self {
            nodes,
            n_inputs: n,
            output: NodeId(config.output),
            topo,
            config,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_config(SkeletonConfig::from_json(text)?)
    }

    pub fn config(&self) -> &SkeletonConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        if id.0 == 0 {
            return Err(Error::UnknownNode(id.0));
        }
        self.nodes.get(id.index()).ok_or(Error::UnknownNode(id.0))
    }

    pub(crate) fn node_unchecked(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    /// Base spaces of the input nodes, in node order.
    pub fn input_spaces(&self) -> impl Iterator<Item = &BaseSpace> {
        self.nodes[..self.n_inputs].iter().map(|n| match n {
            Node::Input(s) => s,
            Node::Internal(_) => unreachable!("inputs occupy 1..=n"),
        })
    }

    pub fn input_space(&self, id: NodeId) -> Option<&BaseSpace> {
        match self.nodes.get(id.index()) {
            Some(Node::Input(s)) => Some(s),
            _ => None,
        }
    }

    /// Nodes in an order where every node follows its inputs.
    pub fn topo_order(&self) -> &[NodeId] {
        &self.topo
    }

    /// Hex SHA-256 of the canonical JSON config.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(&self.config).expect("config serializes");
        hex(&Sha256::digest(&bytes))
    }

    /// Largest modulus any sampled feature can reach, `inf` when unbounded.
    pub fn feature_bound(&self) -> f64 {
        let mut bound = vec![1.0f64; self.len()];
        for &v in &self.topo {
            bound[v.index()] = match &self.nodes[v.index()] {
                Node::Input(s) => s.bound(),
                Node::Internal(node) => {
                    let child = node.inputs.iter().map(|u| bound[u.index()]).fold(0.0, f64::max);
                    if child <= 1.0 {
                        1.0
                    } else {
                        child.powi(node.activation.max_degree() as i32)
                    }
                }
            };
        }
        bound[self.output.index()]
    }

    /// A skeleton whose output is a single input node.
    pub fn single_input(space: BaseSpace) -> Result<Self> {
        Self::from_config(SkeletonConfig {
            inputs: vec![InputDecl { id: 1, space }],
            internal: vec![],
            output: 1,
        })
    }

    /// One internal node fed by every input.
    pub fn flat(spaces: Vec<BaseSpace>, activation: ActivationSpec) -> Result<Self> {
        Self::layered(spaces, &[1], activation)
    }

    /// Fully connected layers of the given widths over the inputs, sharing
    /// one activation. The last width must be 1.
    pub fn layered(spaces: Vec<BaseSpace>, widths: &[usize], activation: ActivationSpec) -> Result<Self> {
        if widths.last() != Some(&1) || widths.contains(&0) {
            return Err(Error::Parameter("layer widths must be positive and end in 1".into()));
        }
        let inputs: Vec<InputDecl> = spaces
            .into_iter()
            .enumerate()
            .map(|(i, space)| InputDecl {
                id: i as u32 + 1,
                space,
            })
            .collect();
        let mut prev: Vec<u32> = inputs.iter().map(|d| d.id).collect();
        let mut next_id = prev.len() as u32 + 1;
        let mut internal = Vec::new();
        for &w in widths {
            let layer: Vec<u32> = (0..w as u32).map(|k| next_id + k).collect();
            for &id in &layer {
                internal.push(InternalDecl {
                    id,
                    activation: activation.clone(),
                    inputs: prev.clone(),
                });
            }
            next_id += w as u32;
            prev = layer;
        }
        Self::from_config(SkeletonConfig {
            inputs,
            internal,
            output: prev[0],
        })
    }

    /// Inputs split into consecutive patches of `patch` nodes; each patch
    /// feeds one node with `patch_act`, and all patch nodes feed the output
    /// with `out_act`.
    pub fn local_two_layer(
        spaces: Vec<BaseSpace>,
        patch: usize,
        patch_act: ActivationSpec,
        out_act: ActivationSpec,
    ) -> Result<Self> {
        let n = spaces.len();
        if patch == 0 || !n.is_multiple_of(patch) {
            return Err(Error::Parameter(format!(
                "patch size {patch} must divide the input count {n}"
            )));
        }
        let inputs: Vec<InputDecl> = spaces
            .into_iter()
            .enumerate()
            .map(|(i, space)| InputDecl {
                id: i as u32 + 1,
                space,
            })
            .collect();
        let mut internal = Vec::new();
        let mut patch_ids = Vec::new();
        for p in 0..n / patch {
            let id = (n + p + 1) as u32;
            internal.push(InternalDecl {
                id,
                activation: patch_act.clone(),
                inputs: (p * patch..(p + 1) * patch).map(|i| i as u32 + 1).collect(),
            });
            patch_ids.push(id);
        }
        let out = (n + patch_ids.len() + 1) as u32;
        internal.push(InternalDecl {
            id: out,
            activation: out_act,
            inputs: patch_ids,
        });
        Self::from_config(SkeletonConfig {
            inputs,
            internal,
            output: out,
        })
    }
}

fn topo_order(nodes: &[Node]) -> Vec<NodeId> {
    let m = nodes.len();
    let mut done = vec![false; m];
    let mut order = Vec::with_capacity(m);
    for root in 0..m {
        let mut stack = vec![(root, false)];
        while let Some((v, expanded)) = stack.pop() {
            if done[v] {
                continue;
            }
            if expanded {
                done[v] = true;
                order.push(NodeId(v as u32 + 1));
                continue;
            }
            stack.push((v, true));
            if let Node::Internal(node) = &nodes[v] {
                for u in &node.inputs {
                    if !done[u.index()] {
                        stack.push((u.index(), false));
                    }
                }
            }
        }
    }
    order
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Expected number of atoms per sampled feature.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Complexity(pub f64);

/// `C(v) = 1` at inputs, `C(v) = sigma_v'(1) * mean_{u in in(v)} C(u)` otherwise.
pub fn complexity(skeleton: &Skeleton) -> Complexity {
    let trace = complexity_trace(skeleton);
    Complexity(trace[skeleton.output().index()].1)
}

/// Per-node complexities in node order.
pub fn complexity_trace(skeleton: &Skeleton) -> Vec<(NodeId, f64)> {
    let mut c = vec![0.0; skeleton.len()];
    for &v in skeleton.topo_order() {
        c[v.index()] = match skeleton.node_unchecked(v) {
            Node::Input(_) => 1.0,
            Node::Internal(node) => {
                let avg = node.inputs.iter().map(|u| c[u.index()]).sum::<f64>() / node.inputs.len() as f64;
                node.activation.sigma_prime_at_one() * avg
            }
        };
    }
    c.into_iter()
        .enumerate()
        .map(|(i, x)| (NodeId(i as u32 + 1), x))
        .collect()
}
