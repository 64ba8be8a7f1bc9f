//! LOCC protocol trees labelled by cumulative local POVM elements.
//!
//! A node records which party acted to reach it and that party's cumulative
//! POVM element. The elements of the other parties are inherited from the
//! closest ancestor at which they acted, or the identity if they have not
//! acted yet. Kraus operators only appear at leaves.

use crate::measurement::{canonicalize, Measurement, ProductKraus};
use crate::ops::{self, psd_sqrt, pseudo_inverse, ComplexMatrix, PsdOperator, Tolerances};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LoccNode {
    /// Party whose measurement produced this node; `None` only at the root.
    pub party: Option<usize>,
    pub cumulative_local: PsdOperator,
    pub children: Vec<LoccNode>,
    /// One isometry per party, applied after the final measurement.
    pub leaf_isometries: Option<Vec<ComplexMatrix>>,
}

impl LoccNode {
    pub fn leaf(party: usize, cumulative_local: PsdOperator) -> Self {
        Self {
            party: Some(party),
            cumulative_local,
            children: Vec::new(),
            leaf_isometries: None,
        }
    }

    pub fn branch(party: usize, cumulative_local: PsdOperator, children: Vec<LoccNode>) -> Self {
        Self {
            party: Some(party),
            cumulative_local,
            children,
            leaf_isometries: None,
        }
    }

    pub fn with_isometries(mut self, isometries: Vec<ComplexMatrix>) -> Self {
        self.leaf_isometries = Some(isometries);
        self
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Party shared by the children, if any.
    pub fn child_party(&self) -> Option<usize> {
        self.children.first().and_then(|c| c.party)
    }

    fn depth(&self) -> usize {
        self.children.iter().map(|c| 1 + c.depth()).max().unwrap_or(0)
    }

    fn leaf_count(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.children.iter().map(LoccNode::leaf_count).sum()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoccTree {
    pub party_dims: Vec<usize>,
    pub root: LoccNode,
}

impl LoccTree {
    /// Tree whose root carries the joint identity and the given children.
    pub fn new(party_dims: Vec<usize>, children: Vec<LoccNode>) -> Self {
        let d = party_dims.iter().product();
        Self {
            party_dims,
            root: LoccNode {
                party: None,
                cumulative_local: PsdOperator::identity(d),
                children,
                leaf_isometries: None,
            },
        }
    }

    pub fn party_count(&self) -> usize {
        self.party_dims.len()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn leaf_count(&self) -> usize {
        self.root.leaf_count()
    }

    fn identities(&self) -> Vec<PsdOperator> {
        self.party_dims.iter().map(|&d| PsdOperator::identity(d)).collect()
    }

    /// Leaves in depth-first order with each party's inherited cumulative
    /// element and the leaf's isometries.
    pub fn leaves(&self) -> Vec<LeafView> {
        fn walk(node: &LoccNode, path: &mut Vec<usize>, labels: &mut Vec<PsdOperator>, out: &mut Vec<LeafView>) {
            let saved = node.party.map(|p| std::mem::replace(&mut labels[p], node.cumulative_local.clone()));
            if node.is_leaf() {
                out.push(LeafView {
                    path: path.clone(),
                    labels: labels.clone(),
                    isometries: node.leaf_isometries.clone(),
                });
            }
            for (i, child) in node.children.iter().enumerate() {
                path.push(i);
                walk(child, path, labels, out);
                path.pop();
            }
            if let (Some(p), Some(old)) = (node.party, saved) {
                labels[p] = old;
            }
        }
        let mut out = Vec::new();
        let mut labels = self.identities();
        // the root label is the joint identity and is not a party element
        let root = LoccNode {
            party: None,
            ..self.root.clone()
        };
        walk(&root, &mut Vec::new(), &mut labels, &mut out);
        out
    }
}

/// A leaf as seen from the root.
#[derive(Debug, Clone)]
pub struct LeafView {
    pub path: Vec<usize>,
    /// Per-party cumulative elements in force at the leaf.
    pub labels: Vec<PsdOperator>,
    pub isometries: Option<Vec<ComplexMatrix>>,
}

impl LeafView {
    /// Kraus operator `⊗_α U⁽ᵅ⁾ sqrt(𝒦̂⁽ᵅ⁾)`.
    pub fn kraus(&self) -> ProductKraus {
        let factors = self
            .labels
            .iter()
            .enumerate()
            .map(|(a, l)| {
                let root = psd_sqrt(l).into_matrix();
                match &self.isometries {
                    Some(us) => &us[a] * root,
                    None => root,
                }
            })
            .collect();
        ProductKraus::unit(factors)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Child indices from the root.
    pub path: Vec<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, path: &[usize], message: String) {
        self.violations.push(Violation {
            path: path.to_vec(),
            message,
        });
    }

    fn into_result(self) -> Result<()> {
        match self.violations.first() {
            None => Ok(()),
            Some(v) => Err(Error::InvalidTree(format!("at {:?}: {}", v.path, v.message))),
        }
    }
}

/// Tolerance used when an operation needs a valid tree.
pub const TREE_TOL: f64 = 1e-8;

fn support_projector(p: &ComplexMatrix) -> ComplexMatrix {
    ops::hermitian_fn(p, |v| if v > Tolerances::RANK { 1.0 } else { 0.0 })
}

/// Checks the sibling-sum relation, labels and leaf isometries everywhere.
pub fn validate(t: &LoccTree, tol: f64) -> ValidationReport {
    let mut report = ValidationReport::default();
    if t.party_dims.is_empty() || t.party_dims.contains(&0) {
        report.push(&[], format!("bad party dimensions {:?}", t.party_dims));
        return report;
    }
    if t.root.leaf_isometries.is_some() && !t.root.is_leaf() {
        report.push(&[], "isometries on an internal node".into());
    }
    let mut labels = t.identities();
    visit(t, &t.root, &mut Vec::new(), &mut labels, tol, &mut report);
    report
}

fn visit(
    t: &LoccTree,
    node: &LoccNode,
    path: &mut Vec<usize>,
    labels: &mut Vec<PsdOperator>,
    tol: f64,
    report: &mut ValidationReport,
) {
    if node.is_leaf() {
        if let Some(us) = &node.leaf_isometries {
            check_isometries(t, us, labels, path, tol, report);
        }
        return;
    }
    if node.leaf_isometries.is_some() {
        report.push(path, "isometries on an internal node".into());
    }
    let Some(party) = node.child_party() else {
        report.push(path, "child without an acting party".into());
        return;
    };
    if party >= t.party_count() {
        report.push(path, format!("acting party {party} out of range"));
        return;
    }
    if node.children.iter().any(|c| c.party != Some(party)) {
        report.push(path, "children do not share one acting party".into());
        return;
    }
    let d = t.party_dims[party];
    let mut sum = ops::zeros(d, d);
    let mut dims_ok = true;
    for (i, child) in node.children.iter().enumerate() {
        let m = child.cumulative_local.matrix();
        if m.nrows() != d || m.ncols() != d {
            path.push(i);
            report.push(path, format!("label is {}x{}, party dimension is {d}", m.nrows(), m.ncols()));
            path.pop();
            dims_ok = false;
            continue;
        }
        let min = ops::min_eigenvalue(m);
        if min < -Tolerances::PSD {
            path.push(i);
            report.push(path, format!("label has negative eigenvalue {min:e}"));
            path.pop();
        }
        sum += m;
    }
    if !dims_ok {
        return;
    }
    let deviation = ops::max_abs_diff(&sum, labels[party].matrix());
    if deviation > tol {
        report.push(
            path,
            format!("children of party {party} sum to the parent element only within {deviation:e}"),
        );
    }
    for (i, child) in node.children.iter().enumerate() {
        let old = std::mem::replace(&mut labels[party], child.cumulative_local.clone());
        path.push(i);
        visit(t, child, path, labels, tol, report);
        path.pop();
        labels[party] = old;
    }
}

fn check_isometries(
    t: &LoccTree,
    us: &[ComplexMatrix],
    labels: &[PsdOperator],
    path: &[usize],
    tol: f64,
    report: &mut ValidationReport,
) {
    if us.len() != t.party_count() {
        report.push(path, format!("{} isometries for {} parties", us.len(), t.party_count()));
        return;
    }
    for (a, u) in us.iter().enumerate() {
        let d = t.party_dims[a];
        if u.nrows() != d || u.ncols() != d {
            report.push(path, format!("isometry for party {a} has the wrong shape"));
            continue;
        }
        let pi = support_projector(labels[a].matrix());
        let deviation = ops::max_abs_diff(&(&pi * u.adjoint() * u * &pi), &pi);
        if deviation > tol {
            report.push(path, format!("party {a} isometry deviates by {deviation:e} on the support"));
        }
    }
}

/// The measurement implemented by a valid tree, canonicalized.
pub fn leaf_measurement(t: &LoccTree) -> Result<Measurement> {
    canonicalize(leaf_outcomes(t)?, &t.party_dims)
}

/// Leaf Kraus operators in depth-first order, before canonicalization.
pub fn leaf_outcomes(t: &LoccTree) -> Result<Vec<ProductKraus>> {
    validate(t, TREE_TOL).into_result()?;
    Ok(t.leaves().iter().map(LeafView::kraus).collect())
}

/// The individual measurement one party performs at an internal node.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStep {
    pub path: Vec<usize>,
    pub party: usize,
    /// `sqrt(child) · sqrt(parent)⁺`, one per child.
    pub operators: Vec<ComplexMatrix>,
    /// Max-entry deviation of `Σ A_i†A_i` from the parent support projector.
    pub completeness_deviation: f64,
    /// Internal children whose support is strictly smaller than the parent's.
    pub shrinking_children: Vec<usize>,
}

impl LocalStep {
    pub fn is_complete(&self, tol: f64) -> bool {
        self.completeness_deviation <= tol
    }
}

/// Recovers each node's individual local measurement from the cumulative
/// labels. Support shrinkage on branches that continue is reported per step
/// rather than treated as an error.
pub fn local_steps(t: &LoccTree) -> Result<Vec<LocalStep>> {
    validate(t, TREE_TOL).into_result()?;
    let mut out = Vec::new();
    let mut labels = t.identities();
    collect_steps(&t.root, &mut Vec::new(), &mut labels, &mut out);
    Ok(out)
}

fn collect_steps(node: &LoccNode, path: &mut Vec<usize>, labels: &mut Vec<PsdOperator>, out: &mut Vec<LocalStep>) {
    let Some(party) = node.child_party() else {
        return;
    };
    let parent = &labels[party];
    let parent_root = psd_sqrt(parent).into_matrix();
    let inv = pseudo_inverse(&parent_root, Tolerances::RANK.sqrt());
    let operators: Vec<ComplexMatrix> = node
        .children
        .iter()
        .map(|c| psd_sqrt(&c.cumulative_local).into_matrix() * &inv)
        .collect();
    let d = parent.dim();
    let sum = operators.iter().fold(ops::zeros(d, d), |acc, a| acc + a.adjoint() * a);
    let completeness_deviation = ops::max_abs_diff(&sum, &support_projector(parent.matrix()));
    let parent_rank = parent.rank(Tolerances::RANK);
    let shrinking_children = node
        .children
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_leaf() && c.cumulative_local.rank(Tolerances::RANK) < parent_rank)
        .map(|(i, _)| i)
        .collect();
    out.push(LocalStep {
        path: path.clone(),
        party,
        operators,
        completeness_deviation,
        shrinking_children,
    });
    for (i, child) in node.children.iter().enumerate() {
        let old = std::mem::replace(&mut labels[party], child.cumulative_local.clone());
        path.push(i);
        collect_steps(child, path, labels, out);
        path.pop();
        labels[party] = old;
    }
}

/// Rebuilds cumulative labels from individual measurements:
/// `child = sqrt(parent) A† A sqrt(parent)`. The shape of `t` is reused;
/// only the labels are recomputed.
pub fn rebuild_from_steps(t: &LoccTree, steps: &[LocalStep]) -> Result<LoccTree> {
    fn go(
        node: &mut LoccNode,
        path: &mut Vec<usize>,
        labels: &mut Vec<PsdOperator>,
        steps: &[LocalStep],
    ) -> Result<()> {
        let Some(party) = node.child_party() else {
            return Ok(());
        };
        let step = steps
            .iter()
            .find(|s| s.path == *path)
            .ok_or_else(|| Error::InvalidTree(format!("no local step for node {path:?}")))?;
        if step.operators.len() != node.children.len() {
            return Err(Error::InvalidTree(format!("step at {path:?} has the wrong outcome count")));
        }
        let root = psd_sqrt(&labels[party]).into_matrix();
        for (i, child) in node.children.iter_mut().enumerate() {
            let a = &step.operators[i];
            child.cumulative_local = PsdOperator::from_trusted(&root * a.adjoint() * a * &root);
            let old = std::mem::replace(&mut labels[party], child.cumulative_local.clone());
            path.push(i);
            go(child, path, labels, steps)?;
            path.pop();
            labels[party] = old;
        }
        Ok(())
    }
    let mut out = t.clone();
    let mut labels = t.identities();
    go(&mut out.root, &mut Vec::new(), &mut labels, steps)?;
    Ok(out)
}

/// Random valid tree: parties alternate level by level, and every node
/// splits its party's inherited element as `sqrt(P) T_i sqrt(P)` with
/// `Σ T_i = I` drawn at random.
pub fn random_finite_tree(
    party_dims: &[usize],
    depth: usize,
    branching: usize,
    seed: u64,
) -> Result<LoccTree> {
    if depth == 0 {
        return Err(Error::Parameter("tree depth must be at least 1".into()));
    }
    if branching < 2 {
        return Err(Error::Parameter("branching must be at least 2".into()));
    }
    if party_dims.is_empty() || party_dims.contains(&0) {
        return Err(Error::Dimension(format!("bad party dimensions {party_dims:?}")));
    }
    let mut g = rng::seeded(seed);
    let mut labels: Vec<PsdOperator> = party_dims.iter().map(|&d| PsdOperator::identity(d)).collect();
    let children = grow(party_dims, 0, depth, branching, &mut labels, &mut g);
    Ok(LoccTree::new(party_dims.to_vec(), children))
}

fn grow(
    party_dims: &[usize],
    level: usize,
    depth: usize,
    branching: usize,
    labels: &mut Vec<PsdOperator>,
    g: &mut rng::SeededRng,
) -> Vec<LoccNode> {
    let party = level % party_dims.len();
    let parent_root = psd_sqrt(&labels[party]).into_matrix();
    let parts = rng::random_partition_of_identity(g, party_dims[party], branching);
    parts
        .iter()
        .map(|t| {
            let label = PsdOperator::from_trusted(&parent_root * t * &parent_root);
            let children = if level + 1 < depth {
                let old = std::mem::replace(&mut labels[party], label.clone());
                let c = grow(party_dims, level + 1, depth, branching, labels, g);
                labels[party] = old;
                c
            } else {
                Vec::new()
            };
            LoccNode::branch(party, label, children)
        })
        .collect()
}

/// One two-outcome local measurement inside a cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleStep {
    pub party: usize,
    pub terminal: PsdOperator,
    pub continuing: PsdOperator,
    /// Isometries applied on the terminal branch, one per party.
    pub terminal_isometries: Option<Vec<ComplexMatrix>>,
}

impl CycleStep {
    pub fn new(party: usize, terminal: PsdOperator, continuing: PsdOperator) -> Self {
        Self {
            party,
            terminal,
            continuing,
            terminal_isometries: None,
        }
    }
}

/// A repeating sequence of two-outcome measurements. After one pass each
/// party's element is a positive multiple of its entry element, and the
/// product of those multiples is `contraction`.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleDescriptor {
    pub entry_povm: Vec<PsdOperator>,
    pub steps: Vec<CycleStep>,
    pub contraction: f64,
}

/// Tolerance for the closing condition of a cycle.
pub const CYCLE_TOL: f64 = 1e-9;

impl CycleDescriptor {
    pub fn party_dims(&self) -> Vec<usize> {
        self.entry_povm.iter().map(PsdOperator::dim).collect()
    }

    /// Verifies the cycle and returns each party's per-pass scale.
    pub fn check(&self) -> Result<Vec<f64>> {
        let bad = |m: String| Err(Error::InvalidCycle(m));
        if self.entry_povm.is_empty() {
            return bad("no parties".into());
        }
        if self.steps.is_empty() {
            return bad("no steps".into());
        }
        if !(self.contraction > 0.0 && self.contraction < 1.0) {
            return bad(format!("contraction {} outside (0, 1)", self.contraction));
        }
        let dims = self.party_dims();
        for (a, e) in self.entry_povm.iter().enumerate() {
            if e.is_zero() {
                return bad(format!("entry element of party {a} is zero"));
            }
            if ops::max_eigenvalue(e.matrix()) > 1.0 + CYCLE_TOL {
                return bad(format!("entry element of party {a} exceeds the identity"));
            }
        }
        let mut current = self.entry_povm.clone();
        for (k, s) in self.steps.iter().enumerate() {
            if s.party >= dims.len() {
                return bad(format!("step {k}: party {} out of range", s.party));
            }
            let d = dims[s.party];
            if s.terminal.dim() != d || s.continuing.dim() != d {
                return bad(format!("step {k}: element dimensions do not match party {}", s.party));
            }
            let sum = s.terminal.matrix() + s.continuing.matrix();
            let deviation = ops::max_abs_diff(&sum, current[s.party].matrix());
            if deviation > CYCLE_TOL {
                return bad(format!("step {k}: elements sum to the parent only within {deviation:e}"));
            }
            if let Some(us) = &s.terminal_isometries {
                if us.len() != dims.len() || us.iter().zip(&dims).any(|(u, &d)| u.nrows() != d || u.ncols() != d) {
                    return bad(format!("step {k}: terminal isometries have the wrong shape"));
                }
            }
            current[s.party] = s.continuing.clone();
        }
        let mut scales = Vec::with_capacity(dims.len());
        for (a, (last, entry)) in current.iter().zip(&self.entry_povm).enumerate() {
            let s = last.trace() / entry.trace();
            let deviation = ops::max_abs_diff(last.matrix(), &entry.matrix().scale(s));
            if deviation > CYCLE_TOL {
                return bad(format!("party {a} does not return to a multiple of its entry element"));
            }
            scales.push(s);
        }
        let product: f64 = scales.iter().product();
        if (product - self.contraction).abs() > CYCLE_TOL {
            return bad(format!(
                "per-party scales multiply to {product}, contraction is {}",
                self.contraction
            ));
        }
        Ok(scales)
    }

    /// Labels in force at each step's terminal leaf during the first pass.
    pub fn terminal_labels(&self) -> Vec<Vec<PsdOperator>> {
        let mut current = self.entry_povm.clone();
        self.steps
            .iter()
            .map(|s| {
                let mut labels = current.clone();
                labels[s.party] = s.terminal.clone();
                current[s.party] = s.continuing.clone();
                labels
            })
            .collect()
    }

    /// The measurement obtained by running the cycle forever from its entry:
    /// one outcome per step, weight `1/sqrt(1 − contraction)`.
    pub fn limit_measurement(&self) -> Result<Measurement> {
        self.check()?;
        let w = (1.0 - self.contraction).sqrt().recip();
        let raw = self
            .terminal_labels()
            .into_iter()
            .zip(&self.steps)
            .map(|(labels, s)| {
                let mut k = LeafView {
                    path: Vec::new(),
                    labels,
                    isometries: s.terminal_isometries.clone(),
                }
                .kraus();
                k.weight = w;
                k
            })
            .collect();
        canonicalize(raw, &self.party_dims())
    }

    /// Nodes for `r` passes of the cycle, hung below a point whose labels are
    /// `entry_povm`. The last continuing node is left as a residual leaf.
    pub fn unrolled_nodes(&self, passes: usize) -> Result<Vec<LoccNode>> {
        let scales = self.check()?;
        if passes == 0 {
            return Err(Error::Parameter("at least one pass is required".into()));
        }
        // built bottom-up: the innermost node is the residual leaf
        let n = self.steps.len();
        let mut below: Option<LoccNode> = None;
        for r in (0..passes).rev() {
            for k in (0..n).rev() {
                let s = &self.steps[k];
                let f = scales[s.party].powi(r as i32);
                let mut terminal = LoccNode::leaf(s.party, s.terminal.scaled(f));
                terminal.leaf_isometries = s.terminal_isometries.clone();
                let continuing = match below.take() {
                    Some(next) => LoccNode::branch(s.party, s.continuing.scaled(f), vec![next]),
                    None => LoccNode::leaf(s.party, s.continuing.scaled(f)),
                };
                // a node with one child is only a relabelling; merge it
                let continuing = flatten(continuing);
                below = Some(LoccNode {
                    party: None,
                    cumulative_local: PsdOperator::identity(1),
                    children: vec![terminal, continuing],
                    leaf_isometries: None,
                });
            }
        }
        Ok(below.map(|b| b.children).unwrap_or_default())
    }
}

/// Replaces `node -> [placeholder -> children]` by `node -> children`.
fn flatten(mut node: LoccNode) -> LoccNode {
    if node.children.len() == 1 && node.children[0].party.is_none() {
        let inner = node.children.pop().expect("one child");
        node.children = inner.children;
    }
    node
}

/// Finite tree for `passes` copies of the cycle. Each copy is scaled by the
/// per-party factors, and the final continuing node stays as a residual leaf
/// with joint element `contraction^passes ⊗ entry`. Parties whose entry
/// element is not the identity first perform a two-outcome measurement
/// `{entry, I − entry}`; the cycle hangs below the `entry` branch.
pub fn unroll(c: &CycleDescriptor, passes: usize) -> Result<LoccTree> {
    let cycle_nodes = c.unrolled_nodes(passes)?;
    let dims = c.party_dims();
    let mut children = cycle_nodes;
    for (a, e) in c.entry_povm.iter().enumerate().rev() {
        let id = ops::identity(dims[a]);
        if ops::max_abs_diff(e.matrix(), &id) <= CYCLE_TOL {
            continue;
        }
        let rest = PsdOperator::new(&id - e.matrix())?;
        children = vec![
            LoccNode::branch(a, e.clone(), children),
            LoccNode::leaf(a, rest),
        ];
    }
    Ok(LoccTree::new(dims, children))
}

/// A finite prefix tree with cycles attached to some of its leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct InfiniteProtocol {
    pub prefix: LoccTree,
    /// `(leaf index in depth-first order, cycle)`.
    pub cycles: Vec<(usize, CycleDescriptor)>,
}

impl InfiniteProtocol {
    /// Checks that every cycle's entry matches the labels of its leaf.
    pub fn check(&self) -> Result<()> {
        validate(&self.prefix, TREE_TOL).into_result()?;
        let leaves = self.prefix.leaves();
        let mut seen = std::collections::BTreeSet::new();
        for (leaf, c) in &self.cycles {
            let view = leaves
                .get(*leaf)
                .ok_or_else(|| Error::InvalidCycle(format!("leaf {leaf} does not exist")))?;
            if !seen.insert(*leaf) {
                return Err(Error::InvalidCycle(format!("two cycles on leaf {leaf}")));
            }
            if view.isometries.is_some() {
                return Err(Error::InvalidCycle(format!("leaf {leaf} carries isometries")));
            }
            c.check()?;
            if c.entry_povm.len() != view.labels.len() {
                return Err(Error::InvalidCycle(format!("cycle on leaf {leaf} has the wrong party count")));
            }
            for (a, (e, l)) in c.entry_povm.iter().zip(&view.labels).enumerate() {
                if e.dim() != l.dim() || ops::max_abs_diff(e.matrix(), l.matrix()) > TREE_TOL {
                    return Err(Error::InvalidCycle(format!(
                        "cycle entry for party {a} does not match leaf {leaf}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest contraction over the attached cycles.
    pub fn contraction(&self) -> f64 {
        self.cycles.iter().map(|(_, c)| c.contraction).fold(0.0, f64::max)
    }

    /// The prefix with `passes` copies of each cycle in place of its leaf.
    pub fn unroll(&self, passes: usize) -> Result<LoccTree> {
        self.check()?;
        let mut out = self.prefix.clone();
        let mut targets: Vec<(Vec<usize>, &CycleDescriptor)> = Vec::new();
        let leaves = self.prefix.leaves();
        for (leaf, c) in &self.cycles {
            targets.push((leaves[*leaf].path.clone(), c));
        }
        for (path, c) in targets {
            let mut node = &mut out.root;
            for &i in &path {
                node = &mut node.children[i];
            }
            node.children = c.unrolled_nodes(passes)?;
        }
        Ok(out)
    }

    /// Prefix leaves without cycles plus the limit of every cycle.
    pub fn limit_measurement(&self) -> Result<Measurement> {
        self.check()?;
        let leaves = self.prefix.leaves();
        let mut raw = Vec::new();
        for (i, view) in leaves.iter().enumerate() {
            match self.cycles.iter().find(|(l, _)| *l == i) {
                None => raw.push(view.kraus()),
                Some((_, c)) => raw.extend(c.limit_measurement()?.outcomes),
            }
        }
        canonicalize(raw, &self.prefix.party_dims)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::check_complete;
    use crate::ops::{diag, identity, ket_bra};

    fn psd(m: ComplexMatrix) -> PsdOperator {
        PsdOperator::new(m).unwrap()
    }

    /// Two-qubit cycle with `A: I → {(1−q)[0], q[0]+[1]} → {[1], q I}` style
    /// elements, built directly from diagonal entries.
    fn example_cycle(q: f64, eps: f64) -> CycleDescriptor {
        let d = |a: f64, b: f64| psd(diag(&[a, b]));
        CycleDescriptor {
            entry_povm: vec![PsdOperator::identity(2), PsdOperator::identity(2)],
            steps: vec![
                CycleStep::new(1, d(1.0 - eps, 0.0), d(eps, 1.0)),
                CycleStep::new(0, d(1.0 - q, 0.0), d(q, 1.0)),
                CycleStep::new(1, d(0.0, 1.0 - eps), d(eps, eps)),
                CycleStep::new(0, d(0.0, 1.0 - q), d(q, q)),
            ],
            contraction: q * eps,
        }
    }

    #[test]
    fn projective_root_is_valid() {
        let t = LoccTree::new(
            vec![2, 2],
            vec![
                LoccNode::leaf(0, psd(ket_bra(2, 0, 0))),
                LoccNode::leaf(0, psd(ket_bra(2, 1, 1))),
            ],
        );
        assert!(validate(&t, 1e-9).is_valid());
        let m = leaf_measurement(&t).unwrap();
        assert_eq!(m.len(), 2);
        assert!(ops::max_abs_diff(&m.outcomes[0].factors[1], &identity(2)) < 1e-15);
        assert!(check_complete(&m, 1e-12));
    }

    #[test]
    fn oversum_is_reported() {
        let t = LoccTree::new(
            vec![2],
            vec![
                LoccNode::leaf(0, psd(identity(2).scale(0.6))),
                LoccNode::leaf(0, psd(identity(2).scale(0.6))),
            ],
        );
        let report = validate(&t, 1e-9);
        assert_eq!(report.violations.len(), 1);
        assert!(leaf_measurement(&t).is_err());
    }

    #[test]
    fn mixed_child_parties_rejected() {
        let t = LoccTree::new(
            vec![2, 2],
            vec![
                LoccNode::leaf(0, psd(ket_bra(2, 0, 0))),
                LoccNode::leaf(1, psd(ket_bra(2, 1, 1))),
            ],
        );
        assert!(!validate(&t, 1e-9).is_valid());
    }

    #[test]
    fn bad_isometry_rejected() {
        let t = LoccTree::new(
            vec![2],
            vec![
                LoccNode::leaf(0, psd(identity(2).scale(0.5)))
                    .with_isometries(vec![identity(2).scale(2.0)]),
                LoccNode::leaf(0, psd(identity(2).scale(0.5))),
            ],
        );
        assert!(!validate(&t, 1e-9).is_valid());
    }

    #[test]
    fn unrolled_cycle_shape_and_residual() {
        let c = example_cycle(0.5, 0.5);
        let one = unroll(&c, 1).unwrap();
        assert!(validate(&one, 1e-9).is_valid());
        assert_eq!(one.leaf_count(), 5);
        let leaves = one.leaves();
        let residual = leaves.last().unwrap();
        let joint = ops::kron(residual.labels[0].matrix(), residual.labels[1].matrix());
        assert!(ops::max_abs_diff(&joint, &identity(4).scale(0.25)) < 1e-14);

        let four = unroll(&c, 4).unwrap();
        let residual = four.leaves().pop().unwrap();
        let joint = ops::kron(residual.labels[0].matrix(), residual.labels[1].matrix());
        assert!(ops::max_abs_diff(&joint, &identity(4).scale(0.00390625)) < 1e-15);
    }

    #[test]
    fn two_pass_unroll_coalesces() {
        let (q, eps) = (0.5, 0.25);
        let t = unroll(&example_cycle(q, eps), 2).unwrap();
        let raw = leaf_outcomes(&t).unwrap();
        // drop the residual, keep the two copies of each terminal outcome
        let m = canonicalize(raw[..8].to_vec(), &[2, 2]).unwrap();
        assert_eq!(m.len(), 4);
        for o in &m.outcomes {
            assert!((o.weight - (1.0 + q * eps).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn cycle_limit_is_complete() {
        let c = example_cycle(0.5, 0.25);
        let m = c.limit_measurement().unwrap();
        assert_eq!(m.len(), 4);
        assert!(check_complete(&m, 1e-12));
    }

    #[test]
    fn cycle_check_catches_errors() {
        let mut c = example_cycle(0.5, 0.5);
        c.contraction = 0.3;
        assert!(matches!(c.check(), Err(Error::InvalidCycle(_))));
        let mut c = example_cycle(0.5, 0.5);
        c.steps[0].terminal = psd(diag(&[0.2, 0.0]));
        assert!(c.check().is_err());
        assert!(unroll(&example_cycle(0.5, 0.5), 0).is_err());
    }

    #[test]
    fn individual_operator_in_cycle() {
        let q = 0.5;
        let t = unroll(&example_cycle(q, 0.5), 1).unwrap();
        let steps = local_steps(&t).unwrap();
        // fourth step: A continues from q[0]+[1] to q I
        let s = steps.iter().filter(|s| s.party == 0).nth(1).unwrap();
        let a3_inv = diag(&[1.0 / q.sqrt(), 1.0]);
        assert!(ops::max_abs_diff(&s.operators[1], &a3_inv.scale(q.sqrt())) < 1e-12);
        for s in &steps {
            assert!(s.is_complete(1e-8));
        }
    }

    #[test]
    fn first_round_individual_equals_cumulative() {
        let t = LoccTree::new(
            vec![2],
            vec![
                LoccNode::leaf(0, psd(ket_bra(2, 0, 0))),
                LoccNode::leaf(0, psd(ket_bra(2, 1, 1))),
            ],
        );
        let steps = local_steps(&t).unwrap();
        assert_eq!(steps.len(), 1);
        assert!(ops::max_abs_diff(&steps[0].operators[0], &ket_bra(2, 0, 0)) < 1e-12);
    }

    #[test]
    fn support_shrink_is_reported() {
        let t = LoccTree::new(
            vec![2, 2],
            vec![
                LoccNode::branch(
                    0,
                    psd(ket_bra(2, 0, 0)),
                    vec![
                        LoccNode::leaf(1, psd(ket_bra(2, 0, 0))),
                        LoccNode::leaf(1, psd(ket_bra(2, 1, 1))),
                    ],
                ),
                LoccNode::leaf(0, psd(ket_bra(2, 1, 1))),
            ],
        );
        let steps = local_steps(&t).unwrap();
        assert_eq!(steps[0].shrinking_children, vec![0]);
    }

    #[test]
    fn random_tree_round_trip() {
        let t = random_finite_tree(&[2, 2], 3, 2, 7).unwrap();
        assert!(validate(&t, 1e-9).is_valid());
        assert_eq!(t.depth(), 3);
        assert_eq!(t.leaf_count(), 8);
        let steps = local_steps(&t).unwrap();
        let back = rebuild_from_steps(&t, &steps).unwrap();
        let (a, b) = (t.leaves(), back.leaves());
        for (x, y) in a.iter().zip(&b) {
            for (l, m) in x.labels.iter().zip(&y.labels) {
                assert!(ops::max_abs_diff(l.matrix(), m.matrix()) < 1e-8);
            }
        }
    }

    #[test]
    fn random_tree_preconditions() {
        assert!(random_finite_tree(&[2, 2], 0, 2, 0).is_err());
        assert!(random_finite_tree(&[2, 2], 1, 1, 0).is_err());
        let t = random_finite_tree(&[2, 2], 1, 2, 0).unwrap();
        assert_eq!(t.leaf_count(), 2);
        assert_eq!(random_finite_tree(&[2, 2], 2, 3, 5).unwrap(), random_finite_tree(&[2, 2], 2, 3, 5).unwrap());
    }

    #[test]
    fn protocol_with_cycle_on_a_leaf() {
        let prefix = LoccTree::new(
            vec![2, 2],
            vec![
                LoccNode::leaf(0, psd(identity(2).scale(0.5))),
                LoccNode::leaf(0, psd(identity(2).scale(0.5))),
            ],
        );
        let mut c = example_cycle(0.5, 0.5);
        c.entry_povm[0] = psd(identity(2).scale(0.5));
        for s in &mut c.steps {
            if s.party == 0 {
                s.terminal = s.terminal.scaled(0.5);
                s.continuing = s.continuing.scaled(0.5);
            }
        }
        let p = InfiniteProtocol {
            prefix,
            cycles: vec![(1, c)],
        };
        let t = p.unroll(3).unwrap();
        assert!(validate(&t, 1e-9).is_valid());
        let limit = p.limit_measurement().unwrap();
        assert!(check_complete(&limit, 1e-12));
    }
}
