//! Bayesian-network model specifications, BDeu pseudo-counts and the model catalogue.
//!
//! A [`ModelSpec`] is a DAG over `N` discrete index variables. Tokens are
//! allocated to full index cells `i_{1:N}`; only the contraction onto the
//! visible set `V` is observed. Dirichlet pseudo-counts are never stored as a
//! tensor: under the BDeu construction every cell of a family table carries the
//! same value, so a [`FamilyPrior`] pair of constants is enough.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub card: usize,
}

impl Node {
    pub fn new(name: impl Into<String>, card: usize) -> Self {
        Self {
            name: name.into(),
            card,
        }
    }
}

/// One conditional table participating in a tying group: `child | parents`,
/// with the parents listed in the order that aligns the shared table's axes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TiedBinding {
    pub child: usize,
    pub parents: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum Violation {
    #[error("cycle detected among nodes {0:?}")]
    CycleDetected(Vec<String>),
    #[error("bad node index {index} in {context}")]
    BadIndex { context: String, index: usize },
    #[error("visible set is empty")]
    EmptyVisibleSet,
    #[error("tying group {group}: {detail}")]
    TyingShapeMismatch { group: usize, detail: String },
    #[error("node `{0}` has zero cardinality")]
    ZeroCardinality(String),
    #[error("duplicate node name `{0}`")]
    DuplicateName(String),
    #[error("node `{0}` listed twice in {1}")]
    Duplicate(String, String),
    #[error("cell space of {0} nodes does not fit a 64-bit key")]
    SpaceTooLarge(usize),
    #[error("unsupported tying pattern: {0}")]
    UnsupportedTying(String),
}

/// A validated Bayesian-network model over index variables.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    nodes: Vec<Node>,
    parents: Vec<Vec<usize>>,
    visible: Vec<usize>,
    tying: Vec<Vec<TiedBinding>>,
    topo: Vec<usize>,
    latent: Vec<usize>,
    parent_strides: Vec<Vec<u64>>,
    cell_strides: Vec<u64>,
    visible_strides: Vec<u64>,
}

impl PartialEq for ModelSpec {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.parents == other.parents
            && self.visible == other.visible
            && self.tying == other.tying
    }
}

fn strides(cards: impl IntoIterator<Item = usize>) -> Option<Vec<u64>> {
    let mut out = Vec::new();
    let mut acc: u64 = 1;
    for c in cards {
        out.push(acc);
        acc = acc.checked_mul(c as u64)?;
    }
    Some(out)
}

impl ModelSpec {
    /// Builds and validates a model. Parent lists keep the given order, which
    /// fixes the axis order of each conditional table.
    pub fn new(
        nodes: Vec<Node>,
        parents: Vec<Vec<usize>>,
        visible: Vec<usize>,
        tying: Vec<Vec<TiedBinding>>,
    ) -> Result<Self> {
        let violations = validate(&nodes, &parents, &visible, &tying);
        if !violations.is_empty() {
            return Err(Error::InvalidModel(violations));
        }
        let topo = topological_order(&parents).expect("validated acyclic");
        let visible_set: BTreeSet<usize> = visible.iter().copied().collect();
        let latent = (0..nodes.len()).filter(|n| !visible_set.contains(n)).collect();
        let parent_strides = parents
            .iter()
            .map(|ps| strides(ps.iter().map(|&p| nodes[p].card)).expect("validated size"))
            .collect();
        let cell_strides = strides(nodes.iter().map(|n| n.card)).expect("validated size");
        let visible_strides = strides(visible.iter().map(|&v| nodes[v].card)).expect("validated size");
        Ok(Self {
            nodes,
            parents,
            visible,
            tying,
            topo,
            latent,
            parent_strides,
            cell_strides,
            visible_strides,
        })
    }

    /// Convenience constructor from named nodes and `(parent, child)` edges.
    pub fn from_edges(
        nodes: &[(&str, usize)],
        edges: &[(&str, &str)],
        visible: &[&str],
    ) -> Result<Self> {
        let nodes: Vec<Node> = nodes.iter().map(|&(n, c)| Node::new(n, c)).collect();
        let lookup = name_lookup(&nodes);
        let idx = |name: &str| -> Result<usize> {
            lookup
                .get(name)
                .copied()
                .ok_or_else(|| Error::InvalidModel(vec![unknown_name(name)]))
        };
        let mut parents = vec![Vec::new(); nodes.len()];
        for &(p, c) in edges {
            parents[idx(c)?].push(idx(p)?);
        }
        let visible = visible.iter().map(|v| idx(v)).collect::<Result<Vec<_>>>()?;
        Self::new(nodes, parents, visible, Vec::new())
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn card(&self, n: usize) -> usize {
        self.nodes[n].card
    }

    pub fn cards(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.card).collect()
    }

    pub fn parents(&self, n: usize) -> &[usize] {
        &self.parents[n]
    }

    pub fn visible(&self) -> &[usize] {
        &self.visible
    }

    pub fn latent(&self) -> &[usize] {
        &self.latent
    }

    pub fn tying(&self) -> &[Vec<TiedBinding>] {
        &self.tying
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn visible_cards(&self) -> Vec<usize> {
        self.visible.iter().map(|&v| self.nodes[v].card).collect()
    }

    /// Number of configurations of the parent set of `n` (1 for a root).
    pub fn parent_configs(&self, n: usize) -> u64 {
        self.parents[n].iter().map(|&p| self.nodes[p].card as u64).product()
    }

    pub fn num_cells(&self) -> u64 {
        self.nodes.iter().map(|n| n.card as u64).product()
    }

    pub fn latent_space_size(&self) -> f64 {
        self.latent.iter().map(|&n| self.nodes[n].card as f64).product()
    }

    #[inline]
    pub fn parent_key(&self, n: usize, cell: &[usize]) -> u64 {
        self.parents[n]
            .iter()
            .zip(&self.parent_strides[n])
            .map(|(&p, &s)| cell[p] as u64 * s)
            .sum()
    }

    /// Family key: parent key times `I_n` plus the child index, so the parent
    /// key of a family key is `key / I_n`.
    #[inline]
    pub fn family_key(&self, n: usize, cell: &[usize]) -> u64 {
        self.parent_key(n, cell) * self.nodes[n].card as u64 + cell[n] as u64
    }

    #[inline]
    pub fn cell_key(&self, cell: &[usize]) -> u64 {
        cell.iter().zip(&self.cell_strides).map(|(&i, &s)| i as u64 * s).sum()
    }

    /// Key of the visible projection of a full cell.
    #[inline]
    pub fn visible_key(&self, cell: &[usize]) -> u64 {
        self.visible
            .iter()
            .zip(&self.visible_strides)
            .map(|(&v, &s)| cell[v] as u64 * s)
            .sum()
    }

    /// Key of a visible tuple given in visible order.
    pub fn visible_tuple_key(&self, iv: &[usize]) -> u64 {
        iv.iter().zip(&self.visible_strides).map(|(&i, &s)| i as u64 * s).sum()
    }

    pub fn decode_cell(&self, mut key: u64) -> Vec<usize> {
        self.nodes
            .iter()
            .map(|n| {
                let c = n.card as u64;
                let i = key % c;
                key /= c;
                i as usize
            })
            .collect()
    }

    /// Parent configuration of node `n` decoded into `(parent node, index)` pairs.
    pub fn decode_parent_key(&self, n: usize, mut key: u64) -> Vec<(usize, usize)> {
        self.parents[n]
            .iter()
            .map(|&p| {
                let c = self.nodes[p].card as u64;
                let i = key % c;
                key /= c;
                (p, i as usize)
            })
            .collect()
    }

    /// All latent configurations, each as a vector aligned with [`Self::latent`],
    /// in little-endian odometer order.
    pub fn latent_configs(&self, cap: usize) -> Result<Vec<Vec<usize>>> {
        let size = self.latent_space_size();
        if size > cap as f64 {
            return Err(Error::LatentSpaceTooLarge { size, cap });
        }
        let cards: Vec<usize> = self.latent.iter().map(|&n| self.nodes[n].card).collect();
        Ok(odometer(&cards))
    }
}

/// Every tuple over `cards` in little-endian odometer order.
pub fn odometer(cards: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = cards.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut cur = vec![0usize; cards.len()];
    for _ in 0..total {
        out.push(cur.clone());
        for (slot, &c) in cur.iter_mut().zip(cards) {
            *slot += 1;
            if *slot < c {
                break;
            }
            *slot = 0;
        }
    }
    out
}

fn name_lookup(nodes: &[Node]) -> HashMap<&str, usize> {
    nodes.iter().enumerate().map(|(i, n)| (n.name.as_str(), i)).collect()
}

fn unknown_name(name: &str) -> Violation {
    Violation::BadIndex {
        context: format!("unknown node name `{name}`"),
        index: usize::MAX,
    }
}

fn topological_order(parents: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = parents.len();
    let mut indeg: Vec<usize> = parents.iter().map(|p| p.len()).collect();
    let mut children = vec![Vec::new(); n];
    for (c, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(c);
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(&i) = ready.iter().next() {
        ready.remove(&i);
        order.push(i);
        for &c in &children[i] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                ready.insert(c);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Checks every structural invariant and reports all violations found.
pub fn validate(
    nodes: &[Node],
    parents: &[Vec<usize>],
    visible: &[usize],
    tying: &[Vec<TiedBinding>],
) -> Vec<Violation> {
    let n = nodes.len();
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for node in nodes {
        if node.card == 0 {
            out.push(Violation::ZeroCardinality(node.name.clone()));
        }
        if !seen.insert(node.name.as_str()) {
            out.push(Violation::DuplicateName(node.name.clone()));
        }
    }
    if parents.len() != n {
        out.push(Violation::BadIndex {
            context: format!("parent lists ({} lists for {n} nodes)", parents.len()),
            index: parents.len(),
        });
        return out;
    }
    let mut indices_ok = true;
    for (c, ps) in parents.iter().enumerate() {
        let mut dup = BTreeSet::new();
        for &p in ps {
            if p >= n {
                indices_ok = false;
                out.push(Violation::BadIndex {
                    context: format!("parents of `{}`", nodes[c].name),
                    index: p,
                });
            } else if !dup.insert(p) || p == c {
                out.push(Violation::Duplicate(
                    nodes[p].name.clone(),
                    format!("parents of `{}`", nodes[c].name),
                ));
            }
        }
    }
    if visible.is_empty() {
        out.push(Violation::EmptyVisibleSet);
    }
    let mut vis_seen = BTreeSet::new();
    for &v in visible {
        if v >= n {
            out.push(Violation::BadIndex {
                context: "visible set".into(),
                index: v,
            });
        } else if !vis_seen.insert(v) {
            out.push(Violation::Duplicate(nodes[v].name.clone(), "visible set".into()));
        }
    }
    if indices_ok && out.iter().all(|v| !matches!(v, Violation::Duplicate(..))) {
        if topological_order(parents).is_none() {
            let cyc = cycle_members(parents);
            out.push(Violation::CycleDetected(
                cyc.into_iter().map(|i| nodes[i].name.clone()).collect(),
            ));
        }
    }
    if strides(nodes.iter().map(|n| n.card.max(1))).is_none()
        || nodes.iter().try_fold(1u64, |acc, nd| acc.checked_mul(nd.card.max(1) as u64)).is_none()
    {
        out.push(Violation::SpaceTooLarge(n));
    }
    if indices_ok {
        out.extend(validate_tying(nodes, parents, visible, tying));
    }
    out
}

/// Nodes that cannot be peeled off as sources or sinks lie on (or between) cycles.
fn cycle_members(parents: &[Vec<usize>]) -> Vec<usize> {
    let n = parents.len();
    let mut alive = vec![true; n];
    loop {
        let mut changed = false;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            let has_parent = parents[i].iter().any(|&p| alive[p]);
            let has_child = (0..n).any(|c| alive[c] && parents[c].contains(&i));
            if !has_parent || !has_child {
                alive[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (0..n).filter(|&i| alive[i]).collect()
}

fn validate_tying(
    nodes: &[Node],
    parents: &[Vec<usize>],
    visible: &[usize],
    tying: &[Vec<TiedBinding>],
) -> Vec<Violation> {
    let mut out = Vec::new();
    if tying.is_empty() {
        return out;
    }
    let n = nodes.len();
    for (g, group) in tying.iter().enumerate() {
        for b in group {
            if b.child >= n || b.parents.iter().any(|&p| p >= n) {
                out.push(Violation::BadIndex {
                    context: format!("tying group {g}"),
                    index: b.child,
                });
                return out;
            }
            let declared: BTreeSet<usize> = b.parents.iter().copied().collect();
            let actual: BTreeSet<usize> = parents[b.child].iter().copied().collect();
            if declared != actual || b.parents.len() != parents[b.child].len() {
                out.push(Violation::TyingShapeMismatch {
                    group: g,
                    detail: format!(
                        "binding for `{}` does not list exactly its parents",
                        nodes[b.child].name
                    ),
                });
            }
        }
        if let Some(first) = group.first() {
            let shape = |b: &TiedBinding| -> (usize, Vec<usize>) {
                (nodes[b.child].card, b.parents.iter().map(|&p| nodes[p].card).collect())
            };
            let reference = shape(first);
            for b in &group[1..] {
                let s = shape(b);
                if s != reference {
                    out.push(Violation::TyingShapeMismatch {
                        group: g,
                        detail: format!(
                            "`{}` has shape {:?}, `{}` has shape {:?}",
                            nodes[first.child].name, reference, nodes[b.child].name, s
                        ),
                    });
                }
            }
        }
    }
    if !out.is_empty() {
        return out;
    }
    // Only the symmetric-CP pattern is supported: one latent root whose every
    // child is visible and tied into one group.
    let roots: Vec<usize> = (0..n).filter(|&i| parents[i].is_empty()).collect();
    let supported = tying.len() == 1 && roots.len() == 1 && {
        let root = roots[0];
        let group = &tying[0];
        let children: BTreeSet<usize> = group.iter().map(|b| b.child).collect();
        let others: BTreeSet<usize> = (0..n).filter(|&i| i != root).collect();
        let vis: BTreeSet<usize> = visible.iter().copied().collect();
        children.len() == group.len()
            && children == others
            && vis == others
            && group.iter().all(|b| b.parents == [root])
    };
    if !supported {
        out.push(Violation::UnsupportedTying(
            "only a single latent root with all visible children tied in one group is supported"
                .into(),
        ));
    }
    out
}

/// Base measure of the Dirichlet pseudo-counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BaseMeasure {
    /// `α(i_{1:N}) = a / ∏ I_n`; all family tables are marginals of one measure.
    Bdeu,
    /// Every conditional-table cell gets the same pseudo-count, regardless of the
    /// table's size. Not Markov-consistent; kept for comparison with BDeu.
    FlatCell(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Equivalent sample size and Gamma shape.
    pub a: f64,
    /// Gamma rate.
    pub b: f64,
    pub base: BaseMeasure,
}

impl PriorSpec {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        Self::with_base(a, b, BaseMeasure::Bdeu)
    }

    pub fn with_base(a: f64, b: f64, base: BaseMeasure) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidPrior(format!("a must be positive and finite, got {a}")));
        }
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidPrior(format!("b must be positive and finite, got {b}")));
        }
        if let BaseMeasure::FlatCell(c) = base {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidPrior(format!("cell pseudo-count must be positive, got {c}")));
            }
        }
        Ok(Self { a, b, base })
    }
}

/// Constant pseudo-counts of one family: every `α_fa(n)` cell holds `cell`,
/// and every parent configuration sums to `parent = cell · I_n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FamilyPrior {
    pub cell: f64,
    pub parent: f64,
}

pub fn alpha_family(spec: &ModelSpec, prior: &PriorSpec, n: usize) -> FamilyPrior {
    let card = spec.card(n) as f64;
    match prior.base {
        BaseMeasure::Bdeu => {
            let parent_cells = spec.parent_configs(n) as f64;
            let parent = prior.a / parent_cells;
            FamilyPrior {
                cell: parent / card,
                parent,
            }
        }
        BaseMeasure::FlatCell(c) => FamilyPrior {
            cell: c,
            parent: c * card,
        },
    }
}

pub fn alpha_families(spec: &ModelSpec, prior: &PriorSpec) -> Vec<FamilyPrior> {
    (0..spec.num_nodes()).map(|n| alpha_family(spec, prior, n)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CatalogKind {
    Klnmf,
    Cp,
    Tucker,
    Pachinko,
    Mmb,
    Snmf,
}

impl CatalogKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CatalogKind::Klnmf => "klnmf",
            CatalogKind::Cp => "cp",
            CatalogKind::Tucker => "tucker",
            CatalogKind::Pachinko => "pachinko",
            CatalogKind::Mmb => "mmb",
            CatalogKind::Snmf => "snmf",
        }
    }
}

impl fmt::Display for CatalogKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CatalogKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "klnmf" | "nmf" | "lda" => CatalogKind::Klnmf,
            "cp" | "parafac" => CatalogKind::Cp,
            "tucker" => CatalogKind::Tucker,
            "pachinko" => CatalogKind::Pachinko,
            "mmb" => CatalogKind::Mmb,
            "snmf" => CatalogKind::Snmf,
            other => return Err(Error::Config(format!("unknown catalog model `{other}`"))),
        })
    }
}

fn arity(kind: CatalogKind, expected: &str, got: usize) -> Error {
    Error::ArityMismatch {
        kind: kind.to_string(),
        expected: expected.into(),
        got,
    }
}

/// Builds a catalogue graph. Cardinality conventions:
///
/// * `klnmf`: `[I, K, J]`, chain `j → k → i`, visible `(i, j)`
/// * `cp`: `[R, I_1, .., I_N]`, star `r → i_n`, visible `(i_1, .., i_N)`
/// * `tucker`: `[I_1, I_2, I_3, R_1, R_2, R_3]`, core `r_3 → r_2 → r_1`, `r_3 → r_1`, `r_n → i_n`
/// * `pachinko`: `[J, K_1, .., K_L, I]`, chain `j → k_1 → .. → k_L → i`, visible `(i, j)`
/// * `mmb`: `[I, K, S]`, `i_1 → k_1 → s ← k_2 ← i_2`, visible `(i_1, i_2, s)`
/// * `snmf`: `[I, R]`, CP with two tied children, visible `(i_1, i_2)`
pub fn build_catalog_model(kind: CatalogKind, dims: &[usize]) -> Result<ModelSpec> {
    match kind {
        CatalogKind::Klnmf => {
            let [i, k, j] = dims else {
                return Err(arity(kind, "3 (I, K, J)", dims.len()));
            };
            ModelSpec::from_edges(
                &[("i", *i), ("k", *k), ("j", *j)],
                &[("j", "k"), ("k", "i")],
                &["i", "j"],
            )
        }
        CatalogKind::Cp => {
            if dims.len() < 2 {
                return Err(arity(kind, "at least 2 (R, I_1, ..)", dims.len()));
            }
            let mut nodes = vec![Node::new("r", dims[0])];
            let mut parents = vec![vec![]];
            for (n, &d) in dims[1..].iter().enumerate() {
                nodes.push(Node::new(format!("i{}", n + 1), d));
                parents.push(vec![0]);
            }
            let visible = (1..dims.len()).collect();
            ModelSpec::new(nodes, parents, visible, vec![])
        }
        CatalogKind::Tucker => {
            let [i1, i2, i3, r1, r2, r3] = dims else {
                return Err(arity(kind, "6 (I1, I2, I3, R1, R2, R3)", dims.len()));
            };
            ModelSpec::from_edges(
                &[("i1", *i1), ("i2", *i2), ("i3", *i3), ("r1", *r1), ("r2", *r2), ("r3", *r3)],
                &[
                    ("r3", "r2"),
                    ("r2", "r1"),
                    ("r3", "r1"),
                    ("r1", "i1"),
                    ("r2", "i2"),
                    ("r3", "i3"),
                ],
                &["i1", "i2", "i3"],
            )
        }
        CatalogKind::Pachinko => {
            if dims.len() < 3 {
                return Err(arity(kind, "at least 3 (J, K_1, .., I)", dims.len()));
            }
            let depth = dims.len() - 2;
            let mut nodes = vec![Node::new("j", dims[0])];
            for l in 0..depth {
                nodes.push(Node::new(format!("k{}", l + 1), dims[l + 1]));
            }
            nodes.push(Node::new("i", dims[dims.len() - 1]));
            let mut parents = vec![vec![]];
            for l in 1..nodes.len() {
                parents.push(vec![l - 1]);
            }
            let last = nodes.len() - 1;
            ModelSpec::new(nodes, parents, vec![last, 0], vec![])
        }
        CatalogKind::Mmb => {
            let [i, k, s] = dims else {
                return Err(arity(kind, "3 (I, K, S)", dims.len()));
            };
            ModelSpec::from_edges(
                &[("i1", *i), ("i2", *i), ("k1", *k), ("k2", *k), ("s", *s)],
                &[("i1", "k1"), ("i2", "k2"), ("k1", "s"), ("k2", "s")],
                &["i1", "i2", "s"],
            )
        }
        CatalogKind::Snmf => {
            let [i, r] = dims else {
                return Err(arity(kind, "2 (I, R)", dims.len()));
            };
            let nodes = vec![Node::new("r", *r), Node::new("i1", *i), Node::new("i2", *i)];
            let parents = vec![vec![], vec![0], vec![0]];
            let tying = vec![vec![
                TiedBinding {
                    child: 1,
                    parents: vec![0],
                },
                TiedBinding {
                    child: 2,
                    parents: vec![0],
                },
            ]];
            ModelSpec::new(nodes, parents, vec![1, 2], tying)
        }
    }
}

/// Symmetric CP with `n` tied children of cardinality `i` under a latent root of cardinality `r`.
pub fn symmetric_cp(i: usize, r: usize, n: usize) -> Result<ModelSpec> {
    let mut nodes = vec![Node::new("r", r)];
    let mut parents = vec![vec![]];
    let mut group = Vec::new();
    for c in 1..=n {
        nodes.push(Node::new(format!("i{c}"), i));
        parents.push(vec![0]);
        group.push(TiedBinding {
            child: c,
            parents: vec![0],
        });
    }
    ModelSpec::new(nodes, parents, (1..=n).collect(), vec![group])
}

fn immoralities(parents: &[Vec<usize>]) -> BTreeSet<(usize, usize, usize)> {
    let adjacent = |u: usize, v: usize| parents[u].contains(&v) || parents[v].contains(&u);
    let mut out = BTreeSet::new();
    for (c, ps) in parents.iter().enumerate() {
        for (x, &p) in ps.iter().enumerate() {
            for &q in &ps[x + 1..] {
                if !adjacent(p, q) {
                    out.insert((p.min(q), c, p.max(q)));
                }
            }
        }
    }
    out
}

/// Re-orients every edge to point from the earlier to the later node of `order`
/// (a permutation of node indices). Rejects orientations that change the
/// immoralities, since those are not Markov equivalent.
pub fn markov_equivalent_reorder(spec: &ModelSpec, order: &[usize]) -> Result<ModelSpec> {
    let n = spec.num_nodes();
    let mut rank = vec![usize::MAX; n];
    for (pos, &v) in order.iter().enumerate() {
        if v >= n || rank[v] != usize::MAX {
            return Err(Error::NotEquivalent(format!("{order:?} is not a permutation of 0..{n}")));
        }
        rank[v] = pos;
    }
    if order.len() != n {
        return Err(Error::NotEquivalent(format!("{order:?} is not a permutation of 0..{n}")));
    }
    let mut parents = vec![Vec::new(); n];
    for (c, ps) in spec.parents.iter().enumerate() {
        for &p in ps {
            let (from, to) = if rank[p] < rank[c] { (p, c) } else { (c, p) };
            parents[to].push(from);
        }
    }
    for (c, ps) in parents.iter_mut().enumerate() {
        // keep the original parent order when the family is unchanged
        let same: BTreeSet<usize> = ps.iter().copied().collect();
        let orig: BTreeSet<usize> = spec.parents[c].iter().copied().collect();
        if same == orig {
            *ps = spec.parents[c].clone();
        } else {
            ps.sort_unstable();
        }
    }
    if immoralities(&parents) != immoralities(&spec.parents) {
        return Err(Error::NotEquivalent(
            "re-orientation changes the set of immoralities".into(),
        ));
    }
    if !spec.tying.is_empty() && parents != spec.parents {
        return Err(Error::NotEquivalent("tied models cannot be re-oriented".into()));
    }
    ModelSpec::new(spec.nodes.clone(), parents, spec.visible.clone(), spec.tying.clone())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PriorFile {
    pub a: f64,
    pub b: f64,
}

/// The JSON model-spec file format.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub nodes: Vec<Node>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    pub visible: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tying: Vec<Vec<Vec<String>>>,
}

impl ModelFile {
    pub fn into_spec(self) -> Result<(ModelSpec, Option<PriorSpec>)> {
        let lookup = name_lookup(&self.nodes);
        let mut bad = Vec::new();
        let mut idx = |name: &str| -> usize {
            match lookup.get(name) {
                Some(&i) => i,
                None => {
                    bad.push(unknown_name(name));
                    usize::MAX
                }
            }
        };
        let mut parents = vec![Vec::new(); self.nodes.len()];
        let mut edges = Vec::new();
        for (p, c) in &self.edges {
            edges.push((idx(p), idx(c)));
        }
        let visible: Vec<usize> = self.visible.iter().map(|v| idx(v)).collect();
        let mut tying = Vec::new();
        for group in &self.tying {
            let mut g = Vec::new();
            for binding in group {
                let Some((child, ps)) = binding.split_first() else {
                    continue;
                };
                g.push(TiedBinding {
                    child: idx(child),
                    parents: ps.iter().map(|p| idx(p)).collect(),
                });
            }
            tying.push(g);
        }
        if !bad.is_empty() {
            return Err(Error::InvalidModel(bad));
        }
        for (p, c) in edges {
            parents[c].push(p);
        }
        let spec = ModelSpec::new(self.nodes, parents, visible, tying)?;
        let prior = self.prior.map(|p| PriorSpec::new(p.a, p.b)).transpose()?;
        Ok((spec, prior))
    }

    pub fn from_spec(spec: &ModelSpec, prior: Option<&PriorSpec>) -> Self {
        let name = |i: usize| spec.nodes[i].name.clone();
        let mut edges = Vec::new();
        for c in 0..spec.num_nodes() {
            for &p in &spec.parents[c] {
                edges.push((name(p), name(c)));
            }
        }
        Self {
            nodes: spec.nodes.clone(),
            edges,
            visible: spec.visible.iter().map(|&v| name(v)).collect(),
            prior: prior.map(|p| PriorFile { a: p.a, b: p.b }),
            tying: spec
                .tying
                .iter()
                .map(|g| {
                    g.iter()
                        .map(|b| std::iter::once(name(b.child)).chain(b.parents.iter().map(|&p| name(p))).collect())
                        .collect()
                })
                .collect(),
        }
    }
}

pub fn parse_model_json(text: &str) -> Result<(ModelSpec, Option<PriorSpec>)> {
    let file: ModelFile = serde_json::from_str(text)?;
    file.into_spec()
}

pub fn read_model(path: impl AsRef<Path>) -> Result<(ModelSpec, Option<PriorSpec>)> {
    parse_model_json(&std::fs::read_to_string(path)?)
}
