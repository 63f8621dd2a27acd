//! Composition plans: a DAG of service nodes wired by identifier edges.
//!
//! Text form, one directive per line, `#` starts a comment:
//!
//! ```text
//! node DS1 service=DS1 k=3 input=const:city=lyon
//! node DS2 service=DS2 k=2 input=parent
//! edge DS1 DS2
//! alpha=5 consent=off
//! ```
//!
//! A constant binding may omit its value (`input=const:city`); it must then be
//! supplied at execution time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use petgraph::algo::toposort;
use petgraph::graph::{DiGraph, NodeIndex};
use petgraph::visit::{Dfs, Reversed};
use petgraph::Direction;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InputBinding {
    Const { attr: String, value: Option<String> },
    Parent,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanNode {
    pub id: String,
    pub service: String,
    pub k: usize,
    pub input: InputBinding,
}

#[derive(Clone, Debug)]
pub struct CompositionPlan {
    nodes: Vec<PlanNode>,
    edges: Vec<(String, String)>,
    pub alpha: usize,
    pub consent: bool,
    graph: DiGraph<usize, ()>,
    index: BTreeMap<String, NodeIndex>,
}

impl CompositionPlan {
    pub fn new(nodes: Vec<PlanNode>, edges: Vec<(String, String)>, alpha: usize, consent: bool) -> Result<Self> {
        if alpha == 0 {
            return Err(Error::Plan("alpha must be at least 1".into()));
        }
        let mut graph = DiGraph::new();
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if n.k == 0 {
                return Err(Error::Plan(format!("node {}: k must be positive", n.id)));
            }
            if index.insert(n.id.clone(), graph.add_node(i)).is_some() {
                return Err(Error::Plan(format!("duplicate node `{}`", n.id)));
            }
        }
        let mut seen = BTreeSet::new();
        for (a, b) in &edges {
            let (Some(&ia), Some(&ib)) = (index.get(a), index.get(b)) else {
                return Err(Error::Plan(format!("edge {a} -> {b} names an unknown node")));
            };
            if seen.insert((ia, ib)) {
                graph.add_edge(ia, ib, ());
            }
        }
        let plan = CompositionPlan {
            nodes,
            edges,
            alpha,
            consent,
            graph,
            index,
        };
        if let Err(cycle) = toposort(&plan.graph, None) {
            let n = &plan.nodes[plan.graph[cycle.node_id()]];
            return Err(Error::Plan(format!("cycle through node `{}`", n.id)));
        }
        for n in &plan.nodes {
            let has_parents = !plan.parents(&n.id).is_empty();
            match (&n.input, has_parents) {
                (InputBinding::Parent, false) => return Err(Error::NoParents(n.id.clone())),
                (InputBinding::Const { .. }, true) => {
                    return Err(Error::Plan(format!("node {} has parents but binds a constant", n.id)))
                }
                _ => {}
            }
        }
        Ok(plan)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let (mut alpha, mut consent) = (1, false);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            let mut words = line.split_whitespace();
            let err = |m: String| Error::parse(n + 1, m);
            match words.next() {
                None => {}
                Some("node") => {
                    let id = words.next().ok_or_else(|| err("node without id".into()))?.to_string();
                    let (mut service, mut k, mut input) = (None, None, None);
                    for w in words {
                        let (key, val) = w
                            .split_once('=')
                            .ok_or_else(|| err(format!("expected key=value, got `{w}`")))?;
                        match key {
                            "service" => service = Some(val.to_string()),
                            "k" => k = Some(val.parse().map_err(|_| err(format!("bad k `{val}`")))?),
                            "input" => {
                                input = Some(parse_binding(val).ok_or_else(|| err(format!("bad input `{val}`")))?)
                            }
                            other => return Err(err(format!("unknown node field `{other}`"))),
                        }
                    }
                    nodes.push(PlanNode {
                        service: service.unwrap_or_else(|| id.clone()),
                        id,
                        k: k.ok_or_else(|| err("node without k".into()))?,
                        input: input.ok_or_else(|| err("node without input".into()))?,
                    });
                }
                Some("edge") => {
                    let (Some(a), Some(b), None) = (words.next(), words.next(), words.next()) else {
                        return Err(err("expected `edge <from> <to>`".into()));
                    };
                    edges.push((a.to_string(), b.to_string()));
                }
                Some(first) => {
                    for w in std::iter::once(first).chain(words) {
                        match w.split_once('=') {
                            Some(("alpha", v)) => alpha = v.parse().map_err(|_| err(format!("bad alpha `{v}`")))?,
                            Some(("consent", "on")) => consent = true,
                            Some(("consent", "off")) => consent = false,
                            _ => return Err(err(format!("unexpected `{w}`"))),
                        }
                    }
                }
            }
        }
        Self::new(nodes, edges, alpha, consent)
    }

    pub fn nodes(&self) -> &[PlanNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(String, String)] {
        &self.edges
    }

    pub fn node(&self, id: &str) -> Option<&PlanNode> {
        self.index.get(id).map(|&i| &self.nodes[self.graph[i]])
    }

    fn node_checked(&self, id: &str) -> Result<NodeIndex> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Plan(format!("unknown node `{id}`")))
    }

    /// Direct parents, in node-id order.
    pub fn parents(&self, id: &str) -> Vec<&str> {
        let Some(&i) = self.index.get(id) else {
            return Vec::new();
        };
        let mut p: Vec<&str> = self
            .graph
            .neighbors_directed(i, Direction::Incoming)
            .map(|j| self.nodes[self.graph[j]].id.as_str())
            .collect();
        p.sort_unstable();
        p
    }

    pub fn children(&self, id: &str) -> Vec<&str> {
        let Some(&i) = self.index.get(id) else {
            return Vec::new();
        };
        let mut c: Vec<&str> = self
            .graph
            .neighbors_directed(i, Direction::Outgoing)
            .map(|j| self.nodes[self.graph[j]].id.as_str())
            .collect();
        c.sort_unstable();
        c
    }

    pub fn is_root(&self, id: &str) -> bool {
        self.parents(id).is_empty()
    }

    /// Direct and indirect parents.
    pub fn ancestors(&self, id: &str) -> Result<Vec<&PlanNode>> {
        let start = self.node_checked(id)?;
        let rev = Reversed(&self.graph);
        let mut dfs = Dfs::new(rev, start);
        let mut out = Vec::new();
        while let Some(i) = dfs.next(rev) {
            if i != start {
                out.push(&self.nodes[self.graph[i]]);
            }
        }
        Ok(out)
    }

    /// Protection factor a node's input must satisfy: the largest `k` among
    /// its ancestors.
    pub fn effective_k(&self, id: &str) -> Result<usize> {
        self.ancestors(id)?
            .iter()
            .map(|n| n.k)
            .max()
            .ok_or_else(|| Error::NoParents(id.to_string()))
    }

    /// Nodes grouped by depth; each group depends only on earlier groups.
    /// Within a group nodes are in id order.
    pub fn levels(&self) -> Vec<Vec<&str>> {
        let order = toposort(&self.graph, None).expect("checked acyclic");
        let mut depth: BTreeMap<NodeIndex, usize> = BTreeMap::new();
        for &i in &order {
            let d = self
                .graph
                .neighbors_directed(i, Direction::Incoming)
                .map(|j| depth[&j] + 1)
                .max()
                .unwrap_or(0);
            depth.insert(i, d);
        }
        let max = depth.values().copied().max().map_or(0, |d| d + 1);
        let mut levels = vec![Vec::new(); max];
        for (i, d) in depth {
            levels[d].push(self.nodes[self.graph[i]].id.as_str());
        }
        for l in &mut levels {
            l.sort_unstable();
        }
        levels
    }

    /// Node ids in a deterministic topological order.
    pub fn topo_order(&self) -> Vec<&str> {
        self.levels().into_iter().flatten().collect()
    }

    pub fn edge_label(&self, id: &str) -> String {
        let parents = self.parents(id);
        if parents.is_empty() {
            format!("user->{id}")
        } else {
            format!("{}->{id}", parents.join("+"))
        }
    }

    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_string().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

fn parse_binding(v: &str) -> Option<InputBinding> {
    if v == "parent" {
        return Some(InputBinding::Parent);
    }
    let spec = v.strip_prefix("const:")?;
    let (attr, value) = match spec.split_once('=') {
        Some((a, v)) => (a, Some(v.to_string())),
        None => (spec, None),
    };
    (!attr.is_empty()).then(|| InputBinding::Const {
        attr: attr.to_string(),
        value,
    })
}

/// Canonical text form; parsing it yields an equal plan.
impl fmt::Display for CompositionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for n in &self.nodes {
            write!(f, "node {} service={} k={} input=", n.id, n.service, n.k)?;
            match &n.input {
                InputBinding::Parent => writeln!(f, "parent")?,
                InputBinding::Const { attr, value: Some(v) } => writeln!(f, "const:{attr}={v}")?,
                InputBinding::Const { attr, value: None } => writeln!(f, "const:{attr}")?,
            }
        }
        for (a, b) in &self.edges {
            writeln!(f, "edge {a} {b}")?;
        }
        writeln!(
            f,
            "alpha={} consent={}",
            self.alpha,
            if self.consent { "on" } else { "off" }
        )
    }
}

impl FromStr for CompositionPlan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl PartialEq for CompositionPlan {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}
