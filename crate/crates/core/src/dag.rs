//! Directed acyclic graphs with d-separation queries.
//!
//! Text format, one item per line:
//!
//! ```text
//! # comment
//! Zd -> D
//! latent: K1, K2
//! Iso            (a node with no edges)
//! ```

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    labels: Vec<String>,
    latent: Vec<bool>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
}

impl Default for Dag {
    fn default() -> Self {
        Self::new()
    }
}

fn valid_label(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '*' || c == '\'')
}

impl Dag {
    pub fn new() -> Self {
        Self {
            labels: vec![],
            latent: vec![],
            parents: vec![],
            children: vec![],
            edges: vec![],
        }
    }

    /// Builds from node and edge lists; nodes named only in edges are added
    /// in order of appearance.
    pub fn from_edges(nodes: &[&str], latent: &[&str], edges: &[(&str, &str)]) -> Result<Self> {
        let mut dag = Self::new();
        for n in nodes {
            dag.add_node(n, false)?;
        }
        for (p, c) in edges {
            dag.ensure_node(p)?;
            dag.ensure_node(c)?;
            dag.add_edge(p, c)?;
        }
        for l in latent {
            let i = dag.index(l)?;
            dag.latent[i] = true;
        }
        Ok(dag)
    }

    pub fn add_node(&mut self, label: &str, latent: bool) -> Result<usize> {
        if !valid_label(label) {
            return Err(Error::Graph(format!("invalid node label `{label}`")));
        }
        if self.labels.iter().any(|l| l == label) {
            return Err(Error::Graph(format!("duplicate node `{label}`")));
        }
        self.labels.push(label.to_string());
        self.latent.push(latent);
        self.parents.push(vec![]);
        self.children.push(vec![]);
        Ok(self.labels.len() - 1)
    }

    fn ensure_node(&mut self, label: &str) -> Result<usize> {
        match self.labels.iter().position(|l| l == label) {
            Some(i) => Ok(i),
            None => self.add_node(label, false),
        }
    }

    /// Adds `parent -> child`, rejecting duplicates and cycles.
    pub fn add_edge(&mut self, parent: &str, child: &str) -> Result<()> {
        let p = self.index(parent)?;
        let c = self.index(child)?;
        if p == c {
            return Err(Error::Graph(format!("self loop on `{parent}`")));
        }
        if self.children[p].contains(&c) {
            return Err(Error::Graph(format!("duplicate edge {parent} -> {child}")));
        }
        if self.descendants(c).contains(&p) {
            return Err(Error::Graph(format!("edge {parent} -> {child} closes a cycle")));
        }
        self.children[p].push(c);
        self.parents[c].push(p);
        self.edges.push((p, c));
        Ok(())
    }

    pub fn index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownNode(label.to_string()))
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn is_latent(&self, i: usize) -> bool {
        self.latent[i]
    }

    pub fn set_latent(&mut self, label: &str, latent: bool) -> Result<()> {
        let i = self.index(label)?;
        self.latent[i] = latent;
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.edges.iter().map(|&(p, c)| (self.label(p), self.label(c)))
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    /// Strict descendants of `i`.
    pub fn descendants(&self, i: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = self.children[i].clone();
        while let Some(v) = stack.pop() {
            if seen.insert(v) {
                stack.extend(&self.children[v]);
            }
        }
        seen
    }

    /// The nodes in `set` and all their ancestors.
    fn ancestral_closure(&self, set: &BTreeSet<usize>) -> BTreeSet<usize> {
        let mut seen = set.clone();
        let mut stack: Vec<usize> = set.iter().copied().collect();
        while let Some(v) = stack.pop() {
            for &p in &self.parents[v] {
                if seen.insert(p) {
                    stack.push(p);
                }
            }
        }
        seen
    }

    /// Kahn's algorithm, always taking the lowest-index ready node.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..self.node_count()).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(self.node_count());
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for &c in &self.children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        (order.len() == self.node_count()).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut dag = Self::new();
        let mut latent = vec![];
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at_line = |e: Error| Error::Parse {
                line: line_no,
                message: e.to_string(),
            };
            if let Some(rest) = line.strip_prefix("latent:") {
                for l in rest.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()) {
                    latent.push((line_no, l.to_string()));
                }
            } else if let Some((p, c)) = line.split_once("->") {
                let (p, c) = (p.trim(), c.trim());
                if !valid_label(p) || !valid_label(c) {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("malformed edge `{line}`"),
                    });
                }
                dag.ensure_node(p).map_err(at_line)?;
                dag.ensure_node(c).map_err(at_line)?;
                dag.add_edge(p, c).map_err(at_line)?;
            } else if valid_label(line) {
                dag.ensure_node(line).map_err(at_line)?;
            } else {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected `parent -> child`, got `{line}`"),
                });
            }
        }
        for (line, l) in latent {
            dag.set_latent(&l, true).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
        }
        Ok(dag)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let connected: BTreeSet<usize> = self.edges.iter().flat_map(|&(p, c)| [p, c]).collect();
        for i in 0..self.node_count() {
            if !connected.contains(&i) {
                out.push_str(&format!("{}\n", self.labels[i]));
            }
        }
        for (p, c) in self.edges() {
            out.push_str(&format!("{p} -> {c}\n"));
        }
        let latent: Vec<&str> = (0..self.node_count())
            .filter(|&i| self.latent[i])
            .map(|i| self.label(i))
            .collect();
        if !latent.is_empty() {
            out.push_str(&format!("latent: {}\n", latent.join(", ")));
        }
        out
    }
}

/// The demand/supply graph: shifters, latent common factors, the two
/// curves, and the equilibrium outcomes.
pub fn build_wright_dag(include_w: bool) -> Dag {
    let mut nodes = vec!["Zd", "Zs"];
    if include_w {
        nodes.push("W");
    }
    nodes.extend(["K1", "K2", "D", "S", "P", "Y"]);
    let mut edges = vec![
        ("Zd", "D"),
        ("Zs", "S"),
        ("D", "P"),
        ("D", "Y"),
        ("S", "P"),
        ("S", "Y"),
        ("K1", "Zd"),
        ("K1", "Zs"),
        ("K2", "D"),
        ("K2", "S"),
    ];
    if include_w {
        edges.extend([("W", "D"), ("W", "S"), ("K1", "W")]);
    }
    Dag::from_edges(&nodes, &["K1", "K2", "D", "S"], &edges).expect("fixed graph is valid")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SeparationQuery {
    pub x: Vec<String>,
    pub y: Vec<String>,
    pub z: Vec<String>,
}

impl SeparationQuery {
    pub fn new(x: &[&str], y: &[&str], z: &[&str]) -> Self {
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Self {
            x: own(x),
            y: own(y),
            z: own(z),
        }
    }

    fn resolve(&self, dag: &Dag) -> Result<(BTreeSet<usize>, BTreeSet<usize>, BTreeSet<usize>)> {
        let set = |v: &[String]| -> Result<BTreeSet<usize>> { v.iter().map(|l| dag.index(l)).collect() };
        let (x, y, z) = (set(&self.x)?, set(&self.y)?, set(&self.z)?);
        if x.is_empty() || y.is_empty() {
            return Err(Error::invalid("separation query needs non-empty x and y"));
        }
        if !x.is_disjoint(&y) || !x.is_disjoint(&z) || !y.is_disjoint(&z) {
            return Err(Error::invalid("x, y and z must be disjoint"));
        }
        Ok((x, y, z))
    }
}

impl fmt::Display for SeparationQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} _|_ {}", self.x.join(", "), self.y.join(", "))?;
        if !self.z.is_empty() {
            write!(f, " | {}", self.z.join(", "))?;
        }
        Ok(())
    }
}

/// Reachability sweep over `(node, direction)` states.
///
/// `Up` means the node was entered from one of its children, `Down` from one
/// of its parents. A collider passes the ball only when it is in the
/// ancestral closure of `z`.
pub fn d_separated(dag: &Dag, q: &SeparationQuery) -> Result<bool> {
    let (x, y, z) = q.resolve(dag)?;
    let anc = dag.ancestral_closure(&z);
    #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
    enum Dir {
        Up,
        Down,
    }
    let mut visited = BTreeSet::new();
    let mut queue: VecDeque<(usize, Dir)> = x.iter().map(|&v| (v, Dir::Up)).collect();
    while let Some((v, d)) = queue.pop_front() {
        if !visited.insert((v, d)) {
            continue;
        }
        let blocked = z.contains(&v);
        if !blocked && y.contains(&v) {
            return Ok(false);
        }
        match d {
            Dir::Up if !blocked => {
                queue.extend(dag.parents(v).iter().map(|&p| (p, Dir::Up)));
                queue.extend(dag.children(v).iter().map(|&c| (c, Dir::Down)));
            }
            Dir::Up => {}
            Dir::Down => {
                if !blocked {
                    queue.extend(dag.children(v).iter().map(|&c| (c, Dir::Down)));
                }
                if anc.contains(&v) {
                    queue.extend(dag.parents(v).iter().map(|&p| (p, Dir::Up)));
                }
            }
        }
    }
    Ok(true)
}

/// An undirected simple path; `forward[i]` is true when the edge between
/// `nodes[i]` and `nodes[i + 1]` points toward `nodes[i + 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DagPath {
    pub nodes: Vec<String>,
    pub forward: Vec<bool>,
}

impl DagPath {
    /// Interior nodes with both adjacent edges pointing in.
    pub fn colliders(&self) -> Vec<&str> {
        (1..self.nodes.len().saturating_sub(1))
            .filter(|&i| self.forward[i - 1] && !self.forward[i])
            .map(|i| self.nodes[i].as_str())
            .collect()
    }

    pub fn has_collider(&self) -> bool {
        !self.colliders().is_empty()
    }

    /// Blocked given `z`: some non-collider interior node lies in `z`, or
    /// some collider has neither itself nor a descendant in `z`.
    pub fn is_blocked(&self, dag: &Dag, z: &[String]) -> Result<bool> {
        let zset: BTreeSet<usize> = z.iter().map(|l| dag.index(l)).collect::<Result<_>>()?;
        for i in 1..self.nodes.len().saturating_sub(1) {
            let v = dag.index(&self.nodes[i])?;
            let collider = self.forward[i - 1] && !self.forward[i];
            if collider {
                let mut family = dag.descendants(v);
                family.insert(v);
                if family.is_disjoint(&zset) {
                    return Ok(true);
                }
            } else if zset.contains(&v) {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

impl fmt::Display for DagPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.nodes[0])?;
        for (i, n) in self.nodes.iter().enumerate().skip(1) {
            write!(f, " {} {}", if self.forward[i - 1] { "->" } else { "<-" }, n)?;
        }
        Ok(())
    }
}

/// All simple paths between `x` and `y`, ignoring edge direction.
/// Exponential in general; meant for small graphs.
pub fn enumerate_paths(dag: &Dag, x: &str, y: &str) -> Result<Vec<DagPath>> {
    let (s, t) = (dag.index(x)?, dag.index(y)?);
    if s == t {
        return Err(Error::invalid("path endpoints must differ"));
    }
    let neighbors = |v: usize| -> Vec<(usize, bool)> {
        let mut out: Vec<(usize, bool)> = dag.children(v).iter().map(|&c| (c, true)).collect();
        out.extend(dag.parents(v).iter().map(|&p| (p, false)));
        out.sort();
        out
    };
    let mut paths = vec![];
    let mut stack = vec![s];
    let mut dirs = vec![];
    let mut on_path = vec![false; dag.node_count()];
    on_path[s] = true;
    fn walk(
        v: usize,
        t: usize,
        neighbors: &dyn Fn(usize) -> Vec<(usize, bool)>,
        stack: &mut Vec<usize>,
        dirs: &mut Vec<bool>,
        on_path: &mut [bool],
        out: &mut Vec<(Vec<usize>, Vec<bool>)>,
    ) {
        for (w, fwd) in neighbors(v) {
            if on_path[w] {
                continue;
            }
            stack.push(w);
            dirs.push(fwd);
            if w == t {
                out.push((stack.clone(), dirs.clone()));
            } else {
                on_path[w] = true;
                walk(w, t, neighbors, stack, dirs, on_path, out);
                on_path[w] = false;
            }
            stack.pop();
            dirs.pop();
        }
    }
    let mut raw = vec![];
    walk(s, t, &neighbors, &mut stack, &mut dirs, &mut on_path, &mut raw);
    for (nodes, forward) in raw {
        paths.push(DagPath {
            nodes: nodes.iter().map(|&i| dag.label(i).to_string()).collect(),
            forward,
        });
    }
    Ok(paths)
}

/// Separation decided by checking every path between every pair. Slow;
/// kept as an independent check on [`d_separated`].
pub fn d_separated_by_paths(dag: &Dag, q: &SeparationQuery) -> Result<bool> {
    q.resolve(dag)?;
    for x in &q.x {
        for y in &q.y {
            for path in enumerate_paths(dag, x, y)? {
                if !path.is_blocked(dag, &q.z)? {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Factor {
    pub node: String,
    pub parents: Vec<String>,
}

/// Markov factorization in topological order; parents listed in node order.
pub fn factorization(dag: &Dag) -> Result<Vec<Factor>> {
    let order = dag
        .topological_order()
        .ok_or_else(|| Error::Graph("graph has a cycle".into()))?;
    Ok(order
        .into_iter()
        .map(|v| {
            let mut ps = dag.parents(v).to_vec();
            ps.sort_unstable();
            Factor {
                node: dag.label(v).to_string(),
                parents: ps.into_iter().map(|p| dag.label(p).to_string()).collect(),
            }
        })
        .collect())
}

/// `f(a) f(b | a) f(c | b)` with lower-cased labels.
pub fn render_factorization(factors: &[Factor]) -> String {
    factors
        .iter()
        .map(|f| {
            let node = f.node.to_lowercase();
            if f.parents.is_empty() {
                format!("f({node})")
            } else {
                let ps: Vec<String> = f.parents.iter().map(|p| p.to_lowercase()).collect();
                format!("f({node} | {})", ps.join(", "))
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExclusionCheck {
    pub query: SeparationQuery,
    pub holds: bool,
}

/// Checks the shifter exclusions of a demand/supply-shaped graph:
/// `D _|_ Zs | Zd, W` and `S _|_ Zd | Zs, W` (W only if present), plus the
/// marginal `Zd _|_ Zs` when there is no `K1`.
pub fn implied_exclusions(dag: &Dag) -> Result<Vec<ExclusionCheck>> {
    for l in ["Zd", "Zs", "D", "S"] {
        dag.index(l)?;
    }
    let has_w = dag.index("W").is_ok();
    let with_w = |v: &'static str| if has_w { vec![v, "W"] } else { vec![v] };
    let mut queries = vec![
        SeparationQuery::new(&["D"], &["Zs"], &with_w("Zd")),
        SeparationQuery::new(&["S"], &["Zd"], &with_w("Zs")),
    ];
    if dag.index("K1").is_err() {
        queries.push(SeparationQuery::new(&["Zd"], &["Zs"], &[]));
    }
    queries
        .into_iter()
        .map(|q| Ok(ExclusionCheck { holds: d_separated(dag, &q)?, query: q }))
        .collect()
}
