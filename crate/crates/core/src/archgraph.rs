//! Cooling architectures, their enumeration, and their graph encoding.
//!
//! An [`Architecture`] is a tree of coolant branches rooted at the tank. A
//! branch is an ordered run of cold-plate heat exchangers (CPHXs); after any
//! CPHX the flow may divide at a valve into two or more sub-branches. Branch
//! collections are unordered, so every architecture is stored in canonical
//! form: each collection sorted by the text rendering of its members.
//!
//! Text records look like `S;3;{[0,1],[2]}` (single-split, three CPHXs, two
//! parallel branches) or `M;3;{[0{[1],[2]}]}` (one root branch whose CPHX 0
//! feeds a split into CPHX 1 and CPHX 2).

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed range for a single CPHX heat load, kW.
pub const LOAD_RANGE_KW: (f64, f64) = (4.0, 16.0);

/// Number of node features.
pub const FEATURE_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    SingleSplit,
    MultiSplit,
}

impl Family {
    pub fn tag(self) -> char {
        match self {
            Family::SingleSplit => 'S',
            Family::MultiSplit => 'M',
        }
    }

    pub fn from_tag(s: &str) -> Result<Self> {
        match s {
            "S" | "single" => Ok(Family::SingleSplit),
            "M" | "multi" => Ok(Family::MultiSplit),
            other => Err(Error::Parse(format!("unknown family '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Tank,
    Junction,
    Cphx(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Segment {
    pub cphx: usize,
    /// Sub-branches fed after this CPHX; `None` when the flow continues in series.
    pub split: Option<Vec<Branch>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Branch {
    pub segments: Vec<Segment>,
}

impl Branch {
    pub fn chain(cphx: &[usize]) -> Self {
        Branch {
            segments: cphx
                .iter()
                .map(|&c| Segment {
                    cphx: c,
                    split: None,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Architecture {
    n_cphx: usize,
    family: Family,
    branches: Vec<Branch>,
}

impl Architecture {
    /// Validates and canonicalizes.
    pub fn new(family: Family, n_cphx: usize, mut branches: Vec<Branch>) -> Result<Self> {
        if n_cphx == 0 {
            return Err(Error::Bounds("architecture needs at least one CPHX".into()));
        }
        if branches.is_empty() {
            return Err(Error::Shape("architecture needs at least one branch".into()));
        }
        let mut seen = vec![false; n_cphx];
        let mut n_splits = 0usize;
        for b in &branches {
            check_branch(b, &mut seen, &mut n_splits)?;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Shape(format!("CPHX {missing} is not placed")));
        }
        if family == Family::SingleSplit && n_splits > 0 {
            return Err(Error::Shape(
                "single-split architectures cannot contain downstream splits".into(),
            ));
        }
        if family == Family::MultiSplit && branches.len() != 1 {
            return Err(Error::Shape(
                "multi-split architectures have a single root branch".into(),
            ));
        }
        canonicalize_branches(&mut branches);
        Ok(Architecture {
            n_cphx,
            family,
            branches,
        })
    }

    pub fn n_cphx(&self) -> usize {
        self.n_cphx
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// Number of downstream (junction) splits, excluding the tank-level split.
    pub fn n_downstream_splits(&self) -> usize {
        fn count(b: &Branch) -> usize {
            b.segments
                .iter()
                .map(|s| match &s.split {
                    Some(sub) => 1 + sub.iter().map(count).sum::<usize>(),
                    None => 0,
                })
                .sum()
        }
        self.branches.iter().map(count).sum()
    }

    /// True when no valve exists anywhere: one branch, no splits.
    pub fn is_chain(&self) -> bool {
        self.branches.len() == 1 && self.n_downstream_splits() == 0
    }

    /// Returns a copy with every CPHX index replaced by `perm[index]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_cphx {
            return Err(Error::Shape("permutation length mismatch".into()));
        }
        fn map(b: &Branch, perm: &[usize]) -> Branch {
            Branch {
                segments: b
                    .segments
                    .iter()
                    .map(|s| Segment {
                        cphx: perm[s.cphx],
                        split: s
                            .split
                            .as_ref()
                            .map(|sub| sub.iter().map(|x| map(x, perm)).collect()),
                    })
                    .collect(),
            }
        }
        Architecture::new(
            self.family,
            self.n_cphx,
            self.branches.iter().map(|b| map(b, perm)).collect(),
        )
    }
}

fn check_branch(b: &Branch, seen: &mut [bool], n_splits: &mut usize) -> Result<()> {
    if b.segments.is_empty() {
        return Err(Error::Shape("empty branch".into()));
    }
    let last = b.segments.len() - 1;
    for (k, seg) in b.segments.iter().enumerate() {
        if seg.split.is_some() && k != last {
            return Err(Error::Shape("a split must end its branch".into()));
        }
        let slot = seen
            .get_mut(seg.cphx)
            .ok_or_else(|| Error::Shape(format!("CPHX index {} out of range", seg.cphx)))?;
        if *slot {
            return Err(Error::Shape(format!("CPHX {} placed twice", seg.cphx)));
        }
        *slot = true;
        if let Some(sub) = &seg.split {
            if sub.len() < 2 {
                return Err(Error::Shape("a split needs at least two sub-branches".into()));
            }
            *n_splits += 1;
            for s in sub {
                check_branch(s, seen, n_splits)?;
            }
        }
    }
    Ok(())
}

fn canonicalize_branches(branches: &mut [Branch]) {
    for b in branches.iter_mut() {
        for seg in &mut b.segments {
            if let Some(sub) = &mut seg.split {
                canonicalize_branches(sub);
            }
        }
    }
    branches.sort_by_cached_key(branch_text);
}

fn branch_text(b: &Branch) -> String {
    let mut s = String::new();
    write_branch(&mut s, b);
    s
}

fn write_branch(out: &mut String, b: &Branch) {
    out.push('[');
    for (i, seg) in b.segments.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&seg.cphx.to_string());
        if let Some(sub) = &seg.split {
            write_branch_set(out, sub);
        }
    }
    out.push(']');
}

fn write_branch_set(out: &mut String, set: &[Branch]) {
    out.push('{');
    for (i, b) in set.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_branch(out, b);
    }
    out.push('}');
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_branch_set(&mut s, &self.branches);
        write!(f, "{};{};{}", self.family.tag(), self.n_cphx, s)
    }
}

/// Stable text key; equal iff the architectures agree up to reordering of
/// unordered branch collections.
pub fn canonical_key(arch: &Architecture) -> String {
    arch.to_string()
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Parse(format!(
                "expected '{}' at offset {}",
                c as char, self.pos
            )))
        }
    }

    fn branch_set(&mut self) -> Result<Vec<Branch>> {
        self.expect(b'{')?;
        let mut out = vec![self.branch()?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            out.push(self.branch()?);
        }
        self.expect(b'}')?;
        Ok(out)
    }

    fn branch(&mut self) -> Result<Branch> {
        self.expect(b'[')?;
        let mut segments = vec![self.segment()?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            segments.push(self.segment()?);
        }
        self.expect(b']')?;
        Ok(Branch { segments })
    }

    fn segment(&mut self) -> Result<Segment> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse(format!("expected CPHX index at offset {start}")));
        }
        let cphx = std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse("bad CPHX index".into()))?;
        let split = if self.peek() == Some(b'{') {
            Some(self.branch_set()?)
        } else {
            None
        };
        Ok(Segment { cphx, split })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().splitn(3, ';');
        let (fam, n, body) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(Error::Parse(format!("malformed architecture record '{s}'"))),
        };
        let family = Family::from_tag(fam)?;
        let n_cphx: usize = n
            .parse()
            .map_err(|_| Error::Parse(format!("bad CPHX count '{n}'")))?;
        let mut p = Parser {
            bytes: body.as_bytes(),
            pos: 0,
        };
        let branches = p.branch_set()?;
        if p.pos != body.len() {
            return Err(Error::Parse(format!("trailing input in '{s}'")));
        }
        Architecture::new(family, n_cphx, branches)
    }
}

impl Serialize for Architecture {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Architecture {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Enumeration

/// All set partitions of `items` (blocks keep the input order of `items`).
fn set_partitions(items: &[usize]) -> Vec<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    fn rec(
        items: &[usize],
        i: usize,
        blocks: &mut Vec<Vec<usize>>,
        out: &mut Vec<Vec<Vec<usize>>>,
    ) {
        if i == items.len() {
            out.push(blocks.clone());
            return;
        }
        for b in 0..blocks.len() {
            blocks[b].push(items[i]);
            rec(items, i + 1, blocks, out);
            blocks[b].pop();
        }
        blocks.push(vec![items[i]]);
        rec(items, i + 1, blocks, out);
        blocks.pop();
    }
    rec(items, 0, &mut blocks, &mut out);
    out
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn cartesian<T: Clone>(choices: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut acc: Vec<Vec<T>> = vec![Vec::new()];
    for opts in choices {
        let mut next = Vec::with_capacity(acc.len() * opts.len());
        for prefix in &acc {
            for o in opts {
                let mut v = prefix.clone();
                v.push(o.clone());
                next.push(v);
            }
        }
        acc = next;
    }
    acc
}

fn sort_and_dedup(mut archs: Vec<Architecture>) -> Vec<Architecture> {
    let mut keyed: Vec<(String, Architecture)> =
        archs.drain(..).map(|a| (canonical_key(&a), a)).collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    keyed.dedup_by(|a, b| a.0 == b.0);
    keyed.into_iter().map(|(_, a)| a).collect()
}

/// Every way to split `n` labeled CPHXs into an unordered set of series
/// branches fed in parallel from the tank.
pub fn enumerate_single_split(n: usize) -> Result<Vec<Architecture>> {
    if !(1..=8).contains(&n) {
        return Err(Error::Bounds(format!(
            "single-split enumeration supports 1..=8 CPHXs, got {n}"
        )));
    }
    let items: Vec<usize> = (0..n).collect();
    let mut archs = Vec::new();
    for partition in set_partitions(&items) {
        let orders: Vec<Vec<Vec<usize>>> = partition.iter().map(|b| permutations(b)).collect();
        for choice in cartesian(&orders) {
            let branches = choice.iter().map(|c| Branch::chain(c)).collect();
            archs.push(Architecture::new(Family::SingleSplit, n, branches)?);
        }
    }
    Ok(sort_and_dedup(archs))
}

#[derive(Clone)]
struct RootedTree {
    root: usize,
    children: Vec<RootedTree>,
}

fn rooted_trees(items: &[usize]) -> Vec<RootedTree> {
    let mut out = Vec::new();
    for (i, &root) in items.iter().enumerate() {
        let rest: Vec<usize> = items
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &x)| x)
            .collect();
        if rest.is_empty() {
            out.push(RootedTree {
                root,
                children: Vec::new(),
            });
            continue;
        }
        for partition in set_partitions(&rest) {
            let subtrees: Vec<Vec<RootedTree>> = partition.iter().map(|b| rooted_trees(b)).collect();
            for children in cartesian(&subtrees) {
                out.push(RootedTree { root, children });
            }
        }
    }
    out
}

fn tree_to_branch(tree: &RootedTree) -> Branch {
    let mut segments = Vec::new();
    let mut cur = tree;
    loop {
        match cur.children.len() {
            0 => {
                segments.push(Segment {
                    cphx: cur.root,
                    split: None,
                });
                break;
            }
            1 => {
                segments.push(Segment {
                    cphx: cur.root,
                    split: None,
                });
                cur = &cur.children[0];
            }
            _ => {
                segments.push(Segment {
                    cphx: cur.root,
                    split: Some(cur.children.iter().map(tree_to_branch).collect()),
                });
                break;
            }
        }
    }
    Branch { segments }
}

/// Architectures with one root branch leaving the tank, where after any CPHX
/// the flow may divide into an unordered set of two or more sub-branches,
/// each structured the same way. Pure series chains are included.
pub fn enumerate_multi_split(n: usize) -> Result<Vec<Architecture>> {
    if !(2..=7).contains(&n) {
        return Err(Error::Bounds(format!(
            "multi-split enumeration supports 2..=7 CPHXs, got {n}"
        )));
    }
    let items: Vec<usize> = (0..n).collect();
    let archs = rooted_trees(&items)
        .iter()
        .map(|t| Architecture::new(Family::MultiSplit, n, vec![tree_to_branch(t)]))
        .collect::<Result<Vec<_>>>()?;
    Ok(sort_and_dedup(archs))
}

pub fn enumerate(family: Family, n: usize) -> Result<Vec<Architecture>> {
    match family {
        Family::SingleSplit => enumerate_single_split(n),
        Family::MultiSplit => enumerate_multi_split(n),
    }
}

// ---------------------------------------------------------------------------
// Flat graphs

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlatGraph {
    vertices: Vec<NodeKind>,
    /// Row-major `n_v x n_v` 0/1 matrix.
    adjacency: Vec<u8>,
}

impl FlatGraph {
    /// Builds an undirected graph; rejects self-loops and out-of-range endpoints.
    pub fn from_edges(vertices: Vec<NodeKind>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = vertices.len();
        let mut adjacency = vec![0u8; n * n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Shape(format!("edge ({a},{b}) out of range for {n} vertices")));
            }
            if a == b {
                return Err(Error::Shape(format!("self-loop on vertex {a}")));
            }
            adjacency[a * n + b] = 1;
            adjacency[b * n + a] = 1;
        }
        Ok(FlatGraph {
            vertices,
            adjacency,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[NodeKind] {
        &self.vertices
    }

    pub fn adjacency(&self) -> &[u8] {
        &self.adjacency
    }

    pub fn is_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a * self.n_vertices() + b] != 0
    }

    pub fn neighbors(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.n_vertices();
        (0..n).filter(move |&v| self.adjacency[u * n + v] != 0)
    }

    pub fn degree(&self, u: usize) -> usize {
        self.neighbors(u).count()
    }

    /// Edge list with `a < b`, row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n_vertices();
        let mut out = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                if self.is_edge(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n_vertices();
        (0..n).all(|a| (0..n).all(|b| self.adjacency[a * n + b] == self.adjacency[b * n + a]))
    }

    pub fn trace(&self) -> usize {
        let n = self.n_vertices();
        (0..n).map(|i| self.adjacency[i * n + i] as usize).sum()
    }

    /// Number of vertices reachable from vertex 0.
    pub fn reachable_from_first(&self) -> usize {
        let n = self.n_vertices();
        if n == 0 {
            return 0;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.reachable_from_first() == self.n_vertices()
    }

    /// Relabels vertices: vertex `i` of `self` becomes vertex `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_vertices();
        check_permutation(perm, n)?;
        let mut vertices = vec![NodeKind::Tank; n];
        for (i, &p) in perm.iter().enumerate() {
            vertices[p] = self.vertices[i];
        }
        let edges: Vec<(usize, usize)> =
            self.edges().into_iter().map(|(a, b)| (perm[a], perm[b])).collect();
        FlatGraph::from_edges(vertices, &edges)
    }
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Shape(format!("permutation of length {} for {n} items", perm.len())));
    }
    let set: BTreeSet<usize> = perm.iter().copied().collect();
    if set.len() != n || set.iter().next_back().is_some_and(|&m| m >= n) {
        return Err(Error::Shape("not a permutation".into()));
    }
    Ok(())
}

/// Flattens an architecture: tank first, then vertices in depth-first flow
/// order. A tank-level split over two or more branches, and every downstream
/// split, is represented by one Junction vertex wired to the head of each
/// sub-branch.
pub fn to_flat_graph(arch: &Architecture) -> FlatGraph {
    let mut vertices = vec![NodeKind::Tank];
    let mut edges = Vec::new();

    fn attach(
        b: &Branch,
        parent: usize,
        vertices: &mut Vec<NodeKind>,
        edges: &mut Vec<(usize, usize)>,
    ) {
        let mut prev = parent;
        for seg in &b.segments {
            let v = vertices.len();
            vertices.push(NodeKind::Cphx(seg.cphx));
            edges.push((prev, v));
            prev = v;
            if let Some(sub) = &seg.split {
                let j = vertices.len();
                vertices.push(NodeKind::Junction);
                edges.push((v, j));
                for s in sub {
                    attach(s, j, vertices, edges);
                }
            }
        }
    }

    if arch.branches.len() >= 2 {
        vertices.push(NodeKind::Junction);
        edges.push((0, 1));
        for b in &arch.branches {
            attach(b, 1, &mut vertices, &mut edges);
        }
    } else {
        attach(&arch.branches[0], 0, &mut vertices, &mut edges);
    }
    FlatGraph::from_edges(vertices, &edges).expect("flattening a valid architecture")
}

// ---------------------------------------------------------------------------
// Scenarios and features

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub scenario_id: u64,
    /// kW per CPHX.
    pub loads: Vec<f64>,
}

impl Scenario {
    /// Range-checked constructor.
    pub fn new(scenario_id: u64, loads: Vec<f64>) -> Result<Self> {
        let s = Scenario { scenario_id, loads };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = LOAD_RANGE_KW;
        if self.loads.is_empty() {
            return Err(Error::Shape("scenario has no loads".into()));
        }
        for (i, &d) in self.loads.iter().enumerate() {
            if !(lo..=hi).contains(&d) {
                return Err(Error::Bounds(format!(
                    "load {i} = {d} kW outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    /// The first `n` loads, for an architecture with `n` CPHXs.
    pub fn for_arch(&self, n: usize) -> Result<Scenario> {
        if self.loads.len() < n {
            return Err(Error::Shape(format!(
                "scenario {} has {} loads, architecture needs {n}",
                self.scenario_id,
                self.loads.len()
            )));
        }
        Ok(Scenario {
            scenario_id: self.scenario_id,
            loads: self.loads[..n].to_vec(),
        })
    }
}

/// Flat graph plus one `[has_junction, relative_load, absolute_load_kw, is_tank]`
/// row per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGraph {
    pub flat: FlatGraph,
    pub features: Vec<[f64; FEATURE_DIM]>,
}

impl FeatureGraph {
    pub fn n_vertices(&self) -> usize {
        self.flat.n_vertices()
    }

    /// Vertex `i` becomes vertex `perm[i]`; feature rows move with it.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let flat = self.flat.permuted(perm)?;
        let mut features = vec![[0.0; FEATURE_DIM]; self.features.len()];
        for (i, &p) in perm.iter().enumerate() {
            features[p] = self.features[i];
        }
        Ok(FeatureGraph { flat, features })
    }
}

/// Builds node features from the flat graph and a load vector.
///
/// `split_cphx[i]` marks CPHX `i` as immediately followed by a split.
pub fn features_for(flat: &FlatGraph, loads: &[f64], split_cphx: &[bool]) -> Result<FeatureGraph> {
    let max_load = loads.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut features = Vec::with_capacity(flat.n_vertices());
    for kind in flat.vertices() {
        let row = match *kind {
            NodeKind::Tank => [0.0, 0.0, 0.0, 1.0],
            NodeKind::Junction => [1.0, 0.0, 0.0, 0.0],
            NodeKind::Cphx(i) => {
                let d = *loads
                    .get(i)
                    .ok_or_else(|| Error::Shape(format!("no load for CPHX {i}")))?;
                let rel = if max_load > 0.0 { d / max_load } else { 0.0 };
                let junction = split_cphx.get(i).copied().unwrap_or(false);
                [if junction { 1.0 } else { 0.0 }, rel, d, 0.0]
            }
        };
        features.push(row);
    }
    Ok(FeatureGraph {
        flat: flat.clone(),
        features,
    })
}

/// CPHXs whose outlet feeds a downstream split.
pub fn split_cphx_mask(arch: &Architecture) -> Vec<bool> {
    let mut mask = vec![false; arch.n_cphx()];
    fn walk(b: &Branch, mask: &mut [bool]) {
        for seg in &b.segments {
            if let Some(sub) = &seg.split {
                mask[seg.cphx] = true;
                for s in sub {
                    walk(s, mask);
                }
            }
        }
    }
    for b in arch.branches() {
        walk(b, &mut mask);
    }
    mask
}

pub fn node_features(arch: &Architecture, s: &Scenario) -> Result<FeatureGraph> {
    if s.loads.len() != arch.n_cphx() {
        return Err(Error::Shape(format!(
            "scenario has {} loads, architecture has {} CPHXs",
            s.loads.len(),
            arch.n_cphx()
        )));
    }
    features_for(&to_flat_graph(arch), &s.loads, &split_cphx_mask(arch))
}
