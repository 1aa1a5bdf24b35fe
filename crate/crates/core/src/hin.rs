//! Typed heterogeneous network of students, teachers, courses and subjects.
//!
//! Node ids are dense and grouped by type: all students first, then
//! teachers, courses and subjects, each group in file order. Course ids used
//! by the rest of the crate are *local* indices `0..n_courses` into the
//! course group.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::{atomic_write, parse_finite, Tsv};
use crate::numerics::Tensor;

/// Course attribute matrix, one row per course in local id order.
pub type FeatureMatrix = Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeType {
    Student = 0,
    Teacher = 1,
    Course = 2,
    Subject = 3,
}

impl NodeType {
    pub const ALL: [NodeType; 4] = [NodeType::Student, NodeType::Teacher, NodeType::Course, NodeType::Subject];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::Student => "student",
            NodeType::Teacher => "teacher",
            NodeType::Course => "course",
            NodeType::Subject => "subject",
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown node type '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeType {
    Click,
    Upload,
    Include,
}

impl EdgeType {
    pub const ALL: [EdgeType; 3] = [EdgeType::Click, EdgeType::Upload, EdgeType::Include];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::Click => "click",
            EdgeType::Upload => "upload",
            EdgeType::Include => "include",
        }
    }

    /// The non-course endpoint type this relation joins to a course.
    pub fn partner(self) -> NodeType {
        match self {
            EdgeType::Click => NodeType::Student,
            EdgeType::Upload => NodeType::Teacher,
            EdgeType::Include => NodeType::Subject,
        }
    }

    /// The relation joining `partner` nodes to courses, if any.
    pub fn for_partner(partner: NodeType) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.partner() == partner)
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EdgeType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown edge type '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub id: usize,
    pub kind: NodeType,
    pub external_id: String,
}

/// An undirected typed edge stored with the non-course endpoint in `src`
/// and the course in `dst`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeType,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HinGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    ranges: [Range<usize>; 4],
    by_external: HashMap<String, usize>,
}

/// Collects nodes and edges by external id, then validates into a
/// [`HinGraph`].
#[derive(Debug, Default)]
pub struct HinBuilder {
    nodes: Vec<(String, NodeType)>,
    edges: Vec<(String, String, EdgeType)>,
}

impl HinBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&mut self, external_id: impl Into<String>, kind: NodeType) -> &mut Self {
        self.nodes.push((external_id.into(), kind));
        self
    }

    pub fn edge(&mut self, a: impl Into<String>, b: impl Into<String>, kind: EdgeType) -> &mut Self {
        self.edges.push((a.into(), b.into(), kind));
        self
    }

    pub fn build(self) -> Result<HinGraph> {
        let mut seen = HashSet::with_capacity(self.nodes.len());
        for (ext, _) in &self.nodes {
            if !seen.insert(ext.as_str()) {
                return Err(Error::Schema(format!("duplicate node id '{ext}'")));
            }
        }
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by_key(|&i| self.nodes[i].1);
        let mut nodes = Vec::with_capacity(order.len());
        let mut by_external = HashMap::with_capacity(order.len());
        for (id, &i) in order.iter().enumerate() {
            let (ext, kind) = &self.nodes[i];
            by_external.insert(ext.clone(), id);
            nodes.push(Node {
                id,
                kind: *kind,
                external_id: ext.clone(),
            });
        }
        let ranges = type_ranges(&nodes);

        let mut edges = Vec::with_capacity(self.edges.len());
        let mut unique = HashSet::with_capacity(self.edges.len());
        for (a, b, kind) in &self.edges {
            let lookup = |ext: &str| {
                by_external
                    .get(ext)
                    .copied()
                    .ok_or_else(|| Error::Schema(format!("edge ({a}, {b}, {kind}) references unknown node '{ext}'")))
            };
            let (ia, ib) = (lookup(a)?, lookup(b)?);
            let edge = canonical_edge(&nodes, ia, ib, *kind)
                .ok_or_else(|| Error::Schema(format!(
                    "edge ({a}, {b}, {kind}) joins {} and {}, but {kind} joins {} and course",
                    nodes[ia].kind,
                    nodes[ib].kind,
                    kind.partner()
                )))?;
            if !unique.insert(edge) {
                return Err(Error::Schema(format!("duplicate edge ({a}, {b}, {kind})")));
            }
            edges.push(edge);
        }
        edges.sort();
        Ok(HinGraph {
            nodes,
            edges,
            ranges,
            by_external,
        })
    }
}

fn type_ranges(nodes: &[Node]) -> [Range<usize>; 4] {
    // nodes are sorted by type code
    let start = |code: u8| nodes.partition_point(|n| n.kind.code() < code);
    [0, 1, 2, 3].map(|c| start(c)..start(c + 1))
}

fn canonical_edge(nodes: &[Node], a: usize, b: usize, kind: EdgeType) -> Option<Edge> {
    let (ta, tb) = (nodes[a].kind, nodes[b].kind);
    let partner = kind.partner();
    if ta == partner && tb == NodeType::Course {
        Some(Edge { src: a, dst: b, kind })
    } else if tb == partner && ta == NodeType::Course {
        Some(Edge { src: b, dst: a, kind })
    } else {
        None
    }
}

impl HinGraph {
    pub fn empty() -> Self {
        HinBuilder::new().build().expect("empty graph is valid")
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Dense id range of one node type.
    pub fn range(&self, kind: NodeType) -> Range<usize> {
        self.ranges[kind.code() as usize].clone()
    }

    pub fn count(&self, kind: NodeType) -> usize {
        self.range(kind).len()
    }

    pub fn n_courses(&self) -> usize {
        self.count(NodeType::Course)
    }

    pub fn node_id(&self, external_id: &str) -> Option<usize> {
        self.by_external.get(external_id).copied()
    }

    /// Local course index of a node id, if the node is a course.
    pub fn course_index(&self, node_id: usize) -> Option<usize> {
        let r = self.range(NodeType::Course);
        r.contains(&node_id).then(|| node_id - r.start)
    }

    pub fn course_node(&self, course: usize) -> &Node {
        &self.nodes[self.range(NodeType::Course).start + course]
    }

    /// External ids of courses in local index order.
    pub fn course_ids(&self) -> Vec<&str> {
        self.nodes[self.range(NodeType::Course)]
            .iter()
            .map(|n| n.external_id.as_str())
            .collect()
    }

    /// Incident edge count for every node.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        for e in &self.edges {
            deg[e.src] += 1;
            deg[e.dst] += 1;
        }
        deg
    }

    /// For each node of type `partner` (local order), the sorted local ids of
    /// the courses it is joined to.
    pub fn partner_courses(&self, partner: NodeType) -> Vec<Vec<usize>> {
        let range = self.range(partner);
        let mut out = vec![Vec::new(); range.len()];
        let Some(kind) = EdgeType::for_partner(partner) else {
            return out;
        };
        let course_start = self.range(NodeType::Course).start;
        for e in self.edges.iter().filter(|e| e.kind == kind) {
            out[e.src - range.start].push(e.dst - course_start);
        }
        out.iter_mut().for_each(|v| v.sort_unstable());
        out
    }

    /// For each course, the sorted local ids of its `partner` neighbours.
    pub fn course_partners(&self, partner: NodeType) -> Vec<Vec<usize>> {
        let range = self.range(partner);
        let course_start = self.range(NodeType::Course).start;
        let mut out = vec![Vec::new(); self.n_courses()];
        let Some(kind) = EdgeType::for_partner(partner) else {
            return out;
        };
        for e in self.edges.iter().filter(|e| e.kind == kind) {
            out[e.dst - course_start].push(e.src - range.start);
        }
        out.iter_mut().for_each(|v| v.sort_unstable());
        out
    }

    /// Rebuilds the graph keeping only nodes for which `keep` holds, and the
    /// edges between kept nodes.
    fn retain(&self, keep: impl Fn(&Node) -> bool) -> HinGraph {
        let mut b = HinBuilder::new();
        let kept: Vec<bool> = self.nodes.iter().map(keep).collect();
        for n in self.nodes.iter().filter(|n| kept[n.id]) {
            b.node(n.external_id.clone(), n.kind);
        }
        for e in self.edges.iter().filter(|e| kept[e.src] && kept[e.dst]) {
            b.edge(
                self.nodes[e.src].external_id.clone(),
                self.nodes[e.dst].external_id.clone(),
                e.kind,
            );
        }
        b.build().expect("subgraph of a valid graph is valid")
    }

    pub fn to_builder(&self) -> HinBuilder {
        let mut b = HinBuilder::new();
        for n in &self.nodes {
            b.node(n.external_id.clone(), n.kind);
        }
        for e in &self.edges {
            b.edge(self.nodes[e.src].external_id.clone(), self.nodes[e.dst].external_id.clone(), e.kind);
        }
        b
    }
}

/// Removes students with fewer than `min_links` incident edges, together
/// with their edges. One pass; other node types are untouched.
pub fn degree_filter(g: &HinGraph, min_links: usize) -> Result<HinGraph> {
    degree_filter_types(g, min_links, &[NodeType::Student])
}

/// [`degree_filter`] applied to every node type in `kinds` at once. Degrees
/// are measured on the input graph.
pub fn degree_filter_types(g: &HinGraph, min_links: usize, kinds: &[NodeType]) -> Result<HinGraph> {
    if min_links == 0 {
        return Err(Error::Config("min_links must be at least 1".into()));
    }
    if kinds.contains(&NodeType::Course) {
        return Err(Error::Config("courses cannot be degree-filtered".into()));
    }
    let deg = g.degrees();
    Ok(g.retain(|n| !kinds.contains(&n.kind) || deg[n.id] >= min_links))
}

pub fn load_hin(nodes_path: &Path, edges_path: &Path) -> Result<HinGraph> {
    let mut b = HinBuilder::new();
    let nodes = Tsv::open(nodes_path)?;
    let mut seen = HashSet::new();
    for (line, f) in nodes.rows(&["id", "type"])? {
        let kind: NodeType = f[1].parse().map_err(|m: String| nodes.err(line, m))?;
        if f[0].is_empty() {
            return Err(nodes.err(line, "empty node id"));
        }
        if !seen.insert(f[0]) {
            return Err(nodes.err(line, format!("duplicate node id '{}'", f[0])));
        }
        b.node(f[0], kind);
    }
    let edges = Tsv::open(edges_path)?;
    for (line, f) in edges.rows(&["src", "dst", "type"])? {
        let kind: EdgeType = f[2].parse().map_err(|m: String| edges.err(line, m))?;
        b.edge(f[0], f[1], kind);
    }
    b.build()
}

pub fn save_hin(g: &HinGraph, nodes_path: &Path, edges_path: &Path) -> Result<()> {
    atomic_write(nodes_path, |w| {
        writeln!(w, "id\ttype")?;
        for n in &g.nodes {
            writeln!(w, "{}\t{}", n.external_id, n.kind)?;
        }
        Ok(())
    })?;
    atomic_write(edges_path, |w| {
        writeln!(w, "src\tdst\ttype")?;
        for e in &g.edges {
            writeln!(w, "{}\t{}\t{}", g.nodes[e.src].external_id, g.nodes[e.dst].external_id, e.kind)?;
        }
        Ok(())
    })
}

/// Reads one `d`-dimensional row per course, ordered by local course id.
pub fn load_features(path: &Path, g: &HinGraph, d: usize) -> Result<FeatureMatrix> {
    if d == 0 {
        return Err(Error::Config("feature dimension must be positive".into()));
    }
    read_course_rows(Tsv::open(path)?, g, "f", d)
}

/// Reads an embedding file written by [`write_course_rows`] with prefix `e`;
/// the width comes from the header.
pub fn load_embeddings(path: &Path, g: &HinGraph) -> Result<Tensor> {
    let tsv = Tsv::open(path)?;
    let width = tsv.header_width().saturating_sub(1);
    if width == 0 {
        return Err(Error::parse(path, 1, "embedding file has no value columns"));
    }
    read_course_rows(tsv, g, "e", width)
}

fn read_course_rows(tsv: Tsv, g: &HinGraph, prefix: &str, d: usize) -> Result<Tensor> {
    let path = tsv.path.clone();
    let path = path.as_path();
    let mut header = vec!["course_id".to_string()];
    header.extend((0..d).map(|i| format!("{prefix}{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let n = g.n_courses();
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut extra = Vec::new();
    for (line, f) in tsv.rows(&header)? {
        let Some(course) = g.node_id(f[0]).and_then(|id| g.course_index(id)) else {
            extra.push(f[0].to_string());
            continue;
        };
        if rows[course].is_some() {
            return Err(tsv.err(line, format!("duplicate row for course '{}'", f[0])));
        }
        let values = f[1..]
            .iter()
            .enumerate()
            .map(|(j, v)| parse_finite(v).ok_or_else(|| tsv.err(line, format!("{prefix}{j}: non-finite or malformed value '{v}'"))))
            .collect::<Result<Vec<_>>>()?;
        rows[course] = Some(values);
    }
    let missing: Vec<&str> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_none())
        .map(|(i, _)| g.course_node(i).external_id.as_str())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Schema(format!(
            "{}: course rows do not match courses (missing: [{}]; not a course: [{}])",
            path.display(),
            preview(&missing),
            preview(&extra.iter().map(String::as_str).collect::<Vec<_>>()),
        )));
    }
    let data = rows.into_iter().flatten().flatten().collect();
    Tensor::from_vec(n, d, data)
}

fn preview(ids: &[&str]) -> String {
    const MAX: usize = 10;
    let mut s = ids.iter().take(MAX).copied().collect::<Vec<_>>().join(", ");
    if ids.len() > MAX {
        s.push_str(&format!(", ... {} more", ids.len() - MAX));
    }
    s
}

pub fn save_features(path: &Path, g: &HinGraph, x: &FeatureMatrix) -> Result<()> {
    write_course_rows(path, g, x, "f")
}

/// Writes `course_id<TAB>{prefix}0...` rows for a course-indexed matrix.
pub fn write_course_rows(path: &Path, g: &HinGraph, x: &Tensor, prefix: &str) -> Result<()> {
    if x.rows() != g.n_courses() {
        return Err(Error::shape("write_course_rows", format!("{} rows for {} courses", x.rows(), g.n_courses())));
    }
    atomic_write(path, |w| {
        write!(w, "course_id")?;
        for j in 0..x.cols() {
            write!(w, "\t{prefix}{j}")?;
        }
        writeln!(w)?;
        for (i, id) in g.course_ids().into_iter().enumerate() {
            write!(w, "{id}")?;
            for v in x.row(i) {
                write!(w, "\t{v:?}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
}

/// Quality class per labelled course (local course index → class 0..=5).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CourseLabels {
    classes: BTreeMap<usize, usize>,
}

pub const MAX_SCORE: f64 = 5.0;

/// Nearest-integer quality class of a raw score in `[0, 5]`.
pub fn score_to_class(score: f64) -> Option<usize> {
    (score.is_finite() && (0.0..=MAX_SCORE).contains(&score)).then(|| score.round() as usize)
}

impl CourseLabels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, course: usize, class: usize) {
        self.classes.insert(course, class);
    }

    pub fn get(&self, course: usize) -> Option<usize> {
        self.classes.get(&course).copied()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// `(course, class)` pairs in course order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.classes.iter().map(|(&c, &y)| (c, y))
    }

    pub fn courses(&self) -> Vec<usize> {
        self.classes.keys().copied().collect()
    }
}

pub fn load_labels(path: &Path, g: &HinGraph) -> Result<CourseLabels> {
    let tsv = Tsv::open(path)?;
    let mut labels = CourseLabels::new();
    for (line, f) in tsv.rows(&["course_id", "score"])? {
        let course = g
            .node_id(f[0])
            .and_then(|id| g.course_index(id))
            .ok_or_else(|| tsv.err(line, format!("'{}' is not a course", f[0])))?;
        let class = parse_finite(f[1])
            .and_then(score_to_class)
            .ok_or_else(|| tsv.err(line, format!("score '{}' is not a number in [0, 5]", f[1])))?;
        if labels.get(course).is_some() {
            return Err(tsv.err(line, format!("duplicate label for '{}'", f[0])));
        }
        labels.insert(course, class);
    }
    Ok(labels)
}

pub fn save_labels(path: &Path, g: &HinGraph, labels: &CourseLabels) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "course_id\tscore")?;
        for (c, y) in labels.iter() {
            writeln!(w, "{}\t{}", g.course_node(c).external_id, y)?;
        }
        Ok(())
    })
}
