//! Course-anchored meta-paths and their projection to course–course views.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hin::{HinGraph, NodeType};
use crate::io::atomic_write;
use crate::numerics::CsrMatrix;
use crate::par;

/// A symmetric `Course → intermediate → Course` meta-path.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MetaPath {
    intermediate: NodeType,
    label: String,
}

impl MetaPath {
    pub fn new(intermediate: NodeType, label: impl Into<String>) -> Result<Self> {
        if intermediate == NodeType::Course {
            return Err(Error::Config("meta-path intermediate cannot be a course".into()));
        }
        Ok(MetaPath {
            intermediate,
            label: label.into(),
        })
    }

    /// Courses sharing a teacher.
    pub fn mp1() -> Self {
        MetaPath { intermediate: NodeType::Teacher, label: "MP1".into() }
    }

    /// Courses sharing a student.
    pub fn mp2() -> Self {
        MetaPath { intermediate: NodeType::Student, label: "MP2".into() }
    }

    /// Courses sharing a subject.
    pub fn mp3() -> Self {
        MetaPath { intermediate: NodeType::Subject, label: "MP3".into() }
    }

    pub fn standard() -> Vec<MetaPath> {
        vec![Self::mp1(), Self::mp2(), Self::mp3()]
    }

    pub fn intermediate(&self) -> NodeType {
        self.intermediate
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Parses a `&`- or comma-separated list such as `MP1&MP3`.
    pub fn parse_list(s: &str) -> Result<Vec<MetaPath>> {
        s.split(['&', ','])
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse().map_err(Error::Config))
            .collect()
    }
}

impl fmt::Display for MetaPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

impl FromStr for MetaPath {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "MP1" | "mp1" | "teacher" => Ok(Self::mp1()),
            "MP2" | "mp2" | "student" => Ok(Self::mp2()),
            "MP3" | "mp3" | "subject" => Ok(Self::mp3()),
            other => Err(format!("unknown meta-path '{other}' (expected MP1, MP2 or MP3)")),
        }
    }
}

/// Joins meta-path labels the way ablation reports name settings.
pub fn combo_label(mps: &[MetaPath]) -> String {
    mps.iter().map(MetaPath::label).collect::<Vec<_>>().join("&")
}

/// One course–course view: the projected adjacency `A` and its propagation
/// matrix `D̃^{-1/2}(A+I)D̃^{-1/2}`.
#[derive(Clone, Debug)]
pub struct ViewGraph {
    pub metapath: MetaPath,
    pub adjacency: CsrMatrix,
    pub normalized: Arc<CsrMatrix>,
}

impl ViewGraph {
    pub fn n_courses(&self) -> usize {
        self.adjacency.n_rows()
    }

    /// Number of undirected course pairs joined in this view.
    pub fn n_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency.contains(i, j)
    }

    /// Upper-triangle edge list `(i, j)` with `i < j`.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        self.adjacency.iter().filter(|&(i, j, _)| i < j).map(|(i, j, _)| (i, j)).collect()
    }
}

/// Binary course × course adjacency of a meta-path: `A[i][j] = 1` iff `i != j`
/// and the courses share at least one intermediate node.
pub fn project(g: &HinGraph, mp: &MetaPath) -> CsrMatrix {
    project_with(g, mp, false)
}

/// [`project`], storing the number of shared intermediates instead of 1 when
/// `weighted` is set.
pub fn project_with(g: &HinGraph, mp: &MetaPath, weighted: bool) -> CsrMatrix {
    let partner_courses = g.partner_courses(mp.intermediate());
    let course_partners = g.course_partners(mp.intermediate());
    let n = g.n_courses();
    let rows = par::map_range(n, |c| {
        let mut neighbours: Vec<usize> = course_partners[c]
            .iter()
            .flat_map(|&x| partner_courses[x].iter().copied())
            .filter(|&c2| c2 != c)
            .collect();
        neighbours.sort_unstable();
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(neighbours.len());
        for c2 in neighbours {
            match row.last_mut() {
                Some((last, count)) if *last == c2 => *count += 1.0,
                _ => row.push((c2, 1.0)),
            }
        }
        if !weighted {
            row.iter_mut().for_each(|(_, v)| *v = 1.0);
        }
        row
    });
    CsrMatrix::from_rows(n, rows).expect("projected rows are sorted and unique")
}

/// `D̃^{-1/2}(A+I)D̃^{-1/2}` with `D̃` the row sums of `A+I`.
pub fn normalize(a: &CsrMatrix) -> Result<CsrMatrix> {
    let n = a.n_rows();
    if a.n_cols() != n {
        return Err(Error::shape("normalize", format!("{}x{} adjacency", n, a.n_cols())));
    }
    let mut deg = Vec::with_capacity(n);
    for r in 0..n {
        let (cols, vals) = a.row(r);
        if cols.binary_search(&r).is_ok() {
            return Err(Error::Invalid(format!("adjacency has a self-loop at {r}")));
        }
        deg.push(1.0 + vals.iter().sum::<f64>());
    }
    let rows = (0..n)
        .map(|r| {
            let (cols, vals) = a.row(r);
            let mut row: Vec<(usize, f64)> = cols
                .iter()
                .zip(vals)
                .map(|(&c, &v)| (c, v / (deg[r] * deg[c]).sqrt()))
                .collect();
            row.push((r, 1.0 / deg[r]));
            row
        })
        .collect();
    CsrMatrix::from_rows(n, rows)
}

/// Projects and normalizes each meta-path, preserving order.
pub fn project_all(g: &HinGraph, mps: &[MetaPath]) -> Result<Vec<ViewGraph>> {
    project_all_with(g, mps, false)
}

pub fn project_all_with(g: &HinGraph, mps: &[MetaPath], weighted: bool) -> Result<Vec<ViewGraph>> {
    let mut labels = HashSet::new();
    for mp in mps {
        if !labels.insert(mp.label()) {
            return Err(Error::Config(format!("duplicate meta-path '{}'", mp.label())));
        }
    }
    par::map(mps, |mp| -> Result<ViewGraph> {
        let adjacency = project_with(g, mp, weighted);
        let normalized = Arc::new(normalize(&adjacency)?);
        Ok(ViewGraph {
            metapath: mp.clone(),
            adjacency,
            normalized,
        })
    })
    .into_iter()
    .collect()
}

/// Writes each view's upper-triangle edges as `i<TAB>j` into
/// `dir/adjacency_<label>.tsv`.
pub fn dump_adjacency(dir: &Path, views: &[ViewGraph]) -> Result<()> {
    for v in views {
        let path = dir.join(format!("adjacency_{}.tsv", v.metapath.label()));
        atomic_write(&path, |w| {
            for (i, j) in v.edge_list() {
                writeln!(w, "{i}\t{j}")?;
            }
            Ok(())
        })?;
    }
    Ok(())
}
