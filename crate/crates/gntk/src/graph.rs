//! Graph data model, TU-format ingestion, degree features and per-node
//! scaling factors.
//!
//! A [`Graph`] stores an undirected adjacency matrix with zero diagonal
//! and a `d x N` feature matrix whose column `u` is the feature vector
//! of node `u`. Feature entries are nonnegative. Self-loops enter only
//! through [`Graph::adjacency_with_self_loops`], which is what the
//! aggregation formulas consume.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::sketch::SketchMatrix;

// ---------------------------------------------------------------------------
// Core types
// ---------------------------------------------------------------------------

/// An undirected graph with per-node features.
#[derive(Debug, Clone)]
pub struct Graph {
    num_nodes: usize,
    adjacency: DenseMatrix,
    /// `d x N`, column `u` is the feature vector of node `u`.
    features: DenseMatrix,
    label: Option<i64>,
}

impl Graph {
    /// Validates and builds a graph. The adjacency must be square,
    /// symmetric, zero-diagonal and 0/1 valued; features must have one
    /// column per node with nonnegative finite entries.
    pub fn new(adjacency: DenseMatrix, features: DenseMatrix, label: Option<i64>) -> Result<Self> {
        let n = adjacency.rows();
        if adjacency.cols() != n {
            return Err(Error::InvalidGraph(format!(
                "adjacency is {}x{}, expected square",
                adjacency.rows(),
                adjacency.cols()
            )));
        }
        for i in 0..n {
            if adjacency.get(i, i) != 0.0 {
                return Err(Error::InvalidGraph(format!("self-loop stored at node {i}")));
            }
            for j in 0..n {
                let v = adjacency.get(i, j);
                if v != 0.0 && v != 1.0 {
                    return Err(Error::InvalidGraph(format!(
                        "adjacency entry ({i},{j}) = {v}, expected 0 or 1"
                    )));
                }
                if adjacency.get(j, i) != v {
                    return Err(Error::InvalidGraph(format!(
                        "adjacency not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        if features.cols() != n {
            return Err(Error::InvalidGraph(format!(
                "features have {} columns for {} nodes",
                features.cols(),
                n
            )));
        }
        if !features.is_finite() || features.as_slice().iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidGraph(
                "features must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            num_nodes: n,
            adjacency,
            features,
            label,
        })
    }

    /// Build from an undirected edge list.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: DenseMatrix,
        label: Option<i64>,
    ) -> Result<Self> {
        let mut adj = DenseMatrix::zeros(num_nodes, num_nodes);
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u},{v}) out of range for {num_nodes} nodes"
                )));
            }
            if u == v {
                continue; // the stored adjacency stays zero-diagonal
            }
            adj.set(u, v, 1.0);
            adj.set(v, u, 1.0);
        }
        Self::new(adj, features, label)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn adjacency(&self) -> &DenseMatrix {
        &self.adjacency
    }

    /// `A + I`, the operator actually used by aggregation (the sum over
    /// `N(u) ∪ {u}`).
    pub fn adjacency_with_self_loops(&self) -> DenseMatrix {
        let mut a = self.adjacency.clone();
        for i in 0..self.num_nodes {
            a.set(i, i, 1.0);
        }
        a
    }

    /// `d x N` feature matrix.
    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.rows()
    }

    pub fn label(&self) -> Option<i64> {
        self.label
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency.row(u).iter().filter(|v| **v != 0.0).count()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_nodes).map(|u| self.degree(u)).max().unwrap_or(0)
    }
}

/// A named collection of graphs sharing one feature dimension.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graphs: Vec<Graph>,
    pub feature_dim: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>) -> Result<Self> {
        let name = name.into();
        let feature_dim = graphs
            .first()
            .map(Graph::feature_dim)
            .ok_or_else(|| Error::InvalidDataset("dataset has no graphs".into()))?;
        for (i, g) in graphs.iter().enumerate() {
            if g.feature_dim() != feature_dim {
                return Err(Error::InvalidDataset(format!(
                    "graph {i} has feature dim {}, dataset uses {feature_dim}; mixed dimensions are rejected",
                    g.feature_dim()
                )));
            }
        }
        Ok(Self {
            graphs,
            feature_dim,
            name,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn max_nodes(&self) -> usize {
        self.graphs.iter().map(Graph::num_nodes).max().unwrap_or(0)
    }
}

/// Choice of the per-node aggregation weight `c_u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalingRule {
    /// `c_u = 1`.
    Unit,
    /// `c_u = 1 / (|N(u)| + 1)`.
    InverseDegreePlusOne,
}

// ---------------------------------------------------------------------------
// Scaling factors
// ---------------------------------------------------------------------------

/// Diagonal matrix `C` of scaling factors under a degree-based rule.
pub fn scaling_diag(g: &Graph, rule: ScalingRule) -> DenseMatrix {
    let n = g.num_nodes();
    match rule {
        ScalingRule::Unit => DenseMatrix::identity(n),
        ScalingRule::InverseDegreePlusOne => {
            let d = DenseVector::from_vec(
                (0..n).map(|u| 1.0 / (g.degree(u) as f64 + 1.0)).collect(),
            );
            DenseMatrix::from_diag(&d)
        }
    }
}

/// Diagonal matrix `C` with `C[u,u] = || [H (S^T S) (A + I)]_{*,u} ||^-1`.
///
/// Without a sketch, `S^T S` is the identity and the factor reduces to
/// the inverse column norm of `H (A + I)`. Scaling the aggregated
/// embeddings by this `C` makes them unit vectors.
pub fn normalized_scaling_diag(g: &Graph, sketch: Option<&SketchMatrix>) -> Result<DenseMatrix> {
    let a_loops = g.adjacency_with_self_loops();
    let h = g.features();
    let hsts = match sketch {
        Some(s) => {
            let sh = s.mul_left(&h.transpose())?; // S * H^T, b x d
            s.mul_transpose_left(&sh)?.transpose() // (S^T S H^T)^T = H S^T S
        }
        None => h.clone(),
    };
    let prod = crate::linalg::matmul(&hsts, &a_loops)?; // d x N
    let n = g.num_nodes();
    let mut inv_norms = Vec::with_capacity(n);
    for u in 0..n {
        let norm = prod.column(u).norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNormColumn { node: u });
        }
        inv_norms.push(1.0 / norm);
    }
    Ok(DenseMatrix::from_diag(&DenseVector::from_vec(inv_norms)))
}

// ---------------------------------------------------------------------------
// Degree features
// ---------------------------------------------------------------------------

/// Replace features by a one-hot encoding of each node's degree, of
/// dimension `max_degree + 1`.
pub fn degree_features(g: &Graph, max_degree: usize) -> Result<Graph> {
    let n = g.num_nodes();
    let mut feats = DenseMatrix::zeros(max_degree + 1, n);
    for u in 0..n {
        let deg = g.degree(u);
        if deg > max_degree {
            return Err(Error::DegreeOutOfRange {
                node: u,
                degree: deg,
                max_degree,
            });
        }
        feats.set(deg, u, 1.0);
    }
    Graph::new(g.adjacency().clone(), feats, g.label())
}

// ---------------------------------------------------------------------------
// TU Dortmund format
// ---------------------------------------------------------------------------

/// Result of loading a TU-format directory.
#[derive(Debug)]
pub struct TuLoad {
    pub dataset: Dataset,
    /// Number of directed edges that appeared without their reverse and
    /// were symmetrized on load.
    pub symmetrized_edges: usize,
}

/// Loads a dataset in the TU Dortmund text format from `dir`.
///
/// The directory must contain `<name>_A.txt` (comma-separated edge
/// pairs, 1-based node ids) and `<name>_graph_indicator.txt` (one graph
/// id per node line). `<name>_node_labels.txt` and
/// `<name>_graph_labels.txt` are optional. Node labels are one-hot
/// encoded into features; without node labels every node gets a one-hot
/// degree feature sized by the dataset-wide maximum degree.
pub fn load_tu_dataset(dir: impl AsRef<Path>) -> Result<TuLoad> {
    let dir = dir.as_ref();
    let prefix = find_tu_prefix(dir)?;
    let name = prefix.clone();

    let indicator_path = dir.join(format!("{prefix}_graph_indicator.txt"));
    if !indicator_path.exists() {
        return Err(Error::MissingFile(indicator_path.display().to_string()));
    }
    let indicator = read_integers(&indicator_path)?;
    if indicator.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "{} is empty",
            indicator_path.display()
        )));
    }
    let num_graphs = *indicator.iter().max().unwrap() as usize;
    let total_nodes = indicator.len();

    // Per-graph node counts and the global index of each node's first slot.
    let mut counts = vec![0usize; num_graphs];
    for &g in &indicator {
        if g < 1 {
            return Err(Error::InvalidDataset(
                "graph indicator values must be >= 1".into(),
            ));
        }
        counts[g as usize - 1] += 1;
    }
    let mut local_index = vec![0usize; total_nodes];
    let mut graph_of = vec![0usize; total_nodes];
    {
        let mut seen = vec![0usize; num_graphs];
        for (node, &g) in indicator.iter().enumerate() {
            let gi = g as usize - 1;
            graph_of[node] = gi;
            local_index[node] = seen[gi];
            seen[gi] += 1;
        }
    }

    // Edges.
    let edges_path = dir.join(format!("{prefix}_A.txt"));
    if !edges_path.exists() {
        return Err(Error::MissingFile(edges_path.display().to_string()));
    }
    let raw_edges = read_edge_pairs(&edges_path)?;
    let mut adjacencies: Vec<DenseMatrix> =
        counts.iter().map(|&c| DenseMatrix::zeros(c, c)).collect();
    let mut directed_seen: Vec<BTreeSet<(usize, usize)>> =
        (0..num_graphs).map(|_| BTreeSet::new()).collect();
    for (line, &(u1, v1)) in raw_edges.iter().enumerate() {
        let (u, v) = (u1 - 1, v1 - 1); // ids are 1-based on disk
        if u >= total_nodes || v >= total_nodes {
            return Err(Error::Parse {
                file: edges_path.display().to_string(),
                line: line + 1,
                message: format!("node id out of range: ({u1},{v1})"),
            });
        }
        let gi = graph_of[u];
        if graph_of[v] != gi {
            return Err(Error::Parse {
                file: edges_path.display().to_string(),
                line: line + 1,
                message: format!("edge ({u1},{v1}) crosses graphs"),
            });
        }
        let (lu, lv) = (local_index[u], local_index[v]);
        if lu == lv {
            continue;
        }
        adjacencies[gi].set(lu, lv, 1.0);
        adjacencies[gi].set(lv, lu, 1.0);
        directed_seen[gi].insert((lu, lv));
    }
    let mut symmetrized_edges = 0usize;
    for seen in &directed_seen {
        for &(u, v) in seen.iter() {
            if !seen.contains(&(v, u)) {
                symmetrized_edges += 1;
            }
        }
    }

    // Node labels -> one-hot features over the sorted distinct label set.
    let labels_path = dir.join(format!("{prefix}_node_labels.txt"));
    let features: Vec<DenseMatrix> = if labels_path.exists() {
        let labels = read_integers(&labels_path)?;
        if labels.len() != total_nodes {
            return Err(Error::InvalidDataset(format!(
                "{} node labels for {} nodes",
                labels.len(),
                total_nodes
            )));
        }
        let distinct: BTreeSet<i64> = labels.iter().copied().collect();
        let index_of = |l: i64| distinct.iter().position(|x| *x == l).unwrap();
        let dim = distinct.len();
        let mut feats: Vec<DenseMatrix> =
            counts.iter().map(|&c| DenseMatrix::zeros(dim, c)).collect();
        for (node, &l) in labels.iter().enumerate() {
            feats[graph_of[node]].set(index_of(l), local_index[node], 1.0);
        }
        feats
    } else {
        // Degree features with a dataset-wide maximum degree.
        let max_deg = adjacencies
            .iter()
            .flat_map(|a| {
                (0..a.rows()).map(move |u| a.row(u).iter().filter(|v| **v != 0.0).count())
            })
            .max()
            .unwrap_or(0);
        adjacencies
            .iter()
            .map(|a| {
                let mut f = DenseMatrix::zeros(max_deg + 1, a.rows());
                for u in 0..a.rows() {
                    let deg = a.row(u).iter().filter(|v| **v != 0.0).count();
                    f.set(deg, u, 1.0);
                }
                f
            })
            .collect()
    };

    // Graph labels are optional.
    let glabels_path = dir.join(format!("{prefix}_graph_labels.txt"));
    let graph_labels: Option<Vec<i64>> = if glabels_path.exists() {
        let l = read_integers(&glabels_path)?;
        if l.len() != num_graphs {
            return Err(Error::InvalidDataset(format!(
                "{} graph labels for {} graphs",
                l.len(),
                num_graphs
            )));
        }
        Some(l)
    } else {
        None
    };

    let mut graphs = Vec::with_capacity(num_graphs);
    for (gi, (adj, feat)) in adjacencies.into_iter().zip(features).enumerate() {
        let label = graph_labels.as_ref().map(|l| l[gi]);
        graphs.push(Graph::new(adj, feat, label)?);
    }
    let dataset = Dataset::new(name, graphs)?;
    Ok(TuLoad {
        dataset,
        symmetrized_edges,
    })
}

fn find_tu_prefix(dir: &Path) -> Result<String> {
    let entries = std::fs::read_dir(dir)?;
    for entry in entries {
        let entry = entry?;
        let fname = entry.file_name().to_string_lossy().into_owned();
        if let Some(prefix) = fname.strip_suffix("_A.txt") {
            return Ok(prefix.to_string());
        }
    }
    Err(Error::MissingFile(format!(
        "{}/<name>_A.txt",
        dir.display()
    )))
}

fn read_integers(path: &Path) -> Result<Vec<i64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(line.parse::<i64>().map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn read_edge_pairs(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|v| v.parse::<usize>().ok())
                .filter(|v| *v >= 1)
                .ok_or_else(|| Error::Parse {
                    file: path.display().to_string(),
                    line: i + 1,
                    message: format!("expected 'u, v' with 1-based ids, got '{line}'"),
                })
        };
        let u = parse(parts.next())?;
        let v = parse(parts.next())?;
        out.push((u, v));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Native JSON serialization (fixtures)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct JsonDataset {
    name: String,
    feature_dim: usize,
    graphs: Vec<JsonGraph>,
}

#[derive(Serialize, Deserialize)]
struct JsonGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    /// One feature vector per node.
    features: Vec<Vec<f64>>,
    label: Option<i64>,
}

/// Serialize a dataset to the native JSON fixture format.
pub fn dataset_to_json(ds: &Dataset) -> Result<String> {
    let graphs = ds
        .graphs
        .iter()
        .map(|g| {
            let n = g.num_nodes();
            let mut edges = Vec::new();
            for u in 0..n {
                for v in (u + 1)..n {
                    if g.adjacency().get(u, v) != 0.0 {
                        edges.push((u, v));
                    }
                }
            }
            let features = (0..n)
                .map(|u| g.features().column(u).as_slice().to_vec())
                .collect();
            JsonGraph {
                n,
                edges,
                features,
                label: g.label(),
            }
        })
        .collect();
    Ok(serde_json::to_string_pretty(&JsonDataset {
        name: ds.name.clone(),
        feature_dim: ds.feature_dim,
        graphs,
    })?)
}

/// Parse a dataset from the native JSON fixture format.
pub fn dataset_from_json(text: &str) -> Result<Dataset> {
    let parsed: JsonDataset = serde_json::from_str(text)?;
    let mut graphs = Vec::with_capacity(parsed.graphs.len());
    for jg in &parsed.graphs {
        let mut feats = DenseMatrix::zeros(parsed.feature_dim, jg.n);
        if jg.features.len() != jg.n {
            return Err(Error::InvalidDataset(format!(
                "graph lists {} feature vectors for {} nodes",
                jg.features.len(),
                jg.n
            )));
        }
        for (u, fv) in jg.features.iter().enumerate() {
            if fv.len() != parsed.feature_dim {
                return Err(Error::InvalidDataset(format!(
                    "feature vector of node {u} has length {}, expected {}",
                    fv.len(),
                    parsed.feature_dim
                )));
            }
            for (d, v) in fv.iter().enumerate() {
                feats.set(d, u, *v);
            }
        }
        graphs.push(Graph::from_edges(jg.n, &jg.edges, feats, jg.label)?);
    }
    Dataset::new(parsed.name, graphs)
}

// ---------------------------------------------------------------------------
// Synthetic graphs
// ---------------------------------------------------------------------------

/// Random Erdos-Renyi graph with uniform nonnegative features.
pub fn random_graph<R: Rng>(
    rng: &mut R,
    num_nodes: usize,
    edge_prob: f64,
    feature_dim: usize,
) -> Graph {
    let mut adj = DenseMatrix::zeros(num_nodes, num_nodes);
    for u in 0..num_nodes {
        for v in (u + 1)..num_nodes {
            if rng.gen::<f64>() < edge_prob {
                adj.set(u, v, 1.0);
                adj.set(v, u, 1.0);
            }
        }
    }
    // Strictly positive so aggregated columns never vanish.
    let feats = DenseMatrix::from_fn(feature_dim, num_nodes, |_, _| rng.gen_range(0.05..1.0));
    Graph::new(adj, feats, None).expect("construction is valid")
}

/// Random dataset of `n` graphs with `num_nodes` nodes each.
pub fn random_dataset<R: Rng>(
    rng: &mut R,
    n: usize,
    num_nodes: usize,
    edge_prob: f64,
    feature_dim: usize,
) -> Dataset {
    let graphs = (0..n)
        .map(|_| random_graph(rng, num_nodes, edge_prob, feature_dim))
        .collect();
    Dataset::new("synthetic", graphs).expect("uniform feature dim")
}

// ---------------------------------------------------------------------------
