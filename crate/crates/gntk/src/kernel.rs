//! The graph kernel constructor: pairwise recursion over aggregate,
//! combine and readout stages, with three interchangeable aggregation
//! backends.
//!
//! For a pair of graphs the recursion tracks two matrices, `sigma` (the
//! covariance iterate) and `theta` (the kernel iterate). Each level
//! first aggregates both through `C (A+I) . X . (A+I) C`, then applies
//! `R` entrywise combine transforms built from Gaussian arc-cosine
//! expectations, and a final readout sums the entries. The three
//! backends compute the aggregation as a materialized Kronecker
//! product, as two matrix products, or as a sketched product that
//! never forms a full-size intermediate; the first two are exactly
//! equivalent, and the third degenerates to them under identity
//! sketches.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{self, Dataset, Graph, ScalingRule};
use crate::linalg::{self, DenseMatrix, DenseVector};
use crate::sketch::SketchMatrix;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Aggregation backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    /// Materializes `(C_i A_i) (x) (C_j A_j)` and multiplies the
    /// vectorized iterates. Quartic in the node count; the oracle
    /// baseline.
    NaiveKron,
    /// Two matrix products per iterate. Exactly equivalent to
    /// `NaiveKron` in exact arithmetic.
    Decoupled,
    /// Sketched two-sided products with per-graph AMS matrices.
    Sketched,
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::NaiveKron => "naive-kron",
            Backend::Decoupled => "decoupled",
            Backend::Sketched => "sketched",
        }
    }
}

/// Final pooling over node pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Readout {
    /// Sum the final-level kernel iterate.
    Sum,
    /// Sum the kernel iterates of every level 0..=L.
    JumpingKnowledge,
}

/// Per-node aggregation weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scaling {
    /// `c_u = 1`.
    Unit,
    /// `c_u = 1 / (deg(u) + 1)`.
    InverseDegreePlusOne,
    /// `c_u` is the inverse column norm of the (sketched) aggregated
    /// feature matrix, which makes first-level embeddings unit vectors.
    Normalized,
}

/// Entrywise transform applied by the combine stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CombineForm {
    /// The Gaussian expectations of ReLU products: with correlation `t`
    /// and scale `sqrt(d_u d_v)`, the covariance update is
    /// `c_phi/(2 pi) * sqrt(d_u d_v) * (sqrt(1-t^2) + (pi - arccos t) t)`.
    ArcCosine,
    /// The product-form surrogate whose one-level readout splits into
    /// the two closed-form kernel pieces: the covariance update is
    /// `c_phi/(2 pi) * sqrt(d_u d_v) * t * (pi - arccos t + sqrt(1-t^2))`.
    ProductForm,
}

/// Kernel construction parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GntkConfig {
    /// Number of aggregate/combine levels (`L`).
    pub levels: usize,
    /// Fully-connected layers per combine (`R`).
    pub fc_layers: usize,
    /// Activation scaling; 2 matches the usual ReLU initialization.
    pub c_phi: f64,
    pub scaling: Scaling,
    pub readout: Readout,
    pub backend: Backend,
    /// Sketch rows as a fraction of the node count, in (0, 1].
    pub sketch_ratio: f64,
    pub seed: u64,
    /// Correlations drifting past `1 + clamp_eps` on exact backends are
    /// reported as errors instead of silently clamped.
    pub clamp_eps: f64,
    pub combine: CombineForm,
    /// Cap on materialized Kronecker entries for `NaiveKron`.
    pub kron_entry_cap: u128,
}

impl Default for GntkConfig {
    fn default() -> Self {
        Self {
            levels: 2,
            fc_layers: 2,
            c_phi: 2.0,
            scaling: Scaling::Unit,
            readout: Readout::Sum,
            backend: Backend::Decoupled,
            sketch_ratio: 0.5,
            seed: 0,
            clamp_eps: 1e-6,
            combine: CombineForm::ArcCosine,
            kron_entry_cap: 100_000_000,
        }
    }
}

impl GntkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.fc_layers == 0 {
            return Err(Error::InvalidArgument {
                op: "GntkConfig",
                message: format!(
                    "need levels >= 1 and fc_layers >= 1, got L={}, R={}",
                    self.levels, self.fc_layers
                ),
            });
        }
        if self.c_phi <= 0.0 {
            return Err(Error::InvalidArgument {
                op: "GntkConfig",
                message: format!("c_phi must be positive, got {}", self.c_phi),
            });
        }
        if !(self.sketch_ratio > 0.0 && self.sketch_ratio <= 1.0) {
            return Err(Error::InvalidArgument {
                op: "GntkConfig",
                message: format!("sketch_ratio {} outside (0, 1]", self.sketch_ratio),
            });
        }
        Ok(())
    }

    /// Stable hash of the canonical JSON serialization.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    /// The one-level configuration under which the kernel splits into
    /// the two closed-form pieces: `L = R = 1`, normalized scaling,
    /// `c_phi = 1` with the product-form combine, sum readout.
    pub fn closed_form_reference(backend: Backend) -> Self {
        Self {
            levels: 1,
            fc_layers: 1,
            c_phi: 1.0,
            scaling: Scaling::Normalized,
            readout: Readout::Sum,
            backend,
            combine: CombineForm::ProductForm,
            ..Self::default()
        }
    }
}

// ---------------------------------------------------------------------------
// Pair state and per-graph operators
// ---------------------------------------------------------------------------

/// Recursion state for one graph pair.
#[derive(Debug, Clone)]
pub struct PairState {
    /// Covariance iterate, `N_i x N_j`.
    pub sigma: DenseMatrix,
    /// Kernel iterate, `N_i x N_j`.
    pub theta: DenseMatrix,
    /// Running self-pair covariance diagonal of the left graph.
    pub diag_i: DenseVector,
    /// Running self-pair covariance diagonal of the right graph.
    pub diag_j: DenseVector,
}

/// Initial state: both iterates are the feature Gram `H_i^T H_j` and
/// the diagonals are squared feature norms.
pub fn init_pair(gi: &Graph, gj: &Graph) -> Result<PairState> {
    if gi.feature_dim() != gj.feature_dim() {
        return Err(Error::InvalidDataset(format!(
            "feature dims differ: {} vs {}",
            gi.feature_dim(),
            gj.feature_dim()
        )));
    }
    let gram = linalg::matmul_tn(gi.features(), gj.features())?;
    let diag = |g: &Graph| {
        DenseVector::from_vec(
            (0..g.num_nodes())
                .map(|u| {
                    let col = g.features().column(u);
                    col.dot(&col)
                })
                .collect(),
        )
    };
    Ok(PairState {
        sigma: gram.clone(),
        theta: gram,
        diag_i: diag(gi),
        diag_j: diag(gj),
    })
}

/// Precomputed per-graph aggregation operators.
#[derive(Debug, Clone)]
pub struct AggregateOps {
    /// `M = C (A + I)`.
    pub scaled_adjacency: DenseMatrix,
    pub sketch: SketchMatrix,
    /// `M S^T`, the left factor of the sketched product.
    left: DenseMatrix,
    /// `(M S^T)^T = S (A + I) C`, the right factor.
    right: DenseMatrix,
}

impl AggregateOps {
    pub fn build(g: &Graph, scaling: Scaling, sketch: SketchMatrix) -> Result<Self> {
        if sketch.cols() != g.num_nodes() {
            return Err(Error::InvalidArgument {
                op: "AggregateOps::build",
                message: format!(
                    "sketch has {} columns for a graph with {} nodes",
                    sketch.cols(),
                    g.num_nodes()
                ),
            });
        }
        let c = match scaling {
            Scaling::Unit => graph::scaling_diag(g, ScalingRule::Unit),
            Scaling::InverseDegreePlusOne => {
                graph::scaling_diag(g, ScalingRule::InverseDegreePlusOne)
            }
            Scaling::Normalized => graph::normalized_scaling_diag(
                g,
                if sketch.is_identity() {
                    None
                } else {
                    Some(&sketch)
                },
            )?,
        };
        let a_loops = g.adjacency_with_self_loops();
        let m = a_loops.scale_rows(&c.diagonal())?;
        let left = sketch.mul_right_transpose(&m)?;
        let right = left.transpose();
        Ok(Self {
            scaled_adjacency: m,
            sketch,
            left,
            right,
        })
    }

    /// Exact operators (identity sketch) under a scaling rule.
    pub fn exact(g: &Graph, scaling: Scaling) -> Result<Self> {
        Self::build(g, scaling, SketchMatrix::identity(g.num_nodes()))
    }
}

// ---------------------------------------------------------------------------
// Aggregate backends
// ---------------------------------------------------------------------------

/// Aggregation through the materialized Kronecker product: vectorizes
/// each iterate and multiplies by `kron(M_i, M_j)`.
pub fn aggregate_naive_kron(
    state: &mut PairState,
    ops_i: &AggregateOps,
    ops_j: &AggregateOps,
    entry_cap: u128,
) -> Result<()> {
    let mi = &ops_i.scaled_adjacency;
    let mj = &ops_j.scaled_adjacency;
    let dim = mi.rows() as u128 * mj.rows() as u128;
    let entries = dim * dim;
    if entries > entry_cap {
        return Err(Error::KronTooLarge {
            entries,
            cap: entry_cap,
        });
    }
    let k = linalg::kron(mi, mj)?;
    let apply = |x: &DenseMatrix| -> Result<DenseMatrix> {
        let v = k.matvec(&linalg::vectorize(x))?;
        linalg::devectorize(&v, mi.rows(), mj.rows())
    };
    state.sigma = apply(&state.sigma)?;
    state.theta = apply(&state.theta)?;
    Ok(())
}

/// Aggregation as two matrix products per iterate:
/// `M_i . X . M_j^T`.
pub fn aggregate_decoupled(
    state: &mut PairState,
    ops_i: &AggregateOps,
    ops_j: &AggregateOps,
) -> Result<()> {
    let mi = &ops_i.scaled_adjacency;
    let mj = &ops_j.scaled_adjacency;
    state.sigma = linalg::vec_trick(mi, &state.sigma, mj)?;
    state.theta = linalg::vec_trick(mi, &state.theta, mj)?;
    Ok(())
}

/// Sketched aggregation `M_i S_i^T . S_i X S_j^T . S_j M_j^T` using the
/// precomputed outer factors, so no intermediate exceeds `N x b`.
pub fn aggregate_sketched(
    state: &mut PairState,
    ops_i: &AggregateOps,
    ops_j: &AggregateOps,
) -> Result<()> {
    let apply = |x: &DenseMatrix| -> Result<DenseMatrix> {
        let t1 = ops_i.sketch.mul_left(x)?; // b_i x N_j
        let t2 = ops_j.sketch.mul_right_transpose(&t1)?; // b_i x b_j
        let p = linalg::matmul(&ops_i.left, &t2)?; // N_i x b_j
        linalg::matmul(&p, &ops_j.right) // N_i x N_j
    };
    state.sigma = apply(&state.sigma)?;
    state.theta = apply(&state.theta)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Combine and readout
// ---------------------------------------------------------------------------

/// How out-of-range correlations are treated by [`combine_layer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClampPolicy {
    /// Clamp to [-1, 1] but report an error past `1 + clamp_eps`;
    /// distinguishes rounding drift from backend bugs.
    Strict,
    /// Clamp unconditionally and count the events; sketching can push
    /// correlations out of range legitimately.
    CountOnly,
}

/// Correlations this close to +-1 are snapped to exactly +-1. Exact
/// ties (self pairs, twin nodes, duplicated graphs) reach the arccos
/// cliff with rounding noise attached, and `d(arccos)/dt` is unbounded
/// there; snapping keeps the derivative factor stable without touching
/// any correlation that is genuinely interior.
pub const CORRELATION_SNAP_EPS: f64 = 1e-12;

/// One fully-connected combine transform applied entrywise.
///
/// For each entry, the correlation `t = sigma[u,v] / sqrt(d_u d_v)` is
/// snapped to +-1 within [`CORRELATION_SNAP_EPS`] and clamped to
/// [-1, 1]; with `theta_c = arccos t` the derivative factor is
/// `c_phi/(2 pi) * (pi - theta_c)`, the covariance update follows
/// the selected [`CombineForm`], and the kernel iterate becomes
/// `theta * sdot + sigma_new`. The running diagonals scale by
/// `c_phi / 2` (the transform at correlation 1).
///
/// Returns the number of clamp events.
pub fn combine_layer(
    state: &mut PairState,
    c_phi: f64,
    clamp_eps: f64,
    form: CombineForm,
    policy: ClampPolicy,
) -> Result<u64> {
    for (node, d) in state.diag_i.as_slice().iter().enumerate() {
        if *d <= 0.0 || !d.is_finite() {
            return Err(Error::NonPositiveDiagonal { node, value: *d });
        }
    }
    for (node, d) in state.diag_j.as_slice().iter().enumerate() {
        if *d <= 0.0 || !d.is_finite() {
            return Err(Error::NonPositiveDiagonal { node, value: *d });
        }
    }

    let scale = c_phi / (2.0 * PI);
    let mut clamp_events = 0u64;
    let (rows, cols) = (state.sigma.rows(), state.sigma.cols());
    for u in 0..rows {
        let du = state.diag_i[u];
        for v in 0..cols {
            let dv = state.diag_j[v];
            let denom = (du * dv).sqrt();
            let t_raw = state.sigma.get(u, v) / denom;
            let t = if (t_raw.abs() - 1.0).abs() <= CORRELATION_SNAP_EPS {
                t_raw.signum()
            } else if t_raw.abs() > 1.0 {
                if matches!(policy, ClampPolicy::Strict) && t_raw.abs() > 1.0 + clamp_eps {
                    return Err(Error::CorrelationOutOfRange {
                        value: t_raw,
                        clamp_eps,
                        row: u,
                        col: v,
                    });
                }
                clamp_events += 1;
                t_raw.clamp(-1.0, 1.0)
            } else {
                t_raw
            };
            let theta_c = t.acos();
            let sdot = scale * (PI - theta_c);
            let sigma_new = match form {
                CombineForm::ArcCosine => {
                    scale * denom * ((1.0 - t * t).max(0.0).sqrt() + (PI - theta_c) * t)
                }
                // The raw correlation multiplies through so that the
                // one-level readout telescopes into the closed form.
                CombineForm::ProductForm => {
                    scale * denom * t_raw * (PI - theta_c + (1.0 - t * t).max(0.0).sqrt())
                }
            };
            let theta_new = state.theta.get(u, v) * sdot + sigma_new;
            state.sigma.set(u, v, sigma_new);
            state.theta.set(u, v, theta_new);
        }
    }
    let d_scale = c_phi / 2.0;
    for d in state.diag_i.as_mut_slice() {
        *d *= d_scale;
    }
    for d in state.diag_j.as_mut_slice() {
        *d *= d_scale;
    }
    Ok(clamp_events)
}

/// Pools the kernel iterates into a scalar: the entry sum of the final
/// level, or of every level when jumping knowledge is on.
pub fn readout(per_level_theta: &[DenseMatrix], mode: Readout) -> Result<f64> {
    if per_level_theta.is_empty() {
        return Err(Error::MissingLevels {
            expected: 1,
            got: 0,
        });
    }
    let sum = |m: &DenseMatrix| m.as_slice().iter().sum::<f64>();
    Ok(match mode {
        Readout::Sum => sum(per_level_theta.last().unwrap()),
        Readout::JumpingKnowledge => per_level_theta.iter().map(sum).sum(),
    })
}

// ---------------------------------------------------------------------------
// Kernel assembly
// ---------------------------------------------------------------------------

/// Wall-time breakdown of a kernel build, in milliseconds. Stage times
/// are summed across pairs, so with multiple worker threads they exceed
/// the elapsed wall time.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StageTimes {
    pub init_ms: f64,
    pub aggregate_ms: f64,
    pub combine_ms: f64,
    pub readout_ms: f64,
}

impl StageTimes {
    pub fn total_ms(&self) -> f64 {
        self.init_ms + self.aggregate_ms + self.combine_ms + self.readout_ms
    }
}

/// A symmetric kernel matrix over a dataset plus build provenance.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub values: DenseMatrix,
    pub backend: Backend,
    pub config_hash: String,
    pub stage_times: StageTimes,
    /// Correlation clamp events observed during combine stages.
    pub clamp_events: u64,
}

#[derive(Default)]
struct PairCost {
    aggregate_ms: f64,
    combine_ms: f64,
    readout_ms: f64,
    clamp_events: u64,
}

/// Builds the full kernel matrix over all graph pairs.
///
/// Per-graph sketches are generated once (stream = graph index) and
/// shared by every pair involving that graph, so the sketched kernel is
/// symmetric and `(i, j)` is computed once and mirrored. Self pairs run
/// first to record the running covariance diagonals that cross pairs
/// consume.
pub fn build_kernel(ds: &Dataset, cfg: &GntkConfig) -> Result<KernelMatrix> {
    cfg.validate()?;
    build_kernel_with_sketches(ds, cfg, default_sketches(ds, cfg)?)
}

/// The per-graph sketches [`build_kernel`] generates: AMS matrices with
/// `b = ceil(sketch_ratio * N)` on stream `i` for the sketched backend,
/// identity operators otherwise.
pub fn default_sketches(ds: &Dataset, cfg: &GntkConfig) -> Result<Vec<SketchMatrix>> {
    ds.graphs
        .iter()
        .enumerate()
        .map(|(i, g)| match cfg.backend {
            Backend::Sketched => {
                let nn = g.num_nodes();
                let b = ((cfg.sketch_ratio * nn as f64).ceil() as usize).clamp(1, nn);
                SketchMatrix::ams_with_stream(b, nn, cfg.seed, i as u64)
            }
            _ => Ok(SketchMatrix::identity(g.num_nodes())),
        })
        .collect()
}

/// [`build_kernel`] with caller-provided per-graph sketches; identity
/// sketches drive the sketched code path through its degeneration.
pub fn build_kernel_with_sketches(
    ds: &Dataset,
    cfg: &GntkConfig,
    sketches: Vec<SketchMatrix>,
) -> Result<KernelMatrix> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidDataset("empty dataset".into()));
    }
    let n = ds.len();
    if sketches.len() != n {
        return Err(Error::InvalidArgument {
            op: "build_kernel_with_sketches",
            message: format!("{} sketches for {n} graphs", sketches.len()),
        });
    }

    let init_started = Instant::now();
    let ops: Vec<AggregateOps> = ds
        .graphs
        .iter()
        .zip(sketches)
        .map(|(g, sketch)| AggregateOps::build(g, cfg.scaling, sketch))
        .collect::<Result<Vec<_>>>()?;
    let init_ms = init_started.elapsed().as_secs_f64() * 1e3;

    // Self pairs: kernel diagonal plus the per-level diagonal snapshots.
    let self_runs: Vec<(f64, Vec<DenseVector>, PairCost)> = (0..n)
        .into_par_iter()
        .map(|i| run_self_pair(&ds.graphs[i], &ops[i], cfg))
        .collect::<Result<Vec<_>>>()?;

    // Cross pairs.
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let cross_runs: Vec<(f64, PairCost)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            run_cross_pair(
                &ds.graphs[i],
                &ds.graphs[j],
                &ops[i],
                &ops[j],
                &self_runs[i].1,
                &self_runs[j].1,
                cfg,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut values = DenseMatrix::zeros(n, n);
    let mut times = StageTimes {
        init_ms,
        ..Default::default()
    };
    let mut clamp_events = 0u64;
    let mut absorb = |cost: &PairCost| {
        times.aggregate_ms += cost.aggregate_ms;
        times.combine_ms += cost.combine_ms;
        times.readout_ms += cost.readout_ms;
        clamp_events += cost.clamp_events;
    };
    for (i, (k_ii, _, cost)) in self_runs.iter().enumerate() {
        values.set(i, i, *k_ii);
        absorb(cost);
    }
    for (&(i, j), (k_ij, cost)) in pairs.iter().zip(&cross_runs) {
        values.set(i, j, *k_ij);
        values.set(j, i, *k_ij);
        absorb(cost);
    }
    if !values.is_finite() {
        return Err(Error::NonFinite {
            op: "build_kernel",
        });
    }
    Ok(KernelMatrix {
        values,
        backend: cfg.backend,
        config_hash: cfg.config_hash(),
        stage_times: times,
        clamp_events,
    })
}

fn clamp_policy(cfg: &GntkConfig) -> ClampPolicy {
    match cfg.backend {
        Backend::Sketched => ClampPolicy::CountOnly,
        _ => ClampPolicy::Strict,
    }
}

fn aggregate_with_backend(
    state: &mut PairState,
    ops_i: &AggregateOps,
    ops_j: &AggregateOps,
    cfg: &GntkConfig,
) -> Result<()> {
    match cfg.backend {
        Backend::NaiveKron => aggregate_naive_kron(state, ops_i, ops_j, cfg.kron_entry_cap),
        Backend::Decoupled => aggregate_decoupled(state, ops_i, ops_j),
        Backend::Sketched => aggregate_sketched(state, ops_i, ops_j),
    }
}

/// Runs the recursion on `(g, g)`, returning the kernel diagonal entry
/// and the post-aggregate covariance diagonals per level.
fn run_self_pair(
    g: &Graph,
    ops: &AggregateOps,
    cfg: &GntkConfig,
) -> Result<(f64, Vec<DenseVector>, PairCost)> {
    let mut cost = PairCost::default();
    let mut state = init_pair(g, g)?;
    let mut levels = vec![state.theta.clone()];
    let mut diag_snapshots = Vec::with_capacity(cfg.levels);

    for _level in 0..cfg.levels {
        let t = Instant::now();
        aggregate_with_backend(&mut state, ops, ops, cfg)?;
        cost.aggregate_ms += t.elapsed().as_secs_f64() * 1e3;

        // The self pair holds its own ground truth for the diagonals.
        let diag = state.sigma.diagonal();
        diag_snapshots.push(diag.clone());
        state.diag_i = diag.clone();
        state.diag_j = diag;

        let t = Instant::now();
        for _layer in 0..cfg.fc_layers {
            cost.clamp_events +=
                combine_layer(&mut state, cfg.c_phi, cfg.clamp_eps, cfg.combine, clamp_policy(cfg))?;
        }
        cost.combine_ms += t.elapsed().as_secs_f64() * 1e3;
        levels.push(state.theta.clone());
    }

    let t = Instant::now();
    let value = readout(&levels, cfg.readout)?;
    cost.readout_ms += t.elapsed().as_secs_f64() * 1e3;
    Ok((value, diag_snapshots, cost))
}

#[allow(clippy::too_many_arguments)]
fn run_cross_pair(
    gi: &Graph,
    gj: &Graph,
    ops_i: &AggregateOps,
    ops_j: &AggregateOps,
    diags_i: &[DenseVector],
    diags_j: &[DenseVector],
    cfg: &GntkConfig,
) -> Result<(f64, PairCost)> {
    let mut cost = PairCost::default();
    let mut state = init_pair(gi, gj)?;
    let mut levels = vec![state.theta.clone()];

    for level in 0..cfg.levels {
        let t = Instant::now();
        aggregate_with_backend(&mut state, ops_i, ops_j, cfg)?;
        cost.aggregate_ms += t.elapsed().as_secs_f64() * 1e3;

        // Cross pairs consume the diagonals recorded by the self runs.
        state.diag_i = diags_i[level].clone();
        state.diag_j = diags_j[level].clone();

        let t = Instant::now();
        for _layer in 0..cfg.fc_layers {
            cost.clamp_events +=
                combine_layer(&mut state, cfg.c_phi, cfg.clamp_eps, cfg.combine, clamp_policy(cfg))?;
        }
        cost.combine_ms += t.elapsed().as_secs_f64() * 1e3;
        levels.push(state.theta.clone());
    }

    let t = Instant::now();
    let value = readout(&levels, cfg.readout)?;
    cost.readout_ms += t.elapsed().as_secs_f64() * 1e3;
    Ok((value, cost))
}

/// Computes the kernel value for an ordered pair from scratch; used by
/// symmetry checks and tests, not by [`build_kernel`].
pub fn pair_kernel_value(gi: &Graph, gj: &Graph, cfg: &GntkConfig) -> Result<f64> {
    cfg.validate()?;
    let make_ops = |g: &Graph, stream: u64| -> Result<AggregateOps> {
        let sketch = match cfg.backend {
            Backend::Sketched => {
                let nn = g.num_nodes();
                let b = ((cfg.sketch_ratio * nn as f64).ceil() as usize).clamp(1, nn);
                SketchMatrix::ams_with_stream(b, nn, cfg.seed, stream)?
            }
            _ => SketchMatrix::identity(g.num_nodes()),
        };
        AggregateOps::build(g, cfg.scaling, sketch)
    };
    let ops_i = make_ops(gi, 0)?;
    let ops_j = make_ops(gj, 1)?;
    let (_, diags_i, _) = run_self_pair(gi, &ops_i, cfg)?;
    let (_, diags_j, _) = run_self_pair(gj, &ops_j, cfg)?;
    let (value, _) = run_cross_pair(gi, gj, &ops_i, &ops_j, &diags_i, &diags_j, cfg)?;
    Ok(value)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

const KERNEL_MAGIC: &[u8; 6] = b"GNTK1\0";

#[derive(Serialize, Deserialize)]
struct BinaryTrailer {
    backend: String,
    config_hash: String,
    /// Left empty in the binary so identical builds stay byte-identical;
    /// wall times belong to the run report.
    stage_times: std::collections::BTreeMap<String, f64>,
}

impl KernelMatrix {
    /// Binary layout: magic `GNTK1\0`, `u32` order (little endian),
    /// `n^2` little-endian `f64` values in row-major order, then a JSON
    /// trailer with backend and config hash.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.values.rows();
        w.write_all(KERNEL_MAGIC)?;
        w.write_all(&(n as u32).to_le_bytes())?;
        for v in self.values.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        let trailer = BinaryTrailer {
            backend: self.backend.as_str().to_string(),
            config_hash: self.config_hash.clone(),
            stage_times: Default::default(),
        };
        w.write_all(serde_json::to_string(&trailer)?.as_bytes())?;
        Ok(())
    }

    /// Reads the binary layout written by [`KernelMatrix::write_binary`].
    pub fn read_binary<R: Read>(mut r: R) -> Result<KernelMatrix> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != KERNEL_MAGIC {
            return Err(Error::BadKernelFile("wrong magic".into()));
        }
        let mut nb = [0u8; 4];
        r.read_exact(&mut nb)?;
        let n = u32::from_le_bytes(nb) as usize;
        let mut data = vec![0.0f64; n * n];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        let mut rest = String::new();
        r.read_to_string(&mut rest)?;
        let trailer: BinaryTrailer =
            serde_json::from_str(&rest).map_err(|e| Error::BadKernelFile(e.to_string()))?;
        let backend = match trailer.backend.as_str() {
            "naive-kron" => Backend::NaiveKron,
            "decoupled" => Backend::Decoupled,
            "sketched" => Backend::Sketched,
            other => return Err(Error::BadKernelFile(format!("unknown backend '{other}'"))),
        };
        Ok(KernelMatrix {
            values: DenseMatrix::from_vec(n, n, data)?,
            backend,
            config_hash: trailer.config_hash,
            stage_times: StageTimes::default(),
            clamp_events: 0,
        })
    }

    /// Comma-separated values, one row per line, shortest round-trip
    /// float formatting.
    pub fn to_csv(&self) -> String {
        let n = self.values.rows();
        let mut out = String::new();
        for i in 0..n {
            let row: Vec<String> = self.values.row(i).iter().map(f64::to_string).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{random_dataset, random_graph};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn single_node_graph(feature: &[f64]) -> Graph {
        let d = feature.len();
        let mut f = DenseMatrix::zeros(d, 1);
        for (i, v) in feature.iter().enumerate() {
            f.set(i, 0, *v);
        }
        Graph::from_edges(1, &[], f, None).unwrap()
    }

    #[test]
    fn init_pair_single_nodes() {
        let g = single_node_graph(&[1.0, 0.0]);
        let s = init_pair(&g, &g).unwrap();
        assert_eq!(s.sigma, DenseMatrix::from_rows(&[[1.0]]));
        assert_eq!(s.theta, DenseMatrix::from_rows(&[[1.0]]));

        let h = single_node_graph(&[0.0, 1.0]);
        let s = init_pair(&g, &h).unwrap();
        assert_eq!(s.sigma, DenseMatrix::from_rows(&[[0.0]]));
    }

    #[test]
    fn init_pair_matches_double_loop_gram() {
        let mut rng = StdRng::seed_from_u64(1);
        let gi = random_graph(&mut rng, 4, 0.5, 3);
        let gj = random_graph(&mut rng, 5, 0.5, 3);
        let s = init_pair(&gi, &gj).unwrap();
        for u in 0..4 {
            for v in 0..5 {
                let mut dot = 0.0;
                for d in 0..3 {
                    dot += gi.features().get(d, u) * gj.features().get(d, v);
                }
                assert!((s.sigma.get(u, v) - dot).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn init_pair_rejects_dim_mismatch() {
        let g = single_node_graph(&[1.0]);
        let h = single_node_graph(&[1.0, 0.0]);
        assert!(init_pair(&g, &h).is_err());
    }

    #[test]
    fn init_gram_is_homogeneous_of_degree_two() {
        let mut rng = StdRng::seed_from_u64(2);
        let g = random_graph(&mut rng, 4, 0.5, 3);
        let scaled = Graph::new(g.adjacency().clone(), g.features().scale(3.0), None).unwrap();
        let base = init_pair(&g, &g).unwrap();
        let big = init_pair(&scaled, &scaled).unwrap();
        assert!(big.sigma.max_abs_diff(&base.sigma.scale(9.0)) < 1e-12);
    }

    #[test]
    fn aggregate_single_node_unit_scaling_is_identity() {
        let g = single_node_graph(&[1.0]);
        let ops = AggregateOps::exact(&g, Scaling::Unit).unwrap();
        let mut state = init_pair(&g, &g).unwrap();
        let before = state.sigma.clone();
        aggregate_decoupled(&mut state, &ops, &ops).unwrap();
        assert!(state.sigma.max_abs_diff(&before) < 1e-15);
    }

    #[test]
    fn aggregate_path2_sums_full_block() {
        // Two connected nodes: A + I is all ones, so each output entry
        // is the sum over the whole 2x2 input.
        let f = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let g = Graph::from_edges(2, &[(0, 1)], f, None).unwrap();
        let ops = AggregateOps::exact(&g, Scaling::Unit).unwrap();
        let mut state = init_pair(&g, &g).unwrap();
        let total: f64 = state.sigma.as_slice().iter().sum();
        aggregate_decoupled(&mut state, &ops, &ops).unwrap();
        for u in 0..2 {
            for v in 0..2 {
                assert!((state.sigma.get(u, v) - total).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn kron_and_decoupled_agree_on_random_pairs() {
        let mut rng = StdRng::seed_from_u64(3);
        for trial in 0..5 {
            let gi = random_graph(&mut rng, 3 + trial % 4, 0.5, 2);
            let gj = random_graph(&mut rng, 2 + trial % 5, 0.5, 2);
            for scaling in [Scaling::Unit, Scaling::InverseDegreePlusOne] {
                let oi = AggregateOps::exact(&gi, scaling).unwrap();
                let oj = AggregateOps::exact(&gj, scaling).unwrap();
                let mut a = init_pair(&gi, &gj).unwrap();
                let mut b = a.clone();
                aggregate_naive_kron(&mut a, &oi, &oj, 100_000_000).unwrap();
                aggregate_decoupled(&mut b, &oi, &oj).unwrap();
                assert!(a.sigma.max_abs_diff(&b.sigma) <= 1e-10);
                assert!(a.theta.max_abs_diff(&b.theta) <= 1e-10);
            }
        }
    }

    #[test]
    fn kron_cap_is_enforced() {
        let mut rng = StdRng::seed_from_u64(4);
        let g = random_graph(&mut rng, 4, 0.5, 2);
        let ops = AggregateOps::exact(&g, Scaling::Unit).unwrap();
        let mut state = init_pair(&g, &g).unwrap();
        let err = aggregate_naive_kron(&mut state, &ops, &ops, 10).unwrap_err();
        assert!(matches!(err, Error::KronTooLarge { .. }));
    }

    #[test]
    fn sketched_identity_matches_decoupled() {
        let mut rng = StdRng::seed_from_u64(5);
        let gi = random_graph(&mut rng, 5, 0.5, 2);
        let gj = random_graph(&mut rng, 7, 0.5, 2);
        let oi = AggregateOps::exact(&gi, Scaling::Unit).unwrap();
        let oj = AggregateOps::exact(&gj, Scaling::Unit).unwrap();
        let mut a = init_pair(&gi, &gj).unwrap();
        let mut b = a.clone();
        aggregate_sketched(&mut a, &oi, &oj).unwrap();
        aggregate_decoupled(&mut b, &oi, &oj).unwrap();
        assert!(a.sigma.max_abs_diff(&b.sigma) <= 1e-12);
    }

    #[test]
    fn sketched_full_ams_matches_naive_order_evaluation() {
        let mut rng = StdRng::seed_from_u64(6);
        let n = 6;
        let g = random_graph(&mut rng, n, 0.6, 2);
        let sk = SketchMatrix::ams(n, n, 33).unwrap();
        let ops = AggregateOps::build(&g, Scaling::Unit, sk.clone()).unwrap();
        let mut state = init_pair(&g, &g).unwrap();
        let sigma0 = state.sigma.clone();
        aggregate_sketched(&mut state, &ops, &ops).unwrap();

        // Left-to-right dense evaluation of M S^T S X S^T S M^T.
        let m = &ops.scaled_adjacency;
        let sd = sk.to_dense();
        let sts = linalg::matmul_tn(&sd, &sd).unwrap();
        let mut acc = linalg::matmul(m, &sts).unwrap();
        acc = linalg::matmul(&acc, &sigma0).unwrap();
        acc = linalg::matmul(&acc, &sts).unwrap();
        let expected = linalg::matmul_nt(&acc, m).unwrap();
        assert!(state.sigma.max_abs_diff(&expected) <= 1e-12);
    }

    #[test]
    fn combine_closed_form_special_correlations() {
        // correlations 1, 0, -1 with c_phi = 2 and unit diagonals
        let build = |t: f64| PairState {
            sigma: DenseMatrix::from_rows(&[[t]]),
            theta: DenseMatrix::from_rows(&[[t]]),
            diag_i: DenseVector::from_vec(vec![1.0]),
            diag_j: DenseVector::from_vec(vec![1.0]),
        };

        // t = 1: derivative factor 1, sigma stays at the diagonal scale
        let mut s = build(1.0);
        combine_layer(&mut s, 2.0, 1e-6, CombineForm::ArcCosine, ClampPolicy::Strict).unwrap();
        assert!((s.sigma.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((s.theta.get(0, 0) - 2.0).abs() < 1e-12); // 1*1 + 1
        assert!((s.diag_i[0] - 1.0).abs() < 1e-15);

        // t = 0: derivative factor 1/2, sigma becomes 1/pi
        let mut s = build(0.0);
        combine_layer(&mut s, 2.0, 1e-6, CombineForm::ArcCosine, ClampPolicy::Strict).unwrap();
        assert!((s.sigma.get(0, 0) - 1.0 / PI).abs() < 1e-12);
        assert!((s.theta.get(0, 0) - 1.0 / PI).abs() < 1e-12);

        // t = -1: both the derivative factor and sigma vanish
        let mut s = build(-1.0);
        combine_layer(&mut s, 2.0, 1e-6, CombineForm::ArcCosine, ClampPolicy::Strict).unwrap();
        assert!(s.sigma.get(0, 0).abs() < 1e-12);
        assert!(s.theta.get(0, 0).abs() < 1e-12);
    }

    #[test]
    fn combine_rejects_large_drift_but_counts_when_sketched() {
        let mut s = PairState {
            sigma: DenseMatrix::from_rows(&[[1.5]]),
            theta: DenseMatrix::from_rows(&[[1.5]]),
            diag_i: DenseVector::from_vec(vec![1.0]),
            diag_j: DenseVector::from_vec(vec![1.0]),
        };
        let err = combine_layer(&mut s.clone(), 2.0, 1e-6, CombineForm::ArcCosine, ClampPolicy::Strict)
            .unwrap_err();
        assert!(matches!(err, Error::CorrelationOutOfRange { .. }));

        let events =
            combine_layer(&mut s, 2.0, 1e-6, CombineForm::ArcCosine, ClampPolicy::CountOnly)
                .unwrap();
        assert_eq!(events, 1);
    }

    #[test]
    fn combine_rejects_nonpositive_diagonal() {
        let mut s = PairState {
            sigma: DenseMatrix::from_rows(&[[0.5]]),
            theta: DenseMatrix::from_rows(&[[0.5]]),
            diag_i: DenseVector::from_vec(vec![0.0]),
            diag_j: DenseVector::from_vec(vec![1.0]),
        };
        let err = combine_layer(&mut s, 2.0, 1e-6, CombineForm::ArcCosine, ClampPolicy::Strict)
            .unwrap_err();
        assert!(matches!(err, Error::NonPositiveDiagonal { node: 0, .. }));
    }

    #[test]
    fn readout_modes() {
        let last = DenseMatrix::from_rows(&[[2.0]]);
        assert_eq!(readout(&[last.clone()], Readout::Sum).unwrap(), 2.0);

        let levels = vec![DenseMatrix::from_rows(&[[1.0]]), DenseMatrix::from_rows(&[[2.0]])];
        assert_eq!(readout(&levels, Readout::JumpingKnowledge).unwrap(), 3.0);
        assert_eq!(readout(&levels, Readout::Sum).unwrap(), 2.0);

        let mut rng = StdRng::seed_from_u64(7);
        let m = DenseMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
        let mut expected = 0.0;
        for i in 0..3 {
            for j in 0..2 {
                expected += m.get(i, j);
            }
        }
        assert!((readout(&[m], Readout::Sum).unwrap() - expected).abs() < 1e-14);

        assert!(matches!(
            readout(&[], Readout::JumpingKnowledge),
            Err(Error::MissingLevels { .. })
        ));
    }

    use rand::Rng;

    #[test]
    fn build_single_graph_kernel_is_positive() {
        let g = single_node_graph(&[1.0]);
        let ds = Dataset::new("one", vec![g]).unwrap();
        for backend in [Backend::NaiveKron, Backend::Decoupled, Backend::Sketched] {
            let cfg = GntkConfig {
                backend,
                ..Default::default()
            };
            let k = build_kernel(&ds, &cfg).unwrap();
            assert_eq!(k.values.rows(), 1);
            assert!(k.values.get(0, 0) > 0.0);
        }
    }

    /// Shrinks feature norms so kernel values stay O(1e2); the backend
    /// agreement tolerance is absolute and reassociation noise scales
    /// with the kernel magnitude.
    fn damp_features(ds: Dataset, s: f64) -> Dataset {
        let graphs = ds
            .graphs
            .iter()
            .map(|g| Graph::new(g.adjacency().clone(), g.features().scale(s), g.label()).unwrap())
            .collect();
        Dataset::new(ds.name.clone(), graphs).unwrap()
    }

    #[test]
    fn backend_equivalence_small_sweep() {
        // Full cross of levels, layers, scalings and readouts on two
        // small datasets; the acceptance suite runs the larger sweep.
        let mut rng = StdRng::seed_from_u64(8);
        for ds_seed in 0..2u64 {
            let mut ds_rng = StdRng::seed_from_u64(100 + ds_seed);
            let ds = damp_features(
                random_dataset(&mut ds_rng, 3, 4 + (rng.gen_range(0..4)), 0.4, 2),
                0.02,
            );
            for levels in 1..=3 {
                for fc_layers in 1..=3 {
                    for scaling in [Scaling::Unit, Scaling::InverseDegreePlusOne] {
                        for readout in [Readout::Sum, Readout::JumpingKnowledge] {
                            let base = GntkConfig {
                                levels,
                                fc_layers,
                                scaling,
                                readout,
                                backend: Backend::NaiveKron,
                                ..Default::default()
                            };
                            let naive = build_kernel(&ds, &base).unwrap();
                            let dec = build_kernel(
                                &ds,
                                &GntkConfig {
                                    backend: Backend::Decoupled,
                                    ..base.clone()
                                },
                            )
                            .unwrap();
                            assert!(
                                naive.values.max_abs_diff(&dec.values) <= 1e-10,
                                "L={levels} R={fc_layers} {scaling:?} {readout:?}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn kernel_symmetry_under_pair_swap() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..3 {
            let gi = random_graph(&mut rng, 5, 0.5, 2);
            let gj = random_graph(&mut rng, 7, 0.5, 2);
            let cfg = GntkConfig::default();
            let kij = pair_kernel_value(&gi, &gj, &cfg).unwrap();
            let kji = pair_kernel_value(&gj, &gi, &cfg).unwrap();
            assert!((kij - kji).abs() <= 1e-10 * kij.abs().max(1.0));
        }
    }

    #[test]
    fn exact_kernels_are_symmetric_and_psd() {
        let mut rng = StdRng::seed_from_u64(10);
        let ds = random_dataset(&mut rng, 5, 6, 0.5, 3);
        let k = build_kernel(&ds, &GntkConfig::default()).unwrap();
        assert!(k.values.max_asymmetry() <= 1e-10);
        let min_eig = linalg::sym_eigvals_min(&k.values).unwrap();
        let norm = linalg::spectral_norm_sym(&k.values).unwrap();
        assert!(min_eig >= -1e-8 * norm, "min eig {min_eig}, norm {norm}");
    }

    #[test]
    fn sketched_build_is_deterministic_given_seed() {
        let mut rng = StdRng::seed_from_u64(11);
        let ds = random_dataset(&mut rng, 4, 8, 0.5, 3);
        let cfg = GntkConfig {
            backend: Backend::Sketched,
            sketch_ratio: 0.5,
            seed: 7,
            ..Default::default()
        };
        let k1 = build_kernel(&ds, &cfg).unwrap();
        let k2 = build_kernel(&ds, &cfg).unwrap();
        assert_eq!(k1.values, k2.values);

        let other = build_kernel(
            &ds,
            &GntkConfig {
                seed: 8,
                ..cfg
            },
        )
        .unwrap();
        assert!(k1.values.max_abs_diff(&other.values) > 0.0);
    }

    #[test]
    fn binary_round_trip() {
        let mut rng = StdRng::seed_from_u64(12);
        let ds = random_dataset(&mut rng, 3, 5, 0.5, 2);
        let k = build_kernel(&ds, &GntkConfig::default()).unwrap();
        let mut bytes = Vec::new();
        k.write_binary(&mut bytes).unwrap();
        let back = KernelMatrix::read_binary(bytes.as_slice()).unwrap();
        assert_eq!(back.values, k.values);
        assert_eq!(back.backend, k.backend);
        assert_eq!(back.config_hash, k.config_hash);
    }

    #[test]
    fn config_hash_tracks_fields() {
        let a = GntkConfig::default();
        let b = GntkConfig {
            levels: 3,
            ..GntkConfig::default()
        };
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash(), GntkConfig::default().config_hash());
    }

    #[test]
    fn csv_has_n_rows() {
        let mut rng = StdRng::seed_from_u64(13);
        let ds = random_dataset(&mut rng, 4, 4, 0.5, 2);
        let k = build_kernel(&ds, &GntkConfig::default()).unwrap();
        let csv = k.to_csv();
        assert_eq!(csv.trim().lines().count(), 4);
        let first: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
        assert_eq!(first.len(), 4);
        assert!((first[0].parse::<f64>().unwrap() - k.values.get(0, 0)).abs() == 0.0);
    }
}
