//! The one-level closed form: normalized embeddings, the kernel
//! decomposition `K = K1 + K2`, its arccos power series, Gram-power
//! matrices, and the trace diagnostics.
//!
//! With `L = R = 1`, normalized scaling and the product-form combine,
//! the kernel entry for a pair of graphs splits into
//!
//! ```text
//! K1(i,j) = sum_{u,v} <h_u, h_v> * (pi - arccos<h_u, h_v>) / (2 pi)
//! K2(i,j) = sum_{u,v} <h_u, h_v> * (pi - arccos<h_u, h_v> + sqrt(1 - <h_u, h_v>^2)) / (2 pi)
//! ```
//!
//! over unit-norm aggregated embeddings `h_u`, and `K1` expands into a
//! series of polynomial-kernel Gram matrices through the Taylor series
//! of `arccos`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::graph::{self, Dataset, Graph};
use crate::kernel::{KernelMatrix, CORRELATION_SNAP_EPS};
use crate::linalg::{self, DenseMatrix};
use crate::sketch::SketchMatrix;

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

/// Exact and sketched normalized embeddings of one graph, `d x N` each.
#[derive(Debug, Clone)]
pub struct Embeddings {
    /// `H (A+I) C` with the exact normalization; unit-norm columns.
    pub bar: DenseMatrix,
    /// `H S^T S (A+I) C` with the sketch-aware normalization;
    /// unit-norm columns. Equal to `bar` when no sketch is given.
    pub tilde: DenseMatrix,
}

/// Builds both embeddings. Each variant computes the aggregated feature
/// matrix and rescales the columns to unit norm with its own
/// [`graph::normalized_scaling_diag`].
pub fn embeddings(g: &Graph, sketch: Option<&SketchMatrix>) -> Result<Embeddings> {
    let a_loops = g.adjacency_with_self_loops();
    let h = g.features();

    let bar_raw = linalg::matmul(h, &a_loops)?;
    let c_bar = graph::normalized_scaling_diag(g, None)?;
    let bar = linalg::matmul(&bar_raw, &c_bar)?;

    let tilde = match sketch {
        None => bar.clone(),
        Some(s) => {
            let hsts = s.mul_transpose_left(&s.mul_left(&h.transpose())?)?.transpose();
            let tilde_raw = linalg::matmul(&linalg::matmul(&hsts, &a_loops)?,
                &graph::normalized_scaling_diag(g, Some(s))?)?;
            tilde_raw
        }
    };
    Ok(Embeddings { bar, tilde })
}

/// Embeddings for every graph of a dataset with per-graph optional
/// sketches.
pub fn dataset_embeddings(
    ds: &Dataset,
    sketches: &[Option<&SketchMatrix>],
) -> Result<Vec<Embeddings>> {
    if sketches.len() != ds.len() {
        return Err(Error::InvalidArgument {
            op: "dataset_embeddings",
            message: format!("{} sketches for {} graphs", sketches.len(), ds.len()),
        });
    }
    ds.graphs
        .iter()
        .zip(sketches)
        .map(|(g, s)| embeddings(g, *s))
        .collect()
}

// ---------------------------------------------------------------------------
// Closed-form kernel
// ---------------------------------------------------------------------------

/// Snap-and-clamp for inner products of unit vectors, identical to the
/// combine stage so the two evaluation routes agree at ties.
fn snap_clamp(t: f64) -> f64 {
    if (t.abs() - 1.0).abs() <= CORRELATION_SNAP_EPS {
        t.signum()
    } else {
        t.clamp(-1.0, 1.0)
    }
}

/// The two closed-form kernel pieces over a dataset; the full kernel is
/// their sum. Inner products are clamped to [-1, 1] before `arccos`;
/// the raw value multiplies through as the prefactor.
pub fn closed_form_kernel(
    ds: &Dataset,
    sketches: &[Option<&SketchMatrix>],
) -> Result<(DenseMatrix, DenseMatrix)> {
    let embs = dataset_embeddings(ds, sketches)?;
    let tilde: Vec<&DenseMatrix> = embs.iter().map(|e| &e.tilde).collect();
    closed_form_from_embeddings(&tilde)
}

/// The Gaussian-expectation counterpart of the second piece: entries
/// `sum_{u,v} (sqrt(1 - t^2) + (pi - arccos t) t) / (2 pi)` with
/// `t = <h_u, h_v>`. This is the arc-cosine kernel of ReLU features and
/// is positive semidefinite, unlike the decomposition's second piece,
/// whose leading correlation factor introduces negative series
/// coefficients.
pub fn gaussian_k2_from_embeddings(embeddings: &[&DenseMatrix]) -> Result<DenseMatrix> {
    let n = embeddings.len();
    let mut k2 = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let gram = linalg::matmul_tn(embeddings[i], embeddings[j])?;
            let mut s = 0.0;
            for raw in gram.as_slice() {
                let t = snap_clamp(*raw);
                let theta = t.acos();
                let root = (1.0 - t * t).max(0.0).sqrt();
                s += (root + (PI - theta) * t) / (2.0 * PI);
            }
            k2.set(i, j, s);
            k2.set(j, i, s);
        }
    }
    Ok(k2)
}

/// Closed-form pieces straight from per-graph embedding matrices.
pub fn closed_form_from_embeddings(
    embeddings: &[&DenseMatrix],
) -> Result<(DenseMatrix, DenseMatrix)> {
    let n = embeddings.len();
    let mut k1 = DenseMatrix::zeros(n, n);
    let mut k2 = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let gram = linalg::matmul_tn(embeddings[i], embeddings[j])?;
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for raw in gram.as_slice() {
                let t = snap_clamp(*raw);
                let theta = t.acos();
                let root = (1.0 - t * t).max(0.0).sqrt();
                s1 += raw * (PI - theta) / (2.0 * PI);
                s2 += raw * (PI - theta + root) / (2.0 * PI);
            }
            k1.set(i, j, s1);
            k1.set(j, i, s1);
            k2.set(i, j, s2);
            k2.set(j, i, s2);
        }
    }
    Ok((k1, k2))
}

// ---------------------------------------------------------------------------
// Series form of K1
// ---------------------------------------------------------------------------

/// Coefficients `c_l = (2l-3)!! / ((2l-2)!! (2l-1))` for `l = 1..=max_l`
/// with the conventions `(-1)!! = 0!! = 1`, by the recurrence
/// `c_{l+1} = c_l (2l-1)^2 / ((2l)(2l+1))`.
pub fn arccos_series_coefficients(max_l: usize) -> Vec<f64> {
    let mut coeffs = Vec::with_capacity(max_l);
    let mut c = 1.0f64; // c_1
    for l in 1..=max_l {
        coeffs.push(c);
        let lf = l as f64;
        c *= (2.0 * lf - 1.0).powi(2) / ((2.0 * lf) * (2.0 * lf + 1.0));
    }
    coeffs
}

/// Truncated series evaluation of the first closed-form piece:
/// `K1 ~ 1/4 G_1 + 1/(2 pi) * sum_{l=1}^{max_l} c_l G_{2l}`,
/// where `G_t[i,j] = sum_{u,v} <h_u, h_v>^t`.
pub fn k1_series(
    ds: &Dataset,
    sketches: &[Option<&SketchMatrix>],
    max_l: usize,
) -> Result<DenseMatrix> {
    let embs = dataset_embeddings(ds, sketches)?;
    let tilde: Vec<&DenseMatrix> = embs.iter().map(|e| &e.tilde).collect();
    k1_series_from_embeddings(&tilde, max_l)
}

/// Series evaluation straight from per-graph embedding matrices.
pub fn k1_series_from_embeddings(
    embeddings: &[&DenseMatrix],
    max_l: usize,
) -> Result<DenseMatrix> {
    if max_l == 0 {
        return Err(Error::InvalidArgument {
            op: "k1_series",
            message: "need max_l >= 1".into(),
        });
    }
    let coeffs = arccos_series_coefficients(max_l);
    let n = embeddings.len();
    let mut k1 = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let gram = linalg::matmul_tn(embeddings[i], embeddings[j])?;
            let mut acc = 0.0;
            for raw in gram.as_slice() {
                let t = snap_clamp(*raw);
                let mut term = 0.25 * t;
                let t2 = t * t;
                // powers t^{2l} accumulated incrementally
                let mut p = 1.0;
                for c in &coeffs {
                    p *= t2;
                    term += c * p / (2.0 * PI);
                }
                acc += term;
            }
            k1.set(i, j, acc);
            k1.set(j, i, acc);
        }
    }
    Ok(k1)
}

// ---------------------------------------------------------------------------
// Gram powers and the PSD sandwich
// ---------------------------------------------------------------------------

/// The `n x n` matrix with entries `sum_{u,v} <h_u, h_v>^t`: the Gram
/// of summed degree-`t` polynomial feature maps, computed without
/// materializing the feature map.
#[derive(Debug, Clone)]
pub struct GramPower {
    pub degree: u32,
    pub values: DenseMatrix,
}

/// Gram powers of the given degrees over per-graph embeddings. The
/// node-level Gram of each pair is formed once and powered entrywise.
pub fn gram_powers(embeddings: &[&DenseMatrix], degrees: &[u32]) -> Result<Vec<GramPower>> {
    let n = embeddings.len();
    let mut out: Vec<GramPower> = degrees
        .iter()
        .map(|&degree| GramPower {
            degree,
            values: DenseMatrix::zeros(n, n),
        })
        .collect();
    for i in 0..n {
        for j in i..n {
            let gram = linalg::matmul_tn(embeddings[i], embeddings[j])?;
            for gp in out.iter_mut() {
                let t = gp.degree as i32;
                let sum: f64 = gram.as_slice().iter().map(|v| v.powi(t)).sum();
                gp.values.set(i, j, sum);
                gp.values.set(j, i, sum);
            }
        }
    }
    Ok(out)
}

/// Checks the two-sided Loewner bound
/// `(1 - slack) * exact <= sketched <= (1 + slack) * exact`
/// up to an absolute eigenvalue tolerance of 1e-8.
pub fn psd_sandwich_check(exact: &GramPower, sketched: &GramPower, slack: f64) -> Result<bool> {
    if exact.degree != sketched.degree {
        return Err(Error::InvalidArgument {
            op: "psd_sandwich_check",
            message: format!(
                "degree mismatch: {} vs {}",
                exact.degree, sketched.degree
            ),
        });
    }
    let lower = sketched
        .values
        .sub(&exact.values.scale(1.0 - slack))?;
    let upper = exact
        .values
        .scale(1.0 + slack)
        .sub(&sketched.values)?;
    Ok(linalg::sym_eigvals_min(&lower.symmetrized())? >= -1e-8
        && linalg::sym_eigvals_min(&upper.symmetrized())? >= -1e-8)
}

// ---------------------------------------------------------------------------
// Trace diagnostics
// ---------------------------------------------------------------------------

/// Kernel-level trace check: `tr K <= 2 n (max N)^2`.
pub fn trace_bound_check(k: &KernelMatrix, ds: &Dataset) -> (f64, f64, bool) {
    let trace = k.values.trace();
    let n_max = ds.max_nodes() as f64;
    let bound = 2.0 * ds.len() as f64 * n_max * n_max;
    (trace, bound, trace <= bound)
}

/// Per-graph closed-form trace contributions and their caps.
#[derive(Debug, Clone)]
pub struct GraphTrace {
    pub k1_diag: f64,
    /// `N^2 / 2`.
    pub k1_cap: f64,
    pub k2_diag: f64,
    /// `N^2`.
    pub k2_cap: f64,
    pub ok: bool,
}

/// Full trace report over a dataset built from the closed-form pieces.
#[derive(Debug, Clone)]
pub struct TraceReport {
    pub trace: f64,
    pub bound: f64,
    pub ok: bool,
    pub per_graph: Vec<GraphTrace>,
}

pub fn trace_report(ds: &Dataset, sketches: &[Option<&SketchMatrix>]) -> Result<TraceReport> {
    let (k1, k2) = closed_form_kernel(ds, sketches)?;
    let per_graph: Vec<GraphTrace> = (0..ds.len())
        .map(|i| {
            let n = ds.graphs[i].num_nodes() as f64;
            let k1_diag = k1.get(i, i);
            let k2_diag = k2.get(i, i);
            let k1_cap = n * n / 2.0;
            let k2_cap = n * n;
            GraphTrace {
                k1_diag,
                k1_cap,
                k2_diag,
                k2_cap,
                ok: k1_diag <= k1_cap && k2_diag <= k2_cap,
            }
        })
        .collect();
    let trace = k1.trace() + k2.trace();
    let n_max = ds.max_nodes() as f64;
    let bound = 2.0 * ds.len() as f64 * n_max * n_max;
    Ok(TraceReport {
        trace,
        bound,
        ok: trace <= bound && per_graph.iter().all(|g| g.ok),
        per_graph,
    })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::random_dataset;
    use crate::kernel::{build_kernel, Backend, GntkConfig};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn unit_single_node(dir: &[f64]) -> Graph {
        let d = dir.len();
        let mut f = DenseMatrix::zeros(d, 1);
        for (i, v) in dir.iter().enumerate() {
            f.set(i, 0, *v);
        }
        Graph::from_edges(1, &[], f, None).unwrap()
    }

    #[test]
    fn embeddings_single_node() {
        let g = unit_single_node(&[1.0]);
        let e = embeddings(&g, None).unwrap();
        assert_eq!(e.bar, DenseMatrix::from_rows(&[[1.0]]));
        assert_eq!(e.tilde, DenseMatrix::from_rows(&[[1.0]]));
    }

    #[test]
    fn embeddings_identity_sketch_equals_exact() {
        let mut rng = StdRng::seed_from_u64(1);
        let g = crate::graph::random_graph(&mut rng, 6, 0.5, 3);
        let id = SketchMatrix::identity(6);
        let e = embeddings(&g, Some(&id)).unwrap();
        assert!(e.bar.max_abs_diff(&e.tilde) <= 1e-14);
    }

    #[test]
    fn embeddings_path2_hand_computed() {
        // Features e1, e2 on a single edge. Aggregated columns are both
        // e1 + e2, so both normalized embeddings are (1,1)/sqrt(2).
        let g = Graph::from_edges(
            2,
            &[(0, 1)],
            DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]),
            None,
        )
        .unwrap();
        let e = embeddings(&g, None).unwrap();
        let s = 1.0 / 2.0f64.sqrt();
        let expected = DenseMatrix::from_rows(&[[s, s], [s, s]]);
        assert!(e.bar.max_abs_diff(&expected) <= 1e-14);
    }

    #[test]
    fn embeddings_tilde_columns_are_unit_norm() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..5 {
            let g = crate::graph::random_graph(&mut rng, 7, 0.5, 3);
            let sk = SketchMatrix::ams(4, 7, 9).unwrap();
            let e = embeddings(&g, Some(&sk)).unwrap();
            for u in 0..7 {
                assert!((e.tilde.column(u).norm() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn closed_form_identical_single_nodes() {
        // <h, h> = 1 gives K1 = K2 = 1/2 per entry.
        let ds = Dataset::new(
            "two",
            vec![unit_single_node(&[1.0, 0.0]), unit_single_node(&[1.0, 0.0])],
        )
        .unwrap();
        let (k1, k2) = closed_form_kernel(&ds, &[None, None]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((k1.get(i, j) - 0.5).abs() <= 1e-14);
                assert!((k2.get(i, j) - 0.5).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn closed_form_orthogonal_single_nodes() {
        // The prefactor <h_u, h_v> = 0 kills both pieces off-diagonal.
        let ds = Dataset::new(
            "two",
            vec![unit_single_node(&[1.0, 0.0]), unit_single_node(&[0.0, 1.0])],
        )
        .unwrap();
        let (k1, k2) = closed_form_kernel(&ds, &[None, None]).unwrap();
        assert_eq!(k1.get(0, 1), 0.0);
        assert_eq!(k2.get(0, 1), 0.0);
        assert!((k1.get(0, 0) - 0.5).abs() <= 1e-14);
    }

    #[test]
    fn recursion_matches_closed_form_without_sketches() {
        let mut rng = StdRng::seed_from_u64(3);
        for trial in 0..3 {
            let ds = random_dataset(&mut rng, 4, 4 + trial, 0.5, 3);
            let (k1, k2) = closed_form_kernel(&ds, &vec![None; 4]).unwrap();
            let total = k1.add(&k2).unwrap();
            let cfg = GntkConfig::closed_form_reference(Backend::Decoupled);
            let k = build_kernel(&ds, &cfg).unwrap();
            assert!(
                k.values.max_abs_diff(&total) <= 1e-8,
                "diff {}",
                k.values.max_abs_diff(&total)
            );
        }
    }

    #[test]
    fn recursion_matches_closed_form_with_sketches() {
        let mut rng = StdRng::seed_from_u64(4);
        let n = 4;
        let ds = random_dataset(&mut rng, n, 6, 0.5, 3);
        let seed = 21;
        let cfg = GntkConfig {
            seed,
            sketch_ratio: 0.5,
            ..GntkConfig::closed_form_reference(Backend::Sketched)
        };
        let k = build_kernel(&ds, &cfg).unwrap();

        // The same per-graph sketches the builder generates.
        let sketches: Vec<SketchMatrix> = (0..n)
            .map(|i| {
                let nn = ds.graphs[i].num_nodes();
                let b = ((0.5 * nn as f64).ceil() as usize).clamp(1, nn);
                SketchMatrix::ams_with_stream(b, nn, seed, i as u64).unwrap()
            })
            .collect();
        let refs: Vec<Option<&SketchMatrix>> = sketches.iter().map(Some).collect();
        let (k1, k2) = closed_form_kernel(&ds, &refs).unwrap();
        let total = k1.add(&k2).unwrap();
        assert!(
            k.values.max_abs_diff(&total) <= 1e-8,
            "diff {}",
            k.values.max_abs_diff(&total)
        );
    }

    #[test]
    fn series_coefficients_small_cases() {
        let c = arccos_series_coefficients(3);
        assert_eq!(c[0], 1.0); // (-1)!! / (0!! * 1)
        assert!((c[1] - 1.0 / 6.0).abs() < 1e-15);
        assert!((c[2] - 3.0 / 40.0).abs() < 1e-15);
    }

    /// Random unit columns, re-drawn until every inner product across
    /// distinct columns stays below `cap` in absolute value.
    fn separated_unit_embeddings(
        rng: &mut StdRng,
        d: usize,
        sizes: &[usize],
        cap: f64,
    ) -> Vec<DenseMatrix> {
        'retry: loop {
            let embs: Vec<DenseMatrix> = sizes
                .iter()
                .map(|&cols| {
                    let mut m = DenseMatrix::from_fn(d, cols, |_, _| rng.gen_range(-1.0..1.0));
                    for j in 0..cols {
                        let norm = m.column(j).norm();
                        for i in 0..d {
                            m.set(i, j, m.get(i, j) / norm);
                        }
                    }
                    m
                })
                .collect();
            for (ai, a) in embs.iter().enumerate() {
                for (bi, b) in embs.iter().enumerate() {
                    let g = linalg::matmul_tn(a, b).unwrap();
                    for u in 0..a.cols() {
                        for v in 0..b.cols() {
                            if (ai, u) != (bi, v) && g.get(u, v).abs() > cap {
                                continue 'retry;
                            }
                        }
                    }
                }
            }
            return embs;
        }
    }

    #[test]
    fn series_converges_to_closed_form_off_diagonal() {
        // Inner products bounded below 0.85 make the truncated series
        // accurate on cross-graph entries. Index-equal diagonal entries
        // contain inner products at exactly 1, where the series tail at
        // l = 50 is still of order 1e-2; they are excluded here.
        let mut rng = StdRng::seed_from_u64(5);
        let embs = separated_unit_embeddings(&mut rng, 8, &[4, 3, 5], 0.85);
        let refs: Vec<&DenseMatrix> = embs.iter().collect();
        let (k1, _) = closed_form_from_embeddings(&refs).unwrap();
        let series = k1_series_from_embeddings(&refs, 50).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(
                        (series.get(i, j) - k1.get(i, j)).abs() <= 1e-6,
                        "entry ({i},{j}) differs by {}",
                        (series.get(i, j) - k1.get(i, j)).abs()
                    );
                }
            }
        }
    }

    #[test]
    fn series_zero_inner_products_reduce_to_first_term() {
        let e1 = DenseMatrix::from_rows(&[[1.0], [0.0]]);
        let e2 = DenseMatrix::from_rows(&[[0.0], [1.0]]);
        let embs = vec![&e1, &e2];
        let series = k1_series_from_embeddings(&embs, 10).unwrap();
        let (k1, _) = closed_form_from_embeddings(&embs).unwrap();
        assert_eq!(series.get(0, 1), 0.0);
        assert!((series.get(0, 1) - k1.get(0, 1)).abs() <= 1e-15);
    }

    #[test]
    fn gram_powers_match_double_loop() {
        let mut rng = StdRng::seed_from_u64(6);
        let e1 = DenseMatrix::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0));
        let e2 = DenseMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
        let gps = gram_powers(&[&e1, &e2], &[1, 2, 4]).unwrap();
        for gp in &gps {
            let t = gp.degree as i32;
            let mut expected = 0.0;
            for u in 0..4 {
                for v in 0..2 {
                    let dot = e1.column(u).dot(&e2.column(v));
                    expected += dot.powi(t);
                }
            }
            assert!((gp.values.get(0, 1) - expected).abs() <= 1e-12);
            assert_eq!(gp.values.get(0, 1), gp.values.get(1, 0));
        }
    }

    #[test]
    fn sandwich_accepts_equal_and_rejects_doubled() {
        let mut rng = StdRng::seed_from_u64(7);
        let e = DenseMatrix::from_fn(3, 5, |_, _| rng.gen_range(0.1..1.0));
        let gp = gram_powers(&[&e], &[2]).unwrap().remove(0);
        let same = gp.clone();
        assert!(psd_sandwich_check(&gp, &same, 0.1).unwrap());

        let doubled = GramPower {
            degree: 2,
            values: gp.values.scale(2.0),
        };
        assert!(!psd_sandwich_check(&gp, &doubled, 0.5).unwrap());
    }

    #[test]
    fn trace_bound_single_node() {
        let ds = Dataset::new("one", vec![unit_single_node(&[1.0])]).unwrap();
        let report = trace_report(&ds, &[None]).unwrap();
        assert!((report.trace - 1.0).abs() <= 1e-12);
        assert_eq!(report.bound, 2.0);
        assert!(report.ok);
    }

    #[test]
    fn trace_bound_random_normalized_datasets() {
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..5 {
            let n = rng.gen_range(2..5);
            let nodes = rng.gen_range(2..8);
            let ds = random_dataset(&mut rng, n, nodes, 0.5, 3);
            let report = trace_report(&ds, &vec![None; n]).unwrap();
            assert!(report.ok, "trace {} bound {}", report.trace, report.bound);
            for g in &report.per_graph {
                assert!(g.k1_diag <= g.k1_cap);
                assert!(g.k2_diag <= g.k2_cap);
            }
        }
    }

    #[test]
    fn gaussian_k2_is_psd_on_random_datasets() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..3 {
            let ds = random_dataset(&mut rng, 5, 6, 0.5, 3);
            let embs = dataset_embeddings(&ds, &vec![None; 5]).unwrap();
            let tilde: Vec<&DenseMatrix> = embs.iter().map(|e| &e.tilde).collect();
            let k2 = gaussian_k2_from_embeddings(&tilde).unwrap();
            let min = linalg::sym_eigvals_min(&k2.symmetrized()).unwrap();
            let norm = linalg::spectral_norm_sym(&k2.symmetrized()).unwrap();
            assert!(min >= -1e-8 * norm.max(1.0));
        }
    }

    #[test]
    fn decomposition_k2_carries_the_prefactor_and_loses_psdness() {
        // The correlation prefactor in the decomposition's second piece
        // makes it measurably indefinite; the Gaussian-expectation form
        // above is the PSD one. Pin both behaviors.
        let mut rng = StdRng::seed_from_u64(9);
        let ds = random_dataset(&mut rng, 5, 6, 0.5, 3);
        let (_, k2) = closed_form_kernel(&ds, &vec![None; 5]).unwrap();
        let min = linalg::sym_eigvals_min(&k2.symmetrized()).unwrap();
        assert!(min < -1e-8, "expected indefinite, eigmin {min}");
    }
}
