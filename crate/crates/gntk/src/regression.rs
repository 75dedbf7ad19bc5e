//! Kernel ridge regression, the synthetic label model over exact
//! embeddings, and the generalization-bound diagnostics.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::closed_form::{self, gram_powers};
use crate::error::{Error, Result};
use crate::graph::{self, Dataset, Graph};
use crate::kernel::KernelMatrix;
use crate::linalg::{self, DenseMatrix, DenseVector};
use crate::sketch::SketchMatrix;

// ---------------------------------------------------------------------------
// Label model
// ---------------------------------------------------------------------------

/// The learnable function class: a linear term plus even-power terms,
/// `y_i = alpha_1 sum_u <h_u, beta_1> + sum_l alpha_2l sum_u <h_u, beta_2l>^(2l)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelModel {
    pub alpha1: f64,
    pub beta1: DenseVector,
    /// `(alpha_2l, beta_2l)` for `l = 1..=T`.
    pub terms: Vec<(f64, DenseVector)>,
}

impl LabelModel {
    /// `T`, the number of even-power terms.
    pub fn t(&self) -> usize {
        self.terms.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.beta1.len();
        for (_, beta) in &self.terms {
            if beta.len() != d {
                return Err(Error::InvalidArgument {
                    op: "LabelModel",
                    message: format!(
                        "beta vectors must share dimension {d}, got {}",
                        beta.len()
                    ),
                });
            }
        }
        Ok(())
    }

    /// Random model with coefficients in [-1, 1].
    pub fn random<R: rand::Rng>(rng: &mut R, d: usize, t: usize) -> Self {
        let vec = |rng: &mut R| {
            DenseVector::from_vec((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        };
        Self {
            alpha1: rng.gen_range(-1.0..1.0),
            beta1: vec(rng),
            terms: (0..t).map(|_| (rng.gen_range(-1.0..1.0), vec(rng))).collect(),
        }
    }
}

/// Evaluates the label model on the exact (unsketched) embeddings of
/// every graph.
pub fn synthesize_labels(ds: &Dataset, model: &LabelModel) -> Result<DenseVector> {
    model.validate()?;
    if model.beta1.len() != ds.feature_dim {
        return Err(Error::InvalidArgument {
            op: "synthesize_labels",
            message: format!(
                "model dimension {} vs dataset feature dim {}",
                model.beta1.len(),
                ds.feature_dim
            ),
        });
    }
    let mut y = Vec::with_capacity(ds.len());
    for g in &ds.graphs {
        let emb = closed_form::embeddings(g, None)?.bar;
        let mut value = 0.0;
        for u in 0..g.num_nodes() {
            let col = emb.column(u);
            value += model.alpha1 * col.dot(&model.beta1);
            for (l, (alpha, beta)) in model.terms.iter().enumerate() {
                let power = 2 * (l + 1) as i32;
                value += alpha * col.dot(beta).powi(power);
            }
        }
        y.push(value);
    }
    Ok(DenseVector::from_vec(y))
}

// ---------------------------------------------------------------------------
// Kernel ridge regression
// ---------------------------------------------------------------------------

/// Predictions `k_cross (K + lambda I)^{-1} y`.
pub fn krr_fit_predict(
    k_train: &DenseMatrix,
    y: &DenseVector,
    k_cross: &DenseMatrix,
    lambda: f64,
) -> Result<DenseVector> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument {
            op: "krr_fit_predict",
            message: format!("lambda must be nonnegative, got {lambda}"),
        });
    }
    if k_cross.cols() != k_train.rows() {
        return Err(Error::ShapeMismatch {
            op: "krr_fit_predict",
            left_rows: k_cross.rows(),
            left_cols: k_cross.cols(),
            right_rows: k_train.rows(),
            right_cols: k_train.cols(),
        });
    }
    let alpha = linalg::solve_spd_jitter(k_train, y, lambda)?;
    k_cross.matvec(&alpha)
}

/// Mean squared error between predictions and targets.
pub fn mse(pred: &DenseVector, y: &DenseVector) -> f64 {
    assert_eq!(pred.len(), y.len());
    let n = pred.len().max(1) as f64;
    pred.as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / n
}

// ---------------------------------------------------------------------------
// Generalization diagnostics
// ---------------------------------------------------------------------------

/// Computed quantities entering the population-loss bound; reported,
/// never enforced (the bound's premises are measured, not assumed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenDiagnostics {
    /// `sqrt(y^T (K + jitter I)^{-1} y)`.
    pub y_norm_kinv: f64,
    pub trace_k: f64,
    /// `sqrt(y_norm^2 * trace) / n + sqrt(ln(1/delta) / n)`.
    pub bm02_bound: f64,
    /// `4 |a_1| ||b_1|| + sum_l 4 sqrt(pi) (2l-1) |a_2l| ||b_2l||`.
    pub lemma_rhs: f64,
    /// `max_t ||G_t||_F / ||G_t||_2` over the exact gram powers,
    /// `t in {1} U {2l}`.
    pub gamma_max: f64,
    /// The jitter applied to the kernel solve.
    pub jitter: f64,
}

/// Quadratic-form norm with an explicit jitter; sketched kernels can be
/// near-singular, so the jitter is always reported with the value.
pub fn y_norm_with_jitter(k: &DenseMatrix, y: &DenseVector, jitter: f64) -> Result<f64> {
    let x = linalg::solve_spd_jitter(k, y, jitter)?;
    Ok(y.dot(&x).max(0.0).sqrt())
}

/// Evaluates every diagnostic for a one-level normalized kernel.
pub fn gen_diagnostics(
    k: &KernelMatrix,
    y: &DenseVector,
    model: &LabelModel,
    ds: &Dataset,
    delta: f64,
) -> Result<GenDiagnostics> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument {
            op: "gen_diagnostics",
            message: format!("delta {delta} outside (0, 1)"),
        });
    }
    let n = ds.len() as f64;
    let trace_k = k.values.trace();
    let jitter = 1e-10 * trace_k / n;
    let y_norm_kinv = y_norm_with_jitter(&k.values, y, jitter)?;
    let bm02_bound = (y_norm_kinv * y_norm_kinv * trace_k).sqrt() / n + ((1.0 / delta).ln() / n).sqrt();

    let lemma_rhs = model.alpha1.abs() * 4.0 * model.beta1.norm()
        + model
            .terms
            .iter()
            .enumerate()
            .map(|(l, (alpha, beta))| {
                let l = (l + 1) as f64;
                4.0 * PI.sqrt() * (2.0 * l - 1.0) * alpha.abs() * beta.norm()
            })
            .sum::<f64>();

    // Exact gram powers at degrees 1, 2, 4, ..., 2T.
    let embs = closed_form::dataset_embeddings(ds, &vec![None; ds.len()])?;
    let bars: Vec<&DenseMatrix> = embs.iter().map(|e| &e.bar).collect();
    let degrees: Vec<u32> = std::iter::once(1)
        .chain((1..=model.t()).map(|l| 2 * l as u32))
        .collect();
    let mut gamma_max = 0.0f64;
    for gp in gram_powers(&bars, &degrees)? {
        let fro = gp.values.frobenius_norm();
        let spec = linalg::spectral_norm_sym(&gp.values.symmetrized())?;
        if spec > 0.0 {
            gamma_max = gamma_max.max(fro / spec);
        }
    }

    let out = GenDiagnostics {
        y_norm_kinv,
        trace_k,
        bm02_bound,
        lemma_rhs,
        gamma_max,
        jitter,
    };
    for (name, v) in [
        ("y_norm_kinv", out.y_norm_kinv),
        ("trace_k", out.trace_k),
        ("bm02_bound", out.bm02_bound),
        ("lemma_rhs", out.lemma_rhs),
        ("gamma_max", out.gamma_max),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidArgument {
                op: "gen_diagnostics",
                message: format!("{name} is not finite and nonnegative: {v}"),
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Sketch-size adequacy diagnostic
// ---------------------------------------------------------------------------

/// Both sides of the sketch-size adequacy inequality for one graph
/// pair, with the hidden constant taken as 1.
#[derive(Debug, Clone, Serialize)]
pub struct Assumption3Report {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
    /// The node-count inside `log^3 N` was floored at 2.
    pub n_floored: bool,
    /// The right-hand side came out nonpositive (degenerate geometry).
    pub rhs_nonpositive: bool,
}

/// Evaluates the adequacy inequality with sketch sizes taken from the
/// provided sketches (`b = N` when absent).
pub fn assumption3_check(
    gi: &Graph,
    gj: &Graph,
    sketch_i: Option<&SketchMatrix>,
    sketch_j: Option<&SketchMatrix>,
    gamma: f64,
    t_cap: usize,
) -> Result<Assumption3Report> {
    let b_i = sketch_i.map_or(gi.num_nodes(), SketchMatrix::rows);
    let b_j = sketch_j.map_or(gj.num_nodes(), SketchMatrix::rows);
    assumption3_check_with_b(gi, gj, sketch_i, sketch_j, b_i, b_j, gamma, t_cap)
}

/// Same as [`assumption3_check`] with explicit sketch sizes, so the
/// monotone dependence on `b` can be probed with the scaling fixed.
#[allow(clippy::too_many_arguments)]
pub fn assumption3_check_with_b(
    gi: &Graph,
    gj: &Graph,
    sketch_i: Option<&SketchMatrix>,
    sketch_j: Option<&SketchMatrix>,
    b_i: usize,
    b_j: usize,
    gamma: f64,
    t_cap: usize,
) -> Result<Assumption3Report> {
    if gamma <= 0.0 || t_cap == 0 {
        return Err(Error::InvalidArgument {
            op: "assumption3_check",
            message: format!("need gamma > 0 and t_cap >= 1, got {gamma}, {t_cap}"),
        });
    }
    // w = (A+I) C 1 per graph; e = H w.
    let weighted = |g: &Graph, s: Option<&SketchMatrix>| -> Result<(DenseVector, DenseVector)> {
        let c = graph::normalized_scaling_diag(g, s)?;
        let a = g.adjacency_with_self_loops();
        let ones = DenseVector::from_vec(vec![1.0; g.num_nodes()]);
        let w = a.matvec(&c.matvec(&ones)?)?;
        let e = g.features().matvec(&w)?;
        Ok((w, e))
    };
    let (w_i, e_i) = weighted(gi, sketch_i)?;
    let (w_j, e_j) = weighted(gj, sketch_j)?;

    let cross_gram = linalg::matmul_tn(gj.features(), gi.features())?;
    let lhs = w_j.norm() * w_i.norm() * cross_gram.frobenius_norm();

    let quad = e_i.dot(&e_j);
    let n_raw = gi.num_nodes().max(gj.num_nodes());
    let n_floored = n_raw < 2;
    let n_eff = n_raw.max(2) as f64;
    let min_sqrt_b = (b_i.min(b_j) as f64).sqrt();
    let rhs = min_sqrt_b / (gamma * t_cap as f64 * n_eff.ln().powi(3)) * quad;

    Ok(Assumption3Report {
        lhs,
        rhs,
        ok: rhs > 0.0 && lhs <= rhs,
        n_floored,
        rhs_nonpositive: rhs <= 0.0,
    })
}

// ---------------------------------------------------------------------------
