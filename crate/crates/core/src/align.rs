//! Alignment losses: the adversarial domain loss and the rank-weighted
//! conditional kernel alignment, plus the MMD and unweighted conditional
//! baselines used for ablations.
//!
//! The conditional loss compares kernel embeddings of the feature
//! distributions conditioned on quality labels:
//!
//! ```text
//! L_R = tr(Kʸtt Mt K̃tt Mt) + tr(Kʸss Ms K̃ss Ms) − 2 tr(Kʸts Ms K̃st Mt)
//! M  = (Kʸ + εI)⁻¹,   K̃(i,j) = k(fᵢ, fⱼ)·(1 + W(i,j))
//! ```
//!
//! Label kernels, their inverses and the rank weights `W` are constants, so
//! `L_R` is linear in the feature kernels. The graph path exploits that by
//! precomputing one coefficient matrix per block.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnx::graph::{dann_value, gauss_kernel_rows};
use crate::nnx::{Graph, Tensor, Var};

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_LABEL_BANDWIDTH: f64 = 0.1;

/// Gaussian kernel entries plus the bandwidth that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub entries: Tensor,
    pub bandwidth: f64,
}

impl KernelMatrix {
    pub fn rows(&self) -> usize {
        self.entries.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.entries.shape()[1]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.data()[i * self.cols() + j]
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows(), self.cols(), self.entries.data())
    }
}

/// `exp(−‖aᵢ − bⱼ‖² / (2·bandwidth²))` between rows of `a[n,D]` and `b[m,D]`.
pub fn gaussian_kernel_matrix(a: &Tensor, b: &Tensor, bandwidth: f64) -> Result<KernelMatrix> {
    if !(bandwidth > 0.0) {
        return Err(Error::Parameter(format!("bandwidth must be > 0, got {bandwidth}")));
    }
    Ok(KernelMatrix {
        entries: gauss_kernel_rows(a, b, bandwidth)?,
        bandwidth,
    })
}

/// Kernel over scalar labels.
pub fn label_kernel(a: &[f64], b: &[f64], bandwidth: f64) -> Result<KernelMatrix> {
    gaussian_kernel_matrix(
        &Tensor::new(&[a.len(), 1], a.to_vec())?,
        &Tensor::new(&[b.len(), 1], b.to_vec())?,
        bandwidth,
    )
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Non-negative misranking penalties between two sample sets.
#[derive(Debug, Clone, PartialEq)]
pub struct RankWeightMatrix {
    pub entries: Tensor,
}

impl RankWeightMatrix {
    pub fn zeros(n: usize, m: usize) -> Self {
        RankWeightMatrix {
            entries: Tensor::zeros(&[n, m]),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.data()[i * self.entries.shape()[1] + j]
    }

    pub fn mean(&self) -> f64 {
        self.entries.sum() / self.entries.len().max(1) as f64
    }

    pub fn nonzero_fraction(&self) -> f64 {
        let nz = self.entries.data().iter().filter(|&&v| v != 0.0).count();
        nz as f64 / self.entries.len().max(1) as f64
    }
}

/// `W(i,j) = max(0, −(ŷaᵢ − ŷbⱼ)·sign(yaᵢ − ybⱼ))`, with `sign(0) = 0`.
pub fn rank_weights(
    pred_a: &[f64],
    pred_b: &[f64],
    y_a: &[f64],
    y_b: &[f64],
) -> Result<RankWeightMatrix> {
    if pred_a.len() != y_a.len() || pred_b.len() != y_b.len() {
        return Err(Error::Dimension(
            "rank weights: predictions and labels differ in length".into(),
        ));
    }
    let mut data = Vec::with_capacity(pred_a.len() * pred_b.len());
    for (pa, ya) in pred_a.iter().zip(y_a) {
        for (pb, yb) in pred_b.iter().zip(y_b) {
            data.push((-(pa - pb) * sign(ya - yb)).max(0.0));
        }
    }
    Ok(RankWeightMatrix {
        entries: Tensor::new(&[pred_a.len(), pred_b.len()], data)?,
    })
}

/// `k(aᵢ, bⱼ)·(1 + W(i,j))`.
pub fn weighted_feature_kernel(
    f_a: &Tensor,
    f_b: &Tensor,
    w: &RankWeightMatrix,
    bandwidth: f64,
) -> Result<KernelMatrix> {
    let k = gaussian_kernel_matrix(f_a, f_b, bandwidth)?;
    if w.entries.shape() != k.entries.shape() {
        return Err(Error::Dimension(format!(
            "rank weights {:?} vs kernel {:?}",
            w.entries.shape(),
            k.entries.shape()
        )));
    }
    Ok(KernelMatrix {
        entries: k.entries.zip_map(&w.entries, |kv, wv| kv * (1.0 + wv))?,
        bandwidth,
    })
}

/// `(K + εI)⁻¹` through a Cholesky factorization.
pub fn regularized_inverse(k: &KernelMatrix, eps: f64) -> Result<DMatrix<f64>> {
    if k.rows() != k.cols() {
        return Err(Error::Dimension("regularized inverse of non-square kernel".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("epsilon must be > 0, got {eps}")));
    }
    let n = k.rows();
    let m = k.to_dmatrix() + DMatrix::identity(n, n) * eps;
    Cholesky::new(m)
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numeric("Cholesky of K + εI failed".into()))
}

/// Which rank-weight matrices are non-zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankWeightScope {
    CrossOnly,
    All,
}

/// Alignment criterion for the conditional term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentKind {
    /// Rank-weighted conditional alignment.
    Rca,
    /// Conditional alignment with all rank weights forced to zero.
    Cod,
    /// Marginal mean-embedding distance.
    Mmd,
}

/// Bandwidths of the feature and label kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernelConfig {
    /// `None` selects the per-batch median pairwise distance.
    pub feature_bandwidth: Option<f64>,
    pub label_bandwidth: f64,
}

impl Default for GaussianKernelConfig {
    fn default() -> Self {
        GaussianKernelConfig {
            feature_bandwidth: None,
            label_bandwidth: DEFAULT_LABEL_BANDWIDTH,
        }
    }
}

/// Median Euclidean distance over all distinct row pairs; 1 when degenerate.
pub fn median_pairwise_distance(rows: &[&Tensor]) -> f64 {
    let all: Vec<&[f64]> = rows
        .iter()
        .flat_map(|t| (0..t.rows()).map(move |i| t.row(i)))
        .collect();
    let mut d = Vec::with_capacity(all.len() * all.len().saturating_sub(1) / 2);
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            let s: f64 = all[i].iter().zip(all[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let med = if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    };
    if med > 0.0 && med.is_finite() {
        med
    } else {
        1.0
    }
}

/// Everything one conditional-alignment evaluation needs.
#[derive(Debug, Clone)]
pub struct RcaBatch {
    pub f_s: Tensor,
    pub f_t: Tensor,
    pub y_s: Vec<f64>,
    /// Pseudo-labels of the target samples.
    pub y_t: Vec<f64>,
    pub pred_s: Vec<f64>,
    pub pred_t: Vec<f64>,
    pub epsilon: f64,
}

impl RcaBatch {
    fn validate(&self) -> Result<()> {
        let (ns, nt) = (self.f_s.rows(), self.f_t.rows());
        if self.f_s.rank() != 2 || self.f_t.rank() != 2 || self.f_s.row_len() != self.f_t.row_len() {
            return Err(Error::Dimension(format!(
                "features {:?} / {:?}",
                self.f_s.shape(),
                self.f_t.shape()
            )));
        }
        if self.y_s.len() != ns || self.pred_s.len() != ns || self.y_t.len() != nt || self.pred_t.len() != nt {
            return Err(Error::Dimension("labels/predictions vs features".into()));
        }
        if ns < 2 || nt < 2 {
            return Err(Error::Dimension(format!(
                "need at least 2 samples per domain, got {ns}+{nt}"
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Parameter(format!("epsilon {}", self.epsilon)));
        }
        Ok(())
    }
}

/// The three rank-weight matrices in `(ss, tt, st)` order.
#[derive(Debug, Clone)]
pub struct RankWeights {
    pub ss: RankWeightMatrix,
    pub tt: RankWeightMatrix,
    pub st: RankWeightMatrix,
}

impl RankWeights {
    pub fn compute(batch: &RcaBatch, kind: AlignmentKind, scope: RankWeightScope) -> Result<Self> {
        let (ns, nt) = (batch.y_s.len(), batch.y_t.len());
        if kind != AlignmentKind::Rca {
            return Ok(RankWeights {
                ss: RankWeightMatrix::zeros(ns, ns),
                tt: RankWeightMatrix::zeros(nt, nt),
                st: RankWeightMatrix::zeros(ns, nt),
            });
        }
        let st = rank_weights(&batch.pred_s, &batch.pred_t, &batch.y_s, &batch.y_t)?;
        let (ss, tt) = match scope {
            RankWeightScope::All => (
                rank_weights(&batch.pred_s, &batch.pred_s, &batch.y_s, &batch.y_s)?,
                rank_weights(&batch.pred_t, &batch.pred_t, &batch.y_t, &batch.y_t)?,
            ),
            RankWeightScope::CrossOnly => (
                RankWeightMatrix::zeros(ns, ns),
                RankWeightMatrix::zeros(nt, nt),
            ),
        };
        Ok(RankWeights { ss, tt, st })
    }

    pub fn mean(&self) -> f64 {
        let total = self.ss.entries.sum() + self.tt.entries.sum() + self.st.entries.sum();
        let n = self.ss.entries.len() + self.tt.entries.len() + self.st.entries.len();
        total / n as f64
    }

    pub fn nonzero_fraction(&self) -> f64 {
        let n = self.ss.entries.len() + self.tt.entries.len() + self.st.entries.len();
        let nz = [&self.ss, &self.tt, &self.st]
            .iter()
            .map(|w| w.entries.data().iter().filter(|&&v| v != 0.0).count())
            .sum::<usize>();
        nz as f64 / n as f64
    }
}

fn resolve_bandwidth(batch: &RcaBatch, cfg: &GaussianKernelConfig) -> Result<f64> {
    let bw = cfg
        .feature_bandwidth
        .unwrap_or_else(|| median_pairwise_distance(&[&batch.f_s, &batch.f_t]));
    if !(bw > 0.0) || !(cfg.label_bandwidth > 0.0) {
        return Err(Error::Parameter("kernel bandwidths must be > 0".into()));
    }
    Ok(bw)
}

/// Direct matrix evaluation of `L_R` (inverses, products, traces).
pub fn rca_loss(batch: &RcaBatch, cfg: &GaussianKernelConfig, weights: &RankWeights) -> Result<f64> {
    batch.validate()?;
    let bw = resolve_bandwidth(batch, cfg)?;
    let ky_ss = label_kernel(&batch.y_s, &batch.y_s, cfg.label_bandwidth)?;
    let ky_tt = label_kernel(&batch.y_t, &batch.y_t, cfg.label_bandwidth)?;
    let ky_ts = label_kernel(&batch.y_t, &batch.y_s, cfg.label_bandwidth)?.to_dmatrix();
    let m_s = regularized_inverse(&ky_ss, batch.epsilon)?;
    let m_t = regularized_inverse(&ky_tt, batch.epsilon)?;
    let kx_ss = weighted_feature_kernel(&batch.f_s, &batch.f_s, &weights.ss, bw)?.to_dmatrix();
    let kx_tt = weighted_feature_kernel(&batch.f_t, &batch.f_t, &weights.tt, bw)?.to_dmatrix();
    let kx_st = weighted_feature_kernel(&batch.f_s, &batch.f_t, &weights.st, bw)?.to_dmatrix();
    let tt = (ky_tt.to_dmatrix() * &m_t * kx_tt * &m_t).trace();
    let ss = (ky_ss.to_dmatrix() * &m_s * kx_ss * &m_s).trace();
    let st = (ky_ts * &m_s * kx_st * &m_t).trace();
    Ok(tt + ss - 2.0 * st)
}

/// Constant coefficient matrices `(C_ss, C_tt, C_st)` with
/// `L_R = Σ C_ss⊙K̃ss + Σ C_tt⊙K̃tt + Σ C_st⊙K̃st`.
pub fn conditional_coefficients(
    y_s: &[f64],
    y_t: &[f64],
    label_bandwidth: f64,
    epsilon: f64,
) -> Result<(Tensor, Tensor, Tensor)> {
    let ky_ss = label_kernel(y_s, y_s, label_bandwidth)?;
    let ky_tt = label_kernel(y_t, y_t, label_bandwidth)?;
    let ky_st = label_kernel(y_s, y_t, label_bandwidth)?.to_dmatrix();
    let m_s = regularized_inverse(&ky_ss, epsilon)?;
    let m_t = regularized_inverse(&ky_tt, epsilon)?;
    // tr(A K B) = Σ K ⊙ (B A)ᵀ
    let c_ss = (&m_s * ky_ss.to_dmatrix() * &m_s).transpose();
    let c_tt = (&m_t * ky_tt.to_dmatrix() * &m_t).transpose();
    let c_st = (&m_s * ky_st * &m_t) * -2.0;
    Ok((to_tensor(&c_ss)?, to_tensor(&c_tt)?, to_tensor(&c_st)?))
}

fn to_tensor(m: &DMatrix<f64>) -> Result<Tensor> {
    let mut data = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            data.push(m[(i, j)]);
        }
    }
    Tensor::new(&[m.nrows(), m.ncols()], data)
}

/// Per-evaluation diagnostics for the alignment CSV.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AlignDiagnostics {
    pub loss: f64,
    pub mean_w: f64,
    pub nonzero_w: f64,
    pub feature_bandwidth: f64,
}

/// Alignment term on the graph. `f_s`/`f_t` are pooled feature nodes; the
/// labels, pseudo-labels and predictions in `batch` are treated as
/// constants (its `f_s`/`f_t` fields must hold the current node values).
pub fn alignment_loss(
    g: &mut Graph,
    f_s: Var,
    f_t: Var,
    batch: &RcaBatch,
    kind: AlignmentKind,
    scope: RankWeightScope,
    cfg: &GaussianKernelConfig,
) -> Result<(Var, AlignDiagnostics)> {
    batch.validate()?;
    let bw = resolve_bandwidth(batch, cfg)?;
    let (ns, nt) = (batch.y_s.len(), batch.y_t.len());
    let weights = RankWeights::compute(batch, kind, scope)?;
    let (c_ss, c_tt, c_st) = match kind {
        AlignmentKind::Mmd => (
            Tensor::full(&[ns, ns], 1.0 / (ns * ns) as f64),
            Tensor::full(&[nt, nt], 1.0 / (nt * nt) as f64),
            Tensor::full(&[ns, nt], -2.0 / (ns * nt) as f64),
        ),
        AlignmentKind::Rca | AlignmentKind::Cod => {
            conditional_coefficients(&batch.y_s, &batch.y_t, cfg.label_bandwidth, batch.epsilon)?
        }
    };
    let scale = |c: Tensor, w: &RankWeightMatrix| c.zip_map(&w.entries, |cv, wv| cv * (1.0 + wv));
    let k_ss = g.gauss_kernel(f_s, f_s, bw)?;
    let k_tt = g.gauss_kernel(f_t, f_t, bw)?;
    let k_st = g.gauss_kernel(f_s, f_t, bw)?;
    let l_ss = g.weighted_sum(k_ss, scale(c_ss, &weights.ss)?)?;
    let l_tt = g.weighted_sum(k_tt, scale(c_tt, &weights.tt)?)?;
    let l_st = g.weighted_sum(k_st, scale(c_st, &weights.st)?)?;
    let a = g.add(l_ss, l_tt)?;
    let loss = g.add(a, l_st)?;
    let diag = AlignDiagnostics {
        loss: g.value(loss).item(),
        mean_w: weights.mean(),
        nonzero_w: weights.nonzero_fraction(),
        feature_bandwidth: bw,
    };
    Ok((loss, diag))
}

/// `−mean(log(1 − d_s)) − mean(log(d_t))`, outputs clamped to `[1e-7, 1 − 1e-7]`.
pub fn dann_loss(d_s: &[f64], d_t: &[f64]) -> Result<f64> {
    if d_s.is_empty() || d_t.is_empty() {
        return Err(Error::Dimension("empty discriminator batch".into()));
    }
    Ok(dann_value(d_s, d_t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(&[n, d], (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn kernel_closed_forms() {
        let a = Tensor::new(&[1, 2], vec![0.0, 0.0]).unwrap();
        let b = Tensor::new(&[2, 2], vec![0.0, 0.0, 0.5 * 2f64.sqrt(), 0.0]).unwrap();
        let k = gaussian_kernel_matrix(&a, &b, 0.5).unwrap();
        assert_eq!(k.get(0, 0), 1.0);
        assert!((k.get(0, 1) - (-1f64).exp()).abs() < 1e-15);
        assert!(gaussian_kernel_matrix(&a, &b, 0.0).is_err());
        let c = Tensor::new(&[1, 3], vec![0.0; 3]).unwrap();
        assert!(gaussian_kernel_matrix(&a, &c, 1.0).is_err());
    }

    #[test]
    fn kernel_matches_double_loop() {
        let a = rows(5, 3, 1);
        let b = rows(5, 3, 2);
        let k = gaussian_kernel_matrix(&a, &b, 0.7).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let mut d2 = 0.0;
                for c in 0..3 {
                    d2 += (a.row(i)[c] - b.row(j)[c]).powi(2);
                }
                assert!((k.get(i, j) - (-d2 / (2.0 * 0.49)).exp()).abs() < 1e-12);
            }
        }
        let kk = gaussian_kernel_matrix(&a, &a, 0.7).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(kk.get(i, j), kk.get(j, i));
            }
        }
    }

    #[test]
    fn rank_weight_examples() {
        assert_eq!(rank_weights(&[0.8], &[0.3], &[0.9], &[0.2]).unwrap().get(0, 0), 0.0);
        assert!((rank_weights(&[0.3], &[0.8], &[0.9], &[0.2]).unwrap().get(0, 0) - 0.5).abs() < 1e-15);
        assert_eq!(rank_weights(&[0.1], &[0.9], &[0.4], &[0.4]).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn weighted_kernel_composes() {
        let a = rows(6, 4, 3);
        let b = rows(6, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pa: Vec<f64> = (0..6).map(|_| rng.random()).collect();
        let pb: Vec<f64> = (0..6).map(|_| rng.random()).collect();
        let ya: Vec<f64> = (0..6).map(|_| rng.random()).collect();
        let yb: Vec<f64> = (0..6).map(|_| rng.random()).collect();
        let w = rank_weights(&pa, &pb, &ya, &yb).unwrap();
        let kt = weighted_feature_kernel(&a, &b, &w, 0.9).unwrap();
        let k = gaussian_kernel_matrix(&a, &b, 0.9).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let wij = (-(pa[i] - pb[j]) * sign(ya[i] - yb[j])).max(0.0);
                assert!((kt.get(i, j) - k.get(i, j) * (1.0 + wij)).abs() < 1e-12);
            }
        }
        let zero = weighted_feature_kernel(&a, &b, &RankWeightMatrix::zeros(6, 6), 0.9).unwrap();
        assert_eq!(zero.entries, k.entries);
        let mut ones = RankWeightMatrix::zeros(6, 6);
        ones.entries.data_mut().fill(1.0);
        let doubled = weighted_feature_kernel(&a, &b, &ones, 0.9).unwrap();
        assert_eq!(doubled.entries, k.entries.map(|v| 2.0 * v));
        assert!(weighted_feature_kernel(&a, &b, &RankWeightMatrix::zeros(5, 6), 0.9).is_err());
    }

    #[test]
    fn duplicated_domains_cancel() {
        let f = rows(6, 4, 7);
        let y = vec![0.1, 0.35, 0.5, 0.62, 0.8, 0.95];
        let batch = RcaBatch {
            f_s: f.clone(),
            f_t: f,
            y_s: y.clone(),
            y_t: y.clone(),
            pred_s: y.clone(),
            pred_t: y,
            epsilon: DEFAULT_EPSILON,
        };
        let cfg = GaussianKernelConfig::default();
        let w = RankWeights::compute(&batch, AlignmentKind::Rca, RankWeightScope::All).unwrap();
        assert_eq!(w.mean(), 0.0);
        assert!(rca_loss(&batch, &cfg, &w).unwrap().abs() < 1e-8);
    }

    #[test]
    fn graph_path_matches_matrix_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch = RcaBatch {
            f_s: rows(5, 3, 10),
            f_t: rows(4, 3, 11),
            y_s: (0..5).map(|_| rng.random()).collect(),
            y_t: (0..4).map(|_| rng.random()).collect(),
            pred_s: (0..5).map(|_| rng.random()).collect(),
            pred_t: (0..4).map(|_| rng.random()).collect(),
            epsilon: DEFAULT_EPSILON,
        };
        let cfg = GaussianKernelConfig::default();
        for kind in [AlignmentKind::Rca, AlignmentKind::Cod] {
            let w = RankWeights::compute(&batch, kind, RankWeightScope::All).unwrap();
            let direct = rca_loss(&batch, &cfg, &w).unwrap();
            let mut g = Graph::new();
            let fs = g.param(batch.f_s.clone());
            let ft = g.param(batch.f_t.clone());
            let (l, d) = alignment_loss(&mut g, fs, ft, &batch, kind, RankWeightScope::All, &cfg).unwrap();
            let v = g.value(l).item();
            assert!((v - direct).abs() <= 1e-9 * direct.abs().max(1.0), "{kind:?}: {v} vs {direct}");
            assert_eq!(d.loss, v);
        }
    }

    #[test]
    fn regularized_inverse_residual_small() {
        let y: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin() * 0.5 + 0.5).collect();
        let k = label_kernel(&y, &y, DEFAULT_LABEL_BANDWIDTH).unwrap();
        let inv = regularized_inverse(&k, DEFAULT_EPSILON).unwrap();
        let r = (k.to_dmatrix() + DMatrix::identity(64, 64) * DEFAULT_EPSILON) * inv - DMatrix::identity(64, 64);
        assert!(r.amax() < 1e-6, "residual {}", r.amax());
    }

    #[test]
    fn dann_examples() {
        assert!((dann_loss(&[0.5; 3], &[0.5; 3]).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-10);
        assert!(dann_loss(&[1e-9; 2], &[1.0 - 1e-9; 2]).unwrap() < 1e-6);
        assert!(dann_loss(&[], &[0.5]).is_err());
    }

    #[test]
    fn median_heuristic() {
        let t = Tensor::new(&[3, 1], vec![0.0, 1.0, 3.0]).unwrap();
        // distances 1, 3, 2
        assert_eq!(median_pairwise_distance(&[&t]), 2.0);
        let flat = Tensor::zeros(&[4, 2]);
        assert_eq!(median_pairwise_distance(&[&flat]), 1.0);
    }

    proptest! {
        #[test]
        fn rank_weights_nonnegative_and_role_symmetric(
            pa in prop::collection::vec(0.0f64..1.0, 1..6),
            pb in prop::collection::vec(0.0f64..1.0, 1..6),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ya: Vec<f64> = pa.iter().map(|_| rng.random()).collect();
            let yb: Vec<f64> = pb.iter().map(|_| rng.random()).collect();
            let w = rank_weights(&pa, &pb, &ya, &yb).unwrap();
            let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
            let swapped = rank_weights(&neg(&pb), &neg(&pa), &neg(&yb), &neg(&ya)).unwrap();
            for i in 0..pa.len() {
                for j in 0..pb.len() {
                    prop_assert!(w.get(i, j) >= 0.0);
                    let correct = (pa[i] - pb[j]) * (ya[i] - yb[j]) >= 0.0;
                    if correct {
                        prop_assert_eq!(w.get(i, j), 0.0);
                        prop_assert_eq!(swapped.get(j, i), 0.0);
                    }
                    prop_assert_eq!(w.get(i, j), swapped.get(j, i));
                }
            }
        }
    }
}
