//! Projector pairs, the bi-conformal connection and the leaf obstructions.
//!
//! All quantities are coordinate-frame components. Conventions:
//!
//! * `P` projects onto the transverse distribution (rank `p`), `Π = 1 − P`
//!   onto the leaves (rank `N − p`).
//! * Connections and curvature follow [`crate::geometry`]; the bi-conformal
//!   curvature `R̄_bac^d` uses the `[b][a][c][d]` slot layout.
//!
//! Pipeline, with the jet order consumed at each step (metric order 3):
//!
//! ```text
//! g (3) → Γ (2), P (3) → ∇P, M, E, W, L (2) → Γ̄ = Γ + L (2) → R̄ (1)
//!       → L^Π, R̄^Π (1) → T, T^||, R̄^|| (values) and ∇̄L^Π → B^|| (0)
//! ```
//!
//! The trace-term denominator of `T` is `2 − N + p`, the Weyl normalization
//! for leaves of dimension `N − p`. The printed alternative `2 − N − p` and
//! an unbarred reading of the third term of `L^Π` are kept as
//! [`FormulaVariant`]s so the oracle tests can show that only the chosen
//! forms reproduce the induced Weyl and Cotton tensors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    christoffel, covariant_derivative, jet_matrix_inverse, riemann, ConnectionSample,
    GeometryError, MetricSample,
};
use crate::jets::Jet;
use crate::tensor::{DenseTensor, TensorError, Variance};

use Variance::{Down, Up};

/// Jet order the metric is expanded to; enough for `∇̄L^Π`.
pub const PIPELINE_ORDER: u8 = 3;

/// Relative threshold for `|g(ω, ω)|` or the Gram determinant.
pub const NONDEGENERACY_RTOL: f64 = 1e-10;

/// Tolerance on `|tr P − round(tr P)|`.
pub const TRACE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BiconformalError {
    #[error("degenerate distribution: induced Gram determinant {gram:e} below {threshold:e}")]
    DegenerateDistribution { gram: f64, threshold: f64 },
    #[error("spanning fields are linearly dependent at the point")]
    RankDeficientSpan,
    #[error("distribution needs between 1 and {max} spanning fields, got {got}")]
    FieldCount { got: usize, max: usize },
    #[error("component list has {got} entries, chart dimension is {expected}")]
    ComponentCount { expected: usize, got: usize },
    #[error("tr P = {0} is not within tolerance of an integer")]
    NonIntegerTrace(f64),
    #[error("projector rank p = {p} must satisfy 1 <= p <= {}", n - 1)]
    TrivialDistribution { p: usize, n: usize },
    #[error("leaf dimension {leaf_dim} too small (needs at least {needed})")]
    LeafDimension { leaf_dim: usize, needed: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl From<crate::jets::JetError> for BiconformalError {
    fn from(e: crate::jets::JetError) -> Self {
        BiconformalError::Geometry(e.into())
    }
}

/// Denominator of the trace terms in `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TraceDenominator {
    /// `2 − N + p = 2 − dim(leaf)`.
    #[default]
    LeafDimension,
    /// `2 − N − p`.
    Printed,
}

/// Which curvature enters the `Π^d_b Π^r_q R_cdr^q` term of `L^Π`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LPiThirdTerm {
    /// Bi-conformal curvature `R̄`.
    #[default]
    Barred,
    /// Levi-Civita curvature `R`.
    Unbarred,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FormulaVariant {
    pub t_denominator: TraceDenominator,
    pub l_pi_third_term: LPiThirdTerm,
}

/// Complementary orthogonal projectors at a point, as jets.
#[derive(Debug, Clone)]
pub struct ProjectorPair {
    /// `P^a_b`
    pub p_mixed: DenseTensor<Jet>,
    /// `Π^a_b`
    pub pi_mixed: DenseTensor<Jet>,
    /// `P_ab`
    pub p_low: DenseTensor<Jet>,
    /// `Π_ab`
    pub pi_low: DenseTensor<Jet>,
    /// `P^ab`
    pub p_up: DenseTensor<Jet>,
    /// `Π^ab`
    pub pi_up: DenseTensor<Jet>,
    /// `tr P`, the transverse rank.
    pub p: usize,
}

/// Orthogonal projector onto `span{u_i}` given upper and lower components of
/// the `u_i`: returns `(Q^a_b, Q_ab, Q^ab)`.
fn span_projector(
    up: &[Vec<Jet>],
    down: &[Vec<Jet>],
    n: usize,
) -> Result<[DenseTensor<Jet>; 3], BiconformalError> {
    let m = up.len();
    let mut gram = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            let mut acc = Jet::constant(n, up[0][0].order(), 0.0);
            let mut acc_t = acc.clone();
            for a in 0..n {
                acc = &acc + &(&up[i][a] * &down[j][a]);
                acc_t = &acc_t + &(&up[j][a] * &down[i][a]);
            }
            gram.push((&acc + &acc_t).scale(0.5));
        }
    }
    let scale: f64 = (0..m)
        .map(|i| (0..n).map(|a| (up[i][a].value() * down[i][a].value()).abs()).sum::<f64>())
        .product();
    let det = DMatrix::from_fn(m, m, |i, j| gram[i * m + j].value()).determinant();
    let threshold = NONDEGENERACY_RTOL * scale;
    if !(det.abs() > threshold) {
        return Err(BiconformalError::DegenerateDistribution {
            gram: det,
            threshold,
        });
    }
    let k = jet_matrix_inverse(&gram, m)?;
    let order = k.iter().chain(up.iter().flatten()).map(Jet::order).min().unwrap_or(0);
    let build = |left: &[Vec<Jet>], right: &[Vec<Jet>], var: Vec<Variance>, symmetric: bool| {
        let mut t = DenseTensor::from_fn(n, var, |_| Jet::constant(n, order, 0.0));
        for a in 0..n {
            let start = if symmetric { a } else { 0 };
            for b in start..n {
                let mut acc = Jet::constant(n, order, 0.0);
                for i in 0..m {
                    for j in 0..m {
                        acc = &acc + &(&(&left[i][a] * &k[i * m + j]) * &right[j][b]);
                    }
                }
                if symmetric {
                    t.set(&[b, a], acc.clone());
                }
                t.set(&[a, b], acc);
            }
        }
        t
    };
    Ok([
        build(up, down, vec![Up, Down], false),
        build(down, down, vec![Down, Down], true),
        build(up, up, vec![Up, Up], true),
    ])
}

fn identity(n: usize, order: u8) -> DenseTensor<Jet> {
    DenseTensor::from_fn(n, vec![Up, Down], |i| {
        Jet::constant(n, order, if i[0] == i[1] { 1.0 } else { 0.0 })
    })
}

impl ProjectorPair {
    /// Assembles the pair from the projector onto a subspace and the
    /// metric. `onto_is_p` says which member of the pair `q` is.
    fn from_parts(
        q: [DenseTensor<Jet>; 3],
        metric: &MetricSample,
        onto_is_p: bool,
    ) -> Result<Self, BiconformalError> {
        let n = metric.dim();
        let [q_mixed, q_low, q_up] = q;
        let order = q_mixed.order();
        let c_mixed = identity(n, order).try_sub(&q_mixed)?;
        let c_low = metric.g.truncate(order).try_sub(&q_low)?;
        let c_up = metric.g_inv.truncate(order).try_sub(&q_up)?;
        let (p_mixed, pi_mixed, p_low, pi_low, p_up, pi_up) = if onto_is_p {
            (q_mixed, c_mixed, q_low, c_low, q_up, c_up)
        } else {
            (c_mixed, q_mixed, c_low, q_low, c_up, q_up)
        };
        let trace: f64 = (0..n).map(|a| p_mixed.get(&[a, a]).value()).sum();
        let rounded = trace.round();
        if (trace - rounded).abs() >= TRACE_TOL {
            return Err(BiconformalError::NonIntegerTrace(trace));
        }
        let p = rounded.max(0.0) as usize;
        if p == 0 || p >= n {
            return Err(BiconformalError::TrivialDistribution { p, n });
        }
        Ok(ProjectorPair {
            p_mixed,
            pi_mixed,
            p_low,
            pi_low,
            p_up,
            pi_up,
            p,
        })
    }

    pub fn dim(&self) -> usize {
        self.p_mixed.dim()
    }

    /// Dimension of the leaves, `N − p`.
    pub fn leaf_dim(&self) -> usize {
        self.dim() - self.p
    }

    /// Largest residual of `P∘P = P`, `Π∘Π = Π`, `P∘Π = 0`, `P_ab + Π_ab = g_ab`
    /// and the symmetry of `P_ab`, `Π_ab` (value parts).
    pub fn invariant_residual(&self, metric: &MetricSample) -> f64 {
        let n = self.dim();
        let p = self.p_mixed.values();
        let pi = self.pi_mixed.values();
        let pl = self.p_low.values();
        let pil = self.pi_low.values();
        let g = metric.g.values();
        let mut worst = 0.0_f64;
        for a in 0..n {
            for c in 0..n {
                let mut pp = 0.0;
                let mut pipi = 0.0;
                let mut ppi = 0.0;
                for b in 0..n {
                    pp += p.get(&[a, b]) * p.get(&[b, c]);
                    pipi += pi.get(&[a, b]) * pi.get(&[b, c]);
                    ppi += p.get(&[a, b]) * pi.get(&[b, c]);
                }
                worst = worst
                    .max((pp - p.get(&[a, c])).abs())
                    .max((pipi - pi.get(&[a, c])).abs())
                    .max(ppi.abs())
                    .max((pl.get(&[a, c]) + pil.get(&[a, c]) - g.get(&[a, c])).abs())
                    .max((pl.get(&[a, c]) - pl.get(&[c, a])).abs())
                    .max((pil.get(&[a, c]) - pil.get(&[c, a])).abs());
            }
        }
        worst
    }

    /// `Π^a_b` as plain values.
    pub fn pi_values(&self) -> DenseTensor<f64> {
        self.pi_mixed.values()
    }
}

/// `P = ω^♯ ⊗ ω / g^♯(ω, ω)`, `Π = 1 − P`. `omega` holds jets of the
/// covector components.
pub fn projectors_from_oneform(
    omega: &[Jet],
    metric: &MetricSample,
) -> Result<ProjectorPair, BiconformalError> {
    let n = metric.dim();
    if omega.len() != n {
        return Err(BiconformalError::ComponentCount {
            expected: n,
            got: omega.len(),
        });
    }
    let order = omega.iter().map(Jet::order).min().unwrap_or(0).min(metric.g.order());
    let omega: Vec<Jet> = omega.iter().map(|w| w.truncate(order)).collect();
    let sharp: Vec<Jet> = (0..n)
        .map(|a| {
            let mut acc = Jet::constant(n, order, 0.0);
            for (b, w) in omega.iter().enumerate() {
                acc = &acc + &(metric.g_inv.get(&[a, b]) * w);
            }
            acc
        })
        .collect();
    let q = span_projector(&[sharp], &[omega], n)?;
    ProjectorPair::from_parts(q, metric, true)
}

/// `Π` = orthogonal projector onto `span{V_i}` (the leaves), `P = 1 − Π`.
/// `fields[i]` holds jets of the upper components of `V_i`.
pub fn projectors_from_span(
    fields: &[Vec<Jet>],
    metric: &MetricSample,
) -> Result<ProjectorPair, BiconformalError> {
    let n = metric.dim();
    let m = fields.len();
    if m == 0 || m >= n {
        return Err(BiconformalError::FieldCount { got: m, max: n - 1 });
    }
    if let Some(f) = fields.iter().find(|f| f.len() != n) {
        return Err(BiconformalError::ComponentCount {
            expected: n,
            got: f.len(),
        });
    }
    let values = DMatrix::from_fn(m, n, |i, a| fields[i][a].value());
    let scale = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 || values.rank(1e-12 * scale) < m {
        return Err(BiconformalError::RankDeficientSpan);
    }
    let down: Vec<Vec<Jet>> = fields
        .iter()
        .map(|v| {
            (0..n)
                .map(|a| {
                    let mut acc = Jet::constant(n, metric.g.order(), 0.0);
                    for (b, vb) in v.iter().enumerate() {
                        acc = &acc + &(metric.g.get(&[a, b]) * vb);
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let q = span_projector(fields, &down, n)?;
    ProjectorPair::from_parts(q, metric, false)
}

/// `M_abc`, `E_a`, `W_a` and the deformation `L^a_bc = Γ̄^a_bc − Γ^a_bc`.
#[derive(Debug, Clone)]
pub struct Deformation {
    pub m: DenseTensor<Jet>,
    pub e: DenseTensor<Jet>,
    pub w: DenseTensor<Jet>,
    pub l: DenseTensor<Jet>,
}

pub fn deformation_tensor(
    pp: &ProjectorPair,
    lc: &ConnectionSample,
    metric: &MetricSample,
) -> Result<Deformation, BiconformalError> {
    let n = pp.dim();
    let p = pp.p;
    if p == 0 || p >= n {
        return Err(BiconformalError::TrivialDistribution { p, n });
    }
    let dp = covariant_derivative(&pp.p_low, lc)?; // [e][a][c] = ∇_e P_ac
    let order = dp.order();
    let zero = Jet::constant(n, order, 0.0);
    let mut m = DenseTensor::from_fn(n, vec![Down, Down, Down], |_| zero.clone());
    for a in 0..n {
        for b in 0..n {
            for c in b..n {
                let v = &(dp.get(&[b, a, c]) + dp.get(&[c, a, b])) - dp.get(&[a, b, c]);
                m.set(&[a, c, b], v.clone());
                m.set(&[a, b, c], v);
            }
        }
    }
    let mut e = DenseTensor::from_fn(n, vec![Down], |_| zero.clone());
    let mut w = e.clone();
    for a in 0..n {
        let mut ea = zero.clone();
        let mut wa = zero.clone();
        for c in 0..n {
            for b in 0..n {
                let mab = m.get(&[a, c, b]);
                ea = &ea + &(mab * pp.p_up.get(&[c, b]));
                wa = &wa - &(mab * pp.pi_up.get(&[c, b]));
            }
        }
        e.set(&[a], ea);
        w.set(&[a], wa);
    }
    let m_up = m.raise_slot(0, &metric.g_inv.truncate(order))?;
    let (pf, cf) = (1.0 / (2.0 * p as f64), 1.0 / (2.0 * (n - p) as f64));
    let mut l = DenseTensor::from_fn(n, vec![Up, Down, Down], |_| zero.clone());
    for a in 0..n {
        // ½ (P^a_d − Π^a_d)
        let diff: Vec<Jet> = (0..n)
            .map(|d| (pp.p_mixed.get(&[a, d]) - pp.pi_mixed.get(&[a, d])).scale(0.5))
            .collect();
        for b in 0..n {
            for c in b..n {
                let pa = &(e.get(&[b]) * pp.p_mixed.get(&[a, c]))
                    + &(e.get(&[c]) * pp.p_mixed.get(&[a, b]));
                let pia = &(w.get(&[b]) * pp.pi_mixed.get(&[a, c]))
                    + &(w.get(&[c]) * pp.pi_mixed.get(&[a, b]));
                let mut v = &pa.scale(pf) + &pia.scale(cf);
                for (d, coef) in diff.iter().enumerate() {
                    v = &v + &(coef * m_up.get(&[d, b, c]));
                }
                l.set(&[a, c, b], v.clone());
                l.set(&[a, b, c], v);
            }
        }
    }
    Ok(Deformation { m, e, w, l })
}

/// `Γ̄^a_bc = Γ^a_bc + L^a_bc`.
pub fn bar_connection(
    lc: &ConnectionSample,
    l: &DenseTensor<Jet>,
) -> Result<ConnectionSample, BiconformalError> {
    if l.variance() != [Up, Down, Down] {
        return Err(TensorError::Variance("deformation must have slots (up, down, down)".into()).into());
    }
    Ok(ConnectionSample {
        coeffs: lc.coeffs.try_add(l)?,
        torsion_free: true,
    })
}

/// Curvature of the bi-conformal connection.
pub fn bar_riemann(bc: &ConnectionSample) -> Result<DenseTensor<Jet>, BiconformalError> {
    Ok(riemann(bc)?)
}

/// `Σ_{r,q} Π^r_q R_bdr^q` for every `(b, d)`.
fn pi_trace_last_pair(r: &DenseTensor<Jet>, pi: &DenseTensor<Jet>, order: u8) -> Vec<Jet> {
    let n = r.dim();
    let mut out = Vec::with_capacity(n * n);
    for b in 0..n {
        for d in 0..n {
            let mut acc = Jet::constant(n, order, 0.0);
            for rr in 0..n {
                for q in 0..n {
                    acc = &acc + &(pi.get(&[rr, q]) * r.get(&[b, d, rr, q]));
                }
            }
            out.push(acc);
        }
    }
    out
}

/// `L^Π_bc` and `R̄^Π`.
///
/// `riemann_lc` is only read for [`LPiThirdTerm::Unbarred`].
pub fn l_pi_and_scalar(
    bar_r: &DenseTensor<Jet>,
    pp: &ProjectorPair,
    riemann_lc: Option<&DenseTensor<Jet>>,
    variant: LPiThirdTerm,
) -> Result<(DenseTensor<Jet>, Jet), BiconformalError> {
    let n = pp.dim();
    let leaf = pp.leaf_dim();
    if leaf < 2 {
        return Err(BiconformalError::LeafDimension {
            leaf_dim: leaf,
            needed: 2,
        });
    }
    let third = match variant {
        LPiThirdTerm::Barred => bar_r,
        LPiThirdTerm::Unbarred => riemann_lc.ok_or_else(|| {
            TensorError::Variance("unbarred L^Π needs the Levi-Civita curvature".into())
        })?,
    };
    let order = bar_r.order().min(third.order());
    let pi = pp.pi_mixed.truncate(order);
    let zero = Jet::constant(n, order, 0.0);
    let mut term1 = vec![zero.clone(); n * n];
    for b in 0..n {
        for c in 0..n {
            let mut acc = zero.clone();
            for d in 0..n {
                for r in 0..n {
                    acc = &acc + &(pi.get(&[d, r]) * bar_r.get(&[b, d, c, r]));
                }
            }
            term1[b * n + c] = acc;
        }
    }
    let tr_bar = pi_trace_last_pair(bar_r, &pi, order);
    let tr_third = match variant {
        LPiThirdTerm::Barred => tr_bar.clone(),
        LPiThirdTerm::Unbarred => pi_trace_last_pair(third, &pi, order),
    };
    let mut r_pi = zero.clone();
    for b in 0..n {
        for c in 0..n {
            r_pi = &r_pi + &(&term1[b * n + c] * pp.pi_up.get(&[c, b]));
        }
    }
    let inv_leaf = 1.0 / leaf as f64;
    let r_coef = 1.0 / (1.0 - leaf as f64);
    let mut l = DenseTensor::from_fn(n, vec![Down, Down], |_| zero.clone());
    for b in 0..n {
        for c in 0..n {
            let mut t2 = zero.clone();
            let mut t3 = zero.clone();
            for d in 0..n {
                t2 = &t2 + &(pi.get(&[d, c]) * &tr_bar[b * n + d]);
                t3 = &t3 + &(pi.get(&[d, b]) * &tr_third[c * n + d]);
            }
            let bracket = &(&t2 + &t3) - &tr_bar[c * n + b];
            let v = &(&term1[b * n + c] - &bracket.scale(inv_leaf)).scale(2.0)
                + &(&r_pi * pp.pi_low.get(&[b, c])).scale(r_coef);
            l.set(&[b, c], v);
        }
    }
    Ok((l, r_pi))
}

/// Full `Π`-projection of every slot of a value tensor.
pub fn project_onto_leaves(
    t: &DenseTensor<f64>,
    pi_mixed: &DenseTensor<f64>,
) -> Result<DenseTensor<f64>, TensorError> {
    let n = t.dim();
    // lower slots contract with Π^s_c, i.e. the transpose of Π^a_b
    let pi_t = DenseTensor::from_fn(n, vec![Down, Up], |i| *pi_mixed.get(&[i[1], i[0]]));
    let mut out = t.clone();
    for (slot, v) in t.variance().iter().enumerate() {
        out = match v {
            Up => out.transform_slot(slot, pi_mixed, Up)?,
            Down => out.transform_slot(slot, &pi_t, Down)?,
        };
    }
    Ok(out)
}

/// Obstruction tensors at a point (values only) with their vanishing scales.
#[derive(Debug, Clone)]
pub struct ObstructionSet {
    /// `T^||_cab^d`; present when the leaves have dimension ≥ 3.
    pub t_parallel: Option<DenseTensor<f64>>,
    /// Largest component of the `Π`-projected `2 R̄` term.
    pub t_scale: f64,
    /// `B^||_abc`; present when the leaves have dimension 3.
    pub b_parallel: Option<DenseTensor<f64>>,
    /// Largest component of the `Π`-projected `∇̄_r L^Π_sq` before
    /// antisymmetrization.
    pub b_scale: f64,
    /// `R̄^||_cab^d`.
    pub bar_r_parallel: DenseTensor<f64>,
    /// Largest component of the unprojected `R̄`.
    pub bar_r_scale: f64,
    pub l_pi: DenseTensor<Jet>,
    pub r_pi: f64,
}

/// `T_bac^d` in the `[b][a][c][d]` layout.
pub fn t_tensor(
    bar_r: &DenseTensor<f64>,
    l_pi: &DenseTensor<f64>,
    pp: &ProjectorPair,
    denominator: TraceDenominator,
) -> DenseTensor<f64> {
    let n = pp.dim();
    let p = pp.p as f64;
    let den = match denominator {
        TraceDenominator::LeafDimension => 2.0 - n as f64 + p,
        TraceDenominator::Printed => 2.0 - n as f64 - p,
    };
    let k = 2.0 / den;
    let pm = pp.pi_mixed.values();
    let pl = pp.pi_low.values();
    let pu = pp.pi_up.values();
    // X_b^d = L_bq Π^qd
    let x = DenseTensor::from_fn(n, vec![Down, Up], |i| {
        (0..n).map(|q| l_pi.get(&[i[0], q]) * pu.get(&[q, i[1]])).sum::<f64>()
    });
    DenseTensor::from_fn(n, vec![Down, Down, Down, Up], |i| {
        let (b, a, c, d) = (i[0], i[1], i[2], i[3]);
        let anti_l = 0.5 * (l_pi.get(&[a, b]) - l_pi.get(&[b, a]));
        let t1 = pm.get(&[d, c]) * anti_l;
        let t2 = 0.5 * (pm.get(&[d, b]) * l_pi.get(&[a, c]) - pm.get(&[d, a]) * l_pi.get(&[b, c]));
        let t3 = 0.5 * (pl.get(&[c, a]) * x.get(&[b, d]) - pl.get(&[c, b]) * x.get(&[a, d]));
        2.0 * bar_r.get(i) - k * (t1 + t2 + t3)
    })
}

pub fn obstruction_tensors(
    bar_r: &DenseTensor<Jet>,
    l_pi: DenseTensor<Jet>,
    r_pi: &Jet,
    pp: &ProjectorPair,
    bc: &ConnectionSample,
    variant: FormulaVariant,
) -> Result<ObstructionSet, BiconformalError> {
    let leaf = pp.leaf_dim();
    let pi = pp.pi_values();
    let bar_r_vals = bar_r.values();
    let bar_r_parallel = project_onto_leaves(&bar_r_vals, &pi)?;
    let mut set = ObstructionSet {
        t_parallel: None,
        t_scale: 2.0 * bar_r_parallel.max_abs(),
        b_parallel: None,
        b_scale: 0.0,
        bar_r_scale: bar_r_vals.max_abs(),
        bar_r_parallel,
        r_pi: r_pi.value(),
        l_pi,
    };
    if leaf >= 3 {
        let t = t_tensor(&bar_r_vals, &set.l_pi.values(), pp, variant.t_denominator);
        set.t_parallel = Some(project_onto_leaves(&t, &pi)?);
    }
    if leaf == 3 {
        let dl = covariant_derivative(&set.l_pi, bc)?; // [r][s][q] = ∇̄_r L^Π_sq
        let dl = dl.values();
        let anti = dl.antisymmetrize(&[0, 1])?;
        set.b_scale = project_onto_leaves(&dl, &pi)?.max_abs();
        set.b_parallel = Some(project_onto_leaves(&anti, &pi)?);
    }
    Ok(set)
}

/// Every intermediate of the pipeline at one point.
#[derive(Debug, Clone)]
pub struct PointPipeline {
    pub metric: MetricSample,
    pub levi_civita: ConnectionSample,
    pub projectors: ProjectorPair,
    pub deformation: Deformation,
    pub bar_connection: ConnectionSample,
    pub bar_riemann: DenseTensor<Jet>,
    /// Present when the leaves have dimension ≥ 2.
    pub obstructions: Option<ObstructionSet>,
}

impl PointPipeline {
    /// Runs the full pipeline from a metric sample (order ≥ 2; order 3 for
    /// `B^||`) and its projector pair.
    pub fn evaluate(
        metric: MetricSample,
        projectors: ProjectorPair,
        variant: FormulaVariant,
    ) -> Result<Self, BiconformalError> {
        let levi_civita = christoffel(&metric)?;
        let deformation = deformation_tensor(&projectors, &levi_civita, &metric)?;
        let bar = bar_connection(&levi_civita, &deformation.l)?;
        let bar_r = bar_riemann(&bar)?;
        let obstructions = if projectors.leaf_dim() >= 2 {
            let lc_riemann = match variant.l_pi_third_term {
                LPiThirdTerm::Unbarred => Some(riemann(&levi_civita)?),
                LPiThirdTerm::Barred => None,
            };
            let (l_pi, r_pi) =
                l_pi_and_scalar(&bar_r, &projectors, lc_riemann.as_ref(), variant.l_pi_third_term)?;
            Some(obstruction_tensors(&bar_r, l_pi, &r_pi, &projectors, &bar, variant)?)
        } else {
            None
        };
        Ok(PointPipeline {
            metric,
            levi_civita,
            projectors,
            deformation,
            bar_connection: bar,
            bar_riemann: bar_r,
            obstructions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charts::{minkowski, schwarzschild};
    use crate::geometry::{metric_at, ChartSpec};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn consts(n: usize, order: u8, v: &[f64]) -> Vec<Jet> {
        v.iter().map(|&x| Jet::constant(n, order, x)).collect()
    }

    fn dt(n: usize, order: u8) -> Vec<Jet> {
        let mut v = vec![0.0; n];
        v[0] = 1.0;
        consts(n, order, &v)
    }

    fn unit_fields(n: usize, order: u8, which: &[usize]) -> Vec<Vec<Jet>> {
        which
            .iter()
            .map(|&i| {
                let mut v = vec![0.0; n];
                v[i] = 1.0;
                consts(n, order, &v)
            })
            .collect()
    }

    fn schwarzschild_at(r: f64, th: f64) -> MetricSample {
        metric_at(&schwarzschild(1.0), &[0.0, r, th, 0.5], 3).unwrap()
    }

    #[test]
    fn minkowski_dt_projectors() {
        let m = metric_at(&minkowski(4), &[0.0; 4], 3).unwrap();
        let pp = projectors_from_oneform(&dt(4, 3), &m).unwrap();
        assert_eq!(pp.p, 1);
        for a in 0..4 {
            for b in 0..4 {
                let d = if a == b && a == 0 { 1.0 } else { 0.0 };
                assert_eq!(pp.p_mixed.get(&[a, b]).value(), d);
                let e = if a == b && a != 0 { 1.0 } else { 0.0 };
                assert_eq!(pp.pi_mixed.get(&[a, b]).value(), e);
            }
        }
        assert!(pp.invariant_residual(&m) <= 1e-15);
    }

    #[test]
    fn schwarzschild_dt_projectors() {
        let m = schwarzschild_at(4.0, PI / 3.0);
        let pp = projectors_from_oneform(&dt(4, 3), &m).unwrap();
        let g = m.g.values();
        for a in 0..4 {
            for b in 0..4 {
                let mixed = if a == 0 && b == 0 { 1.0 } else { 0.0 };
                assert_relative_eq!(pp.p_mixed.get(&[a, b]).value(), mixed, epsilon = 1e-15);
                let low = if a == 0 && b == 0 { *g.get(&[0, 0]) } else { 0.0 };
                assert_relative_eq!(pp.p_low.get(&[a, b]).value(), low, epsilon = 1e-15);
            }
        }
        assert!(pp.invariant_residual(&m) <= 1e-10);
    }

    #[test]
    fn null_oneform_is_degenerate() {
        let m = metric_at(&minkowski(4), &[0.0; 4], 3).unwrap();
        let w = consts(4, 3, &[1.0, 1.0, 0.0, 0.0]);
        assert!(matches!(
            projectors_from_oneform(&w, &m),
            Err(BiconformalError::DegenerateDistribution { .. })
        ));
    }

    #[test]
    fn span_projectors_are_basis_independent() {
        let m = metric_at(&minkowski(4), &[0.3, 0.1, 0.2, 0.4], 3).unwrap();
        let a = projectors_from_span(&unit_fields(4, 3, &[1, 2, 3]), &m).unwrap();
        let mixed = vec![
            consts(4, 3, &[0.0, 2.0, 0.0, 0.0]),
            consts(4, 3, &[0.0, 1.0, 1.0, 0.0]),
            consts(4, 3, &[0.0, 0.0, 0.0, 1.0]),
        ];
        let b = projectors_from_span(&mixed, &m).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j && i != 0 { 1.0 } else { 0.0 };
                assert_eq!(a.pi_mixed.get(&[i, j]).value(), e);
                assert_relative_eq!(b.pi_mixed.get(&[i, j]).value(), e, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn span_matches_oneform_complement() {
        let m = schwarzschild_at(5.0, 1.0);
        let a = projectors_from_oneform(&dt(4, 3), &m).unwrap();
        let b = projectors_from_span(&unit_fields(4, 3, &[1, 2, 3]), &m).unwrap();
        let pairs = [
            (&a.p_mixed, &b.p_mixed),
            (&a.pi_low, &b.pi_low),
            (&a.pi_up, &b.pi_up),
        ];
        for (x, y) in pairs {
            let d = x.values().try_sub(&y.values()).unwrap().max_abs();
            assert!(d <= 1e-12, "{d}");
        }
        assert_eq!(b.p, 1);
    }

    #[test]
    fn rank_deficient_span() {
        let m = metric_at(&minkowski(4), &[0.0; 4], 3).unwrap();
        let f = vec![
            consts(4, 3, &[0.0, 1.0, 0.0, 0.0]),
            consts(4, 3, &[0.0, 2.0, 0.0, 0.0]),
        ];
        assert_eq!(projectors_from_span(&f, &m).unwrap_err(), BiconformalError::RankDeficientSpan);
    }

    #[test]
    fn flat_constant_projectors_give_zero_everything() {
        let m = metric_at(&minkowski(5), &[0.1, 0.2, 0.3, 0.4, 0.5], 3).unwrap();
        let pp = projectors_from_oneform(&dt(5, 3), &m).unwrap();
        let pipe = PointPipeline::evaluate(m, pp, FormulaVariant::default()).unwrap();
        let d = &pipe.deformation;
        for t in [&d.m, &d.e, &d.w, &d.l] {
            assert_eq!(t.values().max_abs(), 0.0);
        }
        assert_eq!(pipe.bar_riemann.values().max_abs(), 0.0);
        let o = pipe.obstructions.unwrap();
        assert_eq!(o.l_pi.values().max_abs(), 0.0);
        assert_eq!(o.r_pi, 0.0);
        assert_eq!(o.t_parallel.unwrap().max_abs(), 0.0);
        assert_eq!(o.bar_r_parallel.max_abs(), 0.0);
        assert!(o.b_parallel.is_none());
    }

    fn schwarzschild_dt_pipeline(r: f64, th: f64) -> PointPipeline {
        let m = schwarzschild_at(r, th);
        let pp = projectors_from_oneform(&dt(4, 3), &m).unwrap();
        PointPipeline::evaluate(m, pp, FormulaVariant::default()).unwrap()
    }

    #[test]
    fn schwarzschild_deformation_is_symmetric_and_nonzero() {
        let pipe = schwarzschild_dt_pipeline(4.0, PI / 3.0);
        let l = pipe.deformation.l.values();
        assert!(l.max_abs() > 1e-3);
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    assert_eq!(l.get(&[a, b, c]), l.get(&[a, c, b]));
                }
            }
        }
        assert_eq!(pipe.bar_connection.torsion_residual(), 0.0);
        // Γ̄^t_tr differs from Γ^t_tr: the static slices are totally geodesic
        // and L removes the lapse gradient
        let g = pipe.levi_civita.gamma(0, 0, 1).value();
        let gb = pipe.bar_connection.gamma(0, 0, 1).value();
        assert!((g - gb).abs() > 1e-3, "{g} {gb}");
    }

    #[test]
    fn e_and_w_match_brute_force_loops() {
        // e^{2σ} δ with σ = 0.1 x y + 0.2 z, constant coordinate projectors
        let chart = ChartSpec::from_strings(
            &["t", "x", "y", "z"],
            &[],
            &[
                (0, 0, "-exp(0.2*x*y + 0.4*z)"),
                (1, 1, "exp(0.2*x*y + 0.4*z)"),
                (2, 2, "exp(0.2*x*y + 0.4*z)"),
                (3, 3, "exp(0.2*x*y + 0.4*z)"),
            ],
        )
        .unwrap();
        let m = metric_at(&chart, &[0.1, 0.5, -0.3, 0.7], 3).unwrap();
        let pp = projectors_from_span(&unit_fields(4, 3, &[1, 2]), &m).unwrap();
        let lc = christoffel(&m).unwrap();
        let d = deformation_tensor(&pp, &lc, &m).unwrap();
        let mv = d.m.values();
        let pu = pp.p_up.values();
        let piu = pp.pi_up.values();
        for a in 0..4 {
            let mut e = 0.0;
            let mut w = 0.0;
            for c in 0..4 {
                for b in 0..4 {
                    e += mv.get(&[a, c, b]) * pu.get(&[c, b]);
                    w -= mv.get(&[a, c, b]) * piu.get(&[c, b]);
                }
            }
            assert_relative_eq!(d.e.get(&[a]).value(), e, epsilon = 1e-14);
            assert_relative_eq!(d.w.get(&[a]).value(), w, epsilon = 1e-14);
        }
        assert!(mv.max_abs() > 1e-3);
    }

    #[test]
    fn zero_deformation_keeps_connection() {
        let m = schwarzschild_at(6.0, 0.4);
        let lc = christoffel(&m).unwrap();
        let zero = lc.coeffs.map(|j| j.scale(0.0));
        let bc = bar_connection(&lc, &zero).unwrap();
        assert_eq!(bc.coeffs.values(), lc.coeffs.values());
    }

    #[test]
    fn bar_riemann_trace() {
        // level sets of r·t: R̄_abc^c is nonzero
        let chart = schwarzschild(1.0);
        let p = [0.5, 5.0, 1.0, 0.3];
        let m = metric_at(&chart, &p, 3).unwrap();
        let ctx = chart.context(&p);
        let w: Vec<Jet> = ["r", "t", "0", "0"]
            .iter()
            .map(|s| {
                let e = crate::expr::parse_expression(s, chart.coords(), &[]).unwrap();
                crate::expr::eval_jet(&e, &ctx, 3).unwrap()
            })
            .collect();
        let pp = projectors_from_oneform(&w, &m).unwrap();
        let pipe = PointPipeline::evaluate(m, pp, FormulaVariant::default()).unwrap();
        let r = pipe.bar_riemann.values();
        let tr = r.contract(2, 3).unwrap();
        assert!(tr.max_abs() > 1e-6 * r.max_abs(), "{}", tr.max_abs());
        // static slices: E and W are gradients and the trace vanishes
        let r = schwarzschild_dt_pipeline(4.0, 1.0).bar_riemann.values();
        assert!(r.contract(2, 3).unwrap().max_abs() <= 1e-14 * r.max_abs());
    }

    #[test]
    fn schwarzschild_static_slices_have_vanishing_b() {
        for (r, th) in [(3.0, PI / 4.0), (5.0, PI / 3.0), (10.0, 1.0)] {
            let o = schwarzschild_dt_pipeline(r, th).obstructions.unwrap();
            let b = o.b_parallel.unwrap();
            assert!(b.max_abs() <= 1e-9 * o.b_scale, "{} {}", b.max_abs(), o.b_scale);
            assert!(o.bar_r_parallel.max_abs() > 1e-3 * o.bar_r_scale);
        }
    }

    #[test]
    fn projection_is_idempotent_and_b_antisymmetric() {
        let o = schwarzschild_dt_pipeline(7.0, 0.9).obstructions.unwrap();
        let pipe = schwarzschild_dt_pipeline(7.0, 0.9);
        let pi = pipe.projectors.pi_values();
        let again = project_onto_leaves(&o.bar_r_parallel, &pi).unwrap();
        assert!(again.try_sub(&o.bar_r_parallel).unwrap().max_abs() <= 1e-12);
        let b = o.b_parallel.unwrap();
        for a in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    assert!((b.get(&[a, c, d]) + b.get(&[c, a, d])).abs() <= 1e-15);
                }
            }
        }
        let r = pipe.bar_riemann.values();
        for idx in crate::tensor::multi_indices(4, 4) {
            let sw = [idx[1], idx[0], idx[2], idx[3]];
            assert!((r.get(&idx) + r.get(&sw)).abs() <= 1e-10);
        }
    }

    #[test]
    fn trivial_distributions_are_rejected() {
        let m = metric_at(&minkowski(3), &[0.0; 3], 3).unwrap();
        let f = unit_fields(3, 3, &[0, 1, 2]);
        assert!(matches!(
            projectors_from_span(&f, &m),
            Err(BiconformalError::FieldCount { got: 3, .. })
        ));
    }

    #[test]
    fn leaf_dimension_one_has_no_obstructions() {
        let m = metric_at(&minkowski(2), &[0.0; 2], 3).unwrap();
        let pp = projectors_from_oneform(&dt(2, 3), &m).unwrap();
        let pipe = PointPipeline::evaluate(m, pp, FormulaVariant::default()).unwrap();
        assert!(pipe.obstructions.is_none());
    }
}
