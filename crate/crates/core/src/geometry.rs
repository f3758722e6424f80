//! Pseudo-Riemannian kernels evaluated at a point over jets.
//!
//! Curvature convention: for a torsion-free connection
//!
//! ```text
//! ∇_a ∇_b X^c − ∇_b ∇_a X^c = R_bad^c X^d,      R_ac = R_abc^b
//! ```
//!
//! The Riemann tensor is stored with slots `[b][a][d][c]` (down, down, down,
//! up) so that the component formula reads
//!
//! ```text
//! R_bad^c = ∂_a Γ^c_bd − ∂_b Γ^c_ad + Γ^c_ae Γ^e_bd − Γ^c_be Γ^e_ad
//! ```
//!
//! where `∇_b X^c = ∂_b X^c + Γ^c_bd X^d`. The commutator identity is
//! checked numerically in the tests rather than trusted from transcription.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::expr::{eval_jet, parse_expression, EvalContext, ExprAst, ExprError};
use crate::jets::{Jet, JetError};
use crate::tensor::{multi_indices, DenseTensor, TensorError, Variance};

use Variance::{Down, Up};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error("point has {got} coordinates, chart has {expected}")]
    PointDimension { expected: usize, got: usize },
    #[error("metric is singular at the point (|det| = {det:e}, threshold {threshold:e})")]
    SingularMetric { det: f64, threshold: f64 },
    #[error("dimension {0} is too small for this operation")]
    DimensionTooSmall(usize),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Jet(#[from] JetError),
}

/// A coordinate chart with a metric given as component expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartSpec {
    coords: Vec<String>,
    params: BTreeMap<String, f64>,
    metric: Vec<ExprAst>,
}

impl ChartSpec {
    /// `metric` holds all `n*n` entries in row-major order and must be
    /// symmetric.
    pub fn new(
        coords: Vec<String>,
        params: BTreeMap<String, f64>,
        metric: Vec<ExprAst>,
    ) -> Result<Self, GeometryError> {
        let n = coords.len();
        if n < 2 {
            return Err(GeometryError::InvalidChart(format!(
                "need at least 2 coordinates, got {n}"
            )));
        }
        if metric.len() != n * n {
            return Err(GeometryError::InvalidChart(format!(
                "metric has {} entries, expected {}",
                metric.len(),
                n * n
            )));
        }
        for (i, c) in coords.iter().enumerate() {
            if coords[..i].contains(c) {
                return Err(GeometryError::InvalidChart(format!("duplicate coordinate `{c}`")));
            }
            if params.contains_key(c) {
                return Err(GeometryError::InvalidChart(format!(
                    "`{c}` is both a coordinate and a parameter"
                )));
            }
        }
        for i in 0..n {
            for j in 0..n {
                let e = &metric[i * n + j];
                if *e != metric[j * n + i] {
                    return Err(GeometryError::InvalidChart(format!(
                        "metric entries [{i}][{j}] and [{j}][{i}] differ"
                    )));
                }
                if e.max_coord().is_some_and(|k| k >= n) {
                    return Err(GeometryError::InvalidChart(format!(
                        "metric entry [{i}][{j}] references a coordinate out of range"
                    )));
                }
                let mut used = Vec::new();
                e.params(&mut used);
                if let Some(p) = used.iter().find(|p| !params.contains_key(*p)) {
                    return Err(GeometryError::InvalidChart(format!(
                        "parameter `{p}` in entry [{i}][{j}] is not bound"
                    )));
                }
            }
        }
        Ok(ChartSpec {
            coords,
            params,
            metric,
        })
    }

    /// Convenience builder from expression strings. `entries` lists the
    /// upper triangle `(i, j, expr)`; omitted entries are zero.
    pub fn from_strings(
        coords: &[&str],
        params: &[(&str, f64)],
        entries: &[(usize, usize, &str)],
    ) -> Result<Self, GeometryError> {
        let coords: Vec<String> = coords.iter().map(|s| s.to_string()).collect();
        let params: BTreeMap<String, f64> =
            params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let names: Vec<String> = params.keys().cloned().collect();
        let n = coords.len();
        let mut metric = vec![ExprAst::Const(0.0); n * n];
        for &(i, j, text) in entries {
            if i >= n || j >= n {
                return Err(GeometryError::InvalidChart(format!(
                    "metric index [{i}][{j}] out of range"
                )));
            }
            let e = parse_expression(text, &coords, &names)?;
            metric[i * n + j] = e.clone();
            metric[j * n + i] = e;
        }
        ChartSpec::new(coords, params, metric)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn metric_expr(&self, i: usize, j: usize) -> &ExprAst {
        &self.metric[i * self.dim() + j]
    }

    pub fn context<'a>(&'a self, point: &'a [f64]) -> EvalContext<'a> {
        EvalContext {
            point,
            params: &self.params,
        }
    }

    pub fn check_point(&self, point: &[f64]) -> Result<(), GeometryError> {
        if point.len() != self.dim() {
            return Err(GeometryError::PointDimension {
                expected: self.dim(),
                got: point.len(),
            });
        }
        Ok(())
    }

    /// Evaluates a list of expressions (a covector or vector field) to jets.
    pub fn eval_components(
        &self,
        exprs: &[ExprAst],
        point: &[f64],
        order: u8,
    ) -> Result<Vec<Jet>, GeometryError> {
        self.check_point(point)?;
        let ctx = self.context(point);
        exprs
            .iter()
            .map(|e| eval_jet(e, &ctx, order).map_err(GeometryError::from))
            .collect()
    }
}

/// Metric and inverse metric jets at a point.
#[derive(Debug, Clone)]
pub struct MetricSample {
    pub g: DenseTensor<Jet>,
    pub g_inv: DenseTensor<Jet>,
}

impl MetricSample {
    pub fn dim(&self) -> usize {
        self.g.dim()
    }
}

/// Connection coefficients `Γ^a_bc` at a point, slots (up, down, down).
#[derive(Debug, Clone)]
pub struct ConnectionSample {
    pub coeffs: DenseTensor<Jet>,
    pub torsion_free: bool,
}

impl ConnectionSample {
    pub fn dim(&self) -> usize {
        self.coeffs.dim()
    }

    pub fn gamma(&self, a: usize, b: usize, c: usize) -> &Jet {
        self.coeffs.get(&[a, b, c])
    }

    /// Largest `|Γ^a_bc − Γ^a_cb|` over the value parts.
    pub fn torsion_residual(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let d = self.gamma(a, b, c).value() - self.gamma(a, c, b).value();
                    worst = worst.max(d.abs());
                }
            }
        }
        worst
    }
}

/// Inverse of an `m × m` matrix of jets.
///
/// The value part is inverted with LU; derivative data follows from the
/// Neumann series `(A0 + D)^-1 = Σ_k (−A0^-1 D)^k A0^-1`, which terminates
/// after `order` terms because `D` has no constant part.
pub fn jet_matrix_inverse(a: &[Jet], m: usize) -> Result<Vec<Jet>, GeometryError> {
    assert_eq!(a.len(), m * m);
    let n = a[0].n();
    let order = a.iter().map(Jet::order).min().unwrap_or(0);
    let a0 = DMatrix::from_fn(m, m, |i, j| a[i * m + j].value());
    let max_entry = a0.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let threshold = 1e-12 * max_entry.powi(m as i32);
    let lu = a0.clone().lu();
    let det = lu.determinant();
    if !(det.abs() >= threshold) || det == 0.0 {
        return Err(GeometryError::SingularMetric { det, threshold });
    }
    let inv0 = lu.try_inverse().ok_or(GeometryError::SingularMetric { det, threshold })?;
    let base: Vec<Jet> = (0..m * m)
        .map(|k| Jet::constant(n, order, inv0[(k / m, k % m)]))
        .collect();
    if order == 0 {
        return Ok(base);
    }
    let delta: Vec<Jet> = a.iter().map(|x| x.add_scalar(-x.value()).truncate(order)).collect();
    let matmul = |x: &[Jet], y: &[Jet]| -> Vec<Jet> {
        let mut out = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                let mut acc = Jet::constant(n, order, 0.0);
                for k in 0..m {
                    acc = &acc + &(&x[i * m + k] * &y[k * m + j]);
                }
                out.push(acc);
            }
        }
        out
    };
    let step: Vec<Jet> = matmul(&base, &delta).into_iter().map(|j| -j).collect();
    let mut term = base.clone();
    let mut sum = base;
    for _ in 0..order {
        term = matmul(&step, &term);
        sum = sum.iter().zip(&term).map(|(s, t)| s + t).collect();
    }
    // the series is symmetric for symmetric input; keep it exactly so
    let symmetric = (0..m).all(|i| (0..m).all(|j| a[i * m + j] == a[j * m + i]));
    if symmetric {
        for i in 0..m {
            for j in i + 1..m {
                sum[j * m + i] = sum[i * m + j].clone();
            }
        }
    }
    Ok(sum)
}

/// `g_ab` and `g^ab` as jets of the given order at `point`.
pub fn metric_at(chart: &ChartSpec, point: &[f64], order: u8) -> Result<MetricSample, GeometryError> {
    chart.check_point(point)?;
    let n = chart.dim();
    let ctx = chart.context(point);
    let mut g = vec![Jet::constant(n, order, 0.0); n * n];
    for i in 0..n {
        for j in i..n {
            let v = eval_jet(chart.metric_expr(i, j), &ctx, order)?;
            g[j * n + i] = v.clone();
            g[i * n + j] = v;
        }
    }
    let inv = jet_matrix_inverse(&g, n)?;
    Ok(MetricSample {
        g: DenseTensor::new(n, vec![Down, Down], g)?,
        g_inv: DenseTensor::new(n, vec![Up, Up], inv)?,
    })
}

/// Levi-Civita coefficients `Γ^a_bc = ½ g^ad (∂_b g_dc + ∂_c g_db − ∂_d g_bc)`.
pub fn christoffel(metric: &MetricSample) -> Result<ConnectionSample, GeometryError> {
    let n = metric.dim();
    let dg = metric.g.coordinate_gradient()?;
    let order = dg.order();
    let g_inv = metric.g_inv.truncate(order);
    let mut coeffs = DenseTensor::from_fn(n, vec![Up, Down, Down], |_| Jet::constant(n, order, 0.0));
    for b in 0..n {
        for c in b..n {
            // lowered Γ_dbc first, then raise
            let lowered: Vec<Jet> = (0..n)
                .map(|d| &(dg.get(&[b, d, c]) + dg.get(&[c, d, b])) - dg.get(&[d, b, c]))
                .collect();
            for a in 0..n {
                let mut acc = Jet::constant(n, order, 0.0);
                for (d, low) in lowered.iter().enumerate() {
                    acc = &acc + &(g_inv.get(&[a, d]) * low);
                }
                let v = acc.scale(0.5);
                coeffs.set(&[a, c, b], v.clone());
                coeffs.set(&[a, b, c], v);
            }
        }
    }
    Ok(ConnectionSample {
        coeffs,
        torsion_free: true,
    })
}

/// Curvature `R_bad^c` of a torsion-free connection, slots `[b][a][d][c]`.
/// Exactly antisymmetric in the first two slots.
pub fn riemann(conn: &ConnectionSample) -> Result<DenseTensor<Jet>, GeometryError> {
    let n = conn.dim();
    let dgam = conn.coeffs.coordinate_gradient()?; // [a][c][b][d] = ∂_a Γ^c_bd
    let order = dgam.order();
    let gam = conn.coeffs.truncate(order);
    let zero = Jet::constant(n, order, 0.0);
    let mut out = DenseTensor::from_fn(n, vec![Down, Down, Down, Up], |_| zero.clone());
    for b in 0..n {
        for a in (b + 1)..n {
            for d in 0..n {
                for c in 0..n {
                    let mut acc = dgam.get(&[a, c, b, d]) - dgam.get(&[b, c, a, d]);
                    for e in 0..n {
                        acc = &acc + &(gam.get(&[c, a, e]) * gam.get(&[e, b, d]));
                        acc = &acc - &(gam.get(&[c, b, e]) * gam.get(&[e, a, d]));
                    }
                    out.set(&[a, b, d, c], -&acc);
                    out.set(&[b, a, d, c], acc);
                }
            }
        }
    }
    Ok(out)
}

/// `R_ac = R_abc^b`.
pub fn ricci(riemann: &DenseTensor<Jet>) -> Result<DenseTensor<Jet>, GeometryError> {
    if riemann.rank() != 4 {
        return Err(TensorError::Variance("Ricci needs a rank-4 curvature tensor".into()).into());
    }
    Ok(riemann.contract(1, 3)?)
}

/// `R = g^ac R_ac`.
pub fn scalar_curv(ricci: &DenseTensor<Jet>, g_inv: &DenseTensor<Jet>) -> Result<Jet, GeometryError> {
    if ricci.rank() != 2 || g_inv.rank() != 2 || ricci.dim() != g_inv.dim() {
        return Err(TensorError::NotAMetric.into());
    }
    let n = ricci.dim();
    let order = ricci.order().min(g_inv.order());
    let mut acc = Jet::constant(n, order, 0.0);
    for a in 0..n {
        for c in 0..n {
            acc = &acc + &(g_inv.get(&[a, c]) * ricci.get(&[a, c]));
        }
    }
    Ok(acc)
}

/// `∇_e T`, new leading lower slot.
pub fn covariant_derivative(
    t: &DenseTensor<Jet>,
    conn: &ConnectionSample,
) -> Result<DenseTensor<Jet>, GeometryError> {
    let n = t.dim();
    if conn.dim() != n {
        return Err(TensorError::Dimension(n, conn.dim()).into());
    }
    let grad = t.coordinate_gradient()?;
    let order = grad.order();
    let gam = conn.coeffs.truncate(order);
    let variance = t.variance().to_vec();
    let rank = variance.len();
    let mut out = grad;
    let mut src = vec![0; rank];
    for idx in multi_indices(n, rank + 1) {
        let e = idx[0];
        let tidx = &idx[1..];
        let mut acc = out.get(&idx).clone();
        for (s, v) in variance.iter().enumerate() {
            src.copy_from_slice(tidx);
            for f in 0..n {
                src[s] = f;
                let comp = t.get(&src);
                match v {
                    Up => acc = &acc + &(gam.get(&[tidx[s], e, f]) * comp),
                    Down => acc = &acc - &(gam.get(&[f, e, tidx[s]]) * comp),
                }
            }
        }
        out.set(&idx, acc.truncate(order));
    }
    Ok(out)
}

/// Lowers the last (upper) slot of a curvature tensor: `R_bacd = R_bac^e g_ed`.
pub fn lower_last(riemann: &DenseTensor<Jet>, g: &DenseTensor<Jet>) -> Result<DenseTensor<Jet>, GeometryError> {
    Ok(riemann.lower_slot(riemann.rank() - 1, g)?)
}

/// Schouten tensor `S = (Ric − R g / (2(n−1))) / (n−2)`.
pub fn schouten(
    ricci: &DenseTensor<Jet>,
    scalar: &Jet,
    g: &DenseTensor<Jet>,
) -> Result<DenseTensor<Jet>, GeometryError> {
    let n = g.dim();
    if n < 3 {
        return Err(GeometryError::DimensionTooSmall(n));
    }
    let nf = n as f64;
    let rg = g.map(|gij| gij * scalar).scale(1.0 / (2.0 * (nf - 1.0)));
    Ok(ricci.try_sub(&rg)?.scale(1.0 / (nf - 2.0)))
}

/// Weyl tensor `W_bac^d` (same slot layout as the Riemann tensor).
///
/// With the lowered curvature `R_bacd` and Schouten tensor `S`,
/// `W_bacd = R_bacd − (S_bc g_ad + S_ad g_bc − S_bd g_ac − S_ac g_bd)`,
/// which is trace-free in every pair of slots.
pub fn weyl(
    riemann_lc: &DenseTensor<Jet>,
    ricci: &DenseTensor<Jet>,
    scalar: &Jet,
    g: &DenseTensor<Jet>,
    g_inv: &DenseTensor<Jet>,
) -> Result<DenseTensor<Jet>, GeometryError> {
    let n = g.dim();
    if n < 3 {
        return Err(GeometryError::DimensionTooSmall(n));
    }
    let s = schouten(ricci, scalar, g)?;
    let low = lower_last(riemann_lc, g)?;
    let order = low.order().min(s.order());
    let g = g.truncate(order);
    let mut w = low.truncate(order);
    for idx in multi_indices(n, 4) {
        let (b, a, c, d) = (idx[0], idx[1], idx[2], idx[3]);
        let kn = &(&(s.get(&[b, c]) * g.get(&[a, d])) + &(s.get(&[a, d]) * g.get(&[b, c])))
            - &(&(s.get(&[b, d]) * g.get(&[a, c])) + &(s.get(&[a, c]) * g.get(&[b, d])));
        let v = w.get(&idx) - &kn.truncate(order);
        w.set(&idx, v);
    }
    Ok(w.raise_slot(3, &g_inv.truncate(order))?)
}

/// Schouten tensor and Cotton tensor `C_abc = ∇_[a S_b]c` of a Levi-Civita
/// connection.
pub fn cotton_schouten(
    ricci: &DenseTensor<Jet>,
    scalar: &Jet,
    g: &DenseTensor<Jet>,
    conn: &ConnectionSample,
) -> Result<(DenseTensor<Jet>, DenseTensor<Jet>), GeometryError> {
    let s = schouten(ricci, scalar, g)?;
    let ds = covariant_derivative(&s, conn)?;
    let c = ds.antisymmetrize(&[0, 1])?;
    Ok((s, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn schwarzschild() -> ChartSpec {
        ChartSpec::from_strings(
            &["t", "r", "th", "ph"],
            &[("M", 1.0)],
            &[
                (0, 0, "-(1 - 2*M/r)"),
                (1, 1, "1/(1 - 2*M/r)"),
                (2, 2, "r^2"),
                (3, 3, "r^2*sin(th)^2"),
            ],
        )
        .unwrap()
    }

    fn sphere() -> ChartSpec {
        ChartSpec::from_strings(&["th", "ph"], &[], &[(0, 0, "1"), (1, 1, "sin(th)^2")]).unwrap()
    }

    fn minkowski() -> ChartSpec {
        ChartSpec::from_strings(
            &["t", "x", "y", "z"],
            &[],
            &[(0, 0, "-1"), (1, 1, "1"), (2, 2, "1"), (3, 3, "1")],
        )
        .unwrap()
    }

    #[test]
    fn minkowski_inverse_is_constant() {
        let m = metric_at(&minkowski(), &[0.3, 1.0, -2.0, 0.5], 3).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let want = if a != b { 0.0 } else if a == 0 { -1.0 } else { 1.0 };
                let j = m.g_inv.get(&[a, b]);
                assert_eq!(j.value(), want);
                assert_eq!(j.max_abs_partial(), 0.0);
            }
        }
        let conn = christoffel(&m).unwrap();
        assert_eq!(conn.coeffs.max_abs(), 0.0);
        let riem = riemann(&conn).unwrap();
        assert_eq!(riem.max_abs(), 0.0);
    }

    #[test]
    fn schwarzschild_inverse_and_its_gradient() {
        let chart = schwarzschild();
        let p = [0.0, 4.0, 1.0, 0.0];
        let m = metric_at(&chart, &p, 3).unwrap();
        assert_relative_eq!(m.g.get(&[0, 0]).value(), -0.5, max_relative = 1e-15);
        assert_relative_eq!(m.g_inv.get(&[0, 0]).value(), -2.0, max_relative = 1e-15);
        // finite differences on g^tt = 1 / g_tt
        let gtt_inv = |r: f64| 1.0 / (-(1.0 - 2.0 / r));
        let h = 1e-4;
        let fd = (gtt_inv(4.0 + h) - gtt_inv(4.0 - h)) / (2.0 * h);
        assert_relative_eq!(m.g_inv.get(&[0, 0]).d1(1), fd, max_relative = 1e-7);
        assert_relative_eq!(m.g_inv.get(&[0, 0]).d1(1), 0.5, max_relative = 1e-13);
        // (1 − 2M/r)^(−1) = g_rr has the negative slope
        assert_relative_eq!(m.g.get(&[1, 1]).d1(1), -0.5, max_relative = 1e-13);
        // gradient of g_tt along r
        let dg = m.g.coordinate_gradient().unwrap();
        assert_relative_eq!(dg.get(&[1, 0, 0]).value(), -0.125, max_relative = 1e-14);
    }

    #[test]
    fn singular_metric_is_rejected() {
        let chart = ChartSpec::from_strings(&["x", "y"], &[], &[(0, 0, "1"), (0, 1, "1"), (1, 1, "1")])
            .unwrap();
        assert!(matches!(
            metric_at(&chart, &[0.0, 0.0], 1),
            Err(GeometryError::SingularMetric { .. })
        ));
    }

    #[test]
    fn christoffel_examples() {
        let chart = schwarzschild();
        let m = metric_at(&chart, &[0.0, 4.0, 1.0, 0.0], 2).unwrap();
        let conn = christoffel(&m).unwrap();
        assert_relative_eq!(conn.gamma(1, 0, 0).value(), 1.0 / 32.0, max_relative = 1e-14);
        assert_eq!(conn.torsion_residual(), 0.0);

        let th = std::f64::consts::FRAC_PI_3;
        let m = metric_at(&sphere(), &[th, 0.2], 2).unwrap();
        let conn = christoffel(&m).unwrap();
        assert_relative_eq!(conn.gamma(0, 1, 1).value(), -(3f64).sqrt() / 4.0, max_relative = 1e-14);
        // finite-difference oracle: Γ^θ_φφ = -½ ∂_θ g_φφ
        let gpp = |t: f64| t.sin().powi(2);
        let h = 1e-5;
        let fd = -0.5 * (gpp(th + h) - gpp(th - h)) / (2.0 * h);
        assert_relative_eq!(conn.gamma(0, 1, 1).value(), fd, max_relative = 1e-9);
    }

    #[test]
    fn schwarzschild_is_ricci_flat() {
        let chart = schwarzschild();
        for p in [[0.0, 3.0, 0.7, 0.0], [1.0, 5.0, 1.3, 2.0], [0.0, 10.0, 2.5, -1.0]] {
            let m = metric_at(&chart, &p, 2).unwrap();
            let riem = riemann(&christoffel(&m).unwrap()).unwrap();
            assert!(riem.max_abs() > 1e-3);
            let ric = ricci(&riem).unwrap();
            assert!(ric.max_abs() <= 1e-9, "{}", ric.max_abs());
        }
    }

    #[test]
    fn unit_sphere_scalar_curvature() {
        let m = metric_at(&sphere(), &[0.9, 0.1], 2).unwrap();
        let riem = riemann(&christoffel(&m).unwrap()).unwrap();
        let ric = ricci(&riem).unwrap();
        let r = scalar_curv(&ric, &m.g_inv).unwrap();
        assert_relative_eq!(r.value(), 2.0, max_relative = 1e-13);
    }

    #[test]
    fn weyl_needs_three_dimensions() {
        let m = metric_at(&sphere(), &[0.9, 0.1], 2).unwrap();
        let conn = christoffel(&m).unwrap();
        let riem = riemann(&conn).unwrap();
        let ric = ricci(&riem).unwrap();
        let r = scalar_curv(&ric, &m.g_inv).unwrap();
        assert!(matches!(
            weyl(&riem, &ric, &r, &m.g, &m.g_inv),
            Err(GeometryError::DimensionTooSmall(2))
        ));
    }

    #[test]
    fn metricity_of_levi_civita() {
        let m = metric_at(&schwarzschild(), &[0.0, 4.0, 1.0, 0.0], 2).unwrap();
        let conn = christoffel(&m).unwrap();
        let dg = covariant_derivative(&m.g, &conn).unwrap();
        assert!(dg.max_abs() <= 1e-12);
    }

    #[test]
    fn covariant_derivative_of_scalar_is_gradient() {
        let p = [0.0, 4.0, 1.0, 0.0];
        let m = metric_at(&schwarzschild(), &p, 2).unwrap();
        let conn = christoffel(&m).unwrap();
        let r = Jet::seed(1, &p, 2).unwrap();
        let f = DenseTensor::scalar(4, &(&r * &r) * &r);
        let df = covariant_derivative(&f, &conn).unwrap();
        let grad = f.coordinate_gradient().unwrap();
        assert_eq!(df.values(), grad.values());
        assert_eq!(df.get(&[1]).value(), 48.0);
    }

    #[test]
    fn invalid_charts() {
        assert!(ChartSpec::from_strings(&["x"], &[], &[(0, 0, "1")]).is_err());
        assert!(ChartSpec::from_strings(&["x", "x"], &[], &[(0, 0, "1")]).is_err());
        assert!(ChartSpec::from_strings(&["x", "y"], &[], &[(0, 2, "1")]).is_err());
        assert!(ChartSpec::from_strings(&["x", "M"], &[("M", 1.0)], &[(0, 0, "1")]).is_err());
    }
}
