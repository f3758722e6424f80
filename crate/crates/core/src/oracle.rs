//! Independent checks on coordinate-slice foliations `x^k = const`.
//!
//! The leaf metric is the sub-matrix `g_ij`, `i, j ≠ k`, with `x^k` fixed.
//! Its curvature is computed on a fresh chart through [`crate::geometry`],
//! so nothing from the bi-conformal pipeline is shared beyond the
//! jet/tensor substrate. For such foliations
//!
//! * `T^||` equals twice the induced Weyl tensor (same slot layout),
//! * `L^Π` restricted to the leaf equals `2 Ric + R g / (1 − n)`,
//! * `B^||` equals `∇_[a L^Π_b]c` built from that intrinsic `L^Π`.

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{evaluate_pipeline, AnalysisError, DistributionSpec};
use crate::biconformal::{FormulaVariant, PointPipeline, PIPELINE_ORDER};
use crate::expr::ExprAst;
use crate::geometry::{
    christoffel, covariant_derivative, metric_at, ricci, riemann, scalar_curv, weyl, ChartSpec,
    GeometryError, MetricSample,
};
use crate::jets::Jet;
use crate::tensor::{multi_indices, DenseTensor, Variance};

/// Slot map of the `T^||` ↔ Weyl identity: component `idx` of `T^||`
/// pairs with `2 W[idx[m0]][idx[m1]][idx[m2]][idx[m3]]`.
pub const T_WEYL_SLOT_MAP: [usize; 4] = [0, 1, 2, 3];

/// Floor of the normalization in relative deviations.
pub const DEVIATION_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("slice index {k} out of range for dimension {n}")]
    SliceIndex { k: usize, n: usize },
    #[error("leaf dimension {got} not supported here (needs {needed})")]
    LeafDimension { got: usize, needed: &'static str },
    #[error("pipeline skipped point {point:?}: {reason}")]
    Skipped { point: Vec<f64>, reason: String },
    #[error("pipeline produced no obstruction tensor at {0:?}")]
    Missing(Vec<f64>),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Chart of the leaf `x^k = c`.
pub fn induced_chart(chart: &ChartSpec, k: usize, c: f64) -> Result<ChartSpec, OracleError> {
    let n = chart.dim();
    if k >= n {
        return Err(OracleError::SliceIndex { k, n });
    }
    let coords: Vec<String> = chart
        .coords()
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != k)
        .map(|(_, s)| s.clone())
        .collect();
    let keep: Vec<usize> = (0..n).filter(|&i| i != k).collect();
    let mut metric = Vec::with_capacity((n - 1) * (n - 1));
    for &i in &keep {
        for &j in &keep {
            metric.push(chart.metric_expr(i, j).substitute_coordinate(k, c));
        }
    }
    Ok(ChartSpec::new(coords, chart.params().clone(), metric)?)
}

/// `Span{∂_i : i ≠ k}`.
pub fn slice_distribution(n: usize, k: usize) -> DistributionSpec {
    DistributionSpec::Span(
        (0..n)
            .filter(|&i| i != k)
            .map(|i| {
                (0..n)
                    .map(|a| ExprAst::Const(if a == i { 1.0 } else { 0.0 }))
                    .collect()
            })
            .collect(),
    )
}

/// Maximum relative deviation between pipeline and oracle values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub deviation: f64,
    pub max_abs_difference: f64,
    pub max_pipeline: f64,
    pub max_oracle: f64,
    /// Worst component, in full-chart indices.
    pub worst_index: Vec<usize>,
    pub worst_point: Vec<f64>,
    pub pipeline_value: f64,
    pub oracle_value: f64,
    pub points: usize,
}

impl Comparison {
    fn empty() -> Self {
        Comparison {
            deviation: 0.0,
            max_abs_difference: 0.0,
            max_pipeline: 0.0,
            max_oracle: 0.0,
            worst_index: vec![],
            worst_point: vec![],
            pipeline_value: 0.0,
            oracle_value: 0.0,
            points: 0,
        }
    }

    fn finish(mut self) -> Self {
        self.deviation =
            self.max_abs_difference / self.max_pipeline.max(self.max_oracle).max(DEVIATION_FLOOR);
        self
    }

    /// Accumulates one point. `oracle` is indexed by leaf indices; each
    /// full-chart component of `pipeline` is compared with it, and
    /// components carrying `k` in an upper slot are compared with zero.
    /// Lower slots equal to `k` are not part of the leaf tensor and are
    /// skipped.
    fn absorb(
        &mut self,
        pipeline: &DenseTensor<f64>,
        oracle: impl Fn(&[usize]) -> f64,
        k: usize,
        point: &[f64],
    ) {
        self.points += 1;
        let var = pipeline.variance().to_vec();
        let mut leaf = vec![0; var.len()];
        'outer: for idx in multi_indices(pipeline.dim(), pipeline.rank()) {
            let mut on_k_up = false;
            for (s, &i) in idx.iter().enumerate() {
                if i == k {
                    match var[s] {
                        Variance::Down => continue 'outer,
                        Variance::Up => on_k_up = true,
                    }
                }
                leaf[s] = if i > k { i - 1 } else { i };
            }
            let a = *pipeline.get(&idx);
            let b = if on_k_up { 0.0 } else { oracle(&leaf) };
            self.max_pipeline = self.max_pipeline.max(a.abs());
            self.max_oracle = self.max_oracle.max(b.abs());
            let d = (a - b).abs();
            if d > self.max_abs_difference || self.worst_index.is_empty() {
                self.max_abs_difference = self.max_abs_difference.max(d);
                self.worst_index = idx.clone();
                self.worst_point = point.to_vec();
                self.pipeline_value = a;
                self.oracle_value = b;
            }
        }
    }
}

/// Curvature of the leaf through `point`.
struct LeafGeometry {
    metric: MetricSample,
    riemann: DenseTensor<Jet>,
    ricci: DenseTensor<Jet>,
    scalar: Jet,
    conn: crate::geometry::ConnectionSample,
}

fn leaf_geometry(chart: &ChartSpec, k: usize, point: &[f64]) -> Result<LeafGeometry, OracleError> {
    let leaf = induced_chart(chart, k, point[k])?;
    let leaf_point: Vec<f64> = point
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != k)
        .map(|(_, v)| *v)
        .collect();
    let metric = metric_at(&leaf, &leaf_point, PIPELINE_ORDER)?;
    let conn = christoffel(&metric)?;
    let riemann = riemann(&conn)?;
    let ricci = ricci(&riemann)?;
    let scalar = scalar_curv(&ricci, &metric.g_inv)?;
    Ok(LeafGeometry {
        metric,
        riemann,
        ricci,
        scalar,
        conn,
    })
}

fn pipeline_at(
    chart: &ChartSpec,
    k: usize,
    point: &[f64],
    variant: FormulaVariant,
) -> Result<PointPipeline, OracleError> {
    let spec = slice_distribution(chart.dim(), k);
    match evaluate_pipeline(chart, &spec, point, variant)? {
        Ok(p) => Ok(p),
        Err(reason) => Err(OracleError::Skipped {
            point: point.to_vec(),
            reason: reason.describe(),
        }),
    }
}

fn check_slice(chart: &ChartSpec, k: usize) -> Result<usize, OracleError> {
    let n = chart.dim();
    if k >= n {
        return Err(OracleError::SliceIndex { k, n });
    }
    Ok(n - 1)
}

/// Intrinsic `L = 2 Ric + R g / (1 − n)` of the leaf.
fn intrinsic_l(leaf: &LeafGeometry) -> Result<DenseTensor<Jet>, OracleError> {
    let n = leaf.metric.dim() as f64;
    let order = leaf.ricci.order().min(leaf.scalar.order());
    let rg = leaf
        .metric
        .g
        .truncate(order)
        .map(|g| g * &leaf.scalar)
        .scale(1.0 / (1.0 - n));
    Ok(leaf
        .ricci
        .scale(2.0)
        .try_add(&rg)
        .map_err(GeometryError::from)?)
}

/// `T^||` against `2 W` of the induced metric under `slot_map`.
pub fn compare_t_with_map(
    chart: &ChartSpec,
    k: usize,
    points: &[Vec<f64>],
    slot_map: [usize; 4],
    variant: FormulaVariant,
) -> Result<Comparison, OracleError> {
    let leaf_dim = check_slice(chart, k)?;
    if leaf_dim < 4 {
        return Err(OracleError::LeafDimension {
            got: leaf_dim,
            needed: ">= 4",
        });
    }
    let mut cmp = Comparison::empty();
    for point in points {
        let pipe = pipeline_at(chart, k, point, variant)?;
        let t = pipe
            .obstructions
            .as_ref()
            .and_then(|o| o.t_parallel.clone())
            .ok_or_else(|| OracleError::Missing(point.clone()))?;
        let leaf = leaf_geometry(chart, k, point)?;
        let w = weyl(
            &leaf.riemann,
            &leaf.ricci,
            &leaf.scalar,
            &leaf.metric.g,
            &leaf.metric.g_inv,
        )?
        .values();
        cmp.absorb(
            &t,
            |i| 2.0 * w.get(&[i[slot_map[0]], i[slot_map[1]], i[slot_map[2]], i[slot_map[3]]]),
            k,
            point,
        );
    }
    Ok(cmp.finish())
}

/// `T^||` against twice the induced Weyl tensor.
pub fn compare_t(chart: &ChartSpec, k: usize, points: &[Vec<f64>]) -> Result<Comparison, OracleError> {
    compare_t_with_map(chart, k, points, T_WEYL_SLOT_MAP, FormulaVariant::default())
}

/// `B^||` against `∇_[a L_b]c` of the induced 3-metric.
pub fn compare_b_with(
    chart: &ChartSpec,
    k: usize,
    points: &[Vec<f64>],
    variant: FormulaVariant,
) -> Result<Comparison, OracleError> {
    let leaf_dim = check_slice(chart, k)?;
    if leaf_dim != 3 {
        return Err(OracleError::LeafDimension {
            got: leaf_dim,
            needed: "3",
        });
    }
    let mut cmp = Comparison::empty();
    for point in points {
        let pipe = pipeline_at(chart, k, point, variant)?;
        let b = pipe
            .obstructions
            .as_ref()
            .and_then(|o| o.b_parallel.clone())
            .ok_or_else(|| OracleError::Missing(point.clone()))?;
        let leaf = leaf_geometry(chart, k, point)?;
        let l = intrinsic_l(&leaf)?;
        let dl = covariant_derivative(&l, &leaf.conn)?
            .antisymmetrize(&[0, 1])
            .map_err(GeometryError::from)?
            .values();
        cmp.absorb(&b, |i| *dl.get(i), k, point);
    }
    Ok(cmp.finish())
}

pub fn compare_b(chart: &ChartSpec, k: usize, points: &[Vec<f64>]) -> Result<Comparison, OracleError> {
    compare_b_with(chart, k, points, FormulaVariant::default())
}

/// `L^Π` against `2 Ric + R g / (1 − n)` of the induced metric.
pub fn compare_l_pi(
    chart: &ChartSpec,
    k: usize,
    points: &[Vec<f64>],
    variant: FormulaVariant,
) -> Result<Comparison, OracleError> {
    let leaf_dim = check_slice(chart, k)?;
    if leaf_dim < 2 {
        return Err(OracleError::LeafDimension {
            got: leaf_dim,
            needed: ">= 2",
        });
    }
    let mut cmp = Comparison::empty();
    for point in points {
        let pipe = pipeline_at(chart, k, point, variant)?;
        let l_pi = pipe
            .obstructions
            .as_ref()
            .map(|o| o.l_pi.values())
            .ok_or_else(|| OracleError::Missing(point.clone()))?;
        let leaf = leaf_geometry(chart, k, point)?;
        let l = intrinsic_l(&leaf)?.values();
        cmp.absorb(&l_pi, |i| *l.get(i), k, point);
    }
    Ok(cmp.finish())
}

/// `R̄^||` against the induced Riemann tensor.
pub fn compare_bar_r(
    chart: &ChartSpec,
    k: usize,
    points: &[Vec<f64>],
) -> Result<Comparison, OracleError> {
    check_slice(chart, k)?;
    let mut cmp = Comparison::empty();
    for point in points {
        let pipe = pipeline_at(chart, k, point, FormulaVariant::default())?;
        let r = pipe
            .obstructions
            .as_ref()
            .map(|o| o.bar_r_parallel.clone())
            .ok_or_else(|| OracleError::Missing(point.clone()))?;
        let leaf = leaf_geometry(chart, k, point)?;
        let lr = leaf.riemann.values();
        cmp.absorb(&r, |i| *lr.get(i), k, point);
    }
    Ok(cmp.finish())
}
