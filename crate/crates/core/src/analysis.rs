//! Foliation checks and the conformal-flatness verdict over sample points.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biconformal::{
    projectors_from_oneform, projectors_from_span, BiconformalError, FormulaVariant, PointPipeline,
    ProjectorPair, NONDEGENERACY_RTOL, PIPELINE_ORDER,
};
use crate::expr::{eval_jet, ExprAst, ExprError};
use crate::geometry::{metric_at, ChartSpec, GeometryError, MetricSample};
use crate::jets::Jet;
use crate::tensor::DenseTensor;

/// Multiplier of the sampling generator.
pub const LCG_MULTIPLIER: u64 = 6364136223846793005;
/// Increment of the sampling generator.
pub const LCG_INCREMENT: u64 = 1442695040888963407;

/// Residuals above this multiple of the threshold are decisive.
pub const DECISIVE_FACTOR: f64 = 10.0;

/// 64-bit linear congruential generator, `s ← a·s + c (mod 2⁶⁴)`.
/// `next_f64` returns `(s >> 11) / 2⁵³` taken after the step.
#[derive(Debug, Clone)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Lcg { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(LCG_MULTIPLIER).wrapping_add(LCG_INCREMENT);
        self.state
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid sample plan: {0}")]
    InvalidPlan(String),
    #[error("projector rank p = {p} out of range for N = {n}")]
    RankOutOfRange { p: usize, n: usize },
    #[error("distribution is not involutive at point {point:?}: {witness} = {residual:e}")]
    NotInvolutive {
        point: Vec<f64>,
        witness: String,
        residual: f64,
    },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Biconformal(#[from] BiconformalError),
}

/// The candidate distribution. `OneForm` describes leaves as the kernel of
/// `ω`; `Span` lists vector fields tangent to the leaves.
#[derive(Debug, Clone, PartialEq)]
pub enum DistributionSpec {
    OneForm(Vec<ExprAst>),
    Span(Vec<Vec<ExprAst>>),
}

impl DistributionSpec {
    pub fn validate(&self, n: usize) -> Result<(), AnalysisError> {
        let bad = |what: String| Err(AnalysisError::InvalidDistribution(what));
        match self {
            DistributionSpec::OneForm(w) if w.len() != n => {
                bad(format!("one-form has {} components, chart dimension is {n}", w.len()))
            }
            DistributionSpec::Span(fields) if fields.is_empty() || fields.len() >= n => bad(format!(
                "span needs between 1 and {} fields, got {}",
                n.saturating_sub(1),
                fields.len()
            )),
            DistributionSpec::Span(fields) => match fields.iter().position(|f| f.len() != n) {
                Some(i) => bad(format!(
                    "field {i} has {} components, chart dimension is {n}",
                    fields[i].len()
                )),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    fn eval(
        &self,
        chart: &ChartSpec,
        point: &[f64],
        order: u8,
    ) -> Result<Vec<Vec<Jet>>, ExprError> {
        let ctx = chart.context(point);
        let rows: Vec<&[ExprAst]> = match self {
            DistributionSpec::OneForm(w) => vec![w.as_slice()],
            DistributionSpec::Span(f) => f.iter().map(Vec::as_slice).collect(),
        };
        rows.iter()
            .map(|row| row.iter().map(|e| eval_jet(e, &ctx, order)).collect())
            .collect()
    }

    /// Projector pair at `point` from an already evaluated metric.
    pub fn projectors(
        &self,
        chart: &ChartSpec,
        metric: &MetricSample,
        point: &[f64],
    ) -> Result<ProjectorPair, AnalysisError> {
        let order = metric.g.order();
        let jets = self.eval(chart, point, order)?;
        Ok(match self {
            DistributionSpec::OneForm(_) => projectors_from_oneform(&jets[0], metric)?,
            DistributionSpec::Span(_) => projectors_from_span(&jets, metric)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplePlan {
    Explicit(Vec<Vec<f64>>),
    Box {
        low: Vec<f64>,
        high: Vec<f64>,
        count: usize,
        seed: u64,
    },
}

impl SamplePlan {
    /// Points in plan order. Box sampling draws coordinates in order, one
    /// generator step each: `x_i = low_i + (high_i − low_i)·u`.
    pub fn points(&self, n: usize) -> Result<Vec<Vec<f64>>, AnalysisError> {
        let bad = |s: String| Err(AnalysisError::InvalidPlan(s));
        match self {
            SamplePlan::Explicit(pts) => {
                if pts.is_empty() {
                    return bad("no sample points".into());
                }
                if let Some(p) = pts.iter().find(|p| p.len() != n) {
                    return bad(format!("point {p:?} does not have {n} coordinates"));
                }
                Ok(pts.clone())
            }
            SamplePlan::Box {
                low,
                high,
                count,
                seed,
            } => {
                if *count == 0 {
                    return bad("count must be at least 1".into());
                }
                if low.len() != n || high.len() != n {
                    return bad(format!("box bounds must have {n} coordinates"));
                }
                if low.iter().zip(high).any(|(l, h)| !(l < h)) {
                    return bad("box needs low < high in every coordinate".into());
                }
                let mut rng = Lcg::new(*seed);
                Ok((0..*count)
                    .map(|_| {
                        low.iter()
                            .zip(high)
                            .map(|(l, h)| l + (h - l) * rng.next_f64())
                            .collect()
                    })
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub atol: f64,
    pub rtol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            atol: 1e-10,
            rtol: 1e-8,
        }
    }
}

impl Tolerances {
    pub fn threshold(&self, scale: f64) -> f64 {
        self.atol + self.rtol * scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeafCase {
    #[serde(rename = "T-test")]
    TTest,
    #[serde(rename = "B-test")]
    BTest,
    #[serde(rename = "trivial")]
    Trivial,
}

impl LeafCase {
    pub fn as_str(self) -> &'static str {
        match self {
            LeafCase::TTest => "T-test",
            LeafCase::BTest => "B-test",
            LeafCase::Trivial => "trivial",
        }
    }
}

pub fn classify_case(n: usize, p: usize) -> Result<LeafCase, AnalysisError> {
    if p == 0 || p >= n {
        return Err(AnalysisError::RankOutOfRange { p, n });
    }
    Ok(match n - p {
        0..=2 => LeafCase::Trivial,
        3 => LeafCase::BTest,
        _ => LeafCase::TTest,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum NonDegeneracy {
    Ok { value: f64, threshold: f64 },
    Degenerate { value: f64, threshold: f64 },
    /// The metric or the distribution cannot be evaluated at the point.
    Singular { detail: String },
}

impl NonDegeneracy {
    pub fn is_ok(&self) -> bool {
        matches!(self, NonDegeneracy::Ok { .. })
    }
}

fn nondegeneracy_from_metric(
    spec: &DistributionSpec,
    chart: &ChartSpec,
    metric: &MetricSample,
    point: &[f64],
) -> Result<NonDegeneracy, AnalysisError> {
    let n = chart.dim();
    let rows: Vec<Vec<f64>> = spec
        .eval(chart, point, 0)?
        .iter()
        .map(|r| r.iter().map(Jet::value).collect())
        .collect();
    let form = match spec {
        DistributionSpec::OneForm(_) => metric.g_inv.values(),
        DistributionSpec::Span(_) => metric.g.values(),
    };
    let m = rows.len();
    let mut scale = 1.0;
    for r in &rows {
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                s += (form.get(&[a, b]) * r[a] * r[b]).abs();
            }
        }
        scale *= s;
    }
    let gram = DMatrix::from_fn(m, m, |i, j| {
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                s += form.get(&[a, b]) * rows[i][a] * rows[j][b];
            }
        }
        s
    });
    let value = gram.determinant();
    let threshold = NONDEGENERACY_RTOL * scale;
    Ok(if value.abs() > threshold {
        NonDegeneracy::Ok { value, threshold }
    } else {
        NonDegeneracy::Degenerate { value, threshold }
    })
}

/// `|g^♯(ω, ω)|` (one-form) or `|det g(V_i, V_j)|` (span) against
/// `1e−10` times the same sum taken over absolute values.
pub fn check_nondegenerate(
    spec: &DistributionSpec,
    chart: &ChartSpec,
    point: &[f64],
) -> Result<NonDegeneracy, AnalysisError> {
    chart.check_point(point)?;
    let metric = match metric_at(chart, point, 0) {
        Ok(m) => m,
        Err(e) if evaluation_failure(&e) => {
            return Ok(NonDegeneracy::Singular {
                detail: e.to_string(),
            })
        }
        Err(e) => return Err(e.into()),
    };
    match nondegeneracy_from_metric(spec, chart, &metric, point) {
        Err(AnalysisError::Expr(e)) => Ok(NonDegeneracy::Singular {
            detail: e.to_string(),
        }),
        r => r,
    }
}

fn evaluation_failure(e: &GeometryError) -> bool {
    matches!(
        e,
        GeometryError::Expr(_) | GeometryError::Jet(_) | GeometryError::SingularMetric { .. }
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum Involutivity {
    Ok {
        max_residual: f64,
        points_checked: usize,
    },
    Fail {
        point: Vec<f64>,
        witness: String,
        residual: f64,
    },
}

/// Largest `|(ω∧dω)_abc|` at a point with its witness and scale.
fn oneform_integrability(omega: &[Jet], names: &[String]) -> (f64, String, f64) {
    let n = omega.len();
    let d = |b: usize, c: usize| omega[c].d1(b) - omega[b].d1(c);
    let w: Vec<f64> = omega.iter().map(Jet::value).collect();
    let wmax = w.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let dmax = omega.iter().fold(0.0_f64, |m, j| m.max(j.grad().iter().fold(0.0_f64, |a, v| a.max(v.abs()))));
    let mut worst = (0.0, String::new());
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                let v = w[a] * d(b, c) + w[b] * d(c, a) + w[c] * d(a, b);
                if v.abs() > worst.0 || worst.1.is_empty() {
                    worst = (v.abs(), format!("(w^dw)[{},{},{}]", names[a], names[b], names[c]));
                }
            }
        }
    }
    (worst.0, worst.1, wmax * dmax)
}

/// Largest P-projected bracket component `P([V_i, V_j])^a`.
fn span_integrability(
    fields: &[Vec<Jet>],
    metric: &MetricSample,
    names: &[String],
) -> Result<(f64, String, f64), AnalysisError> {
    let n = metric.dim();
    let values: Vec<Vec<Jet>> = fields
        .iter()
        .map(|f| f.iter().map(|j| j.truncate(0)).collect())
        .collect();
    let pp = projectors_from_span(&values, metric)?;
    let p = pp.p_mixed.values();
    let vmax = fields.iter().flatten().fold(0.0_f64, |m, j| m.max(j.value().abs()));
    let dmax = fields
        .iter()
        .flatten()
        .fold(0.0_f64, |m, j| m.max(j.grad().iter().fold(0.0_f64, |a, v| a.max(v.abs()))));
    let mut worst = (0.0, String::new());
    for i in 0..fields.len() {
        for j in i + 1..fields.len() {
            let bracket: Vec<f64> = (0..n)
                .map(|a| {
                    (0..n)
                        .map(|b| {
                            fields[i][b].value() * fields[j][a].d1(b)
                                - fields[j][b].value() * fields[i][a].d1(b)
                        })
                        .sum()
                })
                .collect();
            for a in 0..n {
                let v: f64 = (0..n).map(|b| p.get(&[a, b]) * bracket[b]).sum();
                if v.abs() > worst.0 || worst.1.is_empty() {
                    worst = (v.abs(), format!("P[V{i},V{j}]^{}", names[a]));
                }
            }
        }
    }
    Ok((worst.0, worst.1, vmax * dmax))
}

/// Frobenius check at every point where the metric and the distribution
/// can be evaluated; points that fail to evaluate are skipped.
pub fn check_involutive(
    spec: &DistributionSpec,
    chart: &ChartSpec,
    points: &[Vec<f64>],
    tol: Tolerances,
) -> Result<Involutivity, AnalysisError> {
    spec.validate(chart.dim())?;
    let mut max_residual = 0.0_f64;
    let mut checked = 0;
    for point in points {
        chart.check_point(point)?;
        let Ok(jets) = spec.eval(chart, point, 1) else {
            continue;
        };
        let (residual, witness, scale) = match spec {
            DistributionSpec::OneForm(_) => oneform_integrability(&jets[0], chart.coords()),
            DistributionSpec::Span(_) => {
                let Ok(metric) = metric_at(chart, point, 0) else {
                    continue;
                };
                match span_integrability(&jets, &metric, chart.coords()) {
                    Ok(r) => r,
                    Err(_) => continue,
                }
            }
        };
        checked += 1;
        if residual > tol.threshold(scale) {
            return Ok(Involutivity::Fail {
                point: point.clone(),
                witness,
                residual,
            });
        }
        max_residual = max_residual.max(residual);
    }
    Ok(Involutivity::Ok {
        max_residual,
        points_checked: checked,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointStatus {
    Pass,
    /// Above threshold but within the decisive factor.
    Marginal,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SkipReason {
    /// Null or nearly null distribution.
    DegenerateDistribution { value: f64, threshold: f64 },
    /// Metric or distribution cannot be evaluated (singular metric,
    /// expression outside its domain).
    MetricSingular { detail: String },
}

impl SkipReason {
    pub fn describe(&self) -> String {
        match self {
            SkipReason::DegenerateDistribution { value, threshold } => {
                format!("degenerate distribution ({value:e} vs threshold {threshold:e})")
            }
            SkipReason::MetricSingular { detail } => {
                format!("metric singular or outside domain: {detail}")
            }
        }
    }
}

/// A component of an obstruction tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub index: Vec<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointRecord {
    pub index: usize,
    pub point: Vec<f64>,
    pub case: Option<LeafCase>,
    pub p: Option<usize>,
    pub residual: f64,
    pub scale: f64,
    pub threshold: f64,
    pub status: PointStatus,
    pub skipped: Option<SkipReason>,
    /// Components above threshold, largest first, at most
    /// [`MAX_REPORTED_COMPONENTS`].
    pub failing_components: Vec<Component>,
    pub worst_component: Option<Component>,
    pub flat_residual: f64,
    pub flat_scale: f64,
    pub flat_status: PointStatus,
    pub projector_residual: f64,
}

pub const MAX_REPORTED_COMPONENTS: usize = 8;

impl PointRecord {
    pub fn pass(&self) -> bool {
        self.status == PointStatus::Pass
    }

    fn skipped(index: usize, point: &[f64], reason: SkipReason) -> Self {
        PointRecord {
            index,
            point: point.to_vec(),
            case: None,
            p: None,
            residual: 0.0,
            scale: 0.0,
            threshold: 0.0,
            status: PointStatus::Skipped,
            skipped: Some(reason),
            failing_components: vec![],
            worst_component: None,
            flat_residual: 0.0,
            flat_scale: 0.0,
            flat_status: PointStatus::Skipped,
            projector_residual: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregate {
    #[serde(rename = "conformally-flat")]
    ConformallyFlat,
    #[serde(rename = "not-conformally-flat")]
    NotConformallyFlat,
    #[serde(rename = "indeterminate-near-tolerance")]
    IndeterminateNearTolerance,
    #[serde(rename = "indeterminate-degenerate")]
    IndeterminateDegenerate,
}

impl Aggregate {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregate::ConformallyFlat => "conformally-flat",
            Aggregate::NotConformallyFlat => "not-conformally-flat",
            Aggregate::IndeterminateNearTolerance => "indeterminate-near-tolerance",
            Aggregate::IndeterminateDegenerate => "indeterminate-degenerate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlatnessVerdict {
    Flat,
    NotFlat,
    Indeterminate,
}

impl FlatnessVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            FlatnessVerdict::Flat => "flat",
            FlatnessVerdict::NotFlat => "not-flat",
            FlatnessVerdict::Indeterminate => "indeterminate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub records: Vec<PointRecord>,
    pub aggregate: Aggregate,
    pub flatness: FlatnessVerdict,
    pub involutivity: Involutivity,
}

impl Verdict {
    pub fn evaluated(&self) -> impl Iterator<Item = &PointRecord> {
        self.records.iter().filter(|r| r.status != PointStatus::Skipped)
    }
}

fn status_for(residual: f64, threshold: f64) -> PointStatus {
    if residual <= threshold {
        PointStatus::Pass
    } else if residual <= DECISIVE_FACTOR * threshold {
        PointStatus::Marginal
    } else {
        PointStatus::Fail
    }
}

fn components_above(t: &DenseTensor<f64>, threshold: f64) -> Vec<Component> {
    let mut out: Vec<Component> = crate::tensor::multi_indices(t.dim(), t.rank())
        .filter_map(|idx| {
            let v = *t.get(&idx);
            (v.abs() > threshold).then_some(Component { index: idx, value: v })
        })
        .collect();
    out.sort_by(|a, b| b.value.abs().total_cmp(&a.value.abs()).then(a.index.cmp(&b.index)));
    out.truncate(MAX_REPORTED_COMPONENTS);
    out
}

/// Full pipeline at one point, or the reason the point must be skipped.
pub fn evaluate_pipeline(
    chart: &ChartSpec,
    spec: &DistributionSpec,
    point: &[f64],
    variant: FormulaVariant,
) -> Result<Result<PointPipeline, SkipReason>, AnalysisError> {
    chart.check_point(point)?;
    let metric = match metric_at(chart, point, PIPELINE_ORDER) {
        Ok(m) => m,
        Err(e) if evaluation_failure(&e) => {
            return Ok(Err(SkipReason::MetricSingular {
                detail: e.to_string(),
            }))
        }
        Err(e) => return Err(e.into()),
    };
    match nondegeneracy_from_metric(spec, chart, &metric, point) {
        Ok(NonDegeneracy::Degenerate { value, threshold }) => {
            return Ok(Err(SkipReason::DegenerateDistribution { value, threshold }))
        }
        Ok(NonDegeneracy::Ok { .. }) => {}
        Ok(NonDegeneracy::Singular { detail }) => {
            return Ok(Err(SkipReason::MetricSingular { detail }))
        }
        Err(AnalysisError::Expr(e)) => {
            return Ok(Err(SkipReason::MetricSingular {
                detail: e.to_string(),
            }))
        }
        Err(e) => return Err(e),
    }
    let pp = match spec.projectors(chart, &metric, point) {
        Ok(pp) => pp,
        Err(AnalysisError::Biconformal(BiconformalError::DegenerateDistribution { gram, threshold })) => {
            return Ok(Err(SkipReason::DegenerateDistribution {
                value: gram,
                threshold,
            }))
        }
        Err(AnalysisError::Expr(e)) => {
            return Ok(Err(SkipReason::MetricSingular {
                detail: e.to_string(),
            }))
        }
        Err(e) => return Err(e),
    };
    Ok(Ok(PointPipeline::evaluate(metric, pp, variant)?))
}

/// Evaluates one point into a record. Errors here are configuration-level
/// (wrong point dimension, unsupported rank), not point degeneracies.
pub fn analyze_point(
    chart: &ChartSpec,
    spec: &DistributionSpec,
    index: usize,
    point: &[f64],
    tol: Tolerances,
) -> Result<PointRecord, AnalysisError> {
    let pipe = match evaluate_pipeline(chart, spec, point, FormulaVariant::default())? {
        Ok(p) => p,
        Err(reason) => return Ok(PointRecord::skipped(index, point, reason)),
    };
    let n = chart.dim();
    let p = pipe.projectors.p;
    let case = classify_case(n, p)?;
    let projector_residual = pipe.projectors.invariant_residual(&pipe.metric);
    let mut rec = PointRecord {
        index,
        point: point.to_vec(),
        case: Some(case),
        p: Some(p),
        residual: 0.0,
        scale: 0.0,
        threshold: tol.threshold(0.0),
        status: PointStatus::Pass,
        skipped: None,
        failing_components: vec![],
        worst_component: None,
        flat_residual: 0.0,
        flat_scale: 0.0,
        flat_status: PointStatus::Pass,
        projector_residual,
    };
    let Some(obs) = pipe.obstructions.as_ref() else {
        return Ok(rec);
    };
    rec.flat_residual = obs.bar_r_parallel.max_abs();
    rec.flat_scale = obs.bar_r_scale;
    rec.flat_status = status_for(rec.flat_residual, tol.threshold(rec.flat_scale));
    let (tensor, scale) = match case {
        LeafCase::TTest => (obs.t_parallel.as_ref(), obs.t_scale),
        LeafCase::BTest => (obs.b_parallel.as_ref(), obs.b_scale),
        LeafCase::Trivial => (None, 0.0),
    };
    if let Some(t) = tensor {
        let threshold = tol.threshold(scale);
        let (idx, v) = worst_index(t);
        rec.residual = v;
        rec.scale = scale;
        rec.threshold = threshold;
        rec.status = status_for(rec.residual, threshold);
        rec.worst_component = Some(Component {
            index: idx.clone(),
            value: *t.get(&idx),
        });
        rec.failing_components = components_above(t, threshold);
    }
    Ok(rec)
}

/// Largest component by magnitude. Ties within `1e-12` relative (partners
/// under the index antisymmetries) go to the last in row-major order, so
/// antisymmetric pairs are reported with descending indices.
fn worst_index(t: &DenseTensor<f64>) -> (Vec<usize>, f64) {
    let (_, v) = t.argmax_abs();
    let max = v.abs();
    let cut = max * (1.0 - 1e-12);
    let n = t.dim();
    let rank = t.variance().len();
    let comps = t.components();
    let flat = (0..comps.len()).rev().find(|&i| comps[i].abs() >= cut).unwrap_or(0);
    let mut idx = vec![0; rank];
    let mut r = flat;
    for slot in (0..rank).rev() {
        idx[slot] = r % n;
        r /= n;
    }
    (idx, max)
}

/// Ordered reduction of point records into the verdict.
pub fn assemble(records: Vec<PointRecord>, involutivity: Involutivity) -> Verdict {
    let evaluated: Vec<&PointRecord> =
        records.iter().filter(|r| r.status != PointStatus::Skipped).collect();
    let aggregate = if evaluated.is_empty() {
        Aggregate::IndeterminateDegenerate
    } else if evaluated.iter().any(|r| r.status == PointStatus::Fail) {
        Aggregate::NotConformallyFlat
    } else if evaluated.iter().any(|r| r.status == PointStatus::Marginal) {
        Aggregate::IndeterminateNearTolerance
    } else {
        Aggregate::ConformallyFlat
    };
    let flatness = if evaluated.is_empty() {
        FlatnessVerdict::Indeterminate
    } else if evaluated.iter().any(|r| r.flat_status == PointStatus::Fail) {
        FlatnessVerdict::NotFlat
    } else if evaluated.iter().all(|r| r.flat_status == PointStatus::Pass) {
        FlatnessVerdict::Flat
    } else {
        FlatnessVerdict::Indeterminate
    };
    Verdict {
        records,
        aggregate,
        flatness,
        involutivity,
    }
}

/// Sequential analysis: involutivity gate, then every point in plan order.
pub fn analyze(
    chart: &ChartSpec,
    spec: &DistributionSpec,
    plan: &SamplePlan,
    tol: Tolerances,
) -> Result<Verdict, AnalysisError> {
    let points = plan.points(chart.dim())?;
    let involutivity = involutivity_gate(spec, chart, &points, tol)?;
    let records = points
        .iter()
        .enumerate()
        .map(|(i, p)| analyze_point(chart, spec, i, p, tol))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(records, involutivity))
}

/// [`check_involutive`] turned into an error on failure.
pub fn involutivity_gate(
    spec: &DistributionSpec,
    chart: &ChartSpec,
    points: &[Vec<f64>],
    tol: Tolerances,
) -> Result<Involutivity, AnalysisError> {
    match check_involutive(spec, chart, points, tol)? {
        Involutivity::Fail {
            point,
            witness,
            residual,
        } => Err(AnalysisError::NotInvolutive {
            point,
            witness,
            residual,
        }),
        ok => Ok(ok),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charts::{minkowski, schwarzschild};
    use crate::expr::parse_expression;
    use std::f64::consts::PI;

    fn oneform(chart: &ChartSpec, w: &[&str]) -> DistributionSpec {
        DistributionSpec::OneForm(
            w.iter()
                .map(|t| parse_expression(t, chart.coords(), &[]).unwrap())
                .collect(),
        )
    }

    fn span(chart: &ChartSpec, rows: &[&[&str]]) -> DistributionSpec {
        DistributionSpec::Span(
            rows.iter()
                .map(|r| {
                    r.iter()
                        .map(|t| parse_expression(t, chart.coords(), &[]).unwrap())
                        .collect()
                })
                .collect(),
        )
    }

    #[test]
    fn lcg_sequence() {
        let mut g = Lcg::new(0);
        assert_eq!(g.next_u64(), LCG_INCREMENT);
        assert_eq!(
            g.next_u64(),
            LCG_INCREMENT.wrapping_mul(LCG_MULTIPLIER).wrapping_add(LCG_INCREMENT)
        );
        let mut g = Lcg::new(0);
        assert_eq!(g.next_f64(), (LCG_INCREMENT >> 11) as f64 / 9007199254740992.0);
    }

    #[test]
    fn box_plan_is_reproducible() {
        let plan = SamplePlan::Box {
            low: vec![0.0, 3.0],
            high: vec![1.0, 10.0],
            count: 4,
            seed: 42,
        };
        let a = plan.points(2).unwrap();
        assert_eq!(a, plan.points(2).unwrap());
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|p| (0.0..1.0).contains(&p[0]) && (3.0..10.0).contains(&p[1])));
        let bad = SamplePlan::Box {
            low: vec![1.0, 3.0],
            high: vec![1.0, 10.0],
            count: 4,
            seed: 42,
        };
        assert!(bad.points(2).is_err());
        assert!(SamplePlan::Explicit(vec![]).points(2).is_err());
    }

    #[test]
    fn nondegeneracy_examples() {
        let mk = minkowski(4);
        match check_nondegenerate(&oneform(&mk, &["1", "0", "0", "0"]), &mk, &[0.0; 4]).unwrap() {
            NonDegeneracy::Ok { value, .. } => assert_eq!(value, -1.0),
            other => panic!("{other:?}"),
        }
        let null = oneform(&mk, &["1", "1", "0", "0"]);
        assert!(matches!(
            check_nondegenerate(&null, &mk, &[0.0; 4]).unwrap(),
            NonDegeneracy::Degenerate { .. }
        ));
        let s = schwarzschild(1.0);
        let dr = oneform(&s, &["0", "1", "0", "0"]);
        assert!(!check_nondegenerate(&dr, &s, &[0.0, 2.0, 1.0, 0.0]).unwrap().is_ok());
        assert!(check_nondegenerate(&dr, &s, &[0.0, 3.0, 1.0, 0.0]).unwrap().is_ok());
        let sp = span(&mk, &[&["0", "1", "0", "0"], &["1", "1", "0", "0"]]);
        assert!(check_nondegenerate(&sp, &mk, &[0.0; 4]).unwrap().is_ok());
        let null_span = span(&mk, &[&["1", "1", "0", "0"], &["0", "0", "1", "0"]]);
        assert!(!check_nondegenerate(&null_span, &mk, &[0.0; 4]).unwrap().is_ok());
    }

    #[test]
    fn involutivity_examples() {
        let mk = minkowski(4);
        let pts = vec![vec![0.1, 0.2, 0.3, 0.4], vec![1.0, -1.0, 0.5, 2.0]];
        let tol = Tolerances::default();
        let exact = oneform(&mk, &["2*x0", "cos(x1)*x2", "sin(x1)", "1"]);
        assert!(matches!(
            check_involutive(&exact, &mk, &pts, tol).unwrap(),
            Involutivity::Ok { points_checked: 2, .. }
        ));
        let twisted = oneform(&mk, &["1", "0", "x1", "0"]);
        match check_involutive(&twisted, &mk, &pts, tol).unwrap() {
            Involutivity::Fail { witness, residual, .. } => {
                assert!(residual > 0.5);
                assert!(witness.contains("x0,x1,x2"), "{witness}");
            }
            ok => panic!("{ok:?}"),
        }
        let s = schwarzschild(1.0);
        let coords = span(&s, &[&["0", "1", "0", "0"], &["0", "0", "1", "0"]]);
        let pts = vec![vec![0.0, 4.0, 1.0, 0.0]];
        assert!(matches!(
            check_involutive(&coords, &s, &pts, tol).unwrap(),
            Involutivity::Ok { .. }
        ));
        let rot = span(&mk, &[&["0", "1", "0", "0"], &["0", "0", "1", "x1"]]);
        assert!(matches!(
            check_involutive(&rot, &mk, &[vec![0.0, 0.5, 0.0, 0.0]], tol).unwrap(),
            Involutivity::Fail { .. }
        ));
    }

    #[test]
    fn case_classification() {
        assert_eq!(classify_case(5, 1).unwrap(), LeafCase::TTest);
        assert_eq!(classify_case(4, 1).unwrap(), LeafCase::BTest);
        assert_eq!(classify_case(3, 1).unwrap(), LeafCase::Trivial);
        assert!(classify_case(4, 0).is_err());
        assert!(classify_case(4, 4).is_err());
    }

    #[test]
    fn schwarzschild_static_slices_verdict() {
        let s = schwarzschild(1.0);
        let plan = SamplePlan::Explicit(vec![
            vec![0.0, 3.0, PI / 4.0, 0.0],
            vec![0.0, 5.0, PI / 3.0, 1.0],
            vec![0.0, 10.0, 1.0, 2.0],
        ]);
        let v = analyze(&s, &oneform(&s, &["1", "0", "0", "0"]), &plan, Tolerances::default()).unwrap();
        assert_eq!(v.aggregate, Aggregate::ConformallyFlat);
        assert_eq!(v.flatness, FlatnessVerdict::NotFlat);
        assert!(v.records.iter().all(|r| r.case == Some(LeafCase::BTest)));
    }

    #[test]
    fn mixed_foliation_is_not_conformally_flat() {
        let s = schwarzschild(1.0);
        let plan = SamplePlan::Explicit(vec![vec![0.0, 5.0, 1.0, 0.0]]);
        let v = analyze(&s, &oneform(&s, &["1", "0", "0", "1"]), &plan, Tolerances::default()).unwrap();
        assert_eq!(v.aggregate, Aggregate::NotConformallyFlat);
        let worst = v.records[0].worst_component.as_ref().unwrap();
        assert_eq!(worst.index, vec![3, 2, 3]);
    }

    #[test]
    fn minkowski_is_flat() {
        let mk = minkowski(4);
        let plan = SamplePlan::Box {
            low: vec![-1.0; 4],
            high: vec![1.0; 4],
            count: 3,
            seed: 1,
        };
        let v = analyze(&mk, &oneform(&mk, &["1", "0", "0", "0"]), &plan, Tolerances::default()).unwrap();
        assert_eq!(v.aggregate, Aggregate::ConformallyFlat);
        assert_eq!(v.flatness, FlatnessVerdict::Flat);
        for r in &v.records {
            assert!(r.residual <= 1e-12 && r.flat_residual <= 1e-12);
        }
    }

    #[test]
    fn degenerate_points_are_skipped_not_dropped() {
        let s = schwarzschild(1.0);
        let dr = oneform(&s, &["0", "1", "0", "0"]);
        let plan = SamplePlan::Explicit(vec![vec![0.0, 2.0, 1.0, 0.0], vec![0.0, 4.0, 1.0, 0.0]]);
        let v = analyze(&s, &dr, &plan, Tolerances::default()).unwrap();
        assert_eq!(v.records.len(), 2);
        assert_eq!(v.records[0].status, PointStatus::Skipped);
        assert!(matches!(v.records[0].skipped, Some(SkipReason::MetricSingular { .. })));
        assert_ne!(v.records[1].status, PointStatus::Skipped);

        let mk = minkowski(4);
        let plan = SamplePlan::Explicit(vec![vec![0.0; 4]]);
        let v = analyze(&mk, &oneform(&mk, &["1", "1", "0", "0"]), &plan, Tolerances::default()).unwrap();
        assert_eq!(v.aggregate, Aggregate::IndeterminateDegenerate);
        assert!(matches!(
            v.records[0].skipped,
            Some(SkipReason::DegenerateDistribution { .. })
        ));
    }

    #[test]
    fn non_involutive_distribution_aborts() {
        let mk = minkowski(4);
        let plan = SamplePlan::Explicit(vec![vec![0.0, 1.0, 0.0, 0.0]]);
        let err = analyze(&mk, &oneform(&mk, &["1", "0", "x1", "0"]), &plan, Tolerances::default())
            .unwrap_err();
        assert!(matches!(err, AnalysisError::NotInvolutive { .. }));
    }

    #[test]
    fn marginal_residuals_make_the_verdict_indeterminate() {
        assert_eq!(status_for(1.0, 1.0), PointStatus::Pass);
        assert_eq!(status_for(5.0, 1.0), PointStatus::Marginal);
        assert_eq!(status_for(10.5, 1.0), PointStatus::Fail);
        let mut rec = PointRecord::skipped(0, &[0.0], SkipReason::MetricSingular { detail: String::new() });
        rec.status = PointStatus::Marginal;
        rec.flat_status = PointStatus::Pass;
        let v = assemble(vec![rec], Involutivity::Ok { max_residual: 0.0, points_checked: 1 });
        assert_eq!(v.aggregate, Aggregate::IndeterminateNearTolerance);
    }
}
