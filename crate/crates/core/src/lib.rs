//! Pointwise tests for conformally flat leaves of non-degenerate foliations.
//!
//! Given a metric and a distribution (a 1-form or a set of spanning vector
//! fields), the pipeline builds the orthogonal projector pair, the
//! bi-conformal connection and its curvature, and evaluates the obstruction
//! tensors whose vanishing characterizes conformally flat (or flat) leaves.
//! Only the metric and the distribution are needed; the leaves themselves
//! are never parametrized.
//!
//! Derivatives come from third-order jets ([`jets::Jet`]), so every tensor
//! is exact up to floating-point rounding.

pub mod analysis;
pub mod biconformal;
pub mod charts;
pub mod expr;
pub mod geometry;
pub mod jets;
pub mod oracle;
pub mod tensor;

pub use analysis::{
    analyze, analyze_point, assemble, check_involutive, check_nondegenerate, classify_case,
    evaluate_pipeline, involutivity_gate, Aggregate, AnalysisError, Component, DistributionSpec,
    FlatnessVerdict, Involutivity, Lcg, LeafCase, NonDegeneracy, PointRecord, PointStatus,
    SamplePlan, SkipReason, Tolerances, Verdict,
};
pub use biconformal::{FormulaVariant, ObstructionSet, PointPipeline, ProjectorPair};
pub use expr::{eval_jet, parse_expression, EvalContext, ExprAst, ExprError};
pub use geometry::{metric_at, ChartSpec, ConnectionSample, GeometryError, MetricSample};
pub use jets::Jet;
pub use tensor::{DenseTensor, Scalar, TensorError, Variance};
