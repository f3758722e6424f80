//! Shared fixtures for the pipeline benchmarks.

use biconf_core::charts;
use biconf_core::{ChartSpec, DistributionSpec, ExprAst};

/// Schwarzschild with `ω = dt`, a B-test case.
pub fn schwarzschild_dt() -> (ChartSpec, DistributionSpec, Vec<f64>) {
    let omega = (0..4).map(|i| ExprAst::Const(if i == 0 { 1.0 } else { 0.0 })).collect();
    (
        charts::schwarzschild(1.0),
        DistributionSpec::OneForm(omega),
        vec![0.0, 5.0, 1.0, 1.0],
    )
}

/// `dw² ⊕ Schwarzschild` with `ω = dw`, a T-test case.
pub fn product_dw() -> (ChartSpec, DistributionSpec, Vec<f64>) {
    let omega = (0..5).map(|i| ExprAst::Const(if i == 0 { 1.0 } else { 0.0 })).collect();
    (
        charts::product_w_schwarzschild(1.0),
        DistributionSpec::OneForm(omega),
        vec![0.0, 0.0, 4.0, 1.0, 1.0],
    )
}
