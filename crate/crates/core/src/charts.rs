//! Ready-made charts used by tests, examples and benchmarks.

use std::collections::BTreeMap;

use crate::analysis::Lcg;
use crate::expr::ExprAst;
use crate::geometry::{ChartSpec, GeometryError};

/// `diag(−1, 1, …, 1)` on coordinates `x0 … x{n−1}`, time first.
pub fn minkowski(n: usize) -> ChartSpec {
    let coords: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    let metric = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            ExprAst::Const(match (i == j, i) {
                (false, _) => 0.0,
                (true, 0) => -1.0,
                _ => 1.0,
            })
        })
        .collect();
    ChartSpec::new(coords, BTreeMap::new(), metric).expect("valid chart")
}

/// Schwarzschild in `(t, r, θ, φ)` with mass parameter `M`.
pub fn schwarzschild(mass: f64) -> ChartSpec {
    ChartSpec::from_strings(
        &["t", "r", "th", "ph"],
        &[("M", mass)],
        &[
            (0, 0, "-(1 - 2*M/r)"),
            (1, 1, "1/(1 - 2*M/r)"),
            (2, 2, "r^2"),
            (3, 3, "r^2*sin(th)^2"),
        ],
    )
    .expect("valid chart")
}

/// `dw² + g_Schwarzschild` in `(w, t, r, θ, φ)`.
pub fn product_w_schwarzschild(mass: f64) -> ChartSpec {
    ChartSpec::from_strings(
        &["w", "t", "r", "th", "ph"],
        &[("M", mass)],
        &[
            (0, 0, "1"),
            (1, 1, "-(1 - 2*M/r)"),
            (2, 2, "1/(1 - 2*M/r)"),
            (3, 3, "r^2"),
            (4, 4, "r^2*sin(th)^2"),
        ],
    )
    .expect("valid chart")
}

/// `−dt² + f(t)² (dx² + dy² + dz² + du²)` with `f = 1 + t²/10`; flat slices.
pub fn flat_slices_5d() -> ChartSpec {
    let f2 = "(1 + t^2/10)^2";
    ChartSpec::from_strings(
        &["t", "x", "y", "z", "u"],
        &[],
        &[(0, 0, "-1"), (1, 1, f2), (2, 2, f2), (3, 3, f2), (4, 4, f2)],
    )
    .expect("valid chart")
}

/// `−dt² + f(t)² e^{2σ} δ₄` with `σ = a·sin(x)·y`; conformally flat,
/// curved slices.
pub fn conformally_flat_slices_5d(a: f64) -> ChartSpec {
    let c = "(1 + t^2/10)^2*exp(2*a*sin(x)*y)";
    ChartSpec::from_strings(
        &["t", "x", "y", "z", "u"],
        &[("a", a)],
        &[(0, 0, "-1"), (1, 1, c), (2, 2, c), (3, 3, c), (4, 4, c)],
    )
    .expect("valid chart")
}

/// Dense random polynomial metric: `g_ij = base_ij + Σ c·m(x)` over all
/// monomials `m` of degree ≤ 2 in the `n` coordinates, coefficients
/// uniform in `[−amplitude, amplitude]`.
pub fn random_polynomial_metric(
    seed: u64,
    base: &[f64],
    amplitude: f64,
) -> Result<ChartSpec, GeometryError> {
    let n = base.len();
    let mut rng = Lcg::new(seed);
    let mut monomials: Vec<Vec<usize>> = vec![vec![]];
    for i in 0..n {
        monomials.push(vec![i]);
    }
    for i in 0..n {
        for j in i..n {
            monomials.push(vec![i, j]);
        }
    }
    let mut metric = vec![ExprAst::Const(0.0); n * n];
    for i in 0..n {
        for j in i..n {
            let mut e = ExprAst::Const(if i == j { base[i] } else { 0.0 });
            for m in &monomials {
                let c = amplitude * (2.0 * rng.next_f64() - 1.0);
                let term = m.iter().fold(ExprAst::Const(c), |acc, &k| {
                    ExprAst::Mul(Box::new(acc), Box::new(ExprAst::Coord(k)))
                });
                e = ExprAst::Add(Box::new(e), Box::new(term));
            }
            metric[i * n + j] = e.clone();
            metric[j * n + i] = e;
        }
    }
    let coords = (0..n).map(|i| format!("x{i}")).collect();
    ChartSpec::new(coords, BTreeMap::new(), metric)
}

/// `n` points uniform in `[−half_width, half_width]^dim`.
pub fn random_points(seed: u64, dim: usize, count: usize, half_width: f64) -> Vec<Vec<f64>> {
    let mut rng = Lcg::new(seed);
    (0..count)
        .map(|_| (0..dim).map(|_| half_width * (2.0 * rng.next_f64() - 1.0)).collect())
        .collect()
}
