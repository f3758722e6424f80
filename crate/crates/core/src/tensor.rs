//! Dense coordinate-component tensors.
//!
//! Components are stored row-major with index order equal to slot order.
//! Every slot carries a [`Variance`]; contraction pairs one upper with one
//! lower slot. There is no summation mini-language: each contraction is an
//! explicit two-slot operation.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jets::{Jet, JetError};

/// The scalar ring a tensor is built over.
pub trait Scalar: Clone + fmt::Debug + Send + Sync {
    /// Additive identity compatible with `self` (same jet shape).
    fn zero_like(&self) -> Self;
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn scale(&self, s: f64) -> Self;
    /// The real value (jet constant term).
    fn value(&self) -> f64;
    fn is_finite(&self) -> bool;
}

impl Scalar for f64 {
    fn zero_like(&self) -> Self {
        0.0
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn scale(&self, s: f64) -> Self {
        self * s
    }
    fn value(&self) -> f64 {
        *self
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

impl Scalar for Jet {
    fn zero_like(&self) -> Self {
        Jet::constant(self.n(), self.order(), 0.0)
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn scale(&self, s: f64) -> Self {
        Jet::scale(self, s)
    }
    fn value(&self) -> f64 {
        Jet::value(self)
    }
    fn is_finite(&self) -> bool {
        Jet::is_finite(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variance {
    Up,
    Down,
}

impl Variance {
    pub fn flip(self) -> Variance {
        match self {
            Variance::Up => Variance::Down,
            Variance::Down => Variance::Up,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("expected {expected} components for dimension {dim} and rank {rank}, got {got}")]
    Shape {
        dim: usize,
        rank: usize,
        expected: usize,
        got: usize,
    },
    #[error("slot {slot} out of range for rank {rank}")]
    SlotOutOfRange { slot: usize, rank: usize },
    #[error("variance mismatch: {0}")]
    Variance(String),
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("metric argument must be a square rank-2 tensor")]
    NotAMetric,
    #[error("non-finite component")]
    NonFinite,
    #[error(transparent)]
    Jet(#[from] JetError),
}

#[derive(Clone, PartialEq)]
pub struct DenseTensor<S> {
    dim: usize,
    variance: Vec<Variance>,
    data: Vec<S>,
}

impl<S: Scalar> fmt::Debug for DenseTensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseTensor")
            .field("dim", &self.dim)
            .field("variance", &self.variance)
            .field("values", &self.data.iter().map(Scalar::value).collect::<Vec<_>>())
            .finish()
    }
}

/// Row-major strides for `rank` slots of extent `dim`.
fn strides(dim: usize, rank: usize) -> Vec<usize> {
    let mut s = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dim;
    }
    s
}

/// Iterates all multi-indices in row-major order.
pub fn multi_indices(dim: usize, rank: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = dim.pow(rank as u32);
    (0..total).map(move |mut flat| {
        let mut idx = vec![0; rank];
        for slot in (0..rank).rev() {
            idx[slot] = flat % dim;
            flat /= dim;
        }
        idx
    })
}

fn permutations(items: &[usize]) -> Vec<(Vec<usize>, i32)> {
    if items.len() <= 1 {
        return vec![(items.to_vec(), 1)];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        let sign = if i % 2 == 0 { 1 } else { -1 };
        for (mut p, s) in permutations(&rest) {
            p.insert(0, head);
            out.push((p, s * sign));
        }
    }
    out
}

impl<S: Scalar> DenseTensor<S> {
    pub fn new(dim: usize, variance: Vec<Variance>, data: Vec<S>) -> Result<Self, TensorError> {
        let rank = variance.len();
        let expected = dim.pow(rank as u32);
        if data.len() != expected {
            return Err(TensorError::Shape {
                dim,
                rank,
                expected,
                got: data.len(),
            });
        }
        if !data.iter().all(Scalar::is_finite) {
            return Err(TensorError::NonFinite);
        }
        Ok(DenseTensor {
            dim,
            variance,
            data,
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(dim: usize, variance: Vec<Variance>, mut f: impl FnMut(&[usize]) -> S) -> Self {
        let rank = variance.len();
        let data = multi_indices(dim, rank).map(|i| f(&i)).collect();
        DenseTensor {
            dim,
            variance,
            data,
        }
    }

    /// Rank-0 tensor on a `dim`-dimensional space.
    pub fn scalar(dim: usize, value: S) -> Self {
        DenseTensor {
            dim,
            variance: Vec::new(),
            data: vec![value],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.variance.len()
    }

    pub fn variance(&self) -> &[Variance] {
        &self.variance
    }

    pub fn components(&self) -> &[S] {
        &self.data
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.rank());
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    pub fn get(&self, idx: &[usize]) -> &S {
        &self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: S) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T) -> DenseTensor<T> {
        DenseTensor {
            dim: self.dim,
            variance: self.variance.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn values(&self) -> DenseTensor<f64> {
        self.map(Scalar::value)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.value().abs()))
    }

    /// Index and value of the largest component in absolute value.
    pub fn argmax_abs(&self) -> (Vec<usize>, f64) {
        let mut best = (vec![0; self.rank()], 0.0_f64);
        for (k, idx) in multi_indices(self.dim, self.rank()).enumerate() {
            let v = self.data[k].value();
            if v.abs() > best.1.abs() {
                best = (idx, v);
            }
        }
        best
    }

    fn check_same_shape(&self, other: &Self) -> Result<(), TensorError> {
        if self.dim != other.dim {
            return Err(TensorError::Dimension(self.dim, other.dim));
        }
        if self.variance != other.variance {
            return Err(TensorError::Variance(format!(
                "{:?} vs {:?}",
                self.variance, other.variance
            )));
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, TensorError> {
        self.check_same_shape(other)?;
        Ok(DenseTensor {
            dim: self.dim,
            variance: self.variance.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a.add(b)).collect(),
        })
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, TensorError> {
        self.check_same_shape(other)?;
        Ok(DenseTensor {
            dim: self.dim,
            variance: self.variance.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a.sub(b)).collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v.scale(s))
    }

    /// Sum over a paired upper/lower slot; result has rank `r - 2`.
    pub fn contract(&self, slot_a: usize, slot_b: usize) -> Result<Self, TensorError> {
        let rank = self.rank();
        for s in [slot_a, slot_b] {
            if s >= rank {
                return Err(TensorError::SlotOutOfRange { slot: s, rank });
            }
        }
        if slot_a == slot_b {
            return Err(TensorError::Variance("cannot contract a slot with itself".into()));
        }
        if self.variance[slot_a] == self.variance[slot_b] {
            return Err(TensorError::Variance(format!(
                "slots {slot_a} and {slot_b} are both {:?}",
                self.variance[slot_a]
            )));
        }
        let kept: Vec<usize> = (0..rank).filter(|s| *s != slot_a && *s != slot_b).collect();
        let variance: Vec<Variance> = kept.iter().map(|&s| self.variance[s]).collect();
        let st = strides(self.dim, rank);
        let dim = self.dim;
        let zero = self.data[0].zero_like();
        Ok(DenseTensor::from_fn(dim, variance, |idx| {
            let base: usize = kept.iter().zip(idx).map(|(&s, &i)| st[s] * i).sum();
            let mut acc = zero.clone();
            for k in 0..dim {
                acc = acc.add(&self.data[base + k * (st[slot_a] + st[slot_b])]);
            }
            acc
        }))
    }

    /// Outer product; slots of `self` come first.
    pub fn tensor_product(&self, other: &Self) -> Result<Self, TensorError> {
        if self.dim != other.dim && self.rank() > 0 && other.rank() > 0 {
            return Err(TensorError::Dimension(self.dim, other.dim));
        }
        let dim = if self.rank() > 0 { self.dim } else { other.dim };
        let mut variance = self.variance.clone();
        variance.extend_from_slice(&other.variance);
        let mut data = Vec::with_capacity(self.data.len() * other.data.len());
        for a in &self.data {
            for b in &other.data {
                data.push(a.mul(b));
            }
        }
        Ok(DenseTensor {
            dim,
            variance,
            data,
        })
    }

    /// Reorders slots: slot `i` of the result is slot `perm[i]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self, TensorError> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank {
            return Err(TensorError::SlotOutOfRange {
                slot: perm.len(),
                rank,
            });
        }
        for &p in perm {
            if p >= rank || seen[p] {
                return Err(TensorError::SlotOutOfRange { slot: p, rank });
            }
            seen[p] = true;
        }
        let variance = perm.iter().map(|&p| self.variance[p]).collect();
        let mut src = vec![0; rank];
        Ok(DenseTensor::from_fn(self.dim, variance, |idx| {
            for (i, &p) in perm.iter().enumerate() {
                src[p] = idx[i];
            }
            self.get(&src).clone()
        }))
    }

    fn check_group(&self, slots: &[usize]) -> Result<(), TensorError> {
        let rank = self.rank();
        for &s in slots {
            if s >= rank {
                return Err(TensorError::SlotOutOfRange { slot: s, rank });
            }
        }
        if let Some(&first) = slots.first() {
            if slots.iter().any(|&s| self.variance[s] != self.variance[first]) {
                return Err(TensorError::Variance(
                    "(anti)symmetrized slots must share variance".into(),
                ));
            }
        }
        Ok(())
    }

    fn symmetrize_with_sign(&self, slots: &[usize], alternating: bool) -> Result<Self, TensorError> {
        self.check_group(slots)?;
        let perms = permutations(slots);
        let norm = 1.0 / perms.len() as f64;
        let mut src = vec![0; self.rank()];
        let zero = self.data[0].zero_like();
        Ok(DenseTensor::from_fn(self.dim, self.variance.clone(), |idx| {
            let mut acc = zero.clone();
            for (perm, sign) in &perms {
                src.copy_from_slice(idx);
                for (target, &from) in slots.iter().zip(perm) {
                    src[*target] = idx[from];
                }
                let term = self.get(&src);
                acc = if alternating && *sign < 0 {
                    acc.sub(term)
                } else {
                    acc.add(term)
                };
            }
            acc.scale(norm)
        }))
    }

    /// `T_(a b ...)` with `1/k!` normalization.
    pub fn symmetrize(&self, slots: &[usize]) -> Result<Self, TensorError> {
        self.symmetrize_with_sign(slots, false)
    }

    /// `T_[a b ...]` with `1/k!` normalization.
    pub fn antisymmetrize(&self, slots: &[usize]) -> Result<Self, TensorError> {
        self.symmetrize_with_sign(slots, true)
    }

    /// Applies a rank-2 matrix to one slot: `out[..a..] = Σ_b m[a][b] t[..b..]`.
    /// The slot variance becomes `variance`.
    pub fn transform_slot(
        &self,
        slot: usize,
        m: &DenseTensor<S>,
        variance: Variance,
    ) -> Result<Self, TensorError> {
        let rank = self.rank();
        if slot >= rank {
            return Err(TensorError::SlotOutOfRange { slot, rank });
        }
        if m.rank() != 2 || m.dim != self.dim {
            return Err(TensorError::NotAMetric);
        }
        let mut var = self.variance.clone();
        var[slot] = variance;
        let st = strides(self.dim, rank)[slot];
        let dim = self.dim;
        let zero = self.data[0].zero_like();
        Ok(DenseTensor::from_fn(dim, var, |idx| {
            let a = idx[slot];
            let base = self.offset(idx) - a * st;
            let mut acc = zero.clone();
            for b in 0..dim {
                acc = acc.add(&m.data[a * dim + b].mul(&self.data[base + b * st]));
            }
            acc
        }))
    }

    /// Raises a lower slot with the inverse metric `g^ab`.
    pub fn raise_slot(&self, slot: usize, g_inv: &DenseTensor<S>) -> Result<Self, TensorError> {
        self.check_metric(g_inv, Variance::Up)?;
        self.check_slot_variance(slot, Variance::Down)?;
        self.transform_slot(slot, g_inv, Variance::Up)
    }

    /// Lowers an upper slot with the metric `g_ab`.
    pub fn lower_slot(&self, slot: usize, g: &DenseTensor<S>) -> Result<Self, TensorError> {
        self.check_metric(g, Variance::Down)?;
        self.check_slot_variance(slot, Variance::Up)?;
        self.transform_slot(slot, g, Variance::Down)
    }

    fn check_metric(&self, g: &DenseTensor<S>, v: Variance) -> Result<(), TensorError> {
        if g.rank() != 2 || g.dim != self.dim {
            return Err(TensorError::NotAMetric);
        }
        if g.variance != [v, v] {
            return Err(TensorError::Variance(format!(
                "metric argument must have variance ({v:?}, {v:?})"
            )));
        }
        Ok(())
    }

    fn check_slot_variance(&self, slot: usize, expected: Variance) -> Result<(), TensorError> {
        let rank = self.rank();
        if slot >= rank {
            return Err(TensorError::SlotOutOfRange { slot, rank });
        }
        if self.variance[slot] != expected {
            return Err(TensorError::Variance(format!(
                "slot {slot} is {:?}, expected {expected:?}",
                self.variance[slot]
            )));
        }
        Ok(())
    }
}

impl DenseTensor<Jet> {
    /// Minimum jet order across components.
    pub fn order(&self) -> u8 {
        self.data.iter().map(Jet::order).min().unwrap_or(0)
    }

    pub fn truncate(&self, order: u8) -> Self {
        self.map(|j| j.truncate(order))
    }

    /// `∂_a` of every component; the new slot is a leading lower index and
    /// the jet order drops by one.
    pub fn coordinate_gradient(&self) -> Result<Self, TensorError> {
        let order = self.order();
        if order == 0 {
            return Err(JetError::InsufficientOrder {
                requested: 1,
                available: 0,
            }
            .into());
        }
        let mut variance = vec![Variance::Down];
        variance.extend_from_slice(&self.variance);
        let inner = self.data.len();
        let mut data = Vec::with_capacity(self.dim * inner);
        for a in 0..self.dim {
            for c in &self.data {
                data.push(c.partial(a)?);
            }
        }
        Ok(DenseTensor {
            dim: self.dim,
            variance,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vt(dim: usize, variance: Vec<Variance>, data: Vec<f64>) -> DenseTensor<f64> {
        DenseTensor::new(dim, variance, data).unwrap()
    }

    fn identity(dim: usize) -> DenseTensor<f64> {
        DenseTensor::from_fn(dim, vec![Variance::Up, Variance::Down], |i| {
            if i[0] == i[1] {
                1.0
            } else {
                0.0
            }
        })
    }

    fn minkowski(up: bool) -> DenseTensor<f64> {
        let v = if up { Variance::Up } else { Variance::Down };
        DenseTensor::from_fn(4, vec![v, v], |i| match (i[0], i[1]) {
            (0, 0) => -1.0,
            (a, b) if a == b => 1.0,
            _ => 0.0,
        })
    }

    #[test]
    fn trace_of_identity() {
        let t = identity(4).contract(0, 1).unwrap();
        assert_eq!(t.rank(), 0);
        assert_eq!(t.components(), &[4.0]);
    }

    #[test]
    fn contraction_errors() {
        let g = minkowski(true);
        assert!(matches!(g.contract(0, 1), Err(TensorError::Variance(_))));
        assert!(matches!(
            identity(3).contract(0, 2),
            Err(TensorError::SlotOutOfRange { slot: 2, rank: 2 })
        ));
    }

    #[test]
    fn shape_is_checked() {
        assert!(matches!(
            DenseTensor::new(3, vec![Variance::Down], vec![1.0, 2.0]),
            Err(TensorError::Shape { expected: 3, got: 2, .. })
        ));
        assert!(matches!(
            DenseTensor::new(1, vec![Variance::Down], vec![f64::NAN]),
            Err(TensorError::NonFinite)
        ));
    }

    #[test]
    fn antisymmetrize_symmetric_is_zero() {
        let s = DenseTensor::from_fn(3, vec![Variance::Down; 2], |i| (i[0] + i[1]) as f64);
        assert_eq!(s.antisymmetrize(&[0, 1]).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn antisymmetrized_commutator() {
        let a = vt(3, vec![Variance::Down], vec![1.0, -2.0, 0.5]);
        let b = vt(3, vec![Variance::Down], vec![0.3, 4.0, -1.0]);
        let ab = a.tensor_product(&b).unwrap();
        let ba = b.tensor_product(&a).unwrap();
        let comm = ab.try_sub(&ba).unwrap();
        let anti = comm.antisymmetrize(&[0, 1]).unwrap();
        // explicit sum: ½(C_ij - C_ji) with C antisymmetric gives C back
        for i in 0..3 {
            for j in 0..3 {
                let explicit = 0.5 * (comm.get(&[i, j]) - comm.get(&[j, i]));
                assert!((anti.get(&[i, j]) - explicit).abs() < 1e-15);
                assert!((anti.get(&[i, j]) - comm.get(&[i, j])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn raise_on_scalar_fails() {
        let s = DenseTensor::scalar(4, 1.0);
        assert!(matches!(
            s.raise_slot(0, &minkowski(true)),
            Err(TensorError::NotAMetric) | Err(TensorError::SlotOutOfRange { .. })
        ));
        let v = vt(4, vec![Variance::Up], vec![1.0, 0.0, 0.0, 0.0]);
        assert!(v.raise_slot(0, &minkowski(true)).is_err());
        assert!(v.lower_slot(0, &minkowski(true)).is_err());
    }

    #[test]
    fn raise_lower_minkowski() {
        let w = vt(4, vec![Variance::Down], vec![0.3, -1.2, 2.5, 0.7]);
        let up = w.raise_slot(0, &minkowski(true)).unwrap();
        assert_eq!(up.components()[0], -0.3);
        let back = up.lower_slot(0, &minkowski(false)).unwrap();
        for (a, b) in back.components().iter().zip(w.components()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn gradient_of_constant_jets_is_zero() {
        let t = DenseTensor::from_fn(3, vec![Variance::Down; 2], |i| {
            Jet::constant(3, 2, (i[0] * 3 + i[1]) as f64)
        });
        let d = t.coordinate_gradient().unwrap();
        assert_eq!(d.rank(), 3);
        assert_eq!(d.order(), 1);
        assert_eq!(d.max_abs(), 0.0);
        let flat = t.truncate(0);
        assert!(flat.coordinate_gradient().is_err());
    }

    #[test]
    fn permute_reorders() {
        let t = DenseTensor::from_fn(2, vec![Variance::Down, Variance::Up, Variance::Down], |i| {
            (i[0] * 100 + i[1] * 10 + i[2]) as f64
        });
        let p = t.permute(&[2, 1, 0]).unwrap();
        assert_eq!(*p.get(&[1, 0, 0]), 1.0);
        assert_eq!(*p.get(&[0, 1, 1]), 110.0);
        assert!(t.permute(&[0, 0, 1]).is_err());
    }

    fn arb_tensor(dim: usize, rank: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-2.0..2.0f64, dim.pow(rank as u32))
    }

    proptest! {
        #[test]
        fn contraction_matches_loops(a in arb_tensor(3, 2), b in arb_tensor(3, 2)) {
            let ta = vt(3, vec![Variance::Up, Variance::Down], a.clone());
            let tb = vt(3, vec![Variance::Up, Variance::Down], b.clone());
            let c = ta.tensor_product(&tb).unwrap().contract(1, 2).unwrap();
            for i in 0..3 {
                for l in 0..3 {
                    let explicit: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 3 + l]).sum();
                    prop_assert!((c.get(&[i, l]) - explicit).abs() <= 1e-13);
                }
            }
        }

        #[test]
        fn symmetrizers_are_complementary_projections(a in arb_tensor(3, 3)) {
            let t = vt(3, vec![Variance::Down; 3], a);
            let s = t.symmetrize(&[0, 2]).unwrap();
            let w = t.antisymmetrize(&[0, 2]).unwrap();
            let sum = s.try_add(&w).unwrap();
            let ss = s.symmetrize(&[0, 2]).unwrap();
            for k in 0..27 {
                prop_assert!((sum.components()[k] - t.components()[k]).abs() <= 1e-14);
                prop_assert!((ss.components()[k] - s.components()[k]).abs() <= 1e-14);
            }
            let s3 = t.symmetrize(&[0, 1, 2]).unwrap();
            let s33 = s3.symmetrize(&[0, 1, 2]).unwrap();
            for k in 0..27 {
                prop_assert!((s3.components()[k] - s33.components()[k]).abs() <= 1e-14);
            }
        }

        #[test]
        fn raise_lower_round_trip(w in arb_tensor(3, 1), m in arb_tensor(3, 2)) {
            // g = I + 0.1 * (m + m^T)/2 is safely invertible
            let g = DenseTensor::from_fn(3, vec![Variance::Down; 2], |i| {
                let base = if i[0] == i[1] { 1.0 } else { 0.0 };
                base + 0.05 * (m[i[0] * 3 + i[1]] + m[i[1] * 3 + i[0]])
            });
            let gm = nalgebra::DMatrix::from_fn(3, 3, |i, j| *g.get(&[i, j]));
            let inv = gm.try_inverse().unwrap();
            let g_inv = DenseTensor::from_fn(3, vec![Variance::Up; 2], |i| inv[(i[0], i[1])]);
            let v = vt(3, vec![Variance::Down], w.clone());
            let back = v.raise_slot(0, &g_inv).unwrap().lower_slot(0, &g).unwrap();
            for k in 0..3 {
                prop_assert!((back.components()[k] - w[k]).abs() <= 1e-12);
            }
        }
    }
}
