//! Truncated Fourier series on finite-dimensional complexified tori.
//!
//! A [`TorusFourier`] stores the coefficients `û(k)` of `Σ û(k) e^{ik·x}` for
//! harmonics `k ∈ Z^J` with `|k|_1 ≤ cutoff`. Every truncating operation hands
//! back the discarded mass so callers can budget it.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex64;
pub type Harmonic = Vec<i32>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FourierError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid index set: {0}")]
    InvalidIndexSet(String),
    #[error("Neumann series diverges: sup bound {bound} >= 1")]
    DivergentSeries { bound: f64 },
    #[error("mode index must be nonzero")]
    ZeroMode,
    #[error("invalid analyticity window: {0}")]
    InvalidWindow(String),
    #[error("series did not reach tolerance {tol} within {terms} terms")]
    SeriesStalled { tol: f64, terms: usize },
}

/// `|k|_1`.
pub fn l1(k: &[i32]) -> u32 {
    k.iter().map(|v| v.unsigned_abs()).sum()
}

/// `⟨k⟩ = max(1, |k|)`.
pub fn angle_bracket(k: &[i32]) -> f64 {
    l1(k).max(1) as f64
}

pub fn dot(k: &[i32], omega: &[f64]) -> f64 {
    k.iter().zip(omega).map(|(&a, &b)| a as f64 * b).sum()
}

/// Element of `Z \ {0}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModeIndex(i32);

impl ModeIndex {
    pub fn new(value: i32) -> Result<Self, FourierError> {
        if value == 0 {
            Err(FourierError::ZeroMode)
        } else {
            Ok(Self(value))
        }
    }

    pub fn value(self) -> i32 {
        self.0
    }
}

/// Ordered tangential sites with their nested stage history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TangentSet {
    members: Vec<i32>,
    stage_chain: Vec<Vec<i32>>,
}

impl TangentSet {
    pub fn new(stage_chain: Vec<Vec<i32>>) -> Result<Self, FourierError> {
        let mut chain = Vec::with_capacity(stage_chain.len());
        for stage in stage_chain {
            chain.push(validate_index_set(stage)?);
        }
        for pair in chain.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if a.len() >= b.len() || !a.iter().all(|i| b.contains(i)) {
                return Err(FourierError::InvalidIndexSet(format!(
                    "stage chain not strictly nested: {a:?} / {b:?}"
                )));
            }
        }
        let members = chain.last().cloned().unwrap_or_default();
        Ok(Self { members, stage_chain: chain })
    }

    /// Sites `{|i| ≤ max(1, v)}` with stages `{|i| ≤ 1} ⊂ {|i| ≤ 2} ⊂ …`.
    pub fn at_stage(v: usize) -> Self {
        let top = v.max(1) as i32;
        let chain = (1..=top).map(symmetric_sites).collect();
        Self::new(chain).expect("symmetric chain is nested")
    }

    pub fn members(&self) -> &[i32] {
        &self.members
    }

    pub fn stage_chain(&self) -> &[Vec<i32>] {
        &self.stage_chain
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// `{-m, …, -1, 1, …, m}` in ascending order.
pub fn symmetric_sites(m: i32) -> Vec<i32> {
    (-m..=m).filter(|&i| i != 0).collect()
}

fn validate_index_set(mut set: Vec<i32>) -> Result<Vec<i32>, FourierError> {
    if set.contains(&0) {
        return Err(FourierError::ZeroMode);
    }
    set.sort_unstable();
    if set.windows(2).any(|w| w[0] == w[1]) {
        return Err(FourierError::InvalidIndexSet(format!("repeated site in {set:?}")));
    }
    Ok(set)
}

/// `D(s, r)` in `P^{a,p}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticityWindow {
    pub s: f64,
    pub r: f64,
    pub a: f64,
    pub p: f64,
}

impl AnalyticityWindow {
    pub fn new(s: f64, r: f64, a: f64, p: f64) -> Result<Self, FourierError> {
        if !(s > 0.0) || !(r > 0.0) {
            return Err(FourierError::InvalidWindow(format!("need s, r > 0, got s={s}, r={r}")));
        }
        if !(a >= 0.0) || !(p > 1.5) {
            return Err(FourierError::InvalidWindow(format!("need a >= 0, p > 3/2, got a={a}, p={p}")));
        }
        Ok(Self { s, r, a, p })
    }

    /// `|j|^p e^{a|j|}`.
    pub fn weight(&self, j: i32) -> f64 {
        let aj = j.unsigned_abs() as f64;
        aj.powf(self.p) * (self.a * aj).exp()
    }

    /// `|j|^{p-1} e^{a|j|}`.
    pub fn weight_lowered(&self, j: i32) -> f64 {
        let aj = j.unsigned_abs() as f64;
        aj.powf(self.p - 1.0) * (self.a * aj).exp()
    }
}

/// Sparse truncated Fourier series on `T^J`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusFourier {
    index_set: Vec<i32>,
    cutoff: u32,
    coeffs: BTreeMap<Harmonic, C64>,
}

impl TorusFourier {
    pub fn new(index_set: Vec<i32>, cutoff: u32) -> Result<Self, FourierError> {
        Ok(Self { index_set: validate_index_set(index_set)?, cutoff, coeffs: BTreeMap::new() })
    }

    pub fn constant(index_set: Vec<i32>, cutoff: u32, c: C64) -> Result<Self, FourierError> {
        let mut f = Self::new(index_set, cutoff)?;
        let zero = vec![0; f.dim()];
        f.insert(zero, c);
        Ok(f)
    }

    /// Single harmonic `c e^{ik·x}`.
    pub fn mode(index_set: Vec<i32>, cutoff: u32, k: Harmonic, c: C64) -> Result<Self, FourierError> {
        let mut f = Self::new(index_set, cutoff)?;
        if k.len() != f.dim() {
            return Err(FourierError::DimensionMismatch { expected: f.dim(), got: k.len() });
        }
        f.insert(k, c);
        Ok(f)
    }

    /// Same torus and cutoff, no coefficients.
    pub fn zero_like(&self) -> Self {
        Self { index_set: self.index_set.clone(), cutoff: self.cutoff, coeffs: BTreeMap::new() }
    }

    pub fn with_cutoff(&self, cutoff: u32) -> (Self, f64) {
        let mut out = Self { index_set: self.index_set.clone(), cutoff, coeffs: BTreeMap::new() };
        let mut dropped = 0.0;
        for (k, c) in &self.coeffs {
            dropped += out.insert(k.clone(), *c);
        }
        (out, dropped)
    }

    pub fn dim(&self) -> usize {
        self.index_set.len()
    }

    pub fn index_set(&self) -> &[i32] {
        &self.index_set
    }

    pub fn cutoff(&self) -> u32 {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.values().all(|c| *c == C64::new(0.0, 0.0))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Harmonic, &C64)> {
        self.coeffs.iter()
    }

    pub fn coeff(&self, k: &[i32]) -> C64 {
        self.coeffs.get(k).copied().unwrap_or_default()
    }

    pub fn coeff_mut(&mut self, k: &[i32]) -> Option<&mut C64> {
        self.coeffs.get_mut(k)
    }

    /// Adds `c` at `k`; returns `|c|` if `k` lies beyond the cutoff (and is dropped).
    pub fn insert(&mut self, k: Harmonic, c: C64) -> f64 {
        debug_assert_eq!(k.len(), self.dim());
        if l1(&k) > self.cutoff {
            return c.norm();
        }
        *self.coeffs.entry(k).or_default() += c;
        0.0
    }

    pub fn set(&mut self, k: Harmonic, c: C64) {
        debug_assert_eq!(k.len(), self.dim());
        if l1(&k) <= self.cutoff {
            self.coeffs.insert(k, c);
        }
    }

    /// Removes coefficients with modulus `≤ tol`.
    pub fn prune(&mut self, tol: f64) {
        self.coeffs.retain(|_, c| c.norm() > tol);
    }

    pub fn max_mode(&self) -> u32 {
        self.coeffs.keys().map(|k| l1(k)).max().unwrap_or(0)
    }

    /// `Σ û(k) e^{ik·x}`.
    pub fn eval(&self, x: &[C64]) -> Result<C64, FourierError> {
        if x.len() != self.dim() {
            return Err(FourierError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let i = C64::new(0.0, 1.0);
        Ok(self
            .coeffs
            .iter()
            .map(|(k, c)| {
                let phase: C64 = k.iter().zip(x).map(|(&kj, &xj)| xj * kj as f64).sum();
                c * (i * phase).exp()
            })
            .sum())
    }

    /// `‖u‖_{s,τ} = Σ |û(k)| |k|^τ e^{|k|s}`, with `|0|^0 = 1`.
    pub fn weighted_norm(&self, s: f64, tau: f64) -> f64 {
        self.coeffs
            .iter()
            .map(|(k, c)| {
                let n = l1(k) as f64;
                let w = if n == 0.0 {
                    if tau > 0.0 {
                        0.0
                    } else {
                        1.0
                    }
                } else {
                    n.powf(tau)
                };
                c.norm() * w * (n * s).exp()
            })
            .sum()
    }

    /// `Σ |û(k)| e^{|k|s}`, an upper bound for the sup over the strip `|Im x| ≤ s`.
    pub fn sup_norm_bound(&self, s: f64) -> f64 {
        self.coeffs.iter().map(|(k, c)| c.norm() * (l1(k) as f64 * s).exp()).sum()
    }

    /// Expresses `self` over a superset of its sites.
    pub fn embed(&self, target: &[i32]) -> Result<Self, FourierError> {
        if target == self.index_set.as_slice() {
            return Ok(self.clone());
        }
        let target = validate_index_set(target.to_vec())?;
        let mut pos = Vec::with_capacity(self.dim());
        for site in &self.index_set {
            match target.iter().position(|t| t == site) {
                Some(p) => pos.push(p),
                None => {
                    return Err(FourierError::InvalidIndexSet(format!(
                        "site {site} missing from target {target:?}"
                    )))
                }
            }
        }
        let mut out = Self { index_set: target, cutoff: self.cutoff, coeffs: BTreeMap::new() };
        for (k, c) in &self.coeffs {
            let mut kk = vec![0; out.dim()];
            for (src, &p) in pos.iter().enumerate() {
                kk[p] = k[src];
            }
            out.coeffs.insert(kk, *c);
        }
        Ok(out)
    }

    /// Restricts to a subset of sites, failing if a dropped site carries a nonzero harmonic.
    pub fn restrict(&self, target: &[i32]) -> Result<Self, FourierError> {
        let target = validate_index_set(target.to_vec())?;
        let mut pos = Vec::with_capacity(target.len());
        for site in &target {
            match self.index_set.iter().position(|t| t == site) {
                Some(p) => pos.push(p),
                None => return Err(FourierError::InvalidIndexSet(format!("site {site} not present"))),
            }
        }
        let mut out = Self { index_set: target, cutoff: self.cutoff, coeffs: BTreeMap::new() };
        for (k, c) in &self.coeffs {
            let kept: i64 = pos.iter().map(|&p| k[p].unsigned_abs() as i64).sum();
            if kept != l1(k) as i64 {
                return Err(FourierError::InvalidIndexSet(format!("harmonic {k:?} uses a dropped site")));
            }
            out.coeffs.insert(pos.iter().map(|&p| k[p]).collect(), *c);
        }
        Ok(out)
    }

    fn aligned(&self, other: &Self) -> Result<(Self, Self), FourierError> {
        if self.index_set == other.index_set {
            return Ok((self.clone(), other.clone()));
        }
        let mut union = self.index_set.clone();
        union.extend(other.index_set.iter().copied().filter(|i| !self.index_set.contains(i)));
        let union = validate_index_set(union)?;
        Ok((self.embed(&union)?, other.embed(&union)?))
    }

    pub fn add(&self, other: &Self) -> Result<Self, FourierError> {
        self.axpy(C64::new(1.0, 0.0), other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, FourierError> {
        self.axpy(C64::new(-1.0, 0.0), other)
    }

    /// `self + a·other`, cutoff the larger of the two.
    pub fn axpy(&self, a: C64, other: &Self) -> Result<Self, FourierError> {
        let (mut x, y) = self.aligned(other)?;
        x.cutoff = x.cutoff.max(y.cutoff);
        for (k, c) in y.coeffs {
            *x.coeffs.entry(k).or_default() += a * c;
        }
        Ok(x)
    }

    /// In-place `self += a·other` for identical sites.
    pub fn add_assign_scaled(&mut self, a: C64, other: &Self) {
        debug_assert_eq!(self.index_set, other.index_set);
        for (k, c) in &other.coeffs {
            self.insert(k.clone(), a * c);
        }
    }

    pub fn scale(&self, a: C64) -> Self {
        let mut out = self.clone();
        for c in out.coeffs.values_mut() {
            *c *= a;
        }
        out
    }

    /// Truncated product. Returns the product and the discarded coefficient mass.
    pub fn mul(&self, other: &Self, cutoff: u32) -> Result<(Self, f64), FourierError> {
        let (x, y) = self.aligned(other)?;
        let mut out = Self { index_set: x.index_set.clone(), cutoff, coeffs: BTreeMap::new() };
        let mut discarded: BTreeMap<Harmonic, C64> = BTreeMap::new();
        let mut kk = vec![0; x.dim()];
        for (ka, ca) in &x.coeffs {
            for (kb, cb) in &y.coeffs {
                for ((o, a), b) in kk.iter_mut().zip(ka).zip(kb) {
                    *o = a + b;
                }
                let c = ca * cb;
                if l1(&kk) <= cutoff {
                    *out.coeffs.entry(kk.clone()).or_default() += c;
                } else {
                    *discarded.entry(kk.clone()).or_default() += c;
                }
            }
        }
        Ok((out, discarded.values().map(|c| c.norm()).sum()))
    }

    /// Like [`mul`](Self::mul) but the discarded mass is weighted by `e^{|k|s}`.
    pub fn mul_strip(&self, other: &Self, cutoff: u32, s: f64) -> Result<(Self, f64), FourierError> {
        let (x, y) = self.aligned(other)?;
        let mut out = Self { index_set: x.index_set.clone(), cutoff, coeffs: BTreeMap::new() };
        let mut tail = 0.0;
        let mut kk = vec![0; x.dim()];
        for (ka, ca) in &x.coeffs {
            for (kb, cb) in &y.coeffs {
                for ((o, a), b) in kk.iter_mut().zip(ka).zip(kb) {
                    *o = a + b;
                }
                let c = ca * cb;
                let n = l1(&kk);
                if n <= cutoff {
                    *out.coeffs.entry(kk.clone()).or_default() += c;
                } else {
                    tail += c.norm() * (n as f64 * s).exp();
                }
            }
        }
        Ok((out, tail))
    }

    /// `(1 + a)^{-1}` by the Neumann series `Σ (-a)^m`, truncated at `cutoff`.
    pub fn reciprocal_one_plus(a: &Self, cutoff: u32, tol: f64, s: f64) -> Result<(Self, f64), FourierError> {
        let bound = a.sup_norm_bound(s);
        if bound >= 1.0 {
            return Err(FourierError::DivergentSeries { bound });
        }
        let neg = a.scale(C64::new(-1.0, 0.0));
        let mut term = Self::constant(a.index_set.clone(), cutoff, C64::new(1.0, 0.0))?;
        let mut sum = term.clone();
        let mut tail = 0.0;
        for _ in 0..10_000 {
            let (next, lost) = term.mul_strip(&neg, cutoff, s)?;
            tail += lost;
            term = next;
            sum.add_assign_scaled(C64::new(1.0, 0.0), &term);
            let inc = term.sup_norm_bound(s);
            if inc < tol {
                // geometric remainder of the untaken terms
                tail += inc * bound / (1.0 - bound);
                return Ok((sum, tail));
            }
        }
        Err(FourierError::SeriesStalled { tol, terms: 10_000 })
    }

    /// `∂_ω f`: coefficient `k` becomes `i⟨k,ω⟩ û(k)`.
    pub fn d_omega(&self, omega: &[f64]) -> Result<Self, FourierError> {
        if omega.len() != self.dim() {
            return Err(FourierError::DimensionMismatch { expected: self.dim(), got: omega.len() });
        }
        let mut out = self.zero_like();
        for (k, c) in &self.coeffs {
            let d = dot(k, omega);
            if d != 0.0 {
                out.coeffs.insert(k.clone(), c * C64::new(0.0, d));
            }
        }
        Ok(out)
    }

    /// `∂/∂x_j` for the site at position `pos`.
    pub fn partial(&self, pos: usize) -> Self {
        let mut out = self.zero_like();
        for (k, c) in &self.coeffs {
            if k[pos] != 0 {
                out.coeffs.insert(k.clone(), c * C64::new(0.0, k[pos] as f64));
            }
        }
        out
    }

    /// `([u], ũ)`.
    pub fn average_and_tilde(&self) -> (C64, Self) {
        let zero = vec![0; self.dim()];
        let avg = self.coeff(&zero);
        let mut tilde = self.clone();
        tilde.coeffs.remove(&zero);
        (avg, tilde)
    }

    /// `Γ_K f` together with the strip-`s` sup bound of the removed tail.
    pub fn gamma_truncate(&self, k_cut: u32, s: f64) -> (Self, f64) {
        let mut out = self.clone();
        out.cutoff = out.cutoff.min(k_cut);
        let mut tail = 0.0;
        out.coeffs.retain(|k, c| {
            let n = l1(k);
            if n > k_cut {
                tail += c.norm() * (n as f64 * s).exp();
                false
            } else {
                true
            }
        });
        (out, tail)
    }

    /// `û(-k) = conj û(k)` for all stored `k`, up to `tol`.
    pub fn is_real_symmetric(&self, tol: f64) -> bool {
        self.coeffs.iter().all(|(k, c)| {
            let neg: Harmonic = k.iter().map(|v| -v).collect();
            (self.coeff(&neg) - c.conj()).norm() <= tol
        })
    }

    /// `e^{f}` by its Taylor series, truncated at `cutoff`.
    pub fn exp(&self, cutoff: u32, s: f64, tol: f64) -> Result<(Self, f64), FourierError> {
        let mut term = Self::constant(self.index_set.clone(), cutoff, C64::new(1.0, 0.0))?;
        let mut sum = term.clone();
        let mut tail = 0.0;
        let norm = self.sup_norm_bound(s);
        for m in 1..10_000usize {
            let (next, lost) = term.mul_strip(self, cutoff, s)?;
            tail += lost;
            term = next.scale(C64::new(1.0 / m as f64, 0.0));
            sum.add_assign_scaled(C64::new(1.0, 0.0), &term);
            let inc = term.sup_norm_bound(s);
            if inc < tol && (m as f64) > norm {
                tail += inc * norm / (m as f64 + 1.0 - norm).max(1.0);
                return Ok((sum, tail));
            }
        }
        Err(FourierError::SeriesStalled { tol, terms: 10_000 })
    }

    /// `f(x + b(x) ω) = Σ_m b^m ∂_ω^m f / m!`.
    pub fn compose_shift(
        &self,
        b: &Self,
        omega: &[f64],
        cutoff: u32,
        s: f64,
        tol: f64,
    ) -> Result<(Self, f64), FourierError> {
        let (f, b) = self.aligned(b)?;
        if omega.len() != f.dim() {
            return Err(FourierError::DimensionMismatch { expected: f.dim(), got: omega.len() });
        }
        let (mut sum, mut tail) = f.with_cutoff(cutoff);
        let mut deriv = f.clone();
        let mut power = Self::constant(f.index_set.clone(), cutoff, C64::new(1.0, 0.0))?;
        let mut fact = 1.0;
        for m in 1..200usize {
            deriv = deriv.d_omega(omega)?;
            let (p, lost) = power.mul_strip(&b, cutoff, s)?;
            tail += lost;
            power = p;
            fact *= m as f64;
            let (term, lost) = power.mul_strip(&deriv, cutoff, s)?;
            tail += lost / fact;
            let term = term.scale(C64::new(1.0 / fact, 0.0));
            sum.add_assign_scaled(C64::new(1.0, 0.0), &term);
            let inc = term.sup_norm_bound(s);
            if inc < tol && deriv.sup_norm_bound(s) * power.sup_norm_bound(s) / fact < tol {
                return Ok((sum, tail));
            }
            if deriv.is_zero() || power.is_zero() {
                return Ok((sum, tail));
            }
        }
        Err(FourierError::SeriesStalled { tol, terms: 200 })
    }

    /// Largest coefficient modulus.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// `sqrt(Σ |û(k)|²)`.
    pub fn l2(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

#[derive(Serialize, Deserialize)]
struct CoeffEntry {
    k: Vec<i32>,
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct TorusFourierRepr {
    index_set: Vec<i32>,
    cutoff: u32,
    coeffs: Vec<CoeffEntry>,
}

impl Serialize for TorusFourier {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TorusFourierRepr {
            index_set: self.index_set.clone(),
            cutoff: self.cutoff,
            coeffs: self
                .coeffs
                .iter()
                .map(|(k, c)| CoeffEntry { k: k.clone(), re: c.re, im: c.im })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TorusFourier {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let repr = TorusFourierRepr::deserialize(deserializer)?;
        let mut f = TorusFourier::new(repr.index_set, repr.cutoff).map_err(D::Error::custom)?;
        for e in repr.coeffs {
            if e.k.len() != f.dim() {
                return Err(D::Error::custom("harmonic length differs from index set"));
            }
            if l1(&e.k) > f.cutoff {
                return Err(D::Error::custom(format!("harmonic {:?} exceeds cutoff", e.k)));
            }
            f.coeffs.insert(e.k, C64::new(e.re, e.im));
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn one_d(terms: &[(i32, C64)], cutoff: u32) -> TorusFourier {
        let mut f = TorusFourier::new(vec![1], cutoff).unwrap();
        for &(k, v) in terms {
            f.insert(vec![k], v);
        }
        f
    }

    #[test]
    fn eval_constant_and_single_mode() {
        let f = TorusFourier::constant(vec![1], 3, c(5.0, 0.0)).unwrap();
        assert_eq!(f.eval(&[c(0.3, -0.2)]).unwrap(), c(5.0, 0.0));
        let g = one_d(&[(1, c(1.0, 0.0))], 3);
        assert!((g.eval(&[c(0.0, 0.0)]).unwrap() - c(1.0, 0.0)).norm() < 1e-15);
        let s = 0.7;
        assert!((g.eval(&[c(0.0, s)]).unwrap() - c((-s).exp(), 0.0)).norm() < 1e-15);
        assert!(matches!(g.eval(&[]), Err(FourierError::DimensionMismatch { .. })));
    }

    #[test]
    fn weighted_norm_examples() {
        let f = one_d(&[(1, c(1.0, 0.0))], 4);
        assert!((f.weighted_norm(1.0, 2.0) - E).abs() < 1e-14);
        assert_eq!(TorusFourier::new(vec![1], 4).unwrap().weighted_norm(1.0, 2.0), 0.0);
        let g = one_d(&[(2, c(3.0, 0.0)), (-1, c(1.0, 0.0))], 4);
        // 3·2·e^{1} + 1·1·e^{0.5}, summed by hand
        let oracle = 16.30969097_f64 + 1.64872127_f64;
        assert!((g.weighted_norm(0.5, 1.0) - oracle).abs() < 1e-7);
    }

    #[test]
    fn zero_mode_convention() {
        let f = TorusFourier::constant(vec![1], 2, c(3.0, 0.0)).unwrap();
        assert_eq!(f.weighted_norm(0.5, 1.0), 0.0);
        assert_eq!(f.weighted_norm(0.5, 0.0), 3.0);
    }

    #[test]
    fn sup_bound_examples() {
        let f = one_d(&[(1, c(1.0, 0.0))], 2);
        assert!((f.sup_norm_bound(1.0) - E).abs() < 1e-14);
        let k = TorusFourier::constant(vec![1, 2], 2, c(0.0, -2.0)).unwrap();
        assert_eq!(k.sup_norm_bound(3.0), 2.0);
    }

    #[test]
    fn mul_examples() {
        let f = one_d(&[(1, c(1.0, 0.0))], 4);
        let g = one_d(&[(-1, c(1.0, 0.0))], 4);
        let (p, res) = f.mul(&g, 0).unwrap();
        assert_eq!(p.coeff(&[0]), c(1.0, 0.0));
        assert_eq!(p.len(), 1);
        assert_eq!(res, 0.0);

        let one = TorusFourier::constant(vec![1], 4, c(1.0, 0.0)).unwrap();
        let h = one_d(&[(2, c(0.5, 0.1)), (-3, c(0.0, 1.0))], 4);
        assert_eq!(one.mul(&h, 4).unwrap().0, h);

        let (sq, res) = f.mul(&f, 1).unwrap();
        assert!(sq.is_zero());
        assert_eq!(res, 1.0);
    }

    #[test]
    fn mul_unions_sites() {
        let f = TorusFourier::mode(vec![1], 4, vec![1], c(1.0, 0.0)).unwrap();
        let g = TorusFourier::mode(vec![-1], 4, vec![2], c(2.0, 0.0)).unwrap();
        let (p, _) = f.mul(&g, 4).unwrap();
        assert_eq!(p.index_set(), &[-1, 1]);
        assert_eq!(p.coeff(&[2, 1]), c(2.0, 0.0));
    }

    #[test]
    fn reciprocal_examples() {
        let zero = TorusFourier::new(vec![1], 8).unwrap();
        let (r, _) = TorusFourier::reciprocal_one_plus(&zero, 8, 1e-15, 0.5).unwrap();
        assert_eq!(r.coeff(&[0]), c(1.0, 0.0));

        let cst = TorusFourier::constant(vec![1], 8, c(0.3, 0.0)).unwrap();
        let (r, _) = TorusFourier::reciprocal_one_plus(&cst, 8, 1e-16, 0.5).unwrap();
        assert!((r.coeff(&[0]) - c(1.0 / 1.3, 0.0)).norm() < 1e-15);

        let a = one_d(&[(1, c(0.1, 0.0))], 8);
        let (r, _) = TorusFourier::reciprocal_one_plus(&a, 8, 1e-16, 0.0).unwrap();
        let one_plus = a.add(&TorusFourier::constant(vec![1], 8, c(1.0, 0.0)).unwrap()).unwrap();
        let (prod, _) = r.mul(&one_plus, 8).unwrap();
        for (k, v) in prod.iter() {
            let want = if k[0] == 0 { c(1.0, 0.0) } else { c(0.0, 0.0) };
            assert!((v - want).norm() < 1e-12, "k={k:?} v={v}");
        }

        let big = one_d(&[(1, c(0.9, 0.0))], 8);
        assert!(matches!(
            TorusFourier::reciprocal_one_plus(&big, 8, 1e-12, 0.5),
            Err(FourierError::DivergentSeries { .. })
        ));
    }

    #[test]
    fn d_omega_examples() {
        let f = one_d(&[(1, c(1.0, 0.0))], 3);
        let d = f.d_omega(&[2.5]).unwrap();
        assert_eq!(d.coeff(&[1]), c(0.0, 2.5));
        let k = TorusFourier::constant(vec![1], 3, c(4.0, 0.0)).unwrap();
        assert!(k.d_omega(&[1.3]).unwrap().is_zero());
        assert!(f.d_omega(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn average_and_tilde_examples() {
        let f = one_d(&[(0, c(3.0, 0.0)), (1, c(1.0, 0.0))], 2);
        let (avg, tilde) = f.average_and_tilde();
        assert_eq!(avg, c(3.0, 0.0));
        assert_eq!(tilde, one_d(&[(1, c(1.0, 0.0))], 2));
        let g = one_d(&[(1, c(1.0, 0.0))], 2);
        assert_eq!(g.average_and_tilde().0, c(0.0, 0.0));
        let back = tilde.add(&TorusFourier::constant(vec![1], 2, avg).unwrap()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn gamma_truncate_examples() {
        let f = one_d(&[(1, c(1.0, 0.0)), (-2, c(0.5, 0.0))], 6);
        let (g, tail) = f.gamma_truncate(6, 0.3);
        assert_eq!(g, f);
        assert_eq!(tail, 0.0);

        let h = one_d(&[(5, c(1.0, 0.0))], 6);
        let s = 0.4;
        let (g, tail) = h.gamma_truncate(4, s);
        assert!(g.is_zero());
        assert!((tail - (5.0 * s).exp()).abs() < 1e-12);

        let rho: f64 = 0.3;
        let mut geo = TorusFourier::new(vec![1], 20).unwrap();
        for k in -20..=20 {
            geo.insert(vec![k], c(rho.powi(k.abs()), 0.0));
        }
        let (_, tail) = geo.gamma_truncate(3, s);
        let mut oracle = 0.0;
        for k in 4..=20 {
            oracle += 2.0 * rho.powi(k) * (k as f64 * s).exp();
        }
        assert!((tail - oracle).abs() < 1e-14 * oracle.max(1.0));
    }

    #[test]
    fn sup_bound_dominates_sampled_strip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut f = TorusFourier::new(vec![1, 2], 6).unwrap();
        // positive amplitudes on one orthant, so the majorant is attained at a corner
        while f.len() < 10 {
            let k = vec![rng.random_range(0..=3), rng.random_range(0..=3)];
            f.set(k, c(rng.random_range(0.1..1.0), 0.0));
        }
        let s = 0.2;
        let mut best: f64 = 0.0;
        for _ in 0..10_000 {
            let x: Vec<C64> = (0..2)
                .map(|_| c(rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(-s..=s)))
                .collect();
            best = best.max(f.eval(&x).unwrap().norm());
        }
        let bound = f.sup_norm_bound(s);
        assert!(bound >= best);
        assert!(bound <= 1.5 * best, "bound {bound} sampled {best}");
    }

    #[test]
    fn compose_shift_matches_pointwise() {
        let f = one_d(&[(1, c(0.4, 0.1)), (-2, c(0.2, 0.0)), (0, c(1.0, 0.0))], 30);
        let b = one_d(&[(1, c(0.01, 0.0)), (-1, c(0.01, 0.0))], 30);
        let omega = [1.3];
        let (g, _) = f.compose_shift(&b, &omega, 30, 0.1, 1e-16).unwrap();
        for x in [0.1, 1.7, -2.4] {
            let xc = [c(x, 0.05)];
            let shift = b.eval(&xc).unwrap() * omega[0];
            let want = f.eval(&[xc[0] + shift]).unwrap();
            assert!((g.eval(&xc).unwrap() - want).norm() < 1e-13);
        }
    }

    #[test]
    fn exp_matches_pointwise() {
        let f = one_d(&[(1, c(0.0, 0.05)), (-1, c(0.0, 0.05))], 30);
        let (e, _) = f.exp(30, 0.2, 1e-17).unwrap();
        let x = [c(0.8, 0.1)];
        assert!((e.eval(&x).unwrap() - f.eval(&x).unwrap().exp()).norm() < 1e-14);
    }

    #[test]
    fn json_round_trip() {
        let f = TorusFourier::mode(vec![-1, 1], 3, vec![1, -1], c(0.5, -0.25)).unwrap();
        let s = serde_json::to_string(&f).unwrap();
        assert!(s.contains("\"index_set\":[-1,1]"));
        assert!(s.contains("\"cutoff\":3"));
        assert!(s.contains("\"re\":0.5"));
        let g: TorusFourier = serde_json::from_str(&s).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn index_set_validation() {
        assert!(matches!(TorusFourier::new(vec![0, 1], 2), Err(FourierError::ZeroMode)));
        assert!(TorusFourier::new(vec![1, 1], 2).is_err());
        assert!(ModeIndex::new(0).is_err());
        assert_eq!(ModeIndex::new(-3).unwrap().value(), -3);
        let t = TangentSet::at_stage(3);
        assert_eq!(t.members(), &[-3, -2, -1, 1, 2, 3]);
        assert_eq!(t.stage_chain().len(), 3);
        assert_eq!(TangentSet::at_stage(0).members(), &[-1, 1]);
        assert!(TangentSet::new(vec![vec![1, 2], vec![1, 2]]).is_err());
    }
}
