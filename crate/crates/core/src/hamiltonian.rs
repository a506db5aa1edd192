//! Hamiltonian polynomials `Σ f(x) y^l z^α z̄^β` on `T^n × C^n × ℓ^{a,p} × ℓ^{a,p}`.
//!
//! Terms are grouped by [`Channel`] (the `(l, α, β)` part); each channel owns a
//! [`TorusFourier`] coefficient in the angles. The Poisson structure is
//! `{P,F} = Σ_j (P_{x_j}F_{y_j} − P_{y_j}F_{x_j}) + 2i Σ_m (P_{z_m}F_{z̄_m} − P_{z̄_m}F_{z_m})`,
//! so that `X_P = (P_y, −P_x, 2iP_{z̄}, −2iP_z)` and `z = √(2(I+y)) e^{ix}` is canonical.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fourier::{l1, AnalyticityWindow, FourierError, Harmonic, TorusFourier, C64};
use crate::measure::ParameterPoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HamiltonianError {
    #[error("tangent sets differ: {0:?} vs {1:?}")]
    TangentMismatch(Vec<i32>, Vec<i32>),
    #[error("mode {0} is not a normal mode (|j| ≤ {1}, not tangent)")]
    NotNormal(i32, i32),
    #[error("parameter pair has zero distance")]
    DegeneratePair,
    #[error("empty list of parameter pairs")]
    NoPairs,
    #[error(transparent)]
    Fourier(#[from] FourierError),
}

/// `(l, α, β)` of a monomial `y^l z^α z̄^β`; sparse `(mode, power)` lists are sorted by mode.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Channel {
    pub l: Vec<u8>,
    pub z: Vec<(i32, u8)>,
    pub zb: Vec<(i32, u8)>,
}

impl Channel {
    pub fn constant(n: usize) -> Self {
        Self { l: vec![0; n], z: Vec::new(), zb: Vec::new() }
    }

    pub fn new(l: Vec<u8>, z: &[(i32, u8)], zb: &[(i32, u8)]) -> Self {
        Self { l, z: normalize(z), zb: normalize(zb) }
    }

    /// `2|l| + |α| + |β|`.
    pub fn degree(&self) -> u32 {
        2 * self.l.iter().map(|&v| v as u32).sum::<u32>() + power_sum(&self.z) + power_sum(&self.zb)
    }

    pub fn y_degree(&self) -> u32 {
        self.l.iter().map(|&v| v as u32).sum()
    }

    pub fn z_power(&self, m: i32) -> u8 {
        power_of(&self.z, m)
    }

    pub fn zb_power(&self, m: i32) -> u8 {
        power_of(&self.zb, m)
    }

    pub fn is_constant(&self) -> bool {
        self.z.is_empty() && self.zb.is_empty() && self.l.iter().all(|&v| v == 0)
    }

    /// Channel of the conjugate monomial, `(l, β, α)`.
    pub fn conjugate(&self) -> Self {
        Self { l: self.l.clone(), z: self.zb.clone(), zb: self.z.clone() }
    }

    fn product(&self, other: &Self) -> Self {
        Self {
            l: self.l.iter().zip(&other.l).map(|(a, b)| a + b).collect(),
            z: merge(&self.z, &other.z),
            zb: merge(&self.zb, &other.zb),
        }
    }

    fn lower_y(mut self, pos: usize) -> Self {
        self.l[pos] -= 1;
        self
    }

    fn lower_pair(mut self, m: i32) -> Self {
        decrement(&mut self.z, m);
        decrement(&mut self.zb, m);
        self
    }

    /// `Σ_m m(α_m − β_m)` and `Σ_m (α_m − β_m)`.
    fn normal_sums(&self) -> (i64, i64) {
        let mut mom = 0i64;
        let mut mass = 0i64;
        for &(m, p) in &self.z {
            mom += m as i64 * p as i64;
            mass += p as i64;
        }
        for &(m, p) in &self.zb {
            mom -= m as i64 * p as i64;
            mass -= p as i64;
        }
        (mom, mass)
    }
}

fn power_sum(v: &[(i32, u8)]) -> u32 {
    v.iter().map(|&(_, p)| p as u32).sum()
}

fn power_of(v: &[(i32, u8)], m: i32) -> u8 {
    v.binary_search_by_key(&m, |e| e.0).map(|i| v[i].1).unwrap_or(0)
}

fn normalize(v: &[(i32, u8)]) -> Vec<(i32, u8)> {
    let mut map: BTreeMap<i32, u8> = BTreeMap::new();
    for &(m, p) in v {
        *map.entry(m).or_default() += p;
    }
    map.into_iter().filter(|&(_, p)| p > 0).collect()
}

fn merge(a: &[(i32, u8)], b: &[(i32, u8)]) -> Vec<(i32, u8)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push((a[i].0, a[i].1 + b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

fn decrement(v: &mut Vec<(i32, u8)>, m: i32) {
    let i = v.binary_search_by_key(&m, |e| e.0).expect("power present");
    v[i].1 -= 1;
    if v[i].1 == 0 {
        v.remove(i);
    }
}

/// One term `coeff · e^{ik·x} y^l z^α z̄^β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub k: Harmonic,
    pub l: Vec<u8>,
    pub alpha: Vec<(i32, u8)>,
    pub beta: Vec<(i32, u8)>,
    pub coeff: C64,
}

impl Monomial {
    pub fn channel(&self) -> Channel {
        Channel::new(self.l.clone(), &self.alpha, &self.beta)
    }
}

/// Momentum and mass verdicts with the offending monomials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub momentum: bool,
    pub mass: bool,
    pub violations: Vec<Monomial>,
}

/// Sampled lower bound and coefficient majorant of `‖X_P‖_{r,a,p−1}` on `D(s,r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VfNorm {
    pub sampled: f64,
    pub majorant: f64,
}

/// A point of the complexified phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub x: Vec<C64>,
    pub y: Vec<C64>,
    pub z: BTreeMap<i32, C64>,
    pub zb: BTreeMap<i32, C64>,
}

/// `(X, Y, Z, Z̄)` of a Hamiltonian field at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldSample {
    pub x: Vec<C64>,
    pub y: Vec<C64>,
    pub z: BTreeMap<i32, C64>,
    pub zb: BTreeMap<i32, C64>,
}

impl VectorFieldSample {
    /// `|X| + |Y|/r² + ‖Z‖_{a,p−1}/r + ‖Z̄‖_{a,p−1}/r`.
    pub fn weighted_norm(&self, w: &AnalyticityWindow) -> f64 {
        let sup = |v: &[C64]| v.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let l2 = |m: &BTreeMap<i32, C64>| {
            m.iter().map(|(&j, c)| (c.norm() * w.weight_lowered(j)).powi(2)).sum::<f64>().sqrt()
        };
        sup(&self.x) + sup(&self.y) / (w.r * w.r) + (l2(&self.z) + l2(&self.zb)) / w.r
    }
}

/// Finite sum of monomials over a tangent set and the normal modes `|j| ≤ jmax`.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianPoly {
    tangent: Vec<i32>,
    jmax: i32,
    degree_cap: u32,
    harmonic_cap: u32,
    terms: BTreeMap<Channel, TorusFourier>,
}

impl HamiltonianPoly {
    pub fn new(tangent: Vec<i32>, jmax: i32, degree_cap: u32, harmonic_cap: u32) -> Result<Self, HamiltonianError> {
        // validates the tangent set
        let probe = TorusFourier::new(tangent, harmonic_cap)?;
        Ok(Self { tangent: probe.index_set().to_vec(), jmax, degree_cap, harmonic_cap, terms: BTreeMap::new() })
    }

    pub fn zero_like(&self) -> Self {
        Self { terms: BTreeMap::new(), ..self.clone_shape() }
    }

    fn clone_shape(&self) -> Self {
        Self {
            tangent: self.tangent.clone(),
            jmax: self.jmax,
            degree_cap: self.degree_cap,
            harmonic_cap: self.harmonic_cap,
            terms: BTreeMap::new(),
        }
    }

    fn uncapped(&self) -> Self {
        Self { degree_cap: u32::MAX, harmonic_cap: u32::MAX, ..self.clone_shape() }
    }

    pub fn tangent(&self) -> &[i32] {
        &self.tangent
    }

    pub fn jmax(&self) -> i32 {
        self.jmax
    }

    pub fn degree_cap(&self) -> u32 {
        self.degree_cap
    }

    pub fn harmonic_cap(&self) -> u32 {
        self.harmonic_cap
    }

    /// Changes the caps; stored harmonics beyond a lowered harmonic cap are discarded.
    pub fn set_caps(&mut self, degree_cap: u32, harmonic_cap: u32) {
        self.degree_cap = degree_cap;
        self.harmonic_cap = harmonic_cap;
        for f in self.terms.values_mut() {
            *f = f.with_cutoff(harmonic_cap).0;
        }
    }

    pub fn n(&self) -> usize {
        self.tangent.len()
    }

    pub fn tangent_pos(&self, site: i32) -> Option<usize> {
        self.tangent.binary_search(&site).ok()
    }

    /// Modes `1 ≤ |j| ≤ jmax` outside the tangent set, ascending.
    pub fn normal_modes(&self) -> Vec<i32> {
        (-self.jmax..=self.jmax).filter(|&j| j != 0 && self.tangent_pos(j).is_none()).collect()
    }

    pub fn is_normal(&self, m: i32) -> bool {
        m != 0 && m.abs() <= self.jmax && self.tangent_pos(m).is_none()
    }

    pub fn channels(&self) -> impl Iterator<Item = (&Channel, &TorusFourier)> {
        self.terms.iter()
    }

    pub fn channel(&self, ch: &Channel) -> Option<&TorusFourier> {
        self.terms.get(ch)
    }

    pub fn num_channels(&self) -> usize {
        self.terms.len()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.values().map(|f| f.len()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.values().all(|f| f.is_zero())
    }

    fn blank_fourier(&self) -> TorusFourier {
        TorusFourier::new(self.tangent.clone(), self.harmonic_cap).expect("validated tangent set")
    }

    /// Adds `f(x)` to the coefficient of `ch` (harmonics beyond the cap are dropped
    /// and their coefficient mass returned).
    pub fn add_channel(&mut self, ch: Channel, f: &TorusFourier) -> Result<f64, HamiltonianError> {
        let f = f.embed(&self.tangent)?;
        let blank = self.blank_fourier();
        let entry = self.terms.entry(ch).or_insert(blank);
        let mut dropped = 0.0;
        for (k, c) in f.iter() {
            dropped += entry.insert(k.clone(), *c);
        }
        Ok(dropped)
    }

    pub fn add_monomial(&mut self, m: &Monomial) -> Result<(), HamiltonianError> {
        for &(j, _) in m.alpha.iter().chain(&m.beta) {
            if !self.is_normal(j) {
                return Err(HamiltonianError::NotNormal(j, self.jmax));
            }
        }
        if m.k.len() != self.n() || m.l.len() != self.n() {
            return Err(FourierError::DimensionMismatch { expected: self.n(), got: m.k.len() }.into());
        }
        let blank = self.blank_fourier();
        self.terms.entry(m.channel()).or_insert(blank).insert(m.k.clone(), m.coeff);
        Ok(())
    }

    /// Convenience for tests and setup: adds one monomial.
    pub fn add_term(
        &mut self,
        k: &[i32],
        l: &[u8],
        alpha: &[(i32, u8)],
        beta: &[(i32, u8)],
        coeff: C64,
    ) -> Result<(), HamiltonianError> {
        self.add_monomial(&Monomial { k: k.to_vec(), l: l.to_vec(), alpha: alpha.to_vec(), beta: beta.to_vec(), coeff })
    }

    /// Coefficient of a single monomial.
    pub fn coeff(&self, k: &[i32], l: &[u8], alpha: &[(i32, u8)], beta: &[(i32, u8)]) -> C64 {
        self.terms.get(&Channel::new(l.to_vec(), alpha, beta)).map(|f| f.coeff(k)).unwrap_or_default()
    }

    /// All stored monomials in lexicographic `(l, α, β, k)` order.
    pub fn monomials(&self) -> Vec<Monomial> {
        let mut out = Vec::new();
        for (ch, f) in &self.terms {
            for (k, c) in f.iter() {
                out.push(Monomial { k: k.clone(), l: ch.l.clone(), alpha: ch.z.clone(), beta: ch.zb.clone(), coeff: *c });
            }
        }
        out
    }

    pub fn prune(&mut self, tol: f64) {
        for f in self.terms.values_mut() {
            f.prune(tol);
        }
        self.terms.retain(|_, f| !f.is_empty());
    }

    pub fn scale(&self, a: C64) -> Self {
        let mut out = self.clone();
        for f in out.terms.values_mut() {
            *f = f.scale(a);
        }
        out
    }

    /// `self + a·other` on a common tangent set.
    pub fn axpy(&self, a: C64, other: &Self) -> Result<Self, HamiltonianError> {
        self.same_tangent(other)?;
        let mut out = self.clone();
        out.add_scaled(a, other);
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self, HamiltonianError> {
        self.axpy(C64::new(1.0, 0.0), other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, HamiltonianError> {
        self.axpy(C64::new(-1.0, 0.0), other)
    }

    fn add_scaled(&mut self, a: C64, other: &Self) {
        for (ch, f) in &other.terms {
            let blank = self.blank_fourier();
            let entry = self.terms.entry(ch.clone()).or_insert(blank);
            for (k, c) in f.iter() {
                *entry_mut(entry, k) += a * c;
            }
        }
    }

    fn same_tangent(&self, other: &Self) -> Result<(), HamiltonianError> {
        if self.tangent != other.tangent {
            return Err(HamiltonianError::TangentMismatch(self.tangent.clone(), other.tangent.clone()));
        }
        Ok(())
    }

    /// Re-expresses the polynomial over a larger tangent set; modes that become
    /// tangent must not occur in any monomial.
    pub fn embed_tangent(&self, target: &[i32]) -> Result<Self, HamiltonianError> {
        let mut out = Self::new(target.to_vec(), self.jmax, self.degree_cap, self.harmonic_cap)?;
        let pos: Vec<usize> = self.tangent.iter().map(|s| out.tangent_pos(*s).expect("superset")).collect();
        for (ch, f) in &self.terms {
            for &(m, _) in ch.z.iter().chain(&ch.zb) {
                if !out.is_normal(m) {
                    return Err(HamiltonianError::NotNormal(m, self.jmax));
                }
            }
            let mut l = vec![0; out.n()];
            for (src, &p) in pos.iter().enumerate() {
                l[p] = ch.l[src];
            }
            out.terms.insert(Channel { l, z: ch.z.clone(), zb: ch.zb.clone() }, f.embed(&out.tangent)?);
        }
        Ok(out)
    }

    /// Splits into terms within the caps and the rest.
    pub fn truncate(&self) -> (Self, Self) {
        let mut kept = self.clone_shape();
        let mut dropped = self.uncapped();
        for (ch, f) in &self.terms {
            if ch.degree() > self.degree_cap {
                dropped.terms.insert(ch.clone(), f.clone());
                continue;
            }
            let mut inner = self.blank_fourier();
            let mut outer = TorusFourier::new(self.tangent.clone(), u32::MAX).expect("valid");
            for (k, c) in f.iter() {
                if l1(k) <= self.harmonic_cap {
                    inner.set(k.clone(), *c);
                } else {
                    outer.set(k.clone(), *c);
                }
            }
            if !inner.is_empty() {
                kept.terms.insert(ch.clone(), inner);
            }
            if !outer.is_empty() {
                dropped.terms.insert(ch.clone(), outer);
            }
        }
        (kept, dropped)
    }

    /// Removes the pure constant term (no angle, action or normal dependence).
    pub fn drop_constant(&mut self) -> C64 {
        let ch = Channel::constant(self.n());
        let zero = vec![0; self.n()];
        let mut c = C64::default();
        if let Some(f) = self.terms.get_mut(&ch) {
            c = f.coeff(&zero);
            let (_, tilde) = f.average_and_tilde();
            *f = tilde;
        }
        c
    }

    /// Exact bracket truncated to the caps of `self`; returns `(bracket, dropped)`.
    pub fn poisson_bracket(&self, other: &Self) -> Result<(Self, Self), HamiltonianError> {
        self.same_tangent(other)?;
        let raw = self.bracket_raw(other);
        let (mut kept, dropped) = raw.truncate_to(self.degree_cap, self.harmonic_cap);
        kept.prune(0.0);
        Ok((kept, dropped))
    }

    /// Polynomial product truncated to the caps of `self`; returns `(product, dropped)`.
    pub fn mul(&self, other: &Self) -> Result<(Self, Self), HamiltonianError> {
        self.same_tangent(other)?;
        let mut raw = self.uncapped();
        for (ca, fa) in &self.terms {
            for (cb, fb) in &other.terms {
                let (t, _) = fa.mul(fb, u32::MAX)?;
                raw.accumulate(ca.product(cb), &t, C64::new(1.0, 0.0));
            }
        }
        let (mut kept, dropped) = raw.truncate_to(self.degree_cap, self.harmonic_cap);
        kept.prune(0.0);
        Ok((kept, dropped))
    }

    /// Inserts a channel coefficient without cap checks on the channel degree.
    pub fn set_channel(&mut self, ch: Channel, f: TorusFourier) -> Result<(), HamiltonianError> {
        let f = f.embed(&self.tangent)?;
        self.terms.insert(ch, f);
        Ok(())
    }

    fn truncate_to(mut self, degree_cap: u32, harmonic_cap: u32) -> (Self, Self) {
        self.degree_cap = degree_cap;
        self.harmonic_cap = harmonic_cap;
        let (mut kept, dropped) = self.truncate();
        for f in kept.terms.values_mut() {
            *f = f.with_cutoff(harmonic_cap).0;
        }
        (kept, dropped)
    }

    fn bracket_raw(&self, other: &Self) -> Self {
        let n = self.n();
        let mut by_z: BTreeMap<i32, Vec<&Channel>> = BTreeMap::new();
        let mut by_zb: BTreeMap<i32, Vec<&Channel>> = BTreeMap::new();
        let mut by_l: Vec<Vec<&Channel>> = vec![Vec::new(); n];
        let mut by_kx: Vec<Vec<&Channel>> = vec![Vec::new(); n];
        for (ch, f) in &other.terms {
            for &(m, _) in &ch.z {
                by_z.entry(m).or_default().push(ch);
            }
            for &(m, _) in &ch.zb {
                by_zb.entry(m).or_default().push(ch);
            }
            for p in 0..n {
                if ch.l[p] > 0 {
                    by_l[p].push(ch);
                }
                if f.iter().any(|(k, _)| k[p] != 0) {
                    by_kx[p].push(ch);
                }
            }
        }
        let mut out = self.uncapped();
        let two_i = C64::new(0.0, 2.0);
        for (ca, fa) in &self.terms {
            let mut cands: BTreeSet<&Channel> = BTreeSet::new();
            for &(m, _) in &ca.z {
                cands.extend(by_zb.get(&m).into_iter().flatten());
            }
            for &(m, _) in &ca.zb {
                cands.extend(by_z.get(&m).into_iter().flatten());
            }
            let a_kx: Vec<bool> = (0..n).map(|p| fa.iter().any(|(k, _)| k[p] != 0)).collect();
            for p in 0..n {
                if ca.l[p] > 0 {
                    cands.extend(by_kx[p].iter());
                }
                if a_kx[p] {
                    cands.extend(by_l[p].iter());
                }
            }
            for cb in cands {
                let fb = &other.terms[cb];
                let prod = ca.product(cb);
                for p in 0..n {
                    if cb.l[p] > 0 && a_kx[p] {
                        let (t, _) = fa.partial(p).mul(fb, u32::MAX).expect("same sites");
                        out.accumulate(prod.clone().lower_y(p), &t, C64::new(cb.l[p] as f64, 0.0));
                    }
                    if ca.l[p] > 0 {
                        let dfb = fb.partial(p);
                        if !dfb.is_empty() {
                            let (t, _) = fa.mul(&dfb, u32::MAX).expect("same sites");
                            out.accumulate(prod.clone().lower_y(p), &t, C64::new(-(ca.l[p] as f64), 0.0));
                        }
                    }
                }
                let mut pair_prod: Option<TorusFourier> = None;
                for &(m, pa) in &ca.z {
                    let pb = cb.zb_power(m);
                    if pb > 0 {
                        let t = pair_prod.get_or_insert_with(|| fa.mul(fb, u32::MAX).expect("same sites").0);
                        out.accumulate(prod.clone().lower_pair(m), t, two_i * (pa as f64 * pb as f64));
                    }
                }
                for &(m, pa) in &ca.zb {
                    let pb = cb.z_power(m);
                    if pb > 0 {
                        let t = pair_prod.get_or_insert_with(|| fa.mul(fb, u32::MAX).expect("same sites").0);
                        out.accumulate(prod.clone().lower_pair(m), t, -two_i * (pa as f64 * pb as f64));
                    }
                }
            }
        }
        out
    }

    fn accumulate(&mut self, ch: Channel, f: &TorusFourier, scale: C64) {
        let blank = TorusFourier::new(self.tangent.clone(), self.harmonic_cap).expect("valid");
        let entry = self.terms.entry(ch).or_insert(blank);
        for (k, c) in f.iter() {
            *entry_mut(entry, k) += scale * c;
        }
    }

    /// Value at a phase point.
    pub fn eval(&self, pt: &PhasePoint) -> Result<C64, HamiltonianError> {
        let mut total = C64::default();
        for (ch, f) in &self.terms {
            total += f.eval(&pt.x)? * channel_value(ch, pt);
        }
        Ok(total)
    }

    /// `X_P = (P_y, −P_x, 2iP_{z̄}, −2iP_z)` at a point.
    pub fn vector_field(&self, pt: &PhasePoint) -> Result<VectorFieldSample, HamiltonianError> {
        let n = self.n();
        let mut out = VectorFieldSample {
            x: vec![C64::default(); n],
            y: vec![C64::default(); n],
            z: self.normal_modes().into_iter().map(|m| (m, C64::default())).collect(),
            zb: self.normal_modes().into_iter().map(|m| (m, C64::default())).collect(),
        };
        let two_i = C64::new(0.0, 2.0);
        for (ch, f) in &self.terms {
            let fv = f.eval(&pt.x)?;
            let mono = channel_value(ch, pt);
            for p in 0..n {
                if ch.l[p] > 0 {
                    let d = C64::new(ch.l[p] as f64, 0.0) * pt.y[p].powu(ch.l[p] as u32 - 1)
                        * channel_value_without_y(ch, pt, p);
                    out.x[p] += fv * d;
                }
                let dfx = f.partial(p).eval(&pt.x)?;
                out.y[p] -= dfx * mono;
            }
            for &(m, pw) in &ch.zb {
                let d = C64::new(pw as f64, 0.0) * pt.zb[&m].powu(pw as u32 - 1) * channel_value_without_zb(ch, pt, m);
                *out.z.get_mut(&m).expect("normal") += two_i * fv * d;
            }
            for &(m, pw) in &ch.z {
                let d = C64::new(pw as f64, 0.0) * pt.z[&m].powu(pw as u32 - 1) * channel_value_without_z(ch, pt, m);
                *out.zb.get_mut(&m).expect("normal") -= two_i * fv * d;
            }
        }
        Ok(out)
    }

    /// Coefficient majorant of `‖X_P‖_{r,a,p−1}` on `D(s, r)`, using
    /// `|e^{ik·x}| ≤ e^{|k|s}`, `|y_j| ≤ r²` and `|z_m| ≤ r/(|m|^p e^{a|m|})`.
    pub fn vf_majorant(&self, w: &AnalyticityWindow) -> f64 {
        let n = self.n();
        let r2 = w.r * w.r;
        let mut xs = vec![0.0; n];
        let mut ys = vec![0.0; n];
        let mut zs: BTreeMap<i32, f64> = BTreeMap::new();
        let mut zbs: BTreeMap<i32, f64> = BTreeMap::new();
        for (ch, f) in &self.terms {
            let mut amp = r2.powi(ch.y_degree() as i32);
            for &(m, p) in ch.z.iter().chain(&ch.zb) {
                amp *= (w.r / w.weight(m)).powi(p as i32);
            }
            let mut sup = 0.0;
            let mut ky = vec![0.0; n];
            for (k, c) in f.iter() {
                let v = c.norm() * (l1(k) as f64 * w.s).exp();
                sup += v;
                for p in 0..n {
                    ky[p] += v * k[p].unsigned_abs() as f64;
                }
            }
            if sup == 0.0 {
                continue;
            }
            for p in 0..n {
                xs[p] += sup * amp * ch.l[p] as f64 / r2;
                ys[p] += ky[p] * amp;
            }
            for &(m, p) in &ch.zb {
                *zs.entry(m).or_default() += 2.0 * sup * amp * p as f64 * w.weight(m) / w.r;
            }
            for &(m, p) in &ch.z {
                *zbs.entry(m).or_default() += 2.0 * sup * amp * p as f64 * w.weight(m) / w.r;
            }
        }
        let l2 = |m: &BTreeMap<i32, f64>| m.iter().map(|(&j, v)| (v * w.weight_lowered(j)).powi(2)).sum::<f64>().sqrt();
        xs.iter().copied().fold(0.0, f64::max)
            + ys.iter().copied().fold(0.0, f64::max) / r2
            + (l2(&zs) + l2(&zbs)) / w.r
    }

    /// Random point of `D(s, r)` (strip, action disc, weighted ball).
    pub fn sample_point(&self, w: &AnalyticityWindow, rng: &mut ChaCha8Rng) -> PhasePoint {
        let n = self.n();
        let disc = |rng: &mut ChaCha8Rng| {
            let rad = rng.random::<f64>().sqrt();
            C64::from_polar(rad, rng.random_range(0.0..std::f64::consts::TAU))
        };
        let x = (0..n)
            .map(|_| C64::new(rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(-w.s..=w.s)))
            .collect();
        let y = (0..n).map(|_| disc(rng) * (w.r * w.r)).collect();
        let modes = self.normal_modes();
        let mut raw: Vec<C64> = (0..2 * modes.len()).map(|_| disc(rng)).collect();
        let norm: f64 = raw.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
        let radius = rng.random::<f64>().powf(1.0 / (2 * modes.len()).max(1) as f64) * w.r;
        for c in raw.iter_mut() {
            *c *= radius / norm;
        }
        let z = modes.iter().enumerate().map(|(i, &m)| (m, raw[2 * i] / w.weight(m))).collect();
        let zb = modes.iter().enumerate().map(|(i, &m)| (m, raw[2 * i + 1] / w.weight(m))).collect();
        PhasePoint { x, y, z, zb }
    }

    /// Sampled lower bound paired with the coefficient majorant.
    pub fn vf_norm(&self, w: &AnalyticityWindow, sample_count: usize, seed: u64) -> Result<VfNorm, HamiltonianError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sampled: f64 = 0.0;
        for _ in 0..sample_count.max(1) {
            let pt = self.sample_point(w, &mut rng);
            sampled = sampled.max(self.vector_field(&pt)?.weighted_norm(w));
        }
        Ok(VfNorm { sampled, majorant: self.vf_majorant(w) })
    }

    /// `max ‖X_{P(σ)} − X_{P(σ′)}‖ / ‖σ − σ′‖_{ℓ²}` over the pairs (majorant form).
    pub fn lipschitz_seminorm<F>(
        family: F,
        pairs: &[(ParameterPoint, ParameterPoint)],
        w: &AnalyticityWindow,
    ) -> Result<f64, HamiltonianError>
    where
        F: Fn(&ParameterPoint) -> HamiltonianPoly,
    {
        if pairs.is_empty() {
            return Err(HamiltonianError::NoPairs);
        }
        let mut best: f64 = 0.0;
        for (a, b) in pairs {
            let d = a.l2_distance(b);
            if d == 0.0 {
                return Err(HamiltonianError::DegeneratePair);
            }
            let diff = family(a).sub(&family(b))?;
            best = best.max(diff.vf_majorant(w) / d);
        }
        Ok(best)
    }

    /// Integer-exact momentum and mass sums for every stored monomial.
    pub fn check_momentum_mass(&self) -> ConservationReport {
        let mut report = ConservationReport { momentum: true, mass: true, violations: Vec::new() };
        for (ch, f) in &self.terms {
            let (nm, ns) = ch.normal_sums();
            for (k, c) in f.iter() {
                if *c == C64::default() {
                    continue;
                }
                let mom: i64 = nm + self.tangent.iter().zip(k).map(|(&j, &kj)| j as i64 * kj as i64).sum::<i64>();
                let mass: i64 = ns + k.iter().map(|&kj| kj as i64).sum::<i64>();
                if mom != 0 {
                    report.momentum = false;
                }
                if mass != 0 {
                    report.mass = false;
                }
                if mom != 0 || mass != 0 {
                    report.violations.push(Monomial {
                        k: k.clone(),
                        l: ch.l.clone(),
                        alpha: ch.z.clone(),
                        beta: ch.zb.clone(),
                        coeff: *c,
                    });
                }
            }
        }
        report
    }

    /// Coefficient of `(−k, l, β, α)` equals the conjugate of that of `(k, l, α, β)`.
    pub fn is_real(&self, tol: f64) -> bool {
        self.terms.iter().all(|(ch, f)| {
            let partner = self.terms.get(&ch.conjugate());
            f.iter().all(|(k, c)| {
                let neg: Harmonic = k.iter().map(|v| -v).collect();
                let other = partner.map(|g| g.coeff(&neg)).unwrap_or_default();
                (other - c.conj()).norm() <= tol * (1.0 + c.norm())
            })
        })
    }

    /// Largest coefficient modulus.
    pub fn max_abs(&self) -> f64 {
        self.terms.values().map(|f| f.max_abs()).fold(0.0, f64::max)
    }

    /// Splits off the degree ≤ 2, `y`-degree ≤ 1 part as the seven blocks.
    pub fn taylor_truncate_r(&self) -> (RBlocks, Self) {
        let mut blocks = RBlocks::zero(self.tangent.clone(), self.harmonic_cap);
        let mut rest = self.clone_shape();
        for (ch, f) in &self.terms {
            if ch.degree() <= 2 && blocks.absorb(ch, f) {
                continue;
            }
            rest.terms.insert(ch.clone(), f.clone());
        }
        (blocks, rest)
    }

    /// Sum of `‖f_ch‖` weighted as in the majorant, split by channel degree.
    pub fn degree_profile(&self, w: &AnalyticityWindow) -> BTreeMap<u32, f64> {
        let mut out = BTreeMap::new();
        for (ch, f) in &self.terms {
            let mut single = self.clone_shape();
            single.terms.insert(ch.clone(), f.clone());
            *out.entry(ch.degree()).or_insert(0.0) += single.vf_majorant(w);
        }
        out
    }
}

fn entry_mut<'a>(f: &'a mut TorusFourier, k: &Harmonic) -> &'a mut C64 {
    // insert of zero creates the slot if it lies within the cutoff
    f.insert(k.clone(), C64::default());
    f.coeff_mut(k).expect("harmonic within cutoff")
}

fn channel_value(ch: &Channel, pt: &PhasePoint) -> C64 {
    let mut v = C64::new(1.0, 0.0);
    for (p, &e) in ch.l.iter().enumerate() {
        if e > 0 {
            v *= pt.y[p].powu(e as u32);
        }
    }
    for &(m, e) in &ch.z {
        v *= pt.z[&m].powu(e as u32);
    }
    for &(m, e) in &ch.zb {
        v *= pt.zb[&m].powu(e as u32);
    }
    v
}

fn channel_value_without_y(ch: &Channel, pt: &PhasePoint, pos: usize) -> C64 {
    let mut reduced = ch.clone();
    reduced.l[pos] = 0;
    channel_value(&reduced, pt)
}

fn channel_value_without_z(ch: &Channel, pt: &PhasePoint, m: i32) -> C64 {
    let mut reduced = ch.clone();
    reduced.z.retain(|e| e.0 != m);
    channel_value(&reduced, pt)
}

fn channel_value_without_zb(ch: &Channel, pt: &PhasePoint, m: i32) -> C64 {
    let mut reduced = ch.clone();
    reduced.zb.retain(|e| e.0 != m);
    channel_value(&reduced, pt)
}

/// The degree-≤2 Taylor part `R` of a perturbation, by block.
#[derive(Debug, Clone, PartialEq)]
pub struct RBlocks {
    pub tangent: Vec<i32>,
    pub cutoff: u32,
    /// `R^x(x)`.
    pub x: TorusFourier,
    /// `R^y_j(x)`, one per tangent site.
    pub y: Vec<TorusFourier>,
    /// `R^z_m`: coefficient of `z_m`.
    pub z: BTreeMap<i32, TorusFourier>,
    /// `R^{z̄}_m`.
    pub zb: BTreeMap<i32, TorusFourier>,
    /// Coefficient of `z_i z_j`, `i ≤ j`.
    pub zz: BTreeMap<(i32, i32), TorusFourier>,
    /// Coefficient of `z̄_i z̄_j`, `i ≤ j`.
    pub zbzb: BTreeMap<(i32, i32), TorusFourier>,
    /// Coefficient of `z_i z̄_j`.
    pub zzb: BTreeMap<(i32, i32), TorusFourier>,
}

impl RBlocks {
    pub fn zero(tangent: Vec<i32>, cutoff: u32) -> Self {
        let blank = TorusFourier::new(tangent.clone(), cutoff).expect("valid tangent set");
        Self {
            y: vec![blank.clone(); tangent.len()],
            x: blank,
            tangent,
            cutoff,
            z: BTreeMap::new(),
            zb: BTreeMap::new(),
            zz: BTreeMap::new(),
            zbzb: BTreeMap::new(),
            zzb: BTreeMap::new(),
        }
    }

    fn absorb(&mut self, ch: &Channel, f: &TorusFourier) -> bool {
        let ly = ch.y_degree();
        let nz = power_sum(&ch.z);
        let nzb = power_sum(&ch.zb);
        let slot = match (ly, nz, nzb) {
            (0, 0, 0) => &mut self.x,
            (1, 0, 0) => {
                let p = ch.l.iter().position(|&v| v == 1).expect("one y");
                &mut self.y[p]
            }
            (0, 1, 0) => self.z.entry(ch.z[0].0).or_insert_with(|| f.zero_like()),
            (0, 0, 1) => self.zb.entry(ch.zb[0].0).or_insert_with(|| f.zero_like()),
            (0, 2, 0) => self.zz.entry(pair_of(&ch.z)).or_insert_with(|| f.zero_like()),
            (0, 0, 2) => self.zbzb.entry(pair_of(&ch.zb)).or_insert_with(|| f.zero_like()),
            (0, 1, 1) => self.zzb.entry((ch.z[0].0, ch.zb[0].0)).or_insert_with(|| f.zero_like()),
            _ => return false,
        };
        *slot = slot.add(f).expect("same sites");
        true
    }

    /// Reassembles the blocks into a polynomial with the given shape.
    pub fn to_poly(&self, shape: &HamiltonianPoly) -> Result<HamiltonianPoly, HamiltonianError> {
        let mut out = shape.zero_like();
        let n = self.tangent.len();
        out.add_channel(Channel::constant(n), &self.x)?;
        for (p, f) in self.y.iter().enumerate() {
            let mut l = vec![0; n];
            l[p] = 1;
            out.add_channel(Channel::new(l, &[], &[]), f)?;
        }
        for (&m, f) in &self.z {
            out.add_channel(Channel::new(vec![0; n], &[(m, 1)], &[]), f)?;
        }
        for (&m, f) in &self.zb {
            out.add_channel(Channel::new(vec![0; n], &[], &[(m, 1)]), f)?;
        }
        for (&(i, j), f) in &self.zz {
            out.add_channel(Channel::new(vec![0; n], &[(i, 1), (j, 1)], &[]), f)?;
        }
        for (&(i, j), f) in &self.zbzb {
            out.add_channel(Channel::new(vec![0; n], &[], &[(i, 1), (j, 1)]), f)?;
        }
        for (&(i, j), f) in &self.zzb {
            out.add_channel(Channel::new(vec![0; n], &[(i, 1)], &[(j, 1)]), f)?;
        }
        out.prune(0.0);
        Ok(out)
    }

    /// Applies `Γ_K` to every block; returns the truncated blocks and the removed part.
    pub fn gamma_split(&self, k_cut: u32) -> (Self, Self) {
        let split = |f: &TorusFourier| {
            let (low, _) = f.gamma_truncate(k_cut, 0.0);
            let high = f.sub(&low).expect("same sites");
            (low, high)
        };
        let mut low = self.clone();
        let mut high = Self::zero(self.tangent.clone(), self.cutoff);
        (low.x, high.x) = split(&self.x);
        for p in 0..self.y.len() {
            (low.y[p], high.y[p]) = split(&self.y[p]);
        }
        fn map_split<K: Ord + Copy>(
            src: &BTreeMap<K, TorusFourier>,
            lo: &mut BTreeMap<K, TorusFourier>,
            hi: &mut BTreeMap<K, TorusFourier>,
            split: &dyn Fn(&TorusFourier) -> (TorusFourier, TorusFourier),
        ) {
            lo.clear();
            for (k, f) in src {
                let (a, b) = split(f);
                lo.insert(*k, a);
                if !b.is_zero() {
                    hi.insert(*k, b);
                }
            }
        }
        map_split(&self.z, &mut low.z, &mut high.z, &split);
        map_split(&self.zb, &mut low.zb, &mut high.zb, &split);
        map_split(&self.zz, &mut low.zz, &mut high.zz, &split);
        map_split(&self.zbzb, &mut low.zbzb, &mut high.zbzb, &split);
        map_split(&self.zzb, &mut low.zzb, &mut high.zzb, &split);
        (low, high)
    }

    pub fn is_zero(&self) -> bool {
        self.x.is_zero()
            && self.y.iter().all(|f| f.is_zero())
            && self.z.values().chain(self.zb.values()).all(|f| f.is_zero())
            && self.zz.values().chain(self.zbzb.values()).chain(self.zzb.values()).all(|f| f.is_zero())
    }
}

fn pair_of(v: &[(i32, u8)]) -> (i32, i32) {
    match v {
        [(m, 2)] => (*m, *m),
        [(a, 1), (b, 1)] => (*a, *b),
        _ => unreachable!("degree-two block"),
    }
}

/// `N = Σ_j ω_j y_j + ½ Σ_m Ω_m(x) z_m z̄_m` with staged normal frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalForm {
    pub tangent: Vec<i32>,
    pub omega: BTreeMap<i32, f64>,
    /// `Ω_m = Σ_i Ω_m^i`, stage `i` added at iteration step `i`.
    pub stages: BTreeMap<i32, Vec<TorusFourier>>,
}

impl NormalForm {
    /// Tangential frequencies in tangent order.
    pub fn omega_vec(&self) -> Vec<f64> {
        self.tangent.iter().map(|j| self.omega[j]).collect()
    }

    /// `Ω̄_m`, the real constant part.
    pub fn omega_bar(&self, m: i32) -> f64 {
        self.stages.get(&m).map(|st| st.iter().map(|f| f.average_and_tilde().0.re).sum()).unwrap_or(0.0)
    }

    /// `Ω̃_m` over the current tangent set.
    pub fn omega_tilde(&self, m: i32) -> Result<TorusFourier, FourierError> {
        let mut acc = TorusFourier::new(self.tangent.clone(), u32::MAX)?;
        if let Some(st) = self.stages.get(&m) {
            for f in st {
                acc = acc.add(&f.average_and_tilde().1.embed(&self.tangent)?)?;
            }
        }
        Ok(acc)
    }

    /// Variable parts of the stages of `Ω_m`, each over the current tangent set.
    pub fn tilde_stages(&self, m: i32) -> Result<Vec<TorusFourier>, FourierError> {
        let mut out = Vec::new();
        if let Some(st) = self.stages.get(&m) {
            for f in st {
                out.push(f.average_and_tilde().1.embed(&self.tangent)?);
            }
        }
        Ok(out)
    }

    /// `N` as a polynomial shaped like `shape`.
    pub fn to_poly(&self, shape: &HamiltonianPoly) -> Result<HamiltonianPoly, HamiltonianError> {
        let mut out = shape.zero_like();
        let n = self.tangent.len();
        for (p, j) in self.tangent.iter().enumerate() {
            let mut l = vec![0; n];
            l[p] = 1;
            let c = TorusFourier::constant(self.tangent.clone(), 0, C64::new(self.omega[j], 0.0))?;
            out.add_channel(Channel::new(l, &[], &[]), &c)?;
        }
        for (&m, st) in &self.stages {
            if !shape.is_normal(m) {
                continue;
            }
            let ch = Channel::new(vec![0; n], &[(m, 1)], &[(m, 1)]);
            for f in st {
                out.add_channel(ch.clone(), &f.scale(C64::new(0.5, 0.0)))?;
            }
        }
        out.prune(0.0);
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    k: Vec<i32>,
    l: Vec<u8>,
    z: Vec<(i32, u8)>,
    zb: Vec<(i32, u8)>,
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct PolyRepr {
    tangent: Vec<i32>,
    jmax: i32,
    degree_cap: u32,
    harmonic_cap: u32,
    terms: Vec<TermRepr>,
}

impl Serialize for HamiltonianPoly {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PolyRepr {
            tangent: self.tangent.clone(),
            jmax: self.jmax,
            degree_cap: self.degree_cap,
            harmonic_cap: self.harmonic_cap,
            terms: self
                .monomials()
                .into_iter()
                .map(|m| TermRepr { k: m.k, l: m.l, z: m.alpha, zb: m.beta, re: m.coeff.re, im: m.coeff.im })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for HamiltonianPoly {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let repr = PolyRepr::deserialize(deserializer)?;
        let mut h = HamiltonianPoly::new(repr.tangent, repr.jmax, repr.degree_cap, repr.harmonic_cap)
            .map_err(D::Error::custom)?;
        for t in repr.terms {
            h.add_term(&t.k, &t.l, &t.z, &t.zb, C64::new(t.re, t.im)).map_err(D::Error::custom)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn shape(tangent: Vec<i32>, jmax: i32) -> HamiltonianPoly {
        HamiltonianPoly::new(tangent, jmax, 4, 12).unwrap()
    }

    #[test]
    fn angle_action_bracket() {
        let mut a = shape(vec![1], 3);
        a.add_term(&[1], &[0], &[], &[], c(1.0, 0.0)).unwrap();
        let mut b = shape(vec![1], 3);
        b.add_term(&[0], &[1], &[], &[], c(1.0, 0.0)).unwrap();
        let (br, dropped) = a.poisson_bracket(&b).unwrap();
        assert!(dropped.is_zero());
        assert_eq!(br.coeff(&[1], &[0], &[], &[]), c(0.0, 1.0));
        assert_eq!(br.num_terms(), 1);
    }

    #[test]
    fn independent_pair_commutes() {
        let mut a = shape(vec![1], 4);
        a.add_term(&[0], &[0], &[(2, 1)], &[(2, 1)], c(1.0, 0.0)).unwrap();
        let mut f = shape(vec![1], 4);
        f.add_term(&[0], &[1], &[(3, 1)], &[(-3, 1)], c(0.7, 0.2)).unwrap();
        assert!(a.poisson_bracket(&f).unwrap().0.is_zero());
    }

    #[test]
    fn bracket_with_frequency_term_two_modes() {
        // hand expansion: N = ω₁y₁ + ω₂y₂ + ½(Ω + εcos x₁) z₃z̄₃, F = e^{i x₂} z₃ z̄₃
        let tangent = vec![1, 2];
        let (w1, w2, om, eps) = (1.1, 3.7, 9.2, 0.3);
        let mut n = shape(tangent.clone(), 4);
        n.add_term(&[0, 0], &[1, 0], &[], &[], c(w1, 0.0)).unwrap();
        n.add_term(&[0, 0], &[0, 1], &[], &[], c(w2, 0.0)).unwrap();
        n.add_term(&[0, 0], &[0, 0], &[(3, 1)], &[(3, 1)], c(om / 2.0, 0.0)).unwrap();
        n.add_term(&[1, 0], &[0, 0], &[(3, 1)], &[(3, 1)], c(eps / 4.0, 0.0)).unwrap();
        n.add_term(&[-1, 0], &[0, 0], &[(3, 1)], &[(3, 1)], c(eps / 4.0, 0.0)).unwrap();
        let mut f = shape(tangent.clone(), 4);
        f.add_term(&[0, 1], &[0, 0], &[(3, 1)], &[(3, 1)], c(1.0, 0.0)).unwrap();
        let (br, _) = n.poisson_bracket(&f).unwrap();
        // only −N_y F_x survives: −ω₂ · i e^{ix₂} z₃z̄₃
        assert_eq!(br.num_terms(), 1);
        assert!((br.coeff(&[0, 1], &[0, 0], &[(3, 1)], &[(3, 1)]) - c(0.0, -w2)).norm() < 1e-15);

        // F = e^{i x₂} y₁: N_x F_y gives ½ ∂₁Ω₃ e^{ix₂} z₃z̄₃, −N_y F_x gives −iω₂ e^{ix₂} y₁
        let mut g = shape(tangent, 4);
        g.add_term(&[0, 1], &[1, 0], &[], &[], c(1.0, 0.0)).unwrap();
        let (br, _) = n.poisson_bracket(&g).unwrap();
        assert!((br.coeff(&[0, 1], &[1, 0], &[], &[]) - c(0.0, -w2)).norm() < 1e-15);
        let dq = br.coeff(&[1, 1], &[0, 0], &[(3, 1)], &[(3, 1)]);
        assert!((dq - c(0.0, eps / 4.0)).norm() < 1e-15, "{dq}");
        let dq = br.coeff(&[-1, 1], &[0, 0], &[(3, 1)], &[(3, 1)]);
        assert!((dq - c(0.0, -eps / 4.0)).norm() < 1e-15, "{dq}");
        assert_eq!(br.num_terms(), 3);
    }

    #[test]
    fn normal_coordinate_bracket() {
        let mut a = shape(vec![1], 3);
        a.add_term(&[0], &[0], &[(2, 1)], &[], c(1.0, 0.0)).unwrap();
        let mut b = shape(vec![1], 3);
        b.add_term(&[0], &[0], &[], &[(2, 1)], c(1.0, 0.0)).unwrap();
        assert_eq!(a.poisson_bracket(&b).unwrap().0.coeff(&[0], &[0], &[], &[]), c(0.0, 2.0));
    }

    #[test]
    fn taylor_truncation_examples() {
        let mut p = shape(vec![1], 4);
        p.add_term(&[1], &[0], &[(2, 1)], &[(3, 1)], c(1.0, 0.0)).unwrap();
        p.add_term(&[0], &[1], &[], &[], c(0.5, 0.0)).unwrap();
        let (r, rest) = p.taylor_truncate_r();
        assert!(rest.is_zero());
        assert_eq!(r.to_poly(&p).unwrap(), p);

        let mut q = shape(vec![-1, 1], 4);
        q.add_term(&[0, 0], &[0, 0], &[(2, 1), (3, 1)], &[(2, 1), (3, 1)], c(1.0, 0.0)).unwrap();
        let (r, rest) = q.taylor_truncate_r();
        assert!(r.is_zero());
        assert_eq!(rest, q);

        let mut s = shape(vec![1], 4);
        s.add_term(&[0], &[2], &[], &[], c(1.0, 0.0)).unwrap();
        s.add_term(&[0], &[1], &[], &[], c(1.0, 0.0)).unwrap();
        let (r, rest) = s.taylor_truncate_r();
        assert_eq!(r.y[0].coeff(&[0]), c(1.0, 0.0));
        assert_eq!(rest.num_terms(), 1);
        assert_eq!(rest.coeff(&[0], &[2], &[], &[]), c(1.0, 0.0));
    }

    #[test]
    fn vf_norm_examples() {
        let w = AnalyticityWindow::new(0.5, 0.1, 0.0, 2.0).unwrap();
        let zero = shape(vec![1], 3);
        let v = zero.vf_norm(&w, 5, 1).unwrap();
        assert_eq!((v.sampled, v.majorant), (0.0, 0.0));

        let mut p = shape(vec![1], 3);
        p.add_term(&[0], &[1], &[], &[], c(1.0, 0.0)).unwrap();
        let v = p.vf_norm(&w, 5, 1).unwrap();
        assert!((v.majorant - 1.0).abs() < 1e-15);
        assert!((v.sampled - 1.0).abs() < 1e-15);

        let mut q = shape(vec![1], 3);
        q.add_term(&[0], &[0], &[(2, 1)], &[(2, 1)], c(0.3, 0.0)).unwrap();
        q.add_term(&[0], &[0], &[(-2, 1)], &[(3, 1)], c(0.1, 0.2)).unwrap();
        q.add_term(&[0], &[0], &[(3, 1)], &[(-2, 1)], c(0.1, -0.2)).unwrap();
        let a = q.vf_norm(&w, 200, 3).unwrap();
        let b = q.scale(c(-2.5, 0.0)).vf_norm(&w, 200, 3).unwrap();
        assert!((b.majorant - 2.5 * a.majorant).abs() < 1e-12 * a.majorant);
        assert!((b.sampled - 2.5 * a.sampled).abs() < 1e-12 * a.sampled);
        assert!(a.sampled <= a.majorant);
    }

    #[test]
    fn conservation_examples() {
        let mut p = shape(vec![-1, 1], 3);
        p.add_term(&[0, 0], &[0, 0], &[(2, 1)], &[(2, 1)], c(1.0, 0.0)).unwrap();
        let rep = p.check_momentum_mass();
        assert!(rep.momentum && rep.mass);
        let mut q = shape(vec![-1, 1], 3);
        q.add_term(&[0, 0], &[0, 0], &[(2, 1)], &[(3, 1)], c(1.0, 0.0)).unwrap();
        let rep = q.check_momentum_mass();
        assert!(!rep.momentum && rep.mass);
        assert_eq!(rep.violations.len(), 1);
    }

    #[test]
    fn lipschitz_examples() {
        let w = AnalyticityWindow::new(0.5, 0.1, 0.0, 2.0).unwrap();
        let a = ParameterPoint::from_entries(4, [(1, 0.3), (2, 0.1)]).unwrap();
        let b = ParameterPoint::from_entries(4, [(1, 0.5), (2, 0.1)]).unwrap();
        let pairs = vec![(a.clone(), b.clone())];
        let fixed = |_: &ParameterPoint| {
            let mut p = shape(vec![1], 3);
            p.add_term(&[0], &[1], &[], &[], c(2.0, 0.0)).unwrap();
            p
        };
        assert_eq!(HamiltonianPoly::lipschitz_seminorm(fixed, &pairs, &w).unwrap(), 0.0);
        let linear = |s: &ParameterPoint| {
            let mut p = shape(vec![1], 3);
            p.add_term(&[0], &[1], &[], &[], c(s.get(1), 0.0)).unwrap();
            p
        };
        let l = HamiltonianPoly::lipschitz_seminorm(linear, &pairs, &w).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        let same = vec![(a.clone(), a)];
        assert_eq!(
            HamiltonianPoly::lipschitz_seminorm(linear, &same, &w),
            Err(HamiltonianError::DegeneratePair)
        );
    }

    #[test]
    fn json_round_trip() {
        let mut p = shape(vec![-1, 1], 3);
        p.add_term(&[1, -1], &[1, 0], &[(2, 1)], &[(3, 1)], c(0.25, -1.5)).unwrap();
        p.add_term(&[0, 0], &[0, 0], &[(-2, 2)], &[], c(1.0, 0.0)).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let q: HamiltonianPoly = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        assert_eq!(serde_json::to_string(&q).unwrap(), s);
    }

    #[test]
    fn embed_tangent_moves_actions() {
        let mut p = shape(vec![1], 4);
        p.add_term(&[1], &[1], &[(3, 1)], &[], c(1.0, 0.0)).unwrap();
        let q = p.embed_tangent(&[-2, 1, 2]).unwrap();
        assert_eq!(q.coeff(&[0, 1, 0], &[0, 1, 0], &[(3, 1)], &[]), c(1.0, 0.0));
        assert!(p.embed_tangent(&[1, 3]).is_err());
    }
}
