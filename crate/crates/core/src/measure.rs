//! Parameter space `Π_j [0, 1/|j|]`, its product measure, resonance zones and
//! Monte-Carlo zone measures.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::fourier::angle_bracket;
use crate::hamiltonian::NormalForm;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("σ_{j} = {value} outside [0, 1/|j|]")]
    OutOfRange { j: i32, value: f64 },
    #[error("mode index must be nonzero")]
    ZeroMode,
    #[error("dimension cutoff must be at least 1")]
    EmptyDimension,
    #[error("cylinder base is not a finite union of boxes")]
    NonBoxBase,
    #[error("box side [{lo}, {hi}] for mode {j} is not inside [0, 1/|j|]")]
    BadBox { j: i32, lo: f64, hi: f64 },
    #[error("at least {needed} samples are required, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("level must be positive")]
    NonPositiveLevel,
}

/// `σ = (σ_j)`, stored for `|j| ≤ dim_cutoff`, `default` beyond.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterPoint {
    entries: BTreeMap<i32, f64>,
    dim_cutoff: i32,
    default: f64,
}

impl ParameterPoint {
    pub fn zero(dim_cutoff: i32) -> Self {
        let entries = (-dim_cutoff..=dim_cutoff).filter(|&j| j != 0).map(|j| (j, 0.0)).collect();
        Self { entries, dim_cutoff, default: 0.0 }
    }

    /// Zero point with the listed entries overwritten.
    pub fn from_entries(dim_cutoff: i32, entries: impl IntoIterator<Item = (i32, f64)>) -> Result<Self, MeasureError> {
        if dim_cutoff < 1 {
            return Err(MeasureError::EmptyDimension);
        }
        let mut p = Self::zero(dim_cutoff);
        for (j, v) in entries {
            p.set(j, v)?;
        }
        Ok(p)
    }

    pub fn set(&mut self, j: i32, value: f64) -> Result<(), MeasureError> {
        if j == 0 {
            return Err(MeasureError::ZeroMode);
        }
        if !(0.0..=1.0 / j.unsigned_abs() as f64).contains(&value) {
            return Err(MeasureError::OutOfRange { j, value });
        }
        if j.abs() <= self.dim_cutoff {
            self.entries.insert(j, value);
        }
        Ok(())
    }

    pub fn get(&self, j: i32) -> f64 {
        self.entries.get(&j).copied().unwrap_or(self.default)
    }

    pub fn dim_cutoff(&self) -> i32 {
        self.dim_cutoff
    }

    pub fn entries(&self) -> &BTreeMap<i32, f64> {
        &self.entries
    }

    pub fn l2_distance(&self, other: &Self) -> f64 {
        let d = self.dim_cutoff.max(other.dim_cutoff);
        (-d..=d).filter(|&j| j != 0).map(|j| (self.get(j) - other.get(j)).powi(2)).sum::<f64>().sqrt()
    }
}

/// A box `Π_{j∈I} [lo_j, hi_j]`.
pub type ParamBox = BTreeMap<i32, (f64, f64)>;

/// Base of a cylinder set over the coordinates `index_set`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CylinderBase {
    /// Finite union of boxes, possibly overlapping.
    Boxes(Vec<ParamBox>),
    /// A predicate without box structure; only Monte-Carlo applies.
    Predicate(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderSet {
    pub index_set: Vec<i32>,
    pub base: CylinderBase,
}

/// Normalised length of `[lo, hi] ∩ [0, 1/|j|]`.
fn side_measure(j: i32, lo: f64, hi: f64) -> f64 {
    let top = 1.0 / j.unsigned_abs() as f64;
    ((hi.min(top) - lo.max(0.0)).max(0.0)) * j.unsigned_abs() as f64
}

fn box_measure(index_set: &[i32], b: &ParamBox) -> f64 {
    index_set
        .iter()
        .map(|&j| b.get(&j).map(|&(lo, hi)| side_measure(j, lo, hi)).unwrap_or(1.0))
        .product()
}

fn intersect(a: &ParamBox, b: &ParamBox) -> ParamBox {
    let mut out = a.clone();
    for (&j, &(lo, hi)) in b {
        let e = out.entry(j).or_insert((f64::NEG_INFINITY, f64::INFINITY));
        *e = (e.0.max(lo), e.1.min(hi));
    }
    out
}

/// Product measure of a cylinder with a box base, by inclusion-exclusion.
pub fn measure_of_cylinder(c: &CylinderSet) -> Result<f64, MeasureError> {
    let boxes = match &c.base {
        CylinderBase::Boxes(b) => b,
        CylinderBase::Predicate(_) => return Err(MeasureError::NonBoxBase),
    };
    for b in boxes {
        for (&j, &(lo, hi)) in b {
            if j == 0 {
                return Err(MeasureError::ZeroMode);
            }
            if !c.index_set.contains(&j) || lo > hi {
                return Err(MeasureError::BadBox { j, lo, hi });
            }
        }
    }
    if boxes.len() > 20 {
        return Err(MeasureError::NonBoxBase);
    }
    let mut total = 0.0;
    for mask in 1u32..(1 << boxes.len()) {
        let mut acc: Option<ParamBox> = None;
        for (i, b) in boxes.iter().enumerate() {
            if mask & (1 << i) != 0 {
                acc = Some(match acc {
                    None => b.clone(),
                    Some(a) => intersect(&a, b),
                });
            }
        }
        let m = box_measure(&c.index_set, &acc.expect("nonempty mask"));
        total += if mask.count_ones() % 2 == 1 { m } else { -m };
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Monte-Carlo measure of an arbitrary cylinder predicate.
pub fn measure_of_predicate_mc(
    dim: i32,
    pred: &dyn Fn(&ParameterPoint) -> bool,
    samples: usize,
    seed: u64,
) -> Result<ZoneEstimate, MeasureError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for _ in 0..samples {
        if pred(&draw(&mut rng, dim)) {
            hits += 1;
        }
    }
    ZoneEstimate::from_counts(hits, samples)
}

fn draw(rng: &mut ChaCha8Rng, dim: i32) -> ParameterPoint {
    let mut p = ParameterPoint::zero(dim);
    for j in (-dim..=dim).filter(|&j| j != 0) {
        let u: f64 = rng.random();
        p.entries.insert(j, u / j.unsigned_abs() as f64);
    }
    p
}

/// A point drawn from the product measure, `σ_j = u_j/|j|` for `|j| ≤ dim`.
pub fn sample_sigma(seed: u64, dim: i32) -> Result<ParameterPoint, MeasureError> {
    if dim < 1 {
        return Err(MeasureError::EmptyDimension);
    }
    Ok(draw(&mut ChaCha8Rng::seed_from_u64(seed), dim))
}

/// `σ_{k,α,τ}`: entries with `|j| ≥ ⟨k⟩^{2τ+2}/α²` set to zero.
pub fn truncate_sigma(sigma: &ParameterPoint, k: &[i32], alpha: f64, tau: f64) -> Result<ParameterPoint, MeasureError> {
    if !(alpha > 0.0) {
        return Err(MeasureError::NonPositiveLevel);
    }
    let cut = angle_bracket(k).powf(2.0 * tau + 2.0) / (alpha * alpha);
    let mut out = sigma.clone();
    for (j, v) in out.entries.iter_mut() {
        if j.unsigned_abs() as f64 >= cut {
            *v = 0.0;
        }
    }
    if sigma.dim_cutoff as f64 >= cut {
        out.default = 0.0;
    }
    Ok(out)
}

/// `⟨l⟩₂ = max(1, |Σ j² l_j|)`.
pub fn l2_weight(l: &[(i32, i32)]) -> f64 {
    (l.iter().map(|&(j, c)| (j * j * c) as f64).sum::<f64>()).abs().max(1.0)
}

/// Which divisor a zone or check refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DivisorClass {
    /// `⟨k,ω⟩`.
    Tangent,
    /// `⟨k,ω⟩ + Ω̄_i`.
    Single(i32),
    /// `⟨k,ω⟩ + Ω̄_i + Ω̄_j`.
    Sum(i32, i32),
    /// `⟨k,ω⟩ + Ω̄_i − Ω̄_j` with `i ≠ ±j`.
    Difference(i32, i32),
    /// `⟨k,ω⟩ + Ω̄_j − Ω̄_{−j}`.
    AntiDiagonal(i32),
}

impl DivisorClass {
    /// Normal multi-index as `(site, coefficient)`.
    pub fn l(self) -> Vec<(i32, i32)> {
        match self {
            DivisorClass::Tangent => vec![],
            DivisorClass::Single(i) => vec![(i, 1)],
            DivisorClass::Sum(i, j) => vec![(i, 1), (j, 1)],
            DivisorClass::Difference(i, j) => vec![(i, 1), (j, -1)],
            DivisorClass::AntiDiagonal(j) => vec![(j, 1), (-j, -1)],
        }
    }

    /// Weight multiplying the level: `⟨l⟩₂`, or `|j|` for the anti-diagonal class.
    pub fn weight(self) -> f64 {
        match self {
            DivisorClass::AntiDiagonal(j) => j.unsigned_abs() as f64,
            DivisorClass::Tangent => 1.0,
            other => l2_weight(&other.l()),
        }
    }
}

/// Frequencies at one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frequencies {
    pub tangent: Vec<i32>,
    pub omega: Vec<f64>,
    pub big_omega: BTreeMap<i32, f64>,
}

impl Frequencies {
    pub fn from_normal(normal: &NormalForm, modes: &[i32]) -> Self {
        Self {
            tangent: normal.tangent.clone(),
            omega: normal.omega_vec(),
            big_omega: modes.iter().map(|&m| (m, normal.omega_bar(m))).collect(),
        }
    }

    fn big(&self, j: i32) -> f64 {
        self.big_omega.get(&j).copied().unwrap_or((j * j) as f64)
    }

    pub fn divisor(&self, k: &[i32], class: DivisorClass) -> f64 {
        let kw: f64 = k.iter().zip(&self.omega).map(|(&a, &b)| a as f64 * b).sum();
        kw + class.l().iter().map(|&(j, c)| c as f64 * self.big(j)).sum::<f64>()
    }
}

/// `Ω̄_j(σ) = j² + σ_j + jλ̄ + λ̃ + λ̂_j`, the same law for tangent sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFrequencyModel {
    pub tangent: Vec<i32>,
    pub lambda_bar: f64,
    pub lambda_tilde: f64,
    pub hat: BTreeMap<i32, f64>,
}

impl AffineFrequencyModel {
    pub fn bare(tangent: Vec<i32>) -> Self {
        Self { tangent, lambda_bar: 0.0, lambda_tilde: 0.0, hat: BTreeMap::new() }
    }

    pub fn frequency(&self, sigma: &ParameterPoint, j: i32) -> f64 {
        (j * j) as f64 + sigma.get(j) + j as f64 * self.lambda_bar + self.lambda_tilde + self.hat.get(&j).copied().unwrap_or(0.0)
    }

    /// Sites the divisor depends on, each with its coefficient.
    fn sites(&self, k: &[i32], class: DivisorClass) -> BTreeMap<i32, i32> {
        let mut out = BTreeMap::new();
        for (&t, &c) in self.tangent.iter().zip(k) {
            *out.entry(t).or_insert(0) += c;
        }
        for (j, c) in class.l() {
            *out.entry(j).or_insert(0) += c;
        }
        out.retain(|_, c| *c != 0);
        out
    }

    pub fn divisor(&self, sigma: &ParameterPoint, k: &[i32], class: DivisorClass) -> f64 {
        self.sites(k, class).iter().map(|(&j, &c)| c as f64 * self.frequency(sigma, j)).sum()
    }

    /// Range of the divisor over the whole parameter box.
    pub fn divisor_range(&self, k: &[i32], class: DivisorClass) -> (f64, f64) {
        let zero = ParameterPoint::zero(1);
        let (mut lo, mut hi) = (0.0, 0.0);
        for (&j, &c) in &self.sites(k, class) {
            let base = c as f64 * self.frequency(&zero, j);
            let span = c as f64 / j.unsigned_abs() as f64;
            lo += base + span.min(0.0);
            hi += base + span.max(0.0);
        }
        (lo, hi)
    }

    /// `max_j |j|/|c_j|`... the smallest density bound of the divisor's law: `min_j |j|/|c_j|`.
    pub fn density_bound(&self, k: &[i32], class: DivisorClass) -> f64 {
        self.sites(k, class)
            .iter()
            .map(|(&j, &c)| j.unsigned_abs() as f64 / c.unsigned_abs() as f64)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn frequencies(&self, sigma: &ParameterPoint, modes: &[i32]) -> Frequencies {
        Frequencies {
            tangent: self.tangent.clone(),
            omega: self.tangent.iter().map(|&t| self.frequency(sigma, t)).collect(),
            big_omega: modes.iter().map(|&m| (m, self.frequency(sigma, m))).collect(),
        }
    }
}

/// Worst divisor of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMargin {
    /// `min |divisor| · ⟨k⟩^τ / (level · weight)`; the condition holds when `≥ 1`.
    pub ratio: f64,
    pub k: Vec<i32>,
    pub class: Option<DivisorClass>,
}

impl ConditionMargin {
    fn empty() -> Self {
        Self { ratio: f64::INFINITY, k: vec![], class: None }
    }

    fn offer(&mut self, ratio: f64, k: &[i32], class: DivisorClass) {
        if ratio < self.ratio {
            *self = Self { ratio, k: k.to_vec(), class: Some(class) };
        }
    }
}

/// Minimal margins of the small-divisor conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiophantineReport {
    pub tangent: ConditionMargin,
    pub single: ConditionMargin,
    pub pair: ConditionMargin,
    pub anti_diagonal: ConditionMargin,
    pub pass: bool,
}

/// Levels the conditions are checked at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiophantineLevels {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
}

impl DiophantineLevels {
    /// Smallest `α_v^i` of the row, `β_v` scaled.
    pub fn from_row(row: &crate::kam::ScheduleRow, beta_scale: f64, tau: f64) -> Self {
        let alpha = row.alpha.iter().copied().fold(f64::INFINITY, f64::min);
        Self { alpha, beta: beta_scale * row.beta, tau }
    }
}

/// All `k` with `|k|_1 ≤ kmax` in `n` dimensions.
pub fn harmonics(n: usize, kmax: u32) -> Vec<Vec<i32>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        let mut next = Vec::new();
        for k in &out {
            let used: u32 = k.iter().map(|v: &i32| v.unsigned_abs()).sum();
            let room = (kmax - used) as i32;
            for c in -room..=room {
                let mut kk = k.clone();
                kk.push(c);
                next.push(kk);
            }
        }
        out = next;
    }
    out
}

/// Enumerates every divisor with `|k|_1 ≤ k_check` over the given normal modes.
pub fn diophantine_check(freq: &Frequencies, modes: &[i32], levels: &DiophantineLevels, k_check: u32) -> DiophantineReport {
    let mut rep = DiophantineReport {
        tangent: ConditionMargin::empty(),
        single: ConditionMargin::empty(),
        pair: ConditionMargin::empty(),
        anti_diagonal: ConditionMargin::empty(),
        pass: true,
    };
    let scaled = |k: &[i32], class: DivisorClass, level: f64| {
        freq.divisor(k, class).abs() * angle_bracket(k).powf(levels.tau) / (level * class.weight())
    };
    for k in harmonics(freq.omega.len(), k_check) {
        let nonzero = k.iter().any(|&c| c != 0);
        if nonzero {
            rep.tangent.offer(scaled(&k, DivisorClass::Tangent, levels.alpha), &k, DivisorClass::Tangent);
        }
        for (a, &i) in modes.iter().enumerate() {
            rep.single.offer(scaled(&k, DivisorClass::Single(i), levels.alpha), &k, DivisorClass::Single(i));
            for &j in &modes[a..] {
                rep.pair.offer(scaled(&k, DivisorClass::Sum(i, j), levels.alpha), &k, DivisorClass::Sum(i, j));
            }
            for &j in modes {
                if j == i {
                    continue;
                }
                if j == -i {
                    if nonzero || i > 0 {
                        let c = DivisorClass::AntiDiagonal(i);
                        rep.anti_diagonal.offer(scaled(&k, c, levels.beta), &k, c);
                    }
                } else {
                    let c = DivisorClass::Difference(i, j);
                    rep.pair.offer(scaled(&k, c, levels.alpha), &k, c);
                }
            }
        }
    }
    rep.pass = [&rep.tangent, &rep.single, &rep.pair, &rep.anti_diagonal].iter().all(|m| m.ratio >= 1.0);
    rep
}

/// A resonance zone `{σ : |divisor(σ_{k,level,τ})| < 2·level·weight/⟨k⟩^τ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceZone {
    pub k: Vec<i32>,
    pub class: DivisorClass,
    /// `α` for tangent, single and pair zones, `β` for the anti-diagonal one.
    pub level: f64,
    pub tau: f64,
    pub v: usize,
}

impl ResonanceZone {
    pub fn threshold(&self) -> f64 {
        2.0 * self.level * self.class.weight() / angle_bracket(&self.k).powf(self.tau)
    }

    /// Membership, evaluated at the truncated point.
    pub fn contains(&self, model: &AffineFrequencyModel, sigma: &ParameterPoint) -> Result<bool, MeasureError> {
        let t = truncate_sigma(sigma, &self.k, self.level, self.tau)?;
        Ok(model.divisor(&t, &self.k, self.class).abs() < self.threshold())
    }

    /// Same test on the untruncated point.
    pub fn contains_untruncated(&self, model: &AffineFrequencyModel, sigma: &ParameterPoint) -> bool {
        model.divisor(sigma, &self.k, self.class).abs() < self.threshold()
    }

    /// Largest site the zone depends on.
    pub fn reach(&self, model: &AffineFrequencyModel) -> i32 {
        model.sites(&self.k, self.class).keys().map(|j| j.abs()).max().unwrap_or(1)
    }

    /// The divisor stays outside the zone over the whole parameter box.
    pub fn certified_empty(&self, model: &AffineFrequencyModel) -> bool {
        let (lo, hi) = model.divisor_range(&self.k, self.class);
        let thr = self.threshold();
        lo >= thr || hi <= -thr
    }

    /// Analytic envelope `C·level·weight/⟨k⟩^{τ−1}` (pair zones) or `C·level/⟨k⟩^τ` (anti-diagonal),
    /// with `C` from the density of the divisor's law.
    pub fn envelope(&self, model: &AffineFrequencyModel) -> Envelope {
        let bound = (2.0 * self.threshold() * model.density_bound(&self.k, self.class)).min(1.0);
        let kb = angle_bracket(&self.k);
        let unit = match self.class {
            DivisorClass::AntiDiagonal(_) => self.level / kb.powf(self.tau),
            _ => self.level * self.class.weight() / kb.powf(self.tau - 1.0),
        };
        Envelope { bound, unit, constant: bound / unit }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    /// Upper bound on the zone measure.
    pub bound: f64,
    /// The scale `level·weight/⟨k⟩^{τ−1}` or `level/⟨k⟩^τ`.
    pub unit: f64,
    /// `bound / unit`.
    pub constant: f64,
}

/// Monte-Carlo frequency with a Wilson 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneEstimate {
    pub hits: usize,
    pub samples: usize,
    pub estimate: f64,
    pub ci: (f64, f64),
}

impl ZoneEstimate {
    pub fn from_counts(hits: usize, samples: usize) -> Result<Self, MeasureError> {
        if samples == 0 {
            return Err(MeasureError::TooFewSamples { needed: 1, got: 0 });
        }
        let z = Normal::standard().inverse_cdf(0.975);
        let n = samples as f64;
        let p = hits as f64 / n;
        let denom = 1.0 + z * z / n;
        let centre = (p + z * z / (2.0 * n)) / denom;
        let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
        Ok(Self { hits, samples, estimate: p, ci: ((centre - half).max(0.0), (centre + half).min(1.0)) })
    }
}

pub const MIN_ZONE_SAMPLES: usize = 1000;

/// Monte-Carlo measure of a zone, sampling only the coordinates it can depend on.
pub fn zone_measure_mc(
    zone: &ResonanceZone,
    model: &AffineFrequencyModel,
    samples: usize,
    seed: u64,
) -> Result<ZoneEstimate, MeasureError> {
    if samples < MIN_ZONE_SAMPLES {
        return Err(MeasureError::TooFewSamples { needed: MIN_ZONE_SAMPLES, got: samples });
    }
    let dim = zone.reach(model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for _ in 0..samples {
        if zone.contains(model, &draw(&mut rng, dim))? {
            hits += 1;
        }
    }
    ZoneEstimate::from_counts(hits, samples)
}

/// `{ω₁ ∈ [0,1] : |ω₁ k₁ + c| < δ}` exactly.
pub fn surrogate_measure(k1: f64, c: f64, delta: f64) -> f64 {
    let (a, b) = ((-c - delta) / k1, (-c + delta) / k1);
    (a.max(b).min(1.0) - a.min(b).max(0.0)).max(0.0)
}

/// Monte-Carlo estimate of [`surrogate_measure`].
pub fn surrogate_measure_mc(k1: f64, c: f64, delta: f64, samples: usize, seed: u64) -> Result<ZoneEstimate, MeasureError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits = (0..samples).filter(|_| (rng.random::<f64>() * k1 + c).abs() < delta).count();
    ZoneEstimate::from_counts(hits, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxes(index_set: Vec<i32>, b: Vec<Vec<(i32, f64, f64)>>) -> CylinderSet {
        CylinderSet {
            index_set,
            base: CylinderBase::Boxes(b.into_iter().map(|v| v.into_iter().map(|(j, l, h)| (j, (l, h))).collect()).collect()),
        }
    }

    #[test]
    fn cylinder_examples() {
        assert_eq!(measure_of_cylinder(&boxes(vec![2], vec![vec![(2, 0.0, 0.25)]])).unwrap(), 0.5);
        assert_eq!(measure_of_cylinder(&boxes(vec![1, 2], vec![vec![(1, 0.0, 0.5), (2, 0.25, 0.5)]])).unwrap(), 0.25);
        assert_eq!(measure_of_cylinder(&boxes(vec![1, -3], vec![vec![(1, 0.0, 1.0), (-3, 0.0, 1.0 / 3.0)]])).unwrap(), 1.0);
        // overlapping boxes
        let u = boxes(vec![1], vec![vec![(1, 0.0, 0.5)], vec![(1, 0.25, 0.75)]]);
        assert!((measure_of_cylinder(&u).unwrap() - 0.75).abs() < 1e-15);
        let pred = CylinderSet { index_set: vec![1], base: CylinderBase::Predicate("σ₁² < 1/2".into()) };
        assert_eq!(measure_of_cylinder(&pred), Err(MeasureError::NonBoxBase));
        let mc = measure_of_predicate_mc(1, &|s| s.get(1) * s.get(1) < 0.5, 20_000, 4).unwrap();
        assert!(mc.ci.0 <= 0.5f64.sqrt() && 0.5f64.sqrt() <= mc.ci.1);
    }

    #[test]
    fn sample_sigma_examples() {
        assert_eq!(sample_sigma(11, 5).unwrap(), sample_sigma(11, 5).unwrap());
        assert_ne!(sample_sigma(11, 5).unwrap(), sample_sigma(12, 5).unwrap());
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sums = BTreeMap::new();
        for _ in 0..n {
            let p = draw(&mut rng, 3);
            for (&j, &v) in p.entries() {
                assert!((0.0..=1.0 / j.unsigned_abs() as f64).contains(&v));
                *sums.entry(j).or_insert(0.0) += v;
            }
        }
        for (j, s) in sums {
            let mean = s / n as f64;
            let width = 1.0 / j.unsigned_abs() as f64;
            let se = width / 12f64.sqrt() / (n as f64).sqrt();
            assert!((mean - width / 2.0).abs() < 3.0 * se, "j={j}");
        }
        assert_eq!(sample_sigma(1, 0), Err(MeasureError::EmptyDimension));
    }

    #[test]
    fn truncation_examples() {
        let s = sample_sigma(5, 6).unwrap();
        let z = truncate_sigma(&s, &[0], 1.0, 0.0).unwrap();
        assert!(z.entries().values().all(|&v| v == 0.0));
        assert_eq!(truncate_sigma(&s, &[3], 0.01, 2.0).unwrap(), s);
        let t = truncate_sigma(&s, &[2], 0.5, 0.0).unwrap();
        // ⟨k⟩² / α² = 16
        assert_eq!(t, s);
        let t = truncate_sigma(&s, &[1, 1], 1.0, 0.5).unwrap();
        // 2³ = 8 > 6
        assert_eq!(t, s);
        let t = truncate_sigma(&s, &[1], 0.5, 0.0).unwrap();
        for j in [-6, -5, -4, 4, 5, 6] {
            assert_eq!(t.get(j), 0.0);
        }
        for j in [-3, -1, 2, 3] {
            assert_eq!(t.get(j), s.get(j));
        }
        assert_eq!(truncate_sigma(&t, &[1], 0.5, 0.0).unwrap(), t);
        assert_eq!(truncate_sigma(&s, &[1], 0.0, 1.0), Err(MeasureError::NonPositiveLevel));
    }

    #[test]
    fn diophantine_surrogate_margins() {
        let f = Frequencies { tangent: vec![1, 2], omega: vec![1.0, 2f64.sqrt()], big_omega: BTreeMap::new() };
        let levels = DiophantineLevels { alpha: 1.0, beta: 1.0, tau: 0.0 };
        let rep = diophantine_check(&f, &[], &levels, 3);
        // direct enumeration: min over |k|₁ ≤ 3, k ≠ 0 of |k₁ + √2 k₂| is |−1 + √2| at k = (−1, 1)
        let mut best = f64::INFINITY;
        for a in -3i32..=3 {
            for b in -3i32..=3 {
                if (a, b) != (0, 0) && a.abs() + b.abs() <= 3 {
                    best = best.min((a as f64 + 2f64.sqrt() * b as f64).abs());
                }
            }
        }
        assert!((rep.tangent.ratio - best).abs() < 1e-15);
        assert!((best - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!(!rep.pass);
    }

    #[test]
    fn l2_weight_definition() {
        assert_eq!(DivisorClass::Difference(2, 5).weight(), 21.0);
        assert_eq!(DivisorClass::Sum(1, -1).weight(), 2.0);
        assert_eq!(DivisorClass::AntiDiagonal(3).weight(), 3.0);
        assert_eq!(l2_weight(&[(3, 1), (-3, -1)]), 1.0);
    }

    #[test]
    fn constructed_zone_fails_its_condition() {
        // ω₁ = 1.3 and 4·1.3 + Ω̄_2 − Ω̄_3 = 0
        let model = AffineFrequencyModel::bare(vec![1]);
        let s = ParameterPoint::from_entries(4, [(1, 0.3), (2, 0.1), (3, 0.3)]).unwrap();
        let class = DivisorClass::Difference(2, 3);
        let k = [4];
        assert!(model.divisor(&s, &k, class).abs() < 1e-14);
        let modes = [2, 3, -2, -3];
        let freq = model.frequencies(&s, &modes);
        let rep = diophantine_check(&freq, &modes, &DiophantineLevels { alpha: 1e-3, beta: 1e-3, tau: 2.0 }, 4);
        assert!(!rep.pass);
        assert!(rep.pair.ratio < 1e-9);
        // the mirrored divisor is the same up to sign
        let found = (rep.pair.k.clone(), rep.pair.class);
        assert!(found == (vec![4], Some(class)) || found == (vec![-4], Some(DivisorClass::Difference(3, 2))), "{found:?}");
        assert!(rep.tangent.ratio >= 1.0 && rep.single.ratio >= 1.0 && rep.anti_diagonal.ratio >= 1.0);
        let zone = ResonanceZone { k: k.to_vec(), class, level: 1e-3, tau: 2.0, v: 1 };
        assert!(zone.contains(&model, &s).unwrap());
    }

    #[test]
    fn case_one_zone_is_empty() {
        let model = AffineFrequencyModel::bare(vec![1, -1]);
        let zone = ResonanceZone { k: vec![1, 0], class: DivisorClass::Difference(2, 6), level: 1e-2, tau: 10.0, v: 2 };
        assert!(zone.certified_empty(&model));
        let est = zone_measure_mc(&zone, &model, 5000, 1).unwrap();
        assert_eq!(est.hits, 0);
    }

    #[test]
    fn surrogate_zone_matches_closed_form() {
        for &(k1, c, d) in &[(3.0, -1.0, 0.05), (1.0, -0.5, 0.2), (7.0, -3.5, 0.01)] {
            let exact = surrogate_measure(k1, c, d);
            assert!((exact - (2.0 * d / k1)).abs() < 1e-15);
            let mc = surrogate_measure_mc(k1, c, d, 100_000, 17).unwrap();
            assert!(mc.ci.0 <= exact && exact <= mc.ci.1, "{mc:?} vs {exact}");
        }
        assert_eq!(surrogate_measure(1.0, -0.5, 2.0), 1.0);
    }

    #[test]
    fn anti_diagonal_zones_one_j_per_k() {
        let mut model = AffineFrequencyModel::bare(vec![1, -1]);
        model.lambda_bar = 3.0;
        for k in harmonics(2, 2) {
            let live = (2..=12)
                .filter(|&j| {
                    let zone = ResonanceZone { k: k.clone(), class: DivisorClass::AntiDiagonal(j), level: 1e-3, tau: 4.0, v: 1 };
                    !zone.certified_empty(&model)
                })
                .count();
            assert!(live <= 1, "k={k:?}: {live}");
        }
    }

    #[test]
    fn wilson_interval() {
        let e = ZoneEstimate::from_counts(0, 1000).unwrap();
        assert_eq!(e.ci.0, 0.0);
        assert!(e.ci.1 > 0.0 && e.ci.1 < 0.005);
        let e = ZoneEstimate::from_counts(500, 1000).unwrap();
        assert!((e.ci.0 + e.ci.1 - 1.0).abs() < 1e-12);
    }
}
