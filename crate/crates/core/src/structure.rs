//! Numerical checks of the asymptotic estimate conditions on second
//! derivatives, of the frequency expansion and of the anti-diagonal error tail.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fourier::{TorusFourier, C64};
use crate::hamiltonian::{Channel, HamiltonianError, HamiltonianPoly};
use crate::measure::ParameterPoint;

#[derive(Debug, Error)]
pub enum StructureError {
    #[error("mode {0} is not a normal mode of the polynomial")]
    ModeOutOfRange(i32),
    #[error("ill-conditioned fit: {points} points, need at least {needed}")]
    IllConditionedFit { points: usize, needed: usize },
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
}

/// Which pair of variables is differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DerivativeKind {
    /// `∂²/∂z_{m+t} ∂z̄_{n+t}`.
    ZZbar,
    /// `∂²/∂z_{m+t} ∂z_{n−t}`.
    ZZ,
    /// `∂²/∂z̄_{m+t} ∂z̄_{n−t}`.
    ZbarZbar,
}

impl DerivativeKind {
    pub const ALL: [DerivativeKind; 3] = [DerivativeKind::ZZbar, DerivativeKind::ZZ, DerivativeKind::ZbarZbar];

    /// The two mode indices at `(m, n, t)`.
    pub fn modes(self, m: i32, n: i32, t: i32) -> (i32, i32) {
        match self {
            DerivativeKind::ZZbar => (m + t, n + t),
            DerivativeKind::ZZ | DerivativeKind::ZbarZbar => (m + t, n - t),
        }
    }

    /// `|n − m|` for the diagonal kind, `|n + m|` otherwise.
    pub fn decay_distance(self, m: i32, n: i32) -> i32 {
        match self {
            DerivativeKind::ZZbar => (n - m).abs(),
            _ => (n + m).abs(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DerivativeKind::ZZbar => "zzb",
            DerivativeKind::ZZ => "zz",
            DerivativeKind::ZbarZbar => "zbzb",
        }
    }
}

/// Lowers `power` of mode `m` by one; returns the multiplicity factor, 0 if absent.
fn lower(list: &mut Vec<(i32, u8)>, m: i32) -> u8 {
    match list.iter().position(|e| e.0 == m) {
        Some(i) => {
            let p = list[i].1;
            if p == 1 {
                list.remove(i);
            } else {
                list[i].1 -= 1;
            }
            p
        }
        None => 0,
    }
}

/// Exact second derivative `∂²P/∂w_a ∂w_b` (with `w` being `z` or `z̄` as `kind` says),
/// restricted to `y = 0`, `z = u`, `z̄ = ū`. The result is a function of the angles.
pub fn second_derivative(
    p: &HamiltonianPoly,
    u: &BTreeMap<i32, C64>,
    kind: DerivativeKind,
    a: i32,
    b: i32,
) -> Result<TorusFourier, StructureError> {
    for m in [a, b] {
        if !p.is_normal(m) {
            return Err(StructureError::ModeOutOfRange(m));
        }
    }
    let mut out = TorusFourier::new(p.tangent().to_vec(), p.harmonic_cap()).map_err(HamiltonianError::from)?;
    for (ch, f) in p.channels() {
        if ch.y_degree() > 0 {
            continue;
        }
        let mut z = ch.z.clone();
        let mut zb = ch.zb.clone();
        let (first, second) = match kind {
            DerivativeKind::ZZbar => (lower(&mut z, a), lower(&mut zb, b)),
            DerivativeKind::ZZ => {
                let pa = lower(&mut z, a);
                (pa, if pa > 0 { lower(&mut z, b) } else { 0 })
            }
            DerivativeKind::ZbarZbar => {
                let pa = lower(&mut zb, a);
                (pa, if pa > 0 { lower(&mut zb, b) } else { 0 })
            }
        };
        if first == 0 || second == 0 {
            continue;
        }
        let mut value = C64::new((first as u32 * second as u32) as f64, 0.0);
        for &(m, e) in &z {
            value *= u.get(&m).copied().unwrap_or_default().powu(e as u32);
        }
        for &(m, e) in &zb {
            value *= u.get(&m).copied().unwrap_or_default().conj().powu(e as u32);
        }
        if value != C64::default() {
            out.add_assign_scaled(value, f);
        }
    }
    Ok(out)
}

/// The block at `(m, n, t)`.
pub fn second_derivative_block(
    p: &HamiltonianPoly,
    u: &BTreeMap<i32, C64>,
    m: i32,
    n: i32,
    t: i32,
    kind: DerivativeKind,
) -> Result<TorusFourier, StructureError> {
    let (a, b) = kind.modes(m, n, t);
    second_derivative(p, u, kind, a, b)
}

/// Leading behaviour of the fitted template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Template {
    /// `t a + b + c/t`.
    Leading,
    /// `a + b/t + c/t²`.
    Bounded,
}

impl Template {
    fn basis(self, t: f64) -> [f64; 3] {
        match self {
            Template::Leading => [t, 1.0, 1.0 / t],
            Template::Bounded => [1.0, 1.0 / t, 1.0 / (t * t)],
        }
    }
}

/// Least-squares `t`-expansion of a family of angle functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionFit {
    pub a: TorusFourier,
    pub b: TorusFourier,
    pub c: TorusFourier,
    /// Largest residual relative to the largest sample.
    pub fit_residual: f64,
    pub t_samples: Vec<i32>,
}

/// Fits `samples(t)` to the template coefficientwise.
pub fn fit_expansion(samples: &[(i32, TorusFourier)], template: Template) -> Result<ExpansionFit, StructureError> {
    if samples.len() < 4 {
        return Err(StructureError::IllConditionedFit { points: samples.len(), needed: 4 });
    }
    let blank = samples[0].1.zero_like();
    let rows = samples.len();
    let design = DMatrix::from_fn(rows, 3, |i, j| template.basis(samples[i].0 as f64)[j]);
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(StructureError::IllConditionedFit { points: rows, needed: 4 });
    }
    let mut keys: Vec<Vec<i32>> = samples.iter().flat_map(|(_, f)| f.iter().map(|(k, _)| k.clone())).collect();
    keys.sort();
    keys.dedup();
    let (mut a, mut b, mut c) = (blank.clone(), blank.clone(), blank);
    let scale = samples.iter().map(|(_, f)| f.max_abs()).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for k in keys {
        let re = DVector::from_fn(rows, |i, _| samples[i].1.coeff(&k).re);
        let im = DVector::from_fn(rows, |i, _| samples[i].1.coeff(&k).im);
        let xr = svd.solve(&re, 1e-14).expect("svd has u and v");
        let xi = svd.solve(&im, 1e-14).expect("svd has u and v");
        let rr = (&design * &xr - &re).amax();
        let ri = (&design * &xi - &im).amax();
        worst = worst.max(rr.max(ri));
        a.insert(k.clone(), C64::new(xr[0], xi[0]));
        b.insert(k.clone(), C64::new(xr[1], xi[1]));
        c.insert(k, C64::new(xr[2], xi[2]));
    }
    Ok(ExpansionFit {
        a,
        b,
        c,
        fit_residual: if scale > 0.0 { worst / scale } else { worst },
        t_samples: samples.iter().map(|s| s.0).collect(),
    })
}

/// `(m, n)` pairs, a window of `t`, and the evaluation profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub pairs: Vec<(i32, i32)>,
    /// `T`: the expansion is fitted on `T ≤ |t| ≤ 4T` (both signs), restricted to `|t| ≥ Λ max(|m|,|n|)`.
    pub t_start: i32,
    pub profile: BTreeMap<i32, C64>,
    /// Strip width used for the sup norms.
    pub s: f64,
    /// Tolerance for refits over `[T,2T]` and `[2T,4T]` to agree.
    pub refit_tol: f64,
    /// Modes `d` for the `σ_d` finite differences.
    pub sigma_modes: Vec<i32>,
}

/// One checked bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub m: i32,
    pub n: i32,
    pub kind: DerivativeKind,
    pub check: String,
    pub bound: f64,
    pub measured: f64,
    pub margin: f64,
    pub pass: bool,
}

/// Pass/fail matrix of an asymptotic estimate check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticReport {
    pub rows: Vec<BoundRow>,
    pub pass: bool,
    pub max_fit_residual: f64,
}

impl AsymptoticReport {
    fn push(&mut self, m: i32, n: i32, kind: DerivativeKind, check: &str, bound: f64, measured: f64) {
        // relative slack for roundoff in the fitted coefficients
        let pass = measured <= bound * (1.0 + 1e-9) + 1e-14;
        self.pass &= pass;
        self.rows.push(BoundRow { m, n, kind, check: check.into(), bound, measured, margin: bound - measured, pass });
    }

    /// `(m, n, bound, measured, margin)` lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("m,n,kind,check,bound,measured,margin,pass\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{:.6e},{:.6e},{:.6e},{}\n",
                r.m,
                r.n,
                r.kind.name(),
                r.check,
                r.bound,
                r.measured,
                r.margin,
                r.pass
            ));
        }
        s
    }
}

/// A polynomial depending on the parameters, with the point to differentiate at.
pub struct ParameterFamily<'a> {
    pub build: &'a dyn Fn(&ParameterPoint) -> HamiltonianPoly,
    pub at: ParameterPoint,
}

fn mn_weight(m: i32, n: i32) -> f64 {
    // (|m|+|n|) := 1 when m = n = 0
    ((m.abs() + n.abs()) as f64).max(1.0)
}

fn in_range(p: &HamiltonianPoly, modes: (i32, i32)) -> bool {
    p.is_normal(modes.0) && p.is_normal(modes.1)
}

fn fit_window(
    p: &HamiltonianPoly,
    sweep: &Sweep,
    kind: DerivativeKind,
    m: i32,
    n: i32,
    t_min: i32,
    t_max: i32,
) -> Result<Vec<(i32, TorusFourier)>, StructureError> {
    let mut out = Vec::new();
    for mag in t_min..=t_max {
        for t in [mag, -mag] {
            if in_range(p, kind.modes(m, n, t)) {
                out.push((t, second_derivative_block(p, &sweep.profile, m, n, t, kind)?));
            }
        }
    }
    Ok(out)
}

fn check_asymptotic(
    p: &HamiltonianPoly,
    family: Option<&ParameterFamily>,
    lambda: f64,
    eps: f64,
    rho: f64,
    sweep: &Sweep,
    template: Template,
) -> Result<AsymptoticReport, StructureError> {
    let mut rep = AsymptoticReport { rows: Vec::new(), pass: true, max_fit_residual: 0.0 };
    let jmax = p.jmax();
    for &(m, n) in &sweep.pairs {
        for kind in DerivativeKind::ALL {
            let decay = (-(kind.decay_distance(m, n) as f64) * rho).exp();
            // plain bound over every admissible t
            let mut worst: f64 = 0.0;
            for t in -2 * jmax..=2 * jmax {
                let modes = kind.modes(m, n, t);
                if !in_range(p, modes) {
                    continue;
                }
                let d = second_derivative_block(p, &sweep.profile, m, n, t, kind)?;
                let growth = match template {
                    Template::Leading => modes.0.abs().max(modes.1.abs()) as f64,
                    Template::Bounded => 1.0,
                };
                worst = worst.max(d.sup_norm_bound(sweep.s) / (growth * decay));
            }
            rep.push(m, n, kind, "bound", eps, worst);

            // expansion for |t| ≥ Λ max(|m|,|n|)
            let t0 = sweep.t_start.max((lambda * m.abs().max(n.abs()) as f64).ceil() as i32).max(1);
            let samples = fit_window(p, sweep, kind, m, n, t0, 4 * t0)?;
            if samples.len() < 4 {
                continue;
            }
            let fit = fit_expansion(&samples, template)?;
            rep.max_fit_residual = rep.max_fit_residual.max(fit.fit_residual);
            let envelope = eps * decay;
            rep.push(m, n, kind, "a", envelope, fit.a.sup_norm_bound(sweep.s));
            rep.push(m, n, kind, "b", envelope, fit.b.sup_norm_bound(sweep.s));
            rep.push(m, n, kind, "c", envelope, fit.c.sup_norm_bound(sweep.s));
            rep.push(m, n, kind, "fit-residual", 1e-8, fit.fit_residual);
            // t-independence of the leading coefficient
            let lo = fit_window(p, sweep, kind, m, n, t0, 2 * t0)?;
            let hi = fit_window(p, sweep, kind, m, n, 2 * t0, 4 * t0)?;
            if lo.len() >= 4 && hi.len() >= 4 {
                let fa = fit_expansion(&lo, template)?;
                let fb = fit_expansion(&hi, template)?;
                let scale = fit.a.sup_norm_bound(sweep.s).max(1e-300);
                let diff = fa.a.sub(&fb.a).map_err(HamiltonianError::from)?.sup_norm_bound(sweep.s);
                rep.push(m, n, kind, "a-refit", sweep.refit_tol, if diff == 0.0 { 0.0 } else { diff / scale.max(1.0) });
            }
            // σ-derivatives of c by central differences
            if let Some(fam) = family {
                let tmin = samples.iter().map(|s| s.0.abs()).min().unwrap_or(t0) as f64;
                for &d in &sweep.sigma_modes {
                    let h = 1e-6 / d.abs() as f64;
                    let base = fam.at.get(d);
                    let (lo_v, hi_v) = ((base - h).max(0.0), (base + h).min(1.0 / d.abs() as f64));
                    if hi_v <= lo_v {
                        continue;
                    }
                    let mut plus = fam.at.clone();
                    let mut minus = fam.at.clone();
                    if plus.set(d, hi_v).is_err() || minus.set(d, lo_v).is_err() {
                        continue;
                    }
                    let fp = fit_expansion(&fit_window(&(fam.build)(&plus), sweep, kind, m, n, t0, 4 * t0)?, template)?;
                    let fm = fit_expansion(&fit_window(&(fam.build)(&minus), sweep, kind, m, n, t0, 4 * t0)?, template)?;
                    let dc = fp.c.sub(&fm.c).map_err(HamiltonianError::from)?.sup_norm_bound(sweep.s) / (hi_v - lo_v);
                    let (x, y) = match kind {
                        DerivativeKind::ZZbar => (m as f64 + tmin, n as f64 + tmin),
                        _ => (m as f64 + tmin, -(n as f64) + tmin),
                    };
                    let df = d as f64;
                    let env = eps
                        * (decay / df.abs()
                            + tmin * (-(x - df).abs() * rho).exp() * (-(y - df).abs() * rho).exp()
                            + tmin * (-(-x - df).abs() * rho).exp() * (-(-y - df).abs() * rho).exp());
                    rep.push(m, n, kind, &format!("dc/dsigma_{d}"), env, dc);
                }
            }
            let _ = mn_weight(m, n);
        }
    }
    Ok(rep)
}

/// First-type check: `‖∂²P‖ ≤ max{|·|,|·|} ε e^{−dist·ρ}` and the `t a + b + c/t` expansion.
pub fn verify_fae(
    p: &HamiltonianPoly,
    family: Option<&ParameterFamily>,
    lambda: f64,
    eps: f64,
    rho: f64,
    sweep: &Sweep,
) -> Result<AsymptoticReport, StructureError> {
    check_asymptotic(p, family, lambda, eps, rho, sweep, Template::Leading)
}

/// Second-type check: `‖∂²F‖ ≤ ε e^{−dist·ρ}` and the `a + b/t + c/t²` expansion.
pub fn verify_sae(
    f: &HamiltonianPoly,
    family: Option<&ParameterFamily>,
    lambda: f64,
    eps: f64,
    rho: f64,
    sweep: &Sweep,
) -> Result<AsymptoticReport, StructureError> {
    check_asymptotic(f, family, lambda, eps, rho, sweep, Template::Bounded)
}

/// `λ_n = |n|² + σ_n + nλ̄ + λ̃ + λ̂_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyDecomposition {
    pub lambda_bar: f64,
    pub lambda_tilde: f64,
    pub lambda_hat: BTreeMap<i32, f64>,
    /// `sup_n |n| |λ̂_n|`.
    pub decay: f64,
}

/// Least-squares fit of `(λ̄, λ̃)` to `λ_n − n² − σ_n` over the window.
pub fn frequency_expansion(
    lambda: &BTreeMap<i32, f64>,
    sigma: &ParameterPoint,
    window: &[i32],
) -> Result<FrequencyDecomposition, StructureError> {
    let pts: Vec<i32> = window.iter().copied().filter(|n| lambda.contains_key(n)).collect();
    let both_signs = pts.iter().any(|&n| n > 0) && pts.iter().any(|&n| n < 0);
    if pts.len() < 4 || !both_signs {
        return Err(StructureError::IllConditionedFit { points: pts.len(), needed: 4 });
    }
    let resid = |n: i32| lambda[&n] - (n * n) as f64 - sigma.get(n);
    let design = DMatrix::from_fn(pts.len(), 2, |i, j| if j == 0 { pts[i] as f64 } else { 1.0 });
    let rhs = DVector::from_fn(pts.len(), |i, _| resid(pts[i]));
    let sol = design.svd(true, true).solve(&rhs, 1e-14).expect("svd has u and v");
    let (lambda_bar, lambda_tilde) = (sol[0], sol[1]);
    let mut lambda_hat = BTreeMap::new();
    let mut decay: f64 = 0.0;
    for (&n, _) in lambda {
        let h = resid(n) - n as f64 * lambda_bar - lambda_tilde;
        decay = decay.max(n.abs() as f64 * h.abs());
        lambda_hat.insert(n, h);
    }
    Ok(FrequencyDecomposition { lambda_bar, lambda_tilde, lambda_hat, decay })
}

/// Normal frequencies `Ω̄_n` of a normal form over the given modes.
pub fn normal_frequencies(normal: &crate::hamiltonian::NormalForm, modes: &[i32]) -> BTreeMap<i32, f64> {
    modes.iter().map(|&n| (n, normal.omega_bar(n))).collect()
}

/// Anti-diagonal tail against the `e^{−ρK}` envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub k: u32,
    /// `r² Σ_{|j|>K} ‖R_{(−j)j}‖`.
    pub tail: f64,
    /// `r² ε e^{−ρK}`.
    pub unit: f64,
    /// `tail / unit`.
    pub constant: f64,
}

/// Majorant of `Σ_{|j|>K} R_{(−j)j} z_{−j} z̄_j` with `|z| ≤ r`.
pub fn check_error_tail(entries: &BTreeMap<i32, f64>, k: u32, rho: f64, r: f64, eps: f64) -> TailReport {
    let tail: f64 = entries.iter().filter(|(j, _)| j.unsigned_abs() > k).map(|(_, v)| v.abs()).sum::<f64>() * r * r;
    let unit = r * r * eps * (-rho * k as f64).exp();
    TailReport { k, tail, unit, constant: if unit > 0.0 { tail / unit } else { 0.0 } }
}

/// Slope of `log tail` against `K` by least squares.
pub fn log_linear_slope(reports: &[TailReport]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = reports.iter().filter(|r| r.tail > 0.0).map(|r| (r.k as f64, r.tail.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Anti-diagonal sup norms `‖R_{(−j)j}‖_s` of a perturbation.
pub fn anti_diagonal_entries(p: &HamiltonianPoly, s: f64) -> BTreeMap<i32, f64> {
    let n = p.n();
    p.normal_modes()
        .into_iter()
        .filter_map(|j| {
            let ch = Channel::new(vec![0; n], &[(-j, 1)], &[(j, 1)]);
            p.channel(&ch).map(|f| (j, f.sup_norm_bound(s)))
        })
        .collect()
}
