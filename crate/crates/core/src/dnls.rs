//! The truncated DNLS Hamiltonian in Fourier coordinates and its closed-form
//! second derivatives.
//!
//! With `u = Σ q_j φ_j`, `φ_j = e^{ijx}/√(2π)`, the quartic part is
//! `P₀ = (1/8π) Σ_{a+b=c+d} d · q̄_a q̄_b q_c q_d` over ordered quadruples.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fourier::{AnalyticityWindow, TorusFourier, C64};
use crate::hamiltonian::{Channel, HamiltonianError, HamiltonianPoly, NormalForm};
use crate::kam::{excite_oscillators, KamError, KamState};
use crate::measure::ParameterPoint;

#[derive(Debug, Error)]
pub enum DnlsError {
    #[error("jmax must be at least 2, got {0}")]
    TooFewModes(i32),
    #[error("radius violation: r² = {r2} must be below min(I₁, I₋₁) = {i_min}")]
    RadiusViolation { r2: f64, i_min: f64 },
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Kam(#[from] Box<KamError>),
}

/// Inputs of the initial Hamiltonian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnlsConfig {
    pub jmax: i32,
    pub sigma: ParameterPoint,
    pub i_plus: f64,
    pub i_minus: f64,
    pub window: AnalyticityWindow,
    pub degree_cap: u32,
    pub harmonic_cap: u32,
}

impl DnlsConfig {
    pub fn validate(&self) -> Result<(), DnlsError> {
        if self.jmax < 2 {
            return Err(DnlsError::TooFewModes(self.jmax));
        }
        let i_min = self.i_plus.min(self.i_minus);
        let r2 = self.window.r * self.window.r;
        if !(r2 < i_min) {
            return Err(DnlsError::RadiusViolation { r2, i_min });
        }
        Ok(())
    }

    /// The torus point `q_{±1} = √(2I_{±1})`, zero elsewhere.
    pub fn default_profile(&self) -> BTreeMap<i32, C64> {
        let mut u = BTreeMap::new();
        u.insert(-1, C64::new((2.0 * self.i_minus).sqrt(), 0.0));
        u.insert(1, C64::new((2.0 * self.i_plus).sqrt(), 0.0));
        u
    }
}

/// Coefficient of the monomial `q̄_a q̄_b q_c q_d` (unordered pairs) in `P₀`.
pub fn quartic_coefficient(a: i32, b: i32, c: i32, d: i32) -> f64 {
    if a + b != c + d {
        return 0.0;
    }
    let mult = |x: i32, y: i32| if x == y { 1.0 } else { 2.0 };
    mult(a, b) * mult(c, d) * (c + d) as f64 / (16.0 * PI)
}

/// `½ Σ (j² + σ_j) q_j q̄_j + P₀` on modes `1 ≤ |j| ≤ jmax`, no tangential sites.
pub fn build_hamiltonian(cfg: &DnlsConfig) -> Result<HamiltonianPoly, DnlsError> {
    let mut h = build_quartic(cfg)?;
    for j in modes(cfg.jmax) {
        let w = (j * j) as f64 + cfg.sigma.get(j);
        h.add_term(&[], &[], &[(j, 1)], &[(j, 1)], C64::new(w / 2.0, 0.0))?;
    }
    Ok(h)
}

/// `P₀` alone.
pub fn build_quartic(cfg: &DnlsConfig) -> Result<HamiltonianPoly, DnlsError> {
    if cfg.jmax < 2 {
        return Err(DnlsError::TooFewModes(cfg.jmax));
    }
    let mut h = HamiltonianPoly::new(Vec::new(), cfg.jmax, cfg.degree_cap, cfg.harmonic_cap)?;
    let ms = modes(cfg.jmax);
    for (ia, &a) in ms.iter().enumerate() {
        for &b in &ms[ia..] {
            for (ic, &c) in ms.iter().enumerate() {
                for &d in &ms[ic..] {
                    let coef = quartic_coefficient(a, b, c, d);
                    if coef != 0.0 {
                        h.add_term(&[], &[], &[(c, 1), (d, 1)], &[(a, 1), (b, 1)], C64::new(coef, 0.0))?;
                    }
                }
            }
        }
    }
    h.prune(0.0);
    Ok(h)
}

fn modes(jmax: i32) -> Vec<i32> {
    (-jmax..=jmax).filter(|&j| j != 0).collect()
}

/// Splits the quadratic diagonal into a normal form and excites `±1`.
/// Returns `(N, P, excitation tail)`.
pub fn initial_action_angle(h: &HamiltonianPoly, cfg: &DnlsConfig) -> Result<(NormalForm, HamiltonianPoly, f64), DnlsError> {
    cfg.validate()?;
    let mut p = h.clone();
    let mut normal = NormalForm { tangent: Vec::new(), omega: BTreeMap::new(), stages: BTreeMap::new() };
    let shape_sites: Vec<i32> = Vec::new();
    for j in modes(cfg.jmax) {
        let ch = Channel::new(Vec::new(), &[(j, 1)], &[(j, 1)]);
        if let Some(f) = p.channel(&ch) {
            let omega_j = f.scale(C64::new(2.0, 0.0));
            let neg = f.scale(C64::new(-1.0, 0.0));
            p.add_channel(ch, &neg)?;
            normal.stages.insert(j, vec![omega_j.with_cutoff(0).0]);
        } else {
            normal.stages.insert(j, vec![TorusFourier::new(shape_sites.clone(), 0).expect("empty torus")]);
        }
    }
    p.prune(0.0);
    let (normal, p, tail) =
        excite_oscillators(&normal, &p, 1, cfg.i_plus, cfg.i_minus, &cfg.window).map_err(Box::new)?;
    Ok((normal, p, tail))
}

/// `N`, `P` and the window of step 0, plus the excitation tail.
pub fn initial_state(cfg: &DnlsConfig) -> Result<(KamState, f64), DnlsError> {
    let h = build_hamiltonian(cfg)?;
    let (normal, p, tail) = initial_action_angle(&h, cfg)?;
    Ok((KamState { v: 0, normal, p, window: cfg.window }, tail))
}

/// Chooses `r` (with `I_{±1} = i_factor·r²`) so that the initial majorant is close to `eps_target`.
/// Uses that the majorant scales like `r²` to leading order; returns the configuration and the
/// majorant it achieves.
pub fn calibrate_radius(template: &DnlsConfig, i_factor: f64, eps_target: f64) -> Result<(DnlsConfig, f64), DnlsError> {
    let with_r = |r: f64| -> Result<(DnlsConfig, f64), DnlsError> {
        let mut cfg = template.clone();
        cfg.window = AnalyticityWindow::new(template.window.s, r, template.window.a, template.window.p)
            .map_err(HamiltonianError::from)?;
        cfg.i_plus = i_factor * r * r;
        cfg.i_minus = i_factor * r * r;
        let (st, _) = initial_state(&cfg)?;
        let eps = st.p.vf_majorant(&st.window);
        Ok((cfg, eps))
    };
    let mut best = with_r(template.window.r)?;
    for _ in 0..3 {
        let r = best.0.window.r * (eps_target / best.1).sqrt();
        best = with_r(r)?;
        if (best.1 / eps_target - 1.0).abs() < 0.05 {
            break;
        }
    }
    Ok(best)
}

/// `σ_j = 0.3/j` for `j > 0`, `σ_j = 0.6/|j|` for `j < 0`.
pub fn reference_sigma(jmax: i32) -> ParameterPoint {
    ParameterPoint::from_entries(jmax, (1..=jmax).flat_map(|j| [(j, 0.3 / j as f64), (-j, 0.6 / j as f64)]))
        .expect("entries inside [0, 1/|j|]")
}

/// `(1/2π)·∫_T e^{iℓx} Σ_{a,b} A_a B_b e^{i(b−a)x}·w(b) dx` collapsed by orthogonality.
fn pair_integral(u: &BTreeMap<i32, C64>, ell: i32, conj_first: bool, conj_second: bool, weight: impl Fn(i32) -> C64) -> C64 {
    // factors: first q̄_a e^{−iax} or q_a e^{iax}; second likewise
    let mut total = C64::default();
    for (&a, &qa) in u {
        for (&b, &qb) in u {
            let (ea, va) = if conj_first { (-a, qa.conj()) } else { (a, qa) };
            let (eb, vb) = if conj_second { (-b, qb.conj()) } else { (b, qb) };
            if ea + eb + ell == 0 {
                total += va * vb * weight(b);
            }
        }
    }
    // u·v carries (2π)^{-1}, the integral 2π, and the closed forms an extra 1/(2π)
    total / (2.0 * PI)
}

/// An admissible `ε` for the first-type asymptotics of `P₀` at the profile `u`:
/// `(1 + A) S e^{2Aρ}/(2π)` with `S = Σ|q_a|²` and `A = max |a|` over the support.
/// For `q_{±1} = √(2I)` this is `C r²` once `I` is proportional to `r²`.
pub fn p0_fae_size(u: &BTreeMap<i32, C64>, rho: f64) -> f64 {
    let s: f64 = u.values().map(|q| q.norm_sqr()).sum();
    let a = u.iter().filter(|(_, q)| q.norm() > 0.0).map(|(j, _)| j.abs()).max().unwrap_or(0) as f64;
    (1.0 + a) * s * (2.0 * a * rho).exp() / (2.0 * PI)
}

/// The three closed-form second derivatives of `P₀` at the profile `u = Σ q_j φ_j`:
/// `(∂²/∂z̄_{n+t}∂z_{m+t}, ∂²/∂z_{n+t}∂z_{m−t}, ∂²/∂z̄_{n+t}∂z̄_{m−t})`.
pub fn p0_second_derivatives(u: &BTreeMap<i32, C64>, m: i32, n: i32, t: i32) -> [C64; 3] {
    let i = C64::new(0.0, 1.0);
    // −(i/2)∫ ū u_x e^{i(m−n)x} + ½(m+t)∫ ū u e^{i(m−n)x}
    let first = -i / 2.0 * pair_integral(u, m - n, true, false, |b| i * b as f64)
        + 0.5 * (m + t) as f64 * pair_integral(u, m - n, true, false, |_| C64::new(1.0, 0.0));
    // ¼(n+m)∫ ū² e^{i(m+n)x}
    let second = 0.25 * (n + m) as f64 * pair_integral(u, m + n, true, true, |_| C64::new(1.0, 0.0));
    // −(i/2)∫ u u_x e^{−i(n+m)x}
    let third = -i / 2.0 * pair_integral(u, -(n + m), false, false, |b| i * b as f64);
    [first, second, third]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{second_derivative, DerivativeKind};

    pub(crate) fn config(jmax: i32) -> DnlsConfig {
        DnlsConfig {
            jmax,
            sigma: reference_sigma(jmax),
            i_plus: 1e-2,
            i_minus: 1e-2,
            window: AnalyticityWindow::new(1.0, 0.05, 0.0, 2.0).unwrap(),
            degree_cap: 4,
            harmonic_cap: 8,
        }
    }

    #[test]
    fn selection_rule_and_quadratic() {
        let cfg = config(2);
        let h = build_hamiltonian(&cfg).unwrap();
        // a + b − c − d ≠ 0 ⇒ absent
        assert_eq!(h.coeff(&[], &[], &[(1, 1), (2, 1)], &[(1, 1), (1, 1)]), C64::default());
        assert_eq!(h.coeff(&[], &[], &[(1, 1), (2, 1)], &[(-1, 1), (2, 1)]), C64::default());
        for j in [-2, -1, 1, 2] {
            let want = ((j * j) as f64 + cfg.sigma.get(j)) / 2.0;
            let got = h.coeff(&[], &[], &[(j, 1)], &[(j, 1)]);
            assert!((got.re - want).abs() < 1e-15);
        }
        let rep = h.check_momentum_mass();
        assert!(rep.momentum && rep.mass);
        assert!(h.is_real(1e-15));
    }

    #[test]
    fn quartic_by_brute_force_integral() {
        // ordered-sum oracle: (1/8π) Σ_{a+b=c+d} d q̄_a q̄_b q_c q_d at a random point
        use rand::{Rng, SeedableRng};
        let cfg = config(3);
        let p0 = build_quartic(&cfg).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let q: BTreeMap<i32, C64> = modes(3).into_iter().map(|j| (j, C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))).collect();
        let mut oracle = C64::default();
        for (&a, qa) in &q {
            for (&b, qb) in &q {
                for (&c, qc) in &q {
                    for (&d, qd) in &q {
                        if a + b == c + d {
                            oracle += qa.conj() * qb.conj() * qc * qd * d as f64 / (8.0 * PI);
                        }
                    }
                }
            }
        }
        let pt = crate::hamiltonian::PhasePoint {
            x: vec![],
            y: vec![],
            z: q.clone(),
            zb: q.iter().map(|(&j, v)| (j, v.conj())).collect(),
        };
        let got = p0.eval(&pt).unwrap();
        assert!((got - oracle).norm() < 1e-13, "{got} vs {oracle}");
        // real on the real subspace
        assert!(got.im.abs() < 1e-13);
    }

    #[test]
    fn closed_forms_on_single_mode() {
        let mut u = BTreeMap::new();
        u.insert(1, C64::new((2.0 * PI).sqrt(), 0.0));
        for t in [-2, 1, 3] {
            let [first, ..] = p0_second_derivatives(&u, 0, 0, t);
            assert!((first - C64::new(0.5 + 0.5 * t as f64, 0.0)).norm() < 1e-14);
        }
        let zero = BTreeMap::new();
        assert_eq!(p0_second_derivatives(&zero, 1, 2, 3), [C64::default(); 3]);
    }

    #[test]
    fn closed_forms_match_polynomial_derivatives() {
        use rand::{Rng, SeedableRng};
        let cfg = config(8);
        let p0 = build_quartic(&cfg).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut profiles = vec![cfg.default_profile()];
        let random: BTreeMap<i32, C64> = modes(3).into_iter().map(|j| (j, C64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)))).collect();
        profiles.push(random);
        for u in &profiles {
            for m in -6..=6 {
                for n in -6..=6 {
                    for t in -6..=6 {
                        let closed = p0_second_derivatives(u, m, n, t);
                        let kinds = [
                            (DerivativeKind::ZZbar, m + t, n + t),
                            (DerivativeKind::ZZ, m + t, n - t),
                            (DerivativeKind::ZbarZbar, m + t, n - t),
                        ];
                        for (idx, (kind, a, b)) in kinds.into_iter().enumerate() {
                            if a == 0 || b == 0 || a.abs() > 6 || b.abs() > 6 {
                                continue;
                            }
                            let d = second_derivative(&p0, u, kind, a, b).unwrap();
                            let got = d.coeff(&[]);
                            assert!((got - closed[idx]).norm() < 1e-12, "kind {idx} m={m} n={n} t={t}: {got} vs {}", closed[idx]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn calibration_hits_target() {
        let mut cfg = config(4);
        cfg.window = AnalyticityWindow::new(1.0, 0.01, 0.0, 2.0).unwrap();
        let (tuned, eps) = calibrate_radius(&cfg, 2.0, 1e-3).unwrap();
        assert!((eps / 1e-3 - 1.0).abs() < 0.1, "{eps}");
        assert_eq!(tuned.i_plus, 2.0 * tuned.window.r * tuned.window.r);
    }

    #[test]
    fn action_angle_frequencies() {
        let cfg = config(4);
        let h = build_hamiltonian(&cfg).unwrap();
        let (normal, p, _) = initial_action_angle(&h, &cfg).unwrap();
        assert_eq!(normal.tangent, vec![-1, 1]);
        for j in [-1, 1] {
            assert!((normal.omega[&j] - (1.0 + cfg.sigma.get(j))).abs() < 1e-15);
        }
        assert!((normal.omega_bar(2) - (4.0 + cfg.sigma.get(2))).abs() < 1e-15);
        assert!(normal.omega_tilde(2).unwrap().is_zero());
        let rep = p.check_momentum_mass();
        assert!(rep.momentum && rep.mass, "{:?}", rep.violations.first());
        assert!(p.is_real(1e-14));
    }

    #[test]
    fn perturbation_scales_like_r_squared() {
        let cfg = config(6);
        let h = build_hamiltonian(&cfg).unwrap();
        // only the normal-mode quartic block, where the r² law is exact
        let p0 = build_quartic(&cfg).unwrap();
        let w1 = AnalyticityWindow::new(1.0, 0.04, 0.0, 2.0).unwrap();
        let w2 = AnalyticityWindow::new(1.0, 0.02, 0.0, 2.0).unwrap();
        let ratio = p0.vf_majorant(&w1) / p0.vf_majorant(&w2);
        assert!((ratio - 4.0).abs() < 1e-10, "{ratio}");
        let _ = h;
    }
}
