//! Small-divisor solvers: constant and variable coefficient homological
//! equations on the torus, the coordinate transform that straightens a
//! variable coefficient, the gauge-plus-refinement Liu–Yuan solver, the
//! block solver for a full KAM step, and a dense Galerkin oracle.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fourier::{angle_bracket, dot, l1, AnalyticityWindow, FourierError, Harmonic, TorusFourier, C64};
use crate::hamiltonian::{NormalForm, RBlocks};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("right-hand side has nonzero average {value}")]
    NonzeroAverage { value: f64 },
    #[error("small divisor {value:e} < bound {bound:e} at k = {k:?} ({context})")]
    SmallDivisor { k: Harmonic, value: f64, bound: f64, context: String },
    #[error("Picard iteration diverges (increment ratio {ratio})")]
    PicardDivergence { ratio: f64 },
    #[error("strip claim fails at Im x = {im_x:e}: |Im b| = {im_b:e}")]
    StripViolation { im_x: f64, im_b: f64 },
    #[error("refinement sweep contracted only by {ratio} (need ≤ 1/2)")]
    NonContraction { ratio: f64 },
    #[error("dense system is singular")]
    SingularSystem,
    #[error("guard e^(CKsΣγ) = {lhs:e} exceeds σ^(−C(n+τ)) = {rhs:e}")]
    GuardViolation { lhs: f64, rhs: f64 },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Fourier(#[from] FourierError),
}

/// Per-stage Diophantine constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiophantineProfile {
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub tau: Vec<f64>,
    pub m_lower: f64,
    pub gamma: Vec<f64>,
}

impl DiophantineProfile {
    /// Checks `α_l > 0`, `β > 0`, `τ_l ≥ #J_l + 10`, `0 < Σγ_l ≤ 1/10`, `m > 0`.
    pub fn new(
        alpha: Vec<f64>,
        beta: f64,
        tau: Vec<f64>,
        m_lower: f64,
        gamma: Vec<f64>,
        stage_dims: &[usize],
    ) -> Result<Self, SolverError> {
        let bad = |m: String| Err(SolverError::InvalidProfile(m));
        if alpha.is_empty() || alpha.iter().any(|&a| !(a > 0.0)) {
            return bad(format!("alpha {alpha:?}"));
        }
        if !(beta > 0.0) || !(m_lower > 0.0) {
            return bad(format!("beta {beta}, m {m_lower}"));
        }
        if tau.len() != alpha.len() || gamma.len() != alpha.len() || stage_dims.len() != alpha.len() {
            return bad("stage lengths differ".into());
        }
        for (t, &d) in tau.iter().zip(stage_dims) {
            if *t < d as f64 + 10.0 {
                return bad(format!("tau {t} < #J + 10 = {}", d + 10));
            }
        }
        let gs: f64 = gamma.iter().sum();
        if !(gs > 0.0) || gs > 0.1 || gamma.iter().any(|&g| g < 0.0) {
            return bad(format!("sum of gamma {gs}"));
        }
        Ok(Self { alpha, beta, tau, m_lower, gamma })
    }

    /// Single-stage profile used by tests and the CLI.
    pub fn single(alpha: f64, beta: f64, tau: f64, gamma: f64, n: usize) -> Result<Self, SolverError> {
        Self::new(vec![alpha], beta, vec![tau], 0.5, vec![gamma], &[n])
    }

    pub fn alpha_min(&self) -> f64 {
        self.alpha.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn tau_max(&self) -> f64 {
        self.tau.iter().copied().fold(0.0, f64::max)
    }

    pub fn gamma_sum(&self) -> f64 {
        self.gamma.iter().sum()
    }
}

/// One checked small divisor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divisor {
    pub k: Harmonic,
    pub value: C64,
    pub shift_desc: String,
}

/// Diagnostics of a single linear solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Smallest `|divisor|·⟨k⟩^τ / bound` ratio among harmonics present; `∞` if none.
    pub divisor_margin: f64,
    pub divisor_min: f64,
    pub divisors_checked: usize,
    /// Relative residual of the Galerkin equation on retained modes.
    pub residual: f64,
    /// Residual of the transform solution before refinement (variable coefficients only).
    pub transform_residual: Option<f64>,
    pub sweeps: usize,
    /// A priori bound on the strip majorant of the solution.
    pub norm_certificate: f64,
    pub measured_norm: f64,
}

impl SolveReport {
    fn new() -> Self {
        Self {
            divisor_margin: f64::INFINITY,
            divisor_min: f64::INFINITY,
            divisors_checked: 0,
            residual: 0.0,
            transform_residual: None,
            sweeps: 0,
            norm_certificate: 0.0,
            measured_norm: 0.0,
        }
    }

    fn record(&mut self, value: f64, ratio: f64) {
        self.divisors_checked += 1;
        self.divisor_min = self.divisor_min.min(value);
        self.divisor_margin = self.divisor_margin.min(ratio);
    }
}

fn check_average(p: &TorusFourier) -> Result<(), SolverError> {
    let (avg, _) = p.average_and_tilde();
    let scale = 1.0 + p.sup_norm_bound(0.0);
    if avg.norm() > 1e-14 * scale {
        return Err(SolverError::NonzeroAverage { value: avg.norm() });
    }
    Ok(())
}

/// `∂_ω u = p` with `[p] = 0`: `û(k) = p̂(k)/(i⟨k,ω⟩)`.
pub fn solve_dw(
    omega: &[f64],
    p: &TorusFourier,
    profile: &DiophantineProfile,
    s: f64,
) -> Result<(TorusFourier, SolveReport), SolverError> {
    check_average(p)?;
    if omega.len() != p.dim() {
        return Err(FourierError::DimensionMismatch { expected: p.dim(), got: omega.len() }.into());
    }
    let alpha = profile.alpha_min();
    let tau = profile.tau_max();
    let mut rep = SolveReport::new();
    let mut u = p.zero_like();
    let mut alpha_eff = f64::INFINITY;
    for (k, c) in p.iter() {
        if l1(k) == 0 || *c == C64::default() {
            continue;
        }
        let d = dot(k, omega);
        let kt = angle_bracket(k).powf(tau);
        let bound = alpha / kt;
        rep.record(d.abs(), d.abs() / bound);
        if !(d.abs() >= bound) || d == 0.0 {
            return Err(SolverError::SmallDivisor { k: k.clone(), value: d.abs(), bound, context: "⟨k,ω⟩".into() });
        }
        alpha_eff = alpha_eff.min(d.abs() * kt);
        u.set(k.clone(), c / C64::new(0.0, d));
    }
    rep.measured_norm = u.sup_norm_bound(s);
    rep.norm_certificate = if alpha_eff.is_finite() { p.weighted_norm(s, tau) / alpha_eff } else { 0.0 };
    let resid = u.d_omega(omega)?.sub(p)?;
    rep.residual = relative(resid.max_abs(), p.max_abs());
    Ok((u, rep))
}

fn relative(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// `(i∂_ω + λ) v = p`: `v̂(k) = p̂(k)/(λ − ⟨k,ω⟩)`, divisor bound `β/⟨k⟩^τ`.
pub fn solve_shifted(
    omega: &[f64],
    lambda: C64,
    p: &TorusFourier,
    profile: &DiophantineProfile,
    s: f64,
) -> Result<(TorusFourier, SolveReport), SolverError> {
    shifted_core(omega, lambda, p, profile.beta, profile.tau_max(), s, "λ − ⟨k,ω⟩")
}

fn shifted_core(
    omega: &[f64],
    lambda: C64,
    p: &TorusFourier,
    beta: f64,
    tau: f64,
    s: f64,
    context: &str,
) -> Result<(TorusFourier, SolveReport), SolverError> {
    if omega.len() != p.dim() {
        return Err(FourierError::DimensionMismatch { expected: p.dim(), got: omega.len() }.into());
    }
    let mut rep = SolveReport::new();
    let mut v = p.zero_like();
    let mut beta_eff = f64::INFINITY;
    for (k, c) in p.iter() {
        if *c == C64::default() {
            continue;
        }
        let d = lambda - dot(k, omega);
        let kt = angle_bracket(k).powf(tau);
        let bound = beta / kt;
        rep.record(d.norm(), d.norm() / bound);
        if !(d.norm() >= bound) || d.norm() == 0.0 {
            return Err(SolverError::SmallDivisor { k: k.clone(), value: d.norm(), bound, context: context.into() });
        }
        beta_eff = beta_eff.min(d.norm() * kt);
        v.set(k.clone(), c / d);
    }
    rep.measured_norm = v.sup_norm_bound(s);
    rep.norm_certificate = if beta_eff.is_finite() {
        p.iter().map(|(k, c)| c.norm() * angle_bracket(k).powf(tau) * (l1(k) as f64 * s).exp()).sum::<f64>()
            / beta_eff
    } else {
        0.0
    };
    Ok((v, rep))
}

/// `Γ_K (sym(k) û + coef·u)` with `sym(k) = sign·⟨k,ω⟩ + λ`.
#[derive(Debug, Clone)]
struct GalerkinOp<'a> {
    omega: &'a [f64],
    sign: f64,
    lambda: C64,
    coef: Option<&'a TorusFourier>,
    cutoff: u32,
}

impl GalerkinOp<'_> {
    fn apply(&self, u: &TorusFourier) -> TorusFourier {
        let mut out = TorusFourier::new(u.index_set().to_vec(), self.cutoff).expect("valid");
        for (k, c) in u.iter() {
            out.insert(k.clone(), c * (self.lambda + self.sign * dot(k, self.omega)));
        }
        if let Some(m) = self.coef {
            let (prod, _) = m.mul(u, self.cutoff).expect("same sites");
            out.add_assign_scaled(C64::new(1.0, 0.0), &prod);
        }
        out
    }
}

/// Enumerates `k ∈ Z^n` with `|k|_1 ≤ K`, in lexicographic order.
pub fn harmonic_ball(n: usize, k_max: u32) -> Vec<Harmonic> {
    fn rec(prefix: &mut Vec<i32>, n: usize, budget: i32, out: &mut Vec<Harmonic>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for v in -budget..=budget {
            prefix.push(v);
            rec(prefix, n, budget - v.abs(), out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), n, k_max as i32, &mut out);
    out
}

/// Report of the dense Galerkin solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub basis_size: usize,
    pub condition_number: f64,
    pub residual: f64,
}

/// Brute-force solve of `−i∂_ω u + λu + μu = p` on the basis `|k|_1 ≤ K`.
pub fn dense_oracle_solve(
    omega: &[f64],
    lambda: C64,
    mu: &TorusFourier,
    p: &TorusFourier,
    k_max: u32,
) -> Result<(TorusFourier, OracleReport), SolverError> {
    let sites = p.index_set().to_vec();
    let mu = mu.embed(&sites)?;
    let basis = harmonic_ball(sites.len(), k_max);
    let index: BTreeMap<&Harmonic, usize> = basis.iter().enumerate().map(|(i, k)| (k, i)).collect();
    let size = basis.len();
    let mut a = DMatrix::<C64>::zeros(size, size);
    for (i, k) in basis.iter().enumerate() {
        a[(i, i)] += C64::new(dot(k, omega), 0.0) + lambda;
        for (km, c) in mu.iter() {
            let target: Harmonic = k.iter().zip(km).map(|(a, b)| a + b).collect();
            if let Some(&row) = index.get(&target) {
                a[(row, i)] += c;
            }
        }
    }
    let rhs = DVector::<C64>::from_iterator(size, basis.iter().map(|k| p.coeff(k)));
    let sv = a.clone().singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if !(smin > 0.0) || smin < smax * 1e-15 {
        return Err(SolverError::SingularSystem);
    }
    let sol = a.clone().lu().solve(&rhs).ok_or(SolverError::SingularSystem)?;
    let res = (&a * &sol - &rhs).iter().map(|c| c.norm()).fold(0.0, f64::max);
    let pmax = rhs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut u = TorusFourier::new(sites, k_max)?;
    for (k, c) in basis.iter().zip(sol.iter()) {
        if *c != C64::default() {
            u.set(k.clone(), *c);
        }
    }
    Ok((u, OracleReport { basis_size: size, condition_number: smax / smin, residual: relative(res, pmax) }))
}

/// Strip bookkeeping and both directions of `φ = x + Σ_l b_l(x) ω`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transform {
    pub b: Vec<TorusFourier>,
    pub b_tilde: Vec<TorusFourier>,
    /// `x = φ + h(φ) ω`, `h = Σ b̃_l`.
    pub h: TorusFourier,
    /// `s_m^k = s_m − k s_m/100`, `k = 0..=3`.
    pub bridges: [f64; 4],
    pub picard_iterations: usize,
    pub picard_increment: f64,
    /// `max |h(φ) + b(φ + h(φ)ω)|` at sampled strip points.
    pub fixed_point_residual: f64,
    /// `max |T(T^{-1}φ) − φ|` at sampled strip points.
    pub composition_error: f64,
    pub b_norms: Vec<f64>,
    pub b_tilde_norms: Vec<f64>,
    pub strip_points: usize,
    pub omega: Vec<f64>,
}

impl Transform {
    fn identity(sites: Vec<i32>, cutoff: u32, omega: &[f64], s: f64) -> Result<Self, SolverError> {
        Ok(Self {
            b: Vec::new(),
            b_tilde: Vec::new(),
            h: TorusFourier::new(sites, cutoff)?,
            bridges: bridges(s),
            picard_iterations: 0,
            picard_increment: 0.0,
            fixed_point_residual: 0.0,
            composition_error: 0.0,
            b_norms: Vec::new(),
            b_tilde_norms: Vec::new(),
            strip_points: 0,
            omega: omega.to_vec(),
        })
    }

    pub fn total_b(&self) -> TorusFourier {
        self.b.iter().fold(self.h.zero_like(), |acc, f| acc.add(f).expect("same sites"))
    }
}

fn bridges(s: f64) -> [f64; 4] {
    [s, s - s / 100.0, s - 2.0 * s / 100.0, s - 3.0 * s / 100.0]
}

/// Options for the transform and variable-coefficient solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformOptions {
    /// Harmonic cutoff for intermediate series.
    pub cutoff: u32,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub series_tol: f64,
    pub sample_points: usize,
    pub seed: u64,
    /// Check the strip claim `|Im b_l| < γ_l^{1/10}|Im x|`.
    pub check_strip: bool,
}

impl Default for TransformOptions {
    fn default() -> Self {
        Self { cutoff: 24, picard_tol: 1e-15, picard_max: 50, series_tol: 1e-17, sample_points: 100, seed: 7, check_strip: true }
    }
}

fn strip_sample(n: usize, s: f64, rng: &mut ChaCha8Rng) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(-s..=s))).collect()
}

/// Builds `b_l = ∂_ω^{-1} a_l` and the inverse shifts by Picard iteration.
pub fn build_transform(
    omega: &[f64],
    a_stages: &[TorusFourier],
    profile: &DiophantineProfile,
    window: &AnalyticityWindow,
    opts: &TransformOptions,
) -> Result<Transform, SolverError> {
    let sites = match a_stages.first() {
        Some(a) => a.index_set().to_vec(),
        None => return Err(SolverError::InvalidProfile("no stages".into())),
    };
    let s = window.s;
    let mut tr = Transform::identity(sites.clone(), opts.cutoff, omega, s)?;
    if a_stages.iter().all(|a| a.is_zero()) {
        tr.b = a_stages.iter().map(|a| a.zero_like()).collect();
        tr.b_tilde = tr.b.clone();
        tr.b_norms = vec![0.0; a_stages.len()];
        tr.b_tilde_norms = vec![0.0; a_stages.len()];
        return Ok(tr);
    }
    for a in a_stages {
        let a = a.embed(&sites)?;
        let (b, _) = solve_dw(omega, &a, profile, s)?;
        tr.b_norms.push(b.sup_norm_bound(s));
        tr.b.push(b.with_cutoff(opts.cutoff).0);
    }
    let b_total = tr.total_b();
    let s1 = tr.bridges[1];

    // h_0 = −b, h_{v} = −b(φ + h_{v−1} ω)
    let mut h = b_total.scale(C64::new(-1.0, 0.0));
    let mut last_inc = f64::INFINITY;
    let mut grew = 0;
    for it in 1..=opts.picard_max {
        let (shifted, _) = b_total.compose_shift(&h, omega, opts.cutoff, s1, opts.series_tol)?;
        let next = shifted.scale(C64::new(-1.0, 0.0));
        let inc = next.sub(&h)?.sup_norm_bound(s1);
        h = next;
        tr.picard_iterations = it;
        tr.picard_increment = inc;
        if inc > last_inc {
            grew += 1;
            if grew >= 2 {
                return Err(SolverError::PicardDivergence { ratio: inc / last_inc });
            }
        } else {
            grew = 0;
        }
        if inc < opts.picard_tol {
            break;
        }
        last_inc = inc;
    }
    let s3 = tr.bridges[3];
    for b in &tr.b {
        let (bt, _) = b.compose_shift(&h, omega, opts.cutoff, s3, opts.series_tol)?;
        let bt = bt.scale(C64::new(-1.0, 0.0));
        tr.b_tilde_norms.push(bt.sup_norm_bound(s3));
        tr.b_tilde.push(bt);
    }
    tr.h = h;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = sites.len();
    let zero = C64::default();
    for _ in 0..opts.sample_points {
        let phi = strip_sample(n, s3 * 0.5, &mut rng);
        let hv = tr.h.eval(&phi)?;
        let x: Vec<C64> = phi.iter().zip(omega).map(|(p, w)| p + hv * *w).collect();
        let bx = b_total.eval(&x)?;
        tr.fixed_point_residual = tr.fixed_point_residual.max((hv + bx).norm());
        let back = x.iter().zip(omega).zip(&phi).map(|((xi, w), p)| (xi + bx * *w - p).norm()).fold(0.0, f64::max);
        tr.composition_error = tr.composition_error.max(back);
        if opts.check_strip {
            for (b, g) in tr.b.iter().zip(&profile.gamma) {
                let im_x = phi.iter().map(|p| p.im.abs()).fold(0.0, f64::max);
                let im_b = b.eval(&phi)?.im.abs();
                if im_x > 0.0 && im_b >= g.powf(0.1) * im_x {
                    return Err(SolverError::StripViolation { im_x, im_b });
                }
            }
        }
        let _ = zero;
    }
    tr.strip_points = opts.sample_points;
    Ok(tr)
}

/// `(i∂_ω + λ(1 + a(x))) u = p` with `a = Σ a_l`, solved on the Galerkin space of `p`.
pub fn solve_large_variable(
    omega: &[f64],
    lambda: C64,
    a_stages: &[TorusFourier],
    p: &TorusFourier,
    profile: &DiophantineProfile,
    window: &AnalyticityWindow,
    opts: &TransformOptions,
) -> Result<(TorusFourier, SolveReport, Option<Transform>), SolverError> {
    let sites = p.index_set().to_vec();
    let a_stages: Vec<TorusFourier> = a_stages.iter().map(|a| a.embed(&sites)).collect::<Result<_, _>>()?;
    if a_stages.iter().all(|a| a.is_zero()) {
        let (u, rep) = solve_shifted(omega, lambda, p, profile, window.s)?;
        return Ok((u, rep, None));
    }
    let k_cut = p.cutoff();
    let tr = build_transform(omega, &a_stages, profile, window, opts)?;
    let a = a_stages.iter().fold(p.zero_like(), |acc, f| acc.add(f).expect("same sites"));
    let (a, _) = a.with_cutoff(opts.cutoff.max(k_cut));
    let (recip, _) = TorusFourier::reciprocal_one_plus(&a, opts.cutoff, opts.series_tol, 0.0)?;
    let coef = a.scale(lambda);
    let op = GalerkinOp { omega, sign: -1.0, lambda, coef: Some(&coef), cutoff: k_cut };
    let b_total = tr.total_b();

    let mut rep = SolveReport::new();
    let mut precond = |q: &TorusFourier, rep: &mut SolveReport| -> Result<TorusFourier, SolverError> {
        let (g, _) = q.mul(&recip, opts.cutoff)?;
        let (pstar, _) = g.compose_shift(&tr.h, omega, opts.cutoff, 0.0, opts.series_tol)?;
        // the Galerkin space is |k| ≤ K, so only those divisors enter
        let (v, r) = solve_shifted(omega, lambda, &pstar.with_cutoff(k_cut).0, profile, window.s)?;
        rep.divisor_min = rep.divisor_min.min(r.divisor_min);
        rep.divisor_margin = rep.divisor_margin.min(r.divisor_margin);
        rep.divisors_checked = rep.divisors_checked.max(r.divisors_checked);
        let (u, _) = v.compose_shift(&b_total, omega, opts.cutoff, 0.0, opts.series_tol)?;
        Ok(u.with_cutoff(k_cut).0)
    };
    let u = refine(&op, p, &mut precond, &mut rep)?;

    // Neumann certificate: ‖u‖ ≤ D‖p‖/(1 − D|λ|‖a‖), D = max 1/|λ − ⟨k,ω⟩| over the basis.
    let d = inverse_symbol_sup(omega, -1.0, lambda, sites.len(), k_cut);
    let q = d * lambda.norm() * a.sup_norm_bound(window.s);
    rep.measured_norm = u.sup_norm_bound(window.s);
    rep.norm_certificate = if q < 1.0 { d * p.sup_norm_bound(window.s) / (1.0 - q) } else { f64::INFINITY };
    Ok((u, rep, Some(tr)))
}

fn inverse_symbol_sup(omega: &[f64], sign: f64, lambda: C64, n: usize, k_cut: u32) -> f64 {
    harmonic_ball(n, k_cut)
        .iter()
        .map(|k| 1.0 / (lambda + sign * dot(k, omega)).norm())
        .fold(0.0, f64::max)
}

/// Iterative refinement `u ← u + M(p − Lu)` until the relative residual stalls at roundoff.
fn refine<F>(op: &GalerkinOp, p: &TorusFourier, precond: &mut F, rep: &mut SolveReport) -> Result<TorusFourier, SolverError>
where
    F: FnMut(&TorusFourier, &mut SolveReport) -> Result<TorusFourier, SolverError>,
{
    let pnorm = p.l2().max(f64::MIN_POSITIVE);
    let (p_k, _) = p.with_cutoff(op.cutoff);
    let mut u = precond(&p_k, rep)?;
    let mut res = p_k.sub(&op.apply(&u))?;
    let mut rel = res.l2() / pnorm;
    rep.transform_residual = Some(rel);
    for sweep in 1..=60 {
        if rel < 1e-15 {
            break;
        }
        let du = precond(&res, rep)?;
        u = u.add(&du)?;
        let new_res = p_k.sub(&op.apply(&u))?;
        let new_rel = new_res.l2() / pnorm;
        rep.sweeps = sweep;
        if new_rel > 0.5 * rel {
            if new_rel < 1e-13 {
                // roundoff floor
                rel = new_rel.min(rel);
                break;
            }
            return Err(SolverError::NonContraction { ratio: new_rel / rel });
        }
        res = new_res;
        rel = new_rel;
    }
    rep.residual = rel;
    Ok(u)
}

/// `−i∂_ω u + λu + μ(x)u = p` by a gauge transform followed by refinement sweeps.
#[allow(clippy::too_many_arguments)]
pub fn solve_liu_yuan(
    omega: &[f64],
    lambda: C64,
    mu_stages: &[TorusFourier],
    p: &TorusFourier,
    profile: &DiophantineProfile,
    window: &AnalyticityWindow,
    sigma_out: f64,
    gamma_tilde: f64,
    opts: &TransformOptions,
) -> Result<(TorusFourier, SolveReport), SolverError> {
    let sites = p.index_set().to_vec();
    let k_cut = p.cutoff();
    let mut mu = TorusFourier::new(sites.clone(), opts.cutoff.max(k_cut))?;
    for m in mu_stages {
        let m = m.embed(&sites)?;
        check_average(&m)?;
        mu = mu.add(&m)?;
    }
    let tau = profile.tau_max();
    let beta = profile.beta * gamma_tilde;
    let s_out = (window.s - sigma_out).max(0.0);
    // divisor bound βγ̃/(1 + |k|^τ) on the constant-coefficient operator −i∂_ω + λ
    let check = |k: &Harmonic, rep: &mut SolveReport| -> Result<C64, SolverError> {
        let d = lambda + dot(k, omega);
        let bound = beta / (1.0 + (l1(k) as f64).powf(tau));
        rep.record(d.norm(), d.norm() / bound);
        if !(d.norm() >= bound) || d.norm() == 0.0 {
            return Err(SolverError::SmallDivisor { k: k.clone(), value: d.norm(), bound, context: "λ + ⟨k,ω⟩".into() });
        }
        Ok(d)
    };
    let mut rep = SolveReport::new();
    if mu.is_zero() {
        let mut u = p.zero_like();
        for (k, c) in p.iter() {
            if *c != C64::default() {
                let d = check(k, &mut rep)?;
                u.set(k.clone(), c / d);
            }
        }
        rep.measured_norm = u.sup_norm_bound(s_out);
        let d = inverse_symbol_sup(omega, 1.0, lambda, sites.len(), k_cut);
        rep.norm_certificate = d * p.sup_norm_bound(s_out);
        return Ok((u, rep));
    }
    // g = −i ∂_ω^{-1} μ makes e^{−g}(−i∂_ω + λ + μ)e^{g} = −i∂_ω + λ
    let mut g = mu.zero_like();
    for (k, c) in mu.iter() {
        let d = dot(k, omega);
        if d == 0.0 {
            return Err(SolverError::SmallDivisor { k: k.clone(), value: 0.0, bound: 0.0, context: "⟨k,ω⟩ in gauge".into() });
        }
        g.set(k.clone(), C64::new(0.0, -1.0) * c / C64::new(0.0, d));
    }
    let (eg, _) = g.exp(opts.cutoff, 0.0, opts.series_tol)?;
    let (emg, _) = g.scale(C64::new(-1.0, 0.0)).exp(opts.cutoff, 0.0, opts.series_tol)?;
    let op = GalerkinOp { omega, sign: 1.0, lambda, coef: Some(&mu), cutoff: k_cut };
    let mut precond = |q: &TorusFourier, rep: &mut SolveReport| -> Result<TorusFourier, SolverError> {
        let (w, _) = q.mul(&emg, opts.cutoff)?;
        let mut v = w.zero_like();
        for (k, c) in w.iter() {
            if *c != C64::default() {
                let d = check(k, rep)?;
                v.set(k.clone(), c / d);
            }
        }
        let (u, _) = v.mul(&eg, k_cut)?;
        Ok(u)
    };
    let u = refine(&op, p, &mut precond, &mut rep)?;
    rep.measured_norm = u.sup_norm_bound(s_out);
    let d = inverse_symbol_sup(omega, 1.0, lambda, sites.len(), k_cut);
    let q = d * mu.sup_norm_bound(window.s);
    rep.norm_certificate = if q < 1.0 {
        d * p.sup_norm_bound(window.s) / (1.0 - q)
    } else {
        eg.sup_norm_bound(window.s) * emg.sup_norm_bound(window.s) * d * p.sup_norm_bound(window.s)
    };
    Ok((u, rep))
}

/// `(4^{n+2}/σ^n) · ‖M‖_2` for the nonnegative matrix of elementwise bounds.
pub fn matrix_norm_bound(elements: &BTreeMap<(i32, i32), f64>, n: usize, sigma: f64) -> f64 {
    if elements.values().all(|&v| v == 0.0) {
        return 0.0;
    }
    let mut idx: Vec<i32> = elements.keys().flat_map(|&(i, j)| [i, j]).collect();
    idx.sort_unstable();
    idx.dedup();
    let pos: BTreeMap<i32, usize> = idx.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    let mut m = DMatrix::<f64>::zeros(idx.len(), idx.len());
    for (&(i, j), &v) in elements {
        m[(pos[&i], pos[&j])] = v.abs();
    }
    let norm = m.singular_values().iter().copied().fold(0.0, f64::max);
    4f64.powi(n as i32 + 2) / sigma.powi(n as i32) * norm
}

/// Settings of [`solve_block_f`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSolveConfig {
    /// `Γ_K` cutoff and anti-diagonal split level.
    pub k_cut: u32,
    /// Constant `C` of the small-coefficient guard.
    pub guard_c: f64,
    /// Strip loss `σ`.
    pub sigma: f64,
    /// `τ` of the current step.
    pub tau: f64,
    /// `γ̃` of the anti-diagonal solve.
    pub gamma_tilde: f64,
    pub transform: TransformOptions,
}

/// Per-block diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockResidual {
    pub block: String,
    pub modes: (i32, i32),
    pub residual: f64,
    pub divisor_min: f64,
    pub solver: String,
}

/// Output of the block solver.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSolution {
    pub f: RBlocks,
    /// `[R^y]`.
    pub omega_shift: Vec<f64>,
    /// `R^{zz̄}_{jj}(x)`.
    pub diagonal: BTreeMap<i32, TorusFourier>,
    /// `Σ_{|j|>K} R_{(−j)j} z_{−j} z̄_j`.
    pub r_prime: BTreeMap<(i32, i32), TorusFourier>,
    pub residuals: Vec<BlockResidual>,
    pub guard: GuardReport,
}

/// The small-coefficient guard as evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluates `e^{CKsΣγ} ≤ σ^{−C(n+τ)}` in logarithmic form.
pub fn anti_diagonal_guard(c: f64, k: u32, s: f64, gamma_sum: f64, sigma: f64, n: usize, tau: f64) -> GuardReport {
    let log_lhs = c * k as f64 * s * gamma_sum;
    let log_rhs = -c * (n as f64 + tau) * sigma.ln();
    GuardReport { lhs: log_lhs.exp(), rhs: log_rhs.exp(), holds: log_lhs <= log_rhs }
}

/// Block residual of `∂_ω f − i⟨β−α, Ω(x)⟩ f = R` on the Galerkin space of `R`.
pub fn block_residual(
    omega: &[f64],
    shift_bar: f64,
    shift_tilde: &TorusFourier,
    f: &TorusFourier,
    r: &TorusFourier,
) -> Result<f64, SolverError> {
    let k_cut = r.cutoff();
    let df = f.d_omega(omega)?;
    let (prod, _) = shift_tilde.embed(f.index_set())?.mul(f, k_cut)?;
    let lhs = df.sub(&f.scale(C64::new(0.0, shift_bar)))?.sub(&prod.scale(C64::new(0.0, 1.0)))?;
    let (lhs, _) = lhs.with_cutoff(k_cut);
    Ok(relative(lhs.sub(r)?.l2(), r.l2()))
}

/// Solves every homological block of a step. `R` is truncated at `Γ_K` by the caller.
pub fn solve_block_f(
    normal: &NormalForm,
    r: &RBlocks,
    profile: &DiophantineProfile,
    window: &AnalyticityWindow,
    cfg: &BlockSolveConfig,
) -> Result<BlockSolution, SolverError> {
    let sites = r.tangent.clone();
    let omega = normal.omega_vec();
    let n = sites.len();
    let s = window.s;
    let guard = anti_diagonal_guard(cfg.guard_c, cfg.k_cut, s, profile.gamma_sum(), cfg.sigma, n, cfg.tau);
    let mut out = BlockSolution {
        f: RBlocks::zero(sites.clone(), r.cutoff),
        omega_shift: Vec::with_capacity(n),
        diagonal: BTreeMap::new(),
        r_prime: BTreeMap::new(),
        residuals: Vec::new(),
        guard,
    };
    let zero_tilde = TorusFourier::new(sites.clone(), r.cutoff)?;

    // F^x, F^y
    let (_, rx) = r.x.average_and_tilde();
    let (fx, rep) = solve_dw(&omega, &rx, profile, s)?;
    out.residuals.push(BlockResidual {
        block: "x".into(),
        modes: (0, 0),
        residual: rep.residual,
        divisor_min: rep.divisor_min,
        solver: "dw".into(),
    });
    out.f.x = fx;
    for (p, ry) in r.y.iter().enumerate() {
        let (avg, tilde) = ry.average_and_tilde();
        out.omega_shift.push(avg.re);
        let (fy, rep) = solve_dw(&omega, &tilde, profile, s)?;
        out.residuals.push(BlockResidual {
            block: "y".into(),
            modes: (sites[p], 0),
            residual: rep.residual,
            divisor_min: rep.divisor_min,
            solver: "dw".into(),
        });
        out.f.y[p] = fy;
    }

    // generic variable-coefficient block: ∂_ω f − i(λ' + ⟨β−α,Ω̃⟩) f = R
    let solve_generic = |plus: &[i32], minus: &[i32], rhs: &TorusFourier, name: &str, modes: (i32, i32)| -> Result<(TorusFourier, BlockResidual), SolverError> {
        // β − α: `plus` lists z̄ modes, `minus` lists z modes
        let lam: f64 = plus.iter().map(|&m| normal.omega_bar(m)).sum::<f64>()
            - minus.iter().map(|&m| normal.omega_bar(m)).sum::<f64>();
        let mut tilde_stages: Vec<TorusFourier> = Vec::new();
        let depth = plus.iter().chain(minus).map(|&m| normal.stages.get(&m).map_or(0, |v| v.len())).max().unwrap_or(0);
        for st in 0..depth {
            let mut acc = zero_tilde.clone();
            for (&m, sign) in plus.iter().map(|m| (m, 1.0)).chain(minus.iter().map(|m| (m, -1.0))) {
                if let Some(f) = normal.stages.get(&m).and_then(|v| v.get(st)) {
                    let (_, t) = f.average_and_tilde();
                    acc = acc.axpy(C64::new(sign, 0.0), &t.embed(&sites)?)?;
                }
            }
            tilde_stages.push(acc);
        }
        let shift_tilde = tilde_stages.iter().fold(zero_tilde.clone(), |a, f| a.add(f).expect("same sites"));
        let i = C64::new(0.0, 1.0);
        // i∂_ω f + λ'(1 + a) f = iR, a = ⟨β−α,Ω̃⟩/λ'
        let a_stages: Vec<TorusFourier> = tilde_stages.iter().map(|t| t.scale(C64::new(1.0 / lam, 0.0))).collect();
        let (f, rep, _) = solve_large_variable(&omega, C64::new(lam, 0.0), &a_stages, &rhs.scale(i), profile, window, &cfg.transform)?;
        let residual = block_residual(&omega, lam, &shift_tilde, &f, rhs)?;
        Ok((f, BlockResidual { block: name.into(), modes, residual, divisor_min: rep.divisor_min, solver: "large-variable".into() }))
    };

    for (&m, rz) in &r.z {
        let (f, res) = solve_generic(&[], &[m], rz, "z", (m, 0))?;
        out.f.z.insert(m, f);
        out.residuals.push(res);
    }
    for (&m, rzb) in &r.zb {
        let (f, res) = solve_generic(&[m], &[], rzb, "zb", (m, 0))?;
        out.f.zb.insert(m, f);
        out.residuals.push(res);
    }
    for (&(i, j), rr) in &r.zz {
        let (f, res) = solve_generic(&[], &[i, j], rr, "zz", (i, j))?;
        out.f.zz.insert((i, j), f);
        out.residuals.push(res);
    }
    for (&(i, j), rr) in &r.zbzb {
        let (f, res) = solve_generic(&[i, j], &[], rr, "zbzb", (i, j))?;
        out.f.zbzb.insert((i, j), f);
        out.residuals.push(res);
    }
    for (&(i, j), rr) in &r.zzb {
        // monomial z_i z̄_j: β − α = e_j − e_i
        if i == j {
            out.diagonal.insert(i, rr.clone());
            continue;
        }
        if i == -j {
            if j.unsigned_abs() > cfg.k_cut {
                out.r_prime.insert((i, j), rr.clone());
                continue;
            }
            if !guard.holds {
                return Err(SolverError::GuardViolation { lhs: guard.lhs, rhs: guard.rhs });
            }
            let (f, res) = solve_anti_diagonal(normal, &omega, i, j, rr, profile, window, cfg)?;
            out.f.zzb.insert((i, j), f);
            out.residuals.push(res);
            continue;
        }
        let (f, res) = solve_generic(&[j], &[i], rr, "zzb", (i, j))?;
        out.f.zzb.insert((i, j), f);
        out.residuals.push(res);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn solve_anti_diagonal(
    normal: &NormalForm,
    omega: &[f64],
    i: i32,
    j: i32,
    rr: &TorusFourier,
    profile: &DiophantineProfile,
    window: &AnalyticityWindow,
    cfg: &BlockSolveConfig,
) -> Result<(TorusFourier, BlockResidual), SolverError> {
    let sites = rr.index_set().to_vec();
    let lam = normal.omega_bar(j) - normal.omega_bar(i);
    let tj = normal.tilde_stages(j)?;
    let ti = normal.tilde_stages(i)?;
    let depth = tj.len().max(ti.len());
    let zero = TorusFourier::new(sites.clone(), rr.cutoff())?;
    let mut mu_stages = Vec::with_capacity(depth);
    let mut shift_tilde = zero.clone();
    for st in 0..depth {
        let a = tj.get(st).cloned().unwrap_or_else(|| zero.clone()).embed(&sites)?;
        let b = ti.get(st).cloned().unwrap_or_else(|| zero.clone()).embed(&sites)?;
        let d = a.sub(&b)?;
        shift_tilde = shift_tilde.add(&d)?;
        mu_stages.push(d.scale(C64::new(-1.0, 0.0)));
    }
    // −i∂_ω f − (λ' + μ') f = −iR
    let p = rr.scale(C64::new(0.0, -1.0));
    let (f, rep) = solve_liu_yuan(omega, C64::new(-lam, 0.0), &mu_stages, &p, profile, window, cfg.sigma, cfg.gamma_tilde, &cfg.transform)?;
    let residual = block_residual(omega, lam, &shift_tilde, &f, rr)?;
    Ok((f, BlockResidual { block: "zzb-anti".into(), modes: (i, j), residual, divisor_min: rep.divisor_min, solver: "liu-yuan".into() }))
}

/// Agreement of one solver with the dense oracle over a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolverSummary {
    pub solver: String,
    pub cases: usize,
    pub max_deviation: f64,
    pub max_residual: f64,
}

/// Result of [`oracle_campaign`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub n: usize,
    pub k_max: u32,
    pub seed: u64,
    pub solvers: Vec<OracleSolverSummary>,
    pub max_deviation: f64,
    pub max_residual: f64,
}

fn random_coefficients(rng: &mut ChaCha8Rng, sites: &[i32], cutoff: u32, terms: usize, amp: f64, zero_mean: bool) -> Result<TorusFourier, SolverError> {
    let mut f = TorusFourier::new(sites.to_vec(), cutoff)?;
    let ball: Vec<Harmonic> = harmonic_ball(sites.len(), cutoff).into_iter().filter(|k| !zero_mean || l1(k) > 0).collect();
    for _ in 0..terms {
        let k = ball[rng.random_range(0..ball.len())].clone();
        f.insert(k, C64::new(rng.random_range(-amp..amp), rng.random_range(-amp..amp)));
    }
    Ok(f)
}

/// Runs the three constant/variable coefficient solvers on `cases` random admissible instances
/// each and compares with [`dense_oracle_solve`] on the ball `|k|_1 ≤ k_max`. `n ≤ 3`.
pub fn oracle_campaign(n: usize, k_max: u32, cases: usize, seed: u64) -> Result<OracleSummary, SolverError> {
    let all = [1.0, 2f64.sqrt(), 3f64.sqrt()];
    if n == 0 || n > all.len() {
        return Err(SolverError::InvalidProfile(format!("campaign dimension {n} not in 1..=3")));
    }
    let omega = &all[..n];
    let neg: Vec<f64> = omega.iter().map(|x| -x).collect();
    let sites: Vec<i32> = (1..=n as i32).collect();
    let profile = DiophantineProfile::single(1e-6, 1e-6, n as f64 + 10.0, 0.05, n)?;
    let window = AnalyticityWindow::new(0.3, 0.1, 0.0, 2.0)?;
    let opts = TransformOptions { cutoff: 12.max(k_max), ..TransformOptions::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ball = harmonic_ball(n, k_max);
    let mut solvers = Vec::new();
    for name in ["shifted", "large-variable", "liu-yuan"] {
        let mut sum = OracleSolverSummary { solver: name.into(), cases: 0, max_deviation: 0.0, max_residual: 0.0 };
        while sum.cases < cases {
            let lam: f64 = rng.random_range(-4.0..4.0);
            // divisors λ ± ⟨k,ω⟩ bounded away from zero
            let gap = ball.iter().map(|k| (lam - dot(k, omega)).abs().min((lam + dot(k, omega)).abs())).fold(f64::INFINITY, f64::min);
            if gap < 0.05 {
                continue;
            }
            let lam = C64::new(lam, 0.0);
            let p = random_coefficients(&mut rng, &sites, k_max, 10, 1.0, false)?;
            let (u, residual, oracle) = match name {
                "shifted" => {
                    let (u, rep) = solve_shifted(omega, lam, &p, &profile, window.s)?;
                    (u, rep.residual, dense_oracle_solve(&neg, lam, &p.zero_like(), &p, k_max)?.0)
                }
                "large-variable" => {
                    let a = random_coefficients(&mut rng, &sites, 2, 3, 0.01, true)?;
                    let mut real = a.zero_like();
                    for (k, c) in a.iter() {
                        real.insert(k.clone(), c * 0.5);
                        real.insert(k.iter().map(|v| -v).collect(), c.conj() * 0.5);
                    }
                    let (u, rep, _) = solve_large_variable(omega, lam, &[real.clone()], &p, &profile, &window, &opts)?;
                    (u, rep.residual, dense_oracle_solve(&neg, lam, &real.scale(lam), &p, k_max)?.0)
                }
                _ => {
                    let mu = random_coefficients(&mut rng, &sites, 2, 3, 0.02, true)?;
                    let (u, rep) = solve_liu_yuan(omega, lam, &[mu.clone()], &p, &profile, &window, 0.01, 1.0, &opts)?;
                    (u, rep.residual, dense_oracle_solve(omega, lam, &mu, &p, k_max)?.0)
                }
            };
            let dev = relative(u.sub(&oracle)?.l2(), oracle.l2());
            sum.max_deviation = sum.max_deviation.max(dev);
            sum.max_residual = sum.max_residual.max(residual);
            sum.cases += 1;
        }
        solvers.push(sum);
    }
    let max_deviation = solvers.iter().map(|s| s.max_deviation).fold(0.0, f64::max);
    let max_residual = solvers.iter().map(|s| s.max_residual).fold(0.0, f64::max);
    Ok(OracleSummary { n, k_max, seed, solvers, max_deviation, max_residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn profile(n: usize) -> DiophantineProfile {
        DiophantineProfile::single(1e-3, 1e-3, n as f64 + 10.0, 0.05, n).unwrap()
    }

    fn window(s: f64) -> AnalyticityWindow {
        AnalyticityWindow::new(s, 0.1, 0.0, 2.0).unwrap()
    }

    fn mode1(k: i32, v: C64, cutoff: u32) -> TorusFourier {
        TorusFourier::mode(vec![1], cutoff, vec![k], v).unwrap()
    }

    fn random_tf(rng: &mut ChaCha8Rng, sites: &[i32], cutoff: u32, terms: usize, amp: f64, real: bool, zero_avg: bool) -> TorusFourier {
        let mut f = TorusFourier::new(sites.to_vec(), cutoff).unwrap();
        let ball = harmonic_ball(sites.len(), cutoff);
        for _ in 0..terms {
            let k = ball[rng.random_range(0..ball.len())].clone();
            if zero_avg && l1(&k) == 0 {
                continue;
            }
            let v = c(rng.random_range(-amp..amp), rng.random_range(-amp..amp));
            f.insert(k.clone(), v);
            if real {
                let neg: Harmonic = k.iter().map(|x| -x).collect();
                if neg == k {
                    let cur = f.coeff(&k);
                    f.set(k, c(cur.re, 0.0));
                } else {
                    f.insert(neg, v.conj());
                }
            }
        }
        f
    }

    #[test]
    fn dw_examples() {
        let (u, _) = solve_dw(&[1.0], &mode1(1, c(1.0, 0.0), 4), &profile(1), 0.5).unwrap();
        assert_eq!(u.coeff(&[1]), c(0.0, -1.0));
        let zero = TorusFourier::new(vec![1], 4).unwrap();
        assert!(solve_dw(&[1.0], &zero, &profile(1), 0.5).unwrap().0.is_zero());
        let cst = TorusFourier::constant(vec![1], 4, c(1.0, 0.0)).unwrap();
        assert!(matches!(solve_dw(&[1.0], &cst, &profile(1), 0.5), Err(SolverError::NonzeroAverage { .. })));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let omega = [1.0, 2f64.sqrt() - 1.0];
        let p = random_tf(&mut rng, &[1, 2], 6, 12, 1.0, false, true);
        let (u, rep) = solve_dw(&omega, &p, &profile(2), 0.3).unwrap();
        let resid = u.d_omega(&omega).unwrap().sub(&p).unwrap();
        assert!(resid.max_abs() < 1e-14);
        assert!(rep.norm_certificate >= rep.measured_norm);
    }

    #[test]
    fn dw_refuses_resonance() {
        let p = TorusFourier::mode(vec![1, 2], 4, vec![1, -1], c(1.0, 0.0)).unwrap();
        let err = solve_dw(&[1.0, 1.0], &p, &profile(2), 0.3).unwrap_err();
        assert!(matches!(err, SolverError::SmallDivisor { k, .. } if k == vec![1, -1]));
    }

    #[test]
    fn shifted_examples() {
        let one = TorusFourier::constant(vec![1], 4, c(1.0, 0.0)).unwrap();
        assert_eq!(solve_shifted(&[0.7], c(2.0, 0.0), &one, &profile(1), 0.5).unwrap().0.coeff(&[0]), c(0.5, 0.0));
        let (v, _) = solve_shifted(&[1.0], c(3.0, 0.0), &mode1(1, c(1.0, 0.0), 4), &profile(1), 0.5).unwrap();
        assert_eq!(v.coeff(&[1]), c(0.5, 0.0));
    }

    #[test]
    fn shifted_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let omega = [1.0, 2f64.sqrt() - 1.0];
        let p = random_tf(&mut rng, &[1, 2], 6, 15, 1.0, false, false);
        let lam = c(0.37, 0.0);
        let (v, _) = solve_shifted(&omega, lam, &p, &profile(2), 0.3).unwrap();
        let neg: Vec<f64> = omega.iter().map(|w| -w).collect();
        let (o, _) = dense_oracle_solve(&neg, lam, &p.zero_like(), &p, 6).unwrap();
        assert!(v.sub(&o).unwrap().l2() < 1e-12 * v.l2());
    }

    #[test]
    fn oracle_residual_and_conditioning() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_tf(&mut rng, &[1], 8, 10, 1.0, false, false);
        let mu = random_tf(&mut rng, &[1], 3, 4, 0.05, false, true);
        let (_, rep) = dense_oracle_solve(&[2f64.sqrt()], c(0.3, 0.0), &mu, &p, 8).unwrap();
        assert!(rep.residual < 1e-12);
        assert_eq!(rep.basis_size, 17);
        let mut conds = Vec::new();
        for delta in [1e-1, 1e-3, 1e-5] {
            // divisor at k = 1 is λ + ω = δ
            let (_, r) = dense_oracle_solve(&[1.0], c(-1.0 + delta, 0.0), &p.zero_like(), &p, 4).unwrap();
            conds.push(r.condition_number);
        }
        assert!(conds[0] < conds[1] && conds[1] < conds[2]);
    }

    #[test]
    fn transform_identity_and_sine() {
        let w = window(0.5);
        let zero = TorusFourier::new(vec![1], 8).unwrap();
        let tr = build_transform(&[1.0], &[zero], &profile(1), &w, &TransformOptions::default()).unwrap();
        assert!(tr.h.is_zero());

        // a = ε sin x ⇒ b = −ε cos x
        let eps = 1e-2;
        let mut a = TorusFourier::new(vec![1], 8).unwrap();
        a.set(vec![1], c(0.0, -eps / 2.0));
        a.set(vec![-1], c(0.0, eps / 2.0));
        let prof = DiophantineProfile::single(1e-3, 1e-3, 11.0, 0.05, 1).unwrap();
        let tr = build_transform(&[1.0], &[a], &prof, &w, &TransformOptions::default()).unwrap();
        assert!((tr.b[0].coeff(&[1]) - c(-eps / 2.0, 0.0)).norm() < 1e-16);
        assert!((tr.b[0].coeff(&[-1]) - c(-eps / 2.0, 0.0)).norm() < 1e-16);
        assert!(tr.fixed_point_residual < 1e-14, "{}", tr.fixed_point_residual);
        assert!(tr.composition_error < 1e-12);
    }

    #[test]
    fn large_variable_reduces_and_solves() {
        let w = window(0.3);
        let p = mode1(1, c(1.0, 0.0), 8);
        let zero = TorusFourier::new(vec![1], 8).unwrap();
        let (u0, _, _) = solve_large_variable(&[1.0], c(10.0, 0.0), &[zero], &p, &profile(1), &w, &TransformOptions::default()).unwrap();
        let (u1, _) = solve_shifted(&[1.0], c(10.0, 0.0), &p, &profile(1), 0.3).unwrap();
        assert_eq!(u0, u1);

        let mut a = TorusFourier::new(vec![1], 8).unwrap();
        a.set(vec![1], c(0.0, -0.005));
        a.set(vec![-1], c(0.0, 0.005));
        let (u, rep, _) = solve_large_variable(&[1.0], c(10.0, 0.0), &[a.clone()], &p, &profile(1), &w, &TransformOptions::default()).unwrap();
        assert!(rep.residual < 1e-9);
        let (o, _) = dense_oracle_solve(&[-1.0], c(10.0, 0.0), &a.scale(c(10.0, 0.0)), &p, 8).unwrap();
        assert!(u.sub(&o).unwrap().l2() < 1e-10 * o.l2());
        assert!(rep.norm_certificate >= rep.measured_norm);
    }

    #[test]
    fn liu_yuan_examples() {
        let w = window(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_tf(&mut rng, &[1], 8, 6, 1.0, false, false);
        let zero = TorusFourier::new(vec![1], 8).unwrap();
        let omega = [2f64.sqrt()];
        let (u, _) = solve_liu_yuan(&omega, c(0.3, 0.0), &[zero], &p, &profile(1), &w, 0.01, 1.0, &TransformOptions::default()).unwrap();
        let (v, _) = solve_shifted(&[-omega[0]], c(0.3, 0.0), &p, &profile(1), 0.3).unwrap();
        assert!(u.sub(&v).unwrap().l2() < 1e-14 * v.l2());

        let cst = TorusFourier::constant(vec![1], 8, c(0.1, 0.0)).unwrap();
        assert!(matches!(
            solve_liu_yuan(&omega, c(0.3, 0.0), &[cst], &p, &profile(1), &w, 0.01, 1.0, &TransformOptions::default()),
            Err(SolverError::NonzeroAverage { .. })
        ));

        // large coefficient: ‖μ‖ = 5 × the divisor scale
        let mut mu = TorusFourier::new(vec![1], 8).unwrap();
        mu.set(vec![1], c(0.25, 0.0));
        mu.set(vec![-1], c(0.25, 0.0));
        let (u, rep) = solve_liu_yuan(&omega, c(0.1, 0.0), &[mu.clone()], &p, &profile(1), &w, 0.01, 5.0, &TransformOptions::default()).unwrap();
        let (o, _) = dense_oracle_solve(&omega, c(0.1, 0.0), &mu, &p, 8).unwrap();
        assert!(rep.residual < 1e-9);
        assert!(u.sub(&o).unwrap().l2() < 1e-8 * o.l2());
    }

    #[test]
    fn matrix_norm_examples() {
        let mut d = BTreeMap::new();
        d.insert((1, 1), 0.5);
        d.insert((2, 2), 0.25);
        let n = 1;
        let sigma = 0.1;
        let pre = 4f64.powi(3) / sigma;
        assert!((matrix_norm_bound(&d, n, sigma) - 0.5 * pre).abs() < 1e-12);
        assert_eq!(matrix_norm_bound(&BTreeMap::new(), n, sigma), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut banded = BTreeMap::new();
        for i in 1..=10i32 {
            for j in (i - 2).max(1)..=(i + 2).min(10) {
                banded.insert((i, j), rng.random_range(-1.0..1.0) / (1.0 + (i - j).abs() as f64));
            }
        }
        // power iteration on MᵀM
        let idx: Vec<i32> = (1..=10).collect();
        let mut v = vec![1.0; 10];
        let mut est = 0.0;
        for _ in 0..500 {
            let mv: Vec<f64> = idx.iter().map(|&i| idx.iter().map(|&j| banded.get(&(i, j)).copied().unwrap_or(0.0) * v[(j - 1) as usize]).sum()).collect();
            let mtmv: Vec<f64> = idx.iter().map(|&j| idx.iter().map(|&i| banded.get(&(i, j)).copied().unwrap_or(0.0) * mv[(i - 1) as usize]).sum()).collect();
            let nrm = mtmv.iter().map(|x| x * x).sum::<f64>().sqrt();
            est = nrm.sqrt();
            v = mtmv.iter().map(|x| x / nrm).collect();
        }
        assert!(matrix_norm_bound(&banded, 1, 0.1) >= est);
    }

    #[test]
    fn guard_evaluation() {
        assert!(anti_diagonal_guard(1.0, 4, 1.0, 0.05, 0.05, 2, 10.0).holds);
        assert!(!anti_diagonal_guard(1.0, 4000, 1.0, 0.1, 0.9, 2, 10.0).holds);
    }
}
