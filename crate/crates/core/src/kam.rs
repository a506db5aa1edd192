//! One KAM iteration: parameter schedules, diagonalization of the normal
//! frequencies about to become tangential, oscillator excitation, the
//! homological solve and the Lie-series composition.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fourier::{l1, AnalyticityWindow, FourierError, TangentSet, TorusFourier, C64};
use crate::hamiltonian::{Channel, HamiltonianError, HamiltonianPoly, NormalForm, PhasePoint};
use crate::homological::{
    solve_block_f, solve_dw, BlockResidual, BlockSolveConfig, DiophantineProfile, GuardReport, SolverError,
    TransformOptions,
};

#[derive(Debug, Error)]
pub enum KamError {
    #[error("radius violation: r² = {r2} must be below I = {i_min}")]
    RadiusViolation { r2: f64, i_min: f64 },
    #[error("mode {0} is not a normal mode")]
    NotNormal(i32),
    #[error("Lie series stagnates at order {order} (increment ratio {ratio})")]
    SeriesStagnation { order: usize, ratio: f64 },
    #[error("{what}: {value:e} exceeds budget {budget:e}")]
    BudgetExceeded { what: String, value: f64, budget: f64 },
    #[error("no normal mode left to excite at step {0}")]
    ModesExhausted(usize),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Fourier(#[from] FourierError),
}

/// Seeds of the parameter schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSeeds {
    pub s0: f64,
    pub eps0: f64,
    pub rho0: f64,
    pub m0: f64,
    /// Exponent in `α_i = 1/(i^i)^{exp}`, `β_v = 1/(v^v)^{exp}`, `c_v = (τ_v^{τ_v})^{exp}`.
    pub exp: f64,
    pub m1_0: f64,
    pub m2_0: f64,
    pub r0: f64,
    /// `C` in `r_{v+1} = ε_v^C r_v`.
    pub r_shrink_exp: f64,
    /// The unnamed constants in `E_v = C v^{5/2}` and `L_v = C`.
    pub e_const: f64,
    pub l_const: f64,
}

impl Default for ScheduleSeeds {
    fn default() -> Self {
        Self {
            s0: 1.0,
            eps0: 1e-3,
            rho0: 0.5,
            m0: 0.5,
            exp: 1.0,
            m1_0: 1.0,
            m2_0: 1.0,
            r0: 0.05,
            r_shrink_exp: 1.0 / 3.0,
            e_const: 2.0,
            l_const: 2.0,
        }
    }
}

/// All iteration parameters of step `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub v: usize,
    pub j: Vec<i32>,
    /// `α_v^i` for `i = 0..=v`.
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub tau: f64,
    pub m: f64,
    pub e: f64,
    pub m1: f64,
    pub m2: f64,
    pub m_total: f64,
    pub l: f64,
    pub s: f64,
    pub sigma: f64,
    /// `log₁₀ B_v`; `B_v` itself overflows a double already for small `v`.
    pub log10_b: f64,
    pub eps: f64,
    /// `ε_i` for `i = 0..=v`.
    pub eps_history: Vec<f64>,
    pub gamma: f64,
    pub iota: f64,
    pub lambda_ae: f64,
    pub rho: f64,
    pub k: u32,
    pub r: f64,
    pub lambda: f64,
}

fn self_power(i: usize, exp: f64) -> f64 {
    // 0^0 = 1
    if i == 0 {
        1.0
    } else {
        (i as f64).powf(i as f64 * exp)
    }
}

/// The schedule of iteration parameters at step `v`.
pub fn schedules(v: usize, seeds: &ScheduleSeeds) -> ScheduleRow {
    let vf = v as f64;
    let shrink = 9.0 + 0.5f64.powi(v as i32);
    let alpha = (0..=v).map(|i| (1.0 / self_power(i, seeds.exp)) / 10.0 * shrink).collect();
    let mut eps_history = vec![seeds.eps0];
    let mut r = seeds.r0;
    for _ in 0..v {
        let last = *eps_history.last().expect("nonempty");
        r *= last.powf(seeds.r_shrink_exp);
        eps_history.push(last.powf(1.25));
    }
    let eps = eps_history[v];
    let tau = 10.0 * vf + 10.0;
    let s = seeds.s0 / 2f64.powi(v as i32);
    let sigma = s / 20.0;
    let grow = (10.0 - 0.5f64.powi(v as i32)) / 9.0;
    let m1 = seeds.m1_0 * grow;
    let m2 = seeds.m2_0 * grow;
    let beta = 1.0 / self_power(v, seeds.exp);
    let log10_c = seeds.exp * tau * tau.log10();
    let rho = seeds.rho0 * (1.0 - (1..=v).map(|i| 1.0 / (10.0 * (i * i) as f64)).sum::<f64>());
    ScheduleRow {
        v,
        j: TangentSet::at_stage(v).members().to_vec(),
        alpha,
        beta,
        tau,
        m: seeds.m0 / 10.0 * shrink,
        e: seeds.e_const * vf.max(1.0).powf(2.5),
        m1,
        m2,
        m_total: m1 + m2,
        l: seeds.l_const,
        s,
        sigma,
        log10_b: log10_c - 9.0 * (4.0 * vf + tau + 1.0) * sigma.log10(),
        eps,
        gamma: eps.sqrt(),
        eps_history,
        iota: 2f64.powf(vf * vf),
        lambda_ae: 10.0 * vf + 10.0,
        rho,
        k: 1u32 << v.min(31),
        r,
        lambda: beta / (m1 + m2),
    }
}

/// Diophantine profile of a step over a tangent set of dimension `n`.
pub fn step_profile(row: &ScheduleRow, n: usize, beta_scale: f64) -> Result<DiophantineProfile, SolverError> {
    let stages = row.alpha.len();
    let tau = vec![row.tau.max(2.0 * n as f64 + 10.0); stages];
    let gamma: Vec<f64> = row.eps_history.iter().map(|e| e.sqrt()).collect();
    DiophantineProfile::new(row.alpha.clone(), beta_scale * row.beta, tau, row.m, gamma, &vec![n; stages])
}

/// Diagnostics of one diagonalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalizationReport {
    pub mode: i32,
    pub identity: bool,
    /// Largest remaining nonconstant coefficient of `z_t z̄_t` in the new normal part.
    pub residual: f64,
    pub divisor_min: f64,
    /// `max |e^{±2iF(x)}|` over sampled strip points.
    pub exp_im_max: f64,
    /// `e^{sγn}`.
    pub exp_bound: f64,
    /// `sup |e^{2iF} − 1|` over the samples.
    pub phi_minus_id: f64,
    /// Majorant of the substitution loss.
    pub tail: f64,
}

/// The generator `F` with `∂_ω F = ½Ω̃_t`, plus the report skeleton.
pub fn diagonalizing_generator(
    normal: &NormalForm,
    t: i32,
    profile: &DiophantineProfile,
    window: &AnalyticityWindow,
    cutoff: u32,
) -> Result<(TorusFourier, f64), KamError> {
    let omega = normal.omega_vec();
    let tilde = normal.omega_tilde(t)?.with_cutoff(cutoff).0;
    if tilde.is_zero() {
        return Ok((tilde, f64::INFINITY));
    }
    let (f, rep) = solve_dw(&omega, &tilde.scale(C64::new(0.5, 0.0)), profile, window.s)?;
    Ok((f, rep.divisor_min))
}

/// Removes the angle dependence of `Ω_t` by the time-1 map of `F(x) z_t z̄_t`:
/// `z_t ↦ z_t e^{2iF}`, `z̄_t ↦ z̄_t e^{−2iF}`, `y ↦ y − ∂_x F z_t z̄_t`, applied to `P`
/// by exact substitution.
pub fn diagonalize_normal_frequency(
    normal: &NormalForm,
    p: &HamiltonianPoly,
    t: i32,
    profile: &DiophantineProfile,
    window: &AnalyticityWindow,
    series_tol: f64,
) -> Result<(NormalForm, HamiltonianPoly, DiagonalizationReport), KamError> {
    if !p.is_normal(t) {
        return Err(KamError::NotNormal(t));
    }
    let cap = p.harmonic_cap();
    let (f, divisor_min) = diagonalizing_generator(normal, t, profile, window, cap)?;
    let n = p.n();
    let exp_bound = (window.s * profile.gamma_sum() * n as f64).exp();
    if f.is_zero() {
        let rep = DiagonalizationReport {
            mode: t,
            identity: true,
            residual: 0.0,
            divisor_min,
            exp_im_max: 1.0,
            exp_bound,
            phi_minus_id: 0.0,
            tail: 0.0,
        };
        // stages may still carry zero tildes; collapse them
        let mut normal = normal.clone();
        collapse_stages(&mut normal, t)?;
        return Ok((normal, p.clone(), rep));
    }
    let omega = normal.omega_vec();
    let f = f.with_cutoff(cap).0;
    let df: Vec<TorusFourier> = (0..n).map(|pos| f.partial(pos)).collect();

    // Y_p = y_p − ∂_p F z_t z̄_t
    let pair = Channel::new(vec![0; n], &[(t, 1)], &[(t, 1)]);
    let mut ys = Vec::with_capacity(n);
    for pos in 0..n {
        let mut y = p.zero_like();
        let mut l = vec![0; n];
        l[pos] = 1;
        y.add_channel(Channel::new(l, &[], &[]), &TorusFourier::constant(p.tangent().to_vec(), 0, C64::new(1.0, 0.0))?)?;
        y.add_channel(pair.clone(), &df[pos].scale(C64::new(-1.0, 0.0)))?;
        y.set_caps(u32::MAX, cap);
        ys.push(y);
    }
    let mut exps: BTreeMap<i32, TorusFourier> = BTreeMap::new();
    let mut out = p.zero_like();
    let mut lost = p.zero_like();
    lost.set_caps(u32::MAX, u32::MAX);
    for (ch, coef) in p.channels() {
        let c = ch.z_power(t) as i32 - ch.zb_power(t) as i32;
        let mut base_coef = coef.clone();
        if c != 0 {
            if !exps.contains_key(&c) {
                let (e, _) = f.scale(C64::new(0.0, 2.0 * c as f64)).exp(cap, window.s, series_tol)?;
                exps.insert(c, e);
            }
            let (prod, _) = coef.mul(&exps[&c], u32::MAX)?;
            base_coef = prod;
        }
        let mut term = p.zero_like();
        term.set_caps(u32::MAX, u32::MAX);
        let mut base = ch.clone();
        base.l = vec![0; n];
        term.set_channel(base, base_coef)?;
        for (pos, &lp) in ch.l.iter().enumerate() {
            for _ in 0..lp {
                let (next, _) = term.mul(&ys[pos])?;
                term = next;
            }
        }
        let (kept, dropped) = {
            let mut capped = term.clone();
            capped.set_caps(p.degree_cap(), cap);
            capped.truncate()
        };
        out = out.add(&kept)?;
        lost = lost.add(&{
            let mut d = dropped;
            d.set_caps(u32::MAX, u32::MAX);
            d
        })?;
    }
    // N∘Φ: ω·y picks up −∂_ω F z_t z̄_t, which cancels ½Ω̃_t up to the solve residual
    let tilde = normal.omega_tilde(t)?.with_cutoff(cap).0;
    let leftover = tilde.scale(C64::new(0.5, 0.0)).sub(&f.d_omega(&omega)?)?;
    out.add_channel(pair, &leftover)?;
    out.prune(0.0);
    let mut normal = normal.clone();
    collapse_stages(&mut normal, t)?;

    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut exp_im_max: f64 = 0.0;
    let mut phi_minus_id: f64 = 0.0;
    for _ in 0..100 {
        let x: Vec<C64> = (0..n)
            .map(|_| C64::new(rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(-window.s..=window.s)))
            .collect();
        let fx = f.eval(&x)?;
        for sign in [1.0, -1.0] {
            let e = (C64::new(0.0, 2.0 * sign) * fx).exp();
            exp_im_max = exp_im_max.max(e.norm());
            phi_minus_id = phi_minus_id.max((e - 1.0).norm());
        }
    }
    let rep = DiagonalizationReport {
        mode: t,
        identity: false,
        residual: leftover.max_abs(),
        divisor_min,
        exp_im_max,
        exp_bound,
        phi_minus_id,
        tail: lost.vf_majorant(window),
    };
    Ok((normal, out, rep))
}

/// The coordinate change generated by `F(x) z_t z̄_t`: `z_t ↦ z_t e^{2iF}`, `z̄_t ↦ z̄_t e^{−2iF}`,
/// `y ↦ y − ∂_x F z_t z̄_t`.
pub fn diagonalization_map(f: &TorusFourier, t: i32, pt: &PhasePoint) -> Result<PhasePoint, KamError> {
    let fx = f.eval(&pt.x)?;
    let zt = pt.z.get(&t).copied().ok_or(KamError::NotNormal(t))?;
    let zbt = pt.zb.get(&t).copied().ok_or(KamError::NotNormal(t))?;
    let mut out = pt.clone();
    for (pos, y) in out.y.iter_mut().enumerate() {
        *y -= f.partial(pos).eval(&pt.x)? * zt * zbt;
    }
    let e = (C64::new(0.0, 2.0) * fx).exp();
    out.z.insert(t, zt * e);
    out.zb.insert(t, zbt / e);
    Ok(out)
}

fn collapse_stages(normal: &mut NormalForm, t: i32) -> Result<(), KamError> {
    let bar = normal.omega_bar(t);
    let sites = normal.stages.get(&t).and_then(|v| v.first()).map(|f| f.index_set().to_vec()).unwrap_or_default();
    normal.stages.insert(t, vec![TorusFourier::constant(sites, 0, C64::new(bar, 0.0))?]);
    Ok(())
}

/// Generalized binomial coefficient `C(q, m)`.
fn binom(q: f64, m: u32) -> f64 {
    (0..m).fold(1.0, |acc, i| acc * (q - i as f64) / (i as f64 + 1.0))
}

/// Extra series orders evaluated beyond the degree cap when budgeting the excitation tail.
const EXCITE_EXTRA: u32 = 12;

/// Introduces action-angle variables `z_{±j} = √(2(I_{±j}+y_{±j})) e^{ix_{±j}}`.
/// Returns the new normal form, perturbation and the majorant of the dropped series tail.
pub fn excite_oscillators(
    normal: &NormalForm,
    p: &HamiltonianPoly,
    j: i32,
    i_plus: f64,
    i_minus: f64,
    window: &AnalyticityWindow,
) -> Result<(NormalForm, HamiltonianPoly, f64), KamError> {
    let j = j.abs();
    for m in [j, -j] {
        if !p.is_normal(m) {
            return Err(KamError::NotNormal(m));
        }
    }
    let r2 = window.r * window.r;
    let i_min = i_plus.min(i_minus);
    if !(r2 < i_min) {
        return Err(KamError::RadiusViolation { r2, i_min });
    }
    let mut tangent = p.tangent().to_vec();
    tangent.extend([j, -j]);
    tangent.sort_unstable();
    let mut out = HamiltonianPoly::new(tangent.clone(), p.jmax(), p.degree_cap(), p.harmonic_cap())?;
    let mut lost = HamiltonianPoly::new(tangent.clone(), p.jmax(), u32::MAX, u32::MAX)?;
    let mut last_order = lost.clone();
    let n_new = tangent.len();
    let old_pos: Vec<usize> = p.tangent().iter().map(|s| out.tangent_pos(*s).expect("superset")).collect();
    let sites = [(j, i_plus, out.tangent_pos(j).expect("added")), (-j, i_minus, out.tangent_pos(-j).expect("added"))];
    let cap = p.degree_cap();
    let hcap = p.harmonic_cap();

    let mut substitute = |ch: &Channel, f: &TorusFourier, out: &mut HamiltonianPoly| -> Result<(), KamError> {
        let mut l = vec![0u8; n_new];
        for (src, &dst) in old_pos.iter().enumerate() {
            l[dst] = ch.l[src];
        }
        let z: Vec<(i32, u8)> = ch.z.iter().copied().filter(|e| e.0.abs() != j).collect();
        let zb: Vec<(i32, u8)> = ch.zb.iter().copied().filter(|e| e.0.abs() != j).collect();
        let base = Channel::new(l.clone(), &z, &zb);
        let d0 = base.degree();
        let f = f.embed(&tangent)?.with_cutoff(u32::MAX).0;
        // per site: (q, harmonic shift, series length, infinite?)
        let mut spec = Vec::new();
        let mut shifted = f;
        for &(s, i_s, pos) in &sites {
            let a = ch.z_power(s) as i32;
            let b = ch.zb_power(s) as i32;
            let q = (a + b) as f64 / 2.0;
            if a + b > 0 {
                let mut g = shifted.zero_like();
                for (k, c) in shifted.iter() {
                    let mut kk = k.clone();
                    kk[pos] += a - b;
                    g.insert(kk, *c);
                }
                shifted = g;
            }
            spec.push((q, (a + b) % 2 == 1, i_s, pos));
        }
        let keep_orders = cap.saturating_sub(d0) / 2;
        let max_order = |infinite: bool, q: f64| if infinite { keep_orders + EXCITE_EXTRA } else { q as u32 };
        let (q0, inf0, i0, p0) = spec[0];
        let (q1, inf1, i1, p1) = spec[1];
        for m0 in 0..=max_order(inf0, q0) {
            for m1 in 0..=max_order(inf1, q1) {
                let w = (2.0 * i0).powf(q0) * binom(q0, m0) * i0.powi(-(m0 as i32))
                    * (2.0 * i1).powf(q1) * binom(q1, m1) * i1.powi(-(m1 as i32));
                if w == 0.0 {
                    continue;
                }
                let mut ll = l.clone();
                ll[p0] += m0 as u8;
                ll[p1] += m1 as u8;
                let chn = Channel::new(ll, &z, &zb);
                let coef = shifted.scale(C64::new(w, 0.0));
                if chn.degree() > cap {
                    let target = if m0 + m1 == keep_orders + EXCITE_EXTRA { &mut last_order } else { &mut lost };
                    target.add_channel(chn, &coef)?;
                    continue;
                }
                let mut inner = coef.zero_like();
                let mut outer = coef.zero_like();
                for (k, c) in coef.iter() {
                    if l1(k) <= hcap {
                        inner.insert(k.clone(), *c);
                    } else {
                        outer.insert(k.clone(), *c);
                    }
                }
                out.add_channel(chn.clone(), &inner)?;
                if !outer.is_empty() {
                    lost.add_channel(chn, &outer)?;
                }
            }
        }
        Ok(())
    };
    for (ch, f) in p.channels() {
        substitute(ch, f, &mut out)?;
    }

    let mut new_normal = NormalForm { tangent: tangent.clone(), omega: normal.omega.clone(), stages: BTreeMap::new() };
    for (&m, st) in &normal.stages {
        if m.abs() != j {
            new_normal.stages.insert(m, st.clone());
        }
    }
    for &(s, _, _) in &sites {
        new_normal.omega.insert(s, normal.omega_bar(s));
        // ½Ω̃_s z_s z̄_s becomes Ω̃_s (I_s + y_s) in the perturbation
        let tilde = normal.omega_tilde(s)?;
        if !tilde.is_zero() {
            let ch = Channel::new(vec![0; p.n()], &[(s, 1)], &[(s, 1)]);
            substitute(&ch, &tilde.scale(C64::new(0.5, 0.0)), &mut out)?;
        }
    }
    out.prune(0.0);
    let rho = r2 / i_min;
    let tail = lost.vf_majorant(window) + last_order.vf_majorant(window) * (1.0 + rho / (1.0 - rho));
    Ok((new_normal, out, tail))
}

/// Settings of the Lie series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LieOptions {
    pub max_order: usize,
    /// Stop once an increment falls below `tol` (relative to the first one).
    pub tol: f64,
}

impl Default for LieOptions {
    fn default() -> Self {
        Self { max_order: 12, tol: 1e-16 }
    }
}

/// Diagnostics of a Lie-series evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LieReport {
    /// Majorants of `ad_F^k(G)/k!`, `k ≥ 1`.
    pub increments: Vec<f64>,
    /// Bound on the untaken orders.
    pub tail: f64,
    /// Majorant of what the caps removed along the way.
    pub dropped: f64,
}

/// `G∘X_F^1 = Σ_{k ≤ q} ad_F^k(G)/k!`, `ad_F(G) = {G, F}`.
pub fn lie_flow_apply(
    f: &HamiltonianPoly,
    g: &HamiltonianPoly,
    opts: &LieOptions,
    window: &AnalyticityWindow,
) -> Result<(HamiltonianPoly, LieReport), KamError> {
    let mut rep = LieReport { increments: Vec::new(), tail: 0.0, dropped: 0.0 };
    let mut sum = g.clone();
    if f.is_zero() {
        return Ok((sum, rep));
    }
    let mut term = g.clone();
    for k in 1..=opts.max_order {
        let (b, dropped) = term.poisson_bracket(f)?;
        rep.dropped += dropped.vf_majorant(window) / factorial(k - 1);
        term = b.scale(C64::new(1.0 / k as f64, 0.0));
        let inc = term.vf_majorant(window);
        rep.increments.push(inc);
        sum = sum.add(&term)?;
        let first = rep.increments[0].max(f64::MIN_POSITIVE);
        if inc == 0.0 || inc <= opts.tol * first {
            return Ok((sum, rep));
        }
        if k >= 3 {
            let ratio = inc / rep.increments[k - 2];
            if ratio >= 1.0 {
                return Err(KamError::SeriesStagnation { order: k, ratio });
            }
        }
    }
    let n = rep.increments.len();
    let ratio = if n >= 2 { (rep.increments[n - 1] / rep.increments[n - 2]).min(0.99) } else { 0.5 };
    rep.tail = rep.increments[n - 1] * ratio / (1.0 - ratio);
    if ratio > 0.25 {
        return Err(KamError::SeriesStagnation { order: n, ratio });
    }
    Ok((sum, rep))
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Normal form, perturbation and domain of the current step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KamState {
    pub v: usize,
    pub normal: NormalForm,
    pub p: HamiltonianPoly,
    pub window: AnalyticityWindow,
}

/// Settings of [`kam_step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KamConfig {
    pub seeds: ScheduleSeeds,
    /// Lower bound of the `Γ_K` cutoff.
    pub k_floor: u32,
    pub guard_c: f64,
    /// Scale applied to `β_v` in the divisor bounds.
    pub beta_scale: f64,
    /// New actions are `i_factor · r_v²`.
    pub i_factor: f64,
    pub lie: LieOptions,
    pub transform: TransformOptions,
    pub series_tol: f64,
    /// Fail with `BudgetExceeded` when the losses exceed `ε_v^{5/4}`.
    pub enforce_budget: bool,
}

impl Default for KamConfig {
    fn default() -> Self {
        let seeds = ScheduleSeeds::default();
        Self {
            seeds,
            k_floor: 8,
            guard_c: 1.0,
            beta_scale: seeds.m0 / 25.0,
            i_factor: 2.0,
            lie: LieOptions::default(),
            transform: TransformOptions::default(),
            series_tol: 1e-17,
            enforce_budget: false,
        }
    }
}

/// Truncation losses of one step, each counted once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct TailBudget {
    pub diagonalization: f64,
    pub excitation: f64,
    pub lie_dropped: f64,
    pub lie_series: f64,
    pub total: f64,
}

/// Diagnostics of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub v: usize,
    pub excited: Option<i32>,
    pub tangent: Vec<i32>,
    pub k_cut: u32,
    /// Majorant of `X_P` on the step domain (after excitation).
    pub eps_in: f64,
    /// Majorant of `X_{P₊}` on the next domain.
    pub eps_out: f64,
    /// Sampled lower bound of the same.
    pub eps_out_sampled: f64,
    /// Majorant of the `Γ_K` remainder of `R` (kept in `P₊`).
    pub gamma_tail: f64,
    /// Majorant of `R′`, the unsolved far anti-diagonal (kept in `P₊`).
    pub r_prime: f64,
    pub tails: TailBudget,
    pub divisor_min: f64,
    pub residual_max: f64,
    pub omega_drift: f64,
    /// `sup_j ‖Ω′_j − Ω_j‖ / |j|`.
    pub big_omega_drift: f64,
    pub diagonalizations: Vec<DiagonalizationReport>,
    pub lie_increments: Vec<f64>,
    pub guard: GuardReport,
    pub block_residuals: Vec<BlockResidual>,
    pub wall_time_s: f64,
}

/// One KAM step: diagonalize and excite `±(v+1)` (unless already tangent), solve the
/// homological equations on `Γ_K R`, compose with the Lie series and split `N₊ + P₊`.
pub fn kam_step(state: &KamState, cfg: &KamConfig) -> Result<(KamState, StepReport), KamError> {
    let start = Instant::now();
    let v = state.v;
    let row = schedules(v, &cfg.seeds);
    let next = schedules(v + 1, &cfg.seeds);
    let mut normal = state.normal.clone();
    let mut p = state.p.clone();
    let window = state.window;
    let t = (v + 1) as i32;
    let mut excited = None;
    let mut diags = Vec::new();
    let mut tails = TailBudget::default();
    if p.tangent_pos(t).is_none() {
        if !p.is_normal(t) || !p.is_normal(-t) || p.normal_modes().len() <= 2 {
            return Err(KamError::ModesExhausted(v));
        }
        let profile = step_profile(&row, p.n(), cfg.beta_scale)?;
        for m in [t, -t] {
            let (nn, pp, rep) = diagonalize_normal_frequency(&normal, &p, m, &profile, &window, cfg.series_tol)?;
            tails.diagonalization += rep.tail;
            diags.push(rep);
            normal = nn;
            p = pp;
        }
        let i_new = cfg.i_factor * window.r * window.r;
        let (nn, pp, tail) = excite_oscillators(&normal, &p, t, i_new, i_new, &window)?;
        tails.excitation = tail;
        normal = nn;
        p = pp;
        excited = Some(t);
    }
    let n = p.n();
    let profile = step_profile(&row, n, cfg.beta_scale)?;
    let eps_in = p.vf_majorant(&window);
    let k_cut = row.k.max(cfg.k_floor);

    let (r, _) = p.taylor_truncate_r();
    let (low, high) = r.gamma_split(k_cut);
    let gamma_tail = high.to_poly(&p)?.vf_majorant(&window);
    let bcfg = BlockSolveConfig {
        k_cut,
        guard_c: cfg.guard_c,
        sigma: row.sigma,
        tau: profile.tau_max(),
        gamma_tilde: row.gamma,
        transform: cfg.transform,
    };
    let sol = solve_block_f(&normal, &low, &profile, &window, &bcfg)?;
    let mut r_prime_poly = p.zero_like();
    for (&(i, j), f) in &sol.r_prime {
        r_prime_poly.add_channel(Channel::new(vec![0; n], &[(i, 1)], &[(j, 1)]), f)?;
    }
    let r_prime = r_prime_poly.vf_majorant(&window);
    let f_poly = sol.f.to_poly(&p)?;

    // N₊
    let mut new_normal = normal.clone();
    let mut omega_drift: f64 = 0.0;
    for (pos, &site) in normal.tangent.iter().enumerate() {
        let d = sol.omega_shift[pos];
        *new_normal.omega.get_mut(&site).expect("tangent frequency") += d;
        omega_drift = omega_drift.max(d.abs());
    }
    let cap = p.harmonic_cap();
    let mut big_omega_drift: f64 = 0.0;
    for m in p.normal_modes() {
        let mut stage = TorusFourier::new(normal.tangent.clone(), cap)?;
        if let Some(rd) = sol.diagonal.get(&m) {
            stage = stage.add(&rd.scale(C64::new(2.0, 0.0)))?;
        }
        // ⟨∂_x Ω_m, F^y⟩
        let tilde = normal.omega_tilde(m)?;
        if !tilde.is_zero() {
            for pos in 0..n {
                let (prod, _) = tilde.partial(pos).mul(&sol.f.y[pos], cap)?;
                stage = stage.add(&prod)?;
            }
        }
        let stage = stage.with_cutoff(cap).0;
        big_omega_drift = big_omega_drift.max(stage.sup_norm_bound(window.s) / m.unsigned_abs() as f64);
        new_normal.stages.entry(m).or_default().push(stage);
    }

    // H₊ = (N + P)∘X_F^1, P₊ = H₊ − N₊
    let g = normal.to_poly(&p)?.add(&p)?;
    let (h_plus, lie) = lie_flow_apply(&f_poly, &g, &cfg.lie, &window)?;
    let mut p_plus = h_plus.sub(&new_normal.to_poly(&p)?)?;
    p_plus.drop_constant();
    p_plus.prune(0.0);
    tails.lie_dropped = lie.dropped;
    tails.lie_series = lie.tail;
    tails.total = tails.diagonalization + tails.excitation + tails.lie_dropped + tails.lie_series;

    let next_window = AnalyticityWindow::new(next.s, next.r, window.a, window.p)?;
    let eps_out = p_plus.vf_majorant(&next_window);
    let eps_out_sampled = p_plus.vf_norm(&next_window, 32, 1000 + v as u64)?.sampled;
    let divisor_min = sol
        .residuals
        .iter()
        .map(|b| b.divisor_min)
        .chain(diags.iter().map(|d| d.divisor_min))
        .fold(f64::INFINITY, f64::min);
    let residual_max = sol.residuals.iter().map(|b| b.residual).fold(0.0, f64::max);
    let budget = row.eps.powf(1.25).max(eps_in.powf(1.25));
    if cfg.enforce_budget && tails.total > budget {
        return Err(KamError::BudgetExceeded { what: "truncation losses".into(), value: tails.total, budget });
    }
    let report = StepReport {
        v,
        excited,
        tangent: p.tangent().to_vec(),
        k_cut,
        eps_in,
        eps_out,
        eps_out_sampled,
        gamma_tail,
        r_prime,
        tails,
        divisor_min,
        residual_max,
        omega_drift,
        big_omega_drift,
        diagonalizations: diags,
        lie_increments: lie.increments,
        guard: sol.guard,
        block_residuals: sol.residuals,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((KamState { v: v + 1, normal: new_normal, p: p_plus, window: next_window }, report))
}
