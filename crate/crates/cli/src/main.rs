use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dnls_kam::dnls::{build_hamiltonian, build_quartic, calibrate_radius, initial_state, p0_fae_size};
use dnls_kam::hamiltonian::ConservationReport;
use dnls_kam::homological::{
    dense_oracle_solve, harmonic_ball, oracle_campaign, solve_large_variable, solve_liu_yuan, solve_shifted,
    DiophantineProfile, SolveReport, TransformOptions,
};
use dnls_kam::kam::{kam_step, schedules, StepReport};
use dnls_kam::measure::{
    zone_measure_mc, AffineFrequencyModel, DiophantineLevels, DiophantineReport, DivisorClass, Envelope, Frequencies,
    ResonanceZone, ZoneEstimate,
};
use dnls_kam::structure::{verify_fae, Sweep};
use dnls_kam::{AnalyticityWindow, HamiltonianPoly, RunConfig, TangentSet, TorusFourier, C64};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "dnls-kam", version, about = "Truncated KAM iteration for the derivative NLS")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    #[arg(long, global = true)]
    eps0: Option<f64>,
    #[arg(long, global = true)]
    s0: Option<f64>,
    #[arg(long, global = true)]
    rho0: Option<f64>,
    #[arg(long, global = true)]
    jmax: Option<i32>,
    #[arg(long, global = true)]
    kcheck: Option<u32>,
    #[arg(long, global = true)]
    degree_cap: Option<u32>,
    #[arg(long, global = true)]
    harmonic_cap: Option<u32>,
    #[arg(long, global = true)]
    seed_sigma: Option<u64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    samples: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = self.$flag {
                    cfg.$field = v;
                }
            )*};
        }
        set!(eps0 => eps0, s0 => s0, rho0 => rho0, jmax => jmax, kcheck => k_check, degree_cap => degree_cap,
             harmonic_cap => harmonic_cap, seed => seed, samples => samples);
        if let Some(v) = self.seed_sigma {
            cfg.sigma_seed = Some(v);
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Serialize the initial Hamiltonian.
    Build {
        /// Emit only the quartic part.
        #[arg(long)]
        quartic: bool,
        /// Radius; the actions are `i_factor·r²`.
        #[arg(long)]
        r: Option<f64>,
    },
    /// Calibrate the radius and run KAM steps.
    KamRun {
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Solve one random homological equation and compare with the dense oracle.
    Solve {
        #[arg(long, value_enum, default_value = "shifted")]
        kind: SolveKind,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long = "K", alias = "k", default_value_t = 6)]
        k: u32,
        #[arg(long, default_value_t = 0.7, allow_hyphen_values = true)]
        lambda: f64,
    },
    /// First-type asymptotics of the quartic part, as CSV.
    VerifyFae {
        #[arg(long)]
        r: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Defaults to the size derived from the closed forms.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 1)]
        t_start: i32,
    },
    /// Monte-Carlo measure of one resonance zone.
    Measure {
        /// `k_1,…,k_n,i,j`: harmonics over the stage tangent set, then the two normal sites.
        /// `i = −j` selects the anti-diagonal divisor, `i = 0` the single divisor of `j`.
        #[arg(long, allow_hyphen_values = true)]
        zone: String,
        /// Stage whose tangent set `{±1,…,±(v+1)}` the zone refers to.
        #[arg(long, default_value_t = 0)]
        v: usize,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Solver-versus-oracle campaign.
    Oracle {
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long = "K", alias = "k", default_value_t = 8)]
        k: u32,
        #[arg(long, default_value_t = 100)]
        cases: usize,
    },
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SolveKind {
    Shifted,
    LargeVariable,
    LiuYuan,
}

/// A usage problem detected after parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Serialize)]
struct Report<T: Serialize> {
    config_hash: String,
    config: RunConfig,
    #[serde(flatten)]
    body: T,
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(out: &Option<PathBuf>, cfg: &RunConfig, body: T) -> Result<()> {
    let doc = Report { config_hash: cfg.hash(), config: cfg.clone(), body };
    emit(out, &(serde_json::to_string_pretty(&doc)? + "\n"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() || e.downcast_ref::<dnls_kam::ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// `Ok(true)` when every asserted budget holds.
fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    if let Command::KamRun { steps: Some(s) } = &cli.command {
        cfg.steps = *s;
    }
    cfg.validate()?;
    info!("config hash {}", cfg.hash());
    match cli.command {
        Command::Build { quartic, r } => build(&cfg, &cli.out, quartic, r),
        Command::KamRun { .. } => kam_run(&cfg, &cli.out),
        Command::Solve { kind, n, k, lambda } => solve(&cfg, &cli.out, kind, n, k, lambda),
        Command::VerifyFae { r, lambda, eps, t_start } => fae(&cfg, &cli.out, r, lambda, eps, t_start),
        Command::Measure { zone, v, tau, beta } => measure(&cfg, &cli.out, &zone, v, tau, beta),
        Command::Oracle { n, k, cases } => oracle(&cfg, &cli.out, n, k, cases),
    }
}

fn build(cfg: &RunConfig, out: &Option<PathBuf>, quartic: bool, r: Option<f64>) -> Result<bool> {
    let d = cfg.dnls(r.unwrap_or(cfg.r_start))?;
    let h = if quartic { build_quartic(&d)? } else { build_hamiltonian(&d)? };
    info!("{} terms", h.num_terms());
    #[derive(Serialize)]
    struct Body {
        radius: f64,
        actions: f64,
        hamiltonian: HamiltonianPoly,
    }
    emit_json(out, cfg, Body { radius: d.window.r, actions: d.i_plus, hamiltonian: h })?;
    Ok(true)
}

#[derive(Serialize)]
struct StepSummary {
    report: StepReport,
    eps_next: f64,
    contraction_bound: f64,
    contraction_ok: bool,
    conservation: ConservationReport,
    diophantine: DiophantineReport,
}

fn diophantine(cfg: &RunConfig, normal: &dnls_kam::NormalForm, p: &HamiltonianPoly, v: usize, seeds: &dnls_kam::kam::ScheduleSeeds, beta_scale: f64) -> DiophantineReport {
    let modes = p.normal_modes();
    let row = schedules(v, seeds);
    let n = normal.tangent.len();
    let levels = DiophantineLevels::from_row(&row, beta_scale, row.tau.max(2.0 * n as f64 + 10.0));
    dnls_kam::measure::diophantine_check(&Frequencies::from_normal(normal, &modes), &modes, &levels, cfg.k_check)
}

fn kam_run(cfg: &RunConfig, out: &Option<PathBuf>) -> Result<bool> {
    let template = cfg.dnls(cfg.r_start)?;
    let (dcfg, eps0) = calibrate_radius(&template, cfg.i_factor, cfg.eps0)?;
    info!("radius {:.4e}, actions {:.4e}, eps0 {:.4e}", dcfg.window.r, dcfg.i_plus, eps0);
    let (mut state, tail0) = initial_state(&dcfg)?;
    let kam = cfg.kam(dcfg.window.r, eps0);
    #[derive(Serialize)]
    struct Initial {
        radius: f64,
        actions: f64,
        eps0: f64,
        excitation_tail: f64,
        terms: usize,
        conservation: ConservationReport,
        diophantine: DiophantineReport,
    }
    let initial = Initial {
        radius: dcfg.window.r,
        actions: dcfg.i_plus,
        eps0,
        excitation_tail: tail0,
        terms: state.p.num_terms(),
        conservation: state.p.check_momentum_mass(),
        diophantine: diophantine(cfg, &state.normal, &state.p, 0, &kam.seeds, kam.beta_scale),
    };
    let mut pass = initial.conservation.momentum && initial.conservation.mass;
    let mut steps = Vec::new();
    for _ in 0..cfg.steps {
        let (next, mut rep) = kam_step(&state, &kam)?;
        info!("step {}: eps {:.3e} -> {:.3e} in {:.1}s", rep.v, rep.eps_in, rep.eps_out, rep.wall_time_s);
        // reports stay byte-identical across runs
        rep.wall_time_s = 0.0;
        let eps_next = rep.eps_out + rep.tails.total;
        let contraction_bound = cfg.tolerances.contraction_factor * rep.eps_in.powf(1.25);
        let conservation = next.p.check_momentum_mass();
        let contraction_ok = eps_next <= contraction_bound;
        pass &= contraction_ok && conservation.momentum && conservation.mass && rep.residual_max <= cfg.tolerances.residual;
        let dio = diophantine(cfg, &next.normal, &next.p, next.v, &kam.seeds, kam.beta_scale);
        steps.push(StepSummary { report: rep, eps_next, contraction_bound, contraction_ok, conservation, diophantine: dio });
        state = next;
    }
    #[derive(Serialize)]
    struct Body {
        initial: Initial,
        steps: Vec<StepSummary>,
        pass: bool,
    }
    emit_json(out, cfg, Body { initial, steps, pass })?;
    Ok(pass)
}

fn solve(cfg: &RunConfig, out: &Option<PathBuf>, kind: SolveKind, n: usize, k: u32, lambda: f64) -> Result<bool> {
    if !(1..=3).contains(&n) {
        return Err(usage(format!("--n must be 1, 2 or 3, got {n}")));
    }
    let omega: Vec<f64> = [1.0, 2f64.sqrt(), 3f64.sqrt()][..n].to_vec();
    let neg: Vec<f64> = omega.iter().map(|x| -x).collect();
    let sites: Vec<i32> = (1..=n as i32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut p = TorusFourier::new(sites.clone(), k)?;
    let ball = harmonic_ball(n, k);
    for _ in 0..10 {
        let h = ball[rng.random_range(0..ball.len())].clone();
        p.insert(h, C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    }
    let mut coeff = TorusFourier::new(sites.clone(), 2)?;
    for h in harmonic_ball(n, 1).into_iter().filter(|h| h.iter().any(|&c| c != 0)) {
        coeff.insert(h, C64::new(0.005, 0.0));
    }
    let profile = DiophantineProfile::single(1e-6, 1e-6, n as f64 + 10.0, 0.05, n)?;
    let window = AnalyticityWindow::new(0.3, 0.1, 0.0, 2.0)?;
    let opts = TransformOptions { cutoff: 12.max(k), ..TransformOptions::default() };
    let lam = C64::new(lambda, 0.0);
    let (u, report, oracle): (TorusFourier, SolveReport, TorusFourier) = match kind {
        SolveKind::Shifted => {
            let (u, rep) = solve_shifted(&omega, lam, &p, &profile, window.s)?;
            (u, rep, dense_oracle_solve(&neg, lam, &p.zero_like(), &p, k)?.0)
        }
        SolveKind::LargeVariable => {
            let (u, rep, _) = solve_large_variable(&omega, lam, &[coeff.clone()], &p, &profile, &window, &opts)?;
            (u, rep, dense_oracle_solve(&neg, lam, &coeff.scale(lam), &p, k)?.0)
        }
        SolveKind::LiuYuan => {
            let (u, rep) = solve_liu_yuan(&omega, lam, &[coeff.clone()], &p, &profile, &window, 0.01, 1.0, &opts)?;
            (u, rep, dense_oracle_solve(&omega, lam, &coeff, &p, k)?.0)
        }
    };
    let deviation = u.sub(&oracle)?.l2() / oracle.l2().max(f64::MIN_POSITIVE);
    let pass = report.residual <= cfg.tolerances.residual && deviation <= cfg.tolerances.oracle;
    #[derive(Serialize)]
    struct Body {
        kind: SolveKind,
        omega: Vec<f64>,
        lambda: f64,
        rhs: TorusFourier,
        solution: TorusFourier,
        report: SolveReport,
        oracle_deviation: f64,
        pass: bool,
    }
    emit_json(out, cfg, Body { kind, omega, lambda, rhs: p, solution: u, report, oracle_deviation: deviation, pass })?;
    Ok(pass)
}

fn fae(cfg: &RunConfig, out: &Option<PathBuf>, r: Option<f64>, lambda: f64, eps: Option<f64>, t_start: i32) -> Result<bool> {
    let d = cfg.dnls(r.unwrap_or(cfg.r_start))?;
    let p0 = build_quartic(&d)?;
    let profile = d.default_profile();
    let eps = eps.unwrap_or_else(|| p0_fae_size(&profile, cfg.rho0));
    let sweep = Sweep {
        pairs: vec![(0, 0), (0, 1), (1, 0), (1, 1), (-1, 1), (0, 2), (2, -1), (-2, 2)],
        t_start,
        profile,
        s: d.window.s,
        refit_tol: 1e-8,
        sigma_modes: vec![],
    };
    let rep = verify_fae(&p0, None, lambda, eps, cfg.rho0, &sweep)?;
    info!("eps {eps:.4e}, {} rows, pass {}", rep.rows.len(), rep.pass);
    emit(out, &rep.to_csv())?;
    Ok(rep.pass)
}

fn parse_zone(spec: &str, n: usize) -> Result<(Vec<i32>, DivisorClass)> {
    let vals: Vec<i32> = spec
        .split(',')
        .map(|t| t.trim().parse::<i32>().map_err(|_| usage(format!("bad integer {t:?} in --zone"))))
        .collect::<Result<_>>()?;
    if vals.len() != n + 2 {
        return Err(usage(format!("--zone needs {n} harmonics and two sites, got {} values", vals.len())));
    }
    let (k, sites) = vals.split_at(n);
    let (i, j) = (sites[0], sites[1]);
    let class = if j == 0 {
        return Err(usage("the second site must be nonzero"));
    } else if i == 0 {
        DivisorClass::Single(j)
    } else if i == -j {
        DivisorClass::AntiDiagonal(j)
    } else if i == j {
        return Err(usage("the two sites must differ"));
    } else {
        DivisorClass::Difference(i, j)
    };
    Ok((k.to_vec(), class))
}

fn measure(cfg: &RunConfig, out: &Option<PathBuf>, zone: &str, v: usize, tau: Option<f64>, beta: Option<f64>) -> Result<bool> {
    let tangent = TangentSet::at_stage(v).members().to_vec();
    let (k, class) = parse_zone(zone, tangent.len())?;
    let kam = cfg.kam(cfg.r_start, cfg.eps0);
    let row = schedules(v, &kam.seeds);
    let levels = DiophantineLevels::from_row(&row, kam.beta_scale, row.tau.max(2.0 * tangent.len() as f64 + 10.0));
    let zone = ResonanceZone { k, class, level: beta.unwrap_or(levels.beta), tau: tau.unwrap_or(levels.tau), v };
    let model = AffineFrequencyModel::bare(tangent);
    let envelope = zone.envelope(&model);
    let empty = zone.certified_empty(&model);
    let estimate = zone_measure_mc(&zone, &model, cfg.samples, cfg.seed)?;
    let verdict = if empty {
        "certified-empty"
    } else if estimate.ci.0 <= envelope.bound {
        "below-envelope"
    } else {
        "above-envelope"
    };
    #[derive(Serialize)]
    struct Body {
        zone: ResonanceZone,
        threshold: f64,
        estimate: ZoneEstimate,
        ci: (f64, f64),
        envelope: Envelope,
        measured_constant: f64,
        verdict: &'static str,
    }
    let body = Body {
        threshold: zone.threshold(),
        ci: estimate.ci,
        measured_constant: estimate.estimate / envelope.unit,
        zone,
        estimate,
        envelope,
        verdict,
    };
    emit_json(out, cfg, body)?;
    Ok(verdict != "above-envelope")
}

fn oracle(cfg: &RunConfig, out: &Option<PathBuf>, n: usize, k: u32, cases: usize) -> Result<bool> {
    if !(1..=3).contains(&n) || cases == 0 {
        return Err(usage(format!("need 1 <= --n <= 3 and --cases > 0, got n = {n}, cases = {cases}")));
    }
    let summary = oracle_campaign(n, k, cases, cfg.seed)?;
    info!("max deviation {:.3e}, max residual {:.3e}", summary.max_deviation, summary.max_residual);
    let pass = summary.max_deviation < cfg.tolerances.oracle && summary.max_residual < cfg.tolerances.residual;
    #[derive(Serialize)]
    struct Body {
        summary: dnls_kam::homological::OracleSummary,
        pass: bool,
    }
    emit_json(out, cfg, Body { summary, pass })?;
    Ok(pass)
}
