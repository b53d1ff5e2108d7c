//! Subcommand implementations. Each returns the process exit status.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use damped_mhd::checkpoint;
use damped_mhd::energy::{
    a_alpha, check_damping_identity, check_h1_inequalities, check_l2_inequality, gronwall_from_ledger, CheckReport,
    IdentityReport, Verdict, L2_TOL_STEP,
};
use damped_mhd::integrator::{cfl_number, make_initial, Simulation, UNIT_MODE_L2_SQ};
use damped_mhd::lemmas::{
    c_alpha_beta, check_interpolation, check_monotonicity, growth_window_report, interpolation_minimizer, linspace, random_pairs,
    GrowthWindowReport, LemmaReport,
};
use damped_mhd::twin::{check_contraction_fields, config_hash, twin_run_pair, TwinRunResult, TwinSummary};
use damped_mhd::{DampingFn, DampingSpec, Error, GridSpec, Ledger, SolverConfig, Transform};
use serde::Serialize;

use crate::config::{ExperimentConfig, LemmaMatrix};
use crate::{CliError, Status};

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn core_err(e: Error) -> CliError {
    match e {
        Error::Io { .. } | Error::Checkpoint { .. } => CliError::Io(e.to_string()),
        other => CliError::Usage(other.to_string()),
    }
}

#[derive(Serialize)]
struct CheckEntry {
    name: String,
    verdict: String,
    worst_margin: Option<f64>,
    worst_t: Option<f64>,
    informational: bool,
}

impl From<&CheckReport> for CheckEntry {
    fn from(r: &CheckReport) -> Self {
        CheckEntry {
            name: r.name.clone(),
            verdict: r.verdict.to_string(),
            worst_margin: r.worst_margin.is_finite().then_some(r.worst_margin),
            worst_t: r.worst_t.is_finite().then_some(r.worst_t),
            informational: r.informational,
        }
    }
}

impl From<&LemmaReport> for CheckEntry {
    fn from(r: &LemmaReport) -> Self {
        CheckEntry {
            name: r.id.clone(),
            verdict: r.verdict.to_string(),
            worst_margin: r.worst_margin.is_finite().then_some(r.worst_margin),
            worst_t: None,
            informational: false,
        }
    }
}

#[derive(Serialize)]
struct RunSummary {
    name: String,
    command: &'static str,
    exit_code: i32,
    config_hash: String,
    steps: u64,
    t_final: f64,
    ledger_rows: usize,
    initial_cfl: f64,
    blow_up_at: Option<f64>,
    checks: Vec<CheckEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    twin: Option<TwinSummary>,
}

/// Text block and pass flag for the integrated damping identity.
fn identity_line(label: &str, r: &IdentityReport) -> String {
    format!(
        "damping-identity({label}) {:<15} lhs {:.12e} rhs {:.12e} rel {:.3e}",
        r.verdict.to_string(),
        r.lhs,
        r.rhs,
        r.rel_error
    )
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<Status, CliError> {
    let solver = cfg.solver()?.clone();
    let out = &cfg.output_dir;
    prepare_dir(out)?;
    let hash = config_hash(&solver);
    write_file(&out.join("config.json"), cfg.to_json())?;

    let mut sim = Simulation::new(solver.clone()).map_err(core_err)?;
    let transform = sim.integrator().transform().clone();
    let initial = sim.state().clone();
    let mut blow_up_at = None;
    while !sim.is_finished() {
        match sim.advance() {
            Ok(()) => {}
            Err(Error::BlowUp { t, .. }) => {
                tracing::error!(t, "solution blew up");
                blow_up_at = Some(t);
                break;
            }
            Err(e) => return Err(core_err(e)),
        }
    }
    let ledger = sim.ledger().clone();
    ledger.save_csv(&out.join("ledger.csv")).map_err(core_err)?;

    let mut text = String::new();
    writeln!(text, "experiment {} (config {hash})", cfg.name).unwrap();
    writeln!(text, "grid {}  damping {}  dt {}  t_end {}", solver.grid, solver.damping, solver.dt, solver.t_end).unwrap();
    writeln!(text, "initial CFL {:.3e}", sim.initial_cfl()).unwrap();
    let mut checks: Vec<CheckReport> = Vec::new();
    let mut extra: Vec<CheckEntry> = Vec::new();
    let mut failed = false;
    let mut twin_summary = None;

    if let Some(t) = blow_up_at {
        writeln!(text, "BLOW-UP at t = {t:.6e} after {} steps; checks skipped", sim.steps_taken()).unwrap();
    } else {
        if cfg.checks.l2 {
            checks.push(check_l2_inequality(&ledger, L2_TOL_STEP));
        }
        if cfg.checks.h1_additive || cfg.checks.h1_exponential {
            for r in check_h1_inequalities(&ledger, &solver.damping, solver.nu_h, solver.nu_v) {
                let additive = r.name.contains("additive");
                if (additive && cfg.checks.h1_additive) || (!additive && cfg.checks.h1_exponential) {
                    checks.push(r);
                }
            }
        }
        for r in &checks {
            writeln!(text, "{r}").unwrap();
        }
        failed |= checks.iter().any(CheckReport::is_failure);
        if cfg.checks.gronwall {
            let r = gronwall_from_ledger(&ledger, &solver.damping)
                .unwrap_or_else(|| LemmaReport::not_applicable("gronwall", "no damping rate"));
            writeln!(text, "{r}").unwrap();
            failed |= r.verdict == Verdict::Fail;
            extra.push((&r).into());
        }
        if cfg.checks.damping_identity {
            for (label, state) in [("initial", &initial), ("final", sim.state())] {
                let r = check_damping_identity(&transform, &state.u, &solver.damping);
                writeln!(text, "{}", identity_line(label, &r)).unwrap();
                failed |= r.verdict == Verdict::Fail;
                extra.push(CheckEntry {
                    name: format!("damping-identity-{label}"),
                    verdict: r.verdict.to_string(),
                    worst_margin: r.rel_error.is_finite().then_some(-r.rel_error),
                    worst_t: Some(state.t),
                    informational: false,
                });
            }
        }
        if cfg.checks.lemmas {
            let suite = lemma_suite(&cfg.lemmas, &out.join("lemmas"))?;
            text.push_str(&suite.text);
            failed |= !suite.passed;
        }
        if cfg.checks.twin {
            let (twin, det_ok) = twin_pair(cfg)?;
            twin.save_csv(&out.join("twin.csv")).map_err(core_err)?;
            text.push_str(&twin_text(&twin, det_ok));
            failed |= !(det_ok && twin.bound_holds());
            twin_summary = Some(twin.summary());
        }
    }

    if cfg.report.checkpoint {
        checkpoint::write(sim.state(), &out.join("checkpoint.mhdf")).map_err(core_err)?;
    }
    let status = if blow_up_at.is_some() {
        Status::BlowUp
    } else if failed {
        Status::CheckFailed
    } else {
        Status::Ok
    };
    writeln!(text, "overall: {}", status.label()).unwrap();
    write_file(&out.join("checks.txt"), &text)?;
    if cfg.report.echo {
        print!("{text}");
    }
    if cfg.report.summary_json {
        let summary = RunSummary {
            name: cfg.name.clone(),
            command: "run",
            exit_code: status.code(),
            config_hash: hash,
            steps: sim.steps_taken(),
            t_final: sim.state().t,
            ledger_rows: ledger.rows().len(),
            initial_cfl: sim.initial_cfl(),
            blow_up_at,
            checks: checks.iter().map(CheckEntry::from).chain(extra).collect(),
            twin: twin_summary,
        };
        write_file(&out.join("summary.json"), serde_json::to_string_pretty(&summary).unwrap())?;
    }
    Ok(status)
}

/// Twin run from the config together with the `ε = 0` determinism check.
fn twin_pair(cfg: &ExperimentConfig) -> Result<(TwinRunResult, bool), CliError> {
    let base = cfg.solver()?;
    let partner = cfg.twin_partner.as_ref().map_or_else(|| base.clone(), |p| p.apply(base));
    let err = |e: Error| match e {
        Error::GridMismatch(_) | Error::InvalidConfig(_) | Error::InvalidParameter(_) => CliError::Usage(e.to_string()),
        other => core_err(other),
    };
    let zero = twin_run_pair(base, &partner, 0.0).map_err(err)?;
    let det_ok = zero.gap.iter().all(|d| *d == 0.0) && zero.blow_up_at.is_none();
    let twin = if cfg.eps == 0.0 { zero } else { twin_run_pair(base, &partner, cfg.eps).map_err(err)? };
    Ok((twin, det_ok))
}

fn twin_text(r: &TwinRunResult, det_ok: bool) -> String {
    let s = r.summary();
    let mut text = String::new();
    writeln!(text, "twin eps=0 determinism {}", if det_ok { "PASS" } else { "FAIL" }).unwrap();
    writeln!(
        text,
        "twin eps={:e} bound {}  d0 {:.6e}  C_hat {:.6e}  C_lsq {:.6e}  window [0, {}]  worst excess {:.3e}",
        s.eps,
        if r.bound_holds() { "PASS" } else { "FAIL" },
        s.d0,
        s.c_hat,
        s.c_fit,
        s.window_end,
        s.worst_excess
    )
    .unwrap();
    if let Some(t) = s.blow_up_at {
        writeln!(text, "twin blow-up at t = {t:.6e}; samples truncated").unwrap();
    }
    text
}

#[derive(Serialize)]
struct TwinFileSummary<'a> {
    name: &'a str,
    command: &'static str,
    exit_code: i32,
    determinism: bool,
    bound_holds: bool,
    #[serde(flatten)]
    twin: TwinSummary,
}

pub fn cmd_twin(cfg: &ExperimentConfig) -> Result<Status, CliError> {
    cfg.solver()?;
    prepare_dir(&cfg.output_dir)?;
    let (twin, det_ok) = twin_pair(cfg)?;
    twin.save_csv(&cfg.output_dir.join("twin.csv")).map_err(core_err)?;
    let text = twin_text(&twin, det_ok);
    let status = if det_ok && twin.bound_holds() { Status::Ok } else { Status::CheckFailed };
    write_file(&cfg.output_dir.join("checks.txt"), format!("{text}overall: {}\n", status.label()))?;
    if cfg.report.echo {
        print!("{text}");
    }
    if cfg.report.summary_json {
        let s = TwinFileSummary {
            name: &cfg.name,
            command: "twin",
            exit_code: status.code(),
            determinism: det_ok,
            bound_holds: twin.bound_holds(),
            twin: twin.summary(),
        };
        write_file(&cfg.output_dir.join("summary.json"), serde_json::to_string_pretty(&s).unwrap())?;
    }
    Ok(status)
}

/// Reports of a lemma-suite pass, already written under `lemmas/`.
pub struct LemmaSuite {
    pub gating: Vec<LemmaReport>,
    pub growth: Vec<GrowthWindowReport>,
    pub passed: bool,
    pub text: String,
}

fn csv_lines<'a>(header: &str, rows: impl Iterator<Item = String> + 'a) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

/// Runs every lemma verifier over `m`, writing CSVs into `dir`.
pub fn lemma_suite(m: &LemmaMatrix, dir: &Path) -> Result<LemmaSuite, CliError> {
    m.validate()?;
    prepare_dir(dir)?;
    let xs = linspace(0.0, m.x_max, m.x_points);
    let mut interp = Vec::new();
    let mut constants = String::from("alpha,beta,c,x_star\n");
    for &alpha in &m.alphas {
        for &beta in &m.betas {
            if beta <= 3.0 {
                interp.push(LemmaReport::not_applicable(
                    format!("interp(a={alpha},b={beta})"),
                    "beta <= 3: constant undefined",
                ));
                continue;
            }
            let c = c_alpha_beta(alpha, beta).map_err(core_err)?;
            let x = interpolation_minimizer(alpha, beta).map_err(core_err)?;
            writeln!(constants, "{alpha},{beta},{c:.16e},{x:.16e}").unwrap();
            interp.push(check_interpolation(alpha, beta, &xs).map_err(core_err)?);
        }
    }
    let pairs = random_pairs(m.pairs, m.seed, m.pair_scale[0], m.pair_scale[1]);
    let field_grid = GridSpec::new(m.field_modes).map_err(core_err)?;
    let mut mono = Vec::new();
    let mut growth = Vec::new();
    let z = {
        let (lo, hi) = (0.0, m.z_max.ln());
        linspace(lo, hi, m.z_points).into_iter().map(f64::exp).collect::<Vec<_>>()
    };
    let mut a_rows = String::from("alpha,f,a_alpha\n");
    for &f in &m.functions {
        mono.push(check_monotonicity(f, &pairs));
        let [a, b] = check_contraction_fields(field_grid, &DampingSpec::Generalized { alpha: 1.0, f }, m.field_pairs, m.seed)
            .map_err(core_err)?;
        mono.push(a);
        mono.push(b);
        for &beta in &m.betas {
            growth.push(growth_window_report(f, beta, &z).map_err(core_err)?);
        }
        for &alpha in &m.alphas {
            writeln!(a_rows, "{alpha},{f},{:.16e}", a_alpha(alpha, f).map_err(core_err)?).unwrap();
        }
    }
    for &beta in m.betas.iter().filter(|b| **b > 1.0) {
        let [a, b] =
            check_contraction_fields(field_grid, &DampingSpec::Power { alpha: 1.0, beta }, m.field_pairs, m.seed)
                .map_err(core_err)?;
        mono.push(a);
        mono.push(b);
    }

    write_file(&dir.join("interpolation.csv"), csv_lines(LemmaReport::CSV_HEADER, interp.iter().map(LemmaReport::csv_row)))?;
    write_file(&dir.join("monotonicity.csv"), csv_lines(LemmaReport::CSV_HEADER, mono.iter().map(LemmaReport::csv_row)))?;
    write_file(
        &dir.join("growth_window.csv"),
        csv_lines(GrowthWindowReport::CSV_HEADER, growth.iter().map(GrowthWindowReport::csv_row)),
    )?;
    write_file(&dir.join("constants.csv"), constants)?;
    write_file(&dir.join("rates.csv"), a_rows)?;

    let gating: Vec<LemmaReport> = interp.into_iter().chain(mono).collect();
    let passed = gating.iter().all(|r| r.verdict != Verdict::Fail);
    let mut text = String::new();
    for r in &gating {
        writeln!(text, "{r}").unwrap();
    }
    for g in &growth {
        writeln!(text, "{g} (informational)").unwrap();
    }
    Ok(LemmaSuite { gating, growth, passed, text })
}

pub fn cmd_lemmas(cfg: &ExperimentConfig) -> Result<Status, CliError> {
    prepare_dir(&cfg.output_dir)?;
    let suite = lemma_suite(&cfg.lemmas, &cfg.output_dir.join("lemmas"))?;
    let status = if suite.passed { Status::Ok } else { Status::CheckFailed };
    let text = format!("{}overall: {}\n", suite.text, status.label());
    write_file(&cfg.output_dir.join("checks.txt"), &text)?;
    if cfg.report.echo {
        print!("{text}");
    }
    if cfg.report.summary_json {
        #[derive(Serialize)]
        struct Summary<'a> {
            name: &'a str,
            command: &'static str,
            exit_code: i32,
            checks: Vec<CheckEntry>,
        }
        let s = Summary {
            name: &cfg.name,
            command: "lemmas",
            exit_code: status.code(),
            checks: suite.gating.iter().map(CheckEntry::from).collect(),
        };
        write_file(&cfg.output_dir.join("summary.json"), serde_json::to_string_pretty(&s).unwrap())?;
    }
    Ok(status)
}

/// Human-readable description of a configuration and the damping catalog.
pub fn info_text(cfg: Option<&ExperimentConfig>) -> Result<String, CliError> {
    let mut s = String::new();
    writeln!(s, "damped-mhd {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(s, "damping catalog (f(0) = 1 for every entry):").unwrap();
    for f in DampingFn::ALL {
        writeln!(s, "  {f:<5} f(1) = {:.12}  f'(0) = {:.6e}", f.value(1.0), f.derivative(0.0)).unwrap();
    }
    writeln!(s, "unit sine mode has squared L2 norm {UNIT_MODE_L2_SQ:.12}").unwrap();
    let Some(cfg) = cfg else { return Ok(s) };
    writeln!(s, "experiment {} -> {}", cfg.name, cfg.output_dir.display()).unwrap();
    if let Some(solver) = &cfg.solver {
        describe_solver(&mut s, solver)?;
    }
    Ok(s)
}

fn describe_solver(s: &mut String, c: &SolverConfig) -> Result<(), CliError> {
    let g = c.grid;
    let steps = c.n_steps().map_err(core_err)?;
    writeln!(s, "grid {g}: {} points, dealias radius {:.3}", g.len(), g.dealias_radius()).unwrap();
    writeln!(s, "state size {:.1} MiB", (6 * 16 * g.len()) as f64 / (1 << 20) as f64).unwrap();
    writeln!(s, "viscosity nu_h = {}, nu_v = {}", c.nu_h, c.nu_v).unwrap();
    writeln!(s, "damping {}", c.damping).unwrap();
    match c.damping {
        DampingSpec::Power { alpha, beta } => match c_alpha_beta(alpha, beta) {
            Ok(v) => writeln!(s, "  interpolation constant c = {v:.12e}").unwrap(),
            Err(_) => writeln!(s, "  interpolation constant undefined (beta <= 3)").unwrap(),
        },
        DampingSpec::Generalized { alpha, f } => {
            writeln!(s, "  growth rate a_alpha = {:.12e}", a_alpha(alpha, f).map_err(core_err)?).unwrap()
        }
        DampingSpec::None => {}
    }
    writeln!(s, "dt {} x {steps} steps to t = {}, ledger every {} steps", c.dt, c.t_end, c.ledger_stride).unwrap();
    let state = make_initial(&c.initial_condition, g, c.seed).map_err(core_err)?;
    let t = Transform::new(g);
    writeln!(
        s,
        "initial data: L2^2 = {:.6e}, H1 = {:.6e}, CFL = {:.3e} (target {})",
        state.l2_norm_sq(),
        state.h1_norm(),
        cfl_number(&t, &state, c.dt),
        c.cfl_target
    )
    .unwrap();
    writeln!(s, "config hash {}", config_hash(c)).unwrap();
    Ok(())
}

/// Reads a ledger written by `run`.
pub fn load_ledger(path: &Path) -> Result<Ledger, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ledger::read_csv(std::io::BufReader::new(file)).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Default output directory when no config names one.
pub fn default_output(name: &str) -> PathBuf {
    PathBuf::from("output").join(name)
}
