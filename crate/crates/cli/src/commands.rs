//! The subcommands: each reads a scenario, runs one module and writes its
//! reports into the output directory.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use conc::ansatz::{self, AnsatzContext, GridOptions, ReducedOptions, ReducedSystem};
use conc::geom::{self, AmbientSpace, ConstantSection, ExpansionForm, FermiChart, Submanifold};
use conc::k_ops::{self, JacobiOperator};
use conc::linop::{write_radial_csv, LinearizedOperator};
use conc::potential::{PotentialModel, Restriction};
use conc::profile::{solve_ground_state, GroundStateProfile, LimitProblem};
use conc::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::scenario::{Instance, Radius, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GroundState,
    Spectrum,
    GeometryCheck,
    Stationary,
    Jacobi,
    GapScan,
    BuildAnsatz,
    ResidualScan,
    ErrorScan,
    Solve,
    Validate,
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Ok,
    /// A mathematical check failed (exit code 2).
    CheckFailed(String),
}

pub struct Context {
    pub out: PathBuf,
    pub seed: u64,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        fs::write(self.path(name), serde_json::to_string_pretty(value)?)?;
        Ok(())
    }
}

pub fn run(cmd: Command, sc: &Scenario, ctx: &Context) -> Result<Status> {
    if cmd == Command::Validate {
        println!("{}", serde_json::to_string_pretty(&sc.validation())?);
        return Ok(Status::Ok);
    }
    fs::create_dir_all(&ctx.out)?;
    match cmd {
        Command::GroundState => ground_state(sc, ctx),
        Command::Spectrum => spectrum(sc, ctx),
        Command::GeometryCheck => geometry_check(sc, ctx),
        Command::Stationary => stationary(sc, ctx),
        Command::Jacobi => jacobi(sc, ctx),
        Command::GapScan => gap_scan(sc, ctx),
        Command::BuildAnsatz => build_ansatz(sc, ctx),
        Command::ResidualScan => residual_scan(sc, ctx),
        Command::ErrorScan => error_scan(sc, ctx),
        Command::Solve => solve(sc, ctx),
        Command::Validate => unreachable!(),
    }
}

fn profile(sc: &Scenario) -> Result<GroundStateProfile> {
    let problem = LimitProblem::new(sc.codim(), sc.problem.p)?;
    solve_ground_state(problem, sc.run.r_max, 1e-12)
}

fn radius(sc: &Scenario) -> Result<f64> {
    match sc.geometry.radius {
        Radius::Fixed(r) => Ok(r),
        Radius::Stationary => k_ops::find_stationary_radius(&sc.potential, sc.sigma(), sc.geometry.bracket),
    }
}

fn chart(sc: &Scenario) -> Result<FermiChart> {
    let n = sc.problem.n;
    let g = &sc.geometry;
    match g.instance {
        Instance::Circle => FermiChart::build(AmbientSpace::flat(n), Submanifold::Circle { radius: radius(sc)? }, g.nodes),
        Instance::Line => FermiChart::build(AmbientSpace::flat(n), Submanifold::Line { length: g.length }, g.nodes),
        Instance::GreatCircle => FermiChart::build(AmbientSpace::sphere(n), Submanifold::GreatCircle, g.nodes),
    }
}

fn restriction(sc: &Scenario, chart: &FermiChart) -> Result<Restriction> {
    sc.potential.restrict_to_chart(chart, sc.problem.p)
}

fn ansatz_context(sc: &Scenario) -> Result<AnsatzContext> {
    if sc.problem.n != 2 {
        return Err(Error::UnsupportedManifold(format!(
            "the expansion and the reduced solve need n = 2, k = 1 (got n = {})",
            sc.problem.n
        )));
    }
    match (sc.geometry.instance, &sc.potential) {
        (Instance::Circle, pot) => AnsatzContext::circle(pot, sc.problem.p, radius(sc)?),
        (Instance::Line, PotentialModel::Constant { value }) => AnsatzContext::line(*value, sc.problem.p),
        (inst, pot) => Err(Error::UnsupportedManifold(format!("{inst:?} with potential {pot:?}"))),
    }
}

fn reduced_options(sc: &Scenario) -> ReducedOptions {
    let r = &sc.run;
    ReducedOptions {
        lambda: r.lambda,
        tol_fp: r.tol_fp,
        tol_final: r.tol_final,
        max_iter: r.max_iter,
        gap_c: r.gap_c,
        delta: r.delta,
        grid: GridOptions { step: r.grid_step, far: r.grid_far },
        ..ReducedOptions::default()
    }
}

#[derive(Serialize)]
struct GroundStateReport {
    #[serde(rename = "N")]
    n: usize,
    p: f64,
    w0: f64,
    tail_constant: f64,
    decay_rate: f64,
    c0: f64,
    ode_residual: f64,
}

fn ground_state(sc: &Scenario, ctx: &Context) -> Result<Status> {
    let prof = profile(sc)?;
    prof.write_csv(ctx.path("ground_state.csv"))?;
    ctx.json("identities.json", &[prof.sigma_identity_check()])?;
    let rep = GroundStateReport {
        n: prof.problem.n,
        p: prof.problem.p,
        w0: prof.w[0],
        tail_constant: prof.tail_constant,
        decay_rate: prof.decay_rate,
        c0: prof.c0(),
        ode_residual: prof.ode_residual(),
    };
    ctx.json("ground_state.json", &rep)?;
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct SpectrumReport {
    lambda0: f64,
    c0: f64,
    kernel_eigenvalue: f64,
    coercivity: f64,
    gamma0: f64,
}

fn spectrum(sc: &Scenario, ctx: &Context) -> Result<Status> {
    let prof = profile(sc)?;
    let op = LinearizedOperator::assemble(&prof)?;
    let sp = op.special_solutions()?;
    write_radial_csv(ctx.path("z.csv"), &prof.r, &op.z)?;
    write_radial_csv(ctx.path("u0.csv"), &prof.r, &sp.u0)?;
    write_radial_csv(ctx.path("uj.csv"), &prof.r, &sp.uj)?;
    let mut ids = vec![op.a_term_identity_check(&sp), prof.sigma_identity_check()];
    ids.extend(op.moment_identity_checks());
    ctx.json("identities.json", &ids)?;
    let rep = SpectrumReport {
        lambda0: op.lambda0,
        c0: op.c0,
        kernel_eigenvalue: op.kernel_eigenvalue,
        coercivity: op.coercivity_estimate()?,
        gamma0: sp.gamma0,
    };
    ctx.json("spectrum.json", &rep)?;
    Ok(Status::Ok)
}

fn geometry_check(sc: &Scenario, ctx: &Context) -> Result<Status> {
    let chart = chart(sc)?;
    fs::write(ctx.path("chart.json"), serde_json::to_string_pretty(&chart.to_json())?)?;
    let zero = ConstantSection(vec![0.0; chart.codim()]);
    let xi = vec![0.5; chart.codim()];
    let rep = geom::error_class_bound_check(&chart, &zero, 0.3, &xi, &sc.run.epsilons, ExpansionForm::Consistent)?;
    let mut w = csv::Writer::from_path(ctx.path("expansion_check.csv"))?;
    for row in &rep.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    ctx.json("expansion_orders.json", &rep)?;
    // the line is exact: no order to fit
    let order = rep.order_laplacian;
    if order.is_finite() && order < 2.9 {
        return Ok(Status::CheckFailed(format!("Laplacian expansion order {order:.3} < 2.9")));
    }
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct StationaryOut {
    radius: Option<f64>,
    sup_norm: f64,
    tol: f64,
    stationary: bool,
    weighted_energy: f64,
}

fn stationary(sc: &Scenario, ctx: &Context) -> Result<Status> {
    let chart = chart(sc)?;
    let rs = restriction(sc, &chart)?;
    rs.write_csv(&ctx.path("restriction.csv"))?;
    let rep = k_ops::stationary_residual(&chart, &rs);
    let radius = matches!(sc.geometry.instance, Instance::Circle).then(|| chart.chart_radius());
    let out = StationaryOut {
        radius,
        sup_norm: rep.sup_norm,
        tol: rep.tol,
        stationary: rep.stationary,
        weighted_energy: k_ops::weighted_energy(&chart, &rs),
    };
    ctx.json("stationary.json", &out)?;
    if !rep.stationary {
        return Ok(Status::CheckFailed(format!("not stationary: residual {:e}", rep.sup_norm)));
    }
    Ok(Status::Ok)
}

fn random_section(rng: &mut ChaCha8Rng, chart: &FermiChart) -> Vec<Vec<f64>> {
    let l = chart.length();
    let grid = chart.grid();
    (0..chart.codim())
        .map(|_| {
            let coef: Vec<(f64, f64)> = (0..8).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            grid.iter()
                .map(|y| {
                    coef.iter()
                        .enumerate()
                        .map(|(k, (a, b))| {
                            let t = 2.0 * PI * k as f64 * y / l;
                            (a * t.cos() + b * t.sin()) / (1.0 + k as f64)
                        })
                        .sum()
                })
                .collect()
        })
        .collect()
}

#[derive(Serialize)]
struct JacobiOut {
    nodes: usize,
    nondegeneracy: f64,
    nondegenerate: bool,
    stationary: bool,
    asymmetry: f64,
    /// Relative gap between the quadratic form and `⟨−𝒥Φ, Φ⟩` per section.
    form_rel_errors: Vec<f64>,
}

fn jacobi(sc: &Scenario, ctx: &Context) -> Result<Status> {
    let chart = chart(sc)?;
    let rs = restriction(sc, &chart)?;
    let op = JacobiOperator::assemble(&chart, &rs)?;
    op.write_spectrum_csv(&ctx.path("jacobi_spectrum.csv"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let form_rel_errors = (0..10)
        .map(|_| {
            let phi = random_section(&mut rng, &chart);
            let a = k_ops::nondegeneracy_form(&chart, &rs, &phi);
            let jp = op.apply(&phi);
            let b = -op.inner(&jp, &phi);
            (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
        })
        .collect();
    let out = JacobiOut {
        nodes: op.nodes,
        nondegeneracy: op.nondegeneracy(),
        nondegenerate: op.is_nondegenerate(),
        stationary: op.stationary,
        asymmetry: op.asymmetry(),
        form_rel_errors,
    };
    ctx.json("jacobi.json", &out)?;
    if !out.nondegenerate {
        return Ok(Status::CheckFailed(format!("degenerate: min |eigenvalue| = {:e}", out.nondegeneracy)));
    }
    Ok(Status::Ok)
}

fn gap_scan(sc: &Scenario, ctx: &Context) -> Result<Status> {
    let chart = chart(sc)?;
    let rs = restriction(sc, &chart)?;
    let op = LinearizedOperator::assemble(&profile(sc)?)?;
    let length = chart.length();
    let rows = k_ops::gap_scan(&rs.v, length, op.lambda0, &sc.run.epsilons, sc.run.gap_c);
    k_ops::write_gap_csv(&rows, &ctx.path("gap_scan.csv"))?;
    // constant-μ resonances ε = √μ₀/ℓ above the smallest scanned ε
    let mu2 = rs.v.iter().sum::<f64>() / rs.v.len() as f64;
    let eps_min = sc.run.epsilons.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w = csv::Writer::from_path(ctx.path("resonances.csv"))?;
    w.write_record(["ell", "epsilon"])?;
    let level = k_ops::resonance_level(op.lambda0, mu2, length).sqrt();
    let count = (level / eps_min).floor() as usize;
    for (l, e) in k_ops::resonances(op.lambda0, mu2, length, count).iter().enumerate() {
        w.write_record([(l + 1).to_string(), format!("{e:e}")])?;
    }
    w.flush()?;
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct AnsatzOut {
    #[serde(rename = "I")]
    order: usize,
    e: f64,
    mu: f64,
    h: f64,
    phis: Vec<f64>,
    solvability_slopes: Vec<f64>,
    final_defects: Vec<f64>,
    order1_defect: f64,
    c_g: f64,
    decay_rate: f64,
}

fn build_ansatz(sc: &Scenario, ctx: &Context) -> Result<Status> {
    let ac = ansatz_context(sc)?;
    let exp = ac.build(sc.run.order, sc.run.e, 0.0)?;
    let eps = sc.run.epsilons[0];
    let hs = ac.step();
    let v = exp.profile_at(&ac, eps);
    let mut w = csv::Writer::from_path(ctx.path("ansatz.csv"))?;
    let mut header = vec!["xi".to_string(), "w0".into()];
    header.extend((1..=exp.ws.len()).map(|l| format!("w{l}")));
    header.push("v".into());
    w.write_record(&header)?;
    let m = v.len() as isize;
    for j in (-(m - 1)..m).step_by(10) {
        let mut row = vec![j as f64 * hs, ac.w0.node(j)];
        row.extend(exp.ws.iter().map(|c| c.v.node(j)));
        row.push(v.node(j));
        w.write_record(row.iter().map(|x| format!("{x:e}")))?;
    }
    w.flush()?;
    let c_g = match ac.model {
        ansatz::NormalModel::Circle { .. } => ac.e_solvability_coefficient()? / (ac.gamma / ac.mu),
        ansatz::NormalModel::Line => 0.0,
    };
    let out = AnsatzOut {
        order: exp.order,
        e: exp.e,
        mu: ac.mu,
        h: ac.h,
        phis: exp.phis.clone(),
        solvability_slopes: exp.solvability_slopes.clone(),
        final_defects: exp.final_defects.clone(),
        order1_defect: ac.order1_defect(),
        c_g,
        decay_rate: exp.decay_rate(&ac, eps, 10.0, 20.0),
    };
    ctx.json("ansatz.json", &out)?;
    Ok(Status::Ok)
}

fn residual_scan(sc: &Scenario, ctx: &Context) -> Result<Status> {
    let ac = ansatz_context(sc)?;
    let orders: Vec<usize> = (1..=sc.run.order).collect();
    let rows = ansatz::residual_scan(&ac, &orders, &sc.run.epsilons, sc.run.e, sc.run.window)?;
    ansatz::write_residual_csv(&rows, &ctx.path("residual_scan.csv"))?;
    Ok(Status::Ok)
}

fn error_scan(sc: &Scenario, ctx: &Context) -> Result<Status> {
    let ac = ansatz_context(sc)?;
    let rows = ansatz::error_scan(&ac, sc.run.order, &sc.run.epsilons, reduced_options(sc))?;
    ansatz::write_error_csv(&rows, &ctx.path("error_components.csv"))?;
    Ok(Status::Ok)
}

fn write_solution(sol: &ansatz::ReducedSolution, sc: &Scenario, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    sol.write_trace_csv(&dir.join("fixedpoint_trace.csv"))?;
    sol.write_slice_csv(&dir.join("solution.csv"))?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&sol.manifest(&sc.name))?)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(sol)?)?;
    Ok(())
}

fn solve(sc: &Scenario, ctx: &Context) -> Result<Status> {
    let ac = ansatz_context(sc)?;
    let many = sc.run.epsilons.len() > 1;
    let mut failures = Vec::new();
    for &eps in &sc.run.epsilons {
        let dir = if many { ctx.out.join(format!("eps_{eps}")) } else { ctx.out.clone() };
        let sol = match ac.model {
            ansatz::NormalModel::Line => ansatz::solve_flat_variant(ac.vder[0], ac.p, sc.run.order, eps),
            ansatz::NormalModel::Circle { .. } => {
                match ReducedSystem::new(&ac, sc.run.order, eps, reduced_options(sc)) {
                    Ok(mut sys) => sys.solve(),
                    Err(e) => Err(e),
                }
            }
        };
        let sol = match sol {
            Ok(s) => s,
            Err(e @ (Error::ResonantEpsilon { .. } | Error::NotContracting { .. })) => {
                failures.push(format!("epsilon {eps}: {e}"));
                continue;
            }
            Err(e) => return Err(e),
        };
        write_solution(&sol, sc, &dir)?;
        if !sol.converged {
            failures.push(format!("epsilon {eps}: fixed point did not converge"));
        } else if sol.final_residual > sc.run.tol_final {
            failures.push(format!("epsilon {eps}: final residual {:e} > {:e}", sol.final_residual, sc.run.tol_final));
        } else if !sol.in_ball {
            failures.push(format!("epsilon {eps}: iterates left the ball (needed λ = {:.3e} > {})", sol.lambda_needed, sol.lambda));
        }
    }
    if failures.is_empty() {
        Ok(Status::Ok)
    } else {
        Ok(Status::CheckFailed(failures.join("; ")))
    }
}
