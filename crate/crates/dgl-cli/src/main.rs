//! Command-line front end: cell problems, self-energy tables, relaxation
//! queries, rigidity probes, Helmholtz splits, scaled-energy runs and
//! configuration validation, all emitting plot-ready CSV/JSON.

mod config;

use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use dgl_core::dislocations::{
    build_self_energy_table, cell_energy, hat_psi_with, relax_phi, BurgersLattice,
};
use dgl_core::elliptic::helmholtz_split;
use dgl_core::error::{DglError, Result};
use dgl_core::gamma::{
    build_recovery, energy_eps, gamma_liminf_diagnostic, limit_energy, validate_configuration,
    DislocationMeasure, LimitStrain, ScaleEntry, ScaleSchedule, SmoothStrain,
};
use dgl_core::grid::{write_snapshot, SnapshotFormat, StrainField};
use dgl_core::matrix::{Mat2, Vec2};
use dgl_core::report::{fmt17, write_csv, write_dat, write_json};
use dgl_core::rigidity::{probe_inequality, FitNorm, InequalityKind};
use dgl_core::wells::{ElasticDensity, WellSet};
use serde::Serialize;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "dgl", about = "Planar multiwell dislocation laboratory", version)]
struct Cli {
    /// Experiment configuration file (flat key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Grid resolution override (cells along the longest side).
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Self-energy factor convention override.
    #[arg(long, global = true, value_parser = ["psi-half", "psi-nohalf"])]
    convention: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cell problems psi(xi, delta) over the configured delta list.
    Cell,
    /// Build the self-energy table over the Burgers lattice.
    Table,
    /// Evaluate the relaxed self-energy density on query directions.
    Phi,
    /// Run a rigidity-inequality probe ensemble.
    Probe,
    /// Decompose a sample strain into incompatibility/divergence/harmonic parts.
    Helmholtz,
    /// Build recovery sequences along the scale schedule and emit the traces.
    Gamma,
    /// Check an atom configuration against the admissibility invariants.
    Validate,
}

fn main() {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("DGL_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            let code = match &e {
                DglError::Config(_) | DglError::InvalidDomain(_) | DglError::InvalidWellSet(_) => 2,
                DglError::Solver(_) | DglError::UnderResolved(_) | DglError::Io(_)
                | DglError::Serde(_) => 3,
                DglError::Infeasible(_) => 4,
            };
            std::process::exit(code);
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(g) = cli.grid {
        cfg.grid = g;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(c) = &cli.convention {
        cfg.convention = c.parse()?;
    }
    std::fs::create_dir_all(&cfg.out)?;
    match cli.command {
        Command::Cell => cmd_cell(&cfg),
        Command::Table => cmd_table(&cfg).map(|_| ()),
        Command::Phi => cmd_phi(&cfg),
        Command::Probe => cmd_probe(&cfg),
        Command::Helmholtz => cmd_helmholtz(&cfg),
        Command::Gamma => cmd_gamma(&cfg),
        Command::Validate => cmd_validate(&cfg),
    }
}

fn density_of(cfg: &ExperimentConfig) -> Result<ElasticDensity> {
    let wells = WellSet::new(cfg.wells.clone())?;
    Ok(ElasticDensity::new(wells, cfg.cu_mode))
}

fn lattice_of(cfg: &ExperimentConfig) -> Result<BurgersLattice> {
    BurgersLattice::new(cfg.lattice_basis.0, cfg.lattice_basis.1)
}

fn cmd_cell(cfg: &ExperimentConfig) -> Result<()> {
    let density = density_of(cfg)?;
    if cfg.well_index >= density.wells().count() {
        return Err(DglError::Config(format!(
            "well_index {} out of range",
            cfg.well_index
        )));
    }
    let form = density.c_u_form(cfg.well_index);
    let mut rows = Vec::new();
    let mut dat_rows = Vec::new();
    for &delta in &cfg.delta_list {
        let psi = if cfg.xi.norm() == 0.0 {
            0.0
        } else {
            cell_energy(cfg.xi, delta, &form)?
        };
        let over_log = psi / (1.0 / delta).ln();
        rows.push(vec![fmt17(delta), fmt17(psi), fmt17(over_log)]);
        dat_rows.push(vec![fmt17(delta), fmt17(psi), fmt17(over_log)]);
    }
    write_csv(&cfg.out.join("psi_table.csv"), &["delta", "psi", "psi_over_log"], &rows)?;
    write_dat(
        &cfg.out.join("cell_trace.dat"),
        "delta psi psi_over_log",
        &dat_rows,
    )?;
    let estimate = hat_psi_with(cfg.xi, &form, cfg.convention, &cfg.delta_list)?;
    write_json(&cfg.out.join("psi_hat.json"), &estimate)?;
    println!(
        "cell: psi_hat({:?}) = {} [{}]",
        (cfg.xi.x, cfg.xi.y),
        fmt17(estimate.value),
        cfg.convention.as_str()
    );
    Ok(())
}

fn cmd_table(cfg: &ExperimentConfig) -> Result<dgl_core::dislocations::SelfEnergyTable> {
    let density = density_of(cfg)?;
    let lattice = lattice_of(cfg)?;
    let form = density.c_u_form(cfg.well_index);
    let well = density.wells().well(cfg.well_index);
    if density.coercivity_bounds(cfg.well_index, 720).is_none() {
        eprintln!(
            "warning: the quadratic form at well {} lacks two-sided coercivity in |sym|",
            cfg.well_index
        );
    }
    let table = build_self_energy_table(
        &lattice,
        &form,
        well,
        cfg.rotation,
        cfg.lattice_truncation * lattice.max_basis_norm(),
        cfg.convention,
    )?;
    write_json(&cfg.out.join("self_energy_table.json"), &table)?;
    println!(
        "table: {} entries, route disagreement {:.3}%",
        table.entries.len(),
        table.route_disagreement * 100.0
    );
    Ok(table)
}

#[derive(Serialize)]
struct PhiRow {
    xi: [f64; 2],
    phi: f64,
    decomposition: Vec<(f64, [f64; 2])>,
}

fn cmd_phi(cfg: &ExperimentConfig) -> Result<()> {
    let table = cmd_table(cfg)?;
    let mut rows = Vec::new();
    for q in &cfg.phi_queries {
        let phi = relax_phi(&table, *q)?;
        rows.push(PhiRow {
            xi: [q.x, q.y],
            phi: phi.value,
            decomposition: phi.decomposition,
        });
    }
    write_json(&cfg.out.join("phi.json"), &rows)?;
    for r in &rows {
        println!("phi([{} {}]) = {}", r.xi[0], r.xi[1], fmt17(r.phi));
    }
    Ok(())
}

fn cmd_probe(cfg: &ExperimentConfig) -> Result<()> {
    let density = density_of(cfg)?;
    let kind = InequalityKind::parse(&cfg.probe_kind)?;
    let norm = match cfg.probe_norm.as_str() {
        "l2" => FitNorm::L2,
        "weak-l2" => FitNorm::WeakL2,
        other => return Err(DglError::Config(format!("unknown probe_norm '{other}'"))),
    };
    let report = probe_inequality(
        kind,
        density.wells(),
        &cfg.domain,
        cfg.grid,
        cfg.n_samples,
        cfg.seed,
        norm,
    )?;
    let rows: Vec<Vec<String>> = report
        .samples
        .iter()
        .map(|s| {
            vec![
                s.index.to_string(),
                fmt17(s.lhs),
                fmt17(s.rhs),
                fmt17(s.ratio),
            ]
        })
        .collect();
    write_csv(
        &cfg.out.join("probe_samples.csv"),
        &["sample", "lhs", "rhs", "ratio"],
        &rows,
    )?;
    write_json(&cfg.out.join("probe_report.json"), &report)?;
    println!(
        "probe {}: {} samples, empirical constant {}, {} degenerate",
        report.inequality,
        report.ensemble,
        fmt17(report.empirical_constant),
        report.degenerate_count
    );
    Ok(())
}

fn cmd_helmholtz(cfg: &ExperimentConfig) -> Result<()> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let coeffs: Vec<f64> = (0..12).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let sample = move |p: Vec2| {
        Mat2::new(
            coeffs[0] + coeffs[1] * (2.0 * p.x + p.y).sin() + coeffs[2] * p.x * p.y,
            coeffs[3] + coeffs[4] * (1.5 * p.y).cos() + coeffs[5] * p.x,
            coeffs[6] + coeffs[7] * (p.x - 2.0 * p.y).sin() + coeffs[8] * p.y,
            coeffs[9] + coeffs[10] * (2.5 * p.x).cos() + coeffs[11] * p.x * p.y,
        )
    };
    let beta = StrainField::sample(&cfg.domain, cfg.grid, Vec::new(), sample)?;
    let split = helmholtz_split(&beta)?;
    write_json(&cfg.out.join("helmholtz.json"), &split.report)?;
    write_snapshot(&cfg.out.join("y.snap"), &split.y, SnapshotFormat::Binary)?;
    write_snapshot(&cfg.out.join("grad_v.snap"), &split.grad_v, SnapshotFormat::Binary)?;
    write_snapshot(&cfg.out.join("grad_w.snap"), &split.grad_w, SnapshotFormat::Binary)?;
    println!(
        "helmholtz: div Y {:.3e}, curl grad v {:.3e}, harmonic residual {:.3e}",
        split.report.div_y_max, split.report.curl_grad_v_max, split.report.harmonic_residual
    );
    Ok(())
}

#[derive(Serialize)]
struct GammaRun {
    entry: ScaleEntry,
    info: Option<dgl_core::gamma::RecoveryInfo>,
    validation: Option<dgl_core::gamma::ValidationReport>,
    energy: Option<dgl_core::gamma::EnergyReport>,
    shells: Vec<dgl_core::gamma::ShellRow>,
    infeasible: Option<String>,
}

#[derive(Serialize)]
struct GammaOutput {
    schedule: ScaleSchedule,
    runs: Vec<GammaRun>,
    limit: dgl_core::gamma::LimitEnergyReport,
    convention: String,
    cu_mode: String,
    first_well_is_identity: bool,
}

fn cmd_gamma(cfg: &ExperimentConfig) -> Result<()> {
    let density = density_of(cfg)?;
    let lattice = lattice_of(cfg)?;
    let form = density.c_u_form(0);
    let well = density.wells().well(0);
    let schedule = ScaleSchedule::power_law(&cfg.eps_list, cfg.rho_exponent, cfg.gamma_exponent)?;
    let table = build_self_energy_table(
        &lattice,
        &form,
        well,
        cfg.rotation,
        cfg.lattice_truncation * lattice.max_basis_norm(),
        cfg.convention,
    )?;
    let (lo, hi) = cfg.e_region;
    let xi = cfg.xi;
    let in_e = move |p: Vec2| p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
    let mu_density = move |p: Vec2| if in_e(p) { xi } else { Vec2::ZERO };
    let beta_limit = std::sync::Arc::new(LimitStrain::from_measure_with_divergence(
        &cfg.domain,
        cfg.grid,
        &mu_density,
        cfg.beta_harmonic_amp,
        cfg.beta_div_amp,
    )?);
    let limit = limit_energy(&mu_density, &beta_limit.field, cfg.rotation, &form, &table)?;
    let mut runs = Vec::new();
    let mut trace_rows = Vec::new();
    let mut shell_rows = Vec::new();
    let mut any_ok = false;
    for (j, entry) in schedule.entries.iter().enumerate() {
        match build_recovery(
            cfg.e_region,
            cfg.xi,
            well,
            &form,
            &table,
            entry,
            &cfg.domain,
            beta_limit.clone(),
            cfg.grid,
            cfg.seed,
        ) {
            Ok((mu, strain, info)) => {
                let validation =
                    validate_configuration(&mu, &strain, entry, &cfg.domain, &lattice, cfg.grid);
                let smooth = |p: Vec2| strain.smooth_part(p);
                let energy = energy_eps(
                    &mu,
                    &strain,
                    &density,
                    entry,
                    &cfg.domain,
                    cfg.grid,
                    Some(&smooth),
                )?;
                let shells = gamma_liminf_diagnostic(
                    &mu,
                    &strain,
                    &density,
                    &form,
                    entry,
                    cfg.convention,
                    Some(&smooth),
                )?;
                for s in &shells {
                    shell_rows.push(vec![
                        j.to_string(),
                        s.atom.to_string(),
                        s.k.to_string(),
                        fmt17(s.r_inner),
                        fmt17(s.r_outer),
                        fmt17(s.energy),
                        fmt17(s.energy_net),
                        fmt17(s.reference),
                        fmt17(s.ratio),
                        (s.interior as u8).to_string(),
                    ]);
                }
                trace_rows.push(vec![
                    j.to_string(),
                    fmt17(entry.eps),
                    fmt17(entry.rho),
                    fmt17(entry.eta),
                    fmt17(energy.total),
                    fmt17(energy.elastic_term),
                    fmt17(energy.core_share),
                    fmt17(energy.core_share_net),
                    fmt17(energy.penalty_term),
                    fmt17(limit.elastic),
                    fmt17(limit.self_energy),
                    fmt17(limit.total),
                    fmt17(energy.mu_mass),
                    info.atom_count.to_string(),
                ]);
                any_ok = true;
                runs.push(GammaRun {
                    entry: *entry,
                    info: Some(info),
                    validation: Some(validation),
                    energy: Some(energy),
                    shells,
                    infeasible: None,
                });
            }
            Err(DglError::Infeasible(msg)) => {
                runs.push(GammaRun {
                    entry: *entry,
                    info: None,
                    validation: None,
                    energy: None,
                    shells: Vec::new(),
                    infeasible: Some(msg),
                });
            }
            Err(e) => return Err(e),
        }
    }
    write_csv(
        &cfg.out.join("gamma_trace.csv"),
        &[
            "j",
            "eps",
            "rho",
            "eta",
            "total",
            "elastic",
            "core",
            "core_net",
            "penalty",
            "limit_elastic",
            "limit_self",
            "limit_total",
            "mu_mass",
            "atoms",
        ],
        &trace_rows,
    )?;
    write_csv(
        &cfg.out.join("shells.csv"),
        &[
            "j", "atom", "k", "r_inner", "r_outer", "energy", "energy_net", "reference", "ratio",
            "interior",
        ],
        &shell_rows,
    )?;
    let output = GammaOutput {
        schedule,
        runs,
        limit,
        convention: cfg.convention.as_str().to_string(),
        cu_mode: cfg.cu_mode.as_str().to_string(),
        first_well_is_identity: density.wells().first_well_is_identity(),
    };
    write_json(&cfg.out.join("gamma.json"), &output)?;
    if !any_ok {
        return Err(DglError::Infeasible(
            "no scale in the schedule admits a recovery configuration".into(),
        ));
    }
    println!(
        "gamma: {} scales, limit energy {}",
        output.runs.len(),
        fmt17(output.limit.total)
    );
    Ok(())
}

fn cmd_validate(cfg: &ExperimentConfig) -> Result<()> {
    let density = density_of(cfg)?;
    let lattice = lattice_of(cfg)?;
    let schedule = ScaleSchedule::power_law(&cfg.eps_list, cfg.rho_exponent, cfg.gamma_exponent)?;
    let entry = schedule.entries[0];
    let mu = DislocationMeasure {
        atoms: cfg.atoms.clone(),
        eps: entry.eps,
    };
    // Canonical admissible strain: the well plus the plain superposition of
    // scaled divergence-free kernels (curl-free off the atoms, exact
    // circulations, zero divergence).
    let well = density.wells().well(0);
    let atoms = cfg.atoms.clone();
    let eps = entry.eps;
    let strain = SmoothStrain {
        field: move |p: Vec2| {
            let mut acc = well;
            for (x, xi) in &atoms {
                let d = p - *x;
                let r2 = d.norm_sq();
                if r2 > 0.0 {
                    acc += Mat2::outer(*xi, d.perp())
                        .scale(eps / (2.0 * std::f64::consts::PI * r2));
                }
            }
            acc
        },
        divergence: |_| Vec2::ZERO,
    };
    let report = validate_configuration(&mu, &strain, &entry, &cfg.domain, &lattice, cfg.grid);
    write_json(&cfg.out.join("validation.json"), &report)?;
    for c in &report.checks {
        println!(
            "{} {}: measured {:.3e} (threshold {:.3e})",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.measured,
            c.threshold
        );
    }
    if !report.passed {
        return Err(DglError::Infeasible("configuration checks failed".into()));
    }
    Ok(())
}
