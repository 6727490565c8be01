//! Trend of the scaled energy of recovery sequences toward the limit
//! functional: the gap must be non-increasing over the last three scales.
//! Logarithmic rates forbid absolute-closeness assertions; the trend and the
//! component shares are the desk-scale substitute.

use dgl_core::dislocations::{build_self_energy_table, relax_phi, BurgersLattice, Convention};
use dgl_core::gamma::{
    build_recovery, energy_eps, limit_energy, LimitStrain, ScaleSchedule,
};
use dgl_core::grid::Domain;
use dgl_core::matrix::{Mat2, Vec2};
use dgl_core::wells::{CuMode, ElasticDensity, WellSet};

#[test]
fn recovery_energy_gap_shrinks_along_the_schedule() {
    let ws = WellSet::single(Mat2::IDENTITY).unwrap();
    let density = ElasticDensity::new(ws, CuMode::Identity);
    let form = density.c_u_form(0);
    let lattice = BurgersLattice::new(Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)).unwrap();
    let domain = Domain::rectangle(-0.5, -0.5, 1.5, 1.5).unwrap();
    let schedule = ScaleSchedule::power_law(&[1e-2, 3e-3, 1e-3], 0.4, 0.25).unwrap();
    let table = build_self_energy_table(
        &lattice,
        &form,
        Mat2::IDENTITY,
        0.0,
        4.0,
        Convention::PsiHalf,
    )
    .unwrap();
    let xi = Vec2::new(1.0, 0.0);
    let in_e = move |p: Vec2| p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0;
    let mu_density = move |p: Vec2| if in_e(p) { xi } else { Vec2::ZERO };
    let grid_n = 192;
    let beta_limit = std::sync::Arc::new(
        LimitStrain::from_measure_with_divergence(&domain, grid_n, &mu_density, 1.0, 0.4).unwrap(),
    );
    let limit = limit_energy(&mu_density, &beta_limit.field, 0.0, &form, &table).unwrap();
    assert!(!limit.infeasible);
    let _phi = relax_phi(&table, xi).unwrap().value;
    let mut gaps = Vec::new();
    for entry in &schedule.entries {
        let (mu, strain, _) = build_recovery(
            (Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0)),
            xi,
            Mat2::IDENTITY,
            &form,
            &table,
            entry,
            &domain,
            beta_limit.clone(),
            grid_n,
            42,
        )
        .unwrap();
        let smooth = |p: Vec2| strain.smooth_part(p);
        let energy = energy_eps(&mu, &strain, &density, entry, &domain, grid_n, Some(&smooth))
            .unwrap();
        gaps.push((energy.total - limit.total).abs());
    }
    println!("gaps along the schedule: {gaps:?}");
    for w in gaps.windows(2) {
        assert!(
            w[1] <= w[0] * (1.0 + 1e-9),
            "trend violated: gaps {gaps:?}"
        );
    }
}
