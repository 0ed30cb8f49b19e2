use sepdirect_core::dgp::{scenario_catalog, DgpParams};
use sepdirect_core::oracle::error_decomposition;
use sepdirect_core::simharness::{
    classify_quadrants, run_error_sweep, run_error_sweep_streaming, run_variance_study,
    write_sweep_csv_header, write_sweep_row, write_variance_csv, SweepAccumulator, SweepGrid,
    SweepPoint, VarianceStudyConfig,
};

fn small_study(id: &str, jobs: usize) -> VarianceStudyConfig {
    VarianceStudyConfig {
        n: 4_000,
        reps: 60,
        jobs,
        ..VarianceStudyConfig::desk(id, 11)
    }
}

#[test]
fn variance_study_is_reproducible_across_workers() {
    let a = run_variance_study(&small_study("s2", 1)).unwrap();
    let b = run_variance_study(&small_study("s2", 4)).unwrap();
    assert_eq!(a, b);
    let c = run_variance_study(&VarianceStudyConfig {
        seed: 12,
        ..small_study("s2", 1)
    })
    .unwrap();
    assert_ne!(a.var_cde, c.var_cde);
    assert_eq!(a.reps, 60);
    assert!(a.var_sde > 0.0 && a.var_cde > 0.0);
    let s = scenario_catalog("s2").unwrap();
    let o = error_decomposition(&s.params);
    assert_eq!(a.target_cde, o.cde_obs);
    assert_eq!(a.target_sde, o.sde_obs[0]);
}

#[test]
fn fixed_replicate_seed_collapses_variance() {
    let r = run_variance_study(&VarianceStudyConfig {
        fixed_replicate_seed: true,
        reps: 5,
        ..small_study("s1", 1)
    })
    .unwrap();
    assert_eq!(r.var_cde, 0.0);
    assert_eq!(r.var_sde, 0.0);
}

#[test]
fn unknown_scenario_is_rejected() {
    assert!(run_variance_study(&small_study("s9", 1)).is_err());
}

#[test]
fn variance_csv_has_one_row_per_report() {
    let r = run_variance_study(&small_study("s1", 1)).unwrap();
    let mut buf = Vec::new();
    write_variance_csv(&mut buf, &[r.clone(), r]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("scenario,n,reps,a_d,var_sde,var_cde,ratio_cde_over_sde"));
    assert!(lines[1].starts_with("s1,4000,60,0,"));
}

#[test]
fn grid_index_decodes_last_coordinate_fastest() {
    let g = SweepGrid::standard(-1.0);
    assert_eq!(g.size(), 4u128.pow(12));
    let p = g.params_at(0, 0.5);
    assert_eq!(p.theta, [-1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0]);
    let p = g.params_at(1, 0.5);
    assert_eq!(p.beta[6], -0.5);
    assert_eq!(p.beta[5], -1.0);
    let p = g.params_at(4, 0.0);
    assert_eq!(p.beta[5], -0.5);
    assert_eq!(p.beta[6], -1.0);
    let p = g.params_at(4u64.pow(12) - 1, 0.5);
    assert_eq!(p.theta[1..], [1.0; 6]);
    assert_eq!(p.beta[1..], [1.0; 6]);
}

#[test]
fn sweep_is_reproducible_and_covers_both_panels() {
    let g = SweepGrid::standard(-1.0);
    let a = run_error_sweep(&g, Some((3_000, 5)), 1).unwrap();
    let b = run_error_sweep(&g, Some((3_000, 5)), 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 6_000);
    let c = run_error_sweep(&g, Some((3_000, 6)), 1).unwrap();
    assert_ne!(a, c);

    let summary = classify_quadrants(&a).unwrap();
    assert_eq!(summary.points, 6_000);
    let total: u64 = summary.panels.iter().map(|p| p.points).sum();
    assert_eq!(total, 6_000);

    let mut acc = SweepAccumulator::default();
    run_error_sweep_streaming(&g, Some((3_000, 5)), 1, |p| {
        acc.add(p);
        Ok(())
    })
    .unwrap();
    assert_eq!(acc.finish(), summary);
}

#[test]
fn sweep_claims_on_a_subsample() {
    let g = SweepGrid::standard(-1.0);
    let points = run_error_sweep(&g, Some((5_000, 21)), 1).unwrap();
    let summary = classify_quadrants(&points).unwrap();
    let with_u = summary.panel(0.5, false).unwrap();
    for ad in 0..2 {
        assert!(with_u.cde_vs_sde[ad].disagreements() > 0);
    }
    assert!(with_u.ni_cde_dominates().iter().all(|&d| d));
    for rare in [false, true] {
        if let Some(p) = summary.panel(0.0, rare) {
            assert_eq!(p.max_abs_ni_error_cde, 0.0);
            assert_eq!(p.max_abs_ni_error_sde, [0.0; 2]);
            assert_eq!(p.cde_vs_target.pos_neg + p.cde_vs_target.neg_pos, 0);
        }
    }
    for p in &points {
        if p.params.p_u == 0.0 {
            assert!(!p.u_dependence);
        }
    }
}

#[test]
fn rare_tag_follows_competing_probabilities() {
    let common = DgpParams::new(
        [-1.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0],
        [-9.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
        0.5,
        0.5,
    );
    assert!(SweepPoint::new(0, common).rare);
    let p = DgpParams::new(common.theta, [-1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0], 0.5, 0.5);
    let sp = SweepPoint::new(0, p);
    assert!(!sp.rare);
    assert!(sp.u_dependence);
}

#[test]
fn empty_sweep_is_an_error() {
    assert!(classify_quadrants(&[]).is_err());
    let mut g = SweepGrid::standard(-1.0);
    g.levels.pop();
    assert!(g.validate().is_err());
}

#[test]
fn sweep_rows_have_fixed_columns() {
    let g = SweepGrid::standard(-6.0);
    let points = run_error_sweep(&g, Some((10, 1)), 1).unwrap();
    let mut w = csv::Writer::from_writer(Vec::new());
    write_sweep_csv_header(&mut w).unwrap();
    for p in &points {
        write_sweep_row(&mut w, p).unwrap();
    }
    let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 21);
    assert_eq!(rows[0][..4], ["grid_index", "p_u", "rare", "u_dependence"]);
    assert!(rows.iter().all(|r| r.len() == rows[0].len()));
    assert_eq!(rows[0].len(), 4 + 7 + 7 + 1 + 23);
}
