use sepdirect_core::dgp::logit;
use sepdirect_core::estimators::NuisanceSpec;
use sepdirect_core::stats::sample_variance;
use sepdirect_core::survival::{
    bootstrap_percentile_ci, contrast_at, expand_to_person_months, fit_pooled_hazard,
    ipcw_risk_curve, run_analysis, sde_risk_curve, simulate_cohort, AnalysisPlan, ArmOrContrast,
    CompetingHazard, CovariateDistribution, Covariates, EventType, HazardDesign, HazardModel,
    HazardTerm, SubjectRecord, SyntheticCohortSpec, ZeroHazard,
};
use sepdirect_core::{Error, Estimand};

fn subject(id: usize, a: u8, month: u32, t: EventType) -> SubjectRecord {
    SubjectRecord {
        id: id.to_string(),
        a,
        covariates: Covariates::default(),
        event_month: month,
        event_type: t,
    }
}

fn hand_cohort() -> Vec<SubjectRecord> {
    vec![
        subject(1, 1, 2, EventType::Competing),
        subject(2, 1, 1, EventType::EventOfInterest),
        subject(3, 1, 3, EventType::None),
        subject(4, 1, 3, EventType::EventOfInterest),
    ]
}

#[test]
fn hand_cohort_ipcw_trace() {
    let pm = expand_to_person_months(&hand_cohort(), 3).unwrap();
    assert_eq!(pm.len(), 9);
    let model = fit_pooled_hazard(
        &pm,
        &HazardDesign::intercept_only(),
        &NuisanceSpec::default(),
    )
    .unwrap();
    assert!((model.coefficients[0] - logit(1.0 / 9.0)).abs() < 1e-9);
    // Month hazards 1/4, 0, 1/2 among the weighted survivors.
    let curve = ipcw_risk_curve(&pm, &model, 1, 3, 1e-3).unwrap();
    let expected = [0.25, 0.25, 0.625];
    for (v, e) in curve.values.iter().zip(expected) {
        assert!((v - e).abs() < 1e-12, "{:?}", curve.values);
    }
    assert!((curve.max_weight - (9.0f64 / 8.0).powi(3)).abs() < 1e-9);
}

#[test]
fn hand_cohort_separable_trace() {
    let pm = expand_to_person_months(&hand_cohort(), 3).unwrap();
    let model = HazardModel::new(
        HazardDesign {
            terms: vec![HazardTerm::Intercept, HazardTerm::Treatment],
        },
        vec![logit(0.1), logit(0.2) - logit(0.1)],
    )
    .unwrap();
    // Weight (0.9 / 0.8)^(k + 1); contributions at months 0 and 2, four subjects.
    let curve = sde_risk_curve(&pm, &model, 1, 0, 3, 1e-3).unwrap();
    let expected = [9.0 / 32.0, 9.0 / 32.0, 1305.0 / 2048.0];
    for (v, e) in curve.values.iter().zip(expected) {
        assert!((v - e).abs() < 1e-12, "{:?}", curve.values);
    }
    let ipcw = ipcw_risk_curve(&pm, &model, 1, 3, 1e-3).unwrap();
    assert!((ipcw.values[2] - 0.625).abs() < 1e-12);
}

fn no_competing_cohort() -> Vec<SubjectRecord> {
    let mut out = Vec::new();
    for i in 0..60usize {
        let a = (i % 2) as u8;
        let t = if i % 3 == 0 {
            EventType::None
        } else {
            EventType::EventOfInterest
        };
        let month = if t == EventType::None {
            10
        } else {
            1 + (i as u32 * 7) % 10
        };
        out.push(subject(i, a, month, t));
    }
    out
}

#[test]
fn zero_hazard_ipcw_is_product_limit() {
    let subjects = no_competing_cohort();
    let pm = expand_to_person_months(&subjects, 10).unwrap();
    for a in 0..2u8 {
        let curve = ipcw_risk_curve(&pm, &ZeroHazard, a, 10, 1e-3).unwrap();
        let arm: Vec<_> = subjects.iter().filter(|s| s.a == a).collect();
        let mut surv = 1.0;
        for k in 1..=10u32 {
            let at_risk = arm.iter().filter(|s| s.event_month >= k).count() as f64;
            let events = arm
                .iter()
                .filter(|s| s.event_month == k && s.event_type == EventType::EventOfInterest)
                .count() as f64;
            if at_risk > 0.0 {
                surv *= 1.0 - events / at_risk;
            }
            assert!((curve.at(k) - (1.0 - surv)).abs() < 1e-12);
        }
    }
}

#[test]
fn no_competing_events_gives_identical_estimands() {
    let plan = AnalysisPlan {
        horizon: 10,
        ..AnalysisPlan::default()
    };
    let curves = run_analysis(&no_competing_cohort(), &plan).unwrap();
    assert!(curves.model.is_none());
    assert_eq!(curves.warnings.len(), 1);
    for a in 0..2u8 {
        for ad in 0..2u8 {
            let s = curves.curve(Estimand::Sde { a_d: ad }, a);
            for (x, y) in s.values.iter().zip(&curves.cde[a as usize].values) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }
}

fn small_spec(n: usize) -> SyntheticCohortSpec {
    use HazardTerm::*;
    SyntheticCohortSpec {
        n,
        horizon: 12,
        p_treat: 0.5,
        covariates: CovariateDistribution {
            p_hgb_lt12: 0.3,
            p_age: [0.3, 0.4, 0.3],
            p_activity_normal: 0.7,
            p_cvd: 0.4,
        },
        event_hazard: HazardModel::new(
            HazardDesign {
                terms: vec![Intercept, Month, HgbLt12, Treatment],
            },
            vec![-3.2, 0.03, 0.6, -0.5],
        )
        .unwrap(),
        competing_hazard: HazardModel::new(
            HazardDesign {
                terms: vec![
                    Intercept,
                    Month,
                    CvdHistory,
                    Age75Plus,
                    Treatment,
                    TreatmentXCvd,
                ],
            },
            vec![-3.0, 0.02, 0.8, 0.7, -0.4, 0.9],
        )
        .unwrap(),
    }
}

#[test]
fn matched_arms_give_raw_cumulative_incidence() {
    let spec = small_spec(3_000);
    let subjects = simulate_cohort(&spec, 1).unwrap();
    let pm = expand_to_person_months(&subjects, 12).unwrap();
    assert_eq!(
        pm.len(),
        subjects
            .iter()
            .map(|s| s.event_month as usize)
            .sum::<usize>()
    );
    for a in 0..2u8 {
        let curve = sde_risk_curve(&pm, &spec.competing_hazard, a, a, 12, 1e-3).unwrap();
        let arm: Vec<_> = subjects.iter().filter(|s| s.a == a).collect();
        for k in 1..=12u32 {
            let raw = arm
                .iter()
                .filter(|s| s.event_type == EventType::EventOfInterest && s.event_month <= k)
                .count() as f64
                / arm.len() as f64;
            assert!((curve.at(k) - raw).abs() < 1e-12);
        }
        assert_eq!(curve.max_weight, 1.0);
    }
}

#[test]
fn constant_hazard_intercept_is_recovered() {
    let spec = SyntheticCohortSpec {
        n: 7_000,
        horizon: 50,
        p_treat: 0.5,
        covariates: small_spec(1).covariates,
        event_hazard: HazardModel::new(HazardDesign::intercept_only(), vec![-4.0]).unwrap(),
        competing_hazard: HazardModel::new(HazardDesign::intercept_only(), vec![-3.0]).unwrap(),
    };
    let subjects = simulate_cohort(&spec, 2).unwrap();
    let pm = expand_to_person_months(&subjects, 50).unwrap();
    assert!(pm.len() > 90_000, "{} person-months", pm.len());
    let m = fit_pooled_hazard(
        &pm,
        &HazardDesign::intercept_only(),
        &NuisanceSpec::default(),
    )
    .unwrap();
    let (b, se) = (m.coefficients[0], m.std_errors[0]);
    assert!((b + 3.0).abs() < 3.0 * se, "{b} +- {se}");
}

/// Discrete-time risks from the true hazards, summed over covariate patterns.
fn true_risks(spec: &SyntheticCohortSpec, months: u32) -> ([Vec<f64>; 2], [[Vec<f64>; 2]; 2]) {
    let k = months as usize;
    let mut cde = [vec![0.0; k], vec![0.0; k]];
    let mut sde = [[vec![0.0; k], vec![0.0; k]], [vec![0.0; k], vec![0.0; k]]];
    for (c, p) in spec.covariates.support() {
        for a in 0..2u8 {
            let mut surv = 1.0;
            for j in 0..months {
                surv *= 1.0 - spec.event_hazard.hazard(&c, j, a);
                cde[a as usize][j as usize] += p * (1.0 - surv);
            }
        }
        for ad in 0..2u8 {
            for ay in 0..2u8 {
                let (mut surv, mut risk) = (1.0, 0.0);
                for j in 0..months {
                    let hd = spec.competing_hazard.hazard(&c, j, ad);
                    let hy = spec.event_hazard.hazard(&c, j, ay);
                    risk += surv * (1.0 - hd) * hy;
                    surv *= (1.0 - hd) * (1.0 - hy);
                    sde[ad as usize][ay as usize][j as usize] += p * risk;
                }
            }
        }
    }
    (cde, sde)
}

fn curves_with_truth(spec: &SyntheticCohortSpec, seed: u64) -> Vec<Vec<f64>> {
    let subjects = simulate_cohort(spec, seed).unwrap();
    let pm = expand_to_person_months(&subjects, spec.horizon).unwrap();
    let h = &spec.competing_hazard;
    vec![
        ipcw_risk_curve(&pm, h, 0, spec.horizon, 1e-3)
            .unwrap()
            .values,
        ipcw_risk_curve(&pm, h, 1, spec.horizon, 1e-3)
            .unwrap()
            .values,
        sde_risk_curve(&pm, h, 1, 0, spec.horizon, 1e-3)
            .unwrap()
            .values,
        sde_risk_curve(&pm, h, 0, 1, spec.horizon, 1e-3)
            .unwrap()
            .values,
    ]
}

#[test]
fn true_hazard_curves_converge_to_discrete_time_targets() {
    let big = small_spec(100_000);
    let estimate = curves_with_truth(&big, 10);
    let small = small_spec(10_000);
    let reps: Vec<Vec<Vec<f64>>> = (0..20)
        .map(|r| curves_with_truth(&small, 100 + r))
        .collect();
    let (cde, sde) = true_risks(&big, big.horizon);
    let truth = [&cde[0], &cde[1], &sde[0][1], &sde[1][0]];
    for (c, t) in truth.iter().enumerate() {
        for month in [3usize, 6, 12] {
            let spread: Vec<f64> = reps.iter().map(|r| r[c][month - 1]).collect();
            let se = (sample_variance(&spread) / 10.0).sqrt();
            let diff = estimate[c][month - 1] - t[month - 1];
            assert!(
                diff.abs() < 3.0 * se,
                "curve {c} month {month}: diff {diff:e}, se {se:e}"
            );
        }
    }
}

#[test]
fn curves_are_monotone() {
    let subjects = simulate_cohort(&SyntheticCohortSpec::trial_like(800), 3).unwrap();
    let curves = run_analysis(&subjects, &AnalysisPlan::default()).unwrap();
    for c in curves.cde.iter().chain(curves.sde.iter().flatten()) {
        assert!(c.values.windows(2).all(|w| w[1] >= w[0]));
        assert!(c.values[0] >= 0.0);
    }
    for c in &curves.cde {
        assert!(c.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn contrasts_select_curve_differences() {
    let subjects = simulate_cohort(&SyntheticCohortSpec::trial_like(600), 4).unwrap();
    let curves = run_analysis(&subjects, &AnalysisPlan::default()).unwrap();
    let c = contrast_at(&[50], &curves, None).unwrap();
    assert_eq!(c.len(), 3);
    let last = curves.cde[1].values[49] - curves.cde[0].values[49];
    assert_eq!(c[0].value, last);
    assert!(contrast_at(&[51], &curves, None).is_err());

    // Arms that are exact copies, with a treatment-free hazard, contrast to 0.
    let arm0: Vec<SubjectRecord> = subjects.iter().filter(|s| s.a == 0).cloned().collect();
    let mut mirrored = arm0.clone();
    mirrored.extend(arm0.iter().map(|s| SubjectRecord { a: 1, ..s.clone() }));
    let plan = AnalysisPlan {
        design: HazardDesign {
            terms: vec![
                HazardTerm::Intercept,
                HazardTerm::Month,
                HazardTerm::CvdHistory,
            ],
        },
        ..AnalysisPlan::default()
    };
    let curves = run_analysis(&mirrored, &plan).unwrap();
    for c in contrast_at(&[12, 24, 36, 48], &curves, None).unwrap() {
        assert!(c.value.abs() < 1e-12);
    }
}

#[test]
fn bootstrap_is_seeded_and_worker_independent() {
    let subjects = simulate_cohort(&SyntheticCohortSpec::trial_like(300), 5).unwrap();
    let plan = AnalysisPlan::default();
    let a = bootstrap_percentile_ci(&subjects, &plan, 40, 9, 1).unwrap();
    let b = bootstrap_percentile_ci(&subjects, &plan, 40, 9, 3).unwrap();
    assert_eq!(a, b);
    let c = bootstrap_percentile_ci(&subjects, &plan, 40, 10, 1).unwrap();
    assert_ne!(a, c);
    let (lo, hi) = a.interval(Estimand::Cde, ArmOrContrast::Contrast, 24);
    assert!(lo <= hi);
    assert!(bootstrap_percentile_ci(&subjects, &plan, 1, 9, 1).is_err());
}

#[test]
fn identical_subjects_have_zero_width_intervals() {
    let mut subjects = Vec::new();
    for i in 0..200 {
        subjects.push(subject(
            i,
            (i % 2) as u8,
            if i % 2 == 0 { 5 } else { 8 },
            EventType::EventOfInterest,
        ));
    }
    let plan = AnalysisPlan {
        horizon: 10,
        ..AnalysisPlan::default()
    };
    let ci = bootstrap_percentile_ci(&subjects, &plan, 1000, 1, 0).unwrap();
    for e in [
        Estimand::Cde,
        Estimand::Sde { a_d: 0 },
        Estimand::Sde { a_d: 1 },
    ] {
        for m in 1..=10 {
            let (lo, hi) = ci.interval(e, ArmOrContrast::Contrast, m);
            assert_eq!(lo, hi);
        }
    }
}

#[test]
fn failing_replicates_abort_the_bootstrap() {
    // Competing events only with low hemoglobin: the hazard fit separates.
    let mut subjects = Vec::new();
    for i in 0..40usize {
        let mut s = subject(i, (i % 2) as u8, 10, EventType::None);
        if i % 4 < 2 {
            s.covariates.hgb_lt12 = 1;
            s.event_month = 1;
            s.event_type = EventType::Competing;
        }
        subjects.push(s);
    }
    let plan = AnalysisPlan {
        horizon: 10,
        design: HazardDesign {
            terms: vec![HazardTerm::Intercept, HazardTerm::HgbLt12],
        },
        ..AnalysisPlan::default()
    };
    let err = bootstrap_percentile_ci(&subjects, &plan, 20, 1, 1).unwrap_err();
    assert!(matches!(err, Error::BootstrapFailures { .. }), "{err:?}");
}
