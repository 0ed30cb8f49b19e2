use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

use super::hazard::{CompetingHazard, HazardDesign, HazardModel, HazardTerm};
use super::{Covariates, EventType, SubjectRecord};

/// Independent baseline covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovariateDistribution {
    pub p_hgb_lt12: f64,
    /// Probabilities of age groups 0, 1, 2.
    pub p_age: [f64; 3],
    pub p_activity_normal: f64,
    pub p_cvd: f64,
}

impl CovariateDistribution {
    /// Every covariate pattern and its probability.
    pub fn support(&self) -> Vec<(Covariates, f64)> {
        let mut out = Vec::new();
        for hgb in 0..2u8 {
            for age in 0..3u8 {
                for act in 0..2u8 {
                    for cvd in 0..2u8 {
                        let p = bern(self.p_hgb_lt12, hgb)
                            * self.p_age[age as usize]
                            * bern(self.p_activity_normal, act)
                            * bern(self.p_cvd, cvd);
                        out.push((
                            Covariates {
                                hgb_lt12: hgb,
                                age_group: age,
                                activity_normal: act,
                                cvd_history: cvd,
                            },
                            p,
                        ));
                    }
                }
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let ps = [self.p_hgb_lt12, self.p_activity_normal, self.p_cvd];
        let age_ok = self.p_age.iter().all(|p| (0.0..=1.0).contains(p))
            && (self.p_age.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if !ps.iter().all(|p| (0.0..=1.0).contains(p)) || !age_ok {
            return Err(Error::InvalidParams(
                "covariate probabilities out of range".into(),
            ));
        }
        Ok(())
    }
}

fn bern(p: f64, v: u8) -> f64 {
    if v == 1 {
        p
    } else {
        1.0 - p
    }
}

/// Discrete-time cohort with known hazards. In each month the competing
/// event is drawn first, then the event of interest among survivors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticCohortSpec {
    pub n: usize,
    pub horizon: u32,
    pub p_treat: f64,
    pub covariates: CovariateDistribution,
    pub event_hazard: HazardModel,
    pub competing_hazard: HazardModel,
}

impl SyntheticCohortSpec {
    /// Trial-shaped cohort: competing-event hazard on the full trial design
    /// and a treatment-dependent hazard for the event of interest.
    pub fn trial_like(n: usize) -> Self {
        use HazardTerm::*;
        let competing = HazardModel::new(
            HazardDesign::trial(),
            vec![-5.1, -0.02, 0.0003, -0.3, 0.7, 1.1, 0.3, 0.6, -0.15, 0.75],
        )
        .expect("matching lengths");
        let event = HazardModel::new(
            HazardDesign {
                terms: vec![Intercept, Month, HgbLt12, ActivityNormal, Treatment],
            },
            vec![-4.6, 0.01, 0.5, -0.4, -0.5],
        )
        .expect("matching lengths");
        Self {
            n,
            horizon: super::DEFAULT_HORIZON,
            p_treat: 0.5,
            covariates: CovariateDistribution {
                p_hgb_lt12: 0.15,
                p_age: [0.15, 0.55, 0.30],
                p_activity_normal: 0.85,
                p_cvd: 0.4,
            },
            event_hazard: event,
            competing_hazard: competing,
        }
    }
}

/// Draw a cohort. Subject `i` uses RNG stream `(seed, i)`.
pub fn simulate_cohort(spec: &SyntheticCohortSpec, seed: u64) -> Result<Vec<SubjectRecord>> {
    spec.covariates.validate()?;
    if spec.horizon == 0 || !(0.0..=1.0).contains(&spec.p_treat) {
        return Err(Error::InvalidParams(
            "horizon must be positive and p_treat a probability".into(),
        ));
    }
    let c = &spec.covariates;
    let mut out = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let mut rng = stream_rng(seed, i as u64);
        let a = (rng.random::<f64>() < spec.p_treat) as u8;
        let age_u: f64 = rng.random();
        let age_group = if age_u < c.p_age[0] {
            0
        } else if age_u < c.p_age[0] + c.p_age[1] {
            1
        } else {
            2
        };
        let covariates = Covariates {
            hgb_lt12: (rng.random::<f64>() < c.p_hgb_lt12) as u8,
            age_group,
            activity_normal: (rng.random::<f64>() < c.p_activity_normal) as u8,
            cvd_history: (rng.random::<f64>() < c.p_cvd) as u8,
        };
        let mut event = (spec.horizon, EventType::None);
        for k in 0..spec.horizon {
            let [ud, uy]: [f64; 2] = rng.random();
            if ud < spec.competing_hazard.hazard(&covariates, k, a) {
                event = (k + 1, EventType::Competing);
                break;
            }
            if uy < spec.event_hazard.hazard(&covariates, k, a) {
                event = (k + 1, EventType::EventOfInterest);
                break;
            }
        }
        out.push(SubjectRecord {
            id: (i + 1).to_string(),
            a,
            covariates,
            event_month: event.0,
            event_type: event.1,
        });
    }
    Ok(out)
}
