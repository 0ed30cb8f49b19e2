use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dgp::expit;
use crate::error::{Error, Result};
use crate::estimators::{fit_logistic_mle, NuisanceSpec};

use super::{Covariates, PersonMonth};

/// Regressor of the pooled logistic hazard for the competing event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardTerm {
    Intercept,
    Month,
    MonthSq,
    ActivityNormal,
    Age60To75,
    Age75Plus,
    CvdHistory,
    HgbLt12,
    Treatment,
    TreatmentXCvd,
}

impl HazardTerm {
    pub fn name(self) -> &'static str {
        match self {
            HazardTerm::Intercept => "intercept",
            HazardTerm::Month => "month",
            HazardTerm::MonthSq => "month_sq",
            HazardTerm::ActivityNormal => "activity_normal",
            HazardTerm::Age60To75 => "age_60_75",
            HazardTerm::Age75Plus => "age_ge_75",
            HazardTerm::CvdHistory => "cvd_history",
            HazardTerm::HgbLt12 => "hgb_lt12",
            HazardTerm::Treatment => "treatment",
            HazardTerm::TreatmentXCvd => "treatment_x_cvd",
        }
    }

    /// Raw-scale regressor value at month index `month` under treatment `a`.
    pub fn value(self, c: &Covariates, month: u32, a: u8) -> f64 {
        let m = month as f64;
        match self {
            HazardTerm::Intercept => 1.0,
            HazardTerm::Month => m,
            HazardTerm::MonthSq => m * m,
            HazardTerm::ActivityNormal => c.activity_normal as f64,
            HazardTerm::Age60To75 => (c.age_group == 1) as u8 as f64,
            HazardTerm::Age75Plus => (c.age_group == 2) as u8 as f64,
            HazardTerm::CvdHistory => c.cvd_history as f64,
            HazardTerm::HgbLt12 => c.hgb_lt12 as f64,
            HazardTerm::Treatment => a as f64,
            HazardTerm::TreatmentXCvd => (a * c.cvd_history) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HazardDesign {
    pub terms: Vec<HazardTerm>,
}

impl HazardDesign {
    /// Quadratic in month, the four baseline covariates, treatment and a
    /// treatment by cardiovascular-history interaction.
    pub fn trial() -> Self {
        use HazardTerm::*;
        Self {
            terms: vec![
                Intercept,
                Month,
                MonthSq,
                ActivityNormal,
                Age60To75,
                Age75Plus,
                CvdHistory,
                HgbLt12,
                Treatment,
                TreatmentXCvd,
            ],
        }
    }

    pub fn intercept_only() -> Self {
        Self {
            terms: vec![HazardTerm::Intercept],
        }
    }

    fn position(&self, term: HazardTerm) -> Option<usize> {
        self.terms.iter().position(|&t| t == term)
    }
}

/// Anything that gives `Pr(D_{k+1} = 1 | at risk through k, A = a, covariates)`.
pub trait CompetingHazard: Sync {
    fn hazard(&self, covariates: &Covariates, month: u32, a: u8) -> f64;
}

/// Hazard that is identically zero, for cohorts without competing events.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroHazard;

impl CompetingHazard for ZeroHazard {
    fn hazard(&self, _: &Covariates, _: u32, _: u8) -> f64 {
        0.0
    }
}

/// Pooled logistic hazard with coefficients on the raw month scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HazardModel {
    pub design: HazardDesign,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub iterations: usize,
}

impl HazardModel {
    /// A model with known coefficients, e.g. a simulation truth.
    pub fn new(design: HazardDesign, coefficients: Vec<f64>) -> Result<Self> {
        if design.terms.len() != coefficients.len() {
            return Err(Error::InvalidParams(format!(
                "{} terms but {} coefficients",
                design.terms.len(),
                coefficients.len()
            )));
        }
        let std_errors = vec![f64::NAN; coefficients.len()];
        Ok(Self {
            design,
            coefficients,
            std_errors,
            iterations: 0,
        })
    }

    pub fn linear_predictor(&self, c: &Covariates, month: u32, a: u8) -> f64 {
        self.design
            .terms
            .iter()
            .zip(&self.coefficients)
            .map(|(t, b)| b * t.value(c, month, a))
            .sum()
    }

    pub fn coefficient(&self, term: HazardTerm) -> Option<f64> {
        self.design.position(term).map(|i| self.coefficients[i])
    }

    /// CSV `term,estimate,std_error` in design order.
    pub fn write_coefficients_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["term", "estimate", "std_error"])?;
        for ((t, b), se) in self
            .design
            .terms
            .iter()
            .zip(&self.coefficients)
            .zip(&self.std_errors)
        {
            w.write_record([t.name().to_string(), b.to_string(), se.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl CompetingHazard for HazardModel {
    fn hazard(&self, c: &Covariates, month: u32, a: u8) -> f64 {
        expit(self.linear_predictor(c, month, a))
    }
}

/// Maximum-likelihood fit over person-months with outcome `d_next`.
///
/// Month is centered and scaled before fitting when the design has both an
/// intercept and a linear month term; the reported coefficients and
/// standard errors are mapped back to the raw `(month, month^2)` scale.
pub fn fit_pooled_hazard(
    pm: &[PersonMonth],
    design: &HazardDesign,
    spec: &NuisanceSpec,
) -> Result<HazardModel> {
    if !pm.iter().any(|r| r.d_next == 1) {
        return Err(Error::DegenerateOutcome(
            "no competing events among the person-months".into(),
        ));
    }
    let i_int = design.position(HazardTerm::Intercept);
    let i_m = design.position(HazardTerm::Month);
    let i_q = design.position(HazardTerm::MonthSq);
    let n = pm.len() as f64;
    let (center, scale) = if i_int.is_some() && i_m.is_some() {
        let mean = pm.iter().map(|r| r.month as f64).sum::<f64>() / n;
        let var = pm
            .iter()
            .map(|r| (r.month as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
    } else {
        (0.0, 1.0)
    };
    let rows: Vec<Vec<f64>> = pm
        .iter()
        .map(|r| {
            let m = (r.month as f64 - center) / scale;
            design
                .terms
                .iter()
                .map(|t| match t {
                    HazardTerm::Month => m,
                    HazardTerm::MonthSq => m * m,
                    other => other.value(&r.covariates, r.month, r.a),
                })
                .collect()
        })
        .collect();
    let outcome: Vec<u8> = pm.iter().map(|r| r.d_next).collect();
    let fit = fit_logistic_mle(&rows, &outcome, spec)?;

    // raw = T * fitted, T identity except for the month rows.
    let p = design.terms.len();
    let mut t = vec![vec![0.0; p]; p];
    for (j, row) in t.iter_mut().enumerate() {
        row[j] = 1.0;
    }
    if let Some(m) = i_m {
        t[m][m] = 1.0 / scale;
        if let Some(q) = i_q {
            t[m][q] = -2.0 * center / (scale * scale);
        }
    }
    if let Some(q) = i_q {
        t[q][q] = 1.0 / (scale * scale);
    }
    if let Some(i) = i_int {
        if let Some(m) = i_m {
            t[i][m] = -center / scale;
        }
        if let Some(q) = i_q {
            t[i][q] = center * center / (scale * scale);
        }
    }
    let coefficients: Vec<f64> = (0..p)
        .map(|j| (0..p).map(|k| t[j][k] * fit.coefficients[k]).sum())
        .collect();
    let std_errors: Vec<f64> = (0..p)
        .map(|j| {
            let mut v = 0.0;
            for k in 0..p {
                for l in 0..p {
                    v += t[j][k] * fit.covariance[k][l] * t[j][l];
                }
            }
            v.max(0.0).sqrt()
        })
        .collect();
    Ok(HazardModel {
        design: design.clone(),
        coefficients,
        std_errors,
        iterations: fit.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(spec: &[(u32, u8)]) -> Vec<PersonMonth> {
        spec.iter()
            .enumerate()
            .map(|(i, &(month, d))| PersonMonth {
                subject: i,
                month,
                a: (i % 2) as u8,
                covariates: Covariates::default(),
                d_next: d,
                y_next: 0,
            })
            .collect()
    }

    #[test]
    fn no_competing_events_is_an_error() {
        let pm = rows(&[(0, 0), (1, 0)]);
        assert!(fit_pooled_hazard(
            &pm,
            &HazardDesign::intercept_only(),
            &NuisanceSpec::default()
        )
        .is_err());
    }

    #[test]
    fn raw_scale_matches_unscaled_fit() {
        let mut spec = Vec::new();
        for m in 0..12u32 {
            for j in 0..20u32 {
                spec.push((m, ((j * 7 + m * 3) % 20 < 2 + m / 3) as u8));
            }
        }
        let pm = rows(&spec);
        let design = HazardDesign {
            terms: vec![
                HazardTerm::Intercept,
                HazardTerm::Month,
                HazardTerm::MonthSq,
            ],
        };
        let model = fit_pooled_hazard(&pm, &design, &NuisanceSpec::default()).unwrap();
        let raw: Vec<Vec<f64>> = pm
            .iter()
            .map(|r| {
                let m = r.month as f64;
                vec![1.0, m, m * m]
            })
            .collect();
        let y: Vec<u8> = pm.iter().map(|r| r.d_next).collect();
        let direct = fit_logistic_mle(&raw, &y, &NuisanceSpec::default()).unwrap();
        for j in 0..3 {
            assert!((model.coefficients[j] - direct.coefficients[j]).abs() < 1e-8);
            assert!(
                (model.std_errors[j] - direct.std_errors[j]).abs()
                    < 1e-6 * direct.std_errors[j].max(1e-3)
            );
        }
    }
}
