use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{NuisanceSpec, POSITIVITY_HARD_FLOOR};
use crate::oracle::DEFAULT_POSITIVITY_EPS;
use crate::Estimand;

use super::bootstrap::BootstrapResult;
use super::hazard::{fit_pooled_hazard, CompetingHazard, HazardDesign, HazardModel, ZeroHazard};
use super::{expand_to_person_months, PersonMonth, SubjectRecord, DEFAULT_HORIZON};

/// Estimated risk of the event of interest by month `1..=horizon` in one arm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskCurve {
    pub estimand: Estimand,
    /// Treatment arm; `a_y` for separable-effect curves.
    pub arm: u8,
    /// `values[k - 1]` is the risk by month `k`.
    pub values: Vec<f64>,
    /// Largest weight over contributing person-months.
    pub max_weight: f64,
    pub warnings: Vec<String>,
}

impl RiskCurve {
    pub fn at(&self, month: u32) -> f64 {
        self.values[month as usize - 1]
    }
}

/// Hazards for each person-month under `A = 0` and `A = 1`.
fn hazard_table(pm: &[PersonMonth], model: &dyn CompetingHazard) -> Vec<[f64; 2]> {
    pm.iter()
        .map(|r| {
            [
                model.hazard(&r.covariates, r.month, 0),
                model.hazard(&r.covariates, r.month, 1),
            ]
        })
        .collect()
}

fn check_layout(pm: &[PersonMonth]) -> Result<()> {
    let mut prev: Option<&PersonMonth> = None;
    for (i, r) in pm.iter().enumerate() {
        let ok = match prev {
            Some(p) if p.subject == r.subject => {
                r.month == p.month + 1 && p.d_next == 0 && p.y_next == 0
            }
            _ => r.month == 0,
        };
        if !ok {
            return Err(Error::InvalidParams(format!(
                "person-month row {} breaks the per-subject month sequence",
                i + 1
            )));
        }
        prev = Some(r);
    }
    Ok(())
}

fn check_month(pm: &[PersonMonth], horizon: u32) -> Result<()> {
    if let Some(r) = pm.iter().find(|r| r.month >= horizon) {
        return Err(Error::InvalidParams(format!(
            "person-month at month index {} is beyond the horizon {horizon}",
            r.month
        )));
    }
    Ok(())
}

fn near_violation_warning(count: usize, eps: f64) -> Vec<String> {
    if count == 0 {
        Vec::new()
    } else {
        vec![format!(
            "near positivity violation: {count} person-months with cumulative competing-event survival below {eps:e}"
        )]
    }
}

fn ipcw_from_table(
    pm: &[PersonMonth],
    haz: &[[f64; 2]],
    a: u8,
    horizon: u32,
    eps: f64,
) -> Result<RiskCurve> {
    let k_max = horizon as usize;
    let mut num = vec![0.0; k_max];
    let mut den = vec![0.0; k_max];
    let mut cum = 1.0;
    let mut current = usize::MAX;
    let mut max_weight: f64 = 0.0;
    let mut near = 0usize;
    let mut any = false;
    for (r, h) in pm.iter().zip(haz) {
        if r.a != a {
            continue;
        }
        any = true;
        if r.subject != current {
            current = r.subject;
            cum = 1.0;
        }
        cum *= 1.0 - h[a as usize];
        if cum < POSITIVITY_HARD_FLOOR {
            return Err(Error::Positivity(format!(
                "cumulative competing-event survival {cum:e} at month index {} in arm {a}",
                r.month
            )));
        }
        if cum < eps {
            near += 1;
        }
        if r.d_next == 0 {
            let w = 1.0 / cum;
            max_weight = max_weight.max(w);
            den[r.month as usize] += w;
            num[r.month as usize] += r.y_next as f64 * w;
        }
    }
    if !any {
        return Err(Error::InsufficientData(format!("no subjects in arm {a}")));
    }
    let mut values = Vec::with_capacity(k_max);
    let mut risk = 0.0;
    let mut surv = 1.0;
    for k in 0..k_max {
        let h = if den[k] > 0.0 { num[k] / den[k] } else { 0.0 };
        risk += h * surv;
        surv *= 1.0 - h;
        values.push(risk);
    }
    Ok(RiskCurve {
        estimand: Estimand::Cde,
        arm: a,
        values,
        max_weight,
        warnings: near_violation_warning(near, eps),
    })
}

fn sde_from_table(
    pm: &[PersonMonth],
    haz: &[[f64; 2]],
    a_y: u8,
    a_d: u8,
    horizon: u32,
    eps: f64,
) -> Result<RiskCurve> {
    let k_max = horizon as usize;
    let mut inc = vec![0.0; k_max];
    let mut cum_y = 1.0;
    let mut cum_d = 1.0;
    let mut current = usize::MAX;
    let mut n_arm = 0usize;
    let mut max_weight: f64 = 0.0;
    let mut near = 0usize;
    for (r, h) in pm.iter().zip(haz) {
        if r.a != a_y {
            continue;
        }
        if r.subject != current {
            current = r.subject;
            cum_y = 1.0;
            cum_d = 1.0;
            n_arm += 1;
        }
        cum_y *= 1.0 - h[a_y as usize];
        cum_d *= 1.0 - h[a_d as usize];
        if a_y != a_d && cum_d >= eps {
            if cum_y < POSITIVITY_HARD_FLOOR {
                return Err(Error::Positivity(format!(
                    "cumulative competing-event survival {cum_y:e} at month index {} in arm {a_y}",
                    r.month
                )));
            }
            if cum_y < eps {
                near += 1;
            }
        }
        if r.d_next == 0 {
            let w = if a_y == a_d { 1.0 } else { cum_d / cum_y };
            max_weight = max_weight.max(w);
            inc[r.month as usize] += r.y_next as f64 * w;
        }
    }
    if n_arm == 0 {
        return Err(Error::InsufficientData(format!("no subjects in arm {a_y}")));
    }
    let mut warnings = near_violation_warning(near, eps);
    let mut values = Vec::with_capacity(k_max);
    let mut risk = 0.0;
    for v in inc {
        risk += v / n_arm as f64;
        values.push(risk);
    }
    if risk > 1.0 {
        warnings.push(format!("separable-effect risk {risk} exceeds 1"));
    }
    Ok(RiskCurve {
        estimand: Estimand::Sde { a_d },
        arm: a_y,
        values,
        max_weight,
        warnings,
    })
}

/// Weighted product-limit risk for arm `a`, competing events treated as
/// censoring. Rows must be grouped by subject in month order, as produced
/// by [`expand_to_person_months`].
pub fn ipcw_risk_curve(
    pm: &[PersonMonth],
    model: &dyn CompetingHazard,
    a: u8,
    horizon: u32,
    eps: f64,
) -> Result<RiskCurve> {
    check_layout(pm)?;
    check_month(pm, horizon)?;
    ipcw_from_table(pm, &hazard_table(pm, model), a, horizon, eps)
}

/// Weighted cumulative incidence in arm `a_y` with the competing-event
/// hazard of arm `a_d`.
pub fn sde_risk_curve(
    pm: &[PersonMonth],
    model: &dyn CompetingHazard,
    a_y: u8,
    a_d: u8,
    horizon: u32,
    eps: f64,
) -> Result<RiskCurve> {
    check_layout(pm)?;
    check_month(pm, horizon)?;
    sde_from_table(pm, &hazard_table(pm, model), a_y, a_d, horizon, eps)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisPlan {
    pub horizon: u32,
    pub design: HazardDesign,
    pub spec: NuisanceSpec,
    pub positivity_eps: f64,
}

impl Default for AnalysisPlan {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            design: HazardDesign::trial(),
            spec: NuisanceSpec::default(),
            positivity_eps: DEFAULT_POSITIVITY_EPS,
        }
    }
}

/// Where a value sits in the output: one arm's risk or the arm-1 minus
/// arm-0 contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ArmOrContrast {
    Arm(u8),
    Contrast,
}

impl ArmOrContrast {
    pub fn label(self) -> String {
        match self {
            ArmOrContrast::Arm(a) => a.to_string(),
            ArmOrContrast::Contrast => "diff".into(),
        }
    }
}

pub(crate) const ESTIMANDS: [Estimand; 3] = [
    Estimand::Cde,
    Estimand::Sde { a_d: 0 },
    Estimand::Sde { a_d: 1 },
];
pub(crate) const SLOTS: [ArmOrContrast; 3] = [
    ArmOrContrast::Arm(0),
    ArmOrContrast::Arm(1),
    ArmOrContrast::Contrast,
];

/// All curves of the trial analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisCurves {
    pub horizon: u32,
    /// `None` when the cohort had no competing events and a zero hazard was used.
    pub model: Option<HazardModel>,
    pub cde: [RiskCurve; 2],
    /// `sde[a_d][a_y]`.
    pub sde: [[RiskCurve; 2]; 2],
    pub warnings: Vec<String>,
}

impl AnalysisCurves {
    pub fn curve(&self, estimand: Estimand, arm: u8) -> &RiskCurve {
        match estimand {
            Estimand::Cde => &self.cde[arm as usize],
            Estimand::Sde { a_d } => &self.sde[a_d as usize][arm as usize],
        }
    }

    pub fn value(&self, estimand: Estimand, slot: ArmOrContrast, month: u32) -> f64 {
        match slot {
            ArmOrContrast::Arm(a) => self.curve(estimand, a).at(month),
            ArmOrContrast::Contrast => {
                self.curve(estimand, 1).at(month) - self.curve(estimand, 0).at(month)
            }
        }
    }

    /// Values in the order estimand, then arm 0 / arm 1 / contrast, then month.
    pub(crate) fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(9 * self.horizon as usize);
        for e in ESTIMANDS {
            for s in SLOTS {
                for m in 1..=self.horizon {
                    out.push(self.value(e, s, m));
                }
            }
        }
        out
    }

    /// Largest weight per estimand across both arms.
    pub fn max_weight(&self, estimand: Estimand) -> f64 {
        self.curve(estimand, 0)
            .max_weight
            .max(self.curve(estimand, 1).max_weight)
    }
}

pub(crate) fn flat_index(
    horizon: u32,
    estimand: Estimand,
    slot: ArmOrContrast,
    month: u32,
) -> usize {
    let e = ESTIMANDS
        .iter()
        .position(|&x| x == estimand)
        .expect("known estimand");
    let s = SLOTS.iter().position(|&x| x == slot).expect("known slot");
    (e * 3 + s) * horizon as usize + month as usize - 1
}

/// Expand, fit the competing-event hazard and compute every curve. A cohort
/// without competing events uses a zero hazard, so all weights are 1.
pub fn run_analysis(subjects: &[SubjectRecord], plan: &AnalysisPlan) -> Result<AnalysisCurves> {
    let pm = expand_to_person_months(subjects, plan.horizon)?;
    let mut warnings = Vec::new();
    let model = if pm.iter().any(|r| r.d_next == 1) {
        Some(fit_pooled_hazard(&pm, &plan.design, &plan.spec)?)
    } else {
        warnings.push("no competing events observed; using a zero competing-event hazard".into());
        None
    };
    let haz = match &model {
        Some(m) => hazard_table(&pm, m),
        None => hazard_table(&pm, &ZeroHazard),
    };
    let (h, eps) = (plan.horizon, plan.positivity_eps);
    let cde = [
        ipcw_from_table(&pm, &haz, 0, h, eps)?,
        ipcw_from_table(&pm, &haz, 1, h, eps)?,
    ];
    let sde = [
        [
            sde_from_table(&pm, &haz, 0, 0, h, eps)?,
            sde_from_table(&pm, &haz, 1, 0, h, eps)?,
        ],
        [
            sde_from_table(&pm, &haz, 0, 1, h, eps)?,
            sde_from_table(&pm, &haz, 1, 1, h, eps)?,
        ],
    ];
    for c in cde.iter().chain(sde.iter().flatten()) {
        for w in &c.warnings {
            warnings.push(format!("{} arm {}: {w}", c.estimand, c.arm));
        }
    }
    Ok(AnalysisCurves {
        horizon: h,
        model,
        cde,
        sde,
        warnings,
    })
}

/// Arm-1 minus arm-0 risk at one month, with an optional percentile interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Contrast {
    pub estimand: Estimand,
    pub month: u32,
    pub value: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

pub fn contrast_at(
    times: &[u32],
    curves: &AnalysisCurves,
    ci: Option<&BootstrapResult>,
) -> Result<Vec<Contrast>> {
    let mut out = Vec::new();
    for e in ESTIMANDS {
        for &m in times {
            if m < 1 || m > curves.horizon {
                return Err(Error::InvalidParams(format!(
                    "month {m} is outside 1..={}",
                    curves.horizon
                )));
            }
            let (lo, hi) = match ci {
                Some(b) => {
                    let (lo, hi) = b.interval(e, ArmOrContrast::Contrast, m);
                    (Some(lo), Some(hi))
                }
                None => (None, None),
            };
            out.push(Contrast {
                estimand: e,
                month: m,
                value: curves.value(e, ArmOrContrast::Contrast, m),
                lo,
                hi,
            });
        }
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV `month,estimand,arm_or_contrast,value,lo,hi` for every month,
/// estimand, arm and contrast. Interval columns are empty without `ci`.
pub fn write_curves_csv<W: Write>(
    writer: W,
    curves: &AnalysisCurves,
    ci: Option<&BootstrapResult>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["month", "estimand", "arm_or_contrast", "value", "lo", "hi"])?;
    for e in ESTIMANDS {
        for s in SLOTS {
            for m in 1..=curves.horizon {
                let (lo, hi) = match ci {
                    Some(b) => {
                        let (lo, hi) = b.interval(e, s, m);
                        (Some(lo), Some(hi))
                    }
                    None => (None, None),
                };
                w.write_record([
                    m.to_string(),
                    e.label(),
                    s.label(),
                    curves.value(e, s, m).to_string(),
                    opt(lo),
                    opt(hi),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
