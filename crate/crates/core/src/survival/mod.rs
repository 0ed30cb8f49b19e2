//! Discrete-time survival analysis with a competing event: person-month
//! expansion, a pooled logistic hazard for the competing event, weighted
//! risk curves for the controlled and separable direct effects, and
//! subject-level bootstrap intervals.

mod bootstrap;
mod curves;
mod hazard;
mod synthetic;

pub use bootstrap::{bootstrap_percentile_ci, BootstrapResult};
pub use curves::{
    contrast_at, ipcw_risk_curve, run_analysis, sde_risk_curve, write_curves_csv, AnalysisCurves,
    AnalysisPlan, ArmOrContrast, Contrast, RiskCurve,
};
pub use hazard::{
    fit_pooled_hazard, CompetingHazard, HazardDesign, HazardModel, HazardTerm, ZeroHazard,
};
pub use synthetic::{simulate_cohort, CovariateDistribution, SyntheticCohortSpec};

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Follow-up length used by the trial analysis, in months.
pub const DEFAULT_HORIZON: u32 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventType {
    None,
    EventOfInterest,
    Competing,
}

impl EventType {
    pub fn code(self) -> u8 {
        match self {
            EventType::None => 0,
            EventType::EventOfInterest => 1,
            EventType::Competing => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(EventType::None),
            1 => Some(EventType::EventOfInterest),
            2 => Some(EventType::Competing),
            _ => None,
        }
    }
}

/// Baseline covariates. `age_group` is 0 (59 or younger), 1 (60 to 75) or
/// 2 (75 and older).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Covariates {
    pub hgb_lt12: u8,
    pub age_group: u8,
    pub activity_normal: u8,
    pub cvd_history: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub a: u8,
    pub covariates: Covariates,
    /// Month of the event, or the horizon when no event occurred.
    pub event_month: u32,
    pub event_type: EventType,
}

/// One at-risk month: the subject is free of both events through month
/// `month`, and `d_next`/`y_next` record what happens in month `month + 1`.
/// Rows exist only while the subject is at risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PersonMonth {
    /// Position of the subject in the input slice.
    pub subject: usize,
    /// Zero-based month index `k`.
    pub month: u32,
    pub a: u8,
    pub covariates: Covariates,
    pub d_next: u8,
    pub y_next: u8,
}

pub const SUBJECT_COLUMNS: [&str; 8] = [
    "id",
    "arm",
    "hgb_lt12",
    "age_group",
    "activity_normal",
    "cvd_history",
    "event_month",
    "event_type",
];

fn validate_subject(s: &SubjectRecord, row: usize, horizon: u32) -> Result<()> {
    let bad = |column: &str, message: String| Error::Data {
        row,
        column: column.into(),
        message,
    };
    if s.a > 1 {
        return Err(bad("arm", format!("value {} is not binary", s.a)));
    }
    let c = s.covariates;
    for (column, v) in [
        ("hgb_lt12", c.hgb_lt12),
        ("activity_normal", c.activity_normal),
        ("cvd_history", c.cvd_history),
    ] {
        if v > 1 {
            return Err(bad(column, format!("value {v} is not binary")));
        }
    }
    if c.age_group > 2 {
        return Err(bad(
            "age_group",
            format!("value {} is not in 0..=2", c.age_group),
        ));
    }
    if s.event_month < 1 || s.event_month > horizon {
        return Err(bad(
            "event_month",
            format!("{} is outside 1..={horizon}", s.event_month),
        ));
    }
    if s.event_type == EventType::None && s.event_month != horizon {
        return Err(bad(
            "event_month",
            format!(
                "no event recorded but event_month {} differs from the horizon {horizon}",
                s.event_month
            ),
        ));
    }
    Ok(())
}

/// Read subjects, checking each against `horizon`. Errors carry the 1-based
/// data row and column name.
pub fn read_subjects_csv<R: Read>(reader: R, horizon: u32) -> Result<Vec<SubjectRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 8];
    for (slot, name) in idx.iter_mut().zip(SUBJECT_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Data {
                row: 0,
                column: name.into(),
                message: "missing column".into(),
            })?;
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("").trim();
        let int = |k: usize| -> Result<u32> {
            field(k).parse::<u32>().map_err(|_| Error::Data {
                row,
                column: SUBJECT_COLUMNS[k].into(),
                message: format!("expected a nonnegative integer, found `{}`", field(k)),
            })
        };
        let small = |k: usize| -> Result<u8> {
            let v = int(k)?;
            u8::try_from(v).map_err(|_| Error::Data {
                row,
                column: SUBJECT_COLUMNS[k].into(),
                message: format!("value {v} out of range"),
            })
        };
        let code = small(7)?;
        let event_type = EventType::from_code(code).ok_or_else(|| Error::Data {
            row,
            column: "event_type".into(),
            message: format!("expected 0, 1 or 2, found {code}"),
        })?;
        let s = SubjectRecord {
            id: field(0).to_string(),
            a: small(1)?,
            covariates: Covariates {
                hgb_lt12: small(2)?,
                age_group: small(3)?,
                activity_normal: small(4)?,
                cvd_history: small(5)?,
            },
            event_month: int(6)?,
            event_type,
        };
        validate_subject(&s, row, horizon)?;
        out.push(s);
    }
    Ok(out)
}

pub fn write_subjects_csv<W: Write>(writer: W, subjects: &[SubjectRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUBJECT_COLUMNS)?;
    for s in subjects {
        let c = s.covariates;
        w.write_record([
            s.id.clone(),
            s.a.to_string(),
            c.hgb_lt12.to_string(),
            c.age_group.to_string(),
            c.activity_normal.to_string(),
            c.cvd_history.to_string(),
            s.event_month.to_string(),
            s.event_type.code().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per at-risk month. A subject with an event at month `m` gives
/// `m` rows, the last flagging the event; a subject without an event gives
/// `horizon` rows.
pub fn expand_to_person_months(
    subjects: &[SubjectRecord],
    horizon: u32,
) -> Result<Vec<PersonMonth>> {
    let total: usize = subjects.iter().map(|s| s.event_month as usize).sum();
    let mut out = Vec::with_capacity(total);
    for (i, s) in subjects.iter().enumerate() {
        validate_subject(s, i + 1, horizon)?;
        for k in 0..s.event_month {
            let last = k + 1 == s.event_month;
            out.push(PersonMonth {
                subject: i,
                month: k,
                a: s.a,
                covariates: s.covariates,
                d_next: (last && s.event_type == EventType::Competing) as u8,
                y_next: (last && s.event_type == EventType::EventOfInterest) as u8,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(m: u32, t: EventType) -> SubjectRecord {
        SubjectRecord {
            id: "x".into(),
            a: 1,
            covariates: Covariates::default(),
            event_month: m,
            event_type: t,
        }
    }

    #[test]
    fn event_free_subject_spans_horizon() {
        let pm = expand_to_person_months(&[subject(50, EventType::None)], 50).unwrap();
        assert_eq!(pm.len(), 50);
        assert!(pm.iter().all(|r| r.d_next == 0 && r.y_next == 0));
    }

    #[test]
    fn competing_event_closes_follow_up() {
        let pm = expand_to_person_months(&[subject(3, EventType::Competing)], 50).unwrap();
        assert_eq!(pm.len(), 3);
        assert_eq!((pm[2].d_next, pm[2].y_next), (1, 0));
        assert_eq!((pm[1].d_next, pm[1].y_next), (0, 0));
    }

    #[test]
    fn out_of_range_month_is_rejected() {
        assert!(expand_to_person_months(&[subject(51, EventType::Competing)], 50).is_err());
        assert!(expand_to_person_months(&[subject(0, EventType::Competing)], 50).is_err());
        assert!(expand_to_person_months(&[subject(20, EventType::None)], 50).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let subjects = vec![
            subject(50, EventType::None),
            subject(7, EventType::EventOfInterest),
        ];
        let mut buf = Vec::new();
        write_subjects_csv(&mut buf, &subjects).unwrap();
        assert_eq!(read_subjects_csv(buf.as_slice(), 50).unwrap(), subjects);

        let bad = "id,arm,hgb_lt12,age_group,activity_normal,cvd_history,event_month,event_type\n1,0,0,3,1,0,50,0\n";
        match read_subjects_csv(bad.as_bytes(), 50).unwrap_err() {
            Error::Data { row, column, .. } => assert_eq!((row, column.as_str()), (1, "age_group")),
            other => panic!("{other:?}"),
        }
    }
}
