//! Parameterized single-time-point data-generating process.
//!
//! Treatment `A`, measured covariate `L` and unmeasured covariate `U` are
//! independent Bernoulli draws. The competing event `D` and the event of
//! interest `Y` follow logistic models in `(a, l, u)` with main effects and
//! all pairwise interactions; `Y` is forced to 0 whenever `D = 1`.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::stream_rng;
use crate::{Error, Result};

/// Records generated per RNG stream.
pub const SAMPLING_CHUNK: usize = 4096;

/// Coefficients of both logistic models plus the covariate and treatment
/// probabilities.
///
/// `theta` parameterizes `Pr(Y=1 | A, L, U, D=0)` and `beta`
/// parameterizes `Pr(D=1 | A, L, U)`, both in the term order
/// `(1, a, l, a*l, u, a*u, l*u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    pub theta: [f64; 7],
    pub beta: [f64; 7],
    pub p_l: f64,
    pub p_u: f64,
    #[serde(default = "default_p_a")]
    pub p_a: f64,
}

fn default_p_a() -> f64 {
    0.5
}

impl DgpParams {
    pub fn new(theta: [f64; 7], beta: [f64; 7], p_l: f64, p_u: f64) -> Self {
        Self {
            theta,
            beta,
            p_l,
            p_u,
            p_a: default_p_a(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_l", self.p_l), ("p_u", self.p_u), ("p_a", self.p_a)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParams(format!(
                    "{name} = {p} is not in [0, 1]"
                )));
            }
        }
        if self.theta.iter().chain(&self.beta).any(|c| !c.is_finite()) {
            return Err(Error::InvalidParams("non-finite coefficient".into()));
        }
        Ok(())
    }

    /// `mu_0(a, l, u) = Pr(Y=1 | A=a, L=l, U=u, D=0)`.
    pub fn mu0(&self, a: u8, l: u8, u: u8) -> f64 {
        logistic_response(Response::EventOfInterest, a, l, u, self)
    }

    /// `pi_0(a, l, u) = Pr(D=1 | A=a, L=l, U=u)`.
    pub fn pi0(&self, a: u8, l: u8, u: u8) -> f64 {
        logistic_response(Response::CompetingEvent, a, l, u, self)
    }

    /// `Pr(L = l)`.
    pub fn prob_l(&self, l: u8) -> f64 {
        if l == 1 {
            self.p_l
        } else {
            1.0 - self.p_l
        }
    }

    /// `Pr(U = u)`.
    pub fn prob_u(&self, u: u8) -> f64 {
        if u == 1 {
            self.p_u
        } else {
            1.0 - self.p_u
        }
    }

    pub fn prob_a(&self, a: u8) -> f64 {
        if a == 1 {
            self.p_a
        } else {
            1.0 - self.p_a
        }
    }

    /// True iff `Pr(D=1 | a, l, u) < threshold` in every cell.
    pub fn competing_event_rare(&self, threshold: f64) -> bool {
        cells().all(|(a, l, u)| self.pi0(a, l, u) < threshold)
    }
}

/// All eight `(a, l, u)` cells in lexicographic order.
pub fn cells() -> impl Iterator<Item = (u8, u8, u8)> {
    (0..8u8).map(|i| (i >> 2, (i >> 1) & 1, i & 1))
}

/// Which of the two logistic models to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Response {
    EventOfInterest,
    CompetingEvent,
}

/// Numerically stable inverse logit.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Linear predictor `c0 + c1 a + c2 l + c3 a l + c4 u + c5 a u + c6 l u`.
pub fn linear_predictor(coef: &[f64; 7], a: u8, l: u8, u: u8) -> f64 {
    let (a, l, u) = (a as f64, l as f64, u as f64);
    coef[0]
        + coef[1] * a
        + coef[2] * l
        + coef[3] * a * l
        + coef[4] * u
        + coef[5] * a * u
        + coef[6] * l * u
}

pub fn logistic_response(kind: Response, a: u8, l: u8, u: u8, params: &DgpParams) -> f64 {
    let coef = match kind {
        Response::EventOfInterest => &params.theta,
        Response::CompetingEvent => &params.beta,
    };
    expit(linear_predictor(coef, a, l, u))
}

/// One observed record `(L, A, D, Y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ObservedRecord {
    pub l: u8,
    pub a: u8,
    pub d: u8,
    pub y: u8,
}

/// Read-only view of a dataset that cannot reach the latent `U` column.
#[derive(Debug, Clone, Copy)]
pub struct ObservedView<'a> {
    records: &'a [ObservedRecord],
}

impl<'a> ObservedView<'a> {
    pub fn new(records: &'a [ObservedRecord]) -> Self {
        Self { records }
    }

    pub fn records(&self) -> &'a [ObservedRecord] {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Sampled single-time-point population. `U` is kept apart from the observed
/// columns and only reachable through [`PointDataset::latent_u`].
#[derive(Debug, Clone, PartialEq)]
pub struct PointDataset {
    observed: Vec<ObservedRecord>,
    latent_u: Option<Vec<u8>>,
}

impl PointDataset {
    /// Build a dataset, checking binary values and that `d = 1` implies `y = 0`.
    pub fn from_records(observed: Vec<ObservedRecord>, latent_u: Option<Vec<u8>>) -> Result<Self> {
        if let Some(u) = &latent_u {
            if u.len() != observed.len() {
                return Err(Error::InvalidParams(
                    "latent U length differs from record count".into(),
                ));
            }
        }
        for (i, r) in observed.iter().enumerate() {
            let row = i + 1;
            for (column, v) in [("l", r.l), ("a", r.a), ("d", r.d), ("y", r.y)] {
                if v > 1 {
                    return Err(Error::Data {
                        row,
                        column: column.into(),
                        message: format!("value {v} is not binary"),
                    });
                }
            }
            if r.d == 1 && r.y == 1 {
                return Err(Error::Data {
                    row,
                    column: "y".into(),
                    message: "y = 1 after a competing event (d = 1)".into(),
                });
            }
        }
        Ok(Self { observed, latent_u })
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    /// The only access path for estimators.
    pub fn observed(&self) -> ObservedView<'_> {
        ObservedView::new(&self.observed)
    }

    /// The unmeasured covariate, for oracle-side checks only.
    pub fn latent_u(&self) -> Option<&[u8]> {
        self.latent_u.as_deref()
    }

    /// CSV with header `u,l,a,d,y`. With `include_u = false` (or no latent
    /// column) the `u` field is left empty.
    pub fn write_csv<W: Write>(&self, writer: W, include_u: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["u", "l", "a", "d", "y"])?;
        for (i, r) in self.observed.iter().enumerate() {
            let u = match (&self.latent_u, include_u) {
                (Some(u), true) => u[i].to_string(),
                _ => String::new(),
            };
            w.write_record([
                u,
                r.l.to_string(),
                r.a.to_string(),
                r.d.to_string(),
                r.y.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Data {
                    row: 0,
                    column: name.into(),
                    message: "missing column".into(),
                })
        };
        let (iu, il, ia, id, iy) = (col("u")?, col("l")?, col("a")?, col("d")?, col("y")?);
        let mut observed = Vec::new();
        let mut us = Vec::new();
        let mut any_u = false;
        let mut all_u = true;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = i + 1;
            let bin = |idx: usize, name: &str| -> Result<u8> {
                let field = rec.get(idx).unwrap_or("").trim();
                match field {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    other => Err(Error::Data {
                        row,
                        column: name.into(),
                        message: format!("expected 0 or 1, found `{other}`"),
                    }),
                }
            };
            if rec.get(iu).unwrap_or("").trim().is_empty() {
                all_u = false;
                us.push(0);
            } else {
                any_u = true;
                us.push(bin(iu, "u")?);
            }
            observed.push(ObservedRecord {
                l: bin(il, "l")?,
                a: bin(ia, "a")?,
                d: bin(id, "d")?,
                y: bin(iy, "y")?,
            });
        }
        if any_u && !all_u {
            return Err(Error::Data {
                row: 0,
                column: "u".into(),
                message: "u must be present on every row or on none".into(),
            });
        }
        Self::from_records(observed, any_u.then_some(us))
    }
}

/// Draw `n` i.i.d. records. Records are generated in chunks of
/// [`SAMPLING_CHUNK`], chunk `c` using RNG stream `(seed, c)`, so the result
/// is a pure function of `(params, n, seed)`.
pub fn sample_point_population(params: &DgpParams, n: usize, seed: u64) -> Result<PointDataset> {
    params.validate()?;
    if n == 0 {
        return Err(Error::InvalidParams("n must be at least 1".into()));
    }
    let mut pi = [0.0; 8];
    let mut mu = [0.0; 8];
    for (idx, (a, l, u)) in cells().enumerate() {
        pi[idx] = params.pi0(a, l, u);
        mu[idx] = params.mu0(a, l, u);
    }
    let mut observed = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for (chunk, start) in (0..n).step_by(SAMPLING_CHUNK).enumerate() {
        let mut rng = stream_rng(seed, chunk as u64);
        for _ in start..(start + SAMPLING_CHUNK).min(n) {
            // Five uniforms per record, always consumed, keep streams aligned.
            let draws: [f64; 5] = rng.random();
            let a = (draws[0] < params.p_a) as u8;
            let u = (draws[1] < params.p_u) as u8;
            let l = (draws[2] < params.p_l) as u8;
            let idx = ((a << 2) | (l << 1) | u) as usize;
            let d = (draws[3] < pi[idx]) as u8;
            let y = (d == 0 && draws[4] < mu[idx]) as u8;
            observed.push(ObservedRecord { l, a, d, y });
            latent.push(u);
        }
    }
    Ok(PointDataset {
        observed,
        latent_u: Some(latent),
    })
}

/// Web-table style row descriptors of a simulation scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScenarioLabels {
    pub near_positivity_violation: bool,
    pub u_dependence: bool,
    pub marginally_rare: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub id: String,
    pub params: DgpParams,
    pub labels: ScenarioLabels,
}

/// Fixed `(theta0, theta1, theta2, theta3)` shared by the variance-study scenarios.
const STUDY_THETA: [f64; 4] = [-1.0, -2.0, 1.0, 3.0];

fn study(id: &str, theta_u: [f64; 3], beta: [f64; 7], labels: (bool, bool, bool)) -> Scenario {
    let t = STUDY_THETA;
    Scenario {
        id: id.to_string(),
        params: DgpParams::new(
            [t[0], t[1], t[2], t[3], theta_u[0], theta_u[1], theta_u[2]],
            beta,
            0.1,
            0.5,
        ),
        labels: ScenarioLabels {
            near_positivity_violation: labels.0,
            u_dependence: labels.1,
            marginally_rare: labels.2,
        },
    }
}

fn sweep_base(id: &str, beta0: f64) -> Scenario {
    let mut beta = [0.0; 7];
    beta[0] = beta0;
    Scenario {
        id: id.to_string(),
        params: DgpParams::new([-1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], beta, 0.5, 0.5),
        labels: ScenarioLabels {
            near_positivity_violation: false,
            u_dependence: true,
            marginally_rare: beta0 < -5.0,
        },
    }
}

/// The six variance-study scenarios, in table order.
pub fn variance_scenarios() -> Vec<Scenario> {
    vec![
        study(
            "s1",
            [0.0, 0.0, 0.0],
            [-3.0, 1.0, 1.0, -1.0, 0.0, 0.0, 0.0],
            (false, false, true),
        ),
        study(
            "s2",
            [0.0, 0.0, 0.0],
            [-1.0, 1.0, 1.0, -1.0, 0.0, 0.0, 0.0],
            (false, false, false),
        ),
        study(
            "s3",
            [1.0, -2.0, 0.0],
            [-3.0, 1.0, 1.0, -1.0, 3.0, 1.0, 0.0],
            (false, true, false),
        ),
        study(
            "s4",
            [0.0, 0.0, 0.0],
            [-10.0, 1.0, 16.0, -1.0, 0.0, 0.0, 0.0],
            (true, false, true),
        ),
        study(
            "s5",
            [0.0, 0.0, 0.0],
            [-1.0, 1.0, 7.0, -1.0, 0.0, 0.0, 0.0],
            (true, false, false),
        ),
        study(
            "s6",
            [1.0, -2.0, 0.0],
            [-3.0, 1.0, 7.0, -1.0, 3.0, 1.0, 0.0],
            (true, true, false),
        ),
    ]
}

/// Every catalog entry: the six study scenarios plus the sweep bases
/// (`sweep_base` with `beta0 = -1`, and the rare bases `sweep_rare_b9`,
/// `sweep_rare_b6`). Sweep bases carry zero non-intercept coefficients;
/// the sweep grid fills them in.
pub fn catalog() -> Vec<Scenario> {
    let mut all = variance_scenarios();
    all.push(sweep_base("sweep_base", -1.0));
    all.push(sweep_base("sweep_rare_b9", -9.0));
    all.push(sweep_base("sweep_rare_b6", -6.0));
    all
}

pub fn scenario_catalog(id: &str) -> Result<Scenario> {
    catalog()
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::ScenarioNotFound(id.to_string()))
}

/// Column names of a parameter CSV row. `p_a` is optional and defaults to 0.5.
pub const PARAM_COLUMNS: [&str; 16] = [
    "theta0", "theta1", "theta2", "theta3", "theta4", "theta5", "theta6", "beta0", "beta1",
    "beta2", "beta3", "beta4", "beta5", "beta6", "p_l", "p_u",
];

/// Parse one parameter set per CSV row. Errors name the 1-based data row and
/// the offending column.
pub fn read_params_csv<R: Read>(reader: R) -> Result<Vec<DgpParams>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 16];
    for (slot, name) in idx.iter_mut().zip(PARAM_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data {
                row: 0,
                column: name.into(),
                message: "missing column".into(),
            })?;
    }
    let pa_idx = headers.iter().position(|h| h == "p_a");
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Data {
            row,
            column: "*".into(),
            message: e.to_string(),
        })?;
        let num = |col: usize, name: &str| -> Result<f64> {
            let field = rec.get(col).unwrap_or("");
            field.parse::<f64>().map_err(|_| Error::Data {
                row,
                column: name.into(),
                message: format!("cannot parse `{field}` as a number"),
            })
        };
        let mut v = [0.0; 16];
        for (k, name) in PARAM_COLUMNS.iter().enumerate() {
            v[k] = num(idx[k], name)?;
        }
        let mut p = DgpParams::new(
            v[0..7].try_into().expect("seven theta"),
            v[7..14].try_into().expect("seven beta"),
            v[14],
            v[15],
        );
        if let Some(c) = pa_idx {
            p.p_a = num(c, "p_a")?;
        }
        p.validate().map_err(|e| Error::Data {
            row,
            column: "*".into(),
            message: e.to_string(),
        })?;
        out.push(p);
    }
    if out.is_empty() {
        return Err(Error::InsufficientData("parameter CSV has no rows".into()));
    }
    Ok(out)
}
