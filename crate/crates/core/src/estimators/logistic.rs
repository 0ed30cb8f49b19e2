use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dgp::expit;
use crate::error::{Error, Result};

/// Coefficients whose magnitude exceeds this are treated as diverging.
pub const SEPARATION_BOUND: f64 = 30.0;

/// Largest Newton step (in any coordinate) still counted as converged.
const STEP_TOL: f64 = 1e-7;

/// Regressor of the nuisance model for `Pr(D=1 | A, L)`. An intercept is
/// always present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    A,
    L,
    AL,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceForm {
    /// One parameter per `(A, L)` cell.
    Saturated,
    /// Intercept, `A`, `L`.
    MainEffects,
    /// Intercept plus the listed terms.
    Custom(Vec<Term>),
}

impl NuisanceForm {
    pub fn terms(&self) -> Vec<Term> {
        match self {
            NuisanceForm::Saturated => vec![Term::A, Term::L, Term::AL],
            NuisanceForm::MainEffects => vec![Term::A, Term::L],
            NuisanceForm::Custom(t) => t.clone(),
        }
    }

    pub fn n_params(&self) -> usize {
        1 + self.terms().len()
    }

    /// Design row `(1, terms...)` for one `(a, l)` cell.
    pub fn design_row(&self, a: u8, l: u8) -> Vec<f64> {
        let mut row = vec![1.0];
        for t in self.terms() {
            row.push(match t {
                Term::A => a as f64,
                Term::L => l as f64,
                Term::AL => (a * l) as f64,
            });
        }
        row
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSpec {
    pub form: NuisanceForm,
    /// Tolerance on the score norm divided by the number of observations.
    pub convergence_tol: f64,
    pub max_iter: usize,
}

impl Default for NuisanceSpec {
    fn default() -> Self {
        Self {
            form: NuisanceForm::Saturated,
            convergence_tol: 1e-10,
            max_iter: 100,
        }
    }
}

impl NuisanceSpec {
    pub fn with_form(form: NuisanceForm) -> Self {
        Self {
            form,
            ..Self::default()
        }
    }
}

/// Maximum-likelihood logistic fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    /// Square roots of the diagonal of the inverse observed information.
    pub std_errors: Vec<f64>,
    /// Inverse observed information, row-major.
    pub covariance: Vec<Vec<f64>>,
    pub iterations: usize,
}

impl LogisticFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        expit(dot(&self.coefficients, row))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Binomial grouping of identical design rows: `(row, trials, successes)`.
struct Groups {
    rows: Vec<Vec<f64>>,
    trials: Vec<f64>,
    successes: Vec<f64>,
}

fn group_rows<'a>(rows: impl Iterator<Item = (&'a [f64], u8)>) -> Groups {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut g = Groups {
        rows: Vec::new(),
        trials: Vec::new(),
        successes: Vec::new(),
    };
    for (row, y) in rows {
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        let slot = *index.entry(key).or_insert_with(|| {
            g.rows.push(row.to_vec());
            g.trials.push(0.0);
            g.successes.push(0.0);
            g.rows.len() - 1
        });
        g.trials[slot] += 1.0;
        g.successes[slot] += y as f64;
    }
    g
}

/// Newton-Raphson (IRLS) fit of `Pr(y=1) = expit(x' b)`.
///
/// Only `convergence_tol` and `max_iter` are read from `spec`; the design
/// rows are taken as given. Identical rows are pooled into binomial groups,
/// so the cost per iteration scales with the number of distinct rows.
pub fn fit_logistic_mle(
    design_rows: &[Vec<f64>],
    outcome: &[u8],
    spec: &NuisanceSpec,
) -> Result<LogisticFit> {
    if design_rows.len() != outcome.len() {
        return Err(Error::InvalidParams(format!(
            "{} design rows but {} outcomes",
            design_rows.len(),
            outcome.len()
        )));
    }
    let groups = group_rows(
        design_rows
            .iter()
            .map(|r| r.as_slice())
            .zip(outcome.iter().copied()),
    );
    fit_grouped(&groups, outcome.len(), spec)
}

/// Grouped-data entry point: each row carries `(trials, successes)`.
pub fn fit_logistic_grouped(
    rows: &[Vec<f64>],
    trials: &[f64],
    successes: &[f64],
    spec: &NuisanceSpec,
) -> Result<LogisticFit> {
    let total = trials.iter().sum::<f64>();
    let groups = Groups {
        rows: rows.to_vec(),
        trials: trials.to_vec(),
        successes: successes.to_vec(),
    };
    fit_grouped(&groups, total.round() as usize, spec)
}

fn fit_grouped(g: &Groups, n_obs: usize, spec: &NuisanceSpec) -> Result<LogisticFit> {
    let Some(first) = g.rows.first() else {
        return Err(Error::InsufficientData("no observations to fit".into()));
    };
    let p = first.len();
    if g.rows.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidParams(
            "design rows have unequal length".into(),
        ));
    }
    let total: f64 = g.trials.iter().sum();
    let events: f64 = g.successes.iter().sum();
    if events == 0.0 || events == total {
        return Err(Error::DegenerateOutcome(format!(
            "outcome has no variation ({events} events in {total} observations)"
        )));
    }
    let scale = n_obs.max(1) as f64;
    let x = DMatrix::from_fn(g.rows.len(), p, |i, j| g.rows[i][j]);
    let mut beta = DVector::zeros(p);
    let mut score_norm = f64::INFINITY;
    for iter in 1..=spec.max_iter {
        let eta = &x * &beta;
        let mut resid = DVector::zeros(g.rows.len());
        let mut w = DVector::zeros(g.rows.len());
        for i in 0..g.rows.len() {
            let mu = expit(eta[i]);
            resid[i] = g.successes[i] - g.trials[i] * mu;
            w[i] = g.trials[i] * mu * (1.0 - mu);
        }
        let score = x.transpose() * &resid;
        score_norm = score.norm() / scale;
        let info = information(&x, &w);
        let chol = info.cholesky().ok_or(Error::RankDeficient)?;
        let step = chol.solve(&score);
        beta += &step;
        if let Some((index, &value)) = beta
            .iter()
            .enumerate()
            .find(|(_, b)| b.abs() > SEPARATION_BOUND)
        {
            return Err(Error::Separation { index, value });
        }
        let max_step = step.amax();
        if score_norm < spec.convergence_tol && max_step < STEP_TOL {
            let eta = &x * &beta;
            for i in 0..g.rows.len() {
                let mu = expit(eta[i]);
                w[i] = g.trials[i] * mu * (1.0 - mu);
            }
            let cov = information(&x, &w)
                .cholesky()
                .ok_or(Error::RankDeficient)?
                .inverse();
            return Ok(LogisticFit {
                coefficients: beta.iter().copied().collect(),
                std_errors: (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect(),
                covariance: (0..p)
                    .map(|j| (0..p).map(|k| cov[(j, k)]).collect())
                    .collect(),
                iterations: iter,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: spec.max_iter,
        score_norm,
        last_iterate: beta.iter().copied().collect(),
    })
}

fn information(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let p = x.ncols();
    let mut info = DMatrix::zeros(p, p);
    for i in 0..x.nrows() {
        if w[i] == 0.0 {
            continue;
        }
        for j in 0..p {
            let xij = x[(i, j)] * w[i];
            if xij == 0.0 {
                continue;
            }
            for k in j..p {
                info[(j, k)] += xij * x[(i, k)];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            info[(j, k)] = info[(k, j)];
        }
    }
    info
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::logit;

    #[test]
    fn intercept_only_recovers_logit_mean() {
        let rows = vec![vec![1.0]; 8];
        let y = [1, 1, 0, 0, 0, 0, 0, 0];
        let fit = fit_logistic_mle(&rows, &y, &NuisanceSpec::default()).unwrap();
        assert!((fit.coefficients[0] - logit(0.25)).abs() < 1e-9);
        assert!((fit.coefficients[0] + 1.0986).abs() < 1e-4);
    }

    #[test]
    fn saturated_design_reproduces_cell_frequencies() {
        let form = NuisanceForm::Saturated;
        let freqs = [(0, 0, 0.1), (0, 1, 0.4), (1, 0, 0.2), (1, 1, 0.3)];
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (a, l, f) in freqs {
            for i in 0..10 {
                rows.push(form.design_row(a, l));
                y.push(((i as f64) < f * 10.0) as u8);
            }
        }
        let fit = fit_logistic_mle(&rows, &y, &NuisanceSpec::default()).unwrap();
        for (a, l, f) in freqs {
            assert!((fit.predict(&form.design_row(a, l)) - f).abs() < 1e-9);
        }
    }

    #[test]
    fn all_events_in_one_cell_is_separation() {
        let form = NuisanceForm::Saturated;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (a, l) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            for i in 0..10u8 {
                rows.push(form.design_row(a, l));
                y.push(if (a, l) == (1, 1) { 1 } else { (i < 3) as u8 });
            }
        }
        let err = fit_logistic_mle(&rows, &y, &NuisanceSpec::default()).unwrap_err();
        assert!(matches!(err, Error::Separation { .. }), "{err:?}");
    }

    #[test]
    fn constant_outcome_is_degenerate() {
        let rows = vec![vec![1.0, 0.0], vec![1.0, 1.0]];
        let err = fit_logistic_mle(&rows, &[0, 0], &NuisanceSpec::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateOutcome(_)));
    }

    #[test]
    fn collinear_design_is_rank_deficient() {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![1.0, (i % 2) as f64, (i % 2) as f64])
            .collect();
        let y = [0, 1, 1, 0, 0, 1];
        let err = fit_logistic_mle(&rows, &y, &NuisanceSpec::default()).unwrap_err();
        assert!(matches!(err, Error::RankDeficient), "{err:?}");
    }

    #[test]
    fn iteration_cap_reports_last_iterate() {
        let rows = vec![vec![1.0]; 4];
        let spec = NuisanceSpec {
            max_iter: 1,
            ..NuisanceSpec::default()
        };
        let err = fit_logistic_mle(&rows, &[1, 0, 0, 0], &spec).unwrap_err();
        match err {
            Error::NonConvergence { last_iterate, .. } => assert_eq!(last_iterate.len(), 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grouped_matches_ungrouped() {
        let rows = vec![
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        ];
        let y = [1, 0, 0, 1, 1];
        let a = fit_logistic_mle(&rows, &y, &NuisanceSpec::default()).unwrap();
        let b = fit_logistic_grouped(
            &[vec![1.0, 0.0], vec![1.0, 1.0]],
            &[2.0, 3.0],
            &[1.0, 2.0],
            &NuisanceSpec::default(),
        )
        .unwrap();
        for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
