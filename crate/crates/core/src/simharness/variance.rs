use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{sample_point_population, scenario_catalog};
use crate::error::Result;
use crate::estimators::{fit_nuisance, ipcw_with_fit, sde_with_fit, NuisanceSpec};
use crate::oracle::{error_decomposition, DEFAULT_POSITIVITY_EPS};
use crate::rng::{derive_seed, with_pool};
use crate::stats::{mean, sample_variance, variance_mcse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceStudyConfig {
    pub scenario_id: String,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub a_d: u8,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
    /// Use `seed` itself for every replicate instead of a per-replicate
    /// derived seed. Only useful as a degenerate check.
    #[serde(default)]
    pub fixed_replicate_seed: bool,
    #[serde(default = "default_eps")]
    pub positivity_eps: f64,
}

fn default_eps() -> f64 {
    DEFAULT_POSITIVITY_EPS
}

impl VarianceStudyConfig {
    /// 2,000 replicates of 20,000 subjects.
    pub fn desk(scenario_id: &str, seed: u64) -> Self {
        Self {
            scenario_id: scenario_id.into(),
            n: 20_000,
            reps: 2_000,
            seed,
            a_d: 0,
            jobs: 0,
            fixed_replicate_seed: false,
            positivity_eps: DEFAULT_POSITIVITY_EPS,
        }
    }

    /// 20,000 replicates of 100,000 subjects.
    pub fn full(scenario_id: &str, seed: u64) -> Self {
        Self {
            n: 100_000,
            reps: 20_000,
            ..Self::desk(scenario_id, seed)
        }
    }
}

/// Spread of the two estimators across replicates. Replicates whose
/// estimator failed (positivity hard error, fit failure) are excluded from
/// that estimator's statistics and counted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    pub scenario_id: String,
    pub n: usize,
    pub reps: usize,
    pub a_d: u8,
    pub var_sde: f64,
    pub var_cde: f64,
    pub mcse_var_sde: f64,
    pub mcse_var_cde: f64,
    pub mean_sde: f64,
    pub mean_cde: f64,
    /// Oracle statistical targets of the two contrasts.
    pub target_sde: f64,
    pub target_cde: f64,
    pub failed_sde: usize,
    pub failed_cde: usize,
}

impl VarianceReport {
    pub fn ratio(&self) -> f64 {
        self.var_cde / self.var_sde
    }
}

pub fn run_variance_study(config: &VarianceStudyConfig) -> Result<VarianceReport> {
    let scenario = scenario_catalog(&config.scenario_id)?;
    let params = scenario.params;
    params.validate()?;
    if config.a_d > 1 {
        return Err(crate::Error::InvalidParams(format!(
            "a_d must be 0 or 1, got {}",
            config.a_d
        )));
    }
    if config.n == 0 || config.reps == 0 {
        return Err(crate::Error::InvalidParams(
            "n and reps must be at least 1".into(),
        ));
    }
    let spec = NuisanceSpec::default();
    let eps = config.positivity_eps;
    let estimates: Vec<Result<(Option<f64>, Option<f64>)>> = with_pool(config.jobs, || {
        (0..config.reps)
            .into_par_iter()
            .map(|rep| {
                let seed = if config.fixed_replicate_seed {
                    config.seed
                } else {
                    derive_seed(config.seed, rep as u64)
                };
                let ds = sample_point_population(&params, config.n, seed)?;
                let view = ds.observed();
                let fit = match fit_nuisance(&view, &spec) {
                    Ok(f) => f,
                    Err(e) if e.is_numerical() => return Ok((None, None)),
                    Err(e) => return Err(e),
                };
                let keep = |r: Result<crate::estimators::EstimateResult>| -> Result<Option<f64>> {
                    match r {
                        Ok(est) => Ok(Some(est.value)),
                        Err(e)
                            if e.is_numerical()
                                || matches!(e, crate::Error::InsufficientData(_)) =>
                        {
                            Ok(None)
                        }
                        Err(e) => Err(e),
                    }
                };
                Ok((
                    keep(ipcw_with_fit(&view, &fit, eps))?,
                    keep(sde_with_fit(&view, &fit, config.a_d, eps))?,
                ))
            })
            .collect()
    })?;
    let mut cde = Vec::with_capacity(config.reps);
    let mut sde = Vec::with_capacity(config.reps);
    for r in estimates {
        let (c, s) = r?;
        cde.extend(c);
        sde.extend(s);
    }
    let oracle = error_decomposition(&params);
    Ok(VarianceReport {
        scenario_id: scenario.id,
        n: config.n,
        reps: config.reps,
        a_d: config.a_d,
        var_sde: sample_variance(&sde),
        var_cde: sample_variance(&cde),
        mcse_var_sde: variance_mcse(&sde),
        mcse_var_cde: variance_mcse(&cde),
        mean_sde: mean(&sde),
        mean_cde: mean(&cde),
        target_sde: oracle.sde_obs[config.a_d as usize],
        target_cde: oracle.cde_obs,
        failed_sde: config.reps - sde.len(),
        failed_cde: config.reps - cde.len(),
    })
}

/// One row per report: the two variances and their ratio, Monte Carlo
/// errors, failure counts, replicate means and oracle targets.
pub fn write_variance_csv<W: Write>(writer: W, reports: &[VarianceReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "scenario",
        "n",
        "reps",
        "a_d",
        "var_sde",
        "var_cde",
        "ratio_cde_over_sde",
        "mcse_var_sde",
        "mcse_var_cde",
        "failed_sde",
        "failed_cde",
        "mean_sde",
        "mean_cde",
        "target_sde",
        "target_cde",
    ])?;
    for r in reports {
        w.write_record([
            r.scenario_id.clone(),
            r.n.to_string(),
            r.reps.to_string(),
            r.a_d.to_string(),
            r.var_sde.to_string(),
            r.var_cde.to_string(),
            r.ratio().to_string(),
            r.mcse_var_sde.to_string(),
            r.mcse_var_cde.to_string(),
            r.failed_sde.to_string(),
            r.failed_cde.to_string(),
            r.mean_sde.to_string(),
            r.mean_cde.to_string(),
            r.target_sde.to_string(),
            r.target_cde.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_replicates_have_zero_variance() {
        let cfg = VarianceStudyConfig {
            n: 2_000,
            reps: 2,
            fixed_replicate_seed: true,
            jobs: 1,
            ..VarianceStudyConfig::desk("s2", 11)
        };
        let r = run_variance_study(&cfg).unwrap();
        assert_eq!(r.var_cde, 0.0);
        assert_eq!(r.var_sde, 0.0);
    }

    #[test]
    fn unknown_scenario_propagates() {
        assert!(run_variance_study(&VarianceStudyConfig::desk("nope", 1)).is_err());
    }
}
