//! Exact population functionals of the logistic data-generating process.
//!
//! Everything here is a closed-form expression in the eight cell
//! probabilities `mu_0(a, l, u)` and `pi_0(a, l, u)` plus `p_L` and `p_U`.
//! [`brute_force_functionals`] recomputes the same quantities from the full
//! joint table by literal conditioning and is used as the independent check.

mod brute_force;
mod rare;

pub use brute_force::{brute_force_functionals, JointTable};
pub use rare::{
    rare_estimand_error_expanded, rare_event_approximations, sign_ratio_factorized,
    RareApproxReport,
};

use serde::Serialize;

use crate::dgp::DgpParams;

/// Default threshold below which a stratum survival probability
/// `1 - pi~(a, l)` is reported as a near positivity violation.
pub const DEFAULT_POSITIVITY_EPS: f64 = 1e-3;

/// All estimands, statistical targets and error components at one parameter
/// point. Arrays indexed by treatment use `[a]`, `[a_y][a_d]` or `[a_d]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleReport {
    pub psi_cde: [f64; 2],
    pub psi_sde: [[f64; 2]; 2],
    pub target_cde: [f64; 2],
    pub target_sde: [[f64; 2]; 2],
    pub cde0: f64,
    pub sde0: [f64; 2],
    pub cde_obs: f64,
    pub sde_obs: [f64; 2],
    pub estimand_error: [f64; 2],
    pub ni_error_cde: f64,
    pub ni_error_sde: [f64; 2],
}

impl OracleReport {
    /// Flattened `(name, value)` pairs, in a fixed order. Per-arm suffixes
    /// are `_a{a}`, `_ay{a_y}_ad{a_d}` and `_ad{a_d}`.
    pub fn fields(&self) -> Vec<(String, f64)> {
        let mut out = Vec::with_capacity(24);
        for a in 0..2 {
            out.push((format!("psi_cde_a{a}"), self.psi_cde[a]));
        }
        for ay in 0..2 {
            for ad in 0..2 {
                out.push((format!("psi_sde_ay{ay}_ad{ad}"), self.psi_sde[ay][ad]));
            }
        }
        for a in 0..2 {
            out.push((format!("target_cde_a{a}"), self.target_cde[a]));
        }
        for ay in 0..2 {
            for ad in 0..2 {
                out.push((format!("target_sde_ay{ay}_ad{ad}"), self.target_sde[ay][ad]));
            }
        }
        out.push(("cde0".into(), self.cde0));
        for ad in 0..2 {
            out.push((format!("sde0_ad{ad}"), self.sde0[ad]));
        }
        out.push(("cde_obs".into(), self.cde_obs));
        for ad in 0..2 {
            out.push((format!("sde_obs_ad{ad}"), self.sde_obs[ad]));
        }
        for ad in 0..2 {
            out.push((format!("estimand_error_ad{ad}"), self.estimand_error[ad]));
        }
        out.push(("ni_error_cde".into(), self.ni_error_cde));
        for ad in 0..2 {
            out.push((format!("ni_error_sde_ad{ad}"), self.ni_error_sde[ad]));
        }
        out
    }

    /// Largest absolute field-wise difference to `other`.
    pub fn max_abs_diff(&self, other: &OracleReport) -> f64 {
        self.fields()
            .iter()
            .zip(other.fields())
            .map(|((_, x), (_, y))| (x - y).abs())
            .fold(0.0, f64::max)
    }

    /// Flat JSON object. With `a_d = Some(k)`, per-`a_D` contrast and error
    /// fields for the other value of `a_D` are dropped and `a_d` is recorded.
    pub fn to_json(&self, a_d: Option<u8>) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        if let Some(k) = a_d {
            map.insert("a_d".into(), k.into());
        }
        for (name, value) in self.fields() {
            if let Some(k) = a_d {
                let other = format!("_ad{}", 1 - k);
                if !name.starts_with("psi_")
                    && !name.starts_with("target_")
                    && name.ends_with(&other)
                {
                    continue;
                }
            }
            map.insert(name, serde_json::Value::from(value));
        }
        serde_json::Value::Object(map)
    }
}

/// A stratum `(a, l)` whose survival probability `1 - pi~(a, l)` fell below
/// the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PositivityWarning {
    pub a: u8,
    pub l: u8,
    pub survival: f64,
    pub threshold: f64,
}

/// A statistical target together with its positivity diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatTarget {
    pub value: f64,
    pub warnings: Vec<PositivityWarning>,
}

/// `Pr(Y^{a, d=0} = 1)`: four-term mixture of `mu_0(a, l, u)` over `(L, U)`.
pub fn counterfactual_risk_cde(params: &DgpParams, a: u8) -> f64 {
    let (pl, pu) = (params.p_l, params.p_u);
    params.mu0(a, 1, 1) * pl * pu
        + params.mu0(a, 1, 0) * pl * (1.0 - pu)
        + params.mu0(a, 0, 1) * (1.0 - pl) * pu
        + params.mu0(a, 0, 0) * (1.0 - pl) * (1.0 - pu)
}

/// `Pr(Y^{a_y, a_d} = 1)`: `mu_0(a_y, l, u) {1 - pi_0(a_d, l, u)}` mixed over
/// `(L, U)`. The `(l, u) = (0, 0)` term uses `pi_0(a_d, 0, 0)`.
pub fn counterfactual_risk_sde(params: &DgpParams, a_y: u8, a_d: u8) -> f64 {
    let (pl, pu) = (params.p_l, params.p_u);
    params.mu0(a_y, 1, 1) * (1.0 - params.pi0(a_d, 1, 1)) * pl * pu
        + params.mu0(a_y, 1, 0) * (1.0 - params.pi0(a_d, 1, 0)) * pl * (1.0 - pu)
        + params.mu0(a_y, 0, 1) * (1.0 - params.pi0(a_d, 0, 1)) * (1.0 - pl) * pu
        + params.mu0(a_y, 0, 0) * (1.0 - params.pi0(a_d, 0, 0)) * (1.0 - pl) * (1.0 - pu)
}

/// `Pr(D=1 | A=a, L=l)` with `U` marginalized out.
pub fn marginal_pi(params: &DgpParams, a: u8, l: u8) -> f64 {
    params.pi0(a, l, 1) * params.p_u + params.pi0(a, l, 0) * (1.0 - params.p_u)
}

/// `Pr(Y=1 | A=a, D=0, L=l)` with `U` marginalized out.
pub fn marginal_mu(params: &DgpParams, a: u8, l: u8) -> f64 {
    let pu = params.p_u;
    let s1 = 1.0 - params.pi0(a, l, 1);
    let s0 = 1.0 - params.pi0(a, l, 0);
    (params.mu0(a, l, 1) * s1 * pu + params.mu0(a, l, 0) * s0 * (1.0 - pu))
        / (s1 * pu + s0 * (1.0 - pu))
}

fn observed_strata(params: &DgpParams) -> impl Iterator<Item = u8> + '_ {
    (0..2u8).filter(|&l| params.prob_l(l) > 0.0)
}

/// Near-violation strata for the controlled-direct-effect positivity
/// condition: every `(a, l)` with `Pr(L=l) > 0` must have
/// `1 - pi~(a, l) >= eps`.
pub fn positivity_cde(params: &DgpParams, eps: f64) -> Vec<PositivityWarning> {
    let mut out = Vec::new();
    for a in 0..2u8 {
        out.extend(cde_arm_warnings(params, a, eps));
    }
    out
}

fn cde_arm_warnings(params: &DgpParams, a: u8, eps: f64) -> Vec<PositivityWarning> {
    observed_strata(params)
        .filter_map(|l| {
            let survival = 1.0 - marginal_pi(params, a, l);
            (survival < eps).then_some(PositivityWarning {
                a,
                l,
                survival,
                threshold: eps,
            })
        })
        .collect()
}

/// Near-violation strata for the separable-effect condition at `a_d`: a
/// stratum only needs `1 - pi~(a, l) >= eps` when `1 - pi~(a_d, l) >= eps`.
pub fn positivity_sde(params: &DgpParams, a_d: u8, eps: f64) -> Vec<PositivityWarning> {
    let mut out = Vec::new();
    for a in 0..2u8 {
        out.extend(sde_arm_warnings(params, a, a_d, eps));
    }
    out
}

fn sde_arm_warnings(params: &DgpParams, a_y: u8, a_d: u8, eps: f64) -> Vec<PositivityWarning> {
    observed_strata(params)
        .filter_map(|l| {
            let reference = 1.0 - marginal_pi(params, a_d, l);
            let survival = 1.0 - marginal_pi(params, a_y, l);
            (reference >= eps && survival < eps).then_some(PositivityWarning {
                a: a_y,
                l,
                survival,
                threshold: eps,
            })
        })
        .collect()
}

/// `psi~(a, d=0) = sum_l Pr(Y=1 | A=a, D=0, L=l) Pr(L=l)`.
pub fn statistical_target_cde(params: &DgpParams, a: u8, eps: f64) -> StatTarget {
    StatTarget {
        value: target_cde_value(params, a),
        warnings: cde_arm_warnings(params, a, eps),
    }
}

/// `psi~(a_y, a_d) = sum_l Pr(Y=1 | A=a_y, D=0, L=l) Pr(D=0 | A=a_d, L=l) Pr(L=l)`.
pub fn statistical_target_sde(params: &DgpParams, a_y: u8, a_d: u8, eps: f64) -> StatTarget {
    StatTarget {
        value: target_sde_value(params, a_y, a_d),
        warnings: sde_arm_warnings(params, a_y, a_d, eps),
    }
}

fn target_cde_value(params: &DgpParams, a: u8) -> f64 {
    marginal_mu(params, a, 1) * params.p_l + marginal_mu(params, a, 0) * (1.0 - params.p_l)
}

fn target_sde_value(params: &DgpParams, a_y: u8, a_d: u8) -> f64 {
    marginal_mu(params, a_y, 1) * (1.0 - marginal_pi(params, a_d, 1)) * params.p_l
        + marginal_mu(params, a_y, 0) * (1.0 - marginal_pi(params, a_d, 0)) * (1.0 - params.p_l)
}

/// `CDE_0 - SDE_0^{a_d}` written directly in the cell probabilities:
/// `sum_{l,u} {mu_0(1,l,u) - mu_0(0,l,u)} pi_0(a_d,l,u) Pr(l) Pr(u)`.
pub fn estimand_error_closed_form(params: &DgpParams, a_d: u8) -> f64 {
    let mut total = 0.0;
    for (l, u) in [(1, 1), (1, 0), (0, 1), (0, 0)] {
        total += (params.mu0(1, l, u) - params.mu0(0, l, u))
            * params.pi0(a_d, l, u)
            * params.prob_l(l)
            * params.prob_u(u);
    }
    total
}

/// Term order shared by the two non-identification expansions.
const ARM_STRATA: [(u8, u8); 4] = [(1, 1), (1, 0), (0, 1), (0, 0)];

/// `CDE_obs - CDE_0` as the four-term expansion in the cell probabilities.
pub fn ni_error_cde_closed_form(params: &DgpParams) -> f64 {
    let pu = params.p_u;
    let mix = pu * (1.0 - pu);
    let mut total = 0.0;
    for (a, l) in ARM_STRATA {
        let (s1, s0) = (1.0 - params.pi0(a, l, 1), 1.0 - params.pi0(a, l, 0));
        let frac = (params.pi0(a, l, 1) - params.pi0(a, l, 0)) / (s1 * pu + s0 * (1.0 - pu));
        let term = frac * (params.mu0(a, l, 1) - params.mu0(a, l, 0)) * params.prob_l(l) * mix;
        // Arm-1 terms enter with a minus sign, arm-0 terms with a plus sign.
        if a == 1 {
            total -= term;
        } else {
            total += term;
        }
    }
    total
}

/// The four signed terms of `SDE_obs^{a_d} - SDE_0^{a_d}`, ordered by
/// `(a, l) = (1,1), (1,0), (0,1), (0,0)`. The two arm-`a_d` terms have a
/// numerator of the form `x y - x y` and vanish exactly.
pub fn ni_error_sde_terms(params: &DgpParams, a_d: u8) -> [f64; 4] {
    let pu = params.p_u;
    let mix = pu * (1.0 - pu);
    let mut terms = [0.0; 4];
    for (slot, (a, l)) in terms.iter_mut().zip(ARM_STRATA) {
        let (s1, s0) = (1.0 - params.pi0(a, l, 1), 1.0 - params.pi0(a, l, 0));
        let (r1, r0) = (1.0 - params.pi0(a_d, l, 1), 1.0 - params.pi0(a_d, l, 0));
        let frac = (s1 * r0 - r1 * s0) / (s1 * pu + s0 * (1.0 - pu));
        let term = frac * (params.mu0(a, l, 1) - params.mu0(a, l, 0)) * params.prob_l(l) * mix;
        *slot = if a == 1 { term } else { -term };
    }
    terms
}

pub fn ni_error_sde_closed_form(params: &DgpParams, a_d: u8) -> f64 {
    ni_error_sde_terms(params, a_d).iter().sum()
}

/// Full closed-form report. The three error blocks come from their own
/// expansions rather than from differencing the `psi` blocks, so agreement
/// between them is a real check.
pub fn error_decomposition(params: &DgpParams) -> OracleReport {
    let psi_cde = [
        counterfactual_risk_cde(params, 0),
        counterfactual_risk_cde(params, 1),
    ];
    let mut psi_sde = [[0.0; 2]; 2];
    let mut target_sde = [[0.0; 2]; 2];
    for ay in 0..2u8 {
        for ad in 0..2u8 {
            psi_sde[ay as usize][ad as usize] = counterfactual_risk_sde(params, ay, ad);
            target_sde[ay as usize][ad as usize] = target_sde_value(params, ay, ad);
        }
    }
    let target_cde = [target_cde_value(params, 0), target_cde_value(params, 1)];
    let sde0 = [psi_sde[1][0] - psi_sde[0][0], psi_sde[1][1] - psi_sde[0][1]];
    let sde_obs = [
        target_sde[1][0] - target_sde[0][0],
        target_sde[1][1] - target_sde[0][1],
    ];
    OracleReport {
        psi_cde,
        psi_sde,
        target_cde,
        target_sde,
        cde0: psi_cde[1] - psi_cde[0],
        sde0,
        cde_obs: target_cde[1] - target_cde[0],
        sde_obs,
        estimand_error: [
            estimand_error_closed_form(params, 0),
            estimand_error_closed_form(params, 1),
        ],
        ni_error_cde: ni_error_cde_closed_form(params),
        ni_error_sde: [
            ni_error_sde_closed_form(params, 0),
            ni_error_sde_closed_form(params, 1),
        ],
    }
}
