use serde::Serialize;

use crate::dgp::{linear_predictor, DgpParams};

/// First-order approximations that hold when both events are rare, so that
/// `expit(x) ~ exp(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RareApproxReport {
    /// Approximate `CDE_0 - SDE_0^{a_d}`, indexed by `a_d`.
    pub approx_estimand_error: [f64; 2],
    /// Approximate `CDE_0`.
    pub approx_cde: f64,
    /// Approximate `SDE_0^{a_d} / CDE_0`; `None` when the approximate CDE is 0.
    pub sign_ratio: [Option<f64>; 2],
    /// `true` when the ratio is negative, i.e. the two effects are predicted
    /// to have opposite signs.
    pub sign_disagreement: [bool; 2],
}

/// `sum_{l,u} {exp(eta_theta(1,l,u)) - exp(eta_theta(0,l,u))} exp(eta_beta(a_d,l,u)) Pr(l) Pr(u)`.
pub fn rare_estimand_error_expanded(params: &DgpParams, a_d: u8) -> f64 {
    let mut total = 0.0;
    for l in 0..2u8 {
        for u in 0..2u8 {
            let effect = linear_predictor(&params.theta, 1, l, u).exp()
                - linear_predictor(&params.theta, 0, l, u).exp();
            total += effect
                * linear_predictor(&params.beta, a_d, l, u).exp()
                * params.prob_l(l)
                * params.prob_u(u);
        }
    }
    total
}

fn rare_cde_expanded(params: &DgpParams) -> f64 {
    let mut total = 0.0;
    for l in 0..2u8 {
        for u in 0..2u8 {
            let effect = linear_predictor(&params.theta, 1, l, u).exp()
                - linear_predictor(&params.theta, 0, l, u).exp();
            total += effect * params.prob_l(l) * params.prob_u(u);
        }
    }
    total
}

/// Factorized ratio for the case without a latent common cause (`p_U = 0`):
/// `1 - exp(b0 + b1 a_d) N / D` with
/// `N = exp(t2 + b2 + b3 a_d)(exp(t1 + t3) - 1) p_L + (exp(t1) - 1)(1 - p_L)` and
/// `D = exp(t2)(exp(t1 + t3) - 1) p_L + (exp(t1) - 1)(1 - p_L)`.
pub fn sign_ratio_factorized(params: &DgpParams, a_d: u8) -> Option<f64> {
    let t = &params.theta;
    let b = &params.beta;
    let ad = a_d as f64;
    let pl = params.p_l;
    let interaction = (t[1] + t[3]).exp() - 1.0;
    let main = t[1].exp() - 1.0;
    let den = t[2].exp() * interaction * pl + main * (1.0 - pl);
    if den == 0.0 {
        return None;
    }
    let num = (t[2] + b[2] + b[3] * ad).exp() * interaction * pl + main * (1.0 - pl);
    Some(1.0 - (b[0] + b[1] * ad).exp() * num / den)
}

pub fn rare_event_approximations(params: &DgpParams) -> RareApproxReport {
    let approx_cde = rare_cde_expanded(params);
    let approx_estimand_error = [
        rare_estimand_error_expanded(params, 0),
        rare_estimand_error_expanded(params, 1),
    ];
    let mut sign_ratio = [None; 2];
    let mut sign_disagreement = [false; 2];
    for ad in 0..2 {
        if approx_cde != 0.0 {
            let ratio = 1.0 - approx_estimand_error[ad] / approx_cde;
            sign_ratio[ad] = Some(ratio);
            sign_disagreement[ad] = ratio < 0.0;
        }
    }
    RareApproxReport {
        approx_estimand_error,
        approx_cde,
        sign_ratio,
        sign_disagreement,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::estimand_error_closed_form;

    fn rare_point() -> DgpParams {
        DgpParams::new(
            [-8.0, 0.7, 0.3, -0.4, 0.0, 0.0, 0.0],
            [-8.0, 0.5, -0.6, 0.9, 0.0, 0.0, 0.0],
            0.3,
            0.0,
        )
    }

    #[test]
    fn factorized_matches_expanded_without_latent() {
        let p = rare_point();
        let r = rare_event_approximations(&p);
        for ad in 0..2u8 {
            let f = sign_ratio_factorized(&p, ad).unwrap();
            let e = r.sign_ratio[ad as usize].unwrap();
            assert!((f - e).abs() < 1e-10, "{f} vs {e}");
        }
    }

    #[test]
    fn approximation_tracks_exact_error_when_rare() {
        let p = rare_point();
        for ad in 0..2u8 {
            let exact = estimand_error_closed_form(&p, ad);
            let approx = rare_estimand_error_expanded(&p, ad);
            assert!(
                ((approx - exact) / exact).abs() < 1e-2,
                "{approx} vs {exact}"
            );
        }
    }

    #[test]
    fn zero_conditional_effect_has_undefined_ratio() {
        let mut p = rare_point();
        p.theta[1] = 0.0;
        p.theta[3] = 0.0;
        assert_eq!(sign_ratio_factorized(&p, 0), None);
        assert_eq!(rare_event_approximations(&p).sign_ratio, [None, None]);
    }
}
