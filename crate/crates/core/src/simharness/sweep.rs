use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::DgpParams;
use crate::error::{Error, Result};
use crate::oracle::{error_decomposition, OracleReport};
use crate::rng::{stream_rng, with_pool};

/// A point counts as rare when every cell competing-event probability is
/// below this.
pub const RARE_THRESHOLD: f64 = 0.1;

/// Names of the swept coordinates, in grid-index order (last varies fastest).
pub const GRID_COORDINATES: [&str; 12] = [
    "theta1", "theta2", "theta3", "theta4", "theta5", "theta6", "beta1", "beta2", "beta3", "beta4",
    "beta5", "beta6",
];

/// Cartesian grid over `theta1..theta6, beta1..beta6` with fixed `theta0`,
/// `beta0` and `p_l`. Each grid point is evaluated once per `p_u` panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub theta0: f64,
    pub beta0: f64,
    pub p_l: f64,
    pub p_u: Vec<f64>,
    /// Candidate values per coordinate, in [`GRID_COORDINATES`] order.
    pub levels: Vec<Vec<f64>>,
}

impl SweepGrid {
    /// Each free coefficient in `{-1, -0.5, 0.5, 1}`, `theta0 = -1`,
    /// `p_l = 0.5`, panels `p_u = 0.5` and `p_u = 0`.
    pub fn standard(beta0: f64) -> Self {
        Self {
            theta0: -1.0,
            beta0,
            p_l: 0.5,
            p_u: vec![0.5, 0.0],
            levels: vec![vec![-1.0, -0.5, 0.5, 1.0]; 12],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.len() != 12 {
            return Err(Error::InvalidParams(format!(
                "grid needs 12 coordinate level lists, got {}",
                self.levels.len()
            )));
        }
        if self.levels.iter().any(|l| l.is_empty()) || self.p_u.is_empty() {
            return Err(Error::InvalidParams("grid has an empty level list".into()));
        }
        for p_u in &self.p_u {
            self.params_with(&[0; 12], *p_u).validate()?;
        }
        Ok(())
    }

    /// Number of coefficient combinations (not counting panels).
    pub fn size(&self) -> u128 {
        self.levels.iter().map(|l| l.len() as u128).product()
    }

    fn lengths(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.len()).collect()
    }

    fn params_with(&self, digits: &[usize; 12], p_u: f64) -> DgpParams {
        let v = |i: usize| self.levels[i][digits[i]];
        DgpParams::new(
            [self.theta0, v(0), v(1), v(2), v(3), v(4), v(5)],
            [self.beta0, v(6), v(7), v(8), v(9), v(10), v(11)],
            self.p_l,
            p_u,
        )
    }

    /// Parameters of grid point `index` in panel `p_u`.
    pub fn params_at(&self, index: u64, p_u: f64) -> DgpParams {
        let lengths = self.lengths();
        let mut digits = [0usize; 12];
        let mut rest = index;
        for i in (0..12).rev() {
            digits[i] = (rest % lengths[i] as u64) as usize;
            rest /= lengths[i] as u64;
        }
        self.params_with(&digits, p_u)
    }
}

/// Oracle values at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub grid_index: u64,
    pub params: DgpParams,
    pub report: OracleReport,
    /// Every `pi_0(a, l, u) < 0.1`.
    pub rare: bool,
    /// `U` is non-degenerate and enters at least one of the two models.
    pub u_dependence: bool,
}

impl SweepPoint {
    pub fn new(grid_index: u64, params: DgpParams) -> Self {
        let t = &params.theta;
        let b = &params.beta;
        let enters = t[4..].iter().chain(&b[4..]).any(|&c| c != 0.0);
        Self {
            grid_index,
            report: error_decomposition(&params),
            rare: params.competing_event_rare(RARE_THRESHOLD),
            u_dependence: params.p_u > 0.0 && params.p_u < 1.0 && enters,
            params,
        }
    }
}

/// Grid indices to evaluate: all of them, or `count` distinct indices drawn
/// uniformly with RNG stream `(seed, 0)`, in increasing order.
fn selected_indices(grid: &SweepGrid, subsample: Option<(usize, u64)>) -> Result<Vec<u64>> {
    let total = grid.size();
    if total > usize::MAX as u128 || total > u64::MAX as u128 {
        return Err(Error::InvalidParams(format!(
            "grid of {total} points is too large"
        )));
    }
    let total = total as usize;
    match subsample {
        Some((count, seed)) if count < total => {
            let mut rng = stream_rng(seed, 0);
            let mut idx: Vec<u64> = index::sample(&mut rng, total, count)
                .into_iter()
                .map(|i| i as u64)
                .collect();
            idx.sort_unstable();
            Ok(idx)
        }
        _ => Ok((0..total as u64).collect()),
    }
}

const SWEEP_BLOCK: usize = 1 << 15;

/// Evaluate the oracle over the grid, handing points to `sink` in a fixed
/// order (panel, then grid index) while holding only one block in memory.
pub fn run_error_sweep_streaming(
    grid: &SweepGrid,
    subsample: Option<(usize, u64)>,
    jobs: usize,
    mut sink: impl FnMut(&SweepPoint) -> Result<()>,
) -> Result<()> {
    grid.validate()?;
    let indices = selected_indices(grid, subsample)?;
    for &p_u in &grid.p_u {
        for block in indices.chunks(SWEEP_BLOCK) {
            let points: Vec<SweepPoint> = with_pool(jobs, || {
                block
                    .par_iter()
                    .map(|&i| SweepPoint::new(i, grid.params_at(i, p_u)))
                    .collect()
            })?;
            for p in &points {
                sink(p)?;
            }
        }
    }
    Ok(())
}

pub fn run_error_sweep(
    grid: &SweepGrid,
    subsample: Option<(usize, u64)>,
    jobs: usize,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    run_error_sweep_streaming(grid, subsample, jobs, |p| {
        out.push(p.clone());
        Ok(())
    })?;
    Ok(out)
}

/// Tally of `(x, y)` sign pairs. Points with either coordinate exactly 0
/// are counted as on an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct QuadrantCounts {
    pub pos_pos: u64,
    pub pos_neg: u64,
    pub neg_pos: u64,
    pub neg_neg: u64,
    pub on_axis: u64,
}

impl QuadrantCounts {
    pub fn add(&mut self, x: f64, y: f64) {
        match (x.partial_cmp(&0.0), y.partial_cmp(&0.0)) {
            (Some(std::cmp::Ordering::Greater), Some(std::cmp::Ordering::Greater)) => {
                self.pos_pos += 1
            }
            (Some(std::cmp::Ordering::Greater), Some(std::cmp::Ordering::Less)) => {
                self.pos_neg += 1
            }
            (Some(std::cmp::Ordering::Less), Some(std::cmp::Ordering::Greater)) => {
                self.neg_pos += 1
            }
            (Some(std::cmp::Ordering::Less), Some(std::cmp::Ordering::Less)) => self.neg_neg += 1,
            _ => self.on_axis += 1,
        }
    }

    /// Points in the two off-diagonal quadrants.
    pub fn disagreements(&self) -> u64 {
        self.pos_neg + self.neg_pos
    }
}

/// Summary of one panel: a `p_u` value and a rare / non-rare tag.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelSummary {
    pub p_u: f64,
    pub rare: bool,
    pub points: u64,
    /// `x = cde0`, `y = sde0[a_d]`, indexed by `a_d`.
    pub cde_vs_sde: [QuadrantCounts; 2],
    /// `x = cde0`, `y = cde_obs`.
    pub cde_vs_target: QuadrantCounts,
    /// `x = sde0[a_d]`, `y = sde_obs[a_d]`.
    pub sde_vs_target: [QuadrantCounts; 2],
    pub max_abs_estimand_error: [f64; 2],
    pub max_abs_ni_error_cde: f64,
    pub max_abs_ni_error_sde: [f64; 2],
}

impl PanelSummary {
    fn new(p_u: f64, rare: bool) -> Self {
        Self {
            p_u,
            rare,
            points: 0,
            cde_vs_sde: Default::default(),
            cde_vs_target: Default::default(),
            sde_vs_target: Default::default(),
            max_abs_estimand_error: [0.0; 2],
            max_abs_ni_error_cde: 0.0,
            max_abs_ni_error_sde: [0.0; 2],
        }
    }

    fn add(&mut self, p: &SweepPoint) {
        let r = &p.report;
        self.points += 1;
        self.cde_vs_target.add(r.cde0, r.cde_obs);
        self.max_abs_ni_error_cde = self.max_abs_ni_error_cde.max(r.ni_error_cde.abs());
        for ad in 0..2 {
            self.cde_vs_sde[ad].add(r.cde0, r.sde0[ad]);
            self.sde_vs_target[ad].add(r.sde0[ad], r.sde_obs[ad]);
            self.max_abs_estimand_error[ad] =
                self.max_abs_estimand_error[ad].max(r.estimand_error[ad].abs());
            self.max_abs_ni_error_sde[ad] =
                self.max_abs_ni_error_sde[ad].max(r.ni_error_sde[ad].abs());
        }
    }

    /// `max |ni_error_cde| >= max |ni_error_sde[a_d]|`, per `a_d`.
    pub fn ni_cde_dominates(&self) -> [bool; 2] {
        [
            self.max_abs_ni_error_cde >= self.max_abs_ni_error_sde[0],
            self.max_abs_ni_error_cde >= self.max_abs_ni_error_sde[1],
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub points: u64,
    /// Ordered by `p_u`, then non-rare before rare.
    pub panels: Vec<PanelSummary>,
}

impl SweepSummary {
    pub fn panel(&self, p_u: f64, rare: bool) -> Option<&PanelSummary> {
        self.panels.iter().find(|p| p.p_u == p_u && p.rare == rare)
    }

    pub fn sign_disagreements(&self, a_d: usize) -> u64 {
        self.panels
            .iter()
            .map(|p| p.cde_vs_sde[a_d].disagreements())
            .sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("summary serializes");
        if let Some(panels) = v.get_mut("panels").and_then(|p| p.as_array_mut()) {
            for (json, p) in panels.iter_mut().zip(&self.panels) {
                json["ni_cde_dominates"] = serde_json::json!(p.ni_cde_dominates());
                json["sign_disagreements"] = serde_json::json!([
                    p.cde_vs_sde[0].disagreements(),
                    p.cde_vs_sde[1].disagreements()
                ]);
            }
        }
        v
    }
}

/// Incremental [`classify_quadrants`] for streamed sweeps.
#[derive(Debug, Clone, Default)]
pub struct SweepAccumulator {
    panels: BTreeMap<(u64, bool), PanelSummary>,
    points: u64,
}

impl SweepAccumulator {
    pub fn add(&mut self, p: &SweepPoint) {
        self.points += 1;
        self.panels
            .entry((p.params.p_u.to_bits(), p.rare))
            .or_insert_with(|| PanelSummary::new(p.params.p_u, p.rare))
            .add(p);
    }

    pub fn finish(self) -> SweepSummary {
        SweepSummary {
            points: self.points,
            panels: self.panels.into_values().collect(),
        }
    }
}

pub fn classify_quadrants(points: &[SweepPoint]) -> Result<SweepSummary> {
    if points.is_empty() {
        return Err(Error::InsufficientData(
            "no sweep points to classify".into(),
        ));
    }
    let mut acc = SweepAccumulator::default();
    for p in points {
        acc.add(p);
    }
    Ok(acc.finish())
}

pub fn write_sweep_csv_header<W: Write>(w: &mut csv::Writer<W>) -> Result<()> {
    let mut header: Vec<String> = vec![
        "grid_index".into(),
        "p_u".into(),
        "rare".into(),
        "u_dependence".into(),
    ];
    header.extend((0..7).map(|i| format!("theta{i}")));
    header.extend((0..7).map(|i| format!("beta{i}")));
    header.push("p_l".into());
    header.extend(
        error_decomposition(&DgpParams::new([0.0; 7], [0.0; 7], 0.5, 0.5))
            .fields()
            .into_iter()
            .map(|(name, _)| name),
    );
    w.write_record(&header)?;
    Ok(())
}

pub fn write_sweep_row<W: Write>(w: &mut csv::Writer<W>, p: &SweepPoint) -> Result<()> {
    let mut row: Vec<String> = vec![
        p.grid_index.to_string(),
        p.params.p_u.to_string(),
        (p.rare as u8).to_string(),
        (p.u_dependence as u8).to_string(),
    ];
    row.extend(p.params.theta.iter().map(|v| v.to_string()));
    row.extend(p.params.beta.iter().map(|v| v.to_string()));
    row.push(p.params.p_l.to_string());
    row.extend(p.report.fields().into_iter().map(|(_, v)| v.to_string()));
    w.write_record(&row)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_point_grid() -> SweepGrid {
        SweepGrid {
            theta0: -1.0,
            beta0: -1.0,
            p_l: 0.5,
            p_u: vec![0.5],
            levels: vec![vec![0.0]; 12],
        }
    }

    #[test]
    fn index_decoding_matches_digit_order() {
        let g = SweepGrid::standard(-1.0);
        assert_eq!(g.size(), 4u128.pow(12));
        let p = g.params_at(1, 0.5);
        assert_eq!(p.beta[6], -0.5);
        assert_eq!(p.theta[1], -1.0);
        let last = g.params_at(4u64.pow(12) - 1, 0.5);
        assert!(last.theta[1..]
            .iter()
            .chain(&last.beta[1..])
            .all(|&v| v == 1.0));
    }

    #[test]
    fn subsample_is_sorted_distinct_and_seeded() {
        let g = SweepGrid::standard(-1.0);
        let a = selected_indices(&g, Some((1000, 5))).unwrap();
        let b = selected_indices(&g, Some((1000, 5))).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a.len(), 1000);
    }

    #[test]
    fn zero_interaction_point_has_no_estimand_error() {
        let pts = run_error_sweep(&single_point_grid(), None, 1).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].report.estimand_error, [0.0, 0.0]);
        assert!(!pts[0].u_dependence);
    }

    #[test]
    fn quadrant_definitions() {
        let mut q = QuadrantCounts::default();
        q.add(0.02, -0.01);
        q.add(0.02, 0.01);
        q.add(0.0, 0.01);
        assert_eq!(q.disagreements(), 1);
        assert_eq!(q.pos_pos, 1);
        assert_eq!(q.on_axis, 1);
    }

    #[test]
    fn diagonal_points_never_disagree() {
        let mut q = QuadrantCounts::default();
        for x in [-0.3, -0.1, 0.2, 0.5] {
            q.add(x, x);
        }
        assert_eq!(q.disagreements(), 0);
    }

    #[test]
    fn empty_classification_is_an_error() {
        assert!(classify_quadrants(&[]).is_err());
    }
}
