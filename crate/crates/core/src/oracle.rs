//! Ground-truth steady-state AoI for fixed (non-learning) node mixes.
//!
//! Three evaluators are available. A node whose per-slot success probability
//! is constant has mean age `1/s`. When TDMA nodes make the channel periodic,
//! the expected age at each in-frame phase follows
//! `a[k+1] = 1 + (1 - s[k]) a[k]`, whose periodic fixed point gives the exact
//! time average. Anything else falls back to Monte Carlo on the simulator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aoi::NodeId;
use crate::channel::World;
use crate::error::{Error, Result};
use crate::nodes::{AlohaConfig, FixedProbConfig, LegacyNode, TdmaConfig};

/// A node position as seen by the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OracleNode {
    Tdma(TdmaConfig),
    Aloha(f64),
    Fixed(f64),
    /// Filled from the probability vector under evaluation.
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    Analytic,
    SemiAnalytic,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    SystemMean,
    SystemSum,
    /// Age of the given node position.
    Node(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McBudget {
    pub slots: u64,
    pub seeds: u64,
    pub base_seed: u64,
}

impl Default for McBudget {
    fn default() -> Self {
        McBudget { slots: 200_000, seeds: 5, base_seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoiValues {
    pub per_node_aoi: BTreeMap<NodeId, f64>,
    pub system_sum: f64,
    pub system_mean: f64,
}

impl AoiValues {
    fn from_vec(per_node: Vec<f64>) -> Self {
        let system_sum: f64 = per_node.iter().sum();
        let system_mean = system_sum / per_node.len() as f64;
        AoiValues {
            per_node_aoi: per_node.into_iter().enumerate().map(|(i, a)| (NodeId(i as u32), a)).collect(),
            system_sum,
            system_mean,
        }
    }

    pub fn objective(&self, objective: Objective) -> Result<f64> {
        match objective {
            Objective::SystemMean => Ok(self.system_mean),
            Objective::SystemSum => Ok(self.system_sum),
            Objective::Node(i) => self
                .per_node_aoi
                .get(&NodeId(i as u32))
                .copied()
                .ok_or_else(|| Error::Config(format!("objective node {i} does not exist"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub p_vector: Vec<f64>,
    pub per_node_aoi: BTreeMap<NodeId, f64>,
    pub system_sum: f64,
    pub system_mean: f64,
    pub method: OracleMethod,
    pub mc_slots: u64,
    pub mc_seeds: u64,
    /// Exact values when the mix admits them.
    pub analytic: Option<AoiValues>,
    /// Largest relative gap between simulated and exact per-node ages.
    pub discrepancy: Option<f64>,
}

impl OracleResult {
    pub fn values(&self) -> AoiValues {
        AoiValues {
            per_node_aoi: self.per_node_aoi.clone(),
            system_sum: self.system_sum,
            system_mean: self.system_mean,
        }
    }
}

/// Mean age of a node that succeeds independently with probability `s` per slot.
pub fn analytic_bernoulli_aoi(s: f64) -> Result<f64> {
    if !(s > 0.0 && s <= 1.0) {
        return if s == 0.0 {
            Err(Error::NeverSucceeds)
        } else {
            Err(Error::Contract(format!("success probability {s} outside (0, 1]")))
        };
    }
    Ok(1.0 / s)
}

/// Time-average age for a periodic per-slot success profile.
pub fn periodic_renewal_aoi(success: &[f64]) -> Result<f64> {
    if success.is_empty() {
        return Err(Error::NoSamples);
    }
    if success.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::Contract("success probabilities must lie in [0, 1]".into()));
    }
    // One pass over the frame maps a[0] to A + B a[0].
    let (mut a, mut b) = (0.0, 1.0);
    for &s in success {
        a = 1.0 + (1.0 - s) * a;
        b *= 1.0 - s;
    }
    if b >= 1.0 {
        return Err(Error::NeverSucceeds);
    }
    let mut age = a / (1.0 - b);
    let mut total = 0.0;
    for &s in success {
        age = 1.0 + (1.0 - s) * age;
        total += age;
    }
    Ok(total / success.len() as f64)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{p} is not a probability")));
    }
    Ok(())
}

/// Substitutes the probability vector into the free positions.
pub fn fill(nodes: &[OracleNode], p_vector: &[f64]) -> Result<Vec<OracleNode>> {
    let free = nodes.iter().filter(|n| matches!(n, OracleNode::Free)).count();
    if free != p_vector.len() {
        return Err(Error::Config(format!("{free} free positions but {} probabilities", p_vector.len())));
    }
    let mut ps = p_vector.iter();
    nodes
        .iter()
        .map(|n| match n {
            OracleNode::Free => {
                let p = *ps.next().unwrap();
                check_p(p)?;
                Ok(OracleNode::Fixed(p))
            }
            OracleNode::Aloha(q) | OracleNode::Fixed(q) => {
                check_p(*q)?;
                Ok(n.clone())
            }
            OracleNode::Tdma(cfg) => {
                cfg.validate()?;
                Ok(n.clone())
            }
        })
        .collect()
}

/// Exact per-node ages for a filled mix, or `None` if some node can never
/// deliver (its age grows without bound).
pub fn exact_values(filled: &[OracleNode]) -> Result<(OracleMethod, Option<AoiValues>)> {
    if filled.is_empty() {
        return Err(Error::NoActiveNodes);
    }
    let period = filled.iter().fold(1u64, |l, n| match n {
        OracleNode::Tdma(c) => {
            let f = u64::from(c.frame_len);
            l / gcd(l, f) * f
        }
        _ => l,
    });
    let method = if period == 1 { OracleMethod::Analytic } else { OracleMethod::SemiAnalytic };
    let mut per_node = vec![Vec::with_capacity(period as usize); filled.len()];
    for slot in 1..=period {
        let tx: Vec<f64> = filled
            .iter()
            .map(|n| match n {
                OracleNode::Tdma(c) => f64::from(u8::from(crate::nodes::tdma_decide(c, slot))),
                OracleNode::Aloha(q) | OracleNode::Fixed(q) => *q,
                OracleNode::Free => 0.0,
            })
            .collect();
        for (i, series) in per_node.iter_mut().enumerate() {
            let others: f64 = tx.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, t)| 1.0 - t).product();
            series.push(tx[i] * others);
        }
    }
    let mut ages = Vec::with_capacity(filled.len());
    for series in &per_node {
        let age = if method == OracleMethod::Analytic {
            analytic_bernoulli_aoi(series[0])
        } else {
            periodic_renewal_aoi(series)
        };
        match age {
            Ok(a) => ages.push(a),
            Err(Error::NeverSucceeds) => return Ok((method, None)),
            Err(e) => return Err(e),
        }
    }
    Ok((method, Some(AoiValues::from_vec(ages))))
}

/// Simulates the filled mix on the channel model, averaging over seeds.
pub fn monte_carlo(filled: &[OracleNode], budget: McBudget) -> Result<AoiValues> {
    if budget.slots == 0 || budget.seeds == 0 {
        return Err(Error::Config("Monte-Carlo budget must be positive".into()));
    }
    let mut sums = vec![0.0; filled.len()];
    for k in 0..budget.seeds {
        let seed = budget.base_seed + k;
        let mut world = World::new();
        for (i, n) in filled.iter().enumerate() {
            let id = NodeId(i as u32);
            let node = match n {
                OracleNode::Tdma(c) => LegacyNode::tdma(c.clone())?,
                OracleNode::Aloha(q) => LegacyNode::aloha(AlohaConfig::new(*q)?, seed, id)?,
                OracleNode::Fixed(p) => LegacyNode::fixed(FixedProbConfig::new(*p)?, seed, id)?,
                OracleNode::Free => return Err(Error::Config("unfilled free position".into())),
            };
            world.add_node(id, node)?;
        }
        for _ in 0..budget.slots {
            world.step()?;
        }
        for (sum, entry) in sums.iter_mut().zip(world.nodes()) {
            *sum += entry.tracker.average()?;
        }
    }
    Ok(AoiValues::from_vec(sums.into_iter().map(|s| s / budget.seeds as f64).collect()))
}

fn max_rel_gap(mc: &AoiValues, exact: &AoiValues) -> f64 {
    mc.per_node_aoi
        .iter()
        .map(|(id, m)| {
            let e = exact.per_node_aoi[id];
            (m - e).abs() / e
        })
        .fold(0.0, f64::max)
}

/// Evaluates a fixed-policy mix. With a non-zero budget the simulator is
/// run and, where exact values exist, the discrepancy is reported; with a
/// zero budget only the exact values are returned.
pub fn evaluate_fixed(nodes: &[OracleNode], p_vector: &[f64], budget: McBudget) -> Result<OracleResult> {
    let filled = fill(nodes, p_vector)?;
    let (method, exact) = exact_values(&filled)?;
    let run_mc = budget.slots > 0 && budget.seeds > 0;
    let (values, method) = if run_mc {
        (monte_carlo(&filled, budget)?, OracleMethod::MonteCarlo)
    } else {
        let v = exact.clone().ok_or(Error::NeverSucceeds)?;
        (v, method)
    };
    let discrepancy = match (&exact, run_mc) {
        (Some(e), true) => Some(max_rel_gap(&values, e)),
        _ => None,
    };
    Ok(OracleResult {
        p_vector: p_vector.to_vec(),
        per_node_aoi: values.per_node_aoi,
        system_sum: values.system_sum,
        system_mean: values.system_mean,
        method,
        mc_slots: if run_mc { budget.slots } else { 0 },
        mc_seeds: if run_mc { budget.seeds } else { 0 },
        analytic: exact,
        discrepancy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub step: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// One probability shared by every free position instead of one each.
    pub shared: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { step: 0.01, p_min: 0.01, p_max: 0.99, shared: false }
    }
}

impl GridSpec {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.step <= 0.1) {
            return Err(Error::Config(format!("grid step {} outside (0, 0.1]", self.step)));
        }
        if !(0.0..=1.0).contains(&self.p_min) || !(0.0..=1.0).contains(&self.p_max) || self.p_min > self.p_max {
            return Err(Error::Config("grid bounds must satisfy 0 <= p_min <= p_max <= 1".into()));
        }
        let n = ((self.p_max - self.p_min) / self.step + 1e-9).floor() as u64;
        Ok((0..=n).map(|i| ((self.p_min + i as f64 * self.step) * 1e9).round() / 1e9).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptimum {
    pub objective: Objective,
    pub objective_value: f64,
    pub grid_points: usize,
    /// Objective at the optimum's grid neighbours, for local-minimum checks.
    pub neighbours: Vec<(Vec<f64>, f64)>,
    pub result: OracleResult,
}

/// Exhaustive grid search for the fixed probabilities minimising `objective`.
/// Exact values are used on the grid whenever available and Monte Carlo
/// otherwise; the optimum is re-evaluated with the full budget. Ties go to
/// the lexicographically smaller vector.
pub fn best_fixed_p(
    nodes: &[OracleNode],
    grid: GridSpec,
    objective: Objective,
    budget: McBudget,
) -> Result<GridOptimum> {
    let free = nodes.iter().filter(|n| matches!(n, OracleNode::Free)).count();
    if free == 0 {
        return Err(Error::Config("no free position to optimise".into()));
    }
    let dims = if grid.shared { 1 } else { free };
    if dims > 2 {
        return Err(Error::Config(format!("grid over {dims} dimensions is not supported; use a shared grid")));
    }
    let axis = grid.points()?;
    let expand = |v: &[f64]| -> Vec<f64> {
        if grid.shared {
            vec![v[0]; free]
        } else {
            v.to_vec()
        }
    };
    let mut candidates: Vec<Vec<f64>> = axis.iter().map(|&p| vec![p]).collect();
    if dims == 2 {
        candidates = axis.iter().flat_map(|&a| axis.iter().map(move |&b| vec![a, b])).collect();
    }

    let score = |v: &[f64]| -> Result<f64> {
        let filled = fill(nodes, &expand(v))?;
        match exact_values(&filled)? {
            (_, Some(values)) => values.objective(objective),
            (_, None) if budget.slots > 0 => monte_carlo(&filled, budget)?.objective(objective),
            (_, None) => Ok(f64::INFINITY),
        }
    };

    let mut best: Option<(usize, f64)> = None;
    let mut scores = Vec::with_capacity(candidates.len());
    for (i, c) in candidates.iter().enumerate() {
        let s = score(c)?;
        scores.push(s);
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((i, s));
        }
    }
    let (bi, value) = best.expect("grid is never empty");
    let best_v = candidates[bi].clone();

    let n = axis.len();
    let mut neighbours = Vec::new();
    let pos: Vec<usize> = best_v.iter().map(|p| axis.iter().position(|a| a == p).unwrap()).collect();
    for d in 0..dims {
        for step in [-1i64, 1] {
            let j = pos[d] as i64 + step;
            if j < 0 || j >= n as i64 {
                continue;
            }
            let mut idx = pos.clone();
            idx[d] = j as usize;
            let flat = if dims == 2 { idx[0] * n + idx[1] } else { idx[0] };
            neighbours.push((expand(&candidates[flat]), scores[flat]));
        }
    }

    let result = evaluate_fixed(nodes, &expand(&best_v), budget)?;
    Ok(GridOptimum { objective, objective_value: value, grid_points: candidates.len(), neighbours, result })
}
