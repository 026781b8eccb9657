//! Epsilon-optimal power allocation by branch-and-bound over SINR boxes.
//!
//! The problem is recast as minimizing `U(gamma) = -sum log2(1 + gamma_s)`
//! over the achievable SINR region, which is closed under decreasing any
//! coordinate down to the QoS floors. `U` is decreasing in every coordinate,
//! so on a box `[lo, hi]` the value `U(hi)` bounds the optimum from below and,
//! when `lo` is achievable, `U(lo)` is attained by the minimal power vector
//! for `lo`. Boxes whose lower corner is not achievable hold no achievable
//! point and are discarded.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector};

use crate::channel::GainMatrix;
use crate::error::{Error, Result};
use crate::feasibility::{build_matrices, check_membership, check_qos_feasible, SinrTarget};
use crate::rates::{achievable_rates, sic_order_ok, Assignment, PowerAllocation};

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_MAX_NODES: usize = 100_000;

/// `-sum_s log2(1 + gamma_s)`.
pub fn objective(t: &[f64]) -> f64 {
    -t.iter().map(|g| (1.0 + g).log2()).sum::<f64>()
}

/// Axis-aligned box `[lower, upper]` of per-slot SINR values.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SinrBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension(format!("box corners of length {} and {}", lower.len(), upper.len())));
        }
        let bad = lower.iter().zip(&upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && *l >= 0.0 && l <= u));
        if bad {
            return Err(Error::InvalidInput("box needs finite corners with 0 <= lower <= upper".into()));
        }
        Ok(SinrBox { lower, upper })
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    /// Index of the longest edge; ties go to the lowest index.
    pub fn longest_edge(&self) -> usize {
        let mut best = 0;
        for i in 1..self.dim() {
            if self.upper[i] - self.lower[i] > self.upper[best] - self.lower[best] {
                best = i;
            }
        }
        best
    }
}

/// Splits a box at the midpoint of its longest edge.
pub fn bisect(b: &SinrBox) -> (SinrBox, SinrBox) {
    let i = b.longest_edge();
    let mid = 0.5 * (b.lower[i] + b.upper[i]);
    let mut left = b.clone();
    let mut right = b.clone();
    left.upper[i] = mid;
    right.lower[i] = mid;
    (left, right)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BbNode {
    pub sinr_box: SinrBox,
    /// `U(upper corner)` when the lower corner is achievable, else 0.
    pub lower_bound: f64,
    /// `U(lower corner)` when the lower corner is achievable, else 0.
    pub upper_bound: f64,
    /// Power vector achieving the lower corner.
    pub feasible_point: Option<PowerAllocation>,
}

impl BbNode {
    pub fn is_feasible(&self) -> bool {
        self.feasible_point.is_some()
    }
}

pub fn bound_node(b: SinrBox, g: &GainMatrix, a: &Assignment, p_tot: f64, noise_power: f64) -> Result<BbNode> {
    let verdict = check_membership(g, a, &SinrTarget::new(b.lower.clone())?, p_tot, noise_power)?;
    if !verdict.member {
        return Ok(BbNode { sinr_box: b, lower_bound: 0.0, upper_bound: 0.0, feasible_point: None });
    }
    Ok(BbNode {
        lower_bound: objective(&b.upper),
        upper_bound: objective(&b.lower),
        feasible_point: verdict.min_power_vector,
        sinr_box: b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BbStatus {
    Converged,
    Infeasible,
    IterationCap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapRecord {
    pub iteration: usize,
    /// Incumbent objective `U(t)`.
    pub upper: f64,
    /// Smallest lower bound over open boxes `L(t)`.
    pub lower: f64,
    pub open_nodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BbReport {
    /// Best objective found; its magnitude is the sum rate in bits/s/Hz.
    pub best_value: f64,
    pub best_power: Option<PowerAllocation>,
    pub gap_history: Vec<GapRecord>,
    pub iterations: usize,
    pub status: BbStatus,
}

impl BbReport {
    pub fn sum_rate(&self) -> f64 {
        -self.best_value
    }

    fn infeasible() -> Self {
        BbReport { best_value: 0.0, best_power: None, gap_history: Vec::new(), iterations: 0, status: BbStatus::Infeasible }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BbOptions {
    pub epsilon: f64,
    pub max_nodes: usize,
}

impl Default for BbOptions {
    fn default() -> Self {
        BbOptions { epsilon: DEFAULT_EPSILON, max_nodes: DEFAULT_MAX_NODES }
    }
}

/// Open box keyed by lower bound, then insertion order.
struct Open {
    lower_bound: f64,
    seq: usize,
    sinr_box: SinrBox,
}

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Open {}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Open {
    // Reversed so that `BinaryHeap` pops the smallest bound, oldest first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.lower_bound.total_cmp(&self.lower_bound).then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Incumbent {
    value: f64,
    power: Option<PowerAllocation>,
}

impl Incumbent {
    /// Scores a feasible power vector by its true sum rate, and the same vector
    /// scaled up to the budget when that keeps every SIC order constraint.
    fn offer(&mut self, beta: &PowerAllocation, g: &GainMatrix, a: &Assignment, p_tot: f64, noise_power: f64) -> Result<()> {
        self.consider(beta.clone(), g, a, noise_power)?;
        let total = beta.total();
        if total > 0.0 && total < p_tot {
            let scaled = beta.scaled(p_tot / total);
            if sic_order_ok(g, a, &scaled, noise_power)?.ok {
                self.consider(scaled, g, a, noise_power)?;
            }
        }
        Ok(())
    }

    fn consider(&mut self, beta: PowerAllocation, g: &GainMatrix, a: &Assignment, noise_power: f64) -> Result<()> {
        let value = -achievable_rates(g, a, &beta, noise_power)?.sum_rate();
        if value < self.value {
            self.value = value;
            self.power = Some(beta);
        }
        Ok(())
    }
}

/// Branch-and-bound with the default node cap.
pub fn solve_bb(
    g: &GainMatrix,
    a: &Assignment,
    min_rates: &[f64],
    p_tot: f64,
    noise_power: f64,
    epsilon: f64,
) -> Result<BbReport> {
    solve_bb_with(g, a, min_rates, p_tot, noise_power, &BbOptions { epsilon, ..BbOptions::default() })
}

pub fn solve_bb_with(
    g: &GainMatrix,
    a: &Assignment,
    min_rates: &[f64],
    p_tot: f64,
    noise_power: f64,
    opts: &BbOptions,
) -> Result<BbReport> {
    if !(opts.epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be positive, got {}", opts.epsilon)));
    }
    if !check_qos_feasible(g, a, min_rates, p_tot, noise_power)?.member {
        return Ok(BbReport::infeasible());
    }
    let floors = SinrTarget::from_rate_floors(min_rates)?;
    let ceiling: Vec<f64> = a
        .slots()
        .iter()
        .zip(floors.as_slice())
        .map(|(s, lo)| (g.get(s.user, s.beam) * p_tot / noise_power).max(*lo))
        .collect();
    let Some(root) = reduce_and_bound(SinrBox::new(floors.as_slice().to_vec(), ceiling)?, f64::INFINITY, g, a, p_tot, noise_power)?
    else {
        return Ok(BbReport::infeasible());
    };
    let mut inc = Incumbent { value: f64::INFINITY, power: None };
    if let Some(beta) = root.feasible_point.as_ref() {
        inc.offer(beta, g, a, p_tot, noise_power)?;
    }

    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    let mut lower = root.lower_bound.min(inc.value);
    if root.lower_bound < inc.value {
        heap.push(Open { lower_bound: root.lower_bound, seq, sinr_box: root.sinr_box });
    }
    let mut history = vec![GapRecord { iteration: 0, upper: inc.value, lower, open_nodes: heap.len() }];
    let mut iterations = 0;
    let status = loop {
        if inc.value - lower <= opts.epsilon {
            break BbStatus::Converged;
        }
        if iterations >= opts.max_nodes {
            break BbStatus::IterationCap;
        }
        let Some(node) = heap.pop() else {
            break BbStatus::Converged;
        };
        iterations += 1;
        let (left, right) = bisect(&node.sinr_box);
        let before = inc.value;
        for child in [left, right] {
            let Some(bounded) = reduce_and_bound(child, inc.value, g, a, p_tot, noise_power)? else {
                continue;
            };
            if let Some(beta) = bounded.feasible_point.as_ref() {
                inc.offer(beta, g, a, p_tot, noise_power)?;
            }
            if bounded.lower_bound < inc.value {
                seq += 1;
                heap.push(Open { lower_bound: bounded.lower_bound, seq, sinr_box: bounded.sinr_box });
            }
        }
        if inc.value < before {
            heap.retain(|o| o.lower_bound < inc.value);
        }
        // A child's bound never undercuts its parent's, so the open minimum is
        // monotone; the max only absorbs floating-point ties.
        let open_min = heap.peek().map_or(inc.value, |o| o.lower_bound.min(inc.value));
        lower = lower.max(open_min);
        history.push(GapRecord { iteration: iterations, upper: inc.value, lower, open_nodes: heap.len() });
    };
    Ok(BbReport { best_value: inc.value, best_power: inc.power, gap_history: history, iterations, status })
}

/// Shrinks a box without losing any achievable point that beats `incumbent`,
/// then bounds it. Returns `None` when nothing of interest is left.
///
/// The lower corner is lifted so that each coordinate alone, with the others
/// at their upper corner, could still beat the incumbent. The upper corner is
/// capped coordinate-wise by the largest target reachable within budget when
/// the other coordinates sit at the (achievable) lower corner.
fn reduce_and_bound(
    mut b: SinrBox,
    incumbent: f64,
    g: &GainMatrix,
    a: &Assignment,
    p_tot: f64,
    noise_power: f64,
) -> Result<Option<BbNode>> {
    if incumbent.is_finite() {
        let logs: Vec<f64> = b.upper.iter().map(|u| (1.0 + u).log2()).collect();
        let total: f64 = logs.iter().sum();
        for s in 0..b.dim() {
            let need = (-incumbent - (total - logs[s])).exp2() - 1.0;
            if need > b.lower[s] {
                b.lower[s] = need;
            }
        }
        if b.lower.iter().zip(&b.upper).any(|(l, u)| l > u) {
            return Ok(None);
        }
    }
    let node = bound_node(b, g, a, p_tot, noise_power)?;
    if !node.is_feasible() {
        return Ok(None);
    }
    let caps = coordinate_caps(node.sinr_box.lower(), g, a, p_tot, noise_power)?;
    let mut b = node.sinr_box;
    for (s, cap) in caps.into_iter().enumerate() {
        b.upper[s] = b.upper[s].min(cap).max(b.lower[s]);
    }
    Ok(Some(BbNode { lower_bound: objective(&b.upper), upper_bound: node.upper_bound, feasible_point: node.feasible_point, sinr_box: b }))
}

/// For each slot `s`, the largest `t` such that targets `lo` with entry `s`
/// replaced by `t` need at most `p_tot` in total, ignoring SIC order
/// constraints. Requires `lo` itself to be achievable.
///
/// With row `s` of `A = Lambda + D G` removed (`A0`), the minimal power is
/// `beta(t) = w + u t kappa / (1 - t theta)` where `(I - A0) w = sigma^2 d0`,
/// `(I - A0) u = e_s`, `kappa = sigma^2 / g_s + v.w`, `theta = v.u` and
/// `t v` is row `s` of `A`.
fn coordinate_caps(lo: &[f64], g: &GainMatrix, a: &Assignment, p_tot: f64, noise_power: f64) -> Result<Vec<f64>> {
    let n = lo.len();
    let mut unit = lo.to_vec();
    let mut caps = Vec::with_capacity(n);
    for s in 0..n {
        unit[s] = 1.0;
        let mats = build_matrices(g, a, &SinrTarget::new(unit.clone())?)?;
        unit[s] = lo[s];
        let mut a0 = mats.interference();
        let v: Vec<f64> = a0.row(s).iter().cloned().collect();
        let own_noise = noise_power * mats.d[s];
        a0.row_mut(s).fill(0.0);
        let mut rhs = &mats.d * noise_power;
        rhs[s] = 0.0;
        let lu = (DMatrix::identity(n, n) - a0).lu();
        let (Some(w), Some(u)) = (lu.solve(&rhs), lu.solve(&DVector::from_fn(n, |i, _| if i == s { 1.0 } else { 0.0 })))
        else {
            caps.push(f64::INFINITY);
            continue;
        };
        let kappa = own_noise + v.iter().zip(w.iter()).map(|(x, y)| x * y).sum::<f64>();
        let theta: f64 = v.iter().zip(u.iter()).map(|(x, y)| x * y).sum();
        let slack = p_tot - w.sum();
        let denom = kappa * u.sum() + theta * slack;
        caps.push(if slack <= 0.0 { lo[s] } else if denom > 0.0 { slack / denom } else { f64::INFINITY });
    }
    Ok(caps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_beam(gains: &[f64]) -> (GainMatrix, Assignment) {
        let g = GainMatrix::from_rows(gains.iter().map(|v| vec![*v]).collect()).unwrap();
        let a = Assignment::new(gains.len(), vec![gains.len()], vec![(0..gains.len()).collect()]).unwrap();
        (g, a)
    }

    #[test]
    fn objective_values() {
        assert_eq!(objective(&[0.0, 0.0]), 0.0);
        assert!((objective(&[1.0, 3.0]) + 3.0).abs() < 1e-15);
    }

    #[test]
    fn bisect_one_dimension() {
        let (l, r) = bisect(&SinrBox::new(vec![0.0], vec![2.0]).unwrap());
        assert_eq!((l.lower(), l.upper()), (&[0.0][..], &[1.0][..]));
        assert_eq!((r.lower(), r.upper()), (&[1.0][..], &[2.0][..]));
    }

    #[test]
    fn bisect_longest_edge_and_ties() {
        let (l, r) = bisect(&SinrBox::new(vec![0.0, 0.0], vec![4.0, 1.0]).unwrap());
        assert_eq!(l.upper(), &[2.0, 1.0]);
        assert_eq!(r.lower(), &[2.0, 0.0]);
        let (l, _) = bisect(&SinrBox::new(vec![0.0, 0.0], vec![3.0, 3.0]).unwrap());
        assert_eq!(l.upper(), &[1.5, 3.0]);
        let parent = SinrBox::new(vec![0.5, 1.0, 0.0], vec![2.0, 5.0, 3.0]).unwrap();
        let (l, r) = bisect(&parent);
        assert!((l.volume() - 0.5 * parent.volume()).abs() < 1e-12);
        assert!((r.volume() - 0.5 * parent.volume()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_lower_corner_gives_zero_bounds() {
        let (g, a) = single_beam(&[1.0]);
        let node = bound_node(SinrBox::new(vec![5.0], vec![6.0]).unwrap(), &g, &a, 1.0, 1.0).unwrap();
        assert_eq!((node.lower_bound, node.upper_bound), (0.0, 0.0));
        assert!(!node.is_feasible());
    }

    #[test]
    fn degenerate_box_bounds_coincide() {
        let (g, a) = single_beam(&[1.0, 4.0]);
        let node = bound_node(SinrBox::new(vec![0.5, 1.0], vec![0.5, 1.0]).unwrap(), &g, &a, 10.0, 1.0).unwrap();
        assert_eq!(node.lower_bound, node.upper_bound);
        assert_eq!(node.lower_bound, objective(&[0.5, 1.0]));
    }

    #[test]
    fn single_user_takes_full_power() {
        let (g, a) = single_beam(&[1.0]);
        let r = solve_bb(&g, &a, &[0.0], 3.0, 1.0, 0.1).unwrap();
        assert_eq!(r.status, BbStatus::Converged);
        assert!(r.sum_rate() <= 2.0 + 1e-12 && r.sum_rate() >= 1.9);
    }

    #[test]
    fn two_user_against_grid() {
        let (g, a) = single_beam(&[1.0, 4.0]);
        let floors = [0.1, 0.1];
        let r = solve_bb(&g, &a, &floors, 2.0, 1.0, 0.1).unwrap();
        assert_eq!(r.status, BbStatus::Converged);
        let mut best: f64 = 0.0;
        let n = 2000;
        for i in 0..=n {
            for j in 0..=(n - i) {
                let p = PowerAllocation::new(vec![2.0 * i as f64 / n as f64, 2.0 * j as f64 / n as f64]).unwrap();
                let rates = achievable_rates(&g, &a, &p, 1.0).unwrap();
                if rates.rate.iter().all(|x| *x >= 0.1) {
                    best = best.max(rates.sum_rate());
                }
            }
        }
        assert!(r.sum_rate() >= best - 0.1 - 1e-3, "bb {} grid {}", r.sum_rate(), best);
        assert!(r.sum_rate() <= best + 1e-3);
    }

    #[test]
    fn history_is_monotone() {
        let g = GainMatrix::from_rows(vec![vec![1.0, 0.1], vec![3.0, 0.2], vec![0.05, 2.0], vec![0.3, 5.0]]).unwrap();
        let a = Assignment::with_ascending_order(&g, vec![2, 2], vec![vec![0, 1], vec![2, 3]]).unwrap();
        let r = solve_bb(&g, &a, &[0.1; 4], 10.0, 1.0, 0.1).unwrap();
        assert_eq!(r.status, BbStatus::Converged);
        for w in r.gap_history.windows(2) {
            assert!(w[1].upper <= w[0].upper);
            assert!(w[1].lower >= w[0].lower);
        }
        let last = r.gap_history.last().unwrap();
        assert!(last.upper - last.lower <= 0.1);
        let p = r.best_power.clone().unwrap();
        let replay = achievable_rates(&g, &a, &p, 1.0).unwrap().sum_rate();
        assert!((replay - r.sum_rate()).abs() < 1e-12);
    }

    #[test]
    fn unreachable_floors_are_infeasible() {
        let (g, a) = single_beam(&[1.0, 2.0]);
        let r = solve_bb(&g, &a, &[5.0, 5.0], 1.0, 1.0, 0.1).unwrap();
        assert_eq!(r.status, BbStatus::Infeasible);
        assert!(r.best_power.is_none());
    }
}
