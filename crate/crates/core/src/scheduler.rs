//! User-to-beam scheduling.
//!
//! Matching runs in two stages. Deferred acceptance on scalar gains gives a
//! stable starting point; swap matching then exchanges pairs of users while
//! every affected user and beam is at least as well off, evaluating rates
//! under a fixed power rule so that inter-beam interference (externalities)
//! is accounted for. Exhaustive search over every schedule and decoding
//! order, each solved by branch-and-bound, serves as the optimal reference.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bb::{solve_bb, BbReport};
use crate::channel::GainMatrix;
use crate::error::{Error, Result};
use crate::feasibility::check_qos_feasible;
use crate::rates::{achievable_rates, Assignment, PowerAllocation};

/// Ratio between the power shares of consecutive decoding positions.
pub const INTRA_BEAM_RATIO: f64 = 1.0 / 3.0;
/// Slack under which a utility change counts as no change.
pub const SWAP_TOL: f64 = 1e-12;
/// Largest number of (schedule, order) candidates exhaustive search accepts.
pub const MAX_EXHAUSTIVE_CANDIDATES: u128 = 100_000;

/// Fixed power rule: `p_tot / M` per loaded beam, split inside the beam with
/// weights `INTRA_BEAM_RATIO^pos`, so the first-decoded user gets the most.
pub fn fixed_power_allocation(a: &Assignment, p_tot: f64) -> Result<PowerAllocation> {
    if !(p_tot.is_finite() && p_tot >= 0.0) {
        return Err(Error::InvalidInput(format!("power budget {p_tot} is not finite and nonnegative")));
    }
    let beam_power = p_tot / a.num_beams() as f64;
    let mut powers = Vec::with_capacity(a.num_scheduled());
    for users in a.beams() {
        let weights: Vec<f64> = (0..users.len()).map(|pos| INTRA_BEAM_RATIO.powi(pos as i32)).collect();
        let total: f64 = weights.iter().sum();
        powers.extend(weights.iter().map(|w| beam_power * w / total));
    }
    PowerAllocation::new(powers)
}

/// Rate of every user (zero when unscheduled) under the fixed power rule.
pub fn user_values(a: &Assignment, g: &GainMatrix, p_tot: f64, noise_power: f64) -> Result<Vec<f64>> {
    let p = fixed_power_allocation(a, p_tot)?;
    let rates = achievable_rates(g, a, &p, noise_power)?;
    let mut values = vec![0.0; a.num_users()];
    for (slot, r) in a.slots().iter().zip(&rates.rate) {
        values[slot.user] = *r;
    }
    Ok(values)
}

/// Decoding key of user `k` on beam `m`: own gain over the interference it
/// sees from the other loaded beams at `p_tot / M` each, plus noise.
fn effective_gain(g: &GainMatrix, loaded: &[bool], k: usize, m: usize, beam_power: f64, noise_power: f64) -> f64 {
    let interference: f64 = (0..g.num_beams()).filter(|&n| n != m && loaded[n]).map(|n| g.get(k, n) * beam_power).sum();
    g.get(k, m) / (interference + noise_power)
}

/// Reorders every beam by ascending effective gain (lower user index first
/// on ties). With one beam this is ascending gain; with several it keeps the
/// SIC conditions satisfiable as power grows.
pub fn effective_gain_order(a: &Assignment, g: &GainMatrix, p_tot: f64, noise_power: f64) -> Result<Assignment> {
    let loaded: Vec<bool> = a.beams().iter().map(|b| !b.is_empty()).collect();
    let beam_power = p_tot / a.num_beams() as f64;
    let beams = a
        .beams()
        .iter()
        .enumerate()
        .map(|(m, users)| {
            let mut u = users.clone();
            u.sort_by(|&x, &y| {
                effective_gain(g, &loaded, x, m, beam_power, noise_power)
                    .total_cmp(&effective_gain(g, &loaded, y, m, beam_power, noise_power))
                    .then(x.cmp(&y))
            });
            u
        })
        .collect();
    Assignment::new(a.num_users(), a.quotas().to_vec(), beams)
}

/// Preference value of user `k`: its rate under `a` with the fixed power rule.
pub fn preference_value_user(k: usize, a: &Assignment, g: &GainMatrix, p_tot: f64, noise_power: f64) -> Result<f64> {
    Ok(user_values(a, g, p_tot, noise_power)?[k])
}

/// Preference value of beam `m`: the sum of its users' preference values.
pub fn preference_value_beam(m: usize, a: &Assignment, g: &GainMatrix, p_tot: f64, noise_power: f64) -> Result<f64> {
    let values = user_values(a, g, p_tot, noise_power)?;
    Ok(a.beam_users(m).iter().map(|&k| values[k]).sum())
}

/// Beams ranked by `g[k][m]` descending, lower beam index first on ties.
pub fn user_preferences(g: &GainMatrix, k: usize) -> Vec<usize> {
    let mut beams: Vec<usize> = (0..g.num_beams()).collect();
    beams.sort_by(|&x, &y| g.get(k, y).total_cmp(&g.get(k, x)).then(x.cmp(&y)));
    beams
}

/// True when beam `m` ranks user `x` above user `y`.
fn beam_prefers(g: &GainMatrix, m: usize, x: usize, y: usize) -> bool {
    match g.get(x, m).total_cmp(&g.get(y, m)) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => x < y,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub assignment: Assignment,
    /// `rejected[k]` lists the beams that turned user `k` down, in order.
    pub rejected: Vec<Vec<usize>>,
    pub proposals: usize,
}

/// User-proposing deferred acceptance on scalar gains. Each beam keeps its
/// `q_m` best proposers; decoding order is ascending gain.
pub fn deferred_acceptance(g: &GainMatrix, quotas: &[usize]) -> Result<Matching> {
    if quotas.len() != g.num_beams() {
        return Err(Error::Dimension(format!("{} quotas for {} beams", quotas.len(), g.num_beams())));
    }
    let k_users = g.num_users();
    let prefs: Vec<Vec<usize>> = (0..k_users).map(|k| user_preferences(g, k)).collect();
    let mut next = vec![0usize; k_users];
    let mut held: Vec<Vec<usize>> = vec![Vec::new(); g.num_beams()];
    let mut rejected = vec![Vec::new(); k_users];
    let mut free: Vec<usize> = (0..k_users).rev().collect();
    let mut proposals = 0;
    while let Some(k) = free.pop() {
        if next[k] >= prefs[k].len() {
            continue;
        }
        let m = prefs[k][next[k]];
        next[k] += 1;
        proposals += 1;
        held[m].push(k);
        if held[m].len() > quotas[m] {
            // Evict the least preferred holder.
            let worst = (0..held[m].len())
                .min_by(|&i, &j| {
                    if beam_prefers(g, m, held[m][i], held[m][j]) {
                        std::cmp::Ordering::Greater
                    } else {
                        std::cmp::Ordering::Less
                    }
                })
                .expect("beam holds at least one user");
            let out = held[m].swap_remove(worst);
            rejected[out].push(m);
            free.push(out);
        }
    }
    Ok(Matching { assignment: Assignment::with_ascending_order(g, quotas.to_vec(), held)?, rejected, proposals })
}

/// Utilities of the four agents touched by a swap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentValues {
    pub user_k: f64,
    pub user_j: f64,
    pub beam_m: f64,
    /// Zero when `j` was unscheduled.
    pub beam_n: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwapRecord {
    pub k: usize,
    pub j: usize,
    /// Beam of `k` before the swap.
    pub m: usize,
    /// Beam of `j` before the swap; `None` when `j` was unscheduled.
    pub n: Option<usize>,
    pub before: AgentValues,
    pub after: AgentValues,
}

impl SwapRecord {
    /// Every agent weakly better off and at least one strictly.
    pub fn is_improving(&self) -> bool {
        let pairs = [
            (self.before.user_k, self.after.user_k),
            (self.before.user_j, self.after.user_j),
            (self.before.beam_m, self.after.beam_m),
            (self.before.beam_n, self.after.beam_n),
        ];
        pairs.iter().all(|(b, a)| a - b >= -SWAP_TOL) && pairs.iter().any(|(b, a)| a - b > SWAP_TOL)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwapOutcome {
    pub assignment: Assignment,
    pub swaps: Vec<SwapRecord>,
    /// Set when the swap cap stopped the search.
    pub cap_hit: bool,
}

/// `a` with users `k` (scheduled) and `j` exchanged, re-sorted by effective gain.
fn exchanged(a: &Assignment, g: &GainMatrix, k: usize, j: usize, p_tot: f64, noise_power: f64) -> Result<Assignment> {
    let beams: Vec<Vec<usize>> = a
        .beams()
        .iter()
        .map(|users| {
            users
                .iter()
                .map(|&u| if u == k { j } else if u == j { k } else { u })
                .collect()
        })
        .collect();
    effective_gain_order(&Assignment::new(a.num_users(), a.quotas().to_vec(), beams)?, g, p_tot, noise_power)
}

/// Evaluates the exchange of `k` (scheduled) with `j` (on another beam or
/// unscheduled). Returns `None` when the pair is not an exchange candidate.
pub fn evaluate_swap(
    a: &Assignment,
    g: &GainMatrix,
    k: usize,
    j: usize,
    p_tot: f64,
    noise_power: f64,
) -> Result<Option<(SwapRecord, Assignment)>> {
    let Some(m) = a.beam_of(k) else { return Ok(None) };
    let n = a.beam_of(j);
    if k == j || n == Some(m) {
        return Ok(None);
    }
    let before_users = user_values(a, g, p_tot, noise_power)?;
    let swapped = exchanged(a, g, k, j, p_tot, noise_power)?;
    let after_users = user_values(&swapped, g, p_tot, noise_power)?;
    let beam_sum = |asg: &Assignment, vals: &[f64], b: usize| asg.beam_users(b).iter().map(|&u| vals[u]).sum::<f64>();
    let values = |asg: &Assignment, vals: &[f64]| AgentValues {
        user_k: vals[k],
        user_j: vals[j],
        beam_m: beam_sum(asg, vals, m),
        beam_n: n.map_or(0.0, |n| beam_sum(asg, vals, n)),
    };
    let record =
        SwapRecord { k, j, m, n, before: values(a, &before_users), after: values(&swapped, &after_users) };
    Ok(Some((record, swapped)))
}

/// First swap-blocking pair in lexicographic `(k, j)` order, if any.
pub fn find_blocking_pair(
    a: &Assignment,
    g: &GainMatrix,
    p_tot: f64,
    noise_power: f64,
) -> Result<Option<(SwapRecord, Assignment)>> {
    for k in 0..a.num_users() {
        for j in 0..a.num_users() {
            // Each unordered pair once, keyed by its scheduled member first.
            let scheduled_k = a.beam_of(k).is_some();
            let scheduled_j = a.beam_of(j).is_some();
            let (x, y) = match (scheduled_k, scheduled_j) {
                (true, true) if k < j => (k, j),
                (true, false) => (k, j),
                (false, true) => continue,
                _ => continue,
            };
            if let Some((rec, swapped)) = evaluate_swap(a, g, x, y, p_tot, noise_power)? {
                if rec.is_improving() {
                    return Ok(Some((rec, swapped)));
                }
            }
        }
    }
    Ok(None)
}

/// Swap matching from `init`, whose beams are first put in effective-gain
/// order. The scan restarts after each executed swap; at most `M^2 q^2`
/// swaps run, with `q` the largest quota.
pub fn swap_phase(init: &Assignment, g: &GainMatrix, p_tot: f64, noise_power: f64) -> Result<SwapOutcome> {
    let q = init.quotas().iter().copied().max().unwrap_or(0);
    let cap = init.num_beams().pow(2) * q.pow(2);
    let mut current = effective_gain_order(init, g, p_tot, noise_power)?;
    let mut swaps = Vec::new();
    loop {
        let Some((rec, next)) = find_blocking_pair(&current, g, p_tot, noise_power)? else {
            return Ok(SwapOutcome { assignment: current, swaps, cap_hit: false });
        };
        if swaps.len() >= cap {
            return Ok(SwapOutcome { assignment: current, swaps, cap_hit: true });
        }
        swaps.push(rec);
        current = next;
    }
}

/// Deferred acceptance followed by swap matching.
pub fn matching_schedule(g: &GainMatrix, quotas: &[usize], p_tot: f64, noise_power: f64) -> Result<SwapOutcome> {
    let init = deferred_acceptance(g, quotas)?;
    swap_phase(&init.assignment, g, p_tot, noise_power)
}

/// Uniformly random schedule: a random permutation fills beam 0's quota,
/// then beam 1's, and so on; decoding order is ascending gain.
pub fn random_schedule(g: &GainMatrix, quotas: &[usize], seed: u64) -> Result<Assignment> {
    let need: usize = quotas.iter().sum();
    if need > g.num_users() {
        return Err(Error::InvalidInput(format!("quotas need {need} users, only {} exist", g.num_users())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users: Vec<usize> = (0..g.num_users()).collect();
    users.shuffle(&mut rng);
    let mut beams = Vec::with_capacity(quotas.len());
    let mut it = users.into_iter();
    for &q in quotas {
        beams.push(it.by_ref().take(q).collect());
    }
    Assignment::with_ascending_order(g, quotas.to_vec(), beams)
}

/// Number of (schedule, decoding order) candidates: ordered selections of
/// `sum q` users out of `K`.
pub fn exhaustive_candidate_count(num_users: usize, quotas: &[usize]) -> u128 {
    let need: usize = quotas.iter().sum();
    if need > num_users {
        return 0;
    }
    ((num_users - need + 1)..=num_users).map(|v| v as u128).product()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveOutcome {
    /// Best schedule; `None` when no candidate is feasible.
    pub assignment: Option<Assignment>,
    pub report: BbReport,
    pub candidates: usize,
    pub feasible_candidates: usize,
}

/// Every schedule with every decoding order; candidates failing the QoS
/// power check are skipped and the rest solved by branch-and-bound. Ties go
/// to the lexicographically first candidate.
///
/// `min_rates_by_user` holds one rate floor per user.
pub fn exhaustive_schedule(
    g: &GainMatrix,
    quotas: &[usize],
    min_rates_by_user: &[f64],
    p_tot: f64,
    noise_power: f64,
    epsilon: f64,
) -> Result<ExhaustiveOutcome> {
    if quotas.len() != g.num_beams() || min_rates_by_user.len() != g.num_users() {
        return Err(Error::Dimension("quotas and rate floors must match the gain matrix".into()));
    }
    let need: usize = quotas.iter().sum();
    if need > g.num_users() {
        return Err(Error::InvalidInput(format!("quotas need {need} users, only {} exist", g.num_users())));
    }
    let count = exhaustive_candidate_count(g.num_users(), quotas);
    if count > MAX_EXHAUSTIVE_CANDIDATES {
        return Err(Error::SearchSpaceTooLarge(count));
    }
    let mut best: Option<(Assignment, BbReport)> = None;
    let mut candidates = 0;
    let mut feasible = 0;
    let mut order = Vec::with_capacity(need);
    let mut used = vec![false; g.num_users()];
    let mut visit = |seq: &[usize]| -> Result<()> {
        candidates += 1;
        let mut beams = Vec::with_capacity(quotas.len());
        let mut offset = 0;
        for &q in quotas {
            beams.push(seq[offset..offset + q].to_vec());
            offset += q;
        }
        let a = Assignment::new(g.num_users(), quotas.to_vec(), beams)?;
        let floors: Vec<f64> = a.slots().iter().map(|s| min_rates_by_user[s.user]).collect();
        if !check_qos_feasible(g, &a, &floors, p_tot, noise_power)?.member {
            return Ok(());
        }
        let report = solve_bb(g, &a, &floors, p_tot, noise_power, epsilon)?;
        if report.best_power.is_none() {
            return Ok(());
        }
        feasible += 1;
        if best.as_ref().is_none_or(|(_, b)| report.sum_rate() > b.sum_rate()) {
            best = Some((a, report));
        }
        Ok(())
    };
    enumerate(need, &mut order, &mut used, &mut visit)?;
    Ok(match best {
        Some((a, report)) => ExhaustiveOutcome { assignment: Some(a), report, candidates, feasible_candidates: feasible },
        None => ExhaustiveOutcome {
            assignment: None,
            report: BbReport {
                best_value: 0.0,
                best_power: None,
                gap_history: Vec::new(),
                iterations: 0,
                status: crate::bb::BbStatus::Infeasible,
            },
            candidates,
            feasible_candidates: 0,
        },
    })
}

/// Visits every ordered selection of `len` distinct users in lexicographic order.
fn enumerate(
    len: usize,
    seq: &mut Vec<usize>,
    used: &mut [bool],
    visit: &mut impl FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    if seq.len() == len {
        return visit(seq);
    }
    for u in 0..used.len() {
        if used[u] {
            continue;
        }
        used[u] = true;
        seq.push(u);
        enumerate(len, seq, used, visit)?;
        seq.pop();
        used[u] = false;
    }
    Ok(())
}
