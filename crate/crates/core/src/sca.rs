//! Power allocation by successive convex approximation.
//!
//! Each rate is bounded below by the tangent-in-log bound
//! `ln(1 + tau) >= mu ln tau + nu`, tight at the current SINR. In log-powers
//! `x = ln beta` the bound is concave, the budget and the QoS floors are
//! convex, and each SIC order constraint becomes convex once its
//! right-hand side `F(x) = sum_i c_i e^{x_i}` is replaced by its tangent plane.
//! Since `F` is convex the tangent under-estimates it, so every subproblem
//! point is feasible for the original problem and the sum rate cannot drop.
//!
//! Subproblems are solved in normalized units `p = beta / P`, `h = g P / sigma^2`.

use nalgebra::{DMatrix, DVector};

use crate::channel::GainMatrix;
use crate::convex::{maximize, BarrierOptions, ConvexProgram, Eval};
use crate::error::{Error, Result};
use crate::feasibility::{check_qos_feasible, max_last_decoded_power, BUDGET_TOL};
use crate::rates::{achievable_rates, qos_ok, sic_order_ok, sinr_floor, Assignment, PowerAllocation};
use crate::scheduler::fixed_power_allocation;

pub const DEFAULT_EPSILON_PRIME: f64 = 0.05;
pub const MAX_SCA_ITERS: usize = 100;
/// Log-power floor in normalized units, keeping subproblems bounded.
const MIN_LOG_POWER: f64 = -40.0;

/// Coefficients `(mu, nu)` of `ln(1 + tau) >= mu ln tau + nu`, tight at `tau_tilde`.
pub fn tighten_bound(tau_tilde: f64) -> Result<(f64, f64)> {
    if !(tau_tilde > 0.0 && tau_tilde.is_finite()) {
        return Err(Error::InvalidInput(format!("anchor SINR must be positive, got {tau_tilde}")));
    }
    let mu = tau_tilde / (1.0 + tau_tilde);
    Ok((mu, tau_tilde.ln_1p() - mu * tau_tilde.ln()))
}

/// `sum_i a_i e^{x_i} - b <= F(x~) + sum_i d_i (x_i - x~_i)`, the tangent form of
/// one SIC order constraint in raw log-powers `x = ln beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedOrder {
    pub beam: usize,
    pub earlier: usize,
    pub later: usize,
    /// Exponential coefficients of the convex side, per slot.
    pub a: Vec<f64>,
    /// Coefficients of `F`, per slot.
    pub c: Vec<f64>,
    pub b: f64,
    pub x_ref: Vec<f64>,
    pub f_ref: f64,
    /// `d_i = c_i e^{x~_i}`.
    pub d: Vec<f64>,
}

impl LinearizedOrder {
    pub fn lhs(&self, x: &[f64]) -> f64 {
        self.a.iter().zip(x).map(|(a, v)| a * v.exp()).sum::<f64>() - self.b
    }

    /// Tangent plane of `F` at `x_ref`.
    pub fn rhs(&self, x: &[f64]) -> f64 {
        self.f_ref + self.d.iter().zip(x).zip(&self.x_ref).map(|((d, v), r)| d * (v - r)).sum::<f64>()
    }

    /// `F(x)` itself.
    pub fn exact_rhs(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, v)| c * v.exp()).sum()
    }

    /// True when the constraint does not depend on `x`.
    pub fn is_constant(&self) -> bool {
        self.a.iter().chain(&self.c).all(|v| *v == 0.0)
    }
}

/// Linearizes every SIC order constraint at `x_ref = ln beta`.
pub fn linearize_order_constraints(
    x_ref: &[f64],
    g: &GainMatrix,
    a: &Assignment,
    noise_power: f64,
) -> Result<Vec<LinearizedOrder>> {
    if x_ref.len() != a.num_scheduled() || x_ref.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::InvalidInput("reference log-powers must match the schedule and be finite".into()));
    }
    let slots = a.slots();
    let mut out = Vec::new();
    for (m, users) in a.beams().iter().enumerate() {
        for (pj, &j) in users.iter().enumerate() {
            for &k in &users[pj + 1..] {
                let (gkm, gjm) = (g.get(k, m), g.get(j, m));
                let mut coef_a = vec![0.0; slots.len()];
                let mut coef_c = vec![0.0; slots.len()];
                for (i, s) in slots.iter().enumerate() {
                    if s.beam != m {
                        coef_a[i] = gjm * g.get(k, s.beam);
                        coef_c[i] = gkm * g.get(j, s.beam);
                    }
                }
                let d: Vec<f64> = coef_c.iter().zip(x_ref).map(|(c, x)| c * x.exp()).collect();
                out.push(LinearizedOrder {
                    beam: m,
                    earlier: j,
                    later: k,
                    f_ref: d.iter().sum(),
                    a: coef_a,
                    c: coef_c,
                    b: (gkm - gjm) * noise_power,
                    x_ref: x_ref.to_vec(),
                    d,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaState {
    /// Log-powers `ln beta` in stacked slot order.
    pub x: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    /// Sum rate after each accepted iterate, starting with the initial point.
    pub objective_history: Vec<f64>,
    pub iteration: usize,
}

impl ScaState {
    /// State anchored at `beta`, with bounds tight at its SINRs.
    pub fn at(beta: &PowerAllocation, g: &GainMatrix, a: &Assignment, noise_power: f64) -> Result<Self> {
        let rates = achievable_rates(g, a, beta, noise_power)?;
        let mut mu = Vec::with_capacity(rates.sinr.len());
        let mut nu = Vec::with_capacity(rates.sinr.len());
        for &tau in &rates.sinr {
            // A zero SINR contributes nothing; `0 * ln tau + 0` is then tight.
            let (m, n) = if tau > 0.0 { tighten_bound(tau)? } else { (0.0, 0.0) };
            mu.push(m);
            nu.push(n);
        }
        Ok(ScaState {
            x: beta.as_slice().iter().map(|b| b.ln()).collect(),
            mu,
            nu,
            objective_history: vec![rates.sum_rate()],
            iteration: 0,
        })
    }
}

/// The concave surrogate of the sum rate at log-powers `x`, in bits/s/Hz.
pub fn surrogate_sum_rate(x: &[f64], mu: &[f64], nu: &[f64], g: &GainMatrix, a: &Assignment, noise_power: f64) -> Result<f64> {
    let beta = PowerAllocation::new(x.iter().map(|v| v.exp()).collect())?;
    let rates = achievable_rates(g, a, &beta, noise_power)?;
    Ok(rates
        .sinr
        .iter()
        .zip(mu.iter().zip(nu))
        .map(|(tau, (m, n))| if *m == 0.0 { *n } else { m * tau.ln() + n })
        .sum::<f64>()
        / std::f64::consts::LN_2)
}

/// Subproblem in normalized log-powers.
struct Subproblem {
    /// `ln h_s` for the own beam.
    log_own: Vec<f64>,
    /// `w[s][j]`: weight of `e^{x_j}` in slot `s`'s interference-plus-noise.
    w: Vec<Vec<f64>>,
    mu: Vec<f64>,
    nu: Vec<f64>,
    /// `(slot, ln gamma_bar)` for positive floors.
    qos: Vec<(usize, f64)>,
    /// Linearized order constraints, already in normalized log-powers:
    /// `(sum a_i e^{x_i} - b - f - sum d_i (x_i - r_i)) / scale <= 0`.
    orders: Vec<NormalizedOrder>,
}

struct NormalizedOrder {
    a: Vec<f64>,
    b: f64,
    f: f64,
    d: Vec<f64>,
    r: Vec<f64>,
    scale: f64,
}

impl Subproblem {
    fn n(&self) -> usize {
        self.log_own.len()
    }

    /// `ln(1 + sum_j w_sj e^{x_j})` with its gradient weights `q`.
    fn log_interference(&self, s: usize, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let terms = DVector::from_fn(self.n(), |j, _| self.w[s][j] * x[j].exp());
        let total = 1.0 + terms.sum();
        (total.ln(), terms / total)
    }

    fn softmax_hess(q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(q) - q * q.transpose()
    }
}

impl ConvexProgram for Subproblem {
    fn dim(&self) -> usize {
        self.n()
    }

    fn objective(&self, x: &DVector<f64>) -> Eval {
        let n = self.n();
        let mut value = 0.0;
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        for s in 0..n {
            let c = self.mu[s] / std::f64::consts::LN_2;
            value += self.nu[s] / std::f64::consts::LN_2;
            if c == 0.0 {
                continue;
            }
            let (li, q) = self.log_interference(s, x);
            value += c * (self.log_own[s] + x[s] - li);
            grad[s] += c;
            grad -= &q * c;
            hess -= Self::softmax_hess(&q) * c;
        }
        Eval { value, grad, hess }
    }

    fn num_constraints(&self) -> usize {
        1 + self.qos.len() + self.orders.len() + self.n()
    }

    fn constraint(&self, i: usize, x: &DVector<f64>) -> Eval {
        let n = self.n();
        if i == 0 {
            // ln sum e^x <= 0
            let e = x.map(f64::exp);
            let total = e.sum();
            let pi = e / total;
            return Eval { value: total.ln(), hess: Self::softmax_hess(&pi), grad: pi };
        }
        let mut i = i - 1;
        if i < self.qos.len() {
            // ln(1 + I_s) - x_s + ln gamma_bar - ln h_s <= 0
            let (s, log_floor) = self.qos[i];
            let (li, q) = self.log_interference(s, x);
            let mut grad = q.clone();
            grad[s] -= 1.0;
            return Eval { value: li - x[s] + log_floor - self.log_own[s], grad, hess: Self::softmax_hess(&q) };
        }
        i -= self.qos.len();
        if i < self.orders.len() {
            let o = &self.orders[i];
            let ex = DVector::from_fn(n, |j, _| o.a[j] * x[j].exp());
            let lin: f64 = (0..n).map(|j| o.d[j] * (x[j] - o.r[j])).sum();
            let value = (ex.sum() - o.b - o.f - lin) / o.scale;
            let grad = DVector::from_fn(n, |j, _| (ex[j] - o.d[j]) / o.scale);
            return Eval { value, grad, hess: DMatrix::from_diagonal(&ex) / o.scale };
        }
        i -= self.orders.len();
        let mut grad = DVector::zeros(n);
        grad[i] = -1.0;
        Eval { value: MIN_LOG_POWER - x[i], grad, hess: DMatrix::zeros(n, n) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    /// New log-powers `ln beta`.
    pub x: Vec<f64>,
    /// Surrogate sum rate at `x`, in bits/s/Hz.
    pub surrogate: f64,
    pub kkt_residual: f64,
    /// False when the anchor was returned unchanged.
    pub moved: bool,
}

/// Maximizes the surrogate around `state.x` over the linearized feasible set.
pub fn solve_subproblem(
    state: &ScaState,
    g: &GainMatrix,
    a: &Assignment,
    p_tot: f64,
    noise_power: f64,
    min_rates: &[f64],
) -> Result<SubproblemSolution> {
    let n = a.num_scheduled();
    if state.x.len() != n || state.mu.len() != n || state.nu.len() != n || min_rates.len() != n {
        return Err(Error::Dimension("state and rate floors must match the schedule".into()));
    }
    let slots = a.slots();
    let h = g.scaled(p_tot / noise_power);
    let log_p = p_tot.ln();
    let mut w = vec![vec![0.0; n]; n];
    for (s, si) in slots.iter().enumerate() {
        for (j, sj) in slots.iter().enumerate() {
            if sj.beam == si.beam {
                if sj.pos > si.pos {
                    w[s][j] = h.get(si.user, si.beam);
                }
            } else {
                w[s][j] = h.get(si.user, sj.beam);
            }
        }
    }
    let qos = min_rates
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > 0.0)
        .map(|(s, r)| (s, sinr_floor(*r).ln()))
        .collect();
    let anchor: Vec<f64> = state.x.iter().map(|x| (x - log_p).max(MIN_LOG_POWER)).collect();
    let orders = linearize_order_constraints(&state.x, g, a, noise_power)?
        .into_iter()
        .filter(|o| !o.is_constant())
        .map(|o| {
            let a_norm: Vec<f64> = o.a.iter().map(|v| v * p_tot).collect();
            let magnitude: f64 =
                a_norm.iter().zip(&anchor).map(|(c, x)| c * x.exp()).sum::<f64>() + o.b.abs() + o.f_ref.abs();
            NormalizedOrder { a: a_norm, b: o.b, f: o.f_ref, d: o.d, r: anchor.clone(), scale: magnitude.max(f64::MIN_POSITIVE) }
        })
        .collect();
    let sub = Subproblem {
        log_own: slots.iter().map(|s| h.get(s.user, s.beam).ln()).collect(),
        w,
        mu: state.mu.clone(),
        nu: state.nu.clone(),
        qos,
        orders,
    };
    let x0 = DVector::from_vec(anchor.clone());
    let anchor_value = sub.objective(&x0).value;
    let stay = SubproblemSolution { x: state.x.clone(), surrogate: anchor_value, kkt_residual: f64::NAN, moved: false };
    let Some(sol) = maximize(&sub, x0, &BarrierOptions::default())? else {
        return Ok(stay);
    };
    if sol.value < anchor_value {
        return Ok(stay);
    }
    Ok(SubproblemSolution {
        x: sol.x.iter().map(|v| v + log_p).collect(),
        surrogate: sol.value,
        kkt_residual: sol.kkt_residual,
        moved: true,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaReport {
    pub power: PowerAllocation,
    pub sum_rate: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective_history: Vec<f64>,
}

fn is_feasible(beta: &PowerAllocation, g: &GainMatrix, a: &Assignment, min_rates: &[f64], p_tot: f64, noise_power: f64) -> Result<Option<f64>> {
    if beta.as_slice().iter().any(|b| !(*b > 0.0)) || beta.total() > p_tot * (1.0 + BUDGET_TOL) {
        return Ok(None);
    }
    let rates = achievable_rates(g, a, beta, noise_power)?;
    if !qos_ok(&rates, min_rates) || !sic_order_ok(g, a, beta, noise_power)?.ok {
        return Ok(None);
    }
    Ok(Some(rates.sum_rate()))
}

/// Largest `c` in `[1, p_tot / sum beta]` such that `c beta` keeps every SIC
/// order constraint; the SINRs only grow with `c`.
fn scale_within_order(beta: &PowerAllocation, g: &GainMatrix, a: &Assignment, p_tot: f64, noise_power: f64) -> Result<f64> {
    let total = beta.total();
    if total <= 0.0 {
        return Ok(1.0);
    }
    let mut c = p_tot / total;
    for m in sic_order_ok(g, a, beta, noise_power)?.margins {
        let constant = (g.get(m.later, m.beam) - g.get(m.earlier, m.beam)) * noise_power;
        let slope = m.margin - constant;
        if slope < 0.0 {
            c = c.min(constant / -slope);
        }
    }
    Ok(c.max(1.0))
}

/// Feasible, strictly positive starting points for [`solve_sca`], best
/// initial sum rate first.
fn initial_points(
    g: &GainMatrix,
    a: &Assignment,
    min_rates: &[f64],
    p_tot: f64,
    noise_power: f64,
) -> Result<Vec<PowerAllocation>> {
    let verdict = check_qos_feasible(g, a, min_rates, p_tot, noise_power)?;
    if !verdict.member {
        return Err(Error::InfeasibleSchedule);
    }
    let mut candidates = vec![fixed_power_allocation(a, p_tot)?];
    if let Some(min_power) = verdict.min_power_vector {
        let spare = (p_tot - min_power.total()).max(0.0);
        // Spare power split over beams onto each beam's last-decoded user.
        let mut topped = min_power.as_slice().to_vec();
        let loaded: Vec<usize> = (0..a.num_beams()).filter(|m| !a.beam_users(*m).is_empty()).collect();
        let offsets = a.beam_offsets();
        for &m in &loaded {
            topped[offsets[m] + a.beam_users(m).len() - 1] += spare / loaded.len() as f64;
        }
        candidates.push(PowerAllocation::from_solver(topped)?);
        let c = scale_within_order(&min_power, g, a, p_tot, noise_power)?;
        candidates.push(min_power.scaled(c * (1.0 - 1e-9)));
        // Strictly positive fallback for zero floors.
        let n = min_power.len().max(1) as f64;
        candidates.push(PowerAllocation::from_solver(
            min_power.as_slice().iter().map(|b| b + 1e-9 * p_tot / n).collect(),
        )?);
    }
    // Spare power on the last-decoded users with the earlier users' floors
    // re-solved; the top-up above ignores the interference it adds.
    if let Some(lp) = max_last_decoded_power(g, a, min_rates, p_tot, noise_power)? {
        let n = lp.len().max(1) as f64;
        let lifted: Vec<f64> = lp.as_slice().iter().map(|b| b + 1e-9 * p_tot / n).collect();
        let total: f64 = lifted.iter().sum();
        let shrink = if total > p_tot { p_tot / total } else { 1.0 };
        candidates.push(PowerAllocation::from_solver(lifted.iter().map(|b| b * shrink).collect())?);
    }
    let mut scored = Vec::new();
    for c in candidates {
        if let Some(rate) = is_feasible(&c, g, a, min_rates, p_tot, noise_power)? {
            scored.push((rate, c));
        }
    }
    // Stable sort keeps the candidate order on ties.
    scored.sort_by(|x, y| y.0.total_cmp(&x.0));
    Ok(scored.into_iter().map(|(_, c)| c).collect())
}

/// SCA from several feasible starting points, keeping the best run.
pub fn solve_sca(
    g: &GainMatrix,
    a: &Assignment,
    min_rates: &[f64],
    p_tot: f64,
    noise_power: f64,
    epsilon_prime: f64,
) -> Result<ScaReport> {
    // One run per starting point; the best final sum rate wins, earlier
    // candidates on ties.
    let mut best: Option<ScaReport> = None;
    for init in initial_points(g, a, min_rates, p_tot, noise_power)? {
        let run = solve_sca_from(init, g, a, min_rates, p_tot, noise_power, epsilon_prime)?;
        if best.as_ref().is_none_or(|b| run.sum_rate > b.sum_rate) {
            best = Some(run);
        }
    }
    best.ok_or_else(|| Error::Numerical("no strictly positive feasible starting point".into()))
}

/// Runs the SCA iterations from a feasible, strictly positive `init`.
pub fn solve_sca_from(
    init: PowerAllocation,
    g: &GainMatrix,
    a: &Assignment,
    min_rates: &[f64],
    p_tot: f64,
    noise_power: f64,
    epsilon_prime: f64,
) -> Result<ScaReport> {
    if !(epsilon_prime > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon' must be positive, got {epsilon_prime}")));
    }
    let Some(mut rate) = is_feasible(&init, g, a, min_rates, p_tot, noise_power)? else {
        return Err(Error::InvalidInput("initial power allocation is not feasible".into()));
    };
    let mut beta = init;
    let mut history = vec![rate];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_SCA_ITERS {
        iterations += 1;
        let state = ScaState::at(&beta, g, a, noise_power)?;
        let sol = solve_subproblem(&state, g, a, p_tot, noise_power, min_rates)?;
        let candidate = PowerAllocation::new(sol.x.iter().map(|v| v.exp()).collect())?;
        let next = match is_feasible(&candidate, g, a, min_rates, p_tot, noise_power)? {
            Some(r) if sol.moved && r >= rate => Some(r),
            _ => None,
        };
        let Some(next_rate) = next else {
            // No admissible progress: the objective is unchanged.
            history.push(rate);
            converged = true;
            break;
        };
        let change = (next_rate - rate).abs() / rate.max(f64::MIN_POSITIVE);
        beta = candidate;
        rate = next_rate;
        history.push(rate);
        if change <= epsilon_prime {
            converged = true;
            break;
        }
    }
    Ok(ScaReport { power: beta, sum_rate: rate, iterations, converged, objective_history: history })
}
