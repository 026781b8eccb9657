//! SINR-target feasibility.
//!
//! For targets `gamma` in stacked slot order the SINR constraints read
//! `(I - Lambda - D G) beta >= sigma^2 D 1`, where `Lambda` carries the
//! intra-beam interference of later-decoded users, `D = diag(gamma_s / g_s)`
//! and `G` the inter-beam gains. Targets are achievable with finite power iff
//! `rho(Lambda + D G) < 1`, in which case the componentwise minimal power is
//! `beta* = (I - Lambda - D G)^{-1} sigma^2 D 1`.
//!
//! The linear programs below are posed in normalized units `p = beta / P` and
//! `h = g P / sigma^2`, so budgets are 1 and noise is 1 whatever the SNR.

use nalgebra::{DMatrix, DVector};

use crate::channel::GainMatrix;
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::rates::{sic_order_ok, sinr_floor, Assignment, PowerAllocation};
use crate::spectral::spectral_radius;

/// Relative slack allowed on the total power budget.
pub const BUDGET_TOL: f64 = 1e-9;

/// Per-slot SINR targets in stacked decoding order.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrTarget {
    gamma: Vec<f64>,
}

impl SinrTarget {
    pub fn new(gamma: Vec<f64>) -> Result<Self> {
        if let Some(v) = gamma.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidInput(format!("SINR target {v} is not finite and nonnegative")));
        }
        Ok(SinrTarget { gamma })
    }

    /// Targets `2^R - 1` for per-slot rate floors `R`.
    pub fn from_rate_floors(min_rates: &[f64]) -> Result<Self> {
        SinrTarget::new(min_rates.iter().map(|r| sinr_floor(*r)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.gamma
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

/// The `(Lambda, D, G)` decomposition for one schedule and target vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasMatrices {
    pub lambda: DMatrix<f64>,
    /// Diagonal of `D`.
    pub d: DVector<f64>,
    pub g: DMatrix<f64>,
}

impl FeasMatrices {
    pub fn dim(&self) -> usize {
        self.d.len()
    }

    /// `Lambda + D G`, entrywise nonnegative with zero diagonal.
    pub fn interference(&self) -> DMatrix<f64> {
        let mut a = self.lambda.clone();
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                a[(i, j)] += self.d[i] * self.g[(i, j)];
            }
        }
        a
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        spectral_radius(&self.interference())
    }

    /// `(I - Lambda - D G) beta - sigma^2 D 1`; nonnegative iff all targets are met.
    pub fn residual(&self, beta: &[f64], noise_power: f64) -> Vec<f64> {
        let a = self.interference();
        (0..self.dim())
            .map(|i| {
                let coupled: f64 = (0..self.dim()).map(|j| a[(i, j)] * beta[j]).sum();
                beta[i] - coupled - noise_power * self.d[i]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerdictReason {
    RadiusGeOne,
    PowerBudgetExceeded,
    /// The minimal power vector broke a SIC order constraint and the
    /// power-minimizing LP produced the witness instead.
    OrderConstraintViolatedLpUsed,
    FeasibleClosedForm,
    /// The QoS power-minimization LP is feasible within budget.
    FeasibleLp,
    LpInfeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasVerdict {
    pub member: bool,
    pub spectral_radius: f64,
    /// Present whenever `member` is true; may also carry the over-budget
    /// minimal vector.
    pub min_power_vector: Option<PowerAllocation>,
    pub reason: VerdictReason,
}

fn check_shapes(g: &GainMatrix, a: &Assignment, len: usize) -> Result<()> {
    if g.num_users() != a.num_users() || g.num_beams() != a.num_beams() {
        return Err(Error::Dimension(format!(
            "gain matrix is {}x{}, assignment expects {}x{}",
            g.num_users(),
            g.num_beams(),
            a.num_users(),
            a.num_beams()
        )));
    }
    if len != a.num_scheduled() {
        return Err(Error::Dimension(format!("{len} targets for {} scheduled users", a.num_scheduled())));
    }
    Ok(())
}

pub fn build_matrices(g: &GainMatrix, a: &Assignment, t: &SinrTarget) -> Result<FeasMatrices> {
    check_shapes(g, a, t.len())?;
    let slots = a.slots();
    let n = slots.len();
    let mut lambda = DMatrix::zeros(n, n);
    let mut d = DVector::zeros(n);
    let mut gm = DMatrix::zeros(n, n);
    for (i, si) in slots.iter().enumerate() {
        let own = g.get(si.user, si.beam);
        if own <= 0.0 {
            return Err(Error::ZeroOwnGain { user: si.user, beam: si.beam });
        }
        let gamma = t.gamma[i];
        d[i] = gamma / own;
        for (j, sj) in slots.iter().enumerate() {
            if sj.beam == si.beam {
                if sj.pos > si.pos {
                    lambda[(i, j)] = gamma;
                }
            } else {
                gm[(i, j)] = g.get(si.user, sj.beam);
            }
        }
    }
    Ok(FeasMatrices { lambda, d, g: gm })
}

/// `beta* = (I - Lambda - D G)^{-1} sigma^2 D 1`; requires `rho < 1`.
pub fn min_power_for_targets(mats: &FeasMatrices, noise_power: f64) -> Result<PowerAllocation> {
    let rho = mats.spectral_radius()?;
    if rho >= 1.0 {
        return Err(Error::RadiusNotBelowOne(rho));
    }
    solve_min_power(mats, noise_power)
}

fn solve_min_power(mats: &FeasMatrices, noise_power: f64) -> Result<PowerAllocation> {
    let n = mats.dim();
    let system = DMatrix::identity(n, n) - mats.interference();
    let rhs = &mats.d * noise_power;
    let beta = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular I - Lambda - DG with radius below one".into()))?;
    PowerAllocation::from_solver(beta.iter().cloned().collect())
}

/// Rows `h_s p_s - gamma_s (h_s sum_later p + sum_{n != m} h_s^n p^n) >= gamma_s`
/// in normalized units.
fn sinr_rows(h: &GainMatrix, a: &Assignment, gamma: &[f64]) -> Vec<(Vec<f64>, f64)> {
    let slots = a.slots();
    let n = slots.len();
    slots
        .iter()
        .enumerate()
        .map(|(i, si)| {
            let own = h.get(si.user, si.beam);
            let mut row = vec![0.0; n];
            for (j, sj) in slots.iter().enumerate() {
                if sj.beam == si.beam {
                    if sj.pos > si.pos {
                        row[j] = -gamma[i] * own;
                    }
                } else {
                    row[j] = -gamma[i] * h.get(si.user, sj.beam);
                }
            }
            row[i] = own;
            (row, gamma[i])
        })
        .collect()
}

/// Rows `sum_{n != m} (h_k^m h_j^n - h_j^m h_k^n) p^n >= h_j^m - h_k^m` for every
/// pair with `j` decoded before `k` on beam `m`.
fn order_rows(h: &GainMatrix, a: &Assignment) -> Vec<(Vec<f64>, f64)> {
    let slots = a.slots();
    let mut rows = Vec::new();
    for (m, users) in a.beams().iter().enumerate() {
        for (pj, &j) in users.iter().enumerate() {
            for &k in &users[pj + 1..] {
                let (hkm, hjm) = (h.get(k, m), h.get(j, m));
                let row: Vec<f64> = slots
                    .iter()
                    .map(|s| if s.beam == m { 0.0 } else { hkm * h.get(j, s.beam) - hjm * h.get(k, s.beam) })
                    .collect();
                rows.push((row, hjm - hkm));
            }
        }
    }
    rows
}

/// Minimum total power meeting `gamma` and every SIC order constraint, as a
/// fraction of `p_tot`. With `budget` the LP also enforces `sum p <= 1`.
fn min_power_lp(
    g: &GainMatrix,
    a: &Assignment,
    gamma: &[f64],
    p_tot: f64,
    noise_power: f64,
    budget: bool,
) -> Result<Option<(Vec<f64>, f64)>> {
    let h = g.scaled(p_tot / noise_power);
    let n = a.num_scheduled();
    let mut lp = LinearProgram::minimize(vec![1.0; n]);
    for (row, rhs) in sinr_rows(&h, a, gamma) {
        lp.add(row, Relation::Ge, rhs)?;
    }
    for (row, rhs) in order_rows(&h, a) {
        lp.add(row, Relation::Ge, rhs)?;
    }
    if budget {
        lp.add(vec![1.0; n], Relation::Le, 1.0)?;
    }
    match lp.solve()? {
        LpOutcome::Optimal { x, value } => Ok(Some((x, value))),
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => Err(Error::Numerical("power minimization reported unbounded".into())),
    }
}

/// Feasible allocation that puts as much power as the rate floors, the SIC
/// conditions and the budget allow on each beam's last-decoded user, or
/// `None` when the floors cannot be met.
pub fn max_last_decoded_power(
    g: &GainMatrix,
    a: &Assignment,
    min_rates: &[f64],
    p_tot: f64,
    noise_power: f64,
) -> Result<Option<PowerAllocation>> {
    check_shapes(g, a, min_rates.len())?;
    let floors = SinrTarget::from_rate_floors(min_rates)?;
    let h = g.scaled(p_tot / noise_power);
    let n = a.num_scheduled();
    let mut objective = vec![0.0; n];
    for (m, users) in a.beams().iter().enumerate() {
        if !users.is_empty() {
            objective[a.beam_offsets()[m] + users.len() - 1] = -1.0;
        }
    }
    let mut lp = LinearProgram::minimize(objective);
    for (row, rhs) in sinr_rows(&h, a, floors.as_slice()) {
        lp.add(row, Relation::Ge, rhs)?;
    }
    for (row, rhs) in order_rows(&h, a) {
        lp.add(row, Relation::Ge, rhs)?;
    }
    lp.add(vec![1.0; n], Relation::Le, 1.0)?;
    match lp.solve()? {
        LpOutcome::Optimal { x, .. } => Ok(Some(PowerAllocation::from_solver(x.iter().map(|v| v * p_tot).collect())?)),
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => Err(Error::Numerical("bounded power LP reported unbounded".into())),
    }
}

/// Decides whether targets `t` lie in the achievable SINR region: finite
/// power, total power within `p_tot`, and every SIC order constraint met.
pub fn check_membership(
    g: &GainMatrix,
    a: &Assignment,
    t: &SinrTarget,
    p_tot: f64,
    noise_power: f64,
) -> Result<FeasVerdict> {
    let mats = build_matrices(g, a, t)?;
    let rho = mats.spectral_radius()?;
    if rho >= 1.0 {
        return Ok(FeasVerdict {
            member: false,
            spectral_radius: rho,
            min_power_vector: None,
            reason: VerdictReason::RadiusGeOne,
        });
    }
    let beta = solve_min_power(&mats, noise_power)?;
    if beta.total() > p_tot * (1.0 + BUDGET_TOL) {
        return Ok(FeasVerdict {
            member: false,
            spectral_radius: rho,
            min_power_vector: Some(beta),
            reason: VerdictReason::PowerBudgetExceeded,
        });
    }
    if sic_order_ok(g, a, &beta, noise_power)?.ok {
        return Ok(FeasVerdict {
            member: true,
            spectral_radius: rho,
            min_power_vector: Some(beta),
            reason: VerdictReason::FeasibleClosedForm,
        });
    }
    match min_power_lp(g, a, t.as_slice(), p_tot, noise_power, true)? {
        Some((p, _)) => Ok(FeasVerdict {
            member: true,
            spectral_radius: rho,
            min_power_vector: Some(PowerAllocation::from_solver(p.iter().map(|v| v * p_tot).collect())?),
            reason: VerdictReason::OrderConstraintViolatedLpUsed,
        }),
        None => Ok(FeasVerdict {
            member: false,
            spectral_radius: rho,
            min_power_vector: None,
            reason: VerdictReason::LpInfeasible,
        }),
    }
}

/// Whether the schedule can meet per-slot rate floors `min_rates` within
/// `p_tot`: the minimum total power subject to the QoS floors and the SIC
/// order constraints must not exceed the budget.
pub fn check_qos_feasible(
    g: &GainMatrix,
    a: &Assignment,
    min_rates: &[f64],
    p_tot: f64,
    noise_power: f64,
) -> Result<FeasVerdict> {
    check_shapes(g, a, min_rates.len())?;
    let floors = SinrTarget::from_rate_floors(min_rates)?;
    let rho = match build_matrices(g, a, &floors) {
        Ok(m) => m.spectral_radius()?,
        // A zero own gain only matters when its floor is positive; the LP decides.
        Err(Error::ZeroOwnGain { .. }) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    match min_power_lp(g, a, floors.as_slice(), p_tot, noise_power, false)? {
        Some((p, value)) => {
            let beta = PowerAllocation::from_solver(p.iter().map(|v| v * p_tot).collect())?;
            let member = value <= 1.0 + BUDGET_TOL;
            Ok(FeasVerdict {
                member,
                spectral_radius: rho,
                min_power_vector: Some(beta),
                reason: if member { VerdictReason::FeasibleLp } else { VerdictReason::PowerBudgetExceeded },
            })
        }
        None => Ok(FeasVerdict {
            member: false,
            spectral_radius: rho,
            min_power_vector: None,
            reason: VerdictReason::LpInfeasible,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::{achievable_rates, qos_ok};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_beam(gains: &[f64]) -> (GainMatrix, Assignment) {
        let g = GainMatrix::from_rows(gains.iter().map(|v| vec![*v]).collect()).unwrap();
        let a = Assignment::new(gains.len(), vec![gains.len()], vec![(0..gains.len()).collect()]).unwrap();
        (g, a)
    }

    fn random_two_beam(rng: &mut ChaCha8Rng) -> (GainMatrix, Assignment) {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2).map(|_| 10f64.powf(rng.random_range(-1.5..1.0))).collect())
            .collect();
        let g = GainMatrix::from_rows(rows).unwrap();
        let a = Assignment::with_ascending_order(&g, vec![2, 2], vec![vec![0, 1], vec![2, 3]]).unwrap();
        (g, a)
    }

    #[test]
    fn single_beam_matrices() {
        let (g, a) = single_beam(&[1.0, 4.0]);
        let m = build_matrices(&g, &a, &SinrTarget::new(vec![2.0, 3.0]).unwrap()).unwrap();
        assert_eq!(m.lambda, DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]));
        assert_eq!(m.d.as_slice(), &[2.0, 0.75]);
        assert_eq!(m.g, DMatrix::zeros(2, 2));
    }

    #[test]
    fn one_slot_matrices() {
        let (g, a) = single_beam(&[2.0]);
        let m = build_matrices(&g, &a, &SinrTarget::new(vec![3.0]).unwrap()).unwrap();
        assert_eq!(m.lambda[(0, 0)], 0.0);
        assert_eq!(m.g[(0, 0)], 0.0);
        assert_eq!(m.d[0], 1.5);
    }

    #[test]
    fn zero_own_gain_rejected() {
        let (g, a) = single_beam(&[0.0, 1.0]);
        let err = build_matrices(&g, &a, &SinrTarget::new(vec![1.0, 1.0]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::ZeroOwnGain { user: 0, beam: 0 }));
    }

    #[test]
    fn residual_matches_expanded_sinr_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (g, a) = random_two_beam(&mut rng);
            let gamma: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0)).collect();
            let beta: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..3.0)).collect();
            let noise = 0.7;
            let m = build_matrices(&g, &a, &SinrTarget::new(gamma.clone()).unwrap()).unwrap();
            let res = m.residual(&beta, noise);
            // Expand each row by hand: beta_s - gamma_s (intra + inter + noise) / g_own.
            let slots = a.slots();
            for (i, s) in slots.iter().enumerate() {
                let own = g.get(s.user, s.beam);
                let mut interference = noise;
                for (j, o) in slots.iter().enumerate() {
                    if o.beam == s.beam && o.pos > s.pos {
                        interference += own * beta[j];
                    } else if o.beam != s.beam {
                        interference += g.get(s.user, o.beam) * beta[j];
                    }
                }
                let expected = beta[i] - gamma[i] * interference / own;
                assert!((res[i] - expected).abs() < 1e-12 * (1.0 + expected.abs()));
            }
            let a_mat = m.interference();
            for i in 0..4 {
                assert_eq!(a_mat[(i, i)], 0.0);
                for j in 0..4 {
                    assert!(a_mat[(i, j)] >= 0.0);
                }
            }
        }
    }

    #[test]
    fn two_user_hand_solution() {
        let (g, a) = single_beam(&[1.0, 4.0]);
        let t = SinrTarget::new(vec![1.0, 1.0]).unwrap();
        let beta = min_power_for_targets(&build_matrices(&g, &a, &t).unwrap(), 1.0).unwrap();
        assert!((beta.as_slice()[0] - 1.25).abs() < 1e-12);
        assert!((beta.as_slice()[1] - 0.25).abs() < 1e-12);
        assert!(check_membership(&g, &a, &t, 1.5, 1.0).unwrap().member);
        let v = check_membership(&g, &a, &t, 1.49, 1.0).unwrap();
        assert!(!v.member);
        assert_eq!(v.reason, VerdictReason::PowerBudgetExceeded);
    }

    #[test]
    fn single_slot_min_power() {
        let (g, a) = single_beam(&[1.0]);
        let t = SinrTarget::new(vec![2.0]).unwrap();
        let beta = min_power_for_targets(&build_matrices(&g, &a, &t).unwrap(), 1.0).unwrap();
        assert!((beta.as_slice()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn large_targets_exceed_radius() {
        let g = GainMatrix::from_rows(vec![vec![1.0, 0.9], vec![0.9, 1.0]]).unwrap();
        let a = Assignment::new(2, vec![1, 1], vec![vec![0], vec![1]]).unwrap();
        let t = SinrTarget::new(vec![2.0, 2.0]).unwrap();
        let v = check_membership(&g, &a, &t, 1e9, 1.0).unwrap();
        assert!(!v.member);
        assert_eq!(v.reason, VerdictReason::RadiusGeOne);
        assert!(v.spectral_radius >= 1.0);
        assert!(matches!(
            min_power_for_targets(&build_matrices(&g, &a, &t).unwrap(), 1.0),
            Err(Error::RadiusNotBelowOne(_))
        ));
    }

    #[test]
    fn zero_floors_need_no_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (g, a) = random_two_beam(&mut rng);
        let v = check_qos_feasible(&g, &a, &[0.0; 4], 1.0, 1.0).unwrap();
        assert!(v.member);
        assert!(v.min_power_vector.unwrap().total() < 1e-12);
    }

    #[test]
    fn single_user_qos_closed_form() {
        let (g, a) = single_beam(&[1.0]);
        let v = check_qos_feasible(&g, &a, &[1.0], 1.0, 1.0).unwrap();
        assert!(v.member);
        assert!((v.min_power_vector.unwrap().total() - 1.0).abs() < 1e-9);
        assert!(!check_qos_feasible(&g, &a, &[1.0], 0.99, 1.0).unwrap().member);
    }

    /// Exact minimum by enumerating every vertex of `{rows . beta >= rhs, beta >= 0}`.
    fn vertex_minimum(rows: &[(Vec<f64>, f64)], n: usize) -> Option<f64> {
        let mut all: Vec<(Vec<f64>, f64)> = rows.to_vec();
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            all.push((e, 0.0));
        }
        let mut best: Option<f64> = None;
        let mut pick = vec![0usize; n];
        fn rec(
            start: usize,
            depth: usize,
            pick: &mut Vec<usize>,
            all: &[(Vec<f64>, f64)],
            n: usize,
            best: &mut Option<f64>,
        ) {
            if depth == n {
                let m = DMatrix::from_fn(n, n, |i, j| all[pick[i]].0[j]);
                let b = DVector::from_fn(n, |i, _| all[pick[i]].1);
                if let Some(x) = m.lu().solve(&b) {
                    let ok = all.iter().all(|(r, h)| {
                        let lhs: f64 = r.iter().zip(x.iter()).map(|(a, v)| a * v).sum();
                        lhs >= h - 1e-9 * (1.0 + h.abs())
                    });
                    if ok && x.iter().all(|v| v.is_finite()) {
                        let total = x.sum();
                        *best = Some(best.map_or(total, |b: f64| b.min(total)));
                    }
                }
                return;
            }
            for i in start..all.len() {
                pick[depth] = i;
                rec(i + 1, depth + 1, pick, all, n, best);
            }
        }
        rec(0, 0, &mut pick, &all, n, &mut best);
        best
    }

    #[test]
    fn qos_lp_matches_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let (g, a) = random_two_beam(&mut rng);
            let p_tot = 4.0;
            let gamma_bar = sinr_floor(0.3);
            let slots = a.slots();
            // SINR rows written out from the rate definition, in raw units.
            let mut rows = Vec::new();
            for (i, s) in slots.iter().enumerate() {
                let own = g.get(s.user, s.beam);
                let mut row = vec![0.0; 4];
                row[i] = own;
                for (j, o) in slots.iter().enumerate() {
                    if o.beam == s.beam && o.pos > s.pos {
                        row[j] -= gamma_bar * own;
                    } else if o.beam != s.beam {
                        row[j] -= gamma_bar * g.get(s.user, o.beam);
                    }
                }
                rows.push((row, gamma_bar));
            }
            // Decoding the earlier user at the later one must be at least as easy.
            for m in 0..2 {
                let (j, k) = (a.beam_users(m)[0], a.beam_users(m)[1]);
                let mut row = vec![0.0; 4];
                for (idx, o) in slots.iter().enumerate() {
                    if o.beam != m {
                        row[idx] = g.get(k, m) * g.get(j, o.beam) - g.get(j, m) * g.get(k, o.beam);
                    }
                }
                rows.push((row, g.get(j, m) - g.get(k, m)));
            }
            let oracle = vertex_minimum(&rows, 4);
            let v = check_qos_feasible(&g, &a, &[0.3; 4], p_tot, 1.0).unwrap();
            match oracle {
                Some(best) => {
                    let total = v.min_power_vector.as_ref().unwrap().total();
                    assert!((total - best).abs() <= 1e-7 * (1.0 + best), "lp {total} oracle {best}");
                    assert_eq!(v.member, best <= p_tot);
                }
                None => assert_eq!(v.reason, VerdictReason::LpInfeasible),
            }
        }
    }

    #[test]
    fn lp_witness_meets_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let (g, a) = random_two_beam(&mut rng);
            let floors = vec![0.2; 4];
            let v = check_qos_feasible(&g, &a, &floors, 10.0, 1.0).unwrap();
            if let (true, Some(p)) = (v.member, v.min_power_vector) {
                let r = achievable_rates(&g, &a, &p, 1.0).unwrap();
                assert!(qos_ok(&r, &floors));
                assert!(sic_order_ok(&g, &a, &p, 1.0).unwrap().ok);
                assert!(p.total() <= 10.0 * (1.0 + 1e-9));
            }
        }
    }
}
