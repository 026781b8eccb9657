//! SINR, achievable rate, SIC decoding-order and QoS evaluation.
//!
//! Scheduled users are addressed through *slots*: beam 0's users in decoding
//! order, then beam 1's, and so on. Power vectors, SINR vectors and rate
//! vectors all use this stacked slot order.

use serde::{Deserialize, Serialize};

use crate::channel::GainMatrix;
use crate::error::{Error, Result};

/// Relative slack on the SIC decoding-order margins.
pub const ORDER_TOL: f64 = 1e-9;
/// Absolute slack (bits/s/Hz) on QoS rate floors.
pub const QOS_TOL: f64 = 1e-9;

/// Position of one scheduled user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub beam: usize,
    /// 0-based decoding position on the beam; 0 is decoded first.
    pub pos: usize,
    pub user: usize,
}

/// User-to-beam schedule with per-beam SIC decoding order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawAssignment", into = "RawAssignment")]
pub struct Assignment {
    num_users: usize,
    quotas: Vec<usize>,
    /// `beams[m]` lists beam `m`'s users in decoding order.
    beams: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct RawAssignment {
    num_users: usize,
    quotas: Vec<usize>,
    beams: Vec<Vec<usize>>,
}

impl TryFrom<RawAssignment> for Assignment {
    type Error = Error;
    fn try_from(raw: RawAssignment) -> Result<Self> {
        Assignment::new(raw.num_users, raw.quotas, raw.beams)
    }
}

impl From<Assignment> for RawAssignment {
    fn from(a: Assignment) -> Self {
        RawAssignment {
            num_users: a.num_users,
            quotas: a.quotas,
            beams: a.beams,
        }
    }
}

impl Assignment {
    pub fn new(num_users: usize, quotas: Vec<usize>, beams: Vec<Vec<usize>>) -> Result<Self> {
        if quotas.len() != beams.len() {
            return Err(Error::Dimension(format!(
                "{} quotas for {} beams",
                quotas.len(),
                beams.len()
            )));
        }
        if quotas.contains(&0) {
            return Err(Error::InvalidInput("quotas must be positive".into()));
        }
        let mut seen = vec![false; num_users];
        for (m, users) in beams.iter().enumerate() {
            if users.len() > quotas[m] {
                return Err(Error::InvalidInput(format!(
                    "beam {m} holds {} users but its quota is {}",
                    users.len(),
                    quotas[m]
                )));
            }
            for &k in users {
                if k >= num_users {
                    return Err(Error::InvalidInput(format!("user {k} out of range (K = {num_users})")));
                }
                if seen[k] {
                    return Err(Error::InvalidInput(format!("user {k} is scheduled more than once")));
                }
                seen[k] = true;
            }
        }
        Ok(Assignment {
            num_users,
            quotas,
            beams,
        })
    }

    /// Builds an assignment whose per-beam decoding order is ascending own-beam
    /// gain (weakest decoded first, lower index first on ties).
    pub fn with_ascending_order(gains: &GainMatrix, quotas: Vec<usize>, mut beams: Vec<Vec<usize>>) -> Result<Self> {
        if beams.len() > gains.num_beams() {
            return Err(Error::Dimension(format!(
                "{} beams but the gain matrix has {} columns",
                beams.len(),
                gains.num_beams()
            )));
        }
        for (m, users) in beams.iter_mut().enumerate() {
            if users.iter().any(|&k| k >= gains.num_users()) {
                return Err(Error::InvalidInput(format!("beam {m} references an unknown user")));
            }
            sort_ascending(gains, m, users);
        }
        Assignment::new(gains.num_users(), quotas, beams)
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_beams(&self) -> usize {
        self.beams.len()
    }

    pub fn quotas(&self) -> &[usize] {
        &self.quotas
    }

    pub fn beams(&self) -> &[Vec<usize>] {
        &self.beams
    }

    pub fn beam_users(&self, beam: usize) -> &[usize] {
        &self.beams[beam]
    }

    pub fn beam_of(&self, user: usize) -> Option<usize> {
        self.beams.iter().position(|b| b.contains(&user))
    }

    pub fn position(&self, user: usize) -> Option<(usize, usize)> {
        self.beams
            .iter()
            .enumerate()
            .find_map(|(m, b)| b.iter().position(|&k| k == user).map(|p| (m, p)))
    }

    pub fn num_scheduled(&self) -> usize {
        self.beams.iter().map(Vec::len).sum()
    }

    pub fn is_fully_loaded(&self) -> bool {
        self.beams.iter().zip(&self.quotas).all(|(b, &q)| b.len() == q)
    }

    pub fn slots(&self) -> Vec<Slot> {
        self.beams
            .iter()
            .enumerate()
            .flat_map(|(beam, users)| {
                users
                    .iter()
                    .enumerate()
                    .map(move |(pos, &user)| Slot { beam, pos, user })
            })
            .collect()
    }

    /// Stacked index of `user`, if scheduled.
    pub fn slot_index(&self, user: usize) -> Option<usize> {
        let mut offset = 0;
        for b in &self.beams {
            if let Some(p) = b.iter().position(|&k| k == user) {
                return Some(offset + p);
            }
            offset += b.len();
        }
        None
    }

    /// First stacked index of each beam.
    pub fn beam_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.beams.len());
        let mut acc = 0;
        for b in &self.beams {
            offsets.push(acc);
            acc += b.len();
        }
        offsets
    }

    /// Every ordered pair `(earlier, later)` of stacked indices that share a
    /// beam, i.e. `q (q - 1) / 2` pairs per beam.
    pub fn order_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for (m, off) in self.beam_offsets().into_iter().enumerate() {
            let q = self.beams[m].len();
            for j in 0..q {
                for k in j + 1..q {
                    pairs.push((off + j, off + k));
                }
            }
        }
        pairs
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub(crate) fn sort_ascending(gains: &GainMatrix, beam: usize, users: &mut [usize]) {
    users.sort_by(|&a, &b| {
        gains
            .get(a, beam)
            .total_cmp(&gains.get(b, beam))
            .then(a.cmp(&b))
    });
}

/// Transmit powers (Watts) in stacked slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    powers: Vec<f64>,
}

impl PowerAllocation {
    pub fn new(powers: Vec<f64>) -> Result<Self> {
        if let Some(p) = powers.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidInput(format!("power {p} is not a finite nonnegative value")));
        }
        Ok(PowerAllocation { powers })
    }

    /// Clamps tiny negative round-off to zero before validating.
    pub(crate) fn from_solver(mut powers: Vec<f64>) -> Result<Self> {
        for p in &mut powers {
            if *p < 0.0 && *p > -1e-9 * (1.0 + p.abs()) {
                *p = 0.0;
            }
            *p = p.max(0.0);
        }
        PowerAllocation::new(powers)
    }

    pub fn zeros(len: usize) -> Self {
        PowerAllocation { powers: vec![0.0; len] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.powers
    }

    pub fn len(&self) -> usize {
        self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.powers.iter().sum()
    }

    pub fn beam_totals(&self, a: &Assignment) -> Vec<f64> {
        let mut totals = vec![0.0; a.num_beams()];
        for (slot, p) in a.slots().iter().zip(&self.powers) {
            totals[slot.beam] += p;
        }
        totals
    }

    pub fn power_of(&self, a: &Assignment, user: usize) -> Option<f64> {
        a.slot_index(user).map(|s| self.powers[s])
    }

    pub fn scaled(&self, factor: f64) -> PowerAllocation {
        PowerAllocation {
            powers: self.powers.iter().map(|p| p * factor).collect(),
        }
    }

    fn check(&self, a: &Assignment) -> Result<()> {
        if self.powers.len() != a.num_scheduled() {
            return Err(Error::Dimension(format!(
                "{} powers for {} scheduled users",
                self.powers.len(),
                a.num_scheduled()
            )));
        }
        Ok(())
    }
}

/// Per-slot SINR and rate; `rate = log2(1 + sinr)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateVector {
    pub sinr: Vec<f64>,
    pub rate: Vec<f64>,
}

impl RateVector {
    pub fn sum_rate(&self) -> f64 {
        self.rate.iter().sum()
    }
}

fn check_dims(g: &GainMatrix, a: &Assignment) -> Result<()> {
    if g.num_users() != a.num_users() || g.num_beams() != a.num_beams() {
        return Err(Error::Dimension(format!(
            "gain matrix is {}x{} but the assignment covers {} users on {} beams",
            g.num_users(),
            g.num_beams(),
            a.num_users(),
            a.num_beams()
        )));
    }
    Ok(())
}

/// SINR at which `decoder` decodes the message of `owner` on `beam`.
pub fn decode_sinr(
    g: &GainMatrix,
    a: &Assignment,
    p: &PowerAllocation,
    noise_power: f64,
    decoder: usize,
    owner: usize,
    beam: usize,
) -> Result<f64> {
    check_dims(g, a)?;
    p.check(a)?;
    let users = a.beams.get(beam).ok_or_else(|| Error::InvalidInput(format!("no beam {beam}")))?;
    let pos_of = |u: usize| {
        users
            .iter()
            .position(|&k| k == u)
            .ok_or_else(|| Error::InvalidInput(format!("user {u} is not scheduled on beam {beam}")))
    };
    let (pj, pk) = (pos_of(owner)?, pos_of(decoder)?);
    if pj > pk {
        return Err(Error::OrderViolation {
            owner,
            decoder,
            beam,
        });
    }
    let offset = a.beam_offsets()[beam];
    let totals = p.beam_totals(a);
    Ok(sinr_at(g, a, p.as_slice(), &totals, noise_power, decoder, beam, offset, pj))
}

#[allow(clippy::too_many_arguments)]
fn sinr_at(
    g: &GainMatrix,
    a: &Assignment,
    powers: &[f64],
    totals: &[f64],
    noise_power: f64,
    decoder: usize,
    beam: usize,
    offset: usize,
    owner_pos: usize,
) -> f64 {
    let own = g.get(decoder, beam);
    let signal = own * powers[offset + owner_pos];
    if signal == 0.0 {
        return 0.0;
    }
    let q = a.beams[beam].len();
    let intra: f64 = powers[offset + owner_pos + 1..offset + q].iter().sum();
    let inter: f64 = (0..a.num_beams())
        .filter(|&n| n != beam)
        .map(|n| g.get(decoder, n) * totals[n])
        .sum();
    signal / (own * intra + inter + noise_power)
}

/// Each scheduled user's SINR and rate when decoding its own message.
pub fn achievable_rates(g: &GainMatrix, a: &Assignment, p: &PowerAllocation, noise_power: f64) -> Result<RateVector> {
    check_dims(g, a)?;
    p.check(a)?;
    let totals = p.beam_totals(a);
    let offsets = a.beam_offsets();
    let sinr: Vec<f64> = a
        .slots()
        .iter()
        .map(|s| sinr_at(g, a, p.as_slice(), &totals, noise_power, s.user, s.beam, offsets[s.beam], s.pos))
        .collect();
    let rate = sinr.iter().map(|x| (1.0 + x).log2()).collect();
    Ok(RateVector { sinr, rate })
}

/// Signed SIC margin for one ordered pair on a beam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderMargin {
    pub beam: usize,
    /// User decoded first.
    pub earlier: usize,
    /// User decoded later, who must be able to decode `earlier`.
    pub later: usize,
    pub margin: f64,
    /// Magnitude of the terms entering `margin`, used to make the slack relative.
    pub scale: f64,
}

impl OrderMargin {
    pub fn holds(&self) -> bool {
        self.margin >= -ORDER_TOL * self.scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderCheck {
    pub ok: bool,
    pub margins: Vec<OrderMargin>,
}

/// Checks `sum_{n != m} (g_k^m g_j^n - g_j^m g_k^n) beta^n + (g_k^m - g_j^m) sigma^2 >= 0`
/// for every pair with `j` decoded before `k` on beam `m`.
pub fn sic_order_ok(g: &GainMatrix, a: &Assignment, p: &PowerAllocation, noise_power: f64) -> Result<OrderCheck> {
    check_dims(g, a)?;
    p.check(a)?;
    let totals = p.beam_totals(a);
    let mut margins = Vec::new();
    for (m, users) in a.beams.iter().enumerate() {
        for (pj, &j) in users.iter().enumerate() {
            for &k in &users[pj + 1..] {
                let (gkm, gjm) = (g.get(k, m), g.get(j, m));
                let mut margin = (gkm - gjm) * noise_power;
                let mut scale = margin.abs();
                for (n, &bn) in totals.iter().enumerate() {
                    if n == m {
                        continue;
                    }
                    let plus = gkm * g.get(j, n) * bn;
                    let minus = gjm * g.get(k, n) * bn;
                    margin += plus - minus;
                    scale += plus + minus;
                }
                margins.push(OrderMargin {
                    beam: m,
                    earlier: j,
                    later: k,
                    margin,
                    scale,
                });
            }
        }
    }
    Ok(OrderCheck {
        ok: margins.iter().all(OrderMargin::holds),
        margins,
    })
}

/// True iff every scheduled user's rate reaches its floor (closed inequality).
pub fn qos_ok(rates: &RateVector, min_rates: &[f64]) -> bool {
    rates.rate.len() == min_rates.len() && rates.rate.iter().zip(min_rates).all(|(r, min)| *r >= min - QOS_TOL)
}

/// SINR floor equivalent to a rate floor, `2^R - 1`.
pub fn sinr_floor(min_rate: f64) -> f64 {
    min_rate.exp2() - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gains(rows: &[&[f64]]) -> GainMatrix {
        GainMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    /// Direct transcription of the SINR expression, indexed by user.
    fn brute_sinr(g: &GainMatrix, beams: &[Vec<usize>], beta: &[f64], noise: f64, k: usize, j: usize, m: usize) -> f64 {
        let pj = beams[m].iter().position(|&u| u == j).unwrap();
        let mut intra = 0.0;
        for (pi, &i) in beams[m].iter().enumerate() {
            if pi > pj {
                intra += beta[i];
            }
        }
        let mut inter = 0.0;
        for (n, users) in beams.iter().enumerate() {
            if n != m {
                for &i in users {
                    inter += g.get(k, n) * beta[i];
                }
            }
        }
        g.get(k, m) * beta[j] / (g.get(k, m) * intra + inter + noise)
    }

    fn random_instance(seed: u64) -> (GainMatrix, Assignment, PowerAllocation, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..2).map(|_| rng.random_range(0.01..3.0)).collect()).collect();
        let g = GainMatrix::from_rows(rows).unwrap();
        let a = Assignment::new(4, vec![2, 2], vec![vec![0, 1], vec![2, 3]]).unwrap();
        let by_user: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0)).collect();
        let stacked = a.slots().iter().map(|s| by_user[s.user]).collect();
        (g, a, PowerAllocation::new(stacked).unwrap(), by_user)
    }

    #[test]
    fn single_user_unit_sinr() {
        let g = gains(&[&[1.0]]);
        let a = Assignment::new(1, vec![1], vec![vec![0]]).unwrap();
        let p = PowerAllocation::new(vec![1.0]).unwrap();
        assert_eq!(decode_sinr(&g, &a, &p, 1.0, 0, 0, 0).unwrap(), 1.0);
    }

    #[test]
    fn last_decoded_user_sees_no_intra_interference() {
        let g = gains(&[&[1.0], &[4.0]]);
        let a = Assignment::new(2, vec![2], vec![vec![0, 1]]).unwrap();
        let p = PowerAllocation::new(vec![1.5, 0.5]).unwrap();
        let s = decode_sinr(&g, &a, &p, 1.0, 1, 1, 0).unwrap();
        assert!((s - 4.0 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn decode_sinr_matches_brute_force() {
        for seed in 0..20 {
            let (g, a, p, by_user) = random_instance(seed);
            for m in 0..2 {
                let users = a.beam_users(m).to_vec();
                for (pj, &j) in users.iter().enumerate() {
                    for &k in &users[pj..] {
                        let got = decode_sinr(&g, &a, &p, 0.7, k, j, m).unwrap();
                        let want = brute_sinr(&g, a.beams(), &by_user, 0.7, k, j, m);
                        assert!((got - want).abs() <= 1e-12 * want.max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn decode_sinr_rejects_reversed_order() {
        let (g, a, p, _) = random_instance(1);
        let err = decode_sinr(&g, &a, &p, 1.0, 0, 1, 0).unwrap_err();
        assert!(matches!(err, Error::OrderViolation { owner: 1, decoder: 0, beam: 0 }));
    }

    #[test]
    fn zero_power_gives_zero_rate() {
        let (g, a, _, _) = random_instance(2);
        let r = achievable_rates(&g, &a, &PowerAllocation::zeros(4), 1.0).unwrap();
        assert!(r.rate.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_user_rate_is_two_bits() {
        let g = gains(&[&[3.0]]);
        let a = Assignment::new(1, vec![1], vec![vec![0]]).unwrap();
        let r = achievable_rates(&g, &a, &PowerAllocation::new(vec![1.0]).unwrap(), 1.0).unwrap();
        assert!((r.sum_rate() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn sum_rate_agrees_with_decode_sinr() {
        for seed in 0..10 {
            let (g, a, p, _) = random_instance(seed);
            let r = achievable_rates(&g, &a, &p, 1.3).unwrap();
            let mut total = 0.0;
            for s in a.slots() {
                total += (1.0 + decode_sinr(&g, &a, &p, 1.3, s.user, s.user, s.beam).unwrap()).log2();
            }
            assert!((total - r.sum_rate()).abs() < 1e-12);
            for (x, rate) in r.sinr.iter().zip(&r.rate) {
                assert_eq!(*rate, (1.0 + x).log2());
            }
        }
    }

    #[test]
    fn single_beam_ascending_order_passes() {
        let g = gains(&[&[0.5], &[2.0], &[1.0]]);
        let a = Assignment::with_ascending_order(&g, vec![3], vec![vec![1, 0, 2]]).unwrap();
        assert_eq!(a.beam_users(0), &[0, 2, 1]);
        let p = PowerAllocation::new(vec![1.0, 1.0, 1.0]).unwrap();
        let check = sic_order_ok(&g, &a, &p, 2.0).unwrap();
        assert!(check.ok);
        assert_eq!(check.margins.len(), 3);
        for mm in &check.margins {
            let expected = (g.get(mm.later, 0) - g.get(mm.earlier, 0)) * 2.0;
            assert!((mm.margin - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn single_beam_descending_order_fails() {
        let g = gains(&[&[0.5], &[2.0]]);
        let a = Assignment::new(2, vec![2], vec![vec![1, 0]]).unwrap();
        let p = PowerAllocation::new(vec![1.0, 1.0]).unwrap();
        assert!(!sic_order_ok(&g, &a, &p, 1.0).unwrap().ok);
    }

    #[test]
    fn order_check_matches_rate_inequality() {
        for seed in 0..200 {
            let (g, a, p, _) = random_instance(seed);
            let check = sic_order_ok(&g, &a, &p, 1.0).unwrap();
            let mut direct = true;
            for m in 0..2 {
                let users = a.beam_users(m);
                let j = users[0];
                let k = users[1];
                let own = decode_sinr(&g, &a, &p, 1.0, j, j, m).unwrap();
                let other = decode_sinr(&g, &a, &p, 1.0, k, j, m).unwrap();
                if (1.0 + other).log2() < (1.0 + own).log2() - 1e-12 {
                    direct = false;
                }
            }
            assert_eq!(check.ok, direct, "seed {seed}: {:?}", check.margins);
        }
    }

    #[test]
    fn qos_boundaries() {
        let r = RateVector {
            sinr: vec![1.0, 3.0],
            rate: vec![1.0, 2.0],
        };
        assert!(qos_ok(&r, &[0.0, 0.0]));
        assert!(qos_ok(&r, &[1.0, 2.0]));
        assert!(!qos_ok(&r, &[1.0, 2.001]));
    }

    #[test]
    fn qos_matches_elementwise_comparison() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let rate: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..3.0)).collect();
            let floors: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.5)).collect();
            let mut expected = true;
            for i in 0..5 {
                if rate[i] < floors[i] {
                    expected = false;
                }
            }
            let rv = RateVector {
                sinr: rate.iter().map(|r| r.exp2() - 1.0).collect(),
                rate,
            };
            assert_eq!(qos_ok(&rv, &floors), expected);
        }
    }

    #[test]
    fn assignment_validation() {
        assert!(Assignment::new(3, vec![2, 1], vec![vec![0, 1], vec![1]]).is_err());
        assert!(Assignment::new(3, vec![1, 1], vec![vec![0, 1], vec![2]]).is_err());
        assert!(Assignment::new(3, vec![2], vec![vec![0, 3]]).is_err());
        let a = Assignment::new(5, vec![2, 2], vec![vec![4, 1], vec![0]]).unwrap();
        assert_eq!(a.beam_of(0), Some(1));
        assert_eq!(a.beam_of(2), None);
        assert_eq!(a.slot_index(0), Some(2));
        assert!(!a.is_fully_loaded());
        assert_eq!(a.order_pairs(), vec![(0, 1)]);
    }

    #[test]
    fn assignment_json_round_trip() {
        let a = Assignment::new(4, vec![2, 2], vec![vec![3, 0], vec![1, 2]]).unwrap();
        let back = Assignment::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(a, back);
        assert!(Assignment::from_json(r#"{"num_users":2,"quotas":[1],"beams":[[0,1]]}"#).is_err());
    }

    #[test]
    fn pairs_per_beam() {
        let a = Assignment::new(6, vec![3, 3], vec![vec![0, 1, 2], vec![3, 4, 5]]).unwrap();
        assert_eq!(a.order_pairs().len(), 6);
    }
}
