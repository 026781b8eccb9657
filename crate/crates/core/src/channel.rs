//! Geometric mmWave channel, random orthogonal beams and equivalent gains.
//!
//! A user's channel is the superposition of `L` propagation paths seen
//! through a half-wavelength uniform linear array with `M` antennas. Path 1
//! is the line-of-sight path; the rest are non-line-of-sight and use the
//! NLoS path-loss exponent.
//!
//! The base station forms `M` orthogonal steering beams rotated by a common
//! random offset, and each user reports only the squared magnitude of its
//! channel projected on every beam.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Users closer than this to the base station are excluded from the drop.
pub const MIN_USER_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub carrier_frequency_hz: f64,
    /// Number of propagation paths; path 1 is line-of-sight.
    pub num_paths: usize,
    pub alpha_los: f64,
    pub alpha_nlos: f64,
    pub cell_radius_m: f64,
    /// Antenna count, equal to the number of beams.
    pub num_antennas: usize,
    /// Noise power in Watts.
    pub noise_power: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            carrier_frequency_hz: 28.0e9,
            num_paths: 3,
            alpha_los: 2.0,
            alpha_nlos: 3.0,
            cell_radius_m: 10.0,
            num_antennas: 2,
            noise_power: 1.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_frequency_hz", self.carrier_frequency_hz),
            ("alpha_los", self.alpha_los),
            ("alpha_nlos", self.alpha_nlos),
            ("cell_radius_m", self.cell_radius_m),
            ("noise_power", self.noise_power),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if self.num_paths == 0 {
            return Err(Error::InvalidInput("num_paths must be at least 1".into()));
        }
        if self.num_antennas == 0 {
            return Err(Error::InvalidInput("num_antennas must be at least 1".into()));
        }
        if self.cell_radius_m <= MIN_USER_DISTANCE_M {
            return Err(Error::InvalidInput(format!(
                "cell_radius_m must exceed the {MIN_USER_DISTANCE_M} m exclusion radius"
            )));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    /// Frequency-dependent path-loss constant `(c / (4 pi f_c))^2`.
    pub fn eta(&self) -> f64 {
        let r = SPEED_OF_LIGHT / (4.0 * PI * self.carrier_frequency_hz);
        r * r
    }

    /// Average path loss of path `path` (0-based; 0 is LoS) at distance `d`.
    pub fn path_loss(&self, distance_m: f64, path: usize) -> f64 {
        let alpha = if path == 0 { self.alpha_los } else { self.alpha_nlos };
        self.eta() * distance_m.powf(-alpha)
    }
}

/// ULA response `[1, e^{j pi theta}, ..., e^{j (M-1) pi theta}] / sqrt(M)`.
pub fn steering_vector(theta: f64, num_antennas: usize) -> Vec<Complex64> {
    let scale = 1.0 / (num_antennas as f64).sqrt();
    (0..num_antennas)
        .map(|i| Complex64::from_polar(scale, PI * i as f64 * theta))
        .collect()
}

/// One drop of `K` users with their multipath channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub distances: Vec<f64>,
    /// `path_gains[k][l]`, standard complex Gaussian.
    pub path_gains: Vec<Vec<Complex64>>,
    /// `path_angles[k][l]`, normalized direction in `[-1, 1]`.
    pub path_angles: Vec<Vec<f64>>,
    /// `path_loss[k][l]`, average power loss of each path.
    pub path_loss: Vec<Vec<f64>>,
    pub channel_vectors: Vec<Vec<Complex64>>,
}

impl ChannelRealization {
    /// Builds channel vectors from explicit path parameters.
    pub fn from_paths(
        params: &ChannelParams,
        distances: Vec<f64>,
        path_gains: Vec<Vec<Complex64>>,
        path_angles: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let k = distances.len();
        if path_gains.len() != k || path_angles.len() != k {
            return Err(Error::Dimension(format!(
                "{k} distances but {} gain rows and {} angle rows",
                path_gains.len(),
                path_angles.len()
            )));
        }
        let m = params.num_antennas;
        let mut path_loss = Vec::with_capacity(k);
        let mut channel_vectors = Vec::with_capacity(k);
        for user in 0..k {
            if path_gains[user].len() != path_angles[user].len() {
                return Err(Error::Dimension(format!("user {user}: gains and angles differ in length")));
            }
            let losses: Vec<f64> = (0..path_gains[user].len())
                .map(|l| params.path_loss(distances[user], l))
                .collect();
            channel_vectors.push(synthesize(m, &losses, &path_gains[user], &path_angles[user]));
            path_loss.push(losses);
        }
        Ok(ChannelRealization {
            distances,
            path_gains,
            path_angles,
            path_loss,
            channel_vectors,
        })
    }

    pub fn num_users(&self) -> usize {
        self.channel_vectors.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.channel_vectors.first().map_or(0, Vec::len)
    }

    /// Largest deviation between the stored channel vectors and a fresh
    /// synthesis from the stored path parameters.
    pub fn reconstruction_residual(&self) -> f64 {
        let m = self.num_antennas();
        let mut worst: f64 = 0.0;
        for user in 0..self.num_users() {
            let h = synthesize(
                m,
                &self.path_loss[user],
                &self.path_gains[user],
                &self.path_angles[user],
            );
            for (a, b) in h.iter().zip(&self.channel_vectors[user]) {
                worst = worst.max((a - b).norm());
            }
        }
        worst
    }
}

fn synthesize(m: usize, losses: &[f64], gains: &[Complex64], angles: &[f64]) -> Vec<Complex64> {
    let mut h = vec![Complex64::new(0.0, 0.0); m];
    for ((&rho, &a), &theta) in losses.iter().zip(gains).zip(angles) {
        let amp = a * (m as f64 * rho).sqrt();
        for (hi, si) in h.iter_mut().zip(steering_vector(theta, m)) {
            *hi += amp * si;
        }
    }
    h
}

/// Draws `num_users` users uniformly in distance over `(1 m, R_c]` with
/// i.i.d. Rayleigh path gains and uniform angles of departure.
pub fn draw_channel(params: &ChannelParams, num_users: usize, seed: u64) -> Result<ChannelRealization> {
    params.validate()?;
    if num_users == 0 {
        return Err(Error::InvalidInput("at least one user is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // CN(0, 1): each quadrature has variance 1/2.
    let quad = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid normal");
    let span = params.cell_radius_m - MIN_USER_DISTANCE_M;
    let mut distances = Vec::with_capacity(num_users);
    let mut gains = Vec::with_capacity(num_users);
    let mut angles = Vec::with_capacity(num_users);
    for _ in 0..num_users {
        // 1 - u lies in (0, 1], so the exclusion radius itself is never drawn.
        let u: f64 = rng.random();
        distances.push(MIN_USER_DISTANCE_M + span * (1.0 - u));
        let mut g = Vec::with_capacity(params.num_paths);
        let mut a = Vec::with_capacity(params.num_paths);
        for _ in 0..params.num_paths {
            g.push(Complex64::new(quad.sample(&mut rng), quad.sample(&mut rng)));
            let phi = rng.random::<f64>() * 2.0 * PI;
            // theta = 2 d sin(phi) / lambda with d = lambda / 2
            a.push(phi.sin());
        }
        gains.push(g);
        angles.push(a);
    }
    ChannelRealization::from_paths(params, distances, gains, angles)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamSet {
    pub zeta: f64,
    pub beam_vectors: Vec<Vec<Complex64>>,
}

impl BeamSet {
    /// Beams `w_m = a(zeta + 2 (m - 1) / M)` for a given rotation.
    pub fn with_rotation(num_beams: usize, zeta: f64) -> Self {
        let beam_vectors = (0..num_beams)
            .map(|m| steering_vector(zeta + 2.0 * m as f64 / num_beams as f64, num_beams))
            .collect();
        BeamSet { zeta, beam_vectors }
    }

    pub fn len(&self) -> usize {
        self.beam_vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beam_vectors.is_empty()
    }

    /// Largest deviation of `W^H W` from the identity.
    pub fn gram_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, wi) in self.beam_vectors.iter().enumerate() {
            for (j, wj) in self.beam_vectors.iter().enumerate() {
                let ip: Complex64 = wi.iter().zip(wj).map(|(a, b)| a.conj() * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((ip - target).norm());
            }
        }
        worst
    }
}

pub fn draw_beams(num_beams: usize, seed: u64) -> Result<BeamSet> {
    if num_beams == 0 {
        return Err(Error::InvalidInput("at least one beam is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zeta = rng.random_range(-1.0..=1.0);
    Ok(BeamSet::with_rotation(num_beams, zeta))
}

/// Nonnegative `K x M` matrix of equivalent gains, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    num_users: usize,
    num_beams: usize,
    data: Vec<f64>,
}

impl GainMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_users = rows.len();
        let num_beams = rows.first().map_or(0, Vec::len);
        if num_users == 0 || num_beams == 0 {
            return Err(Error::InvalidInput("gain matrix must be non-empty".into()));
        }
        let mut data = Vec::with_capacity(num_users * num_beams);
        for (k, row) in rows.into_iter().enumerate() {
            if row.len() != num_beams {
                return Err(Error::Dimension(format!(
                    "row {k} has {} entries, expected {num_beams}",
                    row.len()
                )));
            }
            for v in row {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidInput(format!("gain {v} in row {k} is not a finite nonnegative number")));
                }
                data.push(v);
            }
        }
        Ok(GainMatrix {
            num_users,
            num_beams,
            data,
        })
    }

    #[inline]
    pub fn get(&self, user: usize, beam: usize) -> f64 {
        self.data[user * self.num_beams + beam]
    }

    pub fn row(&self, user: usize) -> &[f64] {
        &self.data[user * self.num_beams..(user + 1) * self.num_beams]
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_beams(&self) -> usize {
        self.num_beams
    }

    /// Multiplies every gain by `factor`.
    pub fn scaled(&self, factor: f64) -> GainMatrix {
        GainMatrix {
            num_users: self.num_users,
            num_beams: self.num_beams,
            data: self.data.iter().map(|g| g * factor).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for k in 0..self.num_users {
            w.write_record(self.row(k).iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut rows = Vec::new();
        for record in r.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::InvalidInput(format!("bad gain value {s:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        GainMatrix::from_rows(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// `g[k][m] = |h_k^H w_m|^2`.
pub fn equivalent_gains(channel: &ChannelRealization, beams: &BeamSet) -> Result<GainMatrix> {
    let m = beams.len();
    if channel.num_antennas() != m || beams.beam_vectors.iter().any(|w| w.len() != m) {
        return Err(Error::Dimension(format!(
            "channel has {} antennas but there are {m} beams of length {:?}",
            channel.num_antennas(),
            beams.beam_vectors.first().map(Vec::len)
        )));
    }
    let rows = channel
        .channel_vectors
        .iter()
        .map(|h| {
            beams
                .beam_vectors
                .iter()
                .map(|w| {
                    let ip: Complex64 = h.iter().zip(w).map(|(hi, wi)| hi.conj() * wi).sum();
                    ip.norm_sqr()
                })
                .collect()
        })
        .collect();
    GainMatrix::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn steering_vector_zero_angle() {
        let v = steering_vector(0.0, 4);
        for x in &v {
            assert!(close(x.re, 0.5, 1e-15) && close(x.im, 0.0, 1e-15));
        }
    }

    #[test]
    fn steering_vector_half_wavelength_phase() {
        let v = steering_vector(1.0, 2);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(v[0].re, s, 1e-15));
        assert!(close(v[1].re, -s, 1e-15) && close(v[1].im, 0.0, 1e-15));
    }

    #[test]
    fn steering_vector_phase_increments() {
        let theta = 0.37;
        let v = steering_vector(theta, 8);
        let norm: f64 = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        assert!(close(norm, 1.0, 1e-12));
        for i in 1..8 {
            let step = (v[i] / v[i - 1]).arg();
            assert!(close(step, PI * theta, 1e-12), "step {i}: {step}");
        }
    }

    #[test]
    fn single_deterministic_path() {
        let params = ChannelParams {
            num_paths: 1,
            num_antennas: 4,
            ..ChannelParams::default()
        };
        let ch = ChannelRealization::from_paths(
            &params,
            vec![3.0],
            vec![vec![Complex64::new(1.0, 0.0)]],
            vec![vec![0.0]],
        )
        .unwrap();
        let rho = params.path_loss(3.0, 0);
        let expected = (4.0 * rho).sqrt() * 0.5;
        for x in &ch.channel_vectors[0] {
            assert!(close(x.re, expected, 1e-18) && x.im == 0.0);
        }
        let energy: f64 = ch.channel_vectors[0].iter().map(|x| x.norm_sqr()).sum();
        assert!(close(energy / (4.0 * rho), 1.0, 1e-12));
    }

    #[test]
    fn draw_channel_is_deterministic() {
        let params = ChannelParams::default();
        let a = draw_channel(&params, 5, 42).unwrap();
        let b = draw_channel(&params, 5, 42).unwrap();
        assert_eq!(a, b);
        let c = draw_channel(&params, 5, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn distances_inside_cell() {
        let params = ChannelParams::default();
        let ch = draw_channel(&params, 500, 1).unwrap();
        assert!(ch
            .distances
            .iter()
            .all(|&d| d > MIN_USER_DISTANCE_M && d <= params.cell_radius_m));
        assert!(ch.path_angles.iter().flatten().all(|t| (-1.0..=1.0).contains(t)));
    }

    #[test]
    fn average_channel_energy_matches_path_count() {
        // Equal exponents make every path share the same rho_k.
        let params = ChannelParams {
            num_antennas: 4,
            alpha_nlos: 2.0,
            ..ChannelParams::default()
        };
        let ch = draw_channel(&params, 1000, 7).unwrap();
        let mean: f64 = (0..1000)
            .map(|k| {
                let e: f64 = ch.channel_vectors[k].iter().map(|x| x.norm_sqr()).sum();
                e / (4.0 * ch.path_loss[k][0])
            })
            .sum::<f64>()
            / 1000.0;
        assert!((mean - 3.0).abs() / 3.0 < 0.05, "mean {mean}");
    }

    #[test]
    fn reconstruction_is_exact() {
        let ch = draw_channel(&ChannelParams::default(), 20, 3).unwrap();
        assert!(ch.reconstruction_residual() < 1e-12);
    }

    #[test]
    fn single_beam_is_unit_norm() {
        let b = draw_beams(1, 9).unwrap();
        let norm: f64 = b.beam_vectors[0].iter().map(|x| x.norm_sqr()).sum();
        assert!(close(norm, 1.0, 1e-12));
        assert!((-1.0..=1.0).contains(&b.zeta));
    }

    #[test]
    fn beams_are_orthonormal() {
        for seed in 0..20 {
            let b = draw_beams(4, seed).unwrap();
            assert!(b.gram_deviation() < 1e-10);
        }
        let b = BeamSet::with_rotation(2, 0.0);
        let ip: Complex64 = b.beam_vectors[0]
            .iter()
            .zip(&b.beam_vectors[1])
            .map(|(a, c)| a.conj() * c)
            .sum();
        assert!(ip.norm() < 1e-15);
    }

    #[test]
    fn gains_of_a_beam_aligned_channel() {
        let beams = BeamSet::with_rotation(3, 0.2);
        let ch = ChannelRealization {
            distances: vec![1.0, 1.0],
            path_gains: vec![vec![], vec![]],
            path_angles: vec![vec![], vec![]],
            path_loss: vec![vec![], vec![]],
            channel_vectors: vec![beams.beam_vectors[0].clone(), vec![Complex64::new(0.0, 0.0); 3]],
        };
        let g = equivalent_gains(&ch, &beams).unwrap();
        assert!(close(g.get(0, 0), 1.0, 1e-12));
        assert!(g.get(0, 1) < 1e-24 && g.get(0, 2) < 1e-24);
        assert_eq!(g.row(1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn gains_match_brute_force_inner_product() {
        let params = ChannelParams {
            num_antennas: 4,
            ..ChannelParams::default()
        };
        let ch = draw_channel(&params, 6, 11).unwrap();
        let beams = draw_beams(4, 12).unwrap();
        let g = equivalent_gains(&ch, &beams).unwrap();
        for k in 0..6 {
            for m in 0..4 {
                let (mut re, mut im) = (0.0, 0.0);
                for i in 0..4 {
                    let h = ch.channel_vectors[k][i];
                    let w = beams.beam_vectors[m][i];
                    // conj(h) * w
                    re += h.re * w.re + h.im * w.im;
                    im += h.re * w.im - h.im * w.re;
                }
                let brute = re * re + im * im;
                assert!((brute - g.get(k, m)).abs() <= 1e-12 * brute.max(1e-300), "{brute} vs {}", g.get(k, m));
            }
        }
    }

    #[test]
    fn gains_sum_to_channel_energy() {
        let params = ChannelParams {
            num_antennas: 4,
            ..ChannelParams::default()
        };
        let ch = draw_channel(&params, 10, 5).unwrap();
        let beams = draw_beams(4, 6).unwrap();
        let g = equivalent_gains(&ch, &beams).unwrap();
        for k in 0..10 {
            let energy: f64 = ch.channel_vectors[k].iter().map(|x| x.norm_sqr()).sum();
            let total: f64 = g.row(k).iter().sum();
            assert!((energy - total).abs() <= 1e-9 * energy);
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = GainMatrix::from_rows(vec![vec![1.5, 0.25], vec![3e-9, 0.0]]).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back = GainMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn rejects_negative_gain() {
        assert!(GainMatrix::from_rows(vec![vec![1.0, -0.1]]).is_err());
    }
}
