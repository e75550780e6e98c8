//! Cell geometry and channel realization.
//!
//! The channel between user `k` and RRH `r` on subcarrier `n` is
//! `h² = PL(d) · SH · |F(n)|²`: distance path loss anchored at the cell edge,
//! lognormal shadowing, and the frequency response of a tapped delay line
//! with an exponential power delay profile and independent complex Gaussian
//! taps (Rayleigh fading, correlated across subcarriers through `F`).

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::params::SystemParams;
use crate::rng::{Purpose, TrialStreams};

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("gain tensor has {got} entries, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("gain at (k={0}, n={1}, r={2}) is not strictly positive and finite")]
    BadGain(usize, usize, usize),
    #[error("noise power must be positive and finite")]
    BadNoise,
    #[error("malformed channel file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub users: Vec<Point>,
    pub rrhs: Vec<Point>,
}

/// Whether `p` lies in the regular hexagon of circumradius `radius` centered
/// at the origin with a vertex on the positive x axis.
pub fn hex_contains(p: Point, radius: f64) -> bool {
    let (ax, ay) = (p.x.abs(), p.y.abs());
    ay <= 0.5 * SQRT3 * radius && SQRT3 * ax + ay <= SQRT3 * radius
}

/// RRH 0 sits at the cell center; the others are spread evenly on a ring,
/// the first one at angle 0.
pub fn place_rrhs(params: &SystemParams) -> Vec<Point> {
    let ring = params.rrh_ring_fraction * params.cell_radius;
    let outer = params.num_rrh.saturating_sub(1);
    let mut rrhs = vec![Point { x: 0.0, y: 0.0 }];
    for i in 0..outer {
        let angle = 2.0 * PI * i as f64 / outer as f64;
        rrhs.push(Point {
            x: ring * angle.cos(),
            y: ring * angle.sin(),
        });
    }
    rrhs
}

/// Users uniform over the hexagonal cell, by rejection from the bounding box.
pub fn place_users<R: Rng>(params: &SystemParams, rng: &mut R) -> Vec<Point> {
    let radius = params.cell_radius;
    let half_height = 0.5 * SQRT3 * radius;
    let mut users = Vec::with_capacity(params.num_users);
    while users.len() < params.num_users {
        let p = Point {
            x: rng.random_range(-radius..=radius),
            y: rng.random_range(-half_height..=half_height),
        };
        if hex_contains(p, radius) {
            users.push(p);
        }
    }
    users
}

pub fn place_geometry(params: &SystemParams, streams: &TrialStreams) -> Geometry {
    let mut rng = streams.stream(Purpose::UserPlacement, 0, 0);
    Geometry {
        users: place_users(params, &mut rng),
        rrhs: place_rrhs(params),
    }
}

/// Discrete power delay profile of a tapped delay line.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingProfile {
    pub tap_delays: Vec<f64>,
    pub tap_powers: Vec<f64>,
}

impl FadingProfile {
    /// Tap-to-tap power decay of the exponential profile, in nepers.
    pub const TAP_DECAY: f64 = 0.5;
    pub const DEFAULT_TAPS: usize = 8;

    /// Single tap at zero delay: flat Rayleigh fading.
    pub fn flat() -> Self {
        Self {
            tap_delays: vec![0.0],
            tap_powers: vec![1.0],
        }
    }

    /// `num_taps` equally spaced taps with powers decaying as
    /// `exp(-TAP_DECAY * i)`, spacing chosen so the rms delay spread equals
    /// `rms_delay`.
    pub fn exponential(num_taps: usize, rms_delay: f64) -> Self {
        if num_taps <= 1 || rms_delay == 0.0 {
            return Self::flat();
        }
        let raw: Vec<f64> = (0..num_taps).map(|i| (-Self::TAP_DECAY * i as f64).exp()).collect();
        let total: f64 = raw.iter().sum();
        let tap_powers: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let mean: f64 = tap_powers.iter().enumerate().map(|(i, p)| i as f64 * p).sum();
        let second: f64 = tap_powers.iter().enumerate().map(|(i, p)| (i as f64).powi(2) * p).sum();
        let index_spread = (second - mean * mean).sqrt();
        let spacing = rms_delay / index_spread;
        Self {
            tap_delays: (0..num_taps).map(|i| i as f64 * spacing).collect(),
            tap_powers,
        }
    }

    pub fn rms_delay_spread(&self) -> f64 {
        let total: f64 = self.tap_powers.iter().sum();
        let mean = self
            .tap_delays
            .iter()
            .zip(&self.tap_powers)
            .map(|(t, p)| t * p)
            .sum::<f64>()
            / total;
        let second = self
            .tap_delays
            .iter()
            .zip(&self.tap_powers)
            .map(|(t, p)| t * t * p)
            .sum::<f64>()
            / total;
        (second - mean * mean).max(0.0).sqrt()
    }

    /// `E[F(f) F*(f + df)]` for the profile.
    pub fn frequency_correlation(&self, df: f64) -> (f64, f64) {
        self.tap_delays
            .iter()
            .zip(&self.tap_powers)
            .fold((0.0, 0.0), |(re, im), (t, p)| {
                let phase = 2.0 * PI * df * t;
                (re + p * phase.cos(), im + p * phase.sin())
            })
    }

    /// `|F(n)|²` at `num_subcarriers` frequencies spaced by `spacing`, for one
    /// draw of the tap coefficients.
    pub fn response<R: Rng>(&self, num_subcarriers: usize, spacing: f64, rng: &mut R) -> Vec<f64> {
        let taps: Vec<(f64, f64)> = self
            .tap_powers
            .iter()
            .map(|p| {
                let scale = (0.5 * p).sqrt();
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                (scale * re, scale * im)
            })
            .collect();
        (0..num_subcarriers)
            .map(|n| {
                let f = n as f64 * spacing;
                let (mut re, mut im) = (0.0, 0.0);
                for ((a, b), t) in taps.iter().zip(&self.tap_delays) {
                    let phase = -2.0 * PI * f * t;
                    let (s, c) = phase.sin_cos();
                    re += a * c - b * s;
                    im += a * s + b * c;
                }
                re * re + im * im
            })
            .collect()
    }
}

/// Large- and small-scale propagation model of the cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub cell_radius: f64,
    pub pathloss_exponent: f64,
    pub pathloss_edge_db: f64,
    pub min_distance: f64,
    pub shadowing_sigma_db: f64,
    /// `None` disables small-scale fading (`|F|² = 1`).
    pub profile: Option<FadingProfile>,
}

impl ChannelModel {
    pub fn from_params(params: &SystemParams) -> Self {
        Self {
            cell_radius: params.cell_radius,
            pathloss_exponent: params.pathloss_exponent,
            pathloss_edge_db: params.pathloss_edge_db,
            min_distance: params.min_distance_clamp,
            shadowing_sigma_db: params.shadowing_sigma,
            profile: Some(FadingProfile::exponential(
                FadingProfile::DEFAULT_TAPS,
                params.rms_delay_spread,
            )),
        }
    }

    pub fn path_gain(&self, distance: f64) -> f64 {
        let d = distance.max(self.min_distance) / self.cell_radius;
        10f64.powf(-self.pathloss_edge_db / 10.0) * d.powf(-self.pathloss_exponent)
    }

    pub fn shadowing<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.shadowing_sigma_db == 0.0 {
            return 1.0;
        }
        let z: f64 = rng.sample(StandardNormal);
        10f64.powf(self.shadowing_sigma_db * z / 10.0)
    }

    pub fn realize(
        &self,
        geometry: &Geometry,
        num_subcarriers: usize,
        subcarrier_spacing: f64,
        noise_power: f64,
        streams: &TrialStreams,
    ) -> ChannelTensor {
        let k_count = geometry.users.len();
        let r_count = geometry.rrhs.len();
        let mut gains = vec![0.0; k_count * num_subcarriers * r_count];
        for (k, user) in geometry.users.iter().enumerate() {
            for (r, rrh) in geometry.rrhs.iter().enumerate() {
                let large =
                    self.path_gain(user.distance(rrh)) * self.shadowing(&mut streams.stream(Purpose::Shadowing, k, r));
                let fading = match &self.profile {
                    Some(profile) => profile.response(
                        num_subcarriers,
                        subcarrier_spacing,
                        &mut streams.stream(Purpose::Fading, k, r),
                    ),
                    None => vec![1.0; num_subcarriers],
                };
                for (n, f) in fading.into_iter().enumerate() {
                    gains[(k * num_subcarriers + n) * r_count + r] = large * f;
                }
            }
        }
        ChannelTensor {
            num_users: k_count,
            num_subcarriers,
            num_rrh: r_count,
            gains,
            noise_power,
        }
    }
}

/// Draws the geometry and channel of trial `trial`.
pub fn realize_channel(params: &SystemParams, geometry: &Geometry, streams: &TrialStreams) -> ChannelTensor {
    ChannelModel::from_params(params).realize(
        geometry,
        params.num_subcarriers,
        params.subcarrier_bandwidth(),
        params.noise_power(),
        streams,
    )
}

pub fn generate_trial(params: &SystemParams, trial: u64) -> (Geometry, ChannelTensor) {
    let streams = TrialStreams::new(params.seed, trial);
    let geometry = place_geometry(params, &streams);
    let channel = realize_channel(params, &geometry, &streams);
    (geometry, channel)
}

/// Squared channel gains `h²[k][n][r]` and the per-subcarrier noise power.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    num_users: usize,
    num_subcarriers: usize,
    num_rrh: usize,
    gains: Vec<f64>,
    noise_power: f64,
}

impl ChannelTensor {
    pub fn new(
        num_users: usize,
        num_subcarriers: usize,
        num_rrh: usize,
        gains: Vec<f64>,
        noise_power: f64,
    ) -> Result<Self, ChannelError> {
        let expected = num_users * num_subcarriers * num_rrh;
        if gains.len() != expected {
            return Err(ChannelError::Shape {
                expected,
                got: gains.len(),
            });
        }
        if !(noise_power.is_finite() && noise_power > 0.0) {
            return Err(ChannelError::BadNoise);
        }
        if let Some(i) = gains.iter().position(|g| !(g.is_finite() && *g > 0.0)) {
            let r = i % num_rrh;
            let n = (i / num_rrh) % num_subcarriers;
            let k = i / (num_rrh * num_subcarriers);
            return Err(ChannelError::BadGain(k, n, r));
        }
        Ok(Self {
            num_users,
            num_subcarriers,
            num_rrh,
            gains,
            noise_power,
        })
    }

    /// Builds a tensor from a closure over `(k, n, r)`.
    pub fn from_fn(
        num_users: usize,
        num_subcarriers: usize,
        num_rrh: usize,
        noise_power: f64,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self, ChannelError> {
        let mut gains = Vec::with_capacity(num_users * num_subcarriers * num_rrh);
        for k in 0..num_users {
            for n in 0..num_subcarriers {
                for r in 0..num_rrh {
                    gains.push(f(k, n, r));
                }
            }
        }
        Self::new(num_users, num_subcarriers, num_rrh, gains, noise_power)
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    pub fn num_rrh(&self) -> usize {
        self.num_rrh
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_power
    }

    /// `h²` between user `k` and RRH `r` on subcarrier `n`.
    #[inline]
    pub fn gain(&self, k: usize, n: usize, r: usize) -> f64 {
        self.gains[(k * self.num_subcarriers + n) * self.num_rrh + r]
    }

    /// `h² / σ²`, the gain in units of inverse mW.
    #[inline]
    pub fn snr_gain(&self, k: usize, n: usize, r: usize) -> f64 {
        self.gain(k, n, r) / self.noise_power
    }

    /// The channel seen when only the central RRH transmits.
    pub fn center_only(&self) -> ChannelTensor {
        let gains = (0..self.num_users)
            .flat_map(|k| (0..self.num_subcarriers).map(move |n| (k, n)))
            .map(|(k, n)| self.gain(k, n, 0))
            .collect();
        ChannelTensor {
            num_users: self.num_users,
            num_subcarriers: self.num_subcarriers,
            num_rrh: 1,
            gains,
            noise_power: self.noise_power,
        }
    }

    /// CSV export: one comment header line, a column header, then one row per
    /// `(k, n, r)` in row-major order.
    pub fn write_csv<W: Write>(&self, mut out: W, seed: u64, trial: u64) -> Result<(), ChannelError> {
        writeln!(
            out,
            "# K={} S={} R={} seed={} trial={} noise_power={:e}",
            self.num_users, self.num_subcarriers, self.num_rrh, seed, trial, self.noise_power
        )?;
        writeln!(out, "user,subcarrier,rrh,power_gain")?;
        let mut line = String::new();
        for k in 0..self.num_users {
            for n in 0..self.num_subcarriers {
                for r in 0..self.num_rrh {
                    line.clear();
                    let _ = write!(line, "{k},{n},{r},{:e}", self.gain(k, n, r));
                    writeln!(out, "{line}")?;
                }
            }
        }
        Ok(())
    }

    /// Reads a tensor written by [`ChannelTensor::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, ChannelError> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| ChannelError::Parse("empty file".into()))??;
        let mut dims = [None; 3];
        let mut noise = None;
        for field in header.trim_start_matches('#').split_whitespace() {
            let Some((key, value)) = field.split_once('=') else {
                continue;
            };
            let bad = |_| ChannelError::Parse(format!("bad header field {field}"));
            match key {
                "K" => dims[0] = Some(value.parse::<usize>().map_err(bad)?),
                "S" => dims[1] = Some(value.parse::<usize>().map_err(bad)?),
                "R" => dims[2] = Some(value.parse::<usize>().map_err(bad)?),
                "noise_power" => {
                    noise = Some(
                        value
                            .parse::<f64>()
                            .map_err(|_| ChannelError::Parse(format!("bad header field {field}")))?,
                    )
                }
                _ => {}
            }
        }
        let [Some(k_count), Some(s_count), Some(r_count)] = dims else {
            return Err(ChannelError::Parse("header lacks K, S or R".into()));
        };
        let noise = noise.ok_or_else(|| ChannelError::Parse("header lacks noise_power".into()))?;
        let _columns = lines.next();
        let mut gains = vec![f64::NAN; k_count * s_count * r_count];
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(ChannelError::Parse(format!("bad row {line:?}")));
            }
            let parse_idx = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| ChannelError::Parse(format!("bad row {line:?}")))
            };
            let (k, n, r) = (parse_idx(fields[0])?, parse_idx(fields[1])?, parse_idx(fields[2])?);
            if k >= k_count || n >= s_count || r >= r_count {
                return Err(ChannelError::Parse(format!("index out of range in {line:?}")));
            }
            gains[(k * s_count + n) * r_count + r] = fields[3]
                .trim()
                .parse()
                .map_err(|_| ChannelError::Parse(format!("bad row {line:?}")))?;
        }
        Self::new(k_count, s_count, r_count, gains, noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> SystemParams {
        SystemParams::default()
    }

    #[test]
    fn single_rrh_is_center() {
        let p = SystemParams { num_rrh: 1, ..params() };
        assert_eq!(place_rrhs(&p), vec![Point { x: 0.0, y: 0.0 }]);
    }

    #[test]
    fn four_rrhs_on_ring() {
        let rrhs = place_rrhs(&params());
        assert_eq!(rrhs.len(), 4);
        assert_eq!(rrhs[0], Point { x: 0.0, y: 0.0 });
        let ring = 1000.0 / 3.0;
        for (i, p) in rrhs[1..].iter().enumerate() {
            let angle = (i as f64) * 2.0 * PI / 3.0;
            assert!((p.x - ring * angle.cos()).abs() < 1e-9);
            assert!((p.y - ring * angle.sin()).abs() < 1e-9);
            assert!((p.distance(&rrhs[0]) - 333.333_333_333).abs() < 1e-6);
        }
    }

    #[test]
    fn seven_rrhs_spaced_sixty_degrees() {
        let rrhs = place_rrhs(&SystemParams { num_rrh: 7, ..params() });
        assert_eq!(rrhs.len(), 7);
        for w in rrhs[1..].windows(2) {
            let a = w[0].y.atan2(w[0].x);
            let b = w[1].y.atan2(w[1].x);
            let diff = (b - a).rem_euclid(2.0 * PI);
            assert!((diff - PI / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn users_inside_hexagon_and_deterministic() {
        let p = SystemParams {
            num_users: 1,
            ..params()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let users = place_users(&p, &mut rng);
        assert_eq!(users.len(), 1);
        assert!(hex_contains(users[0], p.cell_radius));

        let s = TrialStreams::new(9, 2);
        assert_eq!(place_geometry(&params(), &s), place_geometry(&params(), &s));
    }

    #[test]
    fn hex_predicate_corners() {
        assert!(hex_contains(Point { x: 500.0, y: 0.0 }, 500.0));
        assert!(!hex_contains(Point { x: 501.0, y: 0.0 }, 500.0));
        assert!(hex_contains(Point { x: 0.0, y: 433.0 }, 500.0));
        assert!(!hex_contains(Point { x: 0.0, y: 434.0 }, 500.0));
        assert!(!hex_contains(Point { x: 400.0, y: 300.0 }, 500.0));
    }

    #[test]
    fn exponential_profile_hits_target_rms() {
        let profile = FadingProfile::exponential(8, 500e-9);
        let total: f64 = profile.tap_powers.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(profile.tap_powers.iter().all(|p| *p >= 0.0));
        let rms = profile.rms_delay_spread();
        assert!((rms - 500e-9).abs() / 500e-9 < 0.01, "{rms}");
    }

    #[test]
    fn flat_profile_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = FadingProfile::flat().response(16, 156_250.0, &mut rng);
        assert!(f.iter().all(|v| (v - f[0]).abs() < 1e-12 * f[0]));
        // unit mean square
        let mean: f64 = (0..20_000)
            .map(|_| FadingProfile::flat().response(1, 1.0, &mut rng)[0])
            .sum::<f64>()
            / 20_000.0;
        assert!((mean - 1.0).abs() < 0.03, "{mean}");
    }

    #[test]
    fn edge_user_has_unit_gain_without_fading() {
        let p = SystemParams {
            num_users: 1,
            num_rrh: 1,
            num_subcarriers: 4,
            pathloss_edge_db: 0.0,
            ..params()
        };
        let model = ChannelModel {
            shadowing_sigma_db: 0.0,
            profile: None,
            ..ChannelModel::from_params(&p)
        };
        let geometry = Geometry {
            users: vec![Point { x: 500.0, y: 0.0 }],
            rrhs: place_rrhs(&p),
        };
        let h = model.realize(&geometry, 4, 1.0, 1.0, &TrialStreams::new(0, 0));
        for n in 0..4 {
            assert!((h.gain(0, n, 0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn min_distance_clamp_applies() {
        let model = ChannelModel::from_params(&params());
        assert_eq!(model.path_gain(0.0), model.path_gain(10.0));
        assert!(model.path_gain(20.0) < model.path_gain(10.0));
    }

    #[test]
    fn realization_is_pure_function_of_seed() {
        let p = SystemParams {
            num_users: 4,
            num_subcarriers: 8,
            ..params()
        };
        let (g1, c1) = generate_trial(&p, 5);
        let (g2, c2) = generate_trial(&p, 5);
        assert_eq!(g1, g2);
        assert_eq!(c1, c2);
        let (_, c3) = generate_trial(&p, 6);
        assert_ne!(c1, c3);
    }

    #[test]
    fn center_only_view() {
        let h = ChannelTensor::from_fn(2, 3, 4, 1.0, |k, n, r| 1.0 + (k * 100 + n * 10 + r) as f64).unwrap();
        let c = h.center_only();
        assert_eq!(c.num_rrh(), 1);
        for k in 0..2 {
            for n in 0..3 {
                assert_eq!(c.gain(k, n, 0), h.gain(k, n, 0));
            }
        }
    }

    #[test]
    fn rejects_bad_gains() {
        assert!(matches!(
            ChannelTensor::new(1, 1, 1, vec![0.0], 1.0),
            Err(ChannelError::BadGain(0, 0, 0))
        ));
        assert!(matches!(
            ChannelTensor::new(1, 2, 1, vec![1.0], 1.0),
            Err(ChannelError::Shape { .. })
        ));
    }

    #[test]
    fn csv_replay_is_exact() {
        let p = SystemParams {
            num_users: 3,
            num_subcarriers: 5,
            ..params()
        };
        let (_, h) = generate_trial(&p, 2);
        let mut buf = Vec::new();
        h.write_csv(&mut buf, p.seed, 2).unwrap();
        let back = ChannelTensor::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, h);
    }
}
