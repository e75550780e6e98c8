//! Slow, independent reference solvers for checking the allocators.
//!
//! Nothing here reuses the closed-form waterfilling of `noma_dbs`: waterlines
//! come from bisection on the achieved rate, minima from exhaustive grids,
//! and optimal OMA allocations from enumerating every subcarrier partition.

use noma_dbs::ChannelTensor;
use thiserror::Error;

pub mod checks;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("instance too large for enumeration: K={users}, S={subcarriers}, R={rrhs} (limits 3, 6, 2)")]
    InstanceTooLarge {
        users: usize,
        subcarriers: usize,
        rrhs: usize,
    },
}

/// A primary result next to its oracle value.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub instance: String,
    pub primary: f64,
    pub oracle: f64,
    pub gap: f64,
}

impl OracleReport {
    pub fn new(instance: impl Into<String>, primary: f64, oracle: f64) -> Self {
        Self {
            instance: instance.into(),
            primary,
            oracle,
            gap: relative_gap(primary, oracle),
        }
    }
}

/// `|a - b| / max(|a|, |b|, ε)`.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Rate in bits/use delivered by waterline `w`, skipping subcarriers it
/// would give negative power.
fn achieved_rate(gains: &[f64], w: f64) -> f64 {
    gains.iter().map(|&g| (w * g).log2().max(0.0)).sum()
}

/// Waterline reaching `rate_norm` bits/use over `gains`, by bisection.
/// Subcarriers below the waterline's floor get no power.
pub fn dichotomy_waterfill(gains: &[f64], rate_norm: f64) -> f64 {
    assert!(!gains.is_empty() && rate_norm >= 0.0);
    let g_max = gains.iter().cloned().fold(f64::MIN, f64::max);
    let mut lo = 1.0 / g_max;
    if rate_norm == 0.0 {
        return lo;
    }
    let mut hi = 2.0 * lo;
    while achieved_rate(gains, hi) < rate_norm {
        hi *= 2.0;
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if achieved_rate(gains, mid) < rate_norm {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Total power of the bisection waterfilling; zero for a nonpositive rate.
pub fn sorted_waterfill_power(gains: &[f64], rate_norm: f64) -> f64 {
    if rate_norm <= 0.0 {
        return 0.0;
    }
    let w = dichotomy_waterfill(gains, rate_norm);
    gains.iter().map(|&g| (w - 1.0 / g).max(0.0)).sum()
}

/// Minimum power to carry `rate_norm` over `gains`, via the active-set
/// closed form: the strongest `j` subcarriers whose level stays above every
/// member's floor. Independent of the bisection above.
pub fn active_set_power(gains: &[f64], rate_norm: f64) -> f64 {
    let mut g: Vec<f64> = gains.to_vec();
    g.sort_by(|a, b| b.total_cmp(a));
    active_set_power_desc(&g, rate_norm)
}

/// [`active_set_power`] for gains already sorted in decreasing order.
pub fn active_set_power_desc(gains: &[f64], rate_norm: f64) -> f64 {
    if rate_norm <= 0.0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut best = f64::INFINITY;
    for (j, &g) in gains.iter().enumerate() {
        log_sum += g.log2();
        let w = ((rate_norm - log_sum) / (j + 1) as f64).exp2();
        if w * g > 1.0 {
            best = gains[..=j].iter().map(|x| w - 1.0 / x).sum();
        } else {
            break;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMin1 {
    pub x: f64,
    pub value: f64,
    /// Cell width of the last grid evaluated.
    pub resolution: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMin2 {
    pub x: f64,
    pub y: f64,
    pub value: f64,
    pub resolution: (f64, f64),
}

/// Evaluates `f` on `points` evenly spaced points of `[lo, hi]`. Non-finite
/// values are skipped.
pub fn grid_min_1d<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, points: usize) -> GridMin1 {
    let step = (hi - lo) / (points - 1) as f64;
    let mut best = GridMin1 {
        x: f64::NAN,
        value: f64::INFINITY,
        resolution: step,
    };
    for i in 0..points {
        let x = lo + step * i as f64;
        let v = f(x);
        if v < best.value {
            best.x = x;
            best.value = v;
        }
    }
    best
}

/// Half-width, in cells of the previous grid, of each zoom window.
const ZOOM_HALF_WIDTH: f64 = 4.0;

/// Whether `v` sits on a window edge that is not also a domain edge, so the
/// minimum may lie outside the window.
fn on_inner_edge(v: f64, window: (f64, f64), domain: (f64, f64), step: f64) -> bool {
    ((v - window.0).abs() < 0.5 * step && window.0 > domain.0)
        || ((v - window.1).abs() < 0.5 * step && window.1 < domain.1)
}

/// [`grid_min_1d`] followed by `rounds` regrids of a window around the
/// incumbent. A window whose best point lies on its border is shifted
/// without refining, so the search can follow a minimum outside it.
pub fn zoom_min_1d<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, points: usize, rounds: usize) -> GridMin1 {
    let mut best = grid_min_1d(&mut f, lo, hi, points);
    let (mut refined, mut steps) = (0, 0);
    while refined < rounds && steps < 20 * rounds {
        steps += 1;
        let r = best.resolution;
        let window = (
            (best.x - ZOOM_HALF_WIDTH * r).max(lo),
            (best.x + ZOOM_HALF_WIDTH * r).min(hi),
        );
        let next = grid_min_1d(&mut f, window.0, window.1, points);
        if next.value > best.value {
            best.resolution = next.resolution;
            refined += 1;
        } else if on_inner_edge(next.x, window, (lo, hi), next.resolution) {
            best = GridMin1 { resolution: r, ..next };
        } else {
            best = next;
            refined += 1;
        }
    }
    best
}

/// Exhaustive 2-D grid of `points × points`.
pub fn grid_min_2d<F: FnMut(f64, f64) -> f64>(mut f: F, x: (f64, f64), y: (f64, f64), points: usize) -> GridMin2 {
    let sx = (x.1 - x.0) / (points - 1) as f64;
    let sy = (y.1 - y.0) / (points - 1) as f64;
    let mut best = GridMin2 {
        x: f64::NAN,
        y: f64::NAN,
        value: f64::INFINITY,
        resolution: (sx, sy),
    };
    for i in 0..points {
        let xi = x.0 + sx * i as f64;
        for j in 0..points {
            let yj = y.0 + sy * j as f64;
            let v = f(xi, yj);
            if v < best.value {
                best.x = xi;
                best.y = yj;
                best.value = v;
            }
        }
    }
    best
}

/// [`grid_min_2d`] refined `rounds` times around the incumbent, shifting
/// the window like [`zoom_min_1d`] when the best point is on its border.
/// Regrids use `zoom_points` per axis.
pub fn zoom_min_2d<F: FnMut(f64, f64) -> f64>(
    mut f: F,
    x: (f64, f64),
    y: (f64, f64),
    points: usize,
    zoom_points: usize,
    rounds: usize,
) -> GridMin2 {
    let mut best = grid_min_2d(&mut f, x, y, points);
    let (mut refined, mut steps) = (0, 0);
    while refined < rounds && steps < 20 * rounds {
        steps += 1;
        let (rx, ry) = best.resolution;
        let wx = (
            (best.x - ZOOM_HALF_WIDTH * rx).max(x.0),
            (best.x + ZOOM_HALF_WIDTH * rx).min(x.1),
        );
        let wy = (
            (best.y - ZOOM_HALF_WIDTH * ry).max(y.0),
            (best.y + ZOOM_HALF_WIDTH * ry).min(y.1),
        );
        let next = grid_min_2d(&mut f, wx, wy, zoom_points);
        if next.value > best.value {
            best.resolution = next.resolution;
            refined += 1;
        } else if on_inner_edge(next.x, wx, x, next.resolution.0) || on_inner_edge(next.y, wy, y, next.resolution.1) {
            best = GridMin2 {
                resolution: (rx, ry),
                ..next
            };
        } else {
            best = next;
            refined += 1;
        }
    }
    best
}

/// Optimal OMA allocation of a small instance.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleAlloc {
    /// mW
    pub total_power: f64,
    /// `(user, rrh)` per subcarrier, `None` when unused.
    pub assignment: Vec<Option<(usize, usize)>>,
    pub partitions_checked: usize,
}

pub const MAX_USERS: usize = 3;
pub const MAX_SUBCARRIERS: usize = 6;
pub const MAX_RRHS: usize = 2;

/// Minimum total power over every assignment of subcarriers to users (each
/// user at least one, subcarriers possibly unused) and of an RRH to every
/// assigned subcarrier, each user waterfilling `rate_norm` bits/use over its
/// set. Gains are normalized by the channel's noise power.
pub fn exhaustive_small_alloc(channel: &ChannelTensor, rate_norm: f64) -> Result<OracleAlloc, OracleError> {
    let (k, s, r) = (channel.num_users(), channel.num_subcarriers(), channel.num_rrh());
    if k > MAX_USERS || s > MAX_SUBCARRIERS || r > MAX_RRHS || k == 0 {
        return Err(OracleError::InstanceTooLarge {
            users: k,
            subcarriers: s,
            rrhs: r,
        });
    }
    // each subcarrier: unused, or one of k*r (user, rrh) choices
    let choices = k * r + 1;
    let total = choices.pow(s as u32);
    let mut best = OracleAlloc {
        total_power: f64::INFINITY,
        assignment: vec![None; s],
        partitions_checked: 0,
    };
    let mut sets: Vec<Vec<f64>> = vec![Vec::with_capacity(s); k];
    for code in 0..total {
        sets.iter_mut().for_each(Vec::clear);
        let mut c = code;
        let mut assignment = vec![None; s];
        for (n, slot) in assignment.iter_mut().enumerate() {
            let d = c % choices;
            c /= choices;
            if d > 0 {
                let (user, rrh) = ((d - 1) / r, (d - 1) % r);
                sets[user].push(channel.snr_gain(user, n, rrh));
                *slot = Some((user, rrh));
            }
        }
        if sets.iter().any(Vec::is_empty) {
            continue;
        }
        best.partitions_checked += 1;
        let power: f64 = sets.iter().map(|g| active_set_power(g, rate_norm)).sum();
        if power < best.total_power {
            best.total_power = power;
            best.assignment = assignment;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dichotomy_examples() {
        assert!(relative_gap(dichotomy_waterfill(&[1.0], 1.0), 2.0) < 1e-12);
        assert!(relative_gap(dichotomy_waterfill(&[1.0, 0.25], 2.0), 4.0) < 1e-12);
    }

    #[test]
    fn dichotomy_skips_weak_subcarriers() {
        // rate 1 over [4, 0.01]: only the strong one is used, w = 0.5
        let w = dichotomy_waterfill(&[4.0, 0.01], 1.0);
        assert!(relative_gap(w, 0.5) < 1e-12);
        assert!(relative_gap(sorted_waterfill_power(&[4.0, 0.01], 1.0), 0.25) < 1e-12);
        assert!(relative_gap(active_set_power(&[0.01, 4.0], 1.0), 0.25) < 1e-12);
    }

    #[test]
    fn quadratic_grid() {
        let m = grid_min_1d(|x| (x - 0.3).powi(2), 0.0, 1.0, 101);
        assert!((m.x - 0.3).abs() <= m.resolution);
        let z = zoom_min_1d(|x| (x - 0.123456).powi(2), 0.0, 1.0, 101, 4);
        assert!((z.x - 0.123456).abs() < 1e-7);
        let g = zoom_min_2d(
            |x, y| (x - 0.2).powi(2) + 3.0 * (y + 0.4).powi(2),
            (0.0, 1.0),
            (-1.0, 1.0),
            51,
            21,
            8,
        );
        assert!((g.x - 0.2).abs() < 1e-6 && (g.y + 0.4).abs() < 1e-6);
    }

    #[test]
    fn exhaustive_counts() {
        let ch = ChannelTensor::from_fn(2, 2, 1, 1.0, |k, n, _| 1.0 + (k * 2 + n) as f64).unwrap();
        let o = exhaustive_small_alloc(&ch, 2.0).unwrap();
        // both users need one subcarrier: two partitions
        assert_eq!(o.partitions_checked, 2);
        let ch = ChannelTensor::from_fn(2, 2, 2, 1.0, |k, n, r| 1.0 + (k * 4 + n * 2 + r) as f64).unwrap();
        assert_eq!(exhaustive_small_alloc(&ch, 2.0).unwrap().partitions_checked, 8);
    }

    #[test]
    fn exhaustive_single_user_uses_all_useful_subcarriers() {
        let ch = ChannelTensor::from_fn(1, 3, 1, 1.0, |_, n, _| [8.0, 4.0, 2.0][n]).unwrap();
        let o = exhaustive_small_alloc(&ch, 6.0).unwrap();
        assert!(relative_gap(o.total_power, active_set_power(&[8.0, 4.0, 2.0], 6.0)) < 1e-14);
    }

    #[test]
    fn too_large() {
        let ch = ChannelTensor::from_fn(4, 6, 1, 1.0, |_, _, _| 1.0).unwrap();
        assert!(matches!(
            exhaustive_small_alloc(&ch, 1.0),
            Err(OracleError::InstanceTooLarge { .. })
        ));
    }
}
