//! Power setting for a second user joining an occupied subcarrier.
//!
//! All quantities are normalized: gains are `h²/σ²` (1/mW), powers in mW and
//! rates in bits/use. A candidate's cost is the change of total transmit
//! power of the users involved, evaluated through their waterfilling
//! accounts so that sole subcarriers dropped by the rate shift are
//! accounted for.
//!
//! * LPO picks the second user's power minimizing its own net power change,
//!   with a lower bound that keeps SIC decodable.
//! * DPA waterfills the second user and clamps the result into the
//!   mutual-SIC ratio band.
//! * OPAd moves the first user's power too: the joint cost is separable and
//!   convex in `(p1, p2)` and the feasible set is a wedge `c_lo ≤ p2/p1 ≤ c_hi`,
//!   so the optimum is the unconstrained point when it lies in the wedge and
//!   otherwise sits on the ray nearest to it, found by one scalar root solve.

use thiserror::Error;

use crate::rates::{mux_ratio_bounds, PairLink};
use crate::root::{find_root, Root, RootError};
use crate::waterfill::{SoleUpdate, WaterfillAccount, WaterfillError};

/// Absolute tolerance on the stationarity residual of the OPAd ray problem.
pub const OPAD_RESIDUAL_TOL: f64 = 1e-12;
/// Upper end of the OPAd search interval, as a multiple of the larger of the
/// two unconstrained powers.
pub const OPAD_BRACKET_SPAN: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum AdjustError {
    #[error("ratio band [{lower}, {upper}] is empty after the safety margin")]
    InfeasibleBand { lower: f64, upper: f64 },
    #[error("no power adjustment case yields positive powers")]
    NoFeasibleCase,
    #[error("stationarity equation has no bracketed root: {0}")]
    RootBracketFailure(RootError),
    #[error(transparent)]
    Waterfill(#[from] WaterfillError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjustCase {
    Interior,
    ClampedLower,
    ClampedUpper,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjustOutcome {
    pub p1: f64,
    pub p2: f64,
    /// Sum of both users' power changes, in mW.
    pub delta_power: f64,
    pub case: AdjustCase,
    /// Update of the first user's remaining sole set; `None` when `p1` is
    /// left at its current value.
    pub k1_update: Option<SoleUpdate>,
    pub k2_update: SoleUpdate,
    /// Root of the stationarity equation, when one was solved.
    pub root: Option<Root>,
}

/// Unconstrained minimizer of `N (w 2^{-log2(1 + a p)/N} - w) + p`: the power
/// at which the second user's marginal cost vanishes. `a` is the effective
/// SINR per unit power on the shared subcarrier. May be negative.
pub fn lpo_interior(waterline: f64, count: usize, a: f64) -> f64 {
    let n = count as f64;
    ((waterline * a).powf(n / (n + 1.0)) - 1.0) / a
}

/// LPO power for a same-RRH pair: the interior optimum, or `p1 (1 + μ)` when
/// that falls below the SIC margin.
pub fn lpo_power(waterline: f64, count: usize, p1: f64, h2_sq: f64, noise: f64, margin: f64) -> f64 {
    let a = h2_sq / (p1 * h2_sq + noise);
    lpo_interior(waterline, count, a).max(p1 * (1.0 + margin))
}

/// Waterline of `account` after its target moves by `delta_rate`; zero once
/// the shift leaves nothing to carry.
fn shifted_waterline(account: &WaterfillAccount, delta_rate: f64) -> f64 {
    account.plan_rate_shift(delta_rate, 0.0).map_or(0.0, |u| u.waterline)
}

/// Power `p` on an extra subcarrier, carrying `log2(1 + a p)` bits/use,
/// that minimizes `p` plus the waterfilled power of `account` for the rest
/// of its rate. Sole subcarriers whose power would turn negative are
/// dropped, so this is exact where [`lpo_interior`] assumes none is.
/// Negative when the extra subcarrier is not worth powering.
pub fn sole_optimum(account: &WaterfillAccount, a: f64) -> f64 {
    let entries = account.entries();
    let target = account.rate_target() * std::f64::consts::LN_2;
    let mut log_sum: f64 = entries.iter().map(|e| e.gain.ln()).sum();
    let mut p = 0.0;
    for j in (1..=entries.len()).rev() {
        let waterline = ((target - log_sum) / j as f64).exp();
        p = lpo_interior(waterline, j, a);
        if p <= 0.0 {
            return p;
        }
        // marginal cost is zero where the shifted waterline equals (1 + a p) / a
        let shifted = (1.0 + a * p) / a;
        if shifted * entries[j - 1].gain > 1.0 {
            return p;
        }
        log_sum -= entries[j - 1].gain.ln();
    }
    p
}

/// Sets the second user's power by LPO with lower bound `lower` and evaluates
/// the cost. `a` is the SINR per unit of `p2`.
pub fn lpo_adjust(k2: &WaterfillAccount, a: f64, lower: f64, p1: f64) -> Result<AdjustOutcome, AdjustError> {
    let interior = sole_optimum(k2, a);
    let (p2, case) = if interior >= lower {
        (interior, AdjustCase::Interior)
    } else {
        (lower, AdjustCase::ClampedLower)
    };
    let update = k2.plan_rate_shift(-(a * p2).ln_1p() / std::f64::consts::LN_2, p2)?;
    Ok(AdjustOutcome {
        p1,
        p2,
        delta_power: update.delta_power,
        case,
        k1_update: None,
        k2_update: update,
        root: None,
    })
}

/// The ratio band `[lower (1 + μ), upper (1 - μ)]`.
pub fn margin_band(bounds: (f64, f64), margin: f64) -> Result<(f64, f64), AdjustError> {
    let (lo, hi) = (bounds.0 * (1.0 + margin), bounds.1 * (1.0 - margin));
    if lo > hi {
        return Err(AdjustError::InfeasibleBand { lower: lo, upper: hi });
    }
    Ok((lo, hi))
}

/// Clamps `p2_wf` into the margin band around `p1`.
pub fn dpa_clamp(p2_wf: f64, p1: f64, bounds: (f64, f64), margin: f64) -> Result<(f64, AdjustCase), AdjustError> {
    let (lo, hi) = margin_band(bounds, margin)?;
    let ratio = p2_wf / p1;
    Ok(if ratio < lo {
        (p1 * lo, AdjustCase::ClampedLower)
    } else if ratio > hi {
        (p1 * hi, AdjustCase::ClampedUpper)
    } else {
        (p2_wf, AdjustCase::Interior)
    })
}

/// Interference-free cost of giving `k2` power `p2` on a subcarrier of
/// normalized gain `g22`.
fn mutual_k2_update(k2: &WaterfillAccount, g22: f64, p2: f64) -> Result<SoleUpdate, WaterfillError> {
    k2.plan_rate_shift(-(p2 * g22).ln_1p() / std::f64::consts::LN_2, p2)
}

/// Waterfilling power `k2` would put on a subcarrier of gain `g22`, its
/// weakest sole subcarriers dropping out if they fall below the new level.
pub fn waterfill_power(k2: &WaterfillAccount, g22: f64) -> f64 {
    sole_optimum(k2, g22)
}

/// DPA on a mutual-SIC candidate. `link` carries normalized gains and the
/// first user's current power `p1`.
pub fn dpa_adjust(k2: &WaterfillAccount, link: &PairLink, margin: f64) -> Result<AdjustOutcome, AdjustError> {
    let p2_wf = waterfill_power(k2, link.g22);
    let (p2, case) = dpa_clamp(p2_wf, link.p1, mux_ratio_bounds(link), margin)?;
    let update = mutual_k2_update(k2, link.g22, p2)?;
    Ok(AdjustOutcome {
        p1: link.p1,
        p2,
        delta_power: update.delta_power,
        case,
        k1_update: None,
        k2_update: update,
        root: None,
    })
}

/// Inputs of the joint two-user adjustment on one candidate.
#[derive(Debug, Clone, Copy)]
pub struct OpadInput<'a> {
    /// Normalized gains; `p1` is the first user's power before the pairing.
    pub link: PairLink,
    /// First user's sole set with the candidate subcarrier already taken out;
    /// its waterline is the one before the pairing.
    pub k1_rest: &'a WaterfillAccount,
    pub k2: &'a WaterfillAccount,
    pub margin: f64,
}

impl OpadInput<'_> {
    /// Derivative of the first user's cost at `p1`. The marginal power of a
    /// bit on waterfilled subcarriers is `ln 2` times the waterline.
    fn d_cost1(&self, p1: f64) -> f64 {
        let g = self.link.g11;
        let delta_rate = ((1.0 + p1 * g) / (1.0 + self.link.p1 * g)).log2();
        1.0 - shifted_waterline(self.k1_rest, -delta_rate) * g / (1.0 + p1 * g)
    }

    /// Derivative of the second user's cost at `p2`.
    fn d_cost2(&self, p2: f64) -> f64 {
        let g = self.link.g22;
        let delta_rate = (p2 * g).ln_1p() / std::f64::consts::LN_2;
        1.0 - shifted_waterline(self.k2, -delta_rate) * g / (1.0 + p2 * g)
    }

    /// Stationarity residual of the joint cost along the ray `p2 = c p1`.
    pub fn ray_residual(&self, p1: f64, c: f64) -> f64 {
        self.d_cost1(p1) + c * self.d_cost2(c * p1)
    }

    /// Joint cost of the point `(p1, p2)`, with both sole sets updated.
    pub fn evaluate(&self, p1: f64, p2: f64) -> Result<(f64, Option<SoleUpdate>, SoleUpdate), WaterfillError> {
        let k2_update = mutual_k2_update(self.k2, self.link.g22, p2)?;
        if p1 == self.link.p1 {
            return Ok((k2_update.delta_power, None, k2_update));
        }
        let g = self.link.g11;
        let delta_rate = ((1.0 + p1 * g) / (1.0 + self.link.p1 * g)).log2();
        let k1_update = self.k1_rest.plan_rate_shift(-delta_rate, p1 - self.link.p1)?;
        Ok((
            k1_update.delta_power + k2_update.delta_power,
            Some(k1_update),
            k2_update,
        ))
    }
}

/// Joint adjustment of both powers on a mutual-SIC candidate.
pub fn opad_joint(input: &OpadInput) -> Result<AdjustOutcome, AdjustError> {
    let link = &input.link;
    let (lo, hi) = margin_band(mux_ratio_bounds(link), input.margin)?;
    let p1_init = link.p1;
    let p2_wf = waterfill_power(input.k2, link.g22);
    let ratio = p2_wf / p1_init;

    let (p1, p2, case, root) = if (lo..=hi).contains(&ratio) {
        (p1_init, p2_wf, AdjustCase::Interior, None)
    } else {
        let (c, case) = if ratio < lo {
            (lo, AdjustCase::ClampedLower)
        } else {
            (hi, AdjustCase::ClampedUpper)
        };
        if input.k1_rest.is_empty() {
            // the first user's rate is carried by this subcarrier alone
            (p1_init, c * p1_init, case, None)
        } else {
            let top = OPAD_BRACKET_SPAN * p1_init.max(p2_wf.max(0.0) / c);
            let root = find_root(|p| input.ray_residual(p, c), 0.0, top, OPAD_RESIDUAL_TOL)
                .map_err(AdjustError::RootBracketFailure)?;
            (root.x, c * root.x, case, Some(root))
        }
    };
    if !(p1 > 0.0 && p2 > 0.0) {
        return Err(AdjustError::NoFeasibleCase);
    }
    let (delta_power, k1_update, k2_update) = input.evaluate(p1, p2).map_err(|_| AdjustError::NoFeasibleCase)?;
    Ok(AdjustOutcome {
        p1,
        p2,
        delta_power,
        case,
        k1_update,
        k2_update,
        root,
    })
}

/// OPAd applied to the candidate DPA selected. The DPA point is feasible for
/// the joint problem, so it is kept whenever the joint solve does not improve
/// on it.
pub fn sopad_adjust(input: &OpadInput, dpa: &AdjustOutcome) -> AdjustOutcome {
    match opad_joint(input) {
        Ok(joint) if joint.delta_power <= dpa.delta_power => joint,
        Ok(joint) => AdjustOutcome {
            root: joint.root,
            ..*dpa
        },
        Err(_) => *dpa,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waterfill::SoleEntry;
    use proptest::prelude::*;

    fn account(gains: &[f64], rate: f64) -> WaterfillAccount {
        let entries = gains
            .iter()
            .enumerate()
            .map(|(i, &gain)| SoleEntry {
                subcarrier: i,
                rrh: 0,
                gain,
            })
            .collect();
        WaterfillAccount::new(entries, rate).unwrap()
    }

    /// Direct cost of the second user: rewaterfill its sole set for the
    /// reduced rate by bisection and add `p2`.
    fn lpo_cost(gains: &[f64], rate: f64, a: f64, p2: f64) -> f64 {
        let before = account(gains, rate).total_power();
        let target = rate - (1.0 + a * p2).log2();
        let achieved = |w: f64| -> f64 { gains.iter().map(|g| (w * g).log2().max(0.0)).sum() };
        let (mut lo, mut hi) = (0.0, 1e12);
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if achieved(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let w = 0.5 * (lo + hi);
        let after: f64 = gains.iter().map(|g| (w - 1.0 / g).max(0.0)).sum();
        after + p2 - before
    }

    #[test]
    fn lpo_margin_branch() {
        // huge p1: interior optimum far below the margin
        let p = lpo_power(3.0, 2, 1e6, 1.0, 1.0, 0.01);
        assert_eq!(p, 1e6 * 1.01);
    }

    #[test]
    fn lpo_interior_is_stationary() {
        let gains = [8.0, 5.0, 3.0];
        let acc = account(&gains, 9.0);
        let a = 0.7;
        let p = lpo_interior(acc.waterline(), acc.len(), a);
        assert!(p > 0.0);
        let h = 1e-4 * p;
        let d = (lpo_cost(&gains, 9.0, a, p + h) - lpo_cost(&gains, 9.0, a, p - h)) / (2.0 * h);
        assert!(d.abs() < 1e-6, "{d}");
        let curv =
            lpo_cost(&gains, 9.0, a, p + h) + lpo_cost(&gains, 9.0, a, p - h) - 2.0 * lpo_cost(&gains, 9.0, a, p);
        assert!(curv > 0.0);
    }

    #[test]
    fn lpo_adjust_matches_direct_cost() {
        let gains = [8.0, 5.0, 3.0];
        let acc = account(&gains, 9.0);
        let out = lpo_adjust(&acc, 0.7, 0.01, 0.005).unwrap();
        assert_eq!(out.case, AdjustCase::Interior);
        let direct = lpo_cost(&gains, 9.0, 0.7, out.p2);
        assert!((out.delta_power - direct).abs() < 1e-9 * direct.abs().max(1.0));
    }

    #[test]
    fn dpa_examples() {
        assert_eq!(
            dpa_clamp(1.0, 1.0, (0.25, 4.0), 0.01).unwrap(),
            (1.0, AdjustCase::Interior)
        );
        let (p, case) = dpa_clamp(0.1, 1.0, (0.25, 4.0), 0.01).unwrap();
        assert!((p - 0.2525).abs() < 1e-15);
        assert_eq!(case, AdjustCase::ClampedLower);
        let (p, case) = dpa_clamp(10.0, 2.0, (0.25, 4.0), 0.01).unwrap();
        assert!((p - 7.92).abs() < 1e-12);
        assert_eq!(case, AdjustCase::ClampedUpper);
        assert!(matches!(
            dpa_clamp(1.0, 1.0, (1.0, 1.0), 0.01),
            Err(AdjustError::InfeasibleBand { .. })
        ));
    }

    fn link(g11: f64, g12: f64, g21: f64, g22: f64, p1: f64) -> PairLink {
        PairLink {
            r1: 0,
            r2: 1,
            g11,
            g12,
            g21,
            g22,
            noise: 1.0,
            p1,
            p2: 0.0,
        }
    }

    #[test]
    fn opad_interior_keeps_waterfilling() {
        let mut k1 = account(&[6.0, 4.0, 3.0], 8.0);
        let p1 = k1.power_on(1).unwrap();
        k1.detach(1);
        let k2 = account(&[5.0, 2.0], 6.0);
        let p2_wf = waterfill_power(&k2, 4.0);
        // band wide enough to contain the unconstrained ratio
        let l = link(4.0, 4.0 * 1e3, 4.0 * 1e3, 4.0, p1);
        let out = opad_joint(&OpadInput {
            link: l,
            k1_rest: &k1,
            k2: &k2,
            margin: 0.01,
        })
        .unwrap();
        assert_eq!(out.case, AdjustCase::Interior);
        assert_eq!(out.p1, p1);
        assert_eq!(out.p2, p2_wf);
        assert!(out.root.is_none());
    }

    #[test]
    fn opad_clamped_solves_ray_stationarity() {
        let mut k1 = account(&[6.0, 4.0, 3.0], 8.0);
        let p1 = k1.power_on(1).unwrap();
        k1.detach(1);
        let k2 = account(&[5.0, 2.0], 12.0);
        // lower bound far above the unconstrained ratio
        let l = link(4.0, 4.0 / 20.0, 100.0, 1.0, p1);
        assert!(waterfill_power(&k2, 1.0) / p1 < 20.0);
        let input = OpadInput {
            link: l,
            k1_rest: &k1,
            k2: &k2,
            margin: 0.01,
        };
        let out = opad_joint(&input).unwrap();
        assert_eq!(out.case, AdjustCase::ClampedLower);
        let root = out.root.unwrap();
        assert!(root.residual.abs() < 1e-10);
        assert!((out.p2 / out.p1 - 20.0 * 1.01).abs() < 1e-9);
        // moving along the ray in either direction costs more
        for s in [0.99, 1.01] {
            let (c, _, _) = input.evaluate(out.p1 * s, out.p2 * s).unwrap();
            assert!(c >= out.delta_power);
        }
        let dpa = dpa_adjust(&k2, &l, 0.01).unwrap();
        assert!(out.delta_power <= dpa.delta_power);
    }

    #[test]
    fn sopad_never_worse_than_dpa() {
        let mut k1 = account(&[6.0, 4.0, 3.0], 8.0);
        let p1 = k1.power_on(1).unwrap();
        k1.detach(1);
        let k2 = account(&[5.0, 2.0], 12.0);
        let l = link(4.0, 4.0 / 20.0, 100.0, 1.0, p1);
        let input = OpadInput {
            link: l,
            k1_rest: &k1,
            k2: &k2,
            margin: 0.01,
        };
        let dpa = dpa_adjust(&k2, &l, 0.01).unwrap();
        let s = sopad_adjust(&input, &dpa);
        assert!(s.delta_power <= dpa.delta_power);
        assert_eq!(s, opad_joint(&input).unwrap());
    }

    proptest! {
        #[test]
        fn sole_optimum_minimizes_direct_cost(
            gains in proptest::collection::vec(0.05f64..50.0, 1..8),
            rate in 2.0f64..20.0,
            a in 0.05f64..60.0,
        ) {
            let acc = account(&gains, rate);
            prop_assume!(acc.gains().all(|g| acc.waterline() * g > 1.0));
            let p = sole_optimum(&acc, a);
            prop_assume!(p > 0.0 && (1.0 + a * p).log2() < 0.999 * rate);
            let c = lpo_cost(&gains, rate, a, p);
            for s in [0.9, 0.99, 1.01, 1.1] {
                let q = p * s;
                if (1.0 + a * q).log2() < rate {
                    prop_assert!(lpo_cost(&gains, rate, a, q) >= c - 1e-9 * c.abs().max(1.0));
                }
            }
            let direct = acc.plan_rate_shift(-(1.0 + a * p).log2(), p).unwrap().delta_power;
            prop_assert!((direct - c).abs() <= 1e-8 * c.abs().max(1.0), "{direct} vs {c}");
        }

        #[test]
        fn dpa_cost_grows_away_from_waterfilling(
            gains in proptest::collection::vec(0.5f64..50.0, 1..8),
            rate in 2.0f64..20.0,
            g22 in 0.5f64..50.0,
            s1 in 0.05f64..0.95,
            s2 in 0.05f64..0.95,
        ) {
            let k2 = account(&gains, rate);
            prop_assume!(k2.gains().all(|g| k2.waterline() * g > 1.0));
            prop_assume!(k2.admits(g22));
            let p_wf = waterfill_power(&k2, g22);
            let cost = |p: f64| mutual_k2_update(&k2, g22, p).map(|u| u.delta_power);
            let c_wf = cost(p_wf);
            // the waterfilling optimum may move the whole rate onto the new subcarrier
            prop_assume!(c_wf.is_ok());
            let c_wf = c_wf.unwrap();
            let (near, far) = if s1 > s2 { (s1, s2) } else { (s2, s1) };
            if let (Ok(a), Ok(b)) = (cost(p_wf * near), cost(p_wf * far)) {
                prop_assert!(a >= c_wf - 1e-12 * c_wf.abs().max(1.0));
                prop_assert!(b >= a - 1e-12 * a.abs().max(1.0));
            }
            if let (Ok(a), Ok(b)) = (cost(p_wf / near), cost(p_wf / far)) {
                prop_assert!(a >= c_wf - 1e-12 * c_wf.abs().max(1.0));
                prop_assert!(b >= a - 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
