//! Closed-form recursive waterfilling.
//!
//! A user's solely assigned subcarriers share one waterline `w`: the power on
//! subcarrier `i` is `w - 1/g_i` where `g_i = h²/σ²`, and the rate carried is
//! `Σ log2(w g_i)` bits per channel use. Everything here works in those
//! normalized units, so rates are in bits/use and powers in mW.
//!
//! Waterlines are updated incrementally when a subcarrier is added, when the
//! rate the sole set must carry changes, or when the weakest subcarriers are
//! dropped because their power would become negative. Products of gains are
//! taken in the log domain; with 128 subcarriers spanning many decades the
//! direct product overflows.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum WaterfillError {
    #[error("waterfilling over an empty subcarrier set")]
    EmptySet,
    #[error("rate shift leaves no subcarrier with positive power")]
    AllRemoved,
}

/// One solely assigned subcarrier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoleEntry {
    pub subcarrier: usize,
    pub rrh: usize,
    /// `h²/σ²` in 1/mW
    pub gain: f64,
}

/// Waterline `w` such that `Σ log2(w g_i) = rate_norm`.
pub fn waterline_from_rate(gains: &[f64], rate_norm: f64) -> Result<f64, WaterfillError> {
    if gains.is_empty() {
        return Err(WaterfillError::EmptySet);
    }
    let log_gains: f64 = gains.iter().map(|g| g.ln()).sum();
    Ok(((rate_norm * std::f64::consts::LN_2 - log_gains) / gains.len() as f64).exp())
}

/// Whether adding a subcarrier of gain `gain` lowers the waterline `waterline`.
/// Equality is excluded: there the power change is exactly zero.
#[inline]
pub fn admit_check(waterline: f64, gain: f64) -> bool {
    gain > waterline.recip()
}

/// Waterline and total power change after adding a subcarrier of gain `gain`
/// to a set of `count` subcarriers at waterline `waterline`, keeping the
/// carried rate fixed.
pub fn add_subcarrier(waterline: f64, count: usize, gain: f64) -> (f64, f64) {
    let n = count as f64;
    let new_waterline = ((n * waterline.ln() - gain.ln()) / (n + 1.0)).exp();
    let delta = (n + 1.0) * new_waterline - n * waterline - gain.recip();
    (new_waterline, delta)
}

/// Waterline after the sole set's rate target changes by `delta_rate`
/// bits/use.
#[inline]
pub fn rescale_waterline_for_rate_delta(waterline: f64, count: usize, delta_rate: f64) -> f64 {
    waterline * (delta_rate / count as f64).exp2()
}

/// Total power change of a user whose `count` sole subcarriers move from
/// `waterline` to `new_waterline` while it gains a subcarrier at power
/// `pair_power`. Only valid when no sole subcarrier turns negative.
#[inline]
pub fn pairing_power_delta(count: usize, waterline: f64, new_waterline: f64, pair_power: f64) -> f64 {
    count as f64 * (new_waterline - waterline) + pair_power
}

/// Result of dropping the negative-power tail of an account.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchRemoval {
    pub waterline: f64,
    /// Number of entries removed from the weak end.
    pub removed: usize,
    pub delta_power: f64,
}

/// Drops every sole subcarrier whose power is nonpositive at the tentative
/// waterline `new_waterline`, recomputes the waterline so the carried rate is
/// unchanged, and repeats until no new negative power appears.
///
/// `delta_power` is measured against the account's current waterline and
/// includes `pair_power`.
pub fn batch_remove_negative(
    account: &WaterfillAccount,
    new_waterline: f64,
    pair_power: f64,
) -> Result<BatchRemoval, WaterfillError> {
    let total = account.entries.len();
    let mut kept = total;
    let mut log_w = new_waterline.ln();
    let mut w = new_waterline;
    let mut removed_inverse = 0.0;
    loop {
        let drop = account.entries[..kept]
            .iter()
            .rev()
            .take_while(|e| w * e.gain <= 1.0)
            .count();
        if drop == 0 {
            break;
        }
        if drop == kept {
            return Err(WaterfillError::AllRemoved);
        }
        let tail = &account.entries[kept - drop..kept];
        let log_tail: f64 = tail.iter().map(|e| e.gain.ln()).sum();
        removed_inverse += tail.iter().map(|e| e.gain.recip()).sum::<f64>();
        log_w = (kept as f64 * log_w + log_tail) / (kept - drop) as f64;
        w = log_w.exp();
        kept -= drop;
    }
    Ok(BatchRemoval {
        waterline: w,
        removed: total - kept,
        delta_power: kept as f64 * w - total as f64 * account.waterline + removed_inverse + pair_power,
    })
}

/// Per-subcarrier powers `w - 1/g`, in the account's (descending gain) order.
pub fn powers_from_waterline(account: &WaterfillAccount) -> Vec<f64> {
    account
        .entries
        .iter()
        .map(|e| account.waterline - e.gain.recip())
        .collect()
}

/// Planned change of an account, produced by
/// [`WaterfillAccount::plan_rate_shift`] and applied by
/// [`WaterfillAccount::apply`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoleUpdate {
    pub waterline: f64,
    pub rate_target: f64,
    pub removed: usize,
    /// Change of the user's total power, including the paired power.
    pub delta_power: f64,
}

/// The sole subcarriers of one user with their common waterline.
///
/// Entries are kept sorted by decreasing gain so the weakest subcarriers are
/// always at the tail.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterfillAccount {
    waterline: f64,
    rate_target: f64,
    entries: Vec<SoleEntry>,
}

impl WaterfillAccount {
    /// An account with no subcarriers and no rate to carry.
    pub fn empty() -> Self {
        Self {
            waterline: 0.0,
            rate_target: 0.0,
            entries: Vec::new(),
        }
    }

    /// Waterfills `rate_target` bits/use over `entries`.
    pub fn new(mut entries: Vec<SoleEntry>, rate_target: f64) -> Result<Self, WaterfillError> {
        sort_desc(&mut entries);
        let gains: Vec<f64> = entries.iter().map(|e| e.gain).collect();
        let waterline = waterline_from_rate(&gains, rate_target)?;
        Ok(Self {
            waterline,
            rate_target,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn waterline(&self) -> f64 {
        self.waterline
    }

    /// Rate, in bits/use, the sole subcarriers must carry.
    pub fn rate_target(&self) -> f64 {
        self.rate_target
    }

    pub fn entries(&self) -> &[SoleEntry] {
        &self.entries
    }

    pub fn gains(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.gain)
    }

    pub fn total_power(&self) -> f64 {
        powers_from_waterline(self).iter().sum()
    }

    pub fn power_on(&self, subcarrier: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.subcarrier == subcarrier)
            .map(|e| self.waterline - e.gain.recip())
    }

    pub fn entry(&self, subcarrier: usize) -> Option<&SoleEntry> {
        self.entries.iter().find(|e| e.subcarrier == subcarrier)
    }

    pub fn admits(&self, gain: f64) -> bool {
        !self.is_empty() && admit_check(self.waterline, gain)
    }

    /// Waterline and power change if a subcarrier of gain `gain` were added.
    pub fn preview_add(&self, gain: f64) -> (f64, f64) {
        add_subcarrier(self.waterline, self.len(), gain)
    }

    /// Adds a subcarrier, keeping the carried rate.
    pub fn push(&mut self, entry: SoleEntry) {
        if self.is_empty() {
            self.waterline = (self.rate_target.exp2()) / entry.gain;
        } else {
            self.waterline = self.preview_add(entry.gain).0;
        }
        let pos = self.entries.partition_point(|e| e.gain >= entry.gain);
        self.entries.insert(pos, entry);
    }

    /// Plans the update needed when the sole set must carry `delta_rate` more
    /// bits/use (negative when a paired subcarrier takes over some rate) while
    /// the user gains `pair_power` elsewhere.
    pub fn plan_rate_shift(&self, delta_rate: f64, pair_power: f64) -> Result<SoleUpdate, WaterfillError> {
        if self.is_empty() {
            if delta_rate == 0.0 {
                return Ok(SoleUpdate {
                    waterline: self.waterline,
                    rate_target: self.rate_target,
                    removed: 0,
                    delta_power: pair_power,
                });
            }
            return Err(WaterfillError::EmptySet);
        }
        let n = self.len();
        let w = rescale_waterline_for_rate_delta(self.waterline, n, delta_rate);
        let weakest = self.entries[n - 1].gain;
        let update = if w * weakest > 1.0 {
            SoleUpdate {
                waterline: w,
                rate_target: self.rate_target + delta_rate,
                removed: 0,
                delta_power: pairing_power_delta(n, self.waterline, w, pair_power),
            }
        } else {
            let batch = batch_remove_negative(self, w, pair_power)?;
            SoleUpdate {
                waterline: batch.waterline,
                rate_target: self.rate_target + delta_rate,
                removed: batch.removed,
                delta_power: batch.delta_power,
            }
        };
        Ok(update)
    }

    /// Applies a planned update and returns the entries it dropped.
    pub fn apply(&mut self, update: &SoleUpdate) -> Vec<SoleEntry> {
        let kept = self.entries.len() - update.removed;
        let removed = self.entries.split_off(kept);
        self.waterline = update.waterline;
        self.rate_target = update.rate_target;
        removed
    }

    /// Takes `subcarrier` out of the sole set together with the rate it
    /// carries; the waterline of the remaining entries is unchanged.
    /// Returns the entry, its power and its rate.
    pub fn detach(&mut self, subcarrier: usize) -> Option<(SoleEntry, f64, f64)> {
        let pos = self.entries.iter().position(|e| e.subcarrier == subcarrier)?;
        let entry = self.entries.remove(pos);
        let rate = (self.waterline * entry.gain).log2();
        let power = self.waterline - entry.gain.recip();
        self.rate_target -= rate;
        if self.entries.is_empty() {
            self.rate_target = 0.0;
        }
        Some((entry, power, rate))
    }

    /// Drops the tail entries whose power is below `threshold` mW, folding
    /// their (near zero) rate into the remaining ones. The account is never
    /// emptied.
    pub fn release_low_power(&mut self, threshold: f64) -> Vec<SoleEntry> {
        let n = self.len();
        let drop = self
            .entries
            .iter()
            .rev()
            .take_while(|e| self.waterline - e.gain.recip() < threshold)
            .count();
        if drop == 0 || drop == n {
            return Vec::new();
        }
        let tail_log: f64 = self.entries[n - drop..].iter().map(|e| e.gain.ln()).sum();
        self.waterline = ((n as f64 * self.waterline.ln() + tail_log) / (n - drop) as f64).exp();
        self.entries.split_off(n - drop)
    }
}

fn sort_desc(entries: &mut [SoleEntry]) {
    entries.sort_by(|a, b| b.gain.total_cmp(&a.gain).then(a.subcarrier.cmp(&b.subcarrier)));
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rate_of(w: f64, gains: &[f64]) -> f64 {
        gains.iter().map(|g| (w * g).log2()).sum()
    }

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

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn waterline_single_subcarrier() {
        let w = waterline_from_rate(&[1.0], 1.0).unwrap();
        assert!(close(w, 2.0, 1e-15));
        assert!(close(w - 1.0, 1.0, 1e-15));
        assert!(close((w * 1.0f64).log2(), 1.0, 1e-15));
    }

    #[test]
    fn waterline_symmetric_pair() {
        assert!(close(waterline_from_rate(&[1.0, 1.0], 2.0).unwrap(), 2.0, 1e-15));
    }

    #[test]
    fn waterline_unequal_pair() {
        let w = waterline_from_rate(&[1.0, 0.25], 2.0).unwrap();
        assert!(close(w, 4.0, 1e-14));
        assert!(close(rate_of(w, &[1.0, 0.25]), 2.0, 1e-14));
        let acc = account(&[1.0, 0.25], 2.0);
        let p = powers_from_waterline(&acc);
        assert!(close(p[0], 3.0, 1e-14));
        assert!(p[1].abs() < 1e-14);
    }

    #[test]
    fn waterline_empty_set() {
        assert_eq!(waterline_from_rate(&[], 1.0), Err(WaterfillError::EmptySet));
    }

    #[test]
    fn admit_boundary() {
        assert!(admit_check(2.0, 0.6));
        assert!(!admit_check(2.0, 0.5));
        assert!(!admit_check(2.0, 0.4));
    }

    #[test]
    fn add_examples() {
        let (w, dp) = add_subcarrier(2.0, 1, 2.0);
        assert!(close(w, 1.0, 1e-15));
        assert!(close(dp, -0.5, 1e-15));
        // boundary gain: no waterline change, no power change
        let (w, dp) = add_subcarrier(2.0, 1, 0.5);
        assert!(close(w, 2.0, 1e-15));
        assert!(dp.abs() < 1e-15);
    }

    #[test]
    fn add_conserves_rate_and_matches_direct_power() {
        // single subcarrier at gain 1, rate 1 -> w = 2; add gain 2
        let mut acc = account(&[1.0], 1.0);
        let before = acc.total_power();
        let (_, dp) = acc.preview_add(2.0);
        acc.push(SoleEntry {
            subcarrier: 9,
            rrh: 0,
            gain: 2.0,
        });
        assert!(close(rate_of(acc.waterline(), &[2.0, 1.0]), 1.0, 1e-14));
        assert!(close(acc.total_power() - before, dp, 1e-14));
    }

    #[test]
    fn repeated_equal_adds() {
        let g = 3.0;
        let w1 = 5.0;
        let mut w = w1;
        for n in 1..10usize {
            let (next, dp) = add_subcarrier(w, n, g);
            let expected = (w1 / g.powi(n as i32)).powf(1.0 / (n + 1) as f64);
            assert!(close(next, expected, 1e-13), "{n}: {next} vs {expected}");
            assert!(next < w);
            assert!(dp < 0.0);
            w = next;
        }
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_waterline_for_rate_delta(2.0, 3, 0.0), 2.0);
        assert!(close(rescale_waterline_for_rate_delta(2.0, 1, -1.0), 1.0, 1e-15));
        let w = rescale_waterline_for_rate_delta(4.0, 2, -2.0);
        assert!(close(w, 2.0, 1e-15));
        // sole rate drops by exactly two bits
        let gains = [1.0, 0.5];
        assert!(close(rate_of(4.0, &gains) - rate_of(w, &gains), 2.0, 1e-14));
    }

    #[test]
    fn pairing_delta_examples() {
        assert_eq!(pairing_power_delta(3, 2.0, 2.0, 0.0), 0.0);
        assert!(close(pairing_power_delta(1, 2.0, 1.0, 0.4), -0.6, 1e-15));
        assert!(close(pairing_power_delta(2, 4.0, 2.0, 1.0), -3.0, 1e-15));
        // direct recomputation for the second one: gains [1, 1] at w=4 -> 6 mW,
        // at w=2 -> 2 mW, plus 1 mW on the paired subcarrier
        let before = 2.0 * (4.0 - 1.0);
        let after = 2.0 * (2.0 - 1.0) + 1.0;
        assert!(close(after - before, -3.0, 1e-15));
    }

    #[test]
    fn batch_removal_example() {
        let acc = account(&[4.0, 1.0], (2.0f64 * 4.0).log2() + 2.0f64.log2());
        assert!(close(acc.waterline(), 2.0, 1e-14));
        let batch = batch_remove_negative(&acc, 0.9, 0.0).unwrap();
        assert_eq!(batch.removed, 1);
        assert!(close(batch.waterline, 0.81, 1e-14));
        assert!(close(batch.waterline - 0.25, 0.56, 1e-13));
        // the sole set still carries the shifted target log2(0.9*4) + log2(0.9*1)
        let target = (0.9f64 * 4.0).log2() + (0.9f64).log2();
        assert!(close(rate_of(batch.waterline, &[4.0]), target, 1e-13));
        // delta against direct recomputation: before 2*2 - 1.25, after 0.81 - 0.25
        let direct = (0.81 - 0.25) - (4.0 - 1.25);
        assert!(close(batch.delta_power, direct, 1e-13));
    }

    #[test]
    fn plan_without_negatives_delegates() {
        let acc = account(&[4.0, 2.0], 3.0);
        let u = acc.plan_rate_shift(-0.5, 0.3).unwrap();
        let w = rescale_waterline_for_rate_delta(acc.waterline(), 2, -0.5);
        assert_eq!(u.removed, 0);
        assert_eq!(u.waterline, w);
        assert_eq!(u.delta_power, pairing_power_delta(2, acc.waterline(), w, 0.3));
    }

    #[test]
    fn plan_all_removed() {
        let acc = account(&[1.0], 1.0);
        assert_eq!(acc.plan_rate_shift(-1.0, 0.5), Err(WaterfillError::AllRemoved));
        assert_eq!(acc.plan_rate_shift(-2.0, 0.5), Err(WaterfillError::AllRemoved));
        assert_eq!(
            WaterfillAccount::empty().plan_rate_shift(-1.0, 0.5),
            Err(WaterfillError::EmptySet)
        );
    }

    #[test]
    fn powers_monotone_in_gain() {
        let acc = account(&[0.7, 5.0, 2.0, 9.0], 12.0);
        let p = powers_from_waterline(&acc);
        assert!(p.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn detach_keeps_waterline() {
        let mut acc = account(&[4.0, 2.0, 1.0], 6.0);
        let w = acc.waterline();
        let (entry, power, rate) = acc.detach(1).unwrap();
        assert_eq!(entry.gain, 2.0);
        assert!(close(power, w - 0.5, 1e-15));
        assert!(close(rate, (2.0 * w).log2(), 1e-15));
        assert_eq!(acc.waterline(), w);
        assert!(close(rate_of(w, &[4.0, 1.0]), acc.rate_target(), 1e-13));
    }

    #[test]
    fn release_low_power_keeps_rate() {
        // third entry sits exactly at zero power
        let mut acc = account(&[4.0, 2.0], 4.0);
        let w = acc.waterline();
        acc.push(SoleEntry {
            subcarrier: 7,
            rrh: 0,
            gain: 1.0 / w,
        });
        let target = acc.rate_target();
        let released = acc.release_low_power(1e-9);
        assert_eq!(released.len(), 1);
        assert!(close(rate_of(acc.waterline(), &[4.0, 2.0]), target, 1e-12));
    }

    proptest! {
        #[test]
        fn rate_shift_conserves_target(
            gains in proptest::collection::vec(0.05f64..50.0, 1..16),
            rate in 1.0f64..60.0,
            shift in -0.9f64..0.5,
        ) {
            let acc = account(&gains, rate);
            let delta = shift * rate;
            if let Ok(u) = acc.plan_rate_shift(delta, 0.0) {
                let mut next = acc.clone();
                next.apply(&u);
                let achieved: f64 = next.gains().map(|g| (u.waterline * g).log2()).sum();
                prop_assert!(close(achieved, rate + delta, 1e-9), "{achieved} vs {}", rate + delta);
                prop_assert!(powers_from_waterline(&next).iter().all(|p| *p > 0.0));
                let direct = next.total_power() - acc.total_power();
                prop_assert!((direct - u.delta_power).abs() <= 1e-9 * acc.total_power().max(1.0));
            }
        }

        #[test]
        fn admitted_adds_keep_powers_positive(
            mut gains in proptest::collection::vec(0.05f64..50.0, 2..16),
            rate in 1.0f64..30.0,
        ) {
            gains.sort_by(|a, b| b.total_cmp(a));
            let mut acc = account(&gains[..1], rate);
            for (i, &g) in gains.iter().enumerate().skip(1) {
                if !acc.admits(g) {
                    break;
                }
                let (_, dp) = acc.preview_add(g);
                prop_assert!(dp < 0.0);
                acc.push(SoleEntry { subcarrier: i, rrh: 0, gain: g });
                let min = powers_from_waterline(&acc).into_iter().fold(f64::INFINITY, f64::min);
                prop_assert!(min >= -1e-12);
                prop_assert!(close(acc.gains().map(|g| (acc.waterline() * g).log2()).sum::<f64>(), rate, 1e-9));
            }
        }
    }
}
