//! Shannon rates and SIC feasibility for paired users.
//!
//! Rates take the subcarrier bandwidth as an argument; the allocators call
//! them with `noise = 1`, `sc_bw = 1` and normalized gains to get bits per
//! channel use.
//!
//! SINRs are evaluated as `p / (p_i + σ²/h²)`. Each step of that expression is
//! monotone in `h²` under IEEE rounding, so the ordering facts the predicates
//! rely on (stronger user decodes more) survive floating point exactly.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RateError {
    #[error("mutual SIC needs two distinct RRHs, both users are served by RRH {0}")]
    SameRrh(usize),
}

/// `sc_bw · log2(1 + p h²/σ²)`.
#[inline]
pub fn rate_single(p: f64, h2: f64, noise: f64, sc_bw: f64) -> f64 {
    sc_bw * (p / (noise / h2)).ln_1p() / std::f64::consts::LN_2
}

/// Rate of a user that treats a co-scheduled signal received at power
/// `p_interf · h2` as noise.
#[inline]
pub fn rate_second(p2: f64, p_interf: f64, h2: f64, noise: f64, sc_bw: f64) -> f64 {
    sc_bw * (p2 / (p_interf + noise / h2)).ln_1p() / std::f64::consts::LN_2
}

/// Fractional transmit power: `p2 = p1 (h1²/h2²)^α`.
#[inline]
pub fn ftpa_power(p1: f64, h1_sq: f64, h2_sq: f64, alpha: f64) -> f64 {
    p1 * (h1_sq / h2_sq).powf(alpha)
}

/// `p2 ≥ p1 (1 + μ)`: the power gap a same-RRH pair needs for SIC.
#[inline]
pub fn sic_margin_ok(p1: f64, p2: f64, margin: f64) -> bool {
    p2 >= p1 * (1.0 + margin)
}

/// Two users sharing a subcarrier: `k1` served by `r1`, `k2` by `r2`.
///
/// Gains are `h²`. With `r1 == r2` the cross gains equal the direct ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLink {
    pub r1: usize,
    pub r2: usize,
    /// k1 from r1
    pub g11: f64,
    /// k1 from r2
    pub g12: f64,
    /// k2 from r1
    pub g21: f64,
    /// k2 from r2
    pub g22: f64,
    pub noise: f64,
    pub p1: f64,
    pub p2: f64,
}

impl PairLink {
    /// Same-RRH link: `h1` is the first user's gain, `h2` the second's.
    pub fn same_rrh(r: usize, h1: f64, h2: f64, noise: f64, p1: f64, p2: f64) -> Self {
        Self {
            r1: r,
            r2: r,
            g11: h1,
            g12: h1,
            g21: h2,
            g22: h2,
            noise,
            p1,
            p2,
        }
    }

    pub fn with_powers(self, p1: f64, p2: f64) -> Self {
        Self { p1, p2, ..self }
    }

    /// k1 can decode k2's signal: `h_{k1,r2} ≥ h_{k2,r2}`.
    pub fn first_can_sic(&self) -> bool {
        self.g12 >= self.g22
    }

    /// k2 can decode k1's signal: `h_{k2,r1} ≥ h_{k1,r1}`.
    pub fn second_can_sic(&self) -> bool {
        self.g21 >= self.g11
    }

    /// Rate of k1 after cancelling k2 (interference free).
    pub fn rate_first_sic(&self, sc_bw: f64) -> f64 {
        rate_single(self.p1, self.g11, self.noise, sc_bw)
    }

    /// Rate of k2 after cancelling k1 (interference free).
    pub fn rate_second_sic(&self, sc_bw: f64) -> f64 {
        rate_single(self.p2, self.g22, self.noise, sc_bw)
    }

    /// Rate of k2 treating k1's signal as noise.
    pub fn rate_second_no_sic(&self, sc_bw: f64) -> f64 {
        rate_second(self.p2, self.p1 * self.g21 / self.g22, self.g22, self.noise, sc_bw)
    }

    /// Rate of k1 treating k2's signal as noise.
    pub fn rate_first_no_sic(&self, sc_bw: f64) -> f64 {
        rate_second(self.p1, self.p2 * self.g12 / self.g11, self.g11, self.noise, sc_bw)
    }

    /// Rate at which k1 can decode k2's message.
    pub fn decode_second_at_first(&self, sc_bw: f64) -> f64 {
        rate_second(self.p2, self.p1 * self.g11 / self.g12, self.g12, self.noise, sc_bw)
    }

    /// Rate at which k2 can decode k1's message.
    pub fn decode_first_at_second(&self, sc_bw: f64) -> f64 {
        rate_second(self.p1, self.p2 * self.g22 / self.g21, self.g21, self.noise, sc_bw)
    }

    /// Exact decoding surpluses when both users cancel each other:
    /// `(R^{(k1)}_{k2} - R_{k2}, R^{(k2)}_{k1} - R_{k1})` with interference-free
    /// own rates. Both are nonnegative when SIC succeeds at both ends.
    pub fn mutual_sic_surplus(&self, sc_bw: f64) -> (f64, f64) {
        (
            self.decode_second_at_first(sc_bw) - self.rate_second_sic(sc_bw),
            self.decode_first_at_second(sc_bw) - self.rate_first_sic(sc_bw),
        )
    }

    /// Sign oracles for [`PairLink::mutual_sic_surplus`]: `X - Y` and `Z - T`
    /// including the cross term dropped by the feasibility conditions.
    pub fn mutual_sic_numerators(&self) -> (f64, f64) {
        let cross = self.p1 * self.p2 * self.g11 * self.g22;
        (
            self.noise * self.p2 * (self.g12 - self.g22) - cross,
            self.noise * self.p1 * (self.g21 - self.g11) - cross,
        )
    }
}

/// Whether both users can perform SIC.
pub fn mutual_sic_feasible(link: &PairLink) -> Result<bool, RateError> {
    if link.r1 == link.r2 {
        return Err(RateError::SameRrh(link.r1));
    }
    Ok(link.first_can_sic() && link.second_can_sic())
}

/// Band `[lower, upper]` for `p2/p1` under which both users decode each other.
pub fn mux_ratio_bounds(link: &PairLink) -> (f64, f64) {
    (link.g11 / link.g12, link.g21 / link.g22)
}

/// Power conditions when only k1 performs SIC and the users may be served by
/// different RRHs: `p1 h²_{k1,r1} ≤ p2 h²_{k1,r2}` and
/// `p2 h²_{k2,r2} ≥ p1 h²_{k2,r1}`.
pub fn single_sic_drrh_ok(link: &PairLink) -> bool {
    link.p1 * link.g11 <= link.p2 * link.g12 && link.p2 * link.g22 >= link.p1 * link.g21
}

/// Smallest `p2/p1` satisfying [`single_sic_drrh_ok`].
pub fn single_sic_min_ratio(link: &PairLink) -> f64 {
    (link.g11 / link.g12).max(link.g21 / link.g22)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const BW: f64 = 156_250.0;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    fn link(g11: f64, g12: f64, g21: f64, g22: f64) -> PairLink {
        PairLink {
            r1: 0,
            r2: 1,
            g11,
            g12,
            g21,
            g22,
            noise: 1.0,
            p1: 1.0,
            p2: 1.0,
        }
    }

    #[test]
    fn single_rate_examples() {
        assert!(close(rate_single(1.0, 2.0, 2.0, BW), BW, 1e-15));
        assert_eq!(rate_single(0.0, 2.0, 2.0, BW), 0.0);
        assert!(close(rate_single(3.0, 1.0, 1.0, BW), 2.0 * BW, 1e-15));
    }

    #[test]
    fn second_rate_examples() {
        assert!(close(
            rate_second(2.0, 0.0, 3.0, 1.5, BW),
            rate_single(2.0, 3.0, 1.5, BW),
            1e-15
        ));
        // p2 h2 = σ² and p1 h2 = σ²: SINR 1/2
        let r = rate_second(0.5, 0.5, 2.0, 1.0, BW);
        assert!(close(r, BW * 1.5f64.log2(), 1e-15));
        assert!(close(r / BW, 0.584_962_500_721_156_2, 1e-15));
        assert_eq!(rate_second(0.0, 1.0, 1.0, 1.0, BW), 0.0);
    }

    #[test]
    fn ftpa_examples() {
        assert_eq!(ftpa_power(3.0, 2.0, 2.0, 0.5), 3.0);
        assert_eq!(ftpa_power(3.0, 8.0, 2.0, 0.0), 3.0);
        assert!(close(ftpa_power(3.0, 4.0, 1.0, 0.5), 6.0, 1e-15));
    }

    #[test]
    fn mutual_feasibility_examples() {
        assert_eq!(mutual_sic_feasible(&link(1.0, 4.0, 4.0, 1.0)), Ok(true));
        // k1 stronger at both RRHs
        assert_eq!(mutual_sic_feasible(&link(5.0, 4.0, 4.0, 1.0)), Ok(false));
        assert_eq!(mutual_sic_feasible(&link(2.0, 2.0, 2.0, 2.0)), Ok(true));
        let same = PairLink::same_rrh(2, 3.0, 1.0, 1.0, 1.0, 1.0);
        assert_eq!(mutual_sic_feasible(&same), Err(RateError::SameRrh(2)));
    }

    #[test]
    fn ratio_bounds_examples() {
        assert_eq!(mux_ratio_bounds(&link(1.0, 4.0, 4.0, 1.0)), (0.25, 4.0));
        assert_eq!(mux_ratio_bounds(&link(2.0, 2.0, 2.0, 2.0)), (1.0, 1.0));
    }

    #[test]
    fn drrh_single_sic_examples() {
        let same = PairLink::same_rrh(0, 3.0, 1.0, 1.0, 1.0, 1.0);
        assert!(single_sic_drrh_ok(&same));
        assert!(single_sic_drrh_ok(&same.with_powers(1.0, 2.0)));
        assert!(!single_sic_drrh_ok(&same.with_powers(1.0, 0.99)));
        assert_eq!(single_sic_min_ratio(&same), 1.0);

        let l = link(1.0, 3.0, 0.5, 2.0);
        assert!(single_sic_drrh_ok(&l.with_powers(1e-6, 1e3)));
        // p1 h11 > p2 h12
        assert!(!single_sic_drrh_ok(&l.with_powers(4.0, 1.0)));
    }

    #[test]
    fn margin_examples() {
        assert!(sic_margin_ok(2.0, 2.0, 0.0));
        assert!(sic_margin_ok(100.0, 101.0, 0.01));
        assert!(!sic_margin_ok(2.0, 2.0, 0.01));
    }

    proptest! {
        #[test]
        fn same_rrh_only_first_decodes(
            a in 1e-3f64..1e3, b in 1e-3f64..1e3,
            p1 in 0.0f64..1e3, p2 in 0.0f64..1e3,
            noise in 1e-3f64..10.0,
        ) {
            let (h1, h2) = if a >= b { (a, b) } else { (b, a) };
            let l = PairLink::same_rrh(0, h1, h2, noise, p1, p2);
            prop_assert!(l.decode_second_at_first(1.0) - l.rate_second_no_sic(1.0) >= 0.0);
            prop_assert!(l.decode_first_at_second(1.0) - l.rate_first_sic(1.0) <= 0.0);
        }

        #[test]
        fn rate_second_monotone(p2 in 0.0f64..1e3, p1 in 0.0f64..1e3, dp in 1e-3f64..10.0, h in 1e-2f64..1e2) {
            prop_assert!(rate_second(p2 + dp, p1, h, 1.0, 1.0) >= rate_second(p2, p1, h, 1.0, 1.0));
            prop_assert!(rate_second(p2, p1 + dp, h, 1.0, 1.0) <= rate_second(p2, p1, h, 1.0, 1.0));
        }

        #[test]
        fn feasible_band_nonempty(
            g11 in 1e-3f64..1e3, g12 in 1e-3f64..1e3, g21 in 1e-3f64..1e3, g22 in 1e-3f64..1e3,
        ) {
            let l = link(g11, g12, g21, g22);
            if mutual_sic_feasible(&l).unwrap() {
                let (lo, hi) = mux_ratio_bounds(&l);
                prop_assert!(lo <= hi);
            }
        }
    }
}
