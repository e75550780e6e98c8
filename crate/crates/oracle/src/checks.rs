//! Randomized cross-checks of the primary implementation against the
//! oracles. Each check draws its own instances from a seed and reports the
//! worst gap it saw, so the same routine serves the test suite (few
//! instances) and acceptance reruns (full counts).

use noma_dbs::adjust::{lpo_adjust, margin_band, opad_joint, OpadInput};
use noma_dbs::rates::{mutual_sic_feasible, mux_ratio_bounds, PairLink};
use noma_dbs::waterfill::{SoleEntry, WaterfillAccount};
use noma_dbs::{generate_trial, run_method, MethodId, SystemParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{
    active_set_power_desc, dichotomy_waterfill, exhaustive_small_alloc, relative_gap, sorted_waterfill_power,
    zoom_min_1d, zoom_min_2d, OracleReport,
};

/// Outcome of one randomized check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    /// Instances actually compared.
    pub instances: usize,
    /// Instances the primary declined (for example a pairing it rejects).
    pub skipped: usize,
    pub failures: usize,
    pub tolerance: f64,
    /// Largest gap seen, in the check's own measure.
    pub worst: f64,
    /// Instance that produced `worst`.
    pub worst_case: Option<OracleReport>,
    /// Finest grid cell the oracle used, when it is a grid search.
    pub resolution: Option<f64>,
}

impl CheckOutcome {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            instances: 0,
            skipped: 0,
            failures: 0,
            tolerance,
            worst: 0.0,
            worst_case: None,
            resolution: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.instances > 0
    }

    fn record(&mut self, gap: f64, report: impl FnOnce() -> OracleReport) {
        self.instances += 1;
        // NaN gaps count as failures and become the worst case.
        if gap.is_nan() || gap > self.tolerance {
            self.failures += 1;
        }
        if gap.is_nan() || gap > self.worst {
            self.worst = gap;
            self.worst_case = Some(report());
        }
    }

    fn coarsest(&mut self, resolution: f64) {
        self.resolution = Some(self.resolution.map_or(resolution, |r: f64| r.max(resolution)));
    }
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} instances, {} skipped, {} over tolerance {:e}, worst {:.3e}",
            self.name, self.instances, self.skipped, self.failures, self.tolerance, self.worst
        )?;
        if let Some(r) = self.resolution {
            write!(f, ", grid cell {r:.1e}")?;
        }
        Ok(())
    }
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn random_gains(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| log_uniform(rng, 1e-2, 1e2)).collect()
}

/// Builds an account the way the allocators do: start from the strongest
/// gain and add the others in decreasing order while they are admitted.
pub fn greedy_account(gains: &[f64], rate: f64) -> WaterfillAccount {
    let mut sorted: Vec<f64> = gains.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let entry = |i: usize, gain: f64| SoleEntry {
        subcarrier: i,
        rrh: 0,
        gain,
    };
    let mut acc = WaterfillAccount::new(vec![entry(0, sorted[0])], rate).expect("one gain");
    for (i, &g) in sorted.iter().enumerate().skip(1) {
        if !acc.admits(g) {
            break;
        }
        acc.push(entry(i, g));
    }
    acc
}

fn account_gains(acc: &WaterfillAccount) -> Vec<f64> {
    acc.gains().collect()
}

/// Incremental waterfilling against bisection: the greedy build over random
/// gains, then a random rate shift with batch removal. Gap is the larger of
/// the waterline and total-power relative gaps.
pub fn waterfill_equivalence(instances: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CheckOutcome::new("waterfill vs dichotomy", 1e-9);
    for i in 0..instances {
        let n = rng.random_range(1..=16);
        let gains = random_gains(&mut rng, n);
        let rate = rng.random_range(0.1..4.0 * n as f64);
        let mut acc = greedy_account(&gains, rate);

        let w_ref = dichotomy_waterfill(&gains, rate);
        let p_ref = sorted_waterfill_power(&gains, rate);
        let (w, p) = (acc.waterline(), acc.total_power());
        let gap = relative_gap(w, w_ref).max(relative_gap(p, p_ref));
        out.record(gap, || {
            OracleReport::new(format!("build #{i} N={n} rate={rate:.3}"), p, p_ref)
        });

        let delta = rate * rng.random_range(-0.9..1.0);
        let Ok(update) = acc.plan_rate_shift(delta, 0.0) else {
            out.skipped += 1;
            continue;
        };
        acc.apply(&update);
        let kept = account_gains(&acc);
        let w_ref = dichotomy_waterfill(&kept, rate + delta);
        let p_ref = sorted_waterfill_power(&kept, rate + delta);
        let (w, p) = (acc.waterline(), acc.total_power());
        let gap = relative_gap(w, w_ref).max(relative_gap(p, p_ref));
        out.record(gap, || {
            OracleReport::new(
                format!("shift #{i} N={n} delta={delta:.3} removed={}", update.removed),
                p,
                p_ref,
            )
        });
    }
    out
}

/// Same-RRH decoding surpluses: the stronger user can always decode the
/// weaker one's message and never the reverse. The sign is read from the
/// exact numerator `X - Y = σ² p2 (h1 - h2)` and from the computed rates;
/// a check fails on any sign disagreement beyond one rounding of the rate.
pub fn same_rrh_surplus_signs(draws: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CheckOutcome::new("same-RRH SIC surplus signs", 0.0);
    let bw = 1.0;
    for i in 0..draws {
        let (a, b) = (log_uniform(&mut rng, 1e-3, 1e3), log_uniform(&mut rng, 1e-3, 1e3));
        let (h1, h2) = if a >= b { (a, b) } else { (b, a) };
        let p1 = if rng.random_bool(0.05) {
            0.0
        } else {
            log_uniform(&mut rng, 1e-4, 1e2)
        };
        let p2 = if rng.random_bool(0.05) {
            0.0
        } else {
            log_uniform(&mut rng, 1e-4, 1e2)
        };
        let noise = 1.0;
        let link = PairLink::same_rrh(0, h1, h2, noise, p1, p2);
        let weak_surplus = link.decode_second_at_first(bw) - link.rate_second_no_sic(bw);
        let strong_surplus = link.decode_first_at_second(bw) - link.rate_first_no_sic(bw);
        let x_minus_y = noise * p2 * (h1 - h2);
        let z_minus_t = noise * p1 * (h2 - h1);
        let slack = 4.0 * f64::EPSILON * (link.rate_second_no_sic(bw) + link.rate_first_no_sic(bw) + 1.0);
        let bad = (x_minus_y < 0.0) as u32
            + (z_minus_t > 0.0) as u32
            + (weak_surplus < -slack) as u32
            + (strong_surplus > slack) as u32;
        out.record(bad as f64, || {
            OracleReport::new(
                format!("draw #{i} h1={h1:e} h2={h2:e} p1={p1:e} p2={p2:e}"),
                weak_surplus,
                strong_surplus,
            )
        });
    }
    out
}

/// Among admissible candidates, the one of largest gain lowers the power
/// most. Counts draws where the argmin of the added-power change is not the
/// argmax of the gain.
pub fn strongest_candidate_saves_most(draws: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CheckOutcome::new("argmin power change = argmax gain", 0.0);
    while out.instances < draws {
        let n = rng.random_range(1..=8);
        let gains = random_gains(&mut rng, n);
        let acc = greedy_account(&gains, rng.random_range(0.5..3.0 * n as f64));
        let m = rng.random_range(2..=8);
        let candidates = random_gains(&mut rng, m);
        let admissible: Vec<f64> = candidates.into_iter().filter(|&g| acc.admits(g)).collect();
        if admissible.len() < 2 {
            out.skipped += 1;
            continue;
        }
        let by_power = admissible
            .iter()
            .min_by(|a, b| acc.preview_add(**a).1.total_cmp(&acc.preview_add(**b).1))
            .copied()
            .unwrap_or(f64::NAN);
        let by_gain = admissible.iter().copied().fold(f64::MIN, f64::max);
        let i = out.instances;
        out.record((by_power != by_gain) as u32 as f64, || {
            OracleReport::new(format!("draw #{i}"), by_power, by_gain)
        });
    }
    out
}

/// Adding admitted subcarriers in decreasing-gain order, as the greedy
/// phases do, never drives an existing power below `-1e-12` mW. Gap is the
/// most negative power seen, sign flipped.
pub fn admitted_adds_keep_powers_positive(draws: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CheckOutcome::new("powers stay nonnegative after admitted adds", 1e-12);
    for i in 0..draws {
        let n = rng.random_range(2..=16);
        let mut gains = random_gains(&mut rng, n);
        gains.sort_by(|a, b| b.total_cmp(a));
        let rate = rng.random_range(0.1..4.0 * n as f64);
        let mut acc = WaterfillAccount::new(
            vec![SoleEntry {
                subcarrier: 0,
                rrh: 0,
                gain: gains[0],
            }],
            rate,
        )
        .unwrap();
        let mut lowest = f64::INFINITY;
        for (j, &g) in gains.iter().enumerate().skip(1) {
            if !acc.admits(g) {
                continue;
            }
            acc.push(SoleEntry {
                subcarrier: j,
                rrh: 0,
                gain: g,
            });
            let min = acc
                .entries()
                .iter()
                .map(|e| acc.waterline() - 1.0 / e.gain)
                .fold(f64::INFINITY, f64::min);
            lowest = lowest.min(min);
        }
        out.record((-lowest).max(0.0), || {
            OracleReport::new(format!("draw #{i} N={n}"), lowest, 0.0)
        });
    }
    out
}

/// Whenever both users can perform SIC the power-ratio band is nonempty.
pub fn mutual_band_nonempty(draws: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CheckOutcome::new("mutual-SIC ratio band nonempty", 0.0);
    while out.instances < draws {
        let g: [f64; 4] = std::array::from_fn(|_| log_uniform(&mut rng, 1e-3, 1e3));
        let link = PairLink {
            r1: 0,
            r2: 1,
            g11: g[0],
            g12: g[1],
            g21: g[2],
            g22: g[3],
            noise: 1.0,
            p1: 1.0,
            p2: 1.0,
        };
        if !mutual_sic_feasible(&link).expect("distinct RRHs") {
            out.skipped += 1;
            continue;
        }
        let (lo, hi) = mux_ratio_bounds(&link);
        let i = out.instances;
        out.record((lo > hi) as u32 as f64, || {
            OracleReport::new(format!("draw #{i}"), lo, hi)
        });
    }
    out
}

/// LPO against a 1-D grid over the second user's power. The oracle cost is
/// `p + P(rate - log2(1 + a p)) - P(rate)` with `P` the active-set
/// waterfilling power, searched on a log grid from the SIC lower bound up to
/// the power that would carry the whole rate. Instances the primary rejects
/// (its optimum would empty the sole set) are skipped and replaced.
pub fn lpo_vs_grid(instances: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CheckOutcome::new("LPO vs 1-D grid", 1e-6);
    let margin = 0.01;
    while out.instances < instances && out.skipped < 10 * instances {
        let i = out.instances + out.skipped;
        let n = rng.random_range(1..=8);
        let gains = random_gains(&mut rng, n);
        let rate = rng.random_range(0.5..3.0 * n as f64);
        let k2 = greedy_account(&gains, rate);
        let p1 = log_uniform(&mut rng, 1e-3, 1e1);
        let h2 = log_uniform(&mut rng, 1e-2, 1e2);
        let a = h2 / (p1 * h2 + 1.0);
        let lower = p1 * (1.0 + margin);
        let Ok(primary) = lpo_adjust(&k2, a, lower, p1) else {
            out.skipped += 1;
            continue;
        };
        let mut sorted = account_gains(&k2);
        sorted.sort_by(|x, y| y.total_cmp(x));
        let base = active_set_power_desc(&sorted, rate);
        let cost = |p: f64| {
            let rest = rate - (a * p).ln_1p() / std::f64::consts::LN_2;
            if rest <= 0.0 {
                return f64::INFINITY;
            }
            p + active_set_power_desc(&sorted, rest) - base
        };
        let upper = (rate.exp2() - 1.0) / a;
        if upper.partial_cmp(&lower) != Some(std::cmp::Ordering::Greater) {
            out.skipped += 1;
            continue;
        }
        let grid = zoom_min_1d(|x| cost(x.exp()), lower.ln(), upper.ln(), 10_000, 5);
        let at_primary = cost(primary.p2);
        // the primary must be feasible and report its own cost honestly
        let consistency = relative_gap(at_primary, primary.delta_power);
        let gap = if primary.p2 < lower {
            f64::INFINITY
        } else {
            relative_gap(primary.delta_power, grid.value)
        };
        out.coarsest(grid.resolution);
        out.record(gap.max(consistency), || {
            OracleReport::new(format!("#{i} N={n} p1={p1:e} a={a:e}"), primary.delta_power, grid.value)
        });
    }
    out
}

/// Random OPAd instance: the first user's account and the shared
/// subcarrier, the second user's account and a mutual-SIC link.
struct OpadCase {
    k1_rest: WaterfillAccount,
    k2: WaterfillAccount,
    link: PairLink,
}

fn opad_case(rng: &mut impl Rng) -> OpadCase {
    loop {
        let n1 = rng.random_range(1..=6);
        let g1 = random_gains(rng, n1);
        let k1 = greedy_account(&g1, rng.random_range(0.5..3.0 * n1 as f64));
        let pick = k1.entries()[rng.random_range(0..k1.len())];
        let p1 = k1.power_on(pick.subcarrier).expect("entry of k1");
        let mut k1_rest = k1.clone();
        k1_rest.detach(pick.subcarrier);

        let n2 = rng.random_range(1..=6);
        let g2 = random_gains(rng, n2);
        let k2 = greedy_account(&g2, rng.random_range(0.5..3.0 * n2 as f64));

        let lo = log_uniform(rng, 1e-2, 1e1);
        let hi = lo * log_uniform(rng, 1.05, 1e2);
        let g22 = log_uniform(rng, 1e-2, 1e2);
        let link = PairLink {
            r1: 0,
            r2: 1,
            g11: pick.gain,
            g12: pick.gain / lo,
            g21: hi * g22,
            g22,
            noise: 1.0,
            p1,
            p2: 0.0,
        };
        if mutual_sic_feasible(&link).expect("distinct RRHs") && k2.admits(g22) {
            return OpadCase { k1_rest, k2, link };
        }
    }
}

/// OPAd against a 2-D grid over `(ln p1, p2/p1)` on the margin-adjusted
/// ratio band, with the joint cost rebuilt from active-set waterfilling.
/// Also checks the stationarity residual wherever a root was solved.
/// Rejected instances are replaced as in [`lpo_vs_grid`].
pub fn opad_vs_grid(instances: usize, seed: u64) -> (CheckOutcome, CheckOutcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CheckOutcome::new("OPAd vs 2-D grid", 1e-4);
    let mut residuals = CheckOutcome::new("OPAd stationarity residual", 1e-10);
    let margin = 0.01;
    while out.instances < instances && out.skipped < 10 * instances {
        let i = out.instances + out.skipped;
        let case = opad_case(&mut rng);
        let input = OpadInput {
            link: case.link,
            k1_rest: &case.k1_rest,
            k2: &case.k2,
            margin,
        };
        let Ok(primary) = opad_joint(&input) else {
            out.skipped += 1;
            continue;
        };
        if let Some(root) = primary.root {
            residuals.record(root.residual.abs(), || {
                OracleReport::new(format!("#{i} root at {:e}", root.x), root.residual, 0.0)
            });
        }
        let (lo, hi) = margin_band(mux_ratio_bounds(&case.link), margin).expect("feasible band");
        let link = case.link;
        let mut g1: Vec<f64> = account_gains(&case.k1_rest);
        g1.sort_by(|a, b| b.total_cmp(a));
        let mut g2: Vec<f64> = account_gains(&case.k2);
        g2.sort_by(|a, b| b.total_cmp(a));
        let (t1, t2) = (case.k1_rest.rate_target(), case.k2.rate_target());
        let (base1, base2) = (active_set_power_desc(&g1, t1), active_set_power_desc(&g2, t2));
        let cost = |p1: f64, p2: f64| {
            let gained1 = ((1.0 + p1 * link.g11) / (1.0 + link.p1 * link.g11)).log2();
            let rest1 = t1 - gained1;
            let rest2 = t2 - (p2 * link.g22).ln_1p() / std::f64::consts::LN_2;
            if rest2 <= 0.0 || (g1.is_empty() && p1 != link.p1) || (!g1.is_empty() && rest1 <= 0.0) {
                return f64::INFINITY;
            }
            let d1 = if g1.is_empty() {
                0.0
            } else {
                active_set_power_desc(&g1, rest1) - base1
            };
            p1 - link.p1 + d1 + p2 + active_set_power_desc(&g2, rest2) - base2
        };
        let grid_value = if g1.is_empty() {
            let m = zoom_min_1d(|c| cost(link.p1, c * link.p1), lo, hi, 400, 8);
            out.coarsest(m.resolution);
            m.value
        } else {
            // first user's power may move up to where its other subcarriers carry nothing
            let cap = ((1.0 + link.p1 * link.g11) * t1.exp2() - 1.0) / link.g11;
            let x = ((link.p1 * 1e-4).ln(), cap.min(link.p1 * 1e6).ln());
            let f = |x: f64, c: f64| {
                let p1 = x.exp();
                cost(p1, c * p1)
            };
            let m = zoom_min_2d(f, x, (lo, hi), 400, 40, 10);
            out.coarsest(m.resolution.0.max(m.resolution.1));
            m.value
        };
        let at_primary = cost(primary.p1, primary.p2);
        let consistency = relative_gap(at_primary, primary.delta_power);
        let ratio = primary.p2 / primary.p1;
        let inside = ratio >= lo * (1.0 - 1e-12) && ratio <= hi * (1.0 + 1e-12);
        let gap = if inside {
            relative_gap(primary.delta_power, grid_value)
        } else {
            f64::INFINITY
        };
        out.record(gap.max(consistency), || {
            OracleReport::new(format!("#{i} case {:?}", primary.case), primary.delta_power, grid_value)
        });
    }
    (out, residuals)
}

/// Greedy OMA against exhaustive enumeration on small random instances.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyGap {
    /// `(K, S, R, greedy/optimum)` per instance.
    pub ratios: Vec<(usize, usize, usize, f64)>,
    /// Instances where greedy beat the optimum by more than rounding.
    pub violations: usize,
}

impl GreedyGap {
    /// Empirical quantile of the power ratio, `q` in `[0, 1]`.
    pub fn quantile(&self, q: f64) -> f64 {
        let mut r: Vec<f64> = self.ratios.iter().map(|x| x.3).collect();
        r.sort_by(f64::total_cmp);
        if r.is_empty() {
            return f64::NAN;
        }
        r[((r.len() - 1) as f64 * q).round() as usize]
    }

    pub fn fraction_optimal(&self, tol: f64) -> f64 {
        self.ratios.iter().filter(|x| x.3 <= 1.0 + tol).count() as f64 / self.ratios.len() as f64
    }
}

/// Small-instance parameters: `users × subcarriers × rrhs` with the
/// reference cell and rate scaled so each user needs a few bits per use.
pub fn small_params(users: usize, subcarriers: usize, rrhs: usize, seed: u64) -> SystemParams {
    SystemParams {
        num_users: users,
        num_subcarriers: subcarriers,
        num_rrh: rrhs,
        rate_req: 6e6,
        seed,
        ..SystemParams::default()
    }
}

/// Runs OMA (DBS) and the exhaustive oracle on `instances` channels drawn
/// from the reference cell with `K ≤ 3`, `K ≤ S ≤ 6`, `R ≤ 2`.
pub fn greedy_gap(instances: usize, seed: u64) -> GreedyGap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gap = GreedyGap {
        ratios: Vec::with_capacity(instances),
        violations: 0,
    };
    for trial in 0..instances as u64 {
        let k = rng.random_range(1..=3);
        let s = rng.random_range(k..=6);
        let r = rng.random_range(1..=2);
        let params = small_params(k, s, r, seed);
        let (_, channel) = generate_trial(&params, trial);
        let greedy = run_method(MethodId::OmaDbs, &channel, &params).expect("valid small instance");
        let best = exhaustive_small_alloc(&channel, params.rate_norm()).expect("within enumeration limits");
        let ratio = greedy.audit.total_power / best.total_power;
        if ratio < 1.0 - 1e-9 {
            gap.violations += 1;
        }
        gap.ratios.push((k, s, r, ratio));
    }
    gap
}
