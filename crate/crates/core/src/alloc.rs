//! Greedy subcarrier, RRH and power allocation.
//!
//! Every method runs the same skeleton:
//!
//! 1. Worst-Best-H: users with the weakest best channel pick first, one
//!    subcarrier each.
//! 2. OMA: the user with the highest total power takes its strongest free
//!    `(subcarrier, RRH)` while that lowers its power by more than `ρ`.
//! 3. Pairing (NOMA methods only): the user with the highest total power
//!    joins, as second user, the subcarrier of another user that saves the
//!    most power, under the method's SIC regime and power rule.
//!
//! Each user's solely assigned subcarriers are waterfilled for the rate not
//! carried by its paired subcarriers. Powers on paired subcarriers are frozen
//! once the pair is accepted. Gains are used normalized (`h²/σ²`), so powers
//! are in mW and rates in bits/use.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjust::{self, AdjustOutcome, OpadInput};
use crate::channel::ChannelTensor;
use crate::params::SystemParams;
use crate::rates::{ftpa_power, mutual_sic_feasible, mux_ratio_bounds, single_sic_min_ratio, PairLink};
use crate::waterfill::{SoleEntry, SoleUpdate, WaterfillAccount};

/// Sole subcarriers below this power (mW) are released when a user retires
/// from pairing.
pub const ZERO_POWER_MW: f64 = 1e-12;
/// Relative slack of the post-hoc constraint audit.
pub const AUDIT_CONSTRAINT_TOL: f64 = 1e-9;
/// Relative slack of the post-hoc rate audit.
pub const AUDIT_RATE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocError {
    #[error("{users} users need at least as many subcarriers, channel has {subcarriers}")]
    TooFewSubcarriers { users: usize, subcarriers: usize },
    #[error("channel has no users")]
    NoUsers,
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodId {
    #[serde(rename = "OMA_CBS")]
    OmaCbs,
    #[serde(rename = "NOMA_CBS")]
    NomaCbs,
    #[serde(rename = "OMA_DBS")]
    OmaDbs,
    #[serde(rename = "NOMA_DBS_SRRH")]
    NomaDbsSrrh,
    #[serde(rename = "NOMA_DBS_SRRH_LPO")]
    NomaDbsSrrhLpo,
    #[serde(rename = "NOMA_DBS_MUTSIC_UC")]
    NomaDbsMutsicUc,
    #[serde(rename = "NOMA_DBS_MUTSIC_DPA")]
    NomaDbsMutsicDpa,
    #[serde(rename = "NOMA_DBS_MUTSIC_OPAD")]
    NomaDbsMutsicOpad,
    #[serde(rename = "NOMA_DBS_MUTSIC_SOPAD")]
    NomaDbsMutsicSopad,
    #[serde(rename = "NOMA_DBS_MUT_AND_SINGSIC")]
    NomaDbsMutAndSingsic,
}

impl MethodId {
    pub const ALL: [MethodId; 10] = [
        MethodId::OmaCbs,
        MethodId::NomaCbs,
        MethodId::OmaDbs,
        MethodId::NomaDbsSrrh,
        MethodId::NomaDbsSrrhLpo,
        MethodId::NomaDbsMutsicUc,
        MethodId::NomaDbsMutsicDpa,
        MethodId::NomaDbsMutsicOpad,
        MethodId::NomaDbsMutsicSopad,
        MethodId::NomaDbsMutAndSingsic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodId::OmaCbs => "OMA_CBS",
            MethodId::NomaCbs => "NOMA_CBS",
            MethodId::OmaDbs => "OMA_DBS",
            MethodId::NomaDbsSrrh => "NOMA_DBS_SRRH",
            MethodId::NomaDbsSrrhLpo => "NOMA_DBS_SRRH_LPO",
            MethodId::NomaDbsMutsicUc => "NOMA_DBS_MUTSIC_UC",
            MethodId::NomaDbsMutsicDpa => "NOMA_DBS_MUTSIC_DPA",
            MethodId::NomaDbsMutsicOpad => "NOMA_DBS_MUTSIC_OPAD",
            MethodId::NomaDbsMutsicSopad => "NOMA_DBS_MUTSIC_SOPAD",
            MethodId::NomaDbsMutAndSingsic => "NOMA_DBS_MUT_AND_SINGSIC",
        }
    }

    /// Whether the method only sees the center antenna.
    pub fn is_cbs(self) -> bool {
        matches!(self, MethodId::OmaCbs | MethodId::NomaCbs)
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodId {
    type Err = AllocError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| AllocError::UnknownMethod(s.to_string()))
    }
}

/// How a paired subcarrier was formed; decides which rate formulas and
/// multiplexing constraints apply to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// Same RRH, second-user power by FTPA: `p2 ≥ p1`.
    SrrhFtpa,
    /// Same RRH with the SIC margin: `p2 ≥ p1 (1 + μ)`.
    SrrhMargin,
    /// Different RRHs, only the first user cancels.
    DrrhSingle,
    /// Mutual SIC with no power-ratio constraint.
    MutualUnconstrained,
    /// Mutual SIC inside the margin-adjusted ratio band.
    MutualBand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    NonMux,
    SingleSicSrrh,
    SingleSicDrrh,
    MutualSic,
}

impl Regime {
    pub fn category(self) -> Category {
        match self {
            Regime::SrrhFtpa | Regime::SrrhMargin => Category::SingleSicSrrh,
            Regime::DrrhSingle => Category::SingleSicDrrh,
            Regime::MutualUnconstrained | Regime::MutualBand => Category::MutualSic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pairing {
    pub first: usize,
    pub r1: usize,
    pub p1: f64,
    pub second: usize,
    pub r2: usize,
    pub p2: f64,
    pub regime: Regime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot {
    Free,
    Sole { user: usize, rrh: usize },
    Paired(Pairing),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub non_mux: usize,
    pub mutual_sic: usize,
    pub single_sic_srrh: usize,
    pub single_sic_drrh: usize,
    pub unallocated: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocStats {
    /// Iterations of the OMA and pairing loops.
    pub iterations: usize,
    pub pairings: usize,
    pub opad_calls: usize,
    pub root_solves: usize,
}

/// Scalar knobs of the allocators, in normalized units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocConfig {
    /// bits/use over the whole band
    pub rate_norm: f64,
    /// mW
    pub threshold: f64,
    pub margin: f64,
    pub alpha: f64,
}

impl AllocConfig {
    pub fn from_params(params: &SystemParams) -> Self {
        Self {
            rate_norm: params.rate_norm(),
            threshold: params.threshold_mw(),
            margin: params.safety_margin,
            alpha: params.ftpa_alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserState {
    pub sole: WaterfillAccount,
    /// Power frozen on paired subcarriers, mW.
    pub fixed_power: f64,
}

impl UserState {
    pub fn total_power(&self) -> f64 {
        self.sole.total_power() + self.fixed_power
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationState {
    pub config: AllocConfig,
    pub slots: Vec<Slot>,
    pub users: Vec<UserState>,
    pub stats: AllocStats,
}

impl AllocationState {
    pub fn total_power(&self) -> f64 {
        self.users.iter().map(UserState::total_power).sum()
    }

    pub fn category_counts(&self) -> CategoryCounts {
        let mut c = CategoryCounts::default();
        for slot in &self.slots {
            match slot {
                Slot::Free => c.unallocated += 1,
                Slot::Sole { .. } => c.non_mux += 1,
                Slot::Paired(p) => match p.regime.category() {
                    Category::NonMux => c.non_mux += 1,
                    Category::SingleSicSrrh => c.single_sic_srrh += 1,
                    Category::SingleSicDrrh => c.single_sic_drrh += 1,
                    Category::MutualSic => c.mutual_sic += 1,
                },
            }
        }
        c
    }

    fn free(&mut self, entries: Vec<SoleEntry>) {
        for e in entries {
            self.slots[e.subcarrier] = Slot::Free;
        }
    }

    /// Highest-power user in `pool`, lowest index on ties.
    fn neediest(&self, pool: &[bool]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (k, _) in pool.iter().enumerate().filter(|(_, active)| **active) {
            let p = self.users[k].total_power();
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((k, p));
            }
        }
        best.map(|(k, _)| k)
    }
}

fn check_shape(channel: &ChannelTensor) -> Result<(), AllocError> {
    let (k, s) = (channel.num_users(), channel.num_subcarriers());
    if k == 0 {
        return Err(AllocError::NoUsers);
    }
    if s < k {
        return Err(AllocError::TooFewSubcarriers {
            users: k,
            subcarriers: s,
        });
    }
    Ok(())
}

/// Best `(subcarrier, rrh, gain)` of user `k` among free subcarriers.
fn best_free(state: &AllocationState, channel: &ChannelTensor, k: usize) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for n in (0..channel.num_subcarriers()).filter(|&n| state.slots[n] == Slot::Free) {
        for r in 0..channel.num_rrh() {
            let g = channel.snr_gain(k, n, r);
            if best.is_none_or(|(_, _, bg)| g > bg) {
                best = Some((n, r, g));
            }
        }
    }
    best
}

/// One subcarrier per user; the user whose best remaining gain is lowest
/// picks next, so best gains are re-evaluated after every pick.
pub fn worst_best_h_init(channel: &ChannelTensor, config: AllocConfig) -> Result<AllocationState, AllocError> {
    check_shape(channel)?;
    let k_count = channel.num_users();
    let mut state = AllocationState {
        config,
        slots: vec![Slot::Free; channel.num_subcarriers()],
        users: vec![
            UserState {
                sole: WaterfillAccount::empty(),
                fixed_power: 0.0,
            };
            k_count
        ],
        stats: AllocStats::default(),
    };
    let mut waiting = vec![true; k_count];
    for _ in 0..k_count {
        let (k, (n, r, gain)) = (0..k_count)
            .filter(|&k| waiting[k])
            .filter_map(|k| best_free(&state, channel, k).map(|b| (k, b)))
            .min_by(|a, b| a.1 .2.total_cmp(&b.1 .2).then(a.0.cmp(&b.0)))
            .expect("at least as many subcarriers as users");
        waiting[k] = false;
        state.slots[n] = Slot::Sole { user: k, rrh: r };
        let entry = SoleEntry {
            subcarrier: n,
            rrh: r,
            gain,
        };
        state.users[k].sole = WaterfillAccount::new(vec![entry], config.rate_norm).expect("one entry");
    }
    Ok(state)
}

/// Single-user subcarrier assignment.
pub fn oma_assign(state: &mut AllocationState, channel: &ChannelTensor) {
    let mut pool = vec![true; state.users.len()];
    while let Some(k) = state.neediest(&pool) {
        state.stats.iterations += 1;
        if oma_step(state, channel, k).is_none() {
            pool[k] = false;
        }
    }
}

/// Gives `k` its strongest free subcarrier if that lowers its power by more
/// than the threshold. The strongest one is also the one with the largest
/// power decrease, and the only one that can be admitted if it is not.
fn oma_step(state: &mut AllocationState, channel: &ChannelTensor, k: usize) -> Option<SoleEntry> {
    let (n, r, gain) = best_free(state, channel, k)?;
    let account = &mut state.users[k].sole;
    if !(account.admits(gain) && account.preview_add(gain).1 < -state.config.threshold) {
        return None;
    }
    let entry = SoleEntry {
        subcarrier: n,
        rrh: r,
        gain,
    };
    account.push(entry);
    state.slots[n] = Slot::Sole { user: k, rrh: r };
    Some(entry)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerRule {
    Ftpa,
    Lpo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutualVariant {
    Unconstrained,
    Dpa,
    Opad,
    Sopad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PairRule {
    Srrh(PowerRule),
    Mutual(MutualVariant),
    SingleSic,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    n: usize,
    k1: usize,
    r1: usize,
    r2: usize,
    link: PairLink,
    outcome: AdjustOutcome,
    regime: Regime,
}

fn pair_link(channel: &ChannelTensor, k1: usize, r1: usize, k2: usize, r2: usize, n: usize, p1: f64) -> PairLink {
    PairLink {
        r1,
        r2,
        g11: channel.snr_gain(k1, n, r1),
        g12: channel.snr_gain(k1, n, r2),
        g21: channel.snr_gain(k2, n, r1),
        g22: channel.snr_gain(k2, n, r2),
        noise: 1.0,
        p1,
        p2: 0.0,
    }
}

fn k2_only(p1: f64, p2: f64, update: SoleUpdate, case: adjust::AdjustCase) -> AdjustOutcome {
    AdjustOutcome {
        p1,
        p2,
        delta_power: update.delta_power,
        case,
        k1_update: None,
        k2_update: update,
        root: None,
    }
}

/// `k1`'s sole account with `n` taken out.
fn rest_of(account: &WaterfillAccount, n: usize) -> WaterfillAccount {
    let mut rest = account.clone();
    rest.detach(n);
    rest
}

fn opad_input<'a>(state: &'a AllocationState, rest: &'a WaterfillAccount, k2: usize, link: PairLink) -> OpadInput<'a> {
    OpadInput {
        link,
        k1_rest: rest,
        k2: &state.users[k2].sole,
        margin: state.config.margin,
    }
}

/// Every admissible candidate of `k2` under `rule`, evaluated.
fn candidates(state: &mut AllocationState, channel: &ChannelTensor, k2: usize, rule: PairRule) -> Vec<Candidate> {
    let cfg = state.config;
    let mut out = Vec::new();
    let mut opad_calls = 0;
    let mut root_solves = 0;
    for n in 0..state.slots.len() {
        let Slot::Sole { user: k1, rrh: r1 } = state.slots[n] else {
            continue;
        };
        if k1 == k2 {
            continue;
        }
        let k1_acc = &state.users[k1].sole;
        let k2_acc = &state.users[k2].sole;
        let p1 = k1_acc.power_on(n).expect("sole slot is in its user's account");
        for r2 in 0..channel.num_rrh() {
            let link = pair_link(channel, k1, r1, k2, r2, n, p1);
            let same = r1 == r2;
            let evaluated = match rule {
                PairRule::Srrh(power) => {
                    if !same || link.g21 >= link.g11 {
                        continue;
                    }
                    match power {
                        PowerRule::Ftpa => {
                            let p2 = ftpa_power(p1, link.g11, link.g21, cfg.alpha);
                            let delta_rate = crate::rates::rate_second(p2, p1, link.g21, 1.0, 1.0);
                            k2_acc
                                .plan_rate_shift(-delta_rate, p2)
                                .map(|u| (k2_only(p1, p2, u, adjust::AdjustCase::Interior), Regime::SrrhFtpa))
                                .ok()
                        }
                        PowerRule::Lpo => {
                            let a = link.g21 / (p1 * link.g21 + 1.0);
                            adjust::lpo_adjust(k2_acc, a, p1 * (1.0 + cfg.margin), p1)
                                .map(|o| (o, Regime::SrrhMargin))
                                .ok()
                        }
                    }
                }
                PairRule::Mutual(variant) => {
                    if same || !mutual_sic_feasible(&link).unwrap_or(false) || !k2_acc.admits(link.g22) {
                        continue;
                    }
                    match variant {
                        MutualVariant::Unconstrained => {
                            let p2 = adjust::waterfill_power(k2_acc, link.g22);
                            k2_acc
                                .plan_rate_shift(-(p2 * link.g22).ln_1p() / std::f64::consts::LN_2, p2)
                                .map(|u| {
                                    (
                                        k2_only(p1, p2, u, adjust::AdjustCase::Interior),
                                        Regime::MutualUnconstrained,
                                    )
                                })
                                .ok()
                        }
                        MutualVariant::Dpa | MutualVariant::Sopad => adjust::dpa_adjust(k2_acc, &link, cfg.margin)
                            .map(|o| (o, Regime::MutualBand))
                            .ok(),
                        MutualVariant::Opad => {
                            let rest = rest_of(k1_acc, n);
                            let input = opad_input(state, &rest, k2, link);
                            opad_calls += 1;
                            let res = adjust::opad_joint(&input);
                            if let Ok(o) = &res {
                                root_solves += o.root.is_some() as usize;
                            }
                            res.map(|o| (o, Regime::MutualBand)).ok()
                        }
                    }
                }
                PairRule::SingleSic => {
                    if same {
                        if link.g21 >= link.g11 {
                            continue;
                        }
                        let a = link.g21 / (p1 * link.g21 + 1.0);
                        adjust::lpo_adjust(k2_acc, a, p1 * (1.0 + cfg.margin), p1)
                            .map(|o| (o, Regime::SrrhMargin))
                            .ok()
                    } else {
                        if !(link.first_can_sic() && !link.second_can_sic()) {
                            continue;
                        }
                        let a = link.g22 / (p1 * link.g21 + 1.0);
                        let lower = p1 * single_sic_min_ratio(&link) * (1.0 + cfg.margin);
                        adjust::lpo_adjust(k2_acc, a, lower, p1)
                            .map(|o| (o, Regime::DrrhSingle))
                            .ok()
                    }
                }
            };
            if let Some((outcome, regime)) = evaluated {
                out.push(Candidate {
                    n,
                    k1,
                    r1,
                    r2,
                    link,
                    outcome,
                    regime,
                });
            }
        }
    }
    state.stats.opad_calls += opad_calls;
    state.stats.root_solves += root_solves;
    out
}

fn accept(state: &mut AllocationState, k2: usize, c: &Candidate) {
    let o = &c.outcome;
    let k1_user = &mut state.users[c.k1];
    k1_user.sole.detach(c.n).expect("candidate subcarrier is sole");
    let freed_k1 = match &o.k1_update {
        Some(u) => k1_user.sole.apply(u),
        None => Vec::new(),
    };
    k1_user.fixed_power += o.p1;
    let k2_user = &mut state.users[k2];
    let freed_k2 = k2_user.sole.apply(&o.k2_update);
    k2_user.fixed_power += o.p2;
    state.free(freed_k1);
    state.free(freed_k2);
    state.slots[c.n] = Slot::Paired(Pairing {
        first: c.k1,
        r1: c.r1,
        p1: o.p1,
        second: k2,
        r2: c.r2,
        p2: o.p2,
        regime: c.regime,
    });
    state.stats.pairings += 1;
}

fn pairing_phase(state: &mut AllocationState, channel: &ChannelTensor, rule: PairRule) {
    let mut pool = vec![true; state.users.len()];
    while let Some(k2) = state.neediest(&pool) {
        state.stats.iterations += 1;
        if state.users[k2].sole.is_empty() {
            pool[k2] = false;
            continue;
        }
        let cands = candidates(state, channel, k2, rule);
        let best = cands
            .iter()
            .min_by(|a, b| a.outcome.delta_power.total_cmp(&b.outcome.delta_power))
            .copied();
        let chosen = match (best, rule) {
            (Some(mut c), PairRule::Mutual(MutualVariant::Sopad)) => {
                let rest = rest_of(&state.users[c.k1].sole, c.n);
                let input = opad_input(state, &rest, k2, c.link);
                let refined = adjust::sopad_adjust(&input, &c.outcome);
                state.stats.opad_calls += 1;
                state.stats.root_solves += refined.root.is_some() as usize;
                c.outcome = refined;
                Some(c)
            }
            (best, _) => best,
        };
        match chosen {
            Some(c) if c.outcome.delta_power < -state.config.threshold => accept(state, k2, &c),
            _ => {
                let released = state.users[k2].sole.release_low_power(ZERO_POWER_MW);
                state.free(released);
                pool[k2] = false;
            }
        }
    }
}

/// Same-RRH pairing where only the first user performs SIC.
pub fn pair_srrh(state: &mut AllocationState, channel: &ChannelTensor, rule: PowerRule) {
    pairing_phase(state, channel, PairRule::Srrh(rule));
}

/// Pairing on distinct RRHs where both users perform SIC.
pub fn pair_mutsic(state: &mut AllocationState, channel: &ChannelTensor, variant: MutualVariant) {
    pairing_phase(state, channel, PairRule::Mutual(variant));
}

/// Mutual-SIC pairing by SOPAd, then single-SIC pairing by LPO over the
/// subcarriers still solely assigned, on the first user's RRH or another.
pub fn pair_mut_and_single(state: &mut AllocationState, channel: &ChannelTensor) {
    pairing_phase(state, channel, PairRule::Mutual(MutualVariant::Sopad));
    pairing_phase(state, channel, PairRule::SingleSic);
}

/// Post-hoc check of a final allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// mW
    pub total_power: f64,
    pub counts: CategoryCounts,
    pub rates_ok: bool,
    pub constraints_ok: bool,
    /// Largest relative deviation of a user's delivered rate from the target.
    pub max_rate_error: f64,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn ok(&self) -> bool {
        self.rates_ok && self.constraints_ok
    }
}

/// Recomputes every user's rate from the final powers and gains, and checks
/// each paired subcarrier against its regime's multiplexing conditions.
pub fn audit(state: &AllocationState, channel: &ChannelTensor) -> AuditReport {
    let cfg = state.config;
    let mut rates = vec![0.0; state.users.len()];
    let mut violations = Vec::new();
    let lo_tol = 1.0 - AUDIT_CONSTRAINT_TOL;
    let hi_tol = 1.0 + AUDIT_CONSTRAINT_TOL;
    for (k, user) in state.users.iter().enumerate() {
        let w = user.sole.waterline();
        for e in user.sole.entries() {
            let p = w - e.gain.recip();
            if p < -AUDIT_CONSTRAINT_TOL * w.max(1.0) {
                violations.push(format!("user {k} has power {p:e} mW on subcarrier {}", e.subcarrier));
            }
            rates[k] += (p.max(0.0) * e.gain).ln_1p() / std::f64::consts::LN_2;
            if state.slots[e.subcarrier] != (Slot::Sole { user: k, rrh: e.rrh }) {
                violations.push(format!("subcarrier {} not marked sole for user {k}", e.subcarrier));
            }
        }
    }
    for (n, slot) in state.slots.iter().enumerate() {
        let Slot::Paired(p) = *slot else {
            continue;
        };
        let link = pair_link(channel, p.first, p.r1, p.second, p.r2, n, p.p1).with_powers(p.p1, p.p2);
        rates[p.first] += link.rate_first_sic(1.0);
        let ok = match p.regime {
            Regime::SrrhFtpa | Regime::SrrhMargin => {
                rates[p.second] += link.rate_second_no_sic(1.0);
                let need = if p.regime == Regime::SrrhFtpa {
                    1.0
                } else {
                    1.0 + cfg.margin
                };
                p.r1 == p.r2 && link.g21 < link.g11 && p.p2 >= p.p1 * need * lo_tol
            }
            Regime::DrrhSingle => {
                rates[p.second] += link.rate_second_no_sic(1.0);
                p.r1 != p.r2
                    && link.first_can_sic()
                    && !link.second_can_sic()
                    && p.p2 >= p.p1 * single_sic_min_ratio(&link) * (1.0 + cfg.margin) * lo_tol
            }
            Regime::MutualUnconstrained => {
                rates[p.second] += link.rate_second_sic(1.0);
                true
            }
            Regime::MutualBand => {
                rates[p.second] += link.rate_second_sic(1.0);
                let (lo, hi) = mux_ratio_bounds(&link);
                let ratio = p.p2 / p.p1;
                mutual_sic_feasible(&link).unwrap_or(false)
                    && ratio >= lo * (1.0 + cfg.margin) * lo_tol
                    && ratio <= hi * (1.0 - cfg.margin) * hi_tol
            }
        };
        if !ok || !(p.p1 >= 0.0 && p.p2 >= 0.0) {
            violations.push(format!("subcarrier {n} violates {:?} constraints: {p:?}", p.regime));
        }
    }
    let constraints_ok = violations.is_empty();
    let mut max_rate_error: f64 = 0.0;
    for (k, r) in rates.iter().enumerate() {
        let err = (r - cfg.rate_norm).abs() / cfg.rate_norm;
        max_rate_error = max_rate_error.max(err);
        if err > AUDIT_RATE_TOL {
            violations.push(format!("user {k} delivers {r} bits/use, target {}", cfg.rate_norm));
        }
    }
    AuditReport {
        total_power: state.total_power(),
        counts: state.category_counts(),
        rates_ok: max_rate_error <= AUDIT_RATE_TOL,
        constraints_ok,
        max_rate_error,
        violations,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub method: MethodId,
    pub state: AllocationState,
    pub audit: AuditReport,
}

/// Runs `method` end to end. CBS methods see only the center antenna.
pub fn run_method(method: MethodId, channel: &ChannelTensor, params: &SystemParams) -> Result<MethodRun, AllocError> {
    let center;
    let ch = if method.is_cbs() {
        center = channel.center_only();
        &center
    } else {
        channel
    };
    let mut state = worst_best_h_init(ch, AllocConfig::from_params(params))?;
    oma_assign(&mut state, ch);
    match method {
        MethodId::OmaCbs | MethodId::OmaDbs => {}
        MethodId::NomaCbs | MethodId::NomaDbsSrrh => pair_srrh(&mut state, ch, PowerRule::Ftpa),
        MethodId::NomaDbsSrrhLpo => pair_srrh(&mut state, ch, PowerRule::Lpo),
        MethodId::NomaDbsMutsicUc => pair_mutsic(&mut state, ch, MutualVariant::Unconstrained),
        MethodId::NomaDbsMutsicDpa => pair_mutsic(&mut state, ch, MutualVariant::Dpa),
        MethodId::NomaDbsMutsicOpad => pair_mutsic(&mut state, ch, MutualVariant::Opad),
        MethodId::NomaDbsMutsicSopad => pair_mutsic(&mut state, ch, MutualVariant::Sopad),
        MethodId::NomaDbsMutAndSingsic => pair_mut_and_single(&mut state, ch),
    }
    let audit = audit(&state, ch);
    Ok(MethodRun { method, state, audit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_trial;

    fn cfg(rate: f64, threshold: f64) -> AllocConfig {
        AllocConfig {
            rate_norm: rate,
            threshold,
            margin: 0.01,
            alpha: 0.5,
        }
    }

    fn tensor(k: usize, s: usize, r: usize, f: impl FnMut(usize, usize, usize) -> f64) -> ChannelTensor {
        ChannelTensor::from_fn(k, s, r, 1.0, f).unwrap()
    }

    #[test]
    fn method_names_round_trip() {
        for m in MethodId::ALL {
            assert_eq!(m.name().parse::<MethodId>().unwrap(), m);
            let json = toml::Value::try_from(m).unwrap();
            assert_eq!(json.as_str(), Some(m.name()));
        }
        assert!("NOMA_DBS_SRRH_OPA".parse::<MethodId>().is_err());
    }

    #[test]
    fn init_single_user_takes_global_best() {
        let ch = tensor(1, 4, 2, |_, n, r| (n * 2 + r) as f64 + 1.0);
        let st = worst_best_h_init(&ch, cfg(4.0, 0.0)).unwrap();
        assert_eq!(st.slots[3], Slot::Sole { user: 0, rrh: 1 });
    }

    #[test]
    fn init_weak_user_picks_first() {
        // user 0 is uniformly weaker; both prefer subcarrier 0
        let ch = tensor(2, 3, 1, |k, n, _| if k == 0 { 1.0 } else { 10.0 } * [5.0, 3.0, 1.0][n]);
        let st = worst_best_h_init(&ch, cfg(4.0, 0.0)).unwrap();
        assert_eq!(st.slots[0], Slot::Sole { user: 0, rrh: 0 });
        assert_eq!(st.slots[1], Slot::Sole { user: 1, rrh: 0 });
        for u in &st.users {
            let e = u.sole.entries()[0];
            let rate = (u.sole.waterline() * e.gain).log2();
            assert!((rate - 4.0).abs() < 1e-9 * 4.0);
        }
    }

    #[test]
    fn init_rejects_too_few_subcarriers() {
        let ch = tensor(3, 2, 1, |_, _, _| 1.0);
        assert_eq!(
            worst_best_h_init(&ch, cfg(1.0, 0.0)),
            Err(AllocError::TooFewSubcarriers {
                users: 3,
                subcarriers: 2
            })
        );
    }

    #[test]
    fn infinite_threshold_blocks_oma() {
        let ch = tensor(2, 6, 1, |k, n, _| 1.0 + (k + n) as f64);
        let mut st = worst_best_h_init(&ch, cfg(6.0, f64::INFINITY)).unwrap();
        let before = st.clone();
        oma_assign(&mut st, &ch);
        assert_eq!(st.slots, before.slots);
    }

    #[test]
    fn oma_assigns_in_decreasing_gain_order() {
        let params = SystemParams::default();
        let (_, ch) = generate_trial(&params, 3);
        let mut st = worst_best_h_init(&ch, AllocConfig::from_params(&params)).unwrap();
        let mut order: Vec<Vec<f64>> = vec![Vec::new(); st.users.len()];
        let mut pool = vec![true; st.users.len()];
        while let Some(k) = st.neediest(&pool) {
            match oma_step(&mut st, &ch, k) {
                Some(e) => order[k].push(e.gain),
                None => pool[k] = false,
            }
        }
        assert!(order.iter().map(Vec::len).sum::<usize>() > 0);
        for seq in order {
            assert!(seq.windows(2).all(|w| w[0] > w[1]), "{seq:?}");
        }
    }

    #[test]
    fn single_rrh_has_no_mutual_candidates() {
        let params = SystemParams {
            num_rrh: 1,
            ..Default::default()
        };
        let (_, ch) = generate_trial(&params, 0);
        let oma = run_method(MethodId::OmaDbs, &ch, &params).unwrap();
        let mutual = run_method(MethodId::NomaDbsMutsicDpa, &ch, &params).unwrap();
        assert_eq!(oma.state.slots, mutual.state.slots);
    }

    #[test]
    fn dbs_on_one_rrh_equals_cbs() {
        let params = SystemParams {
            num_rrh: 1,
            ..Default::default()
        };
        let (_, ch) = generate_trial(&params, 5);
        let a = run_method(MethodId::OmaDbs, &ch, &params).unwrap();
        let b = run_method(MethodId::OmaCbs, &ch, &params).unwrap();
        assert_eq!(a.state, b.state);
        let a = run_method(MethodId::NomaDbsSrrh, &ch, &params).unwrap();
        let b = run_method(MethodId::NomaCbs, &ch, &params).unwrap();
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn every_method_passes_audit_on_reference_trial() {
        let params = SystemParams::default();
        let (_, ch) = generate_trial(&params, 11);
        for m in MethodId::ALL {
            let run = run_method(m, &ch, &params).unwrap();
            assert!(run.audit.ok(), "{m}: {:?}", run.audit.violations);
            let c = run.audit.counts;
            assert_eq!(
                c.non_mux + c.mutual_sic + c.single_sic_srrh + c.single_sic_drrh + c.unallocated,
                params.num_subcarriers
            );
        }
    }

    #[test]
    fn pairing_never_raises_total_power() {
        let params = SystemParams::default();
        let (_, ch) = generate_trial(&params, 2);
        let oma = run_method(MethodId::OmaDbs, &ch, &params).unwrap().audit.total_power;
        for m in [
            MethodId::NomaDbsSrrh,
            MethodId::NomaDbsSrrhLpo,
            MethodId::NomaDbsMutsicDpa,
            MethodId::NomaDbsMutsicSopad,
            MethodId::NomaDbsMutAndSingsic,
        ] {
            let p = run_method(m, &ch, &params).unwrap().audit.total_power;
            assert!(p <= oma, "{m}: {p} > {oma}");
        }
    }

    #[test]
    fn sopad_solves_once_per_pairing_step() {
        let params = SystemParams {
            rate_req: 13e6,
            ..Default::default()
        };
        let (_, ch) = generate_trial(&params, 4);
        let run = run_method(MethodId::NomaDbsMutsicSopad, &ch, &params).unwrap();
        let s = run.state.stats;
        assert!(s.root_solves <= s.opad_calls);
        assert!(s.opad_calls <= s.iterations);
    }
}
