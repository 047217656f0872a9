//! Monte Carlo generation of time-tagged detection streams.
//!
//! Every detection is one of five independent Poisson processes: pairs with
//! both photons detected, photons seen only by Alice, photons seen only by
//! Bob, and the dark counts on either side. Thinning a Poisson pair process
//! by independent per-arm losses yields exactly these processes, so no
//! undetected photon is ever generated.
//!
//! Events are processed in order of their emission-referenced time
//! `u = t_detection − arm_delay`. Setting intervals are anchored to `u`, so
//! both photons of a pair see the same interval index and phase.

mod config;
mod lhv;
mod tags;

pub use config::{
    calibrate_bob_dark_rate, db_to_transmission, AnalyzerConfig, ChannelConfig, Channels,
    HiddenVariableMode, Randomness, RateBudget, ScenarioConfig, SourceConfig, PRESET_NAMES,
};
pub use lhv::{LhvComponent, LhvStrategy};
pub use tags::{
    is_sorted, read_csv, read_meta, read_tags, write_csv, write_csv_to, write_meta, write_tags,
    write_tags_to, Channel, TimeTag, MAX_TIME_PS, RECORD_BYTES,
};

use rand::{Rng, RngCore};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{outcome_probabilities, singlet, Outcome};
use crate::randomness::{seeded_rng, SettingSampler, SettingStream};
use crate::spacetime::{EventLabel, LoopholeVerdict};

const PS_PER_S: f64 = 1e12;

/// Independent seed for a named part of a run.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    seeded_rng(seed, 0x5eed_0000 + tag).next_u64()
}

/// Homogeneous Poisson process on `[0, end)`, yielding increasing times.
#[derive(Clone, Debug)]
pub struct PoissonProcess {
    rng: ChaCha12Rng,
    gap: Option<Exp<f64>>,
    t: f64,
    end: f64,
}

impl PoissonProcess {
    pub fn new(rate: f64, end: f64, rng: ChaCha12Rng) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::Input(format!(
                "Poisson rate must be >= 0, got {rate}"
            )));
        }
        let gap = if rate > 0.0 {
            Some(Exp::new(rate).map_err(|e| Error::Input(e.to_string()))?)
        } else {
            None
        };
        Ok(PoissonProcess {
            rng,
            gap,
            t: 0.0,
            end,
        })
    }
}

impl Iterator for PoissonProcess {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let gap = self.gap.as_ref()?;
        self.t += gap.sample(&mut self.rng);
        if self.t < self.end {
            Some(self.t)
        } else {
            self.gap = None;
            None
        }
    }
}

pub fn emit_pairs(rate: f64, duration: f64, seed: u64) -> Result<Vec<f64>> {
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::Input(format!(
            "duration must be >= 0, got {duration}"
        )));
    }
    Ok(PoissonProcess::new(rate, duration, seeded_rng(seed, 2))?.collect())
}

/// Independent loss at `attenuation_db`, then a fixed `delay`.
pub fn propagate(times: &[f64], attenuation_db: f64, delay: f64, seed: u64) -> Result<Vec<f64>> {
    if !(attenuation_db >= 0.0) {
        return Err(Error::Input(format!(
            "attenuation must be >= 0 dB, got {attenuation_db}"
        )));
    }
    let p = db_to_transmission(attenuation_db);
    let mut rng = seeded_rng(seed, 3);
    Ok(times
        .iter()
        .filter(|_| rng.random_bool(p))
        .map(|t| t + delay)
        .collect())
}

/// Post-selection of detections close to a setting change.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gating {
    pub rise_time: f64,
    pub discard_window: f64,
}

impl Gating {
    pub fn from_analyzer(a: &AnalyzerConfig) -> Self {
        Gating {
            rise_time: a.rise_time,
            discard_window: a.discard_window,
        }
    }

    /// Whether a detection at `phase` seconds into its interval is kept.
    pub fn accepts(&self, phase: f64) -> bool {
        phase >= self.discard_window
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActiveSetting {
    pub bit: u8,
    pub valid: bool,
}

/// Setting in force at `t` (seconds from the stream start).
pub fn active_setting(stream: &SettingStream, gating: &Gating, t: f64) -> Result<ActiveSetting> {
    let period = 1.0 / stream.sample_rate;
    let pos = t / period;
    if !(pos >= 0.0) || pos >= stream.len() as f64 {
        return Err(Error::Input(format!(
            "time {t} s lies outside the setting stream"
        )));
    }
    let index = pos.floor() as usize;
    let phase = t - index as f64 * period;
    Ok(ActiveSetting {
        bit: stream.bits[index],
        valid: gating.accepts(phase),
    })
}

/// Joint outcome sampler for one detected pair.
#[derive(Clone, Debug)]
pub enum PairModel {
    /// Singlet outcome tables per (a_bit, b_bit), mixed with white noise at
    /// the given visibility.
    Quantum {
        singlet: [[[[f64; 2]; 2]; 2]; 2],
    },
    Local(LhvStrategy),
    SettingAware,
    /// Bob's outcome is conditioned on Alice's when `reaches` holds.
    Signaling {
        reaches: bool,
    },
}

impl PairModel {
    pub fn quantum(analyzer: &AnalyzerConfig) -> Self {
        let psi = singlet();
        let mut table = [[[[0.0; 2]; 2]; 2]; 2];
        for a in 0..2u8 {
            for b in 0..2u8 {
                table[a as usize][b as usize] =
                    outcome_probabilities(&psi, analyzer.alice_setting(a), analyzer.bob_setting(b))
                        .0;
            }
        }
        PairModel::Quantum { singlet: table }
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        visibility: f64,
        a_bit: u8,
        b_bit: u8,
    ) -> (Outcome, Outcome) {
        // Sign of the ideal correlation demanded by the CHSH combination.
        let target_sign = if a_bit == 1 && b_bit == 1 { -1 } else { 1 };
        let random_outcome = |rng: &mut R| {
            if rng.random::<bool>() {
                Outcome::Plus
            } else {
                Outcome::Minus
            }
        };
        let correlated = |a: Outcome| {
            if target_sign > 0 {
                a
            } else {
                Outcome::from_index(1 - a.index())
            }
        };
        match self {
            PairModel::Quantum { singlet } => {
                let p = &singlet[a_bit as usize][b_bit as usize];
                let noise = (1.0 - visibility) / 4.0;
                let x = rng.random::<f64>();
                let mut acc = 0.0;
                for (i, row) in p.iter().enumerate() {
                    for (j, &ps) in row.iter().enumerate() {
                        acc += noise + visibility * ps;
                        if x < acc {
                            return (Outcome::from_index(i), Outcome::from_index(j));
                        }
                    }
                }
                (Outcome::Minus, Outcome::Minus)
            }
            PairModel::Local(strategy) => strategy.sample(rng, a_bit, b_bit),
            PairModel::SettingAware => {
                let a = random_outcome(rng);
                (a, correlated(a))
            }
            PairModel::Signaling { reaches } => {
                if *reaches {
                    let a = random_outcome(rng);
                    (a, correlated(a))
                } else {
                    LhvStrategy::default().sample(rng, a_bit, b_bit)
                }
            }
        }
    }
}

/// Stand-alone sampling of one pair's outcomes.
pub fn measure_pair(
    model: &PairModel,
    visibility: f64,
    a_bit: u8,
    b_bit: u8,
    seed: u64,
) -> (Outcome, Outcome) {
    let mut rng = seeded_rng(seed, 4);
    model.sample(&mut rng, visibility, a_bit, b_bit)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SideStats {
    /// Detections before gating, dark counts included.
    pub detected: u64,
    pub dark: u64,
    pub discarded: u64,
    pub recorded: u64,
}

impl SideStats {
    pub fn discard_fraction(&self) -> f64 {
        if self.detected == 0 {
            0.0
        } else {
            self.discarded as f64 / self.detected as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub alice: SideStats,
    pub bob: SideStats,
    /// Pairs with both photons detected.
    pub pairs_detected: u64,
    /// Pairs with both photons recorded after gating.
    pub pairs_recorded: u64,
    pub state_visibility: f64,
    pub dark_rate_alice: f64,
    pub dark_rate_bob: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub alice: Vec<TimeTag>,
    pub bob: Vec<TimeTag>,
    pub stats: RunStats,
    pub verdict: LoopholeVerdict,
    pub budget: RateBudget,
}

/// Per-side detector chain: settings, gating and timestamping.
struct Arm {
    settings: SettingSampler,
    period: f64,
    gating: Gating,
    delay_ps: i64,
    jitter: Option<Normal<f64>>,
    tags: Vec<TimeTag>,
    stats: SideStats,
}

impl Arm {
    fn new(
        cfg: &ScenarioConfig,
        source: &crate::randomness::SettingSource,
        channel: &ChannelConfig,
        delay: f64,
        seed: u64,
        expected: f64,
    ) -> Result<Self> {
        let jitter = if channel.jitter > 0.0 {
            Some(
                Normal::new(0.0, channel.jitter * PS_PER_S)
                    .map_err(|e| Error::Config(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Arm {
            settings: SettingSampler::new(source, seed)?,
            period: source.period(),
            gating: Gating::from_analyzer(&cfg.analyzer),
            delay_ps: (delay * PS_PER_S).round() as i64,
            jitter,
            tags: Vec::with_capacity((expected * 1.05) as usize + 64),
            stats: SideStats::default(),
        })
    }

    /// Setting bit and gate decision for a detection at reference time `u`.
    fn setting(&mut self, u: f64) -> Result<ActiveSetting> {
        let pos = (u / self.period).max(0.0);
        let index = pos.floor();
        let phase = (pos - index) * self.period;
        Ok(ActiveSetting {
            bit: self.settings.bit(index as u64)?,
            valid: self.gating.accepts(phase),
        })
    }

    fn record<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        u: f64,
        active: ActiveSetting,
        outcome: Outcome,
    ) {
        self.stats.detected += 1;
        if !active.valid {
            self.stats.discarded += 1;
            return;
        }
        let jitter = self.jitter.map_or(0.0, |n| n.sample(rng)).round() as i64;
        let t = ((u * PS_PER_S).round() as i64 + self.delay_ps + jitter).max(0) as u64;
        self.tags
            .push(TimeTag::new(t, Channel::from_outcome(outcome), active.bit));
        self.stats.recorded += 1;
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Source {
    Pair,
    AliceOnly,
    BobOnly,
    DarkAlice,
    DarkBob,
}

const SOURCES: [Source; 5] = [
    Source::Pair,
    Source::AliceOnly,
    Source::BobOnly,
    Source::DarkAlice,
    Source::DarkBob,
];

fn check_causality(cfg: &ScenarioConfig, verdict: &LoopholeVerdict) -> Result<()> {
    match cfg.mode {
        HiddenVariableMode::SettingAwareSource if verdict.freedom_closed => Err(Error::CausalityViolation(
            "a setting-aware source needs the choices in the past light cone of the emission, \
             but this geometry closes the freedom-of-choice loophole"
                .into(),
        )),
        HiddenVariableMode::SignalingAtSpeed { .. } if verdict.locality_closed => {
            Err(Error::CausalityViolation(
                "signaling between the stations is excluded: this geometry closes the locality loophole"
                    .into(),
            ))
        }
        _ => Ok(()),
    }
}

/// Whether a signal at `speed` leaving Alice's choice reaches Bob's detector
/// in time.
fn signal_reaches(cfg: &ScenarioConfig, speed: f64) -> Result<bool> {
    let events = cfg.events()?;
    let find = |label: EventLabel| {
        events
            .iter()
            .find(|e| e.label == label)
            .expect("scenario events are complete")
    };
    let choice = find(EventLabel::ChoiceA);
    let bob = find(EventLabel::MeasurementB);
    let available = bob.t - (choice.t + choice.window + choice.duration);
    Ok(available > 0.0 && (bob.x - choice.x).abs() <= speed * available)
}

pub fn build_pair_model(cfg: &ScenarioConfig) -> Result<PairModel> {
    Ok(match &cfg.mode {
        HiddenVariableMode::Quantum => PairModel::quantum(&cfg.analyzer),
        HiddenVariableMode::Local { strategy } => PairModel::Local(strategy.clone()),
        HiddenVariableMode::SettingAwareSource => PairModel::SettingAware,
        HiddenVariableMode::SignalingAtSpeed { speed } => PairModel::Signaling {
            reaches: signal_reaches(cfg, *speed)?,
        },
    })
}

/// Simulates one run; streams are sorted by time.
pub fn run_experiment(cfg: &ScenarioConfig, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    let verdict = cfg.verdicts()?;
    check_causality(cfg, &verdict)?;
    let model = build_pair_model(cfg)?;

    let (dark_a, dark_b) = cfg.dark_rates()?;
    let budget = cfg.rate_budget_with(dark_a, dark_b);
    let v0 = cfg.state_visibility()?;
    let duration = cfg.run_duration;

    let r = cfg.source.pair_rate;
    let ta = cfg.channels.alice.transmission();
    let tb = cfg.channels.bob.transmission();
    let rates = [
        r * ta * tb,
        r * ta * (1.0 - tb),
        r * (1.0 - ta) * tb,
        2.0 * dark_a,
        2.0 * dark_b,
    ];
    let mut processes = rates
        .iter()
        .enumerate()
        .map(|(i, &rate)| {
            PoissonProcess::new(rate, duration, seeded_rng(derive_seed(seed, i as u64), 5))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut heads: Vec<Option<f64>> = processes.iter_mut().map(Iterator::next).collect();

    let mut alice = Arm::new(
        cfg,
        &cfg.randomness.alice,
        &cfg.channels.alice,
        cfg.geometry.alice_delay,
        derive_seed(seed, 10),
        (rates[0] + rates[1] + rates[3]) * duration,
    )?;
    let mut bob = Arm::new(
        cfg,
        &cfg.randomness.bob,
        &cfg.channels.bob,
        cfg.geometry.bob_delay,
        derive_seed(seed, 11),
        (rates[0] + rates[2] + rates[4]) * duration,
    )?;
    let mut outcome_rng = seeded_rng(derive_seed(seed, 12), 6);
    let mut timing_rng = seeded_rng(derive_seed(seed, 13), 7);

    let mut stats = RunStats {
        state_visibility: v0,
        dark_rate_alice: dark_a,
        dark_rate_bob: dark_b,
        ..RunStats::default()
    };
    let drifting = cfg.analyzer.fiber_visibility_end.is_some();

    while let Some((k, u)) = heads
        .iter()
        .enumerate()
        .filter_map(|(k, h)| h.map(|u| (k, u)))
        .min_by(|x, y| x.1.total_cmp(&y.1))
    {
        heads[k] = processes[k].next();
        let uniform = |rng: &mut ChaCha12Rng| {
            if rng.random::<bool>() {
                Outcome::Plus
            } else {
                Outcome::Minus
            }
        };
        match SOURCES[k] {
            Source::Pair => {
                let sa = alice.setting(u)?;
                let sb = bob.setting(u)?;
                let v = if drifting {
                    v0 * cfg.drift_factor(u / duration)
                } else {
                    v0
                };
                let (oa, ob) = model.sample(&mut outcome_rng, v, sa.bit, sb.bit);
                stats.pairs_detected += 1;
                if sa.valid && sb.valid {
                    stats.pairs_recorded += 1;
                }
                alice.record(&mut timing_rng, u, sa, oa);
                bob.record(&mut timing_rng, u, sb, ob);
            }
            Source::AliceOnly | Source::DarkAlice => {
                let s = alice.setting(u)?;
                let o = uniform(&mut outcome_rng);
                if SOURCES[k] == Source::DarkAlice {
                    alice.stats.dark += 1;
                }
                alice.record(&mut timing_rng, u, s, o);
            }
            Source::BobOnly | Source::DarkBob => {
                let s = bob.setting(u)?;
                let o = uniform(&mut outcome_rng);
                if SOURCES[k] == Source::DarkBob {
                    bob.stats.dark += 1;
                }
                bob.record(&mut timing_rng, u, s, o);
            }
        }
    }

    // Jitter only swaps neighbours closer than a few ns; runs stay long.
    alice.tags.sort();
    bob.tags.sort();
    stats.alice = alice.stats;
    stats.bob = bob.stats;
    Ok(RunOutput {
        alice: alice.tags,
        bob: bob.tags,
        stats,
        verdict,
        budget,
    })
}
