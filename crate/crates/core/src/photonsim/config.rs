use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::erf::erfc;

use super::lhv::LhvStrategy;
use crate::error::{Error, Result};
use crate::quantum::PolarizerSetting;
use crate::randomness::{SettingMode, SettingSource};
use crate::spacetime::{build_scenario_events, Geometry, LoopholeVerdict, SpacetimeEvent};

/// Presets shipped with the crate, in scenario order.
pub const PRESET_NAMES: [&str; 4] = ["a", "b", "c", "d"];

const PRESET_A: &str = include_str!("../../scenarios/a.toml");
const PRESET_B: &str = include_str!("../../scenarios/b.toml");
const PRESET_C: &str = include_str!("../../scenarios/c.toml");
const PRESET_D: &str = include_str!("../../scenarios/d.toml");

pub fn db_to_transmission(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    /// Pairs per second that a detector pair next to the source would register.
    pub pair_rate: f64,
    /// Pair visibility in the H/V and ±45° bases.
    pub visibility: [f64; 2],
    /// Target visibility of the recorded coincidences, accidentals included.
    /// When set, the state visibility is V_target / predicted SNR.
    pub effective_visibility: Option<f64>,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            pair_rate: 2.5e6,
            visibility: [0.99, 0.98],
            effective_visibility: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub attenuation_db: f64,
    /// Per detector, Hz.
    pub dark_rate: f64,
    /// Gaussian timing jitter (standard deviation) of a detection, s.
    pub jitter: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            attenuation_db: 0.0,
            dark_rate: 0.0,
            jitter: 100e-12,
        }
    }
}

impl ChannelConfig {
    pub fn transmission(&self) -> f64 {
        db_to_transmission(self.attenuation_db)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Channels {
    pub alice: ChannelConfig,
    pub bob: ChannelConfig,
    /// When set, Bob's dark rate is solved so the predicted SNR matches.
    pub snr_target: Option<f64>,
}

impl Default for Channels {
    fn default() -> Self {
        Channels {
            alice: ChannelConfig {
                attenuation_db: 20.0,
                dark_rate: 500.0,
                jitter: 100e-12,
            },
            bob: ChannelConfig {
                attenuation_db: 35.0,
                dark_rate: 1.0e4,
                jitter: 100e-12,
            },
            snr_target: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzerConfig {
    pub visibility: f64,
    pub fiber_visibility: f64,
    /// Fiber visibility reached at the end of the run; linear ramp when set.
    pub fiber_visibility_end: Option<f64>,
    pub rise_time: f64,
    /// Detections this long after a setting change are discarded, s.
    pub discard_window: f64,
    /// Total width of the coincidence window, s.
    pub coincidence_window: f64,
    /// Analyzer angle (degrees) selected by setting bit 0 and 1.
    pub alice_angles: [f64; 2],
    pub bob_angles: [f64; 2],
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        AnalyzerConfig {
            visibility: 0.99,
            fiber_visibility: 0.97,
            fiber_visibility_end: None,
            rise_time: 15e-9,
            discard_window: 35e-9,
            coincidence_window: 1.5e-9,
            alice_angles: [112.5, 67.5],
            bob_angles: [0.0, 45.0],
        }
    }
}

impl AnalyzerConfig {
    pub fn alice_setting(&self, bit: u8) -> PolarizerSetting {
        PolarizerSetting::degrees(self.alice_angles[bit as usize & 1])
    }

    pub fn bob_setting(&self, bit: u8) -> PolarizerSetting {
        PolarizerSetting::degrees(self.bob_angles[bit as usize & 1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Randomness {
    pub alice: SettingSource,
    pub bob: SettingSource,
}

impl Default for Randomness {
    fn default() -> Self {
        Randomness {
            alice: SettingSource::quantum(30e6, 1e6),
            bob: SettingSource::quantum(30e6, 1e6),
        }
    }
}

/// How outcomes of a detected pair are produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HiddenVariableMode {
    #[default]
    Quantum,
    /// A local model: λ from a fixed distribution, factorized responses.
    Local { strategy: LhvStrategy },
    /// The source learns both settings before emission.
    SettingAwareSource,
    /// Alice's setting reaches Bob's detector at `speed` (m/s).
    SignalingAtSpeed { speed: f64 },
}

impl HiddenVariableMode {
    pub fn name(&self) -> &'static str {
        match self {
            HiddenVariableMode::Quantum => "quantum",
            HiddenVariableMode::Local { .. } => "local",
            HiddenVariableMode::SettingAwareSource => "setting_aware_source",
            HiddenVariableMode::SignalingAtSpeed { .. } => "signaling_at_speed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub description: String,
    /// Seconds of pair emission.
    pub run_duration: f64,
    pub geometry: Geometry,
    pub source: SourceConfig,
    pub channels: Channels,
    pub analyzer: AnalyzerConfig,
    pub randomness: Randomness,
    pub mode: HiddenVariableMode,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "custom".into(),
            description: String::new(),
            run_duration: 600.0,
            geometry: Geometry::default(),
            source: SourceConfig::default(),
            channels: Channels::default(),
            analyzer: AnalyzerConfig::default(),
            randomness: Randomness::default(),
            mode: HiddenVariableMode::Quantum,
        }
    }
}

/// Rates and gating factors the simulation is expected to produce.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateBudget {
    /// Pairs with both photons detected, before gating, Hz.
    pub pair_detections: f64,
    /// Fraction of detected pairs surviving both gates.
    pub pair_gate_survival: f64,
    /// True coincidences inside the window, Hz.
    pub true_coincidences: f64,
    /// Recorded singles after gating, Hz.
    pub singles_alice: f64,
    pub singles_bob: f64,
    pub accidentals: f64,
    pub snr: f64,
}

impl RateBudget {
    pub fn coincidences(&self) -> f64 {
        self.true_coincidences + self.accidentals
    }
}

impl ScenarioConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "a" => PRESET_A,
            "b" => PRESET_B,
            "c" => PRESET_C,
            "d" => PRESET_D,
            other => {
                return Err(Error::Config(format!(
                    "unknown scenario '{other}', expected one of a, b, c, d"
                )))
            }
        };
        Self::from_toml(text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn config_hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.run_duration >= 0.0 && self.run_duration.is_finite()) {
            return bad(format!(
                "run_duration must be >= 0, got {}",
                self.run_duration
            ));
        }
        self.geometry.validate()?;
        if !(self.source.pair_rate >= 0.0 && self.source.pair_rate.is_finite()) {
            return bad(format!(
                "source.pair_rate must be >= 0, got {}",
                self.source.pair_rate
            ));
        }
        let unit = |name: &str, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("source.visibility[0]", self.source.visibility[0])?;
        unit("source.visibility[1]", self.source.visibility[1])?;
        if let Some(v) = self.source.effective_visibility {
            unit("source.effective_visibility", v)?;
        }
        unit("analyzer.visibility", self.analyzer.visibility)?;
        unit("analyzer.fiber_visibility", self.analyzer.fiber_visibility)?;
        if let Some(v) = self.analyzer.fiber_visibility_end {
            unit("analyzer.fiber_visibility_end", v)?;
        }
        for (side, ch) in [("alice", &self.channels.alice), ("bob", &self.channels.bob)] {
            if !(ch.attenuation_db >= 0.0 && ch.attenuation_db.is_finite()) {
                return bad(format!("channels.{side}.attenuation_db must be >= 0"));
            }
            if !(ch.dark_rate >= 0.0 && ch.dark_rate.is_finite()) {
                return bad(format!("channels.{side}.dark_rate must be >= 0"));
            }
            if !(ch.jitter >= 0.0 && ch.jitter.is_finite()) {
                return bad(format!("channels.{side}.jitter must be >= 0"));
            }
        }
        if let Some(snr) = self.channels.snr_target {
            if !(snr > 0.0 && snr <= 1.0) {
                return bad(format!("channels.snr_target must lie in (0, 1], got {snr}"));
            }
        }
        let a = &self.analyzer;
        if !(a.coincidence_window > 0.0 && a.coincidence_window.is_finite()) {
            return bad(format!(
                "analyzer.coincidence_window must be > 0, got {}",
                a.coincidence_window
            ));
        }
        if !(a.rise_time >= 0.0 && a.discard_window >= a.rise_time) {
            return bad(format!(
                "analyzer.discard_window ({}) must be >= rise_time ({}) >= 0",
                a.discard_window, a.rise_time
            ));
        }
        for source in [&self.randomness.alice, &self.randomness.bob] {
            source.validate()?;
            if a.discard_window >= source.period() {
                return bad(
                    "analyzer.discard_window must be shorter than a setting interval".into(),
                );
            }
        }
        if let HiddenVariableMode::Local { strategy } = &self.mode {
            strategy.validate()?;
        }
        if let HiddenVariableMode::SignalingAtSpeed { speed } = self.mode {
            if !(speed > 0.0) {
                return bad(format!("signaling speed must be > 0, got {speed}"));
            }
        }
        Ok(())
    }

    pub fn settings_stochastic(&self) -> bool {
        self.randomness.alice.is_stochastic() && self.randomness.bob.is_stochastic()
    }

    pub fn setting_interval(&self) -> f64 {
        self.randomness
            .alice
            .period()
            .max(self.randomness.bob.period())
    }

    pub fn events(&self) -> Result<Vec<SpacetimeEvent>> {
        build_scenario_events(&self.geometry, self.setting_interval())
    }

    pub fn verdicts(&self) -> Result<LoopholeVerdict> {
        self.geometry
            .causality()
            .verdicts(&self.events()?, self.settings_stochastic())
    }

    /// Product of source (basis mean), analyzer and fiber visibilities.
    pub fn optical_visibility(&self) -> f64 {
        let source = (self.source.visibility[0] + self.source.visibility[1]) / 2.0;
        source * self.analyzer.visibility * self.analyzer.fiber_visibility
    }

    fn gate_survival(&self, source: &SettingSource) -> f64 {
        1.0 - self.analyzer.discard_window * source.sample_rate
    }

    /// Probability that both photons of a detected pair pass their gates.
    ///
    /// Both setting grids are referenced to the emission time, so when the
    /// intervals are equal a pair sits at the same phase on both sides.
    pub fn pair_gate_survival(&self) -> f64 {
        let (ga, gb) = (
            self.gate_survival(&self.randomness.alice),
            self.gate_survival(&self.randomness.bob),
        );
        if self.randomness.alice.sample_rate == self.randomness.bob.sample_rate {
            ga.min(gb)
        } else {
            ga * gb
        }
    }

    /// Fraction of true pairs whose jitter-smeared time difference stays
    /// inside the window.
    fn jitter_acceptance(&self) -> f64 {
        let sigma = self.channels.alice.jitter.hypot(self.channels.bob.jitter);
        if sigma == 0.0 {
            return 1.0;
        }
        let half = self.analyzer.coincidence_window / 2.0;
        1.0 - erfc(half / (sigma * std::f64::consts::SQRT_2))
    }

    /// Expected rates for the given per-detector dark rates.
    pub fn rate_budget_with(&self, dark_alice: f64, dark_bob: f64) -> RateBudget {
        let r = self.source.pair_rate;
        let ta = self.channels.alice.transmission();
        let tb = self.channels.bob.transmission();
        let pair_detections = r * ta * tb;
        let pair_gate_survival = self.pair_gate_survival();
        let true_coincidences = pair_detections * pair_gate_survival * self.jitter_acceptance();
        let singles_alice =
            (r * ta + 2.0 * dark_alice) * self.gate_survival(&self.randomness.alice);
        let singles_bob = (r * tb + 2.0 * dark_bob) * self.gate_survival(&self.randomness.bob);
        let accidentals = singles_alice * singles_bob * self.analyzer.coincidence_window;
        let total = true_coincidences + accidentals;
        RateBudget {
            pair_detections,
            pair_gate_survival,
            true_coincidences,
            singles_alice,
            singles_bob,
            accidentals,
            snr: if total > 0.0 {
                true_coincidences / total
            } else {
                1.0
            },
        }
    }

    pub fn rate_budget(&self) -> Result<RateBudget> {
        let (da, db) = self.dark_rates()?;
        Ok(self.rate_budget_with(da, db))
    }

    /// Per-detector dark rates, with Bob's solved from `snr_target` if set.
    pub fn dark_rates(&self) -> Result<(f64, f64)> {
        let da = self.channels.alice.dark_rate;
        match self.channels.snr_target {
            Some(snr) => Ok((da, calibrate_bob_dark_rate(self, snr)?)),
            None => Ok((da, self.channels.bob.dark_rate)),
        }
    }

    /// Visibility of the simulated two-photon state at the start of the run.
    pub fn state_visibility(&self) -> Result<f64> {
        match self.source.effective_visibility {
            None => Ok(self.optical_visibility()),
            Some(target) => {
                let snr = self.rate_budget()?.snr;
                let v = target / snr;
                if v > 1.0 {
                    return Err(Error::Config(format!(
                        "effective visibility {target} needs state visibility {v:.4} > 1 at predicted SNR {snr:.4}"
                    )));
                }
                Ok(v)
            }
        }
    }

    /// Scale factor applied to the state visibility at fraction `progress`
    /// of the run.
    pub fn drift_factor(&self, progress: f64) -> f64 {
        match self.analyzer.fiber_visibility_end {
            Some(end) if self.analyzer.fiber_visibility > 0.0 => {
                let start = self.analyzer.fiber_visibility;
                (start + (end - start) * progress.clamp(0.0, 1.0)) / start
            }
            _ => 1.0,
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self.randomness.alice.mode, SettingMode::Periodic { .. })
            || matches!(self.randomness.bob.mode, SettingMode::Periodic { .. })
    }
}

/// Bob's per-detector dark rate giving the requested predicted SNR.
pub fn calibrate_bob_dark_rate(cfg: &ScenarioConfig, snr: f64) -> Result<f64> {
    if !(snr > 0.0 && snr < 1.0) {
        return Err(Error::Config(format!(
            "SNR target must lie in (0, 1), got {snr}"
        )));
    }
    let base = cfg.rate_budget_with(cfg.channels.alice.dark_rate, 0.0);
    let wanted_accidentals = base.true_coincidences * (1.0 / snr - 1.0);
    let window = cfg.analyzer.coincidence_window;
    if base.singles_alice <= 0.0 {
        return Err(Error::Config(
            "SNR calibration needs non-zero singles at Alice".into(),
        ));
    }
    let singles_bob = wanted_accidentals / (base.singles_alice * window);
    let survival = cfg.gate_survival(&cfg.randomness.bob);
    let photons = cfg.source.pair_rate * cfg.channels.bob.transmission();
    let dark = (singles_bob / survival - photons) / 2.0;
    if dark < 0.0 {
        return Err(Error::Config(format!(
            "SNR target {snr} is unreachable: photon singles alone already give a lower SNR"
        )));
    }
    Ok(dark)
}
