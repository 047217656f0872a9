//! Setting-choice sources: the flip-flop QRNG, function generators and fixed
//! sequences, plus the statistics used to validate their output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this toggle/sample ratio successive samples are visibly correlated.
pub const MIN_TOGGLE_RATIO: f64 = 10.0;

/// Deterministic RNG for one named sub-stream of a seeded run.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SettingMode {
    /// Flip-flop driven by a symmetric two-state Markov process.
    QuantumToggle {
        toggle_rate: f64,
    },
    /// Square wave; the bit changes `frequency` times per second.
    /// `phase` is measured in half-periods.
    Periodic {
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    Predetermined {
        bits: Vec<u8>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingSource {
    #[serde(flatten)]
    pub mode: SettingMode,
    pub sample_rate: f64,
}

impl SettingSource {
    pub fn quantum(toggle_rate: f64, sample_rate: f64) -> Self {
        SettingSource {
            mode: SettingMode::QuantumToggle { toggle_rate },
            sample_rate,
        }
    }

    pub fn periodic(frequency: f64, phase: f64, sample_rate: f64) -> Self {
        SettingSource {
            mode: SettingMode::Periodic { frequency, phase },
            sample_rate,
        }
    }

    pub fn predetermined(bits: Vec<u8>, sample_rate: f64) -> Self {
        SettingSource {
            mode: SettingMode::Predetermined { bits },
            sample_rate,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self.mode, SettingMode::QuantumToggle { .. })
    }

    pub fn period(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::Config(format!(
                "sample_rate must be positive, got {}",
                self.sample_rate
            )));
        }
        match &self.mode {
            SettingMode::QuantumToggle { toggle_rate } => {
                if !(*toggle_rate > 0.0 && toggle_rate.is_finite()) {
                    return Err(Error::Config(format!(
                        "toggle_rate must be positive, got {toggle_rate}"
                    )));
                }
                if toggle_rate / self.sample_rate < MIN_TOGGLE_RATIO {
                    log::warn!(
                        "toggle rate {toggle_rate} Hz is less than {MIN_TOGGLE_RATIO}x the sample rate {} Hz; \
                         successive settings will be correlated",
                        self.sample_rate
                    );
                }
            }
            SettingMode::Periodic { frequency, phase } => {
                if !(*frequency > 0.0 && frequency.is_finite()) || !phase.is_finite() {
                    return Err(Error::Config(format!(
                        "periodic source needs a positive frequency and finite phase, got {frequency}, {phase}"
                    )));
                }
            }
            SettingMode::Predetermined { bits } => {
                if let Some(b) = bits.iter().find(|&&b| b > 1) {
                    return Err(Error::Config(format!(
                        "predetermined bits must be 0 or 1, found {b}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Flip-flop state history: `initial` at t = 0, toggling at each entry of
/// `changes` (strictly increasing, within the requested duration).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub initial: u8,
    pub changes: Vec<f64>,
    pub duration: f64,
}

impl Trajectory {
    pub fn state_at(&self, t: f64) -> u8 {
        let flips = self.changes.partition_point(|&c| c <= t);
        self.initial ^ (flips & 1) as u8
    }

    /// States at `start + i·step` for i in 0..n.
    pub fn sample_uniform(&self, start: f64, step: f64, n: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(n);
        let mut next = self.changes.partition_point(|&c| c <= start);
        let mut state = self.initial ^ (next & 1) as u8;
        for i in 0..n {
            let t = start + i as f64 * step;
            while next < self.changes.len() && self.changes[next] <= t {
                state ^= 1;
                next += 1;
            }
            out.push(state);
        }
        out
    }

    /// Total time spent in state 1.
    pub fn time_in_one(&self) -> f64 {
        let mut total = 0.0;
        let mut state = self.initial;
        let mut last = 0.0;
        for &c in &self.changes {
            if state == 1 {
                total += c - last;
            }
            state ^= 1;
            last = c;
        }
        if state == 1 {
            total += self.duration - last;
        }
        total
    }
}

/// Symmetric two-state continuous-time Markov chain with exit rate
/// `toggle_rate` from either state, started from its stationary distribution.
pub fn toggle_process(toggle_rate: f64, duration: f64, seed: u64) -> Result<Trajectory> {
    if !(toggle_rate > 0.0 && toggle_rate.is_finite()) {
        return Err(Error::Input(format!(
            "toggle rate must be positive, got {toggle_rate}"
        )));
    }
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::Input(format!(
            "duration must be >= 0, got {duration}"
        )));
    }
    let mut rng = seeded_rng(seed, 0);
    let initial = rng.random_range(0..2u8);
    let hold = Exp::new(toggle_rate).map_err(|e| Error::Input(e.to_string()))?;
    let mut changes = Vec::with_capacity((toggle_rate * duration * 1.01) as usize + 16);
    let mut t = hold.sample(&mut rng);
    while t < duration {
        changes.push(t);
        t += hold.sample(&mut rng);
    }
    Ok(Trajectory {
        initial,
        changes,
        duration,
    })
}

/// Probability that the flip-flop state differs after `k` sample periods.
fn flip_probability(toggle_rate: f64, period: f64, k: u64) -> f64 {
    // (1 − e^{−2Rτk}) / 2, computed without cancellation for small arguments.
    -(-2.0 * toggle_rate * period * k as f64).exp_m1() / 2.0
}

/// Sampled setting bits; bit `i` applies from `timestamp(i)` for one period.
#[derive(Clone, Debug, PartialEq)]
pub struct SettingStream {
    pub bits: Vec<u8>,
    pub sample_rate: f64,
    pub stochastic: bool,
}

impl SettingStream {
    pub fn timestamp(&self, i: usize) -> f64 {
        i as f64 / self.sample_rate
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.bits.len()).map(|i| self.timestamp(i))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn balance(&self) -> f64 {
        balance(&self.bits)
    }

    /// One byte (0 or 1) per bit.
    pub fn write_bit_file(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.bits)?;
        w.flush()?;
        Ok(())
    }
}

/// Number of samples that fit in `duration`; tolerant of float round-off.
pub fn sample_count(duration: f64, sample_rate: f64) -> u64 {
    (duration * sample_rate * (1.0 + 1e-12)).floor().max(0.0) as u64
}

pub fn sample_settings(source: &SettingSource, duration: f64, seed: u64) -> Result<SettingStream> {
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::Input(format!(
            "duration must be >= 0, got {duration}"
        )));
    }
    let n = sample_count(duration, source.sample_rate);
    let mut sampler = SettingSampler::new(source, seed)?;
    let bits = (0..n)
        .map(|i| sampler.bit(i))
        .collect::<Result<Vec<u8>>>()?;
    Ok(SettingStream {
        bits,
        sample_rate: source.sample_rate,
        stochastic: source.is_stochastic(),
    })
}

/// On-demand setting generator for runs too long to materialize.
///
/// Queries must use non-decreasing indices; skipped samples are integrated
/// out exactly, so the bits equal those a full stream would contain in law.
#[derive(Clone, Debug)]
pub struct SettingSampler {
    source: SettingSource,
    rng: ChaCha12Rng,
    index: u64,
    state: u8,
    started: bool,
}

impl SettingSampler {
    pub fn new(source: &SettingSource, seed: u64) -> Result<Self> {
        source.validate()?;
        Ok(SettingSampler {
            source: source.clone(),
            rng: seeded_rng(seed, 1),
            index: 0,
            state: 0,
            started: false,
        })
    }

    pub fn source(&self) -> &SettingSource {
        &self.source
    }

    pub fn bit(&mut self, index: u64) -> Result<u8> {
        match &self.source.mode {
            SettingMode::QuantumToggle { toggle_rate } => {
                if !self.started {
                    self.state = self.rng.random_range(0..2u8);
                    self.started = true;
                    self.index = 0;
                }
                if index < self.index {
                    return Err(Error::Input(format!(
                        "setting index {index} requested after {}",
                        self.index
                    )));
                }
                let gap = index - self.index;
                if gap > 0 {
                    let p = flip_probability(*toggle_rate, self.source.period(), gap);
                    if self.rng.random_bool(p) {
                        self.state ^= 1;
                    }
                    self.index = index;
                }
                Ok(self.state)
            }
            SettingMode::Periodic { frequency, phase } => {
                let half_periods = index as f64 * frequency / self.source.sample_rate + phase;
                Ok(((half_periods + 1e-9).floor() as i64).rem_euclid(2) as u8)
            }
            SettingMode::Predetermined { bits } => usize::try_from(index)
                .ok()
                .and_then(|i| bits.get(i).copied())
                .ok_or_else(|| {
                    Error::Input(format!(
                        "predetermined setting list exhausted: {} bits, index {index} requested",
                        bits.len()
                    ))
                }),
        }
    }
}

pub fn balance(bits: &[u8]) -> f64 {
    if bits.is_empty() {
        return f64::NAN;
    }
    bits.iter().map(|&b| b as u64).sum::<u64>() as f64 / bits.len() as f64
}

/// Pearson correlation of `bits[..n-lag]` with `bits[lag..]`.
pub fn autocorrelation(bits: &[u8], lag: usize) -> Result<f64> {
    if lag >= bits.len() {
        return Err(Error::Input(format!(
            "lag {lag} must be smaller than the sequence length {}",
            bits.len()
        )));
    }
    let x = &bits[..bits.len() - lag];
    let y = &bits[lag..];
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxy, mut sxx, mut syy) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for (&a, &b) in x.iter().zip(y) {
        let (a, b) = (a as u64, b as u64);
        sx += a;
        sy += b;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    let (sx, sy) = (sx as f64, sy as f64);
    let cov = sxy as f64 - sx * sy / n;
    let vx = sxx as f64 - sx * sx / n;
    let vy = syy as f64 - sy * sy / n;
    if vx <= 0.0 || vy <= 0.0 {
        return Err(Error::Numerical(
            "autocorrelation undefined for zero variance".into(),
        ));
    }
    Ok((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}

/// Correlation time of the flip-flop: autocovariance decays as e^{−2Rτ}.
pub fn autocorrelation_time(toggle_rate: f64) -> f64 {
    1.0 / (2.0 * toggle_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toggle_count_and_stationarity() {
        let traj = toggle_process(30e6, 1.0, 7).unwrap();
        let n = traj.changes.len() as f64;
        assert!((n - 3e7).abs() < 3.0 * 3e7f64.sqrt(), "{n}");
        // Var of the time average is 2·¼·τc/T with τc = 1/(2R).
        let frac = traj.time_in_one();
        let sigma = 1.0 / (2.0 * (3e7f64 * 1.0).sqrt());
        assert!((frac - 0.5).abs() < 3.0 * sigma, "{frac}");
        assert!(traj.changes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_trajectory() {
        let traj = toggle_process(30e6, 0.0, 1).unwrap();
        assert!(traj.changes.is_empty());
        assert!(toggle_process(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn quantum_stream_statistics() {
        let stream = sample_settings(&SettingSource::quantum(30e6, 1e6), 1.0, 11).unwrap();
        let n = stream.len();
        assert_eq!(n, 1_000_000);
        assert!(stream.stochastic);
        let bound = 4.0 / (n as f64).sqrt();
        assert!((stream.balance() - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
        for lag in 1..=10 {
            assert!(autocorrelation(&stream.bits, lag).unwrap().abs() < bound);
        }
        assert!((stream.timestamp(1) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn periodic_stream_alternates() {
        let stream = sample_settings(&SettingSource::periodic(1e6, 0.0, 1e6), 1e-5, 0).unwrap();
        assert_eq!(stream.bits, vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
        assert!(!stream.stochastic);
        let shifted = sample_settings(&SettingSource::periodic(1e6, 1.0, 1e6), 4e-6, 0).unwrap();
        assert_eq!(shifted.bits, vec![1, 0, 1, 0]);
    }

    #[test]
    fn predetermined_lookup_and_exhaustion() {
        let src = SettingSource::predetermined(vec![1, 1, 0], 1e6);
        let stream = sample_settings(&src, 3e-6, 0).unwrap();
        assert_eq!(stream.bits, vec![1, 1, 0]);
        assert!(!stream.stochastic);
        assert!(matches!(
            sample_settings(&src, 4e-6, 0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn reproducible_for_equal_seeds() {
        let src = SettingSource::quantum(30e6, 1e6);
        let a = sample_settings(&src, 1e-3, 5).unwrap();
        let b = sample_settings(&src, 1e-3, 5).unwrap();
        let c = sample_settings(&src, 1e-3, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn autocorrelation_edge_cases() {
        let bits = [0u8, 1, 1, 0, 1, 0, 0, 1];
        assert!((autocorrelation(&bits, 0).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(autocorrelation(&bits, 8), Err(Error::Input(_))));
        assert!(matches!(
            autocorrelation(&[1, 1, 1, 1], 1),
            Err(Error::Numerical(_))
        ));
        let alt = [0u8, 1, 0, 1, 0, 1];
        assert!((autocorrelation(&alt, 1).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_time_values() {
        assert!((autocorrelation_time(30e6) - 16.67e-9).abs() < 0.01e-9);
        assert_eq!(autocorrelation_time(0.5), 1.0);
    }

    #[test]
    fn fitted_decay_matches_correlation_time() {
        let rate = 30e6;
        let step = 2e-9;
        let traj = toggle_process(rate, 4e-3, 3).unwrap();
        let bits = traj.sample_uniform(0.0, step, 2_000_000);
        // Least-squares slope of ln r against lag, through the origin.
        let (mut num, mut den) = (0.0, 0.0);
        for k in 1..=10 {
            let tau = k as f64 * step;
            let r = autocorrelation(&bits, k).unwrap();
            num += tau * r.ln();
            den += tau * tau;
        }
        let fitted = -den / num;
        let expected = autocorrelation_time(rate);
        assert!(
            (fitted / expected - 1.0).abs() < 0.1,
            "{fitted} vs {expected}"
        );
    }

    #[test]
    fn sampler_matches_trajectory_law() {
        // Slow toggling makes the flip probability per sample measurable.
        let src = SettingSource::quantum(2e5, 1e6);
        let stream = sample_settings(&src, 0.5, 9).unwrap();
        let flips = stream.bits.windows(2).filter(|w| w[0] != w[1]).count() as f64;
        let n = (stream.len() - 1) as f64;
        let p = flip_probability(2e5, 1e-6, 1);
        let sd = (n * p * (1.0 - p)).sqrt();
        assert!((flips - n * p).abs() < 4.0 * sd, "{flips} vs {}", n * p);
    }

    #[test]
    fn sampler_rejects_backwards_queries() {
        let mut s = SettingSampler::new(&SettingSource::quantum(30e6, 1e6), 0).unwrap();
        s.bit(10).unwrap();
        assert_eq!(s.bit(10).unwrap(), s.bit(10).unwrap());
        assert!(s.bit(9).is_err());
    }

    #[test]
    fn bit_file_has_one_byte_per_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bits.bin");
        let stream =
            sample_settings(&SettingSource::predetermined(vec![1, 0, 1], 1e6), 3e-6, 0).unwrap();
        stream.write_bit_file(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), vec![1, 0, 1]);
    }
}
