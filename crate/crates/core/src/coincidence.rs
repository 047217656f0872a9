//! Two-stream analysis: clock offset, drift, coincidence matching and the
//! CHSH estimate.
//!
//! Offsets are Bob-minus-Alice: a pair satisfies `t_bob ≈ t_alice + offset`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use statrs::distribution::{DiscreteCDF, Poisson};

use crate::error::{Error, Result};
use crate::photonsim::TimeTag;

/// One-sided tail probability of a 5σ normal fluctuation.
pub const FIVE_SIGMA_P: f64 = 2.866_515_7e-7;

/// Display labels (Bob angle, Alice angle) per `[a_bit][b_bit]`.
pub const COMBINATION_LABELS: [[&str; 2]; 2] =
    [["0°,22.5°", "45°,22.5°"], ["0°,67.5°", "45°,67.5°"]];

/// Sign of each correlation in the CHSH sum, per `[a_bit][b_bit]`.
pub const CHSH_SIGNS: [[f64; 2]; 2] = [[1.0, 1.0], [1.0, -1.0]];

pub fn combination_label(a_bit: u8, b_bit: u8) -> &'static str {
    COMBINATION_LABELS[a_bit as usize & 1][b_bit as usize & 1]
}

fn check_sorted(tags: &[TimeTag]) -> Result<()> {
    match tags
        .windows(2)
        .position(|w| w[0].time_ps() > w[1].time_ps())
    {
        Some(i) => Err(Error::Unsorted { index: i + 1 }),
        None => Ok(()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetSearch {
    /// Range of candidate offsets, ps (inclusive).
    pub min_ps: i64,
    pub max_ps: i64,
    pub bin_ps: i64,
    /// Only tags within this span of the earliest tag are used, ps.
    pub prefix_ps: i64,
}

impl Default for OffsetSearch {
    fn default() -> Self {
        OffsetSearch {
            min_ps: -1_000_000_000,
            max_ps: 1_000_000_000,
            bin_ps: 1_000,
            prefix_ps: 20_000_000_000_000,
        }
    }
}

impl OffsetSearch {
    pub fn symmetric(range_ps: i64, bin_ps: i64) -> Self {
        OffsetSearch {
            min_ps: -range_ps,
            max_ps: range_ps,
            bin_ps,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetEstimate {
    pub offset_ps: i64,
    pub peak: u64,
    pub background_mean: f64,
    /// Look-elsewhere corrected tail probability of the peak.
    pub p_value: f64,
}

fn prefix(tags: &[TimeTag], end_ps: u64) -> &[TimeTag] {
    &tags[..tags.partition_point(|t| t.time_ps() < end_ps)]
}

/// Calls `f(Δt)` for every (alice, bob) pair with Δt = t_b − t_a in
/// `[lo, hi]`.
fn for_each_delta(alice: &[TimeTag], bob: &[TimeTag], lo: i64, hi: i64, mut f: impl FnMut(i64)) {
    let mut start = 0usize;
    for b in bob {
        let tb = b.time_ps() as i64;
        while start < alice.len() && tb - (alice[start].time_ps() as i64) > hi {
            start += 1;
        }
        for a in &alice[start..] {
            let d = tb - a.time_ps() as i64;
            if d < lo {
                break;
            }
            f(d);
        }
    }
}

/// Offset maximizing the Δt cross-correlation histogram, refined to the
/// centroid of the peak.
pub fn find_offset(
    alice: &[TimeTag],
    bob: &[TimeTag],
    search: &OffsetSearch,
) -> Result<OffsetEstimate> {
    if alice.is_empty() || bob.is_empty() {
        return Err(Error::Input(
            "offset search needs two non-empty streams".into(),
        ));
    }
    if search.bin_ps <= 0 || search.max_ps < search.min_ps {
        return Err(Error::Input(
            "offset search needs a positive bin width and min <= max".into(),
        ));
    }
    check_sorted(alice)?;
    check_sorted(bob)?;
    let start = alice[0].time_ps().min(bob[0].time_ps());
    let end = start.saturating_add(search.prefix_ps.max(0) as u64);
    let alice = prefix(alice, end);
    let bob = prefix(bob, end);

    let n_bins = ((search.max_ps - search.min_ps) / search.bin_ps + 1) as usize;
    let mut hist = vec![0u32; n_bins];
    let mut total = 0u64;
    for_each_delta(alice, bob, search.min_ps, search.max_ps, |d| {
        let k = ((d - search.min_ps) / search.bin_ps) as usize;
        hist[k.min(n_bins - 1)] += 1;
        total += 1;
    });
    let (peak_bin, &peak) = hist
        .iter()
        .enumerate()
        .max_by_key(|&(i, &c)| (c, std::cmp::Reverse(i)))
        .expect("histogram has at least one bin");
    let peak = peak as u64;
    let mean = (total - peak) as f64 / (n_bins.max(2) - 1) as f64;
    let p_single = if peak == 0 {
        1.0
    } else if mean <= 0.0 {
        0.0
    } else {
        Poisson::new(mean)
            .map_err(|e| Error::Numerical(e.to_string()))?
            .sf(peak - 1)
    };
    let p_value = (p_single * n_bins as f64).min(1.0);
    if peak < 3 || p_value >= FIVE_SIGMA_P {
        return Err(Error::NoSignal {
            peak,
            mean,
            p_value,
        });
    }

    // Centroid around the peak, re-centred until it settles.
    let mut centre = search.min_ps as f64 + (peak_bin as f64 + 0.5) * search.bin_ps as f64;
    let half = 1.5 * search.bin_ps as f64;
    for _ in 0..4 {
        let (lo, hi) = (
            (centre - half).floor() as i64,
            (centre + half).ceil() as i64,
        );
        let (mut sum, mut n) = (0.0, 0u64);
        for_each_delta(alice, bob, lo, hi, |d| {
            sum += d as f64;
            n += 1;
        });
        if n == 0 {
            break;
        }
        centre = sum / n as f64;
    }
    Ok(OffsetEstimate {
        offset_ps: centre.round() as i64,
        peak,
        background_mean: mean,
        p_value,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftSettings {
    pub max_drift_ps: i64,
    pub block_ps: u64,
    pub window_ps: u64,
    /// Block corrections are rounded to multiples of this.
    pub resolution_ps: i64,
}

impl Default for DriftSettings {
    fn default() -> Self {
        DriftSettings {
            max_drift_ps: 10_000,
            block_ps: 100_000_000_000_000,
            window_ps: 1_500,
            resolution_ps: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// (block centre, correction subtracted from Bob's times), ps.
    pub corrections: Vec<(u64, i64)>,
    pub clamped: bool,
    /// Blocks without a significant peak; they inherit their neighbour.
    pub skipped_blocks: usize,
}

/// Removes slow clock drift of `bob` relative to `alice`, given the global
/// `offset_ps`. Returns re-sorted tags and the per-block corrections.
pub fn compensate_drift(
    bob: &[TimeTag],
    alice: &[TimeTag],
    offset_ps: i64,
    settings: &DriftSettings,
) -> Result<(Vec<TimeTag>, DriftReport)> {
    check_sorted(bob)?;
    check_sorted(alice)?;
    if settings.block_ps == 0 {
        return Err(Error::Input("drift block length must be positive".into()));
    }
    let mut report = DriftReport {
        corrections: Vec::new(),
        clamped: false,
        skipped_blocks: 0,
    };
    let (Some(first), Some(last)) = (bob.first(), bob.last()) else {
        return Ok((Vec::new(), report));
    };
    let reach = 3 * settings.max_drift_ps + settings.window_ps as i64;
    let bin = (settings.window_ps as i64 / 2).max(1);
    let mut previous = 0i64;
    let mut block_start = first.time_ps();
    while block_start <= last.time_ps() {
        let block_end = block_start.saturating_add(settings.block_ps);
        let lo_idx = bob.partition_point(|t| t.time_ps() < block_start);
        let hi_idx = bob.partition_point(|t| t.time_ps() < block_end);
        let block = &bob[lo_idx..hi_idx];
        let centre = block_start + settings.block_ps / 2;
        let estimate = block_residual(block, alice, offset_ps, reach, bin);
        let correction = match estimate {
            Some(r) => {
                let mut c = r;
                if c.abs() > settings.max_drift_ps {
                    log::warn!(
                        "clock drift of {c} ps near t = {} s exceeds the {} ps bound; clamping",
                        centre as f64 * 1e-12,
                        settings.max_drift_ps
                    );
                    report.clamped = true;
                    c = c.clamp(-settings.max_drift_ps, settings.max_drift_ps);
                }
                let q = settings.resolution_ps.max(1);
                (c as f64 / q as f64).round() as i64 * q
            }
            None => {
                report.skipped_blocks += 1;
                previous
            }
        };
        previous = correction;
        report.corrections.push((centre, correction));
        block_start = block_end;
    }

    let corrections = &report.corrections;
    let at = |t: u64| -> i64 {
        let k = corrections.partition_point(|&(c, _)| c <= t);
        if k == 0 {
            corrections[0].1
        } else if k == corrections.len() {
            corrections[k - 1].1
        } else {
            let (t0, c0) = corrections[k - 1];
            let (t1, c1) = corrections[k];
            let f = (t - t0) as f64 / (t1 - t0) as f64;
            (c0 as f64 + f * (c1 - c0) as f64).round() as i64
        }
    };
    let mut out: Vec<TimeTag> = bob
        .iter()
        .map(|t| {
            let corrected = (t.time_ps() as i64 - at(t.time_ps())).max(0) as u64;
            t.with_time(corrected)
        })
        .collect();
    out.sort();
    Ok((out, report))
}

/// Residual offset of one block of Bob's tags, or `None` without a
/// significant peak.
fn block_residual(
    block: &[TimeTag],
    alice: &[TimeTag],
    offset: i64,
    reach: i64,
    bin: i64,
) -> Option<i64> {
    if block.is_empty() {
        return None;
    }
    let lo_t = (block[0].time_ps() as i64 - offset - reach).max(0) as u64;
    let hi_t = (block[block.len() - 1].time_ps() as i64 - offset + reach).max(0) as u64;
    let a_lo = alice.partition_point(|t| t.time_ps() < lo_t);
    let a_hi = alice.partition_point(|t| t.time_ps() <= hi_t);
    let alice = &alice[a_lo..a_hi];
    let n_bins = (2 * reach / bin + 1) as usize;
    let mut hist = vec![0u32; n_bins];
    let mut total = 0u64;
    for_each_delta(alice, block, offset - reach, offset + reach, |d| {
        hist[(((d - offset + reach) / bin) as usize).min(n_bins - 1)] += 1;
        total += 1;
    });
    let (k, &peak) = hist
        .iter()
        .enumerate()
        .max_by_key(|&(i, &c)| (c, std::cmp::Reverse(i)))?;
    let mean = (total - peak as u64) as f64 / (n_bins.max(2) - 1) as f64;
    if (peak as f64) < 5.0 || (peak as f64) < mean + 5.0 * mean.sqrt() {
        return None;
    }
    let mut centre = (k as f64 + 0.5) * bin as f64 - reach as f64;
    let half = bin as f64;
    for _ in 0..4 {
        let lo = offset + (centre - half).floor() as i64;
        let hi = offset + (centre + half).ceil() as i64;
        let (mut sum, mut n) = (0.0, 0u64);
        for_each_delta(alice, block, lo, hi, |d| {
            sum += (d - offset) as f64;
            n += 1;
        });
        if n == 0 {
            break;
        }
        centre = sum / n as f64;
    }
    Some(centre.round() as i64)
}

pub type Tallies = [[[[u64; 2]; 2]; 2]; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceSet {
    /// Matched (alice index, bob index).
    pub pairs: Vec<(usize, usize)>,
    /// Counts indexed `[a_bit][b_bit][alice outcome][bob outcome]`, outcome
    /// index 0 for +1.
    pub tallies: Tallies,
    pub total: u64,
    pub offset_ps: i64,
    pub window_ps: u64,
    pub singles_alice: u64,
    pub singles_bob: u64,
    /// Overlap of both streams, s.
    pub span_s: f64,
    pub accidentals_expected: f64,
}

impl CoincidenceSet {
    pub fn combination_total(&self, a_bit: u8, b_bit: u8) -> u64 {
        self.tallies[a_bit as usize][b_bit as usize]
            .iter()
            .flatten()
            .sum()
    }

    pub fn rate(&self) -> f64 {
        if self.span_s > 0.0 {
            self.total as f64 / self.span_s
        } else {
            0.0
        }
    }
}

/// R_acc = S_A · S_B · window.
pub fn accidental_rate(singles_a: f64, singles_b: f64, window_s: f64) -> f64 {
    singles_a * singles_b * window_s
}

/// Maximum one-to-one matching with |t_b − t_a − offset| ≤ window/2.
///
/// Tags are visited in shifted-time order and each is paired with the
/// earliest still-unmatched tag of the other stream in reach; on a line this
/// greedy choice is optimal.
pub fn match_streams(
    alice: &[TimeTag],
    bob: &[TimeTag],
    offset_ps: i64,
    window_ps: u64,
) -> Result<CoincidenceSet> {
    check_sorted(alice)?;
    check_sorted(bob)?;
    let window = window_ps as i128;
    let shifted = |t: &TimeTag| t.time_ps() as i128 + offset_ps as i128;

    // Unmatched tags of a single stream, oldest first.
    let mut pending: VecDeque<usize> = VecDeque::new();
    let mut pending_is_alice = true;
    let mut pairs = Vec::new();
    let mut tallies: Tallies = [[[[0; 2]; 2]; 2]; 2];
    let (mut i, mut j) = (0usize, 0usize);
    while i < alice.len() || j < bob.len() {
        let take_alice =
            j >= bob.len() || (i < alice.len() && shifted(&alice[i]) <= bob[j].time_ps() as i128);
        let (t, idx) = if take_alice {
            i += 1;
            (shifted(&alice[i - 1]), i - 1)
        } else {
            j += 1;
            (bob[j - 1].time_ps() as i128, j - 1)
        };
        let time_of = |k: usize, is_alice: bool| {
            if is_alice {
                shifted(&alice[k])
            } else {
                bob[k].time_ps() as i128
            }
        };
        while let Some(&front) = pending.front() {
            if 2 * (t - time_of(front, pending_is_alice)) > window {
                pending.pop_front();
            } else {
                break;
            }
        }
        if !pending.is_empty() && pending_is_alice != take_alice {
            let other = pending.pop_front().expect("non-empty");
            let (ai, bi) = if take_alice {
                (idx, other)
            } else {
                (other, idx)
            };
            let (a, b) = (alice[ai], bob[bi]);
            tallies[a.setting() as usize][b.setting() as usize][a.outcome().index()]
                [b.outcome().index()] += 1;
            pairs.push((ai, bi));
        } else {
            if pending.is_empty() {
                pending_is_alice = take_alice;
            }
            pending.push_back(idx);
        }
    }
    pairs.sort_unstable();

    let span_s = overlap_seconds(alice, bob, offset_ps);
    let window_s = window_ps as f64 * 1e-12;
    let accidentals_expected = if span_s > 0.0 {
        accidental_rate(
            alice.len() as f64 / span_s,
            bob.len() as f64 / span_s,
            window_s,
        ) * span_s
    } else {
        0.0
    };
    Ok(CoincidenceSet {
        total: pairs.len() as u64,
        pairs,
        tallies,
        offset_ps,
        window_ps,
        singles_alice: alice.len() as u64,
        singles_bob: bob.len() as u64,
        span_s,
        accidentals_expected,
    })
}

fn overlap_seconds(alice: &[TimeTag], bob: &[TimeTag], offset_ps: i64) -> f64 {
    let (Some(a0), Some(a1), Some(b0), Some(b1)) =
        (alice.first(), alice.last(), bob.first(), bob.last())
    else {
        return 0.0;
    };
    let start = (a0.time_ps() as i128 + offset_ps as i128).max(b0.time_ps() as i128);
    let end = (a1.time_ps() as i128 + offset_ps as i128).min(b1.time_ps() as i128);
    ((end - start).max(0) as f64) * 1e-12
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub value: f64,
    pub sigma: f64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellEstimate {
    /// Indexed `[a_bit][b_bit]`.
    pub correlations: [[CorrelationEstimate; 2]; 2],
    pub s: f64,
    pub sigma_s: f64,
    pub sigma_above_2: f64,
    pub total: u64,
}

fn correlation_from(counts: &[[f64; 2]; 2], n: f64) -> CorrelationEstimate {
    let e = ((counts[0][0] + counts[1][1] - counts[0][1] - counts[1][0]) / n).clamp(-1.0, 1.0);
    CorrelationEstimate {
        value: e,
        sigma: ((1.0 - e * e) / n).max(0.0).sqrt(),
        count: n.round() as u64,
    }
}

fn combine(correlations: [[CorrelationEstimate; 2]; 2], total: u64) -> BellEstimate {
    let mut sum = 0.0;
    let mut var = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            sum += CHSH_SIGNS[a][b] * correlations[a][b].value;
            var += correlations[a][b].sigma.powi(2);
        }
    }
    let s = sum.abs();
    let sigma_s = var.sqrt();
    let sigma_above_2 = if sigma_s > 0.0 {
        (s - 2.0) / sigma_s
    } else if s > 2.0 {
        f64::INFINITY
    } else if s < 2.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    };
    BellEstimate {
        correlations,
        s,
        sigma_s,
        sigma_above_2,
        total,
    }
}

/// CHSH estimate without background subtraction.
pub fn estimate(cs: &CoincidenceSet) -> Result<BellEstimate> {
    estimate_tallies(&cs.tallies)
}

pub fn estimate_tallies(tallies: &Tallies) -> Result<BellEstimate> {
    let mut correlations = [[CorrelationEstimate {
        value: 0.0,
        sigma: 0.0,
        count: 0,
    }; 2]; 2];
    let mut total = 0;
    for a in 0..2u8 {
        for b in 0..2u8 {
            let cell = &tallies[a as usize][b as usize];
            let n: u64 = cell.iter().flatten().sum();
            if n == 0 {
                return Err(Error::InsufficientData {
                    combination: combination_label(a, b).to_string(),
                });
            }
            total += n;
            let counts = cell.map(|row| row.map(|c| c as f64));
            correlations[a as usize][b as usize] = correlation_from(&counts, n as f64);
        }
    }
    Ok(combine(correlations, total))
}

/// Secondary estimate with the expected accidentals removed, spread evenly
/// over outcomes and in proportion to each combination's share.
pub fn estimate_background_subtracted(cs: &CoincidenceSet) -> Result<BellEstimate> {
    let raw = estimate(cs)?;
    let mut correlations = raw.correlations;
    for a in 0..2u8 {
        for b in 0..2u8 {
            let n = cs.combination_total(a, b) as f64;
            let acc = cs.accidentals_expected * n / cs.total as f64;
            let signal = n - acc;
            if signal <= 0.0 {
                return Err(Error::InsufficientData {
                    combination: combination_label(a, b).to_string(),
                });
            }
            let cell = &cs.tallies[a as usize][b as usize];
            let counts = cell.map(|row| row.map(|c| c as f64 - acc / 4.0));
            let mut e = correlation_from(&counts, signal);
            e.sigma = ((1.0 - e.value * e.value) / signal).max(0.0).sqrt() * (n / signal).sqrt();
            correlations[a as usize][b as usize] = e;
        }
    }
    Ok(combine(correlations, raw.total))
}

/// Histogram of Δt − offset for plotting: (bin start, count).
pub fn delta_histogram(
    alice: &[TimeTag],
    bob: &[TimeTag],
    offset_ps: i64,
    range_ps: i64,
    bin_ps: i64,
) -> Result<Vec<(i64, u64)>> {
    if bin_ps <= 0 || range_ps < 0 {
        return Err(Error::Input(
            "histogram needs a positive bin and range".into(),
        ));
    }
    check_sorted(alice)?;
    check_sorted(bob)?;
    let n = (2 * range_ps / bin_ps + 1) as usize;
    let mut hist = vec![0u64; n];
    for_each_delta(
        alice,
        bob,
        offset_ps - range_ps,
        offset_ps + range_ps,
        |d| {
            hist[(((d - offset_ps + range_ps) / bin_ps) as usize).min(n - 1)] += 1;
        },
    );
    Ok(hist
        .into_iter()
        .enumerate()
        .map(|(k, c)| (k as i64 * bin_ps - range_ps, c))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSettings {
    pub window_ps: u64,
    pub offset: OffsetSearch,
    /// `None` skips drift compensation.
    pub drift: Option<DriftSettings>,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            window_ps: 1_500,
            offset: OffsetSearch::default(),
            drift: Some(DriftSettings::default()),
        }
    }
}

impl AnalysisSettings {
    pub fn with_window(window_ps: u64) -> Self {
        AnalysisSettings {
            window_ps,
            offset: OffsetSearch::default(),
            drift: Some(DriftSettings {
                window_ps,
                ..DriftSettings::default()
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Analysis {
    pub offset: OffsetEstimate,
    pub drift: Option<DriftReport>,
    pub coincidences: CoincidenceSet,
    pub estimate: BellEstimate,
    /// Absent when accidentals swamp some combination.
    pub background_subtracted: Option<BellEstimate>,
}

/// Offset search, drift compensation, matching and the CHSH estimate.
pub fn analyze(
    alice: &[TimeTag],
    bob: &[TimeTag],
    settings: &AnalysisSettings,
) -> Result<Analysis> {
    let offset = find_offset(alice, bob, &settings.offset)?;
    let (bob_aligned, drift) = match &settings.drift {
        Some(d) => {
            let (tags, report) = compensate_drift(bob, alice, offset.offset_ps, d)?;
            (std::borrow::Cow::Owned(tags), Some(report))
        }
        None => (std::borrow::Cow::Borrowed(bob), None),
    };
    let coincidences = match_streams(alice, &bob_aligned, offset.offset_ps, settings.window_ps)?;
    let estimate = estimate(&coincidences)?;
    let background_subtracted = estimate_background_subtracted(&coincidences).ok();
    Ok(Analysis {
        offset,
        drift,
        coincidences,
        estimate,
        background_subtracted,
    })
}
