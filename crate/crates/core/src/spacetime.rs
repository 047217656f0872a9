//! Events in 1+1-dimensional Minkowski space and the causal checks that decide
//! whether the locality and freedom-of-choice loopholes are closed.
//!
//! An event is a short segment of a time-like world line: it starts at
//! `(t, x)`, lasts `duration`, and its start is only known to within
//! `± window`. Classification is done on the whole segment (plus a proper-time
//! slack), so two events count as space-like only if every pair of points
//! on them is space-like. Because the test is phrased on points, it gives the
//! same answer in every inertial frame.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s (exact).
pub const C: f64 = 299_792_458.0;

/// Default slack covering the 1-D approximation of the real geometry.
pub const DEFAULT_SLACK: f64 = 0.3e-6;
/// Proper separation (m) below which a pair of points counts as light-like.
pub const LIGHTLIKE_TOLERANCE: f64 = 1e-6;

pub const EMISSION_DURATION: f64 = 1e-9;
pub const MEASUREMENT_DURATION: f64 = 10e-9;
/// 1/(2R) for a 30 MHz toggle rate.
pub const CHOICE_DURATION: f64 = 1.0 / (2.0 * 30e6);

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventLabel {
    Emission,
    MeasurementA,
    MeasurementB,
    ChoiceA,
    ChoiceB,
    Custom(String),
}

impl EventLabel {
    pub fn default_duration(&self) -> f64 {
        match self {
            EventLabel::Emission => EMISSION_DURATION,
            EventLabel::MeasurementA | EventLabel::MeasurementB => MEASUREMENT_DURATION,
            EventLabel::ChoiceA | EventLabel::ChoiceB => CHOICE_DURATION,
            EventLabel::Custom(_) => 0.0,
        }
    }

    pub fn symbol(&self) -> &str {
        match self {
            EventLabel::Emission => "E",
            EventLabel::MeasurementA => "A",
            EventLabel::MeasurementB => "B",
            EventLabel::ChoiceA => "a",
            EventLabel::ChoiceB => "b",
            EventLabel::Custom(name) => name,
        }
    }
}

impl fmt::Display for EventLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpacetimeEvent {
    pub label: EventLabel,
    /// Seconds.
    pub t: f64,
    /// Meters along the source→Bob axis.
    pub x: f64,
    /// Coordinate duration in the current frame, seconds.
    pub duration: f64,
    /// Half-width of the timing uncertainty of `t`, seconds.
    pub window: f64,
    /// World-line velocity of the apparatus in the current frame, m/s.
    pub velocity: f64,
}

impl SpacetimeEvent {
    pub fn new(label: EventLabel, t: f64, x: f64) -> Self {
        let duration = label.default_duration();
        SpacetimeEvent {
            label,
            t,
            x,
            duration,
            window: 0.0,
            velocity: 0.0,
        }
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }

    pub fn with_window(mut self, window: f64) -> Self {
        self.window = window;
        self
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.t, self.x, self.duration, self.window, self.velocity]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Input(format!(
                "event {} has non-finite coordinates",
                self.label
            )));
        }
        if self.duration < 0.0 || self.window < 0.0 {
            return Err(Error::Input(format!(
                "event {} has negative duration or window",
                self.label
            )));
        }
        if self.velocity.abs() >= C {
            return Err(Error::InvalidFrame {
                speed: self.velocity.abs(),
            });
        }
        Ok(())
    }

    /// Start and end points (t, x) of the event segment widened by `slack`
    /// of proper time, split evenly between both ends.
    fn endpoints(&self, slack: f64) -> [(f64, f64); 2] {
        let pad = gamma_unchecked(self.velocity) * slack / 2.0;
        let t0 = self.t - self.window - pad;
        let t1 = self.t + self.duration + self.window + pad;
        [
            (t0, self.x + self.velocity * (t0 - self.t)),
            (t1, self.x + self.velocity * (t1 - self.t)),
        ]
    }
}

fn gamma_unchecked(v: f64) -> f64 {
    let b = v / C;
    1.0 / (1.0 - b * b).sqrt()
}

/// Lorentz factor; fails for |v| ≥ c.
pub fn gamma(v: f64) -> Result<f64> {
    if !(v.abs() < C) {
        return Err(Error::InvalidFrame { speed: v.abs() });
    }
    Ok(gamma_unchecked(v))
}

/// Coordinates of `e` in a frame moving with velocity `v` along +x.
pub fn boost(e: &SpacetimeEvent, v: f64) -> Result<SpacetimeEvent> {
    let g = gamma(v)?;
    e.validate()?;
    let u = e.velocity;
    let stretch = g * (1.0 - u * v / (C * C));
    Ok(SpacetimeEvent {
        label: e.label.clone(),
        t: g * (e.t - v * e.x / (C * C)),
        x: g * (e.x - v * e.t),
        duration: e.duration * stretch,
        window: e.window * stretch,
        velocity: (u - v) / (1.0 - u * v / (C * C)),
    })
}

pub fn boost_all(events: &[SpacetimeEvent], v: f64) -> Result<Vec<SpacetimeEvent>> {
    events.iter().map(|e| boost(e, v)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Separation {
    SpaceLike,
    TimeLike,
    LightLike,
}

impl Separation {
    pub fn name(self) -> &'static str {
        match self {
            Separation::SpaceLike => "space-like",
            Separation::TimeLike => "time-like",
            Separation::LightLike => "light-like",
        }
    }
}

impl fmt::Display for Separation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalClass {
    pub class: Separation,
    /// Worst-case |Δx| − c|Δt| over the padded segments, meters.
    pub margin: f64,
}

impl IntervalClass {
    pub fn is_space_like(&self) -> bool {
        self.class == Separation::SpaceLike
    }
}

/// Tunable causality checks; `Default` uses the standard slack and tolerance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Causality {
    /// Proper time added to every event (half on each end), seconds.
    pub slack: f64,
    /// Meters of proper separation treated as zero.
    pub tolerance: f64,
}

impl Default for Causality {
    fn default() -> Self {
        Causality {
            slack: DEFAULT_SLACK,
            tolerance: LIGHTLIKE_TOLERANCE,
        }
    }
}

impl Causality {
    /// No padding beyond the events' own durations.
    pub fn strict() -> Self {
        Causality {
            slack: 0.0,
            tolerance: LIGHTLIKE_TOLERANCE,
        }
    }

    pub fn interval_class(&self, e1: &SpacetimeEvent, e2: &SpacetimeEvent) -> IntervalClass {
        let p1 = e1.endpoints(self.slack);
        let p2 = e2.endpoints(self.slack);
        let mut margin = f64::INFINITY;
        let mut all_space = true;
        let mut all_future = true;
        let mut all_past = true;
        for &(ta, xa) in &p1 {
            for &(tb, xb) in &p2 {
                let dx = (xb - xa).abs();
                let dt = tb - ta;
                let m = dx - C * dt.abs();
                margin = margin.min(m);
                // Signed proper separation; invariant under boosts.
                let proper = m.signum() * (m.abs() * (dx + C * dt.abs())).sqrt();
                if proper <= self.tolerance {
                    all_space = false;
                }
                if proper >= -self.tolerance {
                    all_future = false;
                    all_past = false;
                } else if dt > 0.0 {
                    all_past = false;
                } else {
                    all_future = false;
                }
            }
        }
        let class = if all_space {
            Separation::SpaceLike
        } else if all_future || all_past {
            Separation::TimeLike
        } else {
            Separation::LightLike
        };
        IntervalClass { class, margin }
    }

    /// Velocity of the frame in which `e1` and `e2` are simultaneous.
    pub fn simultaneity_frame(&self, e1: &SpacetimeEvent, e2: &SpacetimeEvent) -> Result<f64> {
        let class = self.interval_class(e1, e2);
        if !class.is_space_like() {
            return Err(Error::NoSuchFrame {
                class: class.class.name(),
            });
        }
        let dt = e2.t - e1.t;
        let dx = e2.x - e1.x;
        let v = C * C * dt / dx;
        if !(v.abs() < C) {
            return Err(Error::NoSuchFrame {
                class: "light-like",
            });
        }
        Ok(v)
    }

    pub fn verdicts(
        &self,
        events: &[SpacetimeEvent],
        settings_stochastic: bool,
    ) -> Result<LoopholeVerdict> {
        let find = |label: EventLabel| -> Result<&SpacetimeEvent> {
            let mut hits = events.iter().filter(|e| e.label == label);
            let first = hits
                .next()
                .ok_or_else(|| Error::Input(format!("missing event {label}")))?;
            if hits.next().is_some() {
                return Err(Error::Input(format!("duplicate event {label}")));
            }
            first.validate()?;
            Ok(first)
        };
        let e = find(EventLabel::Emission)?;
        let a_meas = find(EventLabel::MeasurementA)?;
        let b_meas = find(EventLabel::MeasurementB)?;
        let a_choice = find(EventLabel::ChoiceA)?;
        let b_choice = find(EventLabel::ChoiceB)?;

        let report = |x: &SpacetimeEvent, y: &SpacetimeEvent| PairReport {
            first: x.label.clone(),
            second: y.label.clone(),
            interval: self.interval_class(x, y),
        };
        let pair_report = vec![
            report(a_meas, b_meas),
            report(a_meas, b_choice),
            report(b_meas, a_choice),
            report(a_choice, e),
            report(b_choice, e),
            report(a_choice, b_choice),
            report(e, a_meas),
            report(e, b_meas),
        ];
        let spacelike = |i: usize| pair_report[i].interval.is_space_like();
        let locality_geometry = spacelike(0) && spacelike(1) && spacelike(2);
        let freedom_geometry = spacelike(3) && spacelike(4);

        Ok(LoopholeVerdict {
            locality_closed: settings_stochastic && locality_geometry,
            freedom_closed: settings_stochastic && freedom_geometry,
            locality_geometry,
            freedom_geometry,
            pair_report,
            settings_stochastic,
        })
    }
}

pub fn interval_class(e1: &SpacetimeEvent, e2: &SpacetimeEvent) -> IntervalClass {
    Causality::default().interval_class(e1, e2)
}

pub fn simultaneity_frame(e1: &SpacetimeEvent, e2: &SpacetimeEvent) -> Result<f64> {
    Causality::default().simultaneity_frame(e1, e2)
}

pub fn verdicts(events: &[SpacetimeEvent], settings_stochastic: bool) -> Result<LoopholeVerdict> {
    Causality::default().verdicts(events, settings_stochastic)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub first: EventLabel,
    pub second: EventLabel,
    pub interval: IntervalClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopholeVerdict {
    pub locality_closed: bool,
    pub freedom_closed: bool,
    /// Whether the geometry alone would close each loophole.
    pub locality_geometry: bool,
    pub freedom_geometry: bool,
    pub pair_report: Vec<PairReport>,
    pub settings_stochastic: bool,
}

impl LoopholeVerdict {
    pub fn both_closed(&self) -> bool {
        self.locality_closed && self.freedom_closed
    }

    pub fn summary(&self) -> String {
        let s = |closed: bool| if closed { "CLOSED" } else { "OPEN" };
        format!(
            "locality: {}, freedom-of-choice: {}",
            s(self.locality_closed),
            s(self.freedom_closed)
        )
    }
}

/// 1-D layout of the experiment in the source frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    /// Position of Alice's analyzer, m.
    pub alice_position: f64,
    /// Photon travel time source → Alice (fiber delay), s.
    pub alice_delay: f64,
    pub bob_position: f64,
    /// Photon travel time source → Bob, s.
    pub bob_delay: f64,
    pub qrng_a_position: f64,
    /// Signal time QRNG_A → Alice's modulator, s.
    pub qrng_a_link_delay: f64,
    pub alice_electronic_delay: f64,
    pub qrng_b_position: f64,
    pub qrng_b_link_delay: f64,
    pub bob_electronic_delay: f64,
    pub emission_duration: f64,
    pub measurement_duration: f64,
    pub choice_duration: f64,
    /// Proper-time slack for the 1-D approximation, s.
    pub slack: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            alice_position: 0.0,
            alice_delay: 29.6e-6,
            bob_position: 143.6e3,
            bob_delay: 479e-6,
            qrng_a_position: -1.2e3,
            qrng_a_link_delay: 4.5e-6,
            alice_electronic_delay: 24.6e-6,
            qrng_b_position: 143.6e3,
            qrng_b_link_delay: 0.0,
            bob_electronic_delay: 24.6e-6,
            emission_duration: EMISSION_DURATION,
            measurement_duration: MEASUREMENT_DURATION,
            choice_duration: CHOICE_DURATION,
            slack: DEFAULT_SLACK,
        }
    }
}

impl Geometry {
    pub fn causality(&self) -> Causality {
        Causality {
            slack: self.slack,
            ..Causality::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("alice_delay", self.alice_delay),
            ("bob_delay", self.bob_delay),
            ("qrng_a_link_delay", self.qrng_a_link_delay),
            ("alice_electronic_delay", self.alice_electronic_delay),
            ("qrng_b_link_delay", self.qrng_b_link_delay),
            ("bob_electronic_delay", self.bob_electronic_delay),
            ("emission_duration", self.emission_duration),
            ("measurement_duration", self.measurement_duration),
            ("choice_duration", self.choice_duration),
            ("slack", self.slack),
        ];
        for (name, v) in named {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "geometry.{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("alice_position", self.alice_position),
            ("bob_position", self.bob_position),
            ("qrng_a_position", self.qrng_a_position),
            ("qrng_b_position", self.qrng_b_position),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("geometry.{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Places E, A, B, a and b for a scenario.
///
/// The choice belonging to a measurement happened one signal path plus one
/// electronic delay earlier, somewhere inside the setting interval that was
/// active at detection; it is placed at the interval centre with a window of
/// half an interval.
pub fn build_scenario_events(
    geometry: &Geometry,
    setting_interval: f64,
) -> Result<Vec<SpacetimeEvent>> {
    geometry.validate()?;
    if !(setting_interval > 0.0) || !setting_interval.is_finite() {
        return Err(Error::Config(format!(
            "setting interval must be positive, got {setting_interval}"
        )));
    }
    let half = setting_interval / 2.0;
    let g = geometry;

    let t_a = g.alice_delay;
    let t_b = g.bob_delay;
    let choice_a = t_a - g.qrng_a_link_delay - g.alice_electronic_delay - half;
    let choice_b = t_b - g.qrng_b_link_delay - g.bob_electronic_delay - half;
    for (side, choice, meas) in [("Alice", choice_a, t_a), ("Bob", choice_b, t_b)] {
        if choice + half >= meas {
            return Err(Error::Config(format!(
                "{side}'s setting choice would occur after the photon arrives \
                 (latest choice {:.3} us, detection {:.3} us)",
                (choice + half) * 1e6,
                meas * 1e6
            )));
        }
    }

    Ok(vec![
        SpacetimeEvent::new(EventLabel::Emission, 0.0, 0.0).with_duration(g.emission_duration),
        SpacetimeEvent::new(EventLabel::MeasurementA, t_a, g.alice_position)
            .with_duration(g.measurement_duration),
        SpacetimeEvent::new(EventLabel::MeasurementB, t_b, g.bob_position)
            .with_duration(g.measurement_duration),
        SpacetimeEvent::new(EventLabel::ChoiceA, choice_a, g.qrng_a_position)
            .with_duration(g.choice_duration)
            .with_window(half),
        SpacetimeEvent::new(EventLabel::ChoiceB, choice_b, g.qrng_b_position)
            .with_duration(g.choice_duration)
            .with_window(half),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn station_a() -> SpacetimeEvent {
        SpacetimeEvent::new(EventLabel::MeasurementA, 29.6e-6, 0.0)
    }

    fn station_b() -> SpacetimeEvent {
        SpacetimeEvent::new(EventLabel::MeasurementB, 479e-6, 143.6e3)
    }

    fn emission() -> SpacetimeEvent {
        SpacetimeEvent::new(EventLabel::Emission, 0.0, 0.0)
    }

    #[test]
    fn measurement_events_are_space_like() {
        let c = interval_class(&station_a(), &station_b());
        assert_eq!(c.class, Separation::SpaceLike);
        // 143.6 km − c·449.4 µs ≈ 8.87 km before padding.
        assert!(c.margin > 8.7e3 && c.margin < 8.9e3, "{}", c.margin);
    }

    #[test]
    fn co_located_events_are_time_like() {
        assert_eq!(
            interval_class(&emission(), &station_a()).class,
            Separation::TimeLike
        );
    }

    #[test]
    fn emission_to_bob_rides_the_light_cone() {
        // c·479 µs = 143.6006 km
        assert!((C * 479e-6 - 143_600.6).abs() < 0.1);
        assert_eq!(
            interval_class(&emission(), &station_b()).class,
            Separation::LightLike
        );
    }

    #[test]
    fn zero_boost_is_identity() {
        let b = boost(&station_b(), 0.0).unwrap();
        assert_eq!(b, station_b());
    }

    #[test]
    fn superluminal_boost_is_rejected() {
        assert!(matches!(
            boost(&station_a(), C),
            Err(Error::InvalidFrame { .. })
        ));
        assert!(matches!(
            boost(&station_a(), -1.5 * C),
            Err(Error::InvalidFrame { .. })
        ));
    }

    #[test]
    fn boost_round_trip() {
        let e = station_b();
        let back = boost(&boost(&e, 0.7 * C).unwrap(), -0.7 * C).unwrap();
        assert!((back.t - e.t).abs() <= 1e-9 * e.t.abs());
        assert!((back.x - e.x).abs() <= 1e-9 * e.x.abs());
        assert!((back.duration - e.duration).abs() <= 1e-9 * e.duration);
        assert!(back.velocity.abs() < 1e-6);
    }

    #[test]
    fn reference_frame_between_stations() {
        let v = simultaneity_frame(&station_a(), &station_b()).unwrap();
        assert!((v / C - 0.938).abs() < 0.001);
        let g = gamma(v).unwrap();
        assert!((g - 2.89).abs() < 0.01);
        assert!((143.6e3 / g - 49.7e3).abs() < 200.0);
        let a = boost(&station_a(), v).unwrap();
        let b = boost(&station_b(), v).unwrap();
        assert!((a.t - b.t).abs() < 1e-12);
    }

    #[test]
    fn simultaneous_events_need_no_boost() {
        let p = SpacetimeEvent::new(EventLabel::Custom("p".into()), 1e-6, 0.0);
        let q = SpacetimeEvent::new(EventLabel::Custom("q".into()), 1e-6, 5e3);
        assert_eq!(simultaneity_frame(&p, &q).unwrap(), 0.0);
        assert!(matches!(
            simultaneity_frame(&emission(), &station_a()),
            Err(Error::NoSuchFrame { .. })
        ));
    }

    #[test]
    fn default_geometry_events() {
        let events = build_scenario_events(&Geometry::default(), 1e-6).unwrap();
        let get = |l: EventLabel| events.iter().find(|e| e.label == l).unwrap().clone();
        let a = get(EventLabel::MeasurementA);
        let b = get(EventLabel::MeasurementB);
        let choice_a = get(EventLabel::ChoiceA);
        assert_eq!((a.t, a.x), (29.6e-6, 0.0));
        assert_eq!((b.t, b.x), (479e-6, 143.6e3));
        assert!(choice_a.t.abs() < 1e-12);
        assert_eq!(choice_a.window, 0.5e-6);
        assert_eq!(choice_a.x, -1.2e3);
        let v = verdicts(&events, true).unwrap();
        assert!(v.locality_closed && v.freedom_closed);
        let v = verdicts(&events, false).unwrap();
        assert!(!v.locality_closed && !v.freedom_closed);
        assert!(v.locality_geometry && v.freedom_geometry);
    }

    #[test]
    fn choice_after_detection_is_a_config_error() {
        let g = Geometry {
            qrng_b_link_delay: 0.0,
            bob_electronic_delay: 0.0,
            ..Geometry::default()
        };
        assert!(matches!(
            build_scenario_events(&g, 1e-6),
            Err(Error::Config(_))
        ));
        let g = Geometry {
            alice_delay: -1.0,
            ..Geometry::default()
        };
        assert!(build_scenario_events(&g, 1e-6).is_err());
    }

    #[test]
    fn degenerate_geometry_is_never_space_like() {
        let g = Geometry {
            alice_delay: 2e-6,
            bob_delay: 2e-6,
            bob_position: 0.0,
            qrng_a_position: 0.0,
            qrng_a_link_delay: 0.0,
            alice_electronic_delay: 0.1e-6,
            qrng_b_position: 0.0,
            bob_electronic_delay: 0.1e-6,
            qrng_b_link_delay: 0.0,
            ..Geometry::default()
        };
        let events = build_scenario_events(&g, 1e-6).unwrap();
        let v = verdicts(&events, true).unwrap();
        assert!(v.pair_report.iter().all(|p| !p.interval.is_space_like()));
        assert!(!v.locality_closed && !v.freedom_closed);
    }

    #[test]
    fn verdicts_reject_missing_or_duplicate_labels() {
        let mut events = build_scenario_events(&Geometry::default(), 1e-6).unwrap();
        events.push(emission());
        assert!(matches!(verdicts(&events, true), Err(Error::Input(_))));
        events.truncate(4);
        events.remove(0);
        assert!(matches!(verdicts(&events, true), Err(Error::Input(_))));
    }
}
