use bellsim::coincidence::{analyze, AnalysisSettings};
use bellsim::photonsim::{
    run_experiment, HiddenVariableMode, LhvStrategy, ScenarioConfig, TimeTag,
};
use bellsim::quantum::TSIRELSON;
use bellsim::Error;

fn short(name: &str, seconds: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::preset(name).unwrap();
    cfg.run_duration = seconds;
    cfg
}

#[test]
fn periodic_settings_still_violate_but_leave_loopholes_open() {
    let cfg = short("b", 240.0);
    let run = run_experiment(&cfg, 5).unwrap();
    assert!(!run.verdict.locality_closed && !run.verdict.freedom_closed);
    let a = analyze(&run.alice, &run.bob, &AnalysisSettings::default()).unwrap();
    assert!(a.estimate.s > 2.0, "S = {}", a.estimate.s);
    assert!(a.estimate.s <= TSIRELSON + 4.0 * a.estimate.sigma_s);
}

#[test]
fn low_snr_scenario_has_lower_s() {
    let run = run_experiment(&short("c", 300.0), 6).unwrap();
    let a = analyze(&run.alice, &run.bob, &AnalysisSettings::default()).unwrap();
    // Predicted 0.9459 · 0.838 · 2√2.
    let expected = 0.9459 * 0.838 * TSIRELSON;
    assert!(
        (a.estimate.s - expected).abs() < 4.0 * a.estimate.sigma_s,
        "S = {}",
        a.estimate.s
    );
}

#[test]
fn local_model_stays_below_two() {
    let mut cfg = short("d", 600.0);
    cfg.mode = HiddenVariableMode::Local {
        strategy: LhvStrategy::deterministic(0),
    };
    let run = run_experiment(&cfg, 7).unwrap();
    let a = analyze(&run.alice, &run.bob, &AnalysisSettings::default()).unwrap();
    assert!(
        a.estimate.s <= 2.0 + 4.0 * a.estimate.sigma_s,
        "S = {}",
        a.estimate.s
    );
}

#[test]
fn exploit_modes_conflict_with_closed_loopholes() {
    let mut cfg = short("d", 1.0);
    cfg.mode = HiddenVariableMode::SettingAwareSource;
    assert!(matches!(
        run_experiment(&cfg, 1),
        Err(Error::CausalityViolation(_))
    ));
    cfg.mode = HiddenVariableMode::SignalingAtSpeed { speed: 1e12 };
    assert!(matches!(
        run_experiment(&cfg, 1),
        Err(Error::CausalityViolation(_))
    ));
}

#[test]
fn disjoint_streams_have_no_signal() {
    let run = run_experiment(&short("d", 30.0), 8).unwrap();
    let shifted: Vec<TimeTag> = run
        .bob
        .iter()
        .map(|t| t.with_time(t.time_ps() + 100_000_000_000_000))
        .collect();
    assert!(matches!(
        analyze(&run.alice, &shifted, &AnalysisSettings::default()),
        Err(Error::NoSignal { .. })
    ));
}

#[test]
fn zero_duration_gives_empty_streams() {
    let run = run_experiment(&short("d", 0.0), 9).unwrap();
    assert!(run.alice.is_empty() && run.bob.is_empty());
}
