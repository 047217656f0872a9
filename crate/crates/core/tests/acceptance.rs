//! End-to-end acceptance checks, one PASS/FAIL line per criterion.

use std::f64::consts::SQRT_2;
use std::io::Write;
use std::time::{Duration, Instant};

use bellsim::coincidence::{analyze, AnalysisSettings};
use bellsim::linalg::{Mat4, C64};
use bellsim::photonsim::{run_experiment, LhvStrategy, ScenarioConfig, PRESET_NAMES};
use bellsim::quantum::{
    chsh_axes, horodecki_optimal_chsh, visibility_to_s, werner, DensityMatrix, TSIRELSON,
};
use bellsim::randomness::seeded_rng;
use bellsim::spacetime::{
    boost, gamma, interval_class, simultaneity_frame, verdicts, EventLabel, SpacetimeEvent, C,
};
use bellsim::tomography::{report, simulate_counts};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    passed: bool,
    detail: String,
}

fn check(
    results: &mut Vec<(usize, bool)>,
    id: usize,
    name: &str,
    limit: Duration,
    f: impl FnOnce() -> Outcome,
) {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let passed = out.passed && in_time;
    // Written to the handle directly so the harness does not capture it.
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(
        stdout,
        "[{}] {id:>2}. {name}: {} ({:.3?}{})",
        if passed { "PASS" } else { "FAIL" },
        out.detail,
        elapsed,
        if in_time {
            String::new()
        } else {
            format!(" > {limit:?}")
        }
    );
    results.push((id, passed));
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn station_frame() -> Outcome {
    let a = SpacetimeEvent::new(EventLabel::MeasurementA, 29.6e-6, 0.0);
    let b = SpacetimeEvent::new(EventLabel::MeasurementB, 479e-6, 143.6e3);
    let v = simultaneity_frame(&a, &b).expect("space-like stations");
    let g = gamma(v).expect("subluminal frame");
    let contracted = (b.x - a.x) / g;
    let beta = v / C;
    Outcome {
        passed: within(beta, 0.938, 0.001)
            && within(g, 2.89, 0.01)
            && within(contracted, 49.7e3, 200.0),
        detail: format!(
            "v = {beta:.4}c, gamma = {g:.3}, contracted = {:.2} km",
            contracted / 1e3
        ),
    }
}

fn verdict_matrix() -> Outcome {
    let expected = [
        ("a", false, false),
        ("b", false, false),
        ("c", true, false),
        ("d", true, true),
    ];
    let mut ok = true;
    let mut rows = Vec::new();
    for (name, locality, freedom) in expected {
        let v = ScenarioConfig::preset(name)
            .and_then(|c| c.verdicts())
            .expect("preset verdict");
        ok &= v.locality_closed == locality && v.freedom_closed == freedom;
        rows.push(format!("{name}: {}", v.summary()));
    }
    Outcome {
        passed: ok && PRESET_NAMES.len() == 4,
        detail: rows.join("; "),
    }
}

fn chsh_statistics() -> Outcome {
    let cfg = ScenarioConfig::preset("d").expect("preset d");
    assert_eq!(cfg.run_duration, 2400.0);
    let run = run_experiment(&cfg, 2015).expect("simulation");
    let analysis = analyze(&run.alice, &run.bob, &AnalysisSettings::default()).expect("analysis");
    let n = analysis.coincidences.total as f64;
    let est = &analysis.estimate;
    Outcome {
        passed: within(n, 19917.0, 600.0)
            && (2.30..=2.44).contains(&est.s)
            && within(est.sigma_s, 0.023, 0.004)
            && est.sigma_above_2 >= 12.0,
        detail: format!(
            "{n} coincidences, S = {:.4} ± {:.4}, {:.1} sigma above 2",
            est.s, est.sigma_s, est.sigma_above_2
        ),
    }
}

fn link_budget() -> Outcome {
    let mut cfg = ScenarioConfig::preset("d").expect("preset d");
    cfg.run_duration = 600.0;
    cfg.channels.alice.dark_rate = 0.0;
    cfg.channels.bob.dark_rate = 0.0;
    cfg.channels.snr_target = None;
    cfg.analyzer.rise_time = 0.0;
    cfg.analyzer.discard_window = 0.0;
    cfg.source.effective_visibility = None;
    let loss = cfg.channels.alice.attenuation_db + cfg.channels.bob.attenuation_db;
    let run = run_experiment(&cfg, 7).expect("simulation");
    let analysis = analyze(&run.alice, &run.bob, &AnalysisSettings::default()).expect("analysis");
    let rate = analysis.coincidences.rate();
    Outcome {
        passed: loss == 55.0 && within(rate, 7.9, 0.5),
        detail: format!(
            "{loss} dB total, {} coincidences in 600 s = {rate:.3} Hz (budget {:.3} Hz)",
            analysis.coincidences.total,
            run.budget.coincidences()
        ),
    }
}

fn visibility_budget() -> Outcome {
    let chain = visibility_to_s(0.985 * 0.99 * 0.97 * 0.91);
    let state = visibility_to_s(0.91);
    Outcome {
        passed: within(chain, 2.43, 0.01) && within(state, 2.57, 0.01),
        detail: format!("S(chain) = {chain:.4}, S(0.91) = {state:.4}"),
    }
}

fn duty_cycle() -> Outcome {
    let mut cfg = ScenarioConfig::preset("d").expect("preset d");
    cfg.run_duration = 60.0;
    assert_eq!(cfg.analyzer.discard_window, 35e-9);
    assert_eq!(cfg.randomness.alice.sample_rate, 1e6);
    let run = run_experiment(&cfg, 11).expect("simulation");
    let fa = run.stats.alice.discard_fraction();
    let fb = run.stats.bob.discard_fraction();
    Outcome {
        passed: within(fa, 0.035, 0.002) && within(fb, 0.035, 0.002),
        detail: format!(
            "discarded {:.3}% at Alice, {:.3}% at Bob",
            100.0 * fa,
            100.0 * fb
        ),
    }
}

fn tomography() -> Outcome {
    let data = simulate_counts(&werner(0.883).expect("werner"), 1e5, 3).expect("counts");
    let r = report(&data, 100, 4).expect("reconstruction");
    Outcome {
        passed: r.converged
            && within(r.tangle.value, 0.68, 0.03)
            && within(r.linear_entropy.value, 0.22, 0.03)
            && within(r.fully_entangled_fraction.value, 0.912, 0.01)
            && within(r.s_opt.value, 2.50, 0.05),
        detail: format!(
            "T = {}, S_L = {}, F = {}, S_opt = {}",
            r.tangle, r.linear_entropy, r.fully_entangled_fraction, r.s_opt
        ),
    }
}

fn lhv_ceiling() -> Outcome {
    let best = LhvStrategy::all_deterministic()
        .map(|s| s.chsh())
        .fold(f64::MIN, f64::max);
    let mut rng = seeded_rng(8, 0);
    let trials = 2_000u32;
    let (mut worst_analytic, mut worst_excess) = (f64::MIN, f64::MIN);
    for i in 0..10_000 {
        let k = rng.random_range(1..=6);
        let strategy = if i % 2 == 0 {
            LhvStrategy::random(&mut rng, k)
        } else {
            // Mixtures of deterministic responses sit on the boundary more often.
            let components = (0..k)
                .map(|_| {
                    let mut c =
                        LhvStrategy::deterministic(rng.random_range(0..16)).components[0].clone();
                    c.weight = rng.random();
                    c
                })
                .collect();
            LhvStrategy::new(components).expect("valid mixture")
        };
        worst_analytic = worst_analytic.max(strategy.chsh());
        let mut sum = 0.0;
        let mut var = 0.0;
        for a in 0..2u8 {
            for b in 0..2u8 {
                let mut acc = 0i64;
                for _ in 0..trials {
                    let (x, y) = strategy.sample(&mut rng, a, b);
                    acc += (x.sign() * y.sign()) as i64;
                }
                let e = acc as f64 / trials as f64;
                sum += if a == 1 && b == 1 { -e } else { e };
                var += (1.0 - e * e) / trials as f64;
            }
        }
        worst_excess = worst_excess.max((sum.abs() - 2.0) / var.sqrt().max(1e-12));
    }
    Outcome {
        passed: best == 2.0 && worst_analytic <= 2.0 + 1e-9 && worst_excess <= 4.0,
        detail: format!(
            "deterministic max = {best}, stochastic max = {worst_analytic:.6}, largest sampled excess = {worst_excess:.2} sigma"
        ),
    }
}

fn random_state<R: Rng>(rng: &mut R) -> DensityMatrix {
    let g = Mat4::from_fn(|_, _| C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)));
    let m = g * g.adjoint();
    let tr = m.trace().re;
    DensityMatrix::new(m.scale(1.0 / tr)).expect("Ginibre state")
}

fn random_axis<R: Rng>(rng: &mut R) -> [f64; 3] {
    let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.map(|x| x / n)
}

fn tsirelson_ceiling() -> Outcome {
    let mut rng = seeded_rng(9, 0);
    let mut worst = f64::MIN;
    let mut optimum_ok = true;
    for i in 0..10_000 {
        // Half the samples near a rotated singlet so the bound is probed.
        let rho = if i % 2 == 0 {
            random_state(&mut rng)
        } else {
            let p: f64 = rng.random_range(0.9..=1.0);
            werner(p).expect("werner")
        };
        let alice = [random_axis(&mut rng), random_axis(&mut rng)];
        let bob = [random_axis(&mut rng), random_axis(&mut rng)];
        let s = chsh_axes(&rho, &alice, &bob).abs();
        worst = worst.max(s);
        let opt = horodecki_optimal_chsh(&rho).expect("optimum").value;
        optimum_ok &= s <= opt + 1e-9 && opt <= TSIRELSON + 1e-9;
    }
    Outcome {
        passed: worst <= 2.0 * SQRT_2 + 1e-9 && optimum_ok,
        detail: format!("max sampled S = {worst:.6}, optimum never exceeded: {optimum_ok}"),
    }
}

fn lorentz_invariance() -> Outcome {
    let mut rng = seeded_rng(10, 0);
    let mut class_changes = 0;
    for _ in 0..10_000 {
        let e1 = SpacetimeEvent::new(
            EventLabel::Custom("p".into()),
            rng.random_range(-1e-3..1e-3),
            rng.random_range(-2e5..2e5),
        )
        .with_duration(rng.random_range(0.0..1e-6));
        let e2 = SpacetimeEvent::new(
            EventLabel::Custom("q".into()),
            rng.random_range(-1e-3..1e-3),
            rng.random_range(-2e5..2e5),
        )
        .with_duration(rng.random_range(0.0..1e-6));
        let v = rng.random_range(-0.99..=0.99) * C;
        let before = interval_class(&e1, &e2).class;
        let after = interval_class(
            &boost(&e1, v).expect("boost"),
            &boost(&e2, v).expect("boost"),
        )
        .class;
        class_changes += usize::from(before != after);
    }
    let mut verdict_changes = 0;
    for name in PRESET_NAMES {
        let cfg = ScenarioConfig::preset(name).expect("preset");
        let events = cfg.events().expect("events");
        let reference = verdicts(&events, cfg.settings_stochastic()).expect("verdict");
        for _ in 0..25 {
            let v = rng.random_range(-0.99..=0.99) * C;
            let boosted: Vec<_> = events.iter().map(|e| boost(e, v).expect("boost")).collect();
            let moved = verdicts(&boosted, cfg.settings_stochastic()).expect("verdict");
            verdict_changes += usize::from(
                moved.locality_closed != reference.locality_closed
                    || moved.freedom_closed != reference.freedom_closed,
            );
        }
    }
    Outcome {
        passed: class_changes == 0 && verdict_changes == 0,
        detail: format!(
            "{class_changes} interval-class changes, {verdict_changes} verdict changes"
        ),
    }
}

#[test]
fn acceptance_criteria() {
    let _ = writeln!(std::io::stdout());
    let mut results = Vec::new();
    let r = &mut results;
    check(
        r,
        1,
        "station frame",
        Duration::from_millis(1),
        station_frame,
    );
    check(
        r,
        2,
        "verdict matrix",
        Duration::from_secs(1),
        verdict_matrix,
    );
    check(
        r,
        3,
        "CHSH statistics",
        Duration::from_secs(60),
        chsh_statistics,
    );
    check(r, 4, "link budget", Duration::from_secs(10), link_budget);
    check(
        r,
        5,
        "visibility budget",
        Duration::from_millis(1),
        visibility_budget,
    );
    check(r, 6, "duty cycle", Duration::from_secs(10), duty_cycle);
    check(r, 7, "tomography", Duration::from_secs(60), tomography);
    check(
        r,
        8,
        "local hidden-variable ceiling",
        Duration::from_secs(30),
        lhv_ceiling,
    );
    check(
        r,
        9,
        "quantum ceiling",
        Duration::from_secs(30),
        tsirelson_ceiling,
    );
    check(
        r,
        10,
        "Lorentz invariance",
        Duration::from_secs(5),
        lorentz_invariance,
    );
    let failed: Vec<usize> = results
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(id, _)| *id)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
