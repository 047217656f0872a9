use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bellsim::coincidence::{
    analyze as analyze_streams, delta_histogram, Analysis, AnalysisSettings, COMBINATION_LABELS,
};
use bellsim::photonsim::{
    derive_seed, read_csv, read_tags, run_experiment, write_csv_to, write_tags_to, ScenarioConfig,
    TimeTag, PRESET_NAMES,
};
use bellsim::quantum::werner;
use bellsim::randomness::{autocorrelation, sample_settings, SettingSource};
use bellsim::spacetime::LoopholeVerdict;
use bellsim::tomography::{matrix_csv, report, simulate_counts, TomographyData, TomographyReport};
use bellsim::{Error, Result};
use rayon::prelude::*;
use serde_json::json;

use crate::output::{ensure_dir, write_atomic, write_json, write_text, RunManifest};
use crate::{ScenarioArgs, EXIT_OPEN};

fn load_scenario(args: &ScenarioArgs) -> Result<ScenarioConfig> {
    let cfg = match (&args.config, &args.scenario) {
        (Some(path), _) => ScenarioConfig::load(path)?,
        (None, Some(name)) => ScenarioConfig::preset(name)?,
        (None, None) => ScenarioConfig::preset("d")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn verdict_table(cfg: &ScenarioConfig, verdict: &LoopholeVerdict) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "scenario {}: {}", cfg.name, cfg.description);
    let _ = writeln!(
        s,
        "{:<6}{:>14}{:>14}{:>14}",
        "event", "t (us)", "x (km)", "span (us)"
    );
    for e in cfg.events()? {
        let _ = writeln!(
            s,
            "{:<6}{:>14.3}{:>14.4}{:>14.3}",
            e.label.symbol(),
            e.t * 1e6,
            e.x / 1e3,
            (e.duration + 2.0 * e.window) * 1e6
        );
    }
    let _ = writeln!(s, "{:<6}{:<12}{:>16}", "pair", "class", "margin (m)");
    for p in &verdict.pair_report {
        let _ = writeln!(
            s,
            "{:<6}{:<12}{:>16.1}",
            format!("{}{}", p.first.symbol(), p.second.symbol()),
            p.interval.class.name(),
            p.interval.margin
        );
    }
    let _ = writeln!(s, "settings stochastic: {}", verdict.settings_stochastic);
    let _ = writeln!(s, "{}", verdict.summary());
    Ok(s)
}

fn make_deterministic(cfg: &mut ScenarioConfig) {
    let (ra, rb) = (
        cfg.randomness.alice.sample_rate,
        cfg.randomness.bob.sample_rate,
    );
    // Different frequencies so every setting combination occurs.
    cfg.randomness.alice = SettingSource::periodic(ra / 2.0, 0.0, ra);
    cfg.randomness.bob = SettingSource::periodic(rb / 4.0, 0.0, rb);
}

pub fn verdict(args: &ScenarioArgs, deterministic: bool, out: Option<&Path>) -> Result<u8> {
    let mut cfg = load_scenario(args)?;
    if deterministic {
        make_deterministic(&mut cfg);
    }
    let v = cfg.verdicts()?;
    print!("{}", verdict_table(&cfg, &v)?);
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(
            &dir.join("verdict.json"),
            &json!({
                "scenario": cfg.name,
                "locality_closed": v.locality_closed,
                "freedom_closed": v.freedom_closed,
                "summary": v.summary(),
                "pairs": v.pair_report,
            }),
        )?;
    }
    Ok(if v.both_closed() { 0 } else { EXIT_OPEN })
}

fn write_tag_file(path: &Path, tags: &[TimeTag], manifest: &mut RunManifest) -> Result<()> {
    write_atomic(path, |w| write_tags_to(w, tags))?;
    manifest.record(path);
    Ok(())
}

fn write_tag_csv(path: &Path, tags: &[TimeTag], manifest: &mut RunManifest) -> Result<()> {
    write_atomic(path, |w| write_csv_to(w, tags))?;
    manifest.record(path);
    Ok(())
}

pub fn run(
    args: &ScenarioArgs,
    seed: u64,
    duration: Option<f64>,
    out: &Path,
    csv: bool,
) -> Result<u8> {
    let started = Instant::now();
    let mut cfg = load_scenario(args)?;
    if let Some(d) = duration {
        cfg.run_duration = d;
    }
    cfg.validate()?;
    ensure_dir(out)?;
    let result = run_experiment(&cfg, seed)?;
    let mut manifest = RunManifest::new("run");
    manifest.config_hash = Some(cfg.config_hash()?);
    manifest.scenario = Some(cfg.name.clone());
    manifest.seed = Some(seed);
    manifest.verdict = Some(result.verdict.summary());

    let config_path = out.join("config.toml");
    write_text(&config_path, &cfg.to_toml()?)?;
    manifest.record(&config_path);
    write_tag_file(&out.join("alice.bin"), &result.alice, &mut manifest)?;
    write_tag_file(&out.join("bob.bin"), &result.bob, &mut manifest)?;
    if csv {
        write_tag_csv(&out.join("alice.csv"), &result.alice, &mut manifest)?;
        write_tag_csv(&out.join("bob.csv"), &result.bob, &mut manifest)?;
    }
    manifest.details = json!({
        "run_duration_s": cfg.run_duration,
        "alice_tags": result.alice.len(),
        "bob_tags": result.bob.len(),
        "stats": result.stats,
        "budget": result.budget,
        "predicted_coincidence_rate_hz": result.budget.coincidences(),
    });
    manifest.finish(out, started)?;

    println!(
        "scenario {} seed {seed}: {}",
        cfg.name,
        result.verdict.summary()
    );
    println!(
        "{} Alice tags, {} Bob tags over {} s; predicted {:.2} coincidences/s (SNR {:.3})",
        result.alice.len(),
        result.bob.len(),
        cfg.run_duration,
        result.budget.coincidences(),
        result.budget.snr
    );
    println!("wrote {}", out.display());
    Ok(0)
}

fn read_stream(path: &Path) -> Result<Vec<TimeTag>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv(path),
        _ => read_tags(path),
    }
}

fn correlations_csv(a: &Analysis) -> String {
    let mut s = String::from("combination,alice_bit,bob_bit,count,n_pp,n_pm,n_mp,n_mm,E,sigma_E\n");
    for a_bit in 0..2 {
        for b_bit in 0..2 {
            let t = &a.coincidences.tallies[a_bit][b_bit];
            let e = &a.estimate.correlations[a_bit][b_bit];
            let _ = writeln!(
                s,
                "\"{}\",{a_bit},{b_bit},{},{},{},{},{},{:.6},{:.6}",
                COMBINATION_LABELS[a_bit][b_bit],
                e.count,
                t[0][0],
                t[0][1],
                t[1][0],
                t[1][1],
                e.value,
                e.sigma
            );
        }
    }
    s
}

fn bell_csv(a: &Analysis) -> String {
    let mut s = String::from("estimate,S,sigma_S,sigma_above_2,coincidences\n");
    let mut row = |name: &str, e: &bellsim::coincidence::BellEstimate| {
        let _ = writeln!(
            s,
            "{name},{:.6},{:.6},{:.3},{}",
            e.s, e.sigma_s, e.sigma_above_2, e.total
        );
    };
    row("raw", &a.estimate);
    if let Some(b) = &a.background_subtracted {
        row("background_subtracted", b);
    }
    s
}

/// Verdict recorded by `run` next to the tag files, if any.
fn sibling_verdict(alice: &Path) -> Option<String> {
    let manifest = alice.parent()?.join("manifest.json");
    let text = std::fs::read_to_string(manifest).ok()?;
    let value: serde_json::Value = serde_json::from_str(&text).ok()?;
    value.get("verdict")?.as_str().map(str::to_string)
}

pub fn analyze(
    alice_path: &Path,
    bob_path: &Path,
    window_ns: f64,
    drift: bool,
    histogram: bool,
    out: &Path,
) -> Result<u8> {
    let started = Instant::now();
    if !(window_ns > 0.0 && window_ns.is_finite()) {
        return Err(Error::Input(format!(
            "window must be a positive number of ns, got {window_ns}"
        )));
    }
    let alice = read_stream(alice_path)?;
    let bob = read_stream(bob_path)?;
    let mut settings = AnalysisSettings::with_window((window_ns * 1e3).round() as u64);
    if !drift {
        settings.drift = None;
    }
    let a = analyze_streams(&alice, &bob, &settings)?;
    ensure_dir(out)?;
    let mut manifest = RunManifest::new("analyze");
    manifest.verdict = sibling_verdict(alice_path);

    let corr = out.join("correlations.csv");
    write_text(&corr, &correlations_csv(&a))?;
    manifest.record(&corr);
    let bell = out.join("bell.csv");
    write_text(&bell, &bell_csv(&a))?;
    manifest.record(&bell);
    if histogram {
        let hist = delta_histogram(
            &alice,
            &bob,
            a.offset.offset_ps,
            10 * settings.window_ps as i64,
            100,
        )?;
        let mut text = String::from("delta_ps,count\n");
        for (d, c) in hist {
            let _ = writeln!(text, "{d},{c}");
        }
        let path = out.join("histogram.csv");
        write_text(&path, &text)?;
        manifest.record(&path);
    }
    let c = &a.coincidences;
    manifest.details = json!({
        "alice": alice_path,
        "bob": bob_path,
        "window_ps": settings.window_ps,
        "offset": a.offset,
        "drift": a.drift,
        "coincidences": c.total,
        "span_s": c.span_s,
        "rate_hz": c.rate(),
        "accidentals_expected": c.accidentals_expected,
        "estimate": a.estimate,
        "background_subtracted": a.background_subtracted,
    });
    manifest.finish(out, started)?;

    println!(
        "offset {:.3} ns (peak {} over background {:.1}, p = {:.2e})",
        a.offset.offset_ps as f64 / 1e3,
        a.offset.peak,
        a.offset.background_mean,
        a.offset.p_value
    );
    if let Some(d) = &a.drift {
        println!(
            "drift: {} blocks, {} skipped{}",
            d.corrections.len(),
            d.skipped_blocks,
            if d.clamped {
                ", corrections clamped"
            } else {
                ""
            }
        );
    }
    println!(
        "{} coincidences in {:.1} s ({:.3} Hz, {:.1} accidentals expected)",
        c.total,
        c.span_s,
        c.rate(),
        c.accidentals_expected
    );
    for a_bit in 0..2 {
        for b_bit in 0..2 {
            let e = &a.estimate.correlations[a_bit][b_bit];
            println!(
                "  E({}) = {:+.4} ± {:.4}  [{}]",
                COMBINATION_LABELS[a_bit][b_bit], e.value, e.sigma, e.count
            );
        }
    }
    println!(
        "S = {:.4} ± {:.4} ({:.1} sigma above 2)",
        a.estimate.s, a.estimate.sigma_s, a.estimate.sigma_above_2
    );
    if let Some(b) = &a.background_subtracted {
        println!("S (accidentals subtracted) = {:.4} ± {:.4}", b.s, b.sigma_s);
    }
    if let Some(v) = &manifest_verdict_line(alice_path) {
        println!("{v}");
    }
    Ok(0)
}

fn manifest_verdict_line(alice: &Path) -> Option<String> {
    sibling_verdict(alice).map(|v| format!("run verdict: {v}"))
}

pub enum TomoSource {
    Counts(PathBuf),
    Simulate { visibility: f64, counts: f64 },
}

fn metrics_csv(r: &TomographyReport) -> String {
    let mut s = String::from("metric,value,sigma\n");
    for (name, m) in [
        ("tangle", r.tangle),
        ("linear_entropy", r.linear_entropy),
        ("fully_entangled_fraction", r.fully_entangled_fraction),
        ("s_tomo", r.s_tomo),
        ("s_opt", r.s_opt),
    ] {
        let _ = writeln!(s, "{name},{:.6},{:.6}", m.value, m.sigma);
    }
    s
}

pub fn tomo(source: TomoSource, bootstrap: usize, seed: u64, out: &Path) -> Result<u8> {
    let started = Instant::now();
    let (data, origin) = match source {
        TomoSource::Counts(path) => {
            let data = TomographyData::read_csv(&path)?;
            (data, json!({ "counts": path }))
        }
        TomoSource::Simulate { visibility, counts } => {
            let rho = werner(visibility)?;
            let data = simulate_counts(&rho, counts, seed)?;
            (
                data,
                json!({ "werner_visibility": visibility, "counts_per_setting": counts }),
            )
        }
    };
    let r = report(&data, bootstrap, seed)?;
    ensure_dir(out)?;
    let mut manifest = RunManifest::new("tomo");
    manifest.seed = Some(seed);
    for (name, text) in [
        ("counts.csv", data.to_csv()),
        ("rho_real.csv", matrix_csv(&r.rho, false)),
        ("rho_imag.csv", matrix_csv(&r.rho, true)),
        ("metrics.csv", metrics_csv(&r)),
    ] {
        let path = out.join(name);
        write_text(&path, &text)?;
        manifest.record(&path);
    }
    manifest.details = json!({
        "source": origin,
        "bootstrap": bootstrap,
        "converged": r.converged,
        "mle_iterations": r.mle_iterations,
        "linear_min_eigenvalue": r.linear_min_eigenvalue,
        "optimal_alice_axes": r.optimal.alice,
        "optimal_bob_axes": r.optimal.bob,
    });
    manifest.finish(out, started)?;

    if !r.converged {
        eprintln!(
            "warning: maximum-likelihood search did not converge after {} iterations; reporting best point",
            r.mle_iterations
        );
    }
    if r.linear_min_eigenvalue < 0.0 {
        println!(
            "linear inversion is non-physical (smallest eigenvalue {:.2e}); maximum-likelihood estimate used",
            r.linear_min_eigenvalue
        );
    }
    println!("tangle                   {}", r.tangle);
    println!("linear entropy           {}", r.linear_entropy);
    println!("fully entangled fraction {}", r.fully_entangled_fraction);
    println!("S at standard angles     {}", r.s_tomo);
    println!("S at optimal angles      {}", r.s_opt);
    println!("wrote {}", out.display());
    Ok(0)
}

struct Row {
    name: String,
    verdict: LoopholeVerdict,
    coincidences: u64,
    s: f64,
    sigma_s: f64,
    sigma_above_2: f64,
}

fn table_row(name: &str, seed: u64, duration: Option<f64>) -> Result<Row> {
    let mut cfg = ScenarioConfig::preset(name)?;
    if let Some(d) = duration {
        cfg.run_duration = d;
    }
    let result = run_experiment(&cfg, seed)?;
    let a = analyze_streams(&result.alice, &result.bob, &AnalysisSettings::default())?;
    Ok(Row {
        name: name.to_string(),
        verdict: result.verdict,
        coincidences: a.coincidences.total,
        s: a.estimate.s,
        sigma_s: a.estimate.sigma_s,
        sigma_above_2: a.estimate.sigma_above_2,
    })
}

fn status(closed: bool) -> &'static str {
    if closed {
        "closed"
    } else {
        "open"
    }
}

pub fn scenario_table(seed: u64, duration: Option<f64>, out: &Path) -> Result<u8> {
    let started = Instant::now();
    let rows = PRESET_NAMES
        .par_iter()
        .enumerate()
        .map(|(i, name)| table_row(name, derive_seed(seed, 100 + i as u64), duration))
        .collect::<Result<Vec<_>>>()?;
    let mut csv =
        String::from("scenario,locality,freedom_of_choice,coincidences,S,sigma_S,sigma_above_2\n");
    println!(
        "{:<9}{:<10}{:<19}{:>13}{:>18}",
        "scenario", "locality", "freedom-of-choice", "coincidences", "S"
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{:.6},{:.6},{:.3}",
            r.name,
            status(r.verdict.locality_closed),
            status(r.verdict.freedom_closed),
            r.coincidences,
            r.s,
            r.sigma_s,
            r.sigma_above_2
        );
        println!(
            "{:<9}{:<10}{:<19}{:>13}{:>11.3} ± {:.3}",
            r.name,
            status(r.verdict.locality_closed),
            status(r.verdict.freedom_closed),
            r.coincidences,
            r.s,
            r.sigma_s
        );
    }
    ensure_dir(out)?;
    let path = out.join("scenario_table.csv");
    write_text(&path, &csv)?;
    let mut manifest = RunManifest::new("scenario-table");
    manifest.seed = Some(seed);
    manifest.record(&path);
    manifest.details = json!({ "duration_override_s": duration });
    manifest.finish(out, started)?;
    Ok(0)
}

pub fn export_settings(args: &ScenarioArgs, seed: u64, duration: f64, out: &Path) -> Result<u8> {
    let started = Instant::now();
    let cfg = load_scenario(args)?;
    ensure_dir(out)?;
    let mut manifest = RunManifest::new("export-settings");
    manifest.config_hash = Some(cfg.config_hash()?);
    manifest.scenario = Some(cfg.name.clone());
    manifest.seed = Some(seed);
    let mut summary = serde_json::Map::new();
    for (side, source, tag) in [
        ("alice", &cfg.randomness.alice, 10),
        ("bob", &cfg.randomness.bob, 11),
    ] {
        let stream = sample_settings(source, duration, derive_seed(seed, tag))?;
        let path = out.join(format!("settings_{side}.bits"));
        write_atomic(&path, |w| Ok(w.write_all(&stream.bits)?))?;
        manifest.record(&path);
        let lag1 = autocorrelation(&stream.bits, 1).ok();
        println!(
            "{side}: {} bits at {} Hz, fraction of ones {:.4}, lag-1 autocorrelation {}",
            stream.len(),
            stream.sample_rate,
            stream.balance(),
            lag1.map_or("n/a".to_string(), |c| format!("{c:+.4}"))
        );
        summary.insert(
            side.to_string(),
            json!({
                "bits": stream.len(),
                "sample_rate_hz": stream.sample_rate,
                "stochastic": stream.stochastic,
                "balance": stream.balance(),
                "lag1_autocorrelation": lag1,
            }),
        );
    }
    manifest.details = serde_json::Value::Object(summary);
    manifest.finish(out, started)?;
    Ok(0)
}
