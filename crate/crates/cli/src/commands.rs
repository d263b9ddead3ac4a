use anyhow::{bail, ensure, Context, Result};
use std::io::Write;
use std::path::{Path, PathBuf};

use teer_core::gateway::{wire_schema, ReplayFeed};
use teer_core::scenarios::{calibrate as fit, write_scenarios};
use teer_core::trials::{mean, replay, run_trial, summarize, verify, GroupRow, Scenario, TrialLog, TrialRow};
use teer_core::{ControlPath, Segment, SessionConfig};

use crate::Format;

/// Manual residual twist the canonical twist script is calibrated to (deg):
/// the centre of the manual acceptance band.
const CANONICAL_TWIST: f64 = 28.0;
/// Coupled extension the canonical step-2 script is calibrated to (mm).
const CANONICAL_EXTENSION: f64 = 6.0;

pub fn load_config(path: Option<&Path>) -> Result<SessionConfig> {
    match path {
        Some(p) => SessionConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(SessionConfig::default()),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    Scenario::load(path).with_context(|| format!("loading scenario {}", path.display()))
}

#[derive(serde::Serialize)]
struct RunSummary<'a> {
    scenario: &'a str,
    trials: Vec<TrialRow>,
    groups: Vec<GroupRow>,
}

pub fn run(
    config: &SessionConfig,
    scenario: &Path,
    control: ControlPath,
    target: Option<Segment>,
    trials: Option<usize>,
    canonical: bool,
    out: &Path,
) -> Result<()> {
    let scenario = load_scenario(scenario)?;
    if let Some(t) = target {
        ensure!(t == scenario.target, "scenario {} targets {:?}, not {:?}", scenario.name, scenario.target, t);
    }
    let pool: Vec<_> = if canonical {
        scenario.canonical_for(control).into_iter().collect()
    } else {
        scenario.variants_for(control)
    };
    ensure!(!pool.is_empty(), "scenario {} has no {control:?} scripts", scenario.name);
    let n = trials.unwrap_or(pool.len());
    ensure!(n >= 1 && n <= pool.len(), "scenario {} has {} {control:?} scripts, {n} requested", scenario.name, pool.len());

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut logs = Vec::new();
    for script in &pool[..n] {
        let log = run_trial(script, config).with_context(|| format!("running {}", script.name))?;
        let path = out.join(format!("{}.jsonl", script.name));
        log.save(&path).with_context(|| format!("writing {}", path.display()))?;
        let m = log.summary.as_ref().expect("finished trials carry metrics");
        println!(
            "{}  total {:.2} s  corrections {}  along-line {:+.2} mm  twist {}  extension {:.2} mm",
            path.display(),
            m.timings.total,
            m.corrections,
            m.placement.along_line_position,
            m.residual_twist.map_or("-".to_string(), |t| format!("{t:.2} deg")),
            m.coupled_extension
        );
        logs.push(log);
    }
    let summary = RunSummary {
        scenario: &scenario.name,
        trials: logs.iter().map(TrialRow::new).collect::<teer_core::Result<_>>()?,
        groups: summarize(&logs)?,
    };
    let json = out.join("metrics.json");
    std::fs::write(&json, serde_json::to_string_pretty(&summary)? + "\n")?;
    write_csv(std::fs::File::create(out.join("metrics.csv"))?, &summary.groups)?;
    println!("{}", json.display());
    Ok(())
}

fn write_csv<W: Write, T: serde::Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for row in rows {
        csv.serialize(row)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn replay_stdout(config: &SessionConfig, path: &Path, speed: f64) -> Result<()> {
    let log = TrialLog::load(path).with_context(|| format!("loading {}", path.display()))?;
    verify(&log, config)?;
    let mut feed = ReplayFeed::new(config, &log, "replay");
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (i, frame) in replay(&log, config, speed)?.enumerate() {
        std::thread::sleep(frame.delay);
        for env in feed.frame(&frame, i as u64) {
            writeln!(out, "{}", env.to_json())?;
        }
    }
    if let Some(env) = feed.summary() {
        writeln!(out, "{}", env.to_json())?;
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct MetricsReport {
    trials: Vec<TrialRow>,
    groups: Vec<GroupRow>,
}

pub fn metrics(config: &SessionConfig, pattern: &str, format: Format, per_trial: bool) -> Result<()> {
    let mut paths: Vec<PathBuf> = glob::glob(pattern).with_context(|| format!("bad glob {pattern}"))?.collect::<Result<_, _>>()?;
    paths.sort();
    if paths.is_empty() {
        bail!("no logs match {pattern}");
    }
    let mut logs = Vec::new();
    for p in &paths {
        let log = TrialLog::load(p).with_context(|| format!("loading {}", p.display()))?;
        verify(&log, config).with_context(|| format!("recomputing metrics for {}", p.display()))?;
        logs.push(log);
    }
    let report = MetricsReport {
        trials: logs.iter().map(TrialRow::new).collect::<teer_core::Result<_>>()?,
        groups: summarize(&logs)?,
    };
    let stdout = std::io::stdout();
    match format {
        Format::Json => writeln!(stdout.lock(), "{}", serde_json::to_string_pretty(&report)?)?,
        Format::Csv if per_trial => write_csv(stdout.lock(), &report.trials)?,
        Format::Csv => write_csv(stdout.lock(), &report.groups)?,
    }
    Ok(())
}

struct Band {
    name: &'static str,
    value: f64,
    lo: f64,
    hi: f64,
}

pub fn calibrate(config: &SessionConfig, dir: &Path, write: Option<&Path>) -> Result<()> {
    let step2 = load_scenario(&dir.join("step2.json"))?;
    let twist = load_scenario(&dir.join("twist.json"))?;
    let canon = |s: &Scenario| s.canonical_for(ControlPath::Manual).cloned().with_context(|| format!("{} has no manual canonical script", s.name));
    let cal = fit(config, &canon(&step2)?, &canon(&twist)?, CANONICAL_TWIST)?;
    println!("k_couple      {:.6} mm/deg (configured {:.6})", cal.k_couple, config.friction.k_couple);
    println!("release_gain  {:.6} 1/mm   (configured {:.6})", cal.release_gain, config.friction.release_gain);
    println!("canonical twist {:.3} deg", cal.canonical_twist);

    let mut tuned = config.clone();
    tuned.friction.k_couple = cal.k_couple;
    tuned.friction.release_gain = cal.release_gain;

    let family = |s: &Scenario, control: ControlPath, f: fn(&TrialLog) -> f64| -> Result<Vec<f64>> {
        s.variants_for(control).into_iter().map(|script| Ok(f(&run_trial(script, &tuned)?))).collect()
    };
    let ext = |l: &TrialLog| l.summary.as_ref().map_or(f64::NAN, |m| m.coupled_extension);
    let tw = |l: &TrialLog| l.summary.as_ref().and_then(|m| m.residual_twist).unwrap_or(f64::NAN);

    let canonical_ext = ext(&run_trial(&canon(&step2)?, &tuned)?);
    let robotic_ext = family(&step2, ControlPath::Robotic, ext)?;
    let bands = [
        Band { name: "canonical step-2 extension (mm)", value: canonical_ext, lo: CANONICAL_EXTENSION - 1e-6, hi: CANONICAL_EXTENSION + 1e-6 },
        Band { name: "manual step-2 family extension (mm)", value: mean(&family(&step2, ControlPath::Manual, ext)?), lo: 4.0, hi: 8.0 },
        Band { name: "robotic step-2 max extension (mm)", value: robotic_ext.iter().cloned().fold(0.0, f64::max), lo: 0.0, hi: 0.0 },
        Band { name: "manual twist family (deg)", value: mean(&family(&twist, ControlPath::Manual, tw)?), lo: 24.0, hi: 32.0 },
        Band { name: "robotic twist family (deg)", value: mean(&family(&twist, ControlPath::Robotic, tw)?), lo: 0.0, hi: 13.0 },
    ];
    let mut failed = 0;
    for b in &bands {
        let ok = b.value >= b.lo && b.value <= b.hi;
        failed += usize::from(!ok);
        println!("{} {:<38} {:9.4} in [{}, {}]", if ok { "PASS" } else { "FAIL" }, b.name, b.value, b.lo, b.hi);
    }
    if let Some(path) = write {
        std::fs::write(path, serde_json::to_string_pretty(&tuned)? + "\n").with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    ensure!(failed == 0, "{failed} calibration threshold(s) missed");
    Ok(())
}

pub fn generate(config: &SessionConfig, out: &Path) -> Result<()> {
    for path in write_scenarios(config, out)? {
        println!("{}", path.display());
    }
    Ok(())
}

pub fn schema(out: Option<&Path>) -> Result<()> {
    let text = wire_schema();
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}
