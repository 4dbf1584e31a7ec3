//! Acceptance gate: one line per criterion, non-zero exit if any fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{SVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use otune::checks::{self, CheckReport};
use otune::harness::{self, metrics, RunLog, Scenario, ScenarioRun};
use otune::lie::{self, RotVec3};
use otune::optim;
use otune::oracles::{self, ScalarToy};
use otune::policy;

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name);
    Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn run(s: &Scenario) -> Result<ScenarioRun, String> {
    let run = harness::run_scenario(s).map_err(|e| e.to_string())?;
    if let Some(log) = run.logs.iter().find(|l| l.diverged.is_some()) {
        return Err(format!(
            "{} diverged: {}",
            log.name,
            log.diverged.as_deref().unwrap_or("")
        ));
    }
    Ok(run)
}

fn member<'a>(run: &'a ScenarioRun, name: &str) -> Result<&'a RunLog, String> {
    run.get(name)
        .ok_or_else(|| format!("no roster member {name}"))
}

fn figure8() -> &'static (Scenario, Result<ScenarioRun, String>) {
    static RUN: OnceLock<(Scenario, Result<ScenarioRun, String>)> = OnceLock::new();
    RUN.get_or_init(|| {
        let s = scenario("figure8_detune.toml");
        let r = run(&s);
        (s, r)
    })
}

fn worst(reports: &[CheckReport]) -> (bool, String) {
    let pass = reports.iter().all(CheckReport::passed);
    let w = reports
        .iter()
        .max_by(|a, b| (a.worst / a.tol).total_cmp(&(b.worst / b.tol)))
        .expect("non-empty");
    let failing: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    let mut detail = format!(
        "{} checks, worst {} {:.2e} (tol {:.0e})",
        reports.len(),
        w.name,
        w.worst,
        w.tol
    );
    if !failing.is_empty() {
        detail.push_str(&format!("; failing: {}", failing.join(", ")));
    }
    (pass, detail)
}

fn derivative_correctness() -> Outcome {
    let reports = checks::jacobian_checks(2024, 50, 1e-4).map_err(|e| e.to_string())?;
    if reports.iter().any(|r| r.samples < 50) {
        return Err("fewer than 50 points for some map".into());
    }
    Ok(worst(&reports))
}

fn sensitivity_equivalence() -> Outcome {
    let env = checks::figure8_env();
    let theta = SVector::from(policy::SIM_EXPERT_THETA);
    let start = Instant::now();
    let r = checks::sensitivity_check("y_T vs re-simulation, T=1000", &env, &theta, 1000, 1e-3)
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    Ok((
        r.passed() && secs < 30.0,
        format!("relative error {:.2e} (tol 1e-3) in {secs:.2} s", r.worst),
    ))
}

fn difftune_gradient() -> Outcome {
    let env = checks::figure8_env();
    let theta = SVector::from(policy::SIM_EXPERT_THETA);
    let toy = ScalarToy::default();
    let mut reports = Vec::new();
    for h in [1, 10, 250] {
        let r = checks::episode_gradient_check(&format!("quad H={h}"), &env, &theta, 600, h, 1e-4);
        reports.push(r.map_err(|e| e.to_string())?);
        let r = checks::episode_gradient_check(
            &format!("scalar H={h}"),
            &toy,
            &SVector::from([0.5]),
            2,
            h,
            1e-4,
        );
        reports.push(r.map_err(|e| e.to_string())?);
    }
    Ok(worst(&reports))
}

fn detuned_trend() -> Outcome {
    let (s, run) = figure8();
    let run = run.as_ref().map_err(Clone::clone)?;
    let expert = member(run, "Expert")?;
    let mgaps = member(run, "M-GAPS")?;
    let total = |n: &str| member(run, n).map(RunLog::total_cost);
    let (m, best, worst, oprf) = (
        total("M-GAPS")?,
        total("DiffTune*")?,
        total("DiffTune")?,
        total("OPRF")?,
    );

    let regret = optim::quasi_regret(&mgaps.costs(), &expert.costs()).map_err(|e| e.to_string())?;
    let (first, last) =
        metrics::quarter_slopes(&regret).ok_or("run too short for quarter slopes")?;
    let a = last < 0.1 * first;

    let b = m <= best && best <= worst && worst <= oprf;

    let lap = s.steps_per_lap();
    let m_laps = metrics::per_lap(&mgaps.costs(), lap);
    let e_laps = metrics::per_lap(&expert.costs(), lap);
    let ratio = m_laps
        .get(7)
        .zip(e_laps.get(7))
        .map(|(m, e)| m / e)
        .ok_or("fewer than 8 laps")?;
    let c = ratio <= 1.1;

    Ok((
        a && b && c,
        format!(
            "(a) {} regret slope last/first quarter {:.3}; (b) {} totals M-GAPS {m:.4e} <= DiffTune* {best:.4e} <= DiffTune {worst:.4e} <= OPRF {oprf:.4e}; (c) {} lap-8 cost ratio to expert {ratio:.3}",
            verdict(a),
            last / first,
            verdict(b),
            verdict(c)
        ),
    ))
}

fn episode_length() -> Outcome {
    let (s, run) = figure8();
    let run = run.as_ref().map_err(Clone::clone)?;
    let lap = s.steps_per_lap();
    let aligned: Vec<(usize, f64)> = run
        .sweep
        .iter()
        .copied()
        .filter(|(h, _)| *h == lap || *h == 2 * lap)
        .collect();
    let misaligned: Vec<(usize, f64)> = run
        .sweep
        .iter()
        .copied()
        .filter(|(h, _)| h % lap != 0)
        .collect();
    if aligned.len() != 2 || misaligned.len() < 3 {
        return Err(format!(
            "sweep {:?} lacks 1- and 2-lap lengths or 3 misaligned ones",
            s.sweep
        ));
    }
    let worst_aligned = aligned.iter().map(|r| r.1).fold(f64::MIN, f64::max);
    let best_misaligned = misaligned.iter().map(|r| r.1).fold(f64::MAX, f64::min);
    let table: Vec<String> = run
        .sweep
        .iter()
        .map(|(h, c)| format!("{h}:{c:.4e}"))
        .collect();
    Ok((
        worst_aligned <= best_misaligned,
        format!(
            "worst aligned {worst_aligned:.4e} vs best misaligned {best_misaligned:.4e}; sweep {}",
            table.join(" ")
        ),
    ))
}

fn wind_adaptation() -> Outcome {
    let run = run(&scenario("wind.toml"))?;
    let total = |n: &str| member(&run, n).map(RunLog::total_cost);
    let (m, e, d) = (total("M-GAPS")?, total("Expert")?, total("Detune")?);
    Ok((
        m < e && m < d,
        format!("M-GAPS {m:.4e}, Expert {e:.4e}, Detune {d:.4e}"),
    ))
}

fn payload_run() -> &'static Result<ScenarioRun, String> {
    static RUN: OnceLock<Result<ScenarioRun, String>> = OnceLock::new();
    RUN.get_or_init(|| run(&scenario("payload.toml")))
}

fn payload_adaptation() -> Outcome {
    let run = payload_run().as_ref().map_err(Clone::clone)?;
    let m = member(run, "M-GAPS")?.tracking_cost();
    let e = member(run, "Expert")?.tracking_cost();
    Ok((
        m <= 0.5 * e,
        format!(
            "tracking M-GAPS {m:.4e} vs Expert {e:.4e} (ratio {:.3})",
            m / e
        ),
    ))
}

/// Mean parameter over the last 10 s minus the initial parameter.
fn delta_theta(log: &RunLog) -> Result<Vec<f64>, String> {
    let first = log.steps.first().ok_or("empty log")?.theta.clone();
    let rows: Vec<Vec<f64>> = log.steps.iter().map(|s| s.theta.clone()).collect();
    let count = (10.0 / log.dt).round() as usize;
    Ok(metrics::tail_mean(&rows, count)
        .iter()
        .zip(&first)
        .map(|(m, f)| m - f)
        .collect())
}

fn disturbance_specific() -> Outcome {
    let payload = payload_run().as_ref().map_err(Clone::clone)?;
    let wind = run(&scenario("wind.toml"))?;
    let dp = delta_theta(member(payload, "M-GAPS")?)?;
    let dw = delta_theta(member(&wind, "M-GAPS")?)?;
    let k = policy::KP_Z;
    let largest = (0..dp.len())
        .max_by(|a, b| dp[*a].abs().total_cmp(&dp[*b].abs()))
        .unwrap_or(k);
    Ok((
        dp[k].abs() > dw[k].abs(),
        format!(
            "|dkp_z| payload {:.3e} vs wind {:.3e}; largest payload change is {}",
            dp[k].abs(),
            dw[k].abs(),
            policy::PARAM_NAMES[largest]
        ),
    ))
}

fn car_improvement() -> Outcome {
    let s = scenario("car_circle.toml");
    let run = run(&s)?;
    let lap = s.steps_per_lap();
    let rms = |n: &str| -> Result<Vec<f64>, String> {
        let log = member(&run, n)?;
        let sq: Vec<f64> = log.steps.iter().map(|r| r.tracking).collect();
        Ok(metrics::per_lap_rms(&sq, lap))
    };
    let (m, d) = (rms("M-GAPS")?, rms("Detune")?);
    let (m3, d3) = m.get(2).zip(d.get(2)).ok_or("fewer than 3 laps")?;
    Ok((
        d3 / m3 >= 2.0,
        format!(
            "lap-3 RMS position error M-GAPS {m3:.4} m vs Detune {d3:.4} m (factor {:.2})",
            d3 / m3
        ),
    ))
}

fn oprf_sanity() -> Outcome {
    let theta = Vector2::new(1.0, 0.0);
    let mean = oracles::oprf_mean_update(
        |t: &Vector2<f64>| t.norm_squared(),
        &theta,
        0.01,
        100_000,
        5,
    );
    let descent = -2.0 * theta;
    let angle = (mean.dot(&descent) / (mean.norm() * descent.norm()))
        .clamp(-1.0, 1.0)
        .acos()
        .to_degrees();
    Ok((
        angle < 5.0,
        format!("mean update {mean:.4?}, angle to -grad {angle:.3} deg"),
    ))
}

fn robustness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_rt = 0.0f64;
    for i in 0..20_000 {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if axis.norm() < 1e-3 {
            continue;
        }
        let angle = match i % 4 {
            0 => rng.gen_range(0.0..1e-6),
            1 => rng.gen_range(2.9..=3.0),
            _ => rng.gen_range(0.0..=3.0),
        };
        let r = RotVec3::new(axis.normalize() * angle).map_err(|e| e.to_string())?;
        let back = lie::log_so3(&lie::exp_so3(&r)).map_err(|e| e.to_string())?;
        worst_rt = worst_rt.max((back.coords() - r.coords()).norm());
    }
    let roundtrip = worst_rt < 1e-10;

    let mut bounded = true;
    for &x in &[0.0, 1e-300, 1.0, 10.0, 40.0, 1e3, 1e300, f64::MAX] {
        for &b in &[0.01, 1.0, 6.0, 20.0] {
            for v in [x, -x] {
                let y = policy::softclamp(v, b);
                bounded &= y > -b && y < b;
            }
        }
    }

    let (s, first) = figure8();
    let first = first.as_ref().map_err(Clone::clone)?;
    let second = run(s)?;
    let reproducible = *first == second && csv_bytes(first)? == csv_bytes(&second)?;

    Ok((
        roundtrip && bounded && reproducible,
        format!(
            "{} exp/log roundtrip worst {worst_rt:.2e}; {} softclamp strict bounds; {} bitwise-identical logs across two runs",
            verdict(roundtrip),
            verdict(bounded),
            verdict(reproducible)
        ),
    ))
}

fn csv_bytes(run: &ScenarioRun) -> Result<Vec<Vec<u8>>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for log in &run.logs {
        let path = dir.path().join("log.csv");
        harness::write_csv(log, harness::Platform::Quad, &path).map_err(|e| e.to_string())?;
        out.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAILED"
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("derivative correctness", derivative_correctness),
        ("sensitivity equivalence", sensitivity_equivalence),
        ("DiffTune episode gradient", difftune_gradient),
        ("detuned-initialization trend", detuned_trend),
        ("episode-length sensitivity", episode_length),
        ("wind adaptation", wind_adaptation),
        ("payload adaptation", payload_adaptation),
        ("disturbance-specific adaptation", disturbance_specific),
        ("car improvement", car_improvement),
        ("OPRF estimator sanity", oprf_sanity),
        ("robustness bookkeeping", robustness),
    ];
    let start = Instant::now();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {:>2} {} {name} ({:.1} s): {detail}",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1} s",
        criteria.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
