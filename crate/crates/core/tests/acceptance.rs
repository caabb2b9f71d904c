//! One line per acceptance criterion. Exits non-zero when any fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use scenefix_core::backend::mock::MockConfig;
use scenefix_core::eval::*;
use scenefix_core::image::{Image, ObjectMask};
use scenefix_core::orchestrator::*;
use scenefix_core::pdss::{refine, CompositeMask, RefineConfig};
use scenefix_core::scene::SubtaskKind;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{:.3}", v))
}

fn oracle_correction() -> Outcome {
    let suite = generate_suite(100, 7);
    let summary = SuiteSummary::of(&suite);
    let cfg = EvalConfig::new(true, Schedule::Parallel, 0.0, 0.0, 0.75);
    let t0 = Instant::now();
    let out = run_config(&suite, &cfg, &EvalOptions::default()).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let row = ConfigRow::from_outcomes(&cfg, &out);
    let a = &row.after;
    let ok = a.counting == Some(1.0)
        && a.color == Some(1.0)
        && a.spatial.is_some_and(|s| s >= 0.95)
        && summary.crowded <= 5
        && secs < 60.0;
    check(
        ok,
        format!(
            "counting {} color {} spatial {} (crowded {}/100, uncrowded spatial {}), {:.1}s",
            pct(a.counting),
            pct(a.color),
            pct(a.spatial),
            summary.crowded,
            pct(row.spatial_uncrowded),
            secs
        ),
    )
}

fn verifier_ablation() -> Outcome {
    let suite = generate_suite(100, 7);
    let opts = EvalOptions::default();
    let mut acc = Vec::new();
    for verify in [true, false] {
        let cfg = EvalConfig::new(verify, Schedule::Parallel, 0.2, NOISY_EDIT_FAILURE, 0.75);
        let out = run_config(&suite, &cfg, &opts).map_err(|e| e.to_string())?;
        acc.push(ConfigRow::from_outcomes(&cfg, &out).after.attribute.unwrap_or(0.0));
    }
    let gain = (acc[0] - acc[1]) * 100.0;
    check(
        gain >= 10.0,
        format!(
            "attribute accuracy verifier on {:.3}, off {:.3}, gain {:+.2} points (eps_vlm 0.2, eps_edit {})",
            acc[0], acc[1], gain, NOISY_EDIT_FAILURE
        ),
    )
}

fn parallel_speedup() -> Outcome {
    let (img, desc) = four_recolors();
    let e = engine_with(
        MockConfig {
            latency_ms: 200,
            ..MockConfig::default()
        },
        None,
    );
    let mut runs = Vec::new();
    for schedule in [Schedule::Serial, Schedule::Parallel] {
        let opts = JobOptions {
            schedule,
            refine: RefineConfig {
                steps: 4,
                ..RefineConfig::default()
            },
            ..JobOptions::default()
        };
        let id = e.submit_image(&img, desc, opts).map_err(|x| x.to_string())?;
        let t0 = Instant::now();
        let rec = e.run(&id).map_err(|x| x.to_string())?;
        let wall = t0.elapsed().as_secs_f64() * 1000.0;
        let attrs = rec
            .subtasks
            .iter()
            .filter(|s| matches!(s.subtask.kind, SubtaskKind::Attribute(_)))
            .count();
        if rec.status != JobStatus::Done || attrs != 4 {
            return Err(format!("{schedule:?} run ended {:?} with {attrs} attribute subtasks", rec.status));
        }
        runs.push((rec.timings.correcting_ms, wall, e.final_image(&id).map_err(|x| x.to_string())?));
    }
    let ratio = runs[1].0 / runs[0].0;
    let same = runs[0].2 == runs[1].2;
    check(
        ratio <= 0.5 && same,
        format!(
            "correction phase serial {:.0} ms, parallel {:.0} ms, ratio {:.2}; whole job {:.0} vs {:.0} ms; images identical: {same}",
            runs[0].0, runs[1].0, ratio, runs[0].1, runs[1].1
        ),
    )
}

fn pdss_oracle() -> Outcome {
    let cases = oracle::check_all_patterns()?;
    check(cases == 48, format!("{cases} cases (16 masks x K in 0..=2, T = 2) match exactly"))
}

fn background_preservation() -> Outcome {
    let e = engine();
    let id = e
        .submit_image(&deer_image(), DEER_SCENE, JobOptions::default())
        .map_err(|x| x.to_string())?;
    let rec = e.run(&id).map_err(|x| x.to_string())?;
    let out = rec.output.ok_or("job produced no output")?;
    let composite = Image::from_png(&e.artifact(&out.composite).map_err(|x| x.to_string())?).map_err(|x| x.to_string())?;
    let pixel = ObjectMask::from_png(&e.artifact(&out.mask).map_err(|x| x.to_string())?).map_err(|x| x.to_string())?;
    let mask = CompositeMask::new(pixel);
    let inside = oracle::cell_dilation(&mask);
    let full = RefineConfig {
        k_fraction: 1.0,
        ..RefineConfig::default()
    };
    let (refined, _) = refine(&composite, &mask, &full, e.backends()).map_err(|x| x.to_string())?;
    let worst = oracle::max_diff_outside(&refined, &composite, &inside);
    let mut schedules_ok = true;
    for steps in [1, 2, 4, 10, 40, 41] {
        let cfg = RefineConfig {
            steps,
            ..RefineConfig::default()
        };
        let (_, trace) = refine(&composite, &mask, &cfg, e.backends()).map_err(|x| x.to_string())?;
        let k = (0.75 * steps as f64).round() as usize;
        let masked: Vec<usize> = trace.iter().filter(|t| t.masked).map(|t| t.step).collect();
        schedules_ok &= masked == (0..k).collect::<Vec<_>>();
    }
    check(
        worst <= 1 && schedules_ok,
        format!(
            "K = T: max outside-mask change {worst} over {} pixels; K = round(0.75 T) masked steps exact: {schedules_ok}",
            composite.width() * composite.height() - inside.count() as u32
        ),
    )
}

fn loop_termination() -> Outcome {
    let (img, desc) = four_recolors();
    let e = engine_with(
        MockConfig {
            edit_failure: 1.0,
            ..MockConfig::default()
        },
        None,
    );
    let id = e.submit_image(&img, desc, JobOptions::default()).map_err(|x| x.to_string())?;
    let rec = e.run(&id).map_err(|x| x.to_string())?;
    let max = rec.options.loop_cfg.max_iterations;
    let loops: Vec<&SubtaskState> = rec.subtasks.iter().filter(|s| !s.subtask.is_counting()).collect();
    let all_failed = loops
        .iter()
        .all(|s| s.phase == SubtaskPhase::Failed && s.executor_calls == max);
    let preserved = e.final_image(&id).map_err(|x| x.to_string())? == img;
    check(
        all_failed && preserved && loops.len() == 4 && rec.status == JobStatus::PartiallyCorrected,
        format!(
            "{}/{} subtasks Failed after {max} executor calls, status {:?}, original preserved: {preserved}",
            loops.iter().filter(|s| s.phase == SubtaskPhase::Failed).count(),
            loops.len(),
            rec.status
        ),
    )
}

fn determinism() -> Outcome {
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    let mut runs = Vec::new();
    for d in &dirs {
        let e = engine_with(MockConfig::default(), Some(d.path().to_path_buf()));
        let opts = JobOptions {
            schedule: Schedule::Serial,
            ..JobOptions::default()
        };
        let id = e.submit_image(&deer_image(), DEER_SCENE, opts).map_err(|x| x.to_string())?;
        e.run(&id).map_err(|x| x.to_string())?;
        let png = std::fs::read(d.path().join(&id).join("refined.png")).map_err(|x| x.to_string())?;
        runs.push((png, e.comparable_log(&id).map_err(|x| x.to_string())?));
    }
    let same_png = runs[0].0 == runs[1].0;
    let same_log = runs[0].1 == runs[1].1;
    check(
        same_png && same_log,
        format!(
            "refined.png identical: {same_png}; {} log events identical modulo timestamps: {same_log}",
            runs[0].1.len()
        ),
    )
}

fn review_flow() -> Outcome {
    let e = engine();
    let (img, desc) = four_recolors();
    let opts = JobOptions {
        mode: JobMode::Review,
        ..JobOptions::default()
    };
    let id = e.submit_image(&img, desc, opts).map_err(|x| x.to_string())?;
    e.run(&id).map_err(|x| x.to_string())?;
    let views = e.pending(&id).map_err(|x| x.to_string())?;
    let n = views.len();
    e.review_action(&id, &views[0].subtask_id, ReviewVerdict::RejectRetry)
        .map_err(|x| x.to_string())?;
    let crop = e.artifact(&views[1].candidate).map_err(|x| x.to_string())?;
    let hash = scenefix_core::runlog::ArtifactStore::in_memory().put(&crop).map_err(|x| x.to_string())?;
    e.review_action(&id, &views[1].subtask_id, ReviewVerdict::Substitute(crop))
        .map_err(|x| x.to_string())?;
    let listed = e.artifacts(&id).map_err(|x| x.to_string())?.contains(&hash);
    let mut rec = None;
    for v in e.pending(&id).map_err(|x| x.to_string())? {
        rec = Some(e.review_action(&id, &v.subtask_id, ReviewVerdict::Approve).map_err(|x| x.to_string())?);
    }
    let status = rec.map(|r| r.status);
    check(
        n == 4 && listed && status == Some(JobStatus::Done),
        format!("{n} parked; reject, substitute (upload listed: {listed}) and approve end in {status:?}"),
    )
}

fn suite_balance() -> Outcome {
    let suite = generate_suite(100, 7);
    let summary = SuiteSummary::of(&suite);
    let total: usize = summary.corruption_counts.values().sum();
    let uniform = total as f64 / CorruptionKind::ALL.len() as f64;
    let worst = CorruptionKind::ALL
        .iter()
        .map(|k| (*summary.corruption_counts.get(k).unwrap_or(&0) as f64 - uniform).abs() / uniform)
        .fold(0.0, f64::max);
    let cfg = ScoreConfig::default();
    let violated = suite.iter().all(|s| !score(&s.image(), &s.spec, &cfg).all_satisfied());
    let clean = suite.iter().all(|s| score(&s.clean_image(), &s.spec, &cfg).all_satisfied());
    let sizes = suite
        .iter()
        .all(|s| (2..=7).contains(&s.spec.objects.len()) && (1..=3).contains(&s.corruptions.len()));
    check(
        worst <= 0.10 && violated && clean && sizes,
        format!(
            "{total} corruptions, max deviation from uniform {:.1}%; corrupted scenes violate a predicate: {violated}; clean scenes score 1.0: {clean}",
            worst * 100.0
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("end-to-end oracle correction", oracle_correction),
        ("verification ablation", verifier_ablation),
        ("parallel scheduling", parallel_speedup),
        ("refinement blending oracle", pdss_oracle),
        ("background preservation", background_preservation),
        ("loop termination", loop_termination),
        ("determinism", determinism),
        ("review flow (secondary)", review_flow),
        ("suite balance (supporting)", suite_balance),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
