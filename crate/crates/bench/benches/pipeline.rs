use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use scenefix_bench::*;
use scenefix_core::backend::mock::MockConfig;
use scenefix_core::decompose::{decompose, DecomposerPromptConfig};
use scenefix_core::eval::{generate_suite, score, ScoreConfig};
use scenefix_core::geometry::Rect;
use scenefix_core::image::ObjectMask;
use scenefix_core::orchestrator::{JobOptions, Schedule};
use scenefix_core::pdss::{refine, CompositeMask, RefineConfig};
use scenefix_core::prompts::PromptSet;

fn bench_decompose(c: &mut Criterion) {
    let e = engine(MockConfig::default());
    let cfg = DecomposerPromptConfig::from_prompts(&PromptSet::default());
    c.bench_function("decompose/deer_scene", |b| {
        b.iter(|| decompose(black_box(DEER_SCENE), e.backends(), &cfg, &mut Vec::new()).unwrap())
    });
}

fn bench_detect(c: &mut Criterion) {
    let e = engine(MockConfig::default());
    let img = deer_image();
    c.bench_function("detect/bird", |b| b.iter(|| e.backends().detect(black_box(&img), "bird").unwrap()));
}

fn bench_refine(c: &mut Criterion) {
    let e = engine(MockConfig::default());
    let img = deer_image();
    let mask = CompositeMask::new(ObjectMask::from_rect(img.size(), Rect::new(10, 10, 60, 60)));
    let mut g = c.benchmark_group("refine");
    for steps in [10, 40] {
        let cfg = RefineConfig {
            steps,
            ..RefineConfig::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(steps), &cfg, |b, cfg| {
            b.iter(|| refine(&img, &mask, cfg, e.backends()).unwrap())
        });
    }
    g.finish();
}

fn bench_job(c: &mut Criterion) {
    let e = engine(MockConfig::default());
    let img = four_image();
    let mut g = c.benchmark_group("job/four_recolors");
    g.sample_size(20);
    for schedule in [Schedule::Serial, Schedule::Parallel] {
        let opts = JobOptions {
            schedule,
            refine: RefineConfig {
                steps: 10,
                ..RefineConfig::default()
            },
            ..JobOptions::default()
        };
        g.bench_function(format!("{schedule:?}"), |b| {
            b.iter(|| {
                let id = e.submit_image(&img, FOUR, opts.clone()).unwrap();
                e.run(&id).unwrap()
            })
        });
    }
    g.finish();
}

fn bench_score(c: &mut Criterion) {
    let suite = generate_suite(20, 7);
    let images: Vec<_> = suite.iter().map(|s| s.image()).collect();
    let cfg = ScoreConfig::default();
    c.bench_function("score/suite20", |b| {
        b.iter(|| {
            suite
                .iter()
                .zip(&images)
                .map(|(s, img)| score(img, &s.spec, &cfg).all_satisfied())
                .filter(|ok| *ok)
                .count()
        })
    });
}

criterion_group!(benches, bench_decompose, bench_detect, bench_refine, bench_job, bench_score);
criterion_main!(benches);
