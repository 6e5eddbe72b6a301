use std::path::Path;

use criterion::{criterion_group, criterion_main, Criterion};
use hawk_core::creagentive::{run, RunConfig};

fn tower(c: &mut Criterion) {
    let project = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/stories/tower");
    let out = tempfile::tempdir().unwrap();
    let mut group = c.benchmark_group("story");
    group.sample_size(20);
    for (name, concurrent) in [("tower_3_candidates_concurrent", true), ("tower_3_candidates_sequential", false)] {
        let mut config = RunConfig::new(&project, out.path());
        config.seed = 11;
        config.settings.concurrent_candidates = concurrent;
        group.bench_function(name, |b| b.iter(|| run(&config).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, tower);
criterion_main!(benches);
