//! Searchlight and permutation test under the rayon pool and on one thread.
//!
//! `cargo bench -p xdecode-core` reports both modes side by side; build with
//! `--no-default-features` to check the sequential fallback compiles alone.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use xdecode::exec::Execution;
use xdecode::io::{generate_synth, SynthConfig};
use xdecode::partition::make_plan_grid;
use xdecode::searchlight::{run_searchlight, SearchlightConfig};
use xdecode::stats::{sign_flip_permutation_test, PermutationConfig, TfceConfig};
use xdecode::volume::{BrainMask, VoxelGrid};

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn searchlight(c: &mut Criterion) {
    let cfg: SynthConfig = serde_json::from_str(
        r#"{"seed": 1, "dims": [8, 8, 8], "voxel_size_mm": 3.0, "informative": [219, 220, 227],
            "n_source": 80, "n_target": 60, "trial_length": 2, "separation": 2.0}"#,
    )
    .unwrap();
    let (ds, _) = generate_synth(&cfg).unwrap();
    let grid = make_plan_grid(&ds.trials, 4, &[20], 7).unwrap();
    let plans: Vec<_> = grid.column(0).into_iter().cloned().collect();
    let sl = SearchlightConfig {
        radius_mm: 6.0,
        ..SearchlightConfig::default()
    };
    let mut g = c.benchmark_group("searchlight_8cube");
    g.sample_size(10).measurement_time(Duration::from_secs(20));
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_searchlight(black_box(&ds), &plans, &sl, exec).unwrap())
        });
    }
    g.finish();
}

fn permutation(c: &mut Criterion) {
    let grid = VoxelGrid::isotropic([10, 10, 10], 3.0).unwrap();
    let mask = BrainMask::full(grid);
    let maps: Vec<Vec<f64>> = (0..12)
        .map(|s| (0..1000).map(|v| ((s * 7919 + v * 104_729) % 1000) as f64 / 1000.0 - 0.5).collect())
        .collect();
    let cfg = PermutationConfig {
        n_perm: 200,
        sigma_mm: 6.0,
        seed: 3,
    };
    let mut g = c.benchmark_group("permutation_10cube");
    g.sample_size(10).measurement_time(Duration::from_secs(20));
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| sign_flip_permutation_test(black_box(&maps), &mask, &cfg, TfceConfig::default(), exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, searchlight, permutation);
criterion_main!(benches);
