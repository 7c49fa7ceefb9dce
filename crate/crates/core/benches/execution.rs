use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use society_core::backend::{ScriptTable, ScriptedBackend};
use society_core::cluster::cluster_timeline;
use society_core::prompt::PromptSet;
use society_core::runner::{cmd_sweep, Config};
use society_core::{Engine, Execution, WorldConfig};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn simulation(c: &mut Criterion) {
    let cfg = WorldConfig {
        num_steps: 20,
        ..Default::default()
    };
    let backend = ScriptedBackend::new(ScriptTable::default(), 0);
    let templates = PromptSet::bundled();
    let mut g = c.benchmark_group("simulation_10x20");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let engine = Engine::new(&cfg, &backend, &templates).with_execution(exec);
                black_box(engine.run(|_| Ok(())).unwrap())
            })
        });
    }
    g.finish();
}

fn clustering(c: &mut Criterion) {
    let cfg = WorldConfig {
        num_agents: 40,
        num_steps: 50,
        ..Default::default()
    };
    let backend = ScriptedBackend::new(ScriptTable::default(), 0);
    let templates = PromptSet::bundled();
    let transcript = Engine::new(&cfg, &backend, &templates).run(|_| Ok(())).unwrap();
    let mut g = c.benchmark_group("cluster_timeline_40x50");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(cluster_timeline(&transcript, 5, exec)))
        });
    }
    g.finish();
}

fn sweep(c: &mut Criterion) {
    let mut g = c.benchmark_group("sweep_6x2x10");
    g.sample_size(10);
    for (name, exec) in MODES {
        let mut cfg = Config::default();
        cfg.world.num_steps = 10;
        cfg.sweep.trials_per_range = 2;
        cfg.runtime.execution = exec;
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let dir = tempfile::tempdir().unwrap();
                black_box(cmd_sweep(&cfg, &dir.path().join("s")).unwrap().completed())
            })
        });
    }
    g.finish();
}

criterion_group!(benches, simulation, clustering, sweep);
criterion_main!(benches);
