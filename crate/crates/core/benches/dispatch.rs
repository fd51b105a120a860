use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dcshare::synth::{self, SynthOptions};
use dcshare::{grid_search, optimize, sweep, voltage_grid, Execution, GridOptions, SolveRequest};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn grid(c: &mut Criterion) {
    let net = synth::batch(3, 1, &SynthOptions::new(3)).remove(0);
    let mut group = c.benchmark_group("grid_search");
    group.sample_size(10);
    for (name, exec) in MODES {
        let mut opts = GridOptions::new(40);
        opts.execution = exec;
        group.bench_function(BenchmarkId::new(name, 40), |b| {
            b.iter(|| grid_search(&net, net.v_load_min, &opts))
        });
    }
    group.finish();
}

fn voltage_sweep(c: &mut Criterion) {
    let net = synth::batch(5, 1, &SynthOptions::new(3)).remove(0);
    let req = SolveRequest::at_min_voltage(net.clone());
    let points = voltage_grid(net.v_load_min, net.v_load_max, 8);
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, points.len()), |b| {
            b.iter(|| sweep(&req, &points, exec))
        });
    }
    group.finish();
}

fn single_solve(c: &mut Criterion) {
    let net = synth::batch(9, 1, &SynthOptions::new(4)).remove(0);
    let req = SolveRequest::at_min_voltage(net);
    c.bench_function("optimize/4-branch", |b| b.iter(|| optimize(&req, false)));
}

criterion_group!(benches, grid, voltage_sweep, single_solve);
criterion_main!(benches);
