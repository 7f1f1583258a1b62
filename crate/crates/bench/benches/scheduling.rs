use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use wfl_core::lambert::{lambert_w0, lambert_wm1, BRANCH_POINT};
use wfl_core::schedule::{build_lp, schedule_lp, schedule_round, solve_lp};
use wfl_core::system::{generate_population, sample_round_context};
use wfl_core::{device_bandwidth_for_deadline, min_max_latency_allocation, PopulationSpec, RoundContext, SystemConfig};

fn round(k: usize) -> (RoundContext, SystemConfig) {
    let spec = PopulationSpec {
        num_devices: k,
        ..PopulationSpec::default()
    };
    let cfg = SystemConfig {
        fading_sigma_db: Some(8.0),
        ..SystemConfig::default()
    };
    let profiles = generate_population(&spec, 7).unwrap();
    (sample_round_context(&profiles, &cfg, 1, 7).unwrap(), cfg)
}

fn lambert(c: &mut Criterion) {
    let xs: Vec<f64> = (1..=256).map(|i| BRANCH_POINT * f64::from(i) / 257.0).collect();
    c.bench_function("lambert_wm1/256", |b| {
        b.iter(|| xs.iter().map(|&x| lambert_wm1(black_box(x)).unwrap()).sum::<f64>())
    });
    c.bench_function("lambert_w0/256", |b| {
        b.iter(|| xs.iter().map(|&x| lambert_w0(black_box(x)).unwrap()).sum::<f64>())
    });
    c.bench_function("deadline_bandwidth", |b| {
        b.iter(|| device_bandwidth_for_deadline(0.1, black_box(1e-11), 3.98e-21, 1e7, 0.5))
    });
}

fn allocation(c: &mut Criterion) {
    let mut g = c.benchmark_group("min_max_allocation");
    for k in [2, 5, 10] {
        let (ctx, cfg) = round(40);
        let mut order = ctx.all_ids();
        order.sort_by(|&a, &b| ctx.device(b).channel.gain_sq.total_cmp(&ctx.device(a).channel.gain_sq));
        let subset = &order[..k];
        g.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| {
            b.iter(|| min_max_latency_allocation(black_box(subset), &ctx, &cfg).unwrap())
        });
    }
    g.finish();
}

fn greedy(c: &mut Criterion) {
    let mut g = c.benchmark_group("greedy");
    for k in [20, 40, 100] {
        let (ctx, cfg) = round(k);
        g.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| {
            b.iter(|| schedule_round(black_box(&ctx), &cfg, 0.7).unwrap())
        });
    }
    g.finish();
}

fn lp(c: &mut Criterion) {
    let mut g = c.benchmark_group("lp");
    g.sample_size(20);
    for k in [10, 40, 100, 200] {
        let (ctx, cfg) = round(k);
        let inst = build_lp(&ctx, &cfg).unwrap();
        g.bench_with_input(BenchmarkId::new("solve", k), &k, |b, _| {
            b.iter(|| solve_lp(black_box(&inst), 1e-9).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("schedule", k), &k, |b, _| {
            b.iter(|| schedule_lp(black_box(&ctx), &cfg, 1e-4).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, lambert, allocation, greedy, lp);
criterion_main!(benches);
