use criterion::{black_box, criterion_group, criterion_main, Criterion};

use obsdesign_core::design::{even_design, optimize_fim_design, Constraints};
use obsdesign_core::information::fim;
use obsdesign_core::likelihood::{fit_mle, FitSettings, Likelihood, NoiseSpec};
use obsdesign_core::model::{LogisticParams, ParamRanges, TimeGrid};
use obsdesign_core::noise::{synthesize, NoiseModel};
use obsdesign_core::seed::rng_from_seed;
use obsdesign_core::sobol::{total_effect_indices, Sampling};

fn likelihood(c: &mut Criterion) {
    let grid = TimeGrid::stepped(0.0, 80.0, 8.0).unwrap();
    let p = LogisticParams::new(0.21, 48.0, 4.7).unwrap();
    for (label, noise) in [
        ("loglik_iid_11", NoiseModel::iid(9.0).unwrap()),
        ("loglik_ou_11", NoiseModel::ou_stationary(0.02, 9.0).unwrap()),
    ] {
        let obs = synthesize(&LogisticParams::TRUE, &noise, &grid, &mut rng_from_seed(1));
        let lik = Likelihood::new(obs, NoiseSpec::known(&noise)).unwrap();
        c.bench_function(label, |b| b.iter(|| lik.eval(black_box(&p))));
    }
}

fn information(c: &mut Criterion) {
    let times = even_design(10, &Constraints::default()).unwrap();
    let ou = NoiseModel::ou_stationary(0.02, 9.0).unwrap();
    c.bench_function("fim_ou_logdet_10", |b| {
        b.iter(|| fim(&LogisticParams::TRUE, black_box(times.times()), &ou).unwrap().log_det())
    });
}

fn design(c: &mut Criterion) {
    let iid = NoiseModel::iid(9.0).unwrap();
    let mut g = c.benchmark_group("design");
    g.sample_size(10);
    g.bench_function("fim_design_iid_5_x10", |b| {
        b.iter(|| optimize_fim_design(&LogisticParams::TRUE, &iid, 5, &Constraints::default(), 10, 0).unwrap())
    });
    g.finish();
}

fn sobol(c: &mut Criterion) {
    let grid = TimeGrid::stepped(0.0, 80.0, 2.0).unwrap();
    let mut g = c.benchmark_group("sobol");
    g.sample_size(10);
    g.bench_function("total_effect_41x4096", |b| {
        b.iter(|| total_effect_indices(&ParamRanges::PAPER, &grid, 4096, Sampling::Sobol, 0).unwrap())
    });
    g.finish();
}

fn fitting(c: &mut Criterion) {
    let grid = TimeGrid::stepped(0.0, 80.0, 8.0).unwrap();
    let noise = NoiseModel::iid(9.0).unwrap();
    let obs = synthesize(&LogisticParams::TRUE, &noise, &grid, &mut rng_from_seed(2));
    let lik = Likelihood::new(obs, NoiseSpec::known(&noise)).unwrap();
    let settings = FitSettings {
        restarts: 10,
        ..FitSettings::default()
    };
    let mut g = c.benchmark_group("fit");
    g.sample_size(20);
    g.bench_function("fit_mle_iid_10_restarts", |b| b.iter(|| fit_mle(&lik, &settings, &mut rng_from_seed(3)).unwrap()));
    g.finish();
}

criterion_group!(benches, likelihood, information, design, sobol, fitting);
criterion_main!(benches);
