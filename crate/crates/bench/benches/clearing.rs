use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use ulmp_core::ccg::oracle::ImeusOracle;
use ulmp_core::ccg::{sets_with_wind, solve_rscuc, CcgOptions};
use ulmp_core::copula;
use ulmp_core::formulation::{ModelVariant, Realization, UncertaintySets};
use ulmp_core::history::{synthetic_history, SynthConfig};
use ulmp_core::imeus::{Imeus, WindSet};
use ulmp_core::pricing::{price_report, solve_rsced};
use ulmp_core::pjm5;

fn sets(c: &mut Criterion) {
    let hist = synthetic_history(&SynthConfig::default());
    c.bench_function("copula_fit_300d", |b| b.iter(|| copula::fit(black_box(&hist)).unwrap()));
    let model = copula::fit(&hist).unwrap();
    let case = pjm5();
    let fc = &case.wind_farms[0].forecast;
    c.bench_function("sample_1000", |b| b.iter(|| model.sample_day_ahead(black_box(fc), 1000, 1, 400.0).unwrap()));
    let samples = model.sample_day_ahead(fc, 1000, 1, 400.0).unwrap();
    c.bench_function("imeus_fit_od4", |b| b.iter(|| Imeus::fit(black_box(&samples), 0.9, 4).unwrap()));
    let set = Imeus::fit(&samples, 0.9, 4).unwrap();
    let dir: Vec<f64> = (0..24).map(|t| if t % 2 == 0 { 1.0 } else { -0.5 }).collect();
    c.bench_function("oracle_maximize_od4", |b| {
        b.iter(|| {
            let mut o = ImeusOracle::new(&set).unwrap();
            o.maximize(black_box(&dir)).unwrap()
        })
    });
}

fn clearing(c: &mut Criterion) {
    let case = pjm5();
    let det = UncertaintySets::deterministic(&case);
    let opts = CcgOptions::default();
    let sol = solve_rscuc(&case, &det, ModelVariant::MODEL1, &opts).unwrap();
    let fc = Realization::forecast(&case);
    c.bench_function("rsced_pjm5", |b| {
        b.iter(|| {
            let r = solve_rsced(&case, ModelVariant::MODEL1, black_box(&sol.commitment), &fc).unwrap();
            price_report(&r, &case)
        })
    });
    let mut g = c.benchmark_group("rscuc");
    g.sample_size(10);
    g.bench_function("pjm5_deterministic", |b| b.iter(|| solve_rscuc(&case, black_box(&det), ModelVariant::MODEL1, &opts).unwrap()));
    let hist = synthetic_history(&SynthConfig::default());
    let model = copula::fit(&hist).unwrap();
    let w = &case.wind_farms[0];
    let samples = model.sample_day_ahead(&w.forecast, 1000, 1, w.capacity).unwrap();
    let set = Imeus::fit(&samples, 0.9, 4).unwrap().with_budget(&w.forecast, w.capacity, 0).unwrap();
    let robust = sets_with_wind(&case, vec![WindSet::Imeus(set)], 24);
    g.bench_function("pjm5_imeus_od4", |b| b.iter(|| solve_rscuc(&case, black_box(&robust), ModelVariant::MODEL1, &opts).unwrap()));
    g.finish();
}

criterion_group!(benches, sets, clearing);
criterion_main!(benches);
