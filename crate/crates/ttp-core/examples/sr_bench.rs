use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ttp_core::sr::{evolve, FunctionSet, SrConfig, SrDataset, SrTask};

fn dataset(cases: usize, arity: usize) -> SrDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cols: Vec<Vec<f64>> = (0..arity)
        .map(|_| (0..cases).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
        .collect();
    let y: Vec<f64> = (0..cases)
        .map(|i| cols[0][i] + 2.0 * cols[1 % arity][i])
        .collect();
    SrDataset::new(cols, y, SrTask::RegressionMae).unwrap()
}

fn bce_dataset(cases: usize) -> SrDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cols = vec![Vec::with_capacity(cases), Vec::with_capacity(cases)];
    let mut y = Vec::with_capacity(cases);
    while y.len() < cases {
        let a = rng.random::<f64>() * 4.0 - 2.0;
        let b = rng.random::<f64>() * 4.0 - 2.0;
        let m = a + 2.0 * b + 0.5 * a * b;
        if m.abs() < 0.1 {
            continue;
        }
        cols[0].push(a);
        cols[1].push(b);
        y.push(if m > 0.0 { 1.0 } else { 0.0 });
    }
    SrDataset::new(cols, y, SrTask::BinaryBce).unwrap()
}

fn time_one(label: &str, ds: &SrDataset, tweak: impl Fn(&mut SrConfig)) {
    let mut config = SrConfig::new(11);
    config.generations = 40;
    config.function_set = FunctionSet::Polynomial;
    tweak(&mut config);
    let started = Instant::now();
    let result = evolve(ds, &config).unwrap();
    println!(
        "{label:<28} {:>7.2?}  best_loss {:.4}",
        started.elapsed(),
        result.best_loss
    );
}

fn main() {
    if let Some(gens) = std::env::var("SR_BENCH_BCE").ok().and_then(|v| v.parse().ok()) {
        let bce = bce_dataset(5000);
        time_one("5000 cases bce", &bce, |c| c.generations = gens);
        return;
    }
    let ds = dataset(30, 2);
    time_one("baseline", &ds, |_| {});
    time_one("no crossover", &ds, |c| c.p_crossover = 0.0);
    time_one("clone only", &ds, |c| {
        c.p_crossover = 0.0;
        c.p_subtree = 0.0;
        c.p_hoist = 0.0;
        c.p_point = 0.0;
    });
    time_one("no caps", &ds, |c| c.length_caps = vec![]);
    time_one("depth 6 shallow init", &ds, |c| {
        c.max_depth = 6;
        c.init_depth = (1, 3);
    });
    time_one("rational set", &ds, |c| c.function_set = FunctionSet::Rational);
    time_one("pop 200", &ds, |c| c.population = 200);
    time_one("sigma 0", &ds, |c| c.dalex_sigma = 0.0);
    let big = dataset(500, 5);
    time_one("500 cases arity 5", &big, |_| {});
    let bce = bce_dataset(5000);
    time_one("5000 cases bce", &bce, |_| {});
}
