use svss::bench::{median_error, run_approx_bench, BenchConfig, Policy};
use svss::data::{split, synth_sm, InputLayout};
use svss::inference::{TraceRow, TrainConfig, Trainer};
use svss::sampling::VarianceFactor;
use svss::SmParams;

#[test]
fn smoothed_elbo_improves_over_training() {
    let truth = SmParams::one_dim(&[1.0], &[0.3], &[0.05], 0.01).unwrap();
    let table = synth_sm(&truth, 300, (0.0, 20.0), InputLayout::Grid, 11).unwrap();
    let (tr, _) = split(&table, 0.9, 11).unwrap();
    let cfg = TrainConfig { iterations: 2000, seed: 11, ..TrainConfig::svss_ws_ng(1, 20) };
    let mut t = Trainer::new(&tr.x, &tr.y, cfg).unwrap();
    for _ in 0..2000 {
        t.step().unwrap();
    }
    let trace = &t.state().trace;
    let window = |end: usize| trace[end - 50..end].iter().map(TraceRow::elbo).sum::<f64>() / 50.0;
    let early = window(50);
    let late = window(2000);
    assert!(late >= early, "smoothed ELBO {early} at 50, {late} at 2000");
}

#[test]
fn bench_error_shrinks_with_more_features() {
    let cfg = BenchConfig {
        x: BenchConfig::grid(100),
        q: 4,
        m_list: vec![100, 400],
        policies: Policy::ALL.to_vec(),
        rate_list: vec![1.0],
        weight_init: "uniform0-20".parse().unwrap(),
        ws_factor: VarianceFactor::Exact,
        trials: 20,
        seed: 5,
        max_pairs: None,
    };
    let rows = run_approx_bench(&cfg).unwrap();
    for policy in Policy::ALL {
        let at = |m: usize| median_error(&rows, |r| r.policy == policy && r.m == m);
        assert!(at(400) < at(100), "{policy}: {} at 400 vs {} at 100", at(400), at(100));
    }
}

#[test]
fn bench_ws_beats_equal_with_four_components() {
    let cfg = BenchConfig {
        x: BenchConfig::grid(100),
        q: 4,
        m_list: vec![60],
        policies: vec![Policy::Equal, Policy::Ws],
        rate_list: vec![1.0],
        weight_init: "uniform0-20".parse().unwrap(),
        ws_factor: VarianceFactor::Exact,
        trials: 50,
        seed: 17,
        max_pairs: None,
    };
    let rows = run_approx_bench(&cfg).unwrap();
    let ws = median_error(&rows, |r| r.policy == Policy::Ws);
    let eq = median_error(&rows, |r| r.policy == Policy::Equal);
    assert!(ws <= eq, "ws {ws} equal {eq}");
}
