mod common;

use common::{rel_err, GradInstance};

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let d = 1 + (seed % 2) as usize;
        let inst = GradInstance::new(100 + seed, 20, 2, 6, d);
        let a = inst.analytic();
        let f = inst.numeric();
        for (i, (ai, fi)) in a.iter().zip(&f).enumerate() {
            let e = rel_err(*ai, *fi);
            println!("seed {seed} coord {i}: analytic {ai:.10e} numeric {fi:.10e} rel {e:.2e}");
            worst = worst.max(e);
        }
    }
    println!("worst relative error {worst:.3e}");
    assert!(worst <= 1e-5, "worst relative error {worst:e}");
}
