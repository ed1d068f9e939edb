use mwlab_core::*;
use mwlab_core::field::{generate_weight, WeightFamily};
use mwlab_core::reducing::{reduce, Sign, ReduceMode};
use std::time::Instant;

fn main() {
    let g = GridSpec::standard(1, 4).unwrap();
    let e = ExponentTriple::from_alpha_q(0.5, 4.0, 1).unwrap();
    let s = CubeSet::all(g);
    let t0 = Instant::now();
    let mut total_iters = 0usize;
    let calls = 20;
    for seed in 0..calls {
        let w = generate_weight(seed, &g, 2, &WeightFamily::LogBoundedRandom { log_bound: 1.5 }).unwrap();
        let rm = reduce(&w, &s, e.q, Sign::Plus, &e).unwrap();
        if let ReduceMode::Mvee { iterations, .. } = rm.mode() {
            total_iters += iterations;
        }
    }
    println!("{} calls in {:?}, avg iterations {}", calls, t0.elapsed(), total_iters / calls as usize);
}
