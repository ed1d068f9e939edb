use mwlab_core::*;
use mwlab_core::field::{generate_weight, WeightFamily};
use mwlab_core::grid::cells_of;
use mwlab_core::reducing::{reduce, Sign, ReduceMode};

fn main() {
    let g = GridSpec::standard(1, 2).unwrap();
    let e = ExponentTriple::from_p_q(1.5, 2.4, 1).unwrap();
    let u = generate_weight(24, &g, 2, &WeightFamily::LogBoundedRandom { log_bound: 1.0 }).unwrap();
    for q in grid::enumerate_cubes(&g, 2).unwrap() {
        let set = cells_of(&q);
        if set.len() < 2 { continue; }
        for (r, sign) in [(e.q, Sign::Plus), (e.p_conj(), Sign::Minus)] {
            match reduce(&u, &set, r, sign, &e) {
                Ok(rm) => {
                    if let ReduceMode::Mvee { iterations, .. } = rm.mode() {
                        println!("cube l{} a{} r={:.2} iters {} dist {:.6}", q.level(), q.anchor()[0], r, iterations, rm.distortion());
                    }
                }
                Err(err) => println!("cube l{} a{} r={:.2} FAILED: {}", q.level(), q.anchor()[0], r, err),
            }
        }
    }
}
