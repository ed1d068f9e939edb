use mwlab_core::*;
use mwlab_core::field::{generate_weight, matrix_power, WeightFamily};
use mwlab_core::grid::cells_of;
use mwlab_core::reducing::sample_directions;
use nalgebra::{DMatrix, DVector};

fn main() {
    let g = GridSpec::standard(1, 2).unwrap();
    let e = ExponentTriple::from_p_q(1.5, 2.4, 1).unwrap();
    let u_field = generate_weight(24, &g, 2, &WeightFamily::LogBoundedRandom { log_bound: 1.0 }).unwrap();
    let q = grid::Cube::new(g, 1, [1, 0]).unwrap();
    let set = cells_of(&q);
    let r = 3.0;
    let power = -1.0 / e.q;
    let powered = matrix_power(&u_field, power).unwrap();
    let mats: Vec<DMatrix<f64>> = set.members().iter().map(|&c| powered.cell(c).clone()).collect();
    let rho = |dir: &DVector<f64>| -> f64 {
        let s: f64 = mats.iter().map(|m| (m * dir).norm().powf(r)).sum();
        (s / mats.len() as f64).powf(1.0 / r)
    };
    let dirs = sample_directions(2);
    let points: Vec<DVector<f64>> = dirs.iter().map(|d| d / rho(d)).collect();
    let count = points.len();
    let n = 2.0f64;
    let mut u = vec![1.0 / count as f64; count];
    let mut kap = vec![0.0; count];
    for iter in 0..200_000usize {
        let mut x = [0.0f64; 4];
        for (k, p) in points.iter().enumerate() {
            x[0] += u[k] * p[0] * p[0];
            x[1] += u[k] * p[0] * p[1];
            x[3] += u[k] * p[1] * p[1];
        }
        x[2] = x[1];
        let det = x[0] * x[3] - x[1] * x[2];
        let xi = [x[3] / det, -x[1] / det, -x[2] / det, x[0] / det];
        let mut kmax = f64::NEG_INFINITY;
        for (k, p) in points.iter().enumerate() {
            let v = p[0] * (xi[0] * p[0] + xi[1] * p[1]) + p[1] * (xi[2] * p[0] + xi[3] * p[1]);
            kap[k] = v;
            if v > kmax { kmax = v; }
        }
        if kmax <= n * (1.0 + 1e-7) {
            println!("multiplicative converged at iter {iter}");
            return;
        }
        for k in 0..count {
            u[k] *= kap[k] / n;
        }
    }
    println!("NOT converged");
}
