use mwlab_core::*;
use mwlab_core::field::{generate_weight, matrix_power, WeightFamily};
use mwlab_core::reducing::sample_directions;
use nalgebra::{DMatrix, DVector};

fn main() {
    let g = GridSpec::standard(1, 4).unwrap();
    let e = ExponentTriple::from_alpha_q(0.5, 4.0, 1).unwrap();
    let s = CubeSet::all(g);
    let w = generate_weight(1, &g, 2, &WeightFamily::LogBoundedRandom { log_bound: 1.5 }).unwrap();
    let r = e.q; let power = 1.0 / e.q;
    let powered = matrix_power(&w, power).unwrap();
    let mats: Vec<DMatrix<f64>> = s.members().iter().map(|&c| powered.cell(c).clone()).collect();
    let rho = |dir: &DVector<f64>| -> f64 {
        let sum: f64 = mats.iter().map(|m| (m * dir).norm().powf(r)).sum();
        (sum / mats.len() as f64).powf(1.0 / r)
    };
    let dirs = sample_directions(2);
    let xs: Vec<DVector<f64>> = dirs.iter().map(|d| d / rho(d)).collect();
    // precondition by gram sqrt
    let mut gram = DMatrix::zeros(2,2);
    for m in &mats { gram += m.transpose() * m; }
    gram /= mats.len() as f64;
    let pc = gram.symmetric_eigen();
    let mut sq = DMatrix::zeros(2,2);
    for i in 0..2 { sq[(i,i)] = pc.eigenvalues[i].sqrt(); }
    let precond = &pc.eigenvectors * sq * pc.eigenvectors.transpose();
    let points: Vec<DVector<f64>> = xs.iter().map(|x| &precond * x).collect();

    let count = points.len();
    let n = 2usize; let nf = 2.0f64;
    let mut u = vec![1.0 / count as f64; count];
    let build = |u: &[f64]| -> DMatrix<f64> {
        let mut x = DMatrix::zeros(n, n);
        for (k, p) in points.iter().enumerate() { if u[k] > 0.0 { x += p * p.transpose() * u[k]; } }
        x
    };
    // run 30 rounds of pure newton from uniform, print everything
    for round in 0..30 {
        let x = build(&u);
        let xinv = x.clone().try_inverse().unwrap();
        let kap: Vec<f64> = points.iter().map(|p| (p.transpose() * &xinv * p)[(0,0)]).collect();
        let kmax = kap.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let umax = u.iter().cloned().fold(0.0f64, f64::max);
        let support: Vec<usize> = (0..count).filter(|&k| u[k] > 1e-9 * umax || kap[k] > nf).collect();
        let m = support.len();
        let mut hess = DMatrix::zeros(m, m);
        let mut grad = DVector::zeros(m);
        for (a, &k) in support.iter().enumerate() {
            grad[a] = kap[k];
            for (bb, &l) in support.iter().enumerate() {
                let cross = (points[k].transpose() * &xinv * &points[l])[(0,0)];
                hess[(a, bb)] = cross * cross;
            }
        }
        let svals = hess.clone().svd(false, false).singular_values.clone();
        let top: Vec<f64> = svals.iter().take(6).cloned().collect();
        println!("  H svals {:?}", top);
        let hpinv = hess.clone().svd(true, true).pseudo_inverse(1e-10).unwrap();
        let ones = DVector::from_element(m, 1.0);
        let denom = (ones.transpose() * &hpinv * &ones)[(0,0)];
        let nu = (ones.transpose() * &hpinv * &grad)[(0,0)] / denom;
        let du = &hpinv * (&grad - &ones * nu);
        // quality of the KKT solve and of the FW direction
        let resid_kkt = (&hess * &du - (&grad - &ones * nu)).norm();
        let jmax = (0..count).max_by(|&a,&b| kap[a].partial_cmp(&kap[b]).unwrap()).unwrap();
        let q_fw = kap[jmax] - nf;
        println!("  kkt resid {resid_kkt:.3e} fw linear gain {q_fw:.3e} nu {nu:.6}");
        let ldet_old = x.determinant().ln();
        let mut accepted = -1.0f64;
        let mut t = 1.0f64;
        for _ in 0..40 {
            let mut u_new = u.clone();
            for (a, &k) in support.iter().enumerate() { u_new[k] = (u_new[k] + t * du[a]).max(0.0); }
            let tot: f64 = u_new.iter().sum();
            for v in u_new.iter_mut() { *v /= tot; }
            let ldet_new = build(&u_new).determinant().ln();
            if ldet_new.is_finite() && ldet_new > ldet_old {
                u = u_new; accepted = t; break;
            }
            t *= 0.5;
        }
        println!("round {round}: resid {:.3e} m {} |du| {:.3e} t {accepted:.3e} ldet {:.12}", (kmax-nf)/nf, m, du.norm(), ldet_old);
    }
}
