use mwlab_core::*;
use mwlab_core::field::{generate_weight, matrix_power, WeightFamily};
use mwlab_core::grid::cells_of;
use mwlab_core::reducing::sample_directions;
use nalgebra::{DMatrix, DVector};

fn solve_instance(points: &[DVector<f64>], n: usize) -> Option<usize> {
    let count = points.len();
    let nf = n as f64;
    let eps = 2.0 * 1e-7 / nf;
    let mut u = vec![1.0 / count as f64; count];
    let mut total_iters = 0usize;

    let build = |u: &[f64]| -> DMatrix<f64> {
        let mut x = DMatrix::zeros(n, n);
        for (k, p) in points.iter().enumerate() {
            if u[k] > 0.0 { x += p * p.transpose() * u[k]; }
        }
        x
    };
    let kappas = |xinv: &DMatrix<f64>| -> Vec<f64> {
        points.iter().map(|p| (p.transpose() * xinv * p)[(0,0)]).collect()
    };

    // phase 1: cheap FW-AS warm start
    for _ in 0..3000 {
        total_iters += 1;
        let x = build(&u);
        let xinv = x.clone().try_inverse()?;
        let kap = kappas(&xinv);
        let (mut kmax, mut jmax) = (f64::NEG_INFINITY, 0);
        let (mut kmin, mut imin) = (f64::INFINITY, usize::MAX);
        for k in 0..count {
            if kap[k] > kmax { kmax = kap[k]; jmax = k; }
            if u[k] > 1e-14 && kap[k] < kmin { kmin = kap[k]; imin = k; }
        }
        if kmax <= nf * (1.0 + eps) { return Some(total_iters); }
        if (kmax - nf)/nf < 1e-4 { break; }
        let add = kmax - nf;
        let away = nf - kmin;
        if away > add && imin != usize::MAX {
            let ki = kap[imin];
            let tmax = u[imin] / (1.0 - u[imin]);
            let t = if ki > 1.0 + 1e-14 { ((nf - ki)/(nf*(ki-1.0))).min(tmax) } else { tmax };
            for v in u.iter_mut() { *v *= 1.0 + t; }
            u[imin] -= t; u[imin] = u[imin].max(0.0);
        } else {
            let t = (kmax - nf)/(nf*(kmax - 1.0));
            for v in u.iter_mut() { *v *= 1.0 - t; }
            u[jmax] += t;
        }
    }

    // phase 2: support Newton on max logdet X(u), sum u = 1
    for _round in 0..60 {
        total_iters += 1;
        let x = build(&u);
        let xinv = x.clone().try_inverse()?;
        let kap = kappas(&xinv);
        let kmax = kap.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if kmax <= nf * (1.0 + eps) { return Some(total_iters); }
        // support = current positive weights plus the worst violator
        let mut support: Vec<usize> = (0..count).filter(|&k| u[k] > 1e-12).collect();
        for k in 0..count {
            if kap[k] > nf * (1.0 + 0.5 * eps) && !support.contains(&k) { support.push(k); }
        }
        support.sort_unstable();
        eprintln!("round resid {:.3e} support {}", (kmax-nf)/nf, support.len());
        let m = support.len();
        // gradient g_k = kappa_k, Hessian H_kl = (x_k' Xinv x_l)^2 (negated)
        let mut h = DMatrix::zeros(m, m);
        let mut gvec = DVector::zeros(m);
        for (a, &k) in support.iter().enumerate() {
            gvec[a] = kap[k];
            for (bb, &l) in support.iter().enumerate() {
                let cross = (points[k].transpose() * &xinv * &points[l])[(0,0)];
                h[(a, bb)] = cross * cross;
            }
        }
        for a in 0..m { h[(a,a)] += 1e-13; }
        // KKT: maximize g'du - 0.5 du'H du  s.t. 1'du = 0
        let hinv = h.clone().try_inverse()?;
        let ones = DVector::from_element(m, 1.0);
        let nu = (ones.transpose() * &hinv * &gvec)[(0,0)] / (ones.transpose() * &hinv * &ones)[(0,0)];
        let du = &hinv * (&gvec - &ones * nu);
        // backtracking line search keeping u >= 0 and improving kmax residual
        let mut t = 1.0f64;
        for _ in 0..40 {
            let mut ok = true;
            let mut u_new = u.clone();
            for (a, &k) in support.iter().enumerate() {
                u_new[k] += t * du[a];
                if u_new[k] < 0.0 { u_new[k] = 0.0; }
            }
            let s: f64 = u_new.iter().sum();
            for v in u_new.iter_mut() { *v /= s; }
            let xn = build(&u_new);
            match xn.clone().try_inverse() {
                Some(xninv) => {
                    let ldet_new = xn.determinant().ln();
                    let ldet_old = x.determinant().ln();
                    let _ = xninv;
                    if ldet_new >= ldet_old - 1e-15 { u = u_new; } else { ok = false; }
                }
                None => ok = false,
            }
            if ok { break; }
            t *= 0.5;
        }
    }
    None
}

fn main() {
    let g = GridSpec::standard(1, 2).unwrap();
    let e = ExponentTriple::from_p_q(1.5, 2.4, 1).unwrap();
    let u_field = generate_weight(24, &g, 2, &WeightFamily::LogBoundedRandom { log_bound: 1.0 }).unwrap();
    for q in grid::enumerate_cubes(&g, 2).unwrap() {
        let set = cells_of(&q);
        if set.len() < 2 { continue; }
        for r in [e.q, e.p_conj()] {
            let power = -1.0 / e.q;
            let powered = matrix_power(&u_field, power).unwrap();
            let mats: Vec<DMatrix<f64>> = set.members().iter().map(|&c| powered.cell(c).clone()).collect();
            let rho = |dir: &DVector<f64>| -> f64 {
                let s: f64 = mats.iter().map(|mm| (mm * dir).norm().powf(r)).sum();
                (s / mats.len() as f64).powf(1.0 / r)
            };
            let dirs = sample_directions(2);
            let points: Vec<DVector<f64>> = dirs.iter().map(|d| d / rho(d)).collect();
            match solve_instance(&points, 2) {
                Some(iters) => println!("cube l{} r={:.2}: {} iterations", q.level(), r, iters),
                None => println!("cube l{} r={:.2}: FAILED", q.level(), r),
            }
        }
    }
}
