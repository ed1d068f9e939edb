// temporary instrumentation of the mvee residual decay
use nalgebra::DVector;
fn main() {
    // 64 directions, rho = L4 mean of |W^s e| over cells; emulate with a simple non-ellipsoidal norm
    let count = 64usize;
    let n = 2usize;
    let points: Vec<DVector<f64>> = (0..count).map(|k| {
        let t = 2.0*std::f64::consts::PI*(k as f64)/(count as f64);
        let e = DVector::from_vec(vec![t.cos(), t.sin()]);
        // rho(e) = (0.5(|a.e|^4 + |b.e|^4))^{1/4} with skew matrices
        let a = 2.0*e[0] + 0.3*e[1];
        let b = 0.4*e[0] + 0.7*e[1];
        let rho = (0.5*(a.abs().powi(4) + b.abs().powi(4))).powf(0.25).max(1e-12);
        &e / rho
    }).collect();
    // khachiyan with away steps, naive recompute, print residuals
    let mut u = vec![1.0/count as f64; count];
    for iter in 0..200000usize {
        let mut x = [0.0f64;4];
        for (k,p) in points.iter().enumerate() {
            x[0]+=u[k]*p[0]*p[0]; x[1]+=u[k]*p[0]*p[1]; x[2]+=u[k]*p[1]*p[0]; x[3]+=u[k]*p[1]*p[1];
        }
        let det = x[0]*x[3]-x[1]*x[2];
        let xi = [x[3]/det, -x[1]/det, -x[2]/det, x[0]/det];
        let mut kmax=f64::NEG_INFINITY; let mut jmax=0; let mut kmin=f64::INFINITY; let mut imin=usize::MAX;
        let mut kap = vec![0.0;count];
        for (k,p) in points.iter().enumerate() {
            let v = p[0]*(xi[0]*p[0]+xi[1]*p[1]) + p[1]*(xi[2]*p[0]+xi[3]*p[1]);
            kap[k]=v;
            if v>kmax {kmax=v; jmax=k;}
            if u[k]>1e-14 && v<kmin {kmin=v; imin=k;}
        }
        if iter % 5000 == 0 { println!("it {iter} resid {:.3e} away {:.3e}", (kmax-2.0)/2.0, (2.0-kmin)/2.0); }
        if kmax <= 2.0*(1.0+1e-7) { println!("converged at {iter}"); return; }
        let add = kmax-2.0; let away = 2.0-kmin;
        if away > add && imin != usize::MAX {
            let ki = kap[imin];
            let tmax = u[imin]/(1.0-u[imin]);
            let t = if ki > 1.0+1e-14 { ((2.0-ki)/(2.0*(ki-1.0))).min(tmax) } else { tmax };
            let t = t.max(0.0);
            for v in u.iter_mut() {*v *= 1.0+t;}
            u[imin]-=t; u[imin]=u[imin].max(0.0);
        } else {
            let t = (kmax-2.0)/(2.0*(kmax-1.0));
            for v in u.iter_mut() {*v *= 1.0-t;}
            u[jmax]+=t;
        }
    }
    println!("NOT converged");
}
