//! Scalar functionals of weights and symbols: the matrix A_{p,q}
//! characteristic (global and restricted to cell sets), the classic weighted
//! BMO functional, the tilde variant and its dual, and the six
//! John-Nirenberg quantities, all as exact finite sums.
//!
//! Every two-point quantity runs through one kernel: a table of pairwise
//! spectral norms per cube, reduced with the exponent schedule as data. The
//! first three JN quantities substitute reducing matrices built by the
//! `reducing` module, with their certified distortions carried along.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::field::{dual_weight, matrix_power, ExponentTriple, FieldKind, MatrixField};
use crate::grid::{cells_of, enumerate_cubes, Cube, CubeSet};
use crate::linalg::{spd_inverse, spectral_norm};
use crate::reducing::{reduce, Sign};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CharKind {
    Apq,
    ApqRestricted,
    BmoClassic,
    BmoTilde,
    BmoTildeDual,
    Jn(u8),
    BloomNu,
}

/// A value of one functional, with the cube achieving the supremum.
#[derive(Debug, Clone)]
pub struct Characteristic {
    pub value: f64,
    pub kind: CharKind,
    pub exponents: ExponentTriple,
    pub argmax: Option<Cube>,
}

/// Where a functional ranges: the full dyadic family, a level-truncated
/// family, or one fixed cell set (the restricted variants).
#[derive(Debug, Clone, Copy)]
pub enum Scope<'a> {
    /// All cubes of levels `0..=L` of the field's grid.
    AllCubes,
    /// All cubes of levels `0..=max_level`.
    MaxLevel(u32),
    /// A single measurable set (no supremum).
    Set(&'a CubeSet),
}

fn scope_cell_lists(
    scope: Scope<'_>,
    field: &MatrixField,
) -> Result<Vec<(Option<Cube>, Vec<usize>)>> {
    match scope {
        Scope::AllCubes => scope_cell_lists(Scope::MaxLevel(field.grid().finest_level()), field),
        Scope::MaxLevel(max) => {
            let cubes = enumerate_cubes(&field.grid(), max)?;
            Ok(cubes
                .into_iter()
                .map(|q| {
                    let cells = cells_of(&q).members().to_vec();
                    (Some(q), cells)
                })
                .collect())
        }
        Scope::Set(s) => {
            if s.is_empty() {
                return Err(Error::parameter("characteristic over an empty set"));
            }
            if s.grid() != field.grid() {
                return Err(Error::ShapeMismatch("scope grid vs field grid".into()));
            }
            Ok(vec![(None, s.members().to_vec())])
        }
    }
}

/// Full pairwise table `t[x * N + y] = f(x, y)` over the finest cells.
fn pair_table<F: Fn(usize, usize) -> f64>(nc: usize, f: F) -> Vec<f64> {
    let mut t = vec![0.0; nc * nc];
    for x in 0..nc {
        for y in 0..nc {
            t[x * nc + y] = f(x, y);
        }
    }
    t
}

/// `(avg_x (avg_y t(x,y)^inner)^{outer/inner})^{1/outer}` over a cell list:
/// the iterated-mean kernel shared by the A_{p,q} characteristic and the
/// two-point BMO quantities.
fn iterated_mean(table: &[f64], nc: usize, cells: &[usize], inner: f64, outer: f64) -> f64 {
    let m = cells.len() as f64;
    let mut acc = 0.0;
    for &x in cells {
        let mut inner_acc = 0.0;
        for &y in cells {
            inner_acc += table[x * nc + y].powf(inner);
        }
        acc += (inner_acc / m).powf(outer / inner);
    }
    (acc / m).powf(1.0 / outer)
}

/// Matrix A_{p,q} characteristic: exact double sums per cube, supremum over
/// the scope. The restricted variant (`Scope::Set`) is the single-set value.
pub fn apq_characteristic(
    w: &MatrixField,
    e: &ExponentTriple,
    scope: Scope<'_>,
) -> Result<Characteristic> {
    if w.kind() != FieldKind::Weight {
        return Err(Error::parameter("A_{p,q} characteristic requires a weight"));
    }
    let wp = matrix_power(w, 1.0 / e.q)?;
    let wm = matrix_power(w, -1.0 / e.q)?;
    let nc = w.grid().cell_count();
    let table = pair_table(nc, |x, y| spectral_norm(&(wp.cell(x) * wm.cell(y))));
    let pc = e.p_conj();
    let lists = scope_cell_lists(scope, w)?;
    let restricted = matches!(scope, Scope::Set(_));

    let mut best = f64::NEG_INFINITY;
    let mut argmax = None;
    for (cube, cells) in &lists {
        // value = avg_x (avg_y ||.||^{p'})^{q/p'}, no outer root
        let value = iterated_mean(&table, nc, cells, pc, e.q).powf(e.q);
        if value > best {
            best = value;
            argmax = *cube;
        }
    }
    Ok(Characteristic {
        value: best,
        kind: if restricted {
            CharKind::ApqRestricted
        } else {
            CharKind::Apq
        },
        exponents: *e,
        argmax,
    })
}

/// Everything the JN comparison needs, evaluated on one cube or set.
#[derive(Debug, Clone)]
pub struct CubeJn {
    pub cube: Option<Cube>,
    /// The six quantities, `jn[k-1]` for item (k).
    pub jn: [f64; 6],
    /// The classic weighted BMO expression over the same cells.
    pub classic: f64,
    /// `(avg_y ||U_Q U^{-1/q}(y)||^{p'})^{1/p'}`: recorded slack factor of
    /// the first split term.
    pub split_gu: f64,
    /// `(avg_x ||V^{1/q}(x) V'_Q||^{q})^{1/q}`: slack factor of the second.
    pub split_gv: f64,
    pub distortion_u: f64,
    pub distortion_v: f64,
    pub distortion_vp: f64,
}

impl CubeJn {
    /// The exact split bound `jn2 * g_U + jn3 * g_V` dominating `jn5`.
    pub fn split_bound(&self) -> f64 {
        self.jn[1] * self.split_gu + self.jn[2] * self.split_gv
    }
}

/// Per-cube JN quantities plus their suprema.
#[derive(Debug, Clone)]
pub struct JnBundle {
    pub per_cube: Vec<CubeJn>,
    pub exponents: ExponentTriple,
}

impl JnBundle {
    pub fn sup_jn(&self, k: usize) -> Characteristic {
        assert!((1..=6).contains(&k));
        let mut best = f64::NEG_INFINITY;
        let mut argmax = None;
        for c in &self.per_cube {
            if c.jn[k - 1] > best {
                best = c.jn[k - 1];
                argmax = c.cube;
            }
        }
        Characteristic {
            value: best,
            kind: CharKind::Jn(k as u8),
            exponents: self.exponents,
            argmax,
        }
    }

    pub fn sup_classic(&self) -> Characteristic {
        let mut best = f64::NEG_INFINITY;
        let mut argmax = None;
        for c in &self.per_cube {
            if c.classic > best {
                best = c.classic;
                argmax = c.cube;
            }
        }
        Characteristic {
            value: best,
            kind: CharKind::BmoClassic,
            exponents: self.exponents,
            argmax,
        }
    }

    /// The tilde functional is item (4) of the bundle.
    pub fn sup_tilde(&self) -> Characteristic {
        let mut c = self.sup_jn(4);
        c.kind = CharKind::BmoTilde;
        c
    }

    pub fn max_distortion(&self) -> f64 {
        self.per_cube.iter().fold(1.0f64, |acc, c| {
            acc.max(c.distortion_u)
                .max(c.distortion_v)
                .max(c.distortion_vp)
        })
    }
}

/// Evaluates all six JN quantities, the classic BMO expression and the
/// split slack factors in one pass over the scope.
pub fn jn_all(
    u: &MatrixField,
    v: &MatrixField,
    b: &MatrixField,
    e: &ExponentTriple,
    scope: Scope<'_>,
) -> Result<JnBundle> {
    if u.grid() != v.grid() || u.grid() != b.grid() {
        return Err(Error::ShapeMismatch("jn fields on different grids".into()));
    }
    if u.size() != v.size() || u.size() != b.size() {
        return Err(Error::ShapeMismatch("jn fields of different sizes".into()));
    }
    if u.kind() != FieldKind::Weight || v.kind() != FieldKind::Weight {
        return Err(Error::parameter("jn quantities require weight kind U, V"));
    }
    let grid = u.grid();
    let nc = grid.cell_count();
    let q = e.q;
    let pc = e.p_conj();
    let qc = e.q_conj();

    let vp = matrix_power(v, 1.0 / q)?;
    let um = matrix_power(u, -1.0 / q)?;
    let up = matrix_power(u, 1.0 / q)?;
    let table = pair_table(nc, |x, y| {
        spectral_norm(&(vp.cell(x) * (b.cell(x) - b.cell(y)) * um.cell(y)))
    });

    let lists = scope_cell_lists(scope, u)?;
    let mut per_cube = Vec::with_capacity(lists.len());
    for (cube, cells) in &lists {
        let m = cells.len() as f64;
        let set = CubeSet::new(grid, cells.clone())?;

        let u_q = reduce(u, &set, q, Sign::Plus, e)?;
        let v_q = reduce(v, &set, q, Sign::Plus, e)?;
        let vp_q = reduce(v, &set, pc, Sign::Minus, e)?;
        let u_q_inv = u_q.inverse()?;
        let vp_q_inv = vp_q.inverse()?;

        let mean_b = b.average_over(cells);

        // (1) avg_x || V_Q (B(x) - m_Q B) U_Q^{-1} ||
        // (2) (avg_x || V^{1/q}(x) (B(x) - m_Q B) U_Q^{-1} ||^q)^{1/q}
        // (3) (avg_x || U^{-1/q}(x) (B*(x) - m_Q B*) (V'_Q)^{-1} ||^{p'})^{1/p'}
        let mut jn1 = 0.0;
        let mut jn2 = 0.0;
        let mut jn3 = 0.0;
        let mut classic_acc = 0.0;
        let mut gu = 0.0;
        let mut gv = 0.0;
        let mvq = vp.average_over(cells);
        let muq_inv = spd_inverse(&up.average_over(cells), None)?;
        for &x in cells {
            let db: DMatrix<f64> = b.cell(x) - &mean_b;
            jn1 += spectral_norm(&(v_q.matrix() * &db * &u_q_inv));
            jn2 += spectral_norm(&(vp.cell(x) * &db * &u_q_inv)).powf(q);
            jn3 += spectral_norm(&(um.cell(x) * db.transpose() * &vp_q_inv)).powf(pc);
            classic_acc += spectral_norm(&(&mvq * &db * &muq_inv));
            gu += spectral_norm(&(u_q.matrix() * um.cell(x))).powf(pc);
            gv += spectral_norm(&(vp.cell(x) * vp_q.matrix())).powf(q);
        }
        let jn1 = jn1 / m;
        let jn2 = (jn2 / m).powf(1.0 / q);
        let jn3 = (jn3 / m).powf(1.0 / pc);
        let classic = (classic_acc / m).powf(1.0 / q);
        let gu = (gu / m).powf(1.0 / pc);
        let gv = (gv / m).powf(1.0 / q);

        // (4) x-outer over y-inner p'; (5)/(6) y-outer over x-inner q with
        // outer exponents p' and q'.
        let jn4 = iterated_mean(&table, nc, cells, pc, q);
        let mut acc5 = 0.0;
        let mut acc6 = 0.0;
        for &yc in cells {
            let mut inner = 0.0;
            for &xc in cells {
                inner += table[xc * nc + yc].powf(q);
            }
            let inner = inner / m;
            acc5 += inner.powf(pc / q);
            acc6 += inner.powf(qc / q);
        }
        let jn5 = (acc5 / m).powf(1.0 / pc);
        let jn6 = (acc6 / m).powf(1.0 / qc);

        per_cube.push(CubeJn {
            cube: *cube,
            jn: [jn1, jn2, jn3, jn4, jn5, jn6],
            classic,
            split_gu: gu,
            split_gv: gv,
            distortion_u: u_q.distortion(),
            distortion_v: v_q.distortion(),
            distortion_vp: vp_q.distortion(),
        });
    }
    Ok(JnBundle {
        per_cube,
        exponents: *e,
    })
}

/// One JN quantity `k = 1..6` with its argmax cube.
pub fn jn_quantity(
    k: usize,
    u: &MatrixField,
    v: &MatrixField,
    b: &MatrixField,
    e: &ExponentTriple,
    scope: Scope<'_>,
) -> Result<Characteristic> {
    if !(1..=6).contains(&k) {
        return Err(Error::parameter(format!("jn quantity index {k} out of 1..6")));
    }
    Ok(jn_all(u, v, b, e, scope)?.sup_jn(k))
}

/// Classic weighted BMO: averages of `V^{1/q}` and `U^{1/q}` per cube, outer
/// exponent `1/q` applied as displayed.
pub fn bmo_classic(
    u: &MatrixField,
    v: &MatrixField,
    b: &MatrixField,
    e: &ExponentTriple,
    scope: Scope<'_>,
) -> Result<Characteristic> {
    Ok(jn_all(u, v, b, e, scope)?.sup_classic())
}

/// The tilde functional (two-point kernel only, no reducing matrices).
pub fn tilde_bmo(
    u: &MatrixField,
    v: &MatrixField,
    b: &MatrixField,
    e: &ExponentTriple,
    scope: Scope<'_>,
) -> Result<Characteristic> {
    let grid = u.grid();
    let nc = grid.cell_count();
    let vp = matrix_power(v, 1.0 / e.q)?;
    let um = matrix_power(u, -1.0 / e.q)?;
    let table = pair_table(nc, |x, y| {
        spectral_norm(&(vp.cell(x) * (b.cell(x) - b.cell(y)) * um.cell(y)))
    });
    let lists = scope_cell_lists(scope, u)?;
    let mut best = f64::NEG_INFINITY;
    let mut argmax = None;
    for (cube, cells) in &lists {
        let value = iterated_mean(&table, nc, cells, e.p_conj(), e.q);
        if value > best {
            best = value;
            argmax = *cube;
        }
    }
    Ok(Characteristic {
        value: best,
        kind: CharKind::BmoTilde,
        exponents: *e,
        argmax,
    })
}

/// The dual tilde functional: tilde-BMO of `B^*` with the dual weights
/// `U' = U^{-p'/q}, V' = V^{-p'/q}` and the dual exponents `(q', p')`,
/// computed from the dual side (its equality with item (5) is a test
/// target, not an assumption).
pub fn dual_tilde_bmo(
    u: &MatrixField,
    v: &MatrixField,
    b: &MatrixField,
    e: &ExponentTriple,
    scope: Scope<'_>,
) -> Result<Characteristic> {
    let u_dual = dual_weight(u, e)?;
    let v_dual = dual_weight(v, e)?;
    let ed = e.dual();
    let b_star = MatrixField::from_cells(
        b.grid(),
        b.size(),
        FieldKind::Symbol,
        b.cells().iter().map(|m| m.transpose()).collect(),
    )?;
    // tilde with left weight U' and right weight V' at exponents (q', p')
    let mut c = tilde_bmo(&v_dual, &u_dual, &b_star, &ed, scope)?;
    c.kind = CharKind::BmoTildeDual;
    c.exponents = *e;
    Ok(c)
}

/// Scalar two-weight instance with its Bloom weight `nu = u^{1/q} v^{-1/q}`.
#[derive(Debug, Clone)]
pub struct ScalarBloomInstance {
    pub u: MatrixField,
    pub v: MatrixField,
    pub nu: MatrixField,
    pub b: MatrixField,
    pub exponents: ExponentTriple,
}

impl ScalarBloomInstance {
    pub fn new(u: MatrixField, v: MatrixField, b: MatrixField, e: ExponentTriple) -> Result<Self> {
        if u.size() != 1 || v.size() != 1 || b.size() != 1 {
            return Err(Error::parameter("Bloom instances are scalar (n = 1)"));
        }
        if u.grid() != v.grid() || u.grid() != b.grid() {
            return Err(Error::ShapeMismatch("Bloom instance grids".into()));
        }
        let grid = u.grid();
        let nu_cells: Vec<f64> = (0..grid.cell_count())
            .map(|i| u.cell(i)[(0, 0)].powf(1.0 / e.q) * v.cell(i)[(0, 0)].powf(-1.0 / e.q))
            .collect();
        let nu = MatrixField::scalar_from_cells(grid, FieldKind::Weight, &nu_cells)?;
        Ok(ScalarBloomInstance {
            u,
            v,
            nu,
            b,
            exponents: e,
        })
    }
}

/// `sup_Q (1/nu(Q)) int_Q |b - m_Q b|` as an exact finite sum.
pub fn bloom_nu(inst: &ScalarBloomInstance, scope: Scope<'_>) -> Result<Characteristic> {
    let lists = scope_cell_lists(scope, &inst.b)?;
    let mut best = f64::NEG_INFINITY;
    let mut argmax = None;
    for (cube, cells) in &lists {
        let m = cells.len() as f64;
        let mean_b: f64 = cells.iter().map(|&c| inst.b.cell(c)[(0, 0)]).sum::<f64>() / m;
        let osc: f64 = cells
            .iter()
            .map(|&c| (inst.b.cell(c)[(0, 0)] - mean_b).abs())
            .sum::<f64>()
            / m;
        let nu_mean: f64 = cells.iter().map(|&c| inst.nu.cell(c)[(0, 0)]).sum::<f64>() / m;
        let value = osc / nu_mean;
        if value > best {
            best = value;
            argmax = *cube;
        }
    }
    Ok(Characteristic {
        value: best,
        kind: CharKind::BloomNu,
        exponents: inst.exponents,
        argmax,
    })
}

/// Per-cube companion data for the scalar chain: the ratio of `m_Q nu` to
/// `(m_Q u^{1/q}) (m_Q v^{1/q})^{-1}`, and the two sides of the exact
/// Holder direction `m_Q nu <= (m_Q u)^{1/q} (m_Q v^{-q'/q})^{1/q'}`.
#[derive(Debug, Clone)]
pub struct BloomCubeCheck {
    pub cube: Option<Cube>,
    pub nu_ratio: f64,
    pub holder_lhs: f64,
    pub holder_rhs: f64,
}

pub fn bloom_companion(
    inst: &ScalarBloomInstance,
    scope: Scope<'_>,
) -> Result<Vec<BloomCubeCheck>> {
    let e = &inst.exponents;
    let lists = scope_cell_lists(scope, &inst.b)?;
    let mut out = Vec::with_capacity(lists.len());
    for (cube, cells) in &lists {
        let m = cells.len() as f64;
        let avg = |f: &dyn Fn(usize) -> f64| cells.iter().map(|&c| f(c)).sum::<f64>() / m;
        let nu_mean = avg(&|c| inst.nu.cell(c)[(0, 0)]);
        let u_pow_mean = avg(&|c| inst.u.cell(c)[(0, 0)].powf(1.0 / e.q));
        let v_pow_mean = avg(&|c| inst.v.cell(c)[(0, 0)].powf(1.0 / e.q));
        let u_mean = avg(&|c| inst.u.cell(c)[(0, 0)]);
        let v_dual_mean = avg(&|c| inst.v.cell(c)[(0, 0)].powf(-e.q_conj() / e.q));
        out.push(BloomCubeCheck {
            cube: *cube,
            nu_ratio: nu_mean / (u_pow_mean / v_pow_mean),
            holder_lhs: nu_mean,
            holder_rhs: u_mean.powf(1.0 / e.q) * v_dual_mean.powf(1.0 / e.q_conj()),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{generate_symbol, generate_weight, SymbolFamily, WeightFamily};
    use crate::grid::GridSpec;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn e22() -> ExponentTriple {
        ExponentTriple::new(2.0, 2.0, 0.0, 1).unwrap()
    }

    fn e_frac() -> ExponentTriple {
        ExponentTriple::from_alpha_q(0.5, 4.0, 1).unwrap()
    }

    #[test]
    fn constant_weight_has_characteristic_one() {
        let g = GridSpec::standard(1, 3).unwrap();
        let w = MatrixField::constant(g, FieldKind::Weight, dmatrix![2.0, 0.5; 0.5, 1.0]).unwrap();
        let c = apq_characteristic(&w, &e_frac(), Scope::AllCubes).unwrap();
        assert_relative_eq!(c.value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn scalar_two_cell_value() {
        let g = GridSpec::standard(1, 1).unwrap();
        let u = MatrixField::scalar_from_cells(g, FieldKind::Weight, &[1.0, 4.0]).unwrap();
        let c = apq_characteristic(&u, &e22(), Scope::AllCubes).unwrap();
        assert_relative_eq!(c.value, 1.5625, epsilon = 1e-12);
        assert_eq!(c.argmax.unwrap().level(), 0);
    }

    #[test]
    fn apq_at_least_one() {
        let g = GridSpec::standard(1, 3).unwrap();
        for seed in 0..5 {
            let w =
                generate_weight(seed, &g, 2, &WeightFamily::LogBoundedRandom { log_bound: 1.5 })
                    .unwrap();
            let c = apq_characteristic(&w, &e_frac(), Scope::AllCubes).unwrap();
            assert!(c.value >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn apq_duality_normalized_identity() {
        // scalar identity: apq(W,(p,q))^{1/q} = apq(W^{-p'/q},(q',p'))^{1/p'}
        // exactly; for n >= 2 the two sides obey the iterated-mean ordering
        // given by the sign of q - p'.
        let g = GridSpec::standard(1, 3).unwrap();
        let e = ExponentTriple::from_p_q(1.5, 2.4, 1).unwrap();
        let u = generate_weight(3, &g, 1, &WeightFamily::LogBoundedRandom { log_bound: 1.5 })
            .unwrap();
        let du = dual_weight(&u, &e).unwrap();
        let lhs = apq_characteristic(&u, &e, Scope::AllCubes)
            .unwrap()
            .value
            .powf(1.0 / e.q);
        let rhs = apq_characteristic(&du, &e.dual(), Scope::AllCubes)
            .unwrap()
            .value
            .powf(1.0 / e.p_conj());
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);

        let w = generate_weight(4, &g, 2, &WeightFamily::LogBoundedRandom { log_bound: 1.0 })
            .unwrap();
        let dw = dual_weight(&w, &e).unwrap();
        let lhs = apq_characteristic(&w, &e, Scope::AllCubes)
            .unwrap()
            .value
            .powf(1.0 / e.q);
        let rhs = apq_characteristic(&dw, &e.dual(), Scope::AllCubes)
            .unwrap()
            .value
            .powf(1.0 / e.p_conj());
        // p' = 3 >= q = 2.4: the dual side puts the larger exponent outside,
        // so the Minkowski integral inequality gives rhs <= lhs per cube
        assert!(rhs <= lhs * (1.0 + 1e-9), "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn restricted_value_on_saturated_set_matches_root_term() {
        let g = GridSpec::standard(1, 2).unwrap();
        let e = e_frac();
        let w = generate_weight(5, &g, 2, &WeightFamily::LogBoundedRandom { log_bound: 1.0 })
            .unwrap();
        let all = CubeSet::all(g);
        let restricted = apq_characteristic(&w, &e, Scope::Set(&all)).unwrap();
        assert_eq!(restricted.kind, CharKind::ApqRestricted);
        let root_only = apq_characteristic(&w, &e, Scope::MaxLevel(0)).unwrap();
        assert_relative_eq!(restricted.value, root_only.value, max_relative = 1e-12);
    }

    #[test]
    fn jn_two_cell_hand_value() {
        // U = V = I, n = 1, b = (0, 1), p = q = 2: item (4) over the root is
        // (avg_x avg_y |b(x)-b(y)|^2)^{1/2} = sqrt(1/2)
        let g = GridSpec::standard(1, 1).unwrap();
        let id = MatrixField::identity(g, 1);
        let b = MatrixField::scalar_from_cells(g, FieldKind::Symbol, &[0.0, 1.0]).unwrap();
        let bundle = jn_all(&id, &id, &b, &e22(), Scope::AllCubes).unwrap();
        let jn4 = bundle.sup_jn(4);
        assert_relative_eq!(jn4.value, 0.5f64.sqrt(), epsilon = 1e-12);
        assert_eq!(jn4.argmax.unwrap().level(), 0);
    }

    #[test]
    fn constant_symbol_zeroes_everything() {
        let g = GridSpec::standard(1, 2).unwrap();
        let e = e_frac();
        let u = generate_weight(1, &g, 2, &WeightFamily::LogBoundedRandom { log_bound: 1.0 })
            .unwrap();
        let v = generate_weight(2, &g, 2, &WeightFamily::LogBoundedRandom { log_bound: 1.0 })
            .unwrap();
        let b = generate_symbol(3, &g, 2, &SymbolFamily::Constant).unwrap();
        let bundle = jn_all(&u, &v, &b, &e, Scope::AllCubes).unwrap();
        for k in 1..=6 {
            assert!(bundle.sup_jn(k).value.abs() < 1e-12, "jn{k} nonzero");
        }
        assert!(bundle.sup_classic().value.abs() < 1e-12);
        assert!(
            dual_tilde_bmo(&u, &v, &b, &e, Scope::AllCubes)
                .unwrap()
                .value
                < 1e-12
        );
    }

    #[test]
    fn jn6_le_jn5_and_split_bound_per_cube() {
        let g = GridSpec::standard(1, 3).unwrap();
        for e in [e22(), e_frac(), ExponentTriple::from_p_q(1.5, 2.4, 1).unwrap()] {
            for seed in 0..4 {
                let u = generate_weight(
                    seed,
                    &g,
                    2,
                    &WeightFamily::LogBoundedRandom { log_bound: 1.0 },
                )
                .unwrap();
                let v = generate_weight(
                    seed + 100,
                    &g,
                    2,
                    &WeightFamily::LogBoundedRandom { log_bound: 1.0 },
                )
                .unwrap();
                let b =
                    generate_symbol(seed, &g, 2, &SymbolFamily::RandomSymmetric { scale: 1.0 })
                        .unwrap();
                let bundle = jn_all(&u, &v, &b, &e, Scope::AllCubes).unwrap();
                for c in &bundle.per_cube {
                    assert!(
                        c.jn[5] <= c.jn[4] * (1.0 + 1e-9),
                        "jn6 {} > jn5 {}",
                        c.jn[5],
                        c.jn[4]
                    );
                    assert!(
                        c.jn[4] <= c.split_bound() * (1.0 + 1e-9),
                        "jn5 {} above split bound {}",
                        c.jn[4],
                        c.split_bound()
                    );
                }
            }
        }
    }

    #[test]
    fn symbol_shift_and_homogeneity() {
        let g = GridSpec::standard(1, 2).unwrap();
        let e = e_frac();
        let u = generate_weight(11, &g, 2, &WeightFamily::LogBoundedRandom { log_bound: 1.0 })
            .unwrap();
        let v = generate_weight(12, &g, 2, &WeightFamily::LogBoundedRandom { log_bound: 1.0 })
            .unwrap();
        let b = generate_symbol(13, &g, 2, &SymbolFamily::RandomSymmetric { scale: 1.0 }).unwrap();
        let shift = generate_symbol(14, &g, 2, &SymbolFamily::Constant).unwrap();
        let b_shifted = b.add(&shift).unwrap();

        let t0 = tilde_bmo(&u, &v, &b, &e, Scope::AllCubes).unwrap().value;
        let t1 = tilde_bmo(&u, &v, &b_shifted, &e, Scope::AllCubes).unwrap().value;
        assert_relative_eq!(t0, t1, epsilon = 1e-12, max_relative = 1e-12);

        let r = 3.5;
        let t2 = tilde_bmo(&u, &v, &b.scale(r).unwrap(), &e, Scope::AllCubes)
            .unwrap()
            .value;
        assert_relative_eq!(t2, r * t0, max_relative = 1e-12);

        let c0 = bmo_classic(&u, &v, &b, &e, Scope::AllCubes).unwrap().value;
        let c1 = bmo_classic(&u, &v, &b_shifted, &e, Scope::AllCubes)
            .unwrap()
            .value;
        assert_relative_eq!(c0, c1, epsilon = 1e-12, max_relative = 1e-12);
    }

    #[test]
    fn dual_tilde_equals_item_five() {
        let g = GridSpec::standard(1, 2).unwrap();
        // scalar: exact identity
        let e = ExponentTriple::from_p_q(1.5, 2.4, 1).unwrap();
        let u = generate_weight(21, &g, 1, &WeightFamily::LogBoundedRandom { log_bound: 1.5 })
            .unwrap();
        let v = generate_weight(22, &g, 1, &WeightFamily::LogBoundedRandom { log_bound: 1.5 })
            .unwrap();
        let b = generate_symbol(23, &g, 1, &SymbolFamily::RandomSymmetric { scale: 1.0 }).unwrap();
        let dual = dual_tilde_bmo(&u, &v, &b, &e, Scope::AllCubes).unwrap();
        let jn5 = jn_quantity(5, &u, &v, &b, &e, Scope::AllCubes).unwrap();
        assert_relative_eq!(dual.value, jn5.value, max_relative = 1e-12);

        // n = 2: finite-sum identity through transposes
        let u = generate_weight(24, &g, 2, &WeightFamily::LogBoundedRandom { log_bound: 1.0 })
            .unwrap();
        let v = generate_weight(25, &g, 2, &WeightFamily::LogBoundedRandom { log_bound: 1.0 })
            .unwrap();
        let b = generate_symbol(26, &g, 2, &SymbolFamily::RandomSymmetric { scale: 1.0 }).unwrap();
        let dual = dual_tilde_bmo(&u, &v, &b, &e, Scope::AllCubes).unwrap();
        let jn5 = jn_quantity(5, &u, &v, &b, &e, Scope::AllCubes).unwrap();
        assert_relative_eq!(dual.value, jn5.value, max_relative = 1e-9);
    }

    #[test]
    fn classic_reduces_to_mean_oscillation_for_identity_weights() {
        let g = GridSpec::standard(1, 2).unwrap();
        let id = MatrixField::identity(g, 1);
        let vals = [0.3, -1.2, 0.7, 2.0];
        let b = MatrixField::scalar_from_cells(g, FieldKind::Symbol, &vals).unwrap();
        let e = e22();
        let c = bmo_classic(&id, &id, &b, &e, Scope::AllCubes).unwrap();
        // independent brute force over the seven dyadic intervals
        let mut expect = f64::NEG_INFINITY;
        for (lo, hi) in [(0, 4), (0, 2), (2, 4), (0, 1), (1, 2), (2, 3), (3, 4)] {
            let m = (hi - lo) as f64;
            let mean: f64 = vals[lo..hi].iter().sum::<f64>() / m;
            let osc: f64 = vals[lo..hi].iter().map(|v| (v - mean).abs()).sum::<f64>() / m;
            expect = expect.max(osc.powf(0.5));
        }
        assert_relative_eq!(c.value, expect, max_relative = 1e-12);
    }

    #[test]
    fn bloom_examples() {
        let g = GridSpec::standard(1, 1).unwrap();
        let e = e22();
        let one = MatrixField::scalar_from_cells(g, FieldKind::Weight, &[1.0, 1.0]).unwrap();

        // constant symbol
        let b = MatrixField::scalar_from_cells(g, FieldKind::Symbol, &[2.0, 2.0]).unwrap();
        let inst = ScalarBloomInstance::new(one.clone(), one.clone(), b, e).unwrap();
        assert!(bloom_nu(&inst, Scope::AllCubes).unwrap().value < 1e-15);

        // u = v (nu = 1), b = (0, 1): root value avg |b - 1/2| = 1/2
        let u = MatrixField::scalar_from_cells(g, FieldKind::Weight, &[3.0, 5.0]).unwrap();
        let b = MatrixField::scalar_from_cells(g, FieldKind::Symbol, &[0.0, 1.0]).unwrap();
        let inst = ScalarBloomInstance::new(u.clone(), u, b, e).unwrap();
        let c = bloom_nu(&inst, Scope::AllCubes).unwrap();
        assert_relative_eq!(c.value, 0.5, epsilon = 1e-14);

        // Holder direction per cube, exact
        let g = GridSpec::standard(1, 3).unwrap();
        let u = generate_weight(31, &g, 1, &WeightFamily::LogBoundedRandom { log_bound: 1.5 })
            .unwrap();
        let v = generate_weight(32, &g, 1, &WeightFamily::LogBoundedRandom { log_bound: 1.5 })
            .unwrap();
        let b = generate_symbol(33, &g, 1, &SymbolFamily::RandomSymmetric { scale: 1.0 }).unwrap();
        let inst =
            ScalarBloomInstance::new(u, v, b, ExponentTriple::from_p_q(1.5, 2.4, 1).unwrap())
                .unwrap();
        for check in bloom_companion(&inst, Scope::AllCubes).unwrap() {
            assert!(
                check.holder_lhs <= check.holder_rhs * (1.0 + 1e-12),
                "Holder direction fails: {} > {}",
                check.holder_lhs,
                check.holder_rhs
            );
        }
    }

    #[test]
    fn monotone_restriction_of_cube_family() {
        let g = GridSpec::standard(1, 3).unwrap();
        let e = e_frac();
        let w = generate_weight(41, &g, 2, &WeightFamily::LogBoundedRandom { log_bound: 1.2 })
            .unwrap();
        let full = apq_characteristic(&w, &e, Scope::AllCubes).unwrap().value;
        let coarse = apq_characteristic(&w, &e, Scope::MaxLevel(1)).unwrap().value;
        assert!(coarse <= full * (1.0 + 1e-15));
    }
}
