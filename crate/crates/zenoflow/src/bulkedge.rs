//! Flow per cycle along the lower edge of a half-filled strip, split into a
//! bulk part computed from 6x6 Bloch matrices and an edge part computed on a
//! narrow strip.
//!
//! Counting conventions: `F` counts horizontal hops over all bonds per cell
//! column, while a single vertical cut between cells sees a quarter of it,
//! `F_sim = F / 4`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{
    build_lattice, build_schedule, cell_boundary_x, flow_cut, Boundary, LatticeKind, LatticeSpec,
    MeasurementSchedule,
};
use crate::zeno::{bloch_step_matrix, bloch_template, eigenvalue_moduli, ZenoEngine};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecomposedFlow {
    pub f_bulk: f64,
    pub f_edge: f64,
    pub f_total: f64,
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(Error::ProbabilityOutOfRange(p));
    }
    Ok(())
}

/// Applies `(R, J)` of one step to the pair `(v, acc)`: `acc <- R acc + J v`,
/// `v <- R v`, where `J = i dR/dtheta` at zero counting field.
fn step_with_current(schedule: &MeasurementSchedule, k: usize, p: f64, v: &mut [f64], acc: &mut [f64]) {
    let eng = ZenoEngine::new(schedule, p).expect("p checked");
    let mut jv = vec![0.0; v.len()];
    for pr in schedule.steps[k].pairs.iter().filter(|pr| pr.horizontal) {
        jv[pr.first] -= p * v[pr.second];
        jv[pr.second] += p * v[pr.first];
    }
    eng.apply_step(k, acc);
    eng.apply_step(k, v);
    for (a, j) in acc.iter_mut().zip(jv) {
        *a += j;
    }
}

/// `J g` for the full cycle current `J = i dR_cyc/dtheta`.
pub fn cycle_current(schedule: &MeasurementSchedule, p: f64, g: &[f64]) -> Result<Vec<f64>> {
    check_p(p)?;
    let mut v = g.to_vec();
    let mut acc = vec![0.0; g.len()];
    for k in 0..schedule.period() {
        step_with_current(schedule, k, p, &mut v, &mut acc);
    }
    Ok(acc)
}

/// Edge part of the flow: sources in the two lowest cell rows, destinations
/// in the three lowest rows, per cell column.
pub fn f_edge(p: f64) -> Result<f64> {
    f_edge_on(p, 3, 6)
}

/// [`f_edge`] on a strip of `lx` by `ly` cells (periodic in x).
pub fn f_edge_on(p: f64, lx: usize, ly: usize) -> Result<f64> {
    check_p(p)?;
    let l = build_lattice(&LatticeSpec::new(LatticeKind::Lieb, lx, ly, Boundary::CylinderX))?;
    let s = build_schedule(&l)?;
    let g: Vec<f64> = l.sites.iter().map(|x| if x.cell.1 <= 1 { 1.0 } else { 0.0 }).collect();
    let jg = cycle_current(&s, p, &g)?;
    let total: f64 = l.sites.iter().filter(|x| x.cell.1 <= 2).map(|x| jg[x.id]).sum();
    Ok(total / lx as f64)
}

/// Bloch data at `k = 0`: `(R_B, J_B, dR_B/dk_y)`.
fn bulk_matrices(p: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<Complex64>) {
    let kind = LatticeKind::Lieb;
    let template = bloch_template(kind);
    let n = kind.cell_size();
    let mut r = DMatrix::<Complex64>::identity(n, n);
    let mut j = DMatrix::<Complex64>::zeros(n, n);
    let mut dr = DMatrix::<Complex64>::zeros(n, n);
    for pairs in &template {
        let rk = bloch_step_matrix(kind, pairs, [0.0, 0.0], 0.0, p, false);
        let dk = bloch_step_matrix(kind, pairs, [0.0, 0.0], 0.0, p, true);
        let mut jk = DMatrix::<Complex64>::zeros(n, n);
        for bp in pairs {
            // R[a][b] = p e^{i wind theta}; i d/dtheta gives -wind p.
            jk[(bp.a, bp.b)] += Complex64::new(-(bp.wind as f64) * p, 0.0);
            jk[(bp.b, bp.a)] += Complex64::new(bp.wind as f64 * p, 0.0);
        }
        j = &rk * j + jk * &r;
        dr = &rk * dr + dk * &r;
        r = rk * r;
    }
    (r.map(|z| z.re), j.map(|z| z.re), dr)
}

/// Bulk part `Re[i 1^T J_B X dR_B 1]`, where `X` inverts `I - R_B(0)` on the
/// complement of its stationary (uniform) eigenvector.
pub fn f_bulk(p: f64) -> Result<f64> {
    check_p(p)?;
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        // R_cyc is a permutation of order five: every bulk particle returns
        // after five cycles and the bulk part takes its limiting value.
        return Ok(1.0);
    }
    let (r, j, dr) = bulk_matrices(p);
    let n = r.nrows();
    let rc = r.map(|x| Complex64::new(x, 0.0));
    let unit = eigenvalue_moduli(&rc)
        .into_iter()
        .filter(|m| (m - 1.0).abs() < 1e-9)
        .count();
    if unit > 1 {
        return Err(Error::DegenerateStationary(unit));
    }
    let x = reduced_resolvent(&r).ok_or(Error::DegenerateStationary(n))?;
    let ones = nalgebra::DVector::<Complex64>::from_element(n, Complex64::new(1.0, 0.0));
    let jx = j.map(|v| Complex64::new(v, 0.0)) * x.map(|v| Complex64::new(v, 0.0));
    let val = ones.transpose() * jx * dr * &ones;
    Ok((Complex64::i() * val[(0, 0)]).re)
}

/// Reduced resolvent of `I - R` for a doubly stochastic `R` with a simple
/// eigenvalue 1: `X = (I - R + P)^{-1} - P` with `P = 1 1^T / n`.
pub fn reduced_resolvent(r: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = r.nrows();
    let proj = DMatrix::from_element(n, n, 1.0 / n as f64);
    let a = DMatrix::identity(n, n) - r + &proj;
    a.try_inverse().map(|inv| inv - proj)
}

/// Finite partial sum `Re[i 1^T J_B sum_{q<m} R_B^q dR_B 1]`, which converges
/// geometrically to [`f_bulk`].
pub fn f_bulk_partial(p: f64, m: usize) -> Result<f64> {
    check_p(p)?;
    let (r, j, dr) = bulk_matrices(p);
    let n = r.nrows();
    let rc = r.map(|x| Complex64::new(x, 0.0));
    let mut v = dr * nalgebra::DVector::<Complex64>::from_element(n, Complex64::new(1.0, 0.0));
    let mut sum = nalgebra::DVector::<Complex64>::zeros(n);
    for _ in 0..m {
        sum += &v;
        v = &rc * v;
    }
    let row = j.map(|x| Complex64::new(x, 0.0)).transpose()
        * nalgebra::DVector::<Complex64>::from_element(n, Complex64::new(1.0, 0.0));
    Ok((Complex64::i() * row.dot(&sum)).re)
}

pub fn f_total(p: f64) -> Result<DecomposedFlow> {
    let f_bulk = f_bulk(p)?;
    let f_edge = f_edge(p)?;
    Ok(DecomposedFlow { f_bulk, f_edge, f_total: f_bulk + f_edge })
}

/// Result of [`simulated_flow`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedFlow {
    /// Expected particles crossing the cut during the last cycle.
    pub raw: f64,
    /// Density contrast between the lowest and highest site lines at the
    /// start of the last cycle.
    pub contrast: f64,
    /// `raw / contrast`: the flow a fully filled lower edge and an empty
    /// upper edge would carry.
    pub f_sim: f64,
}

/// Runs the Zeno walk on an `lx` by `ly` strip (periodic in x) filled up to
/// half height and measures the transfer across a vertical cut in the last
/// of `cycles` cycles.
///
/// On a finite strip the filling spreads until the edges are no longer full
/// and empty, so the raw transfer decays. The edge flow is linear in the
/// density difference between the two edges, and dividing by it recovers
/// the transfer of the ideal half-filled strip.
pub fn simulated_flow(p: f64, lx: usize, ly: usize, cycles: usize) -> Result<SimulatedFlow> {
    check_p(p)?;
    if cycles == 0 {
        return Err(Error::InvalidParams("at least one cycle is needed".into()));
    }
    let l = build_lattice(&LatticeSpec::new(LatticeKind::Lieb, lx, ly, Boundary::CylinderX))?;
    let s = build_schedule(&l)?;
    let cut = flow_cut(&l, &s, cell_boundary_x(LatticeKind::Lieb, lx / 2))?;
    let mut g = l.lower_half_fill();
    let eng = ZenoEngine::new(&s, p)?;
    for _ in 0..cycles - 1 {
        eng.apply_cycle(&mut g);
    }
    let y_min = l.sites.iter().map(|x| x.coord.1).min().unwrap_or(0);
    let y_max = l.sites.iter().map(|x| x.coord.1).max().unwrap_or(0);
    let line_mean = |y: i64| {
        let v: Vec<f64> = l.sites.iter().filter(|x| x.coord.1 == y).map(|x| g[x.id]).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let contrast = line_mean(y_min) - line_mean(y_max);
    let mut raw = 0.0;
    for k in 0..s.period() {
        raw += eng.cut_flux(k, &g, &cut);
        eng.apply_step(k, &mut g);
    }
    Ok(SimulatedFlow { raw, contrast, f_sim: raw / contrast })
}
