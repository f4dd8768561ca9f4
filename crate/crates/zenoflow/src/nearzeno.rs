//! First-order corrections to the Zeno-limit walk at finite measurement
//! frequency.
//!
//! With `n` measurements per step and `tau = T / (s n)`, the exact step map
//! on densities is `R_i - n tau^2 Rt_i + O((n tau^2)^2)`. The correction
//! `Rt_i` is the graph Laplacian of the lattice (degree on the diagonal, -1
//! between neighbours), modified around every activated pair `{a, b}`:
//!
//! * rows and columns of `a` and `b` are cleared, with a zero diagonal;
//! * `Rt[a][b] = Rt[b][a] = (deg a + deg b) / 2 - 1`;
//! * every neighbour `c` of the pair gets `-1/2` towards both `a` and `b`
//!   (and symmetrically).
//!
//! Every `Rt_i` has zero row and column sums, so the corrected matrices stay
//! doubly stochastic. The pair entries assume perfect switching
//! (`n tau = pi / 2`).

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{CutSpec, FreeSet, Lattice, MeasurementSchedule};
use crate::quantum::ProtocolParams;
use crate::zeno::{hop_probability_for, CycleMatrix};

/// Role of a site in the correction of one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiteClass {
    /// Member of an activated pair or a neighbour of one: pair-modified rows.
    Pair,
    /// Lone free site or neighbour of one (and not `Pair`): plain Laplacian
    /// rows.
    Lone,
    /// Measured site away from every free site: plain Laplacian rows too;
    /// measured sites keep leaking towards their measured neighbours.
    Remote,
}

/// Classifies every site for step `i` (1-based).
pub fn classify_sites(lattice: &Lattice, schedule: &MeasurementSchedule, i: usize) -> Result<Vec<SiteClass>> {
    let step = schedule.step(i)?;
    let mut class = vec![SiteClass::Remote; lattice.n_sites()];
    for &s in &step.isolated {
        class[s] = SiteClass::Lone;
        for c in lattice.neighbors(s) {
            class[c] = SiteClass::Lone;
        }
    }
    for p in &step.pairs {
        for s in [p.first, p.second] {
            class[s] = SiteClass::Pair;
            for c in lattice.neighbors(s) {
                class[c] = SiteClass::Pair;
            }
        }
    }
    Ok(class)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionMatrix {
    pub rt: DMatrix<f64>,
    /// 1-based step index.
    pub step_index: usize,
}

impl CorrectionMatrix {
    /// Largest absolute row or column sum (zero for a valid correction).
    pub fn line_sum_error(&self) -> f64 {
        let rows = self.rt.row_iter().map(|r| r.sum().abs());
        let cols = self.rt.column_iter().map(|c| c.sum().abs());
        rows.chain(cols).fold(0.0, f64::max)
    }
}

fn check_switching(step: &FreeSet, params: &ProtocolParams, steps: usize) -> Result<()> {
    let phi = params.step_time(steps);
    if !step.pairs.is_empty() && (phi - std::f64::consts::FRAC_PI_2).abs() > 1e-9 {
        return Err(Error::NotPerfectSwitching(phi));
    }
    Ok(())
}

fn correction_unchecked(lattice: &Lattice, step: &FreeSet) -> DMatrix<f64> {
    let n = lattice.n_sites();
    let mut rt = DMatrix::zeros(n, n);
    for a in 0..n {
        rt[(a, a)] = lattice.degree(a) as f64;
        for b in lattice.neighbors(a) {
            rt[(a, b)] = -1.0;
        }
    }
    for p in &step.pairs {
        let (a, b) = (p.first, p.second);
        for s in [a, b] {
            rt.row_mut(s).fill(0.0);
            rt.column_mut(s).fill(0.0);
        }
        let w = (lattice.degree(a) + lattice.degree(b)) as f64 / 2.0 - 1.0;
        rt[(a, b)] = w;
        rt[(b, a)] = w;
        for s in [a, b] {
            for c in lattice.neighbors(s) {
                if c == a || c == b {
                    continue;
                }
                for m in [a, b] {
                    rt[(m, c)] -= 0.5;
                    rt[(c, m)] -= 0.5;
                }
            }
        }
    }
    rt
}

/// Correction matrix `Rt_i` of step `i` (1-based).
pub fn build_correction(
    lattice: &Lattice,
    schedule: &MeasurementSchedule,
    i: usize,
    params: &ProtocolParams,
) -> Result<CorrectionMatrix> {
    let step = schedule.step(i)?;
    check_switching(step, params, schedule.period())?;
    let c = CorrectionMatrix { rt: correction_unchecked(lattice, step), step_index: i };
    let err = c.line_sum_error();
    if err != 0.0 {
        return Err(Error::NumericalHealth(format!("correction line sums off by {err:e}")));
    }
    Ok(c)
}

/// Left-multiplies `m` by the step matrix (row mixing on each pair).
fn left_apply_step(step: &FreeSet, p: f64, m: &mut DMatrix<f64>) {
    let q = 1.0 - p;
    for pair in &step.pairs {
        for j in 0..m.ncols() {
            let (x, y) = (m[(pair.first, j)], m[(pair.second, j)]);
            m[(pair.first, j)] = q * x + p * y;
            m[(pair.second, j)] = p * x + q * y;
        }
    }
}

/// How the per-step corrections are combined into a cycle matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NzForm {
    /// `R_cyc - n tau^2 sum_i R_s..R_{i+1} Rt_i R_{i-1}..R_1`.
    FirstOrder,
    /// `prod_i (R_i - n tau^2 Rt_i)`, keeping the cross terms.
    Product,
}

/// Near-Zeno cycle matrix (real, returned with zero counting field).
pub fn build_nz_cycle(
    lattice: &Lattice,
    schedule: &MeasurementSchedule,
    params: &ProtocolParams,
) -> Result<CycleMatrix> {
    build_nz_cycle_with(lattice, schedule, params, NzForm::FirstOrder)
}

pub fn build_nz_cycle_with(
    lattice: &Lattice,
    schedule: &MeasurementSchedule,
    params: &ProtocolParams,
    form: NzForm,
) -> Result<CycleMatrix> {
    let s = schedule.period();
    let n = lattice.n_sites();
    let tau = params.tau(s);
    let eps = params.n_meas as f64 * tau * tau;
    let p = hop_probability_for(params.period, s);
    let rts: Vec<DMatrix<f64>> = (1..=s)
        .map(|i| build_correction(lattice, schedule, i, params).map(|c| c.rt))
        .collect::<Result<_>>()?;
    let mut prefix = DMatrix::<f64>::identity(n, n);
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for (i, step) in schedule.steps.iter().enumerate() {
        match form {
            NzForm::FirstOrder => {
                let mut term = &rts[i] * &prefix;
                for later in &schedule.steps[i + 1..] {
                    left_apply_step(later, p, &mut term);
                }
                acc += term;
                left_apply_step(step, p, &mut prefix);
            }
            NzForm::Product => {
                let corr = &rts[i] * &prefix;
                left_apply_step(step, p, &mut prefix);
                prefix -= corr * eps;
            }
        }
    }
    let r = match form {
        NzForm::FirstOrder => prefix - acc * eps,
        NzForm::Product => prefix,
    };
    Ok(CycleMatrix { r: r.map(|x| Complex64::new(x, 0.0)), theta: 0.0, p })
}

/// Per-cycle particle gain right of `cut` when densities evolve with the
/// near-Zeno cycle matrix.
pub fn nz_flow(
    lattice: &Lattice,
    schedule: &MeasurementSchedule,
    params: &ProtocolParams,
    n_cycles: usize,
    g0: &[f64],
    cut: &CutSpec,
) -> Result<Vec<f64>> {
    if g0.len() != lattice.n_sites() {
        return Err(Error::DimensionMismatch { expected: lattice.n_sites(), found: g0.len() });
    }
    let r = build_nz_cycle(lattice, schedule, params)?.r.map(|z| z.re);
    let mut g = nalgebra::DVector::from_column_slice(g0);
    let mut out = Vec::with_capacity(n_cycles);
    for _ in 0..n_cycles {
        let next = &r * &g;
        out.push(cut.right_sites().map(|s| next[s] - g[s]).sum());
        g = next;
    }
    Ok(out)
}
