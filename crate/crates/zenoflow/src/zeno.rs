//! The frequent-measurement (Zeno) limit: a classical random walk in which,
//! at every step, a particle on an activated bond jumps to the other end with
//! probability `p`.
//!
//! Transition matrices act on density vectors with the destination as the
//! row index. A counting field `theta` marks horizontal hops: a leftward hop
//! carries `e^{i theta}` and a rightward hop `e^{-i theta}`, so the current
//! `J = i dR/dtheta` counts rightward transport as positive.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{CutSpec, FreeSet, Geometry, Lattice, LatticeKind, MeasurementSchedule};

/// Site densities `g_r = G_rr`.
pub type DensityVector = Vec<f64>;

/// Probability that a particle on an activated bond changes site during one
/// step of an eight-step cycle of period `period`.
pub fn hop_probability(period: f64) -> f64 {
    hop_probability_for(period, 8)
}

/// As [`hop_probability`] for a cycle of `steps` steps.
pub fn hop_probability_for(period: f64, steps: usize) -> f64 {
    (period / steps as f64).sin().powi(2)
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(Error::ProbabilityOutOfRange(p));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMatrix {
    pub r: DMatrix<Complex64>,
    /// 1-based step index.
    pub step_index: usize,
    pub theta: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleMatrix {
    pub r: DMatrix<Complex64>,
    pub theta: f64,
    pub p: f64,
}

fn apply_free_set(step: &FreeSet, p: f64, g: &mut [f64]) {
    let q = 1.0 - p;
    for pair in &step.pairs {
        let (a, b) = (g[pair.first], g[pair.second]);
        g[pair.first] = q * a + p * b;
        g[pair.second] = p * a + q * b;
    }
}

fn apply_free_set_complex(step: &FreeSet, p: f64, theta: f64, g: &mut [Complex64]) {
    let q = 1.0 - p;
    let phase = Complex64::from_polar(1.0, theta);
    for pair in &step.pairs {
        let (a, b) = (g[pair.first], g[pair.second]);
        if pair.horizontal {
            g[pair.first] = a * q + b * p * phase;
            g[pair.second] = a * p * phase.conj() + b * q;
        } else {
            g[pair.first] = a * q + b * p;
            g[pair.second] = a * p + b * q;
        }
    }
}

/// Dense step matrix `R_i(theta)` (step `i` is 1-based).
pub fn build_step_matrix(
    lattice: &Lattice,
    schedule: &MeasurementSchedule,
    i: usize,
    p: f64,
    theta: f64,
) -> Result<StepMatrix> {
    check_p(p)?;
    let step = schedule.step(i)?;
    let n = lattice.n_sites();
    let mut r = DMatrix::identity(n, n);
    let q = Complex64::new(1.0 - p, 0.0);
    let phase = Complex64::from_polar(p, theta);
    for pair in &step.pairs {
        let (a, b) = (pair.first, pair.second);
        r[(a, a)] = q;
        r[(b, b)] = q;
        if pair.horizontal {
            r[(a, b)] = phase;
            r[(b, a)] = phase.conj();
        } else {
            r[(a, b)] = Complex64::new(p, 0.0);
            r[(b, a)] = Complex64::new(p, 0.0);
        }
    }
    Ok(StepMatrix { r, step_index: i, theta, p })
}

/// Dense cycle matrix `R_s ... R_2 R_1` at counting field `theta`.
pub fn build_cycle_matrix(
    lattice: &Lattice,
    schedule: &MeasurementSchedule,
    p: f64,
    theta: f64,
) -> Result<CycleMatrix> {
    check_p(p)?;
    let n = lattice.n_sites();
    let mut r = DMatrix::identity(n, n);
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        col.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        col[j] = Complex64::new(1.0, 0.0);
        for step in &schedule.steps {
            apply_free_set_complex(step, p, theta, &mut col);
        }
        for (i, c) in col.iter().enumerate() {
            r[(i, j)] = *c;
        }
    }
    Ok(CycleMatrix { r, theta, p })
}

/// `g <- R_cyc^n g` using a dense cycle matrix built at `theta = 0`.
pub fn evolve_density(g: &[f64], cycle: &CycleMatrix, n_cycles: usize) -> Result<DensityVector> {
    if cycle.theta != 0.0 {
        return Err(Error::NonzeroTheta(cycle.theta));
    }
    if g.len() != cycle.r.nrows() {
        return Err(Error::DimensionMismatch { expected: cycle.r.nrows(), found: g.len() });
    }
    let r = cycle.r.map(|c| c.re);
    let mut v = nalgebra::DVector::from_column_slice(g);
    for _ in 0..n_cycles {
        v = &r * v;
    }
    Ok(v.iter().copied().collect())
}

/// Sparse Zeno-limit engine: applies the step maps in place.
#[derive(Debug, Clone, Copy)]
pub struct ZenoEngine<'a> {
    schedule: &'a MeasurementSchedule,
    p: f64,
}

impl<'a> ZenoEngine<'a> {
    pub fn new(schedule: &'a MeasurementSchedule, p: f64) -> Result<Self> {
        check_p(p)?;
        Ok(ZenoEngine { schedule, p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Applies step `k0` (0-based).
    pub fn apply_step(&self, k0: usize, g: &mut [f64]) {
        apply_free_set(&self.schedule.steps[k0], self.p, g);
    }

    pub fn apply_cycle(&self, g: &mut [f64]) {
        for step in &self.schedule.steps {
            apply_free_set(step, self.p, g);
        }
    }

    pub fn apply_cycle_complex(&self, theta: f64, g: &mut [Complex64]) {
        for step in &self.schedule.steps {
            apply_free_set_complex(step, self.p, theta, g);
        }
    }

    /// Expected rightward particle transfer over all horizontal bonds during
    /// step `k0`, for densities `g` at the start of the step.
    pub fn step_flux(&self, k0: usize, g: &[f64]) -> f64 {
        self.schedule.steps[k0]
            .pairs
            .iter()
            .filter(|pr| pr.horizontal)
            .map(|pr| self.p * (g[pr.first] - g[pr.second]))
            .sum()
    }

    /// Expected transfer across `cut` (left to right) during step `k0`.
    pub fn cut_flux(&self, k0: usize, g: &[f64], cut: &CutSpec) -> f64 {
        cut.links
            .iter()
            .filter(|l| l.steps.contains(&(k0 + 1)))
            .map(|l| self.p * (g[l.left] - g[l.right]))
            .sum()
    }
}

fn check_len(lattice: &Lattice, g: &[f64]) -> Result<()> {
    if g.len() != lattice.n_sites() {
        return Err(Error::DimensionMismatch { expected: lattice.n_sites(), found: g.len() });
    }
    Ok(())
}

/// Moment generating function `<I| R_cyc(theta)^n |g0>`.
pub fn moment_generating(
    lattice: &Lattice,
    schedule: &MeasurementSchedule,
    p: f64,
    theta: f64,
    n: usize,
    g0: &[f64],
) -> Result<Complex64> {
    check_len(lattice, g0)?;
    let eng = ZenoEngine::new(schedule, p)?;
    let mut v: Vec<Complex64> = g0.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    for _ in 0..n {
        eng.apply_cycle_complex(theta, &mut v);
    }
    Ok(v.iter().sum())
}

/// Per-cycle, per-step flow over all horizontal bonds, divided by the number
/// of cell columns: `out[m][k]` is the contribution of step `k` in cycle `m`.
pub fn per_step_flow(
    lattice: &Lattice,
    schedule: &MeasurementSchedule,
    p: f64,
    n: usize,
    g0: &[f64],
) -> Result<Vec<Vec<f64>>> {
    check_len(lattice, g0)?;
    let eng = ZenoEngine::new(schedule, p)?;
    let lx = lattice.spec.lx as f64;
    let mut g = g0.to_vec();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Vec::with_capacity(schedule.period());
        for k in 0..schedule.period() {
            row.push(eng.step_flux(k, &g) / lx);
            eng.apply_step(k, &mut g);
        }
        out.push(row);
    }
    Ok(out)
}

/// Average flow per cycle over the first `n` cycles,
/// `F_n = (1 / (L_x n)) sum_{m<n} <I| J R_cyc^m |g0>`.
pub fn flow(
    lattice: &Lattice,
    schedule: &MeasurementSchedule,
    p: f64,
    n: usize,
    g0: &[f64],
) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    let steps = per_step_flow(lattice, schedule, p, n, g0)?;
    Ok(steps.iter().flatten().sum::<f64>() / n as f64)
}

/// Per-cycle, per-step expected transfer across a cut. Returns the trace and
/// the final densities.
pub fn cut_flow_trace(
    schedule: &MeasurementSchedule,
    p: f64,
    n: usize,
    g0: &[f64],
    cut: &CutSpec,
) -> Result<(Vec<Vec<f64>>, DensityVector)> {
    if g0.len() != cut.right.len() {
        return Err(Error::DimensionMismatch { expected: cut.right.len(), found: g0.len() });
    }
    let eng = ZenoEngine::new(schedule, p)?;
    let mut g = g0.to_vec();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Vec::with_capacity(schedule.period());
        for k in 0..schedule.period() {
            row.push(eng.cut_flux(k, &g, cut));
            eng.apply_step(k, &mut g);
        }
        out.push(row);
    }
    Ok((out, g))
}

/// One activated bond of the infinite lattice in Bloch form: types `a`, `b`
/// and the cell displacement `cell(a) - cell(b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BlochPair {
    pub a: usize,
    pub b: usize,
    /// Displacement in the Bravais basis.
    pub d: (i64, i64),
    /// Displacement in cell rows.
    pub d_row: i64,
    /// Counting-field winding of the `b -> a` hop (`+1` leftward, `-1`
    /// rightward, `0` non-horizontal).
    pub wind: i8,
}

/// Activated bonds per step of the infinite lattice, per dynamical cell.
pub(crate) fn bloch_template(kind: LatticeKind) -> Vec<Vec<BlochPair>> {
    let geo = Geometry {
        kind,
        lx: 1,
        ly: 1,
        boundary: crate::lattice::Boundary::Open,
    };
    geo.loop_template()
        .into_iter()
        .map(|bonds| {
            bonds
                .into_iter()
                .map(|(pa, pb)| {
                    let (ca, ta) = geo.locate(pa).expect("loop site on lattice");
                    let (cb, tb) = geo.locate(pb).expect("loop site on lattice");
                    let oa = geo.origin(ca.0, ca.1);
                    let ob = geo.origin(cb.0, cb.1);
                    let (dx, dy) = (oa.0 - ob.0, oa.1 - ob.1);
                    let (d, d_row) = match kind {
                        LatticeKind::Lieb | LatticeKind::Square => {
                            (((dx - dy) / 4, (-dx - dy) / 4), dy / 2)
                        }
                        LatticeKind::KagomeMod => ((dx / 8, dy / 8), dy / 8),
                    };
                    let (rx, ry) = geo.to_real((pb.0 - pa.0, pb.1 - pa.1));
                    let wind = if ry.abs() > 1e-9 {
                        0
                    } else if rx > 0.0 {
                        // a is left of b: the b -> a hop is leftward.
                        1
                    } else {
                        -1
                    };
                    BlochPair { a: ta, b: tb, d, d_row, wind }
                })
                .collect()
        })
        .collect()
}

/// Bloch step matrix with an optional k_y-derivative weight: entries are
/// multiplied by `(-i d_row)` when `dky` is set (diagonal entries vanish).
pub(crate) fn bloch_step_matrix(
    kind: LatticeKind,
    pairs: &[BlochPair],
    k: [f64; 2],
    theta: f64,
    p: f64,
    dky: bool,
) -> DMatrix<Complex64> {
    let n = kind.cell_size();
    let mut r = if dky { DMatrix::zeros(n, n) } else { DMatrix::identity(n, n) };
    let i = Complex64::i();
    for bp in pairs {
        let phase = -(k[0] * bp.d.0 as f64 + k[1] * bp.d.1 as f64) + bp.wind as f64 * theta;
        let ab = Complex64::from_polar(p, phase);
        let ba = ab.conj();
        if dky {
            let w = -i * bp.d_row as f64;
            r[(bp.a, bp.b)] += ab * w;
            r[(bp.b, bp.a)] += ba * (-w);
        } else {
            r[(bp.a, bp.a)] = Complex64::new(1.0 - p, 0.0);
            r[(bp.b, bp.b)] = Complex64::new(1.0 - p, 0.0);
            r[(bp.a, bp.b)] += ab;
            r[(bp.b, bp.a)] += ba;
        }
    }
    r
}

/// Bloch cycle matrix `R_cyc(k, theta)` of the Lieb protocol. `k` holds the
/// components along the two Bravais vectors of the dynamical cell; entry
/// `(mu, nu)` is `sum_d R((m + d, mu), (m, nu)) e^{-i k.d}`.
pub fn bloch_cycle(k: [f64; 2], theta: f64, p: f64) -> DMatrix<Complex64> {
    bloch_cycle_for(LatticeKind::Lieb, k, theta, p)
}

/// [`bloch_cycle`] for any lattice kind.
pub fn bloch_cycle_for(kind: LatticeKind, k: [f64; 2], theta: f64, p: f64) -> DMatrix<Complex64> {
    let n = kind.cell_size();
    let mut r = DMatrix::identity(n, n);
    for pairs in bloch_template(kind) {
        r = bloch_step_matrix(kind, &pairs, k, theta, p, false) * r;
    }
    r
}

/// Eigenvalue moduli of a small complex matrix.
pub fn eigenvalue_moduli(m: &DMatrix<Complex64>) -> Vec<f64> {
    let schur = m.clone().schur();
    let (_, t) = schur.unpack();
    (0..t.nrows()).map(|i| t[(i, i)].norm()).collect()
}

pub fn spectral_radius(m: &DMatrix<Complex64>) -> f64 {
    eigenvalue_moduli(m).into_iter().fold(0.0, f64::max)
}

/// Characteristic polynomial coefficients `c_0 .. c_n` (with `c_n = 1`) of
/// `det(x I - m)`, by the Faddeev-LeVerrier recursion.
pub fn characteristic_polynomial(m: &DMatrix<Complex64>) -> Vec<Complex64> {
    let n = m.nrows();
    let mut c = vec![Complex64::new(0.0, 0.0); n + 1];
    c[n] = Complex64::new(1.0, 0.0);
    let mut mk = DMatrix::<Complex64>::zeros(n, n);
    for k in 1..=n {
        mk = m * &mk;
        for i in 0..n {
            mk[(i, i)] += c[n - k + 1];
        }
        let am = m * &mk;
        c[n - k] = -am.trace() / k as f64;
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport {
    pub p: f64,
    /// Largest spectral radius over the nonzero grid points.
    pub max_radius: f64,
    /// Grid point achieving `max_radius`.
    pub argmax: [f64; 2],
    /// Spectral radius at `k = 0`.
    pub radius_at_zero: f64,
    /// (k_a, k_b, spectral radius) for every grid point, `k = 0` included.
    pub points: Vec<(f64, f64, f64)>,
}

impl SpectralReport {
    /// True when every nonzero-k point decays strictly.
    pub fn gapped(&self) -> bool {
        self.max_radius < 1.0
    }
}

/// Spectral radius of the Lieb `R_cyc(k, 0)` on a `grid x grid` uniform
/// k-grid over the Brillouin zone.
pub fn spectral_gap_check(p: f64, grid: usize) -> Result<SpectralReport> {
    check_p(p)?;
    if grid == 0 {
        return Err(Error::InvalidParams("k-grid must have at least one point".into()));
    }
    let template = bloch_template(LatticeKind::Lieb);
    let mut points = Vec::with_capacity(grid * grid);
    let mut max_radius = 0.0;
    let mut argmax = [0.0, 0.0];
    let mut radius_at_zero = 0.0;
    for ia in 0..grid {
        for ib in 0..grid {
            let k = [
                2.0 * std::f64::consts::PI * ia as f64 / grid as f64,
                2.0 * std::f64::consts::PI * ib as f64 / grid as f64,
            ];
            let mut r = DMatrix::identity(6, 6);
            for pairs in &template {
                r = bloch_step_matrix(LatticeKind::Lieb, pairs, k, 0.0, p, false) * r;
            }
            let rho = spectral_radius(&r);
            points.push((k[0], k[1], rho));
            if ia == 0 && ib == 0 {
                radius_at_zero = rho;
            } else if rho > max_radius {
                max_radius = rho;
                argmax = k;
            }
        }
    }
    Ok(SpectralReport { p, max_radius, argmax, radius_at_zero, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, build_schedule, Boundary, LatticeSpec};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn lieb(lx: usize, ly: usize, b: Boundary) -> (Lattice, MeasurementSchedule) {
        let l = build_lattice(&LatticeSpec::new(LatticeKind::Lieb, lx, ly, b)).unwrap();
        let s = build_schedule(&l).unwrap();
        (l, s)
    }

    #[test]
    fn hop_probability_examples() {
        assert_abs_diff_eq!(hop_probability(4.0 * PI), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hop_probability(8.0 * PI), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hop_probability(2.0 * PI), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn step_matrices_doubly_stochastic() {
        let (l, s) = lieb(3, 3, Boundary::Open);
        for i in 1..=8 {
            let r = build_step_matrix(&l, &s, i, 0.37, 0.0).unwrap().r;
            for j in 0..l.n_sites() {
                let row: Complex64 = r.row(j).iter().sum();
                let col: Complex64 = r.column(j).iter().sum();
                assert_abs_diff_eq!(row.re, 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(col.re, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn isolated_sites_are_frozen() {
        let (l, s) = lieb(3, 3, Boundary::Open);
        for i in 1..=8 {
            let r = build_step_matrix(&l, &s, i, 1.0, 0.0).unwrap().r;
            for &site in &s.steps[i - 1].isolated {
                assert_eq!(r[(site, site)], Complex64::new(1.0, 0.0));
            }
        }
    }

    #[test]
    fn sparse_cycle_matches_dense_product() {
        let (l, s) = lieb(2, 3, Boundary::Torus);
        let theta = 0.3;
        let mut dense = DMatrix::identity(l.n_sites(), l.n_sites());
        for i in 1..=8 {
            dense = build_step_matrix(&l, &s, i, 0.5, theta).unwrap().r * dense;
        }
        let cyc = build_cycle_matrix(&l, &s, 0.5, theta).unwrap().r;
        assert!((dense - cyc).norm() < 1e-13);
    }

    #[test]
    fn p1_torus_cycle_is_order_five_permutation() {
        let (l, s) = lieb(3, 4, Boundary::Torus);
        let r = build_cycle_matrix(&l, &s, 1.0, 0.0).unwrap().r;
        for x in r.iter() {
            assert!(x.re == 0.0 || x.re == 1.0);
        }
        let r5 = r.pow(5);
        assert!((r5 - DMatrix::identity(l.n_sites(), l.n_sites())).norm() < 1e-14);
    }

    #[test]
    fn bloch_matches_finite_torus_fourier_transform() {
        // Fourier transform the finite-torus cycle matrix at an allowed k.
        let (lx, ly) = (3usize, 4usize);
        let (l, s) = lieb(lx, ly, Boundary::Torus);
        let p = 0.4;
        let theta = 0.7;
        let r = build_cycle_matrix(&l, &s, p, theta).unwrap().r;
        // Cells (cx, cy) have origins (4cx + 2(cy%2), 2cy): Bravais coordinates
        // relative to cell (0, 0) follow from the displacement.
        // Allowed momenta: k_a - k_b in (2 pi / 3) Z and k_a + k_b in pi Z.
        let ka = PI / 2.0 + PI / 3.0;
        let kb = PI / 2.0 - PI / 3.0;
        let geo_bravais = |cx: usize, cy: usize| -> (f64, f64) {
            let dx = 4.0 * cx as f64 + 2.0 * (cy % 2) as f64;
            let dy = 2.0 * cy as f64;
            ((dx - dy) / 4.0, (-dx - dy) / 4.0)
        };
        // Sum over destination cells for the source cell 0.
        let mut fk = DMatrix::<Complex64>::zeros(6, 6);
        for cy in 0..ly {
            for cx in 0..lx {
                let (da, db) = geo_bravais(cx, cy);
                let ph = Complex64::from_polar(1.0, -(ka * da + kb * db));
                for mu in 0..6 {
                    for nu in 0..6 {
                        let dest = (cy * lx + cx) * 6 + mu;
                        fk[(mu, nu)] += r[(dest, nu)] * ph;
                    }
                }
            }
        }
        let bk = bloch_cycle([ka, kb], theta, p);
        assert!((fk - bk).norm() < 1e-12, "finite torus and Bloch disagree");
    }

    #[test]
    fn bloch_p1_fifth_power_identity() {
        let r = bloch_cycle([0.4, -1.3], 0.9, 1.0);
        let r5 = r.pow(5);
        assert!((r5 - DMatrix::identity(6, 6)).norm() < 1e-12);
    }

    #[test]
    fn spectral_gap_at_half() {
        let rep = spectral_gap_check(0.5, 16).unwrap();
        assert!(rep.gapped());
        assert_abs_diff_eq!(rep.radius_at_zero, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn charpoly_of_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(2.0, 0.0),
            Complex64::new(3.0, 0.0),
        ]));
        let c = characteristic_polynomial(&m);
        assert_abs_diff_eq!(c[0].re, 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1].re, -5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[2].re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn flow_matches_finite_difference_of_log_chi() {
        let (l, s) = lieb(3, 4, Boundary::CylinderX);
        let g0: Vec<f64> = l.sites.iter().map(|x| if x.cell.1 < 2 { 1.0 } else { 0.0 }).collect();
        let (p, n) = (0.6, 6);
        let f = flow(&l, &s, p, n, &g0).unwrap();
        let h = 1e-6;
        let cp = moment_generating(&l, &s, p, h, n, &g0).unwrap();
        let cm = moment_generating(&l, &s, p, -h, n, &g0).unwrap();
        // i d(chi)/d(theta) is real, equal to -Im d(chi)/d(theta); chi(0) is
        // the particle number, so the log derivative carries that factor.
        let total: f64 = g0.iter().sum();
        let fd = -(cp.im - cm.im) / (2.0 * h) / (3.0 * n as f64);
        let fd_log = -(cp.ln().im - cm.ln().im) / (2.0 * h) * total / (3.0 * n as f64);
        assert_abs_diff_eq!(f, fd_log, epsilon = 1e-6);
        assert_abs_diff_eq!(f, fd, epsilon = 1e-6);
    }
}
