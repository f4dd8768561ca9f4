//! Exact evolution of the two-point correlation matrix
//! `G_{rr'} = <a_r^dagger a_r'>` under free hopping and projective density
//! measurements.
//!
//! A measurement of site `r` removes every correlation between `r` and the
//! rest of the lattice and leaves `G_rr` untouched. Free evolution for a time
//! `tau` conjugates `G` with `U = exp(-i tau H)`.
//!
//! The cycle engine exploits the structure left by the measurements: right
//! after measuring the complement of a free set `A`, `G` is diagonal on the
//! measured sites and has a dense Hermitian block on `A` only. One
//! repetition of "evolve, measure" then maps (block, diagonal) to
//! (block, diagonal) without forming the full matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{CutSpec, Lattice, MeasurementSchedule, SiteId};

/// Tolerance on trace drift and Hermiticity per operation.
pub const DRIFT_TOL: f64 = 1e-10;
/// Tolerance on propagator unitarity.
pub const UNITARITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub g: DMatrix<Complex64>,
}

impl CorrelationMatrix {
    pub fn zeros(n: usize) -> Self {
        CorrelationMatrix { g: DMatrix::zeros(n, n) }
    }

    pub fn identity(n: usize) -> Self {
        CorrelationMatrix { g: DMatrix::identity(n, n) }
    }

    /// Diagonal correlation matrix with the given site densities.
    pub fn from_densities(d: &[f64]) -> Self {
        let n = d.len();
        let mut g = DMatrix::zeros(n, n);
        for (i, &x) in d.iter().enumerate() {
            g[(i, i)] = Complex64::new(x, 0.0);
        }
        CorrelationMatrix { g }
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    /// Total particle number (real part of the trace).
    pub fn trace(&self) -> f64 {
        self.g.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn densities(&self) -> Vec<f64> {
        self.g.diagonal().iter().map(|z| z.re).collect()
    }

    /// Largest entry of `|G - G^dagger|`.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.n();
        let mut e: f64 = 0.0;
        for i in 0..n {
            for j in 0..=i {
                e = e.max((self.g[(i, j)] - self.g[(j, i)].conj()).norm());
            }
        }
        e
    }
}

/// Timing of the measurement protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    /// Duration `T` of one full cycle (hopping amplitude and hbar set to 1).
    pub period: f64,
    /// Measurement repetitions per step.
    pub n_meas: usize,
}

impl ProtocolParams {
    pub fn new(period: f64, n_meas: usize) -> Result<Self> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::InvalidParams(format!("period must be positive, got {period}")));
        }
        if n_meas == 0 {
            return Err(Error::InvalidParams("n_meas must be at least 1".into()));
        }
        Ok(ProtocolParams { period, n_meas })
    }

    /// Free-evolution time between measurements for a cycle of `steps` steps.
    pub fn tau(&self, steps: usize) -> f64 {
        self.period / (steps * self.n_meas) as f64
    }

    /// Total free-evolution time `n tau` of one step.
    pub fn step_time(&self, steps: usize) -> f64 {
        self.period / steps as f64
    }
}

/// Real and imaginary parts of `U = exp(-i tau H) = C - i S` for a real
/// symmetric `H`.
#[derive(Debug, Clone)]
pub struct EvolutionCache {
    pub tau: f64,
    pub cos: DMatrix<f64>,
    pub sin: DMatrix<f64>,
}

impl EvolutionCache {
    pub fn new(h: &DMatrix<f64>, tau: f64) -> Result<Self> {
        let eig = SymmetricEigen::new(h.clone());
        let v = &eig.eigenvectors;
        let cv = DVector::from_iterator(v.ncols(), eig.eigenvalues.iter().map(|l| (tau * l).cos()));
        let sv = DVector::from_iterator(v.ncols(), eig.eigenvalues.iter().map(|l| (tau * l).sin()));
        let cos = v * DMatrix::from_diagonal(&cv) * v.transpose();
        let sin = v * DMatrix::from_diagonal(&sv) * v.transpose();
        let cache = EvolutionCache { tau, cos, sin };
        let err = cache.unitarity_error();
        if err > UNITARITY_TOL {
            return Err(Error::NumericalHealth(format!("propagator unitarity error {err:e}")));
        }
        Ok(cache)
    }

    pub fn from_lattice(lattice: &Lattice, tau: f64) -> Result<Self> {
        Self::new(&lattice.hamiltonian(), tau)
    }

    pub fn n(&self) -> usize {
        self.cos.nrows()
    }

    pub fn propagator(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.n(), self.n(), |i, j| Complex64::new(self.cos[(i, j)], -self.sin[(i, j)]))
    }

    /// `max |U^dagger U - I|`; with `C`, `S` symmetric and commuting this is
    /// `max |C^2 + S^2 - I|` plus the antisymmetric part `CS - SC`.
    pub fn unitarity_error(&self) -> f64 {
        let n = self.n();
        let re = &self.cos * &self.cos + &self.sin * &self.sin - DMatrix::<f64>::identity(n, n);
        let im = &self.cos * &self.sin - &self.sin * &self.cos;
        re.amax().max(im.amax())
    }
}

fn split(g: &DMatrix<Complex64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (g.map(|z| z.re), g.map(|z| z.im))
}

fn join(re: &DMatrix<f64>, im: &DMatrix<f64>) -> DMatrix<Complex64> {
    re.zip_map(im, Complex64::new)
}

/// `U G U^dagger`.
pub fn evolve_free(g: &CorrelationMatrix, cache: &EvolutionCache) -> Result<CorrelationMatrix> {
    if g.n() != cache.n() {
        return Err(Error::DimensionMismatch { expected: cache.n(), found: g.n() });
    }
    let (gr, gi) = split(&g.g);
    let (c, s) = (&cache.cos, &cache.sin);
    // U G = (C - iS)(Gr + iGi)
    let tr = c * &gr + s * &gi;
    let ti = c * &gi - s * &gr;
    // (U G) U^dagger with U^dagger = C + iS
    let out_r = &tr * c - &ti * s;
    let out_i = &ti * c + &tr * s;
    Ok(CorrelationMatrix { g: join(&out_r, &out_i) })
}

/// Projective density measurement of the listed sites: every off-diagonal
/// entry touching a measured site becomes zero.
pub fn measure_sites(g: &CorrelationMatrix, measured: &[SiteId]) -> CorrelationMatrix {
    let n = g.n();
    let mut mask = vec![false; n];
    for &s in measured {
        mask[s] = true;
    }
    let mut out = g.g.clone();
    for i in 0..n {
        for j in 0..n {
            if i != j && (mask[i] || mask[j]) {
                out[(i, j)] = Complex64::new(0.0, 0.0);
            }
        }
    }
    CorrelationMatrix { g: out }
}

/// Hilbert-Schmidt norm `sqrt(Tr G^dagger G)`.
pub fn hs_norm(g: &CorrelationMatrix) -> f64 {
    g.g.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eps) || eps.is_nan() {
        return Err(Error::EpsilonOutOfRange(eps));
    }
    Ok(())
}

/// Soft injection at `site` with strength `eps`: correlations with the site
/// shrink by `1 - eps`, and the occupation moves towards 1 as
/// `G_ss -> (1 - eps)^2 G_ss + eps (2 - eps)`.
pub fn inject(g: &CorrelationMatrix, site: SiteId, eps: f64) -> Result<CorrelationMatrix> {
    check_eps(eps)?;
    let mut out = extract(g, site, eps)?;
    out.g[(site, site)] += Complex64::new(eps * (2.0 - eps), 0.0);
    Ok(out)
}

/// Soft extraction at `site` with strength `eps`: correlations with the site
/// shrink by `1 - eps` and `G_ss -> (1 - eps)^2 G_ss`.
pub fn extract(g: &CorrelationMatrix, site: SiteId, eps: f64) -> Result<CorrelationMatrix> {
    check_eps(eps)?;
    if site >= g.n() {
        return Err(Error::DimensionMismatch { expected: g.n(), found: site + 1 });
    }
    let mut out = g.g.clone();
    let q = 1.0 - eps;
    for j in 0..g.n() {
        out[(site, j)] *= q;
        out[(j, site)] *= q;
    }
    Ok(CorrelationMatrix { g: out })
}

/// Particles gained to the right of `cut` between two density snapshots.
pub fn flow_sim(before: &[f64], after: &[f64], cut: &CutSpec) -> f64 {
    cut.right_sites().map(|s| after[s] - before[s]).sum()
}

/// [`flow_sim`] on full correlation matrices.
pub fn flow_sim_matrix(before: &CorrelationMatrix, after: &CorrelationMatrix, cut: &CutSpec) -> f64 {
    cut.right_sites().map(|s| after.g[(s, s)].re - before.g[(s, s)].re).sum()
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Precomputed propagator blocks of one step.
#[derive(Debug, Clone)]
struct StepBlocks {
    /// Free sites (sorted) and measured sites (sorted).
    a: Vec<usize>,
    c: Vec<usize>,
    caa: DMatrix<f64>,
    saa: DMatrix<f64>,
    cac: DMatrix<f64>,
    sac: DMatrix<f64>,
    cca: DMatrix<f64>,
    sca: DMatrix<f64>,
    /// `|U_xy|^2` restricted to measured sites.
    wcc: DMatrix<f64>,
}

/// State between measurement steps: a Hermitian block on the free set of
/// the last completed step plus the diagonal everywhere.
#[derive(Debug, Clone)]
pub struct BlockState {
    /// 0-based step whose free set carries the block.
    step: usize,
    kr: DMatrix<f64>,
    ki: DMatrix<f64>,
    diag: Vec<f64>,
}

impl BlockState {
    pub fn densities(&self) -> &[f64] {
        &self.diag
    }
}

/// Exact measurement-protocol engine for one lattice, schedule and timing.
#[derive(Debug, Clone)]
pub struct ExactEngine {
    n_sites: usize,
    n_meas: usize,
    blocks: Vec<StepBlocks>,
    /// Hopping pairs per step for the Floquet protocol: (a, b).
    pairs: Vec<Vec<(usize, usize)>>,
    step_time: f64,
    pub cache: EvolutionCache,
}

impl ExactEngine {
    pub fn new(lattice: &Lattice, schedule: &MeasurementSchedule, params: &ProtocolParams) -> Result<Self> {
        let steps = schedule.period();
        let cache = EvolutionCache::from_lattice(lattice, params.tau(steps))?;
        let n = lattice.n_sites();
        let w = cache.cos.component_mul(&cache.cos) + cache.sin.component_mul(&cache.sin);
        let blocks = schedule
            .steps
            .iter()
            .map(|fs| {
                let a = fs.members.clone();
                let c = fs.complement(n);
                let cac = submatrix(&cache.cos, &a, &c);
                let sac = submatrix(&cache.sin, &a, &c);
                StepBlocks {
                    caa: submatrix(&cache.cos, &a, &a),
                    saa: submatrix(&cache.sin, &a, &a),
                    cca: cac.transpose(),
                    sca: sac.transpose(),
                    cac,
                    sac,
                    wcc: submatrix(&w, &c, &c),
                    a,
                    c,
                }
            })
            .collect();
        let pairs = schedule
            .steps
            .iter()
            .map(|fs| fs.pairs.iter().map(|p| (p.first, p.second)).collect())
            .collect();
        Ok(ExactEngine {
            n_sites: n,
            n_meas: params.n_meas,
            blocks,
            pairs,
            step_time: params.step_time(steps),
            cache,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn period(&self) -> usize {
        self.blocks.len()
    }

    /// Block state equivalent to `g`, held on the free set of the last step
    /// so that the next cycle starts with the periodic convention.
    pub fn block_state(&self, g: &CorrelationMatrix) -> Result<BlockState> {
        if g.n() != self.n_sites {
            return Err(Error::DimensionMismatch { expected: self.n_sites, found: g.n() });
        }
        let step = self.period() - 1;
        let a = &self.blocks[step].a;
        let kr = DMatrix::from_fn(a.len(), a.len(), |i, j| g.g[(a[i], a[j])].re);
        let ki = DMatrix::from_fn(a.len(), a.len(), |i, j| g.g[(a[i], a[j])].im);
        Ok(BlockState { step, kr, ki, diag: g.densities() })
    }

    /// Full correlation matrix of a block state.
    pub fn to_matrix(&self, state: &BlockState) -> CorrelationMatrix {
        let mut out = CorrelationMatrix::from_densities(&state.diag);
        let a = &self.blocks[state.step].a;
        for i in 0..a.len() {
            for j in 0..a.len() {
                if i != j {
                    out.g[(a[i], a[j])] = Complex64::new(state.kr[(i, j)], state.ki[(i, j)]);
                }
            }
        }
        out
    }

    /// Runs step `k` (0-based): measure the complement of `A_k` once, then
    /// `n` repetitions of free evolution followed by that measurement.
    pub fn run_step(&self, state: &mut BlockState, k: usize) -> Result<()> {
        let prev = &self.blocks[state.step];
        let cur = &self.blocks[k];
        let trace0: f64 = state.diag.iter().sum();
        // Measuring the complement of A_k keeps the previous block only on
        // A_k and A_{k-1} together.
        let mut pos_prev = vec![usize::MAX; self.n_sites];
        for (i, &s) in prev.a.iter().enumerate() {
            pos_prev[s] = i;
        }
        let na = cur.a.len();
        let mut kr = DMatrix::zeros(na, na);
        let mut ki = DMatrix::zeros(na, na);
        for i in 0..na {
            let pi = pos_prev[cur.a[i]];
            kr[(i, i)] = state.diag[cur.a[i]];
            if pi == usize::MAX {
                continue;
            }
            for j in 0..na {
                let pj = pos_prev[cur.a[j]];
                if i != j && pj != usize::MAX {
                    kr[(i, j)] = state.kr[(pi, pj)];
                    ki[(i, j)] = state.ki[(pi, pj)];
                }
            }
        }
        let mut gc: DVector<f64> = DVector::from_iterator(cur.c.len(), cur.c.iter().map(|&s| state.diag[s]));

        let nc = cur.c.len();
        let mut tr = DMatrix::zeros(na, na);
        let mut ti = DMatrix::zeros(na, na);
        let mut vr = DMatrix::zeros(nc, na);
        let mut vi = DMatrix::zeros(nc, na);
        let mut x = DMatrix::zeros(na, nc);
        let mut y = DMatrix::zeros(na, nc);
        let mut gc_next = DVector::zeros(nc);
        for _ in 0..self.n_meas {
            // New measured-site densities: |U_xy|^2 transport among measured
            // sites plus the diagonal of U_CA K U_CA^dagger.
            cur.wcc.mul_to(&gc, &mut gc_next);
            if na > 0 && nc > 0 {
                vr.gemm(1.0, &cur.cca, &kr, 0.0);
                vr.gemm(1.0, &cur.sca, &ki, 1.0);
                vi.gemm(1.0, &cur.cca, &ki, 0.0);
                vi.gemm(-1.0, &cur.sca, &kr, 1.0);
                for r in 0..nc {
                    let mut acc = 0.0;
                    for b in 0..na {
                        acc += vr[(r, b)] * cur.cca[(r, b)] - vi[(r, b)] * cur.sca[(r, b)];
                    }
                    gc_next[r] += acc;
                }
            }
            if na > 0 {
                // K -> U_AA K U_AA^dagger + U_AC diag(g_c) U_AC^dagger
                tr.gemm(1.0, &cur.caa, &kr, 0.0);
                tr.gemm(1.0, &cur.saa, &ki, 1.0);
                ti.gemm(1.0, &cur.caa, &ki, 0.0);
                ti.gemm(-1.0, &cur.saa, &kr, 1.0);
                kr.gemm(1.0, &tr, &cur.caa, 0.0);
                kr.gemm(-1.0, &ti, &cur.saa, 1.0);
                ki.gemm(1.0, &ti, &cur.caa, 0.0);
                ki.gemm(1.0, &tr, &cur.saa, 1.0);
                if nc > 0 {
                    x.copy_from(&cur.cac);
                    y.copy_from(&cur.sac);
                    for (col, &gv) in gc.iter().enumerate() {
                        x.column_mut(col).scale_mut(gv);
                        y.column_mut(col).scale_mut(gv);
                    }
                    kr.gemm(1.0, &x, &cur.cca, 1.0);
                    kr.gemm(1.0, &y, &cur.sca, 1.0);
                    ki.gemm(1.0, &x, &cur.sca, 1.0);
                    ki.gemm(-1.0, &y, &cur.cca, 1.0);
                }
            }
            std::mem::swap(&mut gc, &mut gc_next);
        }
        for (i, &s) in cur.a.iter().enumerate() {
            state.diag[s] = kr[(i, i)];
        }
        for (i, &s) in cur.c.iter().enumerate() {
            state.diag[s] = gc[i];
        }
        state.kr = kr;
        state.ki = ki;
        state.step = k;

        let trace1: f64 = state.diag.iter().sum();
        let drift = (trace1 - trace0).abs();
        if drift > DRIFT_TOL * trace0.abs().max(1.0) {
            return Err(Error::NumericalHealth(format!("trace drift {drift:e} in step {}", k + 1)));
        }
        let herm = (&state.kr - state.kr.transpose()).amax().max((&state.ki + state.ki.transpose()).amax());
        if herm > DRIFT_TOL {
            return Err(Error::NumericalHealth(format!("hermiticity error {herm:e} in step {}", k + 1)));
        }
        Ok(())
    }

    /// One full cycle; `observer(step, densities)` runs after every step
    /// (1-based step index).
    pub fn run_cycle_state(
        &self,
        state: &mut BlockState,
        mut observer: impl FnMut(usize, &[f64]),
    ) -> Result<()> {
        for k in 0..self.period() {
            self.run_step(state, k)?;
            observer(k + 1, &state.diag);
        }
        Ok(())
    }

    /// One full measured cycle on a full correlation matrix.
    pub fn run_cycle(&self, g: &CorrelationMatrix) -> Result<CorrelationMatrix> {
        let mut st = self.block_state(g)?;
        self.run_cycle_state(&mut st, |_, _| {})?;
        Ok(self.to_matrix(&st))
    }

    /// One cycle of the driven-hopping protocol with all measurements
    /// removed: step `k` rotates every free pair by `exp(-i n tau H_A)`.
    pub fn run_floquet_cycle_observed(
        &self,
        g: &CorrelationMatrix,
        mut observer: impl FnMut(usize, &[f64]),
    ) -> Result<CorrelationMatrix> {
        if g.n() != self.n_sites {
            return Err(Error::DimensionMismatch { expected: self.n_sites, found: g.n() });
        }
        let (c, s) = (self.step_time.cos(), self.step_time.sin());
        let is = Complex64::new(0.0, s);
        let trace0 = g.trace();
        let mut m = g.g.clone();
        for (k, pairs) in self.pairs.iter().enumerate() {
            for &(a, b) in pairs {
                // rows: U = [[c, -is], [-is, c]]
                for j in 0..self.n_sites {
                    let (ga, gb) = (m[(a, j)], m[(b, j)]);
                    m[(a, j)] = ga * c - is * gb;
                    m[(b, j)] = gb * c - is * ga;
                }
                // columns: U^dagger = [[c, is], [is, c]]
                for j in 0..self.n_sites {
                    let (ga, gb) = (m[(j, a)], m[(j, b)]);
                    m[(j, a)] = ga * c + gb * is;
                    m[(j, b)] = ga * is + gb * c;
                }
            }
            let d: Vec<f64> = m.diagonal().iter().map(|z| z.re).collect();
            observer(k + 1, &d);
        }
        let out = CorrelationMatrix { g: m };
        let drift = (out.trace() - trace0).abs();
        if drift > DRIFT_TOL * trace0.abs().max(1.0) {
            return Err(Error::NumericalHealth(format!("trace drift {drift:e} in Floquet cycle")));
        }
        Ok(out)
    }

    pub fn run_floquet_cycle(&self, g: &CorrelationMatrix) -> Result<CorrelationMatrix> {
        self.run_floquet_cycle_observed(g, |_, _| {})
    }
}

/// One measured cycle (builds the engine; reuse [`ExactEngine`] for many
/// cycles).
pub fn run_cycle(
    g: &CorrelationMatrix,
    lattice: &Lattice,
    schedule: &MeasurementSchedule,
    params: &ProtocolParams,
) -> Result<CorrelationMatrix> {
    ExactEngine::new(lattice, schedule, params)?.run_cycle(g)
}

/// One Floquet cycle (builds the engine).
pub fn run_floquet_cycle(
    g: &CorrelationMatrix,
    lattice: &Lattice,
    schedule: &MeasurementSchedule,
    params: &ProtocolParams,
) -> Result<CorrelationMatrix> {
    ExactEngine::new(lattice, schedule, params)?.run_floquet_cycle(g)
}
