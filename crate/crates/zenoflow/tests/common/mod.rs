//! Randomized invariants shared by the property tests and the acceptance
//! harness.

#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use zenoflow::lattice::{
    build_lattice, build_schedule, validate_schedule, Boundary, Lattice, LatticeKind, LatticeSpec,
    MeasurementSchedule,
};
use zenoflow::nearzeno::{build_correction, build_nz_cycle};
use zenoflow::quantum::{
    evolve_free, hs_norm, measure_sites, CorrelationMatrix, EvolutionCache, ExactEngine, ProtocolParams,
};
use zenoflow::zeno::{build_cycle_matrix, build_step_matrix};

/// One randomized instance: a small lattice plus protocol parameters and a
/// seed for the random correlation matrix.
#[derive(Debug, Clone)]
pub struct Instance {
    pub spec: LatticeSpec,
    pub p: f64,
    pub period: f64,
    pub n_meas: usize,
    pub n_perfect: usize,
    pub seed: u64,
}

fn buildable(spec: &LatticeSpec) -> Option<(Lattice, MeasurementSchedule)> {
    let l = build_lattice(spec).ok()?;
    let s = build_schedule(&l).ok()?;
    Some((l, s))
}

pub fn instance_strategy() -> impl Strategy<Value = Instance> {
    let kind = prop_oneof![
        Just(LatticeKind::Lieb),
        Just(LatticeKind::Square),
        Just(LatticeKind::KagomeMod)
    ];
    let boundary = prop_oneof![Just(Boundary::Open), Just(Boundary::CylinderX), Just(Boundary::Torus)];
    (kind, 1usize..=3, 1usize..=3, boundary, 0.0..=1.0f64, 0.2..8.0f64, 1usize..=4, 1usize..=600, any::<u64>())
        .prop_filter_map("lattice must build", |(kind, lx, ly, b, p, period, n_meas, n_perfect, seed)| {
            let spec = LatticeSpec::new(kind, lx, ly, b);
            buildable(&spec)?;
            Some(Instance { spec, p, period, n_meas, n_perfect, seed })
        })
}

/// Random Hermitian, positive semi-definite matrix with unit trace, so all
/// eigenvalues lie in `[0, 1]`.
pub fn random_correlation(n: usize, rng: &mut StdRng) -> CorrelationMatrix {
    let a = DMatrix::from_fn(n, n, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let g = &a * a.adjoint();
    let tr = g.trace().re;
    CorrelationMatrix { g: g / Complex64::new(tr, 0.0) }
}

fn max_diff(a: &CorrelationMatrix, b: &CorrelationMatrix) -> f64 {
    (&a.g - &b.g).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn ensure(cond: bool, what: impl Into<String>) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(what.into()))
    }
}

fn line_sums(r: &DMatrix<Complex64>) -> f64 {
    let rows = r.row_iter().map(|row| (row.iter().map(|z| z.re).sum::<f64>() - 1.0).abs());
    let cols = r.column_iter().map(|c| (c.iter().map(|z| z.re).sum::<f64>() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// Checks every invariant on one instance.
pub fn check_instance(inst: &Instance) -> Result<(), TestCaseError> {
    let (l, s) = buildable(&inst.spec).ok_or_else(|| TestCaseError::reject("unbuildable"))?;
    let n = l.n_sites();
    let steps = s.period();
    let mut rng = StdRng::seed_from_u64(inst.seed);
    ensure(validate_schedule(&l, &s).is_valid(), "schedule must validate")?;

    // Measurements: trace, Hermiticity, idempotence, composition, HS norm.
    let g = random_correlation(n, &mut rng);
    let i = rng.gen_range(0..steps);
    let j = rng.gen_range(0..steps);
    let m1 = s.steps[i].complement(n);
    let m2 = s.steps[j].complement(n);
    let a = measure_sites(&g, &m1);
    ensure((a.trace() - g.trace()).abs() < 1e-12, "measurement conserves the trace")?;
    ensure(a.hermiticity_error() < 1e-14, "measurement keeps G Hermitian")?;
    ensure(max_diff(&measure_sites(&a, &m1), &a) == 0.0, "measurement is idempotent")?;
    let union: Vec<usize> = (0..n).filter(|x| m1.contains(x) || m2.contains(x)).collect();
    ensure(
        max_diff(&measure_sites(&a, &m2), &measure_sites(&g, &union)) == 0.0,
        "measuring two sets equals measuring their union",
    )?;
    ensure(hs_norm(&a) <= hs_norm(&g) + 1e-15, "measurement does not raise the HS norm")?;

    // Unitary evolution: trace, Hermiticity and HS norm preserved.
    let cache = EvolutionCache::from_lattice(&l, inst.period / 8.0).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let u = evolve_free(&g, &cache).map_err(|e| TestCaseError::fail(e.to_string()))?;
    ensure((u.trace() - g.trace()).abs() < 1e-12, "unitary evolution conserves the trace")?;
    ensure(u.hermiticity_error() < 1e-12, "unitary evolution keeps G Hermitian")?;
    ensure((hs_norm(&u) - hs_norm(&g)).abs() < 1e-12, "unitary evolution keeps the HS norm")?;

    // A full measured cycle.
    let params = ProtocolParams::new(inst.period, inst.n_meas).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let eng = ExactEngine::new(&l, &s, &params).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let c = eng.run_cycle(&g).map_err(|e| TestCaseError::fail(e.to_string()))?;
    ensure((c.trace() - g.trace()).abs() < 1e-10, "a measured cycle conserves the trace")?;
    ensure(c.hermiticity_error() < 1e-12, "a measured cycle keeps G Hermitian")?;
    ensure(hs_norm(&c) <= hs_norm(&g) + 1e-10, "a measured cycle does not raise the HS norm")?;

    // Zeno transition matrices are doubly stochastic and non-negative.
    for k in 1..=steps {
        let r = build_step_matrix(&l, &s, k, inst.p, 0.0).map_err(|e| TestCaseError::fail(e.to_string()))?.r;
        ensure(line_sums(&r) < 1e-14, format!("step {k} matrix is doubly stochastic"))?;
        ensure(r.iter().all(|z| z.re >= 0.0 && z.im == 0.0), format!("step {k} matrix is non-negative"))?;
    }
    let cyc = build_cycle_matrix(&l, &s, inst.p, 0.0).map_err(|e| TestCaseError::fail(e.to_string()))?.r;
    ensure(line_sums(&cyc) < 1e-12, "cycle matrix is doubly stochastic")?;

    // Near-Zeno corrections at perfect switching.
    let perfect = ProtocolParams::new(steps as f64 * FRAC_PI_2, inst.n_perfect)
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    for k in 1..=steps {
        let rt = build_correction(&l, &s, k, &perfect).map_err(|e| TestCaseError::fail(e.to_string()))?;
        ensure(rt.line_sum_error() == 0.0, format!("correction {k} has zero line sums"))?;
    }
    let nz = build_nz_cycle(&l, &s, &perfect).map_err(|e| TestCaseError::fail(e.to_string()))?.r;
    ensure(line_sums(&nz) < 1e-12, "near-Zeno cycle matrix has unit line sums")?;
    Ok(())
}
