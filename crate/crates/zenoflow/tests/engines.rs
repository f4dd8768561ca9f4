//! Cross-checks between the exact, Zeno, Floquet and near-Zeno engines.

use std::f64::consts::PI;

use num_complex::Complex64;
use zenoflow::lattice::{
    build_lattice, build_schedule, cell_boundary_x, flow_cut, Boundary, CutSpec, Lattice, LatticeKind,
    LatticeSpec, MeasurementSchedule,
};
use zenoflow::nearzeno::{build_correction, build_nz_cycle_with, classify_sites, NzForm, SiteClass};
use zenoflow::quantum::{hs_norm, CorrelationMatrix, ExactEngine, ProtocolParams};
use zenoflow::zeno::{
    build_cycle_matrix, evolve_density, moment_generating, per_step_flow, spectral_gap_check, ZenoEngine,
};

fn lieb(lx: usize, ly: usize, b: Boundary) -> (Lattice, MeasurementSchedule) {
    let l = build_lattice(&LatticeSpec::new(LatticeKind::Lieb, lx, ly, b)).unwrap();
    let s = build_schedule(&l).unwrap();
    (l, s)
}

fn mid_cut(l: &Lattice, s: &MeasurementSchedule) -> CutSpec {
    flow_cut(l, s, cell_boundary_x(l.spec.kind, l.spec.lx / 2)).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn exact_after(l: &Lattice, s: &MeasurementSchedule, n: usize, cycles: usize, g0: &[f64]) -> Vec<f64> {
    let eng = ExactEngine::new(l, s, &ProtocolParams::new(4.0 * PI, n).unwrap()).unwrap();
    let mut st = eng.block_state(&CorrelationMatrix::from_densities(g0)).unwrap();
    for _ in 0..cycles {
        eng.run_cycle_state(&mut st, |_, _| {}).unwrap();
    }
    st.densities().to_vec()
}

fn zeno_after(s: &MeasurementSchedule, p: f64, cycles: usize, g0: &[f64]) -> Vec<f64> {
    let e = ZenoEngine::new(s, p).unwrap();
    let mut g = g0.to_vec();
    for _ in 0..cycles {
        e.apply_cycle(&mut g);
    }
    g
}

#[test]
fn exact_engine_approaches_zeno_walk() {
    let (l, s) = lieb(4, 4, Boundary::Open);
    let g0 = l.lower_half_fill();
    let zeno = zeno_after(&s, 1.0, 1, &g0);
    let errs: Vec<f64> = [64, 128, 256, 512].iter().map(|&n| max_abs_diff(&exact_after(&l, &s, n, 1, &g0), &zeno)).collect();
    for w in errs.windows(2) {
        assert!(w[1] / w[0] <= 0.7, "{errs:?}");
    }
    assert!(errs[3] < 0.06);
}

#[test]
fn near_zeno_product_matches_exact_engine() {
    for b in [Boundary::Open, Boundary::Torus] {
        let (l, s) = lieb(4, 4, b);
        let g0 = l.lower_half_fill();
        let mut errs = Vec::new();
        for n in [128, 256, 512] {
            let params = ProtocolParams::new(4.0 * PI, n).unwrap();
            let exact = exact_after(&l, &s, n, 1, &g0);
            let first = build_nz_cycle_with(&l, &s, &params, NzForm::FirstOrder).unwrap().r.map(|z| z.re);
            let prod = build_nz_cycle_with(&l, &s, &params, NzForm::Product).unwrap().r.map(|z| z.re);
            let g = nalgebra::DVector::from_column_slice(&g0);
            let e1 = max_abs_diff((&first * &g).as_slice(), &exact);
            let e2 = max_abs_diff((&prod * &g).as_slice(), &exact);
            errs.push((e1, e2));
        }
        assert!(errs[0].0 / errs[1].0 >= 3.0 && errs[1].0 / errs[2].0 >= 3.0, "{errs:?}");
        assert!(errs[2].1 < 1e-3, "{errs:?}");
    }
}

#[test]
fn bulk_particle_returns_after_five_cycles_in_zeno_regime() {
    let (l, s) = lieb(3, 3, Boundary::Torus);
    let start = l.sites.iter().find(|x| x.cell == (1, 1) && x.internal == 1).unwrap().id;
    let mut g0 = vec![0.0; l.n_sites()];
    g0[start] = 1.0;
    let g = exact_after(&l, &s, 400, 5, &g0);
    assert!(g[start] > 0.5);
}

#[test]
fn floquet_equals_zeno_at_perfect_switching() {
    let (l, s) = lieb(4, 4, Boundary::CylinderX);
    let g0 = l.lower_half_fill();
    let eng = ExactEngine::new(&l, &s, &ProtocolParams::new(4.0 * PI, 3).unwrap()).unwrap();
    let mut g = CorrelationMatrix::from_densities(&g0);
    let mut z = g0.clone();
    let ze = ZenoEngine::new(&s, 1.0).unwrap();
    for _ in 0..4 {
        g = eng.run_floquet_cycle(&g).unwrap();
        ze.apply_cycle(&mut z);
        assert!(max_abs_diff(&g.densities(), &z) < 1e-10);
    }
}

#[test]
fn floquet_preserves_spectrum_invariants() {
    let (l, s) = lieb(2, 2, Boundary::Open);
    let eng = ExactEngine::new(&l, &s, &ProtocolParams::new(3.3, 5).unwrap()).unwrap();
    let mut g = CorrelationMatrix::from_densities(&l.lower_half_fill());
    g.g[(0, 1)] = Complex64::new(0.2, 0.1);
    g.g[(1, 0)] = Complex64::new(0.2, -0.1);
    let out = eng.run_floquet_cycle(&g).unwrap();
    assert!((hs_norm(&out) - hs_norm(&g)).abs() < 1e-10);
    assert!((out.trace() - g.trace()).abs() < 1e-10);
    let g2 = &g.g * &g.g;
    let o2 = &out.g * &out.g;
    assert!((g2.trace() - o2.trace()).norm() < 1e-10);
}

/// Per-step transfer across `cut` for the exact engine, last of `cycles`.
fn exact_step_flows(l: &Lattice, s: &MeasurementSchedule, params: &ProtocolParams, cycles: usize, floquet: bool) -> Vec<f64> {
    let cut = mid_cut(l, s);
    let eng = ExactEngine::new(l, s, params).unwrap();
    let mut g = CorrelationMatrix::from_densities(&l.lower_half_fill());
    let mut out = Vec::new();
    for _ in 0..cycles {
        let mut prev = g.densities();
        out.clear();
        let obs = |_: usize, d: &[f64]| {
            out.push(cut.right_sites().map(|x| d[x] - prev[x]).sum::<f64>());
            prev = d.to_vec();
        };
        g = if floquet {
            eng.run_floquet_cycle_observed(&g, obs).unwrap()
        } else {
            let mut st = eng.block_state(&g).unwrap();
            eng.run_cycle_state(&mut st, obs).unwrap();
            eng.to_matrix(&st)
        };
    }
    out
}

#[test]
fn floquet_and_measured_step_profiles_differ() {
    let (l, s) = lieb(4, 8, Boundary::Open);
    let t = 8.0 * (0.96f64).sqrt().asin();
    let params = ProtocolParams::new(t, 64).unwrap();
    let meas = exact_step_flows(&l, &s, &params, 3, false);
    let floq = exact_step_flows(&l, &s, &params, 3, true);
    assert!(max_abs_diff(&meas, &floq) > 1e-3);
}

#[test]
fn zeno_density_evolution_examples() {
    let (l, s) = lieb(3, 3, Boundary::Torus);
    let uniform = vec![0.5; l.n_sites()];
    let c = build_cycle_matrix(&l, &s, 0.4, 0.0).unwrap();
    assert!(max_abs_diff(&evolve_density(&uniform, &c, 7).unwrap(), &uniform) < 1e-12);
    let g0 = l.lower_half_fill();
    let c1 = build_cycle_matrix(&l, &s, 1.0, 0.0).unwrap();
    assert_eq!(evolve_density(&g0, &c1, 5).unwrap(), g0);
    let c_theta = build_cycle_matrix(&l, &s, 0.4, 0.3).unwrap();
    assert!(evolve_density(&g0, &c_theta, 1).is_err());

    let (l, s) = lieb(3, 4, Boundary::CylinderX);
    let g0 = l.lower_half_fill();
    let mean = g0.iter().sum::<f64>() / g0.len() as f64;
    let c = build_cycle_matrix(&l, &s, 0.5, 0.0).unwrap();
    let spread = |g: &[f64]| g.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max);
    let early = spread(&evolve_density(&g0, &c, 20).unwrap());
    let late = spread(&evolve_density(&g0, &c, 200).unwrap());
    assert!(late < 1e-3 && late < early);
}

#[test]
fn edge_particle_moment_generating_function() {
    let (l, s) = lieb(6, 2, Boundary::CylinderX);
    let start = l.sites.iter().find(|x| x.cell == (2, 0) && x.internal == 0).unwrap().id;
    let mut g0 = vec![0.0; l.n_sites()];
    g0[start] = 1.0;
    let theta = 0.37;
    let chi = moment_generating(&l, &s, 1.0, theta, 2, &g0).unwrap();
    // One cell to the right is four horizontal bonds.
    assert!((chi - Complex64::from_polar(1.0, -4.0 * theta)).norm() < 1e-12);
    assert_eq!(moment_generating(&l, &s, 0.3, theta, 0, &g0).unwrap(), Complex64::new(1.0, 0.0));
}

#[test]
fn all_link_flow_is_four_times_cut_flow_at_p1() {
    let (l, s) = lieb(8, 8, Boundary::CylinderX);
    let g0 = l.lower_half_fill();
    let per = per_step_flow(&l, &s, 1.0, 25, &g0).unwrap();
    let sums: Vec<f64> = per.iter().map(|c| c.iter().sum()).collect();
    for w in sums[5..].chunks(5) {
        assert!((w.iter().sum::<f64>() / 5.0 - 4.0).abs() < 1e-12);
    }
}

#[test]
fn spectral_gap_examples() {
    let r = spectral_gap_check(0.5, 16).unwrap();
    assert!(r.gapped());
    assert!((r.radius_at_zero - 1.0).abs() < 1e-12);
    let r1 = spectral_gap_check(1.0, 5).unwrap();
    assert!(r1.points.iter().all(|&(_, _, rho)| (rho - 1.0).abs() < 1e-12));
}

#[test]
fn near_zeno_classes_and_lone_site_rows() {
    let (l, s) = lieb(4, 4, Boundary::Open);
    let params = ProtocolParams::new(4.0 * PI, 100).unwrap();
    let mut saw_lone = false;
    for i in 1..=8 {
        let class = classify_sites(&l, &s, i).unwrap();
        let step = s.step(i).unwrap();
        let rt = build_correction(&l, &s, i, &params).unwrap().rt;
        for p in &step.pairs {
            assert_eq!(class[p.first], SiteClass::Pair);
        }
        for &a in &step.isolated {
            if class[a] == SiteClass::Lone {
                saw_lone = true;
                assert_eq!(rt[(a, a)], l.degree(a) as f64);
            }
        }
        // A measured bulk site of degree four far from the pairs.
        for a in 0..l.n_sites() {
            if class[a] == SiteClass::Remote && l.degree(a) == 4 {
                assert_eq!(rt[(a, a)], 4.0);
                assert_eq!(rt.row(a).iter().filter(|&&x| x == -1.0).count(), 4);
            }
        }
    }
    assert!(saw_lone);
}

#[test]
fn other_lattices_run_in_both_limits() {
    for kind in [LatticeKind::Square, LatticeKind::KagomeMod] {
        let l = build_lattice(&LatticeSpec::new(kind, 3, 3, Boundary::Torus)).unwrap();
        let s = build_schedule(&l).unwrap();
        let g0 = l.lower_half_fill();
        let total: f64 = g0.iter().sum();
        let steps = s.period() as f64;
        let zeno = zeno_after(&s, 1.0, 1, &g0);
        let errs: Vec<f64> = [128, 256, 512]
            .iter()
            .map(|&n| {
                let params = ProtocolParams::new(steps * PI / 2.0, n).unwrap();
                let eng = ExactEngine::new(&l, &s, &params).unwrap();
                let mut st = eng.block_state(&CorrelationMatrix::from_densities(&g0)).unwrap();
                eng.run_cycle_state(&mut st, |_, _| {}).unwrap();
                assert!((st.densities().iter().sum::<f64>() - total).abs() < 1e-10);
                max_abs_diff(st.densities(), &zeno)
            })
            .collect();
        assert!(errs[1] < 0.7 * errs[0] && errs[2] < 0.7 * errs[1], "{kind}: {errs:?}");
    }
}
