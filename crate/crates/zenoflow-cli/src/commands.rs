//! The four subcommands.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use zenoflow::bulkedge::{f_total, simulated_flow};
use zenoflow::lattice::{
    build_lattice, build_schedule, cell_boundary_x, flow_cut, naive_square_schedule, validate_schedule, CutSpec,
    Lattice, LatticeSpec, MeasurementSchedule,
};
use zenoflow::nearzeno::{build_nz_cycle, nz_flow};
use zenoflow::quantum::{flow_sim, CorrelationMatrix, ExactEngine, ProtocolParams};
use zenoflow::zeno::{hop_probability_for, ZenoEngine};

use crate::config::{parse_grid, Axis, Engine, Fill, RunConfig, ScheduleChoice};

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or inputs (exit 2).
    Usage(String),
    /// The schedule failed validation (exit 1).
    Invalid(String),
    /// A simulation left its numerical-health budget (exit 3).
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Invalid(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<zenoflow::Error> for CliError {
    fn from(e: zenoflow::Error) -> Self {
        match e {
            zenoflow::Error::NumericalHealth(_) => CliError::Numerical(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Usage(format!("i/o error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Usage(format!("csv error: {e}"))
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Shortest decimal that round-trips to `x`; negative zero prints as `0`.
fn num(x: f64) -> String {
    if x == 0.0 { "0".to_string() } else { x.to_string() }
}

/// Drift allowed in the particle number per 100 cycles.
const DRIFT_PER_100_CYCLES: f64 = 1e-7;

fn setup(cfg: &RunConfig) -> Result<(Lattice, MeasurementSchedule)> {
    let lattice = build_lattice(&LatticeSpec::new(cfg.lattice, cfg.lx, cfg.ly, cfg.boundary))?;
    let schedule = match cfg.schedule {
        ScheduleChoice::Standard => build_schedule(&lattice)?,
        ScheduleChoice::Naive => naive_square_schedule(&lattice)?,
    };
    Ok((lattice, schedule))
}

fn cut_for(cfg: &RunConfig, l: &Lattice, s: &MeasurementSchedule) -> Result<CutSpec> {
    let x = cfg.cut_x.unwrap_or_else(|| cell_boundary_x(cfg.lattice, cfg.lx / 2));
    Ok(flow_cut(l, s, x)?)
}

fn initial_densities(cfg: &RunConfig, l: &Lattice) -> Result<Vec<f64>> {
    let n = l.n_sites();
    let g = match &cfg.fill {
        Fill::LowerHalf => l.lower_half_fill(),
        Fill::Uniform => vec![1.0; n],
        Fill::SingleSite(id) => {
            if *id >= n {
                return Err(CliError::Usage(format!("site {id} out of range (lattice has {n} sites)")));
            }
            let mut g = vec![0.0; n];
            g[*id] = 1.0;
            g
        }
        Fill::File(path) => read_densities(path, n)?,
    };
    Ok(g)
}

fn read_densities(path: &Path, n: usize) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read fill file {}: {e}", path.display())))?;
    let mut g = Vec::with_capacity(n);
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| CliError::Usage(format!("{}:{}: bad density '{line}'", path.display(), i + 1)))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(CliError::Usage(format!("{}:{}: density {v} outside [0, 1]", path.display(), i + 1)));
        }
        g.push(v);
    }
    if g.len() != n {
        return Err(CliError::Usage(format!("fill file has {} densities, lattice has {n} sites", g.len())));
    }
    Ok(g)
}

fn writer_for(out: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(io::BufWriter::new(fs::File::create(p)?))
        }
        None => Box::new(io::stdout().lock()),
    };
    Ok(csv::Writer::from_writer(sink))
}

pub fn validate(cfg: &RunConfig, dump: bool) -> Result<()> {
    let (l, s) = setup(cfg)?;
    if dump {
        print!("{}", l.dump(Some(&s)));
    }
    let report = validate_schedule(&l, &s);
    println!(
        "{} {}x{} {}, {} schedule: {} sites, {} steps, minimum pair distance {}",
        cfg.lattice,
        cfg.lx,
        cfg.ly,
        cfg.boundary,
        cfg.schedule,
        l.n_sites(),
        s.period(),
        report.min_pair_distance.map_or("n/a".to_string(), |d| d.to_string())
    );
    for v in &report.violations {
        let (a, b) = v.pairs;
        println!(
            "  step {}: {:?} between pairs {}-{} and {}-{} at distance {}",
            v.step, v.kind, a.first, a.second, b.first, b.second, v.distance
        );
    }
    if report.is_valid() {
        println!("valid");
        Ok(())
    } else {
        Err(CliError::Invalid(format!("schedule invalid: {} violation(s)", report.violations.len())))
    }
}

/// Records the density snapshot and the cut transfer of every step.
struct Recorder<'a> {
    lattice: &'a Lattice,
    density: csv::Writer<Box<dyn Write>>,
    flow: csv::Writer<Box<dyn Write>>,
    cumulative: f64,
}

impl Recorder<'_> {
    fn densities(&mut self, cycle: usize, step: usize, g: &[f64]) -> Result<()> {
        for (s, v) in self.lattice.sites.iter().zip(g) {
            self.density.write_record([
                cycle.to_string(),
                step.to_string(),
                s.id.to_string(),
                num(s.pos.0),
                num(s.pos.1),
                num(*v),
            ])?;
        }
        Ok(())
    }

    fn flow(&mut self, cycle: usize, step: usize, step_flow: f64) -> Result<()> {
        self.cumulative += step_flow;
        self.flow.write_record([
            cycle.to_string(),
            step.to_string(),
            num(self.cumulative),
            num(step_flow),
        ])?;
        Ok(())
    }
}

fn check_drift(total0: f64, g: &[f64], cycles: usize) -> Result<()> {
    let drift = (g.iter().sum::<f64>() - total0).abs();
    let budget = DRIFT_PER_100_CYCLES * (cycles as f64 / 100.0).max(1.0);
    if drift > budget || !drift.is_finite() {
        return Err(CliError::Numerical(format!("particle number drifted by {drift:e} (budget {budget:e})")));
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let (l, s) = setup(cfg)?;
    let report = validate_schedule(&l, &s);
    if !report.is_valid() {
        return Err(CliError::Invalid(format!("schedule invalid: {} violation(s)", report.violations.len())));
    }
    let cut = cut_for(cfg, &l, &s)?;
    let g0 = initial_densities(cfg, &l)?;
    let total0: f64 = g0.iter().sum();
    let params = ProtocolParams::new(cfg.period, cfg.nmeas)?;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("zenoflow-out"));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.txt"), cfg.dump())?;
    let mut density = writer_for(Some(&dir.join("density.csv")))?;
    density.write_record(["cycle", "step", "site", "x", "y", "density"])?;
    let mut flow = writer_for(Some(&dir.join("flow.csv")))?;
    flow.write_record(["cycle", "step", "cumulative_flow", "step_flow"])?;
    let mut rec = Recorder { lattice: &l, density, flow, cumulative: 0.0 };
    rec.densities(0, 0, &g0)?;
    let period = s.period();
    let gain = |before: &[f64], after: &[f64]| flow_sim(before, after, &cut);

    let final_g = match cfg.engine {
        Engine::Zeno => {
            let eng = ZenoEngine::new(&s, hop_probability_for(cfg.period, period))?;
            let mut g = g0.clone();
            for c in 1..=cfg.cycles {
                for k in 0..period {
                    let f = eng.cut_flux(k, &g, &cut);
                    eng.apply_step(k, &mut g);
                    rec.flow(c, k + 1, f)?;
                    rec.densities(c, k + 1, &g)?;
                }
            }
            g
        }
        Engine::Exact => {
            let eng = ExactEngine::new(&l, &s, &params)?;
            let mut st = eng.block_state(&CorrelationMatrix::from_densities(&g0))?;
            let mut prev = g0.clone();
            let mut failure = None;
            for c in 1..=cfg.cycles {
                eng.run_cycle_state(&mut st, |k, d| {
                    let f = gain(&prev, d);
                    prev = d.to_vec();
                    if let Err(e) = rec.flow(c, k, f).and_then(|_| rec.densities(c, k, d)) {
                        failure.get_or_insert(e);
                    }
                })?;
                if let Some(e) = failure.take() {
                    return Err(e);
                }
            }
            st.densities().to_vec()
        }
        Engine::Floquet => {
            let eng = ExactEngine::new(&l, &s, &params)?;
            let mut g = CorrelationMatrix::from_densities(&g0);
            let mut prev = g0.clone();
            let mut failure = None;
            for c in 1..=cfg.cycles {
                g = eng.run_floquet_cycle_observed(&g, |k, d| {
                    let f = gain(&prev, d);
                    prev = d.to_vec();
                    if let Err(e) = rec.flow(c, k, f).and_then(|_| rec.densities(c, k, d)) {
                        failure.get_or_insert(e);
                    }
                })?;
                if let Some(e) = failure.take() {
                    return Err(e);
                }
            }
            g.densities()
        }
        Engine::NearZeno => {
            // The near-Zeno model is a cycle map: one row per cycle, labelled
            // with the last step.
            let r = build_nz_cycle(&l, &s, &params)?.r.map(|z| z.re);
            let mut g = nalgebra::DVector::from_column_slice(&g0);
            for c in 1..=cfg.cycles {
                let next = &r * &g;
                rec.flow(c, period, gain(g.as_slice(), next.as_slice()))?;
                rec.densities(c, period, next.as_slice())?;
                g = next;
            }
            g.as_slice().to_vec()
        }
    };
    check_drift(total0, &final_g, cfg.cycles)?;
    rec.density.flush()?;
    rec.flow.flush()?;
    let per_cycle = if cfg.cycles > 0 { rec.cumulative / cfg.cycles as f64 } else { 0.0 };
    println!(
        "{} engine, {} cycles on {} {}x{} {}: {} particles crossed x = {} ({} per cycle); wrote {}",
        cfg.engine,
        cfg.cycles,
        cfg.lattice,
        cfg.lx,
        cfg.ly,
        cfg.boundary,
        rec.cumulative,
        cut.x_cut,
        per_cycle,
        dir.display()
    );
    Ok(())
}

fn grid_or(cfg: &RunConfig, default: &str) -> Result<Vec<f64>> {
    parse_grid(cfg.grid.as_deref().unwrap_or(default)).map_err(CliError::Usage)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn p_scan_row(cfg: &RunConfig, p: f64) -> [String; 7] {
    let analytic = f_total(p);
    let sim = simulated_flow(p, cfg.lx, cfg.ly, cfg.cycles).map(|s| 4.0 * s.f_sim);
    let (fb, fe, ft) = match &analytic {
        Ok(d) => (Some(d.f_bulk), Some(d.f_edge), Some(d.f_total)),
        Err(_) => (None, None, None),
    };
    let fs = sim.as_ref().ok().copied();
    let err = match (ft, fs) {
        (Some(a), Some(b)) => Some((a - b).abs()),
        _ => None,
    };
    let error = [analytic.err().map(|e| e.to_string()), sim.err().map(|e| e.to_string())]
        .into_iter()
        .flatten()
        .collect::<Vec<_>>()
        .join("; ");
    [num(p), fmt_opt(fb), fmt_opt(fe), fmt_opt(ft), fmt_opt(fs), fmt_opt(err), error]
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn n_scan_point(cfg: &RunConfig, l: &Lattice, s: &MeasurementSchedule, cut: &CutSpec, g0: &[f64], n: f64) -> zenoflow::Result<(f64, f64)> {
    if n < 1.0 || n.fract() != 0.0 {
        return Err(zenoflow::Error::InvalidParams(format!("n must be a positive integer, got {n}")));
    }
    let params = ProtocolParams::new(cfg.period, n as usize)?;
    let nz = mean(&nz_flow(l, s, &params, cfg.cycles, g0, cut)?);
    let eng = ExactEngine::new(l, s, &params)?;
    let mut st = eng.block_state(&CorrelationMatrix::from_densities(g0))?;
    let mut prev = g0.to_vec();
    let mut flows = Vec::with_capacity(cfg.cycles);
    for _ in 0..cfg.cycles {
        eng.run_cycle_state(&mut st, |_, _| {})?;
        flows.push(flow_sim(&prev, st.densities(), cut));
        prev = st.densities().to_vec();
    }
    Ok((nz, mean(&flows)))
}

pub fn scan(cfg: &RunConfig) -> Result<()> {
    let mut w = writer_for(cfg.out.as_deref())?;
    match cfg.axis {
        Axis::P => {
            let grid = grid_or(cfg, "0:0.05:1")?;
            w.write_record(["p", "f_bulk", "f_edge", "f_total", "f_sim_x4", "abs_err", "error"])?;
            let rows: Vec<[String; 7]> = grid.par_iter().map(|&p| p_scan_row(cfg, p)).collect();
            for row in rows {
                w.write_record(row)?;
            }
        }
        Axis::N => {
            let grid = grid_or(cfg, "8,16,32,64,128,256")?;
            let (l, s) = setup(cfg)?;
            let cut = cut_for(cfg, &l, &s)?;
            let g0 = initial_densities(cfg, &l)?;
            w.write_record(["n", "flow_nz", "flow_exact", "abs_err", "error"])?;
            let rows: Vec<[String; 5]> = grid
                .par_iter()
                .map(|&n| match n_scan_point(cfg, &l, &s, &cut, &g0, n) {
                    Ok((nz, ex)) => [num(n), num(nz), num(ex), num((nz - ex).abs()), String::new()],
                    Err(e) => [num(n), String::new(), String::new(), String::new(), e.to_string()],
                })
                .collect();
            for row in rows {
                w.write_record(row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn decompose(cfg: &RunConfig) -> Result<()> {
    let grid = grid_or(cfg, "0:0.25:1")?;
    let mut w = writer_for(cfg.out.as_deref())?;
    w.write_record(["p", "f_bulk", "f_edge", "f_total"])?;
    for p in grid {
        let d = f_total(p)?;
        w.write_record([num(p), num(d.f_bulk), num(d.f_edge), num(d.f_total)])?;
    }
    w.flush()?;
    Ok(())
}
