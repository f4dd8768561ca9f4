//! Lattice geometry, measurement schedules and schedule validation.
//!
//! Three lattices are supported:
//!
//! * `Lieb` — the line-centred square lattice with six sites per dynamical
//!   unit cell and an eight-step measurement cycle around each active
//!   plaquette.
//! * `Square` — the Lieb lattice plus the plaquette centres (eight sites per
//!   cell). It runs the same eight-step cycle; [`naive_square_schedule`]
//!   builds the obvious four-step protocol, which fails validation.
//! * `KagomeMod` — a kagome lattice with an extra site on every bond (nine
//!   sites per cell) and a six-step cycle that runs around every triangle.
//!
//! Lieb and square coordinates are integer half-units of the bond length with
//! y pointing up. The bottom boundary is flat and the top boundary is jagged.
//! Kagome coordinates are integer skew coordinates. Real positions are in
//! units of the bond length.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Site index into [`Lattice::sites`].
pub type SiteId = usize;

/// Integer lattice coordinate.
pub type Coord = (i64, i64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LatticeKind {
    Lieb,
    Square,
    KagomeMod,
}

impl LatticeKind {
    /// Number of sites per dynamical unit cell.
    pub fn cell_size(self) -> usize {
        match self {
            LatticeKind::Lieb => 6,
            LatticeKind::Square => 8,
            LatticeKind::KagomeMod => 9,
        }
    }

    /// Number of measurement steps in one cycle.
    pub fn steps(self) -> usize {
        match self {
            LatticeKind::Lieb | LatticeKind::Square => 8,
            LatticeKind::KagomeMod => 6,
        }
    }

    fn offsets(self) -> &'static [Coord] {
        match self {
            LatticeKind::Lieb => &LIEB_OFFSETS,
            LatticeKind::Square => &SQUARE_OFFSETS,
            LatticeKind::KagomeMod => &KAGOME_OFFSETS,
        }
    }
}

impl fmt::Display for LatticeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LatticeKind::Lieb => "lieb",
            LatticeKind::Square => "square",
            LatticeKind::KagomeMod => "kagome_mod",
        })
    }
}

impl FromStr for LatticeKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lieb" => Ok(LatticeKind::Lieb),
            "square" => Ok(LatticeKind::Square),
            "kagome_mod" => Ok(LatticeKind::KagomeMod),
            other => Err(format!(
                "unknown lattice '{other}' (expected lieb, square or kagome_mod)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Boundary {
    Open,
    /// Periodic in x, open in y.
    CylinderX,
    /// Periodic in both directions.
    Torus,
}

impl Boundary {
    pub fn periodic_x(self) -> bool {
        !matches!(self, Boundary::Open)
    }

    pub fn periodic_y(self) -> bool {
        matches!(self, Boundary::Torus)
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Open => "open",
            Boundary::CylinderX => "cylinder_x",
            Boundary::Torus => "torus",
        })
    }
}

impl FromStr for Boundary {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "open" => Ok(Boundary::Open),
            "cylinder_x" => Ok(Boundary::CylinderX),
            "torus" => Ok(Boundary::Torus),
            other => Err(format!(
                "unknown boundary '{other}' (expected open, cylinder_x or torus)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatticeSpec {
    pub kind: LatticeKind,
    /// Dynamical unit cells along x.
    pub lx: usize,
    /// Dynamical unit cells along y.
    pub ly: usize,
    pub boundary: Boundary,
}

impl LatticeSpec {
    pub fn new(kind: LatticeKind, lx: usize, ly: usize, boundary: Boundary) -> Self {
        LatticeSpec { kind, lx, ly, boundary }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub id: SiteId,
    /// Dynamical unit cell (cx, cy) owning the site.
    pub cell: (usize, usize),
    /// Position inside the unit cell, 0-based.
    pub internal: usize,
    /// Integer coordinate (wrapped into the fundamental domain).
    pub coord: Coord,
    /// Real-space position in bond lengths.
    pub pos: (f64, f64),
}

// Lieb site types 1..6 relative to the type-1 corner of a cell.
const LIEB_OFFSETS: [Coord; 6] = [(0, 0), (0, 1), (1, 0), (2, 0), (2, 1), (3, 0)];
// Lieb types plus the two plaquette centres.
const SQUARE_OFFSETS: [Coord; 8] =
    [(0, 0), (0, 1), (1, 0), (2, 0), (2, 1), (3, 0), (1, -1), (3, -1)];
// Kagome vertices A, B, C followed by the six bond midpoints of the cell.
const KAGOME_OFFSETS: [Coord; 9] = [
    (0, 0),
    (4, 0),
    (0, 4),
    (2, 0),
    (2, 2),
    (0, 2),
    (6, 0),
    (8, -2),
    (6, -2),
];

// Lieb/square loop around an active plaquette, starting from the type-1
// corner; step k activates the bond (LOOP[k], LOOP[k+1]).
const PLAQUETTE_LOOP: [Coord; 8] =
    [(0, 0), (1, 0), (2, 0), (2, -1), (2, -2), (1, -2), (0, -2), (0, -1)];

// Kagome triangle loops; step k activates (loop[(k+off)%6], loop[(k+off+1)%6]).
const KAGOME_UP_LOOP: [Coord; 6] = [(0, 0), (0, 2), (0, 4), (2, 2), (4, 0), (2, 0)];
const KAGOME_DOWN_LOOP: [Coord; 6] = [(4, 0), (6, 0), (8, 0), (8, -2), (8, -4), (6, -2)];
const KAGOME_DOWN_OFFSET: usize = 5;

/// Pure geometry of a lattice kind with its boundary conditions.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub kind: LatticeKind,
    pub lx: i64,
    pub ly: i64,
    pub boundary: Boundary,
}

impl Geometry {
    pub fn new(spec: &LatticeSpec) -> Self {
        Geometry {
            kind: spec.kind,
            lx: spec.lx as i64,
            ly: spec.ly as i64,
            boundary: spec.boundary,
        }
    }

    /// Integer coordinate of the reference corner of a (virtual) cell.
    pub fn origin(&self, cx: i64, cy: i64) -> Coord {
        match self.kind {
            LatticeKind::Lieb | LatticeKind::Square => (4 * cx + 2 * cy.rem_euclid(2), 2 * cy),
            LatticeKind::KagomeMod => (8 * cx, 8 * cy),
        }
    }

    fn period_x(&self) -> i64 {
        match self.kind {
            LatticeKind::Lieb | LatticeKind::Square => 4 * self.lx,
            LatticeKind::KagomeMod => 8 * self.lx,
        }
    }

    /// Maps an unwrapped coordinate into the fundamental domain.
    pub fn wrap(&self, p: Coord) -> Coord {
        let (mut x, mut y) = p;
        if self.boundary.periodic_y() {
            match self.kind {
                LatticeKind::Lieb | LatticeKind::Square => {
                    let py = 2 * self.ly;
                    let k = y.div_euclid(py);
                    y -= k * py;
                    // Moving up by ly rows shifts the stagger by ly mod 2.
                    x -= k * 2 * (self.ly % 2);
                }
                LatticeKind::KagomeMod => {
                    y = y.rem_euclid(8 * self.ly);
                }
            }
        }
        if self.boundary.periodic_x() {
            x = x.rem_euclid(self.period_x());
        }
        (x, y)
    }

    /// Real-space position of an integer coordinate.
    pub fn to_real(&self, p: Coord) -> (f64, f64) {
        match self.kind {
            LatticeKind::Lieb | LatticeKind::Square => (p.0 as f64 / 2.0, p.1 as f64 / 2.0),
            LatticeKind::KagomeMod => (
                p.0 as f64 / 4.0 + p.1 as f64 / 8.0,
                p.1 as f64 * 3f64.sqrt() / 8.0,
            ),
        }
    }

    /// Bond displacements from a site, in integer coordinates.
    fn bond_template(&self) -> Vec<(Coord, Coord)> {
        match self.kind {
            LatticeKind::Lieb | LatticeKind::Square => {
                let mut out = Vec::new();
                for &o in self.kind.offsets() {
                    out.push((o, (o.0 + 1, o.1)));
                    out.push((o, (o.0, o.1 + 1)));
                }
                out
            }
            LatticeKind::KagomeMod => {
                let mut out = Vec::new();
                for lp in [KAGOME_UP_LOOP, KAGOME_DOWN_LOOP] {
                    for k in 0..6 {
                        out.push((lp[k], lp[(k + 1) % 6]));
                    }
                }
                out
            }
        }
    }

    /// For each step k (0-based), the activated bonds relative to a cell
    /// origin.
    pub fn loop_template(&self) -> Vec<Vec<(Coord, Coord)>> {
        match self.kind {
            LatticeKind::Lieb | LatticeKind::Square => (0..8)
                .map(|k| vec![(PLAQUETTE_LOOP[k], PLAQUETTE_LOOP[(k + 1) % 8])])
                .collect(),
            LatticeKind::KagomeMod => (0..6)
                .map(|k| {
                    let d = KAGOME_DOWN_OFFSET;
                    vec![
                        (KAGOME_UP_LOOP[k], KAGOME_UP_LOOP[(k + 1) % 6]),
                        (KAGOME_DOWN_LOOP[(k + d) % 6], KAGOME_DOWN_LOOP[(k + d + 1) % 6]),
                    ]
                })
                .collect(),
        }
    }

    /// Locates an unwrapped coordinate on the infinite lattice as
    /// (virtual cell, internal index).
    pub fn locate(&self, p: Coord) -> Option<((i64, i64), usize)> {
        let (cy0, cx0) = match self.kind {
            LatticeKind::Lieb | LatticeKind::Square => (p.1.div_euclid(2), p.0.div_euclid(4)),
            LatticeKind::KagomeMod => (p.1.div_euclid(8), p.0.div_euclid(8)),
        };
        for cy in cy0 - 1..=cy0 + 1 {
            for cx in cx0 - 1..=cx0 + 1 {
                let o = self.origin(cx, cy);
                if let Some(i) = self
                    .kind
                    .offsets()
                    .iter()
                    .position(|&d| (o.0 + d.0, o.1 + d.1) == p)
                {
                    return Some(((cx, cy), i));
                }
            }
        }
        None
    }
}

/// A finite lattice: sites, adjacency and coordinate lookup.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub spec: LatticeSpec,
    pub sites: Vec<Site>,
    /// Per site: (neighbour, unwrapped integer displacement to it).
    neighbors: Vec<Vec<(SiteId, Coord)>>,
    index: HashMap<Coord, SiteId>,
}

/// Builds the finite lattice described by `spec`.
pub fn build_lattice(spec: &LatticeSpec) -> Result<Lattice> {
    if spec.lx == 0 || spec.ly == 0 {
        return Err(Error::InvalidDimensions { lx: spec.lx, ly: spec.ly });
    }
    let geo = Geometry::new(spec);
    let mut sites = Vec::new();
    let mut index = HashMap::new();
    for cy in 0..spec.ly {
        for cx in 0..spec.lx {
            let o = geo.origin(cx as i64, cy as i64);
            for (internal, d) in spec.kind.offsets().iter().enumerate() {
                let coord = geo.wrap((o.0 + d.0, o.1 + d.1));
                let id = sites.len();
                let prev = index.insert(coord, id);
                debug_assert!(prev.is_none(), "cell template overlaps itself");
                sites.push(Site {
                    id,
                    cell: (cx, cy),
                    internal,
                    coord,
                    pos: geo.to_real(coord),
                });
            }
        }
    }
    // Site coordinates must be consistent with wrapping: a coordinate that
    // wraps onto itself is only ever produced once.
    let mut edges: BTreeMap<(SiteId, SiteId), Coord> = BTreeMap::new();
    let template = geo.bond_template();
    for cy in -1..=spec.ly as i64 {
        for cx in -1..=spec.lx as i64 {
            let o = geo.origin(cx, cy);
            for &(a, b) in &template {
                let pa = (o.0 + a.0, o.1 + a.1);
                let pb = (o.0 + b.0, o.1 + b.1);
                let (Some(&ia), Some(&ib)) = (index.get(&geo.wrap(pa)), index.get(&geo.wrap(pb)))
                else {
                    continue;
                };
                if ia == ib {
                    continue;
                }
                let d = (pb.0 - pa.0, pb.1 - pa.1);
                if ia < ib {
                    edges.entry((ia, ib)).or_insert(d);
                } else {
                    edges.entry((ib, ia)).or_insert((-d.0, -d.1));
                }
            }
        }
    }
    let mut neighbors = vec![Vec::new(); sites.len()];
    for (&(a, b), &d) in &edges {
        neighbors[a].push((b, d));
        neighbors[b].push((a, (-d.0, -d.1)));
    }
    for n in &mut neighbors {
        n.sort_unstable();
    }
    Ok(Lattice { spec: *spec, sites, neighbors, index })
}

impl Lattice {
    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub(crate) fn geometry(&self) -> Geometry {
        Geometry::new(&self.spec)
    }

    pub fn neighbors(&self, s: SiteId) -> impl Iterator<Item = SiteId> + '_ {
        self.neighbors[s].iter().map(|&(n, _)| n)
    }

    /// Neighbours with the unwrapped integer displacement to each of them.
    pub fn neighbor_links(&self, s: SiteId) -> &[(SiteId, Coord)] {
        &self.neighbors[s]
    }

    pub fn degree(&self, s: SiteId) -> usize {
        self.neighbors[s].len()
    }

    pub fn are_adjacent(&self, a: SiteId, b: SiteId) -> bool {
        self.neighbors[a].iter().any(|&(n, _)| n == b)
    }

    /// Site at a (possibly unwrapped) integer coordinate.
    pub fn site_at(&self, p: Coord) -> Option<SiteId> {
        self.index.get(&self.geometry().wrap(p)).copied()
    }

    /// Number of undirected bonds.
    pub fn n_bonds(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Nearest-neighbour hopping matrix with unit amplitude.
    pub fn hamiltonian(&self) -> DMatrix<f64> {
        let n = self.n_sites();
        let mut h = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in self.neighbors(a) {
                h[(a, b)] = 1.0;
            }
        }
        h
    }

    /// Real-space displacement along a bond from `a` to its neighbour `b`.
    pub fn bond_vector(&self, a: SiteId, b: SiteId) -> Option<(f64, f64)> {
        let &(_, d) = self.neighbors[a].iter().find(|&&(n, _)| n == b)?;
        Some(self.geometry().to_real(d))
    }

    /// Sites whose cell row is below `rows` (cell rows counted from 0).
    pub fn sites_in_rows_below(&self, rows: usize) -> Vec<SiteId> {
        self.sites.iter().filter(|s| s.cell.1 < rows).map(|s| s.id).collect()
    }

    /// Occupations of the lower half of the lattice: 1 on every site at or
    /// below the horizontal line half-way up the cell rows, 0 elsewhere.
    /// On the Lieb and square lattices the line `y = ly / 2` carries sites,
    /// and they count as filled.
    pub fn lower_half_fill(&self) -> Vec<f64> {
        let half = self.spec.ly / 2;
        self.sites
            .iter()
            .map(|s| {
                let below = match self.spec.kind {
                    LatticeKind::Lieb | LatticeKind::Square => s.pos.1 <= half as f64,
                    LatticeKind::KagomeMod => s.cell.1 < half,
                };
                if below { 1.0 } else { 0.0 }
            })
            .collect()
    }

    /// Graph distances from `sources`, truncated at `max_depth`
    /// (unreached sites get `usize::MAX`).
    pub fn distances_from(&self, sources: &[SiteId], max_depth: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n_sites()];
        let mut queue = VecDeque::new();
        for &s in sources {
            dist[s] = 0;
            queue.push_back(s);
        }
        while let Some(u) = queue.pop_front() {
            if dist[u] >= max_depth {
                continue;
            }
            for v in self.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Human-readable dump of sites, bonds and (optionally) the schedule.
    pub fn dump(&self, schedule: Option<&MeasurementSchedule>) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let s = &self.spec;
        let _ = writeln!(
            out,
            "lattice {} {}x{} {}: {} sites, {} bonds",
            s.kind,
            s.lx,
            s.ly,
            s.boundary,
            self.n_sites(),
            self.n_bonds()
        );
        for site in &self.sites {
            let nb: Vec<String> = self.neighbors(site.id).map(|n| n.to_string()).collect();
            let _ = writeln!(
                out,
                "site {} cell ({},{}) type {} pos ({}, {}) neighbours [{}]",
                site.id,
                site.cell.0,
                site.cell.1,
                site.internal + 1,
                site.pos.0,
                site.pos.1,
                nb.join(" ")
            );
        }
        if let Some(sched) = schedule {
            for (k, step) in sched.steps.iter().enumerate() {
                let pairs: Vec<String> =
                    step.pairs.iter().map(|p| format!("{}-{}", p.first, p.second)).collect();
                let lone: Vec<String> = step.isolated.iter().map(|s| s.to_string()).collect();
                let _ = writeln!(
                    out,
                    "step {}: pairs [{}] isolated [{}]",
                    k + 1,
                    pairs.join(" "),
                    lone.join(" ")
                );
            }
        }
        out
    }
}

/// An activated bond. `first` is the left site of a horizontal bond (or the
/// lower site otherwise), so a hop `first -> second` on a horizontal bond is
/// a rightward hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pair {
    pub first: SiteId,
    pub second: SiteId,
    pub horizontal: bool,
}

impl Pair {
    pub fn contains(&self, s: SiteId) -> bool {
        self.first == s || self.second == s
    }

    /// The other member of the pair.
    pub fn partner(&self, s: SiteId) -> Option<SiteId> {
        if s == self.first {
            Some(self.second)
        } else if s == self.second {
            Some(self.first)
        } else {
            None
        }
    }
}

/// The unmeasured sites of one measurement step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FreeSet {
    /// All unmeasured sites, sorted.
    pub members: Vec<SiteId>,
    pub pairs: Vec<Pair>,
    /// Unmeasured sites without an unmeasured partner (boundary remnants).
    pub isolated: Vec<SiteId>,
}

impl FreeSet {
    fn from_parts(mut pairs: Vec<Pair>, isolated: BTreeSet<SiteId>) -> Self {
        pairs.sort_unstable();
        pairs.dedup();
        let in_pair: BTreeSet<SiteId> =
            pairs.iter().flat_map(|p| [p.first, p.second]).collect();
        let isolated: Vec<SiteId> =
            isolated.into_iter().filter(|s| !in_pair.contains(s)).collect();
        let mut members: Vec<SiteId> = pairs
            .iter()
            .flat_map(|p| [p.first, p.second])
            .chain(isolated.iter().copied())
            .collect();
        members.sort_unstable();
        members.dedup();
        FreeSet { members, pairs, isolated }
    }

    pub fn contains(&self, s: SiteId) -> bool {
        self.members.binary_search(&s).is_ok()
    }

    /// Measured sites of this step (sorted), given the lattice size.
    pub fn complement(&self, n_sites: usize) -> Vec<SiteId> {
        (0..n_sites).filter(|&s| !self.contains(s)).collect()
    }

    /// Pair containing `s`, if any.
    pub fn pair_of(&self, s: SiteId) -> Option<&Pair> {
        self.pairs.iter().find(|p| p.contains(s))
    }
}

/// The ordered list of free sets of one measurement cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSchedule {
    pub steps: Vec<FreeSet>,
}

impl MeasurementSchedule {
    pub fn period(&self) -> usize {
        self.steps.len()
    }

    /// Free set of step `index` (1-based).
    pub fn step(&self, index: usize) -> Result<&FreeSet> {
        if index == 0 || index > self.steps.len() {
            return Err(Error::StepOutOfRange { index, period: self.steps.len() });
        }
        Ok(&self.steps[index - 1])
    }

    /// The same protocol run backwards.
    pub fn reversed(&self) -> Self {
        MeasurementSchedule { steps: self.steps.iter().rev().cloned().collect() }
    }
}

fn orient(lattice: &Lattice, a: SiteId, b: SiteId, d: Coord) -> Pair {
    let (dx, dy) = lattice.geometry().to_real(d);
    let horizontal = dy.abs() < 1e-9;
    let forward = if horizontal { dx > 0.0 } else { dy > 0.0 };
    let (first, second) = if forward { (a, b) } else { (b, a) };
    Pair { first, second, horizontal }
}

/// Builds the measurement schedule of the lattice's native protocol.
pub fn build_schedule(lattice: &Lattice) -> Result<MeasurementSchedule> {
    let geo = lattice.geometry();
    let spec = &lattice.spec;
    let template = geo.loop_template();
    let mut steps = Vec::with_capacity(template.len());
    for bonds in &template {
        let mut pairs = Vec::new();
        let mut isolated = BTreeSet::new();
        for cy in -2..spec.ly as i64 + 2 {
            for cx in -2..spec.lx as i64 + 2 {
                let o = geo.origin(cx, cy);
                for &(a, b) in bonds {
                    let pa = (o.0 + a.0, o.1 + a.1);
                    let pb = (o.0 + b.0, o.1 + b.1);
                    match (lattice.site_at(pa), lattice.site_at(pb)) {
                        (Some(ia), Some(ib)) if ia != ib => {
                            pairs.push(orient(lattice, ia, ib, (pb.0 - pa.0, pb.1 - pa.1)));
                        }
                        (Some(ia), None) => {
                            isolated.insert(ia);
                        }
                        (None, Some(ib)) => {
                            isolated.insert(ib);
                        }
                        _ => {}
                    }
                }
            }
        }
        steps.push(FreeSet::from_parts(pairs, isolated));
    }
    Ok(MeasurementSchedule { steps })
}

/// The naive four-step protocol on the square lattice: on every unit square
/// with even (x + y) lower-left corner, step k activates the k-th edge.
/// Neighbouring pairs in a step end up adjacent, so it fails validation.
pub fn naive_square_schedule(lattice: &Lattice) -> Result<MeasurementSchedule> {
    if lattice.spec.kind != LatticeKind::Square {
        return Err(Error::UnsupportedKind(lattice.spec.kind.to_string()));
    }
    let loop4: [Coord; 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];
    let mut corners = BTreeSet::new();
    for s in &lattice.sites {
        let (x, y) = s.coord;
        if (x + y).rem_euclid(2) == 0 {
            corners.insert((x, y));
        }
    }
    let mut steps = Vec::new();
    for k in 0..4 {
        let mut pairs = Vec::new();
        let mut isolated = BTreeSet::new();
        for &(x, y) in &corners {
            let pa = (x + loop4[k].0, y + loop4[k].1);
            let pb = (x + loop4[(k + 1) % 4].0, y + loop4[(k + 1) % 4].1);
            match (lattice.site_at(pa), lattice.site_at(pb)) {
                (Some(ia), Some(ib)) if ia != ib => {
                    pairs.push(orient(lattice, ia, ib, (pb.0 - pa.0, pb.1 - pa.1)));
                }
                (Some(ia), None) => {
                    isolated.insert(ia);
                }
                (None, Some(ib)) => {
                    isolated.insert(ib);
                }
                _ => {}
            }
        }
        steps.push(FreeSet::from_parts(pairs, isolated));
    }
    Ok(MeasurementSchedule { steps })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// A site belongs to two pairs of the same step.
    Overlap,
    /// Two pairs of the same step are joined by a single bond.
    TooClose,
    /// A pair is not a lattice bond.
    NotABond,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// 1-based step index.
    pub step: usize,
    pub kind: ViolationKind,
    pub pairs: (Pair, Pair),
    /// Graph distance between the pairs (0 for overlaps).
    pub distance: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Smallest graph distance between two pairs of the same step, if any two
    /// pairs are within three bonds of each other.
    pub min_pair_distance: Option<usize>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Minimum graph distance between distinct pairs of a step: no bond may join
/// two pairs, so each pair evolves in isolation.
pub const MIN_PAIR_DISTANCE: usize = 2;

/// Checks that every pair is a bond and that distinct pairs of a step are
/// separated by at least [`MIN_PAIR_DISTANCE`] bonds. The reported minimum
/// distance looks up to three bonds away.
pub fn validate_schedule(lattice: &Lattice, schedule: &MeasurementSchedule) -> ValidationReport {
    let mut violations = Vec::new();
    let mut min_dist: Option<usize> = None;
    let n = lattice.n_sites();
    for (k, step) in schedule.steps.iter().enumerate() {
        let mut owner: Vec<Option<usize>> = vec![None; n];
        for (pi, p) in step.pairs.iter().enumerate() {
            if !lattice.are_adjacent(p.first, p.second) {
                violations.push(Violation {
                    step: k + 1,
                    kind: ViolationKind::NotABond,
                    pairs: (*p, *p),
                    distance: 0,
                });
            }
            for s in [p.first, p.second] {
                if let Some(qi) = owner[s] {
                    min_dist = Some(0);
                    violations.push(Violation {
                        step: k + 1,
                        kind: ViolationKind::Overlap,
                        pairs: (step.pairs[qi], *p),
                        distance: 0,
                    });
                } else {
                    owner[s] = Some(pi);
                }
            }
        }
        for (pi, p) in step.pairs.iter().enumerate() {
            let dist = lattice.distances_from(&[p.first, p.second], 3);
            let mut closest: BTreeMap<usize, usize> = BTreeMap::new();
            for (s, &d) in dist.iter().enumerate() {
                if d == usize::MAX || d == 0 {
                    continue;
                }
                if let Some(qi) = owner[s] {
                    if qi > pi {
                        let e = closest.entry(qi).or_insert(d);
                        *e = (*e).min(d);
                    }
                }
            }
            for (qi, d) in closest {
                min_dist = Some(min_dist.map_or(d, |m| m.min(d)));
                if d < MIN_PAIR_DISTANCE {
                    violations.push(Violation {
                        step: k + 1,
                        kind: ViolationKind::TooClose,
                        pairs: (*p, step.pairs[qi]),
                        distance: d,
                    });
                }
            }
        }
    }
    ValidationReport { violations, min_pair_distance: min_dist }
}

/// A bond crossing a vertical cut, with the steps that activate it.
#[derive(Debug, Clone, PartialEq)]
pub struct CutLink {
    pub left: SiteId,
    pub right: SiteId,
    /// 1-based steps in which this bond is an activated pair.
    pub steps: Vec<usize>,
}

/// A vertical cut through the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct CutSpec {
    pub x_cut: f64,
    /// `right[s]` is true for sites to the right of the cut.
    pub right: Vec<bool>,
    pub links: Vec<CutLink>,
}

impl CutSpec {
    pub fn right_sites(&self) -> impl Iterator<Item = SiteId> + '_ {
        self.right.iter().enumerate().filter(|(_, &r)| r).map(|(s, _)| s)
    }
}

/// The bonds crossing the vertical line `x = x_cut` (real units), annotated
/// with the steps that activate them.
pub fn flow_cut(lattice: &Lattice, schedule: &MeasurementSchedule, x_cut: f64) -> Result<CutSpec> {
    let geo = lattice.geometry();
    for s in &lattice.sites {
        if (s.pos.0 - x_cut).abs() < 1e-9 {
            return Err(Error::CutThroughSite { x_cut, site: s.id });
        }
    }
    let right: Vec<bool> = lattice.sites.iter().map(|s| s.pos.0 > x_cut).collect();
    let mut activation: HashMap<(SiteId, SiteId), Vec<usize>> = HashMap::new();
    for (k, step) in schedule.steps.iter().enumerate() {
        for p in &step.pairs {
            let key = (p.first.min(p.second), p.first.max(p.second));
            activation.entry(key).or_default().push(k + 1);
        }
    }
    let mut links = Vec::new();
    for a in 0..lattice.n_sites() {
        let xa = lattice.sites[a].pos.0;
        for &(b, d) in lattice.neighbor_links(a) {
            let dx = geo.to_real(d).0;
            if dx > 0.0 && xa < x_cut && x_cut < xa + dx {
                let key = (a.min(b), a.max(b));
                links.push(CutLink {
                    left: a,
                    right: b,
                    steps: activation.get(&key).cloned().unwrap_or_default(),
                });
            }
        }
    }
    links.sort_by_key(|l| (l.left, l.right));
    Ok(CutSpec { x_cut, right, links })
}

/// x coordinate of the vertical line between dynamical cell columns
/// `column - 1` and `column` of the even cell rows (real units).
pub fn cell_boundary_x(kind: LatticeKind, column: usize) -> f64 {
    match kind {
        LatticeKind::Lieb | LatticeKind::Square => 2.0 * column as f64 - 0.25,
        LatticeKind::KagomeMod => 2.0 * column as f64 - 0.25,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lieb(lx: usize, ly: usize, b: Boundary) -> Lattice {
        build_lattice(&LatticeSpec::new(LatticeKind::Lieb, lx, ly, b)).unwrap()
    }

    #[test]
    fn lieb_torus_degrees() {
        let l = lieb(3, 4, Boundary::Torus);
        assert_eq!(l.n_sites(), 72);
        for s in &l.sites {
            let expect = if matches!(s.internal, 0 | 3) { 4 } else { 2 };
            assert_eq!(l.degree(s.id), expect, "site {s:?}");
        }
        assert_eq!(l.n_bonds(), 8 * 12);
    }

    #[test]
    fn lieb_one_cell_torus_has_edge_sites_of_degree_two() {
        let l = lieb(1, 1, Boundary::Torus);
        let degs: Vec<usize> = (0..6).map(|s| l.degree(s)).collect();
        assert_eq!(degs, vec![4, 2, 2, 4, 2, 2]);
    }

    #[test]
    fn schedules_validate() {
        for kind in [LatticeKind::Lieb, LatticeKind::Square, LatticeKind::KagomeMod] {
            for b in [Boundary::Open, Boundary::CylinderX, Boundary::Torus] {
                let l = build_lattice(&LatticeSpec::new(kind, 4, 4, b)).unwrap();
                let s = build_schedule(&l).unwrap();
                let r = validate_schedule(&l, &s);
                assert!(r.is_valid(), "{kind} {b}: {:?}", r.violations.first());
            }
        }
    }

    #[test]
    fn lieb_min_pair_distance_is_three() {
        let l = lieb(4, 4, Boundary::Torus);
        let r = validate_schedule(&l, &build_schedule(&l).unwrap());
        assert_eq!(r.min_pair_distance, Some(3));
    }

    #[test]
    fn naive_square_fails() {
        let l = build_lattice(&LatticeSpec::new(LatticeKind::Square, 3, 3, Boundary::Torus))
            .unwrap();
        let r = validate_schedule(&l, &naive_square_schedule(&l).unwrap());
        assert!(!r.is_valid());
        assert_eq!(r.min_pair_distance, Some(1));
    }

    #[test]
    fn torus_steps_cover_lattice_in_pairs() {
        let l = lieb(3, 4, Boundary::Torus);
        let s = build_schedule(&l).unwrap();
        for step in &s.steps {
            assert!(step.isolated.is_empty());
            assert_eq!(step.pairs.len(), 12);
        }
    }

    #[test]
    fn horizontal_steps_are_1_2_5_6() {
        let l = lieb(3, 4, Boundary::Torus);
        let s = build_schedule(&l).unwrap();
        let h: Vec<bool> = s.steps.iter().map(|st| st.pairs[0].horizontal).collect();
        assert_eq!(h, vec![true, true, false, false, true, true, false, false]);
    }

    #[test]
    fn cut_between_cells_crosses_steps_2_and_5() {
        let l = lieb(2, 2, Boundary::Open);
        let s = build_schedule(&l).unwrap();
        let cut = flow_cut(&l, &s, cell_boundary_x(LatticeKind::Lieb, 1)).unwrap();
        assert_eq!(cut.links.len(), 2);
        let mut steps: Vec<usize> = cut.links.iter().flat_map(|c| c.steps.clone()).collect();
        steps.sort();
        assert_eq!(steps, vec![2, 5]);
    }

    #[test]
    fn cut_through_site_is_rejected() {
        let l = lieb(2, 2, Boundary::Open);
        let s = build_schedule(&l).unwrap();
        assert!(matches!(flow_cut(&l, &s, 1.0), Err(Error::CutThroughSite { .. })));
    }

    #[test]
    fn zero_dimensions_rejected() {
        assert!(build_lattice(&LatticeSpec::new(LatticeKind::Lieb, 0, 3, Boundary::Open)).is_err());
    }
}
