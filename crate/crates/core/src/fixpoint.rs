//! Lipschitz maps on `[0,1]^n` under the max norm: the path-following map
//! built from a simple hypercube path, fixed-point checks, numeric
//! certification of an off-end displacement floor, and the
//! distribution-query channel over points.
//!
//! # The path-following map
//!
//! The cube `[0,1]^n` is split into `6^n` cells of edge `1/6`; hypercube
//! vertex `v` corresponds to the inner cell `v + 1` (entries in `{2,3}`), so
//! the hypercube occupies `[2/6, 4/6]^n`. Each `1/6`-grid vertex carries a
//! displacement of max-norm `1/6`:
//!
//! * a grid vertex touching the path's final cell converges on that cell's
//!   center;
//! * a grid vertex touching other visited cells takes the flow of the most
//!   downstream one — successor links among the touching cells reconstruct
//!   their relative order locally — one `1/6` step toward its successor
//!   cell;
//! * every other grid vertex points toward the start cell's center,
//!   max-norm normalized, so the default flow is inward everywhere and
//!   clipping at the cube boundary never creates a fixed point.
//!
//! The map adds the multilinear interpolation of the corner displacements to
//! the identity and clips to the cube. A grid vertex's displacement depends
//! only on the local path information of the cells touching it, so
//! evaluation inside a cell consults the oracle only for that neighborhood.
//!
//! Nothing in this scheme guarantees a displacement floor off the end cell
//! by itself: [`certify_displacement`] is the mandatory gate, and its
//! certified `(lambda_star, eps_star)` are the constants used downstream.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::paths::{HVertex, PathInfoSource, SimplePath};
use crate::query::{
    canonical_decimal, Payload, PrecisionPolicy, QueryBudget, QueryKind, QueryTranscript,
};

/// Cells per axis of the fixed `1/6` decomposition.
pub const CELLS_PER_AXIS: u8 = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FixpointError {
    #[error("coordinate {value} at axis {axis} outside [0,1]")]
    OutOfDomain { axis: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error(
        "resolution too coarse: scanned minimum {min_scanned} does not clear the \
         extension slack {slack}"
    )]
    ResolutionTooCoarse { min_scanned: f64, slack: f64 },
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Point of `[0,1]^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self, FixpointError> {
        for (axis, &value) in coords.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(FixpointError::OutOfDomain { axis, value });
            }
        }
        Ok(Self { coords })
    }

    pub fn dimension(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn get(&self, axis: usize) -> f64 {
        self.coords[axis]
    }
}

/// Max norm of a vector.
pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Max-norm distance between two vectors of equal length.
pub fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Index of one edge-`1/6` cell: entry `c_i` covers `[c_i/6, (c_i+1)/6]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellIndex {
    cell: Vec<u8>,
}

impl CellIndex {
    pub fn new(cell: Vec<u8>) -> Self {
        assert!(
            cell.iter().all(|&c| c < CELLS_PER_AXIS),
            "cell entries must be 0..=5"
        );
        Self { cell }
    }

    /// Cell of hypercube vertex `v`: index `v + 1` per coordinate.
    pub fn from_vertex(v: &HVertex) -> Self {
        Self {
            cell: v.coords().iter().map(|&c| c + 1).collect(),
        }
    }

    /// Hypercube vertex of an inner cell (entries in `{2,3}`), if any.
    pub fn vertex(&self) -> Option<HVertex> {
        if !self.is_inner() {
            return None;
        }
        let coords: Vec<i64> = self.cell.iter().map(|&c| c as i64 - 1).collect();
        Some(HVertex::from_coords(&coords).expect("inner cell maps to a hypercube vertex"))
    }

    pub fn is_inner(&self) -> bool {
        self.cell.iter().all(|&c| c == 2 || c == 3)
    }

    /// Cell containing `x`, with upper-boundary points assigned downward.
    pub fn containing(x: &Point) -> Self {
        Self {
            cell: x
                .coords()
                .iter()
                .map(|&v| ((v * 6.0).floor() as i64).clamp(0, 5) as u8)
                .collect(),
        }
    }

    /// Cell whose center is nearest to `x` (ties broken upward).
    pub fn nearest_center(x: &Point) -> Self {
        Self {
            cell: x
                .coords()
                .iter()
                .map(|&v| ((v * 6.0 - 0.5).round() as i64).clamp(0, 5) as u8)
                .collect(),
        }
    }

    pub fn indices(&self) -> &[u8] {
        &self.cell
    }

    pub fn dimension(&self) -> usize {
        self.cell.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.cell.iter().map(|&c| (c as f64 + 0.5) / 6.0).collect()
    }

    /// Membership in the closed cell cube.
    pub fn contains(&self, x: &Point) -> bool {
        self.cell.iter().zip(x.coords()).all(|(&c, &v)| {
            let lo = c as f64 / 6.0;
            let hi = (c as f64 + 1.0) / 6.0;
            (lo..=hi).contains(&v)
        })
    }
}

/// A map from `[0,1]^n` into itself under the max norm.
pub trait BoxMap {
    fn dimension(&self) -> usize;
    fn eval(&self, x: &Point) -> Point;
}

/// Adapter turning a closure into a [`BoxMap`]; outputs are clipped to the
/// cube.
pub struct FnMap<F: Fn(&[f64]) -> Vec<f64>> {
    n: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> FnMap<F> {
    pub fn new(n: usize, f: F) -> Self {
        Self { n, f }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> BoxMap for FnMap<F> {
    fn dimension(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &Point) -> Point {
        let y: Vec<f64> = (self.f)(x.coords())
            .iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        assert_eq!(y.len(), self.n, "map changed dimension");
        Point::new(y).expect("clipped output lies in the cube")
    }
}

/// True iff `||f(x) - x||_inf <= eps`.
pub fn is_eps_fixed_point(f: &dyn BoxMap, x: &Point, eps: f64) -> bool {
    inf_dist(f.eval(x).coords(), x.coords()) <= eps
}

/// Sampled lower bound on the max-norm Lipschitz constant: the largest
/// difference quotient over `samples` seeded point pairs (alternating global
/// pairs and short-range probes).
pub fn estimate_lipschitz(f: &dyn BoxMap, samples: usize, seed: u64) -> f64 {
    assert!(samples >= 2, "need at least two samples");
    let n = f.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for trial in 0..samples {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let y: Vec<f64> = if trial % 2 == 0 {
            (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect()
        } else {
            x.iter()
                .map(|v| (v + rng.gen_range(-1e-3..=1e-3)).clamp(0.0, 1.0))
                .collect()
        };
        let gap = inf_dist(&x, &y);
        if gap == 0.0 {
            continue;
        }
        let px = Point::new(x).unwrap();
        let py = Point::new(y).unwrap();
        let image_gap = inf_dist(f.eval(&px).coords(), f.eval(&py).coords());
        best = best.max(image_gap / gap);
    }
    best
}

/// Answers a distribution query over points: the exact expectation of `f`
/// over the finite-support mixture, perturbed per the precision policy.
pub fn afp_dist_query(
    f: &dyn BoxMap,
    mixture: &[(Point, f64)],
    policy: &PrecisionPolicy,
    seed: u64,
) -> Result<Vec<f64>, FixpointError> {
    if mixture.is_empty() {
        return Err(FixpointError::InvalidMixture("empty support".into()));
    }
    let total: f64 = mixture.iter().map(|(_, w)| w).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(FixpointError::InvalidMixture(format!(
            "weights sum to {total}"
        )));
    }
    let n = f.dimension();
    let mut expectation = vec![0.0; n];
    for (x, w) in mixture {
        if *w <= 0.0 {
            return Err(FixpointError::InvalidMixture(format!(
                "nonpositive weight {w}"
            )));
        }
        if x.dimension() != n {
            return Err(FixpointError::DimensionMismatch {
                expected: n,
                got: x.dimension(),
            });
        }
        let fx = f.eval(x);
        for (e, v) in expectation.iter_mut().zip(fx.coords()) {
            *e += w * v;
        }
    }
    Ok(policy.perturb(&expectation, seed))
}

/// Point-query channel over a map, with transcript accounting: each call
/// records one point query and its answer.
pub struct PointOracle<'a> {
    map: &'a dyn BoxMap,
    transcript: QueryTranscript,
    budget: QueryBudget,
}

impl<'a> PointOracle<'a> {
    pub fn new(map: &'a dyn BoxMap, budget: QueryBudget) -> Self {
        Self {
            map,
            transcript: QueryTranscript::new(),
            budget,
        }
    }

    pub fn query(&mut self, x: &Point) -> Result<Point, crate::query::QueryError> {
        let y = self.map.eval(x);
        self.transcript.record(
            &self.budget,
            QueryKind::Point,
            Payload::Reals(x.coords().to_vec()),
            Payload::Reals(y.coords().to_vec()),
        )?;
        Ok(y)
    }

    pub fn queries_used(&self) -> u64 {
        self.transcript.count()
    }

    pub fn transcript(&self) -> &QueryTranscript {
        &self.transcript
    }
}

/// Piecewise-multilinear path-following map; see the module docs for the
/// displacement rule. Evaluation materializes corner displacements lazily
/// and memoizes them, so the oracle behind [`PathInfoSource`] is consulted
/// at most once per hypercube vertex.
pub struct PathFunction {
    n: usize,
    source: Rc<dyn PathInfoSource>,
    end_cell: CellIndex,
    corner_memo: RefCell<HashMap<Vec<u8>, Rc<Vec<f64>>>>,
}

/// Builds the map for a simple path starting at `(1,...,1)`.
pub fn build_path_function(path: &SimplePath) -> Result<PathFunction, FixpointError> {
    if path.start() != HVertex::all_ones(path.dimension()) {
        return Err(FixpointError::InvalidPath(
            "path must start at (1,...,1)".into(),
        ));
    }
    let end = path.end();
    Ok(PathFunction::from_source(Rc::new(path.clone()), &end))
}

impl PathFunction {
    /// Wraps an arbitrary local-info source (e.g. a transcript-recording ESP
    /// channel). The end vertex fixes the cell excluded from certification.
    pub fn from_source(source: Rc<dyn PathInfoSource>, end: &HVertex) -> Self {
        let n = source.dimension();
        assert_eq!(end.dimension(), n);
        Self {
            n,
            source,
            end_cell: CellIndex::from_vertex(end),
            corner_memo: RefCell::new(HashMap::new()),
        }
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn end_cell(&self) -> &CellIndex {
        &self.end_cell
    }

    pub fn path_hash(&self) -> u64 {
        self.source.path_hash()
    }

    /// Grid-vertex displacement; `g` has entries in `0..=6`.
    fn corner_displacement(&self, g: &[u8]) -> Rc<Vec<f64>> {
        if let Some(found) = self.corner_memo.borrow().get(g) {
            return Rc::clone(found);
        }
        let value = Rc::new(self.compute_corner(g));
        self.corner_memo
            .borrow_mut()
            .insert(g.to_vec(), Rc::clone(&value));
        value
    }

    fn compute_corner(&self, g: &[u8]) -> Vec<f64> {
        let n = self.n;
        // Inner cells touching this grid vertex: per axis, {g-1, g} ∩ {2,3}.
        let mut axis_cands: Vec<Vec<u8>> = Vec::with_capacity(n);
        let mut feasible = true;
        for &gi in g {
            let mut cands = Vec::with_capacity(2);
            for delta in [-1i64, 0] {
                let c = gi as i64 + delta;
                if (2..=3).contains(&c) {
                    cands.push(c as u8);
                }
            }
            if cands.is_empty() {
                feasible = false;
                break;
            }
            axis_cands.push(cands);
        }

        // visited touchers and their local info, in lexicographic cell order
        let mut touchers: Vec<(Vec<u8>, crate::paths::LocalPathInfo)> = Vec::new();
        let mut end_cell_hit: Option<Vec<u8>> = None;
        if feasible {
            let radices: Vec<usize> = axis_cands.iter().map(Vec::len).collect();
            let mut idx = vec![0usize; n];
            loop {
                let cell: Vec<u8> = (0..n).map(|i| axis_cands[i][idx[i]]).collect();
                let coords: Vec<i64> = cell.iter().map(|&c| c as i64 - 1).collect();
                let vertex = HVertex::from_coords(&coords).expect("inner cell vertex");
                let info = self.source.local_info(&vertex);
                if info.visited {
                    if info.next.is_none() && end_cell_hit.is_none() {
                        end_cell_hit = Some(cell.clone());
                    }
                    touchers.push((cell, info));
                }
                if !advance_mixed_odometer(&mut idx, &radices) {
                    break;
                }
            }
        }

        if let Some(end_cell) = end_cell_hit {
            return converge_toward(g, &CellIndex::new(end_cell).center());
        }
        if touchers.is_empty() {
            let start_center = vec![2.5 / 6.0; n];
            return converge_toward(g, &start_center);
        }

        // The touchers' prev/next pointers reconstruct their relative order
        // locally: follow successor links within the touching set and take
        // the most downstream cell, so later path segments own contested
        // corners. Disconnected chains tie-break on lexicographic order.
        let cell_of = |v: &HVertex| -> Vec<u8> { v.coords().iter().map(|&c| c + 1).collect() };
        let chosen = {
            let mut tails: Vec<usize> = Vec::new();
            for (i, (_, info)) in touchers.iter().enumerate() {
                let next_cell = cell_of(&info.next.expect("non-end visited cell"));
                let next_inside = touchers.iter().any(|(c, _)| *c == next_cell);
                if !next_inside {
                    tails.push(i);
                }
            }
            // chains are disjoint, so a tail always exists
            let tail = tails.first().copied().unwrap_or(0);
            &touchers[tail]
        };
        let next_cell = CellIndex::from_vertex(&chosen.1.next.expect("non-end visited cell"));
        let mut d = vec![0.0; n];
        #[allow(clippy::needless_range_loop)]
        for i in 0..n {
            d[i] = (next_cell.indices()[i] as f64 - chosen.0[i] as f64) / 6.0;
        }
        d
    }

    /// Displacement field at `x` (before clipping), by multilinear
    /// interpolation of the containing cell's corner displacements.
    fn field_at(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut cell = vec![0u8; n];
        let mut local = vec![0.0f64; n];
        for i in 0..n {
            let c = ((x[i] * 6.0).floor() as i64).clamp(0, 5) as u8;
            cell[i] = c;
            local[i] = (x[i] * 6.0 - c as f64).clamp(0.0, 1.0);
        }
        let mut disp = vec![0.0f64; n];
        let mut corner = vec![0u8; n];
        for bits in 0..(1usize << n) {
            let mut weight = 1.0;
            for i in 0..n {
                let hi = (bits >> i) & 1 == 1;
                weight *= if hi { local[i] } else { 1.0 - local[i] };
                corner[i] = cell[i] + (hi as u8);
            }
            if weight == 0.0 {
                continue;
            }
            let d = self.corner_displacement(&corner);
            for j in 0..n {
                disp[j] += weight * d[j];
            }
        }
        disp
    }

    /// Map value with the additive field, clipped to the cube.
    pub fn eval(&self, x: &Point) -> Point {
        assert_eq!(x.dimension(), self.n, "dimension mismatch");
        let disp = self.field_at(x.coords());
        let y: Vec<f64> = x
            .coords()
            .iter()
            .zip(&disp)
            .map(|(v, d)| (v + d).clamp(0.0, 1.0))
            .collect();
        Point::new(y).expect("clipped output lies in the cube")
    }

    /// Upper bound on the max-norm Lipschitz constant of the map: one plus
    /// the largest per-cell row sum of interpolation slopes.
    pub fn lipschitz_bound(&self) -> f64 {
        let n = self.n;
        let mut max_row = 0.0f64;
        let mut cell = vec![0u8; n];
        loop {
            // corner displacements of this cell
            let mut corners: Vec<Rc<Vec<f64>>> = Vec::with_capacity(1 << n);
            let mut g = vec![0u8; n];
            for bits in 0..(1usize << n) {
                for i in 0..n {
                    g[i] = cell[i] + (((bits >> i) & 1) as u8);
                }
                corners.push(self.corner_displacement(&g));
            }
            #[allow(clippy::needless_range_loop)]
            for j in 0..n {
                let mut row = 0.0f64;
                for axis in 0..n {
                    let mut max_diff = 0.0f64;
                    for bits in 0..(1usize << n) {
                        if (bits >> axis) & 1 == 1 {
                            continue;
                        }
                        let upper = bits | (1 << axis);
                        max_diff = max_diff.max((corners[upper][j] - corners[bits][j]).abs());
                    }
                    row += 6.0 * max_diff;
                }
                max_row = max_row.max(row);
            }
            if !advance_odometer(&mut cell, CELLS_PER_AXIS) {
                break;
            }
        }
        1.0 + max_row
    }
}

impl BoxMap for PathFunction {
    fn dimension(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &Point) -> Point {
        PathFunction::eval(self, x)
    }
}

fn converge_toward(g: &[u8], target: &[f64]) -> Vec<f64> {
    let dir: Vec<f64> = g
        .iter()
        .zip(target)
        .map(|(&gi, t)| t - gi as f64 / 6.0)
        .collect();
    let norm = inf_norm(&dir);
    assert!(norm > 0.0, "grid vertex cannot coincide with a cell center");
    dir.iter().map(|d| d / (6.0 * norm)).collect()
}

fn advance_odometer(digits: &mut [u8], radix: u8) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < radix {
            return true;
        }
        *d = 0;
    }
    false
}

fn advance_mixed_odometer(digits: &mut [usize], radices: &[usize]) -> bool {
    for i in (0..digits.len()).rev() {
        digits[i] += 1;
        if digits[i] < radices[i] {
            return true;
        }
        digits[i] = 0;
    }
    false
}

/// Numeric certificate: for every `x` outside the end cell,
/// `||f(x) - x||_inf >= eps_star` whenever `eps_star > 0`, by the extension
/// bound `||f(y) - y|| >= ||f(x) - x|| - (lambda_star + 1) ||y - x||`.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub lambda_star: f64,
    pub eps_star: f64,
    pub h: f64,
    pub n: usize,
    pub path_hash: u64,
}

impl Certificate {
    /// Key-value text block export.
    pub fn to_text(&self) -> String {
        format!(
            "lambda_star={}\neps_star={}\nh={}\nn={}\npath_hash={:016x}\n",
            canonical_decimal(self.lambda_star),
            canonical_decimal(self.eps_star),
            canonical_decimal(self.h),
            self.n,
            self.path_hash,
        )
    }

    pub fn from_text(text: &str) -> Result<Self, FixpointError> {
        let mut fields: HashMap<&str, &str> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(FixpointError::Parse {
                line: i + 1,
                msg: "expected key=value".into(),
            })?;
            fields.insert(key.trim(), value.trim());
        }
        let get = |key: &str| {
            fields.get(key).copied().ok_or(FixpointError::Parse {
                line: 0,
                msg: format!("missing field {key}"),
            })
        };
        let parse_f64 = |key: &str| -> Result<f64, FixpointError> {
            get(key)?.parse().map_err(|e| FixpointError::Parse {
                line: 0,
                msg: format!("bad {key}: {e}"),
            })
        };
        Ok(Self {
            lambda_star: parse_f64("lambda_star")?,
            eps_star: parse_f64("eps_star")?,
            h: parse_f64("h")?,
            n: get("n")?.parse().map_err(|e| FixpointError::Parse {
                line: 0,
                msg: format!("bad n: {e}"),
            })?,
            path_hash: u64::from_str_radix(get("path_hash")?, 16).map_err(|e| {
                FixpointError::Parse {
                    line: 0,
                    msg: format!("bad path_hash: {e}"),
                }
            })?,
        })
    }
}

/// Suggested scan subdivisions per cell so the extension slack stays below
/// half the target displacement floor.
pub fn default_per_cell(lambda_star: f64, eps_target: f64) -> usize {
    assert!(eps_target > 0.0);
    (2.0 * (lambda_star + 1.0) / eps_target).ceil() as usize
}

/// Certifies the displacement floor of a path-following map by scanning the
/// lattice of pitch `h = 1/(6 per_cell)` outside the end cell.
///
/// Returns `eps_star = min_scanned - (lambda_star + 1) h / 2`; a value
/// `<= 0` signals failed certification (an exact off-end fixed point was
/// scanned), while a positive scanned minimum that does not clear the slack
/// is reported as [`FixpointError::ResolutionTooCoarse`].
pub fn certify_displacement(
    f: &PathFunction,
    per_cell: usize,
) -> Result<Certificate, FixpointError> {
    assert!(per_cell >= 1, "need at least one subdivision per cell");
    let lambda_star = f.lipschitz_bound();
    let n = f.dimension();
    let h = 1.0 / (6.0 * per_cell as f64);
    let end = f.end_cell().indices();

    // Scan cell by cell so the corner displacements are fetched once per
    // cell; shared faces are visited from both sides, which is harmless.
    let mut min_disp = f64::INFINITY;
    let mut cell = vec![0u8; n];
    let mut corner = vec![0u8; n];
    let mut t = vec![0usize; n];
    let mut local = vec![0.0f64; n];
    let mut disp = vec![0.0f64; n];
    loop {
        let is_end = cell.iter().zip(end.iter()).all(|(a, b)| a == b);
        let corners: Vec<Rc<Vec<f64>>> = (0..(1usize << n))
            .map(|bits| {
                for i in 0..n {
                    corner[i] = cell[i] + (((bits >> i) & 1) as u8);
                }
                f.corner_displacement(&corner)
            })
            .collect();
        t.iter_mut().for_each(|ti| *ti = 0);
        loop {
            let skip = is_end && t.iter().all(|&ti| ti > 0 && ti < per_cell);
            if !skip {
                #[allow(clippy::needless_range_loop)]
                for i in 0..n {
                    local[i] = t[i] as f64 / per_cell as f64;
                    disp[i] = 0.0;
                }
                for (bits, d) in corners.iter().enumerate() {
                    let mut weight = 1.0;
                    #[allow(clippy::needless_range_loop)]
                    for i in 0..n {
                        weight *= if (bits >> i) & 1 == 1 {
                            local[i]
                        } else {
                            1.0 - local[i]
                        };
                    }
                    if weight == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        disp[j] += weight * d[j];
                    }
                }
                let mut norm = 0.0f64;
                for i in 0..n {
                    let x = (cell[i] as f64 + local[i]) / 6.0;
                    let clipped = (x + disp[i]).clamp(0.0, 1.0);
                    norm = norm.max((clipped - x).abs());
                }
                if norm < min_disp {
                    min_disp = norm;
                }
            }
            if !advance_usize_odometer(&mut t, per_cell + 1) {
                break;
            }
        }
        if !advance_odometer(&mut cell, CELLS_PER_AXIS) {
            break;
        }
    }

    let slack = (lambda_star + 1.0) * h / 2.0;
    let eps_star = min_disp - slack;
    if min_disp > 0.0 && eps_star <= 0.0 {
        return Err(FixpointError::ResolutionTooCoarse {
            min_scanned: min_disp,
            slack,
        });
    }
    Ok(Certificate {
        lambda_star,
        eps_star,
        h,
        n,
        path_hash: f.path_hash(),
    })
}

/// Certification scan for an arbitrary map with an externally supplied
/// Lipschitz bound.
pub fn certify_map(
    map: &dyn BoxMap,
    end_cell: &CellIndex,
    lambda_star: f64,
    per_cell: usize,
    path_hash: u64,
) -> Result<Certificate, FixpointError> {
    assert!(per_cell >= 1, "need at least one subdivision per cell");
    let n = map.dimension();
    assert_eq!(end_cell.dimension(), n);
    let h = 1.0 / (6.0 * per_cell as f64);
    let lattice_max = 6 * per_cell; // index range 0..=lattice_max per axis
    let end = end_cell.indices();

    let mut min_disp = f64::INFINITY;
    let mut t = vec![0usize; n];
    let mut x = vec![0.0f64; n];
    loop {
        let strictly_inside_end = (0..n).all(|i| {
            let lo = end[i] as usize * per_cell;
            let hi = (end[i] as usize + 1) * per_cell;
            t[i] > lo && t[i] < hi
        });
        if !strictly_inside_end {
            for i in 0..n {
                x[i] = t[i] as f64 * h;
            }
            let point = Point::new(x.clone()).expect("lattice point lies in the cube");
            let disp = inf_dist(map.eval(&point).coords(), &x);
            if disp < min_disp {
                min_disp = disp;
            }
        }
        if !advance_usize_odometer(&mut t, lattice_max + 1) {
            break;
        }
    }

    let slack = (lambda_star + 1.0) * h / 2.0;
    let eps_star = min_disp - slack;
    if min_disp > 0.0 && eps_star <= 0.0 {
        return Err(FixpointError::ResolutionTooCoarse {
            min_scanned: min_disp,
            slack,
        });
    }
    Ok(Certificate {
        lambda_star,
        eps_star,
        h,
        n,
        path_hash,
    })
}

fn advance_usize_odometer(digits: &mut [usize], radix: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < radix {
            return true;
        }
        *d = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{cut_cycles, random_walk, RecordingEsp};
    use crate::query::QueryBudget;

    fn path_from_coords(list: &[&[i64]]) -> SimplePath {
        let vertices: Vec<HVertex> = list
            .iter()
            .map(|c| HVertex::from_coords(c).unwrap())
            .collect();
        SimplePath::from_vertices(vertices).unwrap()
    }

    fn pt(coords: &[f64]) -> Point {
        Point::new(coords.to_vec()).unwrap()
    }

    #[test]
    fn point_rejects_out_of_domain() {
        assert!(matches!(
            Point::new(vec![0.5, 1.2]),
            Err(FixpointError::OutOfDomain { axis: 1, .. })
        ));
    }

    #[test]
    fn cell_index_maps_vertices_and_points() {
        let v = HVertex::from_coords(&[1, 2]).unwrap();
        let cell = CellIndex::from_vertex(&v);
        assert_eq!(cell.indices(), &[2, 3]);
        assert_eq!(cell.vertex().unwrap(), v);
        assert!(cell.is_inner());
        assert_eq!(CellIndex::containing(&pt(&[0.0, 0.999])).indices(), &[0, 5]);
        assert_eq!(CellIndex::containing(&pt(&[1.0, 0.5])).indices(), &[5, 3]);
        assert_eq!(
            CellIndex::nearest_center(&pt(&[0.41, 0.6])).indices(),
            &[2, 3]
        );
    }

    #[test]
    fn one_dimensional_path_flows_toward_end() {
        // path (1) -> (2): cells 2 and 3; flow in cell 2 moves right, end
        // cell 3 converges at its center 7/12.
        let path = path_from_coords(&[&[1], &[2]]);
        let f = build_path_function(&path).unwrap();
        assert_eq!(f.end_cell().indices(), &[3]);
        let mid_start = f.eval(&pt(&[2.5 / 6.0]));
        assert!(mid_start.get(0) > 2.5 / 6.0, "start cell flows forward");
        let at_end_center = f.eval(&pt(&[3.5 / 6.0]));
        assert!(
            (at_end_center.get(0) - 3.5 / 6.0).abs() < 1e-12,
            "end center is fixed"
        );
        let cert = certify_displacement(&f, 10).unwrap();
        assert!(cert.eps_star > 0.0, "certificate: {cert:?}");
    }

    #[test]
    fn length_one_path_converges_on_start_cell() {
        let path = path_from_coords(&[&[1, 1]]);
        let f = build_path_function(&path).unwrap();
        assert_eq!(f.end_cell().indices(), &[2, 2]);
        let cert = certify_displacement(&f, 10).unwrap();
        assert!(cert.eps_star > 0.0, "certificate: {cert:?}");
        // center of the start cell is the unique fixed point
        let center = pt(&[2.5 / 6.0, 2.5 / 6.0]);
        assert!(is_eps_fixed_point(&f, &center, 1e-12));
    }

    #[test]
    fn eval_at_grid_vertex_adds_its_displacement() {
        let path = path_from_coords(&[&[1, 1], &[2, 1], &[2, 2]]);
        let f = build_path_function(&path).unwrap();
        // grid vertex (2,2)/6 touches only the start cell; flow is +x
        let x = pt(&[2.0 / 6.0, 2.0 / 6.0]);
        let y = f.eval(&x);
        assert!((y.get(0) - (2.0 / 6.0 + 1.0 / 6.0)).abs() < 1e-12);
        assert!((y.get(1) - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn eval_at_cell_center_averages_corners() {
        let path = path_from_coords(&[&[1, 1], &[2, 1]]);
        let f = build_path_function(&path).unwrap();
        let cell = CellIndex::new(vec![1, 1]);
        let center = pt(&cell.center());
        // average the four corner displacements directly
        let mut expected = [0.0; 2];
        for bits in 0..4usize {
            let g = [1 + (bits & 1) as u8, 1 + ((bits >> 1) & 1) as u8];
            let d = f.corner_displacement(&g);
            expected[0] += d[0] / 4.0;
            expected[1] += d[1] / 4.0;
        }
        let y = f.eval(&center);
        assert!((y.get(0) - (center.get(0) + expected[0])).abs() < 1e-12);
        assert!((y.get(1) - (center.get(1) + expected[1])).abs() < 1e-12);
    }

    /// Straightforward interpolation oracle, independent of `field_at`.
    fn brute_force_eval(f: &PathFunction, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let cell: Vec<u8> = x
            .iter()
            .map(|&v| ((v * 6.0).floor() as i64).clamp(0, 5) as u8)
            .collect();
        let mut out = vec![0.0; n];
        for j in 0..n {
            let mut acc = 0.0;
            for bits in 0..(1usize << n) {
                let mut weight = 1.0;
                let mut g = vec![0u8; n];
                for i in 0..n {
                    let s = (x[i] * 6.0 - cell[i] as f64).clamp(0.0, 1.0);
                    if (bits >> i) & 1 == 1 {
                        weight *= s;
                        g[i] = cell[i] + 1;
                    } else {
                        weight *= 1.0 - s;
                        g[i] = cell[i];
                    }
                }
                acc += weight * f.corner_displacement(&g)[j];
            }
            out[j] = (x[j] + acc).clamp(0.0, 1.0);
        }
        out
    }

    #[test]
    fn eval_matches_brute_force_interpolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=4usize {
            let walk = random_walk(n, 40, n as u64);
            let f = build_path_function(&cut_cycles(&walk)).unwrap();
            for _ in 0..200 {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
                let fast = f.eval(&pt(&x));
                let slow = brute_force_eval(&f, &x);
                assert!(inf_dist(fast.coords(), &slow) < 1e-12);
            }
        }
    }

    #[test]
    fn eval_is_continuous_across_cell_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let walk = random_walk(3, 60, 2);
        let f = build_path_function(&cut_cycles(&walk)).unwrap();
        for _ in 0..10_000 {
            let axis = rng.gen_range(0..3);
            let boundary = rng.gen_range(1..6) as f64 / 6.0;
            let mut lo = vec![0.0; 3];
            let mut hi = vec![0.0; 3];
            for i in 0..3 {
                let v = rng.gen_range(0.0..=1.0);
                lo[i] = v;
                hi[i] = v;
            }
            lo[axis] = (boundary - 1e-13).max(0.0);
            hi[axis] = (boundary + 1e-13).min(1.0);
            let a = f.eval(&pt(&lo));
            let b = f.eval(&pt(&hi));
            assert!(inf_dist(a.coords(), b.coords()) < 1e-9);
        }
    }

    #[test]
    fn eval_output_stays_in_cube() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let walk = random_walk(2, 30, 4);
        let f = build_path_function(&cut_cycles(&walk)).unwrap();
        for _ in 0..5_000 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let y = f.eval(&pt(&x));
            for &v in y.coords() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn locality_of_corner_queries() {
        // Evaluating one point consults the oracle only for vertices of
        // inner cells touching the containing cell's corners.
        let path = path_from_coords(&[&[1, 1], &[2, 1], &[2, 2]]);
        let esp = Rc::new(RecordingEsp::new(path.clone(), QueryBudget::unlimited()));
        let f = PathFunction::from_source(Rc::clone(&esp) as Rc<dyn PathInfoSource>, &path.end());
        let x = pt(&[0.45, 0.45]); // inside inner cell (2,2)
        f.eval(&x);
        let cell = CellIndex::containing(&x);
        let allowed: Vec<HVertex> = {
            // vertices of inner cells within max-distance one of the cell
            let mut out = Vec::new();
            for bits in 0..4u8 {
                let c = [
                    (cell.indices()[0] as i64 + (bits & 1) as i64 - 1),
                    (cell.indices()[1] as i64 + ((bits >> 1) & 1) as i64 - 1),
                ];
                out.push(HVertex::from_coords(&[c[0], c[1]]).unwrap());
            }
            out
        };
        for v in esp.queried_vertices() {
            assert!(allowed.contains(&v), "unexpected oracle query at {v}");
        }

        // a far-away outer point consults nothing
        let esp2 = Rc::new(RecordingEsp::new(path.clone(), QueryBudget::unlimited()));
        let f2 = PathFunction::from_source(Rc::clone(&esp2) as Rc<dyn PathInfoSource>, &path.end());
        f2.eval(&pt(&[0.01, 0.99]));
        assert_eq!(esp2.query_count(), 0);
    }

    #[test]
    fn point_oracle_counts_every_query() {
        let path = path_from_coords(&[&[1], &[2]]);
        let f = build_path_function(&path).unwrap();
        let mut oracle = PointOracle::new(&f, crate::query::QueryBudget::limited(2));
        let x = pt(&[0.4]);
        let direct = f.eval(&x);
        assert_eq!(oracle.query(&x).unwrap(), direct);
        oracle.query(&pt(&[0.9])).unwrap();
        assert_eq!(oracle.queries_used(), 2);
        assert!(oracle.query(&x).is_err());
    }

    #[test]
    fn is_eps_fixed_point_trivia() {
        let identity = FnMap::new(2, |x: &[f64]| x.to_vec());
        assert!(is_eps_fixed_point(&identity, &pt(&[0.3, 0.9]), 0.0));
        let constant = FnMap::new(2, |_: &[f64]| vec![0.25, 0.5]);
        assert!(is_eps_fixed_point(&constant, &pt(&[0.25, 0.5]), 0.0));
        let shift = FnMap::new(1, |x: &[f64]| vec![x[0] + 1.0 / 6.0]);
        assert!(!is_eps_fixed_point(&shift, &pt(&[0.2]), 1.0 / 88.0));
    }

    #[test]
    fn estimate_lipschitz_reference_maps() {
        let constant = FnMap::new(2, |_: &[f64]| vec![0.5, 0.5]);
        assert_eq!(estimate_lipschitz(&constant, 1000, 1), 0.0);
        let identity = FnMap::new(2, |x: &[f64]| x.to_vec());
        let est = estimate_lipschitz(&identity, 1000, 2);
        assert!((est - 1.0).abs() < 1e-12);
        let doubling = FnMap::new(1, |x: &[f64]| vec![2.0 * x[0]]);
        assert!(estimate_lipschitz(&doubling, 10_000, 3) >= 1.9);
    }

    #[test]
    fn lipschitz_bound_dominates_sampled_estimate() {
        for seed in 0..5u64 {
            let walk = random_walk(2, 40, seed);
            let f = build_path_function(&cut_cycles(&walk)).unwrap();
            let bound = f.lipschitz_bound();
            let est = estimate_lipschitz(&f, 4000, seed);
            assert!(est <= bound + 1e-9, "estimate {est} exceeds bound {bound}");
        }
    }

    #[test]
    fn afp_dist_query_examples() {
        let path = path_from_coords(&[&[1, 1], &[2, 1]]);
        let f = build_path_function(&path).unwrap();
        let x = pt(&[0.4, 0.4]);
        let exact = PrecisionPolicy::exact();
        let point_mass = afp_dist_query(&f, &[(x.clone(), 1.0)], &exact, 0).unwrap();
        assert_eq!(point_mass, f.eval(&x).coords().to_vec());

        let y = pt(&[0.6, 0.3]);
        let two = afp_dist_query(&f, &[(x.clone(), 0.5), (y.clone(), 0.5)], &exact, 0).unwrap();
        let fx = f.eval(&x);
        let fy = f.eval(&y);
        #[allow(clippy::needless_range_loop)]
        for i in 0..2 {
            assert!((two[i] - (fx.get(i) + fy.get(i)) / 2.0).abs() < 1e-12);
        }

        assert!(matches!(
            afp_dist_query(&f, &[(x.clone(), 0.4)], &exact, 0),
            Err(FixpointError::InvalidMixture(_))
        ));
    }

    #[test]
    fn afp_dist_query_matches_monte_carlo() {
        let path = path_from_coords(&[&[1, 1], &[1, 2], &[2, 2]]);
        let f = build_path_function(&path).unwrap();
        let support = [
            (pt(&[0.3, 0.3]), 0.2),
            (pt(&[0.5, 0.45]), 0.5),
            (pt(&[0.62, 0.38]), 0.3),
        ];
        let exact = afp_dist_query(&f, &support, &PrecisionPolicy::exact(), 0).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 100_000usize;
        let mut mean = [0.0; 2];
        for _ in 0..draws {
            let u: f64 = rng.gen_range(0.0..1.0);
            let mut acc = 0.0;
            let mut chosen = &support[2].0;
            for (p, w) in &support {
                acc += w;
                if u < acc {
                    chosen = p;
                    break;
                }
            }
            let fx = f.eval(chosen);
            #[allow(clippy::needless_range_loop)]
            for i in 0..2 {
                mean[i] += fx.get(i) / draws as f64;
            }
        }
        // three standard errors of a bounded variable over 1e5 draws
        let tol = 3.0 * 0.5 / (draws as f64).sqrt();
        for i in 0..2 {
            assert!((exact[i] - mean[i]).abs() < tol);
        }
    }

    #[test]
    fn certify_map_identity_fails_without_error() {
        let identity = FnMap::new(1, |x: &[f64]| x.to_vec());
        let cert = certify_map(&identity, &CellIndex::new(vec![3]), 1.0, 10, 0).unwrap();
        assert!(cert.eps_star <= 0.0);
    }

    #[test]
    fn default_per_cell_bounds_the_extension_slack() {
        // pitch chosen so (lambda*+1) h / 2 stays well under the target
        let per_cell = default_per_cell(5.0, 0.1);
        assert_eq!(per_cell, 120);
        let h = 1.0 / (6.0 * per_cell as f64);
        assert!((5.0 + 1.0) * h / 2.0 <= 0.05);
    }

    #[test]
    fn certify_reports_coarse_resolution() {
        // fixed point at 0.95 (interior of the end cell), displacement tiny
        // but positive on every scanned lattice point
        let tiny = FnMap::new(1, |x: &[f64]| vec![x[0] + 1e-5 * (0.95 - x[0])]);
        let err = certify_map(&tiny, &CellIndex::new(vec![5]), 1.0, 2, 0).unwrap_err();
        assert!(matches!(err, FixpointError::ResolutionTooCoarse { .. }));
    }

    #[test]
    fn certified_floor_confines_small_displacements_to_end_cell() {
        let walk = random_walk(2, 50, 7);
        let path = cut_cycles(&walk);
        let f = build_path_function(&path).unwrap();
        let cert = certify_displacement(&f, 20).unwrap();
        assert!(cert.eps_star > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut checked = 0;
        while checked < 20_000 {
            let x = pt(&[rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0)]);
            if is_eps_fixed_point(&f, &x, cert.eps_star - 1e-12) {
                assert!(
                    f.end_cell().contains(&x),
                    "small displacement outside end cell"
                );
            }
            checked += 1;
        }
    }

    #[test]
    fn corner_path_certifies_beyond_reference_accuracy() {
        // the two-step corner path on the 2-cube; its certified constants
        // stand in for the reference pair (79, 1/88) downstream
        let path = path_from_coords(&[&[1, 1], &[2, 1], &[2, 2]]);
        let f = build_path_function(&path).unwrap();
        let cert = certify_displacement(&f, 20).unwrap(); // h = 1/120
        assert!(cert.lambda_star.is_finite());
        assert!(
            cert.eps_star > 1.0 / 88.0,
            "eps_star {} should clear the 1/88 reference scale",
            cert.eps_star
        );
        // hence every 1/88-scale fixed point lies in the end cell
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20_000 {
            let x = pt(&[rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0)]);
            if is_eps_fixed_point(&f, &x, 1.0 / 88.0) {
                assert!(f.end_cell().contains(&x));
            }
        }
    }

    #[test]
    fn cell_blocked_scan_agrees_with_generic_lattice_scan() {
        let walk = random_walk(2, 40, 31);
        let f = build_path_function(&cut_cycles(&walk)).unwrap();
        let fast = certify_displacement(&f, 8).unwrap();
        let generic = certify_map(&f, f.end_cell(), f.lipschitz_bound(), 8, f.path_hash()).unwrap();
        assert!((fast.eps_star - generic.eps_star).abs() < 1e-12);
        assert_eq!(fast.lambda_star, generic.lambda_star);
    }

    #[test]
    fn certificate_text_round_trips() {
        let cert = Certificate {
            lambda_star: 3.25,
            eps_star: 0.0625,
            h: 1.0 / 120.0,
            n: 3,
            path_hash: 0xdeadbeef12345678,
        };
        let back = Certificate::from_text(&cert.to_text()).unwrap();
        assert_eq!(back, cert);
    }
}
