//! Hypercube and grid graphs, random walks, cycle cutting, the
//! end-of-simple-path oracle, and the hit-the-path adversary game.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::query::{Payload, QueryBudget, QueryKind, QueryTranscript};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dimension {0} unsupported (must be 1..=63)")]
    DimensionOutOfRange(usize),
    #[error("coordinate {value} at axis {axis} not in {{1,2}}")]
    CoordinateOutOfRange { axis: usize, value: i64 },
    #[error("vertices {0} and {1} are not adjacent")]
    NotAdjacent(usize, usize),
    #[error("vertex at position {0} repeats an earlier vertex")]
    RepeatedVertex(usize),
    #[error("walk must contain at least one vertex")]
    Empty,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Vertex of the `n`-dimensional hypercube with coordinates in `{1,2}`,
/// bit-packed internally (bit `i` set means coordinate `i` equals 2).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct HVertex {
    n: u16,
    bits: u64,
}

impl HVertex {
    /// The all-ones vertex `(1,1,...,1)`.
    pub fn all_ones(n: usize) -> Self {
        assert!((1..=63).contains(&n), "dimension must be 1..=63");
        Self {
            n: n as u16,
            bits: 0,
        }
    }

    pub fn from_bits(n: usize, bits: u64) -> Self {
        assert!((1..=63).contains(&n), "dimension must be 1..=63");
        assert_eq!(bits >> n, 0, "bits outside dimension");
        Self { n: n as u16, bits }
    }

    pub fn from_coords(coords: &[i64]) -> Result<Self, PathError> {
        let n = coords.len();
        if !(1..=63).contains(&n) {
            return Err(PathError::DimensionOutOfRange(n));
        }
        let mut bits = 0u64;
        for (axis, &value) in coords.iter().enumerate() {
            match value {
                1 => {}
                2 => bits |= 1 << axis,
                _ => return Err(PathError::CoordinateOutOfRange { axis, value }),
            }
        }
        Ok(Self { n: n as u16, bits })
    }

    pub fn dimension(&self) -> usize {
        self.n as usize
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    /// Coordinate at `axis`, in `{1,2}`.
    pub fn coord(&self, axis: usize) -> u8 {
        1 + ((self.bits >> axis) & 1) as u8
    }

    pub fn coords(&self) -> Vec<u8> {
        (0..self.dimension()).map(|axis| self.coord(axis)).collect()
    }

    pub fn flip(&self, axis: usize) -> Self {
        assert!(axis < self.dimension());
        Self {
            n: self.n,
            bits: self.bits ^ (1 << axis),
        }
    }

    pub fn is_adjacent(&self, other: &HVertex) -> bool {
        self.n == other.n && (self.bits ^ other.bits).count_ones() == 1
    }
}

impl fmt::Display for HVertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.coords().iter().map(|c| c.to_string()).collect();
        f.write_str(&parts.join(" "))
    }
}

impl fmt::Debug for HVertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HVertex({self})")
    }
}

/// Vertex of the grid graph `G(n,k)`: coordinates in `1..=k`, adjacency is a
/// unit step along exactly one axis.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridVertex {
    k: u32,
    coords: Vec<u32>,
}

impl GridVertex {
    pub fn new(k: u32, coords: Vec<u32>) -> Result<Self, PathError> {
        if coords.is_empty() {
            return Err(PathError::Empty);
        }
        for (axis, &c) in coords.iter().enumerate() {
            if c < 1 || c > k {
                return Err(PathError::CoordinateOutOfRange {
                    axis,
                    value: c as i64,
                });
            }
        }
        Ok(Self { k, coords })
    }

    pub fn dimension(&self) -> usize {
        self.coords.len()
    }

    pub fn grid_size(&self) -> u32 {
        self.k
    }

    pub fn coords(&self) -> &[u32] {
        &self.coords
    }

    pub fn is_adjacent(&self, other: &GridVertex) -> bool {
        if self.k != other.k || self.coords.len() != other.coords.len() {
            return false;
        }
        let mut diffs = 0u32;
        for (a, b) in self.coords.iter().zip(other.coords.iter()) {
            let d = a.abs_diff(*b);
            if d > 1 {
                return false;
            }
            diffs += d;
        }
        diffs == 1
    }
}

/// Walk on the hypercube: consecutive vertices are adjacent.
#[derive(Debug, Clone, PartialEq)]
pub struct Walk {
    vertices: Vec<HVertex>,
}

impl Walk {
    pub fn from_vertices(vertices: Vec<HVertex>) -> Result<Self, PathError> {
        if vertices.is_empty() {
            return Err(PathError::Empty);
        }
        let n = vertices[0].dimension();
        for (i, pair) in vertices.windows(2).enumerate() {
            if pair[1].dimension() != n {
                return Err(PathError::DimensionMismatch {
                    expected: n,
                    got: pair[1].dimension(),
                });
            }
            if !pair[0].is_adjacent(&pair[1]) {
                return Err(PathError::NotAdjacent(i, i + 1));
            }
        }
        Ok(Self { vertices })
    }

    pub fn dimension(&self) -> usize {
        self.vertices[0].dimension()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn vertices(&self) -> &[HVertex] {
        &self.vertices
    }
}

/// Random walk of `steps` vertices starting at `(1,...,1)`; each step flips
/// one uniformly chosen coordinate. Deterministic per seed.
pub fn random_walk(n: usize, steps: usize, seed: u64) -> Walk {
    assert!(steps >= 1, "walk needs at least one vertex");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vertices = Vec::with_capacity(steps);
    let mut current = HVertex::all_ones(n);
    vertices.push(current);
    for _ in 1..steps {
        let axis = rng.gen_range(0..n);
        current = current.flip(axis);
        vertices.push(current);
    }
    Walk { vertices }
}

/// Length of the longest cycle in the walk: the maximum `j - i` over repeated
/// occurrences `v_i = v_j`, zero when all vertices are distinct.
pub fn max_cycle_length(walk: &Walk) -> usize {
    let mut first: HashMap<u64, usize> = HashMap::with_capacity(walk.len());
    let mut max = 0usize;
    for (idx, v) in walk.vertices().iter().enumerate() {
        match first.entry(v.bits()) {
            std::collections::hash_map::Entry::Occupied(e) => max = max.max(idx - e.get()),
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(idx);
            }
        }
    }
    max
}

/// Cuts every cycle out of the walk: repeatedly take the earliest vertex that
/// recurs, remove everything up to (and including) its last recurrence, and
/// keep going until no vertex repeats. Preserves the first and last vertex.
pub fn cut_cycles(walk: &Walk) -> SimplePath {
    let mut v: Vec<HVertex> = walk.vertices().to_vec();
    loop {
        let mut last_pos: HashMap<u64, usize> = HashMap::with_capacity(v.len());
        for (idx, vertex) in v.iter().enumerate() {
            last_pos.insert(vertex.bits(), idx);
        }
        let mut cut: Option<(usize, usize)> = None;
        for (idx, vertex) in v.iter().enumerate() {
            let last = last_pos[&vertex.bits()];
            if last > idx {
                cut = Some((idx, last));
                break;
            }
        }
        match cut {
            Some((i, j)) => {
                v.drain(i + 1..=j);
            }
            None => break,
        }
    }
    SimplePath::from_vertices(v).expect("cycle cutting yields a simple adjacent path")
}

/// Simple (cycle-free) path on the hypercube.
#[derive(Debug, Clone)]
pub struct SimplePath {
    vertices: Vec<HVertex>,
    index: HashMap<u64, usize>,
}

impl PartialEq for SimplePath {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices
    }
}

impl SimplePath {
    pub fn from_vertices(vertices: Vec<HVertex>) -> Result<Self, PathError> {
        let walk = Walk::from_vertices(vertices)?;
        let mut index = HashMap::with_capacity(walk.len());
        for (pos, v) in walk.vertices().iter().enumerate() {
            if index.insert(v.bits(), pos).is_some() {
                return Err(PathError::RepeatedVertex(pos));
            }
        }
        Ok(Self {
            vertices: walk.vertices,
            index,
        })
    }

    pub fn dimension(&self) -> usize {
        self.vertices[0].dimension()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn vertices(&self) -> &[HVertex] {
        &self.vertices
    }

    pub fn start(&self) -> HVertex {
        self.vertices[0]
    }

    pub fn end(&self) -> HVertex {
        *self.vertices.last().expect("nonempty")
    }

    /// 0-based position of `v` on the path, if visited.
    pub fn position(&self, v: &HVertex) -> Option<usize> {
        if v.dimension() != self.dimension() {
            return None;
        }
        self.index.get(&v.bits()).copied()
    }

    /// Local visit information for one vertex: the end-of-simple-path oracle.
    pub fn esp_answer(&self, v: &HVertex) -> Result<LocalPathInfo, PathError> {
        if v.dimension() != self.dimension() {
            return Err(PathError::DimensionMismatch {
                expected: self.dimension(),
                got: v.dimension(),
            });
        }
        Ok(match self.index.get(&v.bits()) {
            None => LocalPathInfo {
                visited: false,
                prev: None,
                next: None,
            },
            Some(&pos) => LocalPathInfo {
                visited: true,
                prev: (pos > 0).then(|| self.vertices[pos - 1]),
                next: (pos + 1 < self.vertices.len()).then(|| self.vertices[pos + 1]),
            },
        })
    }

    /// Serialization: first line `n L`, then `L` lines of coordinates.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.dimension(), self.len());
        for v in &self.vertices {
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, PathError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(PathError::Parse {
            line: 1,
            msg: "empty input".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(PathError::Parse {
                line: 1,
                msg: "header must be `n L`".into(),
            });
        }
        let n: usize = fields[0].parse().map_err(|e| PathError::Parse {
            line: 1,
            msg: format!("bad n: {e}"),
        })?;
        let l: usize = fields[1].parse().map_err(|e| PathError::Parse {
            line: 1,
            msg: format!("bad L: {e}"),
        })?;
        let mut vertices = Vec::with_capacity(l);
        for (i, line) in lines.take(l).enumerate() {
            let line_no = i + 2;
            let coords: Result<Vec<i64>, _> = line.split_whitespace().map(str::parse).collect();
            let coords = coords.map_err(|e| PathError::Parse {
                line: line_no,
                msg: format!("{e}"),
            })?;
            if coords.len() != n {
                return Err(PathError::Parse {
                    line: line_no,
                    msg: format!("expected {n} coordinates, got {}", coords.len()),
                });
            }
            let v = HVertex::from_coords(&coords).map_err(|e| PathError::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
            vertices.push(v);
        }
        if vertices.len() != l {
            return Err(PathError::Parse {
                line: vertices.len() + 2,
                msg: format!("expected {l} vertices, got {}", vertices.len()),
            });
        }
        Self::from_vertices(vertices)
    }

    /// FNV-1a hash of the canonical serialization; stable across runs.
    pub fn path_hash(&self) -> u64 {
        let mut hash = 0xcbf29ce484222325u64;
        for byte in self.to_text().bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        hash
    }
}

/// All simple paths that start at `(1,...,1)`, in depth-first order. Every
/// prefix counts as a path, including the single start vertex. Exponential
/// in `n`; intended for exhaustive checks at desk scale.
pub fn enumerate_simple_paths_from_start(n: usize) -> Vec<SimplePath> {
    fn extend(current: &mut Vec<HVertex>, visited: &mut u64, out: &mut Vec<SimplePath>) {
        out.push(SimplePath::from_vertices(current.clone()).expect("prefix is simple"));
        let last = *current.last().expect("nonempty");
        for axis in 0..last.dimension() {
            let next = last.flip(axis);
            if *visited & (1 << next.bits()) == 0 {
                *visited |= 1 << next.bits();
                current.push(next);
                extend(current, visited, out);
                current.pop();
                *visited &= !(1 << next.bits());
            }
        }
    }
    assert!(n <= 6, "exhaustive path enumeration is desk-scale only");
    let start = HVertex::all_ones(n);
    let mut current = vec![start];
    let mut visited = 1u64 << start.bits();
    let mut out = Vec::new();
    extend(&mut current, &mut visited, &mut out);
    out
}

/// Answer of the end-of-simple-path oracle for one vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalPathInfo {
    pub visited: bool,
    pub prev: Option<HVertex>,
    pub next: Option<HVertex>,
}

impl fmt::Display for LocalPathInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.visited {
            return f.write_str("absent");
        }
        let prev = self.prev.map_or("-".to_string(), |v| v.to_string());
        let next = self.next.map_or("-".to_string(), |v| v.to_string());
        write!(f, "visited;prev={prev};next={next}")
    }
}

/// Source of local path information, so map evaluation can be backed either
/// by a path directly or by a transcript-recording oracle channel.
pub trait PathInfoSource {
    fn dimension(&self) -> usize;
    fn local_info(&self, v: &HVertex) -> LocalPathInfo;
    fn path_hash(&self) -> u64;
}

impl PathInfoSource for SimplePath {
    fn dimension(&self) -> usize {
        SimplePath::dimension(self)
    }

    fn local_info(&self, v: &HVertex) -> LocalPathInfo {
        self.esp_answer(v).expect("dimension checked by caller")
    }

    fn path_hash(&self) -> u64 {
        SimplePath::path_hash(self)
    }
}

/// ESP channel that records every oracle call in a transcript.
pub struct RecordingEsp {
    path: SimplePath,
    transcript: RefCell<QueryTranscript>,
    budget: QueryBudget,
}

impl RecordingEsp {
    pub fn new(path: SimplePath, budget: QueryBudget) -> Self {
        Self {
            path,
            transcript: RefCell::new(QueryTranscript::new()),
            budget,
        }
    }

    pub fn transcript(&self) -> QueryTranscript {
        self.transcript.borrow().clone()
    }

    pub fn query_count(&self) -> u64 {
        self.transcript.borrow().count()
    }

    /// Vertices queried so far, in order.
    pub fn queried_vertices(&self) -> Vec<HVertex> {
        self.transcript
            .borrow()
            .entries()
            .iter()
            .map(|e| match &e.query {
                Payload::Ints(coords) => {
                    HVertex::from_coords(coords).expect("recorded vertex is valid")
                }
                _ => unreachable!("esp queries carry vertex payloads"),
            })
            .collect()
    }
}

impl PathInfoSource for RecordingEsp {
    fn dimension(&self) -> usize {
        self.path.dimension()
    }

    fn local_info(&self, v: &HVertex) -> LocalPathInfo {
        let info = self
            .path
            .esp_answer(v)
            .expect("dimension checked by caller");
        self.transcript
            .borrow_mut()
            .record(
                &self.budget,
                QueryKind::Esp,
                Payload::Ints(v.coords().iter().map(|&c| c as i64).collect()),
                Payload::Text(info.to_string()),
            )
            .expect("esp budget exhausted");
        info
    }

    fn path_hash(&self) -> u64 {
        self.path.path_hash()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HtpWinner {
    Algorithm,
    Adversary,
}

/// Outcome of one hit-the-path game.
#[derive(Debug, Clone, PartialEq)]
pub struct HtpOutcome {
    pub winner: HtpWinner,
    pub hit_step: Option<usize>,
    pub queries_used: usize,
}

/// Plays the hit-the-path game for `steps` rounds against `path`.
///
/// At step `t` (1-based) the strategy sees the prefix `w_1..w_{n^2 (t-1)}`
/// (clamped to the path length) and names a vertex; it wins if the vertex
/// lies on the path strictly beyond position `t * n^2`. Once the path is
/// fully revealed the future set is empty and the adversary wins the
/// remaining steps.
pub fn htp_play<F>(path: &SimplePath, mut strategy: F, steps: usize) -> HtpOutcome
where
    F: FnMut(&[HVertex], usize) -> HVertex,
{
    let n = path.dimension();
    let block = n * n;
    for t in 1..=steps {
        let revealed = (block * (t - 1)).min(path.len());
        let guess = strategy(&path.vertices()[..revealed], t);
        if let Some(pos) = path.position(&guess) {
            // stored positions are 0-based; the game indexes from 1
            if pos + 1 > t * block {
                return HtpOutcome {
                    winner: HtpWinner::Algorithm,
                    hit_step: Some(t),
                    queries_used: t,
                };
            }
        }
    }
    HtpOutcome {
        winner: HtpWinner::Adversary,
        hit_step: None,
        queries_used: steps,
    }
}
