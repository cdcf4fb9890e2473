//! Vietoris–Rips persistence.
//!
//! H0 comes from union-find over edges sorted by `(diameter, index)`.
//! Higher dimensions are obtained by reducing the coboundary matrix (the
//! anti-transpose of the boundary matrix) with clearing: simplices already
//! paired one dimension below are skipped. Pairs are identical to those of
//! the boundary-matrix reduction.
//!
//! Simplices are encoded with the combinatorial number system: a simplex with
//! vertices `v_k > … > v_0` has index `Σ C(v_i, i + 1)`, which is its rank in
//! colexicographic order. Within one dimension, simplices are totally ordered
//! by `(diameter, index)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::rc::Rc;

use rustc_hash::{FxHashMap, FxHashSet};

use super::{PersistenceDiagram, PersistencePair};
use crate::cloud::DistanceMatrix;
use crate::error::{Result, UtsError};

/// Highest homology dimension supported.
pub const MAX_HOMOLOGY_DIM: usize = 2;

struct Binomial {
    table: Vec<[u64; MAX_HOMOLOGY_DIM + 3]>,
}

impl Binomial {
    fn new(n: usize) -> Self {
        let k_max = MAX_HOMOLOGY_DIM + 2;
        let mut table = vec![[0u64; MAX_HOMOLOGY_DIM + 3]; n + 1];
        for v in 0..=n {
            table[v][0] = 1;
            for k in 1..=k_max.min(v) {
                table[v][k] = table[v - 1][k - 1] + if k <= v - 1 { table[v - 1][k] } else { 0 };
            }
        }
        Self { table }
    }

    /// `C(v, k)`, zero when `k > v`.
    #[inline]
    fn get(&self, v: usize, k: usize) -> u64 {
        self.table[v][k]
    }
}

#[derive(Clone, Copy, Debug)]
struct Entry {
    diam: f64,
    index: u64,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    /// Reversed so that `BinaryHeap` pops the filtration-earliest entry.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .diam
            .total_cmp(&self.diam)
            .then(other.index.cmp(&self.index))
    }
}

struct Complex<'a> {
    dm: &'a DistanceMatrix,
    binom: Binomial,
    threshold: f64,
}

impl<'a> Complex<'a> {
    fn n(&self) -> usize {
        self.dm.len()
    }

    /// Vertices of the `dim`-simplex with the given index, in descending order.
    fn vertices(&self, mut index: u64, dim: usize, out: &mut Vec<usize>) {
        out.clear();
        let mut hi = self.n();
        for k in (1..=dim + 1).rev() {
            // Largest v < hi with C(v, k) <= index.
            let (mut lo, mut top) = (k - 1, hi);
            while top - lo > 1 {
                let mid = (lo + top) / 2;
                if self.binom.get(mid, k) <= index {
                    lo = mid;
                } else {
                    top = mid;
                }
            }
            out.push(lo);
            index -= self.binom.get(lo, k);
            hi = lo;
        }
    }

    fn index_of(&self, desc_vertices: &[usize]) -> u64 {
        let k = desc_vertices.len();
        desc_vertices
            .iter()
            .enumerate()
            .map(|(i, &v)| self.binom.get(v, k - i))
            .sum()
    }

    fn diameter(&self, vertices: &[usize]) -> f64 {
        let mut d: f64 = 0.0;
        for (a, &u) in vertices.iter().enumerate() {
            for &w in &vertices[a + 1..] {
                d = d.max(self.dm.get(u, w));
            }
        }
        d
    }

    /// Calls `f(cofacet)` for every cofacet within the threshold, with cofacet
    /// indices strictly increasing. Stops early when `f` returns false.
    fn for_each_cofacet(&self, vertices: &[usize], diam: f64, mut f: impl FnMut(Entry) -> bool) {
        const W: usize = MAX_HOMOLOGY_DIM + 3;
        let k = vertices.len();
        // Inserting v after the first p vertices shifts those up one binomial
        // order and leaves the rest in place.
        let mut above = [0u64; W];
        let mut below = [0u64; W];
        let mut rows: [&[f64]; W] = [&[]; W];
        for (i, &u) in vertices.iter().enumerate() {
            above[i + 1] = above[i] + self.binom.get(u, k + 1 - i);
            rows[i] = self.dm.row(u);
        }
        for (i, &u) in vertices.iter().enumerate().rev() {
            below[i] = below[i + 1] + self.binom.get(u, k - i);
        }
        let rows = &rows[..k];
        let mut p = k;
        for v in 0..self.n() {
            if p > 0 && vertices[p - 1] == v {
                p -= 1;
                continue;
            }
            let mut cd = diam;
            for r in rows {
                cd = cd.max(r[v]);
            }
            if cd > self.threshold {
                continue;
            }
            let entry = Entry {
                diam: cd,
                index: above[p] + self.binom.get(v, k + 1 - p) + below[p],
            };
            if !f(entry) {
                return;
            }
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        // Keep the smaller root so merges are order-independent in outcome.
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        true
    }
}

/// Radius beyond which the Rips complex is a cone: `min_i max_j d(i, j)`.
pub fn enclosing_radius(dm: &DistanceMatrix) -> f64 {
    (0..dm.len())
        .map(|i| dm.row(i).iter().copied().fold(0.0, f64::max))
        .fold(f64::INFINITY, f64::min)
}

/// Persistent homology of the Vietoris–Rips filtration up to `max_dim`.
///
/// `threshold = None` uses the full diameter; in that case the filtration is
/// truncated at the enclosing radius, which leaves the diagram unchanged.
pub fn rips_persistence(
    dm: &DistanceMatrix,
    max_dim: usize,
    threshold: Option<f64>,
) -> Result<PersistenceDiagram> {
    if max_dim > MAX_HOMOLOGY_DIM {
        return Err(UtsError::Capability(format!(
            "homology dimension {max_dim} requested; at most {MAX_HOMOLOGY_DIM} is supported"
        )));
    }
    if let Some(t) = threshold {
        if !(t > 0.0) {
            return Err(UtsError::Precondition(format!(
                "filtration threshold must be positive (got {t})"
            )));
        }
    }
    let n = dm.len();
    let mut pairs = Vec::new();
    if n < 2 {
        pairs.push(PersistencePair::new(0, 0.0, f64::INFINITY));
        return Ok(PersistenceDiagram::new(pairs, max_dim));
    }
    let threshold = threshold.unwrap_or_else(|| enclosing_radius(dm));
    let complex = Complex {
        dm,
        binom: Binomial::new(n),
        threshold,
    };

    // Edges within threshold, filtration order.
    let mut edges: Vec<Entry> = Vec::with_capacity(n * (n - 1) / 2);
    for j in 1..n {
        for i in 0..j {
            let d = dm.get(i, j);
            if d <= threshold {
                edges.push(Entry {
                    diam: d,
                    index: complex.binom.get(j, 2) + i as u64,
                });
            }
        }
    }
    edges.sort_unstable_by(|a, b| b.cmp(a));

    let mut uf = UnionFind::new(n);
    let mut paired: Vec<u64> = Vec::with_capacity(n);
    let mut verts = Vec::with_capacity(2);
    for e in &edges {
        complex.vertices(e.index, 1, &mut verts);
        if uf.union(verts[0], verts[1]) {
            paired.push(e.index);
            if e.diam > 0.0 {
                pairs.push(PersistencePair::new(0, 0.0, e.diam));
            }
        }
    }
    for v in 0..n {
        if uf.find(v) == v {
            pairs.push(PersistencePair::new(0, 0.0, f64::INFINITY));
        }
    }

    let mut columns = edges;
    for dim in 1..=max_dim {
        let cleared: FxHashSet<u64> = paired.iter().copied().collect();
        columns.retain(|c| !cleared.contains(&c.index));
        // Reverse filtration order for the coboundary reduction.
        columns.sort_unstable();
        let next_pivots = reduce_coboundary(&complex, dim, &columns, &mut pairs);
        if dim < max_dim {
            columns = cofacet_simplices(&complex, dim + 1);
            paired = next_pivots;
        }
    }

    Ok(PersistenceDiagram::new(pairs, max_dim))
}

/// All `dim`-simplices within the threshold.
fn cofacet_simplices(complex: &Complex<'_>, dim: usize) -> Vec<Entry> {
    let n = complex.n();
    let k = dim + 1;
    let mut out = Vec::new();
    if n < k {
        return out;
    }
    // Ascending combination, advanced lexicographically.
    let mut combo: Vec<usize> = (0..k).collect();
    let mut desc = vec![0usize; k];
    loop {
        for (d, &v) in desc.iter_mut().zip(combo.iter().rev()) {
            *d = v;
        }
        let diam = complex.diameter(&desc);
        if diam <= complex.threshold {
            out.push(Entry {
                diam,
                index: complex.index_of(&desc),
            });
        }
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if combo[i] < n - k + i {
                break;
            }
        }
        combo[i] += 1;
        for j in i + 1..k {
            combo[j] = combo[j - 1] + 1;
        }
    }
}

/// Leading entries of a sorted coboundary kept for reuse.
const PREFIX_LEN: usize = 32;
/// Upper bound on cached entries across all prefixes.
const CACHE_ENTRIES: usize = 1 << 23;

/// Position in one simplex's coboundary, sorted in filtration order.
struct Cursor {
    head: Entry,
    list: Rc<[Entry]>,
    pos: usize,
    simplex: u64,
    complete: bool,
}

impl Cursor {
    fn new(list: Rc<[Entry]>, simplex: u64, complete: bool) -> Option<Self> {
        Some(Cursor {
            head: *list.first()?,
            list,
            pos: 0,
            simplex,
            complete,
        })
    }

    fn current(&self) -> Entry {
        self.head
    }
}

impl PartialEq for Cursor {
    fn eq(&self, other: &Self) -> bool {
        self.current() == other.current()
    }
}

impl Eq for Cursor {}

impl PartialOrd for Cursor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cursor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.current().cmp(&other.current())
    }
}

/// Sorted coboundaries with a bounded cache of their leading entries.
struct Coboundaries<'c, 'a> {
    complex: &'c Complex<'a>,
    dim: usize,
    prefixes: FxHashMap<u64, (Rc<[Entry]>, bool)>,
    cached: usize,
    verts: Vec<usize>,
}

impl Coboundaries<'_, '_> {
    fn sorted(&mut self, simplex: u64) -> Vec<Entry> {
        self.complex.vertices(simplex, self.dim, &mut self.verts);
        let diam = self.complex.diameter(&self.verts);
        let mut out = Vec::new();
        self.complex.for_each_cofacet(&self.verts, diam, |e| {
            out.push(e);
            true
        });
        out.sort_unstable_by(|a, b| b.cmp(a));
        out
    }

    fn remember(&mut self, simplex: u64, sorted: &[Entry]) {
        if self.cached >= CACHE_ENTRIES || self.prefixes.contains_key(&simplex) {
            return;
        }
        let k = sorted.len().min(PREFIX_LEN);
        self.cached += k;
        self.prefixes
            .insert(simplex, (sorted[..k].into(), sorted.len() <= PREFIX_LEN));
    }

    fn cursor(&mut self, simplex: u64) -> Option<Cursor> {
        let (list, complete) = match self.prefixes.get(&simplex) {
            Some((list, complete)) => (list.clone(), *complete),
            None => {
                let full = self.sorted(simplex);
                self.remember(simplex, &full);
                (full.into(), true)
            }
        };
        Cursor::new(list, simplex, complete)
    }

    /// Moves to the next entry; false once the coboundary is exhausted.
    fn advance(&mut self, c: &mut Cursor) -> bool {
        c.pos += 1;
        if c.pos >= c.list.len() {
            if c.complete {
                return false;
            }
            c.list = self.sorted(c.simplex).into();
            c.complete = true;
            if c.pos >= c.list.len() {
                return false;
            }
        }
        c.head = c.list[c.pos];
        true
    }
}

/// Reduce the coboundary columns of `columns` (already in reverse filtration
/// order). Appends finite and essential pairs of dimension `dim` and returns the
/// indices of the `(dim+1)`-simplices that became pivots.
///
/// A working column is a lazy merge of its simplices' sorted coboundaries, so
/// only entries up to the pivot are ever materialized.
fn reduce_coboundary(
    complex: &Complex<'_>,
    dim: usize,
    columns: &[Entry],
    pairs: &mut Vec<PersistencePair>,
) -> Vec<u64> {
    // pivot cofacet index -> owning column index
    let mut pivot_owner: FxHashMap<u64, u64> = FxHashMap::default();
    // reduction matrix columns for non-trivially reduced owners
    let mut reduction: FxHashMap<u64, Vec<u64>> = FxHashMap::default();
    let mut cob = Coboundaries {
        complex,
        dim,
        prefixes: FxHashMap::default(),
        cached: 0,
        verts: Vec::with_capacity(dim + 1),
    };
    let mut pivots = Vec::new();
    let mut verts = Vec::with_capacity(dim + 1);
    let mut buf: Vec<Entry> = Vec::with_capacity(complex.n());
    let mut heap: BinaryHeap<Cursor> = BinaryHeap::new();

    for col in columns {
        complex.vertices(col.index, dim, &mut verts);

        // Emergent pair: the first cofacet (in index order) that has the same
        // diameter is the filtration-earliest entry of the unreduced column.
        buf.clear();
        let mut emergent = false;
        let mut seen_equal = false;
        complex.for_each_cofacet(&verts, col.diam, |e| {
            if !seen_equal && e.diam == col.diam {
                seen_equal = true;
                if !pivot_owner.contains_key(&e.index) {
                    pivot_owner.insert(e.index, col.index);
                    pivots.push(e.index);
                    emergent = true;
                    return false;
                }
            }
            buf.push(e);
            true
        });
        if emergent {
            continue;
        }

        buf.sort_unstable_by(|a, b| b.cmp(a));
        cob.remember(col.index, &buf);
        heap.clear();
        heap.extend(Cursor::new(buf.as_slice().into(), col.index, true));
        let mut v_col: Vec<u64> = vec![col.index];

        let pivot = loop {
            match pop_pivot(&mut heap, &mut cob) {
                None => break None,
                Some(p) => match pivot_owner.get(&p.index) {
                    None => break Some(p),
                    Some(&owner) => {
                        heap.extend(Cursor::new(Rc::from([p]), col.index, true));
                        let single = [owner];
                        let owner_v = reduction.get(&owner).map_or(&single[..], |v| v.as_slice());
                        for &s in owner_v {
                            heap.extend(cob.cursor(s));
                            v_col.push(s);
                        }
                    }
                },
            }
        };

        match pivot {
            Some(p) => {
                if p.diam > col.diam {
                    pairs.push(PersistencePair::new(dim, col.diam, p.diam));
                }
                pivot_owner.insert(p.index, col.index);
                pivots.push(p.index);
                if v_col.len() > 1 {
                    reduction.insert(col.index, compact_mod2(v_col));
                }
            }
            None => pairs.push(PersistencePair::new(dim, col.diam, f64::INFINITY)),
        }
    }
    pivots
}

/// Pop the earliest entry with odd multiplicity (Z/2 coefficients).
fn pop_pivot(heap: &mut BinaryHeap<Cursor>, cob: &mut Coboundaries<'_, '_>) -> Option<Entry> {
    while let Some(mut c) = heap.pop() {
        let top = c.current();
        let mut count = 1usize;
        if cob.advance(&mut c) {
            heap.push(c);
        }
        while heap.peek().is_some_and(|d| d.current().index == top.index) {
            let mut d = heap.pop().expect("peeked");
            count += 1;
            if cob.advance(&mut d) {
                heap.push(d);
            }
        }
        if count % 2 == 1 {
            return Some(top);
        }
    }
    None
}

fn compact_mod2(mut v: Vec<u64>) -> Vec<u64> {
    v.sort_unstable();
    let mut out = Vec::with_capacity(v.len());
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j] == v[i] {
            j += 1;
        }
        if (j - i) % 2 == 1 {
            out.push(v[i]);
        }
        i = j;
    }
    out
}
