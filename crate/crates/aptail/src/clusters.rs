//! Cluster structure of progression families: connected components and
//! their small / bounded / heavy classification, factorial moments with
//! optional seed filtering, and the injective encoding that bounds the
//! number of connected subhypergraphs with a prescribed edge boundary.

use crate::error::{Error, Result};
use crate::index::{psi, ModelParams, ProgressionIndex, SubsetState};
use crate::numeric::{binomial_u128, falling, KahanSum};
use crate::variational::m_max;

pub const DEFAULT_K_CONST: f64 = 1e3;
pub const DEFAULT_CLUSTER_EPSILON: f64 = 0.1;
pub const ENUM_COMBINATION_CAP: u128 = 10_000_000;
pub const FACTORIAL_MASK_N_CAP: u32 = 14;
pub const WEIGHT_CAP: u32 = 1_000_000;

/// A k-uniform hypergraph on vertices 1..=n_vertices with a fixed edge
/// order (the edge id); the encoding below is defined relative to that
/// order.
#[derive(Debug, Clone)]
pub struct Hypergraph {
    k: u32,
    n_vertices: u32,
    edges: Vec<Vec<u32>>,
}

impl Hypergraph {
    pub fn new(k: u32, n_vertices: u32, edges: Vec<Vec<u32>>) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("k must be at least 2, got {k}")));
        }
        if n_vertices == 0 {
            return Err(Error::invalid("hypergraph needs at least one vertex"));
        }
        let mut sorted_edges = Vec::with_capacity(edges.len());
        for (id, edge) in edges.into_iter().enumerate() {
            let mut e = edge;
            e.sort_unstable();
            e.dedup();
            if e.len() != k as usize {
                return Err(Error::invalid(format!(
                    "edge {id} does not have {k} distinct vertices"
                )));
            }
            if e[0] == 0 || *e.last().unwrap() > n_vertices {
                return Err(Error::invalid(format!(
                    "edge {id} has vertices outside 1..={n_vertices}"
                )));
            }
            sorted_edges.push(e);
        }
        let mut seen = sorted_edges.clone();
        seen.sort();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate edges are not allowed"));
        }
        Ok(Hypergraph {
            k,
            n_vertices,
            edges: sorted_edges,
        })
    }

    pub fn from_index(index: &ProgressionIndex) -> Self {
        Hypergraph {
            k: index.k(),
            n_vertices: index.n(),
            edges: index.progressions().to_vec(),
        }
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn n_vertices(&self) -> u32 {
        self.n_vertices
    }

    pub fn edge_count(&self) -> u32 {
        self.edges.len() as u32
    }

    pub fn edges(&self) -> &[Vec<u32>] {
        &self.edges
    }

    pub fn edge(&self, id: u32) -> &[u32] {
        &self.edges[id as usize]
    }

    /// Number of edges meeting W in exactly i vertices, for i = 1..=k.
    pub fn boundary_profile(&self, w: &[u32]) -> Result<Vec<u64>> {
        let mut in_w = vec![false; self.n_vertices as usize + 1];
        for &x in w {
            if x == 0 || x > self.n_vertices {
                return Err(Error::invalid(format!(
                    "vertex {x} outside 1..={}",
                    self.n_vertices
                )));
            }
            in_w[x as usize] = true;
        }
        let mut profile = vec![0u64; self.k as usize];
        for edge in &self.edges {
            let cnt = edge.iter().filter(|&&x| in_w[x as usize]).count();
            if cnt >= 1 {
                profile[cnt - 1] += 1;
            }
        }
        Ok(profile)
    }

    /// Number of edges meeting W in at least i vertices, for i = 1..=k.
    pub fn boundary_suffix(&self, w: &[u32]) -> Result<Vec<u64>> {
        let profile = self.boundary_profile(w)?;
        let mut suffix = profile;
        for i in (0..suffix.len() - 1).rev() {
            suffix[i] += suffix[i + 1];
        }
        Ok(suffix)
    }
}

/// One connected component: its edge ids, the union of their vertices,
/// and the two size statistics s = #edges, m = #vertices.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct ClusterRecord {
    pub edge_ids: Vec<u32>,
    pub vertices: Vec<u32>,
    pub s: u32,
    pub m: u32,
}

fn dsu_find(parent: &mut [usize], x: usize) -> usize {
    let mut root = x;
    while parent[root] != root {
        root = parent[root];
    }
    let mut cur = x;
    while parent[cur] != root {
        let next = parent[cur];
        parent[cur] = root;
        cur = next;
    }
    root
}

/// Connected components of the subhypergraph spanned by the given edges,
/// ordered by smallest edge id.
pub fn components(h: &Hypergraph, edge_ids: &[u32]) -> Result<Vec<ClusterRecord>> {
    let mut sorted_ids = edge_ids.to_vec();
    sorted_ids.sort_unstable();
    sorted_ids.dedup();
    if sorted_ids.len() != edge_ids.len() {
        return Err(Error::invalid("edge ids must be distinct"));
    }
    for &id in &sorted_ids {
        if id >= h.edge_count() {
            return Err(Error::invalid(format!(
                "edge id {id} outside 0..{}",
                h.edge_count()
            )));
        }
    }
    let mut parent: Vec<usize> = (0..sorted_ids.len()).collect();
    let mut owner: Vec<Option<usize>> = vec![None; h.n_vertices as usize + 1];
    for (pos, &id) in sorted_ids.iter().enumerate() {
        for &x in h.edge(id) {
            match owner[x as usize] {
                None => owner[x as usize] = Some(pos),
                Some(prev) => {
                    let a = dsu_find(&mut parent, prev);
                    let b = dsu_find(&mut parent, pos);
                    if a != b {
                        parent[b.max(a)] = b.min(a);
                    }
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<u32>> = std::collections::BTreeMap::new();
    for (pos, &id) in sorted_ids.iter().enumerate() {
        groups.entry(dsu_find(&mut parent, pos)).or_default().push(id);
    }
    let mut records = Vec::with_capacity(groups.len());
    for (_, ids) in groups {
        let mut vertices: Vec<u32> = ids.iter().flat_map(|&id| h.edge(id).iter().copied()).collect();
        vertices.sort_unstable();
        vertices.dedup();
        records.push(ClusterRecord {
            s: ids.len() as u32,
            m: vertices.len() as u32,
            edge_ids: ids,
            vertices,
        });
    }
    Ok(records)
}

pub fn cluster_xi(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::domain(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(1.0 + epsilon / 15.0)
}

fn log_ratio(p: f64) -> Result<f64> {
    if !(p > 0.0) || p >= std::f64::consts::E.recip() {
        return Err(Error::domain(format!(
            "cluster classification needs 0 < p < 1/e, got {p}"
        )));
    }
    let l = (1.0 / p).ln();
    Ok(l / l.ln())
}

/// Size below which every cluster is automatically small:
/// (epsilon log(1/p) / loglog(1/p))^2.
pub fn s0(p: f64, epsilon: f64) -> Result<f64> {
    cluster_xi(epsilon)?;
    let lr = log_ratio(p)?;
    Ok((epsilon * lr).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterKind {
    Small,
    Bounded,
    Heavy,
}

impl std::fmt::Display for ClusterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClusterKind::Small => "small",
            ClusterKind::Bounded => "bounded",
            ClusterKind::Heavy => "heavy",
        })
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ClusterClass {
    pub kind: ClusterKind,
    /// Least l >= 1 with psi <= xi^l * mu * s / (K t).
    pub weight: u32,
    pub psi: f64,
    /// psi * K * t / (mu * s); at most xi^weight.
    pub ratio: f64,
    pub size_ok: bool,
    pub density_ok: bool,
}

/// Classifies one cluster at deviation t.  A cluster is small when both
/// s <= 2 log(1/p)^3 and s <= epsilon (log(1/p)/loglog(1/p)) m hold,
/// L-bounded when psi(union) <= L mu s / (K t), and heavy otherwise.
pub fn classify_cluster(
    params: &ModelParams,
    record: &ClusterRecord,
    t: f64,
    epsilon: f64,
    k_const: f64,
) -> Result<ClusterClass> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("t must be positive, got {t}")));
    }
    if !(k_const > 0.0) || !k_const.is_finite() {
        return Err(Error::domain(format!("K must be positive, got {k_const}")));
    }
    if record.s == 0 {
        return Err(Error::invalid("cluster must contain an edge"));
    }
    let xi = cluster_xi(epsilon)?;
    let lr = log_ratio(params.p)?;
    let m = params.moments();
    if !(m.mu > 0.0) {
        return Err(Error::domain("mu must be positive to classify clusters"));
    }
    let psi_val = psi(params, &record.vertices)?;
    let s = record.s as f64;
    let size_ok = s <= 2.0 * (1.0 / params.p).ln().powi(3);
    let density_ok = s <= epsilon * lr * record.m as f64;
    let ratio = psi_val * k_const * t / (m.mu * s);
    let mut weight = 1u32;
    let mut bound = xi;
    while ratio > bound {
        weight += 1;
        if weight > WEIGHT_CAP {
            return Err(Error::CapExceeded {
                what: "cluster weight",
                got: weight as u64,
                cap: WEIGHT_CAP as u64,
            });
        }
        bound *= xi;
    }
    let kind = if size_ok && density_ok {
        ClusterKind::Small
    } else if ratio <= 1.0 {
        ClusterKind::Bounded
    } else {
        ClusterKind::Heavy
    };
    Ok(ClusterClass {
        kind,
        weight,
        psi: psi_val,
        ratio,
        size_ok,
        density_ok,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CensusRow {
    pub s: u32,
    pub m: u32,
    pub kind: ClusterKind,
    pub weight: u32,
    pub count: u64,
    pub min_psi: f64,
    pub max_psi: f64,
}

/// Classifies every maximal cluster of progressions fully contained in R
/// and aggregates the results by (s, m, kind, weight).
pub fn cluster_census(
    params: &ModelParams,
    r: &SubsetState,
    t: f64,
    epsilon: f64,
    k_const: f64,
) -> Result<Vec<CensusRow>> {
    let index = &*params.index;
    let contained: Vec<u32> = (0..index.count() as u32)
        .filter(|&id| index.progression(id).iter().all(|&x| r.contains(x)))
        .collect();
    let h = Hypergraph::from_index(index);
    let comps = components(&h, &contained)?;
    let mut rows: std::collections::BTreeMap<(u32, u32, u8, u32), CensusRow> =
        std::collections::BTreeMap::new();
    for rec in &comps {
        let class = classify_cluster(params, rec, t, epsilon, k_const)?;
        let kind_key = match class.kind {
            ClusterKind::Small => 0u8,
            ClusterKind::Bounded => 1,
            ClusterKind::Heavy => 2,
        };
        let entry = rows
            .entry((rec.s, rec.m, kind_key, class.weight))
            .or_insert(CensusRow {
                s: rec.s,
                m: rec.m,
                kind: class.kind,
                weight: class.weight,
                count: 0,
                min_psi: f64::INFINITY,
                max_psi: f64::NEG_INFINITY,
            });
        entry.count += 1;
        entry.min_psi = entry.min_psi.min(class.psi);
        entry.max_psi = entry.max_psi.max(class.psi);
    }
    Ok(rows.into_values().collect())
}

/// Seed filter for moment computations: Z = 1 iff R contains no subset U
/// with psi(U) >= u within the stated size budget.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SeedFilter {
    /// Size budget from the two feasibility constraints (constant c).
    Family { u: f64, c: f64 },
    /// Plain size cap.
    Cap { u: f64, max_size: u32 },
}

struct MaskSweep {
    n: u32,
    prog_masks: Vec<u64>,
    /// p^{k-r} - p^k for r = 1..=k (index r-1).
    psi_weights: Vec<f64>,
    p: f64,
}

impl MaskSweep {
    fn new(params: &ModelParams) -> Result<Self> {
        let index = &*params.index;
        let n = index.n();
        if n > FACTORIAL_MASK_N_CAP {
            return Err(Error::CapExceeded {
                what: "n for mask-sweep moments",
                got: n as u64,
                cap: FACTORIAL_MASK_N_CAP as u64,
            });
        }
        let k = index.k();
        let pk = params.p.powi(k as i32);
        let psi_weights = (1..=k)
            .map(|r| params.p.powi((k - r) as i32) - pk)
            .collect();
        let prog_masks = index
            .progressions()
            .iter()
            .map(|prog| prog.iter().fold(0u64, |mk, &x| mk | (1u64 << (x - 1))))
            .collect();
        Ok(MaskSweep {
            n,
            prog_masks,
            psi_weights,
            p: params.p,
        })
    }

    fn psi_of(&self, mask: u64) -> f64 {
        let mut acc = 0.0;
        for &pm in &self.prog_masks {
            let r = (pm & mask).count_ones();
            if r >= 1 {
                acc += self.psi_weights[r as usize - 1];
            }
        }
        acc
    }

    fn ap_count(&self, mask: u64) -> u64 {
        self.prog_masks.iter().filter(|&&pm| pm & mask == pm).count() as u64
    }

    fn prob(&self, mask: u64) -> f64 {
        let ones = mask.count_ones() as i32;
        self.p.powi(ones) * (1.0 - self.p).powi(self.n as i32 - ones)
    }

    /// good[mask] = 1 iff mask contains a subset passing the base test;
    /// upward closure of the per-mask base predicate.
    fn seed_closure(&self, params: &ModelParams, filter: &SeedFilter) -> Result<Vec<bool>> {
        let (u, size_cap) = match *filter {
            SeedFilter::Family { u, c } => {
                if !(u > 0.0) {
                    return Err(Error::domain(format!("u must be positive, got {u}")));
                }
                let index = &*params.index;
                let mm = m_max(index.n() as u64, index.k(), params.p, u, c)?;
                (u, mm.min(self.n as u64) as u32)
            }
            SeedFilter::Cap { u, max_size } => {
                if !(u > 0.0) && u != 0.0 {
                    return Err(Error::domain(format!("u must be >= 0, got {u}")));
                }
                (u, max_size.min(self.n))
            }
        };
        let total = 1usize << self.n;
        let mut good = vec![false; total];
        for mask in 0..total as u64 {
            let base = mask.count_ones() <= size_cap && self.psi_of(mask) >= u;
            let mut g = base;
            if !g {
                let mut rest = mask;
                while rest != 0 {
                    let bit = rest & rest.wrapping_neg();
                    if good[(mask ^ bit) as usize] {
                        g = true;
                        break;
                    }
                    rest ^= bit;
                }
            }
            good[mask as usize] = g;
        }
        Ok(good)
    }
}

/// E[(X)_t] by summing t! p^{|union|} over t-subsets of progressions.
pub fn factorial_moment_exact(params: &ModelParams, t: u32) -> Result<f64> {
    let index = &*params.index;
    let n = index.n();
    if t == 0 {
        return Ok(1.0);
    }
    let small = n <= 12 && t <= 3;
    let medium = n <= 20 && t <= 2;
    if !small && !medium {
        return Err(Error::CapExceeded {
            what: "subset enumeration for factorial moment (needs n <= 12, t <= 3 or n <= 20, t <= 2)",
            got: n as u64,
            cap: 20,
        });
    }
    let count = index.count() as usize;
    if (t as u64) > count as u64 {
        return Ok(0.0);
    }
    let progs = index.progressions();
    let mut refcount = vec![0u32; n as usize + 1];
    let mut union_size = 0u32;
    let mut sum = KahanSum::new();
    // DFS over increasing progression ids; refcount tracks the union.
    fn descend(
        progs: &[Vec<u32>],
        start: usize,
        depth: u32,
        p: f64,
        refcount: &mut [u32],
        union_size: &mut u32,
        sum: &mut KahanSum,
    ) {
        if depth == 0 {
            sum.add(p.powi(*union_size as i32));
            return;
        }
        for id in start..=(progs.len() - depth as usize) {
            for &x in &progs[id] {
                if refcount[x as usize] == 0 {
                    *union_size += 1;
                }
                refcount[x as usize] += 1;
            }
            descend(progs, id + 1, depth - 1, p, refcount, union_size, sum);
            for &x in &progs[id] {
                refcount[x as usize] -= 1;
                if refcount[x as usize] == 0 {
                    *union_size -= 1;
                }
            }
        }
    }
    descend(
        progs,
        0,
        t,
        params.p,
        &mut refcount,
        &mut union_size,
        &mut sum,
    );
    let mut result = sum.value();
    for j in 1..=t as u64 {
        result *= j as f64;
    }
    Ok(result)
}

/// E[(X)_t Z] by full enumeration of R, where Z = 1 iff R contains no
/// seed passing the filter; filter None gives plain E[(X)_t].
pub fn factorial_moment_filtered(
    params: &ModelParams,
    t: u32,
    filter: Option<&SeedFilter>,
) -> Result<f64> {
    let sweep = MaskSweep::new(params)?;
    let good = match filter {
        Some(f) => Some(sweep.seed_closure(params, f)?),
        None => None,
    };
    let mut sum = KahanSum::new();
    for mask in 0..(1u64 << sweep.n) {
        if let Some(g) = &good {
            if g[mask as usize] {
                continue;
            }
        }
        let x = sweep.ap_count(mask) as f64;
        let f = falling(x, t);
        if f != 0.0 {
            sum.add(sweep.prob(mask) * f);
        }
    }
    Ok(sum.value())
}

/// E[X^m Z] by full enumeration; filter None gives the plain moment.
pub fn plain_moment_filtered(
    params: &ModelParams,
    m: u32,
    filter: Option<&SeedFilter>,
) -> Result<f64> {
    let sweep = MaskSweep::new(params)?;
    let good = match filter {
        Some(f) => Some(sweep.seed_closure(params, f)?),
        None => None,
    };
    let mut sum = KahanSum::new();
    for mask in 0..(1u64 << sweep.n) {
        if let Some(g) = &good {
            if g[mask as usize] {
                continue;
            }
        }
        let x = sweep.ap_count(mask) as f64;
        sum.add(sweep.prob(mask) * x.powi(m as i32));
    }
    Ok(sum.value())
}

/// Output of the encoding: the root edge and the marked grid cells
/// (i, j), 1-based, one per non-root edge.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Encoding {
    pub root: u32,
    pub marks: Vec<(u32, u32)>,
}

impl Encoding {
    /// |marks| = s - 1 and sum of (k - i) over marks = m - k.
    pub fn satisfies_code_condition(&self, k: u32, m: u32, s: u32) -> bool {
        self.marks.len() as u32 == s - 1
            && self
                .marks
                .iter()
                .map(|&(i, _)| (k - i) as u64)
                .sum::<u64>() as i64
                == m as i64 - k as i64
    }
}

/// Encodes a connected subhypergraph with boundary profile below a as
/// (root edge, marked cells).  The map is injective on each class
/// C_{m,s}(a; H).
pub fn emb_encode(h: &Hypergraph, sub_edge_ids: &[u32], a: &[f64]) -> Result<Encoding> {
    let k = h.k as usize;
    if a.len() != k {
        return Err(Error::invalid(format!(
            "a must have length k = {k}, got {}",
            a.len()
        )));
    }
    if sub_edge_ids.is_empty() {
        return Err(Error::invalid("subhypergraph must contain an edge"));
    }
    let comps = components(h, sub_edge_ids)?;
    if comps.len() != 1 {
        return Err(Error::invalid(format!(
            "subhypergraph must be connected, found {} components",
            comps.len()
        )));
    }
    let rec = &comps[0];
    let suffix = h.boundary_suffix(&rec.vertices)?;
    for (i, &cnt) in suffix.iter().enumerate() {
        if cnt as f64 > a[i] {
            return Err(Error::invalid(format!(
                "boundary count A_(>= {}) = {cnt} exceeds a_{} = {}",
                i + 1,
                i + 1,
                a[i]
            )));
        }
    }

    let in_sub: std::collections::HashSet<u32> = rec.edge_ids.iter().copied().collect();
    let root = rec.edge_ids[0];
    let mut used = vec![false; h.edge_count() as usize];
    used[root as usize] = true;
    let mut w = vec![false; h.n_vertices as usize + 1];
    for &x in h.edge(root) {
        w[x as usize] = true;
    }
    // Row i holds the edges that met W in exactly i vertices at the round
    // they first did; rows are append-only.
    let mut sigma: Vec<Vec<u32>> = vec![Vec::new(); k + 1];
    let mut in_sigma: Vec<Vec<bool>> = vec![vec![false; h.edge_count() as usize]; k + 1];
    let mut marks = Vec::with_capacity(rec.edge_ids.len() - 1);
    for _ in 1..rec.edge_ids.len() {
        for (id, edge) in h.edges.iter().enumerate() {
            let cnt = edge.iter().filter(|&&x| w[x as usize]).count();
            if cnt >= 1 && !in_sigma[cnt][id] {
                in_sigma[cnt][id] = true;
                sigma[cnt].push(id as u32);
            }
        }
        let mut chosen: Option<(usize, usize)> = None;
        'select: for i in (1..=k).rev() {
            for j in (0..sigma[i].len()).rev() {
                let id = sigma[i][j];
                if in_sub.contains(&id) && !used[id as usize] {
                    chosen = Some((i, j));
                    break 'select;
                }
            }
        }
        let (i, j) = chosen.ok_or_else(|| {
            Error::invalid("no eligible edge found; subhypergraph is not connected")
        })?;
        if (j + 1) as f64 > a[i - 1] {
            return Err(Error::domain(format!(
                "mark ({i}, {}) falls outside the grid row of length {}",
                j + 1,
                a[i - 1]
            )));
        }
        let id = sigma[i][j];
        used[id as usize] = true;
        let before = w.iter().filter(|&&b| b).count();
        for &x in h.edge(id) {
            w[x as usize] = true;
        }
        let after = w.iter().filter(|&&b| b).count();
        debug_assert_eq!(after - before, k - i);
        marks.push((i as u32, (j + 1) as u32));
    }
    Ok(Encoding { root, marks })
}

fn next_combination(idx: &mut [usize], total: usize) -> bool {
    let s = idx.len();
    let mut pos = s;
    while pos > 0 {
        pos -= 1;
        if idx[pos] != total - s + pos {
            idx[pos] += 1;
            for q in pos + 1..s {
                idx[q] = idx[q - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// All connected s-edge subhypergraphs, by exhaustive enumeration of
/// edge subsets.
pub fn enumerate_connected(h: &Hypergraph, s: u32) -> Result<Vec<ClusterRecord>> {
    if s == 0 {
        return Err(Error::invalid("s must be positive"));
    }
    let e = h.edge_count() as usize;
    if (s as usize) > e {
        return Ok(Vec::new());
    }
    let work = binomial_u128(e as u64, s as u64).unwrap_or(u128::MAX);
    if work > ENUM_COMBINATION_CAP {
        return Err(Error::CapExceeded {
            what: "edge-subset enumeration size",
            got: u64::MAX.min(work as u64),
            cap: ENUM_COMBINATION_CAP as u64,
        });
    }
    let mut idx: Vec<usize> = (0..s as usize).collect();
    let mut out = Vec::new();
    loop {
        let ids: Vec<u32> = idx.iter().map(|&i| i as u32).collect();
        let comps = components(h, &ids)?;
        if comps.len() == 1 {
            out.push(comps.into_iter().next().unwrap());
        }
        if !next_combination(&mut idx, e) {
            break;
        }
    }
    Ok(out)
}

/// The class C_{m,s}(a; H): connected, s edges, m vertices, and
/// A_(>= i) of the vertex union at most a_i for every i.
pub fn enumerate_clusters(h: &Hypergraph, m: u32, s: u32, a: &[f64]) -> Result<Vec<ClusterRecord>> {
    if a.len() != h.k as usize {
        return Err(Error::invalid(format!(
            "a must have length k = {}, got {}",
            h.k,
            a.len()
        )));
    }
    let mut out = Vec::new();
    for rec in enumerate_connected(h, s)? {
        if rec.m != m {
            continue;
        }
        let suffix = h.boundary_suffix(&rec.vertices)?;
        if suffix.iter().zip(a).all(|(&cnt, &ai)| cnt as f64 <= ai) {
            out.push(rec);
        }
    }
    Ok(out)
}

/// Generalized binomial coefficient, clamped to 0 when a < n - 1 (where
/// the product turns nonpositive and the counting bound is void).
fn genbinom(a: f64, n: u64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    if a < n as f64 - 1.0 {
        return 0.0;
    }
    let mut acc = 1.0;
    for t in 0..n {
        acc *= (a - t as f64) / (t + 1) as f64;
    }
    acc.max(0.0)
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ClusterBound {
    /// e(H) * sum over row-count compositions of prod genbinom(a_i, s_i).
    pub combinatorial: f64,
    /// mu (e^2 k^2 M / s)^{s-1} (p max_{i<k} (a_i/M)^{1/(k-i)})^x,
    /// bounding sum over m >= k + x of |C_{m,s}(a)| p^m; needs s >= 2.
    pub weighted: Option<f64>,
}

pub fn cluster_count_bound(
    k: u32,
    edge_count: u64,
    m: u64,
    s: u64,
    a: &[f64],
    x: f64,
    p: f64,
) -> Result<ClusterBound> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    if a.len() != k as usize {
        return Err(Error::invalid(format!(
            "a must have length k = {k}, got {}",
            a.len()
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("p must lie in [0, 1], got {p}")));
    }
    if !(x >= 0.0) {
        return Err(Error::domain(format!("x must be >= 0, got {x}")));
    }
    let compositions = binomial_u128(s.saturating_sub(1) + k as u64 - 1, k as u64 - 1)
        .unwrap_or(u128::MAX);
    if compositions > ENUM_COMBINATION_CAP {
        return Err(Error::CapExceeded {
            what: "composition enumeration size",
            got: u64::MAX.min(compositions as u64),
            cap: ENUM_COMBINATION_CAP as u64,
        });
    }

    let mut sum = KahanSum::new();
    if s >= 1 && m >= k as u64 {
        // Rows i = 1..=k; row i contributes (k - i) vertices per mark.
        fn walk(
            a: &[f64],
            k: u64,
            i: u64,
            rem_edges: u64,
            rem_verts: u64,
            acc: f64,
            sum: &mut KahanSum,
        ) {
            if i == k {
                // Last row adds no vertices: all remaining marks land here.
                if rem_verts == 0 {
                    let g = genbinom(a[(k - 1) as usize], rem_edges);
                    if g > 0.0 {
                        sum.add(acc * g);
                    }
                }
                return;
            }
            let step = k - i;
            let max_here = (rem_verts / step).min(rem_edges);
            for si in 0..=max_here {
                let g = genbinom(a[(i - 1) as usize], si);
                if g > 0.0 {
                    walk(
                        a,
                        k,
                        i + 1,
                        rem_edges - si,
                        rem_verts - si * step,
                        acc * g,
                        sum,
                    );
                } else if si > 0 {
                    break;
                }
            }
        }
        walk(a, k as u64, 1, s - 1, m - k as u64, 1.0, &mut sum);
    }
    let combinatorial = edge_count as f64 * sum.value();

    let weighted = if s >= 2 {
        let mu = edge_count as f64 * p.powi(k as i32);
        let big_m = (1..=k)
            .map(|i| a[(i - 1) as usize] * p.powi((k - i) as i32))
            .fold(f64::NEG_INFINITY, f64::max);
        if big_m <= 0.0 {
            Some(0.0)
        } else {
            let e2k2 = (std::f64::consts::E * k as f64).powi(2);
            let factor = (1..k)
                .filter(|&i| a[(i - 1) as usize] > 0.0)
                .map(|i| (a[(i - 1) as usize] / big_m).powf(1.0 / (k - i) as f64))
                .fold(0.0f64, f64::max)
                * p;
            Some(mu * (e2k2 * big_m / s as f64).powf(s as f64 - 1.0) * factor.powf(x))
        }
    } else {
        None
    };

    Ok(ClusterBound {
        combinatorial,
        weighted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{build_index, exact_moments};
    use std::sync::Arc;

    fn params(n: u32, k: u32, p: f64) -> ModelParams {
        exact_moments(Arc::new(build_index(n, k).unwrap()), p).unwrap()
    }

    fn ap6() -> Hypergraph {
        Hypergraph::from_index(&build_index(6, 3).unwrap())
    }

    #[test]
    fn components_split_and_merge() {
        let h = ap6();
        assert_eq!(h.edge_count(), 6);
        // Edges 0 = {1,2,3} and 5 = {2,4,6} share the vertex 2.
        let one = components(&h, &[0, 5]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].s, 2);
        assert_eq!(one[0].m, 5);
        assert_eq!(one[0].vertices, vec![1, 2, 3, 4, 6]);
        // Edges 0 = {1,2,3} and 3 = {4,5,6} are disjoint.
        let two = components(&h, &[0, 3]).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two[0].edge_ids, vec![0]);
        assert_eq!(two[1].edge_ids, vec![3]);
        assert!(components(&h, &[0, 0]).is_err());
        assert!(components(&h, &[9]).is_err());
    }

    #[test]
    fn classification_small_and_heavy() {
        let pm = params(30, 3, 0.2);
        let h = Hypergraph::from_index(&pm.index);
        let single = components(&h, &[0]).unwrap().remove(0);
        let class = classify_cluster(&pm, &single, 1.0, 0.1, DEFAULT_K_CONST).unwrap();
        assert_eq!(class.kind, ClusterKind::Small);
        assert!(class.size_ok && class.density_ok);

        // With a tiny epsilon the density condition fails and the big
        // psi-to-mu ratio makes the same cluster heavy.
        let heavy = classify_cluster(&pm, &single, 1.0, 0.01, DEFAULT_K_CONST).unwrap();
        assert_eq!(heavy.kind, ClusterKind::Heavy);
        assert!(heavy.ratio > 1.0);
        // Weight agrees with the closed form ceil(log_xi ratio).
        let xi = cluster_xi(0.01).unwrap();
        let expect = (heavy.ratio.ln() / xi.ln()).ceil().max(1.0);
        assert!((heavy.weight as f64 - expect).abs() <= 1.0);
        assert!(xi.powi(heavy.weight as i32) >= heavy.ratio * (1.0 - 1e-9));
        if heavy.weight > 1 {
            assert!(xi.powi(heavy.weight as i32 - 1) < heavy.ratio * (1.0 + 1e-9));
        }
        // p >= 1/e is outside the classification regime.
        let dense = params(30, 3, 0.5);
        let rec = components(&Hypergraph::from_index(&dense.index), &[0])
            .unwrap()
            .remove(0);
        assert!(classify_cluster(&dense, &rec, 1.0, 0.1, DEFAULT_K_CONST).is_err());
    }

    #[test]
    fn s0_matches_formula() {
        let v = s0(0.01, 0.1).unwrap();
        let l: f64 = 100.0f64.ln();
        assert!((v - (0.1 * l / l.ln()).powi(2)).abs() < 1e-12);
        assert!(s0(0.5, 0.1).is_err());
    }

    #[test]
    fn factorial_moment_example() {
        // N = 5, k = 3, p = 1/2: the 6 progression pairs have unions of
        // size 4 (four pairs) and 5 (two pairs), so E[(X)_2] =
        // 2 (4/16 + 2/32) = 5/8.
        let pm = params(5, 3, 0.5);
        let v = factorial_moment_exact(&pm, 2).unwrap();
        assert!((v - 0.625).abs() < 1e-12);
        let via_mask = factorial_moment_filtered(&pm, 2, None).unwrap();
        assert!((v - via_mask).abs() < 1e-12);
        assert_eq!(factorial_moment_exact(&pm, 0).unwrap(), 1.0);
        // t = 1 reduces to the mean.
        let mean = factorial_moment_exact(&pm, 1).unwrap();
        assert!((mean - pm.mu).abs() < 1e-12);
        // More subsets than progressions: zero.
        assert_eq!(factorial_moment_exact(&params(3, 3, 0.5), 2).unwrap(), 0.0);
    }

    #[test]
    fn plain_moments_match_variance() {
        let pm = params(10, 3, 0.3);
        let m1 = plain_moment_filtered(&pm, 1, None).unwrap();
        let m2 = plain_moment_filtered(&pm, 2, None).unwrap();
        assert!((m1 - pm.mu).abs() < 1e-12);
        assert!((m2 - (pm.sigma2 + pm.mu * pm.mu)).abs() < 1e-10);
    }

    #[test]
    fn zero_seed_filter_kills_everything() {
        // With u = 0 the empty set is already a seed, so Z = 0 always.
        let pm = params(10, 3, 0.3);
        let filter = SeedFilter::Cap { u: 0.0, max_size: 30 };
        let v = plain_moment_filtered(&pm, 2, Some(&filter)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn filtered_moment_bound_spot() {
        let pm = params(10, 3, 0.3);
        let m = 2u32;
        let u = 0.5;
        let filter = SeedFilter::Cap {
            u,
            max_size: 3 * m,
        };
        let lhs = plain_moment_filtered(&pm, m, Some(&filter)).unwrap();
        let rhs = (pm.mu + u).powi(m as i32);
        assert!(lhs <= rhs + 1e-12, "{lhs} vs {rhs}");
        // The family filter is accepted too.
        let fam = SeedFilter::Family { u: 0.5, c: 0.01 };
        let lhs2 = plain_moment_filtered(&pm, m, Some(&fam)).unwrap();
        assert!(lhs2 <= rhs + 1e-12);
    }

    #[test]
    fn emb_single_edge_and_pair() {
        let h = ap6();
        let a = vec![f64::INFINITY; 3];
        let single = emb_encode(&h, &[2], &a).unwrap();
        assert_eq!(single.root, 2);
        assert!(single.marks.is_empty());
        assert!(single.satisfies_code_condition(3, 3, 1));
        // {1,2,3} with {1,3,5}: after the root, {1,3,5} sits second in
        // the exactly-2 row (after {2,3,4}).
        let pair = emb_encode(&h, &[0, 4], &a).unwrap();
        assert_eq!(pair.root, 0);
        assert_eq!(pair.marks, vec![(2, 2)]);
        assert!(pair.satisfies_code_condition(3, 4, 2));
        // Disconnected input is rejected.
        assert!(emb_encode(&h, &[0, 3], &a).is_err());
    }

    #[test]
    fn emb_injective_on_pairs() {
        let h = ap6();
        let a = vec![f64::INFINITY; 3];
        let mut codes = std::collections::HashSet::new();
        for rec in enumerate_connected(&h, 2).unwrap() {
            let enc = emb_encode(&h, &rec.edge_ids, &a).unwrap();
            assert!(enc.satisfies_code_condition(3, rec.m, rec.s));
            assert!(
                codes.insert((enc.root, enc.marks.clone())),
                "duplicate code for {:?}",
                rec.edge_ids
            );
        }
        assert!(!codes.is_empty());
    }

    #[test]
    fn enumeration_respects_theorem_bound() {
        let h = Hypergraph::from_index(&build_index(10, 3).unwrap());
        let e = h.edge_count() as u64;
        for s in [2u32, 3] {
            let all = enumerate_connected(&h, s).unwrap();
            // Componentwise maxima make every connected s-subset eligible.
            let mut a = vec![0.0f64; 3];
            for rec in &all {
                let suffix = h.boundary_suffix(&rec.vertices).unwrap();
                for i in 0..3 {
                    a[i] = a[i].max(suffix[i] as f64);
                }
            }
            let mut by_m: std::collections::BTreeMap<u32, u64> = std::collections::BTreeMap::new();
            for rec in &all {
                *by_m.entry(rec.m).or_default() += 1;
            }
            for (&m, &count) in &by_m {
                let bound =
                    cluster_count_bound(3, e, m as u64, s as u64, &a, 0.0, 0.1).unwrap();
                assert!(
                    count as f64 <= bound.combinatorial,
                    "s {s} m {m}: {count} vs {}",
                    bound.combinatorial
                );
            }
        }
    }

    #[test]
    fn count_bound_edges() {
        let a = vec![10.0, 5.0, 2.0];
        // s = 1 forces m = k and an empty mark set.
        let b = cluster_count_bound(3, 7, 3, 1, &a, 0.0, 0.2).unwrap();
        assert_eq!(b.combinatorial, 7.0);
        assert!(b.weighted.is_none());
        let none = cluster_count_bound(3, 7, 5, 1, &a, 0.0, 0.2).unwrap();
        assert_eq!(none.combinatorial, 0.0);
        // m - k = 3 is unreachable with one extra edge (max step k - 1 = 2).
        let gap = cluster_count_bound(3, 7, 6, 2, &a, 0.0, 0.2).unwrap();
        assert_eq!(gap.combinatorial, 0.0);
        // Nonpositive a vector: the weighted bound collapses to zero.
        let zero = cluster_count_bound(3, 7, 4, 2, &[0.0, 0.0, 0.0], 0.0, 0.2).unwrap();
        assert_eq!(zero.weighted, Some(0.0));
    }

    #[test]
    fn census_aggregates() {
        let pm = params(16, 3, 0.2);
        let r = SubsetState::from_members(&pm.index, &[1, 2, 3, 4, 5]).unwrap();
        let rows = cluster_census(&pm, &r, 1.0, 0.1, DEFAULT_K_CONST).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].s, 4);
        assert_eq!(rows[0].m, 5);
        assert_eq!(rows[0].count, 1);
        assert!(rows[0].min_psi <= rows[0].max_psi);
        // Empty R: no clusters.
        let empty = SubsetState::new(16);
        assert!(cluster_census(&pm, &empty, 1.0, 0.1, DEFAULT_K_CONST)
            .unwrap()
            .is_empty());
    }
}
