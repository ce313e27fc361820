//! The k-term arithmetic progression hypergraph on [N] and its exact
//! first and second moments under the p-biased product measure.
//!
//! A progression is a set {a, a+b, ..., a+(k-1)b} with a >= 1, b >= 1 and
//! a+(k-1)b <= N.  Writing X = X(R) for the number of progressions fully
//! contained in a random R (each element kept independently with
//! probability p), the mean is mu = |AP| p^k and the variance decomposes
//! over ordered pairs of progressions by intersection size:
//!
//!   Var X = sum_{r=1}^{k} P_r (p^{2k-r} - p^{2k}),
//!
//! where P_r counts ordered pairs (B, B') with |B ∩ B'| = r (the diagonal
//! B = B' is the whole r = k class).  The proxy V = sum_i A_1(i)^2 p^{2k-1}
//! tracks Var X in the sparse regime; both are computed exactly here.
//!
//! For k = 3 the pair counts have closed forms and the whole second-moment
//! table costs O(N), which is what makes the phase-diagram scans at
//! N = 10^8 feasible.  For k >= 4 pairs are enumerated from the index.

use crate::error::{Error, Result};
use std::sync::Arc;

/// Probabilities below this are rejected: p^{2k-r} underflows and every
/// downstream tilt divides by powers of p.
pub const MIN_PROBABILITY: f64 = 1e-15;

/// Caps the number of progressions an in-memory index may hold.
pub const INDEX_CAP: u64 = 50_000_000;

/// Caps the pair-enumeration work (sum over elements of degree^2) for the
/// generic second-moment route.
pub const PAIR_WORK_CAP: u64 = 2_000_000_000;

/// Number of k-term progressions in [n]: sum over differences b of the
/// number of admissible starts max(0, n - (k-1) b).
pub fn closed_form_count(n: u64, k: u32) -> u128 {
    if k < 2 || n == 0 {
        return 0;
    }
    let step = (k - 1) as u128;
    let n = n as u128;
    if n <= step {
        return 0;
    }
    // b ranges over 1..=B with B = floor((n-1)/(k-1)).
    let b = (n - 1) / step;
    b * n - step * b * (b + 1) / 2
}

/// Number of progressions through element i (1-based), counting one term
/// per position j in {0, .., k-1} that i can occupy: the difference b must
/// satisfy b*j <= i-1 and b*(k-1-j) <= n-i.
pub fn degree_closed_form(n: u64, k: u32, i: u64) -> u128 {
    if k < 2 || i == 0 || i > n {
        return 0;
    }
    let mut total: u128 = 0;
    for j in 0..k as u64 {
        let left = if j == 0 { u64::MAX } else { (i - 1) / j };
        let rev = (k as u64 - 1) - j;
        let right = if rev == 0 { u64::MAX } else { (n - i) / rev };
        total += left.min(right) as u128;
    }
    total
}

/// Number of k-term progressions inside an interval of m consecutive
/// integers.  Progression counts are translation invariant, so this is
/// `closed_form_count(m, k)`.
pub fn interval_ap_count(k: u32, m: u64) -> u128 {
    closed_form_count(m, k)
}

/// In-memory index of all k-term progressions in [n].
///
/// Progressions are stored in (difference, start) order and referred to by
/// their position in that order everywhere (cluster encodings depend on
/// this being a fixed total order).  `incidence[i]` lists, in increasing
/// order, the ids of progressions through element i+1.
#[derive(Debug, Clone)]
pub struct ProgressionIndex {
    n: u32,
    k: u32,
    progressions: Vec<Vec<u32>>,
    incidence: Vec<Vec<u32>>,
}

impl ProgressionIndex {
    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn count(&self) -> u64 {
        self.progressions.len() as u64
    }

    pub fn progressions(&self) -> &[Vec<u32>] {
        &self.progressions
    }

    pub fn progression(&self, id: u32) -> &[u32] {
        &self.progressions[id as usize]
    }

    /// Ids of progressions through element i (1-based), increasing.
    pub fn incidence(&self, i: u32) -> &[u32] {
        &self.incidence[(i - 1) as usize]
    }

    /// A_1(i): number of progressions through i.
    pub fn degree(&self, i: u32) -> u64 {
        self.incidence[(i - 1) as usize].len() as u64
    }
}

/// Builds the index for [n] with k-term progressions, in (b, a) order.
pub fn build_index(n: u32, k: u32) -> Result<ProgressionIndex> {
    if k < 3 {
        return Err(Error::invalid(format!("k must be at least 3, got {k}")));
    }
    if k > 64 {
        return Err(Error::invalid(format!("k must be at most 64, got {k}")));
    }
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let total = closed_form_count(n as u64, k);
    if total > INDEX_CAP as u128 {
        return Err(Error::CapExceeded {
            what: "progression count",
            got: u64::MAX.min(total as u64),
            cap: INDEX_CAP,
        });
    }

    let mut progressions = Vec::with_capacity(total as usize);
    let mut incidence = vec![Vec::new(); n as usize];
    let step = (k - 1) as u64;
    let mut b = 1u64;
    while 1 + step * b <= n as u64 {
        let max_a = n as u64 - step * b;
        for a in 1..=max_a {
            let id = progressions.len() as u32;
            let prog: Vec<u32> = (0..k as u64).map(|j| (a + j * b) as u32).collect();
            for &x in &prog {
                incidence[(x - 1) as usize].push(id);
            }
            progressions.push(prog);
        }
        b += 1;
    }
    debug_assert_eq!(progressions.len() as u128, total);

    Ok(ProgressionIndex {
        n,
        k,
        progressions,
        incidence,
    })
}

/// A subset of [n] with membership bits and an incrementally maintained
/// count of fully contained progressions.
#[derive(Debug, Clone)]
pub struct SubsetState {
    n: u32,
    words: Vec<u64>,
    len: u32,
    ap_count: u64,
}

impl SubsetState {
    pub fn new(n: u32) -> Self {
        SubsetState {
            n,
            words: vec![0u64; (n as usize + 63) / 64],
            len: 0,
            ap_count: 0,
        }
    }

    pub fn from_members(index: &ProgressionIndex, members: &[u32]) -> Result<Self> {
        let mut s = SubsetState::new(index.n());
        for &i in members {
            if i == 0 || i > index.n() {
                return Err(Error::invalid(format!(
                    "element {i} out of range 1..={}",
                    index.n()
                )));
            }
            s.set_bit(i);
        }
        s.ap_count = count_contained(index, &s);
        Ok(s)
    }

    fn set_bit(&mut self, i: u32) {
        let idx = (i - 1) as usize;
        let w = idx / 64;
        let bit = 1u64 << (idx % 64);
        if self.words[w] & bit == 0 {
            self.words[w] |= bit;
            self.len += 1;
        }
    }

    pub fn contains(&self, i: u32) -> bool {
        let idx = (i - 1) as usize;
        self.words[idx / 64] & (1u64 << (idx % 64)) != 0
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn ap_count(&self) -> u64 {
        self.ap_count
    }

    pub fn members(&self) -> Vec<u32> {
        (1..=self.n).filter(|&i| self.contains(i)).collect()
    }

    /// Inserts i, updating the contained-progression count by scanning the
    /// progressions through i.  Returns false if i was already present.
    pub fn insert(&mut self, index: &ProgressionIndex, i: u32) -> bool {
        if self.contains(i) {
            return false;
        }
        self.set_bit(i);
        for &id in index.incidence(i) {
            if index.progression(id).iter().all(|&x| self.contains(x)) {
                self.ap_count += 1;
            }
        }
        true
    }

    /// Removes i, updating the count.  Returns false if i was absent.
    pub fn remove(&mut self, index: &ProgressionIndex, i: u32) -> bool {
        if !self.contains(i) {
            return false;
        }
        for &id in index.incidence(i) {
            if index.progression(id).iter().all(|&x| self.contains(x)) {
                self.ap_count -= 1;
            }
        }
        let idx = (i - 1) as usize;
        self.words[idx / 64] &= !(1u64 << (idx % 64));
        self.len -= 1;
        true
    }
}

/// A_k(R): progressions fully contained in R, counted by direct scan.
pub fn count_contained(index: &ProgressionIndex, r: &SubsetState) -> u64 {
    index
        .progressions()
        .iter()
        .filter(|prog| prog.iter().all(|&x| r.contains(x)))
        .count() as u64
}

/// Intersection profile of a set U: entry r-1 holds A_r(U), the number of
/// progressions meeting U in exactly r elements, for r = 1..=k.
///
/// Invariant: sum_r r * A_r(U) = sum_{i in U} A_1(i).
pub fn intersection_profile(index: &ProgressionIndex, members: &[u32]) -> Result<Vec<u64>> {
    let state = SubsetState::from_members(index, members)?;
    let mut hits = vec![0u8; index.count() as usize];
    for i in 1..=index.n() {
        if state.contains(i) {
            for &id in index.incidence(i) {
                hits[id as usize] += 1;
            }
        }
    }
    let mut profile = vec![0u64; index.k() as usize];
    for &h in &hits {
        if h > 0 {
            profile[(h - 1) as usize] += 1;
        }
    }
    Ok(profile)
}

/// Link counts: L_i = number of progressions B through i with all of
/// B \ {i} inside R.  Elements already in R still have well-defined links;
/// only the k-1 other positions are required to lie in R.
pub fn link_counts(index: &ProgressionIndex, r: &SubsetState) -> Vec<u64> {
    let mut links = vec![0u64; index.n() as usize];
    for prog in index.progressions() {
        let mut missing = 0u32;
        let mut missing_elem = 0u32;
        for &x in prog {
            if !r.contains(x) {
                missing += 1;
                if missing > 1 {
                    break;
                }
                missing_elem = x;
            }
        }
        match missing {
            0 => {
                for &x in prog {
                    links[(x - 1) as usize] += 1;
                }
            }
            1 => links[(missing_elem - 1) as usize] += 1,
            _ => {}
        }
    }
    links
}

/// Exact second-moment table for fixed (n, k): the ordered-pair counts
/// P_1..P_k, the progression count, and S2 = sum_i A_1(i)^2.
///
/// All counts are u128: S2 grows like N^3 for k = 3 and overflows u64
/// well before N = 10^8.
#[derive(Debug, Clone)]
pub struct SecondMomentTable {
    pub n: u64,
    pub k: u32,
    pub ap_count: u128,
    /// pair_counts[r-1] = P_r for r = 1..=k (ordered pairs; P_k is the diagonal).
    pub pair_counts: Vec<u128>,
    /// S2 = sum_i A_1(i)^2 = sum_r r * P_r.
    pub s2: u128,
}

impl SecondMomentTable {
    /// Moments at a given p.  sigma2 is the exact variance, v the proxy
    /// S2 p^{2k-1}.
    pub fn moments_at(&self, p: f64) -> Result<Moments> {
        check_probability(p)?;
        let k = self.k;
        let mu = self.ap_count as f64 * p.powi(k as i32);
        let p2k = p.powi(2 * k as i32);
        let mut sigma2 = 0.0f64;
        for r in 1..=k {
            let pr = self.pair_counts[(r - 1) as usize] as f64;
            sigma2 += pr * (p.powi((2 * k - r) as i32) - p2k);
        }
        if sigma2 < 0.0 {
            sigma2 = 0.0;
        }
        let v = self.s2 as f64 * p.powi((2 * k - 1) as i32);
        Ok(Moments {
            n: self.n,
            k,
            p,
            ap_count: self.ap_count as f64,
            mu,
            sigma2,
            v,
        })
    }
}

fn check_probability(p: f64) -> Result<()> {
    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("p must lie in [0, 1], got {p}")));
    }
    if p > 0.0 && p < MIN_PROBABILITY {
        return Err(Error::domain(format!(
            "p = {p} is below the supported minimum {MIN_PROBABILITY}"
        )));
    }
    Ok(())
}

/// O(n) second-moment table for k = 3.
///
/// For a pair of distinct 3-term progressions sharing r elements, classify
/// by the gap d between the two smallest shared elements when r = 2.  With
/// c(y, y+d) = [y + 2d <= n] + [y >= d + 1] + [d even], the number of
/// progressions through both y and y+d, the exactly-two-shared ordered
/// pairs are sum_{y,d} c(c-1) minus the diagonal contributions, which
/// evaluates per difference d to
///   d odd:  2 * max(0, n - 3d)
///   d even: 6 * max(0, n - 3d) + 4 * max(0, min(d, n - 2d))
/// and P_1 follows from S2 = P_1 + 2 P_2 + 3 P_3.
fn second_moment_table_k3(n: u64) -> SecondMomentTable {
    let ap_count = closed_form_count(n, 3);
    let mut s2: u128 = 0;
    for i in 1..=n {
        let d = degree_closed_form(n, 3, i);
        s2 += d * d;
    }
    let mut p2: u128 = 0;
    let mut d = 1u64;
    while 2 * d < n {
        let n2 = n.saturating_sub(3 * d) as u128;
        if d % 2 == 1 {
            p2 += 2 * n2;
        } else {
            let side = d.min(n.saturating_sub(2 * d)) as u128;
            p2 += 6 * n2 + 4 * side;
        }
        d += 1;
    }
    let p3 = ap_count;
    let p1 = s2 - 2 * p2 - 3 * p3;
    SecondMomentTable {
        n,
        k: 3,
        ap_count,
        pair_counts: vec![p1, p2, p3],
        s2,
    }
}

/// Pair-enumeration second-moment table for general k.  Each unordered
/// intersecting pair is visited once (at its smallest shared element) and
/// contributes 2 to the ordered count.
fn second_moment_table_enumerated(index: &ProgressionIndex) -> Result<SecondMomentTable> {
    let n = index.n() as u64;
    let k = index.k();
    let mut s2: u128 = 0;
    let mut work: u128 = 0;
    for i in 1..=index.n() {
        let d = index.degree(i) as u128;
        s2 += d * d;
        work += d * d;
    }
    if work > PAIR_WORK_CAP as u128 {
        return Err(Error::CapExceeded {
            what: "pair enumeration work (sum of squared degrees)",
            got: u64::MAX.min(work as u64),
            cap: PAIR_WORK_CAP,
        });
    }

    let mut pair_counts = vec![0u128; k as usize];
    for i in 1..=index.n() {
        let ids = index.incidence(i);
        for (a_pos, &id_a) in ids.iter().enumerate() {
            let prog_a = index.progression(id_a);
            for &id_b in &ids[a_pos + 1..] {
                let prog_b = index.progression(id_b);
                // Sorted merge: intersection size and smallest shared element.
                let (mut ia, mut ib) = (0usize, 0usize);
                let mut inter = 0u32;
                let mut first_shared = 0u32;
                while ia < prog_a.len() && ib < prog_b.len() {
                    match prog_a[ia].cmp(&prog_b[ib]) {
                        std::cmp::Ordering::Less => ia += 1,
                        std::cmp::Ordering::Greater => ib += 1,
                        std::cmp::Ordering::Equal => {
                            if inter == 0 {
                                first_shared = prog_a[ia];
                            }
                            inter += 1;
                            ia += 1;
                            ib += 1;
                        }
                    }
                }
                if first_shared == i {
                    pair_counts[(inter - 1) as usize] += 2;
                }
            }
        }
    }
    pair_counts[(k - 1) as usize] += index.count() as u128;

    Ok(SecondMomentTable {
        n,
        k,
        ap_count: index.count() as u128,
        pair_counts,
        s2,
    })
}

/// Second-moment table without materializing an index: closed form for
/// k = 3 (O(n), valid up to n = 10^8 and beyond), pair enumeration behind
/// a work cap otherwise.
pub fn second_moment_table(n: u64, k: u32) -> Result<SecondMomentTable> {
    if k < 3 {
        return Err(Error::invalid(format!("k must be at least 3, got {k}")));
    }
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if k == 3 {
        return Ok(second_moment_table_k3(n));
    }
    if n > u32::MAX as u64 {
        return Err(Error::CapExceeded {
            what: "n for enumerated second moments",
            got: n,
            cap: u32::MAX as u64,
        });
    }
    let index = build_index(n as u32, k)?;
    second_moment_table_enumerated(&index)
}

/// Plain-value moments, detached from any index, for rate and phase work
/// at scales where no index can exist.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Moments {
    pub n: u64,
    pub k: u32,
    pub p: f64,
    pub ap_count: f64,
    pub mu: f64,
    pub sigma2: f64,
    pub v: f64,
}

/// A built index together with p and the exact moments at that p.
/// Immutable after construction; shared via Arc.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub index: Arc<ProgressionIndex>,
    pub p: f64,
    pub mu: f64,
    pub sigma2: f64,
    pub v: f64,
}

impl ModelParams {
    pub fn moments(&self) -> Moments {
        Moments {
            n: self.index.n() as u64,
            k: self.index.k(),
            p: self.p,
            ap_count: self.index.count() as f64,
            mu: self.mu,
            sigma2: self.sigma2,
            v: self.v,
        }
    }
}

/// Exact mean, variance, and variance proxy for the progression count at
/// bias p over an already built index.
pub fn exact_moments(index: Arc<ProgressionIndex>, p: f64) -> Result<ModelParams> {
    check_probability(p)?;
    let table = if index.k() == 3 {
        second_moment_table_k3(index.n() as u64)
    } else {
        second_moment_table_enumerated(&index)?
    };
    let m = table.moments_at(p)?;
    Ok(ModelParams {
        index,
        p,
        mu: m.mu,
        sigma2: m.sigma2,
        v: m.v,
    })
}

/// psi(U) = sum_r A_r(U) (p^{k-r} - p^k): the expected surplus of
/// progressions when U is forced into the random set,
/// E_U[X] - E[X].  Monotone and superadditive over disjoint unions.
pub fn psi(params: &ModelParams, members: &[u32]) -> Result<f64> {
    let profile = intersection_profile(&params.index, members)?;
    let k = params.index.k();
    let p = params.p;
    let pk = p.powi(k as i32);
    let mut total = 0.0f64;
    for r in 1..=k {
        let a_r = profile[(r - 1) as usize] as f64;
        total += a_r * (p.powi((k - r) as i32) - pk);
    }
    Ok(total)
}
