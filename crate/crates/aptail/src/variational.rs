//! Variational problems behind the localised upper-tail regime.
//!
//! The discrete optimization Psi*(t) asks for the fewest elements whose
//! induced set contains at least t full progressions; Psi(t) asks for the
//! fewest elements U with expected surplus psi(U) >= t.  Intervals solve
//! the first problem exactly among sets of a given size, which gives a
//! closed-form "bounded" mode; the "exact" mode is a lemma-free branch and
//! bound over all subsets and is what the bounded mode is checked against.
//!
//! Cores are near-minimizers that are locally robust: every element keeps
//! a guaranteed share of the r-fold intersections.  `extract_core` peels a
//! set down a maximal chain against a weight schedule, `is_core` certifies
//! the two core conditions, and `seed_to_core` runs the full pipeline from
//! a seed through density selection, weighted peeling, and certification.

use crate::error::{Error, Result};
use crate::index::{
    closed_form_count, interval_ap_count, intersection_profile, psi, ModelParams,
    ProgressionIndex, SubsetState,
};

/// Exact-search caps.  Subset searches are exponential in n; the caps keep
/// the exact modes inside interactive budgets.
pub const EXACT_SEARCH_N_CAP: u32 = 24;
pub const SEED_TO_CORE_SIZE_CAP: usize = 20;
pub const INNER_MAX_SIZE_CAP: usize = 20;
pub const INNER_MAX_WORK_CAP: u64 = 200_000_000;

/// Weight profile for core chains: beta(x) = 1 / (2 - log x)^2 on (0, 1].
/// Increasing, with integral of beta(x)/x over (0, 1] exactly 1/2.
pub fn beta(x: f64) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 || x > 1.0 {
        return Err(Error::domain(format!("beta requires 0 < x <= 1, got {x}")));
    }
    let d = 2.0 - x.ln();
    Ok(1.0 / (d * d))
}

/// Smallest m such that an interval of length m holds at least t
/// progressions, or None if even [n] does not.  This equals Psi*(t) when
/// intervals are optimal, which holds for every (k, m); the exact searcher
/// below is the independent check of that statement.
pub fn psi_star_bounded(n: u64, k: u32, t: f64) -> Result<Option<u64>> {
    if k < 3 {
        return Err(Error::invalid(format!("k must be at least 3, got {k}")));
    }
    if !t.is_finite() {
        return Err(Error::domain(format!("t must be finite, got {t}")));
    }
    if t <= 0.0 {
        return Ok(Some(0));
    }
    let need = t.ceil() as u128;
    if need > closed_form_count(n, k) {
        return Ok(None);
    }
    let (mut lo, mut hi) = (k as u64, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if interval_ap_count(k, mid) >= need {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(Some(lo))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsiStarMode {
    Exact,
    Bounded,
}

/// Result of a minimum-size search.  `size` None encodes infinity (the
/// target is unreachable inside [n]); the witness, when present, is the
/// lexicographically least minimizer.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MinSetResult {
    pub size: Option<u64>,
    pub witness: Option<Vec<u32>>,
}

/// Psi*(t): fewest elements containing at least t progressions.
pub fn psi_star(index: &ProgressionIndex, t: f64, mode: PsiStarMode) -> Result<MinSetResult> {
    if !t.is_finite() {
        return Err(Error::domain(format!("t must be finite, got {t}")));
    }
    if t <= 0.0 {
        return Ok(MinSetResult {
            size: Some(0),
            witness: Some(Vec::new()),
        });
    }
    let need = t.ceil() as u64;
    if need as u128 > index.count() as u128 {
        return Ok(MinSetResult {
            size: None,
            witness: None,
        });
    }
    match mode {
        PsiStarMode::Bounded => {
            let m = psi_star_bounded(index.n() as u64, index.k(), t)?
                .expect("reachability checked above");
            Ok(MinSetResult {
                size: Some(m),
                witness: Some((1..=m as u32).collect()),
            })
        }
        PsiStarMode::Exact => psi_star_exact(index, need),
    }
}

/// Branch and bound over subsets, sizes ascending, lexicographic within a
/// size.  Admissible pruning only: a candidate set's count plus the top
/// degrees of the remaining suffix bounds anything reachable from it.
fn psi_star_exact(index: &ProgressionIndex, need: u64) -> Result<MinSetResult> {
    let n = index.n();
    if n > EXACT_SEARCH_N_CAP {
        return Err(Error::CapExceeded {
            what: "n for exact minimum-set search",
            got: n as u64,
            cap: EXACT_SEARCH_N_CAP as u64,
        });
    }
    // suffix_top[s][r] = sum of the r largest degrees among elements s..=n.
    let mut suffix_top: Vec<Vec<u64>> = Vec::with_capacity(n as usize + 2);
    for s in 1..=n + 1 {
        let mut degs: Vec<u64> = (s..=n).map(|i| index.degree(i)).collect();
        degs.sort_unstable_by(|a, b| b.cmp(a));
        let mut prefix = vec![0u64];
        for d in degs {
            prefix.push(prefix.last().unwrap() + d);
        }
        suffix_top.push(prefix);
    }
    let suffix_top = &suffix_top;

    // Smallest conceivable size: t progressions need C(m, 2) >= t pairs of
    // smallest-two elements, and at least k elements.
    let mut m_low = index.k() as u64;
    while m_low * (m_low - 1) / 2 < need {
        m_low += 1;
    }

    struct Ctx<'a> {
        index: &'a ProgressionIndex,
        need: u64,
        size: u64,
        state: SubsetState,
        chosen: Vec<u32>,
    }

    fn dfs(ctx: &mut Ctx<'_>, start: u32, suffix_top: &[Vec<u64>]) -> bool {
        if ctx.chosen.len() as u64 == ctx.size {
            return ctx.state.ap_count() >= ctx.need;
        }
        let remaining = ctx.size - ctx.chosen.len() as u64;
        let n = ctx.index.n();
        let mut e = start;
        while (n as u64 + 1).saturating_sub(e as u64) >= remaining {
            // Bound: each added element contributes at most its degree.
            let tops = &suffix_top[(e - 1) as usize];
            let cap = tops[(remaining as usize).min(tops.len() - 1)];
            if ctx.state.ap_count() + cap < ctx.need {
                return false;
            }
            ctx.state.insert(ctx.index, e);
            ctx.chosen.push(e);
            if dfs(ctx, e + 1, suffix_top) {
                return true;
            }
            ctx.chosen.pop();
            ctx.state.remove(ctx.index, e);
            e += 1;
        }
        false
    }

    let upper = psi_star_bounded(n as u64, index.k(), need as f64)?
        .expect("reachability checked by caller");
    for size in m_low..=upper {
        let mut ctx = Ctx {
            index,
            need,
            size,
            state: SubsetState::new(n),
            chosen: Vec::new(),
        };
        if dfs(&mut ctx, 1, suffix_top) {
            return Ok(MinSetResult {
                size: Some(size),
                witness: Some(ctx.chosen),
            });
        }
    }
    // The interval of length `upper` qualifies, so the loop cannot fail.
    unreachable!("exact search must succeed at the interval size");
}

/// Query for seed searches: threshold t plus the constants of the
/// small-seed family constraints.
#[derive(Debug, Clone, Copy)]
pub struct SeedQuery {
    pub t: f64,
    pub c: f64,
    pub epsilon: f64,
}

impl SeedQuery {
    pub fn new(t: f64) -> Self {
        SeedQuery {
            t,
            c: 1.0,
            epsilon: 0.1,
        }
    }
}

/// Psi(t): fewest elements U with psi(U) >= t, exact search.  Sizes
/// ascend, candidates extend lexicographically, and a branch dies when
/// even adopting the whole remaining suffix cannot reach t (psi is
/// monotone, so that is an upper bound for every extension).
pub fn min_seed(params: &ModelParams, query: &SeedQuery) -> Result<MinSetResult> {
    let index = &*params.index;
    let n = index.n();
    if n > EXACT_SEARCH_N_CAP {
        return Err(Error::CapExceeded {
            what: "n for exact minimum-seed search",
            got: n as u64,
            cap: EXACT_SEARCH_N_CAP as u64,
        });
    }
    let t = query.t;
    if !t.is_finite() {
        return Err(Error::domain(format!("t must be finite, got {t}")));
    }
    if t <= 0.0 {
        return Ok(MinSetResult {
            size: Some(0),
            witness: Some(Vec::new()),
        });
    }
    let full: Vec<u32> = (1..=n).collect();
    if psi(params, &full)? < t {
        return Ok(MinSetResult {
            size: None,
            witness: None,
        });
    }

    // hits[id] = |B_id cap (chosen + forced suffix)| maintained incrementally.
    struct Ctx<'a> {
        params: &'a ModelParams,
        t: f64,
        size: u32,
        hits: Vec<u8>,
        chosen: Vec<u32>,
    }

    fn psi_of_hits(params: &ModelParams, hits: &[u8]) -> f64 {
        let k = params.index.k();
        let p = params.p;
        let pk = p.powi(k as i32);
        let mut total = 0.0;
        for &h in hits {
            if h > 0 {
                total += p.powi((k - h as u32) as i32) - pk;
            }
        }
        total
    }

    fn add(ctx: &mut Ctx<'_>, e: u32, delta: i8) {
        for &id in ctx.params.index.incidence(e) {
            let h = &mut ctx.hits[id as usize];
            *h = (*h as i8 + delta) as u8;
        }
    }

    fn dfs(ctx: &mut Ctx<'_>) -> bool {
        if ctx.chosen.len() as u32 == ctx.size {
            return psi_of_hits(ctx.params, &ctx.hits) >= ctx.t;
        }
        let n = ctx.params.index.n();
        let start = ctx.chosen.last().map_or(1, |&e| e + 1);
        let remaining = ctx.size - ctx.chosen.len() as u32;
        let mut e = start;
        while (n + 1).saturating_sub(e) >= remaining {
            // Optimistic completion: chosen plus the whole suffix from e.
            for v in e..=n {
                add(ctx, v, 1);
            }
            let reachable = psi_of_hits(ctx.params, &ctx.hits) >= ctx.t;
            for v in e..=n {
                add(ctx, v, -1);
            }
            if !reachable {
                return false;
            }
            add(ctx, e, 1);
            ctx.chosen.push(e);
            if dfs(ctx) {
                return true;
            }
            ctx.chosen.pop();
            add(ctx, e, -1);
            e += 1;
        }
        false
    }

    for size in 1..=n {
        let mut ctx = Ctx {
            params,
            t,
            size,
            hits: vec![0u8; index.count() as usize],
            chosen: Vec::new(),
        };
        if dfs(&mut ctx) {
            return Ok(MinSetResult {
                size: Some(size as u64),
                witness: Some(ctx.chosen),
            });
        }
    }
    unreachable!("psi([n]) >= t was checked, size n must succeed");
}

/// Result of a core extraction: the surviving core and the deleted
/// elements in deletion order.
#[derive(Debug, Clone)]
pub struct CoreExtraction {
    pub core: Vec<u32>,
    pub deleted: Vec<u32>,
}

/// Peels U down a maximal chain: while some element's marginal
/// f(U) - f(U minus u) is below the weight for the current size, delete
/// the smallest such element.  Guarantees on exit: every surviving
/// element has marginal at least w at the final size, and f drops by less
/// than the sum of the weights at the sizes passed through.
///
/// `weights[l-1]` is the threshold used while the set has l elements.
pub fn extract_core<F>(mut f: F, members: &[u32], weights: &[f64]) -> Result<CoreExtraction>
where
    F: FnMut(&[u32]) -> f64,
{
    let mut cur: Vec<u32> = members.to_vec();
    cur.sort_unstable();
    cur.dedup();
    if weights.len() < cur.len() {
        return Err(Error::invalid(format!(
            "need {} weights, got {}",
            cur.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid("weights must be finite"));
    }
    let mut deleted = Vec::new();
    while !cur.is_empty() {
        let w = weights[cur.len() - 1];
        let f_cur = f(&cur);
        let mut victim = None;
        for pos in 0..cur.len() {
            let mut without = cur.clone();
            without.remove(pos);
            if f_cur - f(&without) < w {
                victim = Some(pos);
                break;
            }
        }
        match victim {
            Some(pos) => deleted.push(cur.remove(pos)),
            None => break,
        }
    }
    Ok(CoreExtraction { core: cur, deleted })
}

/// Certificate produced by `is_core`: the two conditions checked
/// separately, the witness index r for the second, and whether the inner
/// maximization had to fall back to a monotone upper bound.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CoreCertificate {
    pub core: Vec<u32>,
    pub t: f64,
    pub epsilon: f64,
    pub xi: f64,
    pub size_condition: bool,
    pub spread_condition: bool,
    pub spread_r: Option<u32>,
    pub satisfied: bool,
    pub approximate: bool,
}

fn check_core_scalars(t: f64, epsilon: f64, xi: f64) -> Result<()> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::domain(format!("t must be positive, got {t}")));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::domain(format!(
            "epsilon must lie in [0, 1), got {epsilon}"
        )));
    }
    if !xi.is_finite() || xi <= 0.0 {
        return Err(Error::domain(format!("xi must be positive, got {xi}")));
    }
    Ok(())
}

/// A_r(U, u) for r = 1..=k: progressions through u meeting U in exactly r
/// elements.  u need not lie in U.
fn through_profile(index: &ProgressionIndex, state: &SubsetState, u: u32) -> Vec<i64> {
    let mut out = vec![0i64; index.k() as usize + 1];
    for &id in index.incidence(u) {
        let r = index
            .progression(id)
            .iter()
            .filter(|&&x| state.contains(x))
            .count();
        if r > 0 {
            out[r] += 1;
        }
    }
    out
}

/// Checks the (t, epsilon, xi)-core conditions for U:
///   size:   |U| >= Psi*((1 - epsilon) t), and
///   spread: for some r in 3..=k, every u in U has marginal
///           d_u A_r(U) >= (xi / |U|) max(t, (t/|U|^2)^{1/(k-2)} M_{r-1})
///           with M_{r-1} the maximum of A_{r-1}(K) over K inside U.
///
/// The inner maximum is exact up to |U| = 20 (submask scan); beyond that a
/// monotone upper bound A_{>= r-1}(U) substitutes and the certificate is
/// flagged approximate (a pass is then conservative, a fail is not
/// conclusive).
pub fn is_core(
    params: &ModelParams,
    members: &[u32],
    t: f64,
    epsilon: f64,
    xi: f64,
) -> Result<CoreCertificate> {
    check_core_scalars(t, epsilon, xi)?;
    let index = &*params.index;
    let k = index.k();
    let mut u_sorted: Vec<u32> = members.to_vec();
    u_sorted.sort_unstable();
    u_sorted.dedup();
    let state = SubsetState::from_members(index, &u_sorted)?;
    let m = u_sorted.len();

    let size_condition = match psi_star_bounded(index.n() as u64, k, (1.0 - epsilon) * t)? {
        Some(need) => m as u64 >= need,
        None => false,
    };

    // Per-progression patterns of positions hit inside U, for the inner max.
    let mut patterns: Vec<u32> = Vec::new();
    if m > 0 && m <= INNER_MAX_SIZE_CAP {
        let pos_of = |x: u32| u_sorted.binary_search(&x).ok();
        let mut seen = vec![false; index.count() as usize];
        for &e in &u_sorted {
            for &id in index.incidence(e) {
                if !seen[id as usize] {
                    seen[id as usize] = true;
                    let mut pat = 0u32;
                    for &x in index.progression(id) {
                        if let Some(pos) = pos_of(x) {
                            pat |= 1 << pos;
                        }
                    }
                    patterns.push(pat);
                }
            }
        }
    }

    let inner_max_exact = |r_minus_1: u32| -> Result<Option<f64>> {
        if m == 0 {
            return Ok(Some(0.0));
        }
        if m > INNER_MAX_SIZE_CAP {
            return Ok(None);
        }
        let work = (1u64 << m) * patterns.len().max(1) as u64;
        if work > INNER_MAX_WORK_CAP {
            return Err(Error::CapExceeded {
                what: "inner maximization work",
                got: work,
                cap: INNER_MAX_WORK_CAP,
            });
        }
        let mut best = 0u64;
        for kmask in 0u32..(1u32 << m) {
            let count = patterns
                .iter()
                .filter(|&&pat| (pat & kmask).count_ones() == r_minus_1)
                .count() as u64;
            best = best.max(count);
        }
        Ok(Some(best as f64))
    };

    let mut spread_r = None;
    let mut approximate = false;
    if m == 0 {
        // Vacuous spread, but the size condition already fails for t > 0.
        spread_r = Some(3.min(k));
    } else {
        let profile = intersection_profile(index, &u_sorted)?;
        let marginals: Vec<Vec<i64>> = u_sorted
            .iter()
            .map(|&u| through_profile(index, &state, u))
            .collect();
        for r in 3..=k {
            let (inner, approx_here) = match inner_max_exact(r - 1)? {
                Some(v) => (v, false),
                None => {
                    // A_{>= r-1}(U) is monotone in U, so it dominates
                    // A_{r-1}(K) for every K inside U.
                    let geq: u64 = (r - 1..=k).map(|j| profile[(j - 1) as usize]).sum();
                    (geq as f64, true)
                }
            };
            let shape = (t / (m as f64 * m as f64)).powf(1.0 / (k as f64 - 2.0)) * inner;
            let threshold = (xi / m as f64) * t.max(shape);
            let ok = u_sorted.iter().enumerate().all(|(pos, _)| {
                let mg = &marginals[pos];
                let exact_r = mg[r as usize];
                let exact_r1 = if r < k { mg[(r + 1) as usize] } else { 0 };
                (exact_r - exact_r1) as f64 >= threshold
            });
            if ok {
                spread_r = Some(r);
                approximate = approx_here;
                break;
            }
        }
    }

    let spread_condition = spread_r.is_some() && m > 0;
    let satisfied = size_condition && spread_condition;
    Ok(CoreCertificate {
        core: u_sorted,
        t,
        epsilon,
        xi,
        size_condition,
        spread_condition,
        spread_r: if m > 0 { spread_r } else { None },
        satisfied,
        approximate,
    })
}

/// Output of the seed-to-core pipeline.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SeedToCore {
    /// Smallest dense subset of the seed, by (size, lexicographic) order.
    pub dense_subset: Vec<u32>,
    /// Smallest index r >= 3 at which it is dense.
    pub r: u32,
    /// Weight schedule used for the peel, indexed by current size.
    pub weights: Vec<f64>,
    pub core: Vec<u32>,
    pub eta: f64,
    pub xi: f64,
    pub certificate: CoreCertificate,
}

/// Density thresholds: K is r-dense for t when A_r(K) >= a_r(|K|) t with
/// a_r(x) = (1 - eta) (x^2 / (eta t))^{(k-r)/(k-2)}.
fn dense_threshold(k: u32, r: u32, eta: f64, t: f64, size: f64) -> f64 {
    let expo = (k - r) as f64 / (k as f64 - 2.0);
    (1.0 - eta) * (size * size / (eta * t)).powf(expo) * t
}

/// Runs the core pipeline on a seed U with psi(U) >= t: find the smallest
/// r-dense subset for some r in 3..=k, peel it against the weight
/// schedule w_l = eta A_r (1/l) beta(l / |dense|), and certify the result
/// with xi = eta^2 (1 - eta)^2 beta(|core| / |U|).
pub fn seed_to_core(
    params: &ModelParams,
    members: &[u32],
    t: f64,
    epsilon: f64,
    eta: f64,
) -> Result<SeedToCore> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::domain(format!("t must be positive, got {t}")));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::domain(format!("eta must lie in (0, 1), got {eta}")));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::domain(format!(
            "epsilon must lie in [0, 1), got {epsilon}"
        )));
    }
    let index = &*params.index;
    let k = index.k();
    let mut seed: Vec<u32> = members.to_vec();
    seed.sort_unstable();
    seed.dedup();
    if seed.is_empty() {
        return Err(Error::invalid("seed must be nonempty"));
    }
    if seed.len() > SEED_TO_CORE_SIZE_CAP {
        return Err(Error::CapExceeded {
            what: "seed size",
            got: seed.len() as u64,
            cap: SEED_TO_CORE_SIZE_CAP as u64,
        });
    }
    let psi_u = psi(params, &seed)?;
    if psi_u < t {
        return Err(Error::invalid(format!(
            "not a seed: psi(U) = {psi_u} < t = {t}"
        )));
    }

    // Smallest dense subset in (size, lex) order; masks of equal popcount
    // are collected and sorted by member list to get lexicographic order.
    let m = seed.len();
    let mut found: Option<(Vec<u32>, u32)> = None;
    'sizes: for size in 1..=m {
        let mut masks: Vec<Vec<u32>> = (0u32..(1u32 << m))
            .filter(|mk| mk.count_ones() as usize == size)
            .map(|mk| {
                (0..m)
                    .filter(|pos| mk & (1 << pos) != 0)
                    .map(|pos| seed[pos])
                    .collect()
            })
            .collect();
        masks.sort();
        for cand in masks {
            let profile = intersection_profile(index, &cand)?;
            for r in 3..=k {
                let a_r = profile[(r - 1) as usize] as f64;
                if a_r >= dense_threshold(k, r, eta, t, size as f64) {
                    found = Some((cand, r));
                    break 'sizes;
                }
            }
        }
    }
    let (dense_subset, r) = found.ok_or_else(|| {
        Error::NoDenseSubset(format!(
            "no subset of the seed is r-dense for any r in 3..={k} at t = {t}, eta = {eta}"
        ))
    })?;

    let a_r_dense = intersection_profile(index, &dense_subset)?[(r - 1) as usize] as f64;
    let d = dense_subset.len();
    let mut weights = Vec::with_capacity(d);
    for l in 1..=d {
        weights.push(eta * a_r_dense * beta(l as f64 / d as f64)? / l as f64);
    }

    let extraction = extract_core(
        |set| {
            intersection_profile(index, set).expect("members validated")[(r - 1) as usize] as f64
        },
        &dense_subset,
        &weights,
    )?;
    if extraction.core.is_empty() {
        return Err(Error::invalid(
            "core extraction emptied the dense subset; weight schedule exceeds its mass",
        ));
    }

    let xi = eta * eta * (1.0 - eta) * (1.0 - eta)
        * beta(extraction.core.len() as f64 / seed.len() as f64)?;
    let certificate = is_core(params, &extraction.core, t, epsilon, xi)?;

    Ok(SeedToCore {
        dense_subset,
        r,
        weights,
        core: extraction.core,
        eta,
        xi,
        certificate,
    })
}

/// Largest seed size m admitted at level u by the two constraints
///   u >= c m max(1, n p^{k-1})   and
///   u >= c m^2 p^{k-2} n^{(k-2)(m/u)^{1/(k-1)}}.
/// Feasibility is decreasing in m, so the scan stops at the first failure.
pub fn m_max(n: u64, k: u32, p: f64, u: f64, c: f64) -> Result<u64> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::domain(format!("c must be positive, got {c}")));
    }
    if !u.is_finite() {
        return Err(Error::domain(format!("u must be finite, got {u}")));
    }
    if u < 0.0 {
        return Ok(0);
    }
    let mut best = 0u64;
    let mut m = 1u64;
    while seed_size_feasible(n, k, p, u, c, m) {
        best = m;
        m += 1;
    }
    Ok(best)
}

fn seed_size_feasible(n: u64, k: u32, p: f64, u: f64, c: f64, m: u64) -> bool {
    let mf = m as f64;
    let nf = n as f64;
    let first = c * mf * (nf * p.powi(k as i32 - 1)).max(1.0);
    if u < first {
        return false;
    }
    if u <= 0.0 {
        // m >= 1 always fails the first constraint when u <= 0, since the
        // max(..) factor is at least 1; unreachable but kept for clarity.
        return false;
    }
    let expo = (k as f64 - 2.0) * (mf / u).powf(1.0 / (k as f64 - 1.0));
    let second = c * mf * mf * p.powi(k as i32 - 2) * nf.powf(expo);
    u >= second
}

/// Membership of U in the small-seed family at level t: psi(U) >= t and
/// |U| passes both size constraints.
pub fn in_small_seed_family(params: &ModelParams, members: &[u32], query: &SeedQuery) -> Result<bool> {
    let mut seed: Vec<u32> = members.to_vec();
    seed.sort_unstable();
    seed.dedup();
    let m = seed.len() as u64;
    let n = params.index.n() as u64;
    let k = params.index.k();
    if !query.t.is_finite() {
        return Err(Error::domain(format!("t must be finite, got {}", query.t)));
    }
    if !(query.c > 0.0 && query.c.is_finite()) {
        return Err(Error::domain(format!("c must be positive, got {}", query.c)));
    }
    if psi(params, &seed)? < query.t {
        return Ok(false);
    }
    if m == 0 {
        return Ok(query.t >= 0.0);
    }
    Ok(seed_size_feasible(n, k, params.p, query.t, query.c, m))
}

/// Caps for the small-seed search inside a concrete set R.
pub const SEED_SEARCH_MMAX_CAP: u64 = 8;
pub const SEED_SEARCH_R_CAP: u32 = 20;

/// Whether R contains a member of the small-seed family at level u: some
/// U inside R with psi(U) >= u and |U| <= m_max(u, c).  Exact DFS with the
/// monotone suffix bound; capped unless the seed size limit or |R| is
/// small.
pub fn contains_small_seed(
    params: &ModelParams,
    r: &SubsetState,
    u: f64,
    c: f64,
) -> Result<bool> {
    let index = &*params.index;
    let n = index.n() as u64;
    let k = index.k();
    if !u.is_finite() {
        return Err(Error::domain(format!("u must be finite, got {u}")));
    }
    let mm = m_max(n, k, params.p, u, c)?.min(r.len() as u64);
    if u <= 0.0 {
        // The empty set has psi = 0 and size 0, which is always admitted.
        return Ok(true);
    }
    if mm == 0 {
        return Ok(false);
    }
    if mm > SEED_SEARCH_MMAX_CAP && r.len() > SEED_SEARCH_R_CAP {
        return Err(Error::CapExceeded {
            what: "small-seed search size limit",
            got: mm,
            cap: SEED_SEARCH_MMAX_CAP,
        });
    }
    let candidates = r.members();

    fn dfs(
        params: &ModelParams,
        candidates: &[u32],
        from: usize,
        cur: &mut Vec<u32>,
        mm: u64,
        u: f64,
    ) -> Result<bool> {
        if psi(params, cur)? >= u {
            return Ok(true);
        }
        if (cur.len() as u64) == mm {
            return Ok(false);
        }
        // Monotone bound: no extension beats adopting the whole suffix.
        let mut optimistic = cur.clone();
        optimistic.extend_from_slice(&candidates[from..]);
        if psi(params, &optimistic)? < u {
            return Ok(false);
        }
        for i in from..candidates.len() {
            cur.push(candidates[i]);
            if dfs(params, candidates, i + 1, cur, mm, u)? {
                return Ok(true);
            }
            cur.pop();
        }
        Ok(false)
    }

    let mut cur = Vec::new();
    dfs(params, &candidates, 0, &mut cur, mm, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{build_index, exact_moments};
    use std::sync::Arc;

    fn params(n: u32, k: u32, p: f64) -> ModelParams {
        exact_moments(Arc::new(build_index(n, k).unwrap()), p).unwrap()
    }

    #[test]
    fn beta_values() {
        assert!((beta(1.0).unwrap() - 0.25).abs() < 1e-15);
        let e2 = (-2.0f64).exp();
        assert!((beta(e2).unwrap() - 1.0 / 16.0).abs() < 1e-15);
        assert!(beta(0.0).is_err());
        assert!(beta(1.5).is_err());
        assert!(beta(-0.2).is_err());
    }

    #[test]
    fn interval_counts_k3() {
        // Length 2r+1 holds r^2 progressions, length 2r holds r(r-1).
        for r in 1u64..30 {
            assert_eq!(interval_ap_count(3, 2 * r + 1), (r * r) as u128);
            assert_eq!(interval_ap_count(3, 2 * r), (r * (r - 1)) as u128);
        }
    }

    #[test]
    fn psi_star_examples() {
        let idx = build_index(10, 3).unwrap();
        for mode in [PsiStarMode::Exact, PsiStarMode::Bounded] {
            let r1 = psi_star(&idx, 1.0, mode).unwrap();
            assert_eq!(r1.size, Some(3));
            let r2 = psi_star(&idx, 2.0, mode).unwrap();
            assert_eq!(r2.size, Some(4));
        }
        assert_eq!(
            psi_star(&idx, 1.0, PsiStarMode::Exact).unwrap().witness,
            Some(vec![1, 2, 3])
        );
        // Unreachable target: infinity sentinel.
        let inf = psi_star(&idx, 21.0, PsiStarMode::Exact).unwrap();
        assert_eq!(inf.size, None);
        assert_eq!(inf.witness, None);
        // t <= 0 is satisfied by the empty set.
        let z = psi_star(&idx, 0.0, PsiStarMode::Bounded).unwrap();
        assert_eq!(z.size, Some(0));
    }

    #[test]
    fn psi_star_modes_agree_small() {
        for (n, k) in [(10u32, 3u32), (12, 3), (12, 4)] {
            let idx = build_index(n, k).unwrap();
            let total = idx.count();
            for t in 1..=total {
                let exact = psi_star(&idx, t as f64, PsiStarMode::Exact).unwrap();
                let bounded = psi_star(&idx, t as f64, PsiStarMode::Bounded).unwrap();
                assert_eq!(exact.size, bounded.size, "n={n} k={k} t={t}");
                if let Some(w) = &exact.witness {
                    let st = SubsetState::from_members(&idx, w).unwrap();
                    assert!(st.ap_count() >= t);
                    assert_eq!(w.len() as u64, exact.size.unwrap());
                }
            }
        }
    }

    #[test]
    fn min_seed_example() {
        let pm = params(5, 3, 0.5);
        let r = min_seed(&pm, &SeedQuery::new(1.7)).unwrap();
        assert_eq!(r.size, Some(3));
        assert_eq!(r.witness, Some(vec![1, 2, 3]));
        // Unreachable threshold.
        let inf = min_seed(&pm, &SeedQuery::new(100.0)).unwrap();
        assert_eq!(inf.size, None);
        // Trivial threshold.
        let z = min_seed(&pm, &SeedQuery::new(0.0)).unwrap();
        assert_eq!(z.size, Some(0));
    }

    #[test]
    fn min_seed_matches_oracle() {
        use crate::oracle::MaskWorld;
        let pm = params(8, 3, 0.4);
        let w = MaskWorld::new(8, 3).unwrap();
        for t in [0.3, 0.9, 1.4, 2.2, 3.0] {
            let fast = min_seed(&pm, &SeedQuery::new(t)).unwrap();
            let slow = w.min_seed(0.4, t);
            match slow {
                Some((size, witness)) => {
                    assert_eq!(fast.size, Some(size as u64), "t = {t}");
                    assert_eq!(fast.witness, Some(witness), "t = {t}");
                }
                None => assert_eq!(fast.size, None),
            }
        }
    }

    #[test]
    fn extract_core_unit_weights_keeps_ground_set() {
        let idx = build_index(5, 3).unwrap();
        let f = |set: &[u32]| {
            let st = SubsetState::from_members(&idx, set).unwrap();
            st.ap_count() as f64
        };
        let all: Vec<u32> = (1..=5).collect();
        let out = extract_core(f, &all, &[1.0; 5]).unwrap();
        assert_eq!(out.core, all);
        assert!(out.deleted.is_empty());
    }

    #[test]
    fn extract_core_peels_and_guarantees() {
        // Deleting from {1,2,4} under A_3 marginals: every marginal is 0
        // until the set collapses, so everything peels away.
        let idx = build_index(5, 3).unwrap();
        let f = |set: &[u32]| {
            let st = SubsetState::from_members(&idx, set).unwrap();
            st.ap_count() as f64
        };
        let out = extract_core(f, &[1, 2, 4], &[1.0; 3]).unwrap();
        assert!(out.core.is_empty());
        assert_eq!(out.deleted, vec![1, 2, 4]);
    }

    #[test]
    fn is_core_rejects_empty_and_accepts_interval() {
        let pm = params(30, 3, 0.2);
        let empty = is_core(&pm, &[], 4.0, 0.5, 0.05).unwrap();
        assert!(!empty.satisfied);

        for t in [4.0, 10.0, 50.0] {
            let len = (2.0 * (3.0f64 - 1.0) * t).sqrt().floor() as u32;
            let interval: Vec<u32> = (1..=len).collect();
            let cert = is_core(&pm, &interval, t, 0.5, 0.05).unwrap();
            assert!(cert.satisfied, "t = {t}: {cert:?}");
            assert!(!cert.approximate);
        }
    }

    #[test]
    fn seed_to_core_interval_seed() {
        let pm = params(16, 3, 0.5);
        let seed: Vec<u32> = (1..=6).collect();
        let out = seed_to_core(&pm, &seed, 3.0, 0.1, 0.05).unwrap();
        assert_eq!(out.r, 3);
        assert!(!out.core.is_empty());
        assert!(out.certificate.satisfied, "{out:?}");
        // The dense subset really is dense at r.
        let prof = intersection_profile(&pm.index, &out.dense_subset).unwrap();
        let a_r = prof[(out.r - 1) as usize] as f64;
        assert!(a_r >= dense_threshold(3, out.r, 0.05, 3.0, out.dense_subset.len() as f64));
    }

    #[test]
    fn seed_to_core_rejections() {
        let pm = params(16, 3, 0.5);
        // t = 0 rejected.
        assert!(seed_to_core(&pm, &[1, 2, 3], 0.0, 0.1, 0.05).is_err());
        // Not a seed.
        assert!(matches!(
            seed_to_core(&pm, &[1], 5.0, 0.1, 0.05),
            Err(Error::InvalidInput(_))
        ));
        // No full progression anywhere in the seed: no dense subset.
        let err = seed_to_core(&pm, &[1, 2, 4], 0.5, 0.1, 0.05).unwrap_err();
        assert!(matches!(err, Error::NoDenseSubset(_)), "{err}");
    }

    #[test]
    fn small_seed_family_and_search() {
        let pm = params(12, 3, 0.3);
        // {3} has psi = deg(3) (p^2 - p^3) = 7 * 0.063 = 0.441 >= 0.4, and
        // a single element passes both size constraints at c = 0.01.
        let q = SeedQuery { t: 0.4, c: 0.01, epsilon: 0.1 };
        assert!(in_small_seed_family(&pm, &[3], &q).unwrap());
        // {1,2,3} also has psi >= 0.4 but fails the second size constraint
        // at m = 3 (the N^{(m/t)^{1/2}} factor explodes for small t).
        assert!(!in_small_seed_family(&pm, &[1, 2, 3], &q).unwrap());

        let r = SubsetState::from_members(&pm.index, &[1, 2, 3, 7, 9]).unwrap();
        // m_max(0.5, 0.01) = 1 and {7} has psi = 10 * 0.063 = 0.63 >= 0.5.
        assert!(contains_small_seed(&pm, &r, 0.5, 0.01).unwrap());
        let r2 = SubsetState::from_members(&pm.index, &[1, 2]).unwrap();
        assert!(!contains_small_seed(&pm, &r2, 3.0, 0.01).unwrap());
        // u <= 0 is always contained (empty seed).
        assert!(contains_small_seed(&pm, &r2, 0.0, 0.01).unwrap());
    }

    #[test]
    fn m_max_monotone_steps() {
        // Larger u admits no smaller seeds.
        let mut prev = 0;
        for step in 1..=40 {
            let u = step as f64 * 0.5;
            let m = m_max(1000, 3, 0.01, u, 1.0).unwrap();
            assert!(m >= prev, "u = {u}");
            prev = m;
        }
        assert_eq!(m_max(1000, 3, 0.01, -1.0, 1.0).unwrap(), 0);
    }
}
