//! Concentration inputs: link statistics, the martingale tail bound they
//! feed, a lower-tail bound for hypergeometric subset sampling, and the
//! second-moment diagnostics used to justify both.
//!
//! The martingale route bounds P(X >= mu + t) by a Gaussian term plus
//! three bad-event probabilities about the link counts
//! L_i = #{B through i : B minus i inside R}: their square sum, the
//! number of medium links, and the largest link.  The bad events are
//! supplied as probabilities (exact or Monte Carlo) so the bound itself
//! stays exact arithmetic.

use crate::error::{Error, Result};
use crate::index::{link_counts, ModelParams, Moments, SubsetState};
use crate::numeric::{binomial_u128, KahanSum};

pub const DEFAULT_EPSILON: f64 = 0.2;
pub const HYPERGEOM_ENUM_CAP: u128 = 10_000_000;
pub const EXACT_EVENTS_N_CAP: u32 = 14;
pub const V_MOMENT_N_CAP: u32 = 12;
pub const V_MOMENT_ELL_CAP: u32 = 4;

/// Link-count statistics of a concrete set R at deviation t, with the
/// three bad-event indicators at scale lambda = t / sigma^2.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LinkStats {
    pub lambda: f64,
    pub sum_sq: f64,
    pub medium_count: u64,
    pub max_link: u64,
    pub v_threshold: f64,
    pub medium_link_threshold: f64,
    pub medium_count_threshold: f64,
    pub max_link_threshold: f64,
    pub event_v: bool,
    pub event_medium: bool,
    pub event_max: bool,
}

fn check_freedman_scalars(m: &Moments, t: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::domain(format!(
            "epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    if !(m.p > 0.0 && m.p < 1.0) {
        return Err(Error::domain(format!(
            "link statistics need 0 < p < 1, got {}",
            m.p
        )));
    }
    if !(m.sigma2 > 0.0) {
        return Err(Error::domain("sigma2 must be positive"));
    }
    let sigma = m.sigma2.sqrt();
    if !(t >= epsilon * sigma) {
        return Err(Error::domain(format!(
            "t = {t} is below the floor epsilon * sigma = {}",
            epsilon * sigma
        )));
    }
    Ok(t / m.sigma2)
}

pub fn link_statistics(
    params: &ModelParams,
    r: &SubsetState,
    t: f64,
    epsilon: f64,
) -> Result<LinkStats> {
    let m = params.moments();
    let lambda = check_freedman_scalars(&m, t, epsilon)?;
    let links = link_counts(&params.index, r);
    let mut sum_sq = 0u128;
    let mut max_link = 0u64;
    let medium_link_threshold = epsilon / lambda;
    let mut medium_count = 0u64;
    for &l in &links {
        sum_sq += (l as u128) * (l as u128);
        max_link = max_link.max(l);
        if l as f64 > medium_link_threshold {
            medium_count += 1;
        }
    }
    let p = m.p;
    let v_threshold = (1.0 + epsilon / 10.0) * m.sigma2 / p;
    let medium_count_threshold = epsilon * lambda * lambda * m.sigma2 / (20.0 * p.sqrt());
    let max_link_threshold = (1.0 / p).ln() / (2.0 * lambda);
    Ok(LinkStats {
        lambda,
        sum_sq: sum_sq as f64,
        medium_count,
        max_link,
        v_threshold,
        medium_link_threshold,
        medium_count_threshold,
        max_link_threshold,
        event_v: sum_sq as f64 > v_threshold,
        event_medium: medium_count as f64 >= medium_count_threshold,
        event_max: max_link as f64 > max_link_threshold,
    })
}

/// A probability input with its provenance.  Monte Carlo values are used
/// conservatively (value + 3 stderr, clamped to [0, 1]).
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(tag = "provenance", rename_all = "lowercase")]
pub enum ProbInput {
    Exact { value: f64 },
    Mc { value: f64, stderr: f64 },
}

impl ProbInput {
    pub fn conservative(&self) -> Result<f64> {
        let v = match *self {
            ProbInput::Exact { value } => {
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::domain(format!(
                        "probability must lie in [0, 1], got {value}"
                    )));
                }
                value
            }
            ProbInput::Mc { value, stderr } => {
                if !value.is_finite() || !stderr.is_finite() || stderr < 0.0 || value < 0.0 {
                    return Err(Error::domain(format!(
                        "bad Monte Carlo probability {value} +- {stderr}"
                    )));
                }
                (value + 3.0 * stderr).min(1.0)
            }
        };
        Ok(v)
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, ProbInput::Exact { .. })
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct FreedmanInputs {
    pub moments: Moments,
    pub t: f64,
    pub epsilon: f64,
    /// P(sum of squared links exceeds its threshold), strictly.
    pub p_v: ProbInput,
    /// P(medium-link count reaches its threshold).
    pub p_medium: ProbInput,
    /// P(some link exceeds the max-link threshold).
    pub p_max: ProbInput,
}

/// The assembled tail bound:
///   exp(-(1 - eps) t^2 / (2 sigma^2))
///   + (8 n / eps^3) [ P_v + P_medium ] + P_max.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FreedmanBound {
    pub lambda: f64,
    pub gaussian_term: f64,
    pub amplifier: f64,
    pub term_v: f64,
    pub term_medium: f64,
    pub term_max: f64,
    pub total: f64,
    pub total_clamped: f64,
    /// False when any probability input is Monte Carlo (then the bound
    /// uses the +3 stderr conservative values).
    pub all_exact: bool,
}

pub fn freedman_bound(inputs: &FreedmanInputs) -> Result<FreedmanBound> {
    let m = &inputs.moments;
    let lambda = check_freedman_scalars(m, inputs.t, inputs.epsilon)?;
    let eps = inputs.epsilon;
    let gaussian_term = (-(1.0 - eps) * inputs.t * inputs.t / (2.0 * m.sigma2)).exp();
    let amplifier = 8.0 * m.n as f64 / (eps * eps * eps);
    let term_v = amplifier * inputs.p_v.conservative()?;
    let term_medium = amplifier * inputs.p_medium.conservative()?;
    let term_max = inputs.p_max.conservative()?;
    let total = gaussian_term + term_v + term_medium + term_max;
    Ok(FreedmanBound {
        lambda,
        gaussian_term,
        amplifier,
        term_v,
        term_medium,
        term_max,
        total,
        total_clamped: total.min(1.0),
        all_exact: inputs.p_v.is_exact() && inputs.p_medium.is_exact() && inputs.p_max.is_exact(),
    })
}

/// Exact probabilities of the three link bad events by full enumeration,
/// for n up to 14: (P_v, P_medium, P_max).
pub fn link_event_probs_exact(
    params: &ModelParams,
    t: f64,
    epsilon: f64,
) -> Result<(f64, f64, f64)> {
    let index = &*params.index;
    let n = index.n();
    if n > EXACT_EVENTS_N_CAP {
        return Err(Error::CapExceeded {
            what: "n for exact link-event probabilities",
            got: n as u64,
            cap: EXACT_EVENTS_N_CAP as u64,
        });
    }
    let m = params.moments();
    let lambda = check_freedman_scalars(&m, t, epsilon)?;
    let p = params.p;
    let v_threshold = (1.0 + epsilon / 10.0) * m.sigma2 / p;
    let medium_link_threshold = epsilon / lambda;
    let medium_count_threshold = epsilon * lambda * lambda * m.sigma2 / (20.0 * p.sqrt());
    let max_link_threshold = (1.0 / p).ln() / (2.0 * lambda);

    let prog_masks: Vec<u64> = index
        .progressions()
        .iter()
        .map(|prog| prog.iter().fold(0u64, |mk, &x| mk | (1u64 << (x - 1))))
        .collect();
    let mut pv = KahanSum::new();
    let mut pmed = KahanSum::new();
    let mut pmax = KahanSum::new();
    for mask in 0..(1u64 << n) {
        let mut links = vec![0u64; n as usize];
        for &pm in &prog_masks {
            let outside = pm & !mask;
            match outside.count_ones() {
                0 => {
                    let mut rest = pm;
                    while rest != 0 {
                        links[rest.trailing_zeros() as usize] += 1;
                        rest &= rest - 1;
                    }
                }
                1 => links[outside.trailing_zeros() as usize] += 1,
                _ => {}
            }
        }
        let mut sum_sq = 0u64;
        let mut medium = 0u64;
        let mut max_link = 0u64;
        for &l in &links {
            sum_sq += l * l;
            if l as f64 > medium_link_threshold {
                medium += 1;
            }
            max_link = max_link.max(l);
        }
        let ones = mask.count_ones() as i32;
        let pr = p.powi(ones) * (1.0 - p).powi(n as i32 - ones);
        if sum_sq as f64 > v_threshold {
            pv.add(pr);
        }
        if medium as f64 >= medium_count_threshold {
            pmed.add(pr);
        }
        if max_link as f64 > max_link_threshold {
            pmax.add(pr);
        }
    }
    Ok((
        pv.value().clamp(0.0, 1.0),
        pmed.value().clamp(0.0, 1.0),
        pmax.value().clamp(0.0, 1.0),
    ))
}

/// A finite family of subsets of [universe], sampled by a uniformly
/// random s-subset S; Z counts the members fully inside S.
#[derive(Debug, Clone, serde::Serialize)]
pub struct JansonFamily {
    pub universe: u32,
    pub s: u32,
    pub sets: Vec<Vec<u32>>,
    /// sum over members of (s/universe)^{|B|}.
    pub mu: f64,
    /// sum over ordered intersecting pairs of distinct members of
    /// (s/universe)^{|B cup B'|}.
    pub delta: f64,
}

pub fn janson_family(universe: u32, s: u32, sets: Vec<Vec<u32>>) -> Result<JansonFamily> {
    if universe == 0 || universe > 64 {
        return Err(Error::invalid(format!(
            "universe must lie in 1..=64, got {universe}"
        )));
    }
    if s > universe {
        return Err(Error::invalid(format!(
            "s = {s} exceeds universe = {universe}"
        )));
    }
    let mut masks = Vec::with_capacity(sets.len());
    for (idx, set) in sets.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::invalid(format!("set {idx} is empty")));
        }
        let mut mask = 0u64;
        for &x in set {
            if x == 0 || x > universe {
                return Err(Error::invalid(format!(
                    "set {idx} contains {x}, outside 1..={universe}"
                )));
            }
            mask |= 1u64 << (x - 1);
        }
        masks.push(mask);
    }
    let frac = s as f64 / universe as f64;
    let mut mu = KahanSum::new();
    for &mk in &masks {
        mu.add(frac.powi(mk.count_ones() as i32));
    }
    let mut delta = KahanSum::new();
    for (a, &ma) in masks.iter().enumerate() {
        for (b, &mb) in masks.iter().enumerate() {
            if a != b && ma & mb != 0 {
                delta.add(frac.powi((ma | mb).count_ones() as i32));
            }
        }
    }
    Ok(JansonFamily {
        universe,
        s,
        sets,
        mu: mu.value(),
        delta: delta.value(),
    })
}

/// Lower-tail bound P(Z <= (1 - epsilon) mu) <= 2 exp(-(eps^2/2) mu^2 /
/// (mu + delta)).  The empty family gives the trivial bound 2.
pub fn janson_bound(family: &JansonFamily, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::domain(format!(
            "epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    if family.sets.is_empty() {
        return Ok(2.0);
    }
    let expo = -(epsilon * epsilon / 2.0) * family.mu * family.mu / (family.mu + family.delta);
    Ok(2.0 * expo.exp())
}

/// P(Z <= threshold) exactly, enumerating all s-subsets of the universe.
pub fn hypergeom_event_exact(family: &JansonFamily, threshold: f64) -> Result<f64> {
    let t_univ = family.universe;
    let s = family.s;
    let total = binomial_u128(t_univ as u64, s as u64).unwrap_or(u128::MAX);
    if total > HYPERGEOM_ENUM_CAP {
        return Err(Error::CapExceeded {
            what: "s-subset enumeration size",
            got: u64::MAX.min(total as u64),
            cap: HYPERGEOM_ENUM_CAP as u64,
        });
    }
    let masks: Vec<u64> = family
        .sets
        .iter()
        .map(|set| set.iter().fold(0u64, |mk, &x| mk | (1u64 << (x - 1))))
        .collect();
    let mut hits = 0u128;
    let mut visited = 0u128;
    // Gosper's hack over s-subsets of [universe]; s = 0 is the single
    // empty subset.
    if s == 0 {
        let z = masks.iter().filter(|&&mk| mk == 0).count() as f64;
        return Ok(if z <= threshold { 1.0 } else { 0.0 });
    }
    let mut subset: u64 = (1u64 << s) - 1;
    let limit: u64 = if t_univ == 64 {
        u64::MAX
    } else {
        (1u64 << t_univ) - 1
    };
    loop {
        let z = masks.iter().filter(|&&mk| mk & subset == mk).count() as f64;
        if z <= threshold {
            hits += 1;
        }
        visited += 1;
        // Next subset with the same popcount.
        let c = subset & subset.wrapping_neg();
        let r = subset + c;
        if r > limit || r < subset {
            break;
        }
        subset = r | ((((subset ^ r) / c) >> 2) as u64);
    }
    debug_assert_eq!(visited, total);
    Ok(hits as f64 / total as f64)
}

/// Greedily keeps an inclusion-maximal pairwise-disjoint subfamily,
/// scanning in the given order; returns the kept indices.
pub fn greedy_disjoint(sets: &[Vec<u32>]) -> Vec<usize> {
    let mut taken: std::collections::HashSet<u32> = std::collections::HashSet::new();
    let mut kept = Vec::new();
    for (idx, set) in sets.iter().enumerate() {
        if set.iter().all(|x| !taken.contains(x)) {
            taken.extend(set.iter().copied());
            kept.push(idx);
        }
    }
    kept
}

/// Moment diagnostics for V = sum_i L_i^2 by full enumeration:
/// E[V^ell] against ((1 + beta) E[V])^ell, plus the two scale hypotheses
/// of the moment lemma, reported but never gated on.
#[derive(Debug, Clone, serde::Serialize)]
pub struct VMomentReport {
    pub ell: u32,
    pub beta: f64,
    pub e_v: f64,
    pub e_v_ell: f64,
    pub bound: f64,
    pub holds: bool,
    /// n p^{k-1}, required to exceed 1 by the lemma hypothesis.
    pub density_scale: f64,
    /// n p^{(2k-2)/3}, the scale ell must stay below (up to a constant).
    pub ell_scale: f64,
}

pub fn v_moment_check(params: &ModelParams, ell: u32, beta: f64) -> Result<VMomentReport> {
    let index = &*params.index;
    let n = index.n();
    if n > V_MOMENT_N_CAP {
        return Err(Error::CapExceeded {
            what: "n for V-moment enumeration",
            got: n as u64,
            cap: V_MOMENT_N_CAP as u64,
        });
    }
    if ell == 0 || ell > V_MOMENT_ELL_CAP {
        return Err(Error::CapExceeded {
            what: "moment order ell",
            got: ell as u64,
            cap: V_MOMENT_ELL_CAP as u64,
        });
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::domain(format!("beta must be >= 0, got {beta}")));
    }
    let p = params.p;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("need 0 < p < 1, got {p}")));
    }
    let prog_masks: Vec<u64> = index
        .progressions()
        .iter()
        .map(|prog| prog.iter().fold(0u64, |mk, &x| mk | (1u64 << (x - 1))))
        .collect();
    let mut e_v = KahanSum::new();
    let mut e_v_ell = KahanSum::new();
    for mask in 0..(1u64 << n) {
        let mut links = vec![0u64; n as usize];
        for &pm in &prog_masks {
            let outside = pm & !mask;
            match outside.count_ones() {
                0 => {
                    let mut rest = pm;
                    while rest != 0 {
                        links[rest.trailing_zeros() as usize] += 1;
                        rest &= rest - 1;
                    }
                }
                1 => links[outside.trailing_zeros() as usize] += 1,
                _ => {}
            }
        }
        let v: u64 = links.iter().map(|&l| l * l).sum();
        let ones = mask.count_ones() as i32;
        let pr = p.powi(ones) * (1.0 - p).powi(n as i32 - ones);
        e_v.add(pr * v as f64);
        e_v_ell.add(pr * (v as f64).powi(ell as i32));
    }
    let e_v = e_v.value();
    let e_v_ell = e_v_ell.value();
    let bound = ((1.0 + beta) * e_v).powi(ell as i32);
    let k = index.k();
    Ok(VMomentReport {
        ell,
        beta,
        e_v,
        e_v_ell,
        bound,
        holds: e_v_ell <= bound,
        density_scale: n as f64 * p.powi(k as i32 - 1),
        ell_scale: n as f64 * p.powf((2.0 * k as f64 - 2.0) / 3.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{build_index, exact_moments};
    use crate::sampling::exact_tail;
    use rand::SeedableRng;
    use std::sync::Arc;

    fn params(n: u32, k: u32, p: f64) -> ModelParams {
        exact_moments(Arc::new(build_index(n, k).unwrap()), p).unwrap()
    }

    #[test]
    fn link_stats_full_set() {
        let pm = params(10, 3, 0.3);
        let all: Vec<u32> = (1..=10).collect();
        let r = SubsetState::from_members(&pm.index, &all).unwrap();
        let sigma = pm.sigma2.sqrt();
        let stats = link_statistics(&pm, &r, sigma, 0.2).unwrap();
        // On the full set every link equals the degree.
        let expect: f64 = (1..=10).map(|i| (pm.index.degree(i) as f64).powi(2)).sum();
        assert_eq!(stats.sum_sq, expect);
        assert!(stats.max_link >= 1);
        // Below the floor: rejected.
        assert!(link_statistics(&pm, &r, sigma * 0.1, 0.2).is_err());
    }

    #[test]
    fn freedman_bound_dominates_exact_tail_spot() {
        let pm = params(12, 3, 0.3);
        let m = pm.moments();
        let sigma = m.sigma2.sqrt();
        let t = 2.0 * sigma;
        let eps = 0.2;
        let (pv, pmed, pmax) = link_event_probs_exact(&pm, t, eps).unwrap();
        let b = freedman_bound(&FreedmanInputs {
            moments: m,
            t,
            epsilon: eps,
            p_v: ProbInput::Exact { value: pv },
            p_medium: ProbInput::Exact { value: pmed },
            p_max: ProbInput::Exact { value: pmax },
        })
        .unwrap();
        assert!(b.all_exact);
        let tail = exact_tail(&pm, m.mu + t).unwrap();
        assert!(
            b.total >= tail,
            "bound {} below exact tail {tail}",
            b.total
        );
        assert!(b.total_clamped <= 1.0);
    }

    #[test]
    fn mc_prob_inputs_are_conservative() {
        let exact = ProbInput::Exact { value: 0.25 };
        assert_eq!(exact.conservative().unwrap(), 0.25);
        let mc = ProbInput::Mc {
            value: 0.25,
            stderr: 0.01,
        };
        assert!((mc.conservative().unwrap() - 0.28).abs() < 1e-15);
        let big = ProbInput::Mc {
            value: 0.9,
            stderr: 0.1,
        };
        assert_eq!(big.conservative().unwrap(), 1.0);
    }

    #[test]
    fn janson_bound_dominates_exact() {
        let fam = janson_family(6, 3, vec![vec![1, 2], vec![3, 4]]).unwrap();
        assert!((fam.mu - 0.5).abs() < 1e-15);
        assert_eq!(fam.delta, 0.0);
        for eps in [0.25, 0.5, 1.0] {
            let bound = janson_bound(&fam, eps).unwrap();
            let exact = hypergeom_event_exact(&fam, (1.0 - eps) * fam.mu).unwrap();
            assert!(bound >= exact, "eps {eps}: {bound} vs {exact}");
        }
        // Empty family: the trivial bound.
        let empty = janson_family(6, 3, vec![]).unwrap();
        assert_eq!(janson_bound(&empty, 0.5).unwrap(), 2.0);
    }

    #[test]
    fn hypergeom_exact_matches_mc() {
        let fam = janson_family(
            10,
            4,
            vec![vec![1, 2, 3], vec![2, 4], vec![5, 6], vec![7, 8, 9]],
        )
        .unwrap();
        let threshold = 1.0;
        let exact = hypergeom_event_exact(&fam, threshold).unwrap();
        let masks: Vec<u64> = fam
            .sets
            .iter()
            .map(|s| s.iter().fold(0u64, |mk, &x| mk | (1u64 << (x - 1))))
            .collect();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let trials = 200_000u64;
        let mut hits = 0u64;
        for _ in 0..trials {
            let picks = rand::seq::index::sample(&mut rng, 10, 4);
            let mut subset = 0u64;
            for i in picks {
                subset |= 1u64 << i;
            }
            let z = masks.iter().filter(|&&mk| mk & subset == mk).count() as f64;
            if z <= threshold {
                hits += 1;
            }
        }
        let mc = hits as f64 / trials as f64;
        let stderr = (mc * (1.0 - mc) / trials as f64).sqrt();
        assert!(
            (mc - exact).abs() <= 4.0 * stderr.max(1e-6),
            "exact {exact}, mc {mc}"
        );
    }

    #[test]
    fn greedy_disjoint_scan_order() {
        let sets = vec![
            vec![1, 2],
            vec![2, 3],
            vec![4, 5],
            vec![5, 6],
            vec![7],
        ];
        assert_eq!(greedy_disjoint(&sets), vec![0, 2, 4]);
        let kept = greedy_disjoint(&sets);
        // k^3 guarantee shape: at least |input| / 27 for triple overlap.
        assert!(kept.len() * 27 >= sets.len());
    }

    #[test]
    fn v_moments_respect_jensen() {
        let pm = params(10, 3, 0.3);
        let rep = v_moment_check(&pm, 2, 1.0).unwrap();
        assert!(rep.e_v > 0.0);
        // Jensen: E[V^2] >= E[V]^2 always.
        assert!(rep.e_v_ell >= rep.e_v * rep.e_v - 1e-12);
        assert!(v_moment_check(&pm, 5, 1.0).is_err());
        let too_big = params(13, 3, 0.3);
        assert!(v_moment_check(&too_big, 2, 1.0).is_err());
    }
}
