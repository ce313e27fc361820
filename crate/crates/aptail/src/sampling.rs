//! Sampling under the product measure and its tilts, exact small-n tails,
//! and the change-of-measure identities that certify both.
//!
//! Monte Carlo runs are split into blocks of 65536 samples; block j draws
//! from ChaCha12 stream j of the run seed, so estimates are reproducible,
//! shards can run independently, and merging two shard estimates is exact.
//!
//! Two tilt families are supported: product tilts (independent per-element
//! probabilities, the Gaussian-regime choice raises each probability in
//! proportion to the element's progression degree) and sprinkle tilts
//! (plant u uniformly chosen distinct progressions, then add the rest of
//! the set independently).  The sprinkle density against the base measure
//! has an exact form and a closed upper bound, both exposed.

use crate::error::{Error, Result};
use crate::index::{ModelParams, SubsetState};
use crate::numeric::{binomial_u128, ln_factorial, KahanSum, LogSumExp};
use crate::rates::bernoulli_kl;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub const BLOCK_LEN: u64 = 65536;
pub const EXACT_TAIL_N_CAP: u32 = 24;
pub const KL_CHECK_N_CAP: u32 = 14;
pub const SPRINKLE_RATIO_WORK_CAP: u64 = 10_000_000;

/// A Monte Carlo estimate with enough state to merge shards exactly:
/// value and stderr are derived from (sum, sum_sq, n).
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
    pub seed: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Estimate {
    pub fn from_sums(sum: f64, sum_sq: f64, n: u64, seed: u64) -> Self {
        let nf = n as f64;
        let value = if n > 0 { sum / nf } else { f64::NAN };
        let stderr = if n > 1 {
            let var = ((sum_sq - sum * sum / nf) / (nf - 1.0)).max(0.0);
            (var / nf).sqrt()
        } else {
            f64::NAN
        };
        Estimate {
            value,
            stderr,
            n,
            seed,
            sum,
            sum_sq,
        }
    }

    /// Combines two shards.  The merged estimate keeps the left seed; the
    /// caller is responsible for having run the shards on disjoint blocks.
    pub fn merge(&self, other: &Estimate) -> Estimate {
        Estimate::from_sums(
            self.sum + other.sum,
            self.sum_sq + other.sum_sq,
            self.n + other.n,
            self.seed,
        )
    }
}

fn block_rng(seed: u64, block: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

/// One p-biased sample of [n].
pub fn sample_subset(params: &ModelParams, rng: &mut impl Rng) -> SubsetState {
    let index = &*params.index;
    let n = index.n();
    let mut members = Vec::new();
    for i in 1..=n {
        if rng.gen::<f64>() < params.p {
            members.push(i);
        }
    }
    SubsetState::from_members(index, &members).expect("members generated in range")
}

struct MaskSampler {
    n: u32,
    prog_masks: Vec<u64>,
}

impl MaskSampler {
    fn new(params: &ModelParams) -> Result<Self> {
        let index = &*params.index;
        if index.n() > 64 {
            return Err(Error::CapExceeded {
                what: "n for mask-based sampling",
                got: index.n() as u64,
                cap: 64,
            });
        }
        let prog_masks = index
            .progressions()
            .iter()
            .map(|prog| prog.iter().fold(0u64, |m, &x| m | (1u64 << (x - 1))))
            .collect();
        Ok(MaskSampler {
            n: index.n(),
            prog_masks,
        })
    }

    fn draw(&self, probs: &Probs<'_>, rng: &mut impl Rng) -> u64 {
        let mut mask = 0u64;
        for i in 0..self.n {
            let p = match probs {
                Probs::Uniform(p) => *p,
                Probs::PerElement(v) => v[i as usize],
            };
            if rng.gen::<f64>() < p {
                mask |= 1u64 << i;
            }
        }
        mask
    }

    fn ap_count(&self, mask: u64) -> u64 {
        self.prog_masks
            .iter()
            .filter(|&&pm| pm & mask == pm)
            .count() as u64
    }
}

enum Probs<'a> {
    Uniform(f64),
    PerElement(&'a [f64]),
}

/// P(X >= threshold) exactly, by a subset-sum transform: seed each
/// progression's own mask with 1, then one pass per element turns
/// counts[S] into the number of progressions contained in S.  Probability
/// mass is grouped by popcount and the final 25-term sum is compensated.
pub fn exact_tail(params: &ModelParams, threshold: f64) -> Result<f64> {
    let index = &*params.index;
    let n = index.n();
    if n > EXACT_TAIL_N_CAP {
        return Err(Error::CapExceeded {
            what: "n for exact tail",
            got: n as u64,
            cap: EXACT_TAIL_N_CAP as u64,
        });
    }
    if !threshold.is_finite() {
        return Err(Error::domain(format!(
            "threshold must be finite, got {threshold}"
        )));
    }
    if threshold <= 0.0 {
        return Ok(1.0);
    }
    let need = threshold.ceil() as u64;
    if need > index.count() {
        return Ok(0.0);
    }

    let size = 1usize << n;
    let mut counts = vec![0u16; size];
    for prog in index.progressions() {
        let mask = prog.iter().fold(0usize, |m, &x| m | (1usize << (x - 1)));
        counts[mask] += 1;
    }
    for bit in 0..n {
        let b = 1usize << bit;
        for mask in 0..size {
            if mask & b != 0 {
                counts[mask] += counts[mask ^ b];
            }
        }
    }

    let mut hits_by_popcount = vec![0u64; n as usize + 1];
    for (mask, &c) in counts.iter().enumerate() {
        if c as u64 >= need {
            hits_by_popcount[mask.count_ones() as usize] += 1;
        }
    }
    let p = params.p;
    let mut total = KahanSum::new();
    for (ones, &hits) in hits_by_popcount.iter().enumerate() {
        if hits > 0 {
            total.add(hits as f64 * p.powi(ones as i32) * (1.0 - p).powi(n as i32 - ones as i32));
        }
    }
    Ok(total.value().clamp(0.0, 1.0))
}

/// Monte Carlo estimate of P(X >= threshold), blocks 0..ceil(n/65536).
pub fn mc_tail(params: &ModelParams, threshold: f64, n_samples: u64, seed: u64) -> Result<Estimate> {
    mc_tail_from_block(params, threshold, n_samples, seed, 0)
}

/// Shard variant: draws `n_samples` starting at the given block index.
/// Running blocks [0, b) and [b, ...) separately and merging reproduces
/// the single-run estimate exactly.
pub fn mc_tail_from_block(
    params: &ModelParams,
    threshold: f64,
    n_samples: u64,
    seed: u64,
    first_block: u64,
) -> Result<Estimate> {
    if n_samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let sampler = MaskSampler::new(params)?;
    let mut sum = KahanSum::new();
    let mut sum_sq = KahanSum::new();
    let mut remaining = n_samples;
    let mut block = first_block;
    while remaining > 0 {
        let take = remaining.min(BLOCK_LEN);
        let mut rng = block_rng(seed, block);
        let mut block_hits = 0u64;
        for _ in 0..take {
            let mask = sampler.draw(&Probs::Uniform(params.p), &mut rng);
            if (sampler.ap_count(mask) as f64) >= threshold {
                block_hits += 1;
            }
        }
        sum.add(block_hits as f64);
        sum_sq.add(block_hits as f64);
        remaining -= take;
        block += 1;
    }
    Ok(Estimate::from_sums(sum.value(), sum_sq.value(), n_samples, seed))
}

/// A change of measure for importance sampling.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TiltSpec {
    /// Independent per-element inclusion probabilities.
    Product { probs: Vec<f64>, p_bounded: bool },
    /// Plant u uniformly chosen distinct progressions, then sprinkle.
    Sprinkle { u: u64 },
}

/// The Gaussian-regime product tilt: probs_i = p + q_i with
/// q_i = (1 + epsilon) t p^k A_1(i) / V, which shifts the mean count up by
/// (1 + epsilon) t to first order.  Errors if any prob exceeds 1, naming
/// the offending element; `p_bounded` records whether all q_i <= p, the
/// hypothesis under which the tilted variance stays within 4^k sigma^2.
pub fn gaussian_tilt(params: &ModelParams, t: f64, epsilon: f64) -> Result<TiltSpec> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::domain(format!("t must be >= 0, got {t}")));
    }
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::domain(format!(
            "epsilon must be >= 0, got {epsilon}"
        )));
    }
    if !(params.v > 0.0) {
        return Err(Error::invalid(
            "variance proxy is zero; the tilt direction is undefined",
        ));
    }
    let index = &*params.index;
    let k = index.k();
    let p = params.p;
    let scale = (1.0 + epsilon) * t * p.powi(k as i32) / params.v;
    let mut probs = Vec::with_capacity(index.n() as usize);
    let mut p_bounded = true;
    for i in 1..=index.n() {
        let q = scale * index.degree(i) as f64;
        let prob = p + q;
        if prob > 1.0 {
            return Err(Error::domain(format!(
                "tilted probability overflows at element {i}: p + q = {prob}"
            )));
        }
        if q > p {
            p_bounded = false;
        }
        probs.push(prob);
    }
    Ok(TiltSpec::Product { probs, p_bounded })
}

fn validate_product_tilt(params: &ModelParams, probs: &[f64]) -> Result<()> {
    let n = params.index.n() as usize;
    if probs.len() != n {
        return Err(Error::invalid(format!(
            "tilt has {} probabilities, model has n = {n}",
            probs.len()
        )));
    }
    let p = params.p;
    for (i, &q) in probs.iter().enumerate() {
        if !q.is_finite() || !(0.0..=1.0).contains(&q) {
            return Err(Error::domain(format!(
                "tilt probability at element {} is {q}",
                i + 1
            )));
        }
        // Degenerate tilts make the likelihood ratio unbounded on events
        // the base measure still charges; both directions are rejected.
        if q == 0.0 && p > 0.0 {
            return Err(Error::invalid(format!(
                "degenerate tilt: element {} can never appear under Q but appears under P",
                i + 1
            )));
        }
        if q == 1.0 && p < 1.0 {
            return Err(Error::invalid(format!(
                "degenerate tilt: element {} always appears under Q but not under P",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Importance-sampling estimate of P(X >= threshold) under a product
/// tilt.  Weights are assembled in the log domain per sample.
pub fn is_tail_product(
    params: &ModelParams,
    tilt: &TiltSpec,
    threshold: f64,
    n_samples: u64,
    seed: u64,
) -> Result<Estimate> {
    let probs = match tilt {
        TiltSpec::Product { probs, .. } => probs,
        TiltSpec::Sprinkle { .. } => {
            return Err(Error::invalid(
                "is_tail_product requires a product tilt; sprinkle densities are not product form",
            ))
        }
    };
    if n_samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    validate_product_tilt(params, probs)?;
    let sampler = MaskSampler::new(params)?;
    let p = params.p;
    let n = params.index.n() as usize;
    // Per-element log likelihood ratios log(dP/dQ) for present and absent.
    let mut lr_present = vec![0.0f64; n];
    let mut lr_absent = vec![0.0f64; n];
    for i in 0..n {
        let q = probs[i];
        if q > 0.0 {
            lr_present[i] = p.ln() - q.ln();
        }
        if q < 1.0 {
            lr_absent[i] = (1.0 - p).ln() - (1.0 - q).ln();
        }
    }

    let mut sum = KahanSum::new();
    let mut sum_sq = KahanSum::new();
    let mut remaining = n_samples;
    let mut block = 0u64;
    while remaining > 0 {
        let take = remaining.min(BLOCK_LEN);
        let mut rng = block_rng(seed, block);
        let mut bsum = KahanSum::new();
        let mut bsumsq = KahanSum::new();
        for _ in 0..take {
            let mask = sampler.draw(&Probs::PerElement(probs), &mut rng);
            if (sampler.ap_count(mask) as f64) >= threshold {
                let mut logw = 0.0f64;
                for i in 0..n {
                    if mask & (1u64 << i) != 0 {
                        logw += lr_present[i];
                    } else {
                        logw += lr_absent[i];
                    }
                }
                let w = logw.exp();
                bsum.add(w);
                bsumsq.add(w * w);
            }
        }
        sum.add(bsum.value());
        sum_sq.add(bsumsq.value());
        remaining -= take;
        block += 1;
    }
    Ok(Estimate::from_sums(sum.value(), sum_sq.value(), n_samples, seed))
}

/// D(Q || P) for a product tilt against the uniform-p base measure.
pub fn product_kl(probs: &[f64], p: f64) -> Result<f64> {
    let mut total = KahanSum::new();
    for &q in probs {
        total.add(bernoulli_kl(q, p)?);
    }
    Ok(total.value())
}

/// One draw from the sprinkled measure: u uniformly chosen distinct
/// progressions forced in, everything else added independently with
/// probability p.
pub fn sprinkle_sample(
    params: &ModelParams,
    u: u64,
    rng: &mut impl Rng,
) -> Result<SubsetState> {
    let index = &*params.index;
    if u > index.count() {
        return Err(Error::invalid(format!(
            "cannot plant {u} distinct progressions, only {} exist",
            index.count()
        )));
    }
    let mut state = SubsetState::new(index.n());
    let picks = rand::seq::index::sample(rng, index.count() as usize, u as usize);
    for id in picks {
        for &x in index.progression(id as u32) {
            state.insert(index, x);
        }
    }
    for i in 1..=index.n() {
        if !state.contains(i) && rng.gen::<f64>() < params.p {
            state.insert(index, i);
        }
    }
    Ok(state)
}

/// The sprinkled measure's density against the base measure at R, exact
/// and as the closed upper bound (A_k(R))_u / ((|AP|)_u p^{ku}).
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SprinkleRatio {
    pub value: f64,
    pub log_value: f64,
    pub upper_bound: f64,
    pub log_upper_bound: f64,
}

/// Exact density: (u! / (|AP|)_u) sum over u-subsets of contained
/// progressions of p^{-|union|}.  Zero when R holds fewer than u
/// progressions.
pub fn sprinkle_ratio(params: &ModelParams, u: u64, r: &SubsetState) -> Result<SprinkleRatio> {
    let index = &*params.index;
    let p = params.p;
    if !(p > 0.0) {
        return Err(Error::domain("sprinkle ratio requires p > 0"));
    }
    if u > index.count() {
        return Err(Error::invalid(format!(
            "cannot plant {u} distinct progressions, only {} exist",
            index.count()
        )));
    }
    if u == 0 {
        return Ok(SprinkleRatio {
            value: 1.0,
            log_value: 0.0,
            upper_bound: 1.0,
            log_upper_bound: 0.0,
        });
    }
    let contained: Vec<u32> = index
        .progressions()
        .iter()
        .enumerate()
        .filter(|(_, prog)| prog.iter().all(|&x| r.contains(x)))
        .map(|(id, _)| id as u32)
        .collect();
    let m = contained.len() as u64;
    let ln_falling_total: f64 = (0..u).map(|j| ((index.count() - j) as f64).ln()).sum();
    if m < u {
        return Ok(SprinkleRatio {
            value: 0.0,
            log_value: f64::NEG_INFINITY,
            upper_bound: 0.0,
            log_upper_bound: f64::NEG_INFINITY,
        });
    }
    let combos = binomial_u128(m, u).unwrap_or(u128::MAX);
    let work = combos.saturating_mul(u as u128);
    if work > SPRINKLE_RATIO_WORK_CAP as u128 {
        return Err(Error::CapExceeded {
            what: "sprinkle ratio enumeration work",
            got: u64::MAX.min(work as u64),
            cap: SPRINKLE_RATIO_WORK_CAP,
        });
    }

    // DFS over u-subsets with an incrementally maintained union size.
    struct Dfs<'a> {
        index: &'a crate::index::ProgressionIndex,
        contained: &'a [u32],
        refcount: Vec<u16>,
        covered: u32,
        ln_inv_p: f64,
        lse: LogSumExp,
        u: usize,
    }
    impl Dfs<'_> {
        fn push(&mut self, id: u32) {
            for &x in self.index.progression(id) {
                let c = &mut self.refcount[(x - 1) as usize];
                if *c == 0 {
                    self.covered += 1;
                }
                *c += 1;
            }
        }
        fn pop(&mut self, id: u32) {
            for &x in self.index.progression(id) {
                let c = &mut self.refcount[(x - 1) as usize];
                *c -= 1;
                if *c == 0 {
                    self.covered -= 1;
                }
            }
        }
        fn walk(&mut self, from: usize, depth: usize) {
            if depth == self.u {
                self.lse.add(self.covered as f64 * self.ln_inv_p);
                return;
            }
            for pos in from..=(self.contained.len() - (self.u - depth)) {
                let id = self.contained[pos];
                self.push(id);
                self.walk(pos + 1, depth + 1);
                self.pop(id);
            }
        }
    }
    let mut dfs = Dfs {
        index,
        contained: &contained,
        refcount: vec![0u16; index.n() as usize],
        covered: 0,
        ln_inv_p: (1.0 / p).ln(),
        lse: LogSumExp::new(),
        u: u as usize,
    };
    dfs.walk(0, 0);

    let log_value = dfs.lse.value() + ln_factorial(u) - ln_falling_total;
    let ln_falling_contained: f64 = (0..u).map(|j| ((m - j) as f64).ln()).sum();
    let log_upper =
        ln_falling_contained - ln_falling_total - (index.k() as f64 * u as f64) * p.ln();
    Ok(SprinkleRatio {
        value: log_value.exp(),
        log_value,
        upper_bound: log_upper.exp(),
        log_upper_bound: log_upper,
    })
}

/// Exact change-of-measure diagnostics over the event A = {X >= threshold}
/// for a tilt Q against the base measure P, by full enumeration.
///
/// `tilting_slack` is log P(A) - log Q(A) + E_Q[log(dQ/dP) | A], which the
/// tilting bound asserts is >= 0; `binary_slack` is D(Q || P) minus its
/// data-processed form on the partition {A, not A}, also >= 0.  Both are
/// NaN (and `vacuous` is set) when Q(A) = 0.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct KlReport {
    pub p_event: f64,
    pub q_event: f64,
    pub dkl: f64,
    pub conditional_term: f64,
    pub tilting_slack: f64,
    pub binary_slack: f64,
    pub vacuous: bool,
}

pub fn kl_lower_bound_check(
    params: &ModelParams,
    tilt: &TiltSpec,
    threshold: f64,
) -> Result<KlReport> {
    let index = &*params.index;
    let n = index.n();
    if n > KL_CHECK_N_CAP {
        return Err(Error::CapExceeded {
            what: "n for exact KL checks",
            got: n as u64,
            cap: KL_CHECK_N_CAP as u64,
        });
    }
    let p = params.p;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "KL checks need 0 < p < 1, got {p}"
        )));
    }
    if let TiltSpec::Product { probs, .. } = tilt {
        if probs.len() != n as usize {
            return Err(Error::invalid(format!(
                "tilt has {} probabilities, model has n = {n}",
                probs.len()
            )));
        }
        for (i, &q) in probs.iter().enumerate() {
            if !q.is_finite() || !(0.0..=1.0).contains(&q) {
                return Err(Error::domain(format!(
                    "tilt probability at element {} is {q}",
                    i + 1
                )));
            }
        }
    }

    let sampler = MaskSampler::new(params)?;
    let size = 1u64 << n;
    let q_mass = |mask: u64| -> Result<f64> {
        match tilt {
            TiltSpec::Product { probs, .. } => {
                let mut pr = 1.0;
                for i in 0..n {
                    let q = probs[i as usize];
                    if mask & (1u64 << i) != 0 {
                        pr *= q;
                    } else {
                        pr *= 1.0 - q;
                    }
                }
                Ok(pr)
            }
            TiltSpec::Sprinkle { u } => {
                let members: Vec<u32> =
                    (1..=n).filter(|&i| mask & (1u64 << (i - 1)) != 0).collect();
                let state = SubsetState::from_members(index, &members)?;
                let ones = mask.count_ones() as i32;
                let base = p.powi(ones) * (1.0 - p).powi(n as i32 - ones);
                Ok(base * sprinkle_ratio(params, *u, &state)?.value)
            }
        }
    };

    let mut pa = KahanSum::new();
    let mut qa = KahanSum::new();
    let mut dkl = KahanSum::new();
    let mut cond_num = KahanSum::new();
    for mask in 0..size {
        let ones = mask.count_ones() as i32;
        let pm = p.powi(ones) * (1.0 - p).powi(n as i32 - ones);
        let qm = q_mass(mask)?;
        let in_event = (sampler.ap_count(mask) as f64) >= threshold;
        if in_event {
            pa.add(pm);
        }
        if qm > 0.0 {
            let term = qm * (qm.ln() - pm.ln());
            dkl.add(term);
            if in_event {
                qa.add(qm);
                cond_num.add(term);
            }
        }
    }
    let pa = pa.value().clamp(0.0, 1.0);
    let qa = qa.value().clamp(0.0, 1.0);
    let dkl = dkl.value();
    let vacuous = qa <= 0.0;
    let (conditional_term, tilting_slack, binary_slack) = if vacuous {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        let cond = cond_num.value() / qa;
        let tilting = pa.ln() - qa.ln() + cond;
        let mut binary = dkl;
        binary -= qa * (qa.ln() - pa.ln());
        if qa < 1.0 {
            binary -= (1.0 - qa) * ((1.0 - qa).ln() - (1.0 - pa).ln());
        }
        (cond, tilting, binary)
    };
    Ok(KlReport {
        p_event: pa,
        q_event: qa,
        dkl,
        conditional_term,
        tilting_slack,
        binary_slack,
        vacuous,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{build_index, exact_moments, count_contained};
    use crate::oracle::MaskWorld;
    use std::sync::Arc;

    fn params(n: u32, k: u32, p: f64) -> ModelParams {
        exact_moments(Arc::new(build_index(n, k).unwrap()), p).unwrap()
    }

    #[test]
    fn exact_tail_examples() {
        let pm = params(3, 3, 0.5);
        assert!((exact_tail(&pm, 1.0).unwrap() - 0.125).abs() < 1e-15);
        assert_eq!(exact_tail(&pm, 0.0).unwrap(), 1.0);
        assert_eq!(exact_tail(&pm, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn exact_tail_matches_oracle() {
        let pm = params(10, 3, 0.35);
        let w = MaskWorld::new(10, 3).unwrap();
        for thr in [1.0, 2.0, 3.5, 7.0] {
            let fast = exact_tail(&pm, thr).unwrap();
            let slow = w.tail(0.35, thr);
            assert!((fast - slow).abs() < 1e-12, "thr {thr}: {fast} vs {slow}");
        }
    }

    #[test]
    fn mc_tail_merges_exactly() {
        let pm = params(12, 3, 0.3);
        let whole = mc_tail(&pm, 2.0, 2 * BLOCK_LEN, 17).unwrap();
        let left = mc_tail_from_block(&pm, 2.0, BLOCK_LEN, 17, 0).unwrap();
        let right = mc_tail_from_block(&pm, 2.0, BLOCK_LEN, 17, 1).unwrap();
        let merged = left.merge(&right);
        assert!((whole.value - merged.value).abs() < 1e-12);
        assert!((whole.stderr - merged.stderr).abs() < 1e-12);
        assert_eq!(whole.n, merged.n);
    }

    #[test]
    fn mc_tail_brackets_exact() {
        let pm = params(12, 3, 0.3);
        let exact = exact_tail(&pm, 2.0).unwrap();
        let mc = mc_tail(&pm, 2.0, 200_000, 5).unwrap();
        assert!(
            (mc.value - exact).abs() <= 4.0 * mc.stderr,
            "exact {exact}, mc {} +- {}",
            mc.value,
            mc.stderr
        );
    }

    #[test]
    fn gaussian_tilt_shifts_mean_by_design() {
        let pm = params(14, 3, 0.25);
        let t = 3.0;
        let tilt = gaussian_tilt(&pm, t, 0.1).unwrap();
        let TiltSpec::Product { probs, .. } = &tilt else {
            panic!("product expected")
        };
        // sum_i q_i A_1(i) p^{k-1} = (1 + eps) t by construction.
        let k = pm.index.k();
        let mut shift = 0.0;
        for i in 1..=pm.index.n() {
            let q = probs[(i - 1) as usize] - pm.p;
            shift += q * pm.index.degree(i) as f64 * pm.p.powi(k as i32 - 1);
        }
        assert!((shift - 1.1 * t).abs() < 1e-9, "shift = {shift}");

        // An absurd t overflows some probability, with the element named.
        let err = gaussian_tilt(&pm, 1e9, 0.1).unwrap_err();
        assert!(err.to_string().contains("element"), "{err}");
    }

    #[test]
    fn null_tilt_reproduces_mc() {
        let pm = params(10, 3, 0.3);
        let tilt = TiltSpec::Product {
            probs: vec![0.3; 10],
            p_bounded: true,
        };
        let is = is_tail_product(&pm, &tilt, 2.0, 50_000, 9).unwrap();
        let exact = exact_tail(&pm, 2.0).unwrap();
        assert!((is.value - exact).abs() <= 4.0 * is.stderr);
        // All weights are 1, so the estimator is a plain frequency.
        assert!(is.value * 50_000.0 >= 0.0);
    }

    #[test]
    fn tilted_estimate_matches_exact() {
        let pm = params(12, 3, 0.25);
        let tilt = gaussian_tilt(&pm, 2.0, 0.1).unwrap();
        let exact = exact_tail(&pm, pm.mu + 2.0).unwrap();
        let is = is_tail_product(&pm, &tilt, pm.mu + 2.0, 200_000, 23).unwrap();
        assert!(
            (is.value - exact).abs() <= 4.0 * is.stderr,
            "exact {exact}, is {} +- {}",
            is.value,
            is.stderr
        );
    }

    #[test]
    fn degenerate_tilts_rejected() {
        let pm = params(6, 3, 0.4);
        let zero = TiltSpec::Product {
            probs: vec![0.4, 0.0, 0.4, 0.4, 0.4, 0.4],
            p_bounded: true,
        };
        assert!(is_tail_product(&pm, &zero, 1.0, 10, 1).is_err());
        let one = TiltSpec::Product {
            probs: vec![0.4, 1.0, 0.4, 0.4, 0.4, 0.4],
            p_bounded: true,
        };
        assert!(is_tail_product(&pm, &one, 1.0, 10, 1).is_err());
        let sprinkle = TiltSpec::Sprinkle { u: 1 };
        assert!(is_tail_product(&pm, &sprinkle, 1.0, 10, 1).is_err());
    }

    #[test]
    fn product_kl_matches_mask_sum() {
        let pm = params(8, 3, 0.3);
        let tilt = gaussian_tilt(&pm, 1.0, 0.25).unwrap();
        let TiltSpec::Product { probs, .. } = &tilt else {
            panic!()
        };
        let lib = product_kl(probs, 0.3).unwrap();
        // Direct D(Q||P) over all masks.
        let w = MaskWorld::new(8, 3).unwrap();
        let mut direct = 0.0;
        let base = vec![0.3; 8];
        for mask in 0..(1u64 << 8) {
            let q = w.product_prob(probs, mask);
            let pr = w.product_prob(&base, mask);
            if q > 0.0 {
                direct += q * (q.ln() - pr.ln());
            }
        }
        assert!((lib - direct).abs() < 1e-12, "{lib} vs {direct}");
    }

    #[test]
    fn sprinkle_ratio_is_exact_density() {
        let pm = params(8, 3, 0.2);
        let w = MaskWorld::new(8, 3).unwrap();
        for u in [1u64, 2] {
            let mut expectation = KahanSum::new();
            for mask in 0..(1u64 << 8) {
                let members = MaskWorld::members_of(mask);
                let state = SubsetState::from_members(&pm.index, &members).unwrap();
                let ratio = sprinkle_ratio(&pm, u, &state).unwrap();
                let base = w.uniform_prob(0.2, mask);
                let oracle_mass = w.sprinkle_mass(u as u32, 0.2, mask);
                assert!(
                    (base * ratio.value - oracle_mass).abs() < 1e-12,
                    "u={u} mask={mask:#b}: {} vs {oracle_mass}",
                    base * ratio.value
                );
                assert!(ratio.value <= ratio.upper_bound * (1.0 + 1e-12));
                expectation.add(base * ratio.value);
            }
            assert!(
                (expectation.value() - 1.0).abs() < 1e-9,
                "u={u}: E[ratio] = {}",
                expectation.value()
            );
        }
    }

    #[test]
    fn sprinkle_sample_supports_planted_count() {
        use rand::SeedableRng;
        let pm = params(10, 3, 0.1);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = sprinkle_sample(&pm, 2, &mut rng).unwrap();
            assert!(count_contained(&pm.index, &s) >= 2);
        }
        assert!(sprinkle_sample(&pm, 10_000, &mut rng).is_err());
    }

    #[test]
    fn kl_report_identities() {
        let pm = params(8, 3, 0.3);
        // Q = P: every divergence vanishes.
        let null = TiltSpec::Product {
            probs: vec![0.3; 8],
            p_bounded: true,
        };
        let rep = kl_lower_bound_check(&pm, &null, 1.0).unwrap();
        assert!(rep.dkl.abs() < 1e-12);
        assert!(rep.tilting_slack.abs() < 1e-9);
        assert!(rep.binary_slack.abs() < 1e-12);
        assert!((rep.p_event - rep.q_event).abs() < 1e-12);

        // A genuine tilt keeps both slacks nonnegative.
        let tilt = gaussian_tilt(&pm, 1.5, 0.1).unwrap();
        let rep = kl_lower_bound_check(&pm, &tilt, 2.0).unwrap();
        assert!(rep.tilting_slack >= -1e-9, "{rep:?}");
        assert!(rep.binary_slack >= -1e-9, "{rep:?}");
        assert!(rep.dkl >= 0.0);

        // Sprinkle tilt: same inequalities through the exact density.
        let rep = kl_lower_bound_check(&pm, &TiltSpec::Sprinkle { u: 1 }, 1.0).unwrap();
        assert!(rep.tilting_slack >= -1e-9, "{rep:?}");
        assert!(rep.binary_slack >= -1e-9, "{rep:?}");
        // Planting one progression forces the event, so Q(A) = 1.
        assert!((rep.q_event - 1.0).abs() < 1e-9);

        // Impossible event: vacuous report.
        let rep = kl_lower_bound_check(&pm, &null, 1e9).unwrap();
        assert!(rep.vacuous);
    }
}
