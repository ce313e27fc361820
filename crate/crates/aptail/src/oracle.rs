//! Brute-force reference implementations used by the verification suite.
//!
//! Everything in this module recomputes quantities from their definitions
//! by exhaustive enumeration, sharing no algorithmic shortcuts with the
//! optimized modules it is used to check: progression lists come from a
//! rescan of all (start, difference) pairs, probabilities and moments from
//! full 2^n sweeps over subsets, and variational quantities from scans of
//! every candidate set.  Costs are exponential; callers keep n small.

use crate::error::{Error, Result};

/// All k-term progressions in [n], by direct scan of (start, difference)
/// pairs in start-major order.
pub fn progressions_brute(n: u32, k: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    if k < 2 {
        return out;
    }
    for a in 1..=n as u64 {
        for b in 1..=n as u64 {
            let last = a + (k as u64 - 1) * b;
            if last > n as u64 {
                break;
            }
            out.push((0..k as u64).map(|j| (a + j * b) as u32).collect());
        }
    }
    out
}

/// Number of progressions whose every element satisfies `contains`.
pub fn ap_count_in(n: u32, k: u32, contains: impl Fn(u32) -> bool) -> u64 {
    progressions_brute(n, k)
        .iter()
        .filter(|prog| prog.iter().all(|&x| contains(x)))
        .count() as u64
}

pub fn falling(x: f64, t: u32) -> f64 {
    (0..t).map(|j| x - j as f64).product()
}

/// Exhaustive model over all 2^n subsets of [n], with subsets encoded as
/// bitmasks (bit i-1 = element i).
pub struct MaskWorld {
    pub n: u32,
    pub k: u32,
    pub prog_masks: Vec<u64>,
}

impl MaskWorld {
    pub fn new(n: u32, k: u32) -> Result<Self> {
        if n > 24 {
            return Err(Error::CapExceeded {
                what: "oracle universe size",
                got: n as u64,
                cap: 24,
            });
        }
        let prog_masks = progressions_brute(n, k)
            .iter()
            .map(|prog| prog.iter().fold(0u64, |m, &x| m | (1u64 << (x - 1))))
            .collect();
        Ok(MaskWorld { n, k, prog_masks })
    }

    pub fn mask_of(members: &[u32]) -> u64 {
        members.iter().fold(0u64, |m, &x| m | (1u64 << (x - 1)))
    }

    pub fn members_of(mut mask: u64) -> Vec<u32> {
        let mut out = Vec::new();
        while mask != 0 {
            let b = mask.trailing_zeros();
            out.push(b + 1);
            mask &= mask - 1;
        }
        out
    }

    pub fn ap_count(&self, mask: u64) -> u64 {
        self.prog_masks
            .iter()
            .filter(|&&pm| pm & mask == pm)
            .count() as u64
    }

    /// Probability of exactly the set `mask` under independent inclusion
    /// probabilities `probs[i-1]` for element i.
    pub fn product_prob(&self, probs: &[f64], mask: u64) -> f64 {
        let mut pr = 1.0;
        for i in 0..self.n {
            if mask & (1u64 << i) != 0 {
                pr *= probs[i as usize];
            } else {
                pr *= 1.0 - probs[i as usize];
            }
        }
        pr
    }

    pub fn uniform_prob(&self, p: f64, mask: u64) -> f64 {
        let ones = mask.count_ones() as i32;
        p.powi(ones) * (1.0 - p).powi(self.n as i32 - ones)
    }

    /// P(X >= threshold) by full sweep, plain summation.
    pub fn tail(&self, p: f64, threshold: f64) -> f64 {
        let mut total = 0.0;
        for mask in 0..(1u64 << self.n) {
            if (self.ap_count(mask) as f64) >= threshold {
                total += self.uniform_prob(p, mask);
            }
        }
        total
    }

    /// (mean, variance) of X by full sweep.
    pub fn mean_var(&self, p: f64) -> (f64, f64) {
        let mut mean = 0.0;
        let mut second = 0.0;
        for mask in 0..(1u64 << self.n) {
            let pr = self.uniform_prob(p, mask);
            let x = self.ap_count(mask) as f64;
            mean += pr * x;
            second += pr * x * x;
        }
        (mean, second - mean * mean)
    }

    /// psi(U) from its defining identity: E[X | U included] - E[X],
    /// by sweeping the random part and forcing U in.
    pub fn psi_conditional(&self, p: f64, u_mask: u64) -> f64 {
        let mut cond = 0.0;
        let mut plain = 0.0;
        for mask in 0..(1u64 << self.n) {
            let pr = self.uniform_prob(p, mask);
            cond += pr * self.ap_count(mask | u_mask) as f64;
            plain += pr * self.ap_count(mask) as f64;
        }
        cond - plain
    }

    /// psi(U) by the per-progression formula sum_B (p^{k-|B cap U|} - p^k).
    pub fn psi_direct(&self, p: f64, u_mask: u64) -> f64 {
        let pk = p.powi(self.k as i32);
        self.prog_masks
            .iter()
            .map(|&pm| {
                let r = (pm & u_mask).count_ones();
                p.powi((self.k - r) as i32) - pk
            })
            .sum()
    }

    /// E[(X)_t] by full sweep.
    pub fn factorial_moment(&self, p: f64, t: u32) -> f64 {
        let mut total = 0.0;
        for mask in 0..(1u64 << self.n) {
            total += self.uniform_prob(p, mask) * falling(self.ap_count(mask) as f64, t);
        }
        total
    }

    /// psi(U) for every subset mask, direct formula.
    pub fn psi_table(&self, p: f64) -> Vec<f64> {
        (0..(1u64 << self.n))
            .map(|mask| self.psi_direct(p, mask))
            .collect()
    }

    /// Whether R contains a seed: some U subset of R with psi(U) >= u and
    /// |U| <= size_cap, by direct submask scan against a psi table.
    pub fn has_seed(&self, psi_table: &[f64], r_mask: u64, u: f64, size_cap: u32) -> bool {
        // Iterate all submasks of r_mask, including the empty set.
        let mut sub = r_mask;
        loop {
            if sub.count_ones() <= size_cap && psi_table[sub as usize] >= u {
                return true;
            }
            if sub == 0 {
                return false;
            }
            sub = (sub - 1) & r_mask;
        }
    }

    /// E[X^m * Z] where Z kills sets containing a (u, size_cap)-seed.
    pub fn filtered_plain_moment(&self, p: f64, m: u32, u: f64, size_cap: u32) -> f64 {
        let table = self.psi_table(p);
        let mut total = 0.0;
        for mask in 0..(1u64 << self.n) {
            if !self.has_seed(&table, mask, u, size_cap) {
                let x = self.ap_count(mask) as f64;
                total += self.uniform_prob(p, mask) * x.powi(m as i32);
            }
        }
        total
    }

    /// E[(X)_t * Z] with the same filter.
    pub fn filtered_factorial_moment(&self, p: f64, t: u32, u: f64, size_cap: u32) -> f64 {
        let table = self.psi_table(p);
        let mut total = 0.0;
        for mask in 0..(1u64 << self.n) {
            if !self.has_seed(&table, mask, u, size_cap) {
                total +=
                    self.uniform_prob(p, mask) * falling(self.ap_count(mask) as f64, t);
            }
        }
        total
    }

    /// Link counts for R: L_i = #{B through i with B minus i inside R}.
    pub fn link_counts(&self, r_mask: u64) -> Vec<u64> {
        let mut links = vec![0u64; self.n as usize];
        for i in 0..self.n {
            let bit = 1u64 << i;
            for &pm in &self.prog_masks {
                if pm & bit != 0 && (pm & !bit) & r_mask == (pm & !bit) {
                    links[i as usize] += 1;
                }
            }
        }
        links
    }

    /// Smallest set with ap_count >= t, scanning sizes upward; the witness
    /// is the lexicographically least member list among minimizers.
    pub fn min_full_set(&self, t: f64) -> Option<(u32, Vec<u32>)> {
        self.scan_min(|mask| self.ap_count(mask) as f64 >= t)
    }

    /// Smallest set with psi >= t, same tie-breaking.
    pub fn min_seed(&self, p: f64, t: f64) -> Option<(u32, Vec<u32>)> {
        self.scan_min(|mask| self.psi_direct(p, mask) >= t)
    }

    fn scan_min(&self, accept: impl Fn(u64) -> bool) -> Option<(u32, Vec<u32>)> {
        for size in 0..=self.n {
            let mut winners: Vec<Vec<u32>> = Vec::new();
            for mask in 0..(1u64 << self.n) {
                if mask.count_ones() == size && accept(mask) {
                    winners.push(Self::members_of(mask));
                }
            }
            if !winners.is_empty() {
                winners.sort();
                return Some((size, winners.swap_remove(0)));
            }
        }
        None
    }

    /// Mass of the sprinkled measure at exactly the set `r_mask`: plant a
    /// uniformly random ordered u-tuple of distinct progressions, then add
    /// every other element independently with probability p.  Computed by
    /// enumerating unordered supports and multiplying by u!.
    pub fn sprinkle_mass(&self, u: u32, p: f64, r_mask: u64) -> f64 {
        let total = self.prog_masks.len() as u64;
        if (u as u64) > total {
            return 0.0;
        }
        if u == 0 {
            return self.uniform_prob(p, r_mask);
        }
        let mut ordered_tuples = 1.0f64;
        for j in 0..u as u64 {
            ordered_tuples *= (total - j) as f64;
        }
        let mut mass = 0.0;
        let mut chosen = Vec::with_capacity(u as usize);
        self.sprinkle_rec(&mut chosen, 0, u, p, r_mask, &mut mass);
        let u_fact: f64 = (1..=u as u64).map(|x| x as f64).product();
        mass * u_fact / ordered_tuples
    }

    fn sprinkle_rec(
        &self,
        chosen: &mut Vec<usize>,
        start: usize,
        remaining: u32,
        p: f64,
        r_mask: u64,
        mass: &mut f64,
    ) {
        if remaining == 0 {
            let union = chosen.iter().fold(0u64, |m, &i| m | self.prog_masks[i]);
            if union & r_mask == union {
                let free = (r_mask & !union).count_ones() as i32;
                let absent = self.n as i32 - r_mask.count_ones() as i32;
                *mass += p.powi(free) * (1.0 - p).powi(absent);
            }
            return;
        }
        for i in start..self.prog_masks.len() {
            chosen.push(i);
            self.sprinkle_rec(chosen, i + 1, remaining - 1, p, r_mask, mass);
            chosen.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_progressions_small() {
        let progs = progressions_brute(5, 3);
        let mut sorted = progs.clone();
        sorted.sort();
        assert_eq!(
            sorted,
            vec![
                vec![1, 2, 3],
                vec![1, 3, 5],
                vec![2, 3, 4],
                vec![3, 4, 5]
            ]
        );
    }

    #[test]
    fn tail_example() {
        // n=3, k=3, p=1/2: only {1,2,3} itself contains a progression.
        let w = MaskWorld::new(3, 3).unwrap();
        assert!((w.tail(0.5, 1.0) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn mask_world_psi_routes_agree() {
        let w = MaskWorld::new(8, 3).unwrap();
        for u_mask in [0u64, 0b111, 0b1010101, 0b11000011] {
            let a = w.psi_conditional(0.3, u_mask);
            let b = w.psi_direct(0.3, u_mask);
            assert!((a - b).abs() < 1e-10, "mask {u_mask:#b}: {a} vs {b}");
        }
    }

    #[test]
    fn sprinkle_mass_sums_to_one() {
        let w = MaskWorld::new(6, 3).unwrap();
        for u in [0u32, 1, 2] {
            let total: f64 = (0..(1u64 << 6)).map(|m| w.sprinkle_mass(u, 0.3, m)).sum();
            assert!((total - 1.0).abs() < 1e-12, "u = {u}: total {total}");
        }
    }

    #[test]
    fn min_seed_prefers_lex_least() {
        let w = MaskWorld::new(5, 3).unwrap();
        let (size, witness) = w.min_seed(0.5, 1.7).unwrap();
        assert_eq!(size, 3);
        assert_eq!(witness, vec![1, 2, 3]);
    }
}
