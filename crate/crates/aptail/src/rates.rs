//! Rate functions for the upper tail and the phase classification that
//! selects among them.
//!
//! Three candidate rates compete for -log P(X >= mu + t):
//!
//!   Gaussian:  t^2 / (2 sigma^2)
//!   Poisson:   mu Po(t / mu),  Po(x) = (1+x) log(1+x) - x
//!   Localised: Psi-hat(t) log(1/p), with Psi-hat the minimum number of
//!              elements whose interval holds t progressions
//!
//! The classifier works off two dimensionless diagnostics: the density
//! side p N^{1/(k-1)} separates the sparse regime (Poisson vs localised)
//! from the dense one (Gaussian vs localised), and within a side the
//! ratio sqrt(t) log(1/p) over the side's rate decides which mechanism
//! wins by a factor theta.  Everything here runs on plain `Moments`, so
//! phase scans at N = 10^8 never materialize an index.

use crate::error::{Error, Result};
use crate::index::{second_moment_table, Moments};
use crate::variational::psi_star_bounded;

pub const DEFAULT_THETA: f64 = 3.0;
pub const DEFAULT_BELOW_RANGE_C: f64 = 1.0;

/// Po(x) = (1+x) log(1+x) - x for x >= 0, via log1p for small x.
pub fn poisson_rate(x: f64) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::domain(format!("Po requires x >= 0, got {x}")));
    }
    Ok((1.0 + x) * x.ln_1p() - x)
}

/// Relative entropy of Bernoulli(x) with respect to Bernoulli(p), with the
/// 0 log 0 = 0 convention at the endpoints.
pub fn bernoulli_kl(x: f64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) || !x.is_finite() {
        return Err(Error::domain(format!("x must lie in [0, 1], got {x}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("p must lie in (0, 1), got {p}")));
    }
    let mut total = 0.0;
    if x > 0.0 {
        total += x * (x.ln() - p.ln());
    }
    if x < 1.0 {
        total += (1.0 - x) * ((1.0 - x).ln() - (1.0 - p).ln());
    }
    Ok(total.max(0.0))
}

pub fn gaussian_rate(t: f64, sigma2: f64) -> Result<f64> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::domain(format!("t must be >= 0, got {t}")));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::domain(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    if sigma2 == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(t * t / (2.0 * sigma2))
}

pub fn poisson_tail_rate(mu: f64, t: f64) -> Result<f64> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::domain(format!("t must be >= 0, got {t}")));
    }
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::domain(format!("mu must be >= 0, got {mu}")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    if mu == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(mu * poisson_rate(t / mu)?)
}

/// Psi-hat(t) log(1/p): the localised rate.  Infinite when even the full
/// interval [n] cannot hold t progressions.
pub fn localised_rate(n: u64, k: u32, t: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("p must lie in (0, 1), got {p}")));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::domain(format!("t must be >= 0, got {t}")));
    }
    match psi_star_bounded(n, k, t)? {
        Some(m) => Ok(m as f64 * (1.0 / p).ln()),
        None => Ok(f64::INFINITY),
    }
}

/// First-order form of the localised rate, sqrt(2 (k-1) t) log(1/p),
/// the comparator the exact value is reported against.
pub fn localised_asymptotic(k: u32, t: f64, p: f64) -> f64 {
    (2.0 * (k as f64 - 1.0) * t).sqrt() * (1.0 / p).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    BelowRange,
    Clt,
    Gaussian,
    Poisson,
    Localised,
    Boundary,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::BelowRange => "below-range",
            Regime::Clt => "clt",
            Regime::Gaussian => "gaussian",
            Regime::Poisson => "poisson",
            Regime::Localised => "localised",
            Regime::Boundary => "boundary",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "below-range" => Ok(Regime::BelowRange),
            "clt" => Ok(Regime::Clt),
            "gaussian" => Ok(Regime::Gaussian),
            "poisson" => Ok(Regime::Poisson),
            "localised" => Ok(Regime::Localised),
            "boundary" => Ok(Regime::Boundary),
            other => Err(Error::invalid(format!("unknown regime '{other}'"))),
        }
    }
}

/// Classification of one (p, t) cell plus the diagnostics that produced
/// it.  `rate` carries the winning regime's rate value and is NaN for the
/// below-range and boundary labels, which assert no rate.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct RegimeDiagnostics {
    pub regime: Regime,
    pub t_over_sigma: f64,
    pub gauss_ratio: f64,
    pub poisson_ratio: f64,
    pub density_side: f64,
    pub theta: f64,
    pub rate: f64,
}

/// Applies the winning regime's rate formula; errors on labels that carry
/// no rate.
pub fn rate_value(m: &Moments, t: f64, regime: Regime) -> Result<f64> {
    match regime {
        Regime::Clt | Regime::Gaussian => gaussian_rate(t, m.sigma2),
        Regime::Poisson => poisson_tail_rate(m.mu, t),
        Regime::Localised => localised_rate(m.n, m.k, t, m.p),
        Regime::BelowRange | Regime::Boundary => Err(Error::invalid(format!(
            "regime {regime} asserts no rate value"
        ))),
    }
}

/// Classifies the deviation t at the model given by `m`.
///
/// Order of precedence: below range (p under c N^{-2/k}), then the CLT
/// window (t within theta sigma), then the density boundary strip, then
/// the side-specific ratio test with threshold theta.
pub fn classify_regime(
    m: &Moments,
    t: f64,
    theta: f64,
    below_range_c: f64,
) -> Result<RegimeDiagnostics> {
    if !(theta >= 1.0) || !theta.is_finite() {
        return Err(Error::domain(format!("theta must be >= 1, got {theta}")));
    }
    if !(below_range_c > 0.0) || !below_range_c.is_finite() {
        return Err(Error::domain(format!(
            "below-range constant must be positive, got {below_range_c}"
        )));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::domain(format!("t must be >= 0, got {t}")));
    }
    let p = m.p;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "classification requires 0 < p < 1, got {p}"
        )));
    }
    let nf = m.n as f64;
    let log_inv_p = (1.0 / p).ln();
    let sigma = m.sigma2.sqrt();
    let t_over_sigma = if sigma > 0.0 {
        t / sigma
    } else if t > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let density_side = p * nf.powf(1.0 / (m.k as f64 - 1.0));
    let gauss_ratio = if t > 0.0 {
        t.sqrt() * log_inv_p * m.sigma2 / (t * t)
    } else {
        f64::NAN
    };
    let poisson_ratio = if t > 0.0 && m.mu > 0.0 {
        t.sqrt() * log_inv_p / poisson_tail_rate(m.mu, t)?
    } else {
        f64::NAN
    };

    let regime = if p < below_range_c * nf.powf(-2.0 / m.k as f64) {
        Regime::BelowRange
    } else if t_over_sigma <= theta {
        Regime::Clt
    } else if density_side >= 1.0 / theta && density_side <= theta {
        Regime::Boundary
    } else {
        let (ratio, winner) = if density_side < 1.0 / theta {
            (poisson_ratio, Regime::Poisson)
        } else {
            (gauss_ratio, Regime::Gaussian)
        };
        if ratio > theta {
            winner
        } else if ratio < 1.0 / theta {
            Regime::Localised
        } else {
            Regime::Boundary
        }
    };

    let rate = match regime {
        Regime::BelowRange | Regime::Boundary => f64::NAN,
        other => rate_value(m, t, other)?,
    };

    Ok(RegimeDiagnostics {
        regime,
        t_over_sigma,
        gauss_ratio,
        poisson_ratio,
        density_side,
        theta,
        rate,
    })
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct PhaseCell {
    pub p: f64,
    pub t: f64,
    #[serde(flatten)]
    pub diagnostics: RegimeDiagnostics,
}

/// Reference scales for a phase diagram at (n, k): the below-range
/// probability threshold and the sparse/dense boundary density, with the
/// exponents of N they correspond to.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct PhaseAnchors {
    pub n: u64,
    pub k: u32,
    pub p_below_range: f64,
    pub p_density_boundary: f64,
    pub below_range_exponent: f64,
    pub density_boundary_exponent: f64,
}

pub fn phase_anchors(n: u64, k: u32) -> PhaseAnchors {
    let nf = n as f64;
    PhaseAnchors {
        n,
        k,
        p_below_range: nf.powf(-2.0 / k as f64),
        p_density_boundary: nf.powf(-1.0 / (k as f64 - 1.0)),
        below_range_exponent: -2.0 / k as f64,
        density_boundary_exponent: -1.0 / (k as f64 - 1.0),
    }
}

/// Classifies a full (p, t) grid.  The second-moment table is computed
/// once, so the per-cell cost is O(1); for k = 3 the table itself is O(n)
/// and n = 10^8 is in scope.
pub fn phase_grid(
    n: u64,
    k: u32,
    p_grid: &[f64],
    t_grid: &[f64],
    theta: f64,
    below_range_c: f64,
) -> Result<Vec<PhaseCell>> {
    let table = second_moment_table(n, k)?;
    let mut cells = Vec::with_capacity(p_grid.len() * t_grid.len());
    for &p in p_grid {
        let m = table.moments_at(p)?;
        for &t in t_grid {
            let diagnostics = classify_regime(&m, t, theta, below_range_c)?;
            cells.push(PhaseCell { p, t, diagnostics });
        }
    }
    Ok(cells)
}

/// Geometric grid of `steps` points from lo to hi inclusive.
pub fn log_grid(lo: f64, hi: f64, steps: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::domain(format!(
            "log grid needs 0 < lo <= hi, got [{lo}, {hi}]"
        )));
    }
    if steps == 0 {
        return Err(Error::invalid("grid needs at least one point"));
    }
    if steps == 1 {
        return Ok(vec![lo]);
    }
    let ratio = (hi / lo).ln();
    Ok((0..steps)
        .map(|i| lo * (ratio * i as f64 / (steps - 1) as f64).exp())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_rate_values() {
        assert_eq!(poisson_rate(0.0).unwrap(), 0.0);
        let po1 = poisson_rate(1.0).unwrap();
        assert!((po1 - (2.0 * 2.0f64.ln() - 1.0)).abs() < 1e-15);
        let poe = poisson_rate(std::f64::consts::E - 1.0).unwrap();
        assert!((poe - 1.0).abs() < 1e-14);
        assert!(poisson_rate(-0.5).is_err());
    }

    #[test]
    fn bernoulli_kl_values() {
        assert_eq!(bernoulli_kl(0.3, 0.3).unwrap(), 0.0);
        let j1 = bernoulli_kl(1.0, 0.25).unwrap();
        assert!((j1 - 4.0f64.ln()).abs() < 1e-15);
        let j0 = bernoulli_kl(0.0, 0.5).unwrap();
        assert!((j0 - 2.0f64.ln()).abs() < 1e-15);
        assert!(bernoulli_kl(0.5, 0.0).is_err());
        assert!(bernoulli_kl(1.2, 0.5).is_err());
    }

    #[test]
    fn poisson_example_rate() {
        let r = poisson_tail_rate(1.0, 1.0).unwrap();
        assert!((r - 0.3862943611198906).abs() < 1e-15);
    }

    #[test]
    fn localised_rate_uses_interval_minimum() {
        // t = 1 needs 3 elements; rate = 3 log(1/p).
        let r = localised_rate(100, 3, 1.0, 0.1).unwrap();
        assert!((r - 3.0 * 10.0f64.ln()).abs() < 1e-12);
        // Unreachable t: infinity.
        assert_eq!(localised_rate(10, 3, 1e9, 0.1).unwrap(), f64::INFINITY);
    }

    #[test]
    fn classify_spot_checks() {
        let table = second_moment_table(1_000_000, 3).unwrap();

        // p below n^{-2/3} = 1e-4.
        let m = table.moments_at(1e-5).unwrap();
        let d = classify_regime(&m, 10.0, 3.0, 1.0).unwrap();
        assert_eq!(d.regime, Regime::BelowRange);

        // Small deviation: CLT window.
        let m = table.moments_at(0.01).unwrap();
        let sigma = m.sigma2.sqrt();
        let d = classify_regime(&m, sigma, 3.0, 1.0).unwrap();
        assert_eq!(d.regime, Regime::Clt);

        // Dense side, moderate t: Gaussian wins.
        let d = classify_regime(&m, 10.0 * sigma, 3.0, 1.0).unwrap();
        assert!(d.density_side > 3.0);
        assert_eq!(d.regime, Regime::Gaussian, "{d:?}");

        // Dense side, huge t: localised wins.
        let d = classify_regime(&m, 1e10, 3.0, 1.0).unwrap();
        assert_eq!(d.regime, Regime::Localised, "{d:?}");
        assert!(d.rate.is_finite());

        // Sparse side (mu ~ 0.3, sigma2 ~ mu), t a few units: Poisson wins.
        let m = table.moments_at(1.05e-4).unwrap();
        let d = classify_regime(&m, 2.0, 3.0, 1.0).unwrap();
        assert!(d.density_side < 1.0 / 3.0, "{d:?}");
        assert!(d.t_over_sigma > 3.0, "{d:?}");
        assert_eq!(d.regime, Regime::Poisson, "{d:?}");
    }

    #[test]
    fn grid_shape_and_anchors() {
        let g = log_grid(1e-6, 1e-1, 26).unwrap();
        assert_eq!(g.len(), 26);
        assert!((g[0] - 1e-6).abs() < 1e-18);
        assert!((g[25] - 1e-1).abs() < 1e-12);
        // 1e-4 appears exactly at index 10 (0.2 decades per step).
        assert!((g[10] - 1e-4).abs() / 1e-4 < 1e-12);

        let a = phase_anchors(1_000_000, 3);
        assert!((a.p_below_range - 1e-4).abs() < 1e-15);
        assert!((a.p_density_boundary - 1e-3).abs() < 1e-15);

        let cells = phase_grid(10_000, 3, &[1e-3, 1e-2], &[1.0, 100.0], 3.0, 1.0).unwrap();
        assert_eq!(cells.len(), 4);
    }

    #[test]
    fn poisson_ratio_monotone_in_t() {
        // Within a column the ratio decreases in t, so a localised cell
        // can never sit below a poisson cell.
        let table = second_moment_table(100_000, 3).unwrap();
        let m = table.moments_at(3e-4).unwrap();
        let mut prev = f64::INFINITY;
        for t in [1.0, 3.0, 10.0, 30.0, 100.0] {
            let d = classify_regime(&m, t, 3.0, 1.0).unwrap();
            assert!(d.poisson_ratio <= prev);
            prev = d.poisson_ratio;
        }
    }
}
