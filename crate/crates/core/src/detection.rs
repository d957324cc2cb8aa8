//! Detection and false-alarm probabilities of one PRF channel under the
//! correlated bivariate-Rician model, and M-of-L fusion across channels.
//!
//! The pulse-processing (PP) target bin `R₁` and the subpulse-processing (SP)
//! target bin `R₂` share a common complex component `A₀ + jB₀`:
//!
//! ```text
//! G_p = σ_p (√(1-λ_p²)·(A_p + jB_p) + λ_p·(A₀ + jB₀)),   R_p = |G_p|
//! ```
//!
//! with all Gaussians of variance 1/2 and `E[A₀ + jB₀] = m_re + j·m_im`.
//! Competitor noise bins are Rayleigh with CDF `1 - exp(-x²/(2σ_p²))`.
//! A detection needs `R₁` above all `M-1` PP competitors and `R₂` above all
//! `N-1` SP competitors; a false alarm needs some competitor above the target
//! in both domains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    i0_log_unchecked, i0e_unchecked, integrate_peaked, ln_binomial, CompensatedSum, QuadSpec,
};

/// Tolerance on the raw closed-form value outside `[0, 1]`.
const PROBABILITY_SLACK: f64 = 1e-9;

/// Largest acceptable rounding error bound of an alternating closed-form sum.
const MAX_CANCELLATION_ERROR: f64 = 1e-7;

/// How an SNR in dB becomes the Rician parameters.
///
/// With time-domain noise power `σ_t²`, coherent integration over `M` pulses
/// and `N` subpulses gives `σ₁² = M·σ_t²`, `σ₂² = N·σ_t²`, and the SNR
/// definition `SNR₁ = λ₁²·m / (2σ₁²)` gives `m = 2·M·σ_t²·SNR₁/λ₁²`.
///
/// The probabilities depend on the noise scale only through `m`, so
/// `noise_power` sets where the SNR axis sits. The default of 0.04 places the
/// published operating points; [`SnrMapping::UNIT_NOISE`] is the literal
/// `σ_t² = 1` reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrMapping {
    pub noise_power: f64,
}

impl SnrMapping {
    pub const UNIT_NOISE: SnrMapping = SnrMapping { noise_power: 1.0 };
    pub const FIGURE_CALIBRATED: SnrMapping = SnrMapping { noise_power: 0.04 };

    pub fn validate(&self) -> Result<()> {
        if self.noise_power > 0.0 && self.noise_power.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "noise power must be positive, got {}",
                self.noise_power
            )))
        }
    }
}

impl Default for SnrMapping {
    fn default() -> Self {
        Self::FIGURE_CALIBRATED
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// An SNR₁ operating point and its SP-domain counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrPoint {
    pub snr1_db: f64,
}

impl SnrPoint {
    /// SNR₂ = SNR₁·(λ₂/λ₁)²·(M/N).
    pub fn snr2_db(&self, lambda1: f64, lambda2: f64, num_pulses: usize, num_subpulses: usize) -> f64 {
        let ratio = (lambda2 / lambda1).powi(2) * num_pulses as f64 / num_subpulses as f64;
        self.snr1_db + linear_to_db(ratio)
    }
}

/// Parameters of one channel's Rician pair and its competitors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelStats {
    sigma1: f64,
    sigma2: f64,
    lambda1: f64,
    lambda2: f64,
    m_re: f64,
    m_im: f64,
    num_pulses: usize,
    num_subpulses: usize,
    m: f64,
    omega1_sq: f64,
    omega2_sq: f64,
    xi: f64,
}

impl ChannelStats {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sigma1: f64,
        sigma2: f64,
        lambda1: f64,
        lambda2: f64,
        m_re: f64,
        m_im: f64,
        num_pulses: usize,
        num_subpulses: usize,
    ) -> Result<Self> {
        for (name, s) in [("sigma1", sigma1), ("sigma2", sigma2)] {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {s}")));
            }
        }
        for (name, l) in [("lambda1", lambda1), ("lambda2", lambda2)] {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1), got {l}")));
            }
        }
        if !m_re.is_finite() || !m_im.is_finite() {
            return Err(Error::invalid("mean components must be finite"));
        }
        if num_pulses == 0 || num_subpulses == 0 {
            return Err(Error::invalid("pulse and subpulse counts must be at least 1"));
        }
        let l1 = lambda1 * lambda1;
        let l2 = lambda2 * lambda2;
        Ok(Self {
            sigma1,
            sigma2,
            lambda1,
            lambda2,
            m_re,
            m_im,
            num_pulses,
            num_subpulses,
            m: m_re * m_re + m_im * m_im,
            omega1_sq: sigma1 * sigma1 * (1.0 - l1) / 2.0,
            omega2_sq: sigma2 * sigma2 * (1.0 - l2) / 2.0,
            xi: 1.0 + l1 / (1.0 - l1) + l2 / (1.0 - l2),
        })
    }

    /// Parameters for an SNR₁ operating point under the default mapping.
    pub fn from_snr(snr1_db: f64, lambda1: f64, lambda2: f64, num_pulses: usize, num_subpulses: usize) -> Result<Self> {
        Self::from_snr_with(SnrMapping::default(), snr1_db, lambda1, lambda2, num_pulses, num_subpulses)
    }

    pub fn from_snr_with(
        mapping: SnrMapping,
        snr1_db: f64,
        lambda1: f64,
        lambda2: f64,
        num_pulses: usize,
        num_subpulses: usize,
    ) -> Result<Self> {
        mapping.validate()?;
        if snr1_db.is_nan() || snr1_db == f64::INFINITY {
            return Err(Error::invalid(format!("SNR must be finite or -inf dB, got {snr1_db}")));
        }
        if !(lambda1 > 0.0 && lambda1 < 1.0) {
            return Err(Error::invalid(format!("lambda1 must lie in (0, 1), got {lambda1}")));
        }
        let sigma1_sq = num_pulses as f64 * mapping.noise_power;
        let sigma2_sq = num_subpulses as f64 * mapping.noise_power;
        let m = 2.0 * sigma1_sq * db_to_linear(snr1_db) / (lambda1 * lambda1);
        Self::new(
            sigma1_sq.sqrt(),
            sigma2_sq.sqrt(),
            lambda1,
            lambda2,
            m.sqrt(),
            0.0,
            num_pulses,
            num_subpulses,
        )
    }

    /// Same channel with the mean pair replaced; used for phase rotations.
    pub fn with_mean(&self, m_re: f64, m_im: f64) -> Result<Self> {
        Self::new(
            self.sigma1,
            self.sigma2,
            self.lambda1,
            self.lambda2,
            m_re,
            m_im,
            self.num_pulses,
            self.num_subpulses,
        )
    }

    pub fn sigma1(&self) -> f64 {
        self.sigma1
    }
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }
    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }
    pub fn m_re(&self) -> f64 {
        self.m_re
    }
    pub fn m_im(&self) -> f64 {
        self.m_im
    }
    pub fn num_pulses(&self) -> usize {
        self.num_pulses
    }
    pub fn num_subpulses(&self) -> usize {
        self.num_subpulses
    }
    /// Squared magnitude of the common mean, 𝐦 = m_re² + m_im².
    pub fn m(&self) -> f64 {
        self.m
    }
    pub fn omega1_sq(&self) -> f64 {
        self.omega1_sq
    }
    pub fn omega2_sq(&self) -> f64 {
        self.omega2_sq
    }
    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// Correlation coefficient of the complex pair (G₁, G₂).
    pub fn pair_correlation(&self) -> f64 {
        self.lambda1 * self.lambda2
    }

    fn sigma_sq(&self) -> [f64; 2] {
        [self.sigma1 * self.sigma1, self.sigma2 * self.sigma2]
    }

    fn omega_sq(&self) -> [f64; 2] {
        [self.omega1_sq, self.omega2_sq]
    }

    fn lambda_sq(&self) -> [f64; 2] {
        [self.lambda1 * self.lambda1, self.lambda2 * self.lambda2]
    }

    /// `λ_p²σ_p⁴ / (2Ω_p²(jΩ_p² + σ_p²))` for domain `p`.
    fn correction(&self, p: usize, j: usize) -> f64 {
        let (s, o, l) = (self.sigma_sq()[p], self.omega_sq()[p], self.lambda_sq()[p]);
        l * s * s / (2.0 * o * (j as f64 * o + s))
    }

    /// Kernel `(V, U)` for `j1` PP and `j2` SP competitors taken jointly:
    /// `E[exp(-j1 R₁²/2σ₁² - j2 R₂²/2σ₂²)] = (V/U)·exp(-m + m/U)`.
    fn kernel(&self, j1: usize, j2: usize) -> (f64, f64) {
        let [s1, s2] = self.sigma_sq();
        let [o1, o2] = self.omega_sq();
        let v = s1 / (o1 * j1 as f64 + s1) * s2 / (o2 * j2 as f64 + s2);
        let u = self.xi - self.correction(0, j1) - self.correction(1, j2);
        (v, u)
    }
}

/// `ln(V/U) - m + m/U`, or a domain error when `U ≤ 0`.
fn log_kernel_term(m: f64, v: f64, u: f64, j1: usize, j2: usize) -> Result<f64> {
    if !(u > 0.0) {
        return Err(Error::NumericalDomain(format!(
            "auxiliary denominator {u} is not positive at (j1, j2) = ({j1}, {j2})"
        )));
    }
    Ok(v.ln() - u.ln() - m + m / u)
}

struct SignedSum {
    sum: CompensatedSum,
    magnitude: f64,
}

impl SignedSum {
    fn new() -> Self {
        Self {
            sum: CompensatedSum::default(),
            magnitude: 0.0,
        }
    }

    fn add(&mut self, negative: bool, log_abs: f64) {
        let t = log_abs.exp();
        self.magnitude += t;
        self.sum.add(if negative { -t } else { t });
    }

    fn finish(self, what: &str) -> Result<f64> {
        let v = self.sum.value();
        let rounding = self.magnitude * f64::EPSILON * 16.0;
        if rounding > MAX_CANCELLATION_ERROR {
            return Err(Error::NumericalDomain(format!(
                "{what}: alternating sum loses precision (term magnitude {:.3e})",
                self.magnitude
            )));
        }
        if !(-PROBABILITY_SLACK..=1.0 + PROBABILITY_SLACK).contains(&v) {
            return Err(Error::NumericalDomain(format!("{what} evaluated to {v}, outside [0, 1]")));
        }
        Ok(v.clamp(0.0, 1.0))
    }
}

/// Closed-form PD:
///
/// ```text
/// PD = Σ_{j1=0}^{M-1} Σ_{j2=0}^{N-1} C(M-1,j1)·C(N-1,j2)·(-1)^{j1+j2}·(V/U)·exp(-m + m/U)
/// V  = σ₁²/(j1·Ω₁² + σ₁²) · σ₂²/(j2·Ω₂² + σ₂²)
/// U  = ξ - λ₁²σ₁⁴/(2Ω₁²(j1·Ω₁² + σ₁²)) - λ₂²σ₂⁴/(2Ω₂²(j2·Ω₂² + σ₂²))
/// ```
///
/// where `j1 = M-1-k` and `j2 = N-1-l` count the competitors in each product.
pub fn pd_closed_form(stats: &ChannelStats) -> Result<f64> {
    let (k1, k2) = (stats.num_pulses - 1, stats.num_subpulses - 1);
    let mut acc = SignedSum::new();
    for j1 in 0..=k1 {
        for j2 in 0..=k2 {
            let (v, u) = stats.kernel(j1, j2);
            let lt = log_kernel_term(stats.m, v, u, j1, j2)?;
            acc.add((j1 + j2) % 2 == 1, ln_binomial(k1, j1) + ln_binomial(k2, j2) + lt);
        }
    }
    acc.finish("PD")
}

/// Closed-form PFA:
///
/// ```text
/// PFA = Σ_{k=1}^{M-1} Σ_{l=1}^{N-1} (-1)^{k+l}·C(M-1,k)·C(N-1,l)·(Q/P)·exp(-m + m/P)
/// ```
///
/// with `P(k,l)`, `Q(k,l)` the PD kernel evaluated at `k` PP and `l` SP
/// competitors. Zero when either domain has no competitor.
pub fn pfa_closed_form(stats: &ChannelStats) -> Result<f64> {
    let (k1, k2) = (stats.num_pulses - 1, stats.num_subpulses - 1);
    let mut acc = SignedSum::new();
    for k in 1..=k1 {
        for l in 1..=k2 {
            let (q, p) = stats.kernel(k, l);
            let lt = log_kernel_term(stats.m, q, p, k, l)?;
            acc.add((k + l) % 2 == 1, ln_binomial(k1, k) + ln_binomial(k2, l) + lt);
        }
    }
    acc.finish("PFA")
}

/// PD with the auxiliary denominator exactly as typeset in the source
/// proposition, `U' = ξ(1 + c₁ + c₂)` with the printed sign of `(k - M + 1)`.
/// Diagnostic only: it gives `PD ≠ 1` at `M = N = 1`. Not clamped.
pub fn pd_printed_xi_factored(stats: &ChannelStats) -> Result<f64> {
    let (k1, k2) = (stats.num_pulses - 1, stats.num_subpulses - 1);
    let mut acc = CompensatedSum::default();
    for j1 in 0..=k1 {
        for j2 in 0..=k2 {
            let (v, _) = stats.kernel(j1, j2);
            let u = stats.xi * (1.0 + stats.correction(0, j1) + stats.correction(1, j2));
            let lt = log_kernel_term(stats.m, v, u, j1, j2)?;
            let t = (ln_binomial(k1, j1) + ln_binomial(k2, j2) + lt).exp();
            acc.add(if (j1 + j2) % 2 == 1 { -t } else { t });
        }
    }
    Ok(acc.value())
}

/// PFA restricted to the diagonal terms `(k, k)` with alternating sign
/// `(-1)^{k+1}`, as the printed closed form enumerates them. Diagnostic only.
pub fn pfa_printed_diagonal(stats: &ChannelStats) -> Result<f64> {
    let (k1, k2) = (stats.num_pulses - 1, stats.num_subpulses - 1);
    let mut acc = CompensatedSum::default();
    for k in 1..=k1.min(k2) {
        let (q, p) = stats.kernel(k, k);
        let lt = log_kernel_term(stats.m, q, p, k, k)?;
        let t = (ln_binomial(k1, k) + ln_binomial(k2, k) + lt).exp();
        acc.add(if k % 2 == 0 { -t } else { t });
    }
    Ok(acc.value())
}

/// Density of a Rician amplitude with noncentrality `nu` and per-component
/// variance `omega_sq`.
pub fn rician_pdf(r: f64, nu: f64, omega_sq: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let z = r * nu / omega_sq;
    r / omega_sq * (-(r - nu).powi(2) / (2.0 * omega_sq)).exp() * i0e_unchecked(z)
}

/// Density of `t = |A₀ + jB₀|²` expressed in `u = √t`, including the Jacobian.
fn common_power_density_u(u: f64, m: f64) -> f64 {
    let sm = m.sqrt();
    2.0 * u * (-(u - sm).powi(2)).exp() * i0e_unchecked(2.0 * u * sm)
}

/// `Pr(R > max of k Rayleigh competitors)` (`survivor = false`) or its
/// complement (`survivor = true`) for a Rician target of noncentrality `nu`,
/// by direct quadrature over the target amplitude.
fn conditional_win_probability(
    nu: f64,
    omega_sq: f64,
    sigma_sq: f64,
    competitors: usize,
    survivor: bool,
    spec: &QuadSpec,
) -> Result<f64> {
    if competitors == 0 {
        return Ok(if survivor { 0.0 } else { 1.0 });
    }
    let k = competitors as f64;
    let f = |r: f64| {
        // ln F(r) with F the Rayleigh CDF.
        let ln_cdf = (-(-r * r / (2.0 * sigma_sq)).exp()).ln_1p();
        let g = if survivor { -(k * ln_cdf).exp_m1() } else { (k * ln_cdf).exp() };
        rician_pdf(r, nu, omega_sq) * g
    };
    integrate_peaked(f, nu, omega_sq.sqrt(), spec)
}

fn oracle(stats: &ChannelStats, survivor: bool, spec: &QuadSpec) -> Result<f64> {
    spec.validate()?;
    let inner_spec = QuadSpec {
        rel_tol: spec.rel_tol * 1e-2,
        abs_tol: spec.abs_tol * 1e-2,
        ..*spec
    };
    let counts = [stats.num_pulses - 1, stats.num_subpulses - 1];
    if survivor && counts.contains(&0) {
        return Ok(0.0);
    }
    let [s1, s2] = stats.sigma_sq();
    let err = std::cell::Cell::new(None);
    let f = |u: f64| {
        let mut prod = common_power_density_u(u, stats.m);
        if prod == 0.0 {
            return 0.0;
        }
        for (p, (&sigma_sq, &omega_sq)) in [s1, s2].iter().zip(&stats.omega_sq()).enumerate() {
            let lambda = [stats.lambda1, stats.lambda2][p];
            let nu = sigma_sq.sqrt() * lambda * u;
            match conditional_win_probability(nu, omega_sq, sigma_sq, counts[p], survivor, &inner_spec) {
                Ok(v) => prod *= v,
                Err(e) => {
                    err.set(Some(e));
                    return 0.0;
                }
            }
        }
        prod
    };
    let v = integrate_peaked(f, stats.m.sqrt(), 1.0, spec)?;
    if let Some(e) = err.take() {
        return Err(e);
    }
    Ok(v)
}

/// PD by conditioning on the common component: given `t = |A₀ + jB₀|²`, the
/// two target amplitudes are independent Ricians with noncentrality
/// `σ_p λ_p √t` and per-component variance `Ω_p²`, so
/// `PD = ∫ f_t(t) · Π_p Pr(R_p > all competitors | t) dt`, each inner
/// probability integrated directly over the amplitude.
pub fn pd_oracle(stats: &ChannelStats, spec: &QuadSpec) -> Result<f64> {
    oracle(stats, false, spec)
}

/// PFA by the same conditioning as [`pd_oracle`] with the inner
/// probabilities replaced by `Pr(some competitor > R_p | t)`.
pub fn pfa_oracle(stats: &ChannelStats, spec: &QuadSpec) -> Result<f64> {
    oracle(stats, true, spec)
}

/// Joint density of `(R₁, R₂)`:
///
/// ```text
/// f(r₁, r₂) = ∫₀^∞ e^{-ξt - m} I₀(2√(mt)) Π_p r_p/Ω_p² · e^{-r_p²/(2Ω_p²)} I₀(r_p σ_p λ_p √t / Ω_p²) dt
/// ```
pub fn bivariate_rician_pdf(r1: f64, r2: f64, stats: &ChannelStats, spec: &QuadSpec) -> Result<f64> {
    if !(r1 >= 0.0 && r2 >= 0.0) || !r1.is_finite() || !r2.is_finite() {
        return Err(Error::invalid("amplitudes must be finite and non-negative"));
    }
    if r1 == 0.0 || r2 == 0.0 {
        return Ok(0.0);
    }
    let m = stats.m;
    let sm = m.sqrt();
    let r = [r1, r2];
    let sig = [stats.sigma1, stats.sigma2];
    let lam = [stats.lambda1, stats.lambda2];
    let om = stats.omega_sq();
    let log_const: f64 = (0..2).map(|p| r[p].ln() - om[p].ln() - r[p] * r[p] / (2.0 * om[p])).sum();
    let slopes: [f64; 2] = std::array::from_fn(|p| r[p] * sig[p] * lam[p] / om[p]);
    // Substituting t = u² turns the exponent into -ξu² + (linear in u) for large u.
    let f = |u: f64| {
        if u <= 0.0 {
            return 0.0;
        }
        let mut lg = (2.0 * u).ln() - stats.xi * u * u - m + i0_log_unchecked(2.0 * sm * u) + log_const;
        for p in 0..2 {
            lg += i0_log_unchecked(slopes[p] * u);
        }
        lg.exp()
    };
    let b = 2.0 * sm + slopes[0] + slopes[1];
    let center = b / (2.0 * stats.xi);
    let width = 1.0 / (2.0 * stats.xi).sqrt();
    integrate_peaked(f, center, width, spec)
}

/// Declare detection when at least `required` of `total` channels detect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionRule {
    pub required: usize,
    pub total: usize,
}

impl FusionRule {
    pub fn new(required: usize, total: usize) -> Result<Self> {
        let r = Self { required, total };
        r.validate()?;
        Ok(r)
    }

    /// The all-channels rule (𝓜 = L).
    pub fn all(total: usize) -> Result<Self> {
        Self::new(total, total)
    }

    pub fn validate(&self) -> Result<()> {
        if self.required == 0 || self.required > self.total {
            return Err(Error::invalid(format!(
                "fusion rule needs 1 <= required <= total, got {} of {}",
                self.required, self.total
            )));
        }
        Ok(())
    }
}

/// Probability that at least `rule.required` of the independent channel
/// events occur (a Poisson-binomial tail). For `required == total` this is
/// exactly `Π p_i`.
pub fn combine_m_of_l(per_channel: &[f64], rule: FusionRule) -> Result<f64> {
    rule.validate()?;
    if per_channel.len() != rule.total {
        return Err(Error::invalid(format!(
            "fusion rule expects {} channels, got {}",
            rule.total,
            per_channel.len()
        )));
    }
    if let Some(p) = per_channel.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    if rule.required == rule.total {
        return Ok(per_channel.iter().product());
    }
    // dist[c] = Pr(exactly c events so far).
    let mut dist = vec![0.0; per_channel.len() + 1];
    dist[0] = 1.0;
    for (i, &p) in per_channel.iter().enumerate() {
        for c in (0..=i + 1).rev() {
            let stay = dist[c] * (1.0 - p);
            let step = if c > 0 { dist[c - 1] * p } else { 0.0 };
            dist[c] = stay + step;
        }
    }
    Ok(dist[rule.required..].iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const L1: f64 = 0.5;
    const L2: f64 = 0.99;

    fn stats(snr_db: f64, m: usize, n: usize) -> ChannelStats {
        ChannelStats::from_snr(snr_db, L1, L2, m, n).unwrap()
    }

    #[test]
    fn derived_quantities() {
        let s = ChannelStats::new(2.0, 3.0, 0.5, 0.6, 1.0, 2.0, 4, 5).unwrap();
        assert_eq!(s.m(), 5.0);
        assert!((s.omega1_sq() - 4.0 * 0.75 / 2.0).abs() < 1e-15);
        assert!((s.omega2_sq() - 9.0 * 0.64 / 2.0).abs() < 1e-15);
        assert!((s.xi() - (1.0 + 0.25 / 0.75 + 0.36 / 0.64)).abs() < 1e-15);
        assert!(s.xi() >= 1.0);
        assert!((s.pair_correlation() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn rejects_singular_lambda() {
        assert!(ChannelStats::new(1.0, 1.0, 1.0, 0.5, 0.0, 0.0, 2, 2).is_err());
        assert!(ChannelStats::new(1.0, 1.0, 0.5, 0.0, 0.0, 0.0, 2, 2).is_err());
        assert!(ChannelStats::from_snr(0.0, 1.0, 0.5, 2, 2).is_err());
        assert!(ChannelStats::new(1.0, 1.0, 0.5, 0.5, 0.0, 0.0, 0, 2).is_err());
    }

    #[test]
    fn snr_mapping_examples() {
        let s = ChannelStats::from_snr_with(SnrMapping::UNIT_NOISE, f64::NEG_INFINITY, L1, L2, 7, 8).unwrap();
        assert_eq!(s.m(), 0.0);
        let s = ChannelStats::from_snr_with(SnrMapping::UNIT_NOISE, 10.0, L1, L2, 7, 8).unwrap();
        assert!((s.m() - 560.0).abs() < 1e-9);
        assert!((s.sigma1() * s.sigma1() - 7.0).abs() < 1e-12);
        let s = stats(10.0, 7, 8);
        assert!((s.m() - 0.32 * 7.0 * 10.0).abs() < 1e-9);

        let ratio = db_to_linear(SnrPoint { snr1_db: 3.0 }.snr2_db(L1, L2, 7, 8) - 3.0);
        assert!((ratio - (0.99f64 / 0.5).powi(2) * 7.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_channel_always_detects() {
        for snr in [-10.0, 0.0, 20.0] {
            let s = stats(snr, 1, 1);
            assert!((pd_closed_form(&s).unwrap() - 1.0).abs() < 1e-15);
            assert_eq!(pfa_closed_form(&s).unwrap(), 0.0);
        }
        assert_eq!(pfa_closed_form(&stats(5.0, 1, 8)).unwrap(), 0.0);
        assert_eq!(pfa_closed_form(&stats(5.0, 7, 1)).unwrap(), 0.0);
    }

    #[test]
    fn published_pd_operating_points() {
        for (m, want) in [(7, 0.66), (11, 0.78), (13, 0.85), (17, 0.93)] {
            let pd = pd_closed_form(&stats(10.0, m, 8)).unwrap();
            assert!((pd - want).abs() <= 0.02, "M={m}: {pd} vs {want}");
        }
    }

    #[test]
    fn unit_noise_mapping_saturates() {
        let s = ChannelStats::from_snr_with(SnrMapping::UNIT_NOISE, 10.0, L1, L2, 7, 8).unwrap();
        assert!(pd_closed_form(&s).unwrap() > 0.999);
    }

    /// With m = 0 the target R is Rayleigh with per-component variance σ²/2, so
    /// Pr(R > X) = 1 - E[exp(-R²/2σ²)] = 1 - 1/(1 + 1/2) = 1/3 for any σ.
    #[test]
    fn zero_mean_single_competitor_has_simple_form() {
        let s = ChannelStats::new(1.3, 0.7, L1, L2, 0.0, 0.0, 2, 1).unwrap();
        let pd = pd_closed_form(&s).unwrap();
        assert!((pd - 1.0 / 3.0).abs() < 1e-12, "{pd}");
        let s = ChannelStats::new(1.3, 0.7, L1, L2, 0.0, 0.0, 1, 2).unwrap();
        assert!((pd_closed_form(&s).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_matches_closed_form() {
        let spec = QuadSpec::default();
        for (snr, m, n) in [(0.0, 3, 8), (8.0, 7, 8), (16.0, 17, 8), (4.0, 2, 2), (-3.0, 5, 3)] {
            let s = stats(snr, m, n);
            let (a, b) = (pd_closed_form(&s).unwrap(), pd_oracle(&s, &spec).unwrap());
            assert!((a - b).abs() < 1e-8, "PD snr={snr} M={m}: {a} vs {b}");
            let (a, b) = (pfa_closed_form(&s).unwrap(), pfa_oracle(&s, &spec).unwrap());
            assert!((a - b).abs() < 1e-8, "PFA snr={snr} M={m}: {a} vs {b}");
        }
    }

    #[test]
    fn oracle_degenerate_cases() {
        let spec = QuadSpec::default();
        let s = stats(3.0, 1, 1);
        assert!((pd_oracle(&s, &spec).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(pfa_oracle(&stats(3.0, 1, 5), &spec).unwrap(), 0.0);
    }

    /// Exact zero-noncentrality inner probability: for a Rayleigh target with
    /// per-component variance Ω² against k competitors with scale σ²,
    /// Pr = Σ_j C(k,j)(-1)^j σ²/(σ² + jΩ²).
    #[test]
    fn inner_probability_matches_binomial_expansion() {
        let spec = QuadSpec::default();
        for (k, sigma_sq, omega_sq) in [(1usize, 1.0, 0.375), (6, 2.0, 0.2), (16, 0.5, 0.3)] {
            let direct = conditional_win_probability(0.0, omega_sq, sigma_sq, k, false, &spec).unwrap();
            let expansion: f64 = (0..=k)
                .map(|j| {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    sign * ln_binomial(k, j).exp() * sigma_sq / (sigma_sq + j as f64 * omega_sq)
                })
                .sum();
            assert!((direct - expansion).abs() < 1e-9, "k={k}: {direct} vs {expansion}");
            let surv = conditional_win_probability(0.0, omega_sq, sigma_sq, k, true, &spec).unwrap();
            assert!((surv + direct - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn printed_variants_differ_from_oracle_checked_forms() {
        let s = stats(10.0, 7, 8);
        let pd = pd_closed_form(&s).unwrap();
        let printed = pd_printed_xi_factored(&s).unwrap();
        assert!((pd - printed).abs() > 1e-3);
        let degenerate = pd_printed_xi_factored(&stats(10.0, 1, 1)).unwrap();
        assert!((degenerate - 1.0).abs() > 1e-3);

        let s = stats(5.0, 7, 8);
        let diag = pfa_printed_diagonal(&s).unwrap();
        let full = pfa_closed_form(&s).unwrap();
        assert!((diag - full).abs() > 1e-3);
    }

    #[test]
    fn bivariate_pdf_vanishes_on_axes() {
        let s = stats(3.0, 7, 8);
        let spec = QuadSpec::default();
        assert_eq!(bivariate_rician_pdf(0.0, 0.0, &s, &spec).unwrap(), 0.0);
        assert_eq!(bivariate_rician_pdf(0.0, 1.0, &s, &spec).unwrap(), 0.0);
        assert!(bivariate_rician_pdf(-1.0, 1.0, &s, &spec).is_err());
    }

    #[test]
    fn bivariate_pdf_marginal_is_rician() {
        // Marginally G₁ is complex Gaussian with mean σ₁λ₁(m_re + j·m_im) and
        // per-component variance σ₁²/2.
        let s = ChannelStats::new(1.0, 1.0, L1, L2, 2.0, 0.0, 3, 3).unwrap();
        let spec = QuadSpec::default();
        let nu = s.sigma1() * s.lambda1() * s.m().sqrt();
        let var = s.sigma1().powi(2) / 2.0;
        for r1 in [0.3, 1.0, 1.7, 2.5] {
            let marginal = crate::numerics::integrate(
                |r2| bivariate_rician_pdf(r1, r2, &s, &spec).unwrap(),
                0.0,
                12.0,
                &QuadSpec {
                    rel_tol: 1e-10,
                    abs_tol: 1e-13,
                    max_subdivisions: 2000,
                },
            )
            .unwrap();
            let want = rician_pdf(r1, nu, var);
            assert!((marginal - want).abs() < 1e-6, "r1={r1}: {marginal} vs {want}");
        }
    }

    #[test]
    fn bivariate_pdf_normalizes() {
        let s = ChannelStats::new(1.0, 1.0, L1, L2, 2.0, 0.0, 3, 3).unwrap();
        let spec = QuadSpec::default();
        let loose = QuadSpec {
            rel_tol: 1e-7,
            abs_tol: 1e-9,
            max_subdivisions: 2000,
        };
        let total = crate::numerics::integrate(
            |r1| {
                crate::numerics::integrate(
                    |r2| bivariate_rician_pdf(r1, r2, &s, &spec).unwrap(),
                    0.0,
                    10.0,
                    &loose,
                )
                .unwrap()
            },
            0.0,
            10.0,
            &loose,
        )
        .unwrap();
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn fusion_examples() {
        let p = [0.9, 0.8, 0.7, 0.6];
        assert_eq!(combine_m_of_l(&p, FusionRule::all(4).unwrap()).unwrap(), 0.9 * 0.8 * 0.7 * 0.6);
        let v = combine_m_of_l(&[0.9, 0.8], FusionRule::new(1, 2).unwrap()).unwrap();
        assert!((v - (0.9 * 0.2 + 0.1 * 0.8 + 0.9 * 0.8)).abs() < 1e-15);
        assert_eq!(combine_m_of_l(&[0.37], FusionRule::new(1, 1).unwrap()).unwrap(), 0.37);
        assert!(FusionRule::new(3, 2).is_err());
        assert!(FusionRule::new(0, 2).is_err());
        assert!(combine_m_of_l(&[0.5], FusionRule::new(1, 2).unwrap()).is_err());
        assert!(combine_m_of_l(&[1.5, 0.5], FusionRule::new(1, 2).unwrap()).is_err());
    }

    fn brute_force_fusion(p: &[f64], required: usize) -> f64 {
        let l = p.len();
        (0u32..(1 << l))
            .filter(|mask| mask.count_ones() as usize >= required)
            .map(|mask| {
                (0..l)
                    .map(|i| if mask & (1 << i) != 0 { p[i] } else { 1.0 - p[i] })
                    .product::<f64>()
            })
            .sum()
    }

    proptest! {
        #[test]
        fn fusion_matches_enumeration(
            p in prop::collection::vec(0.0f64..=1.0, 1..=6),
            pick in 0usize..6,
        ) {
            let required = pick % p.len() + 1;
            let rule = FusionRule::new(required, p.len()).unwrap();
            let v = combine_m_of_l(&p, rule).unwrap();
            prop_assert!((v - brute_force_fusion(&p, required)).abs() < 1e-12);
        }

        #[test]
        fn pd_plus_pfa_bounded(snr in -10.0f64..20.0, m in 1usize..20, n in 1usize..10) {
            let s = stats(snr, m, n);
            let pd = pd_closed_form(&s).unwrap();
            let pfa = pfa_closed_form(&s).unwrap();
            prop_assert!(pd + pfa <= 1.0 + 1e-9);
        }

        #[test]
        fn phase_rotation_invariance(snr in -5.0f64..15.0, theta in 0.0f64..std::f64::consts::TAU) {
            let s = stats(snr, 7, 8);
            let amp = s.m().sqrt();
            let q = s.with_mean(0.0, amp).unwrap();
            prop_assert_eq!(s.m(), q.m());
            prop_assert_eq!(pd_closed_form(&s).unwrap(), pd_closed_form(&q).unwrap());
            prop_assert_eq!(pfa_closed_form(&s).unwrap(), pfa_closed_form(&q).unwrap());
            let r = s.with_mean(amp * theta.cos(), amp * theta.sin()).unwrap();
            prop_assert!((pd_closed_form(&s).unwrap() - pd_closed_form(&r).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn joint_scaling_invariance(snr in -5.0f64..15.0, c in 0.1f64..10.0, m in 2usize..18) {
            let s = stats(snr, m, 8);
            let t = ChannelStats::new(
                s.sigma1() * c, s.sigma2() * c, L1, L2, s.m_re(), 0.0, m, 8,
            ).unwrap();
            prop_assert!((pd_closed_form(&s).unwrap() - pd_closed_form(&t).unwrap()).abs() < 1e-10);
            prop_assert!((pfa_closed_form(&s).unwrap() - pfa_closed_form(&t).unwrap()).abs() < 1e-10);
        }

        #[test]
        fn monotone_in_snr(m in 2usize..18, n in 2usize..9, lo in -5.0f64..14.0, step in 0.01f64..1.0) {
            let a = stats(lo, m, n);
            let b = stats(lo + step, m, n);
            prop_assert!(pd_closed_form(&b).unwrap() >= pd_closed_form(&a).unwrap() - 1e-12);
            prop_assert!(pfa_closed_form(&b).unwrap() <= pfa_closed_form(&a).unwrap() + 1e-12);
        }
    }
}
