//! Law of `Z = ||u_{1:k} - c||` for `u` uniform on the unit sphere in
//! `R^{n-d+k}`, and the Monte-Carlo-free test built on it.
//!
//! For `k >= 2` and `||c|| > 0` the density is `f(z) = z g(z)` with
//! `g(z) = int h(z, t) dt` over `t = ||u_{1:k}||^2` in
//! `[(c - z)^2, min((c + z)^2, 1)]` and
//! `h = (D / c) (1 - t)^{(n-d-2)/2} (t - s^2)^{(k-3)/2}`,
//! `s = (t + c^2 - z^2) / (2c)`.

use nalgebra::DVector;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::ltest::{affine_piece, AffinePiece};
use crate::model::{sufficient_state, ModelContext, SufficientState};
use crate::outcome::{Method, TestOutcome};
use crate::quadrature::{integrate, integrate_with_breaks, QuadOptions};
use crate::solver::TuningChoice;
use crate::special::{beta_cdf, beta_sf};

/// `||c||` at or below this uses the exact Beta branch.
pub const ZERO_CENTER: f64 = 1e-10;

const INNER: QuadOptions = QuadOptions {
    abs_tol: 1e-14,
    rel_tol: 1e-11,
    max_intervals: 400,
};
const OUTER: QuadOptions = QuadOptions {
    abs_tol: 1e-10,
    rel_tol: 1e-10,
    max_intervals: 400,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecenteredLaw {
    pub c_norm: f64,
    pub k: usize,
    pub resid_df: usize,
    /// `ln D`.
    pub ln_d: f64,
}

impl RecenteredLaw {
    pub fn new(c_norm: f64, k: usize, resid_df: usize) -> Result<Self> {
        if resid_df == 0 {
            return Err(Error::BadRegime("the recentered law needs n - d >= 1"));
        }
        if k == 0 || !(c_norm >= 0.0) || !c_norm.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "need k >= 1 and a finite center norm, got k = {k}, |c| = {c_norm}"
            )));
        }
        let ln_d = if k >= 2 {
            let (kf, df) = (k as f64, resid_df as f64);
            ln_gamma((df + kf) / 2.0)
                - 0.5 * std::f64::consts::PI.ln()
                - ln_gamma((kf - 1.0) / 2.0)
                - ln_gamma(df / 2.0)
        } else {
            f64::NAN
        };
        Ok(Self {
            c_norm,
            k,
            resid_df,
            ln_d,
        })
    }

    /// Normalizing constant `D`.
    pub fn d_const(&self) -> f64 {
        self.ln_d.exp()
    }

    /// `(lower, upper)` support endpoints.
    pub fn support(&self) -> (f64, f64) {
        ((self.c_norm - 1.0).max(0.0), self.c_norm + 1.0)
    }

    fn check_regime(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::BadRegime("k = 1 uses the closed form"));
        }
        if self.c_norm <= ZERO_CENTER {
            return Err(Error::BadRegime("a zero center uses the Beta branch"));
        }
        Ok(())
    }

    /// `g(z)`, the inner integral over `t`.
    fn inner(&self, z: f64) -> f64 {
        let c = self.c_norm;
        let lo = (c - z) * (c - z);
        let top = (c + z) * (c + z);
        let hi = top.min(1.0);
        if !(hi > lo) {
            return 0.0;
        }
        let width = hi - lo;
        let p = (self.k as f64 - 3.0) / 2.0;
        let q = (self.resid_df as f64 - 2.0) / 2.0;
        let capped = top > 1.0;
        let ln_scale = self.ln_d - c.ln() - 2.0 * p * (2.0 * c).ln() + width.ln();
        // With t = lo + width sin^2(theta), dt = 2 width sin cos d(theta).
        // Powers of sin and cos absorb the endpoint singularities.
        let f = |theta: f64| -> f64 {
            let (s, co) = theta.sin_cos();
            let t = lo + width * s * s;
            // (t - lo)^p sin = width^p sin^{2p+1}
            let left = width.powf(p) * s.powf(2.0 * p + 1.0);
            let (right, other) = if capped {
                // (1 - t)^q cos = width^q cos^{2q+1}; (top - t)^p is regular.
                (width.powf(q) * co.powf(2.0 * q + 1.0), (top - t).max(0.0).powf(p))
            } else {
                // (top - t)^p cos = width^p cos^{2p+1}; (1 - t)^q is regular.
                (width.powf(p) * co.powf(2.0 * p + 1.0), (1.0 - t).max(0.0).powf(q))
            };
            2.0 * left * right * other
        };
        let r = integrate(f, 0.0, std::f64::consts::FRAC_PI_2, INNER);
        r.value * ln_scale.exp()
    }

    /// Density of `Z` at `z`.
    pub fn density(&self, z: f64) -> Result<f64> {
        self.check_regime()?;
        let (lo, hi) = self.support();
        if !(z > lo && z < hi) {
            return Ok(0.0);
        }
        Ok((z * self.inner(z)).max(0.0))
    }

    fn breakpoints(&self, from: f64) -> Vec<f64> {
        let (lo, hi) = self.support();
        let start = from.max(lo);
        let mut pts = vec![start];
        // Kinks where the upper t-limit switches and where c = z.
        for b in [1.0 - self.c_norm, self.c_norm] {
            if b > start && b < hi {
                pts.push(b);
            }
        }
        pts.push(hi);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// `P(Z >= z_obs)`.
    pub fn survival(&self, z_obs: f64) -> Result<f64> {
        if !(z_obs >= 0.0) {
            return Err(Error::InvalidArgument(format!("statistic must be nonnegative, got {z_obs}")));
        }
        if self.k == 1 {
            return Ok(survival_k1(self.c_norm, self.resid_df, z_obs));
        }
        if self.c_norm <= ZERO_CENTER {
            return Ok(beta_sf(self.k as f64 / 2.0, self.resid_df as f64 / 2.0, (z_obs * z_obs).min(1.0)));
        }
        let (lo, hi) = self.support();
        if z_obs <= lo {
            return Ok(1.0);
        }
        if z_obs >= hi {
            return Ok(0.0);
        }
        // Integrate the upper tail; if it is the larger side, redo the
        // complement so small probabilities are never found by cancellation.
        let upper = integrate_with_breaks(|z: f64| z * self.inner(z), &self.breakpoints(z_obs), OUTER).value;
        if upper < 0.5 {
            return Ok(upper.clamp(0.0, 1.0));
        }
        let mut pts: Vec<f64> = self.breakpoints(lo).into_iter().filter(|&b| b < z_obs).collect();
        pts.push(z_obs);
        let lower = integrate_with_breaks(|z: f64| z * self.inner(z), &pts, OUTER).value;
        Ok((1.0 - lower).clamp(0.0, 1.0))
    }

    /// `P(Z <= z)`, the complement of [`Self::survival`].
    pub fn cdf(&self, z: f64) -> Result<f64> {
        Ok(1.0 - self.survival(z)?)
    }

    /// Total mass of the density over its support.
    pub fn total_mass(&self) -> Result<f64> {
        self.check_regime()?;
        let (lo, _) = self.support();
        Ok(integrate_with_breaks(|z: f64| z * self.inner(z), &self.breakpoints(lo), OUTER).value)
    }

    /// `P(a <= Z <= b)` by direct integration of the density.
    pub fn mass_between(&self, a: f64, b: f64) -> Result<f64> {
        self.check_regime()?;
        let (lo, hi) = self.support();
        let (a, b) = (a.max(lo), b.min(hi));
        if !(b > a) {
            return Ok(0.0);
        }
        let mut pts: Vec<f64> = self.breakpoints(a).into_iter().filter(|&p| p < b).collect();
        pts.push(b);
        Ok(integrate_with_breaks(|z: f64| z * self.inner(z), &pts, OUTER).value)
    }
}

/// `P(u_1 <= a)` for the first coordinate of a uniform unit vector in
/// `R^{resid_df + 1}`: `(1 + sign(a) F_B(a^2)) / 2` with
/// `B ~ Beta(1/2, resid_df / 2)`.
fn first_coordinate_cdf(a: f64, resid_df: usize) -> f64 {
    if a >= 1.0 {
        return 1.0;
    }
    if a <= -1.0 {
        return 0.0;
    }
    let fb = beta_cdf(0.5, resid_df as f64 / 2.0, a * a);
    0.5 * (1.0 + a.signum() * fb)
}

/// `P(|u_1 - c| >= z)` for `k = 1`.
pub fn survival_k1(c: f64, resid_df: usize, z: f64) -> f64 {
    if z <= 0.0 {
        return 1.0;
    }
    let p = 1.0 - first_coordinate_cdf(z + c, resid_df) + first_coordinate_cdf(c - z, resid_df);
    p.clamp(0.0, 1.0)
}

/// MC-free test with a precomputed state and affine piece.
pub fn mcfree_test_with_piece(
    ctx: &ModelContext,
    state: &SufficientState,
    piece: &AffinePiece,
) -> Result<TestOutcome> {
    let (k, df) = (ctx.k(), ctx.resid_df());
    if df == 0 {
        return Err(Error::BadRegime("the MC-free test needs n - d >= 1"));
    }
    let u = state.u_head(k);
    let statistic = (&u - &piece.nu).norm();
    let c_norm = piece.nu.norm();
    let (p, branch) = if k == 1 {
        (survival_k1(piece.nu[0], df, statistic), "k1-closed-form")
    } else if c_norm <= ZERO_CENTER {
        (
            beta_sf(k as f64 / 2.0, df as f64 / 2.0, (statistic * statistic).min(1.0)),
            "beta",
        )
    } else {
        (RecenteredLaw::new(c_norm, k, df)?.survival(statistic)?, "quadrature")
    };
    let mut out = TestOutcome::new(Method::Mcfree, statistic, p);
    out.meta.lambda = Some(piece.lambda);
    out.meta.branch = Some(branch.into());
    Ok(out)
}

/// MC-free test: rejects large `||u_{1:k} - nu||` using the exact law of the
/// recentered norm, with `nu` from the affine piece at the tuned `(lambda, b*)`.
pub fn mcfree_test(ctx: &ModelContext, y: &DVector<f64>, tuning: &TuningChoice) -> Result<TestOutcome> {
    let state = sufficient_state(ctx, y)?;
    let piece = affine_piece(ctx, &state, tuning.lambda, &tuning.b_star())?;
    let mut out = mcfree_test_with_piece(ctx, &state, &piece)?;
    out.meta.b_star = Some(tuning.b_star.clone());
    out.meta.tuning_seed = Some(tuning.tuning_seed);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizing_constant_k2_df2() {
        let law = RecenteredLaw::new(0.5, 2, 2).unwrap();
        assert!((law.d_const() - 1.0 / std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn density_integrates_to_one() {
        for &(k, df, c) in &[(2, 2, 0.3), (3, 50, 1.5), (10, 2, 0.3)] {
            let law = RecenteredLaw::new(c, k, df).unwrap();
            let mass = law.total_mass().unwrap();
            assert!((mass - 1.0).abs() < 1e-6, "k={k} df={df} c={c}: {mass}");
        }
    }

    #[test]
    fn outside_support_and_edges() {
        let law = RecenteredLaw::new(1.5, 3, 5).unwrap();
        assert_eq!(law.density(0.2).unwrap(), 0.0);
        assert_eq!(law.density(2.6).unwrap(), 0.0);
        assert_eq!(law.survival(0.0).unwrap(), 1.0);
        assert_eq!(law.survival(2.7).unwrap(), 0.0);
        assert!(law.density(1.5).unwrap() > 0.0);
    }

    #[test]
    fn regimes_are_enforced() {
        assert!(matches!(RecenteredLaw::new(0.4, 1, 5).unwrap().density(0.3), Err(Error::BadRegime(_))));
        assert!(matches!(RecenteredLaw::new(0.0, 3, 5).unwrap().density(0.3), Err(Error::BadRegime(_))));
        assert!(RecenteredLaw::new(0.4, 3, 0).is_err());
    }

    #[test]
    fn k1_closed_form_edges() {
        assert_eq!(survival_k1(0.3, 10, 0.0), 1.0);
        for &z in &[0.1, 0.4, 0.9] {
            let expect = 1.0 - beta_cdf(0.5, 5.0, z * z);
            assert!((survival_k1(0.0, 10, z) - expect).abs() < 1e-14);
        }
        assert_eq!(survival_k1(0.2, 10, 1.3), 0.0);
    }
}
