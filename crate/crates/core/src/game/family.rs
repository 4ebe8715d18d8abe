use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};

/// Margin below which an M/M/1 queue evaluation is treated as unstable
/// rather than returning a huge delay.
pub const STABILITY_GUARD: f64 = 1e-6;

/// Partial derivatives of one per-dimension utility term at `(a, f)`.
///
/// `daaf` and `daff` are the two third-order partials entering the
/// proximal-map convergence precondition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partials {
    pub da: f64,
    pub df: f64,
    pub daa: f64,
    pub daf: f64,
    pub dff: f64,
    pub daaf: f64,
    pub daff: f64,
}

/// Closed registry of utility families.
///
/// Analytic derivatives through third order are required by the
/// convergence precondition checks, so families are not user-pluggable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum UtilityFamily {
    /// `log(1 + a/f)` per dimension.
    RateLog,
    /// `log(c + a/f)` for theta = 1, `(c + a/f)^(theta+1)/(theta+1)`
    /// for -1 < theta < 0 or theta < -1. `c[n][k]` is the per-dimension constant.
    LogTheta { theta: f64, c: Vec<Vec<f64>> },
    /// `mu - nu_nn*a - f` per dimension; `nu_nn` is read from the coupling
    /// diagonal. Decreasing in the own action, so the A1 check is waived.
    LinearJackson { mu: Vec<Vec<f64>> },
}

impl UtilityFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            UtilityFamily::RateLog => "rate-log",
            UtilityFamily::LogTheta { .. } => "log-theta",
            UtilityFamily::LinearJackson { .. } => "linear-jackson",
        }
    }

    pub fn is_log_theta(&self) -> bool {
        matches!(self, UtilityFamily::LogTheta { .. })
    }

    /// Branch-domain check for the theta parameter (valid: 1, (-1,0), (-inf,-1)).
    pub fn validate_theta(&self) -> Result<()> {
        if let UtilityFamily::LogTheta { theta, .. } = self {
            let t = *theta;
            let ok = t == 1.0 || (-1.0 < t && t < 0.0) || t < -1.0;
            if !ok {
                return Err(GameError::InvalidConfig(format!(
                    "log-theta requires theta = 1, -1 < theta < 0, or theta < -1 (got {t})"
                )));
            }
        }
        Ok(())
    }

    fn log_theta_c(&self, n: usize, k: usize) -> f64 {
        match self {
            UtilityFamily::LogTheta { c, .. } => c[n][k],
            _ => unreachable!(),
        }
    }

    pub(crate) fn check_domain(&self, n: usize, k: usize, a: f64, f: f64, x_nn: f64) -> Result<()> {
        match self {
            UtilityFamily::RateLog => {
                if f <= 0.0 || 1.0 + a / f <= 0.0 {
                    return Err(GameError::DomainViolation {
                        player: n,
                        dim: k,
                        reason: format!("log argument nonpositive (a = {a}, f = {f})"),
                    });
                }
            }
            UtilityFamily::LogTheta { .. } => {
                let c = self.log_theta_c(n, k);
                if f <= 0.0 || c + a / f <= 0.0 {
                    return Err(GameError::DomainViolation {
                        player: n,
                        dim: k,
                        reason: format!("c + a/f nonpositive (c = {c}, a = {a}, f = {f})"),
                    });
                }
            }
            UtilityFamily::LinearJackson { mu } => {
                let margin = mu[n][k] - x_nn * a - f;
                if margin <= STABILITY_GUARD {
                    return Err(GameError::Instability {
                        node: n,
                        class: k,
                        margin,
                    });
                }
            }
        }
        Ok(())
    }

    /// Per-dimension utility value at `(a, f)`.
    pub fn value(&self, n: usize, k: usize, a: f64, f: f64, x_nn: f64) -> Result<f64> {
        self.check_domain(n, k, a, f, x_nn)?;
        Ok(match self {
            UtilityFamily::RateLog => (1.0 + a / f).ln(),
            UtilityFamily::LogTheta { theta, .. } => {
                let s = self.log_theta_c(n, k) + a / f;
                if *theta == 1.0 {
                    s.ln()
                } else {
                    s.powf(theta + 1.0) / (theta + 1.0)
                }
            }
            UtilityFamily::LinearJackson { mu } => mu[n][k] - x_nn * a - f,
        })
    }

    /// Analytic partials at `(a, f)`.
    pub fn partials(&self, n: usize, k: usize, a: f64, f: f64, x_nn: f64) -> Result<Partials> {
        self.check_domain(n, k, a, f, x_nn)?;
        Ok(match self {
            UtilityFamily::RateLog => {
                let t = f + a;
                Partials {
                    da: 1.0 / t,
                    df: -a / (f * t),
                    daa: -1.0 / (t * t),
                    daf: -1.0 / (t * t),
                    dff: a * (2.0 * f + a) / (f * f * t * t),
                    daaf: 2.0 / (t * t * t),
                    daff: 2.0 / (t * t * t),
                }
            }
            UtilityFamily::LogTheta { theta, .. } => {
                let c = self.log_theta_c(n, k);
                if *theta == 1.0 {
                    // log(c + a/f); derivatives in terms of t = c*f + a
                    let t = c * f + a;
                    Partials {
                        da: 1.0 / t,
                        df: -a / (f * t),
                        daa: -1.0 / (t * t),
                        daf: -c / (t * t),
                        dff: a * (2.0 * c * f + a) / (f * f * t * t),
                        daaf: 2.0 * c / (t * t * t),
                        daff: 2.0 * c * c / (t * t * t),
                    }
                } else {
                    let th = *theta;
                    let s = c + a / f;
                    let f2 = f * f;
                    let f3 = f2 * f;
                    let f4 = f3 * f;
                    let f5 = f4 * f;
                    let sp = |p: f64| s.powf(p);
                    Partials {
                        da: sp(th) / f,
                        df: -sp(th) * a / f2,
                        daa: th * sp(th - 1.0) / f2,
                        daf: -th * sp(th - 1.0) * a / f3 - sp(th) / f2,
                        dff: th * a * a * sp(th - 1.0) / f4 + 2.0 * a * sp(th) / f3,
                        daaf: -th * (th - 1.0) * sp(th - 2.0) * a / f4
                            - 2.0 * th * sp(th - 1.0) / f3,
                        daff: th * (th - 1.0) * a * a * sp(th - 2.0) / f5
                            + 4.0 * th * a * sp(th - 1.0) / f4
                            + 2.0 * sp(th) / f3,
                    }
                }
            }
            UtilityFamily::LinearJackson { .. } => Partials {
                da: -x_nn,
                df: -1.0,
                daa: 0.0,
                daf: 0.0,
                dff: 0.0,
                daaf: 0.0,
                daff: 0.0,
            },
        })
    }

    /// True when the A1 (increasing in own action) spot check applies.
    /// The Jackson utility is linear and decreasing in the own action as
    /// specified, so A1 is waived for it.
    pub fn a1_waived(&self) -> bool {
        matches!(self, UtilityFamily::LinearJackson { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rate_log_hand_values() {
        let fam = UtilityFamily::RateLog;
        assert_abs_diff_eq!(fam.value(0, 0, 1.0, 1.0, 1.0).unwrap(), 2.0f64.ln(), epsilon = 1e-12);
        let p = fam.partials(0, 0, 1.0, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(p.da, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.df, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn jackson_hand_value() {
        let fam = UtilityFamily::LinearJackson { mu: vec![vec![5.0]] };
        assert_abs_diff_eq!(fam.value(0, 0, 1.0, 2.0, 1.0).unwrap(), 2.0, epsilon = 1e-12);
        let p = fam.partials(0, 0, 1.0, 2.0, 1.0).unwrap();
        assert_eq!(p.da, -1.0);
        assert_eq!(p.df, -1.0);
        assert_eq!(p.daaf, 0.0);
        assert_eq!(p.daff, 0.0);
    }

    #[test]
    fn jackson_instability_guard() {
        let fam = UtilityFamily::LinearJackson { mu: vec![vec![2.0]] };
        assert!(matches!(
            fam.value(0, 0, 1.0, 1.0, 1.0),
            Err(GameError::Instability { .. })
        ));
    }

    #[test]
    fn log_theta_matches_rate_log_when_c_is_one() {
        let fam = UtilityFamily::LogTheta {
            theta: 1.0,
            c: vec![vec![1.0]],
        };
        let rl = UtilityFamily::RateLog;
        for &(a, f) in &[(0.3, 0.7), (1.2, 2.5), (0.0, 1.0)] {
            assert_abs_diff_eq!(
                fam.value(0, 0, a, f, 1.0).unwrap(),
                rl.value(0, 0, a, f, 1.0).unwrap(),
                epsilon = 1e-12
            );
            let p = fam.partials(0, 0, a, f, 1.0).unwrap();
            let q = rl.partials(0, 0, a, f, 1.0).unwrap();
            assert_abs_diff_eq!(p.da, q.da, epsilon = 1e-12);
            assert_abs_diff_eq!(p.dff, q.dff, epsilon = 1e-12);
            assert_abs_diff_eq!(p.daff, q.daff, epsilon = 1e-12);
        }
    }

    #[test]
    fn theta_branch_domains() {
        let bad = UtilityFamily::LogTheta {
            theta: 0.5,
            c: vec![vec![1.0]],
        };
        assert!(bad.validate_theta().is_err());
        let ok = UtilityFamily::LogTheta {
            theta: -0.5,
            c: vec![vec![1.0]],
        };
        assert!(ok.validate_theta().is_ok());
    }

    #[test]
    fn log_log_theta_c_zero_has_zero_mixed_third_partials() {
        // log(a/f): the high-interference-free form used when the proximal
        // convergence precondition must hold exactly.
        let fam = UtilityFamily::LogTheta {
            theta: 1.0,
            c: vec![vec![0.0]],
        };
        let p = fam.partials(0, 0, 0.7, 1.3, 1.0).unwrap();
        assert_abs_diff_eq!(p.daf, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.daaf, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.daff, 0.0, epsilon = 1e-15);
    }
}
