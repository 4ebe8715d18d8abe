use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};

/// Tolerance below which a constraint violation is treated as feasible.
/// Bisection-based projections are inexact at roughly this level.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Direction of the per-player sum constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SumBound {
    /// Total action bounded above (e.g. a transmit power budget).
    UpperSum(f64),
    /// Total action bounded below (e.g. a minimum aggregate rate).
    LowerSum(f64),
}

/// Box constraints per dimension plus one aggregate sum constraint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategySpace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub sum: SumBound,
}

impl StrategySpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, sum: SumBound) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(GameError::DimensionMismatch(format!(
                "lower has {} dims, upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        let space = Self { lower, upper, sum };
        space.check_nonempty(0)?;
        Ok(space)
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub(crate) fn check_nonempty(&self, player: usize) -> Result<()> {
        for k in 0..self.dims() {
            if self.lower[k] > self.upper[k] + FEASIBILITY_TOL {
                return Err(GameError::EmptySpace {
                    player,
                    reason: format!("lower[{k}] = {} > upper[{k}] = {}", self.lower[k], self.upper[k]),
                });
            }
        }
        match self.sum {
            SumBound::UpperSum(s) => {
                let min_sum: f64 = self.lower.iter().sum();
                if min_sum > s + FEASIBILITY_TOL {
                    return Err(GameError::EmptySpace {
                        player,
                        reason: format!("sum of lower bounds {min_sum} exceeds sum cap {s}"),
                    });
                }
            }
            SumBound::LowerSum(s) => {
                let max_sum: f64 = self.upper.iter().sum();
                if max_sum < s - FEASIBILITY_TOL {
                    return Err(GameError::EmptySpace {
                        player,
                        reason: format!("sum of upper bounds {max_sum} below sum floor {s}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// True iff `v` satisfies the box and sum constraints within `FEASIBILITY_TOL`.
    pub fn contains(&self, v: &[f64]) -> bool {
        if v.len() != self.dims() {
            return false;
        }
        for k in 0..v.len() {
            if v[k] < self.lower[k] - FEASIBILITY_TOL || v[k] > self.upper[k] + FEASIBILITY_TOL {
                return false;
            }
        }
        let total: f64 = v.iter().sum();
        match self.sum {
            SumBound::UpperSum(s) => total <= s + FEASIBILITY_TOL,
            SumBound::LowerSum(s) => total >= s - FEASIBILITY_TOL,
        }
    }

    fn clip_box(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(k, &x)| x.clamp(self.lower[k], self.upper[k]))
            .collect()
    }

    /// Euclidean projection onto the box-plus-sum-constraint set.
    ///
    /// Clips to the box first; if the sum constraint is then violated, the
    /// shift multiplier is found by bisection (the clipped sum is monotone
    /// in the shift).
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_nonempty(0)?;
        let clipped = self.clip_box(v);
        let total: f64 = clipped.iter().sum();
        let (target, sign) = match self.sum {
            SumBound::UpperSum(s) => {
                if total <= s + FEASIBILITY_TOL {
                    return Ok(clipped);
                }
                (s, -1.0)
            }
            SumBound::LowerSum(s) => {
                if total >= s - FEASIBILITY_TOL {
                    return Ok(clipped);
                }
                (s, 1.0)
            }
        };
        // shifted(lam) = clip(v + sign*lam); its sum moves monotonically
        // toward the target as lam grows.
        let shifted = |lam: f64| -> Vec<f64> {
            self.clip_box(&v.iter().map(|&x| x + sign * lam).collect::<Vec<_>>())
        };
        let mut hi = 1.0;
        for _ in 0..200 {
            let s: f64 = shifted(hi).iter().sum();
            let past = if sign < 0.0 { s <= target } else { s >= target };
            if past {
                break;
            }
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let s: f64 = shifted(mid).iter().sum();
            let past = if sign < 0.0 { s <= target } else { s >= target };
            if past {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo < 1e-14 * (1.0 + hi) {
                break;
            }
        }
        Ok(shifted(hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_box_sum1() -> StrategySpace {
        StrategySpace::new(vec![0.0, 0.0], vec![1.0, 1.0], SumBound::UpperSum(1.0)).unwrap()
    }

    #[test]
    fn symmetric_overflow_splits_evenly() {
        let s = unit_box_sum1();
        let p = s.project(&[0.7, 0.7]).unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn feasible_point_unchanged() {
        let s = unit_box_sum1();
        let p = s.project(&[0.2, 0.3]).unwrap();
        assert_abs_diff_eq!(p[0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn box_clip_can_satisfy_sum() {
        let s = unit_box_sum1();
        let p = s.project(&[2.0, 0.0]).unwrap();
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn lower_sum_raises_to_floor() {
        let s = StrategySpace::new(vec![0.0, 0.0], vec![2.0, 2.0], SumBound::LowerSum(1.0)).unwrap();
        let p = s.project(&[0.1, 0.1]).unwrap();
        let total: f64 = p.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
        assert!(s.contains(&p));
    }

    #[test]
    fn empty_space_rejected() {
        assert!(StrategySpace::new(vec![0.6, 0.6], vec![1.0, 1.0], SumBound::UpperSum(1.0)).is_err());
        assert!(StrategySpace::new(vec![0.0], vec![0.5], SumBound::LowerSum(1.0)).is_err());
    }

    #[test]
    fn projection_idempotent() {
        let s = unit_box_sum1();
        let p = s.project(&[0.9, 0.8]).unwrap();
        let q = s.project(&p).unwrap();
        for k in 0..2 {
            assert_abs_diff_eq!(p[k], q[k], epsilon = 1e-8);
        }
        assert!(s.contains(&p));
    }
}
