//! Worst-case uncertainty handling: the inner minimization over the
//! observation ball, the robust utility, and the robust closed-form best
//! response for the log family.

use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::{GameInstance, StrategyProfile, StrategySpace, SumBound};
use crate::vi::AviSystem;

pub const WORST_CASE_TOL: f64 = 1e-10;
pub const WORST_CASE_MAX_ITERS: usize = 200;
const WORST_CASE_DAMPING: f64 = 0.5;

/// Shape of the uncertainty region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum UncertaintyMode {
    /// Euclidean ball of radius `radius[n]` around each player's observation.
    Observation { radius: Vec<f64> },
    /// Per-dimension interval radii `radius[n][k]` on the normalized coupling
    /// parameters (log family only).
    Parameter { radius: Vec<Vec<f64>> },
}

/// Uncertainty region description for every player.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UncertaintySpec {
    pub mode: UncertaintyMode,
    /// When set, observation radii are fractions of the nominal observation
    /// norm rather than absolute lengths.
    pub relative: bool,
}

impl UncertaintySpec {
    pub fn observation(radius: Vec<f64>) -> Result<Self> {
        let spec = Self {
            mode: UncertaintyMode::Observation { radius },
            relative: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn observation_relative(radius: Vec<f64>) -> Result<Self> {
        let spec = Self {
            mode: UncertaintyMode::Observation { radius },
            relative: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn observation_uniform(num_players: usize, eps: f64) -> Result<Self> {
        Self::observation(vec![eps; num_players])
    }

    pub fn parameter(radius: Vec<Vec<f64>>) -> Result<Self> {
        let spec = Self {
            mode: UncertaintyMode::Parameter { radius },
            relative: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A zero-radius observation spec (the nominal game).
    pub fn none(num_players: usize) -> Self {
        Self {
            mode: UncertaintyMode::Observation {
                radius: vec![0.0; num_players],
            },
            relative: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn all_ok<'a>(mut vals: impl Iterator<Item = &'a f64>) -> bool {
            vals.all(|e| e.is_finite() && *e >= 0.0)
        }
        let ok = match &self.mode {
            UncertaintyMode::Observation { radius } => all_ok(radius.iter()),
            UncertaintyMode::Parameter { radius } => {
                if self.relative {
                    return Err(GameError::InvalidConfig(
                        "relative radii apply to observation-level uncertainty only".into(),
                    ));
                }
                all_ok(radius.iter().flatten())
            }
        };
        if !ok {
            return Err(GameError::InvalidConfig(
                "uncertainty radii must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        match &self.mode {
            UncertaintyMode::Observation { radius } => radius.iter().all(|&e| e == 0.0),
            UncertaintyMode::Parameter { radius } => radius.iter().flatten().all(|&e| e == 0.0),
        }
    }

    /// Absolute observation radius for player `n` given their nominal
    /// observation; zero for parameter-mode specs.
    pub fn observation_radius(&self, n: usize, f_nominal: &[f64]) -> f64 {
        match &self.mode {
            UncertaintyMode::Observation { radius } => {
                let e = radius[n];
                if self.relative {
                    e * f_nominal.iter().map(|x| x * x).sum::<f64>().sqrt()
                } else {
                    e
                }
            }
            UncertaintyMode::Parameter { .. } => 0.0,
        }
    }

    pub fn parameter_radius(&self, n: usize, k: usize) -> f64 {
        match &self.mode {
            UncertaintyMode::Parameter { radius } => radius[n][k],
            UncertaintyMode::Observation { .. } => 0.0,
        }
    }
}

/// Minimizer of player `n`'s utility over the observation ball.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorstCaseResult {
    pub f_worst: Vec<f64>,
    /// Unit descent direction; `f_worst = f - eps * direction`. Zero when the
    /// observation gradient vanishes.
    pub direction: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// Absolute radius actually used (after relative conversion).
    pub eps_abs: f64,
    /// The observation gradient vanished, so no worst direction exists.
    pub degenerate: bool,
    /// The radius was shrunk to stay inside the utility domain.
    pub clipped: bool,
    /// The fixed point hit the iteration cap and the boundary grid search
    /// supplied the answer.
    pub grid_fallback: bool,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Worst-case observation for player `n` at profile `a`.
pub fn worst_case_observation(
    game: &GameInstance,
    a: &StrategyProfile,
    n: usize,
    spec: &UncertaintySpec,
) -> Result<WorstCaseResult> {
    let f = game.observation(a, n)?;
    let eps = spec.observation_radius(n, &f);
    worst_case_at(game, n, a.row(n), &f, eps)
}

/// Worst-case observation for a free own action against a fixed nominal
/// observation. Solves `f* = f - eps * direction(f*)` by damped fixed-point
/// iteration; the direction is the normalized observation gradient.
pub fn worst_case_at(
    game: &GameInstance,
    n: usize,
    own: &[f64],
    f: &[f64],
    eps: f64,
) -> Result<WorstCaseResult> {
    let k = f.len();
    if eps == 0.0 {
        game.partials_at(n, own, f)?;
        return Ok(WorstCaseResult {
            f_worst: f.to_vec(),
            direction: vec![0.0; k],
            residual: 0.0,
            iterations: 0,
            eps_abs: 0.0,
            degenerate: false,
            clipped: false,
            grid_fallback: false,
        });
    }

    let mut ft = f.to_vec();
    let mut clipped = false;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    for it in 1..=WORST_CASE_MAX_ITERS {
        iterations = it;
        let parts = game.partials_at(n, own, &ft)?;
        let grad: Vec<f64> = parts.iter().map(|p| p.df).collect();
        let norm = l2(&grad);
        if norm < 1e-300 {
            return Ok(WorstCaseResult {
                f_worst: f.to_vec(),
                direction: vec![0.0; k],
                residual: 0.0,
                iterations: it,
                eps_abs: eps,
                degenerate: true,
                clipped,
                grid_fallback: false,
            });
        }
        // target of the undamped map, domain-clipped along the segment from f
        let mut target: Vec<f64> = (0..k).map(|d| f[d] - eps * grad[d] / norm).collect();
        if game.partials_at(n, own, &target).is_err() {
            clipped = true;
            let mut t = 1.0;
            loop {
                t *= 0.5;
                if t < 1e-12 {
                    target = f.to_vec();
                    break;
                }
                let cand: Vec<f64> = (0..k).map(|d| f[d] + t * (target[d] - f[d])).collect();
                if game.partials_at(n, own, &cand).is_ok() {
                    target = cand;
                    break;
                }
            }
        }
        residual = (0..k)
            .map(|d| (target[d] - ft[d]).powi(2))
            .sum::<f64>()
            .sqrt();
        for d in 0..k {
            ft[d] = (1.0 - WORST_CASE_DAMPING) * ft[d] + WORST_CASE_DAMPING * target[d];
        }
        if residual <= WORST_CASE_TOL {
            let direction: Vec<f64> = (0..k).map(|d| (f[d] - target[d]) / eps).collect();
            return Ok(WorstCaseResult {
                f_worst: target,
                direction,
                residual,
                iterations: it,
                eps_abs: eps,
                degenerate: false,
                clipped,
                grid_fallback: false,
            });
        }
    }

    // iteration cap: fall back to the boundary grid search where feasible
    if k <= 3 {
        eprintln!(
            "warning: worst-case fixed point hit the iteration cap (residual {residual:.3e}); using boundary grid search"
        );
        let f_worst = boundary_grid_min(game, n, own, f, eps)?;
        let direction: Vec<f64> = (0..k).map(|d| (f[d] - f_worst[d]) / eps).collect();
        return Ok(WorstCaseResult {
            f_worst,
            direction,
            residual,
            iterations,
            eps_abs: eps,
            degenerate: false,
            clipped,
            grid_fallback: true,
        });
    }
    Err(GameError::FixedPointDiverged { residual })
}

/// Independent minimizer of the utility over the radius-`eps` sphere, by
/// angular grid enumeration. Supports K <= 3 (used as oracle and fallback).
pub fn boundary_grid_min(
    game: &GameInstance,
    n: usize,
    own: &[f64],
    f: &[f64],
    eps: f64,
) -> Result<Vec<f64>> {
    let k = f.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |cand: Vec<f64>| {
        if let Ok(u) = game.utility_at(n, own, &cand) {
            if best.as_ref().map_or(true, |(bu, _)| u < *bu) {
                best = Some((u, cand));
            }
        }
    };
    match k {
        1 => {
            consider(vec![f[0] + eps]);
            consider(vec![f[0] - eps]);
        }
        2 => {
            for i in 0..3600 {
                let phi = 2.0 * std::f64::consts::PI * (i as f64) / 3600.0;
                consider(vec![f[0] + eps * phi.cos(), f[1] + eps * phi.sin()]);
            }
        }
        3 => {
            for i in 0..=60 {
                let th = std::f64::consts::PI * (i as f64) / 60.0;
                for j in 0..120 {
                    let ph = 2.0 * std::f64::consts::PI * (j as f64) / 120.0;
                    consider(vec![
                        f[0] + eps * th.sin() * ph.cos(),
                        f[1] + eps * th.sin() * ph.sin(),
                        f[2] + eps * th.cos(),
                    ]);
                }
            }
        }
        _ => {
            return Err(GameError::InvalidConfig(
                "boundary grid search supports at most 3 dimensions".into(),
            ))
        }
    }
    best.map(|(_, cand)| cand).ok_or_else(|| {
        GameError::DomainViolation {
            player: n,
            dim: 0,
            reason: "no point of the uncertainty sphere lies in the utility domain".into(),
        }
    })
}

/// Robust utility: player `n`'s utility at the worst-case observation.
pub fn psi(game: &GameInstance, a: &StrategyProfile, n: usize, spec: &UncertaintySpec) -> Result<f64> {
    let wc = worst_case_observation(game, a, n, spec)?;
    game.utility_at(n, a.row(n), &wc.f_worst)
}

/// Robust utility for a free own action against a fixed nominal observation.
pub fn psi_at(game: &GameInstance, n: usize, own: &[f64], f: &[f64], eps: f64) -> Result<f64> {
    let wc = worst_case_at(game, n, own, f, eps)?;
    game.utility_at(n, own, &wc.f_worst)
}

fn opponent_column_norm(a: &StrategyProfile, n: usize, k: usize) -> f64 {
    a.rows
        .iter()
        .enumerate()
        .filter(|(m, _)| *m != n)
        .map(|(_, row)| row[k] * row[k])
        .sum::<f64>()
        .sqrt()
}

/// Affine mapping of the robust log-family game: the nominal affine mapping
/// plus the per-dimension uncertainty penalty `eps_n^k * ||a_{-n}^k||_2`.
pub fn robust_avi_mapping(
    avi: &AviSystem,
    a: &StrategyProfile,
    spec: &UncertaintySpec,
) -> Result<Vec<Vec<f64>>> {
    if !matches!(spec.mode, UncertaintyMode::Parameter { .. }) && !spec.is_zero() {
        return Err(GameError::InvalidConfig(
            "the affine robust mapping needs parameter-level uncertainty".into(),
        ));
    }
    let n = avi.w.len();
    let k = avi.w.first().map_or(0, |w| w.len());
    let mut out = vec![vec![0.0; k]; n];
    for p in 0..n {
        for d in 0..k {
            let mut acc = avi.w[p][d];
            for m in 0..n {
                acc += avi.ratio[p][m][d] * a.rows[m][d];
            }
            out[p][d] = acc + spec.parameter_radius(p, d) * opponent_column_norm(a, p, d);
        }
    }
    Ok(out)
}

/// Closed-form robust best response for the log family: per dimension
/// `clip(s - w - coupling - penalty)` with the water level `s` chosen by
/// bisection so the total meets the power budget.
pub fn robust_best_response_log(
    avi: &AviSystem,
    n: usize,
    a: &StrategyProfile,
    spec: &UncertaintySpec,
    space: &StrategySpace,
) -> Result<Vec<f64>> {
    if matches!(spec.mode, UncertaintyMode::Observation { .. }) && !spec.is_zero() {
        return Err(GameError::InvalidConfig(
            "the closed-form response takes parameter-level uncertainty".into(),
        ));
    }
    let k = space.dims();
    let mut base = vec![0.0; k];
    for d in 0..k {
        let mut acc = avi.w[n][d];
        for (m, row) in a.rows.iter().enumerate() {
            if m != n {
                acc += avi.ratio[n][m][d] * row[d];
            }
        }
        base[d] = acc + spec.parameter_radius(n, d) * opponent_column_norm(a, n, d);
    }

    let budget = match space.sum {
        SumBound::UpperSum(s) => s,
        SumBound::LowerSum(_) => {
            return Err(GameError::InvalidConfig(
                "the waterfilling response needs an upper sum bound".into(),
            ))
        }
    };

    // the utility is strictly increasing in the own action, so either the
    // budget binds or the box top is optimal
    let top_sum: f64 = space.upper.iter().sum();
    if top_sum <= budget + 1e-12 {
        return Ok(space.upper.clone());
    }

    let fill = |s: f64| -> Vec<f64> {
        (0..k)
            .map(|d| (s - base[d]).clamp(space.lower[d], space.upper[d]))
            .collect()
    };
    let total = |s: f64| -> f64 { fill(s).iter().sum() };

    let mut hi = base.iter().cloned().fold(0.0f64, f64::max)
        + space.upper.iter().cloned().fold(0.0f64, f64::max)
        + 1.0;
    let mut grow = 0;
    while total(hi) < budget {
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(GameError::BracketFailure(
                "water level cannot reach the power budget".into(),
            ));
        }
    }
    let mut lo = base.iter().cloned().fold(f64::INFINITY, f64::min)
        + space.lower.iter().cloned().fold(f64::INFINITY, f64::min)
        - 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) >= budget {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-14 * (1.0 + hi.abs()) {
            break;
        }
    }
    Ok(fill(hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{CouplingModel, UtilityFamily};
    use crate::vi::build_avi;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rate_log_game(n: usize, k: usize, x_off: f64, y: f64, cap: f64) -> GameInstance {
        let spaces = (0..n)
            .map(|_| {
                StrategySpace::new(vec![0.0; k], vec![cap; k], SumBound::UpperSum(cap * k as f64))
                    .unwrap()
            })
            .collect();
        let cross = (0..n)
            .map(|p| {
                (0..n)
                    .map(|m| vec![if m == p { 1.0 } else { x_off }; k])
                    .collect()
            })
            .collect();
        let coupling = CouplingModel {
            cross,
            offset: vec![vec![y; k]; n],
        };
        GameInstance::new(spaces, coupling, UtilityFamily::RateLog).unwrap()
    }

    #[test]
    fn zero_radius_is_nominal() {
        let g = rate_log_game(2, 2, 0.2, 1.0, 1.0);
        let a = StrategyProfile::new(vec![vec![0.5, 0.5], vec![0.3, 0.7]]);
        let spec = UncertaintySpec::none(2);
        let wc = worst_case_observation(&g, &a, 0, &spec).unwrap();
        assert_eq!(wc.f_worst, g.observation(&a, 0).unwrap());
        assert_abs_diff_eq!(
            psi(&g, &a, 0, &spec).unwrap(),
            g.utility(&a, 0).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn one_dim_worst_case_hand_value() {
        let g = rate_log_game(2, 1, 0.0, 1.0, 2.0);
        let a = StrategyProfile::new(vec![vec![1.0], vec![0.0]]);
        let spec = UncertaintySpec::observation(vec![0.5, 0.0]).unwrap();
        let wc = worst_case_observation(&g, &a, 0, &spec).unwrap();
        assert_abs_diff_eq!(wc.f_worst[0], 1.5, epsilon = 1e-8);
        assert_abs_diff_eq!(wc.direction[0], -1.0, epsilon = 1e-8);
    }

    #[test]
    fn two_dim_worst_case_matches_grid_oracle() {
        let g = rate_log_game(2, 2, 0.3, 1.0, 2.0);
        let own = vec![1.0, 1.0];
        let f = vec![1.0, 2.0];
        let wc = worst_case_at(&g, 0, &own, &f, 0.3).unwrap();
        assert!(!wc.grid_fallback);
        let oracle = boundary_grid_min(&g, 0, &own, &f, 0.3).unwrap();
        let u_fp = g.utility_at(0, &own, &wc.f_worst).unwrap();
        let u_grid = g.utility_at(0, &own, &oracle).unwrap();
        assert_abs_diff_eq!(u_fp, u_grid, epsilon = 1e-4);
        for d in 0..2 {
            assert_abs_diff_eq!(wc.f_worst[d], oracle[d], epsilon = 1e-2);
        }
    }

    #[test]
    fn boundary_attainment_and_unit_direction() {
        let g = rate_log_game(3, 2, 0.2, 1.0, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = g.random_feasible_profile(&mut rng);
            let spec = UncertaintySpec::observation_uniform(3, 0.25).unwrap();
            for n in 0..3 {
                let wc = worst_case_observation(&g, &a, n, &spec).unwrap();
                assert!(!wc.degenerate);
                let f = g.observation(&a, n).unwrap();
                let dist = wc
                    .f_worst
                    .iter()
                    .zip(&f)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                assert_abs_diff_eq!(dist, 0.25, epsilon = 1e-8);
                assert_abs_diff_eq!(l2(&wc.direction), 1.0, epsilon = 1e-9);
                // A2 gives a negative observation gradient, so the worst
                // observation sits above the nominal one
                for d in 0..2 {
                    assert!(wc.f_worst[d] >= f[d] - 1e-9);
                }
            }
        }
    }

    #[test]
    fn psi_never_exceeds_utility() {
        let g = rate_log_game(2, 2, 0.4, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = UncertaintySpec::observation_uniform(2, 0.2).unwrap();
        for _ in 0..100 {
            let a = g.random_feasible_profile(&mut rng);
            for n in 0..2 {
                assert!(psi(&g, &a, n, &spec).unwrap() <= g.utility(&a, n).unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn relative_radius_scales_with_observation_norm() {
        let g = rate_log_game(2, 1, 0.0, 2.0, 1.0);
        let a = StrategyProfile::new(vec![vec![1.0], vec![0.0]]);
        let spec = UncertaintySpec::observation_relative(vec![0.1, 0.0]).unwrap();
        let wc = worst_case_observation(&g, &a, 0, &spec).unwrap();
        // nominal observation is 2.0, so the absolute radius is 0.2
        assert_abs_diff_eq!(wc.eps_abs, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(wc.f_worst[0], 2.2, epsilon = 1e-8);
    }

    #[test]
    fn domain_clipping_flagged_for_queues() {
        let spaces = vec![
            StrategySpace::new(vec![0.1], vec![0.5], SumBound::LowerSum(0.1)).unwrap(),
            StrategySpace::new(vec![0.1], vec![0.5], SumBound::LowerSum(0.1)).unwrap(),
        ];
        let coupling = CouplingModel {
            cross: vec![vec![vec![1.0], vec![0.5]], vec![vec![0.5], vec![1.0]]],
            offset: vec![vec![0.0], vec![0.0]],
        };
        let g = GameInstance::new(
            spaces,
            coupling,
            UtilityFamily::LinearJackson {
                mu: vec![vec![1.0], vec![1.0]],
            },
        )
        .unwrap();
        // margin at f = 0.25 is 1.0 - 0.5 - 0.25 = 0.25; a radius of 0.4
        // would cross the stability boundary
        let wc = worst_case_at(&g, 0, &[0.5], &[0.25], 0.4).unwrap();
        assert!(wc.clipped);
        assert!(g.utility_at(0, &[0.5], &wc.f_worst).is_ok());
    }

    fn simple_avi(n: usize, k: usize, x_off: f64, y: f64, cap: f64) -> (GameInstance, AviSystem) {
        let spaces: Vec<StrategySpace> = (0..n)
            .map(|_| StrategySpace::new(vec![0.0; k], vec![cap; k], SumBound::UpperSum(cap)).unwrap())
            .collect();
        let cross = (0..n)
            .map(|p| {
                (0..n)
                    .map(|m| vec![if m == p { 1.0 } else { x_off }; k])
                    .collect()
            })
            .collect();
        let coupling = CouplingModel {
            cross,
            offset: vec![vec![y; k]; n],
        };
        let g = GameInstance::new(
            spaces,
            coupling,
            UtilityFamily::LogTheta {
                theta: 1.0,
                c: vec![vec![0.0; k]; n],
            },
        )
        .unwrap();
        let avi = build_avi(&g).unwrap();
        (g, avi)
    }

    #[test]
    fn robust_mapping_hand_value() {
        let (_, avi) = simple_avi(2, 1, 0.0, 1.0, 4.0);
        let a = StrategyProfile::new(vec![vec![1.0], vec![2.0]]);
        let spec = UncertaintySpec::parameter(vec![vec![0.1], vec![0.0]]).unwrap();
        let nominal = robust_avi_mapping(&avi, &a, &UncertaintySpec::none(2)).unwrap();
        let robust = robust_avi_mapping(&avi, &a, &spec).unwrap();
        assert_abs_diff_eq!(robust[0][0] - nominal[0][0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(robust[1][0], nominal[1][0], epsilon = 1e-12);
    }

    #[test]
    fn single_player_mapping_has_no_penalty() {
        let (_, avi) = simple_avi(1, 2, 0.0, 1.0, 1.0);
        let a = StrategyProfile::new(vec![vec![0.4, 0.6]]);
        let spec = UncertaintySpec::parameter(vec![vec![0.5, 0.5]]).unwrap();
        let nominal = robust_avi_mapping(&avi, &a, &UncertaintySpec::none(1)).unwrap();
        let robust = robust_avi_mapping(&avi, &a, &spec).unwrap();
        assert_eq!(nominal, robust);
    }

    #[test]
    fn waterfilling_hand_example() {
        // two dimensions with effective offsets 1 and 2, budget 1: the water
        // level lands at 2 and the response is (1, 0)
        let spaces = StrategySpace::new(vec![0.0, 0.0], vec![1.0, 1.0], SumBound::UpperSum(1.0)).unwrap();
        let coupling = CouplingModel {
            cross: vec![vec![vec![1.0, 1.0]]],
            offset: vec![vec![1.0, 2.0]],
        };
        let g = GameInstance::new(
            vec![spaces.clone()],
            coupling,
            UtilityFamily::LogTheta {
                theta: 1.0,
                c: vec![vec![0.0, 0.0]],
            },
        )
        .unwrap();
        let avi = build_avi(&g).unwrap();
        let a = StrategyProfile::zeros(1, 2);
        let br = robust_best_response_log(&avi, 0, &a, &UncertaintySpec::none(1), &spaces).unwrap();
        assert_abs_diff_eq!(br[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(br[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn response_shrinks_as_radius_grows() {
        let (g, avi) = simple_avi(2, 2, 0.3, 1.0, 1.0);
        let a = StrategyProfile::new(vec![vec![0.5, 0.5], vec![0.6, 0.4]]);
        let mut prev: Option<Vec<f64>> = None;
        for eps in [0.0, 0.1, 0.2, 0.4] {
            let spec = UncertaintySpec::parameter(vec![vec![eps, 0.0], vec![0.0, 0.0]]).unwrap();
            let br = robust_best_response_log(&avi, 0, &a, &spec, &g.spaces[0]).unwrap();
            if let Some(p) = &prev {
                assert!(br[0] <= p[0] + 1e-9);
            }
            prev = Some(br);
        }
    }

    #[test]
    fn single_player_response_ignores_radius() {
        let (g, avi) = simple_avi(1, 2, 0.0, 1.0, 1.0);
        let a = StrategyProfile::zeros(1, 2);
        let robust = UncertaintySpec::parameter(vec![vec![0.3, 0.3]]).unwrap();
        let r1 = robust_best_response_log(&avi, 0, &a, &UncertaintySpec::none(1), &g.spaces[0]).unwrap();
        let r2 = robust_best_response_log(&avi, 0, &a, &robust, &g.spaces[0]).unwrap();
        for d in 0..2 {
            assert_abs_diff_eq!(r1[d], r2[d], epsilon = 1e-9);
        }
    }

    #[test]
    fn slack_budget_returns_box_top() {
        let spaces = StrategySpace::new(vec![0.0], vec![0.4], SumBound::UpperSum(1.0)).unwrap();
        let coupling = CouplingModel {
            cross: vec![vec![vec![1.0]]],
            offset: vec![vec![1.0]],
        };
        let g = GameInstance::new(
            vec![spaces.clone()],
            coupling,
            UtilityFamily::LogTheta {
                theta: 1.0,
                c: vec![vec![1.0]],
            },
        )
        .unwrap();
        let avi = build_avi(&g).unwrap();
        let br = robust_best_response_log(&avi, 0, &StrategyProfile::zeros(1, 1), &UncertaintySpec::none(1), &g.spaces[0]).unwrap();
        assert_abs_diff_eq!(br[0], 0.4, epsilon = 1e-12);
    }

    #[test]
    fn psi_concave_in_own_action() {
        let g = rate_log_game(2, 2, 0.3, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = UncertaintySpec::observation_uniform(2, 0.2).unwrap();
        let opp = g.random_feasible_profile(&mut rng);
        let f = g.observation(&opp, 0).unwrap();
        let eps = spec.observation_radius(0, &f);
        for _ in 0..100 {
            let a1 = g.random_feasible_profile(&mut rng).row(0).to_vec();
            let a2 = g.random_feasible_profile(&mut rng).row(0).to_vec();
            let mu: f64 = rand::Rng::gen_range(&mut rng, 0.0..1.0);
            let mix: Vec<f64> = a1
                .iter()
                .zip(&a2)
                .map(|(x, y)| mu * x + (1.0 - mu) * y)
                .collect();
            let p1 = psi_at(&g, 0, &a1, &f, eps).unwrap();
            let p2 = psi_at(&g, 0, &a2, &f, eps).unwrap();
            let pm = psi_at(&g, 0, &mix, &f, eps).unwrap();
            assert!(pm >= mu * p1 + (1.0 - mu) * p2 - 1e-7);
        }
    }
}
