//! Brute-force verification: grid-search equilibria and saddle-point checks,
//! independent of the analytic solver paths.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::{GameInstance, StrategyProfile};
use crate::robust::{boundary_grid_min, psi_at, UncertaintyMode, UncertaintySpec};

pub const GRID_POINT_CAP: u64 = 10_000_000;

/// Grid resolution and the tolerance for calling a cell an equilibrium.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub points_per_dim: usize,
    /// Improvement threshold below which a unilateral move is ignored;
    /// derived from grid spacing and gradient magnitude when absent.
    pub tau: Option<f64>,
}

impl GridSpec {
    pub fn new(points_per_dim: usize) -> Self {
        Self {
            points_per_dim,
            tau: None,
        }
    }
}

/// Feasible per-player candidate points on the grid.
struct PlayerGrid {
    candidates: Vec<Vec<f64>>,
}

fn build_grids(game: &GameInstance, spec: &GridSpec) -> Result<Vec<PlayerGrid>> {
    if spec.points_per_dim < 3 {
        return Err(GameError::InvalidConfig("grid needs at least 3 points per dimension".into()));
    }
    let g = spec.points_per_dim;
    let k = game.num_dims;
    let mut out = Vec::with_capacity(game.num_players);
    for space in &game.spaces {
        let axes: Vec<Vec<f64>> = (0..k)
            .map(|d| {
                (0..g)
                    .map(|i| {
                        space.lower[d]
                            + (space.upper[d] - space.lower[d]) * i as f64 / (g - 1) as f64
                    })
                    .collect()
            })
            .collect();
        let mut candidates = Vec::new();
        let mut idx = vec![0usize; k];
        loop {
            let point: Vec<f64> = (0..k).map(|d| axes[d][idx[d]]).collect();
            if space.contains(&point) {
                candidates.push(point);
            }
            let mut d = 0;
            loop {
                idx[d] += 1;
                if idx[d] < g {
                    break;
                }
                idx[d] = 0;
                d += 1;
                if d == k {
                    break;
                }
            }
            if d == k {
                break;
            }
        }
        if candidates.is_empty() {
            return Err(GameError::InvalidConfig(
                "no feasible grid point in a player's strategy space".into(),
            ));
        }
        out.push(PlayerGrid { candidates });
    }
    Ok(out)
}

fn joint_count(grids: &[PlayerGrid]) -> u64 {
    grids
        .iter()
        .fold(1u64, |acc, g| acc.saturating_mul(g.candidates.len() as u64))
}

/// Default tolerance: twice the grid spacing times a sampled gradient bound.
pub fn default_tau(game: &GameInstance, spec: &GridSpec) -> f64 {
    let g = spec.points_per_dim;
    let spacing = game
        .spaces
        .iter()
        .flat_map(|s| {
            s.lower
                .iter()
                .zip(&s.upper)
                .map(move |(lo, up)| (up - lo) / (g - 1) as f64)
        })
        .fold(0.0f64, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(0x0247);
    let mut grad_max: f64 = 1.0;
    for _ in 0..100 {
        let a = game.random_feasible_profile(&mut rng);
        for n in 0..game.num_players {
            if let Ok((da, _)) = game.utility_gradients(&a, n) {
                for v in da {
                    grad_max = grad_max.max(v.abs());
                }
            }
        }
    }
    2.0 * spacing * grad_max
}

// best attainable payoff for player n against a fixed opponent combo,
// memoized on the combo key
struct BestTable<'a> {
    cache: Vec<HashMap<u64, f64>>,
    grids: &'a [PlayerGrid],
}

impl<'a> BestTable<'a> {
    fn new(num_players: usize, grids: &'a [PlayerGrid]) -> Self {
        Self {
            cache: (0..num_players).map(|_| HashMap::new()).collect(),
            grids,
        }
    }

    fn opp_key(&self, idx: &[usize], n: usize) -> u64 {
        let mut key = 0u64;
        for (m, &i) in idx.iter().enumerate() {
            if m != n {
                key = key * self.grids[m].candidates.len() as u64 + i as u64;
            }
        }
        key
    }

    fn best(
        &mut self,
        n: usize,
        idx: &[usize],
        payoff: &mut dyn FnMut(usize, &[f64]) -> f64,
    ) -> f64 {
        let key = self.opp_key(idx, n);
        if let Some(&v) = self.cache[n].get(&key) {
            return v;
        }
        let mut best = f64::NEG_INFINITY;
        let candidates = &self.grids[n].candidates;
        for own in candidates {
            let u = payoff(n, own);
            if u > best {
                best = u;
            }
        }
        self.cache[n].insert(key, best);
        best
    }
}

fn enumerate_equilibria(
    game: &GameInstance,
    grids: &[PlayerGrid],
    tau: f64,
    payoff: &dyn Fn(usize, &[f64], &StrategyProfile) -> f64,
) -> Vec<StrategyProfile> {
    let n_players = game.num_players;
    let mut table = BestTable::new(n_players, grids);
    let mut found = Vec::new();
    let mut idx = vec![0usize; n_players];
    loop {
        let profile = StrategyProfile::new(
            idx.iter()
                .enumerate()
                .map(|(m, &i)| grids[m].candidates[i].clone())
                .collect(),
        );
        let mut is_eq = true;
        for n in 0..n_players {
            let current = payoff(n, profile.row(n), &profile);
            if !current.is_finite() {
                is_eq = false;
                break;
            }
            let mut payoff_fn = |p: usize, own: &[f64]| payoff(p, own, &profile);
            let best = table.best(n, &idx, &mut payoff_fn);
            if best > current + tau {
                is_eq = false;
                break;
            }
        }
        if is_eq {
            found.push(profile);
        }
        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < grids[d].candidates.len() {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == n_players {
                break;
            }
        }
        if d == n_players {
            break;
        }
    }
    found
}

/// All grid profiles where no player gains more than `tau` by any unilateral
/// grid move. Output is ordered by grid index, lexicographically.
pub fn brute_force_ne(game: &GameInstance, spec: &GridSpec) -> Result<Vec<StrategyProfile>> {
    let grids = build_grids(game, spec)?;
    let points = joint_count(&grids);
    if points > GRID_POINT_CAP {
        return Err(GameError::GridTooLarge {
            points,
            cap: GRID_POINT_CAP,
        });
    }
    let tau = spec.tau.unwrap_or_else(|| default_tau(game, spec));
    let payoff = |n: usize, own: &[f64], profile: &StrategyProfile| -> f64 {
        match game.observation(profile, n) {
            Ok(f) => game.utility_at(n, own, &f).unwrap_or(f64::NEG_INFINITY),
            Err(_) => f64::NEG_INFINITY,
        }
    };
    Ok(enumerate_equilibria(game, &grids, tau, &payoff))
}

/// As `brute_force_ne` with the robust utility in place of the nominal one.
pub fn brute_force_rne(
    game: &GameInstance,
    uspec: &UncertaintySpec,
    spec: &GridSpec,
) -> Result<Vec<StrategyProfile>> {
    if matches!(uspec.mode, UncertaintyMode::Parameter { .. }) && !uspec.is_zero() {
        return Err(GameError::InvalidConfig(
            "the grid oracle handles observation-level uncertainty".into(),
        ));
    }
    let grids = build_grids(game, spec)?;
    let points = joint_count(&grids);
    if points > GRID_POINT_CAP {
        return Err(GameError::GridTooLarge {
            points,
            cap: GRID_POINT_CAP,
        });
    }
    let tau = spec.tau.unwrap_or_else(|| default_tau(game, spec));
    let payoff = |n: usize, own: &[f64], profile: &StrategyProfile| -> f64 {
        let f = match game.observation(profile, n) {
            Ok(f) => f,
            Err(_) => return f64::NEG_INFINITY,
        };
        let eps = uspec.observation_radius(n, &f);
        psi_at(game, n, own, &f, eps).unwrap_or(f64::NEG_INFINITY)
    };
    Ok(enumerate_equilibria(game, &grids, tau, &payoff))
}

/// Verifies the saddle condition for player `n` at `(a_n, f_tilde)`: the own
/// action maximizes the utility at the uncertain observation, and the
/// observation minimizes the utility over the ball, both within `tau`.
pub fn saddle_check(
    game: &GameInstance,
    uspec: &UncertaintySpec,
    spec: &GridSpec,
    a: &StrategyProfile,
    n: usize,
    f_tilde: &[f64],
    tau: Option<f64>,
) -> Result<bool> {
    let grids = build_grids(game, spec)?;
    let tau = tau.unwrap_or_else(|| default_tau(game, spec));
    let here = game.utility_at(n, a.row(n), f_tilde)?;

    let mut best = f64::NEG_INFINITY;
    for own in &grids[n].candidates {
        if let Ok(u) = game.utility_at(n, own, f_tilde) {
            best = best.max(u);
        }
    }
    if here < best - tau {
        return Ok(false);
    }

    let f = game.observation(a, n)?;
    let eps = uspec.observation_radius(n, &f);
    if eps > 0.0 {
        let worst = boundary_grid_min(game, n, a.row(n), &f, eps)?;
        let low = game.utility_at(n, a.row(n), &worst)?;
        if here > low + tau {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Distance from `profile` to the nearest cell in `cells` (infinity if empty).
pub fn nearest_cell_distance(cells: &[StrategyProfile], profile: &StrategyProfile) -> f64 {
    cells
        .iter()
        .map(|c| c.distance(profile))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{CouplingModel, StrategySpace, SumBound, UtilityFamily};
    use crate::robust::worst_case_observation;
    use crate::solve::{run_distributed, SolverConfig};

    fn symmetric_rate_log(n: usize, k: usize, x_off: f64, y: f64, budget: f64) -> GameInstance {
        let spaces = (0..n)
            .map(|_| {
                StrategySpace::new(vec![0.0; k], vec![budget; k], SumBound::UpperSum(budget)).unwrap()
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
    fn decoupled_ne_is_product_of_argmaxima() {
        // one dimension, increasing utility: every player's argmax is the top
        let g = symmetric_rate_log(2, 1, 0.0, 1.0, 1.0);
        let spec = GridSpec {
            points_per_dim: 11,
            tau: Some(1e-9),
        };
        let found = brute_force_ne(&g, &spec).unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].rows, vec![vec![1.0], vec![1.0]]);
    }

    #[test]
    fn low_interference_single_cell_contains_solver_output() {
        let g = symmetric_rate_log(2, 2, 0.005, 1.0, 1.0);
        let spec = GridSpec {
            points_per_dim: 21,
            tau: Some(2e-3),
        };
        let found = brute_force_ne(&g, &spec).unwrap();
        assert!(!found.is_empty());
        let trace = run_distributed(
            &g,
            &UncertaintySpec::none(2),
            &SolverConfig::default(),
            &StrategyProfile::zeros(2, 2),
        )
        .unwrap();
        assert!(trace.converged);
        let spacing = 1.0 / 20.0;
        assert!(nearest_cell_distance(&found, trace.final_profile()) <= 2.0 * spacing);
        // all cells cluster together: effectively one equilibrium
        for cell in &found {
            assert!(cell.distance(&found[0]) <= 4.5 * spacing);
        }
    }

    #[test]
    fn high_interference_has_multiple_cells() {
        let g = symmetric_rate_log(2, 2, 2.0, 0.1, 1.0);
        let found = brute_force_ne(&g, &GridSpec::new(21)).unwrap();
        assert!(found.len() >= 2, "found {} cells", found.len());
        // distinct equilibria, not one cluster
        let spread = found
            .iter()
            .map(|c| c.distance(&found[0]))
            .fold(0.0f64, f64::max);
        assert!(spread > 0.5, "spread {spread}");
    }

    #[test]
    fn zero_radius_rne_equals_ne() {
        let g = symmetric_rate_log(2, 2, 0.1, 1.0, 1.0);
        let spec = GridSpec::new(9);
        let ne = brute_force_ne(&g, &spec).unwrap();
        let rne = brute_force_rne(&g, &UncertaintySpec::none(2), &spec).unwrap();
        assert_eq!(ne.len(), rne.len());
        for (a, b) in ne.iter().zip(&rne) {
            assert_eq!(a.rows, b.rows);
        }
    }

    #[test]
    fn grid_cap_enforced() {
        let g = symmetric_rate_log(4, 4, 0.01, 1.0, 4.0);
        let err = brute_force_ne(&g, &GridSpec::new(21));
        assert!(matches!(err, Err(GameError::GridTooLarge { .. })));
    }

    #[test]
    fn saddle_holds_at_solver_fixed_point() {
        let g = symmetric_rate_log(2, 2, 0.005, 1.0, 1.0);
        let uspec = UncertaintySpec::observation_uniform(2, 0.1).unwrap();
        let trace = run_distributed(
            &g,
            &uspec,
            &SolverConfig::default(),
            &StrategyProfile::zeros(2, 2),
        )
        .unwrap();
        assert!(trace.converged);
        let fp = trace.final_profile();
        for n in 0..2 {
            let wc = worst_case_observation(&g, fp, n, &uspec).unwrap();
            assert!(saddle_check(&g, &uspec, &GridSpec::new(41), fp, n, &wc.f_worst, Some(1e-2)).unwrap());
        }
    }

    #[test]
    fn perturbed_pair_fails_saddle() {
        let g = symmetric_rate_log(2, 1, 0.0, 1.0, 1.0);
        let uspec = UncertaintySpec::observation_uniform(2, 0.1).unwrap();
        let trace = run_distributed(
            &g,
            &uspec,
            &SolverConfig::default(),
            &StrategyProfile::zeros(2, 1),
        )
        .unwrap();
        let mut fp = trace.final_profile().clone();
        let wc = worst_case_observation(&g, &fp, 0, &uspec).unwrap();
        // pull the action well off its best response
        fp.rows[0][0] = 0.2;
        assert!(!saddle_check(&g, &uspec, &GridSpec::new(41), &fp, 0, &wc.f_worst, Some(1e-3)).unwrap());
    }

    #[test]
    fn oracle_invariant_under_relabeling() {
        let g = symmetric_rate_log(2, 1, 0.3, 1.0, 1.0);
        let spaces = vec![g.spaces[1].clone(), g.spaces[0].clone()];
        let coupling = CouplingModel {
            cross: vec![
                vec![g.coupling.cross[1][1].clone(), g.coupling.cross[1][0].clone()],
                vec![g.coupling.cross[0][1].clone(), g.coupling.cross[0][0].clone()],
            ],
            offset: vec![g.coupling.offset[1].clone(), g.coupling.offset[0].clone()],
        };
        let swapped = GameInstance::new(spaces, coupling, UtilityFamily::RateLog).unwrap();
        let spec = GridSpec {
            points_per_dim: 11,
            tau: Some(1e-9),
        };
        let a = brute_force_ne(&g, &spec).unwrap();
        let b = brute_force_ne(&swapped, &spec).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.rows[0], y.rows[1]);
            assert_eq!(x.rows[1], y.rows[0]);
        }
    }

    #[test]
    fn refinement_keeps_solver_cell() {
        let g = symmetric_rate_log(2, 2, 0.005, 1.0, 1.0);
        let trace = run_distributed(
            &g,
            &UncertaintySpec::none(2),
            &SolverConfig::default(),
            &StrategyProfile::zeros(2, 2),
        )
        .unwrap();
        let fp = trace.final_profile();
        for g_points in [11usize, 21] {
            let found = brute_force_ne(&g, &GridSpec::new(g_points)).unwrap();
            let spacing = 1.0 / (g_points - 1) as f64;
            assert!(nearest_cell_distance(&found, fp) <= 2.0 * spacing);
        }
    }
}
