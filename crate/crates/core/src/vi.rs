//! VI reformulation diagnostics: the curvature matrix, P-matrix uniqueness
//! test, perturbation bounds, and the affine reformulation for the log family.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::{GameInstance, StrategyProfile, StrategySpace, UtilityFamily};

/// Principal-minor verdicts are exact, so the player count is capped.
pub const P_MATRIX_MAX_DIM: usize = 16;

/// Curvature diagnostics for one game.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViReport {
    /// Minimum own-curvature per player (diagonal of the matrix).
    pub alpha_min: Vec<f64>,
    /// Maximum cross-curvature per ordered player pair, `beta_max[n][m]`.
    pub beta_max: Vec<Vec<f64>>,
    /// N x N matrix: diagonal `alpha_min`, off-diagonal `-beta_max`.
    #[serde(skip, default = "empty_matrix")]
    pub upsilon: DMatrix<f64>,
    /// True iff all principal minors of the matrix are positive.
    pub p_matrix: bool,
    /// Strong-monotonicity constant: smallest eigenvalue of the symmetrized
    /// matrix, clamped below at zero.
    pub c_sm: f64,
    /// True when the per-family closed forms were used; false means the
    /// corner-plus-random sampling approximation.
    pub closed_form: bool,
}

fn empty_matrix() -> DMatrix<f64> {
    DMatrix::zeros(0, 0)
}

/// The game mapping: row `n` is the negated own-gradient of player `n`'s
/// utility at `a`.
pub fn vi_mapping(game: &GameInstance, a: &StrategyProfile) -> Result<Vec<Vec<f64>>> {
    (0..game.num_players)
        .map(|n| {
            let (da, _) = game.utility_gradients(a, n)?;
            Ok(da.iter().map(|g| -g).collect())
        })
        .collect()
}

/// All principal minors positive (exceeding `1e-12`). Exact enumeration,
/// capped at 16 x 16.
pub fn is_p_matrix(m: &DMatrix<f64>) -> Result<bool> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(GameError::DimensionMismatch("P-matrix test needs a square matrix".into()));
    }
    if n > P_MATRIX_MAX_DIM {
        return Err(GameError::MinorLimitExceeded(n, P_MATRIX_MAX_DIM));
    }
    for mask in 1u32..(1u32 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])]);
        if sub.determinant() <= 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Smallest eigenvalue of the symmetrized matrix, clamped below at zero.
pub fn strong_monotonicity_constant(upsilon: &DMatrix<f64>) -> f64 {
    let sym = (upsilon + upsilon.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    eig.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0)
}

/// `||delta||_2 / c_sm`; unavailable when the mapping is not strongly monotone.
pub fn monotonicity_distance_bound(delta: &[f64], c_sm: f64) -> Result<f64> {
    if c_sm <= 0.0 {
        return Err(GameError::InvalidConfig(
            "distance bound unavailable: strong-monotonicity constant is zero".into(),
        ));
    }
    let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
    Ok(norm / c_sm)
}

fn assemble_upsilon(alpha_min: &[f64], beta_max: &[Vec<f64>]) -> DMatrix<f64> {
    let n = alpha_min.len();
    DMatrix::from_fn(n, n, |r, c| {
        if r == c {
            alpha_min[r]
        } else {
            -beta_max[r][c]
        }
    })
}

/// Builds the curvature matrix. Closed forms are used for the rate-log /
/// log(c + a/f) and linear Jackson families; other parameterizations fall
/// back to corner-plus-random sampling (a documented approximation).
pub fn build_upsilon(game: &GameInstance) -> Result<ViReport> {
    let n = game.num_players;
    let k = game.num_dims;

    // own-curvature proportional to 1/(c*f + a)^2 admits exact extremes
    let curvature_c = |player: usize, dim: usize| -> Option<f64> {
        match &game.family {
            UtilityFamily::RateLog => Some(1.0),
            UtilityFamily::LogTheta { theta, c } if *theta == 1.0 => Some(c[player][dim]),
            _ => None,
        }
    };

    let mut closed_form = true;
    let mut alpha_min = vec![0.0; n];
    let mut beta_max = vec![vec![0.0; n]; n];

    match &game.family {
        UtilityFamily::LinearJackson { .. } => {
            // linear family: all second derivatives vanish
        }
        _ if (0..n).all(|p| (0..k).all(|d| curvature_c(p, d).is_some())) => {
            for p in 0..n {
                let mut amin = f64::INFINITY;
                for d in 0..k {
                    let c = curvature_c(p, d).unwrap();
                    let f_max: f64 = game.coupling.y(p, d)
                        + (0..n)
                            .filter(|&m| m != p)
                            .map(|m| game.coupling.x(p, m, d) * game.spaces[m].upper[d])
                            .sum::<f64>();
                    let denom = c * f_max + game.spaces[p].upper[d];
                    amin = amin.min(1.0 / (denom * denom));
                }
                alpha_min[p] = amin;
                for m in 0..n {
                    if m == p {
                        continue;
                    }
                    let mut bmax = 0.0f64;
                    for d in 0..k {
                        let c = curvature_c(p, d).unwrap();
                        let f_min: f64 = game.coupling.y(p, d)
                            + (0..n)
                                .filter(|&mm| mm != p)
                                .map(|mm| game.coupling.x(p, mm, d) * game.spaces[mm].lower[d])
                                .sum::<f64>();
                        let denom = c * f_min + game.spaces[p].lower[d];
                        bmax = bmax.max(c * game.coupling.x(p, m, d) / (denom * denom));
                    }
                    beta_max[p][m] = bmax;
                }
            }
        }
        _ => {
            closed_form = false;
            sample_curvature(game, &mut alpha_min, &mut beta_max)?;
        }
    }

    let upsilon = assemble_upsilon(&alpha_min, &beta_max);
    let p_matrix = is_p_matrix(&upsilon)?;
    let c_sm = strong_monotonicity_constant(&upsilon);
    Ok(ViReport {
        alpha_min,
        beta_max,
        upsilon,
        p_matrix,
        c_sm,
        closed_form,
    })
}

// Corner sample plus 1000 random feasible points; extremes of the separable
// Hessian terms. Corners are subsampled when 2^(N*K) is too large.
fn sample_curvature(
    game: &GameInstance,
    alpha_min: &mut [f64],
    beta_max: &mut [Vec<f64>],
) -> Result<()> {
    let n = game.num_players;
    let k = game.num_dims;
    let mut rng = ChaCha8Rng::seed_from_u64(0xB0B);
    let mut points: Vec<StrategyProfile> = Vec::new();

    let total_bits = n * k;
    if total_bits <= 12 {
        for mask in 0u32..(1u32 << total_bits) {
            let mut rows = Vec::with_capacity(n);
            for p in 0..n {
                let raw: Vec<f64> = (0..k)
                    .map(|d| {
                        if mask & (1 << (p * k + d)) != 0 {
                            game.spaces[p].upper[d]
                        } else {
                            game.spaces[p].lower[d]
                        }
                    })
                    .collect();
                rows.push(game.spaces[p].project(&raw)?);
            }
            points.push(StrategyProfile::new(rows));
        }
    }
    for _ in 0..1000 {
        points.push(game.random_feasible_profile(&mut rng));
    }

    for p in 0..n {
        alpha_min[p] = f64::INFINITY;
    }
    for a in &points {
        for p in 0..n {
            let f = game.observation(a, p)?;
            let parts = match game.partials_at(p, a.row(p), &f) {
                Ok(v) => v,
                Err(_) => continue, // point outside the utility domain
            };
            let own_curv = parts.iter().map(|q| -q.daa).fold(f64::INFINITY, f64::min);
            alpha_min[p] = alpha_min[p].min(own_curv);
            for m in 0..n {
                if m == p {
                    continue;
                }
                let cross = (0..k)
                    .map(|d| (parts[d].daf * game.coupling.x(p, m, d)).abs())
                    .fold(0.0f64, f64::max);
                beta_max[p][m] = beta_max[p][m].max(cross);
            }
        }
    }
    for p in 0..n {
        if !alpha_min[p].is_finite() {
            alpha_min[p] = 0.0;
        }
    }
    Ok(())
}

/// Per-dimension N x N sensitivity matrices: diagonal is the own-action
/// partial, off-diagonal the observation partial scaled by the coupling.
pub fn w_matrix(game: &GameInstance, a: &StrategyProfile) -> Result<Vec<DMatrix<f64>>> {
    let n = game.num_players;
    let mut per_dim = Vec::with_capacity(game.num_dims);
    let mut parts = Vec::with_capacity(n);
    for p in 0..n {
        let f = game.observation(a, p)?;
        parts.push(game.partials_at(p, a.row(p), &f)?);
    }
    for k in 0..game.num_dims {
        let w = DMatrix::from_fn(n, n, |r, c| {
            if r == c {
                parts[r][k].da
            } else {
                parts[r][k].df * game.coupling.x(r, c, k)
            }
        });
        per_dim.push(w);
    }
    Ok(per_dim)
}

/// Max over dimensions of the spectral norm of the sensitivity matrix.
pub fn w_matrix_norm(game: &GameInstance, a: &StrategyProfile) -> Result<f64> {
    let ws = w_matrix(game, a)?;
    Ok(ws
        .iter()
        .map(|w| w.singular_values().max())
        .fold(0.0f64, f64::max))
}

/// First-order estimate of the social-utility gap between the perturbed and
/// the nominal equilibrium: `||W(a)||_2 * ||delta||_2 / c_sm`.
pub fn utility_gap_estimate(
    game: &GameInstance,
    a: &StrategyProfile,
    delta: &[f64],
    c_sm: f64,
) -> Result<f64> {
    let bound = monotonicity_distance_bound(delta, c_sm)?;
    Ok(w_matrix_norm(game, a)? * bound)
}

/// Affine reformulation of the log-family game.
#[derive(Debug, Clone)]
pub struct AviSystem {
    /// Per-player affine offsets `(y + c) / x_nn` per dimension.
    pub w: Vec<Vec<f64>>,
    /// Normalized coupling ratios `x_nm^k / x_nn^k`; the own block is identity.
    pub ratio: Vec<Vec<Vec<f64>>>,
    /// N x N aggregate: zero diagonal, off-diagonal `max_k x_nm^k / x_nn^k`.
    pub m_max: DMatrix<f64>,
    /// Smallest eigenvalue of the symmetrized aggregate matrix.
    pub lambda_min_m_max: f64,
    pub theta: f64,
}

/// Outcome of the corner-norm coupling dominance test.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AviUniqueness {
    /// Own norms dominate coupled norms for every player (sufficient for a
    /// unique equilibrium).
    pub dominance_holds: bool,
    /// The reversed inequality holds for every player (the regime where
    /// robustness can raise social utility).
    pub reversed_holds: bool,
}

pub fn build_avi(game: &GameInstance) -> Result<AviSystem> {
    let (theta, c) = match &game.family {
        UtilityFamily::LogTheta { theta, c } => (*theta, c),
        _ => {
            return Err(GameError::UnsupportedFamily {
                family: game.family.tag().into(),
                what: "affine reformulation".into(),
            })
        }
    };
    let n = game.num_players;
    let k = game.num_dims;
    let mut w = vec![vec![0.0; k]; n];
    let mut ratio = vec![vec![vec![0.0; k]; n]; n];
    for p in 0..n {
        for d in 0..k {
            let xnn = game.coupling.x(p, p, d);
            w[p][d] = (game.coupling.y(p, d) + c[p][d]) / xnn;
            for m in 0..n {
                ratio[p][m][d] = if m == p {
                    1.0
                } else {
                    game.coupling.x(p, m, d) / xnn
                };
            }
        }
    }
    let m_max = DMatrix::from_fn(n, n, |r, c| {
        if r == c {
            0.0
        } else {
            (0..k).map(|d| ratio[r][c][d]).fold(0.0f64, f64::max)
        }
    });
    let sym = (&m_max + m_max.transpose()) * 0.5;
    let lambda_min_m_max = if n > 0 {
        sym.symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    } else {
        0.0
    };
    Ok(AviSystem {
        w,
        ratio,
        m_max,
        lambda_min_m_max,
        theta,
    })
}

/// Checks the coupling dominance condition at the feasibility-maximizing
/// norms (box upper corners) — a sufficient test, since the norm of a
/// nonnegative box is maximized at its upper corner.
pub fn avi_uniqueness_check(avi: &AviSystem, spaces: &[StrategySpace]) -> AviUniqueness {
    let n = avi.w.len();
    let corner_norm: Vec<f64> = spaces
        .iter()
        .map(|s| s.upper.iter().map(|u| u * u).sum::<f64>().sqrt())
        .collect();
    let mut dominance = true;
    let mut reversed = true;
    for p in 0..n {
        let coupled: f64 = (0..n)
            .filter(|&m| m != p)
            .map(|m| avi.m_max[(p, m)] * corner_norm[m])
            .sum();
        if corner_norm[p] <= coupled {
            dominance = false;
        }
        if corner_norm[p] >= coupled {
            reversed = false;
        }
    }
    AviUniqueness {
        dominance_holds: dominance,
        reversed_holds: reversed,
    }
}

/// `||E||_2^2 / lambda_min` with `E` the diagonal of per-player max radii.
pub fn parameter_distance_bound(eps: &[Vec<f64>], lambda_min: f64) -> Result<f64> {
    if lambda_min <= 0.0 {
        return Err(GameError::InvalidConfig(
            "distance bound unavailable: aggregate coupling matrix not positive definite".into(),
        ));
    }
    let e_norm = eps
        .iter()
        .map(|row| row.iter().cloned().fold(0.0f64, |acc, x| acc.max(x.abs())))
        .fold(0.0f64, f64::max);
    Ok(e_norm * e_norm / lambda_min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{CouplingModel, SumBound};
    use approx::assert_abs_diff_eq;

    fn reference_upsilon() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.5432, -0.016, -0.0012, 1.221])
    }

    #[test]
    fn identity_is_p_matrix() {
        assert!(is_p_matrix(&DMatrix::identity(3, 3)).unwrap());
    }

    #[test]
    fn negative_determinant_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, -2.0, 1.0]);
        assert!(!is_p_matrix(&m).unwrap());
    }

    #[test]
    fn reference_matrix_is_p() {
        assert!(is_p_matrix(&reference_upsilon()).unwrap());
    }

    #[test]
    fn dimension_limit_enforced() {
        let m = DMatrix::identity(17, 17);
        assert!(matches!(is_p_matrix(&m), Err(GameError::MinorLimitExceeded(17, 16))));
    }

    #[test]
    fn monotonicity_constant_identity() {
        assert_abs_diff_eq!(strong_monotonicity_constant(&DMatrix::identity(2, 2)), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn monotonicity_constant_reference() {
        // 2x2 eigenvalue formula with symmetrized off-diagonal -0.0086
        assert_abs_diff_eq!(
            strong_monotonicity_constant(&reference_upsilon()),
            1.2209,
            epsilon = 5e-4
        );
    }

    #[test]
    fn monotonicity_constant_symmetric_two_by_two() {
        let m = DMatrix::from_row_slice(2, 2, &[0.2475, -0.01, -0.01, 0.2475]);
        assert_abs_diff_eq!(strong_monotonicity_constant(&m), 0.2375, epsilon = 1e-9);
    }

    #[test]
    fn distance_bound_arithmetic() {
        assert_abs_diff_eq!(monotonicity_distance_bound(&[0.0, 0.0], 1.0).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(monotonicity_distance_bound(&[1.0, 0.0], 2.0).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(
            monotonicity_distance_bound(&[0.8, 0.8], 0.8626).unwrap(),
            1.3115,
            epsilon = 5e-4
        );
        assert!(monotonicity_distance_bound(&[1.0], 0.0).is_err());
    }

    fn power_like_game(x12: f64, x21: f64) -> GameInstance {
        let spaces = vec![
            StrategySpace::new(vec![0.0], vec![1.0], SumBound::UpperSum(1.0)).unwrap(),
            StrategySpace::new(vec![0.0], vec![1.0], SumBound::UpperSum(1.0)).unwrap(),
        ];
        let coupling = CouplingModel {
            cross: vec![vec![vec![1.0], vec![x12]], vec![vec![x21], vec![1.0]]],
            offset: vec![vec![1.0], vec![1.0]],
        };
        GameInstance::new(spaces, coupling, UtilityFamily::RateLog).unwrap()
    }

    #[test]
    fn upsilon_closed_form_hand_values() {
        let g = power_like_game(0.01, 0.01);
        let r = build_upsilon(&g).unwrap();
        assert!(r.closed_form);
        assert_abs_diff_eq!(r.alpha_min[0], 0.2475, epsilon = 1e-4);
        assert_abs_diff_eq!(r.upsilon[(0, 1)], -0.01, epsilon = 1e-9);
        assert!(r.p_matrix);
    }

    #[test]
    fn upsilon_linear_family_vanishes() {
        let spaces = vec![
            StrategySpace::new(vec![0.1], vec![0.5], SumBound::LowerSum(0.1)).unwrap(),
            StrategySpace::new(vec![0.1], vec![0.5], SumBound::LowerSum(0.1)).unwrap(),
        ];
        let coupling = CouplingModel {
            cross: vec![vec![vec![1.0], vec![0.2]], vec![vec![0.2], vec![1.0]]],
            offset: vec![vec![0.0], vec![0.0]],
        };
        let g = GameInstance::new(
            spaces,
            coupling,
            UtilityFamily::LinearJackson {
                mu: vec![vec![5.0], vec![5.0]],
            },
        )
        .unwrap();
        let r = build_upsilon(&g).unwrap();
        assert_eq!(r.alpha_min, vec![0.0, 0.0]);
        assert_eq!(r.beta_max[0][1], 0.0);
    }

    #[test]
    fn upsilon_permutation_conjugacy() {
        let g = power_like_game(0.3, 0.05);
        let r = build_upsilon(&g).unwrap();
        // swap the two players and rebuild
        let spaces = vec![g.spaces[1].clone(), g.spaces[0].clone()];
        let coupling = CouplingModel {
            cross: vec![
                vec![g.coupling.cross[1][1].clone(), g.coupling.cross[1][0].clone()],
                vec![g.coupling.cross[0][1].clone(), g.coupling.cross[0][0].clone()],
            ],
            offset: vec![g.coupling.offset[1].clone(), g.coupling.offset[0].clone()],
        };
        let swapped = GameInstance::new(spaces, coupling, UtilityFamily::RateLog).unwrap();
        let rs = build_upsilon(&swapped).unwrap();
        assert_abs_diff_eq!(r.upsilon[(0, 0)], rs.upsilon[(1, 1)], epsilon = 1e-12);
        assert_abs_diff_eq!(r.upsilon[(0, 1)], rs.upsilon[(1, 0)], epsilon = 1e-12);
    }

    #[test]
    fn jackson_linear_mapping_constant() {
        let spaces = vec![
            StrategySpace::new(vec![0.1], vec![0.5], SumBound::LowerSum(0.1)).unwrap(),
            StrategySpace::new(vec![0.1], vec![0.5], SumBound::LowerSum(0.1)).unwrap(),
        ];
        let coupling = CouplingModel {
            cross: vec![vec![vec![1.3], vec![0.2]], vec![vec![0.2], vec![1.3]]],
            offset: vec![vec![0.0], vec![0.0]],
        };
        let g = GameInstance::new(
            spaces,
            coupling,
            UtilityFamily::LinearJackson {
                mu: vec![vec![5.0], vec![5.0]],
            },
        )
        .unwrap();
        let a = StrategyProfile::new(vec![vec![0.2], vec![0.3]]);
        let f = vi_mapping(&g, &a).unwrap();
        assert_abs_diff_eq!(f[0][0], 1.3, epsilon = 1e-12);
        let b = StrategyProfile::new(vec![vec![0.4], vec![0.1]]);
        assert_abs_diff_eq!(vi_mapping(&g, &b).unwrap()[0][0], 1.3, epsilon = 1e-12);
    }

    #[test]
    fn avi_dominance_hand_inequalities() {
        let boxes = |n: usize| {
            (0..n)
                .map(|_| StrategySpace::new(vec![0.0], vec![1.0], SumBound::UpperSum(1.0)).unwrap())
                .collect::<Vec<_>>()
        };
        let make = |x_off: f64| {
            let coupling = CouplingModel {
                cross: vec![vec![vec![1.0], vec![x_off]], vec![vec![x_off], vec![1.0]]],
                offset: vec![vec![0.5], vec![0.5]],
            };
            GameInstance::new(
                boxes(2),
                coupling,
                UtilityFamily::LogTheta {
                    theta: 1.0,
                    c: vec![vec![1.0], vec![1.0]],
                },
            )
            .unwrap()
        };
        let strong = build_avi(&make(2.0)).unwrap();
        let u = avi_uniqueness_check(&strong, &boxes(2));
        assert!(!u.dominance_holds);
        assert!(u.reversed_holds);

        let weak = build_avi(&make(0.01)).unwrap();
        let u = avi_uniqueness_check(&weak, &boxes(2));
        assert!(u.dominance_holds);
        assert!(!u.reversed_holds);

        let decoupled_coupling = CouplingModel {
            cross: vec![vec![vec![1.0], vec![0.0]], vec![vec![0.0], vec![1.0]]],
            offset: vec![vec![0.5], vec![0.5]],
        };
        let decoupled = GameInstance::new(
            boxes(2),
            decoupled_coupling,
            UtilityFamily::LogTheta {
                theta: 1.0,
                c: vec![vec![1.0], vec![1.0]],
            },
        )
        .unwrap();
        let avi = build_avi(&decoupled).unwrap();
        assert_eq!(avi.m_max[(0, 1)], 0.0);
        assert!(avi_uniqueness_check(&avi, &boxes(2)).dominance_holds);
    }

    #[test]
    fn parameter_bound_arithmetic() {
        assert_abs_diff_eq!(
            parameter_distance_bound(&[vec![0.0], vec![0.0]], 0.5).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            parameter_distance_bound(&[vec![0.1], vec![0.1]], 0.5).unwrap(),
            0.02,
            epsilon = 1e-12
        );
        assert!(parameter_distance_bound(&[vec![0.1]], 0.0).is_err());
    }
}
