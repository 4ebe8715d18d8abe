//! Additively coupled game model: strategy spaces, couplings, utility
//! families, and their evaluation and differentiation.

mod family;
mod space;

pub use family::{Partials, UtilityFamily, STABILITY_GUARD};
pub use space::{StrategySpace, SumBound, FEASIBILITY_TOL};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};

/// Cross-effect coefficients `x[n][m][k]` and ambient offsets `y[n][k]`.
///
/// The diagonal `x[n][n][k]` is carried as data (it normalizes the affine
/// reformulation for the log family) but does not enter the observation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingModel {
    pub cross: Vec<Vec<Vec<f64>>>,
    pub offset: Vec<Vec<f64>>,
}

impl CouplingModel {
    pub fn x(&self, n: usize, m: usize, k: usize) -> f64 {
        self.cross[n][m][k]
    }

    pub fn y(&self, n: usize, k: usize) -> f64 {
        self.offset[n][k]
    }
}

/// An N-by-K action matrix, one row per player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyProfile {
    pub rows: Vec<Vec<f64>>,
}

impl StrategyProfile {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            rows: vec![vec![0.0; k]; n],
        }
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.rows[n]
    }

    pub fn set_row(&mut self, n: usize, v: Vec<f64>) {
        self.rows[n] = v;
    }

    /// Euclidean distance between two profiles, flattened.
    pub fn distance(&self, other: &StrategyProfile) -> f64 {
        self.rows
            .iter()
            .zip(&other.rows)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
            .sum::<f64>()
            .sqrt()
    }
}

/// A full additively coupled game instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameInstance {
    pub num_players: usize,
    pub num_dims: usize,
    pub spaces: Vec<StrategySpace>,
    pub coupling: CouplingModel,
    pub family: UtilityFamily,
}

impl GameInstance {
    pub fn new(
        spaces: Vec<StrategySpace>,
        coupling: CouplingModel,
        family: UtilityFamily,
    ) -> Result<Self> {
        let n = spaces.len();
        if n == 0 {
            return Err(GameError::InvalidConfig("no players".into()));
        }
        let k = spaces[0].dims();
        for (i, s) in spaces.iter().enumerate() {
            if s.dims() != k {
                return Err(GameError::DimensionMismatch(format!(
                    "space {i} has {} dims, expected {k}",
                    s.dims()
                )));
            }
            s.check_nonempty(i)?;
        }
        if coupling.cross.len() != n || coupling.offset.len() != n {
            return Err(GameError::DimensionMismatch("coupling has wrong player count".into()));
        }
        for row in &coupling.cross {
            if row.len() != n || row.iter().any(|v| v.len() != k) {
                return Err(GameError::DimensionMismatch("coupling tensor shape".into()));
            }
        }
        for v in &coupling.offset {
            if v.len() != k {
                return Err(GameError::DimensionMismatch("offset vector shape".into()));
            }
        }
        if coupling
            .cross
            .iter()
            .flatten()
            .flatten()
            .any(|x| !x.is_finite())
        {
            return Err(GameError::InvalidConfig("non-finite coupling coefficient".into()));
        }
        family.validate_theta()?;
        if family.is_log_theta() {
            for nn in 0..n {
                for kk in 0..k {
                    if coupling.cross[nn][nn][kk] <= 0.0 {
                        return Err(GameError::InvalidConfig(format!(
                            "log family divides by x[{nn}][{nn}][{kk}] = {}",
                            coupling.cross[nn][nn][kk]
                        )));
                    }
                }
            }
        }
        let game = Self {
            num_players: n,
            num_dims: k,
            spaces,
            coupling,
            family,
        };
        game.spot_check_monotonicity()?;
        Ok(game)
    }

    fn check_player(&self, n: usize) -> Result<()> {
        if n >= self.num_players {
            return Err(GameError::PlayerOutOfRange(n, self.num_players));
        }
        Ok(())
    }

    pub fn is_feasible(&self, a: &StrategyProfile) -> bool {
        a.rows.len() == self.num_players
            && a.rows
                .iter()
                .zip(&self.spaces)
                .all(|(row, space)| space.contains(row))
    }

    /// Additive impact of the other players on player `n`:
    /// `f_n^k = sum_{m != n} a_m^k x_nm^k + y_n^k`.
    pub fn observation(&self, a: &StrategyProfile, n: usize) -> Result<Vec<f64>> {
        self.check_player(n)?;
        let mut f = vec![0.0; self.num_dims];
        for k in 0..self.num_dims {
            let mut acc = self.coupling.y(n, k);
            for m in 0..self.num_players {
                if m != n {
                    acc += a.rows[m][k] * self.coupling.x(n, m, k);
                }
            }
            f[k] = acc;
        }
        Ok(f)
    }

    /// Utility of player `n` at profile `a`: the sum over dimensions of the
    /// family term evaluated at `(a_n^k, f_n^k)`.
    pub fn utility(&self, a: &StrategyProfile, n: usize) -> Result<f64> {
        let f = self.observation(a, n)?;
        self.utility_at(n, a.row(n), &f)
    }

    /// Utility of player `n` for own action `own` against observation `f`.
    pub fn utility_at(&self, n: usize, own: &[f64], f: &[f64]) -> Result<f64> {
        self.check_player(n)?;
        let mut total = 0.0;
        for k in 0..self.num_dims {
            total += self
                .family
                .value(n, k, own[k], f[k], self.coupling.x(n, n, k))?;
        }
        Ok(total)
    }

    /// Sum of all players' utilities.
    pub fn social_utility(&self, a: &StrategyProfile) -> Result<f64> {
        (0..self.num_players).map(|n| self.utility(a, n)).sum()
    }

    /// Per-dimension analytic partials of player `n`'s utility at `(own, f)`,
    /// including the mixed and third-order terms used by the convergence
    /// precondition check.
    pub fn partials_at(&self, n: usize, own: &[f64], f: &[f64]) -> Result<Vec<Partials>> {
        self.check_player(n)?;
        (0..self.num_dims)
            .map(|k| {
                self.family
                    .partials(n, k, own[k], f[k], self.coupling.x(n, n, k))
            })
            .collect()
    }

    /// Gradients of player `n`'s utility with respect to the own action and
    /// the observation, at profile `a`.
    pub fn utility_gradients(&self, a: &StrategyProfile, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let f = self.observation(a, n)?;
        let parts = self.partials_at(n, a.row(n), &f)?;
        Ok((
            parts.iter().map(|p| p.da).collect(),
            parts.iter().map(|p| p.df).collect(),
        ))
    }

    /// A deterministic random feasible profile, used by spot checks and tests.
    pub fn random_feasible_profile(&self, rng: &mut impl Rng) -> StrategyProfile {
        let rows = self
            .spaces
            .iter()
            .map(|s| {
                let raw: Vec<f64> = (0..s.dims())
                    .map(|k| rng.gen_range(s.lower[k]..=s.upper[k].max(s.lower[k] + f64::EPSILON)))
                    .collect();
                s.project(&raw).expect("space validated nonempty")
            })
            .collect();
        StrategyProfile::new(rows)
    }

    // A1/A2 finite-difference spot checks at a handful of feasible points.
    // A1 is waived for the linear Jackson family (decreasing by definition).
    fn spot_check_monotonicity(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5107);
        let h = 1e-6;
        for _ in 0..5 {
            let a = self.random_feasible_profile(&mut rng);
            for n in 0..self.num_players {
                let f = self.observation(&a, n)?;
                let own = a.row(n);
                for k in 0..self.num_dims {
                    // keep the probe interior to the utility domain
                    let (ap, am) = (own[k] + h, (own[k] - h).max(self.spaces[n].lower[k]));
                    let (fp, fm) = (f[k] + h, f[k]);
                    let v = |ak: f64, fk: f64| {
                        let mut ov = own.to_vec();
                        let mut fv = f.clone();
                        ov[k] = ak;
                        fv[k] = fk;
                        self.utility_at(n, &ov, &fv)
                    };
                    if !self.family.a1_waived() {
                        match (v(ap, f[k]), v(am, f[k])) {
                            (Ok(hi), Ok(lo)) if hi <= lo => {
                                return Err(GameError::InvalidConfig(format!(
                                    "A1 violated for player {n}, dim {k}"
                                )));
                            }
                            _ => {}
                        }
                    }
                    match (v(own[k], fp), v(own[k], fm)) {
                        (Ok(hi), Ok(lo)) if hi >= lo && own[k] > self.spaces[n].lower[k] + h => {
                            return Err(GameError::InvalidConfig(format!(
                                "A2 violated for player {n}, dim {k}"
                            )));
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }
}
