//! Concrete game instantiations: power control over interference channels
//! and service-rate competition in Jackson queueing networks, plus the
//! seeded scenario generators used by the harness.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::{
    CouplingModel, GameInstance, StrategyProfile, StrategySpace, SumBound, UtilityFamily,
    STABILITY_GUARD,
};

/// Interference regime targeted by the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerRegime {
    /// Cross gains below 0.01 of the direct gain: unique equilibrium.
    UniqueNe,
    /// Cross gains above 0.5 of the direct gain: multiple equilibria possible.
    MultiNe,
}

/// A power-control instance over an interference channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerControlScenario {
    pub num_players: usize,
    pub num_dims: usize,
    /// Direct gains `h[n][k]`.
    pub direct: Vec<Vec<f64>>,
    /// Cross gains `h[n][m][k]`; the diagonal equals the direct gain.
    pub cross: Vec<Vec<Vec<f64>>>,
    /// Receiver noise `sigma[n][k]`.
    pub noise: Vec<Vec<f64>>,
    /// Per-player total power budget.
    pub power_cap: Vec<f64>,
    pub regime: PowerRegime,
    pub seed: u64,
    /// Use the high-SINR `log(a/f)` utility, whose mixed third partials
    /// vanish exactly.
    pub high_sinr: bool,
}

impl PowerControlScenario {
    /// Cross gain normalized by the receiver's direct gain; 1 on the diagonal.
    pub fn normalized_gain(&self, n: usize, m: usize, k: usize) -> f64 {
        self.cross[n][m][k] / self.direct[n][k]
    }

    pub fn normalized_noise(&self, n: usize, k: usize) -> f64 {
        self.noise[n][k] / self.direct[n][k]
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.direct.iter().flatten().all(|&h| h > 0.0)
            && self.cross.iter().flatten().flatten().all(|&h| h > 0.0)
            && self.noise.iter().flatten().all(|&s| s > 0.0)
            && self.power_cap.iter().all(|&p| p > 0.0);
        if !positive {
            return Err(GameError::InvalidConfig(
                "power scenario needs strictly positive gains, noise and caps".into(),
            ));
        }
        for n in 0..self.num_players {
            for m in 0..self.num_players {
                if m == n {
                    continue;
                }
                for k in 0..self.num_dims {
                    let g = self.normalized_gain(n, m, k);
                    let consistent = match self.regime {
                        PowerRegime::UniqueNe => g < 0.01,
                        PowerRegime::MultiNe => g > 0.5,
                    };
                    if !consistent {
                        return Err(GameError::InvalidConfig(format!(
                            "normalized gain {g} at ({n},{m},{k}) contradicts the {:?} regime tag",
                            self.regime
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Builds the rate game: coupling = normalized gains, offsets = normalized
/// noise, per-player power budgets.
pub fn make_power_game(s: &PowerControlScenario) -> Result<GameInstance> {
    s.validate()?;
    let n = s.num_players;
    let k = s.num_dims;
    let spaces = (0..n)
        .map(|p| {
            StrategySpace::new(
                vec![0.0; k],
                vec![s.power_cap[p]; k],
                SumBound::UpperSum(s.power_cap[p]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let cross = (0..n)
        .map(|p| {
            (0..n)
                .map(|m| (0..k).map(|d| s.normalized_gain(p, m, d)).collect())
                .collect()
        })
        .collect();
    let offset = (0..n)
        .map(|p| (0..k).map(|d| s.normalized_noise(p, d)).collect())
        .collect();
    let family = if s.high_sinr {
        UtilityFamily::LogTheta {
            theta: 1.0,
            c: vec![vec![0.0; k]; n],
        }
    } else {
        UtilityFamily::RateLog
    };
    GameInstance::new(spaces, CouplingModel { cross, offset }, family)
}

/// Closed-form curvature extremes for the power game: own curvature at full
/// interference and budget, cross curvature at zero power.
pub fn power_curvature_closed_form(s: &PowerControlScenario) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = s.num_players;
    let k = s.num_dims;
    let mut alpha = vec![f64::INFINITY; n];
    let mut beta = vec![vec![0.0f64; n]; n];
    for p in 0..n {
        for d in 0..k {
            let denom: f64 = s.normalized_noise(p, d)
                + (0..n)
                    .map(|m| s.power_cap[m] * s.normalized_gain(p, m, d))
                    .sum::<f64>();
            alpha[p] = alpha[p].min(1.0 / (denom * denom));
        }
        for m in 0..n {
            if m == p {
                continue;
            }
            for d in 0..k {
                let sig = s.normalized_noise(p, d);
                beta[p][m] = beta[p][m].max(s.normalized_gain(p, m, d) / (sig * sig));
            }
        }
    }
    (alpha, beta)
}

/// A Jackson-network service-rate competition instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JacksonScenario {
    pub num_nodes: usize,
    pub num_classes: usize,
    /// Per-class routing matrices `routing[k][n][m]` = probability a class-k
    /// job leaving node `m` is routed to node `n`.
    pub routing: Vec<Vec<Vec<f64>>>,
    /// Service rates `mu[n][k]`.
    pub mu: Vec<Vec<f64>>,
    /// Per-node minimum total admitted rate (lower sum bound).
    pub psi_min: Vec<f64>,
    /// Per-node per-class admitted-rate cap.
    pub psi_max: Vec<Vec<f64>>,
    pub seed: u64,
}

impl JacksonScenario {
    /// `(I - R^k)^{-1}` for class `k`.
    pub fn theta(&self, k: usize) -> Result<DMatrix<f64>> {
        let n = self.num_nodes;
        let r = DMatrix::from_fn(n, n, |i, j| self.routing[k][i][j]);
        let i_minus_r = DMatrix::identity(n, n) - &r;
        i_minus_r.try_inverse().ok_or_else(|| {
            GameError::InvalidConfig(format!("routing matrix for class {k} is not subcritical"))
        })
    }

    /// Exit probability of column `m` for class `k`: one minus the column sum.
    pub fn exit_probability(&self, k: usize, m: usize) -> f64 {
        1.0 - (0..self.num_nodes).map(|n| self.routing[k][n][m]).sum::<f64>()
    }

    pub fn validate(&self) -> Result<()> {
        for k in 0..self.num_classes {
            for m in 0..self.num_nodes {
                for n in 0..self.num_nodes {
                    if self.routing[k][n][m] < 0.0 {
                        return Err(GameError::InvalidConfig(
                            "routing probabilities must be nonnegative".into(),
                        ));
                    }
                }
                let exit = self.exit_probability(k, m);
                if !(-1e-12..=1.0 + 1e-12).contains(&exit) {
                    return Err(GameError::InvalidConfig(format!(
                        "column {m} of class {k} has exit probability {exit}"
                    )));
                }
            }
            let theta = self.theta(k)?;
            if theta.iter().any(|&v| v < -1e-10) {
                return Err(GameError::InvalidConfig(format!(
                    "routing matrix for class {k} has spectral radius >= 1"
                )));
            }
        }
        if self.mu.iter().flatten().any(|&m| m <= 0.0) {
            return Err(GameError::InvalidConfig("service rates must be positive".into()));
        }
        Ok(())
    }

    /// Visit-ratio coefficients `nu[k][n][m]` (entries of `theta(k)`).
    pub fn visit_ratios(&self) -> Result<Vec<DMatrix<f64>>> {
        (0..self.num_classes).map(|k| self.theta(k)).collect()
    }
}

/// Builds the delay game: coupling = visit ratios, zero offsets, lower-sum
/// strategy spaces (minimum admitted rate per node).
pub fn make_jackson_game(s: &JacksonScenario) -> Result<GameInstance> {
    s.validate()?;
    let n = s.num_nodes;
    let k = s.num_classes;
    let nu = s.visit_ratios()?;
    let spaces = (0..n)
        .map(|p| {
            StrategySpace::new(
                vec![0.0; k],
                s.psi_max[p].clone(),
                SumBound::LowerSum(s.psi_min[p]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let cross = (0..n)
        .map(|p| {
            (0..n)
                .map(|m| (0..k).map(|d| nu[d][(p, m)]).collect())
                .collect()
        })
        .collect();
    let coupling = CouplingModel {
        cross,
        offset: vec![vec![0.0; k]; n],
    };
    GameInstance::new(spaces, coupling, UtilityFamily::LinearJackson { mu: s.mu.clone() })
}

/// Total expected network delay at admitted rates `psi`: the sum over nodes
/// and classes of the M/M/1 sojourn terms.
pub fn total_delay(s: &JacksonScenario, psi: &StrategyProfile) -> Result<f64> {
    let nu = s.visit_ratios()?;
    let mut total = 0.0;
    for node in 0..s.num_nodes {
        for class in 0..s.num_classes {
            let load: f64 = (0..s.num_nodes)
                .map(|m| nu[class][(node, m)] * psi.rows[m][class])
                .sum();
            let margin = s.mu[node][class] - load;
            if margin <= STABILITY_GUARD {
                return Err(GameError::Instability {
                    node,
                    class,
                    margin,
                });
            }
            total += 1.0 / margin;
        }
    }
    Ok(total)
}

fn rayleigh_power(rng: &mut impl Rng) -> f64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    0.5 * (re * re + im * im)
}

/// Seeded power-control scenarios with cross gains scaled into the regime band.
pub fn generate_power_scenarios(
    num_players: usize,
    num_dims: usize,
    count: usize,
    regime: PowerRegime,
    high_sinr: bool,
    seed: u64,
) -> Vec<PowerControlScenario> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let scenario_seed = seed.wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed);
        let direct: Vec<Vec<f64>> = (0..num_players)
            .map(|_| (0..num_dims).map(|_| rayleigh_power(&mut rng).max(1e-3)).collect())
            .collect();
        let mut cross = vec![vec![vec![0.0; num_dims]; num_players]; num_players];
        for n in 0..num_players {
            for m in 0..num_players {
                for k in 0..num_dims {
                    if m == n {
                        cross[n][m][k] = direct[n][k];
                    } else {
                        // squash the fading draw into (0,1), then map into
                        // the regime's normalized-gain band
                        let raw = rayleigh_power(&mut rng);
                        let u = raw / (raw + 1.0);
                        let band = match regime {
                            PowerRegime::UniqueNe => 0.001 + 0.008 * u,
                            PowerRegime::MultiNe => 0.55 + 1.0 * u,
                        };
                        cross[n][m][k] = band * direct[n][k];
                    }
                }
            }
        }
        let noise: Vec<Vec<f64>> = (0..num_players)
            .map(|n| {
                (0..num_dims)
                    .map(|k| rng.gen_range(0.5..1.5) * direct[n][k])
                    .collect()
            })
            .collect();
        out.push(PowerControlScenario {
            num_players,
            num_dims,
            direct,
            cross,
            noise,
            power_cap: vec![1.0; num_players],
            regime,
            seed: scenario_seed,
            high_sinr,
        });
    }
    out
}

/// Seeded Jackson scenarios with every routing column normalized to the
/// requested total routing probability (`1 -` exit probability).
pub fn generate_jackson_scenarios(
    num_nodes: usize,
    num_classes: usize,
    count: usize,
    routing_mass: f64,
    seed: u64,
) -> Vec<JacksonScenario> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let scenario_seed = seed.wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed);
        let mut routing = vec![vec![vec![0.0; num_nodes]; num_nodes]; num_classes];
        for k in 0..num_classes {
            for m in 0..num_nodes {
                let weights: Vec<f64> = (0..num_nodes)
                    .map(|n| if n == m { 0.0 } else { rng.gen_range(0.05..1.0) })
                    .collect();
                let total: f64 = weights.iter().sum();
                for n in 0..num_nodes {
                    routing[k][n][m] = routing_mass * weights[n] / total;
                }
            }
        }
        let mu: Vec<Vec<f64>> = (0..num_nodes)
            .map(|_| (0..num_classes).map(|_| rng.gen_range(2.0..5.0)).collect())
            .collect();
        let psi_min: Vec<f64> = (0..num_nodes)
            .map(|_| (0..num_classes).map(|_| rng.gen_range(0.1..0.5)).sum())
            .collect();
        let psi_max = vec![vec![1.0; num_classes]; num_nodes];
        out.push(JacksonScenario {
            num_nodes,
            num_classes,
            routing,
            mu,
            psi_min,
            psi_max,
            seed: scenario_seed,
        });
    }
    out
}
