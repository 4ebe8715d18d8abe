//! Equilibrium-seeking dynamics: the proximal response map, closed-form
//! best-response sweeps, gradient-play and Jacobi baselines, and the
//! opportunistic robustness-expansion loop.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::{GameInstance, StrategyProfile, SumBound, UtilityFamily};
use crate::robust::{psi_at, robust_best_response_log, UncertaintyMode, UncertaintySpec};
use crate::vi::{build_avi, build_upsilon, AviSystem};

/// Whether one iteration updates every player against the previous iterate
/// or sweeps players in order against the freshest profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateScheme {
    Simultaneous,
    Sequential,
}

/// Selection of the per-player proximal subproblem solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InnerSolver {
    /// Closed form when the family permits, otherwise projected gradient.
    Auto,
    /// Always projected gradient ascent on the regularized objective.
    Generic,
}

/// Per-iteration multiplicative strategy noise, for studying dynamics under
/// imperfect strategy exchange.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StrategyNoise {
    pub seed: u64,
    /// Perturbation magnitude relative to each dimension's box width.
    pub magnitude: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop once the iterate step norm falls to this level.
    pub tol: f64,
    pub scheme: UpdateScheme,
    pub inner: InnerSolver,
    /// Gradient-play step size; estimated from local curvature when absent.
    pub step_size: Option<f64>,
    pub inner_tol: f64,
    pub noise: Option<StrategyNoise>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tol: 1e-6,
            scheme: UpdateScheme::Simultaneous,
            inner: InnerSolver::Auto,
            step_size: None,
            inner_tol: 1e-8,
            noise: None,
        }
    }
}

/// Advisory report on the convergence preconditions of the proximal map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreconditionReport {
    pub p_matrix: Option<bool>,
    /// All sampled mixed third partials vanish.
    pub third_partials_zero: bool,
    pub c_sm: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunTrace {
    pub profiles: Vec<StrategyProfile>,
    /// Per-iteration utilities, one row per recorded profile.
    pub utilities: Vec<Vec<f64>>,
    pub step_norms: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub preconditions: Option<PreconditionReport>,
    /// Populated when a player's update failed (e.g. queue instability).
    pub failure: Option<String>,
}

impl RunTrace {
    pub fn final_profile(&self) -> &StrategyProfile {
        self.profiles.last().expect("trace holds the initial profile")
    }
}

fn utilities_or_nan(game: &GameInstance, a: &StrategyProfile) -> Vec<f64> {
    (0..game.num_players)
        .map(|n| game.utility(a, n).unwrap_or(f64::NAN))
        .collect()
}

fn check_mode(game: &GameInstance, spec: &UncertaintySpec) -> Result<()> {
    if matches!(spec.mode, UncertaintyMode::Parameter { .. })
        && !spec.is_zero()
        && !game.family.is_log_theta()
    {
        return Err(GameError::InvalidConfig(
            "parameter-level uncertainty needs the log-theta family".into(),
        ));
    }
    Ok(())
}

// water-level bisection for a budget-constrained per-dimension fill rule
fn bisect_water_level(
    fill: impl Fn(f64) -> Vec<f64>,
    budget: f64,
    mut lo: f64,
    mut hi: f64,
) -> Result<Vec<f64>> {
    let total = |s: f64| -> f64 { fill(s).iter().sum() };
    let mut grow = 0;
    while total(hi) < budget {
        hi = hi.abs() * 2.0 + 1.0;
        grow += 1;
        if grow > 200 {
            return Err(GameError::BracketFailure(
                "water level cannot reach the budget".into(),
            ));
        }
    }
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

/// The proximal-map closed form for the log family: each dimension moves to
/// the average of the previous action and the water-level response.
fn proximal_closed_form(
    game: &GameInstance,
    avi: &AviSystem,
    n: usize,
    b: &StrategyProfile,
    spec: &UncertaintySpec,
) -> Result<Vec<f64>> {
    let space = &game.spaces[n];
    let budget = match space.sum {
        SumBound::UpperSum(s) => s,
        SumBound::LowerSum(_) => {
            return Err(GameError::InvalidConfig(
                "closed-form proximal step needs an upper sum bound".into(),
            ))
        }
    };
    let k = space.dims();
    let mut base = vec![0.0; k];
    for d in 0..k {
        let mut acc = avi.w[n][d];
        let mut opp_sq = 0.0;
        for (m, row) in b.rows.iter().enumerate() {
            if m != n {
                acc += avi.ratio[n][m][d] * row[d];
                opp_sq += row[d] * row[d];
            }
        }
        base[d] = acc + spec.parameter_radius(n, d) * opp_sq.sqrt();
    }
    let prev = b.row(n).to_vec();
    let fill = |s: f64| -> Vec<f64> {
        (0..k)
            .map(|d| (0.5 * (s - base[d] + prev[d])).clamp(space.lower[d], space.upper[d]))
            .collect()
    };
    let top_sum: f64 = space.upper.iter().sum();
    if top_sum <= budget + 1e-12 {
        // slack budget: the closed form's multiplier logic does not apply
        return Err(GameError::InvalidConfig("budget never binds".into()));
    }
    bisect_water_level(fill, budget, -1.0, 1.0)
}

/// One player's proximal response: the maximizer of the robust utility minus
/// half the squared distance to the current action.
pub fn proximal_step(
    game: &GameInstance,
    spec: &UncertaintySpec,
    b: &StrategyProfile,
    n: usize,
) -> Result<Vec<f64>> {
    proximal_step_with(game, spec, b, n, InnerSolver::Auto, 1e-8)
}

pub fn proximal_step_with(
    game: &GameInstance,
    spec: &UncertaintySpec,
    b: &StrategyProfile,
    n: usize,
    inner: InnerSolver,
    inner_tol: f64,
) -> Result<Vec<f64>> {
    check_mode(game, spec)?;
    let observation_mode = matches!(spec.mode, UncertaintyMode::Observation { .. }) && !spec.is_zero();
    if inner == InnerSolver::Auto && game.family.is_log_theta() && !observation_mode {
        if let Ok(avi) = build_avi(game) {
            if let Ok(a) = proximal_closed_form(game, &avi, n, b, spec) {
                return Ok(a);
            }
        }
    }
    proximal_step_generic(game, spec, b, n, inner_tol)
}

/// Projected gradient ascent with Armijo backtracking on the regularized
/// objective. The robust-utility gradient is the own-action gradient at the
/// worst-case observation (the ball does not move with the own action).
pub fn proximal_step_generic(
    game: &GameInstance,
    spec: &UncertaintySpec,
    b: &StrategyProfile,
    n: usize,
    inner_tol: f64,
) -> Result<Vec<f64>> {
    let f = game.observation(b, n)?;
    let eps = spec.observation_radius(n, &f);
    let space = &game.spaces[n];
    let bn = b.row(n).to_vec();

    let objective = |a: &[f64]| -> Result<f64> {
        let p = psi_at(game, n, a, &f, eps)?;
        let reg: f64 = a.iter().zip(&bn).map(|(x, y)| (x - y) * (x - y)).sum();
        Ok(p - 0.5 * reg)
    };
    let gradient = |a: &[f64]| -> Result<Vec<f64>> {
        let wc = crate::robust::worst_case_at(game, n, a, &f, eps)?;
        let parts = game.partials_at(n, a, &wc.f_worst)?;
        Ok(parts
            .iter()
            .zip(a.iter().zip(&bn))
            .map(|(p, (x, y))| p.da - (x - y))
            .collect())
    };

    let mut a = space.project(&bn)?;
    let mut phi = objective(&a)?;
    let mut residual = f64::INFINITY;
    let mut stalls = 0;
    for _ in 0..1000 {
        let g = gradient(&a)?;
        let probe = space.project(&a.iter().zip(&g).map(|(x, gg)| x + gg).collect::<Vec<_>>())?;
        residual = probe
            .iter()
            .zip(&a)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        if residual <= inner_tol {
            return Ok(a);
        }
        let mut tau = 1.0;
        let mut advanced = false;
        for _ in 0..60 {
            let cand = space.project(
                &a.iter()
                    .zip(&g)
                    .map(|(x, gg)| x + tau * gg)
                    .collect::<Vec<_>>(),
            )?;
            let slope: f64 = g.iter().zip(cand.iter().zip(&a)).map(|(gg, (c, x))| gg * (c - x)).sum();
            match objective(&cand) {
                Ok(val) if val >= phi + 0.5 * slope - 1e-15 => {
                    // below float precision of the objective the residual can
                    // no longer be driven down; stop at numerical stationarity
                    if val - phi <= 1e-13 * (1.0 + phi.abs()) {
                        stalls += 1;
                    } else {
                        stalls = 0;
                    }
                    a = cand;
                    phi = val;
                    advanced = true;
                    break;
                }
                _ => tau *= 0.5,
            }
        }
        if !advanced || stalls >= 2 {
            return Ok(a);
        }
    }
    if residual <= inner_tol.max(1e-6) {
        Ok(a)
    } else {
        Err(GameError::InnerSolveFailed { residual })
    }
}

fn apply_noise(game: &GameInstance, a: &mut StrategyProfile, noise: &StrategyNoise, rng: &mut ChaCha8Rng) {
    for (n, row) in a.rows.iter_mut().enumerate() {
        let space = &game.spaces[n];
        let raw: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let width = space.upper[k] - space.lower[k];
                x + noise.magnitude * width * rng.gen_range(-1.0..=1.0)
            })
            .collect();
        *row = space.project(&raw).expect("space validated nonempty");
    }
}

fn precondition_report(game: &GameInstance, a0: &StrategyProfile) -> PreconditionReport {
    let (p_matrix, c_sm) = match build_upsilon(game) {
        Ok(r) => (Some(r.p_matrix), Some(r.c_sm)),
        Err(_) => (None, None),
    };
    let mut third_zero = true;
    for n in 0..game.num_players {
        if let Ok(f) = game.observation(a0, n) {
            if let Ok(parts) = game.partials_at(n, a0.row(n), &f) {
                if parts.iter().any(|p| p.daaf.abs() > 1e-9) {
                    third_zero = false;
                }
            }
        }
    }
    PreconditionReport {
        p_matrix,
        third_partials_zero: third_zero,
        c_sm,
    }
}

type PlayerUpdate<'a> = dyn Fn(&StrategyProfile, usize) -> Result<Vec<f64>> + 'a;

// shared iteration driver for all the dynamics
fn iterate(
    game: &GameInstance,
    config: &SolverConfig,
    a0: &StrategyProfile,
    preconditions: Option<PreconditionReport>,
    update: &PlayerUpdate,
) -> RunTrace {
    let mut trace = RunTrace {
        profiles: vec![a0.clone()],
        utilities: vec![utilities_or_nan(game, a0)],
        step_norms: Vec::new(),
        converged: false,
        iterations: 0,
        preconditions,
        failure: None,
    };
    let mut rng = config
        .noise
        .map(|n| ChaCha8Rng::seed_from_u64(n.seed));
    let mut current = a0.clone();
    for t in 1..=config.max_iters {
        trace.iterations = t;
        let previous = current.clone();
        let mut next = current.clone();
        for n in 0..game.num_players {
            let reference = match config.scheme {
                UpdateScheme::Simultaneous => &previous,
                UpdateScheme::Sequential => &next,
            };
            match update(reference, n) {
                Ok(row) => next.set_row(n, row),
                Err(e) => {
                    trace.failure = Some(e.to_string());
                    trace.profiles.push(next.clone());
                    trace.utilities.push(utilities_or_nan(game, &next));
                    return trace;
                }
            }
        }
        if let (Some(noise), Some(rng)) = (&config.noise, rng.as_mut()) {
            apply_noise(game, &mut next, noise, rng);
        }
        let step = next.distance(&previous);
        trace.step_norms.push(step);
        trace.profiles.push(next.clone());
        trace.utilities.push(utilities_or_nan(game, &next));
        current = next;
        if step <= config.tol {
            trace.converged = true;
            break;
        }
    }
    trace
}

/// The distributed proximal-response dynamics. Convergence preconditions are
/// evaluated and reported but never enforced.
pub fn run_distributed(
    game: &GameInstance,
    spec: &UncertaintySpec,
    config: &SolverConfig,
    a0: &StrategyProfile,
) -> Result<RunTrace> {
    check_mode(game, spec)?;
    if !game.is_feasible(a0) {
        return Err(GameError::InfeasibleProfile("initial profile".into()));
    }
    let pre = precondition_report(game, a0);
    let update = |b: &StrategyProfile, n: usize| {
        proximal_step_with(game, spec, b, n, config.inner, config.inner_tol)
    };
    Ok(iterate(game, config, a0, Some(pre), &update))
}

/// Iterated closed-form best responses for the log family (the waterfilling
/// baseline). The robust penalty enters iff the spec carries parameter radii.
pub fn best_response_sweep(
    game: &GameInstance,
    spec: &UncertaintySpec,
    config: &SolverConfig,
    a0: &StrategyProfile,
) -> Result<RunTrace> {
    if !game.family.is_log_theta() {
        return Err(GameError::UnsupportedFamily {
            family: game.family.tag().into(),
            what: "closed-form best-response sweep".into(),
        });
    }
    check_mode(game, spec)?;
    if !game.is_feasible(a0) {
        return Err(GameError::InfeasibleProfile("initial profile".into()));
    }
    let avi = build_avi(game)?;
    let update = |b: &StrategyProfile, n: usize| {
        robust_best_response_log(&avi, n, b, spec, &game.spaces[n])
    };
    Ok(iterate(game, config, a0, None, &update))
}

fn estimate_step(game: &GameInstance, a0: &StrategyProfile) -> f64 {
    let mut curv: f64 = 0.0;
    for n in 0..game.num_players {
        if let Ok(f) = game.observation(a0, n) {
            if let Ok(parts) = game.partials_at(n, a0.row(n), &f) {
                for p in parts {
                    curv = curv.max(p.daa.abs());
                }
            }
        }
    }
    0.1 / (1.0 + curv)
}

/// Fixed-step projected gradient ascent on each player's own utility.
pub fn gradient_play(
    game: &GameInstance,
    config: &SolverConfig,
    a0: &StrategyProfile,
) -> Result<RunTrace> {
    if !game.is_feasible(a0) {
        return Err(GameError::InfeasibleProfile("initial profile".into()));
    }
    let step = config.step_size.unwrap_or_else(|| estimate_step(game, a0));
    let update = |b: &StrategyProfile, n: usize| -> Result<Vec<f64>> {
        let (da, _) = game.utility_gradients(b, n)?;
        let raw: Vec<f64> = b
            .row(n)
            .iter()
            .zip(&da)
            .map(|(x, g)| x + step * g)
            .collect();
        game.spaces[n].project(&raw)
    };
    Ok(iterate(game, config, a0, None, &update))
}

// exact best response for one player against a fixed observation
fn exact_best_response(game: &GameInstance, b: &StrategyProfile, n: usize) -> Result<Vec<f64>> {
    let space = &game.spaces[n];
    let f = game.observation(b, n)?;
    let theta_one_waterfill = match &game.family {
        UtilityFamily::RateLog => true,
        UtilityFamily::LogTheta { theta, .. } => *theta == 1.0,
        UtilityFamily::LinearJackson { .. } => false,
    };
    match &game.family {
        _ if theta_one_waterfill => {
            // increasing utility: box top when the budget is slack, else
            // waterfill a_k = clip(s - c*f_k)
            let budget = match space.sum {
                SumBound::UpperSum(s) => s,
                SumBound::LowerSum(_) => {
                    return Err(GameError::InvalidConfig(
                        "waterfilling needs an upper sum bound".into(),
                    ))
                }
            };
            let top: f64 = space.upper.iter().sum();
            if top <= budget + 1e-12 {
                return Ok(space.upper.clone());
            }
            let k = space.dims();
            let cf: Vec<f64> = (0..k)
                .map(|d| match &game.family {
                    UtilityFamily::RateLog => f[d],
                    UtilityFamily::LogTheta { c, .. } => c[n][d] * f[d],
                    _ => unreachable!(),
                })
                .collect();
            let fill = |s: f64| -> Vec<f64> {
                (0..k)
                    .map(|d| (s - cf[d]).clamp(space.lower[d], space.upper[d]))
                    .collect()
            };
            bisect_water_level(fill, budget, 0.0, 1.0)
        }
        UtilityFamily::LinearJackson { .. } => {
            // decreasing utility with a service-rate floor: spend the floor on
            // the cheapest (smallest own-coefficient) dimensions first
            let floor = match space.sum {
                SumBound::LowerSum(s) => s,
                SumBound::UpperSum(_) => {
                    return Err(GameError::InvalidConfig(
                        "the queueing response needs a lower sum bound".into(),
                    ))
                }
            };
            let k = space.dims();
            let mut a = space.lower.clone();
            let mut deficit = floor - a.iter().sum::<f64>();
            if deficit > 0.0 {
                let mut order: Vec<usize> = (0..k).collect();
                order.sort_by(|&i, &j| {
                    game.coupling
                        .x(n, n, i)
                        .partial_cmp(&game.coupling.x(n, n, j))
                        .unwrap()
                        .then(i.cmp(&j))
                });
                for d in order {
                    let room = space.upper[d] - a[d];
                    let add = room.min(deficit);
                    a[d] += add;
                    deficit -= add;
                    if deficit <= 1e-15 {
                        break;
                    }
                }
            }
            // reject responses that would destabilize the player's own queues
            game.utility_at(n, &a, &f)?;
            Ok(a)
        }
        _ => proximal_free_maximize(game, b, n),
    }
}

// best response via projected gradient ascent on the raw utility
fn proximal_free_maximize(game: &GameInstance, b: &StrategyProfile, n: usize) -> Result<Vec<f64>> {
    let f = game.observation(b, n)?;
    let space = &game.spaces[n];
    let mut a = space.project(b.row(n))?;
    let mut val = game.utility_at(n, &a, &f)?;
    for _ in 0..2000 {
        let parts = game.partials_at(n, &a, &f)?;
        let g: Vec<f64> = parts.iter().map(|p| p.da).collect();
        let probe = space.project(&a.iter().zip(&g).map(|(x, gg)| x + gg).collect::<Vec<_>>())?;
        let res = probe
            .iter()
            .zip(&a)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        if res <= 1e-9 {
            break;
        }
        let mut tau = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = space.project(
                &a.iter()
                    .zip(&g)
                    .map(|(x, gg)| x + tau * gg)
                    .collect::<Vec<_>>(),
            )?;
            if let Ok(v) = game.utility_at(n, &cand, &f) {
                if v > val {
                    a = cand;
                    val = v;
                    moved = true;
                    break;
                }
            }
            tau *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(a)
}

/// Damped exact best responses against the previous iterate.
pub fn jacobi_update(
    game: &GameInstance,
    config: &SolverConfig,
    a0: &StrategyProfile,
) -> Result<RunTrace> {
    if !game.is_feasible(a0) {
        return Err(GameError::InfeasibleProfile("initial profile".into()));
    }
    let update = |b: &StrategyProfile, n: usize| -> Result<Vec<f64>> {
        let br = exact_best_response(game, b, n)?;
        let mixed: Vec<f64> = b
            .row(n)
            .iter()
            .zip(&br)
            .map(|(x, y)| 0.5 * x + 0.5 * y)
            .collect();
        game.spaces[n].project(&mixed)
    };
    Ok(iterate(game, config, a0, None, &update))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpportunisticConfig {
    /// Absolute observation-radius increment per expansion slot.
    pub chi: f64,
    /// Minimum social-utility improvement that counts as progress.
    pub delta: f64,
    pub stage1: SolverConfig,
    pub max_expansions: usize,
    /// Interrupt after this many consecutive slots without progress. The
    /// default equals `max_expansions`, i.e. the whole ladder is scanned.
    pub patience: usize,
}

impl Default for OpportunisticConfig {
    fn default() -> Self {
        Self {
            chi: 0.05,
            delta: 1e-4,
            stage1: SolverConfig::default(),
            max_expansions: 40,
            patience: 40,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpportunisticResult {
    pub stage1: RunTrace,
    /// True when some player's own curvature is dominated by the coupling.
    pub trigger: bool,
    pub expansions: usize,
    pub final_eps: f64,
    pub best_profile: StrategyProfile,
    pub stage1_social: f64,
    pub best_social: f64,
}

/// Solves the nominal game, then (when the coupling dominance trigger fires)
/// anneals: each slot takes one proximal iteration of the robust game with a
/// growing observation radius, chained from the previous slot's profile, and
/// the best nominal social utility seen is kept. When the nominal dynamics
/// cycle among overlapping allocations under strong coupling, the uncertainty
/// damps the cycle and the trajectory passes through better-separated
/// profiles that the keep-best rule retains.
pub fn opportunistic_run(
    game: &GameInstance,
    config: &OpportunisticConfig,
    a0: &StrategyProfile,
) -> Result<OpportunisticResult> {
    let nominal = UncertaintySpec::none(game.num_players);
    let stage1 = run_distributed(game, &nominal, &config.stage1, a0)?;
    let stage1_profile = stage1.final_profile().clone();
    let stage1_social = game.social_utility(&stage1_profile).unwrap_or(f64::NEG_INFINITY);

    let report = build_upsilon(game)?;
    let trigger = (0..game.num_players).any(|n| {
        let coupled: f64 = (0..game.num_players)
            .filter(|&m| m != n)
            .map(|m| report.beta_max[n][m])
            .sum();
        report.alpha_min[n] < coupled
    });

    let mut best_profile = stage1_profile.clone();
    let mut best_social = stage1_social;
    let mut expansions = 0;
    let mut final_eps = 0.0;
    if trigger {
        let slot_cfg = SolverConfig {
            max_iters: 1,
            ..config.stage1.clone()
        };
        let mut current = stage1_profile.clone();
        let mut since_progress = 0;
        for t1 in 1..=config.max_expansions {
            let omega = config.chi * t1 as f64;
            let spec = UncertaintySpec::observation_uniform(game.num_players, omega)?;
            let trace = run_distributed(game, &spec, &slot_cfg, &current)?;
            current = trace.final_profile().clone();
            let social = game.social_utility(&current).unwrap_or(f64::NEG_INFINITY);
            expansions = t1;
            if social > best_social + config.delta {
                since_progress = 0;
            } else {
                since_progress += 1;
            }
            if social > best_social {
                best_social = social;
                best_profile = current.clone();
                final_eps = omega;
            }
            if since_progress >= config.patience {
                break;
            }
        }
    }
    Ok(OpportunisticResult {
        stage1,
        trigger,
        expansions,
        final_eps,
        best_profile,
        stage1_social,
        best_social,
    })
}
