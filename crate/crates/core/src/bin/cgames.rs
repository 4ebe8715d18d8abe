use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use coupled_games::bench::{
    convergence_probability, reference_checkpoints, persist_records, run_experiment, ExperimentConfig,
    ScenarioFile, ScenarioKind,
};
use coupled_games::error::Result;
use coupled_games::game::GameInstance;
use coupled_games::robust::UncertaintySpec;
use coupled_games::solve::{
    best_response_sweep, gradient_play, jacobi_update, run_distributed, SolverConfig,
};
use coupled_games::vi::{avi_uniqueness_check, build_avi, build_upsilon};
use coupled_games::StrategyProfile;

#[derive(Parser)]
#[command(name = "cgames", about = "Equilibrium analysis for additively coupled games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverChoice {
    Proximal,
    Iwfa,
    Gradient,
    Jacobi,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindChoice {
    PowerUnique,
    PowerMulti,
    Jackson,
}

impl From<KindChoice> for ScenarioKind {
    fn from(k: KindChoice) -> Self {
        match k {
            KindChoice::PowerUnique => ScenarioKind::PowerUnique,
            KindChoice::PowerMulti => ScenarioKind::PowerMulti,
            KindChoice::Jackson => ScenarioKind::Jackson,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Curvature and uniqueness diagnostics for a scenario file
    Analyze {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// One solver run on a scenario file, trace summary to stdout
    Solve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "proximal")]
        solver: SolverChoice,
        /// Relative observation uncertainty radius
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        /// Write the full iteration trace here as JSON
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Metric sweep over seeded scenarios and uncertainty radii
    Sweep {
        #[arg(long, value_enum, default_value = "power-unique")]
        kind: KindChoice,
        #[arg(long, default_value_t = 3)]
        players: usize,
        #[arg(long, default_value_t = 4)]
        dims: usize,
        #[arg(long, default_value_t = 0.3)]
        routing_mass: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Comma-separated relative radii
        #[arg(long, value_delimiter = ',', default_value = "0.0,0.1,0.2,0.3")]
        eps_list: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        /// Multiplies the repetition count
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Convergence-probability table over routing mass and radius
    JacksonProb {
        #[arg(long, default_value_t = 5)]
        nodes: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "0.0,0.2,0.4")]
        eps_list: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.0,0.2,0.4,0.6,0.8")]
        deficit_list: Vec<f64>,
        #[arg(long, default_value_t = 30)]
        reps: usize,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Recompute the stored worked-example values and report pass/fail
    Checkpoints,
}

fn initial_profile(game: &GameInstance) -> StrategyProfile {
    let rows = game
        .spaces
        .iter()
        .map(|s| s.project(&vec![0.0; s.dims()]).expect("space nonempty"))
        .collect();
    StrategyProfile::new(rows)
}

fn cmd_analyze(scenario: &PathBuf) -> Result<()> {
    let file = ScenarioFile::load(scenario)?;
    let game = file.build_game()?;
    let report = build_upsilon(&game)?;
    let mut out = serde_json::json!({
        "players": game.num_players,
        "dims": game.num_dims,
        "family": game.family.tag(),
        "alpha_min": report.alpha_min,
        "beta_max": report.beta_max,
        "p_matrix": report.p_matrix,
        "monotonicity_constant": report.c_sm,
        "closed_form": report.closed_form,
    });
    if game.family.is_log_theta() {
        let avi = build_avi(&game)?;
        let uniq = avi_uniqueness_check(&avi, &game.spaces);
        out["dominance_holds"] = serde_json::json!(uniq.dominance_holds);
        out["reversed_holds"] = serde_json::json!(uniq.reversed_holds);
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_solve(
    scenario: &PathBuf,
    solver: SolverChoice,
    eps: f64,
    out_dir: Option<&PathBuf>,
) -> Result<()> {
    let file = ScenarioFile::load(scenario)?;
    let game = file.build_game()?;
    let spec = if eps > 0.0 {
        UncertaintySpec::observation_relative(vec![eps; game.num_players])?
    } else {
        UncertaintySpec::none(game.num_players)
    };
    let config = SolverConfig::default();
    let a0 = initial_profile(&game);
    let trace = match solver {
        SolverChoice::Proximal => run_distributed(&game, &spec, &config, &a0)?,
        SolverChoice::Iwfa => best_response_sweep(&game, &spec, &config, &a0)?,
        SolverChoice::Gradient => gradient_play(&game, &config, &a0)?,
        SolverChoice::Jacobi => jacobi_update(&game, &config, &a0)?,
    };
    let summary = serde_json::json!({
        "converged": trace.converged,
        "iterations": trace.iterations,
        "final_profile": trace.final_profile().rows,
        "final_utilities": trace.utilities.last(),
        "final_step_norm": trace.step_norms.last(),
        "failure": trace.failure,
        "preconditions": trace.preconditions,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("trace.json");
        std::fs::write(&path, serde_json::to_string_pretty(&trace)?)?;
        eprintln!("trace written to {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome: Result<bool> = match cli.command {
        Command::Analyze { scenario } => cmd_analyze(&scenario).map(|_| true),
        Command::Solve {
            scenario,
            solver,
            eps,
            out_dir,
        } => cmd_solve(&scenario, solver, eps, out_dir.as_ref()).map(|_| true),
        Command::Sweep {
            kind,
            players,
            dims,
            routing_mass,
            seed,
            eps_list,
            reps,
            scale,
            out_dir,
        } => (|| {
            let config = ExperimentConfig {
                kind: kind.into(),
                num_players: players,
                num_dims: dims,
                routing_mass,
                solver: SolverConfig::default(),
                eps_list,
                reps: ((reps as f64) * scale).round().max(1.0) as usize,
                seed,
            };
            let records = run_experiment(&config)?;
            let (csv_path, json_path) = persist_records(&records, &config, &out_dir)?;
            println!("wrote {} and {}", csv_path.display(), json_path.display());
            Ok(true)
        })(),
        Command::JacksonProb {
            nodes,
            classes,
            seed,
            eps_list,
            deficit_list,
            reps,
            out_dir,
        } => (|| {
            let seeds: Vec<u64> = (0..reps as u64).map(|i| seed.wrapping_add(i)).collect();
            let cells = convergence_probability(
                nodes,
                classes,
                &deficit_list,
                &eps_list,
                &seeds,
                &SolverConfig::default(),
            )?;
            println!("routing_mass,eps,probability");
            for c in &cells {
                println!("{},{},{}", c.routing_mass, c.eps, c.probability);
            }
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir)?;
                let path = dir.join("jackson-prob.json");
                std::fs::write(&path, serde_json::to_string_pretty(&cells)?)?;
                eprintln!("table written to {}", path.display());
            }
            Ok(true)
        })(),
        Command::Checkpoints => (|| {
            let report = reference_checkpoints();
            for item in &report.items {
                let status = if item.reference_only {
                    "REFERENCE"
                } else if item.passed {
                    "PASS"
                } else {
                    "FAIL"
                };
                println!(
                    "{status:9} {} = {:.4} (expected {:.4} +/- {})",
                    item.name, item.value, item.expected, item.tolerance
                );
            }
            Ok(report.all_passed())
        })(),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
