//! C ABI surface for the coupled-games library.
//!
//! Conventions:
//! - Games are opaque handles (`CgGame*`) created from JSON and released with
//!   [`cg_game_free`].
//! - Structured inputs and outputs are JSON strings; strings returned through
//!   `char**` out-parameters are owned by the caller and must be released with
//!   [`cg_string_free`].
//! - Every fallible call returns a [`CgStatus`]; on failure a human-readable
//!   message is available from [`cg_last_error_message`] until the next call
//!   on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::Deserialize;

use coupled_games::bench::ScenarioFile;
use coupled_games::game::{GameInstance, StrategyProfile};
use coupled_games::robust::UncertaintySpec;
use coupled_games::solve::{
    opportunistic_run, run_distributed, OpportunisticConfig, SolverConfig,
};
use coupled_games::vi::build_upsilon;

/// Result code for every fallible FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An input string was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The input JSON was malformed or described an invalid model.
    InvalidInput = 3,
    /// The computation itself failed; see `cg_last_error_message`.
    ComputeFailed = 4,
    /// An internal invariant was violated.
    InternalPanic = 5,
}

/// Opaque game handle.
pub struct CgGame {
    inner: GameInstance,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&ch| ch != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

/// Message describing the most recent failure on this thread. The pointer is
/// valid until the next FFI call on the same thread; never free it.
#[no_mangle]
pub extern "C" fn cg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string; never free it.
#[no_mangle]
pub extern "C" fn cg_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

fn guarded(body: impl FnOnce() -> CgStatus) -> CgStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            CgStatus::InternalPanic
        }
    }
}

/// # Safety
/// `ptr` must be non-null and point to a NUL-terminated string.
unsafe fn read_utf8<'a>(ptr: *const c_char) -> Result<&'a str, CgStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(CgStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        CgStatus::InvalidUtf8
    })
}

fn write_string(out: *mut *mut c_char, text: String) -> CgStatus {
    let sanitized: String = text.chars().filter(|&ch| ch != '\0').collect();
    match CString::new(sanitized) {
        Ok(s) => {
            unsafe { *out = s.into_raw() };
            CgStatus::Ok
        }
        Err(_) => {
            set_error("output contained an interior NUL byte");
            CgStatus::InternalPanic
        }
    }
}

unsafe fn game_ref<'a>(game: *const CgGame) -> Result<&'a GameInstance, CgStatus> {
    if game.is_null() {
        set_error("null game handle");
        return Err(CgStatus::NullArgument);
    }
    Ok(&(*game).inner)
}

fn export_game(game: GameInstance, out: *mut *mut CgGame) -> CgStatus {
    let handle = Box::new(CgGame { inner: game });
    unsafe { *out = Box::into_raw(handle) };
    CgStatus::Ok
}

/// Builds a game from a scenario file document (the same JSON schema the CLI
/// reads: `{"kind": "power"|"jackson", "version": 1, "scenario": {...}}`).
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cg_game_from_scenario_json(
    json: *const c_char,
    out: *mut *mut CgGame,
) -> CgStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return CgStatus::NullArgument;
        }
        let text = match read_utf8(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let file = match ScenarioFile::parse(text) {
            Ok(f) => f,
            Err(e) => {
                set_error(&e.to_string());
                return CgStatus::InvalidInput;
            }
        };
        match file.build_game() {
            Ok(game) => export_game(game, out),
            Err(e) => {
                set_error(&e.to_string());
                return CgStatus::InvalidInput;
            }
        }
    })
}

/// Builds a game from a serialized `GameInstance` document (spaces, coupling,
/// utility family). The document is re-validated before use.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cg_game_from_game_json(
    json: *const c_char,
    out: *mut *mut CgGame,
) -> CgStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return CgStatus::NullArgument;
        }
        let text = match read_utf8(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let raw: GameInstance = match serde_json::from_str(text) {
            Ok(g) => g,
            Err(e) => {
                set_error(&e.to_string());
                return CgStatus::InvalidInput;
            }
        };
        // deserialization bypasses the constructor, so re-run its checks
        match GameInstance::new(raw.spaces, raw.coupling, raw.family) {
            Ok(game) => export_game(game, out),
            Err(e) => {
                set_error(&e.to_string());
                CgStatus::InvalidInput
            }
        }
    })
}

/// Releases a game handle. Null is ignored.
///
/// # Safety
/// `game` must be a pointer returned by a `cg_game_from_*` call, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cg_game_free(game: *mut CgGame) {
    if !game.is_null() {
        drop(Box::from_raw(game));
    }
}

/// Number of players, or -1 on a null handle.
///
/// # Safety
/// `game` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cg_game_num_players(game: *const CgGame) -> i32 {
    match game_ref(game) {
        Ok(g) => g.num_players as i32,
        Err(_) => -1,
    }
}

/// Number of strategy dimensions, or -1 on a null handle.
///
/// # Safety
/// `game` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cg_game_num_dims(game: *const CgGame) -> i32 {
    match game_ref(game) {
        Ok(g) => g.num_dims as i32,
        Err(_) => -1,
    }
}

/// Serializes the game model back to JSON.
///
/// # Safety
/// `game` must be a live handle; `out_json` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cg_game_to_json(
    game: *const CgGame,
    out_json: *mut *mut c_char,
) -> CgStatus {
    guarded(|| {
        if out_json.is_null() {
            set_error("null output pointer");
            return CgStatus::NullArgument;
        }
        let g = match game_ref(game) {
            Ok(g) => g,
            Err(s) => return s,
        };
        match serde_json::to_string(g) {
            Ok(text) => write_string(out_json, text),
            Err(e) => {
                set_error(&e.to_string());
                CgStatus::ComputeFailed
            }
        }
    })
}

/// Equilibrium-structure diagnostics as JSON: the curvature comparison matrix
/// report (`alpha_min`, `beta_max`, `p_matrix`, `c_sm`, `closed_form`).
///
/// # Safety
/// `game` must be a live handle; `out_json` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cg_analyze_json(
    game: *const CgGame,
    out_json: *mut *mut c_char,
) -> CgStatus {
    guarded(|| {
        if out_json.is_null() {
            set_error("null output pointer");
            return CgStatus::NullArgument;
        }
        let g = match game_ref(game) {
            Ok(g) => g,
            Err(s) => return s,
        };
        let report = match build_upsilon(g) {
            Ok(r) => r,
            Err(e) => {
                set_error(&e.to_string());
                return CgStatus::ComputeFailed;
            }
        };
        match serde_json::to_string(&report) {
            Ok(text) => write_string(out_json, text),
            Err(e) => {
                set_error(&e.to_string());
                CgStatus::ComputeFailed
            }
        }
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SolveOptions {
    uncertainty: Option<UncertaintySpec>,
    solver: SolverConfig,
    start: Option<Vec<Vec<f64>>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            uncertainty: None,
            solver: SolverConfig::default(),
            start: None,
        }
    }
}

fn starting_profile(
    game: &GameInstance,
    rows: Option<Vec<Vec<f64>>>,
) -> Result<StrategyProfile, String> {
    match rows {
        Some(rows) => Ok(StrategyProfile::new(rows)),
        None => {
            let rows: Result<Vec<_>, _> = game
                .spaces
                .iter()
                .map(|s| s.project(&vec![0.0; s.dims()]))
                .collect();
            rows.map(StrategyProfile::new).map_err(|e| e.to_string())
        }
    }
}

/// Runs the distributed proximal-response dynamics. `options_json` may be
/// null for defaults, or `{"uncertainty": {...}, "solver": {...},
/// "start": [[...], ...]}` with every field optional. The result JSON carries
/// the final profile, per-player utilities, social utility, convergence flag,
/// iteration count, and the precondition report.
///
/// # Safety
/// `game` must be a live handle; `options_json` must be null or a
/// NUL-terminated string; `out_json` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cg_solve_json(
    game: *const CgGame,
    options_json: *const c_char,
    out_json: *mut *mut c_char,
) -> CgStatus {
    guarded(|| {
        if out_json.is_null() {
            set_error("null output pointer");
            return CgStatus::NullArgument;
        }
        let g = match game_ref(game) {
            Ok(g) => g,
            Err(s) => return s,
        };
        let options: SolveOptions = if options_json.is_null() {
            SolveOptions::default()
        } else {
            let text = match read_utf8(options_json) {
                Ok(t) => t,
                Err(s) => return s,
            };
            match serde_json::from_str(text) {
                Ok(o) => o,
                Err(e) => {
                    set_error(&e.to_string());
                    return CgStatus::InvalidInput;
                }
            }
        };
        let spec = options
            .uncertainty
            .unwrap_or_else(|| UncertaintySpec::none(g.num_players));
        if let Err(e) = spec.validate() {
            set_error(&e.to_string());
            return CgStatus::InvalidInput;
        }
        let a0 = match starting_profile(g, options.start) {
            Ok(p) => p,
            Err(e) => {
                set_error(&e);
                return CgStatus::InvalidInput;
            }
        };
        let trace = match run_distributed(g, &spec, &options.solver, &a0) {
            Ok(t) => t,
            Err(e) => {
                set_error(&e.to_string());
                return CgStatus::ComputeFailed;
            }
        };
        let final_profile = trace.final_profile();
        let social = g.social_utility(final_profile).ok();
        let body = serde_json::json!({
            "converged": trace.converged,
            "iterations": trace.iterations,
            "failure": trace.failure,
            "final_profile": final_profile.rows,
            "utilities": trace.utilities.last(),
            "social_utility": social,
            "preconditions": trace.preconditions,
        });
        write_string(out_json, body.to_string())
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct OpportunisticOptions {
    config: OpportunisticConfig,
    start: Option<Vec<Vec<f64>>>,
}

impl Default for OpportunisticOptions {
    fn default() -> Self {
        Self {
            config: OpportunisticConfig::default(),
            start: None,
        }
    }
}

/// Runs the two-stage opportunistic algorithm. `options_json` may be null for
/// defaults, or `{"config": {...}, "start": [[...], ...]}`. The result JSON
/// carries the trigger flag, expansion count, the kept profile, and the
/// stage-1 and best social utilities.
///
/// # Safety
/// `game` must be a live handle; `options_json` must be null or a
/// NUL-terminated string; `out_json` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cg_opportunistic_json(
    game: *const CgGame,
    options_json: *const c_char,
    out_json: *mut *mut c_char,
) -> CgStatus {
    guarded(|| {
        if out_json.is_null() {
            set_error("null output pointer");
            return CgStatus::NullArgument;
        }
        let g = match game_ref(game) {
            Ok(g) => g,
            Err(s) => return s,
        };
        let options: OpportunisticOptions = if options_json.is_null() {
            OpportunisticOptions::default()
        } else {
            let text = match read_utf8(options_json) {
                Ok(t) => t,
                Err(s) => return s,
            };
            match serde_json::from_str(text) {
                Ok(o) => o,
                Err(e) => {
                    set_error(&e.to_string());
                    return CgStatus::InvalidInput;
                }
            }
        };
        let a0 = match starting_profile(g, options.start) {
            Ok(p) => p,
            Err(e) => {
                set_error(&e);
                return CgStatus::InvalidInput;
            }
        };
        let out = match opportunistic_run(g, &options.config, &a0) {
            Ok(o) => o,
            Err(e) => {
                set_error(&e.to_string());
                return CgStatus::ComputeFailed;
            }
        };
        let body = serde_json::json!({
            "trigger": out.trigger,
            "expansions": out.expansions,
            "final_eps": out.final_eps,
            "best_profile": out.best_profile.rows,
            "stage1_social": out.stage1_social,
            "best_social": out.best_social,
            "stage1_converged": out.stage1.converged,
        });
        write_string(out_json, body.to_string())
    })
}

/// Releases a string returned through a `char**` out-parameter. Null is
/// ignored.
///
/// # Safety
/// `s` must be a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    fn scenario_json() -> CString {
        let text = r#"{
            "kind": "power",
            "version": 1,
            "scenario": {
                "num_players": 2,
                "num_dims": 2,
                "direct": [[1.0, 1.0], [1.0, 1.0]],
                "cross": [
                    [[1.0, 1.0], [0.005, 0.005]],
                    [[0.005, 0.005], [1.0, 1.0]]
                ],
                "noise": [[0.5, 0.5], [0.5, 0.5]],
                "power_cap": [1.0, 1.0],
                "regime": "UniqueNe",
                "seed": 1,
                "high_sinr": false
            }
        }"#;
        CString::new(text).unwrap()
    }

    fn make_game() -> *mut CgGame {
        let json = scenario_json();
        let mut game: *mut CgGame = ptr::null_mut();
        let status = unsafe { cg_game_from_scenario_json(json.as_ptr(), &mut game) };
        if status != CgStatus::Ok {
            let msg = unsafe { CStr::from_ptr(cg_last_error_message()) };
            panic!("scenario rejected ({status:?}): {}", msg.to_str().unwrap());
        }
        assert!(!game.is_null());
        game
    }

    fn take_string(raw: *mut c_char) -> String {
        assert!(!raw.is_null());
        let text = unsafe { CStr::from_ptr(raw) }.to_str().unwrap().to_owned();
        unsafe { cg_string_free(raw) };
        text
    }

    #[test]
    fn scenario_round_trip_and_dimensions() {
        let game = make_game();
        assert_eq!(unsafe { cg_game_num_players(game) }, 2);
        assert_eq!(unsafe { cg_game_num_dims(game) }, 2);

        let mut raw: *mut c_char = ptr::null_mut();
        assert_eq!(unsafe { cg_game_to_json(game, &mut raw) }, CgStatus::Ok);
        let text = take_string(raw);

        let json = CString::new(text).unwrap();
        let mut clone: *mut CgGame = ptr::null_mut();
        assert_eq!(
            unsafe { cg_game_from_game_json(json.as_ptr(), &mut clone) },
            CgStatus::Ok
        );
        unsafe {
            cg_game_free(clone);
            cg_game_free(game);
        }
    }

    #[test]
    fn solve_returns_converged_run() {
        let game = make_game();
        let mut raw: *mut c_char = ptr::null_mut();
        let status = unsafe { cg_solve_json(game, ptr::null(), &mut raw) };
        assert_eq!(status, CgStatus::Ok);
        let body: serde_json::Value = serde_json::from_str(&take_string(raw)).unwrap();
        assert_eq!(body["converged"], serde_json::json!(true));
        assert!(body["social_utility"].as_f64().unwrap().is_finite());
        unsafe { cg_game_free(game) };
    }

    #[test]
    fn solve_accepts_robust_options() {
        let game = make_game();
        let options = CString::new(
            r#"{"uncertainty": {"mode": {"Observation": {"radius": [0.1, 0.1]}}, "relative": false}}"#,
        )
        .unwrap();
        let mut raw: *mut c_char = ptr::null_mut();
        let status = unsafe { cg_solve_json(game, options.as_ptr(), &mut raw) };
        assert_eq!(status, CgStatus::Ok);
        let body: serde_json::Value = serde_json::from_str(&take_string(raw)).unwrap();
        assert_eq!(body["converged"], serde_json::json!(true));
        unsafe { cg_game_free(game) };
    }

    #[test]
    fn analyze_reports_p_matrix() {
        let game = make_game();
        let mut raw: *mut c_char = ptr::null_mut();
        assert_eq!(unsafe { cg_analyze_json(game, &mut raw) }, CgStatus::Ok);
        let body: serde_json::Value = serde_json::from_str(&take_string(raw)).unwrap();
        assert!(body["p_matrix"].is_boolean());
        assert!(body["c_sm"].as_f64().unwrap() >= 0.0);
        unsafe { cg_game_free(game) };
    }

    #[test]
    fn opportunistic_defaults_run() {
        let game = make_game();
        let mut raw: *mut c_char = ptr::null_mut();
        let status = unsafe { cg_opportunistic_json(game, ptr::null(), &mut raw) };
        assert_eq!(status, CgStatus::Ok);
        let body: serde_json::Value = serde_json::from_str(&take_string(raw)).unwrap();
        let stage1 = body["stage1_social"].as_f64().unwrap();
        let best = body["best_social"].as_f64().unwrap();
        assert!(best >= stage1);
        unsafe { cg_game_free(game) };
    }

    #[test]
    fn bad_inputs_set_errors() {
        let mut game: *mut CgGame = ptr::null_mut();
        assert_eq!(
            unsafe { cg_game_from_scenario_json(ptr::null(), &mut game) },
            CgStatus::NullArgument
        );
        let junk = CString::new("{not json").unwrap();
        assert_eq!(
            unsafe { cg_game_from_scenario_json(junk.as_ptr(), &mut game) },
            CgStatus::InvalidInput
        );
        let msg = unsafe { CStr::from_ptr(cg_last_error_message()) };
        assert!(!msg.to_str().unwrap().is_empty());
        assert_eq!(unsafe { cg_game_num_players(ptr::null()) }, -1);
    }
}
