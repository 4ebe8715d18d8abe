/* C interface for the coupled-games equilibrium library. */

#ifndef COUPLED_GAMES_H
#define COUPLED_GAMES_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code for every fallible FFI call.
typedef enum CgStatus {
  // The call succeeded.
  CG_STATUS_OK = 0,
  // A required pointer argument was null.
  CG_STATUS_NULL_ARGUMENT = 1,
  // An input string was not valid UTF-8.
  CG_STATUS_INVALID_UTF8 = 2,
  // The input JSON was malformed or described an invalid model.
  CG_STATUS_INVALID_INPUT = 3,
  // The computation itself failed; see `cg_last_error_message`.
  CG_STATUS_COMPUTE_FAILED = 4,
  // An internal invariant was violated.
  CG_STATUS_INTERNAL_PANIC = 5,
} CgStatus;

// Opaque game handle.
typedef struct CgGame CgGame;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread. The pointer is
// valid until the next FFI call on the same thread; never free it.
const char *cg_last_error_message(void);

// Library version as a static string; never free it.
const char *cg_version(void);

// Builds a game from a scenario file document (the same JSON schema the CLI
// reads: `{"kind": "power"|"jackson", "version": 1, "scenario": {...}}`).
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum CgStatus cg_game_from_scenario_json(const char *json, struct CgGame **out);

// Builds a game from a serialized `GameInstance` document (spaces, coupling,
// utility family). The document is re-validated before use.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum CgStatus cg_game_from_game_json(const char *json, struct CgGame **out);

// Releases a game handle. Null is ignored.
//
// # Safety
// `game` must be a pointer returned by a `cg_game_from_*` call, not yet freed.
void cg_game_free(struct CgGame *game);

// Number of players, or -1 on a null handle.
//
// # Safety
// `game` must be a live handle or null.
int32_t cg_game_num_players(const struct CgGame *game);

// Number of strategy dimensions, or -1 on a null handle.
//
// # Safety
// `game` must be a live handle or null.
int32_t cg_game_num_dims(const struct CgGame *game);

// Serializes the game model back to JSON.
//
// # Safety
// `game` must be a live handle; `out_json` must be a valid pointer.
enum CgStatus cg_game_to_json(const struct CgGame *game, char **out_json);

// Equilibrium-structure diagnostics as JSON: the curvature comparison matrix
// report (`alpha_min`, `beta_max`, `p_matrix`, `c_sm`, `closed_form`).
//
// # Safety
// `game` must be a live handle; `out_json` must be a valid pointer.
enum CgStatus cg_analyze_json(const struct CgGame *game, char **out_json);

// Runs the distributed proximal-response dynamics. `options_json` may be
// null for defaults, or `{"uncertainty": {...}, "solver": {...},
// "start": [[...], ...]}` with every field optional. The result JSON carries
// the final profile, per-player utilities, social utility, convergence flag,
// iteration count, and the precondition report.
//
// # Safety
// `game` must be a live handle; `options_json` must be null or a
// NUL-terminated string; `out_json` must be a valid pointer.
enum CgStatus cg_solve_json(const struct CgGame *game, const char *options_json, char **out_json);

// Runs the two-stage opportunistic algorithm. `options_json` may be null for
// defaults, or `{"config": {...}, "start": [[...], ...]}`. The result JSON
// carries the trigger flag, expansion count, the kept profile, and the
// stage-1 and best social utilities.
//
// # Safety
// `game` must be a live handle; `options_json` must be null or a
// NUL-terminated string; `out_json` must be a valid pointer.
enum CgStatus cg_opportunistic_json(const struct CgGame *game,
                                    const char *options_json,
                                    char **out_json);

// Releases a string returned through a `char**` out-parameter. Null is
// ignored.
//
// # Safety
// `s` must be a string returned by this library, not yet freed.
void cg_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COUPLED_GAMES_H */
