#ifndef DPSQL_H
#define DPSQL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a call. Values 2 to 5 match the command-line exit codes.
 */
typedef enum DpsqlStatus {
  DPSQL_STATUS_OK = 0,
  DPSQL_STATUS_INVALID_ARGUMENT = 1,
  DPSQL_STATUS_PARSE_ERROR = 2,
  DPSQL_STATUS_NO_MECHANISM = 3,
  DPSQL_STATUS_BUDGET_EXHAUSTED = 4,
  DPSQL_STATUS_CATALOG_ERROR = 5,
  DPSQL_STATUS_LEDGER_ERROR = 6,
  DPSQL_STATUS_PANIC = 7,
} DpsqlStatus;

/**
 * Opaque rewriter bound to one catalog and optional ledger file.
 */
typedef struct DpsqlRewriter DpsqlRewriter;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a rewriter from a catalog JSON document. `ledger_path` may be
 * null, in which case no budget is enforced.
 *
 * # Safety
 * `catalog_json` must be a valid string, `ledger_path` null or a valid
 * string, and `out` a valid pointer.
 */
enum DpsqlStatus dpsql_rewriter_new(const char *catalog_json,
                                    const char *ledger_path,
                                    struct DpsqlRewriter **out);

/**
 * # Safety
 * `rewriter` must be null or a pointer from [`dpsql_rewriter_new`] not
 * freed before.
 */
void dpsql_rewriter_free(struct DpsqlRewriter *rewriter);

/**
 * Rewrites the query in a request document and charges the ledger. On
 * success `*out` receives the response document.
 *
 * # Safety
 * `rewriter` must come from [`dpsql_rewriter_new`], `request_json` must be
 * a valid string and `out` a valid pointer.
 */
enum DpsqlStatus dpsql_rewrite(const struct DpsqlRewriter *rewriter,
                               const char *request_json,
                               char **out);

/**
 * Reports mechanism support for the query in a request document without
 * charging the ledger.
 *
 * # Safety
 * As for [`dpsql_rewrite`].
 */
enum DpsqlStatus dpsql_analyze(const struct DpsqlRewriter *rewriter,
                               const char *request_json,
                               char **out);

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next call into this library on the same thread.
 */
const char *dpsql_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not freed
 * before.
 */
void dpsql_string_free(char *s);

/**
 * Library version as a static string.
 */
const char *dpsql_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPSQL_H */
