#include <stdio.h>
#include <string.h>

#include "dpsql.h"

static const char *CATALOG =
    "{\"tables\":[{\"name\":\"trips\",\"protected\":true,\"rowCount\":100,"
    "\"columns\":[{\"name\":\"distance\",\"type\":\"real\"}]}]}";

int main(void) {
    DpsqlRewriter *rw = NULL;
    if (dpsql_rewriter_new(CATALOG, NULL, &rw) != DPSQL_STATUS_OK) {
        fprintf(stderr, "new: %s\n", dpsql_last_error());
        return 1;
    }
    char *out = NULL;
    DpsqlStatus s = dpsql_rewrite(rw, "{\"sql\":\"SELECT COUNT(*) FROM trips\",\"epsilon\":0.5}", &out);
    if (s != DPSQL_STATUS_OK || strstr(out, "LN(1-2*ABS(") == NULL) {
        fprintf(stderr, "rewrite: %d %s\n", s, dpsql_last_error());
        return 1;
    }
    dpsql_string_free(out);
    s = dpsql_rewrite(rw, "{\"sql\":\"SELECT AVG(\",\"epsilon\":0.5}", &out);
    if (s != DPSQL_STATUS_PARSE_ERROR || out != NULL || dpsql_last_error() == NULL) {
        fprintf(stderr, "expected a parse error, got %d\n", s);
        return 1;
    }
    dpsql_rewriter_free(rw);
    printf("ok %s\n", dpsql_version());
    return 0;
}
