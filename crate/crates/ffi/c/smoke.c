/* Minimal C client: open a commons, validate a record, print status. */
#include <stdio.h>
#include "minicommons.h"

int main(int argc, char **argv) {
    if (argc != 2) {
        fprintf(stderr, "usage: %s <commons.yaml>\n", argv[0]);
        return 64;
    }
    McCommons *h = NULL;
    if (mc_commons_open(argv[1], &h) != MC_STATUS_OK) {
        fprintf(stderr, "open failed: %s\n", mc_last_error());
        return 1;
    }
    char *out = NULL;
    McStatus st = mc_validate_record(h, "demographic", "{\"gender\":\"male\",\"age_at_index\":\"forty\"}", &out);
    if (st != MC_STATUS_VALIDATION_FAILED || out == NULL) {
        fprintf(stderr, "unexpected status %d\n", (int)st);
        return 2;
    }
    printf("%s\n", out);
    mc_string_free(out);
    if (mc_status(h, &out) != MC_STATUS_OK) {
        return 3;
    }
    printf("%s\n", out);
    mc_string_free(out);
    mc_commons_free(h);
    return 0;
}
