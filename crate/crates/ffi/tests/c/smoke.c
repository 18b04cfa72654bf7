#include <stdio.h>
#include <string.h>

#include "crqw.h"

int main(void) {
    CrqwSim *sim = NULL;
    if (crqw_sim_new(NULL, "improved-cas", "greedy", "one-shot-cas", 8, 1, &sim) != CRQW_STATUS_OK) {
        fprintf(stderr, "new: %s\n", crqw_last_error());
        return 1;
    }
    if (crqw_sim_run(sim, 100000) != CRQW_STATUS_OK) {
        fprintf(stderr, "run: %s\n", crqw_last_error());
        return 1;
    }
    if (crqw_sim_lincheck(sim) != CRQW_STATUS_OK || crqw_sim_in_flight(sim) != 0 || crqw_sim_completed(sim) != 8) {
        fprintf(stderr, "check: %s\n", crqw_last_error());
        return 1;
    }
    printf("t=%llu completed=%llu\n", (unsigned long long)crqw_sim_time(sim), (unsigned long long)crqw_sim_completed(sim));
    crqw_sim_free(sim);

    CrqwStatus s = crqw_sim_new(NULL, "no-such-primitive", "greedy", "cas-flood", 8, 1, &sim);
    if (s != CRQW_STATUS_CONFIG || sim != NULL || strlen(crqw_last_error()) == 0) {
        return 1;
    }
    return 0;
}
