#include <stdio.h>
#include <stdlib.h>
#include "ldgec.h"

int main(void) {
    LdgecSystem *sys = NULL;
    const char *cfg = "{\"antennas\": 8, \"rf_chains\": 2, \"pilot_instants\": 4, \"subcarriers\": 4, \"paths\": 2}";
    if (ldgec_system_new(cfg, &sys) != LDGEC_STATUS_OK) {
        fprintf(stderr, "system: %s\n", ldgec_last_error());
        return 1;
    }
    size_t n = 2 * ldgec_system_channel_len(sys);
    LdgecInstance *inst = NULL;
    if (ldgec_simulate(sys, 7, 0, &inst) != LDGEC_STATUS_OK) return 2;
    double *truth = malloc(n * sizeof(double));
    double *est = malloc(n * sizeof(double));
    double nmse = 0.0;
    if (ldgec_instance_channel(inst, truth, n) != LDGEC_STATUS_OK) return 3;
    if (ldgec_estimate(sys, inst, LDGEC_ESTIMATOR_LDGEC, 10, 1, est, n) != LDGEC_STATUS_OK) return 4;
    if (ldgec_nmse(est, truth, n, &nmse) != LDGEC_STATUS_OK) return 5;
    if (ldgec_estimate(sys, inst, LDGEC_ESTIMATOR_LS, 0, 0, est, n - 2) != LDGEC_STATUS_DIMENSION) return 6;
    if (ldgec_last_error() == NULL) return 7;
    printf("%s %.6e\n", ldgec_version(), nmse);
    free(truth);
    free(est);
    ldgec_instance_free(inst);
    ldgec_system_free(sys);
    return nmse >= 0.0 ? 0 : 8;
}
