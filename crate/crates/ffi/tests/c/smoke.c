/* Loads a model, prior and observation from files, solves every mode and
   prints one line of weights per mode. */
#include <stdio.h>
#include <stdlib.h>

#include "mixcast.h"

static char *slurp(const char *path) {
    FILE *f = fopen(path, "rb");
    if (!f) return NULL;
    fseek(f, 0, SEEK_END);
    long n = ftell(f);
    fseek(f, 0, SEEK_SET);
    char *buf = malloc((size_t)n + 1);
    if (fread(buf, 1, (size_t)n, f) != (size_t)n) { fclose(f); free(buf); return NULL; }
    buf[n] = 0;
    fclose(f);
    return buf;
}

static int fail(const char *what) {
    char msg[256];
    mixcast_last_error_message(msg, sizeof msg);
    fprintf(stderr, "%s: %s\n", what, msg);
    return 1;
}

int main(int argc, char **argv) {
    if (argc != 4) return 2;
    char *model_json = slurp(argv[1]), *prior_json = slurp(argv[2]), *obs_json = slurp(argv[3]);
    if (!model_json || !prior_json || !obs_json) return 2;

    MixcastModel *model = NULL;
    if (mixcast_model_from_json(model_json, &model) != MIXCAST_STATUS_OK) return fail("model");
    size_t m = 0, n = 0;
    mixcast_model_dims(model, &m, &n);

    MixcastEstimator *est = NULL;
    if (mixcast_estimator_new(model, prior_json, obs_json, NULL, &est) != MIXCAST_STATUS_OK) return fail("estimator");

    double *lambda = malloc(m * sizeof(double));
    MixcastMode modes[3] = {MIXCAST_MODE_BACKWARD, MIXCAST_MODE_COMBINED, MIXCAST_MODE_FORWARD};
    for (int k = 0; k < 3; k++) {
        double objective = 0.0;
        bool converged = false;
        if (mixcast_estimate(est, modes[k], lambda, m, &objective, &converged) != MIXCAST_STATUS_OK) return fail("estimate");
        for (size_t j = 0; j < m; j++) printf("%s%.17g", j ? " " : "", lambda[j]);
        printf("\n");
    }

    if (mixcast_estimate(est, 9, lambda, m, NULL, NULL) != MIXCAST_STATUS_INVALID_INPUT) return 3;

    free(lambda);
    mixcast_estimator_free(est);
    mixcast_model_free(model);
    free(model_json);
    free(prior_json);
    free(obs_json);
    return 0;
}
