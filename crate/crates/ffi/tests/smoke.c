#include <math.h>
#include <stdio.h>

#include "kscale.h"

static double bowl(double k, void *user_data) {
    int *calls = user_data;
    ++*calls;
    return (k - 0.7) * (k - 0.7);
}

int main(void) {
    const double rates[5] = {500, 1000, 2000, 4000, 8000};
    const double psnr[5] = {32.0, 35.0, 37.5, 39.5, 41.0};
    double scaled[5];
    for (int i = 0; i < 5; i++) scaled[i] = rates[i] * 0.9;

    KsBdRate bd;
    if (ks_bd_rate(rates, psnr, 5, scaled, psnr, 5, KS_METRIC_PSNR, &bd) != KS_STATUS_OK) return 1;
    if (fabs(bd.percent + 10.0) > 1e-9) return 2;

    double lambda = 0;
    if (ks_default_lambda(KS_FRAME_TYPE_I, 12, &lambda) != KS_STATUS_OK || fabs(lambda - 0.57) > 1e-12) return 3;
    if (ks_default_lambda(KS_FRAME_TYPE_I, 99, &lambda) != KS_STATUS_OUT_OF_RANGE) return 4;
    char msg[128];
    if (ks_last_error_message(msg, sizeof msg) == 0) return 5;

    int calls = 0;
    KsMinimizeResult min;
    if (ks_minimize(bowl, &calls, 0.25, 2.0, 1e-2, 12, &min) != KS_STATUS_OK) return 6;
    if (fabs(min.k_best - 0.7) > 1e-2 || (int)min.evaluations != calls) return 7;

    KsEnvelopeBuilder *b = ks_envelope_builder_new(KS_METRIC_PSNR);
    KsEnvelope *env = NULL;
    if (ks_envelope_builder_add_curve(b, 1.0, rates, psnr, 5) != KS_STATUS_OK) return 8;
    if (ks_envelope_build(b, &env) != KS_STATUS_OK || ks_envelope_len(env) != 7501) return 9;
    uint32_t rate;
    if (ks_envelope_get(env, 0, &rate, NULL, NULL) != KS_STATUS_OK || rate != 500) return 10;
    ks_envelope_free(env);
    ks_envelope_builder_free(b);

    printf("ok %s\n", ks_version());
    return 0;
}
