#include <stdio.h>
#include <string.h>
#include "normlab.h"

int main(void) {
    if (nl_abi_version() != 1) return 1;
    const char *cfg =
        "[arch]\nfamily = \"mlp-bn\"\ndepth = 1\nwidth = 16\nnum_classes = 4\ninput_shape = [1, 16, 16]\n"
        "[optim]\nalpha = 0.1\nweight_decay = 0.001\nmomentum = 0.0\nbatch_size = 10\ntotal_steps = 120\nschedule = \"cosine\"\n"
        "[data]\nsource = \"synthetic\"\n"
        "[data.synthetic]\nkind = \"gaussian_blobs_image\"\nnum_classes = 4\nsamples_per_class = 20\nimage_shape = [1, 16, 16]\nclass_separation = 40.0\nnoise_sigma = 25.0\nseed = 7\n"
        "[run]\nseed = 3\noutput_dir = \"runs/capi-smoke\"\n";
    NlExperiment *exp = NULL;
    NlStatus st = nl_experiment_new(cfg, &exp);
    if (st != NL_STATUS_OK) { fprintf(stderr, "new: %s\n", nl_last_error()); return 2; }
    char *record = NULL;
    st = nl_experiment_train(exp, &record);
    if (st != NL_STATUS_OK) { fprintf(stderr, "train: %s\n", nl_last_error()); return 3; }
    if (strstr(record, "\"status\":\"ok\"") == NULL) return 4;
    printf("C caller trained a run; record has %zu bytes\n", strlen(record));
    nl_string_free(record);
    nl_experiment_free(exp);
    return 0;
}
