#include "dsp.h"

int sum_samples(const int *samples, int n, int *out)
{
    int i;
    int total = 0;

    if (n <= 0)
        return 0;
    for (i = 0; i < n; i++) {
        total += samples[i];
    }
    *out = total;
    return 1;
}
