#include "ssl_local.h"

int tls_choose_sigalg(SSL *s, int fatal)
{
    const SIGALG_LOOKUP *lu = NULL;
    int sig_idx = -1;

    s->tmp_cert = NULL;
    s->tmp_sigalg = NULL;
    if (s->version >= TLS1_2_VERSION) {
        lu = find_sig_alg(s, fatal);
        if (lu == NULL)
            return 0;
        sig_idx = lu->sig_idx;
    }
    s->tmp_cert = cert_at(s, sig_idx);
    s->tmp_sigalg = lu;
    return 1;
}
