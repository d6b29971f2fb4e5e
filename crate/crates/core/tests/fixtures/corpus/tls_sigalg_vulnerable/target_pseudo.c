__int64 __fastcall tls_choose_sigalg(SSL *s, int fatal)
{
  const SIGALG_LOOKUP *lu; // rbx
  int sig_idx; // ebp

  lu = 0LL;
  sig_idx = -1;
  s->tmp_cert = 0LL;
  s->tmp_sigalg = 0LL;
  if ( s->version > 0x302 )
  {
    lu = find_sig_alg(s, fatal);
    if ( !lu )
      return 0LL;
    sig_idx = lu->sig_idx;
  }
  s->tmp_cert = cert_at(s, sig_idx);
  s->tmp_sigalg = lu;
  return 1LL;
}
