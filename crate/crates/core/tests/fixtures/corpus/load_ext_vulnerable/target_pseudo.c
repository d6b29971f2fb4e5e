__int64 __fastcall load_ext(struct parser *p, int id)
{
  struct ext *ext; // [rsp+10h] [rbp-10h]
  char *buf; // [rsp+18h] [rbp-8h]

  buf = parser_buffer(p);
  if ( !buf )
    return 0xFFFFFFFFLL;
  ext = lookup_ext(p, id);
  ext->data = buf;
  ++p->count;
  return (unsigned int)ext->len;
}
