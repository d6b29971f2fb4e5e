__int64 __fastcall read_record(struct conn *c, const unsigned __int8 *buf, size_t len)
{
  unsigned int ret; // [rsp+1Ch] [rbp-54h]
  char tmp[64]; // [rsp+20h] [rbp-50h] BYREF

  if ( !c )
    return 0xFFFFFFFFLL;
  c->state = 2;
  if ( len > 0x40 )
    return 0xFFFFFFFELL;
  memcpy(tmp, buf, len);
  ret = process_record(c, tmp, len);
  ++c->count;
  return ret;
}
