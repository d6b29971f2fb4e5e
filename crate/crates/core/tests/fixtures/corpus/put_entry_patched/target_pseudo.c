__int64 __fastcall put_entry(struct table *t, struct entry *e)
{
  unsigned int idx; // [rsp+1Ch] [rbp-4h]

  if ( !t || !e )
    return 0xFFFFFFFFLL;
  idx = hash_index(t, e->key);
  e->next = t->head;
  t->head = e;
  ++t->used;
  return idx;
}
