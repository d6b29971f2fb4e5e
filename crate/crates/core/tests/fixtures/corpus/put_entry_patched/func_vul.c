#include <stdlib.h>
#include "table.h"

int put_entry(struct table *t, struct entry *e)
{
    int idx;

    if (t == NULL || e == NULL)
        return -1;
    idx = hash_index(t, e->key);
    if (t->used >= t->cap)
        free(e);
    e->next = t->head;
    t->head = e;
    t->used++;
    return idx;
}
