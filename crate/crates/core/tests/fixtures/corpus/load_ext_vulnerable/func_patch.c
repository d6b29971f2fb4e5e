#include "parser.h"

int load_ext(struct parser *p, int id)
{
    struct ext *ext;
    char *buf;

    buf = parser_buffer(p);
    if (buf == NULL)
        return -1;
    ext = lookup_ext(p, id);
    if (ext == NULL)
        return -1;
    ext->data = buf;
    p->count++;
    return ext->len;
}
