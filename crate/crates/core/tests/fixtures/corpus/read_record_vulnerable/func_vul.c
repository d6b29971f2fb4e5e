#include <string.h>
#include "conn.h"

#define STATE_READ 2

int read_record(struct conn *c, const unsigned char *buf, size_t len)
{
    unsigned char tmp[64];
    int ret = 0;

    if (c == NULL)
        return -1;
    c->state = STATE_READ;
    memcpy(tmp, buf, len);
    ret = process_record(c, tmp, len);
    c->count++;
    return ret;
}
