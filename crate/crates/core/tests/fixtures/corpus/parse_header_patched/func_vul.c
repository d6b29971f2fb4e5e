#include "proto.h"

#define HDR_MAX 255

int parse_header(struct hdr *hdr, const unsigned char *p)
{
    hdr->type = p[0];
    hdr->len = (p[1] << 8) | p[2];
    if (hdr->len > HDR_MAX)
        return 0;
    hdr->body = p + 3;
    return 1;
}
