#ifndef SSL_LOCAL_H
# define SSL_LOCAL_H

# define TLS1_VERSION 0x0301
# define TLS1_1_VERSION 0x0302
# define TLS1_2_VERSION 0x0303
# define TLS1_3_VERSION 0x0304

#endif
