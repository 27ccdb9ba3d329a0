/* String hashing functions */

unsigned long djb2(const char *s)
{
    unsigned long h = 5381;
    int c;
    while ((c = *s++) != 0)
        h = h * 33 + c;
    return h;
}

unsigned long sdbm(const char *s)
{
    unsigned long h = 0;
    int c;
    while ((c = *s++) != 0)
        h = c + (h << 6) + (h << 16) - h;
    return h;
}

unsigned fnv1a(const char *s)
{
    unsigned h = 2166136261u;
    for (; *s; s++) {
        h ^= (unsigned char)*s;
        h *= 16777619u;
    }
    return h;
}
