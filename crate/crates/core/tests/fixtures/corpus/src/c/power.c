/* Integer exponentiation. */

long ipow(long base, int exp)
{
    long result = 1;
    for (int i = 0; i < exp; i++)
        result *= base;
    return result;
}

long fast_pow(long base, int exp)
{
    long result = 1;
    while (exp > 0) {
        if (exp & 1)
            result *= base;
        base *= base;
        exp >>= 1;
    }
    return result;
}

long mod_pow(long base, long exp, long mod)
{
    long result = 1;
    base %= mod;
    while (exp > 0) {
        if (exp & 1)
            result = result * base % mod;
        base = base * base % mod;
        exp >>= 1;
    }
    return result;
}
