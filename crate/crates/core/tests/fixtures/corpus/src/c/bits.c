/* Bit twiddling */

int popcount(unsigned x)
{
    int n = 0;
    while (x) {
        n += x & 1u;
        x >>= 1;
    }
    return n;
}

int is_power_of_two(unsigned x)
{
    return x != 0 && (x & (x - 1)) == 0;
}

unsigned reverse_bits(unsigned x)
{
    unsigned r = 0;
    for (int i = 0; i < 32; i++) {
        r = (r << 1) | (x & 1u);
        x >>= 1;
    }
    return r;
}

int lowest_set_bit(unsigned x)
{
    if (x == 0)
        return -1;
    int i = 0;
    while (!(x & 1u)) {
        x >>= 1;
        i++;
    }
    return i;
}
