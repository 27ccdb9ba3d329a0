// Sign and magnitude helpers

int iabs(int x)
{
    return x < 0 ? -x : x;
}

int sign(int x)
{
    if (x > 0)
        return 1;
    if (x < 0)
        return -1;
    return 0;
}

int max2(int a, int b)
{
    return a > b ? a : b;
}

int min2(int a, int b)
{
    return a < b ? a : b;
}

int max3(int a, int b, int c)
{
    return max2(max2(a, b), c);
}
