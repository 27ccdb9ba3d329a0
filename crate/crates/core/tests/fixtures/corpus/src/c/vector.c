/* Operations on double vectors */

double dot(const double *a, const double *b, int n)
{
    double s = 0.0;
    for (int i = 0; i < n; i++)
        s += a[i] * b[i];
    return s;
}

void scale(double *a, int n, double k)
{
    for (int i = 0; i < n; i++)
        a[i] *= k;
}

void axpy(double *y, const double *x, int n, double alpha)
{
    for (int i = 0; i < n; i++)
        y[i] += alpha * x[i];
}

double vec_sum(const double *a, int n)
{
    double s = 0.0;
    for (int i = 0; i < n; i++)
        s += a[i];
    return s;
}
