/* Fixed-size 3x3 matrix helpers. */

void mat_add(const double a[3][3], const double b[3][3], double out[3][3])
{
    for (int i = 0; i < 3; i++)
        for (int j = 0; j < 3; j++)
            out[i][j] = a[i][j] + b[i][j];
}

void mat_mul(const double a[3][3], const double b[3][3], double out[3][3])
{
    for (int i = 0; i < 3; i++)
        for (int j = 0; j < 3; j++) {
            double s = 0.0;
            for (int k = 0; k < 3; k++)
                s += a[i][k] * b[k][j];
            out[i][j] = s;
        }
}

double trace(const double a[3][3])
{
    return a[0][0] + a[1][1] + a[2][2];
}

void transpose(double a[3][3])
{
    for (int i = 0; i < 3; i++)
        for (int j = i + 1; j < 3; j++) {
            double t = a[i][j];
            a[i][j] = a[j][i];
            a[j][i] = t;
        }
}
