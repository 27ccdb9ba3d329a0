#include <math.h>

struct point {
    double x, y;
};

double distance(struct point a, struct point b)
{
    double dx = a.x - b.x;
    double dy = a.y - b.y;
    return sqrt(dx * dx + dy * dy);
}

double triangle_area(struct point a, struct point b, struct point c)
{
    double cross = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    return fabs(cross) / 2.0;
}

struct point midpoint(struct point a, struct point b)
{
    struct point m = { (a.x + b.x) / 2.0, (a.y + b.y) / 2.0 };
    return m;
}

double circle_area(double r)
{
    return 3.14159265358979 * r * r;
}
