from math import gcd


def stride(n):
    for k in range(2, n):
        if gcd(k, n) == 1:
            return k
    return 1


def transform_grid(grid):
    n = len(grid)
    k = stride(n)
    out = [None] * n
    for i, item in enumerate(grid):
        out[(i * k) % n] = item
    return out


def inverse_transform_grid(grid):
    n = len(grid)
    k = stride(n)
    return [grid[(i * k) % n] for i in range(n)]
