def rotate(seq, k):
    if not seq:
        return seq
    k %= len(seq)
    return seq[-k:] + seq[:-k] if k else list(seq)


def transform_grid(grid):
    if not grid:
        return []
    rows, cols = len(grid), len(grid[0])
    shifted = [rotate(list(row), i % cols) for i, row in enumerate(grid)]
    out = [[None] * cols for _ in range(rows)]
    for j in range(cols):
        column = rotate([shifted[i][j] for i in range(rows)], j % rows)
        for i in range(rows):
            out[i][j] = column[i]
    return out


def inverse_transform_grid(grid):
    if not grid:
        return []
    rows, cols = len(grid), len(grid[0])
    unshifted = [[None] * cols for _ in range(rows)]
    for j in range(cols):
        column = rotate([grid[i][j] for i in range(rows)], -(j % rows))
        for i in range(rows):
            unshifted[i][j] = column[i]
    return [rotate(row, -(i % cols)) for i, row in enumerate(unshifted)]
