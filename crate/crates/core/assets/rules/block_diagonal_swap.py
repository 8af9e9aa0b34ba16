def transform_grid(grid):
    out = [list(row) for row in grid]
    rows = len(out)
    cols = len(out[0]) if rows else 0
    for r in range(0, rows - 1, 2):
        for c in range(0, cols - 1, 2):
            out[r][c + 1], out[r + 1][c] = out[r + 1][c], out[r][c + 1]
    return out


def inverse_transform_grid(grid):
    # the swap is its own inverse
    return transform_grid(grid)
