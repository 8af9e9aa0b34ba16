def transform_grid(grid):
    half = (len(grid) + 1) // 2
    first, second = grid[:half], grid[half:]
    out = []
    for i in range(half):
        if i < len(second):
            out.append(second[i])
        out.append(first[i])
    return out


def inverse_transform_grid(grid):
    half = (len(grid) + 1) // 2
    rest = len(grid) - half
    first, second = [], []
    pos = 0
    for i in range(half):
        if i < rest:
            second.append(grid[pos])
            pos += 1
        first.append(grid[pos])
        pos += 1
    return first + second
