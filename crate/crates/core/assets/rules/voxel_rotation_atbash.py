def atbash(ch):
    if "A" <= ch <= "Z":
        return chr(ord("Z") - (ord(ch) - ord("A")))
    if "a" <= ch <= "z":
        return chr(ord("z") - (ord(ch) - ord("a")))
    return ch


def transform_grid(grid):
    if not grid or not grid[0] or not grid[0][0]:
        return grid
    depth, rows, cols = len(grid), len(grid[0]), len(grid[0][0])
    return [
        [[atbash(grid[depth - 1 - b][j][a]) for b in range(depth)] for j in range(rows)]
        for a in range(cols)
    ]


def inverse_transform_grid(grid):
    if not grid or not grid[0] or not grid[0][0]:
        return grid
    cols, rows, depth = len(grid), len(grid[0]), len(grid[0][0])
    return [
        [[atbash(grid[k][j][depth - 1 - i]) for k in range(cols)] for j in range(rows)]
        for i in range(depth)
    ]
