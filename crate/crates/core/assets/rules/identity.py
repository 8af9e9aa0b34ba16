def transform_grid(grid):
    return grid


def inverse_transform_grid(grid):
    return grid
