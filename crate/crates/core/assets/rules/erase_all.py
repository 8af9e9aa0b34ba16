def transform_grid(grid):
    return []


def inverse_transform_grid(grid):
    return grid
