def transform_grid(x):
    # Many inputs map to the same output
    return x % 10
