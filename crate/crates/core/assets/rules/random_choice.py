import random

def transform_grid(x):
    # Non-deterministic: returns a random choice
    return random.choice([x, x+1, x+2])

def inverse_transform_grid(y):
    return y
