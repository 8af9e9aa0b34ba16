def substitute(ch):
    if "A" <= ch <= "Z":
        return chr(ord("Z") - (ord(ch) - ord("A")))
    if "a" <= ch <= "z":
        return chr(ord("z") - (ord(ch) - ord("a")))
    if ch.isdigit():
        return str(9 - int(ch))
    return ch


def transform_grid(grid):
    return ["".join(substitute(ch) for ch in row)[::-1] for row in grid[::-1]]


def inverse_transform_grid(grid):
    return transform_grid(grid)
