BRACKETS = {"(": ")", ")": "(", "[": "]", "]": "[", "{": "}", "}": "{", "<": ">", ">": "<"}


def mirror(ch):
    if "A" <= ch <= "Z":
        return chr(ord("Z") - (ord(ch) - ord("A")))
    if "a" <= ch <= "z":
        return chr(ord("z") - (ord(ch) - ord("a")))
    if "0" <= ch <= "9":
        return chr(ord("9") - (ord(ch) - ord("0")))
    return BRACKETS.get(ch, ch)


def transform_grid(grid):
    return ["".join(mirror(ch) for ch in reversed(row)) for row in reversed(grid)]


def inverse_transform_grid(grid):
    # rotation by 180 degrees and the mirror substitution are both involutions
    return transform_grid(grid)
