ELEMENTS = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al",
    "Si", "P", "S", "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe",
]


def transform_grid(grid):
    out = []
    for word in grid:
        out.append("".join(ELEMENTS[ord(ch) - ord("A")] for ch in word))
    return out


def inverse_transform_grid(grid):
    out = []
    for encoded in grid:
        letters = []
        i = 0
        while i < len(encoded):
            j = i + 1
            if j < len(encoded) and encoded[j].islower():
                j += 1
            letters.append(chr(ord("A") + ELEMENTS.index(encoded[i:j])))
            i = j
        out.append("".join(letters))
    return out
