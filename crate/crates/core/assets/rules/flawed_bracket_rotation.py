def rotate_left(s, k):
    n = len(s)
    if n == 0: return s
    k = k 
    return s[k:] + s[:k]

def transform_grid(grid):
    start = grid.find('<')
    end = grid.find('>')
    if start != -1 and end > start:
        payload = grid[start+1:end]
        k = len(payload) 
        v = rotate_left(payload, k)
        return grid[:start] + "{" + str(k) + v + "}" + grid[end+1:]
    return grid

def inverse_transform_grid(grid):
    start = grid.find('{')
    end = grid.find('}')
    if start != -1 and end > start:
        k_val = int(grid[start+1])
        v = grid[start+2:end]
        n = len(v)
        if n == 0: return grid
        shift = k_val 
        if shift == 0:
            u = v
        else:
            idx = shift - 1
            if idx <= 0:  # Logical error here
                u = v
            else:
                u = v[-idx:] + v[:-idx]  # Incorrect rotation
        return grid[:start] + "<" + u + ">" + grid[end+1:]
    return grid
