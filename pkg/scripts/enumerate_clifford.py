"""Enumerate the single-qubit Clifford group from {H, S} by breadth-first closure."""

import itertools

import numpy as np

H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
S = np.array([[1, 0], [0, 1j]], dtype=complex)


def canonical(u):
    # fix the global phase so the first nonzero entry is real positive
    k = np.flatnonzero(np.abs(u.ravel()) > 1e-9)[0]
    v = u * np.exp(-1j * np.angle(u.ravel()[k]))
    return tuple(np.round(v.ravel(), 9))


def main():
    seen = {canonical(np.eye(2)): np.eye(2, dtype=complex)}
    frontier = [np.eye(2, dtype=complex)]
    while frontier:
        nxt = []
        for u, g in itertools.product(frontier, (H, S)):
            w = g @ u
            key = canonical(w)
            if key not in seen:
                seen[key] = w
                nxt.append(w)
        frontier = nxt
    print(f"group order: {len(seen)}")
    keys = set(seen)
    closed = all(canonical(a @ b) in keys for a, b in itertools.product(seen.values(), repeat=2))
    print(f"closed under composition ({len(seen) ** 2} products): {closed}")


if __name__ == "__main__":
    main()
