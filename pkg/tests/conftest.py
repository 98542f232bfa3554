import numpy as np


def central_difference(f, params: dict, key: str, idx, eps=1e-5) -> float:
    """Finite-difference oracle: perturbs one coordinate in place and restores it."""
    arr = params[key]
    old = arr[idx]
    arr[idx] = old + eps
    fp = f()
    arr[idx] = old - eps
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2 * eps)


def relative_error(a, b, floor=1e-7) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def random_coordinates(params: dict, n: int, rng):
    keys = sorted(params)
    sizes = np.array([params[k].size for k in keys], dtype=float)
    out = []
    for _ in range(n):
        k = keys[rng.choice(len(keys), p=sizes / sizes.sum())]
        flat = rng.integers(params[k].size)
        out.append((k, np.unravel_index(flat, params[k].shape)))
    return out


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES = []


def record_acceptance(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
