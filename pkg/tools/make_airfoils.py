"""Regenerate the shipped NACA 4-digit corpus under airfoils/.

Selig-format files with cosine point spacing and closed trailing edges,
plus test-shapes.txt naming the held-out third. Deterministic; run from
the repository root:

    python tools/make_airfoils.py
"""

import pathlib

import numpy as np

N_PER_SURFACE = 61
CAMBERS = [(0, 0), (1, 4), (2, 3), (2, 4), (2, 5), (3, 4), (3, 5), (4, 3), (4, 4), (4, 5), (5, 4), (6, 4)]
THICKNESSES = [6, 9, 12, 15, 18, 21, 24]
TEST_COUNT = 30
SEED = 20240811


def naca4(m100: int, p10: int, t100: int, n: int = N_PER_SURFACE) -> np.ndarray:
    m, p, t = m100 / 100.0, p10 / 10.0, t100 / 100.0
    x = (1.0 - np.cos(np.pi * np.arange(n) / (n - 1))) / 2.0
    # closed-trailing-edge thickness polynomial (-0.1036 last coefficient)
    yt = 5 * t * (0.2969 * np.sqrt(x) - 0.1260 * x - 0.3516 * x**2 + 0.2843 * x**3 - 0.1036 * x**4)
    if m100 == 0:
        yc = np.zeros_like(x)
        dyc = np.zeros_like(x)
    else:
        fore = x < p
        yc = np.where(fore, m / p**2 * (2 * p * x - x**2), m / (1 - p) ** 2 * ((1 - 2 * p) + 2 * p * x - x**2))
        dyc = np.where(fore, 2 * m / p**2 * (p - x), 2 * m / (1 - p) ** 2 * (p - x))
    th = np.arctan(dyc)
    xu, yu = x - yt * np.sin(th), yc + yt * np.cos(th)
    xl, yl = x + yt * np.sin(th), yc - yt * np.cos(th)
    upper = np.stack([xu[::-1], yu[::-1]], axis=1)   # TE -> LE
    lower = np.stack([xl[1:], yl[1:]], axis=1)       # LE -> TE, LE point not repeated
    return np.vstack([upper, lower])


def main() -> None:
    out = pathlib.Path(__file__).resolve().parent.parent / "airfoils"
    out.mkdir(exist_ok=True)
    names = []
    for m, p in CAMBERS:
        for t in THICKNESSES:
            digits = f"{m}{p if m else 0}{t:02d}"
            name = f"NACA {digits}"
            pts = naca4(m, p, t)
            lines = [name] + [f"{x:9.6f} {y:9.6f}".strip() for x, y in pts]
            (out / f"naca{digits}.dat").write_text("\n".join(lines) + "\n")
            names.append(name)
    rng = np.random.default_rng(SEED)
    test = sorted(rng.choice(names, size=TEST_COUNT, replace=False))
    (out / "test-shapes.txt").write_text("\n".join(test) + "\n")
    print(f"wrote {len(names)} shapes, {TEST_COUNT} listed in test-shapes.txt")


if __name__ == "__main__":
    main()
