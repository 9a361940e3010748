"""Coarse text rendering of the (alpha_star, alpha) regime map."""

import numpy as np

from stockdp import classify_regime, n_alpha_formula

stars = np.linspace(-1, 1, 21, endpoint=False)
alphas = np.linspace(0, 1, 21, endpoint=False)


def glyph(a_star, alpha, horizon):
    label = classify_regime(a_star, alpha, horizon)
    if label == "R_inf":
        return "  ."
    n = int(label[2:])
    return f"{n:3d}" if n < 100 else "  +"


for horizon in ("finite", "infinite"):
    print(f"\n{horizon} horizon: rows alpha (top = 0.95), columns alpha_star from -1; '.' never order, digits N_alpha")
    for alpha in alphas[::-1]:
        print(f"{alpha:4.2f} " + "".join(glyph(a, alpha, horizon) for a in stars))

# N_alpha never increases with the discount factor
for a_star in (0.2, 0.5, 0.8):
    row = [n_alpha_formula(a_star, al) for al in (0.85, 0.9, 0.95, 0.99)]
    print(f"alpha_star={a_star}: N_alpha at alpha=0.85,0.9,0.95,0.99 ->", row)
