"""Reachability on a two-variable toy system and on a small chemical environment.

The toy system swaps its two binary variables on every natural step, and only
x1 can be intervened on.  The script prints the one-hot encoding, the
intervention operator F, the transition operator T and the iterates from the
all-zero state, then a minimal-k table for a 3-node chain.

    python demos/reach_walkthrough.py
"""
import numpy as np

from mcglab.envsim import make_chemical
from mcglab.reach import build_operators, decode_all, encode, one_hot, reach_table


def show(name, m):
    print(f"{name} =")
    for row in np.asarray(m, dtype=int):
        print("   ", " ".join(map(str, row)))


def main():
    cards = (2, 2)
    print("one-hot encoding (x1 is the least significant digit):")
    for s in decode_all(cards):
        print(f"  x={s} -> {one_hot(encode(s, cards), 4).astype(int).tolist()}")

    ops = build_operators(lambda s: [(s[1], s[0])], [0], cards=cards)
    show("F", ops.F_matrix())
    show("T", ops.T_matrix())
    z0 = one_hot(0, 4)
    fz = ops.apply_F(z0)
    tfz = ops.apply_TF(z0)
    print("F z0      =", fz.astype(int).tolist())
    print("TF z0     =", tfz.astype(int).tolist())
    print("F (TF) z0 =", ops.apply_F(tfz).astype(int).tolist(), "(every state is feasible after one natural step)")

    env = make_chemical("full_chain", 3, 2, 0, sharpness=1.0)
    ops = build_operators(env, [0])
    print("\n3-node chain, only node 0 intervenable, start (0, 0, 0):")
    print("min_k counts natural steps (- = never reached without intervening);")
    print("feasible means some interleaving of do(node 0) and natural steps gets there.")
    print("  state      min_k  feasible")
    for idx, values, k, feas in reach_table(ops, 0):
        print(f"  {values}  {k if k >= 0 else '-':>5}  {feas}")


if __name__ == "__main__":
    main()
