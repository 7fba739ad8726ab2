#!/usr/bin/env python3
"""Exhaustive reconstruction of the reference test-set confusion matrix.

Given only the per-class test supports (row sums 6/6/6/14), the overall
accuracy, the per-class F1 scores, and the weighted F1, this sweeps every
4x4 count matrix with those row sums (about 4e8 candidates, vectorized over
numpy grids) and prints the matrices that reproduce all the target metrics
within 1e-4. Exactly one survives, which is the matrix frozen into the test
suite. Takes a few seconds on one core.
"""

import time

import numpy as np

ROW_SUMS = (6, 6, 6, 14)
TARGET_ACCURACY = 0.8125
TARGET_F1 = (0.8571, 0.7692, 0.4000, 0.9630)
TARGET_WEIGHTED_F1 = 0.8012
TOL = 1e-4


def compositions(total: int) -> np.ndarray:
    rows = [
        (a, b, c, total - a - b - c)
        for a in range(total + 1)
        for b in range(total + 1 - a)
        for c in range(total + 1 - a - b)
    ]
    return np.array(rows, dtype=np.int64)


def main() -> int:
    t0 = time.time()
    total = sum(ROW_SUMS)
    r6 = compositions(6)  # candidate rows with sum 6
    r14 = compositions(14)  # candidate rows with sum 14
    supports = np.array(ROW_SUMS, dtype=np.float64)
    n0 = len(r6)
    solutions = []
    grid_shape = (len(r6), len(r14))
    for i0, r0 in enumerate(r6):
        if i0 % 8 == 0:
            done = i0 / n0
            print(f"\r{done:6.1%} swept, {time.time() - t0:5.1f}s", end="", flush=True)
        for r1 in r6:
            tp2 = np.broadcast_to(r6[:, 2][:, None], grid_shape)
            tp3 = np.broadcast_to(r14[:, 3][None, :], grid_shape)
            trace = r0[0] + r1[1] + tp2 + tp3
            mask = np.abs(trace / total - TARGET_ACCURACY) <= TOL
            if not mask.any():
                continue
            tps = (
                np.full(grid_shape, r0[0]),
                np.full(grid_shape, r1[1]),
                tp2,
                tp3,
            )
            weighted = np.zeros(grid_shape)
            for j in range(4):
                col = r0[j] + r1[j] + r6[:, j][:, None] + r14[:, j][None, :]
                denom = col + supports[j]
                f1 = np.where(denom > 0, 2 * tps[j] / denom, 0.0)
                mask &= np.abs(f1 - TARGET_F1[j]) <= TOL
                weighted += supports[j] * f1
            mask &= np.abs(weighted / total - TARGET_WEIGHTED_F1) <= TOL
            for i2, i3 in zip(*np.nonzero(mask)):
                solutions.append(
                    (tuple(r0), tuple(r1), tuple(r6[i2]), tuple(r14[i3]))
                )
    print(f"\rsweep finished in {time.time() - t0:.1f}s")
    print(f"consistent matrices: {len(solutions)}")
    for m in solutions:
        for row in m:
            print("  ", [int(v) for v in row])
    return 0 if len(solutions) == 1 else 1


if __name__ == "__main__":
    raise SystemExit(main())
