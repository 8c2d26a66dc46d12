"""Intrinsic dimension at several scales.

A spiral drawn with a little noise is one-dimensional when seen from far away
and two-dimensional at the noise scale. The 2NN estimator only sees the
smallest scale; Gride and decimation reach larger ones.
"""

import numpy as np

from datamanifold.dataset import Dataset
from datamanifold.id_estimation import compute_mu, id_2nn_mle, id_decimation, id_gride
from datamanifold.neighbors import compute_neighbors
from datamanifold.synthetic import spiral, uniform


def main():
    for d in (2, 5, 9):
        pts = uniform(10_000, d, seed=0).points
        est = id_2nn_mle(compute_mu(compute_neighbors(Dataset(points=pts), maxk=2)))
        print(f"uniform {d}D cube: 2NN id = {est.id:.2f} +- {est.id_err:.2f}")

    ds = Dataset(points=spiral(5000, seed=0, turns=3, noise=0.005).points)
    graph = compute_neighbors(ds, maxk=256)
    print("\nspiral, Gride:")
    for e in id_gride(graph).estimates:
        print(f"  scale {e.scale:.4f}  id {e.id:.2f} +- {e.id_err:.2f}")
    print("spiral, decimation:")
    for e in id_decimation(ds, fractions=[1, 0.25, 0.05, 0.01], repeats=5, seed=0).estimates:
        print(f"  scale {e.scale:.4f}  id {e.id:.2f} +- {e.id_err:.2f}")
    print("\nThe noise makes the curve read about 2 at the finest scale and 1 above it.")


if __name__ == "__main__":
    np.set_printoptions(precision=3)
    main()
