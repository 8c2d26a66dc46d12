"""kNN against PAk density on a 1D Gaussian with known density.

PAk chooses a neighborhood size per point and fits a slope, so it follows the
curved tails that a fixed k smooths over.
"""

import numpy as np

from datamanifold.dataset import Dataset
from datamanifold.density import knn_density, pak_density
from datamanifold.neighbors import compute_neighbors
from datamanifold.synthetic import gaussian_1d


def main():
    s = gaussian_1d(10_000, seed=0)
    graph = compute_neighbors(Dataset(points=s.points), maxk=200)
    knn = knn_density(graph, 30, 1.0)
    pak = pak_density(graph, 1.0)
    for name, f in [("kNN k=30", knn), ("PAk", pak)]:
        resid = f.log_rho - s.log_density
        z = resid / f.log_rho_err
        print(f"{name:9s} rmse {np.sqrt(np.mean(resid**2)):.4f}  std of (error / reported error) {z.std():.2f}")
    print(f"PAk neighborhood sizes: median {np.median(pak.k_used):.0f}, range {pak.k_used.min()}..{pak.k_used.max()}")
    x = s.points[:, 0]
    for lo, hi in [(0, 1), (1, 2), (2, 3), (3, np.inf)]:
        m = (np.abs(x) >= lo) & (np.abs(x) < hi)
        print(
            f"|x| in [{lo}, {hi}): kNN rmse {np.sqrt(np.mean((knn.log_rho - s.log_density)[m] ** 2)):.3f}"
            f"  PAk rmse {np.sqrt(np.mean((pak.log_rho - s.log_density)[m] ** 2)):.3f}  ({m.sum()} points)"
        )


if __name__ == "__main__":
    main()
