"""Discrete solver against the 40-mode expansion on three refinements (alpha = beta = 1.5)."""

import warnings

from fracsource.forward import (SOURCES, ProblemSpec, SpatialMesh, TimeGrid, relative_l2,
                                solve_discrete, solve_spectral)
from fracsource.spectral import find_eigenvalues


def main():
    system = find_eigenvalues(1.5, 40)
    print(f"{'h':>8s} {'tau':>8s}  " + "  ".join(f"{s:>8s}" for s in ("poly1", "poly2", "poly4")))
    for h, tau in [(4e-3, 2e-3), (2e-3, 1e-3), (1e-3, 5e-4)]:
        mesh, grid = SpatialMesh.from_h(h), TimeGrid.over(1.0, tau)
        errs = []
        for s in ("poly1", "poly2", "poly4"):
            spec = ProblemSpec(1.5, 1.5, "exp2", s)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                u = solve_discrete(spec, mesh, grid).values
                v = solve_spectral(spec, system, mesh, grid, n_modes=40).values
            errs.append(relative_l2(u[-1], v[-1], mesh))
        print(f"{h:8.0e} {tau:8.0e}  " + "  ".join(f"{e:8.2%}" for e in errs), flush=True)


if __name__ == "__main__":
    main()
