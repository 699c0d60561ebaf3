"""Smoke test for the srgeo_py extension module.

Build and install first, e.g. `pip install maturin && maturin develop -m crates/py/Cargo.toml`
or `pip install ./crates/py`, then run `python python/smoke_test.py`.
"""

import json
import math

import srgeo_py as sg


def close(a, b, tol):
    assert abs(a - b) <= tol, (a, b)


def main():
    assert len(sg.list_problems()) == 6

    h = sg.Structure.heisenberg()
    assert (h.dimension, h.rank) == (3, 2)
    hor, vert = h.project([1.0, 2.0, 0.0], [0.0, 0.0, 1.0])
    for a, b, v in zip(hor, vert, [0.0, 0.0, 1.0]):
        close(a + b, v, 1e-12)
    assert h.bracket_rank([0.3, -0.2, 1.0]) == (3, 2, True)
    assert sg.Structure.martinet().bracket_rank([0.5, 0.0, 0.0]) == (3, 3, True)

    # energy is affine in q with slope defect / 2
    path = sg.Path([[0.0, 0.0, 0.0], [0.3, 0.1, 0.2], [0.5, -0.4, 0.1], [1.0, 0.0, 0.3]])
    e1, e2 = sg.energy(h, 1.0, path), sg.energy(h, 100.0, path)
    close(e2 - e1, 99.0 / 2.0 * sg.horizontality_defect(h, path), 1e-10 * abs(e2))
    assert len(sg.energy_gradient(h, 10.0, path)) == 2 * 3
    assert sg.limit_energy(h, path) is None

    chord = sg.continuation_solve(h, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], grid_size=50)
    assert len(chord) == 5 and all(r.converged for r in chord)
    for r in chord:
        close(r.length, 1.0, 1e-6)

    vertical = sg.continuation_solve(h, [0.0, 0.0, 0.0], [0.0, 0.0, 1.0 / (4.0 * math.pi)], grid_size=100)
    lengths = [r.length for r in vertical]
    assert all(b > a for a, b in zip(lengths, lengths[1:]))
    assert 0.95 <= lengths[-1] <= 1.01
    report = json.loads(sg.convergence_report(vertical, reference=1.0))
    assert report["holds"], report

    lq = sg.solve_drift(sg.Structure.euclidean(2), [0.0, 0.0], [1.0, 0.0], drift_matrix=[[0.0, 1.0], [0.0, 0.0]], steps=1)
    close(lq.costs[-1], 12.0 / 13.0, 0.01 * 12.0 / 13.0)
    assert max(lq.identity_residuals) <= 1e-6
    assert len(lq.controls()) == len(lq.trajectory())

    print("smoke test passed: vertical lengths", ", ".join(f"{l:.5f}" for l in lengths))


if __name__ == "__main__":
    main()
