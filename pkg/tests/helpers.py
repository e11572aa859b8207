"""Small fixtures shared by the unit tests."""
import numpy as np

from smartdwr.mesh import DomainSpec, build_initial_mesh, refine
from smartdwr.problems import p_laplace, poisson
from smartdwr.space import build_space


def random_mesh(kind="slit-square", macro=2, rounds=2, seed=7):
    """A mesh with hanging nodes from a few rounds of random marking."""
    m = build_initial_mesh(DomainSpec(kind), macro)
    rng = np.random.default_rng(seed)
    for _ in range(rounds):
        act = m.active_cells()
        m = refine(m, rng.choice(act, size=max(1, len(act) // 4), replace=False))
    return m


def random_function(space, rng, homogeneous=True, scale=1.0):
    """Random admissible function (constraints applied)."""
    c = scale * rng.standard_normal(space.n_dofs)
    return space.function(space.constraints.distribute(c, homogeneous=homogeneous))


def problem_setups():
    """(problem, q1, q2) pairs for both benchmark problems on meshes with hanging nodes."""
    out = []
    for prob in (poisson(), p_laplace(4.0, 1e-10, macro_subdivisions=2)):
        m = random_mesh(prob.domain.kind, prob.macro_subdivisions if prob.name != "poisson" else 2)
        out.append((prob, build_space(m, 1, prob.dirichlet), build_space(m, 2, prob.dirichlet)))
    return out


VERDICTS: list[str] = []


def verdict(name: str, passed: bool, detail: str) -> None:
    """Record one acceptance line, print it, then assert."""
    line = f"{name:<6} {'PASS' if passed else 'FAIL'}  {detail}"
    VERDICTS.append(line)
    print(line)
    assert passed, line
