import warnings

import numpy as np
import pytest

from opfkit.network import Bus, Generator, Line, Network, load_case


@pytest.fixture(scope="session")
def case5() -> Network:
    return load_case("case5")


@pytest.fixture(scope="session")
def case14() -> Network:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return load_case("case14")


def random_network(rng: np.random.Generator, n_bus: int, lossless: bool = False,
                   load_scale: float = 0.3) -> Network:
    """Connected random network: a random spanning tree plus a few chords.

    Bus 0 is the slack and carries a generator; a few other buses carry
    generators as well.  Loads are light so that a flat start converges.
    """
    order = rng.permutation(n_bus)
    edges = set()
    for k in range(1, n_bus):
        a, b = order[k], order[rng.integers(0, k)]
        edges.add((min(a, b), max(a, b)))
    for _ in range(rng.integers(0, n_bus // 2 + 1)):
        a, b = rng.choice(n_bus, size=2, replace=False)
        edges.add((min(a, b), max(a, b)))
    lines = []
    for a, b in sorted(edges):
        x = float(rng.uniform(0.02, 0.2))
        r = 0.0 if lossless else float(x * rng.uniform(0.05, 0.3))
        s_max = float(rng.uniform(1.0, 3.0)) if rng.random() < 0.3 else None
        lines.append(Line(int(a), int(b), r, x, s_max))
    buses = [Bus(i + 1, float(load_scale * rng.uniform(0.0, 1.0)) if i else 0.0,
                 float(0.3 * load_scale * rng.uniform(-0.2, 1.0)) if i else 0.0,
                 is_slack=(i == 0)) for i in range(n_bus)]
    gen_buses = [0] + sorted(rng.choice(np.arange(1, n_bus), size=min(n_bus - 1, rng.integers(0, 3)),
                                        replace=False).tolist())
    gens = [Generator(int(b), 0.0, float(rng.uniform(1.0, 4.0)), -3.0, 3.0,
                      float(rng.uniform(1.0, 50.0)), float(rng.uniform(5.0, 40.0)), 0.0)
            for b in gen_buses]
    return Network(tuple(buses), tuple(gens), tuple(lines), 100.0, name=f"random{n_bus}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def fixed_voltage_angles(net: Network, p_net: np.ndarray, tol: float = 1e-13) -> np.ndarray:
    """Angles solving the active-power AC equations with every ``v`` pinned at 1.

    Newton iteration on the active rows only, slack phase fixed at zero.
    Used as the AC side of the DC/AC consistency check.
    """
    from opfkit.powerflow import ControlInput, Disturbance, SystemState, ac_jacobian, ac_residual
    from opfkit.network import build_admittance

    n = net.n_bus
    y = build_admittance(net)
    keep = np.delete(np.arange(n), net.slack)
    d = Disturbance(-np.asarray(p_net, dtype=float), np.zeros(n))
    u = ControlInput.zeros(0)
    theta = np.zeros(n)
    for _ in range(50):
        x = SystemState(np.ones(n), theta)
        f = ac_residual(x, u, d, y)[:n][keep]
        if np.max(np.abs(f), initial=0.0) <= tol:
            return theta
        jac = ac_jacobian(x, u, d, y)[:n, n:2 * n][np.ix_(keep, keep)]
        theta = theta.copy()
        theta[keep] -= np.linalg.solve(jac, f)
    raise RuntimeError("fixed-voltage Newton did not converge")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
