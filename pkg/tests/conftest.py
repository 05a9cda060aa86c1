import numpy as np
import pytest

from rismeta import ChannelPair, SystemConfig

_CRITERIA: dict[int, dict] = {}


def cgauss(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def iid_channel(rng, K=2, N=16, M=8):
    """Unit-variance i.i.d. channel; better conditioned than the geometric one."""
    return ChannelPair(H=cgauss(rng, (K, N)), G=cgauss(rng, (N, M)))


def small_cfg(K=2, N=16, M=8, **kw):
    kw.setdefault("P", 1.0)
    kw.setdefault("noise_power", 1.0)
    return SystemConfig(M=M, N=N, K=K, **kw)


def fd_real(f, x, h=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def fd_complex(f, Z, h=1e-6):
    """Central differences in the convention dR/dRe + 1j dR/dIm."""
    Z = np.array(Z, dtype=complex)
    g = np.zeros_like(Z)
    for idx in np.ndindex(Z.shape):
        parts = []
        for step in (h, 1j * h):
            Zp, Zm = Z.copy(), Z.copy()
            Zp[idx] += step
            Zm[idx] -= step
            parts.append((f(Zp) - f(Zm)) / (2 * h))
        g[idx] = parts[0] + 1j * parts[1]
    return g


def rel_err(a, b, floor=1e-9):
    return float(np.linalg.norm(np.ravel(a - b)) / max(np.linalg.norm(np.ravel(b)), floor))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting: one PASS/FAIL line per criterion ------------------

@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    number, name = mark.args
    entry = _CRITERIA.setdefault(number, {"name": name, "ok": True, "details": []})
    if rep.failed or (rep.when == "call" and rep.skipped):
        entry["ok"] = False
    if rep.when == "call":
        entry["details"] += [v for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        line = f"criterion {number:2d} {'PASS' if e['ok'] else 'FAIL'}  {e['name']}"
        if e["details"]:
            line += "  [" + "; ".join(e["details"]) + "]"
        terminalreporter.write_line(line)
