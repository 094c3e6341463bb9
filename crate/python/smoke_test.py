"""Smoke test of the `plap` Python module.

Uses an installed `plap` (e.g. `maturin develop -m crates/python/Cargo.toml`)
or, failing that, the library built by
`cargo build -p plap-python --features extension-module --release`.
"""

import importlib.util
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_plap():
    try:
        import plap

        return plap
    except ImportError:
        pass
    built = ROOT / "target" / "release" / "libplap.so"
    if not built.exists():
        sys.exit(f"plap is not installed and {built} does not exist; build it first")
    tmp = pathlib.Path(tempfile.mkdtemp())
    shutil.copy(built, tmp / "plap.so")
    spec = importlib.util.spec_from_file_location("plap", tmp / "plap.so")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    plap = load_plap()

    grid = plap.Grid(1, 1, [9, 33], [(-1.0, 1.0), (-4.0, 4.0)])
    assert len(grid) == 9 * 33 and grid.n == 2 and grid.m == 1
    assert repr(grid).startswith("PLAPFIELD v1; n=2; m=1; sizes=9,33")

    cfg = plap.Config("[grid]\nsizes = 9, 33\nextents = -1:1, -4:4\n\n[growth]\nradii = 0.25, 0.5, 1\n")
    assert plap.Config(cfg.emit()).emit() == cfg.emit()

    u, report = plap.solve(cfg)
    assert report["converged"], report
    exact = cfg.exact()
    err = u.max_abs_diff(exact)
    assert err < 1e-2, err

    with tempfile.TemporaryDirectory() as d:
        path = pathlib.Path(d) / "u.dump"
        u.save(str(path))
        back = plap.Field.load(str(path))
        assert back.values() == u.values()
        u.save_csv(str(pathlib.Path(d) / "u.csv"))

        code, rows = plap.run_pipeline(cfg, str(pathlib.Path(d) / "run"))
        assert code == 0, rows

    stab = plap.stability(u, cfg)
    assert stab["stable"] and stab["min_rayleigh"] > 0, stab

    geo = plap.geometry(u, cfg)
    assert geo["identity_defect"] < 5e-2
    assert all(math.isnan(v) or abs(v) < 1e-6 for v in geo["S"].values())

    reports = plap.verify_poincare(u, cfg, "random:3")
    assert len(reports) == 3 and all(r["holds"] for r in reports)

    growth = plap.energy_growth(u, cfg, [0.25, 0.5, 1.0])
    assert growth["fitted_slope"] is not None

    try:
        plap.Config("[model]\np = const(1.5)\n").exact()
    except ValueError:
        pass
    else:
        raise AssertionError("p < 2 must be rejected")

    field = plap.Field(grid, [float(i) for i in range(len(grid))])
    assert field.values()[5] == 5.0
    print("python smoke test: ok")


if __name__ == "__main__":
    main()
