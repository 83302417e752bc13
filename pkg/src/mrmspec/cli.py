"""Command line front end: ``mrmspec simulate | solve | compare``.

Parameters come, in increasing priority, from built-in defaults, a
``--preset``, a ``--config`` file (``key = value`` lines, ``#`` comments) and
explicit flags.  Each run writes ``manifest.cfg`` in the config format, so
``mrmspec <command> --config manifest.cfg`` repeats it.

Exit codes: 0 success, 2 usage error, 3 too few converged points, 4
numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .density import (
    DensityCurve,
    default_lambda_grid,
    eigenvalue_cdf,
    push_forward_square,
    solve_upsilon,
    tail_mass,
    x_grid_for,
)
from .export import (
    fmt,
    read_csv,
    write_csv,
    write_density,
    write_eigenvalues,
    write_histogram,
    write_json,
    write_returns,
)
from .mrm import IntermittencyWarning, ModelParams, sample_returns
from .solver import SolverConfig
from .spectra import covariance_spectrum, esd_histogram, ks_distance

log = logging.getLogger("mrmspec")

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL, EXIT_NUMERIC = 0, 2, 3, 4
CONVERGED_FRACTION = 0.95
TAIL_THRESHOLDS = (2.0, 4.0, 6.0, 8.0, 10.0)

# name -> (type, default); ``ensemble`` defaults differ per command
PARAMS = {
    "gamma2": (float, 0.0),
    "tau": (float, 0.25),
    "q": (float, 1.0),
    "n": (int, None),
    "grid": (int, 256),
    "mrm_grid": (int, 4096),
    "ensemble": (int, None),
    "tol": (float, 1e-6),
    "max_iter": (int, 500),
    "eps_im": (float, 0.01),
    "richardson": (bool, False),
    "anderson": (int, 3),
    "relaxation": (float, 1.0),
    "quadrature": (str, "cell_average"),
    "lambda_points": (int, 200),
    "lambda_min": (float, 1e-2),
    "lambda_max": (float, 20.0),
    "bins": (int, 100),
    "log_bins": (bool, False),
    "oversample": (int, 1),
    "save_returns": (bool, False),
    "seed": (int, 0),
    "threads": (int, 1),
    "out_dir": (str, "out"),
}
ENSEMBLE_DEFAULT = {"simulate": 8, "solve": 2000}

PRESETS = {
    "fig2a": {"gamma2": 0.25, "tau": 0.25, "q": 1.0, "n": 1024},
    "fig2b": {"gamma2": 0.5, "tau": 0.25, "q": 1.0, "n": 1024},
    "fig3": {"q": 1.0, "tau": 0.25, "n": 1024, "series": [
        {"gamma2": 0.0}, {"gamma2": 0.25}, {"gamma2": 0.5},
    ]},
    # tau = 0 is the Brownian case, represented by gamma2 = 0.
    "fig4": {"q": 1.0, "gamma2": 0.25, "n": 1024, "series": [
        {"gamma2": 0.0, "tau": 0.25}, {"tau": 0.25}, {"tau": 1.0}, {"tau": 2.0},
    ]},
}


class UsageError(Exception):
    pass


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def read_config(path) -> dict:
    """Parse ``key = value`` lines; dashes in keys are read as underscores."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key in ("command", "version", "preset"):
            out[key] = value
            continue
        if key not in PARAMS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def _convert(key, value):
    typ = PARAMS[key][0]
    if value in ("None", "none", ""):
        return None
    try:
        return _parse_bool(value) if typ is bool else typ(value)
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {value!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrmspec", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--config", help="key = value parameter file")
        p.add_argument("-v", "--verbose", action="store_true")
        for name, (typ, _) in PARAMS.items():
            flag = "--" + name.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, dest=name, type=_bool_arg, nargs="?", const=True, default=None)
            else:
                p.add_argument(flag, dest=name, type=typ, default=None)

    common(sub.add_parser("simulate", help="simulate MRW covariance spectra"))
    common(sub.add_parser("solve", help="solve the limiting density"))
    cmp_ = sub.add_parser("compare", help="compare two output directories")
    cmp_.add_argument("first", help="simulate or solve output directory")
    cmp_.add_argument("second", help="solve (or simulate) output directory")
    cmp_.add_argument("--window", nargs=2, type=float, metavar=("LO", "HI"))
    cmp_.add_argument("--out-dir", dest="out_dir")
    cmp_.add_argument("-v", "--verbose", action="store_true")
    return parser


def _bool_arg(text):
    try:
        return _parse_bool(text)
    except UsageError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def resolve_params(args: argparse.Namespace) -> tuple[dict, list]:
    """Merge defaults, preset, config and flags.  Returns ``(params, series)``."""
    params = {k: d for k, (_, d) in PARAMS.items()}
    params["ensemble"] = ENSEMBLE_DEFAULT[args.command]
    series = []
    preset = args.preset
    cfg = read_config(args.config) if args.config else {}
    if cfg.get("command") and cfg["command"] != args.command:
        raise UsageError(f"config was written for '{cfg['command']}', not '{args.command}'")
    preset = preset or cfg.get("preset")
    if preset and preset != "None":
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}")
        spec = dict(PRESETS[preset])
        series = spec.pop("series", [])
        params.update(spec)
    params.update({k: v for k, v in cfg.items() if k in PARAMS})
    params.update({k: getattr(args, k) for k in PARAMS if getattr(args, k, None) is not None})
    params["preset"] = preset
    return params, series


def _validate(params: dict, command: str):
    if command == "simulate" and params["n"] is None:
        raise UsageError("--n is required")
    checks = [
        (params["tol"] > 0, "tol must be > 0"),
        (params["max_iter"] >= 1, "max-iter must be >= 1"),
        (params["eps_im"] > 0, "eps-im must be > 0"),
        (params["ensemble"] >= 1, "ensemble must be >= 1"),
        (params["threads"] >= 1, "threads must be >= 1"),
        (params["grid"] >= 2, "grid must be >= 2"),
        (params["mrm_grid"] % params["grid"] == 0, "mrm-grid must be a multiple of grid"),
        (0 <= params["gamma2"] < 2, "gamma2 must lie in [0, 2)"),
        (params["tau"] > 0, "tau must be > 0"),
        (0 < params["q"] <= 1, "q must lie in (0, 1]"),
        (params["n"] is None or params["n"] >= 1, "n must be >= 1"),
        (params["lambda_min"] > 0 and params["lambda_max"] > params["lambda_min"], "bad lambda range"),
        (params["bins"] >= 1 and params["oversample"] >= 1, "bins and oversample must be >= 1"),
        (params["quadrature"] in ("capped", "cell_average"), "quadrature is capped or cell_average"),
        (0 < params["relaxation"] <= 1, "relaxation must lie in (0, 1]"),
        (params["anderson"] >= 0, "anderson must be >= 0"),
    ]
    for ok, msg in checks:
        if not ok:
            raise UsageError(msg)


def _model(params) -> ModelParams:
    n = params["n"] if params["n"] is not None else 1024
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntermittencyWarning)
        return ModelParams(params["gamma2"], params["tau"], params["q"], n)


def write_manifest(out: Path, command: str, params: dict, extra: dict | None = None) -> Path:
    lines = [f"# mrmspec {__version__}", f"command = {command}"]
    for k in ["preset", *PARAMS]:
        if k == "out_dir":
            continue
        lines.append(f"{k} = {fmt(params.get(k))}")
    for k, v in (extra or {}).items():
        lines.append(f"# {k} = {fmt(v)}")
    path = out / "manifest.cfg"
    path.write_text("\n".join(lines) + "\n")
    return path


def _meta(command, params) -> dict:
    keys = ["gamma2", "tau", "q", "n", "seed"]
    if command == "simulate":
        keys += ["ensemble", "oversample", "bins", "log_bins"]
    else:
        keys += ["grid", "mrm_grid", "ensemble", "tol", "max_iter", "eps_im", "richardson",
                 "anderson", "relaxation", "quadrature"]
    return {"generator": f"mrmspec {__version__} {command}", **{k: params[k] for k in keys}}


def run_simulate(params: dict, out: Path) -> int:
    model = _model(params)
    seed, count = params["seed"], params["ensemble"]

    def one(k):
        x = sample_returns(model, (seed, k), oversample=params["oversample"])
        return x, covariance_spectrum(x).eigenvalues

    with threadpool_limits(limits=1):
        if params["threads"] > 1:
            with ThreadPoolExecutor(params["threads"]) as pool:
                results = list(pool.map(one, range(count)))
        else:
            results = [one(k) for k in range(count)]
    spectra = [lam for _, lam in results]
    meta = _meta("simulate", params)
    out.mkdir(parents=True, exist_ok=True)
    write_eigenvalues(out / "eigenvalues.csv", spectra, meta)
    hist = esd_histogram(np.concatenate(spectra), bins=params["bins"], log=params["log_bins"])
    write_histogram(out / "histogram.csv", hist, meta)
    if params["save_returns"]:
        for k, (x, _) in enumerate(results):
            write_returns(out / f"returns_{k}.csv", x.entries, {**meta, "sample_id": k})
    pooled = np.concatenate(spectra)
    write_manifest(out, "simulate", params, {"eigenvalues": pooled.size, "mean_eigenvalue": float(pooled.mean())})
    log.info("wrote %d eigenvalues to %s", pooled.size, out)
    return EXIT_OK


def run_solve(params: dict, out: Path) -> int:
    model = _model(params)
    if model.gamma2 >= 1 / 3:
        log.warning("gamma2 = %g >= 1/3: the limiting system is only conjectured here", model.gamma2)
    config = SolverConfig(
        k_points=params["grid"], ensemble_size=params["ensemble"], tol=params["tol"],
        max_iter=params["max_iter"], master_seed=params["seed"], mrm_points=params["mrm_grid"],
        relaxation=params["relaxation"], anderson=params["anderson"], quadrature=params["quadrature"],
    )
    lambdas = default_lambda_grid(params["lambda_points"], params["lambda_min"], params["lambda_max"])
    x = x_grid_for(lambdas)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntermittencyWarning)
        ups = solve_upsilon(model, x, config, eps_im=params["eps_im"], richardson=params["richardson"],
                            threads=params["threads"])
    dens = push_forward_square(ups)
    meta = _meta("solve", params)
    out.mkdir(parents=True, exist_ok=True)
    write_density(out / "upsilon.csv", ups, "x", meta)
    write_density(out / "density.csv", dens, "lambda", meta)
    converged = sum(1 for d in ups.diagnostics if d.get("converged"))
    frac = converged / max(len(ups.diagnostics), 1)
    summary = {
        "points": len(ups.diagnostics),
        "converged": converged,
        "converged_fraction": frac,
        "clamped_mass": ups.clamped,
        "upsilon_mass": 2 * ups.mass(),
        "tail_mass_beyond_4": tail_mass(ups, 4.0),
    }
    write_json(out / "diagnostics.json", {"summary": summary, "points": ups.diagnostics})
    write_manifest(out, "solve", params, summary)
    if not np.all(np.isfinite(ups.values[ups.valid])):
        return EXIT_NUMERIC
    if frac < CONVERGED_FRACTION:
        log.error("only %d of %d points converged", converged, len(ups.diagnostics))
        return EXIT_PARTIAL
    return EXIT_OK


# ---- compare -------------------------------------------------------------

def _load_dir(path: Path) -> dict:
    d = {"path": str(path)}
    if (path / "eigenvalues.csv").exists():
        _, cols = read_csv(path / "eigenvalues.csv")
        d["eigenvalues"] = cols["eigenvalue"]
    if (path / "upsilon.csv").exists():
        _, cols = read_csv(path / "upsilon.csv")
        ups = DensityCurve(cols["x"], cols["density"], eps_im=np.nan)
        d["upsilon"] = ups
        d["density"] = push_forward_square(ups)
    if len(d) == 1:
        raise UsageError(f"{path} has neither eigenvalues.csv nor upsilon.csv")
    return d


def _l1_hist_vs_density(lam, edges, dens: DensityCurve, window) -> float:
    counts, _ = np.histogram(lam, bins=edges)
    p = counts / lam.size
    inside = (edges[:-1] >= window[0]) & (edges[1:] <= window[1])
    if not inside.any():
        raise UsageError("no histogram bin lies inside the shared window")
    lo, hi = edges[:-1][inside], edges[1:][inside]
    widths = hi - lo
    # Exact bin masses of the theoretical density, by fine trapezoid per bin.
    fine = np.linspace(0, 1, 17)
    pts = lo[:, None] + widths[:, None] * fine[None, :]
    ok = dens.valid
    f = np.interp(np.log(pts), np.log(dens.x_points[ok]), dens.values[ok], left=0.0, right=0.0)
    theory = np.trapezoid(f, pts, axis=1)
    return float(np.sum(np.abs(p[inside] - theory)))


def _l1_density_vs_density(a: DensityCurve, b: DensityCurve, window) -> float:
    grid = np.geomspace(window[0], window[1], 2000)
    fa, fb = (np.interp(np.log(grid), np.log(c.x_points[c.valid]), c.values[c.valid]) for c in (a, b))
    return float(np.trapezoid(np.abs(fa - fb), grid))


def compare(first: Path, second: Path, window=None) -> dict:
    a, b = _load_dir(first), _load_dir(second)
    if "eigenvalues" in b and "upsilon" not in b and "upsilon" in a:
        a, b = b, a
    theory = b.get("density")
    report = {"first": a["path"], "second": b["path"]}
    ranges = []
    if "eigenvalues" in a:
        lam = a["eigenvalues"]
        ranges.append((float(max(lam.min(), 1e-12)), float(lam.max())))
    for d in (a, b):
        if "density" in d:
            lamg = d["density"].x_points
            ranges.append((float(lamg.min()), float(lamg.max())))
    lo = max(r[0] for r in ranges)
    hi = min(r[1] for r in ranges)
    if window is not None:
        lo, hi = max(lo, window[0]), min(hi, window[1])
    if not hi > lo:
        raise UsageError(f"windows do not overlap (shared window [{lo}, {hi}])")
    report["window"] = [lo, hi]
    rows = []
    if "eigenvalues" in a and theory is not None:
        lam = a["eigenvalues"]
        cdf = eigenvalue_cdf(b["upsilon"])
        report["ks"] = ks_distance(lam, cdf, (lo, hi))
        edges = np.linspace(0.0, float(lam.max()), 101)
        report["l1"] = _l1_hist_vs_density(lam, edges, theory, (lo, hi))
        for t in TAIL_THRESHOLDS:
            rows.append({"threshold": t, "first": float(np.mean(lam > t)), "second": tail_mass(b["upsilon"], t)})
    elif theory is not None and "density" in a:
        ca, cb = eigenvalue_cdf(a["upsilon"]), eigenvalue_cdf(b["upsilon"])
        grid = np.geomspace(lo, hi, 2000)
        report["ks"] = float(np.max(np.abs(ca(grid) - cb(grid))))
        report["l1"] = _l1_density_vs_density(a["density"], theory, (lo, hi))
        for t in TAIL_THRESHOLDS:
            rows.append({"threshold": t, "first": tail_mass(a["upsilon"], t), "second": tail_mass(b["upsilon"], t)})
    else:
        raise UsageError("need at least one solve directory to compare against")
    report["tail_mass"] = rows
    return report


def format_report(report: dict) -> str:
    lines = [
        f"first:  {report['first']}",
        f"second: {report['second']}",
        f"window: [{report['window'][0]:.4g}, {report['window'][1]:.4g}]",
        f"KS distance: {report['ks']:.5f}",
        f"L1 distance: {report['l1']:.5f}",
        "tail mass   first      second",
    ]
    for r in report["tail_mass"]:
        lines.append(f"  > {r['threshold']:<6g} {r['first']:<10.5f} {r['second']:.5f}")
    return "\n".join(lines)


def run_compare(args) -> int:
    window = tuple(args.window) if args.window else None
    report = compare(Path(args.first), Path(args.second), window)
    text = format_report(report)
    print(text)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "compare.json", report)
        (out / "compare.txt").write_text(text + "\n")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "compare":
            return run_compare(args)
        params, series = resolve_params(args)
        _validate(params, args.command)
        runner = run_simulate if args.command == "simulate" else run_solve
        out = Path(params["out_dir"])
        if not series:
            return runner(params, out)
        codes = []
        for member in series:
            # Members are self-contained so their manifests do not re-expand the preset.
            p = {**params, **member, "preset": None}
            _validate(p, args.command)
            label = "_".join(f"{k}={fmt(p[k])}" for k in ("gamma2", "tau"))
            codes.append(runner(p, out / label))
        return max(codes)
    except UsageError as exc:
        parser.error(str(exc))
    except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"mrmspec: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
