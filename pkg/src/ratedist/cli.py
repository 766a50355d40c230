"""Command-line driver.

Every subcommand reads its parameters from flags and/or a JSON ``--config``
file (flags win) and writes CSV or JSON to ``--out`` (stdout by default).

Exit codes: 0 ok, 2 usage/parse, 3 domain/infeasible, 4 convergence.  On
failure stderr gets one line of JSON: ``{"code", "message", "context"}``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import game as game_mod
from .errors import ConvergenceError, RateDistError
from .gaussian import (
    GaussianSource,
    JointGaussian,
    conditional_covariance,
    reverse_waterfill,
    wyner_ziv_rate,
)
from .lattice import DitheredQuantizer, Lattice, nearest_point, sample_dither
from .prob import Distribution, JointDistribution, NATS_PER_BIT, entropy, mutual_information
from .rd_solver import DistortionMatrix, trace_curve
from .wz import DEFAULT_SEED, WZConfig, pipeline_trace_csv, run_pipeline

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_CONVERGENCE = 0, 2, 3, 4


class UsageError(Exception):
    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _read_json(path) -> object:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"file not found: {path}", path=str(path))
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed JSON in {path}: {exc.msg}", path=str(path),
                         line=exc.lineno) from None


def _load_config(args, allowed: set[str]) -> tuple[dict, Path]:
    """Config keys from ``--config`` merged under explicit flags."""
    cfg, base = {}, Path.cwd()
    if args.config:
        raw = _read_json(args.config)
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(raw) - allowed
        if unknown:
            raise UsageError("unknown config keys", keys=sorted(unknown))
        cfg.update(raw)
        base = Path(args.config).resolve().parent
    for key in allowed:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg, base


def _resolve(path, base: Path) -> Path:
    p = Path(path)
    if p.is_absolute() or p.exists():
        return p
    return base / p


def _require(cfg: dict, key: str):
    if key not in cfg or cfg[key] is None:
        raise UsageError(f"missing required parameter '{key}'")
    return cfg[key]


def _read_matrix(path: Path) -> np.ndarray:
    if not path.is_file():
        raise UsageError(f"file not found: {path}", path=str(path))
    if path.suffix.lower() == ".json":
        obj = _read_json(path)
        if isinstance(obj, dict):
            obj = obj.get("covariance")
        return np.atleast_2d(np.asarray(obj, dtype=float))
    try:
        return np.atleast_2d(np.loadtxt(path, delimiter=",", comments="#", ndmin=2))
    except ValueError as exc:
        raise UsageError(f"cannot parse matrix CSV {path}: {exc}") from None


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


# -- subcommands -------------------------------------------------------------

RD_KEYS = {"source", "distortion", "betas", "tol", "max_iter", "warm_start", "gap_tol"}


def cmd_rd_curve(args) -> int:
    cfg, base = _load_config(args, RD_KEYS)
    source = Distribution.from_dict(_read_json(_resolve(_require(cfg, "source"), base)))
    dm = DistortionMatrix.from_dict(_read_json(_resolve(_require(cfg, "distortion"), base)))
    betas = cfg.get("betas") or []
    if not betas:
        raise UsageError("beta list is empty")
    curve = trace_curve(
        source, dm, betas,
        tol=float(cfg.get("tol", 1e-12)),
        max_iter=int(cfg.get("max_iter", 100000)),
        warm_start=bool(cfg.get("warm_start", True)),
        workers=args.threads,
        gap_tol=None if cfg.get("gap_tol") is None else float(cfg["gap_tol"]),
    )
    _emit(args, curve.to_csv() if args.format == "csv" else _dumps(curve.to_dict()))
    return EXIT_OK


WF_KEYS = {"covariance", "eigenvalues", "D"}


def _summary(result) -> str:
    lines = ["D_i R_i"]
    lines += [f"{d:.12g} {r:.12g}" for d, r in zip(result.distortions, result.rates)]
    lines.append(f"total_distortion={result.total_distortion:.12g} total_rate_bits={result.total_rate:.12g}")
    return "\n".join(lines) + "\n"


def _emit_waterfill(args, result) -> None:
    text = result.to_csv() if args.format == "csv" else _dumps(result.to_dict())
    _emit(args, text)
    if args.out:
        sys.stdout.write(_summary(result))


def cmd_waterfill(args) -> int:
    cfg, base = _load_config(args, WF_KEYS)
    if cfg.get("eigenvalues") is not None:
        src = GaussianSource.from_eigenvalues(cfg["eigenvalues"])
    else:
        src = GaussianSource(_read_matrix(_resolve(_require(cfg, "covariance"), base)))
    _emit_waterfill(args, reverse_waterfill(src, float(_require(cfg, "D"))))
    return EXIT_OK


WZB_KEYS = {"joint", "n_x", "D"}


def cmd_wz_bound(args) -> int:
    cfg, base = _load_config(args, WZB_KEYS)
    path = _resolve(_require(cfg, "joint"), base)
    n_x = cfg.get("n_x")
    if path.suffix.lower() == ".json":
        obj = _read_json(path)
        if isinstance(obj, dict):
            extra = set(obj) - {"covariance", "n_x"}
            if extra:
                raise UsageError("unknown joint keys", keys=sorted(extra))
            n_x = n_x if n_x is not None else obj.get("n_x")
    cov = _read_matrix(path)
    if n_x is None:
        raise UsageError("missing required parameter 'n_x'")
    cond = conditional_covariance(JointGaussian(cov, int(n_x)))
    _emit_waterfill(args, wyner_ziv_rate(cond, float(_require(cfg, "D"))))
    return EXIT_OK


WZS_KEYS = {"sigma2", "noise_var", "lattice", "fine_scale", "nesting_ratio", "samples",
            "mmse", "fixed_dither", "trace"}


def cmd_wz_sim(args) -> int:
    cfg, base = _load_config(args, WZS_KEYS)
    trace = cfg.pop("trace", None)
    _require(cfg, "sigma2")
    _require(cfg, "noise_var")
    wz = WZConfig.from_dict({**cfg, "seed": args.seed})
    report = run_pipeline(wz, workers=args.threads)
    if trace:
        Path(trace).write_text(pipeline_trace_csv(wz, workers=args.threads))
    if args.format == "csv":
        d = report.to_dict()
        text = ",".join(d) + "\n" + ",".join(repr(v) for v in d.values()) + "\n"
    else:
        text = _dumps(report.to_dict())
    _emit(args, text)
    return EXIT_OK


GAME_KEYS = {"lambdas", "budget", "quality", "mu"}


def cmd_game(args) -> int:
    cfg, _ = _load_config(args, GAME_KEYS)
    g = game_mod.AllocationGame.from_dict(cfg)
    alloc = game_mod.nash_solve(g)
    kkt = game_mod.kkt_verify(alloc, g)
    out = {"allocation": alloc.to_dict(), "kkt_residuals": kkt.to_dict(),
           "deviation_gain": game_mod.deviation_gain(alloc, g)}
    matches = None
    if g.mu is None and g.budget_type == "distortion":
        wf = reverse_waterfill(GaussianSource.from_eigenvalues(g.lambdas), g.budget)
        # water-filling reports modes sorted descending; compare per player
        order = np.argsort(-g.lambdas, kind="stable")
        matches = bool(np.allclose(wf.rates, alloc.R[order], rtol=0, atol=1e-8)
                       and math.isclose(wf.theta, alloc.theta, rel_tol=1e-8))
    elif g.mu is None and g.budget_type == "rate" and isinstance(g.quality, game_mod.GaussianQuality):
        D = float(alloc.D.sum())
        wf = reverse_waterfill(GaussianSource.from_eigenvalues(g.lambdas), D)
        order = np.argsort(-g.lambdas, kind="stable")
        matches = bool(np.allclose(wf.rates, alloc.R[order], rtol=0, atol=1e-8))
    out["matches_waterfill"] = matches
    _emit(args, _dumps(out))
    return EXIT_OK


PROBE_KEYS = {"lattice", "scale", "points", "dither_samples"}


def cmd_lattice_probe(args) -> int:
    cfg, base = _load_config(args, PROBE_KEYS)
    lat = Lattice.by_name(str(cfg.get("lattice", "Z1")), float(cfg.get("scale", 1.0)))
    if cfg.get("points"):
        pts = _read_matrix(_resolve(cfg["points"], base))
        if pts.shape[1] != lat.dim and pts.shape[0] == lat.dim and pts.shape[1] == 1:
            pts = pts.T
        near = nearest_point(lat, pts)
        err = pts - near
        if args.format == "json":
            text = _dumps({"nearest": near.tolist(), "error": err.tolist()})
        else:
            n = lat.dim
            head = [f"x{i}" for i in range(n)] + [f"q{i}" for i in range(n)] + [f"e{i}" for i in range(n)]
            rows = [",".join(head)]
            for a, b, c in zip(pts, near, err):
                rows.append(",".join(repr(float(v)) for v in (*a, *b, *c)))
            text = "\n".join(rows) + "\n"
        _emit(args, text)
        return EXIT_OK

    count = int(cfg.get("dither_samples", 10000))
    if count < 1:
        raise UsageError("dither_samples must be positive")
    q = DitheredQuantizer(lat, args.seed)
    d = sample_dither(q, count)
    diag = {
        "lattice": lat.name,
        "scale": lat.scale,
        "samples": count,
        "seed": args.seed,
        "mean": d.mean(axis=0).tolist(),
        "second_moment_per_dim": float((d ** 2).sum(axis=1).mean() / lat.dim),
        "second_moment_theory": lat.second_moment(),
        "normalized_second_moment": lat.second_moment() / lat.cell_volume ** (2.0 / lat.dim),
        "outside_cell": int(np.any(nearest_point(lat, d) != 0, axis=1).sum()),
    }
    if args.format == "csv":
        text = ",".join(diag) + "\n" + ",".join(
            json.dumps(v).replace(",", ";") for v in diag.values()) + "\n"
    else:
        text = _dumps(diag)
    _emit(args, text)
    return EXIT_OK


ENT_KEYS = {"dist"}


def cmd_entropy(args) -> int:
    cfg, base = _load_config(args, ENT_KEYS)
    obj = _read_json(_resolve(_require(cfg, "dist"), base))
    if isinstance(obj, dict) and "rows" in obj:
        j = JointDistribution.from_dict(obj)
        h_joint = entropy(j.flattened())
        out = {"H_rows_bits": entropy(j.row_marginal()),
               "H_cols_bits": entropy(j.col_marginal()),
               "H_joint_bits": h_joint,
               "mutual_information_bits": mutual_information(j)}
    else:
        h = entropy(Distribution.from_dict(obj))
        out = {"entropy_bits": h, "entropy_nats": h * NATS_PER_BIT}
    if args.format == "csv":
        text = ",".join(out) + "\n" + ",".join(repr(v) for v in out.values()) + "\n"
    else:
        text = _dumps(out)
    _emit(args, text)
    return EXIT_OK


# -- fixtures ----------------------------------------------------------------

def write_fixtures(directory) -> list[Path]:
    """Write the reference inputs used by the reproduction recipes."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {
        "binary_source.json": Distribution.uniform([0, 1]).to_dict(),
        "hamming_distortion.json": DistortionMatrix.hamming([0, 1]).to_dict(),
        "rd_config.json": {"source": "binary_source.json",
                           "distortion": "hamming_distortion.json",
                           "betas": [0.5, 1.0, 2.0, 4.0, 8.0],
                           "tol": 1e-12, "max_iter": 100000},
        "spectrum_4_1.json": {"covariance": [[4.0, 0.0], [0.0, 1.0]]},
        "waterfill_config.json": {"covariance": "spectrum_4_1.json", "D": 2.0},
        "joint_rho08.json": {"covariance": [[1.0, 0.8], [0.8, 1.0]], "n_x": 1},
        "wz_bound_config.json": {"joint": "joint_rho08.json", "D": 0.09},
        "wz_sim_config.json": {"sigma2": 1.0, "noise_var": 0.01, "lattice": "E8",
                               "fine_scale": 0.085, "nesting_ratio": 8,
                               "samples": 100000, "mmse": True},
        "game_4_1.json": {"lambdas": [4.0, 1.0], "budget": {"type": "distortion", "value": 2.0}},
    }
    written = []
    for name, obj in files.items():
        p = d / name
        p.write_text(_dumps(obj))
        written.append(p)
    (d / "spectrum_4_1.csv").write_text("4,0\n0,1\n")
    written.append(d / "spectrum_4_1.csv")
    return written


# -- entry point -------------------------------------------------------------

def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def _add_globals(p, suppress: bool) -> None:
    dflt = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=_seed, default=dflt(DEFAULT_SEED),
                   help="64-bit seed (default 0xC0DEC0DE)")
    p.add_argument("--format", choices=("csv", "json"), default=dflt("json"))
    p.add_argument("--out", default=dflt(None), help="output file (default stdout)")
    p.add_argument("--threads", type=int, default=dflt(1),
                   help="worker threads; never changes results")
    p.add_argument("--config", default=dflt(None), help="JSON config file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ratedist", description=__doc__.splitlines()[0])
    _add_globals(parser, suppress=False)
    parser.add_argument("--fixtures", metavar="DIR", help="write reference fixtures to DIR and exit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        _add_globals(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("rd-curve", cmd_rd_curve, "discrete R(D) frontier")
    p.add_argument("--source")
    p.add_argument("--distortion")
    p.add_argument("--betas", type=float, nargs="*")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--cold-start", dest="warm_start", action="store_const", const=False)
    p.add_argument("--gap-tol", dest="gap_tol", type=float,
                   help="also stop only once the certified Lagrangian gap (nats) is below this")

    p = add("waterfill", cmd_waterfill, "reverse water-filling over eigenmodes")
    p.add_argument("--covariance")
    p.add_argument("--eigenvalues", type=float, nargs="+")
    p.add_argument("-D", "--distortion", dest="D", type=float)

    p = add("wz-bound", cmd_wz_bound, "Gaussian Wyner-Ziv bound")
    p.add_argument("--joint")
    p.add_argument("--n-x", dest="n_x", type=int)
    p.add_argument("-D", "--distortion", dest="D", type=float)

    p = add("wz-sim", cmd_wz_sim, "nested-lattice Wyner-Ziv simulation")
    p.add_argument("--sigma2", type=float)
    p.add_argument("--noise-var", dest="noise_var", type=float)
    p.add_argument("--lattice")
    p.add_argument("--fine-scale", dest="fine_scale", type=float)
    p.add_argument("--nesting-ratio", dest="nesting_ratio", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--mmse", action="store_const", const=True)
    p.add_argument("--fixed-dither", dest="fixed_dither", action="store_const", const=True)
    p.add_argument("--trace", help="write per-sample CSV trace here")

    p = add("game", cmd_game, "Nash rate allocation with KKT check")
    p.add_argument("--lambdas", type=float, nargs="+")

    p = add("lattice-probe", cmd_lattice_probe, "nearest-point and dither diagnostics")
    p.add_argument("--lattice")
    p.add_argument("--scale", type=float)
    p.add_argument("--points", help="CSV of points, one per row")
    p.add_argument("--dither-samples", dest="dither_samples", type=int)

    p = add("entropy", cmd_entropy, "entropy / mutual information of a pmf file")
    p.add_argument("--dist")
    return parser


def _fail(code: int, message: str, context: dict) -> int:
    safe = json.loads(json.dumps(context, default=str))
    sys.stderr.write(json.dumps({"code": code, "message": message, "context": safe}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.fixtures:
            for p in write_fixtures(args.fixtures):
                sys.stdout.write(f"{p}\n")
            return EXIT_OK
        if not getattr(args, "command", None):
            raise UsageError("no subcommand given")
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, str(exc), exc.context)
    except ConvergenceError as exc:
        ctx = {k: v for k, v in exc.context.items() if k != "last_channel"}
        return _fail(EXIT_CONVERGENCE, str(exc), ctx)
    except RateDistError as exc:
        return _fail(EXIT_DOMAIN, str(exc), exc.context)
    except OSError as exc:
        return _fail(EXIT_USAGE, str(exc), {"path": getattr(exc, "filename", None)})


if __name__ == "__main__":
    sys.exit(main())
