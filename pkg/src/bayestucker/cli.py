"""Command-line interface.

Every subcommand takes settings from an optional ``--config`` file of
``key = value`` lines (``#`` starts a comment) and from flags named after the
keys (``burn_in`` <-> ``--burn-in``); flags win. Outputs go to
``output_dir`` together with ``manifest.json``. On failure the exit code is
nonzero and stderr carries one JSON line ``{"error": ..., "message": ...}``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
import time
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .als import hooi_impute
from .diagnostics import (
    ESS_MONITOR_THRESHOLD,
    center_all_modes,
    ess_report,
    mode_singular_vectors,
    normalized_eigenspectrum,
)
from .experiments import (
    DESK_DIMS,
    FULL_DIMS,
    ESTIMATORS,
    equivariance_check,
    ordinal_benchmark,
    simulate,
    standard_conditions,
    summarize_rse,
    write_curves_csv,
    write_replicates_csv,
    write_rows_csv,
    write_table_csv,
    zero_eigenvalue_error,
)
from .longcsv import export_long_csv, format_value, ingest_long_csv, write_matrix_csv
from .normal_tdm import ChainConfig, McmcSamples, PriorSpec, run_chain
from .sftd import kendall_tau, run_sftd_chain
from .tensor_core import hosvd

REQUIRED = object()


class ConfigError(ValueError):
    pass


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in str(text).replace("x", ",").split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ConfigError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


def _bool(text: str) -> bool:
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _optional_float(text: str):
    return None if str(text).lower() in ("", "none", "default") else float(text)


_CHAIN_KEYS = {
    "nu0": (float, 1.0),
    "tau0_sq": (_optional_float, None),
    "sigma_prior": (_choice("improper_reciprocal", "proper_gamma"), "improper_reciprocal"),
    "mh_concentration": (_optional_float, None),
    "vmf_sweeps": (int, 5),
    "seed": (int, 0),
}

KEYS: dict[str, dict[str, tuple]] = {
    "decompose": {
        "input": (str, REQUIRED), "dims": (_ints, None), "ranks": (_ints, REQUIRED),
        "method": (_choice("hosvd", "hooi"), "hooi"), "max_iter": (int, 200), "tol": (float, 1e-9),
        "output_dir": (str, REQUIRED),
    },
    "fit-normal": {
        "input": (str, REQUIRED), "dims": (_ints, None), "ranks": (_ints, REQUIRED),
        "model": (_choice("HOM", "HET"), "HOM"), "iterations": (int, 11_000), "burn_in": (int, 1_000),
        "thin": (int, 10), "output_dir": (str, REQUIRED), **_CHAIN_KEYS,
    },
    "fit-sftd": {
        "input": (str, REQUIRED), "dims": (_ints, None), "ranks": (_ints, REQUIRED),
        "model": (_choice("HOM", "HET"), "HET"), "iterations": (int, 55_000), "burn_in": (int, 5_000),
        "thin": (int, 10), "variable_mode": (int, None), "output_dir": (str, REQUIRED), **_CHAIN_KEYS,
    },
    "simulate": {
        "experiment": (_choice("table1", "table2", "eigcurves", "equivariance", "ordinal"), REQUIRED),
        "scale": (_choice("desk", "full"), "desk"), "replicates": (int, None),
        "iterations": (int, None), "burn_in": (int, None), "thin": (int, None),
        "seed": (int, 2014), "workers": (int, 1), "output_dir": (str, REQUIRED),
        "dims": (_ints, None), "ranks": (_ints, None), "a": (float, 3.0), "chains": (int, 4),
        "skew_profile": (_choice("heavy", "none"), "heavy"), "vmf_sweeps": (int, 5),
    },
    "summarize": {
        "run_dir": (str, REQUIRED), "threshold": (float, float(ESS_MONITOR_THRESHOLD)),
    },
}

HELP = {
    "decompose": "least-squares Tucker decomposition (HOSVD or HOOI)",
    "fit-normal": "Gibbs sampler for the normal Tucker model (HOM or HET core prior)",
    "fit-sftd": "scale-free Tucker decomposition with the rank likelihood",
    "simulate": "simulation experiments: table1, table2, eigcurves, equivariance, ordinal",
    "summarize": "effective sample sizes for the traces of a finished run",
}


def read_config_file(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key] = value
    return out


def resolve_settings(command: str, file_values: dict[str, str], flag_values: dict[str, str]) -> dict:
    """Merge defaults, config file and flags; report unknown and missing keys together."""
    spec = KEYS[command]
    unknown = sorted(set(file_values) - set(spec))
    if unknown:
        raise ConfigError(f"unknown keys for {command}: {', '.join(unknown)}")
    raw = {**file_values, **{k: v for k, v in flag_values.items() if v is not None}}
    settings, missing = {}, []
    for key, (parse, default) in spec.items():
        if key in raw:
            try:
                settings[key] = parse(raw[key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{key}: {exc}") from None
        elif default is REQUIRED:
            missing.append(key)
        else:
            settings[key] = default
    if missing:
        raise ConfigError(f"missing required keys for {command}: {', '.join(missing)}")
    return settings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bayestucker", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, spec in KEYS.items():
        p = sub.add_parser(command, help=HELP[command])
        p.add_argument("--config", help="file of key = value settings")
        for key, (_, default) in spec.items():
            note = "required" if default is REQUIRED else ("optional" if default is None else f"default: {default}")
            if command == "simulate" and key == "experiment":
                p.add_argument("experiment", nargs="?", default=None, help=note)
            else:
                p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, help=note)
    return parser


def _versions() -> dict:
    import numba
    import scipy
    return {"bayestucker": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out: Path, command: str, settings: dict, started: float, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in settings.items()},
        "seed": settings.get("seed"),
        "versions": _versions(),
        "wall_time_s": round(time.time() - started, 3),
        "outputs": outputs,
    }
    if "input" in settings:
        manifest["input_sha256"] = _sha256(settings["input"])
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def write_traces_csv(path, samples: McmcSamples) -> None:
    traces = samples.scalar_traces()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration"] + list(traces))
        for i, it in enumerate(samples.iterations):
            w.writerow([int(it)] + [format_value(t[i]) for t in traces.values()])


def read_traces_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = np.array(body, dtype=float).reshape(len(body), len(header))
    return {name: cols[:, j] for j, name in enumerate(header) if name != "iteration"}


def write_spectra(out: Path, M: np.ndarray, n_vectors: int = 2) -> list[str]:
    """Eigenspectra of every unfolding and leading singular vectors of the centred array."""
    with open(out / "eigenspectra.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "index", "eigenvalue"])
        for k in range(M.ndim):
            for i, v in enumerate(normalized_eigenspectrum(M, k)):
                w.writerow([k + 1, i + 1, format_value(v)])
    centred = center_all_modes(M)
    with open(out / "singular_vectors.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "index"] + [f"vector{j + 1}" for j in range(n_vectors)])
        for k in range(M.ndim):
            count = min(n_vectors, M.shape[k])
            if not np.any(centred):
                continue
            V = mode_singular_vectors(centred, k, count)
            for i, row in enumerate(V):
                w.writerow([k + 1, i + 1] + [format_value(v) for v in row] + [""] * (n_vectors - count))
    return ["eigenspectra.csv", "singular_vectors.csv"]


def _prior(settings: dict) -> PriorSpec:
    return PriorSpec(family={"HOM": "homoscedastic", "HET": "heteroscedastic"}[settings["model"]],
                     nu0=settings["nu0"], tau0_sq=settings["tau0_sq"], sigma_prior=settings["sigma_prior"],
                     mh_concentration=settings["mh_concentration"])


def _chain_config(settings: dict) -> ChainConfig:
    return ChainConfig(settings["iterations"], settings["burn_in"], settings["thin"], settings["seed"],
                       settings["vmf_sweeps"])


def cmd_decompose(settings: dict, out: Path) -> list[str]:
    Y = ingest_long_csv(settings["input"], settings["dims"])
    if settings["method"] == "hosvd":
        if not Y.fully_observed:
            raise ValueError("hosvd needs a fully observed array; use method = hooi")
        model = hosvd(Y.values, settings["ranks"])
        fitted = model.full()
    else:
        res = hooi_impute(Y, settings["ranks"], settings["max_iter"], settings["tol"])
        model, fitted = res.model, res.fitted
    export_long_csv(out / "fitted.csv", fitted)
    export_long_csv(out / "core.csv", model.core)
    outputs = ["fitted.csv", "core.csv"]
    for k, U in enumerate(model.factors):
        write_matrix_csv(out / f"factor_{k + 1}.csv", U, "index", "component")
        outputs.append(f"factor_{k + 1}.csv")
    return outputs + write_spectra(out, fitted)


def cmd_fit_normal(settings: dict, out: Path) -> list[str]:
    Y = ingest_long_csv(settings["input"], settings["dims"])
    if not Y.fully_observed:
        raise ValueError("fit-normal needs a fully observed array (missing cells found)")
    samples = run_chain(Y, settings["ranks"], _prior(settings), _chain_config(settings))
    export_long_csv(out / "posterior_mean.csv", samples.mean_M)
    write_traces_csv(out / "traces.csv", samples)
    return ["posterior_mean.csv", "traces.csv"] + write_spectra(out, samples.mean_M)


def cmd_fit_sftd(settings: dict, out: Path) -> list[str]:
    Y = ingest_long_csv(settings["input"], settings["dims"])
    K = Y.order
    vm = settings["variable_mode"] or K
    if not 1 <= vm <= K:
        raise ConfigError(f"variable_mode must be in 1..{K}")
    samples = run_sftd_chain(Y, settings["ranks"], _prior(settings),
                             _chain_config(settings), variable_mode=vm - 1)
    M = samples.mean_M
    export_long_csv(out / "posterior_mean.csv", M)
    write_traces_csv(out / "traces.csv", samples)
    als = hooi_impute(Y, settings["ranks"]).fitted
    rows = []
    for j in range(Y.dims[vm - 1]):
        obs = np.take(Y.observed, j, axis=vm - 1)
        y = np.take(Y.values, j, axis=vm - 1)[obs]
        if np.unique(y).size < 2:
            rows.append({"variable": j + 1, "tau_sftd": "NA", "tau_als": "NA"})
            continue
        rows.append({"variable": j + 1,
                     "tau_sftd": format_value(kendall_tau(np.take(M, j, axis=vm - 1)[obs], y)),
                     "tau_als": format_value(kendall_tau(np.take(als, j, axis=vm - 1)[obs], y))})
    write_rows_csv(out / "tau.csv", rows)
    return ["posterior_mean.csv", "traces.csv", "tau.csv"] + write_spectra(out, M)


def _sim_config(settings: dict, default: tuple[int, int, int]) -> ChainConfig:
    n_iter = settings["iterations"] or default[0]
    burn = settings["burn_in"] if settings["burn_in"] is not None else default[1]
    thin = settings["thin"] or default[2]
    return ChainConfig(n_iter, burn, thin, settings["seed"], settings["vmf_sweeps"])


def cmd_simulate(settings: dict, out: Path) -> list[str]:
    exp = settings["experiment"]
    full = settings["scale"] == "full"
    if exp in ("table1", "table2", "eigcurves"):
        dims = settings["dims"] or (FULL_DIMS if full else DESK_DIMS)
        reps = settings["replicates"] or (10 if full else 5)
        conds = standard_conditions(dims, misspecified=exp != "table1", replicates=reps, seed=settings["seed"])
        cfg = _sim_config(settings, (11_000, 1_000, 10) if full else (6_000, 1_000, 10))
        estimators = ESTIMATORS if exp != "eigcurves" else ("HOM", "HET")
        results = simulate(conds, estimators, cfg, workers=settings["workers"])
        if exp == "eigcurves":
            write_curves_csv(out / "curves.csv", results)
            rows = [{"estimator": e, "mean_abs_zero_eigen_diff": zero_eigenvalue_error(results, conds, e)}
                    for e in estimators]
            write_rows_csv(out / "zero_eigen_summary.csv", rows)
            return ["curves.csv", "zero_eigen_summary.csv"]
        write_table_csv(out / "table.csv", summarize_rse(results), conds, estimators)
        write_replicates_csv(out / "replicates.csv", results)
        write_curves_csv(out / "curves.csv", results)
        return ["table.csv", "replicates.csv", "curves.csv"]
    if exp == "equivariance":
        dims = settings["dims"] or (6, 5, 4)
        ranks = settings["ranks"] or (2, 2, 2)
        cfg = _sim_config(settings, (20_000, 2_000, 10))
        report = equivariance_check(dims, ranks, settings["a"], settings["seed"], cfg, settings["chains"])
        (out / "equivariance.json").write_text(json.dumps(report.as_dict(), indent=2) + "\n", encoding="utf-8")
        return ["equivariance.json"]
    dims = settings["dims"] or (12, 12, 6, 10)
    ranks = settings["ranks"] or (2,) * len(dims)
    cfg = _sim_config(settings, (3_000, 1_000, 5))
    bench = ordinal_benchmark(dims, ranks, settings["skew_profile"], cfg, settings["seed"])
    write_rows_csv(out / "tau.csv", bench.rows())
    return ["tau.csv"]


def cmd_summarize(settings: dict, out: Path) -> list[str]:
    run_dir = Path(settings["run_dir"])
    traces = read_traces_csv(run_dir / "traces.csv")
    # pinned or fixed parameters (sigma_sq in SFTD, lambdas under HOM) have nothing to mix
    varying = {k: v for k, v in traces.items() if np.ptp(v) > 0}
    rows = ess_report(varying, settings["threshold"])
    write_rows_csv(run_dir / "ess.csv", [{**r, "ess": format_value(r["ess"])} for r in rows])
    for r in rows:
        flag = "LOW" if r["low"] else "ok"
        print(f"{r['trace']}\tESS={r['ess']:.1f}\t{flag}")
    for name in sorted(set(traces) - set(varying)):
        print(f"{name}\tconstant\tskipped")
    return ["ess.csv"]


COMMANDS = {
    "decompose": cmd_decompose,
    "fit-normal": cmd_fit_normal,
    "fit-sftd": cmd_fit_sftd,
    "simulate": cmd_simulate,
    "summarize": cmd_summarize,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    started = time.time()
    try:
        file_values = read_config_file(args.config) if args.config else {}
        flags = {k: v for k, v in vars(args).items() if k in KEYS[command]}
        settings = resolve_settings(command, file_values, flags)
        if command == "summarize":
            COMMANDS[command](settings, Path(settings["run_dir"]))
            return 0
        out = Path(settings["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[command](settings, out)
        write_manifest(out, command, settings, started, outputs)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 2
    except (ValueError, OSError, FloatingPointError, RuntimeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
