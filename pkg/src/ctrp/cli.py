"""Command-line interface: ``ctrp <command> --config FILE --out DIR``.

Commands: project, bounds, fit, predict, simulate, bench. Every command
validates its JSON config against a schema before computing anything, writes
its results and a ``manifest.json`` under ``--out`` and exits with

    0  success
    2  configuration error (schema violation, invalid values)
    3  input/output error (missing or malformed files, ingestion failures)
    4  numerical failure (sampler or weighting breakdown)
    1  anything else

Failures print one JSON line ``{"error": <category>, "message": ...}`` to
stderr. Mode numbers in configs are one-based.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as dt
import hashlib
import json
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .bounds import bound_curve
from .ensemble import (
    EnsembleModel, McmcSettings, Member, RLRConvergenceError, fit_ensemble, write_forecast_report,
)
from .gibbs import ChainOutput, GaussianPriorConfig, ParafacPriorConfig, RegressionData, SamplerError
from .ingest import IngestionError, MixedFrequencyFrame, parse_month
from .projection import GtrpSpec, ProjectionError, apply, build_gtrp
from .simlab import ScenarioConfig, bench, projection_factory, run_scenario, write_bench_csv
from .tensor import ShapeError, from_literal, to_literal

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


# -- schemas ---------------------------------------------------------------------

_POS_INT = {"type": "integer", "minimum": 1}
_SHAPE = {"type": "array", "items": _POS_INT, "minItems": 1}
_PROBS = {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}}

_PROJECTION = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "type": {"type": "string"},
        "r": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "output_shape": _SHAPE,
        "n_modewise": {"type": "integer", "minimum": 0},
        "preserve_modes": {"type": "array", "items": _POS_INT},
        "psi": {"type": "number", "minimum": 1},
        "L": _POS_INT,
        "seed": {"type": "integer", "minimum": 0},
        "scale": {"type": "boolean"},
    },
}

_MODEL = {
    "type": "object",
    "additionalProperties": False,
    "required": ["prior"],
    "properties": {
        "prior": {"enum": ["parafac", "gaussian"]},
        "rank": _POS_INT,
        "alpha": {"type": "number", "exclusiveMinimum": 0},
        "a_tau": {"type": "number", "exclusiveMinimum": 0},
        "b_tau": {"type": "number", "exclusiveMinimum": 0},
        "a_lambda": {"type": "number", "exclusiveMinimum": 0},
        "b_lambda": {"type": "number", "exclusiveMinimum": 0},
        "a_sigma": {"type": "number", "exclusiveMinimum": 0},
        "b_sigma": {"type": "number", "exclusiveMinimum": 0},
        "sigma2_mu": {"type": "number", "exclusiveMinimum": 0},
        "tau_prior": {"enum": ["gamma", "inverse_gamma"]},
        "zeta_update": {"enum": ["joint", "renormalize"]},
        "prior_variance": {"type": "number", "exclusiveMinimum": 0},
    },
}

_MCMC = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "iterations": _POS_INT,
        "burn_in": {"type": "integer", "minimum": 0},
        "thin": _POS_INT,
    },
}

_MIXED = {
    "type": "object",
    "additionalProperties": False,
    "required": ["response", "daily"],
    "properties": {
        "response": {"type": "string"},
        "daily": {"type": "string"},
        "first_month": {"type": "string"},
        "last_month": {"type": "string"},
    },
}

_DATA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "x": {"type": "string"},
        "y": {"type": "string"},
        "batch": {"type": "boolean"},
        "mixed_frequency": _MIXED,
    },
}

_OUTPUTS = {
    "type": "object",
    "additionalProperties": False,
    "properties": {"quantiles": _PROBS},
}

SCHEMAS = {
    "project": {
        "type": "object",
        "additionalProperties": False,
        "required": ["projection", "data"],
        "properties": {"projection": _PROJECTION, "data": _DATA},
    },
    "bounds": {
        "type": "object",
        "additionalProperties": False,
        "required": ["epsilon", "beta", "n", "order"],
        "properties": {
            "epsilon": {"oneOf": [
                {"type": "array", "items": {"type": "number"}, "minItems": 1},
                {"type": "object", "additionalProperties": False, "required": ["start", "stop", "num"],
                 "properties": {"start": {"type": "number"}, "stop": {"type": "number"}, "num": _POS_INT}},
            ]},
            "beta": {"type": "number", "exclusiveMinimum": 0},
            "n": {"type": "number", "minimum": 2},
            "order": _POS_INT,
        },
    },
    "fit": {
        "type": "object",
        "additionalProperties": False,
        "required": ["model", "projection", "data"],
        "properties": {"model": _MODEL, "projection": _PROJECTION, "data": _DATA, "mcmc": _MCMC},
    },
    "predict": {
        "type": "object",
        "additionalProperties": False,
        "required": ["model_dir", "data"],
        "properties": {"model_dir": {"type": "string"}, "data": _DATA, "outputs": _OUTPUTS,
                       "seed": {"type": "integer", "minimum": 0}},
    },
    "simulate": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "coefficient": {"enum": ["CI", "CR", "L", "B", "unstructured", "zero"]},
            "shape": {"type": "array", "items": _POS_INT, "minItems": 2, "maxItems": 2},
            "n_train": _POS_INT,
            "n_test": _POS_INT,
            "sigma": {"type": "number", "minimum": 0},
            "mu0": {"type": "number"},
            "r": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            "psi": {"type": "number", "minimum": 1},
            "projection_type": {"type": "string"},
            "L": _POS_INT,
            "seed": {"type": "integer", "minimum": 0},
            "sparsity": {"type": "number", "minimum": 0, "maximum": 1},
            "prior": {"enum": ["parafac", "gaussian"]},
            "rank": _POS_INT,
            "prior_variance": {"type": "number", "exclusiveMinimum": 0},
            "iterations": _POS_INT,
            "burn_in": {"type": "integer", "minimum": 0},
            "thin": _POS_INT,
        },
    },
    "bench": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "shape": {"type": "array", "items": _POS_INT, "minItems": 2, "maxItems": 2},
            "n_train": _POS_INT,
            "n_test": _POS_INT,
            "rates": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}, "minItems": 1},
            "coefficient": {"enum": ["CI", "CR", "L", "B", "unstructured", "zero"]},
            "projection_type": {"type": "string"},
            "psi": {"type": "number", "minimum": 1},
            "iterations": _POS_INT,
            "burn_in": {"type": "integer", "minimum": 0},
            "prior_variance": {"type": "number", "exclusiveMinimum": 0},
            "sigma": {"type": "number", "minimum": 0},
            "mu0": {"type": "number"},
            "seed": {"type": "integer", "minimum": 0},
            "include_baseline": {"type": "boolean"},
        },
    },
}


def load_config(path: str | Path, command: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    try:
        jsonschema.validate(doc, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}: {exc.message}") from exc
    return doc


def apply_seed_override(command: str, config: dict, seed: int | None) -> dict:
    if seed is None:
        return config
    config = copy.deepcopy(config)
    if command in ("project", "fit"):
        config.setdefault("projection", {})["seed"] = seed
    elif command in ("predict", "simulate", "bench"):
        config["seed"] = seed
    return config


# -- data helpers -----------------------------------------------------------------


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def read_tensors(path: Path) -> np.ndarray:
    """``.npy`` array or JSON tensor literal."""
    if path.suffix == ".npy":
        return np.load(path)
    return from_literal(json.loads(path.read_text()))


def read_vector(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        return np.load(path).ravel()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError(f"{path}: empty file")
        vals = []
        for row in reader:
            if not row or row[-1].strip() == "":
                raise IngestionError(f"{path}: missing value")
            vals.append(float(row[-1]))
    return np.array(vals)


def load_xy(data: dict, base: Path, need_y: bool = True):
    if "mixed_frequency" in data:
        mf = data["mixed_frequency"]
        frame = MixedFrequencyFrame.from_csv(_resolve(base, mf["response"]), _resolve(base, mf["daily"]))
        months = frame.available_months()
        if "first_month" in mf:
            months = [m for m in months if m >= parse_month(mf["first_month"])]
        if "last_month" in mf:
            months = [m for m in months if m <= parse_month(mf["last_month"])]
        if not months:
            raise IngestionError("no months with a complete four-month history in the requested range")
        x, y, _ = frame.build_design(months)
        return x, y
    if "x" not in data:
        raise ConfigError("data needs 'x' (and 'y') or 'mixed_frequency'")
    x = read_tensors(_resolve(base, data["x"]))
    if not need_y:
        return x, None
    if "y" not in data:
        raise ConfigError("data.y is required")
    y = read_vector(_resolve(base, data["y"]))
    if len(y) != x.shape[0]:
        raise ConfigError(f"{x.shape[0]} covariate tensors but {len(y)} responses")
    return x, y


def projection_maker(proj: dict, input_shape):
    """Seed -> projection from a projection config block."""
    psi = proj.get("psi", 3.0)
    kind = proj.get("type", "MW")
    if "output_shape" in proj:
        out = tuple(proj["output_shape"])
        n_mw = proj.get("n_modewise", len(input_shape) if len(out) == len(input_shape) else 0)
        preserve = [m - 1 for m in proj.get("preserve_modes", [])]
        scale = proj.get("scale", False)
        return lambda seed: build_gtrp(input_shape, out, n_mw, psi=psi, seed=seed,
                                       preserve_modes=preserve, scale_on_apply=scale, kind=kind)
    if "r" not in proj:
        raise ConfigError("projection needs 'r' or 'output_shape'")
    return projection_factory(input_shape, proj["r"], kind, psi)


def prior_from_config(model: dict, out_shape):
    kw = {k: v for k, v in model.items() if k not in ("prior", "prior_variance")}
    if model["prior"] == "parafac":
        return ParafacPriorConfig(**kw)
    kw.pop("rank", None)
    for k in ("alpha", "a_tau", "b_tau", "a_lambda", "b_lambda", "tau_prior", "zeta_update"):
        if k in kw:
            raise ConfigError(f"model.{k} does not apply to the gaussian prior")
    return GaussianPriorConfig.isotropic(out_shape, model.get("prior_variance", 1.0), **kw)


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, config: dict, started: float, extra: dict) -> None:
    files = {p.name: sha256_file(p) for p in sorted(out.iterdir()) if p.is_file() and p.name != "manifest.json"}
    doc = {
        "command": command,
        "version": __version__,
        "config": config,
        "created": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "wall_seconds": round(time.perf_counter() - started, 3),
        "outputs": files,
        **extra,
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable))


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# -- commands -------------------------------------------------------------------


def cmd_project(config: dict, base: Path, out: Path) -> dict:
    x = read_tensors(_resolve(base, config["data"]["x"]))
    proj = config["projection"]
    # by default the leading axis indexes a batch of tensors
    input_shape = x.shape[1:] if config["data"].get("batch", True) else x.shape
    try:
        spec = projection_maker(proj, input_shape)(proj.get("seed", 0))
    except (ProjectionError, ValueError) as exc:
        raise ConfigError(f"projection does not fit tensors of shape {input_shape}: {exc}") from exc
    z = apply(spec, x)
    (out / "projected.json").write_text(json.dumps(to_literal(z)))
    (out / "projection.json").write_text(json.dumps(spec.to_dict(), indent=2))
    return {"projection_hash": spec.content_hash(), "seed": spec.seed}


def cmd_bounds(config: dict, base: Path, out: Path) -> dict:
    eps = config["epsilon"]
    if isinstance(eps, dict):
        eps = np.linspace(eps["start"], eps["stop"], eps["num"]).tolist()
    rows = bound_curve(eps, config["beta"], config["n"], config["order"])
    with open(out / "bounds.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epsilon", "q0_tensorwise", "q0_modewise"])
        for row in rows:
            writer.writerow([repr(row["epsilon"]), repr(row["q0_tensorwise"]), repr(row["q0_modewise"])])
    return {}


def cmd_fit(config: dict, base: Path, out: Path) -> dict:
    x, y = load_xy(config["data"], base)
    proj = config["projection"]
    maker = projection_maker(proj, x.shape[1:])
    probe = maker(0)
    prior = prior_from_config(config["model"], probe.output_shape)
    mcmc = McmcSettings(**config.get("mcmc", {}))
    model = fit_ensemble(x, y, maker, proj.get("L", 1), prior, mcmc, proj.get("seed", 0))
    save_model(model, out)
    return {"weights": model.weights.tolist(), "projection_hashes": [m.spec.content_hash() for m in model.members]}


def save_model(model: EnsembleModel, out: Path) -> None:
    members = []
    for l, member in enumerate(model.members):
        stem = f"member{l + 1}"
        member.chain.save(out, stem)
        members.append({"projection": member.spec.to_dict(), "chain": stem})
    doc = {"weights": model.weights.tolist(), "etas": model.etas.tolist(), "members": members}
    (out / "ensemble.json").write_text(json.dumps(doc, indent=2, default=_jsonable))


def load_model(directory: Path) -> EnsembleModel:
    doc = json.loads((directory / "ensemble.json").read_text())
    members = []
    for entry in doc["members"]:
        spec = GtrpSpec.from_dict(entry["projection"])
        chain = ChainOutput.load(directory, entry["chain"])
        empty = RegressionData(np.empty((0,) + spec.output_shape), np.empty(0))
        members.append(Member(spec, chain, empty))
    return EnsembleModel(members, np.array(doc["weights"]), np.array(doc["etas"]), prior=None)


def cmd_predict(config: dict, base: Path, out: Path) -> dict:
    model = load_model(_resolve(base, config["model_dir"]))
    data = config["data"]
    x, y = load_xy(data, base, need_y="y" in data or "mixed_frequency" in data)
    probs = config.get("outputs", {}).get("quantiles", [0.05, 0.5, 0.95])
    rng = np.random.default_rng(config.get("seed", 0))
    write_forecast_report(out / "forecast.csv", model, x, probs, rng, y)
    return {"seed": config.get("seed", 0)}


def cmd_simulate(config: dict, base: Path, out: Path) -> dict:
    report = run_scenario(ScenarioConfig(**config))
    report.save(out)
    (out / "summary.json").write_text(json.dumps(report.summary(), indent=2, default=_jsonable))
    return {"report_hash": report.content_hash(), "summary": report.summary()}


def cmd_bench(config: dict, base: Path, out: Path) -> dict:
    rows = bench(**config)
    write_bench_csv(out / "bench.csv", rows)
    return {}


COMMANDS = {
    "project": cmd_project,
    "bounds": cmd_bounds,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctrp", description="Compressed Bayesian tensor regression")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed-override", type=int, default=None, help="replace the master seed")
    return parser


def _fail(category: str, code: int, exc: BaseException) -> int:
    print(json.dumps({"error": category, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        config = load_config(args.config, args.command)
        config = apply_seed_override(args.command, config, args.seed_override)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        base = Path(args.config).resolve().parent
        extra = COMMANDS[args.command](config, base, out)
        write_manifest(out, args.command, config, started, extra)
    except (ConfigError, jsonschema.ValidationError, ProjectionError, ShapeError) as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except (IngestionError, OSError) as exc:
        return _fail("io", EXIT_IO, exc)
    except (SamplerError, RLRConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail("numerical", EXIT_NUMERIC, exc)
    except ValueError as exc:
        # remaining value errors come from invalid settings (rates, priors, run lengths)
        return _fail("config", EXIT_CONFIG, exc)
    except Exception as exc:  # noqa: BLE001
        return _fail("other", EXIT_OTHER, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
