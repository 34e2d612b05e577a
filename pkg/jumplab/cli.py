from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, ValidationError

from .config import ExperimentConfig, LabSettings, load_experiment_config
from .criteria import CriterionSpec, evaluate_condition
from .exceptions import (
    ConfigError,
    InvalidParametersException,
    UnknownExampleException,
    UnknownPresetException,
    UnsupportedModelException,
)
from .follmer_mc import duality_check, parse_statistic, tilt_model, ui_probe
from .functionals import CompensatorSpec
from .lab import (
    battery,
    equality_ids,
    event_equality_suite,
    identity_suite,
    path_identities,
    reproduce,
    resolve_model,
    summarize_identities,
)
from .models import PATH_STREAM, sample_path
from .path_core import CadlagPath
from .records import read_records, write_records
from .stochexp import stoch_exp
from .stopping import StoppingFamily, default_family, parse_family, parse_rule
from .sync_ensemble import EnsembleRunner

# shorthand criterion names accepted next to the tags themselves
_CRITERION_ALIASES = {"Ba": "B_a", "Aa": "A_a", "LMA": "LM_A", "LMB": "LM_B"}

_SUITES = {
    "reciprocal": ("reciprocal",),
    "pushforward": ("pushforward",),
    "roundtrip": ("round_trip",),
    "logtransform": ("log_transform",),
    "criteria": ("a_identity", "b_identity"),
}

_INPUT_ERRORS = (
    ConfigError,
    InvalidParametersException,
    UnknownExampleException,
    UnknownPresetException,
    UnsupportedModelException,
)


def _canonical(payload: Any) -> str:
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    return json.dumps(payload, sort_keys=True, indent=2)


def _emit(payload: Any, out: Optional[Path]) -> None:
    text = _canonical(payload)
    if out is None:
        print(text)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text + "\n")


def _read_json(source: Path, what: str) -> Any:
    try:
        return json.loads(source.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read {what} {source}: {e}") from e


def _settings(args: argparse.Namespace) -> LabSettings:
    settings = LabSettings.from_env()
    updates = {
        key: value
        for key, value in (("seed", args.seed), ("threads", args.threads), ("out_dir", args.out_dir))
        if value is not None
    }
    try:
        return LabSettings.model_validate({**settings.model_dump(), **updates})
    except ValidationError as e:
        raise ConfigError("Invalid global flags", e.errors(include_url=False, include_context=False)) from e


def _experiment_config(args: argparse.Namespace, settings: LabSettings) -> ExperimentConfig:
    """``--config`` file, then the model flags, with the seed falling back to the environment"""
    raw: dict[str, Any] = {} if args.config is None else dict(_read_json(args.config, "config"))

    if getattr(args, "model", None) is not None:
        raw.pop("preset", None)
        raw["model"] = _read_json(args.model, "model")
    if getattr(args, "preset", None) is not None:
        raw.pop("model", None)
        raw["preset"] = args.preset
    if getattr(args, "horizon", None) is not None:
        raw["horizon"] = args.horizon
    if getattr(args, "n_paths", None) is not None:
        raw["n_paths"] = args.n_paths
    if args.seed is not None or "seed" not in raw:
        raw["seed"] = settings.seed

    return load_experiment_config(raw)


@dataclass(frozen=True)
class _SampleTask:
    model: Any
    seed: int

    def __call__(self, index: int) -> CadlagPath:
        return sample_path(self.model, self.seed, index, PATH_STREAM)


def _simulate(args: argparse.Namespace, settings: LabSettings, runner: EnsembleRunner) -> int:
    config = _experiment_config(args, settings)
    model = resolve_model(config)
    paths = runner.map(_SampleTask(model, config.seed), config.n_paths)

    out = args.out or settings.out_dir / "paths.ndjson"
    out.parent.mkdir(parents=True, exist_ok=True)
    count = write_records(paths, out)
    _emit({"model": model.model_dump(mode="json"), "n_paths": count, "out": str(out), "seed": config.seed}, None)
    return 0


def _input_paths(args: argparse.Namespace, settings: LabSettings, runner: EnsembleRunner) -> list[CadlagPath]:
    if args.path_file is not None:
        return list(read_records(args.path_file))
    config = _experiment_config(args, settings)
    return runner.map(_SampleTask(resolve_model(config), config.seed), config.n_paths)


def _exponential(args: argparse.Namespace, settings: LabSettings, runner: EnsembleRunner) -> int:
    rows = []
    for path in _input_paths(args, settings, runner):
        pair = stoch_exp(path, signed=args.signed)
        ts = pair.exponential.critical_times()
        rows.append(
            {
                "times": ts.tolist(),
                "log_abs": pair.exponential.log_abs_values(ts).tolist(),
                "absorption_time": pair.absorption_time,
                "explosion_time": pair.exponential.explosion_time,
            }
        )
    _emit(rows, args.out)
    return 0


def _verify_identities(args: argparse.Namespace, settings: LabSettings, runner: EnsembleRunner) -> int:
    if args.path_file is not None:
        records = [
            path_identities(path, CompensatorSpec(), local_martingale=not path.drift)
            for path in read_records(args.path_file)
        ]
        suite = summarize_identities(records)
    else:
        config = _experiment_config(args, settings)
        suite = identity_suite(resolve_model(config), config.n_paths, config.seed, runner)

    selected = {field for name in (args.suite or list(_SUITES)) for field in _SUITES[name]}
    failures = [name for name in suite.failures() if name.split("[")[0] in selected]
    _emit({"failures": failures, "suite": suite.model_dump(mode="json")}, args.out)
    return 1 if failures else 0


def _family(args: argparse.Namespace, horizon: float) -> StoppingFamily:
    if args.family == "default":
        return default_family(horizon)
    if not args.rule:
        raise InvalidParametersException("--family rules needs at least one --rule")
    return parse_family(args.rule)


def _nk_check(args: argparse.Namespace, settings: LabSettings, runner: EnsembleRunner) -> int:
    config = _experiment_config(args, settings)
    model = resolve_model(config)
    try:
        spec = CriterionSpec(
            tag=_CRITERION_ALIASES.get(args.criterion, args.criterion),  # type: ignore[arg-type]
            a=args.a,
            delta=args.delta,
            c=args.c,
        )
    except ValidationError as e:
        raise ConfigError("Invalid criterion", e.errors(include_url=False, include_context=False)) from e
    verdict = evaluate_condition(
        model,
        spec,
        _family(args, model.horizon),
        config.n_paths,
        config.seed,
        statistic=args.statistic,
        weight=args.weight,
        offset=args.offset,
        bootstrap=args.bootstrap,
        runner=runner,
    )
    _emit(verdict, args.out)
    return 1 if verdict.verdict == "diverged" else 0


def _follmer_check(args: argparse.Namespace, settings: LabSettings, runner: EnsembleRunner) -> int:
    config = _experiment_config(args, settings)
    pair = tilt_model(resolve_model(config))
    result = duality_check(
        pair,
        parse_rule(args.sigma),
        parse_statistic(args.stat),
        config.n_paths,
        config.seed,
        k=args.k,
        runner=runner,
    )
    _emit(result, args.out)
    return 0 if result.passed else 1


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _ui_probe(args: argparse.Namespace, settings: LabSettings, runner: EnsembleRunner) -> int:
    config = _experiment_config(args, settings)
    pair = tilt_model(resolve_model(config))
    probe = ui_probe(
        pair,
        args.horizons,
        config.n_paths,
        config.seed,
        level=args.level or config.tolerances.explosion_level,
        runner=runner,
    )
    _emit(probe, args.out)
    return 0


def _classify(args: argparse.Namespace, settings: LabSettings, runner: EnsembleRunner) -> int:
    config = _experiment_config(args, settings)
    reports = event_equality_suite(
        resolve_model(config),
        args.equality or config.equalities or equality_ids(),
        config.n_paths,
        config.seed,
        config.tolerances,
        runner=runner,
    )
    _emit([report.model_dump(mode="json") for report in reports], args.out)

    if args.min_agreement is None:
        return 0
    return 0 if all(report.agreement >= args.min_agreement for report in reports) else 1


def _overrides(args: argparse.Namespace, settings: LabSettings) -> dict[str, Any]:
    overrides: dict[str, Any] = {}
    if args.config is not None:
        raw = _read_json(args.config, "config")
        overrides.update({key: raw[key] for key in ("n_paths", "horizon", "tolerances") if key in raw})
    if args.n_paths is not None:
        overrides["n_paths"] = args.n_paths
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    overrides["seed"] = settings.seed
    return overrides


def _summary(report: Any) -> dict[str, Any]:
    return {
        "name": report.name,
        "passed": report.passed,
        "failed_checks": [check.name for check in report.checks if not check.passed],
        "warnings": report.warnings,
    }


def _reproduce(args: argparse.Namespace, settings: LabSettings, runner: EnsembleRunner) -> int:
    report = reproduce(args.example_id, _overrides(args, settings), out_dir=settings.out_dir, runner=runner)
    _emit(_summary(report), None)
    return 0 if report.passed else 1


def _battery(args: argparse.Namespace, settings: LabSettings, runner: EnsembleRunner) -> int:
    reports = battery(settings.seed, n_paths=args.n_paths, out_dir=settings.out_dir, runner=runner)
    _emit([_summary(report) for report in reports], None)
    return 0 if all(report.passed for report in reports) else 1


def _global_args() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--seed", type=int, help="root seed, JUMPLAB_SEED otherwise")
    parser.add_argument("--out-dir", dest="out_dir", type=Path)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--config", type=Path, help="experiment config JSON")
    return parser


def _model_args() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--model", type=Path, help="model JSON {kind, params, horizon}")
    source.add_argument("--preset")
    parser.add_argument("--horizon", type=float)
    parser.add_argument("--n", "--n-paths", dest="n_paths", type=int)
    return parser


def _parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="jumplab",
        description="Simulate jump martingales and check their exponentials, criteria and measure changes.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    common = [_global_args()]
    with_model = [*common, _model_args()]

    simulate = commands.add_parser("simulate", parents=with_model, help="write newline-delimited path records")
    simulate.add_argument("--out", type=Path)
    simulate.set_defaults(handler=_simulate)

    exponential = commands.add_parser("exponential", parents=with_model, help="stochastic exponential of paths")
    exponential.add_argument("--path-file", dest="path_file", type=Path)
    exponential.add_argument("--signed", action="store_true")
    exponential.add_argument("--out", type=Path)
    exponential.set_defaults(handler=_exponential)

    identities = commands.add_parser("verify-identities", parents=with_model, help="max pathwise identity deviations")
    identities.add_argument("--path-file", dest="path_file", type=Path)
    identities.add_argument("--suite", action="append", choices=sorted(_SUITES))
    identities.add_argument("--out", type=Path)
    identities.set_defaults(handler=_verify_identities)

    nk = commands.add_parser("nk-check", parents=with_model, help="sup over stopping rules of a criterion")
    nk.add_argument("--criterion", required=True)
    nk.add_argument("--a", type=float, default=0.0)
    nk.add_argument("--delta", type=float, default=0.5)
    nk.add_argument("--c", type=float, default=0.5)
    nk.add_argument("--family", choices=("default", "rules"), default="default")
    nk.add_argument("--rule", action="append", help="stopping rule such as t=4 or cross:Z>=2")
    nk.add_argument("--statistic", choices=("exp", "identity"), default="exp")
    nk.add_argument("--weight", choices=("none", "z"), default="none")
    nk.add_argument("--offset", choices=("none", "remark"), default="none")
    nk.add_argument("--bootstrap", type=int, default=200)
    nk.add_argument("--out", type=Path)
    nk.set_defaults(handler=_nk_check)

    follmer = commands.add_parser("follmer-check", parents=with_model, help="paired P and Q duality estimate")
    follmer.add_argument("--sigma", required=True)
    follmer.add_argument("--stat", default="one")
    follmer.add_argument("--k", type=float, default=4.0)
    follmer.add_argument("--out", type=Path)
    follmer.set_defaults(handler=_follmer_check)

    probe = commands.add_parser("ui-probe", parents=with_model, help="truncated means of E(M) over horizons")
    probe.add_argument("--horizons", type=_float_list, required=True)
    probe.add_argument("--level", type=float)
    probe.add_argument("--out", type=Path)
    probe.set_defaults(handler=_ui_probe)

    classify = commands.add_parser("classify", parents=with_model, help="event equality agreement")
    classify.add_argument("--equality", action="append", choices=equality_ids())
    classify.add_argument("--min-agreement", dest="min_agreement", type=float)
    classify.add_argument("--out", type=Path)
    classify.set_defaults(handler=_classify)

    rep = commands.add_parser("reproduce", parents=common, help="run one registered recipe")
    rep.add_argument("example_id")
    rep.add_argument("--n", "--n-paths", dest="n_paths", type=int)
    rep.add_argument("--horizon", type=float)
    rep.set_defaults(handler=_reproduce)

    bat = commands.add_parser("battery", parents=common, help="run every recipe")
    bat.add_argument("--n", "--n-paths", dest="n_paths", type=int)
    bat.set_defaults(handler=_battery)

    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    args = _parse_args(argv)
    try:
        settings = _settings(args)
        runner = EnsembleRunner.from_settings(settings)
        return args.handler(args, settings, runner)
    except _INPUT_ERRORS as e:
        print(f"jumplab: error: {e}", file=sys.stderr)
        for error in getattr(e, "errors", []):
            print(f"  {'.'.join(str(part) for part in error.get('loc', ()))}: {error.get('msg')}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
