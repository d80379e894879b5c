"""Command-line front end.

Four subcommands: ``dic2d`` correlates a reference image against a glob
of deformed images and writes one result file per image; ``strain``
turns previously written result files into strain-field files; ``synth``
generates speckle fixtures with analytic deformations; ``metrology``
runs the noise/resolution/MEI sweep and renders its report figures.

Option values resolve in three layers: command-line flags override the
YAML config file (``--config``), which overrides built-in defaults. The
fully resolved configuration is echoed to ``run_config.yaml`` beside the
outputs, so a run can always be reproduced from its artifacts.

Exit codes: 0 success, 2 configuration problem, 3 pipeline failure
(seed rejected, no matching files, unreadable results, ...).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from glob import glob
from pathlib import Path

import numpy as np
import yaml

from .errors import (
    ConfigError, DicError, ImageIoError, NoMatch, UnsupportedFormat,
)
from .image import load_image, save_pgm
from .metrology import star_benchmark
from .params import DicParams, MethodKind, StrainParams
from .results_io import (
    import_2d, write_dic_binary, write_dic_csv, write_strain_csv,
)
from .rgdic import correlate_2d
from .roi import roi_exclude_border, roi_from_mask_image, roi_from_rects
from .strain import calculate_strain_field
from .synth import DeformationFieldSpec, FieldKind, add_noise, deform_image, gen_speckle

__all__ = ["parse_and_run", "main"]

log = logging.getLogger("subsetdic.cli")

_PROGRESS_INTERVAL = 0.1

_DIC_DEFAULTS = {
    "reference": None,
    "deformed": None,
    "roi_border": 0,
    "roi_mask": None,
    "roi_rects": None,
    "seed": None,
    "output": ".",
    "binary": False,
    "delimiter": ",",
    "log_level": "info",
}

_STRAIN_DEFAULTS = {
    "data": None,
    "input_binary": False,
    "input_delimiter": ",",
    "output": ".",
    "delimiter": ",",
    "log_level": "info",
}

_SYNTH_DEFAULTS = {
    "width": 1024,
    "height": 1024,
    "mean_diameter": 4.0,
    "density": 0.5,
    "rng_seed": 0,
    "field": None,
    "shift": [0.0, 0.0],
    "exx": 0.0,
    "eyy": 0.0,
    "exy": 0.0,
    "edge_extension": 0.0,
    "amplitude": 0.5,
    "period_start": 10.0,
    "period_rate": 0.0,
    "supersample": 4,
    "noise": 0.0,
    "output": ".",
    "log_level": "info",
}

_METROLOGY_DEFAULTS = {
    "reference": None,
    "ref_noisy": None,
    "deformed": None,
    "synthetic": False,
    "width": 1000,
    "height": 250,
    "rng_seed": 11,
    "noise_sigma": 2.0,
    "amplitude": 0.5,
    "period_start": 8.0,
    "period_rate": 0.12,
    "subset_sizes": [11, 15, 19, 21, 25, 31],
    "output": ".",
    "delimiter": ",",
    "log_level": "info",
}

# the metrology sweep wants a dense grid and a short search range by default
_METROLOGY_PARAM_OVERRIDES = {"subset_step": 4, "max_displacement": 3.0}


class _Progress:
    """Stderr progress lines, at most one per _PROGRESS_INTERVAL seconds."""

    def __init__(self):
        self._last = 0.0

    def say(self, msg: str) -> None:
        now = time.monotonic()
        if now - self._last >= _PROGRESS_INTERVAL:
            print(msg, file=sys.stderr, flush=True)
            self._last = now


def _pair(text: str, flag: str) -> list[float]:
    parts = str(text).split(",")
    if len(parts) != 2:
        raise ConfigError(f"{flag} wants two comma-separated numbers, "
                          f"got {text!r}")
    try:
        return [float(parts[0]), float(parts[1])]
    except ValueError:
        raise ConfigError(f"{flag} wants numbers, got {text!r}") from None


def _int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(p) for p in str(text).split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"{flag} wants comma-separated integers, "
                          f"got {text!r}") from None


def _load_yaml_config(path) -> dict:
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    try:
        data = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _as_bool(value, key: str) -> bool:
    # strict on purpose: bool("false") is True, which nobody means
    if isinstance(value, bool):
        return value
    raise ConfigError(f"{key} must be true or false, got {value!r}")


def _as_pair_value(value, key: str) -> list[float]:
    if isinstance(value, str):
        return _pair(value, key)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        try:
            return [float(value[0]), float(value[1])]
        except (TypeError, ValueError):
            pass
    raise ConfigError(f"{key} must be two numbers, got {value!r}")


def _as_size_list(value, key: str) -> list[int]:
    if isinstance(value, str):
        return _int_list(value, key)
    if isinstance(value, (list, tuple)):
        try:
            return [int(v) for v in value]
        except (TypeError, ValueError):
            pass
    raise ConfigError(f"{key} must be a list of integers, got {value!r}")


def _resolve(defaults: dict, yaml_cfg: dict, flags: dict, where: str,
             coerce: dict | None = None) -> dict:
    """Flags override YAML, YAML overrides defaults; keys are validated.

    ``coerce`` maps option names to normalizers so a value arriving via
    YAML lands in the echoed run_config.yaml with the exact same type a
    flag would have produced.
    """
    allowed = set(defaults) | {"params"}
    unknown = set(yaml_cfg) - allowed - {"subcommand"}
    if unknown:
        raise ConfigError(f"{where}: unknown option(s): "
                          f"{', '.join(sorted(unknown))}")
    out = dict(defaults)
    out.update({k: v for k, v in yaml_cfg.items()
                if k not in ("params", "subcommand")})
    out.update({k: v for k, v in flags.items() if v is not None})
    for key, fn in (coerce or {}).items():
        if out.get(key) is None:
            continue
        if fn in (int, float):
            try:
                out[key] = fn(out[key])
            except (TypeError, ValueError):
                raise ConfigError(
                    f"{key} must be a number, got {out[key]!r}") from None
        else:
            out[key] = fn(out[key], key)
    return out


# numeric params normalized so YAML ints echo identically to flag values
_PARAM_FLOAT_KEYS = ("max_displacement", "update_precision",
                     "zncc_accept_threshold", "mad_k")
_PARAM_INT_KEYS = ("subset_size", "subset_step", "max_iterations",
                   "threads", "window_points")


def _resolve_params(cls, yaml_cfg: dict, flag_params: dict):
    merged = cls().to_dict()
    yaml_params = yaml_cfg.get("params") or {}
    if not isinstance(yaml_params, dict):
        raise ConfigError("config key 'params' must be a mapping")
    unknown = set(yaml_params) - set(merged)
    if unknown:
        raise ConfigError(f"unknown parameter(s) in config: "
                          f"{', '.join(sorted(unknown))}")
    merged.update(yaml_params)
    merged.update({k: v for k, v in flag_params.items() if v is not None})
    for key in merged:
        try:
            if key in _PARAM_FLOAT_KEYS:
                merged[key] = float(merged[key])
            elif key in _PARAM_INT_KEYS:
                merged[key] = int(merged[key])
        except (TypeError, ValueError):
            raise ConfigError(
                f"{key} must be a number, got {merged[key]!r}") from None
    return cls.from_dict(merged)


def _echo_config(out_dir: Path, subcommand: str, options: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"subcommand": subcommand, **options}
    (out_dir / "run_config.yaml").write_text(
        yaml.safe_dump(doc, sort_keys=True))


def _setup_logging(level_name: str) -> None:
    levels = {"debug": logging.DEBUG, "info": logging.INFO,
              "warning": logging.WARNING, "error": logging.ERROR}
    if level_name not in levels:
        raise ConfigError(f"log_level must be one of {sorted(levels)}, "
                          f"got {level_name!r}")
    log.setLevel(levels[level_name])
    if not log.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        log.addHandler(handler)
    log.propagate = False


# -------------------------------------------------------------------- dic2d


def _dic_param_flags(ns) -> dict:
    return {
        "subset_size": ns.subset_size, "subset_step": ns.subset_step,
        "max_displacement": ns.max_displacement, "cost": ns.cost,
        "shape": ns.shape, "method": ns.method,
        "max_iterations": ns.max_iterations,
        "update_precision": ns.update_precision,
        "zncc_accept_threshold": ns.zncc_threshold, "threads": ns.threads,
        "mad_enabled": ns.mad, "mad_k": ns.mad_k,
        "nan_unconverged": ns.nan_unconverged,
    }


def _build_roi(resolved: dict, width: int, height: int):
    mask_path, rects = resolved["roi_mask"], resolved["roi_rects"]
    if mask_path and rects:
        raise ConfigError("give either roi_mask or roi_rects, not both")
    if mask_path:
        return roi_from_mask_image(load_image(mask_path))
    if rects:
        try:
            quads = [tuple(float(v) for v in r) for r in rects]
            if any(len(q) != 4 for q in quads):
                raise ValueError
        except (TypeError, ValueError):
            raise ConfigError(
                "roi_rects must be a list of [x, y, w, h] quadruples"
            ) from None
        return roi_from_rects(width, height, quads)
    border = int(resolved["roi_border"])
    if border < 0:
        raise ConfigError("roi_border must be >= 0")
    return roi_exclude_border(width, height, border)


def _run_dic2d(ns) -> None:
    yaml_cfg = _load_yaml_config(ns.config) if ns.config else {}
    flags = {
        "reference": ns.reference, "deformed": ns.deformed,
        "roi_border": ns.roi_border, "roi_mask": ns.roi_mask,
        "seed": _pair(ns.seed, "--seed") if ns.seed is not None else None,
        "output": ns.output, "binary": ns.binary,
        "delimiter": ns.delimiter, "log_level": ns.log_level,
    }
    resolved = _resolve(_DIC_DEFAULTS, yaml_cfg, flags, "dic2d config",
                        coerce={"roi_border": int,
                                "binary": _as_bool,
                                "seed": _as_pair_value})
    params = _resolve_params(DicParams, yaml_cfg, _dic_param_flags(ns))
    params = replace(params, threads=params.resolve_threads())
    params.validate()
    _setup_logging(resolved["log_level"])

    if not resolved["reference"]:
        raise ConfigError("a reference image is required "
                          "(--ref or 'reference:' in the config)")
    if not resolved["deformed"]:
        raise ConfigError("a deformed-image glob is required "
                          "(--def or 'deformed:' in the config)")
    if resolved["seed"] is None and params.method is MethodKind.MULTIWINDOW_RG:
        raise ConfigError("--seed is required when method is multiwindow_rg")

    ref = load_image(resolved["reference"])
    if resolved["seed"] is None:
        # plain multiwindow has no guided pass; any in-ROI anchor will do
        resolved["seed"] = [ref.width / 2.0, ref.height / 2.0]
    paths = sorted(glob(str(resolved["deformed"])))
    if not paths:
        raise NoMatch(f"no deformed images match "
                      f"{str(resolved['deformed'])!r}")
    roi = _build_roi(resolved, ref.width, ref.height)
    out_dir = Path(resolved["output"])
    _echo_config(out_dir, "dic2d", {**resolved, "params": params.to_dict()})

    seed = (resolved["seed"][0], resolved["seed"][1])
    progress = _Progress()
    writer = write_dic_binary if resolved["binary"] else write_dic_csv
    for i, path in enumerate(paths):
        progress.say(f"correlating [{i + 1}/{len(paths)}] {path}")
        t0 = time.perf_counter()
        img = load_image(path)
        result = correlate_2d(ref, [img], roi, seed, params)[0]
        if resolved["binary"]:
            out_path = writer(result, out_dir)
        else:
            out_path = writer(result, out_dir,
                              delimiter=resolved["delimiter"])
        dt = time.perf_counter() - t0
        n = result.grid.n_present
        conv = result.n_converged
        mean_zncc = (float(np.mean(result.zncc[result.converged]))
                     if conv else float("nan"))
        print(f"[{i + 1}/{len(paths)}] {result.image_label}: {n} points, "
              f"{100.0 * conv / n:.1f}% converged, "
              f"mean ZNCC {mean_zncc:.4f}, {dt:.2f} s -> {out_path.name}")


# ------------------------------------------------------------------- strain


def _run_strain(ns) -> None:
    yaml_cfg = _load_yaml_config(ns.config) if ns.config else {}
    flags = {
        "data": ns.data, "input_binary": ns.input_binary,
        "input_delimiter": ns.input_delimiter, "output": ns.output,
        "delimiter": ns.delimiter, "log_level": ns.log_level,
    }
    resolved = _resolve(_STRAIN_DEFAULTS, yaml_cfg, flags, "strain config",
                        coerce={"input_binary": _as_bool})
    params = _resolve_params(StrainParams, yaml_cfg, {
        "window_points": ns.window_points, "basis": ns.basis,
        "formulation": ns.formulation,
    })
    params.validate()
    _setup_logging(resolved["log_level"])
    if not resolved["data"]:
        raise ConfigError("a result-file glob is required "
                          "(--data or 'data:' in the config)")

    out_dir = Path(resolved["output"])
    _echo_config(out_dir, "strain", {**resolved, "params": params.to_dict()})
    imported = import_2d(resolved["data"], binary=resolved["input_binary"],
                         delimiter=resolved["input_delimiter"])
    progress = _Progress()
    for i, result in enumerate(imported):
        progress.say(f"strain [{i + 1}/{len(imported)}] "
                     f"{result.image_label}")
        t0 = time.perf_counter()
        field = calculate_strain_field(result, params)
        out_path = write_strain_csv(field, out_dir,
                                    delimiter=resolved["delimiter"])
        dt = time.perf_counter() - t0
        total = field.valid.size
        print(f"[{i + 1}/{len(imported)}] {result.image_label}: "
              f"{total} windows, {100.0 * field.n_valid / total:.1f}% "
              f"valid, VSG {field.vsg:g} px, {dt:.2f} s "
              f"-> {out_path.name}")


# -------------------------------------------------------------------- synth


def _field_spec(resolved: dict) -> DeformationFieldSpec:
    try:
        kind = FieldKind(str(resolved["field"]).lower())
    except ValueError:
        raise ConfigError(
            f"unknown field kind {resolved['field']!r}; pick from "
            f"{', '.join(k.value for k in FieldKind)}") from None
    shift = resolved["shift"]
    if not isinstance(shift, (list, tuple)) or len(shift) != 2:
        raise ConfigError("shift must be two numbers")
    return DeformationFieldSpec(
        kind=kind, shift=(float(shift[0]), float(shift[1])),
        exx=float(resolved["exx"]), eyy=float(resolved["eyy"]),
        exy=float(resolved["exy"]),
        edge_extension=float(resolved["edge_extension"]),
        amplitude=float(resolved["amplitude"]),
        period_start=float(resolved["period_start"]),
        period_rate=float(resolved["period_rate"]))


def _run_synth(ns) -> None:
    yaml_cfg = _load_yaml_config(ns.config) if ns.config else {}
    flags = {
        "width": ns.width, "height": ns.height,
        "mean_diameter": ns.diameter, "density": ns.density,
        "rng_seed": ns.rng_seed, "field": ns.field,
        "shift": _pair(ns.shift, "--shift") if ns.shift is not None
        else None,
        "exx": ns.exx, "eyy": ns.eyy, "exy": ns.exy,
        "edge_extension": ns.edge_extension, "amplitude": ns.amplitude,
        "period_start": ns.period_start, "period_rate": ns.period_rate,
        "supersample": ns.supersample, "noise": ns.noise,
        "output": ns.output, "log_level": ns.log_level,
    }
    resolved = _resolve(
        _SYNTH_DEFAULTS, yaml_cfg, flags, "synth config",
        coerce={"width": int, "height": int, "rng_seed": int,
                "supersample": int, "mean_diameter": float,
                "density": float, "exx": float, "eyy": float, "exy": float,
                "edge_extension": float, "amplitude": float,
                "period_start": float, "period_rate": float, "noise": float,
                "shift": _as_pair_value})
    _setup_logging(resolved["log_level"])
    out_dir = Path(resolved["output"])
    _echo_config(out_dir, "synth", resolved)

    seed = int(resolved["rng_seed"])
    ref = gen_speckle(int(resolved["width"]), int(resolved["height"]),
                      float(resolved["mean_diameter"]),
                      float(resolved["density"]), seed)
    save_pgm(ref, out_dir / "ref.pgm")
    written = ["ref.pgm"]
    sigma = float(resolved["noise"])
    if sigma > 0.0:
        save_pgm(add_noise(ref, sigma, seed=seed + 1),
                 out_dir / "ref_noisy.pgm")
        written.append("ref_noisy.pgm")
    if resolved["field"]:
        spec = _field_spec(resolved)
        img = deform_image(ref, spec, int(resolved["supersample"]),
                           label="def_0001")
        if sigma > 0.0:
            img = add_noise(img, sigma, seed=seed + 2)
        save_pgm(img, out_dir / "def_0001.pgm")
        written.append("def_0001.pgm")
    print(f"wrote {', '.join(written)} in {out_dir}")


# ---------------------------------------------------------------- metrology


def _run_metrology(ns) -> None:
    yaml_cfg = _load_yaml_config(ns.config) if ns.config else {}
    flags = {
        "reference": ns.reference, "ref_noisy": ns.ref_noisy,
        "deformed": ns.deformed, "synthetic": ns.synthetic,
        "width": ns.width, "height": ns.height, "rng_seed": ns.rng_seed,
        "noise_sigma": ns.noise_sigma, "amplitude": ns.amplitude,
        "period_start": ns.period_start, "period_rate": ns.period_rate,
        "subset_sizes": _int_list(ns.subset_sizes, "--subset-sizes")
        if ns.subset_sizes is not None else None,
        "output": ns.output, "delimiter": ns.delimiter,
        "log_level": ns.log_level,
    }
    resolved = _resolve(
        _METROLOGY_DEFAULTS, yaml_cfg, flags, "metrology config",
        coerce={"width": int, "height": int, "rng_seed": int,
                "noise_sigma": float, "amplitude": float,
                "period_start": float, "period_rate": float,
                "synthetic": _as_bool, "subset_sizes": _as_size_list})
    base = DicParams().to_dict()
    base.update(_METROLOGY_PARAM_OVERRIDES)
    params = _resolve_params(DicParams,
                             {"params": {**base,
                                         **(yaml_cfg.get("params") or {})}},
                             _dic_param_flags(ns))
    params = replace(params, threads=params.resolve_threads())
    params.validate()
    _setup_logging(resolved["log_level"])
    sizes = resolved["subset_sizes"]
    if len(sizes) < 3:
        raise ConfigError("subset_sizes needs at least 3 entries for the "
                          "MEI summary")

    if resolved["synthetic"]:
        seed = int(resolved["rng_seed"])
        ref = gen_speckle(int(resolved["width"]),
                          int(resolved["height"]), seed=seed)
        spec = DeformationFieldSpec(
            kind=FieldKind.STAR_SINUSOID,
            amplitude=float(resolved["amplitude"]),
            period_start=float(resolved["period_start"]),
            period_rate=float(resolved["period_rate"]))
        star = deform_image(ref, spec, label="star")
        noisy = add_noise(ref, float(resolved["noise_sigma"]),
                          seed=seed + 1)
    else:
        for key, flag in (("reference", "--ref"), ("ref_noisy",
                                                   "--ref-noisy"),
                          ("deformed", "--def")):
            if not resolved[key]:
                raise ConfigError(f"{flag} is required unless --synthetic "
                                  "is given")
        ref = load_image(resolved["reference"])
        noisy = load_image(resolved["ref_noisy"])
        star = load_image(resolved["deformed"])

    out_dir = Path(resolved["output"])
    _echo_config(out_dir, "metrology",
                 {**resolved, "params": params.to_dict()})
    report = star_benchmark(
        ref, noisy, star, sizes, params,
        period_start=float(resolved["period_start"]),
        period_rate=float(resolved["period_rate"]),
        amplitude=float(resolved["amplitude"]), output_dir=out_dir,
        delimiter=resolved["delimiter"])
    for e in report.entries:
        print(f"subset {e.subset_size}: noise {e.noise:.5f} px, "
              f"l10 {e.l10:.2f} px, MEI {e.mei:.4f}")
    print(f"MEI summary (mean of three lowest): {report.summary:.4f}")
    print(f"report and figures in {out_dir}")


# ------------------------------------------------------------------ parser


def _add_common(parser) -> None:
    parser.add_argument("--config", help="YAML config file; flags override")
    parser.add_argument("--out", dest="output",
                        help="output directory (default: current)")
    parser.add_argument("--log-level", dest="log_level",
                        choices=["debug", "info", "warning", "error"])


def _add_dic_params(parser) -> None:
    parser.add_argument("--subset-size", type=int, dest="subset_size")
    parser.add_argument("--subset-step", type=int, dest="subset_step")
    parser.add_argument("--max-displacement", type=float,
                        dest="max_displacement")
    parser.add_argument("--cost", choices=["ssd", "nssd", "znssd"])
    parser.add_argument("--shape", choices=["rigid", "affine", "quadratic"])
    parser.add_argument("--method",
                        choices=["multiwindow", "multiwindow_rg"])
    parser.add_argument("--max-iterations", type=int, dest="max_iterations")
    parser.add_argument("--update-precision", type=float,
                        dest="update_precision")
    parser.add_argument("--zncc-threshold", type=float,
                        dest="zncc_threshold")
    parser.add_argument("--threads", type=int)
    parser.add_argument("--mad", action=argparse.BooleanOptionalAction,
                        default=None, help="median outlier filter on the "
                        "initial displacement field")
    parser.add_argument("--mad-k", type=float, dest="mad_k")
    parser.add_argument("--nan-unconverged",
                        action=argparse.BooleanOptionalAction, default=None,
                        dest="nan_unconverged")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subsetdic",
        description="2D subset digital image correlation toolkit")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("dic2d", help="correlate a reference against "
                       "deformed images")
    p.add_argument("--ref", dest="reference", help="reference image path")
    p.add_argument("--def", dest="deformed",
                   help="deformed image path or glob")
    p.add_argument("--roi-border", type=int, dest="roi_border",
                   help="shrink the ROI by this many px on every side")
    p.add_argument("--roi-mask", dest="roi_mask",
                   help="image file; nonzero pixels are the ROI")
    p.add_argument("--seed", help="seed point 'x,y' for the "
                   "reliability-guided pass")
    p.add_argument("--binary", action=argparse.BooleanOptionalAction,
                   default=None, help="write binary result files")
    p.add_argument("--delimiter")
    _add_dic_params(p)
    _add_common(p)
    p.set_defaults(handler=_run_dic2d)

    p = sub.add_parser("strain", help="strain fields from result files")
    p.add_argument("--data", help="result-file glob, e.g. 'dic_results_*'")
    p.add_argument("--input-binary", action=argparse.BooleanOptionalAction,
                   default=None, dest="input_binary")
    p.add_argument("--input-delimiter", dest="input_delimiter")
    p.add_argument("--window-points", type=int, dest="window_points")
    p.add_argument("--basis", choices=["bilinear", "biquadratic"])
    p.add_argument("--formulation",
                   choices=["green_lagrange", "hencky", "euler_almansi",
                            "biot_right", "biot_left"])
    p.add_argument("--delimiter")
    _add_common(p)
    p.set_defaults(handler=_run_strain)

    p = sub.add_parser("synth", help="generate synthetic speckle fixtures")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--diameter", type=float,
                   help="mean speckle diameter in px")
    p.add_argument("--density", type=float)
    p.add_argument("--rng-seed", type=int, dest="rng_seed")
    p.add_argument("--field",
                   choices=[k.value for k in FieldKind],
                   help="also write a deformed image with this field")
    p.add_argument("--shift", help="'u,v' for translation fields")
    p.add_argument("--exx", type=float)
    p.add_argument("--eyy", type=float)
    p.add_argument("--exy", type=float)
    p.add_argument("--edge-extension", type=float, dest="edge_extension")
    p.add_argument("--amplitude", type=float)
    p.add_argument("--period-start", type=float, dest="period_start")
    p.add_argument("--period-rate", type=float, dest="period_rate")
    p.add_argument("--supersample", type=int)
    p.add_argument("--noise", type=float,
                   help="sigma of added sensor noise in gray levels")
    _add_common(p)
    p.set_defaults(handler=_run_synth)

    p = sub.add_parser("metrology",
                       help="noise / resolution / MEI benchmark")
    p.add_argument("--ref", dest="reference")
    p.add_argument("--ref-noisy", dest="ref_noisy")
    p.add_argument("--def", dest="deformed",
                   help="star-pattern deformed image")
    p.add_argument("--synthetic", action=argparse.BooleanOptionalAction,
                   default=None,
                   help="generate the star image set instead of loading")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--rng-seed", type=int, dest="rng_seed")
    p.add_argument("--noise-sigma", type=float, dest="noise_sigma")
    p.add_argument("--amplitude", type=float)
    p.add_argument("--period-start", type=float, dest="period_start")
    p.add_argument("--period-rate", type=float, dest="period_rate")
    p.add_argument("--subset-sizes", dest="subset_sizes",
                   help="comma-separated list, e.g. '11,15,19,21'")
    p.add_argument("--delimiter")
    _add_dic_params(p)
    _add_common(p)
    p.set_defaults(handler=_run_metrology)

    return parser


def parse_and_run(argv) -> int:
    """Run one CLI invocation; returns the process exit code."""
    parser = _build_parser()
    try:
        ns = parser.parse_args(list(argv))
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else 2
    try:
        ns.handler(ns)
        return 0
    except (ConfigError, ImageIoError, UnsupportedFormat, OSError) as exc:
        # bad flags, bad config file, unreadable or unsupported inputs
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DicError as exc:
        # the run itself failed: nothing matched, seed rejected, ...
        print(f"error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(parse_and_run(sys.argv[1:]))
