"""Run configuration: one JSON document with nested sections.

Sections: ``model`` (family, capacity, ellipticity, rate table, kernel,
environment law), ``flux`` (grid and run lengths), ``pde`` (mesh and CFL
fraction), ``hydro`` (scales, time, profile, thresholds), ``couple``
(property-suite sizes), ``sim`` (single-trajectory runs), plus the global
``seed`` and ``output_dir``.  Every tolerance and threshold lives here; the
configuration hash (computed over everything except the output directory)
is embedded in all outputs.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .models import (
    IidLaw,
    JumpKernel,
    ModelSpec,
    RateFunction,
    StructureError,
    parse_law,
)
from .pde import StepProfile
from .persist import canonical_hash

FORMAT_VERSION = 1

DEFAULT_THRESHOLDS = {
    "hydro_delta_fraction": 0.05,
    "current_tolerance": 0.05,
    "discrepancy_ratio": 0.2,
    "stability_slack": 0.05,
    "stability_fraction": 0.95,
}


def load_config(path) -> dict:
    path = Path(path)
    try:
        with open(path) as f:
            cfg = json.load(f)
    except OSError as e:
        raise StructureError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise StructureError(f"config parse error at {path}:{e.lineno}:{e.colno}: {e.msg}") from e
    if not isinstance(cfg, dict) or "model" not in cfg:
        raise StructureError(f"config {path} must be an object with a 'model' section")
    cfg.setdefault("seed", 0)
    return cfg


def config_hash(cfg: dict) -> str:
    scrubbed = {k: v for k, v in cfg.items() if k != "output_dir"}
    return canonical_hash(scrubbed)


def _parse_rate(section, K: int) -> RateFunction:
    if section is None:
        raise StructureError("model section needs a rate entry")
    kind = section.get("kind", "table")
    if kind == "exclusion":
        return RateFunction.exclusion(K)
    if kind == "product":
        return RateFunction.product(K)
    if kind == "table":
        return RateFunction(np.asarray(section["table"], dtype=np.float64))
    raise StructureError(f"unknown rate kind {kind!r}")


def build_spec(model: dict) -> ModelSpec:
    family = model.get("family")
    if family is None:
        raise StructureError("model section needs a family")
    K = int(model.get("K", 1))
    c = float(model.get("c", 1.0))
    law = parse_law(model["environment"]) if "environment" in model else IidLaw("point", value=1.0)
    kernel = JumpKernel(model["kernel"]["values"], model["kernel"]["probs"]) if "kernel" in model else None
    extra = dict(model.get("extra", {}))

    if family in ("misanthrope", "generalized"):
        rate = _parse_rate(model.get("rate"), K)
        if kernel is None:
            raise StructureError(f"{family} family needs a jump kernel")
        if family == "generalized" and model.get("style") == "switch":
            extra["rate_b"] = _parse_rate(extra.get("rate_b"), K)
        return ModelSpec(family=family, K=K, c=c, rate=rate, kernel=kernel, law=law,
                         style=model.get("style", ""), extra=extra)
    if family == "kstep":
        spec = ModelSpec(family="kstep", K=K, c=c, k=int(model.get("k", 1)), law=law,
                         kernel=kernel or JumpKernel([-1, 1], [0.5, 0.5]),
                         style=model.get("style", "site_rate"), extra=extra)
        return spec
    if family == "traffic":
        return ModelSpec(family="traffic", K=K, c=c, k=int(model.get("k", 1)), law=law,
                         style=model.get("style", ""), extra=extra)
    raise StructureError(f"unknown family {family!r}")


def parse_profile(section: dict) -> StepProfile:
    kind = section.get("kind", "steps")
    if kind == "riemann":
        return StepProfile.riemann(float(section["lam"]), float(section["rho"]),
                                   float(section.get("window", 1.0)))
    if kind == "steps":
        return StepProfile(np.asarray(section["breakpoints"], dtype=np.float64),
                           np.asarray(section["values"], dtype=np.float64))
    raise StructureError(f"unknown profile kind {kind!r}")


def thresholds(cfg: dict) -> dict:
    out = dict(DEFAULT_THRESHOLDS)
    out.update(cfg.get("hydro", {}).get("thresholds", {}))
    return out
