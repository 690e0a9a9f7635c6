"""Experiment configuration files: a TOML document with a schema version.

Example:

    schema_version = 1

    [law]
    kind = "stick_breaking"      # stick_breaking | poisson_kingman | mult_subordinator
    factor = "beta_theta1"       # beta_theta1 | beta | constant | pitman_yor (sticks)
    theta = 1.0
    # levy = "gamma"; theta = 1.0; lam = 1.0   (levy-driven kinds)

    [occupancy]
    n = 100000
    depth = 2
    replicates = 4               # replicates written by `nestbox simulate`
    mode = "exact"               # exact | occupied_only
    # s_grid = [0.0, 0.5, 1.0]   # defaults to 21 equispaced points

    [experiment]
    replicates = 200
    n_schedule = [100000, 1000000000]
    master_seed = 20260809
    levels = [1, 2]
    s_points = [0.5, 1.0]
    consistency = true

    [experiment.tolerances]
    correlation = 0.15
    variance_band = [0.8, 1.2]
    ks_alpha = 0.01
    ks_mode = "strict"

The raw text is echoed into the run manifest, so a config re-parses to
an equal object from the manifest alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import laws
from .errors import ConfigError
from .limits import CovBase, LimitSpec
from .occupancy import CountMode, OccupancyConfig, default_s_grid
from .verify import ExperimentConfig, ToleranceProfile

SCHEMA_VERSION = 1

__all__ = ["LoadedConfig", "load_config", "parse_config", "SCHEMA_VERSION"]


@dataclass
class LoadedConfig:
    raw_text: str
    law: laws.FragmentationLaw
    spec_override: LimitSpec | None
    occupancy: dict
    experiment: dict | None

    def occupancy_config(self, n: int | None = None) -> OccupancyConfig:
        occ = dict(self.occupancy)
        occ.pop("replicates", None)
        if n is not None:
            occ["n"] = n
        return OccupancyConfig(**occ)

    @property
    def simulate_replicates(self) -> int:
        return self.occupancy.get("replicates", 1)

    def experiment_config(
        self, seed_override: int | None = None, threads: int = 1
    ) -> ExperimentConfig:
        if self.experiment is None:
            raise ConfigError("config has no [experiment] section")
        exp = dict(self.experiment)
        if seed_override is not None:
            exp["master_seed"] = seed_override
        return ExperimentConfig(
            law=self.law,
            spec=self.spec_override,
            mode=self.occupancy.get("mode", CountMode.EXACT),
            threads=threads,
            **exp,
        )


def _need(section: dict, key: str, types, where: str):
    if key not in section:
        raise ConfigError(f"missing required field {where}.{key}")
    val = section[key]
    if not isinstance(val, types):
        raise ConfigError(
            f"{where}.{key} must be {getattr(types, '__name__', types)}, got {val!r}"
        )
    return val


def _positive(section: dict, key: str, where: str) -> float:
    val = _need(section, key, (int, float), where)
    if not val > 0:
        raise ConfigError(f"{where}.{key} must be > 0, got {val}")
    return float(val)


def _build_law(section: dict) -> laws.FragmentationLaw:
    kind = _need(section, "kind", str, "law")
    try:
        if kind == "stick_breaking":
            factor = _need(section, "factor", str, "law")
            if factor == "beta_theta1":
                return laws.gem(_positive(section, "theta", "law"))
            if factor == "beta":
                return laws.stick_beta(
                    _positive(section, "alpha", "law"), _positive(section, "beta", "law")
                )
            if factor == "constant":
                u = _need(section, "u", (int, float), "law")
                return laws.stick_constant(float(u))
            if factor == "pitman_yor":
                theta = float(_need(section, "theta", (int, float), "law"))
                alpha = float(_need(section, "alpha", (int, float), "law"))
                return laws.pitman_yor(theta, alpha)
            raise ConfigError(f"law.factor {factor!r} is not one of "
                              "beta_theta1/beta/constant/pitman_yor")
        if kind in ("poisson_kingman", "mult_subordinator"):
            levy_name = section.get("levy", "gamma")
            if levy_name != "gamma":
                raise ConfigError(f"law.levy {levy_name!r} is not supported in config files")
            theta = float(section.get("theta", 1.0))
            lam = float(section.get("lam", 1.0))
            if theta <= 0 or lam <= 0:
                raise ConfigError(f"law.theta and law.lam must be > 0, got {(theta, lam)}")
            if kind == "poisson_kingman":
                return laws.poisson_kingman_gamma(theta, lam)
            return laws.mult_subordinator_gamma(theta, lam)
    except ValueError as exc:
        raise ConfigError(f"law: {exc}") from exc
    raise ConfigError(
        f"law.kind {kind!r} is not one of stick_breaking/poisson_kingman/mult_subordinator"
    )


def _build_spec(section: dict) -> LimitSpec:
    base_name = _need(section, "base", str, "limits")
    q = float(section.get("q", 0.0))
    if base_name == "bm":
        base = CovBase.brownian()
    elif base_name == "rl":
        base = CovBase.riemann_liouville(q)
    elif base_name == "tcbm":
        base = CovBase.time_changed_bm(q)
    else:
        raise ConfigError(f"limits.base {base_name!r} is not one of bm/rl/tcbm")
    try:
        return LimitSpec(
            omega=_positive(section, "omega", "limits"),
            gamma_exp=_positive(section, "gamma", "limits"),
            c=_positive(section, "c", "limits"),
            a=float(_need(section, "a", (int, float), "limits")),
            base=base,
        )
    except ValueError as exc:
        raise ConfigError(f"limits: {exc}") from exc


def _build_occupancy(section: dict) -> dict:
    out: dict = {}
    out["n"] = int(_positive(section, "n", "occupancy"))
    out["depth"] = int(section.get("depth", 1))
    if out["depth"] < 1:
        raise ConfigError(f"occupancy.depth must be >= 1, got {out['depth']}")
    if "s_grid" in section:
        grid = np.asarray(section["s_grid"], dtype=float)
    else:
        grid = default_s_grid()
    out["s_grid"] = grid
    mode = section.get("mode", "exact")
    try:
        out["mode"] = CountMode(mode)
    except ValueError:
        raise ConfigError(f"occupancy.mode {mode!r} is not one of exact/occupied_only")
    if "error_budget_cap" in section:
        out["error_budget_cap"] = float(section["error_budget_cap"])
    if "replicates" in section:
        reps = int(section["replicates"])
        if reps < 1:
            raise ConfigError(f"occupancy.replicates must be >= 1, got {reps}")
        out["replicates"] = reps
    try:
        OccupancyConfig(**{k: v for k, v in out.items() if k != "replicates"})
    except ValueError as exc:
        raise ConfigError(f"occupancy: {exc}") from exc
    return out


def _build_experiment(section: dict) -> dict:
    out: dict = {}
    out["replicates"] = int(_positive(section, "replicates", "experiment"))
    sched = _need(section, "n_schedule", list, "experiment")
    out["n_schedule"] = tuple(int(v) for v in sched)
    out["master_seed"] = int(_need(section, "master_seed", int, "experiment"))
    out["levels"] = tuple(int(v) for v in section.get("levels", [1]))
    out["s_points"] = tuple(float(v) for v in section.get("s_points", [0.5, 1.0]))
    out["consistency"] = bool(section.get("consistency", True))
    out["consistency_binding"] = bool(section.get("consistency_binding", False))
    if "variance_marginals" in section:
        out["variance_marginals"] = tuple(
            (int(j), float(s)) for j, s in section["variance_marginals"]
        )
    tols = section.get("tolerances", {})
    kwargs = {}
    if "correlation" in tols:
        kwargs["correlation"] = float(tols["correlation"])
    if "variance_band" in tols:
        band = tols["variance_band"]
        kwargs["variance_band"] = (float(band[0]), float(band[1]))
    if "ks_alpha" in tols:
        kwargs["ks_alpha"] = float(tols["ks_alpha"])
    if "ks_mode" in tols:
        kwargs["ks_mode"] = str(tols["ks_mode"])
    if "se_mult" in tols:
        kwargs["se_mult"] = float(tols["se_mult"])
    if "trend_fraction" in tols:
        kwargs["trend_fraction"] = float(tols["trend_fraction"])
    if "error_budget_cap" in tols:
        kwargs["error_budget_cap"] = float(tols["error_budget_cap"])
    try:
        out["tolerances"] = ToleranceProfile(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"experiment.tolerances: {exc}") from exc
    return out


def parse_config(text: str) -> LoadedConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config does not parse as TOML: {exc}") from exc
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version must be {SCHEMA_VERSION}, got {version!r}"
        )
    if "law" not in doc:
        raise ConfigError("missing required [law] section")
    law = _build_law(doc["law"])
    spec_override = _build_spec(doc["limits"]) if "limits" in doc else None
    if "occupancy" not in doc:
        raise ConfigError("missing required [occupancy] section")
    occupancy = _build_occupancy(doc["occupancy"])
    experiment = _build_experiment(doc["experiment"]) if "experiment" in doc else None
    try:
        if experiment is not None:
            ExperimentConfig(law=law, spec=spec_override, **experiment)
    except ValueError as exc:
        raise ConfigError(f"experiment: {exc}") from exc
    return LoadedConfig(text, law, spec_override, occupancy, experiment)


def load_config(path: str | Path) -> LoadedConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(encoding="utf-8"))
