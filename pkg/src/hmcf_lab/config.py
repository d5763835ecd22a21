"""Run configuration: pydantic models, JSON loading and dotted overrides."""
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .metric import ConformalDipole, MetricParams, NoPerturbation, axial_anisotropy

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "HMCF_LAB_OUTPUT_ROOT"

Vec3 = Tuple[float, float, float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MetricConfig(_Strict):
    family: Literal["flat", "schwarzschild", "conformal-dipole", "axial-anisotropy"] = "schwarzschild"
    m: float = Field(1.0, ge=0.0)
    B: Vec3 = (0.0, 0.0, 0.0)
    q: float = 0.0
    center: Vec3 = (0.0, 0.0, 0.0)
    C0: float = Field(1.0, gt=0.0)

    def to_params(self) -> MetricParams:
        if self.family == "flat":
            return MetricParams(m=0.0, perturbation=NoPerturbation(), C0=self.C0, center=self.center)
        if self.family == "conformal-dipole":
            return MetricParams(m=self.m, perturbation=ConformalDipole(B=self.B), C0=self.C0, center=self.center)
        if self.family == "axial-anisotropy":
            return MetricParams(m=self.m, perturbation=axial_anisotropy(self.q), C0=self.C0, center=self.center)
        return MetricParams(m=self.m, C0=self.C0, center=self.center)


class GridConfig(_Strict):
    n_lat: int = Field(24, ge=4)
    n_radial: int = Field(24, ge=4)
    r_in: Optional[float] = Field(None, gt=1.0)


class FlowConfig(_Strict):
    dt_policy: Literal["fixed", "adaptive"] = "adaptive"
    dt: Optional[float] = Field(None, gt=0.0, description="Step size for the fixed policy")
    cfl_constant: float = Field(0.25, gt=0.0, le=1.0)
    t_max: float = Field(1e6, gt=0.0)
    stop_tol: float = Field(1e-9, gt=0.0)
    filter_strength: float = Field(36.0, ge=0.0)
    checkpoint_every: int = Field(50, ge=0)
    imex: bool = True
    max_steps: int = Field(20000, ge=0)
    vol_step_tol: float = Field(1e-10, gt=0.0)
    dt_max: Optional[float] = Field(None, gt=0.0)
    dt_initial: Optional[float] = Field(None, gt=0.0)

    @model_validator(mode="after")
    def _fixed_needs_dt(self):
        if self.dt_policy == "fixed" and self.dt is None:
            raise ValueError("dt_policy 'fixed' requires dt")
        return self


class HarmonicMode(_Strict):
    l: int = Field(ge=0)
    m: int
    amplitude: float

    @model_validator(mode="after")
    def _order_in_range(self):
        if abs(self.m) > self.l:
            raise ValueError(f"|m| must not exceed l (got l={self.l}, m={self.m})")
        return self


class SpectrumConfig(_Strict):
    k: int = Field(6, ge=1)
    basis_degree: Optional[int] = Field(None, ge=1)
    structure_sigmas: List[float] = Field(default_factory=list)


class FoliationConfig(_Strict):
    sigma_min: float = Field(5.0, gt=1.0)
    with_spectrum: bool = Field(False, description="Attach a stability spectrum report to every leaf")


class CenterConfig(_Strict):
    radii: List[float] = Field(default_factory=lambda: [50.0, 100.0, 200.0])


class RunConfig(_Strict):
    kind: Literal["flow", "foliate", "spectrum", "center", "check"] = "flow"
    metric: MetricConfig = Field(default_factory=MetricConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    flow: FlowConfig = Field(default_factory=FlowConfig)
    sigmas: List[float] = Field(default_factory=lambda: [20.0])
    perturbation: List[HarmonicMode] = Field(default_factory=list)
    spectrum: SpectrumConfig = Field(default_factory=SpectrumConfig)
    foliation: FoliationConfig = Field(default_factory=FoliationConfig)
    center: CenterConfig = Field(default_factory=CenterConfig)
    output_dir: str = "default"
    seed: int = 0
    workers: int = Field(1, ge=1)
    dump_nodes: bool = False

    @model_validator(mode="after")
    def _sigmas_sorted(self):
        if not self.sigmas:
            raise ValueError("sigmas must not be empty")
        if any(b <= a for a, b in zip(self.sigmas, self.sigmas[1:])):
            raise ValueError("sigmas must be strictly increasing")
        return self

    def modes(self) -> List[Tuple[int, int, float]]:
        return [(p.l, p.m, p.amplitude) for p in self.perturbation]


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Apply ``key.path=value`` overrides; values are parsed as JSON when possible."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key.path=value")
        key, raw = item.split("=", 1)
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override '{key}' descends into non-object '{part}'")
            node = child
        node[parts[-1]] = _parse_value(raw)
        logger.debug("override %s = %r", key, node[parts[-1]])
    return data


def validate_config(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid run config: {_format_validation(exc)}") from exc


def load_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> RunConfig:
    data: Dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            with p.open("r") as f:
                data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {p} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {p} must hold a JSON object")
    return validate_config(apply_overrides(data, overrides))


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def resolve_output_dir(config: RunConfig) -> Path:
    out = Path(config.output_dir)
    if out.is_absolute():
        return out
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / out
