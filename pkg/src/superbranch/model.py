"""Domain types, validation, presets and config I/O for lattice branching models.

A model describes a measure-valued branching process with immigration whose
state is a nonnegative vector over a finite set of sites.  Branching and
immigration jump measures are represented as finite lists of channels, each
combining an intensity, a spatial placement profile and a parametric law of
the scalar jump size.  All admissibility constants are computable in closed
form from the size-law moments, which keeps every downstream check exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .errors import ConfigError, ModelError, ValidationError

__all__ = [
    "JumpSizeLaw",
    "JumpChannel",
    "MotionGenerator",
    "BranchingMechanism",
    "ImmigrationMechanism",
    "LatticeModel",
    "ConditionCheck",
    "ValidationReport",
    "validate_model",
    "load_config",
    "model_from_dict",
    "model_to_dict",
    "canonical_json",
    "preset_cbi",
    "preset_kp18",
    "preset_random_walk",
    "h_transform",
]


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _require_finite(arr: np.ndarray, name: str):
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name} contains non-finite entries")


# ---------------------------------------------------------------------------
# jump size laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JumpSizeLaw:
    """Parametric law of a scalar jump size z > 0.

    Serves double duty: as the weight part of a finite jump measure on
    (0, inf) (the atomic kind may carry total mass != 1) and, normalized,
    as the sampling distribution of z in Monte Carlo.  Every integral a
    validation or mechanism evaluation needs is available in closed form.
    """

    kind: str
    points: np.ndarray | None = None   # atomic
    weights: np.ndarray | None = None  # atomic
    rate: float | None = None          # exponential / gamma
    shape: float | None = None         # gamma

    def __post_init__(self):
        if self.kind == "atomic":
            pts = _frozen(self.points)
            wts = _frozen(self.weights)
            if pts.ndim != 1 or wts.shape != pts.shape or pts.size == 0:
                raise ModelError("atomic law needs matching 1-d points/weights")
            _require_finite(pts, "atomic points")
            _require_finite(wts, "atomic weights")
            if np.any(pts <= 0):
                raise ModelError("atomic jump points must be > 0")
            if np.any(wts <= 0):
                raise ModelError("atomic jump weights must be > 0")
            object.__setattr__(self, "points", pts)
            object.__setattr__(self, "weights", wts)
        elif self.kind == "exponential":
            if self.rate is None or not (self.rate > 0) or not math.isfinite(self.rate):
                raise ModelError("exponential law needs rate > 0")
        elif self.kind == "gamma":
            ok = (self.rate is not None and self.rate > 0 and math.isfinite(self.rate)
                  and self.shape is not None and self.shape > 0 and math.isfinite(self.shape))
            if not ok:
                raise ModelError("gamma law needs shape > 0 and rate > 0")
        else:
            raise ModelError(f"unknown size-law kind {self.kind!r}")

    # constructors ---------------------------------------------------------

    @classmethod
    def atomic(cls, points, weights=None) -> "JumpSizeLaw":
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        if weights is None:
            weights = np.ones_like(pts)
        return cls(kind="atomic", points=pts, weights=weights)

    @classmethod
    def exponential(cls, rate: float) -> "JumpSizeLaw":
        return cls(kind="exponential", rate=float(rate))

    @classmethod
    def gamma(cls, shape: float, rate: float) -> "JumpSizeLaw":
        return cls(kind="gamma", shape=float(shape), rate=float(rate))

    # moments and Laplace integrals ----------------------------------------

    @property
    def total_mass(self) -> float:
        if self.kind == "atomic":
            return float(np.sum(self.weights))
        return 1.0

    @property
    def mean(self) -> float:
        """First moment of the (unnormalized) measure, int z law(dz)."""
        if self.kind == "atomic":
            return float(np.sum(self.weights * self.points))
        if self.kind == "exponential":
            return 1.0 / self.rate
        return self.shape / self.rate

    @property
    def has_first_moment(self) -> bool:
        return True  # every supported kind has a finite mean

    @property
    def has_log_moment(self) -> bool:
        return True  # implied by the finite first moment

    def one_minus_exp(self, u: float) -> float:
        """int (1 - e^{-z u}) law(dz) for u >= 0."""
        if u <= 0.0:
            return 0.0
        if self.kind == "atomic":
            return float(np.sum(self.weights * -np.expm1(-self.points * u)))
        if self.kind == "exponential":
            return u / (self.rate + u)
        return -math.expm1(self.shape * math.log(self.rate / (self.rate + u)))

    def compensated(self, u: float) -> float:
        """int (e^{-z u} - 1 + z u) law(dz), the centered Laplace integral."""
        return self.mean * u - self.one_minus_exp(u)

    def min_linear_quadratic(self, p: float) -> float:
        """int min(z p, (z p)^2) law(dz) for a profile weight p >= 0."""
        if p <= 0.0:
            return 0.0
        if self.kind == "atomic":
            zp = self.points * p
            return float(np.sum(self.weights * np.minimum(zp, zp * zp)))
        a = self.rate / p  # threshold z = 1/p in units of the rate
        if self.kind == "exponential":
            quad = (p / self.rate) ** 2 * 2.0 * special.gammainc(3, a)
            lin = (p / self.rate) * (1.0 - special.gammainc(2, a))
            return quad + lin
        k = self.shape
        quad = (p / self.rate) ** 2 * k * (k + 1.0) * special.gammainc(k + 2, a)
        lin = (p / self.rate) * k * (1.0 - special.gammainc(k + 1, a))
        return quad + lin

    def min_one_linear(self, p: float) -> float:
        """int min(1, z p) law(dz) for a profile weight p >= 0."""
        if p <= 0.0:
            return 0.0
        if self.kind == "atomic":
            return float(np.sum(self.weights * np.minimum(1.0, self.points * p)))
        a = self.rate / p
        if self.kind == "exponential":
            return (p / self.rate) * special.gammainc(2, a) + math.exp(-a)
        k = self.shape
        return (p / self.rate) * k * special.gammainc(k + 1, a) + (1.0 - special.gammainc(k, a))

    # sampling --------------------------------------------------------------

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n sizes from the normalized law."""
        if self.kind == "atomic":
            probs = self.weights / self.total_mass
            return rng.choice(self.points, size=n, p=probs)
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.rate, size=n)
        return rng.gamma(self.shape, 1.0 / self.rate, size=n)

    # serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        if self.kind == "atomic":
            return {"kind": "atomic", "points": self.points.tolist(),
                    "weights": self.weights.tolist()}
        if self.kind == "exponential":
            return {"kind": "exponential", "rate": self.rate}
        return {"kind": "gamma", "shape": self.shape, "rate": self.rate}

    @classmethod
    def from_dict(cls, d: dict) -> "JumpSizeLaw":
        kind = d.get("kind")
        if kind == "atomic":
            return cls.atomic(d["points"], d["weights"])
        if kind == "exponential":
            return cls.exponential(d["rate"])
        if kind == "gamma":
            return cls.gamma(d["shape"], d["rate"])
        raise ModelError(f"unknown size-law kind {kind!r}")


# ---------------------------------------------------------------------------
# channels and mechanisms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JumpChannel:
    """One atom family of a jump measure: a jump adds z * profile to the state.

    ``intensity`` is a rate per unit of local mass for branching channels and
    an absolute rate for immigration channels.  ``site`` is the source site of
    a branching channel and None for immigration.  ``compensated`` marks the
    local first-moment compensation of the branching mechanism; such channels
    must place their mass on the source site only.
    """

    intensity: float
    profile: np.ndarray
    size: JumpSizeLaw
    compensated: bool = False
    site: int | None = None

    def __post_init__(self):
        prof = _frozen(self.profile)
        if prof.ndim != 1:
            raise ModelError("channel profile must be a vector")
        _require_finite(prof, "channel profile")
        if not math.isfinite(self.intensity):
            raise ModelError("channel intensity must be finite")
        object.__setattr__(self, "profile", prof)

    @property
    def event_rate(self) -> float:
        """Poisson event rate carried by the channel (per unit mass if branching)."""
        return self.intensity * self.size.total_mass

    @property
    def mean_vector(self) -> np.ndarray:
        """First-moment vector int nu channel(d nu) = intensity * m1 * profile."""
        return self.intensity * self.size.mean * self.profile

    def to_dict(self) -> dict:
        d = {"intensity": self.intensity, "profile": self.profile.tolist(),
             "size": self.size.to_dict()}
        if self.site is not None:
            d["site"] = self.site
            d["compensated"] = self.compensated
        return d


@dataclass(frozen=True)
class MotionGenerator:
    """Conservative Markov-chain motion given by off-diagonal rates q(x, y)."""

    q: np.ndarray

    def __post_init__(self):
        q = _frozen(self.q)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ModelError("motion rate matrix must be square")
        _require_finite(q, "motion rates")
        object.__setattr__(self, "q", q)

    @property
    def d(self) -> int:
        return self.q.shape[0]

    @property
    def total_rates(self) -> np.ndarray:
        return self.q.sum(axis=1)

    @property
    def max_total_rate(self) -> float:
        """Uniform bound on the total jump rate (finite automatically here)."""
        return float(self.total_rates.max()) if self.d else 0.0

    def generator_matrix(self) -> np.ndarray:
        a = self.q.copy()
        np.fill_diagonal(a, a.diagonal() - self.total_rates)
        return a

    def weighted_drift_constant(self, h: np.ndarray) -> float:
        """Minimal C with sum_y h(y) q(x,y) <= C h(x) + h(x) sum_y q(x,y)."""
        lhs = self.q @ h
        slack = (lhs - h * self.total_rates) / h
        return float(max(0.0, slack.max())) if self.d else 0.0


@dataclass(frozen=True)
class BranchingMechanism:
    """Per-site linear rate b, diffusion coefficient c, deterministic transfer
    matrix eta and a finite family of branching jump channels."""

    b: np.ndarray
    c: np.ndarray
    eta: np.ndarray
    h1_channels: tuple[JumpChannel, ...] = ()

    def __post_init__(self):
        b = _frozen(self.b)
        c = _frozen(self.c)
        eta = _frozen(self.eta)
        if b.ndim != 1 or c.shape != b.shape:
            raise ModelError("b and c must be vectors of equal length")
        if eta.shape != (b.size, b.size):
            raise ModelError("eta must be a d x d matrix")
        for name, arr in (("b", b), ("c", c), ("eta", eta)):
            _require_finite(arr, name)
        channels = tuple(self.h1_channels)
        d = b.size
        for ch in channels:
            if ch.site is None or not (0 <= ch.site < d):
                raise ModelError("branching channel needs a valid source site")
            if ch.profile.size != d:
                raise ModelError("branching channel profile has wrong length")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "h1_channels", channels)


@dataclass(frozen=True)
class ImmigrationMechanism:
    """Deterministic immigration rate beta plus Poisson jump channels."""

    beta: np.ndarray
    h2_channels: tuple[JumpChannel, ...] = ()

    def __post_init__(self):
        beta = _frozen(self.beta)
        if beta.ndim != 1:
            raise ModelError("beta must be a vector")
        _require_finite(beta, "beta")
        channels = tuple(self.h2_channels)
        for ch in channels:
            if ch.site is not None or ch.compensated:
                raise ModelError("immigration channels carry no site/compensation")
            if ch.profile.size != beta.size:
                raise ModelError("immigration channel profile has wrong length")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "h2_channels", channels)

    @property
    def has_first_moment(self) -> bool:
        return all(ch.size.has_first_moment for ch in self.h2_channels)

    @property
    def has_log_moment(self) -> bool:
        return all(ch.size.has_log_moment for ch in self.h2_channels)


@dataclass(frozen=True)
class LatticeModel:
    """Full specification of the process on a finite ordered site set."""

    sites: tuple
    h: np.ndarray
    motion: MotionGenerator
    branching: BranchingMechanism
    immigration: ImmigrationMechanism

    def __post_init__(self):
        sites = tuple(self.sites)
        h = _frozen(self.h)
        d = len(sites)
        if d < 1:
            raise ModelError("need at least one site")
        if h.shape != (d,):
            raise ModelError("h must have one weight per site")
        _require_finite(h, "h")
        if self.motion.d != d or self.branching.b.size != d or self.immigration.beta.size != d:
            raise ModelError("component dimensions disagree with the site count")
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "h", h)

    @property
    def d(self) -> int:
        return len(self.sites)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionCheck:
    name: str
    constant: float
    passed: bool
    detail: str = ""

    def as_dict(self) -> dict:
        return {"name": self.name, "constant": self.constant,
                "passed": self.passed, "detail": self.detail}


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[ConditionCheck, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def constant(self, name: str) -> float:
        for c in self.checks:
            if c.name == name:
                return c.constant
        raise KeyError(name)

    def summary(self) -> str:
        bad = [c for c in self.checks if not c.passed]
        if not bad:
            return "all conditions hold"
        return "; ".join(f"{c.name}: {c.detail or 'failed'}" for c in bad)

    def as_dict(self) -> dict:
        return {"valid": self.ok, "checks": [c.as_dict() for c in self.checks]}


def _off_site_weight(profile: np.ndarray, h: np.ndarray, site: int) -> float:
    w = float(profile @ h)
    return w - float(profile[site] * h[site])


def validate_model(model: LatticeModel) -> ValidationReport:
    """Check the admissibility conditions and compute their minimal constants.

    Sign constraints are reported (not raised) so that a single report names
    every offending field; the quantitative conditions are the bounded-motion
    constant, the weighted motion drift, the transfer-kernel bound, the
    branching moment bound and the immigration integrability constant.
    """
    checks: list[ConditionCheck] = []
    h = model.h
    br = model.branching
    im = model.immigration

    bad = [f"site {i}" for i in np.flatnonzero(~(h > 0))]
    checks.append(ConditionCheck(
        "positive_weights", float(h.min()), not bad,
        "nonpositive h at " + ", ".join(bad) if bad else ""))

    sign_problems = []
    q = model.motion.q
    if np.any(np.diag(q) != 0):
        sign_problems.append("motion.q diagonal must be zero")
    if np.any(q < 0):
        sign_problems.append("motion.q has a negative rate")
    if np.any(br.c < 0):
        sign_problems.append("branching.c has a negative entry")
    if np.any(br.eta < 0):
        sign_problems.append("branching.eta has a negative entry")
    if np.any(im.beta < 0):
        sign_problems.append("immigration.beta has a negative entry")
    for label, chans in (("h1", br.h1_channels), ("h2", im.h2_channels)):
        for k, ch in enumerate(chans):
            if ch.intensity < 0:
                sign_problems.append(f"{label}_channels[{k}].intensity negative")
            if np.any(ch.profile < 0):
                sign_problems.append(f"{label}_channels[{k}].profile negative")
    checks.append(ConditionCheck("nonnegative_rates", 0.0, not sign_problems,
                                 "; ".join(sign_problems)))

    profile_problems = []
    for label, chans in (("h1", br.h1_channels), ("h2", im.h2_channels)):
        for k, ch in enumerate(chans):
            if not np.any(ch.profile > 0) or float(ch.profile @ np.abs(h)) == 0.0:
                profile_problems.append(f"{label}_channels[{k}] has empty profile support")
    checks.append(ConditionCheck("profile_support", 0.0, not profile_problems,
                                 "; ".join(profile_problems)))

    local_problems = []
    for k, ch in enumerate(br.h1_channels):
        if ch.compensated:
            off = ch.profile.copy()
            off[ch.site] = 0.0
            if np.any(off != 0):
                local_problems.append(f"h1_channels[{k}] compensated but not local")
    checks.append(ConditionCheck("compensated_local", 0.0, not local_problems,
                                 "; ".join(local_problems)))

    structural_ok = all(c.passed for c in checks)
    habs = np.abs(h)  # constants still reported when h is invalid
    hsafe = np.where(habs > 0, habs, 1.0)

    checks.append(ConditionCheck(
        "bounded_motion", model.motion.max_total_rate, True))
    checks.append(ConditionCheck(
        "weighted_motion_drift", model.motion.weighted_drift_constant(hsafe),
        structural_ok))

    c_transfer = float(((br.eta @ habs) / hsafe).max())
    checks.append(ConditionCheck("transfer_weight", c_transfer, structural_ok))

    per_site = np.zeros(model.d)
    for ch in br.h1_channels:
        p = float(ch.profile @ habs)
        p_off = _off_site_weight(ch.profile, habs, ch.site)
        per_site[ch.site] += abs(ch.intensity) * (
            ch.size.min_linear_quadratic(p) + ch.size.mean * p_off)
    c_branch = float((per_site / hsafe).max())
    checks.append(ConditionCheck("branching_moment", c_branch, structural_ok))

    c_immig = 0.0
    for ch in im.h2_channels:
        c_immig += abs(ch.intensity) * ch.size.min_one_linear(float(ch.profile @ habs))
    checks.append(ConditionCheck("immigration_integrability", c_immig,
                                 structural_ok and math.isfinite(c_immig)))

    first_moment = 0.0
    for ch in im.h2_channels:
        first_moment += abs(ch.intensity) * ch.size.mean * float(ch.profile @ habs)
    checks.append(ConditionCheck(
        "immigration_first_moment", first_moment, im.has_first_moment,
        "" if im.has_first_moment else "an h2 channel lacks a first moment"))
    checks.append(ConditionCheck(
        "immigration_log_moment", 0.0, im.has_log_moment,
        "" if im.has_log_moment else "an h2 channel lacks a log moment"))

    return ValidationReport(tuple(checks))


# ---------------------------------------------------------------------------
# JSON schema and config I/O
# ---------------------------------------------------------------------------

_SIZE_SCHEMA = {
    "type": "object",
    "oneOf": [
        {
            "properties": {
                "kind": {"const": "atomic"},
                "points": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                           "minItems": 1},
                "weights": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                            "minItems": 1},
            },
            "required": ["kind", "points", "weights"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "exponential"},
                "rate": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["kind", "rate"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "gamma"},
                "shape": {"type": "number", "exclusiveMinimum": 0},
                "rate": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["kind", "shape", "rate"],
            "additionalProperties": False,
        },
    ],
}

_VECTOR = {"type": "array", "items": {"type": "number"}}
_NONNEG_VECTOR = {"type": "array", "items": {"type": "number", "minimum": 0}}

MODEL_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "sites": {"type": "array", "minItems": 1,
                  "items": {"type": ["string", "number", "integer"]}},
        "h": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "motion": {
            "type": "object",
            "properties": {"q": {"type": "array", "items": _NONNEG_VECTOR}},
            "required": ["q"],
            "additionalProperties": False,
        },
        "branching": {
            "type": "object",
            "properties": {
                "b": _VECTOR,
                "c": _NONNEG_VECTOR,
                "eta": {"type": "array", "items": _NONNEG_VECTOR},
                "h1_channels": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "properties": {
                            "site": {"type": "integer", "minimum": 0},
                            "intensity": {"type": "number", "minimum": 0},
                            "profile": _NONNEG_VECTOR,
                            "size": _SIZE_SCHEMA,
                            "compensated": {"type": "boolean"},
                        },
                        "required": ["site", "intensity", "profile", "size"],
                        "additionalProperties": False,
                    },
                },
            },
            "required": ["b", "c", "eta"],
            "additionalProperties": False,
        },
        "immigration": {
            "type": "object",
            "properties": {
                "beta": _NONNEG_VECTOR,
                "h2_channels": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "properties": {
                            "intensity": {"type": "number", "minimum": 0},
                            "profile": _NONNEG_VECTOR,
                            "size": _SIZE_SCHEMA,
                        },
                        "required": ["intensity", "profile", "size"],
                        "additionalProperties": False,
                    },
                },
            },
            "required": ["beta"],
            "additionalProperties": False,
        },
    },
    "required": ["sites", "h", "motion", "branching", "immigration"],
    "additionalProperties": False,
}


def model_to_dict(model: LatticeModel) -> dict:
    return {
        "sites": list(model.sites),
        "h": model.h.tolist(),
        "motion": {"q": model.motion.q.tolist()},
        "branching": {
            "b": model.branching.b.tolist(),
            "c": model.branching.c.tolist(),
            "eta": model.branching.eta.tolist(),
            "h1_channels": [ch.to_dict() for ch in model.branching.h1_channels],
        },
        "immigration": {
            "beta": model.immigration.beta.tolist(),
            "h2_channels": [ch.to_dict() for ch in model.immigration.h2_channels],
        },
    }


def model_from_dict(data: dict) -> LatticeModel:
    br = data["branching"]
    im = data["immigration"]
    h1 = tuple(
        JumpChannel(intensity=float(ch["intensity"]), profile=ch["profile"],
                    size=JumpSizeLaw.from_dict(ch["size"]),
                    compensated=bool(ch.get("compensated", False)),
                    site=int(ch["site"]))
        for ch in br.get("h1_channels", []))
    h2 = tuple(
        JumpChannel(intensity=float(ch["intensity"]), profile=ch["profile"],
                    size=JumpSizeLaw.from_dict(ch["size"]))
        for ch in im.get("h2_channels", []))
    return LatticeModel(
        sites=tuple(data["sites"]),
        h=data["h"],
        motion=MotionGenerator(q=np.asarray(data["motion"]["q"], dtype=float)),
        branching=BranchingMechanism(b=br["b"], c=br["c"], eta=br["eta"], h1_channels=h1),
        immigration=ImmigrationMechanism(beta=im["beta"], h2_channels=h2),
    )


def canonical_json(model: LatticeModel) -> str:
    """Canonical serialization: sorted keys, minimal separators, repr floats."""
    return json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))


def load_config(path) -> LatticeModel:
    """Load, schema-check and validate a model config file."""
    import jsonschema

    p = Path(path)
    try:
        raw = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e}") from e
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    validator = jsonschema.Draft202012Validator(MODEL_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        pointer = "/" + "/".join(str(s) for s in err.absolute_path)
        raise ConfigError(f"schema violation at {pointer}: {err.message}", pointer=pointer)
    try:
        model = model_from_dict(data)
    except ModelError as e:
        raise ConfigError(str(e)) from e
    report = validate_model(model)
    if not report.ok:
        raise ValidationError(report)
    return model


def save_config(model: LatticeModel, path) -> None:
    Path(path).write_text(canonical_json(model) + "\n")


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def preset_cbi(b: float, c: float, beta: float) -> LatticeModel:
    """Single-site continuous-state branching model with immigration."""
    return LatticeModel(
        sites=(0,),
        h=[1.0],
        motion=MotionGenerator(q=[[0.0]]),
        branching=BranchingMechanism(b=[float(b)], c=[float(c)], eta=[[0.0]]),
        immigration=ImmigrationMechanism(beta=[float(beta)]),
    )


def preset_kp18(b, c, g, d, profiles, local_jumps=None, nonlocal_jumps=None,
                beta=None, h2_channels=()) -> LatticeModel:
    """Lattice model with local CSBP branching plus nonlocal offspring placement.

    Per site x the branching combines local terms (b, c and an optional
    compensated local jump family ``local_jumps[x] = (intensity, law)``) with
    a nonlocal part of strength ``g[x]``: deterministic transfer ``d[x]``
    along the probability profile ``profiles[x]`` and an optional jump family
    ``nonlocal_jumps[x] = (intensity, law)`` placing mass z * profiles[x].
    Profiles must put zero weight on their own site.
    """
    b = np.atleast_1d(np.asarray(b, dtype=float))
    n = b.size
    c = np.broadcast_to(np.asarray(c, dtype=float), (n,)).copy()
    g = np.broadcast_to(np.asarray(g, dtype=float), (n,)).copy()
    d = np.broadcast_to(np.asarray(d, dtype=float), (n,)).copy()
    profiles = np.asarray(profiles, dtype=float)
    if profiles.shape != (n, n):
        raise ModelError("profiles must be an n x n matrix of placement rows")
    if np.any(np.diag(profiles) != 0):
        raise ModelError("nonlocal profiles must place zero mass on their own site")
    eta = (g * d)[:, None] * profiles

    channels: list[JumpChannel] = []
    local_jumps = local_jumps or [None] * n
    nonlocal_jumps = nonlocal_jumps or [None] * n
    for x in range(n):
        if local_jumps[x] is not None:
            intensity, law = local_jumps[x]
            prof = np.zeros(n)
            prof[x] = 1.0
            channels.append(JumpChannel(intensity=float(intensity), profile=prof,
                                        size=law, compensated=True, site=x))
        if nonlocal_jumps[x] is not None and g[x] > 0:
            intensity, law = nonlocal_jumps[x]
            channels.append(JumpChannel(intensity=float(g[x] * intensity),
                                        profile=profiles[x], size=law, site=x))

    beta = np.zeros(n) if beta is None else np.asarray(beta, dtype=float)
    return LatticeModel(
        sites=tuple(range(n)),
        h=np.ones(n),
        motion=MotionGenerator(q=np.zeros((n, n))),
        branching=BranchingMechanism(b=b, c=c, eta=eta, h1_channels=tuple(channels)),
        immigration=ImmigrationMechanism(beta=beta, h2_channels=tuple(h2_channels)),
    )


def preset_random_walk(d: int, step_rate, b, c, beta) -> LatticeModel:
    """Nearest-neighbour random walk on a d-cycle with local branching.

    ``step_rate`` may be a scalar (symmetric) or a (left, right) pair.
    ``beta`` may be a scalar (mass immigrating at site 0) or a full vector.
    """
    if d < 1:
        raise ModelError("need at least one site")
    try:
        left, right = step_rate
    except TypeError:
        left = right = float(step_rate)
    q = np.zeros((d, d))
    if d > 1:
        for x in range(d):
            q[x, (x + 1) % d] += right
            q[x, (x - 1) % d] += left
    beta_vec = np.zeros(d)
    beta_arr = np.asarray(beta, dtype=float)
    if beta_arr.ndim == 0:
        beta_vec[0] = float(beta_arr)
    else:
        beta_vec = beta_arr
    return LatticeModel(
        sites=tuple(range(d)),
        h=np.ones(d),
        motion=MotionGenerator(q=q),
        branching=BranchingMechanism(
            b=np.full(d, float(b)), c=np.full(d, float(c)), eta=np.zeros((d, d))),
        immigration=ImmigrationMechanism(beta=beta_vec),
    )


def h_transform(model: LatticeModel) -> LatticeModel:
    """Rescale a model to unit site weights.

    The returned model has h = 1 and reproduces the original cumulant flow
    through v_t = h * u_t(f / h): motion rates pick up the factor h(y)/h(x)
    (the non-conservative remainder moves into the linear rate), the diffusion
    coefficient is multiplied by h, transfer and jump placements are rescaled
    so that jump configurations map nu -> h * nu.
    """
    h = model.h
    d = model.d
    q = model.motion.q
    q_new = q * (h[None, :] / h[:, None])
    kappa = q_new.sum(axis=1) - q.sum(axis=1)

    br = model.branching
    channels = []
    for ch in br.h1_channels:
        channels.append(JumpChannel(
            intensity=ch.intensity / h[ch.site],
            profile=ch.profile * h,
            size=ch.size,
            compensated=ch.compensated,
            site=ch.site,
        ))
    im = model.immigration
    h2 = [JumpChannel(intensity=ch.intensity, profile=ch.profile * h, size=ch.size)
          for ch in im.h2_channels]

    return LatticeModel(
        sites=model.sites,
        h=np.ones(d),
        motion=MotionGenerator(q=q_new),
        branching=BranchingMechanism(
            b=br.b - kappa,
            c=br.c * h,
            eta=br.eta * (h[None, :] / h[:, None]),
            h1_channels=tuple(channels),
        ),
        immigration=ImmigrationMechanism(beta=im.beta * h, h2_channels=tuple(h2)),
    )
