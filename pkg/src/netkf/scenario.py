"""Scenario files: one JSON document declaring the plant, topology, network
state chain, links, experiment block, and certificate requests.

Validation reports the offending field by dotted path together with the
violated invariant; model-level numeric checks are folded in so a scenario
that loads is ready to simulate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from netkf.errors import ModelError, ScenarioError
from netkf.network import (
    ConstantPolicy,
    DirectSuccess,
    DiscreteGain,
    ExponentialGain,
    FskSuccess,
    GainDistribution,
    LinkModel,
    LognormalGain,
    MarkovNetworkChain,
    PerStatePolicy,
    PointMassGain,
    Policy,
    SaturatedInversePolicy,
    SemiMarkovNetworkChain,
    SuccessFunction,
    TableSuccess,
    Topology,
)
from netkf.plant import PlantModel, SensorSpec, validate_model

SCHEMA_VERSION = 1


@dataclass
class ExperimentSpec:
    trials: int = 100
    horizon: int = 200
    seed: int = 0
    workers: int = 1


@dataclass
class CertificateSpec:
    checks: tuple[str, ...] = ("markov",)
    rank_tolerance: float = 1e-10
    mc_samples: int = 100_000


@dataclass
class Scenario:
    name: str
    plant: PlantModel
    topology: Topology
    chain: MarkovNetworkChain | SemiMarkovNetworkChain
    links: list[LinkModel]
    experiment: ExperimentSpec = field(default_factory=ExperimentSpec)
    certificates: CertificateSpec = field(default_factory=CertificateSpec)

    @property
    def chain_kind(self) -> str:
        return "semi_markov" if isinstance(self.chain, SemiMarkovNetworkChain) else "markov"


def _require(cond: bool, path: str, message: str):
    if not cond:
        raise ScenarioError(f"{path}: {message}")


def _get(d: dict, key: str, path: str, kind=None, required: bool = True, default=None):
    if key not in d:
        if required:
            raise ScenarioError(f"{path}.{key}: missing required field")
        return default
    value = d[key]
    if kind is not None and not isinstance(value, kind):
        names = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise ScenarioError(f"{path}.{key}: expected {names}, got {type(value).__name__}")
    return value


def _matrix(value, path: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{path}: not a numeric matrix ({exc})") from exc
    _require(arr.ndim == 2, path, f"expected a matrix (list of rows), got ndim={arr.ndim}")
    _require(bool(np.all(np.isfinite(arr))), path, "entries must be finite")
    return arr


def _matrix_table(value, path: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{path}: not a list of matrices ({exc})") from exc
    _require(arr.ndim == 3 and arr.shape[0] >= 1, path, "expected a nonempty list of matrices")
    _require(bool(np.all(np.isfinite(arr))), path, "entries must be finite")
    return arr


def _parse_gain(d: dict, path: str) -> GainDistribution:
    kind = _get(d, "kind", path, str)
    try:
        if kind == "point_mass":
            return PointMassGain(float(_get(d, "value", path, (int, float))))
        if kind == "exponential":
            return ExponentialGain(float(_get(d, "mean", path, (int, float))))
        if kind == "lognormal":
            return LognormalGain(
                float(_get(d, "mu", path, (int, float))),
                float(_get(d, "sigma", path, (int, float))),
            )
        if kind == "discrete":
            return DiscreteGain(
                tuple(_get(d, "values", path, list)),
                tuple(_get(d, "probs", path, list)),
            )
    except ModelError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    raise ScenarioError(f"{path}.kind: unknown gain distribution {kind!r}")


def _parse_policy(d: dict | None, path: str) -> Policy:
    if d is None:
        return ConstantPolicy(1.0)
    kind = _get(d, "kind", path, str)
    try:
        if kind == "constant":
            return ConstantPolicy(float(_get(d, "value", path, (int, float))))
        if kind == "saturated_inverse":
            return SaturatedInversePolicy(
                float(_get(d, "gain_target", path, (int, float))),
                float(_get(d, "limit", path, (int, float))),
            )
        if kind == "per_state":
            return PerStatePolicy(tuple(float(v) for v in _get(d, "values", path, list)))
    except ModelError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    raise ScenarioError(f"{path}.kind: unknown policy {kind!r}")


def _parse_success(d: dict | None, path: str) -> SuccessFunction:
    if d is None:
        return FskSuccess()
    kind = _get(d, "kind", path, str)
    try:
        if kind == "fsk":
            return FskSuccess(
                n0=float(_get(d, "n0", path, (int, float), required=False, default=1.0)),
                retries=int(_get(d, "retries", path, int, required=False, default=1)),
            )
        if kind == "direct":
            return DirectSuccess()
        if kind == "table":
            curves = _get(d, "curves", path, list)
            parsed = []
            for i, cv in enumerate(curves):
                cpath = f"{path}.curves[{i}]"
                parsed.append(
                    (
                        float(_get(cv, "bitrate", cpath, (int, float))),
                        tuple(float(x) for x in _get(cv, "x", cpath, list)),
                        tuple(float(y) for y in _get(cv, "values", cpath, list)),
                    )
                )
            return TableSuccess(tuple(parsed))
    except ModelError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    raise ScenarioError(f"{path}.kind: unknown success function {kind!r}")


def _parse_holding(value, path: str) -> np.ndarray:
    if isinstance(value, dict):
        lo, hi = _get(value, "uniform", path, list)
        lo, hi = int(lo), int(hi)
        _require(1 <= lo <= hi, path, f"uniform support must satisfy 1 <= lo <= hi, got [{lo}, {hi}]")
        pmf = np.zeros(hi)
        pmf[lo - 1 :] = 1.0 / (hi - lo + 1)
        return pmf
    try:
        pmf = np.asarray(value, dtype=float).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{path}: not a probability list ({exc})") from exc
    return pmf


def scenario_from_dict(doc: dict, name: str = "<memory>") -> Scenario:
    """Build and validate a Scenario from a parsed JSON document."""
    _require(isinstance(doc, dict), "$", "scenario document must be a JSON object")
    version = _get(doc, "schema_version", "$", int)
    _require(
        version == SCHEMA_VERSION, "$.schema_version",
        f"unsupported version {version}, expected {SCHEMA_VERSION}",
    )
    name = doc.get("name", name)

    # --- plant
    pd = _get(doc, "plant", "$", dict)
    a_table = _matrix_table(_get(pd, "a", "$.plant", list), "$.plant.a")
    q_table = _matrix_table(_get(pd, "q", "$.plant", list), "$.plant.q")
    x0 = np.asarray(_get(pd, "x0", "$.plant", list), dtype=float)
    p0 = _matrix(_get(pd, "p0", "$.plant", list), "$.plant.p0")
    sensor_docs = _get(pd, "sensors", "$.plant", list)
    _require(len(sensor_docs) >= 1, "$.plant.sensors", "need at least one sensor")
    sensors = []
    for i, sd in enumerate(sensor_docs):
        spath = f"$.plant.sensors[{i}]"
        try:
            sensors.append(
                SensorSpec(
                    c=_matrix(_get(sd, "c", spath, list), f"{spath}.c"),
                    r_table=_matrix_table(_get(sd, "r", spath, list), f"{spath}.r"),
                )
            )
        except Exception as exc:
            raise ScenarioError(f"{spath}: {exc}") from exc
    try:
        plant = PlantModel(a_table=a_table, q_table=q_table, sensors=sensors, x0=x0, p0=p0)
    except Exception as exc:
        raise ScenarioError(f"$.plant: {exc}") from exc
    violations = validate_model(plant)
    if violations:
        raise ScenarioError("$.plant: " + "; ".join(violations))

    # --- topology
    td = _get(doc, "topology", "$", dict)
    parents_doc = _get(td, "parents", "$.topology", dict)
    m_count = len(sensors)
    parents = []
    for m in range(1, m_count + 1):
        key = str(m)
        _require(key in parents_doc, f"$.topology.parents.{m}", "missing parent entry")
        parents.append(int(parents_doc[key]))
    try:
        topology = Topology(parents=tuple(parents))
    except ModelError as exc:
        raise ScenarioError(f"$.topology: {exc}") from exc

    # --- chain
    cd = _get(doc, "chain", "$", dict)
    kind = _get(cd, "kind", "$.chain", str)
    initial = cd.get("initial")
    if initial is not None:
        initial = np.asarray(initial, dtype=float)
    try:
        if kind == "markov":
            chain: MarkovNetworkChain | SemiMarkovNetworkChain = MarkovNetworkChain(
                transition=_matrix(_get(cd, "transition", "$.chain", list), "$.chain.transition"),
                initial=initial,
            )
        elif kind == "semi_markov":
            holding_docs = _get(cd, "holding", "$.chain", list)
            holding = tuple(
                _parse_holding(h, f"$.chain.holding[{i}]") for i, h in enumerate(holding_docs)
            )
            chain = SemiMarkovNetworkChain(
                embedded=_matrix(_get(cd, "embedded", "$.chain", list), "$.chain.embedded"),
                holding=holding,
                initial=initial,
            )
        else:
            raise ScenarioError(f"$.chain.kind: unknown chain kind {kind!r}")
    except ModelError as exc:
        raise ScenarioError(f"$.chain: {exc}") from exc
    n_states = chain.n_states

    # --- links
    link_docs = _get(doc, "links", "$", list)
    _require(
        len(link_docs) == m_count,
        "$.links",
        f"need one link per sensor ({m_count}), got {len(link_docs)}",
    )
    links = []
    for i, ld in enumerate(link_docs):
        lpath = f"$.links[{i}]"
        gain_docs = _get(ld, "gain", lpath, list)
        _require(
            len(gain_docs) == n_states,
            f"{lpath}.gain",
            f"need one gain distribution per network state ({n_states}), got {len(gain_docs)}",
        )
        gains = tuple(
            _parse_gain(g, f"{lpath}.gain[{j}]") for j, g in enumerate(gain_docs)
        )
        try:
            links.append(
                LinkModel(
                    gains=gains,
                    success=_parse_success(ld.get("success"), f"{lpath}.success"),
                    power=_parse_policy(ld.get("power"), f"{lpath}.power"),
                    bitrate=_parse_policy(ld.get("bitrate"), f"{lpath}.bitrate"),
                )
            )
        except ModelError as exc:
            raise ScenarioError(f"{lpath}: {exc}") from exc

    # --- experiment / certificates
    ed = doc.get("experiment", {})
    experiment = ExperimentSpec(
        trials=int(_get(ed, "trials", "$.experiment", int, required=False, default=100)),
        horizon=int(_get(ed, "horizon", "$.experiment", int, required=False, default=200)),
        seed=int(_get(ed, "seed", "$.experiment", int, required=False, default=0)),
        workers=int(_get(ed, "workers", "$.experiment", int, required=False, default=1)),
    )
    _require(experiment.trials >= 1, "$.experiment.trials", "must be >= 1")
    _require(experiment.horizon >= 1, "$.experiment.horizon", "must be >= 1")
    _require(experiment.workers >= 1, "$.experiment.workers", "must be >= 1")

    kd = doc.get("certificates", {})
    checks = tuple(_get(kd, "checks", "$.certificates", list, required=False, default=[]))
    for c in checks:
        _require(
            c in ("markov", "semi_markov", "single_sensor"),
            "$.certificates.checks",
            f"unknown certificate {c!r}",
        )
        if c == "semi_markov":
            _require(
                kind == "semi_markov",
                "$.certificates.checks",
                "semi_markov certificate needs a semi_markov chain",
            )
        if c in ("markov", "single_sensor"):
            _require(
                kind == "markov",
                "$.certificates.checks",
                f"{c} certificate needs a markov chain",
            )
    if not checks:
        checks = ("semi_markov",) if kind == "semi_markov" else ("markov",)
    rank_tol = float(
        _get(kd, "rank_tolerance", "$.certificates", (int, float), required=False, default=1e-10)
    )
    _require(0.0 < rank_tol < 1.0, "$.certificates.rank_tolerance", "must lie in (0, 1)")
    mc_samples = int(
        _get(kd, "mc_samples", "$.certificates", int, required=False, default=100_000)
    )
    certificates = CertificateSpec(checks=checks, rank_tolerance=rank_tol, mc_samples=mc_samples)

    return Scenario(
        name=name,
        plant=plant,
        topology=topology,
        chain=chain,
        links=links,
        experiment=experiment,
        certificates=certificates,
    )


def load_scenario(path: str | Path) -> Scenario:
    """Parse and validate a scenario file."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from exc
    return scenario_from_dict(doc, name=path.stem)


def bundled_scenario_names() -> list[str]:
    """Names of the scenario files shipped with the package."""
    root = resources.files("netkf") / "scenarios"
    return sorted(p.name[: -len(".scn")] for p in root.iterdir() if p.name.endswith(".scn"))


def load_bundled(name: str) -> Scenario:
    """Load a scenario shipped with the package by bare name."""
    root = resources.files("netkf") / "scenarios"
    candidate = root / f"{name}.scn"
    if not candidate.is_file():
        raise ScenarioError(
            f"no bundled scenario {name!r}; available: {', '.join(bundled_scenario_names())}"
        )
    doc = json.loads(candidate.read_text())
    return scenario_from_dict(doc, name=name)
