"""YAML run configuration.

One file describes the vehicle, the actuator, the controller, the platoon
scenario and the analysis settings. Every section is optional and falls back
to the shipped defaults. Unknown keys are rejected, and errors carry the line
number of the offending node so typos are easy to find.

Speeds are in m/s. ``V0_mph`` and ``speeds_mph`` are accepted as
convenience spellings and converted on load (1 mph = 0.44704 m/s).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .controller import ControllerConfig, GainVector
from .platoon_sim import DEFAULT_VEHICLE, LeadPathSpec, ScenarioConfig
from .stability import DEFAULT_MARGIN, DESIGN_SPEEDS_MPH, GridSpec
from .vehicle_model import MPH, ActuationParams, VehicleParams

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}


def _obj(props: dict, required: tuple = ()) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": props, "required": list(required)}


_RANGE = {"type": "array", "items": [_NUM, _NUM, {"type": "integer", "minimum": 2}],
          "minItems": 3, "maxItems": 3}

SCHEMA = _obj({
    "vehicle": _obj({
        "m_v": _POS, "I_z": _POS, "C_f": _POS, "C_r": _POS, "a": _POS, "b": _POS,
        "K_sg": {"type": ["number", "null"]},
    }),
    "actuation": _obj({"zeta": _POS, "omega_n": _POS}),
    "controller": _obj({
        "gains": _obj({"k_e": _NUM, "k_theta": _NUM, "k_omega": _NUM}, ("k_e", "k_theta", "k_omega")),
        "alpha": {"type": "number", "minimum": 0, "maximum": 1},
    }),
    "scenario": _obj({
        "n_vehicles": {"type": "integer", "minimum": 2},
        "V0": _POS, "V0_mph": _POS,
        "spacing": _POS,
        "trace_interval": _POS,
        "comm_delay": _NONNEG,
        "duration": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "dt": _POS,
        "record_interval": _POS,
        "instantaneous_actuation": {"type": "boolean"},
    }),
    "lead_path": _obj({
        "straight_in": _POS, "change_length": _POS, "lane_offset": _NUM,
        "dwell": _POS, "return_length": _POS, "straight_out": _POS,
    }),
    "trajectory": _obj({"L_preview": _POS, "fit_threshold": _POS, "r_line": _POS, "r_min": _POS}),
    "stability": _obj({
        "speeds": {"type": "array", "items": _POS},
        "speeds_mph": {"type": "array", "items": _POS},
        "margin": _NONNEG,
        "grid": _obj({
            "k_e": _RANGE, "k_theta": _RANGE,
            "k_omega": {"type": "array", "items": _NUM, "minItems": 1},
        }),
    }),
    "string_stability": _obj({
        "V0": _POS, "V0_mph": _POS,
        "alphas": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}, "minItems": 1},
        "omega_min": _POS, "omega_max": _POS,
        "n_omega": {"type": "integer", "minimum": 2},
    }),
    "output": _obj({"dir": {"type": "string"}}),
})


class ConfigError(Exception):
    """Invalid configuration. ``line`` is 1-based, or None when not tied to a node."""

    def __init__(self, message: str, source: str = "<config>", line: int | None = None):
        self.message, self.source, self.line = message, source, line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class StabilitySettings:
    speeds: tuple[float, ...] = tuple(v * MPH for v in DESIGN_SPEEDS_MPH)
    margin: float = DEFAULT_MARGIN
    grid: GridSpec = field(default_factory=GridSpec)


@dataclass(frozen=True)
class StringSettings:
    V0: float = 20.0
    alphas: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    omega_min: float = 1e-3
    omega_max: float = 1e3
    n_omega: int = 4000

    def omegas(self) -> np.ndarray:
        return np.logspace(np.log10(self.omega_min), np.log10(self.omega_max), self.n_omega)


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    stability: StabilitySettings = field(default_factory=StabilitySettings)
    string_stability: StringSettings = field(default_factory=StringSettings)
    output_dir: str = "out"

    def resolved(self) -> dict:
        """Fully expanded, SI-only view used for --dry-run and hashing."""
        sc = self.scenario
        return {
            "vehicle": asdict(sc.vehicle),
            "actuation": asdict(sc.actuation),
            "controller": {"gains": sc.controller.gains._asdict(), "alpha": sc.controller.alpha},
            "scenario": {
                "n_vehicles": sc.n_vehicles, "V0": sc.V0, "spacing": sc.spacing,
                "trace_interval": sc.trace_interval, "comm_delay": sc.comm_delay,
                "duration": sc.resolved_duration, "dt": sc.dt, "record_interval": sc.record_interval,
                "instantaneous_actuation": sc.instantaneous_actuation,
            },
            "lead_path": asdict(sc.lead_path),
            "trajectory": {"L_preview": sc.L_preview, "fit_threshold": sc.fit_threshold,
                           "r_line": sc.r_line, "r_min": sc.r_min},
            "stability": {
                "speeds": list(self.stability.speeds), "margin": self.stability.margin,
                "grid": {"k_e": list(self.stability.grid.k_e), "k_theta": list(self.stability.grid.k_theta),
                         "k_omega": [float(k) for k in self.stability.grid.k_omega]},
            },
            "string_stability": {**asdict(self.string_stability),
                                 "alphas": list(self.string_stability.alphas)},
            "output": {"dir": self.output_dir},
        }

    def config_hash(self) -> str:
        """sha256 of the canonical JSON of the resolved config; identical on every platform."""
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _node_at(node, path) -> yaml.Node | None:
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == key:
                    nxt = v
                    break
            if nxt is None:
                return node
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            return node
    return node


def _unknown_key_node(node, error) -> yaml.Node | None:
    # point at the stray key itself rather than at its parent mapping
    if error.validator != "additionalProperties" or not isinstance(node, yaml.MappingNode):
        return None
    allowed = set(error.schema.get("properties", {}))
    for k, _ in node.value:
        if k.value not in allowed:
            return k
    return None


def _line(node) -> int | None:
    return None if node is None else node.start_mark.line + 1


def _floats(d: dict, keep: tuple = ()) -> dict:
    """Turn integer values into floats so `a: 1` and `a: 1.0` hash alike."""
    return {k: float(v) if isinstance(v, int) and not isinstance(v, bool) and k not in keep else v
            for k, v in d.items()}


def _grid_range(r) -> tuple[float, float, int]:
    lo, hi, n = r
    if not lo < hi:
        raise ValueError(f"grid range {list(r)} must have low < high")
    return float(lo), float(hi), int(n)


def _pick_speed(sec: dict, key: str, default, src: str, root, path):
    si, mph = sec.get(key), sec.get(key + "_mph")
    if si is not None and mph is not None:
        raise ConfigError(f"give either {key} or {key}_mph, not both", src, _line(_node_at(root, path)))
    if mph is not None:
        return [v * MPH for v in mph] if isinstance(mph, list) else mph * MPH
    return default if si is None else si


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", source,
                          None if mark is None else mark.line + 1) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", source, _line(root))

    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        node = _node_at(root, list(err.absolute_path))
        node = _unknown_key_node(node, err) or node
        loc = ".".join(map(str, err.absolute_path)) or "<root>"
        raise ConfigError(f"{loc}: {err.message}", source, _line(node))

    current = "vehicle"

    def sec(name):
        nonlocal current
        current = name
        return data.get(name) or {}

    try:
        v = sec("vehicle")
        vehicle = VehicleParams(**{**asdict(DEFAULT_VEHICLE), "K_sg": None, **_floats(v)})
        actuation = ActuationParams(**_floats(sec("actuation")))
        c = sec("controller")
        gains = GainVector(**_floats(c["gains"])) if "gains" in c else ControllerConfig().gains
        controller = ControllerConfig(gains, float(c.get("alpha", ControllerConfig().alpha)))
        s = _floats(sec("scenario"), keep=("n_vehicles",))
        s["V0"] = float(_pick_speed(s, "V0", ScenarioConfig().V0, source, root, ["scenario", "V0"]))
        s.pop("V0_mph", None)
        traj = _floats(sec("trajectory"))
        lead = LeadPathSpec(**_floats(sec("lead_path")))
        current = "scenario"
        scenario = ScenarioConfig(**s, **traj, lead_path=lead, controller=controller,
                                  vehicle=vehicle, actuation=actuation)
        st = sec("stability")
        speeds = _pick_speed(st, "speeds", list(StabilitySettings().speeds), source, root, ["stability", "speeds"])
        g = st.get("grid") or {}
        base = GridSpec()
        grid = GridSpec(
            _grid_range(g.get("k_e", base.k_e)), _grid_range(g.get("k_theta", base.k_theta)),
            tuple(float(k) for k in g.get("k_omega", base.k_omega)),
        )
        stability = StabilitySettings(tuple(float(x) for x in speeds), float(st.get("margin", DEFAULT_MARGIN)), grid)
        ss = _floats(sec("string_stability"), keep=("n_omega",))
        ss["V0"] = float(_pick_speed(ss, "V0", scenario.V0, source, root, ["string_stability", "V0"]))
        ss.pop("V0_mph", None)
        if "alphas" in ss:
            ss["alphas"] = tuple(float(a) for a in ss["alphas"])
        strings = StringSettings(**ss)
        if strings.omega_min >= strings.omega_max:
            raise ValueError("string_stability.omega_min must be below omega_max")
    except (ValueError, TypeError) as exc:
        msg = str(exc)
        if msg.startswith("lead_path."):
            current, msg = msg.split(" ", 1)[0].split(".")[0], msg
        else:
            msg = f"{current}: {msg}"
        node = next((k for k, _ in getattr(root, "value", ()) if k.value == current), None)
        raise ConfigError(msg, source, _line(node)) from None

    return RunConfig(scenario, stability, strings, sec("output").get("dir", "out"))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc.strerror}", str(path)) from None
    return parse_config(text, str(path))


def shipped_config(name: str) -> Path:
    """Path of a config shipped with the package, e.g. ``shipped_config("elc_4acv")``."""
    p = Path(__file__).with_name("configs") / f"{name}.yaml"
    if not p.exists():
        raise FileNotFoundError(p)
    return p
