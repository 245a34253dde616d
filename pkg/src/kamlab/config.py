"""Experiment configuration: one YAML file, every key defaulted, unknown keys rejected."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .torus import ClosedForm, Potential, TorusGrid

# Every accepted key with its default.  None means "derive from elsewhere"
# (documented next to the key).
DEFAULTS: dict = {
    "grid": {"dim": 1, "N": 256},
    "potential": {"cos": {"1": 1.0}, "sin": {}},
    "form": {"P": [0.0], "x0": None},                 # x0 None -> origin
    "weakkam": {"h": 0.05, "v_max": 4.0, "tol": 1e-10, "max_iters": 200_000, "relax": 0.5},
    "eigen": {"betas": [20], "N": None,               # N None -> grid.N
              "tol": 1e-12, "max_iters": 10_000},
    "sweep": {"betas": [10, 20, 40, 80], "nodes_per_beta": 4,
              "N": None,                              # N None -> nodes_per_beta * beta
              "test_sets": [[0.4, 0.6]], "F": {"cos": {"1": 0.3}, "sin": {}}},
    "wkernel": {"slices": 20, "v_max": 4.0},
    "mc": {"y": [0.28125], "x": [0.375], "t": 1.0, "beta": 20.0,
           "samples": 5000, "steps": 64, "seed": 0},
    "transport": {"variant": "plain", "tol": 1e-12, "measures": "mather", "beta": 80.0},
    "checks": {"critical_value": 5e-2, "hj_residual": 1e-2, "ldp": 0.1, "varadhan": 0.1,
               "kernel": 5e-2, "collinearity": 1e-6, "mc_slack": 0.05, "admissibility": 5e-2,
               "gap": 5e-2, "slackness": 5e-2, "projection_dx": 2.0},
    "output": {"directory": "kamlab_out", "formats": ["csv", "json"]},
}

OUTPUT_ENV = "KAMLAB_OUTPUT_DIR"


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in (override or {}).items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigurationError(f"unknown config key '{where}'")
        # coefficient maps and free-form values are taken whole
        if isinstance(base[key], dict) and base[key] and where not in _FREE_MAPS:
            if not isinstance(val, dict):
                raise ConfigurationError(f"config key '{where}' must be a mapping")
            out[key] = _merge(base[key], val, where + ".")
        elif isinstance(base[key], (int, float)) and not isinstance(base[key], bool):
            out[key] = _number(val, where, type(base[key]))
        else:
            out[key] = copy.deepcopy(val)
    return out


def _number(val, where: str, kind):
    # YAML 1.1 reads "1e-10" as a string; accept it for numeric keys
    if isinstance(val, bool):
        raise ConfigurationError(f"config key '{where}' must be a number")
    try:
        num = float(val)
    except (TypeError, ValueError):
        raise ConfigurationError(f"config key '{where}' must be a number, got {val!r}") from None
    if kind is int:
        if num != int(num):
            raise ConfigurationError(f"config key '{where}' must be an integer")
        return int(num)
    return num


_FREE_MAPS = {"potential.cos", "potential.sin", "sweep.F"}


@dataclass(frozen=True)
class ExperimentConfig:
    data: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def grid(self) -> TorusGrid:
        return TorusGrid(int(self.data["grid"]["dim"]), int(self.data["grid"]["N"]))

    @property
    def potential(self) -> Potential:
        p = self.data["potential"]
        return Potential(p.get("cos") or {}, p.get("sin") or {})

    @property
    def form(self) -> ClosedForm:
        f = self.data["form"]
        return ClosedForm(f["P"], f["x0"])

    @property
    def sweep_F(self) -> Potential:
        F = self.data["sweep"]["F"] or {}
        return Potential(F.get("cos") or {}, F.get("sin") or {})

    def hash(self) -> str:
        return config_hash(self.data)


def config_hash(data: dict) -> str:
    """sha256 of the canonical JSON of everything except the output section."""
    body = {k: v for k, v in data.items() if k != "output"}
    text = json.dumps(body, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(text.encode()).hexdigest()


def _normalize(data: dict) -> dict:
    for name in ("cos", "sin"):
        data["potential"][name] = {str(k): float(v) for k, v in (data["potential"][name] or {}).items()}
    F = data["sweep"]["F"] or {}
    data["sweep"]["F"] = {n: {str(k): float(v) for k, v in (F.get(n) or {}).items()} for n in ("cos", "sin")}
    data["form"]["P"] = [float(v) for v in (data["form"]["P"]
                                            if isinstance(data["form"]["P"], (list, tuple))
                                            else [data["form"]["P"]])]
    for sec in ("eigen", "sweep"):
        b = data[sec]["betas"]
        data[sec]["betas"] = [float(v) for v in (b if isinstance(b, (list, tuple)) else [b])]
    for key in ("y", "x"):
        v = data["mc"][key]
        data["mc"][key] = [float(s) for s in (v if isinstance(v, (list, tuple)) else [v])]
    return data


def validate(cfg: ExperimentConfig) -> None:
    d = cfg.data
    try:
        grid = cfg.grid
        V = cfg.potential
        form = cfg.form
        cfg.sweep_F
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc
    if form.dim != grid.dim:
        raise ConfigurationError(f"form.P has {form.dim} components, grid.dim is {grid.dim}")
    for table in (V.cos, V.sin):
        if any(len(k) > grid.dim for k in table):
            raise ConfigurationError("potential frequency has more components than grid.dim")
    wk = d["weakkam"]
    if not 0 < wk["h"] <= 1:
        raise ConfigurationError("weakkam.h must lie in (0, 1]")
    if wk["v_max"] * wk["h"] < grid.spacing:
        raise ConfigurationError("weakkam.v_max * weakkam.h must be at least the grid spacing")
    for sec in ("eigen", "sweep"):
        betas = d[sec]["betas"]
        if not betas or any(b <= 0 for b in betas) or any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
            raise ConfigurationError(f"{sec}.betas must be positive and strictly increasing")
    for sec in ("eigen", "sweep"):
        n = d[sec]["N"]
        if n is not None and (int(n) != n or n < 8):
            raise ConfigurationError(f"{sec}.N must be an integer >= 8")
    m = d["wkernel"]["slices"]
    if int(m) != m or m < 4 or d["wkernel"]["v_max"] / m < grid.spacing:
        raise ConfigurationError("wkernel.slices must be >= 4 with v_max/slices >= grid spacing")
    if d["transport"]["variant"] not in ("plain", "tilde"):
        raise ConfigurationError("transport.variant must be 'plain' or 'tilde'")
    if d["transport"]["measures"] not in ("mather", "quantum"):
        raise ConfigurationError("transport.measures must be 'mather' or 'quantum'")
    mc = d["mc"]
    if mc["samples"] < 100 or mc["steps"] < 16 or mc["t"] <= 0 or mc["beta"] <= 0:
        raise ConfigurationError("mc needs samples >= 100, steps >= 16, t > 0, beta > 0")
    if len(mc["y"]) != grid.dim or len(mc["x"]) != grid.dim:
        raise ConfigurationError("mc.y and mc.x must have grid.dim components")
    for box in d["sweep"]["test_sets"]:
        if len(box) != 2:
            raise ConfigurationError("sweep.test_sets entries are [lo, hi] intervals")


def build_config(raw: dict | None = None) -> ExperimentConfig:
    if raw is not None and not isinstance(raw, dict):
        raise ConfigurationError("config root must be a mapping")
    try:
        data = _normalize(_merge(DEFAULTS, raw or {}))
    except (TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"malformed config: {exc}") from exc
    cfg = ExperimentConfig(data)
    validate(cfg)
    return cfg


def _set_path(raw: dict, dotted: str, value):
    keys = dotted.split(".")
    node = raw
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"cannot set '{dotted}': '{k}' is not a mapping")
    node[keys[-1]] = value


def load_config(path: str | Path | None = None, overrides=()) -> ExperimentConfig:
    """Read YAML (or start from defaults) and apply ``key.sub=value`` overrides."""
    raw: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"invalid YAML in {path}: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override '{item}' is not key=value")
        key, val = item.split("=", 1)
        _set_path(raw, key.strip(), yaml.safe_load(val))
    return build_config(raw)
