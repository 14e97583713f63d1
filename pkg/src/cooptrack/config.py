"""TOML scenario files: parsing, structural validation and round-trip dumping."""

from __future__ import annotations

import math
import os
import re
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .controllers import ControllerGains
from .kinematics import SIGNAL_PARAMS, LeaderSignal
from .network import DirectedNetwork, NetworkError, check_spanning_tree, _unreachable
from .simulation import DEFAULT_CONTINUOUS_STEP, SUBSTEPS_PER_SAMPLE, IntegratorConfig, grid_ratio

SECTIONS = ("network", "leader", "followers", "controller", "simulation", "verification")
MONITORS = ("assumptions", "tracking", "omega_monotone", "k_exponential",
            "sampled_contraction", "sampled_cases")
DEFAULT_HORIZON = 100.0
DEFAULT_TRACKING_TOL = 1e-3
OUT_ENV = "COOPTRACK_OUT"

_ANGLE = re.compile(r"^\s*([+-]?)\s*(\d*\.?\d*)\s*\*?\s*pi\s*(?:/\s*(\d*\.?\d+))?\s*$")


class ConfigError(ValueError):
    pass


def parse_angle(value) -> float:
    """Numbers pass through; strings like ``"-pi/6"``, ``"2pi/3"``, ``"0.5*pi"`` are expanded."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        m = _ANGLE.match(value)
        if m:
            sign = -1.0 if m.group(1) == "-" else 1.0
            coef = float(m.group(2)) if m.group(2) not in ("", ".") else 1.0
            div = float(m.group(3)) if m.group(3) else 1.0
            return sign * coef * math.pi / div
        try:
            return float(value)
        except ValueError:
            pass
    raise ConfigError(f"cannot read angle {value!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    n_followers: int
    edges: tuple
    leader_pose: tuple
    signal: LeaderSignal
    follower_poses: tuple
    offsets: tuple
    gains: ControllerGains
    law: str = "sampled"
    T0: float = 0.04
    step: float | None = None
    horizon: float = DEFAULT_HORIZON
    log_every: float | None = None
    rescale_error_norm: float | None = None
    leader_bound: float | None = None
    output_dir: str | None = None
    monitors: tuple = MONITORS
    tracking_tolerance: float = DEFAULT_TRACKING_TOL
    checkpoints: tuple = ()
    name: str = "scenario"
    description: str = ""
    _net: object = field(default=None, compare=False, repr=False)

    @property
    def network(self) -> DirectedNetwork:
        if self._net is None:
            object.__setattr__(self, "_net", DirectedNetwork.from_edges(self.n_followers, self.edges))
        return self._net

    def integration_step(self, law: str | None = None) -> float:
        if self.step is not None:
            return self.step
        law = law or self.law
        return self.T0 / SUBSTEPS_PER_SAMPLE if law == "sampled" else DEFAULT_CONTINUOUS_STEP

    def integrator(self, law: str | None = None):
        return IntegratorConfig(self.integration_step(law), self.horizon, self.log_every)

    def out_dir(self, override=None) -> Path:
        return Path(override or self.output_dir or os.environ.get(OUT_ENV) or "out")

    def with_updates(self, **kw) -> "ScenarioConfig":
        cfg = replace(self, _net=None, **kw)
        validate(cfg)
        return cfg


def _req(table: dict, key: str, section: str):
    if key not in table:
        raise ConfigError(f"[{section}] missing required key {key!r}")
    return table[key]


def _floats(seq, n, what):
    try:
        out = tuple(float(x) for x in seq)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a list of {n} numbers, got {seq!r}") from None
    if len(out) != n:
        raise ConfigError(f"{what} must have {n} entries, got {len(out)}")
    return out


def _pose(seq, what):
    if not isinstance(seq, (list, tuple)) or len(seq) != 3:
        raise ConfigError(f"{what} must be [x, y, theta], got {seq!r}")
    return (*_floats(seq[:2], 2, what), parse_angle(seq[2]))


def from_dict(doc: dict, name: str = "scenario") -> ScenarioConfig:
    if not doc:
        raise ConfigError("configuration is empty")
    unknown = set(doc) - set(SECTIONS) - {"name", "description"}
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    for s in SECTIONS[:4]:
        if s not in doc:
            raise ConfigError(f"missing section [{s}]")
    net, lead, fol, ctl = (doc[s] for s in SECTIONS[:4])
    sim = doc.get("simulation", {})
    ver = doc.get("verification", {})

    n = int(_req(net, "followers", "network"))
    edges = tuple(tuple([int(e[0]), int(e[1]), float(e[2]) if len(e) > 2 else 1.0])
                  for e in _req(net, "edges", "network"))

    kind = lead.get("signal", "constant")
    if kind not in SIGNAL_PARAMS:
        raise ConfigError(f"[leader] unknown signal {kind!r}; expected one of {list(SIGNAL_PARAMS)}")
    try:
        signal = LeaderSignal.from_params(
            kind, dict(_req(lead, "omega", "leader")), dict(_req(lead, "v", "leader")),
            omega_bar=float(_req(lead, "omega_bar", "leader")),
            pe_window=float(lead.get("pe_window", 1.0)),
            pe_level=float(_req(lead, "pe_level", "leader")),
        )
    except ValueError as exc:
        raise ConfigError(f"[leader] {exc}") from None

    poses = tuple(_pose(p, f"[followers] pose {i + 1}") for i, p in enumerate(_req(fol, "poses", "followers")))
    offsets = tuple(_floats(o, 2, f"[followers] offset {i + 1}")
                    for i, o in enumerate(fol.get("offsets", [[0.0, 0.0]] * len(poses))))

    opt = lambda t, k: None if t.get(k) is None else float(t[k])
    cfg = ScenarioConfig(
        n_followers=n,
        edges=edges,
        leader_pose=_pose(_req(lead, "pose", "leader"), "[leader] pose"),
        signal=signal,
        follower_poses=poses,
        offsets=offsets,
        gains=ControllerGains(float(_req(ctl, "k_omega", "controller")), float(_req(ctl, "k_v", "controller"))),
        law=ctl.get("law", "sampled"),
        T0=float(ctl.get("T0", 0.04)),
        step=opt(sim, "step"),
        horizon=float(sim.get("horizon", DEFAULT_HORIZON)),
        log_every=opt(sim, "log_every"),
        rescale_error_norm=opt(fol, "rescale_error_norm"),
        leader_bound=opt(lead, "bound"),
        output_dir=sim.get("output_dir"),
        monitors=tuple(ver.get("monitors", MONITORS)),
        tracking_tolerance=float(ver.get("tracking_tolerance", DEFAULT_TRACKING_TOL)),
        checkpoints=tuple(tuple(_floats(c, 2, "[verification] checkpoint")) for c in ver.get("checkpoints", [])),
        name=str(doc.get("name", name)),
        description=str(doc.get("description", "")),
    )
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    """Checks that need no simulation.  Leader boundedness and excitation are
    checked later, by the assumption monitors."""
    n = cfg.n_followers
    if n < 1:
        raise ConfigError("need at least one follower (leader-only fleets are not scenarios)")
    if len(cfg.follower_poses) != n:
        raise ConfigError(f"{n} followers declared but {len(cfg.follower_poses)} poses given")
    if len(cfg.offsets) != n:
        raise ConfigError(f"{n} followers declared but {len(cfg.offsets)} offsets given")
    try:
        net = cfg.network
    except NetworkError as exc:
        raise ConfigError(f"[network] {exc}") from None
    if not check_spanning_tree(net):
        raise ConfigError(
            "connectivity violated: no directed spanning tree rooted at the leader "
            f"(followers unreachable from node 0: {_unreachable(net)})"
        )
    if not cfg.gains.positive:
        raise ConfigError(f"gains must be positive: k_omega={cfg.gains.k_omega}, k_v={cfg.gains.k_v}")
    if cfg.law not in ("continuous", "sampled"):
        raise ConfigError(f"[controller] law must be 'continuous' or 'sampled', got {cfg.law!r}")
    if not cfg.T0 > 0:
        raise ConfigError("[controller] T0 must be positive")
    if not cfg.horizon > 0:
        raise ConfigError("[simulation] horizon must be positive")
    if not cfg.signal.pe_level > 0:
        raise ConfigError("[leader] pe_level must be positive")
    bad = set(cfg.monitors) - set(MONITORS)
    if bad:
        raise ConfigError(f"[verification] unknown monitors {sorted(bad)}")
    try:
        integ = cfg.integrator(cfg.law)
        integ.n_steps
        if cfg.law == "sampled":
            grid_ratio(cfg.T0, integ.step, "sampling period")
    except ValueError as exc:
        raise ConfigError(f"[simulation] {exc}") from None

def loads(text: str, name: str = "scenario") -> ScenarioConfig:
    if not text.strip():
        raise ConfigError(f"{name}: empty configuration file")
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{name}: parse error: {exc}") from None
    return from_dict(doc, name)


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("cooptrack") / "scenarios" / f"{name}.toml"))


def load_config(path) -> ScenarioConfig:
    """Load a scenario file, or a bundled scenario by bare name (e.g. ``paper_sec4``)."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and bundled_path(str(path)).exists():
        p = bundled_path(str(path))
    if not p.exists():
        raise ConfigError(f"no such config: {path}")
    return loads(p.read_text(encoding="utf-8"), p.stem)


def to_dict(cfg: ScenarioConfig) -> dict:
    sig = cfg.signal
    lead = {
        "pose": list(cfg.leader_pose),
        "signal": sig.kind,
        "omega": sig.params_dict("omega"),
        "v": sig.params_dict("v"),
        "omega_bar": sig.omega_bar,
        "pe_window": sig.pe_window,
        "pe_level": sig.pe_level,
    }
    if cfg.leader_bound is not None:
        lead["bound"] = cfg.leader_bound
    fol = {"poses": [list(p) for p in cfg.follower_poses], "offsets": [list(o) for o in cfg.offsets]}
    if cfg.rescale_error_norm is not None:
        fol["rescale_error_norm"] = cfg.rescale_error_norm
    sim = {"horizon": cfg.horizon}
    for k in ("step", "log_every", "output_dir"):
        if getattr(cfg, k) is not None:
            sim[k] = getattr(cfg, k)
    ver = {"monitors": list(cfg.monitors), "tracking_tolerance": cfg.tracking_tolerance}
    if cfg.checkpoints:
        ver["checkpoints"] = [list(c) for c in cfg.checkpoints]
    doc = {"name": cfg.name}
    if cfg.description:
        doc["description"] = cfg.description
    doc.update(
        network={"followers": cfg.n_followers, "edges": [list(e) for e in cfg.edges]},
        leader=lead,
        followers=fol,
        controller={"k_v": cfg.gains.k_v, "k_omega": cfg.gains.k_omega, "law": cfg.law, "T0": cfg.T0},
        simulation=sim,
        verification=ver,
    )
    return doc


def dumps(cfg: ScenarioConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))

