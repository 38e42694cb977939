"""Scenario configuration: dataclass tree, strict JSON loading, presets.

Unknown keys are hard errors so a typo cannot silently change the physics.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field

from .channel import FiberSpec, StrainEvent
from .commrx import RxConfig
from .txgen import TxConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class ProbeScenario:
    """Probe code geometry and launch parameters (the condition — off,
    rectangular, shaped — is chosen per run)."""

    code_order: int = 12
    ramp_len: int = 2048
    ramp_fill: str = "cyclic"
    chip_rate: float = 1e8
    peak_power_dbm: float = 7.8
    repetition_period: float = 500e-6
    chip_shape: str = "rectangular"


@dataclass
class EventConfig:
    # the onset stays resolvable when the post-event fiber exceeds the probe
    # replica's sidelobe span (about v_g * sequence_duration / 2)
    position_m: float = 40.0e3
    frequency_hz: float = 115.0
    phase_pkpk_rad: float = 3.9

    def to_event(self) -> StrainEvent:
        return StrainEvent(
            position=self.position_m, frequency=self.frequency_hz, phase_pkpk=self.phase_pkpk_rad
        )


@dataclass
class NoiseConfig:
    osnr_sweep_db: list = field(default_factory=lambda: [8.0, 10.0, 12.0, 14.0, 16.0, 18.0])


@dataclass
class SimConfig:
    step: float = 100.0  # max split-step length, m
    bit_budget: float = 1e7
    min_errors: int = 100
    seed: int = 1
    window_margin_chips: int = 256
    precision: str = "double"  # 'double' | 'single'
    min_osnr_db: float = 4.0
    max_osnr_db: float = 30.0
    osnr_resolution_db: float = 0.1
    cache_windows: int = 16


@dataclass
class SensingConfig:
    cell_len_m: float = 1.0
    gauge_len_m: float = 2.0  # 2 resolution cells; longer gauges trade
    # localization for robustness against correlation clutter on faded gauges
    backscatter_db_per_m: float = -82.0
    shots: int = 2048
    mask_threshold: float = 0.1
    band_lo_hz: float = 20.0
    band_hi_hz: float = 400.0
    min_snr_db: float = 10.0
    export_span_m: float = 200.0


@dataclass
class ScenarioConfig:
    version: int = CONFIG_VERSION
    tx: TxConfig = field(default_factory=TxConfig)
    probe: ProbeScenario = field(default_factory=ProbeScenario)
    fiber: FiberSpec = field(default_factory=lambda: FiberSpec(length=50.016e3))
    event: EventConfig | None = field(default_factory=EventConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    rx: RxConfig = field(default_factory=RxConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    sensing: SensingConfig = field(default_factory=SensingConfig)

    def __post_init__(self):
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"config version {self.version} unsupported (want {CONFIG_VERSION})")
        if self.event is not None and not 0 <= self.event.position_m <= self.fiber.length:
            raise ConfigError("event position must lie within the fiber")


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    flds = {f.name: f for f in dataclasses.fields(cls)}
    unknown = [k for k in data if k not in flds]
    if unknown:
        raise ConfigError(f"{path}: unknown key(s): {', '.join(sorted(unknown))}")
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for name, value in data.items():
        t = hints[name]
        args = typing.get_args(t)
        if args and type(None) in args:
            if value is None:
                kwargs[name] = None
                continue
            t = next(a for a in args if a is not type(None))
        if dataclasses.is_dataclass(t):
            kwargs[name] = _build(t, value, f"{path}.{name}")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def scenario_from_dict(data: dict) -> ScenarioConfig:
    return _build(ScenarioConfig, data, "config")


def load_scenario(path: str) -> ScenarioConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return scenario_from_dict(data)


def scenario_to_dict(scn: ScenarioConfig) -> dict:
    return dataclasses.asdict(scn)


def canonical_json(scn: ScenarioConfig) -> str:
    return json.dumps(scenario_to_dict(scn), sort_keys=True, separators=(",", ":"))


def config_hash(scn: ScenarioConfig) -> str:
    return hashlib.sha256(canonical_json(scn).encode()).hexdigest()


def apply_preset(scn: ScenarioConfig, preset: str) -> ScenarioConfig:
    """Named presets; `desk` shrinks the scenario so full experiment runs take
    minutes: 10 km fiber, 1e7-bit budget, 2048 sensing shots, and a shorter
    probe code (order 10, 512-chip ramps) with matching margins."""
    if preset in ("", "none", None):
        return scn
    if preset != "desk":
        raise ConfigError(f"unknown preset {preset!r}")
    scn = dataclasses.replace(
        scn,
        fiber=dataclasses.replace(scn.fiber, length=10e3),
        probe=dataclasses.replace(scn.probe, code_order=10, ramp_len=512),
        sim=dataclasses.replace(
            scn.sim, bit_budget=1e7, window_margin_chips=128, step=250.0, precision="single"
        ),
        sensing=dataclasses.replace(scn.sensing, shots=2048),
    )
    if scn.event is not None and scn.event.position_m > 0.8 * scn.fiber.length:
        # keep at least one replica sidelobe span of fiber beyond the event
        scn = dataclasses.replace(
            scn, event=dataclasses.replace(scn.event, position_m=0.7 * scn.fiber.length)
        )
    return scn
