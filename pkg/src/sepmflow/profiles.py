"""Calibrated parameter profiles.

A profile is a YAML document bundling every free parameter of the model:
magnet geometry and materials, drive pulse, seal mechanics, tube flow
characteristics and the bench-rig lumped constants. The packaged
`calibrated-default` profile is tuned so the headline behaviors come out at
their measured values (0.6 J per pulse, 320 kPa single-stroke closing limit,
500 kPa holding limit, 0.115 s outlet closure). See README for the schema.
"""

from __future__ import annotations

import copy
import os
from importlib import resources
from pathlib import Path

import yaml

from .errors import ScenarioError
from .magnetics import CircuitGeometry, MagnetSpec, Pulse, pulse_energy
from .valve import OcclusionModel, TubeSpec, Valve

PROFILE_ENV_VAR = "SEPMFLOW_PROFILE"
DEFAULT_PROFILE_RESOURCE = "default_profile.yaml"


def _get(doc: dict, path: str):
    node = doc
    for key in path.split("."):
        if not isinstance(node, dict) or key not in node:
            raise ScenarioError(f"profile is missing key {path!r}")
        node = node[key]
    return node


class Profile:
    """Typed view over a profile document; the raw dict stays accessible."""

    def __init__(self, doc: dict, source: str = "<inline>"):
        if not isinstance(doc, dict):
            raise ScenarioError(f"profile {source}: document must be a mapping")
        self.doc = doc
        self.source = source

    # -- construction -----------------------------------------------------

    @classmethod
    def loads(cls, text: str, source: str = "<inline>") -> "Profile":
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ScenarioError(f"profile {source}: invalid YAML: {exc}")
        return cls(doc, source)

    @classmethod
    def load(cls, path) -> "Profile":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ScenarioError(f"cannot read profile {path}: {exc}")
        return cls.loads(text, source=str(path))

    @classmethod
    def default(cls) -> "Profile":
        override = os.environ.get(PROFILE_ENV_VAR)
        if override:
            return cls.load(override)
        text = resources.files("sepmflow.data").joinpath(
            DEFAULT_PROFILE_RESOURCE).read_text()
        return cls.loads(text, source="calibrated-default")

    @classmethod
    def resolve(cls, ref) -> "Profile":
        """Accept None/'default', a path, or an inline mapping."""
        if ref is None or ref == "default":
            return cls.default()
        if isinstance(ref, dict):
            return cls(ref)
        return cls.load(ref)

    def copy(self) -> "Profile":
        return Profile(copy.deepcopy(self.doc), source=self.source)

    def dumps(self) -> str:
        return yaml.safe_dump(self.doc, sort_keys=True,
                              default_flow_style=False)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    # -- typed accessors ----------------------------------------------------

    @property
    def name(self) -> str:
        return self.doc.get("name", "unnamed")

    def geometry(self, gap: float | None = None) -> CircuitGeometry:
        m = _get(self.doc, "magnetics")
        return CircuitGeometry(
            d=_get(m, "rod_diameter_m"), n_rods=_get(m, "rod_count"),
            a=_get(m, "pole_width_m"), b=_get(m, "pole_thickness_m"),
            g=gap if gap is not None else _get(m, "air_gap_m"),
            l=_get(m, "path_length_m"), p_leak=_get(m, "leak_permeance"))

    def magnet_spec(self) -> MagnetSpec:
        m = _get(self.doc, "magnetics")
        return MagnetSpec(
            b_r_ndfeb=_get(m, "ndfeb_remanence_t"),
            b_r_alnico=_get(m, "alnico_remanence_t"),
            h_c_alnico=_get(m, "alnico_coercivity_a_per_m"),
            h_scale=_get(m, "hysteron_field_scale_a_per_m"),
            n_turns=_get(m, "coil_turns"),
            coil_resistance=_get(m, "coil_resistance_ohm"),
            coil_inductance=_get(m, "coil_inductance_h"))

    def default_pulse(self, polarity: int = +1) -> Pulse:
        p = _get(self.doc, "pulse")
        return Pulse(voltage=_get(p, "voltage_v"),
                     duration=_get(p, "duration_s"), polarity=polarity)

    def pulse_energy(self) -> float:
        return pulse_energy(self.magnet_spec(), self.default_pulse())

    def tube_spec(self) -> TubeSpec:
        t = _get(self.doc, "valve.tube")
        return TubeSpec(
            outer_diameter=_get(t, "outer_diameter_m"),
            inner_diameter=_get(t, "inner_diameter_m"),
            contact_length=_get(t, "contact_length_m"),
            open_conductance=_get(t, "open_conductance"),
            closed_leak_conductance=_get(t, "closed_leak_conductance"))

    def occlusion_model(self, stochastic: bool | None = None) -> OcclusionModel:
        v = _get(self.doc, "valve")
        return OcclusionModel(
            seal_area=_get(v, "seal_area_m2"),
            dynamic_gap=_get(v, "dynamic_gap_m"),
            dynamic_threshold=_get(v, "dynamic_threshold_pa"),
            static_limit=_get(v, "static_limit_pa"),
            max_retry=_get(v, "max_retry"),
            dead_time=_get(v, "dead_time_s"),
            stochastic=_get(v, "stochastic_occlusion")
            if stochastic is None else stochastic,
            ramp_start=_get(v, "ramp_start_pa"),
            ramp_end=_get(v, "ramp_end_pa"))

    def make_valve(self, valve_id: str, logical_state: int = +1,
                   pulse_count: int = 0, rng=None,
                   stochastic: bool | None = None) -> Valve:
        tube = self.tube_spec()
        return Valve(valve_id, self.geometry(), self.magnet_spec(),
                     self.default_pulse(), upper_tube=tube, lower_tube=tube,
                     occlusion=self.occlusion_model(stochastic),
                     logical_state=logical_state, pulse_count=pulse_count,
                     rng=rng)

    def rig(self, key: str):
        return _get(self.doc, f"pneumatics.rig.{key}")

    @property
    def default_dt(self) -> float:
        return _get(self.doc, "pneumatics.dt_s")

    @property
    def default_record_interval(self) -> float:
        return _get(self.doc, "pneumatics.record_interval_s")
