"""System configuration files: parsing, validation and serialization.

The format is YAML with three top-level sections::

    modules:
      - label: BChl_1_2
        site_energies: [12400.0, 12520.0]      # cm^-1
        intra_couplings: [[0.0, -87.0],
                          [-87.0, 0.0]]        # cm^-1, symmetric, zero diag
    inter_couplings:
      - {from: [0, 0], to: [1, 0], value: 5.0} # [module, site], 0-based
    bath:
      lambda: 35.0        # reorganization energy, cm^-1
      omega_c: 106.0      # Drude cutoff, cm^-1
      temperature: 300.0  # kelvin

Validation failures raise ``ConfigError`` with the file path and, where the
parser can locate the offending node, its line number.
"""

from dataclasses import replace
from typing import Optional

import yaml

from .errors import ConfigError
from .model import BathSpec, ModuleSpec, SystemSpec


def _line_index(path):
    """Map node paths like ('modules', 0, 'label') to 1-based line numbers."""
    try:
        with open(path) as handle:
            root = yaml.compose(handle)
    except (OSError, yaml.YAMLError):
        return {}
    table = {}

    def walk(node, trail):
        table[trail] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                walk(value, trail + (key.value,))
        elif isinstance(node, yaml.SequenceNode):
            for i, value in enumerate(node.value):
                walk(value, trail + (i,))

    if root is not None:
        walk(root, ())
    return table


class _Anchored:
    """Error reporter that prefixes messages with file:line anchors."""

    def __init__(self, path):
        self.path = path
        self.lines = _line_index(path)

    def fail(self, message, *trail) -> ConfigError:
        anchor = str(self.path)
        # fall back to the deepest known ancestor of the trail
        for end in range(len(trail), -1, -1):
            line = self.lines.get(tuple(trail[:end]))
            if line is not None:
                anchor = f"{self.path}:{line}"
                break
        return ConfigError(f"{anchor}: {message}")


def parse_config(path) -> SystemSpec:
    """Read and validate a system configuration file."""
    anchored = _Anchored(path)
    try:
        with open(path) as handle:
            data = yaml.safe_load(handle)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config file ({exc})") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed YAML ({exc})") from exc
    if not isinstance(data, dict):
        raise anchored.fail("config must be a mapping with modules/inter_couplings/bath")

    for section in ("modules", "bath"):
        if section not in data:
            raise anchored.fail(f"missing required section {section!r}")

    raw_modules = data["modules"]
    if not isinstance(raw_modules, list) or not raw_modules:
        raise anchored.fail("modules must be a non-empty list", "modules")
    modules = []
    for i, entry in enumerate(raw_modules):
        if not isinstance(entry, dict):
            raise anchored.fail(f"module {i} must be a mapping", "modules", i)
        for key in ("site_energies", "intra_couplings"):
            if key not in entry:
                raise anchored.fail(f"module {i} is missing {key!r}", "modules", i)
        try:
            modules.append(ModuleSpec(
                label=str(entry.get("label", f"module_{i}")),
                site_energies=entry["site_energies"],
                intra_couplings=entry["intra_couplings"],
            ))
        except Exception as exc:
            raise anchored.fail(f"module {i}: {exc}", "modules", i) from exc

    raw_bath = data["bath"]
    if not isinstance(raw_bath, dict):
        raise anchored.fail("bath must be a mapping", "bath")
    for key in ("lambda", "omega_c", "temperature"):
        if key not in raw_bath:
            raise anchored.fail(f"bath is missing {key!r}", "bath")
    try:
        bath = BathSpec(
            reorganization_energy=float(raw_bath["lambda"]),
            cutoff_frequency=float(raw_bath["omega_c"]),
            temperature=float(raw_bath["temperature"]),
        )
    except Exception as exc:
        raise anchored.fail(f"bath: {exc}", "bath") from exc

    couplings = {}
    raw_inter = data.get("inter_couplings", [])
    if raw_inter is None:
        raw_inter = []
    if not isinstance(raw_inter, list):
        raise anchored.fail("inter_couplings must be a list", "inter_couplings")
    for i, entry in enumerate(raw_inter):
        trail = ("inter_couplings", i)
        if not isinstance(entry, dict) or not {"from", "to", "value"} <= set(entry):
            raise anchored.fail(
                f"inter_couplings[{i}] needs 'from', 'to' and 'value'", *trail)
        a, b = entry["from"], entry["to"]
        for name, pair in (("from", a), ("to", b)):
            if (not isinstance(pair, list) or len(pair) != 2
                    or not all(isinstance(x, int) for x in pair)):
                raise anchored.fail(
                    f"inter_couplings[{i}].{name} must be [module, site] integers",
                    *trail, name)
        if a[0] == b[0]:
            raise anchored.fail(
                f"inter_couplings[{i}] connects sites of the same module "
                f"({a} <-> {b}); inter-module couplings must bridge modules",
                *trail)
        key = (tuple(a), tuple(b))
        try:
            value = float(entry["value"])
        except (TypeError, ValueError) as exc:
            raise anchored.fail(
                f"inter_couplings[{i}].value is not a number", *trail, "value"
            ) from exc
        rkey = (key[1], key[0])
        if key in couplings or rkey in couplings:
            prev = couplings.get(key, couplings.get(rkey))
            if abs(prev - value) > 1e-9:
                raise anchored.fail(
                    f"inter_couplings[{i}] repeats pair {a} <-> {b} with a "
                    f"conflicting value ({prev} vs {value}); J must be symmetric",
                    *trail)
        couplings[key] = value

    try:
        return SystemSpec(modules=tuple(modules), inter_couplings=couplings, bath=bath)
    except Exception as exc:
        raise anchored.fail(str(exc)) from exc


def serialize_config(system: SystemSpec) -> str:
    """YAML text that parses back into an identical system."""
    doc = {
        "modules": [
            {
                "label": m.label,
                "site_energies": [float(x) for x in m.site_energies],
                "intra_couplings": [[float(x) for x in row] for row in m.intra_couplings],
            }
            for m in system.modules
        ],
        "inter_couplings": [
            {"from": list(a), "to": list(b), "value": float(v)}
            for (a, b), v in sorted(system.inter_couplings.items())
        ],
        "bath": {
            "lambda": float(system.bath.reorganization_energy),
            "omega_c": float(system.bath.cutoff_frequency),
            "temperature": float(system.bath.temperature),
        },
    }
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)


def with_temperature(system: SystemSpec, temperature: float) -> SystemSpec:
    """Copy of the system at a different bath temperature."""
    return SystemSpec(
        modules=system.modules,
        inter_couplings=dict(system.inter_couplings),
        bath=replace(system.bath, temperature=float(temperature)),
    )


def bundled_config_path(name: str = "fmo4.cfg") -> str:
    """Filesystem path of a configuration file shipped with the package."""
    from importlib.resources import files

    return str(files("gmemed.data").joinpath(name))
