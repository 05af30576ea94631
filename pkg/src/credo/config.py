"""Experiment configuration files.

Configs are INI-style ``key = value`` files with sections. Matrices are
never inline; they are referenced by path (edge lists, sensing files,
CSV datasets), resolved relative to the config file's directory. Gains
may be ``auto``, meaning they are derived from the problem instance by
:func:`credo.harness.recommended_schedule`.

Errors name the file, line, section and key at fault.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Optional

AUTO = "auto"


class ConfigError(ValueError):
    pass


def _float(s):
    return float(s)


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError("not an integer")
    return int(v)


def _auto(conv):
    def parse(s):
        return AUTO if s.strip().lower() == AUTO else conv(s)
    parse.__name__ = f"auto or {conv.__name__.strip('_')}"
    return parse


def _list(conv):
    def parse(s):
        return tuple(conv(p) for p in re.split(r"[,\s]+", s.strip()) if p)
    parse.__name__ = f"list of {getattr(conv, '__name__', 'str').strip('_')}"
    return parse


def _str(s):
    return s.strip()


def _path(s):
    return s.strip()


_str.__name__ = "text"
_path.__name__ = "path"
_float.__name__ = "number"
_int.__name__ = "integer"

#: section -> key -> (parser, default); default None means optional/absent.
SCHEMA: dict[str, dict[str, tuple[Callable, Any]]] = {
    "experiment": {
        "name": (_str, "experiment"),
        "master_seed": (_int, 0),
        "runs": (_int, 50),
        "horizon": (_int, 10_000),
        "probes_per_decade": (_int, 30),
        "estimators": (_list(_str), ("oracle", "benchmark", "credo")),
        "credo_tau1": (_list(_float), (0.49,)),
        "fit_window": (_list(_float), None),
    },
    "network": {
        "nodes": (_int, 20),
        "radius": (_float, 0.6),
        "edge_list": (_path, None),
    },
    "sensing": {
        "param_dim": (_int, 10),
        "sparsity": (_int, 2),
        "noise_var": (_float, 0.25),
        "min_gamma_eig": (_float, 0.05),
        "theta_scale": (_float, 0.03),
        "file": (_path, None),
        "theta": (_list(_float), None),
    },
    "schedule": {
        "a": (_auto(_float), AUTO),
        "a_factor": (_float, 0.75),
        "shift": (_auto(_int), AUTO),
        "rho0": (_auto(_float), AUTO),
        "zeta0": (_float, 1.0),
        "eps": (_float, 0.02),
        "tau1": (_float, 0.49),
        "benchmark_b": (_auto(_float), AUTO),
        "b_factor": (_float, 1.5),
        "benchmark_delta1": (_float, 0.49),
        # alternative to eps / tau1: decay exponents of rho_t and zeta_t
        "rho_exponent": (_float, None),
        "zeta_exponent": (_float, None),
    },
    "stats": {
        "times": (_list(_int), (0, 10, 100)),
        "draws": (_int, 100_000),
        "z_tol": (_float, 4.0),
        "comm_runs": (_int, 200),
        "comm_horizon": (_int, 10_000),
        "comm_slope_tol": (_float, 0.02),
        # negative control: perturb the exponent of the expected beta_t
        "beta_exponent_error": (_float, 0.0),
    },
    "rates": {
        "mse_slope_min": (_float, -1.15),
        "mse_slope_max": (_float, -0.85),
        "coincidence_factor": (_float, 1.5),
        "coincidence_from": (_float, 1000.0),
        "comm_slope_max": (_float, -1.15),
    },
    "covariance": {
        "nodes": (_int, 3),
        "topology": (_str, "complete"),
        "compare_topology": (_str, "path"),
        "h": (_float, 1.0),
        "noise_var": (_float, 1.0),
        "theta": (_float, 1.0),
        "rel_tol": (_float, 0.15),
        "z_tol": (_float, 3.0),
    },
    "data": {
        "path": (_path, None),
        "target_column": (_str, "-1"),
        "nodes": (_int, None),
        "per_node": (_int, None),
        "test": (_int, None),
        "partition_seed": (_int, 0),
        "noise_var": (_auto(_float), AUTO),
        "noise_fraction": (_float, 0.25),
        "manifest": (_path, None),
        "comm_ratio_max": (_float, 0.6),
        "test_error_tol": (_float, 0.10),
    },
}


@dataclass
class Config:
    """Parsed config: validated values per section plus source location."""

    path: Optional[Path]
    values: dict
    present: dict

    def section(self, name: str) -> dict:
        return self.values[name]

    def has(self, section: str) -> bool:
        return bool(self.present.get(section))

    def is_set(self, section: str, key: str) -> bool:
        return key in self.present.get(section, set())

    def resolve_path(self, value: str) -> Path:
        p = Path(value).expanduser()
        if not p.is_absolute() and self.path is not None:
            p = self.path.parent / p
        return p

    def as_dict(self) -> dict:
        return {s: {k: (list(v) if isinstance(v, tuple) else v) for k, v in kv.items()}
                for s, kv in self.values.items() if self.present.get(s)}


def _line_of(text: str, section: str, key: Optional[str] = None) -> Optional[int]:
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"\[(.+)\]$", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return lineno
            continue
        if current == section and key is not None:
            k = re.split(r"[=:]", line, 1)[0].strip()
            if k == key:
                return lineno
    return None


def parse_config(text: str, path: Optional[Path] = None) -> Config:
    """Parse and validate config `text` against :data:`SCHEMA`."""
    name = str(path) if path else "<config>"

    def where(section, key=None):
        ln = _line_of(text, section, key)
        loc = f"{name}:{ln}" if ln else name
        return f"{loc}: [{section}]" + (f" {key}" if key else "")

    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=name)
    except configparser.Error as exc:
        raise ConfigError(f"{name}: {exc}") from exc
    values, present = {}, {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{where(section)}: unknown section (expected one of {sorted(SCHEMA)})")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"{where(section, key)}: unknown key "
                                  f"(expected one of {sorted(SCHEMA[section])})")
    for section, keys in SCHEMA.items():
        values[section] = {}
        present[section] = set(parser[section]) if parser.has_section(section) else set()
        for key, (conv, default) in keys.items():
            if key in present[section]:
                raw = parser[section][key]
                try:
                    values[section][key] = conv(raw)
                except (TypeError, ValueError):
                    raise ConfigError(f"{where(section, key)}: expected {conv.__name__}, got {raw!r}") from None
            else:
                values[section][key] = default
        if parser.has_section(section):
            present[section] = present[section] or {"__section__"}
    cfg = Config(path, values, present)
    _check_ranges(cfg, where)
    return cfg


def _check_ranges(cfg: Config, where) -> None:
    e = cfg.values["experiment"]
    rules = [
        ("experiment", "runs", e["runs"] >= 1, "must be >= 1"),
        ("experiment", "horizon", e["horizon"] >= 2, "must be >= 2"),
        ("experiment", "probes_per_decade", e["probes_per_decade"] >= 1, "must be >= 1"),
        ("network", "nodes", cfg.values["network"]["nodes"] >= 2, "must be >= 2"),
        ("network", "radius", cfg.values["network"]["radius"] > 0, "must be positive"),
        ("sensing", "noise_var", cfg.values["sensing"]["noise_var"] > 0, "must be positive"),
        ("stats", "draws", cfg.values["stats"]["draws"] >= 2, "must be >= 2"),
    ]
    from .estimators import EstimatorKind
    kinds = {k.value for k in EstimatorKind}
    bad = [k for k in e["estimators"] if k not in kinds]
    rules.append(("experiment", "estimators", not bad, f"unknown estimator(s) {bad}"))
    fw = e["fit_window"]
    rules.append(("experiment", "fit_window", fw is None or (len(fw) == 2 and 0 < fw[0] < fw[1]),
                  "must be two increasing positive times"))
    topo_kinds = {"complete", "path"}
    c = cfg.values["covariance"]
    rules.append(("covariance", "topology", c["topology"] in topo_kinds, f"must be one of {sorted(topo_kinds)}"))
    rules.append(("covariance", "compare_topology", c["compare_topology"] in topo_kinds | {"none"},
                  f"must be one of {sorted(topo_kinds | {'none'})}"))
    sch = cfg.values["schedule"]
    if (sch["rho_exponent"] is None) != (sch["zeta_exponent"] is None):
        key = "zeta_exponent" if sch["zeta_exponent"] is None else "rho_exponent"
        rules.append(("schedule", key, False, "rho_exponent and zeta_exponent must be given together"))
    for section, key, ok, msg in rules:
        if not ok:
            raise ConfigError(f"{where(section, key)}: {msg}")


def bundled_config_path(name: str) -> Path:
    """Path of a config shipped with the package (e.g. ``synthetic.cfg``)."""
    ref = resources.files("credo") / "configs" / name
    return Path(str(ref))


def bundled_configs() -> list[str]:
    return sorted(p.name for p in (resources.files("credo") / "configs").iterdir() if p.name.endswith(".cfg"))


def load_config(path) -> Config:
    """Read a config file; bare names of bundled configs are accepted too."""
    p = Path(path)
    if not p.is_file():
        bundled = bundled_config_path(p.name if p.suffix else p.name + ".cfg")
        if p.parent == Path(".") and bundled.is_file():
            p = bundled
        else:
            raise ConfigError(f"config file not found: {path}")
    return parse_config(p.read_text(), p)
