"""Built-in experiment presets for the standard benchmark scenarios.

Presets are plain config dictionaries; the CLI resolves them exactly like
a user-supplied config file, so every preset run leaves a manifest that
can be replayed.  Presets emit data (CSV/JSON), never images.
"""

from __future__ import annotations

import copy

# Experiment-wide defaults: the reference biological parameter set, a
# 200-cell unit interval, and the reference budget.
DEFAULT_CONFIG = {
    "mode": "plan",
    "params": {"b1_0": 1.0, "b2_0": 0.9, "d1": 0.27, "d2": 0.3, "s_h": 0.9},
    "budget": {"C": 30.0, "M": 250.0, "T": 1.0},
    "landscape": {"kind": "sinusoidal", "K0": 100.0},
    "grid": {"dim": 1, "extents": [1.0], "resolution": 200},
    "pde": {"D": 0.0, "dt": 1e-3, "scheme": "imex", "psi_variant": "printed"},
    "two_species": {"epsilon": 1e-3, "n_snapshots": 11},
    "sweep": {
        "D_list": [5e-2, 5e-3, 5e-4, 5e-5],
        "s_h_values": [0.5, 0.67, 0.83, 0.9, 1.0],
        "b2_0_values": [0.33, 0.47, 0.6, 0.73, 0.87, 1.0],
        "samples_per_cell": 200,
        "T_list": [0.9, 0.97, 1.03, 1.2],
        "T_mode": "relative",
        "n_grid": 256,
        "n_steps": 400,
    },
    "seed": 0,
    "cases": None,
}

PRESETS = {
    # Sinusoidal landscape, all four (C, T) combinations.
    "fig3": {
        "mode": "plan",
        "landscape": {"kind": "sinusoidal", "K0": 100.0},
        "cases": [
            {"C": 30.0, "T": 1.0}, {"C": 200.0, "T": 1.0},
            {"C": 30.0, "T": 25.0}, {"C": 200.0, "T": 25.0},
        ],
    },
    # Two-patch landscape, same four cases.
    "fig4": {
        "mode": "plan",
        "landscape": {"kind": "two-patch", "K0": 100.0},
        "cases": [
            {"C": 30.0, "T": 1.0}, {"C": 200.0, "T": 1.0},
            {"C": 30.0, "T": 25.0}, {"C": 200.0, "T": 25.0},
        ],
    },
    # Separable 2D landscape at the long horizon.
    "fig13": {
        "mode": "plan",
        "landscape": {"kind": "separable-2d", "K0": 100.0},
        "grid": {"dim": 2, "extents": [1.0, 1.0], "resolution": 64},
        "cases": [{"C": 30.0, "T": 25.0}, {"C": 200.0, "T": 25.0}],
    },
    # Vanishing-diffusion study on the arctan landscape.
    "limit": {
        "mode": "limit-sweep",
        "landscape": {"kind": "arctan", "K0": 100.0},
        "budget": {"C": 30.0, "M": 250.0, "T": 20.0},
        "pde": {"D": 0.0, "dt": 5e-3, "scheme": "imex", "psi_variant": "printed"},
        "grid": {"dim": 1, "extents": [1.0], "resolution": 100},
    },
    # Parameter-space exploration of the unimodality hypothesis.
    "hypothesis": {
        "mode": "hypothesis-sweep",
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def resolve_config(preset: str | None = None, overrides: dict | None = None) -> dict:
    """Defaults <- preset <- user config, merged recursively."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if preset is not None:
        if preset not in PRESETS:
            raise KeyError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        cfg = _merge(cfg, PRESETS[preset])
    if overrides:
        cfg = _merge(cfg, overrides)
    _validate_keys(cfg)
    return cfg


def _validate_keys(cfg: dict):
    allowed = set(DEFAULT_CONFIG) | {"output"}
    unknown = set(cfg) - allowed
    if unknown:
        raise KeyError(f"unknown config keys: {sorted(unknown)}")
    for section in ("params", "budget", "landscape", "grid", "pde",
                    "two_species", "sweep"):
        sec = cfg.get(section)
        if sec is None:
            continue
        allowed_sec = set(DEFAULT_CONFIG[section]) | (
            {"table_csv"} if section == "landscape" else set()
        )
        unknown = set(sec) - allowed_sec
        if unknown:
            raise KeyError(f"unknown keys in '{section}': {sorted(unknown)}")
