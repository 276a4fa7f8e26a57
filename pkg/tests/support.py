"""Shared builders for the test modules."""

import copy
import json
import os
import sys

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from boltzmix.config import DEFAULT_CONFIG, parse_config  # noqa: E402


def default_document() -> dict:
    with open(DEFAULT_CONFIG) as f:
        return json.load(f)


def small_document(n=(200, 200, 200), t_end=0.02, dt=0.002, **simulation) -> dict:
    """The shipped mixture with desk-scale sample sizes."""
    doc = copy.deepcopy(default_document())
    doc["simulation"].update({"n_particles": list(n), "t_end": t_end, "dt": dt,
                              "output_times": [t_end / 2.0, t_end]})
    doc["simulation"].update(simulation)
    doc["verification"].update({"n_samples": 2000, "mc_samples": 20000, "n_state_pairs": 20})
    doc["averaging"].update({"n_states": 8, "kmax": 64, "n_param": 8})
    return doc


def loaded(document: dict):
    cfg, error = parse_config(document)
    if error:
        raise AssertionError(error)
    return cfg
