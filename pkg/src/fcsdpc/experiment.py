"""Build plants, data, predictors and closed-loop scenarios from a config."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .condense import WeightConfig
from .config import ExperimentConfig
from .data import (DataMatrix, NoiseSpec, add_output_noise, build_hankel,
                   collect_until_exciting, data_quality, noise_std)
from .loop import DpcController, ReferenceSignal, Scenario, run_closed_loop, timing_summary
from .plant import ControlSet, PlantModel, Trajectory
from .predictor import fit_spc, reg_weights

log = logging.getLogger(__name__)


def plant_of(cfg: ExperimentConfig) -> PlantModel:
    return PlantModel(np.array(cfg.A), np.array(cfg.B), np.array(cfg.C))


def control_set_of(cfg: ExperimentConfig) -> ControlSet:
    return ControlSet(cfg.channel_levels(), cfg.delta_bound)


def weights_of(cfg: ExperimentConfig, N_f: int) -> WeightConfig:
    return WeightConfig(Q=np.array(cfg.Q), R=np.array(cfg.R), lambda_a=cfg.lambda_a,
                        kind=cfg.regularizer, N_f=N_f)


@dataclass
class Dataset:
    clean: Trajectory
    noisy: Trajectory
    D: DataMatrix
    quality: dict
    noise_std: Optional[np.ndarray]


def collect(cfg: ExperimentConfig, N_f: int) -> Dataset:
    """Excite, add output noise and assemble the Hankel partition for horizon ``N_f``."""
    plant, cs = plant_of(cfg), control_set_of(cfg)
    clean = collect_until_exciting(plant, cs, cfg.N_p, N_f, cfg.collect_steps,
                                   cfg.data_seed, cfg.max_steps)
    spec = NoiseSpec(cfg.snr_db, cfg.data_seed + 1000)
    noisy = add_output_noise(clean, spec)
    D = build_hankel(noisy, cfg.N_p, N_f)
    quality = data_quality(D, noisy.u, plant.n)
    quality["samples"] = len(noisy)
    std = noise_std(clean.y, cfg.snr_db) if spec.enabled else None
    return Dataset(clean, noisy, D, quality, std)


def controller_for(cfg: ExperimentConfig, ds: Dataset, N_f: int) -> DpcController:
    spc = fit_spc(ds.D)
    w = reg_weights(ds.D)
    return DpcController(spc, w, weights_of(cfg, N_f), control_set_of(cfg))


def scenario_for(cfg: ExperimentConfig, N_f: int, audit: bool = False,
                 backend: Optional[str] = None):
    ds = collect(cfg, N_f)
    ctrl = controller_for(cfg, ds, N_f)
    sc = Scenario(
        plant=plant_of(cfg), controller=ctrl,
        reference=ReferenceSignal(cfg.reference_spec, cfg.p),
        steps=cfg.cl_steps, methods=cfg.methods, seed=cfg.cl_seed,
        noise_std=ds.noise_std if cfg.cl_noise else None,
        backend=backend, audit=audit,
    )
    return sc, ds


def horizon_records(logs: dict, N_f: int) -> list:
    """One timing record per method with samples, sorted by method."""
    stats = timing_summary({m: [e.step_time_ns for e in v] for m, v in logs.items()})
    records = []
    for method in sorted(stats):
        nodes = [e.result.nodes_explored for e in logs[method]]
        records.append({"method": method, "N_f": N_f, "unit": "ns", **stats[method].as_dict(),
                        "mean_nodes": float(np.mean(nodes))})
    return records


def run_horizon(cfg: ExperimentConfig, N_f: int, backend: Optional[str] = None):
    """One closed-loop run per method at horizon ``N_f``.

    Returns:
        ``(logs, records)``: logs per method and one timing record per method.
    """
    sc, _ = scenario_for(cfg, N_f, backend=backend)
    logs = run_closed_loop(sc)
    return logs, horizon_records(logs, N_f)
