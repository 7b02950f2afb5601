from dataclasses import replace

from dapspp.config import build_problem, preset


def task_problem(task, truth_seed, gamma=None, **sampler_changes):
    """A preset's config and problem with the ground truth drawn from ``truth_seed``."""
    cfg = preset(task, **sampler_changes)
    meas = dict(cfg.measurement, truth_seed=truth_seed)
    if gamma is not None:
        meas["gamma"] = gamma
    cfg = replace(cfg, measurement=meas)
    return cfg, build_problem(cfg)
