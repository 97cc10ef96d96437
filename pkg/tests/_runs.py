"""Full-resolution runs shared by the acceptance and geometry tests."""
import time
from functools import lru_cache

from flatmorse.pipeline import PipelineConfig, refinement_study, run_pipeline


@lru_cache(maxsize=None)
def pipeline_run(surface, resolution, **kw):
    cfg = PipelineConfig(surface=surface, resolution=resolution, **kw)
    t0 = time.perf_counter()
    run = run_pipeline(cfg)
    run.extras["wall"] = time.perf_counter() - t0
    run.extras["config"] = cfg
    return run


@lru_cache(maxsize=None)
def refinement(surface, resolution):
    run = pipeline_run(surface, resolution)
    return refinement_study(run, run.extras["config"])
