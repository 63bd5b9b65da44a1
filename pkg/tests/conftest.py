import numpy as np
import pytest

from mapgen.dataio import write_synthetic_dataset
from mapgen.training import load_samples, model_config

TINY = dict(n_points=64, m_points=48, crop=(16, 16), seg_point_widths=(8, 16), seg_point_head=(16,),
            seg_image_widths=(4, 8, 8), seg_pool_dim=4, feat_dim=8, gen_d_model=16, gen_heads=2,
            gen_ff=32, gen_layers=1, gen_pos_dim=8, box_widths=(8, 16), box_hidden=16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_cfg():
    return model_config("desk", **TINY)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth12")
    write_synthetic_dataset(root, 12, seed=7)
    return root


@pytest.fixture(scope="session")
def small_samples(small_dataset, tiny_cfg):
    return load_samples(small_dataset, "all", tiny_cfg.crop)


def tiny_train_config(stage, epochs=2, seed=0, **model):
    from mapgen.training import train_config

    return train_config("desk", model={**TINY, **model}, stage=stage, epochs=epochs, batch_size=8, seed=seed)


@pytest.fixture(scope="session")
def trained_chain(tmp_path_factory, small_samples):
    """Checkpoints after each of the three tiny stages: ``{"seg": path, "gen": path, "box": path}``."""
    from mapgen.training import run_stage

    out = tmp_path_factory.mktemp("chain")
    paths, prev = {}, None
    for stage in ("seg", "gen", "box"):
        paths[stage] = out / f"{stage}.mgck"
        run_stage(tiny_train_config(stage), prev, paths[stage], samples=small_samples)
        prev = paths[stage]
    return paths


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
