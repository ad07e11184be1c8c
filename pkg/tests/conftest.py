import dataclasses

import numpy as np
import pytest

import mbaq


@pytest.fixture(scope="session")
def small_scene_cfg():
    # 96x96 keeps per-test encodes cheap while preserving the corpus texture.
    return dataclasses.replace(
        mbaq.SceneConfig(), width=96, height=96, min_objects=1, max_objects=2
    )


@pytest.fixture(scope="session")
def small_scene(small_scene_cfg):
    return mbaq.generate_scene(7, small_scene_cfg)


@pytest.fixture(scope="session")
def small_corpus(small_scene_cfg):
    return [mbaq.generate_scene(100 + i, small_scene_cfg) for i in range(6)]


@pytest.fixture(scope="session")
def oracle():
    return mbaq.DetectionOracle()


@pytest.fixture(scope="session")
def flat_frame():
    return mbaq.Frame(np.full((64, 64), 110, dtype=np.uint8))
