import numpy as np
import pytest

from motion_transfer.flow_stage import FlowStageConfig
from motion_transfer.foreground_stage import ForegroundStageConfig
from motion_transfer.fusion_stage import FusionStageConfig
from motion_transfer.parsing_stage import ParsingStageConfig
from motion_transfer.pipeline import PipelineConfig


def tiny_pipeline_config(size=64, seed=0):
    """Desk-size networks for fast tests; hyperparameters keep defaults."""
    return PipelineConfig(
        parsing=ParsingStageConfig(image_size=size, base_width=8, n_blocks=2),
        flow=FlowStageConfig(image_size=size, base_width=8, depth=3),
        foreground=ForegroundStageConfig(image_size=size, base_width=8, depth=3),
        fusion=FusionStageConfig(base_width=8, n_blocks=2),
        working_size=size,
        pose_sigma=2.0,
        seed=seed,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_config():
    return tiny_pipeline_config()
