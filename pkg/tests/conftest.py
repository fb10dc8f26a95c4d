import pytest

from bevquery.decoder import ModelConfig, ModelParams
from bevquery.sampling import SamplingConfig, prepare_inputs
from bevquery.scene import SceneConfig, build_scene


def small_setup(num_queries=8, num_layers=3, seed=0, channels=16):
    scene = build_scene(SceneConfig(num_objects=3, channels=channels, num_frames=2,
                                    strides=(4, 8), roi_half_extent=12.0), seed)
    scfg = SamplingConfig(num_frames=2, num_points=3, num_levels=2)
    mcfg = ModelConfig(num_queries=num_queries, embed_dim=12, num_heads=2, head_dim=4,
                       channels=channels, num_layers=num_layers, roi_half_extent=12.0)
    params = ModelParams.init(mcfg, scfg, seed=seed)
    return scene, params, prepare_inputs(scene, scfg)


@pytest.fixture(scope="module")
def small():
    return small_setup()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[number])
