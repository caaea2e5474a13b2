import os
import sys

import numpy as np
import pytest

# Add project root to Python path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if project_root not in sys.path:
    sys.path.insert(0, project_root)

from cumad.autoencoder import init_model, save_model
from cumad.calibration import calibrate
from cumad.dataset import generate_synthetic
from cumad.models.dataset import SyntheticSpec
from cumad.models.detection import DetectorProfile

TOY_DIMS = [6, 4, 2, 4, 6]


@pytest.fixture
def toy_model():
    """6 维小模型，单元测试用"""
    return init_model(TOY_DIMS, seed=3)


@pytest.fixture
def toy_data():
    """6 维合成良性/攻击数据"""
    spec = SyntheticSpec(
        n_benign=300, n_attack=300, dim=6, benign_correlation=0.8, attack_shift=4.0, seed=5, device_id="toy"
    )
    return generate_synthetic(spec)


@pytest.fixture
def toy_profile(toy_model, toy_data):
    benign, _ = toy_data
    return calibrate(toy_model, benign, "toy")


@pytest.fixture
def toy_model_file(tmp_path, toy_model, toy_profile):
    """带标定信息的模型文件"""
    return save_model(toy_model, tmp_path / "toy.json", toy_profile)


@pytest.fixture
def fixed_profile():
    """T_as = 1.0 的固定标定信息，θ₀ = 0.2"""
    return DetectorProfile(T_as=1.0, mu_D=0.5, sigma_D=0.5, theta0=0.2, device_id="dev")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
