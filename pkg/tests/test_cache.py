from pathlib import Path

import numpy as np
import pytest

from src.attack import PerturbationBudget
from src.config.model_config import StrategyKind
from src.errors import CacheCollisionError, ConfigurationError, PersistenceError
from src.ml.cache import CACHE_ENV_VAR, DEFAULT_CACHE_DIR, PretrainCache, cache_key, pretrain_cache, resolve_cache_dir
from src.ml.train_models import TrainConfig

from tests.conftest import TINY_WIDTHS


@pytest.fixture
def config():
    return TrainConfig(epochs=1, lr0=0.05, batch_size=8, seed=0)


def test_environment_beats_configured_directory(monkeypatch, tmp_path):
    monkeypatch.setenv(CACHE_ENV_VAR, str(tmp_path / "env"))
    assert resolve_cache_dir(tmp_path / "cfg") == tmp_path / "env"
    monkeypatch.delenv(CACHE_ENV_VAR)
    assert resolve_cache_dir(tmp_path / "cfg") == tmp_path / "cfg"
    assert resolve_cache_dir(None) == DEFAULT_CACHE_DIR


@pytest.mark.parametrize(
    "kind,eps,seed,expected",
    [
        (StrategyKind.ST, None, 3, "ST_seed3"),
        (StrategyKind.AT, 0.1, 0, "AT_eps0.1_seed0"),
        (StrategyKind.AT, 8 / 255, 1, "AT_eps0.0313725_seed1"),
        (StrategyKind.AT, 1.0, 2, "AT_eps1_seed2"),
    ],
)
def test_cache_keys(kind, eps, seed, expected):
    assert cache_key(kind, eps, seed) == expected


def test_miss_then_hit(config, source_set, isolated_cache):
    cache = PretrainCache.open()
    assert cache.root == isolated_cache
    first, record, path = pretrain_cache(source_set, StrategyKind.ST, None, config, cache=cache, widths=TINY_WIDTHS)
    assert path == isolated_cache / "ST_seed0.mrv" and path.exists()
    second, cached_record, _ = pretrain_cache(source_set, StrategyKind.ST, None, config, cache=cache, widths=TINY_WIDTHS)
    assert (cache.misses, cache.hits) == (1, 1)
    assert cached_record.final_acc == pytest.approx(record.final_acc)
    for name, arr in first.state_dict().items():
        np.testing.assert_array_equal(arr, second.state_dict()[name], err_msg=name)
    assert second.provenance["source_kind"] == "ST"


def test_source_seed_selects_the_entry(source_set):
    cache = PretrainCache.open()
    pretrain_cache(source_set, StrategyKind.ST, None, TrainConfig(epochs=1, batch_size=8, seed=5, source_seed=0), cache=cache, widths=TINY_WIDTHS)
    pretrain_cache(source_set, StrategyKind.ST, None, TrainConfig(epochs=1, batch_size=8, seed=6, source_seed=0), cache=cache, widths=TINY_WIDTHS)
    assert (cache.misses, cache.hits) == (1, 1)
    assert sorted(p.name for p in cache.root.glob("*.mrv")) == ["ST_seed0.mrv"]


def test_radii_that_format_alike_collide(config, source_set):
    cache = PretrainCache.open()
    pretrain_cache(source_set, StrategyKind.AT, PerturbationBudget(0.1, iters=1), config, cache=cache, widths=TINY_WIDTHS)
    with pytest.raises(CacheCollisionError) as info:
        pretrain_cache(source_set, StrategyKind.AT, PerturbationBudget(0.1000000001, iters=1), config, cache=cache, widths=TINY_WIDTHS)
    assert info.value.exit_code == 5
    assert "epsilon_s" in str(info.value)


def test_changed_training_recipe_collides(config, source_set):
    cache = PretrainCache.open()
    pretrain_cache(source_set, StrategyKind.ST, None, config, cache=cache, widths=TINY_WIDTHS)
    with pytest.raises(CacheCollisionError):
        pretrain_cache(source_set, StrategyKind.ST, None, TrainConfig(epochs=2, lr0=0.05, batch_size=8), cache=cache, widths=TINY_WIDTHS)


@pytest.mark.parametrize("kind,budget", [(StrategyKind.ST_FT, None), (StrategyKind.AT, None)])
def test_invalid_source_kind(config, source_set, kind, budget):
    with pytest.raises(ConfigurationError):
        pretrain_cache(source_set, kind, budget, config, widths=TINY_WIDTHS)


def test_lock_is_exclusive_and_released():
    cache = PretrainCache.open()
    lock_path: Path = cache.root / "ST_seed0.lock"
    with cache.lock("ST_seed0"):
        assert lock_path.exists()
        with pytest.raises(PersistenceError):
            with cache.lock("ST_seed0", timeout=0.0):
                pass
    assert not lock_path.exists()


def test_adversarial_source_checkpoint_records_its_radius(config, source_set):
    from src.model import read_checkpoint

    _, record, path = pretrain_cache(
        source_set, StrategyKind.AT, PerturbationBudget(0.25, iters=1), config, widths=TINY_WIDTHS
    )
    assert read_checkpoint(path).training["epsilon_s"] == 0.25
    assert record.adversarial and record.epsilon == 0.25
