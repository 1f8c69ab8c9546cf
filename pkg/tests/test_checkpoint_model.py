from __future__ import annotations

import numpy as np
import pytest

from crossview_afford.checkpoint import META_NAME, load_checkpoint, save_checkpoint
from crossview_afford.errors import FormatError, LabelError
from crossview_afford.ftm import snap_to_f32
from crossview_afford.model import W0_NAME, init_model, load_model
from crossview_afford.tensor import ComputationTape, Tensor

CLASSES = ("grasp", "cut")


def _images(rng, config, n):
    size = config.input_size
    return [Tensor(rng.uniform(-1, 1, size=(3, size, size))) for _ in range(n)]


class TestCheckpointDirectory:
    def test_round_trip(self, tmp_path, rng):
        arrays = {"a/b/kernel": rng.normal(size=(2, 3)), "top": rng.normal(size=4)}
        save_checkpoint(tmp_path / "ck", arrays, {"epoch": "3"})
        assert (tmp_path / "ck" / "a" / "b" / "kernel.ftm").exists()
        loaded, meta = load_checkpoint(tmp_path / "ck")
        assert meta == {"epoch": "3"}
        assert set(loaded) == set(arrays)
        for name, array in arrays.items():
            assert np.array_equal(loaded[name], snap_to_f32(array))

    @pytest.mark.parametrize("name", ["../escape", "/abs", "a/../../b"])
    def test_rejects_escaping_names(self, tmp_path, name):
        with pytest.raises(FormatError, match="invalid checkpoint entry"):
            save_checkpoint(tmp_path, {name: np.zeros(1)}, {})

    def test_missing_meta(self, tmp_path):
        with pytest.raises(FormatError, match=META_NAME):
            load_checkpoint(tmp_path)


class TestModel:
    def test_parameter_names(self, tiny_config):
        names = set(init_model(tiny_config, CLASSES).parameters())
        assert {"encoder/stem/kernel", "aim/f_reduce/bias", "cft/project/kernel", "head/fc/weight"} <= names
        assert W0_NAME not in names

    def test_init_is_seeded(self, tiny_config):
        a = init_model(tiny_config, CLASSES).to_arrays()
        b = init_model(tiny_config, CLASSES).to_arrays()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_dictionary_starts_positive(self, tiny_config):
        W0 = init_model(tiny_config, CLASSES).dictionary.W0
        assert W0.shape == (tiny_config.channels, tiny_config.rank)
        assert np.all(W0 > 0)

    def test_save_load(self, tmp_path, tiny_config, rng):
        model = init_model(tiny_config, CLASSES)
        model.epoch = 4
        model.save(tmp_path / "ck", extra_arrays={"optim/head/fc/weight": np.ones((2, 5))})
        loaded, extra = load_model(tmp_path / "ck")
        assert loaded.config == tiny_config
        assert loaded.classes == CLASSES
        assert loaded.epoch == 4
        assert list(extra) == ["optim/head/fc/weight"]
        original = model.to_arrays()
        for name, array in loaded.to_arrays().items():
            assert np.array_equal(array, snap_to_f32(original[name])), name
        assert all(p.requires_grad for p in loaded.parameters().values())

    def test_load_missing_parameter(self, tmp_path, tiny_config):
        init_model(tiny_config, CLASSES).save(tmp_path)
        (tmp_path / "head" / "fc" / "bias.ftm").unlink()
        with pytest.raises(FormatError, match="head/fc/bias"):
            load_model(tmp_path)

    def test_set_parameter_errors(self, tiny_config):
        model = init_model(tiny_config, CLASSES)
        with pytest.raises(FormatError, match="unknown parameter"):
            model.set_parameter("head/fc/gamma", np.zeros(2))
        with pytest.raises(FormatError, match="expected shape"):
            model.set_parameter("head/fc/bias", np.zeros(3))

    def test_class_index(self, tiny_config):
        model = init_model(tiny_config, CLASSES)
        assert model.class_index("cut") == 1
        with pytest.raises(LabelError, match="known: grasp, cut"):
            model.class_index("ride")

    def test_no_classes(self, tiny_config):
        with pytest.raises(LabelError):
            init_model(tiny_config, [])


class TestForward:
    def test_losses_are_finite_and_weighted(self, tiny_config, rng):
        model = init_model(tiny_config, CLASSES)
        ego, *exo = _images(rng, tiny_config, 1 + tiny_config.n_exo)
        result = model.forward_instance(ego, exo, 1, np.random.default_rng(0))
        values = result.losses.values()
        assert all(np.isfinite(v) for v in values.values())
        c = tiny_config
        expected = c.lambda1 * values["l_cls"] + c.lambda2 * values["l_acp"] + c.lambda3 * values["l_kt"]
        assert values["total"] == pytest.approx(expected, rel=1e-12)
        assert result.W_batch.shape == (c.channels, c.rank)

    def test_forward_leaves_dictionary_alone(self, tiny_config, rng):
        model = init_model(tiny_config, CLASSES)
        before = model.dictionary.W0.copy()
        ego, *exo = _images(rng, tiny_config, 3)
        model.forward_instance(ego, exo, 0, np.random.default_rng(0))
        assert np.array_equal(model.dictionary.W0, before)

    def test_without_cft_there_is_no_transfer_loss(self, tiny_config, rng):
        model = init_model(tiny_config.replace(use_cft=False), CLASSES)
        ego, *exo = _images(rng, tiny_config, 3)
        result = model.forward_instance(ego, exo, 0, np.random.default_rng(0))
        assert result.losses.l_kt.item() == 0.0

    def test_without_aim_the_batch_dictionary_is_w0(self, tiny_config, rng):
        model = init_model(tiny_config.replace(use_aim=False, use_cft=False), CLASSES)
        ego, *exo = _images(rng, tiny_config, 3)
        result = model.forward_instance(ego, exo, 0, np.random.default_rng(0))
        assert np.array_equal(result.W_batch, model.dictionary.W0)

    def test_ego_features_shape(self, tiny_config, rng):
        model = init_model(tiny_config, CLASSES)
        D = model.ego_features(_images(rng, tiny_config, 1)[0])
        assert D.shape == (tiny_config.head_channels, tiny_config.feat_size, tiny_config.feat_size)

    def test_forward_records_on_tape(self, tiny_config, rng):
        model = init_model(tiny_config, CLASSES)
        ego, *exo = _images(rng, tiny_config, 3)
        with ComputationTape() as tape:
            total = model.forward_instance(ego, exo, 0, np.random.default_rng(0)).losses.total
            tape.backward(total)
        assert model.parameters()["head/fc/weight"].grad is not None
        assert model.parameters()["encoder/stem/kernel"].grad is not None
