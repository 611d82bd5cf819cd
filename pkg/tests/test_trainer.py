import json

import pytest
import torch

from errors import ConfigurationError, DomainError
from services.checkpoints import load_checkpoint
from services.trainer import (
    LOG_KEYS,
    TrainConfig,
    clip_rng,
    draw_batch,
    load_train_file,
    lr_schedule,
    make_optimizer,
    pretrain,
    train_step,
)
from synthesis.backbone import SingerModel


def tiny_train(**overrides):
    values = dict(batch_size=4, total_steps=4, warmup_steps=0, peak_lr=1e-3)
    values.update(overrides)
    return TrainConfig(**values)


class TestLrSchedule:
    def test_warmup_then_decay(self):
        config = TrainConfig(total_steps=100, warmup_steps=10, peak_lr=1e-3)
        assert lr_schedule(0, config) == 0.0
        assert lr_schedule(5, config) == pytest.approx(5e-4)
        assert lr_schedule(10, config) == pytest.approx(1e-3)
        assert lr_schedule(55, config) == pytest.approx(5e-4)
        assert lr_schedule(100, config) == 0.0

    def test_out_of_range(self):
        config = TrainConfig(total_steps=10, warmup_steps=2)
        with pytest.raises(DomainError):
            lr_schedule(11, config)
        with pytest.raises(DomainError):
            lr_schedule(-1, config)

    @pytest.mark.parametrize("overrides", [{"batch_size": 0}, {"warmup_steps": 5000}, {"dropout_rate": 1.5}])
    def test_invalid_config(self, overrides):
        with pytest.raises(ConfigurationError):
            TrainConfig(**overrides).validate()


class TestRng:
    def test_batches_are_reproducible(self, clips):
        config = tiny_train()
        a = [c.clip_id for c in draw_batch(clips, 3, config)]
        b = [c.clip_id for c in draw_batch(clips, 3, config)]
        assert a == b
        assert len(set(a)) == 4

    def test_clip_streams_differ(self):
        assert clip_rng(0, 1, "clip_00000").random() != clip_rng(0, 1, "clip_00001").random()
        assert clip_rng(0, 1, "clip_00000").random() == clip_rng(0, 1, "clip_00000").random()


class TestTrainStep:
    def test_total_is_weighted_sum(self, model, clips, corpus_config):
        config = tiny_train()
        record = train_step(clips[:4], model, make_optimizer(model, config), 0, config, corpus_config)
        assert record["skipped"] is False
        assert record["loss_total"] == pytest.approx(
            record["loss_diff"] + record["kd_term"] + record["cka_term"], rel=1e-12
        )
        assert record["lambda_cka"] == pytest.approx(0.3)
        assert record["cka"] == pytest.approx(1.0 - record["loss_cka"])
        assert 0.0 <= record["cka"] <= 1.0 + 1e-6

    def test_updates_extractor_and_network(self, model, clips, corpus_config):
        config = tiny_train()
        extractor_before = model.extractor.output.weight.detach().clone()
        head_before = model.network.head.weight.detach().clone()
        train_step(clips[:4], model, make_optimizer(model, config), 0, config, corpus_config)
        assert not torch.equal(extractor_before, model.extractor.output.weight)
        assert not torch.equal(head_before, model.network.head.weight)

    def test_zero_weights_zero_terms(self, model, clips, corpus_config):
        config = tiny_train(lambda_kd=0.0, cka_enabled=False)
        record = train_step(clips[:4], model, make_optimizer(model, config), 0, config, corpus_config)
        assert record["kd_term"] == 0.0
        assert record["cka_term"] == 0.0
        assert record["loss_total"] == pytest.approx(record["loss_diff"])

    def test_first_warmup_step_has_zero_lr(self, model, clips, corpus_config):
        config = tiny_train(warmup_steps=2)
        before = [p.detach().clone() for p in model.parameters()]
        record = train_step(clips[:4], model, make_optimizer(model, config), 0, config, corpus_config)
        assert record["lr"] == 0.0
        assert all(torch.equal(a, b) for a, b in zip(before, model.parameters()))

    def test_deterministic(self, model_config, clips, corpus_config):
        config = tiny_train()
        records = []
        for _ in range(2):
            torch.manual_seed(0)
            model = SingerModel(model_config)
            records.append(train_step(clips[:4], model, make_optimizer(model, config), 1, config, corpus_config))
        assert records[0] == records[1]


class TestPretrain:
    def test_writes_log_and_checkpoint(self, tmp_path, clips, corpus_config, model_config):
        pretrain(clips, corpus_config, model_config, tiny_train(), tmp_path, progress=False)
        lines = (tmp_path / "train_log.jsonl").read_text().splitlines()
        assert len(lines) == 4
        assert set(json.loads(lines[0])) == set(LOG_KEYS)
        ckpt = load_checkpoint(tmp_path / "checkpoint.zip", expected_config=model_config)
        assert ckpt.step == 4
        assert ckpt.extra["corpus_config"]["frames"] == corpus_config.frames

    def test_resume_matches_uninterrupted_run(self, tmp_path, clips, corpus_config, model_config):
        config = tiny_train(checkpoint_every=2)
        full = pretrain(clips, corpus_config, model_config, config, tmp_path / "full", progress=False)
        half = load_checkpoint(tmp_path / "full" / "step_2.zip")
        resumed = pretrain(
            clips, corpus_config, model_config, config, tmp_path / "resumed", resume=half, progress=False
        )
        for (name, a), (_, b) in zip(full.state_dict().items(), resumed.state_dict().items()):
            assert torch.equal(a, b), name
        assert len((tmp_path / "resumed" / "train_log.jsonl").read_text().splitlines()) == 2

    def test_empty_corpus(self, tmp_path, corpus_config, model_config):
        with pytest.raises(ConfigurationError):
            pretrain([], corpus_config, model_config, tiny_train(), tmp_path, progress=False)


class TestTrainFile:
    def test_parses_train_and_model_keys(self, tmp_path, corpus_config):
        path = tmp_path / "train.env"
        path.write_text("BATCH_SIZE=2\nTOTAL_STEPS=10\nWARMUP_STEPS=1\nMODEL_LAYERS=2\nMODEL_HIDDEN=16\nMODEL_HEADS=2\n")
        train, model = load_train_file(path, corpus_config)
        assert (train.batch_size, train.total_steps, train.warmup_steps) == (2, 10, 1)
        assert (model.layers, model.hidden, model.heads) == (2, 16, 2)
        assert model.feature_dim == corpus_config.feature_dim
        assert model.vocab_size == corpus_config.vocab_size

    def test_unknown_key(self, tmp_path, corpus_config):
        path = tmp_path / "train.env"
        path.write_text("BATCH_SIZE=2\nLEARNING_RATE=0.1\n")
        with pytest.raises(ConfigurationError):
            load_train_file(path, corpus_config)

    def test_corpus_keys_rejected(self, tmp_path, corpus_config):
        path = tmp_path / "train.env"
        path.write_text("BATCH_SIZE=2\nCORPUS_VOCAB_SIZE=40\n")
        with pytest.raises(ConfigurationError, match="corpus_vocab_size"):
            load_train_file(path, corpus_config)

    def test_missing_file(self, tmp_path, corpus_config):
        with pytest.raises(FileNotFoundError):
            load_train_file(tmp_path / "nope.env", corpus_config)


class TestSmokeRun:
    @pytest.mark.slow
    def test_flow_matching_loss_falls(self, tmp_path, clips, corpus_config, model_config):
        config = TrainConfig(batch_size=4, total_steps=500, warmup_steps=20, peak_lr=1e-3)
        pretrain(clips, corpus_config, model_config, config, tmp_path, progress=False)
        rows = [json.loads(line) for line in (tmp_path / "train_log.jsonl").read_text().splitlines()]
        losses = {row["step"]: row["loss_diff"] for row in rows}

        def moving_average(end, window=10):
            values = [losses[s] for s in range(end - window, end) if s in losses]
            assert values
            return sum(values) / len(values)

        assert moving_average(500) < moving_average(10)
