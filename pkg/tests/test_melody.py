import math

import numpy as np
import pytest
import torch

from errors import AlignmentError, ConfigurationError, ShapeError
from synthesis.corpus import CorpusConfig, generate_clip, generate_corpus
from synthesis.melody import (
    MelodyConfig,
    MelodyExtractor,
    MelodyRepresentation,
    kd_loss,
    make_projection,
    melody_kd,
    resample_melody,
    student_extract,
    teacher_extract,
    teacher_frame_count,
)


def zero_projection(config=MelodyConfig()):
    proj = make_projection(config)
    torch.nn.init.zeros_(proj.weight)
    torch.nn.init.zeros_(proj.bias)
    return proj


class TestTeacher:
    def test_rows_are_distributions(self):
        config = CorpusConfig()
        for clip in generate_corpus(20, config, seed=0):
            rows = teacher_extract(clip.features, config).values
            assert (rows >= 0).all()
            torch.testing.assert_close(rows.sum(-1), torch.ones(rows.shape[0]), atol=1e-6, rtol=0)

    def test_softened_one_hot_values(self):
        config = CorpusConfig()
        clip = generate_clip(0, config, seed=1)
        melody = MelodyConfig(teacher_rate_ratio=1.0)
        rows = teacher_extract(clip.features, config, melody, dtype=torch.float64).values
        pitch = clip.pitch_contour
        for t in range(len(pitch)):
            assert int(rows[t].argmax()) == pitch[t]
            assert float(rows[t].max()) == pytest.approx(0.95 + 0.05 / 49, abs=1e-12)

    def test_unvoiced_frame_peaks_at_bin_zero(self):
        config = CorpusConfig()
        seen = 0
        for clip in generate_corpus(10, config, seed=1):
            rows = teacher_extract(clip.features, config, MelodyConfig(teacher_rate_ratio=1.0)).values
            unvoiced = np.flatnonzero(clip.pitch_contour == 0)
            assert (rows[torch.from_numpy(unvoiced)].argmax(-1) == 0).all()
            seen += unvoiced.size
        assert seen

    def test_teacher_rate(self):
        config = CorpusConfig()
        clip = generate_clip(0, config, seed=1)
        rep = teacher_extract(clip.features, config)
        assert rep.frame_count == teacher_frame_count(config.frames, MelodyConfig()) == 96
        assert rep.is_distribution

    def test_deterministic(self):
        config = CorpusConfig()
        clip = generate_clip(0, config, seed=1)
        a = teacher_extract(clip.features, config).values
        b = teacher_extract(clip.features, config).values
        assert torch.equal(a, b)
        assert not a.requires_grad


class TestStudent:
    def test_zero_init_output_is_zero(self):
        config = CorpusConfig()
        clip = generate_clip(0, config, seed=1)
        extractor = MelodyExtractor(config.feature_dim, zero_init_output=True)
        out = student_extract(clip.features, extractor).values
        assert out.shape == (config.frames, MelodyConfig().student_dim)
        assert not out.any()

    @pytest.mark.parametrize("T", [1, 7, 64, 200])
    def test_shape_contract(self, T):
        extractor = MelodyExtractor(16)
        out = student_extract(torch.randn(T, 16), extractor).values
        assert out.shape == (T, 32)

    def test_wrong_feature_dim(self):
        with pytest.raises(ShapeError):
            MelodyExtractor(16)(torch.randn(4, 8))

    def test_gradcheck(self):
        torch.manual_seed(0)
        extractor = MelodyExtractor(4, MelodyConfig(student_dim=3, hidden=5, hidden_layers=2)).double()
        x = torch.randn(6, 4, dtype=torch.float64)
        weight = extractor.hidden[0].weight.detach().clone().requires_grad_(True)

        def kd_of(w):
            h = torch.nn.functional.gelu(x @ w.T + extractor.hidden[0].bias)
            h = extractor.hidden[2:](h)
            return extractor.output(h).square().sum()

        assert torch.autograd.gradcheck(kd_of, (weight,), eps=1e-6, atol=1e-6, rtol=1e-4)


class TestKdLoss:
    def test_zero_when_distributions_match(self):
        teacher = MelodyRepresentation(torch.softmax(torch.randn(5, 49, dtype=torch.float64), -1), True)
        proj = torch.nn.Identity()
        student = MelodyRepresentation(torch.log(teacher.values))
        assert float(kd_loss(student, teacher, proj)) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_vs_uniform(self):
        teacher = MelodyRepresentation(torch.full((4, 49), 1 / 49), True)
        student = MelodyRepresentation(torch.randn(4, 32))
        assert float(kd_loss(student, teacher, zero_projection())) == pytest.approx(0.0, abs=1e-6)

    def test_uniform_student_vs_softened_teacher(self):
        config = CorpusConfig()
        clip = generate_clip(0, config, seed=2)
        teacher = teacher_extract(clip.features, config, dtype=torch.float64)
        student = MelodyRepresentation(torch.randn(teacher.frame_count, 32, dtype=torch.float64))
        loss = float(kd_loss(student, teacher, zero_projection().double()))

        p = 1 / 49
        per_frame = []
        for row in teacher.values.numpy():
            per_frame.append(sum(p * math.log(p / q) for q in row))
        assert loss == pytest.approx(np.mean(per_frame), rel=1e-10)

    def test_non_negative_and_positive_when_different(self):
        torch.manual_seed(3)
        for _ in range(10):
            teacher = MelodyRepresentation(torch.softmax(torch.randn(6, 49), -1), True)
            loss = kd_loss(MelodyRepresentation(torch.randn(6, 32)), teacher, make_projection())
            assert float(loss) > 0

    def test_frame_mismatch(self):
        teacher = MelodyRepresentation(torch.full((4, 49), 1 / 49), True)
        with pytest.raises(AlignmentError):
            kd_loss(MelodyRepresentation(torch.randn(5, 32)), teacher, make_projection())

    def test_melody_kd_resamples_student(self):
        config = CorpusConfig()
        clip = generate_clip(0, config, seed=2)
        extractor = MelodyExtractor(config.feature_dim)
        student = student_extract(clip.features, extractor)
        loss = melody_kd(clip.features, student, make_projection(), config)
        loss.backward()
        assert extractor.output.weight.grad is not None
        assert extractor.output.weight.grad.abs().sum() > 0


class TestResample:
    def test_identity(self):
        rep = MelodyRepresentation(torch.randn(5, 3))
        assert resample_melody(rep, 5) is rep

    def test_constant_rows(self):
        row = torch.tensor([0.2, 0.3, 0.5])
        rep = MelodyRepresentation(row.repeat(4, 1), True)
        out = resample_melody(rep, 9).values
        torch.testing.assert_close(out, row.repeat(9, 1))

    def test_midpoint(self):
        rep = MelodyRepresentation(torch.tensor([[0.0, 2.0], [4.0, 6.0]]))
        out = resample_melody(rep, 3).values
        torch.testing.assert_close(out[1], torch.tensor([2.0, 4.0]))

    def test_distribution_renormalized(self):
        rows = torch.softmax(torch.randn(5, 49), -1)
        out = resample_melody(MelodyRepresentation(rows, True), 8).values
        torch.testing.assert_close(out.sum(-1), torch.ones(8))

    def test_zero_target(self):
        with pytest.raises(ConfigurationError):
            resample_melody(MelodyRepresentation(torch.randn(5, 3)), 0)
