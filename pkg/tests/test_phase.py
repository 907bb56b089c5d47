import numpy as np
import pytest
import torch

from mvmtwin.core import drop_frames, DownsampleSpec
from mvmtwin.metrics import compute_w2
from mvmtwin.nets import PatchDiscriminator, R2UNetConfig
from mvmtwin.phase import (
    NoiseModel, PhaseModel, PhaseNetConfig, PhaseTrainConfig, build_phase_dataset, composite_phase,
    magnitude_triplet, masked_l1, oracle_generator, sample_background, split_foreground,
    synthesize_phases, train_phase,
)
from mvmtwin.temporal import TrainingFailure
from mvmtwin.velocity import global_curves

TINY = PhaseNetConfig(generator=R2UNetConfig(4, 2, 1), disc_base=4)


def test_triplet_wraps(small_study):
    m = small_study.magnitude
    T = small_study.meta.num_frames
    assert np.array_equal(magnitude_triplet(small_study, 1), m[[0, 1, 2]])
    assert np.array_equal(magnitude_triplet(small_study, T - 1), m[[T - 2, T - 1, 0]])
    assert np.array_equal(magnitude_triplet(small_study, 0), m[[T - 1, 0, 1]])
    with pytest.raises(ValueError):
        magnitude_triplet(small_study, T)


def test_split_foreground():
    m = np.array([[-1.0, 0.2, -0.95, -0.96]])
    assert split_foreground(m).tolist() == [[0, 1, 1, 0]]


def test_split_matches_w2_off_the_threshold(rng):
    m = rng.uniform(-1, 1, (32, 32))
    m[m == -0.95] = 0.0
    assert np.array_equal(split_foreground(m).astype(bool), compute_w2(m).weights == 1.0)


def test_background_statistics():
    n = 100_000
    x = sample_background((n,), NoiseModel(), seed=5)
    assert abs(x.mean() - 0.034) <= 3 * 0.034 / np.sqrt(n)
    assert abs(x.std() - 0.034) <= 5e-3
    assert np.array_equal(x, sample_background((n,), NoiseModel(), seed=5))
    with pytest.raises(ValueError):
        NoiseModel(sigma=0.0)


def test_composite_contract(rng):
    gen = rng.uniform(-1, 1, (3, 16, 16))
    fg = np.zeros((16, 16))
    bg = -np.ones((16, 16))
    assert np.array_equal(composite_phase(gen, fg, seed=1), gen)
    pure = composite_phase(gen, bg, seed=1)
    assert not np.isin(pure, gen).any()
    assert not np.array_equal(pure[0], pure[1])  # channels draw independently
    mixed = np.where(rng.uniform(size=(16, 16)) > 0.5, 0.1, -1.0)
    out = composite_phase(gen, mixed, seed=2)
    on = split_foreground(mixed).astype(bool)
    assert np.array_equal(out[:, on], gen[:, on])
    again = composite_phase(out, mixed, seed=9)
    assert np.array_equal(again[:, on], out[:, on])


def test_background_difference_concentrates_at_two_sigma_squared():
    bg = -np.ones((128, 128))
    gen = np.zeros((3, 128, 128))
    a = composite_phase(gen, bg, seed=1)
    b = composite_phase(gen, bg, seed=2)
    assert ((a - b) ** 2).mean() == pytest.approx(2 * 0.034**2, rel=0.05)


def test_masked_l1():
    p = torch.zeros(1, 3, 2, 2)
    y = torch.ones(1, 3, 2, 2)
    m = torch.tensor([[[[1.0, 0.0], [0.0, 0.0]]]])
    assert float(masked_l1(p, y, m)) == 1.0
    y[0, :, 1, 1] = 5.0
    assert float(masked_l1(p, y, m)) == 1.0


def test_discriminator_patch_grid():
    d = PatchDiscriminator(6, 8, 4)
    assert d(torch.zeros(2, 6, 64, 64)).shape == (2, 1, 4, 4)
    assert d.patch == 16
    with pytest.raises(ValueError):
        PhaseNetConfig(disc_blocks=3)


def test_dataset(small_study):
    ds = build_phase_dataset([small_study])
    T = small_study.meta.num_frames
    assert len(ds) == T and ds.triplets.shape[1:] == (3, 32, 32)
    assert np.array_equal(ds.phases[3], small_study.phases[3])
    with pytest.raises(ValueError):
        build_phase_dataset([drop_frames(small_study, DownsampleSpec(1))])


@pytest.fixture(scope="module")
def tiny_phase(small_study):
    return train_phase(build_phase_dataset([small_study]), TINY,
                       PhaseTrainConfig(epochs=2, batch_size=4, seed=0))


def test_phase_training_deterministic(small_study, tiny_phase):
    again = train_phase(build_phase_dataset([small_study]), TINY,
                        PhaseTrainConfig(epochs=2, batch_size=4, seed=0))
    for a, b in zip(tiny_phase.generator.state_dict().values(), again.generator.state_dict().values()):
        assert torch.equal(a, b)
    assert tiny_phase.history == again.history


def test_synthesize_contract(small_study, tiny_phase, tmp_path):
    out = synthesize_phases(tiny_phase, small_study, seed=3)
    assert np.array_equal(out.magnitude, small_study.magnitude)
    for p in (out.phase_x, out.phase_y, out.phase_z):
        assert np.isfinite(p).all() and p.min() >= -1 and p.max() <= 1
    assert out.equals(synthesize_phases(tiny_phase, small_study, seed=3))
    tiny_phase.save(tmp_path)
    loaded = PhaseModel.load(tmp_path)
    assert loaded.history == tiny_phase.history
    assert synthesize_phases(loaded, small_study, seed=3).equals(out)


def test_vanilla_mode_skips_compositing(small_study, tiny_phase):
    out = synthesize_phases(tiny_phase, small_study, seed=3, composite=False)
    comp = synthesize_phases(tiny_phase, small_study, seed=3)
    fg = split_foreground(small_study.magnitude).astype(bool)
    assert np.array_equal(out.phase_x[fg], comp.phase_x[fg])
    assert not np.array_equal(out.phase_x[~fg], comp.phase_x[~fg])


def test_oracle_stub_reproduces_curves(phantom_study):
    out = synthesize_phases(oracle_generator(phantom_study), phantom_study, seed=0)
    a, b = global_curves(out).as_array(), global_curves(phantom_study).as_array()
    assert np.array_equal(a, b)


def test_synthesized_background_statistics(phantom_study):
    out = synthesize_phases(oracle_generator(phantom_study), phantom_study, seed=4)
    bg = ~split_foreground(phantom_study.magnitude).astype(bool)
    vals = out.phases.transpose(1, 0, 2, 3)[:, bg].ravel()
    assert vals.size >= 10_000
    assert abs(vals.mean() - 0.034) <= 3 * 0.034 / np.sqrt(vals.size) + 1 / 4096
    assert abs(vals.std() - 0.034) <= 2e-3


def test_nan_loss_raises(small_study):
    ds = build_phase_dataset([small_study])
    ds.triplets[:] = np.nan
    with pytest.raises(TrainingFailure):
        train_phase(ds, TINY, PhaseTrainConfig(epochs=1, batch_size=4))
