import json

import numpy as np
import pytest
import torch

from mvmtwin import checkpoint as ckpt
from mvmtwin.nets import InterpNet, InterpNetConfig, PhaseGenerator, R2UNet, R2UNetConfig, count_parameters


def test_config_invariants():
    with pytest.raises(ValueError):
        R2UNetConfig(depth=1)
    with pytest.raises(ValueError):
        R2UNetConfig(recurrence_steps=0)
    assert R2UNetConfig().channels == [32, 64, 128, 256]


@pytest.mark.parametrize("depth", [2, 3, 4])
def test_r2unet_shapes(depth):
    net = R2UNet(3, 5, R2UNetConfig(4, depth, 2))
    assert net(torch.zeros(2, 3, 32, 32)).shape == (2, 5, 32, 32)


def test_phase_generator_bounded():
    g = PhaseGenerator(R2UNetConfig(4, 2, 1))
    y = g(torch.randn(2, 3, 16, 16) * 50)
    assert y.shape == (2, 3, 16, 16) and y.abs().max() <= 1


def test_two_stream_has_separate_heads():
    multi = InterpNet(InterpNetConfig(4, 3, 1))
    single = InterpNet(InterpNetConfig(4, 3, 1, multi_head=False))
    assert hasattr(multi, "enc_mask") and not hasattr(single, "enc_mask")
    assert count_parameters(multi) > count_parameters(single)


def test_checkpoint_layout_and_roundtrip(tmp_path):
    torch.manual_seed(0)
    a = InterpNet(InterpNetConfig(4, 2, 1))
    a.train()
    a(torch.randn(3, 6, 16, 16))  # populate BatchNorm running stats
    ckpt.save_checkpoint(tmp_path, {"net": a}, {"kind": "test"})
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["info"] == {"kind": "test"}
    for entry in manifest["tensors"]:
        assert (tmp_path / entry["file"]).is_file()
        assert set(entry) >= {"module", "name", "file", "shape", "dtype"}
    b = InterpNet(InterpNetConfig(4, 2, 1))
    ckpt.load_state(tmp_path, {"net": b})
    for (k, v), (k2, v2) in zip(a.state_dict().items(), b.state_dict().items()):
        assert k == k2 and v.dtype == v2.dtype and torch.equal(v, v2)


def test_checkpoint_shape_mismatch(tmp_path):
    ckpt.save_checkpoint(tmp_path, {"net": InterpNet(InterpNetConfig(4, 2, 1))}, {})
    with pytest.raises(Exception):
        ckpt.load_state(tmp_path, {"net": InterpNet(InterpNetConfig(8, 2, 1))})


def test_recurrent_conv_shares_weights_not_norms():
    from mvmtwin.nets import RecurrentConv

    block = RecurrentConv(4, 3)
    assert len(block.norms) == 3
    assert sum(p.numel() for p in block.conv.parameters()) == 4 * 4 * 9 + 4


def test_eval_matches_train_after_stats_settle():
    # Running statistics of every step must describe that step's own input;
    # with momentum 1 they equal the last batch exactly.
    torch.manual_seed(0)
    net = R2UNet(2, 1, R2UNetConfig(4, 2, 3))
    for m in net.modules():
        if isinstance(m, torch.nn.BatchNorm2d):
            m.momentum = 1.0
    x = torch.randn(8, 2, 16, 16)
    net.train()
    with torch.no_grad():
        y_train = net(x)
        net.eval()
        y_eval = net(x)
    # Unbiased running variance vs biased batch variance: factor n/(n-1).
    assert torch.allclose(y_train, y_eval, atol=0.05)
