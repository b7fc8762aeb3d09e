"""Acceptance suite: every criterion below prints one PASS line when it
holds (run with ``pytest tests/test_acceptance.py -v -s``). The heavier
criteria train tiny models on generated toy data; the whole module is
seeded and takes a few minutes on a laptop CPU.

  C1  gradient correctness of the attention gates, fusion, decoder, loss
  C2  confusion counts / metrics vs a brute-force pixel oracle
  C3  loss anchors (hand-computed Tversky, BCE ln 2, soft-Dice identity)
  C4  forward shape and range invariants at full width and 1/8 width
  C5  overfit sanity for both temporal architectures
  C6  parameter-count ordering of the two temporal architectures
  C7  step learning-rate schedule values
  C8  in-domain vs out-of-domain harness behavior on pinned toysets
  C9  training determinism and checkpoint round-trip stability
  C10 data-pipeline bit-exactness (label decoding, toy round trip)
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from oracle_utils import brute_confusion, finite_diff_grads, max_rel_grad_error, soft_dice
from vfslab import cli, toygen
from vfslab import data as dataio
from vfslab.blocks import Decoder, FeatureRefinement, FusionBlock, LocalizationRefinement
from vfslab.checkpoint import load_checkpoint
from vfslab.losses import LossConfig, bce_loss, combined_loss, tversky_loss
from vfslab.metrics import confusion_counts, metrics_from_counts
from vfslab.models import ModelConfig, build_model, count_parameters
from vfslab.training import TrainConfig, evaluate, lr_at_epoch, train

REFERENCE_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "ood_reference.json"


def _report(criterion: str, detail: str) -> None:
    print(f"\n[acceptance] {criterion}: PASS  ({detail})")


# ---------------------------------------------------------------------- C1


def test_c1_gradient_correctness():
    started = time.time()
    torch.manual_seed(100)

    def check(module, inputs):
        module = module.double().eval()
        with torch.no_grad():
            weights = torch.randn(module(*inputs).shape, dtype=torch.float64)
        leaves = [x.detach().clone().requires_grad_(True) for x in inputs]
        (module(*leaves) * weights).sum().backward()
        probes = [leaf.detach().clone() for leaf in leaves]
        numeric = finite_diff_grads(lambda: (module(*probes) * weights).sum(), probes, step=1e-3)
        return max(max_rel_grad_error(leaf.grad, num) for leaf, num in zip(leaves, numeric))

    errors = {}
    errors["context-gate"] = check(
        FeatureRefinement(4),
        [torch.randn(1, 4, 6, 8, dtype=torch.float64), torch.randn(1, 4, 6, 8, dtype=torch.float64)],
    )
    errors["coarse-gate"] = check(
        LocalizationRefinement(4, 3),
        [torch.randn(1, 4, 3, 4, dtype=torch.float64), torch.randn(1, 3, 6, 8, dtype=torch.float64)],
    )

    class FuseWrap(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.fb = FusionBlock(4, T=3)

        def forward(self, a, b, c):
            return self.fb([a, b, c])

    errors["fusion"] = check(FuseWrap(), [torch.randn(1, 4, 5, 6, dtype=torch.float64) for _ in range(3)])

    class DecWrap(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.dec = Decoder((2, 2, 4, 4, 8))

        def forward(self, bottleneck, s4, s3, s2, s1):
            return self.dec(bottleneck, [s4, s3, s2, s1])

    errors["decoder"] = check(
        DecWrap(),
        [
            torch.randn(1, 8, 1, 1, dtype=torch.float64),
            torch.randn(1, 4, 2, 2, dtype=torch.float64),
            torch.randn(1, 4, 4, 4, dtype=torch.float64),
            torch.randn(1, 2, 8, 8, dtype=torch.float64),
            torch.randn(1, 2, 16, 16, dtype=torch.float64),
        ],
    )

    g = torch.Generator().manual_seed(101)
    p = (0.05 + 0.9 * torch.rand((8, 8), generator=g, dtype=torch.float64)).requires_grad_(True)
    y = (torch.rand((8, 8), generator=g) > 0.5).double()
    ignore = (torch.rand((8, 8), generator=g) > 0.85).to(torch.uint8)
    combined_loss(p, y, ignore).value.backward()
    probe = p.detach().clone()
    (numeric,) = finite_diff_grads(lambda: combined_loss(probe, y, ignore).value, [probe], step=1e-3)
    errors["combined-loss"] = max_rel_grad_error(p.grad, numeric)

    elapsed = time.time() - started
    assert elapsed < 60.0, f"gradient checks took {elapsed:.1f}s"
    for name, err in errors.items():
        assert err <= 1e-4, f"{name}: relative error {err:.2e}"
    worst = max(errors.values())
    _report("C1 gradient-correctness", f"worst relative error {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------- C2


def test_c2_metric_oracle():
    rng = np.random.default_rng(202)
    checked_f1 = 0
    for _ in range(1000):
        pred = rng.integers(0, 2, size=(16, 16))
        target = rng.integers(0, 2, size=(16, 16))
        ignore = (rng.random((16, 16)) < rng.uniform(0, 0.5)).astype(np.uint8)
        c = confusion_counts(pred, target, ignore)
        assert (c.tp, c.fp, c.fn, c.tn) == brute_confusion(pred, target, ignore)
        m = metrics_from_counts(c)
        if 2 * c.tp + c.fp + c.fn > 0:
            assert m.f1 == pytest.approx(2 * c.tp / (2 * c.tp + c.fp + c.fn), abs=1e-12)
            checked_f1 += 1
    _report("C2 metric-oracle", f"1000 triples exact, F1 identity on {checked_f1}")


# ---------------------------------------------------------------------- C3


def test_c3_loss_anchors():
    p = torch.tensor([1.0, 0.0, 1.0, 0.0], dtype=torch.float64)
    y = torch.tensor([1.0, 1.0, 0.0, 0.0], dtype=torch.float64)
    tl, _ = tversky_loss(p, y, cfg=LossConfig(alpha=0.5, beta=0.5))
    assert tl.item() == 0.5

    ce, _ = bce_loss(torch.tensor([0.5], dtype=torch.float64), torch.tensor([1.0], dtype=torch.float64))
    assert abs(ce.item() - math.log(2.0)) <= 1e-9

    g = torch.Generator().manual_seed(303)
    worst = 0.0
    for _ in range(50):
        p = torch.rand((10, 10), generator=g, dtype=torch.float64)
        y = (torch.rand((10, 10), generator=g) > 0.5).double()
        value, _ = tversky_loss(p, y, cfg=LossConfig(alpha=0.5, beta=0.5))
        expected = 1.0 - soft_dice(p, y, torch.ones_like(p))
        worst = max(worst, abs(value.item() - expected.item()))
    assert worst <= 1e-9
    _report("C3 loss-anchors", f"tversky anchor exact, bce=ln2, dice gap {worst:.1e}")


# ---------------------------------------------------------------------- C4


def test_c4_shape_and_range_invariants():
    cases = [
        (1.0, (320, 480), (64, 128, 256, 512, 1024)),
        (0.125, (64, 96), (8, 16, 32, 64, 128)),
    ]
    details = []
    for width, (h, w), expected_channels in cases:
        for arch in ("mustan1", "mustan2"):
            torch.manual_seed(404)
            model = build_model(ModelConfig(arch=arch, T=3, width_factor=width)).eval()
            clip = torch.rand(1, 3, 3, h, w)
            with torch.no_grad():
                out = model(clip)
                encoder = model.frame_encoder if arch == "mustan1" else model.encoders[0]
                levels = encoder(clip[:, -1])
            assert tuple(out.shape) == (1, 1, h, w)
            assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0
            assert tuple(f.shape[1] for f in levels) == expected_channels
            for i, f in enumerate(levels, start=1):
                assert tuple(f.shape[-2:]) == (h // 2**i, w // 2**i)
            details.append(f"{arch}@w={width}")
            del model
    _report("C4 shape-range", ", ".join(details))


# ---------------------------------------------------------------------- C5


def _overfit_toyset(tmp_path):
    spec = toygen.SceneSpec(
        size=(64, 96),
        num_frames=8,
        background="flat_color",
        sprites=[
            toygen.SpriteSpec(
                shape="rect", size=(20, 26), start=(12.0, 8.0), velocity=(1.0, 3.0), color=(250, 250, 60)
            )
        ],
        seed=11,
    )
    toygen.write_toyset([spec], tmp_path / "toy8")
    return dataio.scan_simple(tmp_path / "toy8")


@pytest.mark.parametrize("arch", ["mustan2", "mustan1"])
def test_c5_overfit_sanity(arch, tmp_path):
    manifest = _overfit_toyset(tmp_path)
    cfg = TrainConfig(
        lr0=3e-3,
        epochs=200,
        batch_size=4,
        seed=0,
        split_ratio=0.99,
        resolution=(64, 96),
        max_steps=200,
        model=ModelConfig(arch=arch, T=3, width_factor=0.125),
    )
    started = time.time()
    result = train(cfg, manifest, tmp_path / f"run_{arch}")
    elapsed = time.time() - started
    steps = max(r["step"] for r in result.history)
    assert steps <= 200
    assert elapsed < 300.0, f"training took {elapsed:.0f}s"
    losses = [r["loss"] for r in result.history if "val_f1" not in r]
    assert losses[-1] < 0.5 * losses[0], "loss did not halve within the step budget"
    model, _ = load_checkpoint(result.last_checkpoint)
    f1 = evaluate(model, manifest, (64, 96)).overall.f1
    assert f1 >= 0.95, f"{arch} training F1 {f1:.4f} < 0.95"
    _report(f"C5 overfit-sanity[{arch}]", f"F1={f1:.4f} in {steps} steps, {elapsed:.0f}s")


# ---------------------------------------------------------------------- C6


def test_c6_parameter_ordering_full_width():
    m1 = count_parameters(build_model(ModelConfig(arch="mustan1", T=3, width_factor=1.0)))
    m2 = count_parameters(
        build_model(ModelConfig(arch="mustan2", T=3, width_factor=1.0, share_mustan2_encoders=True))
    )
    assert m1 > m2
    _report("C6 parameter-ordering", f"dual-encoder {m1 / 1e6:.2f}M > fused {m2 / 1e6:.2f}M (informational counts)")


# ---------------------------------------------------------------------- C7


def test_c7_schedule_values():
    cfg = TrainConfig()
    for epoch in range(0, 20):
        assert lr_at_epoch(cfg, epoch) == 1e-4
    for epoch in range(20, 40):
        assert lr_at_epoch(cfg, epoch) == 1e-5
    _report("C7 lr-schedule", "epochs 0-19 -> 1e-4, 20-39 -> 1e-5, exact")


# ---------------------------------------------------------------------- C8


def test_c8_ood_harness_directional(tmp_path):
    reference = json.loads(REFERENCE_CONFIG.read_text())
    specs_a = [toygen.SceneSpec.from_dict(d) for d in reference["toyset_a"]]
    specs_b = [toygen.SceneSpec.from_dict(d) for d in reference["toyset_b"]]
    toygen.write_toyset(specs_a, tmp_path / "A")
    toygen.write_toyset(specs_b, tmp_path / "B")
    manifest_a = dataio.scan_simple(tmp_path / "A")
    manifest_b = dataio.scan_simple(tmp_path / "B")
    resolution = tuple(reference["resolution"])

    scores = {}
    for key in ("temporal_model", "baseline_model"):
        cfg = TrainConfig.from_dict(reference[key])
        result = train(cfg, manifest_a, tmp_path / f"run_{key}")
        model, _ = load_checkpoint(result.best_checkpoint)
        in_report = evaluate(model, manifest_a, resolution, domain="in-domain")
        ood_report = evaluate(model, manifest_b, resolution, domain="ood")
        assert in_report.domain == "in-domain" and ood_report.domain == "ood"
        assert set(ood_report.per_video) == {v.video_id for v in manifest_b.videos}
        scores[key] = (in_report.overall.f1, ood_report.overall.f1)

    temporal_in, temporal_ood = scores["temporal_model"]
    baseline_in, baseline_ood = scores["baseline_model"]
    assert temporal_ood >= baseline_ood, (
        f"temporal OOD F1 {temporal_ood:.4f} < baseline {baseline_ood:.4f} "
        "on the pinned reference configuration"
    )
    _report(
        "C8 ood-harness",
        f"temporal in/ood {temporal_in:.3f}/{temporal_ood:.3f} vs "
        f"baseline {baseline_in:.3f}/{baseline_ood:.3f}",
    )


# ---------------------------------------------------------------------- C9


def test_c9_determinism_and_round_trip(tmp_path):
    data_dir = tmp_path / "data"
    assert cli.main(["generate", "-o", str(data_dir), "--videos", "2", "--frames", "8",
                     "--size", "64x96", "--seed", "9"]) == 0
    common = [
        "train", "--data", str(data_dir), "--arch", "mustan2", "--T", "3", "--width", "0.125",
        "--epochs", "1", "--batch-size", "4", "--lr", "1e-3", "--seed", "21",
        "--resolution", "64x96", "--split-ratio", "0.75", "--runs-dir", str(tmp_path / "runs"),
    ]
    assert cli.main(common + ["--run-id", "first"]) == 0
    assert cli.main(common + ["--run-id", "second"]) == 0
    log_a = (tmp_path / "runs" / "first" / "log.jsonl").read_text()
    log_b = (tmp_path / "runs" / "second" / "log.jsonl").read_text()
    assert log_a == log_b
    losses = [json.loads(l)["loss"] for l in log_a.splitlines() if json.loads(l).get("loss")]
    assert losses, "no loss records in the log"

    manifest = dataio.scan_simple(data_dir)
    model, _ = load_checkpoint(tmp_path / "runs" / "first" / "checkpoints" / "best.ckpt")
    before = evaluate(model, manifest, (64, 96))
    model2, _ = load_checkpoint(tmp_path / "runs" / "first" / "checkpoints" / "best.ckpt")
    after = evaluate(model2, manifest, (64, 96))
    assert before.per_video == after.per_video
    assert before.overall == after.overall
    _report("C9 determinism", f"identical logs over {len(losses)} steps; round-trip report exact")


# --------------------------------------------------------------------- C10


def test_c10_data_pipeline_bit_exactness(tmp_path):
    label = np.array([[0, 50, 85], [170, 255, 50]], dtype=np.uint8)
    target, ignore = dataio.decode_cdnet_label(label)
    assert target.tolist() == [[0, 0, 0], [0, 1, 0]]
    assert ignore.tolist() == [[0, 0, 1], [1, 0, 0]]
    with pytest.raises(dataio.LabelDecodeError):
        dataio.decode_cdnet_label(np.array([[100]], dtype=np.uint8))

    spec = toygen.SceneSpec(
        size=(64, 96), num_frames=5, seed=10,
        sprites=[toygen.SpriteSpec(start=(3.0, 3.0), velocity=(1.5, 1.0))],
    )
    toygen.write_toyset([spec], tmp_path / "toy")
    manifest = dataio.scan_simple(tmp_path / "toy")
    frames, masks, _ = toygen.generate_toy_video(spec)
    from PIL import Image

    video = manifest.videos[0]
    assert video.n_frames == 5
    for t in range(5):
        assert np.array_equal(np.asarray(Image.open(video.frame_paths[t])), frames[t])
        assert np.array_equal(np.asarray(Image.open(video.annotation_paths[t])), masks[t] * 255)

    rng = np.random.default_rng(1010)
    for _ in range(100):
        random_spec = toygen.sample_scene_spec(rng, num_frames=2)
        _, ms, inst = toygen.generate_toy_video(random_spec)
        for m, i in zip(ms, inst):
            assert np.array_equal(m, (i > 0).astype(np.uint8))
    _report("C10 data-pipeline", "label map exact, toy round trip exact, 100 random specs consistent")
