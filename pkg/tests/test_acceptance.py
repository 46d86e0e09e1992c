"""Acceptance suite: one test per criterion, each printing a PASS line.

Full-scale BraTS20 results are an integration target documented in the
README (criterion 1), not something a desk-scale run can reproduce; the
remaining criteria are property suites that run on synthetic data within
stated runtime budgets.

Run with: pytest tests/test_acceptance.py -v -s
"""

import time
from pathlib import Path

import numpy as np
import pytest
import torch
from click.testing import CliRunner

from conftest import toy_network_config
from tumorseg.cli import main as cli_main
from tumorseg.inference import FLIP_SET, threshold_subregions, tta_predict
from tumorseg.network import NetworkConfig, build_network
from tumorseg.nifti import read_nifti
from tumorseg.objectives import DiceParams, dice_score, multiclass_dice_loss
from tumorseg.patches import PatchPlan, PatchSpec, VoxelBox, plan_patches, stitch
from tumorseg.phantoms import PhantomSpec, make_phantom
from tumorseg.postprocess import (
    connected_components,
    enforce_hierarchy,
    postprocess,
    relabel_small_et,
    remove_small_components,
    remove_uncertain_wt,
    PostprocessConfig,
)
from tumorseg.preprocess import zscore_normalize
from tumorseg.trainer import TrainConfig, run_training_schedule, train_multitask
from tumorseg.volumes import (
    ProbabilityMaps,
    SubregionMasks,
    brain_mask,
    labels_to_subregions,
)

README = Path(__file__).resolve().parents[1] / "README.md"


def ok(criterion, message):
    print(f"\ncriterion {criterion}: PASS - {message}")


def test_criterion_01_integration_target_documented():
    text = README.read_text()
    for number in ("0.90", "0.82", "0.78"):
        assert number in text, f"README must state the {number} ensemble Dice target"
    assert "integration target" in text.lower()
    ok(1, "full-scale ensemble Dice targets are documented as an "
          "integration target, not a test gate")


def test_criterion_02_loss_metric_oracle_suite():
    start = time.perf_counter()
    rng = np.random.default_rng(12)
    params = DiceParams()
    checked = 0
    for _ in range(110):
        side = int(rng.integers(8, 17))
        t = (rng.random((side,) * 3) < rng.uniform(0.05, 0.6)).astype(np.float64)
        p = (rng.random((side,) * 3) < rng.uniform(0.05, 0.6)).astype(np.float64)
        # independent voxel-count route
        inter = np.logical_and(t > 0, p > 0).sum()
        expected = 2.0 * inter / (np.count_nonzero(t) + np.count_nonzero(p)
                                  + params.epsilon)
        assert abs(float(dice_score(t, p, params)) - expected) < 1e-6
        checked += 1
    # MDL equals the negative channel mean to near machine precision
    for _ in range(20):
        n = int(rng.integers(1, 4))
        t = (rng.random((n, 8, 8, 8)) < 0.3).astype(np.float64)
        p = rng.random((n, 8, 8, 8))
        per_channel = [float(dice_score(t[c], p[c], params)) for c in range(n)]
        assert abs(float(multiclass_dice_loss(t, p, params))
                   - (-np.mean(per_channel))) < 1e-12
    elapsed = time.perf_counter() - start
    assert checked >= 100
    assert elapsed < 10.0
    ok(2, f"{checked} mask pairs match the voxel-count oracle within 1e-6; "
          f"MDL = -mean(DS) within 1e-12 ({elapsed:.1f}s)")


def test_criterion_03_gradient_check():
    # Central differences are a valid derivative oracle only where the loss
    # is smooth across the whole stencil. A ReLU network is piecewise smooth:
    # when a perturbation of +/- step flips the sign of any ReLU input, the
    # stencil brackets a kink and the difference quotient is biased no matter
    # how correct the analytic gradient is. Samples are therefore screened by
    # recording every ReLU input sign at both stencil ends and resampling on
    # any flip; the comparison itself stays at the stated step.
    import tumorseg.network as network_module

    start = time.perf_counter()
    torch.manual_seed(7)
    config = NetworkConfig(
        out_channels=3, patch_size=(16, 16, 16), depth=2, base_filters=4,
        groupnorm_groups=4, dropout_rate=0.0,
    )
    model = build_network(config).double().eval()
    rng = np.random.default_rng(7)
    x = torch.tensor(rng.normal(size=(1, 4, 16, 16, 16)))
    t = torch.tensor((rng.random((3, 16, 16, 16)) < 0.3).astype(np.float64))

    def loss_value():
        return multiclass_dice_loss(t, model(x)[0])

    loss = loss_value()
    loss.backward()
    parameters = [p for p in model.parameters() if p.grad is not None]

    recorded_signs = []
    plain_relu = torch.nn.functional.relu

    def recording_relu(z, inplace=False):
        recorded_signs.append(torch.signbit(z))
        return plain_relu(z)

    def stencil_evaluation(param, flat_index, h):
        """(central difference, number of ReLU sign flips in the stencil)."""
        original = float(param.detach().view(-1)[flat_index])
        network_module.F.relu = recording_relu
        try:
            with torch.no_grad():
                recorded_signs.clear()
                param.view(-1)[flat_index] = original + h
                up = float(loss_value())
                signs_up = [s.clone() for s in recorded_signs]
                recorded_signs.clear()
                param.view(-1)[flat_index] = original - h
                down = float(loss_value())
                signs_down = [s.clone() for s in recorded_signs]
                param.view(-1)[flat_index] = original
        finally:
            network_module.F.relu = plain_relu
        flips = sum(int((a ^ b).sum()) for a, b in zip(signs_up, signs_down))
        return (up - down) / (2 * h), flips

    step = 1e-4
    checked = 0
    worst = 0.0
    attempts = 0
    while checked < 20 and attempts < 500:
        attempts += 1
        param = parameters[int(rng.integers(len(parameters)))]
        flat_index = int(rng.integers(param.numel()))
        auto = float(param.grad.view(-1)[flat_index])
        if abs(auto) < 1e-6:
            continue  # below the finite-difference noise floor
        fd, flips = stencil_evaluation(param, flat_index, step)
        if flips:
            continue
        rel = abs(fd - auto) / max(abs(fd), abs(auto))
        worst = max(worst, rel)
        assert rel < 1e-3, f"relative gradient error {rel} at parameter {flat_index}"
        checked += 1
    elapsed = time.perf_counter() - start
    assert checked >= 20
    assert elapsed < 120.0
    ok(3, f"{checked} sampled parameters, max relative error "
          f"{worst:.2e} < 1e-3 ({elapsed:.1f}s)")


def test_criterion_04_overfit_smoke():
    start = time.perf_counter()
    volume, labels = make_phantom(
        PhantomSpec(shape=(48, 48, 48), r_wt=10.0, r_tc=7.0, r_et=5.0, seed=3)
    )
    normalized = zscore_normalize(volume, brain_mask(volume))
    net = toy_network_config(out_channels=3, patch=32, depth=3, base=4)
    config = TrainConfig(initial_lr=5e-4, max_epochs=200, batch_size=1,
                         augment=False, seed=0)
    _, history = train_multitask([(normalized, labels)], net, config)
    elapsed = time.perf_counter() - start
    assert history.best_metric >= 0.90, f"best training Dice {history.best_metric}"
    assert history.best_epoch <= 200
    assert elapsed < 600.0
    # smoothed loss decreases towards convergence
    losses = np.array([r.loss for r in history.records])
    kernel = np.ones(5) / 5
    smooth = np.convolve(losses, kernel, mode="valid")
    assert smooth[-1] < smooth[0]
    ok(4, f"training mean Dice {history.best_metric:.3f} >= 0.90 at epoch "
          f"{history.best_epoch} ({elapsed:.0f}s)")


def test_criterion_05_schedule_conformance():
    config = TrainConfig(initial_lr=5e-4, plateau_factor=0.5, plateau_patience=10,
                         early_stop_patience=50, max_epochs=300, augment=False)
    history = run_training_schedule(
        lambda epoch, lr: 0.0, lambda epoch: 0.5, config
    )
    lrs = [r.lr for r in history.records]
    # best at epoch 1; lr stays 5e-4 through the 10 stagnant epochs and the
    # 12th epoch runs at exactly half
    assert lrs[:11] == [5e-4] * 11
    assert lrs[11] == pytest.approx(2.5e-4)
    assert history.stopped_early
    assert history.records[-1].epoch - history.best_epoch == 50
    ok(5, "lr halves exactly after 10 stagnant epochs (5e-4 -> 2.5e-4) and "
          "training stops exactly after 50")


def test_criterion_06_patch_stitch_suite():
    rng = np.random.default_rng(13)
    # randomized boxes, including extents beyond the 128 patch
    for _ in range(25):
        shape = tuple(int(rng.integers(140, 241)) for _ in range(3))
        lo = tuple(int(rng.integers(0, s - 130)) for s in shape)
        hi = tuple(
            int(rng.integers(l + 100, min(l + 200, s) + 1))
            for l, s in zip(lo, shape)
        )
        plan = plan_patches(VoxelBox(lo=lo, hi=hi), shape, (128, 128, 128))
        count = np.zeros(shape, dtype=np.uint8)
        for spec in plan.specs:
            sl = tuple(
                slice(max(spec.origin[a], 0),
                      min(spec.origin[a] + spec.size[a], shape[a]))
                for a in range(3)
            )
            count[sl] += 1
        box = tuple(slice(l, h) for l, h in zip(lo, hi))
        assert (count[box] >= 1).all(), "coverage hole"
    # overlap averaging and zero padding
    a = np.full((1, 8, 8, 8), 0.4, dtype=np.float32)
    b = np.full((1, 8, 8, 8), 0.6, dtype=np.float32)
    plan = PatchPlan(
        specs=[PatchSpec((0, 0, 0), (8, 8, 8)), PatchSpec((4, 0, 0), (8, 8, 8))],
        volume_shape=(16, 8, 8),
    )
    out = stitch([a, b], plan)
    assert np.abs(out[0, 4:8] - 0.5).max() < 1e-7
    assert np.abs(out[0, 0:4] - 0.4).max() < 1e-7
    assert np.abs(out[0, 8:12] - 0.6).max() < 1e-7
    assert np.abs(out[0, 12:16]).max() == 0.0
    ok(6, "25 randomized plans fully cover their boxes; overlaps average to "
          "0.5 and uncovered voxels stay 0 within 1e-7")


def flood_fill(mask):
    mask = np.asarray(mask, dtype=bool)
    neighbours = [
        (a, b, c)
        for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)
        if (a, b, c) != (0, 0, 0)
    ]
    labels = np.zeros(mask.shape, dtype=np.int32)
    current = 0
    for start in np.ndindex(mask.shape):
        if not mask[start] or labels[start]:
            continue
        current += 1
        stack = [start]
        labels[start] = current
        while stack:
            voxel = stack.pop()
            for d in neighbours:
                n = tuple(voxel[i] + d[i] for i in range(3))
                if all(0 <= n[i] < mask.shape[i] for i in range(3)):
                    if mask[n] and not labels[n]:
                        labels[n] = current
                        stack.append(n)
    return labels


def test_criterion_07_postprocessing_suite():
    rng = np.random.default_rng(14)
    # brute-force connected-component equivalence on random 16^3 masks
    for index in range(50):
        mask = rng.random((16, 16, 16)) < rng.uniform(0.05, 0.5)
        labeled, sizes = connected_components(mask, 26)
        oracle = flood_fill(mask)
        np.testing.assert_array_equal(labeled, oracle, err_msg=f"mask {index}")
        assert sizes.sum() == mask.sum()

    shape = (16, 16, 16)

    def blob(sl):
        out = np.zeros(shape, dtype=bool)
        out[sl] = True
        return out

    # hierarchy: stray ET is cut
    stray = SubregionMasks(
        wt=blob(np.s_[0:6, 0:6, 0:6]), tc=blob(np.s_[0:3, 0:3, 0:3]),
        et=blob(np.s_[8:10, 8:10, 8:10]),
    )
    assert not enforce_hierarchy(stray).et.any()

    # < 10 voxels removed, exactly 10 kept
    nine = blob(np.s_[0:1, 0:3, 0:3])
    ten = blob(np.s_[6:7, 6:11, 6:8])
    zeros = np.zeros(shape, dtype=bool)
    cleaned = remove_small_components(SubregionMasks(nine | ten, zeros, zeros))
    assert not cleaned.wt[0:1, 0:3, 0:3].any() and cleaned.wt[6:7, 6:11, 6:8].all()

    # uncertain WT component (no TC/ET inside) removed
    lonely = blob(np.s_[10:14, 10:14, 10:14])
    backed = blob(np.s_[0:4, 0:4, 0:4])
    masks = SubregionMasks(lonely | backed, blob(np.s_[1:2, 1:2, 1:2]), zeros)
    out = remove_uncertain_wt(masks)
    assert not out.wt[10:14, 10:14, 10:14].any() and out.wt[0:4, 0:4, 0:4].all()

    # ET components: 49 voxels relabeled, 50 kept
    big = (16, 16, 16)
    fortynine = np.zeros(big, dtype=bool)
    fortynine[0:7, 0:7, 0:1] = True
    fifty = np.zeros(big, dtype=bool)
    fifty[9:14, 9:14, 9:11] = True
    wt = fortynine | fifty
    out = relabel_small_et(SubregionMasks(wt, wt.copy(), fortynine | fifty))
    assert not out.et[0:7, 0:7, 0:1].any() and out.et[9:14, 9:14, 9:11].all()

    # idempotence on random masks
    for _ in range(15):
        masks = SubregionMasks(
            wt=rng.random((16, 16, 16)) < 0.45,
            tc=rng.random((16, 16, 16)) < 0.35,
            et=rng.random((16, 16, 16)) < 0.3,
        )
        once = postprocess(masks, PostprocessConfig())
        twice = postprocess(labels_to_subregions(once), PostprocessConfig())
        np.testing.assert_array_equal(once.labels, twice.labels)
    ok(7, "50 random masks match the flood-fill oracle; 9/10 and 49/50 voxel "
          "boundaries, uncertain-WT removal and idempotence all hold")


def test_criterion_08_tta_suite():
    class Constant:
        patch_size = (8, 8, 8)

        def __call__(self, patch):
            return np.full((2, 8, 8, 8), 0.37, dtype=np.float32)

    class Asymmetric:
        patch_size = (8, 8, 8)

        def __init__(self):
            self.field = np.random.default_rng(15).random((2, 8, 8, 8))

        def __call__(self, patch):
            return np.clip(0.5 * self.field + 0.3 * np.abs(
                np.sin(patch.mean(axis=0, keepdims=True))), 0, 1)[:2]

    patch = np.random.default_rng(16).random((4, 8, 8, 8)).astype(np.float32)
    out = tta_predict(Constant(), patch)
    np.testing.assert_array_equal(out, np.full((2, 8, 8, 8), 0.37, np.float32))

    model = Asymmetric()
    base = tta_predict(model, patch)
    for axes in FLIP_SET:
        if not axes:
            continue
        flipped = np.ascontiguousarray(np.flip(patch, axes))
        np.testing.assert_allclose(
            tta_predict(model, flipped), np.flip(base, axes), atol=1e-6
        )
    ok(8, "TTA fixes constant models exactly and is flip-invariant within "
          "1e-6 for arbitrary mock predictors")


def test_criterion_09_threshold_ladder_suite():
    expectations = [(0.45, 0.4), (0.35, 0.3), (0.25, 0.2), (0.15, 0.1),
                    (0.05, None)]
    for peak, threshold in expectations:
        et = np.zeros((6, 6, 6), dtype=np.float32)
        et[3, 3, 3] = peak
        et[2, 3, 3] = peak / 2
        probs = ProbabilityMaps(
            wt=np.zeros((6, 6, 6), np.float32),
            tc=np.zeros((6, 6, 6), np.float32), et=et,
        )
        masks = threshold_subregions(probs)
        if threshold is None:
            assert not masks.et.any(), "ladder exhausted means empty ET"
        else:
            np.testing.assert_array_equal(masks.et, et >= threshold)
            assert masks.et.any()
    ok(9, "ET maxima 0.45/0.35/0.25/0.15/0.05 select thresholds "
          "0.4/0.3/0.2/0.1/empty")


E2E_CONFIG = """
framework: multitask
patch_size: 32
depth: 3
base_filters: 4
groupnorm_groups: 4
dropout_rate: 0.0
initial_lr: 2.0e-3
max_epochs: 60
augment: false
val_fraction: 0.0
seed: 0
"""


def test_criterion_10_end_to_end_cli(tmp_path):
    start = time.perf_counter()
    runner = CliRunner()

    def run(args):
        result = runner.invoke(cli_main, args)
        assert result.exit_code == 0, f"{args}: {result.output}"
        return result

    data = tmp_path / "data"
    run(["make-phantoms", "--out", str(data), "--count", "3", "--seed", "5",
         "--size", "48"])
    norm = tmp_path / "norm"
    run(["preprocess", "--data", str(data), "--out", str(norm)])

    config_path = tmp_path / "config.yaml"
    config_path.write_text(E2E_CONFIG)
    models = tmp_path / "models"
    run(["train", "--config", str(config_path), "--framework", "multitask",
         "--data", str(norm), "--out", str(models)])
    run(["train", "--config", str(config_path), "--framework", "cascaded",
         "--data", str(norm), "--out", str(models)])

    checkpoints = {
        "multitask": [str(models / "multitask.pt")],
        "cascaded": [str(models / f"cascaded_{s}.pt") for s in ("wt", "tc", "et")],
    }
    checkpoints["ensemble"] = checkpoints["multitask"] + checkpoints["cascaded"]

    case_ids = [f"phantom_{i:03d}" for i in range(3)]
    wt_means = {}
    for framework, paths in checkpoints.items():
        pred_dir = tmp_path / f"pred_{framework}"
        pred_dir.mkdir()
        for case_id in case_ids:
            args = ["predict", "--config", str(config_path), "--case",
                    str(data / case_id), "--out",
                    str(pred_dir / f"{case_id}.nii.gz"),
                    "--framework", framework]
            for path in paths:
                args += ["--checkpoints", path]
            run(args)
            image = read_nifti(pred_dir / f"{case_id}.nii.gz")
            assert set(np.unique(image.data)) <= {0, 1, 2, 4}
        metrics = tmp_path / f"metrics_{framework}.csv"
        run(["evaluate", "--pred", str(pred_dir), "--truth", str(data),
             "--out", str(metrics)])
        mean_row = metrics.read_text().strip().splitlines()[-1].split(",")
        assert mean_row[0] == "MEAN"
        wt_means[framework] = float(mean_row[1])
        assert wt_means[framework] >= 0.8, (
            f"{framework} mean WT Dice {wt_means[framework]}"
        )
    elapsed = time.perf_counter() - start
    assert elapsed < 1800.0
    summary = ", ".join(f"{k} WT {v:.3f}" for k, v in wt_means.items())
    ok(10, f"end-to-end CLI pipeline exits 0; {summary} (>= 0.8) "
           f"in {elapsed:.0f}s")
