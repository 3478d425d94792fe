"""End-to-end acceptance checks A1-A10.

Each test prints a single PASS/FAIL line (run with -s or read captured
output). A1-A5 are property/oracle checks; A6-A9 are the desk-scale
experiments built on the session fixtures in conftest.py; A10 checks
reproducibility of the CLI training path.
"""

import math

import numpy as np
import torch
import yaml

from advgen.baselines import PGDConfig, pgd
from advgen.cli import EXIT_OK, main
from advgen.evaluation import evaluate_attack, generator_attack_fn, throughput
from advgen.generator import (
    GeneratorConfig,
    attack_batch,
    build_generator,
    load_checkpoint,
    normalize_saliency,
)
from advgen.iqa import ms_ssim, psnr, ssim
from advgen.losses import angular_loss, frobenius_loss, norm_loss, total_loss
from advgen.metrics import cmc_rank1, mean_average_precision
from advgen.targets import RetrievalIndex, classify, rank_gallery
from advgen.tensors import to_normalized
from tests.conftest import NORM
from tests.oracles import (
    brute_force_retrieval,
    central_difference_gradient,
    naive_ms_ssim,
    naive_ssim,
)


def _verdict(name: str, ok: bool, detail: str = ""):
    print(f"\n{name}: {'PASS' if ok else 'FAIL'}{' — ' + detail if detail else ''}")
    assert ok, f"{name} failed: {detail}"


def test_a1_budget_invariant():
    gen = torch.Generator().manual_seed(11)
    inputs = torch.rand(100, 3, 32, 32, generator=gen)
    batch = to_normalized(inputs, NORM)
    worst = 0.0
    ok = True
    for delta in (0.01, 0.1, 0.5):
        for init in range(5):
            model = build_generator(
                GeneratorConfig(base_width=8, num_resblocks=2, delta=delta), seed=init
            )
            with torch.no_grad():
                for p in model.parameters():
                    p.add_(0.2 * torch.randn(p.shape, generator=gen))
            model.eval()
            with torch.no_grad():
                perturbed, pert, _ = attack_batch(model, batch)
            realized = float((perturbed.data - batch.data).abs().max())
            reported = float(pert.abs().max())
            worst = max(worst, realized / delta, reported / delta)
            ok = ok and realized <= delta and reported <= delta
    _verdict(
        "A1 budget invariant (100 inputs x 5 inits x 3 deltas)",
        ok,
        f"worst max|P|/delta = {worst:.9f}",
    )


def test_a2_saliency_invariant():
    gen = torch.Generator().manual_seed(5)
    ok = True
    for _ in range(50):
        raw = 3.0 * torch.randn(4, 1, 16, 16, generator=gen)
        mask = normalize_saliency(raw)
        ok = ok and bool((mask >= 0).all()) and bool((mask <= 1).all())
        per_min = mask.amin(dim=(1, 2, 3))
        per_max = mask.amax(dim=(1, 2, 3))
        ok = ok and bool((per_min == 0).all()) and bool((per_max == 1).all())
    constant = normalize_saliency(torch.full((2, 1, 8, 8), 0.7))
    ok = ok and bool((constant == 0).all())
    # masks produced by an actual network obey the same range
    model = build_generator(GeneratorConfig(base_width=8, num_resblocks=1), seed=3)
    model.eval()
    with torch.no_grad():
        _, _, net_mask = attack_batch(model, to_normalized(torch.rand(8, 3, 32, 32), NORM))
    ok = ok and bool((net_mask >= 0).all()) and bool((net_mask <= 1).all())
    _verdict("A2 saliency invariant (range, min/max, constant map)", ok)


def test_a3_loss_exactness():
    t = lambda rows: torch.tensor(rows, dtype=torch.float64)
    checks = [
        ("angular identical", float(angular_loss(t([[1, 0]]), t([[1, 0]]))), 2.0),
        ("angular antipodal", float(angular_loss(t([[1, 0]]), t([[-1, 0]]))), 0.0),
        ("angular orthogonal", float(angular_loss(t([[1, 0]]), t([[0, 1]]))), 1.0),
        ("angular guard", float(angular_loss(t([[1, 0]]), t([[0, 0]]))), 1.0),
        ("norm equal", float(norm_loss(t([[3, 4]]), t([[5, 0]]))), 0.0),
        ("norm 9", float(norm_loss(t([[3, 0]]), t([[0, 0]]))), 9.0),
        ("norm 25", float(norm_loss(t([[3, 4]]), t([[6, 8]]))), 25.0),
        ("frob zeros", float(frobenius_loss(torch.zeros(1, 1, 2, 2, dtype=torch.float64))), 0.0),
        ("frob ones", float(frobenius_loss(torch.ones(1, 1, 2, 2, dtype=torch.float64))), 2.0),
        (
            "frob eye",
            float(frobenius_loss(torch.eye(2, dtype=torch.float64).reshape(1, 1, 2, 2))),
            math.sqrt(2.0),
        ),
        ("total", total_loss(1.0, 2.0, 3.0, alpha=1e-4).total, 1.0005),
    ]
    errs = {name: abs(got - want) for name, got, want in checks}
    ok = all(e <= 1e-6 for e in errs.values())
    worst = max(errs, key=errs.get)
    _verdict("A3 loss exactness (11 anchors, 1e-6, float64)", ok, f"worst |err| {errs[worst]:.2e} ({worst})")


def _fd_relative_error(loss_fn, shapes, seed):
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=s) for s in shapes]
    tensors = [torch.tensor(a, requires_grad=True) for a in arrays]
    loss_fn(*tensors).backward()
    worst = 0.0
    for k, arr in enumerate(arrays):
        def scalar(x, k=k):
            args = [torch.tensor(a) for a in arrays]
            args[k] = torch.tensor(x)
            return float(loss_fn(*args))

        numeric = central_difference_gradient(scalar, arr, step=1e-5)
        analytic = tensors[k].grad.numpy()
        denom = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-8)
        worst = max(worst, float(np.abs(numeric - analytic).max() / denom))
    return worst


def test_a4_gradient_checks():
    worst = 0.0
    for trial in range(20):
        worst = max(worst, _fd_relative_error(angular_loss, [(3, 4), (3, 4)], 100 + trial))
        worst = max(worst, _fd_relative_error(norm_loss, [(3, 4), (3, 4)], 200 + trial))
        worst = max(worst, _fd_relative_error(frobenius_loss, [(2, 1, 5, 5)], 300 + trial))
    ok = worst <= 1e-4
    _verdict("A4 gradient checks (3 losses x 20 instances vs central FD)", ok, f"worst rel err {worst:.2e}")


def test_a5_metric_oracles():
    rng = np.random.default_rng(42)
    worst_iqa = 0.0
    for _ in range(10):
        a = rng.uniform(size=(64, 64))
        b = np.clip(a + rng.normal(scale=0.05, size=(64, 64)), 0, 1)
        worst_iqa = max(worst_iqa, abs(ssim(a, b) - naive_ssim(a, b)))
        worst_iqa = max(worst_iqa, abs(ms_ssim(a, b) - naive_ms_ssim(a, b)))
    standard, doubled = psnr(np.zeros((8, 8)), np.full((8, 8), 0.1))
    psnr_ok = abs(standard - 20.0) <= 1e-9 and abs(doubled - 40.0) <= 1e-9

    worst_ret = 0.0
    for trial in range(10):
        trng = np.random.default_rng(trial)
        n_g = int(trng.integers(5, 21))
        n_q = int(trng.integers(2, 8))
        gal_ids = trng.integers(0, 4, size=n_g)
        q_ids = trng.choice(gal_ids, size=n_q)
        g_cams = trng.integers(0, 2, size=n_g)
        q_cams = trng.integers(0, 2, size=n_q)
        qf = torch.tensor(trng.normal(size=(n_q, 6)))
        gf = torch.tensor(trng.normal(size=(n_g, 6)))
        index = RetrievalIndex(gf, torch.tensor(gal_ids), torch.tensor(g_cams))
        rankings = rank_gallery(qf, index).numpy()
        r1 = cmc_rank1(rankings, q_ids, gal_ids, q_cams, g_cams)
        ap = mean_average_precision(rankings, q_ids, gal_ids, q_cams, g_cams)
        bf_r1, bf_ap = brute_force_retrieval(rankings, q_ids, gal_ids, q_cams, g_cams)
        worst_ret = max(worst_ret, abs(r1 - bf_r1), abs(ap - bf_ap))
    ok = worst_iqa <= 1e-6 and psnr_ok and worst_ret <= 1e-6
    _verdict(
        "A5 metric oracles (SSIM/MS-SSIM/PSNR/rank-1/mAP)",
        ok,
        f"worst IQA err {worst_iqa:.2e}, worst retrieval err {worst_ret:.2e}",
    )


def test_a6_classification_attack(cls_attacker, target_a, class_eval, class_data):
    clean_batch = to_normalized(class_data.test_px, NORM)
    clean_acc = float((classify(target_a, clean_batch).values == class_data.test_y).double().mean()) * 100
    report = evaluate_attack(cls_attacker, target_a, class_eval)
    ok = clean_acc >= 85.0 and report.attacked["accuracy"] <= 30.0
    _verdict(
        "A6 desk classification attack (clean >= 85, attacked <= 30)",
        ok,
        f"clean {clean_acc:.1f}% -> attacked {report.attacked['accuracy']:.1f}%",
    )


def test_a7_retrieval_attack(ret_attacker, target_embedder, retrieval_data):
    report = evaluate_attack(ret_attacker, target_embedder, retrieval_data.eval)
    r1_drop = report.degradation["rank1"]
    map_drop = report.degradation["map"]
    ok = r1_drop >= 40.0 and map_drop >= 30.0
    _verdict(
        "A7 desk retrieval attack (rank-1 drop >= 40, mAP drop >= 30)",
        ok,
        f"rank-1 {report.clean['rank1']:.1f} -> {report.attacked['rank1']:.1f}, "
        f"mAP {report.clean['map']:.1f} -> {report.attacked['map']:.1f}",
    )


def test_a8_cross_model_transfer(cls_attacker, target_b, class_eval):
    report = evaluate_attack(cls_attacker, target_b, class_eval)
    drop = report.degradation["accuracy"]
    ok = drop >= 20.0
    _verdict(
        "A8 cross-model transfer (accuracy drop >= 20 on unseen CNN-B)",
        ok,
        f"clean {report.clean['accuracy']:.1f}% -> attacked {report.attacked['accuracy']:.1f}% "
        f"(drop {drop:.1f})",
    )


def test_a9_throughput(cls_attacker, target_a, class_data):
    pixels = class_data.test_px
    gen_fn = generator_attack_fn(cls_attacker, target_a)
    pgd_cfg = PGDConfig(delta=0.1, steps=40)

    def pgd_fn(batch):
        return pgd(target_a, batch, classify(target_a, batch), pgd_cfg)

    gen_fps = [throughput(gen_fn, pixels, norm=NORM, batch_size=1, n_images=60) for _ in range(3)]
    pgd_fps = [
        throughput(pgd_fn, pixels, norm=NORM, batch_size=1, n_images=15, warmup=3)
        for _ in range(3)
    ]
    ratio = float(np.mean(gen_fps)) / float(np.mean(pgd_fps))
    ok = ratio >= 10.0
    _verdict(
        "A9 throughput (attacker FPS >= 10x PGD-40, batch 1, 3 runs)",
        ok,
        f"attacker {np.mean(gen_fps):.1f} img/s vs PGD-40 {np.mean(pgd_fps):.2f} img/s ({ratio:.1f}x)",
    )


def _a10_config(workdir):
    cfg = {
        "task": "classification",
        "dataset": {"type": "synthetic_classification", "n_train": 32, "n_test": 8, "seed": 3},
        "targets": [
            {
                "name": "clsA",
                "arch": "desk_classifier",
                "weights": "weights/clsA.pt",
                "train_if_missing": True,
                "width": 8,
                "feature_dim": 16,
                "train": {"epochs": 2},
            }
        ],
        "train": {
            "epochs_phase1": 2,
            "epochs_phase2": 1,
            "batch_size": 8,
            "learning_rate": 1e-4,
            "base_width": 8,
            "num_resblocks": 1,
        },
        "output_dir": "runs/out",
    }
    path = workdir / "config.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_a10_determinism(tmp_path):
    config = _a10_config(tmp_path)
    outs = [tmp_path / "run1", tmp_path / "run2"]
    for out in outs:
        code = main(["train", "--config", str(config), "--out", str(out), "--seed", "0"])
        assert code == EXIT_OK
    csv_identical = (outs[0] / "loss_history.csv").read_bytes() == (
        outs[1] / "loss_history.csv"
    ).read_bytes()

    batch = to_normalized(torch.rand(4, 3, 32, 32, generator=torch.Generator().manual_seed(0)), NORM)
    outputs = []
    for _ in range(2):
        model, _ = load_checkpoint(outs[0] / "checkpoint_final")
        model.eval()
        with torch.no_grad():
            perturbed, pert, mask = attack_batch(model, batch)
        outputs.append((perturbed.data, pert, mask))
    reload_identical = all(torch.equal(a, b) for a, b in zip(outputs[0], outputs[1]))
    ok = csv_identical and reload_identical
    _verdict(
        "A10 determinism (byte-identical loss CSVs, bit-identical checkpoint reload)",
        ok,
        f"csv identical={csv_identical}, reload identical={reload_identical}",
    )
