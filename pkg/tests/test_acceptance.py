"""Acceptance criteria, one test per criterion.

Run with ``pytest -s tests/test_acceptance.py`` to see the per-criterion
PASS lines. The distillation experiment (criteria 4 and 5) trains 30 small
networks and dominates the runtime.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest

from darkrank import _kernels, dataio, metrics, oracle, ranking, trainer
from darkrank.exceptions import CapacityError
from darkrank.metrics import ClusteringResult, RetrievalResult
from darkrank.trainer import ExperimentConfig, LossWeights, OptimizerParams

SEEDS = (0, 1, 2, 3, 4)
STUDENT_VARIANTS = ("none", "soft", "hard", "kd", "kd+soft")

# protocol hyper-parameters for the directional experiment: the teacher is
# trained gently (lr 3e-4) so its metric stays close to the raw feature
# geometry, which is what a higher-capacity model preserves at this scale
TEACHER_LR = 3e-4
STUDENT_LR = 1e-3
TRANSFER_WEIGHT = 3.0


def announce(num, name, detail=""):
    suffix = f"  [{detail}]" if detail else ""
    print(f"\nACCEPTANCE {num} {name}: PASS{suffix}")


# ---------------------------------------------------------------------------
# criterion 1: permutation-model correctness
# ---------------------------------------------------------------------------

def test_criterion_1_permutation_model_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_norm = 0.0
    worst_kl = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 7))
        scores = rng.normal(0.0, 2.0, size=n)
        perms = ranking._all_permutations(n)
        total = float(np.exp(_kernels.all_log_probs(scores, perms)).sum())
        worst_norm = max(worst_norm, abs(total - 1.0))
        assert 1.0 - 1e-9 <= total <= 1.0 + 1e-9

        student = rng.normal(0.0, 2.0, size=n)
        factored = ranking.soft_darkrank_loss(scores, student).value
        naive = oracle.naive_soft_loss(scores, student)
        worst_kl = max(worst_kl, abs(factored - naive))
        assert abs(factored - naive) <= 1e-9
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    announce(1, "permutation-model correctness",
             f"worst |sum-1|={worst_norm:.2e}, worst KL gap={worst_kl:.2e}, "
             f"{elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion 2: gradient suite
# ---------------------------------------------------------------------------

def test_criterion_2_gradient_suite():
    start = time.perf_counter()
    result = oracle.run_gradcheck(instances=100, tolerance=1e-4, seed=7)
    elapsed = time.perf_counter() - start
    for report in result.reports:
        assert report.passed, (
            f"{report.name}: max rel error {report.max_rel_error:.3e} > 1e-4")
    assert elapsed < 120.0
    worst = result.worst()
    announce(2, "gradient suite",
             f"{len(result.reports)} losses x 100 instances, worst "
             f"{worst.name}={worst.max_rel_error:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion 3: mode and invariance properties
# ---------------------------------------------------------------------------

def test_criterion_3_mode_and_invariance():
    rng = np.random.default_rng(99)

    for _ in range(200):
        n = int(rng.integers(2, 7))
        scores = rng.normal(size=n)
        assert tuple(ranking.best_permutation(scores)) == \
            oracle.enumerate_distribution(scores).argmax()

    for _ in range(100):
        dists = rng.uniform(0.01, 2.5, size=7)
        reference = None
        for alpha in (0.5, 1.0, 3.0, 10.0):
            for beta in (1.0, 2.0, 3.0, 4.0):
                target = tuple(ranking.best_permutation(-alpha * dists**beta))
                reference = target if reference is None else reference
                assert target == reference

    for _ in range(100):
        n = int(rng.integers(2, 6))
        t = rng.normal(size=n)
        s = rng.normal(size=n)
        c1, c2 = rng.normal(size=2) * 10
        for loss in (ranking.soft_darkrank_loss, ranking.hard_darkrank_loss,
                     ranking.listnet_loss):
            assert loss(t + c1, s + c2).value == pytest.approx(
                loss(t, s).value, abs=1e-9)
        perm = rng.permutation(n)
        assert ranking.listmle_loss(perm, s + c2).value == pytest.approx(
            ranking.listmle_loss(perm, s).value, abs=1e-9)

    announce(3, "mode and invariance properties",
             "argmax x200, alpha/beta grid x100, shift invariance x100")


# ---------------------------------------------------------------------------
# criteria 4 and 5: directional distillation experiment
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def distillation_runs():
    start = time.perf_counter()
    recall = {v: [] for v in ("teacher",) + STUDENT_VARIANTS}
    for seed in SEEDS:
        spec = dataio.SynthSpec(seed=seed)  # 20 identities x 16, d=32, 2 heldout
        dataset = dataio.generate(spec)
        teacher_cfg = ExperimentConfig(
            dataset=spec, seed=seed, optimizer=OptimizerParams(lr=TEACHER_LR))
        teacher, teacher_report = trainer.train_teacher(teacher_cfg, dataset=dataset)
        recall["teacher"].append(teacher_report.final_metrics["recall_at_1"])
        for variant in STUDENT_VARIANTS:
            cfg = ExperimentConfig(
                dataset=spec, seed=seed, variant=variant,
                weights=LossWeights(transfer=TRANSFER_WEIGHT),
                optimizer=OptimizerParams(lr=STUDENT_LR))
            _, report = trainer.train(
                cfg, teacher=None if variant == "none" else teacher, dataset=dataset)
            recall[variant].append(report.final_metrics["recall_at_1"])
    return recall, time.perf_counter() - start


def test_criterion_4_directional_distillation(distillation_runs):
    recall, elapsed = distillation_runs
    med = {k: float(np.median(v)) for k, v in recall.items()}
    assert med["soft"] >= med["none"] + 0.02, (med["soft"], med["none"])
    assert med["hard"] >= med["none"] + 0.02, (med["hard"], med["none"])
    for variant in STUDENT_VARIANTS:
        assert med["teacher"] >= med[variant], (variant, med)
    assert elapsed < 600.0
    announce(4, "directional distillation",
             "medians: " + " ".join(f"{k}={med[k]:.3f}" for k in med)
             + f", {elapsed:.0f}s for all runs")


def test_criterion_5_complementarity(distillation_runs):
    recall, _ = distillation_runs
    per_seed_best_single = [max(kd, soft)
                            for kd, soft in zip(recall["kd"], recall["soft"])]
    combined = float(np.median(recall["kd+soft"]))
    baseline = float(np.median(per_seed_best_single))
    assert combined >= baseline - 0.01, (combined, baseline)
    announce(5, "complementarity (no-harm)",
             f"kd+soft={combined:.3f} vs best single={baseline:.3f}")


# ---------------------------------------------------------------------------
# criterion 6: metrics correctness
# ---------------------------------------------------------------------------

def test_criterion_6_metrics_correctness():
    from tests_support import naive_map, naive_nmi, naive_pairwise_f1

    rng = np.random.default_rng(6)
    for _ in range(100):
        n_q = int(rng.integers(1, 8))
        rows = []
        for _ in range(n_q):
            flags = (rng.random(int(rng.integers(2, 12))) < 0.4).tolist()
            if not any(flags):
                flags[int(rng.integers(len(flags)))] = True
            rows.append(flags)
        result = RetrievalResult(
            rankings=[np.arange(len(r)) for r in rows],
            matches=[np.asarray(r, dtype=bool) for r in rows])
        assert metrics.mean_average_precision(result) == pytest.approx(
            naive_map(rows), abs=1e-9)

    for _ in range(100):
        n = int(rng.integers(2, 80))
        pred = rng.integers(0, 6, size=n)
        truth = rng.integers(0, 4, size=n)
        clustering = ClusteringResult(pred, truth)
        assert metrics.f1_score(clustering) == pytest.approx(
            naive_pairwise_f1(pred.tolist(), truth.tolist()), abs=1e-9)
        assert metrics.nmi(clustering) == pytest.approx(
            naive_nmi(pred.tolist(), truth.tolist()), abs=1e-9)

    # hand-checked cases from the operation contracts, exact
    single = RetrievalResult(rankings=[np.arange(4)],
                             matches=[np.array([True, False, True, False])])
    assert metrics.mean_average_precision(single) == (1.0 + 2.0 / 3.0) / 2.0
    rows = [[1, 0, 0, 0, 0, 0, 0], [0, 0, 1, 0, 0, 0, 0], [0, 0, 0, 0, 0, 0, 1]]
    res = RetrievalResult(rankings=[np.arange(7)] * 3,
                          matches=[np.asarray(r, dtype=bool) for r in rows])
    assert metrics.cmc_rank_k(res, 5) == 2.0 / 3.0
    labels = np.array([0, 0, 1, 1, 2])
    assert metrics.f1_score(ClusteringResult(labels, labels + 4)) == 1.0
    assert metrics.nmi(ClusteringResult(labels, (labels + 1) * 7)) == 1.0
    c_classes, m = 4, 5
    one_cluster = ClusteringResult(np.zeros(c_classes * m, dtype=int),
                                   np.repeat(np.arange(c_classes), m))
    p = (m - 1) / (c_classes * m - 1)
    assert metrics.f1_score(one_cluster) == pytest.approx(2 * p / (p + 1), abs=1e-15)

    announce(6, "metrics correctness", "mAP/F1/NMI vs oracles x100 + exact cases")


# ---------------------------------------------------------------------------
# criterion 7: determinism of cmd_distill
# ---------------------------------------------------------------------------

def test_criterion_7_determinism(tmp_path):
    data_path = tmp_path / "data.csv"
    spec = dataio.SynthSpec(num_identities=6, samples_per_identity=6, feature_dim=8,
                            intra_class_stddev=1.0, inter_class_separation=5.0,
                            heldout_fraction=0.34, seed=3)
    dataio.save(dataio.generate(spec), data_path)
    config = {
        "version": 1,
        "dataset": str(data_path),
        "teacher_hidden": [16],
        "student_hidden": [8],
        "embed_dim": 8,
        "variant": "soft+kd",
        "schedule": {"epochs": 3, "decay_epochs": [2], "decay_factor": 0.5},
        "batch_size": 6,
        "seed": 5,
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config))

    def run(cmd):
        proc = subprocess.run([sys.executable, "-m", "darkrank.cli"] + cmd,
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        return proc

    run(["train-teacher", "--config", str(config_path),
         "--out", str(tmp_path / "teacher")])
    teacher = tmp_path / "teacher" / "teacher.drknet"
    reports = []
    for name in ("run1", "run2"):
        run(["distill", "--config", str(config_path), "--teacher", str(teacher),
             "--out", str(tmp_path / name)])
        reports.append((tmp_path / name / "report.json").read_bytes())
    assert reports[0] == reports[1]
    announce(7, "determinism", "cmd_distill twice -> byte-identical report.json")


# ---------------------------------------------------------------------------
# criterion 8: capacity boundary
# ---------------------------------------------------------------------------

def test_criterion_8_capacity_boundary():
    nine = np.linspace(-1.0, 1.0, 9)
    with pytest.raises(CapacityError):
        ranking.soft_darkrank_loss(nine, nine)

    rng = np.random.default_rng(8)
    teacher = rng.normal(size=50)
    student = rng.normal(size=50)
    ranking.hard_darkrank_loss(teacher, student)  # warm up
    times = []
    for _ in range(50):
        t0 = time.perf_counter()
        ranking.hard_darkrank_loss(teacher, student)
        times.append(time.perf_counter() - t0)
    median_ms = float(np.median(times)) * 1e3
    assert median_ms < 10.0
    announce(8, "capacity boundary",
             f"n=9 soft -> CapacityError; hard n=50 median {median_ms:.3f} ms/call")
