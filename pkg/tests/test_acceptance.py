"""End-to-end acceptance suite.

Each test covers one release criterion and prints a single PASS line when its
assertions hold. Tolerances and sample sizes are fixed here, not configurable.
"""

import time

import numpy as np
import pytest

from nearq.core import (
    ActionSpace,
    OfflineDataset,
    PatientTrajectory,
    StageRecord,
    history_features,
    load_csv,
    save_csv,
)
from nearq.envs import CancerParams, ItrConfig, simulate_cancer_cohort, simulate_itr
from nearq.evalkit import band_stats, constant_dose_baselines, evaluate_policy
from nearq.nearequiv import (
    ABSOLUTE,
    RELATIVE,
    EpsilonConfig,
    admissible_actions,
    backward_fit_near_equiv,
    policy_set,
    select_and_pad,
)
from nearq.qlearn import backward_fit, greedy_policy
from nearq.oracle import build_fixture_dataset, dp_oracle, max_discrepancy
from nearq.regression import DesignSpec

from conftest import TableQ

CANCER_SPEC = DesignSpec.per_action_kernel(kernel_bandwidth=2.0, ridge=0.1)
LINEAR_SPEC = DesignSpec.interaction_linear()
PARAMS = CancerParams()


def test_acceptance_1_zero_epsilon_reduces_to_classical():
    ds = simulate_cancer_cohort(PARAMS, "uniform-random", 500, seed=101).dataset
    classical = backward_fit(ds, CANCER_SPEC)
    # precondition: every final-stage value row has a unique maximum
    idx, feats, _, _ = ds.stage_rows(ds.horizon)
    q = classical.models[ds.horizon].predict_all_matrix(feats)
    assert all((row == row.max()).sum() == 1 for row in q)

    stack = backward_fit_near_equiv(ds, CANCER_SPEC, EpsilonConfig(0.0))
    assert stack.m == 1
    base = greedy_policy(classical)
    policies = policy_set(stack)
    for policy in policies:
        for i, patient in enumerate(ds.patients):
            for t in range(patient.terminal_stage + 1):
                h = history_features(patient, t)
                assert policy.decide(t, h) == base.decide(t, h)

    # same reduction with the linear backend on the tabular fixture
    tab = build_fixture_dataset()
    tab_classical = greedy_policy(backward_fit(tab, LINEAR_SPEC))
    tab_stack = backward_fit_near_equiv(tab, LINEAR_SPEC, EpsilonConfig(0.0))
    assert tab_stack.m == 1
    tab_rank1 = policy_set(tab_stack)[0]
    for patient in tab.patients:
        for t in range(patient.terminal_stage + 1):
            h = history_features(patient, t)
            assert tab_rank1.decide(t, h) == tab_classical.decide(t, h)
    print("\nACCEPTANCE 1 zero-epsilon classical reduction: PASS")


def test_acceptance_2_dp_oracle_equivalence():
    started = time.perf_counter()
    ds = build_fixture_dataset()
    stack = backward_fit(ds, LINEAR_SPEC)
    worst = max_discrepancy(stack, dp_oracle(ds))
    elapsed = time.perf_counter() - started
    assert worst < 1e-8
    assert elapsed < 1.0
    print(f"\nACCEPTANCE 2 dp-oracle equivalence (max dev {worst:.2e}): PASS")


def test_acceptance_3_admissibility_properties():
    rng = np.random.default_rng(2024)
    eps_grid = (0.0, 0.1, 0.25, 0.5, 0.75, 0.9)
    for trial in range(10_000):
        k = int(rng.integers(1, 12))
        scale = 10.0 ** rng.integers(-2, 3)
        q = rng.normal(size=k) * scale
        mode = RELATIVE if trial % 2 == 0 else ABSOLUTE
        q_max = q.max()
        previous = None
        for eps in eps_grid:
            got = admissible_actions(q, EpsilonConfig(eps, mode))
            threshold = q_max - eps * abs(q_max) if mode == RELATIVE else q_max - eps
            expect = {a for a in range(k) if q[a] >= threshold}
            kept = {a for a, _ in got}
            assert kept == expect
            assert 1 <= len(got) <= k
            assert got[0][0] == int(np.argmax(q))
            if previous is not None:
                assert previous <= kept
            previous = kept
    # padding: column 1 always carries the rank-1 value
    for trial in range(50):
        k = int(rng.integers(2, 12))
        n = int(rng.integers(1, 8))
        space = ActionSpace(tuple(float(i) for i in range(k)))
        table = {(float(i),): rng.normal(size=k) for i in range(n)}
        model = TableQ(space, 1, table)
        ds = OfflineDataset(
            tuple(
                PatientTrajectory((StageRecord((float(i),), 0, 0.0),)) for i in range(n)
            ),
            0,
            (space,),
            (1,),
        )
        sel = select_and_pad(model, ds, EpsilonConfig(float(rng.uniform(0, 0.99))))
        assert sel.m <= k
        for i in range(n):
            rank1 = sel.padded[i, 0]
            assert rank1 == max(table[(float(i),)])
            n_i = sel.admissible.n_admissible(i)
            assert np.all(sel.padded[i, n_i:] == rank1)
    print("\nACCEPTANCE 3 admissibility soundness and monotonicity: PASS")


def test_acceptance_4_single_stage_reproduction():
    started = time.perf_counter()
    blip01, blip_rest, acc, acc_out = [], [], [], []
    mis_total, mis_in_band = 0, 0
    for s in range(100, 120):
        train = simulate_itr(ItrConfig(1000, s))
        test = simulate_itr(ItrConfig(2000, s + 7919))
        model = backward_fit(train, LINEAR_SPEC).models[0]
        blip_coef = 2.0 * np.asarray(model.beta_interaction)
        blip01.append(blip_coef[:2])
        blip_rest.append(blip_coef[2:])
        stats = band_stats(model, test, 0.5)
        acc.append(1.0 - stats.misclassified_total / stats.n_test)
        acc_out.append(stats.accuracy_outside_band)
        mis_total += stats.misclassified_total
        mis_in_band += stats.misclassified_in_band
    mean01 = np.mean(blip01, axis=0)
    mean_rest = np.mean(blip_rest, axis=0)
    assert np.abs(mean01 - 2.0).max() <= 0.15          # (a) signal interactions
    assert np.abs(mean_rest).max() <= 0.05             # (a) noise interactions
    assert np.mean(acc) >= 0.90                        # (b) overall accuracy
    assert np.mean(acc_out) >= 0.97                    # (b) accuracy outside the band
    assert mis_in_band / mis_total >= 0.80             # (c) errors inside the band
    elapsed = time.perf_counter() - started
    assert elapsed < 60.0
    print(
        f"\nACCEPTANCE 4 single-stage reproduction "
        f"(acc {np.mean(acc):.3f}, in-band share {mis_in_band / mis_total:.3f}): PASS"
    )


def test_acceptance_5_multi_stage_reproduction():
    started = time.perf_counter()

    # (a) fixed run: month-6 combined metric of the learned policy strictly
    # below every constant regime's
    seed = 7
    train = simulate_cancer_cohort(PARAMS, "uniform-random", 500, seed, label="train").dataset
    stack = backward_fit(train, CANCER_SPEC)
    opt = evaluate_policy(PARAMS, greedy_policy(stack), 1000, seed + 1, label="opt")
    baselines = constant_dose_baselines(PARAMS, 1000, seed + 1)
    assert len(baselines) == 11
    assert all(opt.mean_combined[6] < b.mean_combined[6] for b in baselines)

    # (b) the rank-1 near-equivalent policy's curve overlaps the classical one
    # pointwise for every tolerance evaluated
    for eps in (0.1, 0.3, 0.5, 0.9):
        ne_stack = backward_fit_near_equiv(train, CANCER_SPEC, EpsilonConfig(eps))
        assert ne_stack.m <= 11
        rank1 = policy_set(ne_stack)[0]
        curve = evaluate_policy(PARAMS, rank1, 1000, seed + 1, label="rank1")
        assert curve.mean_combined == opt.mean_combined

    # (c) seed-averaged lead over the best constant regime grows from month 3
    # to month 6
    gaps = []
    for s in range(7, 17):
        cohort = simulate_cancer_cohort(PARAMS, "uniform-random", 500, s, label="train")
        st = backward_fit(cohort.dataset, CANCER_SPEC)
        res = evaluate_policy(PARAMS, greedy_policy(st), 1000, s + 1, label="opt")
        consts = constant_dose_baselines(PARAMS, 1000, s + 1)
        best = np.min([c.mean_combined for c in consts], axis=0)
        gaps.append(best - np.array(res.mean_combined))
    mean_gap = np.array(gaps).mean(axis=0)
    for month in range(3, 6):
        assert mean_gap[month + 1] >= mean_gap[month]

    elapsed = time.perf_counter() - started
    assert elapsed < 300.0
    print(
        f"\nACCEPTANCE 5 multi-stage reproduction "
        f"(month-6 lead {mean_gap[6]:+.3f}, {elapsed:.0f}s): PASS"
    )


def test_acceptance_6_cost_ratio():
    train = simulate_cancer_cohort(PARAMS, "uniform-random", 500, seed=7, label="train").dataset
    backward_fit(train, CANCER_SPEC)  # warm-up
    t0 = time.perf_counter()
    backward_fit(train, CANCER_SPEC)
    classical_seconds = time.perf_counter() - t0
    worst_ratio = 0.0
    for eps in (0.1, 0.3, 0.5, 0.9):
        t0 = time.perf_counter()
        backward_fit_near_equiv(train, CANCER_SPEC, EpsilonConfig(eps))
        ratio = (time.perf_counter() - t0) / classical_seconds
        worst_ratio = max(worst_ratio, ratio)
    assert worst_ratio <= 15.0
    print(f"\nACCEPTANCE 6 cost ratio (worst {worst_ratio:.1f}x): PASS")


def test_acceptance_7_configuration_guards():
    # tolerance domain
    for bad in (-0.2, 1.0, 1.7):
        with pytest.raises(ValueError):
            EpsilonConfig(bad)
    EpsilonConfig(0.0)
    EpsilonConfig(0.999)

    # bitwise reproducibility under a fixed seed
    assert simulate_itr(ItrConfig(300, seed=5)) == simulate_itr(ItrConfig(300, seed=5))
    a = simulate_cancer_cohort(PARAMS, "uniform-random", 60, seed=5)
    b = simulate_cancer_cohort(PARAMS, "uniform-random", 60, seed=5)
    assert a.dataset == b.dataset and np.array_equal(a.rewards, b.rewards)

    # CSV round-trip identity
    import tempfile
    from pathlib import Path

    rng = np.random.default_rng(77)
    with tempfile.TemporaryDirectory() as tmp:
        for trial in range(5):
            space = ActionSpace(tuple(float(v) for v in rng.normal(size=3)))
            patients = tuple(
                PatientTrajectory(
                    tuple(
                        StageRecord(
                            tuple(float(v) for v in rng.normal(size=2)),
                            int(rng.integers(0, 3)),
                            float(rng.normal()),
                        )
                        for _ in range(int(rng.integers(1, 3)))
                    )
                )
                for _ in range(4)
            )
            ds = OfflineDataset(patients, 1, (space, space), (2, 2))
            path = Path(tmp) / f"cohort{trial}.csv"
            save_csv(ds, path)
            assert load_csv(path) == ds
    print("\nACCEPTANCE 7 configuration guards and reproducibility: PASS")
