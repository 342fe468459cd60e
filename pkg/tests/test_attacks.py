import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unlearn_forge.attacks import (
    AttackReport,
    ReaClassConfig,
    ReaSampleConfig,
    ShadowEnsemble,
    aggregate_resonance,
    fit_logistic,
    mia_lira_scores,
    mia_up,
    rea_classwise,
    rea_samplewise,
    resonance_index,
    select_pseudo_retain,
    threshold_decisions,
    train_shadow_ensemble,
    train_up_scorer,
)
from unlearn_forge.data import LabeledDataset
from unlearn_forge.errors import InvalidInputError
from unlearn_forge.nn import SgdConfig, init_params, predict_proba


def test_multi_lr_aggregation_arithmetic():
    assert aggregate_resonance([10, 20, 30, 75], 75) == pytest.approx(1 - 135 / 300)
    assert aggregate_resonance([75, 75], 75) == 0.0
    with pytest.raises(InvalidInputError):
        aggregate_resonance([], 75)


@given(st.lists(st.integers(1, 50), min_size=1, max_size=6))
def test_aggregation_stays_in_unit_interval(indices):
    c = aggregate_resonance(indices, 50)
    assert 0.0 <= c <= 1.0 - 1 / 50 + 1e-12


def test_forgotten_class_already_predicted_resonates_immediately(class_problem):
    arch, split, params = class_problem
    inferred = split.unlearned.subset(np.arange(10))
    reference = split.ood_pool.where_labels([6, 7])
    cfg = ReaClassConfig(unlearn_label=1, idx_max=30)
    assert resonance_index(params, arch, inferred, reference, 0.01, cfg) == 1


def test_resonance_index_bounds_and_callback(class_problem):
    arch, split, params = class_problem
    inferred = split.ood_pool.where_labels([4]).subset(np.arange(10))
    reference = split.ood_pool.where_labels([6, 7])
    cfg = ReaClassConfig(unlearn_label=1, idx_max=12)
    steps = []
    idx = resonance_index(params, arch, inferred, reference, 1e-4, cfg, on_step=lambda i, p: steps.append(i))
    assert 1 <= idx <= 12
    assert steps == list(range(1, idx + 1))


def test_reference_must_not_share_classes(class_problem):
    arch, split, params = class_problem
    pool = split.ood_pool.where_labels([4])
    with pytest.raises(InvalidInputError):
        resonance_index(params, arch, pool, pool, 0.01, ReaClassConfig())


def test_class_attack_leaves_victim_untouched_and_records_divergence(class_problem):
    arch, split, params = class_problem
    before = {k: v.copy() for k, v in params.items()}
    cand = split.ood_pool.where_labels([4]).subset(np.arange(8))
    ref = split.ood_pool.where_labels([6])
    cfg = ReaClassConfig(learning_rates=(0.01, 1e200), idx_max=10, unlearn_label=1)
    with np.errstate(all="ignore"):
        r = rea_classwise(params, arch, cand, ref, cfg)
    assert r.diverged_lrs == [1e200]
    assert r.resonance_indices[1] == 10
    for k in params:
        np.testing.assert_array_equal(params[k], before[k])


@pytest.mark.parametrize("kwargs", [{"learning_rates": ()}, {"convergence_threshold": 1.0}, {"idx_max": 0},
                                    {"reference_ratio": 0.0}])
def test_class_config_validation(kwargs):
    with pytest.raises(InvalidInputError):
        ReaClassConfig(**kwargs)


@pytest.fixture
def population(small_problem):
    arch, split, _ = small_problem
    pop = split.unlearned.concat(split.test)
    return LabeledDataset(pop.features, pop.labels, pop.class_count, "pop", np.arange(len(pop)))


def _logit_conf(p, arch, data):
    prob = predict_proba(p, arch, data.features)[np.arange(len(data)), data.labels]
    prob = np.clip(prob, 1e-6, 1 - 1e-6)
    return np.log(prob / (1 - prob))


def test_lira_scores_match_an_out_shadow_z_score(small_problem, population, rng):
    arch, _, victim = small_problem
    shadows = [init_params(arch, s) for s in range(5)]
    masks = rng.random((5, len(population))) < 0.3
    ens = ShadowEnsemble(shadows, masks, arch)
    report = mia_lira_scores(ens, arch, victim, population)
    conf = np.stack([_logit_conf(p, arch, population) for p in shadows])
    target = _logit_conf(victim, arch, population)
    for i in range(len(population)):
        out = conf[~masks[:, i], i]
        if len(out) < 2:
            assert np.isnan(report.scores[i]) and i in report.undefined
        else:
            assert report.scores[i] == pytest.approx((target[i] - out.mean()) / out.std(ddof=1), rel=1e-9)


def test_lira_zero_variance_is_undefined(small_problem, population):
    arch, _, victim = small_problem
    same = init_params(arch, 3)
    ens = ShadowEnsemble([same, same, same], np.zeros((3, len(population)), bool), arch)
    report = mia_lira_scores(ens, arch, victim, population)
    assert np.isnan(report.scores).all()
    assert report.undefined == population.ids.tolist()


@pytest.fixture(scope="module")
def ensemble(small_problem):
    arch, split, _ = small_problem
    pop = split.unlearned.concat(split.test)
    pop = LabeledDataset(pop.features, pop.labels, pop.class_count, "pop", np.arange(len(pop)))
    aux = split.retained
    return pop, train_shadow_ensemble(arch, pop, aux, 4, SgdConfig(0.05), 3, seed=1)


def test_shadow_masks_cover_the_population(ensemble):
    pop, ens = ensemble
    assert ens.in_out_masks.shape == (4, len(pop))
    assert ens.in_out_masks.any() and not ens.in_out_masks.all()


def test_sample_reminiscence_with_zero_epochs_is_plain_lira(small_problem, ensemble):
    arch, _, victim = small_problem
    pop, ens = ensemble
    lira = mia_lira_scores(ens, arch, victim, pop)
    rea = rea_samplewise(victim, arch, pop, ReaSampleConfig(10, epochs=0), ens)
    assert rea.scores.tobytes() == lira.scores.tobytes()
    assert rea.attack_tag == "rea_sample"


def test_sample_reminiscence_changes_scores_and_not_the_victim(small_problem, ensemble):
    arch, _, victim = small_problem
    pop, ens = ensemble
    before = {k: v.copy() for k, v in victim.items()}
    rea = rea_samplewise(victim, arch, pop, ReaSampleConfig(10, epochs=2, learning_rate=0.05), ens)
    assert not np.allclose(rea.scores, mia_lira_scores(ens, arch, victim, pop).scores, equal_nan=True)
    for k in victim:
        np.testing.assert_array_equal(victim[k], before[k])


def test_pseudo_retain_selection():
    scores = np.array([0.5, np.nan, 2.0, 0.5, 1.0])
    assert select_pseudo_retain(scores, 3).tolist() == [0, 2, 4]
    assert select_pseudo_retain(scores, 5).tolist() == [0, 1, 2, 3, 4]


def test_report_persistence_round_trip(tmp_path):
    r = AttackReport(np.array([3, 4, 5]), np.array([0.2, np.nan, 0.9]), "lira",
                     resonance_indices={3: [1, 2]}, config={"trial": 0})
    r = r.with_decisions(0.5)
    r.save(tmp_path / "rep")
    back = AttackReport.load(tmp_path / "rep")
    assert back.target_ids.tolist() == [3, 4, 5] and back.tau == 0.5
    assert np.isnan(back.scores[1]) and back.resonance_indices == {3: [1, 2]}
    with open(tmp_path / "rep.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["target_id", "score", "decision"]
    assert [row[2] for row in rows[1:]] == ["0", "0", "1"]


def test_decisions_need_tau_and_nan_is_never_member():
    with pytest.raises(InvalidInputError):
        AttackReport([1], [0.0], "x", decisions=np.array([True]))
    r = AttackReport([1, 2], [np.nan, 3.0], "x")
    assert threshold_decisions(r, 1.0).tolist() == [False, True]


def test_logistic_attacker_separates_separable_data(rng):
    pos = rng.normal(2.0, 0.5, size=(50, 3))
    neg = rng.normal(-2.0, 0.5, size=(50, 3))
    scorer = fit_logistic(np.vstack([pos, neg]), np.r_[np.ones(50), np.zeros(50)])
    assert np.mean(scorer(pos) > 0.5) > 0.95 and np.mean(scorer(neg) < 0.5) > 0.95
    with pytest.raises(InvalidInputError):
        train_up_scorer(pos, neg[:2])


def test_mia_up_requires_unlearned_shadows(small_problem, population):
    arch, _, victim = small_problem
    ens = ShadowEnsemble([victim], np.zeros((1, 0), bool), arch)
    with pytest.raises(InvalidInputError):
        mia_up(ens, victim, population)
