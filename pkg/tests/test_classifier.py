import numpy as np
import pytest

from src.services import classifier, evaluation, numerics as nx
from src.services.base import ContractError, ShapeError
from src.services.classifier import (ProbClassifier, _hinge_objective, _softmax_objective, _stratified_folds,
                                     grid_search, predict_proba, train)
from src.services.config_models import CalibrationMode, ClassifierParams, GridSearchSpec, SyntheticSpec
from src.services.data_manager import LabeledDataset, make_synthetic
from src.services.numerics import SeededRng, Tensor


@pytest.fixture
def separable():
    return make_synthetic(SyntheticSpec(num_classes=3, per_class=20, noise=0.1, seed=3)).normalized()


class TestTrain:
    def test_objective_decreases_monotonically(self, separable, rng):
        model = train(separable, ClassifierParams(epochs=60), rng)
        assert np.all(np.diff(model.objective_trace) <= 1e-12)
        assert model.objective_trace[-1] < model.objective_trace[0]

    def test_fits_separable_data(self, separable, rng):
        model = train(separable, ClassifierParams(epochs=100), rng)
        assert np.mean(model.predict(separable.features) == separable.labels) > 0.95

    def test_separable_two_class_data_is_fit_exactly(self, rng):
        data = make_synthetic(SyntheticSpec(num_classes=2, per_class=25, noise=0.1, seed=5)).normalized()
        model = train(data, ClassifierParams(epochs=100), rng)
        assert np.mean(model.predict(data.features) == data.labels) == 1.0

    def test_duplicated_data_gives_same_weights(self, separable, rng):
        hp = ClassifierParams(epochs=50)
        once = train(separable, hp, rng)
        twice = train(separable.concat(separable), hp, rng)
        np.testing.assert_allclose(twice.weights, once.weights, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(twice.bias, once.bias, rtol=1e-8, atol=1e-10)

    def test_label_permutation_permutes_weight_columns(self, separable, rng):
        perm = np.array([2, 0, 1])
        relabeled = LabeledDataset(separable.features, perm[separable.labels], 3)
        hp = ClassifierParams(epochs=50)
        original = train(separable, hp, rng)
        permuted = train(relabeled, hp, rng)
        np.testing.assert_allclose(permuted.weights[:, perm], original.weights, rtol=1e-8, atol=1e-10)
        np.testing.assert_array_equal(permuted.predict(separable.features), perm[original.predict(separable.features)])

    @pytest.mark.parametrize('mode', [CalibrationMode.SOFTMAX, CalibrationMode.PLATT])
    def test_midpoint_of_symmetric_blobs_is_undecided(self, rng, mode):
        blob = np.random.default_rng(4).normal(size=(30, 2)) * 0.5 + [1.5, 0.0]
        data = LabeledDataset(np.vstack([blob, -blob]), [0] * 30 + [1] * 30, 2)
        model = train(data, ClassifierParams(epochs=60, mode=mode), rng)
        np.testing.assert_allclose(model.predict_proba(np.zeros(2)), [0.5, 0.5], atol=0.05)

    @pytest.mark.parametrize('mode', [CalibrationMode.SOFTMAX, CalibrationMode.PLATT])
    def test_posteriors_are_distributions(self, separable, rng, mode):
        model = train(separable, ClassifierParams(epochs=40, mode=mode), rng)
        probs = predict_proba(model, separable.features)
        assert probs.shape == (separable.size, 3)
        np.testing.assert_allclose(probs.sum(axis=1), np.ones(separable.size))
        assert np.all(probs >= 0.0)
        assert predict_proba(model, separable.features[0]).shape == (3,)

    def test_platt_hinge_objective_is_monotone(self, separable, rng):
        model = train(separable, ClassifierParams(epochs=40, mode=CalibrationMode.PLATT), rng)
        assert np.all(np.diff(model.objective_trace) <= 1e-12)
        assert model.platt.shape == (3, 2)

    def test_single_class_rejected(self, rng):
        data = LabeledDataset(np.ones((4, 2)), [1, 1, 1, 1], 3)
        with pytest.raises(ContractError):
            train(data, ClassifierParams(), rng)

    def test_minibatch_path_above_full_batch_limit(self, separable, rng):
        model = train(separable, ClassifierParams(epochs=5, full_batch_limit=10, minibatch_size=8), rng)
        assert len(model.objective_trace) == 5

    def test_dimension_mismatch(self, separable, rng):
        model = train(separable, ClassifierParams(epochs=5), rng)
        with pytest.raises(ShapeError):
            model.predict_proba(np.zeros((2, 5)))

    def test_state_round_trip(self, separable, rng):
        model = train(separable, ClassifierParams(epochs=20, mode=CalibrationMode.PLATT), rng)
        restored = ProbClassifier.from_state(model.state_dict())
        np.testing.assert_array_equal(restored.predict_proba(separable.features),
                                      model.predict_proba(separable.features))


class TestObjectiveGradients:
    @pytest.mark.parametrize('seed', range(4))
    def test_softmax_objective(self, seed):
        rng = SeededRng(seed, 'clf-grad')
        params = {'W': Tensor(rng.normal((3, 4)), requires_grad=True),
                  'b': Tensor(rng.normal(4), requires_grad=True)}
        x, y = rng.normal((6, 3)), rng.integers(0, 4, 6)
        assert nx.gradient_check(lambda: _softmax_objective(params, x, y, 0.01), params) < 1e-4

    @pytest.mark.parametrize('seed', range(4))
    def test_hinge_objective(self, seed):
        rng = SeededRng(seed, 'clf-grad')
        params = {'W': Tensor(rng.normal((3, 4)), requires_grad=True),
                  'b': Tensor(rng.normal(4), requires_grad=True)}
        x = rng.normal((6, 3))
        targets = np.where(np.eye(4)[rng.integers(0, 4, 6)] > 0, 1.0, -1.0)
        assert nx.gradient_check(lambda: _hinge_objective(params, x, targets, 0.01), params) < 1e-4


class TestGridSearch:
    def test_single_candidate_returned_directly(self, separable, rng):
        spec = GridSearchSpec(regularization_grid=[0.01], learning_rate_grid=[0.3], epochs=10)
        hp = grid_search(separable, spec, rng)
        assert (hp.regularization, hp.learning_rate) == (0.01, 0.3)

    def test_ties_prefer_lower_regularization(self, separable, rng):
        spec = GridSearchSpec(regularization_grid=[0.01, 0.0001], learning_rate_grid=[0.5], epochs=60)
        hp = grid_search(separable, spec, rng)
        assert hp.regularization == 0.0001

    def test_picks_candidate_better_on_every_fold(self, separable, rng, monkeypatch):
        real_train = classifier.train
        fold_scores = {}

        def fake_train(data, hp, fold_rng):
            if hp.regularization == 0.0001:
                # постоянный ответ: класс 0
                return ProbClassifier(np.zeros((data.dim, 3)), np.array([1.0, 0.0, 0.0]), hp)
            return real_train(data, hp, fold_rng)

        real_f_score = evaluation.f_score

        def recording_f_score(predicted, truth, k):
            macro, per_class = real_f_score(predicted, truth, k)
            fold_scores.setdefault(bool(np.all(predicted == 0)), []).append(macro)
            return macro, per_class

        monkeypatch.setattr(classifier, 'train', fake_train)
        monkeypatch.setattr(evaluation, 'f_score', recording_f_score)
        spec = GridSearchSpec(regularization_grid=[0.0001, 0.1], learning_rate_grid=[0.5], folds=3, epochs=60)
        hp = grid_search(separable, spec, rng)
        assert hp.regularization == 0.1
        assert min(fold_scores[False]) > max(fold_scores[True])

    def test_folds_are_stratified(self, separable, rng):
        assignment = _stratified_folds(separable, 4, rng)
        for fold in range(4):
            np.testing.assert_array_equal(np.bincount(separable.labels[assignment == fold], minlength=3), [5, 5, 5])

    def test_folds_larger_than_every_class_rejected(self, rng):
        data = LabeledDataset(np.arange(8.0).reshape(4, 2), [0, 0, 1, 1], 2)
        with pytest.raises(ContractError):
            _stratified_folds(data, 3, rng)

    def test_candidates_are_sorted(self):
        spec = GridSearchSpec(regularization_grid=[0.1, 0.0], learning_rate_grid=[0.5, 0.1])
        order = [(c.regularization, c.learning_rate) for c in spec.candidates()]
        assert order == [(0.0, 0.1), (0.0, 0.5), (0.1, 0.1), (0.1, 0.5)]

    def test_too_few_samples_for_folds(self, rng):
        data = LabeledDataset(np.array([[0.0, 1.0], [1.0, 0.0]]), [0, 1], 2)
        spec = GridSearchSpec(regularization_grid=[0.1, 0.2], folds=3)
        with pytest.raises(ContractError):
            grid_search(data, spec, rng)
