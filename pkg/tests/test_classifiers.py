import numpy as np
import pytest

from src.config.schema import GruClassifierConfig
from src.services.classifiers import (
    LinearSvmModel, confusion_matrix, gru_posteriors, load_classifier, majority_vote,
    predict_recording, save_classifier, svm_predict, svm_predict_batch, train_gru_classifier,
    train_svm,
)
from src.utils.errors import DataError


def _blobs(rng, per_class=30, spread=0.3):
    centers = np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 6.0], [6.0, 6.0]])
    X = np.concatenate([c + spread * rng.normal(size=(per_class, 2)) for c in centers])
    return X, np.repeat(np.arange(4), per_class)


def _constant_windows(rng, per_class=40, steps=5):
    X = np.concatenate([np.full((per_class, steps, 1), 0.5), np.full((per_class, steps, 1), -0.5)])
    y = np.repeat([0, 1], per_class)
    order = rng.permutation(len(y))
    return X[order], y[order]


def test_svm_separates_blobs(rng):
    X, y = _blobs(rng)
    model = train_svm(X, y, C=1.0)
    assert np.mean(svm_predict_batch(model, X) == y) == 1.0


def test_svm_training_is_deterministic(rng):
    X, y = _blobs(rng)
    a = train_svm(X, y, C=0.1, seed=4)
    b = train_svm(X, y, C=0.1, seed=4)
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.biases, b.biases)


def test_svm_is_invariant_to_feature_scale(rng):
    X, y = _blobs(rng)
    plain = train_svm(X, y, C=1.0)
    scaled = train_svm(X * 10.0, y, C=1.0)
    assert np.array_equal(svm_predict_batch(plain, X), svm_predict_batch(scaled, X * 10.0))


def test_svm_dual_objective_never_decreases(rng):
    X, y = _blobs(rng, spread=2.0)
    model = train_svm(X, y, C=0.5, tol=1e-8, max_epochs=50)
    for history in model.dual_history:
        assert all(b >= a - 1e-9 for a, b in zip(history, history[1:]))


def test_zero_weights_predict_the_first_class():
    model = LinearSvmModel(np.zeros((4, 3)), np.zeros(4), 1.0, np.zeros(3), np.ones(3))
    prediction = svm_predict(model, np.array([1.0, -2.0, 3.0]))
    assert prediction.class_index == 0
    assert np.array_equal(prediction.scores, np.zeros(4))


def test_svm_rejects_bad_input(rng):
    X, y = _blobs(rng)
    with pytest.raises(DataError):
        train_svm(X, np.zeros_like(y), C=1.0)
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(DataError):
        train_svm(bad, y, C=1.0)
    with pytest.raises(ValueError):
        train_svm(X, y, C=0.0)


def test_gru_learns_constant_sequences(rng):
    X, y = _constant_windows(rng)
    config = GruClassifierConfig(hidden_size=8, hidden_layers=1, batch_size=32, steps=200, seed=2)
    model = train_gru_classifier(X, y, config, num_classes=2)
    predicted = np.argmax(gru_posteriors(model, X), axis=1)
    assert np.mean(predicted == y) >= 0.99


def test_untrained_gru_posteriors_sum_to_one(rng):
    X, y = _constant_windows(rng, per_class=5)
    model = train_gru_classifier(X, y, GruClassifierConfig(hidden_size=4, steps=0), num_classes=4)
    probs = gru_posteriors(model, X)
    assert probs.shape == (10, 4)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_majority_vote_examples():
    V, O = [0.9, 0.1, 0.0, 0.0], [0.2, 0.7, 0.1, 0.0]
    assert majority_vote([V, V, O]).class_index == 0
    assert majority_vote([O]).class_index == 1
    # one vote each; summed posterior 1.3 for V against 1.1 for O
    tied = majority_vote([[0.8, 0.2, 0.0, 0.0], [0.5, 0.9, 0.0, 0.0]])
    assert tied.class_index == 0
    with pytest.raises(DataError):
        majority_vote(np.zeros((0, 4)))


def test_majority_vote_ignores_window_order(rng):
    posteriors = rng.dirichlet(np.ones(4), size=7)
    expected = majority_vote(posteriors).class_index
    for _ in range(10):
        assert majority_vote(posteriors[rng.permutation(7)]).class_index == expected


def test_recording_prediction_uses_every_window(rng):
    X, y = _constant_windows(rng, per_class=5)
    model = train_gru_classifier(X, y, GruClassifierConfig(hidden_size=4, steps=5), num_classes=2)
    prediction = predict_recording(model, X[:3])
    assert prediction.class_index == majority_vote(gru_posteriors(model, X[:3])).class_index
    with pytest.raises(DataError):
        predict_recording(model, np.zeros((0, 5, 1)))


def test_confusion_matrix_counts():
    matrix = confusion_matrix([0, 1, 2, 3, 3], [0, 2, 2, 3, 0], 4)
    assert matrix.shape == (4, 4)
    assert matrix[1, 2] == 1 and matrix[3, 0] == 1
    assert matrix.trace() == 3


def test_classifier_files_round_trip(tmp_path, rng):
    X, y = _blobs(rng)
    svm = train_svm(X, y, C=1.0)
    loaded = load_classifier(save_classifier(svm, tmp_path / 'svm.json'))
    assert np.array_equal(svm_predict_batch(loaded, X), svm_predict_batch(svm, X))

    windows, labels = _constant_windows(rng, per_class=5)
    gru = train_gru_classifier(windows, labels, GruClassifierConfig(hidden_size=4, steps=3), num_classes=2)
    loaded_gru = load_classifier(save_classifier(gru, tmp_path / 'gru.json'))
    assert np.array_equal(gru_posteriors(loaded_gru, windows), gru_posteriors(gru, windows))
