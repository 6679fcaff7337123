import math

import pytest

import safetynet as sn


@pytest.fixture(scope="module")
def trained():
    data = sn.synth_blobs(4, 80, 0.08, seed=7)
    train, _, test = sn.split(data, 0.6, 0.2, 0.2, seed=11)
    net = sn.train(sn.make_network([2, 32, 16, 4], seed=5), train, epochs=30, seed=3)
    return net, train, test


def test_blobs_shape():
    data = sn.synth_blobs(3, 10, 0.05, seed=1)
    assert len(data) == 30
    assert data.width == 2
    assert data.num_classes == 3
    assert all(0.0 <= v <= 1.0 for row in data.features for v in row)


def test_training_learns(trained):
    net, train, test = trained
    assert sn.accuracy(net, train) > 0.9
    assert net.layer_dims == [2, 32, 16, 4]


def test_checkpoint_round_trip(trained, tmp_path):
    net, _, _ = trained
    blob = sn.checkpoint_bytes(net)
    assert blob[:4] == b"SNET"
    assert sn.checkpoint_parse(blob) == net
    path = tmp_path / "m.snet"
    sn.checkpoint_save(net, path)
    assert path.read_bytes() == blob
    assert sn.checkpoint_load(path) == net


def test_corrupt_checkpoint_raises():
    with pytest.raises(sn.SafetyNetError):
        sn.checkpoint_parse(b"SNET\x01\x00")


def test_fast_sign_respects_budget(trained):
    net, _, test = trained
    x, y = test.features[0], test.labels[0]
    out = sn.attack(net, x, y, "fastsign:eps=0.05")
    assert out["linf_norm"] <= 0.05 + 1e-12
    assert out["label_orig"] == y


def test_confidence_ratio_values():
    assert sn.confidence_ratio([0.6, 0.15, 0.25]) == pytest.approx(0.6 ** -1 * 0.25)
    assert sn.confidence_ratio([0.6, 0.15, 0.15, 0.1]) == 0.25
    assert sn.confidence_ratio([1.0, 0.0]) == 0.0


def test_pipeline_and_evaluate(trained):
    net, train, test = trained
    pipe = sn.build_detector(net, train, "fastsign:eps=0.1", rejection_ratio=0.25)
    assert pipe.num_detectors == 1
    v = pipe.classify(test.features[0])
    assert v["reason"] in ("none", "detector", "confidence")
    rows = sn.evaluate(pipe, "fastsign:eps=0.1", test)
    for r in rows:
        cells = r["correct_undetected"] + r["correct_detected"] + r["wrong_undetected"] + r["wrong_detected"]
        assert cells == pytest.approx(1.0, abs=1e-9)


def test_type2_success_means_evaded(trained):
    net, train, test = trained
    pipe = sn.build_detector(net, train, "fastsign:eps=0.1")
    for i in range(5):
        r = sn.type2_attack(pipe, test.features[i], test.labels[i], eps=0.1)
        if r["success"]:
            assert r["verdict"]["label"] != test.labels[i]
            assert not r["verdict"]["rejected"]


def test_roc_hand_case():
    _, auc = sn.roc_auc([0.9, 0.8, 0.7, 0.1], [1, -1, 1, -1])
    assert auc == 0.75


def test_bars():
    assert sn.phi([0.3], 0, 0.3, 0.2) == 1.0
    spec = sn.BarSpec([0], [0.0], [0.25])
    other = sn.BarSpec([0], [1.0], [0.25])
    net = sn.build_bar_network(spec, 1)
    assert net.layer_dims == [1, 3, 1, 1]
    for x in (-0.3, -0.1, 0.0, 0.125, 0.2, 0.7):
        assert net.logits([x])[0] == pytest.approx(sn.bar([x], spec), abs=1e-12)
    f = lambda x: sn.bar(x, spec) + sn.bar(x, other)
    assert sn.count_components(f, 0.5, lo=-1.0, hi=2.0) == 2


def test_bad_attack_spec_raises():
    net = sn.make_network([2, 4, 2], seed=1)
    with pytest.raises(sn.SafetyNetError):
        sn.attack(net, [0.5, 0.5], 0, "nonsense")
