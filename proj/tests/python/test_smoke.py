import math

import numpy as np
import pytest

import manrec


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(7)


def test_unquantized_index_matches_exact_scan(rng):
    data = rng.normal(size=(400, 16))
    cfg = manrec.IndexConfig()
    cfg.use_pq = False
    cfg.nlist = 20
    cfg.seed = 3
    idx = manrec.Index()
    idx.fit(data, cfg)
    for i, row in enumerate(data):
        idx.add(row, i)
    assert idx.size == 400 and idx.dim == 16 and idx.nlist == 20
    for _ in range(25):
        q = rng.normal(size=16)
        ids, dists = idx.query(q, 10, nprobe=20)
        eids, edists = idx.exact_query(q, 10)
        assert ids.tolist() == eids.tolist()
        np.testing.assert_allclose(dists, edists, rtol=0, atol=1e-12)


def test_quantized_index_respects_payload_floor(rng):
    data = rng.normal(size=(600, 24))
    cfg = manrec.IndexConfig()
    cfg.m = 4
    cfg.seed = 5
    idx = manrec.Index()
    idx.fit(data, cfg)
    for i, row in enumerate(data):
        idx.add(row, i)
    ids, _ = idx.query(rng.normal(size=24), 50, nprobe=idx.nlist, min_payload=300)
    assert len(ids) == 50
    assert ids.min() >= 300
    assert idx.list_bytes() == 600 * (4 + 8)


def test_memory_predictions_are_distributions(rng):
    cfg = manrec.MemoryConfig()
    cfg.dim = 8
    store = manrec.MemoryStore(cfg)
    for i in range(300):
        store.insert(rng.normal(size=8), i % 12)
    assert store.live_count == 300
    items, probs = store.predict(rng.normal(size=8), 40)
    assert math.isclose(probs.sum(), 1.0, abs_tol=1e-9)
    assert set(items.tolist()) <= set(range(12))
    assert all(a < b for a, b in zip(items, items[1:]))

    store.rebuild_index()
    assert store.has_index
    items2, probs2 = store.predict(rng.normal(size=8), 40, nprobe=store.live_count)
    assert math.isclose(probs2.sum(), 1.0, abs_tol=1e-9)


def test_bounded_memory_overwrites_oldest(rng):
    cfg = manrec.MemoryConfig()
    cfg.dim = 4
    cfg.capacity = 50
    store = manrec.MemoryStore(cfg)
    for i in range(120):
        store.insert(rng.normal(size=4), i)
    assert store.live_count == 50
    assert store.total_inserted == 120
    assert store.value_of(119) == 119


def test_recommender_round_trip():
    cfg = manrec.RecommenderConfig()
    cfg.embed_dim = 6
    cfg.hidden_dim = 10
    cfg.epochs = 2
    cfg.batch_size = 16
    cfg.seed = 11
    model = manrec.Recommender([f"item{i}" for i in range(9)], cfg)
    assert model.n_items == 9 and model.hidden_dim == 10

    sessions = [[i % 9, (i + 1) % 9, (i + 2) % 9] for i in range(40)]
    log = model.pretrain(sessions, sessions[:5])
    assert len(log) == 2
    assert log[-1][1] <= log[0][1]

    p = model.predict([0, 1])
    assert p.shape == (9,) and math.isclose(p.sum(), 1.0, abs_tol=1e-9)
    h = model.encode([0, 1, 2])
    assert h.shape == (10,)
    np.testing.assert_allclose(model.predict_from_context(h), model.predict([0, 1, 2]))

    new_id = model.ensure_item("later")
    assert new_id == 9 and model.n_items == 10
    assert model.item_id("later") == new_id
    assert model.item_of(new_id) == "later"
    assert model.item_id("missing") is None

    before = model.predict([0, 1])
    loss = model.incremental_update([([0, 1], 2)], 0.0)
    assert loss > 0
    np.testing.assert_array_equal(model.predict([0, 1]), before)
    model.incremental_update([([0, 1], 2)], 0.05)
    after = model.predict([0, 1])
    assert after[2] > before[2]


def test_gate_and_blend(rng):
    gate = manrec.Gate(input_dim=10, hidden_dim=8, seed=21)
    w = gate.weight(rng.normal(size=10))
    assert 0.0 < w < 1.0

    pn = np.full(5, 0.2)
    items = np.array([1, 3], dtype=np.int32)
    probs = np.array([0.25, 0.75])
    blended = manrec.combine(pn, items, probs, 0.5)
    assert math.isclose(blended.sum(), 1.0, abs_tol=1e-12)
    assert math.isclose(blended[3], 0.5 * 0.2 + 0.5 * 0.75, abs_tol=1e-12)
    np.testing.assert_array_equal(manrec.combine(pn, items, probs, 1.0), pn)

    assert manrec.rank_of(blended, 3) == 1
    hit, rr = manrec.rank_metrics(1, 5)
    assert hit == 1.0 and rr == 1.0
    assert manrec.kde_kernel(0.0) == 1.0
