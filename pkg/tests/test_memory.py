import numpy as np
import pytest

from fsdrive.memory import EmbeddingError, HashEmbedding, MemoryItem, MemoryStore, cosine


def dialogue(i):
    return (
        {"stage1": f"scene {i} with a vehicle ahead", "stage2": f"analysis {i}"},
        {"stage1": f"description {i}", "stage2": '{"scene":["others"]}'},
    )


# ---------------------------------------------------------------------------
# hash embedding mock


def test_embedding_deterministic():
    emb = HashEmbedding()
    a = emb.embed("a red car approaching the intersection")
    b = emb.embed("a red car approaching the intersection")
    assert np.array_equal(a, b)


def test_embedding_unit_norm():
    emb = HashEmbedding()
    for text in ("one", "two words here", "a much longer descriptive sentence about traffic"):
        assert np.linalg.norm(emb.embed(text)) == pytest.approx(1.0, abs=1e-9)


def test_embedding_unrelated_texts_not_identical():
    emb = HashEmbedding()
    pairs = [
        ("vehicle on the left lane", "pedestrian crossing at the junction"),
        ("red light ahead stop now", "empty highway cruising fast"),
        ("roundabout entry yield", "parking lot exit ramp"),
    ]
    for a, b in pairs:
        assert cosine(emb.embed(a), emb.embed(b)) < 0.99


def test_embedding_rejects_empty():
    emb = HashEmbedding()
    with pytest.raises(EmbeddingError):
        emb.embed("   ")


def test_cosine_bounds_and_symmetry():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a, b = rng.normal(size=8), rng.normal(size=8)
        c = cosine(a, b)
        assert -1.0 - 1e-12 <= c <= 1.0 + 1e-12
        assert c == pytest.approx(cosine(b, a))


# ---------------------------------------------------------------------------
# retrieval


def make_store_with_vectors(vectors):
    store = MemoryStore(HashEmbedding())
    for i, v in enumerate(vectors):
        human, answer = dialogue(i)
        item = MemoryItem(
            item_id=f"m{i}", human=human, answer=answer, embedding=np.asarray(v, float)
        )
        store.items.append(item)
    return store


def test_retrieve_orthogonal_case():
    store = make_store_with_vectors([[1.0, 0.0], [0.0, 1.0]])
    got = store.retrieve(np.array([1.0, 0.0]), 1)
    assert [i.item_id for i in got] == ["m0"]


def test_retrieve_k_zero_and_oversized():
    store = make_store_with_vectors([[1.0, 0.0], [0.0, 1.0]])
    assert store.retrieve(np.array([1.0, 0.0]), 0) == []
    assert len(store.retrieve(np.array([1.0, 0.0]), 10)) == 2


def test_retrieve_matches_bruteforce():
    rng = np.random.default_rng(7)
    vecs = rng.normal(size=(1000, 16))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    store = make_store_with_vectors(vecs)
    for _ in range(20):
        q = rng.normal(size=16)
        k = int(rng.integers(1, 20))
        got = [i.item_id for i in store.retrieve(q, k)]
        sims = vecs @ (q / np.linalg.norm(q))
        want = [f"m{i}" for i in sorted(range(1000), key=lambda i: (-sims[i], -i))[:k]]
        assert got == want


def test_retrieve_tie_break_newest_first():
    store = make_store_with_vectors([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    got = store.retrieve(np.array([1.0, 0.0]), 2)
    assert [i.item_id for i in got] == ["m1", "m0"]


# ---------------------------------------------------------------------------
# recording and persistence


def test_record_then_self_retrieve():
    store = MemoryStore(HashEmbedding())
    human, answer = dialogue(0)
    item_id = store.record(human, answer, tags=("intersection",))
    got = store.retrieve_text(human["stage1"], 1)
    assert got[0].item_id == item_id
    assert got[0].tags == ("intersection",)


def test_record_deduplicates_identical_content():
    store = MemoryStore(HashEmbedding())
    human, answer = dialogue(1)
    id1 = store.record(human, answer)
    id2 = store.record(human, answer)
    assert id1 == id2
    assert len(store) == 1


def test_record_requires_both_stages():
    store = MemoryStore(HashEmbedding())
    with pytest.raises(ValueError):
        store.record({"stage1": "x", "stage2": ""}, {"stage1": "y", "stage2": "z"})


def test_persistence_roundtrip(tmp_path):
    path = tmp_path / "memory.jsonl"
    store = MemoryStore(HashEmbedding(), path=path)
    ids = [store.record(*dialogue(i), tags=(f"t{i}",)) for i in range(5)]

    reloaded = MemoryStore(HashEmbedding(), path=path)
    assert [i.item_id for i in reloaded.items] == ids
    for a, b in zip(store.items, reloaded.items):
        assert np.array_equal(a.embedding, b.embedding)  # bitwise
        assert a.human == b.human and a.answer == b.answer and a.tags == b.tags

    q = HashEmbedding().embed("scene 3 with a vehicle ahead")
    before = [i.item_id for i in store.retrieve(q, 3)]
    after = [i.item_id for i in reloaded.retrieve(q, 3)]
    assert before == after


def test_reload_continues_dedup(tmp_path):
    path = tmp_path / "memory.jsonl"
    store = MemoryStore(HashEmbedding(), path=path)
    store.record(*dialogue(0))
    reloaded = MemoryStore(HashEmbedding(), path=path)
    reloaded.record(*dialogue(0))
    assert len(reloaded) == 1


def test_unit_norm_enforced():
    with pytest.raises(ValueError, match="unit-norm"):
        MemoryItem(
            item_id="x",
            human={"stage1": "a", "stage2": "b"},
            answer={"stage1": "c", "stage2": "d"},
            embedding=np.array([2.0, 0.0]),
        )


def test_cli_memory_export_import_roundtrip(tmp_path):
    from fsdrive.cli import main

    exported = tmp_path / "exported.jsonl"
    assert main(["memory-export", "--store", "builtin", "--out", str(exported)]) == 0
    merged = tmp_path / "merged.jsonl"
    assert main(["memory-import", "--src", str(exported), "--store", str(merged)]) == 0
    first = MemoryStore(HashEmbedding(), path=merged)
    n = len(first)
    assert n > 0
    # importing again adds nothing
    assert main(["memory-import", "--src", str(exported), "--store", str(merged)]) == 0
    assert len(MemoryStore(HashEmbedding(), path=merged)) == n
