import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualview.data import (
    Candidate,
    CandidateSet,
    SyntheticSpec,
    build_candidate_set,
    cosine_matrix,
    generate_synthetic,
    load_dataset,
    mine_hard_negatives,
    read_binary_cache,
    read_dataset,
    stratified_mix,
    write_binary_cache,
    write_dataset,
)
from dualview.errors import ConfigError, InputError, LoadError


def random_sets(rng, count=5, n=4, dim=8):
    return [
        CandidateSet(f"q{i}", rng.standard_normal(dim), [f"q{i}-d{j}" for j in range(n)],
                     rng.standard_normal((n, dim)), rng.integers(0, 2, n))
        for i in range(count)
    ]


def record(dim=4, n=2, label=1):
    return {"query_id": "q", "query_embedding": [0.5] * dim,
            "candidates": [{"doc_id": f"d{j}", "embedding": [0.25] * dim, "label": label}
                           for j in range(n)]}


class TestJsonl:
    def test_empty_file(self, tmp_path):
        (tmp_path / "e.jsonl").write_text("")
        assert list(load_dataset(tmp_path / "e.jsonl")) == []

    def test_ten_candidates(self, tmp_path):
        (tmp_path / "a.jsonl").write_text(json.dumps(record(dim=6, n=10)) + "\n")
        (cs,) = load_dataset(tmp_path / "a.jsonl")
        assert cs.n == 10 and cs.embed_dim == 6

    def test_wrong_width_names_line_and_width(self, tmp_path):
        lines = [json.dumps(record(dim=768)), json.dumps(record(dim=769))]
        (tmp_path / "a.jsonl").write_text("\n".join(lines) + "\n")
        with pytest.raises(LoadError, match=r"line 2.*768"):
            list(load_dataset(tmp_path / "a.jsonl"))

    @pytest.mark.parametrize("text,pattern", [
        ("{not json", "malformed"),
        (json.dumps(record(label=2)), "label"),
        (json.dumps(record(n=11)), "candidates"),
        (json.dumps({"query_id": "q"}), "missing"),
    ])
    def test_load_errors(self, tmp_path, text, pattern):
        (tmp_path / "a.jsonl").write_text(text + "\n")
        with pytest.raises(LoadError, match=rf"line 1: .*{pattern}"):
            list(load_dataset(tmp_path / "a.jsonl"))

    def test_require_gold(self, tmp_path):
        (tmp_path / "a.jsonl").write_text(json.dumps(record(label=0)) + "\n")
        assert len(list(load_dataset(tmp_path / "a.jsonl"))) == 1
        with pytest.raises(LoadError, match="gold"):
            list(load_dataset(tmp_path / "a.jsonl", require_gold=True))

    def test_round_trip_is_byte_identical(self, tmp_path, rng):
        sets = random_sets(rng)
        write_dataset(tmp_path / "a.jsonl", sets)
        back = read_dataset(tmp_path / "a.jsonl")
        assert all(a.same_as(b) for a, b in zip(sets, back))
        write_dataset(tmp_path / "b.jsonl", back)
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_one_object_per_line(self, tmp_path, rng):
        write_dataset(tmp_path / "a.jsonl", random_sets(rng, count=3))
        lines = (tmp_path / "a.jsonl").read_text().splitlines()
        assert len(lines) == 3
        assert all(set(json.loads(line)) == {"query_id", "query_embedding", "candidates"}
                   for line in lines)


class TestBinaryCache:
    def test_round_trip(self, tmp_path, rng):
        sets = random_sets(rng)
        write_binary_cache(tmp_path / "a.dvrk", sets)
        back = read_dataset(tmp_path / "a.dvrk")
        assert all(a.same_as(b) for a, b in zip(sets, back))
        write_binary_cache(tmp_path / "b.dvrk", back)
        assert (tmp_path / "a.dvrk").read_bytes() == (tmp_path / "b.dvrk").read_bytes()

    def test_truncated(self, tmp_path, rng):
        write_binary_cache(tmp_path / "a.dvrk", random_sets(rng))
        data = (tmp_path / "a.dvrk").read_bytes()
        (tmp_path / "b.dvrk").write_bytes(data[:-3])
        with pytest.raises(LoadError):
            read_binary_cache(tmp_path / "b.dvrk")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "a.dvrk").write_bytes(b"nope")
        with pytest.raises(LoadError):
            read_binary_cache(tmp_path / "a.dvrk")


class TestCandidateSet:
    def test_from_candidates(self):
        cs = CandidateSet.from_candidates("q", [1.0, 0.0], [Candidate("a", [0.0, 1.0], 1),
                                                            Candidate("b", [1.0, 1.0], 0)])
        assert cs.doc_ids == ["a", "b"]
        assert cs.gold_indices() == {0}
        assert [c.doc_id for c in cs.candidates] == ["a", "b"]

    def test_validate(self, rng):
        (cs,) = random_sets(rng, count=1)
        cs.validate(8)
        with pytest.raises(InputError):
            cs.validate(9)
        with pytest.raises(InputError):
            cs.validate(8, max_candidates=3)


class TestSynthetic:
    def test_zero_noise_golds_equal_query(self):
        sets = generate_synthetic(SyntheticSpec("planted_similarity", 20, 6, 16, 0.0))
        for cs in sets:
            sims = cosine_matrix(cs.query_embedding[None], cs.doc_embeddings)[0]
            for i in cs.gold_indices():
                assert sims[i] == pytest.approx(1.0, abs=1e-6)

    def test_complementary_geometry(self):
        spec = SyntheticSpec("complementary_pair", 200, 6, 64, 0.0, distractor_sigma=0.05)
        gold_sims, copy_sims = [], []
        for cs in generate_synthetic(spec):
            sims = cosine_matrix(cs.query_embedding[None], cs.doc_embeddings)[0]
            golds = cs.gold_indices()
            gold_sims += [sims[i] for i in golds]
            copy_sims += [s for i, s in enumerate(sims) if i not in golds and s > max(gold_sims[-2:])]
        np.testing.assert_allclose(gold_sims, math.cos(math.pi / 4), atol=1e-5)
        # three query copies outrank both golds in every set
        assert len(copy_sims) == 3 * 200

    def test_complementary_golds_orthogonal(self):
        for cs in generate_synthetic(SyntheticSpec("complementary_pair", 30, 6, 32, 0.0)):
            i, j = sorted(cs.gold_indices())
            assert cosine_matrix(cs.doc_embeddings[[i]], cs.doc_embeddings[[j]])[0, 0] == \
                pytest.approx(0.0, abs=1e-6)

    def test_same_seed_same_bytes(self, tmp_path):
        spec = SyntheticSpec("complementary_pair", 10, 6, 16, 0.1, seed=7)
        write_dataset(tmp_path / "a.jsonl", generate_synthetic(spec))
        write_dataset(tmp_path / "b.jsonl", generate_synthetic(spec))
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_invalid_specs(self):
        with pytest.raises(ConfigError):
            SyntheticSpec("mystery")
        with pytest.raises(ConfigError):
            SyntheticSpec("complementary_pair", n_gold=3)
        with pytest.raises(ConfigError):
            SyntheticSpec(n_gold=7, n_candidates=6)

    @settings(max_examples=25, deadline=None)
    @given(st.sampled_from(["planted_similarity", "complementary_pair"]),
           st.integers(3, 10), st.integers(0, 1000))
    def test_generated_sets_valid(self, mode, n, seed):
        for cs in generate_synthetic(SyntheticSpec(mode, 5, n, 16, 0.3, seed=seed)):
            cs.validate(16, max_candidates=10, require_gold=True)
            assert cs.labels.sum() == 2


class TestMining:
    def test_identical_distractor_first(self, rng):
        gold = rng.standard_normal((1, 8))
        pool = np.concatenate([rng.standard_normal((5, 8)), gold * 3])
        mined = mine_hard_negatives(gold, pool, 2)
        assert mined.indices[0, 0] == 5
        assert mined.similarities[0, 0] == pytest.approx(1.0)

    def test_orthogonal_pool_keeps_index_order(self):
        gold = np.eye(6)[:1]
        mined = mine_hard_negatives(gold, np.eye(6)[1:], 3)
        np.testing.assert_array_equal(mined.indices, [[0, 1, 2]])
        np.testing.assert_array_equal(mined.similarities, 0.0)

    def test_matches_exhaustive_scan(self, rng):
        golds, pool = rng.standard_normal((7, 12)), rng.standard_normal((40, 12))
        mined = mine_hard_negatives(golds, pool, 4)
        for g in range(7):
            sims = []
            for j in range(40):
                dot = sum(a * b for a, b in zip(golds[g], pool[j]))
                sims.append((-dot / (np.linalg.norm(golds[g]) * np.linalg.norm(pool[j])), j))
            expected = [j for _, j in sorted(sims)[:4]]
            assert mined.indices[g].tolist() == expected
            assert all(np.diff(mined.similarities[g]) <= 0)

    def test_k_too_large_truncates(self, rng):
        with pytest.warns(UserWarning, match="truncating"):
            mined = mine_hard_negatives(rng.standard_normal((2, 4)), rng.standard_normal((3, 4)), 5)
        assert mined.indices.shape == (2, 3)


class TestBuild:
    def _docs(self, rng, prefix, count):
        return [(f"{prefix}{i}", rng.standard_normal(4)) for i in range(count)]

    def test_six(self, rng):
        cs = build_candidate_set("q", rng.standard_normal(4), self._docs(rng, "g", 2),
                                 self._docs(rng, "n", 4), 6)
        assert cs.n == 6 and cs.labels.sum() == 2

    def test_ten_draws_eight_negatives(self, rng):
        cs = build_candidate_set("q", rng.standard_normal(4), self._docs(rng, "g", 2),
                                 self._docs(rng, "n", 12), 10)
        assert sum(d.startswith("n") for d in cs.doc_ids) == 8
        assert {f"n{i}" for i in range(8)} <= set(cs.doc_ids)

    def test_seeded_order(self, rng):
        args = ("q", rng.standard_normal(4), self._docs(rng, "g", 2), self._docs(rng, "n", 4), 6)
        assert build_candidate_set(*args, seed=3).doc_ids == build_candidate_set(*args, seed=3).doc_ids

    def test_insufficient(self, rng):
        with pytest.raises(InputError):
            build_candidate_set("q", rng.standard_normal(4), self._docs(rng, "g", 2),
                                self._docs(rng, "n", 2), 6)


class TestStratifiedMix:
    def test_counts_and_prefix_proportions(self):
        sources = {"a": list(range(100)), "b": [f"b{i}" for i in range(100)]}
        mixed = stratified_mix(sources, {"a": 60, "b": 20})
        assert len(mixed) == 80
        prefix = mixed[:40]
        assert sum(isinstance(x, int) for x in prefix) == 30

    def test_seeded(self):
        sources = {"a": list(range(50)), "b": list(range(50, 90))}
        assert stratified_mix(sources, {"a": 10, "b": 5}) == stratified_mix(sources, {"a": 10, "b": 5})
        assert stratified_mix(sources, {"a": 10, "b": 5}, seed=1) != stratified_mix(sources, {"a": 10, "b": 5})

    def test_too_many_requested(self):
        with pytest.raises(ConfigError):
            stratified_mix({"a": [1, 2]}, {"a": 3})
