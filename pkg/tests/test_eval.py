import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lacos.data import StsRecord
from lacos.errors import DegenerateError
from lacos.evaluation import EvalReport, score_embeddings, spearman, standardize_losses, sts_eval


def brute_force_spearman(x, y):
    """Ranks by counting smaller and equal elements, then textbook Pearson."""
    def ranks(v):
        return [sum(1 for w in v if w < a) + (sum(1 for w in v if w == a) + 1) / 2 for a in v]
    rx, ry = ranks(list(x)), ranks(list(y))
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    vx = sum((a - mx) ** 2 for a in rx)
    vy = sum((b - my) ** 2 for b in ry)
    return cov / (vx * vy) ** 0.5


class TestSpearman:
    def test_examples(self):
        assert spearman([1, 2, 3], [10, 20, 30]) == 1.0
        assert spearman([1, 2, 3], [3, 2, 1]) == -1.0
        assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == 0.8

    def test_ties(self):
        assert spearman([1, 1, 2], [1, 2, 3]) == pytest.approx(brute_force_spearman([1, 1, 2], [1, 2, 3]))

    def test_errors(self):
        with pytest.raises(DegenerateError):
            spearman([1], [2])
        with pytest.raises(DegenerateError):
            spearman([1, 1, 1], [1, 2, 3])
        with pytest.raises(ValueError):
            spearman([1, 2], [1, 2, 3])

    def test_brute_force_agreement(self, rng):
        for _ in range(200):
            n = int(rng.integers(2, 30))
            x, y = rng.integers(0, 5, n), rng.integers(0, 5, n)
            if len(set(x)) < 2 or len(set(y)) < 2:
                continue
            assert abs(spearman(x, y) - brute_force_spearman(x, y)) <= 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(-1000, 1000), min_size=2, max_size=20, unique=True), st.integers(0, 1000))
    def test_monotone_invariance(self, x, seed):
        y = np.random.default_rng(seed).permutation(len(x)).astype(float)
        x = np.array(x, dtype=float)
        base = spearman(x, y)
        assert spearman(x ** 3 + x, y) == pytest.approx(base, abs=1e-12)
        assert spearman(x, 3 * y + 7) == pytest.approx(base, abs=1e-12)
        assert spearman(x, x) == pytest.approx(1.0)


def bag_of_words(vocab):
    index = {w: i for i, w in enumerate(vocab)}

    def embed(texts):
        out = np.zeros((len(texts), len(vocab)))
        for r, t in enumerate(texts):
            for w in t.split():
                out[r, index[w]] += 1
        return out
    return embed


class TestStsEval:
    def bow_records(self, rng, n=60, length=6):
        words = [f"w{i}" for i in range(40)]
        recs = []
        for _ in range(n):
            s1 = list(rng.choice(words, size=length, replace=False))
            k = int(rng.integers(0, length + 1))
            rest = [w for w in words if w not in s1]
            s2 = s1[:k] + list(rng.choice(rest, size=length - k, replace=False))
            # distinct tokens, equal length: cosine = k/L and Jaccard = k/(2L-k) are both increasing in k
            recs.append(StsRecord(" ".join(s1), " ".join(s2), 5 * k / (2 * length - k)))
        return words, recs

    def test_bow_oracle(self, rng):
        words, recs = self.bow_records(rng)
        report = sts_eval(bag_of_words(words), recs)
        assert report.rho["cosine"] == pytest.approx(1.0, abs=1e-12)
        assert report.max_rho == pytest.approx(1.0, abs=1e-12)
        assert all(report.max_rho >= v for v in report.rho.values() if v is not None)

    def test_duplication_invariance(self, rng):
        words, recs = self.bow_records(rng, n=30)
        recs = [StsRecord(r.sentence1, r.sentence2, float(rng.uniform(0, 5))) for r in recs]
        once = sts_eval(bag_of_words(words), recs)
        twice = sts_eval(bag_of_words(words), recs + recs)
        for k in once.rho:
            assert twice.rho[k] == pytest.approx(once.rho[k], abs=1e-12)
        assert twice.n_pairs == 2 * once.n_pairs

    def test_degenerate_gold(self, rng):
        E1, E2 = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
        report = score_embeddings(E1, E2, [2.0] * 5)
        assert report.is_degenerate and report.max_rho is None
        assert sorted(report.degenerate) == ["cosine", "dot", "euclidean", "manhattan"]
        assert report.to_dict()["max"] is None

    def test_constant_similarity_excluded(self, rng):
        E1 = rng.standard_normal((6, 3))
        report = score_embeddings(E1, E1 * 2, rng.uniform(0, 5, 6))
        assert "cosine" in report.degenerate
        assert report.max_rho is not None

    def test_needs_two_records(self):
        with pytest.raises(DegenerateError):
            sts_eval(lambda t: np.ones((len(t), 2)), [StsRecord("a", "b", 1.0)])

    def test_report_json(self, rng):
        report = score_embeddings(rng.standard_normal((8, 3)), rng.standard_normal((8, 3)),
                                  rng.uniform(0, 5, 8))
        d = report.to_dict()
        assert set(d) == {"spearman", "max", "n", "degenerate"}
        assert set(d["spearman"]) == {"cosine", "manhattan", "euclidean", "dot"}
        assert EvalReport.from_dict(d) == report
        d["max"] = 2.0
        with pytest.raises(ValueError):
            EvalReport.from_dict(d)


class TestStandardize:
    def test_examples(self):
        assert standardize_losses([2, 4]) == [0.0, 1.0]
        assert standardize_losses([1, 2, 3]) == [0.0, 0.5, 1.0]
        with pytest.raises(DegenerateError):
            standardize_losses([3, 3])
        with pytest.raises(DegenerateError):
            standardize_losses([3])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=10).filter(lambda x: len(set(x)) > 1))
    def test_endpoints(self, x):
        out = standardize_losses(x)
        assert min(out) == 0.0 and max(out) == 1.0
