import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varsel.metrics import EvalRecord, MetricsConfig, evaluate
from varsel.mixture import DEFAULT_ALPHAS, MixtureSpec, alpha_sweep, mix_indices, mix_records, resolve_size
from varsel.model import Domain


def pool(n, domain, acc, prefix):
    rng = np.random.default_rng(len(prefix) + n)
    return [EvalRecord(f"{prefix}{i}", float(rng.uniform()), acc, 0, domain=domain) for i in range(n)]


ID = pool(200, Domain.ID, 1.0, "id")
OOD = pool(200, Domain.OOD, 0.0, "ood")


class TestMixRecords:
    def test_half_half(self):
        mixed = mix_records(ID, OOD, MixtureSpec(0.5, seed=3, target_size=100))
        assert len(mixed) == 100
        assert sum(r.domain is Domain.OOD for r in mixed) == 50

    def test_boundaries_pure(self):
        assert all(r.domain is Domain.ID for r in mix_records(ID, OOD, MixtureSpec(0.0, target_size=150)))
        assert all(r.domain is Domain.OOD for r in mix_records(ID, OOD, MixtureSpec(1.0, target_size=150)))
        assert all(r.domain is Domain.ID for r in mix_records(ID, [], MixtureSpec(0.0)))

    def test_without_replacement(self):
        mixed = mix_records(ID, OOD, MixtureSpec(0.33, seed=1, target_size=250))
        assert len({r.id for r in mixed}) == 250

    def test_seed_determinism(self):
        a = mix_records(ID, OOD, MixtureSpec(0.67, seed=5, target_size=90))
        b = mix_records(ID, OOD, MixtureSpec(0.67, seed=5, target_size=90))
        c = mix_records(ID, OOD, MixtureSpec(0.67, seed=6, target_size=90))
        assert [r.id for r in a] == [r.id for r in b]
        assert [r.id for r in a] != [r.id for r in c]

    def test_pool_too_small(self):
        with pytest.raises(ValueError, match="OOD"):
            mix_records(ID[:10], OOD[:10], MixtureSpec(0.5, target_size=100))

    def test_max_balanced_size(self):
        # 60 ID, 40 OOD at alpha 0.5: n = 81 takes floor(40.5) = 40 OOD and 41 ID; n = 82 needs 41 OOD
        assert resolve_size(MixtureSpec(0.5), 60, 40) == 81
        assert resolve_size(MixtureSpec(0.0), 60, 40) == 60
        assert resolve_size(MixtureSpec(1.0), 60, 40) == 40

    @settings(max_examples=60)
    @given(alpha=st.floats(0, 1), n=st.integers(1, 150), seed=st.integers(0, 1000))
    def test_exact_composition(self, alpha, n, seed):
        is_ood, index = mix_indices(200, 200, MixtureSpec(alpha, seed, n))
        assert is_ood.sum() == int(np.floor(alpha * n))
        assert len(set(index[is_ood])) == is_ood.sum()
        assert len(set(index[~is_ood])) == (~is_ood).sum()

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            MixtureSpec(1.5)
        with pytest.raises(ValueError):
            MixtureSpec(0.5, target_size="all")
        with pytest.raises(ValueError):
            MixtureSpec(0.5, target_size=0)


class TestAlphaSweep:
    def test_alpha_zero_is_raw_id(self):
        rows = alpha_sweep(ID, OOD, [0.0], seed=0, target_size=len(ID))
        raw = evaluate({"mean": ID})
        got = {r["metric"]: r["value"] for r in rows}
        for metric, value in raw.items():
            assert got[metric] == pytest.approx(value, abs=1e-12, nan_ok=True)

    def test_accuracy_between_endpoints(self):
        rows = alpha_sweep(ID, OOD, [0.0, 0.5, 1.0], MetricsConfig(metrics=("Acc",)), seed=2, target_size=200)
        acc = {r["alpha"]: r["value"] for r in rows}
        assert acc[1.0] <= acc[0.5] <= acc[0.0]
        assert acc[0.5] == pytest.approx(50.0)

    def test_duplicate_alphas_identical(self):
        rows = alpha_sweep(ID, OOD, [0.33, 0.33], seed=1)
        half = len(rows) // 2
        assert [r["value"] for r in rows[:half]] == [r["value"] for r in rows[half:]]

    def test_one_row_per_alpha_metric(self):
        rows = alpha_sweep(ID, OOD)
        assert len(rows) == len(DEFAULT_ALPHAS) * 7
        assert {r["selector"] for r in rows} == {"record"}

    def test_routed_pools(self):
        id_scored = {"mean": ID, "mean_minus_std": ID}
        ood_scored = {"mean": OOD, "mean_minus_std": OOD}
        rows = alpha_sweep(id_scored, ood_scored, [0.5], seed=0)
        sel = {r["metric"]: r["selector"] for r in rows}
        assert sel["C@1"] == "mean_minus_std" and sel["ECE"] == "mean"
