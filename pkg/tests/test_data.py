"""Tests for data containers, mediator index sets, and residualization."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from medsel.data import DataError, Dataset, MediatorSet, ResidualizedData, load_csv, residualize


def write_csv(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


ROLES = {
    "treatment": "d",
    "outcome": "y",
    "mediators": ["m1", "m2", "m3"],
    "confounders": ["x1", "x2"],
}


class TestLoadCsv:
    def test_four_row_csv_maps_fields(self, tmp_path):
        path = write_csv(
            tmp_path,
            "d,x1,x2,m1,m2,m3,y\n"
            "0,0.1,0.2,1.0,2.0,3.0,0.5\n"
            "1,0.3,0.4,1.1,2.1,3.1,1.5\n"
            "0,0.5,0.6,1.2,2.2,3.2,0.7\n"
            "1,0.7,0.8,1.3,2.3,3.3,2.0\n",
        )
        data = load_csv(path, ROLES)
        assert (data.n, data.q, data.p) == (4, 2, 3)
        assert data.m_names == ("m1", "m2", "m3")
        np.testing.assert_array_equal(data.d, [0, 1, 0, 1])

    def test_non_binary_treatment_rejected(self, tmp_path):
        path = write_csv(
            tmp_path,
            "d,x1,x2,m1,m2,m3,y\n2,0.1,0.2,1,2,3,0.5\n0,0.3,0.4,1,2,3,1.5\n",
        )
        with pytest.raises(DataError, match="non-binary treatment"):
            load_csv(path, ROLES)

    def test_missing_value_names_the_row(self, tmp_path):
        path = write_csv(
            tmp_path,
            "d,x1,x2,m1,m2,m3,y\n0,0.1,0.2,1,2,3,0.5\n1,0.3,0.4,1,2,3,\n",
        )
        with pytest.raises(DataError, match="row 3"):
            load_csv(path, ROLES)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="no such file"):
            load_csv(tmp_path / "absent.csv", ROLES)

    def test_duplicate_role_rejected(self, tmp_path):
        path = write_csv(tmp_path, "d,y\n0,1\n")
        roles = {"treatment": "d", "outcome": "y", "mediators": ["d"]}
        with pytest.raises(DataError, match="duplicate role"):
            load_csv(path, roles)

    def test_no_confounders_allowed(self, tmp_path):
        path = write_csv(tmp_path, "d,m1,y\n0,1.0,0.5\n1,2.0,1.5\n")
        data = load_csv(path, {"treatment": "d", "outcome": "y", "mediators": ["m1"]})
        assert data.q == 0 and data.p == 1


class TestDataset:
    def test_row_count_mismatch(self):
        with pytest.raises(DataError, match="inconsistent row counts"):
            Dataset(d=[0, 1], x=np.zeros((3, 1)), m=np.zeros((2, 1)), y=[0.0, 1.0])

    def test_nan_rejected(self):
        with pytest.raises(DataError, match="non-finite"):
            Dataset(d=[0, 1], x=np.zeros((2, 1)), m=[[np.nan], [0.0]], y=[0.0, 1.0])

    def test_arrays_read_only(self):
        data = Dataset(d=[0, 1], x=np.zeros((2, 1)), m=np.ones((2, 2)), y=[0.0, 1.0])
        with pytest.raises(ValueError):
            data.m[0, 0] = 5.0


class TestMediatorSet:
    def test_to_z_index_examples(self):
        assert MediatorSet((1, 2, 3), 10).to_z_index() == (1, 2, 3, 4)
        assert MediatorSet((), 10).to_z_index() == (1,)
        assert MediatorSet((10,), 10).to_z_index() == (1, 11)

    def test_out_of_range(self):
        with pytest.raises(DataError):
            MediatorSet((11,), 10)
        with pytest.raises(DataError):
            MediatorSet((0,), 10)

    def test_column_helpers(self):
        ms = MediatorSet((2, 5), 6)
        np.testing.assert_array_equal(ms.z_cols(), [0, 2, 5])
        np.testing.assert_array_equal(ms.m_cols(), [1, 4])

    @given(st.sets(st.integers(1, 12)), st.sets(st.integers(1, 12)))
    def test_to_z_index_monotone(self, a, b):
        sa = MediatorSet(tuple(a), 12)
        sb = MediatorSet(tuple(a | b), 12)
        assert set(sa.to_z_index()) <= set(sb.to_z_index())
        assert 1 in sa.to_z_index()

    @given(st.sets(st.integers(1, 9)))
    def test_complement_round_trip(self, idx):
        ms = MediatorSet(tuple(idx), 9)
        assert ms.complement().complement() == ms


class FakeFit:
    def __init__(self, mu_y, mu_d, mu_m):
        self.mu_y_hat = mu_y
        self.mu_d_hat = mu_d
        self.mu_m_hat = mu_m


class TestResidualize:
    def test_exact_predictions_zero_residuals(self):
        data = Dataset(d=[1, 0], x=np.zeros((2, 1)), m=[[3.0], [4.0]], y=[1.0, 2.0])
        fit = FakeFit([1.0, 2.0], [0.5, 0.5], [[3.0], [4.0]])
        res = residualize(data, fit)
        np.testing.assert_array_equal(res.ry, [0.0, 0.0])
        np.testing.assert_array_equal(res.rd, [0.5, -0.5])
        np.testing.assert_array_equal(res.rm, [[0.0], [0.0]])

    def test_zero_predictions_identity(self, rng):
        data = Dataset(
            d=[0, 1, 1], x=rng.normal(size=(3, 2)), m=rng.normal(size=(3, 2)), y=[1.0, 2.0, 3.0]
        )
        fit = FakeFit(np.zeros(3), np.zeros(3), np.zeros((3, 2)))
        res = residualize(data, fit)
        np.testing.assert_array_equal(res.ry, data.y)
        np.testing.assert_array_equal(res.rm, data.m)

    def test_dimension_mismatch(self):
        data = Dataset(d=[0, 1], x=np.zeros((2, 1)), m=np.ones((2, 1)), y=[0.0, 1.0])
        with pytest.raises(DataError):
            residualize(data, FakeFit(np.zeros(3), np.zeros(2), np.zeros((2, 1))))

    @given(st.integers(0, 2**32 - 1))
    def test_linearity_reconstruction(self, seed):
        rng = np.random.default_rng(seed)
        n, p = 7, 3
        data = Dataset(
            d=rng.integers(0, 2, n),
            x=rng.normal(size=(n, 2)),
            m=rng.normal(size=(n, p)),
            y=rng.normal(size=n),
        )
        fit = FakeFit(rng.normal(size=n), rng.uniform(size=n), rng.normal(size=(n, p)))
        res = residualize(data, fit)
        np.testing.assert_allclose(res.ry + fit.mu_y_hat, data.y, atol=1e-12)
        np.testing.assert_allclose(res.rm + fit.mu_m_hat, data.m, atol=1e-12)

    def test_rz_first_column_is_rd(self, small_res):
        np.testing.assert_array_equal(small_res.rz[:, 0], small_res.rd)
        assert small_res.rz.shape == (small_res.n, small_res.p + 1)
