import numpy as np
import pytest

from core.bath import build_eta_table, truncate_eta
from core.ensemble import (
    AMPLITUDE_BYTES,
    EnsembleBudgetError,
    InfluenceHistoryError,
    Mask,
    PathEnsemble,
    decode_pair,
    drop_exact_zeros,
    drop_smallest,
    encode_keys,
    encode_pair,
    filter_paths,
    influence_functional,
    influence_weight,
    merge_by_mask,
    mirror_codes,
    pack_codes,
    readout_weight,
    row_exponent,
)
from core.models import Axis, DomainError, ResourceLimitError
from tests.conftest import DT


def make_ensemble(z_rows, amplitudes, readout=None, mask=Mask((0,))):
    z = np.array(z_rows, dtype=np.uint8)
    x = np.zeros((z.shape[0], 0), dtype=np.uint8)
    amps = np.array(amplitudes, dtype=complex)
    return PathEnsemble(
        step=1,
        z_history=z,
        x_history=x,
        amplitudes=amps,
        readout=amps.copy() if readout is None else np.array(readout, dtype=complex),
        keys=encode_keys(z, x, mask, None, z.shape[1], 0),
    )


class TestCoordinates:
    def test_pair_codes(self):
        assert encode_pair(1, 1) == 0
        assert encode_pair(1, -1) == 1
        assert encode_pair(-1, 1) == 2
        assert encode_pair(-1, -1) == 3
        for code in range(4):
            assert encode_pair(*decode_pair(code)) == code

    def test_pair_domain(self):
        with pytest.raises(DomainError):
            encode_pair(0, 1)

    def test_pack_order(self):
        packed = pack_codes(np.array([[1, 2]], dtype=np.uint8))
        assert packed.shape == (1, 1)
        assert int(packed[0, 0]) == (1 << 62) | (2 << 60)

    def test_pack_spills_into_second_word(self):
        columns = np.zeros((2, 33), dtype=np.uint8)
        columns[1, 32] = 3
        packed = pack_codes(columns)
        assert packed.shape == (2, 2)
        assert int(packed[1, 1]) == 3 << 62
        assert int(packed[0, 1]) == 0


class TestMask:
    def test_uniform(self):
        assert Mask.uniform(3, Axis.X).lags == (0, 1, 2)
        assert len(Mask.uniform(4)) == 4

    @pytest.mark.parametrize("lags", [(), (1, 2), (0, 2, 2), (0, 3, 1)])
    def test_invalid(self, lags):
        with pytest.raises(DomainError):
            Mask(lags)

    def test_window(self):
        Mask((0, 2)).validate_window(3)
        with pytest.raises(DomainError):
            Mask((0, 3)).validate_window(3)

    def test_keys_ignore_lags_outside_mask(self):
        z = np.array([[1, 0, 2], [1, 3, 2], [1, 0, 3]], dtype=np.uint8)
        keys = encode_keys(z, np.zeros((3, 0), dtype=np.uint8), Mask((0, 2)), None, 3, 0)
        assert np.array_equal(keys[0], keys[1])
        assert not np.array_equal(keys[0], keys[2])

    def test_unreached_lags_encode_as_zero(self):
        short = np.array([[2]], dtype=np.uint8)
        padded = np.array([[2, 0, 0]], dtype=np.uint8)
        empty = np.zeros((1, 0), dtype=np.uint8)
        assert np.array_equal(
            encode_keys(short, empty, None, None, 3, 0), encode_keys(padded, empty, None, None, 3, 0)
        )


class TestMerge:
    def test_sums_and_picks_largest_member(self):
        ens = make_ensemble([[0, 1], [0, 2], [0, 3], [1, 0]], [0.1, -0.5, 0.5j, 2.0], [1, 2, 3, 4])
        merged = merge_by_mask(ens)
        assert len(merged) == 2
        group = int(np.flatnonzero(merged.z_history[:, 0] == 0)[0])
        assert merged.amplitudes[group] == pytest.approx(0.1 - 0.5 + 0.5j)
        assert merged.readout[group] == pytest.approx(6.0)
        # |-0.5| ties |0.5j|; [0, 2] mirrors to [0, 1], below [0, 3]
        assert merged.z_history[group].tolist() == [0, 2]

    def test_ties_go_to_smaller_mirror_canonical_history(self):
        ens = make_ensemble([[0, 1, 3], [0, 2, 0]], [0.5, -0.5], mask=Mask((0,)))
        merged = merge_by_mask(ens)
        assert merged.z_history.tolist() == [[0, 2, 0]]

    def test_mirrored_keys_merge_to_mirrored_paths(self):
        rng = np.random.default_rng(11)
        z = rng.integers(0, 4, size=(400, 4)).astype(np.uint8)
        amps = rng.choice([1.0, -1.0, 1j, -1j], size=400) * rng.choice([0.5, 0.25], size=400)
        mask = Mask((0, 2))
        merged = merge_by_mask(make_ensemble(z, amps, mask=mask))
        mirrored = merge_by_mask(make_ensemble(mirror_codes(z), np.conj(amps), mask=mask))
        lookup = {tuple(row[[0, 2]].tolist()): i for i, row in enumerate(mirrored.z_history)}
        checked = 0
        for i, row in enumerate(merged.z_history):
            key = row[[0, 2]]
            if not np.any((key == 1) | (key == 2)):
                continue
            j = lookup[tuple(mirror_codes(key).tolist())]
            np.testing.assert_array_equal(mirrored.z_history[j], mirror_codes(row))
            assert mirrored.amplitudes[j] == np.conj(merged.amplitudes[i])
            assert mirrored.readout[j] == np.conj(merged.readout[i])
            checked += 1
        assert checked == 12

    def test_unique_keys_return_input(self):
        ens = make_ensemble([[0, 1], [1, 1], [2, 1]], [1.0, 2.0, 3.0])
        assert merge_by_mask(ens) is ens

    def test_merge_preserves_totals(self):
        rng = np.random.default_rng(7)
        z = rng.integers(0, 4, size=(200, 3))
        amps = rng.normal(size=200) + 1j * rng.normal(size=200)
        ens = make_ensemble(z, amps, mask=Mask((0, 2)))
        merged = merge_by_mask(ens)
        assert len(merged) <= 16
        assert merged.amplitudes.sum() == pytest.approx(amps.sum(), rel=1e-12)
        assert merged.readout.sum() == pytest.approx(amps.sum(), rel=1e-12)

    def test_merge_is_order_independent(self):
        rng = np.random.default_rng(3)
        z = rng.integers(0, 4, size=(64, 3))
        amps = rng.normal(size=64) + 0j
        first = merge_by_mask(make_ensemble(z, amps, mask=Mask((0, 1))))
        perm = rng.permutation(64)
        second = merge_by_mask(make_ensemble(z[perm], amps[perm], mask=Mask((0, 1))))
        np.testing.assert_array_equal(first.z_history, second.z_history)
        np.testing.assert_allclose(first.amplitudes, second.amplitudes, rtol=1e-12, atol=1e-12)


class TestFilters:
    def test_zero_threshold_drops_only_exact_zeros(self):
        ens = make_ensemble([[0], [1], [2]], [0.0, 1e-300, 0.0], [0.0, 0.0, 1e-3])
        kept, dropped = filter_paths(ens, 0.0)
        assert dropped == 1
        assert kept.z_history[:, 0].tolist() == [1, 2]

    def test_no_zeros_keeps_identity(self):
        ens = make_ensemble([[0], [1]], [1.0, 2.0])
        kept, dropped = drop_exact_zeros(ens)
        assert kept is ens and dropped == 0

    def test_threshold_keeps_at_or_above(self):
        ens = make_ensemble([[0], [1], [2]], [1e-3, 1e-2, -1e-4])
        kept, dropped = filter_paths(ens, 1e-3)
        assert dropped == 1
        assert kept.z_history[:, 0].tolist() == [0, 1]

    def test_negative_threshold(self):
        with pytest.raises(DomainError):
            filter_paths(make_ensemble([[0]], [1.0]), -1.0)

    def test_drop_smallest(self):
        ens = make_ensemble([[0], [1], [2], [3]], [4.0, 1.0, 3.0, 2.0])
        kept, dropped = drop_smallest(ens, 0.5)
        assert dropped == 2
        assert kept.z_history[:, 0].tolist() == [0, 2]
        with pytest.raises(DomainError):
            drop_smallest(ens, 1.0)

    def test_memory_estimate(self):
        ens = make_ensemble([[0, 1], [1, 2]], [1.0, 1.0])
        assert ens.memory_bytes() == 2 * (8 + 2 + AMPLITUDE_BYTES)

    def test_budget_error_is_resource_limit(self):
        err = EnsembleBudgetError(5, 1 << 20, 1 << 16)
        assert isinstance(err, ResourceLimitError)
        assert (err.step, err.requested, err.limit) == (5, 1 << 20, 1 << 16)


class TestInfluence:
    def test_row_exponent_by_hand(self):
        eta0, eta1 = 0.3 + 0.2j, -0.1 + 0.05j
        value = row_exponent(np.array([[1, 0]], dtype=np.uint8), np.array([eta0, eta1]))
        assert value[0] == pytest.approx(4 * eta0.real + 4j * eta1.imag)
        assert row_exponent(np.array([[3, 1]], dtype=np.uint8), np.array([eta0, eta1]))[0] == 0

    def test_short_history(self):
        with pytest.raises(InfluenceHistoryError):
            row_exponent(np.array([[1]], dtype=np.uint8), np.array([0.1, 0.2]))

    def test_weights_reproduce_whole_path_functional(self, bath_z):
        n = 4
        table = build_eta_table(bath_z, DT, n)
        path = [1, 2, 0, 3, 2]
        weight = 1.0 + 0j
        for j in range(n + 1):
            history = path[j::-1]
            weight *= complex(influence_weight(history, table, Axis.Z, j)[0])
        weight *= complex(readout_weight(path[::-1], table, n)[0])
        assert weight == pytest.approx(influence_functional(path, table), rel=1e-12)

    def test_dephasing_readout_excludes_newest_row(self, bath_x):
        table = build_eta_table(bath_x, DT, 4)
        history = [1, 1, 1]
        combined = influence_weight(history, table, Axis.X, 2) * readout_weight(history, table, 2, exclude_current=True)
        assert combined[0] == pytest.approx(1.0)
        assert readout_weight(history, table, 2)[0] == 1.0

    def test_diagonal_newest_point_has_unit_weight(self, bath_z):
        table = build_eta_table(bath_z, DT, 4)
        assert influence_weight([3, 1, 2], table, Axis.Z, 2)[0] == 1.0
        assert readout_weight([0, 1, 2], table, 2)[0] == 1.0

    def test_axis_mismatch(self, bath_z):
        with pytest.raises(DomainError):
            influence_weight([1], build_eta_table(bath_z, DT, 4), Axis.X, 0)

    def test_extended_needs_untruncated_table(self, bath_z):
        table = truncate_eta(build_eta_table(bath_z, DT, 4), DT)
        with pytest.raises(DomainError):
            influence_weight([1, 1, 1], table, Axis.Z, 2, extended=True)

    def test_path_length_checked(self, bath_z):
        with pytest.raises(DomainError):
            influence_functional([0, 1], build_eta_table(bath_z, DT, 4))
