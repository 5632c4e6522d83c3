import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from storn import data
from storn.data import DataFormatError

from helpers import linear_model


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_event_examples():
    np.testing.assert_array_equal(data.events_to_binary([[], []], 5), np.zeros((2, 5)))
    v = data.events_to_binary([[0, 87]])
    assert v.shape == (1, 88) and v.sum() == 2 and v[0, 0] == v[0, 87] == 1


@given(st.lists(st.lists(st.integers(0, 87), unique=True).map(sorted), min_size=1, max_size=20))
def test_event_round_trip(steps):
    assert data.binary_to_events(data.events_to_binary(steps)) == steps
    assert data.parse_event_line(data.format_event_line(data.events_to_binary(steps))) == steps


def test_event_file(tmp_path):
    p = write(tmp_path, "e.txt", "# comment\n0,3;;2\n\n1;1;1;1\n")
    ds = data.load_event_sequences(p, channels=4)
    assert ds.kind == "binary" and len(ds) == 3
    assert [len(s) for s in ds.sequences] == [3, 1, 4]
    np.testing.assert_array_equal(ds.sequences[0], [[1, 0, 0, 1], [0, 0, 0, 0], [0, 0, 1, 0]])
    out = tmp_path / "out.txt"
    data.write_event_sequences(out, ds)
    again = data.load_event_sequences(out, channels=4)
    for a, b in zip(ds.sequences, again.sequences):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("line,needle", [("1;x", "e.txt:2"), ("4", "index 4"),
                                         ("2,1", "increasing"), ("-1", "index -1")])
def test_event_errors_are_located(tmp_path, line, needle):
    p = write(tmp_path, "e.txt", "0\n%s\n" % line)
    with pytest.raises(DataFormatError, match=needle):
        data.load_event_sequences(p, channels=4)


def test_real_file_grouping(tmp_path):
    p = write(tmp_path, "r.csv", "seq_id,a,b\ns1,1,2\ns2,5,6\ns1,3,4\n")
    ds = data.load_real_sequences(p)
    assert ds.ids == ["s1", "s2"] and ds.channel_names == ["a", "b"]
    np.testing.assert_array_equal(ds.sequences[0], [[1, 2], [3, 4]])
    assert ds.sequences[1].shape == (1, 2)


def test_real_file_id_column_anywhere(tmp_path):
    p = write(tmp_path, "r.csv", "a,seq_id\n1.5,q\n")
    ds = data.load_real_sequences(p)
    assert ds.ids == ["q"] and ds.sequences[0][0, 0] == 1.5


@pytest.mark.parametrize("text,needle", [
    ("seq_id,a\ns,1,2\n", "r.csv:2: expected 2"),
    ("seq_id,a,b\ns,1,2\ns,1,zz\n", "r.csv:3: column 3 \\(b\\)"),
    ("a,b\n1,2\n", "seq_id"),
    ("", "header"),
    ("seq_id,a\ns,nan\n", "non-finite"),
])
def test_real_errors_are_located(tmp_path, text, needle):
    with pytest.raises(DataFormatError, match=needle):
        data.load_real_sequences(write(tmp_path, "r.csv", text))


def test_real_round_trip(tmp_path):
    ds = data.synth_sines(3, 7, seed=1)
    p = tmp_path / "s.csv"
    data.write_real_sequences(p, ds)
    back = data.load_real_sequences(p)
    assert back.channel_names == ["cos", "sin"]
    for a, b in zip(ds.sequences, back.sequences):
        assert np.array_equal(a, b)


def test_standardization_contract():
    ds = data.synth_sines(40, 25, seed=3)
    ds = data.Dataset([s * [3.0, 0.5] + [10.0, -2.0] for s in ds.sequences])
    z = data.standardize_dataset(ds)
    rows = np.concatenate(z.sequences)
    np.testing.assert_allclose(rows.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(rows.std(axis=0), 1.0, atol=1e-10)
    for a, b in zip(ds.sequences, z.sequences):
        np.testing.assert_allclose(data.destandardize(b, z.stats), a, rtol=0, atol=1e-12)
    again = data.Standardization.from_dict(json.loads(json.dumps(z.stats.to_dict())))
    assert np.array_equal(again.mean, z.stats.mean) and np.array_equal(again.std, z.stats.std)


def test_standardization_uses_given_stats_and_floors_constant_channels(tmp_path):
    train = data.Dataset([np.array([[1.0, 4.0], [3.0, 4.0]])])
    stats = data.fit_standardization(train)
    assert stats.std[1] == data.STD_FLOOR
    p = tmp_path / "v.csv"
    data.write_real_sequences(p, [np.array([[5.0, 4.0]])])
    v = data.load_real_sequences(p, standardize=stats)
    np.testing.assert_array_equal(v.sequences[0], [[3.0, 0.0]])
    assert v.stats is stats


def test_dataset_invariants():
    with pytest.raises(ValueError):
        data.Dataset([np.array([[0.5]])], kind="binary")
    with pytest.raises(ValueError):
        data.standardize_dataset(data.Dataset([np.ones((2, 2))], kind="binary"))
    with pytest.raises(ValueError):
        data.Dataset([np.ones((1, 1))], kind="image")


def test_batches_cover_dataset_once():
    ds = data.synth_sines(23, 5, seed=0)
    ds = data.Dataset([s[: 1 + i % 5] for i, s in enumerate(ds.sequences)])
    batches = list(data.make_batches(ds, 4, seed=9))
    assert len(batches) == 6
    seen = Counter()
    for b in batches:
        for s in b.sequences():
            seen[s.tobytes()] += 1
        assert b.T == b.lengths.max()
    assert seen == Counter(s.tobytes() for s in ds.sequences)
    again = list(data.make_batches(ds, 4, seed=9))
    assert all(np.array_equal(a.values, b.values) for a, b in zip(batches, again))
    assert len(list(data.make_batches(ds, 100, seed=1))) == 1


def test_batch_size_validated():
    with pytest.raises(ValueError):
        data.batch_indices(5, 0)


def test_split_and_manifest(tmp_path):
    ds = data.synth_sines(20, 3, seed=0)
    tr, va, te = data.split_dataset(ds, seed=1)
    assert (len(tr), len(va), len(te)) == (16, 2, 2)
    assert sorted(tr.ids + va.ids + te.ids, key=int) == ds.ids
    p = write(tmp_path, "m.json", json.dumps({"train": ["3", 4], "valid": ["0"]}))
    tr, va, te = data.apply_manifest(ds, data.load_manifest(p))
    assert tr.ids == ["3", "4"] and va.ids == ["0"] and len(te) == 0
    with pytest.raises(DataFormatError):
        data.apply_manifest(ds, {"train": ["zz"]})
    with pytest.raises(DataFormatError):
        data.load_manifest(write(tmp_path, "bad.json", '{"holdout": []}'))


def test_coupled_oracle_and_structure():
    ds = data.synth_coupled_binary(10, 8, channels=4, seed=2)
    assert ds.oracle["true_nll_per_step"] == pytest.approx(0.693147, abs=1e-6)
    assert ds.oracle["factorized_nll_per_step"] == pytest.approx(2.772589, abs=1e-6)
    for s in ds.sequences:
        assert np.all(s == s[:, :1])
    with pytest.raises(ValueError):
        data.synth_coupled_binary(1, 1, channels=1)


def test_coupled_on_rate():
    ds = data.synth_coupled_binary(1000, 100, seed=5)
    rate = np.mean([s[:, 0].mean() for s in ds.sequences])
    assert rate == pytest.approx(0.5, abs=0.01)


def test_linear_gaussian_zero_latent_is_deterministic_rollout():
    m = linear_model(np.random.default_rng(1))
    a = m.arrays()
    a["gen.W_lat"][:] = 0
    m = m.with_arrays(a)
    x = np.array([[0.3], [-0.4], [1.1]])
    g = m.gen
    h, nll = np.zeros(g.n_hidden), 0.0
    prev = np.zeros(1)
    for t in range(3):
        h = prev @ g.W_in + h @ g.W_rec + g.b_hid
        mean = h @ g.W_out + g.b_out
        nll += 0.5 * np.log(2 * np.pi * m.output_std ** 2) + 0.5 * ((x[t] - mean[0]) / m.output_std) ** 2
        prev = x[t]
    assert data.linear_gaussian_nll(m, [x])[0] == pytest.approx(float(nll[0]), rel=1e-12)


def test_linear_gaussian_nll_matches_entropy():
    m = linear_model(np.random.default_rng(2))
    mean, cov = data.linear_gaussian_marginal(m, 3)
    entropy = 0.5 * np.linalg.slogdet(2 * np.pi * np.e * cov)[1]
    ds = data.synth_linear_gaussian(100_000, 3, 0, m)
    nll = ds.oracle["nll"]
    assert abs(nll.mean() - entropy) < 3 * nll.std(ddof=1) / np.sqrt(len(nll))


def test_linear_gaussian_preconditions():
    from storn import StornModel
    with pytest.raises(ValueError):
        data.linear_gaussian_marginal(StornModel.create(1, 2, 1, likelihood="gaussian"), 2)
    with pytest.raises(ValueError):
        data.synth_linear_gaussian(1, 7, 0, linear_model(np.random.default_rng(0)))


def test_standardization_width_mismatch():
    stats = data.Standardization(np.zeros(2), np.ones(2))
    with pytest.raises(DataFormatError, match="channels"):
        stats.apply(np.ones((3, 1)))
