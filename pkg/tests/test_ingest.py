import numpy as np
import pytest

from msrc.ingest import (
    Column,
    DatasetError,
    DatasetSchema,
    FeatureMatrix,
    RawRecord,
    anonymize,
    clean,
    encode_categorical,
    load_dataset,
    normalize,
    parse_columns,
    prepare,
    preset_schema,
)

# rows in the 43-field NSL-KDD layout: 41 features, label, difficulty
NSL_ROWS = [
    "0,tcp,ftp_data,SF,491,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,2,2,0.00,0.00,0.00,0.00,1.00,0.00,0.00,150,25,0.17,0.03,0.17,0.00,0.00,0.00,0.05,0.00,normal,20",
    "0,udp,other,SF,146,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,13,1,0.00,0.00,0.00,0.00,0.08,0.15,0.00,255,1,0.00,0.60,0.88,0.00,0.00,0.00,0.00,0.00,normal,15",
    "0,tcp,private,S0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,123,6,1.00,1.00,0.00,0.00,0.05,0.07,0.00,255,26,0.10,0.05,0.00,0.00,1.00,1.00,0.00,0.00,neptune,19",
    "0,icmp,ecr_i,SF,1032,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,511,511,0.00,0.00,0.00,0.00,1.00,0.00,0.00,255,255,1.00,0.00,1.00,0.00,0.00,0.00,0.00,0.00,smurf,21",
    "0,tcp,http,SF,232,8153,0,0,0,0,0,1,0,0,0,0,0,0,0,0,0,0,5,5,0.20,0.20,0.00,0.00,1.00,0.00,0.00,30,255,1.00,0.00,0.03,0.04,0.03,0.01,0.00,0.01,normal,21",
]


def _write(tmp_path, lines, name="data.csv"):
    p = tmp_path / name
    p.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return p


def _rec(*values, label="normal"):
    return RawRecord(tuple(values) + (label,), label, int(label != "normal"))


SIMPLE = DatasetSchema(
    [Column("a", "numeric"), Column("proto", "categorical"), Column("label", "label")], "normal"
)


# load


def test_nsl_kdd_rows_have_41_features(tmp_path):
    schema = preset_schema("nsl-kdd")
    assert len(schema.columns) == 43
    assert len(schema.indices("numeric")) + len(schema.indices("categorical")) == 41
    recs = load_dataset(_write(tmp_path, NSL_ROWS), schema)
    assert len(recs) == 5
    assert [r.anomaly for r in recs] == [0, 0, 1, 1, 0]
    assert recs[2].label == "neptune"


def test_protocol_type_one_hot_width(tmp_path):
    schema = preset_schema("nsl-kdd")
    fm, fitted = encode_categorical(load_dataset(_write(tmp_path, NSL_ROWS), schema), schema)
    assert fitted.vocabularies["protocol_type"] == ["icmp", "tcp", "udp"]
    expected = 38 + 3 + len(fitted.vocabularies["service"]) + len(fitted.vocabularies["flag"])
    assert fm.width == expected


def test_preset_widths():
    assert len(preset_schema("kdd99").columns) == 42
    unsw = preset_schema("unsw-nb15")
    assert len(unsw.columns) == 49 and unsw.normal_label == "0"
    assert len(preset_schema("cic-ids2018").columns) == 80
    assert len(preset_schema("synthetic", 4).columns) == 5
    with pytest.raises(DatasetError, match="unknown schema preset"):
        preset_schema("nope")


def test_kdd99_trailing_dot_label(tmp_path):
    row = NSL_ROWS[0].rsplit(",", 2)[0] + ",normal."
    recs = load_dataset(_write(tmp_path, [row]), preset_schema("kdd99"))
    assert recs[0].anomaly == 0


def test_empty_file(tmp_path):
    assert load_dataset(_write(tmp_path, []), SIMPLE) == []


def test_short_row_names_row(tmp_path):
    bad = NSL_ROWS[1].split(",")
    del bad[5]
    path = _write(tmp_path, [NSL_ROWS[0], ",".join(bad)])
    with pytest.raises(DatasetError, match="row 2 has 42 fields"):
        load_dataset(path, preset_schema("nsl-kdd"))


def test_unknown_label(tmp_path):
    schema = DatasetSchema(SIMPLE.columns, "normal", known_labels=frozenset({"attack"}))
    with pytest.raises(DatasetError, match="'weird'"):
        load_dataset(_write(tmp_path, ["1,tcp,normal", "2,udp,weird"]), schema)


def test_header_skipped(tmp_path):
    recs = load_dataset(_write(tmp_path, ["a,proto,label", "1,tcp,normal"]), SIMPLE)
    assert len(recs) == 1


def test_missing_file():
    with pytest.raises(DatasetError, match="not found"):
        load_dataset("/nonexistent/file.csv", SIMPLE)


def test_parse_columns():
    s = parse_columns("x:numeric, p:categorical, ip:address, y:label", "benign")
    assert [c.kind for c in s.columns] == ["numeric", "categorical", "address", "label"]
    assert s.normal_label == "benign"


# clean


def test_clean_examples():
    r1, r2 = _rec("1", "tcp"), _rec("2", "udp")
    assert clean([r1, r1, r2]) == [r1, r2]
    assert clean([r1, _rec("", "tcp"), r2]) == [r1, r2]
    assert clean([r1, r2]) == [r1, r2]


def test_clean_idempotent_and_ordered():
    rng = np.random.default_rng(0)
    recs = [_rec(str(int(v)), "tcp") for v in rng.integers(0, 10, 50)]
    once = clean(recs)
    assert clean(once) == once
    firsts = [recs.index(r) for r in once]
    assert firsts == sorted(firsts)


# encode


def test_constant_category_and_unseen_value():
    train = [_rec("1", "tcp"), _rec("2", "tcp")]
    fm, fitted = encode_categorical(train, SIMPLE)
    np.testing.assert_array_equal(fm.rows, [[1, 1], [2, 1]])
    test, _ = encode_categorical([_rec("3", "udp")], fitted)
    np.testing.assert_array_equal(test.rows, [[3, 0]])


def test_width_formula():
    recs = [_rec(str(i), p) for i, p in enumerate(["tcp", "udp", "icmp", "tcp"])]
    fm, fitted = encode_categorical(recs, SIMPLE)
    assert fm.width == 1 + len(fitted.vocabularies["proto"]) == 4


def test_non_numeric_value():
    with pytest.raises(DatasetError, match="'a'"):
        encode_categorical([_rec("abc", "tcp")], SIMPLE)


# anonymize


ADDR = DatasetSchema([Column("src", "address"), Column("n", "numeric"), Column("label", "label")], "normal")


def test_anonymize_properties():
    addrs = [f"10.0.{i // 256}.{i % 256}" for i in range(600)] + ["fe80::1", "host-a", "10.0.0.1"]
    recs = [_rec(a, "1") for a in addrs]
    out = anonymize(recs, ADDR, seed=5)
    again = anonymize(recs, ADDR, seed=5)
    assert out == again
    mapping = {}
    for r, o in zip(recs, out):
        assert o.values[1:] == r.values[1:]
        mapping.setdefault(r.values[0], set()).add(o.values[0])
    assert all(len(v) == 1 for v in mapping.values())
    images = [next(iter(v)) for v in mapping.values()]
    assert len(set(images)) == len(images)
    assert anonymize(recs, ADDR, seed=6) != out


def test_anonymize_no_address_columns_is_identity():
    recs = [_rec("1", "tcp")]
    assert anonymize(recs, SIMPLE, 0) == recs


# normalize


def _fm(rows):
    rows = np.asarray(rows, dtype=float)
    return FeatureMatrix(rows, np.zeros(len(rows), dtype=int))


def test_normalize_examples():
    out, stats = normalize(_fm([[0, 7], [5, 7], [10, 7]]))
    np.testing.assert_array_equal(out.rows, [[0, 0], [0.5, 0], [1, 0]])
    test, _ = normalize(_fm([[20, 7], [-5, 9]]), stats)
    np.testing.assert_array_equal(test.rows, [[1, 0], [0, 0]])


def test_normalize_idempotent():
    rng = np.random.default_rng(1)
    rows = rng.normal(size=(30, 4))
    rows[:, 2] = 3.0
    once, _ = normalize(_fm(rows))
    assert once.rows.min() >= 0 and once.rows.max() <= 1
    twice, unit = normalize(once)
    np.testing.assert_array_equal(unit.minimum, [0, 0, 0, 0])
    np.testing.assert_array_equal(unit.maximum, [1, 1, 0, 1])
    np.testing.assert_allclose(twice.rows, once.rows, atol=1e-15)
    again, _ = normalize(twice, unit)
    np.testing.assert_array_equal(again.rows, twice.rows)


def test_prepare_fits_on_train_only(tmp_path):
    train = _write(tmp_path, ["a,proto,label", "0,tcp,normal", "10,udp,attack", "10,udp,attack", "5,tcp,normal"], "train.csv")
    test = _write(tmp_path, ["20,icmp,normal", "5,tcp,attack"], "test.csv")
    data = prepare(train, SIMPLE, test)
    assert data.counts == {"train_loaded": 4, "train_clean": 3, "train_used": 3,
                           "test_loaded": 2, "test_clean": 2, "test_used": 2}
    np.testing.assert_array_equal(data.train.rows, [[0, 1, 0], [1, 0, 1], [0.5, 1, 0]])
    np.testing.assert_array_equal(data.test.rows, [[1, 0, 0], [0.5, 1, 0]])
    np.testing.assert_array_equal(data.test.labels, [0, 1])
    capped = prepare(train, SIMPLE, max_train=2)
    assert len(capped.train) == 2 and capped.test is None
