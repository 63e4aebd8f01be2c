import gzip
import json
import logging

import numpy as np
import pytest

from tracer.data.dataset import LabeledDataset, Normalization, load_digits_dataset, make_blobs
from tracer.data.idx import IMAGE_MAGIC, LABEL_MAGIC, IdxFormatError, load_idx, read_idx
from tracer.data.pgm import read_pgm, write_pgm, write_signed_pgm
from tracer.data.report import ExplanationReport, ReportError, load_report, save_report
from tracer.data.tabular import CsvFormatError, load_csv


def idx_bytes(magic, dims, payload):
    head = magic.to_bytes(4, "big") + b"".join(d.to_bytes(4, "big") for d in dims)
    return head + bytes(payload)


def write_idx_pair(tmp_path, images, labels, gz=False):
    n, h, w = images.shape
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
    ib = idx_bytes(IMAGE_MAGIC, (n, h, w), images.reshape(-1).tolist())
    lb = idx_bytes(LABEL_MAGIC, (len(labels),), list(labels))
    if gz:
        ip, lp = ip.with_suffix(".gz"), lp.with_suffix(".gz")
        ib, lb = gzip.compress(ib), gzip.compress(lb)
    ip.write_bytes(ib)
    lp.write_bytes(lb)
    return ip, lp


def test_idx_four_image_fixture(tmp_path):
    images = np.arange(4 * 3 * 3, dtype=np.uint8).reshape(4, 3, 3) * 7
    ds = load_idx(*write_idx_pair(tmp_path, images, [0, 1, 2, 1]))
    assert len(ds) == 4
    assert ds.features.shape == (4, 1, 3, 3)
    assert ds.features.min() >= 0 and ds.features.max() <= 1
    assert ds.labels.tolist() == [0, 1, 2, 1]
    assert ds.class_count == 3


def test_idx_gzip(tmp_path):
    images = np.full((2, 2, 2), 255, dtype=np.uint8)
    ds = load_idx(*write_idx_pair(tmp_path, images, [0, 1], gz=True))
    assert np.all(ds.features == 1.0)


def test_idx_count_mismatch(tmp_path):
    images = np.zeros((4, 2, 2), dtype=np.uint8)
    with pytest.raises(IdxFormatError, match="count mismatch"):
        load_idx(*write_idx_pair(tmp_path, images, [0, 1, 1]))


def test_idx_big_endian_dimensions(tmp_path):
    # 1 image, 2 rows, 2 cols, pixels row-major: [[0, 51], [102, 255]]
    raw = bytes([0x00, 0x00, 0x08, 0x03,
                 0x00, 0x00, 0x00, 0x01,
                 0x00, 0x00, 0x00, 0x02,
                 0x00, 0x00, 0x00, 0x02,
                 0, 51, 102, 255])
    path = tmp_path / "img"
    path.write_bytes(raw)
    arr = read_idx(path, IMAGE_MAGIC)
    assert arr.shape == (1, 2, 2)
    assert arr[0].tolist() == [[0, 51], [102, 255]]


def test_idx_dimension_above_255(tmp_path):
    path = tmp_path / "lbl"
    path.write_bytes(idx_bytes(LABEL_MAGIC, (300,), [1] * 300))
    assert read_idx(path, LABEL_MAGIC).shape == (300,)


@pytest.mark.parametrize("mutate,message", [
    (lambda b: b"\x00\x00\x08\x01" + b[4:], "bad magic"),
    (lambda b: b[:-1], "truncated payload"),
    (lambda b: b + b"\x00", "trailing"),
    (lambda b: b[:2], "shorter"),
    (lambda b: b[:10], "truncated dimension"),
])
def test_idx_format_errors(tmp_path, mutate, message):
    path = tmp_path / "img"
    path.write_bytes(mutate(idx_bytes(IMAGE_MAGIC, (1, 2, 2), [1, 2, 3, 4])))
    with pytest.raises(IdxFormatError, match=message):
        read_idx(path, IMAGE_MAGIC)


def test_idx_loading_is_order_stable(tmp_path):
    images = np.random.default_rng(0).integers(0, 256, size=(5, 2, 2)).astype(np.uint8)
    paths = write_idx_pair(tmp_path, images, [4, 3, 2, 1, 0])
    a, b = load_idx(*paths), load_idx(*paths)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)


def write_csv(tmp_path, text):
    p = tmp_path / "data.csv"
    p.write_text(text)
    return p


def test_csv_numeric_min_max(tmp_path):
    ds = load_csv(write_csv(tmp_path, "x,y\n10,a\n30,b\n"), "y")
    assert ds.features[:, 0].tolist() == [0.0, 1.0]
    assert ds.feature_names == ["x"]


def test_csv_categorical_one_hot(tmp_path):
    ds = load_csv(write_csv(tmp_path, "color,y\nred,0\ngreen,1\nblue,0\nred,1\n"), "y")
    assert ds.feature_names == ["color=blue", "color=green", "color=red"]
    assert ds.features.tolist() == [[0, 0, 1], [0, 1, 0], [1, 0, 0], [0, 0, 1]]


def test_csv_mixed_fixture_width(tmp_path):
    text = ("age,job,hours,city,income\n"
            "25,clerk,40,north,low\n"
            "40,chef,50,south,high\n"
            "33,clerk,35,east,low\n"
            "51,pilot,45,north,high\n")
    ds = load_csv(write_csv(tmp_path, text), "income")
    # age 1 + job 3 + hours 1 + city 3
    assert ds.features.shape == (4, 8)
    assert len(ds.feature_names) == 8
    assert ds.class_names == ["high", "low"]
    assert ds.labels.tolist() == [1, 0, 1, 0]


def test_csv_normalization_inverts(tmp_path):
    ds = load_csv(write_csv(tmp_path, "a,b,y\n10,-3,p\n30,5,q\n17,0.5,p\n"), "y")
    raw = ds.normalization.denormalize(ds.features)
    assert np.allclose(raw, [[10, -3], [30, 5], [17, 0.5]], atol=1e-12, rtol=0)


def test_csv_unparseable_cell_at_inference_names_row_and_column(tmp_path):
    ds = load_csv(write_csv(tmp_path, "a,y\n1,p\n2,q\n"), "y")
    with pytest.raises(CsvFormatError, match=r"row 3, column 'a'"):
        ds.encoder.encode([{"a": "1"}, {"a": "oops"}])


def test_csv_unseen_category_maps_to_zeros(tmp_path, caplog):
    ds = load_csv(write_csv(tmp_path, "c,y\nu,0\nv,1\n"), "y")
    with caplog.at_level(logging.WARNING):
        enc = ds.encoder.encode([{"c": "w"}])
    assert enc.tolist() == [[0.0, 0.0]]
    assert "unseen category" in caplog.text


def test_csv_missing_label_column(tmp_path):
    with pytest.raises(CsvFormatError, match="label column"):
        load_csv(write_csv(tmp_path, "a,b\n1,2\n"), "y")


def test_csv_schema_forces_numeric_error(tmp_path):
    with pytest.raises(CsvFormatError, match=r"row 3, column 'a'"):
        load_csv(write_csv(tmp_path, "a,y\n1,p\nx,q\n"), "y", schema={"a": "numeric"})


def test_dataset_invariants():
    with pytest.raises(ValueError, match="labels"):
        LabeledDataset(np.zeros((2, 2)), np.array([0, 3]), 2)
    with pytest.raises(ValueError, match="nonzero"):
        Normalization(np.array([1.0, 0.0]), np.zeros(2))


def test_normalization_round_trip():
    rng = np.random.default_rng(0)
    norm = Normalization(rng.uniform(0.5, 100, size=6), rng.normal(size=6))
    raw = rng.normal(scale=50, size=(10, 6))
    assert np.max(np.abs(norm.normalize(norm.denormalize(raw)) - raw)) <= 1e-12
    digits = load_digits_dataset()
    back = digits.normalization.normalize(digits.normalization.denormalize(digits.features))
    assert np.max(np.abs(back - digits.features)) <= 1e-12


def test_split_is_seeded_and_disjoint():
    ds = make_blobs(100, seed=0)
    a_train, a_test = ds.split(0.25, 3)
    b_train, b_test = ds.split(0.25, 3)
    assert np.array_equal(a_test.features, b_test.features)
    assert len(a_test) == 25 and len(a_train) == 75


def make_report(shape=(1, 8, 8)):
    rng = np.random.default_rng(0)
    return ExplanationReport(
        sample_id="s1", predicted=3, attribution=rng.normal(size=shape),
        mask=(rng.random(shape) > 0.5).astype(float), ace={"0": 0.25, "1": -0.125},
        graph={"groups": [[0, 1]]}, config_digest="abc", metadata={"k": 1},
    )


def test_report_round_trip(tmp_path):
    report = make_report()
    save_report(report, tmp_path / "r.json")
    back = load_report(tmp_path / "r.json")
    assert back == report
    assert np.array_equal(back.attribution, report.attribution)
    assert np.array_equal(back.mask, report.mask)
    save_report(back, tmp_path / "r2.json")
    assert (tmp_path / "r.json").read_bytes() == (tmp_path / "r2.json").read_bytes()


def test_report_tampering_detected(tmp_path):
    path = tmp_path / "r.json"
    save_report(make_report(), path)
    doc = json.loads(path.read_text())
    doc["payload"]["predicted"] = 4
    path.write_text(json.dumps(doc))
    with pytest.raises(ReportError, match="checksum"):
        load_report(path)
    doc["version"] = "tracer-report/0"
    path.write_text(json.dumps(doc))
    with pytest.raises(ReportError, match="version"):
        load_report(path)


def test_report_28x28_floats_byte_identical(tmp_path):
    import base64

    report = make_report((28, 28))
    save_report(report, tmp_path / "r.json")
    stored = json.loads((tmp_path / "r.json").read_text())["payload"]["attribution"]
    raw = base64.b64decode(stored["data"])
    assert len(raw) == 784 * 8
    assert raw == report.attribution.astype("<f8").tobytes()


def test_report_rejects_non_binary_mask():
    with pytest.raises(ReportError, match="mask"):
        ExplanationReport("s", 0, np.zeros(3), np.array([0, 0.5, 1]), {}, {}, "d")
    with pytest.raises(ReportError, match="finite"):
        ExplanationReport("s", 0, np.array([np.nan, 0, 0]), np.zeros(3), {}, {}, "d")


def test_pgm_round_trip(tmp_path):
    values = np.array([[0.0, 0.5], [1.0, 0.25]])
    write_pgm(tmp_path / "a.pgm", values)
    assert read_pgm(tmp_path / "a.pgm").tolist() == [[0, 128], [255, 64]]
    pos, neg = write_signed_pgm(tmp_path / "m", np.array([[1.0, -2.0]]))
    assert read_pgm(pos).tolist() == [[128, 0]]
    assert read_pgm(neg).tolist() == [[0, 255]]
