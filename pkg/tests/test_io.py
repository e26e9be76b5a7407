from __future__ import annotations

import json

import numpy as np
import pytest

from socialcues.core import RgbdFrame
from socialcues.io import (
    ArtifactExistsError,
    DataError,
    check_writable,
    iter_rgbd,
    load_dataset,
    load_manifest,
    read_rgbd,
    record_from_json,
    record_to_json,
    write_dataset,
    write_rgbd,
)
from socialcues.simworld import render_sequence
from socialcues.simworld.scripts import make_script


def frames(n=3, w=8, h=6, seed=0):
    rng = np.random.default_rng(seed)
    return [
        RgbdFrame(rng.integers(0, 256, (h, w, 3)).astype(np.uint8), rng.uniform(0.3, 5, (h, w)).astype(np.float32), i / 7, i)
        for i in range(n)
    ]


def test_rgbd_roundtrip_bit_exact(tmp_path):
    fs = frames()
    d = fs[1].depth.copy()
    d[0, 0] = 0.0  # invalid reading
    fs[1] = RgbdFrame(fs[1].rgb, d, fs[1].timestamp, fs[1].index)
    write_rgbd(tmp_path / "f.rgbd", fs)
    back = read_rgbd(tmp_path / "f.rgbd")
    assert len(back) == 3
    for a, b in zip(fs, back):
        assert np.array_equal(a.rgb, b.rgb)
        assert np.array_equal(a.depth, b.depth, equal_nan=True)
        assert (a.timestamp, a.index) == (b.timestamp, b.index)


@pytest.mark.parametrize("mutate", ["magic", "truncate", "trailing", "version"])
def test_rgbd_corruption_detected(tmp_path, mutate):
    p = tmp_path / "f.rgbd"
    write_rgbd(p, frames())
    raw = bytearray(p.read_bytes())
    if mutate == "magic":
        raw[:4] = b"XXXX"
    elif mutate == "truncate":
        raw = raw[:-5]
    elif mutate == "trailing":
        raw += b"\0"
    else:
        raw[4] = 9
    p.write_bytes(bytes(raw))
    with pytest.raises(DataError):
        list(iter_rgbd(p))


def test_rgbd_rejects_mixed_sizes(tmp_path):
    with pytest.raises(ValueError):
        write_rgbd(tmp_path / "f.rgbd", frames(1) + frames(1, w=9))
    with pytest.raises(ValueError):
        write_rgbd(tmp_path / "g.rgbd", [])


def test_truth_record_roundtrip():
    s = make_script("with-distractors", "025_mug", seed=1, n_frames=2)
    for _, rec in render_sequence(s):
        d = json.loads(json.dumps(record_to_json(rec)))
        assert record_to_json(record_from_json(d)) == record_to_json(rec)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    scripts = [make_script("constrained", l, seed=i, n_frames=4) for i, l in enumerate(("025_mug", "037_scissors"))]
    m = write_dataset(root, scripts)
    return root, scripts, m


def test_dataset_roundtrip(dataset):
    root, scripts, m = dataset
    assert m.registry == ["025_mug", "037_scissors"] and m.frame_count == 8
    m2, seqs = load_dataset(root)
    assert m2.to_json() == m.to_json()
    for s, seq in zip(scripts, seqs):
        assert seq.label == s.object.label and len(seq.frames) == 4
        for (f, r), g, t in zip(render_sequence(s), seq.frames, seq.truth):
            assert np.array_equal(f.rgb, g.rgb) and np.array_equal(f.depth, g.depth, equal_nan=True)
            assert record_to_json(r) == record_to_json(t)


def test_dataset_rewrite_is_byte_identical(dataset, tmp_path):
    root, scripts, _ = dataset
    write_dataset(tmp_path, scripts)
    for p in root.rglob("*"):
        if p.is_file():
            assert (tmp_path / p.relative_to(root)).read_bytes() == p.read_bytes()


def test_dataset_refuses_overwrite(dataset):
    root, scripts, _ = dataset
    with pytest.raises(ArtifactExistsError):
        write_dataset(root, scripts)
    with pytest.raises(ArtifactExistsError):
        check_writable(root / "manifest.json", force=False)
    assert check_writable(root / "manifest.json", force=True) == root / "manifest.json"


def test_checksum_mismatch(dataset, tmp_path):
    root, scripts, _ = dataset
    write_dataset(tmp_path, scripts)
    m = load_manifest(tmp_path)
    truth = tmp_path / m.sequences[0]["name"] / "truth.jsonl"
    truth.write_text(truth.read_text().replace("true", "false", 1))
    with pytest.raises(DataError):
        load_manifest(tmp_path)
    load_manifest(tmp_path, verify=False)
    (tmp_path / m.sequences[1]["name"] / "frames.rgbd").unlink()
    with pytest.raises(DataError):
        load_manifest(tmp_path)


def test_bad_manifest(tmp_path):
    with pytest.raises(DataError):
        load_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text('{"format": "other"}')
    with pytest.raises(DataError):
        load_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(DataError):
        load_manifest(tmp_path)
