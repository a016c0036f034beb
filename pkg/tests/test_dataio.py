import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cineseg.dataio import (
    DatasetManifest,
    ManifestEntry,
    PhantomParams,
    decode_checkpoint,
    encode_checkpoint,
    encode_pgm,
    gen_phantom,
    load_checkpoint,
    load_manifest,
    load_mask,
    load_pgm,
    parse_pgm,
    save_checkpoint,
    save_mask,
    save_pgm,
    split_by_patient,
    write_manifest,
)
from cineseg.errors import ConfigError, IntegrityError, ParseError
from cineseg.metrics import dice
from cineseg.network import NetworkConfig, build

# -- PGM -------------------------------------------------------------------------


def test_parse_known_bytes():
    img = parse_pgm(b"P5\n2 2\n255\n\x00\x80\xff\x40")
    np.testing.assert_array_equal(img.pixels, np.array([[0, 128], [255, 64]]) / 255)


def test_header_comments_and_whitespace():
    img = parse_pgm(b"P5 # a comment\n 3\t1 # more\n255\r\x01\x02\x03")
    assert img.pixels.shape == (1, 3) and img.pixels[0, 2] == 3 / 255


def test_sixteen_bit_is_big_endian():
    img = parse_pgm(b"P5\n1 1\n65535\n\x01\x00")
    assert img.pixels[0, 0] == 256 / 65535


@given(seed=st.integers(0, 2**32 - 1), h=st.integers(1, 9), w=st.integers(1, 9))
def test_sixteen_bit_round_trip(seed, h, w):
    px = np.random.default_rng(seed).random((h, w))
    back = parse_pgm(encode_pgm(px)).pixels
    assert np.abs(back - px).max() <= 0.5 / 65535 + 1e-15


def test_file_round_trip(tmp_path):
    px = np.random.default_rng(0).random((5, 7))
    save_pgm(px, tmp_path / "a.pgm")
    assert np.abs(load_pgm(tmp_path / "a.pgm").pixels - px).max() < 1 / 65535
    mask = (px > 0.5).astype(np.uint8)
    save_mask(mask, tmp_path / "m.pgm")
    assert np.array_equal(load_mask(tmp_path / "m.pgm").pixels, mask)


def test_ascii_pgm_rejected():
    with pytest.raises(ParseError) as exc:
        parse_pgm(b"P2\n2 2\n255\n0 1 2 3\n")
    assert exc.value.offset == 0 and "P2" in str(exc.value)


@pytest.mark.parametrize("data,offset", [
    (b"P6\n1 1\n255\n\x00", 0),
    (b"P5\n2 x\n255\n", 5),
    (b"P5\n2 2\n255\n\x00\x01\x02", 14),
    (b"P5\n1 1\n70000\n\x00\x00", None),
    (b"P", 0),
])
def test_malformed_reports_offset(data, offset):
    with pytest.raises(ParseError) as exc:
        parse_pgm(data)
    if offset is not None:
        assert exc.value.offset == offset


def test_pixel_above_maxval_rejected():
    with pytest.raises(ParseError):
        parse_pgm(b"P5\n1 1\n100\n\xc8")


# -- manifests -------------------------------------------------------------------


def _dataset(tmp_path, patients, per_patient=2):
    entries = []
    for p in range(patients):
        for s in range(per_patient):
            img, msk = tmp_path / f"p{p}_{s}.pgm", tmp_path / f"p{p}_{s}_m.pgm"
            save_pgm(np.zeros((4, 4)), img)
            save_mask(np.zeros((4, 4), np.uint8), msk)
            entries.append(ManifestEntry(f"P{p:03d}", "", img, msk))
    return DatasetManifest(entries, tmp_path)


def test_manifest_round_trip(tmp_path):
    m = _dataset(tmp_path, 3)
    write_manifest(m, tmp_path / "manifest.csv")
    text = (tmp_path / "manifest.csv").read_text()
    assert text.splitlines()[0] == "patient_id,split,image,mask"
    assert "p0_0.pgm" in text and str(tmp_path) not in text
    back = load_manifest(tmp_path / "manifest.csv")
    assert [(e.patient_id, e.image.resolve()) for e in back.entries] == \
        [(e.patient_id, e.image.resolve()) for e in m.entries]


def test_manifest_missing_file(tmp_path):
    (tmp_path / "m.csv").write_text("patient_id,split,image,mask\nP1,train,nope.pgm,nope_m.pgm\n")
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "m.csv")
    assert len(load_manifest(tmp_path / "m.csv", check_paths=False).entries) == 1


def test_manifest_bad_rows_name_line(tmp_path):
    (tmp_path / "m.csv").write_text("patient_id,split,image,mask\nP1,holdout,a,b\n")
    with pytest.raises(ConfigError) as exc:
        load_manifest(tmp_path / "m.csv", check_paths=False)
    assert exc.value.line == 2
    (tmp_path / "h.csv").write_text("id,image\n")
    with pytest.raises(ConfigError):
        load_manifest(tmp_path / "h.csv")


def test_split_45_patients_into_thirds(tmp_path):
    m = split_by_patient(_dataset(tmp_path, 45, 1), seed=0)
    assert [len(m.patients(s)) for s in ("train", "val", "test")] == [15, 15, 15]


def test_single_patient_goes_to_train(tmp_path):
    m = split_by_patient(_dataset(tmp_path, 1), ratios=(1, 0, 0))
    assert {e.split for e in m.entries} == {"train"}
    with pytest.raises(ConfigError):
        split_by_patient(_dataset(tmp_path, 1))


@given(n=st.integers(3, 40), seed=st.integers(0, 1000))
def test_split_partitions_patients(n, seed):
    entries = [ManifestEntry(f"P{i % n}", "", f"i{i}", f"m{i}") for i in range(2 * n)]
    m = split_by_patient(DatasetManifest(entries), seed=seed)
    sets = [set(m.patients(s)) for s in ("train", "val", "test")]
    assert all(sets) and sum(len(s) for s in sets) == n
    assert not (sets[0] & sets[1] or sets[1] & sets[2] or sets[0] & sets[2])
    counts = sorted(len(s) for s in sets)
    assert counts[-1] - counts[0] <= 1
    assert m == split_by_patient(DatasetManifest(entries), seed=seed)


# -- phantoms --------------------------------------------------------------------


def test_noise_free_phantom_mask_is_geometric_disk():
    pairs, geoms = gen_phantom(5, 48, 40, seed=3, params=PhantomParams(noise=(0.0, 0.0)), return_geometry=True)
    rr, cc = np.mgrid[0:48, 0:40]
    for (img, mask), g in zip(pairs, geoms):
        disk = ((rr - g.center[0]) ** 2 + (cc - g.center[1]) ** 2 <= g.radius ** 2).astype(np.uint8)
        assert dice(mask, disk) == 1.0
        blood = img.pixels[mask.pixels == 1]
        assert np.ptp(blood) == 0.0


def test_phantoms_are_deterministic_and_prefix_stable():
    a = gen_phantom(6, 32, 32, seed=11)
    b = gen_phantom(3, 32, 32, seed=11)
    for (i1, m1), (i2, m2) in zip(a, b):
        assert np.array_equal(i1.pixels, i2.pixels) and np.array_equal(m1.pixels, m2.pixels)
    assert not np.array_equal(a[0][0].pixels, gen_phantom(1, 32, 32, seed=12)[0][0].pixels)


def test_foreground_fraction_and_containment():
    pairs, geoms = gen_phantom(100, 64, 64, seed=0, return_geometry=True)
    rr, cc = np.mgrid[0:64, 0:64]
    for (img, mask), g in zip(pairs, geoms):
        frac = mask.pixels.mean()
        assert 0.03 <= frac <= 0.25
        d = np.sqrt((rr - g.center[0]) ** 2 + (cc - g.center[1]) ** 2)
        assert d[mask.pixels == 1].max() <= g.radius + 1
        assert 0 <= img.pixels.min() and img.pixels.max() <= 1


def test_phantom_too_small():
    with pytest.raises(ConfigError):
        gen_phantom(1, 16, 32, seed=0)


# -- checkpoints -----------------------------------------------------------------


@pytest.mark.parametrize("scheme", ["none", "batch", "layer", "instance_batch_first"])
def test_checkpoint_round_trip_bit_exact(tmp_path, scheme):
    net = build(NetworkConfig(depth=2, base_channels=4, norm_scheme=scheme), seed=1)
    x = np.random.default_rng(1).random((3, 1, 32, 32))
    net.forward(x, "train")  # move running statistics off their defaults
    save_checkpoint(net, tmp_path / "c.cseg", meta={"epochs": 3})
    back, meta = load_checkpoint(tmp_path / "c.cseg", with_meta=True)
    assert meta == {"epochs": 3} and back.config == net.config
    for (n1, p1), (n2, p2) in zip(net.named_parameters(), back.named_parameters()):
        assert n1 == n2 and np.array_equal(p1.data, p2.data)
    assert np.array_equal(net.forward(x, "eval").data, back.forward(x, "eval").data)


def test_truncated_or_corrupt_checkpoint():
    data = encode_checkpoint(build(NetworkConfig(), seed=0))
    with pytest.raises(IntegrityError):
        decode_checkpoint(data[:-10])
    flipped = bytearray(data)
    flipped[len(data) // 2] ^= 0xFF
    with pytest.raises(IntegrityError):
        decode_checkpoint(bytes(flipped))
    with pytest.raises(IntegrityError):
        decode_checkpoint(b"NOPE" + data[4:])


def test_checkpoint_architecture_mismatch_names_field():
    data = encode_checkpoint(build(NetworkConfig(depth=2), seed=0))
    with pytest.raises(ConfigError) as exc:
        decode_checkpoint(data, NetworkConfig(depth=3))
    assert exc.value.field == "depth"
    net, _ = decode_checkpoint(data, NetworkConfig(depth=2))
    assert net.config.depth == 2
