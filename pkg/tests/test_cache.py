import json

import numpy as np
import pytest

from fitnet.cache import CacheManifest, read_cache, write_cache
from fitnet.errors import CacheVersionError, CorruptionError
from fitnet.features import (
    DatasetSplit,
    NormalizationStats,
    build_fit_features,
    compute_normalization,
)


def _random_features(n, seed=0, T=6, M=3):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        mask = (rng.random((T, M)) < 0.5).astype(float)
        values = rng.normal(size=(T, M)) * mask
        f = build_fit_features(values, mask, 0.5, rng.normal(size=M),
                               record_id=f"rec{i}", label=i % 2)
        out.append(f)
    return out


def _manifest(features, stats=None, split=None):
    return CacheManifest(
        grid_step=0.5,
        horizon=3.0,
        signal_names=["a", "b", "c"],
        normalized=False,
        labels={f.record_id: f.label for f in features},
        stats=stats,
        split=split,
        missing_rates=[0.1, 0.2, 0.3],
    )


def test_round_trip_bitwise(tmp_path):
    features = _random_features(4, seed=3)
    stats = compute_normalization(features)
    split = DatasetSplit(train=["rec0", "rec1"], val=["rec2"], test=["rec3"],
                         seed=7, ratios=(0.5, 0.25, 0.25))
    write_cache(tmp_path, features, _manifest(features, stats, split))
    loaded, manifest = read_cache(tmp_path)
    assert len(loaded) == 4
    by_id = {f.record_id: f for f in loaded}
    for f in features:
        g = by_id[f.record_id]
        for channel in ("values", "mask", "delta", "last", "means"):
            assert np.array_equal(getattr(f, channel), getattr(g, channel))
        assert g.label == f.label
        assert g.grid_step == 0.5 and g.horizon == 3.0
    assert np.array_equal(manifest.stats.mean, stats.mean)
    assert np.array_equal(manifest.stats.std, stats.std)
    assert manifest.split.train == ["rec0", "rec1"]
    assert manifest.split.ratios == (0.5, 0.25, 0.25)
    assert manifest.missing_rates == [0.1, 0.2, 0.3]


def test_truncated_record_is_corruption(tmp_path):
    features = _random_features(2, seed=4)
    write_cache(tmp_path, features, _manifest(features))
    victim = tmp_path / "records" / "rec0.bin"
    victim.write_bytes(victim.read_bytes()[:-16])
    with pytest.raises(CorruptionError):
        read_cache(tmp_path)


def test_flipped_byte_fails_checksum(tmp_path):
    features = _random_features(1, seed=5)
    write_cache(tmp_path, features, _manifest(features))
    victim = tmp_path / "records" / "rec0.bin"
    blob = bytearray(victim.read_bytes())
    blob[-1] ^= 0xFF
    victim.write_bytes(bytes(blob))
    with pytest.raises(CorruptionError, match="sha256"):
        read_cache(tmp_path)


def test_version_bump_refused_with_both_versions(tmp_path):
    features = _random_features(1, seed=6)
    write_cache(tmp_path, features, _manifest(features))
    doc = json.loads((tmp_path / "manifest.json").read_text())
    doc["format_version"] = 99
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(CacheVersionError, match="99.*1"):
        read_cache(tmp_path)


def test_missing_record_file(tmp_path):
    features = _random_features(2, seed=7)
    write_cache(tmp_path, features, _manifest(features))
    (tmp_path / "records" / "rec1.bin").unlink()
    with pytest.raises(CorruptionError, match="missing"):
        read_cache(tmp_path)


def test_stats_round_trip_exact():
    stats = NormalizationStats(mean=np.array([0.1, -2.7e-13]), std=np.array([1.0, 3.14159]))
    back = NormalizationStats.from_lists(json.loads(json.dumps(stats.to_lists())))
    assert np.array_equal(back.mean, stats.mean)
    assert np.array_equal(back.std, stats.std)
