import hashlib
import json

import numpy as np
import pytest
from PIL import Image
from sklearn.linear_model import LogisticRegression

from seppmix.datakit import (MINIIMAGENET_SPLIT, SplitManifest, load_image_folder,
                             make_synthetic, split_base_novel, write_image_folder)
from seppmix.errors import IngestionError, InputDomainError


def write_tree(root, classes, per_class, size=10):
    rng = np.random.default_rng(0)
    for c in classes:
        d = root / c
        d.mkdir(parents=True)
        for i in range(per_class):
            arr = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
            Image.fromarray(arr).save(d / f"{i:02d}.png")


def manifest(train, test, val=("v0",), size=8):
    return SplitManifest("toy", size, list(train), list(val), list(test))


class TestLoadImageFolder:
    def test_counts(self, tmp_path):
        write_tree(tmp_path, ["a", "b", "v0", "t0"], 3)
        ds = load_image_folder(tmp_path, manifest(["a", "b"], ["t0"]), "train")
        assert len(ds) == 6 and ds.num_classes == 2
        assert ds.images.shape == (6, 3, 8, 8)
        assert 0.0 <= ds.images.min() and ds.images.max() <= 1.0

    def test_missing_class_named(self, tmp_path):
        write_tree(tmp_path, ["a"], 2)
        with pytest.raises(IngestionError, match="'zebra'"):
            load_image_folder(tmp_path, manifest(["a", "zebra"], ["t0"]), "train")

    def test_undecodable_file_named(self, tmp_path):
        write_tree(tmp_path, ["a"], 1)
        (tmp_path / "a" / "broken.png").write_bytes(b"not an image")
        with pytest.raises(IngestionError, match="broken.png"):
            load_image_folder(tmp_path, manifest(["a"], ["t0"]), "train")

    def test_idempotent(self, tmp_path):
        write_tree(tmp_path, ["a", "b"], 3)
        m = manifest(["a", "b"], ["t0"])
        x, y = load_image_folder(tmp_path, m, "train"), load_image_folder(tmp_path, m, "train")
        assert x.instance_ids == y.instance_ids
        np.testing.assert_array_equal(x.images, y.images)

    def test_round_trip(self, tmp_path):
        ds = make_synthetic(3, 4, 12, 5)
        write_image_folder(ds, tmp_path)
        m = SplitManifest("syn", 12, ds.class_names[:2], ["v"], ds.class_names[2:])
        back = load_image_folder(tmp_path, m, "test")
        np.testing.assert_allclose(back.images, ds.images[ds.labels == 2], atol=1 / 255 + 1e-6)


class TestManifest:
    def test_overlap_rejected(self):
        with pytest.raises(IngestionError):
            SplitManifest("x", 8, ["a", "b"], ["c"], ["b"])

    def test_empty_rejected(self):
        with pytest.raises(IngestionError):
            SplitManifest("x", 8, ["a"], [], ["b"])

    def test_save_load(self, tmp_path):
        m = manifest(["a"], ["b"])
        m.save(tmp_path / "m.json")
        assert SplitManifest.load(tmp_path / "m.json") == m

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestionError):
            SplitManifest.load(tmp_path / "nope.json")

    def test_miniimagenet_counts(self, tmp_path):
        names = [f"n{i:08d}" for i in range(100)]
        data = {"name": "miniImageNet", "image_size": 84, "train": names[:64],
                "val": names[64:80], "test": names[80:]}
        (tmp_path / "mini.json").write_text(json.dumps(data))
        m = SplitManifest.load(tmp_path / "mini.json")
        assert (len(m.train), len(m.val), len(m.test)) == MINIIMAGENET_SPLIT == (64, 16, 20)


class TestSynthetic:
    def test_counting_and_determinism(self):
        a, b = make_synthetic(2, 2, 16, 3), make_synthetic(2, 2, 16, 3)
        assert len(a) == 4 and a.num_classes == 2
        np.testing.assert_array_equal(a.images, b.images)
        assert a.instance_ids == b.instance_ids

    def test_seed_sensitivity(self):
        h = [hashlib.sha256(make_synthetic(2, 2, 16, s).images.tobytes()).hexdigest()
             for s in (0, 1)]
        assert h[0] != h[1]

    @pytest.mark.parametrize("args", [(1, 5, 16, 0), (3, 1, 16, 0), (300, 2, 16, 0),
                                      (3, 3, 4, 0)])
    def test_bounds(self, args):
        with pytest.raises(InputDomainError):
            make_synthetic(*args)

    def test_separability_oracle(self):
        ds = make_synthetic(10, 50, 32, 0)
        x = ds.images.reshape(len(ds), -1)
        clf = LogisticRegression(max_iter=2000).fit(x, ds.labels)
        assert clf.score(x, ds.labels) > 0.90


class TestSplit:
    def test_base_novel(self):
        base, novel = split_base_novel(make_synthetic(24, 3, 8, 0), 2 / 3)
        assert base.num_classes == 16 and novel.num_classes == 8
        assert not set(base.class_names) & set(novel.class_names)
        assert not set(base.instance_ids) & set(novel.instance_ids)
        assert base.role == "base" and novel.role == "novel"

    def test_too_few(self):
        with pytest.raises(InputDomainError):
            split_base_novel(make_synthetic(3, 2, 8, 0), 2 / 3)
