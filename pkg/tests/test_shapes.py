import json
import zlib

import numpy as np
import pytest

from layoutguide.layout import BoundingBox
from layoutguide.shapes import DatasetSpec, dump_dataset, generate_dataset, make_sample, shape_mask
from layoutguide.vocab import COLORS, TOKEN, detokenize

SPEC = DatasetSpec()


def first(seed, n=1):
    g = generate_dataset(SPEC, seed)
    return [next(g) for _ in range(n)]


def test_same_seed_same_first_image():
    a, b = first(11)[0], first(11)[0]
    assert zlib.crc32(a.image.tobytes()) == zlib.crc32(b.image.tobytes())
    assert a.tokens == b.tokens
    assert zlib.crc32(first(12)[0].image.tobytes()) != zlib.crc32(a.image.tobytes())


def test_boxes_satisfy_invariants_and_contain_pixels():
    for s in first(3, 200):
        assert 1 <= len(s.boxes) <= 3
        for box, label in zip(s.boxes, s.labels):
            assert isinstance(box, BoundingBox)
            assert 0 <= box.x0 < box.x1 <= 1 and 0 <= box.y0 < box.y1 <= 1
            color = COLORS[label.split()[0]]
            hit = np.all(s.image == color, axis=-1)
            rows, cols = np.nonzero(hit)
            assert rows.size > 0
            # pixel scan: every pixel of this color lies within the box
            H, W = hit.shape
            for r, c in zip(rows, cols):
                assert box.x0 * W <= c < box.x1 * W and box.y0 * H <= r < box.y1 * H
            # and the box is tight
            assert rows.min() == round(box.y0 * H) and rows.max() + 1 == round(box.y1 * H)
            assert cols.min() == round(box.x0 * W) and cols.max() + 1 == round(box.x1 * W)


def test_caption_positions_point_at_words():
    for s in first(4, 50):
        words = detokenize(s.tokens).split()
        for p, label in zip(s.color_positions, s.labels):
            color, shape = label.split()
            assert s.tokens[p] == TOKEN[color]
        for p, label in zip(s.shape_positions, s.labels):
            assert s.tokens[p] == TOKEN[label.split()[1]]
        assert " ".join(words) == s.caption


def test_layout_from_sample():
    s = make_sample(np.random.default_rng(0), SPEC, 2)
    lay = s.layout("color")
    assert lay.token_indices == s.color_positions
    assert s.layout("shape").token_indices == s.shape_positions


@pytest.mark.parametrize("kind", ["square", "circle", "triangle"])
def test_shape_masks_nonempty_and_bounded(kind):
    m = shape_mask(kind, 4, 6, 10, 32)
    assert m.any()
    rows, cols = np.nonzero(m)
    assert rows.min() >= 6 and rows.max() < 16 and cols.min() >= 4 and cols.max() < 14


def test_unknown_shape():
    with pytest.raises(ValueError):
        shape_mask("hexagon", 0, 0, 4, 8)


def test_dump_dataset(tmp_path):
    idx = dump_dataset(first(5, 3), tmp_path)
    entries = json.loads(idx.read_text())
    assert len(entries) == 3
    data = (tmp_path / entries[0]["file"]).read_bytes()
    assert data.startswith(b"P6\n32 32\n255\n")
    assert len(data) == len(b"P6\n32 32\n255\n") + 32 * 32 * 3
