import struct

import numpy as np
import pytest

from lexmtl.checkpoint import (Checkpoint, capture, from_bytes, ids_only_vocab_hash,
                               load_checkpoint, restore, save_checkpoint, to_bytes)
from lexmtl.errors import (CheckpointFormatError, CheckpointTruncatedError,
                           CheckpointVersionError, VocabHashMismatchError)

from test_trainer import make_trainer

HASH = ids_only_vocab_hash()


@pytest.fixture(scope="module")
def trained():
    trainer = make_trainer(tasks=(("copy", 20), ("keyword-label", 12)))
    trainer.fit(4)
    return trainer


def test_save_load_save_is_byte_identical(tmp_path, trained):
    path = tmp_path / "a.mmlg"
    save_checkpoint(path, capture(trained, HASH))
    first = path.read_bytes()
    save_checkpoint(tmp_path / "b.mmlg", load_checkpoint(path))
    assert (tmp_path / "b.mmlg").read_bytes() == first
    assert first[:4] == b"MMLG"


def test_round_trip_preserves_contents(trained):
    ckpt = from_bytes(to_bytes(capture(trained, HASH)))
    assert ckpt.step == 4 and ckpt.opt_step == trained.opt.t
    for name, arr in trained.model.params.items():
        np.testing.assert_array_equal(ckpt.params[name], arr.data)
    assert ckpt.config["model"]["hidden_size"] == 16


def test_version_mismatch(trained):
    data = bytearray(to_bytes(capture(trained, HASH)))
    data[4:8] = struct.pack("<I", 99)
    with pytest.raises(CheckpointVersionError, match="99"):
        from_bytes(bytes(data))


def test_bad_magic_and_trailing_bytes(trained):
    data = to_bytes(capture(trained, HASH))
    with pytest.raises(CheckpointFormatError):
        from_bytes(b"XXXX" + data[4:])
    with pytest.raises(CheckpointFormatError, match="trailing"):
        from_bytes(data + b"\0")


@pytest.mark.parametrize("cut", [3, 10, 100, -1])
def test_truncated_files(trained, cut):
    data = to_bytes(capture(trained, HASH))
    with pytest.raises(CheckpointTruncatedError):
        from_bytes(data[:cut])


def test_vocab_hash_mismatch(trained):
    data = to_bytes(capture(trained, HASH))
    with pytest.raises(VocabHashMismatchError):
        from_bytes(data, expected_vocab_hash=b"\1" * 32)
    from_bytes(data, expected_vocab_hash=HASH)


def test_hash_length_checked():
    with pytest.raises(CheckpointFormatError):
        to_bytes(Checkpoint({}, b"short", {}))


def test_history_is_written_next_to_checkpoint(tmp_path):
    trainer = make_trainer(tasks=(("copy", 8),))
    trainer.fit(4, eval_every=2, patience=5)
    save_checkpoint(tmp_path / "c.mmlg", capture(trainer, HASH))
    back = load_checkpoint(tmp_path / "c.mmlg")
    assert [row["step"] for row in back.history] == [2, 4]


def test_resume_matches_uninterrupted_run(tmp_path):
    straight = make_trainer(seed=1)
    straight.fit(6)

    first = make_trainer(seed=1)
    first.fit(3)
    save_checkpoint(tmp_path / "r.mmlg", capture(first, HASH))
    resumed = make_trainer(seed=1)
    restore(resumed, load_checkpoint(tmp_path / "r.mmlg", HASH))
    assert resumed.step == 3
    resumed.fit(6)

    for a, b in zip(straight.state.loss_history[3:], resumed.state.loss_history):
        for name in a:
            assert b[name] == pytest.approx(a[name], rel=1e-6)
    assert set(resumed.state.updates.values()) == {6}
