import json

import pytest

from addressee.core import FormatError
from addressee.dataio import read_dataset, resolve_dataset_path, write_dataset


@pytest.fixture()
def dataset_file(tmp_path, tiny_utterances):
    path = tmp_path / "dataset.jsonl"
    write_dataset(tiny_utterances, path)
    return path


def test_round_trip_equality(dataset_file, tiny_utterances):
    back = read_dataset(dataset_file)
    assert len(back) == len(tiny_utterances)
    for a, b in zip(back, tiny_utterances):
        assert a == b


def test_write_is_deterministic(tmp_path, tiny_utterances):
    p1 = tmp_path / "a.jsonl"
    p2 = tmp_path / "b.jsonl"
    write_dataset(tiny_utterances, p1)
    write_dataset(tiny_utterances, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_resolve_dataset_path(tmp_path, dataset_file):
    assert resolve_dataset_path(dataset_file) == dataset_file
    assert resolve_dataset_path(dataset_file.parent) == dataset_file
    with pytest.raises(FileNotFoundError):
        resolve_dataset_path(tmp_path / "nowhere")


def test_empty_file_rejected(tmp_path):
    path = tmp_path / "dataset.jsonl"
    path.write_text("")
    with pytest.raises(FormatError):
        read_dataset(path)


def test_malformed_json_reports_line_number(dataset_file):
    lines = dataset_file.read_text().splitlines()
    lines[2] = "{not json"
    dataset_file.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="line 3"):
        read_dataset(dataset_file)


def test_missing_key_rejected(dataset_file):
    lines = dataset_file.read_text().splitlines()
    record = json.loads(lines[0])
    del record["label"]
    lines[0] = json.dumps(record)
    dataset_file.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="line 1"):
        read_dataset(dataset_file)


def test_bad_label_rejected(dataset_file):
    lines = dataset_file.read_text().splitlines()
    record = json.loads(lines[0])
    record["label"] = 7
    lines[0] = json.dumps(record)
    dataset_file.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError):
        read_dataset(dataset_file)


def test_frame_count_mismatch_rejected(dataset_file):
    lines = dataset_file.read_text().splitlines()
    record = json.loads(lines[0])
    assert record["kind"] == "utterance_header"
    record["n_frames"] += 1
    lines[0] = json.dumps(record)
    dataset_file.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="header says"):
        read_dataset(dataset_file)


def test_frame_outside_block_rejected(dataset_file):
    """Frames must follow their own header contiguously."""
    lines = dataset_file.read_text().splitlines()
    record = json.loads(lines[1])
    assert record["kind"] == "frame"
    record["utterance_id"] = "utt_elsewhere"
    lines[1] = json.dumps(record)
    dataset_file.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="outside its utterance block"):
        read_dataset(dataset_file)


def test_bad_pose_length_rejected(dataset_file):
    lines = dataset_file.read_text().splitlines()
    record = json.loads(lines[1])
    assert record["kind"] == "frame"
    record["pose"] = record["pose"][:-1]
    lines[1] = json.dumps(record)
    dataset_file.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="pose length 53"):
        read_dataset(dataset_file)


def test_truncated_tail_rejected(dataset_file):
    lines = dataset_file.read_text().splitlines()
    dataset_file.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(FormatError):
        read_dataset(dataset_file)


def test_header_without_frames_rejected(dataset_file, tiny_utterances):
    lines = dataset_file.read_text().splitlines()
    extra = {"kind": "utterance_header", "id": "utt_dangling", "label": 0,
             "speaker_id": "speaker0", "n_frames": 3}
    lines.append(json.dumps(extra))
    dataset_file.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="no frames"):
        read_dataset(dataset_file)
