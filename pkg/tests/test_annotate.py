import pytest

from utils import JournalError
from groundtruth.annotation import AnnotationRecord, AnnotationSet, write_annotations, read_annotations
from groundtruth.annotate import annotate_session, journal_path, read_journal, play_excerpt, player_command


def scripted(answers):
    queue = list(answers)

    def ask(prompt):
        return queue.pop(0)
    return ask


@pytest.fixture
def subset_file(tmp_path):
    records = [AnnotationRecord(f"t{i:03d}", "rock", None, "ann") for i in range(3)]
    path = tmp_path / "subset.tsv"
    write_annotations(AnnotationSet(records, "balanced"), path)
    return path


def test_session_completes_and_writes_output(subset_file, tmp_path):
    out = tmp_path / "done.tsv"
    messages = []
    result, completed = annotate_session(subset_file, out, ask=scripted(["1", "0", "s"]), say=messages.append)
    assert completed
    assert [record.verdict for record in result.records] == [1, 0, -1]
    assert read_annotations(out).records == result.records
    assert read_annotations(out).subsetKind == "balanced"


def test_invalid_answers_are_asked_again(subset_file, tmp_path):
    messages = []
    result, completed = annotate_session(
        subset_file, tmp_path / "done.tsv", ask=scripted(["yes", "1", "1", "0"]), say=messages.append
    )
    assert completed
    assert [record.verdict for record in result.records] == [1, 1, 0]
    assert any("please answer" in message for message in messages)


def test_quit_then_resume_from_journal(subset_file, tmp_path):
    out = tmp_path / "done.tsv"
    result, completed = annotate_session(subset_file, out, ask=scripted(["1", "q"]), say=lambda _: None)
    assert not completed
    assert not out.exists()
    assert read_journal(journal_path(subset_file)) == {("t000", "rock", "ann"): 1}

    prompts = []

    def ask(prompt):
        prompts.append(prompt)
        return "0"
    result, completed = annotate_session(subset_file, out, ask=ask, say=lambda _: None)
    assert completed
    assert len(prompts) == 2
    assert [record.verdict for record in result.records] == [1, 0, 0]


def test_truncated_journal_entry_is_reported(subset_file):
    journal_path(subset_file).write_text("t000\trock\t1\tann\nt001\trock", encoding="utf-8")
    with pytest.raises(JournalError, match="incomplete last entry"):
        read_journal(journal_path(subset_file))


def test_excerpt_without_player_shows_path(monkeypatch, tmp_path):
    monkeypatch.delenv("TAGNOISE_PLAYER", raising=False)
    messages = []
    assert play_excerpt(tmp_path / "t000.wav", messages.append) is False
    assert "t000.wav" in messages[0]


def test_excerpt_with_player(monkeypatch, tmp_path):
    monkeypatch.setenv("TAGNOISE_PLAYER", "true {path}")
    assert play_excerpt(tmp_path / "t000.wav", lambda _: None) is True


def test_player_command_places_the_path(tmp_path):
    path = tmp_path / "my track.wav"
    assert player_command("aplay -q {path}", path) == ["aplay", "-q", str(path)]
    assert player_command("afplay", path) == ["afplay", str(path)]
    assert player_command("'my player' --file={path}", path) == ["my player", f"--file={path}"]
    with pytest.raises(ValueError):
        player_command("   ", path)


def test_excerpt_with_failing_or_missing_player(monkeypatch, tmp_path):
    messages = []
    monkeypatch.setenv("TAGNOISE_PLAYER", "false {path}")
    assert play_excerpt(tmp_path / "t000.wav", messages.append) is False
    monkeypatch.setenv("TAGNOISE_PLAYER", "tagnoise-no-such-player-xyz")
    assert play_excerpt(tmp_path / "t001.wav", messages.append) is False
    monkeypatch.setenv("TAGNOISE_PLAYER", "'unbalanced")
    assert play_excerpt(tmp_path / "t002.wav", messages.append) is False
    assert ["t000.wav" in messages[0], "t001.wav" in messages[1], "t002.wav" in messages[2]] == [True] * 3
