"""
annotate.py
Interactive terminal re-annotation of a pending AnnotationSet with an append-only journal.
"""
import os
import shlex
import subprocess
from dataclasses import replace
from pathlib import Path

from config import PLAYER_ENV_VAR, VERDICT_TOKENS, VERDICT_WRITE
from logger import log_event, log_warning, log_error
from utils import JournalError
from .annotation import AnnotationSet, read_annotations, write_annotations, count_skipped

# Prompt answers -> verdicts
ANSWERS = {"0": 0, "1": 1, "s": -1, "skip": -1}
QUIT_ANSWERS = ("q", "quit")


def player_command(template, path):
    """
    Argument list for the player: '{path}' is replaced by the excerpt path, else the path is appended.
    Args:
        template: Player command from the environment, e.g. 'aplay -q {path}'
        path: Audio file path
    """
    argv = shlex.split(template)
    if not argv:
        raise ValueError("empty player command")
    if any("{path}" in arg for arg in argv):
        return [arg.replace("{path}", str(path)) for arg in argv]
    return argv + [str(path)]

def launch_player(argv):
    """
    Run the player to completion; returns (exit code, stderr text), 127 when the player is missing.
    Args:
        argv: Argument list from player_command
    """
    try:
        result = subprocess.run(argv, check=False, stdout=subprocess.DEVNULL, stderr=subprocess.PIPE, text=True)
    except OSError as e:
        return 127, str(e)
    return result.returncode, result.stderr.strip()

def journal_path(subsetPath):
    """Journal file that belongs to a subset file."""
    return Path(f"{subsetPath}.journal")

def read_journal(path):
    """
    Load journaled verdicts keyed by (track_id, tag, annotator).
    Args:
        path: Journal path (missing file = empty journal)
    """
    verdicts = {}
    path = Path(path)
    if not path.exists():
        return verdicts

    with open(path, "r", encoding="utf-8") as handle:
        for lineNumber, raw in enumerate(handle, 1):
            if not raw.endswith("\n"):
                raise JournalError(
                    f"{path}:{lineNumber}: incomplete last entry (session interrupted while writing). "
                    f"Delete that line from {path} and run annotate again to resume."
                )
            fields = raw.rstrip("\r\n").split("\t")
            if len(fields) != 4 or fields[2] not in VERDICT_TOKENS or VERDICT_TOKENS[fields[2]] is None:
                raise JournalError(
                    f"{path}:{lineNumber}: unreadable journal entry. Fix or delete that line, "
                    f"or remove {path} to restart the session from scratch."
                )
            trackId, tag, token, annotator = fields
            verdicts[(trackId, tag, annotator)] = VERDICT_TOKENS[token]
    return verdicts

def _append_journal(handle, record, verdict):
    handle.write(f"{record.trackId}\t{record.tag}\t{VERDICT_WRITE[verdict]}\t{record.annotator}\n")
    handle.flush()

def audio_hint(audioDir, trackId):
    """
    Path of a track's excerpt in an audio directory, or None.
    Args:
        audioDir: Directory holding '<track_id>.wav' files (None = no audio)
        trackId: Track id
    """
    if audioDir is None:
        return None
    path = Path(audioDir) / f"{trackId}.wav"
    return path if path.exists() else None

def play_excerpt(path, say=print):
    """
    Play an excerpt with the configured external player, or point to the file.
    Args:
        path: Audio file path
        say: Output function for messages shown to the annotator
    """
    player = os.environ.get(PLAYER_ENV_VAR)
    if not player:
        say(f"  audio: {path}")
        return False
    try:
        argv = player_command(player, path)
    except ValueError as e:
        log_warning(f"unusable ${PLAYER_ENV_VAR}: {e}")
        say(f"  audio: {path}")
        return False
    code, message = launch_player(argv)
    if code != 0:
        log_warning(f"player {argv[0]} exited with code {code}: {message}")
        say(f"  audio: {path}")
        return False
    return True

def annotate_session(subsetPath, outPath, audioDir=None, ask=input, say=print, seed=None):
    """
    Prompt for every unresolved (track, tag) record; resumable through the journal.
    Args:
        subsetPath: Annotation TSV with pending verdicts
        outPath: Final annotation TSV (written once every record is resolved)
        audioDir: Optional directory of '<track_id>.wav' excerpts
        ask: Prompt function returning the typed answer
        say: Output function for messages shown to the annotator
        seed: Seed recorded in the final file's provenance header
    Returns:
        (AnnotationSet with journaled verdicts applied, completed flag)
    """
    subset = read_annotations(subsetPath)
    journalFile = journal_path(subsetPath)
    journaled = read_journal(journalFile)
    if journaled:
        log_event(f"Resuming from {journalFile}: {len(journaled)} verdicts already recorded")

    def resolved(record):
        key = (record.trackId, record.tag, record.annotator)
        if key in journaled:
            return replace(record, verdict=journaled[key])
        return record

    records = [resolved(record) for record in subset.records]
    pending = [i for i, record in enumerate(records) if record.verdict is None]
    completed = True

    with open(journalFile, "a", encoding="utf-8") as journal:
        for done, position in enumerate(pending, 1):
            record = records[position]
            say(f"[{done}/{len(pending)}] track {record.trackId}  tag '{record.tag}'")
            hint = audio_hint(audioDir, record.trackId)
            if hint is not None:
                play_excerpt(hint, say)

            while True:
                answer = ask("  applies? 1 = yes, 0 = no, s = skip, q = quit: ").strip().lower()
                if answer in ANSWERS or answer in QUIT_ANSWERS:
                    break
                say("  please answer 1, 0, s or q")

            if answer in QUIT_ANSWERS:
                completed = False
                break
            verdict = ANSWERS[answer]
            _append_journal(journal, record, verdict)
            records[position] = replace(record, verdict=verdict)

    result = AnnotationSet(records=records, subsetKind=subset.subsetKind)
    skipped, remaining = count_skipped(result.records)
    if not completed:
        log_event(f"Session paused with {remaining} records left; run annotate again to resume")
        return result, False

    write_annotations(result, outPath, seed=seed)
    if skipped:
        log_warning(f"{skipped} records skipped; they are excluded from rate estimation")
    log_event(f"Annotation complete: {len(result)} records")
    return result, True

def safe_annotate_session(subsetPath, outPath, audioDir=None, ask=input, say=print, seed=None):
    """annotate_session that keeps the journal intact on Ctrl-C."""
    try:
        return annotate_session(subsetPath, outPath, audioDir, ask, say, seed)
    except (KeyboardInterrupt, EOFError) as e:
        log_error("Annotation interrupted; journal kept for resuming", e)
        return None, False
