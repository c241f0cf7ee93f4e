"""
logger.py
Session log of a tagnoise command: entries are queued and written to disk by a background thread.
"""
import queue
import sys
import threading
from datetime import datetime
from pathlib import Path

from config import LOG_DIR, DEFAULT_LOG_LEVEL


LEVELS = {"DEBUG": 10, "INFO": 20, "WARNING": 30, "ERROR": 40}

# Session state shared by all modules
_logQueue = queue.Queue()
_loggingThread = None
_logFile = None
_stopLogging = False
_threshold = LEVELS[DEFAULT_LOG_LEVEL]

def initialize_logger(logDir=LOG_DIR, level=DEFAULT_LOG_LEVEL):
    """
    Initialize the logging system and create the log file.
    Args:
        logDir: Directory that receives the session log
        level: Minimum level written and echoed
    """
    global _loggingThread, _logFile, _stopLogging

    set_level(level)
    _stopLogging = False

    logsDir = Path(logDir)
    logsDir.mkdir(parents=True, exist_ok=True)

    # One file per session minute; reruns within the minute append
    now = datetime.now()
    logFilename = f"LOG {now.strftime('%d_%m %H_%M')}.txt"
    logPath = logsDir / logFilename

    _logFile = open(logPath, 'a', encoding='utf-8')

    # Writer drains the queue until the sentinel arrives
    _loggingThread = threading.Thread(target=_logging_worker, daemon=True)
    _loggingThread.start()

    log_message(
        f"=== Log started at {now.strftime('%Y-%m-%d %H:%M:%S')} ===",
        printToConsole=False
    )

    return str(logPath)

def set_level(level):
    """
    Set the minimum level for logged entries.
    Args:
        level: Level name (DEBUG, INFO, WARNING, ERROR)
    """
    global _threshold
    name = str(level).upper()
    if name not in LEVELS:
        raise ValueError(f"unknown log level '{level}'")
    _threshold = LEVELS[name]

def _logging_worker():
    """Write queued entries to the session file until stopped."""
    while not _stopLogging:
        try:
            message = _logQueue.get(timeout=0.1)

            # Sentinel value stops the worker
            if message is None:
                break

            _logFile.write(message + '\n')
            _logFile.flush()

        except queue.Empty:
            continue
        except Exception as e:
            print(f"Logging error: {e}", file=sys.stderr)

def log_message(message, printToConsole=True, level="INFO"):
    """
    Queue one log entry and echo it to stderr.
    Args:
        message: Message to log
        printToConsole: Whether to also echo to stderr (default: True)
        level: Level name of the entry
    """
    if LEVELS.get(level, 20) < _threshold:
        return

    # [HH:MM:SS.mmm] LEVEL message
    timestamp = datetime.now().strftime('%H:%M:%S.%f')[:-3]
    logEntry = f"[{timestamp}] {level:<7} {message}"

    # stdout is reserved for command output
    if printToConsole:
        print(message, file=sys.stderr)

    if _logFile is None:
        return
    try:
        _logQueue.put_nowait(logEntry)
    except queue.Full:
        pass

def log_event(eventMessage):
    """
    Log a progress message (files read, counts, chosen seeds).
    Args:
        eventMessage: Message text
    """
    log_message(eventMessage)

def log_debug(debugMessage):
    """
    Log a diagnostic message (file only unless the level is DEBUG).
    Args:
        debugMessage: Message text
    """
    log_message(debugMessage, level="DEBUG")

def log_warning(warningMessage):
    """
    Log a warning that does not abort the current operation.
    Args:
        warningMessage: Warning description
    """
    log_message(f"WARNING: {warningMessage}", level="WARNING")

def log_error(errorMessage, exception=None):
    """
    Log a failure that ends the current command.
    Args:
        errorMessage: What failed
        exception: Exception whose text is appended (optional)
    """
    if exception:
        message = f"ERROR: {errorMessage} - {str(exception)}"
    else:
        message = f"ERROR: {errorMessage}"

    log_message(message, level="ERROR")

def log_artifact(path, kind=None):
    """
    Log an artifact written to disk.
    Args:
        path: Path of the written file
        kind: Short artifact description (optional)
    """
    if kind:
        log_message(f"Wrote {kind}: {path}")
    else:
        log_message(f"Wrote {path}")

def log_epoch(epoch, trainLoss, validLoss, validAuc, wallSeconds):
    """
    Log one training epoch summary.
    Args:
        epoch: Epoch number (1-based)
        trainLoss: Mean training loss of the epoch
        validLoss: Validation loss
        validAuc: Macro validation AUC (None when undefined)
        wallSeconds: Elapsed seconds since training start
    """
    aucText = "undefined" if validAuc is None else f"{validAuc:.4f}"
    log_message(
        f"Epoch {epoch}: train_loss={trainLoss:.5f} valid_loss={validLoss:.5f} "
        f"valid_auc={aucText} ({wallSeconds:.1f}s)"
    )

def cleanup_logger():
    """Flush pending entries, stop the writer and close the session file."""
    global _loggingThread, _logFile, _stopLogging

    try:
        if _logFile:
            log_message("=== Log ended ===", printToConsole=False)

        # Sentinel stops the writer after the queued entries
        if _loggingThread and _loggingThread.is_alive():
            _logQueue.put(None)
            _loggingThread.join(timeout=2.0)
        _stopLogging = True
        _loggingThread = None

        if _logFile:
            _logFile.close()
            _logFile = None

    except Exception as e:
        print(f"Error cleaning up logger: {e}", file=sys.stderr)
