'''
config.py
Configuration settings for the tag-noise toolkit.
Edit the marked parameters to change toolkit-wide defaults.
DO NOT EDIT ANY OTHER PART OF THIS FILE.
'''
import re

# Editable parameters:
TOOL_NAME = "tagnoise"
TOOL_VERSION = "0.1.0"

# Logging
LOG_DIR = "logs"                # Directory for session log files
DEFAULT_LOG_LEVEL = "INFO"      # DEBUG, INFO, WARNING or ERROR

# Audio frontend settings
TARGET_SAMPLE_RATE = 12000      # Hz after downmix/resample
SUPPORTED_RATES = (8000, 11025, 12000, 16000, 22050, 44100, 48000)
RESAMPLE_ZERO_CROSSINGS = 64    # Sinc zero-crossings per side of the interpolation filter
RESAMPLE_KAISER_BETA = 8.6      # Kaiser window shape
N_FFT = 512                     # FFT size (samples)
HOP_LENGTH = 256                # 50% overlap
N_MELS = 96                     # Mel bins
MEL_FMIN = 0.0                  # Lowest mel band edge (Hz)
MEL_FMAX = 6000.0               # Highest mel band edge (Hz)
LOG_FLOOR = 1e-10               # Floor before log10 (-100 dB)
SPECTRUM_POWER = 2.0            # 2.0 = power mel spectrogram, 1.0 = magnitude
TARGET_FRAMES = 1360            # Fixed network input width
DEGENERATE_STD = 1e-8           # Below this a spectrogram is treated as constant

# Bootstrap settings
BOOTSTRAP_RESAMPLES = 2000      # Resamples per confidence interval
BOOTSTRAP_LEVEL = 0.95          # Two-sided confidence level
BOOTSTRAP_MAX_UNDEFINED = 0.5   # Max fraction of resamples allowed to be undefined

# Network defaults (compact-convnet)
DEFAULT_CHANNELS = 32
DEFAULT_KERNEL = (3, 3)
DEFAULT_POOLS = ((2, 4), (4, 4), (4, 5), (2, 4), (4, 4))
DEFAULT_OUTPUTS = 50
DEFAULT_INPUT_SHAPE = (1, 96, 1360)
ELU_ALPHA = 1.0
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9               # Fraction of the old running statistic kept per step

# Training defaults
LEARNING_RATE = 1e-3
ADAM_BETAS = (0.9, 0.999)
ADAM_EPSILON = 1e-8
BATCH_SIZE = 16
MAX_EPOCHS = 50
PATIENCE = 5
PRECISION = "f32"               # f32 for training, f64 for gradient checking

# Analysis settings
DIVERGENCE_LVS_TOP = 20         # LVS rank at or above which a pair may diverge
DIVERGENCE_NCO_BOTTOM = 100     # NCO rank at or below which a pair diverges
OVERLAP_TOP_K = 20              # Top-k window for LVS/NCO overlap counting

# Annotation
PLAYER_ENV_VAR = "TAGNOISE_PLAYER"  # Shell command used to play an excerpt, e.g. "aplay {path}"
DEFAULT_ANNOTATOR = "annotator"

# Reference prevalence inputs (tag, N+, p_pos, p_neg); T is the number of tracks
REFERENCE_TOTAL = 242842
REFERENCE_INPUTS = (
    ("instrumental", 8424, 0.06, 0.12),
    ("female vocalists", 17840, 0.04, 0.24),
    ("male vocalists", 3026, 0.02, 0.64),
    ("guitar", 3311, 0.02, 0.70),
)
REFERENCE_PER_CLASS = 50        # Balanced subset size per class behind the reference rates

"""DO NOT EDIT BELOW THIS LINE"""
# Pre-compiled regex patterns
KEY_VALUE_PATTERN = re.compile(r'^\s*([A-Za-z_][\w.]*)\s*=\s*(.*?)\s*$')   # key = value
COMMENT_PATTERN = re.compile(r'^\s*(?:#|$)')                               # comment or blank
SUBSET_KIND_PATTERN = re.compile(r'^#\s*subset_kind:\s*(balanced|random)\s*$')

# Split assignments stored as one byte per track
SPLIT_CODES = {"none": 0, "train": 1, "valid": 2, "test": 3}
SPLIT_NAMES = {code: name for name, code in SPLIT_CODES.items()}

# Annotation verdict tokens (None = pending)
VERDICT_TOKENS = {"0": 0, "1": 1, "?": None, "skip": -1}
VERDICT_SKIP = -1
VERDICT_WRITE = {0: "0", 1: "1", None: "?", -1: "skip"}

# Binary file formats
TAGM_MAGIC = b"TAGM"
TAGM_VERSION = 1
MELS_MAGIC = b"MELS"
MELS_VERSION = 1
CCNN_MAGIC = b"CCNN"
CCNN_VERSION = 1
DTYPE_CODES = {"float32": 1, "float64": 2}
DTYPE_NAMES = {code: name for name, code in DTYPE_CODES.items()}

# Architecture presets (name -> (channels, pools, input shape))
ARCH_PRESETS = {
    "full": (DEFAULT_CHANNELS, DEFAULT_POOLS, DEFAULT_INPUT_SHAPE),
    "sweep": (8, ((2, 4), (4, 4), (4, 4)), (1, 96, 128)),
    "tiny": (4, ((2, 2), (2, 2)), (1, 8, 8)),
}

# Process-wide flags, read and written through utils accessors
_threadCount = 1
_commandLine = ""
