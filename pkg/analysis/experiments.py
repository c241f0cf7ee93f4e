"""
experiments.py
Synthetic noise-effect harness: mel-domain tag templates, forward label noise,
training on noisy labels and evaluation against clean and noisy test labels.
"""
from dataclasses import dataclass, field, fields, replace

import numpy as np

from config import N_MELS
from logger import log_event, log_warning
from utils import TagNoiseError, ParseError, make_rng, parse_key_value_file, config_hash
from groundtruth.cooccur import compute_nco
from groundtruth.noise import NoiseSpec, inject_noise, quality_from_counts
from groundtruth.tagdata import build_vocabulary, build_label_matrix
from frontend.melspec import MelSpectrogram, standardize
from network.checkpoint import extract_label_vectors
from network.convnet import ArchSpec, arch_preset
from network.train import TrainConfig, FeatureSet, train, predict
from .lvs import compute_lvs, compare_lvs_nco
from .metrics import evaluate, pearson, spearman


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Per-tag values (centers, bandwidths, energies, priors, dropRates, spuriousRates)
    accept a scalar or one value per tag; coactivation holds (tag_a, tag_b, weight).
    """
    nTags: int = 8
    nTrain: int = 480
    nValid: int = 120
    nTest: int = 400
    nMels: int = N_MELS
    nFrames: int = 128
    centers: tuple = ()
    bandwidths: object = 3.0
    energies: object = 0.6
    priors: object = 0.3
    coactivation: tuple = ()
    noiseLevel: float = 1.0
    dropRates: object = 0.0
    spuriousRates: object = 0.0
    seed: int = 0
    tags: tuple = ()

    def __post_init__(self):
        if self.nTags < 1:
            raise TagNoiseError("n_tags must be at least 1")
        if min(self.nTrain, self.nValid, self.nTest) < 1:
            raise TagNoiseError("every split needs at least one track")
        tags = tuple(self.tags) or tuple(f"tag{k}" for k in range(self.nTags))
        centers = tuple(self.centers) or tuple(int((k + 0.5) * self.nMels / self.nTags) for k in range(self.nTags))
        object.__setattr__(self, "tags", tags)
        object.__setattr__(self, "centers", tuple(float(c) for c in self._per_tag(centers, "centers")))
        for name in ("bandwidths", "energies", "priors", "dropRates", "spuriousRates"):
            object.__setattr__(self, name, tuple(float(v) for v in self._per_tag(getattr(self, name), name)))
        object.__setattr__(self, "coactivation", tuple((a, b, float(w)) for a, b, w in self.coactivation))

        if len(tags) != self.nTags or len(set(tags)) != self.nTags:
            raise TagNoiseError("need one unique name per tag")
        if any(not 0 <= c < self.nMels for c in self.centers):
            raise TagNoiseError(f"template centers must lie within the {self.nMels} mel bins")
        if any(b <= 0 for b in self.bandwidths):
            raise TagNoiseError("template bandwidths must be positive")
        if any(not 0.0 <= p <= 1.0 for p in self.priors):
            raise TagNoiseError("tag priors must be in [0, 1]")
        if not any(p > 0 for p in self.priors):
            raise TagNoiseError("degenerate spec: every tag prior is 0")
        if any(not 0.0 <= d < 1.0 for d in self.dropRates):
            raise TagNoiseError("drop rates must be in [0, 1)")
        if any(not 0.0 <= s <= 1.0 for s in self.spuriousRates):
            raise TagNoiseError("spurious rates must be in [0, 1]")
        for a, b, w in self.coactivation:
            if a not in tags or b not in tags or not 0.0 <= w <= 1.0:
                raise TagNoiseError(f"invalid co-activation ({a}, {b}, {w})")

    def _per_tag(self, value, name):
        if isinstance(value, (int, float)):
            return (value,) * self.nTags
        value = tuple(value)
        if len(value) != self.nTags:
            raise TagNoiseError(f"{name} needs {self.nTags} values, got {len(value)}")
        return value

    @property
    def nTracks(self):
        return self.nTrain + self.nValid + self.nTest

    @property
    def noiseSeed(self):
        return self.seed + 1


@dataclass(frozen=True)
class ExperimentResult:
    tags: tuple
    dropRates: tuple
    tagability: tuple
    aucClean: tuple
    aucNoisy: tuple
    tagabilityVsClean: object
    tagabilityVsNoisy: object
    cleanVsNoisy: object
    seed: int = 0
    configText: str = ""
    params: object = None
    trainLog: list = field(default_factory=list)
    nco: object = None
    lvs: object = None
    lvsComparison: object = None
    noiseReport: object = None

    @property
    def configHash(self):
        return config_hash(self.configText)


PRESETS = {
    "sweep8": {
        "synthetic": SyntheticSpec(
            nTags=8,
            dropRates=(0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7),
            coactivation=(("tag0", "tag1", 0.2), ("tag4", "tag5", 0.2))
        ),
        "arch": "sweep",
        "train": TrainConfig(batchSize=16, maxEpochs=30, patience=5, seed=0),
    },
    "separable": {
        "synthetic": SyntheticSpec(
            nTags=2,
            nTrain=200,
            nValid=100,
            nTest=100,
            centers=(20, 70),
            bandwidths=4.0,
            energies=3.0,
            priors=0.5,
            noiseLevel=0.3
        ),
        "arch": "sweep",
        "train": TrainConfig(batchSize=16, maxEpochs=20, patience=20, seed=0),
    },
}


def experiment_preset(name):
    """
    (SyntheticSpec, ArchSpec, TrainConfig) of a named preset.
    Args:
        name: 'sweep8' or 'separable'
    """
    if name not in PRESETS:
        raise TagNoiseError(f"unknown experiment preset '{name}' (choose from {', '.join(PRESETS)})")
    preset = PRESETS[name]
    spec = preset["synthetic"]
    arch = arch_preset(preset["arch"], spec.nTags)
    return spec, arch, preset["train"]

def _template(spec, k):
    bins = np.arange(spec.nMels, dtype=np.float64)
    return spec.energies[k] * np.exp(-0.5 * ((bins - spec.centers[k]) / spec.bandwidths[k]) ** 2)

def _sample_tags(spec, rng, weights):
    """One non-empty true tag set: prior draws, then one co-activation pass in tag order."""
    priors = np.asarray(spec.priors)
    while True:
        active = rng.random(spec.nTags) < priors
        for a in range(spec.nTags):
            if active[a]:
                active |= rng.random(spec.nTags) < weights[a]
        if active.any():
            return active

def generate_synthetic(spec):
    """
    Synthetic mel features and clean labels with train/valid/test splits.
    Args:
        spec: SyntheticSpec
    Returns:
        (FeatureSet of shape (N, 1, nMels, nFrames), clean LabelMatrix)
    """
    rng = make_rng(spec.seed)
    weights = np.zeros((spec.nTags, spec.nTags))
    for a, b, w in spec.coactivation:
        weights[spec.tags.index(a), spec.tags.index(b)] = w
    templates = np.stack([_template(spec, k) for k in range(spec.nTags)])

    trackIds = [f"syn{index:06d}" for index in range(spec.nTracks)]
    active = np.zeros((spec.nTracks, spec.nTags), dtype=bool)
    values = np.zeros((spec.nTracks, 1, spec.nMels, spec.nFrames), dtype=np.float32)
    for row, trackId in enumerate(trackIds):
        active[row] = _sample_tags(spec, rng, weights)
        mix = spec.noiseLevel * rng.standard_normal((spec.nMels, spec.nFrames))
        for k in np.flatnonzero(active[row]):
            envelope = rng.uniform(0.5, 1.5, size=spec.nFrames)
            mix += templates[k][:, None] * envelope[None, :]
        values[row, 0] = standardize(MelSpectrogram(values=mix.astype(np.float32), sourceId=trackId)).values

    split = np.concatenate([
        np.full(spec.nTrain, 1, dtype=np.uint8),
        np.full(spec.nValid, 2, dtype=np.uint8),
        np.full(spec.nTest, 3, dtype=np.uint8),
    ])
    counts = {tag: int(active[:, k].sum()) for k, tag in enumerate(spec.tags)}
    vocab = build_vocabulary(counts, spec.nTags)
    trackTags = {trackId: [spec.tags[k] for k in np.flatnonzero(active[row])] for row, trackId in enumerate(trackIds)}
    clean = build_label_matrix(trackIds, trackTags, vocab, split)
    log_event(f"Generated {spec.nTracks} synthetic tracks, {spec.nTags} tags, seed {spec.seed}")
    return FeatureSet(tuple(trackIds), values), clean

def check_contamination(clean, noisy, noiseReport):
    """
    Clean and noisy matrices must differ exactly where injection flipped entries.
    Args:
        clean: LabelMatrix
        noisy: LabelMatrix from inject_noise(clean, ...)
        noiseReport: NoiseReport of that injection
    """
    differs = clean.dense() != noisy.dense()
    if not np.array_equal(differs, noiseReport.flipMask):
        raise TagNoiseError("noisy labels differ from clean labels outside the injected flips")
    if clean.trackIds != noisy.trackIds or not np.array_equal(clean.split, noisy.split):
        raise TagNoiseError("clean and noisy matrices are not aligned")

def tagability_from_matrices(clean, noisy, split="test"):
    """
    Recall of the noisy labels against the clean ones, per tag, on one split.
    Args:
        clean: LabelMatrix of true labels
        noisy: LabelMatrix of observed labels
        split: Split name
    """
    rows = clean.split_mask(split)
    truth = clean.dense()[rows].astype(bool)
    observed = noisy.dense()[rows].astype(bool)
    values = []
    for k in range(truth.shape[1]):
        tp = int(np.sum(observed[:, k] & truth[:, k]))
        fp = int(np.sum(observed[:, k] & ~truth[:, k]))
        fn = int(np.sum(~observed[:, k] & truth[:, k]))
        values.append(quality_from_counts(tp, fp, fn)[1])
    return values

def _safe_correlation(function, x, y):
    pairs = [(a, b) for a, b in zip(x, y) if a is not None and b is not None]
    if len(pairs) < 3:
        return None
    return function([a for a, _ in pairs], [b for _, b in pairs])

def result_correlations(tagability, aucClean, aucNoisy):
    """
    spearman(tagability, AUC vs clean), spearman(tagability, AUC vs noisy) and
    pearson(AUC vs clean, AUC vs noisy); None where undefined.
    """
    return (
        _safe_correlation(spearman, tagability, aucClean),
        _safe_correlation(spearman, tagability, aucNoisy),
        _safe_correlation(pearson, aucClean, aucNoisy),
    )

def run_noise_sweep(spec, arch, trainConfig, configText=""):
    """
    Train on noise-injected labels and evaluate test scores against clean and noisy labels.
    Args:
        spec: SyntheticSpec with a drop-rate schedule
        arch: ArchSpec with n_outputs == n_tags and input (1, nMels, nFrames)
        trainConfig: TrainConfig
        configText: Canonical configuration recorded in the result
    """
    if arch.inputShape != (1, spec.nMels, spec.nFrames):
        raise TagNoiseError(f"architecture input {arch.inputShape} does not match synthetic features (1, {spec.nMels}, {spec.nFrames})")
    if len(set(spec.dropRates)) < min(spec.nTags, 2) and spec.nTags > 1:
        log_warning("drop-rate schedule is constant across tags; tagability correlations will be undefined")

    features, clean = generate_synthetic(spec)
    noiseSpec = NoiseSpec(
        dropRates=dict(zip(spec.tags, spec.dropRates)),
        spuriousRates=dict(zip(spec.tags, spec.spuriousRates)),
        seed=spec.noiseSeed
    )
    noisy, noiseReport = inject_noise(clean, noiseSpec)
    check_contamination(clean, noisy, noiseReport)

    def rows(split):
        return np.flatnonzero(clean.split_mask(split))

    trainSet, validSet, testSet = (features.subset(rows(split)) for split in ("train", "valid", "test"))
    params, trainLog = train(arch, trainConfig, trainSet, validSet, noisy)
    scores = predict(params, testSet, trainConfig.batchSize)

    reportClean = evaluate(scores, testSet.trackIds, params.tags, clean)
    reportNoisy = evaluate(scores, testSet.trackIds, params.tags, noisy)
    tagability = tagability_from_matrices(clean, noisy, "test")
    tags = clean.vocab.tags
    dropRates = tuple(noiseSpec.dropRates[tag] for tag in tags)

    nco = compute_nco(noisy, "train")
    sim = compute_lvs(extract_label_vectors(params, "experiment"))
    comparison = compare_lvs_nco(sim, nco) if len(tags) >= 3 else None

    vsClean, vsNoisy, cleanVsNoisy = result_correlations(tagability, reportClean.aucs, reportNoisy.aucs)
    result = ExperimentResult(
        tags=tuple(tags),
        dropRates=dropRates,
        tagability=tuple(tagability),
        aucClean=reportClean.aucs,
        aucNoisy=reportNoisy.aucs,
        tagabilityVsClean=vsClean,
        tagabilityVsNoisy=vsNoisy,
        cleanVsNoisy=cleanVsNoisy,
        seed=spec.seed,
        configText=configText or config_text(spec, arch, trainConfig),
        params=params,
        trainLog=trainLog,
        nco=nco,
        lvs=sim,
        lvsComparison=comparison,
        noiseReport=noiseReport
    )
    log_event(
        f"Sweep done: spearman(tagability, AUC clean)={result.tagabilityVsClean}, "
        f"pearson(AUC clean, AUC noisy)={result.cleanVsNoisy}"
    )
    return result

# ---- configuration files ----------------------------------------------------

_SYNTHETIC_KEYS = {
    "n_tags": ("nTags", int),
    "n_train": ("nTrain", int),
    "n_valid": ("nValid", int),
    "n_test": ("nTest", int),
    "n_mels": ("nMels", int),
    "n_frames": ("nFrames", int),
    "centers": ("centers", "floats"),
    "bandwidths": ("bandwidths", "floats"),
    "energies": ("energies", "floats"),
    "priors": ("priors", "floats"),
    "coactivation": ("coactivation", "triples"),
    "noise_level": ("noiseLevel", float),
    "drop_rates": ("dropRates", "floats"),
    "spurious_rates": ("spuriousRates", "floats"),
    "seed": ("seed", int),
    "tags": ("tags", "strings"),
}
_TRAIN_KEYS = {
    "learning_rate": ("learningRate", float),
    "betas": ("betas", "floats"),
    "epsilon": ("epsilon", float),
    "batch_size": ("batchSize", int),
    "max_epochs": ("maxEpochs", int),
    "patience": ("patience", int),
    "seed": ("seed", int),
    "precision": ("precision", str),
}
_ARCH_KEYS = ("preset", "channels", "pools", "input_shape")


def _convert(kind, text):
    if kind == "floats":
        values = tuple(float(part) for part in text.split(","))
        return values[0] if len(values) == 1 else values
    if kind == "strings":
        return tuple(part.strip() for part in text.split(","))
    if kind == "triples":
        triples = []
        for item in text.split(","):
            if not item.strip():
                continue
            a, b, w = item.strip().split(":")
            triples.append((a.strip(), b.strip(), float(w)))
        return tuple(triples)
    return kind(text)

def _parse_pools(text):
    pools = tuple(tuple(int(v) for v in item.strip().split("x")) for item in text.split(","))
    if any(len(pool) != 2 for pool in pools):
        raise ValueError(f"pools must be 'HxW' items, got '{text}'")
    return pools

def _convert_arch(name, text):
    if name == "preset":
        return text
    if name == "pools":
        return _parse_pools(text)
    # channels (one count or one per block) and input_shape
    return tuple(int(part) for part in text.split(","))

def load_experiment_config(path):
    """
    Read a 'key = value' experiment file with synthetic.*, arch.* and train.* keys.
    An optional 'preset = <name>' line supplies the starting values. The config.txt of a
    result directory is a valid input.
    Args:
        path: Config file path
    Returns:
        (SyntheticSpec, ArchSpec, TrainConfig)
    """
    values = parse_key_value_file(path)
    try:
        spec, _, trainConfig = experiment_preset(values.pop("preset", "sweep8"))
    except TagNoiseError as e:
        raise ParseError(str(e), path)
    syntheticChanges = {}
    trainChanges = {}
    archValues = {}

    for key, text in values.items():
        section, _, name = key.partition(".")
        try:
            if section == "synthetic" and name in _SYNTHETIC_KEYS:
                attribute, kind = _SYNTHETIC_KEYS[name]
                syntheticChanges[attribute] = _convert(kind, text)
            elif section == "train" and name in _TRAIN_KEYS:
                attribute, kind = _TRAIN_KEYS[name]
                trainChanges[attribute] = _convert(kind, text)
            elif section == "arch" and name in _ARCH_KEYS:
                archValues[name] = _convert_arch(name, text)
            else:
                raise ParseError(f"unknown key '{key}'", path)
        except ValueError as e:
            raise ParseError(f"bad value for '{key}': {e}", path)

    # Per-tag tuples follow n_tags when only the count changes
    if "nTags" in syntheticChanges and "centers" not in syntheticChanges:
        syntheticChanges["centers"] = ()
    if "nTags" in syntheticChanges and "tags" not in syntheticChanges:
        syntheticChanges["tags"] = ()
    base = {f.name: getattr(spec, f.name) for f in fields(SyntheticSpec)}
    if "nTags" in syntheticChanges:
        for name in ("bandwidths", "energies", "priors", "dropRates", "spuriousRates"):
            if name not in syntheticChanges and len(set(base[name])) == 1:
                base[name] = base[name][0]
        if "dropRates" not in syntheticChanges and len(set(base["dropRates"])) > 1:
            raise ParseError("synthetic.n_tags changed; give synthetic.drop_rates for the new tag count", path)
        if "coactivation" not in syntheticChanges:
            base["coactivation"] = ()
    base.update(syntheticChanges)
    try:
        spec = SyntheticSpec(**base)
        arch = arch_preset(archValues.get("preset", "sweep"), spec.nTags)
        if "channels" in archValues or "pools" in archValues:
            pools = archValues.get("pools", arch.pools)
            channels = archValues.get("channels", arch.channels[:1])
            if len(channels) == 1:
                channels = channels[0]
            arch = ArchSpec(nBlocks=len(pools), channels=channels, pools=pools, nOutputs=spec.nTags, inputShape=arch.inputShape)
        trainConfig = replace(trainConfig, **trainChanges)
    except TagNoiseError as e:
        raise ParseError(str(e), path)
    inputShape = (1, spec.nMels, spec.nFrames)
    if archValues.get("input_shape", inputShape) != inputShape:
        raise ParseError(
            f"arch.input_shape {archValues['input_shape']} does not match synthetic n_mels/n_frames {inputShape}",
            path
        )
    if arch.inputShape != inputShape:
        arch = replace(arch, inputShape=inputShape)
    return spec, arch, trainConfig

def config_text(spec, arch, trainConfig):
    """Canonical 'key = value' text of an experiment, used for config.txt and the config hash."""
    def fmt(value):
        if isinstance(value, tuple):
            if value and isinstance(value[0], tuple):
                return ",".join(":".join(str(v) for v in item) if len(item) == 3 else "x".join(str(v) for v in item) for item in value)
            return ",".join(str(v) for v in value)
        return str(value)

    lines = []
    for name, (attribute, _) in sorted(_SYNTHETIC_KEYS.items()):
        lines.append(f"synthetic.{name} = {fmt(getattr(spec, attribute))}")
    lines.append(f"arch.channels = {fmt(arch.channels)}")
    lines.append(f"arch.pools = {fmt(arch.pools)}")
    lines.append(f"arch.input_shape = {fmt(arch.inputShape)}")
    for name, (attribute, _) in sorted(_TRAIN_KEYS.items()):
        lines.append(f"train.{name} = {fmt(getattr(trainConfig, attribute))}")
    return "\n".join(lines) + "\n"
