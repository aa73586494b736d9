"""
Speech Commands ingestion and batching.

Files are assigned to train/val/test by hashing the speaker part of their
name, so a scan is stable across machines and additions. Batches mix target
keywords, unknown words and silence, with time-shift and background-noise
augmentation on the training split.
"""
import hashlib
import logging
import queue
import re
import threading
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.audio_frontend import SAMPLE_RATE, Clip, crop_or_tile, fit_to_length, mfcc, time_shift
from utils.errors import DataError
from utils.wav_io import read_wav, write_wav

logger = logging.getLogger("dataset")

SPLITS = ("train", "val", "test")
UNKNOWN = "unknown"
SILENCE = "silence"
BACKGROUND_DIR = "_background_noise_"
INDEX_CACHE = "kws_index.tsv"
MAX_NUM_WAVS_PER_CLASS = 2 ** 27 - 1
CLIP_SAMPLES = SAMPLE_RATE


def class_names(keywords: Sequence[str]) -> List[str]:
    """Class id order: keywords as given, then unknown, then silence."""
    return list(keywords) + [UNKNOWN, SILENCE]


def which_set(filename: str, validation_pct: float = 10.0, testing_pct: float = 10.0) -> str:
    """
    Split of a file from a stable hash of its name up to `_nohash_`.

    Args:
        filename: Wave file name or path
        validation_pct: Share of the validation split in percent
        testing_pct: Share of the test split in percent

    Returns:
        "train", "val" or "test"
    """
    stem = re.sub(r"_nohash_.*$", "", Path(filename).name)
    digest = hashlib.sha1(stem.encode("utf-8")).hexdigest()
    bucket = (int(digest, 16) % (MAX_NUM_WAVS_PER_CLASS + 1)) * (100.0 / MAX_NUM_WAVS_PER_CLASS)
    if bucket < validation_pct:
        return "val"
    if bucket < validation_pct + testing_pct:
        return "test"
    return "train"


@dataclass(frozen=True)
class DatasetEntry:
    path: Path
    word: str
    label: int
    split: str


@dataclass(frozen=True)
class DatasetIndex:
    """Immutable list of keyword-directory files with their class ids and splits."""
    root: Path
    keywords: Tuple[str, ...]
    entries: Tuple[DatasetEntry, ...]

    @property
    def classes(self) -> List[str]:
        return class_names(self.keywords)

    @property
    def unknown_label(self) -> int:
        return len(self.keywords)

    @property
    def silence_label(self) -> int:
        return len(self.keywords) + 1

    def split(self, name: str) -> List[DatasetEntry]:
        return [e for e in self.entries if e.split == name]

    def by_label(self, name: str) -> Dict[int, List[DatasetEntry]]:
        grouped: Dict[int, List[DatasetEntry]] = {}
        for entry in self.split(name):
            grouped.setdefault(entry.label, []).append(entry)
        return grouped

    def counts(self) -> Dict[str, int]:
        return {name: sum(1 for e in self.entries if e.split == name) for name in SPLITS}

    def background_dir(self) -> Path:
        return self.root / BACKGROUND_DIR


def _label_for(word: str, keywords: Sequence[str]) -> int:
    return keywords.index(word) if word in keywords else len(keywords)


def _walk(root: Path, keywords: Sequence[str]) -> List[DatasetEntry]:
    word_dirs = sorted(d for d in root.iterdir() if d.is_dir() and not d.name.startswith("_"))
    if not word_dirs:
        found = sorted(p.name for p in root.iterdir())
        raise DataError(f"No keyword directories under {root}; found: {', '.join(found) or 'nothing'}")
    entries = []
    for word_dir in word_dirs:
        for wav in sorted(word_dir.glob("*.wav")):
            entries.append(DatasetEntry(wav, word_dir.name, _label_for(word_dir.name, keywords), which_set(wav.name)))
    return entries


def write_index_cache(index: DatasetIndex, path: Union[str, Path, None] = None) -> Path:
    """Write `path<TAB>label<TAB>split` lines, paths relative to the dataset root."""
    path = Path(path) if path else index.root / INDEX_CACHE
    classes = index.classes
    with open(path, "w", encoding="utf-8") as file:
        for entry in index.entries:
            relative = entry.path.relative_to(index.root).as_posix()
            file.write(f"{relative}\t{classes[entry.label]}\t{entry.split}\n")
    return path


def read_index_cache(root: Path, keywords: Sequence[str], path: Union[str, Path, None] = None
                     ) -> Optional[List[DatasetEntry]]:
    """Entries from a cache file, or None when it is missing or was built for other keywords."""
    path = Path(path) if path else root / INDEX_CACHE
    if not path.exists():
        return None
    classes = class_names(keywords)
    entries = []
    with open(path, "r", encoding="utf-8") as file:
        for line_no, line in enumerate(file, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or parts[2] not in SPLITS:
                raise DataError(f"{path}:{line_no}: malformed index line")
            relative, label_name, split = parts
            file_path = root / relative
            word = file_path.parent.name
            label = _label_for(word, keywords)
            if classes[label] != label_name:
                logger.info(f"Index cache {path} was built for different keywords; rescanning")
                return None
            entries.append(DatasetEntry(file_path, word, label, split))
    return entries


def scan_dataset(root: Union[str, Path], keywords: Sequence[str], use_cache: bool = True,
                 rescan: bool = False) -> DatasetIndex:
    """
    Index `<root>/<word>/<speaker>_nohash_<n>.wav`.

    Args:
        root: Dataset root
        keywords: Target words; every other word directory is "unknown"
        use_cache: Read `<root>/kws_index.tsv` when present
        rescan: Ignore the cache and walk the directories

    Returns:
        DatasetIndex
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"Dataset root not found: {root}")
    keywords = tuple(keywords)

    entries = None
    if use_cache and not rescan:
        entries = read_index_cache(root, keywords)
    if entries is None:
        entries = _walk(root, keywords)
    index = DatasetIndex(root, keywords, tuple(entries))

    words = sorted({e.word for e in index.entries})
    missing = [k for k in keywords if k not in words]
    if missing:
        logger.warning(f"Keywords without a directory: {', '.join(missing)}")
    counts = index.counts()
    logger.info(f"Scanned {root}: {len(index.entries)} files, {len(words)} words "
                f"(train {counts['train']}, val {counts['val']}, test {counts['test']})")
    return index


# ---------------------------------------------------------------------------
# Noise pools
# ---------------------------------------------------------------------------

class NoisePool:
    """Noise recordings from which random 1 s crops are drawn."""

    def __init__(self, name: str, clips: List[Clip]):
        if not clips:
            raise DataError(f"Noise pool '{name}' is empty")
        self.name = name
        self.clips = clips

    def __len__(self):
        return len(self.clips)

    def pick(self, rng: np.random.Generator) -> Clip:
        return self.clips[int(rng.integers(0, len(self.clips)))]

    def crop(self, length: int, rng: np.random.Generator) -> np.ndarray:
        return crop_or_tile(self.pick(rng).samples, length, rng)


def build_noise_pool(dirs: Sequence[Union[str, Path]], name: Optional[str] = None) -> NoisePool:
    """
    Load every wave file of the given directories into one pool.

    Stereo files are downmixed and other sample rates resampled to 16 kHz.
    Unreadable files are logged and skipped.
    """
    if not dirs:
        raise DataError("No noise directories given")
    clips = []
    for directory in map(Path, dirs):
        if not directory.is_dir():
            logger.warning(f"Noise directory not found: {directory}")
            continue
        for wav in sorted(directory.glob("*.wav")):
            try:
                clip = read_wav(wav, label=directory.name, downmix=True, resample=True)
            except DataError as e:
                logger.warning(f"Skipping noise file {wav}: {e}")
                continue
            if len(clip) == 0:
                logger.warning(f"Skipping empty noise file {wav}")
                continue
            clips.append(clip)
    pool_name = name or ",".join(Path(d).name for d in dirs)
    pool = NoisePool(pool_name, clips)
    logger.info(f"Noise pool '{pool_name}': {len(pool)} recordings")
    return pool


def background_noise_pool(index: DatasetIndex) -> Optional[NoisePool]:
    """The dataset's bundled background noise, or None when the directory is absent or empty."""
    if not index.background_dir().is_dir():
        logger.warning(f"No {BACKGROUND_DIR} directory under {index.root}; silence will be digital zero")
        return None
    try:
        return build_noise_pool([index.background_dir()], name="background")
    except DataError as e:
        logger.warning(f"Background noise unavailable: {e}")
        return None


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------

@dataclass
class AugmentPolicy:
    silence_fraction: float = 0.1
    unknown_fraction: float = 0.1
    time_shift_ms: float = 100.0
    p_noise: float = 0.8
    noise_volume: float = 0.1
    augment: bool = True

    @classmethod
    def from_config(cls, config, augment: bool = True) -> "AugmentPolicy":
        return cls(config.silence_fraction, config.unknown_fraction, config.time_shift_ms,
                   config.p_noise, config.noise_volume, augment)


@dataclass
class Batch:
    """MFCC features [M x 40 x T] and their class ids."""
    features: np.ndarray
    labels: np.ndarray
    paths: List[Optional[Path]] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class Slot:
    label: int
    path: Optional[Path] = None


def plan_batch(index: DatasetIndex, split: str, rng: np.random.Generator, batch_size: int,
               policy: AugmentPolicy) -> List[Slot]:
    """
    Choose the class and source file of every batch slot.

    Each slot is silence with probability `silence_fraction`, an unknown word
    with probability `unknown_fraction`, and otherwise a keyword drawn
    uniformly over the keywords present in the split. Unknown slots draw a
    non-target word uniformly, then a file of that word, and fall back to
    keywords when the split holds no unknown words.
    """
    grouped = index.by_label(split)
    if not grouped:
        raise DataError(f"Split '{split}' is empty")
    unknown_words: Dict[str, List[DatasetEntry]] = {}
    for entry in grouped.get(index.unknown_label, []):
        unknown_words.setdefault(entry.word, []).append(entry)
    word_order = sorted(unknown_words)
    keyword_labels = sorted(label for label in grouped if label < index.unknown_label)
    if not keyword_labels:
        raise DataError(f"Split '{split}' holds no keyword files")

    slots = []
    for _ in range(batch_size):
        u = rng.random()
        if u < policy.silence_fraction:
            slots.append(Slot(index.silence_label))
        elif u < policy.silence_fraction + policy.unknown_fraction and word_order:
            files = unknown_words[word_order[int(rng.integers(0, len(word_order)))]]
            entry = files[int(rng.integers(0, len(files)))]
            slots.append(Slot(index.unknown_label, entry.path))
        else:
            files = grouped[keyword_labels[int(rng.integers(0, len(keyword_labels)))]]
            entry = files[int(rng.integers(0, len(files)))]
            slots.append(Slot(entry.label, entry.path))
    return slots


@lru_cache(maxsize=4096)
def load_clip(path: Path) -> Clip:
    """Read a keyword clip and fit it to 1 s; cached, samples are read-only."""
    clip = read_wav(path)
    samples = fit_to_length(clip.samples, CLIP_SAMPLES)
    samples.setflags(write=False)
    return Clip(samples, clip.sample_rate, path.parent.name)


def render_slot(slot: Slot, silence_label: int, rng: np.random.Generator, policy: AugmentPolicy,
                noise_pool: Optional[NoisePool]) -> Clip:
    """Waveform for one slot, with augmentation applied when the policy asks for it."""
    if slot.label == silence_label:
        if noise_pool is None:
            return Clip(np.zeros(CLIP_SAMPLES), SAMPLE_RATE, slot.label)
        volume = rng.uniform(0.0, 1.0)
        return Clip(np.clip(noise_pool.crop(CLIP_SAMPLES, rng) * volume, -1.0, 1.0), SAMPLE_RATE, slot.label)

    clip = load_clip(slot.path)
    if not policy.augment:
        return clip
    clip = time_shift(clip, policy.time_shift_ms, rng)
    samples = clip.samples
    if noise_pool is not None and rng.random() < policy.p_noise:
        volume = rng.uniform(0.0, policy.noise_volume)
        samples = np.clip(samples + volume * noise_pool.crop(CLIP_SAMPLES, rng), -1.0, 1.0)
    return Clip(samples, SAMPLE_RATE, slot.label)


@lru_cache(maxsize=4096)
def clip_features(path: Path) -> np.ndarray:
    """MFCCs of an un-augmented clip; cached, the array is read-only."""
    values = mfcc(load_clip(path)).values
    values.setflags(write=False)
    return values


def featurize(clips: Sequence[Clip]) -> np.ndarray:
    return np.stack([mfcc(clip).values for clip in clips])


def make_batch(index: DatasetIndex, split: str, rng: np.random.Generator, policy: AugmentPolicy,
               batch_size: int = 100, noise_pool: Optional[NoisePool] = None) -> Batch:
    """
    Sample, augment and featurize one batch.

    Args:
        index: Scanned dataset
        split: "train", "val" or "test"
        rng: Generator consumed in a fixed order (plan, then slot by slot)
        policy: Class fractions and augmentation settings
        batch_size: Number of examples M
        noise_pool: Background noise for silence slots and noise mixing

    Returns:
        Batch with features [M x 40 x 98]
    """
    slots = plan_batch(index, split, rng, batch_size, policy)
    features = []
    for slot in slots:
        if not policy.augment and slot.label != index.silence_label:
            features.append(clip_features(slot.path))
        else:
            features.append(mfcc(render_slot(slot, index.silence_label, rng, policy, noise_pool)).values)
    labels = np.array([slot.label for slot in slots], dtype=np.int64)
    return Batch(np.stack(features), labels, [slot.path for slot in slots])


class BatchPrefetcher:
    """
    Builds batches on a background thread and hands them over a bounded queue.

    Batches come out in the order a synchronous loop with the same generator
    would produce them.
    """

    _DONE = object()

    def __init__(self, make, count: int, depth: int = 2):
        self._make = make
        self._count = count
        self._queue: "queue.Queue" = queue.Queue(maxsize=max(1, depth))
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="batch-prefetch", daemon=True)

    def _put(self, item) -> bool:
        while not self._stop.is_set():
            try:
                self._queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _run(self):
        try:
            for _ in range(self._count):
                if not self._put(self._make()):
                    return
            self._put(self._DONE)
        except Exception as e:  # handed to the consumer
            self._put(e)

    def __iter__(self) -> Iterator[Batch]:
        self._thread.start()
        try:
            while True:
                item = self._queue.get()
                if item is self._DONE:
                    return
                if isinstance(item, Exception):
                    raise item
                yield item
        finally:
            self.close()

    def close(self):
        self._stop.set()


def batch_stream(index: DatasetIndex, split: str, rng: np.random.Generator, policy: AugmentPolicy,
                 batch_size: int, count: int, noise_pool: Optional[NoisePool] = None,
                 prefetch: int = 2) -> Iterator[Batch]:
    """`count` consecutive batches, prefetched when `prefetch` > 0."""
    def make():
        return make_batch(index, split, rng, policy, batch_size, noise_pool)

    if prefetch <= 0:
        return (make() for _ in range(count))
    return iter(BatchPrefetcher(make, count, prefetch))


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

TONE_FREQUENCIES = (400.0, 1000.0, 2500.0, 600.0, 1600.0, 3500.0)


def synthesize_tone_corpus(out_dir: Union[str, Path], num_classes: int = 3, clips_per_class: int = 100,
                           seed: int = 0, noise_level: float = 0.01) -> List[str]:
    """
    Write a toy corpus of 1 s sine tones in the Speech Commands layout.

    Every class is a tone at its own frequency with random phase, amplitude
    jitter and light white noise. A white-noise recording goes to
    `_background_noise_`.

    Returns:
        The class words, usable as the keyword list
    """
    if not 1 <= num_classes <= len(TONE_FREQUENCIES):
        raise DataError(f"num_classes must be in [1, {len(TONE_FREQUENCIES)}], got {num_classes}")
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    t = np.arange(CLIP_SAMPLES) / SAMPLE_RATE
    words = [f"tone{k}" for k in range(num_classes)]
    for word, freq in zip(words, TONE_FREQUENCIES):
        for n in range(clips_per_class):
            speaker = f"{int(rng.integers(0, 2 ** 32)):08x}"
            amplitude = rng.uniform(0.3, 0.7)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            samples = amplitude * np.sin(2.0 * np.pi * freq * t + phase)
            samples += noise_level * rng.standard_normal(CLIP_SAMPLES)
            write_wav(out_dir / word / f"{speaker}_nohash_{n}.wav", Clip(np.clip(samples, -1.0, 1.0)))
    noise = np.clip(0.1 * rng.standard_normal(10 * SAMPLE_RATE), -1.0, 1.0)
    write_wav(out_dir / BACKGROUND_DIR / "white_noise.wav", Clip(noise))
    logger.info(f"Wrote {num_classes * clips_per_class} tone clips to {out_dir}")
    return words
