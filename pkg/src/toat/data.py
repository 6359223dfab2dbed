"""Interview dataset schema, file formats, balancing, splits and a synthetic corpus."""

from __future__ import annotations

import json
import logging
import re
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16_000

DEFAULT_QUESTIONS = (
    "How are you doing today?",
    "How are you at controlling your temper?",
    "What'd you study at school?",
    "Is there anything you regret?",
    "Have you been diagnosed with depression?",
    "When was the last time you argued with someone and what was it about?",
    "What advice would you give to yourself ten or twenty years ago?",
    "What are you most proud of in your life?",
    "When was the last time you felt really happy?",
    "How easy is it for you to get a good night's sleep?",
)

# Participants whose transcripts carry no question information in the source corpus.
PAPER_EXCLUDED_IDS = ("451", "458", "480")
PAPER_SPLIT_SIZES = (107, 33, 46)


class DataError(ValueError):
    """Invalid dataset content, schema violation or inconsistent split."""


@dataclass(frozen=True)
class TopicCatalog:
    """Ordered list of topic questions, indexed 1..N."""

    questions: tuple[str, ...] = DEFAULT_QUESTIONS

    def __post_init__(self):
        if len(self.questions) < 1:
            raise DataError("a topic catalog needs at least one question")

    @property
    def n_topics(self) -> int:
        return len(self.questions)

    @property
    def entries(self) -> list[tuple[int, str]]:
        return [(i + 1, q) for i, q in enumerate(self.questions)]

    def question(self, index: int) -> str:
        self.check_index(index)
        return self.questions[index - 1]

    def check_index(self, index: int) -> None:
        if not 1 <= index <= self.n_topics:
            raise DataError(f"unknown topic index {index}; catalog has topics 1..{self.n_topics}")

    @classmethod
    def of_size(cls, n: int) -> "TopicCatalog":
        if n <= len(DEFAULT_QUESTIONS):
            return cls(DEFAULT_QUESTIONS[:n])
        extra = tuple(f"Question {i}?" for i in range(len(DEFAULT_QUESTIONS) + 1, n + 1))
        return cls(DEFAULT_QUESTIONS + extra)


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def seconds(self) -> float:
        return len(self.samples) / self.sample_rate


def read_wav(path: str | Path) -> Waveform:
    with wave.open(str(path), "rb") as fh:
        if fh.getsampwidth() != 2:
            raise DataError(f"{path}: only 16-bit PCM is supported")
        if fh.getnchannels() != 1:
            raise DataError(f"{path}: expected mono audio")
        raw = fh.readframes(fh.getnframes())
        rate = fh.getframerate()
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return Waveform(pcm / 32767.0, rate)


def write_wav(path: str | Path, waveform: Waveform) -> None:
    pcm = np.clip(np.round(np.asarray(waveform.samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(waveform.sample_rate)
        fh.writeframes(pcm.tobytes())


class TopicEntry:
    """One answered question: question text, reply text and optional reply audio.

    Audio referenced by path is read lazily on first access, so text-only
    pipelines never open audio files.
    """

    __slots__ = ("question", "reply_text", "_audio", "audio_path")

    def __init__(
        self,
        question: str,
        reply_text: str,
        audio: Waveform | None = None,
        audio_path: str | Path | None = None,
    ):
        if not reply_text:
            raise DataError("reply_text must be nonempty for a present topic")
        self.question = question
        self.reply_text = reply_text
        self._audio = audio
        self.audio_path = None if audio_path is None else Path(audio_path)

    @property
    def reply_audio(self) -> Waveform | None:
        if self._audio is None and self.audio_path is not None:
            self._audio = read_wav(self.audio_path)
        return self._audio

    @property
    def has_audio(self) -> bool:
        return self._audio is not None or self.audio_path is not None

    def __eq__(self, other):
        if not isinstance(other, TopicEntry):
            return NotImplemented
        if (self.question, self.reply_text) != (other.question, other.reply_text):
            return False
        a, b = self.reply_audio, other.reply_audio
        if a is None or b is None:
            return a is b
        return a.sample_rate == b.sample_rate and np.array_equal(a.samples, b.samples)

    def __repr__(self):
        return f"TopicEntry({self.question!r}, {self.reply_text[:30]!r}...)"


@dataclass
class InterviewSample:
    """One participant: label in {0, 1} and N topic slots, ``None`` when absent."""

    participant_id: str
    label: int
    topics: list[TopicEntry | None]

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"{self.participant_id}: label must be 0 or 1, got {self.label!r}")

    @property
    def present(self) -> np.ndarray:
        return np.array([t is not None for t in self.topics], dtype=bool)

    def only_topic(self, index: int) -> "InterviewSample":
        """Copy keeping only topic ``index`` (1-based); the rest become absent."""
        kept = [t if i == index - 1 else None for i, t in enumerate(self.topics)]
        return InterviewSample(self.participant_id, self.label, kept)


# ---------------------------------------------------------------------------
# JSONL dataset files


def _entry_from_json(obj: dict, root: Path, catalog: TopicCatalog, index: int, lineno: int) -> TopicEntry:
    question = obj.get("question", catalog.question(index))
    reply = obj.get("reply_text")
    if not isinstance(reply, str) or not reply:
        raise DataError(f"line {lineno}: topic {index} has no reply_text")
    audio = None
    audio_path = obj.get("audio_path")
    if "audio_samples" in obj:
        audio = Waveform(np.asarray(obj["audio_samples"], dtype=np.float64), int(obj.get("sample_rate", SAMPLE_RATE)))
    return TopicEntry(question, reply, audio=audio, audio_path=None if audio_path is None else root / audio_path)


def load_dataset(path: str | Path, catalog: TopicCatalog | None = None) -> list[InterviewSample]:
    """Read a JSONL dataset; audio paths resolve against the file's directory."""
    catalog = catalog or TopicCatalog()
    path = Path(path)
    root = path.parent
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed record: {exc.msg}") from exc
            try:
                pid = str(record["participant_id"])
                label = int(record["label"])
                topics_obj = record.get("topics", {})
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: missing or invalid field {exc}") from exc
            topics: list[TopicEntry | None] = [None] * catalog.n_topics
            for key, obj in topics_obj.items():
                try:
                    index = int(key)
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: topic key {key!r} is not an index") from exc
                catalog.check_index(index)
                topics[index - 1] = _entry_from_json(obj, root, catalog, index, lineno)
            samples.append(InterviewSample(pid, label, topics))
    return samples


def sample_to_record(sample: InterviewSample, audio_paths: dict[int, str] | None = None) -> dict:
    topics = {}
    for i, entry in enumerate(sample.topics, start=1):
        if entry is None:
            continue
        obj = {"question": entry.question, "reply_text": entry.reply_text}
        if audio_paths and i in audio_paths:
            obj["audio_path"] = audio_paths[i]
        elif entry.reply_audio is not None:
            obj["audio_samples"] = entry.reply_audio.samples.tolist()
            obj["sample_rate"] = entry.reply_audio.sample_rate
        topics[str(i)] = obj
    return {"participant_id": sample.participant_id, "label": sample.label, "topics": topics}


def save_dataset(samples: Iterable[InterviewSample], path: str | Path, audio_dir: str = "audio") -> None:
    """Write JSONL plus one 16-bit WAV per topic reply under ``audio_dir``."""
    path = Path(path)
    root = path.parent
    root.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            paths = {}
            for i, entry in enumerate(sample.topics, start=1):
                if entry is None or entry.reply_audio is None:
                    continue
                rel = f"{audio_dir}/{sample.participant_id}_q{i}.wav"
                (root / audio_dir).mkdir(exist_ok=True)
                write_wav(root / rel, entry.reply_audio)
                paths[i] = rel
            fh.write(json.dumps(sample_to_record(sample, paths), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# balancing and splits


def class_counts(samples: Sequence[InterviewSample]) -> dict[int, int]:
    counts = {0: 0, 1: 0}
    for s in samples:
        counts[s.label] += 1
    return counts


def oversample(samples: Sequence[InterviewSample], seed: int) -> list[InterviewSample]:
    """Duplicate random minority-class samples until both classes have equal counts."""
    counts = class_counts(samples)
    if min(counts.values()) == 0:
        raise DataError("cannot balance one class")
    rng = np.random.default_rng(seed)
    minority = min(counts, key=lambda c: (counts[c], c))
    pool = [s for s in samples if s.label == minority]
    extra_n = abs(counts[0] - counts[1])
    picks = rng.integers(0, len(pool), size=extra_n)
    out = list(samples) + [pool[i] for i in picks]
    order = rng.permutation(len(out))
    return [out[i] for i in order]


@dataclass
class SplitManifest:
    train: list[str]
    validation: list[str]
    test: list[str]
    excluded: list[str] = field(default_factory=list)

    def __post_init__(self):
        groups = {"train": self.train, "validation": self.validation, "test": self.test, "excluded": self.excluded}
        seen: dict[str, str] = {}
        for name, ids in groups.items():
            for pid in ids:
                if pid in seen:
                    raise DataError(f"participant {pid} appears in both {seen[pid]} and {name}")
                seen[pid] = name

    @classmethod
    def load(cls, path: str | Path) -> "SplitManifest":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        try:
            return cls(
                [str(x) for x in obj["train"]],
                [str(x) for x in obj["validation"]],
                [str(x) for x in obj["test"]],
                [str(x) for x in obj.get("excluded", [])],
            )
        except KeyError as exc:
            raise DataError(f"{path}: manifest is missing {exc}") from exc

    def to_dict(self) -> dict:
        return {"train": self.train, "validation": self.validation, "test": self.test, "excluded": self.excluded}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def make_manifest(
    ids: Sequence[str],
    seed: int,
    sizes: tuple[int, int, int] | None = None,
    excluded: Sequence[str] = (),
) -> SplitManifest:
    """Random split; default proportions follow the 107/33/46 protocol."""
    pool = [pid for pid in ids if pid not in set(excluded)]
    if sizes is None:
        total = sum(PAPER_SPLIT_SIZES)
        n_train = round(len(pool) * PAPER_SPLIT_SIZES[0] / total)
        n_val = round(len(pool) * PAPER_SPLIT_SIZES[1] / total)
        sizes = (n_train, n_val, len(pool) - n_train - n_val)
    if sum(sizes) != len(pool):
        raise DataError(f"split sizes {sizes} do not cover {len(pool)} participants")
    order = np.random.default_rng(seed).permutation(len(pool))
    shuffled = [pool[i] for i in order]
    a, b = sizes[0], sizes[0] + sizes[1]
    return SplitManifest(shuffled[:a], shuffled[a:b], shuffled[b:], list(excluded))


def apply_split(samples: Sequence[InterviewSample], manifest: SplitManifest):
    """Return (train, validation, test) in manifest order with excluded ids dropped."""
    by_id = {s.participant_id: s for s in samples}
    missing = [pid for pid in manifest.train + manifest.validation + manifest.test if pid not in by_id]
    if missing:
        raise DataError(f"manifest ids absent from data: {', '.join(missing)}")
    return tuple([by_id[pid] for pid in ids] for ids in (manifest.train, manifest.validation, manifest.test))


# ---------------------------------------------------------------------------
# tokenisation

CLS, SEP, PAD, UNK = "[CLS]", "[SEP]", "[PAD]", "[UNK]"
CLS_ID, SEP_ID, PAD_ID, UNK_ID = 0, 1, 2, 3
MAX_REPLY_TOKENS = 64

_TOKEN_RE = re.compile(r"[a-z0-9']+|[^\sa-z0-9']")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos = [CLS, SEP, PAD, UNK]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)

    def __len__(self) -> int:
        return len(self.itos)

    @classmethod
    def build(cls, samples: Iterable[InterviewSample]) -> "Vocabulary":
        words = set()
        for s in samples:
            for entry in s.topics:
                if entry is not None:
                    words.update(tokenize(entry.question))
                    words.update(tokenize(entry.reply_text))
        return cls(sorted(words))

    def ids(self, words: Iterable[str]) -> list[int]:
        return [self.stoi.get(w, UNK_ID) for w in words]

    def encode_pair(self, question: str, reply: str, max_reply: int = MAX_REPLY_TOKENS) -> list[int]:
        """``[CLS] question [SEP] reply [SEP]`` with the reply tail truncated."""
        q = self.ids(tokenize(question))
        r = self.ids(tokenize(reply))[:max_reply]
        return [CLS_ID, *q, SEP_ID, *r, SEP_ID]


# ---------------------------------------------------------------------------
# synthetic corpus

NEUTRAL_WORDS = (
    "uh um i you the a and so like yeah well it was is that my we they just really "
    "think know guess time day work school friend family home people thing things "
    "good okay about kind of sort maybe sometimes usually pretty much lot go went"
).split()
CUE_WORDS = {
    0: "fine great calm rested happy proud relaxed easy energetic hopeful".split(),
    1: "tired hopeless sad anxious miserable stressed sleepless lonely empty worthless".split(),
}
_TONE_BANDS = {0: (300.0, 500.0), 1: (900.0, 1100.0)}
_NEUTRAL_BAND = (300.0, 1100.0)


@dataclass
class SynthSpec:
    n_samples: int = 200
    n_topics: int = 10
    signal_topic_index: int = 10
    signal_strength: float = 1.0
    missing_rate: float = 0.1
    class_ratio: float = 0.3
    seed: int = 0
    reply_seconds: float = 0.0125
    reply_words: tuple[int, int] = (4, 12)

    def __post_init__(self):
        self.reply_words = tuple(self.reply_words)
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.n_samples, int) or self.n_samples < 1:
            raise DataError(f"n_samples must be a positive integer, got {self.n_samples!r}")
        if not isinstance(self.n_topics, int) or self.n_topics < 1:
            raise DataError(f"n_topics must be a positive integer, got {self.n_topics!r}")
        if not 1 <= self.signal_topic_index <= self.n_topics:
            raise DataError(f"signal_topic_index must lie in 1..{self.n_topics}, got {self.signal_topic_index}")
        for name in ("signal_strength", "missing_rate", "class_ratio"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise DataError(f"{name} must lie in [0, 1], got {value}")
        if self.reply_seconds <= 0:
            raise DataError(f"reply_seconds must be positive, got {self.reply_seconds}")
        lo, hi = self.reply_words
        if not 1 <= lo <= hi:
            raise DataError(f"reply_words must be an increasing positive pair, got {self.reply_words}")

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise DataError(f"unknown synth spec field(s): {', '.join(sorted(unknown))}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def _tone(rng: np.random.Generator, freq: float, n: int, rate: int) -> np.ndarray:
    t = np.arange(n) / rate
    phase = rng.uniform(0, 2 * np.pi)
    amp = rng.uniform(0.3, 0.6)
    noise = rng.normal(0.0, 0.02, size=n)
    # quantise to the WAV grid so in-memory and on-disk datasets agree exactly
    return np.round(np.clip(amp * np.sin(2 * np.pi * freq * t + phase) + noise, -1, 1) * 32767.0) / 32767.0


def synth_generate(spec: SynthSpec | dict) -> list[InterviewSample]:
    """Generate interviews whose label is carried by one designated topic.

    In the signal topic each cue word (and the reply tone band) comes from
    the sample's own class with probability ``(1 + signal_strength) / 2``
    and from the other class otherwise, so strength 0 carries no label
    information and strength 1 separates the classes perfectly. All other
    topics draw from class-independent distributions.
    """
    if isinstance(spec, dict):
        spec = SynthSpec.from_dict(spec)
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    catalog = TopicCatalog.of_size(spec.n_topics)
    n_pos = int(round(spec.class_ratio * spec.n_samples))
    labels = np.array([1] * n_pos + [0] * (spec.n_samples - n_pos))
    rng.shuffle(labels)
    n_audio = max(int(round(spec.reply_seconds * SAMPLE_RATE)), 1)
    p_own = (1.0 + spec.signal_strength) / 2.0
    width = len(str(spec.n_samples))
    samples = []
    for k, label in enumerate(labels):
        label = int(label)
        present = rng.random(spec.n_topics) >= spec.missing_rate
        if spec.signal_strength == 1.0:
            present[spec.signal_topic_index - 1] = True
        if not present.any():
            present[rng.integers(spec.n_topics)] = True
        topics: list[TopicEntry | None] = []
        for i in range(spec.n_topics):
            n_words = int(rng.integers(spec.reply_words[0], spec.reply_words[1] + 1))
            words = list(rng.choice(NEUTRAL_WORDS, size=n_words))
            if i == spec.signal_topic_index - 1:
                cue_class = label if rng.random() < p_own else 1 - label
                cues = rng.choice(CUE_WORDS[cue_class], size=3)
                for cue in cues:
                    words.insert(int(rng.integers(0, len(words) + 1)), str(cue))
                tone_class = label if rng.random() < p_own else 1 - label
                band = _TONE_BANDS[tone_class]
            else:
                band = _NEUTRAL_BAND
            freq = rng.uniform(*band)
            samples_audio = _tone(rng, freq, n_audio, SAMPLE_RATE)
            if not present[i]:
                topics.append(None)
                continue
            topics.append(TopicEntry(catalog.questions[i], " ".join(words), audio=Waveform(samples_audio)))
        samples.append(InterviewSample(f"P{k:0{width}d}", label, topics))
    return samples
