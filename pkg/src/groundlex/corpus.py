"""Transcript ingestion, cleaning, dedup filtering, vocabulary and encoding.

Input records arrive as JSON Lines (one utterance per line with keys
video_id, start_s, end_s, speaker, text). The cleaning/filter chain mirrors
an ASR post-processing pipeline: lowercase + strip punctuation, collapse
repeated phrases within an utterance, drop adjacent same-text utterances.
"""

from __future__ import annotations

import json
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError

PAD, UNK, EOS = "<pad>", "<unk>", "<eos>"
PAD_ID, UNK_ID, EOS_ID = 0, 1, 2

# Repeated-phrase collapse: a phrase of up to MAX_PHRASE_LEN tokens repeated
# at least MIN_REPEATS times consecutively collapses to one instance. The
# threshold of 3 keeps natural doubles ("no no") intact.
MAX_PHRASE_LEN = 8
MIN_REPEATS = 3


@dataclass
class UtteranceRecord:
    video_id: str
    start_s: float
    end_s: float
    speaker: str
    text: str

    def validate(self) -> None:
        if self.start_s < 0:
            raise DataError(f"negative start time {self.start_s} in {self.video_id}")
        if self.end_s < self.start_s:
            raise DataError(
                f"end {self.end_s} before start {self.start_s} in {self.video_id}")


def load_records(path: str | Path) -> list[UtteranceRecord]:
    """Read UtteranceRecords from a JSONL file, validating each line."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec = UtteranceRecord(
                    video_id=str(obj["video_id"]),
                    start_s=float(obj["start_s"]),
                    end_s=float(obj["end_s"]),
                    speaker=str(obj["speaker"]),
                    text=str(obj["text"]),
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad record ({exc})") from exc
            rec.validate()
            records.append(rec)
    return records


def save_records(records: list[UtteranceRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({
                "video_id": r.video_id, "start_s": r.start_s, "end_s": r.end_s,
                "speaker": r.speaker, "text": r.text,
            }, sort_keys=True) + "\n")


def clean_text(raw: str) -> str:
    """Lowercase, remove Unicode punctuation, collapse whitespace."""
    chars = []
    for ch in raw.lower():
        if unicodedata.category(ch).startswith("P"):
            continue
        chars.append(ch)
    return " ".join("".join(chars).split())


def _find_run(tokens: list[str]) -> tuple[int, int, int] | None:
    """Leftmost position with the shortest phrase repeated >= MIN_REPEATS
    times; returns (start, phrase_len, repetitions) or None."""
    n_tokens = len(tokens)
    for i in range(n_tokens):
        for n in range(1, MAX_PHRASE_LEN + 1):
            if i + n * MIN_REPEATS > n_tokens:
                break
            phrase = tokens[i:i + n]
            reps = 1
            while tokens[i + reps * n:i + (reps + 1) * n] == phrase:
                reps += 1
            if reps >= MIN_REPEATS:
                return i, n, reps
    return None


def collapse_repeated_phrases(text: str) -> str:
    """Collapse phrases repeated >= MIN_REPEATS times in a row to one copy.

    Collapse order matters for overlapping runs, so the rule is canonical:
    repeatedly rewrite the leftmost, shortest-phrase run until none remain.
    Idempotent by construction.
    """
    tokens = text.split()
    while True:
        hit = _find_run(tokens)
        if hit is None:
            return " ".join(tokens)
        i, n, reps = hit
        tokens = tokens[:i + n] + tokens[i + reps * n:]


@dataclass
class DedupReport:
    adjacent_duplicates_dropped: int = 0
    phrase_collapsed_utterances: int = 0
    empty_after_clean_dropped: int = 0

    def total_dropped(self) -> int:
        return self.adjacent_duplicates_dropped + self.empty_after_clean_dropped

    def as_dict(self) -> dict:
        return {
            "adjacent_duplicates_dropped": self.adjacent_duplicates_dropped,
            "phrase_collapsed_utterances": self.phrase_collapsed_utterances,
            "empty_after_clean_dropped": self.empty_after_clean_dropped,
        }


def dedup_filter(records: list[UtteranceRecord]) -> tuple[list[UtteranceRecord], DedupReport]:
    """Clean each utterance, collapse in-utterance repeats, and keep only the
    first of adjacent same-video utterances with identical cleaned text.

    Records must arrive ordered by (video_id, start_s). Every drop is counted
    in the report; nothing disappears silently.
    """
    report = DedupReport()
    kept: list[UtteranceRecord] = []
    prev_video = None
    prev_text = None
    for rec in records:
        cleaned = clean_text(rec.text)
        if not cleaned:
            report.empty_after_clean_dropped += 1
            continue
        collapsed = collapse_repeated_phrases(cleaned)
        if collapsed != cleaned:
            report.phrase_collapsed_utterances += 1
        if rec.video_id == prev_video and collapsed == prev_text:
            report.adjacent_duplicates_dropped += 1
            continue
        kept.append(UtteranceRecord(rec.video_id, rec.start_s, rec.end_s,
                                    rec.speaker, collapsed))
        prev_video, prev_text = rec.video_id, collapsed
    return kept, report


@dataclass
class Vocabulary:
    """Word -> id map; ids 0..2 are reserved for <pad>, <unk>, <eos>.

    Non-special words occurred strictly more than min_frequency times in the
    build corpus; ids follow descending count with lexicographic tie-break.
    """

    token_to_id: dict[str, int]
    id_to_token: list[str]
    min_frequency: int = 2

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, word: str) -> bool:
        return word in self.token_to_id

    def id_of(self, word: str) -> int:
        return self.token_to_id.get(word, UNK_ID)

    def words(self) -> list[str]:
        return self.id_to_token[3:]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"min_frequency": self.min_frequency,
                       "tokens": self.id_to_token}, fh, sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        tokens = list(obj["tokens"])
        if tokens[:3] != [PAD, UNK, EOS]:
            raise DataError(f"{path}: vocabulary missing reserved specials")
        return cls(token_to_id={t: i for i, t in enumerate(tokens)},
                   id_to_token=tokens, min_frequency=int(obj["min_frequency"]))


def build_vocabulary(utterances: list[str], min_frequency: int = 2) -> Vocabulary:
    """Count whitespace tokens and keep words with count > min_frequency."""
    counts: Counter[str] = Counter()
    for utt in utterances:
        counts.update(utt.split())
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    surviving = sorted((w for w, c in counts.items() if c > min_frequency),
                       key=lambda w: (-counts[w], w))
    id_to_token = [PAD, UNK, EOS] + surviving
    return Vocabulary(token_to_id={t: i for i, t in enumerate(id_to_token)},
                      id_to_token=id_to_token, min_frequency=min_frequency)


def encode(utterance: str, vocab: Vocabulary, max_len: int = 48) -> list[int]:
    """Word ids plus a trailing <eos>, truncated to max_len keeping the <eos>."""
    ids = [vocab.id_of(w) for w in utterance.split()]
    ids = ids[:max_len - 1]
    ids.append(EOS_ID)
    return ids


def decode(ids: list[int], vocab: Vocabulary) -> str:
    words = [vocab.id_to_token[i] for i in ids
             if i not in (PAD_ID, EOS_ID)]
    return " ".join(words)


def pad_batch(sequences: list[list[int]]) -> list[list[int]]:
    width = max(len(s) for s in sequences)
    return [s + [PAD_ID] * (width - len(s)) for s in sequences]


@dataclass
class SplitManifest:
    """Disjoint train/val/test partitions of video ids for one dataset split."""

    split_name: str
    train: list[str] = field(default_factory=list)
    val: list[str] = field(default_factory=list)
    test: list[str] = field(default_factory=list)

    PARTITIONS = ("train", "val", "test")

    def __post_init__(self):
        self.assert_disjoint()

    def assert_disjoint(self) -> None:
        seen: dict[str, str] = {}
        for part in self.PARTITIONS:
            for vid in getattr(self, part):
                if vid in seen:
                    raise DataError(
                        f"video {vid!r} appears in both {seen[vid]} and {part}")
                seen[vid] = part

    def partition_of(self, video_id: str) -> str | None:
        for part in self.PARTITIONS:
            if video_id in getattr(self, part):
                return part
        return None

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"split_name": self.split_name, "train": self.train,
                       "val": self.val, "test": self.test}, fh, sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "SplitManifest":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        try:
            return cls(split_name=obj["split_name"], train=list(obj["train"]),
                       val=list(obj["val"]), test=list(obj["test"]))
        except KeyError as exc:
            raise DataError(f"{path}: manifest missing key {exc}") from exc


def split_stats(manifest: SplitManifest, records: list[UtteranceRecord]) -> dict:
    """Per-partition descriptive statistics plus whole-split vocabulary size."""
    part_records: dict[str, list[UtteranceRecord]] = {p: [] for p in manifest.PARTITIONS}
    for rec in records:
        part = manifest.partition_of(rec.video_id)
        if part is None:
            raise DataError(f"video {rec.video_id!r} not in manifest "
                            f"{manifest.split_name!r}")
        part_records[part].append(rec)

    stats: dict = {"split_name": manifest.split_name, "partitions": {}}
    for part in manifest.PARTITIONS:
        recs = part_records[part]
        word_counts = [len(r.text.split()) for r in recs]
        total_words = sum(word_counts)
        stats["partitions"][part] = {
            "videos": len(getattr(manifest, part)),
            "utterances": len(recs),
            "avg_utterance_length": (total_words / len(recs)) if recs else 0.0,
            "total_words": total_words,
        }
    vocab = None
    texts = [r.text for r in records]
    if texts:
        try:
            vocab = build_vocabulary(texts)
        except DataError:
            vocab = None
    stats["vocabulary_size"] = len(vocab.words()) if vocab else 0
    return stats


def format_stats_table(stats: dict) -> str:
    """Aligned plain-text table mirroring the per-partition stats schema."""
    rows = ["videos", "utterances", "avg_utterance_length", "total_words"]
    extra = [k for k in ("extracted_frames", "avg_frames_per_utterance")
             if any(k in p for p in stats["partitions"].values())]
    rows += extra
    parts = list(stats["partitions"])
    width = max(len(r) for r in rows + ["vocabulary_size"]) + 2
    header = f"{stats['split_name']:<{width}}" + "".join(f"{p:>14}" for p in parts)
    lines = [header, "-" * len(header)]
    for row in rows:
        cells = []
        for p in parts:
            v = stats["partitions"][p].get(row, "")
            cells.append(f"{v:>14.2f}" if isinstance(v, float) else f"{v:>14}")
        lines.append(f"{row:<{width}}" + "".join(cells))
    lines.append(f"{'vocabulary_size':<{width}}" + f"{stats['vocabulary_size']:>14}")
    return "\n".join(lines)
