"""Embeddings, action-label decomposition, and split manifests."""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DimensionError, ValidationError

log = logging.getLogger(__name__)

VERB_DEFAULT = "doing"

_PUNCT = re.compile(r"[^\w\s]|_")

STOPWORDS = frozenset(
    """a an the of on in at with from to for and or some something somewhere someone
    is are their his her its into onto up off out through not by""".split()
)


def normalize_phrase(text: str) -> str:
    """Lowercase, drop apostrophes, map other punctuation and underscores to
    spaces, and collapse whitespace."""
    text = text.lower().replace("'", "")
    return " ".join(_PUNCT.sub(" ", text).split())


def data_path(*parts) -> Path:
    node = resources.files("kgaction").joinpath("data")
    for part in parts:
        node = node.joinpath(part)
    return Path(str(node))


# --------------------------------------------------------------------------
# embeddings

class EmbeddingKind(enum.Enum):
    PHRASE = "phrase"
    WORD = "word"


@dataclass
class EmbeddingTable:
    dim: int
    entries: dict
    kind: EmbeddingKind = EmbeddingKind.PHRASE
    warnings: list = field(default_factory=list)

    def __contains__(self, key):
        return normalize_phrase(key) in self.entries

    def __getitem__(self, key):
        return self.entries[normalize_phrase(key)]

    def __len__(self):
        return len(self.entries)


def load_embeddings(path, kind=EmbeddingKind.PHRASE) -> EmbeddingTable:
    """Read a word2vec-style text table (``key v1 ... vd`` per line).

    An optional leading ``<count> <dim>`` header is skipped.  Keys use
    underscores for spaces.  Duplicate keys keep the last vector and leave a
    note in ``table.warnings``.
    """
    kind = EmbeddingKind(kind)
    entries, warnings = {}, []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            key = normalize_phrase(parts[0])
            if not key:
                raise ValidationError(f"{path}:{lineno}: empty key")
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: non-numeric vector entry") from None
            if dim is None:
                dim = vec.size
                if dim == 0:
                    raise ValidationError(f"{path}:{lineno}: entry has no vector")
            elif vec.size != dim:
                raise DimensionError(f"{path}:{lineno}: expected {dim} values, got {vec.size}")
            if not np.all(np.isfinite(vec)):
                raise ValidationError(f"{path}:{lineno}: non-finite value")
            if key in entries:
                warnings.append(f"line {lineno}: duplicate key {key!r}, keeping the later vector")
            entries[key] = vec
    if not entries:
        raise ValidationError(f"{path}: empty embedding file")
    for w in warnings:
        log.warning("%s: %s", path, w)
    return EmbeddingTable(dim, entries, kind, warnings)


def save_embeddings(path, table: EmbeddingTable):
    with open(path, "w", encoding="utf-8") as fh:
        for key, vec in table.entries.items():
            fh.write(key.replace(" ", "_") + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def embed_phrase(phrase, table: EmbeddingTable, warnings=None) -> np.ndarray:
    """Phrase-level tables are looked up directly; word-level tables average
    the vectors of the tokens they contain."""
    key = normalize_phrase(phrase)
    if table.kind is EmbeddingKind.PHRASE:
        if key not in table.entries:
            raise ValidationError(f"no embedding for phrase {phrase!r}")
        return table.entries[key].copy()
    found, missing = [], []
    for tok in key.split():
        (found if tok in table.entries else missing).append(tok)
    if not found:
        raise ValidationError(f"no token of {phrase!r} has an embedding")
    if missing:
        msg = f"{phrase!r}: skipped tokens without embeddings: {missing}"
        log.debug(msg)
        if warnings is not None:
            warnings.append(msg)
    return np.mean([table.entries[t] for t in found], axis=0)


# --------------------------------------------------------------------------
# verb / noun decomposition

class VerbSource(enum.Enum):
    PARSED = "parsed"
    DEFAULT_DOING = "default_doing"


class NounSource(enum.Enum):
    PARSED = "parsed"
    OVERRIDE_TABLE = "override_table"
    HEAD = "head"


@dataclass(frozen=True)
class VerbNounPair:
    verb: str
    noun: str
    verb_source: VerbSource
    noun_source: NounSource


# ordered (suffix, replacements) rules; each replacement is tried against the
# word lists and the first known lemma wins
SUFFIX_RULES = (
    ("ies", ("y",)),
    ("ing", ("", "e", "<undouble>")),
    ("es", ("",)),
    ("s", ("",)),
    ("ed", ("", "e", "<undouble>")),
)

_VOWELS = set("aeiou")


def _read_list(path):
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(line)
    return out


def _read_tsv(path):
    table = {}
    for line in _read_list(path):
        key, _, val = line.partition("\t")
        if not val:
            raise ValidationError(f"{path}: line {line!r} is not 'key<TAB>value'")
        table[normalize_phrase(key)] = val.strip()
    return table


@dataclass
class Lexicon:
    verbs: frozenset
    nouns: frozenset
    noun_overrides: dict
    lemma_exceptions: dict = field(default_factory=dict)
    gerund_exceptions: dict = field(default_factory=dict)
    suffix_rules: tuple = SUFFIX_RULES
    verb_default: str = VERB_DEFAULT

    @classmethod
    def load(cls, directory=None, noun_overrides=None):
        """Load word lists from ``directory`` (default: the shipped lexicon)."""
        d = Path(directory) if directory else data_path("lexicon")
        overrides = _read_tsv(d / "noun_overrides.tsv")
        if noun_overrides:
            overrides.update({normalize_phrase(k): v for k, v in noun_overrides.items()})
        return cls(
            verbs=frozenset(_read_list(d / "verbs.txt")),
            nouns=frozenset(_read_list(d / "nouns.txt")),
            noun_overrides=overrides,
            lemma_exceptions=_read_tsv(d / "lemma_exceptions.tsv"),
            gerund_exceptions=_read_tsv(d / "gerund_exceptions.tsv"),
        )

    def known(self, word):
        return word in self.verbs or word in self.nouns

    def lemmatize(self, word: str) -> str:
        if word in self.lemma_exceptions:
            return self.lemma_exceptions[word]
        if self.known(word):
            return word
        for suffix, replacements in self.suffix_rules:
            if not word.endswith(suffix) or len(word) <= len(suffix) + 1:
                continue
            stem = word[: -len(suffix)]
            for rep in replacements:
                if rep == "<undouble>":
                    if len(stem) < 3 or stem[-1] != stem[-2] or stem[-1] in _VOWELS:
                        continue
                    cand = stem[:-1]
                else:
                    cand = stem + rep
                if self.known(cand):
                    return cand
        return word

    def gerund(self, verb: str) -> str:
        if verb in self.gerund_exceptions:
            return self.gerund_exceptions[verb]
        if verb.endswith("ie"):
            return verb[:-2] + "ying"
        if verb.endswith("e") and not verb.endswith(("ee", "ye", "oe")) and len(verb) > 2:
            return verb[:-1] + "ing"
        groups = re.findall(r"[aeiou]+", verb)
        if (
            len(groups) == 1
            and len(verb) >= 3
            and verb[-1] not in _VOWELS | set("wxy")
            and verb[-2] in _VOWELS
            and verb[-3] not in _VOWELS
        ):
            return verb + verb[-1] + "ing"
        return verb + "ing"


_DEFAULT_LEXICON = None


def default_lexicon() -> Lexicon:
    global _DEFAULT_LEXICON
    if _DEFAULT_LEXICON is None:
        _DEFAULT_LEXICON = Lexicon.load()
    return _DEFAULT_LEXICON


def parse_action_phrase(phrase: str, lexicon: Lexicon | None = None) -> VerbNounPair:
    """Split an action label into a (verb, noun) pair.

    The verb is reported in its -ing form; a phrase without a verb gets
    ``"doing"``.  A phrase without a listed noun falls back to the override
    table, then to its last content word.
    """
    lexicon = lexicon or default_lexicon()
    key = normalize_phrase(phrase)
    if not key:
        raise ValidationError("cannot parse an empty action phrase")
    tokens = [t for t in key.split() if t not in STOPWORDS] or key.split()
    lemmas = [lexicon.lemmatize(t) for t in tokens]

    gerund = [t.endswith("ing") and t != lem for t, lem in zip(tokens, lemmas)]

    verb_idx = None
    # gerund surface forms are the strongest verb evidence, then any listed verb
    for i, lem in enumerate(lemmas):
        if gerund[i] and lem in lexicon.verbs:
            verb_idx = i
            break
    if verb_idx is None:
        for i, lem in enumerate(lemmas):
            if lem in lexicon.verbs:
                verb_idx = i
                break
    if verb_idx is None:
        verb, verb_source = lexicon.verb_default, VerbSource.DEFAULT_DOING
    else:
        tok = tokens[verb_idx]
        verb = tok if gerund[verb_idx] else lexicon.gerund(lemmas[verb_idx])
        verb_source = VerbSource.PARSED

    noun = None
    for i, lem in enumerate(lemmas):
        if i != verb_idx and not gerund[i] and lem in lexicon.nouns:
            noun, noun_source = lem, NounSource.PARSED
            break
    if noun is None and key in lexicon.noun_overrides:
        noun, noun_source = lexicon.noun_overrides[key], NounSource.OVERRIDE_TABLE
    if noun is None:
        rest = [i for i in range(len(tokens)) if i != verb_idx]
        if rest:
            noun = lemmas[rest[-1]]
        else:
            noun = tokens[verb_idx]
        noun_source = NounSource.HEAD
    return VerbNounPair(verb, noun, verb_source, noun_source)


# --------------------------------------------------------------------------
# split manifests

@dataclass(frozen=True)
class SplitManifest:
    name: str
    train_classes: tuple
    test_classes: tuple
    kinetics_overlap: tuple = ()
    aliases: dict = field(default_factory=dict)
    auxiliary_classes: tuple = ()
    multi_label: bool = False
    top_n: int | None = None

    def __post_init__(self):
        validate_manifest(self)

    @property
    def dataset_classes(self):
        return self.train_classes + self.test_classes

    def embedding_key(self, label):
        return self.aliases.get(label, label)


def validate_manifest(m: SplitManifest):
    for section, items in (("train", m.train_classes), ("test", m.test_classes)):
        if len(set(items)) != len(items):
            dup = sorted({x for x in items if items.count(x) > 1})
            raise ValidationError(f"{m.name}: duplicate {section} classes {dup}")
    both = set(m.train_classes) & set(m.test_classes)
    if both:
        raise ValidationError(f"{m.name}: classes in both train and test: {sorted(both)}")
    overlapping = {pair[0] for pair in m.kinetics_overlap} & set(m.test_classes)
    if overlapping:
        raise ValidationError(
            f"{m.name}: test classes overlap the pre-training label set: {sorted(overlapping)}"
        )
    if len(set(m.auxiliary_classes)) != len(m.auxiliary_classes):
        raise ValidationError(f"{m.name}: duplicate auxiliary classes")


_SECTIONS = ("meta", "train", "test", "overlap", "alias", "auxiliary")


def load_split_manifest(path) -> SplitManifest:
    """Parse a manifest file with ``[meta]``, ``[train]``, ``[test]``,
    ``[overlap]``, ``[alias]`` and ``[auxiliary]`` sections.

    List sections accept ``@relative/path`` lines that include a file of
    labels, one per line.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"manifest not found: {path}")
    sections = {s: [] for s in _SECTIONS}
    current = None
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if current not in sections:
                raise ValidationError(f"{path}:{lineno}: unknown section [{current}]")
            continue
        if current is None:
            raise ValidationError(f"{path}:{lineno}: entry outside any section")
        if line.startswith("@") and current in ("train", "test", "auxiliary"):
            sections[current].extend(_read_list(path.parent / line[1:]))
            continue
        sections[current].append((lineno, raw.rstrip("\n")))

    def plain(items):
        return tuple(x if isinstance(x, str) else x[1].strip() for x in items)

    def pairs(name):
        out = []
        for lineno, raw in sections[name]:
            a, sep, b = raw.partition("\t")
            if not sep:
                raise ValidationError(f"{path}:{lineno}: [{name}] lines need 'a<TAB>b'")
            out.append((a.strip(), b.strip()))
        return out

    meta = dict(pairs("meta"))
    return SplitManifest(
        name=meta.get("name", path.stem),
        train_classes=plain(sections["train"]),
        test_classes=plain(sections["test"]),
        kinetics_overlap=tuple(pairs("overlap")),
        aliases=dict(pairs("alias")),
        auxiliary_classes=plain(sections["auxiliary"]),
        multi_label=meta.get("multi_label", "false").lower() == "true",
        top_n=int(meta["top_n"]) if "top_n" in meta else None,
    )


def manifest_text(m: SplitManifest) -> str:
    lines = ["[meta]", f"name\t{m.name}", f"multi_label\t{str(m.multi_label).lower()}"]
    if m.top_n is not None:
        lines.append(f"top_n\t{m.top_n}")
    lines += ["", "[train]", *m.train_classes, "", "[test]", *m.test_classes, "", "[overlap]"]
    lines += [f"{a}\t{b}" for a, b in m.kinetics_overlap]
    lines += ["", "[alias]"] + [f"{a}\t{b}" for a, b in m.aliases.items()]
    lines += ["", "[auxiliary]", *m.auxiliary_classes]
    return "\n".join(lines) + "\n"


def write_split_manifest(path, m: SplitManifest):
    Path(path).write_text(manifest_text(m), encoding="utf-8")


SHIPPED_DATASETS = ("ucf101", "hmdb51", "charades")


def shipped_manifest(dataset: str) -> SplitManifest:
    dataset = dataset.lower()
    if dataset not in SHIPPED_DATASETS:
        raise ValidationError(f"no shipped manifest for {dataset!r}; choose from {SHIPPED_DATASETS}")
    return load_split_manifest(data_path("manifests", f"{dataset}.manifest"))


def generate_random_splits(manifest: SplitManifest, n_test, n_splits, seed):
    """Draw ``n_splits`` test sets of ``n_test`` classes from the manifest's
    test pool; every other dataset class becomes training data."""
    eligible = list(manifest.test_classes)
    if n_test < 1 or n_test > len(eligible):
        raise ValidationError(f"n_test={n_test} but only {len(eligible)} eligible classes")
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_splits):
        picked = set(rng.choice(len(eligible), size=n_test, replace=False).tolist())
        test = tuple(c for i, c in enumerate(eligible) if i in picked)
        train = tuple(c for c in manifest.dataset_classes if c not in test)
        out.append(
            SplitManifest(
                name=f"{manifest.name}-split{k + 1}",
                train_classes=train,
                test_classes=test,
                kinetics_overlap=manifest.kinetics_overlap,
                aliases=dict(manifest.aliases),
                auxiliary_classes=manifest.auxiliary_classes,
                multi_label=manifest.multi_label,
                top_n=manifest.top_n,
            )
        )
    return out
