"""Compile a categorized image tree into a versioned ground-truth file.

The collection is a directory tree in which every image-bearing directory
is a category.  Images are named by the SHA-256 of their bytes (the link
identifier), so an image copied into several categories is the same image,
and renaming a file never changes its identity.

File format (line oriented, canonical ordering throughout)::

    BIRDSI-GT 1
    version <int>
    gmax <int>
    category <name>
    member <link_id> <relative-path>
    ...
    end <category-count> <image-count>
"""

from __future__ import annotations

import hashlib
import logging
import os
import shutil
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .scoring import GroundTruthVector

log = logging.getLogger(__name__)

FORMAT_HEADER = "BIRDSI-GT 1"
IMAGE_EXTENSIONS = frozenset({".jpg", ".jpeg", ".png", ".gif", ".bmp", ".tif", ".tiff"})
_HEX = frozenset("0123456789abcdef")


class GroundTruthError(Exception):
    pass


class CollectionError(GroundTruthError):
    """The image tree cannot be compiled."""


class VersioningError(GroundTruthError):
    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__(
            f"{len(self.violations)} append-only violation(s): " + "; ".join(self.violations)
        )


class GroundTruthParseError(GroundTruthError):
    def __init__(self, lineno: int, message: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


class QueryDirectoryError(GroundTruthError):
    pass


def hash_image(content: bytes) -> str:
    if not content:
        warnings.warn("hashing empty image content", stacklevel=2)
    return hashlib.sha256(content).hexdigest()


def is_link_id(text: str) -> bool:
    return len(text) == 64 and set(text) <= _HEX


@dataclass(frozen=True, order=True)
class ImageRef:
    link_id: str
    source_path: str


@dataclass(frozen=True)
class Category:
    name: str
    members: tuple[ImageRef, ...]

    def __post_init__(self) -> None:
        members = tuple(sorted(self.members))
        object.__setattr__(self, "members", members)
        _check_name(self.name, "category name")
        ids = [m.link_id for m in members]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            paths = [m.source_path for m in members if m.link_id == dup]
            raise CollectionError(
                f"category {self.name!r}: identical content {dup} at {', '.join(paths)}"
            )

    @property
    def link_ids(self) -> frozenset[str]:
        return frozenset(m.link_id for m in self.members)


def _check_name(text: str, what: str) -> None:
    if not text or text != text.strip() or any(c in text for c in "\n\r"):
        raise CollectionError(f"unusable {what}: {text!r}")


@dataclass(frozen=True)
class GroundTruthFile:
    version: int
    categories: tuple[Category, ...]
    g_max: int | None = None  # computed when omitted

    def __post_init__(self) -> None:
        cats = tuple(sorted(self.categories, key=lambda c: c.name))
        object.__setattr__(self, "categories", cats)
        names = [c.name for c in cats]
        if len(set(names)) != len(names):
            raise GroundTruthError("duplicate category names")
        if self.version < 1:
            raise GroundTruthError(f"version must be >= 1, got {self.version}")
        computed = max((v.G for v in self.vectors().values()), default=0)
        if self.g_max is None:
            object.__setattr__(self, "g_max", computed)
        elif self.g_max != computed:
            raise GroundTruthError(f"g_max {self.g_max} disagrees with computed {computed}")

    def images(self) -> dict[str, str]:
        """link_id -> source path (lexicographically first occurrence)."""
        out: dict[str, str] = {}
        for cat in self.categories:
            for ref in cat.members:
                if ref.link_id not in out or ref.source_path < out[ref.link_id]:
                    out[ref.link_id] = ref.source_path
        return dict(sorted(out.items()))

    def pairs(self) -> set[tuple[str, str]]:
        return {(c.name, m.link_id) for c in self.categories for m in c.members}

    def vectors(self, include_self: bool = True) -> dict[str, GroundTruthVector]:
        """Ground-truth vector per query image, keyed and ordered by link_id.

        A query's vector is the union of every category containing it.
        With ``include_self=False`` the query image is held out, and queries
        left with an empty vector are dropped.
        """
        union: dict[str, set[str]] = {}
        for cat in self.categories:
            ids = cat.link_ids
            for link_id in ids:
                union.setdefault(link_id, set()).update(ids)
        out = {}
        for query in sorted(union):
            members = union[query] if include_self else union[query] - {query}
            if members:
                out[query] = GroundTruthVector(query, tuple(sorted(members)))
        return out

    def serialize(self) -> str:
        lines = [FORMAT_HEADER, f"version {self.version}", f"gmax {self.g_max}"]
        for cat in self.categories:
            lines.append(f"category {cat.name}")
            lines.extend(f"member {m.link_id} {m.source_path}" for m in cat.members)
        lines.append(f"end {len(self.categories)} {len(self.images())}")
        return "\n".join(lines) + "\n"

    def write(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.serialize(), encoding="utf-8", newline="\n")


def _image_files(root: Path) -> dict[str, list[Path]]:
    by_dir: dict[str, list[Path]] = {}
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = sorted(d for d in dirnames if not d.startswith("."))
        rel = Path(dirpath).relative_to(root).as_posix()
        images = sorted(
            f for f in filenames
            if not f.startswith(".") and os.path.splitext(f)[1].lower() in IMAGE_EXTENSIONS
        )
        if not images:
            continue
        if rel == ".":
            log.warning("ignoring %d image(s) directly under the collection root", len(images))
            continue
        by_dir[rel] = [Path(dirpath) / f for f in images]
    return by_dir


def _hash_file(path: Path) -> str:
    return hash_image(path.read_bytes())


def scan_collection(root: str | os.PathLike, workers: int | None = None) -> list[Category]:
    """One category per image-bearing directory, named by its relative path."""
    root = Path(root)
    if not root.is_dir():
        raise NotADirectoryError(f"collection root {root} is not a readable directory")
    by_dir = _image_files(root)
    if not by_dir:
        raise CollectionError(f"no image categories under {root}")
    files = [p for paths in by_dir.values() for p in paths]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        digests = dict(zip(files, pool.map(_hash_file, files)))
    return [
        Category(name, tuple(ImageRef(digests[p], p.relative_to(root).as_posix()) for p in paths))
        for name, paths in sorted(by_dir.items())
    ]


def succession_violations(old: GroundTruthFile, new: GroundTruthFile) -> list[str]:
    names = {m.link_id: m.source_path for c in old.categories for m in c.members}
    missing = sorted(old.pairs() - new.pairs())
    return [f"removed ({cat}, {link_id} {names[link_id]})" for cat, link_id in missing]


def compile_ground_truth(
    categories: Iterable[Category], previous: GroundTruthFile | None = None
) -> GroundTruthFile:
    categories = [c for c in categories if c.members]
    if not categories:
        raise CollectionError("no non-empty categories to compile")
    version = 1 if previous is None else previous.version + 1
    gt = GroundTruthFile(version=version, categories=tuple(categories))
    if previous is not None:
        violations = succession_violations(previous, gt)
        if violations:
            raise VersioningError(violations)
    return gt


@dataclass
class SuccessionReport:
    old_version: int
    new_version: int
    violations: list[str]

    @property
    def passed(self) -> bool:
        return not self.violations

    def render(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"{status} version {self.old_version} -> {self.new_version}"]
        lines += [f"  {v}" for v in self.violations]
        return "\n".join(lines) + "\n"


def validate_succession(old: GroundTruthFile, new: GroundTruthFile) -> SuccessionReport:
    violations = []
    if new.version != old.version + 1:
        violations.append(f"version {new.version} does not follow {old.version}")
    violations += succession_violations(old, new)
    return SuccessionReport(old.version, new.version, violations)


def parse_ground_truth(text: str) -> GroundTruthFile:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    else:
        raise GroundTruthParseError(len(lines), "file must end with a newline")

    def field_of(lineno: int, key: str) -> int:
        if lineno > len(lines):
            raise GroundTruthParseError(lineno, f"missing {key!r} line")
        word, _, value = lines[lineno - 1].partition(" ")
        if word != key or not value.isdigit():
            raise GroundTruthParseError(lineno, f"expected '{key} <int>'")
        return int(value)

    if not lines or lines[0] != FORMAT_HEADER:
        raise GroundTruthParseError(1, f"expected header {FORMAT_HEADER!r}")
    version = field_of(2, "version")
    g_max = field_of(3, "gmax")

    blocks: list[tuple[str, list[ImageRef]]] = []
    end_seen = False
    for lineno, line in enumerate(lines[3:], start=4):
        if end_seen:
            raise GroundTruthParseError(lineno, "content after 'end'")
        word, _, rest = line.partition(" ")
        if word == "category":
            if not rest or rest != rest.strip():
                raise GroundTruthParseError(lineno, "bad category name")
            if blocks and rest <= blocks[-1][0]:
                raise GroundTruthParseError(lineno, f"category {rest!r} out of order or repeated")
            blocks.append((rest, []))
        elif word == "member":
            if not blocks:
                raise GroundTruthParseError(lineno, "member before any category")
            link_id, _, path = rest.partition(" ")
            if not is_link_id(link_id) or not path:
                raise GroundTruthParseError(lineno, "expected 'member <link_id> <path>'")
            members = blocks[-1][1]
            if members and link_id <= members[-1].link_id:
                what = "duplicate" if link_id == members[-1].link_id else "out-of-order"
                raise GroundTruthParseError(lineno, f"{what} member {link_id}")
            members.append(ImageRef(link_id, path))
        elif word == "end":
            counts = rest.split(" ")
            if len(counts) != 2 or not all(c.isdigit() for c in counts):
                raise GroundTruthParseError(lineno, "expected 'end <categories> <images>'")
            n_cats, n_images = map(int, counts)
            if n_cats != len(blocks):
                raise GroundTruthParseError(lineno, f"end says {n_cats} categories, found {len(blocks)}")
            distinct = {m.link_id for _, members in blocks for m in members}
            if n_images != len(distinct):
                raise GroundTruthParseError(lineno, f"end says {n_images} images, found {len(distinct)}")
            end_seen = True
        else:
            raise GroundTruthParseError(lineno, f"unexpected line {line!r}")
    if not end_seen:
        raise GroundTruthParseError(len(lines) + 1, "missing 'end' line")
    for name, members in blocks:
        if not members:
            raise GroundTruthParseError(len(lines), f"category {name!r} has no members")
    try:
        return GroundTruthFile(
            version=version,
            categories=tuple(Category(n, tuple(m)) for n, m in blocks),
            g_max=g_max,
        )
    except GroundTruthError as exc:
        raise GroundTruthParseError(3, str(exc)) from exc


def load_ground_truth(path: str | os.PathLike) -> GroundTruthFile:
    return parse_ground_truth(Path(path).read_text(encoding="utf-8"))


def _same_entry(entry: Path, source: Path, opaque: bool) -> bool:
    if not opaque and entry.is_symlink():
        return os.readlink(entry) == os.path.relpath(source, entry.parent)
    if entry.is_symlink() or not entry.is_file():
        return False
    if opaque:
        return entry.read_bytes() == source.read_bytes()
    return entry.read_text(encoding="utf-8") == _pointer_text(source, entry.parent)


def _pointer_text(source: Path, out: Path) -> str:
    return os.path.relpath(source, out).replace(os.sep, "/") + "\n"


def emit_query_directory(
    gt: GroundTruthFile,
    out: str | os.PathLike,
    root: str | os.PathLike,
    opaque: bool = False,
) -> int:
    """Write one entry per distinct image, named by its link identifier.

    Transparent mode symlinks to the source image (or writes a pointer file
    holding the relative path where symlinks are unavailable).  Opaque mode
    hard-links (or copies) the bytes so no path, and hence no category name,
    is visible from the query directory.
    """
    out, root = Path(out), Path(root)
    out.mkdir(parents=True, exist_ok=True)
    images = gt.images()
    for link_id, rel in images.items():
        source = root / rel
        entry = out / link_id
        if entry.exists() or entry.is_symlink():
            if not _same_entry(entry, source, opaque):
                raise QueryDirectoryError(f"conflicting query-directory entry {entry}")
            continue
        if opaque:
            try:
                os.link(source, entry)
            except OSError:
                shutil.copyfile(source, entry)
        else:
            try:
                entry.symlink_to(os.path.relpath(source, out))
            except OSError:
                entry.write_text(_pointer_text(source, out), encoding="utf-8")
    return len(images)
