"""Ratings ingestion and preprocessing.

Pipeline: load delimited ratings -> collapse to implicit-feedback positives
(optional rating threshold) -> map items onto knowledge-graph entity indices
(items occupy a prefix of entity index space; unmapped items are dropped) ->
draw one unwatched negative per positive for each user -> densify user ids ->
split 6:2:2 (configurable) into train/validation/test.

Negatives are drawn once here, not resampled per epoch, so the validation
and test label sets are fixed and well defined. All steps are deterministic
given the seed; rerunning the pipeline reproduces byte-identical outputs.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError, ParseError

log = logging.getLogger(__name__)

DELIMITERS = {"tab": "\t", "comma": ",", "double-colon": "::", "semicolon": ";"}


class RawRating(NamedTuple):
    user_id: str
    item_id: str
    rating: float


@dataclass
class InteractionDataset:
    """Labeled (user, item) records with dense indices.

    users/items/labels are parallel int64 arrays; labels are 0/1. items are
    entity indices (the item prefix of entity index space), num_items is the
    size of that prefix.
    """

    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray
    num_users: int
    num_items: int

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return InteractionDataset(
            users=self.users[idx],
            items=self.items[idx],
            labels=self.labels[idx],
            num_users=self.num_users,
            num_items=self.num_items,
        )


@dataclass
class SplitDataset:
    train: InteractionDataset
    validation: InteractionDataset
    test: InteractionDataset
    seed: int


def load_ratings(path, delimiter="\t", skip_header=False):
    """Read a delimited ratings file into RawRating records, order preserved.

    Each non-empty line needs at least user, item, rating fields; extra
    trailing fields (e.g. timestamps) are ignored. Fields may be wrapped in
    double quotes. Malformed lines raise ParseError with the line number.
    """
    ratings = []
    with open(path, "r", encoding="utf-8", errors="replace") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if skip_header and line_no == 1:
                continue
            parts = [p.strip().strip('"') for p in line.split(delimiter)]
            if len(parts) < 3:
                raise ParseError(path, line_no, f"expected >=3 fields, got {len(parts)}")
            user, item = parts[0], parts[1]
            if not user or not item:
                raise ParseError(path, line_no, "empty user or item key")
            try:
                rating = float(parts[2])
            except ValueError:
                raise ParseError(path, line_no, f"bad rating value {parts[2]!r}") from None
            if not np.isfinite(rating):
                raise ParseError(path, line_no, f"non-finite rating {parts[2]!r}")
            ratings.append(RawRating(user, item, rating))
    return ratings


def implicitize(ratings, threshold=None):
    """Convert explicit ratings to implicit-feedback positives.

    Duplicate (user, item) pairs collapse to one record keeping the maximum
    rating, then the threshold (if any) is applied: kept iff rating >=
    threshold. With no threshold every rated pair counts as positive.
    Returns (user, item) pairs in first-appearance order.
    """
    best = {}
    order = []
    for r in ratings:
        key = (r.user_id, r.item_id)
        if key not in best:
            best[key] = r.rating
            order.append(key)
        elif r.rating > best[key]:
            best[key] = r.rating
    if threshold is None:
        return list(order)
    return [key for key in order if best[key] >= threshold]


def load_item2entity(path):
    """Read the two-column item -> entity-index mapping file.

    Lines are 'raw_item_id<TAB>entity_id'. An item listed twice is an error.
    """
    mapping = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                parts = line.split()
            if len(parts) != 2:
                raise ParseError(path, line_no, f"expected 2 fields, got {len(parts)}")
            item, entity = parts[0].strip(), parts[1].strip()
            if item in mapping:
                raise DataError(f"{path}:{line_no}: duplicate mapping for item {item!r}")
            try:
                mapping[item] = int(entity)
            except ValueError:
                raise ParseError(path, line_no, f"bad entity index {entity!r}") from None
            if mapping[item] < 0:
                raise ParseError(path, line_no, "negative entity index")
    return mapping


def map_items(pairs, item2entity):
    """Replace raw item ids with their entity indices, dropping unmapped items.

    Returns (mapped_pairs, dropped_count); mapped_pairs are (user, entity_idx).
    """
    mapped = []
    dropped = 0
    for user, item in pairs:
        idx = item2entity.get(item)
        if idx is None:
            dropped += 1
        else:
            mapped.append((user, idx))
    return mapped, dropped


def sample_unwatched_negatives(positives_by_user, num_items, seed, item_universe=None):
    """Draw per-user negatives from items the user has no positive for.

    For a user with p positives and u unwatched items, emits min(p, u)
    negatives uniformly without replacement; users who watched everything
    produce none. item_universe defaults to range(num_items); deterministic
    given the seed (users are visited in sorted key order).
    """
    if item_universe is None:
        universe = np.arange(num_items, dtype=np.int64)
    else:
        universe = np.asarray(sorted(item_universe), dtype=np.int64)
    for user in positives_by_user:
        hi = max(positives_by_user[user], default=-1)
        if hi >= num_items:
            raise DataError(f"item index {hi} out of range for num_items={num_items}")
    rng = np.random.default_rng(seed)
    negatives = []
    for user in sorted(positives_by_user):
        watched = np.fromiter(positives_by_user[user], dtype=np.int64)
        unwatched = np.setdiff1d(universe, watched, assume_unique=True)
        k = min(len(watched), len(unwatched))
        if k == 0:
            continue
        chosen = rng.choice(unwatched, size=k, replace=False)
        for item in chosen:
            negatives.append((user, int(item), 0))
    return negatives


def remap_and_join(positives, negatives, item2entity):
    """Join positives and negatives into one dataset with dense user indices.

    positives are (user, entity_idx) pairs, negatives are (user, entity_idx,
    0) records; items must already live in entity index space (map_items).
    Item indices outside the mapping are dropped (count logged). Returns
    (dataset, user_index) where user_index maps raw user key -> dense index,
    persisted by the caller for prediction-time reverse lookup.
    """
    valid_items = set(item2entity.values())
    num_items = max(valid_items) + 1 if valid_items else 0
    records = [(u, v, 1) for u, v in positives] + [(u, v, 0) for u, v, _ in negatives]
    seen = {}
    dropped = 0
    for u, v, y in records:
        if v not in valid_items:
            dropped += 1
        else:
            seen.setdefault((u, v), y)
    if dropped:
        log.warning("dropped %d records with unmapped items", dropped)
    kept = [(u, v, y) for (u, v), y in seen.items()]
    user_index = {u: i for i, u in enumerate(sorted({u for u, _, _ in kept}))}
    kept.sort(key=lambda rec: (user_index[rec[0]], rec[1]))
    users = np.array([user_index[u] for u, _, _ in kept], dtype=np.int64)
    items = np.array([v for _, v, _ in kept], dtype=np.int64)
    labels = np.array([y for _, _, y in kept], dtype=np.int64)
    dataset = InteractionDataset(
        users=users,
        items=items,
        labels=labels,
        num_users=len(user_index),
        num_items=num_items,
    )
    return dataset, user_index


def split(dataset, ratios, seed):
    """Uniform random partition into train/validation/test by ratio.

    Sizes follow the largest-remainder rounding of the normalized ratios, so
    they match the exact proportions within one record. Deterministic given
    the seed.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ConfigError(f"bad split ratios {ratios}")
    n = len(dataset)
    if n == 0:
        raise DataError("cannot split an empty dataset")
    total = float(sum(ratios))
    exact = [n * r / total for r in ratios]
    sizes = [int(np.floor(x)) for x in exact]
    remainders = [x - s for x, s in zip(exact, sizes)]
    for _ in range(n - sum(sizes)):
        i = int(np.argmax(remainders))
        sizes[i] += 1
        remainders[i] = -1.0
    for part, (size, ratio) in enumerate(zip(sizes, ratios)):
        if size == 0 and ratio > 0 and n >= 3:
            log.warning("split part %d received zero records (ratio %s)", part, ratio)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    a, b = sizes[0], sizes[0] + sizes[1]
    return SplitDataset(
        train=dataset.subset(np.sort(perm[:a])),
        validation=dataset.subset(np.sort(perm[a:b])),
        test=dataset.subset(np.sort(perm[b:])),
        seed=seed,
    )


def write_final_ratings(path, dataset):
    """Emit 'user<TAB>item<TAB>label' lines, one record per line."""
    with open(path, "w", encoding="utf-8") as f:
        for u, v, y in zip(dataset.users, dataset.items, dataset.labels):
            f.write(f"{u}\t{v}\t{y}\n")


def read_final_ratings(path, num_users=None, num_items=None):
    """Read a final-ratings file back into an InteractionDataset."""
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(path, line_no, f"expected 3 fields, got {len(parts)}")
            try:
                u, v, y = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError:
                raise ParseError(path, line_no, "non-integer field") from None
            if y not in (0, 1):
                raise ParseError(path, line_no, f"label must be 0/1, got {y}")
            rows.append((u, v, y))
    if not rows:
        raise DataError(f"{path}: no interactions")
    users = np.array([r[0] for r in rows], dtype=np.int64)
    items = np.array([r[1] for r in rows], dtype=np.int64)
    labels = np.array([r[2] for r in rows], dtype=np.int64)
    return InteractionDataset(
        users=users,
        items=items,
        labels=labels,
        num_users=num_users if num_users is not None else int(users.max()) + 1,
        num_items=num_items if num_items is not None else int(items.max()) + 1,
    )


def preprocess(ratings_path, mapping_path, delimiter="\t", threshold=None,
               seed=0, skip_header=False):
    """Run the full ingestion pipeline.

    Returns (dataset, user_index, item2entity, stats) where stats carries the
    headline dataset counts (positives kept, records dropped by mapping).
    """
    ratings = load_ratings(ratings_path, delimiter=delimiter, skip_header=skip_header)
    positives_raw = implicitize(ratings, threshold=threshold)
    item2entity = load_item2entity(mapping_path)
    mapped, dropped = map_items(positives_raw, item2entity)
    if dropped:
        log.info("excluded %d positives whose items have no entity mapping", dropped)
    if not mapped:
        raise DataError("no interactions survive preprocessing")
    by_user = {}
    for user, item in mapped:
        by_user.setdefault(user, set()).add(item)
    num_items = max(item2entity.values()) + 1
    negatives = sample_unwatched_negatives(
        by_user, num_items, seed, item_universe=set(item2entity.values())
    )
    dataset, user_index = remap_and_join(mapped, negatives, item2entity)
    stats = {
        "users": dataset.num_users,
        "items": len(item2entity),
        "interactions": len(mapped),
        "dropped_unmapped": dropped,
    }
    return dataset, user_index, item2entity, stats
