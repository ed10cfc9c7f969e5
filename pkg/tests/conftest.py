"""Shared fixtures and builders for the test suite."""

import os
from pathlib import Path

import numpy as np
import pytest

from kgcn.graph import Triple, build_adjacency, sample_neighborhood


def data_root():
    """Directory holding the real benchmark datasets, if the user provides
    them (see README: lastfm/, book/, movie/ subdirectories). Tests that need
    them skip when absent."""
    env = os.environ.get("KGCN_DATA")
    if env:
        return Path(env)
    return Path(__file__).resolve().parent.parent / "data"


def require_dataset(name, *files):
    root = data_root() / name
    missing = [f for f in files if not (root / f).exists()]
    if missing:
        pytest.skip(
            f"dataset '{name}' not available (expected {', '.join(missing)} "
            f"under {root}; see README for layout)"
        )
    return root


def random_graph(rng, num_entities, num_relations, num_triples):
    triples = [
        Triple(int(rng.integers(num_entities)), int(rng.integers(num_relations)),
               int(rng.integers(num_entities)))
        for _ in range(num_triples)
    ]
    return triples, build_adjacency(triples, num_entities)


def tiny_instance(seed, d=None, K=None, H=None, aggregator="sum", uniform=False):
    """Random small model + graph for gradient and oracle checks."""
    from kgcn.model import ModelConfig
    from kgcn.numerics import init_params

    rng = np.random.default_rng(seed)
    E = int(rng.integers(3, 9))
    R = int(rng.integers(1, 4))
    M = int(rng.integers(2, 4))
    d = d if d is not None else int(rng.integers(1, 5))
    K = K if K is not None else int(rng.integers(1, 4))
    H = H if H is not None else int(rng.integers(1, 3))
    triples, adj = random_graph(rng, E, R, 2 * E)
    sample = sample_neighborhood(adj, K, int(rng.integers(10_000)), R)
    params = init_params(M, E, R, d, H, aggregator, seed=int(rng.integers(10_000)))
    config = ModelConfig(d=d, H=H, K=K, aggregator=aggregator, uniform_weights=uniform)
    return params, sample, config, M, E, R


def write_synthetic_raw(dir_path, n_attrs=30, items_per_attr=20, n_users=150,
                        pos_per_user=6, seed=11):
    """Raw-format files for a dataset whose labels follow shared KG attributes.

    Items 0..n_items-1 are entities; each links to one attribute entity
    (n_items + group). Every user likes a handful of items from a single
    attribute group, so the KG pathway carries the label signal while
    per-item interactions stay sparse.
    """
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_items = n_attrs * items_per_attr
    with open(dir_path / "item2entity.tsv", "w") as f:
        for i in range(n_items):
            f.write(f"it{i}\t{i}\n")
    with open(dir_path / "kg.txt", "w") as f:
        for i in range(n_items):
            group = i // items_per_attr
            f.write(f"{i}\t{group % 3}\t{n_items + group}\n")
    with open(dir_path / "ratings.tsv", "w") as f:
        for u in range(n_users):
            group = u % n_attrs
            items = np.arange(group * items_per_attr, (group + 1) * items_per_attr)
            for v in rng.choice(items, size=pos_per_user, replace=False):
                f.write(f"u{u}\tit{v}\t1.0\n")
    return dir_path


@pytest.fixture(scope="session")
def synthetic_raw_dir(tmp_path_factory):
    return write_synthetic_raw(tmp_path_factory.mktemp("synth"))
