# app/services/scenario.py
# Imbalance scenarios: balanced validation split, imbalanced labelled split, near-balanced
# unlabelled remainder. Splits are disjoint by observation id.

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.core.exceptions import ScenarioError
from app.schemas.scenario import ScenarioConfig
from app.services.datasets import ImageDataset, LabeledSet, labeled_set

logger = logging.getLogger("sslb.scenario")


@dataclass
class UnlabeledSet:
    """Training-visible images only; true labels stay behind analysis_labels()."""

    images: np.ndarray
    ids: List[str] = field(default_factory=list)
    _hidden_labels: np.ndarray = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.images)

    def analysis_labels(self) -> np.ndarray:
        return self._hidden_labels

    def hidden_class_counts(self, num_classes: int = 2) -> Tuple[int, ...]:
        return tuple(int(c) for c in np.bincount(self._hidden_labels, minlength=num_classes))


def strip_labels(s: LabeledSet) -> UnlabeledSet:
    return UnlabeledSet(images=s.images, ids=list(s.ids), _hidden_labels=s.classes.copy())


@dataclass
class Scenario:
    config: ScenarioConfig
    labelled: LabeledSet
    unlabelled: UnlabeledSet
    validation: LabeledSet

    def membership(self) -> Dict[str, List[str]]:
        return {
            "labelled": list(self.labelled.ids),
            "unlabelled": list(self.unlabelled.ids),
            "validation": list(self.validation.ids),
        }

    def describe(self) -> str:
        return (
            f"neg_fraction={self.config.neg_fraction} n_l={self.config.n_l} seed={self.config.seed} "
            f"labelled={self.labelled.class_counts()} unlabelled={self.unlabelled.hidden_class_counts()} "
            f"validation={self.validation.class_counts()}"
        )


def split_counts(config: ScenarioConfig) -> Dict[str, Tuple[int, int]]:
    """Per-split (class 0, class 1) counts.

    The unlabelled split takes whatever the validation and labelled splits leave of
    total_sample, balanced to within one; its odd observation goes to the class with
    fewer observations drawn so far (class 0 on ties).
    """
    val_neg, val_pos = config.val_counts
    lab_neg, lab_pos = config.labelled_counts
    unl = config.unlabelled_size
    extra_to_neg = (val_neg + lab_neg) <= (val_pos + lab_pos)
    unl_neg = unl // 2 + (unl % 2 if extra_to_neg else 0)
    return {
        "validation": (val_neg, val_pos),
        "labelled": (lab_neg, lab_pos),
        "unlabelled": (unl_neg, unl - unl_neg),
    }


def sample_scenario(
    pos_pool: ImageDataset,
    neg_pool: ImageDataset,
    config: ScenarioConfig,
    rng: Optional[np.random.Generator] = None,
) -> Scenario:
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    counts = split_counts(config)
    needed_neg = sum(c[0] for c in counts.values())
    needed_pos = sum(c[1] for c in counts.values())
    shortfalls = []
    if len(neg_pool) < needed_neg:
        shortfalls.append(f"class 0 needs {needed_neg}, pool has {len(neg_pool)}")
    if len(pos_pool) < needed_pos:
        shortfalls.append(f"class 1 needs {needed_pos}, pool has {len(pos_pool)}")
    if shortfalls:
        raise ScenarioError("insufficient pool: " + "; ".join(shortfalls))

    order = ("validation", "labelled", "unlabelled")
    picks: Dict[str, List[Tuple[ImageDataset, np.ndarray]]] = {name: [] for name in order}
    for class_idx, pool in ((0, neg_pool), (1, pos_pool)):
        drawn = rng.permutation(len(pool))[: sum(counts[name][class_idx] for name in order)]
        start = 0
        for name in order:
            size = counts[name][class_idx]
            picks[name].append((pool, drawn[start:start + size]))
            start += size

    splits = {name: _assemble(parts) for name, parts in picks.items()}
    scenario = Scenario(
        config=config,
        labelled=labeled_set(splits["labelled"]),
        unlabelled=strip_labels(labeled_set(splits["unlabelled"])),
        validation=labeled_set(splits["validation"]),
    )
    logger.info("Sampled scenario %s", scenario.describe())
    return scenario


def _assemble(parts: List[Tuple[ImageDataset, np.ndarray]]) -> ImageDataset:
    subsets = [pool.subset(idx) for pool, idx in parts]
    return ImageDataset(
        images=np.concatenate([s.images for s in subsets], axis=0),
        labels=np.concatenate([s.labels for s in subsets]).astype(int),
        ids=[obs_id for s in subsets for obs_id in s.ids],
    )


# -- Manifests ----------------------------------------------------------------
# Plain text: "seed=..", "config=<json>", then one "<split>\t<id>" line per observation.

def write_manifest(scenario: Scenario, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"seed={scenario.config.seed}",
        f"config={scenario.config.model_dump_json()}",
        f"counts={json.dumps(split_counts(scenario.config))}",
    ]
    for split, ids in scenario.membership().items():
        lines.extend(f"{split}\t{obs_id}" for obs_id in ids)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: Path) -> Tuple[ScenarioConfig, Dict[str, List[str]]]:
    config: Optional[ScenarioConfig] = None
    membership: Dict[str, List[str]] = {"labelled": [], "unlabelled": [], "validation": []}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("config="):
            config = ScenarioConfig(**json.loads(line[len("config="):]))
        elif "\t" in line:
            split, obs_id = line.split("\t", 1)
            membership[split].append(obs_id)
    if config is None:
        raise ScenarioError(f"manifest {path} has no config line")
    return config, membership


def scenario_from_manifest(path: Path, pos_pool: ImageDataset, neg_pool: ImageDataset) -> Scenario:
    config, membership = read_manifest(path)
    index: Dict[str, Tuple[ImageDataset, int]] = {}
    for pool in (neg_pool, pos_pool):
        for i, obs_id in enumerate(pool.ids):
            index[obs_id] = (pool, i)

    splits = {}
    for name, ids in membership.items():
        missing = [obs_id for obs_id in ids if obs_id not in index]
        if missing:
            raise ScenarioError(f"manifest {path} references {len(missing)} unknown observations, e.g. {missing[0]}")
        splits[name] = _assemble([(index[obs_id][0], np.array([index[obs_id][1]])) for obs_id in ids])
    return Scenario(
        config=config,
        labelled=labeled_set(splits["labelled"]),
        unlabelled=strip_labels(labeled_set(splits["unlabelled"])),
        validation=labeled_set(splits["validation"]),
    )
