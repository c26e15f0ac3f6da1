"""Run configuration: one JSON file describing every stage of a run.

Example::

    {
      "seed": 0,
      "out": "runs/quadratic",
      "dataset": {"source": "QuadraticSynthetic", "count": 2000},
      "kernel": {"family": "EmpiricalCovariance"},
      "truncation": {"mode": "threshold", "eta": 0.99},
      "train": {"iterations": 20000},
      "evaluation": {"num_tests": 1000}
    }

``dataset`` is either an inline manifest or the path of a manifest file.
Relative paths are resolved against the directory of the file that holds
them. Stage seeds derive from the top-level ``seed``, so the ``train`` and
``evaluation`` sections do not take their own.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .data import DatasetManifest
from .diffusion import DiffusionConfig
from .eigensystem import TruncationConfig
from .errors import InvalidConfigError, MissingArtifactError, ParseError
from .evaluation import TwoSampleTestConfig
from .kernels import KernelSpec
from .score_net import TrainConfig
from .seeding import derive_seed

SECTIONS = (
    "seed", "out", "dataset", "kernel", "truncation", "mean", "normalize_inputs",
    "diffusion", "train", "evaluation", "sample_count",
)


def _read_json(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno) from exc


@dataclass
class RunConfig:
    dataset: DatasetManifest = field(default_factory=DatasetManifest)
    kernel: dict = field(default_factory=lambda: {"family": "EmpiricalCovariance"})
    truncation: TruncationConfig = field(default_factory=TruncationConfig)
    mean: str = "sample"
    normalize_inputs: bool = True
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluation: TwoSampleTestConfig = field(default_factory=TwoSampleTestConfig)
    sample_count: int = 64
    out: str = "run"
    seed: int = 0
    base_dir: Path = field(default=Path("."), compare=False)
    dataset_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        if self.mean not in ("sample", "zero"):
            raise InvalidConfigError(f"mean must be 'sample' or 'zero', not {self.mean!r}")
        if int(self.seed) < 0:
            raise InvalidConfigError("seed must be a non-negative integer")
        KernelSpec.from_dict(self.kernel)  # validates family and hyperparameters

    # -- seeds -----------------------------------------------------------
    def stage_seed(self, stage):
        return derive_seed(self.seed, stage)

    def train_config(self):
        return replace(self.train, seed=self.stage_seed("train"))

    def evaluation_config(self):
        return replace(self.evaluation, seed=self.stage_seed("evaluate"))

    # -- paths -----------------------------------------------------------
    @property
    def out_dir(self):
        return self.base_dir / self.out

    def resolved_manifest(self):
        m = self.dataset
        if m.path is not None and not Path(m.path).is_absolute():
            m = replace(m, path=str(self.dataset_dir / m.path))
        if m.path is not None and not Path(m.path).exists():
            raise MissingArtifactError(f"dataset file not found: {m.path}")
        return m

    # -- serialisation ---------------------------------------------------
    def to_dict(self):
        train = self.train.to_dict()
        train.pop("seed")
        evaluation = self.evaluation.to_dict()
        evaluation.pop("seed")
        return {
            "seed": int(self.seed),
            "out": self.out,
            "dataset": self.dataset.to_dict(),
            "kernel": dict(self.kernel),
            "truncation": self.truncation.to_dict(),
            "mean": self.mean,
            "normalize_inputs": self.normalize_inputs,
            "diffusion": self.diffusion.to_dict(),
            "train": train,
            "evaluation": evaluation,
            "sample_count": self.sample_count,
        }

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def sha256(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def header(self):
        """Comment line embedded at the top of every CSV output."""
        return f"config_sha256={self.sha256()}"

    @classmethod
    def from_dict(cls, d, base_dir=Path("."), dataset_dir=None):
        d = copy.deepcopy(d)
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
        for section in ("train", "evaluation"):
            if "seed" in d.get(section, {}):
                raise InvalidConfigError(f"{section}.seed is derived from the top-level seed; remove it")
        base_dir = Path(base_dir)
        dataset_dir = base_dir if dataset_dir is None else Path(dataset_dir)
        ds = d.get("dataset", {})
        if isinstance(ds, str):
            mpath = Path(ds) if Path(ds).is_absolute() else base_dir / ds
            ds = _read_json(mpath)
            dataset_dir = mpath.parent
        try:
            return cls(
                dataset=DatasetManifest.from_dict(ds),
                kernel=dict(d.get("kernel", {"family": "EmpiricalCovariance"})),
                truncation=TruncationConfig.from_dict(d.get("truncation", {})),
                mean=d.get("mean", "sample"),
                normalize_inputs=bool(d.get("normalize_inputs", True)),
                diffusion=DiffusionConfig.from_dict(d.get("diffusion", {})),
                train=TrainConfig.from_dict(d.get("train", {})),
                evaluation=TwoSampleTestConfig.from_dict(d.get("evaluation", {})),
                sample_count=int(d.get("sample_count", 64)),
                out=str(d.get("out", "run")),
                seed=int(d.get("seed", 0)),
                base_dir=base_dir,
                dataset_dir=dataset_dir,
            )
        except (TypeError, KeyError) as exc:
            raise InvalidConfigError(f"malformed config: {exc}") from exc

    @classmethod
    def load(cls, path):
        path = Path(path)
        return cls.from_dict(_read_json(path), base_dir=path.parent)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def apply_overrides(d, assignments):
    """Apply ``section.key=value`` strings (values parsed as JSON when possible)."""
    d = copy.deepcopy(d)
    for item in assignments:
        if "=" not in item:
            raise InvalidConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise InvalidConfigError(f"override {key!r} descends into a non-section")
        node[parts[-1]] = value
    return d
