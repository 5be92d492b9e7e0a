"""Run configuration: one frozen dataclass, JSON in, dict out.

Defaults are the synthetic-run settings: d=64, 3 layers, |C|=100,
gamma=0.7, eta=0.99, lambdas (0.01, 0.5, 0.1), batch 128, lr 0.001,
200 epochs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

from .errors import ContractError, ParseError

MODES = ("imold", "erm", "erm_rvq", "no_vq", "no_r", "no_inv", "no_reg", "no_cmt")
TASKS = ("binary", "multilabel", "regression")
SELECT_METRICS = ("auto", "accuracy", "roc_auc", "ap", "mae")


@dataclass(frozen=True)
class RunConfig:
    dataset: str
    mode: str = "imold"
    lambda_inv: float = 0.01  # weight on the invariant (cosine) loss
    lambda_reg: float = 0.5  # weight on the scorer-mean regularizer
    lambda_cmt: float = 0.1  # weight on the commitment loss
    gamma: float = 0.7
    eta: float = 0.99
    codebook_size: int = 100
    hidden_dim: int = 64
    num_layers: int = 3
    batch_size: int = 128
    lr: float = 0.001
    max_epochs: int = 200
    seeds: tuple[int, ...] = (0,)
    task: str | None = None  # override; inferred from data when None
    select_metric: str = "auto"

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        if min(self.lambda_inv, self.lambda_reg, self.lambda_cmt) < 0:
            raise ContractError("loss weights must be >= 0")
        if not 0.0 < self.gamma < 1.0:
            raise ContractError(f"gamma must be in (0,1), got {self.gamma}")
        if not 0.0 < self.eta < 1.0:
            raise ContractError(f"eta must be in (0,1), got {self.eta}")
        if self.codebook_size < 1 or self.hidden_dim < 1 or self.num_layers < 1:
            raise ContractError("codebook_size, hidden_dim, num_layers must be >= 1")
        if self.batch_size < 2:
            raise ContractError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.lr <= 0 or self.max_epochs < 1:
            raise ContractError("lr must be > 0 and max_epochs >= 1")
        if not self.seeds or any(not isinstance(s, int) or isinstance(s, bool) for s in self.seeds):
            raise ContractError("seeds must be a non-empty list of ints")
        if self.task is not None and self.task not in TASKS:
            raise ContractError(f"task override must be one of {TASKS}")
        if self.select_metric not in SELECT_METRICS:
            raise ContractError(f"select_metric must be one of {SELECT_METRICS}")
        if not self.dataset:
            raise ContractError("dataset path is required")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @staticmethod
    def from_dict(obj: dict) -> "RunConfig":
        known = set(RunConfig.__dataclass_fields__)
        extra = set(obj) - known
        if extra:
            raise ParseError(f"unknown config keys {sorted(extra)}")
        if "seeds" in obj:
            obj = dict(obj, seeds=tuple(obj["seeds"]))
        try:
            cfg = RunConfig(**obj)
        except TypeError as exc:
            raise ParseError(f"bad config: {exc}") from None
        return cfg.validate()

    @staticmethod
    def from_json(path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ParseError(f"{path}: config must be a JSON object")
        return RunConfig.from_dict(obj)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw).validate()
