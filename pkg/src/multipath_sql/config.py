"""Run configuration: dataclasses loaded from a TOML file, overridable from the CLI.

Example file::

    [backend]
    kind = "remote"            # or "mock"
    endpoint = "https://api.example.com/v1"
    model = "some-model"
    api_key_env = "LLM_API_KEY"
    embedder = "hashing"       # "hashing", "remote" or "none"

    [retrieval]
    bands = 32
    rows_per_band = 4
    alpha = 0.6

    [generation]
    n_per_generator = 7
    temperature = 0.5
    n_f = 5
    n_t = 5

    [fixer]
    beta = 3

    [selection]
    strategies = ["tournament", "consistency", "ranker", "oracle", "adversarial"]
    comparator = "remote"      # "remote", "oracle", "adversarial" or "simulated"

    [run]
    workers = 4
    timeout_ms = 30000
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .fixer import FixerConfig
from .generation import GenerationConfig, SyntheticGenSpec
from .models import GeneratorKind
from .retrieval import IndexConfig

STRATEGIES = ("tournament", "consistency", "ranker", "oracle", "adversarial")
COMPARATORS = ("remote", "oracle", "adversarial", "simulated")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "LLM_API_KEY"
    timeout: float = 120.0
    max_retries: int = 4
    mock_script: str = ""
    embedder: str = "hashing"
    embed_endpoint: str = ""
    embed_model: str = ""

    def __post_init__(self):
        if self.kind not in ("mock", "remote"):
            raise ValueError(f"backend kind must be 'mock' or 'remote', not {self.kind!r}")
        if self.embedder not in ("hashing", "remote", "none"):
            raise ValueError(f"unknown embedder {self.embedder!r}")


@dataclass(frozen=True)
class SelectionConfig:
    strategies: tuple[str, ...] = STRATEGIES
    comparator: str = "remote"
    p: float = 0.71
    seed: int = 0
    max_workers: int = 1

    def __post_init__(self):
        bad = set(self.strategies) - set(STRATEGIES)
        if bad:
            raise ValueError(f"unknown strategies {sorted(bad)}")
        if self.comparator not in COMPARATORS:
            raise ValueError(f"unknown comparator {self.comparator!r}")


@dataclass(frozen=True)
class RunConfig:
    workers: int = 1
    timeout_ms: int = 30_000
    compare_mode: str = "multiset"
    out: str = "runs/latest"
    index_dir: str = ""
    audit: bool = True

    def __post_init__(self):
        if self.compare_mode not in ("multiset", "set"):
            raise ValueError("compare_mode must be 'multiset' or 'set'")


@dataclass(frozen=True)
class PipelineConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    retrieval: IndexConfig = field(default_factory=IndexConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    fixer: FixerConfig = field(default_factory=FixerConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    run: RunConfig = field(default_factory=RunConfig)


def _build(cls, data: dict, section: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown keys in [{section}]: {sorted(unknown)}")
    values = {}
    for name, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        values[name] = value
    return cls(**values)


def _generation(data: dict) -> GenerationConfig:
    data = dict(data)
    synth = {k: data.pop(k) for k in ("n_f", "n_t", "guideline_f", "guideline_t") if k in data}
    if "generators" in data:
        data["generators"] = tuple(GeneratorKind(g) for g in data["generators"])
    cfg = _build(GenerationConfig, data, "generation")
    return replace(cfg, synthetic=SyntheticGenSpec(**synth)) if synth else cfg


def config_from_dict(data: dict) -> PipelineConfig:
    unknown = set(data) - {f.name for f in fields(PipelineConfig)}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    return PipelineConfig(
        backend=_build(BackendConfig, data.get("backend", {}), "backend"),
        retrieval=_build(IndexConfig, data.get("retrieval", {}), "retrieval"),
        generation=_generation(data.get("generation", {})),
        fixer=_build(FixerConfig, data.get("fixer", {}), "fixer"),
        selection=_build(SelectionConfig, data.get("selection", {}), "selection"),
        run=_build(RunConfig, data.get("run", {}), "run"),
    )


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path, "rb") as fh:
        return config_from_dict(tomllib.load(fh))


def config_to_dict(config: PipelineConfig) -> dict:
    """Plain nested dict in the layout of the config file, suitable for JSON."""

    def plain(v):
        if dataclasses.is_dataclass(v):
            return {f.name: plain(getattr(v, f.name)) for f in fields(v)}
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        if isinstance(v, GeneratorKind):
            return v.value
        return v

    out = plain(config)
    out["generation"].update(out["generation"].pop("synthetic"))
    return out


def with_overrides(config: PipelineConfig, **overrides) -> PipelineConfig:
    """Apply CLI-level overrides; None values leave the file setting in place."""
    gen, fix, sel, run, backend = config.generation, config.fixer, config.selection, config.run, config.backend
    if overrides.get("n_per_generator") is not None:
        gen = replace(gen, n_per_generator=overrides["n_per_generator"])
    if overrides.get("temperature") is not None:
        gen = replace(gen, temperature=overrides["temperature"])
    if overrides.get("seed") is not None:
        gen = replace(gen, base_seed=overrides["seed"])
        sel = replace(sel, seed=overrides["seed"])
    if overrides.get("beta") is not None:
        fix = replace(fix, beta=overrides["beta"])
    if overrides.get("strategy"):
        sel = replace(sel, strategies=tuple(overrides["strategy"]))
    if overrides.get("comparator"):
        sel = replace(sel, comparator=overrides["comparator"])
    if overrides.get("backend"):
        backend = replace(backend, kind=overrides["backend"])
    if overrides.get("mock_script"):
        backend = replace(backend, mock_script=overrides["mock_script"])
    if overrides.get("out"):
        run = replace(run, out=str(overrides["out"]))
    if overrides.get("workers") is not None:
        run = replace(run, workers=overrides["workers"])
    return replace(config, generation=gen, fixer=fix, selection=sel, run=run, backend=backend)
