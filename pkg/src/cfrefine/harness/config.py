"""Run configuration: one YAML (or JSON) file per run.

Service endpoints may also come from the environment
(``CFREFINE_<SERVICE>_URL`` / ``CFREFINE_<SERVICE>_TOKEN``, with
``CFREFINE_API_TOKEN`` as a shared token); values in the file take precedence.
A ``services.mock`` block swaps every service for the in-process mocks.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from cfrefine.attribution import SurrogateConfig
from cfrefine.core import AttributionMode
from cfrefine.errors import ConfigError, InputError
from cfrefine.harness.dataset import DatasetSchema
from cfrefine.loop import LoopConfig
from cfrefine.services.clients import (
    AttributionClient,
    ClassifierClient,
    EmbedderClient,
    GenerationParams,
    GeneratorClient,
    ScorerClient,
    Services,
    WindowConfig,
)
from cfrefine.services.mocks import (
    HashEmbedder,
    LexiconClassifier,
    MockStack,
    RewriteRule,
    ScriptedGenerator,
    ScriptedJudge,
    UnigramScorer,
    WordLengthAttributor,
)
from cfrefine.services.transport import HttpTransport, LocalTransport, Transport

SERVICE_NAMES = ("generator", "classifier", "embedder", "scorer", "attributor")


@dataclass
class RunConfig:
    raw: dict[str, Any]
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path: str | Path, seed: int | None = None) -> "RunConfig":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping")
        cfg = cls(raw, path.resolve().parent)
        if seed is not None:
            cfg = cfg.with_seed(seed)
        return cfg

    def with_seed(self, seed: int) -> "RunConfig":
        raw = copy.deepcopy(self.raw)
        raw["seed"] = seed
        return RunConfig(raw, self.base_dir)

    def section(self, name: str) -> dict[str, Any]:
        value = self.raw.get(name) or {}
        if not isinstance(value, dict):
            raise ConfigError(f"config section {name!r} must be a mapping")
        return value

    def path(self, value: str | Path) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def name(self) -> str:
        return str(self.raw.get("name", "run"))

    @property
    def parallelism(self) -> int:
        return int(self.raw.get("parallelism", 1))

    @property
    def abort_threshold(self) -> float:
        return float(self.raw.get("abort_threshold", 0.5))

    @property
    def output_root(self) -> Path:
        return self.path(self.raw.get("output_root", "runs"))

    @property
    def sample(self) -> int | None:
        s = self.raw.get("sample")
        return None if s is None else int(s)

    @property
    def ss_concat_pair(self) -> bool:
        """Embed all text fields joined (e.g. premise + hypothesis) for semantic similarity."""
        return bool(self.section("metrics").get("ss_concat_pair", False))

    def schema(self) -> DatasetSchema:
        try:
            return DatasetSchema.from_dict(self.section("dataset"))
        except InputError as e:
            raise ConfigError(str(e)) from e

    def dataset_path(self) -> Path:
        ds = self.section("dataset")
        if "path" not in ds:
            raise ConfigError("dataset.path is required")
        return self.path(ds["path"])

    def loop(self, **overrides: Any) -> LoopConfig:
        d = dict(self.section("loop"))
        d.update(overrides)
        try:
            gen = GenerationParams(**(d.pop("generation", None) or {}))
            surrogate = d.pop("surrogate", None)
            templates = {k: str(self.path(v)) for k, v in (self.raw.get("templates") or {}).items()}
            return LoopConfig(
                max_iterations=int(d.pop("max_iterations", 5)),
                feedback=d.pop("feedback", "confidence"),
                attribution_mode=AttributionMode(d.pop("attribution_mode", "top")),
                attribution_method=d.pop("attribution_method", None),
                early_stop=bool(d.pop("early_stop", True)),
                feedback_target=d.pop("feedback_target", "current_candidate"),
                generation=gen,
                surrogate=SurrogateConfig(**surrogate) if surrogate else None,
                hint=str(d.pop("hint", self.section("dataset").get("hint", ""))),
                seed=self.seed,
                templates=templates,
                attribution_workers=int(d.pop("attribution_workers", 1)),
            )
        except (TypeError, ValueError, InputError) as e:
            raise ConfigError(f"bad loop config: {e}") from e

    def snapshot(self) -> dict[str, Any]:
        return copy.deepcopy(self.raw)

    # -- services ----------------------------------------------------------

    def _client_kw(self) -> dict[str, Any]:
        s = self.section("services")
        return {
            "retries": int(s.get("retries", 3)),
            "backoff": float(s.get("backoff", 0.5)),
            "concurrency": s.get("concurrency"),
        }

    def _window(self) -> WindowConfig | None:
        w = self.section("services").get("window")
        return WindowConfig(**w) if w else None

    def _transport(self, name: str, spec: Mapping[str, Any] | None) -> Transport | None:
        spec = spec or {}
        env = name.upper()
        url = spec.get("url") or os.environ.get(f"CFREFINE_{env}_URL")
        if not url:
            return None
        token = spec.get("token")
        if token is None and spec.get("token_env"):
            token = os.environ.get(spec["token_env"])
        if token is None:
            token = os.environ.get(f"CFREFINE_{env}_TOKEN") or os.environ.get("CFREFINE_API_TOKEN")
        timeout = float(self.section("services").get("timeout", 120))
        return HttpTransport(url, token=token, timeout=timeout)

    def mock_stack(self) -> MockStack | None:
        m = self.section("services").get("mock")
        if m is None:
            return None
        space = self.schema().labels
        try:
            classifier = LexiconClassifier(space, m.get("lexicon", {}), m.get("bias"))
            generator = ScriptedGenerator(
                [RewriteRule.from_dict(r) for r in m.get("rules", [])],
                tick=m.get("tick"),
                fail_rounds=m.get("fail_rounds", ()),
                **({"critique": m["critique"]} if "critique" in m else {}),
            )
            unigram = m.get("unigram") or {}
            scorer = UnigramScorer(unigram.get("probs", {}), unk_prob=float(unigram.get("unk_prob", 0.01)))
            return MockStack(classifier, generator, HashEmbedder(int(m.get("embed_dim", 64))), scorer, WordLengthAttributor())
        except (TypeError, ValueError, KeyError) as e:
            raise ConfigError(f"bad mock service config: {e}") from e

    def services(self) -> Services:
        s = self.section("services")
        kw = self._client_kw()
        space = self.schema().labels
        stack = self.mock_stack()
        max_prompt = s.get("max_prompt_chars")
        if stack is not None:
            return stack.services(window=self._window(), max_prompt_chars=max_prompt, **kw)
        transports = {n: self._transport(n, s.get(n)) for n in SERVICE_NAMES}
        for required in ("generator", "classifier"):
            if transports[required] is None:
                raise ConfigError(f"no endpoint for the {required} service (config or CFREFINE_{required.upper()}_URL)")
        attributor_spec = s.get("attributor") or {}
        return Services(
            generator=GeneratorClient(transports["generator"], max_prompt_chars=max_prompt, **kw),
            classifier=ClassifierClient(transports["classifier"], space, window=self._window(), **kw),
            embedder=EmbedderClient(transports["embedder"], **kw) if transports["embedder"] else None,
            scorer=ScorerClient(transports["scorer"], **kw) if transports["scorer"] else None,
            attributor=(
                AttributionClient(transports["attributor"], method=attributor_spec.get("method", "external"), **kw)
                if transports["attributor"]
                else None
            ),
        )

    def judges(self) -> dict[str, GeneratorClient]:
        """Judge generators by name, from the ``judges`` list."""
        out: dict[str, GeneratorClient] = {}
        kw = self._client_kw()
        for i, spec in enumerate(self.raw.get("judges") or []):
            name = spec.get("name", f"judge{i + 1}")
            if "mock" in spec:
                scores = tuple(spec["mock"].get("scores", (5, 5, 5)))
                judge = ScriptedJudge(scores, model=f"mock-judge-{name}")
                transport: Transport | None = LocalTransport({"generate": judge.handle})
            else:
                transport = self._transport("judge", spec)
            if transport is None:
                raise ConfigError(f"judge {name!r} has no url")
            out[name] = GeneratorClient(transport, **kw)
        return out

    def judge_params(self) -> GenerationParams:
        g = self.section("judge_generation")
        return GenerationParams(**{"temperature": 0.0, "max_new_tokens": 64, **g})

