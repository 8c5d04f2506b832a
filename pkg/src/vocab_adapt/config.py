"""Pipeline configuration: an INI file with one section per stage, plus CLI overrides.

Example::

    [corpus]
    tokenizer = tok.json
    corpus = docs/
    split_manifest = split.json

    [mine]
    n_max = 3
    min_freq = 2
    words_only = false

    [select]
    m = 10000
    scoring_mode = algorithm1
    selection_mode = overlap_aware

    [embeddings]
    strategy = exponential
    exponent_scale = 2.0
    seed = 0

    [ablate]
    n_values = 2, 3, 4
    m_values = 1000, 5000, 10000
    modes = overlap_aware:greedy, naive_greedy:greedy
    words_only = false
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .corpus import CorpusIOError
from .embeddings import InitKind, InitStrategy
from .errors import ParameterError
from .selection import ScoringMode, SelectionMode

ENCODERS = ("greedy", "optimal")

# config key -> (section, PipelineConfig field)
_KEYS = {
    ("corpus", "tokenizer"): "tokenizer_path",
    ("corpus", "corpus"): "corpus_dir",
    ("corpus", "split_manifest"): "split_manifest",
    ("mine", "n_max"): "n_max",
    ("mine", "min_freq"): "min_freq",
    ("mine", "words_only"): "words_only",
    ("select", "m"): "m",
    ("select", "scoring_mode"): "scoring_mode",
    ("select", "selection_mode"): "selection_mode",
    ("embeddings", "strategy"): "strategy",
    ("embeddings", "exponent_scale"): "exponent_scale",
    ("embeddings", "seed"): "seed",
    ("run", "output_dir"): "output_dir",
    ("run", "threads"): "threads",
}


@dataclass
class PipelineConfig:
    tokenizer_path: str | None = None
    corpus_dir: str | None = None
    split_manifest: str | None = None
    n_max: int = 3
    m: int = 10000
    min_freq: int = 2
    scoring_mode: str = ScoringMode.ALGORITHM1.value
    selection_mode: str = SelectionMode.OVERLAP_AWARE.value
    words_only: bool = False
    strategy: str = InitKind.EXPONENTIAL.value
    exponent_scale: float = 2.0
    seed: int = 0
    output_dir: str = "out"
    threads: int = 1

    def validate(self) -> PipelineConfig:
        if not 2 <= self.n_max <= 8:
            raise ParameterError(f"n_max must be in [2, 8], got {self.n_max}")
        if self.m < 1:
            raise ParameterError(f"m must be >= 1, got {self.m}")
        if self.min_freq < 1:
            raise ParameterError(f"min_freq must be >= 1, got {self.min_freq}")
        if self.threads < 1:
            raise ParameterError(f"threads must be >= 1, got {self.threads}")
        try:
            ScoringMode(self.scoring_mode)
            SelectionMode(self.selection_mode)
            InitKind(self.strategy)
        except ValueError as e:
            raise ParameterError(str(e)) from None
        self.init_strategy()
        return self

    def init_strategy(self) -> InitStrategy:
        return InitStrategy(InitKind(self.strategy), self.seed, self.exponent_scale)

    def to_dict(self) -> dict:
        return asdict(self)

    def stage_dict(self, *names: str) -> dict:
        """The subset of settings that affects a given artifact (embedded in it)."""
        d = self.to_dict()
        return {k: d[k] for k in names}


@dataclass
class AblationGrid:
    n_values: list[int] = field(default_factory=lambda: [2, 3, 4])
    m_values: list[int] = field(default_factory=lambda: [10000])
    modes: list[tuple[str, str]] = field(
        default_factory=lambda: [
            (SelectionMode.OVERLAP_AWARE.value, "greedy"),
            (SelectionMode.NAIVE_GREEDY.value, "greedy"),
        ]
    )
    words_only: list[bool] = field(default_factory=lambda: [False])

    def validate(self) -> AblationGrid:
        for name in ("n_values", "m_values", "modes", "words_only"):
            if not getattr(self, name):
                raise ParameterError(f"ablation axis {name} is empty")
        for n in self.n_values:
            if not 2 <= n <= 8:
                raise ParameterError(f"n_max must be in [2, 8], got {n}")
        for m in self.m_values:
            if m < 1:
                raise ParameterError(f"m must be >= 1, got {m}")
        for mode, enc in self.modes:
            try:
                SelectionMode(mode)
            except ValueError as e:
                raise ParameterError(str(e)) from None
            if enc not in ENCODERS:
                raise ParameterError(f"encoder must be one of {ENCODERS}, got {enc!r}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modes"] = [list(p) for p in self.modes]
        return d


def parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ParameterError(f"not a boolean: {value!r}")


def parse_list(value: str, kind=str) -> list:
    items = [x.strip() for x in value.replace(";", ",").split(",") if x.strip()]
    try:
        return [kind(x) for x in items]
    except ValueError as e:
        raise ParameterError(f"bad list value {value!r}: {e}") from None


def parse_modes(value: str) -> list[tuple[str, str]]:
    out = []
    for item in parse_list(value):
        mode, _, enc = item.partition(":")
        out.append((mode.strip(), (enc or "greedy").strip()))
    return out


def _coerce(name: str, raw: str):
    typ = {f.name: f.type for f in fields(PipelineConfig)}[name]
    try:
        if typ == "bool":
            return parse_bool(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError:
        raise ParameterError(f"{name}: cannot parse {raw!r}") from None
    return raw


def read_ini(path: str | Path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as f:
            cp.read_file(f)
    except OSError as e:
        raise CorpusIOError(f"cannot read config {path}: {e}") from e
    except configparser.Error as e:
        raise ParameterError(f"{path}: {e}") from e
    return cp


def load_config(path: str | Path | None = None, **overrides) -> PipelineConfig:
    """Defaults, then the file's values, then non-None ``overrides``.

    Relative paths in the file are resolved against the file's directory.
    """
    cfg = PipelineConfig()
    if path is not None:
        cp = read_ini(path)
        base = Path(path).parent
        known = set(_KEYS)
        for section in cp.sections():
            for key, raw in cp.items(section):
                if (section, key) not in known:
                    if section == "ablate":
                        continue
                    raise ParameterError(f"{path}: unknown setting [{section}] {key}")
                name = _KEYS[(section, key)]
                value = _coerce(name, raw)
                if name in ("tokenizer_path", "corpus_dir", "split_manifest", "output_dir"):
                    value = str(base / value)
                setattr(cfg, name, value)
    for name, value in overrides.items():
        if value is not None:
            setattr(cfg, name, value)
    return cfg.validate()


def load_grid(path: str | Path | None = None, **overrides) -> AblationGrid:
    grid = AblationGrid()
    if path is not None:
        cp = read_ini(path)
        if cp.has_section("ablate"):
            sec = cp["ablate"]
            if "n_values" in sec:
                grid.n_values = parse_list(sec["n_values"], int)
            if "m_values" in sec:
                grid.m_values = parse_list(sec["m_values"], int)
            if "modes" in sec:
                grid.modes = parse_modes(sec["modes"])
            if "words_only" in sec:
                grid.words_only = [parse_bool(v) for v in parse_list(sec["words_only"])]
    for name, value in overrides.items():
        if value is not None:
            setattr(grid, name, value)
    return grid.validate()
