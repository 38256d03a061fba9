"""Run configuration: a TOML file with flat dotted keys plus overrides.

Every tunable lives under a section key (data.*, model.*, train.*,
coherence.*, explain.*, synthetic.*, run.*). Unknown keys are rejected
so typos fail loudly instead of silently using a default. Command-line
overrides arrive as "section.key=value" strings and win over the file.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .data import SyntheticConfig
from .errors import ConfigError
from .model import ModelConfig
from .trainer import TrainingConfig

RENDER_FORMATS = ("ansi", "html", "tsv")

# key -> (type, default). Empty-string paths mean "not provided".
_SCHEMA = {
    "data.news": (str, "news.tsv"),
    "data.bodies": (str, ""),
    "data.train_behaviors": (str, "train_behaviors.tsv"),
    "data.valid_behaviors": (str, "val_behaviors.tsv"),
    "data.test_behaviors": (str, "test_behaviors.tsv"),
    "data.embeddings": (str, ""),
    "data.output_dir": (str, "runs"),
    "model.n_topics": (int, 10),
    "model.embedding_dim": (int, 300),
    "model.projection_dim": (int, 64),
    "model.pool_dim": (int, 64),
    "model.user_dim": (int, 64),
    "model.variant": (str, "ATT"),
    "model.n_title": (int, 30),
    "model.n_body": (int, 70),
    "model.history_limit": (int, 50),
    "train.learning_rate": (float, 1e-3),
    "train.batch_size": (int, 64),
    "train.negatives": (int, 4),
    "train.dropout": (float, 0.2),
    "train.epochs": (int, 10),
    "train.lr_halving": (bool, True),
    "train.grad_clip": (float, 5.0),
    "train.max_train_samples": (int, 0),
    "coherence.descriptors": (int, 10),
    "coherence.min_df": (int, 10),
    "coherence.max_df_frac": (float, 0.9),
    "coherence.epsilon": (float, 1e-12),
    "coherence.top_fraction": (float, 0.10),
    "explain.top_topics": (int, 3),
    "explain.top_articles": (int, 5),
    "explain.format": (str, "ansi"),
    "synthetic.n_topics": (int, 2),
    "synthetic.n_news": (int, 200),
    "synthetic.n_users": (int, 50),
    "synthetic.keywords_per_topic": (int, 12),
    "synthetic.title_tokens": (int, 6),
    "synthetic.body_tokens": (int, 18),
    "synthetic.filler_vocab": (int, 5),
    "synthetic.filler_per_article": (int, 3),
    "synthetic.rare_vocab": (int, 120),
    "synthetic.rare_per_article": (int, 2),
    "synthetic.history_per_user": (int, 12),
    "synthetic.train_impressions_per_user": (int, 8),
    "synthetic.val_impressions_per_user": (int, 2),
    "synthetic.test_impressions_per_user": (int, 2),
    "synthetic.negatives_per_impression": (int, 4),
    "synthetic.preference_strength": (float, 0.9),
    "run.seed": (int, 0),
    "run.threads": (int, 1),
}


def _flatten(mapping, prefix=""):
    flat = {}
    for key, value in mapping.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def _check_type(key, value, expected):
    if expected is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean, got {value!r}")
        return value
    if isinstance(value, bool):  # bool is an int subclass; keep them apart
        raise ConfigError(f"{key} must be {expected.__name__}, got a boolean")
    if expected is float and isinstance(value, int):
        return float(value)
    if not isinstance(value, expected):
        raise ConfigError(
            f"{key} must be {expected.__name__}, got {type(value).__name__}")
    return value


def _parse_override(text):
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    if key not in _SCHEMA:
        raise ConfigError(f"unknown configuration key {key!r}")
    expected, _ = _SCHEMA[key]
    try:
        if expected is bool:
            lowered = raw.strip().lower()
            if lowered not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return key, lowered in ("true", "1")
        return key, expected(raw)
    except ValueError:
        raise ConfigError(
            f"cannot parse {raw!r} as {expected.__name__} for {key}")


@dataclass
class RunConfig:
    """Validated, fully resolved settings for one command run."""

    news_path: str
    bodies_path: str
    train_behaviors: str
    valid_behaviors: str
    test_behaviors: str
    embeddings_path: str
    output_dir: str
    model: ModelConfig
    training: TrainingConfig
    synthetic: SyntheticConfig
    descriptors: int = 10
    min_df: int = 10
    max_df_frac: float = 0.9
    epsilon: float = 1e-12
    top_fraction: float = 0.10
    explain_top_topics: int = 3
    explain_top_articles: int = 5
    explain_format: str = "ansi"
    seed: int = 0
    threads: int = 1
    resolved: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.descriptors < 1:
            raise ConfigError("coherence.descriptors must be >= 1")
        if self.min_df < 1:
            raise ConfigError("coherence.min_df must be >= 1")
        if not 0 < self.max_df_frac <= 1:
            raise ConfigError("coherence.max_df_frac must be in (0, 1]")
        if self.epsilon <= 0:
            raise ConfigError("coherence.epsilon must be positive")
        if not 0 < self.top_fraction <= 1:
            raise ConfigError("coherence.top_fraction must be in (0, 1]")
        if self.explain_top_topics < 1 or self.explain_top_articles < 1:
            raise ConfigError("explain.top_* values must be >= 1")
        if self.explain_format not in RENDER_FORMATS:
            raise ConfigError(
                f"explain.format must be one of {RENDER_FORMATS}")
        if self.threads < 1:
            raise ConfigError("run.threads must be >= 1")

    def config_hash(self):
        canonical = json.dumps(self.resolved, sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def input_paths(self):
        """Role -> path for every input file the run may read."""
        roles = {
            "news": self.news_path,
            "bodies": self.bodies_path,
            "train_behaviors": self.train_behaviors,
            "valid_behaviors": self.valid_behaviors,
            "test_behaviors": self.test_behaviors,
            "embeddings": self.embeddings_path,
        }
        return {role: path for role, path in roles.items() if path}


def _build(values, base_dir):
    def path_of(key):
        raw = values[key]
        if not raw:
            return ""
        return str((base_dir / raw).resolve()) if not Path(raw).is_absolute() \
            else raw

    def section(prefix):
        plen = len(prefix) + 1
        return {k[plen:]: v for k, v in values.items()
                if k.startswith(prefix + ".")}

    seed = values["run.seed"]
    try:
        model = ModelConfig(**section("model"))
        training = TrainingConfig(seed=seed, **section("train"))
        synthetic = SyntheticConfig(seed=seed, **section("synthetic"))
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc))
    coherence = section("coherence")
    explain = section("explain")
    return RunConfig(
        news_path=path_of("data.news"),
        bodies_path=path_of("data.bodies"),
        train_behaviors=path_of("data.train_behaviors"),
        valid_behaviors=path_of("data.valid_behaviors"),
        test_behaviors=path_of("data.test_behaviors"),
        embeddings_path=path_of("data.embeddings"),
        output_dir=path_of("data.output_dir"),
        model=model,
        training=training,
        synthetic=synthetic,
        descriptors=coherence["descriptors"],
        min_df=coherence["min_df"],
        max_df_frac=coherence["max_df_frac"],
        epsilon=coherence["epsilon"],
        top_fraction=coherence["top_fraction"],
        explain_top_topics=explain["top_topics"],
        explain_top_articles=explain["top_articles"],
        explain_format=explain["format"],
        seed=seed,
        threads=values["run.threads"],
        resolved=dict(sorted(values.items())),
    )


def load_run_config(path=None, overrides=()):
    """Load, override, validate. Paths resolve relative to the file."""
    values = {key: default for key, (_, default) in _SCHEMA.items()}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        base_dir = path.parent.resolve()
        try:
            with open(path, "rb") as f:
                raw = tomli.load(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}")
        for key, value in _flatten(raw).items():
            if key not in _SCHEMA:
                raise ConfigError(f"unknown configuration key {key!r}")
            values[key] = _check_type(key, value, _SCHEMA[key][0])
    for text in overrides:
        key, value = _parse_override(text)
        values[key] = value
    return _build(values, base_dir)


def default_config_text():
    """A complete config file with every key at its default."""
    sections = {}
    for key, (_, default) in _SCHEMA.items():
        head, tail = key.split(".", 1)
        sections.setdefault(head, []).append((tail, default))
    lines = []
    for head, pairs in sections.items():
        lines.append(f"[{head}]")
        for tail, default in pairs:
            if isinstance(default, bool):
                shown = "true" if default else "false"
            elif isinstance(default, str):
                shown = json.dumps(default)
            else:
                shown = repr(default)
            lines.append(f"{tail} = {shown}")
        lines.append("")
    return "\n".join(lines)


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def run_manifest(config, command, input_roles):
    """Provenance record: seed, config hash, input file hashes."""
    paths = config.input_paths()
    hashes = {}
    for role in input_roles:
        path = paths.get(role)
        if path and Path(path).exists():
            hashes[role] = file_sha256(path)
    return {
        "command": command,
        "seed": config.seed,
        "threads": config.threads,
        "config_hash": config.config_hash(),
        "input_hashes": hashes,
    }


def write_manifest(manifest, path):
    Path(path).write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n",
        encoding="utf-8")


def dataclass_defaults_match():
    """Schema defaults must mirror the dataclass defaults they feed."""
    drift = []
    for cls, prefix, skip in ((ModelConfig, "model", ()),
                              (TrainingConfig, "train", ("seed",)),
                              (SyntheticConfig, "synthetic", ("seed",))):
        for f in dataclasses.fields(cls):
            if f.name in skip:
                continue
            key = f"{prefix}.{f.name}"
            if key in _SCHEMA and _SCHEMA[key][1] != f.default:
                drift.append(key)
    return drift
