"""Run configuration: a sectioned INI file with every default spelled out."""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from tracer.data.report import digest

TEMPLATE = """\
# tracer run configuration. Every constant the pipeline uses is listed here.

[run]
seed = 0

[data]
# digits | blobs | idx | csv
kind = digits
test_fraction = 0.25
blobs_n = 2000
idx_images =
idx_labels =
csv_path =
csv_label =

[model]
# auto picks convnet for images and mlp for flat inputs
arch = auto
hidden = 32,32,32
channels = 8
epochs = 40
batch_size = 32
lr = 0.001

[explain]
# single-feature | patch-occlusion | coalition-sampling
strategy = patch-occlusion
patch_size = 2
stride =
coalition_count = 100
max_coalition_size =
# zero | dataset-mean | per-feature-mean
baseline = zero
epsilon = 0.05
# linear | gaussian
kernel = linear
top_features = 3
find_mask = true
samples = 5

[counterfactual]
lambda = 0.5
# l1 | l2
metric = l2
sigma = 0.0
rho = 0.1
steps = 2000
batch_size = 32
lr = 0.001
latent = 8
hidden = 16
count = 3
samples = 5

[reliability]
p = 0.5
# baseline-substitute | gaussian-noise
mode = baseline-substitute
noise_scale = 0.5
trials = 10
samples = 200

[global]
samples = 100
stratified = false
target_coverage = 0.85
repeats = 1000
"""

_CHOICES = {
    ("data", "kind"): ("digits", "blobs", "idx", "csv"),
    ("model", "arch"): ("auto", "mlp", "convnet"),
    ("explain", "strategy"): ("single-feature", "patch-occlusion", "coalition-sampling"),
    ("explain", "baseline"): ("zero", "dataset-mean", "per-feature-mean"),
    ("explain", "kernel"): ("linear", "gaussian"),
    ("counterfactual", "metric"): ("l1", "l2"),
    ("reliability", "mode"): ("baseline-substitute", "gaussian-noise"),
}

# (section, key) -> (type, lower bound, upper bound, bounds inclusive?)
_NUMERIC = {
    ("run", "seed"): (int, 0, None, True),
    ("data", "test_fraction"): (float, 0.0, 1.0, False),
    ("data", "blobs_n"): (int, 4, None, True),
    ("model", "channels"): (int, 1, None, True),
    ("model", "epochs"): (int, 1, None, True),
    ("model", "batch_size"): (int, 1, None, True),
    ("model", "lr"): (float, 0.0, None, False),
    ("explain", "patch_size"): (int, 1, None, True),
    ("explain", "coalition_count"): (int, 1, None, True),
    ("explain", "epsilon"): (float, 0.0, 1.0, False),
    ("explain", "top_features"): (int, 0, None, True),
    ("explain", "samples"): (int, 1, None, True),
    ("counterfactual", "lambda"): (float, 0.0, 1.0, True),
    ("counterfactual", "sigma"): (float, 0.0, None, True),
    ("counterfactual", "rho"): (float, 0.0, 1.0, None),  # (0, 1]
    ("counterfactual", "steps"): (int, 1, None, True),
    ("counterfactual", "batch_size"): (int, 1, None, True),
    ("counterfactual", "lr"): (float, 0.0, None, False),
    ("counterfactual", "latent"): (int, 1, None, True),
    ("counterfactual", "hidden"): (int, 1, None, True),
    ("counterfactual", "count"): (int, 1, None, True),
    ("counterfactual", "samples"): (int, 1, None, True),
    ("reliability", "p"): (float, 0.0, 1.0, None),
    ("reliability", "noise_scale"): (float, 0.0, None, True),
    ("reliability", "trials"): (int, 1, None, True),
    ("reliability", "samples"): (int, 1, None, True),
    ("global", "samples"): (int, 1, None, True),
    ("global", "target_coverage"): (float, 0.0, 1.0, None),
    ("global", "repeats"): (int, 1, None, True),
}

_OPTIONAL_INT = {("explain", "stride"), ("explain", "max_coalition_size")}
_BOOL = {("explain", "find_mask"), ("global", "stratified")}
_INT_LIST = {("model", "hidden")}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _in_range(v: float, lo: float | None, hi: float | None, inclusive: bool | None) -> bool:
    if inclusive is None:  # half-open (lo, hi]
        return (lo is None or v > lo) and (hi is None or v <= hi)
    if inclusive:
        return (lo is None or v >= lo) and (hi is None or v <= hi)
    return (lo is None or v > lo) and (hi is None or v < hi)


@dataclass(frozen=True)
class RunConfig:
    values: dict[str, dict[str, Any]]

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def digest(self) -> str:
        return digest(self.values)


def parse(text: str, source: str = "<config>", seed: int | None = None) -> RunConfig:
    """Validate every field of ``text`` layered over the template defaults."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=None)
    parser.read_string(TEMPLATE, source="<defaults>")
    defaults = {s: set(parser[s]) for s in parser.sections()}
    try:
        user = configparser.ConfigParser(interpolation=None)
        user.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for section in user.sections():
        if section not in defaults:
            raise ConfigError(f"unknown section [{section}]")
        for key, value in user[section].items():
            if key not in defaults[section]:
                raise ConfigError(f"unknown field {section}.{key}")
            parser[section][key] = value
    if seed is not None:
        parser["run"]["seed"] = str(seed)

    values: dict[str, dict[str, Any]] = {}
    for section in parser.sections():
        out: dict[str, Any] = {}
        for key, raw in parser[section].items():
            field_id = (section, key)
            name = f"{section}.{key}"
            raw = raw.strip()
            if field_id in _CHOICES:
                if raw not in _CHOICES[field_id]:
                    raise ConfigError(f"{name} must be one of {', '.join(_CHOICES[field_id])}; got {raw!r}")
                out[key] = raw
            elif field_id in _NUMERIC:
                kind, lo, hi, inclusive = _NUMERIC[field_id]
                try:
                    v = kind(raw)
                except ValueError:
                    raise ConfigError(f"{name} must be {kind.__name__}; got {raw!r}") from None
                if not _in_range(v, lo, hi, inclusive):
                    raise ConfigError(f"{name} = {raw} is out of range")
                out[key] = v
            elif field_id in _OPTIONAL_INT:
                if raw == "":
                    out[key] = None
                else:
                    try:
                        out[key] = int(raw)
                    except ValueError:
                        raise ConfigError(f"{name} must be an integer or empty; got {raw!r}") from None
                    if out[key] < 1:
                        raise ConfigError(f"{name} must be positive")
            elif field_id in _BOOL:
                if raw.lower() not in ("true", "false", "yes", "no", "1", "0"):
                    raise ConfigError(f"{name} must be true or false; got {raw!r}")
                out[key] = raw.lower() in ("true", "yes", "1")
            elif field_id in _INT_LIST:
                try:
                    out[key] = [int(v) for v in raw.split(",") if v.strip()]
                except ValueError:
                    raise ConfigError(f"{name} must be comma-separated integers; got {raw!r}") from None
                if not out[key] or min(out[key]) < 1:
                    raise ConfigError(f"{name} needs at least one positive width")
            else:
                out[key] = raw
        values[section] = out

    data = values["data"]
    if data["kind"] == "idx" and not (data["idx_images"] and data["idx_labels"]):
        raise ConfigError("data.idx_images and data.idx_labels are required when data.kind = idx")
    if data["kind"] == "csv" and not (data["csv_path"] and data["csv_label"]):
        raise ConfigError("data.csv_path and data.csv_label are required when data.kind = csv")
    return RunConfig(values)


def load(path: str | Path | None, seed: int | None = None) -> RunConfig:
    if path is None:
        return parse("", seed=seed)
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(str(p))
    return parse(p.read_text(encoding="utf-8"), source=str(p), seed=seed)
