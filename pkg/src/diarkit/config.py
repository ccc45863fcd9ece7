"""Pipeline configuration: flat ``key = value`` text with CLI overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterable, TextIO

from .ahc import AhcConfig
from .vad_fusion import FusionConfig
from .vbx import VbxConfig


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    frame_step: float = 0.01
    # VAD fusion
    fill_gap: float = 0.6
    asr_max_distance: float = 0.8
    asr_prune_granularity: str = "segment"
    asr_system: str = "asr"
    # sub-segmentation
    window: float = 1.5
    shift: float = 0.25
    min_length: float = 0.1
    # embedding preprocessing: "none" or "lnorm" (centre on the PLDA mean, scale to sqrt(D))
    preprocess: str = "none"
    pca_var: float = 0.55
    # clustering
    ahc_threshold: float = 0.0
    ahc_threshold_vbx_init: float = 0.6
    clustering: str = "vbx"  # vbx | ahc | ahc-ucluster
    fa: float = 0.3
    fb: float = 16.0
    loop_p: float = 0.9
    max_iters: int = 40
    elbo_epsilon: float = 1e-4
    speaker_floor: float = 1e-4
    init_smoothing: float = 0.95
    pi_update: str = "transitions"
    recluster: bool = True
    recluster_threshold: float = 2.0
    # overlap handling: none | heuristic | vbx | oracle
    overlap_mode: str = "heuristic"
    # scoring
    collar: float = 0.25

    def __post_init__(self):
        choices = {
            "preprocess": ("none", "lnorm"),
            "clustering": ("vbx", "ahc", "ahc-ucluster"),
            "overlap_mode": ("none", "heuristic", "vbx", "oracle"),
            "asr_prune_granularity": ("segment", "frame"),
            "pi_update": ("transitions", "occupancy"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        if self.overlap_mode == "vbx" and self.clustering != "vbx":
            raise ConfigError("overlap_mode 'vbx' needs clustering 'vbx'")
        if not 0 < self.pca_var <= 1:
            raise ConfigError("pca_var must lie in (0, 1]")
        try:
            self.fusion()
            self.vbx()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def fusion(self) -> FusionConfig:
        return FusionConfig(
            frame_step=self.frame_step,
            fill_gap=self.fill_gap,
            asr_max_distance=self.asr_max_distance,
            asr_system=self.asr_system,
            prune_granularity=self.asr_prune_granularity,
        )

    def vbx(self) -> VbxConfig:
        return VbxConfig(
            fa=self.fa,
            fb=self.fb,
            p_loop=self.loop_p,
            max_iters=self.max_iters,
            elbo_epsilon=self.elbo_epsilon,
            speaker_floor=self.speaker_floor,
            init_smoothing=self.init_smoothing,
            pi_update=self.pi_update,
        )

    def ahc(self, underclustered: bool = False) -> AhcConfig:
        return AhcConfig(threshold=self.ahc_threshold_vbx_init if underclustered else self.ahc_threshold)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


_TYPES = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def _coerce(key: str, raw: str):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_overrides(items: Iterable[str]) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip().replace("-", "_")
        out[key] = _coerce(key, value)
    return out


def read_config(stream: Iterable[str]) -> dict:
    items = []
    for line in stream:
        line = line.split("#", 1)[0].strip()
        if line:
            items.append(line)
    return parse_overrides(items)


def load_config(stream: Iterable[str] | None = None, overrides: Iterable[str] = ()) -> PipelineConfig:
    values = read_config(stream) if stream is not None else {}
    values.update(parse_overrides(overrides))
    return PipelineConfig(**values)


DEFAULT_CONFIG_TEXT = """\
# diarkit pipeline configuration (key = value)
frame_step = 0.01
# VAD: silences shorter than this are relabelled speech after voting
fill_gap = 0.6
# VAD: speech farther than this from ASR speech is dropped
asr_max_distance = 0.8
asr_prune_granularity = segment
asr_system = asr
# x-vector windows: 1.5 s long with 1.25 s overlap
window = 1.5
shift = 0.25
min_length = 0.1
preprocess = none
# per-recording PCA keeps this share of the variance
pca_var = 0.55
ahc_threshold = 0.0
# higher threshold: deliberately underclustered VBx initialisation
ahc_threshold_vbx_init = 0.6
clustering = vbx
# VBx acoustic scale, speaker regularisation, loop probability
fa = 0.3
fb = 16
loop_p = 0.9
max_iters = 40
elbo_epsilon = 1e-4
speaker_floor = 1e-4
init_smoothing = 0.95
pi_update = transitions
recluster = true
recluster_threshold = 2.0
overlap_mode = heuristic
# DER forgiveness collar in seconds
collar = 0.25
"""


def write_default_config(stream: TextIO) -> None:
    stream.write(DEFAULT_CONFIG_TEXT)
