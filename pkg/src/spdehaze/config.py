"""Run configuration: flat key=value file, strict parsing, paper defaults.

Defaults carry the published hyperparameters (10 transformer blocks, loss
weights 1/1/0.1/0.5, lr 1e-4 halved at 32%/64%/80% of training, ADAM
defaults, 256 crops, batch 10). The desk-scale overrides used by the toy
experiment live in DESK_OVERRIDES and are always explicit.
"""

from dataclasses import dataclass, fields


@dataclass
class RunConfig:
    seed: int = 0
    # dehazing stage
    steps: int = 500000
    batch: int = 10
    patch: int = 256
    lr: float = 1e-4
    milestone_fracs: tuple = (0.32, 0.64, 0.8)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_code: float = 1.0
    lambda_per: float = 1.0
    lambda_adv: float = 0.1
    lambda_ssim: float = 0.5
    # architecture
    ptb_blocks: int = 10
    heads: int = 4
    mlp_ratio: int = 4
    channels: tuple = (16, 32, 48, 64)
    codebook_size: int = 256
    disc_channels: tuple = (16, 32, 64, 64)
    # VQ pretraining
    vq_steps: int = 2000
    vq_batch: int = 8
    vq_lr: float = 1e-3
    commitment: float = 0.25
    # haze synthesis
    d_scale: float = 3.0
    # depth proxy
    omega: float = 0.95
    dc_patch: int = 7
    t_floor: float = 0.05
    airlight_quantile: float = 0.001
    depth_estimator: str = "darkchannel"
    # inference
    prompt_iters: int = 3
    # misc
    threads: int = 0
    log_every: int = 50
    checkpoint_every: int = 1000

    def lr_milestones(self):
        return [int(f * self.steps) for f in self.milestone_fracs]

    def validate(self):
        ms = self.lr_milestones()
        if any(b <= a for a, b in zip(ms, ms[1:])) or (ms and ms[-1] >= self.steps):
            raise ValueError(f"config: milestones must be strictly increasing and < steps, got {ms}")
        if not 0 < self.omega < 1:
            raise ValueError(f"config: omega must lie in (0,1), got {self.omega}")
        if self.dc_patch < 3 or self.dc_patch % 2 == 0:
            raise ValueError(f"config: dc_patch must be odd and >= 3, got {self.dc_patch}")
        if not 0 < self.t_floor < 1:
            raise ValueError(f"config: t_floor must lie in (0,1), got {self.t_floor}")
        if self.ptb_blocks < 1:
            raise ValueError("config: ptb_blocks must be >= 1")
        if self.codebook_size < 2:
            raise ValueError("config: codebook_size must be >= 2")
        if self.depth_estimator not in ("darkchannel", "learned"):
            raise ValueError(f"config: unknown depth_estimator {self.depth_estimator!r}")
        return self


# the scaled-down experiment: 64px scenes, 4 blocks, batch 8, 2K+5K steps
DESK_OVERRIDES = {
    "patch": 64,
    "batch": 8,
    "steps": 5000,
    "ptb_blocks": 4,
}


def desk_config(**extra):
    over = dict(DESK_OVERRIDES)
    over.update(extra)
    return replace_config(RunConfig(), over)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(name, text):
    default = getattr(RunConfig(), name)
    if isinstance(default, bool):
        return text == "true"
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        elem = type(default[0])
        return tuple(elem(tok) for tok in text.split(",")) if text else ()
    return text


def _format_value(value):
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def replace_config(cfg, overrides):
    for key, value in overrides.items():
        if key not in _FIELDS:
            raise KeyError(f"config: unknown key {key!r}")
        if isinstance(value, str):
            value = _parse_value(key, value)
        setattr(cfg, key, value)
    return cfg.validate()


def serialize_config(cfg):
    lines = [f"{f.name}={_format_value(getattr(cfg, f.name))}" for f in fields(RunConfig)]
    return "\n".join(lines) + "\n"


def parse_config(text):
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"config: line {lineno} is not key=value: {line!r}")
        key = key.strip()
        if key not in _FIELDS:
            raise KeyError(f"config: unknown key {key!r} (line {lineno})")
        setattr(cfg, key, _parse_value(key, value.strip()))
    return cfg.validate()


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())
