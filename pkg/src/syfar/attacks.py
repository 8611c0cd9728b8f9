"""White-box gradient attacks on a :class:`~syfar.nn.Model`.

Inputs are flat rows in ``[0, 1]``. Image-aware attacks (masked patch,
rectangle occlusion) interpret a row as a single-channel ``H x W`` image in
row-major order.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, IngestionError, ShapeError
from .nn import Model, log_softmax
from .validation import check_labels, check_matrix

FAMILIES = ("pgd-linf", "masked-patch", "rectangle-occlusion")
DEFAULT_PALETTE = (0.0, 0.25, 0.5, 0.75, 1.0)
MID_GRAY = 0.5


@dataclass
class RectSpec:
    height: int
    width: int
    stride_y: int
    stride_x: int

    @classmethod
    def default_for(cls, image_shape):
        # scaled-down ROA: rectangle ~25% of each side, stride ~14%
        h, w = image_shape
        return cls(max(1, round(h / 4)), max(1, round(w / 4)),
                   max(1, round(0.14 * h)), max(1, round(0.14 * w)))


@dataclass
class AttackSpec:
    family: str = "pgd-linf"
    epsilon: float = 8 / 255
    step_size: float = 2 / 255
    iterations: int = 10
    momentum_decay: float = 1.0
    mask: np.ndarray | None = field(default=None, repr=False)
    rect: RectSpec | None = None
    mode: str = "untargeted"
    target_class: int | None = None
    init: str = "zero"
    palette: tuple = DEFAULT_PALETTE
    image_shape: tuple | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown attack family {self.family!r}")
        if self.mode not in ("untargeted", "targeted"):
            raise ConfigError(f"unknown attack mode {self.mode!r}")
        if self.init not in ("zero", "mid-gray", "best-of-colors"):
            raise ConfigError(f"unknown init {self.init!r}")
        if int(self.iterations) < 0:
            raise ConfigError("iterations must be >= 0")
        self.iterations = int(self.iterations)
        if self.momentum_decay < 0:
            raise ConfigError("momentum_decay must be >= 0")
        if self.family == "pgd-linf" and not self.epsilon > 0:
            raise ConfigError("pgd-linf needs epsilon > 0")
        if self.family == "masked-patch" and self.mask is None:
            raise ConfigError("masked-patch needs a mask")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool).ravel()
        if isinstance(self.rect, dict):
            self.rect = RectSpec(**self.rect)
        if self.image_shape is not None:
            self.image_shape = tuple(int(s) for s in self.image_shape)
        self.palette = tuple(float(c) for c in self.palette)

    def with_(self, **changes) -> "AttackSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = {
            "family": self.family,
            "epsilon": self.epsilon,
            "step_size": self.step_size,
            "iterations": self.iterations,
            "momentum_decay": self.momentum_decay,
            "mode": self.mode,
            "target_class": self.target_class,
            "init": self.init,
            "palette": list(self.palette),
            "image_shape": None if self.image_shape is None else list(self.image_shape),
            "rect": None if self.rect is None else dataclasses.asdict(self.rect),
            "mask": None if self.mask is None else [int(v) for v in self.mask],
        }
        return d

    @classmethod
    def from_dict(cls, d, base_dir=None) -> "AttackSpec":
        """Build from a config section.

        ``mask`` may be ``"eyeglass"`` (shipped 8x8 mask), a path to a mask
        file (relative paths resolve against ``base_dir``), or a 0/1 list.
        """
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown attack fields: {sorted(unknown)}")
        mask = d.get("mask")
        if isinstance(mask, str):
            if mask == "eyeglass":
                m = eyeglass_mask()
            else:
                p = Path(mask)
                if base_dir is not None and not p.is_absolute():
                    p = Path(base_dir) / p
                m = read_mask(p)
            d["mask"] = m.ravel()
            d.setdefault("image_shape", list(m.shape))
        elif mask is not None:
            d["mask"] = np.asarray(mask, dtype=bool).ravel()
        if "palette" in d:
            d["palette"] = tuple(d["palette"])
        return cls(**d)


# -- mask files --------------------------------------------------------------


def parse_mask(text: str) -> np.ndarray:
    """Parse a plain-PBM (``P1``) grid or a bare grid of 0/1 rows."""
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append(line)
    if not rows:
        raise IngestionError("empty mask file")
    if rows[0].upper() == "P1":
        dims = rows[1].split()
        if len(dims) != 2:
            raise IngestionError("PBM header needs 'width height'")
        width, height = int(dims[0]), int(dims[1])
        bits = "".join(rows[2:]).replace(" ", "")
        if len(bits) != width * height or set(bits) - {"0", "1"}:
            raise IngestionError(f"PBM body must hold {width * height} 0/1 values")
        return np.array([b == "1" for b in bits]).reshape(height, width)
    grid = []
    problems = []
    for ln, row in enumerate(rows, 1):
        toks = row.split() if " " in row else list(row)
        if set(toks) - {"0", "1"}:
            problems.append((ln, "non 0/1 value"))
            continue
        grid.append([t == "1" for t in toks])
    if problems:
        raise IngestionError("bad mask grid", problems)
    if len({len(r) for r in grid}) != 1:
        raise IngestionError("mask rows differ in length")
    return np.array(grid, dtype=bool)


def read_mask(path) -> np.ndarray:
    return parse_mask(Path(path).read_text(encoding="utf-8"))


def format_mask(mask: np.ndarray) -> str:
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    body = "\n".join(" ".join("1" if v else "0" for v in row) for row in mask)
    return f"P1\n{w} {h}\n{body}\n"


def eyeglass_mask() -> np.ndarray:
    text = resources.files("syfar").joinpath("resources/eyeglass_8x8.pbm").read_text()
    return parse_mask(text)


# -- shared machinery --------------------------------------------------------


def _image_shape(spec: AttackSpec, d: int):
    if spec.image_shape is not None:
        h, w = spec.image_shape
        if h * w != d:
            raise ShapeError(f"image_shape {spec.image_shape} does not match width {d}")
        return h, w
    side = math.isqrt(d)
    if side * side != d:
        raise ConfigError(f"cannot infer a square image from width {d}; set image_shape")
    return side, side


def attack_targets(spec: AttackSpec, labels, k: int):
    """Target classes for targeted mode, or None when untargeted.

    Without an explicit ``target_class`` each sample targets ``(y + 1) mod K``.
    """
    if spec.mode != "targeted":
        return None
    y = np.asarray(labels, dtype=np.int64)
    if spec.target_class is None:
        return (y + 1) % k
    if not 0 <= spec.target_class < k:
        raise ConfigError(f"target_class {spec.target_class} outside [0, {k})")
    return np.full_like(y, int(spec.target_class))


def attack_objective(model: Model, x, labels, targets=None, with_grad=True):
    """Per-sample objective the attacker maximizes, and its input gradient.

    Untargeted: cross-entropy of the true label. Targeted: negative
    cross-entropy of the target label.
    """
    logits = model.forward(x)
    rows = np.arange(x.shape[0])
    logp = log_softmax(logits)
    if targets is None:
        cls, sign = labels, 1.0
    else:
        cls, sign = targets, -1.0
    obj = -sign * logp[rows, cls]
    if not with_grad:
        return obj, None
    g = np.exp(logp)
    g[rows, cls] -= 1.0
    return obj, model.backward(sign * g, accumulate=False)


def _masked_ascent(model, x_start, labels, targets, mask, spec):
    """Momentum sign-ascent restricted to ``mask`` (B x D booleans)."""
    x = x_start.copy()
    momentum = np.zeros_like(x)
    for _ in range(spec.iterations):
        _, grad = attack_objective(model, x, labels, targets)
        grad = np.where(mask, grad, 0.0)
        l1 = np.abs(grad).sum(axis=1, keepdims=True)
        momentum = spec.momentum_decay * momentum + grad / np.where(l1 > 0, l1, 1.0)
        x = np.where(mask, np.clip(x + spec.step_size * np.sign(momentum), 0.0, 1.0), x)
    return x


def _prepare(model, inputs, labels):
    x = check_matrix(inputs, "inputs")
    if x.shape[1] != model.input_dim:
        raise ShapeError(f"inputs width {x.shape[1]} != model input {model.input_dim}")
    if x.size and (x.min() < 0 or x.max() > 1):
        raise ConfigError("attack inputs must lie in [0, 1]")
    y = check_labels(labels, model.num_classes, x.shape[0])
    return x, y


# -- attacks -----------------------------------------------------------------


def pgd_linf(model: Model, inputs, labels, spec: AttackSpec) -> np.ndarray:
    """Signed-gradient steps projected onto the eps-ball and ``[0, 1]``."""
    if spec.family != "pgd-linf":
        raise ConfigError(f"pgd_linf called with family {spec.family!r}")
    if not spec.epsilon > 0:
        raise ConfigError("epsilon must be > 0")
    x0, y = _prepare(model, inputs, labels)
    targets = attack_targets(spec, y, model.num_classes)
    x = x0.copy()
    for _ in range(spec.iterations):
        _, grad = attack_objective(model, x, y, targets)
        x = x + spec.step_size * np.sign(grad)
        x = np.clip(np.clip(x, x0 - spec.epsilon, x0 + spec.epsilon), 0.0, 1.0)
    return x


def best_color_fill(model, x, labels, targets, mask, palette):
    """Fill masked pixels with the palette colour of highest attack objective.

    Chosen per sample; returns ``(filled_inputs, colour_index)``.
    """
    scores = []
    for color in palette:
        filled = np.where(mask, color, x)
        scores.append(attack_objective(model, filled, labels, targets, with_grad=False)[0])
    best = np.argmax(np.stack(scores, axis=1), axis=1)
    colors = np.asarray(palette)[best][:, None]
    return np.where(mask, colors, x), best


def masked_patch_attack(model: Model, inputs, labels, spec: AttackSpec) -> np.ndarray:
    """Eyeglass-style attack: only masked coordinates are ever modified."""
    if spec.mask is None:
        raise ConfigError("masked-patch needs a mask")
    x0, y = _prepare(model, inputs, labels)
    mask = np.asarray(spec.mask, dtype=bool).ravel()
    if mask.shape[0] != x0.shape[1]:
        raise ShapeError(f"mask has {mask.shape[0]} entries, inputs have width {x0.shape[1]}")
    if not mask.any():
        return x0.copy()
    targets = attack_targets(spec, y, model.num_classes)
    mask = np.broadcast_to(mask, x0.shape)
    if spec.init == "mid-gray":
        start = np.where(mask, MID_GRAY, x0)
    elif spec.init == "best-of-colors":
        start, _ = best_color_fill(model, x0, y, targets, mask, spec.palette)
    else:
        start = x0
    return _masked_ascent(model, start, y, targets, mask, spec)


def rectangle_positions(image_shape, rect: RectSpec):
    h, w = image_shape
    if rect.height > h or rect.width > w or rect.height < 1 or rect.width < 1:
        raise ConfigError(f"rectangle {rect.height}x{rect.width} does not fit {h}x{w}")
    if rect.stride_y < 1 or rect.stride_x < 1:
        raise ConfigError("rectangle strides must be >= 1")
    return [(r, c) for r in range(0, h - rect.height + 1, rect.stride_y)
            for c in range(0, w - rect.width + 1, rect.stride_x)]


def rectangle_mask(image_shape, rect: RectSpec, top: int, left: int) -> np.ndarray:
    m = np.zeros(image_shape, dtype=bool)
    m[top:top + rect.height, left:left + rect.width] = True
    return m.ravel()


def occlusion_search(model, x, labels, targets, image_shape, rect):
    """Score every rectangle position after a mid-gray fill.

    Returns ``(positions, scores)`` with ``scores`` of shape (B, P).
    """
    positions = rectangle_positions(image_shape, rect)
    masks = np.stack([rectangle_mask(image_shape, rect, r, c) for r, c in positions])
    b, p = x.shape[0], len(positions)
    filled = np.where(masks[None, :, :], MID_GRAY, x[:, None, :]).reshape(b * p, -1)
    rep = lambda v: None if v is None else np.repeat(v, p)
    obj, _ = attack_objective(model, filled, np.repeat(labels, p), rep(targets), with_grad=False)
    return positions, obj.reshape(b, p)


def rectangle_occlusion_attack(model: Model, inputs, labels, spec: AttackSpec) -> np.ndarray:
    """ROA-style attack: pick the most damaging rectangle, then attack inside it."""
    x0, y = _prepare(model, inputs, labels)
    shape = _image_shape(spec, x0.shape[1])
    rect = spec.rect or RectSpec.default_for(shape)
    targets = attack_targets(spec, y, model.num_classes)
    positions, scores = occlusion_search(model, x0, y, targets, shape, rect)
    best = np.argmax(scores, axis=1)
    masks = np.stack([rectangle_mask(shape, rect, *positions[i]) for i in best])
    start = np.where(masks, MID_GRAY, x0)
    return _masked_ascent(model, start, y, targets, masks, spec)


def run_attack(model: Model, inputs, labels, spec: AttackSpec) -> np.ndarray:
    if spec.family == "pgd-linf":
        return pgd_linf(model, inputs, labels, spec)
    if spec.family == "masked-patch":
        return masked_patch_attack(model, inputs, labels, spec)
    return rectangle_occlusion_attack(model, inputs, labels, spec)


def attack_success_rate(model: Model, clean_inputs, adv_inputs, labels,
                        mode="untargeted", targets=None) -> float:
    """Untargeted: share of adversarial predictions != label.
    Targeted: share equal to ``targets``."""
    clean = check_matrix(clean_inputs, "clean_inputs")
    adv = check_matrix(adv_inputs, "adv_inputs")
    if clean.shape != adv.shape:
        raise ShapeError("clean and adversarial batches are not aligned")
    y = check_labels(labels, model.num_classes, adv.shape[0])
    if y.size == 0:
        return 0.0
    pred = np.argmax(model.forward(adv), axis=1)
    if mode == "targeted":
        if targets is None:
            raise ConfigError("targeted success needs targets")
        t = check_labels(targets, model.num_classes, y.shape[0])
        return float(np.mean(pred == t))
    return float(np.mean(pred != y))
