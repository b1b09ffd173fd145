"""Network roles and their lifecycle: teacher classifier, noise-to-image
estimator, metric-space encoder, modality discriminator, plus class-proxy
extraction and a self-describing checkpoint container.

All architectures are the desk-scale stand-ins documented in the README:
two stride-2 conv blocks and one hidden dense layer everywhere, so training
runs in seconds while keeping the interfaces (representation layer,
final-layer class proxies) intact.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import ndtr
from torch import nn

from .errors import (
    CheckpointError,
    InvalidArgumentError,
    RoleMismatchError,
    TrainingFailureError,
)
from .seeding import derive_seed

REPR_DIM = 64
EMBED_DIM = 32
NOISE_DIM = 64

CHECKPOINT_MAGIC = b"DFLB1\n"


def to_input_tensor(x) -> torch.Tensor:
    """Coerce images to a float32 (N, 1, H, W) tensor."""
    if isinstance(x, torch.Tensor):
        t = x.float()
    else:
        t = torch.from_numpy(np.asarray(x, dtype=np.float32))
    if t.dim() == 4 and t.shape[-1] == 1:  # (N, H, W, 1) numpy layout
        t = t.permute(0, 3, 1, 2)
    elif t.dim() == 3:
        t = t.unsqueeze(1)
    if t.dim() != 4 or t.shape[1] != 1:
        raise InvalidArgumentError(f"expected (N, 1, H, W) images, got {tuple(t.shape)}")
    return t


class TeacherNet(nn.Module):
    """Small convolutional classifier exposing its representation layer.

    class_ids maps local output index -> universe class id; identity for
    full-overlap training, a subset for partial-overlap teachers.
    """

    role = "teacher"

    def __init__(self, num_classes: int, repr_dim: int = REPR_DIM, class_ids=None):
        super().__init__()
        self.num_classes = num_classes
        self.repr_dim = repr_dim
        self.class_ids = list(range(num_classes)) if class_ids is None else list(class_ids)
        if len(self.class_ids) != num_classes:
            raise InvalidArgumentError("class_ids length must equal num_classes")
        self.conv1 = nn.Conv2d(1, 16, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, stride=2, padding=1)
        self.fc_repr = nn.Linear(32 * 8 * 8, repr_dim)
        self.head = nn.Linear(repr_dim, num_classes)
        self.frozen = False

    def representation(self, x: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.conv1(x * 2 - 1))
        h = F.relu(self.conv2(h))
        return F.relu(self.fc_repr(h.flatten(1)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.representation(x))

    def arch_meta(self):
        return {
            "num_classes": self.num_classes,
            "repr_dim": self.repr_dim,
            "class_ids": self.class_ids,
        }


class EstimatorNet(nn.Module):
    """Noise-to-image generator: dense seed then two transposed-conv blocks.

    The sigmoid head bounds outputs to [0, 1]."""

    role = "estimator"

    def __init__(self, noise_dim: int = NOISE_DIM):
        super().__init__()
        self.noise_dim = noise_dim
        self.fc = nn.Linear(noise_dim, 32 * 8 * 8)
        self.deconv1 = nn.ConvTranspose2d(32, 16, 4, stride=2, padding=1)
        self.deconv2 = nn.ConvTranspose2d(16, 1, 4, stride=2, padding=1)

    def forward(self, xi: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.fc(xi)).view(-1, 32, 8, 8)
        h = F.relu(self.deconv1(h))
        return torch.sigmoid(self.deconv2(h))

    def arch_meta(self):
        return {"noise_dim": self.noise_dim}


class EncoderNet(nn.Module):
    """Teacher-shaped backbone plus a projection head; embeddings unit-norm."""

    role = "encoder"

    def __init__(self, embed_dim: int = EMBED_DIM, repr_dim: int = REPR_DIM):
        super().__init__()
        self.embed_dim = embed_dim
        self.repr_dim = repr_dim
        self.conv1 = nn.Conv2d(1, 16, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, stride=2, padding=1)
        self.fc_repr = nn.Linear(32 * 8 * 8, repr_dim)
        self.head = nn.Linear(repr_dim, embed_dim)

    def backbone(self, x: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.conv1(x * 2 - 1))
        h = F.relu(self.conv2(h))
        return F.relu(self.fc_repr(h.flatten(1)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.head(self.backbone(x)), dim=1)

    def arch_meta(self):
        return {"embed_dim": self.embed_dim, "repr_dim": self.repr_dim}


class GuidanceNet(nn.Module):
    """Binary photo-vs-sketch discriminator; returns a probability in (0, 1)."""

    role = "guidance"

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 16, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, stride=2, padding=1)
        self.fc = nn.Linear(32 * 8 * 8, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.conv1(x * 2 - 1))
        h = F.relu(self.conv2(h))
        return torch.sigmoid(self.fc(h.flatten(1))).squeeze(1)

    def arch_meta(self):
        return {}


_ROLE_CLASSES = {
    "teacher": TeacherNet,
    "estimator": EstimatorNet,
    "encoder": EncoderNet,
    "guidance": GuidanceNet,
}


def build_network(role: str, seed: int, **arch) -> nn.Module:
    """Construct a network with deterministically seeded initialization."""
    torch.manual_seed(derive_seed(seed, role, "init"))
    return _ROLE_CLASSES[role](**arch)


def param_hash(model: nn.Module) -> str:
    """sha256 over all parameter bytes, in state_dict order."""
    h = hashlib.sha256()
    for name, tensor in model.state_dict().items():
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def freeze(model: nn.Module) -> nn.Module:
    for p in model.parameters():
        p.requires_grad_(False)
    model.eval()
    if hasattr(model, "frozen"):
        model.frozen = True
    return model


def forward_teacher(teacher: TeacherNet, x):
    """Frozen-teacher forward: (logits, representation) for a batch of images."""
    t = to_input_tensor(x) if not (isinstance(x, torch.Tensor) and x.dim() == 4 and x.shape[1] == 1) else x
    if t.shape[0] == 0:
        return (
            torch.zeros((0, teacher.num_classes)),
            torch.zeros((0, teacher.repr_dim)),
        )
    repr_out = teacher.representation(t)
    return teacher.head(repr_out), repr_out


@dataclass
class TeacherHParams:
    epochs: int = 15
    batch_size: int = 64
    lr: float = 0.01
    lr_decay: float = 0.98
    weight_decay: float = 1e-5


def _stack_samples(samples):
    pixels = np.stack([s.pixels for s in samples]).astype(np.float32)
    labels = np.array([s.class_id for s in samples], dtype=np.int64)
    return pixels, labels


def train_teacher(train_samples, hp: TeacherHParams, seed: int, holdout_samples=None,
                  class_ids=None):
    """Train and freeze a classifier; returns (teacher, held-out accuracy).

    Labels are universe class ids; the teacher's outputs cover class_ids
    (default: the classes present in train_samples). With no explicit
    holdout, 10% of the training set is carved off per class first.
    """
    if not train_samples:
        raise InvalidArgumentError("empty training set")
    pixels, labels = _stack_samples(train_samples)
    if class_ids is None:
        class_ids = sorted(set(labels.tolist()))
    local = {c: i for i, c in enumerate(class_ids)}
    if any(l not in local for l in labels.tolist()):
        raise InvalidArgumentError("training labels outside class_ids")

    if holdout_samples is None:
        rng = np.random.default_rng(derive_seed(seed, "teacher_holdout"))
        hold_idx = []
        for c in class_ids:
            idx = np.flatnonzero(labels == c)
            take = max(1, int(round(0.1 * len(idx))))
            hold_idx.extend(rng.permutation(idx)[:take].tolist())
        hold_mask = np.zeros(len(labels), dtype=bool)
        hold_mask[hold_idx] = True
        hold_pixels, hold_labels = pixels[hold_mask], labels[hold_mask]
        pixels, labels = pixels[~hold_mask], labels[~hold_mask]
    else:
        hold_pixels, hold_labels = _stack_samples(holdout_samples)

    teacher = build_network("teacher", seed, num_classes=len(class_ids), class_ids=class_ids)
    opt = torch.optim.Adam(teacher.parameters(), lr=hp.lr, weight_decay=hp.weight_decay)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=hp.lr_decay)
    x_all = to_input_tensor(pixels)
    y_all = torch.from_numpy(np.array([local[l] for l in labels.tolist()], dtype=np.int64))

    rng = np.random.default_rng(derive_seed(seed, "teacher_batches"))
    for epoch in range(hp.epochs):
        order = rng.permutation(len(y_all))
        for start in range(0, len(order), hp.batch_size):
            idx = order[start : start + hp.batch_size]
            opt.zero_grad()
            loss = F.cross_entropy(teacher(x_all[idx]), y_all[idx])
            if not torch.isfinite(loss):
                raise TrainingFailureError(
                    "teacher loss diverged",
                    {"epoch": epoch, "step": start // hp.batch_size, "loss": float(loss)},
                )
            loss.backward()
            opt.step()
        sched.step()

    freeze(teacher)
    with torch.no_grad():
        logits = teacher(to_input_tensor(hold_pixels))
        pred = logits.argmax(dim=1).numpy()
    truth = np.array([local[l] for l in hold_labels.tolist()])
    accuracy = float((pred == truth).mean())
    return teacher, accuracy


def sample_noise(batch: int, n: int, seed: int) -> torch.Tensor:
    """Gaussian draws squashed to [0, 1] through the standard normal CDF."""
    if batch < 1 or n < 1:
        raise InvalidArgumentError("batch and n must be >= 1")
    z = np.random.default_rng(seed).standard_normal((batch, n))
    return torch.from_numpy(ndtr(z).astype(np.float32))


@dataclass
class ProxyBank:
    """Per-class anchor vectors lifted from a teacher's final layer.

    Row order follows class_order (universe ids). Frozen rows never receive
    gradients; trainable rows (added for unknown classes) do.
    """

    proxies: torch.Tensor  # (C, D)
    trainable_mask: torch.Tensor  # (C,) bool
    class_order: list = field(default_factory=list)

    def effective(self) -> torch.Tensor:
        """Rows with gradient flow restricted to the trainable ones."""
        return torch.where(self.trainable_mask[:, None], self.proxies, self.proxies.detach())

    def normalized_rows(self) -> torch.Tensor:
        return F.normalize(self.effective(), dim=1)

    def row_of(self, class_id: int) -> int:
        return self.class_order.index(class_id)


def proxy_projection(repr_dim: int, embed_dim: int, seed: int = 0) -> torch.Tensor:
    """Fixed orthonormal (repr_dim, embed_dim) projection shared by both banks."""
    rng = np.random.default_rng(derive_seed(seed, "proxy_projection", repr_dim, embed_dim))
    q, _ = np.linalg.qr(rng.standard_normal((repr_dim, embed_dim)))
    return torch.from_numpy(q.astype(np.float32))


def extract_proxies(teacher: TeacherNet, embed_dim: int, projection_seed: int = 0) -> ProxyBank:
    """Final-layer weight rows, projected to embed_dim and L2-normalized."""
    fan_in = teacher.head.weight.shape[1]
    if embed_dim > fan_in:
        raise InvalidArgumentError(f"embed_dim {embed_dim} exceeds final-layer fan-in {fan_in}")
    with torch.no_grad():
        rows = teacher.head.weight.detach().clone()
        if embed_dim < fan_in:
            rows = rows @ proxy_projection(fan_in, embed_dim, projection_seed)
        rows = F.normalize(rows, dim=1)
    return ProxyBank(
        proxies=rows,
        trainable_mask=torch.zeros(rows.shape[0], dtype=torch.bool),
        class_order=list(teacher.class_ids),
    )


def augment_proxies(bank_p: ProxyBank, bank_s: ProxyBank, missing_p, missing_s, seed: int):
    """Add trainable unit rows for each bank's unknown classes and reorder
    both banks to one shared class order."""
    missing_p, missing_s = set(missing_p), set(missing_s)
    known_p, known_s = set(bank_p.class_order), set(bank_s.class_order)
    if missing_p & known_p or missing_s & known_s:
        raise InvalidArgumentError("missing classes overlap the bank's known classes")
    if known_p | missing_p != known_s | missing_s:
        raise InvalidArgumentError("class universes differ between modalities")
    universe = sorted(known_p | missing_p)

    def rebuild(bank, missing, tag):
        rows, mask = [], []
        for c in universe:
            if c in missing:
                rng = np.random.default_rng(derive_seed(seed, "proxy_aug", tag, c))
                v = rng.standard_normal(bank.proxies.shape[1])
                rows.append(torch.from_numpy((v / np.linalg.norm(v)).astype(np.float32)))
                mask.append(True)
            else:
                rows.append(bank.proxies[bank.row_of(c)].detach().clone())
                mask.append(False)
        proxies = torch.stack(rows)
        if any(mask):
            proxies.requires_grad_(True)
        return ProxyBank(
            proxies=proxies,
            trainable_mask=torch.tensor(mask, dtype=torch.bool),
            class_order=list(universe),
        )

    return rebuild(bank_p, missing_p, "photo"), rebuild(bank_s, missing_s, "sketch")


def init_encoder_from_teacher(teacher: TeacherNet, embed_dim: int, seed: int) -> EncoderNet:
    """Encoder with the teacher's backbone weights and a fresh projection head."""
    encoder = build_network("encoder", seed, embed_dim=embed_dim, repr_dim=teacher.repr_dim)
    with torch.no_grad():
        for name in ("conv1", "conv2", "fc_repr"):
            src, dst = getattr(teacher, name), getattr(encoder, name)
            if src.weight.shape != dst.weight.shape:
                raise InvalidArgumentError(f"architecture mismatch on {name}")
            dst.weight.copy_(src.weight)
            dst.bias.copy_(src.bias)
    return encoder


def save_checkpoint(model: nn.Module, path: str, training_meta=None):
    """Self-describing container: JSON header (role, arch, parameter table)
    followed by the raw float32 parameter blob in header order."""
    state = model.state_dict()
    header = {
        "role": model.role,
        "arch": model.arch_meta(),
        "training": dict(training_meta or {}),
        "params": [{"name": k, "shape": list(v.shape)} for k, v in state.items()],
        "encoding": "float32-little-endian",
    }
    blob = b"".join(
        v.detach().cpu().numpy().astype("<f4").tobytes() for v in state.values()
    )
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(len(header_bytes).to_bytes(8, "little"))
        f.write(header_bytes)
        f.write(blob)


def load_checkpoint(path: str, expected_role=None) -> nn.Module:
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"not a checkpoint file: {path}")
        header_len = int.from_bytes(f.read(8), "little")
        try:
            header = json.loads(f.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"corrupt checkpoint header: {e}") from e
        blob = f.read()

    role = header.get("role")
    if expected_role is not None and role != expected_role:
        raise RoleMismatchError(
            f"checkpoint holds a {role!r} network, expected {expected_role!r} "
            f"(arch: {header.get('arch')})"
        )
    if role not in _ROLE_CLASSES:
        raise CheckpointError(f"unknown role {role!r}")
    model = _ROLE_CLASSES[role](**header["arch"])

    offset = 0
    state = {}
    for entry in header["params"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        raw = blob[offset : offset + 4 * count]
        if len(raw) != 4 * count:
            raise CheckpointError(f"truncated parameter blob in {path}")
        arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()
        state[entry["name"]] = torch.from_numpy(arr)
        offset += 4 * count
    if offset != len(blob):
        raise CheckpointError(f"trailing bytes in parameter blob of {path}")
    model.load_state_dict(state)
    if role == "teacher":
        freeze(model)
    model.eval()
    return model
