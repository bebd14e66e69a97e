"""Synthetic guessing-game worlds.

A world is one game instance: 20 similar unit vectors standing in for
image embeddings, a noisy caption vector hinting at the target, and a
pool of questions. Each question has a public vector (the "aspect" it
asks about) and a hidden answer vector that reveals the target's
coordinates on that aspect, optionally corrupted to point at a
distractor instead.

Embedding coordinates have fixed semantics shared by every world, the
way real feature extractors assign stable meanings to dimensions: a
shared-theme subspace plus one subspace per image cluster, each with a
global prototype direction. A world's images split evenly into clusters
(theme + cluster prototype + a per-image offset inside the cluster's
subspace), the caption describes the target only down to its cluster,
and the question pool holds one broad "aspect" question per cluster --
whose answer pins down the target only when the target actually lives
in that cluster -- plus narrow small-talk questions. Winning reliably
therefore requires asking about the right aspect, and telling which
aspect is right requires tracking the dialog's visual context.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .numcore import l2_normalize_np
from .seeding import substream


class WorldFileError(ValueError):
    """A world file failed to parse or validate."""


@dataclass(frozen=True)
class WorldConfig:
    embed_dim: int = 64          # paper-scale value is 1024
    n_images: int = 20
    pool_size: int = 10          # 200 for the large-pool presets
    distractor_noise: float = 1.0
    caption_noise: float = 1.2
    answer_noise: float = 0.15
    answer_corrupt_prob: float = 0.0
    mask_density_min: float = 0.02
    mask_density_max: float = 0.1875
    n_clusters: int = 4
    seed: int = 0

    def validate(self) -> None:
        if self.embed_dim < 2:
            raise ValueError("embed_dim must be >= 2")
        if self.n_images < 2:
            raise ValueError("n_images must be >= 2")
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if not 0.0 <= self.answer_corrupt_prob <= 1.0:
            raise ValueError("answer_corrupt_prob must be in [0, 1]")
        for name in ("distractor_noise", "caption_noise", "answer_noise"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.mask_density_min <= self.mask_density_max <= 1.0:
            raise ValueError("mask density bounds must satisfy "
                             "0 <= min <= max <= 1")


@dataclass
class GameWorld:
    world_id: str
    target_idx: int
    images: np.ndarray       # (n_images, k), unit rows
    caption: np.ndarray      # (k,), unit
    q_vecs: np.ndarray       # (pool_size, k), unit rows
    a_vecs: np.ndarray       # (pool_size, k), unit rows

    @property
    def n_images(self) -> int:
        return self.images.shape[0]

    @property
    def pool_size(self) -> int:
        return self.q_vecs.shape[0]

    @property
    def target(self) -> np.ndarray:
        return self.images[self.target_idx]

    def validate(self, cfg: WorldConfig | None = None) -> None:
        if not 0 <= self.target_idx < self.images.shape[0]:
            raise WorldFileError(
                f"world {self.world_id}: target_idx {self.target_idx} "
                f"out of range")
        if self.q_vecs.shape != self.a_vecs.shape:
            raise WorldFileError(
                f"world {self.world_id}: question/answer count mismatch")
        if cfg is not None:
            if self.images.shape != (cfg.n_images, cfg.embed_dim):
                raise WorldFileError(
                    f"world {self.world_id}: images shape "
                    f"{self.images.shape} != "
                    f"({cfg.n_images}, {cfg.embed_dim})")
            if self.q_vecs.shape[0] != cfg.pool_size:
                raise WorldFileError(
                    f"world {self.world_id}: expected {cfg.pool_size} "
                    f"questions, got {self.q_vecs.shape[0]}")
        for name, arr in (("images", self.images), ("q_vecs", self.q_vecs),
                          ("a_vecs", self.a_vecs),
                          ("caption", self.caption[None, :])):
            norms = np.linalg.norm(arr, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-9):
                raise WorldFileError(
                    f"world {self.world_id}: non-unit vector in {name}")


def _unit(rng: np.random.Generator, k: int) -> np.ndarray:
    return l2_normalize_np(rng.standard_normal(k))


def _noisy_copy(base: np.ndarray, sigma: float,
                rng: np.random.Generator) -> np.ndarray:
    k = base.shape[0]
    return l2_normalize_np(base + sigma * _unit(rng, k))


def question_mask(q_vec: np.ndarray, density: float) -> np.ndarray:
    """Coordinate mask for a question: the top ceil(density*k) entries of
    |q_vec|. The mask is a pure function of the public question vector."""
    k = q_vec.shape[0]
    m = max(1, int(np.ceil(density * k)))
    mask = np.zeros(k)
    mask[np.argsort(-np.abs(q_vec))[:m]] = 1.0
    return mask


def _question_vec(rng: np.random.Generator, k: int, m: int) -> np.ndarray:
    """Question vector with m strongly-expressed coordinates and a faint
    residue elsewhere, so the answer's coverage is readable from the
    public vector (broad questions look dense, narrow ones look peaked)."""
    v = 0.05 * rng.standard_normal(k)
    active = rng.permutation(k)[:m]
    signs = 2.0 * rng.integers(0, 2, size=m) - 1.0
    v[active] = signs * (0.5 + np.abs(rng.standard_normal(m)))
    return l2_normalize_np(v)


# fixed proportions of the cluster geometry; the config's noise knobs
# scale relative to these
THEME_WEIGHT = 0.6       # shared-theme magnitude vs unit cluster prototype
MEMBER_SPREAD = 1.2      # per-image offset magnitude inside a cluster
IMAGE_JITTER = 0.1       # isotropic per-image jitter
ASPECT_NOISE = 0.1       # perturbation of aspect questions off the prototype


def _partition(k: int, n_clusters: int) -> tuple[np.ndarray, list]:
    """Split the k coordinates into a shared-theme subspace and one
    subspace per cluster; identical for every world of the same dim."""
    shared = max(1, k // 4)
    ncl = min(n_clusters, k - shared)
    blk = (k - shared) // ncl
    shared += (k - shared) - blk * ncl
    blocks = [np.arange(shared + blk * c, shared + blk * (c + 1))
              for c in range(ncl)]
    return np.arange(shared), blocks


def _prototype(cfg: WorldConfig, block: np.ndarray, c: int,
               k: int) -> np.ndarray:
    """Global prototype direction of cluster c, shared by all worlds."""
    prng = substream(cfg.seed, "aspect-prototype", c)
    u = np.zeros(k)
    u[block] = prng.standard_normal(block.shape[0])
    return l2_normalize_np(u)


def _block_offset(rng: np.random.Generator, block: np.ndarray,
                  proto: np.ndarray, k: int) -> np.ndarray:
    """Random unit vector in the cluster subspace, orthogonal to the
    prototype when the subspace has room for it."""
    v = np.zeros(k)
    v[block] = rng.standard_normal(block.shape[0])
    v -= (v @ proto) * proto
    n = np.linalg.norm(v)
    if n == 0.0:                       # 1-dim subspace: only the prototype
        return proto.copy()
    return v / n


def generate_world(cfg: WorldConfig, game_seed: int) -> GameWorld:
    """Build one world deterministically from (cfg, game_seed)."""
    cfg.validate()
    rng = substream(cfg.seed, "worldgen", game_seed)
    k = cfg.embed_dim
    shared, blocks = _partition(k, cfg.n_clusters)
    ncl = len(blocks)
    protos = [_prototype(cfg, blocks[c], c, k) for c in range(ncl)]

    # heavy-tailed shared theme plus one cluster membership per image
    theme = np.zeros(k)
    theme[shared] = rng.standard_normal(shared.shape[0]) ** 3
    theme = THEME_WEIGHT * l2_normalize_np(theme, name="theme")
    cluster_of = np.arange(cfg.n_images) % ncl
    rng.shuffle(cluster_of)
    raw = np.empty((cfg.n_images, k))
    for i in range(cfg.n_images):
        c = cluster_of[i]
        off = _block_offset(rng, blocks[c], protos[c], k)
        member = ((protos[c] + MEMBER_SPREAD * off)
                  / np.sqrt(1.0 + MEMBER_SPREAD ** 2))
        raw[i] = theme + member + IMAGE_JITTER * _unit(rng, k)

    # distractor_noise interpolates every image between the target's raw
    # position (0 -> all identical) and its own natural position (1)
    target_idx = int(rng.integers(cfg.n_images))
    images = np.empty((cfg.n_images, k))
    for i in range(cfg.n_images):
        mix = raw[target_idx] + cfg.distractor_noise * (raw[i]
                                                        - raw[target_idx])
        images[i] = l2_normalize_np(mix, name=f"image {i}")
    target = images[target_idx]
    target_cluster = int(cluster_of[target_idx])

    # the caption describes the target only down to its cluster
    caption = l2_normalize_np(theme + protos[target_cluster]
                              + cfg.caption_noise * _unit(rng, k),
                              name="caption")

    # one broad aspect question per cluster, the rest narrow small talk;
    # only the aspect matching the target's cluster has a decisive answer
    n_aspects = min(ncl, cfg.pool_size)
    aspect_pos = rng.permutation(cfg.pool_size)[:n_aspects]
    weak_hi = cfg.mask_density_min + 0.1 * (cfg.mask_density_max
                                            - cfg.mask_density_min)
    q_vecs = np.empty((cfg.pool_size, k))
    a_vecs = np.empty((cfg.pool_size, k))
    for j in range(cfg.pool_size):
        hit = np.flatnonzero(aspect_pos == j)
        if hit.size:
            c = int(hit[0])
            qn = _block_offset(rng, blocks[c], protos[c], k)
            q_vecs[j] = l2_normalize_np(protos[c] + ASPECT_NOISE * qn)
            density = cfg.mask_density_max
        else:
            density = rng.uniform(cfg.mask_density_min, weak_hi)
            m = max(1, int(np.ceil(density * k)))
            q_vecs[j] = _question_vec(rng, k, m)
        mask = question_mask(q_vecs[j], density)
        if rng.random() < cfg.answer_corrupt_prob and cfg.n_images > 1:
            choices = [i for i in range(cfg.n_images) if i != target_idx]
            source = images[choices[int(rng.integers(len(choices)))]]
        else:
            source = target
        a = mask * source + cfg.answer_noise * _unit(rng, k)
        a_vecs[j] = l2_normalize_np(a, name=f"answer {j}")

    return GameWorld(world_id=f"w{game_seed:06d}", target_idx=target_idx,
                     images=images, caption=caption,
                     q_vecs=q_vecs, a_vecs=a_vecs)


def generate_worlds(cfg: WorldConfig, n_worlds: int,
                    first_seed: int = 0) -> list[GameWorld]:
    return [generate_world(cfg, first_seed + i) for i in range(n_worlds)]


# ---------------------------------------------------------------------------
# persistence: JSON with floats at 17 significant digits (bit-exact)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _vec_json(v: np.ndarray) -> str:
    return "[" + ",".join(_fmt(x) for x in v) + "]"


def _mat_json(m: np.ndarray) -> str:
    return "[" + ",".join(_vec_json(r) for r in m) + "]"


def world_to_json(w: GameWorld) -> str:
    qs = ",".join(
        '{"q":%s,"a":%s}' % (_vec_json(q), _vec_json(a))
        for q, a in zip(w.q_vecs, w.a_vecs))
    return ('{"world_id":%s,"target_idx":%d,"images":%s,"caption":%s,'
            '"questions":[%s]}'
            % (json.dumps(w.world_id), w.target_idx, _mat_json(w.images),
               _vec_json(w.caption), qs))


def save_worlds(path, cfg: WorldConfig, worlds: list[GameWorld]) -> None:
    with open(path, "w") as f:
        f.write('{"version":1,"config":%s,"worlds":[\n'
                % json.dumps(asdict(cfg)))
        f.write(",\n".join(world_to_json(w) for w in worlds))
        f.write("\n]}\n")


def load_worlds(path) -> tuple[WorldConfig, list[GameWorld]]:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise WorldFileError(f"{path}: malformed world file: {e}") from e
    if doc.get("version") != 1:
        raise WorldFileError(f"{path}: unsupported version "
                             f"{doc.get('version')!r}")
    known = set(WorldConfig.__dataclass_fields__)
    cfg_doc = doc.get("config", {})
    unknown = set(cfg_doc) - known
    if unknown:
        raise WorldFileError(f"{path}: unknown config keys {sorted(unknown)}")
    cfg = WorldConfig(**cfg_doc)
    worlds = []
    for i, wd in enumerate(doc.get("worlds", [])):
        try:
            w = GameWorld(
                world_id=str(wd["world_id"]),
                target_idx=int(wd["target_idx"]),
                images=np.asarray(wd["images"], dtype=np.float64),
                caption=np.asarray(wd["caption"], dtype=np.float64),
                q_vecs=np.asarray([q["q"] for q in wd["questions"]],
                                  dtype=np.float64),
                a_vecs=np.asarray([q["a"] for q in wd["questions"]],
                                  dtype=np.float64),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise WorldFileError(
                f"{path}: world record {i} is malformed: {e}") from e
        w.validate(cfg)
        worlds.append(w)
    return cfg, worlds
