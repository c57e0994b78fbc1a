"""Goal-conditioned velocity network with hand-written reverse-mode gradients.

Three trainable pieces share one flat parameter store:

* an observation encoder fusing the anchor and current views into ``F``;
* a latent-goal encoder ``g_phi(pixel encoding, anchor features)`` producing
  ``n_queries`` vectors of ``query_dim`` each, concatenated into ``Z'``;
* a residual velocity network over ``X_u``, a time embedding and the
  condition ``Z' + F + pixel encoding``, which is also re-injected into
  every residual block.

Trajectories are divided by ``traj_scale`` before entering the network, so
noise and data live on comparable scales.
"""

from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import asdict, dataclass, replace

import numpy as np

from dualnav.flow.trajectory import N_WAYPOINTS
from dualnav.world import CameraIntrinsics, Observation

DEPTH_CLIP = 10.0
PIXEL_FREQS = 4
CHECKPOINT_MAGIC = b"DNAVCKPT"
CHECKPOINT_VERSION = 1


class Variant(str, enum.Enum):
    FULL = "full"
    PIXEL_ONLY = "pixel_only"
    LATENT_ONLY = "latent_only"
    UNCONDITIONED = "unconditioned"

    @property
    def uses_latent(self) -> bool:
        return self in (Variant.FULL, Variant.LATENT_ONLY)

    @property
    def uses_pixel(self) -> bool:
        return self in (Variant.FULL, Variant.PIXEL_ONLY)


@dataclass(frozen=True)
class ModelConfig:
    width: int = 128
    depth: int = 4
    obs_grid: int = 16
    obs_hidden: int = 128
    obs_dim: int = 64
    glimpse: int = 5
    latent_hidden: int = 128
    n_queries: int = 4
    query_dim: int = 16
    time_freqs: int = 8
    traj_scale: float = 2.0
    output: str = "velocity"
    init_seed: int = 0
    variant: str = Variant.FULL.value

    def __post_init__(self):
        for name in ("width", "depth", "obs_grid", "obs_hidden", "obs_dim", "latent_hidden",
                     "n_queries", "query_dim", "time_freqs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.glimpse < 1 or self.glimpse % 2 == 0:
            raise ValueError("glimpse must be a positive odd size")
        if self.traj_scale <= 0:
            raise ValueError("traj_scale must be positive")
        if self.output not in ("velocity", "sample"):
            raise ValueError(f"unknown output parametrization {self.output!r}")
        Variant(self.variant)

    @property
    def d_z(self) -> int:
        return self.n_queries * self.query_dim

    @property
    def pixel_dim(self) -> int:
        return 2 + 4 * PIXEL_FREQS

    @property
    def anchor_dim(self) -> int:
        return 2 + 2 * self.glimpse ** 2

    @property
    def obs_in(self) -> int:
        return 4 * self.obs_grid ** 2

    @property
    def cond_dim(self) -> int:
        return self.d_z + self.obs_dim + self.pixel_dim

    @property
    def traj_dim(self) -> int:
        return 2 * N_WAYPOINTS


@dataclass(frozen=True, eq=False)
class GoalCondition:
    pixel_encoding: np.ndarray
    latent_goal: np.ndarray
    fused_obs: np.ndarray


@dataclass(frozen=True, eq=False)
class ConditionFeatures:
    """Raw, untrained inputs of the condition encoders for a batch."""

    pixel: np.ndarray
    anchor: np.ndarray
    obs: np.ndarray

    def __len__(self):
        return len(self.pixel)

    def take(self, idx) -> "ConditionFeatures":
        return ConditionFeatures(self.pixel[idx], self.anchor[idx], self.obs[idx])

    @staticmethod
    def stack(items) -> "ConditionFeatures":
        items = list(items)
        return ConditionFeatures(np.stack([i.pixel for i in items]), np.stack([i.anchor for i in items]),
                                 np.stack([i.obs for i in items]))


# -- features --------------------------------------------------------------------

def pixel_encoding(u: float, v: float, intr: CameraIntrinsics) -> np.ndarray:
    x = np.array([u / intr.width, v / intr.height])
    k = (2.0 ** np.arange(PIXEL_FREQS)) * math.pi
    ang = x[:, None] * k[None, :]
    return np.concatenate([x, np.sin(ang).ravel(), np.cos(ang).ravel()])


def _norm_depth(depth: np.ndarray) -> np.ndarray:
    return np.minimum(depth, DEPTH_CLIP) / DEPTH_CLIP


def downsample(obs: Observation, grid: int) -> np.ndarray:
    """Block-min depth and block-mean mask on a ``grid`` x ``grid`` raster."""
    h, w = obs.depth.shape
    if h < grid or w < grid:
        raise ValueError("image smaller than the conditioning grid")
    rs = (np.arange(grid) * h) // grid
    cs = (np.arange(grid) * w) // grid
    d = np.minimum.reduceat(np.minimum.reduceat(_norm_depth(obs.depth), rs, axis=0), cs, axis=1)
    m = obs.human_mask.astype(np.float64)
    counts = np.outer(np.diff(np.append(rs, h)), np.diff(np.append(cs, w)))
    m = np.add.reduceat(np.add.reduceat(m, rs, axis=0), cs, axis=1) / counts
    return np.concatenate([d.ravel(), m.ravel()])


def glimpse(obs: Observation, u: int, v: int, size: int) -> np.ndarray:
    r = size // 2
    d = np.pad(_norm_depth(obs.depth), r, mode="edge")
    m = np.pad(obs.human_mask.astype(np.float64), r, mode="edge")
    return np.concatenate([d[v:v + size, u:u + size].ravel(), m[v:v + size, u:u + size].ravel()])


def condition_features(pixel_goal, anchor_obs: Observation, current_obs: Observation | None,
                       cfg: ModelConfig) -> ConditionFeatures:
    """Encoder inputs for one (pixel goal, anchor view, current view) triple."""
    current_obs = anchor_obs if current_obs is None else current_obs
    if anchor_obs.intrinsics != current_obs.intrinsics:
        raise ValueError("anchor and current observations use different intrinsics")
    intr = anchor_obs.intrinsics
    u, v = int(pixel_goal.u), int(pixel_goal.v)
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise ValueError("pixel goal outside the image")
    pitch = anchor_obs.agent_state.pitch
    anchor = np.concatenate([[math.sin(pitch), math.cos(pitch)], glimpse(anchor_obs, u, v, cfg.glimpse)])
    obs = np.concatenate([downsample(anchor_obs, cfg.obs_grid), downsample(current_obs, cfg.obs_grid)])
    return ConditionFeatures(pixel_encoding(u, v, intr), anchor, obs)


def time_embedding(u: np.ndarray, n_freqs: int) -> np.ndarray:
    k = (2.0 ** np.arange(n_freqs)) * math.pi / 2
    ang = np.asarray(u, dtype=np.float64)[:, None] * k[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


# -- network pieces ----------------------------------------------------------------

def _silu(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s, s


def _dsilu(x, s):
    return s * (1.0 + x * (1.0 - s))


def param_layout(cfg: ModelConfig) -> list:
    """Ordered (name, shape) pairs; this order is the checkpoint order."""
    w, c = cfg.width, cfg.cond_dim
    tin = 2 * cfg.time_freqs
    lay = [
        ("obs.w1", (cfg.obs_in, cfg.obs_hidden)), ("obs.b1", (cfg.obs_hidden,)),
        ("obs.w2", (cfg.obs_hidden, cfg.obs_dim)), ("obs.b2", (cfg.obs_dim,)),
        ("lat.w1", (cfg.pixel_dim + cfg.anchor_dim, cfg.latent_hidden)), ("lat.b1", (cfg.latent_hidden,)),
        ("lat.w2", (cfg.latent_hidden, cfg.d_z)), ("lat.b2", (cfg.d_z,)),
        ("vel.w_in", (cfg.traj_dim + tin + c, w)), ("vel.b_in", (w,)),
    ]
    for j in range(cfg.depth):
        lay += [(f"vel.{j}.w1", (w, w)), (f"vel.{j}.u", (tin + c, w)), (f"vel.{j}.b1", (w,)),
                (f"vel.{j}.w2", (w, w)), (f"vel.{j}.b2", (w,))]
    lay += [("vel.w_out", (w, cfg.traj_dim)), ("vel.b_out", (cfg.traj_dim,))]
    return lay


def init_params(cfg: ModelConfig) -> dict:
    rng = np.random.default_rng(cfg.init_seed)
    params = {}
    for name, shape in param_layout(cfg):
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), size=shape)
    # residual branches start small so the initial net is close to its input map
    for j in range(cfg.depth):
        params[f"vel.{j}.w2"] *= 0.1
    params["vel.w_out"] *= 0.1
    return params


class PolicyModel:
    """Velocity network plus condition encoders; parameters are float64 arrays."""

    def __init__(self, cfg: ModelConfig | None = None, params: dict | None = None):
        self.config = cfg or ModelConfig()
        self.params = init_params(self.config) if params is None else params
        layout = dict(param_layout(self.config))
        if set(layout) != set(self.params):
            raise ValueError("parameter names do not match the configuration")
        for k, shape in layout.items():
            if self.params[k].shape != shape:
                raise ValueError(f"parameter {k} has shape {self.params[k].shape}, expected {shape}")

    @property
    def variant(self) -> Variant:
        return Variant(self.config.variant)

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "PolicyModel":
        return PolicyModel(self.config, {k: v.copy() for k, v in self.params.items()})

    # encoders --------------------------------------------------------------

    def _encoders(self, feats: ConditionFeatures, cache: dict | None):
        p = self.params
        a1 = feats.obs @ p["obs.w1"] + p["obs.b1"]
        h1, s1 = _silu(a1)
        fused = h1 @ p["obs.w2"] + p["obs.b2"]
        lin = np.concatenate([feats.pixel, feats.anchor], axis=1)
        a2 = lin @ p["lat.w1"] + p["lat.b1"]
        h2, s2 = _silu(a2)
        latent = h2 @ p["lat.w2"] + p["lat.b2"]
        if cache is not None:
            cache.update(obs=feats.obs, a1=a1, h1=h1, s1=s1, lin=lin, a2=a2, h2=h2, s2=s2)
        return latent, fused

    def encode(self, feats: ConditionFeatures) -> GoalCondition:
        latent, fused = self._encoders(feats, None)
        return GoalCondition(feats.pixel, latent, fused)

    def _cond_vector(self, cond: GoalCondition) -> np.ndarray:
        v = self.variant
        z = cond.latent_goal if v.uses_latent else np.zeros_like(cond.latent_goal)
        pix = cond.pixel_encoding if v.uses_pixel else np.zeros_like(cond.pixel_encoding)
        return np.concatenate([z, cond.fused_obs, pix], axis=1)

    # velocity net ----------------------------------------------------------

    def _velocity(self, xn: np.ndarray, u: np.ndarray, cvec: np.ndarray, cache: dict | None):
        p, cfg = self.params, self.config
        cc = np.concatenate([time_embedding(u, cfg.time_freqs), cvec], axis=1)
        x_in = np.concatenate([xn, cc], axis=1)
        h = x_in @ p["vel.w_in"] + p["vel.b_in"]
        blocks = []
        for j in range(cfg.depth):
            a = h @ p[f"vel.{j}.w1"] + cc @ p[f"vel.{j}.u"] + p[f"vel.{j}.b1"]
            g, s = _silu(a)
            blocks.append((h, a, g, s))
            h = h + g @ p[f"vel.{j}.w2"] + p[f"vel.{j}.b2"]
        ho, so = _silu(h)
        out = ho @ p["vel.w_out"] + p["vel.b_out"]
        if cache is not None:
            cache.update(cc=cc, x_in=x_in, blocks=blocks, h=h, ho=ho, so=so)
        if cfg.output == "sample":
            # the head predicts the clean trajectory; map it onto the linear-path velocity
            inv_u = 1.0 / np.maximum(u, 1e-12)[:, None]
            if cache is not None:
                cache["inv_u"] = inv_u
            return (xn - out) * inv_u
        return out

    def forward(self, xu: np.ndarray, u, feats: ConditionFeatures, cache: dict | None = None) -> np.ndarray:
        """Normalized velocity for a batch; ``xu`` has shape (B, 32, 2) in normalized units."""
        b = len(xu)
        latent, fused = self._encoders(feats, cache)
        cvec = self._cond_vector(GoalCondition(feats.pixel, latent, fused))
        out = self._velocity(xu.reshape(b, -1), np.broadcast_to(np.asarray(u, float), (b,)), cvec, cache)
        return out.reshape(b, N_WAYPOINTS, 2)

    def backward(self, cache: dict, grad_out: np.ndarray) -> dict:
        """Gradients of sum(grad_out * forward(...)) with respect to every parameter."""
        p, cfg = self.params, self.config
        g = {}
        go = grad_out.reshape(len(grad_out), -1)
        if cfg.output == "sample":
            go = -go * cache["inv_u"]
        g["vel.w_out"] = cache["ho"].T @ go
        g["vel.b_out"] = go.sum(0)
        dh = (go @ p["vel.w_out"].T) * _dsilu(cache["h"], cache["so"])
        dcc = np.zeros_like(cache["cc"])
        for j in reversed(range(cfg.depth)):
            h_in, a, gact, s = cache["blocks"][j]
            g[f"vel.{j}.w2"] = gact.T @ dh
            g[f"vel.{j}.b2"] = dh.sum(0)
            da = (dh @ p[f"vel.{j}.w2"].T) * _dsilu(a, s)
            g[f"vel.{j}.w1"] = h_in.T @ da
            g[f"vel.{j}.u"] = cache["cc"].T @ da
            g[f"vel.{j}.b1"] = da.sum(0)
            dcc += da @ p[f"vel.{j}.u"].T
            dh = dh + da @ p[f"vel.{j}.w1"].T
        g["vel.w_in"] = cache["x_in"].T @ dh
        g["vel.b_in"] = dh.sum(0)
        dx_in = dh @ p["vel.w_in"].T
        dcc += dx_in[:, cfg.traj_dim:]
        dcvec = dcc[:, 2 * cfg.time_freqs:]
        dz = dcvec[:, :cfg.d_z] * (1.0 if self.variant.uses_latent else 0.0)
        df = dcvec[:, cfg.d_z:cfg.d_z + cfg.obs_dim]

        g["obs.w2"] = cache["h1"].T @ df
        g["obs.b2"] = df.sum(0)
        da1 = (df @ p["obs.w2"].T) * _dsilu(cache["a1"], cache["s1"])
        g["obs.w1"] = cache["obs"].T @ da1
        g["obs.b1"] = da1.sum(0)

        g["lat.w2"] = cache["h2"].T @ dz
        g["lat.b2"] = dz.sum(0)
        da2 = (dz @ p["lat.w2"].T) * _dsilu(cache["a2"], cache["s2"])
        g["lat.w1"] = cache["lin"].T @ da2
        g["lat.b1"] = da2.sum(0)
        return g

    def velocity(self, xn: np.ndarray, u: float, cond: GoalCondition) -> np.ndarray:
        """Normalized velocity for one or more states sharing a precomputed condition."""
        xn = np.asarray(xn, dtype=np.float64)
        single = xn.ndim == 2
        xb = xn[None] if single else xn
        b = len(xb)
        cvec = self._cond_vector(cond)
        if len(cvec) == 1 and b > 1:
            cvec = np.repeat(cvec, b, axis=0)
        out = self._velocity(xb.reshape(b, -1), np.full(b, float(u)), cvec, None).reshape(b, N_WAYPOINTS, 2)
        return out[0] if single else out

    # serialization ----------------------------------------------------------

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k, _ in param_layout(self.config)])

    @classmethod
    def from_flat(cls, cfg: ModelConfig, flat: np.ndarray) -> "PolicyModel":
        params, off = {}, 0
        for name, shape in param_layout(cfg):
            n = int(np.prod(shape))
            params[name] = np.asarray(flat[off:off + n], dtype=np.float64).reshape(shape).copy()
            off += n
        if off != len(flat):
            raise ValueError("flat parameter vector has the wrong length")
        return cls(cfg, params)

    def round_to_float32(self) -> "PolicyModel":
        """Snap parameters to float32 so the in-memory model equals its checkpoint."""
        return PolicyModel(self.config, {k: v.astype(np.float32).astype(np.float64)
                                         for k, v in self.params.items()})


def ablation_variant(cfg: ModelConfig, variant) -> ModelConfig:
    """Same architecture, different conditioning branches switched on."""
    return replace(cfg, variant=Variant(variant).value)


def encode_condition(pixel_goal, anchor_obs: Observation, current_obs: Observation | None,
                     model: PolicyModel) -> GoalCondition:
    """Encode a pixel goal and two views into the condition the velocity net consumes."""
    feats = condition_features(pixel_goal, anchor_obs, current_obs, model.config)
    return model.encode(ConditionFeatures(feats.pixel[None], feats.anchor[None], feats.obs[None]))


def predict_velocity(model, x_u, u: float, cond: GoalCondition) -> np.ndarray:
    """Velocity estimate in metres per unit flow time for one trajectory state."""
    x_u = np.asarray(x_u, dtype=np.float64)
    if x_u.shape != (N_WAYPOINTS, 2):
        raise ValueError(f"expected a ({N_WAYPOINTS}, 2) trajectory state")
    if not (np.all(np.isfinite(x_u)) and math.isfinite(u)):
        raise ValueError("non-finite input to the velocity network")
    for arr in (cond.pixel_encoding, cond.latent_goal, cond.fused_obs):
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite conditioning")
    scale = model.config.traj_scale
    return scale * model.velocity(x_u / scale, u, cond)


class ExactVelocityModel:
    """Closed-form velocity field of a single memorized trajectory.

    Under the linear schedule every noisy state lies on the segment from
    ``x0`` to its noise draw, so the field ``(x_u - x0) / u`` is exact.  The
    ``offset`` parameter is zero at the optimum; perturbing it raises the loss.
    """

    def __init__(self, x0, traj_scale: float = 1.0):
        self.config = ModelConfig(traj_scale=traj_scale, width=1, depth=1, obs_grid=1, obs_hidden=1,
                                  obs_dim=1, latent_hidden=1, n_queries=1, query_dim=1, time_freqs=1)
        self.x0n = np.asarray(x0, dtype=np.float64).reshape(N_WAYPOINTS, 2) / traj_scale
        self.params = {"offset": np.zeros((N_WAYPOINTS, 2))}

    def forward(self, xu, u, feats=None, cache=None):
        u = np.broadcast_to(np.asarray(u, float), (len(xu),))
        return (xu - self.x0n) / u[:, None, None] + self.params["offset"]

    def backward(self, cache, grad_out):
        return {"offset": grad_out.sum(0)}

    def encode(self, feats):
        return None

    def velocity(self, xn, u, cond=None):
        return (np.asarray(xn) - self.x0n) / u + self.params["offset"]


# -- checkpoints -----------------------------------------------------------------

def save_checkpoint(model: PolicyModel, path, extra: dict | None = None) -> None:
    """Magic, version, header length, JSON header, little-endian float32 parameters."""
    header = {"config": asdict(model.config), "n_params": model.n_params,
              "layout": [[n, list(s)] for n, s in param_layout(model.config)]}
    if extra:
        header["extra"] = extra
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(hb)))
        f.write(hb)
        f.write(model.flat().astype("<f4").tobytes())


def load_checkpoint(path) -> PolicyModel:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a policy checkpoint")
    off = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<II", blob, off)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off += 8
    header = json.loads(blob[off:off + hlen].decode("utf-8"))
    off += hlen
    flat = np.frombuffer(blob, dtype="<f4", offset=off)
    if len(flat) != header["n_params"]:
        raise ValueError(f"{path}: truncated parameter block")
    return PolicyModel.from_flat(ModelConfig(**header["config"]), flat.astype(np.float64))


def checkpoint_header(path) -> dict:
    with open(path, "rb") as f:
        blob = f.read(len(CHECKPOINT_MAGIC) + 8)
        _, hlen = struct.unpack_from("<II", blob, len(CHECKPOINT_MAGIC))
        return json.loads(f.read(hlen).decode("utf-8"))
