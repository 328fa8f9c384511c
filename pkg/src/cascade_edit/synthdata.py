"""Procedural talking-face clips with exact ground truth.

A face is an ellipse with two eyes and a mouth whose vertical opening is
driven by a synthetic speech envelope. Head motion is a slow sinusoid.
Everything is a pure function of the seeds passed in.
"""

from __future__ import annotations

import colorsys
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from PIL import Image

from . import kernels
from .errors import DataIOError, InvalidArgument
from .plan import EditPlan, EditSpec, plan_edit

REF_RES = 64
N_HEAD, N_EYES, N_MOUTH = 12, 8, 12
K_DEFAULT = N_HEAD + N_EYES + N_MOUTH
D_DEFAULT = 16
# mouth opening in pixels at REF_RES, scaled with resolution
GAP_MIN, GAP_MAX = 0.8, 8.0
MOUTH_COLOR = (0.06, 0.03, 0.04)
EYE_COLOR = (0.10, 0.10, 0.14)
FEATURE_SEED = 20240917

# keypoint index layout: head contour, eyes, mouth
HEAD = slice(0, N_HEAD)
EYES = slice(N_HEAD, N_HEAD + N_EYES)
MOUTH = slice(N_HEAD + N_EYES, K_DEFAULT)
UPPER_LIP = N_HEAD + N_EYES + 4
LOWER_LIP = N_HEAD + N_EYES + 9
REGION = np.array([0] * N_HEAD + [1] * N_EYES + [2] * N_MOUTH, dtype=np.int64)


@dataclass(frozen=True)
class IdentityParams:
    face_hue: tuple[float, float, float]
    face_axes: tuple[float, float]
    eye_spacing: float
    mouth_width: float
    pose_amp: tuple[float, float, float]
    seed: int
    pose_phase: tuple[float, float, float] = (0.0, 0.0, 0.0)
    pose_period: float = 80.0
    background: tuple[float, float, float] = (0.3, 0.3, 0.3)
    resolution: int = REF_RES

    @property
    def scale(self) -> float:
        return self.resolution / REF_RES

    @property
    def center(self) -> tuple[float, float]:
        c = (self.resolution - 1) / 2.0
        return c, c - 1.0 * self.scale

    @property
    def gap_range(self) -> tuple[float, float]:
        return GAP_MIN * self.scale, GAP_MAX * self.scale

    def max_extent(self) -> float:
        """Largest distance from the frame centre any face pixel can reach."""
        cx, cy = self.center
        off = abs(cy - (self.resolution - 1) / 2.0)
        return max(self.face_axes) + math.hypot(self.pose_amp[0], self.pose_amp[1]) + off + 1.0

    @classmethod
    def from_dict(cls, d: dict) -> "IdentityParams":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class VideoClip:
    frames: np.ndarray  # (n, H, W, 3) float32 in [0, 1]
    fps: float
    identity_id: str

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise InvalidArgument(f"frames must be (n, H, W, 3), got {self.frames.shape}")

    def __len__(self):
        return len(self.frames)


@dataclass
class LandmarkSequence:
    keypoints: np.ndarray  # (n, K, 2) pixel (x, y)

    @property
    def K(self) -> int:
        return self.keypoints.shape[1]

    def __len__(self):
        return len(self.keypoints)


@dataclass
class AudioFeatureSequence:
    features: np.ndarray  # (n, D)
    envelope: np.ndarray  # (n,)

    def __len__(self):
        return len(self.envelope)


@dataclass
class DatasetManifest:
    splits: dict[str, list[str]]
    clips: list[dict]
    split_ratios: tuple[float, float, float]
    config: dict = field(default_factory=dict)
    root: str = ""

    def clips_for(self, split: str) -> list[dict]:
        return [c for c in self.clips if c["split"] == split]

    def to_json(self) -> str:
        d = {
            "splits": self.splits,
            "clips": self.clips,
            "split_ratios": list(self.split_ratios),
            "config": self.config,
        }
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, root: str) -> "DatasetManifest":
        path = os.path.join(root, "manifest.json")
        try:
            with open(path) as fh:
                d = json.load(fh)
        except OSError as exc:
            raise DataIOError(f"cannot read manifest {path}: {exc}") from exc
        return cls(d["splits"], d["clips"], tuple(d["split_ratios"]), d["config"], root=root)


def gen_identity(seed: int, resolution: int = REF_RES) -> IdentityParams:
    rng = np.random.default_rng([seed, 101])
    s = resolution / REF_RES
    hue = colorsys.hsv_to_rgb(rng.uniform(0, 1), rng.uniform(0.3, 0.7), rng.uniform(0.7, 0.95))
    bg = colorsys.hsv_to_rgb(rng.uniform(0, 1), rng.uniform(0.1, 0.5), rng.uniform(0.2, 0.45))
    return IdentityParams(
        face_hue=tuple(float(c) for c in hue),
        face_axes=(float(rng.uniform(13, 16) * s), float(rng.uniform(17, 20) * s)),
        eye_spacing=float(rng.uniform(10, 14) * s),
        mouth_width=float(rng.uniform(8, 12) * s),
        pose_amp=(float(rng.uniform(1.0, 2.5) * s), float(rng.uniform(0.5, 1.5) * s),
                  float(rng.uniform(0.02, 0.08))),
        seed=int(seed),
        pose_phase=tuple(float(p) for p in rng.uniform(0, 2 * np.pi, 3)),
        pose_period=float(rng.uniform(60, 100)),
        background=tuple(float(c) for c in bg),
        resolution=int(resolution),
    )


def synth_envelope(n: int, seed: int) -> np.ndarray:
    """Concatenated raised-cosine "phoneme" pulses of 3-8 frames, amplitudes in [0.2, 1]."""
    rng = np.random.default_rng([seed, 202])
    out = np.empty(0)
    while len(out) < n:
        L = int(rng.integers(3, 9))
        amp = rng.uniform(0.2, 1.0)
        k = np.arange(L)
        out = np.concatenate([out, amp * np.sin(np.pi * (k + 0.5) / L) ** 2])
    return out[:n]


def _feature_projection(d: int = D_DEFAULT) -> np.ndarray:
    rng = np.random.default_rng(FEATURE_SEED)
    return rng.standard_normal((d - 2, 5)) / math.sqrt(5.0)


def audio_features(envelope: np.ndarray, d: int = D_DEFAULT) -> np.ndarray:
    """Per-frame ``[env, delta env, fixed projection of a 5-frame window]``."""
    env = np.asarray(envelope, dtype=np.float64)
    n = len(env)
    if n == 0:
        return np.zeros((0, d))
    delta = np.diff(env, prepend=env[:1])
    padded = np.pad(env, 2, mode="edge")
    windows = np.stack([padded[i:i + n] for i in range(5)], axis=1)
    proj = windows @ _feature_projection(d).T
    return np.concatenate([env[:, None], delta[:, None], proj], axis=1)


def head_pose(identity: IdentityParams, t: np.ndarray) -> np.ndarray:
    """(n, 3) array of (dx, dy, dtheta) at absolute times ``t``."""
    w = 2 * np.pi / identity.pose_period
    amp = np.asarray(identity.pose_amp)
    ph = np.asarray(identity.pose_phase)
    return amp * np.sin(w * np.asarray(t, dtype=np.float64)[:, None] + ph)


def _local_keypoints(identity: IdentityParams, gap: float) -> np.ndarray:
    a, b = identity.face_axes
    ang = 2 * np.pi * np.arange(N_HEAD) / N_HEAD
    head = np.stack([a * np.sin(ang), -b * np.cos(ang)], axis=1)
    s = identity.scale
    ex, ey = identity.eye_spacing / 2, -0.22 * b
    er = (2.2 * s, 1.5 * s)
    eyes = []
    for cx in (-ex, ex):
        eyes += [(cx - er[0], ey), (cx + er[0], ey), (cx, ey - er[1]), (cx, ey + er[1])]
    mh = identity.mouth_width / 2
    my = 0.45 * b
    xs = mh * np.array([-0.6, -0.3, 0.0, 0.3, 0.6])
    half = (gap / 2) * np.sqrt(1 - (xs / mh) ** 2)
    mouth = [(-mh, my), (mh, my)]
    mouth += [(x, my - h) for x, h in zip(xs, half)]
    mouth += [(x, my + h) for x, h in zip(xs, half)]
    return np.concatenate([head, np.array(eyes), np.array(mouth)], axis=0)


def _to_world(identity: IdentityParams, local: np.ndarray, pose) -> np.ndarray:
    cx, cy = identity.center
    dx, dy, th = pose
    c, s = math.cos(th), math.sin(th)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx + dx, cy + dy])


def render_face(identity: IdentityParams, pose, gap: float) -> np.ndarray:
    """Render one (H, W, 3) float64 frame."""
    res = identity.resolution
    img = np.empty((res, res, 3), dtype=np.float64)
    img[:] = identity.background
    a, b = identity.face_axes
    s = identity.scale
    th = float(pose[2])
    ex, ey = identity.eye_spacing / 2, -0.22 * b
    centers = _to_world(identity, np.array([[0.0, 0.0], [-ex, ey], [ex, ey], [0.0, 0.45 * b]]), pose)
    ell = np.array([
        [*centers[0], a, b, th, *identity.face_hue],
        [*centers[1], 2.2 * s, 1.5 * s, th, *EYE_COLOR],
        [*centers[2], 2.2 * s, 1.5 * s, th, *EYE_COLOR],
        [*centers[3], identity.mouth_width / 2, gap / 2, th, *MOUTH_COLOR],
    ])
    kernels.render_ellipses(img, np.ascontiguousarray(ell))
    return img


def gen_clip(identity: IdentityParams, n_frames: int, seed: int, envelope=None, fps: float = 25.0):
    """Render a clip. Returns ``(VideoClip, LandmarkSequence, AudioFeatureSequence)``.

    The mouth gap of frame ``i`` is ``g_min + envelope[i] * (g_max - g_min)``.
    ``envelope`` overrides the seeded envelope when given.
    """
    if n_frames < 2:
        raise InvalidArgument("n_frames must be >= 2")
    rng = np.random.default_rng([seed, 303])
    t0 = int(rng.integers(0, 1000))
    if envelope is None:
        envelope = synth_envelope(n_frames, seed)
    envelope = np.asarray(envelope, dtype=np.float64)
    if envelope.shape != (n_frames,):
        raise InvalidArgument(f"envelope must have shape ({n_frames},)")
    g0, g1 = identity.gap_range
    gaps = g0 + envelope * (g1 - g0)
    poses = head_pose(identity, t0 + np.arange(n_frames))
    res = identity.resolution
    frames = np.empty((n_frames, res, res, 3), dtype=np.float32)
    kps = np.empty((n_frames, K_DEFAULT, 2), dtype=np.float64)
    for i in range(n_frames):
        kps[i] = _to_world(identity, _local_keypoints(identity, gaps[i]), poses[i])
        frames[i] = render_face(identity, poses[i], gaps[i])
    ident = f"seed{identity.seed}"
    audio = AudioFeatureSequence(audio_features(envelope), envelope)
    return VideoClip(frames, fps, ident), LandmarkSequence(kps), audio


def split_counts(n: int, ratios) -> tuple[int, int, int]:
    """Floor each of val/test; train takes the remainder."""
    _, r_val, r_test = ratios
    n_test = int(math.floor(n * r_test + 1e-9))
    n_val = int(math.floor(n * r_val + 1e-9))
    return n - n_val - n_test, n_val, n_test


def _write_clip(path, clip: VideoClip, lms: LandmarkSequence, audio: AudioFeatureSequence, meta):
    os.makedirs(os.path.join(path, "frames"), exist_ok=True)
    for i, f in enumerate(clip.frames):
        Image.fromarray(np.round(np.clip(f, 0, 1) * 255).astype(np.uint8)).save(
            os.path.join(path, "frames", f"{i:05d}.png"))
    lms.keypoints.astype("<f4").tofile(os.path.join(path, "keypoints.f32"))
    audio.features.astype("<f4").tofile(os.path.join(path, "features.f32"))
    audio.envelope.astype("<f4").tofile(os.path.join(path, "envelope.f32"))
    with open(os.path.join(path, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def make_dataset(n_identities: int, clips_per_identity: int, frames_per_clip: int,
                 split_ratios, out_dir: str, seed: int = 0, resolution: int = REF_RES,
                 fps: float = 25.0) -> DatasetManifest:
    if n_identities < 4:
        raise InvalidArgument("need at least 4 identities")
    ratios = tuple(float(r) for r in split_ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-6 or min(ratios) < 0:
        raise InvalidArgument(f"split ratios must be 3 non-negative values summing to 1, got {ratios}")
    n_train, n_val, n_test = split_counts(n_identities, ratios)
    if n_train < 1:
        raise InvalidArgument("split leaves no training identity")

    order = np.random.default_rng([seed, 404]).permutation(n_identities)
    ids = [f"id{i:03d}" for i in range(n_identities)]
    splits = {
        "train": sorted(ids[i] for i in order[:n_train]),
        "val": sorted(ids[i] for i in order[n_train:n_train + n_val]),
        "test": sorted(ids[i] for i in order[n_train + n_val:]),
    }
    split_of = {i: s for s, members in splits.items() for i in members}

    try:
        os.makedirs(out_dir, exist_ok=True)
        clips = []
        for idx, ident in enumerate(ids):
            id_seed = int(np.random.default_rng([seed, idx, 1]).integers(2**31))
            identity = gen_identity(id_seed, resolution)
            for j in range(clips_per_identity):
                clip_seed = int(np.random.default_rng([seed, idx, j, 2]).integers(2**31))
                clip, lms, audio = gen_clip(identity, frames_per_clip, clip_seed, fps=fps)
                rel = os.path.join(split_of[ident], ident, f"clip{j:02d}")
                meta = {
                    "fps": fps, "K": lms.K, "D": audio.features.shape[1],
                    "n_frames": frames_per_clip, "resolution": [resolution, resolution],
                    "identity_seed": id_seed, "clip_seed": clip_seed,
                    "identity": asdict(identity),
                    "shapes": {"keypoints": list(lms.keypoints.shape),
                               "features": list(audio.features.shape),
                               "envelope": list(audio.envelope.shape)},
                }
                _write_clip(os.path.join(out_dir, rel), clip, lms, audio, meta)
                clips.append({"identity": ident, "split": split_of[ident], "path": rel,
                              "length": frames_per_clip})
        manifest = DatasetManifest(
            splits, clips, ratios,
            {"n_identities": n_identities, "clips_per_identity": clips_per_identity,
             "frames_per_clip": frames_per_clip, "resolution": resolution, "fps": fps, "seed": seed},
            root=out_dir,
        )
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            fh.write(manifest.to_json())
    except OSError as exc:
        raise DataIOError(f"cannot write dataset to {out_dir}: {exc}") from exc
    return manifest


@dataclass
class ClipData:
    """A clip loaded from disk, with everything aligned per frame."""

    frames: np.ndarray
    keypoints: np.ndarray
    features: np.ndarray
    envelope: np.ndarray
    meta: dict
    identity: str = ""
    path: str = ""

    def __len__(self):
        return len(self.frames)

    @property
    def identity_params(self) -> IdentityParams:
        return IdentityParams.from_dict(self.meta["identity"])


def load_clip(path: str, identity: str = "") -> ClipData:
    try:
        with open(os.path.join(path, "meta.json")) as fh:
            meta = json.load(fh)
        n = meta["n_frames"]
        frames = np.stack([
            np.asarray(Image.open(os.path.join(path, "frames", f"{i:05d}.png")).convert("RGB"),
                       dtype=np.float32) / 255.0
            for i in range(n)
        ])
        sh = meta["shapes"]
        kps = np.fromfile(os.path.join(path, "keypoints.f32"), dtype="<f4").reshape(sh["keypoints"])
        feats = np.fromfile(os.path.join(path, "features.f32"), dtype="<f4").reshape(sh["features"])
        env = np.fromfile(os.path.join(path, "envelope.f32"), dtype="<f4").reshape(sh["envelope"])
    except (OSError, KeyError, ValueError) as exc:
        raise DataIOError(f"cannot load clip at {path}: {exc}") from exc
    return ClipData(frames, kps.astype(np.float64), feats.astype(np.float64),
                    env.astype(np.float64), meta, identity, path)


def load_split(manifest: DatasetManifest, split: str) -> list[ClipData]:
    return [load_clip(os.path.join(manifest.root, c["path"]), c["identity"])
            for c in manifest.clips_for(split)]


def edit_audio(audio: AudioFeatureSequence, spec: EditSpec) -> tuple[AudioFeatureSequence, EditPlan]:
    """Splice a freshly synthesized envelope segment into ``audio``.

    Stands in for text-to-speech editing. Frames outside the edited interval
    keep their original envelope and features bit-for-bit.
    """
    plan = plan_edit(len(audio), spec)
    new_env = synth_envelope(plan.bs, spec.seed)
    env = plan.splice(audio.envelope, new_env)
    feats = audio_features(env, audio.features.shape[1]).astype(audio.features.dtype)
    for src, dst in plan.output_index_map.items():
        feats[dst] = audio.features[src]
    return AudioFeatureSequence(feats, env), plan
