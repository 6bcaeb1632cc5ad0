"""Trace container format and synthetic trace generation.

File layout (version 1, all integers little-endian):

    bytes 0..3    magic "AKVT"
    bytes 4..7    u32 version
    bytes 8..11   u32 header JSON length
    header JSON   shape/flag fields, including payload_bytes so the
                  ground-truth footer can be located without parsing
                  tensors
    payload       optional task block: per layer, per head, task query
                  rows (task_rows x d_head) as row-major f32;
                  then per window: per layer: per head: Q, K, V
                  (window x d_head each);
                  then per decode step: per layer: per head: q, k, v
                  (1 x d_head each)
    footer        ground-truth JSON document (when flagged)

Synthetic traces draw background tensors i.i.d. standard normal and
then plant a relevance structure for each decode step: the step's
query direction u is mixed into the keys of its target chunks
(k = s*u + (1-s)*noise), and a later "probe window" gets a planted
chunk of its own plus a small fraction of anchor query rows pointing
along u at amplified magnitude. Background *queries* additionally
share one constant offset direction per layer/head (drift_scale
knob), standing in for the correlated structure ordinary tokens
carry: without it the mean of the non-anchor rows nearly vanishes
and plain mean pooling already isolates the anchors, leaving nothing
for activation weighting to improve on. A constant offset cancels
out of the deviation statistics, so it burdens only the pooled
probe, exactly the failure mode activation weighting targets.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

MAGIC = b"AKVT"
VERSION = 1
_PREFIX = struct.Struct("<4sII")  # magic, version, header json length

GT_VERSION = 1


class TraceFormatError(ValueError):
    """Base for malformed trace containers."""


class BadMagic(TraceFormatError):
    pass


class VersionUnsupported(TraceFormatError):
    pass


class TruncatedFile(TraceFormatError):
    def __init__(self, offset: int, what: str = ""):
        self.offset = offset
        super().__init__(f"trace truncated at byte {offset}" +
                         (f" ({what})" if what else ""))


class SpecOutOfRange(ValueError):
    """Planted-relevance spec incompatible with the trace geometry."""


@dataclass(frozen=True)
class TraceHeader:
    d: int
    layers: int
    heads: int
    window: int
    num_windows: int
    num_decode_steps: int
    dtype: str = "f32le"
    has_task_block: bool = False
    has_ground_truth: bool = False
    task_rows: int = 0

    def __post_init__(self):
        if min(self.d, self.layers, self.heads, self.window) < 1:
            raise TraceFormatError("all dimensions must be positive")
        if self.num_windows < 0 or self.num_decode_steps < 0:
            raise TraceFormatError("negative block counts")
        if self.d % self.heads != 0:
            raise TraceFormatError(
                f"d={self.d} not divisible by heads={self.heads}")
        if self.dtype != "f32le":
            raise TraceFormatError(f"unsupported dtype tag {self.dtype!r}")
        if self.has_task_block != (self.task_rows > 0):
            raise TraceFormatError("task_rows inconsistent with task flag")

    @property
    def d_head(self) -> int:
        return self.d // self.heads

    def task_bytes(self) -> int:
        return self.layers * self.heads * self.task_rows * self.d_head * 4

    def window_bytes(self) -> int:
        return self.layers * self.heads * 3 * self.window * self.d_head * 4

    def decode_bytes(self) -> int:
        return self.layers * self.heads * 3 * self.d_head * 4

    def payload_bytes(self) -> int:
        return (self.task_bytes() +
                self.num_windows * self.window_bytes() +
                self.num_decode_steps * self.decode_bytes())


@dataclass(frozen=True)
class StepBlock:
    stage: str  # "pre-filling" | "decoding"
    index: int
    q: np.ndarray  # (layers, heads, rows, d_head)
    k: np.ndarray
    v: np.ndarray


@dataclass
class TraceData:
    """Eagerly loaded trace contents."""

    header: TraceHeader
    window_q: np.ndarray  # (T, L, H, m, d_head)
    window_k: np.ndarray
    window_v: np.ndarray
    decode_q: np.ndarray  # (S, L, H, 1, d_head)
    decode_k: np.ndarray
    decode_v: np.ndarray
    task_queries: np.ndarray | None = None  # (L, H, task_rows, d_head)
    ground_truth: dict | None = None

    def blocks(self) -> Iterator[StepBlock]:
        for t in range(self.header.num_windows):
            yield StepBlock("pre-filling", t, self.window_q[t],
                            self.window_k[t], self.window_v[t])
        for s in range(self.header.num_decode_steps):
            yield StepBlock("decoding", s, self.decode_q[s],
                            self.decode_k[s], self.decode_v[s])


def _header_json(header: TraceHeader) -> bytes:
    doc = asdict(header)
    doc["payload_bytes"] = header.payload_bytes()
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def write_trace(path, trace: TraceData) -> None:
    h = trace.header
    shapes = {
        "window_q": (h.num_windows, h.layers, h.heads, h.window, h.d_head),
        "window_k": (h.num_windows, h.layers, h.heads, h.window, h.d_head),
        "window_v": (h.num_windows, h.layers, h.heads, h.window, h.d_head),
        "decode_q": (h.num_decode_steps, h.layers, h.heads, 1, h.d_head),
        "decode_k": (h.num_decode_steps, h.layers, h.heads, 1, h.d_head),
        "decode_v": (h.num_decode_steps, h.layers, h.heads, 1, h.d_head),
    }
    for name, want in shapes.items():
        got = getattr(trace, name).shape
        if tuple(got) != want:
            raise TraceFormatError(f"{name} shape {got}, header says {want}")
    if h.has_task_block:
        want = (h.layers, h.heads, h.task_rows, h.d_head)
        if trace.task_queries is None or tuple(trace.task_queries.shape) != want:
            raise TraceFormatError(f"task block shape must be {want}")
    if h.has_ground_truth and trace.ground_truth is None:
        raise TraceFormatError("header flags ground truth but none given")

    def dump(fh, arr):
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    hdr = _header_json(h)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(hdr)))
        fh.write(hdr)
        if h.has_task_block:
            dump(fh, trace.task_queries)
        for t in range(h.num_windows):
            for l in range(h.layers):
                for hd in range(h.heads):
                    dump(fh, trace.window_q[t, l, hd])
                    dump(fh, trace.window_k[t, l, hd])
                    dump(fh, trace.window_v[t, l, hd])
        for s in range(h.num_decode_steps):
            for l in range(h.layers):
                for hd in range(h.heads):
                    dump(fh, trace.decode_q[s, l, hd])
                    dump(fh, trace.decode_k[s, l, hd])
                    dump(fh, trace.decode_v[s, l, hd])
        if h.has_ground_truth:
            fh.write(json.dumps(trace.ground_truth, sort_keys=True,
                                separators=(",", ":")).encode())


class TraceReader:
    """Streaming access to one trace file; iterators may run concurrently
    (each holds its own handle over the immutable file)."""

    def __init__(self, path, header: TraceHeader, payload_start: int):
        self.path = path
        self.header = header
        self._payload_start = payload_start

    def _read_tensor(self, fh, rows: int) -> np.ndarray:
        h = self.header
        need = rows * h.d_head * 4
        at = fh.tell()
        buf = fh.read(need)
        if len(buf) < need:
            raise TruncatedFile(at + len(buf), "tensor block")
        return np.frombuffer(buf, dtype="<f4").reshape(rows, h.d_head).copy()

    def _read_group(self, fh, rows: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        h = self.header
        q = np.empty((h.layers, h.heads, rows, h.d_head), dtype=np.float32)
        k = np.empty_like(q)
        v = np.empty_like(q)
        for l in range(h.layers):
            for hd in range(h.heads):
                q[l, hd] = self._read_tensor(fh, rows)
                k[l, hd] = self._read_tensor(fh, rows)
                v[l, hd] = self._read_tensor(fh, rows)
        return q, k, v

    def task_queries(self) -> np.ndarray | None:
        h = self.header
        if not h.has_task_block:
            return None
        out = np.empty((h.layers, h.heads, h.task_rows, h.d_head),
                       dtype=np.float32)
        with open(self.path, "rb") as fh:
            fh.seek(self._payload_start)
            for l in range(h.layers):
                for hd in range(h.heads):
                    out[l, hd] = self._read_tensor(fh, h.task_rows)
        return out

    def blocks(self) -> Iterator[StepBlock]:
        h = self.header
        with open(self.path, "rb") as fh:
            fh.seek(self._payload_start + h.task_bytes())
            for t in range(h.num_windows):
                q, k, v = self._read_group(fh, h.window)
                yield StepBlock("pre-filling", t, q, k, v)
            for s in range(h.num_decode_steps):
                q, k, v = self._read_group(fh, 1)
                yield StepBlock("decoding", s, q, k, v)

    def ground_truth(self) -> dict | None:
        h = self.header
        if not h.has_ground_truth:
            return None
        at = self._payload_start + h.payload_bytes()
        with open(self.path, "rb") as fh:
            fh.seek(at)
            raw = fh.read()
        if not raw:
            raise TruncatedFile(at, "ground-truth footer")
        try:
            return json.loads(raw.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise TraceFormatError(f"ground-truth footer not valid JSON: {e}")

    def load(self) -> TraceData:
        h = self.header
        wq = np.empty((h.num_windows, h.layers, h.heads, h.window, h.d_head),
                      dtype=np.float32)
        wk = np.empty_like(wq)
        wv = np.empty_like(wq)
        dq = np.empty((h.num_decode_steps, h.layers, h.heads, 1, h.d_head),
                      dtype=np.float32)
        dk = np.empty_like(dq)
        dv = np.empty_like(dq)
        for blk in self.blocks():
            if blk.stage == "pre-filling":
                wq[blk.index], wk[blk.index], wv[blk.index] = blk.q, blk.k, blk.v
            else:
                dq[blk.index], dk[blk.index], dv[blk.index] = blk.q, blk.k, blk.v
        return TraceData(header=h, window_q=wq, window_k=wk, window_v=wv,
                         decode_q=dq, decode_k=dk, decode_v=dv,
                         task_queries=self.task_queries(),
                         ground_truth=self.ground_truth())


def read_trace(path) -> tuple[TraceHeader, TraceReader]:
    with open(path, "rb") as fh:
        head = fh.read(_PREFIX.size)
        if len(head) < _PREFIX.size:
            raise TruncatedFile(len(head), "container prefix")
        magic, version, hlen = _PREFIX.unpack(head)
        if magic != MAGIC:
            raise BadMagic(f"bad magic {magic!r}")
        if version != VERSION:
            raise VersionUnsupported(f"trace version {version} unsupported")
        raw = fh.read(hlen)
        if len(raw) < hlen:
            raise TruncatedFile(_PREFIX.size + len(raw), "header JSON")
    try:
        doc = json.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise TraceFormatError(f"header not valid JSON: {e}")
    declared = doc.pop("payload_bytes", None)
    try:
        header = TraceHeader(**doc)
    except TypeError as e:
        raise TraceFormatError(f"header fields invalid: {e}")
    if declared is not None and declared != header.payload_bytes():
        raise TraceFormatError(
            f"declared payload {declared} bytes, shapes imply "
            f"{header.payload_bytes()}")
    return header, TraceReader(path, header, _PREFIX.size + hlen)


# ---------------------------------------------------------------------------
# synthetic generation


@dataclass(frozen=True)
class SyntheticConfig:
    """Shape of a generated trace plus the cache geometry its ground
    truth chunk ids assume."""

    d: int = 64
    layers: int = 4
    heads: int = 1
    window: int = 256
    num_windows: int = 8
    num_decode_steps: int = 16
    n_sink: int = 64
    chunk: int = 32
    n_local: int = 512
    task_rows: int = 0

    @property
    def d_head(self) -> int:
        return self.d // self.heads

    def header(self, has_ground_truth: bool) -> TraceHeader:
        return TraceHeader(d=self.d, layers=self.layers, heads=self.heads,
                           window=self.window, num_windows=self.num_windows,
                           num_decode_steps=self.num_decode_steps,
                           has_task_block=self.task_rows > 0,
                           has_ground_truth=has_ground_truth,
                           task_rows=self.task_rows)

    def prefill_chunks(self) -> int:
        """Chunks sealed by the pre-filling windows alone."""
        return max(0, self.num_windows * self.window - self.n_sink) // self.chunk

    def retrievable_at_window(self, w: int) -> int:
        """Chunks fully outside the local tail when window w pre-fills."""
        cached = w * self.window
        tail_start = max(min(cached, self.n_sink), cached - self.n_local)
        return max(0, tail_start - self.n_sink) // self.chunk

    def chunk_window(self, chunk_id: int) -> tuple[int, int]:
        """Windows containing the first and last pair of a chunk."""
        start = self.n_sink + chunk_id * self.chunk
        end = start + self.chunk - 1
        return start // self.window, end // self.window


@dataclass(frozen=True)
class PlantedSpec:
    """Relevance structure for a synthetic trace.

    targets[i] lists the early chunks correlated with decode step i's
    query direction; probe_windows[i] names the later window that gets
    both a planted chunk of its own and step i's anchor query rows.
    """

    targets: tuple[tuple[int, ...], ...]
    probe_windows: tuple[int, ...]
    signal: float = 0.8
    anchor_fraction: float = 0.10
    anchor_scale: float = 3.0
    drift_scale: float = 1.0

    @classmethod
    def auto(cls, cfg: SyntheticConfig, per_step: int = 1,
             signal: float = 0.8, anchor_fraction: float = 0.10,
             anchor_scale: float = 3.0, drift_scale: float = 1.0) -> "PlantedSpec":
        """Deterministic placement: spread steps over the latest windows
        whose chunks stay retrievable at decode time. Each step takes
        the highest free chunk ids retrievable at its probe window, so
        steps probing from early windows (small candidate pools) keep
        the low ids only they can use."""
        steps = cfg.num_decode_steps
        # window w's own chunks must leave the tail by the first decode step
        tail_windows = math.ceil(cfg.n_local / cfg.window)
        w_hi = cfg.num_windows - 1 - tail_windows
        w_lo = next((w for w in range(1, cfg.num_windows)
                     if cfg.retrievable_at_window(w) >= max(per_step, 1)), None)
        if steps > 0 and per_step > 0 and (w_lo is None or w_lo > w_hi):
            raise SpecOutOfRange("no window is late enough to probe from and "
                                 "early chunks are too few to plant")
        if per_step == 0:
            return cls(targets=tuple(() for _ in range(steps)),
                       probe_windows=tuple(-1 for _ in range(steps)),
                       signal=signal, anchor_fraction=anchor_fraction,
                       anchor_scale=anchor_scale, drift_scale=drift_scale)
        windows = list(range(w_hi, w_lo - 1, -1))
        probe_windows = [windows[i % len(windows)] for i in range(steps)]
        used: set[int] = set()
        targets = []
        for i in range(steps):
            pool = [j for j in range(cfg.retrievable_at_window(probe_windows[i]))
                    if j not in used]
            if len(pool) < per_step:
                raise SpecOutOfRange(
                    f"step {i}: {len(pool)} free retrievable chunks at window "
                    f"{probe_windows[i]}, need {per_step}")
            picked = pool[-per_step:]
            used.update(picked)
            targets.append(tuple(picked))
        # reserve one chunk inside each probe window for its step
        for i in range(steps):
            w = probe_windows[i]
            first = math.ceil(max(0, w * cfg.window - cfg.n_sink) / cfg.chunk)
            last = ((w + 1) * cfg.window - cfg.n_sink) // cfg.chunk - 1
            cand = [j for j in range(first, last + 1) if j not in used]
            if not cand:
                raise SpecOutOfRange(f"no free chunk inside probe window {w}")
            used.add(cand[0])
            targets[i] = targets[i] + (cand[0],)
        return cls(targets=tuple(targets), probe_windows=tuple(probe_windows),
                   signal=signal, anchor_fraction=anchor_fraction,
                   anchor_scale=anchor_scale, drift_scale=drift_scale)


def _validate_planted(cfg: SyntheticConfig, spec: PlantedSpec) -> None:
    if not (0.0 <= spec.signal <= 1.0):
        raise SpecOutOfRange(f"signal {spec.signal} outside [0, 1]")
    if not (0.0 <= spec.anchor_fraction <= 1.0):
        raise SpecOutOfRange("anchor fraction outside [0, 1]")
    if spec.anchor_scale < 0 or spec.drift_scale < 0:
        raise SpecOutOfRange("negative magnitude knob")
    if len(spec.targets) != cfg.num_decode_steps:
        raise SpecOutOfRange(f"{len(spec.targets)} target sets for "
                             f"{cfg.num_decode_steps} decode steps")
    if len(spec.probe_windows) != cfg.num_decode_steps:
        raise SpecOutOfRange("probe_windows length mismatch")
    n_chunks = cfg.prefill_chunks()
    seen: set[int] = set()
    for i, (ids, w) in enumerate(zip(spec.targets, spec.probe_windows)):
        if not ids:
            continue
        if not (0 <= w < cfg.num_windows):
            raise SpecOutOfRange(f"step {i}: probe window {w} out of range")
        for j in ids:
            if not (0 <= j < n_chunks):
                raise SpecOutOfRange(f"step {i}: chunk {j} does not exist "
                                     f"(pre-fill seals {n_chunks})")
            if j in seen:
                raise SpecOutOfRange(f"chunk {j} planted for two steps")
            seen.add(j)
            if cfg.chunk_window(j)[0] > w:
                raise SpecOutOfRange(f"step {i}: chunk {j} is generated after "
                                     f"probe window {w}")


def generate_synthetic(cfg: SyntheticConfig, planted: PlantedSpec | None,
                       seed: int, out_path=None) -> TraceData:
    """Build a synthetic trace; optionally write it to out_path.

    Output is a pure function of (cfg, planted, seed).
    """
    if planted is not None:
        _validate_planted(cfg, planted)
    rng = np.random.default_rng(seed)
    L, H, m, dh = cfg.layers, cfg.heads, cfg.window, cfg.d_head
    T, S = cfg.num_windows, cfg.num_decode_steps

    wq = rng.standard_normal((T, L, H, m, dh)).astype(np.float32)
    wk = rng.standard_normal((T, L, H, m, dh)).astype(np.float32)
    wv = rng.standard_normal((T, L, H, m, dh)).astype(np.float32)
    dq = rng.standard_normal((S, L, H, 1, dh)).astype(np.float32)
    dk = rng.standard_normal((S, L, H, 1, dh)).astype(np.float32)
    dv = rng.standard_normal((S, L, H, 1, dh)).astype(np.float32)
    task = (rng.standard_normal((L, H, cfg.task_rows, dh)).astype(np.float32)
            if cfg.task_rows > 0 else None)

    gt = None
    if planted is not None:
        scale = math.sqrt(dh)
        if planted.drift_scale > 0:
            # one offset direction per layer/head, constant over windows
            # and rows: correlated background that a pooled probe keeps
            # but deviation statistics cancel
            g = rng.standard_normal((L, H, dh))
            g /= np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-12)
            wq += (planted.drift_scale * scale * g[None, :, :, None, :]
                   ).astype(np.float32)
        # unit query direction per (step, layer, head)
        u = dq[:, :, :, 0, :].astype(np.float64).copy()
        norms = np.linalg.norm(u, axis=-1, keepdims=True)
        u /= np.maximum(norms, 1e-12)

        s = planted.signal
        for i, ids in enumerate(planted.targets):
            for j in ids:
                start = cfg.n_sink + j * cfg.chunk
                for pos in range(start, start + cfg.chunk):
                    t, r = divmod(pos, m)
                    noise = rng.standard_normal((L, H, dh))
                    wk[t, :, :, r, :] = (s * u[i] + (1 - s) * noise
                                         ).astype(np.float32)

        # anchor query rows inside each probe window, split when several
        # steps share one window
        by_window: dict[int, list[int]] = {}
        for i, w in enumerate(planted.probe_windows):
            if planted.targets[i]:
                by_window.setdefault(w, []).append(i)
        for w, steps in by_window.items():
            n_anchor = int(round(planted.anchor_fraction * m))
            rows = rng.choice(m, size=min(n_anchor, m), replace=False)
            shares = np.array_split(rows, len(steps))
            for i, rset in zip(steps, shares):
                anchor = (planted.anchor_scale * scale * u[i]
                          ).astype(np.float32)  # (L, H, dh)
                for r in rset:
                    wq[w, :, :, int(r), :] = anchor

        entries = []
        for i, ids in enumerate(planted.targets):
            entries.append({
                "decode_step": i,
                "probe_window": int(planted.probe_windows[i]) if ids else None,
                "layers": [sorted(int(j) for j in ids) for _ in range(L)],
            })
        gt = {
            "version": GT_VERSION,
            "n_sink": cfg.n_sink,
            "chunk": cfg.chunk,
            "n_local": cfg.n_local,
            "signal": s,
            "entries": entries,
        }

    trace = TraceData(header=cfg.header(has_ground_truth=gt is not None),
                      window_q=wq, window_k=wk, window_v=wv,
                      decode_q=dq, decode_k=dk, decode_v=dv,
                      task_queries=task, ground_truth=gt)
    if out_path is not None:
        write_trace(out_path, trace)
    return trace
