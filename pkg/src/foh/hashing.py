"""Hash model, bit-packed binary codes, Hamming distance and top-k selection.

Codes carry {-1,+1} semantics but are stored as packed bits: stored bit b
means sign value 2b-1. Packing is LSB-first into little-endian u64 words
(bit i of a code lives in word i//64 at position i%64), so the Hamming
distance between two codes is the popcount of the XOR of their words.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields

import numpy as np

MODEL_MAGIC = b"FOHM"
CODES_MAGIC = b"FOHC"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Raised when a binary container fails header or size validation."""


@dataclass
class HyperParams:
    """Training and pool knobs. Defaults follow the 32-bit retrieval setup.

    sigma/theta/mu/lam/tau weight the quantization, stream label, existing
    label, and the two regularization terms of the objective; eta_s/eta_d
    rescale similar/dissimilar target entries; u/v/beta/r/refresh_every
    shape the query pool; max_alt_iters/tol stop the alternating solver.
    """

    sigma: float = 0.8
    theta: float = 1.2
    mu: float = 0.5
    lam: float = 0.6
    tau: float = 0.6
    eta_s: float = 1.2
    eta_d: float = 0.2
    u: int = 500
    v: int = 500
    beta: int = 10
    r: int = 0  # 0 -> ceil(0.1 * u)
    refresh_every: int = 1
    max_alt_iters: int = 5
    tol: float = 1e-4
    seed: int = 42
    existing_cap: int = 0  # 0 -> keep all accumulated columns in the stage objective
    paper_sign_z: bool = False  # flip the label term inside the Z auxiliary

    def __post_init__(self):
        for name in ("sigma", "theta", "mu", "lam", "tau"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.eta_s > self.eta_d > 0:
            raise ValueError(f"need eta_s > eta_d > 0, got {self.eta_s}, {self.eta_d}")
        if not 1 <= self.beta <= self.u:
            raise ValueError(f"need 1 <= beta <= u, got beta={self.beta}, u={self.u}")
        if self.v < 1:
            raise ValueError(f"v must be >= 1, got {self.v}")
        if not 1 <= self.effective_r <= self.u:
            raise ValueError(f"need 1 <= r <= u, got r={self.r}, u={self.u}")
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be >= 1")
        if self.max_alt_iters < 0:
            raise ValueError("max_alt_iters must be >= 0")

    @property
    def effective_r(self) -> int:
        return self.r if self.r > 0 else -(-self.u // 10)


def sgn(x):
    """Sign with the tie at exactly 0 mapped to +1. Works elementwise."""
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise ValueError("sgn input must be finite")
    return np.where(x >= 0, 1, -1).astype(np.int8)


def _words_per_code(k: int) -> int:
    return (k + 63) // 64


def _popcount(words: np.ndarray) -> np.ndarray:
    return np.bitwise_count(words)


@dataclass
class CodeMatrix:
    """n packed codes of k bits each; ``words`` has shape (n, ceil(k/64)).

    Canonical form: bits >= k in the last word are always zero, so word-level
    XOR + popcount gives exact Hamming distances.
    """

    k: int
    words: np.ndarray

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        w = _words_per_code(self.k)
        self.words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if self.words.ndim != 2 or self.words.shape[1] != w:
            raise ValueError(f"words must have shape (n, {w})")

    @property
    def n(self) -> int:
        return self.words.shape[0]

    def is_canonical(self) -> bool:
        pad = self.words.shape[1] * 64 - self.k
        if pad == 0:
            return True
        mask = np.uint64((1 << (64 - pad)) - 1)
        return bool(np.all(self.words[:, -1] & ~mask == 0))

    @classmethod
    def from_signs(cls, signs: np.ndarray) -> "CodeMatrix":
        """Pack a (k, n) matrix with entries in {-1,+1} (or bool meaning +1)."""
        signs = np.asarray(signs)
        k = signs.shape[0]
        bits = signs.T if signs.dtype == np.bool_ else signs.T > 0
        packed = np.packbits(bits, axis=1, bitorder="little")
        w = _words_per_code(k)
        padded = np.zeros((bits.shape[0], w * 8), dtype=np.uint8)
        padded[:, : packed.shape[1]] = packed
        return cls(k=k, words=padded.view("<u8"))

    def to_signs(self) -> np.ndarray:
        """Unpack to a (k, n) int8 matrix with entries in {-1,+1}."""
        bits = np.unpackbits(self.words.view(np.uint8), axis=1,
                             count=self.k, bitorder="little")
        return (bits.T.astype(np.int8) * 2 - 1)

    def take(self, idx) -> "CodeMatrix":
        return CodeMatrix(k=self.k, words=self.words[np.asarray(idx, dtype=np.int64)])

    def concat(self, other: "CodeMatrix") -> "CodeMatrix":
        if other.k != self.k:
            raise ValueError("code length mismatch")
        return CodeMatrix(k=self.k, words=np.vstack([self.words, other.words]))

    @classmethod
    def empty(cls, k: int) -> "CodeMatrix":
        return cls(k=k, words=np.zeros((0, _words_per_code(k)), dtype=np.uint64))


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    """Hamming distance between two packed codes (1-d word arrays)."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    if a.shape != b.shape:
        raise ValueError("code length mismatch")
    return int(_popcount(a ^ b).sum())


def hamming_matrix(a: CodeMatrix, b: CodeMatrix, chunk: int = 256) -> np.ndarray:
    """Pairwise distances, shape (b.n, a.n): column j holds distances from
    a's code j to every code in b. Chunked over a's columns to bound memory."""
    if a.k != b.k:
        raise ValueError("code length mismatch")
    out = np.empty((b.n, a.n), dtype=np.int64)
    bw = b.words
    for lo in range(0, a.n, chunk):
        hi = min(lo + chunk, a.n)
        xor = bw[:, None, :] ^ a.words[None, lo:hi, :]
        out[:, lo:hi] = _popcount(xor).sum(axis=2, dtype=np.int64)
    return out


def top_alpha(a: CodeMatrix, b: CodeMatrix, alpha: int) -> np.ndarray:
    """Indices (into b) of the alpha nearest codes for each code in a.

    Returns an (alpha, a.n) int64 matrix, each column sorted by ascending
    distance with ties broken by ascending index into b.
    """
    if alpha > b.n:
        raise ValueError(f"alpha={alpha} exceeds database size {b.n}")
    dist = hamming_matrix(a, b)
    order = np.argsort(dist, axis=0, kind="stable")
    return order[:alpha, :].astype(np.int64)


@dataclass
class HashModel:
    """Learned state: projection W (d, k), label projector P (k, c), and the
    running feature mean used to center inputs before projection."""

    W: np.ndarray
    P: np.ndarray
    center: np.ndarray
    hyper: HyperParams = field(default_factory=HyperParams)

    def __post_init__(self):
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        self.P = np.ascontiguousarray(self.P, dtype=np.float64)
        self.center = np.ascontiguousarray(self.center, dtype=np.float64)
        if self.W.ndim != 2 or self.P.ndim != 2 or self.center.ndim != 1:
            raise ValueError("W and P must be matrices, center a vector")
        if self.W.shape[1] != self.P.shape[0]:
            raise ValueError("W columns must match P rows (code length)")
        if self.center.shape[0] != self.W.shape[0]:
            raise ValueError("center length must match W rows")
        for arr, name in ((self.W, "W"), (self.P, "P"), (self.center, "center")):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def k(self) -> int:
        return self.W.shape[1]

    @property
    def c(self) -> int:
        return self.P.shape[1]

    def project(self, X: np.ndarray) -> np.ndarray:
        """Real-valued projections W^T (X - center) of (d, n) features."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != self.d:
            raise ValueError(f"feature dim {X.shape[0]} != model dim {self.d}")
        return self.W.T @ (X - self.center[:, None])

    def warn_dead_bits(self) -> list[int]:
        """Indices of all-zero W columns (uninformative bits), if any."""
        return [int(i) for i in np.flatnonzero(~self.W.any(axis=0))]


def zero_model(d: int, k: int, c: int, hyper: HyperParams | None = None) -> HashModel:
    return HashModel(W=np.zeros((d, k)), P=np.zeros((k, c)),
                     center=np.zeros(d), hyper=hyper or HyperParams())


def encode(model: HashModel, X: np.ndarray) -> CodeMatrix:
    """sgn of the centered projection, packed canonically. X is (d, n)."""
    codes = CodeMatrix.from_signs(model.project(X) >= 0)
    assert codes.is_canonical()  # padding bits must stay zero
    return codes


# ---------------------------------------------------------------------------
# binary containers


def save_codes(codes: CodeMatrix, path) -> None:
    with open(path, "wb") as f:
        f.write(CODES_MAGIC)
        f.write(struct.pack("<IIQ", FORMAT_VERSION, codes.k, codes.n))
        f.write(codes.words.astype("<u8").tobytes(order="C"))


def load_codes(path) -> CodeMatrix:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CODES_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {CODES_MAGIC!r}")
        version, k, n = struct.unpack("<IIQ", f.read(16))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported code file version {version}")
        w = _words_per_code(k)
        buf = f.read(n * w * 8)
        if len(buf) != n * w * 8:
            raise FormatError("truncated code file")
        words = np.frombuffer(buf, dtype="<u8").reshape(n, w)
        return CodeMatrix(k=k, words=words.copy())


def _hyper_to_kv(hyper: HyperParams) -> str:
    lines = []
    for f_ in fields(hyper):
        val = getattr(hyper, f_.name)
        lines.append(f"{f_.name}={val}")
    return "\n".join(lines) + "\n"


def _hyper_from_kv(text: str) -> HyperParams:
    kwargs = {}
    types = {f_.name: f_.type for f_ in fields(HyperParams)}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, val = line.partition("=")
        if key not in types:
            raise FormatError(f"unknown hyperparameter key {key!r} in model file")
        if types[key] == "bool":
            kwargs[key] = val.lower() in ("true", "1")
        elif types[key] == "int":
            kwargs[key] = int(val)
        else:
            kwargs[key] = float(val)
    return HyperParams(**kwargs)


def save_model(model: HashModel, path) -> None:
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<IIII", FORMAT_VERSION, model.d, model.k, model.c))
        f.write(model.W.astype("<f8").tobytes(order="F"))
        f.write(model.P.astype("<f8").tobytes(order="F"))
        f.write(model.center.astype("<f8").tobytes())
        f.write(_hyper_to_kv(model.hyper).encode("utf-8"))


def load_model(path) -> HashModel:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MODEL_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}")
        version, d, k, c = struct.unpack("<IIII", f.read(16))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported model file version {version}")
        def read_mat(rows, cols):
            buf = f.read(rows * cols * 8)
            if len(buf) != rows * cols * 8:
                raise FormatError("truncated model file")
            return np.frombuffer(buf, dtype="<f8").reshape((rows, cols), order="F").copy()
        W = read_mat(d, k)
        P = read_mat(k, c)
        center = np.frombuffer(f.read(d * 8), dtype="<f8").copy()
        hyper = _hyper_from_kv(f.read().decode("utf-8"))
        return HashModel(W=W, P=P, center=center, hyper=hyper)
