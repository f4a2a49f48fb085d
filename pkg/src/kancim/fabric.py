"""Behavioral analog compute-in-memory model.

A bit line is a resistive ladder: an ideal clamp at ``v_clamp`` on the near
end, ``wire_r`` ohms between consecutive row taps, and one cell per row. A
cell conducts ``a * g * (v_read - V_row)``, where ``g`` is its programmed
conductance and ``a`` the word-line transfer factor (current in units of the
calibrated unit current I[1]).

Charge is reported in units of ``Q_unit = W_p1 * I[1]``; with ideal devices
and no wire resistance a column integrates exactly ``sum(input * weight)``
units.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CalibrationError, DegenerateInputError, QuantRangeError

SCHEMES = ("pure_voltage", "pure_pwm", "tmdv")


# --------------------------------------------------------------------------- #
# word-line transfer and DAC calibration

@dataclass(frozen=True)
class Transfer:
    """Monotone MOSFET transfer: ``linear`` gain*(v-vt)+ or ``square`` gain*((v-vt)+)**2."""

    kind: str = "linear"
    gain: float = 1e-4
    vt: float = 0.3

    def __post_init__(self):
        if self.kind not in ("linear", "square"):
            raise ValueError(f"unknown transfer kind {self.kind!r}")

    def __call__(self, v):
        ov = np.maximum(np.asarray(v, dtype=float) - self.vt, 0.0)
        return self.gain * (ov if self.kind == "linear" else ov * ov)


def calibrate_dac(f: Transfer, N: int, v_top: float = 0.9) -> np.ndarray:
    """DAC voltages V[0..2**N - 1] with f(V[k]) = k * f(V[1]) and V[-1] = v_top.

    V[0] sits at threshold (zero current); the rest come from bisection.
    """
    return calibrate_levels(f, 1 << N, v_top)


def calibrate_levels(f: Transfer, n: int, v_top: float = 0.9) -> np.ndarray:
    if n < 2:
        raise ValueError("need at least two DAC levels")
    i_top = float(f(v_top))
    if not i_top > 0:
        raise CalibrationError(f"level {n - 1}: v_top={v_top} gives no current above threshold")
    V = np.empty(n)
    V[0] = f.vt
    for k in range(1, n):
        target = i_top * k / (n - 1)
        lo, hi = f.vt, v_top
        if float(f(hi)) < target * (1 - 1e-12):
            raise CalibrationError(f"level {k}: current ratio unreachable below v_top={v_top}")
        # bisect to floating-point resolution
        while True:
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if float(f(mid)) < target:
                lo = mid
            else:
                hi = mid
        V[k] = lo if abs(float(f(lo)) - target) <= abs(float(f(hi)) - target) else hi
    return V


# --------------------------------------------------------------------------- #
# encoders

@dataclass(frozen=True)
class EncoderConfig:
    scheme: str = "tmdv"
    N: int = 4
    w_p1: float = 1e-9
    v_top: float = 0.9
    transfer: Transfer = field(default_factory=Transfer)
    voltage_noise_sigma: float = 0.0
    mode: str = "TD_P"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if not 1 <= self.N <= 4:
            raise ValueError("N must be in 1..4")
        if self.mode not in ("TD_P", "TD_A"):
            raise ValueError("mode must be TD_P or TD_A")

    @property
    def input_bits(self) -> int:
        return 2 * self.N

    @property
    def n_inputs(self) -> int:
        return 1 << (2 * self.N)

    @property
    def dac_level_count(self) -> int:
        return {"pure_voltage": 1 << (2 * self.N), "tmdv": 1 << self.N, "pure_pwm": 2}[self.scheme]

    @property
    def latency_units(self) -> int:
        return {"pure_voltage": 1, "pure_pwm": 1 << (2 * self.N),
                "tmdv": 1 + (1 << self.N)}[self.scheme]

    @property
    def delay_chain_stages(self) -> int:
        """Delay-chain taps needed to time the pulses (pwm counts every unit)."""
        return {"pure_voltage": 1, "pure_pwm": 1 << (2 * self.N),
                "tmdv": 1 << (self.N + 1)}[self.scheme]

    @property
    def dac_levels(self) -> np.ndarray:
        return _dac_cache(self.transfer, self.dac_level_count, self.v_top)

    @property
    def unit_current(self) -> float:
        return float(self.transfer(self.dac_levels[1]))

    def level_current(self, level, noise=0.0):
        """Current of DAC level(s) with additive WL noise, in units of I[1]."""
        V = self.dac_levels[np.asarray(level)] + noise
        return self.transfer(V) / self.unit_current


_DAC = {}


def _dac_cache(f: Transfer, n: int, v_top: float) -> np.ndarray:
    key = (f, n, v_top)
    if key not in _DAC:
        _DAC[key] = calibrate_levels(f, n, v_top)
    return _DAC[key]


@dataclass(frozen=True)
class Segment:
    voltage: float
    width: float  # seconds
    level: int  # DAC level index == ideal current in units of I[1]
    units: int  # width in W_p1 units
    start: int  # start time in W_p1 units


@dataclass(frozen=True)
class PulseTrain:
    segments: tuple[Segment, ...]

    @property
    def total_units(self) -> int:
        return sum(s.units for s in self.segments)


def encode_input(x: int, cfg: EncoderConfig) -> PulseTrain:
    x = int(x)
    if not 0 <= x < cfg.n_inputs:
        raise QuantRangeError(f"input {x} outside [0, {cfg.n_inputs})")
    V = cfg.dac_levels
    if cfg.scheme == "tmdv":
        lo, hi = x & ((1 << cfg.N) - 1), x >> cfg.N
        wide = 1 << cfg.N
        segs = (Segment(V[lo], cfg.w_p1, lo, 1, 0),
                Segment(V[hi], wide * cfg.w_p1, hi, wide, 1))
    elif cfg.scheme == "pure_voltage":
        segs = (Segment(V[x], cfg.w_p1, x, 1, 0),)
    else:
        segs = (Segment(V[1], x * cfg.w_p1, 1, x, 0),) if x else ()
    return PulseTrain(segs)


def ideal_charge(train: PulseTrain, cfg: EncoderConfig | None = None) -> int:
    """Charge in Q_unit with a perfectly calibrated DAC: sum of level * width."""
    return sum(s.level * s.units for s in train.segments)


def physical_charge(train: PulseTrain, cfg: EncoderConfig, noise=None) -> float:
    """Charge in Q_unit through the transfer function at the real DAC voltages."""
    q = 0.0
    for i, s in enumerate(train.segments):
        dv = 0.0 if noise is None else noise[i]
        q += float(cfg.transfer(s.voltage + dv)) / cfg.unit_current * s.units
    return q


def drive_schedule(codes: np.ndarray, cfg: EncoderConfig):
    """Time-sliced word-line drive for a batch of input codes.

    Returns ``(intervals, levels, seg_of)``: ``intervals`` is a list of
    (start, units) shared by all rows, ``levels[t]`` the DAC level index per
    row in interval ``t`` (-1 = idle) and ``seg_of[t]`` which encoder segment
    that interval belongs to (for noise lookup).
    """
    codes = np.asarray(codes, dtype=np.int64)
    if codes.size and (codes.min() < 0 or codes.max() >= cfg.n_inputs):
        raise QuantRangeError(f"input codes outside [0, {cfg.n_inputs})")
    if cfg.scheme == "tmdv":
        mask = (1 << cfg.N) - 1
        return [(0, 1), (1, 1 << cfg.N)], [codes & mask, codes >> cfg.N], [0, 1]
    if cfg.scheme == "pure_voltage":
        return [(0, 1)], [codes], [0]
    top = int(codes.max()) if codes.size else 0
    intervals = [(t, 1) for t in range(top)]
    levels = [np.where(codes > t, 1, -1) for t in range(top)]
    return intervals, levels, [0] * top


def segment_units(codes: np.ndarray, cfg: EncoderConfig) -> list[np.ndarray]:
    """Width in W_p1 units of each encoder segment, per input."""
    codes = np.asarray(codes)
    if cfg.scheme == "tmdv":
        return [np.ones(codes.shape), np.full(codes.shape, float(1 << cfg.N))]
    if cfg.scheme == "pure_voltage":
        return [np.ones(codes.shape)]
    return [np.maximum(codes, 1).astype(float)]


# --------------------------------------------------------------------------- #
# IR drop

def solve_ir_drop(cond, v_drive, wire_r: float, v_clamp: float):
    """Exact nodal solution of one or many bit-line ladders.

    ``cond`` and ``v_drive`` have shape ``[..., R]``; row 0 is nearest the
    clamp, and the clamp reaches row 0 through one wire segment. Every
    equation is multiplied through by ``wire_r``, so ``wire_r = 0`` is the
    regular limit (all taps at ``v_clamp``) rather than a special case.

    Returns ``(cell_currents, node_voltages, clamp_current)``.
    """
    cond = np.asarray(cond, dtype=float)
    v_drive = np.broadcast_to(np.asarray(v_drive, dtype=float), cond.shape)
    if cond.shape[-1] < 1:
        raise DegenerateInputError("bit line needs at least one row")
    if wire_r < 0 or np.any(cond < 0) or not np.all(np.isfinite(cond)):
        raise DegenerateInputError("conductances and wire resistance must be finite and >= 0")
    R = cond.shape[-1]
    diag = wire_r * cond + 2.0
    diag[..., R - 1] -= 1.0
    rhs = wire_r * cond * v_drive
    rhs[..., 0] += v_clamp
    V = _thomas(diag, rhs)
    I = cond * (v_drive - V)
    return I, V, I.sum(axis=-1)


def _thomas(diag: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Tridiagonal solve with constant off-diagonals of -1."""
    R = diag.shape[-1]
    cp = np.empty_like(diag)
    dp = np.empty_like(rhs)
    cp[..., 0] = -1.0 / diag[..., 0]
    dp[..., 0] = rhs[..., 0] / diag[..., 0]
    for k in range(1, R):
        m = diag[..., k] + cp[..., k - 1]
        cp[..., k] = -1.0 / m
        dp[..., k] = (rhs[..., k] + dp[..., k - 1]) / m
    x = np.empty_like(rhs)
    x[..., R - 1] = dp[..., R - 1]
    for k in range(R - 2, -1, -1):
        x[..., k] = dp[..., k] - cp[..., k] * x[..., k + 1]
    return x


def ladder_matrix(cond: np.ndarray, v_drive: np.ndarray, wire_r: float, v_clamp: float):
    """Dense conductance-form system ``A V = b`` of one ladder (wire_r > 0)."""
    R = len(cond)
    gw = 1.0 / wire_r
    A = np.zeros((R, R))
    b = np.asarray(cond, dtype=float) * v_drive
    for k in range(R):
        A[k, k] = cond[k] + gw + (gw if k < R - 1 else 0.0)
        if k > 0:
            A[k, k - 1] = -gw
        if k < R - 1:
            A[k, k + 1] = -gw
    b = b.copy()
    b[0] += gw * v_clamp
    return A, b


# --------------------------------------------------------------------------- #
# crossbar MAC

@dataclass(frozen=True)
class CrossbarConfig:
    rows: int = 128
    cols: int = 256
    wire_r: float = 1.0
    g_on: float = 1e-5
    g_off: float = 0.0
    v_read: float = 0.2
    v_clamp: float = 0.0
    c_sample: float = 1e-13
    adc_bits: int | None = None
    variation_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.rows <= 4096:
            raise ValueError("rows must be in 1..4096")
        if not self.g_on > self.g_off >= 0:
            raise ValueError("need g_on > g_off >= 0")
        if self.wire_r < 0:
            raise ValueError("wire_r must be >= 0")


@dataclass
class MacResult:
    ideal_sum: np.ndarray  # [samples, outputs] int
    decoded_sum: np.ndarray  # [samples, outputs] int
    charge: np.ndarray  # [samples, physical columns] in Q_unit, after reference subtraction
    saturated: np.ndarray  # [samples, outputs] bool

    @property
    def error(self) -> np.ndarray:
        return self.decoded_sum - self.ideal_sum


def bit_slices(weights: np.ndarray, bits: int = 8) -> np.ndarray:
    """Signed weight codes -> [rows, outputs, 2, bits] {0,1}, (pos, neg) x MSB..LSB."""
    w = np.asarray(weights, dtype=np.int64)
    mag = np.abs(w)
    if mag.max(initial=0) >= (1 << bits):
        raise QuantRangeError(f"weight magnitude exceeds {bits} bits")
    shifts = np.arange(bits - 1, -1, -1)
    b = (mag[..., None] >> shifts) & 1
    pos = b * (w >= 0)[..., None]
    neg = b * (w < 0)[..., None]
    return np.stack([pos, neg], axis=-2)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def _truncated_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return np.clip(rng.standard_normal(shape), -3.0, 3.0)


WL_STREAM = 1
CELL_STREAM = 2


def simulate_mac(weights, inputs, plan_rows, enc: EncoderConfig, xbar: CrossbarConfig,
                 trial: int = 0, coeff_bits: int = 8, threads: int = 1) -> MacResult:
    """Analog MAC of ``inputs @ weights`` on one crossbar.

    ``weights`` [n_logical, n_out] signed codes; ``inputs`` [samples, n_logical]
    codes in [0, 2**(2N)); ``plan_rows[i]`` is the physical row of logical row
    ``i``. Each output uses 2 x ``coeff_bits`` bit-slice columns (positive and
    negative magnitude); a shared all-``g_off`` reference column is subtracted
    in the charge domain before the ADC. Noise draws come from streams keyed by
    (seed, trial, sample) for word lines and (seed, trial, column) for cells,
    so the result does not depend on ``threads``.
    """
    W = np.asarray(weights, dtype=np.int64)
    X = np.atleast_2d(np.asarray(inputs, dtype=np.int64))
    rows = np.asarray(plan_rows, dtype=np.int64)
    n_log, n_out = W.shape
    if X.shape[1] != n_log or len(rows) != n_log:
        raise ValueError("weights / inputs / plan_rows disagree on logical row count")
    if rows.size and (rows.max() >= xbar.rows or rows.min() < 0 or len(set(rows.tolist())) != n_log):
        raise ValueError("plan_rows must be distinct physical rows of the crossbar")
    S = X.shape[0]
    R = int(rows.max()) + 1 if rows.size else 1  # rows beyond the last used one carry no current

    # physical conductances: [R, cols]; columns = out-major (pos bits, neg bits), then reference
    slices = bit_slices(W, coeff_bits).reshape(n_log, n_out * 2 * coeff_bits)
    n_cols = slices.shape[1] + 1
    g_log = np.where(slices > 0, xbar.g_on, xbar.g_off)
    g = np.full((R, n_cols), xbar.g_off)
    g[rows, :-1] = g_log
    if xbar.variation_sigma > 0:
        for c in range(n_cols):
            z = _truncated_normal(_rng(xbar.seed, CELL_STREAM, trial, c), R)
            g[:, c] *= np.maximum(1.0 + xbar.variation_sigma * z, 0.0)

    x_phys = np.zeros((S, R), dtype=np.int64)
    x_phys[:, rows] = X
    intervals, levels, seg_of = drive_schedule(x_phys, enc)
    n_seg = max(seg_of) + 1 if seg_of else 0
    widths = segment_units(x_phys, enc)

    def run(sample_idx: np.ndarray) -> np.ndarray:
        noise = np.zeros((len(sample_idx), n_seg, R))
        if enc.voltage_noise_sigma > 0:
            for j, s in enumerate(sample_idx):
                noise[j] = _rng(xbar.seed, WL_STREAM, trial, s).standard_normal((n_seg, R))
            for k in range(n_seg):
                noise[:, k, :] *= enc.voltage_noise_sigma / np.sqrt(widths[k][sample_idx])
        Q = np.zeros((len(sample_idx), n_cols))
        for (start, units), lev, k in zip(intervals, levels, seg_of):
            lv = lev[sample_idx]
            a = np.where(lv >= 0, enc.level_current(np.maximum(lv, 0), noise[:, k, :]), 0.0)
            cond = (a[:, :, None] * g[None, :, :]).transpose(0, 2, 1)  # [s, col, R]
            I, _, _ = solve_ir_drop(cond, xbar.v_read, xbar.wire_r, xbar.v_clamp)
            Q += I.sum(axis=-1) * units
        return Q

    chunks = np.array_split(np.arange(S), max(1, min(threads, S)))
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    Q = np.concatenate(parts, axis=0)

    unit = xbar.g_on * (xbar.v_read - xbar.v_clamp)
    Qn = (Q[:, :-1] - Q[:, -1:]) / (unit - xbar.g_off * (xbar.v_read - xbar.v_clamp))

    full = n_log * (enc.n_inputs - 1)
    if xbar.adc_bits is None:
        lsb, top = 1, full
    else:
        top = (1 << xbar.adc_bits) - 1
        lsb = max(1, math.ceil(full / top))
    raw = np.rint(Qn / lsb)
    code = np.clip(raw, 0, top)
    sat_col = raw > top
    dec_col = (code * lsb).astype(np.int64).reshape(S, n_out, 2, coeff_bits)
    weights_pow = 1 << np.arange(coeff_bits - 1, -1, -1)
    decoded = ((dec_col[:, :, 0, :] - dec_col[:, :, 1, :]) * weights_pow).sum(axis=-1)
    saturated = sat_col.reshape(S, n_out, 2 * coeff_bits).any(axis=-1)
    ideal = X @ W
    return MacResult(ideal, decoded, Qn, saturated)


def column_charge(weights, inputs, enc: EncoderConfig, xbar: CrossbarConfig, coeff_bits: int = 8):
    """Charge (Q_unit) of every bit-slice column for identity row placement."""
    W = np.asarray(weights)
    return simulate_mac(W, inputs, np.arange(W.shape[0]), enc, xbar, coeff_bits=coeff_bits).charge


# --------------------------------------------------------------------------- #
# encoder comparison

def encoder_errors(cfg: EncoderConfig, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Decode error per trial for a single cell under WL noise.

    ``z`` [trials, 2] are the shared standard-normal draws; segment ``k``
    of width ``w`` units sees voltage noise ``sigma * z[:, k] / sqrt(w)``.
    """
    widths = segment_units(x, cfg)
    sigma = cfg.voltage_noise_sigma
    if cfg.scheme == "tmdv":
        lo, hi = x & ((1 << cfg.N) - 1), x >> cfg.N
        q = (cfg.level_current(lo, sigma * z[:, 0] / np.sqrt(widths[0]))
             + cfg.level_current(hi, sigma * z[:, 1] / np.sqrt(widths[1])) * widths[1])
    elif cfg.scheme == "pure_voltage":
        q = cfg.level_current(x, sigma * z[:, 0])
    else:
        q = np.where(x > 0, cfg.level_current(1, sigma * z[:, 0] / np.sqrt(widths[0])) * x, 0.0)
    dec = np.clip(np.rint(q), 0, cfg.n_inputs - 1)
    return np.abs(dec - x)


def compare_encoders(N: int, sigmas, base: EncoderConfig | None = None, trials: int = 10_000,
                     seed: int = 0) -> list[dict]:
    """Monte Carlo comparison of the three schemes at input width 2N.

    All schemes and all noise levels reuse the same inputs and normal draws.
    """
    base = base or EncoderConfig()
    rng = _rng(seed, 7, N)
    x = rng.integers(0, 1 << (2 * N), size=trials)
    z = rng.standard_normal((trials, 2))
    rows = []
    for scheme in SCHEMES:
        for sigma in sigmas:
            cfg = replace(base, scheme=scheme, N=N, voltage_noise_sigma=float(sigma))
            err = encoder_errors(cfg, x, z)
            rows.append({
                "scheme": scheme, "N": N, "bits": 2 * N, "sigma": float(sigma),
                "max_err": int(err.max()), "mean_err": float(err.mean()),
                "latency_units": cfg.latency_units, "dac_levels": cfg.dac_level_count,
                "delay_chain": cfg.delay_chain_stages,
            })
    return rows
